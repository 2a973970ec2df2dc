//! Equal-budget comparison of attacking every frame once against attacking
//! every n-th frame n times.

use serde::Serialize;

use std::time::Instant;

use crate::attacks::{i_fgsm, Direction};
use crate::error::{Error, Result};
use crate::image::{clamp_unit, VideoSequence};
use crate::metrics::{relative_gain, CountingOracle, GradientOracle, MetricScore};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BudgetRow {
    pub stride: usize,
    pub averaged_rg: f64,
    /// Seconds spent generating the attacked frames; scoring is excluded.
    pub wall_time: f64,
    pub gradient_calls: usize,
}

/// For each stride `s`, runs I-FGSM with `s` iterations of `epsilon / s` on
/// frames `0, s, 2s, ...` and averages the gain over all frames, untouched
/// ones counting as zero. Frames are attacked sequentially.
pub fn frame_budget_sweep(
    video: &VideoSequence,
    oracle: &dyn GradientOracle,
    epsilon: f64,
    strides: &[usize],
) -> Result<Vec<BudgetRow>> {
    if strides.is_empty() {
        return Err(Error::InvalidParameter("no strides given".into()));
    }
    if let Some(&s) = strides.iter().find(|&&s| s == 0 || s > video.len()) {
        return Err(Error::InvalidParameter(format!(
            "stride {s} does not fit a {}-frame video",
            video.len()
        )));
    }
    let range = oracle.range();
    let originals = video
        .frames()
        .iter()
        .map(|f| oracle.value(f))
        .collect::<Result<Vec<_>>>()?;
    strides
        .iter()
        .map(|&stride| {
            if !video.len().is_multiple_of(stride) {
                log::warn!(
                    "stride {stride} does not divide {} frames; its gradient budget differs",
                    video.len()
                );
            }
            let counted = CountingOracle::new(oracle);
            let start = Instant::now();
            let attacked = video
                .frames()
                .iter()
                .enumerate()
                .filter(|(i, _)| i % stride == 0)
                .map(|(i, f)| {
                    Ok((
                        i,
                        clamp_unit(&i_fgsm(f, &counted, epsilon, stride, Direction::Increase)?),
                    ))
                })
                .collect::<Result<Vec<_>>>()?;
            let wall_time = start.elapsed().as_secs_f64();
            let mut rg_sum = 0.0;
            for (i, adv) in &attacked {
                rg_sum += relative_gain(
                    &MetricScore {
                        value: oracle.value(adv)?,
                        range,
                    },
                    &MetricScore {
                        value: originals[*i],
                        range,
                    },
                )?;
            }
            Ok(BudgetRow {
                stride,
                averaged_rg: rg_sum / video.len() as f64,
                wall_time,
                gradient_calls: counted.gradient_calls(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::random_video;
    use crate::metrics::LaplaceMetric;

    #[test]
    fn single_stride_attacks_every_frame_once() {
        let video = random_video(0, 4, 12, 12, 1);
        let rows = frame_budget_sweep(&video, &LaplaceMetric::default(), 0.05, &[1]).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].gradient_calls, 4);
    }

    #[test]
    fn budget_is_equal_across_dividing_strides() {
        let video = random_video(1, 16, 12, 12, 1);
        let rows = frame_budget_sweep(&video, &LaplaceMetric::default(), 0.05, &[1, 2, 4]).unwrap();
        assert!(rows.iter().all(|r| r.gradient_calls == 16));
    }

    #[test]
    fn matches_the_video_attack() {
        use crate::attacks::{attack_video, AttackConfig, AttackKind};
        let video = random_video(2, 8, 12, 12, 3);
        let m = LaplaceMetric::default();
        let rows = frame_budget_sweep(&video, &m, 0.05, &[1, 2, 4]).unwrap();
        for row in rows {
            let cfg = AttackConfig::video_default()
                .with_kind(AttackKind::IFgsm)
                .with_epsilon(0.05);
            let direct = attack_video(&video, &m, &cfg, row.stride).unwrap();
            assert!((direct.averaged_rg - row.averaged_rg).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_bad_strides() {
        let video = random_video(1, 4, 12, 12, 1);
        let m = LaplaceMetric::default();
        assert!(frame_budget_sweep(&video, &m, 0.05, &[]).is_err());
        assert!(frame_budget_sweep(&video, &m, 0.05, &[0]).is_err());
        assert!(frame_budget_sweep(&video, &m, 0.05, &[5]).is_err());
    }
}
