//! Strength search that matches an attack's relative gain to a target.

use serde::Serialize;

use crate::attacks::{attack_video_parallel, run_attack, AttackConfig, AttackKind};
use crate::error::{Error, Result};
use crate::image::{Image, VideoSequence};
use crate::metrics::GradientOracle;

pub const DEFAULT_STEP: f64 = 0.005;
pub const DEFAULT_N_STOP: usize = 5;
pub const DEFAULT_MAX_PROBES: usize = 10_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Convergence {
    TargetReached,
    Stagnation,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AlignResult {
    /// Strength used by the final probe.
    pub lr_found: f64,
    pub rg_achieved: f64,
    pub probes: usize,
    pub converged_by: Convergence,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AlignParams {
    pub rg_target: f64,
    /// Strength increment between probes.
    pub d: f64,
    /// Number of non-improving probes that ends the search.
    pub n_stop: usize,
    pub max_probes: usize,
}

impl AlignParams {
    pub fn new(rg_target: f64) -> Self {
        Self {
            rg_target,
            d: DEFAULT_STEP,
            n_stop: DEFAULT_N_STOP,
            max_probes: DEFAULT_MAX_PROBES,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.d > 0.0 && self.d.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "search step must be positive, got {}",
                self.d
            )));
        }
        if self.n_stop == 0 {
            return Err(Error::InvalidParameter("stop count must be at least 1".into()));
        }
        Ok(())
    }
}

/// Probes strengths `0, d, 2d, ...` until the gain reaches the target or
/// `n_stop` probes (not necessarily consecutive) fail to beat the previous
/// probe's gain. The first probe is compared against a gain of zero.
pub fn align_with(params: &AlignParams, mut probe: impl FnMut(f64) -> Result<f64>) -> Result<AlignResult> {
    params.validate()?;
    let mut counter = 0;
    let mut rg_prev = 0.0;
    let mut probes = 0;
    loop {
        let lr = probes as f64 * params.d;
        probes += 1;
        let rg = probe(lr)?;
        let reached = rg >= params.rg_target;
        if rg <= rg_prev {
            counter += 1;
        }
        if reached || counter == params.n_stop {
            return Ok(AlignResult {
                lr_found: lr,
                rg_achieved: rg,
                probes,
                converged_by: if reached {
                    Convergence::TargetReached
                } else {
                    Convergence::Stagnation
                },
            });
        }
        if probes >= params.max_probes {
            return Err(Error::ProbeLimit(probes));
        }
        rg_prev = rg;
    }
}

/// What gets attacked during alignment.
#[derive(Clone, Copy, Debug)]
pub enum AlignItem<'a> {
    Image(&'a Image),
    /// Every frame is attacked; the gain is averaged over frames.
    Video(&'a VideoSequence),
}

/// Aligns the attack named `attack` on `item`, mapping the probed strength
/// to `epsilon` of `base`.
pub fn align_gain(
    item: AlignItem<'_>,
    oracle: &dyn GradientOracle,
    attack: &str,
    base: &AttackConfig,
    params: &AlignParams,
) -> Result<AlignResult> {
    let kind: AttackKind = attack.parse()?;
    params.validate()?;
    align_with(params, |lr| {
        let cfg = AttackConfig {
            kind,
            epsilon: lr,
            ..base.clone()
        };
        match item {
            AlignItem::Image(img) => Ok(run_attack(img, oracle, &cfg)?.rg),
            AlignItem::Video(video) => Ok(attack_video_parallel(video, oracle, &cfg, 1)?.averaged_rg),
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::random_image;
    use crate::metrics::LaplaceMetric;

    #[test]
    fn zero_target_stops_at_first_probe() {
        let r = align_with(&AlignParams::new(0.0), Ok).unwrap();
        assert_eq!((r.lr_found, r.rg_achieved, r.probes), (0.0, 0.0, 1));
        assert_eq!(r.converged_by, Convergence::TargetReached);
    }

    #[test]
    fn monotone_curve_hand_trace() {
        let params = AlignParams {
            d: 0.01,
            ..AlignParams::new(0.05)
        };
        let r = align_with(&params, Ok).unwrap();
        assert_eq!(r.lr_found, 0.05);
        assert_eq!(r.probes, 6);
        assert_eq!(r.converged_by, Convergence::TargetReached);
        assert!(r.probes as f64 <= (r.lr_found / params.d).ceil() + params.n_stop as f64);
    }

    #[test]
    fn plateau_stops_by_stagnation() {
        let params = AlignParams {
            d: 0.01,
            n_stop: 5,
            ..AlignParams::new(0.05)
        };
        let mut seen = Vec::new();
        let r = align_with(&params, |lr| {
            let rg = if lr > 0.0 { 0.01 } else { 0.0 };
            seen.push(rg);
            Ok(rg)
        })
        .unwrap();
        assert_eq!(r.converged_by, Convergence::Stagnation);
        // probe 1 (0 <= 0) and probes 3..=6 (0.01 <= 0.01) are the five
        // non-improving probes; probe 2 improved.
        assert_eq!(r.probes, 6);
        assert_eq!(r.rg_achieved, 0.01);
        assert!((r.lr_found - 0.05).abs() < 1e-15);
        let non_improving = seen.windows(2).filter(|w| w[1] <= w[0]).count() + usize::from(seen[0] <= 0.0);
        assert_eq!(non_improving, 5);
    }

    #[test]
    fn rejects_bad_params_and_names() {
        let bad = AlignParams {
            d: 0.0,
            ..AlignParams::new(0.1)
        };
        assert!(align_with(&bad, Ok).is_err());
        let img = random_image(0, 8, 8, 1);
        let m = LaplaceMetric::default();
        let err = align_gain(
            AlignItem::Image(&img),
            &m,
            "uap",
            &AttackConfig::default(),
            &AlignParams::new(0.1),
        );
        assert!(matches!(err, Err(Error::UnknownAttack(_))));
    }

    #[test]
    fn never_improving_below_target_hits_probe_limit_or_stagnates() {
        let params = AlignParams {
            max_probes: 50,
            ..AlignParams::new(10.0)
        };
        assert!(matches!(align_with(&params, Ok), Err(Error::ProbeLimit(50))));
    }

    #[test]
    fn aligns_a_real_attack() {
        let img = random_image(3, 16, 16, 1);
        let m = LaplaceMetric::default();
        let target = run_attack(&img, &m, &AttackConfig::default()).unwrap().rg;
        let r = align_gain(
            AlignItem::Image(&img),
            &m,
            "fgsm",
            &AttackConfig::default(),
            &AlignParams::new(target),
        )
        .unwrap();
        assert_eq!(r.converged_by, Convergence::TargetReached);
        assert!(r.rg_achieved >= target);
    }
}
