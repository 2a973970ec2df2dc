//! Attackable no-reference metrics, full-reference quality measures and
//! relative gain.

mod fr;
mod toy;

use std::sync::atomic::{AtomicUsize, Ordering};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fixtures::{derive_seed, random_image, rng};
use crate::image::{Image, VideoSequence};

pub use fr::{psnr, ssim, SSIM_MIN_SIZE};
pub use toy::{CnnMetric, LaplaceMetric};

/// The declared score range of a metric.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreRange {
    pub lo: f64,
    pub hi: f64,
}

impl ScoreRange {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite() && hi > lo) {
            return Err(Error::InvalidParameter(format!(
                "score range [{lo}, {hi}] has no positive width"
            )));
        }
        Ok(Self { lo, hi })
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricScore {
    pub value: f64,
    pub range: ScoreRange,
}

/// A differentiable no-reference metric.
///
/// Implementations must be pure: the same image always yields the same score
/// and gradient.
pub trait GradientOracle: Send + Sync {
    fn name(&self) -> &str;

    fn range(&self) -> ScoreRange;

    /// Smallest height and width the metric accepts.
    fn min_size(&self) -> usize;

    fn value(&self, img: &Image) -> Result<f64>;

    /// Gradient of [`value`](Self::value) with respect to every pixel.
    fn gradient(&self, img: &Image) -> Result<Image>;

    /// Value and gradient in one pass, for metrics that share work.
    fn value_and_gradient(&self, img: &Image) -> Result<(f64, Image)> {
        Ok((self.value(img)?, self.gradient(img)?))
    }

    /// Whether calls may run concurrently on different images.
    fn concurrent_calls_safe(&self) -> bool {
        true
    }

    fn score(&self, img: &Image) -> Result<MetricScore> {
        Ok(MetricScore {
            value: self.value(img)?,
            range: self.range(),
        })
    }
}

/// `(adv - orig) / range_width`; negative when the score went down.
pub fn relative_gain(m_adv: &MetricScore, m_orig: &MetricScore) -> Result<f64> {
    if m_adv.range != m_orig.range {
        return Err(Error::InvalidParameter(format!(
            "scores use different ranges: {:?} vs {:?}",
            m_adv.range, m_orig.range
        )));
    }
    let width = m_orig.range.width();
    if width.is_nan() || width <= 0.0 {
        return Err(Error::InvalidParameter("zero-width score range".into()));
    }
    Ok((m_adv.value - m_orig.value) / width)
}

/// Per-frame scores in frame order.
pub fn frame_scores(oracle: &dyn GradientOracle, video: &VideoSequence) -> Result<Vec<f64>> {
    if oracle.concurrent_calls_safe() {
        video.frames().par_iter().map(|f| oracle.value(f)).collect()
    } else {
        video.frames().iter().map(|f| oracle.value(f)).collect()
    }
}

/// Mean of per-frame scores, summed in frame order.
pub fn video_score(oracle: &dyn GradientOracle, video: &VideoSequence) -> Result<MetricScore> {
    let scores = frame_scores(oracle, video)?;
    Ok(MetricScore {
        value: scores.iter().sum::<f64>() / scores.len() as f64,
        range: oracle.range(),
    })
}

/// Finite-difference check parameters.
#[derive(Clone, Debug)]
pub struct AdmissionCheck {
    pub images: usize,
    pub probes_per_image: usize,
    pub step: f64,
    pub tolerance: f64,
    pub size: usize,
    pub channels: usize,
    pub seed: u64,
}

impl Default for AdmissionCheck {
    fn default() -> Self {
        Self {
            images: 20,
            probes_per_image: 16,
            step: 1e-3,
            tolerance: 1e-4,
            size: 16,
            channels: 3,
            seed: 0x5eed,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdmissionReport {
    pub probes: usize,
    pub worst_rel_err: f64,
    pub passed: bool,
}

/// Relative disagreement between an analytic and a numeric derivative.
///
/// `scale` (the largest gradient magnitude in the image) floors the
/// denominator so pixels whose derivative nearly cancels are judged against
/// the gradient's overall size.
pub fn gradient_rel_err(analytic: f64, numeric: f64, scale: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(scale);
    if denom == 0.0 {
        0.0
    } else {
        (analytic - numeric).abs() / denom
    }
}

/// Compares the oracle's gradient against central differences at random
/// pixels of seeded random images.
pub fn check_gradient(oracle: &dyn GradientOracle, check: &AdmissionCheck) -> Result<AdmissionReport> {
    let size = check.size.max(oracle.min_size());
    let mut worst = 0.0f64;
    let mut probes = 0;
    for i in 0..check.images {
        let img = random_image(derive_seed(check.seed, i as u64), size, size, check.channels);
        let grad = oracle.gradient(&img)?;
        let scale = grad.data().iter().fold(0.0f64, |m, g| m.max(g.abs()));
        let mut pick = rng(derive_seed(check.seed ^ 0xfd, i as u64));
        for _ in 0..check.probes_per_image {
            let at = pick.random_range(0..img.data().len());
            let mut plus = img.clone();
            plus.data_mut()[at] += check.step;
            let mut minus = img.clone();
            minus.data_mut()[at] -= check.step;
            let numeric = (oracle.value(&plus)? - oracle.value(&minus)?) / (2.0 * check.step);
            worst = worst.max(gradient_rel_err(grad.data()[at], numeric, scale));
            probes += 1;
        }
    }
    Ok(AdmissionReport {
        probes,
        worst_rel_err: worst,
        passed: worst <= check.tolerance,
    })
}

/// Runs [`check_gradient`] and turns a failure into [`Error::OracleRejected`].
pub fn admit(oracle: &dyn GradientOracle, check: &AdmissionCheck) -> Result<AdmissionReport> {
    let report = check_gradient(oracle, check)?;
    if !report.passed {
        return Err(Error::OracleRejected {
            name: oracle.name().to_string(),
            worst_rel_err: report.worst_rel_err,
            tolerance: check.tolerance,
        });
    }
    Ok(report)
}

/// Names a built-in oracle, as written in the `metric` config section.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetricSpec {
    pub name: String,
    pub seed: u64,
    pub range: Option<[f64; 2]>,
}

impl Default for MetricSpec {
    fn default() -> Self {
        Self {
            name: "laplace".into(),
            seed: 0,
            range: None,
        }
    }
}

pub const METRIC_NAMES: &[&str] = &["laplace", "cnn"];

/// Instantiates a built-in metric without admission. Prefer [`build_oracle`].
pub fn instantiate(spec: &MetricSpec) -> Result<Box<dyn GradientOracle>> {
    let range = spec.range.map(|[lo, hi]| ScoreRange::new(lo, hi)).transpose()?;
    Ok(match spec.name.as_str() {
        "laplace" => {
            let mut m = LaplaceMetric::default();
            if let Some(r) = range {
                m = m.with_range(r);
            }
            Box::new(m)
        }
        "cnn" => {
            let mut m = CnnMetric::new(spec.seed);
            if let Some(r) = range {
                m = m.with_range(r);
            }
            Box::new(m)
        }
        other => return Err(Error::UnknownMetric(other.to_string())),
    })
}

/// Instantiates a built-in metric and admits it; only admitted oracles leave
/// this function.
pub fn build_oracle(spec: &MetricSpec) -> Result<Box<dyn GradientOracle>> {
    let oracle = instantiate(spec)?;
    admit(oracle.as_ref(), &AdmissionCheck::default())?;
    Ok(oracle)
}

/// Wraps an oracle and counts calls.
pub struct CountingOracle<'a> {
    inner: &'a dyn GradientOracle,
    gradients: AtomicUsize,
    values: AtomicUsize,
}

impl<'a> CountingOracle<'a> {
    pub fn new(inner: &'a dyn GradientOracle) -> Self {
        Self {
            inner,
            gradients: AtomicUsize::new(0),
            values: AtomicUsize::new(0),
        }
    }

    pub fn gradient_calls(&self) -> usize {
        self.gradients.load(Ordering::Relaxed)
    }

    pub fn value_calls(&self) -> usize {
        self.values.load(Ordering::Relaxed)
    }
}

impl GradientOracle for CountingOracle<'_> {
    fn name(&self) -> &str {
        self.inner.name()
    }

    fn range(&self) -> ScoreRange {
        self.inner.range()
    }

    fn min_size(&self) -> usize {
        self.inner.min_size()
    }

    fn value(&self, img: &Image) -> Result<f64> {
        self.values.fetch_add(1, Ordering::Relaxed);
        self.inner.value(img)
    }

    fn gradient(&self, img: &Image) -> Result<Image> {
        self.gradients.fetch_add(1, Ordering::Relaxed);
        self.inner.gradient(img)
    }

    fn value_and_gradient(&self, img: &Image) -> Result<(f64, Image)> {
        self.values.fetch_add(1, Ordering::Relaxed);
        self.gradients.fetch_add(1, Ordering::Relaxed);
        self.inner.value_and_gradient(img)
    }

    fn concurrent_calls_safe(&self) -> bool {
        self.inner.concurrent_calls_safe()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn score(value: f64, lo: f64, hi: f64) -> MetricScore {
        MetricScore {
            value,
            range: ScoreRange::new(lo, hi).unwrap(),
        }
    }

    #[test]
    fn relative_gain_examples() {
        assert_eq!(
            relative_gain(&score(3.0, 0.0, 10.0), &score(3.0, 0.0, 10.0)).unwrap(),
            0.0
        );
        let up = relative_gain(&score(68.0, 0.0, 100.0), &score(60.0, 0.0, 100.0)).unwrap();
        assert!((up - 0.08).abs() < 1e-15);
        let down = relative_gain(&score(0.4, 0.0, 1.0), &score(0.5, 0.0, 1.0)).unwrap();
        assert!((down + 0.1).abs() < 1e-15);
        assert!(relative_gain(&score(0.4, 0.0, 1.0), &score(0.5, 0.0, 2.0)).is_err());
        assert!(ScoreRange::new(1.0, 1.0).is_err());
    }

    #[test]
    fn rel_err_floors_on_gradient_scale() {
        assert_eq!(gradient_rel_err(0.0, 0.0, 0.0), 0.0);
        assert!((gradient_rel_err(1.0, 1.1, 0.0) - 0.1 / 1.1).abs() < 1e-15);
        assert!((gradient_rel_err(1e-8, 2e-8, 1.0) - 1e-8).abs() < 1e-20);
    }

    #[test]
    fn registry_admits_builtins_and_rejects_unknown() {
        for name in METRIC_NAMES {
            let spec = MetricSpec {
                name: name.to_string(),
                ..Default::default()
            };
            let oracle = build_oracle(&spec).unwrap();
            assert_eq!(oracle.name(), *name);
        }
        let bad = MetricSpec {
            name: "paq2piq".into(),
            ..Default::default()
        };
        assert!(matches!(build_oracle(&bad), Err(Error::UnknownMetric(_))));
    }

    struct WrongGradient;

    impl GradientOracle for WrongGradient {
        fn name(&self) -> &str {
            "wrong"
        }
        fn range(&self) -> ScoreRange {
            ScoreRange::new(0.0, 1.0).unwrap()
        }
        fn min_size(&self) -> usize {
            1
        }
        fn value(&self, img: &Image) -> Result<f64> {
            Ok(img.data().iter().map(|v| v * v).sum())
        }
        fn gradient(&self, img: &Image) -> Result<Image> {
            Ok(img.map(|v| v))
        }
    }

    #[test]
    fn admission_rejects_a_wrong_gradient() {
        let err = admit(&WrongGradient, &AdmissionCheck::default()).unwrap_err();
        assert!(matches!(err, Error::OracleRejected { .. }));
    }

    #[test]
    fn counting_wrapper_counts() {
        let m = LaplaceMetric::default();
        let counted = CountingOracle::new(&m);
        let img = random_image(1, 8, 8, 1);
        counted.gradient(&img).unwrap();
        counted.value(&img).unwrap();
        counted.value_and_gradient(&img).unwrap();
        assert_eq!(counted.gradient_calls(), 2);
        assert_eq!(counted.value_calls(), 2);
    }

    #[test]
    fn video_score_is_frame_mean() {
        let m = LaplaceMetric::default();
        let video = crate::fixtures::random_video(3, 4, 8, 8, 1);
        let per: Vec<f64> = video.frames().iter().map(|f| m.value(f).unwrap()).collect();
        let got = video_score(&m, &video).unwrap();
        assert_eq!(got.value, per.iter().sum::<f64>() / 4.0);
    }
}
