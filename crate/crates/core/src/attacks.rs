//! Gradient-sign attacks and the one-iteration frequency/weighting attack.
//!
//! The IOI composition for each channel `c` is
//!
//! ```text
//! I^a = ifft(L(I)) + w * ifft(H(I^p)) + (1 - w) * ifft(H(I))
//! ```
//!
//! where `L`/`H` keep/drop the top-`f` coefficients of the *original* image's
//! spectrum and `w` is [`ioi_weights`] of the original. Its pre-clamp
//! deviation from `I` is checked against `(1 - f) * MAE*(I^p, I)`.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{clamp_unit, Image, VideoSequence};
use crate::metrics::{relative_gain, GradientOracle, MetricScore};
use crate::spectral::{fft2, fft2_pair, ifft2, mae_star_spectra, select_topf, FreqIndexSet};
use crate::weighting::{ioi_weights, nvw_weights, sobel_weights, WeightMap};

/// Absolute slack allowed when checking the perturbation bound.
pub const BOUND_SLACK: f64 = 1e-9;
pub const IOI_MIN_SIZE: usize = 8;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    #[default]
    Increase,
    Decrease,
}

impl Direction {
    pub fn sign(self) -> f64 {
        match self {
            Direction::Increase => 1.0,
            Direction::Decrease => -1.0,
        }
    }
}

impl FromStr for Direction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "increase" => Ok(Direction::Increase),
            "decrease" => Ok(Direction::Decrease),
            other => Err(Error::Config(format!("unknown direction {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttackKind {
    Fgsm,
    #[serde(rename = "ifgsm")]
    IFgsm,
    /// FGSM scaled by the local-variance map.
    Nvw,
    /// FGSM scaled by the Sobel activity map.
    Korhonen,
    #[default]
    Ioi,
}

impl AttackKind {
    pub const ALL: [AttackKind; 5] = [
        AttackKind::Fgsm,
        AttackKind::IFgsm,
        AttackKind::Nvw,
        AttackKind::Korhonen,
        AttackKind::Ioi,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AttackKind::Fgsm => "fgsm",
            AttackKind::IFgsm => "ifgsm",
            AttackKind::Nvw => "nvw",
            AttackKind::Korhonen => "korhonen",
            AttackKind::Ioi => "ioi",
        }
    }
}

impl fmt::Display for AttackKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AttackKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AttackKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::UnknownAttack(s.to_string()))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttackConfig {
    pub kind: AttackKind,
    /// Attack strength; the step for one-iteration attacks.
    pub epsilon: f64,
    /// Fraction of spectrum coefficients kept from the original (IOI only).
    pub f: f64,
    pub iterations: usize,
    pub direction: Direction,
    /// Clamp to `[0, 1]` after every iterative step.
    pub clamp_steps: bool,
}

pub const DEFAULT_EPSILON: f64 = 0.1;
pub const DEFAULT_F_IMAGE: f64 = 0.07;
pub const DEFAULT_F_VIDEO: f64 = 0.05;

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            kind: AttackKind::Ioi,
            epsilon: DEFAULT_EPSILON,
            f: DEFAULT_F_IMAGE,
            iterations: 1,
            direction: Direction::Increase,
            clamp_steps: false,
        }
    }
}

impl AttackConfig {
    pub fn video_default() -> Self {
        Self {
            f: DEFAULT_F_VIDEO,
            ..Self::default()
        }
    }

    pub fn with_kind(mut self, kind: AttackKind) -> Self {
        self.kind = kind;
        self
    }

    pub fn with_epsilon(mut self, epsilon: f64) -> Self {
        self.epsilon = epsilon;
        self
    }

    pub fn with_f(mut self, f: f64) -> Self {
        self.f = f;
        self
    }

    pub fn with_iterations(mut self, iterations: usize) -> Self {
        self.iterations = iterations;
        self
    }

    pub fn with_direction(mut self, direction: Direction) -> Self {
        self.direction = direction;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "epsilon must be finite and non-negative, got {}",
                self.epsilon
            )));
        }
        if !(self.f > 0.0 && self.f < 1.0) {
            return Err(Error::InvalidParameter(format!("f must lie in (0, 1), got {}", self.f)));
        }
        if self.iterations == 0 {
            return Err(Error::InvalidParameter("iterations must be at least 1".into()));
        }
        Ok(())
    }
}

/// Outcome of one attack on one image.
#[derive(Clone, Debug, PartialEq)]
pub struct AttackRecord {
    pub kind: AttackKind,
    /// Clamped adversarial image.
    pub adversarial: Image,
    pub score_orig: f64,
    pub score_adv: f64,
    pub rg: f64,
    /// `max |I^a - I|` before clamping.
    pub linf: f64,
    /// `MAE*(I^p, I)` of the raw gradient-sign perturbation.
    pub mae_star_pert: f64,
    /// Perturbation bound check; only defined for IOI.
    pub bound_ok: Option<bool>,
    pub wall_time: f64,
}

/// An [`AttackRecord`] without its image.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameStats {
    pub kind: AttackKind,
    pub score_orig: f64,
    pub score_adv: f64,
    pub rg: f64,
    pub linf: f64,
    pub mae_star_pert: f64,
    pub bound_ok: Option<bool>,
    pub wall_time: f64,
}

impl AttackRecord {
    pub fn into_parts(self) -> (Image, FrameStats) {
        let stats = FrameStats {
            kind: self.kind,
            score_orig: self.score_orig,
            score_adv: self.score_adv,
            rg: self.rg,
            linf: self.linf,
            mae_star_pert: self.mae_star_pert,
            bound_ok: self.bound_ok,
            wall_time: self.wall_time,
        };
        (self.adversarial, stats)
    }
}

/// `sign(0) = 0`.
#[inline]
fn sign(g: f64) -> f64 {
    if g > 0.0 {
        1.0
    } else if g < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn ensure_finite(grad: &Image) -> Result<()> {
    let n = grad.plane_len();
    let w = grad.width();
    match grad.data().iter().position(|g| !g.is_finite()) {
        None => Ok(()),
        Some(i) => Err(Error::NonFiniteGradient {
            channel: i / n,
            row: (i % n) / w,
            col: i % w,
        }),
    }
}

/// `img + step * weight * sign(grad)` with the direction's sign.
fn sign_step(img: &Image, grad: &Image, step: f64, direction: Direction, weights: Option<&WeightMap>) -> Result<Image> {
    ensure_finite(grad)?;
    let s = step * direction.sign();
    let mut out = img.clone();
    match weights {
        None => {
            for (o, g) in out.data_mut().iter_mut().zip(grad.data()) {
                *o += s * sign(*g);
            }
        }
        Some(w) => {
            for ((o, g), wt) in out.data_mut().iter_mut().zip(grad.data()).zip(w.weights()) {
                *o += s * wt * sign(*g);
            }
        }
    }
    Ok(out)
}

fn check_weights(img: &Image, weights: &WeightMap) -> Result<()> {
    img.ensure_same_shape(weights.as_image())
}

/// One gradient-sign step of size `epsilon`. Not clamped.
pub fn fgsm(img: &Image, oracle: &dyn GradientOracle, epsilon: f64, direction: Direction) -> Result<Image> {
    let grad = oracle.gradient(img)?;
    sign_step(img, &grad, epsilon, direction, None)
}

/// `n` gradient-sign steps of `step` each, re-evaluating the gradient every
/// step. Returns the perturbed image and the score of the input image.
fn sign_steps(
    img: &Image,
    oracle: &dyn GradientOracle,
    step: f64,
    n: usize,
    direction: Direction,
    weights: Option<&WeightMap>,
    clamp_steps: bool,
) -> Result<(Image, f64)> {
    let mut current = img.clone();
    let mut first_value = None;
    for _ in 0..n {
        let (value, grad) = oracle.value_and_gradient(&current)?;
        first_value.get_or_insert(value);
        current = sign_step(&current, &grad, step, direction, weights)?;
        if clamp_steps {
            current = clamp_unit(&current);
        }
    }
    Ok((current, first_value.expect("at least one step")))
}

/// Iterated FGSM: `n` steps of `epsilon / n`. Equal to [`fgsm`] for `n = 1`.
pub fn i_fgsm(img: &Image, oracle: &dyn GradientOracle, epsilon: f64, n: usize, direction: Direction) -> Result<Image> {
    if n == 0 {
        return Err(Error::InvalidParameter("iterations must be at least 1".into()));
    }
    Ok(sign_steps(img, oracle, epsilon / n as f64, n, direction, None, false)?.0)
}

/// FGSM with a per-pixel step scale: `img + epsilon * w * sign(grad)`.
pub fn weighted_fgsm(
    img: &Image,
    oracle: &dyn GradientOracle,
    epsilon: f64,
    weights: &WeightMap,
    direction: Direction,
) -> Result<Image> {
    check_weights(img, weights)?;
    let grad = oracle.gradient(img)?;
    sign_step(img, &grad, epsilon, direction, Some(weights))
}

/// Intermediate products of the IOI composition.
#[derive(Clone, Debug)]
pub struct Composition {
    /// Pre-clamp adversarial image.
    pub raw: Image,
    pub index_set: FreqIndexSet,
    pub mae_star_pert: f64,
}

/// Builds the adversarial image from the original, a perturbed version of
/// it, the truncation fraction and a weight map:
/// `ifft(L(I)) + w * ifft(H(I^p)) + (1 - w) * ifft(H(I))`, with `L`/`H` the
/// split by the top-`f` mask of the original's spectrum.
///
/// Evaluated as `I + w * ifft(H(I^p - I))`, which is the same sum by
/// linearity of the transform.
pub fn compose_adversarial(original: &Image, perturbed: &Image, f: f64, weights: &WeightMap) -> Result<Composition> {
    original.ensure_same_shape(perturbed)?;
    check_weights(original, weights)?;
    let mut delta = perturbed.clone();
    for (d, o) in delta.data_mut().iter_mut().zip(original.data()) {
        *d -= o;
    }
    let (spec_orig, mut spec_delta) = fft2_pair(original, &delta)?;
    drop(delta);
    let index_set = select_topf(&spec_orig, f)?;
    drop(spec_orig);
    let mae_star_pert = spec_delta.mean_magnitude();
    spec_delta.remove(&index_set)?;
    let mut raw = ifft2(&spec_delta);
    for ((r, o), w) in raw.data_mut().iter_mut().zip(original.data()).zip(weights.weights()) {
        *r = o + w * *r;
    }
    Ok(Composition {
        raw,
        index_set,
        mae_star_pert,
    })
}

/// Right-hand side of the perturbation bound.
pub fn theorem1_rhs(mae_star_pert: f64, f: f64) -> f64 {
    (1.0 - f) * mae_star_pert
}

/// True iff `linf <= (1 - f) * MAE*(I^p, I)` up to [`BOUND_SLACK`].
pub fn verify_theorem1(record: &AttackRecord, f: f64) -> bool {
    record.linf <= theorem1_rhs(record.mae_star_pert, f) + BOUND_SLACK
}

fn gain(oracle: &dyn GradientOracle, orig: f64, adv: f64) -> Result<f64> {
    let range = oracle.range();
    relative_gain(&MetricScore { value: adv, range }, &MetricScore { value: orig, range })
}

/// The full one-iteration attack: gradient-sign perturbation, frequency
/// split against the original's spectrum, variance weighting, clamp.
///
/// With `iterations > 1` the perturbation comes from `n` steps of
/// `2 * epsilon / n`; the frequency and weighting stages still run once.
pub fn ioi_attack(img: &Image, oracle: &dyn GradientOracle, cfg: &AttackConfig) -> Result<AttackRecord> {
    cfg.validate()?;
    img.ensure_min_size("ioi attack", IOI_MIN_SIZE)?;
    let start = Instant::now();
    let n = cfg.iterations;
    let step = if n == 1 {
        cfg.epsilon
    } else {
        2.0 * cfg.epsilon / n as f64
    };
    let (perturbed, score_orig) = sign_steps(img, oracle, step, n, cfg.direction, None, cfg.clamp_steps)?;
    let weights = ioi_weights(img)?;
    let comp = compose_adversarial(img, &perturbed, cfg.f, &weights)?;
    let linf = comp.raw.max_abs_diff(img);
    let adversarial = clamp_unit(&comp.raw);
    let score_adv = oracle.value(&adversarial)?;
    let rg = gain(oracle, score_orig, score_adv)?;
    let mut record = AttackRecord {
        kind: AttackKind::Ioi,
        adversarial,
        score_orig,
        score_adv,
        rg,
        linf,
        mae_star_pert: comp.mae_star_pert,
        bound_ok: None,
        wall_time: 0.0,
    };
    record.bound_ok = Some(verify_theorem1(&record, cfg.f));
    record.wall_time = start.elapsed().as_secs_f64();
    Ok(record)
}

/// Runs the attack named by `cfg.kind` and records its outcome.
pub fn run_attack(img: &Image, oracle: &dyn GradientOracle, cfg: &AttackConfig) -> Result<AttackRecord> {
    if cfg.kind == AttackKind::Ioi {
        return ioi_attack(img, oracle, cfg);
    }
    cfg.validate()?;
    let start = Instant::now();
    let n = cfg.iterations;
    let step = cfg.epsilon / n as f64;
    let weights = match cfg.kind {
        AttackKind::Nvw => Some(nvw_weights(img)?),
        AttackKind::Korhonen => Some(sobel_weights(img)?),
        _ => None,
    };
    let (perturbed, score_orig) = sign_steps(img, oracle, step, n, cfg.direction, weights.as_ref(), cfg.clamp_steps)?;
    let linf = perturbed.max_abs_diff(img);
    let mae_star_pert = mae_star_spectra(&fft2(&perturbed), &fft2(img))?;
    let adversarial = clamp_unit(&perturbed);
    let score_adv = oracle.value(&adversarial)?;
    Ok(AttackRecord {
        kind: cfg.kind,
        rg: gain(oracle, score_orig, score_adv)?,
        adversarial,
        score_orig,
        score_adv,
        linf,
        mae_star_pert,
        bound_ok: None,
        wall_time: start.elapsed().as_secs_f64(),
    })
}

/// Attacked video plus per-frame statistics (`None` = untouched).
#[derive(Clone, Debug)]
pub struct VideoAttack {
    pub video: VideoSequence,
    pub records: Vec<Option<FrameStats>>,
    /// Mean relative gain over all frames, untouched ones counting as zero.
    pub averaged_rg: f64,
    pub wall_time: f64,
}

impl VideoAttack {
    pub fn attacked_frames(&self) -> usize {
        self.records.iter().filter(|r| r.is_some()).count()
    }
}

fn stride_config(cfg: &AttackConfig, stride: usize) -> Result<AttackConfig> {
    if stride == 0 {
        return Err(Error::InvalidParameter("frame stride must be at least 1".into()));
    }
    let cfg = AttackConfig {
        iterations: stride,
        ..cfg.clone()
    };
    cfg.validate()?;
    Ok(cfg)
}

fn assemble(video: &VideoSequence, records: Vec<Option<AttackRecord>>, wall_time: f64) -> Result<VideoAttack> {
    let mut frames = Vec::with_capacity(records.len());
    let mut stats = Vec::with_capacity(records.len());
    for (orig, rec) in video.frames().iter().zip(records) {
        match rec {
            Some(rec) => {
                let (adv, s) = rec.into_parts();
                frames.push(adv);
                stats.push(Some(s));
            }
            None => {
                frames.push(orig.clone());
                stats.push(None);
            }
        }
    }
    let rg_sum: f64 = stats.iter().map(|r| r.as_ref().map_or(0.0, |r| r.rg)).sum();
    Ok(VideoAttack {
        video: VideoSequence::new(frames, video.frame_rate())?,
        averaged_rg: rg_sum / stats.len() as f64,
        records: stats,
        wall_time,
    })
}

/// Attacks frames `0, s, 2s, ...` with `s` iterations each, so every stride
/// spends the same number of gradient evaluations. Other frames pass through
/// unchanged. Frames are processed one after another.
pub fn attack_video(
    video: &VideoSequence,
    oracle: &dyn GradientOracle,
    cfg: &AttackConfig,
    frame_stride: usize,
) -> Result<VideoAttack> {
    let cfg = stride_config(cfg, frame_stride)?;
    let start = Instant::now();
    let records = video
        .frames()
        .iter()
        .enumerate()
        .map(|(i, f)| (i % frame_stride == 0).then(|| run_attack(f, oracle, &cfg)).transpose())
        .collect::<Result<Vec<_>>>()?;
    assemble(video, records, start.elapsed().as_secs_f64())
}

/// [`attack_video`] with frames fanned out over the rayon pool. Results are
/// identical; falls back to sequential if the oracle is not thread-safe.
pub fn attack_video_parallel(
    video: &VideoSequence,
    oracle: &dyn GradientOracle,
    cfg: &AttackConfig,
    frame_stride: usize,
) -> Result<VideoAttack> {
    if !oracle.concurrent_calls_safe() {
        return attack_video(video, oracle, cfg, frame_stride);
    }
    let cfg = stride_config(cfg, frame_stride)?;
    let start = Instant::now();
    let records = video
        .frames()
        .par_iter()
        .enumerate()
        .map(|(i, f)| (i % frame_stride == 0).then(|| run_attack(f, oracle, &cfg)).transpose())
        .collect::<Result<Vec<_>>>()?;
    assemble(video, records, start.elapsed().as_secs_f64())
}
