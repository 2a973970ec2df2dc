//! Per-pixel perturbation weight maps.
//!
//! [`ioi_weights`] is the relative-local-variance map the attack uses;
//! [`nvw_weights`] and [`sobel_weights`] are the comparison maps behind the
//! NVW and Korhonen-style weighted FGSM baselines. All maps use 3x3 windows
//! with replicated edges and are normalized per channel by their maximum.

use crate::error::Result;
use crate::image::Image;

/// Weights in `[0, 1]`, one per pixel and channel.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightMap {
    inner: Image,
}

/// `gamma_norm` values below this get zero weight.
pub const ZERO_THRESHOLD: f64 = 0.01;
/// Local means below this make the relative variance zero.
pub const MEAN_GUARD: f64 = 1e-6;

impl WeightMap {
    /// Wraps raw weights; every value must be in `[0, 1]`.
    pub fn new(weights: Image) -> Result<Self> {
        if let Some(bad) = weights.data().iter().find(|w| !(0.0..=1.0).contains(*w)) {
            return Err(crate::Error::InvalidParameter(format!("weight {bad} outside [0, 1]")));
        }
        Ok(Self { inner: weights })
    }

    pub fn uniform(height: usize, width: usize, channels: usize, value: f64) -> Result<Self> {
        Self::new(Image::filled(height, width, channels, value)?)
    }

    pub fn as_image(&self) -> &Image {
        &self.inner
    }

    pub fn weights(&self) -> &[f64] {
        self.inner.data()
    }

    pub fn height(&self) -> usize {
        self.inner.height()
    }

    pub fn width(&self) -> usize {
        self.inner.width()
    }

    pub fn channels(&self) -> usize {
        self.inner.channels()
    }

    pub fn max(&self) -> f64 {
        self.weights().iter().copied().fold(0.0, f64::max)
    }
}

/// Calls `f(y, x, window)` with the replicate-padded 3x3 neighbourhood of
/// every pixel, row-major.
fn for_each_window(plane: &[f64], h: usize, w: usize, mut f: impl FnMut(usize, usize, &[f64; 9])) {
    let pw = w + 2;
    let mut padded = Vec::with_capacity((h + 2) * pw);
    for py in 0..h + 2 {
        let row = &plane[py.saturating_sub(1).min(h - 1) * w..][..w];
        padded.push(row[0]);
        padded.extend_from_slice(row);
        padded.push(row[w - 1]);
    }
    let mut win = [0.0; 9];
    for y in 0..h {
        let rows = [&padded[y * pw..], &padded[(y + 1) * pw..], &padded[(y + 2) * pw..]];
        for x in 0..w {
            for (i, r) in rows.iter().enumerate() {
                win[i * 3..i * 3 + 3].copy_from_slice(&r[x..x + 3]);
            }
            f(y, x, &win);
        }
    }
}

/// Population mean and standard deviation of a 3x3 window.
fn window_moments(win: &[f64; 9]) -> (f64, f64) {
    let sum: f64 = win.iter().sum();
    let sum_sq: f64 = win.iter().map(|v| v * v).sum();
    let mean = sum / 9.0;
    let var = (sum_sq / 9.0 - mean * mean).max(0.0);
    (mean, var.sqrt())
}

/// Divides every value of each plane by that plane's maximum (all-zero
/// planes stay zero).
fn normalize_planes(mut raw: Image) -> Image {
    for c in 0..raw.channels() {
        let plane = raw.plane_mut(c);
        let max = plane.iter().copied().fold(0.0, f64::max);
        if max > 0.0 {
            plane.iter_mut().for_each(|v| *v /= max);
        } else {
            plane.iter_mut().for_each(|v| *v = 0.0);
        }
    }
    raw
}

fn map_windows(img: &Image, f: impl Fn(&[f64; 9]) -> f64) -> Image {
    let (h, w) = (img.height(), img.width());
    let mut out = Image::zeros_like(img);
    for c in 0..img.channels() {
        let src = img.plane(c);
        let dst = out.plane_mut(c);
        for_each_window(src, h, w, |y, x, win| dst[y * w + x] = f(win));
    }
    out
}

/// Relative local variance `sigma / mean` over 3x3 windows, normalized per
/// channel, zeroed below [`ZERO_THRESHOLD`] and square-rooted.
pub fn ioi_weights(img: &Image) -> Result<WeightMap> {
    img.ensure_min_size("ioi_weights", 3)?;
    let gamma = map_windows(img, |win| {
        let (mean, sigma) = window_moments(win);
        if mean < MEAN_GUARD {
            0.0
        } else {
            sigma / mean
        }
    });
    let weights = normalize_planes(gamma).map(|g| if g >= ZERO_THRESHOLD { g.sqrt() } else { 0.0 });
    Ok(WeightMap { inner: weights })
}

/// Local 3x3 variance normalized by its per-channel maximum.
pub fn nvw_weights(img: &Image) -> Result<WeightMap> {
    img.ensure_min_size("nvw_weights", 3)?;
    let var = map_windows(img, |win| {
        let (_, sigma) = window_moments(win);
        sigma * sigma
    });
    Ok(WeightMap {
        inner: normalize_planes(var),
    })
}

/// Sobel gradient magnitude normalized by its per-channel maximum.
pub fn sobel_weights(img: &Image) -> Result<WeightMap> {
    img.ensure_min_size("sobel_weights", 3)?;
    let mag = map_windows(img, |win| {
        let gx = (win[2] + 2.0 * win[5] + win[8]) - (win[0] + 2.0 * win[3] + win[6]);
        let gy = (win[6] + 2.0 * win[7] + win[8]) - (win[0] + 2.0 * win[1] + win[2]);
        (gx * gx + gy * gy).sqrt()
    });
    Ok(WeightMap {
        inner: normalize_planes(mag),
    })
}
