//! 2D discrete Fourier analysis of images and the frequency split used by the
//! attack.
//!
//! Transforms are unnormalized forward / `1/(HW)` inverse, computed per
//! channel as row FFTs followed by column FFTs. Every reduction in this module
//! sums sequentially in linear index order, so results do not depend on how
//! channels or frames are scheduled.

use std::cell::RefCell;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::image::Image;

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn plans(len: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| {
        let mut p = p.borrow_mut();
        if inverse {
            p.plan_fft_inverse(len)
        } else {
            p.plan_fft_forward(len)
        }
    })
}

/// Full complex coefficient grid for every channel of an image.
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrum {
    height: usize,
    width: usize,
    planes: Vec<Vec<Complex64>>,
}

impl Spectrum {
    /// Builds a spectrum from channel-major coefficients.
    pub fn new(height: usize, width: usize, channels: usize, coeffs: Vec<Complex64>) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 || coeffs.len() != height * width * channels {
            return Err(Error::InvalidParameter(format!(
                "{} coefficients for a {height}x{width}x{channels} spectrum",
                coeffs.len()
            )));
        }
        Ok(Self {
            height,
            width,
            planes: coeffs.chunks_exact(height * width).map(<[_]>::to_vec).collect(),
        })
    }

    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self {
            height,
            width,
            planes: vec![vec![ZERO; height * width]; channels],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.planes.len()
    }

    /// All coefficients, channel-major.
    pub fn iter(&self) -> impl Iterator<Item = &Complex64> {
        self.planes.iter().flatten()
    }

    pub fn plane(&self, c: usize) -> &[Complex64] {
        &self.planes[c]
    }

    pub fn plane_mut(&mut self, c: usize) -> &mut [Complex64] {
        &mut self.planes[c]
    }

    #[inline]
    pub fn get(&self, c: usize, u: usize, v: usize) -> Complex64 {
        self.planes[c][u * self.width + v]
    }

    fn shape_string(&self) -> String {
        format!("{}x{}x{}", self.height, self.width, self.channels())
    }

    fn ensure_shape(&self, height: usize, width: usize, channels: usize) -> Result<()> {
        if (self.height, self.width, self.channels()) == (height, width, channels) {
            Ok(())
        } else {
            Err(Error::DimensionMismatch {
                expected: self.shape_string(),
                found: format!("{height}x{width}x{channels}"),
            })
        }
    }

    /// Per-channel `(1/HW) * sum |z|`, averaged over channels.
    pub fn mean_magnitude(&self) -> f64 {
        let n = (self.height * self.width) as f64;
        let total: f64 = self
            .planes
            .iter()
            .map(|plane| plane.iter().map(|z| magnitude(*z)).sum::<f64>() / n)
            .sum();
        total / self.channels() as f64
    }

    /// Zeroes every coefficient in the mask, leaving the high-frequency part.
    pub fn remove(&mut self, idx: &FreqIndexSet) -> Result<()> {
        self.ensure_shape(idx.height, idx.width, idx.channels)?;
        for (c, plane) in self.planes.iter_mut().enumerate() {
            for (z, &keep) in plane.iter_mut().zip(idx.channel_mask(c)) {
                if keep {
                    *z = ZERO;
                }
            }
        }
        Ok(())
    }

    /// Sum of squared coefficient magnitudes over all channels.
    pub fn energy(&self) -> f64 {
        self.iter().map(|z| z.norm_sqr()).sum()
    }
}

impl std::ops::Sub for &Spectrum {
    type Output = Spectrum;

    fn sub(self, rhs: &Spectrum) -> Spectrum {
        assert_eq!(
            (self.height, self.width, self.channels()),
            (rhs.height, rhs.width, rhs.channels())
        );
        Spectrum {
            height: self.height,
            width: self.width,
            planes: self
                .planes
                .iter()
                .zip(&rhs.planes)
                .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x - y).collect())
                .collect(),
        }
    }
}

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

#[inline]
fn magnitude(z: Complex64) -> f64 {
    z.norm_sqr().sqrt()
}
const COLUMN_BLOCK: usize = 16;

/// In-place 2D transform of one `rows x cols` plane. Columns are gathered
/// in blocks so each block's transform runs on contiguous memory.
fn fft2_plane(plane: &mut [Complex64], rows: usize, cols: usize, inverse: bool) {
    let row_fft = plans(cols, inverse);
    let col_fft = plans(rows, inverse);
    let mut scratch = vec![ZERO; row_fft.get_inplace_scratch_len().max(col_fft.get_inplace_scratch_len())];
    row_fft.process_with_scratch(plane, &mut scratch);
    let mut block = vec![ZERO; COLUMN_BLOCK * rows];
    for c0 in (0..cols).step_by(COLUMN_BLOCK) {
        let bw = COLUMN_BLOCK.min(cols - c0);
        let block = &mut block[..bw * rows];
        for r in 0..rows {
            for (j, &z) in plane[r * cols + c0..r * cols + c0 + bw].iter().enumerate() {
                block[j * rows + r] = z;
            }
        }
        col_fft.process_with_scratch(block, &mut scratch);
        for r in 0..rows {
            for (j, z) in plane[r * cols + c0..r * cols + c0 + bw].iter_mut().enumerate() {
                *z = block[j * rows + r];
            }
        }
    }
}

/// Calls `f(k, -k)` for every linear index `k` of a `rows x cols` grid.
fn for_each_mirror(rows: usize, cols: usize, mut f: impl FnMut(usize, usize)) {
    for u in 0..rows {
        let nu = (rows - u) % rows;
        for v in 0..cols {
            f(u * cols + v, nu * cols + (cols - v) % cols);
        }
    }
}

/// Forward transforms of real planes, two per complex transform.
fn forward_real(planes: &[&[f64]], rows: usize, cols: usize) -> Vec<Vec<Complex64>> {
    let n = rows * cols;
    let mut out = Vec::with_capacity(planes.len());
    for pair in planes.chunks(2) {
        match pair {
            [a, b] => {
                let mut packed: Vec<Complex64> = a.iter().zip(b.iter()).map(|(&x, &y)| Complex64::new(x, y)).collect();
                fft2_plane(&mut packed, rows, cols, false);
                let mut da = vec![ZERO; n];
                let mut db = vec![ZERO; n];
                for_each_mirror(rows, cols, |k, nk| {
                    let (z, zc) = (packed[k], packed[nk].conj());
                    da[k] = (z + zc) * 0.5;
                    let d = z - zc;
                    db[k] = Complex64::new(d.im * 0.5, -d.re * 0.5);
                });
                out.push(da);
                out.push(db);
            }
            [a] => {
                let mut plane: Vec<Complex64> = a.iter().map(|&x| Complex64::new(x, 0.0)).collect();
                fft2_plane(&mut plane, rows, cols, false);
                out.push(plane);
            }
            _ => unreachable!(),
        }
    }
    out
}

/// Unnormalized forward transform of every channel.
pub fn fft2(img: &Image) -> Spectrum {
    let planes: Vec<&[f64]> = img.planes().collect();
    Spectrum {
        height: img.height(),
        width: img.width(),
        planes: forward_real(&planes, img.height(), img.width()),
    }
}

/// Forward transforms of two same-shaped images, sharing complex transforms
/// between them.
pub fn fft2_pair(a: &Image, b: &Image) -> Result<(Spectrum, Spectrum)> {
    a.ensure_same_shape(b)?;
    let planes: Vec<&[f64]> = a.planes().chain(b.planes()).collect();
    let mut first = forward_real(&planes, a.height(), a.width());
    let second = first.split_off(a.channels());
    let spectrum = |planes| Spectrum {
        height: a.height(),
        width: a.width(),
        planes,
    };
    Ok((spectrum(first), spectrum(second)))
}

fn image_from_planes(h: usize, w: usize, planes: Vec<Vec<f64>>) -> Image {
    let channels = planes.len();
    let data = if channels == 1 {
        planes.into_iter().next().expect("one plane")
    } else {
        planes.concat()
    };
    Image::new(h, w, channels, data).expect("spectrum shape is a valid image shape")
}

/// Normalized inverse transform. Returns the real part together with the
/// largest imaginary residue seen.
pub fn ifft2_with_residue(spec: &Spectrum) -> (Image, f64) {
    let (h, w) = (spec.height, spec.width);
    let scale = 1.0 / (h * w) as f64;
    let mut residue = 0.0f64;
    let planes = spec
        .planes
        .iter()
        .map(|src| {
            let mut buf = src.clone();
            fft2_plane(&mut buf, h, w, true);
            buf.iter()
                .map(|z| {
                    residue = residue.max((z.im * scale).abs());
                    z.re * scale
                })
                .collect()
        })
        .collect();
    (image_from_planes(h, w, planes), residue)
}

/// Real part of the normalized inverse transform. Two channels share one
/// complex transform through their conjugate-symmetric parts.
pub fn ifft2(spec: &Spectrum) -> Image {
    let (h, w) = (spec.height, spec.width);
    let n = h * w;
    let scale = 1.0 / n as f64;
    let mut planes = Vec::with_capacity(spec.channels());
    for pair in spec.planes.chunks(2) {
        match pair {
            [x, y] => {
                let mut packed = vec![ZERO; n];
                for_each_mirror(h, w, |k, nk| {
                    let hx = (x[k] + x[nk].conj()) * 0.5;
                    let hy = (y[k] + y[nk].conj()) * 0.5;
                    packed[k] = Complex64::new(hx.re - hy.im, hx.im + hy.re);
                });
                fft2_plane(&mut packed, h, w, true);
                planes.push(packed.iter().map(|z| z.re * scale).collect());
                planes.push(packed.iter().map(|z| z.im * scale).collect());
            }
            [x] => {
                let mut buf = x.clone();
                fft2_plane(&mut buf, h, w, true);
                planes.push(buf.iter().map(|z| z.re * scale).collect());
            }
            _ => unreachable!(),
        }
    }
    image_from_planes(h, w, planes)
}

/// Per-channel mask of retained (low-frequency) coefficients.
#[derive(Clone, Debug, PartialEq)]
pub struct FreqIndexSet {
    height: usize,
    width: usize,
    channels: usize,
    mask: Vec<bool>,
    retained_fraction: f64,
}

impl FreqIndexSet {
    /// A mask that keeps every coefficient (the `f -> 1` limit).
    pub fn full(height: usize, width: usize, channels: usize) -> Self {
        Self {
            height,
            width,
            channels,
            mask: vec![true; height * width * channels],
            retained_fraction: 1.0,
        }
    }

    /// A mask that keeps nothing (the `f -> 0` limit).
    pub fn empty(height: usize, width: usize, channels: usize) -> Self {
        Self {
            height,
            width,
            channels,
            mask: vec![false; height * width * channels],
            retained_fraction: 0.0,
        }
    }

    pub fn from_mask(height: usize, width: usize, channels: usize, mask: Vec<bool>) -> Result<Self> {
        if mask.len() != height * width * channels {
            return Err(Error::InvalidParameter(format!(
                "{} mask entries for {height}x{width}x{channels}",
                mask.len()
            )));
        }
        let kept = mask.iter().filter(|&&m| m).count();
        Ok(Self {
            height,
            width,
            channels,
            retained_fraction: kept as f64 / mask.len() as f64,
            mask,
        })
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn channel_mask(&self, c: usize) -> &[bool] {
        let n = self.height * self.width;
        &self.mask[c * n..(c + 1) * n]
    }

    pub fn retained_fraction(&self) -> f64 {
        self.retained_fraction
    }

    pub fn contains(&self, c: usize, u: usize, v: usize) -> bool {
        self.mask[(c * self.height + u) * self.width + v]
    }

    pub fn retained_per_channel(&self) -> Vec<usize> {
        (0..self.channels)
            .map(|c| self.channel_mask(c).iter().filter(|&&m| m).count())
            .collect()
    }
}

/// Number of coefficients kept per channel for fraction `f` of an `H x W` grid.
pub fn retained_count(f: f64, height: usize, width: usize) -> usize {
    (f * (height * width) as f64).round() as usize
}

/// Marks, per channel, the `round(f*H*W)` coefficients of largest magnitude.
/// Equal magnitudes go to the lower linear index `u*W + v`.
pub fn select_topf(spec_of_original: &Spectrum, f: f64) -> Result<FreqIndexSet> {
    if !(f > 0.0 && f < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "retained fraction must lie in (0, 1), got {f}"
        )));
    }
    let (h, w, channels) = (
        spec_of_original.height,
        spec_of_original.width,
        spec_of_original.channels(),
    );
    let n = h * w;
    let keep = retained_count(f, h, w);
    let mut mask = vec![false; n * channels];
    if keep > 0 {
        for c in 0..channels {
            let mags: Vec<f64> = spec_of_original.plane(c).iter().map(|z| z.norm_sqr()).collect();
            let mut sorted = mags.clone();
            let (_, &mut threshold, _) = sorted.select_nth_unstable_by(keep - 1, |a, b| b.total_cmp(a));
            let above = mags.iter().filter(|m| m.total_cmp(&threshold).is_gt()).count();
            let mut ties = keep - above;
            for (m, slot) in mags.iter().zip(&mut mask[c * n..(c + 1) * n]) {
                match m.total_cmp(&threshold) {
                    std::cmp::Ordering::Greater => *slot = true,
                    std::cmp::Ordering::Equal if ties > 0 => {
                        *slot = true;
                        ties -= 1;
                    }
                    _ => {}
                }
            }
        }
    }
    Ok(FreqIndexSet {
        height: h,
        width: w,
        channels,
        mask,
        retained_fraction: f,
    })
}

/// Splits a spectrum into the masked (LF) part and its complement (HF).
pub fn split_lf_hf(spec: &Spectrum, idx: &FreqIndexSet) -> Result<(Spectrum, Spectrum)> {
    spec.ensure_shape(idx.height, idx.width, idx.channels)?;
    let mut lf = spec.clone();
    let mut hf = spec.clone();
    for (c, (l, h)) in lf.planes.iter_mut().zip(hf.planes.iter_mut()).enumerate() {
        for ((l, h), &keep) in l.iter_mut().zip(h.iter_mut()).zip(idx.channel_mask(c)) {
            if keep {
                *h = ZERO;
            } else {
                *l = ZERO;
            }
        }
    }
    Ok((lf, hf))
}

/// Mean absolute coefficient difference between two spectra, per channel
/// `(1/HW) * sum |A - B|`, then averaged over channels.
pub fn mae_star_spectra(a: &Spectrum, b: &Spectrum) -> Result<f64> {
    a.ensure_shape(b.height, b.width, b.channels())?;
    let n = a.height * a.width;
    let mut total = 0.0;
    for c in 0..a.channels() {
        let channel_sum: f64 = a.plane(c).iter().zip(b.plane(c)).map(|(x, y)| magnitude(x - y)).sum();
        total += channel_sum / n as f64;
    }
    Ok(total / a.channels() as f64)
}

/// Frequency-domain mean absolute error between two images.
pub fn mae_star(a: &Image, b: &Image) -> Result<f64> {
    a.ensure_same_shape(b)?;
    mae_star_spectra(&fft2(a), &fft2(b))
}
