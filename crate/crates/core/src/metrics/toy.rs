//! Two small metrics with hand-written gradients, standing in for learned
//! no-reference models.

use rand::Rng;

use super::{GradientOracle, ScoreRange};
use crate::error::{Error, Result};
use crate::fixtures::rng;
use crate::image::Image;

/// Mean of `s(L(x))` over interior pixels, where `L` is the mean of the four
/// neighbours minus the centre and `s(z) = z * tanh(k z)`.
///
/// Rewards local contrast; `|L| <= 1` on `[0, 1]` images so scores stay in
/// `[0, 1]`.
#[derive(Clone, Debug)]
pub struct LaplaceMetric {
    sharpness: f64,
    range: ScoreRange,
}

pub const LAPLACE_SHARPNESS: f64 = 10.0;

impl Default for LaplaceMetric {
    fn default() -> Self {
        Self {
            sharpness: LAPLACE_SHARPNESS,
            range: ScoreRange { lo: 0.0, hi: 1.0 },
        }
    }
}

impl LaplaceMetric {
    pub fn with_range(mut self, range: ScoreRange) -> Self {
        self.range = range;
        self
    }

    pub fn sharpness(&self) -> f64 {
        self.sharpness
    }

    fn check(&self, img: &Image) -> Result<()> {
        img.ensure_min_size("laplace metric", 3)
    }

    /// Visits every interior Laplacian response as `(channel, row, col, z)`.
    fn responses(img: &Image, mut f: impl FnMut(usize, usize, usize, f64)) {
        let (h, w) = (img.height(), img.width());
        for c in 0..img.channels() {
            let p = img.plane(c);
            for y in 1..h - 1 {
                let (up, mid, down) = (
                    &p[(y - 1) * w..y * w],
                    &p[y * w..(y + 1) * w],
                    &p[(y + 1) * w..(y + 2) * w],
                );
                for x in 1..w - 1 {
                    let z = 0.25 * (up[x] + down[x] + mid[x - 1] + mid[x + 1]) - mid[x];
                    f(c, y, x, z);
                }
            }
        }
    }

    fn count(img: &Image) -> f64 {
        (img.channels() * (img.height() - 2) * (img.width() - 2)) as f64
    }
}

impl GradientOracle for LaplaceMetric {
    fn name(&self) -> &str {
        "laplace"
    }

    fn range(&self) -> ScoreRange {
        self.range
    }

    fn min_size(&self) -> usize {
        3
    }

    fn value(&self, img: &Image) -> Result<f64> {
        self.check(img)?;
        let k = self.sharpness;
        let mut sum = 0.0;
        Self::responses(img, |_, _, _, z| sum += z * (k * z).tanh());
        Ok(sum / Self::count(img))
    }

    fn gradient(&self, img: &Image) -> Result<Image> {
        self.check(img)?;
        let k = self.sharpness;
        let inv_n = 1.0 / Self::count(img);
        let w = img.width();
        let mut grad = Image::zeros_like(img);
        Self::responses(img, |c, y, x, z| {
            let t = (k * z).tanh();
            let g = (t + k * z * (1.0 - t * t)) * inv_n;
            let plane = grad.plane_mut(c);
            plane[y * w + x] -= g;
            let q = 0.25 * g;
            plane[(y - 1) * w + x] += q;
            plane[(y + 1) * w + x] += q;
            plane[y * w + x - 1] += q;
            plane[y * w + x + 1] += q;
        });
        Ok(grad)
    }
}

/// One 3x3 convolution layer with softplus, global average pooling and an
/// affine read-out: `GAIN * mean(softplus(conv(x) + b)) + OFFSET`.
#[derive(Clone, Debug)]
pub struct CnnMetric {
    seed: u64,
    /// `[filter][channel][tap]`, taps row-major.
    kernels: Vec<[[f64; 9]; 3]>,
    biases: Vec<f64>,
    range: ScoreRange,
}

pub const CNN_FILTERS: usize = 4;
pub const CNN_GAIN: f64 = 50.0;
pub const CNN_OFFSET: f64 = 20.0;
pub const CNN_MIN_SIZE: usize = 8;

fn softplus(a: f64) -> f64 {
    a.max(0.0) + (-a.abs()).exp().ln_1p()
}

/// Running sum of `softplus(a) = max(a, 0) + ln(1 + e)` with
/// `e = exp(-|a|)`. The logarithms are taken of products of up to
/// `CHUNK` factors in `(1, 2]`, which cannot overflow.
#[derive(Default)]
struct SoftplusSum {
    linear: f64,
    logs: f64,
    product: Option<f64>,
    pending: usize,
}

impl SoftplusSum {
    const CHUNK: usize = 512;

    fn add(&mut self, a: f64, e: f64) {
        self.linear += a.max(0.0);
        let p = self.product.get_or_insert(1.0);
        *p *= 1.0 + e;
        self.pending += 1;
        if self.pending == Self::CHUNK {
            self.flush();
        }
    }

    fn flush(&mut self) {
        if let Some(p) = self.product.take() {
            self.logs += p.ln();
        }
        self.pending = 0;
    }

    fn total(mut self) -> f64 {
        self.flush();
        self.linear + self.logs
    }
}

impl CnnMetric {
    pub fn new(seed: u64) -> Self {
        let mut r = rng(seed);
        let mut kernels = Vec::with_capacity(CNN_FILTERS);
        let mut biases = Vec::with_capacity(CNN_FILTERS);
        for _ in 0..CNN_FILTERS {
            let mut k = [[0.0; 9]; 3];
            for ch in k.iter_mut() {
                for tap in ch.iter_mut() {
                    *tap = r.random_range(-0.5..0.5);
                }
            }
            kernels.push(k);
            biases.push(r.random_range(-0.1..0.1));
        }
        Self {
            seed,
            kernels,
            biases,
            range: ScoreRange { lo: 0.0, hi: 100.0 },
        }
    }

    pub fn with_range(mut self, range: ScoreRange) -> Self {
        self.range = range;
        self
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn biases(&self) -> &[f64] {
        &self.biases
    }

    fn check(&self, img: &Image) -> Result<()> {
        img.ensure_min_size("cnn metric", CNN_MIN_SIZE)
    }

    /// Grayscale inputs use the first input channel of each kernel.
    fn kernel(&self, f: usize, c: usize) -> &[f64; 9] {
        &self.kernels[f][c]
    }

    /// Pre-activations of filter `f` for output row `y` into `out`.
    fn preact_row(&self, img: &Image, f: usize, y: usize, out: &mut [f64]) {
        let w = img.width();
        let ow = w - 2;
        out.fill(self.biases[f]);
        for c in 0..img.channels() {
            let p = img.plane(c);
            let k = self.kernel(f, c);
            let (r0, r1, r2) = (&p[y * w..][..w], &p[(y + 1) * w..][..w], &p[(y + 2) * w..][..w]);
            for (x, o) in out[..ow].iter_mut().enumerate() {
                *o += k[0] * r0[x]
                    + k[1] * r0[x + 1]
                    + k[2] * r0[x + 2]
                    + k[3] * r1[x]
                    + k[4] * r1[x + 1]
                    + k[5] * r1[x + 2]
                    + k[6] * r2[x]
                    + k[7] * r2[x + 1]
                    + k[8] * r2[x + 2];
            }
        }
    }

    fn positions(img: &Image) -> f64 {
        (CNN_FILTERS * (img.height() - 2) * (img.width() - 2)) as f64
    }

    fn forward_backward(&self, img: &Image, want_grad: bool) -> Result<(f64, Option<Image>)> {
        self.check(img)?;
        let (h, w) = (img.height(), img.width());
        let ow = w - 2;
        let scale = CNN_GAIN / Self::positions(img);
        let mut pre = vec![vec![0.0; ow]; CNN_FILTERS];
        let mut sum = SoftplusSum::default();
        let mut grad = want_grad.then(|| Image::zeros_like(img));
        for y in 0..h - 2 {
            for (f, row) in pre.iter_mut().enumerate() {
                self.preact_row(img, f, y, row);
            }
            let Some(grad) = grad.as_mut() else {
                pre.iter().flatten().for_each(|&a| sum.add(a, (-a.abs()).exp()));
                continue;
            };
            for a in pre.iter_mut().flatten() {
                let e = (-a.abs()).exp();
                sum.add(*a, e);
                let sig = if *a >= 0.0 { 1.0 / (1.0 + e) } else { e / (1.0 + e) };
                *a = sig * scale;
            }
            let [d0, d1, d2, d3] = [&pre[0], &pre[1], &pre[2], &pre[3]];
            for c in 0..img.channels() {
                let ks = [
                    self.kernel(0, c),
                    self.kernel(1, c),
                    self.kernel(2, c),
                    self.kernel(3, c),
                ];
                let gp = grad.plane_mut(c);
                for i in 0..3 {
                    let row = &mut gp[(y + i) * w..(y + i + 1) * w];
                    for j in 0..3 {
                        let t = i * 3 + j;
                        let (k0, k1, k2, k3) = (ks[0][t], ks[1][t], ks[2][t], ks[3][t]);
                        for (x, g) in row[j..j + ow].iter_mut().enumerate() {
                            *g += k0 * d0[x] + k1 * d1[x] + k2 * d2[x] + k3 * d3[x];
                        }
                    }
                }
            }
        }
        Ok((CNN_GAIN * sum.total() / Self::positions(img) + CNN_OFFSET, grad))
    }

    /// Score of an all-zero image: every pre-activation equals its bias.
    pub fn zero_image_score(&self) -> f64 {
        CNN_GAIN * self.biases.iter().map(|&b| softplus(b)).sum::<f64>() / CNN_FILTERS as f64 + CNN_OFFSET
    }
}

impl GradientOracle for CnnMetric {
    fn name(&self) -> &str {
        "cnn"
    }

    fn range(&self) -> ScoreRange {
        self.range
    }

    fn min_size(&self) -> usize {
        CNN_MIN_SIZE
    }

    fn value(&self, img: &Image) -> Result<f64> {
        Ok(self.forward_backward(img, false)?.0)
    }

    fn gradient(&self, img: &Image) -> Result<Image> {
        Ok(self.value_and_gradient(img)?.1)
    }

    fn value_and_gradient(&self, img: &Image) -> Result<(f64, Image)> {
        let (v, g) = self.forward_backward(img, true)?;
        g.map(|g| (v, g))
            .ok_or_else(|| Error::InvariantViolation("gradient pass produced no gradient".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::{checkerboard, random_image};
    use crate::metrics::{check_gradient, AdmissionCheck};

    #[test]
    fn laplace_is_zero_on_flat_images() {
        let m = LaplaceMetric::default();
        let img = Image::filled(8, 8, 3, 0.4).unwrap();
        assert_eq!(m.value(&img).unwrap(), 0.0);
        assert!(m.gradient(&img).unwrap().data().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn laplace_rewards_checkerboard_texture() {
        let m = LaplaceMetric::default();
        let flat = Image::filled(8, 8, 1, 0.5).unwrap();
        let base = m.value(&flat).unwrap();
        for a in [0.05, 0.1] {
            let board = checkerboard(8, 8, 1, -a, a);
            let textured = Image::new(
                8,
                8,
                1,
                flat.data().iter().zip(board.data()).map(|(p, q)| p + q).collect(),
            )
            .unwrap();
            assert!(m.value(&textured).unwrap() > base);
        }
    }

    #[test]
    fn laplace_value_matches_direct_formula() {
        let m = LaplaceMetric::default();
        let img = random_image(4, 5, 6, 1);
        let mut want = 0.0;
        for y in 1..4 {
            for x in 1..5 {
                let z = (img.get(0, y - 1, x) + img.get(0, y + 1, x) + img.get(0, y, x - 1) + img.get(0, y, x + 1))
                    / 4.0
                    - img.get(0, y, x);
                want += z * (10.0 * z).tanh();
            }
        }
        want /= 12.0;
        assert!((m.value(&img).unwrap() - want).abs() < 1e-14);
    }

    #[test]
    fn laplace_scores_stay_in_declared_range() {
        let m = LaplaceMetric::default();
        for seed in 0..10 {
            let v = m.value(&random_image(seed, 12, 12, 3)).unwrap();
            assert!((0.0..=1.0).contains(&v));
        }
        let extreme = checkerboard(8, 8, 1, 0.0, 1.0);
        assert!(m.value(&extreme).unwrap() <= 1.0);
    }

    #[test]
    fn gradients_pass_finite_differences() {
        let check = AdmissionCheck {
            images: 5,
            size: 9,
            ..Default::default()
        };
        let laplace = check_gradient(&LaplaceMetric::default(), &check).unwrap();
        assert!(laplace.passed, "{laplace:?}");
        let cnn = check_gradient(&CnnMetric::new(7), &check).unwrap();
        assert!(cnn.passed, "{cnn:?}");
    }

    #[test]
    fn cnn_zero_image_has_closed_form_score() {
        let m = CnnMetric::new(3);
        let zero = Image::filled(10, 12, 3, 0.0).unwrap();
        assert!((m.value(&zero).unwrap() - m.zero_image_score()).abs() < 1e-12);
        let gray = Image::filled(10, 12, 1, 0.0).unwrap();
        assert!((m.value(&gray).unwrap() - m.zero_image_score()).abs() < 1e-12);
    }

    #[test]
    fn cnn_is_deterministic_per_seed() {
        let img = random_image(2, 16, 16, 3);
        let a = CnnMetric::new(42).value(&img).unwrap();
        let b = CnnMetric::new(42).value(&img).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, CnnMetric::new(43).value(&img).unwrap());
        let (v, g) = CnnMetric::new(42).value_and_gradient(&img).unwrap();
        assert_eq!(v, a);
        assert_eq!(g, CnnMetric::new(42).gradient(&img).unwrap());
    }

    #[test]
    fn small_images_are_rejected() {
        assert!(LaplaceMetric::default()
            .value(&Image::filled(2, 8, 1, 0.0).unwrap())
            .is_err());
        assert!(CnnMetric::new(0)
            .gradient(&Image::filled(7, 8, 1, 0.0).unwrap())
            .is_err());
    }
}
