//! Input purification defences and gain measured through them.

use rand::Rng;

use crate::error::{Error, Result};
use crate::fixtures::rng;
use crate::image::{Image, VideoSequence};
use crate::metrics::{relative_gain, video_score, GradientOracle};

pub const DEFAULT_DEFENCE_FRACTION: f64 = 0.8;

fn scaled(n: usize, fraction: f64) -> usize {
    (fraction * n as f64).round() as usize
}

/// Crops every frame to `round(fraction*H) x round(fraction*W)` at one
/// seeded offset shared by the whole video.
pub fn defend_random_crop(video: &VideoSequence, fraction: f64, seed: u64) -> Result<VideoSequence> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "crop fraction must lie in (0, 1], got {fraction}"
        )));
    }
    let first = &video.frames()[0];
    let (h, w) = (first.height(), first.width());
    let (ch, cw) = (scaled(h, fraction), scaled(w, fraction));
    if ch == 0 || cw == 0 {
        return Err(Error::TooSmall {
            op: "random crop",
            min: 1,
            height: ch,
            width: cw,
        });
    }
    let mut r = rng(seed);
    let top = r.random_range(0..=h - ch);
    let left = r.random_range(0..=w - cw);
    video.try_map(|f| f.crop(top, left, ch, cw))
}

/// Bilinear resampling with pixel-centre alignment.
pub fn resize_bilinear(img: &Image, height: usize, width: usize) -> Result<Image> {
    if height == 0 || width == 0 {
        return Err(Error::InvalidParameter(format!("cannot resize to {height}x{width}")));
    }
    let (h, w) = (img.height(), img.width());
    let axis = |out: usize, inp: usize| -> Vec<(usize, usize, f64)> {
        let scale = inp as f64 / out as f64;
        (0..out)
            .map(|d| {
                let src = ((d as f64 + 0.5) * scale - 0.5).clamp(0.0, (inp - 1) as f64);
                let i0 = src.floor() as usize;
                let i1 = (i0 + 1).min(inp - 1);
                (i0, i1, src - i0 as f64)
            })
            .collect()
    };
    let ys = axis(height, h);
    let xs = axis(width, w);
    Image::from_fn(height, width, img.channels(), |c, y, x| {
        let (y0, y1, ty) = ys[y];
        let (x0, x1, tx) = xs[x];
        let top = img.get(c, y0, x0) * (1.0 - tx) + img.get(c, y0, x1) * tx;
        let bottom = img.get(c, y1, x0) * (1.0 - tx) + img.get(c, y1, x1) * tx;
        top * (1.0 - ty) + bottom * ty
    })
}

/// Resizes every frame to `round(fraction*H) x round(fraction*W)`.
pub fn defend_resize(video: &VideoSequence, fraction: f64) -> Result<VideoSequence> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "resize fraction must lie in (0, 1), got {fraction}"
        )));
    }
    let first = &video.frames()[0];
    let (h, w) = (scaled(first.height(), fraction), scaled(first.width(), fraction));
    video.try_map(|f| resize_bilinear(f, h, w))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Defence {
    None,
    RandomCrop { fraction: f64, seed: u64 },
    Resize { fraction: f64 },
}

impl Defence {
    pub fn apply(&self, video: &VideoSequence) -> Result<VideoSequence> {
        match *self {
            Defence::None => Ok(video.clone()),
            Defence::RandomCrop { fraction, seed } => defend_random_crop(video, fraction, seed),
            Defence::Resize { fraction } => defend_resize(video, fraction),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Defence::None => "none",
            Defence::RandomCrop { .. } => "random-crop",
            Defence::Resize { .. } => "resize",
        }
    }
}

/// Relative gain between the defended original and the defended
/// adversarial video, each scored as the mean over frames.
pub fn defended_gain(
    original: &VideoSequence,
    adversarial: &VideoSequence,
    oracle: &dyn GradientOracle,
    defence: Defence,
) -> Result<f64> {
    let orig = defence.apply(original)?;
    let adv = defence.apply(adversarial)?;
    let f = &orig.frames()[0];
    f.ensure_min_size("defended scoring", oracle.min_size())?;
    orig.frames()[0].ensure_same_shape(&adv.frames()[0])?;
    relative_gain(&video_score(oracle, &adv)?, &video_score(oracle, &orig)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::{checkerboard, random_video};
    use crate::metrics::CnnMetric;

    #[test]
    fn full_crop_is_identity() {
        let video = random_video(0, 3, 10, 10, 3);
        assert_eq!(defend_random_crop(&video, 1.0, 9).unwrap(), video);
    }

    #[test]
    fn crop_dimensions_and_shared_offset() {
        let video = random_video(1, 4, 10, 10, 1);
        let out = defend_random_crop(&video, 0.8, 5).unwrap();
        assert_eq!((out.frames()[0].height(), out.frames()[0].width()), (8, 8));
        // find the offset from frame 0 and confirm it for every frame
        let f0 = &video.frames()[0];
        let mut offset = None;
        'search: for top in 0..=2 {
            for left in 0..=2 {
                if f0.crop(top, left, 8, 8).unwrap() == out.frames()[0] {
                    offset = Some((top, left));
                    break 'search;
                }
            }
        }
        let (top, left) = offset.unwrap();
        for (orig, cut) in video.frames().iter().zip(out.frames()) {
            assert_eq!(&orig.crop(top, left, 8, 8).unwrap(), cut);
        }
        assert_eq!(out, defend_random_crop(&video, 0.8, 5).unwrap());
    }

    #[test]
    fn resize_preserves_constants() {
        let img = Image::filled(10, 15, 3, 0.37).unwrap();
        let out = resize_bilinear(&img, 8, 12).unwrap();
        assert!(out.data().iter().all(|v| (v - 0.37).abs() < 1e-15));
    }

    #[test]
    fn halving_a_checkerboard_averages_it() {
        let board = checkerboard(4, 4, 1, 0.0, 1.0);
        let out = resize_bilinear(&board, 2, 2).unwrap();
        assert!(out.data().iter().all(|v| (v - 0.5).abs() < 1e-15));
        let video = VideoSequence::new(vec![board], 25.0).unwrap();
        let out = defend_resize(&video, 0.5).unwrap();
        assert!(out.frames()[0].data().iter().all(|v| (v - 0.5).abs() < 1e-15));
    }

    #[test]
    fn defences_validate_fractions_and_sizes() {
        let video = random_video(2, 2, 10, 10, 1);
        assert!(defend_random_crop(&video, 0.0, 0).is_err());
        assert!(defend_resize(&video, 1.0).is_err());
        let m = CnnMetric::new(0);
        let err = defended_gain(&video, &video, &m, Defence::Resize { fraction: 0.5 });
        assert!(matches!(err, Err(Error::TooSmall { .. })));
    }

    #[test]
    fn defences_do_not_touch_their_input() {
        let video = random_video(3, 2, 12, 12, 3);
        let copy = video.clone();
        defend_random_crop(&video, 0.8, 1).unwrap();
        defend_resize(&video, 0.8).unwrap();
        assert_eq!(video, copy);
    }
}
