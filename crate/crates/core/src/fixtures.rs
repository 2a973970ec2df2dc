//! Seeded synthetic images and videos.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::image::{Image, VideoSequence, DEFAULT_FRAME_RATE};

/// Mixes a master seed with an item index (splitmix64 finalizer).
pub fn derive_seed(master: u64, index: u64) -> u64 {
    let mut z = master ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Independent uniform `[0, 1)` pixels.
pub fn random_image(seed: u64, height: usize, width: usize, channels: usize) -> Image {
    let mut rng = rng(seed);
    let data = (0..height * width * channels).map(|_| rng.random::<f64>()).collect();
    Image::new(height, width, channels, data).expect("fixture shape")
}

/// A smooth gradient with a textured patch: natural-ish content with both
/// flat and busy regions.
pub fn textured_image(seed: u64, height: usize, width: usize, channels: usize) -> Image {
    let mut rng = rng(seed);
    let phase: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let base: Vec<f64> = (0..channels).map(|_| rng.random_range(0.2..0.6)).collect();
    let noise: Vec<f64> = (0..height * width * channels)
        .map(|_| rng.random_range(-0.25..0.25))
        .collect();
    Image::from_fn(height, width, channels, |c, y, x| {
        let fy = y as f64 / height as f64;
        let fx = x as f64 / width as f64;
        let smooth = base[c] + 0.2 * (fx + 0.5 * fy) + 0.05 * (phase + 6.0 * fx).sin();
        let busy = y >= height / 3 && x >= width / 3;
        let n = if busy { noise[(c * height + y) * width + x] } else { 0.0 };
        (smooth + n).clamp(0.0, 1.0)
    })
    .expect("fixture shape")
}

/// Frames that drift slowly from a random base, like a static shot with
/// sensor noise.
pub fn random_video(seed: u64, frames: usize, height: usize, width: usize, channels: usize) -> VideoSequence {
    let base = random_image(seed, height, width, channels);
    let mut rng = rng(derive_seed(seed, 1));
    let frames = (0..frames)
        .map(|_| {
            let mut frame = base.clone();
            for v in frame.data_mut() {
                *v = (*v + rng.random_range(-0.05..0.05)).clamp(0.0, 1.0);
            }
            frame
        })
        .collect();
    VideoSequence::new(frames, DEFAULT_FRAME_RATE).expect("fixture video")
}

/// Alternating `lo`/`hi` pixels starting with `lo` at the origin.
pub fn checkerboard(height: usize, width: usize, channels: usize, lo: f64, hi: f64) -> Image {
    Image::from_fn(
        height,
        width,
        channels,
        |_, y, x| if (y + x) % 2 == 0 { lo } else { hi },
    )
    .expect("fixture shape")
}
