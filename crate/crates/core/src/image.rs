//! Planar floating-point rasters, frame sequences and their PNG encoding.
//!
//! Pixel values live in `[0, 1]` nominally. Nothing in the pipeline clamps
//! or quantizes except [`clamp_unit`] and [`save_png`].

use std::fs;
use std::io::Cursor;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

/// An `H x W x C` raster stored plane by plane (`data[c*H*W + y*W + x]`).
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidImage(format!("empty raster {height}x{width}")));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::InvalidImage(format!("unsupported channel count {channels}")));
        }
        if data.len() != height * width * channels {
            return Err(Error::InvalidImage(format!(
                "{} values for a {height}x{width}x{channels} raster",
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f64) -> Result<Self> {
        Self::new(height, width, channels, vec![value; height * width * channels])
    }

    pub fn zeros_like(other: &Image) -> Self {
        Self {
            data: vec![0.0; other.data.len()],
            ..*other
        }
    }

    /// Builds an image from `f(channel, row, col)`.
    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width * channels);
        for c in 0..channels {
            for y in 0..height {
                for x in 0..width {
                    data.push(f(c, y, x));
                }
            }
        }
        Self::new(height, width, channels, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// Pixels per channel.
    pub fn plane_len(&self) -> usize {
        self.height * self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn plane(&self, c: usize) -> &[f64] {
        let n = self.plane_len();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn plane_mut(&mut self, c: usize) -> &mut [f64] {
        let n = self.plane_len();
        &mut self.data[c * n..(c + 1) * n]
    }

    pub fn planes(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.plane_len())
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f64) {
        self.data[(c * self.height + y) * self.width + x] = v;
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.height == other.height && self.width == other.width && self.channels == other.channels
    }

    pub fn shape_string(&self) -> String {
        format!("{}x{}x{}", self.height, self.width, self.channels)
    }

    pub fn ensure_same_shape(&self, other: &Image) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::DimensionMismatch {
                expected: self.shape_string(),
                found: other.shape_string(),
            })
        }
    }

    pub fn ensure_min_size(&self, op: &'static str, min: usize) -> Result<()> {
        if self.height < min || self.width < min {
            Err(Error::TooSmall {
                op,
                min,
                height: self.height,
                width: self.width,
            })
        } else {
            Ok(())
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Image {
        Image {
            data: self.data.iter().map(|&v| f(v)).collect(),
            ..*self
        }
    }

    /// Largest absolute per-value difference. Shapes must match.
    pub fn max_abs_diff(&self, other: &Image) -> f64 {
        debug_assert!(self.same_shape(other));
        self.data
            .iter()
            .zip(&other.data)
            .fold(0.0, |m, (a, b)| f64::max(m, (a - b).abs()))
    }

    /// Copies the `height x width` window whose top-left corner is `(top, left)`.
    pub fn crop(&self, top: usize, left: usize, height: usize, width: usize) -> Result<Image> {
        if height == 0 || width == 0 || top + height > self.height || left + width > self.width {
            return Err(Error::InvalidParameter(format!(
                "crop {height}x{width}+{top}+{left} outside {}x{}",
                self.height, self.width
            )));
        }
        let mut data = Vec::with_capacity(height * width * self.channels);
        for plane in self.planes() {
            for y in top..top + height {
                let row = &plane[y * self.width..(y + 1) * self.width];
                data.extend_from_slice(&row[left..left + width]);
            }
        }
        Image::new(height, width, self.channels, data)
    }
}

/// Clamps every value to `[0, 1]`.
pub fn clamp_unit(img: &Image) -> Image {
    img.map(|v| v.clamp(0.0, 1.0))
}

fn quantize(v: f64) -> u8 {
    // round half up
    (v.clamp(0.0, 1.0) * 255.0 + 0.5).floor() as u8
}

/// Encodes an image as an 8-bit grayscale or RGB PNG.
pub fn encode_png(img: &Image) -> Result<Vec<u8>> {
    encode_png_inner(img).map_err(|reason| Error::Encode {
        path: PathBuf::from("<memory>"),
        reason,
    })
}

fn encode_png_inner(img: &Image) -> std::result::Result<Vec<u8>, String> {
    let (h, w, c) = (img.height(), img.width(), img.channels());
    let mut bytes = Vec::with_capacity(h * w * c);
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                bytes.push(quantize(img.get(ch, y, x)));
            }
        }
    }
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, w as u32, h as u32);
        enc.set_color(if c == 1 {
            png::ColorType::Grayscale
        } else {
            png::ColorType::Rgb
        });
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc.write_header().map_err(|e| e.to_string())?;
        writer.write_image_data(&bytes).map_err(|e| e.to_string())?;
        writer.finish().map_err(|e| e.to_string())?;
    }
    Ok(out)
}

/// Quantizes with round-half-up after clamping and writes a PNG.
pub fn save_png(img: &Image, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_png_inner(img).map_err(|reason| Error::Encode {
        path: path.to_path_buf(),
        reason,
    })?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Decodes an 8-bit grayscale or RGB PNG; each sample `p` becomes `p / 255`.
pub fn decode_png(bytes: &[u8]) -> Result<Image> {
    decode_png_at(bytes, Path::new("<memory>"))
}

fn decode_png_at(bytes: &[u8], path: &Path) -> Result<Image> {
    let fail = |reason: String| Error::Decode {
        path: path.to_path_buf(),
        reason,
    };
    let mut decoder = png::Decoder::new(Cursor::new(bytes));
    decoder.set_transformations(png::Transformations::IDENTITY);
    let mut reader = decoder.read_info().map_err(|e| fail(e.to_string()))?;
    let (width, height, color, depth) = {
        let info = reader.info();
        (
            info.width as usize,
            info.height as usize,
            info.color_type,
            info.bit_depth,
        )
    };
    let channels = match color {
        png::ColorType::Grayscale => 1,
        png::ColorType::Rgb => 3,
        png::ColorType::Indexed => return Err(fail("unsupported palette (indexed) color".into())),
        png::ColorType::GrayscaleAlpha | png::ColorType::Rgba => return Err(fail("unsupported alpha channel".into())),
    };
    if depth != png::BitDepth::Eight {
        return Err(fail(format!("unsupported bit depth {}", depth as u8)));
    }
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| fail("image too large".into()))?;
    let mut buf = vec![0u8; size];
    let frame = reader.next_frame(&mut buf).map_err(|e| fail(e.to_string()))?;
    let stride = frame.line_size;
    let mut data = vec![0.0; height * width * channels];
    for y in 0..height {
        let row = &buf[y * stride..y * stride + width * channels];
        for x in 0..width {
            for c in 0..channels {
                data[(c * height + y) * width + x] = f64::from(row[x * channels + c]) / 255.0;
            }
        }
    }
    Image::new(height, width, channels, data)
}

pub fn load_png(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_png_at(&bytes, path)
}

/// Ordered frames sharing one shape.
#[derive(Clone, Debug, PartialEq)]
pub struct VideoSequence {
    frames: Vec<Image>,
    frame_rate: f64,
}

/// Default playback rate for frame directories, which carry none.
pub const DEFAULT_FRAME_RATE: f64 = 25.0;

impl VideoSequence {
    pub fn new(frames: Vec<Image>, frame_rate: f64) -> Result<Self> {
        if !(frame_rate > 0.0 && frame_rate.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "frame rate must be positive, got {frame_rate}"
            )));
        }
        let first = frames
            .first()
            .ok_or_else(|| Error::InvalidParameter("video has no frames".into()))?;
        for (i, frame) in frames.iter().enumerate().skip(1) {
            if !frame.same_shape(first) {
                return Err(Error::FrameDimension {
                    frame: format!("#{i}"),
                    expected: first.shape_string(),
                    found: frame.shape_string(),
                });
            }
        }
        Ok(Self { frames, frame_rate })
    }

    pub fn frames(&self) -> &[Image] {
        &self.frames
    }

    pub fn into_frames(self) -> Vec<Image> {
        self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn frame_rate(&self) -> f64 {
        self.frame_rate
    }

    /// Applies `f` to every frame, keeping the frame rate.
    pub fn try_map(&self, f: impl Fn(&Image) -> Result<Image>) -> Result<VideoSequence> {
        let frames = self.frames.iter().map(f).collect::<Result<Vec<_>>>()?;
        VideoSequence::new(frames, self.frame_rate)
    }
}

/// A printf-style `prefix%0Ndsuffix` frame naming pattern, e.g. `%03d.png`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FramePattern {
    prefix: String,
    digits: usize,
    suffix: String,
}

impl FramePattern {
    pub fn parse(pattern: &str) -> Result<Self> {
        let bad = || Error::Config(format!("frame pattern {pattern:?} must contain one %0Nd"));
        let start = pattern.find('%').ok_or_else(bad)?;
        let rest = &pattern[start + 1..];
        let end = rest.find('d').ok_or_else(bad)?;
        let spec = &rest[..end];
        let digits = if spec.is_empty() {
            1
        } else {
            if !spec.starts_with('0') {
                return Err(bad());
            }
            spec[1..].parse::<usize>().map_err(|_| bad())?
        };
        let suffix = &rest[end + 1..];
        if digits == 0 || suffix.contains('%') {
            return Err(bad());
        }
        Ok(Self {
            prefix: pattern[..start].to_string(),
            digits,
            suffix: suffix.to_string(),
        })
    }

    pub fn format(&self, index: usize) -> String {
        format!("{}{:0width$}{}", self.prefix, index, self.suffix, width = self.digits)
    }

    fn index_of(&self, name: &str) -> Option<usize> {
        let middle = name.strip_prefix(&self.prefix)?.strip_suffix(&self.suffix)?;
        if middle.len() < self.digits || !middle.bytes().all(|b| b.is_ascii_digit()) {
            return None;
        }
        // Zero padding is only legal up to the declared width.
        if middle.len() > self.digits && middle.starts_with('0') {
            return None;
        }
        middle.parse().ok()
    }
}

impl Default for FramePattern {
    fn default() -> Self {
        Self {
            prefix: String::new(),
            digits: 3,
            suffix: ".png".into(),
        }
    }
}

/// Loads `0..n` contiguous frames named by `pattern` from `dir`.
pub fn load_frames(dir: impl AsRef<Path>, pattern: &FramePattern) -> Result<VideoSequence> {
    let dir = dir.as_ref();
    let mut indices = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        if let Some(i) = entry.file_name().to_str().and_then(|n| pattern.index_of(n)) {
            indices.push(i);
        }
    }
    if indices.is_empty() {
        return Err(Error::NoFrames {
            dir: dir.to_path_buf(),
            pattern: pattern.format(0),
        });
    }
    indices.sort_unstable();
    indices.dedup();
    if let Some(missing) = (0..).zip(&indices).find(|(want, got)| want != *got) {
        return Err(Error::MissingFrame(pattern.format(missing.0)));
    }

    let mut frames: Vec<Image> = Vec::with_capacity(indices.len());
    for &i in &indices {
        let name = pattern.format(i);
        let frame = load_png(dir.join(&name))?;
        if let Some(first) = frames.first() {
            if !frame.same_shape(first) {
                return Err(Error::FrameDimension {
                    frame: name,
                    expected: first.shape_string(),
                    found: frame.shape_string(),
                });
            }
        }
        frames.push(frame);
    }
    VideoSequence::new(frames, DEFAULT_FRAME_RATE)
}

pub fn save_frames(video: &VideoSequence, dir: impl AsRef<Path>, pattern: &FramePattern) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (i, frame) in video.frames().iter().enumerate() {
        save_png(frame, dir.join(pattern.format(i)))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn gray(values: &[f64]) -> Image {
        Image::new(1, values.len(), 1, values.to_vec()).unwrap()
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(Image::new(0, 2, 1, vec![]).is_err());
        assert!(Image::new(2, 2, 2, vec![0.0; 8]).is_err());
        assert!(Image::new(2, 2, 1, vec![0.0; 3]).is_err());
    }

    #[test]
    fn clamp_examples() {
        let c = clamp_unit(&gray(&[-0.5, 0.3, 1.7]));
        assert_eq!(c.data(), &[0.0, 0.3, 1.0]);
        let inside = gray(&[0.0, 0.25, 1.0]);
        assert_eq!(clamp_unit(&inside), inside);
    }

    #[test]
    fn quantization_rounds_half_up() {
        assert_eq!(quantize(0.5), 128);
        assert_eq!(quantize(1.0), 255);
        assert_eq!(quantize(-0.2), 0);
        assert_eq!(quantize(0.5 / 255.0), 1);
        assert_eq!(quantize(1.5 / 255.0), 2);
        assert_eq!(quantize(0.4999 / 255.0), 0);
    }

    #[test]
    fn unit_pixel_round_trips() {
        for (v, byte) in [(1.0, 255u8), (0.0, 0), (0.5, 128), (-0.2, 0)] {
            let png = encode_png(&gray(&[v])).unwrap();
            let back = decode_png(&png).unwrap();
            assert_eq!(back.data(), &[f64::from(byte) / 255.0]);
        }
    }

    #[test]
    fn frame_pattern_parsing() {
        let p = FramePattern::parse("%03d.png").unwrap();
        assert_eq!(p, FramePattern::default());
        assert_eq!(p.format(7), "007.png");
        assert_eq!(p.index_of("012.png"), Some(12));
        assert_eq!(p.index_of("12.png"), None);
        assert_eq!(p.index_of("1000.png"), Some(1000));
        assert_eq!(p.index_of("0100.png"), None);
        let q = FramePattern::parse("frame_%05d.png").unwrap();
        assert_eq!(q.format(3), "frame_00003.png");
        assert!(FramePattern::parse("frame.png").is_err());
        assert!(FramePattern::parse("%3d.png").is_err());
    }

    #[test]
    fn crop_copies_window() {
        let img = Image::from_fn(4, 5, 3, |c, y, x| (c * 100 + y * 10 + x) as f64).unwrap();
        let cut = img.crop(1, 2, 2, 3).unwrap();
        assert_eq!(cut.get(2, 0, 0), 212.0);
        assert_eq!(cut.get(0, 1, 2), 24.0);
        assert!(img.crop(3, 0, 2, 1).is_err());
    }

    #[test]
    fn video_rejects_mixed_shapes() {
        let a = Image::filled(2, 2, 1, 0.0).unwrap();
        let b = Image::filled(4, 4, 1, 0.0).unwrap();
        assert!(matches!(
            VideoSequence::new(vec![a.clone(), b], 25.0),
            Err(Error::FrameDimension { .. })
        ));
        assert!(VideoSequence::new(vec![a], 0.0).is_err());
    }

    proptest! {
        #[test]
        fn clamp_is_idempotent(values in prop::collection::vec(-3.0f64..3.0, 1..64)) {
            let img = gray(&values);
            let once = clamp_unit(&img);
            prop_assert!(once.data().iter().all(|v| (0.0..=1.0).contains(v)));
            prop_assert_eq!(clamp_unit(&once), once);
        }

        #[test]
        fn png_round_trip_within_half_step(
            values in prop::collection::vec(0.0f64..=1.0, 12),
            rgb in any::<bool>(),
        ) {
            let img = if rgb {
                Image::new(2, 2, 3, values).unwrap()
            } else {
                Image::new(3, 4, 1, values).unwrap()
            };
            let bytes = encode_png(&img).unwrap();
            prop_assert_eq!(&bytes, &encode_png(&img).unwrap());
            let back = decode_png(&bytes).unwrap();
            prop_assert!(back.max_abs_diff(&img) <= 1.0 / 510.0 + 1e-12);
        }
    }
}
