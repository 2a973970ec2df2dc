use std::fs;

use ioi_core::image::{decode_png, encode_png, load_frames, load_png, save_frames, save_png};
use ioi_core::{Error, FramePattern, Image, VideoSequence};

fn crc32(bytes: &[u8]) -> u32 {
    let mut crc = 0xffff_ffffu32;
    for &b in bytes {
        crc ^= u32::from(b);
        for _ in 0..8 {
            let mask = (crc & 1).wrapping_neg();
            crc = (crc >> 1) ^ (0xedb8_8320 & mask);
        }
    }
    !crc
}

fn adler32(bytes: &[u8]) -> u32 {
    let (mut a, mut b) = (1u32, 0u32);
    for &x in bytes {
        a = (a + u32::from(x)) % 65521;
        b = (b + a) % 65521;
    }
    (b << 16) | a
}

fn chunk(out: &mut Vec<u8>, kind: &[u8; 4], data: &[u8]) {
    out.extend_from_slice(&(data.len() as u32).to_be_bytes());
    let mut body = kind.to_vec();
    body.extend_from_slice(data);
    out.extend_from_slice(&body);
    out.extend_from_slice(&crc32(&body).to_be_bytes());
}

/// An RGB PNG written byte by byte with a single stored (uncompressed)
/// deflate block, every pixel set to `rgb`.
fn stored_png(width: u32, height: u32, rgb: [u8; 3]) -> Vec<u8> {
    // each row: filter byte 0 (none), then the pixels
    let row: Vec<u8> = std::iter::once(0)
        .chain(rgb.iter().copied().cycle().take(3 * width as usize))
        .collect();
    let raw = row.repeat(height as usize);
    assert!(raw.len() < 65536);
    let len = raw.len() as u16;
    let mut z = vec![0x78, 0x01, 0x01];
    z.extend_from_slice(&len.to_le_bytes());
    z.extend_from_slice(&(!len).to_le_bytes());
    z.extend_from_slice(&raw);
    z.extend_from_slice(&adler32(&raw).to_be_bytes());

    let mut ihdr = Vec::new();
    ihdr.extend_from_slice(&width.to_be_bytes());
    ihdr.extend_from_slice(&height.to_be_bytes());
    ihdr.extend_from_slice(&[8, 2, 0, 0, 0]);

    let mut out = b"\x89PNG\r\n\x1a\n".to_vec();
    chunk(&mut out, b"IHDR", &ihdr);
    chunk(&mut out, b"IDAT", &z);
    chunk(&mut out, b"IEND", &[]);
    out
}

#[test]
fn checksums_match_known_vectors() {
    assert_eq!(crc32(b"123456789"), 0xcbf4_3926);
    assert_eq!(adler32(b"Wikipedia"), 0x11e6_0398);
}

#[test]
fn hand_built_png_decodes_to_exact_fractions() {
    let img = decode_png(&stored_png(5, 3, [128, 64, 32])).unwrap();
    assert_eq!((img.height(), img.width(), img.channels()), (3, 5, 3));
    for (c, want) in [128.0, 64.0, 32.0].into_iter().enumerate() {
        assert!(img.plane(c).iter().all(|&v| v == want / 255.0));
    }
}

#[test]
fn encoded_png_survives_a_round_trip() {
    let img = Image::from_fn(7, 9, 3, |c, y, x| ((c * 31 + y * 7 + x * 13) % 256) as f64 / 255.0).unwrap();
    let back = decode_png(&encode_png(&img).unwrap()).unwrap();
    assert!(back.max_abs_diff(&img) < 1e-12);
}

#[test]
fn garbage_bytes_are_decode_errors() {
    assert!(matches!(decode_png(b"not a png"), Err(Error::Decode { .. })));
    let mut truncated = stored_png(4, 4, [1, 2, 3]);
    truncated.truncate(40);
    assert!(decode_png(&truncated).is_err());
}

fn frame(value: f64, size: usize) -> Image {
    Image::filled(size, size, 3, value).unwrap()
}

#[test]
fn frame_directory_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let pattern = FramePattern::default();
    let video = VideoSequence::new((0..4).map(|i| frame(i as f64 / 4.0, 6)).collect(), 25.0).unwrap();
    save_frames(&video, dir.path(), &pattern).unwrap();
    assert!(dir.path().join("003.png").exists());
    let back = load_frames(dir.path(), &pattern).unwrap();
    assert_eq!(back.len(), 4);
    for (a, b) in back.frames().iter().zip(video.frames()) {
        assert!(a.max_abs_diff(b) <= 0.5 / 255.0);
    }
}

#[test]
fn missing_first_frame_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let pattern = FramePattern::default();
    save_png(&frame(0.5, 4), dir.path().join("000.png")).unwrap();
    save_png(&frame(0.5, 4), dir.path().join("002.png")).unwrap();
    match load_frames(dir.path(), &pattern) {
        Err(Error::MissingFrame(name)) => assert_eq!(name, "001.png"),
        other => panic!("expected a missing frame, got {other:?}"),
    }
}

#[test]
fn mismatched_frame_sizes_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let pattern = FramePattern::parse("f_%04d.png").unwrap();
    save_png(&frame(0.1, 4), dir.path().join("f_0000.png")).unwrap();
    save_png(&frame(0.1, 5), dir.path().join("f_0001.png")).unwrap();
    assert!(matches!(
        load_frames(dir.path(), &pattern),
        Err(Error::FrameDimension { .. })
    ));
}

#[test]
fn empty_or_absent_directories_fail() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("notes.txt"), "x").unwrap();
    assert!(matches!(
        load_frames(dir.path(), &FramePattern::default()),
        Err(Error::NoFrames { .. })
    ));
    assert!(matches!(load_png(dir.path().join("absent.png")), Err(Error::Io { .. })));
}
