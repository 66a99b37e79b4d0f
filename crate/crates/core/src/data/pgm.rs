//! Binary (P5) PGM, 8-bit only.

use std::fs;
use std::path::{Path, PathBuf};

use super::GrayImage;
use crate::error::{Error, Result};

pub const PGM_MAXVAL: u32 = 255;

pub fn decode_pgm(bytes: &[u8]) -> Result<GrayImage> {
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        return Err(Error::Format("not a binary PGM (expected magic P5)".into()));
    }
    let mut pos = 2;
    let mut fields = [0u32; 3];
    for field in &mut fields {
        // whitespace and comments before each header number
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                _ => break,
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Format("truncated or malformed PGM header".into()));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Format("PGM header value out of range".into()))?;
    }
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(Error::Format("PGM header must end in one whitespace byte".into())),
    }
    let [width, height, maxval] = fields;
    if maxval == 0 || maxval > PGM_MAXVAL {
        return Err(Error::Format(format!("unsupported PGM maxval {maxval}")));
    }
    if width == 0 || height == 0 {
        return Err(Error::Format(format!("empty PGM {width}x{height}")));
    }
    let count = width as usize * height as usize;
    let payload = bytes
        .get(pos..pos + count)
        .ok_or_else(|| Error::Format(format!("PGM payload truncated: need {count} bytes")))?;
    let denom = maxval as f32;
    let pixels = payload
        .iter()
        .map(|&v| (v as f32 / denom).min(1.0))
        .collect();
    GrayImage::new(height as usize, width as usize, pixels)
}

pub fn encode_pgm(image: &GrayImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n{}\n", image.width(), image.height(), PGM_MAXVAL).into_bytes();
    out.extend(
        image
            .pixels()
            .iter()
            .map(|&p| (p.clamp(0.0, 1.0) * 255.0).round() as u8),
    );
    out
}

pub fn load_pgm(path: impl AsRef<Path>) -> Result<GrayImage> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pgm(&bytes).map_err(|e| match e {
        Error::Format(msg) => Error::Format(format!("{}: {msg}", path.display())),
        other => other,
    })
}

pub fn save_pgm(image: &GrayImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_pgm(image)).map_err(|e| Error::io(path, e))
}

/// Every `*.pgm` file in `dir`, in lexicographic path order.
pub fn load_pgm_dir(dir: impl AsRef<Path>) -> Result<Vec<(PathBuf, GrayImage)>> {
    let dir = dir.as_ref();
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .is_some_and(|x| x.eq_ignore_ascii_case("pgm"))
        })
        .collect();
    paths.sort();
    paths
        .into_iter()
        .map(|p| load_pgm(&p).map(|img| (p, img)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decodes_direct_scaling() {
        let mut bytes = b"P5\n2 2\n255\n".to_vec();
        bytes.extend([0u8, 255, 128, 64]);
        let img = decode_pgm(&bytes).unwrap();
        assert_eq!(img.pixels(), &[0.0, 1.0, 128.0 / 255.0, 64.0 / 255.0]);
    }

    #[test]
    fn header_comments_and_small_maxval() {
        let mut bytes = b"P5 # made by hand\n3 1 # dims\n15\n".to_vec();
        bytes.extend([0u8, 15, 5]);
        let img = decode_pgm(&bytes).unwrap();
        assert_eq!(img.pixels(), &[0.0, 1.0, 5.0 / 15.0]);
    }

    #[test]
    fn rejects_ascii_pgm() {
        let err = decode_pgm(b"P2\n2 1\n255\n0 255\n").unwrap_err();
        assert!(matches!(err, Error::Format(_)));
    }

    #[test]
    fn rejects_truncation_and_deep_maxval() {
        let mut short = b"P5\n4 4\n255\n".to_vec();
        short.extend([1u8; 10]);
        assert!(matches!(decode_pgm(&short), Err(Error::Format(_))));
        let mut deep = b"P5\n1 1\n65535\n".to_vec();
        deep.extend([0u8, 0]);
        assert!(matches!(decode_pgm(&deep), Err(Error::Format(_))));
        assert!(matches!(decode_pgm(b"P5\n2"), Err(Error::Format(_))));
    }

    #[test]
    fn encode_decode_is_exact_on_byte_grid() {
        let pixels: Vec<f32> = (0..=255u8).map(|v| v as f32 / 255.0).collect();
        let img = GrayImage::new(16, 16, pixels).unwrap();
        assert_eq!(decode_pgm(&encode_pgm(&img)).unwrap(), img);
    }
}
