//! 8-bit binary PGM (`P5`) and PPM (`P6`) images for visual dumps.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Pnm {
    pub width: usize,
    pub height: usize,
    /// 1 for PGM, 3 for PPM.
    pub channels: usize,
    pub maxval: u16,
    /// Interleaved samples, row-major.
    pub data: Vec<u8>,
}

impl Pnm {
    pub fn encode(&self) -> Vec<u8> {
        let magic = if self.channels == 3 { "P6" } else { "P5" };
        let mut out = format!("{magic}\n{} {}\n{}\n", self.width, self.height, self.maxval).into_bytes();
        out.extend_from_slice(&self.data);
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut pos = 0;
        let magic = token(bytes, &mut pos)?;
        let channels = match magic {
            b"P5" => 1,
            b"P6" => 3,
            _ => return Err(Error::Format("not a binary PGM/PPM file".into())),
        };
        let width = number(bytes, &mut pos, "width")?;
        let height = number(bytes, &mut pos, "height")?;
        let maxval = number(bytes, &mut pos, "maxval")?;
        if !(1..=255).contains(&maxval) {
            return Err(Error::Format(format!("maxval {maxval} unsupported, need 1..=255")));
        }
        if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
            return Err(Error::Format("missing whitespace before raster".into()));
        }
        pos += 1;
        let len = width
            .checked_mul(height)
            .and_then(|n| n.checked_mul(channels))
            .ok_or_else(|| Error::Format("image dimensions overflow".into()))?;
        let raster = bytes
            .get(pos..)
            .filter(|r| r.len() == len)
            .ok_or_else(|| Error::Format(format!("raster must be exactly {len} bytes")))?;
        if raster.iter().any(|&b| u16::from(b) > maxval as u16) {
            return Err(Error::Format("sample exceeds maxval".into()));
        }
        Ok(Self { width, height, channels, maxval: maxval as u16, data: raster.to_vec() })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        fs::write(path, self.encode()).map_err(|e| Error::io(path, e))
    }
}

fn skip_space_and_comments(bytes: &[u8], pos: &mut usize) {
    while let Some(&b) = bytes.get(*pos) {
        if b.is_ascii_whitespace() {
            *pos += 1;
        } else if b == b'#' {
            while bytes.get(*pos).is_some_and(|&c| c != b'\n') {
                *pos += 1;
            }
        } else {
            break;
        }
    }
}

fn token<'a>(bytes: &'a [u8], pos: &mut usize) -> Result<&'a [u8]> {
    skip_space_and_comments(bytes, pos);
    let start = *pos;
    while bytes.get(*pos).is_some_and(|b| !b.is_ascii_whitespace() && *b != b'#') {
        *pos += 1;
    }
    if start == *pos {
        return Err(Error::Format("unexpected end of header".into()));
    }
    Ok(&bytes[start..*pos])
}

fn number(bytes: &[u8], pos: &mut usize, what: &str) -> Result<usize> {
    let tok = token(bytes, pos)?;
    if tok.len() > 9 || !tok.iter().all(u8::is_ascii_digit) {
        return Err(Error::Format(format!("bad {what} in header")));
    }
    Ok(std::str::from_utf8(tok).unwrap().parse().unwrap())
}

fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// RGB image from a `3×H×W` planar grid of values in `[0, 1]`.
pub fn rgb_from_planes(planes: &[f64], height: usize, width: usize) -> Pnm {
    let hw = height * width;
    let mut data = Vec::with_capacity(3 * hw);
    for i in 0..hw {
        for c in 0..3 {
            data.push(quantize(planes[c * hw + i]));
        }
    }
    Pnm { width, height, channels: 3, maxval: 255, data }
}

/// Gray image, min-max normalized over the pixels where `valid` holds
/// (all pixels when `valid` is `None`). Invalid pixels are written as 0.
pub fn gray_normalized(values: &[f64], height: usize, width: usize, valid: Option<&[bool]>) -> Pnm {
    let ok = |i: usize| valid.is_none_or(|m| m[i]);
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for (i, &v) in values.iter().enumerate() {
        if ok(i) {
            lo = lo.min(v);
            hi = hi.max(v);
        }
    }
    let span = if hi > lo { hi - lo } else { 1.0 };
    let data = values.iter().enumerate().map(|(i, &v)| if ok(i) { quantize((v - lo) / span) } else { 0 }).collect();
    Pnm { width, height, channels: 1, maxval: 255, data }
}

/// Fixed color for a class id; 0 is black.
pub fn class_color(id: usize) -> [u8; 3] {
    const PALETTE: [[u8; 3]; 12] = [
        [0, 0, 0],
        [230, 25, 75],
        [60, 180, 75],
        [255, 225, 25],
        [0, 130, 200],
        [245, 130, 48],
        [145, 30, 180],
        [70, 240, 240],
        [240, 50, 230],
        [210, 245, 60],
        [250, 190, 212],
        [0, 128, 128],
    ];
    PALETTE[id % PALETTE.len()]
}

pub fn labels_indexed_color(labels: &[usize], height: usize, width: usize) -> Pnm {
    let data = labels.iter().flat_map(|&l| class_color(l)).collect();
    Pnm { width, height, channels: 3, maxval: 255, data }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_with_comments() {
        let bytes = b"P5 # gray\n2 # w\n1\n255\n\x00\xff";
        let p = Pnm::decode(bytes).unwrap();
        assert_eq!((p.width, p.height, p.channels), (2, 1, 1));
        assert_eq!(p.data, vec![0, 255]);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(Pnm::decode(b"P3\n1 1\n255\n0 0 0").is_err());
        assert!(Pnm::decode(b"P5\n2 2\n255\n\x00").is_err());
        assert!(Pnm::decode(b"P5\n1 1\n0\n\x00").is_err());
        assert!(Pnm::decode(b"P5\n1 1\n10\n\x0b").is_err());
        assert!(Pnm::decode(b"P5\n99999999999 1\n255\n").is_err());
        assert!(Pnm::decode(b"").is_err());
    }

    #[test]
    fn gray_round_trip_within_quantization() {
        let vals: Vec<f64> = (0..50).map(|i| 2.0 + (i as f64 * 0.37).sin() * 5.0).collect();
        let img = gray_normalized(&vals, 5, 10, None);
        let back = Pnm::decode(&img.encode()).unwrap();
        let (lo, hi) = vals.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        for (v, &q) in vals.iter().zip(&back.data) {
            let norm = (v - lo) / (hi - lo);
            assert!((norm - q as f64 / 255.0).abs() <= 1.0 / 255.0);
        }
    }

    #[test]
    fn rgb_round_trip() {
        let planes: Vec<f64> = (0..3 * 6).map(|i| i as f64 / 17.0).collect();
        let img = rgb_from_planes(&planes, 2, 3);
        let back = Pnm::decode(&img.encode()).unwrap();
        assert_eq!(back, img);
        for i in 0..6 {
            for c in 0..3 {
                assert!((back.data[i * 3 + c] as f64 / 255.0 - planes[c * 6 + i]).abs() <= 1.0 / 255.0);
            }
        }
    }
}
