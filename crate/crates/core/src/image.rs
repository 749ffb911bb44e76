//! Grayscale raster type and Netpbm (PGM/PPM) reading and writing.
//!
//! Coordinates: pixel `(c, r)` covers the unit square `[c, c+1) x [r, r+1)`
//! so its center sits at `(c + 0.5, r + 0.5)`. Every sub-pixel position in
//! the crate is expressed in this continuous frame.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

/// Row-major grid of real intensities, nominally in `[0, 1]`.
///
/// Values outside `[0, 1]` are allowed: additive noise is not clipped.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid("image dimensions must be positive"));
        }
        if data.len() != width * height {
            return Err(Error::invalid(format!(
                "data length {} does not match {}x{}",
                data.len(),
                width,
                height
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("image contains non-finite values"));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for r in 0..height {
            for c in 0..width {
                data.push(f(c, r));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, c: usize, r: usize) -> f64 {
        self.data[r * self.width + c]
    }

    /// Pixelwise `a * self + b * other`.
    pub fn combine(&self, a: f64, other: &GrayImage, b: f64) -> Result<GrayImage> {
        if self.width != other.width || self.height != other.height {
            return Err(Error::invalid("image dimensions differ"));
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(x, y)| a * x + b * y)
            .collect();
        Ok(GrayImage {
            width: self.width,
            height: self.height,
            data,
        })
    }

    /// Quantize to 8 bits, clipping to `[0, 1]`.
    pub fn to_u8(&self) -> Vec<u8> {
        self.data
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect()
    }

    pub fn read_pgm(path: impl AsRef<Path>) -> Result<GrayImage> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        decode_pgm(&bytes).map_err(|reason| Error::Format {
            path: path.to_path_buf(),
            reason,
        })
    }

    /// Writes a binary (P5) 8-bit PGM.
    pub fn write_pgm(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, encode_pgm(self)).map_err(|e| Error::io(path, e))
    }
}

/// Encodes as binary P5 with maxval 255.
pub fn encode_pgm(img: &GrayImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend(img.to_u8());
    out
}

/// Decodes P2 (ASCII) or P5 (binary) PGM. Intensities are divided by maxval,
/// so an 8-bit file maps to `v / 255`.
pub fn decode_pgm(bytes: &[u8]) -> std::result::Result<GrayImage, String> {
    let mut cursor = HeaderCursor { bytes, pos: 0 };
    let magic = cursor.token().ok_or("missing magic number")?;
    let binary = match magic.as_str() {
        "P5" => true,
        "P2" => false,
        other => return Err(format!("unsupported magic {other:?}, expected P2 or P5")),
    };
    let width = cursor.number()?;
    let height = cursor.number()?;
    let maxval = cursor.number()?;
    if width == 0 || height == 0 {
        return Err("zero image dimension".into());
    }
    if maxval == 0 || maxval > 65535 {
        return Err(format!("invalid maxval {maxval}"));
    }
    let n = width * height;
    let scale = 1.0 / maxval as f64;
    let data: Vec<f64> = if binary {
        // exactly one whitespace byte separates the header from the raster
        let start = cursor.pos + 1;
        let sample_bytes = if maxval < 256 { 1 } else { 2 };
        let raster = bytes
            .get(start..start + n * sample_bytes)
            .ok_or("truncated raster")?;
        if sample_bytes == 1 {
            raster.iter().map(|&b| b as f64 * scale).collect()
        } else {
            raster
                .chunks_exact(2)
                .map(|p| u16::from_be_bytes([p[0], p[1]]) as f64 * scale)
                .collect()
        }
    } else {
        let mut v = Vec::with_capacity(n);
        for _ in 0..n {
            let s = cursor.number()?;
            if s > maxval {
                return Err(format!("sample {s} exceeds maxval {maxval}"));
            }
            v.push(s as f64 * scale);
        }
        v
    };
    GrayImage::new(width, height, data).map_err(|e| e.to_string())
}

struct HeaderCursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl HeaderCursor<'_> {
    fn token(&mut self) -> Option<String> {
        loop {
            while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
                self.pos += 1;
            }
            if self.bytes.get(self.pos) == Some(&b'#') {
                while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                    self.pos += 1;
                }
                continue;
            }
            break;
        }
        let start = self.pos;
        while self.pos < self.bytes.len() && !self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        (self.pos > start).then(|| String::from_utf8_lossy(&self.bytes[start..self.pos]).into())
    }

    fn number(&mut self) -> std::result::Result<usize, String> {
        let tok = self.token().ok_or("unexpected end of header")?;
        tok.parse()
            .map_err(|_| format!("expected integer, found {tok:?}"))
    }
}

/// 8-bit RGB raster used for overlays.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<[u8; 3]>,
}

impl RgbImage {
    pub fn from_gray(img: &GrayImage) -> Self {
        let data = img.to_u8().into_iter().map(|v| [v, v, v]).collect();
        Self {
            width: img.width,
            height: img.height,
            data,
        }
    }

    pub fn get(&self, c: usize, r: usize) -> [u8; 3] {
        self.data[r * self.width + c]
    }

    pub fn encode_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        for px in &self.data {
            out.extend_from_slice(px);
        }
        out
    }

    pub fn write_ppm(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&self.encode_ppm())
            .map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn p2_and_p5_decode_to_same_values() {
        let p2 = b"P2\n# comment\n3 2\n255\n0 128 255\n10 20 30\n";
        let a = decode_pgm(p2).unwrap();
        assert_eq!(a.width(), 3);
        assert_eq!(a.height(), 2);
        assert_eq!(a.get(2, 0), 1.0);
        assert_eq!(a.get(1, 0), 128.0 / 255.0);

        let b = decode_pgm(&encode_pgm(&a)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        assert!(decode_pgm(b"P6\n1 1\n255\n\0\0\0").is_err());
        assert!(decode_pgm(b"P5\n4 4\n255\n\0\0").is_err());
    }

    #[test]
    fn constructor_checks_length_and_finiteness() {
        assert!(GrayImage::new(2, 2, vec![0.0; 3]).is_err());
        assert!(GrayImage::new(1, 1, vec![f64::NAN]).is_err());
    }

    #[test]
    fn ppm_header_and_size() {
        let rgb = RgbImage::from_gray(&GrayImage::filled(4, 3, 0.5));
        let bytes = rgb.encode_ppm();
        assert!(bytes.starts_with(b"P6\n4 3\n255\n"));
        assert_eq!(bytes.len(), b"P6\n4 3\n255\n".len() + 4 * 3 * 3);
    }
}
