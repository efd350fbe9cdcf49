//! Binary 8-bit PGM (P5) images. Rasters are written row by row, top to
//! bottom, so the file shows the fan as displayed.

use std::path::Path;

use super::image::raster_index;
use crate::codec;
use crate::error::{Error, Result};

/// Grayscale raster with column-major samples (see [`raster_index`]).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Gray8 {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl Gray8 {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.reserve(self.data.len());
        for y in 0..self.height {
            for x in 0..self.width {
                out.push(self.data[raster_index(self.height, x, y)]);
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut pos = 0;
        let mut fields = [0usize; 3];
        if bytes.get(..2) != Some(b"P5") {
            return Err(Error::Data("not a binary PGM (P5) file".into()));
        }
        pos += 2;
        for f in &mut fields {
            // Skip whitespace and comments.
            loop {
                match bytes.get(pos) {
                    Some(b) if b.is_ascii_whitespace() => pos += 1,
                    Some(b'#') => {
                        while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                            pos += 1;
                        }
                    }
                    Some(_) => break,
                    None => return Err(Error::Truncated("PGM")),
                }
            }
            let start = pos;
            while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
                pos += 1;
            }
            *f = std::str::from_utf8(&bytes[start..pos])
                .ok()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::Data("malformed PGM header".into()))?;
        }
        // Exactly one whitespace byte separates the header from the raster.
        if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
            return Err(Error::Data("malformed PGM header".into()));
        }
        pos += 1;
        let [width, height, maxval] = fields;
        if maxval != 255 {
            return Err(Error::Data(format!("PGM maxval {maxval} unsupported (need 255)")));
        }
        if width == 0 || height == 0 {
            return Err(Error::dim("empty PGM raster"));
        }
        let body = &bytes[pos..];
        if body.len() < width * height {
            return Err(Error::Truncated("PGM"));
        }
        if body.len() > width * height {
            return Err(Error::Data("PGM has trailing bytes".into()));
        }
        let mut data = vec![0; width * height];
        for y in 0..height {
            for x in 0..width {
                data[raster_index(height, x, y)] = body[y * width + x];
            }
        }
        Ok(Self { width, height, data })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        codec::write_file(path, &self.encode())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::decode(&codec::read_file(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_orientation() {
        let g = Gray8 {
            width: 3,
            height: 2,
            data: vec![1, 2, 3, 4, 5, 6],
        };
        let bytes = g.encode();
        assert!(bytes.starts_with(b"P5\n3 2\n255\n"));
        // Row 0 holds x = 0, 1, 2 at y = 0.
        assert_eq!(&bytes[bytes.len() - 6..], &[1, 3, 5, 2, 4, 6]);
        assert_eq!(Gray8::decode(&bytes).unwrap(), g);
    }

    #[test]
    fn header_comments_and_errors() {
        let bytes = b"P5 # c\n2 # w\n1\n255\n\x07\x09";
        let g = Gray8::decode(bytes).unwrap();
        assert_eq!((g.width, g.height, g.data.clone()), (2, 1, vec![7, 9]));
        assert!(matches!(Gray8::decode(b"P5\n2 1\n255\n\x07"), Err(Error::Truncated(_))));
        assert!(Gray8::decode(b"P2\n1 1\n255\n0").is_err());
        assert!(Gray8::decode(b"P5\n1 1\n65535\n\0\0").is_err());
    }
}
