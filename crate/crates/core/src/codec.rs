//! Endian-explicit binary reading and writing shared by the file formats.

use std::marker::PhantomData;
use std::path::Path;

use byteorder::ByteOrder;

use crate::error::{Error, Result};

pub struct Reader<'a, B> {
    buf: &'a [u8],
    pos: usize,
    context: &'static str,
    _order: PhantomData<B>,
}

impl<'a, B: ByteOrder> Reader<'a, B> {
    pub fn new(buf: &'a [u8], context: &'static str) -> Self {
        Self {
            buf,
            pos: 0,
            context,
            _order: PhantomData,
        }
    }

    pub fn bytes(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).ok_or(Error::Truncated(self.context))?;
        let out = self.buf.get(self.pos..end).ok_or(Error::Truncated(self.context))?;
        self.pos = end;
        Ok(out)
    }

    pub fn magic(&mut self, expected: [u8; 4]) -> Result<()> {
        let found: [u8; 4] = self.bytes(4)?.try_into().expect("four bytes");
        if found != expected {
            return Err(Error::BadMagic {
                context: self.context,
                expected,
                found,
            });
        }
        Ok(())
    }

    pub fn version(&mut self, expected: u16) -> Result<()> {
        let found = self.u16()?;
        if found != expected {
            return Err(Error::Version {
                context: self.context,
                expected,
                found,
            });
        }
        Ok(())
    }

    pub fn u8(&mut self) -> Result<u8> {
        Ok(self.bytes(1)?[0])
    }

    pub fn u16(&mut self) -> Result<u16> {
        Ok(B::read_u16(self.bytes(2)?))
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(B::read_u32(self.bytes(4)?))
    }

    pub fn f32(&mut self) -> Result<f32> {
        Ok(B::read_f32(self.bytes(4)?))
    }

    pub fn f64(&mut self) -> Result<f64> {
        Ok(B::read_f64(self.bytes(8)?))
    }

    pub fn f32_vec(&mut self, n: usize) -> Result<Vec<f32>> {
        let raw = self.bytes(n.checked_mul(4).ok_or(Error::Truncated(self.context))?)?;
        let mut out = vec![0.0; n];
        B::read_f32_into(raw, &mut out);
        Ok(out)
    }

    pub fn f64_vec(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.bytes(n.checked_mul(8).ok_or(Error::Truncated(self.context))?)?;
        let mut out = vec![0.0; n];
        B::read_f64_into(raw, &mut out);
        Ok(out)
    }

    pub fn u16_vec(&mut self, n: usize) -> Result<Vec<u16>> {
        let raw = self.bytes(n.checked_mul(2).ok_or(Error::Truncated(self.context))?)?;
        let mut out = vec![0; n];
        B::read_u16_into(raw, &mut out);
        Ok(out)
    }

    /// Error unless every byte was consumed.
    pub fn finish(self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::Data(format!(
                "{} file has {} trailing bytes",
                self.context,
                self.buf.len() - self.pos
            )));
        }
        Ok(())
    }
}

pub struct Writer<B> {
    buf: Vec<u8>,
    _order: PhantomData<B>,
}

impl<B: ByteOrder> Default for Writer<B> {
    fn default() -> Self {
        Self::new()
    }
}

impl<B: ByteOrder> Writer<B> {
    pub fn new() -> Self {
        Self {
            buf: Vec::new(),
            _order: PhantomData,
        }
    }

    pub fn bytes(&mut self, b: &[u8]) {
        self.buf.extend_from_slice(b);
    }

    pub fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    pub fn u16(&mut self, v: u16) {
        let mut b = [0; 2];
        B::write_u16(&mut b, v);
        self.bytes(&b);
    }

    pub fn u32(&mut self, v: u32) {
        let mut b = [0; 4];
        B::write_u32(&mut b, v);
        self.bytes(&b);
    }

    pub fn f32(&mut self, v: f32) {
        let mut b = [0; 4];
        B::write_f32(&mut b, v);
        self.bytes(&b);
    }

    pub fn f64(&mut self, v: f64) {
        let mut b = [0; 8];
        B::write_f64(&mut b, v);
        self.bytes(&b);
    }

    pub fn f32_slice(&mut self, v: &[f32]) {
        let start = self.buf.len();
        self.buf.resize(start + 4 * v.len(), 0);
        B::write_f32_into(v, &mut self.buf[start..]);
    }

    pub fn f64_slice(&mut self, v: &[f64]) {
        let start = self.buf.len();
        self.buf.resize(start + 8 * v.len(), 0);
        B::write_f64_into(v, &mut self.buf[start..]);
    }

    pub fn u16_slice(&mut self, v: &[u16]) {
        let start = self.buf.len();
        self.buf.resize(start + 2 * v.len(), 0);
        B::write_u16_into(v, &mut self.buf[start..]);
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.buf
    }
}

pub fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use byteorder::{BigEndian, LittleEndian};

    use super::*;

    #[test]
    fn round_trip_and_truncation() {
        let mut w = Writer::<LittleEndian>::new();
        w.bytes(b"TEST");
        w.u16(7);
        w.f32_slice(&[1.5, -2.0]);
        let bytes = w.into_bytes();
        assert_eq!(&bytes[4..6], &[7, 0]);
        let mut r = Reader::<LittleEndian>::new(&bytes, "test");
        r.magic(*b"TEST").unwrap();
        r.version(7).unwrap();
        assert_eq!(r.f32_vec(2).unwrap(), vec![1.5, -2.0]);
        r.finish().unwrap();
        let mut r = Reader::<LittleEndian>::new(&bytes[..9], "test");
        r.magic(*b"TEST").unwrap();
        r.u16().unwrap();
        assert!(matches!(r.f32(), Err(Error::Truncated("test"))));
    }

    #[test]
    fn big_endian_reads_swapped_fields() {
        let mut w = Writer::<BigEndian>::new();
        w.u32(0x0102_0304);
        w.f64(-0.25);
        let b = w.into_bytes();
        assert_eq!(&b[..4], &[1, 2, 3, 4]);
        let mut r = Reader::<BigEndian>::new(&b, "t");
        assert_eq!(r.u32().unwrap(), 0x0102_0304);
        assert_eq!(r.f64().unwrap(), -0.25);
    }
}
