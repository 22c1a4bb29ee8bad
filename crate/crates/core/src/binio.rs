//! Little-endian primitives for the self-describing binary artifacts.

use std::io::{Read, Write};

use crate::error::{Error, Result};

pub(crate) struct Writer<W: Write> {
    inner: W,
}

impl<W: Write> Writer<W> {
    pub fn new(inner: W) -> Self {
        Self { inner }
    }

    pub fn bytes(&mut self, b: &[u8]) -> Result<()> {
        self.inner.write_all(b)?;
        Ok(())
    }

    pub fn u32(&mut self, v: u32) -> Result<()> {
        self.bytes(&v.to_le_bytes())
    }

    pub fn u64(&mut self, v: u64) -> Result<()> {
        self.bytes(&v.to_le_bytes())
    }

    pub fn f64(&mut self, v: f64) -> Result<()> {
        self.bytes(&v.to_le_bytes())
    }

    pub fn str(&mut self, s: &str) -> Result<()> {
        self.u32(s.len() as u32)?;
        self.bytes(s.as_bytes())
    }

    pub fn into_inner(self) -> W {
        self.inner
    }
}

pub(crate) struct Reader<R: Read> {
    inner: R,
}

impl<R: Read> Reader<R> {
    pub fn new(inner: R) -> Self {
        Self { inner }
    }

    pub fn exact<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut buf = [0u8; N];
        self.inner
            .read_exact(&mut buf)
            .map_err(|e| Error::Corrupt(format!("truncated file: {e}")))?;
        Ok(buf)
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.exact()?))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.exact()?))
    }

    pub fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.exact()?))
    }

    pub fn str(&mut self) -> Result<String> {
        let len = self.u32()? as usize;
        let mut buf = vec![0u8; len];
        self.inner
            .read_exact(&mut buf)
            .map_err(|e| Error::Corrupt(format!("truncated string: {e}")))?;
        String::from_utf8(buf).map_err(|_| Error::Corrupt("invalid UTF-8 string".into()))
    }

    pub fn magic(&mut self, expected: &[u8; 8]) -> Result<()> {
        let got: [u8; 8] = self.exact()?;
        if &got != expected {
            return Err(Error::Corrupt(format!(
                "bad magic {:?}, expected {:?}",
                String::from_utf8_lossy(&got),
                String::from_utf8_lossy(expected)
            )));
        }
        Ok(())
    }
}
