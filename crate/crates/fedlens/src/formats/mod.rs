//! Binary formats: parameter vectors (FPNV), feature dumps (FPLF), and IDX
//! image/label files.

mod fplf;
mod fpnv;
mod idx;

pub use fplf::{read_fplf, write_fplf, FeatureDump, FeatureDumpHeader, FPLF_VERSION};
pub use fpnv::{decode_params, encode_params, read_params, write_params, FPNV_VERSION};
pub use idx::{load_idx, parse_idx, IdxArray};

/// Cursor over a byte slice that reports the offset of the first short read.
pub(crate) struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

/// Offset and message of a decoding failure.
pub(crate) type DecodeError = (usize, String);

impl<'a> Reader<'a> {
    pub fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    pub fn pos(&self) -> usize {
        self.pos
    }

    pub fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    pub fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], DecodeError> {
        if self.remaining() < n {
            return Err((self.pos, format!("truncated {what}: need {n} bytes, {} left", self.remaining())));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    pub fn array<const N: usize>(&mut self, what: &str) -> Result<[u8; N], DecodeError> {
        Ok(self.take(N, what)?.try_into().expect("length checked"))
    }

    pub fn magic(&mut self, want: &[u8; 4]) -> Result<(), DecodeError> {
        let got = self.array::<4>("magic")?;
        if &got != want {
            return Err((0, format!("bad magic {got:02x?}, expected {:?}", String::from_utf8_lossy(want))));
        }
        Ok(())
    }

    pub fn u8(&mut self, what: &str) -> Result<u8, DecodeError> {
        Ok(self.array::<1>(what)?[0])
    }

    pub fn u16_le(&mut self, what: &str) -> Result<u16, DecodeError> {
        Ok(u16::from_le_bytes(self.array(what)?))
    }

    pub fn u32_le(&mut self, what: &str) -> Result<u32, DecodeError> {
        Ok(u32::from_le_bytes(self.array(what)?))
    }

    pub fn u32_be(&mut self, what: &str) -> Result<u32, DecodeError> {
        Ok(u32::from_be_bytes(self.array(what)?))
    }

    pub fn finish(&self, what: &str) -> Result<(), DecodeError> {
        if self.remaining() != 0 {
            return Err((self.pos, format!("{} trailing bytes after {what}", self.remaining())));
        }
        Ok(())
    }
}
