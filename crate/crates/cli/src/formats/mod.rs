//! Binary file formats: network checkpoints (SCNN), traces (SCTR), input
//! records (SCIN), and the IDX image/label format.

pub mod idx;
pub mod scin;
pub mod scnn;
pub mod sctr;

use crate::error::{CliError, CliResult};

pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    what: &'static str,
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8], what: &'static str) -> Self {
        Reader { buf, pos: 0, what }
    }

    pub fn take(&mut self, n: usize) -> CliResult<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(CliError::data(format!(
                "{}: truncated at byte {}",
                self.what, self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn u8(&mut self) -> CliResult<u8> {
        Ok(self.take(1)?[0])
    }

    pub fn u16(&mut self) -> CliResult<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    pub fn u32(&mut self) -> CliResult<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn u64(&mut self) -> CliResult<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn f32(&mut self) -> CliResult<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn f64(&mut self) -> CliResult<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn magic(&mut self, expect: &[u8; 4]) -> CliResult<()> {
        let got = self.take(4)?;
        if got != expect {
            return Err(CliError::data(format!(
                "{}: bad magic {:?}, expected {:?}",
                self.what,
                got,
                std::str::from_utf8(expect).unwrap_or("?")
            )));
        }
        Ok(())
    }

    pub fn done(&self) -> CliResult<()> {
        if self.pos != self.buf.len() {
            return Err(CliError::data(format!(
                "{}: {} trailing bytes",
                self.what,
                self.buf.len() - self.pos
            )));
        }
        Ok(())
    }
}
