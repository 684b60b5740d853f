//! Byte-oriented range coder with carry propagation.
//!
//! The encoder keeps a 64-bit `low` (bit 32 is the carry) and a 32-bit
//! `range`, renormalising one byte at a time whenever `range < 2^24`. A symbol
//! with counts `[c_lo, c_hi)` narrows the interval to
//! `[⌊R·c_lo/2^16⌋, ⌊R·c_hi/2^16⌋)`, computed exactly in 64 bits, so no range is
//! lost to truncating `R/2^16` first. The leading output byte is always zero and
//! is dropped; the flush writes four bytes. The decoder therefore has read
//! exactly `4 + renormalisations` bytes after any symbol, which the encoder
//! reports through [`RangeEncoder::decoder_position`].

use super::gaussian::{QuantizedCdf, PRECISION_BITS};
use crate::{Error, Result};

const TOP: u32 = 1 << 24;

#[derive(Debug, Clone)]
pub struct RangeEncoder {
    low: u64,
    range: u32,
    cache: u8,
    pending: u64,
    skip_first: bool,
    renorms: u64,
    out: Vec<u8>,
}

impl Default for RangeEncoder {
    fn default() -> Self {
        Self::new()
    }
}

#[inline]
fn scaled(range: u32, c: u32) -> u64 {
    (range as u64 * c as u64) >> PRECISION_BITS
}

impl RangeEncoder {
    pub fn new() -> Self {
        Self {
            low: 0,
            range: u32::MAX,
            cache: 0,
            pending: 1,
            skip_first: true,
            renorms: 0,
            out: Vec::new(),
        }
    }

    fn emit(&mut self, b: u8) {
        if self.skip_first {
            self.skip_first = false;
        } else {
            self.out.push(b);
        }
    }

    fn shift_low(&mut self) {
        if self.low < 0xFF00_0000 || self.low >= 1 << 32 {
            let carry = (self.low >> 32) as u8;
            let mut b = self.cache;
            while self.pending > 0 {
                self.emit(b.wrapping_add(carry));
                b = 0xFF;
                self.pending -= 1;
            }
            self.cache = (self.low >> 24) as u8;
        }
        self.pending += 1;
        self.low = (self.low & 0x00FF_FFFF) << 8;
    }

    /// Codes symbol index `i` of `cdf`.
    pub fn encode(&mut self, cdf: &QuantizedCdf, i: usize) -> Result<()> {
        if i >= cdf.size() {
            return Err(Error::SymbolRange {
                symbol: i as i32,
                bound: cdf.size() as i32 - 1,
            });
        }
        let cum = cdf.cum();
        let lo = scaled(self.range, cum[i]);
        let hi = scaled(self.range, cum[i + 1]);
        self.low += lo;
        self.range = (hi - lo) as u32;
        while self.range < TOP {
            self.range <<= 8;
            self.renorms += 1;
            self.shift_low();
        }
        Ok(())
    }

    /// Bytes a decoder will have consumed after the symbols coded so far.
    pub fn decoder_position(&self) -> usize {
        4 + self.renorms as usize
    }

    pub fn finish(mut self) -> Vec<u8> {
        for _ in 0..5 {
            self.shift_low();
        }
        debug_assert_eq!(self.out.len(), self.decoder_position());
        self.out
    }
}

#[derive(Debug, Clone)]
pub struct RangeDecoder<'a> {
    data: &'a [u8],
    pos: usize,
    code: u32,
    range: u32,
}

impl<'a> RangeDecoder<'a> {
    pub fn new(data: &'a [u8]) -> Result<Self> {
        let mut d = Self {
            data,
            pos: 0,
            code: 0,
            range: u32::MAX,
        };
        for _ in 0..4 {
            d.code = (d.code << 8) | d.next_byte()? as u32;
        }
        Ok(d)
    }

    fn next_byte(&mut self) -> Result<u8> {
        let b = *self.data.get(self.pos).ok_or(Error::Truncated("range coded stream"))?;
        self.pos += 1;
        Ok(b)
    }

    /// Bytes consumed so far.
    pub fn position(&self) -> usize {
        self.pos
    }

    pub fn decode(&mut self, cdf: &QuantizedCdf) -> Result<usize> {
        if self.code >= self.range {
            return Err(Error::Format("range decoder out of sync".into()));
        }
        // Largest i with ⌊R·cum[i]/2^16⌋ ≤ code.
        let target = ((((self.code as u64) + 1) << PRECISION_BITS) - 1) / self.range as u64;
        let i = cdf.lookup(target as u32);
        let cum = cdf.cum();
        let lo = scaled(self.range, cum[i]);
        let hi = scaled(self.range, cum[i + 1]);
        self.code -= lo as u32;
        self.range = (hi - lo) as u32;
        while self.range < TOP {
            self.code = (self.code << 8) | self.next_byte()? as u32;
            self.range <<= 8;
        }
        Ok(i)
    }
}

/// Codes a sequence of symbol indices, each with its own table.
pub fn encode_indices(indices: &[usize], cdfs: &[QuantizedCdf]) -> Result<Vec<u8>> {
    if indices.len() != cdfs.len() {
        return Err(Error::Shape(format!("{} symbols but {} tables", indices.len(), cdfs.len())));
    }
    let mut enc = RangeEncoder::new();
    for (&i, cdf) in indices.iter().zip(cdfs) {
        enc.encode(cdf, i)?;
    }
    Ok(enc.finish())
}

/// Inverse of [`encode_indices`]: one index per table.
pub fn decode_indices(bytes: &[u8], cdfs: &[QuantizedCdf]) -> Result<Vec<usize>> {
    let mut dec = RangeDecoder::new(bytes)?;
    cdfs.iter().map(|c| dec.decode(c)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_stream_is_flush_only() {
        let bytes = encode_indices(&[], &[]).unwrap();
        assert_eq!(bytes.len(), 4);
        assert!(decode_indices(&bytes, &[]).unwrap().is_empty());
    }

    #[test]
    fn truncated_stream_errors() {
        let cdf = QuantizedCdf::from_cum(vec![0, 1, 65536]).unwrap();
        let idx = vec![0; 20];
        let cdfs = vec![cdf; 20];
        let bytes = encode_indices(&idx, &cdfs).unwrap();
        assert!(bytes.len() > 20);
        assert!(matches!(decode_indices(&bytes[..10], &cdfs), Err(Error::Truncated(_))));
        assert!(decode_indices(&bytes[..3], &cdfs[..0]).is_err());
    }

    #[test]
    fn carry_propagates_through_ff_runs() {
        // Symbols at the top of the interval push low upward and force carries.
        let cdf = QuantizedCdf::from_cum(vec![0, 1, 65535, 65536]).unwrap();
        let mut idx = Vec::new();
        for k in 0..4000 {
            idx.push(if k % 7 == 0 { 1 } else { 2 });
        }
        let cdfs = vec![cdf; idx.len()];
        let bytes = encode_indices(&idx, &cdfs).unwrap();
        assert_eq!(decode_indices(&bytes, &cdfs).unwrap(), idx);
    }
}
