//! Bit-level reading of RBSP data: the MSB-first reader, Exp-Golomb `ue(v)`
//! decoding and emulation-prevention removal.

use super::ExtractError;

/// MSB-first bit reader over a byte slice.
#[derive(Debug, Clone)]
pub struct BitReader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> BitReader<'a> {
    pub fn new(data: &'a [u8]) -> Self {
        Self { data, pos: 0 }
    }

    /// Bits consumed so far.
    pub fn position(&self) -> usize {
        self.pos
    }

    pub fn remaining(&self) -> usize {
        self.data.len() * 8 - self.pos
    }

    pub fn read_bit(&mut self) -> Result<bool, ExtractError> {
        let byte = *self
            .data
            .get(self.pos / 8)
            .ok_or(ExtractError::MalformedCode("bits exhausted"))?;
        let bit = (byte >> (7 - (self.pos % 8))) & 1;
        self.pos += 1;
        Ok(bit == 1)
    }

    /// Reads `n` bits (`n <= 64`) as an unsigned big-endian value.
    pub fn read_bits(&mut self, n: u32) -> Result<u64, ExtractError> {
        debug_assert!(n <= 64);
        if (n as usize) > self.remaining() {
            return Err(ExtractError::MalformedCode("bits exhausted"));
        }
        let mut v = 0u64;
        for _ in 0..n {
            v = (v << 1) | u64::from(self.read_bit()?);
        }
        Ok(v)
    }

    /// Unsigned Exp-Golomb `ue(v)`: `2^z - 1 + read(z)` where `z` is the
    /// number of leading zero bits. At most 32 leading zeros are accepted.
    pub fn read_ue(&mut self) -> Result<u64, ExtractError> {
        let mut zeros = 0u32;
        while !self.read_bit()? {
            zeros += 1;
            if zeros > 32 {
                return Err(ExtractError::MalformedCode("more than 32 leading zeros"));
            }
        }
        let suffix = self.read_bits(zeros)?;
        Ok((1u64 << zeros) - 1 + suffix)
    }
}

/// Removes emulation-prevention bytes: every `00 00 03` becomes `00 00`.
///
/// The `03` is dropped whatever follows it, so a malformed tail such as
/// `00 00 03 04` passes through as `00 00 04`.
pub fn unescape_rbsp(payload: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(payload.len());
    let mut zeros = 0usize;
    for &b in payload {
        if zeros >= 2 && b == 0x03 {
            zeros = 0;
            continue;
        }
        if b == 0 {
            zeros += 1;
        } else {
            zeros = 0;
        }
        out.push(b);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ue(bytes: &[u8]) -> u64 {
        BitReader::new(bytes).read_ue().unwrap()
    }

    #[test]
    fn ue_codewords() {
        // "1", "011", "00111" padded with trailing ones
        assert_eq!(ue(&[0b1000_0000]), 0);
        assert_eq!(ue(&[0b0110_0000]), 2);
        assert_eq!(ue(&[0b0011_1000]), 6);
        assert_eq!(ue(&[0b0100_0000]), 1);
    }

    #[test]
    fn ue_advances_2z_plus_1() {
        let mut r = BitReader::new(&[0b0011_1000]);
        r.read_ue().unwrap();
        assert_eq!(r.position(), 5);
    }

    #[test]
    fn ue_too_many_zeros() {
        let data = [0u8; 8];
        assert!(matches!(
            BitReader::new(&data).read_ue(),
            Err(ExtractError::MalformedCode(_))
        ));
    }

    #[test]
    fn ue_thirty_two_zeros_is_max() {
        // 32 zeros, a one, then 32 suffix bits of zero: 2^32 - 1
        let data = [0, 0, 0, 0, 0x80, 0, 0, 0, 0];
        assert_eq!(BitReader::new(&data).read_ue().unwrap(), (1u64 << 32) - 1);
    }

    #[test]
    fn ue_exhausted() {
        assert!(BitReader::new(&[0b0000_0001]).read_ue().is_err());
        assert!(BitReader::new(&[]).read_ue().is_err());
    }

    #[test]
    fn unescape_examples() {
        assert_eq!(unescape_rbsp(&[0, 0, 3, 1]), vec![0, 0, 1]);
        assert_eq!(unescape_rbsp(&[0xAB, 0xCD]), vec![0xAB, 0xCD]);
        assert_eq!(unescape_rbsp(&[0, 0, 3, 0, 0, 3]), vec![0, 0, 0, 0]);
        assert_eq!(unescape_rbsp(&[]), Vec::<u8>::new());
        // a 03 not preceded by two zeros stays
        assert_eq!(unescape_rbsp(&[0, 3, 0, 0]), vec![0, 3, 0, 0]);
    }
}
