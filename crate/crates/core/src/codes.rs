//! Bit-packed binary code matrices (the per-point codes Z) and their
//! file format. One u64 word per point, LSB-first, L <= 64.

use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::DVector;

use crate::error::{Error, Result};

/// L x N matrix of bits in {0,1}, one machine word per point.
/// Bit `l` of point `n` is `(words[n] >> l) & 1`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BinaryCodeMatrix {
    bits: usize,
    words: Vec<u64>,
}

/// Mask with the low `l` bits set.
pub fn low_mask(l: usize) -> u64 {
    if l >= 64 {
        u64::MAX
    } else {
        (1u64 << l) - 1
    }
}

impl BinaryCodeMatrix {
    pub fn new(bits: usize, words: Vec<u64>) -> Result<Self> {
        if bits == 0 || bits > 64 {
            return Err(Error::BitsOutOfRange(bits));
        }
        let mask = low_mask(bits);
        if let Some(pos) = words.iter().position(|&w| w & !mask != 0) {
            return Err(Error::InvalidArgument(format!(
                "code {pos} has bits set above position {bits}"
            )));
        }
        Ok(Self { bits, words })
    }

    pub fn zeros(bits: usize, count: usize) -> Result<Self> {
        Self::new(bits, vec![0; count])
    }

    /// Packs an L x N array of bits given as bools, point-major.
    pub fn pack(bits: usize, cols: &[Vec<bool>]) -> Result<Self> {
        if bits == 0 || bits > 64 {
            return Err(Error::BitsOutOfRange(bits));
        }
        let mut words = Vec::with_capacity(cols.len());
        for col in cols {
            if col.len() != bits {
                return Err(Error::DimensionMismatch(format!(
                    "code column has {} bits, expected {bits}",
                    col.len()
                )));
            }
            let mut w = 0u64;
            for (l, &b) in col.iter().enumerate() {
                if b {
                    w |= 1 << l;
                }
            }
            words.push(w);
        }
        Ok(Self { bits, words })
    }

    pub fn unpack(&self) -> Vec<Vec<bool>> {
        self.words
            .iter()
            .map(|&w| (0..self.bits).map(|l| (w >> l) & 1 == 1).collect())
            .collect()
    }

    pub fn bits(&self) -> usize {
        self.bits
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn word(&self, n: usize) -> u64 {
        self.words[n]
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    pub fn set_word(&mut self, n: usize, code: u64) {
        debug_assert_eq!(code & !low_mask(self.bits), 0);
        self.words[n] = code;
    }

    pub fn bit(&self, n: usize, l: usize) -> bool {
        (self.words[n] >> l) & 1 == 1
    }

    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            bits: self.bits,
            words: indices.iter().map(|&i| self.words[i]).collect(),
        }
    }

    /// Code of point `n` as a real {0,1} vector.
    pub fn column_f64(&self, n: usize) -> DVector<f64> {
        code_to_vector(self.words[n], self.bits)
    }

    /// Per-bit labels as +-1 for classifier training.
    pub fn bit_labels(&self, l: usize) -> Vec<f64> {
        self.words
            .iter()
            .map(|&w| if (w >> l) & 1 == 1 { 1.0 } else { -1.0 })
            .collect()
    }

    /// Codes file: magic `BHC1`, L (u32 LE), N (u32 LE), then N * ceil(L/8)
    /// bytes, per-point LSB-first.
    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        let mut w = BufWriter::new(file);
        w.write_all(b"BHC1")?;
        w.write_all(&(self.bits as u32).to_le_bytes())?;
        w.write_all(&(self.len() as u32).to_le_bytes())?;
        let nbytes = self.bits.div_ceil(8);
        for &word in &self.words {
            w.write_all(&word.to_le_bytes()[..nbytes])?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        let mut reader = BufReader::new(file);
        let mut magic = [0u8; 4];
        reader.read_exact(&mut magic)?;
        if &magic != b"BHC1" {
            return Err(Error::MalformedHeader(format!(
                "bad magic {:?}, expected BHC1",
                magic
            )));
        }
        let mut u = [0u8; 4];
        reader.read_exact(&mut u)?;
        let bits = u32::from_le_bytes(u) as usize;
        reader.read_exact(&mut u)?;
        let n = u32::from_le_bytes(u) as usize;
        if bits == 0 || bits > 64 {
            return Err(Error::BitsOutOfRange(bits));
        }
        let nbytes = bits.div_ceil(8);
        let mut words = Vec::with_capacity(n);
        for _ in 0..n {
            let mut buf = [0u8; 8];
            reader.read_exact(&mut buf[..nbytes])?;
            words.push(u64::from_le_bytes(buf));
        }
        Self::new(bits, words)
    }
}

/// Hamming distance between two packed codes.
#[inline]
pub fn hamming(a: u64, b: u64) -> u32 {
    (a ^ b).count_ones()
}

/// Expands a packed code into a {0,1} real vector of length `bits`.
pub fn code_to_vector(code: u64, bits: usize) -> DVector<f64> {
    DVector::from_fn(bits, |l, _| ((code >> l) & 1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn pack_is_lsb_first() {
        let col = vec![true, false, true, true, false, false, false, false];
        let z = BinaryCodeMatrix::pack(8, &[col]).unwrap();
        assert_eq!(z.word(0), 0x0D);
    }

    #[test]
    fn all_zeros() {
        let z = BinaryCodeMatrix::zeros(16, 3).unwrap();
        assert_eq!(z.words(), &[0, 0, 0]);
    }

    #[test]
    fn rejects_bits_above_l() {
        assert!(BinaryCodeMatrix::new(4, vec![0x10]).is_err());
        assert!(BinaryCodeMatrix::new(0, vec![]).is_err());
        assert!(BinaryCodeMatrix::new(65, vec![]).is_err());
    }

    #[test]
    fn file_roundtrip() {
        let z = BinaryCodeMatrix::new(12, vec![0x0ABC, 0x0123, 0x0FFF]).unwrap();
        let mut p = std::env::temp_dir();
        p.push(format!("binhash-codes-{}", std::process::id()));
        z.save(&p).unwrap();
        let y = BinaryCodeMatrix::load(&p).unwrap();
        assert_eq!(z, y);
        std::fs::remove_file(&p).ok();
    }

    proptest! {
        #[test]
        fn pack_unpack_roundtrip(bits in 1usize..=64, seed in any::<u64>()) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let cols: Vec<Vec<bool>> =
                (0..17).map(|_| (0..bits).map(|_| rng.gen()).collect()).collect();
            let z = BinaryCodeMatrix::pack(bits, &cols).unwrap();
            prop_assert_eq!(z.unpack(), cols);
        }

        #[test]
        fn file_roundtrip_random(bits in 1usize..=64, seed in any::<u64>()) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let mask = low_mask(bits);
            let words: Vec<u64> = (0..9).map(|_| rng.gen::<u64>() & mask).collect();
            let z = BinaryCodeMatrix::new(bits, words).unwrap();
            let mut p = std::env::temp_dir();
            p.push(format!("binhash-codes-prop-{}-{}", std::process::id(), seed));
            z.save(&p).unwrap();
            let y = BinaryCodeMatrix::load(&p).unwrap();
            std::fs::remove_file(&p).ok();
            prop_assert_eq!(z, y);
        }
    }
}
