//! Shared Gaussian codebook for the preamble phase and the bit/index maps.

use std::io::{Read, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::{Bits, Error, Result, C64};

/// 1-based codeword index i_k in 1..=2^Bp.
pub type PreambleIndex = u32;

/// `2^Bp` columns of length `Lp`, each scaled to squared norm `Lp`.
///
/// Columns are stored contiguously (`column(i)` is codeword index `i + 1`).
#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    lp: usize,
    bp: usize,
    seed: u64,
    data: Vec<C64>,
}

impl Codebook {
    /// Draws i.i.d. CN(0, 1) entries and normalises each column.
    pub fn generate(seed: u64, lp: usize, bp: usize, max_entries: u64) -> Result<Self> {
        let n = 1u128 << bp;
        let entries = n * lp as u128;
        if entries > max_entries as u128 {
            return Err(Error::SizeOverflow { entries, cap: max_entries as u128 });
        }
        if lp == 0 {
            return Err(Error::InvalidConfig("codebook needs Lp > 0".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut data = Vec::with_capacity(entries as usize);
        let target = (lp as f64).sqrt();
        for _ in 0..n {
            let start = data.len();
            for _ in 0..lp {
                let re: f64 = StandardNormal.sample(&mut rng);
                let im: f64 = StandardNormal.sample(&mut rng);
                data.push(C64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2);
            }
            let col = &mut data[start..];
            let norm = col.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
            let s = target / norm;
            col.iter_mut().for_each(|z| *z *= s);
        }
        Ok(Codebook { lp, bp, seed, data })
    }

    pub fn lp(&self) -> usize {
        self.lp
    }

    pub fn bp(&self) -> usize {
        self.bp
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn len(&self) -> usize {
        1 << self.bp
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Column with 0-based position `i` (codeword index `i + 1`).
    pub fn column(&self, i: usize) -> &[C64] {
        &self.data[i * self.lp..(i + 1) * self.lp]
    }

    /// Column for a 1-based codeword index.
    pub fn codeword(&self, index: PreambleIndex) -> &[C64] {
        self.column(index as usize - 1)
    }

    /// Entry A[l, i] of the Lp x 2^Bp matrix.
    pub fn entry(&self, l: usize, i: usize) -> C64 {
        self.data[i * self.lp + l]
    }

    /// Writes the header (Lp, Bp, seed as little-endian u64) then every
    /// column as interleaved little-endian (re, im) doubles.
    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        for h in [self.lp as u64, self.bp as u64, self.seed] {
            w.write_all(&h.to_le_bytes())?;
        }
        for z in &self.data {
            w.write_all(&z.re.to_le_bytes())?;
            w.write_all(&z.im.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<Self> {
        let mut word = [0u8; 8];
        let mut next = |r: &mut R| -> Result<u64> {
            r.read_exact(&mut word)?;
            Ok(u64::from_le_bytes(word))
        };
        let lp = next(&mut r)? as usize;
        let bp = next(&mut r)? as usize;
        let seed = next(&mut r)?;
        if bp > 30 || lp == 0 {
            return Err(Error::Parse(format!("implausible codebook header Lp={lp} Bp={bp}")));
        }
        let n = lp << bp;
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            let re = f64::from_bits(next(&mut r)?);
            let im = f64::from_bits(next(&mut r)?);
            data.push(C64::new(re, im));
        }
        Ok(Codebook { lp, bp, seed, data })
    }
}

/// Maps preamble bits (MSB first) to the 1-based codeword index.
pub fn cs_encode(bits: &[u8]) -> PreambleIndex {
    bits.iter().fold(0u32, |acc, &b| (acc << 1) | b as u32) + 1
}

/// Inverse of [`cs_encode`].
pub fn index_to_bits(index: PreambleIndex, bp: usize) -> Bits {
    let v = index - 1;
    (0..bp).map(|j| ((v >> (bp - 1 - j)) & 1) as u8).collect()
}
