//! Per-device interleaving, modulation and frame assembly.

use std::f64::consts::FRAC_1_SQRT_2;

use crate::config::{Modulation, ValidatedConfig};
use crate::cs_codebook::{cs_encode, Codebook, PreambleIndex};
use crate::ldpc_code::LdpcCode;
use crate::seeds::{mix, splitmix64};
use crate::{Error, Result, C64};

/// A permutation of the Lc LDPC-phase channel uses, keyed by preamble index.
///
/// `interleave(s)[perm[j]] = s[j]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Interleaver {
    perm: Vec<usize>,
}

impl Interleaver {
    /// Fisher-Yates shuffle driven by splitmix64 seeded with `mix(global_seed, i_k)`.
    pub fn new(index: PreambleIndex, lc: usize, global_seed: u64) -> Self {
        let mut state = mix(global_seed, index as u64);
        let mut perm: Vec<usize> = (0..lc).collect();
        for i in (1..lc).rev() {
            let r = splitmix64(&mut state);
            let j = ((r as u128 * (i as u128 + 1)) >> 64) as usize;
            perm.swap(i, j);
        }
        Interleaver { perm }
    }

    pub fn len(&self) -> usize {
        self.perm.len()
    }

    pub fn is_empty(&self) -> bool {
        self.perm.is_empty()
    }

    /// Output position of input `j`.
    pub fn position(&self, j: usize) -> usize {
        self.perm[j]
    }

    pub fn permutation(&self) -> &[usize] {
        &self.perm
    }

    pub fn interleave<T: Copy + Default>(&self, s: &[T]) -> Vec<T> {
        assert_eq!(s.len(), self.perm.len());
        let mut out = vec![T::default(); s.len()];
        for (j, &p) in self.perm.iter().enumerate() {
            out[p] = s[j];
        }
        out
    }

    pub fn deinterleave<T: Copy + Default>(&self, s: &[T]) -> Vec<T> {
        assert_eq!(s.len(), self.perm.len());
        self.perm.iter().map(|&p| s[p]).collect()
    }
}

/// BPSK maps bit 1 to +1 and bit 0 to -1. QPSK puts even-position bits on
/// the real axis and odd-position bits on the imaginary axis, each +-1/sqrt 2.
pub fn modulate(bits: &[u8], modulation: Modulation) -> Result<Vec<C64>> {
    let sign = |b: u8| if b == 1 { 1.0 } else { -1.0 };
    match modulation {
        Modulation::Bpsk => Ok(bits.iter().map(|&b| C64::new(sign(b), 0.0)).collect()),
        Modulation::Qpsk => {
            if bits.len() % 2 != 0 {
                return Err(Error::OddLength(bits.len()));
            }
            Ok(bits
                .chunks_exact(2)
                .map(|p| C64::new(sign(p[0]), sign(p[1])) * FRAC_1_SQRT_2)
                .collect())
        }
    }
}

/// Hard demapping, inverse of [`modulate`].
pub fn demodulate(symbols: &[C64], modulation: Modulation) -> Vec<u8> {
    let bit = |x: f64| (x > 0.0) as u8;
    match modulation {
        Modulation::Bpsk => symbols.iter().map(|s| bit(s.re)).collect(),
        Modulation::Qpsk => symbols.iter().flat_map(|s| [bit(s.re), bit(s.im)]).collect(),
    }
}

/// Unit-power LDPC section: modulated codeword, zero padded to Lc, interleaved.
pub fn ldpc_section(codeword: &[u8], modulation: Modulation, il: &Interleaver) -> Result<Vec<C64>> {
    let mut s = modulate(codeword, modulation)?;
    if s.len() > il.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} symbols do not fit {} channel uses",
            s.len(),
            il.len()
        )));
    }
    s.resize(il.len(), C64::new(0.0, 0.0));
    Ok(il.interleave(&s))
}

/// Transmitted length-L vector of one device.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub x: Vec<C64>,
    pub lp: usize,
}

impl Frame {
    pub fn preamble(&self) -> &[C64] {
        &self.x[..self.lp]
    }

    pub fn payload(&self) -> &[C64] {
        &self.x[self.lp..]
    }
}

/// Builds `sqrt(P) [a_{i_k}; interleave(pad(modulate(encode(v_c))))]`.
pub fn frame(
    cfg: &ValidatedConfig,
    codebook: &Codebook,
    code: &LdpcCode,
    interleaver_seed: u64,
    v: &[u8],
) -> Result<(Frame, PreambleIndex)> {
    if v.len() != cfg.b {
        return Err(Error::DimensionMismatch(format!("message has {} bits, B = {}", v.len(), cfg.b)));
    }
    let index = cs_encode(&v[..cfg.bp]);
    let il = Interleaver::new(index, cfg.lc, interleaver_seed);
    let section = ldpc_section(&code.encode(&v[cfg.bp..]), cfg.modulation, &il)?;
    let amp = cfg.power.sqrt();
    let x = codebook
        .codeword(index)
        .iter()
        .chain(&section)
        .map(|&z| z * amp)
        .collect();
    Ok((Frame { x, lp: cfg.lp }, index))
}
