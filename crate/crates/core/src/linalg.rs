//! Kernels for the M x M Hermitian blocks carried by the message-passing
//! receivers. Matrices are row-major slices of length M*M.
//!
//! [`CovKernel`] abstracts over full blocks and the diagonal approximation so
//! that the CS-phase decoder is written once.

use crate::{Error, Result, C64};

const REG: f64 = 1e-12;

/// In-place Cholesky `A = L L^H`; the lower triangle receives L.
/// Returns false when a pivot is not strictly positive.
pub fn cholesky_in_place(a: &mut [C64], m: usize) -> bool {
    for j in 0..m {
        let mut d = a[j * m + j].re;
        for k in 0..j {
            d -= a[j * m + k].norm_sqr();
        }
        if !(d > 0.0) || !d.is_finite() {
            return false;
        }
        let ljj = d.sqrt();
        a[j * m + j] = C64::new(ljj, 0.0);
        for i in j + 1..m {
            let mut s = a[i * m + j];
            for k in 0..j {
                s -= a[i * m + k] * a[j * m + k].conj();
            }
            a[i * m + j] = s / ljj;
        }
    }
    true
}

/// Factorises `a` into `work`, adding a tiny ridge if the first attempt fails.
fn factor(a: &[C64], m: usize, work: &mut [C64]) -> Result<()> {
    work[..m * m].copy_from_slice(a);
    if cholesky_in_place(&mut work[..m * m], m) {
        return Ok(());
    }
    let scale = (0..m).map(|i| a[i * m + i].re.abs()).fold(1.0, f64::max);
    work[..m * m].copy_from_slice(a);
    for i in 0..m {
        work[i * m + i] += REG * scale;
    }
    if cholesky_in_place(&mut work[..m * m], m) {
        Ok(())
    } else {
        Err(Error::SingularCovariance)
    }
}

fn chol_logdet(l: &[C64], m: usize) -> f64 {
    2.0 * (0..m).map(|i| l[i * m + i].re.ln()).sum::<f64>()
}

/// Solves `L z = v` in place.
fn forward(l: &[C64], m: usize, z: &mut [C64]) {
    for i in 0..m {
        let mut s = z[i];
        for k in 0..i {
            s -= l[i * m + k] * z[k];
        }
        z[i] = s / l[i * m + i].re;
    }
}

/// Hermitian inverse and log-determinant. `work` needs 2 M^2 entries.
pub fn herm_inverse(a: &[C64], m: usize, out: &mut [C64], work: &mut [C64]) -> Result<f64> {
    let (lw, rest) = work.split_at_mut(m * m);
    factor(a, m, lw)?;
    let logdet = chol_logdet(lw, m);
    // W = L^{-1}, lower triangular, built column by column.
    let w = &mut rest[..m * m];
    w.iter_mut().for_each(|x| *x = C64::new(0.0, 0.0));
    for j in 0..m {
        w[j * m + j] = C64::new(1.0 / lw[j * m + j].re, 0.0);
        for i in j + 1..m {
            let mut s = C64::new(0.0, 0.0);
            for k in j..i {
                s -= lw[i * m + k] * w[k * m + j];
            }
            w[i * m + j] = s / lw[i * m + i].re;
        }
    }
    // A^{-1} = W^H W.
    for i in 0..m {
        for j in 0..=i {
            let mut s = C64::new(0.0, 0.0);
            for k in i..m {
                s += w[k * m + i].conj() * w[k * m + j];
            }
            out[i * m + j] = s;
            out[j * m + i] = s.conj();
        }
        out[i * m + i].im = 0.0;
    }
    Ok(logdet)
}

/// `(ln det a, v^H a^{-1} v)`. `work` needs M^2 + M entries.
pub fn herm_logdet_quad(a: &[C64], m: usize, v: &[C64], work: &mut [C64]) -> Result<(f64, f64)> {
    let (lw, z) = work.split_at_mut(m * m);
    factor(a, m, lw)?;
    z[..m].copy_from_slice(&v[..m]);
    forward(lw, m, &mut z[..m]);
    Ok((chol_logdet(lw, m), z[..m].iter().map(|x| x.norm_sqr()).sum()))
}

/// Full or diagonal covariance storage with the operations the CS-phase
/// decoder needs.
pub trait CovKernel: Copy + Send + Sync + 'static {
    type Elem: Copy + Send + Sync + Default + std::fmt::Debug + PartialEq;
    const FULL: bool;

    /// Entries stored per block.
    fn stride(m: usize) -> usize;
    fn fill_identity(out: &mut [Self::Elem], m: usize, scale: f64);
    fn set_zero(out: &mut [Self::Elem]) {
        out.iter_mut().for_each(|x| *x = Self::Elem::default());
    }
    /// `out += w x`.
    fn axpy(out: &mut [Self::Elem], x: &[Self::Elem], w: f64);
    /// `out += w v v^H` (diagonal only in the diagonal model).
    fn add_outer(out: &mut [Self::Elem], m: usize, v: &[C64], w: f64);
    fn add_diag(out: &mut [Self::Elem], m: usize, d: &[f64]);
    /// Inverse and log-determinant; `work` holds at least 3 M^2 entries.
    fn invert(a: &[Self::Elem], m: usize, out: &mut [Self::Elem], work: &mut [C64]) -> Result<f64>;
    /// `(ln det a, v^H a^{-1} v)`.
    fn logdet_quad(a: &[Self::Elem], m: usize, v: &[C64], work: &mut [C64]) -> Result<(f64, f64)>;
    /// `out = a v`.
    fn mat_vec(a: &[Self::Elem], m: usize, v: &[C64], out: &mut [C64]);
    /// `v^H a v` (real for Hermitian a).
    fn quad(a: &[Self::Elem], m: usize, v: &[C64]) -> f64;
    /// Expands to a row-major M x M block.
    fn to_full(a: &[Self::Elem], m: usize) -> Vec<C64>;
    fn from_full(full: &[C64], m: usize, out: &mut [Self::Elem]);
    fn is_finite(a: &[Self::Elem]) -> bool;
    /// Raises diagonal entries below `floor` (diagonal model only).
    fn floor_diag(a: &mut [Self::Elem], m: usize, floor: &[f64]);
    fn to_cov(a: &[Self::Elem], m: usize) -> Covariance;
}

#[derive(Debug, Clone, Copy)]
pub struct Diag;

#[derive(Debug, Clone, Copy)]
pub struct Full;

impl CovKernel for Diag {
    type Elem = f64;
    const FULL: bool = false;

    fn stride(m: usize) -> usize {
        m
    }
    fn fill_identity(out: &mut [f64], _m: usize, scale: f64) {
        out.iter_mut().for_each(|x| *x = scale);
    }
    fn axpy(out: &mut [f64], x: &[f64], w: f64) {
        out.iter_mut().zip(x).for_each(|(o, x)| *o += w * x);
    }
    fn add_outer(out: &mut [f64], _m: usize, v: &[C64], w: f64) {
        out.iter_mut().zip(v).for_each(|(o, v)| *o += w * v.norm_sqr());
    }
    fn add_diag(out: &mut [f64], _m: usize, d: &[f64]) {
        out.iter_mut().zip(d).for_each(|(o, d)| *o += d);
    }
    fn invert(a: &[f64], _m: usize, out: &mut [f64], _work: &mut [C64]) -> Result<f64> {
        let mut logdet = 0.0;
        for (o, &x) in out.iter_mut().zip(a) {
            let x = if x > 0.0 { x } else { x + REG };
            if !(x > 0.0) || !x.is_finite() {
                return Err(Error::SingularCovariance);
            }
            *o = 1.0 / x;
            logdet += x.ln();
        }
        Ok(logdet)
    }
    fn logdet_quad(a: &[f64], _m: usize, v: &[C64], _work: &mut [C64]) -> Result<(f64, f64)> {
        let mut logdet = 0.0;
        let mut q = 0.0;
        for (&x, z) in a.iter().zip(v) {
            let x = if x > 0.0 { x } else { x + REG };
            if !(x > 0.0) || !x.is_finite() {
                return Err(Error::SingularCovariance);
            }
            logdet += x.ln();
            q += z.norm_sqr() / x;
        }
        Ok((logdet, q))
    }
    fn mat_vec(a: &[f64], _m: usize, v: &[C64], out: &mut [C64]) {
        out.iter_mut().zip(a.iter().zip(v)).for_each(|(o, (&a, &v))| *o = v * a);
    }
    fn quad(a: &[f64], _m: usize, v: &[C64]) -> f64 {
        a.iter().zip(v).map(|(a, v)| a * v.norm_sqr()).sum()
    }
    fn to_full(a: &[f64], m: usize) -> Vec<C64> {
        let mut f = vec![C64::new(0.0, 0.0); m * m];
        (0..m).for_each(|i| f[i * m + i] = C64::new(a[i], 0.0));
        f
    }
    fn from_full(full: &[C64], m: usize, out: &mut [f64]) {
        (0..m).for_each(|i| out[i] = full[i * m + i].re);
    }
    fn is_finite(a: &[f64]) -> bool {
        a.iter().all(|x| x.is_finite())
    }
    fn floor_diag(a: &mut [f64], _m: usize, floor: &[f64]) {
        a.iter_mut().zip(floor).for_each(|(x, &f)| *x = x.max(f));
    }
    fn to_cov(a: &[f64], _m: usize) -> Covariance {
        Covariance::Diag(a.to_vec())
    }
}

impl CovKernel for Full {
    type Elem = C64;
    const FULL: bool = true;

    fn stride(m: usize) -> usize {
        m * m
    }
    fn fill_identity(out: &mut [C64], m: usize, scale: f64) {
        out.iter_mut().for_each(|x| *x = C64::new(0.0, 0.0));
        (0..m).for_each(|i| out[i * m + i] = C64::new(scale, 0.0));
    }
    fn axpy(out: &mut [C64], x: &[C64], w: f64) {
        out.iter_mut().zip(x).for_each(|(o, x)| *o += x * w);
    }
    fn add_outer(out: &mut [C64], m: usize, v: &[C64], w: f64) {
        for i in 0..m {
            let vi = v[i] * w;
            for j in 0..m {
                out[i * m + j] += vi * v[j].conj();
            }
        }
    }
    fn add_diag(out: &mut [C64], m: usize, d: &[f64]) {
        (0..m).for_each(|i| out[i * m + i] += d[i]);
    }
    fn invert(a: &[C64], m: usize, out: &mut [C64], work: &mut [C64]) -> Result<f64> {
        herm_inverse(a, m, out, work)
    }
    fn logdet_quad(a: &[C64], m: usize, v: &[C64], work: &mut [C64]) -> Result<(f64, f64)> {
        herm_logdet_quad(a, m, v, work)
    }
    fn mat_vec(a: &[C64], m: usize, v: &[C64], out: &mut [C64]) {
        for i in 0..m {
            let row = &a[i * m..(i + 1) * m];
            out[i] = row.iter().zip(v).map(|(a, v)| a * v).sum();
        }
    }
    fn quad(a: &[C64], m: usize, v: &[C64]) -> f64 {
        let mut s = C64::new(0.0, 0.0);
        for i in 0..m {
            let row = &a[i * m..(i + 1) * m];
            let av: C64 = row.iter().zip(v).map(|(a, v)| a * v).sum();
            s += v[i].conj() * av;
        }
        s.re
    }
    fn to_full(a: &[C64], _m: usize) -> Vec<C64> {
        a.to_vec()
    }
    fn from_full(full: &[C64], _m: usize, out: &mut [C64]) {
        out.copy_from_slice(full);
    }
    fn is_finite(a: &[C64]) -> bool {
        a.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }
    fn floor_diag(_a: &mut [C64], _m: usize, _floor: &[f64]) {}
    fn to_cov(a: &[C64], _m: usize) -> Covariance {
        Covariance::Full(a.to_vec())
    }
}

/// Covariance block returned to callers, independent of the kernel used.
#[derive(Debug, Clone, PartialEq)]
pub enum Covariance {
    Diag(Vec<f64>),
    Full(Vec<C64>),
}

impl Covariance {
    pub fn identity(m: usize, full: bool) -> Self {
        if full {
            let mut f = vec![C64::new(0.0, 0.0); m * m];
            (0..m).for_each(|i| f[i * m + i] = C64::new(1.0, 0.0));
            Covariance::Full(f)
        } else {
            Covariance::Diag(vec![1.0; m])
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Covariance::Diag(d) => d.len(),
            Covariance::Full(f) => (f.len() as f64).sqrt().round() as usize,
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        match self {
            Covariance::Diag(d) => d.clone(),
            Covariance::Full(f) => {
                let m = self.dim();
                (0..m).map(|i| f[i * m + i].re).collect()
            }
        }
    }

    pub fn trace(&self) -> f64 {
        self.diagonal().iter().sum()
    }

    pub fn to_full(&self) -> Vec<C64> {
        match self {
            Covariance::Diag(d) => Diag::to_full(d, d.len()),
            Covariance::Full(f) => f.clone(),
        }
    }
}
