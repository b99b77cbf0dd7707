//! Quasi-static Rayleigh block fading with additive complex Gaussian noise.

use ndarray::{s, Array2, ArrayView2};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::framing::Frame;
use crate::{Error, Result, C64};

/// One CN(0, var) draw.
pub fn cn<R: Rng + ?Sized>(rng: &mut R, var: f64) -> C64 {
    let s = (var / 2.0).sqrt();
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    C64::new(re * s, im * s)
}

/// Ka x M matrix of i.i.d. CN(0, 1) channel coefficients.
pub fn sample_channels<R: Rng + ?Sized>(rng: &mut R, ka: usize, m: usize) -> Array2<C64> {
    Array2::from_shape_simple_fn((ka, m), || cn(rng, 1.0))
}

/// L x M matrix of i.i.d. CN(0, sigma2) noise.
pub fn sample_noise<R: Rng + ?Sized>(rng: &mut R, l: usize, m: usize, sigma2: f64) -> Array2<C64> {
    Array2::from_shape_simple_fn((l, m), || cn(rng, sigma2))
}

/// Noiseless superposition sum_k x_k h_k^T.
pub fn superpose(xs: &[&[C64]], h: ArrayView2<C64>) -> Result<Array2<C64>> {
    if xs.len() != h.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "{} signals but {} channel rows",
            xs.len(),
            h.nrows()
        )));
    }
    let l = xs.first().map_or(0, |x| x.len());
    if xs.iter().any(|x| x.len() != l) {
        return Err(Error::DimensionMismatch("signals of unequal length".into()));
    }
    let m = h.ncols();
    let mut y = Array2::zeros((l, m));
    for (x, hk) in xs.iter().zip(h.rows()) {
        for (mut row, &xl) in y.rows_mut().into_iter().zip(x.iter()) {
            if xl == C64::new(0.0, 0.0) {
                continue;
            }
            row.iter_mut().zip(hk.iter()).for_each(|(yv, &hv)| *yv += xl * hv);
        }
    }
    Ok(y)
}

/// Received block over one coherence interval.
#[derive(Debug, Clone, PartialEq)]
pub struct ReceivedFrame {
    pub y: Array2<C64>,
    pub lp: usize,
}

impl ReceivedFrame {
    pub fn y_p(&self) -> ArrayView2<'_, C64> {
        self.y.slice(s![..self.lp, ..])
    }

    pub fn y_c(&self) -> ArrayView2<'_, C64> {
        self.y.slice(s![self.lp.., ..])
    }
}

/// `Y = sum_k x_k h_k^T + Z`, one noise draw for the whole frame.
pub fn transmit<R: Rng + ?Sized>(
    rng: &mut R,
    frames: &[Frame],
    h: ArrayView2<C64>,
    l: usize,
    lp: usize,
    sigma2: f64,
) -> Result<ReceivedFrame> {
    if frames.iter().any(|f| f.x.len() != l) {
        return Err(Error::DimensionMismatch(format!("frame length differs from L = {l}")));
    }
    let xs: Vec<&[C64]> = frames.iter().map(|f| f.x.as_slice()).collect();
    let mut y = if xs.is_empty() {
        Array2::zeros((l, h.ncols()))
    } else {
        superpose(&xs, h)?
    };
    y += &sample_noise(rng, l, h.ncols(), sigma2);
    Ok(ReceivedFrame { y, lp })
}
