//! Joint device-activity detection and channel estimation by Gaussian /
//! Bernoulli message passing on the bipartite graph between observation rows
//! (sum nodes, one per channel use) and candidate devices (variable nodes).
//!
//! Each edge (row l, candidate k) carries a coefficient A_lk. The row model is
//! `y_l = sum_k A_lk phi_k h_k + z_l` with `h_k ~ CN(0, I)` a priori and
//! `phi_k ~ Bernoulli(pa)`. Every other candidate on a row is folded into a
//! Gaussian interference term whose mean and covariance come from the
//! incoming variable-node messages.
//!
//! Sum-to-variable Gaussian messages are kept in information form
//! (`|A|^2 S^{-1}`, `A^* S^{-1} d`), so the "all edges but this one" products
//! at a variable node are computed as totals minus the edge's own term.

use ndarray::{Array2, ArrayView2};

pub use crate::config::Schedule;
use crate::config::ValidatedConfig;
use crate::cs_codebook::Codebook;
use crate::linalg::{CovKernel, Covariance, Diag, Full};
use crate::{Error, Result, C64};

/// Coefficients below this modulus are not connected in the graph.
pub const MIN_COEF: f64 = 1e-12;

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };

/// Sparse observation graph. Rows hold an M-vector observation and a
/// per-antenna noise variance; edges connect rows to variable nodes.
#[derive(Debug, Clone)]
pub struct CeGraph {
    m: usize,
    n_vn: usize,
    y: Vec<C64>,
    noise: Vec<f64>,
    row_ptr: Vec<usize>,
    edge_vn: Vec<usize>,
    edge_coef: Vec<C64>,
    vn_edges: Vec<Vec<usize>>,
}

impl CeGraph {
    pub fn new(m: usize, n_vn: usize) -> Self {
        CeGraph {
            m,
            n_vn,
            y: Vec::new(),
            noise: Vec::new(),
            row_ptr: vec![0],
            edge_vn: Vec::new(),
            edge_coef: Vec::new(),
            vn_edges: vec![Vec::new(); n_vn],
        }
    }

    /// Appends a row. Entries with |coef| < [`MIN_COEF`] are skipped.
    pub fn push_row<I>(&mut self, y: &[C64], noise: &[f64], entries: I) -> Result<()>
    where
        I: IntoIterator<Item = (usize, C64)>,
    {
        if y.len() != self.m || noise.len() != self.m {
            return Err(Error::DimensionMismatch(format!(
                "row of length {} / {} in a graph with M = {}",
                y.len(),
                noise.len(),
                self.m
            )));
        }
        if noise.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::InvalidConfig("row noise variance must be positive".into()));
        }
        self.y.extend_from_slice(y);
        self.noise.extend_from_slice(noise);
        for (vn, coef) in entries {
            if vn >= self.n_vn {
                return Err(Error::DimensionMismatch(format!("variable node {vn} >= {}", self.n_vn)));
            }
            if coef.norm() < MIN_COEF {
                continue;
            }
            self.vn_edges[vn].push(self.edge_vn.len());
            self.edge_vn.push(vn);
            self.edge_coef.push(coef);
        }
        self.row_ptr.push(self.edge_vn.len());
        Ok(())
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn n_vn(&self) -> usize {
        self.n_vn
    }

    pub fn n_rows(&self) -> usize {
        self.row_ptr.len() - 1
    }

    pub fn n_edges(&self) -> usize {
        self.edge_vn.len()
    }

    pub fn row_edges(&self, r: usize) -> std::ops::Range<usize> {
        self.row_ptr[r]..self.row_ptr[r + 1]
    }

    pub fn edge(&self, e: usize) -> (usize, usize, C64) {
        let row = self.row_ptr.partition_point(|&p| p <= e) - 1;
        (row, self.edge_vn[e], self.edge_coef[e])
    }

    pub fn vn_edges(&self, v: usize) -> &[usize] {
        &self.vn_edges[v]
    }
}

/// CS-phase graph: every row of `y_p` connects to every codeword, with
/// coefficient `sqrt(P) A_lk`.
pub fn cs_graph(codebook: &Codebook, y_p: ArrayView2<C64>, power: f64, sigma2: f64) -> Result<CeGraph> {
    let (lp, m) = y_p.dim();
    if lp != codebook.lp() {
        return Err(Error::DimensionMismatch(format!("y_p has {lp} rows, Lp = {}", codebook.lp())));
    }
    let amp = power.sqrt();
    let mut g = CeGraph::new(m, codebook.len());
    let noise = vec![sigma2; m];
    for l in 0..lp {
        let y: Vec<C64> = y_p.row(l).to_vec();
        g.push_row(&y, &noise, (0..codebook.len()).map(|k| (k, codebook.entry(l, k) * amp)))?;
    }
    Ok(g)
}

/// How activity is treated by the decoder.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Activity {
    /// Bernoulli prior with log-odds `l0`; activity is inferred.
    Unknown { l0: f64 },
    /// Every variable node is known to be active.
    Fixed,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CeOptions {
    pub n_iter: usize,
    pub activity: Activity,
    pub damping: f64,
    pub llr_clamp: f64,
    pub schedule: Schedule,
}

impl CeOptions {
    pub fn from_config(cfg: &ValidatedConfig, pa: f64) -> Self {
        CeOptions {
            n_iter: cfg.n_iter_dadce,
            activity: Activity::Unknown { l0: (pa / (1.0 - pa)).ln() },
            damping: cfg.damping,
            llr_clamp: cfg.llr_clamp,
            schedule: cfg.schedule,
        }
    }
}

/// Gaussian prior applied at the output stage, per variable node.
#[derive(Debug, Clone)]
pub struct OutputPrior {
    pub mu: Array2<C64>,
    pub cov: Vec<Covariance>,
}

/// Decoder output.
#[derive(Debug, Clone)]
pub struct DadCeResult {
    pub m: usize,
    /// Posterior means, one row per variable node.
    pub mu_dec: Array2<C64>,
    pub sigma_dec: Vec<Covariance>,
    /// Output activity log-likelihood ratio.
    pub l_dec: Vec<f64>,
    /// `l0 + sum of incoming row LLRs`, i.e. `l_dec` without the CE term.
    pub l_bp: Vec<f64>,
    pub l_ce: Vec<f64>,
    /// Variable nodes with `l_dec > 0`, ascending.
    pub active: Vec<usize>,
}

impl DadCeResult {
    pub fn is_active(&self, k: usize) -> bool {
        self.l_dec[k] > 0.0
    }

    /// `phi_k mu_dec_k`.
    pub fn h_hat(&self, k: usize) -> Vec<C64> {
        if self.is_active(k) {
            self.mu_dec.row(k).to_vec()
        } else {
            vec![ZERO; self.m]
        }
    }
}

#[inline]
fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Message-passing state over a [`CeGraph`].
pub struct DadCeDecoder<'g, K: CovKernel> {
    g: &'g CeGraph,
    opts: CeOptions,
    s: usize,
    // Variable-to-sum messages, per edge.
    mu_vn: Vec<C64>,
    cov_vn: Vec<K::Elem>,
    l_vn: Vec<f64>,
    // Sum-to-variable messages in information form, per edge.
    eta_sn: Vec<C64>,
    prec_sn: Vec<K::Elem>,
    l_sn: Vec<f64>,
    // Output prior in information form, per variable node.
    prior: Option<(Vec<C64>, Vec<K::Elem>, Vec<K::Elem>)>,
    work: Scratch<K>,
}

struct Scratch<K: CovKernel> {
    t_mu: Vec<C64>,
    t_cov: Vec<K::Elem>,
    cov_z: Vec<K::Elem>,
    inv_z: Vec<K::Elem>,
    cov_p: Vec<K::Elem>,
    d: Vec<C64>,
    d2: Vec<C64>,
    v: Vec<C64>,
    lin: Vec<C64>,
    prec: Vec<K::Elem>,
    eta: Vec<C64>,
}

impl<K: CovKernel> Scratch<K> {
    fn new(m: usize) -> Self {
        let s = K::stride(m);
        Scratch {
            t_mu: vec![ZERO; m],
            t_cov: vec![K::Elem::default(); s],
            cov_z: vec![K::Elem::default(); s],
            inv_z: vec![K::Elem::default(); s],
            cov_p: vec![K::Elem::default(); s],
            d: vec![ZERO; m],
            d2: vec![ZERO; m],
            v: vec![ZERO; m],
            lin: vec![ZERO; 3 * m * m + m],
            prec: vec![K::Elem::default(); s],
            eta: vec![ZERO; m],
        }
    }
}

impl<'g, K: CovKernel> DadCeDecoder<'g, K> {
    /// Initialises every variable-to-sum message to the prior N(0, I) with an
    /// uninformative activity message; the prior log-odds enter at the first
    /// variable-node update. Starting from `l0` makes every candidate look
    /// inactive after one sweep, which collapses the interference model.
    pub fn new(g: &'g CeGraph, opts: CeOptions) -> Self {
        let m = g.m;
        let s = K::stride(m);
        let e = g.n_edges();
        let mut cov_vn = vec![K::Elem::default(); e * s];
        for c in cov_vn.chunks_exact_mut(s) {
            K::fill_identity(c, m, 1.0);
        }
        let l_init = match opts.activity {
            Activity::Unknown { .. } => 0.0,
            Activity::Fixed => opts.llr_clamp,
        };
        DadCeDecoder {
            g,
            opts,
            s,
            mu_vn: vec![ZERO; e * m],
            cov_vn,
            l_vn: vec![l_init; e],
            eta_sn: vec![ZERO; e * m],
            prec_sn: vec![K::Elem::default(); e * s],
            l_sn: vec![0.0; e],
            prior: None,
            work: Scratch::new(m),
        }
    }

    /// Replaces the N(0, I) output prior by per-node Gaussians.
    pub fn set_output_prior(&mut self, prior: &OutputPrior) -> Result<()> {
        let m = self.g.m;
        let n = self.g.n_vn;
        if prior.mu.dim() != (n, m) || prior.cov.len() != n {
            return Err(Error::DimensionMismatch("output prior does not match the graph".into()));
        }
        let mut eta = vec![ZERO; n * m];
        let mut prec = vec![K::Elem::default(); n * self.s];
        let mut cov = vec![K::Elem::default(); n * self.s];
        let mut full_c = vec![K::Elem::default(); self.s];
        for v in 0..n {
            K::from_full(&prior.cov[v].to_full(), m, &mut full_c);
            cov[v * self.s..(v + 1) * self.s].copy_from_slice(&full_c);
            let p = &mut prec[v * self.s..(v + 1) * self.s];
            K::invert(&full_c, m, p, &mut self.work.lin)?;
            let mu: Vec<C64> = prior.mu.row(v).to_vec();
            K::mat_vec(p, m, &mu, &mut eta[v * m..(v + 1) * m]);
        }
        self.prior = Some((eta, prec, cov));
        Ok(())
    }

    fn p_q(&self, e: usize) -> (f64, f64) {
        match self.opts.activity {
            Activity::Fixed => (1.0, 0.0),
            Activity::Unknown { .. } => {
                let p = logistic(self.l_vn[e]);
                (p, 1.0 - p)
            }
        }
    }

    /// Interference mean and covariance seen by edge `e`, summed directly
    /// over the other edges of its row (reference path, O(row degree)).
    pub fn interference_stats(&self, e: usize) -> (Vec<C64>, Vec<K::Elem>) {
        let m = self.g.m;
        let (row, _, _) = self.g.edge(e);
        let mut mu = vec![ZERO; m];
        let mut cov = vec![K::Elem::default(); self.s];
        K::add_diag(&mut cov, m, &self.g.noise[row * m..(row + 1) * m]);
        for o in self.g.row_edges(row) {
            if o == e {
                continue;
            }
            self.add_edge_interference(o, &mut mu, &mut cov, 1.0);
        }
        (mu, cov)
    }

    /// `(mu, cov) += sign * (A p mu_vn, |A|^2 p (S_vn + q mu mu^H))` for edge `o`.
    fn add_edge_interference(&self, o: usize, mu: &mut [C64], cov: &mut [K::Elem], sign: f64) {
        let m = self.g.m;
        let a = self.g.edge_coef[o];
        let (p, q) = self.p_q(o);
        let mv = &self.mu_vn[o * m..(o + 1) * m];
        let ap = a * p * sign;
        mu.iter_mut().zip(mv).for_each(|(t, &x)| *t += ap * x);
        let w = a.norm_sqr() * p * sign;
        K::axpy(cov, &self.cov_vn[o * self.s..(o + 1) * self.s], w);
        if q > 0.0 {
            K::add_outer(cov, m, mv, w * q);
        }
    }

    /// Sum-node update of every row, computing new sum-to-variable messages
    /// from the current variable-to-sum messages.
    pub fn sn_update(&mut self) -> Result<()> {
        for r in 0..self.g.n_rows() {
            self.sn_update_row(r)?;
        }
        Ok(())
    }

    fn sn_update_row(&mut self, r: usize) -> Result<()> {
        let m = self.g.m;
        let mut t_mu = vec![ZERO; m];
        let mut t_cov = vec![K::Elem::default(); self.s];
        self.row_totals(r, &mut t_mu, &mut t_cov);
        let mut w = std::mem::replace(&mut self.work, Scratch::new(0));
        let mut out = Ok(());
        for e in self.g.row_edges(r) {
            out = self.sn_edge(e, r, &t_mu, &t_cov, &mut w);
            if out.is_err() {
                break;
            }
        }
        self.work = w;
        out
    }

    /// Noise plus the interference of every edge of row `r`.
    fn row_totals(&self, r: usize, t_mu: &mut [C64], t_cov: &mut [K::Elem]) {
        let m = self.g.m;
        t_mu.iter_mut().for_each(|x| *x = ZERO);
        K::set_zero(t_cov);
        K::add_diag(t_cov, m, &self.g.noise[r * m..(r + 1) * m]);
        for e in self.g.row_edges(r) {
            self.add_edge_interference(e, t_mu, t_cov, 1.0);
        }
    }

    /// Sum-to-variable message of edge `e` on row `r` given the row totals.
    fn sn_edge(&mut self, e: usize, r: usize, t_mu: &[C64], t_cov: &[K::Elem], w: &mut Scratch<K>) -> Result<()> {
        let g = self.g;
        let m = g.m;
        let s = self.s;
        // Leave-one-out interference statistics.
        w.d.copy_from_slice(t_mu);
        w.cov_z.copy_from_slice(t_cov);
        self.add_edge_interference(e, &mut w.d, &mut w.cov_z, -1.0);
        // Cancellation can leave the diagonal model slightly below the noise floor.
        K::floor_diag(&mut w.cov_z, m, &g.noise[r * m..(r + 1) * m]);
        // d = y - mu_z
        let y = &g.y[r * m..(r + 1) * m];
        w.d.iter_mut().zip(y).for_each(|(d, &y)| *d = y - *d);
        let logdet_z = K::invert(&w.cov_z, m, &mut w.inv_z, &mut w.lin)?;
        let a = g.edge_coef[e];
        let a2 = a.norm_sqr();
        let prec = &mut self.prec_sn[e * s..(e + 1) * s];
        K::set_zero(prec);
        K::axpy(prec, &w.inv_z, a2);
        K::mat_vec(&w.inv_z, m, &w.d, &mut w.v);
        let ac = a.conj();
        self.eta_sn[e * m..(e + 1) * m]
            .iter_mut()
            .zip(&w.v)
            .for_each(|(o, &x)| *o = ac * x);
        if matches!(self.opts.activity, Activity::Unknown { .. }) {
            let q0 = w.d.iter().zip(&w.v).map(|(d, v)| (d.conj() * v).re).sum::<f64>();
            // Active hypothesis: the candidate's own message adds to the interference.
            w.cov_p.copy_from_slice(&w.cov_z);
            K::axpy(&mut w.cov_p, &self.cov_vn[e * s..(e + 1) * s], a2);
            let mv = &self.mu_vn[e * m..(e + 1) * m];
            w.d2.iter_mut()
                .zip(w.d.iter().zip(mv))
                .for_each(|(o, (&d, &x))| *o = d - a * x);
            let (logdet_p, q1) = K::logdet_quad(&w.cov_p, m, &w.d2, &mut w.lin)?;
            let l = logdet_z - logdet_p + q0 - q1;
            let clamp = self.opts.llr_clamp;
            self.l_sn[e] = if l.is_finite() { l.clamp(-clamp, clamp) } else { 0.0 };
        }
        Ok(())
    }

    /// One serial sweep over the variable nodes in index order.
    pub fn serial_sweep(&mut self) -> Result<()> {
        let g = self.g;
        let (m, s) = (g.m, self.s);
        let rows = g.n_rows();
        let mut t_mu = vec![ZERO; rows * m];
        let mut t_cov = vec![K::Elem::default(); rows * s];
        for r in 0..rows {
            self.row_totals(r, &mut t_mu[r * m..(r + 1) * m], &mut t_cov[r * s..(r + 1) * s]);
        }
        for v in 0..g.n_vn {
            let mut w = std::mem::replace(&mut self.work, Scratch::new(0));
            let mut out = Ok(());
            for &e in &g.vn_edges[v] {
                let r = g.edge(e).0;
                out = self.sn_edge(e, r, &t_mu[r * m..(r + 1) * m], &t_cov[r * s..(r + 1) * s], &mut w);
                if out.is_err() {
                    break;
                }
                self.add_edge_interference(e, &mut t_mu[r * m..(r + 1) * m], &mut t_cov[r * s..(r + 1) * s], -1.0);
            }
            self.work = w;
            out?;
            self.vn_update_node(v)?;
            for &e in &g.vn_edges[v] {
                let r = g.edge(e).0;
                self.add_edge_interference(e, &mut t_mu[r * m..(r + 1) * m], &mut t_cov[r * s..(r + 1) * s], 1.0);
            }
        }
        Ok(())
    }

    /// Variable-node update of every node.
    pub fn vn_update(&mut self) -> Result<()> {
        for v in 0..self.g.n_vn {
            self.vn_update_node(v)?;
        }
        Ok(())
    }

    fn vn_update_node(&mut self, v: usize) -> Result<()> {
        let g = self.g;
        let m = g.m;
        let s = self.s;
        let edges = &g.vn_edges[v];
        if edges.is_empty() {
            return Ok(());
        }
        let mut w = std::mem::replace(&mut self.work, Scratch::new(0));
        // Totals over all incoming edges, prior N(0, I) included.
        K::fill_identity(&mut w.t_cov, m, 1.0);
        w.t_mu.iter_mut().for_each(|x| *x = ZERO);
        let mut l_tot = 0.0;
        for &e in edges {
            K::axpy(&mut w.t_cov, &self.prec_sn[e * s..(e + 1) * s], 1.0);
            w.t_mu.iter_mut().zip(&self.eta_sn[e * m..(e + 1) * m]).for_each(|(t, &x)| *t += x);
            l_tot += self.l_sn[e];
        }
        let damp = self.opts.damping;
        let clamp = self.opts.llr_clamp;
        let mut out = Ok(());
        for &e in edges {
            w.prec.copy_from_slice(&w.t_cov);
            K::axpy(&mut w.prec, &self.prec_sn[e * s..(e + 1) * s], -1.0);
            w.eta.iter_mut()
                .zip(w.t_mu.iter().zip(&self.eta_sn[e * m..(e + 1) * m]))
                .for_each(|(o, (&t, &x))| *o = t - x);
            if let Err(err) = K::invert(&w.prec, m, &mut w.cov_z, &mut w.lin) {
                out = Err(err);
                break;
            }
            K::mat_vec(&w.cov_z, m, &w.eta, &mut w.v);
            let cov = &mut self.cov_vn[e * s..(e + 1) * s];
            let mu = &mut self.mu_vn[e * m..(e + 1) * m];
            if damp > 0.0 {
                // Convex combination with the previous message.
                let mut old = cov.to_vec();
                K::set_zero(cov);
                K::axpy(cov, &w.cov_z, 1.0 - damp);
                K::axpy(cov, &old, damp);
                old.clear();
                mu.iter_mut().zip(&w.v).for_each(|(o, &x)| *o = x * (1.0 - damp) + *o * damp);
            } else {
                cov.copy_from_slice(&w.cov_z);
                mu.copy_from_slice(&w.v);
            }
            if let Activity::Unknown { l0 } = self.opts.activity {
                let l = (l0 + l_tot - self.l_sn[e]).clamp(-clamp, clamp);
                self.l_vn[e] = if damp > 0.0 { (1.0 - damp) * l + damp * self.l_vn[e] } else { l };
            }
        }
        self.work = w;
        out
    }

    /// One flooding iteration: every sum node, then every variable node.
    pub fn iterate(&mut self) -> Result<()> {
        self.sn_update()?;
        self.vn_update()
    }

    /// Same as [`iterate`](Self::iterate) with an explicit node visiting order.
    pub fn iterate_in_order(&mut self, rows: &[usize], vns: &[usize]) -> Result<()> {
        for &r in rows {
            self.sn_update_row(r)?;
        }
        for &v in vns {
            self.vn_update_node(v)?;
        }
        Ok(())
    }

    /// `n_iter` iterations of the configured schedule. A serial run ends
    /// with one sum-node pass so the output stage sees current messages.
    pub fn run(&mut self) -> Result<()> {
        match self.opts.schedule {
            Schedule::Flooding => {
                for _ in 0..self.opts.n_iter {
                    self.iterate()?;
                }
            }
            Schedule::Serial => {
                for _ in 0..self.opts.n_iter {
                    self.serial_sweep()?;
                }
                self.sn_update()?;
            }
        }
        Ok(())
    }

    /// Output estimates over all incoming edges.
    pub fn finalize(&mut self) -> Result<DadCeResult> {
        let g = self.g;
        let m = g.m;
        let s = self.s;
        let n = g.n_vn;
        let mut mu_dec = Array2::zeros((n, m));
        let mut sigma_dec = Vec::with_capacity(n);
        let mut l_dec = vec![0.0; n];
        let mut l_bp = vec![0.0; n];
        let mut l_ce = vec![0.0; n];
        let mut active = Vec::new();
        let mut w = std::mem::replace(&mut self.work, Scratch::new(0));
        let mut pri_cov = vec![K::Elem::default(); s];
        let mut pri_mu = vec![ZERO; m];
        let mut sum_cov = vec![K::Elem::default(); s];
        let mut sig = vec![K::Elem::default(); s];
        for v in 0..n {
            match &self.prior {
                Some((eta, prec, cov)) => {
                    w.t_cov.copy_from_slice(&prec[v * s..(v + 1) * s]);
                    w.t_mu.copy_from_slice(&eta[v * m..(v + 1) * m]);
                    pri_cov.copy_from_slice(&cov[v * s..(v + 1) * s]);
                    K::mat_vec(&pri_cov, m, &w.t_mu, &mut pri_mu);
                }
                None => {
                    K::fill_identity(&mut w.t_cov, m, 1.0);
                    w.t_mu.iter_mut().for_each(|x| *x = ZERO);
                    K::fill_identity(&mut pri_cov, m, 1.0);
                    pri_mu.iter_mut().for_each(|x| *x = ZERO);
                }
            }
            let mut l_tot = 0.0;
            for &e in &g.vn_edges[v] {
                K::axpy(&mut w.t_cov, &self.prec_sn[e * s..(e + 1) * s], 1.0);
                w.t_mu.iter_mut().zip(&self.eta_sn[e * m..(e + 1) * m]).for_each(|(t, &x)| *t += x);
                l_tot += self.l_sn[e];
            }
            // t_cov is now the posterior precision.
            let logdet_prec = K::invert(&w.t_cov, m, &mut sig, &mut w.lin)?;
            K::mat_vec(&sig, m, &w.t_mu, &mut w.v);
            let mu = w.v.clone();
            // CE evidence term.
            sum_cov.copy_from_slice(&pri_cov);
            K::axpy(&mut sum_cov, &sig, 1.0);
            w.d.iter_mut().zip(mu.iter().zip(&pri_mu)).for_each(|(o, (&a, &b))| *o = a - b);
            let (logdet_sum, q_sum) = K::logdet_quad(&sum_cov, m, &w.d, &mut w.lin)?;
            let q_dec = K::quad(&w.t_cov, m, &mu);
            let ce = -logdet_prec - logdet_sum + q_dec - q_sum;
            let (ldec, lbp) = match self.opts.activity {
                Activity::Unknown { l0 } => (l0 + l_tot + ce, l0 + l_tot),
                Activity::Fixed => (f64::INFINITY, f64::INFINITY),
            };
            l_dec[v] = ldec;
            l_bp[v] = lbp;
            l_ce[v] = ce;
            if ldec > 0.0 {
                active.push(v);
            }
            mu_dec.row_mut(v).iter_mut().zip(&mu).for_each(|(o, &x)| *o = x);
            sigma_dec.push(K::to_cov(&sig, m));
        }
        self.work = w;
        Ok(DadCeResult { m, mu_dec, sigma_dec, l_dec, l_bp, l_ce, active })
    }

    // Accessors used by tests and diagnostics.

    pub fn vn_message(&self, e: usize) -> (&[C64], &[K::Elem], f64) {
        let m = self.g.m;
        (&self.mu_vn[e * m..(e + 1) * m], &self.cov_vn[e * self.s..(e + 1) * self.s], self.l_vn[e])
    }

    pub fn set_vn_message(&mut self, e: usize, mu: &[C64], cov: &[K::Elem], l: f64) {
        let m = self.g.m;
        self.mu_vn[e * m..(e + 1) * m].copy_from_slice(mu);
        self.cov_vn[e * self.s..(e + 1) * self.s].copy_from_slice(cov);
        self.l_vn[e] = l;
    }

    /// Sum-to-variable message of edge `e` as (information vector, precision, LLR).
    pub fn sn_message(&self, e: usize) -> (&[C64], &[K::Elem], f64) {
        let m = self.g.m;
        (&self.eta_sn[e * m..(e + 1) * m], &self.prec_sn[e * self.s..(e + 1) * self.s], self.l_sn[e])
    }

    pub fn set_sn_message(&mut self, e: usize, eta: &[C64], prec: &[K::Elem], l: f64) {
        let m = self.g.m;
        self.eta_sn[e * m..(e + 1) * m].copy_from_slice(eta);
        self.prec_sn[e * self.s..(e + 1) * self.s].copy_from_slice(prec);
        self.l_sn[e] = l;
    }
}

/// Runs the decoder on a graph with the chosen covariance model.
pub fn run_ce(
    g: &CeGraph,
    opts: CeOptions,
    full_covariance: bool,
    prior: Option<&OutputPrior>,
) -> Result<DadCeResult> {
    fn go<K: CovKernel>(g: &CeGraph, opts: CeOptions, prior: Option<&OutputPrior>) -> Result<DadCeResult> {
        let mut dec = DadCeDecoder::<K>::new(g, opts);
        if let Some(p) = prior {
            dec.set_output_prior(p)?;
        }
        dec.run()?;
        dec.finalize()
    }
    if full_covariance {
        go::<Full>(g, opts, prior)
    } else {
        go::<Diag>(g, opts, prior)
    }
}

/// CS-phase activity detection and channel estimation with prior `pa`.
pub fn run_dad_ce_with_pa(
    cfg: &ValidatedConfig,
    codebook: &Codebook,
    y_p: ArrayView2<C64>,
    pa: f64,
) -> Result<DadCeResult> {
    let g = cs_graph(codebook, y_p, cfg.power, cfg.sigma2)?;
    run_ce(&g, CeOptions::from_config(cfg, pa), !cfg.diag_approx, None)
}

/// CS-phase activity detection and channel estimation with the configured prior.
pub fn run_dad_ce(cfg: &ValidatedConfig, codebook: &Codebook, y_p: ArrayView2<C64>) -> Result<DadCeResult> {
    run_dad_ce_with_pa(cfg, codebook, y_p, cfg.pa)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel_sim::{cn, sample_channels};
    use crate::config::SystemConfig;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn unknown(l0: f64, n_iter: usize) -> CeOptions {
        CeOptions { n_iter, activity: Activity::Unknown { l0 }, damping: 0.0, llr_clamp: 50.0, schedule: Schedule::Flooding }
    }

    #[test]
    fn single_candidate_sees_only_noise() {
        let mut g = CeGraph::new(2, 1);
        g.push_row(&[c(1.0, 0.0), c(0.0, 1.0)], &[0.3, 0.3], [(0, c(2.0, 0.0))]).unwrap();
        let dec = DadCeDecoder::<Full>::new(&g, unknown(0.0, 1));
        let (mu, cov) = dec.interference_stats(0);
        assert_eq!(mu, vec![ZERO; 2]);
        assert_eq!(cov, vec![c(0.3, 0.0), ZERO, ZERO, c(0.3, 0.0)]);
    }

    #[test]
    fn inactive_interferers_contribute_nothing() {
        let mut g = CeGraph::new(1, 3);
        g.push_row(&[c(1.0, 0.0)], &[0.5], [(0, c(1.0, 0.0)), (1, c(0.5, 0.5)), (2, c(-1.0, 2.0))]).unwrap();
        let mut dec = DadCeDecoder::<Diag>::new(&g, unknown(-1e9, 1));
        for e in 1..3 {
            dec.set_vn_message(e, &[c(3.0, 1.0)], &[2.0], -50.0);
        }
        let (mu, cov) = dec.interference_stats(0);
        assert!(mu[0].norm() < 1e-12 && (cov[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn known_interferers() {
        // p = 1 (clamped LLR 50 gives p = 1 - 2e-22), Sigma = 0.
        let mut g = CeGraph::new(1, 3);
        let a = [c(1.0, 0.0), c(0.5, 0.5), c(-1.0, 2.0)];
        g.push_row(&[ZERO], &[0.5], (0..3).map(|k| (k, a[k]))).unwrap();
        let mut dec = DadCeDecoder::<Diag>::new(&g, unknown(0.0, 1));
        dec.set_vn_message(1, &[c(1.0, -1.0)], &[0.0], 50.0);
        dec.set_vn_message(2, &[c(0.0, 2.0)], &[0.0], 50.0);
        let (mu, cov) = dec.interference_stats(0);
        let want = a[1] * c(1.0, -1.0) + a[2] * c(0.0, 2.0);
        assert!((mu[0] - want).norm() < 1e-9);
        assert!((cov[0] - 0.5).abs() < 1e-9);
    }

    #[test]
    fn noiseless_sn_mean_is_channel() {
        let m = 3;
        let h = [c(0.3, -1.0), c(1.2, 0.4), c(-0.7, 0.1)];
        let a = c(0.8, -0.6);
        let y: Vec<C64> = h.iter().map(|&x| a * x).collect();
        let mut g = CeGraph::new(m, 1);
        g.push_row(&y, &[1e-9; 3], [(0, a)]).unwrap();
        let mut dec = DadCeDecoder::<Diag>::new(&g, unknown(0.0, 1));
        dec.sn_update().unwrap();
        let (eta, prec, _) = dec.sn_message(0);
        for i in 0..m {
            assert!((eta[i] / prec[i] - h[i]).norm() < 1e-9);
        }
    }

    #[test]
    fn scalar_sn_llr_matches_direct_formula() {
        // M = 1, one row with two candidates.
        let (a0, a1) = (c(1.5, 0.5), c(-0.4, 0.9));
        let y = c(0.7, -1.1);
        let noise = 0.6;
        let mut g = CeGraph::new(1, 2);
        g.push_row(&[y], &[noise], [(0, a0), (1, a1)]).unwrap();
        let mut dec = DadCeDecoder::<Diag>::new(&g, unknown(0.0, 1));
        let (mu1, s1, l1) = (c(0.2, 0.3), 0.4, 0.8);
        let (mu0, s0) = (c(-0.5, 0.1), 0.7);
        dec.set_vn_message(1, &[mu1], &[s1], l1);
        dec.set_vn_message(0, &[mu0], &[s0], -0.3);
        dec.sn_update().unwrap();
        // Hand evaluation for edge 0.
        let p1 = 1.0 / (1.0 + (-l1 as f64).exp());
        let muz = a1 * p1 * mu1;
        let sz = noise + a1.norm_sqr() * p1 * (s1 + (1.0 - p1) * mu1.norm_sqr());
        let sp = sz + a0.norm_sqr() * s0;
        let dz = y - muz;
        let dp = dz - a0 * mu0;
        let want = sz.ln() - sp.ln() + dz.norm_sqr() / sz - dp.norm_sqr() / sp;
        let (eta, prec, l) = dec.sn_message(0);
        assert!((l - want).abs() < 1e-12, "{l} vs {want}");
        assert!((prec[0] - a0.norm_sqr() / sz).abs() < 1e-12);
        assert!((eta[0] - a0.conj() * dz / sz).norm() < 1e-12);
    }

    #[test]
    fn identical_hypotheses_give_zero_llr() {
        // Edge coefficient tiny but connected: the active hypothesis adds nothing.
        let mut g = CeGraph::new(1, 1);
        g.push_row(&[c(1.0, 0.0)], &[1.0], [(0, c(1e-10, 0.0))]).unwrap();
        let mut dec = DadCeDecoder::<Diag>::new(&g, unknown(0.0, 1));
        dec.set_vn_message(0, &[ZERO], &[0.0], 0.0);
        dec.sn_update().unwrap();
        assert!(dec.sn_message(0).2.abs() < 1e-12);
    }

    #[test]
    fn one_message_product() {
        // Prior I times a unit message with mean m gives (I/2, m/2).
        let mut g = CeGraph::new(2, 1);
        g.push_row(&[ZERO; 2], &[1.0; 2], [(0, c(1.0, 0.0))]).unwrap();
        g.push_row(&[ZERO; 2], &[1.0; 2], [(0, c(1.0, 0.0))]).unwrap();
        let mut dec = DadCeDecoder::<Full>::new(&g, unknown(0.0, 1));
        let mm = [c(2.0, -1.0), c(0.5, 0.5)];
        let ident = vec![c(1.0, 0.0), ZERO, ZERO, c(1.0, 0.0)];
        // Information form of N(mm, I): precision I, eta = mm.
        dec.set_sn_message(0, &mm, &ident, 0.0);
        dec.set_sn_message(1, &[ZERO; 2], &[ZERO; 4], 0.0);
        dec.vn_update().unwrap();
        let (mu, cov, l) = dec.vn_message(1);
        assert!((cov[0].re - 0.5).abs() < 1e-12 && (cov[3].re - 0.5).abs() < 1e-12);
        assert!(cov[1].norm() < 1e-12);
        assert!((mu[0] - mm[0] * 0.5).norm() < 1e-12 && (mu[1] - mm[1] * 0.5).norm() < 1e-12);
        assert_eq!(l, 0.0);
    }

    #[test]
    fn three_diagonal_messages_precision_sum() {
        let mut g = CeGraph::new(1, 1);
        for _ in 0..4 {
            g.push_row(&[ZERO], &[1.0], [(0, c(1.0, 0.0))]).unwrap();
        }
        let mut dec = DadCeDecoder::<Diag>::new(&g, unknown(0.0, 1));
        let msgs = [(c(1.0, 0.0), 2.0), (c(-0.5, 1.0), 0.5), (c(0.2, 0.2), 4.0)];
        for (e, &(mu, var)) in msgs.iter().enumerate() {
            dec.set_sn_message(e, &[mu / var], &[1.0 / var], 0.0);
        }
        dec.set_sn_message(3, &[ZERO], &[0.0], 0.0);
        dec.vn_update().unwrap();
        let prec = 1.0 + msgs.iter().map(|m| 1.0 / m.1).sum::<f64>();
        let mean = msgs.iter().map(|m| m.0 / m.1).sum::<C64>() / prec;
        let (mu, cov, _) = dec.vn_message(3);
        assert!((cov[0] - 1.0 / prec).abs() < 1e-12);
        assert!((mu[0] - mean).norm() < 1e-12);
    }

    #[test]
    fn l_ce_closed_forms() {
        // No observations: posterior equals the prior, l_ce = -M ln 2.
        let g = CeGraph::new(3, 1);
        let mut dec = DadCeDecoder::<Full>::new(&g, unknown(0.0, 0));
        let r = dec.finalize().unwrap();
        assert!((r.l_ce[0] + 3.0 * 2f64.ln()).abs() < 1e-12);
        assert!(!r.is_active(0));
        // A strong, precise observation is evidence of activity.
        let mut g = CeGraph::new(1, 1);
        g.push_row(&[c(5.0, 0.0)], &[1e-3], [(0, c(1.0, 0.0))]).unwrap();
        let mut dec = DadCeDecoder::<Diag>::new(&g, unknown(0.0, 1));
        dec.run().unwrap();
        assert!(dec.finalize().unwrap().l_ce[0] > 0.0);
    }

    #[test]
    fn flooding_order_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (rows, n, m) = (6, 5, 2);
        let mut g = CeGraph::new(m, n);
        for _ in 0..rows {
            let y: Vec<C64> = (0..m).map(|_| cn(&mut rng, 2.0)).collect();
            let ent: Vec<(usize, C64)> = (0..n).map(|k| (k, cn(&mut rng, 1.0))).collect();
            g.push_row(&y, &[0.5; 2], ent).unwrap();
        }
        let mut a = DadCeDecoder::<Full>::new(&g, unknown(-1.0, 3));
        let mut b = DadCeDecoder::<Full>::new(&g, unknown(-1.0, 3));
        for _ in 0..3 {
            a.iterate().unwrap();
            b.iterate_in_order(&[5, 2, 0, 4, 1, 3], &[3, 1, 4, 0, 2]).unwrap();
        }
        let (ra, rb) = (a.finalize().unwrap(), b.finalize().unwrap());
        assert_eq!(ra.mu_dec, rb.mu_dec);
        assert_eq!(ra.l_dec, rb.l_dec);
    }

    #[test]
    fn serial_sweep_matches_recomputed_rows() {
        // Reference: before each variable node, every row is recomputed from scratch.
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let (rows, n, m) = (7, 6, 3);
        let mut g = CeGraph::new(m, n);
        for _ in 0..rows {
            let y: Vec<C64> = (0..m).map(|_| cn(&mut rng, 3.0)).collect();
            let mut ent: Vec<(usize, C64)> = Vec::new();
            for k in 0..n {
                if rng.random_bool(0.7) {
                    ent.push((k, cn(&mut rng, 1.0)));
                }
            }
            g.push_row(&y, &[0.4; 3], ent).unwrap();
        }
        let opts = CeOptions { damping: 0.3, schedule: Schedule::Serial, ..unknown(-1.0, 1) };
        let all: Vec<usize> = (0..rows).collect();
        let mut a = DadCeDecoder::<Full>::new(&g, opts);
        let mut b = DadCeDecoder::<Full>::new(&g, opts);
        for _ in 0..3 {
            a.serial_sweep().unwrap();
            for v in 0..n {
                b.iterate_in_order(&all, &[v]).unwrap();
            }
        }
        for e in 0..g.n_edges() {
            let (ma, ca, la) = a.vn_message(e);
            let (mb, cb, lb) = b.vn_message(e);
            assert!(ma.iter().zip(mb).all(|(x, y)| (x - y).norm() < 1e-9));
            assert!(ca.iter().zip(cb).all(|(x, y)| (x - y).norm() < 1e-9));
            assert!((la - lb).abs() < 1e-9);
        }
    }

    #[test]
    fn serial_schedule_avoids_collective_swing() {
        // Flooding at this size swings every activity message between the
        // two clamps; the serial schedule settles on the true support.
        let cfg = SystemConfig { b: 32, bp: 8, bc: 24, lp: 48, l: 400, m: 8, ka: 8, b0: 4, ebn0_db: 12.0, ..SystemConfig::default() }
            .validate()
            .unwrap();
        let cb = Codebook::generate(1, 48, 8, 1 << 20).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let (mut serial_miss, mut flood_miss) = (0, 0);
        for _ in 0..3 {
            let mut idx: Vec<usize> = Vec::new();
            while idx.len() < 8 {
                let i = rng.random_range(0..256);
                if !idx.contains(&i) {
                    idx.push(i);
                }
            }
            let h = sample_channels(&mut rng, 8, 8);
            let amp = cfg.power.sqrt();
            let y = Array2::from_shape_fn((48, 8), |(l, m)| {
                idx.iter().enumerate().map(|(k, &i)| cb.entry(l, i) * h[[k, m]] * amp).sum::<C64>() + cn(&mut rng, 1.0)
            });
            let g = cs_graph(&cb, y.view(), cfg.power, cfg.sigma2).unwrap();
            let mut opts = CeOptions::from_config(&cfg, cfg.pa);
            let r = run_ce(&g, opts, false, None).unwrap();
            serial_miss += idx.iter().filter(|&&i| !r.is_active(i)).count();
            assert!(r.active.iter().all(|a| idx.contains(a)));
            opts.schedule = Schedule::Flooding;
            let r = run_ce(&g, opts, false, None).unwrap();
            flood_miss += idx.iter().filter(|&&i| !r.is_active(i)).count();
        }
        assert_eq!(serial_miss, 0);
        assert!(flood_miss > 8, "{flood_miss}");
    }

    #[test]
    fn exclusion_of_own_edge() {
        // Perturbing the sum message of edge e leaves the outgoing message on
        // e unchanged and moves the messages on the node's other edges.
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut g = CeGraph::new(2, 2);
        for _ in 0..4 {
            let y: Vec<C64> = (0..2).map(|_| cn(&mut rng, 1.0)).collect();
            g.push_row(&y, &[1.0; 2], [(0, cn(&mut rng, 1.0)), (1, cn(&mut rng, 1.0))]).unwrap();
        }
        let mut dec = DadCeDecoder::<Full>::new(&g, unknown(-0.5, 1));
        dec.sn_update().unwrap();
        let e0 = g.vn_edges(0)[1];
        let other = g.vn_edges(0)[2];
        let mut base = DadCeDecoder::<Full>::new(&g, unknown(-0.5, 1));
        base.sn_update().unwrap();
        base.vn_update().unwrap();
        let (eta, prec, l) = dec.sn_message(e0);
        let poisoned_eta: Vec<C64> = eta.iter().map(|x| x + c(1e3, -1e3)).collect();
        let mut poisoned_prec = prec.to_vec();
        poisoned_prec[0] += 7.0;
        poisoned_prec[3] += 7.0;
        dec.set_sn_message(e0, &poisoned_eta, &poisoned_prec, l + 30.0);
        dec.vn_update().unwrap();
        let (mu_a, cov_a, l_a) = base.vn_message(e0);
        let (mu_b, cov_b, l_b) = dec.vn_message(e0);
        for (x, y) in mu_a.iter().zip(mu_b).chain(cov_a.iter().zip(cov_b)) {
            assert!((x - y).norm() < 1e-9 * (1.0 + x.norm()));
        }
        assert!((l_a - l_b).abs() < 1e-9);
        assert!((base.vn_message(other).0[0] - dec.vn_message(other).0[0]).norm() > 1e-3);
    }

    #[test]
    fn diagonal_mode_stays_nonnegative() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let cb = Codebook::generate(1, 16, 5, 1 << 20).unwrap();
        let y = Array2::from_shape_simple_fn((16, 3), || cn(&mut rng, 3.0));
        let g = cs_graph(&cb, y.view(), 2.0, 1.0).unwrap();
        let mut dec = DadCeDecoder::<Diag>::new(&g, unknown(-2.0, 1));
        for _ in 0..5 {
            dec.iterate().unwrap();
            for e in 0..g.n_edges() {
                assert!(dec.vn_message(e).1.iter().all(|&x| x >= 0.0 && x.is_finite()));
                assert!(dec.sn_message(e).1.iter().all(|&x| x >= 0.0 && x.is_finite()));
            }
        }
    }

    fn small_cfg(sigma2: f64) -> ValidatedConfig {
        SystemConfig {
            b: 22,
            bp: 6,
            bc: 16,
            lp: 32,
            l: 64,
            m: 4,
            ka: 1,
            b0: 3,
            sigma2,
            ..SystemConfig::default()
        }
        .validate()
        .unwrap()
    }

    #[test]
    fn noiseless_single_device() {
        let cfg = small_cfg(1e-6);
        let cb = Codebook::generate(3, 32, 6, 1 << 20).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..10 {
            let k = rng.random_range(0..64usize);
            let h = sample_channels(&mut rng, 1, 4);
            let amp = cfg.power.sqrt();
            let y = Array2::from_shape_fn((32, 4), |(l, m)| cb.entry(l, k) * amp * h[[0, m]] + cn(&mut rng, 1e-6));
            let r = run_dad_ce(&cfg, &cb, y.view()).unwrap();
            assert_eq!(r.active, vec![k]);
            let err: f64 = (0..4).map(|m| (r.mu_dec[[k, m]] - h[[0, m]]).norm_sqr()).sum();
            let nrm: f64 = h.iter().map(|z| z.norm_sqr()).sum();
            assert!(10.0 * (err / nrm).log10() < -30.0);
        }
    }

    #[test]
    fn noise_only_detects_nothing() {
        let cfg = small_cfg(1.0);
        let cb = Codebook::generate(3, 32, 6, 1 << 20).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut total = 0;
        for _ in 0..10 {
            let y = Array2::from_shape_simple_fn((32, 4), || cn(&mut rng, 1.0));
            total += run_dad_ce(&cfg, &cb, y.view()).unwrap().active.len();
        }
        assert!(total <= 1, "{total}");
    }

    #[test]
    fn rejects_bad_rows() {
        let mut g = CeGraph::new(2, 1);
        assert!(g.push_row(&[ZERO], &[1.0, 1.0], []).is_err());
        assert!(g.push_row(&[ZERO; 2], &[0.0, 1.0], []).is_err());
        assert!(g.push_row(&[ZERO; 2], &[1.0; 2], [(3, c(1.0, 0.0))]).is_err());
    }
}
