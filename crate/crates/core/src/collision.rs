//! Preamble collision handling: energy detection on the estimated channels,
//! sliding-window retransmission of collided preambles, stitching of the
//! window chain back into one preamble, and the closed-form collision
//! analytics of the protocol.

use std::collections::BTreeMap;

use ndarray::{Array2, ArrayView2};
use rand::Rng;

use crate::config::ValidatedConfig;
use crate::cs_codebook::{cs_encode, index_to_bits, Codebook, PreambleIndex};
use crate::dad_ce::{cs_graph, run_ce, CeOptions, DadCeResult};
use crate::linalg::Covariance;
use crate::{Bits, Error, Result, C64};

/// Per-antenna energy `||h||^2 / M` of an estimated channel row.
pub fn energy(h: &[C64]) -> f64 {
    if h.is_empty() {
        return 0.0;
    }
    h.iter().map(|z| z.norm_sqr()).sum::<f64>() / h.len() as f64
}

/// Outcome of the energy test on one detected index.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnergyClass {
    /// `eps > eta`: at least two devices share the index.
    Collided,
    /// `gamma < eps <= eta`: a single device.
    Accepted,
    /// `eps <= gamma`: too weak to be a device.
    Rejected,
}

pub fn classify(eps: f64, eta: f64, gamma: f64) -> EnergyClass {
    if eps > eta {
        EnergyClass::Collided
    } else if eps > gamma {
        EnergyClass::Accepted
    } else {
        EnergyClass::Rejected
    }
}

/// Bits `[t B0, t B0 + Bp)` of the message.
pub fn slide_window(v: &[u8], t: usize, bp: usize, b0: usize) -> Result<Bits> {
    let start = t * b0;
    if start + bp > v.len() {
        return Err(Error::WindowOutOfRange { t, bp, b0, len: v.len() });
    }
    Ok(v[start..start + bp].to_vec())
}

/// Largest window round that still fits in a B-bit message.
pub fn max_window_round(b: usize, bp: usize, b0: usize) -> usize {
    (b - bp) / b0
}

/// Joins consecutive windows that overlap in `Bp - B0` bits.
pub fn stitch(windows: &[Bits], b0: usize) -> Result<Bits> {
    let Some(first) = windows.first() else {
        return Ok(Vec::new());
    };
    let bp = first.len();
    let mut out = first.clone();
    for (t, w) in windows.iter().enumerate().skip(1) {
        if w.len() != bp || b0 == 0 || b0 >= bp {
            return Err(Error::DimensionMismatch(format!("window {t} of {} bits, Bp = {bp}, B0 = {b0}", w.len())));
        }
        if windows[t - 1][b0..] != w[..bp - b0] {
            return Err(Error::OverlapMismatch(t - 1, t));
        }
        out.extend_from_slice(&w[bp - b0..]);
    }
    Ok(out)
}

/// Same as [`stitch`] for a chain of 1-based preamble indices.
pub fn stitch_indices(chain: &[PreambleIndex], bp: usize, b0: usize) -> Result<Bits> {
    let windows: Vec<Bits> = chain.iter().map(|&i| index_to_bits(i, bp)).collect();
    stitch(&windows, b0)
}

/// The collided parent indices of round `t - 1` whose trailing `Bp - B0`
/// bits equal the leading bits of `child`.
pub fn parents_of(child: PreambleIndex, collided: &[PreambleIndex], bp: usize, b0: usize) -> Vec<PreambleIndex> {
    let common = bp - b0;
    let mask = (1u32 << common) - 1;
    let head = (child - 1) >> b0;
    collided.iter().copied().filter(|&p| (p - 1) & mask == head).collect()
}

/// Unique parent of `child`, or the reason the splice fails.
pub fn link_parent(child: PreambleIndex, collided: &[PreambleIndex], bp: usize, b0: usize) -> Result<Option<PreambleIndex>> {
    match parents_of(child, collided, bp, b0)[..] {
        [] => Ok(None),
        [p] => Ok(Some(p)),
        ref ps => Err(Error::AmbiguousSplice(ps.len())),
    }
}

// ---------------------------------------------------------------------------
// Analytics

/// Probability that `k` devices choosing uniformly among `m` values all differ,
/// `m (m-1) ... (m-k+1) / m^k`, extended to real `k` through the gamma function.
pub fn p_no_collision(k: f64, m: f64) -> f64 {
    if k <= 1.0 {
        return 1.0;
    }
    if k > m {
        return 0.0;
    }
    let ln = libm::lgamma(m + 1.0) - libm::lgamma(m - k + 1.0) - k * m.ln();
    ln.exp().clamp(0.0, 1.0)
}

/// Closed-form expectations for the sliding-window protocol.
#[derive(Debug, Clone, PartialEq)]
pub struct CollisionAnalytics {
    pub ka: usize,
    pub mp: f64,
    /// `P_no_colli` for the initial window.
    pub p_no_collision: f64,
    /// Expected collided devices after each round, `k[0]` before any sliding.
    pub collided: Vec<f64>,
    /// `Ka (1 - P_no_colli)^(l + 1)`.
    pub bound: Vec<f64>,
    /// Expected number of distinct collided preambles in the initial window.
    pub collided_messages: f64,
    /// Probability that the common parts of those preambles all differ.
    pub p_common_distinct: f64,
}

/// Expected collided counts per round. The collided devices are spread
/// evenly over the expected number of collided preambles, and each group
/// draws its `B0` fresh bits independently.
pub fn collision_analytics(ka: usize, bp: usize, b0: usize, rounds: usize) -> CollisionAnalytics {
    let mp = 2f64.powi(bp as i32);
    let mp1 = 2f64.powi(b0 as i32);
    let p0 = p_no_collision(ka as f64, mp);
    let kf = ka as f64;
    let q = 1.0 - 1.0 / mp;
    let collided_messages = if ka < 2 {
        0.0
    } else {
        mp * (1.0 - q.powf(kf) - kf / mp * q.powf(kf - 1.0))
    };
    let groups = collided_messages.max(1.0);
    let mut collided = vec![kf * (1.0 - p0)];
    for l in 1..=rounds {
        let k = collided[l - 1];
        collided.push(k * (1.0 - p_no_collision(k / groups, mp1)));
    }
    let bound = (0..=rounds).map(|l| kf * (1.0 - p0).powi(l as i32 + 1)).collect();
    let common = 2f64.powi((bp - b0) as i32);
    CollisionAnalytics {
        ka,
        mp,
        p_no_collision: p0,
        collided,
        bound,
        collided_messages,
        p_common_distinct: p_no_collision(collided_messages, common),
    }
}

/// Index-level Monte Carlo of the protocol with perfect energy detection:
/// number of collided devices after each round `0..=rounds`.
pub fn simulate_collided_counts<R: Rng + ?Sized>(
    rng: &mut R,
    ka: usize,
    bp: usize,
    b0: usize,
    rounds: usize,
) -> Vec<usize> {
    let b = bp + rounds * b0;
    let msgs: Vec<Bits> = (0..ka).map(|_| (0..b).map(|_| rng.random_range(0..2u8)).collect()).collect();
    let mut pending: Vec<usize> = (0..ka).collect();
    let mut counts = Vec::with_capacity(rounds + 1);
    for t in 0..=rounds {
        let mut groups: BTreeMap<Bits, Vec<usize>> = BTreeMap::new();
        for &d in &pending {
            groups.entry(msgs[d][t * b0..t * b0 + bp].to_vec()).or_default().push(d);
        }
        pending = groups.into_values().filter(|g| g.len() > 1).flatten().collect();
        counts.push(pending.len());
    }
    counts
}

// ---------------------------------------------------------------------------
// Protocol

/// Source of the CS-phase observation blocks and of the LDPC-phase block.
pub trait Uplink {
    /// Lp x M observation of the first preamble transmission.
    fn preamble_block(&self) -> ArrayView2<'_, C64>;

    /// Round-`t` block sent by every device whose round `t - 1` preamble is in
    /// `collided`, or `None` if this link cannot retransmit.
    fn retransmit(&mut self, t: usize, collided: &[PreambleIndex]) -> Result<Option<Array2<C64>>>;

    /// Lc x M observation of the LDPC phase.
    fn ldpc_block(&mut self) -> Result<Array2<C64>>;
}

/// A single received frame; retransmission is impossible.
#[derive(Debug, Clone)]
pub struct FrameUplink {
    y: Array2<C64>,
    lp: usize,
}

impl FrameUplink {
    pub fn new(y: Array2<C64>, lp: usize) -> Self {
        FrameUplink { y, lp }
    }
}

impl Uplink for FrameUplink {
    fn preamble_block(&self) -> ArrayView2<'_, C64> {
        self.y.slice(ndarray::s![..self.lp, ..])
    }

    fn retransmit(&mut self, _t: usize, _collided: &[PreambleIndex]) -> Result<Option<Array2<C64>>> {
        Ok(None)
    }

    fn ldpc_block(&mut self) -> Result<Array2<C64>> {
        Ok(self.y.slice(ndarray::s![self.lp.., ..]).to_owned())
    }
}

/// One round of the protocol as seen by the receiver.
#[derive(Debug, Clone, PartialEq)]
pub struct CollisionRound {
    pub t: usize,
    pub window_offset: usize,
    pub collided: Vec<PreambleIndex>,
    pub accepted: Vec<PreambleIndex>,
}

/// A device whose preamble chain ended in an accepted index, or was still
/// flagged as collided when the protocol stopped.
#[derive(Debug, Clone)]
pub struct ResolvedDevice {
    /// Preamble index in rounds `0..chain.len()`.
    pub chain: Vec<PreambleIndex>,
    /// Channel estimate (unit-power scale) from the accepting round.
    pub channel: Vec<C64>,
    pub cov: Covariance,
    pub energy: f64,
}

impl ResolvedDevice {
    pub fn original_index(&self) -> PreambleIndex {
        self.chain[0]
    }

    pub fn final_index(&self) -> PreambleIndex {
        *self.chain.last().expect("non-empty chain")
    }

    /// Stitched window bits, `Bp + (rounds) B0` long.
    pub fn preamble_bits(&self, bp: usize, b0: usize) -> Result<Bits> {
        stitch_indices(&self.chain, bp, b0)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct DropCounts {
    /// Active indices rejected by the energy floor.
    pub low_energy: usize,
    /// Retransmitted indices with no collided parent.
    pub orphan: usize,
    /// Retransmitted indices matching several collided parents.
    pub ambiguous: usize,
}

#[derive(Debug, Clone)]
pub struct ProtocolOutcome {
    pub devices: Vec<ResolvedDevice>,
    pub rounds: Vec<CollisionRound>,
    /// Observation blocks, the first preamble block first.
    pub blocks: Vec<Array2<C64>>,
    /// CS-phase decoder output of the first block.
    pub initial: DadCeResult,
    pub drops: DropCounts,
    /// Chains still flagged as collided when the protocol stopped. They are
    /// kept in `devices`; the LDPC stage decides whether one of them decodes.
    pub unresolved: usize,
    /// Channel uses spent on retransmissions.
    pub extra_channel_uses: usize,
}

/// Activity prior of a retransmission round: about two devices per collided index.
pub fn retransmission_pa(n_collided: usize, n_codewords: usize) -> f64 {
    (2.0 * n_collided as f64 / n_codewords as f64).min(0.5)
}

/// Energy detection, feedback and window sliding until no index is collided,
/// `t_max` retransmissions were made, or the windows run out of bits.
pub fn run_protocol(cfg: &ValidatedConfig, codebook: &Codebook, uplink: &mut dyn Uplink) -> Result<ProtocolOutcome> {
    let full = !cfg.diag_approx;
    let estimate = |y: ArrayView2<C64>, pa: f64| -> Result<DadCeResult> {
        let g = cs_graph(codebook, y, cfg.power, cfg.sigma2)?;
        run_ce(&g, CeOptions::from_config(cfg, pa), full, None)
    };
    let y0 = uplink.preamble_block().to_owned();
    let initial = estimate(y0.view(), cfg.pa)?;
    let mut blocks = vec![y0];
    let mut devices = Vec::new();
    let mut rounds = Vec::new();
    let mut drops = DropCounts::default();
    let mut unresolved = 0;
    let max_round = cfg.t_max.min(max_window_round(cfg.b, cfg.bp, cfg.b0));

    // Round-0 candidates: every detected index is its own chain.
    let mut candidates: Vec<(Vec<PreambleIndex>, usize)> =
        initial.active.iter().map(|&k| (vec![k as PreambleIndex + 1], k)).collect();
    let mut res = initial.clone();
    let mut t = 0;
    loop {
        let mut collided: Vec<(Vec<PreambleIndex>, PreambleIndex, usize)> = Vec::new();
        let mut round = CollisionRound { t, window_offset: t * cfg.b0, collided: vec![], accepted: vec![] };
        for (chain, k) in candidates.drain(..) {
            let h = res.mu_dec.row(k).to_vec();
            let eps = energy(&h);
            let class = if cfg.collision_avoidance {
                classify(eps, cfg.eta, cfg.gamma)
            } else {
                EnergyClass::Accepted
            };
            let idx = k as PreambleIndex + 1;
            match class {
                EnergyClass::Collided => {
                    round.collided.push(idx);
                    collided.push((chain, idx, k));
                }
                EnergyClass::Accepted => {
                    round.accepted.push(idx);
                    devices.push(ResolvedDevice { chain, channel: h, cov: res.sigma_dec[k].clone(), energy: eps });
                }
                EnergyClass::Rejected => drops.low_energy += 1,
            }
        }
        rounds.push(round);
        if collided.is_empty() {
            break;
        }
        let parents: Vec<PreambleIndex> = collided.iter().map(|c| c.1).collect();
        let next = if t == max_round { None } else { uplink.retransmit(t + 1, &parents)? };
        let Some(y) = next else {
            unresolved = collided.len();
            for (chain, _, k) in collided {
                let h = res.mu_dec.row(k).to_vec();
                devices.push(ResolvedDevice { energy: energy(&h), chain, channel: h, cov: res.sigma_dec[k].clone() });
            }
            break;
        };
        t += 1;
        res = estimate(y.view(), retransmission_pa(parents.len(), cfg.n_codewords))?;
        blocks.push(y);
        for &k in &res.active {
            let child = k as PreambleIndex + 1;
            match link_parent(child, &parents, cfg.bp, cfg.b0) {
                Ok(Some(p)) => {
                    let parent = collided.iter().find(|c| c.1 == p).expect("parent in list");
                    let mut chain = parent.0.clone();
                    chain.push(child);
                    candidates.push((chain, k));
                }
                Ok(None) => drops.orphan += 1,
                Err(_) => drops.ambiguous += 1,
            }
        }
    }
    let extra_channel_uses = (blocks.len() - 1) * cfg.lp;
    Ok(ProtocolOutcome { devices, rounds, blocks, initial, drops, unresolved, extra_channel_uses })
}

/// Preamble index chain a device with message `v` follows over `rounds + 1` windows.
pub fn window_chain(v: &[u8], rounds: usize, bp: usize, b0: usize) -> Result<Vec<PreambleIndex>> {
    (0..=rounds).map(|t| slide_window(v, t, bp, b0).map(|w| cs_encode(&w))).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn bits(s: &str) -> Bits {
        s.bytes().map(|c| c - b'0').collect()
    }

    #[test]
    fn energy_examples() {
        assert_eq!(energy(&[C64::new(0.0, 0.0); 4]), 0.0);
        assert_eq!(energy(&[C64::new(1.0, 1.0), C64::new(0.0, 0.0)]), 1.0);
    }

    #[test]
    fn classification_boundaries() {
        assert_eq!(classify(2.0, 1.5, 0.5), EnergyClass::Collided);
        assert_eq!(classify(1.0, 1.5, 0.5), EnergyClass::Accepted);
        assert_eq!(classify(1.5, 1.5, 0.5), EnergyClass::Accepted);
        assert_eq!(classify(0.5, 1.5, 0.5), EnergyClass::Rejected);
    }

    #[test]
    fn window_examples() {
        let v = bits("10110100");
        assert_eq!(slide_window(&v, 0, 4, 2).unwrap(), bits("1011"));
        assert_eq!(slide_window(&v, 1, 4, 2).unwrap(), bits("1101"));
        assert_eq!(slide_window(&v, 2, 4, 2).unwrap(), bits("0100"));
        assert!(matches!(slide_window(&v, 3, 4, 2), Err(Error::WindowOutOfRange { t: 3, .. })));
        assert_eq!(max_window_round(8, 4, 2), 2);
    }

    #[test]
    fn stitch_examples() {
        assert_eq!(stitch(&[bits("1011"), bits("1101")], 2).unwrap(), bits("101101"));
        assert!(matches!(stitch(&[bits("1011"), bits("0001")], 2), Err(Error::OverlapMismatch(0, 1))));
        let v = bits("1011010011");
        let chain = window_chain(&v, 3, 4, 2).unwrap();
        assert_eq!(stitch_indices(&chain, 4, 2).unwrap(), v);
    }

    #[test]
    fn ambiguous_splice() {
        // Two collided parents 0110 and 1010 share the common part "10";
        // the child 10xx cannot be attributed.
        let p1 = cs_encode(&bits("0110"));
        let p2 = cs_encode(&bits("1010"));
        let child = cs_encode(&bits("1011"));
        assert!(matches!(link_parent(child, &[p1, p2], 4, 2), Err(Error::AmbiguousSplice(2))));
        assert_eq!(link_parent(child, &[p1], 4, 2).unwrap(), Some(p1));
        let orphan = cs_encode(&bits("0011"));
        assert_eq!(link_parent(orphan, &[p1, p2], 4, 2).unwrap(), None);
    }

    #[test]
    fn no_collision_probabilities() {
        assert_eq!(p_no_collision(1.0, 16.0), 1.0);
        assert!((p_no_collision(2.0, 2.0) - 0.5).abs() < 1e-12);
        assert_eq!(p_no_collision(3.0, 2.0), 0.0);
        // 16 * 15 * ... * 9 / 16^8
        let want: f64 = (9..=16).map(|x| x as f64 / 16.0).product();
        assert!((p_no_collision(8.0, 16.0) - want).abs() < 1e-12);
    }

    #[test]
    fn analytics_chain_decreases() {
        let a = collision_analytics(8, 6, 3, 4);
        assert!(a.collided.windows(2).all(|w| w[1] < w[0] || w[0] == 0.0));
        assert!(a.collided[1] > 0.0);
        let a = collision_analytics(8, 4, 2, 4);
        assert!(a.collided.windows(2).all(|w| w[1] <= w[0]));
        assert!(a.bound.windows(2).all(|w| w[1] < w[0]));
        assert!((a.collided[0] - 8.0 * (1.0 - a.p_no_collision)).abs() < 1e-12);
        assert!(a.collided_messages > 1.0 && a.collided_messages < 4.0);
        assert_eq!(collision_analytics(1, 4, 2, 2).collided, vec![0.0; 3]);
    }

    #[test]
    fn index_level_round_zero_frequency() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 4000;
        let clean = (0..n).filter(|_| simulate_collided_counts(&mut rng, 8, 4, 2, 2)[0] == 0).count();
        let p = collision_analytics(8, 4, 2, 0).p_no_collision;
        let se = (p * (1.0 - p) / n as f64).sqrt();
        assert!((clean as f64 / n as f64 - p).abs() < 4.0 * se, "{clean} vs {p}");
    }

    #[test]
    fn frame_uplink_cannot_retransmit() {
        let y = Array2::from_elem((6, 2), C64::new(1.0, 0.0));
        let mut u = FrameUplink::new(y, 2);
        assert_eq!(u.preamble_block().dim(), (2, 2));
        assert!(u.retransmit(1, &[3]).unwrap().is_none());
        assert_eq!(u.ldpc_block().unwrap().dim(), (4, 2));
    }

    #[test]
    fn retransmission_prior() {
        assert_eq!(retransmission_pa(2, 64), 4.0 / 64.0);
        assert_eq!(retransmission_pa(40, 64), 0.5);
    }
}
