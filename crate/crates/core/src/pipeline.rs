//! End-to-end receiver: CS-phase detection with collision resolution, LDPC
//! decoding with interference cancellation, and the outer loop that feeds
//! decoded codewords back into channel estimation as extra pilots.

use std::collections::BTreeSet;

use ndarray::{s, Array2, ArrayView2};
use rand::Rng;

use crate::channel_sim::{sample_noise, superpose, transmit};
use crate::collision::{run_protocol, slide_window, DropCounts, ProtocolOutcome, ResolvedDevice, Uplink};
use crate::config::{LdpcIndexPolicy, Modulation, ValidatedConfig};
use crate::cs_codebook::{cs_encode, Codebook, PreambleIndex};
use crate::dad_ce::{run_ce, Activity, CeGraph, CeOptions, OutputPrior};
use crate::framing::{frame, ldpc_section, Interleaver};
use crate::ldpc_code::LdpcCode;
use crate::linalg::Covariance;
use crate::mimo_ldpc::{bpsk_moments, logistic, qpsk_moments, run_ldpc_sic, sic_subtract, LdpcDevice, LdpcOptions};
use crate::seeds::{mix, CODEBOOK_TAG, INTERLEAVER_TAG, LDPC_TAG};
use crate::{Bits, Error, Result, C64};

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };

/// Objects shared by every device and the receiver, all derived from the config seed.
#[derive(Debug, Clone)]
pub struct System {
    pub codebook: Codebook,
    pub code: LdpcCode,
    pub interleaver_seed: u64,
}

impl System {
    pub fn new(cfg: &ValidatedConfig) -> Result<Self> {
        Ok(System {
            codebook: Codebook::generate(mix(cfg.seed, CODEBOOK_TAG), cfg.lp, cfg.bp, cfg.max_codebook_entries)?,
            code: LdpcCode::build(mix(cfg.seed, LDPC_TAG), cfg.bc)?,
            interleaver_seed: mix(cfg.seed, INTERLEAVER_TAG),
        })
    }

    pub fn interleaver(&self, cfg: &ValidatedConfig, index: PreambleIndex) -> Interleaver {
        Interleaver::new(index, cfg.lc, self.interleaver_seed)
    }
}

/// Transmitter side of a trial: every device, its channel, and the protocol
/// state it keeps (the last round in which it transmitted a preamble).
pub struct SimulatedUplink<'a, R: Rng> {
    cfg: &'a ValidatedConfig,
    sys: &'a System,
    rng: R,
    messages: Vec<Bits>,
    h: Array2<C64>,
    y: Array2<C64>,
    last_round: Vec<usize>,
}

impl<'a, R: Rng> SimulatedUplink<'a, R> {
    /// Sends the first frame `[preamble; LDPC section]` of every device.
    pub fn new(cfg: &'a ValidatedConfig, sys: &'a System, messages: Vec<Bits>, h: Array2<C64>, mut rng: R) -> Result<Self> {
        if h.dim() != (messages.len(), cfg.m) {
            return Err(Error::DimensionMismatch(format!(
                "{} messages but a {:?} channel matrix",
                messages.len(),
                h.dim()
            )));
        }
        let frames = messages
            .iter()
            .map(|v| frame(cfg, &sys.codebook, &sys.code, sys.interleaver_seed, v).map(|f| f.0))
            .collect::<Result<Vec<_>>>()?;
        let y = transmit(&mut rng, &frames, h.view(), cfg.l, cfg.lp, cfg.sigma2)?.y;
        let n = messages.len();
        Ok(SimulatedUplink { cfg, sys, rng, messages, h, y, last_round: vec![0; n] })
    }

    pub fn messages(&self) -> &[Bits] {
        &self.messages
    }

    pub fn channels(&self) -> ArrayView2<'_, C64> {
        self.h.view()
    }

    /// Received first frame.
    pub fn frame(&self) -> ArrayView2<'_, C64> {
        self.y.view()
    }

    fn window_index(&self, d: usize, t: usize) -> Result<PreambleIndex> {
        slide_window(&self.messages[d], t, self.cfg.bp, self.cfg.b0).map(|w| cs_encode(&w))
    }

    /// Preamble indices device `d` actually sent, one per round.
    pub fn chain(&self, d: usize) -> Vec<PreambleIndex> {
        (0..=self.last_round[d]).map(|t| self.window_index(d, t).expect("sent windows fit")).collect()
    }

    fn ldpc_index(&self, d: usize) -> PreambleIndex {
        let t = match self.cfg.ldpc_index {
            LdpcIndexPolicy::Resolved => self.last_round[d],
            LdpcIndexPolicy::Original => 0,
        };
        self.window_index(d, t).expect("sent windows fit")
    }

    fn block(&mut self, rows: usize, xs: &[Vec<C64>], senders: &[usize]) -> Result<Array2<C64>> {
        let mut y = sample_noise(&mut self.rng, rows, self.cfg.m, self.cfg.sigma2);
        if !senders.is_empty() {
            let refs: Vec<&[C64]> = xs.iter().map(|x| x.as_slice()).collect();
            let h = self.h.select(ndarray::Axis(0), senders);
            y += &superpose(&refs, h.view())?;
        }
        Ok(y)
    }
}

impl<R: Rng> Uplink for SimulatedUplink<'_, R> {
    fn preamble_block(&self) -> ArrayView2<'_, C64> {
        self.y.slice(s![..self.cfg.lp, ..])
    }

    fn retransmit(&mut self, t: usize, collided: &[PreambleIndex]) -> Result<Option<Array2<C64>>> {
        let cfg = self.cfg;
        let amp = cfg.power.sqrt();
        let mut senders = Vec::new();
        let mut xs = Vec::new();
        for d in 0..self.messages.len() {
            if t == 0 || self.last_round[d] != t - 1 || !collided.contains(&self.window_index(d, t - 1)?) {
                continue;
            }
            let Ok(idx) = self.window_index(d, t) else {
                continue;
            };
            self.last_round[d] = t;
            senders.push(d);
            xs.push(self.sys.codebook.codeword(idx).iter().map(|&a| a * amp).collect());
        }
        self.block(cfg.lp, &xs, &senders).map(Some)
    }

    fn ldpc_block(&mut self) -> Result<Array2<C64>> {
        let cfg = self.cfg;
        if self.last_round.iter().all(|&r| r == 0) || cfg.ldpc_index == LdpcIndexPolicy::Original {
            return Ok(self.y.slice(s![cfg.lp.., ..]).to_owned());
        }
        // Devices re-keyed by the protocol send the LDPC phase with their final index.
        let amp = cfg.power.sqrt();
        let senders: Vec<usize> = (0..self.messages.len()).collect();
        let xs = senders
            .iter()
            .map(|&d| {
                let il = self.sys.interleaver(cfg, self.ldpc_index(d));
                let word = self.sys.code.encode(&self.messages[d][cfg.bp..]);
                ldpc_section(&word, cfg.modulation, &il).map(|s| s.into_iter().map(|z| z * amp).collect())
            })
            .collect::<Result<Vec<Vec<C64>>>>()?;
        self.block(cfg.lc, &xs, &senders)
    }
}

/// Receiver state of one resolved device.
#[derive(Debug, Clone)]
pub struct DeviceEstimate {
    pub chain: Vec<PreambleIndex>,
    /// Channel estimate `h` (unit-power scale).
    pub channel: Vec<C64>,
    pub cov: Covariance,
    /// Parity-valid LDPC codeword once decoded.
    pub codeword: Option<Bits>,
    /// Full B-bit message once decoded and stitched.
    pub message: Option<Bits>,
}

#[derive(Debug, Clone)]
pub struct PipelineResult {
    /// Recovered messages, sorted and without repeats.
    pub messages: Vec<Bits>,
    pub devices: Vec<DeviceEstimate>,
    /// Channel estimates right after the CS phase, aligned with `devices`.
    pub initial_channels: Vec<Vec<C64>>,
    /// Retransmission rounds used by collision resolution.
    pub collision_rounds: usize,
    pub drops: DropCounts,
    /// Devices that entered decoding still flagged as collided.
    pub unresolved: usize,
    /// Decoded words whose stitched preamble disagrees with the payload.
    pub stitch_rejects: usize,
    /// Newly decoded devices per outer round.
    pub decoded_per_round: Vec<usize>,
    pub ldpc_iterations: usize,
    /// L plus retransmissions.
    pub channel_uses: usize,
}

impl PipelineResult {
    pub fn outer_rounds(&self) -> usize {
        self.decoded_per_round.len()
    }
}

/// `v_p | v_c`, where `v_p` is rebuilt from the window chain. Windows past
/// the first reach into the payload and must agree with the decoded bits.
pub fn stitch_message(chain: &[PreambleIndex], v_c: &[u8], bp: usize, b0: usize) -> Result<Bits> {
    let pre = crate::collision::stitch_indices(chain, bp, b0)?;
    let extra = &pre[bp..];
    if extra.len() > v_c.len() || v_c[..extra.len()] != *extra {
        return Err(Error::OverlapMismatch(0, chain.len() - 1));
    }
    let mut v = pre[..bp].to_vec();
    v.extend_from_slice(v_c);
    Ok(v)
}

/// Per-channel-use mean and variance of a device's LDPC section given bit LLRs.
pub fn soft_section(llr: &[f64], modulation: Modulation, il: &Interleaver) -> (Vec<C64>, Vec<f64>) {
    let (mut mean, mut var): (Vec<C64>, Vec<f64>) = match modulation {
        Modulation::Bpsk => llr.iter().map(|&l| bpsk_moments(logistic(l))).unzip(),
        Modulation::Qpsk => llr
            .chunks_exact(2)
            .map(|c| qpsk_moments(logistic(c[0]), logistic(c[1])))
            .unzip(),
    };
    mean.resize(il.len(), ZERO);
    var.resize(il.len(), 0.0);
    (il.interleave(&mean), il.interleave(&var))
}

fn ldpc_device(cfg: &ValidatedConfig, sys: &System, d: &DeviceEstimate) -> LdpcDevice {
    let index = match cfg.ldpc_index {
        LdpcIndexPolicy::Resolved => *d.chain.last().expect("non-empty chain"),
        LdpcIndexPolicy::Original => d.chain[0],
    };
    let amp = cfg.power.sqrt();
    LdpcDevice { channel: d.channel.iter().map(|&h| h * amp).collect(), interleaver: sys.interleaver(cfg, index) }
}

/// Channel re-estimation with activity fixed. Rows are every CS block plus
/// the LDPC channel uses that carry at least one decoded word; decoded
/// symbols act as pilots, undecoded devices enter through their soft
/// symbol moments as extra mean and noise.
fn soft_pilot_ce(
    cfg: &ValidatedConfig,
    sys: &System,
    blocks: &[Array2<C64>],
    y_c: ArrayView2<C64>,
    devices: &mut [DeviceEstimate],
    soft: &[Option<Vec<f64>>],
) -> Result<()> {
    let m = cfg.m;
    let amp = cfg.power.sqrt();
    let p = cfg.power;
    let mut g = CeGraph::new(m, devices.len());
    let noise = vec![cfg.sigma2; m];
    for (b, y) in blocks.iter().enumerate() {
        let members: Vec<(usize, &[C64])> = devices
            .iter()
            .enumerate()
            .filter(|(_, d)| d.chain.len() > b)
            .map(|(k, d)| (k, sys.codebook.codeword(d.chain[b])))
            .collect();
        if members.is_empty() {
            continue;
        }
        for l in 0..y.nrows() {
            let row: Vec<C64> = y.row(l).to_vec();
            g.push_row(&row, &noise, members.iter().map(|&(k, a)| (k, a[l] * amp)))?;
        }
    }
    // Known symbols of decoded devices, soft moments of the rest.
    let mut pilots: Vec<(usize, Vec<C64>)> = Vec::new();
    let mut mean = Array2::<C64>::zeros(y_c.dim());
    let mut extra = Array2::<f64>::zeros(y_c.dim());
    for (k, d) in devices.iter().enumerate() {
        let il = ldpc_device(cfg, sys, d).interleaver;
        if let Some(word) = &d.codeword {
            pilots.push((k, ldpc_section(word, cfg.modulation, &il)?));
            continue;
        }
        let (mu_x, var_x) = match &soft[k] {
            Some(llr) => soft_section(llr, cfg.modulation, &il),
            None => soft_section(&vec![0.0; sys.code.n()], cfg.modulation, &il),
        };
        let sig = d.cov.diagonal();
        for l in 0..y_c.nrows() {
            let (mx, vx) = (mu_x[l], var_x[l]);
            if mx == ZERO && vx == 0.0 {
                continue;
            }
            for j in 0..m {
                mean[[l, j]] += mx * d.channel[j] * amp;
                extra[[l, j]] += p * (vx * d.channel[j].norm_sqr() + (mx.norm_sqr() + vx) * sig[j]);
            }
        }
    }
    for l in 0..y_c.nrows() {
        let edges: Vec<(usize, C64)> =
            pilots.iter().filter(|(_, x)| x[l] != ZERO).map(|(k, x)| (*k, x[l] * amp)).collect();
        if edges.is_empty() {
            continue;
        }
        let row: Vec<C64> = (0..m).map(|j| y_c[[l, j]] - mean[[l, j]]).collect();
        let nz: Vec<f64> = (0..m).map(|j| cfg.sigma2 + extra[[l, j]]).collect();
        g.push_row(&row, &nz, edges)?;
    }
    let prior = OutputPrior {
        mu: Array2::from_shape_fn((devices.len(), m), |(k, j)| devices[k].channel[j]),
        cov: devices.iter().map(|d| d.cov.clone()).collect(),
    };
    let opts = CeOptions {
        n_iter: cfg.n_iter_dadce,
        activity: Activity::Fixed,
        damping: cfg.damping,
        llr_clamp: cfg.llr_clamp,
        schedule: cfg.schedule,
    };
    let res = run_ce(&g, opts, !cfg.diag_approx, Some(&prior))?;
    for (k, d) in devices.iter_mut().enumerate() {
        d.channel = res.mu_dec.row(k).to_vec();
        d.cov = res.sigma_dec[k].clone();
    }
    Ok(())
}

/// Runs the whole receiver against an uplink.
pub fn run_joint(cfg: &ValidatedConfig, sys: &System, uplink: &mut dyn Uplink) -> Result<PipelineResult> {
    let ProtocolOutcome { devices: resolved, rounds, blocks, drops, unresolved, extra_channel_uses, .. } =
        run_protocol(cfg, &sys.codebook, uplink)?;
    let y_c = uplink.ldpc_block()?;
    let mut devices: Vec<DeviceEstimate> = resolved
        .into_iter()
        .map(|ResolvedDevice { chain, channel, cov, .. }| DeviceEstimate {
            chain,
            channel,
            cov,
            codeword: None,
            message: None,
        })
        .collect();
    let initial_channels = devices.iter().map(|d| d.channel.clone()).collect();
    let opts = LdpcOptions {
        modulation: cfg.modulation,
        sigma2: cfg.sigma2,
        n_iter: cfg.n_iter_ldpc,
        sic: cfg.sic,
        llr_clamp: cfg.llr_clamp,
    };
    let mut decoded_per_round = Vec::new();
    let mut ldpc_iterations = 0;
    let mut soft: Vec<Option<Vec<f64>>> = vec![None; devices.len()];
    for _ in 0..cfg.n_iter_joint {
        let pending: Vec<usize> = (0..devices.len()).filter(|&k| devices[k].codeword.is_none()).collect();
        if pending.is_empty() {
            break;
        }
        // Residual against the original y_c with the current channel estimates.
        let residual = if cfg.sic {
            let done: Vec<(Bits, LdpcDevice)> = devices
                .iter()
                .filter_map(|d| d.codeword.clone().map(|w| (w, ldpc_device(cfg, sys, d))))
                .collect();
            let refs: Vec<(&[u8], &LdpcDevice)> = done.iter().map(|(w, d)| (w.as_slice(), d)).collect();
            sic_subtract(y_c.view(), &refs, cfg.modulation)?
        } else {
            y_c.clone()
        };
        let ldpc_devs: Vec<LdpcDevice> = pending.iter().map(|&k| ldpc_device(cfg, sys, &devices[k])).collect();
        let out = run_ldpc_sic(&sys.code, &ldpc_devs, residual.view(), opts)?;
        ldpc_iterations += out.iterations;
        decoded_per_round.push(out.decoded.len());
        for (pos, word) in out.decoded {
            devices[pending[pos]].codeword = Some(word);
        }
        for (pos, llr) in out.soft.into_iter().enumerate() {
            soft[pending[pos]] = llr;
        }
        if decoded_per_round.last() == Some(&0) || !cfg.joint {
            break;
        }
        soft_pilot_ce(cfg, sys, &blocks, y_c.view(), &mut devices, &soft)?;
        if devices.iter().all(|d| d.codeword.is_some()) {
            break;
        }
    }
    let mut messages = BTreeSet::new();
    let mut stitch_rejects = 0;
    for d in &mut devices {
        let Some(word) = &d.codeword else { continue };
        match stitch_message(&d.chain, sys.code.message(word), cfg.bp, cfg.b0) {
            Ok(v) => {
                messages.insert(v.clone());
                d.message = Some(v);
            }
            Err(_) => stitch_rejects += 1,
        }
    }
    Ok(PipelineResult {
        messages: messages.into_iter().collect(),
        devices,
        initial_channels,
        collision_rounds: rounds.len() - 1,
        drops,
        unresolved,
        stitch_rejects,
        decoded_per_round,
        ldpc_iterations,
        channel_uses: cfg.l + extra_channel_uses,
    })
}
