//! Monte Carlo driver: one independent pipeline per trial, metric
//! computation against the ground truth, aggregation and CSV output.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::channel_sim::sample_channels;
use crate::config::{SystemConfig, ValidatedConfig};
use crate::cs_codebook::PreambleIndex;
use crate::pipeline::{run_joint, PipelineResult, SimulatedUplink, System};
use crate::seeds::trial_seed;
use crate::{Bits, Error, Result, C64};

/// NMSE reported for a perfect estimate.
pub const NMSE_FLOOR_DB: f64 = -100.0;

/// `(p_md, p_fa)` on message sets; `p_fa = 0` for an empty output list.
pub fn compute_pmd_pfa(truth: &[Bits], decoded: &[Bits]) -> (f64, f64) {
    let t: BTreeSet<&Bits> = truth.iter().collect();
    let d: BTreeSet<&Bits> = decoded.iter().collect();
    let p_md = if t.is_empty() { 0.0 } else { t.difference(&d).count() as f64 / t.len() as f64 };
    let p_fa = if d.is_empty() { 0.0 } else { d.difference(&t).count() as f64 / d.len() as f64 };
    (p_md, p_fa)
}

/// Squared error and squared norm summed over true channels; `None`
/// estimates count as zero.
pub fn nmse_sums(pairs: &[(&[C64], Option<&[C64]>)]) -> (f64, f64) {
    pairs.iter().fold((0.0, 0.0), |(err, nrm), (h, est)| {
        let e: f64 = match est {
            Some(g) => h.iter().zip(g.iter()).map(|(a, b)| (a - b).norm_sqr()).sum(),
            None => h.iter().map(|a| a.norm_sqr()).sum(),
        };
        (err + e, nrm + h.iter().map(|a| a.norm_sqr()).sum::<f64>())
    })
}

pub fn to_db(err: f64, norm: f64) -> f64 {
    if norm == 0.0 {
        return f64::NAN;
    }
    let r = err / norm;
    if r <= 0.0 {
        NMSE_FLOOR_DB
    } else {
        (10.0 * r.log10()).max(NMSE_FLOOR_DB)
    }
}

/// NMSE in dB of estimated against true channels.
pub fn compute_nmse(pairs: &[(&[C64], Option<&[C64]>)]) -> f64 {
    let (e, n) = nmse_sums(pairs);
    to_db(e, n)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialMetrics {
    pub seed: u64,
    pub p_md: f64,
    pub p_fa: f64,
    pub nmse_err: f64,
    pub nmse_norm: f64,
    pub nmse_db: f64,
    /// Same, with the channel estimates right after the CS phase.
    pub initial_nmse_db: f64,
    pub collision_rounds: usize,
    pub outer_rounds: usize,
    pub ldpc_iterations: usize,
    pub channel_uses: usize,
    pub n_decoded: usize,
}

/// Pairs each true device with the estimate whose index chain matches its
/// own, provided no other device followed the same chain.
fn associate(chains: &[Vec<PreambleIndex>], result: &PipelineResult) -> Vec<Option<usize>> {
    let mut count: HashMap<&[PreambleIndex], usize> = HashMap::new();
    for c in chains {
        *count.entry(c.as_slice()).or_default() += 1;
    }
    let est: HashMap<&[PreambleIndex], usize> =
        result.devices.iter().enumerate().map(|(k, d)| (d.chain.as_slice(), k)).collect();
    chains
        .iter()
        .map(|c| if count[c.as_slice()] == 1 { est.get(c.as_slice()).copied() } else { None })
        .collect()
}

/// One trial with its own random stream.
pub fn run_trial(cfg: &ValidatedConfig, sys: &System, seed: u64) -> Result<TrialMetrics> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let messages: Vec<Bits> = (0..cfg.ka).map(|_| (0..cfg.b).map(|_| rng.random_range(0..2u8)).collect()).collect();
    let h = sample_channels(&mut rng, cfg.ka, cfg.m);
    let link_rng = ChaCha8Rng::seed_from_u64(rng.random());
    let mut up = SimulatedUplink::new(cfg, sys, messages.clone(), h.clone(), link_rng)?;
    let result = run_joint(cfg, sys, &mut up)?;
    let chains: Vec<Vec<PreambleIndex>> = (0..cfg.ka).map(|d| up.chain(d)).collect();
    let assoc = associate(&chains, &result);
    let rows: Vec<Vec<C64>> = h.rows().into_iter().map(|r| r.to_vec()).collect();
    let pairs = |est: &[Vec<C64>]| -> (f64, f64) {
        let p: Vec<(&[C64], Option<&[C64]>)> =
            rows.iter().zip(&assoc).map(|(h, a)| (h.as_slice(), a.map(|k| est[k].as_slice()))).collect();
        nmse_sums(&p)
    };
    let finals: Vec<Vec<C64>> = result.devices.iter().map(|d| d.channel.clone()).collect();
    let (err, norm) = pairs(&finals);
    let (ierr, inorm) = pairs(&result.initial_channels);
    let (p_md, p_fa) = compute_pmd_pfa(&messages, &result.messages);
    Ok(TrialMetrics {
        seed,
        p_md,
        p_fa,
        nmse_err: err,
        nmse_norm: norm,
        nmse_db: to_db(err, norm),
        initial_nmse_db: to_db(ierr, inorm),
        collision_rounds: result.collision_rounds,
        outer_rounds: result.outer_rounds(),
        ldpc_iterations: result.ldpc_iterations,
        channel_uses: result.channel_uses,
        n_decoded: result.messages.len(),
    })
}

/// Trials `0..trials` of a config, in trial order whatever the thread count.
pub fn run_trials(cfg: &ValidatedConfig, trials: usize) -> Result<Vec<TrialMetrics>> {
    let sys = System::new(cfg)?;
    (0..trials as u64)
        .into_par_iter()
        .map(|t| run_trial(cfg, &sys, trial_seed(cfg.seed, t)))
        .collect()
}

pub fn median(xs: &[f64]) -> f64 {
    let mut v: Vec<f64> = xs.iter().copied().filter(|x| !x.is_nan()).collect();
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Aggregate {
    pub trials: usize,
    pub p_md: f64,
    pub p_fa: f64,
    pub p_e: f64,
    /// Median of the per-trial NMSE.
    pub nmse_db: f64,
    /// NMSE of all trials pooled.
    pub pooled_nmse_db: f64,
    /// Mean number of outer decoding rounds.
    pub avg_rounds: f64,
    pub avg_channel_uses: f64,
}

pub fn aggregate(metrics: &[TrialMetrics]) -> Aggregate {
    let n = metrics.len();
    let mean = |f: &dyn Fn(&TrialMetrics) -> f64| -> f64 {
        if n == 0 {
            f64::NAN
        } else {
            metrics.iter().map(f).sum::<f64>() / n as f64
        }
    };
    let p_md = mean(&|m| m.p_md);
    let p_fa = mean(&|m| m.p_fa);
    let err: f64 = metrics.iter().map(|m| m.nmse_err).sum();
    let norm: f64 = metrics.iter().map(|m| m.nmse_norm).sum();
    Aggregate {
        trials: n,
        p_md,
        p_fa,
        p_e: p_md + p_fa,
        nmse_db: median(&metrics.iter().map(|m| m.nmse_db).collect::<Vec<_>>()),
        pooled_nmse_db: to_db(err, norm),
        avg_rounds: mean(&|m| m.outer_rounds as f64),
        avg_channel_uses: mean(&|m| m.channel_uses as f64),
    }
}

/// Sweepable parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    EbN0,
    M,
    Ka,
    L,
    /// Code rate `B / L`; sets `L = round(B / Rc)`.
    Rc,
}

impl FromStr for SweepAxis {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ebn0_db" => Ok(SweepAxis::EbN0),
            "M" | "m" => Ok(SweepAxis::M),
            "Ka" | "ka" => Ok(SweepAxis::Ka),
            "L" | "l" => Ok(SweepAxis::L),
            "Rc" | "rc" => Ok(SweepAxis::Rc),
            _ => Err(Error::InvalidConfig(format!("unknown sweep axis {s:?}"))),
        }
    }
}

impl fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SweepAxis::EbN0 => "ebn0_db",
            SweepAxis::M => "M",
            SweepAxis::Ka => "Ka",
            SweepAxis::L => "L",
            SweepAxis::Rc => "Rc",
        })
    }
}

impl SweepAxis {
    pub fn apply(self, base: &SystemConfig, value: f64) -> Result<SystemConfig> {
        let mut c = base.clone();
        let count = |v: f64| -> Result<usize> {
            if v >= 1.0 && v.fract() == 0.0 {
                Ok(v as usize)
            } else {
                Err(Error::InvalidConfig(format!("{self} needs a positive integer, got {v}")))
            }
        };
        match self {
            SweepAxis::EbN0 => c.ebn0_db = value,
            SweepAxis::M => c.m = count(value)?,
            SweepAxis::Ka => c.ka = count(value)?,
            SweepAxis::L => c.l = count(value)?,
            SweepAxis::Rc => {
                if !(value > 0.0) {
                    return Err(Error::InvalidConfig(format!("Rc must be positive, got {value}")));
                }
                c.l = (c.b as f64 / value).round() as usize;
            }
        }
        Ok(c)
    }
}

#[derive(Debug, Clone)]
pub struct SweepRow {
    pub axis: SweepAxis,
    pub value: f64,
    pub seed: u64,
    pub result: std::result::Result<Aggregate, String>,
}

/// One aggregate per value; a point whose config is invalid is reported
/// in its row and the sweep moves on.
pub fn run_sweep(base: &SystemConfig, axis: SweepAxis, values: &[f64], trials: usize) -> Vec<SweepRow> {
    values
        .iter()
        .map(|&value| {
            let result = axis
                .apply(base, value)
                .and_then(|c| c.validate())
                .and_then(|cfg| run_trials(&cfg, trials))
                .map(|m| aggregate(&m))
                .map_err(|e| e.to_string());
            SweepRow { axis, value, seed: base.seed, result }
        })
        .collect()
}

pub const CSV_HEADER: [&str; 10] =
    ["axis", "value", "trials", "p_md", "p_fa", "p_e", "nmse_db", "avg_rounds", "avg_channel_uses", "seed"];

/// Writes the sweep table. Failed points keep their axis, value and seed
/// with empty metric fields.
pub fn write_csv<W: Write>(rows: &[SweepRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| Error::Io(std::io::Error::other(e));
    w.write_record(CSV_HEADER).map_err(io)?;
    for r in rows {
        let mut rec = vec![r.axis.to_string(), r.value.to_string()];
        match &r.result {
            Ok(a) => rec.extend([
                a.trials.to_string(),
                a.p_md.to_string(),
                a.p_fa.to_string(),
                a.p_e.to_string(),
                a.nmse_db.to_string(),
                a.avg_rounds.to_string(),
                a.avg_channel_uses.to_string(),
            ]),
            Err(_) => rec.extend(std::iter::repeat_n(String::new(), 7)),
        }
        rec.push(r.seed.to_string());
        w.write_record(&rec).map_err(io)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64) -> C64 {
        C64::new(re, 0.0)
    }

    #[test]
    fn pmd_pfa_examples() {
        let (a, b, x) = (vec![0u8, 1], vec![1u8, 1], vec![0u8, 0]);
        assert_eq!(compute_pmd_pfa(&[a.clone()], &[a.clone()]), (0.0, 0.0));
        assert_eq!(compute_pmd_pfa(&[a.clone()], &[]), (1.0, 0.0));
        assert_eq!(compute_pmd_pfa(&[a.clone(), b], &[a, x]), (0.5, 0.5));
    }

    #[test]
    fn nmse_examples() {
        let h = [c(1.0), c(-2.0)];
        assert_eq!(compute_nmse(&[(&h, Some(&h))]), NMSE_FLOOR_DB);
        assert!((compute_nmse(&[(&h, None)]) - 0.0).abs() < 1e-12);
        assert!((compute_nmse(&[(&h, Some(&[c(0.0), c(0.0)]))])).abs() < 1e-12);
        let e = [c(1.1), c(-2.2)];
        assert!((compute_nmse(&[(&h, Some(&e))]) + 20.0).abs() < 1e-9);
    }

    #[test]
    fn median_and_aggregate() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        let m = |p_md: f64, p_fa: f64, err: f64| TrialMetrics {
            seed: 0,
            p_md,
            p_fa,
            nmse_err: err,
            nmse_norm: 1.0,
            nmse_db: to_db(err, 1.0),
            initial_nmse_db: 0.0,
            collision_rounds: 0,
            outer_rounds: 2,
            ldpc_iterations: 0,
            channel_uses: 100,
            n_decoded: 1,
        };
        let a = aggregate(&[m(0.5, 0.0, 0.1), m(0.0, 0.25, 0.01)]);
        assert_eq!((a.p_md, a.p_fa, a.p_e), (0.25, 0.125, 0.375));
        assert!((a.nmse_db + 15.0).abs() < 1e-9);
        assert!((a.pooled_nmse_db - 10.0 * (0.055f64).log10()).abs() < 1e-9);
        assert_eq!((a.avg_rounds, a.avg_channel_uses), (2.0, 100.0));
    }

    #[test]
    fn axis_application() {
        let base = SystemConfig::default();
        assert_eq!(SweepAxis::Rc.apply(&base, 0.06).unwrap().l, 1600);
        assert_eq!(SweepAxis::M.apply(&base, 8.0).unwrap().m, 8);
        assert!(SweepAxis::Ka.apply(&base, 2.5).is_err());
        assert!("snr".parse::<SweepAxis>().is_err());
    }

    #[test]
    fn bad_point_does_not_abort() {
        let base = SystemConfig { b: 22, bp: 6, bc: 16, lp: 32, l: 64, m: 2, ka: 1, b0: 3, ..SystemConfig::default() };
        let rows = run_sweep(&base, SweepAxis::L, &[20.0], 1);
        assert!(rows[0].result.is_err());
        let mut buf = Vec::new();
        write_csv(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().nth(1).unwrap(), format!("L,20,,,,,,,,{}", base.seed));
    }
}
