//! Scenario parameters, validation and derived quantities.
//!
//! Configs are read from `key = value` files (one pair per line, `#` starts a
//! comment) and the same keys are accepted as command-line overrides.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Modulation {
    Bpsk,
    Qpsk,
}

impl Modulation {
    pub fn bits_per_symbol(self) -> usize {
        match self {
            Modulation::Bpsk => 1,
            Modulation::Qpsk => 2,
        }
    }
}

impl FromStr for Modulation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "bpsk" => Ok(Modulation::Bpsk),
            "qpsk" => Ok(Modulation::Qpsk),
            _ => Err(Error::Parse(format!("unknown modulation `{s}`"))),
        }
    }
}

impl fmt::Display for Modulation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Modulation::Bpsk => "bpsk",
            Modulation::Qpsk => "qpsk",
        })
    }
}

/// Which preamble index selects the interleaver of a device whose preamble
/// went through collision resolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LdpcIndexPolicy {
    /// Devices send their LDPC section after resolution, keyed by the last
    /// window they transmitted.
    Resolved,
    /// The LDPC section is sent once with the round-0 index.
    Original,
}

impl FromStr for LdpcIndexPolicy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "resolved" => Ok(LdpcIndexPolicy::Resolved),
            "original" => Ok(LdpcIndexPolicy::Original),
            _ => Err(Error::Parse(format!("unknown ldpc_index policy `{s}`"))),
        }
    }
}

impl fmt::Display for LdpcIndexPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LdpcIndexPolicy::Resolved => "resolved",
            LdpcIndexPolicy::Original => "original",
        })
    }
}

/// Update order of the CS-phase decoder within one iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Schedule {
    /// Every sum node, then every variable node, all from the previous
    /// iteration's messages.
    Flooding,
    /// Variable nodes one at a time; each pulls fresh sum-node messages from
    /// running row totals and pushes its new messages back into them.
    Serial,
}

impl FromStr for Schedule {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "flooding" => Ok(Schedule::Flooding),
            "serial" => Ok(Schedule::Serial),
            _ => Err(Error::Parse(format!("unknown schedule `{s}`"))),
        }
    }
}

impl fmt::Display for Schedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Schedule::Flooding => "flooding",
            Schedule::Serial => "serial",
        })
    }
}

/// Raw scenario parameters. Use [`SystemConfig::validate`] before running.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemConfig {
    pub b: usize,
    pub bp: usize,
    pub bc: usize,
    pub lp: usize,
    pub l: usize,
    pub m: usize,
    pub ka: usize,
    pub ebn0_db: f64,
    pub modulation: Modulation,
    pub sigma2: f64,
    /// Prior activity probability; `None` means Ka / 2^Bp.
    pub pa: Option<f64>,
    pub n_iter_dadce: usize,
    pub n_iter_ldpc: usize,
    pub n_iter_joint: usize,
    pub t_max: usize,
    pub b0: usize,
    pub eta: f64,
    pub gamma: f64,
    pub seed: u64,
    pub diag_approx: bool,
    /// Weight of the previous VN message in the CS-phase update; 0 disables damping.
    pub damping: f64,
    pub schedule: Schedule,
    pub llr_clamp: f64,
    pub collision_avoidance: bool,
    pub sic: bool,
    pub joint: bool,
    pub ldpc_index: LdpcIndexPolicy,
    /// Largest codebook (Lp * 2^Bp complex entries) we agree to allocate.
    pub max_codebook_entries: u64,
}

impl Default for SystemConfig {
    fn default() -> Self {
        SystemConfig {
            b: 96,
            bp: 12,
            bc: 84,
            lp: 100,
            l: 1600,
            m: 30,
            ka: 50,
            ebn0_db: 10.0,
            modulation: Modulation::Bpsk,
            sigma2: 1.0,
            pa: None,
            n_iter_dadce: 20,
            n_iter_ldpc: 30,
            n_iter_joint: 20,
            t_max: 3,
            b0: 6,
            eta: 1.5,
            gamma: 0.5,
            seed: 0,
            diag_approx: true,
            damping: 0.3,
            schedule: Schedule::Serial,
            llr_clamp: 50.0,
            collision_avoidance: true,
            sic: true,
            joint: true,
            ldpc_index: LdpcIndexPolicy::Resolved,
            max_codebook_entries: 1 << 26,
        }
    }
}

/// Every key accepted by [`SystemConfig::set`], in file order.
pub const KEYS: &[&str] = &[
    "b",
    "bp",
    "bc",
    "lp",
    "l",
    "m",
    "ka",
    "ebn0_db",
    "modulation",
    "sigma2",
    "pa",
    "n_iter_dadce",
    "n_iter_ldpc",
    "n_iter_joint",
    "t_max",
    "b0",
    "eta",
    "gamma",
    "seed",
    "diag_approx",
    "damping",
    "schedule",
    "llr_clamp",
    "collision_avoidance",
    "sic",
    "joint",
    "ldpc_index",
    "max_codebook_entries",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Parse(format!("bad value `{value}` for `{key}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.to_ascii_lowercase().as_str() {
        "1" | "true" | "yes" | "on" => Ok(true),
        "0" | "false" | "no" | "off" => Ok(false),
        _ => Err(Error::Parse(format!("bad boolean `{value}` for `{key}`"))),
    }
}

impl SystemConfig {
    /// Sets one field from its textual form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim().to_ascii_lowercase().as_str() {
            "b" => self.b = parse(key, v)?,
            "bp" => self.bp = parse(key, v)?,
            "bc" => self.bc = parse(key, v)?,
            "lp" => self.lp = parse(key, v)?,
            "l" => self.l = parse(key, v)?,
            "m" => self.m = parse(key, v)?,
            "ka" => self.ka = parse(key, v)?,
            "ebn0_db" => self.ebn0_db = parse(key, v)?,
            "modulation" => self.modulation = v.parse()?,
            "sigma2" => self.sigma2 = parse(key, v)?,
            "pa" => {
                self.pa = if v.eq_ignore_ascii_case("auto") {
                    None
                } else {
                    Some(parse(key, v)?)
                }
            }
            "n_iter_dadce" => self.n_iter_dadce = parse(key, v)?,
            "n_iter_ldpc" => self.n_iter_ldpc = parse(key, v)?,
            "n_iter_joint" => self.n_iter_joint = parse(key, v)?,
            "t_max" => self.t_max = parse(key, v)?,
            "b0" => self.b0 = parse(key, v)?,
            "eta" => self.eta = parse(key, v)?,
            "gamma" => self.gamma = parse(key, v)?,
            "seed" => self.seed = parse(key, v)?,
            "diag_approx" => self.diag_approx = parse_bool(key, v)?,
            "damping" => self.damping = parse(key, v)?,
            "schedule" => self.schedule = v.parse()?,
            "llr_clamp" => self.llr_clamp = parse(key, v)?,
            "collision_avoidance" => self.collision_avoidance = parse_bool(key, v)?,
            "sic" => self.sic = parse_bool(key, v)?,
            "joint" => self.joint = parse_bool(key, v)?,
            "ldpc_index" => self.ldpc_index = v.parse()?,
            "max_codebook_entries" => self.max_codebook_entries = parse(key, v)?,
            other => return Err(Error::Parse(format!("unknown config key `{other}`"))),
        }
        Ok(())
    }

    /// Applies every `key = value` line of `text` on top of `self`.
    pub fn apply_kv(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Parse(format!("line {}: expected key = value", n + 1)))?;
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn from_kv_str(text: &str) -> Result<Self> {
        let mut cfg = SystemConfig::default();
        cfg.apply_kv(text)?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::from_kv_str(&std::fs::read_to_string(path)?)
    }

    /// Serialises every field as `key = value` lines; parses back to `self`.
    pub fn to_kv_string(&self) -> String {
        let pa = self.pa.map_or("auto".to_string(), |p| format!("{p:?}"));
        let vals: Vec<String> = vec![
            self.b.to_string(),
            self.bp.to_string(),
            self.bc.to_string(),
            self.lp.to_string(),
            self.l.to_string(),
            self.m.to_string(),
            self.ka.to_string(),
            format!("{:?}", self.ebn0_db),
            self.modulation.to_string(),
            format!("{:?}", self.sigma2),
            pa,
            self.n_iter_dadce.to_string(),
            self.n_iter_ldpc.to_string(),
            self.n_iter_joint.to_string(),
            self.t_max.to_string(),
            self.b0.to_string(),
            format!("{:?}", self.eta),
            format!("{:?}", self.gamma),
            self.seed.to_string(),
            self.diag_approx.to_string(),
            format!("{:?}", self.damping),
            self.schedule.to_string(),
            format!("{:?}", self.llr_clamp),
            self.collision_avoidance.to_string(),
            self.sic.to_string(),
            self.joint.to_string(),
            self.ldpc_index.to_string(),
            self.max_codebook_entries.to_string(),
        ];
        KEYS.iter()
            .zip(vals)
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    /// Checks every structural invariant and computes the derived quantities.
    pub fn validate(&self) -> Result<ValidatedConfig> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.bp == 0 || self.bc == 0 {
            return bad("Bp and Bc must be positive".into());
        }
        if self.bp + self.bc != self.b {
            return bad(format!("Bp + Bc = {} differs from B = {}", self.bp + self.bc, self.b));
        }
        if self.bp > 30 {
            return bad(format!("Bp = {} is too large for a dense codebook", self.bp));
        }
        if self.lp == 0 || self.lp >= self.l {
            return bad(format!("need 0 < Lp < L, got Lp = {}, L = {}", self.lp, self.l));
        }
        if self.m == 0 {
            return bad("M must be positive".into());
        }
        if !(self.b0 > 0 && self.b0 < self.bp) {
            return bad(format!("need 0 < B0 < Bp, got B0 = {}, Bp = {}", self.b0, self.bp));
        }
        let lc = self.l - self.lp;
        let n_ldpc = 2 * self.bc;
        let n_symbols = n_ldpc / self.modulation.bits_per_symbol();
        if n_symbols > lc {
            return bad(format!(
                "{} needs {n_symbols} LDPC channel uses but Lc = {lc}",
                self.modulation
            ));
        }
        if !(self.sigma2 > 0.0 && self.sigma2.is_finite()) {
            return bad(format!("sigma2 must be positive, got {}", self.sigma2));
        }
        if !self.ebn0_db.is_finite() {
            return bad("ebn0_db must be finite".into());
        }
        if !(self.gamma > 0.0 && self.eta > self.gamma && self.eta.is_finite()) {
            return bad(format!("need eta > gamma > 0, got eta = {}, gamma = {}", self.eta, self.gamma));
        }
        let n_codewords = 1u64 << self.bp;
        let pa = self.pa.unwrap_or(self.ka as f64 / n_codewords as f64);
        if !(pa > 0.0 && pa < 1.0) {
            return bad(format!("pa must lie in (0, 1), got {pa}"));
        }
        if !(0.0..1.0).contains(&self.damping) {
            return bad(format!("damping must lie in [0, 1), got {}", self.damping));
        }
        if !(self.llr_clamp > 0.0) {
            return bad("llr_clamp must be positive".into());
        }
        if self.n_iter_dadce == 0 || self.n_iter_ldpc == 0 || self.n_iter_joint == 0 {
            return bad("iteration caps must be positive".into());
        }
        Ok(ValidatedConfig {
            cfg: self.clone(),
            lc,
            n_ldpc,
            n_symbols,
            n_codewords: n_codewords as usize,
            pa,
            power: ebn0_to_power(self.ebn0_db, self.l, self.b),
            rate: self.b as f64 / self.l as f64,
            spectral_efficiency: (self.b * self.ka) as f64 / (self.l * self.m) as f64,
        })
    }
}

/// Per-symbol transmit power for a target Eb/N0, from Eb/N0 = L P / (2 B).
pub fn ebn0_to_power(ebn0_db: f64, l: usize, b: usize) -> f64 {
    2.0 * b as f64 * 10f64.powf(ebn0_db / 10.0) / l as f64
}

/// A config that passed validation, with its derived quantities.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidatedConfig {
    pub cfg: SystemConfig,
    pub lc: usize,
    /// LDPC block length 2 Bc.
    pub n_ldpc: usize,
    /// Modulated symbols per LDPC codeword.
    pub n_symbols: usize,
    /// Codebook size 2^Bp.
    pub n_codewords: usize,
    pub pa: f64,
    pub power: f64,
    pub rate: f64,
    pub spectral_efficiency: f64,
}

impl std::ops::Deref for ValidatedConfig {
    type Target = SystemConfig;
    fn deref(&self) -> &SystemConfig {
        &self.cfg
    }
}

impl ValidatedConfig {
    /// Prior activity log-odds.
    pub fn l0(&self) -> f64 {
        (self.pa / (1.0 - self.pa)).ln()
    }
}
