use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{value_parser, Arg, ArgAction, ArgMatches, Command};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use ura_core::collision::{collision_analytics, simulate_collided_counts};
use ura_core::config::{SystemConfig, KEYS};
use ura_core::cs_codebook::Codebook;
use ura_core::harness::{run_sweep, write_csv, SweepAxis};
use ura_core::ldpc_code::LdpcCode;
use ura_core::seeds::{mix, CODEBOOK_TAG, LDPC_TAG};
use ura_core::Error;

fn with_config_args(cmd: Command) -> Command {
    let cmd = cmd
        .arg(Arg::new("config").long("config").value_parser(value_parser!(PathBuf)).help("key = value config file"))
        .arg(Arg::new("out").long("out").value_parser(value_parser!(PathBuf)).help("output path (stdout if absent)"))
        .arg(Arg::new("threads").long("threads").value_parser(value_parser!(usize)).help("worker threads"));
    KEYS.iter().fold(cmd, |c, k| c.arg(Arg::new(*k).long(*k).value_name("VALUE").help_heading("Config overrides")))
}

fn cli() -> Command {
    let trials = || Arg::new("trials").long("trials").default_value("100").value_parser(value_parser!(usize));
    Command::new("ura")
        .about("Unsourced random access link-level simulator")
        .subcommand_required(true)
        .subcommand(with_config_args(Command::new("run").about("Monte Carlo trials of one config").arg(trials())))
        .subcommand(
            with_config_args(Command::new("sweep").about("Monte Carlo trials along one parameter axis"))
                .arg(trials())
                .arg(Arg::new("axis").long("axis").required(true).help("ebn0_db, M, Ka, L or Rc"))
                .arg(Arg::new("values").long("values").required(true).value_delimiter(',').action(ArgAction::Append)),
        )
        .subcommand(
            with_config_args(Command::new("collision-analytics").about("Closed-form collision statistics with a Monte Carlo check"))
                .arg(Arg::new("rounds").long("rounds").value_parser(value_parser!(usize)))
                .arg(Arg::new("mc-trials").long("mc-trials").default_value("2000").value_parser(value_parser!(usize))),
        )
        .subcommand(with_config_args(Command::new("ldpc-gen").about("Write the LDPC parity-check matrix as alist")))
        .subcommand(with_config_args(Command::new("codebook-gen").about("Write the CS codebook in binary form")))
}

fn load_config(m: &ArgMatches) -> ura_core::Result<SystemConfig> {
    let mut cfg = match m.get_one::<PathBuf>("config") {
        Some(p) => SystemConfig::from_file(p)?,
        None => SystemConfig::default(),
    };
    for k in KEYS {
        if let Some(v) = m.get_one::<String>(k) {
            cfg.set(k, v)?;
        }
    }
    Ok(cfg)
}

fn output(m: &ArgMatches) -> io::Result<Box<dyn Write>> {
    Ok(match m.get_one::<PathBuf>("out") {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout())),
    })
}

fn sweep(m: &ArgMatches, cfg: &SystemConfig, axis: SweepAxis, values: &[f64]) -> ura_core::Result<bool> {
    let trials = *m.get_one::<usize>("trials").expect("default");
    let rows = run_sweep(cfg, axis, values, trials);
    let mut ok = true;
    for r in &rows {
        if let Err(e) = &r.result {
            eprintln!("{}={}: {e}", r.axis, r.value);
            ok = false;
        }
    }
    write_csv(&rows, output(m)?)?;
    Ok(ok)
}

fn analytics(m: &ArgMatches, cfg: &SystemConfig) -> ura_core::Result<()> {
    let rounds = m.get_one::<usize>("rounds").copied().unwrap_or(cfg.t_max);
    let trials = *m.get_one::<usize>("mc-trials").expect("default");
    if cfg.b0 == 0 || cfg.b0 > cfg.bp || cfg.bp > 30 {
        return Err(Error::InvalidConfig(format!("need 0 < b0 <= bp <= 30, got b0={} bp={}", cfg.b0, cfg.bp)));
    }
    let a = collision_analytics(cfg.ka, cfg.bp, cfg.b0, rounds);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut sum = vec![0.0; rounds + 1];
    let mut sq = vec![0.0; rounds + 1];
    let mut clean = 0usize;
    for _ in 0..trials {
        let c = simulate_collided_counts(&mut rng, cfg.ka, cfg.bp, cfg.b0, rounds);
        clean += usize::from(c[0] == 0);
        for (l, &x) in c.iter().enumerate() {
            sum[l] += x as f64;
            sq[l] += (x * x) as f64;
        }
    }
    let n = trials.max(1) as f64;
    let mut w = csv::Writer::from_writer(output(m)?);
    let io = |e: csv::Error| Error::Io(io::Error::other(e));
    w.write_record(["round", "analytic_collided", "bound", "mc_collided", "mc_stderr", "p_no_collision", "mc_p_no_collision"])
        .map_err(io)?;
    for l in 0..=rounds {
        let mean = sum[l] / n;
        let se = ((sq[l] / n - mean * mean).max(0.0) / n).sqrt();
        let (p, mc_p) = if l == 0 { (a.p_no_collision.to_string(), (clean as f64 / n).to_string()) } else { (String::new(), String::new()) };
        w.write_record([l.to_string(), a.collided[l].to_string(), a.bound[l].to_string(), mean.to_string(), se.to_string(), p, mc_p])
            .map_err(io)?;
    }
    w.flush()?;
    Ok(())
}

fn dispatch(name: &str, m: &ArgMatches) -> ura_core::Result<bool> {
    if let Some(t) = m.get_one::<usize>("threads") {
        rayon::ThreadPoolBuilder::new()
            .num_threads(*t)
            .build_global()
            .map_err(|e| Error::InvalidConfig(e.to_string()))?;
    }
    let cfg = load_config(m)?;
    match name {
        "run" => {
            cfg.validate()?;
            sweep(m, &cfg, SweepAxis::EbN0, &[cfg.ebn0_db])
        }
        "sweep" => {
            let axis: SweepAxis = m.get_one::<String>("axis").expect("required").parse()?;
            let values = m
                .get_many::<String>("values")
                .expect("required")
                .map(|v| v.trim().parse::<f64>().map_err(|_| Error::Parse(format!("bad sweep value `{v}`"))))
                .collect::<ura_core::Result<Vec<_>>>()?;
            sweep(m, &cfg, axis, &values)
        }
        "collision-analytics" => analytics(m, &cfg).map(|_| true),
        "ldpc-gen" => {
            let v = cfg.validate()?;
            let code = LdpcCode::build(mix(v.seed, LDPC_TAG), v.bc)?;
            output(m)?.write_all(code.to_alist().as_bytes())?;
            Ok(true)
        }
        "codebook-gen" => {
            let v = cfg.validate()?;
            let cb = Codebook::generate(mix(v.seed, CODEBOOK_TAG), v.lp, v.bp, v.max_codebook_entries)?;
            let mut out = output(m)?;
            cb.write_binary(&mut out)?;
            out.flush()?;
            Ok(true)
        }
        _ => unreachable!("subcommand_required"),
    }
}

fn main() -> ExitCode {
    let matches = cli().get_matches();
    let (name, m) = matches.subcommand().expect("subcommand_required");
    match dispatch(name, m) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e @ (Error::InvalidConfig(_) | Error::Parse(_))) => {
            eprintln!("config error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
