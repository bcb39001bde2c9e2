//! `oracle-trace`: generate calibration traces from the timing
//! surrogate, auto-tuning the delay scale to a target error-rate band.

use std::path::PathBuf;

use clap::Parser;
use gavsim_core::error::Error;
use gavsim_core::io::save_trace;
use gavsim_core::oracle::{
    build_ipe, generate_traces, tune_alpha, TimingConfig, UniformOutputInputs, DEFAULT_BER_BAND,
};
use gavsim_core::rng::substream_u64;
use gavsim_core::Result;
use serde::{Deserialize, Serialize};

use crate::common;

#[derive(Parser)]
pub struct Args {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Inner-product length of the simulated iPE.
    #[arg(long)]
    c: Option<usize>,
    /// Number of clock cycles to record.
    #[arg(long)]
    cycles: Option<usize>,
    /// Target mean bit-error-rate band `lo,hi` for delay-scale tuning.
    #[arg(long)]
    target_ber: Option<String>,
    /// Fixed delay scale; skips tuning when given.
    #[arg(long)]
    alpha: Option<f64>,
    /// Per-gate delay jitter sigma.
    #[arg(long)]
    jitter: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Config {
    pub c: Option<usize>,
    pub cycles: Option<usize>,
    pub target_ber: Option<String>,
    pub alpha: Option<f64>,
    #[serde(default)]
    pub jitter: f64,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    /// Resolved during the run; recorded for `validate-model`.
    #[serde(default)]
    pub resolved_alpha: Option<f64>,
    #[serde(default)]
    pub resolved_clock_period: Option<f64>,
    #[serde(default)]
    pub measured_ber: Option<f64>,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            c: None,
            cycles: None,
            target_ber: None,
            alpha: None,
            jitter: 0.0,
            seed: None,
            out: None,
            resolved_alpha: None,
            resolved_clock_period: None,
            measured_ber: None,
        }
    }
}

fn parse_band(s: &str) -> Result<(f64, f64)> {
    let (lo, hi) = s
        .split_once(',')
        .ok_or_else(|| Error::config(format!("expected lo,hi band, got {s:?}")))?;
    let lo: f64 = lo
        .trim()
        .parse()
        .map_err(|_| Error::config(format!("bad band bound {lo:?}")))?;
    let hi: f64 = hi
        .trim()
        .parse()
        .map_err(|_| Error::config(format!("bad band bound {hi:?}")))?;
    Ok((lo, hi))
}

pub fn run(args: Args) -> Result<()> {
    let mut cfg: Config = common::load_config(&args.config)?;
    if args.c.is_some() {
        cfg.c = args.c;
    }
    if args.cycles.is_some() {
        cfg.cycles = args.cycles;
    }
    if args.target_ber.is_some() {
        cfg.target_ber = args.target_ber;
    }
    if args.alpha.is_some() {
        cfg.alpha = args.alpha;
    }
    if let Some(j) = args.jitter {
        cfg.jitter = j;
    }
    if args.seed.is_some() {
        cfg.seed = args.seed;
    }
    if args.out.is_some() {
        cfg.out = args.out;
    }

    let c = cfg.c.ok_or_else(|| Error::config("missing --c"))?;
    let cycles = cfg.cycles.ok_or_else(|| Error::config("missing --cycles"))?;
    let seed = cfg.seed.ok_or_else(|| Error::config("--seed is mandatory"))?;
    let out = cfg.out.clone().ok_or_else(|| Error::config("missing --out"))?;

    let band = match &cfg.target_ber {
        Some(s) => parse_band(s)?,
        None => DEFAULT_BER_BAND,
    };
    let net = build_ipe(c, substream_u64(seed, "netlist", 0))?;
    let alpha = match cfg.alpha {
        Some(a) => a,
        None => tune_alpha(&net, band, 20_000.min(cycles.max(4000)), seed)?,
    };
    let timing = TimingConfig::for_netlist(&net, alpha, cfg.jitter, seed);
    let mut source = UniformOutputInputs::new(c, substream_u64(seed, "trace-inputs", 0));
    let trace = generate_traces(&net, &timing, &mut source, cycles)?;
    let ber = trace.mean_ber();
    save_trace(&out, &trace)?;

    cfg.resolved_alpha = Some(alpha);
    cfg.resolved_clock_period = Some(timing.clock_period);
    cfg.measured_ber = Some(ber);
    common::write_config_snapshot(&out, &cfg)?;
    println!(
        "oracle-trace: C={c} cycles={cycles} alpha={alpha:.4} clock={:.1} mean_ber={ber:.5}",
        timing.clock_period
    );
    Ok(())
}
