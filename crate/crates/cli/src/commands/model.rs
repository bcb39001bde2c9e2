//! `calibrate` and `validate-model`: build the error-model tables from
//! traces and check them against the timing surrogate.

use std::path::PathBuf;

use clap::Parser;
use gavsim_core::errmodel::{calibrate, load_lut, save_lut, LutParams, DEFAULT_LAMBDA, DEFAULT_N_NEI, DEFAULT_P_BINS};
use gavsim_core::error::Error;
use gavsim_core::io::{file_digest, load_trace};
use gavsim_core::validate::validate_against_traces;
use gavsim_core::Result;
use serde::{Deserialize, Serialize};

use crate::common;

#[derive(Parser)]
pub struct CalibrateArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Comma-separated trace files (all with the same C).
    #[arg(long, value_delimiter = ',')]
    traces: Vec<PathBuf>,
    /// Higher-significance neighbors conditioned on.
    #[arg(long)]
    n_nei: Option<u32>,
    /// Previous-output bins.
    #[arg(long)]
    p_bins: Option<usize>,
    /// Laplace smoothing for observed cells.
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct CalibrateConfig {
    #[serde(default)]
    pub traces: Vec<PathBuf>,
    pub n_nei: u32,
    pub p_bins: usize,
    pub lambda: f64,
    pub out: Option<PathBuf>,
}

impl Default for CalibrateConfig {
    fn default() -> Self {
        CalibrateConfig {
            traces: Vec::new(),
            n_nei: DEFAULT_N_NEI,
            p_bins: DEFAULT_P_BINS,
            lambda: DEFAULT_LAMBDA,
            out: None,
        }
    }
}

pub fn run_calibrate(args: CalibrateArgs) -> Result<()> {
    let mut cfg: CalibrateConfig = common::load_config(&args.config)?;
    if !args.traces.is_empty() {
        cfg.traces = args.traces;
    }
    if let Some(v) = args.n_nei {
        cfg.n_nei = v;
    }
    if let Some(v) = args.p_bins {
        cfg.p_bins = v;
    }
    if let Some(v) = args.lambda {
        cfg.lambda = v;
    }
    if args.out.is_some() {
        cfg.out = args.out;
    }
    if cfg.traces.is_empty() {
        return Err(Error::config("no trace files given"));
    }
    let out = cfg.out.clone().ok_or_else(|| Error::config("missing --out"))?;

    let mut traces = Vec::new();
    let mut digests = Vec::new();
    for path in &cfg.traces {
        traces.push(load_trace(path)?);
        digests.push(file_digest(path)?);
    }
    let c = traces[0].c;
    let params = LutParams { c, n_nei: cfg.n_nei, p_bins: cfg.p_bins, lambda: cfg.lambda };
    let lut = calibrate(&traces, params)?;
    let digest = format!("sha256:{}", digests.join(","));
    save_lut(&out, &lut, &digest)?;
    common::write_config_snapshot(&out, &cfg)?;
    let cycles: usize = traces.iter().map(|t| t.records.len()).sum();
    println!(
        "calibrate: C={c} s_bits={} traces={} cycles={cycles} -> {}",
        lut.s_bits(),
        traces.len(),
        out.display()
    );
    Ok(())
}

#[derive(Parser)]
pub struct ValidateArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Calibration file to validate.
    #[arg(long)]
    lut: Option<PathBuf>,
    /// Held-out trace files.
    #[arg(long, value_delimiter = ',')]
    traces: Vec<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Where to write the JSON comparison report.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
pub struct ValidateConfig {
    pub lut: Option<PathBuf>,
    #[serde(default)]
    pub traces: Vec<PathBuf>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

pub fn run_validate(args: ValidateArgs) -> Result<()> {
    let mut cfg: ValidateConfig = common::load_config(&args.config)?;
    if args.lut.is_some() {
        cfg.lut = args.lut;
    }
    if !args.traces.is_empty() {
        cfg.traces = args.traces;
    }
    if args.seed.is_some() {
        cfg.seed = args.seed;
    }
    if args.out.is_some() {
        cfg.out = args.out;
    }
    let lut_path = cfg.lut.clone().ok_or_else(|| Error::config("missing --lut"))?;
    if cfg.traces.is_empty() {
        return Err(Error::config("no trace files given"));
    }
    let seed = cfg.seed.ok_or_else(|| Error::config("--seed is mandatory"))?;

    let (lut, _) = load_lut(&lut_path)?;
    let mut traces = Vec::new();
    for path in &cfg.traces {
        let t = load_trace(path)?;
        if t.c != lut.c() {
            return Err(Error::config(format!(
                "trace C={} does not match model C={}",
                t.c,
                lut.c()
            )));
        }
        traces.push(t);
    }
    let report = validate_against_traces(&lut, &traces, seed)?;
    let json = serde_json::to_string_pretty(&report)?;
    if let Some(out) = &cfg.out {
        std::fs::write(out, &json)?;
        common::write_config_snapshot(out, &cfg)?;
    }
    println!("{json}");
    println!(
        "validate-model: VAR_NED oracle={:.6e} model={:.6e} relative_gap={:.2}%",
        report.oracle_var_ned,
        report.model_var_ned,
        report.relative_gap * 100.0
    );
    Ok(())
}
