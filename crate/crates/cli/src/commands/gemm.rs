//! `gemm`: run one exact or error-injected GEMM from tensor files.

use std::path::PathBuf;

use clap::Parser;
use gavsim_core::engine::{gemm_exact, gemm_gav, GemmJob};
use gavsim_core::errmodel::load_lut;
use gavsim_core::error::Error;
use gavsim_core::io::{load_matrix, save_matrix};
use gavsim_core::schedule::{ArrayShape, GavSchedule};
use gavsim_core::Result;
use serde::{Deserialize, Serialize};

use crate::common;

#[derive(Parser)]
pub struct Args {
    /// JSON config; explicit flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Left operand container (`[C_total, L_total]`).
    #[arg(long)]
    a: Option<PathBuf>,
    /// Right operand container (`[K_total, C_total]`).
    #[arg(long)]
    b: Option<PathBuf>,
    /// Array tile shape `C,L,K`.
    #[arg(long)]
    shape: Option<String>,
    /// Protection level.
    #[arg(long)]
    g: Option<u8>,
    /// Calibrated error model (enables error injection).
    #[arg(long)]
    lut: Option<PathBuf>,
    /// Force the exact datapath even when a LUT is configured.
    #[arg(long)]
    exact: bool,
    /// Master seed (mandatory for stochastic runs).
    #[arg(long)]
    seed: Option<u64>,
    /// Result container path; stats land next to it as `<out>.stats.json`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
pub struct Config {
    pub a: Option<PathBuf>,
    pub b: Option<PathBuf>,
    pub shape: Option<String>,
    pub g: Option<u8>,
    pub lut: Option<PathBuf>,
    #[serde(default)]
    pub exact: bool,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

#[derive(Serialize)]
struct Stats {
    cycles: u64,
    approx_cycles: u64,
    tiles: u64,
}

pub fn run(args: Args) -> Result<()> {
    let mut cfg: Config = common::load_config(&args.config)?;
    if args.a.is_some() {
        cfg.a = args.a;
    }
    if args.b.is_some() {
        cfg.b = args.b;
    }
    if args.shape.is_some() {
        cfg.shape = args.shape;
    }
    if args.g.is_some() {
        cfg.g = args.g;
    }
    if args.lut.is_some() {
        cfg.lut = args.lut;
    }
    if args.exact {
        cfg.exact = true;
    }
    if args.seed.is_some() {
        cfg.seed = args.seed;
    }
    if args.out.is_some() {
        cfg.out = args.out;
    }

    let a_path = cfg.a.clone().ok_or_else(|| Error::config("missing operand --a"))?;
    let b_path = cfg.b.clone().ok_or_else(|| Error::config("missing operand --b"))?;
    let shape_str = cfg.shape.clone().ok_or_else(|| Error::config("missing --shape"))?;
    let out = cfg.out.clone().ok_or_else(|| Error::config("missing --out"))?;
    let (c, l, k) = common::parse_triplet(&shape_str)?;
    let shape = ArrayShape::new(c, l, k)?;

    let a = load_matrix(&a_path)?;
    let b = load_matrix(&b_path)?;
    let g = cfg.g.unwrap_or(GavSchedule::max_g_for(a.bits(), b.bits()));
    let schedule = GavSchedule::new(a.bits(), b.bits(), g)?;

    let use_lut = cfg.lut.is_some() && !cfg.exact;
    let result = if use_lut {
        let seed = cfg
            .seed
            .ok_or_else(|| Error::config("--seed is mandatory for stochastic runs"))?;
        let (lut, _) = load_lut(cfg.lut.as_ref().unwrap())?;
        let job = GemmJob {
            a: &a,
            b: &b,
            shape,
            schedule,
            error_model: Some(&lut),
            seed,
        };
        gemm_gav(&job)?
    } else {
        let job = GemmJob { a: &a, b: &b, shape, schedule, error_model: None, seed: 0 };
        gemm_exact(&job)?
    };

    save_matrix(&out, &result.p)?;
    let stats = Stats {
        cycles: result.cycles,
        approx_cycles: result.approx_cycles,
        tiles: result.tile_count,
    };
    let mut stats_path = out.file_name().unwrap_or_default().to_os_string();
    stats_path.push(".stats.json");
    std::fs::write(
        out.with_file_name(stats_path),
        serde_json::to_string_pretty(&stats)?,
    )?;
    common::write_config_snapshot(&out, &cfg)?;
    println!(
        "gemm: [{}x{}] x [{}x{}] G={} cycles={} approx_cycles={} tiles={}",
        a.rows(),
        a.cols(),
        b.rows(),
        b.cols(),
        g,
        result.cycles,
        result.approx_cycles,
        result.tile_count
    );
    Ok(())
}
