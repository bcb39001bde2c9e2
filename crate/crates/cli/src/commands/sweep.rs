//! `sweep`: precision x G grid, one CSV row per operating point.

use std::io::Write;
use std::path::PathBuf;

use clap::Parser;
use gavsim_core::errmodel::{load_lut, ErrorLut, LutParams};
use gavsim_core::error::Error;
use gavsim_core::metrics::CharDims;
use gavsim_core::power::{default_calibration, PowerModel};
use gavsim_core::schedule::ArrayShape;
use gavsim_core::sweep::{run_sweep, SweepConfig};
use gavsim_core::Result;
use serde::{Deserialize, Serialize};

use crate::common;

pub const SWEEP_CSV_VERSION: u32 = 1;

#[derive(Parser)]
pub struct Args {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Comma-separated precision labels, e.g. `a4w4,a8w8`.
    #[arg(long, value_delimiter = ',')]
    precisions: Vec<String>,
    /// G values to sweep (default: the full range per precision).
    #[arg(long, value_delimiter = ',')]
    g: Vec<u8>,
    /// Calibrated error model; omit for a zero (error-free) model.
    #[arg(long)]
    lut: Option<PathBuf>,
    /// Power calibration JSON; omit for the default calibration.
    #[arg(long)]
    power: Option<PathBuf>,
    /// Array tile shape `C,L,K`.
    #[arg(long)]
    shape: Option<String>,
    /// Workload dims `C_total,L_total,K_total`.
    #[arg(long)]
    dims: Option<String>,
    /// Seeded repetitions per operating point.
    #[arg(long)]
    seeds: Option<u32>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Config {
    pub precisions: Vec<String>,
    #[serde(default)]
    pub g: Vec<u8>,
    pub lut: Option<PathBuf>,
    pub power: Option<PathBuf>,
    pub shape: Option<String>,
    pub dims: Option<String>,
    pub seeds: u32,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            precisions: Vec::new(),
            g: Vec::new(),
            lut: None,
            power: None,
            shape: None,
            dims: None,
            seeds: 20,
            seed: None,
            out: None,
        }
    }
}

pub fn run(args: Args) -> Result<()> {
    let mut cfg: Config = common::load_config(&args.config)?;
    if !args.precisions.is_empty() {
        cfg.precisions = args.precisions;
    }
    if !args.g.is_empty() {
        cfg.g = args.g;
    }
    if args.lut.is_some() {
        cfg.lut = args.lut;
    }
    if args.power.is_some() {
        cfg.power = args.power;
    }
    if args.shape.is_some() {
        cfg.shape = args.shape;
    }
    if args.dims.is_some() {
        cfg.dims = args.dims;
    }
    if let Some(s) = args.seeds {
        cfg.seeds = s;
    }
    if args.seed.is_some() {
        cfg.seed = args.seed;
    }
    if args.out.is_some() {
        cfg.out = args.out;
    }

    if cfg.precisions.is_empty() {
        return Err(Error::config("no precisions given"));
    }
    let seed = cfg.seed.ok_or_else(|| Error::config("--seed is mandatory"))?;
    let out = cfg.out.clone().ok_or_else(|| Error::config("missing --out"))?;
    let shape_str = cfg.shape.clone().ok_or_else(|| Error::config("missing --shape"))?;
    let (c, l, k) = common::parse_triplet(&shape_str)?;
    let shape = ArrayShape::new(c, l, k)?;
    let dims = match &cfg.dims {
        Some(s) => {
            let (dc, dl, dk) = common::parse_triplet(s)?;
            CharDims { c: dc, l: dl, k: dk }
        }
        None => CharDims { c: 2 * shape.c, l: 2 * shape.l, k: 2 * shape.k },
    };

    let precisions = cfg
        .precisions
        .iter()
        .map(|s| common::parse_precision(s))
        .collect::<Result<Vec<_>>>()?;
    let lut = match &cfg.lut {
        Some(path) => {
            let (lut, _) = load_lut(path)?;
            if lut.c() != shape.c {
                return Err(Error::config(format!(
                    "error model C={} vs array C={}",
                    lut.c(),
                    shape.c
                )));
            }
            lut
        }
        None => ErrorLut::zeros(LutParams::defaults(shape.c)),
    };
    let power: PowerModel = match &cfg.power {
        Some(path) => PowerModel::load(path)?,
        None => default_calibration(),
    };

    let sweep_cfg = SweepConfig {
        precisions,
        g_values: if cfg.g.is_empty() { None } else { Some(cfg.g.clone()) },
        dims,
        shape,
        seeds: cfg.seeds,
        master_seed: seed,
    };
    let rows = run_sweep(&sweep_cfg, &lut, &power)?;

    let hash = common::write_config_snapshot(&out, &cfg)?;
    let mut file = std::io::BufWriter::new(std::fs::File::create(&out)?);
    file.write_all(common::csv_header("sweep", SWEEP_CSV_VERSION, &hash).as_bytes())?;
    file.write_all(b"precision,G,f,VAR_NED,mW,TOPs,TOPsW\n")?;
    for row in &rows {
        writeln!(
            file,
            "{},{},{},{},{},{},{}",
            row.precision_label(),
            row.g,
            common::fmt_fixed(row.f, 4),
            common::fmt_sci(row.var_ned),
            common::fmt_fixed(row.mw, 3),
            common::fmt_fixed(row.tops, 4),
            common::fmt_fixed(row.topsw, 3),
        )?;
    }
    file.flush()?;
    println!("sweep: {} rows -> {}", rows.len(), out.display());
    Ok(())
}
