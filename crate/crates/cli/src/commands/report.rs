//! `report`: merge inference results into one efficiency/accuracy
//! table with Pareto marking.

use std::io::Write;
use std::path::PathBuf;

use clap::Parser;
use gavsim_core::error::Error;
use gavsim_core::Result;
use serde::{Deserialize, Serialize};

use super::dnn::InferResults;
use crate::common;

pub const REPORT_CSV_VERSION: u32 = 1;

#[derive(Parser)]
pub struct Args {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Inference result JSONs to merge.
    #[arg(long, value_delimiter = ',')]
    inputs: Vec<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
pub struct Config {
    #[serde(default)]
    pub inputs: Vec<PathBuf>,
    pub out: Option<PathBuf>,
}

struct Row {
    label: String,
    precision: String,
    levels: String,
    accuracy: f64,
    acc_drop_pp: f64,
    energy_uj: f64,
    cycles: u64,
    pareto: bool,
}

pub fn run(args: Args) -> Result<()> {
    let mut cfg: Config = common::load_config(&args.config)?;
    if !args.inputs.is_empty() {
        cfg.inputs = args.inputs;
    }
    if args.out.is_some() {
        cfg.out = args.out;
    }
    if cfg.inputs.is_empty() {
        return Err(Error::config("no input result files"));
    }
    let out = cfg.out.clone().ok_or_else(|| Error::config("missing --out"))?;

    let mut results = Vec::new();
    for path in &cfg.inputs {
        let r: InferResults = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        let label = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| path.display().to_string());
        results.push((label, r));
    }
    // baseline: the exact run when present, else the best accuracy
    let baseline_acc = results
        .iter()
        .filter(|(_, r)| r.exact)
        .map(|(_, r)| r.accuracy)
        .next()
        .unwrap_or_else(|| {
            results
                .iter()
                .map(|(_, r)| r.accuracy)
                .fold(f64::NEG_INFINITY, f64::max)
        });

    let mut rows: Vec<Row> = results
        .iter()
        .map(|(label, r)| Row {
            label: label.clone(),
            precision: r.precision.clone(),
            levels: format!(
                "{}",
                r.levels
                    .iter()
                    .map(|g| g.to_string())
                    .collect::<Vec<_>>()
                    .join("|")
            ),
            accuracy: r.accuracy,
            acc_drop_pp: (baseline_acc - r.accuracy) * 100.0,
            energy_uj: r.energy_uj_per_inference,
            cycles: r.total_cycles,
            pareto: false,
        })
        .collect();
    // Pareto front on (lower energy, higher accuracy)
    for i in 0..rows.len() {
        let dominated = rows.iter().enumerate().any(|(j, other)| {
            j != i
                && other.energy_uj <= rows[i].energy_uj
                && other.accuracy >= rows[i].accuracy
                && (other.energy_uj < rows[i].energy_uj || other.accuracy > rows[i].accuracy)
        });
        rows[i].pareto = !dominated;
    }
    rows.sort_by(|a, b| a.energy_uj.total_cmp(&b.energy_uj).then(a.label.cmp(&b.label)));

    let hash = common::write_config_snapshot(&out, &cfg)?;
    let mut file = std::io::BufWriter::new(std::fs::File::create(&out)?);
    file.write_all(common::csv_header("report", REPORT_CSV_VERSION, &hash).as_bytes())?;
    file.write_all(b"label,precision,levels,accuracy,acc_drop_pp,energy_uj,cycles,pareto\n")?;
    for r in &rows {
        writeln!(
            file,
            "{},{},{},{},{},{},{},{}",
            r.label,
            r.precision,
            r.levels,
            common::fmt_fixed(r.accuracy, 4),
            common::fmt_fixed(r.acc_drop_pp, 2),
            common::fmt_fixed(r.energy_uj, 4),
            r.cycles,
            r.pareto
        )?;
    }
    file.flush()?;
    println!("report: {} rows -> {}", rows.len(), out.display());
    Ok(())
}
