//! `profile`, `allocate`, `infer`: the per-layer protection pipeline.

use std::path::PathBuf;

use clap::Parser;
use gavsim_core::allocator::{
    load_profiles, profile_layers, save_profiles, solve_allocation, AllocationProblem, Budget,
};
use gavsim_core::errmodel::load_lut;
use gavsim_core::error::Error;
use gavsim_core::manifest::{load_dataset, load_model, quantized_dataset};
use gavsim_core::nn::{infer, infer_reference, stats_energy_uj, GavPlan, LayerStats};
use gavsim_core::power::{default_calibration, PowerModel};
use gavsim_core::rng::substream_u64;
use gavsim_core::schedule::ArrayShape;
use gavsim_core::Result;
use serde::{Deserialize, Serialize};

use crate::common;

fn parse_shape(s: &Option<String>) -> Result<ArrayShape> {
    let s = s.as_ref().ok_or_else(|| Error::config("missing --shape"))?;
    let (c, l, k) = common::parse_triplet(s)?;
    ArrayShape::new(c, l, k)
}

fn load_power(path: &Option<PathBuf>) -> Result<PowerModel> {
    Ok(match path {
        Some(p) => PowerModel::load(p)?,
        None => default_calibration(),
    })
}

// ------------------------------------------------------------- profile

#[derive(Parser)]
pub struct ProfileArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Network manifest JSON.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Calibration dataset directory.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    lut: Option<PathBuf>,
    #[arg(long)]
    shape: Option<String>,
    /// Candidate protection levels (default: the full per-layer range).
    #[arg(long, value_delimiter = ',')]
    g_candidates: Vec<u8>,
    /// Seeded repetitions per (layer, G) cell.
    #[arg(long)]
    n_rep: Option<u32>,
    /// Cap on the number of calibration images used.
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ProfileConfig {
    pub model: Option<PathBuf>,
    pub data: Option<PathBuf>,
    pub lut: Option<PathBuf>,
    pub shape: Option<String>,
    #[serde(default)]
    pub g_candidates: Vec<u8>,
    pub n_rep: u32,
    pub batch: Option<usize>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

impl Default for ProfileConfig {
    fn default() -> Self {
        ProfileConfig {
            model: None,
            data: None,
            lut: None,
            shape: None,
            g_candidates: Vec::new(),
            n_rep: 5,
            batch: None,
            seed: None,
            out: None,
        }
    }
}

pub fn run_profile(args: ProfileArgs) -> Result<()> {
    let mut cfg: ProfileConfig = common::load_config(&args.config)?;
    if args.model.is_some() {
        cfg.model = args.model;
    }
    if args.data.is_some() {
        cfg.data = args.data;
    }
    if args.lut.is_some() {
        cfg.lut = args.lut;
    }
    if args.shape.is_some() {
        cfg.shape = args.shape;
    }
    if !args.g_candidates.is_empty() {
        cfg.g_candidates = args.g_candidates;
    }
    if let Some(n) = args.n_rep {
        cfg.n_rep = n;
    }
    if args.batch.is_some() {
        cfg.batch = args.batch;
    }
    if args.seed.is_some() {
        cfg.seed = args.seed;
    }
    if args.out.is_some() {
        cfg.out = args.out;
    }

    let model_path = cfg.model.clone().ok_or_else(|| Error::config("missing --model"))?;
    let data_dir = cfg.data.clone().ok_or_else(|| Error::config("missing --data"))?;
    let lut_path = cfg.lut.clone().ok_or_else(|| Error::config("missing --lut"))?;
    let seed = cfg.seed.ok_or_else(|| Error::config("--seed is mandatory"))?;
    let out = cfg.out.clone().ok_or_else(|| Error::config("missing --out"))?;
    let shape = parse_shape(&cfg.shape)?;

    let model = load_model(&model_path)?;
    let (lut, _) = load_lut(&lut_path)?;
    let items = load_dataset(&data_dir)?;
    let mut batch: Vec<_> = quantized_dataset(&items, &model)?
        .into_iter()
        .map(|(x, _)| x)
        .collect();
    if let Some(cap) = cfg.batch {
        batch.truncate(cap.max(1));
    }
    let candidates: Vec<u8> = if cfg.g_candidates.is_empty() {
        let max_g = model
            .gemm_layer_info()?
            .iter()
            .map(|i| i.max_g)
            .min()
            .unwrap_or(0);
        (0..=max_g).collect()
    } else {
        cfg.g_candidates.clone()
    };

    let profiles = profile_layers(&model, shape, &lut, &candidates, &batch, cfg.n_rep, seed)?;
    save_profiles(&out, &profiles, &candidates)?;
    common::write_config_snapshot(&out, &cfg)?;
    for p in &profiles {
        let worst = p.mse.values().cloned().fold(0.0f64, f64::max);
        println!("profile: layer {} ({}) ops={} peak_mse={:.4e}", p.id, p.name, p.ops, worst);
    }
    println!("profile: {} layers x {} candidates -> {}", profiles.len(), candidates.len(), out.display());
    Ok(())
}

// ------------------------------------------------------------ allocate

#[derive(Parser)]
pub struct AllocateArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Profiles JSON from `profile`.
    #[arg(long)]
    profiles: Option<PathBuf>,
    /// Weighted-average G budget (decimal, e.g. `2.5`).
    #[arg(long)]
    g_target: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
pub struct AllocateConfig {
    pub profiles: Option<PathBuf>,
    pub g_target: Option<String>,
    pub out: Option<PathBuf>,
}

#[derive(Serialize, Deserialize)]
pub struct AssignmentFile {
    pub g_target: String,
    pub levels: Vec<u8>,
    pub objective: f64,
    pub weighted_avg_g: f64,
    pub layers: Vec<AssignmentLayer>,
}

#[derive(Serialize, Deserialize)]
pub struct AssignmentLayer {
    pub id: usize,
    pub name: String,
    pub ops: u64,
    pub g: u8,
}

pub fn run_allocate(args: AllocateArgs) -> Result<()> {
    let mut cfg: AllocateConfig = common::load_config(&args.config)?;
    if args.profiles.is_some() {
        cfg.profiles = args.profiles;
    }
    if args.g_target.is_some() {
        cfg.g_target = args.g_target;
    }
    if args.out.is_some() {
        cfg.out = args.out;
    }
    let profiles_path = cfg.profiles.clone().ok_or_else(|| Error::config("missing --profiles"))?;
    let g_target = cfg.g_target.clone().ok_or_else(|| Error::config("missing --g-target"))?;
    let out = cfg.out.clone().ok_or_else(|| Error::config("missing --out"))?;

    let (profiles, g_candidates) = load_profiles(&profiles_path)?;
    let problem = AllocationProblem {
        profiles,
        g_candidates,
        g_target: Budget::parse(&g_target)?,
    };
    let allocation = solve_allocation(&problem)?;
    let file = AssignmentFile {
        g_target,
        levels: allocation.levels.clone(),
        objective: allocation.objective,
        weighted_avg_g: allocation.weighted_avg_g,
        layers: problem
            .profiles
            .iter()
            .zip(&allocation.levels)
            .map(|(p, &g)| AssignmentLayer { id: p.id, name: p.name.clone(), ops: p.ops, g })
            .collect(),
    };
    std::fs::write(&out, serde_json::to_string_pretty(&file)?)?;
    common::write_config_snapshot(&out, &cfg)?;
    println!(
        "allocate: levels={:?} objective={:.4e} weighted_avg_g={:.3}",
        allocation.levels, allocation.objective, allocation.weighted_avg_g
    );
    Ok(())
}

// --------------------------------------------------------------- infer

#[derive(Parser)]
pub struct InferArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    model: Option<PathBuf>,
    /// Dataset directory to evaluate.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Assignment JSON from `allocate`.
    #[arg(long)]
    plan: Option<PathBuf>,
    /// Uniform protection level (alternative to --plan).
    #[arg(long)]
    g: Option<u8>,
    #[arg(long)]
    lut: Option<PathBuf>,
    #[arg(long)]
    power: Option<PathBuf>,
    #[arg(long)]
    shape: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
pub struct InferConfig {
    pub model: Option<PathBuf>,
    pub data: Option<PathBuf>,
    pub plan: Option<PathBuf>,
    pub g: Option<u8>,
    pub lut: Option<PathBuf>,
    pub power: Option<PathBuf>,
    pub shape: Option<String>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

/// Results JSON consumed by `report`.
#[derive(Serialize, Deserialize)]
pub struct InferResults {
    pub model: String,
    pub data: String,
    pub precision: String,
    pub levels: Vec<u8>,
    pub exact: bool,
    pub seed: u64,
    pub n: usize,
    pub correct: usize,
    pub accuracy: f64,
    pub mean_logit_mse_vs_exact: f64,
    pub total_cycles: u64,
    pub energy_uj_per_inference: f64,
    pub per_layer: Vec<LayerStats>,
}

pub fn run_infer(args: InferArgs) -> Result<()> {
    let mut cfg: InferConfig = common::load_config(&args.config)?;
    if args.model.is_some() {
        cfg.model = args.model;
    }
    if args.data.is_some() {
        cfg.data = args.data;
    }
    if args.plan.is_some() {
        cfg.plan = args.plan;
    }
    if args.g.is_some() {
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
    if args.seed.is_some() {
        cfg.seed = args.seed;
    }
    if args.out.is_some() {
        cfg.out = args.out;
    }

    let model_path = cfg.model.clone().ok_or_else(|| Error::config("missing --model"))?;
    let data_dir = cfg.data.clone().ok_or_else(|| Error::config("missing --data"))?;
    let seed = cfg.seed.ok_or_else(|| Error::config("--seed is mandatory"))?;
    let out = cfg.out.clone().ok_or_else(|| Error::config("missing --out"))?;
    let shape = parse_shape(&cfg.shape)?;
    let power = load_power(&cfg.power)?;

    let model = load_model(&model_path)?;
    let plan = match (&cfg.plan, cfg.g) {
        (Some(path), _) => {
            let file: AssignmentFile = serde_json::from_str(&std::fs::read_to_string(path)?)?;
            GavPlan::from_levels(&model, &file.levels)?
        }
        (None, Some(g)) => GavPlan::uniform(&model, g)?,
        (None, None) => GavPlan::fully_guarded(&model)?,
    };
    let lut = match &cfg.lut {
        Some(path) => Some(load_lut(path)?.0),
        None => None,
    };
    if !plan.is_fully_guarded() && lut.is_none() {
        return Err(Error::config(
            "plan contains approximate passes but no --lut was given",
        ));
    }

    let items = load_dataset(&data_dir)?;
    let batch = quantized_dataset(&items, &model)?;
    let mut correct = 0usize;
    let mut total_cycles = 0u64;
    let mut total_energy = 0.0f64;
    let mut mse_sum = 0.0f64;
    let mut per_layer: Vec<LayerStats> = Vec::new();
    for (i, (x, label)) in batch.iter().enumerate() {
        let item_seed = substream_u64(seed, "infer-item", i as u64);
        let output = infer(&model, &plan, x, lut.as_ref(), shape, item_seed)?;
        if output.argmax() == *label {
            correct += 1;
        }
        let exact_logits = infer_reference(&model, x)?;
        mse_sum += output
            .logits
            .iter()
            .zip(&exact_logits)
            .map(|(a, e)| (a - e) * (a - e))
            .sum::<f64>()
            / exact_logits.len() as f64;
        total_cycles += output.total_cycles;
        total_energy += stats_energy_uj(&output.layer_stats, &power)?;
        if i == 0 {
            per_layer = output.layer_stats;
        }
    }
    let n = batch.len();
    let infos = model.gemm_layer_info()?;
    let results = InferResults {
        model: model_path.display().to_string(),
        data: data_dir.display().to_string(),
        precision: format!("a{}w{}", infos[0].a_bits, infos[0].b_bits),
        levels: plan.levels(),
        exact: plan.is_fully_guarded(),
        seed,
        n,
        correct,
        accuracy: correct as f64 / n as f64,
        mean_logit_mse_vs_exact: mse_sum / n as f64,
        total_cycles,
        energy_uj_per_inference: total_energy / n as f64,
        per_layer,
    };
    std::fs::write(&out, serde_json::to_string_pretty(&results)?)?;
    common::write_config_snapshot(&out, &cfg)?;
    println!(
        "infer: n={} accuracy={:.4} energy={:.4} uJ/inf levels={:?}",
        n, results.accuracy, results.energy_uj_per_inference, results.levels
    );
    Ok(())
}
