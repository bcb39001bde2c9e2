//! Cross-validation of the LUT error model against the gate-delay
//! timing surrogate: the same GEMM workload is run once with timing
//! injection and once with LUT sampling, and the resulting error
//! statistics are compared.

use serde::{Deserialize, Serialize};

use crate::engine::{gemm_exact, gemm_gav, gemm_with_sampler, GemmJob, IpeSampler, PassCtx};
use crate::errmodel::{prev_from_exact, ErrorLut};
use crate::error::Result;
use crate::metrics::{gen_characterization_matrices, var_ned, CharDims};
use crate::oracle::{ErrorTrace, IpeNetlist, TimingConfig, TimingSim};
use crate::rng::{substream, substream_u64};
use crate::schedule::{ArrayShape, GavSchedule};

/// Engine sampler that injects timing errors by simulating the iPE
/// netlist for every approximate pass. Each physical iPE keeps its own
/// previous-input state, so switching activity matches the hardware
/// sequence; guarded passes settle the state without injecting.
pub struct TimingInjector<'a> {
    sim: TimingSim<'a>,
    prev_inputs: Vec<(Vec<u8>, Vec<u8>)>,
}

impl<'a> TimingInjector<'a> {
    pub fn new(net: &'a IpeNetlist, cfg: &TimingConfig, shape: ArrayShape) -> Self {
        assert_eq!(net.c(), shape.c, "netlist C must match array C");
        Self {
            sim: TimingSim::new(net, cfg),
            prev_inputs: vec![(vec![0u8; net.c()], vec![0u8; net.c()]); shape.ipes()],
        }
    }
}

impl IpeSampler for TimingInjector<'_> {
    fn pass(
        &mut self,
        ctx: &PassCtx,
        a_vec: &[u8],
        b_vec: &[u8],
        exact: u32,
        _prev_exact: u32,
        approx: bool,
    ) -> u32 {
        let out = if approx {
            let (pa, pb) = &self.prev_inputs[ctx.ipe];
            self.sim.cycle(pa, pb, a_vec, b_vec)
        } else {
            exact
        };
        let (pa, pb) = &mut self.prev_inputs[ctx.ipe];
        pa.copy_from_slice(a_vec);
        pb.copy_from_slice(b_vec);
        out
    }
}

/// Outcome of a model-vs-oracle comparison.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub oracle_var_ned: f64,
    pub model_var_ned: f64,
    /// `|model - oracle| / oracle`.
    pub relative_gap: f64,
    pub oracle_mean_ber: f64,
    pub model_mean_ber: f64,
    pub n: usize,
}

fn gap(model: f64, oracle: f64) -> f64 {
    if oracle == 0.0 {
        if model == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        (model - oracle).abs() / oracle
    }
}

/// Trace-level validation: resample the trace's exact sequence through
/// the LUT and compare output-value error statistics against the
/// recorded (timing-simulated) samples.
pub fn validate_against_traces(
    lut: &ErrorLut,
    traces: &[ErrorTrace],
    seed: u64,
) -> Result<ComparisonReport> {
    let mut exact_all = Vec::new();
    let mut oracle_all = Vec::new();
    let mut model_all = Vec::new();
    let mut oracle_flips = 0u64;
    let mut model_flips = 0u64;
    let mut bits = 0u64;
    for (i, trace) in traces.iter().enumerate() {
        let exact: Vec<u32> = trace.records.iter().map(|r| r.exact as u32).collect();
        let prev = prev_from_exact(&exact);
        let mut rng = substream(seed, "validate-trace", i as u64);
        let model = lut.sample_errors(&exact, &prev, &mut rng)?;
        for (rec, &m) in trace.records.iter().zip(&model) {
            oracle_flips += (rec.exact ^ rec.sampled).count_ones() as u64;
            model_flips += (rec.exact as u32 ^ m).count_ones() as u64;
            bits += trace.s_bits as u64;
            exact_all.push(rec.exact as f64);
            oracle_all.push(rec.sampled as f64);
            model_all.push(m as f64);
        }
    }
    let oracle_stats = var_ned(&exact_all, &oracle_all)?;
    let model_stats = var_ned(&exact_all, &model_all)?;
    Ok(ComparisonReport {
        oracle_var_ned: oracle_stats.var_ned,
        model_var_ned: model_stats.var_ned,
        relative_gap: gap(model_stats.var_ned, oracle_stats.var_ned),
        oracle_mean_ber: oracle_flips as f64 / bits as f64,
        model_mean_ber: model_flips as f64 / bits as f64,
        n: exact_all.len(),
    })
}

/// GEMM-level validation on held-out random matrices: run the same
/// jobs once with timing injection and once with LUT sampling, and
/// compare the end-to-end output error statistics.
#[allow(clippy::too_many_arguments)]
pub fn compare_on_gemms(
    net: &IpeNetlist,
    cfg: &TimingConfig,
    lut: &ErrorLut,
    dims: CharDims,
    bits: u8,
    shape: ArrayShape,
    g: u8,
    n_runs: usize,
    master_seed: u64,
) -> Result<ComparisonReport> {
    let schedule = GavSchedule::new(bits, bits, g)?;
    let mut exact_all = Vec::new();
    let mut oracle_all = Vec::new();
    let mut model_all = Vec::new();
    for run in 0..n_runs {
        let seed = substream_u64(master_seed, "validate-mat", run as u64);
        let (a, b) = gen_characterization_matrices(dims, bits, seed)?;
        let mut job = GemmJob { a: &a, b: &b, shape, schedule, error_model: None, seed: 0 };
        let exact = gemm_exact(&job)?;
        let mut injector = TimingInjector::new(net, cfg, shape);
        let oracle = gemm_with_sampler(&job, &mut injector)?;
        job.error_model = Some(lut);
        job.seed = substream_u64(master_seed, "validate-gemm", run as u64);
        let model = gemm_gav(&job)?;
        exact_all.extend(exact.p.data().iter().map(|&v| v as f64));
        oracle_all.extend(oracle.p.data().iter().map(|&v| v as f64));
        model_all.extend(model.p.data().iter().map(|&v| v as f64));
    }
    let oracle_stats = var_ned(&exact_all, &oracle_all)?;
    let model_stats = var_ned(&exact_all, &model_all)?;
    Ok(ComparisonReport {
        oracle_var_ned: oracle_stats.var_ned,
        model_var_ned: model_stats.var_ned,
        relative_gap: gap(model_stats.var_ned, oracle_stats.var_ned),
        oracle_mean_ber: f64::NAN,
        model_mean_ber: f64::NAN,
        n: exact_all.len(),
    })
}
