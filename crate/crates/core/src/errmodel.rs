//! Heuristic LUT-based undervolting error model: calibration from
//! gate-delay traces and per-cycle error sampling.
//!
//! The model captures four dependencies of iPE output bit errors: the
//! bit significance, the exact output value, the previous output value
//! (binned) and the error state of already-sampled higher-significance
//! neighbor bits. Tables are ragged: bit `b` conditions on its
//! `min(n_nei, S_BITS-1-b)` higher-significance neighbors, so the MSB
//! table has a single condition entry.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::oracle::ErrorTrace;
use crate::schedule::s_bits_for;

/// Model parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LutParams {
    /// Inner-product length the model is calibrated for.
    pub c: usize,
    /// Higher-significance neighbors conditioned on.
    pub n_nei: u32,
    /// Equal-width bins over the previous-output range `[0, C]`.
    pub p_bins: usize,
    /// Laplace smoothing for observed cells.
    pub lambda: f64,
}

/// Default neighbor/bin configuration.
pub const DEFAULT_N_NEI: u32 = 2;
pub const DEFAULT_P_BINS: usize = 16;
pub const DEFAULT_LAMBDA: f64 = 0.5;

impl LutParams {
    pub fn new(c: usize, n_nei: u32, p_bins: usize) -> Self {
        Self { c, n_nei, p_bins, lambda: DEFAULT_LAMBDA }
    }

    pub fn with_lambda(mut self, lambda: f64) -> Self {
        self.lambda = lambda;
        self
    }

    pub fn defaults(c: usize) -> Self {
        Self::new(c, DEFAULT_N_NEI, DEFAULT_P_BINS)
    }
}

/// Equal-width bin of a previous output value over `[0, C]`:
/// `min(floor(prev * p_bins / (C+1)), p_bins - 1)`.
pub fn prev_bin(prev_output: u32, c: usize, p_bins: usize) -> usize {
    debug_assert!(prev_output as usize <= c);
    ((prev_output as usize * p_bins) / (c + 1)).min(p_bins - 1)
}

/// Probability tables for one output bit.
#[derive(Debug, Clone)]
struct BitTable {
    /// Conditions: `2^min(n_nei, S_BITS-1-bit)`.
    n_cond: usize,
    /// Flip probability per `[exact][prev_bin][cond]`, flattened.
    probs: Vec<f64>,
    /// Observation count per cell (calibration diagnostics).
    counts: Vec<u64>,
    /// Flip count per cell.
    flips: Vec<u64>,
}

impl BitTable {
    fn new(c: usize, p_bins: usize, n_cond: usize) -> Self {
        let n = (c + 1) * p_bins * n_cond;
        Self { n_cond, probs: vec![0.0; n], counts: vec![0; n], flips: vec![0; n] }
    }
}

/// Ragged probability tables indexed by
/// `[output bit][exact output][prev bin][neighbor condition]`.
#[derive(Debug, Clone)]
pub struct ErrorLut {
    params: LutParams,
    s_bits: u32,
    tables: Vec<BitTable>,
}

impl ErrorLut {
    /// All-zero model: sampling is the identity transformation.
    pub fn zeros(params: LutParams) -> Self {
        Self::filled(params, 0.0)
    }

    /// Constant flip probability in every cell of every bit.
    pub fn constant_flip_prob(params: LutParams, p: f64) -> Self {
        Self::filled(params, p)
    }

    /// p = 1 on one output bit, 0 elsewhere (deterministic flip).
    pub fn single_bit_flip(params: LutParams, bit: u32) -> Self {
        let mut lut = Self::zeros(params);
        for v in lut.tables[bit as usize].probs.iter_mut() {
            *v = 1.0;
        }
        lut
    }

    fn filled(params: LutParams, p: f64) -> Self {
        let s_bits = s_bits_for(params.c);
        let tables = (0..s_bits)
            .map(|b| {
                let n_cond = 1usize << params.n_nei.min(s_bits - 1 - b);
                let mut t = BitTable::new(params.c, params.p_bins, n_cond);
                if p != 0.0 {
                    t.probs.fill(p);
                }
                t
            })
            .collect();
        Self { params, s_bits, tables }
    }

    pub fn params(&self) -> LutParams {
        self.params
    }

    pub fn c(&self) -> usize {
        self.params.c
    }

    pub fn s_bits(&self) -> u32 {
        self.s_bits
    }

    /// Condition-table width of one bit (1 for the MSB).
    pub fn conditions_for_bit(&self, bit: u32) -> usize {
        self.tables[bit as usize].n_cond
    }

    /// Flip probability in one cell.
    pub fn prob(&self, bit: u32, exact: u32, pbin: usize, cond: u32) -> f64 {
        let t = &self.tables[bit as usize];
        t.probs[cell_index(t.n_cond, self.params.p_bins, exact, pbin, cond)]
    }

    /// Observation count in one cell.
    pub fn count(&self, bit: u32, exact: u32, pbin: usize, cond: u32) -> u64 {
        let t = &self.tables[bit as usize];
        t.counts[cell_index(t.n_cond, self.params.p_bins, exact, pbin, cond)]
    }

    /// Sample an erroneous output for one cycle. Bits are sampled from
    /// the MSB down; each bit's condition is the error pattern of its
    /// already-sampled higher-significance neighbors (nearest neighbor
    /// in the condition LSB). Exactly `S_BITS` uniform draws are
    /// consumed per call.
    pub fn sample_one(&self, exact: u32, prev: u32, rng: &mut impl Rng) -> u32 {
        debug_assert!(exact as usize <= self.params.c);
        debug_assert!(prev as usize <= self.params.c);
        let pbin = prev_bin(prev, self.params.c, self.params.p_bins);
        let mut err_mask = 0u32;
        for bit in (0..self.s_bits).rev() {
            let t = &self.tables[bit as usize];
            let n_used = self.params.n_nei.min(self.s_bits - 1 - bit);
            let cond = (err_mask >> (bit + 1)) & ((1u32 << n_used) - 1);
            let p = t.probs[cell_index(t.n_cond, self.params.p_bins, exact, pbin, cond)];
            let u: f64 = rng.gen();
            if u < p {
                err_mask |= 1 << bit;
            }
        }
        exact ^ err_mask
    }

    /// Sample a whole aligned sequence. `prev_seq[i]` must hold the
    /// exact output of cycle `i - 1` (0 for the first cycle).
    pub fn sample_errors(
        &self,
        exact_seq: &[u32],
        prev_seq: &[u32],
        rng: &mut impl Rng,
    ) -> Result<Vec<u32>> {
        if exact_seq.len() != prev_seq.len() {
            return Err(Error::invalid("exact/prev sequences must be aligned"));
        }
        if let Some(&v) = exact_seq.iter().chain(prev_seq).find(|&&v| v as usize > self.params.c)
        {
            return Err(Error::config(format!(
                "value {v} exceeds model C={}",
                self.params.c
            )));
        }
        Ok(exact_seq
            .iter()
            .zip(prev_seq)
            .map(|(&e, &p)| self.sample_one(e, p, rng))
            .collect())
    }
}

#[inline]
fn cell_index(n_cond: usize, p_bins: usize, exact: u32, pbin: usize, cond: u32) -> usize {
    (exact as usize * p_bins + pbin) * n_cond + cond as usize
}

/// Previous-output sequence for an exact sequence: shifted by one
/// cycle, 0 for the first.
pub fn prev_from_exact(exact_seq: &[u32]) -> Vec<u32> {
    let mut prev = Vec::with_capacity(exact_seq.len());
    let mut last = 0;
    for &e in exact_seq {
        prev.push(last);
        last = e;
    }
    prev
}

/// Fill the tables with empirical flip frequencies observed in traces.
///
/// For every record and every bit from the MSB down, the condition is
/// the observed error pattern (`sampled XOR exact`) of the bit's
/// higher-significance neighbors. Observed cells get Laplace-smoothed
/// frequencies `(flips + lambda) / (count + 2 lambda)`; unobserved
/// cells stay at probability 0.
pub fn calibrate(traces: &[ErrorTrace], params: LutParams) -> Result<ErrorLut> {
    if traces.is_empty() || traces.iter().all(|t| t.records.is_empty()) {
        return Err(Error::Calibration("no trace records to calibrate from".into()));
    }
    if traces.iter().any(|t| t.c != params.c) {
        return Err(Error::Calibration(format!(
            "trace C does not match model C={}",
            params.c
        )));
    }
    let mut lut = ErrorLut::zeros(params);
    let s_bits = lut.s_bits;
    for trace in traces {
        for rec in &trace.records {
            let err = (rec.exact ^ rec.sampled) as u32;
            let pbin = prev_bin(rec.prev as u32, params.c, params.p_bins);
            for bit in (0..s_bits).rev() {
                let t = &mut lut.tables[bit as usize];
                let n_used = params.n_nei.min(s_bits - 1 - bit);
                let cond = (err >> (bit + 1)) & ((1u32 << n_used) - 1);
                let idx = cell_index(t.n_cond, params.p_bins, rec.exact as u32, pbin, cond);
                t.counts[idx] += 1;
                t.flips[idx] += ((err >> bit) & 1) as u64;
            }
        }
    }
    for t in &mut lut.tables {
        for i in 0..t.probs.len() {
            if t.counts[i] > 0 {
                t.probs[i] = (t.flips[i] as f64 + params.lambda)
                    / (t.counts[i] as f64 + 2.0 * params.lambda);
            }
        }
    }
    Ok(lut)
}

/// Serialized LUT: JSON header plus base64 little-endian arrays.
#[derive(Serialize, Deserialize)]
struct LutFile {
    c: usize,
    s_bits: u32,
    n_nei: u32,
    p_bins: usize,
    lambda: f64,
    source_digest: String,
    tables: Vec<LutFileTable>,
}

#[derive(Serialize, Deserialize)]
struct LutFileTable {
    bit: u32,
    n_cond: usize,
    probs_b64: String,
    counts_b64: String,
    flips_b64: String,
}

fn f64s_to_b64(v: &[f64]) -> String {
    use base64::Engine;
    let mut bytes = Vec::with_capacity(v.len() * 8);
    for x in v {
        bytes.extend_from_slice(&x.to_le_bytes());
    }
    base64::engine::general_purpose::STANDARD.encode(bytes)
}

fn u64s_to_b64(v: &[u64]) -> String {
    use base64::Engine;
    let mut bytes = Vec::with_capacity(v.len() * 8);
    for x in v {
        bytes.extend_from_slice(&x.to_le_bytes());
    }
    base64::engine::general_purpose::STANDARD.encode(bytes)
}

fn b64_to_f64s(s: &str, expect: usize) -> Result<Vec<f64>> {
    use base64::Engine;
    let bytes = base64::engine::general_purpose::STANDARD
        .decode(s)
        .map_err(|e| Error::format(format!("bad base64: {e}")))?;
    if bytes.len() != expect * 8 {
        return Err(Error::format("array length mismatch in LUT file"));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

fn b64_to_u64s(s: &str, expect: usize) -> Result<Vec<u64>> {
    use base64::Engine;
    let bytes = base64::engine::general_purpose::STANDARD
        .decode(s)
        .map_err(|e| Error::format(format!("bad base64: {e}")))?;
    if bytes.len() != expect * 8 {
        return Err(Error::format("array length mismatch in LUT file"));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| u64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

/// Write a calibration file.
pub fn save_lut(path: impl AsRef<Path>, lut: &ErrorLut, source_digest: &str) -> Result<()> {
    let file = LutFile {
        c: lut.params.c,
        s_bits: lut.s_bits,
        n_nei: lut.params.n_nei,
        p_bins: lut.params.p_bins,
        lambda: lut.params.lambda,
        source_digest: source_digest.to_string(),
        tables: lut
            .tables
            .iter()
            .enumerate()
            .map(|(bit, t)| LutFileTable {
                bit: bit as u32,
                n_cond: t.n_cond,
                probs_b64: f64s_to_b64(&t.probs),
                counts_b64: u64s_to_b64(&t.counts),
                flips_b64: u64s_to_b64(&t.flips),
            })
            .collect(),
    };
    let json = serde_json::to_string_pretty(&file)?;
    std::fs::write(path, json)?;
    Ok(())
}

/// Read a calibration file; returns the model and the recorded source
/// trace digest.
#[allow(clippy::type_complexity)]
pub fn load_lut(path: impl AsRef<Path>) -> Result<(ErrorLut, String)> {
    let file: LutFile = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    let params = LutParams {
        c: file.c,
        n_nei: file.n_nei,
        p_bins: file.p_bins,
        lambda: file.lambda,
    };
    let mut lut = ErrorLut::zeros(params);
    if file.s_bits != lut.s_bits {
        return Err(Error::format(format!(
            "LUT file s_bits {} inconsistent with C={}",
            file.s_bits, file.c
        )));
    }
    if file.tables.len() != lut.tables.len() {
        return Err(Error::format("LUT file table count mismatch"));
    }
    for entry in &file.tables {
        let bit = entry.bit as usize;
        if bit >= lut.tables.len() || lut.tables[bit].n_cond != entry.n_cond {
            return Err(Error::format(format!("bad table for bit {}", entry.bit)));
        }
        let n = lut.tables[bit].probs.len();
        let probs = b64_to_f64s(&entry.probs_b64, n)?;
        if probs.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
            return Err(Error::format("probability outside [0, 1] in LUT file"));
        }
        lut.tables[bit].probs = probs;
        lut.tables[bit].counts = b64_to_u64s(&entry.counts_b64, n)?;
        lut.tables[bit].flips = b64_to_u64s(&entry.flips_b64, n)?;
    }
    Ok((lut, file.source_digest))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::TraceRecord;

    fn trace(c: usize, records: Vec<TraceRecord>) -> ErrorTrace {
        ErrorTrace { c, s_bits: s_bits_for(c), records }
    }

    #[test]
    fn prev_bin_boundaries() {
        assert_eq!(prev_bin(0, 576, 16), 0);
        assert_eq!(prev_bin(576, 576, 16), 15);
        // first boundary at 577/16 ~= 36.06
        assert_eq!(prev_bin(36, 576, 16), 0);
        assert_eq!(prev_bin(37, 576, 16), 1);
    }

    #[test]
    fn calibrate_raw_frequency() {
        // one cell hit 10 times with 3 LSB flips, lambda = 0
        let mut records = Vec::new();
        for i in 0..10u16 {
            let sampled = if i < 3 { 5 ^ 1 } else { 5 };
            records.push(TraceRecord { exact: 5, prev: 2, sampled });
        }
        let params = LutParams::new(8, 2, 4).with_lambda(0.0);
        let lut = calibrate(&[trace(8, records)], params).unwrap();
        let pbin = prev_bin(2, 8, 4);
        assert_eq!(lut.prob(0, 5, pbin, 0), 0.3);
        assert_eq!(lut.count(0, 5, pbin, 0), 10);
    }

    #[test]
    fn calibrate_clean_trace_is_zero() {
        let records = (0..100u16)
            .map(|i| TraceRecord { exact: i % 9, prev: (i + 1) % 9, sampled: i % 9 })
            .collect();
        let params = LutParams::new(8, 2, 4).with_lambda(0.0);
        let lut = calibrate(&[trace(8, records)], params).unwrap();
        for bit in 0..lut.s_bits() {
            for exact in 0..=8 {
                for pbin in 0..4 {
                    for cond in 0..lut.conditions_for_bit(bit) {
                        assert_eq!(lut.prob(bit, exact, pbin, cond as u32), 0.0);
                    }
                }
            }
        }
    }

    #[test]
    fn calibrate_empty_trace_fails() {
        let params = LutParams::defaults(8);
        assert!(matches!(
            calibrate(&[trace(8, vec![])], params),
            Err(Error::Calibration(_))
        ));
    }

    #[test]
    fn msb_has_single_condition() {
        let lut = ErrorLut::zeros(LutParams::defaults(576));
        assert_eq!(lut.s_bits(), 10);
        assert_eq!(lut.conditions_for_bit(9), 1);
        assert_eq!(lut.conditions_for_bit(8), 2);
        for bit in 0..=7 {
            assert_eq!(lut.conditions_for_bit(bit), 4);
        }
    }

    #[test]
    fn zero_lut_is_identity() {
        let lut = ErrorLut::zeros(LutParams::defaults(32));
        let mut rng = crate::rng::substream(1, "zero-lut", 0);
        let exact: Vec<u32> = (0..=32).collect();
        let prev = prev_from_exact(&exact);
        let out = lut.sample_errors(&exact, &prev, &mut rng).unwrap();
        assert_eq!(out, exact);
    }

    #[test]
    fn forced_bit2_flip() {
        let lut = ErrorLut::single_bit_flip(LutParams::defaults(32), 2);
        let mut rng = crate::rng::substream(2, "bit2", 0);
        for exact in 0..=32u32 {
            let out = lut.sample_one(exact, 7, &mut rng);
            assert_eq!(out, exact ^ 0b100);
        }
    }

    #[test]
    fn value_above_c_is_config_error() {
        let lut = ErrorLut::zeros(LutParams::defaults(16));
        let mut rng = crate::rng::substream(3, "range", 0);
        assert!(matches!(
            lut.sample_errors(&[17], &[0], &mut rng),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn conditional_order_msb_first() {
        // bit 3 always flips; bit 2 flips only when its nearest
        // higher-significance neighbor (bit 3) has flipped. Since bit 3
        // is sampled first, bit 2 must always flip too.
        let params = LutParams::defaults(16); // s_bits = 5
        let mut lut = ErrorLut::single_bit_flip(params, 3);
        let s_bits = lut.s_bits();
        let n_used = params.n_nei.min(s_bits - 1 - 2);
        assert_eq!(n_used, 2);
        // cond bit0 = bit3 error, cond bit1 = bit4 error
        for exact in 0..=16u32 {
            for pbin in 0..params.p_bins {
                let t = &mut lut.tables[2];
                let idx = cell_index(t.n_cond, params.p_bins, exact, pbin, 0b01);
                t.probs[idx] = 1.0;
            }
        }
        let mut rng = crate::rng::substream(4, "cond", 0);
        for exact in 0..=16u32 {
            let out = lut.sample_one(exact, 3, &mut rng);
            assert_eq!(out, exact ^ 0b1100, "bits 3 and 2 must both flip");
        }
    }

    #[test]
    fn marginal_fidelity_of_sampler() {
        // Resampled per-(bit, condition) flip frequencies converge to
        // the table values (single cell, 1e5 draws, +/- 3 SE).
        let params = LutParams::new(16, 2, 4);
        let mut lut = ErrorLut::zeros(params);
        let mut seed_rng = crate::rng::substream(5, "cellprobs", 0);
        for t in lut.tables.iter_mut() {
            for p in t.probs.iter_mut() {
                *p = rand::Rng::gen_range(&mut seed_rng, 0.05..0.35);
            }
        }
        let (exact, prev) = (9u32, 4u32);
        let pbin = prev_bin(prev, params.c, params.p_bins);
        let n = 100_000;
        let s_bits = lut.s_bits();
        let mut counts = vec![vec![0u64; 4]; s_bits as usize];
        let mut flips = vec![vec![0u64; 4]; s_bits as usize];
        let mut rng = crate::rng::substream(5, "drawloop", 1);
        for _ in 0..n {
            let out = lut.sample_one(exact, prev, &mut rng);
            let err = out ^ exact;
            for bit in (0..s_bits).rev() {
                let n_used = params.n_nei.min(s_bits - 1 - bit);
                let cond = (err >> (bit + 1)) & ((1u32 << n_used) - 1);
                counts[bit as usize][cond as usize] += 1;
                flips[bit as usize][cond as usize] += ((err >> bit) & 1) as u64;
            }
        }
        for bit in 0..s_bits {
            for cond in 0..lut.conditions_for_bit(bit) as u32 {
                let m = counts[bit as usize][cond as usize];
                if m < 500 {
                    continue;
                }
                let p = lut.prob(bit, exact, pbin, cond);
                let observed = flips[bit as usize][cond as usize] as f64 / m as f64;
                let se = (p * (1.0 - p) / m as f64).sqrt();
                assert!(
                    (observed - p).abs() <= 3.0 * se,
                    "bit {bit} cond {cond}: observed {observed} vs p {p} (se {se})"
                );
            }
        }
    }

    #[test]
    fn calibrate_recovers_generative_probabilities() {
        // Synthesize a trace from known per-bit flip probabilities
        // (unconditional) and check that calibration recovers them.
        let c = 16usize;
        let s_bits = s_bits_for(c);
        let gen_p = [0.02, 0.05, 0.10, 0.15, 0.20];
        let mut rng = crate::rng::substream(6, "gen-trace", 0);
        let mut records = Vec::new();
        let mut prev = 0u16;
        for _ in 0..200_000 {
            let exact = rand::Rng::gen_range(&mut rng, 0..=c as u16);
            let mut err = 0u16;
            for (bit, &p) in gen_p.iter().enumerate().take(s_bits as usize) {
                if rand::Rng::gen::<f64>(&mut rng) < p {
                    err |= 1 << bit;
                }
            }
            records.push(TraceRecord { exact, prev, sampled: exact ^ err });
            prev = exact;
        }
        let params = LutParams::new(c, 2, 4).with_lambda(0.0);
        let lut = calibrate(&[trace(c, records)], params).unwrap();
        // Aggregate recovered marginals per bit (weighted by counts).
        for bit in 0..s_bits {
            let mut flips = 0f64;
            let mut total = 0f64;
            for exact in 0..=c as u32 {
                for pbin in 0..params.p_bins {
                    for cond in 0..lut.conditions_for_bit(bit) as u32 {
                        let n = lut.count(bit, exact, pbin, cond) as f64;
                        flips += lut.prob(bit, exact, pbin, cond) * n;
                        total += n;
                    }
                }
            }
            let recovered = flips / total;
            let expect = gen_p[bit as usize];
            assert!(
                (recovered - expect).abs() < 0.01,
                "bit {bit}: recovered {recovered} vs {expect}"
            );
        }
    }

    #[test]
    fn lut_file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("lut.json");
        let mut records = Vec::new();
        let mut rng = crate::rng::substream(7, "file", 0);
        let mut prev = 0u16;
        for _ in 0..5000 {
            let exact = rand::Rng::gen_range(&mut rng, 0..=16u16);
            let sampled = exact ^ ((rand::Rng::gen::<f64>(&mut rng) < 0.1) as u16);
            records.push(TraceRecord { exact, prev, sampled });
            prev = exact;
        }
        let lut = calibrate(&[trace(16, records)], LutParams::defaults(16)).unwrap();
        save_lut(&path, &lut, "sha256:test").unwrap();
        let (back, digest) = load_lut(&path).unwrap();
        assert_eq!(digest, "sha256:test");
        assert_eq!(back.params(), lut.params());
        for bit in 0..lut.s_bits() {
            for exact in 0..=16 {
                for pbin in 0..lut.params().p_bins {
                    for cond in 0..lut.conditions_for_bit(bit) as u32 {
                        assert_eq!(
                            back.prob(bit, exact, pbin, cond),
                            lut.prob(bit, exact, pbin, cond)
                        );
                        assert_eq!(
                            back.count(bit, exact, pbin, cond),
                            lut.count(bit, exact, pbin, cond)
                        );
                    }
                }
            }
        }
    }
}
