//! Exact and error-injected bit-serial GEMM with tiling and cycle
//! accounting.
//!
//! A GEMM multiplies `A [C_total, L_total]` (indexed `A[c][l]`) with
//! `B [K_total, C_total]` into `P[k][l] = sum_c A[c][l] * B[k][c]`.
//! The array computes one binary `[C,L] x [K,C]` product per cycle, so
//! a tile takes exactly `a_bits * b_bits` cycles, one per significance
//! pair `(ba, bb)`. Each iPE output is an unsigned popcount in
//! `[0, C]`; it is shifted by `ba + bb`, sign-corrected for two's
//! complement top bits and accumulated.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::errmodel::ErrorLut;
use crate::error::{Error, Result};
use crate::matrix::{bit_slice, IntMatrix, Signedness};
use crate::schedule::{ArrayShape, GavSchedule, VoltageMode};

/// One hardware tile of the operand index space.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TileCoord {
    pub index: usize,
    pub c0: usize,
    pub l0: usize,
    pub k0: usize,
}

/// Tiles covering `[c_total] x [l_total] x [k_total]` exactly once, in
/// deterministic k-outer, l-middle, c-inner order. Partial tiles are
/// zero-padded by the engine.
pub fn tile_iterator(
    c_total: usize,
    l_total: usize,
    k_total: usize,
    shape: ArrayShape,
) -> Vec<TileCoord> {
    let mut tiles = Vec::new();
    let mut index = 0;
    for k0 in (0..k_total).step_by(shape.k) {
        for l0 in (0..l_total).step_by(shape.l) {
            for c0 in (0..c_total).step_by(shape.c) {
                tiles.push(TileCoord { index, c0, l0, k0 });
                index += 1;
            }
        }
    }
    tiles
}

/// Inner-product element: popcount of the AND of two binary vectors.
/// The result fits in `S_BITS = ceil(log2(C+1))` bits.
pub fn ipe_column(a_bits_vec: &[u8], b_bits_vec: &[u8]) -> u32 {
    debug_assert_eq!(a_bits_vec.len(), b_bits_vec.len());
    a_bits_vec
        .iter()
        .zip(b_bits_vec)
        .map(|(&a, &b)| (a & b) as u32)
        .sum()
}

/// Position of one array pass, as seen by an [`IpeSampler`].
#[derive(Debug, Clone, Copy)]
pub struct PassCtx {
    pub tile: usize,
    pub ba: u8,
    pub bb: u8,
    pub k_local: usize,
    pub l_local: usize,
    /// Physical iPE index `k_local * L + l_local`; stable across tiles.
    pub ipe: usize,
    /// Output coordinates served by this iPE in this tile.
    pub k_global: usize,
    pub l_global: usize,
    /// False for padded positions whose output is dropped.
    pub in_range: bool,
}

/// Observer/injector for per-cycle iPE outputs.
///
/// The engine calls `pass` for every iPE on every cycle, guarded or
/// not, so stateful injectors can track the physical previous-input
/// and previous-output chains. The returned value replaces the iPE
/// output before shift, sign and accumulation; guarded passes must
/// return `exact`.
pub trait IpeSampler {
    fn pass(
        &mut self,
        ctx: &PassCtx,
        a_bits_vec: &[u8],
        b_bits_vec: &[u8],
        exact: u32,
        prev_exact: u32,
        approx: bool,
    ) -> u32;
}

/// Sampler of the exact datapath: every pass returns the popcount.
pub struct ExactSampler;

impl IpeSampler for ExactSampler {
    fn pass(
        &mut self,
        _ctx: &PassCtx,
        _a: &[u8],
        _b: &[u8],
        exact: u32,
        _prev: u32,
        _approx: bool,
    ) -> u32 {
        exact
    }
}

/// LUT-driven injector used by [`gemm_gav`].
struct LutSampler<'a> {
    lut: &'a ErrorLut,
    rng: ChaCha8Rng,
}

impl IpeSampler for LutSampler<'_> {
    fn pass(
        &mut self,
        _ctx: &PassCtx,
        _a: &[u8],
        _b: &[u8],
        exact: u32,
        prev_exact: u32,
        approx: bool,
    ) -> u32 {
        if approx {
            self.lut.sample_one(exact, prev_exact, &mut self.rng)
        } else {
            exact
        }
    }
}

/// A bit-serial GEMM invocation.
#[derive(Clone)]
pub struct GemmJob<'a> {
    /// Left operand, `[C_total, L_total]`.
    pub a: &'a IntMatrix,
    /// Right operand, `[K_total, C_total]`.
    pub b: &'a IntMatrix,
    /// Hardware tile geometry.
    pub shape: ArrayShape,
    pub schedule: GavSchedule,
    /// Error model for approximate passes ([`gemm_gav`] only).
    pub error_model: Option<&'a ErrorLut>,
    pub seed: u64,
}

impl GemmJob<'_> {
    fn validate(&self) -> Result<()> {
        if self.a.cols() == 0 || self.b.rows() == 0 {
            return Err(Error::invalid("empty operands"));
        }
        if self.a.rows() != self.b.cols() {
            return Err(Error::DimensionMismatch(format!(
                "inner dims disagree: A is [{}, {}], B is [{}, {}]",
                self.a.rows(),
                self.a.cols(),
                self.b.rows(),
                self.b.cols()
            )));
        }
        if self.a.bits() != self.schedule.a_bits || self.b.bits() != self.schedule.b_bits {
            return Err(Error::invalid(format!(
                "operand precisions a{}w{} do not match schedule {}",
                self.a.bits(),
                self.b.bits(),
                self.schedule.precision_label()
            )));
        }
        Ok(())
    }

    pub fn c_total(&self) -> usize {
        self.a.rows()
    }

    pub fn l_total(&self) -> usize {
        self.a.cols()
    }

    pub fn k_total(&self) -> usize {
        self.b.rows()
    }
}

/// Result of a bit-serial GEMM.
#[derive(Debug, Clone)]
pub struct GemmResult {
    /// Signed product matrix `[K_total, L_total]` at accumulator width.
    pub p: IntMatrix,
    /// Total array cycles: `tile_count * a_bits * b_bits`.
    pub cycles: u64,
    /// Cycles spent at the approximate voltage.
    pub approx_cycles: u64,
    pub tile_count: u64,
}

fn ceil_log2(n: usize) -> u32 {
    debug_assert!(n >= 1);
    if n == 1 {
        0
    } else {
        usize::BITS - (n - 1).leading_zeros()
    }
}

fn signed_width(v: i64) -> u32 {
    let magnitude = if v < 0 { !v } else { v };
    65 - magnitude.leading_zeros()
}

/// Exact bit-serial GEMM. Any error model on the job is ignored.
pub fn gemm_exact(job: &GemmJob) -> Result<GemmResult> {
    gemm_with_sampler(job, &mut ExactSampler)
}

/// Error-injected bit-serial GEMM: approximate passes run every iPE
/// output through the job's error model before shift/sign/accumulate.
pub fn gemm_gav(job: &GemmJob) -> Result<GemmResult> {
    let lut = job
        .error_model
        .ok_or_else(|| Error::config("gemm_gav requires an error model"))?;
    if lut.c() != job.shape.c {
        return Err(Error::config(format!(
            "error model calibrated for C={}, array has C={}",
            lut.c(),
            job.shape.c
        )));
    }
    let mut sampler = LutSampler { lut, rng: ChaCha8Rng::seed_from_u64(job.seed) };
    gemm_with_sampler(job, &mut sampler)
}

/// Bit-serial GEMM with a caller-provided per-cycle output sampler.
pub fn gemm_with_sampler(job: &GemmJob, sampler: &mut dyn IpeSampler) -> Result<GemmResult> {
    job.validate()?;
    let (c_total, l_total, k_total) = (job.c_total(), job.l_total(), job.k_total());
    let shape = job.shape;
    let (tile_c, tile_l, tile_k) = (shape.c, shape.l, shape.k);
    let sched = &job.schedule;
    let (a_bits, b_bits) = (sched.a_bits as usize, sched.b_bits as usize);

    let a_planes = bit_slice(job.a)?;
    let b_planes = bit_slice(job.b)?;

    // Pass modes are a pure function of (ba, bb); precompute.
    let mut approx_pass = vec![false; a_bits * b_bits];
    for ba in 0..a_bits {
        for bb in 0..b_bits {
            approx_pass[ba * b_bits + bb] =
                sched.mode(ba as u8, bb as u8)? == VoltageMode::Approx;
        }
    }
    let sign_a = |ba: usize| -> i64 {
        if job.a.signedness() == Signedness::Signed && ba == a_bits - 1 {
            -1
        } else {
            1
        }
    };
    let sign_b = |bb: usize| -> i64 {
        if job.b.signedness() == Signedness::Signed && bb == b_bits - 1 {
            -1
        } else {
            1
        }
    };

    let tiles = tile_iterator(c_total, l_total, k_total, shape);
    let mut acc = vec![0i64; k_total * l_total];
    // Previous exact output per physical iPE, chained across all tiles.
    let mut prev_exact = vec![0u32; shape.ipes()];
    let mut approx_cycles = 0u64;

    // Zero-padded tile operand planes: A columns as [l][c] rows, B rows
    // as [k][c] rows, one buffer per significance plane.
    let mut a_cols = vec![vec![0u8; tile_l * tile_c]; a_bits];
    let mut b_rows = vec![vec![0u8; tile_k * tile_c]; b_bits];

    for tile in &tiles {
        for (ba, buf) in a_cols.iter_mut().enumerate() {
            let plane = a_planes.plane(ba);
            buf.fill(0);
            for l in 0..tile_l.min(l_total - tile.l0) {
                let col = tile.l0 + l;
                let dst = &mut buf[l * tile_c..];
                for c in 0..tile_c.min(c_total - tile.c0) {
                    dst[c] = plane[(tile.c0 + c) * l_total + col];
                }
            }
        }
        for (bb, buf) in b_rows.iter_mut().enumerate() {
            let plane = b_planes.plane(bb);
            buf.fill(0);
            for k in 0..tile_k.min(k_total - tile.k0) {
                let row = tile.k0 + k;
                let dst = &mut buf[k * tile_c..];
                for c in 0..tile_c.min(c_total - tile.c0) {
                    dst[c] = plane[row * c_total + tile.c0 + c];
                }
            }
        }

        for ba in 0..a_bits {
            for bb in 0..b_bits {
                let approx = approx_pass[ba * b_bits + bb];
                if approx {
                    approx_cycles += 1;
                }
                let sign = sign_a(ba) * sign_b(bb);
                let weight = sign << (ba + bb);
                for k in 0..tile_k {
                    let b_vec = &b_rows[bb][k * tile_c..(k + 1) * tile_c];
                    for l in 0..tile_l {
                        let a_vec = &a_cols[ba][l * tile_c..(l + 1) * tile_c];
                        let exact = ipe_column(a_vec, b_vec);
                        let ipe = k * tile_l + l;
                        let (kg, lg) = (tile.k0 + k, tile.l0 + l);
                        let in_range = kg < k_total && lg < l_total;
                        let ctx = PassCtx {
                            tile: tile.index,
                            ba: ba as u8,
                            bb: bb as u8,
                            k_local: k,
                            l_local: l,
                            ipe,
                            k_global: kg,
                            l_global: lg,
                            in_range,
                        };
                        let out = sampler.pass(&ctx, a_vec, b_vec, exact, prev_exact[ipe], approx);
                        prev_exact[ipe] = exact;
                        if in_range {
                            let term = weight * out as i64;
                            let slot = &mut acc[kg * l_total + lg];
                            *slot = slot.checked_add(term).ok_or_else(|| {
                                Error::Overflow("64-bit accumulator overflow".into())
                            })?;
                        }
                    }
                }
            }
        }
    }

    // Result width: at least the nominal accumulator width, grown to
    // fit injected values, capped by the i32 storage.
    let nominal = sched.a_bits as u32 + sched.b_bits as u32 + ceil_log2(c_total);
    let mut width = nominal.max(2);
    for &v in &acc {
        width = width.max(signed_width(v));
    }
    if width > 31 {
        return Err(Error::Overflow(format!(
            "result needs {width} bits, exceeds i32 storage"
        )));
    }
    let data: Vec<i32> = acc.into_iter().map(|v| v as i32).collect();
    let p = IntMatrix::new(k_total, l_total, data, width as u8, Signedness::Signed)?;

    let tile_count = tiles.len() as u64;
    Ok(GemmResult {
        p,
        cycles: tile_count * (a_bits * b_bits) as u64,
        approx_cycles,
        tile_count,
    })
}
