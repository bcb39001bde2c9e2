//! Array geometry and the per-significance voltage schedule.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Geometry of the parallel compute array: one binary `[C,L] x [K,C]`
/// product per clock cycle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArrayShape {
    /// Inner-product length (number of AND lanes per iPE).
    pub c: usize,
    /// Output columns computed per cycle.
    pub l: usize,
    /// Output rows computed per cycle.
    pub k: usize,
}

impl ArrayShape {
    pub fn new(c: usize, l: usize, k: usize) -> Result<Self> {
        if c == 0 || l == 0 || k == 0 {
            return Err(Error::invalid("array shape dimensions must be >= 1"));
        }
        Ok(Self { c, l, k })
    }

    /// iPE output width: `ceil(log2(C+1))` bits, enough for counts in `[0, C]`.
    pub fn s_bits(&self) -> u32 {
        s_bits_for(self.c)
    }

    /// iPEs in the array (outputs per cycle).
    pub fn ipes(&self) -> usize {
        self.k * self.l
    }
}

/// Bits needed to hold an unsigned count in `[0, c]`.
pub fn s_bits_for(c: usize) -> u32 {
    usize::BITS - c.leading_zeros()
}

/// Supply mode of one bit-significance pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum VoltageMode {
    /// Safe voltage; the pass computes exactly.
    Guard,
    /// Overscaled voltage; the pass is subject to timing errors.
    Approx,
}

/// Maps each bit-significance pair `(ba, bb)` to a voltage mode from a
/// single protection level `G`.
///
/// Combined significance `s = ba + bb` ranges over
/// `[0, a_bits + b_bits - 2]`; the top `G` significance levels are
/// guarded: `Guard` iff `s >= (a_bits + b_bits - 1) - G`. Thus
/// `G = 0` runs every pass approximate and `G = a_bits + b_bits - 1`
/// guards them all.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GavSchedule {
    pub a_bits: u8,
    pub b_bits: u8,
    /// Protection level in `[0, a_bits + b_bits - 1]`.
    pub g: u8,
    /// Guarded supply voltage (volts, metadata only).
    pub v_guard: f64,
    /// Approximate supply voltage (volts, metadata only).
    pub v_aprox: f64,
}

/// Voltage defaults used when the schedule metadata is not overridden.
pub const DEFAULT_V_GUARD: f64 = 0.55;
pub const DEFAULT_V_APROX: f64 = 0.35;

impl GavSchedule {
    pub fn new(a_bits: u8, b_bits: u8, g: u8) -> Result<Self> {
        if !(2..=8).contains(&a_bits) || !(2..=8).contains(&b_bits) {
            return Err(Error::invalid(format!(
                "operand precisions must be in [2, 8], got a{a_bits}w{b_bits}"
            )));
        }
        if g > Self::max_g_for(a_bits, b_bits) {
            return Err(Error::invalid(format!(
                "G={g} outside [0, {}] for a{a_bits}w{b_bits}",
                Self::max_g_for(a_bits, b_bits)
            )));
        }
        Ok(Self { a_bits, b_bits, g, v_guard: DEFAULT_V_GUARD, v_aprox: DEFAULT_V_APROX })
    }

    /// Fully guarded schedule (every pass exact).
    pub fn fully_guarded(a_bits: u8, b_bits: u8) -> Result<Self> {
        Self::new(a_bits, b_bits, Self::max_g_for(a_bits, b_bits))
    }

    pub fn max_g_for(a_bits: u8, b_bits: u8) -> u8 {
        a_bits + b_bits - 1
    }

    pub fn max_g(&self) -> u8 {
        Self::max_g_for(self.a_bits, self.b_bits)
    }

    /// Voltage mode of the pass computing significances `(ba, bb)`.
    pub fn mode(&self, ba: u8, bb: u8) -> Result<VoltageMode> {
        if ba >= self.a_bits || bb >= self.b_bits {
            return Err(Error::invalid(format!(
                "bit indices ({ba},{bb}) out of range for a{}w{}",
                self.a_bits, self.b_bits
            )));
        }
        let threshold = (self.a_bits + self.b_bits - 1) - self.g;
        Ok(if ba + bb >= threshold { VoltageMode::Guard } else { VoltageMode::Approx })
    }

    /// Number of `(ba, bb)` passes in approximate mode.
    pub fn approx_pass_count(&self) -> u32 {
        let mut n = 0;
        for ba in 0..self.a_bits {
            for bb in 0..self.b_bits {
                if self.mode(ba, bb).unwrap() == VoltageMode::Approx {
                    n += 1;
                }
            }
        }
        n
    }

    /// Total `(ba, bb)` passes per tile.
    pub fn total_passes(&self) -> u32 {
        self.a_bits as u32 * self.b_bits as u32
    }

    /// Fraction of passes run at the approximate voltage.
    pub fn approx_fraction(&self) -> f64 {
        self.approx_pass_count() as f64 / self.total_passes() as f64
    }

    /// Short form like `a4w4`.
    pub fn precision_label(&self) -> String {
        format!("a{}w{}", self.a_bits, self.b_bits)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn s_bits_matches_count_width() {
        assert_eq!(s_bits_for(576), 10);
        assert_eq!(s_bits_for(32), 6);
        assert_eq!(s_bits_for(2), 2);
        assert_eq!(s_bits_for(1), 1);
    }

    #[test]
    fn extremes_guard_and_approx_everything() {
        let all_approx = GavSchedule::new(4, 4, 0).unwrap();
        let all_guard = GavSchedule::new(4, 4, 7).unwrap();
        for ba in 0..4 {
            for bb in 0..4 {
                assert_eq!(all_approx.mode(ba, bb).unwrap(), VoltageMode::Approx);
                assert_eq!(all_guard.mode(ba, bb).unwrap(), VoltageMode::Guard);
            }
        }
        assert_eq!(all_approx.approx_fraction(), 1.0);
        assert_eq!(all_guard.approx_fraction(), 0.0);
    }

    #[test]
    fn mid_g_threshold() {
        let s = GavSchedule::new(4, 4, 3).unwrap();
        assert_eq!(s.mode(3, 1).unwrap(), VoltageMode::Guard); // sum 4 >= 4
        assert_eq!(s.mode(2, 1).unwrap(), VoltageMode::Approx); // sum 3 < 4
    }

    #[test]
    fn out_of_range_indices_rejected() {
        let s = GavSchedule::new(4, 4, 3).unwrap();
        assert!(s.mode(4, 0).is_err());
        assert!(s.mode(0, 4).is_err());
    }

    #[test]
    fn guard_set_grows_with_g() {
        for (a, b) in [(2u8, 2u8), (4, 4), (3, 5), (8, 8)] {
            let mut prev_approx = (a as u32) * (b as u32);
            for g in 0..=GavSchedule::max_g_for(a, b) {
                let s = GavSchedule::new(a, b, g).unwrap();
                let approx = s.approx_pass_count();
                assert!(approx <= prev_approx, "approx count must not grow with G");
                // monotone per pair: guard pairs at g stay guarded at g+1
                if g > 0 {
                    let lower = GavSchedule::new(a, b, g - 1).unwrap();
                    for ba in 0..a {
                        for bb in 0..b {
                            if lower.mode(ba, bb).unwrap() == VoltageMode::Guard {
                                assert_eq!(s.mode(ba, bb).unwrap(), VoltageMode::Guard);
                            }
                        }
                    }
                }
                prev_approx = approx;
            }
            assert_eq!(GavSchedule::new(a, b, 0).unwrap().approx_pass_count(), a as u32 * b as u32);
            assert_eq!(
                GavSchedule::fully_guarded(a, b).unwrap().approx_pass_count(),
                0
            );
        }
    }
}
