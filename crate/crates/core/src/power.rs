//! Calibrated average-power and energy-efficiency model over
//! precision, undervolting schedule and cycle mix.
//!
//! The default calibration pins the per-precision guarded/approximate
//! power endpoints from measured throughput and efficiency bounds of
//! the reference 576x8x16 array at 50 MHz, and splits each precision's
//! power into three domains: a rest term (memories plus protected
//! logic), a guarded compute region and an approximate compute region
//! whose power is lower by a fixed reduction ratio. Average power at a
//! schedule mixes the region endpoints linearly in the fraction of
//! approximate passes, which reproduces both endpoints exactly.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::schedule::{ArrayShape, GavSchedule};

/// Reference array geometry the calibration numbers belong to.
pub const CALIBRATION_SHAPE: ArrayShape = ArrayShape { c: 576, l: 8, k: 16 };
/// Reference clock (Hz).
pub const CALIBRATION_FREQUENCY: f64 = 50.0e6;
/// Power reduction of the compute region at the approximate voltage.
pub const REGION_REDUCTION_RATIO: f64 = 3.5;

/// Supply voltages of the three power domains (metadata).
pub const V_MEM: f64 = 0.40;
pub const V_GUARD: f64 = 0.55;
pub const V_APROX: f64 = 0.35;

/// Measured throughput/efficiency of one symmetric precision:
/// TOP/s plus the fully-guarded and fully-approximate TOP/sW bounds.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PrecisionCal {
    pub tops: f64,
    pub topsw_guard: f64,
    pub topsw_approx: f64,
}

impl PrecisionCal {
    /// Accelerator power at the fully guarded schedule (mW).
    pub fn p_guard_mw(&self) -> f64 {
        self.tops / self.topsw_guard * 1e3
    }

    /// Accelerator power at the fully approximate schedule (mW).
    pub fn p_approx_mw(&self) -> f64 {
        self.tops / self.topsw_approx * 1e3
    }
}

/// Split of one precision's guarded power into domains (mW).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct DomainSplit {
    /// Memories plus protected logic; voltage-mode independent.
    pub rest_mw: f64,
    /// Compute region at the guarded voltage.
    pub region_guard_mw: f64,
    /// Compute region at the approximate voltage.
    pub region_aprox_mw: f64,
}

/// Per-precision, per-voltage-mode average power calibration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PowerModel {
    /// Clock frequency (Hz).
    pub frequency: f64,
    /// Array geometry the throughput calibration refers to.
    pub shape: ArrayShape,
    /// Effective utilization of the ideal throughput, in (0, 1].
    pub utilization: f64,
    /// Compute-region power ratio between voltage modes.
    pub region_ratio: f64,
    /// Calibrated precisions, keyed by `a_bits * b_bits`.
    pub calibration: BTreeMap<u32, PrecisionCal>,
    pub v_mem: f64,
    pub v_guard: f64,
    pub v_aprox: f64,
}

/// Default calibration of the reference implementation.
///
/// Powers derive from the measured TOP/s and TOP/sW bounds per
/// precision; the single utilization scalar comes from the a8w8 row
/// (0.111 TOP/s against the ideal 0.1152 TOP/s of a 576x8x16 array at
/// 50 MHz).
pub fn default_calibration() -> PowerModel {
    let mut calibration = BTreeMap::new();
    calibration.insert(4, PrecisionCal { tops: 1.774, topsw_guard: 45.87, topsw_approx: 89.32 });
    calibration.insert(9, PrecisionCal { tops: 0.776, topsw_guard: 19.37, topsw_approx: 38.13 });
    calibration.insert(16, PrecisionCal { tops: 0.443, topsw_guard: 12.52, topsw_approx: 23.78 });
    calibration.insert(64, PrecisionCal { tops: 0.111, topsw_guard: 3.56, topsw_approx: 6.52 });
    let ideal_a8w8 = ideal_tops(CALIBRATION_SHAPE, CALIBRATION_FREQUENCY, 8, 8);
    PowerModel {
        frequency: CALIBRATION_FREQUENCY,
        shape: CALIBRATION_SHAPE,
        utilization: 0.111 / ideal_a8w8,
        region_ratio: REGION_REDUCTION_RATIO,
        calibration,
        v_mem: V_MEM,
        v_guard: V_GUARD,
        v_aprox: V_APROX,
    }
}

/// Ideal peak throughput in TOP/s (2 ops per MAC, full utilization).
pub fn ideal_tops(shape: ArrayShape, frequency: f64, a_bits: u8, b_bits: u8) -> f64 {
    2.0 * (shape.l * shape.c * shape.k) as f64 * frequency
        / (a_bits as f64 * b_bits as f64)
        / 1e12
}

impl PowerModel {
    /// Guarded/approximate power endpoints for a precision (mW).
    /// Calibrated products are exact; others interpolate linearly in
    /// `a_bits * b_bits`.
    pub fn endpoints_mw(&self, a_bits: u8, b_bits: u8) -> Result<(f64, f64)> {
        let product = a_bits as u32 * b_bits as u32;
        if let Some(cal) = self.calibration.get(&product) {
            return Ok((cal.p_guard_mw(), cal.p_approx_mw()));
        }
        let below = self.calibration.range(..product).next_back();
        let above = self.calibration.range(product..).next();
        match (below, above) {
            (Some((&p0, c0)), Some((&p1, c1))) => {
                let t = (product - p0) as f64 / (p1 - p0) as f64;
                let guard = c0.p_guard_mw() + t * (c1.p_guard_mw() - c0.p_guard_mw());
                let approx = c0.p_approx_mw() + t * (c1.p_approx_mw() - c0.p_approx_mw());
                Ok((guard, approx))
            }
            _ => Err(Error::config(format!(
                "precision product {product} outside calibrated range"
            ))),
        }
    }

    /// Three-domain decomposition of one precision's power (mW).
    pub fn domain_split(&self, a_bits: u8, b_bits: u8) -> Result<DomainSplit> {
        let (p_guard, p_approx) = self.endpoints_mw(a_bits, b_bits)?;
        // region_guard - region_guard / ratio = p_guard - p_approx
        let region_guard = (p_guard - p_approx) * self.region_ratio / (self.region_ratio - 1.0);
        Ok(DomainSplit {
            rest_mw: p_guard - region_guard,
            region_guard_mw: region_guard,
            region_aprox_mw: region_guard / self.region_ratio,
        })
    }

    /// Average accelerator power under a schedule (mW):
    /// `P = rest + region_guard * (1 - f) + region_aprox * f` with `f`
    /// the fraction of approximate passes. Endpoints (`f` of 0 or 1)
    /// reproduce the calibrated per-precision powers exactly.
    pub fn average_power_mw(&self, schedule: &GavSchedule) -> Result<f64> {
        let split = self.domain_split(schedule.a_bits, schedule.b_bits)?;
        let f = schedule.approx_fraction();
        Ok(split.rest_mw + split.region_guard_mw * (1.0 - f) + split.region_aprox_mw * f)
    }

    /// Modeled throughput at a precision (TOP/s); independent of the
    /// undervolting schedule.
    pub fn tops(&self, a_bits: u8, b_bits: u8) -> f64 {
        ideal_tops(self.shape, self.frequency, a_bits, b_bits) * self.utilization
    }

    /// Energy efficiency under a schedule: `(TOP/s, TOP/sW)`.
    pub fn efficiency(&self, schedule: &GavSchedule) -> Result<(f64, f64)> {
        let tops = self.tops(schedule.a_bits, schedule.b_bits);
        let power_w = self.average_power_mw(schedule)? * 1e-3;
        Ok((tops, tops / power_w))
    }

    /// Energy of `cycles` array cycles under a schedule, in microjoules.
    pub fn energy_uj(&self, schedule: &GavSchedule, cycles: u64) -> Result<f64> {
        let power_mw = self.average_power_mw(schedule)?;
        Ok(power_mw * 1e-3 * cycles as f64 / self.frequency * 1e6)
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let model: PowerModel = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        if model.utilization <= 0.0 || model.utilization > 1.0 {
            return Err(Error::config("utilization must be in (0, 1]"));
        }
        if model.region_ratio <= 1.0 {
            return Err(Error::config("region ratio must exceed 1"));
        }
        for (product, cal) in &model.calibration {
            if cal.p_approx_mw() >= cal.p_guard_mw() {
                return Err(Error::config(format!(
                    "approximate power must undercut guarded power (product {product})"
                )));
            }
        }
        Ok(model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn derived_power_endpoints() {
        let m = default_calibration();
        let (g, a) = m.endpoints_mw(2, 2).unwrap();
        // 1.774 / 45.87 = 38.67 mW; 1.774 / 89.32 = 19.86 mW
        assert_relative_eq!(g, 38.67, max_relative = 1e-3);
        assert_relative_eq!(a, 19.86, max_relative = 1e-3);
        // full-approx vs full-guard boost at a2w2
        assert_relative_eq!(g / a, 1.947, epsilon = 0.02);
    }

    #[test]
    fn domain_split_matches_endpoint_algebra() {
        let m = default_calibration();
        let s = m.domain_split(2, 2).unwrap();
        // X - X/3.5 = 38.67 - 19.86
        assert_relative_eq!(s.region_guard_mw, 26.33, epsilon = 0.02);
        assert_relative_eq!(s.region_aprox_mw, 7.52, epsilon = 0.02);
        assert_relative_eq!(s.rest_mw, 12.34, epsilon = 0.02);
        assert_relative_eq!(s.region_guard_mw / s.region_aprox_mw, m.region_ratio, epsilon = 1e-9);
    }

    #[test]
    fn utilization_from_a8w8() {
        let m = default_calibration();
        assert_relative_eq!(m.utilization, 0.963, epsilon = 1e-3);
        assert_relative_eq!(m.tops(8, 8), 0.111, max_relative = 1e-12);
    }

    #[test]
    fn endpoints_reproduced_exactly() {
        let m = default_calibration();
        for (a_bits, b_bits) in [(2u8, 2u8), (3, 3), (4, 4), (8, 8)] {
            let (p_guard, p_approx) = m.endpoints_mw(a_bits, b_bits).unwrap();
            let guard = GavSchedule::fully_guarded(a_bits, b_bits).unwrap();
            let approx = GavSchedule::new(a_bits, b_bits, 0).unwrap();
            assert_relative_eq!(
                m.average_power_mw(&guard).unwrap(),
                p_guard,
                max_relative = 1e-12
            );
            assert_relative_eq!(
                m.average_power_mw(&approx).unwrap(),
                p_approx,
                max_relative = 1e-12
            );
        }
    }

    #[test]
    fn mid_schedule_mixes_linearly() {
        let m = default_calibration();
        let s = GavSchedule::new(4, 4, 4).unwrap();
        assert_relative_eq!(s.approx_fraction(), 6.0 / 16.0, epsilon = 1e-12);
        let (p_guard, p_approx) = m.endpoints_mw(4, 4).unwrap();
        let split = m.domain_split(4, 4).unwrap();
        let f = 6.0 / 16.0;
        let expect = split.rest_mw + split.region_guard_mw * (1.0 - f) + split.region_aprox_mw * f;
        assert_relative_eq!(m.average_power_mw(&s).unwrap(), expect, max_relative = 1e-12);
        assert!(expect < p_guard && expect > p_approx);
    }

    #[test]
    fn power_monotone_in_f_efficiency_opposite() {
        let m = default_calibration();
        let mut last_power = f64::INFINITY;
        let mut last_eff = 0.0;
        let tops_ref = m.tops(4, 4);
        // f grows as G falls
        for g in (0..=7).rev() {
            let s = GavSchedule::new(4, 4, g).unwrap();
            let p = m.average_power_mw(&s).unwrap();
            let (tops, topsw) = m.efficiency(&s).unwrap();
            assert!(p <= last_power + 1e-12);
            assert!(topsw >= last_eff - 1e-12);
            assert_eq!(tops, tops_ref, "throughput must not depend on the schedule");
            last_power = p;
            last_eff = topsw;
        }
    }

    #[test]
    fn peak_throughput_formula() {
        // [576, 8, 16] @ 50 MHz, u = 1, a2w2
        let tops = ideal_tops(CALIBRATION_SHAPE, CALIBRATION_FREQUENCY, 2, 2);
        assert_relative_eq!(tops, 1.8432, max_relative = 1e-12);
        assert!((tops - 1.84).abs() / 1.84 < 0.003);
    }

    #[test]
    fn full_approx_a2w2_efficiency() {
        let m = default_calibration();
        let s = GavSchedule::new(2, 2, 0).unwrap();
        let (_, topsw) = m.efficiency(&s).unwrap();
        assert_relative_eq!(topsw, 89.3, max_relative = 0.005);
    }

    #[test]
    fn table_entries_within_two_percent() {
        let m = default_calibration();
        for (a_bits, b_bits) in [(2u8, 2u8), (3, 3), (4, 4), (8, 8)] {
            let product = a_bits as u32 * b_bits as u32;
            let cal = m.calibration[&product];
            let guard = GavSchedule::fully_guarded(a_bits, b_bits).unwrap();
            let approx = GavSchedule::new(a_bits, b_bits, 0).unwrap();
            let (_, topsw_g) = m.efficiency(&guard).unwrap();
            let (_, topsw_a) = m.efficiency(&approx).unwrap();
            assert!(
                (topsw_g - cal.topsw_guard).abs() / cal.topsw_guard < 0.02,
                "a{a_bits}w{b_bits} guard: {topsw_g} vs {}",
                cal.topsw_guard
            );
            assert!(
                (topsw_a - cal.topsw_approx).abs() / cal.topsw_approx < 0.02,
                "a{a_bits}w{b_bits} approx: {topsw_a} vs {}",
                cal.topsw_approx
            );
        }
    }

    #[test]
    fn interpolated_precisions() {
        let m = default_calibration();
        // product 8 sits between 4 and 9
        let (g8, a8) = m.endpoints_mw(2, 4).unwrap();
        let (g4, a4) = m.endpoints_mw(2, 2).unwrap();
        let (g9, a9) = m.endpoints_mw(3, 3).unwrap();
        assert!(g8 > g4.min(g9) && g8 < g4.max(g9));
        assert!(a8 > a4.min(a9) && a8 < a4.max(a9));
        // energy aggregates linearly in cycles
        let s = GavSchedule::new(4, 4, 2).unwrap();
        let e1 = m.energy_uj(&s, 1000).unwrap();
        let e2 = m.energy_uj(&s, 3000).unwrap();
        assert_relative_eq!(e2, 3.0 * e1, max_relative = 1e-12);
    }
}
