//! Shared electricity storage, main-grid tariff bookkeeping, and the wind
//! availability series.

use serde::{Deserialize, Serialize};

use crate::config::{EsdParams, TariffParams};
use crate::error::{Error, Result};

/// Absorbable rounding slack on storage bounds (kWh). Violations beyond this
/// are dispatch errors, not float noise.
pub const ESD_BOUNDS_EPS_KWH: f64 = 1e-9;

/// Tolerance for the daily cycle boundary check (kWh).
pub const CYCLE_BOUNDARY_TOL_KWH: f64 = 1e-6;

/// Electricity storage device state and ratings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Esd {
    /// Available energy (kWh).
    pub capacity_kwh: f64,
    pub cap_max: f64,
    pub cap_min: f64,
    pub eta_ch: f64,
    pub eta_dc: f64,
    pub p_ch_max: f64,
    pub p_dc_max: f64,
}

impl Esd {
    /// Fresh device at the cycle-start level `cap_min`.
    pub fn at_cycle_start(params: &EsdParams) -> Self {
        Self {
            capacity_kwh: params.cap_min_kwh,
            cap_max: params.cap_max_kwh,
            cap_min: params.cap_min_kwh,
            eta_ch: params.eta_ch,
            eta_dc: params.eta_dc,
            p_ch_max: params.p_ch_max_kw,
            p_dc_max: params.p_dc_max_kw,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.cap_min <= self.cap_max) {
            return Err(Error::StorageBounds(format!(
                "cap_min {} > cap_max {}",
                self.cap_min, self.cap_max
            )));
        }
        if !(self.eta_ch > 0.0 && self.eta_ch <= 1.0 && self.eta_dc > 0.0 && self.eta_dc <= 1.0) {
            return Err(Error::StorageBounds(format!(
                "efficiencies must be in (0, 1]: eta_ch={}, eta_dc={}",
                self.eta_ch, self.eta_dc
            )));
        }
        if !(self.p_ch_max >= 0.0 && self.p_dc_max >= 0.0) {
            return Err(Error::StorageBounds("power limits must be >= 0".into()));
        }
        if self.capacity_kwh < self.cap_min - ESD_BOUNDS_EPS_KWH
            || self.capacity_kwh > self.cap_max + ESD_BOUNDS_EPS_KWH
        {
            return Err(Error::StorageBounds(format!(
                "capacity {} outside [{}, {}]",
                self.capacity_kwh, self.cap_min, self.cap_max
            )));
        }
        Ok(())
    }
}

/// Advance the storage one step under charge power `p_ch` and discharge
/// power `p_dc` (kW, at the bus), mutually exclusive.
///
/// Stored energy changes by `(eta_ch * p_ch - p_dc / eta_dc) * dt`; a result
/// outside the capacity bounds (beyond float slack) is an error so the
/// caller can re-dispatch.
pub fn esd_step(esd: &Esd, p_ch: f64, p_dc: f64, dt_hours: f64) -> Result<Esd> {
    esd.validate()?;
    if !(dt_hours > 0.0 && dt_hours.is_finite()) {
        return Err(Error::StorageBounds(format!("dt must be positive: {dt_hours}")));
    }
    if !(0.0..=esd.p_ch_max + 1e-12).contains(&p_ch) {
        return Err(Error::StorageBounds(format!(
            "p_ch {} outside [0, {}]",
            p_ch, esd.p_ch_max
        )));
    }
    if !(0.0..=esd.p_dc_max + 1e-12).contains(&p_dc) {
        return Err(Error::StorageBounds(format!(
            "p_dc {} outside [0, {}]",
            p_dc, esd.p_dc_max
        )));
    }
    if p_ch > 0.0 && p_dc > 0.0 {
        return Err(Error::StorageBounds(format!(
            "charge and discharge are mutually exclusive: p_ch={p_ch}, p_dc={p_dc}"
        )));
    }
    let capacity = esd.capacity_kwh + (esd.eta_ch * p_ch - p_dc / esd.eta_dc) * dt_hours;
    if capacity < esd.cap_min - ESD_BOUNDS_EPS_KWH || capacity > esd.cap_max + ESD_BOUNDS_EPS_KWH {
        return Err(Error::StorageBounds(format!(
            "step drives capacity to {} outside [{}, {}]",
            capacity, esd.cap_min, esd.cap_max
        )));
    }
    let mut next = *esd;
    next.capacity_kwh = capacity.clamp(esd.cap_min, esd.cap_max);
    Ok(next)
}

/// State of charge: stored energy as a fraction of maximum capacity.
pub fn soc_esd(esd: &Esd) -> f64 {
    debug_assert!(esd.cap_max > 0.0);
    esd.capacity_kwh / esd.cap_max
}

/// True iff a dispatch day starts and ends at the minimum capacity, so the
/// next day begins from identical storage conditions.
pub fn check_cycle_boundary(esd_start: &Esd, esd_end: &Esd) -> bool {
    (esd_start.capacity_kwh - esd_start.cap_min).abs() <= CYCLE_BOUNDARY_TOL_KWH
        && (esd_end.capacity_kwh - esd_end.cap_min).abs() <= CYCLE_BOUNDARY_TOL_KWH
}

/// Main-grid transaction parameters for a dispatch day. Rates in euro cents
/// per kWh.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridTariff {
    /// Purchase price per step.
    pub lambda_buy: Vec<f64>,
    /// Sale price per step.
    pub lambda_sell: Vec<f64>,
    pub mu_import: f64,
    pub mu_export: f64,
    /// Import power cap (kW).
    pub p_buy_max: f64,
}

impl GridTariff {
    pub fn from_series(params: &TariffParams, lambda_buy: Vec<f64>, lambda_sell: Vec<f64>) -> Result<Self> {
        let tariff = Self {
            lambda_buy,
            lambda_sell,
            mu_import: params.mu_import,
            mu_export: params.mu_export,
            p_buy_max: params.p_buy_max_kw,
        };
        tariff.validate()?;
        Ok(tariff)
    }

    pub fn validate(&self) -> Result<()> {
        if self.lambda_buy.len() != self.lambda_sell.len() {
            return Err(Error::Shape(format!(
                "tariff series lengths differ: buy {} vs sell {}",
                self.lambda_buy.len(),
                self.lambda_sell.len()
            )));
        }
        let all = self
            .lambda_buy
            .iter()
            .chain(&self.lambda_sell)
            .chain([&self.mu_import, &self.mu_export, &self.p_buy_max]);
        for &v in all {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::ScenarioInvalid(format!(
                    "tariff values must be finite and >= 0, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Hourly available wind power (kW).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindSeries {
    pub p_wt: Vec<f64>,
}

impl WindSeries {
    pub fn new(p_wt: Vec<f64>) -> Result<Self> {
        for &v in &p_wt {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::ScenarioInvalid(format!(
                    "wind power must be finite and >= 0, got {v}"
                )));
            }
        }
        Ok(Self { p_wt })
    }

    pub fn len(&self) -> usize {
        self.p_wt.len()
    }

    pub fn is_empty(&self) -> bool {
        self.p_wt.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn esd(capacity: f64) -> Esd {
        Esd {
            capacity_kwh: capacity,
            cap_max: 500.0,
            cap_min: 0.0,
            eta_ch: 0.9,
            eta_dc: 0.9,
            p_ch_max: 250.0,
            p_dc_max: 250.0,
        }
    }

    #[test]
    fn idle_step_keeps_capacity() {
        let e = esd(123.0);
        let next = esd_step(&e, 0.0, 0.0, 1.0).unwrap();
        assert_eq!(next.capacity_kwh, 123.0);
    }

    #[test]
    fn charge_example() {
        let e = esd(100.0);
        let next = esd_step(&e, 50.0, 0.0, 1.0).unwrap();
        assert!((next.capacity_kwh - 145.0).abs() < 1e-12);
    }

    #[test]
    fn discharge_example() {
        let e = esd(145.0);
        let next = esd_step(&e, 0.0, 45.0, 1.0).unwrap();
        assert!((next.capacity_kwh - 95.0).abs() < 1e-12);
    }

    #[test]
    fn mutual_exclusion_is_enforced() {
        let e = esd(100.0);
        assert!(matches!(
            esd_step(&e, 10.0, 10.0, 1.0),
            Err(Error::StorageBounds(_))
        ));
    }

    #[test]
    fn power_limits_are_enforced() {
        let e = esd(100.0);
        assert!(esd_step(&e, 250.1, 0.0, 1.0).is_err());
        assert!(esd_step(&e, -1.0, 0.0, 1.0).is_err());
        assert!(esd_step(&e, 0.0, 250.1, 1.0).is_err());
    }

    #[test]
    fn capacity_bounds_are_enforced() {
        let e = esd(490.0);
        assert!(esd_step(&e, 50.0, 0.0, 1.0).is_err()); // would hit 535
        let e = esd(5.0);
        assert!(esd_step(&e, 0.0, 50.0, 1.0).is_err()); // would go negative
    }

    #[test]
    fn round_trip_loses_energy() {
        // charge E at the bus, then discharge until back at the start level;
        // recovered bus energy is eta_ch*eta_dc*E
        let e0 = esd(0.0);
        let p_ch = 100.0;
        let charged = esd_step(&e0, p_ch, 0.0, 1.0).unwrap();
        let stored = charged.capacity_kwh - e0.capacity_kwh;
        let p_dc = stored * e0.eta_dc; // empties in exactly one hour
        let back = esd_step(&charged, 0.0, p_dc, 1.0).unwrap();
        assert!((back.capacity_kwh - e0.capacity_kwh).abs() < 1e-9);
        let recovered = p_dc;
        assert!((recovered - 0.9 * 0.9 * p_ch).abs() < 1e-9);
        assert!(recovered < p_ch);
    }

    #[test]
    fn capacity_is_monotone_in_powers() {
        let e = esd(200.0);
        let base = esd_step(&e, 20.0, 0.0, 1.0).unwrap().capacity_kwh;
        let more = esd_step(&e, 30.0, 0.0, 1.0).unwrap().capacity_kwh;
        assert!(more > base);
        let d1 = esd_step(&e, 0.0, 20.0, 1.0).unwrap().capacity_kwh;
        let d2 = esd_step(&e, 0.0, 30.0, 1.0).unwrap().capacity_kwh;
        assert!(d2 < d1);
    }

    #[test]
    fn soc_spans_unit_interval() {
        assert_eq!(soc_esd(&esd(500.0)), 1.0);
        assert_eq!(soc_esd(&esd(0.0)), 0.0);
        assert_eq!(soc_esd(&esd(250.0)), 0.5);
    }

    #[test]
    fn cycle_boundary_checks_both_ends() {
        assert!(check_cycle_boundary(&esd(0.0), &esd(0.0)));
        assert!(check_cycle_boundary(&esd(0.0), &esd(1e-7)));
        assert!(!check_cycle_boundary(&esd(0.0), &esd(1.0)));
        assert!(!check_cycle_boundary(&esd(1.0), &esd(0.0)));
    }

    #[test]
    fn tariff_rejects_negative_prices() {
        let params = TariffParams::default();
        assert!(GridTariff::from_series(&params, vec![5.0, -0.1], vec![4.0, 4.0]).is_err());
        assert!(GridTariff::from_series(&params, vec![5.0], vec![4.0, 4.0]).is_err());
        assert!(GridTariff::from_series(&params, vec![5.0, 6.0], vec![4.0, 4.0]).is_ok());
    }

    #[test]
    fn wind_rejects_negative_values() {
        assert!(WindSeries::new(vec![0.0, 3.5, -1.0]).is_err());
        assert!(WindSeries::new(vec![0.0, 3.5, 120.0]).is_ok());
    }
}
