//! Scenario-level parameter blocks and their defaults.
//!
//! Unit conventions used throughout the crate:
//! - power in kW, energy in kWh, temperatures in degrees C
//! - all prices and per-kWh rates in euro cents per kWh
//! - monetary flows (rewards, profits, costs) in euro cents
//! - time steps are hours; an episode is one 24-hour day

use serde::{Deserialize, Serialize};

/// Distribution spec for a sampled fleet/load parameter: mean and standard
/// deviation of a Normal, truncated at three standard deviations and floored
/// at 10% of the mean magnitude.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct NormalSpec {
    pub mean: f64,
    pub sd: f64,
}

impl NormalSpec {
    pub fn new(mean: f64, sd: f64) -> Self {
        Self { mean, sd }
    }

    /// Draw one value: Normal(mean, sd) clamped to mean ± 3 sd, then floored
    /// at 10% of the mean magnitude. The floor keeps physically positive
    /// parameters (capacitances, ratings) away from zero; zero-mean
    /// parameters are left symmetric.
    pub fn sample<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let dist = rand_distr::Normal::new(self.mean, self.sd)
            .expect("NormalSpec requires finite mean and non-negative sd");
        let draw: f64 = rng.sample(dist);
        let draw = draw.clamp(self.mean - 3.0 * self.sd, self.mean + 3.0 * self.sd);
        if self.mean == 0.0 {
            draw
        } else {
            draw.max(0.1 * self.mean.abs())
        }
    }
}

/// Population parameters for the TCL fleet.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct TclParams {
    pub count: usize,
    pub c_air: NormalSpec,
    pub c_m: NormalSpec,
    pub p_rated_kw: NormalSpec,
    pub q_air: NormalSpec,
    /// Comfort band in degrees C, shared by all units.
    pub t_lb: f64,
    pub t_ub: f64,
    /// Hours represented by one unit of the thermal-model time axis.
    pub time_unit_hours: f64,
    /// Aggregate power budgets (kW) selectable by the operator, indexed by
    /// allocation level.
    pub alloc_levels_kw: Vec<f64>,
}

impl Default for TclParams {
    fn default() -> Self {
        Self {
            count: 100,
            c_air: NormalSpec::new(0.004, 0.0008),
            c_m: NormalSpec::new(0.3, 0.004),
            p_rated_kw: NormalSpec::new(1.5, 0.01),
            q_air: NormalSpec::new(0.0, 0.01),
            t_lb: 19.0,
            t_ub: 25.0,
            time_unit_hours: 1.0,
            alloc_levels_kw: vec![0.0, 40.0, 80.0, 120.0],
        }
    }
}

/// Population parameters for the price-responsive residential loads.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct DemandParams {
    pub residences: usize,
    pub sigma: NormalSpec,
    pub patience_hours: NormalSpec,
}

impl Default for DemandParams {
    fn default() -> Self {
        Self {
            residences: 150,
            sigma: NormalSpec::new(0.4, 0.3),
            patience_hours: NormalSpec::new(10.0, 6.0),
        }
    }
}

/// Storage device ratings.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct EsdParams {
    pub cap_max_kwh: f64,
    pub cap_min_kwh: f64,
    pub eta_ch: f64,
    pub eta_dc: f64,
    pub p_ch_max_kw: f64,
    pub p_dc_max_kw: f64,
}

impl Default for EsdParams {
    fn default() -> Self {
        Self {
            cap_max_kwh: 500.0,
            cap_min_kwh: 0.0,
            eta_ch: 0.9,
            eta_dc: 0.9,
            p_ch_max_kw: 250.0,
            p_dc_max_kw: 250.0,
        }
    }
}

/// Main-grid transaction parameters. Rates are euro cents per kWh.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct TariffParams {
    pub mu_import: f64,
    pub mu_export: f64,
    /// Import power cap (kW).
    pub p_buy_max_kw: f64,
    /// Symmetric tie-line capacity bound (kW) on |buy - sell|.
    pub p_line_max_kw: f64,
}

impl Default for TariffParams {
    fn default() -> Self {
        Self {
            mu_import: 0.97,
            mu_export: 0.09,
            p_buy_max_kw: 1500.0,
            p_line_max_kw: 1600.0,
        }
    }
}

/// Retail pricing mechanism parameters. Prices in euro cents per kWh.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct PricingParams {
    pub lambda_market: f64,
    /// Price change per level step.
    pub kappa: f64,
    /// Cap on |daily average retail price - market price| / market price.
    pub rho: f64,
    pub lambda_min: f64,
    pub lambda_max: f64,
    /// Generation cost price billed to TCL users.
    pub lambda_gen: f64,
    /// Compensation rate paid per kWh of shed load.
    pub zeta_comp: f64,
    /// Day window [start, end) for the time-of-use baseline, hours 0-23.
    pub tou_day_start: usize,
    pub tou_day_end: usize,
}

impl Default for PricingParams {
    fn default() -> Self {
        let lambda_market = 5.53;
        let kappa = 1.5;
        Self {
            lambda_market,
            kappa,
            rho: 0.029,
            lambda_min: lambda_market - 2.0 * kappa,
            lambda_max: lambda_market + 2.0 * kappa,
            lambda_gen: 3.2,
            zeta_comp: 0.1 * lambda_market,
            tou_day_start: 8,
            tou_day_end: 20,
        }
    }
}

/// One bundle of every scenario-scoped parameter block.
#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct ScenarioParams {
    pub tcl: TclParams,
    pub demand: DemandParams,
    pub esd: EsdParams,
    pub tariff: TariffParams,
    pub pricing: PricingParams,
}
