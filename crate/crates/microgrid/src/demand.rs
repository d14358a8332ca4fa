//! Price-responsive residential demand: a fixed hourly base load, shifting
//! proportional to the retail price level, and probabilistic payback of
//! previously shifted load.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::config::DemandParams;
use crate::error::{Error, Result};

/// Retail price level, the operator's discrete pricing action.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PriceLevel(i8);

impl PriceLevel {
    pub const MIN: i8 = -2;
    pub const MAX: i8 = 2;
    /// Number of distinct levels.
    pub const COUNT: usize = 5;

    pub fn new(level: i8) -> Result<Self> {
        if !(Self::MIN..=Self::MAX).contains(&level) {
            return Err(Error::ScenarioInvalid(format!(
                "price level {level} outside [{}, {}]",
                Self::MIN,
                Self::MAX
            )));
        }
        Ok(Self(level))
    }

    pub fn value(self) -> i8 {
        self.0
    }

    /// Zero-based index for encoding/action-head purposes: level + 2.
    pub fn index(self) -> usize {
        (self.0 - Self::MIN) as usize
    }

    pub fn from_index(index: usize) -> Result<Self> {
        Self::new(index as i8 + Self::MIN)
    }

    pub fn all() -> [Self; Self::COUNT] {
        [Self(-2), Self(-1), Self(0), Self(1), Self(2)]
    }
}

/// One shifted-load record awaiting payback.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PendingShed {
    /// Step index at which the shed happened.
    pub origin_step: usize,
    /// Shed magnitude (kW), always >= 0.
    pub magnitude_kw: f64,
    /// Sign of the shifted load at creation time, frozen for the record's
    /// lifetime.
    pub sign: f64,
}

/// Aggregate state of the residential load population.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadState {
    /// Base load (kW) for the current hour; updated by the caller each step.
    pub p_basic: f64,
    /// Aggregate price sensitivity factor.
    pub sigma: f64,
    /// Shifted load not yet paid back.
    pub pending: Vec<PendingShed>,
    /// Hours until payback of a record becomes certain.
    pub patience: f64,
}

impl LoadState {
    pub fn new(p_basic: f64, sigma: f64, patience: f64) -> Result<Self> {
        let state = Self { p_basic, sigma, pending: Vec::new(), patience };
        state.validate()?;
        Ok(state)
    }

    /// Aggregate the residence population of `params`: per-residence sigma
    /// and patience are sampled, then averaged into one fleet-level state.
    pub fn sample_aggregate<R: Rng + ?Sized>(params: &DemandParams, rng: &mut R) -> Result<Self> {
        if params.residences == 0 {
            return Err(Error::ScenarioInvalid("residences must be > 0".into()));
        }
        let n = params.residences as f64;
        let sigma = (0..params.residences)
            .map(|_| params.sigma.sample(rng))
            .sum::<f64>()
            / n;
        let patience = (0..params.residences)
            .map(|_| params.patience_hours.sample(rng))
            .sum::<f64>()
            / n;
        Self::new(0.0, sigma, patience)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.patience > 0.0 && self.patience.is_finite()) {
            return Err(Error::ScenarioInvalid(format!(
                "patience must be positive: {}",
                self.patience
            )));
        }
        if !self.p_basic.is_finite() || !self.sigma.is_finite() {
            return Err(Error::NonFinite(format!(
                "load state: p_basic={}, sigma={}",
                self.p_basic, self.sigma
            )));
        }
        for rec in &self.pending {
            if !(rec.magnitude_kw >= 0.0) {
                return Err(Error::ScenarioInvalid(format!(
                    "pending shed magnitude must be >= 0: {}",
                    rec.magnitude_kw
                )));
            }
        }
        Ok(())
    }

    /// Sum of outstanding shed magnitudes (kW).
    pub fn pending_total_kw(&self) -> f64 {
        self.pending.iter().map(|r| r.magnitude_kw).sum()
    }
}

/// Clamp to the unit interval.
pub fn clip01(z: f64) -> f64 {
    debug_assert!(z.is_finite());
    z.clamp(0.0, 1.0)
}

/// Probability that a shed from `elapsed` hours ago is paid back this hour.
///
/// Low current prices and long waits both raise the probability; it
/// saturates at 1 once `elapsed` covers the patience horizon (plus the price
/// offset, if the current level still discourages payback).
pub fn payback_probability(level: PriceLevel, tsl_sign: f64, elapsed: f64, patience: f64) -> f64 {
    debug_assert!(elapsed >= 0.0);
    debug_assert!(patience > 0.0);
    clip01(-f64::from(level.value()) * tsl_sign / 2.0 + elapsed / patience)
}

/// Outcome of one demand step.
#[derive(Debug, Clone, PartialEq)]
pub struct DemandStep {
    /// Actual load drawn this hour (kW).
    pub p_load: f64,
    /// Load shifted this hour (kW); positive = shed, negative = added.
    pub p_tsl: f64,
    /// Previously shifted load paid back this hour (kW).
    pub p_pbl: f64,
    pub state: LoadState,
}

/// Advance the residential load one hour under price level `level`.
///
/// The shifted load is `p_basic * sigma * level`; each pending record is paid
/// back with [`payback_probability`] (deterministically once that reaches 1);
/// the realized load is `p_basic - P_TSL + P_PBL`. Only positive sheds create
/// new pending records: load added at low prices is consumed immediately and
/// owes nothing back.
pub fn step_load<R: Rng + ?Sized>(
    state: &LoadState,
    level: PriceLevel,
    rng: &mut R,
    t: usize,
) -> Result<DemandStep> {
    state.validate()?;
    let p_tsl = state.p_basic * state.sigma * f64::from(level.value());

    let mut p_pbl = 0.0;
    let mut remaining = Vec::with_capacity(state.pending.len());
    for rec in &state.pending {
        let elapsed = t.saturating_sub(rec.origin_step) as f64;
        let prob = payback_probability(level, rec.sign, elapsed, state.patience);
        let paid = prob >= 1.0 || rng.gen::<f64>() < prob;
        if paid {
            p_pbl += rec.magnitude_kw;
        } else {
            remaining.push(*rec);
        }
    }

    if p_tsl > 0.0 {
        remaining.push(PendingShed { origin_step: t, magnitude_kw: p_tsl, sign: 1.0 });
    }

    let mut next = state.clone();
    next.pending = remaining;
    Ok(DemandStep { p_load: state.p_basic - p_tsl + p_pbl, p_tsl, p_pbl, state: next })
}
