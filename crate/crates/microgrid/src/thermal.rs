//! Thermostatically controlled load fleet: per-unit air/mass temperature
//! dynamics, the backup safety controller, temperature state of charge, and
//! priority dispatch of an aggregate power budget.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Thermal state and ratings of one controlled load.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TclUnit {
    /// Equivalent heat capacity of the indoor air, in model time units.
    pub c_air: f64,
    /// Equivalent heat capacity of the building mass.
    pub c_m: f64,
    /// Electrical power drawn when switched on (kW).
    pub p_rated: f64,
    /// Indoor air temperature (C).
    pub t_in: f64,
    /// Building mass temperature (C).
    pub t_mass: f64,
    /// Internal heat gain.
    pub q_air: f64,
    /// Comfort band lower bound (C).
    pub t_lb: f64,
    /// Comfort band upper bound (C).
    pub t_ub: f64,
    /// Current on/off state.
    pub switch: u8,
}

impl TclUnit {
    pub fn validate(&self) -> Result<()> {
        if !(self.t_lb < self.t_ub) {
            return Err(Error::Thermal(format!(
                "comfort band empty: [{}, {}]",
                self.t_lb, self.t_ub
            )));
        }
        if !(self.c_air > 0.0 && self.c_air.is_finite()) || !(self.c_m > 0.0 && self.c_m.is_finite())
        {
            return Err(Error::Thermal(format!(
                "capacitances must be positive and finite: c_air={}, c_m={}",
                self.c_air, self.c_m
            )));
        }
        if !(self.p_rated >= 0.0) {
            return Err(Error::Thermal(format!("p_rated must be >= 0: {}", self.p_rated)));
        }
        if self.switch > 1 {
            return Err(Error::Thermal(format!("switch must be 0 or 1: {}", self.switch)));
        }
        Ok(())
    }
}

/// Ordered collection of controlled loads.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TclFleet {
    pub units: Vec<TclUnit>,
}

impl TclFleet {
    pub fn new(units: Vec<TclUnit>) -> Result<Self> {
        if units.is_empty() {
            return Err(Error::Thermal("fleet must have at least one unit".into()));
        }
        for u in &units {
            u.validate()?;
        }
        Ok(Self { units })
    }

    pub fn count(&self) -> usize {
        self.units.len()
    }

    /// Total rated power of the fleet (kW).
    pub fn total_rated_kw(&self) -> f64 {
        self.units.iter().map(|u| u.p_rated).sum()
    }

    /// Temperature state of charge of every unit, in unit order.
    pub fn socs(&self) -> Vec<f64> {
        self.units
            .iter()
            .map(|u| soc_tcl(u.t_in, u.t_lb, u.t_ub))
            .collect()
    }
}

/// Aggregate power budget granted to the fleet for one step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AllocationLevel {
    pub level_index: usize,
    pub kw: f64,
}

impl AllocationLevel {
    /// Look up level `index` in the configured budget table.
    pub fn from_table(index: usize, table: &[f64]) -> Result<Self> {
        let kw = *table.get(index).ok_or_else(|| {
            Error::Thermal(format!(
                "allocation level {} out of range (table has {})",
                index,
                table.len()
            ))
        })?;
        Ok(Self { level_index: index, kw })
    }
}

/// Safety filter applied to every requested switch action.
///
/// Forces the unit on below the comfort band, off above it, and passes the
/// request through inside the band.
pub fn backup_controller(t_in: f64, t_lb: f64, t_ub: f64, requested_switch: u8) -> Result<u8> {
    if !t_in.is_finite() || !t_lb.is_finite() || !t_ub.is_finite() {
        return Err(Error::NonFinite(format!(
            "backup controller temperatures: t_in={t_in}, t_lb={t_lb}, t_ub={t_ub}"
        )));
    }
    debug_assert!(t_lb < t_ub);
    Ok(if t_in < t_lb {
        1
    } else if t_in > t_ub {
        0
    } else {
        requested_switch
    })
}

/// Substep used by [`etp_step`], in model time units.
pub fn stability_substep(c_air: f64, c_m: f64) -> f64 {
    c_air.min(c_m) / 4.0
}

const MAX_SUBSTEPS: usize = 1_000_000;

/// Advance one unit's air and mass temperatures over `dt_hours` with the
/// effective switch held fixed.
///
/// Integrates
///   dT/dtau   = (t_out - T)/c_air + (T_m - T)/c_m + p_rated * B + q_air
///   dT_m/dtau = (T - T_m)/c_m
/// by forward Euler on internal substeps of `min(c_air, c_m)/4` model time
/// units, capped at the full step. `time_unit_hours` converts the model time
/// axis to hours.
pub fn etp_step(
    unit: &TclUnit,
    t_out: f64,
    effective_switch: u8,
    dt_hours: f64,
    time_unit_hours: f64,
) -> Result<TclUnit> {
    unit.validate()?;
    if !(dt_hours > 0.0 && dt_hours.is_finite()) {
        return Err(Error::Thermal(format!("dt_hours must be positive: {dt_hours}")));
    }
    if !(time_unit_hours > 0.0 && time_unit_hours.is_finite()) {
        return Err(Error::Thermal(format!(
            "time_unit_hours must be positive: {time_unit_hours}"
        )));
    }
    if !t_out.is_finite() {
        return Err(Error::NonFinite(format!("t_out={t_out}")));
    }

    let tau_total = dt_hours / time_unit_hours;
    let dtau = stability_substep(unit.c_air, unit.c_m).min(tau_total);
    let n_sub = (tau_total / dtau).ceil() as usize;
    if n_sub > MAX_SUBSTEPS {
        return Err(Error::Thermal(format!(
            "{n_sub} substeps needed for dt={dt_hours} h; capacitances too stiff"
        )));
    }
    let dtau = tau_total / n_sub as f64;

    let b = f64::from(effective_switch.min(1));
    let mut t = unit.t_in;
    let mut t_m = unit.t_mass;
    for _ in 0..n_sub {
        let dt_dt = (t_out - t) / unit.c_air + (t_m - t) / unit.c_m + unit.p_rated * b + unit.q_air;
        let dtm_dt = (t - t_m) / unit.c_m;
        t += dtau * dt_dt;
        t_m += dtau * dtm_dt;
    }

    let mut next = unit.clone();
    next.t_in = t;
    next.t_mass = t_m;
    next.switch = effective_switch.min(1);
    Ok(next)
}

/// Position of `t_in` within the comfort band. Not clamped: values outside
/// [0, 1] indicate a band violation.
pub fn soc_tcl(t_in: f64, t_lb: f64, t_ub: f64) -> f64 {
    debug_assert!(t_lb < t_ub);
    (t_in - t_lb) / (t_ub - t_lb)
}

/// Requested per-unit switch vector for an aggregate budget.
///
/// Units are switched on in ascending state-of-charge order (ties broken by
/// unit index) while the cumulative rated power stays within `alloc.kw`. The
/// result is the request only; the backup controller is applied by the caller.
pub fn aggregator_dispatch(fleet: &TclFleet, alloc: AllocationLevel) -> Vec<u8> {
    let mut order: Vec<usize> = (0..fleet.units.len()).collect();
    let socs = fleet.socs();
    order.sort_by(|&a, &b| {
        socs[a]
            .partial_cmp(&socs[b])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });

    let mut switches = vec![0u8; fleet.units.len()];
    let mut used = 0.0;
    for idx in order {
        let p = fleet.units[idx].p_rated;
        if used + p <= alloc.kw {
            switches[idx] = 1;
            used += p;
        }
    }
    switches
}
