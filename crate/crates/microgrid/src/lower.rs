//! Exact solver for the users' day-ahead dispatch problem: given retail
//! prices and TCL power bounds, schedule TCL consumption, storage, and grid
//! transactions at minimum user cost.
//!
//! The only inter-temporal coupling is the storage energy level, so dynamic
//! programming over a discretized energy grid is exact on that grid. Within a
//! step, the continuous variables follow from the energy transition by merit
//! order: TCL power sits at its lower bound (its price is positive, so more
//! is never cheaper), a deficit is bought, a surplus is sold up to the
//! available wind.

use serde::{Deserialize, Serialize};

use crate::energy::{Esd, GridTariff, WindSeries, ESD_BOUNDS_EPS_KWH};
use crate::error::{Error, Result};
use crate::thermal::TclFleet;

/// Default number of storage energy grid points.
pub const DEFAULT_SOC_GRID: usize = 101;

/// Acceptable power-balance residual (kW) in a validated solution.
pub const BALANCE_TOL_KW: f64 = 1e-6;

/// One day of the users' problem, as fixed by the operator's decisions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LowerInstance {
    pub horizon: usize,
    /// Retail price per step (euro cents per kWh).
    pub prices: Vec<f64>,
    /// Price billed per kWh of TCL consumption.
    pub lambda_gen: f64,
    pub wind: WindSeries,
    /// Realized residential load per step (kW).
    pub loads: Vec<f64>,
    /// Per-step TCL power bounds (kW); the lower bound already includes the
    /// thermal requirement of units forced on by the backup controller.
    pub tcl_demand_min: Vec<f64>,
    pub tcl_demand_max: Vec<f64>,
    /// Storage at its start-of-day state.
    pub esd: Esd,
    pub tariff: GridTariff,
    /// Step length; one hour in the standard setup.
    pub dt_hours: f64,
}

impl LowerInstance {
    pub fn validate(&self) -> Result<()> {
        let h = self.horizon;
        if h == 0 {
            return Err(Error::ScenarioInvalid("horizon must be > 0".into()));
        }
        for (name, len) in [
            ("prices", self.prices.len()),
            ("wind", self.wind.len()),
            ("loads", self.loads.len()),
            ("tcl_demand_min", self.tcl_demand_min.len()),
            ("tcl_demand_max", self.tcl_demand_max.len()),
            ("lambda_buy", self.tariff.lambda_buy.len()),
            ("lambda_sell", self.tariff.lambda_sell.len()),
        ] {
            if len != h {
                return Err(Error::Shape(format!("{name} has length {len}, horizon is {h}")));
            }
        }
        for t in 0..h {
            if !(self.tcl_demand_min[t] <= self.tcl_demand_max[t]) {
                return Err(Error::ScenarioInvalid(format!(
                    "tcl_demand_min {} > tcl_demand_max {} at step {t}",
                    self.tcl_demand_min[t], self.tcl_demand_max[t]
                )));
            }
            if !(self.tcl_demand_min[t] >= 0.0) {
                return Err(Error::ScenarioInvalid(format!(
                    "tcl_demand_min must be >= 0 at step {t}: {}",
                    self.tcl_demand_min[t]
                )));
            }
            if !(self.loads[t] >= 0.0 && self.loads[t].is_finite()) {
                return Err(Error::ScenarioInvalid(format!(
                    "loads must be finite and >= 0 at step {t}: {}",
                    self.loads[t]
                )));
            }
            if !(self.prices[t] >= 0.0 && self.prices[t].is_finite()) {
                return Err(Error::ScenarioInvalid(format!(
                    "prices must be finite and >= 0 at step {t}: {}",
                    self.prices[t]
                )));
            }
        }
        if !(self.lambda_gen >= 0.0 && self.lambda_gen.is_finite()) {
            return Err(Error::ScenarioInvalid(format!(
                "lambda_gen must be finite and >= 0: {}",
                self.lambda_gen
            )));
        }
        if !(self.dt_hours > 0.0 && self.dt_hours.is_finite()) {
            return Err(Error::ScenarioInvalid(format!(
                "dt_hours must be positive: {}",
                self.dt_hours
            )));
        }
        self.esd.validate()?;
        self.tariff.validate()?;
        Ok(())
    }
}

/// One step of a lower-level schedule. Powers in kW; the k-flags are the
/// binary transaction/storage modes (buy, sell, charge, discharge).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepDispatch {
    pub p_tcl: f64,
    pub p_buy: f64,
    pub p_sell: f64,
    pub p_ch: f64,
    pub p_dc: f64,
    pub k1: u8,
    pub k2: u8,
    pub k3: u8,
    pub k4: u8,
}

/// Full-day schedule returned by [`solve_lower`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LowerSolution {
    pub steps: Vec<StepDispatch>,
    /// Storage energy trajectory, horizon+1 entries including the start.
    pub capacity_kwh: Vec<f64>,
    /// User cost of the schedule (euro cents).
    pub objective_value: f64,
    pub feasible: bool,
    /// First step at which no feasible transition existed, when infeasible.
    pub violating_step: Option<usize>,
}

/// Minimum TCL power the users must consume this step: the total rating of
/// units the backup controller forces on.
pub fn thermal_floor(fleet: &TclFleet) -> f64 {
    fleet
        .units
        .iter()
        .filter(|u| u.t_in < u.t_lb)
        .map(|u| u.p_rated)
        .sum()
}

/// Storage energy grid: `points` uniform levels on [cap_min, cap_max], or a
/// single level when the range is degenerate.
fn energy_grid(esd: &Esd, points: usize) -> Vec<f64> {
    let span = esd.cap_max - esd.cap_min;
    if points <= 1 || span <= 0.0 {
        return vec![esd.cap_min];
    }
    (0..points)
        .map(|i| esd.cap_min + span * i as f64 / (points - 1) as f64)
        .collect()
}

/// The unique merit-order dispatch realizing the storage transition
/// `from -> to` (kWh) at step `t`, or None if it violates a power bound.
fn transition_dispatch(inst: &LowerInstance, t: usize, e_from: f64, e_to: f64) -> Option<StepDispatch> {
    let dt = inst.dt_hours;
    let delta = e_to - e_from;
    let (p_ch, p_dc) = if delta > 0.0 {
        let p_ch = delta / (inst.esd.eta_ch * dt);
        if p_ch > inst.esd.p_ch_max + 1e-9 {
            return None;
        }
        (p_ch, 0.0)
    } else if delta < 0.0 {
        let p_dc = -delta * inst.esd.eta_dc / dt;
        if p_dc > inst.esd.p_dc_max + 1e-9 {
            return None;
        }
        (0.0, p_dc)
    } else {
        (0.0, 0.0)
    };

    let p_tcl = inst.tcl_demand_min[t];
    let net = inst.loads[t] + p_tcl + p_ch - p_dc - inst.wind.p_wt[t];
    let (p_buy, p_sell) = if net > 0.0 {
        if net > inst.tariff.p_buy_max + 1e-9 {
            return None;
        }
        (net, 0.0)
    } else if net < 0.0 {
        if -net > inst.wind.p_wt[t] + 1e-9 {
            return None;
        }
        (0.0, -net)
    } else {
        (0.0, 0.0)
    };

    Some(StepDispatch {
        p_tcl,
        p_buy,
        p_sell,
        p_ch,
        p_dc,
        k1: u8::from(p_buy > 0.0),
        k2: u8::from(p_sell > 0.0),
        k3: u8::from(p_ch > 0.0),
        k4: u8::from(p_dc > 0.0),
    })
}

/// User cost (euro cents) incurred at step `t` regardless of the storage
/// path: retail-priced load plus generation-priced TCL consumption.
fn step_cost(inst: &LowerInstance, t: usize, p_tcl: f64) -> f64 {
    (inst.prices[t] * inst.loads[t] + inst.lambda_gen * p_tcl) * inst.dt_hours
}

/// Solve with the default energy grid resolution.
pub fn solve_lower(inst: &LowerInstance) -> Result<LowerSolution> {
    solve_lower_with_grid(inst, DEFAULT_SOC_GRID)
}

/// Minimize the user cost over schedules whose storage trajectory lives on a
/// `grid_points`-level energy grid, starting from the instance's storage
/// level and ending the day at the minimum capacity.
///
/// Ties are broken deterministically: each state keeps the lowest-index
/// feasible predecessor, so equal-cost schedules resolve toward lower
/// storage levels.
pub fn solve_lower_with_grid(inst: &LowerInstance, grid_points: usize) -> Result<LowerSolution> {
    inst.validate()?;
    let grid = energy_grid(&inst.esd, grid_points);
    let g = grid.len();
    let h = inst.horizon;

    let span = inst.esd.cap_max - inst.esd.cap_min;
    let start_idx = if g <= 1 || span <= 0.0 {
        0
    } else {
        let cell = span / (g - 1) as f64;
        ((inst.esd.capacity_kwh - inst.esd.cap_min) / cell).round() as usize
    };
    if (grid[start_idx] - inst.esd.capacity_kwh).abs() > ESD_BOUNDS_EPS_KWH.max(span * 1e-12) {
        return Err(Error::StorageBounds(format!(
            "start capacity {} is not on the {}-point energy grid",
            inst.esd.capacity_kwh, g
        )));
    }

    const INF: f64 = f64::INFINITY;
    let mut cost = vec![vec![INF; g]; h + 1];
    let mut parent = vec![vec![usize::MAX; g]; h + 1];
    cost[0][start_idx] = 0.0;

    let mut violating_step = None;
    for t in 0..h {
        let mut any = false;
        for from in 0..g {
            if !cost[t][from].is_finite() {
                continue;
            }
            for to in 0..g {
                let Some(d) = transition_dispatch(inst, t, grid[from], grid[to]) else {
                    continue;
                };
                let c = cost[t][from] + step_cost(inst, t, d.p_tcl);
                if c < cost[t + 1][to] {
                    cost[t + 1][to] = c;
                    parent[t + 1][to] = from;
                    any = true;
                }
            }
        }
        if !any {
            violating_step = Some(t);
            break;
        }
    }

    // terminal constraint: the day ends at minimum capacity (grid index 0)
    if violating_step.is_none() && !cost[h][0].is_finite() {
        violating_step = Some(h - 1);
    }

    if let Some(step) = violating_step {
        return Ok(LowerSolution {
            steps: Vec::new(),
            capacity_kwh: Vec::new(),
            objective_value: INF,
            feasible: false,
            violating_step: Some(step),
        });
    }

    let mut path = vec![0usize; h + 1];
    path[h] = 0;
    for t in (0..h).rev() {
        path[t] = parent[t + 1][path[t + 1]];
    }
    debug_assert_eq!(path[0], start_idx);

    let mut steps = Vec::with_capacity(h);
    let mut objective = 0.0;
    for t in 0..h {
        let d = transition_dispatch(inst, t, grid[path[t]], grid[path[t + 1]])
            .expect("backtracked transition must be feasible");
        objective += step_cost(inst, t, d.p_tcl);
        steps.push(d);
    }

    Ok(LowerSolution {
        steps,
        capacity_kwh: path.iter().map(|&i| grid[i]).collect(),
        objective_value: objective,
        feasible: true,
        violating_step: None,
    })
}

/// Check every schedule invariant of `sol` against `inst`: balance residual,
/// mode exclusivity and consistency, power bounds, storage bounds, and the
/// start/end-of-day storage boundary.
pub fn validate_solution(inst: &LowerInstance, sol: &LowerSolution) -> Result<()> {
    if !sol.feasible {
        return Err(Error::ScenarioInvalid("solution is marked infeasible".into()));
    }
    if sol.steps.len() != inst.horizon || sol.capacity_kwh.len() != inst.horizon + 1 {
        return Err(Error::Shape(format!(
            "solution has {} steps / {} capacities for horizon {}",
            sol.steps.len(),
            sol.capacity_kwh.len(),
            inst.horizon
        )));
    }
    let esd = &inst.esd;
    for (t, d) in sol.steps.iter().enumerate() {
        if d.k1 + d.k2 > 1 || d.k3 + d.k4 > 1 {
            return Err(Error::ScenarioInvalid(format!(
                "mode exclusivity violated at step {t}: k=({},{},{},{})",
                d.k1, d.k2, d.k3, d.k4
            )));
        }
        for (name, value, flag) in [
            ("p_buy", d.p_buy, d.k1),
            ("p_sell", d.p_sell, d.k2),
            ("p_ch", d.p_ch, d.k3),
            ("p_dc", d.p_dc, d.k4),
        ] {
            if value < 0.0 {
                return Err(Error::ScenarioInvalid(format!("{name} < 0 at step {t}")));
            }
            if value > 0.0 && flag != 1 {
                return Err(Error::ScenarioInvalid(format!(
                    "{name} = {value} with its mode flag off at step {t}"
                )));
            }
        }
        if d.p_buy > inst.tariff.p_buy_max + 1e-9 {
            return Err(Error::ScenarioInvalid(format!("p_buy over cap at step {t}")));
        }
        if d.p_sell > inst.wind.p_wt[t] + 1e-9 {
            return Err(Error::ScenarioInvalid(format!("p_sell over wind at step {t}")));
        }
        if d.p_ch > esd.p_ch_max + 1e-9 || d.p_dc > esd.p_dc_max + 1e-9 {
            return Err(Error::ScenarioInvalid(format!("storage power over cap at step {t}")));
        }
        if d.p_tcl < inst.tcl_demand_min[t] - 1e-9 || d.p_tcl > inst.tcl_demand_max[t] + 1e-9 {
            return Err(Error::ScenarioInvalid(format!("p_tcl out of bounds at step {t}")));
        }
        let residual = inst.wind.p_wt[t] + d.p_buy + d.p_dc
            - (inst.loads[t] + d.p_tcl + d.p_ch + d.p_sell);
        if residual.abs() > BALANCE_TOL_KW {
            return Err(Error::ScenarioInvalid(format!(
                "balance residual {residual} kW at step {t}"
            )));
        }
        let expected = sol.capacity_kwh[t] + (esd.eta_ch * d.p_ch - d.p_dc / esd.eta_dc) * inst.dt_hours;
        if (expected - sol.capacity_kwh[t + 1]).abs() > 1e-6 {
            return Err(Error::StorageBounds(format!(
                "capacity trajectory inconsistent at step {t}"
            )));
        }
        if sol.capacity_kwh[t + 1] < esd.cap_min - 1e-6 || sol.capacity_kwh[t + 1] > esd.cap_max + 1e-6 {
            return Err(Error::StorageBounds(format!("capacity out of bounds after step {t}")));
        }
    }
    if (sol.capacity_kwh[0] - inst.esd.capacity_kwh).abs() > 1e-6 {
        return Err(Error::StorageBounds("trajectory does not start at the instance state".into()));
    }
    if (sol.capacity_kwh[inst.horizon] - esd.cap_min).abs() > 1e-6 {
        return Err(Error::StorageBounds("day does not end at minimum capacity".into()));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::EsdParams;
    use crate::thermal::TclUnit;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn esd_default() -> Esd {
        Esd::at_cycle_start(&EsdParams::default())
    }

    fn instance(
        loads: Vec<f64>,
        wind: Vec<f64>,
        prices: Vec<f64>,
        tcl_min: Vec<f64>,
        esd: Esd,
        p_buy_max: f64,
    ) -> LowerInstance {
        let h = loads.len();
        let tariff = GridTariff {
            lambda_buy: vec![5.0; h],
            lambda_sell: vec![4.0; h],
            mu_import: 0.97,
            mu_export: 0.09,
            p_buy_max,
        };
        LowerInstance {
            horizon: h,
            prices,
            lambda_gen: 3.2,
            wind: WindSeries::new(wind).unwrap(),
            loads,
            tcl_demand_max: tcl_min.iter().map(|v| v + 150.0).collect(),
            tcl_demand_min: tcl_min,
            esd,
            tariff,
            dt_hours: 1.0,
        }
    }

    #[test]
    fn thermal_floor_counts_forced_on_units() {
        let mk = |t_in: f64| TclUnit {
            c_air: 0.004,
            c_m: 0.3,
            p_rated: 1.5,
            t_in,
            t_mass: t_in,
            q_air: 0.0,
            t_lb: 19.0,
            t_ub: 25.0,
            switch: 0,
        };
        let fleet = TclFleet::new(vec![mk(20.0), mk(22.0)]).unwrap();
        assert_eq!(thermal_floor(&fleet), 0.0);
        let fleet = TclFleet::new(vec![mk(18.5), mk(22.0), mk(26.0)]).unwrap();
        assert_eq!(thermal_floor(&fleet), 1.5);
        let mut rng = ChaCha12Rng::seed_from_u64(4);
        let units: Vec<TclUnit> = (0..40)
            .map(|_| {
                let mut u = mk(rng.gen_range(16.0..28.0));
                u.p_rated = rng.gen_range(0.5..3.0);
                u
            })
            .collect();
        let oracle: f64 = units.iter().filter(|u| u.t_in < 19.0).map(|u| u.p_rated).sum();
        let fleet = TclFleet::new(units).unwrap();
        assert_eq!(thermal_floor(&fleet), oracle);
    }

    #[test]
    fn wind_covering_everything_means_idle_grid() {
        let loads = vec![100.0, 80.0, 120.0];
        let floor = vec![10.0, 0.0, 5.0];
        let wind: Vec<f64> = loads.iter().zip(&floor).map(|(l, f)| l + f).collect();
        let prices = vec![5.53, 4.03, 7.03];
        let inst = instance(loads.clone(), wind, prices.clone(), floor.clone(), esd_default(), 500.0);
        let sol = solve_lower(&inst).unwrap();
        assert!(sol.feasible);
        validate_solution(&inst, &sol).unwrap();
        let expected: f64 = (0..3)
            .map(|t| prices[t] * loads[t] + 3.2 * floor[t])
            .sum();
        assert!((sol.objective_value - expected).abs() < 1e-9);
        for d in &sol.steps {
            assert_eq!((d.p_buy, d.p_sell, d.p_ch, d.p_dc), (0.0, 0.0, 0.0, 0.0));
            assert_eq!((d.k1, d.k2, d.k3, d.k4), (0, 0, 0, 0));
        }
    }

    #[test]
    fn zero_prices_give_zero_objective() {
        let inst = instance(
            vec![50.0, 60.0],
            vec![80.0, 40.0],
            vec![0.0, 0.0],
            vec![0.0, 0.0],
            esd_default(),
            500.0,
        );
        let mut inst = inst;
        inst.lambda_gen = 0.0;
        let sol = solve_lower(&inst).unwrap();
        assert!(sol.feasible);
        assert_eq!(sol.objective_value, 0.0);
        validate_solution(&inst, &sol).unwrap();
    }

    #[test]
    fn deficit_beyond_import_cap_is_infeasible() {
        let inst = instance(
            vec![600.0],
            vec![0.0],
            vec![5.53],
            vec![0.0],
            esd_default(),
            500.0,
        );
        let sol = solve_lower(&inst).unwrap();
        assert!(!sol.feasible);
        assert_eq!(sol.violating_step, Some(0));
        assert!(sol.objective_value.is_infinite());
    }

    #[test]
    fn storage_bridges_a_deficit_over_the_import_cap() {
        // hour 0: surplus wind charges the store; hour 1: the deficit exceeds
        // the import cap by 45 kW, covered by discharging.
        let inst = instance(
            vec![0.0, 545.0],
            vec![100.0, 0.0],
            vec![5.53, 5.53],
            vec![0.0, 0.0],
            esd_default(),
            500.0,
        );
        let sol = solve_lower(&inst).unwrap();
        assert!(sol.feasible, "violating step {:?}", sol.violating_step);
        validate_solution(&inst, &sol).unwrap();
        assert!(sol.steps[0].p_ch > 0.0);
        assert_eq!(sol.steps[0].k3, 1);
        assert!(sol.steps[1].p_dc >= 45.0 - 1e-9);
        assert_eq!(sol.steps[1].k4, 1);
        assert!((sol.capacity_kwh[2] - 0.0).abs() < 1e-9);
    }

    #[test]
    fn day_ends_at_minimum_capacity() {
        // surplus all day: charging is free but the terminal constraint
        // forces everything back out by day end
        let inst = instance(
            vec![10.0; 4],
            vec![200.0; 4],
            vec![5.53; 4],
            vec![0.0; 4],
            esd_default(),
            500.0,
        );
        let sol = solve_lower(&inst).unwrap();
        assert!(sol.feasible);
        validate_solution(&inst, &sol).unwrap();
        assert!((sol.capacity_kwh[4] - 0.0).abs() < 1e-9);
    }

    #[test]
    fn higher_prices_never_lower_the_objective() {
        let mut rng = ChaCha12Rng::seed_from_u64(17);
        for _ in 0..20 {
            let h = rng.gen_range(2..=4);
            let loads: Vec<f64> = (0..h).map(|_| rng.gen_range(0.0..200.0)).collect();
            let wind: Vec<f64> = (0..h).map(|_| rng.gen_range(0.0..200.0)).collect();
            let prices: Vec<f64> = (0..h).map(|_| rng.gen_range(0.0..10.0)).collect();
            let floor: Vec<f64> = (0..h).map(|_| rng.gen_range(0.0..50.0)).collect();
            let inst = instance(loads, wind, prices.clone(), floor, esd_default(), 500.0);
            let base = solve_lower(&inst).unwrap();
            if !base.feasible {
                continue;
            }
            let mut raised = inst.clone();
            let t = rng.gen_range(0..h);
            raised.prices[t] += rng.gen_range(0.0..5.0);
            let sol = solve_lower(&raised).unwrap();
            assert!(sol.feasible);
            assert!(sol.objective_value >= base.objective_value - 1e-12);
        }
    }

    /// Exhaustive reference: enumerate every storage-index path on the same
    /// grid and, per step, all nine (buy/sell/idle) x (charge/discharge/idle)
    /// mode combinations with their closed-form continuous variables.
    fn brute_force_objective(inst: &LowerInstance, grid_points: usize) -> Option<f64> {
        let grid = energy_grid(&inst.esd, grid_points);
        let g = grid.len();
        let h = inst.horizon;
        let span = inst.esd.cap_max - inst.esd.cap_min;
        let start = if g <= 1 || span <= 0.0 {
            0
        } else {
            ((inst.esd.capacity_kwh - inst.esd.cap_min) / (span / (g - 1) as f64)).round() as usize
        };

        let step_modes = |t: usize, e_from: f64, e_to: f64| -> Option<f64> {
            let dt = inst.dt_hours;
            let delta = e_to - e_from;
            let mut best: Option<f64> = None;
            for (k3, k4) in [(0u8, 0u8), (1, 0), (0, 1)] {
                let (p_ch, p_dc) = match (k3, k4) {
                    (0, 0) => {
                        if delta != 0.0 {
                            continue;
                        }
                        (0.0, 0.0)
                    }
                    (1, 0) => {
                        if delta < 0.0 {
                            continue;
                        }
                        let p = delta / (inst.esd.eta_ch * dt);
                        if p > inst.esd.p_ch_max + 1e-9 {
                            continue;
                        }
                        (p, 0.0)
                    }
                    (0, 1) => {
                        if delta > 0.0 {
                            continue;
                        }
                        let p = -delta * inst.esd.eta_dc / dt;
                        if p > inst.esd.p_dc_max + 1e-9 {
                            continue;
                        }
                        (0.0, p)
                    }
                    _ => unreachable!(),
                };
                let p_tcl = inst.tcl_demand_min[t];
                let net = inst.loads[t] + p_tcl + p_ch - p_dc - inst.wind.p_wt[t];
                for (k1, k2) in [(0u8, 0u8), (1, 0), (0, 1)] {
                    let ok = match (k1, k2) {
                        (0, 0) => net == 0.0,
                        (1, 0) => net >= 0.0 && net <= inst.tariff.p_buy_max + 1e-9,
                        (0, 1) => net <= 0.0 && -net <= inst.wind.p_wt[t] + 1e-9,
                        _ => unreachable!(),
                    };
                    if !ok {
                        continue;
                    }
                    let cost = (inst.prices[t] * inst.loads[t] + inst.lambda_gen * p_tcl) * dt;
                    best = Some(match best {
                        Some(b) => b.min(cost),
                        None => cost,
                    });
                }
            }
            best
        };

        // depth-first over all paths ending at index 0
        fn rec(
            t: usize,
            idx: usize,
            acc: f64,
            h: usize,
            g: usize,
            grid: &[f64],
            step_modes: &dyn Fn(usize, f64, f64) -> Option<f64>,
            best: &mut Option<f64>,
        ) {
            if t == h {
                if idx == 0 {
                    *best = Some(best.map_or(acc, |b: f64| b.min(acc)));
                }
                return;
            }
            for to in 0..g {
                if let Some(c) = step_modes(t, grid[idx], grid[to]) {
                    rec(t + 1, to, acc + c, h, g, grid, step_modes, best);
                }
            }
        }

        let mut best = None;
        rec(0, start, 0.0, h, g, &grid, &step_modes, &mut best);
        best
    }

    #[test]
    fn dp_matches_exhaustive_enumeration_on_small_instances() {
        let mut rng = ChaCha12Rng::seed_from_u64(23);
        let mut feasible_seen = 0;
        let mut infeasible_seen = 0;
        for _ in 0..40 {
            let h = rng.gen_range(1..=3);
            let g = rng.gen_range(2..=5);
            let cap_max = rng.gen_range(10.0..60.0);
            let esd = Esd {
                capacity_kwh: 0.0,
                cap_max,
                cap_min: 0.0,
                eta_ch: rng.gen_range(0.7..1.0),
                eta_dc: rng.gen_range(0.7..1.0),
                p_ch_max: rng.gen_range(5.0..50.0),
                p_dc_max: rng.gen_range(5.0..50.0),
            };
            let loads: Vec<f64> = (0..h).map(|_| rng.gen_range(0.0..120.0)).collect();
            let wind: Vec<f64> = (0..h).map(|_| rng.gen_range(0.0..120.0)).collect();
            let prices: Vec<f64> = (0..h).map(|_| rng.gen_range(0.0..10.0)).collect();
            let floor: Vec<f64> = (0..h).map(|_| rng.gen_range(0.0..30.0)).collect();
            let p_buy_max = rng.gen_range(40.0..160.0);
            let inst = instance(loads, wind, prices, floor, esd, p_buy_max);

            let sol = solve_lower_with_grid(&inst, g).unwrap();
            let oracle = brute_force_objective(&inst, g);
            match oracle {
                Some(best) => {
                    feasible_seen += 1;
                    assert!(sol.feasible, "DP infeasible but oracle found {best}");
                    let rel = (sol.objective_value - best).abs() / best.abs().max(1.0);
                    assert!(rel < 1e-9, "objective {} vs oracle {best}", sol.objective_value);
                    validate_solution(&inst, &sol).unwrap();
                }
                None => {
                    infeasible_seen += 1;
                    assert!(!sol.feasible, "oracle infeasible but DP found a schedule");
                }
            }
        }
        assert!(feasible_seen > 5, "too few feasible draws: {feasible_seen}");
        assert!(infeasible_seen > 0, "no infeasible draws exercised");
    }

    #[test]
    fn grid_refinement_is_consistent() {
        let inst = instance(
            vec![100.0, 400.0, 50.0, 200.0],
            vec![150.0, 20.0, 300.0, 10.0],
            vec![5.0, 6.0, 4.0, 5.5],
            vec![10.0, 10.0, 10.0, 10.0],
            esd_default(),
            350.0,
        );
        let coarse = solve_lower_with_grid(&inst, 101).unwrap();
        let fine = solve_lower_with_grid(&inst, 201).unwrap();
        assert!(coarse.feasible && fine.feasible);
        assert!(fine.objective_value <= coarse.objective_value + 1e-9);
    }

    #[test]
    fn degenerate_storage_range_still_solves() {
        let esd = Esd {
            capacity_kwh: 0.0,
            cap_max: 0.0,
            cap_min: 0.0,
            eta_ch: 0.9,
            eta_dc: 0.9,
            p_ch_max: 250.0,
            p_dc_max: 250.0,
        };
        let inst = instance(vec![50.0, 60.0], vec![20.0, 100.0], vec![5.0, 5.0], vec![0.0, 0.0], esd, 500.0);
        let sol = solve_lower(&inst).unwrap();
        assert!(sol.feasible);
        validate_solution(&inst, &sol).unwrap();
    }

    #[test]
    fn off_grid_start_capacity_is_rejected() {
        let mut esd = esd_default();
        esd.capacity_kwh = 2.3; // grid cell is 5 kWh at G=101
        let inst = instance(vec![50.0], vec![50.0], vec![5.0], vec![0.0], esd, 500.0);
        assert!(matches!(
            solve_lower(&inst),
            Err(Error::StorageBounds(_))
        ));
    }

    #[test]
    fn solver_is_deterministic() {
        let inst = instance(
            vec![100.0, 400.0, 50.0],
            vec![150.0, 20.0, 300.0],
            vec![5.0, 6.0, 4.0],
            vec![10.0, 0.0, 20.0],
            esd_default(),
            450.0,
        );
        let a = solve_lower(&inst).unwrap();
        let b = solve_lower(&inst).unwrap();
        assert_eq!(a, b);
    }
}
