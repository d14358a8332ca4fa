//! The operator's decision process: state, discrete action tuple, and the
//! hourly transition tying pricing, the TCL fleet, residential demand,
//! storage, and the users' dispatch solver together.
//!
//! One episode is one 24-hour day. Each step: (1) the price action becomes a
//! level, filtered through the daily-average bound; (2) the TCL budget is
//! dispatched, the backup controller overrides, temperatures advance; (3)
//! residential demand responds to the price; (4) the wind/consumption gap is
//! resolved through storage and the main grid according to the shortage and
//! overplus priority actions; (5) the users' solver re-plans the day and its
//! TCL decision for the current hour is written into the next state; (6) the
//! reward is the operator's income minus cost for the hour; (7) power
//! balance and the tie-line bound are asserted as hard faults.

pub mod encoder;
pub mod policy;
pub mod pricing;

use std::sync::Arc;

use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::config::ScenarioParams;
use crate::data_io::Scenario;
use crate::demand::{step_load, LoadState, PriceLevel};
use crate::energy::{check_cycle_boundary, esd_step, soc_esd, Esd};
use crate::error::{Error, Result};
use crate::lower::{
    solve_lower_with_grid, thermal_floor, LowerInstance, LowerSolution, DEFAULT_SOC_GRID,
};
use crate::thermal::{aggregator_dispatch, backup_controller, etp_step, AllocationLevel, TclFleet};
use crate::energy::{GridTariff, WindSeries};

use pricing::{enforce_daily_average, price_from_level};

pub use pricing::{MechanismKind, PricingMechanism};

/// Hours per episode.
pub const HORIZON: usize = 24;

/// Balance residual treated as a simulator fault (kW).
pub const BALANCE_FAULT_KW: f64 = 1e-6;

/// The operator's joint discrete action.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ActionTuple {
    /// Price level selector, 0..=4 (maps to levels -2..=2).
    pub a_loads: u8,
    /// TCL allocation selector, 0..=3.
    pub a_tcls: u8,
    /// Deficit priority: 1 = storage first, 0 = grid first.
    pub a_shortage: u8,
    /// Surplus priority: 1 = charge first, 0 = sell first.
    pub a_overplus: u8,
}

impl ActionTuple {
    pub const HEAD_SIZES: [usize; 4] = [5, 4, 2, 2];
    /// Number of distinct joint actions.
    pub const JOINT: usize = 80;

    pub fn new(a_loads: u8, a_tcls: u8, a_shortage: u8, a_overplus: u8) -> Result<Self> {
        let t = Self { a_loads, a_tcls, a_shortage, a_overplus };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        let comps = self.head_values();
        for (i, (&v, &size)) in comps.iter().zip(Self::HEAD_SIZES.iter()).enumerate() {
            if v >= size {
                return Err(Error::ScenarioInvalid(format!(
                    "action component {i} = {v} out of range (head size {size})"
                )));
            }
        }
        Ok(())
    }

    /// Neutral action: market price, no TCL budget, storage-first on both
    /// sides of the gap.
    pub fn neutral() -> Self {
        Self { a_loads: 2, a_tcls: 0, a_shortage: 1, a_overplus: 1 }
    }

    pub fn head_values(&self) -> [usize; 4] {
        [
            self.a_loads as usize,
            self.a_tcls as usize,
            self.a_shortage as usize,
            self.a_overplus as usize,
        ]
    }

    pub fn from_head_values(values: [usize; 4]) -> Result<Self> {
        Self::new(values[0] as u8, values[1] as u8, values[2] as u8, values[3] as u8)
    }

    /// Flat index in [0, 80): mixed-radix over the four heads.
    pub fn joint_index(&self) -> usize {
        ((self.a_loads as usize * 4 + self.a_tcls as usize) * 2 + self.a_shortage as usize) * 2
            + self.a_overplus as usize
    }

    pub fn from_joint_index(index: usize) -> Result<Self> {
        if index >= Self::JOINT {
            return Err(Error::ScenarioInvalid(format!("joint action index {index} out of range")));
        }
        let a_overplus = (index % 2) as u8;
        let rest = index / 2;
        let a_shortage = (rest % 2) as u8;
        let rest = rest / 2;
        let a_tcls = (rest % 4) as u8;
        let a_loads = (rest / 4) as u8;
        Self::new(a_loads, a_tcls, a_shortage, a_overplus)
    }

    /// The price level this action proposes.
    pub fn price_level(&self) -> PriceLevel {
        PriceLevel::from_index(self.a_loads as usize).expect("validated component")
    }
}

/// Observable state of the microgrid at the start of an hour.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MgState {
    /// Temperature state of charge per TCL unit.
    pub tcl_socs: Vec<f64>,
    pub soc_esd: f64,
    /// Wholesale purchase price this hour (euro cents per kWh).
    pub lambda_grid: f64,
    /// Available wind power this hour (kW).
    pub p_wt: f64,
    /// Base residential load this hour (kW).
    pub p_basic: f64,
    /// Hour of day, 0..=23.
    pub t_step: usize,
    /// Outdoor temperature (C).
    pub t_out: f64,
    /// Previous hour's net tie-line flow, import positive (kW).
    pub p_line: f64,
    /// The users' TCL consumption decision fed back from the solver (kW).
    pub p_tcl_lower: f64,
    /// Signed sum of the price levels applied so far today; how much of
    /// the daily-average budget is already spent.
    pub level_sum_today: f64,
    /// Previous applied action (neutral at episode start).
    pub prev_action: ActionTuple,
}

/// Itemized record of one environment step; every income and cost term of
/// the operator's profit is broken out so logs can be recomputed offline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepInfo {
    pub day: usize,
    pub hour: usize,
    /// Price level actually applied after the daily-average filter.
    pub applied_level: i8,
    /// Retail price this hour (euro cents per kWh).
    pub lambda_t: f64,
    /// TCL budget granted (kW).
    pub alloc_kw: f64,
    pub p_basic: f64,
    pub p_load: f64,
    pub p_tsl: f64,
    pub p_pbl: f64,
    /// Actual fleet consumption after the backup controller (kW).
    pub p_tcl_fleet: f64,
    pub p_wt: f64,
    pub p_buy: f64,
    pub p_sell: f64,
    pub p_ch: f64,
    pub p_dc: f64,
    pub esd_capacity_kwh: f64,
    pub income_load_cents: f64,
    pub income_tcl_cents: f64,
    pub income_sell_cents: f64,
    pub cost_compensation_cents: f64,
    pub cost_import_cents: f64,
    pub cost_export_cents: f64,
    pub reward_cents: f64,
    pub lower_feasible: bool,
    pub p_tcl_lower: f64,
    pub balance_residual_kw: f64,
}

/// Result of one environment step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub state: MgState,
    pub reward_cents: f64,
    pub done: bool,
    pub info: StepInfo,
}

/// One worker's simulation instance. Scenario data is shared immutably; all
/// mutable state is private to the instance.
#[derive(Debug, Clone)]
pub struct Environment {
    scenario: Arc<Scenario>,
    day: usize,
    t: usize,
    fleet: TclFleet,
    load_state: LoadState,
    esd: Esd,
    esd_day_start: Esd,
    levels_today: Vec<PriceLevel>,
    realized_lambda: Vec<f64>,
    realized_load: Vec<f64>,
    realized_tcl: Vec<f64>,
    state: MgState,
    /// Energy grid resolution handed to the users' solver.
    lower_grid_points: usize,
}

impl Environment {
    pub fn new(scenario: Arc<Scenario>) -> Result<Self> {
        let mut env = Self {
            day: 0,
            t: 0,
            fleet: scenario.fleet.clone(),
            load_state: scenario.load_state.clone(),
            esd: Esd::at_cycle_start(&scenario.params.esd),
            esd_day_start: Esd::at_cycle_start(&scenario.params.esd),
            levels_today: Vec::with_capacity(HORIZON),
            realized_lambda: Vec::with_capacity(HORIZON),
            realized_load: Vec::with_capacity(HORIZON),
            realized_tcl: Vec::with_capacity(HORIZON),
            state: MgState {
                tcl_socs: Vec::new(),
                soc_esd: 0.0,
                lambda_grid: 0.0,
                p_wt: 0.0,
                p_basic: 0.0,
                t_step: 0,
                t_out: 0.0,
                p_line: 0.0,
                p_tcl_lower: 0.0,
                level_sum_today: 0.0,
                prev_action: ActionTuple::neutral(),
            },
            scenario,
            lower_grid_points: DEFAULT_SOC_GRID,
        };
        env.reset(0)?;
        Ok(env)
    }

    /// Override the users' solver grid resolution (testing/throughput knob).
    pub fn set_lower_grid_points(&mut self, points: usize) {
        self.lower_grid_points = points.max(1);
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn params(&self) -> &ScenarioParams {
        &self.scenario.params
    }

    pub fn state(&self) -> &MgState {
        &self.state
    }

    pub fn day(&self) -> usize {
        self.day
    }

    /// Hours stepped within the current day.
    pub fn hour(&self) -> usize {
        self.t
    }

    pub fn levels_today(&self) -> &[PriceLevel] {
        &self.levels_today
    }

    /// Current fleet thermal state (exposed for heuristics and tests).
    pub fn fleet(&self) -> &TclFleet {
        &self.fleet
    }

    pub fn esd(&self) -> &Esd {
        &self.esd
    }

    /// Begin an episode on `day` (wrapped into the scenario's range).
    pub fn reset(&mut self, day: usize) -> Result<MgState> {
        self.day = day % self.scenario.days;
        self.t = 0;
        self.fleet = self.scenario.fleet.clone();
        self.load_state = self.scenario.load_state.clone();
        self.esd = Esd::at_cycle_start(&self.scenario.params.esd);
        self.esd_day_start = self.esd;
        self.levels_today.clear();
        self.realized_lambda.clear();
        self.realized_load.clear();
        self.realized_tcl.clear();

        let g = self.day * HORIZON;
        let s = &self.scenario.series;
        self.state = MgState {
            tcl_socs: self.fleet.socs(),
            soc_esd: soc_esd(&self.esd),
            lambda_grid: s.lambda_buy[g],
            p_wt: s.wind_kw[g],
            p_basic: s.p_basic_kw[g],
            t_step: 0,
            t_out: s.t_out_c[g],
            p_line: 0.0,
            p_tcl_lower: thermal_floor(&self.fleet),
            level_sum_today: 0.0,
            prev_action: ActionTuple::neutral(),
        };
        Ok(self.state.clone())
    }

    /// Advance one hour. The RNG drives only the demand payback draws.
    pub fn step(&mut self, action: ActionTuple, rng: &mut ChaCha12Rng) -> Result<StepOutcome> {
        action.validate()?;
        if self.t >= HORIZON {
            return Err(Error::SimulatorFault {
                step: self.day * HORIZON + self.t,
                message: "episode is finished; reset before stepping".into(),
            });
        }
        let t = self.t;
        let g = self.day * HORIZON + t;
        let series = &self.scenario.series;
        let params = &self.scenario.params;
        let dt = 1.0;

        // 1. price formation under the daily-average bound
        let proposed = action.price_level();
        let applied = enforce_daily_average(&self.levels_today, proposed, &params.pricing);
        let lambda_t = price_from_level(applied, &params.pricing);
        self.levels_today.push(applied);
        let applied_action = ActionTuple {
            a_loads: applied.index() as u8,
            ..action
        };

        // 2. TCL dispatch, backup override, thermal step
        let alloc = AllocationLevel::from_table(action.a_tcls as usize, &params.tcl.alloc_levels_kw)?;
        let requested = aggregator_dispatch(&self.fleet, alloc);
        let t_out = series.t_out_c[g];
        let mut p_tcl_fleet = 0.0;
        for (unit, &req) in self.fleet.units.iter_mut().zip(&requested) {
            let eff = backup_controller(unit.t_in, unit.t_lb, unit.t_ub, req)?;
            p_tcl_fleet += unit.p_rated * f64::from(eff);
            *unit = etp_step(unit, t_out, eff, dt, params.tcl.time_unit_hours)?;
        }

        // 3. price-responsive residential demand
        self.load_state.p_basic = series.p_basic_kw[g];
        let demand = step_load(&self.load_state, applied, rng, g)?;
        self.load_state = demand.state.clone();
        let p_load = demand.p_load;

        // 4. gap resolution through storage and the grid
        let consumption = p_load + p_tcl_fleet;
        let supply = series.wind_kw[g];
        let gap = consumption - supply;
        let fault = |message: String| Error::SimulatorFault { step: g, message };

        let (p_buy, p_sell, p_ch, p_dc);
        if gap > 0.0 {
            let dischargeable =
                ((self.esd.capacity_kwh - self.esd.cap_min) * self.esd.eta_dc / dt)
                    .min(self.esd.p_dc_max);
            if action.a_shortage == 1 {
                p_dc = gap.min(dischargeable);
                p_buy = gap - p_dc;
            } else {
                p_buy = gap.min(params.tariff.p_buy_max_kw);
                p_dc = (gap - p_buy).min(dischargeable);
            }
            p_sell = 0.0;
            p_ch = 0.0;
            let uncovered = gap - p_buy - p_dc;
            if uncovered > BALANCE_FAULT_KW || p_buy > params.tariff.p_buy_max_kw + 1e-9 {
                return Err(fault(format!(
                    "deficit {gap} kW cannot be covered (buy {p_buy}, discharge {p_dc})"
                )));
            }
        } else if gap < 0.0 {
            let surplus = -gap;
            let chargeable = ((self.esd.cap_max - self.esd.capacity_kwh)
                / (self.esd.eta_ch * dt))
                .min(self.esd.p_ch_max);
            if action.a_overplus == 1 {
                p_ch = surplus.min(chargeable);
                p_sell = surplus - p_ch;
            } else {
                p_sell = surplus;
                p_ch = 0.0;
            }
            p_buy = 0.0;
            p_dc = 0.0;
        } else {
            p_buy = 0.0;
            p_sell = 0.0;
            p_ch = 0.0;
            p_dc = 0.0;
        }

        self.esd = esd_step(&self.esd, p_ch, p_dc, dt)
            .map_err(|e| fault(format!("storage step rejected: {e}")))?;

        // 5. users' re-plan of the day; its hour-t TCL decision feeds back
        self.realized_lambda.push(lambda_t);
        self.realized_load.push(p_load);
        self.realized_tcl.push(p_tcl_fleet);
        let lower = self.solve_users_plan()?;
        let floor_now = thermal_floor(&self.fleet);
        let p_tcl_lower = if lower.feasible { lower.steps[t].p_tcl } else { floor_now };

        // 6. operator profit for the hour (euro cents)
        let tr = &params.tariff;
        let income_load = lambda_t * p_load * dt;
        let income_tcl = params.pricing.lambda_gen * p_tcl_fleet * dt;
        let income_sell = series.lambda_sell[g] * p_sell * dt;
        let cost_comp = params.pricing.zeta_comp * demand.p_tsl.max(0.0) * dt;
        let cost_import = (series.lambda_buy[g] + tr.mu_import) * p_buy * dt;
        let cost_export = tr.mu_export * p_sell * dt;
        let reward =
            income_load + income_tcl + income_sell - cost_comp - cost_import - cost_export;
        if !reward.is_finite() {
            return Err(fault(format!("non-finite reward {reward}")));
        }

        // 7. hard invariants: power balance and the tie-line bound
        let residual = supply + p_buy + p_dc - (p_load + p_tcl_fleet + p_ch + p_sell);
        if residual.abs() > BALANCE_FAULT_KW {
            return Err(fault(format!("balance residual {residual} kW")));
        }
        if (p_buy - p_sell).abs() > tr.p_line_max_kw + 1e-9 {
            return Err(fault(format!(
                "tie-line flow {} kW exceeds the {} kW bound",
                p_buy - p_sell,
                tr.p_line_max_kw
            )));
        }

        let info = StepInfo {
            day: self.day,
            hour: t,
            applied_level: applied.value(),
            lambda_t,
            alloc_kw: alloc.kw,
            p_basic: series.p_basic_kw[g],
            p_load,
            p_tsl: demand.p_tsl,
            p_pbl: demand.p_pbl,
            p_tcl_fleet,
            p_wt: supply,
            p_buy,
            p_sell,
            p_ch,
            p_dc,
            esd_capacity_kwh: self.esd.capacity_kwh,
            income_load_cents: income_load,
            income_tcl_cents: income_tcl,
            income_sell_cents: income_sell,
            cost_compensation_cents: cost_comp,
            cost_import_cents: cost_import,
            cost_export_cents: cost_export,
            reward_cents: reward,
            lower_feasible: lower.feasible,
            p_tcl_lower,
            balance_residual_kw: residual,
        };

        self.t += 1;
        let done = self.t == HORIZON;
        let g_next = self.day * HORIZON + self.t % HORIZON;
        self.state = MgState {
            tcl_socs: self.fleet.socs(),
            soc_esd: soc_esd(&self.esd),
            lambda_grid: series.lambda_buy[g_next],
            p_wt: series.wind_kw[g_next],
            p_basic: series.p_basic_kw[g_next],
            t_step: self.t % HORIZON,
            t_out: series.t_out_c[g_next],
            p_line: p_buy - p_sell,
            p_tcl_lower,
            level_sum_today: if done {
                0.0
            } else {
                self.levels_today.iter().map(|l| f64::from(l.value())).sum()
            },
            prev_action: applied_action,
        };

        Ok(StepOutcome { state: self.state.clone(), reward_cents: reward, done, info })
    }

    /// Whether the storage returned to its day-start level (meaningful after
    /// a completed episode).
    pub fn cycle_boundary_ok(&self) -> bool {
        check_cycle_boundary(&self.esd_day_start, &self.esd)
    }

    /// Build and solve the users' view of the day: realized hours are pinned
    /// to what happened; the current and remaining hours carry the current
    /// retail price, base-load forecasts, and the fleet's present thermal
    /// floor.
    fn solve_users_plan(&self) -> Result<LowerSolution> {
        let t = self.t; // realized hours are 0..t; current hour t is free
        let day0 = self.day * HORIZON;
        let series = &self.scenario.series;
        let params = &self.scenario.params;
        let lambda_now = *self.realized_lambda.last().expect("current hour recorded");
        let floor_now = thermal_floor(&self.fleet);
        let rated = self.fleet.total_rated_kw();

        let mut prices = Vec::with_capacity(HORIZON);
        let mut loads = Vec::with_capacity(HORIZON);
        let mut tcl_min = Vec::with_capacity(HORIZON);
        let mut tcl_max = Vec::with_capacity(HORIZON);
        for s in 0..HORIZON {
            if s < t {
                prices.push(self.realized_lambda[s]);
                loads.push(self.realized_load[s]);
                tcl_min.push(self.realized_tcl[s]);
                tcl_max.push(self.realized_tcl[s]);
            } else {
                prices.push(lambda_now);
                loads.push(if s == t {
                    self.realized_load[s]
                } else {
                    series.p_basic_kw[day0 + s]
                });
                tcl_min.push(floor_now);
                tcl_max.push(rated.max(floor_now));
            }
        }

        let inst = LowerInstance {
            horizon: HORIZON,
            prices,
            lambda_gen: params.pricing.lambda_gen,
            wind: WindSeries::new(series.wind_kw[day0..day0 + HORIZON].to_vec())?,
            loads,
            tcl_demand_min: tcl_min,
            tcl_demand_max: tcl_max,
            esd: Esd::at_cycle_start(&params.esd),
            tariff: GridTariff {
                lambda_buy: series.lambda_buy[day0..day0 + HORIZON].to_vec(),
                lambda_sell: series.lambda_sell[day0..day0 + HORIZON].to_vec(),
                mu_import: params.tariff.mu_import,
                mu_export: params.tariff.mu_export,
                p_buy_max: params.tariff.p_buy_max_kw,
            },
            dt_hours: 1.0,
        };
        solve_lower_with_grid(&inst, self.lower_grid_points)
    }
}

/// One completed episode under some policy.
#[derive(Debug, Clone, PartialEq)]
pub struct DayRecord {
    pub day: usize,
    pub profit_cents: f64,
    pub steps: Vec<StepInfo>,
}

/// Roll one episode with `policy` choosing every action.
pub fn rollout_day(
    env: &mut Environment,
    policy: &mut dyn policy::OperatorPolicy,
    day: usize,
    rng: &mut ChaCha12Rng,
) -> Result<DayRecord> {
    env.reset(day)?;
    let mut steps = Vec::with_capacity(HORIZON);
    let mut profit = 0.0;
    loop {
        let action = policy.decide(env.state(), env.scenario());
        let outcome = env.step(action, rng)?;
        profit += outcome.reward_cents;
        let done = outcome.done;
        steps.push(outcome.info);
        if done {
            break;
        }
    }
    Ok(DayRecord { day: env.day(), profit_cents: profit, steps })
}

/// Mean daily operator profit (euro cents) over all scenario days under the
/// time-of-use baseline.
pub fn run_tou_baseline(scenario: Arc<Scenario>, seed: u64) -> Result<f64> {
    run_baseline(scenario, MechanismKind::Tou, seed)
}

/// Mean daily operator profit (euro cents) under the fixed-price baseline.
pub fn run_fixed_baseline(scenario: Arc<Scenario>, seed: u64) -> Result<f64> {
    run_baseline(scenario, MechanismKind::Fixed, seed)
}

fn run_baseline(scenario: Arc<Scenario>, kind: MechanismKind, seed: u64) -> Result<f64> {
    let days = scenario.days;
    let mut env = Environment::new(scenario.clone())?;
    let mut pol = policy::mechanism_policy(kind, scenario.params.pricing.clone());
    let mut rng = crate::seeds::stream_rng(seed, "baseline");
    let mut total = 0.0;
    for day in 0..days {
        total += rollout_day(&mut env, pol.as_mut(), day, &mut rng)?.profit_cents;
    }
    Ok(total / days as f64)
}
