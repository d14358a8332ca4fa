//! Operator policies that do not learn: the time-of-use and fixed-price
//! tariffs, each paired with a shared rule-based heuristic for the TCL
//! budget and the gap priorities. The learned controller implements the
//! same trait from the training module.

use crate::config::PricingParams;
use crate::data_io::Scenario;
use crate::error::{Error, Result};

use super::pricing::{MechanismKind, PricingMechanism};
use super::{ActionTuple, MgState};

/// Chooses the operator's action each hour.
pub trait OperatorPolicy: Send {
    fn name(&self) -> &'static str;
    fn decide(&mut self, state: &MgState, scenario: &Scenario) -> ActionTuple;
}

/// Smallest allocation level whose budget covers the rated power of every
/// unit in the colder half of its band (state of charge below one half);
/// saturates at the largest level.
pub fn heuristic_alloc(state: &MgState, scenario: &Scenario) -> u8 {
    let need: f64 = state
        .tcl_socs
        .iter()
        .zip(&scenario.fleet.units)
        .filter(|(&soc, _)| soc < 0.5)
        .map(|(_, u)| u.p_rated)
        .sum();
    let table = &scenario.params.tcl.alloc_levels_kw;
    table
        .iter()
        .position(|&kw| kw >= need)
        .unwrap_or(table.len() - 1) as u8
}

/// A pricing mechanism plus the shared heuristic for the other three
/// action components. Under the dynamic mechanism the proposal is the
/// neutral level, so this also serves as a do-nothing reference.
pub struct MechanismPolicy {
    mech: PricingMechanism,
}

impl MechanismPolicy {
    pub fn new(kind: MechanismKind, params: PricingParams) -> Self {
        Self { mech: PricingMechanism::new(kind, params) }
    }
}

impl OperatorPolicy for MechanismPolicy {
    fn name(&self) -> &'static str {
        match self.mech.kind {
            MechanismKind::Dynamic => "neutral",
            MechanismKind::Tou => "tou",
            MechanismKind::Fixed => "fixed",
        }
    }

    fn decide(&mut self, state: &MgState, scenario: &Scenario) -> ActionTuple {
        let neutral = crate::demand::PriceLevel::new(0).expect("level 0 is valid");
        let level = self.mech.propose(state.t_step, neutral);
        ActionTuple {
            a_loads: level.index() as u8,
            a_tcls: heuristic_alloc(state, scenario),
            a_shortage: 1,
            a_overplus: 1,
        }
    }
}

/// Build the policy for a mechanism kind.
pub fn mechanism_policy(kind: MechanismKind, params: PricingParams) -> Box<dyn OperatorPolicy> {
    Box::new(MechanismPolicy::new(kind, params))
}

/// Look up a non-learning baseline by name.
pub fn make_baseline_policy(
    name: &str,
    params: &PricingParams,
) -> Result<Box<dyn OperatorPolicy>> {
    match name {
        "tou" => Ok(mechanism_policy(MechanismKind::Tou, params.clone())),
        "fixed" => Ok(mechanism_policy(MechanismKind::Fixed, params.clone())),
        "neutral" => Ok(mechanism_policy(MechanismKind::Dynamic, params.clone())),
        other => Err(Error::UnknownStrategy {
            kind: "baseline policy",
            name: other.to_string(),
            available: "tou, fixed, neutral".to_string(),
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{NormalSpec, ScenarioParams};
    use crate::data_io::{Scenario, ScenarioSeries};
    use crate::demand::PriceLevel;

    fn scenario_with_fleet(n: usize, p_rated: f64) -> Scenario {
        let mut params = ScenarioParams::default();
        params.tcl.count = n;
        params.tcl.p_rated_kw = NormalSpec::new(p_rated, 0.0);
        let series = ScenarioSeries {
            wind_kw: vec![50.0; 24],
            lambda_buy: vec![5.0; 24],
            lambda_sell: vec![4.0; 24],
            t_out_c: vec![22.0; 24],
            p_basic_kw: vec![80.0; 24],
        };
        Scenario::assemble(3, 1, params, series).unwrap()
    }

    fn state_with_socs(socs: Vec<f64>, hour: usize) -> MgState {
        MgState {
            tcl_socs: socs,
            soc_esd: 0.0,
            lambda_grid: 5.0,
            p_wt: 50.0,
            p_basic: 80.0,
            t_step: hour,
            t_out: 22.0,
            p_line: 0.0,
            p_tcl_lower: 0.0,
            level_sum_today: 0.0,
            prev_action: ActionTuple::neutral(),
        }
    }

    #[test]
    fn alloc_heuristic_covers_the_cold_units() {
        let sc = scenario_with_fleet(10, 10.0); // table 0/40/80/120
        // all warm: no budget
        assert_eq!(heuristic_alloc(&state_with_socs(vec![0.9; 10], 0), &sc), 0);
        // three cold units need 30 kW -> level 1 (40 kW)
        let mut socs = vec![0.9; 10];
        socs[0] = 0.1;
        socs[3] = 0.2;
        socs[7] = 0.49;
        assert_eq!(heuristic_alloc(&state_with_socs(socs, 0), &sc), 1);
        // five cold units need 50 kW -> level 2 (80 kW)
        let mut socs = vec![0.9; 10];
        for i in 0..5 {
            socs[i] = 0.0;
        }
        assert_eq!(heuristic_alloc(&state_with_socs(socs, 0), &sc), 2);
        // all ten cold need 100 -> level 3; thirteen would still saturate at 3
        assert_eq!(heuristic_alloc(&state_with_socs(vec![0.0; 10], 0), &sc), 3);
    }

    #[test]
    fn tou_policy_prices_day_high_and_night_low() {
        let sc = scenario_with_fleet(2, 1.5);
        let mut pol = make_baseline_policy("tou", &sc.params.pricing).unwrap();
        let day = pol.decide(&state_with_socs(vec![0.9, 0.9], 12), &sc);
        let night = pol.decide(&state_with_socs(vec![0.9, 0.9], 3), &sc);
        assert_eq!(day.price_level(), PriceLevel::new(1).unwrap());
        assert_eq!(night.price_level(), PriceLevel::new(-1).unwrap());
        assert_eq!(day.a_shortage, 1);
        assert_eq!(day.a_overplus, 1);
        // boundary hours follow the [start, end) convention
        let start = sc.params.pricing.tou_day_start;
        let end = sc.params.pricing.tou_day_end;
        assert_eq!(
            pol.decide(&state_with_socs(vec![0.9, 0.9], start), &sc).price_level().value(),
            1
        );
        assert_eq!(
            pol.decide(&state_with_socs(vec![0.9, 0.9], end), &sc).price_level().value(),
            -1
        );
    }

    #[test]
    fn fixed_policy_always_prices_at_market() {
        let sc = scenario_with_fleet(2, 1.5);
        let mut pol = make_baseline_policy("fixed", &sc.params.pricing).unwrap();
        for hour in 0..24 {
            let a = pol.decide(&state_with_socs(vec![0.5, 0.5], hour), &sc);
            assert_eq!(a.price_level().value(), 0);
        }
    }

    #[test]
    fn registry_rejects_unknown_policies() {
        let sc = scenario_with_fleet(1, 1.0);
        assert!(make_baseline_policy("tou", &sc.params.pricing).is_ok());
        let err = match make_baseline_policy("oracle", &sc.params.pricing) {
            Err(e) => e,
            Ok(_) => panic!("unknown policy accepted"),
        };
        assert!(err.to_string().contains("oracle"));
    }
}
