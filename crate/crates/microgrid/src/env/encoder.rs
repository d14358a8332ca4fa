//! State featurization for the learning agent.
//!
//! Two interchangeable encoders share a trait: one spreads every discrete
//! quantity (hour of day and the four components of the previous action)
//! into one-hot blocks, the other keeps them as single scaled integers.
//! Continuous features are min-max scaled against bounds taken from the
//! scenario so the network never sees raw kilowatts.

use serde::{Deserialize, Serialize};

use crate::data_io::Scenario;
use crate::error::{Error, Result};

use super::{ActionTuple, MgState, HORIZON};

/// Scaling ranges for the continuous features, derived from a scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodingBounds {
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub wind_max: f64,
    pub p_basic_max: f64,
    pub t_out_min: f64,
    pub t_out_max: f64,
    pub p_line_max: f64,
    pub tcl_total_kw: f64,
    /// Largest |signed sum of a day's price levels| the daily-average
    /// regulation allows.
    pub level_sum_max: f64,
}

impl EncodingBounds {
    pub fn from_scenario(scenario: &Scenario) -> Self {
        let fold = |s: &[f64], init: f64, f: fn(f64, f64) -> f64| {
            s.iter().copied().fold(init, f)
        };
        let series = &scenario.series;
        let pr = &scenario.params.pricing;
        Self {
            lambda_min: fold(&series.lambda_buy, f64::INFINITY, f64::min).min(pr.lambda_min),
            lambda_max: fold(&series.lambda_buy, f64::NEG_INFINITY, f64::max).max(pr.lambda_max),
            wind_max: fold(&series.wind_kw, 0.0, f64::max).max(1.0),
            p_basic_max: fold(&series.p_basic_kw, 0.0, f64::max).max(1.0),
            t_out_min: fold(&series.t_out_c, f64::INFINITY, f64::min),
            t_out_max: fold(&series.t_out_c, f64::NEG_INFINITY, f64::max),
            p_line_max: scenario.params.tariff.p_line_max_kw,
            tcl_total_kw: scenario.fleet.total_rated_kw().max(1.0),
            level_sum_max: crate::env::pricing::max_abs_level_sum(pr).max(1.0),
        }
    }

    fn scale(value: f64, lo: f64, hi: f64) -> f64 {
        if hi <= lo {
            return 0.5;
        }
        ((value - lo) / (hi - lo)).clamp(0.0, 1.0)
    }
}

/// Turns an `MgState` into the network's input vector.
pub trait StateEncoder: Send + Sync {
    fn name(&self) -> &'static str;
    /// Length of the produced vector for a fleet of `n_tcl` units.
    fn dim(&self, n_tcl: usize) -> usize;
    fn encode(&self, state: &MgState, bounds: &EncodingBounds) -> Vec<f64>;
}

/// Shared continuous prefix: per-unit TCL state of charge, storage state of
/// charge, then the seven scaled scalars (the last is the spent share of
/// the daily price-level budget, so the agent can see the regulation bind
/// coming).
fn push_continuous(out: &mut Vec<f64>, state: &MgState, b: &EncodingBounds) {
    for &soc in &state.tcl_socs {
        out.push(soc.clamp(-0.5, 1.5));
    }
    out.push(state.soc_esd.clamp(0.0, 1.0));
    out.push(EncodingBounds::scale(state.lambda_grid, b.lambda_min, b.lambda_max));
    out.push(EncodingBounds::scale(state.p_wt, 0.0, b.wind_max));
    out.push(EncodingBounds::scale(state.p_basic, 0.0, b.p_basic_max));
    out.push(EncodingBounds::scale(state.t_out, b.t_out_min, b.t_out_max));
    out.push(EncodingBounds::scale(state.p_line, -b.p_line_max, b.p_line_max));
    out.push(EncodingBounds::scale(state.p_tcl_lower, 0.0, b.tcl_total_kw));
    out.push(EncodingBounds::scale(state.level_sum_today, -b.level_sum_max, b.level_sum_max));
}

const CONTINUOUS_TAIL: usize = 8;

/// Hour of day and previous action spread into indicator blocks
/// (24 + 5 + 4 + 2 + 2 discrete slots).
#[derive(Debug, Clone, Copy, Default)]
pub struct OneHotEncoder;

impl StateEncoder for OneHotEncoder {
    fn name(&self) -> &'static str {
        "one-hot"
    }

    fn dim(&self, n_tcl: usize) -> usize {
        n_tcl + CONTINUOUS_TAIL + HORIZON + ActionTuple::HEAD_SIZES.iter().sum::<usize>()
    }

    fn encode(&self, state: &MgState, bounds: &EncodingBounds) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.dim(state.tcl_socs.len()));
        push_continuous(&mut out, state, bounds);
        let mut hour = [0.0; HORIZON];
        hour[state.t_step % HORIZON] = 1.0;
        out.extend_from_slice(&hour);
        for (&v, &size) in state
            .prev_action
            .head_values()
            .iter()
            .zip(ActionTuple::HEAD_SIZES.iter())
        {
            let mut block = vec![0.0; size];
            block[v] = 1.0;
            out.extend_from_slice(&block);
        }
        out
    }
}

/// Hour of day and previous action kept as single scaled integers
/// (5 discrete slots).
#[derive(Debug, Clone, Copy, Default)]
pub struct IntegerEncoder;

impl StateEncoder for IntegerEncoder {
    fn name(&self) -> &'static str {
        "integer"
    }

    fn dim(&self, n_tcl: usize) -> usize {
        n_tcl + CONTINUOUS_TAIL + 1 + ActionTuple::HEAD_SIZES.len()
    }

    fn encode(&self, state: &MgState, bounds: &EncodingBounds) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.dim(state.tcl_socs.len()));
        push_continuous(&mut out, state, bounds);
        out.push(state.t_step as f64 / (HORIZON - 1) as f64);
        for (&v, &size) in state
            .prev_action
            .head_values()
            .iter()
            .zip(ActionTuple::HEAD_SIZES.iter())
        {
            out.push(v as f64 / (size - 1) as f64);
        }
        out
    }
}

/// Recover the hour and previous action from a one-hot feature vector by
/// per-block argmax (used by tests and the replay log inspector).
pub fn decode_one_hot(features: &[f64], n_tcl: usize) -> Result<(usize, ActionTuple)> {
    let enc = OneHotEncoder;
    if features.len() != enc.dim(n_tcl) {
        return Err(Error::Shape(format!(
            "expected {} features for {} units, got {}",
            enc.dim(n_tcl),
            n_tcl,
            features.len()
        )));
    }
    let mut cursor = n_tcl + CONTINUOUS_TAIL;
    let mut take = |size: usize| -> usize {
        let block = &features[cursor..cursor + size];
        cursor += size;
        block
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).expect("finite features"))
            .map(|(i, _)| i)
            .unwrap_or(0)
    };
    let hour = take(HORIZON);
    let values = [take(5), take(4), take(2), take(2)];
    Ok((hour, ActionTuple::from_head_values(values)?))
}

/// Look up an encoder by name.
pub fn make_encoder(name: &str) -> Result<Box<dyn StateEncoder>> {
    match name {
        "one-hot" | "onehot" | "one_hot" => Ok(Box::new(OneHotEncoder)),
        "integer" | "int" => Ok(Box::new(IntegerEncoder)),
        other => Err(Error::UnknownStrategy {
            kind: "state encoder",
            name: other.to_string(),
            available: "one-hot, integer".to_string(),
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ScenarioParams;
    use crate::data_io::synth_scenario;

    fn sample_state(n_tcl: usize) -> MgState {
        MgState {
            tcl_socs: (0..n_tcl).map(|i| i as f64 / n_tcl.max(1) as f64).collect(),
            soc_esd: 0.3,
            lambda_grid: 5.0,
            p_wt: 120.0,
            p_basic: 90.0,
            t_step: 17,
            t_out: 23.0,
            p_line: -40.0,
            p_tcl_lower: 30.0,
            level_sum_today: 1.0,
            prev_action: ActionTuple::new(4, 1, 0, 1).unwrap(),
        }
    }

    fn bounds() -> EncodingBounds {
        EncodingBounds {
            lambda_min: 2.0,
            lambda_max: 9.0,
            wind_max: 400.0,
            p_basic_max: 200.0,
            t_out_min: 10.0,
            t_out_max: 30.0,
            p_line_max: 600.0,
            tcl_total_kw: 100.0,
            level_sum_max: 2.5,
        }
    }

    #[test]
    fn dimensions_match_the_declared_layout() {
        for n in [0, 1, 5, 40] {
            assert_eq!(OneHotEncoder.dim(n), n + 8 + 24 + 13);
            assert_eq!(IntegerEncoder.dim(n), n + 8 + 5);
            let st = sample_state(n);
            assert_eq!(OneHotEncoder.encode(&st, &bounds()).len(), OneHotEncoder.dim(n));
            assert_eq!(IntegerEncoder.encode(&st, &bounds()).len(), IntegerEncoder.dim(n));
        }
    }

    #[test]
    fn one_hot_blocks_decode_back_to_the_inputs() {
        for n in [1, 4] {
            for hour in 0..24 {
                for joint in (0..80).step_by(7) {
                    let mut st = sample_state(n);
                    st.t_step = hour;
                    st.prev_action = ActionTuple::from_joint_index(joint).unwrap();
                    let v = OneHotEncoder.encode(&st, &bounds());
                    let (h, a) = decode_one_hot(&v, n).unwrap();
                    assert_eq!(h, hour);
                    assert_eq!(a, st.prev_action);
                }
            }
        }
    }

    #[test]
    fn continuous_features_stay_in_unit_range() {
        let b = bounds();
        let mut st = sample_state(3);
        st.p_wt = 1e9; // beyond the bound: must clamp, not explode
        st.t_out = -100.0;
        st.p_line = 1e9;
        for enc in [make_encoder("one-hot").unwrap(), make_encoder("integer").unwrap()] {
            for (i, &x) in enc.encode(&st, &b).iter().enumerate() {
                assert!((-0.5..=1.5).contains(&x), "{} feature {i} = {x}", enc.name());
                assert!(x.is_finite());
            }
        }
    }

    #[test]
    fn scaling_is_monotone_in_each_scalar() {
        let b = bounds();
        let mut lo = sample_state(2);
        lo.lambda_grid = 3.0;
        let mut hi = lo.clone();
        hi.lambda_grid = 8.0;
        let n = 2;
        let vlo = OneHotEncoder.encode(&lo, &b);
        let vhi = OneHotEncoder.encode(&hi, &b);
        assert!(vhi[n + 1] > vlo[n + 1]);
        assert_eq!(vlo[..n + 1], vhi[..n + 1]);
        assert_eq!(vlo[n + 2..], vhi[n + 2..]);
    }

    #[test]
    fn bounds_from_scenario_cover_the_series() {
        let scenario = synth_scenario(11, 3, ScenarioParams::default()).unwrap();
        let b = EncodingBounds::from_scenario(&scenario);
        for &w in &scenario.series.wind_kw {
            assert!(w <= b.wind_max);
        }
        for &l in &scenario.series.lambda_buy {
            assert!(l >= b.lambda_min && l <= b.lambda_max);
        }
        assert!(b.lambda_min <= scenario.params.pricing.lambda_min);
        assert!(b.lambda_max >= scenario.params.pricing.lambda_max);
        assert!(b.tcl_total_kw > 0.0);
    }

    #[test]
    fn registry_rejects_unknown_names() {
        assert!(make_encoder("one-hot").is_ok());
        assert!(make_encoder("integer").is_ok());
        let err = match make_encoder("fourier") {
            Err(e) => e,
            Ok(_) => panic!("unknown encoder accepted"),
        };
        assert!(err.to_string().contains("fourier"));
    }
}
