//! Scenario files: hourly input series plus scalar parameters, a seeded
//! synthetic generator, and load/save with bit-exact round-trips.
//!
//! A scenario on disk is two files sharing one stem:
//! - `<stem>.csv` — the hourly series, starting with the line
//!   `# microgrid-scenario v1`, a column header, then one row per hour:
//!   `hour,wind_kw,lambda_buy,lambda_sell,t_out_c,p_basic_kw`.
//! - `<stem>.toml` — `master_seed`, `days`, and the parameter blocks.
//!
//! Fleet and residence parameter draws are not stored: they re-derive
//! deterministically from the master seed via named sub-streams, so a
//! loaded scenario equals the saved one field by field.

use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::config::ScenarioParams;
use crate::demand::LoadState;
use crate::error::{Error, Result};
use crate::seeds::stream_rng;
use crate::thermal::{TclFleet, TclUnit};

const SCENARIO_MAGIC: &str = "# microgrid-scenario v1";
const SERIES_HEADER: &str = "hour,wind_kw,lambda_buy,lambda_sell,t_out_c,p_basic_kw";

/// Hourly input series, all of length `24 * days`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSeries {
    pub wind_kw: Vec<f64>,
    pub lambda_buy: Vec<f64>,
    pub lambda_sell: Vec<f64>,
    pub t_out_c: Vec<f64>,
    pub p_basic_kw: Vec<f64>,
}

/// Everything a simulation run needs: input series, parameters, and the
/// seed-derived population draws.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub master_seed: u64,
    pub days: usize,
    pub params: ScenarioParams,
    pub series: ScenarioSeries,
    /// TCL fleet at its day-start thermal state, drawn from the master seed.
    pub fleet: TclFleet,
    /// Aggregate residential load state (zero pending), drawn likewise.
    pub load_state: LoadState,
}

/// Scalar half of the on-disk format.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct ScenarioSidecar {
    master_seed: u64,
    days: usize,
    #[serde(default)]
    params: ScenarioParams,
}

impl Scenario {
    /// Assemble a scenario from its parts, deriving the population draws
    /// from the master seed, and validate it.
    pub fn assemble(
        master_seed: u64,
        days: usize,
        params: ScenarioParams,
        series: ScenarioSeries,
    ) -> Result<Self> {
        let fleet = draw_fleet(master_seed, &params)?;
        let load_state = draw_load_state(master_seed, &params)?;
        let scenario = Self { master_seed, days, params, series, fleet, load_state };
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn hours(&self) -> usize {
        self.days * 24
    }

    pub fn validate(&self) -> Result<()> {
        if self.days == 0 {
            return Err(Error::ScenarioInvalid("days must be >= 1".into()));
        }
        let hours = self.hours();
        for (name, series) in [
            ("wind_kw", &self.series.wind_kw),
            ("lambda_buy", &self.series.lambda_buy),
            ("lambda_sell", &self.series.lambda_sell),
            ("t_out_c", &self.series.t_out_c),
            ("p_basic_kw", &self.series.p_basic_kw),
        ] {
            if series.len() != hours {
                return Err(Error::ScenarioInvalid(format!(
                    "{name} has {} entries, expected {hours}",
                    series.len()
                )));
            }
            for (i, &v) in series.iter().enumerate() {
                if !v.is_finite() {
                    return Err(Error::NonFinite(format!("{name}[{i}] = {v}")));
                }
            }
        }
        for (name, series) in [
            ("wind_kw", &self.series.wind_kw),
            ("lambda_buy", &self.series.lambda_buy),
            ("lambda_sell", &self.series.lambda_sell),
            ("p_basic_kw", &self.series.p_basic_kw),
        ] {
            if let Some((i, &v)) = series.iter().enumerate().find(|(_, v)| **v < 0.0) {
                return Err(Error::ScenarioInvalid(format!("{name}[{i}] = {v} is negative")));
            }
        }
        // the tie-line must be able to export all wind, and the import cap
        // must fit on the line, or feasible dispatch cannot exist
        let line = self.params.tariff.p_line_max_kw;
        if let Some((i, &v)) = self
            .series
            .wind_kw
            .iter()
            .enumerate()
            .find(|(_, v)| **v > line)
        {
            return Err(Error::ScenarioInvalid(format!(
                "wind_kw[{i}] = {v} exceeds the tie-line capacity {line}"
            )));
        }
        if self.params.tariff.p_buy_max_kw > line {
            return Err(Error::ScenarioInvalid(format!(
                "import cap {} exceeds the tie-line capacity {line}",
                self.params.tariff.p_buy_max_kw
            )));
        }
        let p = &self.params.pricing;
        if !(p.kappa > 0.0 && p.rho > 0.0 && p.lambda_market > 0.0) {
            return Err(Error::ScenarioInvalid(format!(
                "pricing parameters must be positive: kappa={}, rho={}, lambda_market={}",
                p.kappa, p.rho, p.lambda_market
            )));
        }
        if !(p.lambda_min <= p.lambda_market && p.lambda_market <= p.lambda_max) {
            return Err(Error::ScenarioInvalid(
                "price bounds must bracket the market price".into(),
            ));
        }
        if self.params.tcl.alloc_levels_kw.is_empty() {
            return Err(Error::ScenarioInvalid("alloc_levels_kw must be non-empty".into()));
        }
        self.fleet.units.iter().try_for_each(|u| u.validate())?;
        self.load_state.validate()?;
        Ok(())
    }

    /// Sidecar path for a given series path: same stem, `.toml` extension.
    pub fn sidecar_path(csv_path: &Path) -> PathBuf {
        csv_path.with_extension("toml")
    }
}

fn draw_fleet(master_seed: u64, params: &ScenarioParams) -> Result<TclFleet> {
    let tcl = &params.tcl;
    if tcl.count == 0 {
        return Err(Error::ScenarioInvalid("tcl.count must be >= 1".into()));
    }
    let mut rng = stream_rng(master_seed, "fleet");
    let units = (0..tcl.count)
        .map(|_| TclUnit {
            c_air: tcl.c_air.sample(&mut rng),
            c_m: tcl.c_m.sample(&mut rng),
            p_rated: tcl.p_rated_kw.sample(&mut rng),
            q_air: tcl.q_air.sample(&mut rng),
            t_in: rng.gen_range(tcl.t_lb..=tcl.t_ub),
            t_mass: 0.0,
            t_lb: tcl.t_lb,
            t_ub: tcl.t_ub,
            switch: 0,
        })
        .map(|mut u| {
            u.t_mass = u.t_in;
            u
        })
        .collect();
    TclFleet::new(units)
}

fn draw_load_state(master_seed: u64, params: &ScenarioParams) -> Result<LoadState> {
    let mut rng = stream_rng(master_seed, "residences");
    LoadState::sample_aggregate(&params.demand, &mut rng)
}

/// Knobs of the synthetic generator. Values are chosen so that the default
/// scenario exercises every regime: both backup-controller bounds, wind
/// surplus and deficit hours, and a wholesale day/night price spread wide
/// enough that storage and load shifting matter.
mod synth {
    /// Mean and half-range of the outdoor temperature sinusoid (degrees C).
    pub const T_OUT_MEAN: f64 = 21.0;
    pub const T_OUT_AMPLITUDE: f64 = 6.0;
    /// Hour of the daily temperature peak.
    pub const T_OUT_PEAK_HOUR: f64 = 15.0;
    pub const T_OUT_NOISE: f64 = 0.4;

    /// Wind AR(1) level (kW), persistence, and innovation scale.
    pub const WIND_MEAN_KW: f64 = 170.0;
    pub const WIND_PERSISTENCE: f64 = 0.8;
    pub const WIND_NOISE_KW: f64 = 55.0;
    pub const WIND_MAX_KW: f64 = 420.0;

    /// Wholesale price structure (euro cents per kWh): night/day plateau
    /// levels whose 24-hour mean equals the market anchor 5.53. The day
    /// window matches the time-of-use retail window so price-shifted
    /// demand lands on cheap supply hours.
    pub const PRICE_NIGHT: f64 = 2.78;
    pub const PRICE_DAY: f64 = 8.28;
    pub const PRICE_DAY_START: usize = 8;
    pub const PRICE_DAY_END: usize = 20;
    pub const PRICE_NOISE: f64 = 0.25;
    pub const PRICE_FLOOR: f64 = 0.5;
    /// Sale price sits this far under the purchase price.
    pub const SELL_SPREAD: f64 = 1.2;
    pub const SELL_FLOOR: f64 = 0.2;

    /// Base residential load (kW): overnight level plus morning/evening
    /// peaks.
    pub const LOAD_NIGHT_KW: f64 = 80.0;
    pub const LOAD_DAY_KW: f64 = 120.0;
    pub const LOAD_MORNING_PEAK_KW: f64 = 60.0;
    pub const LOAD_EVENING_PEAK_KW: f64 = 90.0;
    pub const LOAD_NOISE_KW: f64 = 8.0;
}

/// Generate a deterministic synthetic scenario: diurnal temperature,
/// autocorrelated wind, day/night wholesale prices averaging the market
/// anchor, and a base load with morning and evening peaks.
pub fn synth_scenario(seed: u64, days: usize, params: ScenarioParams) -> Result<Scenario> {
    if days == 0 {
        return Err(Error::ScenarioInvalid("days must be >= 1".into()));
    }
    let hours = days * 24;
    let mut rng = stream_rng(seed, "series");

    let mut wind_kw = Vec::with_capacity(hours);
    let mut lambda_buy = Vec::with_capacity(hours);
    let mut lambda_sell = Vec::with_capacity(hours);
    let mut t_out_c = Vec::with_capacity(hours);
    let mut p_basic_kw = Vec::with_capacity(hours);

    let mut wind_dev = 0.0_f64;
    for h in 0..hours {
        let hod = h % 24;

        let phase = 2.0 * std::f64::consts::PI * (hod as f64 - synth::T_OUT_PEAK_HOUR) / 24.0;
        let t_out = synth::T_OUT_MEAN
            + synth::T_OUT_AMPLITUDE * phase.cos()
            + rng.gen_range(-synth::T_OUT_NOISE..=synth::T_OUT_NOISE);
        t_out_c.push(t_out);

        wind_dev = synth::WIND_PERSISTENCE * wind_dev
            + rng.gen_range(-synth::WIND_NOISE_KW..=synth::WIND_NOISE_KW);
        wind_kw.push((synth::WIND_MEAN_KW + wind_dev).clamp(0.0, synth::WIND_MAX_KW));

        let day_window = (synth::PRICE_DAY_START..synth::PRICE_DAY_END).contains(&hod);
        let plateau = if day_window { synth::PRICE_DAY } else { synth::PRICE_NIGHT };
        let buy = (plateau + rng.gen_range(-synth::PRICE_NOISE..=synth::PRICE_NOISE))
            .max(synth::PRICE_FLOOR);
        lambda_buy.push(buy);
        lambda_sell.push((buy - synth::SELL_SPREAD).max(synth::SELL_FLOOR));

        let mut load = if (8..22).contains(&hod) { synth::LOAD_DAY_KW } else { synth::LOAD_NIGHT_KW };
        if (7..10).contains(&hod) {
            load += synth::LOAD_MORNING_PEAK_KW;
        }
        if (17..22).contains(&hod) {
            load += synth::LOAD_EVENING_PEAK_KW;
        }
        load += rng.gen_range(-synth::LOAD_NOISE_KW..=synth::LOAD_NOISE_KW);
        p_basic_kw.push(load.max(0.0));
    }

    Scenario::assemble(
        seed,
        days,
        params,
        ScenarioSeries { wind_kw, lambda_buy, lambda_sell, t_out_c, p_basic_kw },
    )
}

/// Seed of the stock benchmark scenario (see [`reference_scenario`]).
pub const REFERENCE_SEED: u64 = 42;
/// Length of the stock benchmark scenario in days.
pub const REFERENCE_DAYS: usize = 10;

/// The stock benchmark scenario every cross-mechanism comparison in this
/// repository runs on: seed [`REFERENCE_SEED`], [`REFERENCE_DAYS`] days,
/// default parameters. Pinning it here keeps tests, docs, and command-line
/// examples on the same footing.
pub fn reference_scenario() -> Result<Scenario> {
    synth_scenario(REFERENCE_SEED, REFERENCE_DAYS, ScenarioParams::default())
}

/// Canonical series CSV text (exactly what `save_scenario` writes).
fn scenario_csv_text(scenario: &Scenario) -> String {
    let mut text = String::new();
    text.push_str(SCENARIO_MAGIC);
    text.push('\n');
    text.push_str(SERIES_HEADER);
    text.push('\n');
    for h in 0..scenario.hours() {
        let s = &scenario.series;
        text.push_str(&format!(
            "{},{},{},{},{},{}\n",
            h, s.wind_kw[h], s.lambda_buy[h], s.lambda_sell[h], s.t_out_c[h], s.p_basic_kw[h]
        ));
    }
    text
}

/// Canonical sidecar TOML text (exactly what `save_scenario` writes).
fn scenario_sidecar_text(scenario: &Scenario) -> Result<String> {
    let sidecar = ScenarioSidecar {
        master_seed: scenario.master_seed,
        days: scenario.days,
        params: scenario.params.clone(),
    };
    toml::to_string_pretty(&sidecar)
        .map_err(|e| Error::ScenarioInvalid(format!("sidecar serialization: {e}")))
}

/// Write `<path>` (the series CSV) and its `.toml` sidecar.
pub fn save_scenario(scenario: &Scenario, csv_path: &Path) -> Result<()> {
    scenario.validate()?;
    std::fs::write(csv_path, scenario_csv_text(scenario))?;
    std::fs::write(Scenario::sidecar_path(csv_path), scenario_sidecar_text(scenario)?)?;
    Ok(())
}

/// Hex SHA-256 of arbitrary bytes.
pub fn sha256_hex(bytes: &[u8]) -> String {
    use sha2::{Digest, Sha256};
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    hasher.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Content hash of a scenario: SHA-256 over its canonical on-disk form
/// (series CSV followed by the sidecar TOML), so the same scenario hashes
/// identically whether held in memory or reloaded from disk.
pub fn scenario_fingerprint(scenario: &Scenario) -> Result<String> {
    let mut bytes = scenario_csv_text(scenario).into_bytes();
    bytes.extend_from_slice(scenario_sidecar_text(scenario)?.as_bytes());
    Ok(sha256_hex(&bytes))
}

/// Load a scenario from its series CSV (the `.toml` sidecar is found by
/// stem). Population draws are re-derived from the stored master seed.
pub fn load_scenario(csv_path: &Path) -> Result<Scenario> {
    let parse_err = |line: usize, message: String| Error::ScenarioParse {
        path: csv_path.display().to_string(),
        line,
        message,
    };

    let text = std::fs::read_to_string(csv_path)?;
    let mut lines = text.lines().enumerate();

    let (_, magic) = lines
        .next()
        .ok_or_else(|| parse_err(1, "empty file".into()))?;
    if magic.trim() != SCENARIO_MAGIC {
        return Err(parse_err(1, format!("expected `{SCENARIO_MAGIC}`, found `{magic}`")));
    }
    let (_, header) = lines
        .next()
        .ok_or_else(|| parse_err(2, "missing column header".into()))?;
    if header.trim() != SERIES_HEADER {
        return Err(parse_err(2, format!("expected `{SERIES_HEADER}`, found `{header}`")));
    }

    let mut series = ScenarioSeries {
        wind_kw: Vec::new(),
        lambda_buy: Vec::new(),
        lambda_sell: Vec::new(),
        t_out_c: Vec::new(),
        p_basic_kw: Vec::new(),
    };
    let mut expected_hour = 0usize;
    for (idx, line) in lines {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 6 {
            return Err(parse_err(line_no, format!("expected 6 fields, found {}", fields.len())));
        }
        let hour: usize = fields[0]
            .trim()
            .parse()
            .map_err(|e| parse_err(line_no, format!("hour: {e}")))?;
        if hour != expected_hour {
            return Err(parse_err(line_no, format!("hour {hour}, expected {expected_hour}")));
        }
        expected_hour += 1;
        let value = |i: usize, name: &str| -> Result<f64> {
            let v: f64 = fields[i]
                .trim()
                .parse()
                .map_err(|e| parse_err(line_no, format!("{name}: {e}")))?;
            if !v.is_finite() {
                return Err(parse_err(line_no, format!("{name} is not finite")));
            }
            Ok(v)
        };
        series.wind_kw.push(value(1, "wind_kw")?);
        series.lambda_buy.push(value(2, "lambda_buy")?);
        series.lambda_sell.push(value(3, "lambda_sell")?);
        series.t_out_c.push(value(4, "t_out_c")?);
        series.p_basic_kw.push(value(5, "p_basic_kw")?);
    }

    let sidecar_path = Scenario::sidecar_path(csv_path);
    let sidecar_text = std::fs::read_to_string(&sidecar_path).map_err(|e| {
        Error::ScenarioInvalid(format!("sidecar {}: {e}", sidecar_path.display()))
    })?;
    let sidecar: ScenarioSidecar = toml::from_str(&sidecar_text)
        .map_err(|e| Error::ScenarioInvalid(format!("sidecar {}: {e}", sidecar_path.display())))?;

    if expected_hour != sidecar.days * 24 {
        return Err(Error::ScenarioInvalid(format!(
            "series has {expected_hour} hours but sidecar declares {} days",
            sidecar.days
        )));
    }

    Scenario::assemble(sidecar.master_seed, sidecar.days, sidecar.params, series)
}

/// Manifest of one CLI run: what produced it and which files it left
/// behind. Both hashes are recomputable — the config hash from the saved
/// `config.json` bytes, the scenario hash via [`scenario_fingerprint`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: String,
    pub command: String,
    pub config_sha256: String,
    pub scenario_sha256: String,
    /// Per-step schedule log file inside the run directory, if the
    /// command produced one.
    pub step_log: Option<String>,
    /// Per-episode reward log file inside the run directory, if any.
    pub episode_log: Option<String>,
    /// Every file the run wrote, relative to the run directory.
    pub artifacts: Vec<String>,
}

impl RunRecord {
    /// Deterministic identifier: command, seed, and config-hash prefix.
    pub fn make_id(command: &str, seed: u64, config_sha256: &str) -> String {
        let prefix = &config_sha256[..config_sha256.len().min(8)];
        format!("{command}-{seed:08x}-{prefix}")
    }

    pub fn save(&self, dir: &Path) -> Result<PathBuf> {
        std::fs::create_dir_all(dir)?;
        let path = dir.join("run.json");
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(&path, text)?;
        Ok(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

/// Per-step schedule log: every itemized quantity of every simulated hour,
/// one row per step. This is also the plot-ready data: retail price and
/// level, served load against the no-response base load, TCL allocation
/// against actual fleet consumption, grid transactions, and storage state.
pub fn write_steps_csv(path: &Path, days: &[crate::env::DayRecord]) -> Result<()> {
    let mut text = String::from(
        "day,hour,applied_level,lambda_t,alloc_kw,p_basic,p_load,p_tsl,p_pbl,\
         p_tcl_fleet,p_wt,p_buy,p_sell,p_ch,p_dc,esd_capacity_kwh,\
         income_load_cents,income_tcl_cents,income_sell_cents,\
         cost_compensation_cents,cost_import_cents,cost_export_cents,\
         reward_cents,lower_feasible,p_tcl_lower,balance_residual_kw\n",
    );
    for day in days {
        for s in &day.steps {
            text.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
                s.day,
                s.hour,
                s.applied_level,
                s.lambda_t,
                s.alloc_kw,
                s.p_basic,
                s.p_load,
                s.p_tsl,
                s.p_pbl,
                s.p_tcl_fleet,
                s.p_wt,
                s.p_buy,
                s.p_sell,
                s.p_ch,
                s.p_dc,
                s.esd_capacity_kwh,
                s.income_load_cents,
                s.income_tcl_cents,
                s.income_sell_cents,
                s.cost_compensation_cents,
                s.cost_import_cents,
                s.cost_export_cents,
                s.reward_cents,
                s.lower_feasible,
                s.p_tcl_lower,
                s.balance_residual_kw
            ));
        }
    }
    std::fs::write(path, text)?;
    Ok(())
}
