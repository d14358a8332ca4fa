//! Sequential model-based hyperparameter search.
//!
//! The search proposes one configuration at a time: the first few trials
//! come from a randomly rotated Halton sequence (space-filling), after
//! which a distance-weighted k-nearest-neighbor surrogate of observed
//! reward is fit over normalized coordinates, a batch of uniform
//! candidates is drawn, and the candidate maximizing surrogate mean plus
//! an exploration bonus (proportional to the distance to the nearest
//! evaluated point) wins. Already-evaluated points are never re-proposed.
//! Every trial is appended to a JSON-lines ledger as it completes; failed
//! trials are kept with no reward and treated pessimistically by the
//! surrogate.

use std::collections::BTreeMap;
use std::io::{BufRead, Write as _};
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seeds::stream_rng;
use crate::trainer::TrainConfig;

/// One searchable dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum DimensionKind {
    Continuous { low: f64, high: f64, log_scale: bool },
    Integer { low: i64, high: i64 },
    Categorical { choices: Vec<String> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dimension {
    pub name: String,
    #[serde(flatten)]
    pub kind: DimensionKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub dimensions: Vec<Dimension>,
}

/// One coordinate of a configuration point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ParamValue {
    Int(i64),
    Float(f64),
    Text(String),
}

/// A full configuration: dimension name to value, deterministically ordered.
pub type ConfigPoint = BTreeMap<String, ParamValue>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrialStatus {
    Pending,
    Complete,
    Failed,
}

/// One evaluated (or failed) configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub trial_id: usize,
    pub point: ConfigPoint,
    /// Observed average reward; `None` for failed trials (ranked as -inf).
    pub reward: Option<f64>,
    pub status: TrialStatus,
}

impl Trial {
    /// Reward used for ranking; failed trials sort below everything finite.
    pub fn ranking_reward(&self) -> f64 {
        self.reward.unwrap_or(f64::NEG_INFINITY)
    }
}

/// Knobs of the proposal strategy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TunerSettings {
    /// Space-filling trials before the surrogate takes over.
    pub warmup: usize,
    /// Uniform candidates scored per suggestion.
    pub candidates: usize,
    /// Neighbors entering the surrogate mean.
    pub k_neighbors: usize,
    /// Weight of the distance-to-nearest exploration bonus.
    pub exploration_weight: f64,
}

impl Default for TunerSettings {
    fn default() -> Self {
        Self { warmup: 5, candidates: 256, k_neighbors: 5, exploration_weight: 0.15 }
    }
}

impl SearchSpace {
    pub fn validate(&self) -> Result<()> {
        if self.dimensions.is_empty() {
            return Err(Error::ScenarioInvalid("search space needs at least one dimension".into()));
        }
        let mut names = std::collections::BTreeSet::new();
        for d in &self.dimensions {
            if !names.insert(d.name.as_str()) {
                return Err(Error::ScenarioInvalid(format!("duplicate dimension '{}'", d.name)));
            }
            match &d.kind {
                DimensionKind::Continuous { low, high, log_scale } => {
                    if !(low.is_finite() && high.is_finite() && low < high) {
                        return Err(Error::ScenarioInvalid(format!(
                            "dimension '{}': bounds [{low}, {high}] not well-ordered",
                            d.name
                        )));
                    }
                    if *log_scale && *low <= 0.0 {
                        return Err(Error::ScenarioInvalid(format!(
                            "dimension '{}': log scale needs a positive lower bound",
                            d.name
                        )));
                    }
                }
                DimensionKind::Integer { low, high } => {
                    if low > high {
                        return Err(Error::ScenarioInvalid(format!(
                            "dimension '{}': bounds [{low}, {high}] not well-ordered",
                            d.name
                        )));
                    }
                }
                DimensionKind::Categorical { choices } => {
                    if choices.is_empty() {
                        return Err(Error::ScenarioInvalid(format!(
                            "dimension '{}': no choices",
                            d.name
                        )));
                    }
                    let set: std::collections::BTreeSet<_> = choices.iter().collect();
                    if set.len() != choices.len() {
                        return Err(Error::ScenarioInvalid(format!(
                            "dimension '{}': duplicate choices",
                            d.name
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// Is the point inside bounds (and complete)?
    pub fn contains(&self, point: &ConfigPoint) -> bool {
        if point.len() != self.dimensions.len() {
            return false;
        }
        self.dimensions.iter().all(|d| match (point.get(&d.name), &d.kind) {
            (Some(ParamValue::Float(v)), DimensionKind::Continuous { low, high, .. }) => {
                *v >= *low && *v <= *high
            }
            (Some(ParamValue::Int(v)), DimensionKind::Integer { low, high }) => {
                *v >= *low && *v <= *high
            }
            (Some(ParamValue::Text(v)), DimensionKind::Categorical { choices }) => {
                choices.iter().any(|c| c == v)
            }
            _ => false,
        })
    }

    /// Map a point onto the unit cube (log dims through their logarithm).
    fn normalize(&self, point: &ConfigPoint) -> Result<Vec<f64>> {
        self.dimensions
            .iter()
            .map(|d| {
                let v = point.get(&d.name).ok_or_else(|| {
                    Error::ScenarioInvalid(format!("point lacks dimension '{}'", d.name))
                })?;
                Ok(match (&d.kind, v) {
                    (DimensionKind::Continuous { low, high, log_scale }, ParamValue::Float(x)) => {
                        if *log_scale {
                            (x.ln() - low.ln()) / (high.ln() - low.ln())
                        } else {
                            (x - low) / (high - low)
                        }
                    }
                    (DimensionKind::Integer { low, high }, ParamValue::Int(x)) => {
                        if high == low {
                            0.5
                        } else {
                            (x - low) as f64 / (high - low) as f64
                        }
                    }
                    (DimensionKind::Categorical { choices }, ParamValue::Text(x)) => {
                        let idx = choices.iter().position(|c| c == x).ok_or_else(|| {
                            Error::ScenarioInvalid(format!(
                                "'{x}' is not a choice of dimension '{}'",
                                d.name
                            ))
                        })?;
                        if choices.len() == 1 {
                            0.5
                        } else {
                            idx as f64 / (choices.len() - 1) as f64
                        }
                    }
                    _ => {
                        return Err(Error::ScenarioInvalid(format!(
                            "value type mismatch on dimension '{}'",
                            d.name
                        )))
                    }
                })
            })
            .collect()
    }

    /// Map unit-cube coordinates to a concrete point.
    fn denormalize(&self, unit: &[f64]) -> ConfigPoint {
        self.dimensions
            .iter()
            .zip(unit)
            .map(|(d, &u)| {
                let u = u.clamp(0.0, 1.0);
                let v = match &d.kind {
                    DimensionKind::Continuous { low, high, log_scale } => {
                        if *log_scale {
                            ParamValue::Float((low.ln() + u * (high.ln() - low.ln())).exp())
                        } else {
                            ParamValue::Float(low + u * (high - low))
                        }
                    }
                    DimensionKind::Integer { low, high } => {
                        let span = (high - low + 1) as f64;
                        ParamValue::Int((low + (u * span).floor() as i64).min(*high))
                    }
                    DimensionKind::Categorical { choices } => {
                        let idx = ((u * choices.len() as f64).floor() as usize)
                            .min(choices.len() - 1);
                        ParamValue::Text(choices[idx].clone())
                    }
                };
                (d.name.clone(), v)
            })
            .collect()
    }

    /// Draw one point uniformly (log dims uniform in the logarithm).
    fn draw_uniform<R: Rng + ?Sized>(&self, rng: &mut R) -> ConfigPoint {
        self.dimensions
            .iter()
            .map(|d| {
                let v = match &d.kind {
                    DimensionKind::Continuous { low, high, log_scale } => {
                        let u: f64 = rng.gen();
                        if *log_scale {
                            ParamValue::Float((low.ln() + u * (high.ln() - low.ln())).exp())
                        } else {
                            ParamValue::Float(low + u * (high - low))
                        }
                    }
                    DimensionKind::Integer { low, high } => {
                        ParamValue::Int(rng.gen_range(*low..=*high))
                    }
                    DimensionKind::Categorical { choices } => {
                        ParamValue::Text(choices[rng.gen_range(0..choices.len())].clone())
                    }
                };
                (d.name.clone(), v)
            })
            .collect()
    }
}

/// Radical-inverse of `i` in the given base (classic low-discrepancy map).
fn radical_inverse(mut i: u64, base: u64) -> f64 {
    let mut inv = 0.0;
    let mut frac = 1.0 / base as f64;
    while i > 0 {
        inv += (i % base) as f64 * frac;
        i /= base;
        frac /= base as f64;
    }
    inv
}

fn first_primes(n: usize) -> Vec<u64> {
    let mut primes = Vec::with_capacity(n);
    let mut c = 2u64;
    while primes.len() < n {
        if primes.iter().all(|p| c % p != 0) {
            primes.push(c);
        }
        c += 1;
    }
    primes
}

/// Sequential proposer: owns its randomness so reruns with the same seed
/// reproduce the whole trial sequence.
#[derive(Debug, Clone)]
pub struct Tuner {
    space: SearchSpace,
    settings: TunerSettings,
    rng: ChaCha12Rng,
    /// Per-dimension rotation of the Halton warmup (scrambling).
    shifts: Vec<f64>,
    bases: Vec<u64>,
}

impl Tuner {
    pub fn new(space: SearchSpace, settings: TunerSettings, seed: u64) -> Result<Self> {
        space.validate()?;
        if settings.candidates == 0 || settings.k_neighbors == 0 {
            return Err(Error::ScenarioInvalid(
                "tuner needs at least one candidate and one neighbor".into(),
            ));
        }
        let mut shift_rng = stream_rng(seed, "tuner-shift");
        let shifts = (0..space.dimensions.len()).map(|_| shift_rng.gen::<f64>()).collect();
        let bases = first_primes(space.dimensions.len());
        Ok(Self { space, settings, rng: stream_rng(seed, "tuner"), shifts, bases })
    }

    pub fn space(&self) -> &SearchSpace {
        &self.space
    }

    /// The i-th rotated Halton point of the warmup schedule.
    fn halton_point(&self, index: usize) -> ConfigPoint {
        let unit: Vec<f64> = self
            .bases
            .iter()
            .zip(&self.shifts)
            .map(|(&b, &s)| (radical_inverse(index as u64 + 1, b) + s).fract())
            .collect();
        self.space.denormalize(&unit)
    }

    /// Propose the next configuration given everything evaluated so far.
    pub fn suggest(&mut self, history: &[Trial]) -> Result<ConfigPoint> {
        let evaluated: Vec<&Trial> =
            history.iter().filter(|t| t.status != TrialStatus::Pending).collect();
        if evaluated.len() < self.settings.warmup {
            let point = self.halton_point(evaluated.len());
            if !evaluated.iter().any(|t| t.point == point) {
                return Ok(point);
            }
        }

        let coords: Vec<Vec<f64>> = evaluated
            .iter()
            .map(|t| self.space.normalize(&t.point))
            .collect::<Result<_>>()?;
        let finite: Vec<f64> = evaluated.iter().filter_map(|t| t.reward).collect();
        let rewards: Option<Vec<f64>> = if finite.is_empty() {
            None
        } else {
            let lo = finite.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = finite.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            // Failed trials enter the surrogate at a pessimistic level so
            // their neighborhoods are avoided without poisoning the mean.
            Some(evaluated.iter().map(|t| t.reward.unwrap_or(lo - (hi - lo) - 1.0)).collect())
        };
        let scale = rewards.as_ref().map_or(1.0, |ys| {
            let lo = ys.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = ys.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let magnitude = ys.iter().fold(1.0f64, |m, y| m.max(y.abs()));
            (hi - lo).max(1e-6 * magnitude)
        });

        for _attempt in 0..64 {
            let mut best: Option<(f64, ConfigPoint)> = None;
            for _ in 0..self.settings.candidates {
                let cand = self.space.draw_uniform(&mut self.rng);
                if evaluated.iter().any(|t| t.point == cand) {
                    continue;
                }
                let q = self.space.normalize(&cand)?;
                let d_nearest = coords
                    .iter()
                    .map(|c| euclidean(c, &q))
                    .fold(f64::INFINITY, f64::min);
                let score = match &rewards {
                    Some(ys) => {
                        surrogate_mean(&coords, ys, &q, self.settings.k_neighbors)
                            + self.settings.exploration_weight * scale * d_nearest
                    }
                    // Nothing observed yet: spread out.
                    None => d_nearest,
                };
                if best.as_ref().map_or(true, |(s, _)| score > *s) {
                    best = Some((score, cand));
                }
            }
            if let Some((_, point)) = best {
                return Ok(point);
            }
        }
        Err(Error::ScenarioInvalid(
            "search space exhausted: every candidate was already evaluated".into(),
        ))
    }
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Gaussian-weighted mean of the k nearest observations; the bandwidth is
/// the k-th neighbor distance, so every selected weight is at least e^-1.
fn surrogate_mean(coords: &[Vec<f64>], rewards: &[f64], query: &[f64], k: usize) -> f64 {
    let mut dist_reward: Vec<(f64, f64)> = coords
        .iter()
        .zip(rewards)
        .map(|(c, &y)| (euclidean(c, query), y))
        .collect();
    let k = k.min(dist_reward.len());
    dist_reward.sort_by(|a, b| a.0.total_cmp(&b.0));
    dist_reward.truncate(k);
    let h = dist_reward.last().map_or(1e-3, |(d, _)| d.max(1e-3));
    let mut num = 0.0;
    let mut den = 0.0;
    for (d, y) in dist_reward {
        let w = (-(d / h) * (d / h)).exp();
        num += w * y;
        den += w;
    }
    num / den
}

/// Run `budget` suggest-evaluate cycles; the objective's error marks the
/// trial failed and the search continues. Returns (best, all trials).
pub fn run_search<F>(
    space: SearchSpace,
    settings: TunerSettings,
    budget: usize,
    seed: u64,
    mut objective: F,
    ledger: Option<&Path>,
) -> Result<(Trial, Vec<Trial>)>
where
    F: FnMut(&ConfigPoint) -> Result<f64>,
{
    if budget == 0 {
        return Err(Error::ScenarioInvalid("search budget must be at least 1 trial".into()));
    }
    let mut tuner = Tuner::new(space, settings, seed)?;
    let mut ledger_file = match ledger {
        Some(p) => Some(std::fs::File::create(p)?),
        None => None,
    };
    let mut trials: Vec<Trial> = Vec::with_capacity(budget);
    for trial_id in 0..budget {
        let point = tuner.suggest(&trials)?;
        let (reward, status) = match objective(&point) {
            Ok(r) if r.is_finite() => (Some(r), TrialStatus::Complete),
            _ => (None, TrialStatus::Failed),
        };
        let trial = Trial { trial_id, point, reward, status };
        if let Some(f) = ledger_file.as_mut() {
            writeln!(f, "{}", serde_json::to_string(&trial)?)?;
        }
        trials.push(trial);
    }
    let mut best = 0;
    for (i, t) in trials.iter().enumerate() {
        if t.ranking_reward() > trials[best].ranking_reward() {
            best = i;
        }
    }
    Ok((trials[best].clone(), trials))
}

/// Read a JSON-lines trial ledger back.
pub fn load_ledger(path: &Path) -> Result<Vec<Trial>> {
    let file = std::fs::File::open(path)?;
    let mut trials = Vec::new();
    for line in std::io::BufReader::new(file).lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        trials.push(serde_json::from_str(&line)?);
    }
    Ok(trials)
}

/// The stock search space over the trainer's learning knobs.
pub fn default_search_space() -> SearchSpace {
    let c = |name: &str, low: f64, high: f64, log_scale: bool| Dimension {
        name: name.into(),
        kind: DimensionKind::Continuous { low, high, log_scale },
    };
    let i = |name: &str, low: i64, high: i64| Dimension {
        name: name.into(),
        kind: DimensionKind::Integer { low, high },
    };
    SearchSpace {
        dimensions: vec![
            c("learning_rate", 1e-5, 1e-1, true),
            c("momentum", 0.5, 0.99, false),
            c("clip_norm", 0.5, 40.0, true),
            c("beta_v", 0.1, 1.0, false),
            c("beta_reg", 1e-4, 0.1, true),
            c("gamma", 0.8, 0.999, false),
            c("upsilon", 0.0, 1.0, false),
            i("n_step", 1, 8),
            i("hidden_width", 32, 256),
            i("sync_interval", 1, 16),
        ],
    }
}

/// Overlay a configuration point onto a base training config.
pub fn apply_point(point: &ConfigPoint, base: &TrainConfig) -> Result<TrainConfig> {
    let mut cfg = base.clone();
    for (name, value) in point {
        let float = |v: &ParamValue| match v {
            ParamValue::Float(x) => Ok(*x),
            ParamValue::Int(x) => Ok(*x as f64),
            ParamValue::Text(_) => Err(Error::ScenarioInvalid(format!(
                "hyperparameter '{name}' needs a number"
            ))),
        };
        let int = |v: &ParamValue| match v {
            ParamValue::Int(x) if *x >= 0 => Ok(*x as usize),
            _ => Err(Error::ScenarioInvalid(format!(
                "hyperparameter '{name}' needs a non-negative integer"
            ))),
        };
        match name.as_str() {
            "learning_rate" => cfg.learning_rate = float(value)?,
            "momentum" => cfg.momentum = float(value)?,
            "clip_norm" => cfg.clip_norm = float(value)?,
            "beta_v" => cfg.beta_v = float(value)?,
            "beta_reg" => cfg.beta_reg = float(value)?,
            "gamma" => cfg.gamma = float(value)?,
            "upsilon" => cfg.upsilon = float(value)?,
            "epsilon_start" => cfg.epsilon_start = float(value)?,
            "epsilon_end" => cfg.epsilon_end = float(value)?,
            "phi_start" => cfg.phi_start = float(value)?,
            "phi_end" => cfg.phi_end = float(value)?,
            "n_step" => cfg.n_step = int(value)?,
            "hidden_width" => cfg.hidden_width = int(value)?,
            "hidden_depth" => cfg.hidden_depth = int(value)?,
            "sync_interval" => cfg.sync_interval = int(value)?,
            "batch_size" => cfg.batch_size = int(value)?,
            "encoder" => {
                cfg.encoder = match value {
                    ParamValue::Text(s) => s.clone(),
                    _ => {
                        return Err(Error::ScenarioInvalid(
                            "hyperparameter 'encoder' needs a name".into(),
                        ))
                    }
                }
            }
            other => {
                return Err(Error::ScenarioInvalid(format!("unknown hyperparameter '{other}'")))
            }
        }
    }
    cfg.validate()?;
    Ok(cfg)
}
