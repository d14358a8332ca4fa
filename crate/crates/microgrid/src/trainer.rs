//! Asynchronous advantage actor-critic training with prioritized replay.
//!
//! Several workers each own an environment instance, a local copy of the
//! network, and a private replay buffer. Per environment step a worker
//! pushes the new transition at maximum priority, samples a prioritized
//! batch, computes the loss gradient on its local copy, applies it to the
//! shared network under a lock (updates are never torn: every snapshot a
//! worker pulls is the state after a whole number of applies), re-writes
//! the sampled priorities from the fresh TD errors, and pulls the shared
//! parameters into its local copy every `sync_interval` steps. Episodes are
//! claimed from a global counter; episode `e` plays scenario day
//! `e % days`. With one worker the whole run is bit-reproducible from the
//! seed, so the episode log carries no wall-clock fields — timing is
//! reported separately.

use std::collections::VecDeque;
use std::io::Write as _;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{mpsc, Arc, Mutex};
use std::time::Instant;

use ndarray::Array1;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data_io::Scenario;
use crate::env::encoder::{make_encoder, EncodingBounds, StateEncoder};
use crate::env::policy::OperatorPolicy;
use crate::env::{ActionTuple, DayRecord, Environment, MgState, HORIZON};
use crate::error::{Error, Result};
use crate::neural::{ActorCriticNet, LossWeights, NetConfig, Optimizer, TrainingExample};
use crate::replay::{PrioritizedBuffer, Transition};
use crate::seeds::stream_rng;

/// Everything a training run needs beyond the scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub workers: usize,
    pub episodes: usize,
    pub seed: u64,
    pub hidden_width: usize,
    pub hidden_depth: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub clip_norm: f64,
    /// Decoupled weight decay; keeps policy logits from saturating.
    pub weight_decay: f64,
    pub beta_v: f64,
    pub beta_reg: f64,
    pub gamma: f64,
    /// Steps of reward folded into each return before bootstrapping.
    pub n_step: usize,
    /// Environment steps between pulls of the shared parameters.
    pub sync_interval: usize,
    pub batch_size: usize,
    /// Per-worker replay capacity.
    pub replay_capacity: usize,
    /// Transitions required in a worker's buffer before updates begin.
    pub min_replay: usize,
    /// Priority exponent of the replay buffer.
    pub upsilon: f64,
    /// Importance-weight exponent, annealed linearly over the run.
    pub phi_start: f64,
    pub phi_end: f64,
    /// Exploration schedule: linear from start to end over `epsilon_decay_episodes`.
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    pub epsilon_decay_episodes: usize,
    /// Softmax temperature of the behavior policy, annealed linearly over
    /// the same horizon as epsilon. Late sharpening makes the sampled
    /// returns approach greedy returns, so an action whose greedy
    /// continuation is good stops being charged for exploration noise.
    pub temperature_start: f64,
    pub temperature_end: f64,
    /// Applied to rewards entering the loss, never to logged rewards.
    pub reward_scale: f64,
    /// Standardize advantages across each sampled batch before the policy
    /// term sees them; priorities still use the raw errors.
    pub advantage_norm: bool,
    pub encoder: String,
    /// Energy-grid resolution of the users' solver inside the environment.
    pub lower_grid_points: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            workers: 4,
            episodes: 400,
            seed: 0,
            hidden_width: 128,
            hidden_depth: 2,
            learning_rate: 1e-3,
            momentum: 0.9,
            clip_norm: 5.0,
            weight_decay: 1e-3,
            beta_v: 0.5,
            beta_reg: 0.05,
            gamma: 0.99,
            n_step: 1,
            sync_interval: 4,
            batch_size: 32,
            replay_capacity: 5000,
            min_replay: 128,
            upsilon: 0.6,
            phi_start: 0.4,
            phi_end: 1.0,
            epsilon_start: 0.3,
            epsilon_end: 0.02,
            epsilon_decay_episodes: 200,
            temperature_start: 1.0,
            temperature_end: 0.1,
            reward_scale: 1e-3,
            advantage_norm: true,
            encoder: "one-hot".into(),
            lower_grid_points: 101,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.workers == 0 || self.episodes == 0 {
            return Err(Error::ScenarioInvalid("need at least one worker and one episode".into()));
        }
        if self.n_step == 0 || self.batch_size == 0 || self.sync_interval == 0 {
            return Err(Error::ScenarioInvalid(
                "n_step, batch_size, and sync_interval must be at least 1".into(),
            ));
        }
        for (name, v) in [
            ("epsilon_start", self.epsilon_start),
            ("epsilon_end", self.epsilon_end),
            ("phi_start", self.phi_start),
            ("phi_end", self.phi_end),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::ScenarioInvalid(format!("{name} = {v} outside [0, 1]")));
            }
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::ScenarioInvalid(format!("gamma = {} outside [0, 1)", self.gamma)));
        }
        if self.learning_rate < 0.0
            || self.momentum < 0.0
            || self.momentum >= 1.0
            || self.weight_decay < 0.0
        {
            return Err(Error::ScenarioInvalid("bad optimizer settings".into()));
        }
        if self.clip_norm <= 0.0 || self.reward_scale <= 0.0 {
            return Err(Error::ScenarioInvalid(
                "clip_norm and reward_scale must be positive".into(),
            ));
        }
        if self.advantage_norm && self.batch_size < 2 {
            return Err(Error::ScenarioInvalid(
                "advantage standardization needs batch_size >= 2".into(),
            ));
        }
        if self.temperature_start <= 0.0 || self.temperature_end <= 0.0 {
            return Err(Error::ScenarioInvalid("temperatures must be positive".into()));
        }
        Ok(())
    }

    /// Exploration rate for an episode index.
    pub fn epsilon_for(&self, episode: usize) -> f64 {
        if self.epsilon_decay_episodes == 0 {
            return self.epsilon_end;
        }
        let f = episode as f64 / self.epsilon_decay_episodes as f64;
        if f >= 1.0 {
            return self.epsilon_end;
        }
        self.epsilon_start + (self.epsilon_end - self.epsilon_start) * f
    }

    /// Behavior softmax temperature for an episode index.
    pub fn temperature_for(&self, episode: usize) -> f64 {
        if self.epsilon_decay_episodes == 0 {
            return self.temperature_end;
        }
        let f = episode as f64 / self.epsilon_decay_episodes as f64;
        if f >= 1.0 {
            return self.temperature_end;
        }
        self.temperature_start + (self.temperature_end - self.temperature_start) * f
    }

    /// Importance-weight exponent for an episode index.
    pub fn phi_for(&self, episode: usize) -> f64 {
        if self.episodes <= 1 {
            return self.phi_end;
        }
        let f = episode as f64 / (self.episodes - 1) as f64;
        if f >= 1.0 {
            return self.phi_end;
        }
        self.phi_start + (self.phi_end - self.phi_start) * f
    }
}

/// One episode's deterministic summary (no wall-clock: see `TimingRecord`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub episode: usize,
    pub worker: usize,
    pub day: usize,
    /// Unscaled operator profit over the episode (euro cents).
    pub reward_cents: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy_term: f64,
    pub epsilon: f64,
    pub phi: f64,
    pub updates: usize,
}

/// Wall-clock of one episode, kept apart from the reproducible log.
#[derive(Debug, Clone, PartialEq)]
pub struct TimingRecord {
    pub episode: usize,
    pub worker: usize,
    pub seconds: f64,
}

/// Result of a training run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub net: ActorCriticNet,
    /// Sorted by episode index.
    pub episodes: Vec<EpisodeRecord>,
    /// Sorted by episode index; nondeterministic values by nature.
    pub timing: Vec<TimingRecord>,
    pub wall_seconds: f64,
    pub config: TrainConfig,
}

/// Shared network state: exclusive whole-update writes, snapshot reads.
struct SharedNet {
    net: ActorCriticNet,
    opt: Optimizer,
    version: u64,
}

impl SharedNet {
    fn apply(&mut self, grads: &crate::neural::ParamSet) {
        self.opt.step(&mut self.net, grads);
        self.version += 1;
    }
}

/// Sample one action: each head independently is uniform with probability
/// epsilon and drawn from its tempered softmax otherwise. Per-head
/// exploration keeps a deviation on one head pure — the other heads stay
/// on-policy, so the return change is attributable. Temperature 1 samples
/// the distribution as-is; lower sharpens it toward the argmax.
pub fn select_action<R: Rng + ?Sized>(
    probs: &[Array1<f64>],
    epsilon: f64,
    temperature: f64,
    rng: &mut R,
) -> ActionTuple {
    let mut values = [0usize; 4];
    for (h, p) in probs.iter().enumerate().take(4) {
        let uniform = rng.gen::<f64>() < epsilon;
        values[h] = if uniform {
            rng.gen_range(0..p.len())
        } else {
            let tempered = temper(p, temperature);
            let r = rng.gen::<f64>();
            let mut acc = 0.0;
            let mut chosen = p.len() - 1;
            for (k, &pk) in tempered.iter().enumerate() {
                acc += pk;
                if r < acc {
                    chosen = k;
                    break;
                }
            }
            chosen
        };
    }
    ActionTuple::from_head_values(values).expect("head draws are in range")
}

/// `p^(1/tau)` renormalized, computed through logs for stability.
fn temper(p: &Array1<f64>, tau: f64) -> Array1<f64> {
    if tau == 1.0 {
        return p.clone();
    }
    let scaled: Vec<f64> = p.iter().map(|&x| x.max(f64::MIN_POSITIVE).ln() / tau).collect();
    let max = scaled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Array1<f64> = scaled.iter().map(|&z| (z - max).exp()).collect();
    let sum = out.sum();
    out.mapv_inplace(|x| x / sum);
    out
}

/// Per-head argmax (greedy evaluation action); ties go to the lower index.
pub fn greedy_action(probs: &[Array1<f64>]) -> ActionTuple {
    let mut values = [0usize; 4];
    for (h, p) in probs.iter().enumerate().take(4) {
        let mut best = 0;
        for k in 1..p.len() {
            if p[k] > p[best] {
                best = k;
            }
        }
        values[h] = best;
    }
    ActionTuple::from_head_values(values).expect("argmax is in range")
}

/// Rolls single steps into n-step transitions with terminal flushing.
struct NStepQueue {
    gamma: f64,
    n: usize,
    window: VecDeque<(Vec<f64>, [usize; 4], f64)>,
}

impl NStepQueue {
    fn new(gamma: f64, n: usize) -> Self {
        Self { gamma, n, window: VecDeque::with_capacity(n) }
    }

    fn return_from(&self, start: usize) -> f64 {
        self.window
            .iter()
            .skip(start)
            .enumerate()
            .map(|(i, (_, _, r))| self.gamma.powi(i as i32) * r)
            .sum()
    }

    /// Feed one step; emits the matured transition, or every remaining one
    /// at the terminal step (those carry no bootstrap).
    fn push(
        &mut self,
        features: Vec<f64>,
        actions: [usize; 4],
        scaled_reward: f64,
        next_features: &[f64],
        done: bool,
        out: &mut Vec<Transition>,
    ) {
        self.window.push_back((features, actions, scaled_reward));
        if done {
            while !self.window.is_empty() {
                let ret = self.return_from(0);
                let gamma_n = self.gamma.powi(self.window.len() as i32);
                let (features, actions, _) = self.window.pop_front().expect("non-empty");
                out.push(Transition {
                    features,
                    action_heads: actions,
                    n_step_return: ret,
                    bootstrap_features: None,
                    gamma_n,
                });
            }
        } else if self.window.len() == self.n {
            let ret = self.return_from(0);
            let (features, actions, _) = self.window.pop_front().expect("non-empty");
            out.push(Transition {
                features,
                action_heads: actions,
                n_step_return: ret,
                bootstrap_features: Some(next_features.to_vec()),
                gamma_n: self.gamma.powi(self.n as i32),
            });
        }
    }
}

struct WorkerContext<'a> {
    id: usize,
    scenario: Arc<Scenario>,
    config: &'a TrainConfig,
    shared: &'a Mutex<SharedNet>,
    counter: &'a AtomicUsize,
    bounds: EncodingBounds,
    records: mpsc::Sender<EpisodeRecord>,
    timings: mpsc::Sender<TimingRecord>,
}

fn worker_loop(ctx: WorkerContext<'_>) -> Result<()> {
    let cfg = ctx.config;
    let mut env = Environment::new(ctx.scenario.clone())?;
    env.set_lower_grid_points(cfg.lower_grid_points);
    let encoder = make_encoder(&cfg.encoder)?;
    let mut local = {
        let shared = ctx.shared.lock().expect("shared net lock");
        shared.net.clone()
    };
    let mut buffer: PrioritizedBuffer<Transition> =
        PrioritizedBuffer::new(cfg.replay_capacity, cfg.upsilon)?;
    let mut env_rng = stream_rng(cfg.seed, &format!("worker-{}-env", ctx.id));
    let mut agent_rng = stream_rng(cfg.seed, &format!("worker-{}-agent", ctx.id));
    let loss_weights = LossWeights {
        beta_v: cfg.beta_v,
        beta_reg: cfg.beta_reg,
        normalize_advantages: cfg.advantage_norm,
    };
    let warmup = cfg.min_replay.max(cfg.batch_size);
    let mut steps_since_pull = 0usize;
    let days = ctx.scenario.days;

    loop {
        let episode = ctx.counter.fetch_add(1, Ordering::SeqCst);
        if episode >= cfg.episodes {
            break;
        }
        let start = Instant::now();
        let epsilon = cfg.epsilon_for(episode);
        let temperature = cfg.temperature_for(episode);
        let phi = cfg.phi_for(episode);
        let day = episode % days;
        let mut state = env.reset(day)?;
        let mut queue = NStepQueue::new(cfg.gamma, cfg.n_step);
        let mut emitted = Vec::with_capacity(cfg.n_step);
        let mut reward_cents = 0.0;
        let mut loss_sums = (0.0, 0.0, 0.0);
        let mut updates = 0usize;

        for _t in 0..HORIZON {
            let features = encoder.encode(&state, &ctx.bounds);
            let probs = local.forward(&features)?.probs;
            let action = select_action(&probs, epsilon, temperature, &mut agent_rng);
            let outcome = env.step(action, &mut env_rng)?;
            reward_cents += outcome.reward_cents;
            let next_features = encoder.encode(&outcome.state, &ctx.bounds);
            emitted.clear();
            queue.push(
                features,
                action.head_values(),
                outcome.reward_cents * cfg.reward_scale,
                &next_features,
                outcome.done,
                &mut emitted,
            );
            for tr in emitted.drain(..) {
                buffer.push(tr);
            }

            if buffer.len() >= warmup {
                let batch = buffer.sample(cfg.batch_size, phi, &mut agent_rng)?;
                let mut examples = Vec::with_capacity(batch.indices.len());
                for (&idx, &w) in batch.indices.iter().zip(&batch.weights) {
                    let tr = buffer
                        .get(idx)
                        .ok_or_else(|| Error::Replay(format!("sampled vacant slot {idx}")))?;
                    let bootstrap = match &tr.bootstrap_features {
                        Some(f) => tr.gamma_n * local.value(f)?,
                        None => 0.0,
                    };
                    examples.push(TrainingExample {
                        features: tr.features.clone(),
                        action_heads: tr.action_heads,
                        value_target: tr.n_step_return + bootstrap,
                        is_weight: w,
                    });
                }
                let (breakdown, grads) = local.loss_and_gradients(&examples, &loss_weights)?;
                buffer.update_priorities(&batch.indices, &batch.stamps, &breakdown.td_errors)?;
                {
                    let mut shared = ctx.shared.lock().expect("shared net lock");
                    shared.apply(&grads);
                }
                loss_sums.0 += breakdown.policy_loss;
                loss_sums.1 += breakdown.value_loss;
                loss_sums.2 += breakdown.entropy_term;
                updates += 1;
            }

            steps_since_pull += 1;
            if steps_since_pull >= cfg.sync_interval {
                let shared = ctx.shared.lock().expect("shared net lock");
                local.params = shared.net.params.clone();
                steps_since_pull = 0;
            }

            state = outcome.state;
            if outcome.done {
                break;
            }
        }

        let denom = updates.max(1) as f64;
        ctx.records
            .send(EpisodeRecord {
                episode,
                worker: ctx.id,
                day,
                reward_cents,
                policy_loss: loss_sums.0 / denom,
                value_loss: loss_sums.1 / denom,
                entropy_term: loss_sums.2 / denom,
                epsilon,
                phi,
                updates,
            })
            .map_err(|_| Error::Replay("episode record channel closed".into()))?;
        ctx.timings
            .send(TimingRecord {
                episode,
                worker: ctx.id,
                seconds: start.elapsed().as_secs_f64(),
            })
            .map_err(|_| Error::Replay("timing channel closed".into()))?;
    }
    Ok(())
}

/// Run the full training loop and return the trained network plus logs.
pub fn train(scenario: Arc<Scenario>, config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    let encoder = make_encoder(&config.encoder)?;
    let bounds = EncodingBounds::from_scenario(&scenario);
    let input_dim = encoder.dim(scenario.fleet.count());
    let net_config = NetConfig::new(input_dim, config.hidden_width, config.hidden_depth);
    let mut init_rng = stream_rng(config.seed, "net-init");
    let net = ActorCriticNet::init(net_config, &mut init_rng)?;
    let mut opt = Optimizer::new(config.learning_rate, config.momentum, config.clip_norm, &net);
    opt.weight_decay = config.weight_decay;
    let shared = Mutex::new(SharedNet { net, opt, version: 0 });
    let counter = AtomicUsize::new(0);
    let (rec_tx, rec_rx) = mpsc::channel();
    let (time_tx, time_rx) = mpsc::channel();
    let started = Instant::now();

    let worker_results: Vec<Result<()>> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..config.workers)
            .map(|id| {
                let ctx = WorkerContext {
                    id,
                    scenario: scenario.clone(),
                    config,
                    shared: &shared,
                    counter: &counter,
                    bounds: bounds.clone(),
                    records: rec_tx.clone(),
                    timings: time_tx.clone(),
                };
                s.spawn(move || worker_loop(ctx))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|_| {
                Err(Error::Replay("a training worker panicked".into()))
            }))
            .collect()
    });
    drop(rec_tx);
    drop(time_tx);
    for r in worker_results {
        r?;
    }

    let mut episodes: Vec<EpisodeRecord> = rec_rx.iter().collect();
    episodes.sort_by_key(|r| r.episode);
    let mut timing: Vec<TimingRecord> = time_rx.iter().collect();
    timing.sort_by_key(|r| r.episode);
    let net = shared.into_inner().expect("shared net lock").net;
    Ok(TrainOutcome {
        net,
        episodes,
        timing,
        wall_seconds: started.elapsed().as_secs_f64(),
        config: config.clone(),
    })
}

/// The trained controller as an operator policy: greedy per-head argmax.
pub struct GreedyNetPolicy {
    net: ActorCriticNet,
    encoder: Box<dyn StateEncoder>,
    bounds: EncodingBounds,
}

impl GreedyNetPolicy {
    pub fn new(net: ActorCriticNet, encoder_name: &str, scenario: &Scenario) -> Result<Self> {
        let encoder = make_encoder(encoder_name)?;
        let bounds = EncodingBounds::from_scenario(scenario);
        let expect = encoder.dim(scenario.fleet.count());
        if net.config.input_dim != expect {
            return Err(Error::Shape(format!(
                "network expects {} inputs but the {} encoding of this scenario has {}",
                net.config.input_dim,
                encoder.name(),
                expect
            )));
        }
        Ok(Self { net, encoder, bounds })
    }
}

impl OperatorPolicy for GreedyNetPolicy {
    fn name(&self) -> &'static str {
        "dynamic"
    }

    fn decide(&mut self, state: &MgState, _scenario: &Scenario) -> ActionTuple {
        let features = self.encoder.encode(state, &self.bounds);
        let probs = self.net.forward(&features).expect("dimensions checked at construction").probs;
        greedy_action(&probs)
    }
}

/// Greedy evaluation over every scenario day; deterministic per seed.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub per_day: Vec<DayRecord>,
    pub mean_profit_cents: f64,
}

pub fn evaluate(
    scenario: Arc<Scenario>,
    net: &ActorCriticNet,
    encoder_name: &str,
    seed: u64,
    lower_grid_points: usize,
) -> Result<EvalReport> {
    let mut policy = GreedyNetPolicy::new(net.clone(), encoder_name, &scenario)?;
    let mut env = Environment::new(scenario.clone())?;
    env.set_lower_grid_points(lower_grid_points);
    let mut rng = stream_rng(seed, "eval");
    let mut per_day = Vec::with_capacity(scenario.days);
    for day in 0..scenario.days {
        per_day.push(crate::env::rollout_day(&mut env, &mut policy, day, &mut rng)?);
    }
    let mean = per_day.iter().map(|d| d.profit_cents).sum::<f64>() / per_day.len() as f64;
    Ok(EvalReport { per_day, mean_profit_cents: mean })
}

/// Mean episode reward over the first and last quartiles of the run.
pub fn quartile_means(episodes: &[EpisodeRecord]) -> (f64, f64) {
    let n = episodes.len();
    let q = (n / 4).max(1);
    let first = episodes[..q].iter().map(|e| e.reward_cents).sum::<f64>() / q as f64;
    let last = episodes[n - q..].iter().map(|e| e.reward_cents).sum::<f64>() / q as f64;
    (first, last)
}

/// Deterministic training log: one row per episode, no wall-clock.
pub fn write_train_log_csv(path: &Path, episodes: &[EpisodeRecord]) -> Result<()> {
    let mut out = String::from(
        "episode,worker,day,reward_cents,policy_loss,value_loss,entropy_term,epsilon,phi,updates\n",
    );
    for e in episodes {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{}\n",
            e.episode,
            e.worker,
            e.day,
            e.reward_cents,
            e.policy_loss,
            e.value_loss,
            e.entropy_term,
            e.epsilon,
            e.phi,
            e.updates
        ));
    }
    let mut f = std::fs::File::create(path)?;
    f.write_all(out.as_bytes())?;
    Ok(())
}

/// Wall-clock log, separate from the reproducible record.
pub fn write_timing_csv(path: &Path, timing: &[TimingRecord], total_seconds: f64) -> Result<()> {
    let mut out = String::from("episode,worker,seconds\n");
    for t in timing {
        out.push_str(&format!("{},{},{}\n", t.episode, t.worker, t.seconds));
    }
    out.push_str(&format!("total,,{total_seconds}\n"));
    let mut f = std::fs::File::create(path)?;
    f.write_all(out.as_bytes())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ScenarioParams;
    use crate::data_io::synth_scenario;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn rng(seed: u64) -> ChaCha12Rng {
        ChaCha12Rng::seed_from_u64(seed)
    }

    fn tiny_scenario(days: usize) -> Arc<Scenario> {
        let mut params = ScenarioParams::default();
        params.tcl.count = 4;
        params.demand.residences = 10;
        Arc::new(synth_scenario(21, days, params).unwrap())
    }

    fn tiny_config(episodes: usize, workers: usize) -> TrainConfig {
        TrainConfig {
            workers,
            episodes,
            seed: 7,
            hidden_width: 12,
            hidden_depth: 1,
            batch_size: 8,
            min_replay: 16,
            replay_capacity: 512,
            epsilon_decay_episodes: episodes.max(1),
            lower_grid_points: 15,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn epsilon_and_phi_schedules_are_linear_with_saturation() {
        let cfg = TrainConfig {
            episodes: 11,
            epsilon_start: 0.8,
            epsilon_end: 0.2,
            epsilon_decay_episodes: 6,
            phi_start: 0.4,
            phi_end: 1.0,
            ..TrainConfig::default()
        };
        assert_eq!(cfg.epsilon_for(0), 0.8);
        assert!((cfg.epsilon_for(3) - 0.5).abs() < 1e-12);
        assert_eq!(cfg.epsilon_for(6), 0.2);
        assert_eq!(cfg.epsilon_for(100), 0.2);
        assert_eq!(cfg.phi_for(0), 0.4);
        assert_eq!(cfg.phi_for(10), 1.0);
        assert!((cfg.phi_for(5) - 0.7).abs() < 1e-12);
    }

    #[test]
    fn select_action_becomes_deterministic_for_peaked_policies() {
        let probs = vec![
            Array1::from(vec![0.0, 0.0, 1.0, 0.0, 0.0]),
            Array1::from(vec![0.0, 1.0, 0.0, 0.0]),
            Array1::from(vec![1.0, 0.0]),
            Array1::from(vec![0.0, 1.0]),
        ];
        let mut r = rng(1);
        for _ in 0..64 {
            let a = select_action(&probs, 0.0, 1.0, &mut r);
            assert_eq!(a, ActionTuple::new(2, 1, 0, 1).unwrap());
        }
        assert_eq!(greedy_action(&probs), ActionTuple::new(2, 1, 0, 1).unwrap());
    }

    #[test]
    fn full_exploration_covers_every_component_value() {
        let probs = vec![
            Array1::from(vec![1.0, 0.0, 0.0, 0.0, 0.0]),
            Array1::from(vec![1.0, 0.0, 0.0, 0.0]),
            Array1::from(vec![1.0, 0.0]),
            Array1::from(vec![1.0, 0.0]),
        ];
        let mut r = rng(2);
        let mut seen = [vec![0usize; 5], vec![0; 4], vec![0; 2], vec![0; 2]];
        for _ in 0..4000 {
            let a = select_action(&probs, 1.0, 1.0, &mut r);
            for (h, &v) in a.head_values().iter().enumerate() {
                seen[h][v] += 1;
            }
        }
        for head in &seen {
            for &c in head.iter() {
                assert!(c > 0, "epsilon=1 must reach every action value");
            }
        }
    }

    #[test]
    fn sampled_frequencies_follow_the_softmax() {
        let probs = vec![
            Array1::from(vec![0.7, 0.1, 0.1, 0.05, 0.05]),
            Array1::from(vec![0.25; 4]),
            Array1::from(vec![0.9, 0.1]),
            Array1::from(vec![0.5, 0.5]),
        ];
        let mut r = rng(3);
        let n = 100_000;
        let mut first_head = vec![0usize; 5];
        for _ in 0..n {
            let a = select_action(&probs, 0.0, 1.0, &mut r);
            first_head[a.a_loads as usize] += 1;
        }
        for (k, &c) in first_head.iter().enumerate() {
            let freq = c as f64 / n as f64;
            assert!((freq - probs[0][k]).abs() < 0.01, "value {k}: {freq}");
        }
    }

    #[test]
    fn low_temperature_concentrates_draws_on_the_argmax() {
        let probs = vec![
            Array1::from(vec![0.05, 0.1, 0.4, 0.3, 0.15]),
            Array1::from(vec![0.4, 0.3, 0.2, 0.1]),
            Array1::from(vec![0.6, 0.4]),
            Array1::from(vec![0.45, 0.55]),
        ];
        let mut r = rng(4);
        let n = 20_000;
        let mut hits = 0;
        for _ in 0..n {
            let a = select_action(&probs, 0.0, 0.02, &mut r);
            if a.head_values() == [2, 0, 0, 1] {
                hits += 1;
            }
        }
        assert!(
            hits as f64 / n as f64 > 0.995,
            "tempered draws missed the argmax: {hits}/{n}"
        );
        // tau = 1 keeps mass on the runner-up
        let mut runner_up = 0;
        for _ in 0..n {
            let a = select_action(&probs, 0.0, 1.0, &mut r);
            if a.a_loads == 3 {
                runner_up += 1;
            }
        }
        let freq = runner_up as f64 / n as f64;
        assert!((freq - 0.3).abs() < 0.02, "tau=1 runner-up frequency {freq}");
    }

    #[test]
    fn one_step_queue_bootstraps_every_nonterminal_step() {
        let mut q = NStepQueue::new(0.9, 1);
        let mut out = Vec::new();
        q.push(vec![0.0], [0; 4], 1.0, &[1.0], false, &mut out);
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].n_step_return, 1.0);
        assert_eq!(out[0].bootstrap_features.as_deref(), Some(&[1.0][..]));
        assert_eq!(out[0].gamma_n, 0.9);
        out.clear();
        q.push(vec![1.0], [1; 4], 2.0, &[2.0], true, &mut out);
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].n_step_return, 2.0);
        assert!(out[0].bootstrap_features.is_none());
    }

    #[test]
    fn n_step_queue_discounts_and_flushes_at_terminal() {
        let g: f64 = 0.5;
        let mut q = NStepQueue::new(g, 3);
        let mut out = Vec::new();
        let rewards = [1.0, 2.0, 4.0, 8.0];
        for (t, &r) in rewards.iter().enumerate() {
            let done = t == rewards.len() - 1;
            q.push(vec![t as f64], [t; 4], r, &[(t + 1) as f64], done, &mut out);
        }
        // t=2 matured: R = 1 + 0.5*2 + 0.25*4 = 3, bootstrap s3
        // terminal flush: from t=1: 2 + 0.5*4 + 0.25*8 = 6; t=2: 4 + 0.5*8 = 8; t=3: 8
        assert_eq!(out.len(), 4);
        assert_eq!(out[0].n_step_return, 3.0);
        assert_eq!(out[0].bootstrap_features.as_deref(), Some(&[3.0][..]));
        assert_eq!(out[0].gamma_n, g.powi(3));
        assert_eq!(out[1].n_step_return, 6.0);
        assert!(out[1].bootstrap_features.is_none());
        assert_eq!(out[2].n_step_return, 8.0);
        assert_eq!(out[3].n_step_return, 8.0);
    }

    #[test]
    fn shared_updates_are_never_torn() {
        use crate::neural::NetConfig;
        let net = ActorCriticNet::init(NetConfig::new(4, 6, 1), &mut rng(4)).unwrap();
        let init = net.params.flatten();
        // gradient of -1 everywhere => every apply moves every param by +lr
        let mut grad = net.params.zeros_like();
        grad.load_flat(&vec![-1.0; net.params.len()]).unwrap();
        let opt = Optimizer::new(1.0, 0.0, f64::INFINITY, &net);
        let shared = Mutex::new(SharedNet { net, opt, version: 0 });
        let applies_per_thread = 200;
        std::thread::scope(|s| {
            for _ in 0..4 {
                s.spawn(|| {
                    for _ in 0..applies_per_thread {
                        shared.lock().unwrap().apply(&grad);
                    }
                });
            }
            s.spawn(|| {
                for _ in 0..400 {
                    let snap = {
                        let g = shared.lock().unwrap();
                        (g.net.params.flatten(), g.version)
                    };
                    for (p0, p) in init.iter().zip(&snap.0) {
                        let m = p - p0;
                        assert!(
                            (m - snap.1 as f64).abs() < 1e-9,
                            "torn read: offset {m} at version {}",
                            snap.1
                        );
                    }
                }
            });
        });
        let g = shared.lock().unwrap();
        assert_eq!(g.version, 4 * applies_per_thread as u64);
    }

    #[test]
    fn single_worker_training_is_reproducible() {
        let scenario = tiny_scenario(2);
        let cfg = tiny_config(3, 1);
        let a = train(scenario.clone(), &cfg).unwrap();
        let b = train(scenario, &cfg).unwrap();
        assert_eq!(a.episodes, b.episodes);
        assert_eq!(a.net.params.flatten(), b.net.params.flatten());
    }

    #[test]
    fn training_claims_each_episode_exactly_once() {
        let scenario = tiny_scenario(2);
        let cfg = tiny_config(6, 2);
        let out = train(scenario, &cfg).unwrap();
        let episodes: Vec<usize> = out.episodes.iter().map(|e| e.episode).collect();
        assert_eq!(episodes, vec![0, 1, 2, 3, 4, 5]);
        for e in &out.episodes {
            assert_eq!(e.day, e.episode % 2);
            assert!(e.reward_cents.is_finite());
            assert_eq!(e.epsilon, cfg.epsilon_for(e.episode));
            assert_eq!(e.phi, cfg.phi_for(e.episode));
        }
        assert_eq!(out.timing.len(), 6);
    }

    #[test]
    fn zero_learning_rate_leaves_the_network_frozen() {
        let scenario = tiny_scenario(1);
        let mut cfg = tiny_config(2, 1);
        cfg.learning_rate = 0.0;
        let before = {
            let mut r = stream_rng(cfg.seed, "net-init");
            let enc = make_encoder(&cfg.encoder).unwrap();
            let dim = enc.dim(scenario.fleet.count());
            ActorCriticNet::init(NetConfig::new(dim, cfg.hidden_width, cfg.hidden_depth), &mut r)
                .unwrap()
        };
        let out = train(scenario, &cfg).unwrap();
        assert_eq!(out.net.params.flatten(), before.params.flatten());
        assert!(out.episodes.iter().any(|e| e.updates > 0), "updates must still run");
    }

    #[test]
    fn evaluation_is_deterministic_and_greedy() {
        let scenario = tiny_scenario(2);
        let cfg = tiny_config(2, 1);
        let out = train(scenario.clone(), &cfg).unwrap();
        let a = evaluate(scenario.clone(), &out.net, &cfg.encoder, 5, 15).unwrap();
        let b = evaluate(scenario, &out.net, &cfg.encoder, 5, 15).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.per_day.len(), 2);
        let want =
            a.per_day.iter().map(|d| d.profit_cents).sum::<f64>() / a.per_day.len() as f64;
        assert_eq!(a.mean_profit_cents, want);
    }

    #[test]
    fn train_log_round_trips_byte_identically() {
        let scenario = tiny_scenario(1);
        let cfg = tiny_config(2, 1);
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.csv");
        let p2 = dir.path().join("b.csv");
        let a = train(scenario.clone(), &cfg).unwrap();
        write_train_log_csv(&p1, &a.episodes).unwrap();
        let b = train(scenario, &cfg).unwrap();
        write_train_log_csv(&p2, &b.episodes).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
        let text = std::fs::read_to_string(&p1).unwrap();
        assert!(text.starts_with("episode,worker,day,reward_cents"));
        assert_eq!(text.lines().count(), 3);
    }

    #[test]
    fn quartile_means_use_the_outer_quarters() {
        let mk = |i: usize, r: f64| EpisodeRecord {
            episode: i,
            worker: 0,
            day: 0,
            reward_cents: r,
            policy_loss: 0.0,
            value_loss: 0.0,
            entropy_term: 0.0,
            epsilon: 0.0,
            phi: 0.0,
            updates: 0,
        };
        let eps: Vec<_> = (0..8).map(|i| mk(i, i as f64)).collect();
        let (first, last) = quartile_means(&eps);
        assert_eq!(first, 0.5); // mean of {0, 1}
        assert_eq!(last, 6.5); // mean of {6, 7}
    }

    #[test]
    fn config_validation_rejects_bad_settings() {
        let ok = TrainConfig::default();
        ok.validate().unwrap();
        for breaker in [
            |c: &mut TrainConfig| c.workers = 0,
            |c: &mut TrainConfig| c.episodes = 0,
            |c: &mut TrainConfig| c.gamma = 1.0,
            |c: &mut TrainConfig| c.epsilon_start = 1.5,
            |c: &mut TrainConfig| c.momentum = 1.0,
            |c: &mut TrainConfig| c.clip_norm = 0.0,
            |c: &mut TrainConfig| c.n_step = 0,
            |c: &mut TrainConfig| c.reward_scale = 0.0,
            |c: &mut TrainConfig| c.batch_size = 1,
        ] {
            let mut cfg = TrainConfig::default();
            breaker(&mut cfg);
            assert!(cfg.validate().is_err());
        }
    }
}
