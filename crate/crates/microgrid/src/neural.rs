//! Actor-critic network with hand-derived gradients.
//!
//! A shared tanh trunk feeds four softmax policy heads (one per component
//! of the operator's action) and a scalar value head. The training loss is
//! the importance-weighted sum of a policy-gradient term, a squared
//! temporal-difference term, and an entropy regularizer written as
//! `sum(p log p)` so that minimizing the loss spreads the policy out. The
//! advantage is treated as a constant in the policy term (semi-gradient),
//! so the value head only learns from the squared-error term.
//!
//! Everything is `f64` and single-threaded per call; updates are applied
//! with global-norm gradient clipping and classical momentum.

use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::error::{Error, Result};

/// Checkpoint format revision accepted by `from_checkpoint`.
pub const CHECKPOINT_VERSION: u32 = 1;

/// Network shape. Head sizes are fixed by the action space.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetConfig {
    pub input_dim: usize,
    pub hidden_width: usize,
    pub hidden_depth: usize,
    pub head_sizes: Vec<usize>,
}

impl NetConfig {
    pub fn new(input_dim: usize, hidden_width: usize, hidden_depth: usize) -> Self {
        Self { input_dim, hidden_width, hidden_depth, head_sizes: vec![5, 4, 2, 2] }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.hidden_width == 0 || self.hidden_depth == 0 {
            return Err(Error::Shape(format!(
                "degenerate network shape {}x{}x{}",
                self.input_dim, self.hidden_width, self.hidden_depth
            )));
        }
        if self.head_sizes.is_empty() || self.head_sizes.iter().any(|&s| s < 2) {
            return Err(Error::Shape("every policy head needs at least two actions".into()));
        }
        Ok(())
    }
}

/// One affine layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

impl Layer {
    fn zeros(rows: usize, cols: usize) -> Self {
        Self { w: Array2::zeros((rows, cols)), b: Array1::zeros(rows) }
    }

    fn init<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Self {
        let scale = 1.0 / (cols as f64).sqrt();
        let w = Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-scale..=scale));
        Self { w, b: Array1::zeros(rows) }
    }
}

/// All parameters (or a same-shaped gradient / velocity set).
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet {
    pub trunk: Vec<Layer>,
    pub heads: Vec<Layer>,
    pub value: Layer,
}

impl ParamSet {
    fn layers(&self) -> impl Iterator<Item = &Layer> {
        self.trunk.iter().chain(self.heads.iter()).chain(std::iter::once(&self.value))
    }

    fn layers_mut(&mut self) -> impl Iterator<Item = &mut Layer> {
        self.trunk
            .iter_mut()
            .chain(self.heads.iter_mut())
            .chain(std::iter::once(&mut self.value))
    }

    pub fn zeros_like(&self) -> Self {
        let zero = |l: &Layer| Layer::zeros(l.w.nrows(), l.w.ncols());
        Self {
            trunk: self.trunk.iter().map(zero).collect(),
            heads: self.heads.iter().map(zero).collect(),
            value: zero(&self.value),
        }
    }

    /// Number of scalar parameters.
    pub fn len(&self) -> usize {
        self.layers().map(|l| l.w.len() + l.b.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Euclidean norm over every scalar.
    pub fn global_norm(&self) -> f64 {
        self.layers()
            .map(|l| l.w.iter().map(|x| x * x).sum::<f64>() + l.b.iter().map(|x| x * x).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }

    /// `self += alpha * other`, elementwise across the whole set.
    pub fn add_scaled(&mut self, other: &Self, alpha: f64) {
        for (a, b) in self.layers_mut().zip(other.layers()) {
            a.w.scaled_add(alpha, &b.w);
            a.b.scaled_add(alpha, &b.b);
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        for l in self.layers_mut() {
            l.w.mapv_inplace(|x| x * alpha);
            l.b.mapv_inplace(|x| x * alpha);
        }
    }

    /// Flat copy of every scalar, in a fixed traversal order.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.len());
        for l in self.layers() {
            out.extend(l.w.iter());
            out.extend(l.b.iter());
        }
        out
    }

    /// Overwrite every scalar from a flat slice in the same order.
    pub fn load_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.len() {
            return Err(Error::Shape(format!(
                "expected {} parameters, got {}",
                self.len(),
                flat.len()
            )));
        }
        let mut it = flat.iter();
        for l in self.layers_mut() {
            for x in l.w.iter_mut() {
                *x = *it.next().expect("length checked");
            }
            for x in l.b.iter_mut() {
                *x = *it.next().expect("length checked");
            }
        }
        Ok(())
    }
}

/// The actor-critic network.
#[derive(Debug, Clone, PartialEq)]
pub struct ActorCriticNet {
    pub config: NetConfig,
    pub params: ParamSet,
}

/// Cached forward pass (inputs to every nonlinearity) for backprop.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    /// `activations[0]` is the input; `activations[i]` the i-th trunk output.
    pub activations: Vec<Array1<f64>>,
    /// Stable log-softmax outputs per head.
    pub log_probs: Vec<Array1<f64>>,
    pub probs: Vec<Array1<f64>>,
    pub value: f64,
}

/// One training sample for a loss/gradient evaluation.
#[derive(Debug, Clone)]
pub struct TrainingExample {
    pub features: Vec<f64>,
    /// Chosen action per head.
    pub action_heads: [usize; 4],
    /// n-step return bootstrapped with the target value.
    pub value_target: f64,
    /// Importance-sampling weight from the replay buffer.
    pub is_weight: f64,
}

/// Coefficients and switches shaping the loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub beta_v: f64,
    pub beta_reg: f64,
    /// Center the policy term's advantage coefficients across the batch
    /// (subtract the batch mean). Keeps the policy gradient balanced when
    /// every return is on the same side of the value estimate, which
    /// otherwise reinforces whatever was sampled and collapses entropy.
    /// Centering only — no division by the batch deviation, which would
    /// amplify noise into full-strength updates on near-uniform batches.
    #[serde(default)]
    pub normalize_advantages: bool,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { beta_v: 0.5, beta_reg: 0.01, normalize_advantages: false }
    }
}

/// Itemized loss over a batch; `td_errors` feed replay priority updates.
#[derive(Debug, Clone, PartialEq)]
pub struct LossBreakdown {
    pub policy_loss: f64,
    pub value_loss: f64,
    /// `mean(w * sum(p log p))`: negated entropy, so smaller is more spread.
    pub entropy_term: f64,
    pub total: f64,
    pub td_errors: Vec<f64>,
    /// Coefficients the policy term actually used: the standardized TD
    /// errors when normalization is on, otherwise `td_errors` itself.
    pub advantages: Vec<f64>,
}

fn log_softmax(z: &Array1<f64>) -> Array1<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let log_sum = z.iter().map(|x| (x - max).exp()).sum::<f64>().ln() + max;
    z.mapv(|x| x - log_sum)
}

/// Subtract the batch mean. An all-equal input maps to zeros: no
/// preferred direction.
fn center(xs: &[f64]) -> Vec<f64> {
    let mean = xs.iter().sum::<f64>() / xs.len() as f64;
    xs.iter().map(|x| x - mean).collect()
}

impl ActorCriticNet {
    /// Fan-in scaled uniform initialization; biases start at zero.
    pub fn init<R: Rng + ?Sized>(config: NetConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let mut trunk = Vec::with_capacity(config.hidden_depth);
        let mut fan_in = config.input_dim;
        for _ in 0..config.hidden_depth {
            trunk.push(Layer::init(config.hidden_width, fan_in, rng));
            fan_in = config.hidden_width;
        }
        let heads = config
            .head_sizes
            .iter()
            .map(|&s| Layer::init(s, fan_in, rng))
            .collect();
        let value = Layer::init(1, fan_in, rng);
        Ok(Self { config, params: ParamSet { trunk, heads, value } })
    }

    pub fn forward(&self, features: &[f64]) -> Result<ForwardPass> {
        if features.len() != self.config.input_dim {
            return Err(Error::Shape(format!(
                "expected {} input features, got {}",
                self.config.input_dim,
                features.len()
            )));
        }
        let mut activations = Vec::with_capacity(self.config.hidden_depth + 1);
        activations.push(Array1::from(features.to_vec()));
        for layer in &self.params.trunk {
            let pre = layer.w.dot(activations.last().expect("non-empty")) + &layer.b;
            activations.push(pre.mapv(f64::tanh));
        }
        let top = activations.last().expect("non-empty");
        let mut log_probs = Vec::with_capacity(self.params.heads.len());
        let mut probs = Vec::with_capacity(self.params.heads.len());
        for head in &self.params.heads {
            let logits = head.w.dot(top) + &head.b;
            let lp = log_softmax(&logits);
            probs.push(lp.mapv(f64::exp));
            log_probs.push(lp);
        }
        let value = self.params.value.w.dot(top)[0] + self.params.value.b[0];
        if !value.is_finite() {
            return Err(Error::NonFinite(format!("value head produced {value}")));
        }
        Ok(ForwardPass { activations, log_probs, probs, value })
    }

    /// State value estimate.
    pub fn value(&self, features: &[f64]) -> Result<f64> {
        Ok(self.forward(features)?.value)
    }

    /// Action distributions, one per head.
    pub fn policy(&self, features: &[f64]) -> Result<Vec<Array1<f64>>> {
        Ok(self.forward(features)?.probs)
    }

    /// Loss and its exact gradient over a batch. The policy term's
    /// advantage coefficient is the TD error at the current parameters
    /// (batch-centered when `weights.normalize_advantages` is set) and
    /// is treated as a constant (semi-gradient): the value head receives no
    /// gradient from the policy term.
    pub fn loss_and_gradients(
        &self,
        batch: &[TrainingExample],
        weights: &LossWeights,
    ) -> Result<(LossBreakdown, ParamSet)> {
        self.loss_core(batch, weights, None)
    }

    /// Loss with the policy term's advantage coefficients pinned to
    /// `advantages` instead of recomputed from the value head. The gradient
    /// from `loss_and_gradients` is the exact derivative of this function
    /// when `advantages` equals the breakdown's `advantages` at the same
    /// parameters, which is what a finite-difference check must probe.
    pub fn loss_with_frozen_advantages(
        &self,
        batch: &[TrainingExample],
        advantages: &[f64],
        weights: &LossWeights,
    ) -> Result<LossBreakdown> {
        if advantages.len() != batch.len() {
            return Err(Error::Shape(format!(
                "{} advantages for a batch of {}",
                advantages.len(),
                batch.len()
            )));
        }
        Ok(self.loss_core(batch, weights, Some(advantages))?.0)
    }

    fn loss_core(
        &self,
        batch: &[TrainingExample],
        weights: &LossWeights,
        frozen_advantages: Option<&[f64]>,
    ) -> Result<(LossBreakdown, ParamSet)> {
        if batch.is_empty() {
            return Err(Error::Shape("empty training batch".into()));
        }
        let n = batch.len() as f64;
        let mut grads = self.params.zeros_like();
        let mut policy_loss = 0.0;
        let mut value_loss = 0.0;
        let mut entropy_term = 0.0;

        let mut fwds = Vec::with_capacity(batch.len());
        let mut td_errors = Vec::with_capacity(batch.len());
        for ex in batch {
            if !ex.value_target.is_finite() || !ex.is_weight.is_finite() || ex.is_weight < 0.0 {
                return Err(Error::NonFinite(format!(
                    "bad sample: target {}, weight {}",
                    ex.value_target, ex.is_weight
                )));
            }
            let fwd = self.forward(&ex.features)?;
            td_errors.push(ex.value_target - fwd.value);
            fwds.push(fwd);
        }
        let advantages = match frozen_advantages {
            Some(a) => a.to_vec(),
            None if weights.normalize_advantages => center(&td_errors),
            None => td_errors.clone(),
        };

        for (j, ex) in batch.iter().enumerate() {
            let fwd = &fwds[j];
            let delta = td_errors[j];
            let adv = advantages[j];
            let w_n = ex.is_weight / n;

            // loss terms
            let mut log_joint = 0.0;
            for (h, (&a, lp)) in ex.action_heads.iter().zip(&fwd.log_probs).enumerate() {
                if a >= lp.len() {
                    return Err(Error::Shape(format!(
                        "action {a} out of range for head {h} of size {}",
                        lp.len()
                    )));
                }
                log_joint += lp[a];
            }
            policy_loss -= w_n * adv * log_joint;
            value_loss += w_n * delta * delta;
            let neg_entropy: f64 = fwd
                .probs
                .iter()
                .zip(&fwd.log_probs)
                .map(|(p, lp)| p.iter().zip(lp.iter()).map(|(&pi, &li)| pi * li).sum::<f64>())
                .sum();
            entropy_term += w_n * neg_entropy;

            // gradient at each head's logits
            let top = fwd.activations.last().expect("non-empty");
            let mut d_top: Array1<f64> = Array1::zeros(top.len());
            for (h, head) in self.params.heads.iter().enumerate() {
                let p = &fwd.probs[h];
                let lp = &fwd.log_probs[h];
                let e_h: f64 = p.iter().zip(lp.iter()).map(|(&pi, &li)| pi * li).sum();
                let mut g_z = Array1::zeros(p.len());
                for k in 0..p.len() {
                    let indicator = if k == ex.action_heads[h] { 1.0 } else { 0.0 };
                    g_z[k] = w_n
                        * (-adv * (indicator - p[k])
                            + weights.beta_reg * p[k] * (lp[k] - e_h));
                }
                accumulate_affine(&mut grads.heads[h], &g_z, top);
                d_top = d_top + head.w.t().dot(&g_z);
            }

            // value head: semi-gradient, only the squared-error term
            let g_v = Array1::from(vec![w_n * weights.beta_v * (-2.0 * delta)]);
            accumulate_affine(&mut grads.value, &g_v, top);
            d_top = d_top + self.params.value.w.t().dot(&g_v);

            // trunk backprop through tanh
            let mut d_act = d_top;
            for i in (0..self.params.trunk.len()).rev() {
                let act = &fwd.activations[i + 1];
                let d_pre = &d_act * &act.mapv(|h| 1.0 - h * h);
                accumulate_affine(&mut grads.trunk[i], &d_pre, &fwd.activations[i]);
                d_act = self.params.trunk[i].w.t().dot(&d_pre);
            }
        }

        let total = policy_loss + weights.beta_v * value_loss + weights.beta_reg * entropy_term;
        if !total.is_finite() {
            return Err(Error::NonFinite(format!("non-finite loss {total}")));
        }
        Ok((LossBreakdown { policy_loss, value_loss, entropy_term, total, td_errors, advantages }, grads))
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let dump = |l: &Layer| LayerData {
            rows: l.w.nrows(),
            cols: l.w.ncols(),
            w: l.w.iter().copied().collect(),
            b: l.b.to_vec(),
        };
        Checkpoint {
            version: CHECKPOINT_VERSION,
            config: self.config.clone(),
            layers: self.params.layers().map(dump).collect(),
        }
    }

    pub fn from_checkpoint(cp: &Checkpoint) -> Result<Self> {
        if cp.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint version {} (expected {CHECKPOINT_VERSION})",
                cp.version
            )));
        }
        cp.config.validate().map_err(|e| Error::Checkpoint(e.to_string()))?;
        let mut rng = rand::rngs::mock::StepRng::new(0, 0);
        let mut net = Self::init(cp.config.clone(), &mut rng)
            .map_err(|e| Error::Checkpoint(e.to_string()))?;
        let expected = net.params.layers().count();
        if cp.layers.len() != expected {
            return Err(Error::Checkpoint(format!(
                "checkpoint has {} layers, expected {expected}",
                cp.layers.len()
            )));
        }
        for (layer, data) in net.params.layers_mut().zip(&cp.layers) {
            if layer.w.nrows() != data.rows
                || layer.w.ncols() != data.cols
                || data.w.len() != data.rows * data.cols
                || data.b.len() != data.rows
            {
                return Err(Error::Checkpoint(format!(
                    "layer shape mismatch: stored {}x{} ({} weights, {} biases)",
                    data.rows,
                    data.cols,
                    data.w.len(),
                    data.b.len()
                )));
            }
            for v in data.w.iter().chain(data.b.iter()) {
                if !v.is_finite() {
                    return Err(Error::Checkpoint("non-finite parameter in checkpoint".into()));
                }
            }
            layer.w = Array2::from_shape_vec((data.rows, data.cols), data.w.clone())
                .expect("shape checked");
            layer.b = Array1::from(data.b.clone());
        }
        Ok(net)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string(&self.to_checkpoint())
            .map_err(|e| Error::Checkpoint(e.to_string()))?;
        std::fs::write(path, json)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let json = std::fs::read_to_string(path)?;
        let cp: Checkpoint =
            serde_json::from_str(&json).map_err(|e| Error::Checkpoint(e.to_string()))?;
        Self::from_checkpoint(&cp)
    }
}

/// `grad.w += g_out (outer) input; grad.b += g_out`.
fn accumulate_affine(grad: &mut Layer, g_out: &Array1<f64>, input: &Array1<f64>) {
    let outer = g_out
        .view()
        .insert_axis(Axis(1))
        .dot(&input.view().insert_axis(Axis(0)));
    grad.w += &outer;
    grad.b += g_out;
}

/// On-disk network representation: row-major weights per layer, trunk
/// first, then the policy heads, then the value head.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub config: NetConfig,
    pub layers: Vec<LayerData>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LayerData {
    pub rows: usize,
    pub cols: usize,
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

/// Gradient descent with classical momentum and global-norm clipping.
#[derive(Debug, Clone)]
pub struct Optimizer {
    pub learning_rate: f64,
    pub momentum: f64,
    pub clip_norm: f64,
    /// Decoupled shrink toward zero applied at each step, outside the loss.
    /// Unlike the entropy term, whose gradient vanishes once a head
    /// saturates, this keeps logit gaps bounded so a better action found
    /// late can still overtake the incumbent.
    pub weight_decay: f64,
    velocity: ParamSet,
}

impl Optimizer {
    pub fn new(learning_rate: f64, momentum: f64, clip_norm: f64, net: &ActorCriticNet) -> Self {
        Self {
            learning_rate,
            momentum,
            clip_norm,
            weight_decay: 0.0,
            velocity: net.params.zeros_like(),
        }
    }

    /// Clip the gradient to `clip_norm`, fold it into the velocity, and
    /// apply the velocity and the decay to the parameters.
    pub fn step(&mut self, net: &mut ActorCriticNet, grads: &ParamSet) {
        let norm = grads.global_norm();
        let scale = if norm > self.clip_norm && norm > 0.0 { self.clip_norm / norm } else { 1.0 };
        self.velocity.scale(self.momentum);
        self.velocity.add_scaled(grads, -self.learning_rate * scale);
        if self.weight_decay > 0.0 {
            net.params.scale(1.0 - self.learning_rate * self.weight_decay);
        }
        net.params.add_scaled(&self.velocity, 1.0);
    }

    pub fn reset(&mut self) {
        self.velocity.scale(0.0);
    }
}
