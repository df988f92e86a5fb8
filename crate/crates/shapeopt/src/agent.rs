//! Proximal policy optimization with a diagonal Gaussian policy, from scratch.
//!
//! Policy and value networks are fixed two-hidden-layer tanh MLPs over flat
//! f64 buffers with hand-written backpropagation; no autodiff. The policy
//! mean is tanh-bounded to (-1,1) and the log-std vector is state
//! independent. Episodes have horizon one, so the generalized advantage
//! estimator collapses to `r - V(s)` for every (gamma, lambda); advantages
//! are normalized per batch. The clipped surrogate, entropy bonus, and value
//! loss are maximized jointly by minibatch gradient ascent with global
//! gradient-norm clipping.
//!
//! Sampled actions are clamped to [-1,1] for the environment, but the batch
//! keeps the pre-clamp draw and its log-density: recomputing the density of
//! the stored draw under unchanged parameters reproduces the stored value
//! bit for bit, so importance ratios start every update at exactly one.

use std::io::{self, Read};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

/// Log-std clamp bounds, applied after every gradient step.
pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 2.0;
/// Batches whose advantage spread is below this (relative to the mean
/// magnitude) normalize to all zeros instead of amplifying rounding noise.
const ADV_STD_FLOOR: f64 = 1e-12;
/// ln(2*pi), for Gaussian log-densities and entropies.
const LN_2PI: f64 = 1.8378770664093453;

const CHECKPOINT_MAGIC: &[u8; 8] = b"SHAPEOPT";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
#[error("non-finite loss (policy={policy}, entropy={entropy}, value_mse={value_mse})")]
pub struct NonFiniteLoss {
    pub policy: f64,
    pub entropy: f64,
    pub value_mse: f64,
}

/// Two-hidden-layer perceptron over flat row-major buffers. Doubles as its
/// own gradient container (same shapes, zero-initialized).
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub in_dim: usize,
    pub hidden: usize,
    pub out_dim: usize,
    /// hidden x in_dim
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    /// hidden x hidden
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
    /// out_dim x hidden
    pub w3: Vec<f64>,
    pub b3: Vec<f64>,
}

/// Forward-pass activations kept for backpropagation. `out` is the raw
/// (pre-activation) output layer; heads apply their own nonlinearity.
#[derive(Debug, Clone)]
pub struct Trace {
    x: Vec<f64>,
    a1: Vec<f64>,
    a2: Vec<f64>,
    out: Vec<f64>,
}

impl Trace {
    pub fn new(net: &Mlp) -> Self {
        Self {
            x: vec![0.0; net.in_dim],
            a1: vec![0.0; net.hidden],
            a2: vec![0.0; net.hidden],
            out: vec![0.0; net.out_dim],
        }
    }
}

impl Mlp {
    pub fn zeros(in_dim: usize, hidden: usize, out_dim: usize) -> Self {
        Self {
            in_dim,
            hidden,
            out_dim,
            w1: vec![0.0; hidden * in_dim],
            b1: vec![0.0; hidden],
            w2: vec![0.0; hidden * hidden],
            b2: vec![0.0; hidden],
            w3: vec![0.0; out_dim * hidden],
            b3: vec![0.0; out_dim],
        }
    }

    /// Scaled-Gaussian init: hidden layers use gain sqrt(2)/sqrt(fan_in),
    /// the output layer is shrunk by `out_scale` so the initial policy sits
    /// near the centered shape.
    pub fn random<R: Rng>(in_dim: usize, hidden: usize, out_dim: usize, out_scale: f64, rng: &mut R) -> Self {
        let mut net = Self::zeros(in_dim, hidden, out_dim);
        let gain = 2.0f64.sqrt();
        let fill = |w: &mut [f64], fan_in: usize, scale: f64, rng: &mut R| {
            let s = scale * gain / (fan_in as f64).sqrt();
            for v in w.iter_mut() {
                let z: f64 = rng.sample(StandardNormal);
                *v = s * z;
            }
        };
        fill(&mut net.w1, in_dim, 1.0, rng);
        fill(&mut net.w2, hidden, 1.0, rng);
        fill(&mut net.w3, hidden, out_scale, rng);
        net
    }

    /// Writes activations into `t`; `t.out` is pre-activation.
    pub fn forward(&self, x: &[f64], t: &mut Trace) {
        assert_eq!(x.len(), self.in_dim);
        t.x.copy_from_slice(x);
        for h in 0..self.hidden {
            let row = &self.w1[h * self.in_dim..(h + 1) * self.in_dim];
            let mut z = self.b1[h];
            for (w, xv) in row.iter().zip(x) {
                z += w * xv;
            }
            t.a1[h] = z.tanh();
        }
        for h in 0..self.hidden {
            let row = &self.w2[h * self.hidden..(h + 1) * self.hidden];
            let mut z = self.b2[h];
            for (w, a) in row.iter().zip(&t.a1) {
                z += w * a;
            }
            t.a2[h] = z.tanh();
        }
        for o in 0..self.out_dim {
            let row = &self.w3[o * self.hidden..(o + 1) * self.hidden];
            let mut z = self.b3[o];
            for (w, a) in row.iter().zip(&t.a2) {
                z += w * a;
            }
            t.out[o] = z;
        }
    }

    /// Accumulates parameter gradients into `g` given dJ/d(out) for the
    /// forward pass recorded in `t`.
    pub fn backward(&self, t: &Trace, d_out: &[f64], g: &mut Mlp) {
        assert_eq!(d_out.len(), self.out_dim);
        let mut da2 = vec![0.0; self.hidden];
        for o in 0..self.out_dim {
            let d = d_out[o];
            let row = &self.w3[o * self.hidden..(o + 1) * self.hidden];
            let grow = &mut g.w3[o * self.hidden..(o + 1) * self.hidden];
            for h in 0..self.hidden {
                grow[h] += d * t.a2[h];
                da2[h] += d * row[h];
            }
            g.b3[o] += d;
        }
        let mut da1 = vec![0.0; self.hidden];
        for h in 0..self.hidden {
            let dz = da2[h] * (1.0 - t.a2[h] * t.a2[h]);
            let row = &self.w2[h * self.hidden..(h + 1) * self.hidden];
            let grow = &mut g.w2[h * self.hidden..(h + 1) * self.hidden];
            for k in 0..self.hidden {
                grow[k] += dz * t.a1[k];
                da1[k] += dz * row[k];
            }
            g.b2[h] += dz;
        }
        for h in 0..self.hidden {
            let dz = da1[h] * (1.0 - t.a1[h] * t.a1[h]);
            let grow = &mut g.w1[h * self.in_dim..(h + 1) * self.in_dim];
            for k in 0..self.in_dim {
                grow[k] += dz * t.x[k];
            }
            g.b1[h] += dz;
        }
    }

    fn buffers(&self) -> [&[f64]; 6] {
        [&self.w1, &self.b1, &self.w2, &self.b2, &self.w3, &self.b3]
    }

    fn buffers_mut(&mut self) -> [&mut Vec<f64>; 6] {
        [
            &mut self.w1,
            &mut self.b1,
            &mut self.w2,
            &mut self.b2,
            &mut self.w3,
            &mut self.b3,
        ]
    }
}

/// Gaussian-policy and value-network parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    pub obs_dim: usize,
    pub act_dim: usize,
    pub hidden: usize,
    pub policy: Mlp,
    pub value: Mlp,
    /// State-independent log standard deviations, length act_dim.
    pub log_std: Vec<f64>,
}

impl PolicyParams {
    pub fn init<R: Rng>(obs_dim: usize, act_dim: usize, hidden: usize, rng: &mut R) -> Self {
        Self {
            obs_dim,
            act_dim,
            hidden,
            policy: Mlp::random(obs_dim, hidden, act_dim, 0.01, rng),
            value: Mlp::random(obs_dim, hidden, 1, 0.01, rng),
            log_std: vec![-0.5; act_dim],
        }
    }

    pub fn zeros(obs_dim: usize, act_dim: usize, hidden: usize) -> Self {
        Self {
            obs_dim,
            act_dim,
            hidden,
            policy: Mlp::zeros(obs_dim, hidden, act_dim),
            value: Mlp::zeros(obs_dim, hidden, 1),
            log_std: vec![-0.5; act_dim],
        }
    }

    /// Deterministic policy head: tanh-bounded mean and std = exp(log_std).
    pub fn forward_policy(&self, obs: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let mut t = Trace::new(&self.policy);
        self.policy.forward(obs, &mut t);
        let mean: Vec<f64> = t.out.iter().map(|z| z.tanh()).collect();
        let std: Vec<f64> = self.log_std.iter().map(|l| l.exp()).collect();
        (mean, std)
    }

    /// Scalar state value (linear output head).
    pub fn value_of(&self, obs: &[f64]) -> f64 {
        let mut t = Trace::new(&self.value);
        self.value.forward(obs, &mut t);
        t.out[0]
    }

    fn all_buffers(&self) -> Vec<&[f64]> {
        let mut v: Vec<&[f64]> = Vec::with_capacity(13);
        v.extend(self.policy.buffers());
        v.extend(self.value.buffers());
        v.push(&self.log_std);
        v
    }

    /// theta += scale * grad, then re-clamp the log-std vector.
    fn ascend(&mut self, scale: f64, g: &ParamGrads) {
        for (dst, src) in self.policy.buffers_mut().into_iter().zip(g.policy.buffers()) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += scale * s;
            }
        }
        for (dst, src) in self.value.buffers_mut().into_iter().zip(g.value.buffers()) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += scale * s;
            }
        }
        for (d, s) in self.log_std.iter_mut().zip(&g.log_std) {
            *d = (*d + scale * s).clamp(LOG_STD_MIN, LOG_STD_MAX);
        }
    }
}

/// Gradients of the ascent objective, same shapes as the parameters.
pub struct ParamGrads {
    pub policy: Mlp,
    pub value: Mlp,
    pub log_std: Vec<f64>,
}

impl ParamGrads {
    fn zeros(p: &PolicyParams) -> Self {
        Self {
            policy: Mlp::zeros(p.obs_dim, p.hidden, p.act_dim),
            value: Mlp::zeros(p.obs_dim, p.hidden, 1),
            log_std: vec![0.0; p.act_dim],
        }
    }

    fn global_norm(&self) -> f64 {
        let mut s = 0.0;
        for buf in self
            .policy
            .buffers()
            .into_iter()
            .chain(self.value.buffers())
            .chain([self.log_std.as_slice()])
        {
            for v in buf {
                s += v * v;
            }
        }
        s.sqrt()
    }
}

/// Log-density of `x` under the diagonal Gaussian (mean, exp(log_std)).
/// Shared by sampling and the surrogate so ratios at the behavior
/// parameters are bitwise one.
pub fn gaussian_log_prob(mean: &[f64], log_std: &[f64], x: &[f64]) -> f64 {
    let mut lp = 0.0;
    for k in 0..x.len() {
        let d = (x[k] - mean[k]) / log_std[k].exp();
        lp += -0.5 * d * d - log_std[k] - 0.5 * LN_2PI;
    }
    lp
}

/// One sampled action: `action` is clamped to [-1,1] for the environment,
/// `raw` is the pre-clamp Gaussian draw the log-density refers to.
#[derive(Debug, Clone)]
pub struct ActionSample {
    pub action: Vec<f64>,
    pub raw: Vec<f64>,
    pub log_prob: f64,
}

pub fn sample_action<R: Rng>(params: &PolicyParams, obs: &[f64], rng: &mut R) -> ActionSample {
    let (mean, std) = params.forward_policy(obs);
    let raw: Vec<f64> = mean
        .iter()
        .zip(&std)
        .map(|(m, s)| {
            let z: f64 = rng.sample(StandardNormal);
            m + s * z
        })
        .collect();
    let action: Vec<f64> = raw.iter().map(|v| v.clamp(-1.0, 1.0)).collect();
    let log_prob = gaussian_log_prob(&mean, &params.log_std, &raw);
    ActionSample { action, raw, log_prob }
}

/// One single-step episode per row; `raw_actions` hold pre-clamp draws and
/// `log_probs` their densities under the parameters that generated them.
#[derive(Debug, Clone, Default)]
pub struct RolloutBatch {
    pub obs: Vec<Vec<f64>>,
    pub raw_actions: Vec<Vec<f64>>,
    pub log_probs: Vec<f64>,
    pub rewards: Vec<f64>,
    pub values: Vec<f64>,
}

impl RolloutBatch {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn push(&mut self, obs: Vec<f64>, raw_action: Vec<f64>, log_prob: f64, reward: f64, value: f64) {
        self.obs.push(obs);
        self.raw_actions.push(raw_action);
        self.log_probs.push(log_prob);
        self.rewards.push(reward);
        self.values.push(value);
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PpoConfig {
    pub clip_eps: f64,
    pub entropy_coef: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub minibatches: usize,
    /// Discount; inert at horizon one, kept for forward compatibility.
    pub gamma: f64,
    /// GAE trace decay; inert at horizon one.
    pub lambda: f64,
    pub grad_clip: f64,
    pub hidden: usize,
    pub obs_dim: usize,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            clip_eps: 0.2,
            entropy_coef: 0.01,
            learning_rate: 1e-3,
            batch_size: 50,
            epochs: 8,
            minibatches: 4,
            gamma: 0.99,
            lambda: 0.95,
            grad_clip: 0.5,
            hidden: 512,
            obs_dim: 1,
        }
    }
}

/// Per-batch advantages. Each episode is a single terminal step, so GAE's
/// bootstrap and trace terms vanish and the estimate is `r - V(s)` for
/// every (gamma, lambda); the batch is then normalized to zero mean and
/// unit (population) variance, with a floor that maps numerically constant
/// batches to all zeros.
pub fn advantage(batch: &RolloutBatch, params: &PolicyParams, _cfg: &PpoConfig) -> Vec<f64> {
    let mut adv: Vec<f64> = (0..batch.len())
        .map(|i| batch.rewards[i] - params.value_of(&batch.obs[i]))
        .collect();
    normalize_advantages(&mut adv);
    adv
}

fn normalize_advantages(adv: &mut [f64]) {
    if adv.is_empty() {
        return;
    }
    let n = adv.len() as f64;
    let mean = adv.iter().sum::<f64>() / n;
    let var = adv.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    if std <= ADV_STD_FLOOR * mean.abs().max(1.0) {
        adv.iter_mut().for_each(|a| *a = 0.0);
    } else {
        adv.iter_mut().for_each(|a| *a = (*a - mean) / std);
    }
}

/// The clip target g(eps, A): the best objective value the clipped ratio is
/// allowed to claim for an advantage of either sign.
pub fn clip_target(eps: f64, a: f64) -> f64 {
    if a >= 0.0 {
        (1.0 + eps) * a
    } else {
        (1.0 - eps) * a
    }
}

/// Loss components of one minibatch evaluation, signed for ascent: the
/// maximized total is `policy + entropy - 0.5 * value_mse`.
#[derive(Debug, Clone, Copy)]
pub struct LossParts {
    pub total: f64,
    pub policy: f64,
    pub entropy: f64,
    pub value_mse: f64,
}

/// Clipped-surrogate objective and its analytic gradient over the episodes
/// selected by `indices`. `advantages` spans the full batch (computed once
/// per update); `batch.log_probs` are the behavior-policy densities, which
/// is where the old parameters enter.
pub fn surrogate_loss(
    params: &PolicyParams,
    batch: &RolloutBatch,
    indices: &[usize],
    advantages: &[f64],
    cfg: &PpoConfig,
) -> Result<(LossParts, ParamGrads), NonFiniteLoss> {
    assert_eq!(advantages.len(), batch.len());
    assert!(!indices.is_empty());
    let m = indices.len() as f64;
    let mut grads = ParamGrads::zeros(params);
    let mut tp = Trace::new(&params.policy);
    let mut tv = Trace::new(&params.value);
    let mut policy_sum = 0.0;
    let mut value_sum = 0.0;
    let mut mean = vec![0.0; params.act_dim];
    let mut dz3 = vec![0.0; params.act_dim];
    for &i in indices {
        let obs = &batch.obs[i];
        let raw = &batch.raw_actions[i];
        let a = advantages[i];

        params.policy.forward(obs, &mut tp);
        for (mk, z) in mean.iter_mut().zip(&tp.out) {
            *mk = z.tanh();
        }
        let lp = gaussian_log_prob(&mean, &params.log_std, raw);
        let ratio = (lp - batch.log_probs[i]).exp();
        let unclipped = ratio * a;
        let clipped = clip_target(cfg.clip_eps, a);
        policy_sum += unclipped.min(clipped);
        // d(ratio * a)/d(lp) = ratio * a; the clipped branch is constant in
        // theta. Ties keep the ratio branch, which matters only at a = 0
        // where the gradient vanishes anyway.
        if unclipped <= clipped {
            let dlp = unclipped / m;
            for k in 0..params.act_dim {
                let s = params.log_std[k].exp();
                let d = (raw[k] - mean[k]) / s;
                // dlp/dmean = d/s, dmean/dz3 = 1 - mean^2, dlp/dlog_std = d^2 - 1.
                dz3[k] = dlp * (d / s) * (1.0 - mean[k] * mean[k]);
                grads.log_std[k] += dlp * (d * d - 1.0);
            }
            params.policy.backward(&tp, &dz3, &mut grads.policy);
        }

        params.value.forward(obs, &mut tv);
        let err = tv.out[0] - batch.rewards[i];
        value_sum += err * err;
        // Ascent on -0.5 * MSE.
        params.value.backward(&tv, &[-err / m], &mut grads.value);
    }
    let policy = policy_sum / m;
    let value_mse = value_sum / m;
    // Differential entropy of the diagonal Gaussian; state independent, so
    // it enters the objective once, not per sample.
    let entropy_h: f64 =
        params.log_std.iter().sum::<f64>() + params.act_dim as f64 * 0.5 * (1.0 + LN_2PI);
    let entropy = cfg.entropy_coef * entropy_h;
    for g in grads.log_std.iter_mut() {
        *g += cfg.entropy_coef;
    }
    let total = policy + entropy - 0.5 * value_mse;
    if !total.is_finite() {
        return Err(NonFiniteLoss {
            policy,
            entropy,
            value_mse,
        });
    }
    Ok((
        LossParts {
            total,
            policy,
            entropy,
            value_mse,
        },
        grads,
    ))
}

/// Averaged loss components over all minibatch steps of one update.
#[derive(Debug, Clone, Copy)]
pub struct UpdateStats {
    pub loss: LossParts,
    pub grad_norm: f64,
}

/// One PPO update: advantages once from the entry parameters, then
/// `epochs` shuffled passes split into `minibatches` gradient-ascent steps
/// with global-norm clipping. The behavior snapshot is implicit in the
/// batch's stored log-densities.
pub fn update<R: Rng>(
    params: &mut PolicyParams,
    batch: &RolloutBatch,
    cfg: &PpoConfig,
    rng: &mut R,
) -> Result<UpdateStats, NonFiniteLoss> {
    assert!(!batch.is_empty());
    assert!(cfg.clip_eps > 0.0 && cfg.clip_eps < 1.0);
    assert!(cfg.entropy_coef >= 0.0);
    let advantages = advantage(batch, params, cfg);
    let mut order: Vec<usize> = (0..batch.len()).collect();
    let chunk = batch.len().div_ceil(cfg.minibatches.max(1));
    let mut steps = 0.0;
    let mut sum = LossParts {
        total: 0.0,
        policy: 0.0,
        entropy: 0.0,
        value_mse: 0.0,
    };
    let mut norm_sum = 0.0;
    for _ in 0..cfg.epochs {
        order.shuffle(rng);
        for indices in order.chunks(chunk) {
            let (parts, grads) = surrogate_loss(params, batch, indices, &advantages, cfg)?;
            let norm = grads.global_norm();
            let scale = if norm > cfg.grad_clip {
                cfg.grad_clip / norm
            } else {
                1.0
            };
            params.ascend(cfg.learning_rate * scale, &grads);
            sum.total += parts.total;
            sum.policy += parts.policy;
            sum.entropy += parts.entropy;
            sum.value_mse += parts.value_mse;
            norm_sum += norm;
            steps += 1.0;
        }
    }
    Ok(UpdateStats {
        loss: LossParts {
            total: sum.total / steps,
            policy: sum.policy / steps,
            entropy: sum.entropy / steps,
            value_mse: sum.value_mse / steps,
        },
        grad_norm: norm_sum / steps,
    })
}

impl PolicyParams {
    /// Versioned binary checkpoint: magic, version, dims, then every
    /// parameter buffer as little-endian f64. Round-trips bit-exactly.
    pub fn save(&self, path: &Path) -> io::Result<()> {
        let mut buf: Vec<u8> = Vec::new();
        buf.extend_from_slice(CHECKPOINT_MAGIC);
        buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        for dim in [self.obs_dim, self.act_dim, self.hidden] {
            buf.extend_from_slice(&(dim as u32).to_le_bytes());
        }
        for buffer in self.all_buffers() {
            for v in buffer {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        std::fs::write(path, buf)
    }

    pub fn load(path: &Path) -> io::Result<Self> {
        let mut file = std::fs::File::open(path)?;
        let mut header = [0u8; 8 + 4 + 12];
        file.read_exact(&mut header)?;
        let bad = |msg: &str| io::Error::new(io::ErrorKind::InvalidData, msg.to_string());
        if &header[..8] != CHECKPOINT_MAGIC {
            return Err(bad("bad checkpoint magic"));
        }
        let word = |o: usize| u32::from_le_bytes(header[o..o + 4].try_into().unwrap());
        if word(8) != CHECKPOINT_VERSION {
            return Err(bad("unsupported checkpoint version"));
        }
        let (obs_dim, act_dim, hidden) = (word(12) as usize, word(16) as usize, word(20) as usize);
        if obs_dim == 0 || act_dim == 0 || hidden == 0 {
            return Err(bad("degenerate checkpoint dimensions"));
        }
        let mut params = PolicyParams::zeros(obs_dim, act_dim, hidden);
        let mut rest = Vec::new();
        file.read_to_end(&mut rest)?;
        let mut filled: Vec<&mut Vec<f64>> = Vec::with_capacity(13);
        filled.extend(params.policy.buffers_mut());
        filled.extend(params.value.buffers_mut());
        filled.push(&mut params.log_std);
        let expected: usize = filled.iter().map(|b| b.len() * 8).sum();
        if rest.len() != expected {
            return Err(bad("checkpoint payload length mismatch"));
        }
        let mut off = 0;
        for buffer in filled {
            for v in buffer.iter_mut() {
                *v = f64::from_le_bytes(rest[off..off + 8].try_into().unwrap());
                off += 8;
            }
        }
        Ok(params)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_params(seed: u64) -> PolicyParams {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = PolicyParams::init(1, 3, 8, &mut rng);
        // Spread the heads so clip branches and tanh curvature are exercised.
        for v in p.policy.w3.iter_mut().chain(p.value.w3.iter_mut()) {
            *v *= 40.0;
        }
        p.log_std = vec![-0.3, -0.8, 0.2];
        p
    }

    fn toy_batch(params: &PolicyParams, n: usize, seed: u64) -> RolloutBatch {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut batch = RolloutBatch::default();
        for i in 0..n {
            let obs = vec![1.0];
            let s = sample_action(params, &obs, &mut rng);
            let reward = (i as f64 * 0.7).sin() * 2.0;
            let value = params.value_of(&obs);
            batch.push(obs, s.raw, s.log_prob, reward, value);
        }
        batch
    }

    #[test]
    fn zero_net_has_zero_mean() {
        let p = PolicyParams::zeros(1, 6, 8);
        let (mean, std) = p.forward_policy(&[1.0]);
        assert!(mean.iter().all(|&m| m == 0.0));
        assert!(std.iter().all(|&s| s == (-0.5f64).exp()));
    }

    #[test]
    fn forward_policy_is_pure() {
        let p = small_params(3);
        let (m1, s1) = p.forward_policy(&[1.0]);
        let (m2, s2) = p.forward_policy(&[1.0]);
        assert_eq!(m1, m2);
        assert_eq!(s1, s2);
    }

    #[test]
    fn sampling_is_reproducible_and_bounded() {
        let p = small_params(4);
        let mut r1 = ChaCha8Rng::seed_from_u64(9);
        let mut r2 = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..50 {
            let a = sample_action(&p, &[1.0], &mut r1);
            let b = sample_action(&p, &[1.0], &mut r2);
            assert_eq!(a.raw, b.raw);
            assert_eq!(a.log_prob.to_bits(), b.log_prob.to_bits());
            assert!(a.action.iter().all(|v| (-1.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn vanishing_std_returns_the_mean_exactly() {
        let mut p = small_params(5);
        p.log_std = vec![-60.0; 3];
        let (mean, _) = p.forward_policy(&[1.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = sample_action(&p, &[1.0], &mut rng);
        assert_eq!(s.raw, mean);
    }

    #[test]
    fn sample_mean_matches_policy_mean() {
        // Narrow std keeps the clamp bias far below the Monte-Carlo band.
        let mut p = small_params(6);
        p.log_std = vec![-2.0; 3];
        let (mean, std) = p.forward_policy(&[1.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 100_000;
        let mut acc = vec![0.0; 3];
        for _ in 0..n {
            let s = sample_action(&p, &[1.0], &mut rng);
            for k in 0..3 {
                acc[k] += s.action[k];
            }
        }
        for k in 0..3 {
            let empirical = acc[k] / n as f64;
            let band = 3.0 * std[k] / (n as f64).sqrt();
            assert!(
                (empirical - mean[k].clamp(-1.0, 1.0)).abs() <= band,
                "component {k}: {empirical} vs {} (band {band})",
                mean[k]
            );
        }
    }

    #[test]
    fn advantage_is_reward_minus_value_then_normalized() {
        let p = PolicyParams::zeros(1, 2, 8);
        // Zero value net: V = 0, raw A = r.
        let mut batch = RolloutBatch::default();
        for r in [0.0, 1.0, 2.0] {
            batch.push(vec![1.0], vec![0.0, 0.0], 0.0, r, 0.0);
        }
        let adv = advantage(&batch, &p, &PpoConfig::default());
        let s = (2.0f64 / 3.0).sqrt();
        assert_relative_eq!(adv[0], -1.0 / s, epsilon = 1e-12);
        assert_relative_eq!(adv[1], 0.0, epsilon = 1e-12);
        assert_relative_eq!(adv[2], 1.0 / s, epsilon = 1e-12);
        assert_relative_eq!(adv[2], 1.224744871391589, epsilon = 1e-12);
    }

    #[test]
    fn equal_rewards_normalize_to_zeros() {
        let p = small_params(7);
        let mut batch = RolloutBatch::default();
        for _ in 0..5 {
            batch.push(vec![1.0], vec![0.1, 0.1, 0.1], -0.4, 0.7, 0.0);
        }
        let adv = advantage(&batch, &p, &PpoConfig::default());
        assert!(adv.iter().all(|&a| a == 0.0), "{adv:?}");
    }

    #[test]
    fn gae_is_invariant_to_gamma_lambda_at_horizon_one() {
        let p = small_params(8);
        let batch = toy_batch(&p, 12, 21);
        let mut reference: Option<Vec<f64>> = None;
        for gamma in [0.0, 0.5, 0.99] {
            for lambda in [0.0, 0.9, 1.0] {
                let cfg = PpoConfig {
                    gamma,
                    lambda,
                    ..PpoConfig::default()
                };
                let adv = advantage(&batch, &p, &cfg);
                match &reference {
                    None => reference = Some(adv),
                    Some(r) => assert_eq!(&adv, r),
                }
            }
        }
    }

    #[test]
    fn clip_target_matches_definition() {
        assert_eq!(clip_target(0.2, 2.0), 2.4);
        assert_eq!(clip_target(0.2, -1.0), -0.8);
        assert_eq!(clip_target(0.37, 0.0), 0.0);
        for i in 0..100 {
            let eps = 0.01 + 0.009 * i as f64;
            let a = (i as f64 - 50.0) * 0.13;
            let expect = if a >= 0.0 { (1.0 + eps) * a } else { (1.0 - eps) * a };
            assert_eq!(clip_target(eps, a), expect);
        }
    }

    #[test]
    fn surrogate_identity_at_behavior_params() {
        let p = small_params(9);
        let batch = toy_batch(&p, 50, 33);
        let cfg = PpoConfig::default();
        let adv = advantage(&batch, &p, &cfg);
        let indices: Vec<usize> = (0..batch.len()).collect();
        let (parts, _) = surrogate_loss(&p, &batch, &indices, &adv, &cfg).unwrap();
        // Ratios are exactly one, so the policy term is the advantage mean,
        // which normalization drives to zero.
        assert!(parts.policy.abs() <= 1e-12, "policy term {}", parts.policy);
    }

    #[test]
    fn per_sample_objective_obeys_the_clip_bound() {
        let p = small_params(10);
        let mut moved = p.clone();
        // Shift parameters so ratios leave 1.
        for v in moved.policy.w3.iter_mut() {
            *v += 0.02;
        }
        let batch = toy_batch(&p, 40, 55);
        let cfg = PpoConfig::default();
        let adv = advantage(&batch, &p, &cfg);
        for i in 0..batch.len() {
            let (mean, _) = moved.forward_policy(&batch.obs[i]);
            let lp = gaussian_log_prob(&mean, &moved.log_std, &batch.raw_actions[i]);
            let ratio = (lp - batch.log_probs[i]).exp();
            let (parts, _) = surrogate_loss(&moved, &batch, &[i], &adv, &cfg).unwrap();
            let expect = (ratio * adv[i]).min(clip_target(cfg.clip_eps, adv[i]));
            assert_relative_eq!(parts.policy, expect, epsilon = 1e-12);
            assert!(parts.policy <= (ratio * adv[i]).max(clip_target(cfg.clip_eps, adv[i])) + 1e-15);
        }
    }

    #[test]
    fn analytic_gradient_matches_finite_differences() {
        let p = small_params(11);
        let mut moved = p.clone();
        for v in moved.policy.w3.iter_mut() {
            *v += 0.015;
        }
        for v in moved.value.w2.iter_mut() {
            *v -= 0.01;
        }
        let batch = toy_batch(&p, 10, 77);
        let cfg = PpoConfig::default();
        let adv = advantage(&batch, &p, &cfg);
        let indices: Vec<usize> = (0..batch.len()).collect();
        let (_, grads) = surrogate_loss(&moved, &batch, &indices, &adv, &cfg).unwrap();

        let eval = |params: &PolicyParams| {
            surrogate_loss(params, &batch, &indices, &adv, &cfg).unwrap().0.total
        };
        let h = 1e-6;
        let mut checked = 0usize;
        let nets: [(fn(&mut PolicyParams) -> &mut Mlp, fn(&ParamGrads) -> &Mlp); 2] = [
            (|p| &mut p.policy, |g| &g.policy),
            (|p| &mut p.value, |g| &g.value),
        ];
        for (get_net, get_grad) in nets {
            for b in 0..6 {
                let len = get_net(&mut moved.clone()).buffers_mut()[b].len();
                // Sample a strided subset; exhaustive over biases, sparse over weights.
                let stride = (len / 17).max(1);
                for idx in (0..len).step_by(stride) {
                    let mut plus = moved.clone();
                    get_net(&mut plus).buffers_mut()[b][idx] += h;
                    let mut minus = moved.clone();
                    get_net(&mut minus).buffers_mut()[b][idx] -= h;
                    let fd = (eval(&plus) - eval(&minus)) / (2.0 * h);
                    let an = get_grad(&grads).buffers()[b][idx];
                    let scale = an.abs().max(fd.abs()).max(1e-6);
                    assert!(
                        (fd - an).abs() / scale <= 1e-4,
                        "buffer {b} idx {idx}: fd {fd} vs analytic {an}"
                    );
                    checked += 1;
                }
            }
        }
        for k in 0..moved.act_dim {
            let mut plus = moved.clone();
            plus.log_std[k] += h;
            let mut minus = moved.clone();
            minus.log_std[k] -= h;
            let fd = (eval(&plus) - eval(&minus)) / (2.0 * h);
            let an = grads.log_std[k];
            let scale = an.abs().max(fd.abs()).max(1e-6);
            assert!((fd - an).abs() / scale <= 1e-4, "log_std {k}: fd {fd} vs {an}");
            checked += 1;
        }
        assert!(checked > 100, "gradient check covered only {checked} parameters");
    }

    #[test]
    fn zero_advantages_leave_the_policy_mean_untouched() {
        let mut p = small_params(12);
        let policy_before = p.policy.clone();
        let value_before = p.value.clone();
        let log_std_before = p.log_std.clone();
        let mut batch = RolloutBatch::default();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..8 {
            let s = sample_action(&p, &[1.0], &mut rng);
            batch.push(vec![1.0], s.raw, s.log_prob, 1.25, p.value_of(&[1.0]));
        }
        let cfg = PpoConfig {
            epochs: 3,
            minibatches: 2,
            ..PpoConfig::default()
        };
        update(&mut p, &batch, &cfg, &mut rng).unwrap();
        assert_eq!(p.policy, policy_before);
        assert_ne!(p.log_std, log_std_before); // entropy still pushes log-std
        assert_ne!(p.value, value_before); // the value net still regresses r
    }

    #[test]
    fn update_is_deterministic() {
        let run = || {
            let mut p = small_params(13);
            let batch = toy_batch(&p, 20, 99);
            let mut rng = ChaCha8Rng::seed_from_u64(7);
            let cfg = PpoConfig::default();
            for _ in 0..3 {
                update(&mut p, &batch, &cfg, &mut rng).unwrap();
            }
            p
        };
        let a = run();
        let b = run();
        assert_eq!(a, b);
        let bits_equal = a
            .all_buffers()
            .into_iter()
            .zip(b.all_buffers())
            .all(|(x, y)| x.iter().zip(y).all(|(u, v)| u.to_bits() == v.to_bits()));
        assert!(bits_equal);
    }

    #[test]
    fn log_std_stays_clamped() {
        let mut p = small_params(14);
        p.log_std = vec![LOG_STD_MAX - 1e-4; 3];
        let batch = toy_batch(&p, 16, 42);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let cfg = PpoConfig {
            learning_rate: 0.5,
            ..PpoConfig::default()
        };
        for _ in 0..5 {
            update(&mut p, &batch, &cfg, &mut rng).unwrap();
            assert!(p
                .log_std
                .iter()
                .all(|&l| (LOG_STD_MIN..=LOG_STD_MAX).contains(&l)));
        }
    }

    #[test]
    fn bandit_converges_to_the_known_optimum() {
        // 1-D bandit, reward -(a - 0.5)^2: the policy mean must find 0.5.
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut p = PolicyParams::init(1, 1, 16, &mut rng);
        let cfg = PpoConfig {
            batch_size: 50,
            hidden: 16,
            ..PpoConfig::default()
        };
        let mut converged_at = None;
        for u in 0..200 {
            let mut batch = RolloutBatch::default();
            for _ in 0..cfg.batch_size {
                let s = sample_action(&p, &[1.0], &mut rng);
                let a = s.action[0];
                let reward = -(a - 0.5) * (a - 0.5);
                let value = p.value_of(&[1.0]);
                batch.push(vec![1.0], s.raw, s.log_prob, reward, value);
            }
            update(&mut p, &batch, &cfg, &mut rng).unwrap();
            let (mean, _) = p.forward_policy(&[1.0]);
            if (mean[0] - 0.5).abs() <= 0.05 {
                converged_at = Some(u);
                break;
            }
        }
        let (mean, _) = p.forward_policy(&[1.0]);
        assert!(
            converged_at.is_some(),
            "policy mean {} after 200 updates",
            mean[0]
        );
    }

    #[test]
    fn checkpoint_round_trips_bit_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("params.ckpt");
        let p = small_params(15);
        p.save(&path).unwrap();
        let q = PolicyParams::load(&path).unwrap();
        assert_eq!((q.obs_dim, q.act_dim, q.hidden), (p.obs_dim, p.act_dim, p.hidden));
        let bits_equal = p
            .all_buffers()
            .into_iter()
            .zip(q.all_buffers())
            .all(|(x, y)| x.iter().zip(y).all(|(u, v)| u.to_bits() == v.to_bits()));
        assert!(bits_equal);
    }

    #[test]
    fn checkpoint_rejects_garbage() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.ckpt");
        std::fs::write(&path, b"not a checkpoint at all").unwrap();
        assert!(PolicyParams::load(&path).is_err());
        let p = small_params(16);
        p.save(&path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes.truncate(bytes.len() - 9);
        std::fs::write(&path, bytes).unwrap();
        assert!(PolicyParams::load(&path).is_err());
    }
}
