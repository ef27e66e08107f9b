//! Clipped group-relative policy optimization over a linear-softmax toy policy.

use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::codec::ActionDelta;
use crate::geometry::BBoxPx;
use crate::math;
use crate::reward::{group_advantages, RewardBreakdown, RewardError};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GrpoError {
    #[error("invalid grpo config: {0}")]
    InvalidConfig(&'static str),
    #[error("invalid bin grid: {0}")]
    InvalidGrid(&'static str),
    #[error("feature length {got} does not match policy input size {expected}")]
    FeatureMismatch { expected: usize, got: usize },
    #[error("parameter vector has length {got}, expected {expected}")]
    ParamMismatch { expected: usize, got: usize },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("empty batch")]
    EmptyBatch,
    #[error(transparent)]
    Reward(#[from] RewardError),
}

/// Evenly spaced integer action values `start, start + step, ...`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct BinGrid {
    pub start: i32,
    pub step: i32,
    pub count: usize,
}

impl BinGrid {
    pub fn new(start: i32, step: i32, count: usize) -> Result<Self, GrpoError> {
        let g = Self { start, step, count };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<(), GrpoError> {
        if self.step <= 0 {
            return Err(GrpoError::InvalidGrid("step must be positive"));
        }
        if self.count < 2 {
            return Err(GrpoError::InvalidGrid("need at least 2 bins"));
        }
        Ok(())
    }

    pub fn value(&self, bin: usize) -> i32 {
        self.start + self.step * bin as i32
    }

    /// Nearest bin to `v`, clamped to the grid.
    pub fn nearest(&self, v: f64) -> usize {
        let idx = math::round_half_away((v - self.start as f64) / self.step as f64);
        idx.clamp(0.0, (self.count - 1) as f64) as usize
    }

    pub fn default_angle() -> Self {
        Self {
            start: -30,
            step: 1,
            count: 61,
        }
    }

    pub fn default_zoom() -> Self {
        Self {
            start: 0,
            step: 10,
            count: 31,
        }
    }
}

/// Softmax over `grid.count` bins with logits `W [x; 1]`, `W` row-major.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PolicyHead {
    pub grid: BinGrid,
    pub n_features: usize,
    pub weights: Vec<f64>,
}

impl PolicyHead {
    pub fn zeros(grid: BinGrid, n_features: usize) -> Self {
        Self {
            grid,
            n_features,
            weights: vec![0.0; grid.count * (n_features + 1)],
        }
    }

    fn stride(&self) -> usize {
        self.n_features + 1
    }

    pub fn logits(&self, x: &[f64]) -> Vec<f64> {
        let s = self.stride();
        (0..self.grid.count)
            .map(|k| {
                let row = &self.weights[k * s..(k + 1) * s];
                row[..self.n_features].iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + row[self.n_features]
            })
            .collect()
    }

    pub fn log_probs(&self, x: &[f64]) -> Vec<f64> {
        let z = self.logits(x);
        let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + math::ln(z.iter().map(|v| math::exp(v - m)).sum::<f64>());
        z.iter().map(|v| v - lse).collect()
    }

    pub fn probs(&self, x: &[f64]) -> Vec<f64> {
        self.log_probs(x).into_iter().map(math::exp).collect()
    }
}

pub fn categorical_kl(logp: &[f64], logq: &[f64]) -> f64 {
    logp.iter()
        .zip(logq)
        .map(|(lp, lq)| math::exp(*lp) * (lp - lq))
        .sum::<f64>()
        .max(0.0)
}

fn sample_index<R: Rng>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

/// Independent pan, tilt and zoom heads sharing one feature vector.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ToyPolicy {
    pub heads: [PolicyHead; 3],
}

impl ToyPolicy {
    pub fn zeros(n_features: usize, grids: [BinGrid; 3]) -> Result<Self, GrpoError> {
        for g in &grids {
            g.validate()?;
        }
        Ok(Self {
            heads: grids.map(|g| PolicyHead::zeros(g, n_features)),
        })
    }

    pub fn with_default_grids(n_features: usize) -> Self {
        Self {
            heads: [
                BinGrid::default_angle(),
                BinGrid::default_angle(),
                BinGrid::default_zoom(),
            ]
            .map(|g| PolicyHead::zeros(g, n_features)),
        }
    }

    pub fn n_features(&self) -> usize {
        self.heads[0].n_features
    }

    pub fn check_features(&self, x: &[f64]) -> Result<(), GrpoError> {
        if x.len() != self.n_features() {
            return Err(GrpoError::FeatureMismatch {
                expected: self.n_features(),
                got: x.len(),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(GrpoError::NonFinite("features"));
        }
        Ok(())
    }

    pub fn log_probs(&self, x: &[f64]) -> [Vec<f64>; 3] {
        [
            self.heads[0].log_probs(x),
            self.heads[1].log_probs(x),
            self.heads[2].log_probs(x),
        ]
    }

    /// Joint log-probability of one bin per head.
    pub fn log_prob(&self, x: &[f64], bins: &[usize; 3]) -> f64 {
        self.heads.iter().zip(bins).map(|(h, b)| h.log_probs(x)[*b]).sum()
    }

    /// Sum over heads of the categorical KL to `other`.
    pub fn kl(&self, other: &ToyPolicy, x: &[f64]) -> f64 {
        self.heads
            .iter()
            .zip(&other.heads)
            .map(|(a, b)| categorical_kl(&a.log_probs(x), &b.log_probs(x)))
            .sum()
    }

    pub fn sample<R: Rng>(&self, x: &[f64], rng: &mut R) -> [usize; 3] {
        let p = self.heads.each_ref().map(|h| h.probs(x));
        [
            sample_index(&p[0], rng),
            sample_index(&p[1], rng),
            sample_index(&p[2], rng),
        ]
    }

    pub fn mode(&self, x: &[f64]) -> [usize; 3] {
        self.heads.each_ref().map(|h| argmax(&h.logits(x)))
    }

    pub fn action(&self, bins: &[usize; 3]) -> ActionDelta {
        ActionDelta::new(
            self.heads[0].grid.value(bins[0]),
            self.heads[1].grid.value(bins[1]),
            self.heads[2].grid.value(bins[2]),
        )
    }

    pub fn n_params(&self) -> usize {
        self.heads.iter().map(|h| h.weights.len()).sum()
    }

    pub fn params(&self) -> Vec<f64> {
        self.heads.iter().flat_map(|h| h.weights.iter().copied()).collect()
    }

    pub fn set_params(&mut self, p: &[f64]) -> Result<(), GrpoError> {
        if p.len() != self.n_params() {
            return Err(GrpoError::ParamMismatch {
                expected: self.n_params(),
                got: p.len(),
            });
        }
        let mut off = 0;
        for h in &mut self.heads {
            let n = h.weights.len();
            h.weights.copy_from_slice(&p[off..off + n]);
            off += n;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Outcome {
    pub bins: [usize; 3],
    pub action: ActionDelta,
    pub pred_bbox: BBoxPx,
    /// Log-probability under the current policy.
    pub logp: f64,
    pub logp_old: f64,
    pub logp_ref: f64,
    pub reward: f64,
    pub advantage: f64,
}

impl Outcome {
    pub fn ratio(&self) -> f64 {
        math::exp(self.logp - self.logp_old)
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RolloutGroup {
    pub prompt_id: usize,
    pub features: Vec<f64>,
    pub outcomes: Vec<Outcome>,
    /// KL of the current policy to the reference at this prompt.
    pub kl: f64,
}

impl RolloutGroup {
    /// Fills in advantages from the stored rewards.
    pub fn normalize(&mut self, guard: f64) -> Result<(), GrpoError> {
        let r: Vec<f64> = self.outcomes.iter().map(|o| o.reward).collect();
        for (o, a) in self.outcomes.iter_mut().zip(group_advantages(&r, guard)?) {
            o.advantage = a;
        }
        Ok(())
    }

    /// Recomputes current log-probs and KL for `policy`.
    pub fn refresh(&mut self, policy: &ToyPolicy, reference: &ToyPolicy) {
        for o in &mut self.outcomes {
            o.logp = policy.log_prob(&self.features, &o.bins);
        }
        self.kl = policy.kl(reference, &self.features);
    }

    pub fn mean_reward(&self) -> f64 {
        self.outcomes.iter().map(|o| o.reward).sum::<f64>() / self.outcomes.len() as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct GrpoConfig {
    pub clip_eps: f64,
    pub kl_weight: f64,
    pub group_size: usize,
    pub learning_rate: f64,
    pub std_guard: f64,
}

impl Default for GrpoConfig {
    fn default() -> Self {
        Self {
            clip_eps: 0.2,
            kl_weight: 0.04,
            group_size: 8,
            learning_rate: 4.0,
            std_guard: 1e-8,
        }
    }
}

impl GrpoConfig {
    pub fn validate(&self) -> Result<(), GrpoError> {
        if !(self.clip_eps > 0.0 && self.clip_eps < 1.0) {
            return Err(GrpoError::InvalidConfig("clip_eps must lie in (0, 1)"));
        }
        if !(self.kl_weight >= 0.0 && self.kl_weight.is_finite()) {
            return Err(GrpoError::InvalidConfig("kl_weight must be non-negative"));
        }
        if self.group_size < 2 {
            return Err(GrpoError::InvalidConfig("group_size must be at least 2"));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(GrpoError::InvalidConfig("learning_rate must be non-negative"));
        }
        if !(self.std_guard >= 0.0) {
            return Err(GrpoError::InvalidConfig("std_guard must be non-negative"));
        }
        Ok(())
    }
}

/// `min(s A, clip(s, 1-eps, 1+eps) A)`.
pub fn clipped_term(ratio: f64, advantage: f64, eps: f64) -> f64 {
    let clipped = ratio.clamp(1.0 - eps, 1.0 + eps);
    (ratio * advantage).min(clipped * advantage)
}

/// Derivative of [`clipped_term`] with respect to the log-probability.
/// Zero where the clipped branch is selected.
pub fn clipped_term_grad(ratio: f64, advantage: f64, eps: f64) -> f64 {
    let unclipped = if advantage > 0.0 {
        ratio <= 1.0 + eps
    } else if advantage < 0.0 {
        ratio >= 1.0 - eps
    } else {
        false
    };
    if unclipped {
        ratio * advantage
    } else {
        0.0
    }
}

fn is_clipped(ratio: f64, advantage: f64, eps: f64) -> bool {
    (advantage > 0.0 && ratio > 1.0 + eps) || (advantage < 0.0 && ratio < 1.0 - eps)
}

/// Group objective from the stored log-probs, advantages and KL.
pub fn grpo_objective(group: &RolloutGroup, cfg: &GrpoConfig) -> Result<f64, GrpoError> {
    if group.outcomes.is_empty() {
        return Err(GrpoError::EmptyBatch);
    }
    let mut acc = 0.0;
    for o in &group.outcomes {
        if !(o.logp.is_finite() && o.logp_old.is_finite() && o.logp_ref.is_finite()) {
            return Err(GrpoError::NonFinite("log-probabilities"));
        }
        acc += clipped_term(o.ratio(), o.advantage, cfg.clip_eps) - cfg.kl_weight * group.kl;
    }
    Ok(acc / group.outcomes.len() as f64)
}

/// Mean group objective with log-probs and KL recomputed under `policy`.
pub fn policy_objective(
    policy: &ToyPolicy,
    reference: &ToyPolicy,
    groups: &[RolloutGroup],
    cfg: &GrpoConfig,
) -> Result<f64, GrpoError> {
    if groups.is_empty() {
        return Err(GrpoError::EmptyBatch);
    }
    let mut total = 0.0;
    for g in groups {
        let mut g = g.clone();
        g.refresh(policy, reference);
        total += grpo_objective(&g, cfg)?;
    }
    Ok(total / groups.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub grad: Vec<f64>,
    pub objective: f64,
    pub mean_kl: f64,
    pub clip_fraction: f64,
}

/// Analytic gradient of [`policy_objective`] with respect to [`ToyPolicy::params`].
pub fn policy_gradient(
    policy: &ToyPolicy,
    reference: &ToyPolicy,
    groups: &[RolloutGroup],
    cfg: &GrpoConfig,
) -> Result<Gradient, GrpoError> {
    if groups.is_empty() {
        return Err(GrpoError::EmptyBatch);
    }
    let mut grad = vec![0.0; policy.n_params()];
    let (mut objective, mut kl_sum, mut clipped, mut n_out) = (0.0, 0.0, 0usize, 0usize);
    let gw = 1.0 / groups.len() as f64;
    for g in groups {
        if g.outcomes.is_empty() {
            return Err(GrpoError::EmptyBatch);
        }
        policy.check_features(&g.features)?;
        let x = &g.features;
        let lp = policy.log_probs(x);
        let lq = reference.log_probs(x);
        let n = g.outcomes.len() as f64;
        let mut group_obj = 0.0;
        let mut kl = 0.0;
        let mut offset = 0;
        // dJ/dz per head, accumulated then pushed through [x; 1].
        let mut dz: [Vec<f64>; 3] = lp.each_ref().map(|v| vec![0.0; v.len()]);
        for (h, head) in policy.heads.iter().enumerate() {
            let kl_h = categorical_kl(&lp[h], &lq[h]);
            kl += kl_h;
            for k in 0..head.grid.count {
                let p = math::exp(lp[h][k]);
                dz[h][k] -= cfg.kl_weight * p * ((lp[h][k] - lq[h][k]) - kl_h);
            }
        }
        for o in &g.outcomes {
            let logp: f64 = (0..3).map(|h| lp[h][o.bins[h]]).sum();
            if !(logp.is_finite() && o.logp_old.is_finite()) {
                return Err(GrpoError::NonFinite("log-probabilities"));
            }
            let s = math::exp(logp - o.logp_old);
            group_obj += clipped_term(s, o.advantage, cfg.clip_eps);
            if is_clipped(s, o.advantage, cfg.clip_eps) {
                clipped += 1;
            }
            n_out += 1;
            let c = clipped_term_grad(s, o.advantage, cfg.clip_eps) / n;
            if c != 0.0 {
                for h in 0..3 {
                    for (k, d) in dz[h].iter_mut().enumerate() {
                        let ind = if k == o.bins[h] { 1.0 } else { 0.0 };
                        *d += c * (ind - math::exp(lp[h][k]));
                    }
                }
            }
        }
        objective += gw * (group_obj / n - cfg.kl_weight * kl);
        kl_sum += kl;
        for (h, head) in policy.heads.iter().enumerate() {
            let s = head.n_features + 1;
            for (k, d) in dz[h].iter().enumerate() {
                let row = &mut grad[offset + k * s..offset + (k + 1) * s];
                for (j, v) in x.iter().enumerate() {
                    row[j] += gw * d * v;
                }
                row[head.n_features] += gw * d;
            }
            offset += head.weights.len();
        }
    }
    if grad.iter().any(|v| !v.is_finite()) {
        return Err(GrpoError::NonFinite("gradient"));
    }
    Ok(Gradient {
        grad,
        objective,
        mean_kl: kl_sum / groups.len() as f64,
        clip_fraction: clipped as f64 / n_out as f64,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct StepDiagnostics {
    pub objective: f64,
    pub mean_reward: f64,
    pub mean_kl: f64,
    pub clip_fraction: f64,
}

/// One gradient-ascent step on the batch objective.
pub fn grpo_step(
    policy: &mut ToyPolicy,
    reference: &ToyPolicy,
    groups: &[RolloutGroup],
    cfg: &GrpoConfig,
) -> Result<StepDiagnostics, GrpoError> {
    cfg.validate()?;
    let g = policy_gradient(policy, reference, groups, cfg)?;
    let mut p = policy.params();
    for (w, d) in p.iter_mut().zip(&g.grad) {
        *w += cfg.learning_rate * d;
    }
    policy.set_params(&p)?;
    let mean_reward = groups.iter().map(RolloutGroup::mean_reward).sum::<f64>() / groups.len() as f64;
    Ok(StepDiagnostics {
        objective: g.objective,
        mean_reward,
        mean_kl: g.mean_kl,
        clip_fraction: g.clip_fraction,
    })
}

/// A prompt set the trainer can roll out against.
pub trait RolloutEnv {
    fn n_prompts(&self) -> usize;
    fn features(&self, prompt: usize) -> &[f64];
    /// Reward and predicted post-action box for `action` at `prompt`.
    fn score(&self, prompt: usize, action: &ActionDelta) -> (RewardBreakdown, BBoxPx);
    /// Reference action used for the per-dimension error log.
    fn target(&self, prompt: usize) -> ActionDelta;
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TrainConfig {
    pub steps: usize,
    pub prompts_per_step: usize,
    pub updates_per_batch: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 200,
            prompts_per_step: 16,
            updates_per_batch: 2,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct StepLog {
    pub step: usize,
    pub mean_reward: f64,
    pub mean_kl: f64,
    pub clip_fraction: f64,
    /// Mean absolute error of the sampled actions (pan, tilt, zoom).
    pub mae: [f64; 3],
}

pub fn collect_group<E: RolloutEnv, R: Rng>(
    env: &E,
    prompt: usize,
    policy: &ToyPolicy,
    reference: &ToyPolicy,
    cfg: &GrpoConfig,
    rng: &mut R,
) -> Result<RolloutGroup, GrpoError> {
    let x = env.features(prompt).to_vec();
    policy.check_features(&x)?;
    let outcomes = (0..cfg.group_size)
        .map(|_| {
            let bins = policy.sample(&x, rng);
            let action = policy.action(&bins);
            let (r, pred_bbox) = env.score(prompt, &action);
            let logp = policy.log_prob(&x, &bins);
            Outcome {
                bins,
                action,
                pred_bbox,
                logp,
                logp_old: logp,
                logp_ref: reference.log_prob(&x, &bins),
                reward: r.total,
                advantage: 0.0,
            }
        })
        .collect();
    let mut g = RolloutGroup {
        prompt_id: prompt,
        kl: policy.kl(reference, &x),
        features: x,
        outcomes,
    };
    g.normalize(cfg.std_guard)?;
    Ok(g)
}

/// Runs `tc.steps` sampling rounds, each followed by `tc.updates_per_batch`
/// gradient steps against the frozen behaviour log-probs.
pub fn train<E: RolloutEnv>(
    policy: &mut ToyPolicy,
    reference: &ToyPolicy,
    env: &E,
    cfg: &GrpoConfig,
    tc: &TrainConfig,
) -> Result<Vec<StepLog>, GrpoError> {
    cfg.validate()?;
    if env.n_prompts() == 0 || tc.prompts_per_step == 0 {
        return Err(GrpoError::EmptyBatch);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(math::mix_seed(tc.seed, 0x6772_706f));
    let mut logs = Vec::with_capacity(tc.steps);
    for step in 0..tc.steps {
        let groups = (0..tc.prompts_per_step)
            .map(|_| {
                let prompt = rng.random_range(0..env.n_prompts());
                collect_group(env, prompt, policy, reference, cfg, &mut rng)
            })
            .collect::<Result<Vec<_>, _>>()?;
        let mut mae = [0.0; 3];
        let mut n = 0.0;
        for g in &groups {
            let t = env.target(g.prompt_id).as_array();
            for o in &g.outcomes {
                let a = o.action.as_array();
                for d in 0..3 {
                    mae[d] += (a[d] as f64 - t[d] as f64).abs();
                }
                n += 1.0;
            }
        }
        let mut diag = StepDiagnostics {
            objective: 0.0,
            mean_reward: 0.0,
            mean_kl: 0.0,
            clip_fraction: 0.0,
        };
        for _ in 0..tc.updates_per_batch.max(1) {
            diag = grpo_step(policy, reference, &groups, cfg)?;
        }
        logs.push(StepLog {
            step,
            mean_reward: diag.mean_reward,
            mean_kl: diag.mean_kl,
            clip_fraction: diag.clip_fraction,
            mae: mae.map(|v| v / n),
        });
    }
    Ok(logs)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn outcome(logp: f64, logp_old: f64, advantage: f64) -> Outcome {
        Outcome {
            bins: [0; 3],
            action: ActionDelta::ZERO,
            pred_bbox: BBoxPx::empty(),
            logp,
            logp_old,
            logp_ref: logp_old,
            reward: 0.0,
            advantage,
        }
    }

    #[test]
    fn clip_arithmetic() {
        assert!((clipped_term(1.5, 1.0, 0.2) - 1.2).abs() < 1e-15);
        assert_eq!(clipped_term(1.5, -1.0, 0.2), -1.5);
        assert_eq!(clipped_term_grad(1.5, 1.0, 0.2), 0.0);
        assert_eq!(clipped_term_grad(0.5, -1.0, 0.2), 0.0);
        assert_eq!(clipped_term_grad(1.5, -1.0, 0.2), -1.5);
        assert_eq!(clipped_term_grad(0.5, 1.0, 0.2), 0.5);
    }

    #[test]
    fn objective_is_zero_at_reference() {
        let cfg = GrpoConfig::default();
        let g = RolloutGroup {
            prompt_id: 0,
            features: vec![],
            outcomes: [-1.0, 0.5, 0.5].iter().map(|a| outcome(-2.0, -2.0, *a)).collect(),
            kl: 0.0,
        };
        assert!(grpo_objective(&g, &cfg).unwrap().abs() < 1e-15);
        let mut bad = g.clone();
        bad.outcomes[0].logp = f64::NAN;
        assert_eq!(
            grpo_objective(&bad, &cfg),
            Err(GrpoError::NonFinite("log-probabilities"))
        );
    }

    #[test]
    fn probabilities_normalize() {
        let mut p = ToyPolicy::with_default_grids(3);
        let params: Vec<f64> = (0..p.n_params()).map(|i| ((i * 37 % 11) as f64 - 5.0) * 0.3).collect();
        p.set_params(&params).unwrap();
        for h in &p.heads {
            let s: f64 = h.probs(&[0.2, -0.4, 1.0]).iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
        assert_eq!(p.kl(&p, &[0.2, -0.4, 1.0]), 0.0);
    }

    #[test]
    fn zero_learning_rate_keeps_params() {
        let mut p = ToyPolicy::zeros(2, [BinGrid::new(-1, 1, 3).unwrap(); 3]).unwrap();
        let r = p.clone();
        let g = RolloutGroup {
            prompt_id: 0,
            features: vec![0.5, -0.5],
            outcomes: vec![
                Outcome {
                    bins: [0, 1, 2],
                    ..outcome(0.0, p.log_prob(&[0.5, -0.5], &[0, 1, 2]), 1.0)
                },
                Outcome {
                    bins: [2, 1, 0],
                    ..outcome(0.0, p.log_prob(&[0.5, -0.5], &[2, 1, 0]), -1.0)
                },
            ],
            kl: 0.0,
        };
        let cfg = GrpoConfig {
            learning_rate: 0.0,
            ..GrpoConfig::default()
        };
        grpo_step(&mut p, &r, &[g], &cfg).unwrap();
        assert_eq!(p, r);
    }

    #[test]
    fn config_validation() {
        assert!(GrpoConfig::default().validate().is_ok());
        assert!(GrpoConfig {
            clip_eps: 1.0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(GrpoConfig {
            kl_weight: -0.1,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(GrpoConfig {
            group_size: 1,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(BinGrid::new(0, 0, 3).is_err());
        assert_eq!(BinGrid::default_zoom().nearest(123.0), 12);
        assert_eq!(BinGrid::default_angle().nearest(-99.0), 0);
    }
}
