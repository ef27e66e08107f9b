//! Multi-round predict, filter, relabel and refit loop with pluggable policies.

use alloc::boxed::Box;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::codec::{max_value, ActionDelta, DEFAULT_LEVELS};
use crate::geometry::{
    apply_action, area_ratio, iou, oracle_action, project, BBoxPx, CameraIntrinsics, CameraState, GeometryError,
    TargetSpec, Visibility, UNITS_PER_DOUBLING,
};
use crate::grpo::{RolloutEnv, ToyPolicy};
use crate::math::{self, hash_str, mix_seed};
use crate::pseudolabel::{pick_template, render_instruction, FeatureVec, LabelError, DEFAULT_TEMPLATES};
use crate::regress::{self, FitError, RegressorConfig, RegressorModel};
use crate::reward::{composite_reward, RewardBreakdown, RewardConfig};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SelfTrainError {
    #[error("empty dataset")]
    Empty,
    #[error("round {round} kept no samples at iou threshold {threshold}")]
    EmptyAfterFilter { round: usize, threshold: f64 },
    #[error("invalid iteration config: {0}")]
    InvalidConfig(String),
    #[error("sample {0} has no simulator target")]
    MissingTarget(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Label(#[from] LabelError),
    #[error(transparent)]
    Fit(#[from] FitError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SimContext {
    pub intrinsics: CameraIntrinsics,
    pub fill_ratio: f64,
    pub levels: u32,
}

impl Default for SimContext {
    fn default() -> Self {
        Self {
            intrinsics: CameraIntrinsics::default(),
            fill_ratio: 0.3,
            levels: DEFAULT_LEVELS,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CompletionCriteria {
    /// Allowed centre offset as a fraction of `min(W, H)`.
    pub center_tol: f64,
    pub min_area_ratio: f64,
    pub require_full: bool,
}

impl Default for CompletionCriteria {
    fn default() -> Self {
        Self {
            center_tol: 0.1,
            min_area_ratio: 0.25,
            require_full: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SampleTuple {
    pub id: String,
    pub instruction: String,
    pub features: FeatureVec,
    pub camera_init: CameraState,
    pub bbox_init: BBoxPx,
    #[cfg_attr(feature = "serde", serde(default, skip_serializing_if = "Option::is_none"))]
    pub target: Option<TargetSpec>,
    pub gt_action: ActionDelta,
    pub gt_bbox_post: BBoxPx,
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Prediction {
    pub action: ActionDelta,
    pub bbox: BBoxPx,
}

/// Post-action box: exact projection when the target is known, otherwise a
/// small-angle shift of the initial box followed by a zoom about the centre.
pub fn simulate(s: &SampleTuple, action: &ActionDelta, ctx: &SimContext) -> BBoxPx {
    let k = &ctx.intrinsics;
    let after = apply_action(&s.camera_init, action, k.zoom_max);
    if let Some(t) = &s.target {
        return project(&after, k, t);
    }
    if s.bbox_init.is_empty() {
        return BBoxPx::empty();
    }
    let f0 = k.focal(s.camera_init.zoom);
    let m = math::exp2((after.zoom - s.camera_init.zoom) / UNITS_PER_DOUBLING);
    let dx = -f0 * math::tan(action.pan as f64 * math::DEG);
    let dy = f0 * math::tan(action.tilt as f64 * math::DEG);
    let (cx, cy) = k.center();
    let map = |u: f64, c: f64, d: f64| c + m * (u + d - c);
    let b = &s.bbox_init;
    let (x0, x1) = (map(b.x_min, cx, dx), map(b.x_max, cx, dx));
    let (y0, y1) = (map(b.y_min, cy, dy), map(b.y_max, cy, dy));
    let (w, h) = (k.width(), k.height());
    let c = BBoxPx::new(x0.clamp(0.0, w), y0.clamp(0.0, h), x1.clamp(0.0, w), y1.clamp(0.0, h));
    if c.x_max <= c.x_min || c.y_max <= c.y_min {
        return BBoxPx::empty();
    }
    let full = x0 >= 0.0 && y0 >= 0.0 && x1 <= w && y1 <= h;
    BBoxPx {
        visibility: if full { Visibility::Full } else { Visibility::Clipped },
        ..c
    }
}

pub fn completion(post: &BBoxPx, k: &CameraIntrinsics, crit: &CompletionCriteria) -> bool {
    if post.visibility == Visibility::OutOfView || post.is_empty() {
        return false;
    }
    if crit.require_full && post.visibility != Visibility::Full {
        return false;
    }
    let (u, v) = post.center();
    let (cx, cy) = k.center();
    let tol = crit.center_tol * k.width().min(k.height());
    let off = math::sqrt((u - cx) * (u - cx) + (v - cy) * (v - cy));
    off <= tol && area_ratio(post, k) >= crit.min_area_ratio
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct BuildOutput {
    pub samples: Vec<SampleTuple>,
    /// Ids of targets that could not be observed or labelled, with reasons.
    pub skipped: Vec<(String, String)>,
}

/// Oracle-labelled samples for each target seen from `camera`.
pub fn build_samples(targets: &[TargetSpec], camera: &CameraState, ctx: &SimContext, seed: u64) -> BuildOutput {
    let k = &ctx.intrinsics;
    let mut out = BuildOutput::default();
    for t in targets {
        let res = (|| -> Result<SampleTuple, SelfTrainError> {
            let bbox_init = project(camera, k, t);
            let features = FeatureVec::from_observation(&bbox_init, k)?;
            let gt_action = oracle_action(camera, k, t, ctx.fill_ratio)?;
            gt_action.validate(ctx.levels).map_err(LabelError::from)?;
            let gt_bbox_post = project(&apply_action(camera, &gt_action, k.zoom_max), k, t);
            Ok(SampleTuple {
                id: t.id.clone(),
                instruction: render_instruction(pick_template(&DEFAULT_TEMPLATES, &t.id, seed), &t.phrase),
                features,
                camera_init: *camera,
                bbox_init,
                target: Some(t.clone()),
                gt_action,
                gt_bbox_post,
            })
        })();
        match res {
            Ok(s) => out.samples.push(s),
            Err(e) => out.skipped.push((t.id.clone(), e.to_string())),
        }
    }
    out
}

/// Seeded shuffle into `(train, test)`; the test side gets
/// `round(n * test_fraction)` samples, at least one when `n >= 2`.
pub fn split(samples: &[SampleTuple], test_fraction: f64, seed: u64) -> (Vec<SampleTuple>, Vec<SampleTuple>) {
    let n = samples.len();
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 0x7370_6c74));
    idx.shuffle(&mut rng);
    let mut n_test = math::round_half_away(n as f64 * test_fraction.clamp(0.0, 1.0)) as usize;
    if n >= 2 && test_fraction > 0.0 {
        n_test = n_test.clamp(1, n - 1);
    }
    let mut test: Vec<usize> = idx[..n_test].to_vec();
    let mut train: Vec<usize> = idx[n_test..].to_vec();
    test.sort_unstable();
    train.sort_unstable();
    (
        train.iter().map(|i| samples[*i].clone()).collect(),
        test.iter().map(|i| samples[*i].clone()).collect(),
    )
}

fn noise_rng(seed: u64, id: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix_seed(seed, hash_str(id)))
}

/// `base + N(0, sigma)` per dimension, rounded; zoom is kept non-negative and
/// every component inside the codec range.
pub fn perturb(base: &ActionDelta, sigma: [f64; 3], seed: u64, id: &str, levels: u32) -> ActionDelta {
    let mut rng = noise_rng(seed, id);
    let lim = max_value(levels) as f64;
    let a = base.as_array();
    let v: [f64; 3] = core::array::from_fn(|d| {
        let e = if sigma[d] > 0.0 {
            Normal::new(0.0, sigma[d]).map(|n| n.sample(&mut rng)).unwrap_or(0.0)
        } else {
            0.0
        };
        a[d] as f64 + e
    });
    ActionDelta::new(
        math::round_to_i32(v[0].clamp(-lim, lim)),
        math::round_to_i32(v[1].clamp(-lim, lim)),
        math::round_to_i32(v[2].clamp(0.0, lim)),
    )
}

/// Replaces every action label with a noisy copy; boxes are left untouched.
pub fn with_noisy_labels(samples: &[SampleTuple], sigma: [f64; 3], seed: u64, levels: u32) -> Vec<SampleTuple> {
    samples
        .iter()
        .map(|s| SampleTuple {
            gt_action: perturb(&s.gt_action, sigma, seed, &s.id, levels),
            ..s.clone()
        })
        .collect()
}

pub trait PolicyAdapter {
    fn name(&self) -> &str;
    fn predict_action(&self, s: &SampleTuple, ctx: &SimContext) -> Result<ActionDelta, SelfTrainError>;

    fn predict(&self, s: &SampleTuple, ctx: &SimContext) -> Result<Prediction, SelfTrainError> {
        let action = self.predict_action(s, ctx)?;
        Ok(Prediction {
            action,
            bbox: simulate(s, &action, ctx),
        })
    }
}

fn oracle_for(s: &SampleTuple, ctx: &SimContext) -> Result<ActionDelta, SelfTrainError> {
    let t = s
        .target
        .as_ref()
        .ok_or_else(|| SelfTrainError::MissingTarget(s.id.clone()))?;
    Ok(oracle_action(&s.camera_init, &ctx.intrinsics, t, ctx.fill_ratio)?)
}

/// Exact geometric oracle; needs simulator targets.
#[derive(Debug, Clone, Copy, Default)]
pub struct OraclePolicy;

impl PolicyAdapter for OraclePolicy {
    fn name(&self) -> &str {
        "oracle"
    }
    fn predict_action(&self, s: &SampleTuple, ctx: &SimContext) -> Result<ActionDelta, SelfTrainError> {
        oracle_for(s, ctx)
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroPolicy;

impl PolicyAdapter for ZeroPolicy {
    fn name(&self) -> &str {
        "zero"
    }
    fn predict_action(&self, _: &SampleTuple, _: &SimContext) -> Result<ActionDelta, SelfTrainError> {
        Ok(ActionDelta::ZERO)
    }
}

/// Oracle plus per-sample Gaussian noise, seeded by sample id.
#[derive(Debug, Clone, Copy)]
pub struct NoisyOraclePolicy {
    pub sigma: [f64; 3],
    pub seed: u64,
}

impl PolicyAdapter for NoisyOraclePolicy {
    fn name(&self) -> &str {
        "noisy-oracle"
    }
    fn predict_action(&self, s: &SampleTuple, ctx: &SimContext) -> Result<ActionDelta, SelfTrainError> {
        Ok(perturb(&oracle_for(s, ctx)?, self.sigma, self.seed, &s.id, ctx.levels))
    }
}

/// Replays each sample's own action label.
#[derive(Debug, Clone, Copy, Default)]
pub struct LabelPolicy;

impl PolicyAdapter for LabelPolicy {
    fn name(&self) -> &str {
        "labels"
    }
    fn predict_action(&self, s: &SampleTuple, _: &SimContext) -> Result<ActionDelta, SelfTrainError> {
        Ok(s.gt_action)
    }
}

fn clamp_action(v: [f64; 3], levels: u32) -> ActionDelta {
    let lim = max_value(levels) as f64;
    ActionDelta::new(
        math::round_to_i32(v[0].clamp(-lim, lim)),
        math::round_to_i32(v[1].clamp(-lim, lim)),
        math::round_to_i32(v[2].clamp(0.0, lim)),
    )
}

#[derive(Debug, Clone)]
pub struct RegressorPolicy {
    pub model: RegressorModel,
}

impl RegressorPolicy {
    pub fn fit(samples: &[SampleTuple], cfg: &RegressorConfig) -> Result<Self, SelfTrainError> {
        if samples.is_empty() {
            return Err(SelfTrainError::Empty);
        }
        let x: Vec<Vec<f64>> = samples.iter().map(|s| s.features.inputs()).collect();
        let y: Vec<[f64; 3]> = samples
            .iter()
            .map(|s| s.gt_action.as_array().map(|v| v as f64))
            .collect();
        let (model, _) = regress::fit(&x, &y, cfg)?;
        Ok(Self { model })
    }
}

impl PolicyAdapter for RegressorPolicy {
    fn name(&self) -> &str {
        "regressor"
    }
    fn predict_action(&self, s: &SampleTuple, ctx: &SimContext) -> Result<ActionDelta, SelfTrainError> {
        let x = s.features.inputs();
        if x.len() != self.model.n_features() {
            return Err(LabelError::FeatureMismatch {
                expected: self.model.n_features(),
                got: x.len(),
            }
            .into());
        }
        Ok(clamp_action(self.model.predict(&x), ctx.levels))
    }
}

/// Inputs of the toy policy: centre offset and a scaled log area ratio.
pub fn policy_features(f: &FeatureVec) -> Vec<f64> {
    vec![f.x_norm, f.y_norm, -math::log2(f.w1.max(1e-12)) / 10.0]
}

/// Greedy (arg-max) actions of a trained toy policy.
#[derive(Debug, Clone)]
pub struct ToyPolicyAdapter {
    pub policy: ToyPolicy,
}

impl PolicyAdapter for ToyPolicyAdapter {
    fn name(&self) -> &str {
        "toy-grpo"
    }
    fn predict_action(&self, s: &SampleTuple, _: &SimContext) -> Result<ActionDelta, SelfTrainError> {
        let x = policy_features(&s.features);
        Ok(self.policy.action(&self.policy.mode(&x)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MetricsReport {
    pub mae_theta1: f64,
    pub mae_theta2: f64,
    pub mae_zoom: f64,
    pub mean_iou: f64,
    pub completion_rate: f64,
    pub n_samples: usize,
}

pub fn evaluate(
    policy: &dyn PolicyAdapter,
    test: &[SampleTuple],
    ctx: &SimContext,
    crit: &CompletionCriteria,
) -> Result<MetricsReport, SelfTrainError> {
    if test.is_empty() {
        return Err(SelfTrainError::Empty);
    }
    let (mut mae, mut iou_sum, mut done) = ([0.0; 3], 0.0, 0usize);
    for s in test {
        let p = policy.predict(s, ctx)?;
        let (a, g) = (p.action.as_array(), s.gt_action.as_array());
        for d in 0..3 {
            mae[d] += (a[d] as f64 - g[d] as f64).abs();
        }
        iou_sum += iou(&p.bbox, &s.gt_bbox_post);
        if completion(&p.bbox, &ctx.intrinsics, crit) {
            done += 1;
        }
    }
    let n = test.len() as f64;
    Ok(MetricsReport {
        mae_theta1: mae[0] / n,
        mae_theta2: mae[1] / n,
        mae_zoom: mae[2] / n,
        mean_iou: iou_sum / n,
        completion_rate: done as f64 / n,
        n_samples: test.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RoundDiagnostics {
    pub threshold: f64,
    pub n_in: usize,
    pub n_kept: usize,
    pub kept_fraction: f64,
    /// Mean prediction IoU over all input samples.
    pub mean_iou_pre: f64,
    /// Mean prediction IoU over the kept samples (0 when none kept).
    pub mean_iou_post: f64,
}

/// Predicts on every sample and keeps those with `iou > threshold`
/// (`threshold <= 0` keeps everything). Kept samples are relabelled with the
/// predicted action and either their own box (`replace_bbox`) or the
/// predicted one.
pub fn run_round(
    dataset: &[SampleTuple],
    policy: &dyn PolicyAdapter,
    threshold: f64,
    replace_bbox: bool,
    ctx: &SimContext,
) -> Result<(Vec<SampleTuple>, RoundDiagnostics), SelfTrainError> {
    if dataset.is_empty() {
        return Err(SelfTrainError::Empty);
    }
    if !(0.0..=1.0).contains(&threshold) {
        return Err(SelfTrainError::InvalidConfig(format!(
            "threshold {threshold} outside [0, 1]"
        )));
    }
    let mut kept = Vec::new();
    let (mut pre, mut post) = (0.0, 0.0);
    for s in dataset {
        let p = policy.predict(s, ctx)?;
        let v = iou(&p.bbox, &s.gt_bbox_post);
        pre += v;
        if threshold <= 0.0 || v > threshold {
            post += v;
            let bbox = if replace_bbox { s.gt_bbox_post } else { p.bbox };
            kept.push(SampleTuple {
                gt_action: p.action,
                gt_bbox_post: bbox,
                ..s.clone()
            });
        }
    }
    let n_kept = kept.len();
    Ok((
        kept,
        RoundDiagnostics {
            threshold,
            n_in: dataset.len(),
            n_kept,
            kept_fraction: n_kept as f64 / dataset.len() as f64,
            mean_iou_pre: pre / dataset.len() as f64,
            mean_iou_post: if n_kept > 0 { post / n_kept as f64 } else { 0.0 },
        },
    ))
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct IterationConfig {
    pub rounds: usize,
    pub iou_thresholds: Vec<f64>,
    pub replace_bbox: bool,
    pub refit_each_round: bool,
    /// Relabel the original training pool every round instead of the
    /// previous round's kept set.
    pub reuse_pool: bool,
}

impl Default for IterationConfig {
    fn default() -> Self {
        Self {
            rounds: 3,
            iou_thresholds: vec![0.7, 0.95],
            replace_bbox: true,
            refit_each_round: true,
            reuse_pool: true,
        }
    }
}

impl IterationConfig {
    pub fn validate(&self) -> Result<(), SelfTrainError> {
        if self.rounds == 0 {
            return Err(SelfTrainError::InvalidConfig("rounds must be at least 1".into()));
        }
        if self.iou_thresholds.len() + 1 < self.rounds {
            return Err(SelfTrainError::InvalidConfig(format!(
                "{} rounds need {} thresholds, got {}",
                self.rounds,
                self.rounds - 1,
                self.iou_thresholds.len()
            )));
        }
        if let Some(t) = self.iou_thresholds.iter().find(|t| !(0.0..=1.0).contains(*t)) {
            return Err(SelfTrainError::InvalidConfig(format!("threshold {t} outside [0, 1]")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RoundReport {
    pub round: usize,
    /// Filter threshold applied before this round's fit (none in round 1).
    pub threshold: Option<f64>,
    pub kept_fraction: f64,
    pub n_train: usize,
    pub mean_iou: f64,
    pub mae_theta1: f64,
    pub mae_theta2: f64,
    pub mae_zoom: f64,
    pub cr: f64,
}

impl RoundReport {
    fn new(round: usize, threshold: Option<f64>, kept_fraction: f64, n_train: usize, m: &MetricsReport) -> Self {
        Self {
            round,
            threshold,
            kept_fraction,
            n_train,
            mean_iou: m.mean_iou,
            mae_theta1: m.mae_theta1,
            mae_theta2: m.mae_theta2,
            mae_zoom: m.mae_zoom,
            cr: m.completion_rate,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationOutcome {
    pub reports: Vec<RoundReport>,
    /// Training set used for the last fit.
    pub refined: Vec<SampleTuple>,
}

pub type PolicyFactory<'a> = dyn FnMut(&[SampleTuple]) -> Result<Box<dyn PolicyAdapter>, SelfTrainError> + 'a;

/// Round 1 fits on `train` and evaluates on `test`. Each later round
/// relabels the pool (or the previous kept set) with the current policy,
/// filters it at the next threshold, optionally refits, and evaluates again.
pub fn iterate(
    train: &[SampleTuple],
    test: &[SampleTuple],
    cfg: &IterationConfig,
    factory: &mut PolicyFactory<'_>,
    ctx: &SimContext,
    crit: &CompletionCriteria,
) -> Result<IterationOutcome, SelfTrainError> {
    cfg.validate()?;
    if train.is_empty() || test.is_empty() {
        return Err(SelfTrainError::Empty);
    }
    let mut working = train.to_vec();
    let mut policy = factory(&working)?;
    let mut reports = vec![RoundReport::new(
        1,
        None,
        1.0,
        working.len(),
        &evaluate(policy.as_ref(), test, ctx, crit)?,
    )];
    for round in 2..=cfg.rounds {
        let threshold = cfg.iou_thresholds[round - 2];
        let source = if cfg.reuse_pool { train } else { &working };
        let (refined, diag) = run_round(source, policy.as_ref(), threshold, cfg.replace_bbox, ctx)?;
        if refined.is_empty() {
            return Err(SelfTrainError::EmptyAfterFilter { round, threshold });
        }
        working = refined;
        if cfg.refit_each_round {
            policy = factory(&working)?;
        }
        let m = evaluate(policy.as_ref(), test, ctx, crit)?;
        reports.push(RoundReport::new(
            round,
            Some(threshold),
            diag.kept_fraction,
            working.len(),
            &m,
        ));
    }
    Ok(IterationOutcome {
        reports,
        refined: working,
    })
}

/// Rollout environment over simulator samples for the toy policy.
#[derive(Debug, Clone)]
pub struct SampleEnv<'a> {
    pub samples: &'a [SampleTuple],
    pub ctx: SimContext,
    pub reward: RewardConfig,
    features: Vec<Vec<f64>>,
}

impl<'a> SampleEnv<'a> {
    pub fn new(samples: &'a [SampleTuple], ctx: SimContext, reward: RewardConfig) -> Self {
        let features = samples.iter().map(|s| policy_features(&s.features)).collect();
        Self {
            samples,
            ctx,
            reward,
            features,
        }
    }
}

impl RolloutEnv for SampleEnv<'_> {
    fn n_prompts(&self) -> usize {
        self.samples.len()
    }
    fn features(&self, prompt: usize) -> &[f64] {
        &self.features[prompt]
    }
    fn score(&self, prompt: usize, action: &ActionDelta) -> (RewardBreakdown, BBoxPx) {
        let s = &self.samples[prompt];
        let b = simulate(s, action, &self.ctx);
        (
            composite_reward(action, &s.gt_action, &b, &s.gt_bbox_post, &self.reward),
            b,
        )
    }
    fn target(&self, prompt: usize) -> ActionDelta {
        self.samples[prompt].gt_action
    }
}
