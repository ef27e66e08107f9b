//! Run configuration loaded from a sectioned TOML file.

use std::path::{Path, PathBuf};

use ptzact_core::codec::{TokenVocab, DEFAULT_LEVELS};
use ptzact_core::geometry::{CameraIntrinsics, CameraState, DEFAULT_ZOOM_MAX};
use ptzact_core::grpo::{GrpoConfig, TrainConfig};
use ptzact_core::pseudolabel::ZoomSource;
use ptzact_core::regress::{ForestConfig, RegressorConfig, RegressorKind};
use ptzact_core::reward::RewardConfig;
use ptzact_core::scene::{Range, SceneRanges};
use ptzact_core::selftrain::{CompletionCriteria, IterationConfig, SimContext};
use serde::Deserialize;

use crate::error::CliError;
use crate::formats;

#[derive(Debug, Clone, PartialEq, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub intrinsics: IntrinsicsSection,
    pub camera: CameraSection,
    pub codec: CodecSection,
    pub scene: SceneSection,
    pub pseudolabel: PseudoLabelSection,
    pub reward: RewardSection,
    pub grpo: GrpoSection,
    pub selftrain: SelfTrainSection,
    pub completion: CompletionSection,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IntrinsicsSection {
    pub image_w: u32,
    pub image_h: u32,
    pub hfov: f64,
    pub zoom_max: f64,
}

impl Default for IntrinsicsSection {
    fn default() -> Self {
        let k = CameraIntrinsics::default();
        Self {
            image_w: k.image_w,
            image_h: k.image_h,
            hfov: k.hfov_base,
            zoom_max: DEFAULT_ZOOM_MAX,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CameraSection {
    pub pan: f64,
    pub tilt: f64,
    pub zoom: f64,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CodecSection {
    pub vocab: Option<PathBuf>,
    pub base: u32,
    pub levels: u32,
    pub strict: bool,
}

impl Default for CodecSection {
    fn default() -> Self {
        Self {
            vocab: None,
            base: 0,
            levels: DEFAULT_LEVELS,
            strict: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneSection {
    pub azimuth: [f64; 2],
    pub elevation: [f64; 2],
    pub distance: [f64; 2],
    pub width: [f64; 2],
    pub aspect: [f64; 2],
}

impl Default for SceneSection {
    fn default() -> Self {
        let r = SceneRanges::default();
        let pair = |x: Range| [x.lo, x.hi];
        Self {
            azimuth: pair(r.azimuth),
            elevation: pair(r.elevation),
            distance: pair(r.distance),
            width: pair(r.width),
            aspect: pair(r.aspect),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KindName {
    Ols,
    Rf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ZoomSourceName {
    Crop,
    Model,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PseudoLabelSection {
    /// Keep only the `k` records with the smallest box area ratio.
    pub k: Option<usize>,
    pub regressor: KindName,
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_samples_leaf: usize,
    pub fill_ratio: f64,
    pub zoom_source: ZoomSourceName,
    pub templates: Vec<String>,
}

impl Default for PseudoLabelSection {
    fn default() -> Self {
        let f = ForestConfig::default();
        Self {
            k: None,
            regressor: KindName::Rf,
            n_trees: f.n_trees,
            max_depth: f.max_depth,
            min_samples_leaf: f.min_samples_leaf,
            fill_ratio: SimContext::default().fill_ratio,
            zoom_source: ZoomSourceName::Crop,
            templates: ptzact_core::pseudolabel::DEFAULT_TEMPLATES
                .iter()
                .map(|s| s.to_string())
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RewardSection {
    pub angle_tol: f64,
    pub angle_penalty_span: f64,
    pub zoom_band: f64,
    pub zoom_penalty_span: f64,
}

impl Default for RewardSection {
    fn default() -> Self {
        let r = RewardConfig::default();
        Self {
            angle_tol: r.angle_tol,
            angle_penalty_span: r.angle_penalty_span,
            zoom_band: r.zoom_band,
            zoom_penalty_span: r.zoom_penalty_span,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GrpoSection {
    pub clip_eps: f64,
    pub kl_weight: f64,
    pub group_size: usize,
    pub learning_rate: f64,
    pub std_guard: f64,
    pub steps: usize,
    pub prompts_per_step: usize,
    pub updates_per_batch: usize,
}

impl Default for GrpoSection {
    fn default() -> Self {
        let g = GrpoConfig::default();
        let t = TrainConfig::default();
        Self {
            clip_eps: g.clip_eps,
            kl_weight: g.kl_weight,
            group_size: g.group_size,
            learning_rate: g.learning_rate,
            std_guard: g.std_guard,
            steps: t.steps,
            prompts_per_step: t.prompts_per_step,
            updates_per_batch: t.updates_per_batch,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SelfTrainSection {
    pub rounds: usize,
    pub thresholds: Vec<f64>,
    pub replace_bbox: bool,
    pub refit_each_round: bool,
    pub reuse_pool: bool,
    pub test_fraction: f64,
    /// Label noise `[pan, tilt, zoom]` applied by `synth --noisy`.
    pub noise: [f64; 3],
}

impl Default for SelfTrainSection {
    fn default() -> Self {
        let c = IterationConfig::default();
        Self {
            rounds: c.rounds,
            thresholds: c.iou_thresholds,
            replace_bbox: c.replace_bbox,
            refit_each_round: c.refit_each_round,
            reuse_pool: c.reuse_pool,
            test_fraction: 0.1,
            noise: [5.0, 5.0, 30.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CompletionSection {
    pub center_tol: f64,
    pub min_area_ratio: f64,
    pub require_full: bool,
}

impl Default for CompletionSection {
    fn default() -> Self {
        let c = CompletionCriteria::default();
        Self {
            center_tol: c.center_tol,
            min_area_ratio: c.min_area_ratio,
            require_full: c.require_full,
        }
    }
}

fn range(name: &str, v: [f64; 2]) -> Result<Range, CliError> {
    if !(v[0].is_finite() && v[1].is_finite() && v[0] <= v[1]) {
        return Err(CliError::Usage(format!("scene.{name} must be [lo, hi] with lo <= hi")));
    }
    Ok(Range::new(v[0], v[1]))
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let cfg = match path {
            None => Self::default(),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", p.display())))?;
                let mut cfg: RunConfig =
                    toml::from_str(&text).map_err(|e| CliError::Usage(format!("config {}: {e}", p.display())))?;
                if let Some(v) = &cfg.codec.vocab {
                    if v.is_relative() {
                        if let Some(dir) = p.parent() {
                            cfg.codec.vocab = Some(dir.join(v));
                        }
                    }
                }
                cfg
            }
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Checks every section and that referenced paths exist.
    pub fn validate(&self) -> Result<(), CliError> {
        self.intrinsics()?;
        self.scene_ranges()?;
        self.reward_config()?;
        self.grpo_config()?;
        self.iteration_config()?;
        if !(self.pseudolabel.fill_ratio > 0.0 && self.pseudolabel.fill_ratio < 1.0) {
            return Err(CliError::Usage("pseudolabel.fill_ratio must lie in (0, 1)".into()));
        }
        if !(0.0..1.0).contains(&self.selftrain.test_fraction) {
            return Err(CliError::Usage("selftrain.test_fraction must lie in [0, 1)".into()));
        }
        if self.selftrain.noise.iter().any(|s| !(*s >= 0.0 && s.is_finite())) {
            return Err(CliError::Usage("selftrain.noise entries must be non-negative".into()));
        }
        if let Some(v) = &self.codec.vocab {
            if !v.is_file() {
                return Err(CliError::Usage(format!("codec.vocab {} does not exist", v.display())));
            }
        }
        Ok(())
    }

    pub fn intrinsics(&self) -> Result<CameraIntrinsics, CliError> {
        let i = &self.intrinsics;
        let k = CameraIntrinsics {
            image_w: i.image_w,
            image_h: i.image_h,
            hfov_base: i.hfov,
            zoom_max: i.zoom_max,
        };
        k.validate().map_err(|e| CliError::Usage(format!("intrinsics: {e}")))?;
        Ok(k)
    }

    pub fn camera(&self) -> CameraState {
        CameraState::new(self.camera.pan, self.camera.tilt, self.camera.zoom)
    }

    pub fn sim_context(&self) -> Result<SimContext, CliError> {
        Ok(SimContext {
            intrinsics: self.intrinsics()?,
            fill_ratio: self.pseudolabel.fill_ratio,
            levels: self.codec.levels,
        })
    }

    pub fn vocab(&self) -> Result<TokenVocab, CliError> {
        match &self.codec.vocab {
            Some(p) => formats::read_vocab(p),
            None => {
                TokenVocab::standard(self.codec.base, self.codec.levels).map_err(|e| CliError::Usage(e.to_string()))
            }
        }
    }

    pub fn scene_ranges(&self) -> Result<SceneRanges, CliError> {
        let s = &self.scene;
        let r = SceneRanges {
            azimuth: range("azimuth", s.azimuth)?,
            elevation: range("elevation", s.elevation)?,
            distance: range("distance", s.distance)?,
            width: range("width", s.width)?,
            aspect: range("aspect", s.aspect)?,
        };
        r.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(r)
    }

    pub fn regressor_config(&self, kind: Option<KindName>) -> RegressorConfig {
        let p = &self.pseudolabel;
        RegressorConfig {
            kind: match kind.unwrap_or(p.regressor) {
                KindName::Ols => RegressorKind::OlsLinear,
                KindName::Rf => RegressorKind::RandomForest,
            },
            forest: ForestConfig {
                n_trees: p.n_trees,
                max_depth: p.max_depth,
                min_samples_leaf: p.min_samples_leaf,
                seed: self.seed,
            },
        }
    }

    pub fn zoom_source(&self) -> ZoomSource {
        match self.pseudolabel.zoom_source {
            ZoomSourceName::Crop => ZoomSource::Crop,
            ZoomSourceName::Model => ZoomSource::Model,
        }
    }

    pub fn reward_config(&self) -> Result<RewardConfig, CliError> {
        let r = &self.reward;
        let c = RewardConfig {
            angle_tol: r.angle_tol,
            angle_penalty_span: r.angle_penalty_span,
            zoom_band: r.zoom_band,
            zoom_penalty_span: r.zoom_penalty_span,
        };
        c.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(c)
    }

    pub fn grpo_config(&self) -> Result<GrpoConfig, CliError> {
        let g = &self.grpo;
        let c = GrpoConfig {
            clip_eps: g.clip_eps,
            kl_weight: g.kl_weight,
            group_size: g.group_size,
            learning_rate: g.learning_rate,
            std_guard: g.std_guard,
        };
        c.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(c)
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            steps: self.grpo.steps,
            prompts_per_step: self.grpo.prompts_per_step,
            updates_per_batch: self.grpo.updates_per_batch,
            seed: self.seed,
        }
    }

    pub fn iteration_config(&self) -> Result<IterationConfig, CliError> {
        let s = &self.selftrain;
        let c = IterationConfig {
            rounds: s.rounds,
            iou_thresholds: s.thresholds.clone(),
            replace_bbox: s.replace_bbox,
            refit_each_round: s.refit_each_round,
            reuse_pool: s.reuse_pool,
        };
        c.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(c)
    }

    pub fn completion(&self) -> CompletionCriteria {
        let c = &self.completion;
        CompletionCriteria {
            center_tol: c.center_tol,
            min_area_ratio: c.min_area_ratio,
            require_full: c.require_full,
        }
    }
}
