//! On-disk formats: vocabulary tables, line-delimited JSON records and
//! self-describing model files. Every writer goes through [`write_atomic`].

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use ptzact_core::codec::{encode_action, ActionDelta, Token, TokenKind, TokenVocab};
use ptzact_core::geometry::{area_ratio, BBoxPx, CameraState, TargetSpec, Visibility};
use ptzact_core::grpo::{StepLog, ToyPolicy};
use ptzact_core::pseudolabel::{FeatureVec, GroundingRecord, PseudoLabel};
use ptzact_core::regress::{FitReport, RegressorConfig, RegressorModel};
use ptzact_core::selftrain::{SampleTuple, SimContext};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// Writes `bytes` to `path.partial`, then renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        }
    }
    let mut partial = path.as_os_str().to_owned();
    partial.push(".partial");
    let partial = PathBuf::from(partial);
    let mut f = fs::File::create(&partial).map_err(|e| CliError::io(&partial, e))?;
    f.write_all(bytes).map_err(|e| CliError::io(&partial, e))?;
    f.sync_all().map_err(|e| CliError::io(&partial, e))?;
    drop(f);
    fs::rename(&partial, path).map_err(|e| CliError::io(path, e))
}

pub fn to_jsonl<T: Serialize>(items: &[T]) -> Result<Vec<u8>, CliError> {
    let mut out = Vec::new();
    for item in items {
        serde_json::to_writer(&mut out, item).map_err(|e| CliError::Data(e.to_string()))?;
        out.push(b'\n');
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<(), CliError> {
    write_atomic(path, &to_jsonl(items)?)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| CliError::Data(e.to_string()))?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

fn read_text(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

/// One record per non-blank line; errors name the file and line.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, CliError> {
    let text = read_text(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let v = serde_json::from_str(line).map_err(|e| CliError::Data(format!("{}:{}: {e}", path.display(), i + 1)))?;
        out.push(v);
    }
    Ok(out)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    serde_json::from_str(&read_text(path)?).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

/// `token_id<TAB>symbol<TAB>kind<TAB>value`; blank lines and `#` comments
/// are ignored.
pub fn parse_vocab(text: &str) -> Result<TokenVocab, String> {
    let mut tokens = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 4 {
            return Err(format!(
                "line {}: expected 4 tab-separated columns, got {}",
                i + 1,
                cols.len()
            ));
        }
        let id = cols[0]
            .trim()
            .parse::<u32>()
            .map_err(|e| format!("line {}: token id: {e}", i + 1))?;
        let kind = TokenKind::from_table_columns(cols[2].trim(), cols[3].trim())
            .map_err(|e| format!("line {}: {e}", i + 1))?;
        tokens.push(Token {
            id,
            symbol: cols[1].trim().to_string(),
            kind,
        });
    }
    TokenVocab::from_tokens(tokens).map_err(|e| e.to_string())
}

pub fn read_vocab(path: &Path) -> Result<TokenVocab, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    parse_vocab(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

pub fn vocab_table(v: &TokenVocab) -> String {
    let mut out = String::new();
    for t in v.tokens() {
        let (kind, value) = t.kind.table_columns();
        out.push_str(&format!("{}\t{}\t{}\t{}\n", t.id, t.symbol, kind, value));
    }
    out
}

/// Grounding input line with the box as `[x_min, y_min, x_max, y_max]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroundingLine {
    pub id: String,
    pub image_w: u32,
    pub image_h: u32,
    pub bbox: [f64; 4],
    pub phrase: String,
}

impl From<GroundingLine> for GroundingRecord {
    fn from(g: GroundingLine) -> Self {
        let [x0, y0, x1, y1] = g.bbox;
        GroundingRecord {
            id: g.id,
            image_w: g.image_w,
            image_h: g.image_h,
            bbox: BBoxPx::new(x0, y0, x1, y1),
            phrase: g.phrase,
        }
    }
}

fn is_full(v: &Visibility) -> bool {
    *v == Visibility::Full
}

/// A labelled training tuple. The trailing optional fields carry the
/// initial observation and, for simulated data, the camera and target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelLine {
    pub id: String,
    pub instruction: String,
    pub action: ActionDelta,
    pub tokens: String,
    pub bbox_post: [f64; 4],
    #[serde(default, skip_serializing_if = "is_full")]
    pub bbox_post_visibility: Visibility,
    pub w1: f64,
    pub w2: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_w: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_h: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bbox_init: Option<[f64; 4]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub camera: Option<CameraState>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<TargetSpec>,
}

fn boxed(a: [f64; 4], visibility: Visibility) -> BBoxPx {
    BBoxPx {
        visibility,
        ..BBoxPx::new(a[0], a[1], a[2], a[3])
    }
}

fn token_string(action: &ActionDelta, vocab: &TokenVocab) -> Result<String, CliError> {
    encode_action(action, vocab)
        .and_then(|s| s.to_symbols(vocab))
        .map_err(|e| CliError::Data(format!("action {action:?}: {e}")))
}

impl LabelLine {
    pub fn from_pseudo(p: &PseudoLabel, r: &GroundingRecord, vocab: &TokenVocab) -> Result<Self, CliError> {
        Ok(Self {
            id: p.record_id.clone(),
            instruction: p.instruction.clone(),
            action: p.action,
            tokens: token_string(&p.action, vocab)?,
            bbox_post: p.gt_bbox_post.as_array(),
            bbox_post_visibility: p.gt_bbox_post.visibility,
            w1: p.w1,
            w2: p.w2,
            image_w: Some(r.image_w),
            image_h: Some(r.image_h),
            bbox_init: Some(r.bbox.as_array()),
            camera: None,
            target: None,
        })
    }

    pub fn from_sample(s: &SampleTuple, ctx: &SimContext, vocab: &TokenVocab) -> Result<Self, CliError> {
        let k = &ctx.intrinsics;
        Ok(Self {
            id: s.id.clone(),
            instruction: s.instruction.clone(),
            action: s.gt_action,
            tokens: token_string(&s.gt_action, vocab)?,
            bbox_post: s.gt_bbox_post.as_array(),
            bbox_post_visibility: s.gt_bbox_post.visibility,
            w1: s.features.w1,
            w2: area_ratio(&s.gt_bbox_post, k),
            image_w: Some(k.image_w),
            image_h: Some(k.image_h),
            bbox_init: Some(s.bbox_init.as_array()),
            camera: Some(s.camera_init),
            target: s.target.clone(),
        })
    }

    /// Rebuilds a sample; the frame size must match the run intrinsics.
    pub fn to_sample(&self, ctx: &SimContext, default_camera: CameraState) -> Result<SampleTuple, CliError> {
        let k = &ctx.intrinsics;
        let (w, h) = (self.image_w.unwrap_or(k.image_w), self.image_h.unwrap_or(k.image_h));
        if (w, h) != (k.image_w, k.image_h) {
            return Err(CliError::Data(format!(
                "label {}: frame {w}x{h} does not match intrinsics {}x{}",
                self.id, k.image_w, k.image_h
            )));
        }
        let init = self
            .bbox_init
            .ok_or_else(|| CliError::Data(format!("label {} has no bbox_init", self.id)))?;
        let bbox_init = boxed(init, Visibility::Full);
        let features = FeatureVec::from_observation(&bbox_init, k)
            .map_err(|e| CliError::Data(format!("label {}: {e}", self.id)))?;
        Ok(SampleTuple {
            id: self.id.clone(),
            instruction: self.instruction.clone(),
            features,
            camera_init: self.camera.unwrap_or(default_camera),
            bbox_init,
            target: self.target.clone(),
            gt_action: self.action,
            gt_bbox_post: boxed(self.bbox_post, self.bbox_post_visibility),
        })
    }
}

pub fn read_samples(path: &Path, ctx: &SimContext, camera: CameraState) -> Result<Vec<SampleTuple>, CliError> {
    read_jsonl::<LabelLine>(path)?
        .iter()
        .map(|l| l.to_sample(ctx, camera))
        .collect()
}

pub fn write_samples(
    path: &Path,
    samples: &[SampleTuple],
    ctx: &SimContext,
    vocab: &TokenVocab,
) -> Result<(), CliError> {
    let lines = samples
        .iter()
        .map(|s| LabelLine::from_sample(s, ctx, vocab))
        .collect::<Result<Vec<_>, _>>()?;
    write_jsonl(path, &lines)
}

pub const MODEL_FORMAT: &str = "ptzact-regressor";
pub const POLICY_FORMAT: &str = "ptzact-policy";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub format: String,
    pub version: u32,
    pub seed: u64,
    pub config: RegressorConfig,
    pub features: Vec<String>,
    pub report: FitReport,
    pub model: RegressorModel,
}

impl ModelFile {
    pub fn new(seed: u64, config: RegressorConfig, report: FitReport, model: RegressorModel) -> Self {
        Self {
            format: MODEL_FORMAT.into(),
            version: 1,
            seed,
            config,
            features: ["x_norm", "y_norm", "w1"].iter().map(|s| s.to_string()).collect(),
            report,
            model,
        }
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let m: ModelFile = read_json(path)?;
        if m.format != MODEL_FORMAT {
            return Err(CliError::Data(format!(
                "{}: not a regressor model file",
                path.display()
            )));
        }
        Ok(m)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyCheckpoint {
    pub format: String,
    pub version: u32,
    pub seed: u64,
    pub features: Vec<String>,
    pub policy: ToyPolicy,
}

impl PolicyCheckpoint {
    pub fn new(seed: u64, policy: ToyPolicy) -> Self {
        Self {
            format: POLICY_FORMAT.into(),
            version: 1,
            seed,
            features: ["x_norm", "y_norm", "neg_log2_w1_div_10"]
                .iter()
                .map(|s| s.to_string())
                .collect(),
            policy,
        }
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let c: PolicyCheckpoint = read_json(path)?;
        if c.format != POLICY_FORMAT {
            return Err(CliError::Data(format!("{}: not a policy checkpoint", path.display())));
        }
        Ok(c)
    }
}

/// Per-step training log line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepLine {
    pub step: usize,
    pub mean_reward: f64,
    pub mean_kl: f64,
    pub clip_fraction: f64,
    pub mae_pan: f64,
    pub mae_tilt: f64,
    pub mae_zoom: f64,
}

impl From<&StepLog> for StepLine {
    fn from(l: &StepLog) -> Self {
        Self {
            step: l.step,
            mean_reward: l.mean_reward,
            mean_kl: l.mean_kl,
            clip_fraction: l.clip_fraction,
            mae_pan: l.mae[0],
            mae_tilt: l.mae[1],
            mae_zoom: l.mae[2],
        }
    }
}
