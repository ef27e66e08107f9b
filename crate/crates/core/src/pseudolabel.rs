//! Pseudo-label synthesis from grounding records.
//!
//! A record (image size, box, phrase) becomes an `(instruction, action)`
//! pair: the normalized box centre drives the pan/tilt regressor, and the
//! zoom label comes from the area ratio before (`w1`) and after (`w2`) an
//! aspect-preserving crop around the box.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::codec::{ActionDelta, CodecError, DEFAULT_LEVELS};
use crate::geometry::{area_ratio, BBoxPx, CameraIntrinsics, Visibility};
use crate::math::{self, hash_str, mix_seed};
use crate::regress::{self, FitError, FitReport, RegressorConfig, RegressorModel};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LabelError {
    #[error("bounding box is empty")]
    EmptyBox,
    #[error("bounding box lies outside the {w}x{h} image")]
    OutOfBounds { w: u32, h: u32 },
    #[error("area ratios must satisfy 0 < w1 <= w2 <= 1, got w1={w1} w2={w2}")]
    BadRatios { w1: f64, w2: f64 },
    #[error("cannot select {k} records from {count}")]
    NotEnoughRecords { k: usize, count: usize },
    #[error("model expects {expected} features, record gives {got}")]
    FeatureMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Codec(#[from] CodecError),
}

pub const DEFAULT_TEMPLATES: [&str; 4] = [
    "What is the {phrase}?",
    "Take a closer look at the {phrase}.",
    "Center the {phrase} and zoom in.",
    "Show me the details of the {phrase}.",
];

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct GroundingRecord {
    pub id: String,
    pub image_w: u32,
    pub image_h: u32,
    pub bbox: BBoxPx,
    pub phrase: String,
}

impl GroundingRecord {
    pub fn validate(&self) -> Result<(), LabelError> {
        check_box(&self.bbox, self.image_w, self.image_h)
    }

    /// Pre-crop area ratio `w1`.
    pub fn w1(&self) -> f64 {
        self.bbox.area() / (self.image_w as f64 * self.image_h as f64)
    }

    pub fn features(&self) -> Result<FeatureVec, LabelError> {
        self.validate()?;
        let (x_norm, y_norm) = normalize_center(&self.bbox, self.image_w, self.image_h)?;
        Ok(FeatureVec {
            x_norm,
            y_norm,
            w1: self.w1(),
            log_zoom_ratio: None,
        })
    }
}

fn check_box(b: &BBoxPx, w: u32, h: u32) -> Result<(), LabelError> {
    if b.is_empty() || !(b.x_min < b.x_max && b.y_min < b.y_max) {
        return Err(LabelError::EmptyBox);
    }
    if !b.inside(w as f64, h as f64) {
        return Err(LabelError::OutOfBounds { w, h });
    }
    Ok(())
}

/// Regressor inputs derived from a box in its frame.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FeatureVec {
    pub x_norm: f64,
    pub y_norm: f64,
    /// Box area over image area before zooming.
    pub w1: f64,
    #[cfg_attr(feature = "serde", serde(default, skip_serializing_if = "Option::is_none"))]
    pub log_zoom_ratio: Option<f64>,
}

impl FeatureVec {
    /// Features of a (possibly clipped) camera observation.
    pub fn from_observation(b: &BBoxPx, k: &CameraIntrinsics) -> Result<Self, LabelError> {
        let (x_norm, y_norm) = normalize_center(b, k.image_w, k.image_h)?;
        Ok(Self {
            x_norm,
            y_norm,
            w1: area_ratio(b, k),
            log_zoom_ratio: None,
        })
    }

    pub fn inputs(&self) -> Vec<f64> {
        let mut v = alloc::vec![self.x_norm, self.y_norm, self.w1];
        if let Some(r) = self.log_zoom_ratio {
            v.push(r);
        }
        v
    }
}

/// Box centre mapped to (-1, 1) on both axes, `y` positive downwards.
pub fn normalize_center(b: &BBoxPx, w: u32, h: u32) -> Result<(f64, f64), LabelError> {
    if b.is_empty() {
        return Err(LabelError::EmptyBox);
    }
    let (cx, cy) = b.center();
    let (hw, hh) = (w as f64 / 2.0, h as f64 / 2.0);
    Ok(((cx - hw) / hw, (cy - hh) / hh))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CropWindow {
    pub window: BBoxPx,
    /// Box area over window area.
    pub w2: f64,
}

impl CropWindow {
    /// The box expressed in the crop rescaled to the full `w x h` frame.
    pub fn map_box(&self, b: &BBoxPx, w: u32, h: u32) -> BBoxPx {
        let sx = w as f64 / self.window.width();
        let sy = h as f64 / self.window.height();
        BBoxPx::new(
            ((b.x_min - self.window.x_min) * sx).clamp(0.0, w as f64),
            ((b.y_min - self.window.y_min) * sy).clamp(0.0, h as f64),
            ((b.x_max - self.window.x_min) * sx).clamp(0.0, w as f64),
            ((b.y_max - self.window.y_min) * sy).clamp(0.0, h as f64),
        )
    }
}

/// Smallest `w:h` window containing the box, centred on it and then shifted
/// back inside the frame.
pub fn isotropic_crop(b: &BBoxPx, w: u32, h: u32) -> Result<CropWindow, LabelError> {
    check_box(b, w, h)?;
    let (fw, fh) = (w as f64, h as f64);
    let aspect = fw / fh;
    let win_w = b.width().max(b.height() * aspect).min(fw);
    let win_h = (win_w / aspect).min(fh);
    let (cx, cy) = b.center();
    let x0 = (cx - win_w / 2.0).clamp(0.0, fw - win_w);
    let y0 = (cy - win_h / 2.0).clamp(0.0, fh - win_h);
    let window = BBoxPx::new(x0, y0, x0 + win_w, y0 + win_h);
    let w2 = (b.area() / window.area()).min(1.0);
    Ok(CropWindow { window, w2 })
}

/// Zoom units that grow the box's area ratio from `w1` to `w2`:
/// `round(50 * log2(w2 / w1))`, i.e. 100 units per doubling of linear size.
pub fn zoom_label(w1: f64, w2: f64) -> Result<i32, LabelError> {
    if !(w1 > 0.0 && w1 <= w2 && w2 <= 1.0) {
        return Err(LabelError::BadRatios { w1, w2 });
    }
    Ok(math::round_to_i32(50.0 * math::log2(w2 / w1)))
}

/// The `k` records with the smallest `w1`, ties broken by id.
pub fn select_smallest(records: &[GroundingRecord], k: usize) -> Result<Vec<GroundingRecord>, LabelError> {
    if k > records.len() {
        return Err(LabelError::NotEnoughRecords {
            k,
            count: records.len(),
        });
    }
    let mut order: Vec<(f64, &GroundingRecord)> = records.iter().map(|r| (r.w1(), r)).collect();
    order.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.id.cmp(&b.1.id)));
    Ok(order.into_iter().take(k).map(|(_, r)| r.clone()).collect())
}

/// Fits the action regressor on `(features, action)` samples.
pub fn fit_actions(
    samples: &[(FeatureVec, ActionDelta)],
    cfg: &RegressorConfig,
) -> Result<(RegressorModel, FitReport), FitError> {
    let inputs: Vec<Vec<f64>> = samples.iter().map(|(f, _)| f.inputs()).collect();
    let targets: Vec<[f64; 3]> = samples
        .iter()
        .map(|(_, a)| [a.pan as f64, a.tilt as f64, a.zoom as f64])
        .collect();
    regress::fit(&inputs, &targets, cfg)
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PseudoLabel {
    pub record_id: String,
    pub instruction: String,
    pub action: ActionDelta,
    pub gt_bbox_post: BBoxPx,
    pub w1: f64,
    pub w2: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ZoomSource {
    /// Recompute zoom from the crop's `w1`/`w2`.
    #[default]
    Crop,
    /// Use the regressor's zoom head.
    Model,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GenerateOptions {
    pub zoom_source: ZoomSource,
    pub seed: u64,
    pub levels: u32,
}

impl Default for GenerateOptions {
    fn default() -> Self {
        Self {
            zoom_source: ZoomSource::Crop,
            seed: 0,
            levels: DEFAULT_LEVELS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SkippedRecord {
    pub id: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Generated {
    pub labels: Vec<PseudoLabel>,
    pub skipped: Vec<SkippedRecord>,
}

pub fn render_instruction(template: &str, phrase: &str) -> String {
    template.replace("{phrase}", phrase)
}

/// Deterministic template choice for a record.
pub fn pick_template<'a, S: AsRef<str>>(templates: &'a [S], id: &str, seed: u64) -> &'a str {
    if templates.is_empty() {
        return "{phrase}";
    }
    let i = mix_seed(seed, hash_str(id)) % templates.len() as u64;
    templates[i as usize].as_ref()
}

fn label_one<S: AsRef<str>>(
    r: &GroundingRecord,
    model: &RegressorModel,
    templates: &[S],
    opts: &GenerateOptions,
) -> Result<PseudoLabel, LabelError> {
    let features = r.features()?;
    let inputs = features.inputs();
    if inputs.len() != model.n_features() {
        return Err(LabelError::FeatureMismatch {
            expected: model.n_features(),
            got: inputs.len(),
        });
    }
    let pred = model.predict(&inputs);
    let crop = isotropic_crop(&r.bbox, r.image_w, r.image_h)?;
    let w1 = features.w1;
    let zoom = match opts.zoom_source {
        ZoomSource::Crop => zoom_label(w1, crop.w2.max(w1))?,
        ZoomSource::Model => math::round_to_i32(pred[2]).max(0),
    };
    let action = ActionDelta::new(math::round_to_i32(pred[0]), math::round_to_i32(pred[1]), zoom);
    action.validate(opts.levels)?;
    Ok(PseudoLabel {
        record_id: r.id.clone(),
        instruction: render_instruction(pick_template(templates, &r.id, opts.seed), &r.phrase),
        action,
        gt_bbox_post: BBoxPx {
            visibility: Visibility::Full,
            ..crop.map_box(&r.bbox, r.image_w, r.image_h)
        },
        w1,
        w2: crop.w2.max(w1),
    })
}

/// Labels every record; failures become skip diagnostics. Output is sorted
/// by record id.
pub fn generate<S: AsRef<str>>(
    records: &[GroundingRecord],
    model: &RegressorModel,
    templates: &[S],
    opts: &GenerateOptions,
) -> Generated {
    let mut out = Generated::default();
    for r in records {
        match label_one(r, model, templates, opts) {
            Ok(l) => out.labels.push(l),
            Err(e) => out.skipped.push(SkippedRecord {
                id: r.id.clone(),
                reason: e.to_string(),
            }),
        }
    }
    out.labels.sort_by(|a, b| a.record_id.cmp(&b.record_id));
    out.skipped.sort_by(|a, b| a.id.cmp(&b.id));
    out
}

/// Human-readable summary line for a generation batch.
pub fn summarize(g: &Generated) -> String {
    format!("labelled {} records, skipped {}", g.labels.len(), g.skipped.len())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::{decode, encode_action, DecodeMode, TokenVocab};
    use crate::regress::{LinearHead, RegressorKind};
    use alloc::vec;
    use proptest::prelude::*;

    fn record(id: &str, w: u32, h: u32, b: [f64; 4]) -> GroundingRecord {
        GroundingRecord {
            id: id.into(),
            image_w: w,
            image_h: h,
            bbox: BBoxPx::new(b[0], b[1], b[2], b[3]),
            phrase: "red mug".into(),
        }
    }

    fn identity_model() -> RegressorModel {
        // pan = 30 * x_norm, tilt = -20 * y_norm, zoom = 0
        RegressorModel::OlsLinear {
            n_features: 3,
            heads: vec![
                LinearHead {
                    weights: vec![30.0, 0.0, 0.0],
                    bias: 0.0,
                },
                LinearHead {
                    weights: vec![0.0, -20.0, 0.0],
                    bias: 0.0,
                },
                LinearHead {
                    weights: vec![0.0, 0.0, 0.0],
                    bias: 0.0,
                },
            ],
        }
    }

    #[test]
    fn normalize_examples() {
        let b = BBoxPx::new(400.0, 400.0, 600.0, 600.0);
        assert_eq!(normalize_center(&b, 1000, 1000).unwrap(), (0.0, 0.0));
        let b = BBoxPx::new(990.0, 490.0, 1010.0, 510.0);
        assert_eq!(normalize_center(&b, 1000, 1000).unwrap(), (1.0, 0.0));
        let b = BBoxPx::new(100.0, 200.0, 300.0, 400.0);
        let (x, y) = normalize_center(&b, 1000, 1000).unwrap();
        assert!((x + 0.6).abs() < 1e-15 && (y + 0.4).abs() < 1e-15);
        assert_eq!(normalize_center(&BBoxPx::empty(), 10, 10), Err(LabelError::EmptyBox));
    }

    #[test]
    fn crop_examples() {
        let full = isotropic_crop(&BBoxPx::new(0.0, 0.0, 1000.0, 1000.0), 1000, 1000).unwrap();
        assert_eq!(full.window.as_array(), [0.0, 0.0, 1000.0, 1000.0]);
        assert_eq!(full.w2, 1.0);
        let sq = isotropic_crop(&BBoxPx::new(450.0, 450.0, 550.0, 550.0), 1000, 1000).unwrap();
        assert_eq!(sq.window.as_array(), [450.0, 450.0, 550.0, 550.0]);
        assert_eq!(sq.w2, 1.0);
        let wide = isotropic_crop(&BBoxPx::new(450.0, 225.0, 550.0, 275.0), 1000, 500).unwrap();
        assert_eq!((wide.window.width(), wide.window.height(), wide.w2), (100.0, 50.0, 1.0));
        let small = isotropic_crop(&BBoxPx::new(475.0, 225.0, 525.0, 275.0), 1000, 500).unwrap();
        assert_eq!(
            (small.window.width(), small.window.height(), small.w2),
            (100.0, 50.0, 0.5)
        );
        // near the corner the window is pushed back inside
        let corner = isotropic_crop(&BBoxPx::new(0.0, 0.0, 20.0, 40.0), 1000, 500).unwrap();
        assert_eq!(corner.window.as_array(), [0.0, 0.0, 80.0, 40.0]);
    }

    #[test]
    fn zoom_label_examples() {
        assert_eq!(zoom_label(0.1, 0.1).unwrap(), 0);
        assert_eq!(zoom_label(0.01, 0.04).unwrap(), 100);
        assert_eq!(zoom_label(0.01, 0.16).unwrap(), 200);
        assert!(matches!(zoom_label(0.2, 0.1), Err(LabelError::BadRatios { .. })));
    }

    #[test]
    fn select_examples() {
        let recs = vec![
            record("a", 100, 100, [0.0, 0.0, 50.0, 100.0]), // 0.5
            record("b", 100, 100, [0.0, 0.0, 10.0, 10.0]),  // 0.01
            record("c", 100, 100, [0.0, 0.0, 20.0, 100.0]), // 0.2
        ];
        let picked: Vec<String> = select_smallest(&recs, 2).unwrap().into_iter().map(|r| r.id).collect();
        assert_eq!(picked, vec!["b".to_string(), "c".to_string()]);
        assert_eq!(select_smallest(&recs, 3).unwrap().len(), 3);
        assert!(select_smallest(&recs, 0).unwrap().is_empty());
        assert!(select_smallest(&recs, 4).is_err());
        let tied = vec![
            record("z", 100, 100, [0.0, 0.0, 10.0, 10.0]),
            record("y", 100, 100, [50.0, 50.0, 60.0, 60.0]),
        ];
        assert_eq!(select_smallest(&tied, 1).unwrap()[0].id, "y");
    }

    #[test]
    fn generate_centered_identity() {
        let recs = vec![
            record("r2", 1000, 1000, [450.0, 450.0, 550.0, 550.0]),
            record("r1", 1000, 1000, [100.0, 200.0, 300.0, 400.0]),
            record("bad", 1000, 1000, [100.0, 200.0, 1300.0, 400.0]),
        ];
        let g = generate(
            &recs,
            &identity_model(),
            &DEFAULT_TEMPLATES,
            &GenerateOptions::default(),
        );
        assert_eq!(g.labels.len(), 2);
        assert_eq!(g.skipped.len(), 1);
        assert_eq!(g.skipped[0].id, "bad");
        assert_eq!(g.labels[0].record_id, "r1");
        let centered = &g.labels[1];
        assert_eq!((centered.action.pan, centered.action.tilt), (0, 0));
        // 100x100 in 1000x1000: w2 = 1, w1 = 0.01 -> 50*log2(100)
        assert_eq!(centered.action.zoom, 332);
        assert_eq!(centered.gt_bbox_post.as_array(), [0.0, 0.0, 1000.0, 1000.0]);
        assert!(centered.instruction.contains("red mug"));
        let off = &g.labels[0];
        assert_eq!((off.action.pan, off.action.tilt), (-18, 8));
        let v = TokenVocab::standard(0, 3).unwrap();
        for l in &g.labels {
            assert!(l.w2 >= l.w1);
            let t = encode_action(&l.action, &v).unwrap();
            assert_eq!(decode(&t.ids, &v, DecodeMode::Strict).unwrap(), l.action);
        }
        let again = generate(
            &recs,
            &identity_model(),
            &DEFAULT_TEMPLATES,
            &GenerateOptions::default(),
        );
        assert_eq!(g, again);
    }

    #[test]
    fn generate_interpolates_training_samples() {
        let samples: Vec<(FeatureVec, ActionDelta)> = (0..30)
            .map(|i| {
                let (pan, tilt, zoom) = ((i % 7) - 3, (i % 5) - 2, 10 * (i % 4));
                let f = FeatureVec {
                    x_norm: pan as f64 / 30.0,
                    y_norm: -tilt as f64 / 20.0,
                    w1: 0.5 - zoom as f64 / 100.0,
                    log_zoom_ratio: None,
                };
                (f, ActionDelta::new(pan, tilt, zoom))
            })
            .collect();
        let cfg = RegressorConfig {
            kind: RegressorKind::OlsLinear,
            ..Default::default()
        };
        let (model, report) = fit_actions(&samples, &cfg).unwrap();
        assert!(report.r2.iter().all(|r| 1.0 - r < 1e-9));
        // a record whose features equal sample 4: pan 1, tilt 2, zoom 0 -> w1 0.5
        let (f, a) = samples[4];
        let (cx, cy) = (500.0 + 500.0 * f.x_norm, 500.0 + 500.0 * f.y_norm);
        let half = libm::sqrt(f.w1 * 1e6) / 2.0;
        let r = record("s4", 1000, 1000, [cx - half, cy - half, cx + half, cy + half]);
        let opts = GenerateOptions {
            zoom_source: ZoomSource::Model,
            ..Default::default()
        };
        let g = generate(&[r], &model, &DEFAULT_TEMPLATES, &opts);
        assert_eq!(g.labels[0].action, a);
    }

    proptest! {
        #[test]
        fn center_normalization_inverts(x0 in 0.0f64..900.0, y0 in 0.0f64..400.0, bw in 1.0f64..100.0, bh in 1.0f64..100.0) {
            let b = BBoxPx::new(x0, y0, x0 + bw, y0 + bh);
            let (xn, yn) = normalize_center(&b, 1000, 500).unwrap();
            prop_assert!((xn * 500.0 + 500.0 - b.center().0).abs() < 1e-9);
            prop_assert!((yn * 250.0 + 250.0 - b.center().1).abs() < 1e-9);
        }

        #[test]
        fn crop_window_properties(x0 in 0.0f64..990.0, y0 in 0.0f64..490.0, bw in 1.0f64..1000.0, bh in 1.0f64..500.0) {
            let (w, h) = (1000u32, 500u32);
            let b = BBoxPx::new(x0, y0, (x0 + bw).min(1000.0), (y0 + bh).min(500.0));
            let c = isotropic_crop(&b, w, h).unwrap();
            let win = c.window;
            prop_assert!((win.width() - 2.0 * win.height()).abs() <= 1.0);
            prop_assert!(win.x_min <= b.x_min + 1e-9 && win.x_max >= b.x_max - 1e-9);
            prop_assert!(win.y_min <= b.y_min + 1e-9 && win.y_max >= b.y_max - 1e-9);
            prop_assert!(win.inside(1000.0 + 1e-9, 500.0 + 1e-9));
            let w1 = b.area() / 5e5;
            prop_assert!(c.w2 >= w1);
        }

        #[test]
        fn zoom_label_is_exact_on_powers_of_four(w1 in 1e-4f64..0.003, k in 0u32..4) {
            let w2 = w1 * libm::pow(4.0, k as f64);
            prop_assert_eq!(zoom_label(w1, w2).unwrap(), 100 * k as i32);
        }
    }
}
