//! Pan/tilt/zoom camera geometry.
//!
//! World frame: `y` up, azimuth 0 looking down `+z`, positive azimuth turns
//! right, positive elevation looks up. The gimbal applies pan about the world
//! vertical first and tilt about the camera's horizontal axis second. Image
//! coordinates have their origin at the top-left corner with `v` growing
//! downwards.

use alloc::string::String;

use crate::codec::ActionDelta;
use crate::math::{self, DEG};

/// Zoom units at which the default lens saturates.
pub const DEFAULT_ZOOM_MAX: f64 = 999.0;

/// Zoom units per doubling of linear magnification.
pub const UNITS_PER_DOUBLING: f64 = 100.0;

/// Largest fraction of the frame side the oracle lets a target grow to.
pub const FIT_MARGIN: f64 = 0.95;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GeometryError {
    #[error("zoom units must be non-negative, got {0}")]
    NegativeZoom(f64),
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(&'static str),
    #[error("invalid target `{id}`: {reason}")]
    InvalidTarget { id: String, reason: &'static str },
    #[error("target `{0}` is outside the camera's front hemisphere")]
    OutOfFrontHemisphere(String),
    #[error("fill ratio must be in (0, 1), got {0}")]
    InvalidFillRatio(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CameraIntrinsics {
    pub image_w: u32,
    pub image_h: u32,
    /// Horizontal field of view in degrees at zoom 0.
    pub hfov_base: f64,
    pub zoom_max: f64,
}

impl Default for CameraIntrinsics {
    fn default() -> Self {
        Self {
            image_w: 640,
            image_h: 480,
            hfov_base: 60.0,
            zoom_max: DEFAULT_ZOOM_MAX,
        }
    }
}

impl CameraIntrinsics {
    pub fn new(image_w: u32, image_h: u32, hfov_base: f64) -> Result<Self, GeometryError> {
        let k = Self {
            image_w,
            image_h,
            hfov_base,
            zoom_max: DEFAULT_ZOOM_MAX,
        };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        if self.image_w == 0 || self.image_h == 0 {
            return Err(GeometryError::InvalidIntrinsics("image size must be positive"));
        }
        if !(self.hfov_base > 0.0 && self.hfov_base < 180.0) {
            return Err(GeometryError::InvalidIntrinsics("hfov_base must be in (0, 180)"));
        }
        if !(self.zoom_max >= 0.0 && self.zoom_max.is_finite()) {
            return Err(GeometryError::InvalidIntrinsics("zoom_max must be finite and >= 0"));
        }
        Ok(())
    }

    pub fn width(&self) -> f64 {
        self.image_w as f64
    }

    pub fn height(&self) -> f64 {
        self.image_h as f64
    }

    pub fn image_area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> (f64, f64) {
        (self.width() / 2.0, self.height() / 2.0)
    }

    /// Focal length in pixels at zoom 0.
    pub fn base_focal(&self) -> f64 {
        (self.width() / 2.0) / math::tan(self.hfov_base * DEG / 2.0)
    }

    /// Focal length in pixels at `zoom` units (negative zoom is treated as 0).
    pub fn focal(&self, zoom: f64) -> f64 {
        self.base_focal() * math::exp2(zoom.max(0.0) / UNITS_PER_DOUBLING)
    }
}

/// Linear magnification for a zoom setting: `2^(zoom / 100)`.
pub fn magnification(zoom_units: f64) -> Result<f64, GeometryError> {
    if !(zoom_units >= 0.0) {
        return Err(GeometryError::NegativeZoom(zoom_units));
    }
    Ok(math::exp2(zoom_units / UNITS_PER_DOUBLING))
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CameraState {
    /// Degrees in (-180, 180].
    pub pan: f64,
    /// Degrees in [-90, 90].
    pub tilt: f64,
    /// Zoom units in [0, zoom_max].
    pub zoom: f64,
}

impl CameraState {
    pub fn new(pan: f64, tilt: f64, zoom: f64) -> Self {
        Self { pan, tilt, zoom }
    }
}

/// Wraps an angle into (-180, 180].
pub fn wrap_degrees(x: f64) -> f64 {
    let r = x - 360.0 * math::floor((x + 180.0) / 360.0);
    if r <= -180.0 {
        r + 360.0
    } else {
        r
    }
}

/// Executes an action: pan wraps, tilt and zoom clamp.
pub fn apply_action(state: &CameraState, action: &ActionDelta, zoom_max: f64) -> CameraState {
    CameraState {
        pan: wrap_degrees(state.pan + action.pan as f64),
        tilt: (state.tilt + action.tilt as f64).clamp(-90.0, 90.0),
        zoom: (state.zoom + action.zoom as f64).clamp(0.0, zoom_max),
    }
}

/// Rectangular target facing the camera centre.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TargetSpec {
    pub id: String,
    pub azimuth: f64,
    pub elevation: f64,
    /// Metres from the camera centre.
    pub distance: f64,
    pub width: f64,
    pub height: f64,
    pub phrase: String,
}

impl TargetSpec {
    pub fn validate(&self) -> Result<(), GeometryError> {
        let bad = |reason| GeometryError::InvalidTarget {
            id: self.id.clone(),
            reason,
        };
        if !(self.azimuth.is_finite() && self.elevation.is_finite()) {
            return Err(bad("direction must be finite"));
        }
        if !(-90.0..=90.0).contains(&self.elevation) {
            return Err(bad("elevation must be in [-90, 90]"));
        }
        if !(self.distance > 0.0 && self.distance.is_finite()) {
            return Err(bad("distance must be positive"));
        }
        if !(self.width > 0.0 && self.height > 0.0 && self.width.is_finite() && self.height.is_finite()) {
            return Err(bad("width and height must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Visibility {
    #[default]
    Full,
    Clipped,
    OutOfView,
}

/// Axis-aligned box in pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct BBoxPx {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
    pub visibility: Visibility,
}

impl BBoxPx {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Self {
        Self {
            x_min,
            y_min,
            x_max,
            y_max,
            visibility: Visibility::Full,
        }
    }

    pub fn empty() -> Self {
        Self {
            visibility: Visibility::OutOfView,
            ..Self::default()
        }
    }

    pub fn width(&self) -> f64 {
        (self.x_max - self.x_min).max(0.0)
    }

    pub fn height(&self) -> f64 {
        (self.y_max - self.y_min).max(0.0)
    }

    pub fn area(&self) -> f64 {
        if self.visibility == Visibility::OutOfView {
            0.0
        } else {
            self.width() * self.height()
        }
    }

    pub fn is_empty(&self) -> bool {
        self.area() <= 0.0
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.x_min + self.x_max) / 2.0, (self.y_min + self.y_max) / 2.0)
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.x_min, self.y_min, self.x_max, self.y_max]
    }

    /// Whether the box lies inside a `w x h` frame.
    pub fn inside(&self, w: f64, h: f64) -> bool {
        self.x_min >= 0.0 && self.y_min >= 0.0 && self.x_max <= w && self.y_max <= h
    }
}

/// Intersection over union; 0 when either box is empty.
pub fn iou(a: &BBoxPx, b: &BBoxPx) -> f64 {
    let (area_a, area_b) = (a.area(), b.area());
    if area_a <= 0.0 || area_b <= 0.0 {
        return 0.0;
    }
    let iw = (a.x_max.min(b.x_max) - a.x_min.max(b.x_min)).max(0.0);
    let ih = (a.y_max.min(b.y_max) - a.y_min.max(b.y_min)).max(0.0);
    let inter = iw * ih;
    let union = area_a + area_b - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

/// Box area over image area.
pub fn area_ratio(b: &BBoxPx, k: &CameraIntrinsics) -> f64 {
    b.area() / k.image_area()
}

type Vec3 = [f64; 3];

fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

struct Frame {
    right: Vec3,
    up: Vec3,
    forward: Vec3,
}

/// Orthonormal frame after yawing by `pan` and then pitching by `tilt`.
fn frame(pan_deg: f64, tilt_deg: f64) -> Frame {
    let (sp, cp) = (math::sin(pan_deg * DEG), math::cos(pan_deg * DEG));
    let (st, ct) = (math::sin(tilt_deg * DEG), math::cos(tilt_deg * DEG));
    Frame {
        right: [cp, 0.0, -sp],
        up: [-st * sp, ct, -st * cp],
        forward: [ct * sp, st, ct * cp],
    }
}

fn target_corners(t: &TargetSpec) -> [Vec3; 4] {
    let f = frame(t.azimuth, t.elevation);
    let c = f.forward.map(|x| x * t.distance);
    let (hw, hh) = (t.width / 2.0, t.height / 2.0);
    let corner = |sx: f64, sy: f64| -> Vec3 {
        [
            c[0] + sx * hw * f.right[0] + sy * hh * f.up[0],
            c[1] + sx * hw * f.right[1] + sy * hh * f.up[1],
            c[2] + sx * hw * f.right[2] + sy * hh * f.up[2],
        ]
    };
    [
        corner(-1.0, -1.0),
        corner(1.0, -1.0),
        corner(1.0, 1.0),
        corner(-1.0, 1.0),
    ]
}

/// Unclipped pixel hull of the target, or `None` when any corner is behind
/// the image plane.
pub fn project_unclipped(c: &CameraState, k: &CameraIntrinsics, t: &TargetSpec) -> Option<[f64; 4]> {
    let cam = frame(c.pan, c.tilt);
    let f = k.focal(c.zoom);
    let (cx, cy) = k.center();
    let mut hull = [f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY];
    for p in target_corners(t) {
        let z = dot(p, cam.forward);
        if z <= 1e-9 * t.distance {
            return None;
        }
        let u = cx + f * dot(p, cam.right) / z;
        let v = cy - f * dot(p, cam.up) / z;
        hull[0] = hull[0].min(u);
        hull[1] = hull[1].min(v);
        hull[2] = hull[2].max(u);
        hull[3] = hull[3].max(v);
    }
    Some(hull)
}

/// Pinhole projection of the target's four corners, clipped to the frame.
pub fn project(c: &CameraState, k: &CameraIntrinsics, t: &TargetSpec) -> BBoxPx {
    let Some([x0, y0, x1, y1]) = project_unclipped(c, k, t) else {
        return BBoxPx::empty();
    };
    let (w, h) = (k.width(), k.height());
    let clipped = BBoxPx {
        x_min: x0.clamp(0.0, w),
        y_min: y0.clamp(0.0, h),
        x_max: x1.clamp(0.0, w),
        y_max: y1.clamp(0.0, h),
        visibility: Visibility::Full,
    };
    if clipped.x_max <= clipped.x_min || clipped.y_max <= clipped.y_min {
        return BBoxPx::empty();
    }
    let full = x0 >= 0.0 && y0 >= 0.0 && x1 <= w && y1 <= h;
    BBoxPx {
        visibility: if full { Visibility::Full } else { Visibility::Clipped },
        ..clipped
    }
}

/// Whether the target centre is less than 90 degrees off the optical axis.
pub fn in_front_hemisphere(c: &CameraState, t: &TargetSpec) -> bool {
    let cam = frame(c.pan, c.tilt);
    let dir = frame(t.azimuth, t.elevation).forward;
    dot(dir, cam.forward) > 0.0
}

/// Ground-truth action that centres the target and zooms until it covers
/// `fill_ratio` of the frame (never zooming out).
pub fn oracle_action(
    c: &CameraState,
    k: &CameraIntrinsics,
    t: &TargetSpec,
    fill_ratio: f64,
) -> Result<ActionDelta, GeometryError> {
    if !(fill_ratio > 0.0 && fill_ratio < 1.0) {
        return Err(GeometryError::InvalidFillRatio(fill_ratio));
    }
    t.validate()?;
    if !in_front_hemisphere(c, t) {
        return Err(GeometryError::OutOfFrontHemisphere(t.id.clone()));
    }
    let pan = math::round_to_i32(wrap_degrees(t.azimuth - c.pan));
    let tilt = math::round_to_i32(t.elevation - c.tilt);

    // Centred, the rectangle sits on the image plane normal so its pixel size
    // is exactly focal * size / distance.
    let f0 = k.base_focal();
    let (w_px, h_px) = (f0 * t.width / t.distance, f0 * t.height / t.distance);
    let ratio0 = w_px * h_px / k.image_area();
    let m_fill = math::sqrt(fill_ratio / ratio0);
    let m_fit = FIT_MARGIN * (k.width() / w_px).min(k.height() / h_px);
    let m_needed = m_fill.min(m_fit);
    let headroom = math::floor((k.zoom_max - c.zoom).max(0.0));
    let dz = (UNITS_PER_DOUBLING * math::log2(m_needed) - c.zoom).clamp(0.0, headroom);
    let zoom = math::round_to_i32(dz).min(headroom as i32);
    Ok(ActionDelta::new(pan, tilt, zoom))
}
