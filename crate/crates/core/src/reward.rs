//! Composite reward and group-normalized advantages.

use alloc::vec::Vec;

use crate::codec::ActionDelta;
use crate::geometry::{iou, BBoxPx};
use crate::math;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RewardError {
    #[error("a group needs at least 2 rewards, got {0}")]
    GroupTooSmall(usize),
    #[error("non-finite reward at index {0}")]
    NonFinite(usize),
    #[error("invalid reward config: {0}")]
    InvalidConfig(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RewardConfig {
    /// Angle error (degrees) at which the reward reaches 0.
    pub angle_tol: f64,
    /// Extra error beyond `angle_tol` at which the penalty saturates at -1.
    pub angle_penalty_span: f64,
    /// Width of the rewarded undershoot band below the true zoom.
    pub zoom_band: f64,
    pub zoom_penalty_span: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            angle_tol: 1.0,
            angle_penalty_span: 10.0,
            zoom_band: 50.0,
            zoom_penalty_span: 50.0,
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<(), RewardError> {
        let spans = [
            self.angle_tol,
            self.angle_penalty_span,
            self.zoom_band,
            self.zoom_penalty_span,
        ];
        if spans.iter().all(|s| *s > 0.0 && s.is_finite()) {
            Ok(())
        } else {
            Err(RewardError::InvalidConfig("all spans must be positive"))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RewardBreakdown {
    pub r_iou: f64,
    pub r_theta1: f64,
    pub r_theta2: f64,
    pub r_zoom: f64,
    pub total: f64,
}

/// 1 at zero error falling linearly to 0 at `angle_tol`, then a linear
/// penalty saturating at -1.
pub fn angle_reward(pred: f64, gt: f64, cfg: &RewardConfig) -> f64 {
    let e = math::abs(pred - gt);
    if e <= cfg.angle_tol {
        1.0 - e / cfg.angle_tol
    } else {
        -((e - cfg.angle_tol) / cfg.angle_penalty_span).min(1.0)
    }
}

/// Linear in the band `[gt - zoom_band, gt]` (1 at `gt`, 0 at the lower
/// edge); outside it a penalty that grows with the distance to the band.
pub fn zoom_reward(pred: f64, gt: f64, cfg: &RewardConfig) -> f64 {
    let lower = gt - cfg.zoom_band;
    if pred >= lower && pred <= gt {
        1.0 - (gt - pred) / cfg.zoom_band
    } else {
        let outside = if pred < lower { lower - pred } else { pred - gt };
        -(outside / cfg.zoom_penalty_span).min(1.0)
    }
}

pub fn composite_reward(
    pred: &ActionDelta,
    gt: &ActionDelta,
    pred_bbox: &BBoxPx,
    gt_bbox: &BBoxPx,
    cfg: &RewardConfig,
) -> RewardBreakdown {
    let r_iou = iou(pred_bbox, gt_bbox);
    let r_theta1 = angle_reward(pred.pan as f64, gt.pan as f64, cfg);
    let r_theta2 = angle_reward(pred.tilt as f64, gt.tilt as f64, cfg);
    let r_zoom = zoom_reward(pred.zoom as f64, gt.zoom as f64, cfg);
    RewardBreakdown {
        r_iou,
        r_theta1,
        r_theta2,
        r_zoom,
        total: (r_iou + r_theta1 + r_theta2 + r_zoom) / 4.0,
    }
}

/// `(r_i - mean) / (std + guard)` with the population standard deviation.
pub fn group_advantages(rewards: &[f64], guard: f64) -> Result<Vec<f64>, RewardError> {
    if rewards.len() < 2 {
        return Err(RewardError::GroupTooSmall(rewards.len()));
    }
    if let Some(i) = rewards.iter().position(|r| !r.is_finite()) {
        return Err(RewardError::NonFinite(i));
    }
    if rewards.iter().all(|r| *r == rewards[0]) {
        return Ok(alloc::vec![0.0; rewards.len()]);
    }
    let n = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    let var = rewards.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / n;
    let denom = math::sqrt(var) + guard;
    Ok(rewards.iter().map(|r| (r - mean) / denom).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn angle_examples() {
        let c = RewardConfig::default();
        assert_eq!(angle_reward(0.0, 0.0, &c), 1.0);
        assert_eq!(angle_reward(1.0, 0.0, &c), 0.0);
        assert_eq!(angle_reward(-11.0, 0.0, &c), -1.0);
        assert_eq!(angle_reward(30.0, 0.0, &c), -1.0);
        assert_eq!(angle_reward(6.0, 0.0, &c), -0.5);
    }

    #[test]
    fn zoom_examples() {
        let c = RewardConfig::default();
        assert_eq!(zoom_reward(120.0, 120.0, &c), 1.0);
        assert_eq!(zoom_reward(70.0, 120.0, &c), 0.0);
        assert_eq!(zoom_reward(170.0, 120.0, &c), -1.0);
        assert_eq!(zoom_reward(95.0, 120.0, &c), 0.5);
        assert_eq!(zoom_reward(45.0, 120.0, &c), -0.5);
    }

    #[test]
    fn band_edges_are_continuous() {
        let c = RewardConfig::default();
        let eps = 1e-13;
        assert!((angle_reward(c.angle_tol - eps, 0.0, &c) - angle_reward(c.angle_tol + eps, 0.0, &c)).abs() < 1e-12);
        let edge = 100.0 - c.zoom_band;
        assert!((zoom_reward(edge - eps, 100.0, &c) - zoom_reward(edge + eps, 100.0, &c)).abs() < 1e-12);
    }

    #[test]
    fn composite_examples() {
        let c = RewardConfig::default();
        let a = ActionDelta::new(5, -3, 120);
        let b = BBoxPx::new(0.0, 0.0, 10.0, 10.0);
        let perfect = composite_reward(&a, &a, &b, &b, &c);
        assert_eq!(perfect.total, 1.0);
        let far = BBoxPx::new(50.0, 50.0, 60.0, 60.0);
        assert_eq!(composite_reward(&a, &a, &b, &far, &c).total, 0.75);
        let worst = composite_reward(&ActionDelta::new(40, 40, 500), &a, &BBoxPx::empty(), &b, &c);
        assert_eq!((worst.r_theta1, worst.r_theta2, worst.r_zoom), (-1.0, -1.0, -1.0));
        assert_eq!(worst.total, -0.75);
        let all_neg = RewardBreakdown {
            r_iou: -1.0,
            r_theta1: -1.0,
            r_theta2: -1.0,
            r_zoom: -1.0,
            total: 0.0,
        };
        assert_eq!(
            (all_neg.r_iou + all_neg.r_theta1 + all_neg.r_theta2 + all_neg.r_zoom) / 4.0,
            -1.0
        );
    }

    #[test]
    fn advantage_examples() {
        assert_eq!(group_advantages(&[0.3; 5], 1e-8).unwrap(), [0.0; 5]);
        let a = group_advantages(&[0.0, 1.0], 1e-8).unwrap();
        assert!((a[0] + 1.0).abs() < 1e-7 && (a[1] - 1.0).abs() < 1e-7);
        let a = group_advantages(&[1.0, 2.0, 3.0], 0.0).unwrap();
        let expect = 1.0 / libm::sqrt(2.0 / 3.0);
        assert!((a[0] + expect).abs() < 1e-12 && a[1] == 0.0 && (a[2] - expect).abs() < 1e-12);
        assert!((expect - 1.2247).abs() < 1e-4);
        assert_eq!(group_advantages(&[1.0], 1e-8), Err(RewardError::GroupTooSmall(1)));
        assert_eq!(group_advantages(&[1.0, f64::NAN], 1e-8), Err(RewardError::NonFinite(1)));
    }

    proptest! {
        #[test]
        fn rewards_are_bounded(p in -200i32..200, t in -200i32..200, z in 0i32..999, gp in -50i32..50, gt in -50i32..50, gz in 0i32..999,
                               b in (0.0f64..50.0, 0.0f64..50.0, 1.0f64..50.0, 1.0f64..50.0)) {
            let c = RewardConfig::default();
            let bb = BBoxPx::new(b.0, b.1, b.0 + b.2, b.1 + b.3);
            let gb = BBoxPx::new(10.0, 10.0, 40.0, 30.0);
            let r = composite_reward(&ActionDelta::new(p, t, z), &ActionDelta::new(gp, gt, gz), &bb, &gb, &c);
            for v in [r.r_iou, r.r_theta1, r.r_theta2, r.r_zoom, r.total] {
                prop_assert!((-1.0..=1.0).contains(&v));
            }
            prop_assert_eq!(r.total, (r.r_iou + r.r_theta1 + r.r_theta2 + r.r_zoom) / 4.0);
        }

        #[test]
        fn advantages_are_standardized(rs in proptest::collection::vec(-1.0f64..1.0, 2..32)) {
            let n = rs.len() as f64;
            let mean = rs.iter().sum::<f64>() / n;
            let var = rs.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / n;
            prop_assume!(var > 1e-6);
            let a = group_advantages(&rs, 0.0).unwrap();
            let am = a.iter().sum::<f64>() / n;
            let astd = libm::sqrt(a.iter().map(|x| (x - am) * (x - am)).sum::<f64>() / n);
            prop_assert!(am.abs() < 1e-12);
            prop_assert!((astd - 1.0).abs() < 1e-9);
        }
    }
}
