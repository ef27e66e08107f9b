//! Seeded synthetic target layouts.

use alloc::format;
use alloc::string::ToString;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::geometry::{GeometryError, TargetSpec};
use crate::math;

pub const PHRASES: [&str; 12] = [
    "red mug",
    "blue folder",
    "desk lamp",
    "potted plant",
    "coffee cup",
    "stack of books",
    "yellow sticky note",
    "laptop",
    "wall clock",
    "water bottle",
    "black backpack",
    "toy robot",
];

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Range {
    pub lo: f64,
    pub hi: f64,
}

impl Range {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        if self.lo == self.hi {
            self.lo
        } else {
            rng.random_range(self.lo..self.hi)
        }
    }

    fn ok(&self) -> bool {
        self.lo.is_finite() && self.hi.is_finite() && self.lo <= self.hi
    }
}

/// Uniform sampling ranges; `height = width * aspect`.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SceneRanges {
    pub azimuth: Range,
    pub elevation: Range,
    pub distance: Range,
    pub width: Range,
    pub aspect: Range,
}

impl Default for SceneRanges {
    fn default() -> Self {
        Self {
            azimuth: Range::new(-25.0, 25.0),
            elevation: Range::new(-18.0, 18.0),
            distance: Range::new(1.0, 2.5),
            width: Range::new(0.25, 0.5),
            aspect: Range::new(0.6, 1.6),
        }
    }
}

impl SceneRanges {
    pub fn validate(&self) -> Result<(), GeometryError> {
        let bad = |reason| GeometryError::InvalidTarget {
            id: "ranges".to_string(),
            reason,
        };
        for r in [self.azimuth, self.elevation, self.distance, self.width, self.aspect] {
            if !r.ok() {
                return Err(bad("each range needs finite lo <= hi"));
            }
        }
        if self.azimuth.lo <= -90.0 || self.azimuth.hi >= 90.0 {
            return Err(bad("azimuth must stay inside (-90, 90)"));
        }
        if self.elevation.lo < -90.0 || self.elevation.hi > 90.0 {
            return Err(bad("elevation must stay inside [-90, 90]"));
        }
        if self.distance.lo <= 0.0 || self.width.lo <= 0.0 || self.aspect.lo <= 0.0 {
            return Err(bad("distance, width and aspect must be positive"));
        }
        Ok(())
    }
}

pub fn generate_scene(count: usize, ranges: &SceneRanges, seed: u64) -> Result<Vec<TargetSpec>, GeometryError> {
    ranges.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(math::mix_seed(seed, 0x7363_656e));
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let azimuth = ranges.azimuth.sample(&mut rng);
        let elevation = ranges.elevation.sample(&mut rng);
        let distance = ranges.distance.sample(&mut rng);
        let width = ranges.width.sample(&mut rng);
        let height = width * ranges.aspect.sample(&mut rng);
        let phrase = PHRASES[rng.random_range(0..PHRASES.len())].to_string();
        out.push(TargetSpec {
            id: format!("t{i:05}"),
            azimuth,
            elevation,
            distance,
            width,
            height,
            phrase,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{in_front_hemisphere, CameraState};

    #[test]
    fn empty_and_deterministic() {
        let r = SceneRanges::default();
        assert!(generate_scene(0, &r, 1).unwrap().is_empty());
        assert_eq!(generate_scene(20, &r, 9).unwrap(), generate_scene(20, &r, 9).unwrap());
        assert_ne!(generate_scene(20, &r, 9).unwrap(), generate_scene(20, &r, 10).unwrap());
    }

    #[test]
    fn defaults_stay_in_front() {
        let c = CameraState::default();
        let s = generate_scene(500, &SceneRanges::default(), 3).unwrap();
        assert_eq!(s.len(), 500);
        assert!(s.iter().all(|t| in_front_hemisphere(&c, t) && t.validate().is_ok()));
    }

    #[test]
    fn invalid_ranges_rejected() {
        let r = SceneRanges {
            distance: Range::new(2.0, 1.0),
            ..SceneRanges::default()
        };
        assert!(generate_scene(1, &r, 0).is_err());
        let r = SceneRanges {
            width: Range::new(0.0, 1.0),
            ..SceneRanges::default()
        };
        assert!(r.validate().is_err());
        let r = SceneRanges {
            azimuth: Range::new(-120.0, 0.0),
            ..SceneRanges::default()
        };
        assert!(r.validate().is_err());
    }
}
