//! Strand-level hair: polylines, the bust and scalp, conversion to fields and
//! growth from fields.

mod bust;
mod curvature;
mod grow;
mod voxelize;

pub use bust::{sample_roots, BustModel, RootSampling, HEAD_CENTER, HEAD_RADIUS};
pub(crate) use bust::{TORSO_CENTER, TORSO_RADII};
pub use curvature::{longest_matching_run, polyline_curvature, strand_curvature, turning_angles, CURVATURE_MATCH_TOL};
pub use grow::{grow_hair, GrowParams};
pub use voxelize::{voxelize_strands, VOXEL_SAMPLES_PER_CELL};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{ViewPose, WorldBox};
use crate::geom::{self, Vec3};

/// Which growth phase produced a strand.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Phase {
    /// Grown from a scalp root.
    #[default]
    Rooted,
    /// Grown from an interior seed cell, possibly connected to a root later.
    Seeded,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Strand {
    pub vertices: Vec<Vec3>,
    /// First vertex lies on the scalp.
    pub rooted: bool,
    #[serde(default)]
    pub phase: Phase,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub color: Option<[f32; 3]>,
}

impl Strand {
    pub fn new(vertices: Vec<Vec3>, rooted: bool) -> Self {
        Strand { vertices, rooted, phase: Phase::Rooted, color: None }
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.vertices.len() < 2 {
            return Err(Error::Invalid(format!("strand has {} vertices", self.vertices.len())));
        }
        if self.vertices.iter().any(|v| v.iter().any(|c| !c.is_finite())) {
            return Err(Error::Invalid("strand has a non-finite vertex".into()));
        }
        if self.vertices.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Invalid("strand has repeated consecutive vertices".into()));
        }
        Ok(())
    }

    pub fn arc_length(&self) -> f32 {
        self.vertices.windows(2).map(|w| geom::dist(w[0], w[1])).sum()
    }

    pub fn root(&self) -> Vec3 {
        self.vertices[0]
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct StrandSet {
    pub strands: Vec<Strand>,
}

impl StrandSet {
    pub fn new(strands: Vec<Strand>) -> Self {
        StrandSet { strands }
    }

    pub fn len(&self) -> usize {
        self.strands.len()
    }

    pub fn is_empty(&self) -> bool {
        self.strands.is_empty()
    }

    pub fn vertex_count(&self) -> usize {
        self.strands.iter().map(Strand::len).sum()
    }

    pub fn validate(&self) -> Result<()> {
        self.strands.iter().try_for_each(Strand::validate)
    }

    pub fn rooted_count(&self) -> usize {
        self.strands.iter().filter(|s| s.rooted).count()
    }

    /// Axis-aligned bounds of all vertices, if any.
    pub fn bounds(&self) -> Option<(Vec3, Vec3)> {
        let mut it = self.strands.iter().flat_map(|s| s.vertices.iter());
        let first = *it.next()?;
        Some(it.fold((first, first), |(lo, hi), v| {
            (
                [lo[0].min(v[0]), lo[1].min(v[1]), lo[2].min(v[2])],
                [hi[0].max(v[0]), hi[1].max(v[1]), hi[2].max(v[2])],
            )
        }))
    }
}

/// Rigid rotation of every vertex about the box center.
pub fn rotate_strands(strands: &StrandSet, pose: &ViewPose, bbox: &WorldBox) -> StrandSet {
    if pose.is_identity() {
        return strands.clone();
    }
    let m = pose.matrix();
    let c = bbox.center();
    StrandSet {
        strands: strands
            .strands
            .iter()
            .map(|s| Strand {
                vertices: s.vertices.iter().map(|&v| m.apply_about(v, c)).collect(),
                ..s.clone()
            })
            .collect(),
    }
}

/// Inverse of [`rotate_strands`] for the same pose.
pub fn unrotate_strands(strands: &StrandSet, pose: &ViewPose, bbox: &WorldBox) -> StrandSet {
    if pose.is_identity() {
        return strands.clone();
    }
    let m = pose.matrix().transpose();
    let c = bbox.center();
    StrandSet {
        strands: strands
            .strands
            .iter()
            .map(|s| Strand {
                vertices: s.vertices.iter().map(|&v| m.apply_about(v, c)).collect(),
                ..s.clone()
            })
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> StrandSet {
        StrandSet::new(vec![
            Strand::new(vec![[0.1, 0.2, 0.3], [0.2, -0.1, 0.0], [0.5, -0.4, -0.2]], true),
            Strand::new(vec![[-0.3, 0.5, 0.1], [-0.35, 0.2, 0.15]], false),
        ])
    }

    fn max_diff(a: &StrandSet, b: &StrandSet) -> f32 {
        a.strands
            .iter()
            .zip(&b.strands)
            .flat_map(|(s, t)| s.vertices.iter().zip(&t.vertices))
            .map(|(p, q)| geom::dist(*p, *q))
            .fold(0.0, f32::max)
    }

    #[test]
    fn identity_rotation_is_exact() {
        let s = sample();
        assert_eq!(rotate_strands(&s, &ViewPose::IDENTITY, &WorldBox::standard()), s);
    }

    #[test]
    fn full_turn_about_y() {
        let s = sample();
        let r = rotate_strands(&s, &ViewPose::yaw(360.0), &WorldBox::standard());
        assert!(max_diff(&s, &r) < 1e-6);
    }

    #[test]
    fn two_quarter_turns_equal_half_turn() {
        let s = sample();
        let b = WorldBox::standard();
        let q = ViewPose::new(0.0, 0.0, 90.0).unwrap();
        let h = ViewPose::new(0.0, 0.0, 180.0).unwrap();
        let twice = rotate_strands(&rotate_strands(&s, &q, &b), &q, &b);
        let once = rotate_strands(&s, &h, &b);
        assert!(max_diff(&twice, &once) < 1e-6);
        assert!(twice.strands.iter().zip(&s.strands).all(|(a, b)| a.len() == b.len()));
    }

    #[test]
    fn rotate_then_unrotate() {
        let s = sample();
        let b = WorldBox::standard();
        let p = ViewPose::new(12.0, -25.0, 7.0).unwrap();
        let back = unrotate_strands(&rotate_strands(&s, &p, &b), &p, &b);
        assert!(max_diff(&s, &back) < 1e-5);
    }

    #[test]
    fn validate_rejects_short_and_repeated() {
        assert!(Strand::new(vec![[0.0; 3]], true).validate().is_err());
        assert!(Strand::new(vec![[0.0; 3], [0.0; 3]], true).validate().is_err());
        assert!(Strand::new(vec![[0.0; 3], [f32::NAN, 0.0, 0.0]], true).validate().is_err());
        assert!(sample().validate().is_ok());
    }
}
