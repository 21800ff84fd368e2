use super::Strand;
use crate::error::{Error, Result};
use crate::geom::{self, Vec3};

/// Per-vertex curvature difference (radians) still counted as a match.
pub const CURVATURE_MATCH_TOL: f32 = 0.1;

/// Turning angle at each interior vertex of a polyline; `len - 2` values.
pub fn turning_angles(points: &[Vec3]) -> Vec<f32> {
    points
        .windows(3)
        .map(|w| geom::angle_between(geom::sub(w[1], w[0]), geom::sub(w[2], w[1])))
        .collect()
}

/// Discrete turning angle per vertex; endpoints copy their interior neighbor.
pub fn strand_curvature(strand: &Strand) -> Result<Vec<f32>> {
    polyline_curvature(&strand.vertices)
}

pub fn polyline_curvature(points: &[Vec3]) -> Result<Vec<f32>> {
    if points.len() < 3 {
        return Err(Error::Invalid(format!(
            "curvature needs at least 3 vertices, got {}",
            points.len()
        )));
    }
    let inner = turning_angles(points);
    let mut out = Vec::with_capacity(points.len());
    out.push(inner[0]);
    out.extend_from_slice(&inner);
    out.push(*inner.last().unwrap());
    Ok(out)
}

/// Longest run of consecutive vertices whose curvatures agree within `tol`,
/// with both profiles aligned at their tips (last vertices).
pub fn longest_matching_run(a: &[f32], b: &[f32], tol: f32) -> usize {
    let n = a.len().min(b.len());
    let mut best = 0;
    let mut run = 0;
    for k in 0..n {
        let x = a[a.len() - 1 - k];
        let y = b[b.len() - 1 - k];
        if (x - y).abs() <= tol {
            run += 1;
            best = best.max(run);
        } else {
            run = 0;
        }
    }
    best
}
