//! Strand editing: cutting, mask trimming, wisp selection, Laplacian
//! reshaping, lengthening and recoloring.

use std::ops::Range;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::datagen::RasterSpec;
use crate::error::{Error, Result};
use crate::field::{MaskMap, ViewPose};
use crate::geom::{self, Vec2, Vec3};
use crate::strands::{longest_matching_run, rotate_strands, BustModel, Strand, StrandSet, CURVATURE_MATCH_TOL};

/// Image-space tolerance for stroke intersections, pixels.
pub const CUT_TOLERANCE_PX: f32 = 1.0;
/// Cut points this close (pixels) to an existing vertex snap onto it.
const SNAP_PX: f32 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SelectionSource {
    ScalpRegion,
    SketchMatch,
}

/// Selected strands with the vertex range of each that the edit may move.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EditSelection {
    pub items: Vec<(usize, Range<usize>)>,
    pub source: SelectionSource,
}

impl EditSelection {
    /// Every vertex of every strand.
    pub fn all(strands: &StrandSet) -> Self {
        EditSelection {
            items: strands.strands.iter().enumerate().map(|(i, s)| (i, 0..s.len())).collect(),
            source: SelectionSource::ScalpRegion,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn validate(&self, strands: &StrandSet) -> Result<()> {
        for (i, r) in &self.items {
            let s = strands
                .strands
                .get(*i)
                .ok_or_else(|| Error::Invalid(format!("selected strand {i} does not exist")))?;
            if r.is_empty() || r.end > s.len() {
                return Err(Error::Invalid(format!("bad vertex range {r:?} for strand {i}")));
            }
        }
        Ok(())
    }

    fn contains(&self, i: usize) -> bool {
        self.items.iter().any(|(j, _)| *j == i)
    }
}

/// Strand vertices in pixel coordinates of the posed view.
fn project(strands: &StrandSet, pose: &ViewPose, spec: &RasterSpec) -> Vec<Vec<Vec2>> {
    rotate_strands(strands, pose, &spec.bbox)
        .strands
        .iter()
        .map(|s| s.vertices.iter().map(|&v| spec.to_pixel(v)).collect())
        .collect()
}

fn sub2(a: Vec2, b: Vec2) -> Vec2 {
    [a[0] - b[0], a[1] - b[1]]
}

fn cross2(a: Vec2, b: Vec2) -> f32 {
    a[0] * b[1] - a[1] * b[0]
}

fn dot2(a: Vec2, b: Vec2) -> f32 {
    a[0] * b[0] + a[1] * b[1]
}

/// Parameter of the point on `a->b` closest to `p`, and that distance.
fn closest_on_segment(p: Vec2, a: Vec2, b: Vec2) -> (f32, f32) {
    let d = sub2(b, a);
    let l2 = dot2(d, d);
    let t = if l2 > 0.0 { (dot2(sub2(p, a), d) / l2).clamp(0.0, 1.0) } else { 0.0 };
    let q = [a[0] + d[0] * t, a[1] + d[1] * t];
    let e = sub2(p, q);
    (t, dot2(e, e).sqrt())
}

/// Parameter along `a->b` where it crosses `c->d`. Crossings up to
/// `SNAP_PX` beyond either segment's ends still count, which keeps hits at
/// shared endpoints robust to rounding.
fn crossing_parameter(a: Vec2, b: Vec2, c: Vec2, d: Vec2) -> Option<f32> {
    let r = sub2(b, a);
    let s = sub2(d, c);
    let den = cross2(r, s);
    if den == 0.0 {
        return None;
    }
    let t = cross2(sub2(c, a), s) / den;
    let u = cross2(sub2(c, a), r) / den;
    let slack_t = SNAP_PX / dot2(r, r).sqrt().max(f32::MIN_POSITIVE);
    let slack_u = SNAP_PX / dot2(s, s).sqrt().max(f32::MIN_POSITIVE);
    let ok = (-slack_t..=1.0 + slack_t).contains(&t) && (-slack_u..=1.0 + slack_u).contains(&u);
    ok.then(|| t.clamp(0.0, 1.0))
}

/// Smallest parameter along `a->b` of a point within `tol` of `c->d`,
/// checked at the endpoints of both segments.
fn near_parameter(a: Vec2, b: Vec2, c: Vec2, d: Vec2, tol: f32) -> Option<f32> {
    let mut best: Option<f32> = None;
    let mut consider = |t: f32, dist: f32| {
        if dist <= tol && best.map_or(true, |bt| t < bt) {
            best = Some(t);
        }
    };
    for p in [c, d] {
        let (t, dist) = closest_on_segment(p, a, b);
        consider(t, dist);
    }
    consider(0.0, closest_on_segment(a, c, d).1);
    consider(1.0, closest_on_segment(b, c, d).1);
    best
}

/// First point of the projected polyline, by arc length from the root, that
/// meets the stroke: a proper crossing if there is one, otherwise the first
/// approach within the tolerance.
fn first_hit(p: &[Vec2], stroke: &[Vec2]) -> Option<(usize, f32)> {
    for hit in [
        &(|a, b, c, d| crossing_parameter(a, b, c, d)) as &dyn Fn(Vec2, Vec2, Vec2, Vec2) -> Option<f32>,
        &|a, b, c, d| near_parameter(a, b, c, d, CUT_TOLERANCE_PX),
    ] {
        for k in 0..p.len() - 1 {
            let t = stroke.windows(2).filter_map(|w| hit(p[k], p[k + 1], w[0], w[1])).reduce(f32::min);
            if let Some(t) = t {
                return Some((k, t));
            }
        }
    }
    None
}

/// Truncates every strand whose projection meets the stroke (pixel
/// coordinates) at its first meeting point from the root. Strands left with
/// fewer than two vertices are dropped.
pub fn cut_by_stroke(strands: &StrandSet, stroke: &[Vec2], pose: &ViewPose, spec: &RasterSpec) -> Result<StrandSet> {
    if stroke.len() < 2 {
        return Err(Error::Invalid("cut stroke needs at least 2 points".into()));
    }
    let proj = project(strands, pose, spec);
    let mut out = Vec::with_capacity(strands.len());
    for (s, p) in strands.strands.iter().zip(&proj) {
        let at = |k: usize, t: f32| [p[k][0] + (p[k + 1][0] - p[k][0]) * t, p[k][1] + (p[k + 1][1] - p[k][1]) * t];
        let dist2 = |a: Vec2, b: Vec2| dot2(sub2(a, b), sub2(a, b)).sqrt();
        // A strand already ending on the stroke was cut by it; a hit at the
        // free end removes nothing.
        let end = p[p.len() - 1];
        let ends_on_stroke = stroke.windows(2).any(|w| closest_on_segment(end, w[0], w[1]).1 <= SNAP_PX);
        let cut = first_hit(p, stroke)
            .filter(|_| !ends_on_stroke)
            .filter(|&(k, t)| !(k + 2 == p.len() && dist2(at(k, t), p[k + 1]) <= SNAP_PX));
        let Some((k, t)) = cut else {
            out.push(s.clone());
            continue;
        };
        let mut verts: Vec<Vec3> = s.vertices[..=k].to_vec();
        if dist2(at(k, t), p[k]) > SNAP_PX {
            verts.push(geom::lerp(s.vertices[k], s.vertices[k + 1], t));
        }
        if verts.len() >= 2 {
            out.push(Strand { vertices: verts, ..s.clone() });
        }
    }
    Ok(StrandSet::new(out))
}

/// Keeps, per strand, the vertices up to the first one projecting outside
/// `new_mask`. The flag reports that `new_mask` reaches beyond `old_mask`,
/// meaning the field must be re-synthesized. A full-frame mask carries no
/// silhouette and leaves everything unchanged.
pub fn trim_by_mask(
    strands: &StrandSet,
    new_mask: &MaskMap,
    old_mask: &MaskMap,
    pose: &ViewPose,
    spec: &RasterSpec,
) -> Result<(StrandSet, bool)> {
    if new_mask.width != spec.width || new_mask.height != spec.height || old_mask.data.len() != new_mask.data.len() {
        return Err(Error::Dimension("mask size does not match the session raster".into()));
    }
    if new_mask.count() == new_mask.data.len() {
        return Ok((strands.clone(), false));
    }
    let grows = new_mask.data.iter().zip(&old_mask.data).any(|(&n, &o)| n != 0 && o == 0);
    let proj = project(strands, pose, spec);
    let mut out = Vec::with_capacity(strands.len());
    for (s, p) in strands.strands.iter().zip(&proj) {
        let keep = p
            .iter()
            .take_while(|q| spec.pixel_of(**q).is_some_and(|(x, y)| new_mask.get(x, y)))
            .count();
        if keep == s.len() {
            out.push(s.clone());
        } else if keep >= 2 {
            out.push(Strand { vertices: s.vertices[..keep].to_vec(), ..s.clone() });
        }
    }
    Ok((StrandSet::new(out), grows))
}

/// Payload for [`select_wisp`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum WispQuery {
    /// Rooted strands whose root lies on one of these scalp faces.
    ScalpRegion { faces: Vec<u32> },
    /// Strands whose projection follows the drawn curve (pixel coordinates).
    SketchMatch { curve: Vec<Vec2>, max_distance_px: f32 },
}

/// Scalp faces with a vertex within `radius` of `center`.
pub fn scalp_faces_near(bust: &BustModel, center: Vec3, radius: f32) -> Vec<u32> {
    bust.scalp_faces
        .iter()
        .copied()
        .filter(|&f| bust.triangle(f).iter().any(|&v| geom::dist(v, center) <= radius))
        .collect()
}

/// Resamples a 2D polyline at unit arc-length spacing.
fn resample(poly: &[Vec2], spacing: f32) -> Vec<Vec2> {
    let mut out = vec![poly[0]];
    let mut carry = 0.0f32;
    for w in poly.windows(2) {
        let d = sub2(w[1], w[0]);
        let len = dot2(d, d).sqrt();
        if len == 0.0 {
            continue;
        }
        let mut s = spacing - carry;
        while s <= len {
            out.push([w[0][0] + d[0] * s / len, w[0][1] + d[1] * s / len]);
            s += spacing;
        }
        carry = len - (s - spacing);
    }
    let last = *poly.last().unwrap();
    if out.last() != Some(&last) && out.len() > 1 && dot2(sub2(last, *out.last().unwrap()), sub2(last, *out.last().unwrap())) > 0.25 * spacing * spacing {
        out.push(last);
    }
    out
}

fn curvature_2d(poly: &[Vec2]) -> Option<Vec<f32>> {
    let pts: Vec<Vec3> = poly.iter().map(|p| [p[0], p[1], 0.0]).collect();
    crate::strands::polyline_curvature(&pts).ok()
}

/// Selects a wisp either by scalp faces or by matching a drawn curve. The
/// sketch rule requires the strand's projection to stay within
/// `max_distance_px` of the curve on average and their curvature profiles
/// to agree on more than a third of the curve's resampled vertices.
pub fn select_wisp(strands: &StrandSet, bust: &BustModel, query: &WispQuery, pose: &ViewPose, spec: &RasterSpec) -> Result<EditSelection> {
    match query {
        WispQuery::ScalpRegion { faces } => {
            let items = strands
                .strands
                .iter()
                .enumerate()
                .filter(|(_, s)| s.rooted)
                .filter(|(_, s)| bust.nearest_scalp_face(s.root()).is_some_and(|(f, _)| faces.contains(&f)))
                .map(|(i, s)| (i, 0..s.len()))
                .collect();
            Ok(EditSelection { items, source: SelectionSource::ScalpRegion })
        }
        WispQuery::SketchMatch { curve, max_distance_px } => {
            if curve.len() < 2 {
                return Err(Error::Invalid("wisp sketch needs at least 2 points".into()));
            }
            let sketch = resample(curve, 1.0);
            let ks = curvature_2d(&sketch);
            let proj = project(strands, pose, spec);
            let mut items = Vec::new();
            for (i, p) in proj.iter().enumerate() {
                let mean_dist = sketch
                    .iter()
                    .map(|q| p.windows(2).map(|w| closest_on_segment(*q, w[0], w[1]).1).fold(f32::MAX, f32::min))
                    .sum::<f32>()
                    / sketch.len() as f32;
                if !(mean_dist <= *max_distance_px) {
                    continue;
                }
                let matched = match &ks {
                    Some(ks) => {
                        let rs = resample(p, 1.0);
                        let Some(kp) = curvature_2d(&rs) else { continue };
                        // Align the strand's nearby stretch with the curve by
                        // clipping it to points near the sketch.
                        let near: Vec<f32> = rs
                            .iter()
                            .zip(&kp)
                            .filter(|(q, _)| {
                                sketch.windows(2).any(|w| closest_on_segment(**q, w[0], w[1]).1 <= *max_distance_px)
                            })
                            .map(|(_, k)| *k)
                            .collect();
                        longest_matching_run(ks, &near, CURVATURE_MATCH_TOL) as f32 > ks.len() as f32 / 3.0
                    }
                    // Two-point curves carry no curvature; distance decides.
                    None => true,
                };
                if !matched {
                    continue;
                }
                let close: Vec<usize> = (0..p.len())
                    .filter(|&v| sketch.windows(2).any(|w| closest_on_segment(p[v], w[0], w[1]).1 <= *max_distance_px))
                    .collect();
                let range = match (close.first(), close.last()) {
                    (Some(&a), Some(&b)) => a..b + 1,
                    _ => 0..p.len(),
                };
                items.push((i, range));
            }
            Ok(EditSelection { items, source: SelectionSource::SketchMatch })
        }
    }
}

/// A vertex moved by a displacement during deformation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Handle {
    pub strand: usize,
    pub vertex: usize,
    pub displacement: Vec3,
}

/// Uniform 1D Laplacian of a polyline; endpoints use their single neighbor.
fn laplacian_1d(n: usize) -> DMatrix<f64> {
    let mut l = DMatrix::zeros(n, n);
    for i in 0..n {
        let mut nb = Vec::new();
        if i > 0 {
            nb.push(i - 1);
        }
        if i + 1 < n {
            nb.push(i + 1);
        }
        l[(i, i)] = 1.0;
        for &j in &nb {
            l[(i, j)] = -1.0 / nb.len() as f64;
        }
    }
    l
}

/// Solves `min ||L v' - L v||^2` with the given vertices held at `fixed`.
pub fn deform_polyline(verts: &[Vec3], fixed: &[(usize, Vec3)]) -> Result<Vec<Vec3>> {
    let n = verts.len();
    if fixed.is_empty() {
        return Err(Error::Solver("deformation has no anchored vertex".into()));
    }
    let mut pinned: Vec<Option<Vec3>> = vec![None; n];
    for &(i, p) in fixed {
        if i >= n {
            return Err(Error::Invalid(format!("anchor {i} outside a {n}-vertex strand")));
        }
        pinned[i] = Some(p);
    }
    let free: Vec<usize> = (0..n).filter(|&i| pinned[i].is_none()).collect();
    let mut out: Vec<Vec3> = (0..n).map(|i| pinned[i].unwrap_or(verts[i])).collect();
    if free.is_empty() {
        return Ok(out);
    }
    let l = laplacian_1d(n);
    let lf = DMatrix::from_fn(n, free.len(), |r, c| l[(r, free[c])]);
    let normal = lf.transpose() * &lf;
    let chol = normal
        .cholesky()
        .ok_or_else(|| Error::Solver("deformation system is singular".into()))?;
    for c in 0..3 {
        let v = DVector::from_fn(n, |i, _| verts[i][c] as f64);
        let mut rhs = &l * v;
        for i in 0..n {
            if let Some(p) = pinned[i] {
                for r in 0..n {
                    rhs[r] -= l[(r, i)] * p[c] as f64;
                }
            }
        }
        let x = chol.solve(&(lf.transpose() * rhs));
        for (k, &i) in free.iter().enumerate() {
            out[i][c] = x[k] as f32;
        }
    }
    Ok(out)
}

/// Laplacian reshaping of each selected strand: handles move by their
/// displacement, rooted strands keep their root, and vertices outside the
/// selected range stay put.
pub fn laplacian_deform(strands: &StrandSet, selection: &EditSelection, handles: &[Handle]) -> Result<StrandSet> {
    selection.validate(strands)?;
    for h in handles {
        let inside = selection.items.iter().any(|(i, r)| *i == h.strand && r.contains(&h.vertex));
        if !inside || !h.displacement.iter().all(|v| v.is_finite()) {
            return Err(Error::Invalid(format!("handle on strand {} vertex {} is not selected", h.strand, h.vertex)));
        }
    }
    let mut out = strands.clone();
    for (i, range) in &selection.items {
        let s = &strands.strands[*i];
        let mut fixed: Vec<(usize, Vec3)> = Vec::new();
        for v in 0..s.len() {
            if (v == 0 && s.rooted) || !range.contains(&v) {
                fixed.push((v, s.vertices[v]));
            }
        }
        for h in handles.iter().filter(|h| h.strand == *i) {
            let p = geom::add(s.vertices[h.vertex], h.displacement);
            match fixed.iter_mut().find(|(v, _)| *v == h.vertex) {
                Some(e) => e.1 = p,
                None => fixed.push((h.vertex, p)),
            }
        }
        let verts = deform_polyline(&s.vertices, &fixed)?;
        if verts.iter().any(|v| !v.iter().all(|c| c.is_finite())) {
            return Err(Error::Solver("deformation produced non-finite vertices".into()));
        }
        out.strands[*i].vertices = verts;
    }
    Ok(out)
}

/// Scales selected strands about their root by `factor`.
pub fn scale_length(strands: &StrandSet, selection: &EditSelection, factor: f32) -> Result<StrandSet> {
    if !(factor > 0.0 && factor.is_finite()) {
        return Err(Error::Invalid(format!("length factor must be positive, got {factor}")));
    }
    selection.validate(strands)?;
    let mut out = strands.clone();
    for (i, s) in out.strands.iter_mut().enumerate() {
        if !selection.contains(i) {
            continue;
        }
        let r = s.vertices[0];
        for v in s.vertices.iter_mut().skip(1) {
            *v = geom::add(r, geom::scale(geom::sub(*v, r), factor));
        }
    }
    Ok(out)
}

pub fn recolor(strands: &StrandSet, selection: &EditSelection, color: [f32; 3]) -> Result<StrandSet> {
    if !color.iter().all(|c| (0.0..=1.0).contains(c)) {
        return Err(Error::Invalid("color components must lie in [0, 1]".into()));
    }
    selection.validate(strands)?;
    let mut out = strands.clone();
    for (i, _) in &selection.items {
        out.strands[*i].color = Some(color);
    }
    Ok(out)
}

#[cfg(test)]
mod tests;
