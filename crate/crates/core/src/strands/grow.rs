use std::collections::{HashMap, HashSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::curvature::{longest_matching_run, polyline_curvature};
use super::{Phase, RootSampling, Strand, StrandSet};
use crate::error::{Error, Result};
use crate::field::VectorField3D;
use crate::geom::{self, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GrowParams {
    /// Growth stops when the cell direction turns by more than this.
    pub stop_angle_deg: f32,
    /// Above this turn the step uses the mean of the cell and previous direction.
    pub smooth_angle_deg: f32,
    /// Strand length cap, in multiples of the box diagonal.
    pub max_length_factor: f32,
    /// Run the seeded second phase.
    pub seeded_phase: bool,
    /// Drop seeded strands that could not be connected to a root.
    pub require_rooted: bool,
    /// Upper bound on seed cells tried in the second phase.
    pub max_seeds: usize,
    /// Fraction of a candidate's vertices that must match its guide.
    pub match_fraction: f32,
    pub curvature_tol: f32,
    /// Roots within this many cells of a guide's root count as its neighbors.
    pub connect_radius_cells: f32,
    pub seed: u64,
}

impl Default for GrowParams {
    fn default() -> Self {
        GrowParams {
            stop_angle_deg: 150.0,
            smooth_angle_deg: 60.0,
            max_length_factor: 4.0,
            seeded_phase: true,
            require_rooted: true,
            max_seeds: 2000,
            match_fraction: 1.0 / 3.0,
            curvature_tol: super::CURVATURE_MATCH_TOL,
            connect_radius_cells: 3.0,
            seed: 0,
        }
    }
}

struct Tracer<'a> {
    field: &'a VectorField3D,
    step: f32,
    max_steps: usize,
    cos_stop: f32,
    cos_smooth: f32,
}

impl<'a> Tracer<'a> {
    fn new(field: &'a VectorField3D, params: &GrowParams) -> Self {
        let step = field.grid.min_cell_edge();
        let max_steps = (params.max_length_factor * field.grid.bbox.diagonal() / step).ceil() as usize;
        Tracer {
            field,
            step,
            max_steps,
            cos_stop: params.stop_angle_deg.to_radians().cos(),
            cos_smooth: params.smooth_angle_deg.to_radians().cos(),
        }
    }

    fn valid_cell(&self, p: Vec3) -> Option<usize> {
        let g = &self.field.grid;
        let (x, y, z) = g.cell_of(p)?;
        let i = g.index(x, y, z);
        self.field.is_valid_at(i).then_some(i)
    }

    /// Cell-hopping walk from `start`; `sign = -1` walks against the field.
    fn trace(&self, start: Vec3, sign: f32) -> Vec<Vec3> {
        let mut pts = vec![start];
        let mut pos = start;
        let mut prev: Option<Vec3> = None;
        while pts.len() <= self.max_steps {
            let Some(cell) = self.valid_cell(pos) else { break };
            let Some(raw) = geom::normalize(self.field.data[cell]) else { break };
            let mut d = geom::scale(raw, sign);
            if let Some(p) = prev {
                let c = geom::dot(d, p);
                if c < self.cos_stop {
                    break;
                }
                if c < self.cos_smooth {
                    match geom::normalize(geom::add(d, p)) {
                        Some(m) => d = m,
                        None => break,
                    }
                }
            }
            let next = geom::add(pos, geom::scale(d, self.step));
            if self.valid_cell(next).is_none() || next == pos {
                break;
            }
            pts.push(next);
            pos = next;
            prev = Some(d);
        }
        pts
    }
}

/// Grows strands from scalp roots through `field`, then fills uncovered
/// valid cells with seeded strands that are guided back to a root.
pub fn grow_hair(field: &VectorField3D, roots: &RootSampling, params: &GrowParams) -> Result<StrandSet> {
    if roots.is_empty() {
        return Err(Error::Empty("no root positions to grow from".into()));
    }
    if field.valid_count() == 0 {
        return Ok(StrandSet::default());
    }
    let tracer = Tracer::new(field, params);

    let good: Vec<Strand> = roots
        .points
        .par_iter()
        .filter_map(|&r| {
            let pts = tracer.trace(r, 1.0);
            (pts.len() >= 2).then(|| Strand::new(pts, true))
        })
        .collect();

    let mut out = good.clone();
    if params.seeded_phase && !good.is_empty() {
        out.extend(seeded_phase(&tracer, &good, roots, params));
    }
    Ok(StrandSet::new(out))
}

fn mark_cells(field: &VectorField3D, pts: &[Vec3], visited: &mut [bool]) {
    let g = &field.grid;
    for w in pts.windows(2) {
        for t in [0.0, 0.5, 1.0] {
            if let Some((x, y, z)) = g.cell_of(geom::lerp(w[0], w[1], t)) {
                visited[g.index(x, y, z)] = true;
            }
        }
    }
}

fn seeded_phase(tracer: &Tracer, good: &[Strand], roots: &RootSampling, params: &GrowParams) -> Vec<Strand> {
    let field = tracer.field;
    let g = &field.grid;
    let mut visited = vec![false; g.len()];
    let mut by_cell: HashMap<usize, Vec<usize>> = HashMap::new();
    for (si, s) in good.iter().enumerate() {
        mark_cells(field, &s.vertices, &mut visited);
        for v in &s.vertices {
            if let Some((x, y, z)) = g.cell_of(*v) {
                let e = by_cell.entry(g.index(x, y, z)).or_default();
                if e.last() != Some(&si) {
                    e.push(si);
                }
            }
        }
    }
    let good_curv: Vec<Option<Vec<f32>>> = good.iter().map(|s| polyline_curvature(&s.vertices).ok()).collect();

    let mut seeds: Vec<usize> = field.valid_cells().filter(|&i| !visited[i]).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    seeds.shuffle(&mut rng);
    seeds.truncate(params.max_seeds);

    let mut out = Vec::new();
    for cell in seeds {
        if visited[cell] {
            continue;
        }
        let (x, y, z) = g.coords(cell);
        let c = g.cell_center(x, y, z);
        let fwd = tracer.trace(c, 1.0);
        let bwd = tracer.trace(c, -1.0);
        let mut cand: Vec<Vec3> = bwd.into_iter().rev().collect();
        cand.extend_from_slice(&fwd[1..]);
        mark_cells(field, &cand, &mut visited);
        if cand.len() < 3 {
            continue;
        }
        let connected = guide_and_connect(tracer, &cand, good, &good_curv, &by_cell, roots, params);
        match connected {
            Some(v) => {
                let mut s = Strand::new(v, true);
                s.phase = Phase::Seeded;
                out.push(s);
            }
            None if !params.require_rooted => {
                let mut s = Strand::new(cand, false);
                s.phase = Phase::Seeded;
                out.push(s);
            }
            None => {}
        }
    }
    out
}

fn nearest_vertex(pts: &[Vec3], p: Vec3) -> usize {
    pts.iter()
        .enumerate()
        .min_by(|a, b| geom::dist(*a.1, p).total_cmp(&geom::dist(*b.1, p)))
        .map(|(i, _)| i)
        .unwrap_or(0)
}

fn max_turn_ok(pts: &[Vec3], cos_stop: f32) -> bool {
    pts.windows(3).all(|w| {
        match (geom::normalize(geom::sub(w[1], w[0])), geom::normalize(geom::sub(w[2], w[1]))) {
            (Some(a), Some(b)) => geom::dot(a, b) >= cos_stop,
            _ => false,
        }
    })
}

fn guide_and_connect(
    tracer: &Tracer,
    cand: &[Vec3],
    good: &[Strand],
    good_curv: &[Option<Vec<f32>>],
    by_cell: &HashMap<usize, Vec<usize>>,
    roots: &RootSampling,
    params: &GrowParams,
) -> Option<Vec<Vec3>> {
    let g = &tracer.field.grid;
    let step = tracer.step;

    let mut near: HashSet<usize> = HashSet::new();
    for v in cand {
        let Some((x, y, z)) = g.cell_of(*v) else { continue };
        for dz in -1i64..=1 {
            for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    let (a, b, c) = (x as i64 + dx, y as i64 + dy, z as i64 + dz);
                    if a < 0 || b < 0 || c < 0 || a >= g.nx as i64 || b >= g.ny as i64 || c >= g.nz as i64 {
                        continue;
                    }
                    if let Some(ids) = by_cell.get(&g.index(a as usize, b as usize, c as usize)) {
                        near.extend(ids.iter().copied());
                    }
                }
            }
        }
    }
    let mut near: Vec<usize> = near.into_iter().collect();
    near.sort_unstable();

    let kc = polyline_curvature(cand).ok()?;
    let needed = params.match_fraction * cand.len() as f32;
    let mut best: Option<(usize, usize)> = None;
    for j in near {
        let Some(kg) = &good_curv[j] else { continue };
        let run = longest_matching_run(&kc, kg, params.curvature_tol);
        if run as f32 > needed && best.map_or(true, |(_, r)| run > r) {
            best = Some((j, run));
        }
    }
    let (j, _) = best?;
    let guide = &good[j].vertices;
    let guide_root = guide[0];

    // Grow upstream along the guide until its root vertex is the nearest one.
    let mut ext: Vec<Vec3> = Vec::new();
    let mut pos = cand[0];
    let budget = tracer.max_steps;
    while ext.len() < budget {
        let k = nearest_vertex(guide, pos);
        if k == 0 {
            break;
        }
        let d = geom::normalize(geom::sub(guide[k - 1], guide[k]))?;
        let next = geom::add(pos, geom::scale(d, step));
        if !g.bbox.contains(next) {
            return None;
        }
        ext.push(next);
        pos = next;
    }

    let radius = params.connect_radius_cells * step;
    let root = roots
        .points
        .iter()
        .filter(|r| geom::dist(**r, guide_root) <= radius)
        .min_by(|a, b| geom::dist(**a, pos).total_cmp(&geom::dist(**b, pos)))
        .copied()?;

    // Close the remaining gap to the root in straight steps.
    let gap = geom::dist(root, pos);
    let n = (gap / step).floor() as usize;
    let dir = geom::normalize(geom::sub(root, pos));
    if let Some(d) = dir {
        for i in 1..n {
            let p = geom::add(pos, geom::scale(d, step * i as f32));
            if !g.bbox.contains(p) {
                return None;
            }
            ext.push(p);
        }
    }

    let mut pts = Vec::with_capacity(ext.len() + cand.len() + 1);
    pts.push(root);
    pts.extend(ext.iter().rev().copied());
    pts.extend_from_slice(cand);
    pts.dedup();
    if pts.len() < 2 || !pts.iter().all(|p| g.bbox.contains(*p)) || !max_turn_ok(&pts, tracer.cos_stop) {
        return None;
    }
    Some(pts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{GridSpec, WorldBox};

    fn grid(n: usize) -> GridSpec {
        GridSpec::new(n, n, n, WorldBox::new([0.0; 3], [n as f32; 3]).unwrap()).unwrap()
    }

    fn roots(points: Vec<Vec3>) -> RootSampling {
        let n = points.len();
        RootSampling { points, normals: vec![[0.0, 1.0, 0.0]; n], faces: vec![0; n] }
    }

    fn phase1() -> GrowParams {
        GrowParams { seeded_phase: false, ..Default::default() }
    }

    #[test]
    fn constant_field_grows_straight_to_exit() {
        let g = grid(8);
        let f = VectorField3D::from_data(g, vec![[0.0, 1.0, 0.0]; g.len()]).unwrap();
        let s = grow_hair(&f, &roots(vec![[4.5, 0.5, 4.5]]), &phase1()).unwrap();
        assert_eq!(s.len(), 1);
        let v = &s.strands[0].vertices;
        assert_eq!(v.len(), 8);
        for (k, p) in v.iter().enumerate() {
            assert!((p[1] - (0.5 + k as f32)).abs() < 1e-5);
            assert_eq!((p[0], p[2]), (4.5, 4.5));
        }
        assert!(s.strands[0].rooted);
    }

    #[test]
    fn opposite_cells_stop_growth() {
        let g = grid(4);
        let mut f = VectorField3D::zeros(g);
        f.set(1, 1, 1, [0.0, 1.0, 0.0]);
        f.set(1, 2, 1, [0.0, -1.0, 0.0]);
        let s = grow_hair(&f, &roots(vec![[1.5, 1.5, 1.5]]), &phase1()).unwrap();
        assert_eq!(s.strands[0].vertices, vec![[1.5, 1.5, 1.5], [1.5, 2.5, 1.5]]);
    }

    #[test]
    fn right_angle_uses_mean_direction() {
        let g = grid(6);
        let mut f = VectorField3D::zeros(g);
        f.set(1, 1, 1, [0.0, 1.0, 0.0]);
        f.set(1, 2, 1, [1.0, 0.0, 0.0]);
        for x in 0..6 {
            for y in 2..6 {
                f.set(x, y, 1, [1.0, 0.0, 0.0]);
            }
        }
        let s = grow_hair(&f, &roots(vec![[1.5, 1.5, 1.5]]), &phase1()).unwrap();
        let v = &s.strands[0].vertices;
        let d = geom::normalize(geom::sub(v[2], v[1])).unwrap();
        let h = std::f32::consts::FRAC_1_SQRT_2;
        assert!((d[0] - h).abs() < 1e-5 && (d[1] - h).abs() < 1e-5, "{d:?}");
    }

    #[test]
    fn empty_roots_and_empty_field() {
        let g = grid(4);
        let f = VectorField3D::zeros(g);
        assert!(grow_hair(&f, &RootSampling::default(), &GrowParams::default()).is_err());
        let s = grow_hair(&f, &roots(vec![[1.0, 1.0, 1.0]]), &GrowParams::default()).unwrap();
        assert!(s.is_empty());
    }
}
