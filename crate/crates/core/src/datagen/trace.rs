//! Sparse sketch maps traced from dense orientation maps.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::OrientationMap2D;

/// 8-neighborhood in a fixed visiting order.
pub const NEIGHBORS: [(i32, i32); 8] = [(1, 0), (1, 1), (0, 1), (-1, 1), (-1, 0), (-1, -1), (0, -1), (1, -1)];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TraceParams {
    /// Number of curves to emit before stopping.
    pub curve_count: usize,
    /// Minimum dot product between a pixel and a candidate neighbor.
    pub agreement_threshold: f32,
    /// Curves with fewer pixels are discarded.
    pub min_length: usize,
    /// Side of the square pixel buckets used to spread seeds.
    pub bucket_size: usize,
    pub seed: u64,
    /// Explicit seed pixels, tried in order before any bucketed seeds.
    pub seeds: Vec<(usize, usize)>,
    /// Use only `seeds`.
    pub explicit_only: bool,
}

impl Default for TraceParams {
    fn default() -> Self {
        TraceParams {
            curve_count: 10,
            agreement_threshold: 0.5,
            min_length: 3,
            bucket_size: 8,
            seed: 0,
            seeds: Vec::new(),
            explicit_only: false,
        }
    }
}

fn unit(v: [f32; 2]) -> [f32; 2] {
    let n = (v[0] * v[0] + v[1] * v[1]).sqrt();
    if n > 0.0 {
        [v[0] / n, v[1] / n]
    } else {
        [0.0, 0.0]
    }
}

/// Seed order: one pixel per bucket per round, buckets and their contents
/// shuffled by the seeded generator.
pub fn bucketed_seed_order(dense: &OrientationMap2D, bucket: usize, seed: u64) -> Vec<(usize, usize)> {
    let bucket = bucket.max(1);
    let bw = dense.width.div_ceil(bucket);
    let bh = dense.height.div_ceil(bucket);
    let mut buckets: Vec<Vec<(usize, usize)>> = vec![Vec::new(); bw * bh];
    for y in 0..dense.height {
        for x in 0..dense.width {
            if dense.is_valid_at(dense.index(x, y)) {
                buckets[x / bucket + bw * (y / bucket)].push((x, y));
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    buckets.retain(|b| !b.is_empty());
    for b in buckets.iter_mut() {
        b.shuffle(&mut rng);
    }
    buckets.shuffle(&mut rng);
    let longest = buckets.iter().map(Vec::len).max().unwrap_or(0);
    let mut order = Vec::new();
    for round in 0..longest {
        for b in &buckets {
            if let Some(&p) = b.get(round) {
                order.push(p);
            }
        }
    }
    order
}

/// Walks from `start` to the best agreeing unvisited neighbor until no
/// neighbor qualifies. A neighbor qualifies when its direction agrees with
/// the current pixel (`dot > threshold`) and it lies ahead of the current
/// direction; among those the walk prefers the step best aligned with the
/// current direction, then the closest direction agreement.
pub fn trace_curve(
    dense: &OrientationMap2D,
    start: (usize, usize),
    threshold: f32,
    visited: &mut [bool],
) -> Vec<(usize, usize)> {
    let mut curve = vec![start];
    visited[dense.index(start.0, start.1)] = true;
    let mut cur = start;
    loop {
        let p = unit(dense.get(cur.0, cur.1));
        let mut best: Option<((usize, usize), f32)> = None;
        for (dx, dy) in NEIGHBORS {
            let (nx, ny) = (cur.0 as i32 + dx, cur.1 as i32 + dy);
            if nx < 0 || ny < 0 || nx >= dense.width as i32 || ny >= dense.height as i32 {
                continue;
            }
            let (nx, ny) = (nx as usize, ny as usize);
            let ni = dense.index(nx, ny);
            if visited[ni] || !dense.is_valid_at(ni) {
                continue;
            }
            let pn = unit(dense.data[ni]);
            let agree = p[0] * pn[0] + p[1] * pn[1];
            if agree <= threshold {
                continue;
            }
            let len = ((dx * dx + dy * dy) as f32).sqrt();
            let ahead = (p[0] * dx as f32 + p[1] * dy as f32) / len;
            if ahead <= 0.0 {
                continue;
            }
            let score = ahead + agree;
            if best.map_or(true, |(_, s)| score > s) {
                best = Some(((nx, ny), score));
            }
        }
        match best {
            Some((n, _)) => {
                visited[dense.index(n.0, n.1)] = true;
                curve.push(n);
                cur = n;
            }
            None => break,
        }
    }
    curve
}

/// Sparse sketch: traced curves carrying the dense map's vectors verbatim.
pub fn trace_sketch_map(dense: &OrientationMap2D, params: &TraceParams) -> Result<OrientationMap2D> {
    if dense.valid_count() == 0 {
        return Err(Error::Empty("dense map has no valid pixels to trace".into()));
    }
    let mut order: Vec<(usize, usize)> = params
        .seeds
        .iter()
        .copied()
        .filter(|&(x, y)| x < dense.width && y < dense.height)
        .collect();
    if !params.explicit_only {
        order.extend(bucketed_seed_order(dense, params.bucket_size, params.seed));
    }
    let mut visited = vec![false; dense.data.len()];
    let mut sketch = OrientationMap2D::new(dense.width, dense.height);
    let mut emitted = 0;
    for (x, y) in order {
        if emitted >= params.curve_count {
            break;
        }
        let i = dense.index(x, y);
        if visited[i] || !dense.is_valid_at(i) {
            continue;
        }
        let curve = trace_curve(dense, (x, y), params.agreement_threshold, &mut visited);
        if curve.len() < params.min_length {
            continue;
        }
        for (cx, cy) in curve {
            sketch.set(cx, cy, dense.get(cx, cy));
        }
        emitted += 1;
    }
    Ok(sketch)
}
