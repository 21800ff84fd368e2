use super::StrandSet;
use crate::error::Result;
use crate::field::{GridSpec, VectorField3D};
use crate::geom;

/// Segments are sampled every `1 / VOXEL_SAMPLES_PER_CELL` of the shortest
/// cell edge.
pub const VOXEL_SAMPLES_PER_CELL: usize = 10;

/// Per-cell arithmetic mean of the unit tangents of all segments that touch
/// the cell. A segment touches every cell containing one of its samples
/// `lerp(a, b, k / n)`, `k = 0..=n`; it contributes once per cell.
pub fn voxelize_strands(strands: &StrandSet, grid: GridSpec) -> Result<VectorField3D> {
    grid.bbox.validate()?;
    let mut sums = vec![[0f64; 3]; grid.len()];
    let mut counts = vec![0u32; grid.len()];
    let step = grid.min_cell_edge() / VOXEL_SAMPLES_PER_CELL as f32;
    let mut touched: Vec<usize> = Vec::new();
    for s in &strands.strands {
        for w in s.vertices.windows(2) {
            let (a, b) = (w[0], w[1]);
            let Some(t) = geom::normalize(geom::sub(b, a)) else { continue };
            let n = ((geom::dist(a, b) / step).ceil() as usize).max(1);
            touched.clear();
            for k in 0..=n {
                let p = geom::lerp(a, b, k as f32 / n as f32);
                if let Some((x, y, z)) = grid.cell_of(p) {
                    let i = grid.index(x, y, z);
                    if !touched.contains(&i) {
                        touched.push(i);
                    }
                }
            }
            for &i in &touched {
                for c in 0..3 {
                    sums[i][c] += t[c] as f64;
                }
                counts[i] += 1;
            }
        }
    }
    let data = sums
        .iter()
        .zip(&counts)
        .map(|(s, &n)| {
            if n == 0 {
                [0.0; 3]
            } else {
                let inv = 1.0 / n as f64;
                [(s[0] * inv) as f32, (s[1] * inv) as f32, (s[2] * inv) as f32]
            }
        })
        .collect();
    VectorField3D::from_data(grid, data)
}
