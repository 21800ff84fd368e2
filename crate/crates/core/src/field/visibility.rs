use serde::{Deserialize, Serialize};

use super::{GridSpec, OrientationMap2D, VectorField3D, ViewPose};
use crate::error::{dim_err, Result};

/// First valid cell along each pixel's view ray. The image has one pixel per
/// grid column (`width = nx`, `height = ny`).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VisibilityIndex {
    pub width: usize,
    pub height: usize,
    pub dims: (usize, usize, usize),
    pub cells: Vec<Option<u32>>,
}

impl VisibilityIndex {
    pub fn visible_count(&self) -> usize {
        self.cells.iter().filter(|c| c.is_some()).count()
    }

    /// `(pixel, cell)` pairs for every pixel that sees a cell.
    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.cells
            .iter()
            .enumerate()
            .filter_map(|(p, c)| c.map(|c| (p, c as usize)))
    }

    fn check_grid(&self, grid: &GridSpec) -> Result<()> {
        if self.dims != (grid.nx, grid.ny, grid.nz) {
            return dim_err(format!(
                "visibility built for {:?}, field grid is {}x{}x{}",
                self.dims, grid.nx, grid.ny, grid.nz
            ));
        }
        Ok(())
    }
}

/// Walks each pixel ray front to back (from `+Z` toward `-Z` in view space)
/// and records the first valid cell.
pub fn build_visibility_index(field: &VectorField3D, pose: &ViewPose) -> VisibilityIndex {
    let g = field.grid;
    let mut cells = vec![None; g.nx * g.ny];
    if pose.is_identity() {
        for y in 0..g.ny {
            for x in 0..g.nx {
                for z in (0..g.nz).rev() {
                    let i = g.index(x, y, z);
                    if field.is_valid_at(i) {
                        cells[x + g.nx * y] = Some(i as u32);
                        break;
                    }
                }
            }
        }
    } else {
        // View space is the world rotated by the pose; rays are view-space
        // lines of constant (x, y), mapped back with the inverse rotation.
        let inv = pose.matrix().transpose();
        let center = g.bbox.center();
        let cs = g.cell_size();
        let step = 0.5 * g.min_cell_edge();
        let diag = g.bbox.diagonal();
        let n_steps = (diag / step).ceil() as usize + 1;
        for y in 0..g.ny {
            for x in 0..g.nx {
                let vx = g.bbox.min[0] + (x as f32 + 0.5) * cs[0];
                let vy = g.bbox.min[1] + (y as f32 + 0.5) * cs[1];
                let z0 = center[2] + 0.5 * diag;
                for s in 0..n_steps {
                    let p = [vx, vy, z0 - s as f32 * step];
                    let w = inv.apply_about(p, center);
                    if let Some((cx, cy, cz)) = g.cell_of(w) {
                        let i = g.index(cx, cy, cz);
                        if field.is_valid_at(i) {
                            cells[x + g.nx * y] = Some(i as u32);
                            break;
                        }
                    }
                }
            }
        }
    }
    VisibilityIndex { width: g.nx, height: g.ny, dims: (g.nx, g.ny, g.nz), cells }
}

/// Gathers the (x, y) components of each pixel's visible cell.
pub fn project_field(field: &VectorField3D, vis: &VisibilityIndex) -> Result<OrientationMap2D> {
    vis.check_grid(&field.grid)?;
    let mut map = OrientationMap2D::new(vis.width, vis.height);
    for (p, c) in vis.pairs() {
        let v = field.data[c];
        map.data[p] = [v[0], v[1]];
    }
    Ok(map)
}
