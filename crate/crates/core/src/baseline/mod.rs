//! Non-neural backends: Laplace diffusion of sketch directions in 2D and of
//! lifted directions through a hair shell in 3D.
//!
//! This backend is not part of the learned pipeline; it keeps the modeling
//! loop usable without trained weights (`backend=diffusion`).

mod sparse;

pub use sparse::{conjugate_gradient, CgParams, CgReport, CsrBuilder, CsrMatrix};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{DepthMap, GridSpec, MaskMap, OrientationMap2D, VectorField3D};

/// Direction given to mask components no sketch pixel reaches: straight down.
pub const DEFAULT_DIRECTION_2D: [f32; 2] = [0.0, -1.0];

const NONE: u32 = u32::MAX;

/// Graph Laplace problem over `n` nodes. `fixed` nodes are Dirichlet
/// constraints; `soft` nodes are pulled toward their value with `weight`.
/// Returns `None` for nodes whose connected component has neither.
fn solve_laplace<const K: usize>(
    n: usize,
    neighbors: impl Fn(usize, &mut Vec<usize>),
    fixed: &[Option<[f64; K]>],
    soft: Option<(&[Option<[f64; K]>], f64)>,
    cg: &CgParams,
) -> Result<Vec<Option<[f64; K]>>> {
    let soft_at = |i: usize| soft.and_then(|(s, w)| s[i].map(|v| (v, w)));
    // Components reached from any anchor.
    let mut anchored = vec![false; n];
    let mut stack: Vec<usize> = (0..n).filter(|&i| fixed[i].is_some() || soft_at(i).is_some()).collect();
    for &i in &stack {
        anchored[i] = true;
    }
    let mut nb = Vec::with_capacity(8);
    while let Some(i) = stack.pop() {
        nb.clear();
        neighbors(i, &mut nb);
        for &j in &nb {
            if !anchored[j] {
                anchored[j] = true;
                stack.push(j);
            }
        }
    }
    let mut unknown = vec![NONE; n];
    let mut free = Vec::new();
    for i in 0..n {
        if anchored[i] && fixed[i].is_none() {
            unknown[i] = free.len() as u32;
            free.push(i);
        }
    }
    let mut a = CsrBuilder::new(free.len());
    let mut rhs = vec![vec![0.0f64; free.len()]; K];
    for (row, &i) in free.iter().enumerate() {
        nb.clear();
        neighbors(i, &mut nb);
        let mut diag = nb.len() as f64;
        if let Some((v, w)) = soft_at(i) {
            diag += w;
            for c in 0..K {
                rhs[c][row] += w * v[c];
            }
        }
        a.push(row, diag);
        for &j in &nb {
            if let Some(v) = fixed[j] {
                for c in 0..K {
                    rhs[c][row] += v[c];
                }
            } else {
                a.push(unknown[j] as usize, -1.0);
            }
        }
        a.finish_row();
    }
    let a = a.build();
    let mut sol = vec![vec![0.0f64; free.len()]; K];
    for c in 0..K {
        conjugate_gradient(&a, &rhs[c], &mut sol[c], cg)?;
    }
    Ok((0..n)
        .map(|i| {
            if let Some(v) = fixed[i] {
                Some(v)
            } else if unknown[i] != NONE {
                let r = unknown[i] as usize;
                Some(std::array::from_fn(|c| sol[c][r]))
            } else {
                None
            }
        })
        .collect())
}

/// Harmonic interpolation before renormalization, per pixel; `None` outside
/// the mask or in mask components without any sketch pixel.
pub fn diffuse_orientation_2d_raw(
    sketch: &OrientationMap2D,
    mask: &MaskMap,
    cg: &CgParams,
) -> Result<Vec<Option<[f64; 2]>>> {
    let (w, h) = (mask.width, mask.height);
    if sketch.width != w || sketch.height != h {
        return Err(Error::Dimension("sketch and mask sizes differ".into()));
    }
    if mask.count() == 0 {
        return Err(Error::Empty("mask is empty".into()));
    }
    let mut node = vec![NONE; w * h];
    let mut pixels = Vec::new();
    for i in 0..w * h {
        if mask.data[i] != 0 {
            node[i] = pixels.len() as u32;
            pixels.push(i);
        }
    }
    let fixed: Vec<Option<[f64; 2]>> = pixels
        .iter()
        .map(|&i| sketch.is_valid_at(i).then(|| [sketch.data[i][0] as f64, sketch.data[i][1] as f64]))
        .collect();
    if fixed.iter().all(Option::is_none) {
        return Err(Error::Empty("no sketch pixel lies inside the mask".into()));
    }
    let neighbors = |n: usize, out: &mut Vec<usize>| {
        let p = pixels[n];
        let (x, y) = (p % w, p / w);
        let mut add = |q: usize| {
            if node[q] != NONE {
                out.push(node[q] as usize);
            }
        };
        if x > 0 {
            add(p - 1);
        }
        if x + 1 < w {
            add(p + 1);
        }
        if y > 0 {
            add(p - w);
        }
        if y + 1 < h {
            add(p + w);
        }
    };
    let sol = solve_laplace(pixels.len(), neighbors, &fixed, None, cg)?;
    let mut out = vec![None; w * h];
    for (k, &p) in pixels.iter().enumerate() {
        out[p] = sol[k];
    }
    Ok(out)
}

/// Fills the mask by diffusing sketch directions (Dirichlet at sketch pixels,
/// zero normal derivative at the mask border), then renormalizes. Mask
/// components without any sketch pixel point straight down. Pixels where the
/// interpolated vector vanishes are left as background.
pub fn diffuse_orientation_2d(sketch: &OrientationMap2D, mask: &MaskMap) -> Result<OrientationMap2D> {
    let raw = diffuse_orientation_2d_raw(sketch, mask, &CgParams::default())?;
    let mut out = OrientationMap2D::new(mask.width, mask.height);
    for (i, v) in raw.iter().enumerate() {
        if mask.data[i] == 0 {
            continue;
        }
        out.data[i] = match v {
            Some(v) => {
                let n = (v[0] * v[0] + v[1] * v[1]).sqrt();
                if n > 1e-9 {
                    [(v[0] / n) as f32, (v[1] / n) as f32]
                } else {
                    [0.0, 0.0]
                }
            }
            None => DEFAULT_DIRECTION_2D,
        };
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ShellParams {
    /// Cells the shell extends behind its front surface.
    pub thickness_cells: usize,
    /// Front surface sits this many cells in front of the bust.
    pub front_offset_cells: usize,
    /// Pull of the previous field in multi-view updates.
    pub prior_weight: f64,
}

impl Default for ShellParams {
    fn default() -> Self {
        ShellParams { thickness_cells: 12, front_offset_cells: 2, prior_weight: 1.0 }
    }
}

/// Per mask pixel `(pixel, k_front, k_back)` with `k_back <= k_front`.
/// Pixels missing the bust put their front at mid depth.
pub fn hair_shell(mask: &MaskMap, depth: &DepthMap, grid: &GridSpec, p: &ShellParams) -> Result<Vec<(usize, usize, usize)>> {
    if mask.width != grid.nx || mask.height != grid.ny || depth.width != grid.nx || depth.height != grid.ny {
        return Err(Error::Dimension(format!(
            "{}x{} maps do not match a {}x{}x{} grid",
            mask.width, mask.height, grid.nx, grid.ny, grid.nz
        )));
    }
    let nz = grid.nz;
    let mut cols = Vec::new();
    for i in 0..mask.data.len() {
        if mask.data[i] == 0 {
            continue;
        }
        let d = depth.data[i];
        let front = if d > 0.0 {
            let k = ((d * nz as f32).floor() as usize).min(nz - 1);
            (k + p.front_offset_cells).min(nz - 1)
        } else {
            nz / 2
        };
        cols.push((i, front, front.saturating_sub(p.thickness_cells)));
    }
    Ok(cols)
}

fn field_neighbors<'a>(grid: GridSpec, node: &'a [u32], cells: &'a [usize]) -> impl Fn(usize, &mut Vec<usize>) + 'a {
    move |n: usize, out: &mut Vec<usize>| {
        let (x, y, z) = grid.coords(cells[n]);
        let mut add = |xx: usize, yy: usize, zz: usize| {
            let j = node[grid.index(xx, yy, zz)];
            if j != NONE {
                out.push(j as usize);
            }
        };
        if x > 0 {
            add(x - 1, y, z);
        }
        if x + 1 < grid.nx {
            add(x + 1, y, z);
        }
        if y > 0 {
            add(x, y - 1, z);
        }
        if y + 1 < grid.ny {
            add(x, y + 1, z);
        }
        if z > 0 {
            add(x, y, z - 1);
        }
        if z + 1 < grid.nz {
            add(x, y, z + 1);
        }
    }
}

fn solve_shell(
    dense: &OrientationMap2D,
    mask: &MaskMap,
    depth: &DepthMap,
    grid: GridSpec,
    params: &ShellParams,
    prior: Option<&VectorField3D>,
    cg: &CgParams,
) -> Result<Vec<Option<[f64; 3]>>> {
    if dense.width != grid.nx || dense.height != grid.ny {
        return Err(Error::Dimension("dense map does not match the grid".into()));
    }
    if let Some(p) = prior {
        if !p.grid.same_dims(&grid) {
            return Err(Error::Dimension("previous field does not match the grid".into()));
        }
    }
    let cols = hair_shell(mask, depth, &grid, params)?;
    let mut node = vec![NONE; grid.len()];
    let mut cells = Vec::new();
    let mut fixed = Vec::new();
    let mut add_cell = |c: usize, f: Option<[f64; 3]>, node: &mut Vec<u32>| {
        if node[c] == NONE {
            node[c] = cells.len() as u32;
            cells.push(c);
            fixed.push(f);
        } else if f.is_some() {
            fixed[node[c] as usize] = f;
        }
    };
    for &(pix, front, back) in &cols {
        let (x, y) = (pix % grid.nx, pix / grid.nx);
        for k in back..=front {
            let f = (k == front && dense.is_valid_at(pix)).then(|| {
                let v = dense.data[pix];
                [v[0] as f64, v[1] as f64, 0.0]
            });
            add_cell(grid.index(x, y, k), f, &mut node);
        }
    }
    if let Some(p) = prior {
        for c in p.valid_cells() {
            add_cell(c, None, &mut node);
        }
    }
    if cells.is_empty() {
        return Err(Error::Empty("hair shell is empty".into()));
    }
    let soft: Option<Vec<Option<[f64; 3]>>> = prior.map(|p| {
        cells
            .iter()
            .map(|&c| p.is_valid_at(c).then(|| p.data[c].map(|v| v as f64)))
            .collect()
    });
    let sol = solve_laplace(
        cells.len(),
        field_neighbors(grid, &node, &cells),
        &fixed,
        soft.as_deref().map(|s| (s, params.prior_weight)),
        cg,
    )?;
    let mut out = vec![None; grid.len()];
    for (k, &c) in cells.iter().enumerate() {
        out[c] = sol[k];
    }
    Ok(out)
}

fn normalize_cells(grid: GridSpec, raw: &[Option<[f64; 3]>]) -> VectorField3D {
    let mut f = VectorField3D::zeros(grid);
    for (i, v) in raw.iter().enumerate() {
        if let Some(v) = v {
            let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
            if n > 1e-9 {
                f.data[i] = [(v[0] / n) as f32, (v[1] / n) as f32, (v[2] / n) as f32];
            }
        }
    }
    f
}

/// Pre-normalization solution of [`diffuse_field_3d`].
pub fn diffuse_field_3d_raw(
    dense: &OrientationMap2D,
    mask: &MaskMap,
    depth: &DepthMap,
    grid: GridSpec,
    params: &ShellParams,
    cg: &CgParams,
) -> Result<Vec<Option<[f64; 3]>>> {
    solve_shell(dense, mask, depth, grid, params, None, cg)
}

/// Lifts a dense map into a shell volume: each mask column spans from a
/// front cell just ahead of the bust back through `thickness_cells`; front
/// cells take `(dx, dy, 0)` and the rest solve the 3D Laplace equation.
pub fn diffuse_field_3d(
    dense: &OrientationMap2D,
    mask: &MaskMap,
    depth: &DepthMap,
    grid: GridSpec,
    params: &ShellParams,
) -> Result<VectorField3D> {
    let raw = diffuse_field_3d_raw(dense, mask, depth, grid, params, &CgParams::default())?;
    Ok(normalize_cells(grid, &raw))
}

/// Multi-view update: the previous field (already rotated into the current
/// view) acts as a soft constraint of weight `prior_weight` while the new
/// view's front cells are constrained to the new dense map.
pub fn update_field_diffusion(
    prior: &VectorField3D,
    dense: &OrientationMap2D,
    mask: &MaskMap,
    depth: &DepthMap,
    params: &ShellParams,
) -> Result<VectorField3D> {
    let raw = solve_shell(dense, mask, depth, prior.grid, params, Some(prior), &CgParams::default())?;
    Ok(normalize_cells(prior.grid, &raw))
}
