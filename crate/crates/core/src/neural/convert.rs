//! Conversions between rasters/fields and network tensors.

use crate::error::{dim_err, Result};
use crate::field::{GridSpec, OrientationMap2D, VectorField3D};

use super::tensor::Tensor;

/// The two vector components of a map as separate channels.
pub fn map_channels(m: &OrientationMap2D) -> Vec<Vec<f32>> {
    vec![m.data.iter().map(|v| v[0]).collect(), m.data.iter().map(|v| v[1]).collect()]
}

/// Stacks channel groups into a `[1, C, 1, H, W]` tensor.
pub fn image_input(groups: &[Vec<Vec<f32>>], w: usize, h: usize) -> Result<Tensor<f32>> {
    let mut data = Vec::new();
    let mut c = 0;
    for ch in groups.iter().flatten() {
        if ch.len() != w * h {
            return dim_err(format!("channel has {} pixels, expected {}", ch.len(), w * h));
        }
        data.extend_from_slice(ch);
        c += 1;
    }
    Tensor::from_vec(&[1, c, 1, h, w], data)
}

/// Batch item `n` of a `[N, 2, 1, H, W]` tensor as a map.
pub fn tensor_to_map(t: &Tensor<f32>, n: usize) -> Result<OrientationMap2D> {
    let [bn, c, d, h, w] = t.dims5()?;
    if n >= bn || c != 2 || d != 1 {
        return dim_err(format!("cannot read a 2-channel map from {:?}", t.shape));
    }
    let base = n * 2 * h * w;
    let data = (0..h * w).map(|p| [t.data[base + p], t.data[base + h * w + p]]).collect();
    OrientationMap2D::from_data(w, h, data)
}

/// `[1, 3, nz, ny, nx]` tensor of a field.
pub fn field_to_tensor(f: &VectorField3D) -> Tensor<f32> {
    let n = f.data.len();
    let mut data = vec![0.0; 3 * n];
    for (i, v) in f.data.iter().enumerate() {
        for c in 0..3 {
            data[c * n + i] = v[c];
        }
    }
    Tensor { shape: vec![1, 3, f.grid.nz, f.grid.ny, f.grid.nx], data, grad: None }
}

/// Batch item `n` of a `[N, 3, nz, ny, nx]` tensor as a field on `grid`.
pub fn tensor_to_field(t: &Tensor<f32>, n: usize, grid: GridSpec) -> Result<VectorField3D> {
    let [bn, c, d, h, w] = t.dims5()?;
    if n >= bn || c != 3 || (w, h, d) != (grid.nx, grid.ny, grid.nz) {
        return dim_err(format!("tensor {:?} does not hold a field on a {}x{}x{} grid", t.shape, grid.nx, grid.ny, grid.nz));
    }
    let cells = grid.len();
    let base = n * 3 * cells;
    let data = (0..cells).map(|i| [t.data[base + i], t.data[base + cells + i], t.data[base + 2 * cells + i]]).collect();
    VectorField3D::from_data(grid, data)
}
