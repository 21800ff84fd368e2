//! Raster and volumetric field types.
//!
//! Conventions: the view axis is world Z with the camera on the `+Z` side of
//! the box looking toward `-Z`; image column `x` and row `y` map to world X
//! and Y with row 0 at the bottom of the box (`b_min.y`). Grids are stored
//! x-fastest, then y, then z.

mod encode;
mod laplacian;
mod visibility;

pub use encode::{decode_orientation_rgb, encode_orientation_rgb, RgbRaster};
pub use laplacian::{field_laplacian, laplacian_scalar};
pub use visibility::{build_visibility_index, project_field, VisibilityIndex};

use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};
use crate::geom::{Mat3, Vec2, Vec3};

/// Squared-norm threshold above which a cell counts as hair.
pub const VALID_CELL_NORM_SQ: f32 = 0.5;

/// Axis-aligned world bounds of the modeling volume.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorldBox {
    pub min: Vec3,
    pub max: Vec3,
}

impl WorldBox {
    pub fn new(min: Vec3, max: Vec3) -> Result<Self> {
        let b = WorldBox { min, max };
        b.validate()?;
        Ok(b)
    }

    /// The box every bundled asset is placed in: 2 x 2 x 1.5 world units,
    /// so that 32x32x24 and 128x128x96 grids both have cubic cells.
    pub fn standard() -> Self {
        WorldBox {
            min: [-1.0, -1.0, -0.75],
            max: [1.0, 1.0, 0.75],
        }
    }

    pub fn validate(&self) -> Result<()> {
        for a in 0..3 {
            if !(self.max[a] > self.min[a]) || !self.min[a].is_finite() || !self.max[a].is_finite() {
                return dim_err(format!("degenerate world box {:?}..{:?}", self.min, self.max));
            }
        }
        Ok(())
    }

    pub fn extent(&self) -> Vec3 {
        [
            self.max[0] - self.min[0],
            self.max[1] - self.min[1],
            self.max[2] - self.min[2],
        ]
    }

    pub fn center(&self) -> Vec3 {
        [
            0.5 * (self.min[0] + self.max[0]),
            0.5 * (self.min[1] + self.max[1]),
            0.5 * (self.min[2] + self.max[2]),
        ]
    }

    pub fn diagonal(&self) -> f32 {
        crate::geom::norm(self.extent())
    }

    pub fn contains(&self, p: Vec3) -> bool {
        (0..3).all(|a| p[a] >= self.min[a] && p[a] <= self.max[a])
    }
}

impl Default for WorldBox {
    fn default() -> Self {
        WorldBox::standard()
    }
}

/// Grid resolution plus world placement.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
    pub bbox: WorldBox,
}

impl GridSpec {
    pub fn new(nx: usize, ny: usize, nz: usize, bbox: WorldBox) -> Result<Self> {
        if nx == 0 || ny == 0 || nz == 0 {
            return dim_err(format!("empty grid {nx}x{ny}x{nz}"));
        }
        bbox.validate()?;
        Ok(GridSpec { nx, ny, nz, bbox })
    }

    /// Desk-scale default: 32x32x24 in the standard box.
    pub fn desk() -> Self {
        GridSpec { nx: 32, ny: 32, nz: 24, bbox: WorldBox::standard() }
    }

    /// Reference resolution: 128x128x96 in the standard box.
    pub fn reference() -> Self {
        GridSpec { nx: 128, ny: 128, nz: 96, bbox: WorldBox::standard() }
    }

    /// Grid for an image resolution, keeping the 4:3 image-to-depth ratio.
    pub fn for_resolution(res: usize) -> Self {
        GridSpec {
            nx: res,
            ny: res,
            nz: (res * 3 / 4).max(1),
            bbox: WorldBox::standard(),
        }
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny * self.nz
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn cell_size(&self) -> Vec3 {
        let e = self.bbox.extent();
        [e[0] / self.nx as f32, e[1] / self.ny as f32, e[2] / self.nz as f32]
    }

    /// Shortest cell edge; the strand growth step.
    pub fn min_cell_edge(&self) -> f32 {
        let c = self.cell_size();
        c[0].min(c[1]).min(c[2])
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.nx * (y + self.ny * z)
    }

    #[inline]
    pub fn coords(&self, idx: usize) -> (usize, usize, usize) {
        let x = idx % self.nx;
        let y = (idx / self.nx) % self.ny;
        let z = idx / (self.nx * self.ny);
        (x, y, z)
    }

    /// Cell containing `p`, or `None` when outside the box. The upper box
    /// faces belong to no cell.
    pub fn cell_of(&self, p: Vec3) -> Option<(usize, usize, usize)> {
        let e = self.bbox.extent();
        let dims = [self.nx, self.ny, self.nz];
        let mut c = [0usize; 3];
        for a in 0..3 {
            let f = (p[a] - self.bbox.min[a]) / e[a] * dims[a] as f32;
            if !(f >= 0.0) || f >= dims[a] as f32 {
                return None;
            }
            c[a] = (f.floor() as usize).min(dims[a] - 1);
        }
        Some((c[0], c[1], c[2]))
    }

    pub fn cell_center(&self, x: usize, y: usize, z: usize) -> Vec3 {
        let c = self.cell_size();
        [
            self.bbox.min[0] + (x as f32 + 0.5) * c[0],
            self.bbox.min[1] + (y as f32 + 0.5) * c[1],
            self.bbox.min[2] + (z as f32 + 0.5) * c[2],
        ]
    }

    pub fn same_dims(&self, o: &GridSpec) -> bool {
        self.nx == o.nx && self.ny == o.ny && self.nz == o.nz
    }
}

/// Dense per-pixel 2D direction field; background pixels are exactly zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrientationMap2D {
    pub width: usize,
    pub height: usize,
    pub data: Vec<Vec2>,
}

impl OrientationMap2D {
    pub fn new(width: usize, height: usize) -> Self {
        OrientationMap2D { width, height, data: vec![[0.0, 0.0]; width * height] }
    }

    pub fn from_data(width: usize, height: usize, data: Vec<Vec2>) -> Result<Self> {
        if data.len() != width * height {
            return dim_err(format!("{} values for a {width}x{height} map", data.len()));
        }
        Ok(OrientationMap2D { width, height, data })
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize) -> usize {
        x + self.width * y
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> Vec2 {
        self.data[self.index(x, y)]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: Vec2) {
        let i = self.index(x, y);
        self.data[i] = v;
    }

    #[inline]
    pub fn is_valid_at(&self, i: usize) -> bool {
        let v = self.data[i];
        v[0] != 0.0 || v[1] != 0.0
    }

    pub fn valid_count(&self) -> usize {
        (0..self.data.len()).filter(|&i| self.is_valid_at(i)).count()
    }

    /// Rescales every non-background vector to unit length.
    pub fn normalized(&self) -> Self {
        let data = self
            .data
            .iter()
            .map(|v| {
                let n = (v[0] * v[0] + v[1] * v[1]).sqrt();
                if n > 0.0 {
                    [v[0] / n, v[1] / n]
                } else {
                    [0.0, 0.0]
                }
            })
            .collect();
        OrientationMap2D { width: self.width, height: self.height, data }
    }

    /// Zeroes every pixel outside `mask`.
    pub fn masked(&self, mask: &MaskMap) -> Result<Self> {
        if mask.width != self.width || mask.height != self.height {
            return dim_err("mask and orientation map resolution differ");
        }
        let data = self
            .data
            .iter()
            .zip(&mask.data)
            .map(|(v, &m)| if m != 0 { *v } else { [0.0, 0.0] })
            .collect();
        Ok(OrientationMap2D { width: self.width, height: self.height, data })
    }

    /// Mean squared vector difference over pixels valid in either map;
    /// zero when both maps are empty.
    pub fn mse(&self, other: &OrientationMap2D) -> Result<f64> {
        if other.width != self.width || other.height != self.height {
            return dim_err("orientation maps differ in resolution");
        }
        let (mut sum, mut n) = (0.0f64, 0usize);
        for (i, (a, b)) in self.data.iter().zip(&other.data).enumerate() {
            if self.is_valid_at(i) || other.is_valid_at(i) {
                sum += ((a[0] - b[0]) as f64).powi(2) + ((a[1] - b[1]) as f64).powi(2);
                n += 1;
            }
        }
        Ok(if n == 0 { 0.0 } else { sum / n as f64 })
    }

    pub fn validity_mask(&self) -> MaskMap {
        MaskMap {
            width: self.width,
            height: self.height,
            data: (0..self.data.len()).map(|i| self.is_valid_at(i) as u8).collect(),
        }
    }
}

/// Binary hair-region mask.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskMap {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl MaskMap {
    pub fn new(width: usize, height: usize) -> Self {
        MaskMap { width, height, data: vec![0; width * height] }
    }

    pub fn full(width: usize, height: usize) -> Self {
        MaskMap { width, height, data: vec![1; width * height] }
    }

    pub fn from_data(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != width * height {
            return dim_err(format!("{} values for a {width}x{height} mask", data.len()));
        }
        if data.iter().any(|&v| v > 1) {
            return Err(Error::Invalid("mask values must be 0 or 1".into()));
        }
        Ok(MaskMap { width, height, data })
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[x + self.width * y] != 0
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.data[x + self.width * y] = v as u8;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0).count()
    }
}

/// Normalized bust depth per pixel; 0 means the ray missed the bust.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepthMap {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

impl DepthMap {
    pub fn new(width: usize, height: usize) -> Self {
        DepthMap { width, height, data: vec![0.0; width * height] }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.data[x + self.width * y]
    }
}

/// Per-cell mean strand tangent over a world-space grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VectorField3D {
    pub grid: GridSpec,
    pub data: Vec<Vec3>,
}

impl VectorField3D {
    pub fn zeros(grid: GridSpec) -> Self {
        VectorField3D { grid, data: vec![[0.0; 3]; grid.len()] }
    }

    pub fn from_data(grid: GridSpec, data: Vec<Vec3>) -> Result<Self> {
        if data.len() != grid.len() {
            return dim_err(format!("{} cells for a {}x{}x{} grid", data.len(), grid.nx, grid.ny, grid.nz));
        }
        Ok(VectorField3D { grid, data })
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> Vec3 {
        self.data[self.grid.index(x, y, z)]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, z: usize, v: Vec3) {
        let i = self.grid.index(x, y, z);
        self.data[i] = v;
    }

    #[inline]
    pub fn is_valid_at(&self, i: usize) -> bool {
        crate::geom::norm_sq(self.data[i]) >= VALID_CELL_NORM_SQ
    }

    pub fn valid_count(&self) -> usize {
        (0..self.data.len()).filter(|&i| self.is_valid_at(i)).count()
    }

    pub fn valid_cells(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.data.len()).filter(move |&i| self.is_valid_at(i))
    }
}

/// Rigid view rotation about the box center, in degrees about world X, Y, Z.
/// The rotation applies Y first, then X, then Z.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ViewPose {
    pub x_deg: f64,
    pub y_deg: f64,
    pub z_deg: f64,
}

impl ViewPose {
    pub const IDENTITY: ViewPose = ViewPose { x_deg: 0.0, y_deg: 0.0, z_deg: 0.0 };

    pub fn new(x_deg: f64, y_deg: f64, z_deg: f64) -> Result<Self> {
        if !(x_deg.is_finite() && y_deg.is_finite() && z_deg.is_finite()) {
            return Err(Error::Invalid("pose angles must be finite".into()));
        }
        Ok(ViewPose { x_deg, y_deg, z_deg })
    }

    pub fn yaw(deg: f64) -> Self {
        ViewPose { x_deg: 0.0, y_deg: deg, z_deg: 0.0 }
    }

    pub fn matrix(&self) -> Mat3 {
        Mat3::rot_z(self.z_deg)
            .mul(&Mat3::rot_x(self.x_deg))
            .mul(&Mat3::rot_y(self.y_deg))
    }

    pub fn is_identity(&self) -> bool {
        self.x_deg == 0.0 && self.y_deg == 0.0 && self.z_deg == 0.0
    }
}
