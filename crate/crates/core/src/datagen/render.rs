//! Orthographic rasterization of strands and the bust along the view axis.

use crate::field::{DepthMap, MaskMap, OrientationMap2D, ViewPose, WorldBox};
use crate::geom::{self, Vec3};
use crate::strands::{rotate_strands, BustModel, StrandSet};

/// Image size plus the world box it covers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RasterSpec {
    pub width: usize,
    pub height: usize,
    pub bbox: WorldBox,
}

impl RasterSpec {
    pub fn square(res: usize) -> Self {
        RasterSpec { width: res, height: res, bbox: WorldBox::standard() }
    }

    /// Continuous pixel coordinates of a world point (pixel centers at `.5`).
    #[inline]
    pub fn to_pixel(&self, p: Vec3) -> [f32; 2] {
        let e = self.bbox.extent();
        [
            (p[0] - self.bbox.min[0]) / e[0] * self.width as f32,
            (p[1] - self.bbox.min[1]) / e[1] * self.height as f32,
        ]
    }

    /// World XY of a pixel center.
    #[inline]
    pub fn pixel_center(&self, x: usize, y: usize) -> [f32; 2] {
        let e = self.bbox.extent();
        [
            self.bbox.min[0] + (x as f32 + 0.5) * e[0] / self.width as f32,
            self.bbox.min[1] + (y as f32 + 0.5) * e[1] / self.height as f32,
        ]
    }

    #[inline]
    pub fn pixel_of(&self, q: [f32; 2]) -> Option<(usize, usize)> {
        if !(q[0] >= 0.0 && q[1] >= 0.0) {
            return None;
        }
        let (x, y) = (q[0].floor() as usize, q[1].floor() as usize);
        (x < self.width && y < self.height).then_some((x, y))
    }
}

/// Calls `visit(x, y, depth)` for every pixel sample of the segment `a -> b`
/// (both already in view space). Samples are taken at most half a pixel
/// apart; a pixel may be visited more than once.
pub fn raster_segment(spec: &RasterSpec, a: Vec3, b: Vec3, mut visit: impl FnMut(usize, usize, f32)) {
    let pa = spec.to_pixel(a);
    let pb = spec.to_pixel(b);
    let span = (pb[0] - pa[0]).abs().max((pb[1] - pa[1]).abs());
    let n = ((2.0 * span).ceil() as usize).max(1);
    for k in 0..=n {
        let t = k as f32 / n as f32;
        let q = [pa[0] + (pb[0] - pa[0]) * t, pa[1] + (pb[1] - pa[1]) * t];
        if let Some((x, y)) = spec.pixel_of(q) {
            visit(x, y, a[2] + (b[2] - a[2]) * t);
        }
    }
}

/// Projected unit tangent of a view-space segment, or `None` when the
/// segment points along the view axis.
pub fn projected_tangent(a: Vec3, b: Vec3) -> Option<[f32; 2]> {
    let d = [b[0] - a[0], b[1] - a[1]];
    let n = (d[0] * d[0] + d[1] * d[1]).sqrt();
    let full = geom::dist(a, b);
    (full > 0.0 && n > 1e-3 * full).then(|| [d[0] / n, d[1] / n])
}

/// Per-pixel tangent of the front-most (largest view z) covering segment.
pub fn render_orientation_map(strands: &StrandSet, pose: &ViewPose, spec: &RasterSpec) -> OrientationMap2D {
    let view = rotate_strands(strands, pose, &spec.bbox);
    let mut map = OrientationMap2D::new(spec.width, spec.height);
    let mut zbuf = vec![f32::NEG_INFINITY; spec.width * spec.height];
    for s in &view.strands {
        for w in s.vertices.windows(2) {
            let Some(t) = projected_tangent(w[0], w[1]) else { continue };
            raster_segment(spec, w[0], w[1], |x, y, z| {
                let i = x + spec.width * y;
                if z > zbuf[i] {
                    zbuf[i] = z;
                    map.data[i] = t;
                }
            });
        }
    }
    map
}

/// Binary coverage of all strand segments.
pub fn render_mask(strands: &StrandSet, pose: &ViewPose, spec: &RasterSpec) -> MaskMap {
    let view = rotate_strands(strands, pose, &spec.bbox);
    let mut mask = MaskMap::new(spec.width, spec.height);
    for s in &view.strands {
        for w in s.vertices.windows(2) {
            raster_segment(spec, w[0], w[1], |x, y, _| mask.set(x, y, true));
        }
    }
    mask
}

/// Normalized depth `(p_z - b_min_z) / (b_max_z - b_min_z)` of the first
/// bust surface hit by each pixel ray; misses stay 0.
pub fn render_bust_depth(bust: &BustModel, pose: &ViewPose, spec: &RasterSpec) -> DepthMap {
    let m = pose.matrix();
    let c = spec.bbox.center();
    let verts: Vec<Vec3> = if pose.is_identity() {
        bust.vertices.clone()
    } else {
        bust.vertices.iter().map(|&v| m.apply_about(v, c)).collect()
    };
    let mut depth = DepthMap::new(spec.width, spec.height);
    let mut best = vec![f32::NEG_INFINITY; spec.width * spec.height];
    for f in &bust.faces {
        let (a, b, cc) = (verts[f[0] as usize], verts[f[1] as usize], verts[f[2] as usize]);
        let lo = spec.to_pixel([a[0].min(b[0]).min(cc[0]), a[1].min(b[1]).min(cc[1]), 0.0]);
        let hi = spec.to_pixel([a[0].max(b[0]).max(cc[0]), a[1].max(b[1]).max(cc[1]), 0.0]);
        let x0 = (lo[0] - 0.5).floor().max(0.0) as usize;
        let y0 = (lo[1] - 0.5).floor().max(0.0) as usize;
        let x1 = ((hi[0] + 0.5).ceil().max(0.0) as usize).min(spec.width);
        let y1 = ((hi[1] + 0.5).ceil().max(0.0) as usize).min(spec.height);
        for y in y0..y1 {
            for x in x0..x1 {
                let pc = spec.pixel_center(x, y);
                if let Some(z) = geom::intersect_z_line(pc[0], pc[1], a, b, cc) {
                    let i = x + spec.width * y;
                    if z > best[i] && z >= spec.bbox.min[2] && z <= spec.bbox.max[2] {
                        best[i] = z;
                    }
                }
            }
        }
    }
    let (zmin, zmax) = (spec.bbox.min[2], spec.bbox.max[2]);
    for (d, &z) in depth.data.iter_mut().zip(&best) {
        if z.is_finite() {
            *d = (z - zmin) / (zmax - zmin);
        }
    }
    depth
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::strands::Strand;

    #[test]
    fn vertical_strand_renders_one_column() {
        let spec = RasterSpec::square(16);
        let x = spec.pixel_center(5, 0)[0];
        let s = StrandSet::new(vec![Strand::new(vec![[x, -0.5, 0.0], [x, 0.5, 0.0]], true)]);
        let m = render_orientation_map(&s, &ViewPose::IDENTITY, &spec);
        for y in 0..16 {
            for xx in 0..16 {
                let v = m.get(xx, y);
                if xx == 5 && (4..12).contains(&y) {
                    assert_eq!(v, [0.0, 1.0], "pixel {xx},{y}");
                } else if xx != 5 {
                    assert_eq!(v, [0.0, 0.0]);
                }
            }
        }
    }

    #[test]
    fn nearer_strand_wins_at_crossing() {
        let spec = RasterSpec::square(16);
        let c = spec.pixel_center(8, 8);
        let s = StrandSet::new(vec![
            Strand::new(vec![[c[0] - 0.5, c[1], 0.3], [c[0] + 0.5, c[1], 0.3]], true),
            Strand::new(vec![[c[0], c[1] - 0.5, -0.2], [c[0], c[1] + 0.5, -0.2]], true),
        ]);
        let m = render_orientation_map(&s, &ViewPose::IDENTITY, &spec);
        assert_eq!(m.get(8, 8), [1.0, 0.0]);
    }

    #[test]
    fn empty_set_gives_empty_mask() {
        let m = render_mask(&StrandSet::default(), &ViewPose::IDENTITY, &RasterSpec::square(8));
        assert_eq!(m.count(), 0);
    }

    fn plane(z: f32) -> BustModel {
        BustModel {
            vertices: vec![[-0.5, -0.5, z], [0.5, -0.5, z], [0.5, 0.5, z], [-0.5, 0.5, z]],
            faces: vec![[0, 1, 2], [0, 2, 3]],
            scalp_faces: vec![0],
            bbox: WorldBox::standard(),
        }
    }

    #[test]
    fn depth_of_planes() {
        let spec = RasterSpec::square(8);
        for (z, expected) in [(-0.75, 0.0), (0.75, 1.0), (0.0, 0.5)] {
            let d = render_bust_depth(&plane(z), &ViewPose::IDENTITY, &spec);
            assert!((d.get(4, 4) - expected).abs() < 1e-6, "z={z}: {}", d.get(4, 4));
            assert_eq!(d.get(0, 0), 0.0);
        }
    }
}
