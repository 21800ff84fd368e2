//! User sketches: a closed mask contour plus directed strokes, in map pixel
//! coordinates (x right, y up, pixel centers at `.5`).

use serde::{Deserialize, Serialize};

use crate::baseline::DEFAULT_DIRECTION_2D;
use crate::error::{Error, Result};
use crate::field::{MaskMap, OrientationMap2D};
use crate::geom::Vec2;

/// A contour counts as closed when its ends are this close, pixels.
pub const CLOSE_TOL_PX: f32 = 2.0;

/// Stroke samples are taken at this spacing, pixels.
const STEP_PX: f32 = 0.25;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrokeSet {
    pub width: usize,
    pub height: usize,
    /// Directed polylines; direction follows point order.
    #[serde(default)]
    pub strokes: Vec<Vec<Vec2>>,
    /// Closed hair contour.
    pub contour: Vec<Vec2>,
}

impl StrokeSet {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::Invalid("sketch raster must be non-empty".into()));
        }
        validate_contour(&self.contour)?;
        for (i, s) in self.strokes.iter().enumerate() {
            if s.iter().flatten().any(|v| !v.is_finite()) {
                return Err(Error::Invalid(format!("stroke {i} has non-finite points")));
            }
            if s.windows(2).all(|w| w[0] == w[1]) {
                return Err(Error::Invalid(format!("stroke {i} needs two distinct points")));
            }
        }
        Ok(())
    }

    /// Sketch channel and mask of this submission.
    pub fn rasterize(&self) -> Result<(OrientationMap2D, MaskMap)> {
        self.validate()?;
        let mask = rasterize_contour(&self.contour, self.width, self.height);
        if mask.count() == 0 {
            return Err(Error::Empty("contour encloses no pixel center".into()));
        }
        let sketch = if self.strokes.is_empty() {
            boundary_defaults(&mask)
        } else {
            rasterize_strokes(&self.strokes, &mask)
        };
        Ok((sketch, mask))
    }
}

/// Shoulder-length hair around the default bust with the face left open and
/// four strokes running down from the crown. Used by tests, benches and demos.
pub fn demo_sketch(res: usize) -> StrokeSet {
    let k = res as f32 / 32.0;
    let p = |x: f32, y: f32| [x * k, y * k];
    let arc = |r: f32, from: f32, to: f32, n: usize| -> Vec<Vec2> {
        (0..=n)
            .map(|i| {
                let t = (from + (to - from) * i as f32 / n as f32).to_radians();
                p(16.0 + r * t.cos(), 20.0 + r * t.sin())
            })
            .collect()
    };
    let mut contour = vec![p(7.0, 6.0)];
    contour.extend(arc(9.0, 180.0, 0.0, 24));
    contour.push(p(25.0, 6.0));
    contour.push(p(21.0, 6.0));
    contour.push(p(21.0, 16.0));
    contour.extend(arc(5.0, 0.0, 180.0, 12));
    contour.push(p(11.0, 6.0));
    contour.push(p(7.0, 6.0));
    let strokes = vec![
        vec![p(15.0, 28.0), p(11.0, 25.0), p(9.0, 18.0), p(8.5, 8.0)],
        vec![p(17.0, 28.0), p(21.0, 25.0), p(23.0, 18.0), p(23.5, 8.0)],
        vec![p(16.0, 27.0), p(13.0, 24.5), p(12.0, 21.0)],
        vec![p(16.5, 27.0), p(19.5, 24.5), p(20.0, 21.0)],
    ];
    StrokeSet { width: res, height: res, strokes, contour }
}

/// Closed, finite, and enclosing some area.
pub fn validate_contour(contour: &[Vec2]) -> Result<()> {
    if contour.len() < 3 {
        return Err(Error::Invalid("contour needs at least three points".into()));
    }
    if contour.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Invalid("contour has non-finite points".into()));
    }
    let (a, b) = (contour[0], contour[contour.len() - 1]);
    if (a[0] - b[0]).hypot(a[1] - b[1]) > CLOSE_TOL_PX {
        return Err(Error::Invalid("contour is not closed".into()));
    }
    if polygon_area(contour).abs() < 1e-6 {
        return Err(Error::Invalid("contour encloses no area".into()));
    }
    Ok(())
}

fn polygon_area(p: &[Vec2]) -> f32 {
    let n = p.len();
    0.5 * (0..n).map(|i| p[i][0] * p[(i + 1) % n][1] - p[(i + 1) % n][0] * p[i][1]).sum::<f32>()
}

/// Even-odd scanline fill sampled at pixel centers. Winding direction does
/// not matter.
pub fn rasterize_contour(contour: &[Vec2], width: usize, height: usize) -> MaskMap {
    let mut mask = MaskMap::new(width, height);
    let n = contour.len();
    let mut xs = Vec::new();
    for y in 0..height {
        let yc = y as f32 + 0.5;
        xs.clear();
        for i in 0..n {
            let (a, b) = (contour[i], contour[(i + 1) % n]);
            if (a[1] <= yc) != (b[1] <= yc) {
                xs.push(a[0] + (yc - a[1]) / (b[1] - a[1]) * (b[0] - a[0]));
            }
        }
        xs.sort_by(f32::total_cmp);
        for span in xs.chunks_exact(2) {
            for x in 0..width {
                let xc = x as f32 + 0.5;
                if xc >= span[0] && xc < span[1] {
                    mask.set(x, y, true);
                }
            }
        }
    }
    mask
}

/// Writes each stroke's segment direction into the pixels it crosses,
/// clipped to `mask`. Later strokes overwrite earlier ones.
pub fn rasterize_strokes(strokes: &[Vec<Vec2>], mask: &MaskMap) -> OrientationMap2D {
    let (w, h) = (mask.width, mask.height);
    let mut map = OrientationMap2D::new(w, h);
    for s in strokes {
        for seg in s.windows(2) {
            let (a, b) = (seg[0], seg[1]);
            let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
            let len = dx.hypot(dy);
            if len == 0.0 {
                continue;
            }
            let d = [dx / len, dy / len];
            let steps = (len / STEP_PX).ceil() as usize;
            for k in 0..=steps {
                let t = k as f32 / steps as f32;
                let (px, py) = (a[0] + t * dx, a[1] + t * dy);
                if px < 0.0 || py < 0.0 {
                    continue;
                }
                let (x, y) = (px as usize, py as usize);
                if x < w && y < h && mask.get(x, y) {
                    map.set(x, y, d);
                }
            }
        }
    }
    map
}

/// Stroke-free submissions: the top boundary of the mask points down.
pub fn boundary_defaults(mask: &MaskMap) -> OrientationMap2D {
    let mut map = OrientationMap2D::new(mask.width, mask.height);
    for y in 0..mask.height {
        for x in 0..mask.width {
            if mask.get(x, y) && (y + 1 == mask.height || !mask.get(x, y + 1)) {
                map.set(x, y, DEFAULT_DIRECTION_2D);
            }
        }
    }
    map
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn square(x0: f32, y0: f32, x1: f32, y1: f32) -> Vec<Vec2> {
        vec![[x0, y0], [x1, y0], [x1, y1], [x0, y1], [x0, y0]]
    }

    #[test]
    fn square_mask_counts_centers() {
        let m = rasterize_contour(&square(2.0, 2.0, 6.0, 5.0), 8, 8);
        assert_eq!(m.count(), 12);
        assert!(m.get(2, 2) && m.get(5, 4) && !m.get(6, 4) && !m.get(2, 5));
    }

    #[test]
    fn open_contour_rejected() {
        let s = StrokeSet { width: 8, height: 8, strokes: vec![], contour: vec![[1.0, 1.0], [6.0, 1.0], [6.0, 6.0]] };
        assert!(matches!(s.rasterize(), Err(Error::Invalid(_))));
    }

    #[test]
    fn degenerate_stroke_rejected() {
        let s = StrokeSet { width: 8, height: 8, strokes: vec![vec![[3.0, 3.0], [3.0, 3.0]]], contour: square(1.0, 1.0, 7.0, 7.0) };
        assert!(s.validate().is_err());
    }

    #[test]
    fn strokes_follow_draw_order_and_stay_in_mask() {
        let s = StrokeSet {
            width: 16,
            height: 16,
            strokes: vec![vec![[0.5, 8.5], [15.5, 8.5]]],
            contour: square(4.0, 4.0, 12.0, 12.0),
        };
        let (sketch, mask) = s.rasterize().unwrap();
        assert_eq!(sketch.valid_count(), 8);
        for x in 4..12 {
            assert_eq!(sketch.get(x, 8), [1.0, 0.0]);
        }
        for i in 0..sketch.data.len() {
            assert!(!sketch.is_valid_at(i) || mask.data[i] != 0);
        }
    }

    #[test]
    fn pure_mask_points_down_along_top() {
        let s = StrokeSet { width: 8, height: 8, strokes: vec![], contour: square(2.0, 2.0, 6.0, 5.0) };
        let (sketch, _) = s.rasterize().unwrap();
        assert_eq!(sketch.valid_count(), 4);
        for x in 2..6 {
            assert_eq!(sketch.get(x, 4), DEFAULT_DIRECTION_2D);
        }
    }

    #[test]
    fn demo_sketch_is_valid_at_several_sizes() {
        for res in [16, 32, 64] {
            let (sketch, mask) = demo_sketch(res).rasterize().unwrap();
            assert!(mask.count() > res * res / 8, "{res}: {}", mask.count());
            assert!(sketch.valid_count() > 0);
            // The face stays open.
            assert!(!mask.get(res / 2, res * 18 / 32));
        }
    }

    proptest! {
        #[test]
        fn fill_ignores_winding(pts in prop::collection::vec((0.0f32..16.0, 0.0f32..16.0), 3..8)) {
            let mut c: Vec<Vec2> = pts.iter().map(|&(x, y)| [x, y]).collect();
            c.push(c[0]);
            let fwd = rasterize_contour(&c, 16, 16);
            c.reverse();
            prop_assert_eq!(fwd, rasterize_contour(&c, 16, 16));
        }
    }
}
