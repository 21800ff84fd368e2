//! Small fixed-size vector helpers used by the geometric modules.

pub type Vec2 = [f32; 2];
pub type Vec3 = [f32; 3];

#[inline]
pub fn add(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

#[inline]
pub fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
pub fn scale(a: Vec3, s: f32) -> Vec3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

#[inline]
pub fn dot(a: Vec3, b: Vec3) -> f32 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

#[inline]
pub fn norm(a: Vec3) -> f32 {
    dot(a, a).sqrt()
}

#[inline]
pub fn norm_sq(a: Vec3) -> f32 {
    dot(a, a)
}

/// Unit vector along `a`, or `None` for (near) zero input.
#[inline]
pub fn normalize(a: Vec3) -> Option<Vec3> {
    let n = norm(a);
    if n > 1e-12 && n.is_finite() {
        Some(scale(a, 1.0 / n))
    } else {
        None
    }
}

#[inline]
pub fn lerp(a: Vec3, b: Vec3, t: f32) -> Vec3 {
    [
        a[0] + (b[0] - a[0]) * t,
        a[1] + (b[1] - a[1]) * t,
        a[2] + (b[2] - a[2]) * t,
    ]
}

#[inline]
pub fn dist(a: Vec3, b: Vec3) -> f32 {
    norm(sub(a, b))
}

/// Angle between two non-zero vectors in radians, clamped against rounding.
pub fn angle_between(a: Vec3, b: Vec3) -> f32 {
    let na = norm(a);
    let nb = norm(b);
    if na <= 0.0 || nb <= 0.0 {
        return 0.0;
    }
    let c = (dot(a, b) / (na * nb)).clamp(-1.0, 1.0);
    c.acos()
}

/// Angle between two 2D vectors in radians.
pub fn angle_between_2d(a: Vec2, b: Vec2) -> f32 {
    angle_between([a[0], a[1], 0.0], [b[0], b[1], 0.0])
}

/// Row-major 3x3 matrix in double precision.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mat3(pub [[f64; 3]; 3]);

impl Mat3 {
    pub const IDENTITY: Mat3 = Mat3([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]);

    pub fn rot_x(deg: f64) -> Mat3 {
        let (s, c) = deg.to_radians().sin_cos();
        Mat3([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])
    }

    pub fn rot_y(deg: f64) -> Mat3 {
        let (s, c) = deg.to_radians().sin_cos();
        Mat3([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])
    }

    pub fn rot_z(deg: f64) -> Mat3 {
        let (s, c) = deg.to_radians().sin_cos();
        Mat3([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    }

    pub fn mul(&self, o: &Mat3) -> Mat3 {
        let mut r = [[0.0; 3]; 3];
        for (i, row) in r.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = (0..3).map(|k| self.0[i][k] * o.0[k][j]).sum();
            }
        }
        Mat3(r)
    }

    pub fn transpose(&self) -> Mat3 {
        let m = &self.0;
        Mat3([
            [m[0][0], m[1][0], m[2][0]],
            [m[0][1], m[1][1], m[2][1]],
            [m[0][2], m[1][2], m[2][2]],
        ])
    }

    pub fn apply(&self, v: Vec3) -> Vec3 {
        let m = &self.0;
        let (x, y, z) = (v[0] as f64, v[1] as f64, v[2] as f64);
        [
            (m[0][0] * x + m[0][1] * y + m[0][2] * z) as f32,
            (m[1][0] * x + m[1][1] * y + m[1][2] * z) as f32,
            (m[2][0] * x + m[2][1] * y + m[2][2] * z) as f32,
        ]
    }

    /// Rotates `v` about `center`, computing the offset in double precision.
    pub fn apply_about(&self, v: Vec3, center: Vec3) -> Vec3 {
        let m = &self.0;
        let d = [
            v[0] as f64 - center[0] as f64,
            v[1] as f64 - center[1] as f64,
            v[2] as f64 - center[2] as f64,
        ];
        let r = [
            m[0][0] * d[0] + m[0][1] * d[1] + m[0][2] * d[2],
            m[1][0] * d[0] + m[1][1] * d[1] + m[1][2] * d[2],
            m[2][0] * d[0] + m[2][1] * d[1] + m[2][2] * d[2],
        ];
        [
            (r[0] + center[0] as f64) as f32,
            (r[1] + center[1] as f64) as f32,
            (r[2] + center[2] as f64) as f32,
        ]
    }

    pub fn is_identity(&self) -> bool {
        *self == Mat3::IDENTITY
    }
}

/// Closest point on triangle `abc` to `p` (Ericson, Real-Time Collision Detection 5.1.5).
pub fn closest_point_on_triangle(p: Vec3, a: Vec3, b: Vec3, c: Vec3) -> Vec3 {
    let ab = sub(b, a);
    let ac = sub(c, a);
    let ap = sub(p, a);
    let d1 = dot(ab, ap);
    let d2 = dot(ac, ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return a;
    }
    let bp = sub(p, b);
    let d3 = dot(ab, bp);
    let d4 = dot(ac, bp);
    if d3 >= 0.0 && d4 <= d3 {
        return b;
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return add(a, scale(ab, v));
    }
    let cp = sub(p, c);
    let d5 = dot(ab, cp);
    let d6 = dot(ac, cp);
    if d6 >= 0.0 && d5 <= d6 {
        return c;
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return add(a, scale(ac, w));
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return add(b, scale(sub(c, b), w));
    }
    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    add(a, add(scale(ab, v), scale(ac, w)))
}

/// Depth of the intersection of the line `(x, y, z)` (any z) with triangle
/// `abc`, using barycentric coordinates in the XY plane.
pub fn intersect_z_line(x: f32, y: f32, a: Vec3, b: Vec3, c: Vec3) -> Option<f32> {
    let (x, y) = (x as f64, y as f64);
    let (ax, ay, bx, by, cx, cy) = (
        a[0] as f64, a[1] as f64, b[0] as f64, b[1] as f64, c[0] as f64, c[1] as f64,
    );
    let det = (by - cy) * (ax - cx) + (cx - bx) * (ay - cy);
    if det.abs() < 1e-14 {
        return None;
    }
    let l1 = ((by - cy) * (x - cx) + (cx - bx) * (y - cy)) / det;
    let l2 = ((cy - ay) * (x - cx) + (ax - cx) * (y - cy)) / det;
    let l3 = 1.0 - l1 - l2;
    let eps = -1e-9;
    if l1 < eps || l2 < eps || l3 < eps {
        return None;
    }
    Some((l1 * a[2] as f64 + l2 * b[2] as f64 + l3 * c[2] as f64) as f32)
}
