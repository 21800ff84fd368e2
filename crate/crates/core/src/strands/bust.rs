use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::WorldBox;
use crate::geom::{self, Vec3};

/// Head-and-shoulders triangle mesh with a marked scalp region.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BustModel {
    pub vertices: Vec<Vec3>,
    pub faces: Vec<[u32; 3]>,
    /// Face ids forming the scalp; a subset of `faces`.
    pub scalp_faces: Vec<u32>,
    pub bbox: WorldBox,
}

/// Head sphere used by the bundled bust and the procedural hair generator.
pub const HEAD_CENTER: Vec3 = [0.0, 0.25, 0.0];
pub const HEAD_RADIUS: f32 = 0.4;
pub(crate) const TORSO_CENTER: Vec3 = [0.0, -0.92, -0.05];
pub(crate) const TORSO_RADII: Vec3 = [0.72, 0.3, 0.34];

impl BustModel {
    /// Looks up a bundled bust by id.
    pub fn by_id(id: &str) -> Option<BustModel> {
        match id {
            "default" => Some(Self::default_bust()),
            _ => None,
        }
    }

    /// Ellipsoidal head and torso in the standard box. The scalp covers the
    /// top and back of the head and leaves the face and neck free.
    pub fn default_bust() -> BustModel {
        let mut vertices = Vec::new();
        let mut faces = Vec::new();
        let head_start = faces.len();
        push_ellipsoid(&mut vertices, &mut faces, HEAD_CENTER, [HEAD_RADIUS; 3], 24, 32);
        let head_end = faces.len();
        push_ellipsoid(&mut vertices, &mut faces, TORSO_CENTER, TORSO_RADII, 12, 24);
        let mut scalp_faces = Vec::new();
        for f in head_start..head_end {
            let c = face_centroid(&vertices, faces[f]);
            let d = geom::normalize(geom::sub(c, HEAD_CENTER)).unwrap_or([0.0, 1.0, 0.0]);
            let top = d[1] > 0.3;
            let back = d[2] < 0.1 && d[1] > -0.45;
            if top || back {
                scalp_faces.push(f as u32);
            }
        }
        BustModel { vertices, faces, scalp_faces, bbox: WorldBox::standard() }
    }

    pub fn validate(&self) -> Result<()> {
        let nv = self.vertices.len() as u32;
        if self.faces.iter().any(|f| f.iter().any(|&i| i >= nv)) {
            return Err(Error::Invalid("face references a missing vertex".into()));
        }
        let nf = self.faces.len() as u32;
        if self.scalp_faces.iter().any(|&f| f >= nf) {
            return Err(Error::Invalid("scalp face id out of range".into()));
        }
        if self.scalp_faces.is_empty() {
            return Err(Error::Empty("bust has no scalp faces".into()));
        }
        Ok(())
    }

    pub fn triangle(&self, f: u32) -> [Vec3; 3] {
        let t = self.faces[f as usize];
        [
            self.vertices[t[0] as usize],
            self.vertices[t[1] as usize],
            self.vertices[t[2] as usize],
        ]
    }

    pub fn face_normal(&self, f: u32) -> Vec3 {
        let [a, b, c] = self.triangle(f);
        geom::normalize(geom::cross(geom::sub(b, a), geom::sub(c, a))).unwrap_or([0.0, 1.0, 0.0])
    }

    pub fn face_area(&self, f: u32) -> f32 {
        let [a, b, c] = self.triangle(f);
        0.5 * geom::norm(geom::cross(geom::sub(b, a), geom::sub(c, a)))
    }

    /// Distance from `p` to the nearest face in `faces`.
    pub fn distance_to_faces(&self, p: Vec3, faces: &[u32]) -> f32 {
        faces
            .iter()
            .map(|&f| {
                let [a, b, c] = self.triangle(f);
                geom::dist(p, geom::closest_point_on_triangle(p, a, b, c))
            })
            .fold(f32::INFINITY, f32::min)
    }

    pub fn distance_to_scalp(&self, p: Vec3) -> f32 {
        self.distance_to_faces(p, &self.scalp_faces)
    }

    /// Nearest scalp face to `p`.
    pub fn nearest_scalp_face(&self, p: Vec3) -> Option<(u32, f32)> {
        self.scalp_faces
            .iter()
            .map(|&f| {
                let [a, b, c] = self.triangle(f);
                (f, geom::dist(p, geom::closest_point_on_triangle(p, a, b, c)))
            })
            .min_by(|a, b| a.1.total_cmp(&b.1))
    }
}

fn face_centroid(v: &[Vec3], f: [u32; 3]) -> Vec3 {
    let s = geom::add(geom::add(v[f[0] as usize], v[f[1] as usize]), v[f[2] as usize]);
    geom::scale(s, 1.0 / 3.0)
}

// UV ellipsoid with outward-facing triangles.
fn push_ellipsoid(
    vertices: &mut Vec<Vec3>,
    faces: &mut Vec<[u32; 3]>,
    center: Vec3,
    radii: Vec3,
    stacks: usize,
    slices: usize,
) {
    let base = vertices.len() as u32;
    let point = |theta: f64, phi: f64| -> Vec3 {
        let (st, ct) = theta.sin_cos();
        let (sp, cp) = phi.sin_cos();
        [
            center[0] + radii[0] * (st * cp) as f32,
            center[1] + radii[1] * ct as f32,
            center[2] + radii[2] * (st * sp) as f32,
        ]
    };
    vertices.push(point(0.0, 0.0));
    for i in 1..stacks {
        let theta = std::f64::consts::PI * i as f64 / stacks as f64;
        for j in 0..slices {
            let phi = 2.0 * std::f64::consts::PI * j as f64 / slices as f64;
            vertices.push(point(theta, phi));
        }
    }
    vertices.push(point(std::f64::consts::PI, 0.0));
    let ring = |i: usize, j: usize| base + 1 + ((i - 1) * slices + (j % slices)) as u32;
    let top = base;
    let bottom = base + 1 + ((stacks - 1) * slices) as u32;
    for j in 0..slices {
        faces.push([top, ring(1, j + 1), ring(1, j)]);
    }
    for i in 1..stacks - 1 {
        for j in 0..slices {
            let (a, b, c, d) = (ring(i, j), ring(i, j + 1), ring(i + 1, j), ring(i + 1, j + 1));
            faces.push([a, b, d]);
            faces.push([a, d, c]);
        }
    }
    for j in 0..slices {
        faces.push([bottom, ring(stacks - 1, j), ring(stacks - 1, j + 1)]);
    }
}

/// Root positions and normals on the scalp.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct RootSampling {
    pub points: Vec<Vec3>,
    pub normals: Vec<Vec3>,
    pub faces: Vec<u32>,
}

impl RootSampling {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn from_points(bust: &BustModel, points: Vec<Vec3>) -> RootSampling {
        let mut normals = Vec::with_capacity(points.len());
        let mut faces = Vec::with_capacity(points.len());
        for p in &points {
            let (f, _) = bust.nearest_scalp_face(*p).unwrap_or((0, 0.0));
            normals.push(bust.face_normal(f));
            faces.push(f);
        }
        RootSampling { points, normals, faces }
    }
}

/// Dart-throwing blue-noise sampling of `count` roots on the scalp faces.
pub fn sample_roots(bust: &BustModel, count: usize, seed: u64) -> Result<RootSampling> {
    bust.validate()?;
    if count == 0 {
        return Err(Error::Empty("root count must be positive".into()));
    }
    let areas: Vec<f32> = bust.scalp_faces.iter().map(|&f| bust.face_area(f)).collect();
    let total: f32 = areas.iter().sum();
    let mut cdf = Vec::with_capacity(areas.len());
    let mut acc = 0.0f64;
    for a in &areas {
        acc += *a as f64;
        cdf.push(acc);
    }
    let radius = 0.6 * (total / count as f32).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut hash: HashMap<(i32, i32, i32), Vec<usize>> = HashMap::new();
    let key = |p: Vec3| {
        (
            (p[0] / radius).floor() as i32,
            (p[1] / radius).floor() as i32,
            (p[2] / radius).floor() as i32,
        )
    };
    let mut out = RootSampling::default();
    let max_attempts = 30 * count;
    let mut attempts = 0;
    while out.points.len() < count && attempts < max_attempts {
        attempts += 1;
        let r = rng.gen_range(0.0..acc);
        let k = cdf.partition_point(|&c| c < r).min(cdf.len() - 1);
        let f = bust.scalp_faces[k];
        let [a, b, c] = bust.triangle(f);
        let (mut u, mut v): (f32, f32) = (rng.gen(), rng.gen());
        if u + v > 1.0 {
            u = 1.0 - u;
            v = 1.0 - v;
        }
        let p = geom::add(a, geom::add(geom::scale(geom::sub(b, a), u), geom::scale(geom::sub(c, a), v)));
        let (kx, ky, kz) = key(p);
        let mut ok = true;
        'scan: for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    if let Some(ids) = hash.get(&(kx + dx, ky + dy, kz + dz)) {
                        if ids.iter().any(|&i| geom::dist(out.points[i], p) < radius) {
                            ok = false;
                            break 'scan;
                        }
                    }
                }
            }
        }
        if !ok {
            continue;
        }
        hash.entry((kx, ky, kz)).or_default().push(out.points.len());
        out.points.push(p);
        out.normals.push(bust.face_normal(f));
        out.faces.push(f);
    }
    Ok(out)
}
