use super::VectorField3D;
use crate::scalar::Scalar;

#[inline]
fn neighbor_count(x: usize, y: usize, z: usize, nx: usize, ny: usize, nz: usize) -> usize {
    (x > 0) as usize
        + (x + 1 < nx) as usize
        + (y > 0) as usize
        + (y + 1 < ny) as usize
        + (z > 0) as usize
        + (z + 1 < nz) as usize
}

/// Umbrella Laplacian on a 6-neighborhood of one scalar channel, x-fastest.
///
/// Forward: `out_i = (1/|N_i|) sum_{j in N_i} (v_j - v_i)`; border cells use
/// only the neighbors they have. With `transpose` the adjoint operator is
/// applied instead, which differs on the border where `|N_i|` varies.
pub fn laplacian_scalar<T: Scalar>(
    src: &[T],
    dims: (usize, usize, usize),
    out: &mut [T],
    transpose: bool,
) {
    let (nx, ny, nz) = dims;
    assert_eq!(src.len(), nx * ny * nz);
    assert_eq!(out.len(), src.len());
    let idx = |x: usize, y: usize, z: usize| x + nx * (y + ny * z);
    let inv = |x: usize, y: usize, z: usize| {
        let n = neighbor_count(x, y, z, nx, ny, nz);
        if n == 0 {
            T::ZERO
        } else {
            T::ONE / T::from_f64(n as f64)
        }
    };
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let i = idx(x, y, z);
                let mut acc = T::ZERO;
                let mut visit = |xx: usize, yy: usize, zz: usize| {
                    if transpose {
                        acc += src[idx(xx, yy, zz)] * inv(xx, yy, zz);
                    } else {
                        acc += src[idx(xx, yy, zz)];
                    }
                };
                if x > 0 {
                    visit(x - 1, y, z);
                }
                if x + 1 < nx {
                    visit(x + 1, y, z);
                }
                if y > 0 {
                    visit(x, y - 1, z);
                }
                if y + 1 < ny {
                    visit(x, y + 1, z);
                }
                if z > 0 {
                    visit(x, y, z - 1);
                }
                if z + 1 < nz {
                    visit(x, y, z + 1);
                }
                let n = neighbor_count(x, y, z, nx, ny, nz);
                out[i] = if n == 0 {
                    T::ZERO
                } else if transpose {
                    acc - src[i]
                } else {
                    acc * inv(x, y, z) - src[i]
                };
            }
        }
    }
}

/// Discrete Laplacian of each vector component.
pub fn field_laplacian(field: &VectorField3D) -> VectorField3D {
    let g = field.grid;
    let dims = (g.nx, g.ny, g.nz);
    let mut out = VectorField3D::zeros(g);
    let mut comp = vec![0f64; g.len()];
    let mut lap = vec![0f64; g.len()];
    for c in 0..3 {
        for (dst, v) in comp.iter_mut().zip(&field.data) {
            *dst = v[c] as f64;
        }
        laplacian_scalar(&comp, dims, &mut lap, false);
        for (o, l) in out.data.iter_mut().zip(&lap) {
            o[c] = *l as f32;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::GridSpec;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_field(grid: GridSpec, seed: u64) -> VectorField3D {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..grid.len())
            .map(|_| [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)])
            .collect();
        VectorField3D::from_data(grid, data).unwrap()
    }

    fn grid(n: usize) -> GridSpec {
        GridSpec::new(n, n, n, crate::field::WorldBox::standard()).unwrap()
    }

    #[test]
    fn constant_field_has_zero_laplacian() {
        let g = grid(5);
        let f = VectorField3D::from_data(g, vec![[0.3, -0.2, 0.9]; g.len()]).unwrap();
        let l = field_laplacian(&f);
        assert!(l.data.iter().all(|v| v.iter().all(|c| c.abs() < 1e-7)));
    }

    #[test]
    fn linear_ramp_vanishes_in_interior() {
        let g = grid(6);
        let mut f = VectorField3D::zeros(g);
        for z in 0..6 {
            for y in 0..6 {
                for x in 0..6 {
                    f.set(x, y, z, [0.25 * x as f32, 0.0, 0.0]);
                }
            }
        }
        let l = field_laplacian(&f);
        for z in 1..5 {
            for y in 1..5 {
                for x in 1..5 {
                    assert!(l.get(x, y, z)[0].abs() < 1e-6);
                }
            }
        }
    }

    // Independent oracle: enumerate all 26 offsets and keep face neighbors.
    fn oracle(f: &VectorField3D) -> Vec<[f64; 3]> {
        let g = f.grid;
        let mut out = vec![[0.0; 3]; g.len()];
        for z in 0..g.nz as i64 {
            for y in 0..g.ny as i64 {
                for x in 0..g.nx as i64 {
                    let mut nb = Vec::new();
                    for dz in -1i64..=1 {
                        for dy in -1i64..=1 {
                            for dx in -1i64..=1 {
                                if dx.abs() + dy.abs() + dz.abs() != 1 {
                                    continue;
                                }
                                let (a, b, c) = (x + dx, y + dy, z + dz);
                                if a < 0 || b < 0 || c < 0 || a >= g.nx as i64 || b >= g.ny as i64 || c >= g.nz as i64 {
                                    continue;
                                }
                                nb.push(g.index(a as usize, b as usize, c as usize));
                            }
                        }
                    }
                    let i = g.index(x as usize, y as usize, z as usize);
                    for k in 0..3 {
                        let vi = f.data[i][k] as f64;
                        let s: f64 = nb.iter().map(|&j| f.data[j][k] as f64).sum();
                        out[i][k] = s / nb.len() as f64 - vi;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn random_4cube_matches_neighbor_loop_oracle() {
        let f = random_field(grid(4), 7);
        let l = field_laplacian(&f);
        let o = oracle(&f);
        for (a, b) in l.data.iter().zip(&o) {
            for k in 0..3 {
                assert_eq!(a[k], b[k] as f32);
            }
        }
    }

    #[test]
    fn laplacian_is_linear() {
        let g = GridSpec::new(4, 5, 3, crate::field::WorldBox::standard()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let f: Vec<f64> = (0..g.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let h: Vec<f64> = (0..g.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let (a, b) = (1.7, -0.35);
        let combo: Vec<f64> = f.iter().zip(&h).map(|(x, y)| a * x + b * y).collect();
        let dims = (g.nx, g.ny, g.nz);
        let mut lf = vec![0.0; g.len()];
        let mut lh = vec![0.0; g.len()];
        let mut lc = vec![0.0; g.len()];
        laplacian_scalar(&f, dims, &mut lf, false);
        laplacian_scalar(&h, dims, &mut lh, false);
        laplacian_scalar(&combo, dims, &mut lc, false);
        for i in 0..g.len() {
            assert!((lc[i] - (a * lf[i] + b * lh[i])).abs() <= 1e-12);
        }
    }

    #[test]
    fn transpose_is_adjoint() {
        let dims = (3, 4, 5);
        let n = 60;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let u: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let v: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut lu = vec![0.0; n];
        let mut ltv = vec![0.0; n];
        laplacian_scalar(&u, dims, &mut lu, false);
        laplacian_scalar(&v, dims, &mut ltv, true);
        let lhs: f64 = lu.iter().zip(&v).map(|(a, b)| a * b).sum();
        let rhs: f64 = u.iter().zip(&ltv).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }
}
