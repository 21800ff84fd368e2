//! Compressed sparse rows and a Jacobi-preconditioned conjugate gradient.

use rayon::prelude::*;

use crate::error::{Error, Result};

/// Square matrix in CSR form.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    pub n: usize,
    pub indptr: Vec<usize>,
    pub indices: Vec<usize>,
    pub values: Vec<f64>,
}

/// Row-by-row CSR assembly. Entries of a row may repeat; they are summed.
#[derive(Debug, Default)]
pub struct CsrBuilder {
    n: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
    row: Vec<(usize, f64)>,
}

impl CsrBuilder {
    pub fn new(n: usize) -> Self {
        CsrBuilder { n, indptr: vec![0], ..Default::default() }
    }

    pub fn push(&mut self, col: usize, v: f64) {
        self.row.push((col, v));
    }

    pub fn finish_row(&mut self) {
        self.row.sort_by_key(|e| e.0);
        let mut last: Option<usize> = None;
        for &(c, v) in &self.row {
            if last == Some(c) {
                *self.values.last_mut().unwrap() += v;
            } else {
                self.indices.push(c);
                self.values.push(v);
                last = Some(c);
            }
        }
        self.row.clear();
        self.indptr.push(self.indices.len());
    }

    pub fn build(self) -> CsrMatrix {
        assert_eq!(self.indptr.len(), self.n + 1, "row count mismatch");
        CsrMatrix { n: self.n, indptr: self.indptr, indices: self.indices, values: self.values }
    }
}

const PAR_ROWS: usize = 8192;

impl CsrMatrix {
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.indptr[i]..self.indptr[i + 1];
        self.indices[r.clone()].iter().copied().zip(self.values[r].iter().copied())
    }

    fn row_dot(&self, i: usize, x: &[f64]) -> f64 {
        self.row(i).map(|(j, v)| v * x[j]).sum()
    }

    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        if self.n >= PAR_ROWS {
            y.par_iter_mut().enumerate().for_each(|(i, yi)| *yi = self.row_dot(i, x));
        } else {
            for (i, yi) in y.iter_mut().enumerate() {
                *yi = self.row_dot(i, x);
            }
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.row(i).filter(|&(j, _)| j == i).map(|e| e.1).sum()).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CgParams {
    /// Stop when `||r||_2 <= tol * max(1, ||b||_2)`.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for CgParams {
    fn default() -> Self {
        CgParams { tol: 1e-12, max_iter: 10_000 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CgReport {
    pub iterations: usize,
    pub residual: f64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Solves `A x = b` for symmetric positive definite `A`, starting from `x`.
pub fn conjugate_gradient(a: &CsrMatrix, b: &[f64], x: &mut [f64], p: &CgParams) -> Result<CgReport> {
    let n = a.n;
    if b.len() != n || x.len() != n {
        return Err(Error::Dimension(format!("system of size {n} given vectors {} and {}", b.len(), x.len())));
    }
    let inv_diag: Vec<f64> = a
        .diagonal()
        .iter()
        .map(|&d| if d > 0.0 { 1.0 / d } else { 1.0 })
        .collect();
    let mut r = vec![0.0; n];
    a.matvec(x, &mut r);
    for i in 0..n {
        r[i] = b[i] - r[i];
    }
    let target = p.tol * dot(b, b).sqrt().max(1.0);
    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(r, d)| r * d).collect();
    let mut dir = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];
    let mut res = dot(&r, &r).sqrt();
    let mut it = 0;
    while res > target {
        if it >= p.max_iter {
            return Err(Error::Solver(format!("conjugate gradient stalled at residual {res:e} after {it} iterations")));
        }
        a.matvec(&dir, &mut ap);
        let pap = dot(&dir, &ap);
        if !(pap > 0.0) {
            return Err(Error::Solver("matrix is not positive definite".into()));
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * dir[i];
            r[i] -= alpha * ap[i];
        }
        for i in 0..n {
            z[i] = r[i] * inv_diag[i];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            dir[i] = z[i] + beta * dir[i];
        }
        res = dot(&r, &r).sqrt();
        it += 1;
    }
    Ok(CgReport { iterations: it, residual: res })
}
