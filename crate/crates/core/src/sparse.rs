//! Compressed sparse row storage and a Jacobi-preconditioned conjugate
//! gradient for the constrained elastic solve.

use crate::error::{FractureError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Build an `n x n` matrix from `(row, col, value)` triplets; duplicates
    /// are summed.
    pub fn from_triplets(n: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut sorted: Vec<(usize, usize, f64)> = triplets.to_vec();
        sorted.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut row_ptr = vec![0; n + 1];
        let mut col_idx = Vec::with_capacity(sorted.len());
        let mut values: Vec<f64> = Vec::with_capacity(sorted.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in sorted {
            assert!(r < n && c < n, "triplet ({r}, {c}) outside {n} x {n}");
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
            } else {
                col_idx.push(c);
                values.push(v);
                row_ptr[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for r in 0..n {
            row_ptr[r + 1] += row_ptr[r];
        }
        CsrMatrix {
            n,
            row_ptr,
            col_idx,
            values,
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        let range = self.row_ptr[row]..self.row_ptr[row + 1];
        match self.col_idx[range.clone()].binary_search(&col) {
            Ok(k) => self.values[range.start + k],
            Err(_) => 0.0,
        }
    }

    pub fn mul_vec_into(&self, x: &[f64], y: &mut [f64]) {
        for r in 0..self.n {
            let mut acc = 0.0;
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                acc += self.values[k] * x[self.col_idx[k]];
            }
            y[r] = acc;
        }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        self.mul_vec_into(x, &mut y);
        y
    }

    /// `x^T A x`.
    pub fn quadratic(&self, x: &[f64]) -> f64 {
        dot(x, &self.mul_vec(x))
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|r| self.get(r, r)).collect()
    }

    pub fn scale(&mut self, factor: f64) {
        self.values.iter_mut().for_each(|v| *v *= factor);
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        for r in 0..self.n {
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                let c = self.col_idx[k];
                let a = self.values[k];
                let b = self.get(c, r);
                if (a - b).abs() > tol * a.abs().max(b.abs()).max(1.0) {
                    return false;
                }
            }
        }
        true
    }
}

/// Fixed sparsity of an element-by-element assembly. Element contributions
/// are scattered through precomputed slots, so repeated assemblies on the
/// same mesh skip the sort.
#[derive(Debug, Clone)]
pub struct AssemblyPattern {
    template: CsrMatrix,
    /// For each element, the value slots of its dense local block in
    /// row-major order.
    slots: Vec<Vec<usize>>,
}

impl AssemblyPattern {
    /// `element_dofs[e]` lists the global indices of element `e`'s local dofs.
    pub fn new(n: usize, element_dofs: &[Vec<usize>]) -> Self {
        let mut triplets = Vec::new();
        for dofs in element_dofs {
            for &r in dofs {
                for &c in dofs {
                    triplets.push((r, c, 0.0));
                }
            }
        }
        let template = CsrMatrix::from_triplets(n, &triplets);
        let slots = element_dofs
            .iter()
            .map(|dofs| {
                let mut s = Vec::with_capacity(dofs.len() * dofs.len());
                for &r in dofs {
                    let range = template.row_ptr[r]..template.row_ptr[r + 1];
                    for &c in dofs {
                        let k = template.col_idx[range.clone()].binary_search(&c).unwrap();
                        s.push(range.start + k);
                    }
                }
                s
            })
            .collect();
        AssemblyPattern { template, slots }
    }

    /// Sum the dense local blocks (`local[e]` row-major) into a matrix.
    pub fn assemble<'a>(&self, blocks: impl Iterator<Item = (usize, &'a [f64])>) -> CsrMatrix {
        let mut m = self.template.clone();
        m.values.iter_mut().for_each(|v| *v = 0.0);
        for (e, block) in blocks {
            for (slot, value) in self.slots[e].iter().zip(block) {
                m.values[*slot] += value;
            }
        }
        m
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn norm_inf(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CgOutcome {
    pub iterations: usize,
    /// Final `||b - A x|| / ||b||` on the free rows.
    pub relative_residual: f64,
}

/// Solve `A_ff x_f = b_f` by Jacobi-preconditioned CG, where the free rows
/// are those with `fixed[i] == false`. Entries of `x` on fixed rows are left
/// untouched and treated as zero inside the iteration; `x` on free rows is
/// the initial guess. Entries of `b` on fixed rows are ignored.
pub fn pcg_masked(
    a: &CsrMatrix,
    b: &[f64],
    fixed: &[bool],
    x: &mut [f64],
    tol: f64,
    max_iter: usize,
) -> Result<CgOutcome> {
    let n = a.dim();
    let free = |i: usize| !fixed[i];
    let mut xf: Vec<f64> = (0..n).map(|i| if free(i) { x[i] } else { 0.0 }).collect();
    let bf: Vec<f64> = (0..n).map(|i| if free(i) { b[i] } else { 0.0 }).collect();
    let b_norm = norm2(&bf);
    if b_norm == 0.0 {
        for i in (0..n).filter(|&i| free(i)) {
            x[i] = 0.0;
        }
        return Ok(CgOutcome {
            iterations: 0,
            relative_residual: 0.0,
        });
    }

    let inv_diag: Vec<f64> = a
        .diagonal()
        .iter()
        .enumerate()
        .map(|(i, d)| if free(i) && *d > 0.0 { 1.0 / d } else { 0.0 })
        .collect();

    let mut ap = vec![0.0; n];
    a.mul_vec_into(&xf, &mut ap);
    let mut r: Vec<f64> = (0..n)
        .map(|i| if free(i) { bf[i] - ap[i] } else { 0.0 })
        .collect();
    let mut history = Vec::new();
    let mut rel = norm2(&r) / b_norm;
    history.push(rel);
    if rel <= tol {
        return Ok(CgOutcome {
            iterations: 0,
            relative_residual: rel,
        });
    }

    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(r, d)| r * d).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);

    for it in 1..=max_iter {
        a.mul_vec_into(&p, &mut ap);
        for i in 0..n {
            if !free(i) {
                ap[i] = 0.0;
            }
        }
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            return Err(FractureError::SolverDiverged {
                solver: "conjugate gradient (lost positive definiteness)",
                iterations: it,
                residual_history: history,
            });
        }
        let step = rz / pap;
        for i in 0..n {
            xf[i] += step * p[i];
            r[i] -= step * ap[i];
        }
        rel = norm2(&r) / b_norm;
        history.push(rel);
        if rel <= tol {
            // Guard against drift of the recursive residual.
            a.mul_vec_into(&xf, &mut ap);
            let true_r: Vec<f64> = (0..n)
                .map(|i| if free(i) { bf[i] - ap[i] } else { 0.0 })
                .collect();
            let true_rel = norm2(&true_r) / b_norm;
            if true_rel <= tol {
                for i in (0..n).filter(|&i| free(i)) {
                    x[i] = xf[i];
                }
                return Ok(CgOutcome {
                    iterations: it,
                    relative_residual: true_rel,
                });
            }
            r = true_r;
        }
        for i in 0..n {
            z[i] = r[i] * inv_diag[i];
        }
        let rz_next = dot(&r, &z);
        let beta = rz_next / rz;
        rz = rz_next;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }

    Err(FractureError::SolverDiverged {
        solver: "conjugate gradient",
        iterations: max_iter,
        residual_history: history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn laplacian_1d(n: usize) -> CsrMatrix {
        let mut t = Vec::new();
        for i in 0..n {
            t.push((i, i, 2.0));
            if i > 0 {
                t.push((i, i - 1, -1.0));
            }
            if i + 1 < n {
                t.push((i, i + 1, -1.0));
            }
        }
        CsrMatrix::from_triplets(n, &t)
    }

    #[test]
    fn duplicates_are_summed() {
        let m = CsrMatrix::from_triplets(2, &[(0, 0, 1.0), (1, 0, 2.0), (0, 0, 3.0)]);
        assert_eq!(m.get(0, 0), 4.0);
        assert_eq!(m.get(1, 0), 2.0);
        assert_eq!(m.get(0, 1), 0.0);
        assert_eq!(m.nnz(), 2);
    }

    #[test]
    fn pcg_solves_with_fixed_ends() {
        // -u'' = 0 with u(0) = 0, u(n-1) = 1 handled by moving the boundary
        // column to the right-hand side.
        let n = 21;
        let a = laplacian_1d(n);
        let mut fixed = vec![false; n];
        fixed[0] = true;
        fixed[n - 1] = true;
        let mut lift = vec![0.0; n];
        lift[n - 1] = 1.0;
        let b: Vec<f64> = a.mul_vec(&lift).iter().map(|v| -v).collect();
        let mut x = lift.clone();
        let out = pcg_masked(&a, &b, &fixed, &mut x, 1e-12, 200).unwrap();
        assert!(out.relative_residual <= 1e-12);
        for (i, xi) in x.iter().enumerate().take(n - 1).skip(1) {
            // Free part of the harmonic interpolant; the lift is added back by callers.
            assert!((xi + lift[i] - i as f64 / (n - 1) as f64).abs() < 1e-10);
        }
        assert_eq!(x[n - 1], 1.0);
    }

    #[test]
    fn iteration_cap_reports_history() {
        let a = laplacian_1d(50);
        let b = vec![1.0; 50];
        let mut x = vec![0.0; 50];
        let err = pcg_masked(&a, &b, &[false; 50], &mut x, 1e-14, 3).unwrap_err();
        match err {
            FractureError::SolverDiverged {
                iterations,
                residual_history,
                ..
            } => {
                assert_eq!(iterations, 3);
                assert_eq!(residual_history.len(), 4);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn pattern_assembly_matches_triplets() {
        let dofs = vec![vec![0, 1], vec![1, 2]];
        let pattern = AssemblyPattern::new(3, &dofs);
        let blocks = [[1.0, -1.0, -1.0, 1.0], [2.0, -2.0, -2.0, 2.0]];
        let m = pattern.assemble(blocks.iter().enumerate().map(|(e, b)| (e, &b[..])));
        assert_eq!(m.get(1, 1), 3.0);
        assert_eq!(m.get(0, 2), 0.0);
        assert_eq!(m.get(2, 1), -2.0);
        assert!(m.is_symmetric(0.0));
    }
}
