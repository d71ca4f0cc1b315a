//! Ambrosio-Tortorelli (AT2) surrogate of the Griffith energy.
//!
//! The crack is represented by a nodal damage field `alpha` in `[0, 1]`.
//! On each triangle the elastic density is degraded by
//! `(1 - mean(alpha))^2 + eta`, and the surface density is
//! `kappa / 2 * (mean(alpha)^2 / ell + ell |grad alpha|^2)`, whose optimal
//! one-dimensional profile `exp(-|x| / ell)` carries energy `kappa` per unit
//! crack length.

use log::warn;

use crate::elasticity::{element_strain, quadratic_form, DisplacementField, ElasticityTensor};
use crate::error::{FractureError, Result};
use crate::mesh::{segment_distance, ElementGeometry, Mesh, Point, Region};
use crate::sparse::{dot, norm_inf, AssemblyPattern, CsrMatrix};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhaseFieldParams {
    /// Regularization length.
    pub ell: f64,
    /// Residual stiffness of fully broken material.
    pub eta: f64,
    /// Toughness, energy per unit crack length.
    pub kappa: f64,
}

impl PhaseFieldParams {
    pub fn new(ell: f64, eta: f64, kappa: f64) -> Result<Self> {
        if !(ell > 0.0 && ell.is_finite()) {
            return Err(FractureError::InvalidParameters(format!(
                "ell must be positive, got {ell}"
            )));
        }
        if !(eta > 0.0 && eta < 1.0) {
            return Err(FractureError::InvalidParameters(format!(
                "eta must lie in (0, 1), got {eta}"
            )));
        }
        if !(kappa > 0.0 && kappa.is_finite()) {
            return Err(FractureError::InvalidParameters(format!(
                "kappa must be positive, got {kappa}"
            )));
        }
        Ok(PhaseFieldParams { ell, eta, kappa })
    }

    pub fn degradation(&self, alpha: f64) -> f64 {
        (1.0 - alpha).powi(2) + self.eta
    }

    /// Warn when the regularization length is under-resolved by the mesh.
    pub fn check_resolution(&self, h: f64) -> bool {
        let ok = self.ell >= 2.0 * h;
        if !ok {
            warn!(
                "ell = {} is below twice the mesh size h = {}; crack profiles are under-resolved",
                self.ell, h
            );
        }
        ok
    }
}

impl Default for PhaseFieldParams {
    fn default() -> Self {
        PhaseFieldParams {
            ell: 0.1,
            eta: 1e-6,
            kappa: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DamageField {
    pub values: Vec<f64>,
}

impl DamageField {
    pub fn zeros(num_vertices: usize) -> Self {
        DamageField {
            values: vec![0.0; num_vertices],
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Checks `0 <= alpha <= 1` everywhere and `alpha = 0` on padding vertices.
    pub fn check(&self, mesh: &Mesh) -> Result<()> {
        if self.values.len() != mesh.num_vertices() {
            return Err(FractureError::SizeMismatch {
                what: "damage field",
                expected: mesh.num_vertices(),
                found: self.values.len(),
            });
        }
        let pinned = mesh.region_vertices(Region::Padding);
        for (v, &a) in self.values.iter().enumerate() {
            if !(0.0..=1.0).contains(&a) {
                return Err(FractureError::InvalidParameters(format!(
                    "damage {a} at vertex {v} outside [0, 1]"
                )));
            }
            if pinned[v] && a != 0.0 {
                return Err(FractureError::InvalidParameters(format!(
                    "damage {a} at padding vertex {v}; padding damage is pinned to 0"
                )));
            }
        }
        Ok(())
    }

    pub fn element_mean(&self, tri: [usize; 3]) -> f64 {
        (self.values[tri[0]] + self.values[tri[1]] + self.values[tri[2]]) / 3.0
    }

    pub fn max_abs_diff(&self, other: &DamageField) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }
}

/// Per-triangle degradation factors `(1 - mean(alpha))^2 + eta`.
pub fn degradation_factors(
    mesh: &Mesh,
    alpha: &DamageField,
    params: &PhaseFieldParams,
) -> Vec<f64> {
    mesh.triangles
        .iter()
        .map(|&tri| params.degradation(alpha.element_mean(tri)))
        .collect()
}

fn assert_sizes(mesh: &Mesh, u: Option<&DisplacementField>, alpha: &DamageField) {
    assert_eq!(
        alpha.len(),
        mesh.num_vertices(),
        "damage field size does not match the mesh"
    );
    if let Some(u) = u {
        assert_eq!(
            u.num_vertices(),
            mesh.num_vertices(),
            "displacement size does not match the mesh"
        );
    }
}

/// `exp(-dist(x, [a, b]) / ell)` at every vertex, zero where `pinned`:
/// the one-dimensional optimal profile around a straight crack.
pub fn optimal_profile(mesh: &Mesh, pinned: &[bool], a: Point, b: Point, ell: f64) -> DamageField {
    DamageField {
        values: mesh
            .vertices
            .iter()
            .zip(pinned)
            .map(|(x, &p)| {
                if p {
                    0.0
                } else {
                    (-segment_distance(*x, a, b) / ell).exp()
                }
            })
            .collect(),
    }
}

/// `sum_T area(T) deg(alpha|_T) Q(e(u)|_T)` over all triangles.
pub fn elastic_energy(
    mesh: &Mesh,
    c: &ElasticityTensor,
    u: &DisplacementField,
    alpha: &DamageField,
    params: &PhaseFieldParams,
) -> Result<f64> {
    assert_sizes(mesh, Some(u), alpha);
    let mut total = 0.0;
    for (t, &tri) in mesh.triangles.iter().enumerate() {
        let geom = mesh.element_geometry(t)?;
        let q = quadratic_form(c, element_strain(&geom, tri, u));
        total += geom.area * params.degradation(alpha.element_mean(tri)) * q;
    }
    Ok(total)
}

/// AT2 surface energy with the vertex-mean mass term.
pub fn surface_energy(mesh: &Mesh, alpha: &DamageField, params: &PhaseFieldParams) -> Result<f64> {
    assert_sizes(mesh, None, alpha);
    let mut total = 0.0;
    for (t, &tri) in mesh.triangles.iter().enumerate() {
        let geom = mesh.element_geometry(t)?;
        total += element_surface(&geom, tri, alpha, params);
    }
    Ok(total)
}

pub(crate) fn element_surface(
    geom: &ElementGeometry,
    tri: [usize; 3],
    alpha: &DamageField,
    p: &PhaseFieldParams,
) -> f64 {
    let mean = alpha.element_mean(tri);
    let g = geom.gradient(tri.map(|v| alpha.values[v]));
    geom.area * 0.5 * p.kappa * (mean * mean / p.ell + p.ell * (g[0] * g[0] + g[1] * g[1]))
}

/// Sparsity and geometry for the damage quadratic program on one mesh.
#[derive(Debug, Clone)]
pub struct DamageAssembler {
    pattern: AssemblyPattern,
    geometry: Vec<ElementGeometry>,
    triangles: Vec<[usize; 3]>,
    /// Padding vertices, where damage is held at zero.
    pinned: Vec<bool>,
}

/// `F(alpha) = 1/2 alpha^T H alpha - b^T alpha + const` for a fixed
/// displacement, together with the exact energy for evaluation.
#[derive(Debug, Clone)]
pub struct DamageQp<'a> {
    assembler: &'a DamageAssembler,
    hessian: CsrMatrix,
    linear: Vec<f64>,
    /// Undegraded elastic density `Q(e(u))` per triangle.
    density: Vec<f64>,
    params: PhaseFieldParams,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DamageSolve {
    pub alpha: DamageField,
    pub iterations: usize,
    /// Final `||P(alpha - grad F) - alpha||_inf`.
    pub projected_gradient: f64,
    /// Threshold that was met: `tol (1 + ||grad F(alpha_lower)||_inf)`.
    pub threshold: f64,
}

impl DamageAssembler {
    pub fn new(mesh: &Mesh) -> Result<Self> {
        let geometry = mesh.geometry()?;
        let dofs: Vec<Vec<usize>> = mesh.triangles.iter().map(|t| t.to_vec()).collect();
        Ok(DamageAssembler {
            pattern: AssemblyPattern::new(mesh.num_vertices(), &dofs),
            geometry,
            triangles: mesh.triangles.clone(),
            pinned: mesh.region_vertices(Region::Padding),
        })
    }

    pub fn pinned(&self) -> &[bool] {
        &self.pinned
    }

    /// Quadratic program in `alpha` for the displacement `u`.
    pub fn program(
        &self,
        c: &ElasticityTensor,
        u: &DisplacementField,
        params: &PhaseFieldParams,
    ) -> DamageQp<'_> {
        let density: Vec<f64> = self
            .geometry
            .iter()
            .zip(&self.triangles)
            .map(|(g, &tri)| quadratic_form(c, element_strain(g, tri, u)))
            .collect();
        self.program_from_density(density, params)
    }

    pub(crate) fn program_from_density(
        &self,
        density: Vec<f64>,
        params: &PhaseFieldParams,
    ) -> DamageQp<'_> {
        let n = self.pinned.len();
        let mut linear = vec![0.0; n];
        let blocks: Vec<[f64; 9]> = self
            .geometry
            .iter()
            .zip(&self.triangles)
            .zip(&density)
            .map(|((g, tri), &q)| {
                let mass = g.area * (2.0 * q + params.kappa / params.ell) / 9.0;
                let stiff = g.area * params.kappa * params.ell;
                for &v in tri {
                    linear[v] += g.area * 2.0 * q / 3.0;
                }
                let mut block = [0.0; 9];
                for i in 0..3 {
                    for j in 0..3 {
                        let gg = g.grads[i][0] * g.grads[j][0] + g.grads[i][1] * g.grads[j][1];
                        block[3 * i + j] = mass + stiff * gg;
                    }
                }
                block
            })
            .collect();
        let hessian = self
            .pattern
            .assemble(blocks.iter().enumerate().map(|(e, b)| (e, &b[..])));
        DamageQp {
            assembler: self,
            hessian,
            linear,
            density,
            params: *params,
        }
    }
}

impl DamageQp<'_> {
    /// Elastic plus surface energy at `alpha` for the fixed displacement.
    pub fn energy(&self, alpha: &DamageField) -> f64 {
        let p = &self.params;
        let mut total = 0.0;
        for ((g, &tri), &q) in self
            .assembler
            .geometry
            .iter()
            .zip(&self.assembler.triangles)
            .zip(&self.density)
        {
            total += g.area * p.degradation(alpha.element_mean(tri)) * q
                + element_surface(g, tri, alpha, p);
        }
        total
    }

    pub fn gradient(&self, alpha: &[f64]) -> Vec<f64> {
        let mut g = self.hessian.mul_vec(alpha);
        for (gi, bi) in g.iter_mut().zip(&self.linear) {
            *gi -= bi;
        }
        g
    }

    fn bounds(&self, lower: &DamageField) -> (Vec<f64>, Vec<f64>) {
        let pinned = &self.assembler.pinned;
        let lo = lower
            .values
            .iter()
            .zip(pinned)
            .map(|(&a, &p)| if p { 0.0 } else { a })
            .collect();
        let hi = pinned.iter().map(|&p| if p { 0.0 } else { 1.0 }).collect();
        (lo, hi)
    }

    /// Projected gradient `P(alpha - grad F) - alpha` measured in the sup norm.
    pub fn projected_gradient(&self, alpha: &[f64], grad: &[f64], lower: &DamageField) -> f64 {
        let (lo, hi) = self.bounds(lower);
        alpha
            .iter()
            .zip(grad)
            .enumerate()
            .map(|(i, (&a, &g))| ((a - g).clamp(lo[i], hi[i]) - a).abs())
            .fold(0.0, f64::max)
    }

    /// Spectral projected gradient with Barzilai-Borwein steps and a
    /// nonmonotone Armijo test that halves the step on failure.
    pub fn solve(
        &self,
        lower: &DamageField,
        initial: Option<&DamageField>,
        tol: f64,
        max_iter: usize,
    ) -> Result<DamageSolve> {
        const MEMORY: usize = 10;
        const ARMIJO: f64 = 1e-4;
        const STEP_MIN: f64 = 1e-12;
        const STEP_MAX: f64 = 1e12;

        let n = lower.len();
        let (lo, hi) = self.bounds(lower);
        let project = |x: &mut [f64]| {
            for i in 0..n {
                x[i] = x[i].clamp(lo[i], hi[i]);
            }
        };

        let grad_lower = self.gradient(&lo);
        let free_norm = grad_lower
            .iter()
            .zip(&self.assembler.pinned)
            .filter(|(_, p)| !**p)
            .fold(0.0_f64, |m, (g, _)| m.max(g.abs()));
        let threshold = tol * (1.0 + free_norm);

        let mut x: Vec<f64> = match initial {
            Some(init) => init.values.clone(),
            None => lo.clone(),
        };
        project(&mut x);
        let mut g = self.gradient(&x);
        let pg_of = |x: &[f64], g: &[f64]| {
            (0..n)
                .map(|i| ((x[i] - g[i]).clamp(lo[i], hi[i]) - x[i]).abs())
                .fold(0.0, f64::max)
        };
        let mut pg = pg_of(&x, &g);
        let mut history = vec![pg];
        if pg <= threshold {
            return Ok(DamageSolve {
                alpha: DamageField { values: x },
                iterations: 0,
                projected_gradient: pg,
                threshold,
            });
        }

        let mut f = 0.5 * dot(&x, &self.hessian.mul_vec(&x)) - dot(&self.linear, &x);
        let mut recent = vec![f];
        let mut step = (1.0 / pg).clamp(STEP_MIN, STEP_MAX);
        let mut d = vec![0.0; n];
        let mut hd = vec![0.0; n];

        for it in 1..=max_iter {
            for i in 0..n {
                d[i] = (x[i] - step * g[i]).clamp(lo[i], hi[i]) - x[i];
            }
            self.hessian.mul_vec_into(&d, &mut hd);
            let gd = dot(&g, &d);
            let dhd = dot(&d, &hd);
            let f_ref = recent.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut theta = 1.0;
            let mut f_new = f + gd + 0.5 * dhd;
            while f_new > f_ref + ARMIJO * theta * gd && theta > 1e-20 {
                theta *= 0.5;
                f_new = f + theta * gd + 0.5 * theta * theta * dhd;
            }
            for i in 0..n {
                x[i] += theta * d[i];
                g[i] += theta * hd[i];
            }
            project(&mut x);
            f = f_new;
            recent.push(f);
            if recent.len() > MEMORY {
                recent.remove(0);
            }

            let ss = theta * theta * dot(&d, &d);
            let sy = theta * theta * dhd;
            step = if sy > 0.0 {
                (ss / sy).clamp(STEP_MIN, STEP_MAX)
            } else {
                STEP_MAX
            };

            if it % 50 == 0 {
                // Refresh the recurrences against drift.
                g = self.gradient(&x);
                f = 0.5 * dot(&x, &self.hessian.mul_vec(&x)) - dot(&self.linear, &x);
            }
            pg = pg_of(&x, &g);
            history.push(pg);
            if pg <= threshold {
                let g_exact = self.gradient(&x);
                pg = pg_of(&x, &g_exact);
                if pg <= threshold {
                    return Ok(DamageSolve {
                        alpha: DamageField { values: x },
                        iterations: it,
                        projected_gradient: pg,
                        threshold,
                    });
                }
                g = g_exact;
            }
        }

        Err(FractureError::SolverDiverged {
            solver: "damage projected gradient",
            iterations: max_iter,
            residual_history: history,
        })
    }
}

pub const DEFAULT_DAMAGE_MAX_ITER: usize = 100_000;

/// Minimize elastic plus surface energy over `alpha_lower <= alpha <= 1`
/// with damage pinned to zero on padding vertices.
pub fn damage_subproblem(
    mesh: &Mesh,
    c: &ElasticityTensor,
    u: &DisplacementField,
    alpha_lower: &DamageField,
    params: &PhaseFieldParams,
    tol: f64,
) -> Result<DamageField> {
    alpha_lower.check(mesh)?;
    if u.num_vertices() != mesh.num_vertices() {
        return Err(FractureError::SizeMismatch {
            what: "displacement field",
            expected: mesh.num_vertices(),
            found: u.num_vertices(),
        });
    }
    let assembler = DamageAssembler::new(mesh)?;
    let qp = assembler.program(c, u, params);
    Ok(qp
        .solve(alpha_lower, None, tol, DEFAULT_DAMAGE_MAX_ITER)?
        .alpha)
}

/// Sup-norm of the free part of `grad F(alpha)`; used for scaling.
pub fn gradient_scale(grad: &[f64], pinned: &[bool]) -> f64 {
    norm_inf(
        &grad
            .iter()
            .zip(pinned)
            .map(|(g, p)| if *p { 0.0 } else { *g })
            .collect::<Vec<_>>(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::build_rectangle_mesh;

    fn iso() -> ElasticityTensor {
        ElasticityTensor::isotropic(1.0, 1.0).unwrap()
    }

    #[test]
    fn params_are_validated() {
        assert!(PhaseFieldParams::new(0.0, 1e-6, 1.0).is_err());
        assert!(PhaseFieldParams::new(0.1, 0.0, 1.0).is_err());
        assert!(PhaseFieldParams::new(0.1, 1e-6, -1.0).is_err());
        let p = PhaseFieldParams::new(0.1, 1e-6, 1.0).unwrap();
        assert_eq!(p.degradation(1.0), 1e-6);
        assert!(p.check_resolution(0.05));
        assert!(!p.check_resolution(0.06));
    }

    #[test]
    fn zero_fields_have_zero_energy() {
        let mesh = build_rectangle_mesh(1.0, 1.0, 0.25, 4, 4).unwrap();
        let p = PhaseFieldParams::default();
        let a = DamageField::zeros(mesh.num_vertices());
        let u = DisplacementField::zeros(mesh.num_vertices());
        assert_eq!(elastic_energy(&mesh, &iso(), &u, &a, &p).unwrap(), 0.0);
        assert_eq!(surface_energy(&mesh, &a, &p).unwrap(), 0.0);
    }

    #[test]
    fn fully_broken_scales_by_eta() {
        let mesh = build_rectangle_mesh(1.0, 1.0, 0.25, 4, 4).unwrap();
        let p = PhaseFieldParams::new(0.1, 1e-6, 1.0).unwrap();
        let u = DisplacementField::from_fn(&mesh.vertices, |x| [x[0] * x[1], -0.3 * x[0]]);
        let intact = elastic_energy(
            &mesh,
            &iso(),
            &u,
            &DamageField::zeros(mesh.num_vertices()),
            &p,
        )
        .unwrap();
        let broken = DamageField {
            values: vec![1.0; mesh.num_vertices()],
        };
        let e = elastic_energy(&mesh, &iso(), &u, &broken, &p).unwrap();
        assert!((e - 1e-6 / (1.0 + 1e-6) * intact).abs() <= 1e-12 * intact);
    }

    #[test]
    fn constant_damage_surface_formula() {
        let mesh = build_rectangle_mesh(2.0, 1.0, 0.5, 4, 3).unwrap();
        let p = PhaseFieldParams::new(0.3, 1e-6, 2.0).unwrap();
        let c = 0.4;
        let a = DamageField {
            values: vec![c; mesh.num_vertices()],
        };
        let expected = 0.5 * p.kappa * c * c * mesh.total_area() / p.ell;
        let got = surface_energy(&mesh, &a, &p).unwrap();
        assert!((got - expected).abs() < 1e-12 * expected);
    }

    #[test]
    fn check_rejects_padding_damage() {
        let mesh = build_rectangle_mesh(1.0, 1.0, 0.25, 2, 2).unwrap();
        let mut a = DamageField::zeros(mesh.num_vertices());
        a.values[0] = 0.5;
        assert!(a.check(&mesh).is_err());
        a.values[0] = 0.0;
        a.values[7] = 1.5;
        assert!(a.check(&mesh).is_err());
        a.values[7] = 0.5;
        assert!(a.check(&mesh).is_ok());
    }

    #[test]
    fn unloaded_damage_stays_between_bounds() {
        let mesh = build_rectangle_mesh(1.0, 1.0, 0.25, 8, 8).unwrap();
        let p = PhaseFieldParams::new(0.25, 1e-6, 1.0).unwrap();
        let pinned = mesh.region_vertices(Region::Padding);
        let lower = DamageField {
            values: (0..mesh.num_vertices())
                .map(|v| if pinned[v] { 0.0 } else { 0.1 * (v % 7) as f64 })
                .collect(),
        };
        let u = DisplacementField::zeros(mesh.num_vertices());
        let out = damage_subproblem(&mesh, &iso(), &u, &lower, &p, 1e-10).unwrap();
        let top = lower.values.iter().cloned().fold(0.0, f64::max);
        for (a, l) in out.values.iter().zip(&lower.values) {
            assert!(*a >= *l && *a <= top + 1e-12);
        }

        let zero = DamageField::zeros(mesh.num_vertices());
        let out = damage_subproblem(&mesh, &iso(), &u, &zero, &p, 1e-10).unwrap();
        assert_eq!(out, zero);
    }

    #[test]
    fn fully_broken_lower_bound_is_returned() {
        let mesh = build_rectangle_mesh(1.0, 1.0, 0.25, 6, 6).unwrap();
        let p = PhaseFieldParams::new(0.25, 1e-6, 1.0).unwrap();
        let pinned = mesh.region_vertices(Region::Padding);
        let lower = DamageField {
            values: pinned.iter().map(|&p| if p { 0.0 } else { 1.0 }).collect(),
        };
        let u = DisplacementField::from_fn(&mesh.vertices, |x| [x[0], 0.0]);
        let out = damage_subproblem(&mesh, &iso(), &u, &lower, &p, 1e-10).unwrap();
        assert_eq!(out, lower);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mesh = build_rectangle_mesh(1.0, 1.0, 0.25, 4, 4).unwrap();
        let p = PhaseFieldParams::new(0.2, 1e-6, 1.3).unwrap();
        let u = DisplacementField::from_fn(&mesh.vertices, |x| {
            [0.8 * x[0] + 0.1 * x[1] * x[1], 0.2 * x[0] * x[1]]
        });
        let assembler = DamageAssembler::new(&mesh).unwrap();
        let qp = assembler.program(&iso(), &u, &p);
        let alpha = DamageField {
            values: (0..mesh.num_vertices())
                .map(|v| 0.05 * (v % 11) as f64)
                .collect(),
        };
        let g = qp.gradient(&alpha.values);
        let h = 1e-6;
        for v in [3, 17, 22, 30] {
            let mut plus = alpha.clone();
            plus.values[v] += h;
            let mut minus = alpha.clone();
            minus.values[v] -= h;
            let fd = (qp.energy(&plus) - qp.energy(&minus)) / (2.0 * h);
            assert!((fd - g[v]).abs() < 1e-8, "vertex {v}: fd {fd} vs {}", g[v]);
        }
    }
}
