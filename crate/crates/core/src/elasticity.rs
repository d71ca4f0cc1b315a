//! Linearized elasticity on P1 triangles.
//!
//! Strains and stresses are handled in the orthonormal (Mandel) Voigt basis
//! `(e11, e22, sqrt(2) e12)`, in which the tensor contraction `A : B` is the
//! plain dot product and the stiffness is a symmetric 3x3 matrix.

use std::f64::consts::SQRT_2;

use crate::error::{FractureError, Result};
use crate::mesh::{DirichletSet, ElementGeometry, Mesh, Point};
use crate::sparse::{pcg_masked, AssemblyPattern, CsrMatrix};

/// Symmetric 2x2 tensor stored by its three independent components.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Sym2 {
    pub xx: f64,
    pub yy: f64,
    pub xy: f64,
}

impl Sym2 {
    pub const ZERO: Sym2 = Sym2 {
        xx: 0.0,
        yy: 0.0,
        xy: 0.0,
    };

    pub fn new(xx: f64, yy: f64, xy: f64) -> Self {
        Sym2 { xx, yy, xy }
    }

    pub fn identity() -> Self {
        Sym2::new(1.0, 1.0, 0.0)
    }

    /// Symmetric part of a full 2x2 matrix given row-major.
    pub fn sym_part(m: [[f64; 2]; 2]) -> Self {
        Sym2::new(m[0][0], m[1][1], 0.5 * (m[0][1] + m[1][0]))
    }

    pub fn to_mandel(self) -> [f64; 3] {
        [self.xx, self.yy, SQRT_2 * self.xy]
    }

    pub fn from_mandel(v: [f64; 3]) -> Self {
        Sym2::new(v[0], v[1], v[2] / SQRT_2)
    }

    /// `A : B`.
    pub fn contract(self, other: Sym2) -> f64 {
        self.xx * other.xx + self.yy * other.yy + 2.0 * self.xy * other.xy
    }

    pub fn norm_sq(self) -> f64 {
        self.contract(self)
    }

    pub fn trace(self) -> f64 {
        self.xx + self.yy
    }

    pub fn scaled(self, s: f64) -> Self {
        Sym2::new(s * self.xx, s * self.yy, s * self.xy)
    }
}

/// Symmetric positive-definite stiffness `C` acting on symmetric strains.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ElasticityTensor {
    voigt: [[f64; 3]; 3],
}

impl ElasticityTensor {
    /// From a 3x3 matrix in the Mandel basis `(e11, e22, sqrt(2) e12)`.
    pub fn from_voigt(c: [[f64; 3]; 3]) -> Result<Self> {
        for i in 0..3 {
            for j in 0..3 {
                if !c[i][j].is_finite() {
                    return Err(FractureError::InvalidParameters(
                        "stiffness has non-finite entries".into(),
                    ));
                }
                let scale = c[i][j].abs().max(c[j][i].abs()).max(f64::MIN_POSITIVE);
                if (c[i][j] - c[j][i]).abs() > 1e-12 * scale {
                    return Err(FractureError::InvalidParameters(format!(
                        "stiffness is not symmetric at ({i}, {j})"
                    )));
                }
            }
        }
        // Sylvester's criterion.
        let m1 = c[0][0];
        let m2 = c[0][0] * c[1][1] - c[0][1] * c[1][0];
        let m3 = det3(&c);
        if !(m1 > 0.0 && m2 > 0.0 && m3 > 0.0) {
            return Err(FractureError::InvalidParameters(format!(
                "stiffness is not positive definite (leading minors {m1:e}, {m2:e}, {m3:e})"
            )));
        }
        Ok(ElasticityTensor { voigt: c })
    }

    /// Isotropic stiffness `C e = 2 mu e + lambda tr(e) I`.
    pub fn isotropic(lambda: f64, mu: f64) -> Result<Self> {
        let d = lambda + 2.0 * mu;
        Self::from_voigt([[d, lambda, 0.0], [lambda, d, 0.0], [0.0, 0.0, 2.0 * mu]]).map_err(|_| {
            FractureError::InvalidParameters(format!(
                "Lame pair ({lambda}, {mu}) is not positive definite"
            ))
        })
    }

    pub fn voigt(&self) -> [[f64; 3]; 3] {
        self.voigt
    }

    pub fn apply(&self, e: Sym2) -> Sym2 {
        Sym2::from_mandel(mat_vec(&self.voigt, e.to_mandel()))
    }

    /// Compliance `C^{-1}` in the same basis.
    pub fn compliance(&self) -> [[f64; 3]; 3] {
        inverse3(&self.voigt)
    }

    /// Modulus under uniaxial stress along `x1`: `sigma11 / e11` with all
    /// other stress components zero.
    pub fn uniaxial_modulus(&self) -> f64 {
        1.0 / self.compliance()[0][0]
    }

    /// Strain response to a unit uniaxial stress along `x1`, normalized to
    /// `e11 = 1`.
    pub fn uniaxial_strain(&self) -> Sym2 {
        let s = self.compliance();
        Sym2::from_mandel([1.0, s[1][0] / s[0][0], s[2][0] / s[0][0]])
    }
}

fn det3(m: &[[f64; 3]; 3]) -> f64 {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
        - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

fn inverse3(m: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let det = det3(m);
    let mut inv = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            let (r0, r1) = match j {
                0 => (1, 2),
                1 => (0, 2),
                _ => (0, 1),
            };
            let (c0, c1) = match i {
                0 => (1, 2),
                1 => (0, 2),
                _ => (0, 1),
            };
            let minor = m[r0][c0] * m[r1][c1] - m[r0][c1] * m[r1][c0];
            let sign = if (i + j) % 2 == 0 { 1.0 } else { -1.0 };
            inv[i][j] = sign * minor / det;
        }
    }
    inv
}

pub(crate) fn mat_vec(m: &[[f64; 3]; 3], v: [f64; 3]) -> [f64; 3] {
    [
        m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
        m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
        m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
    ]
}

/// `Q(e) = 1/2 C e : e`.
pub fn quadratic_form(c: &ElasticityTensor, e: Sym2) -> f64 {
    0.5 * c.apply(e).contract(e)
}

/// Nodal displacement field, stored interleaved `[u0x, u0y, u1x, ...]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DisplacementField {
    data: Vec<f64>,
}

impl DisplacementField {
    pub fn zeros(num_vertices: usize) -> Self {
        DisplacementField {
            data: vec![0.0; 2 * num_vertices],
        }
    }

    pub fn from_vectors(values: &[[f64; 2]]) -> Self {
        DisplacementField {
            data: values.iter().flat_map(|v| [v[0], v[1]]).collect(),
        }
    }

    pub fn from_flat(data: Vec<f64>) -> Self {
        assert!(
            data.len() % 2 == 0,
            "interleaved field needs an even length"
        );
        DisplacementField { data }
    }

    /// Evaluate `f` at every vertex.
    pub fn from_fn(points: &[Point], f: impl Fn(Point) -> [f64; 2]) -> Self {
        DisplacementField {
            data: points.iter().flat_map(|&p| f(p)).collect(),
        }
    }

    pub fn num_vertices(&self) -> usize {
        self.data.len() / 2
    }

    pub fn at(&self, v: usize) -> [f64; 2] {
        [self.data[2 * v], self.data[2 * v + 1]]
    }

    pub fn set(&mut self, v: usize, value: [f64; 2]) {
        self.data[2 * v] = value[0];
        self.data[2 * v + 1] = value[1];
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn sup_norm(&self) -> f64 {
        (0..self.num_vertices())
            .map(|v| {
                let [x, y] = self.at(v);
                x.hypot(y)
            })
            .fold(0.0, f64::max)
    }

    /// `self + s * other`.
    pub fn axpy(&self, s: f64, other: &DisplacementField) -> DisplacementField {
        DisplacementField {
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a + s * b)
                .collect(),
        }
    }

    pub fn scaled(&self, s: f64) -> DisplacementField {
        DisplacementField {
            data: self.data.iter().map(|a| s * a).collect(),
        }
    }
}

/// Per-triangle constant strain of a P1 field.
pub type StrainField = Vec<Sym2>;

pub(crate) fn element_strain(
    geom: &ElementGeometry,
    tri: [usize; 3],
    u: &DisplacementField,
) -> Sym2 {
    let mut grad = [[0.0; 2]; 2];
    for (k, &v) in tri.iter().enumerate() {
        let uv = u.at(v);
        for i in 0..2 {
            for j in 0..2 {
                grad[i][j] += uv[i] * geom.grads[k][j];
            }
        }
    }
    Sym2::sym_part(grad)
}

fn check_size(mesh: &Mesh, u: &DisplacementField) -> Result<()> {
    if u.num_vertices() != mesh.num_vertices() {
        return Err(FractureError::SizeMismatch {
            what: "displacement field",
            expected: mesh.num_vertices(),
            found: u.num_vertices(),
        });
    }
    Ok(())
}

/// Elementwise symmetric gradient of the P1 interpolant of `u`.
pub fn sym_gradient(mesh: &Mesh, u: &DisplacementField) -> Result<StrainField> {
    check_size(mesh, u)?;
    (0..mesh.num_triangles())
        .map(|t| {
            Ok(element_strain(
                &mesh.element_geometry(t)?,
                mesh.triangles[t],
                u,
            ))
        })
        .collect()
}

/// Strain-displacement rows in the Mandel basis: `e = B u_T` with
/// `u_T = (u0x, u0y, u1x, u1y, u2x, u2y)`.
fn b_matrix(geom: &ElementGeometry) -> [[f64; 6]; 3] {
    let mut b = [[0.0; 6]; 3];
    for k in 0..3 {
        let [gx, gy] = geom.grads[k];
        b[0][2 * k] = gx;
        b[1][2 * k + 1] = gy;
        b[2][2 * k] = SQRT_2 * 0.5 * gy;
        b[2][2 * k + 1] = SQRT_2 * 0.5 * gx;
    }
    b
}

/// Dense 6x6 element stiffness `area * B^T C B`, row-major.
pub(crate) fn element_stiffness(c: &ElasticityTensor, geom: &ElementGeometry) -> [f64; 36] {
    let b = b_matrix(geom);
    let cm = c.voigt();
    let mut cb = [[0.0; 6]; 3];
    for i in 0..3 {
        for j in 0..6 {
            cb[i][j] = (0..3).map(|k| cm[i][k] * b[k][j]).sum();
        }
    }
    let mut k = [0.0; 36];
    for r in 0..6 {
        for s in 0..6 {
            k[6 * r + s] = geom.area * (0..3).map(|i| b[i][r] * cb[i][s]).sum::<f64>();
        }
    }
    k
}

/// Reusable assembler for one mesh and stiffness tensor: element matrices
/// and the sparsity pattern are computed once.
#[derive(Debug, Clone)]
pub struct StiffnessAssembler {
    pattern: AssemblyPattern,
    elements: Vec<[f64; 36]>,
    pub(crate) geometry: Vec<ElementGeometry>,
}

impl StiffnessAssembler {
    pub fn new(mesh: &Mesh, c: &ElasticityTensor) -> Result<Self> {
        let geometry = mesh.geometry()?;
        let dofs: Vec<Vec<usize>> = mesh
            .triangles
            .iter()
            .map(|tri| tri.iter().flat_map(|&v| [2 * v, 2 * v + 1]).collect())
            .collect();
        let pattern = AssemblyPattern::new(2 * mesh.num_vertices(), &dofs);
        let elements = geometry.iter().map(|g| element_stiffness(c, g)).collect();
        Ok(StiffnessAssembler {
            pattern,
            elements,
            geometry,
        })
    }

    /// `K` with each element scaled by its degradation factor; factors below
    /// `floor` are rejected.
    pub fn assemble(&self, degradation: &[f64], floor: f64) -> Result<CsrMatrix> {
        if degradation.len() != self.elements.len() {
            return Err(FractureError::SizeMismatch {
                what: "degradation factors",
                expected: self.elements.len(),
                found: degradation.len(),
            });
        }
        for (t, &d) in degradation.iter().enumerate() {
            if !(d >= floor) || !d.is_finite() {
                return Err(FractureError::FloorViolation {
                    triangle: t,
                    value: d,
                    floor,
                });
            }
        }
        let scaled: Vec<[f64; 36]> = self
            .elements
            .iter()
            .zip(degradation)
            .map(|(k, d)| k.map(|v| v * d))
            .collect();
        Ok(self
            .pattern
            .assemble(scaled.iter().enumerate().map(|(e, k)| (e, &k[..]))))
    }
}

/// Global stiffness with `u^T K u = 2 sum_T area(T) deg(T) Q(e(u)|_T)`.
pub fn assemble_stiffness(
    mesh: &Mesh,
    c: &ElasticityTensor,
    degradation: &[f64],
    floor: f64,
) -> Result<CsrMatrix> {
    StiffnessAssembler::new(mesh, c)?.assemble(degradation, floor)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverOptions {
    /// Relative residual target on the free rows.
    pub tol: f64,
    /// Iteration cap; `None` means `50 sqrt(free dofs)`.
    pub max_iter: Option<usize>,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            tol: 1e-10,
            max_iter: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ElasticSolution {
    pub u: DisplacementField,
    pub iterations: usize,
    pub relative_residual: f64,
}

/// Minimize `u^T K u` over fields equal to `g_values` on the Dirichlet
/// vertices (`g_values[k]` belongs to `dirichlet.vertices[k]`).
pub fn solve_elastic(
    k: &CsrMatrix,
    dirichlet: &DirichletSet,
    g_values: &[[f64; 2]],
    tol: f64,
) -> Result<DisplacementField> {
    let opts = SolverOptions {
        tol,
        max_iter: None,
    };
    solve_elastic_from(k, dirichlet, g_values, &opts, None).map(|s| s.u)
}

/// [`solve_elastic`] with an optional warm start for the free dofs.
pub fn solve_elastic_from(
    k: &CsrMatrix,
    dirichlet: &DirichletSet,
    g_values: &[[f64; 2]],
    opts: &SolverOptions,
    initial: Option<&DisplacementField>,
) -> Result<ElasticSolution> {
    let n = k.dim();
    if dirichlet.mask().len() * 2 != n {
        return Err(FractureError::SizeMismatch {
            what: "dirichlet mask",
            expected: n / 2,
            found: dirichlet.mask().len(),
        });
    }
    if g_values.len() != dirichlet.len() {
        return Err(FractureError::SizeMismatch {
            what: "boundary values",
            expected: dirichlet.len(),
            found: g_values.len(),
        });
    }
    if !(opts.tol > 0.0 && opts.tol < 1.0) {
        return Err(FractureError::InvalidParameters(format!(
            "solver tolerance {} not in (0, 1)",
            opts.tol
        )));
    }
    if let Some(init) = initial {
        if init.as_slice().len() != n {
            return Err(FractureError::SizeMismatch {
                what: "initial guess",
                expected: n / 2,
                found: init.num_vertices(),
            });
        }
    }

    let mut lift = vec![0.0; n];
    for (&v, g) in dirichlet.vertices.iter().zip(g_values) {
        lift[2 * v] = g[0];
        lift[2 * v + 1] = g[1];
    }
    let fixed: Vec<bool> = (0..n).map(|i| dirichlet.contains(i / 2)).collect();
    let load: Vec<f64> = k.mul_vec(&lift).into_iter().map(|v| -v).collect();

    let mut x = lift;
    if let Some(init) = initial {
        for i in 0..n {
            if !fixed[i] {
                x[i] = init.as_slice()[i];
            }
        }
    }
    let free = fixed.iter().filter(|f| !**f).count();
    let max_iter = opts
        .max_iter
        .unwrap_or_else(|| ((50.0 * (free as f64).sqrt()).ceil() as usize).max(10));
    let outcome = pcg_masked(k, &load, &fixed, &mut x, opts.tol, max_iter)?;
    Ok(ElasticSolution {
        u: DisplacementField::from_flat(x),
        iterations: outcome.iterations,
        relative_residual: outcome.relative_residual,
    })
}

/// Relative free-row residual `||K_ff u_f - r|| / ||r||` of a field that
/// already satisfies the boundary condition. Returns the absolute residual
/// when the load vanishes.
pub fn equilibrium_residual(k: &CsrMatrix, dirichlet: &DirichletSet, u: &DisplacementField) -> f64 {
    let n = k.dim();
    let mut lift = vec![0.0; n];
    for &v in &dirichlet.vertices {
        lift[2 * v] = u.as_slice()[2 * v];
        lift[2 * v + 1] = u.as_slice()[2 * v + 1];
    }
    let load = k.mul_vec(&lift);
    let ku = k.mul_vec(u.as_slice());
    let (mut res, mut rhs) = (0.0, 0.0);
    for i in 0..n {
        if !dirichlet.contains(i / 2) {
            res += ku[i] * ku[i];
            rhs += load[i] * load[i];
        }
    }
    if rhs > 0.0 {
        (res / rhs).sqrt()
    } else {
        res.sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_rectangle_mesh, dirichlet_set};

    fn iso() -> ElasticityTensor {
        ElasticityTensor::isotropic(1.0, 1.0).unwrap()
    }

    #[test]
    fn quadratic_form_values() {
        assert_eq!(quadratic_form(&iso(), Sym2::ZERO), 0.0);
        // mu |e|^2 + lambda/2 tr(e)^2 = 2 + 2.
        assert!((quadratic_form(&iso(), Sym2::identity()) - 4.0).abs() < 1e-14);
        let shear = ElasticityTensor::isotropic(0.0, 1.0).unwrap();
        assert!((quadratic_form(&shear, Sym2::new(0.0, 0.0, 1.0)) - 2.0).abs() < 1e-14);
    }

    #[test]
    fn rejects_indefinite_and_asymmetric() {
        assert!(ElasticityTensor::isotropic(1.0, 0.0).is_err());
        assert!(ElasticityTensor::isotropic(-2.0, 1.0).is_err());
        assert!(
            ElasticityTensor::from_voigt([[1.0, 0.5, 0.0], [0.4, 1.0, 0.0], [0.0, 0.0, 1.0]])
                .is_err()
        );
    }

    #[test]
    fn uniaxial_modulus_isotropic() {
        let (l, m) = (1.0, 1.0);
        let c = ElasticityTensor::isotropic(l, m).unwrap();
        let e = 4.0 * m * (l + m) / (l + 2.0 * m);
        assert!((c.uniaxial_modulus() - e).abs() < 1e-12);
        let s = c.uniaxial_strain();
        assert!((s.yy + l / (l + 2.0 * m)).abs() < 1e-12);
        let stress = c.apply(s);
        assert!(stress.yy.abs() < 1e-12 && stress.xy.abs() < 1e-12);
        assert!((stress.xx - e).abs() < 1e-12);
    }

    #[test]
    fn strain_of_rigid_and_affine_fields() {
        let mesh = build_rectangle_mesh(1.0, 1.0, 0.25, 3, 3).unwrap();
        let rigid =
            DisplacementField::from_fn(&mesh.vertices, |p| [-0.7 * p[1] + 0.2, 0.7 * p[0] - 1.0]);
        for e in sym_gradient(&mesh, &rigid).unwrap() {
            assert!(e.norm_sq().sqrt() < 1e-14);
        }
        let stretch = DisplacementField::from_fn(&mesh.vertices, |p| [p[0], 0.0]);
        for e in sym_gradient(&mesh, &stretch).unwrap() {
            assert!((e.xx - 1.0).abs() < 1e-13 && e.yy.abs() < 1e-13 && e.xy.abs() < 1e-13);
        }
    }

    #[test]
    fn strain_of_quadratic_on_reference_triangle() {
        use crate::mesh::Region;
        let mesh = Mesh::from_parts(
            vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]],
            vec![[0, 1, 2]],
            vec![Region::Interior],
        );
        let u = DisplacementField::from_fn(&mesh.vertices, |p| [p[1] * p[1], 0.0]);
        let e = sym_gradient(&mesh, &u).unwrap()[0];
        assert_eq!(e, Sym2::new(0.0, 0.0, 0.5));
    }

    #[test]
    fn degenerate_triangle_is_an_error() {
        use crate::mesh::Region;
        let mesh = Mesh::from_parts(
            vec![[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]],
            vec![[0, 1, 2]],
            vec![Region::Interior],
        );
        let u = DisplacementField::zeros(3);
        assert!(matches!(
            sym_gradient(&mesh, &u),
            Err(FractureError::DegenerateElement { triangle: 0, .. })
        ));
    }

    #[test]
    fn stiffness_scaling_and_floor() {
        let mesh = build_rectangle_mesh(1.0, 1.0, 0.25, 2, 2).unwrap();
        let nt = mesh.num_triangles();
        let k1 = assemble_stiffness(&mesh, &iso(), &vec![1.0; nt], 1e-6).unwrap();
        let k2 = assemble_stiffness(&mesh, &iso(), &vec![0.5; nt], 1e-6).unwrap();
        assert!(k1.is_symmetric(1e-14));
        let u = DisplacementField::from_fn(&mesh.vertices, |p| [p[0] * p[1], p[0] - p[1] * p[1]]);
        assert_eq!(k2.quadratic(u.as_slice()), 0.5 * k1.quadratic(u.as_slice()));
        let rigid = DisplacementField::from_fn(&mesh.vertices, |p| [-p[1] + 3.0, p[0]]);
        assert!(k1.quadratic(rigid.as_slice()).abs() < 1e-12);

        let mut low = vec![1.0; nt];
        low[5] = 1e-9;
        assert!(matches!(
            assemble_stiffness(&mesh, &iso(), &low, 1e-6),
            Err(FractureError::FloorViolation { triangle: 5, .. })
        ));
    }

    #[test]
    fn rigid_boundary_data_gives_rigid_solution() {
        let mesh = build_rectangle_mesh(2.0, 1.0, 0.25, 8, 4).unwrap();
        let d = dirichlet_set(&mesh);
        let k = assemble_stiffness(&mesh, &iso(), &vec![1.0; mesh.num_triangles()], 1e-6).unwrap();
        let motion = |p: Point| [0.3 - 0.5 * p[1], -0.1 + 0.5 * p[0]];
        let g: Vec<[f64; 2]> = d
            .vertices
            .iter()
            .map(|&v| motion(mesh.vertices[v]))
            .collect();
        let u = solve_elastic(&k, &d, &g, 1e-12).unwrap();
        for v in 0..mesh.num_vertices() {
            let want = motion(mesh.vertices[v]);
            let got = u.at(v);
            assert!((got[0] - want[0]).abs() < 1e-9 && (got[1] - want[1]).abs() < 1e-9);
        }
    }

    #[test]
    fn mismatched_sizes_are_rejected() {
        let mesh = build_rectangle_mesh(1.0, 1.0, 0.25, 2, 2).unwrap();
        let d = dirichlet_set(&mesh);
        let k = assemble_stiffness(&mesh, &iso(), &vec![1.0; mesh.num_triangles()], 1e-6).unwrap();
        assert!(matches!(
            solve_elastic(&k, &d, &[[0.0, 0.0]], 1e-8),
            Err(FractureError::SizeMismatch { .. })
        ));
        assert!(sym_gradient(&mesh, &DisplacementField::zeros(3)).is_err());
    }
}
