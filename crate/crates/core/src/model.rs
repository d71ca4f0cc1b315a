//! A mesh, material and phase-field parameters bundled with the cached
//! assembly data shared by the evolution and the audits.

use crate::elasticity::{
    element_strain, quadratic_form, solve_elastic_from, DisplacementField, ElasticSolution,
    ElasticityTensor, SolverOptions, StiffnessAssembler, Sym2,
};
use crate::error::{FractureError, Result};
use crate::mesh::{dirichlet_set, validate, DirichletSet, ElementGeometry, Mesh};
use crate::phasefield::{
    element_surface, DamageAssembler, DamageField, DamageQp, PhaseFieldParams,
};
use crate::sparse::CsrMatrix;

#[derive(Debug, Clone)]
pub struct FractureModel {
    mesh: Mesh,
    c: ElasticityTensor,
    params: PhaseFieldParams,
    dirichlet: DirichletSet,
    stiffness: StiffnessAssembler,
    damage: DamageAssembler,
}

impl FractureModel {
    /// Validates the mesh and precomputes element data. Fails on any mesh
    /// violation or when no vertex carries the boundary datum.
    pub fn new(mesh: Mesh, c: ElasticityTensor, params: PhaseFieldParams) -> Result<Self> {
        let violations = validate(&mesh);
        if !violations.is_empty() {
            let list: Vec<String> = violations.iter().map(|v| v.to_string()).collect();
            return Err(FractureError::InvalidGeometry(list.join("; ")));
        }
        let dirichlet = dirichlet_set(&mesh);
        if dirichlet.is_empty() {
            return Err(FractureError::InvalidGeometry(
                "mesh has no padding vertices".into(),
            ));
        }
        params.check_resolution(mesh.max_edge_length());
        let stiffness = StiffnessAssembler::new(&mesh, &c)?;
        let damage = DamageAssembler::new(&mesh)?;
        Ok(FractureModel {
            mesh,
            c,
            params,
            dirichlet,
            stiffness,
            damage,
        })
    }

    pub fn mesh(&self) -> &Mesh {
        &self.mesh
    }

    pub fn tensor(&self) -> &ElasticityTensor {
        &self.c
    }

    pub fn params(&self) -> &PhaseFieldParams {
        &self.params
    }

    pub fn dirichlet(&self) -> &DirichletSet {
        &self.dirichlet
    }

    pub fn geometry(&self) -> &[ElementGeometry] {
        &self.stiffness.geometry
    }

    pub fn num_vertices(&self) -> usize {
        self.mesh.num_vertices()
    }

    /// Padding vertices, where damage is pinned to zero.
    pub fn pinned(&self) -> &[bool] {
        self.damage.pinned()
    }

    pub fn degradation(&self, alpha: &DamageField) -> Vec<f64> {
        self.mesh
            .triangles
            .iter()
            .map(|&tri| self.params.degradation(alpha.element_mean(tri)))
            .collect()
    }

    pub fn stiffness_matrix(&self, alpha: &DamageField) -> Result<CsrMatrix> {
        self.stiffness
            .assemble(&self.degradation(alpha), self.params.eta)
    }

    pub fn strains(&self, u: &DisplacementField) -> Vec<Sym2> {
        self.geometry()
            .iter()
            .zip(&self.mesh.triangles)
            .map(|(g, &tri)| element_strain(g, tri, u))
            .collect()
    }

    pub fn elastic_energy(&self, u: &DisplacementField, alpha: &DamageField) -> f64 {
        self.geometry()
            .iter()
            .zip(&self.mesh.triangles)
            .map(|(g, &tri)| {
                g.area
                    * self.params.degradation(alpha.element_mean(tri))
                    * quadratic_form(&self.c, element_strain(g, tri, u))
            })
            .sum()
    }

    pub fn surface_energy(&self, alpha: &DamageField) -> f64 {
        self.geometry()
            .iter()
            .zip(&self.mesh.triangles)
            .map(|(g, &tri)| element_surface(g, tri, alpha, &self.params))
            .sum()
    }

    pub fn total_energy(&self, u: &DisplacementField, alpha: &DamageField) -> f64 {
        self.elastic_energy(u, alpha) + self.surface_energy(alpha)
    }

    /// `<sigma, e(w)>` with the degraded stress `deg(alpha) C e(u)`.
    pub fn stress_work(
        &self,
        u: &DisplacementField,
        alpha: &DamageField,
        w: &DisplacementField,
    ) -> f64 {
        self.geometry()
            .iter()
            .zip(&self.mesh.triangles)
            .map(|(g, &tri)| {
                let sigma = self.c.apply(element_strain(g, tri, u));
                g.area
                    * self.params.degradation(alpha.element_mean(tri))
                    * sigma.contract(element_strain(g, tri, w))
            })
            .sum()
    }

    pub fn damage_program(&self, u: &DisplacementField) -> DamageQp<'_> {
        self.damage.program(&self.c, u, &self.params)
    }

    /// Values of a global field on the Dirichlet vertices, in the order of
    /// `dirichlet().vertices`.
    pub fn boundary_values(&self, g: &DisplacementField) -> Vec<[f64; 2]> {
        self.dirichlet.vertices.iter().map(|&v| g.at(v)).collect()
    }

    /// Copy the Dirichlet values of `g` into `u`.
    pub fn impose(&self, u: &mut DisplacementField, g: &DisplacementField) {
        for &v in &self.dirichlet.vertices {
            u.set(v, g.at(v));
        }
    }

    /// Elastic minimizer for damage `alpha` and boundary datum taken from
    /// the global field `g`.
    pub fn solve_elastic(
        &self,
        alpha: &DamageField,
        g: &DisplacementField,
        opts: &SolverOptions,
        warm: Option<&DisplacementField>,
    ) -> Result<ElasticSolution> {
        let k = self.stiffness_matrix(alpha)?;
        solve_elastic_from(&k, &self.dirichlet, &self.boundary_values(g), opts, warm)
    }

    pub fn check_sizes(&self, u: &DisplacementField, alpha: &DamageField) -> Result<()> {
        if u.num_vertices() != self.num_vertices() {
            return Err(FractureError::SizeMismatch {
                what: "displacement field",
                expected: self.num_vertices(),
                found: u.num_vertices(),
            });
        }
        alpha.check(&self.mesh)
    }
}
