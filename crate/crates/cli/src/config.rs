//! Run configuration, read from TOML.
//!
//! ```toml
//! seed = 0
//! audit_times = [0.5, 1.0]
//!
//! [geometry]
//! width = 1.0
//! height = 1.0
//! pad = 0.0625
//! nx = 32
//! ny = 32
//!
//! [material]            # either lambda and mu, or voigt
//! lambda = 1.0
//! mu = 1.0
//!
//! [phase_field]
//! ell = 0.1
//! eta = 1e-6
//! kappa = 1.0
//!
//! [load]
//! mode = "uniaxial"     # uniaxial | shear | surfing
//! samples = [[0.0, 0.0], [1.0, 0.5]]
//! t_final = 1.0
//!
//! [grid]
//! n0 = 8
//! levels = 1
//!
//! [notch]               # optional initial crack
//! start = [0.0, 0.5]
//! end = [0.3, 0.5]
//!
//! [solver]              # optional, defaults shown
//! elastic_tol = 1e-10
//! damage_tol = 1e-8
//! am_tol = 1e-5
//! am_max_iter = 200
//! freeze_damage = false
//!
//! [output]
//! dir = "out"
//! ```
//!
//! Unknown keys are rejected. `load.coefficients` (polynomial amplitude in
//! `t`) may replace `load.samples`; `surfing` also needs `x0`, `y0` and
//! `speed`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use fracture_core::elasticity::{ElasticityTensor, SolverOptions};
use fracture_core::evolution::{
    nested_grids, Amplitude, EvolutionParams, LoadMode, LoadProgram, TimeGrid,
};
use fracture_core::mesh::build_rectangle_mesh;
use fracture_core::model::FractureModel;
use fracture_core::phasefield::{optimal_profile, DamageField, PhaseFieldParams};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub audit_times: Vec<f64>,
    pub geometry: Geometry,
    pub material: Material,
    pub phase_field: PhaseField,
    pub load: Load,
    pub grid: Grid,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub notch: Option<Notch>,
    #[serde(default)]
    pub solver: Solver,
    #[serde(default)]
    pub output: Output,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Geometry {
    pub width: f64,
    pub height: f64,
    pub pad: f64,
    pub nx: usize,
    pub ny: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Material {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub voigt: Option<[[f64; 3]; 3]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhaseField {
    pub ell: f64,
    #[serde(default = "default_eta")]
    pub eta: f64,
    #[serde(default = "default_kappa")]
    pub kappa: f64,
}

fn default_eta() -> f64 {
    1e-6
}

fn default_kappa() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModeName {
    Uniaxial,
    Shear,
    Surfing,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Load {
    pub mode: ModeName,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub samples: Option<Vec<[f64; 2]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coefficients: Option<Vec<f64>>,
    pub t_final: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x0: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub y0: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub speed: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grid {
    pub n0: usize,
    #[serde(default = "default_levels")]
    pub levels: usize,
}

fn default_levels() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Notch {
    pub start: [f64; 2],
    pub end: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Solver {
    pub elastic_tol: f64,
    pub damage_tol: f64,
    pub am_tol: f64,
    pub am_max_iter: usize,
    pub freeze_damage: bool,
}

impl Default for Solver {
    fn default() -> Self {
        let p = EvolutionParams::default();
        Solver {
            elastic_tol: p.elastic.tol,
            damage_tol: p.damage_tol,
            am_tol: p.am_tol,
            am_max_iter: p.am_max_iter,
            freeze_damage: p.freeze_damage,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Output {
    pub dir: PathBuf,
}

impl Default for Output {
    fn default() -> Self {
        Output {
            dir: PathBuf::from("out"),
        }
    }
}

fn invalid(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| invalid(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Missing(format!("{}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| match e {
            CliError::Config(m) => invalid(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    /// Checks that cannot be expressed in the schema; everything else is
    /// checked when the model is built.
    pub fn validate(&self) -> Result<(), CliError> {
        let m = &self.material;
        match (m.lambda, m.mu, m.voigt) {
            (Some(_), Some(_), None) | (None, None, Some(_)) => {}
            _ => {
                return Err(invalid(
                    "material: give either `lambda` and `mu`, or `voigt`",
                ))
            }
        }
        let l = &self.load;
        match (&l.samples, &l.coefficients) {
            (Some(_), None) | (None, Some(_)) => {}
            _ => {
                return Err(invalid(
                    "load: give exactly one of `samples` and `coefficients`",
                ))
            }
        }
        if l.mode == ModeName::Surfing && (l.x0.is_none() || l.y0.is_none() || l.speed.is_none()) {
            return Err(invalid("load: mode `surfing` needs `x0`, `y0` and `speed`"));
        }
        if l.mode != ModeName::Surfing && (l.x0.is_some() || l.y0.is_some() || l.speed.is_some()) {
            return Err(invalid(
                "load: `x0`, `y0` and `speed` only apply to mode `surfing`",
            ));
        }
        if self.grid.n0 == 0 || self.grid.levels == 0 {
            return Err(invalid("grid: `n0` and `levels` must be positive"));
        }
        for &t in &self.audit_times {
            if !(0.0..=l.t_final).contains(&t) {
                return Err(invalid(format!(
                    "audit_times: {t} lies outside [0, {}]",
                    l.t_final
                )));
            }
        }
        Ok(())
    }

    pub fn tensor(&self) -> Result<ElasticityTensor, CliError> {
        let m = &self.material;
        let c = match (m.lambda, m.mu, m.voigt) {
            (Some(l), Some(mu), _) => ElasticityTensor::isotropic(l, mu),
            (_, _, Some(v)) => ElasticityTensor::from_voigt(v),
            _ => unreachable!("validated"),
        };
        c.map_err(|e| invalid(format!("material: {e}")))
    }

    pub fn model(&self) -> Result<FractureModel, CliError> {
        let g = &self.geometry;
        let mesh = build_rectangle_mesh(g.width, g.height, g.pad, g.nx, g.ny)
            .map_err(|e| invalid(format!("geometry: {e}")))?;
        let pf = &self.phase_field;
        let params = PhaseFieldParams::new(pf.ell, pf.eta, pf.kappa)
            .map_err(|e| invalid(format!("phase_field: {e}")))?;
        FractureModel::new(mesh, self.tensor()?, params).map_err(|e| invalid(e.to_string()))
    }

    pub fn program(&self) -> Result<LoadProgram, CliError> {
        let l = &self.load;
        let amplitude = match (&l.samples, &l.coefficients) {
            (Some(s), _) => Amplitude::PiecewiseLinear(s.iter().map(|p| (p[0], p[1])).collect()),
            (_, Some(c)) => Amplitude::Polynomial(c.clone()),
            _ => unreachable!("validated"),
        };
        let mode = match l.mode {
            ModeName::Uniaxial => LoadMode::UniaxialStretch,
            ModeName::Shear => LoadMode::Shear,
            ModeName::Surfing => LoadMode::Surfing {
                x0: l.x0.unwrap_or_default(),
                y0: l.y0.unwrap_or_default(),
                speed: l.speed.unwrap_or_default(),
            },
        };
        LoadProgram::new(mode, amplitude, l.t_final).map_err(|e| invalid(format!("load: {e}")))
    }

    pub fn grids(&self) -> Result<Vec<TimeGrid>, CliError> {
        nested_grids(self.load.t_final, self.grid.n0, self.grid.levels)
            .map_err(|e| invalid(format!("grid: {e}")))
    }

    pub fn params(&self) -> Result<EvolutionParams, CliError> {
        let s = &self.solver;
        let p = EvolutionParams {
            elastic: SolverOptions {
                tol: s.elastic_tol,
                ..SolverOptions::default()
            },
            damage_tol: s.damage_tol,
            am_tol: s.am_tol,
            am_max_iter: s.am_max_iter,
            freeze_damage: s.freeze_damage,
            ..EvolutionParams::default()
        };
        p.validate().map_err(|e| invalid(format!("solver: {e}")))?;
        Ok(p)
    }

    /// Initial damage: the optimal profile around the notch, or zero.
    pub fn initial_damage(&self, model: &FractureModel) -> DamageField {
        match &self.notch {
            Some(n) => optimal_profile(
                model.mesh(),
                model.pinned(),
                n.start,
                n.end,
                model.params().ell,
            ),
            None => DamageField::zeros(model.num_vertices()),
        }
    }
}
