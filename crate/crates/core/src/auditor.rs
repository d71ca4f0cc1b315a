//! Post-hoc checks of the stability of computed states: first-order
//! residuals and energy margins against a finite family of competitors.
//!
//! Classes:
//! - `rigid`: add a rigid motion to a crack-separated component that does
//!   not touch the padding;
//! - `bump`: add a smooth field vanishing on the Dirichlet vertices;
//! - `strip`: open a fresh straight crack, relax the displacement and pay
//!   its surface energy;
//! - `transfer`: rebuild the field inside the broken set by extending the
//!   neighboring intact field across the band edge.
//!
//! The first two follow from stationarity and convexity in `u` and are hard
//! checks. The last two probe global minimality, which alternate
//! minimization does not guarantee, and are only reported.

use std::f64::consts::PI;
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::elasticity::{equilibrium_residual, DisplacementField, SolverOptions};
use crate::error::{FractureError, Result};
use crate::evolution::State;
use crate::mesh::{distance, Point};
use crate::model::FractureModel;
use crate::nitsche::{nitsche_extend, Frame, NitscheExtension};
use crate::phasefield::{optimal_profile, DamageField};
use crate::rigid_korn::{crack_partition, InfRigidMotion, BROKEN};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum CompetitorClass {
    Rigid,
    Bump,
    Strip,
    Transfer,
}

impl CompetitorClass {
    /// Whether a negative margin fails the audit.
    pub fn is_hard(self) -> bool {
        matches!(self, CompetitorClass::Rigid | CompetitorClass::Bump)
    }

    pub fn name(self) -> &'static str {
        match self {
            CompetitorClass::Rigid => "rigid",
            CompetitorClass::Bump => "bump",
            CompetitorClass::Strip => "strip",
            CompetitorClass::Transfer => "transfer",
        }
    }
}

impl fmt::Display for CompetitorClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct KktResidual {
    /// `||K_ff u_f - r|| / ||r||`.
    pub elastic: f64,
    /// Projected-gradient components, each divided by
    /// `1 + ||grad F(alpha_lower)||_inf`, on nodes at the lower bound, strictly
    /// between the bounds, and at the upper bound.
    pub damage_active: f64,
    pub damage_inactive: f64,
    pub damage_upper: f64,
}

impl KktResidual {
    pub fn damage(&self) -> f64 {
        self.damage_active
            .max(self.damage_inactive)
            .max(self.damage_upper)
    }
}

/// First-order residuals of `state` with irreversibility bound
/// `alpha_lower`.
pub fn kkt_residual(
    model: &FractureModel,
    state: &State,
    alpha_lower: &DamageField,
) -> Result<KktResidual> {
    model.check_sizes(&state.u, &state.alpha)?;
    model.check_sizes(&state.u, alpha_lower)?;
    let k = model.stiffness_matrix(&state.alpha)?;
    let elastic = equilibrium_residual(&k, model.dirichlet(), &state.u);

    let qp = model.damage_program(&state.u);
    let pinned = model.pinned();
    let lower: Vec<f64> = alpha_lower
        .values
        .iter()
        .zip(pinned)
        .map(|(&a, &p)| if p { 0.0 } else { a })
        .collect();
    let scale = 1.0
        + qp.gradient(&lower)
            .iter()
            .zip(pinned)
            .filter(|(_, p)| !**p)
            .fold(0.0_f64, |m, (g, _)| m.max(g.abs()));
    let grad = qp.gradient(&state.alpha.values);
    let mut out = KktResidual {
        elastic,
        ..KktResidual::default()
    };
    for (v, (&a, &g)) in state.alpha.values.iter().zip(&grad).enumerate() {
        if pinned[v] {
            continue;
        }
        let pg = ((a - g).clamp(lower[v], 1.0) - a).abs() / scale;
        let slot = if a <= lower[v] {
            &mut out.damage_active
        } else if a >= 1.0 {
            &mut out.damage_upper
        } else {
            &mut out.damage_inactive
        };
        *slot = slot.max(pg);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompetitorMargin {
    pub name: String,
    pub class: CompetitorClass,
    /// `E(v) + new surface - E(u)`.
    pub margin: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AuditOptions {
    pub elastic: SolverOptions,
    /// Inner tolerances the state was computed with; KKT residuals are
    /// checked against ten times these.
    pub elastic_tol: f64,
    pub damage_tol: f64,
    /// Relative margin tolerance; the absolute one is this times the energy
    /// scale.
    pub margin_tol: f64,
    pub threshold: f64,
    pub epsilons: Vec<f64>,
    pub max_strips: usize,
    pub extension: NitscheExtension,
    pub seed: u64,
}

impl Default for AuditOptions {
    fn default() -> Self {
        AuditOptions {
            elastic: SolverOptions::default(),
            elastic_tol: 1e-10,
            damage_tol: 1e-8,
            margin_tol: 1e-8,
            threshold: 0.9,
            epsilons: vec![-1e-1, -1e-2, 1e-2, 1e-1],
            max_strips: 20,
            extension: NitscheExtension::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StabilityReport {
    pub t: f64,
    pub kkt: KktResidual,
    pub margins: Vec<CompetitorMargin>,
    pub energy_scale: f64,
    pub margin_tol: f64,
    pub kkt_elastic_limit: f64,
    pub kkt_damage_limit: f64,
}

impl StabilityReport {
    /// Descriptions of every failed hard check.
    pub fn hard_failures(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !(self.kkt.elastic <= self.kkt_elastic_limit) {
            out.push(format!(
                "elastic KKT residual {:e} exceeds {:e}",
                self.kkt.elastic, self.kkt_elastic_limit
            ));
        }
        if !(self.kkt.damage() <= self.kkt_damage_limit) {
            out.push(format!(
                "damage KKT residual {:e} exceeds {:e}",
                self.kkt.damage(),
                self.kkt_damage_limit
            ));
        }
        for m in &self.margins {
            if m.class.is_hard() && !(m.margin >= -self.margin_tol) {
                out.push(format!(
                    "{} margin {:e} below -{:e}",
                    m.name, m.margin, self.margin_tol
                ));
            }
        }
        out
    }

    pub fn passed(&self) -> bool {
        self.hard_failures().is_empty()
    }

    pub fn min_margin(&self, class: CompetitorClass) -> Option<f64> {
        self.margins
            .iter()
            .filter(|m| m.class == class)
            .map(|m| m.margin)
            .reduce(f64::min)
    }
}

fn tag<T>(name: &str, r: Result<T>) -> Result<T> {
    r.map_err(|e| FractureError::Competitor {
        name: name.to_string(),
        source: Box::new(e),
    })
}

/// Displacement scale for perturbations: `sup |u|`, or a thousandth of the
/// domain diameter when `u` vanishes.
fn perturbation_scale(model: &FractureModel, u: &DisplacementField) -> f64 {
    let (lo, hi) = model.mesh().bounding_box();
    let s = u.sup_norm();
    if s > 0.0 {
        s
    } else {
        1e-3 * distance(lo, hi)
    }
}

fn rigid_competitors(
    model: &FractureModel,
    state: &State,
    base: f64,
    scale: f64,
    opts: &AuditOptions,
) -> Result<Vec<CompetitorMargin>> {
    let mesh = model.mesh();
    let part = crack_partition(mesh, &state.alpha, opts.threshold)?;
    let (lo, hi) = mesh.bounding_box();
    let diam = distance(lo, hi);
    let mut out = Vec::new();
    for j in 1..=part.num_components() {
        if part.padding_touch[j] {
            continue;
        }
        let mut on = vec![false; mesh.num_vertices()];
        let mut centroid = [0.0; 2];
        let mut area = 0.0;
        for t in part.members(j) {
            let a = mesh.area(t);
            let c = mesh.centroid(t);
            centroid[0] += a * c[0];
            centroid[1] += a * c[1];
            area += a;
            for &v in &mesh.triangles[t] {
                on[v] = !model.dirichlet().contains(v);
            }
        }
        centroid = [centroid[0] / area, centroid[1] / area];
        let shapes = [
            ("x", InfRigidMotion::new(0.0, [1.0, 0.0])),
            ("y", InfRigidMotion::new(0.0, [0.0, 1.0])),
            (
                "rot",
                InfRigidMotion::new(1.0 / diam, [centroid[1] / diam, -centroid[0] / diam]),
            ),
        ];
        for (label, motion) in shapes {
            for &eps in &opts.epsilons {
                let mut v = state.u.clone();
                for (k, _) in on.iter().enumerate().filter(|(_, o)| **o) {
                    let a = motion.eval(mesh.vertices[k]);
                    let uk = v.at(k);
                    v.set(k, [uk[0] + eps * scale * a[0], uk[1] + eps * scale * a[1]]);
                }
                out.push(CompetitorMargin {
                    name: format!("rigid-c{j}-{label}-eps{eps:e}"),
                    class: CompetitorClass::Rigid,
                    margin: model.elastic_energy(&v, &state.alpha) - base,
                });
            }
        }
    }
    Ok(out)
}

fn bump_competitors(
    model: &FractureModel,
    state: &State,
    base: f64,
    scale: f64,
    opts: &AuditOptions,
) -> Vec<CompetitorMargin> {
    let mesh = model.mesh();
    let (lo, hi) = mesh.bounding_box();
    let (x0, x1) = model
        .dirichlet()
        .mask()
        .iter()
        .zip(&mesh.vertices)
        .filter(|(d, _)| !**d)
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), (_, x)| {
            (a.min(x[0]), b.max(x[0]))
        });
    // The free vertices lie strictly inside (x0 - h, x1 + h); widen so the
    // bump is positive on all of them.
    let h = mesh.max_edge_length();
    let (x0, x1) = (x0 - 0.5 * h, x1 + 0.5 * h);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut out = Vec::new();
    for (kx, ky) in [(1, 1), (2, 1), (1, 2), (3, 2)] {
        let dir: [f64; 2] = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
        let norm = dir[0].hypot(dir[1]).max(1e-3);
        let dir = [dir[0] / norm, dir[1] / norm];
        let bump = |x: Point| {
            if model_is_outside(x[0], x0, x1) {
                return 0.0;
            }
            let sx = (kx as f64 * PI * (x[0] - x0) / (x1 - x0)).sin();
            let sy = (ky as f64 * PI * (x[1] - lo[1]) / (hi[1] - lo[1]) * 0.5 + 0.25 * PI).sin();
            sx * sy
        };
        for &eps in &opts.epsilons {
            let mut v = state.u.clone();
            for k in 0..mesh.num_vertices() {
                if model.dirichlet().contains(k) {
                    continue;
                }
                let b = eps * scale * bump(mesh.vertices[k]);
                let uk = v.at(k);
                v.set(k, [uk[0] + b * dir[0], uk[1] + b * dir[1]]);
            }
            out.push(CompetitorMargin {
                name: format!("bump-{kx}x{ky}-eps{eps:e}"),
                class: CompetitorClass::Bump,
                margin: model.elastic_energy(&v, &state.alpha) - base,
            });
        }
    }
    out
}

fn model_is_outside(x: f64, x0: f64, x1: f64) -> bool {
    x <= x0 || x >= x1
}

/// Straight segments for fresh cracks: full-height vertical lines, half
/// height vertical lines from the bottom edge, and full-width horizontal
/// lines, on vertex coordinates of the free region.
fn strip_segments(model: &FractureModel, max_strips: usize) -> Vec<(String, Point, Point)> {
    let mesh = model.mesh();
    let free: Vec<Point> = mesh
        .vertices
        .iter()
        .enumerate()
        .filter(|(v, _)| !model.dirichlet().contains(*v))
        .map(|(_, x)| *x)
        .collect();
    if free.is_empty() || max_strips == 0 {
        return Vec::new();
    }
    let (lo, hi) = mesh.bounding_box();
    let unique = |d: usize| {
        let mut c: Vec<f64> = free.iter().map(|x| x[d]).collect();
        c.sort_by(f64::total_cmp);
        c.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * (1.0 + b.abs()));
        c
    };
    let xs = unique(0);
    let ys = unique(1);
    let pick = |c: &[f64], n: usize| -> Vec<f64> {
        if c.len() <= 2 || n == 0 {
            return Vec::new();
        }
        (1..=n).map(|k| c[k * (c.len() - 1) / (n + 1)]).collect()
    };
    let per = (max_strips / 3).max(1);
    let mut out = Vec::new();
    for x in pick(&xs, per) {
        out.push((format!("strip-v-x{x:.4}"), [x, lo[1]], [x, hi[1]]));
    }
    for x in pick(&xs, per) {
        out.push((
            format!("strip-hv-x{x:.4}"),
            [x, lo[1]],
            [x, 0.5 * (lo[1] + hi[1])],
        ));
    }
    let rest = max_strips.saturating_sub(out.len());
    for y in pick(&ys, rest.min(per + max_strips % 3)) {
        out.push((
            format!("strip-h-y{y:.4}"),
            [xs[0], y],
            [xs[xs.len() - 1], y],
        ));
    }
    out.truncate(max_strips);
    out
}

fn strip_competitor(
    model: &FractureModel,
    state: &State,
    base_total: f64,
    name: &str,
    a: Point,
    b: Point,
    opts: &AuditOptions,
) -> Result<CompetitorMargin> {
    let mesh = model.mesh();
    let fresh = optimal_profile(mesh, model.pinned(), a, b, model.params().ell);
    let alpha = DamageField {
        values: fresh
            .values
            .iter()
            .zip(&state.alpha.values)
            .map(|(f, o)| f.max(*o))
            .collect(),
    };
    // The boundary datum is the current one, read off the state.
    let sol = tag(
        name,
        model.solve_elastic(&alpha, &state.u, &opts.elastic, Some(&state.u)),
    )?;
    Ok(CompetitorMargin {
        name: name.to_string(),
        class: CompetitorClass::Strip,
        margin: model.total_energy(&sol.u, &alpha) - base_total,
    })
}

fn transfer_competitors(
    model: &FractureModel,
    state: &State,
    base: f64,
    opts: &AuditOptions,
) -> Result<Vec<CompetitorMargin>> {
    let mesh = model.mesh();
    let part = crack_partition(mesh, &state.alpha, opts.threshold)?;
    let broken_tri: Vec<bool> = part.labels.iter().map(|&l| l == BROKEN).collect();
    if !broken_tri.iter().any(|b| *b) {
        return Ok(Vec::new());
    }
    // Vertices all of whose triangles are broken.
    let mut all_broken = vec![true; mesh.num_vertices()];
    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    for (t, tri) in mesh.triangles.iter().enumerate() {
        for &v in tri {
            all_broken[v] &= broken_tri[t];
            if broken_tri[t] {
                let x = mesh.vertices[v];
                for d in 0..2 {
                    lo[d] = lo[d].min(x[d]);
                    hi[d] = hi[d].max(x[d]);
                }
            }
        }
    }
    let (mlo, mhi) = mesh.bounding_box();
    let candidates = [
        (
            "transfer-from-left",
            Frame::vertical(lo[0], false),
            hi[0] - lo[0],
            lo[0] - mlo[0],
        ),
        (
            "transfer-from-right",
            Frame::vertical(hi[0], true),
            hi[0] - lo[0],
            mhi[0] - hi[0],
        ),
        (
            "transfer-from-below",
            Frame::horizontal(lo[1], false),
            hi[1] - lo[1],
            lo[1] - mlo[1],
        ),
        (
            "transfer-from-above",
            Frame::horizontal(hi[1], true),
            hi[1] - lo[1],
            mhi[1] - hi[1],
        ),
    ];
    let mut out = Vec::new();
    for (name, frame, depth, room) in candidates {
        // Samples land at most mu * depth into the known side.
        if !(depth > 0.0) || room < opts.extension.mu() * depth {
            continue;
        }
        let targets: Vec<bool> = (0..mesh.num_vertices())
            .map(|v| {
                let (_, h) = frame.local(mesh.vertices[v]);
                all_broken[v] && !model.dirichlet().contains(v) && h < 0.0
            })
            .collect();
        if !targets.iter().any(|t| *t) {
            continue;
        }
        let v = tag(
            name,
            nitsche_extend(mesh, &state.u, &frame, &targets, &opts.extension),
        )?;
        out.push(CompetitorMargin {
            name: name.to_string(),
            class: CompetitorClass::Transfer,
            margin: model.elastic_energy(&v, &state.alpha) - base,
        });
    }
    Ok(out)
}

/// KKT residuals and competitor margins at one state. `alpha_lower` is the
/// irreversibility bound the state was computed with and `energy_scale`
/// sets the absolute margin tolerance.
pub fn competitor_suite(
    model: &FractureModel,
    state: &State,
    alpha_lower: &DamageField,
    energy_scale: f64,
    opts: &AuditOptions,
) -> Result<StabilityReport> {
    let kkt = kkt_residual(model, state, alpha_lower)?;
    let elastic = model.elastic_energy(&state.u, &state.alpha);
    let total = elastic + model.surface_energy(&state.alpha);
    let scale = perturbation_scale(model, &state.u);

    let mut margins = rigid_competitors(model, state, elastic, scale, opts)?;
    margins.extend(bump_competitors(model, state, elastic, scale, opts));

    let strips = strip_segments(model, opts.max_strips);
    let strip_results: Vec<Result<CompetitorMargin>> = std::thread::scope(|s| {
        let handles: Vec<_> = strips
            .iter()
            .map(|(name, a, b)| {
                s.spawn(move || strip_competitor(model, state, total, name, *a, *b, opts))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("strip competitor panicked"))
            .collect()
    });
    for r in strip_results {
        margins.push(r?);
    }
    margins.extend(transfer_competitors(model, state, elastic, opts)?);

    let scale_energy = energy_scale.abs().max(total.abs()).max(f64::MIN_POSITIVE);
    Ok(StabilityReport {
        t: state.t,
        kkt,
        margins,
        energy_scale: scale_energy,
        margin_tol: opts.margin_tol * scale_energy,
        kkt_elastic_limit: 10.0 * opts.elastic_tol,
        kkt_damage_limit: 10.0 * opts.damage_tol,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::elasticity::ElasticityTensor;
    use crate::evolution::{run, Amplitude, EvolutionParams, LoadMode, LoadProgram, TimeGrid};
    use crate::mesh::build_rectangle_mesh;
    use crate::phasefield::PhaseFieldParams;

    fn model() -> FractureModel {
        let mesh = build_rectangle_mesh(1.0, 1.0, 0.125, 12, 12).unwrap();
        let c = ElasticityTensor::isotropic(1.0, 1.0).unwrap();
        FractureModel::new(mesh, c, PhaseFieldParams::new(0.2, 1e-6, 1.0).unwrap()).unwrap()
    }

    #[test]
    fn converged_state_passes() {
        let model = model();
        let program =
            LoadProgram::new(LoadMode::UniaxialStretch, Amplitude::linear(0.2), 1.0).unwrap();
        let grid = TimeGrid::uniform(1.0, 2).unwrap();
        let traj = run(&model, &program, &grid, None, &EvolutionParams::default()).unwrap();
        let state = &traj.states[2];
        let report = competitor_suite(
            &model,
            state,
            &traj.states[1].alpha,
            traj.energy_scale(),
            &AuditOptions::default(),
        )
        .unwrap();
        assert!(report.passed(), "{:?}", report.hard_failures());
        assert!(report.min_margin(CompetitorClass::Strip).unwrap() > 0.0);
    }

    #[test]
    fn noise_raises_elastic_residual() {
        let model = model();
        let program = LoadProgram::new(LoadMode::Shear, Amplitude::linear(0.1), 1.0).unwrap();
        let grid = TimeGrid::uniform(1.0, 1).unwrap();
        let traj = run(&model, &program, &grid, None, &EvolutionParams::default()).unwrap();
        let state = &traj.states[1];
        let lower = &traj.states[0].alpha;
        let clean = kkt_residual(&model, state, lower).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let noise: Vec<f64> = (0..2 * model.num_vertices())
            .map(|_| rng.gen_range(-1.0..1.0))
            .collect();
        let mut residuals = Vec::new();
        for amp in [1e-4, 1e-3] {
            let mut u = state.u.clone();
            for (i, n) in noise.iter().enumerate() {
                if !model.dirichlet().contains(i / 2) {
                    u.as_mut_slice()[i] += amp * n;
                }
            }
            let noisy = State { u, ..state.clone() };
            residuals.push(kkt_residual(&model, &noisy, lower).unwrap().elastic);
        }
        assert!(residuals[0] > 1e3 * clean.elastic.max(1e-14));
        assert!((residuals[1] / residuals[0] - 10.0).abs() < 0.5);
    }

    #[test]
    fn lowered_damage_breaks_inactive_stationarity() {
        let model = model();
        let program =
            LoadProgram::new(LoadMode::UniaxialStretch, Amplitude::linear(0.5), 1.0).unwrap();
        let grid = TimeGrid::uniform(1.0, 1).unwrap();
        let traj = run(&model, &program, &grid, None, &EvolutionParams::default()).unwrap();
        let mut state = traj.states[1].clone();
        let zero = DamageField::zeros(model.num_vertices());
        let before = kkt_residual(&model, &state, &zero).unwrap();
        assert!(before.damage() <= 1e-7);
        for a in state.alpha.values.iter_mut() {
            if *a > 0.01 {
                *a *= 0.5;
            }
        }
        let after = kkt_residual(&model, &state, &zero).unwrap();
        assert!(after.damage_inactive > 1e-6);
    }
}
