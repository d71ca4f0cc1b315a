//! Time-incremental quasistatic evolution.
//!
//! Each step minimizes the phase-field energy by alternating an elastic
//! solve and a damage solve, with the previous damage as a lower bound. The
//! result is compared with the previous state shifted by the boundary
//! increment and the lower-energy option is kept, so the discrete energy
//! inequality holds by construction.

use std::f64::consts::PI;
use std::fmt;

use log::{debug, warn};

use crate::elasticity::{DisplacementField, SolverOptions};
use crate::error::{FractureError, Result};
use crate::model::FractureModel;
use crate::phasefield::{DamageField, DEFAULT_DAMAGE_MAX_ITER};

#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    nodes: Vec<f64>,
}

impl TimeGrid {
    /// Nodes must start at 0 and increase strictly.
    pub fn new(nodes: Vec<f64>) -> Result<Self> {
        if nodes.len() < 2 || nodes[0] != 0.0 {
            return Err(FractureError::InvalidParameters(
                "time grid needs at least two nodes starting at 0".into(),
            ));
        }
        if nodes
            .windows(2)
            .any(|w| !(w[1] > w[0]) || !w[1].is_finite())
        {
            return Err(FractureError::InvalidParameters(
                "time grid nodes must increase strictly".into(),
            ));
        }
        Ok(TimeGrid { nodes })
    }

    /// `n` equal steps on `[0, t_final]`.
    pub fn uniform(t_final: f64, n: usize) -> Result<Self> {
        if n == 0 || !(t_final > 0.0) {
            return Err(FractureError::InvalidParameters(format!(
                "uniform grid needs n >= 1 and T > 0, got n = {n}, T = {t_final}"
            )));
        }
        // t_final * k / n keeps dyadic refinements exactly nested.
        TimeGrid::new((0..=n).map(|k| t_final * k as f64 / n as f64).collect())
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn num_steps(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn final_time(&self) -> f64 {
        *self.nodes.last().unwrap()
    }

    pub fn max_step(&self) -> f64 {
        self.nodes
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(0.0, f64::max)
    }

    /// Index of the node equal to `t`, if any.
    pub fn position(&self, t: f64) -> Option<usize> {
        self.nodes.iter().position(|&s| s == t)
    }
}

/// Dyadic family with `n0 * 2^k` steps, `k = 0..levels`.
pub fn nested_grids(t_final: f64, n0: usize, levels: usize) -> Result<Vec<TimeGrid>> {
    if n0 == 0 || levels == 0 {
        return Err(FractureError::InvalidParameters(format!(
            "nested grids need n0 >= 1 and levels >= 1, got {n0} and {levels}"
        )));
    }
    (0..levels)
        .map(|k| TimeGrid::uniform(t_final, n0 << k))
        .collect()
}

/// Scalar load factor as a function of time.
#[derive(Debug, Clone, PartialEq)]
pub enum Amplitude {
    /// `(t, a)` samples with strictly increasing `t`; constant outside.
    PiecewiseLinear(Vec<(f64, f64)>),
    /// `sum_k c_k t^k`.
    Polynomial(Vec<f64>),
}

impl Amplitude {
    pub fn linear(slope: f64) -> Self {
        Amplitude::Polynomial(vec![0.0, slope])
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Amplitude::PiecewiseLinear(s) => {
                if s.is_empty() {
                    return Err(FractureError::InvalidParameters(
                        "amplitude needs at least one sample".into(),
                    ));
                }
                if s.iter().any(|(t, a)| !t.is_finite() || !a.is_finite()) {
                    return Err(FractureError::InvalidParameters(
                        "amplitude samples must be finite".into(),
                    ));
                }
                if s.windows(2).any(|w| !(w[1].0 > w[0].0)) {
                    return Err(FractureError::InvalidParameters(
                        "amplitude sample times must increase strictly".into(),
                    ));
                }
            }
            Amplitude::Polynomial(c) => {
                if c.iter().any(|v| !v.is_finite()) {
                    return Err(FractureError::InvalidParameters(
                        "polynomial coefficients must be finite".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn value(&self, t: f64) -> f64 {
        match self {
            Amplitude::PiecewiseLinear(s) => {
                if t <= s[0].0 {
                    return s[0].1;
                }
                for w in s.windows(2) {
                    let ((t0, a0), (t1, a1)) = (w[0], w[1]);
                    if t <= t1 {
                        return a0 + (a1 - a0) * (t - t0) / (t1 - t0);
                    }
                }
                s[s.len() - 1].1
            }
            Amplitude::Polynomial(c) => c.iter().rev().fold(0.0, |acc, ck| acc * t + ck),
        }
    }

    /// Rate at the two ends of the slice `[ta, tb]`. Piecewise-linear
    /// amplitudes use the secant over the slice at both ends.
    pub fn slice_rates(&self, ta: f64, tb: f64) -> (f64, f64) {
        match self {
            Amplitude::PiecewiseLinear(_) => {
                let s = (self.value(tb) - self.value(ta)) / (tb - ta);
                (s, s)
            }
            Amplitude::Polynomial(c) => {
                let d = |t: f64| {
                    c.iter()
                        .enumerate()
                        .skip(1)
                        .rev()
                        .fold(0.0, |acc, (k, ck)| acc * t + k as f64 * ck)
                };
                (d(ta), d(tb))
            }
        }
    }

    /// Largest `|amplitude|` over the nodes of a grid.
    pub fn max_abs_on(&self, grid: &TimeGrid) -> f64 {
        grid.nodes()
            .iter()
            .map(|&t| self.value(t).abs())
            .fold(0.0, f64::max)
    }
}

/// Spatial pattern of the boundary datum.
#[derive(Debug, Clone, PartialEq)]
pub enum LoadMode {
    /// Homogeneous strain of uniaxial stress along `x1` with unit `e11`,
    /// centered on the mesh bounding box.
    UniaxialStretch,
    /// `(0, x1 - xc)`.
    Shear,
    /// Mode-I crack-tip field with unit stress intensity, translated along
    /// `x1`: the tip sits at `(x0 + speed t, y0)`. The amplitude scales the
    /// stress intensity. Lame constants are read from the stiffness.
    Surfing { x0: f64, y0: f64, speed: f64 },
    /// Explicit per-vertex pattern.
    Custom(Vec<[f64; 2]>),
}

/// `g(t, x)` for `t in [0, T]`; separable modes give `amplitude(t) g1(x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadProgram {
    pub mode: LoadMode,
    pub amplitude: Amplitude,
    pub t_final: f64,
}

struct TipField {
    lambda: f64,
    mu: f64,
}

impl TipField {
    fn from_model(model: &FractureModel) -> Self {
        let v = model.tensor().voigt();
        TipField {
            lambda: v[0][1],
            mu: 0.5 * v[2][2],
        }
    }

    fn kolosov(&self) -> f64 {
        // Plane strain.
        let nu = self.lambda / (2.0 * (self.lambda + self.mu));
        3.0 - 4.0 * nu
    }

    /// Displacement and its `x1` derivative at offset `(x, y)` from the tip.
    fn eval(&self, x: f64, y: f64) -> ([f64; 2], [f64; 2]) {
        let r = x.hypot(y);
        if r == 0.0 {
            return ([0.0; 2], [0.0; 2]);
        }
        let th = y.atan2(x);
        let k = self.kolosov();
        let scale = 1.0 / (2.0 * self.mu * (2.0 * PI).sqrt());
        let (s2, c2) = (0.5 * th).sin_cos();
        let (s, c) = th.sin_cos();
        let f = [c2 * (k - c), s2 * (k - c)];
        let df = [-0.5 * s2 * (k - c) + c2 * s, 0.5 * c2 * (k - c) + s2 * s];
        let sr = r.sqrt();
        let u = [scale * sr * f[0], scale * sr * f[1]];
        let du = [
            scale / sr * (0.5 * c * f[0] - s * df[0]),
            scale / sr * (0.5 * c * f[1] - s * df[1]),
        ];
        (u, du)
    }
}

impl LoadProgram {
    pub fn new(mode: LoadMode, amplitude: Amplitude, t_final: f64) -> Result<Self> {
        amplitude.validate()?;
        if !(t_final > 0.0 && t_final.is_finite()) {
            return Err(FractureError::InvalidParameters(format!(
                "final time must be positive, got {t_final}"
            )));
        }
        Ok(LoadProgram {
            mode,
            amplitude,
            t_final,
        })
    }

    /// Spatial pattern `g1`; `None` for non-separable modes.
    fn pattern(&self, model: &FractureModel) -> Result<Option<DisplacementField>> {
        let mesh = model.mesh();
        let (lo, hi) = mesh.bounding_box();
        let center = [0.5 * (lo[0] + hi[0]), 0.5 * (lo[1] + hi[1])];
        Ok(match &self.mode {
            LoadMode::UniaxialStretch => {
                let e = model.tensor().uniaxial_strain();
                Some(DisplacementField::from_fn(&mesh.vertices, |x| {
                    let d = [x[0] - center[0], x[1] - center[1]];
                    [e.xx * d[0] + e.xy * d[1], e.xy * d[0] + e.yy * d[1]]
                }))
            }
            LoadMode::Shear => Some(DisplacementField::from_fn(&mesh.vertices, |x| {
                [0.0, x[0] - center[0]]
            })),
            LoadMode::Custom(values) => {
                if values.len() != mesh.num_vertices() {
                    return Err(FractureError::SizeMismatch {
                        what: "custom load pattern",
                        expected: mesh.num_vertices(),
                        found: values.len(),
                    });
                }
                Some(DisplacementField::from_vectors(values))
            }
            LoadMode::Surfing { .. } => None,
        })
    }

    /// `g(t)` evaluated at every vertex.
    pub fn displacement(&self, model: &FractureModel, t: f64) -> Result<DisplacementField> {
        let a = self.amplitude.value(t);
        if let Some(g1) = self.pattern(model)? {
            return Ok(g1.scaled(a));
        }
        let LoadMode::Surfing { x0, y0, speed } = self.mode else {
            unreachable!()
        };
        let tip = TipField::from_model(model);
        let xt = x0 + speed * t;
        Ok(DisplacementField::from_fn(&model.mesh().vertices, |x| {
            let (u, _) = tip.eval(x[0] - xt, x[1] - y0);
            [a * u[0], a * u[1]]
        }))
    }

    /// `dg/dt` at both ends of the slice `[ta, tb]`, evaluated at every
    /// vertex.
    pub fn slice_rates(
        &self,
        model: &FractureModel,
        ta: f64,
        tb: f64,
    ) -> Result<(DisplacementField, DisplacementField)> {
        let (ra, rb) = self.amplitude.slice_rates(ta, tb);
        if let Some(g1) = self.pattern(model)? {
            return Ok((g1.scaled(ra), g1.scaled(rb)));
        }
        let LoadMode::Surfing { x0, y0, speed } = self.mode else {
            unreachable!()
        };
        let tip = TipField::from_model(model);
        let at = |t: f64, rate: f64| {
            let a = self.amplitude.value(t);
            let xt = x0 + speed * t;
            DisplacementField::from_fn(&model.mesh().vertices, |x| {
                let (u, du) = tip.eval(x[0] - xt, x[1] - y0);
                [
                    rate * u[0] - a * speed * du[0],
                    rate * u[1] - a * speed * du[1],
                ]
            })
        };
        Ok((at(ta, ra), at(tb, rb)))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct State {
    pub t: f64,
    pub u: DisplacementField,
    pub alpha: DamageField,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvolutionParams {
    pub elastic: SolverOptions,
    pub damage_tol: f64,
    pub damage_max_iter: usize,
    /// Stop when `||alpha_new - alpha_old||_inf` drops below this.
    pub am_tol: f64,
    pub am_max_iter: usize,
    /// After the change test passes, keep alternating until the damage
    /// half-step is already stationary at the re-solved displacement.
    pub am_stationary: bool,
    /// Skip the damage half-step and keep the initial damage throughout.
    pub freeze_damage: bool,
}

impl Default for EvolutionParams {
    fn default() -> Self {
        EvolutionParams {
            elastic: SolverOptions::default(),
            damage_tol: 1e-8,
            damage_max_iter: DEFAULT_DAMAGE_MAX_ITER,
            am_tol: 1e-5,
            am_max_iter: 200,
            am_stationary: true,
            freeze_damage: false,
        }
    }
}

impl EvolutionParams {
    pub fn validate(&self) -> Result<()> {
        let in_unit = |v: f64| v > 0.0 && v < 1.0;
        if !in_unit(self.elastic.tol) || !in_unit(self.damage_tol) || !in_unit(self.am_tol) {
            return Err(FractureError::InvalidParameters(
                "solver tolerances must lie in (0, 1)".into(),
            ));
        }
        if self.am_max_iter == 0 || self.damage_max_iter == 0 {
            return Err(FractureError::InvalidParameters(
                "iteration caps must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnergyRecord {
    pub t: f64,
    pub elastic: f64,
    pub surface: f64,
    pub total: f64,
    /// Cumulative `int <sigma, e(g_dot)> ds` by the trapezoid rule.
    pub work_cum: f64,
    /// `total - total_0 - work_cum`.
    pub balance_residual: f64,
    /// Damage half-steps taken in the alternate minimization.
    pub am_iters: usize,
    pub cg_iters: usize,
    pub damage_iters: usize,
    /// Elastic energy of the shifted previous state.
    pub shifted_elastic: f64,
    pub fallback_used: bool,
}

/// Output of one minimization step before the work ledger is updated.
#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub state: State,
    pub elastic: f64,
    pub surface: f64,
    pub shifted_elastic: f64,
    pub am_iters: usize,
    pub cg_iters: usize,
    pub damage_iters: usize,
    pub am_converged: bool,
    pub fallback_used: bool,
}

struct AmOutcome {
    u: DisplacementField,
    alpha: DamageField,
    am_iters: usize,
    cg_iters: usize,
    damage_iters: usize,
    converged: bool,
}

fn alternate(
    model: &FractureModel,
    g: &DisplacementField,
    lower: &DamageField,
    u_start: &DisplacementField,
    params: &EvolutionParams,
) -> Result<AmOutcome> {
    let mut alpha = lower.clone();
    let mut u = u_start.clone();
    model.impose(&mut u, g);
    let mut cg_iters = 0;
    let mut damage_iters = 0;

    let sol = model.solve_elastic(&alpha, g, &params.elastic, Some(&u))?;
    cg_iters += sol.iterations;
    u = sol.u;
    if params.freeze_damage {
        return Ok(AmOutcome {
            u,
            alpha,
            am_iters: 0,
            cg_iters,
            damage_iters,
            converged: true,
        });
    }

    let mut history = Vec::new();
    let mut converged = false;
    let mut am_iters = 0;
    while am_iters < params.am_max_iter {
        am_iters += 1;
        let qp = model.damage_program(&u);
        let ds = qp.solve(
            lower,
            Some(&alpha),
            params.damage_tol,
            params.damage_max_iter,
        )?;
        damage_iters += ds.iterations;
        let delta = ds.alpha.max_abs_diff(&alpha);
        history.push(delta);
        alpha = ds.alpha;
        if delta == 0.0 {
            // u is already the elastic minimizer for this alpha.
            converged = true;
            break;
        }
        let sol = model.solve_elastic(&alpha, g, &params.elastic, Some(&u))?;
        cg_iters += sol.iterations;
        u = sol.u;
        if delta <= params.am_tol && !params.am_stationary {
            converged = true;
            break;
        }
    }
    if !converged {
        warn!(
            "alternate minimization stopped at the cap of {} iterations (last change {:e})",
            params.am_max_iter,
            history.last().copied().unwrap_or(f64::NAN)
        );
    }
    debug!("alternate minimization: {am_iters} damage solves, {cg_iters} CG iterations");
    Ok(AmOutcome {
        u,
        alpha,
        am_iters,
        cg_iters,
        damage_iters,
        converged,
    })
}

/// Initial state at time `t0`: alternate minimization from `alpha_init`,
/// which also serves as the irreversibility bound.
pub fn initial_state(
    model: &FractureModel,
    program: &LoadProgram,
    t0: f64,
    alpha_init: &DamageField,
    params: &EvolutionParams,
) -> Result<StepResult> {
    params.validate()?;
    alpha_init.check(model.mesh())?;
    let g = program.displacement(model, t0)?;
    let am = alternate(model, &g, alpha_init, &g, params).map_err(|e| e.in_step(0, t0))?;
    let elastic = model.elastic_energy(&am.u, &am.alpha);
    let surface = model.surface_energy(&am.alpha);
    Ok(StepResult {
        state: State {
            t: t0,
            u: am.u,
            alpha: am.alpha,
        },
        elastic,
        surface,
        shifted_elastic: elastic,
        am_iters: am.am_iters,
        cg_iters: am.cg_iters,
        damage_iters: am.damage_iters,
        am_converged: am.converged,
        fallback_used: false,
    })
}

/// One time step from `state` (at boundary datum `g_prev`) to `t_next`
/// with datum `g_next`; both data are global fields.
pub fn step(
    model: &FractureModel,
    state: &State,
    t_next: f64,
    g_prev: &DisplacementField,
    g_next: &DisplacementField,
    params: &EvolutionParams,
) -> Result<StepResult> {
    model.check_sizes(&state.u, &state.alpha)?;
    let am = alternate(model, g_next, &state.alpha, &state.u, params)?;
    let elastic = model.elastic_energy(&am.u, &am.alpha);
    let surface = model.surface_energy(&am.alpha);

    let mut shifted = state.u.axpy(1.0, &g_next.axpy(-1.0, g_prev));
    model.impose(&mut shifted, g_next);
    let shifted_elastic = model.elastic_energy(&shifted, &state.alpha);
    let shifted_surface = model.surface_energy(&state.alpha);

    let fallback_used = shifted_elastic + shifted_surface < elastic + surface;
    let (state, elastic, surface) = if fallback_used {
        debug!("t = {t_next}: shifted competitor wins");
        (
            State {
                t: t_next,
                u: shifted,
                alpha: state.alpha.clone(),
            },
            shifted_elastic,
            shifted_surface,
        )
    } else {
        (
            State {
                t: t_next,
                u: am.u,
                alpha: am.alpha,
            },
            elastic,
            surface,
        )
    };
    Ok(StepResult {
        state,
        elastic,
        surface,
        shifted_elastic,
        am_iters: am.am_iters,
        cg_iters: am.cg_iters,
        damage_iters: am.damage_iters,
        am_converged: am.converged,
        fallback_used,
    })
}

/// `1/2 dt (<sigma_a, e(rate_a)> + <sigma_b, e(rate_b)>)` with the
/// degraded stress of each state.
pub fn work_increment_between(
    model: &FractureModel,
    a: &State,
    b: &State,
    rate_a: &DisplacementField,
    rate_b: &DisplacementField,
) -> f64 {
    let dt = b.t - a.t;
    0.5 * dt
        * (model.stress_work(&a.u, &a.alpha, rate_a) + model.stress_work(&b.u, &b.alpha, rate_b))
}

/// Trapezoid slice with the same boundary rate at both ends.
pub fn work_increment(
    model: &FractureModel,
    a: &State,
    b: &State,
    g_dot: &DisplacementField,
) -> f64 {
    work_increment_between(model, a, b, g_dot, g_dot)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub states: Vec<State>,
    pub records: Vec<EnergyRecord>,
    /// Elastic energy of the undamaged lift at the largest datum plus the
    /// initial surface energy.
    pub apriori_bound: f64,
}

impl Trajectory {
    /// `max(|total|, |work|)` over the run, floored at the smallest positive
    /// normal number.
    pub fn energy_scale(&self) -> f64 {
        self.records
            .iter()
            .map(|r| {
                r.total
                    .abs()
                    .max(r.work_cum.abs())
                    .max(r.shifted_elastic.abs())
            })
            .fold(f64::MIN_POSITIVE, f64::max)
    }

    pub fn state_at(&self, t: f64) -> Option<&State> {
        self.states.iter().find(|s| s.t == t)
    }
}

#[derive(Debug, Clone)]
pub struct RunFailure {
    pub partial: Trajectory,
    pub error: FractureError,
}

impl fmt::Display for RunFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} (after {} completed states)",
            self.error,
            self.partial.states.len()
        )
    }
}

impl std::error::Error for RunFailure {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

fn record_of(step: &StepResult, work_cum: f64, total0: f64) -> EnergyRecord {
    let total = step.elastic + step.surface;
    EnergyRecord {
        t: step.state.t,
        elastic: step.elastic,
        surface: step.surface,
        total,
        work_cum,
        balance_residual: total - total0 - work_cum,
        am_iters: step.am_iters,
        cg_iters: step.cg_iters,
        damage_iters: step.damage_iters,
        shifted_elastic: step.shifted_elastic,
        fallback_used: step.fallback_used,
    }
}

/// Run the scheme over `grid`, starting from `alpha_init` (zero damage when
/// `None`). On failure the states computed so far come back with the error.
pub fn run(
    model: &FractureModel,
    program: &LoadProgram,
    grid: &TimeGrid,
    alpha_init: Option<&DamageField>,
    params: &EvolutionParams,
) -> std::result::Result<Trajectory, Box<RunFailure>> {
    let mut traj = Trajectory {
        states: Vec::new(),
        records: Vec::new(),
        apriori_bound: f64::NAN,
    };
    let fail = |traj: Trajectory, error: FractureError| {
        Box::new(RunFailure {
            partial: traj,
            error,
        })
    };

    let zero = DamageField::zeros(model.num_vertices());
    let alpha0 = alpha_init.unwrap_or(&zero);
    let t0 = grid.nodes()[0];
    let first = match initial_state(model, program, t0, alpha0, params) {
        Ok(s) => s,
        Err(e) => return Err(fail(traj, e)),
    };

    let mut lift_max: f64 = 0.0;
    for &t in grid.nodes() {
        match program.displacement(model, t) {
            Ok(g) => lift_max = lift_max.max(model.elastic_energy(&g, &zero)),
            Err(e) => return Err(fail(traj, e)),
        }
    }
    traj.apriori_bound = lift_max + first.surface;

    let total0 = first.elastic + first.surface;
    traj.records.push(record_of(&first, 0.0, total0));
    traj.states.push(first.state);

    let mut work_cum = 0.0;
    let mut g_prev = match program.displacement(model, t0) {
        Ok(g) => g,
        Err(e) => return Err(fail(traj, e)),
    };
    for (k, w) in grid.nodes().windows(2).enumerate() {
        let (ta, tb) = (w[0], w[1]);
        let step_index = k + 1;
        let outcome = (|| -> Result<(StepResult, DisplacementField, f64)> {
            let g_next = program.displacement(model, tb)?;
            let prev = traj.states.last().unwrap();
            let next = step(model, prev, tb, &g_prev, &g_next, params)?;
            for (v, (&before, &after)) in prev
                .alpha
                .values
                .iter()
                .zip(&next.state.alpha.values)
                .enumerate()
            {
                if after < before {
                    return Err(FractureError::IrreversibilityViolated {
                        step: step_index,
                        vertex: v,
                        before,
                        after,
                    });
                }
            }
            let (ra, rb) = program.slice_rates(model, ta, tb)?;
            let dw = work_increment_between(model, prev, &next.state, &ra, &rb);
            Ok((next, g_next, dw))
        })();
        match outcome {
            Ok((next, g_next, dw)) => {
                work_cum += dw;
                traj.records.push(record_of(&next, work_cum, total0));
                traj.states.push(next.state);
                g_prev = g_next;
            }
            Err(e) => return Err(fail(traj, e.in_step(step_index, tb))),
        }
    }
    Ok(traj)
}
