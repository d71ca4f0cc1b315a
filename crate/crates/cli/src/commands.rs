//! The three subcommands. Each returns `Ok` on success or a [`CliError`]
//! that maps to the process exit code.
//!
//! Output layout of `simulate`:
//!
//! ```text
//! OUT/config.toml
//! OUT/level_K/ledger.csv
//! OUT/level_K/summary.jsonl
//! OUT/level_K/fields_NNNN.vtk
//! ```
//!
//! `audit` and `korn` read the finest level unless told otherwise and write
//! `stability_report.csv` and `korn_report.csv` next to `config.toml`.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use log::{info, warn};

use fracture_core::auditor::{competitor_suite, AuditOptions, StabilityReport};
use fracture_core::error::FractureError;
use fracture_core::evolution::{run, EnergyRecord, State, Trajectory};
use fracture_core::model::FractureModel;
use fracture_core::rigid_korn::{
    crack_partition, fit_component_motions, korn_diagnostic, merge_components, KornReport,
};

use crate::config::RunConfig;
use crate::io;
use crate::CliError;

/// Damage threshold for the partition labels written to snapshots.
pub const SNAPSHOT_THRESHOLD: f64 = 0.9;

pub fn level_dir(out: &Path, level: usize) -> PathBuf {
    out.join(format!("level_{level}"))
}

fn core_error(e: FractureError) -> CliError {
    match e.root() {
        FractureError::SolverDiverged { .. } | FractureError::IrreversibilityViolated { .. } => {
            CliError::Solver(e.to_string())
        }
        FractureError::ExponentOutOfRange(_) | FractureError::InvalidParameters(_) => {
            CliError::Config(e.to_string())
        }
        _ => CliError::Solver(e.to_string()),
    }
}

fn write_level(
    dir: &Path,
    model: &FractureModel,
    traj: &Trajectory,
    level: usize,
    error: Option<&str>,
) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
    io::write(&dir.join("ledger.csv"), &io::ledger_csv(&traj.records))?;
    io::write(
        &dir.join("summary.jsonl"),
        &io::summary_jsonl(level, traj, error),
    )?;
    for (k, state) in traj.states.iter().enumerate() {
        let labels = crack_partition(model.mesh(), &state.alpha, SNAPSHOT_THRESHOLD)
            .map_err(core_error)?
            .labels;
        io::write(
            &dir.join(io::snapshot_name(k)),
            &io::vtk_snapshot(model.mesh(), state, k, &labels),
        )?;
    }
    Ok(())
}

/// Run every grid level of the configuration and write the outputs. The
/// levels run concurrently. Returns the output directory.
pub fn simulate(config_path: &Path, out: Option<&Path>) -> Result<PathBuf, CliError> {
    let cfg = RunConfig::load(config_path)?;
    let out = out
        .map(Path::to_path_buf)
        .unwrap_or_else(|| cfg.output.dir.clone());
    simulate_config(&cfg, &out)?;
    Ok(out)
}

pub fn simulate_config(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    let model = cfg.model()?;
    let program = cfg.program()?;
    let grids = cfg.grids()?;
    let params = cfg.params()?;
    let alpha0 = cfg.initial_damage(&model);
    std::fs::create_dir_all(out).map_err(|e| CliError::Io(format!("{}: {e}", out.display())))?;
    io::write(&out.join("config.toml"), &cfg.to_toml())?;

    let results: Vec<Result<(), CliError>> = std::thread::scope(|s| {
        let handles: Vec<_> = grids
            .iter()
            .enumerate()
            .map(|(level, grid)| {
                let (model, program, params, alpha0) = (&model, &program, &params, &alpha0);
                s.spawn(move || {
                    info!("level {level}: {} steps", grid.num_steps());
                    let dir = level_dir(out, level);
                    match run(model, program, grid, Some(alpha0), params) {
                        Ok(traj) => {
                            if let Some(r) = traj.records.last() {
                                info!("level {level}: balance residual {:e}", r.balance_residual);
                            }
                            write_level(&dir, model, &traj, level, None)
                        }
                        Err(failure) => {
                            let msg = failure.to_string();
                            write_level(&dir, model, &failure.partial, level, Some(&msg))?;
                            Err(core_error(failure.error))
                        }
                    }
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("level thread panicked"))
            .collect()
    });
    for r in results {
        r?;
    }
    Ok(())
}

struct Loaded {
    cfg: RunConfig,
    model: FractureModel,
    records: Vec<EnergyRecord>,
    dir: PathBuf,
}

fn load_trajectory(traj: &Path, level: Option<usize>) -> Result<Loaded, CliError> {
    if !traj.is_dir() {
        return Err(CliError::Missing(format!(
            "{} is not a directory",
            traj.display()
        )));
    }
    let cfg = RunConfig::load(&traj.join("config.toml"))?;
    let level = level.unwrap_or(cfg.grid.levels - 1);
    let dir = level_dir(traj, level);
    let records = io::parse_ledger(&io::read(&dir.join("ledger.csv"))?)?;
    let model = cfg.model()?;
    Ok(Loaded {
        cfg,
        model,
        records,
        dir,
    })
}

impl Loaded {
    fn step_at(&self, t: f64) -> Result<usize, CliError> {
        let tol = 1e-9 * self.cfg.load.t_final.max(1.0);
        self.records
            .iter()
            .position(|r| (r.t - t).abs() <= tol)
            .ok_or_else(|| {
                CliError::Missing(format!("no snapshot at t = {t} in {}", self.dir.display()))
            })
    }

    fn state(&self, step: usize) -> Result<State, CliError> {
        let path = self.dir.join(io::snapshot_name(step));
        let (state, stored) = io::parse_vtk_snapshot(&io::read(&path)?)?;
        if stored != step {
            return Err(CliError::Missing(format!(
                "{} holds step {stored}",
                path.display()
            )));
        }
        self.model
            .check_sizes(&state.u, &state.alpha)
            .map_err(|e| CliError::Missing(format!("{}: {e}", path.display())))?;
        Ok(state)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AuditArgs {
    pub traj: PathBuf,
    pub times: Vec<f64>,
    pub level: Option<usize>,
}

fn report_rows(out: &mut String, report: &StabilityReport, hard_checked: bool) {
    let status = |ok: bool, hard: bool| match (hard, hard_checked, ok) {
        (false, _, _) => "reported",
        (true, false, _) => "skipped",
        (true, true, true) => "pass",
        (true, true, false) => "fail",
    };
    let t = report.t;
    let k = &report.kkt;
    for (name, value, limit) in [
        ("kkt_elastic", k.elastic, report.kkt_elastic_limit),
        (
            "kkt_damage_active",
            k.damage_active,
            report.kkt_damage_limit,
        ),
        (
            "kkt_damage_inactive",
            k.damage_inactive,
            report.kkt_damage_limit,
        ),
        ("kkt_damage_upper", k.damage_upper, report.kkt_damage_limit),
    ] {
        writeln!(
            out,
            "{t:e},kkt,{name},{value:e},{limit:e},{}",
            status(value <= limit, true)
        )
        .unwrap();
    }
    for m in &report.margins {
        let hard = m.class.is_hard();
        writeln!(
            out,
            "{t:e},{},{},{:e},{:e},{}",
            m.class,
            m.name,
            m.margin,
            -report.margin_tol,
            status(m.margin >= -report.margin_tol, hard)
        )
        .unwrap();
    }
}

/// Audit the stored states at `times`. States produced by the shifted
/// fallback are not equilibria, so their hard checks are reported as
/// skipped.
pub fn audit(args: &AuditArgs) -> Result<PathBuf, CliError> {
    let loaded = load_trajectory(&args.traj, args.level)?;
    let cfg = &loaded.cfg;
    let scale = Trajectory {
        states: Vec::new(),
        records: loaded.records.clone(),
        apriori_bound: f64::NAN,
    }
    .energy_scale();
    let opts = AuditOptions {
        elastic_tol: cfg.solver.elastic_tol,
        damage_tol: cfg.solver.damage_tol,
        seed: cfg.seed,
        elastic: cfg.params()?.elastic,
        ..AuditOptions::default()
    };
    let mut csv = String::from("t,class,name,value,limit,status\n");
    let mut failures = Vec::new();
    for &t in &args.times {
        let k = loaded.step_at(t)?;
        let state = loaded.state(k)?;
        let lower = if k == 0 {
            cfg.initial_damage(&loaded.model)
        } else {
            loaded.state(k - 1)?.alpha
        };
        let report =
            competitor_suite(&loaded.model, &state, &lower, scale, &opts).map_err(core_error)?;
        let hard_checked = !loaded.records[k].fallback_used;
        if !hard_checked {
            warn!("t = {t}: shifted fallback state, hard checks skipped");
        } else {
            for f in report.hard_failures() {
                failures.push(format!("t = {t}: {f}"));
            }
        }
        report_rows(&mut csv, &report, hard_checked);
    }
    let path = args.traj.join("stability_report.csv");
    io::write(&path, &csv)?;
    if failures.is_empty() {
        Ok(path)
    } else {
        Err(CliError::AuditFailed(failures.join("; ")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KornArgs {
    pub traj: PathBuf,
    pub time: f64,
    pub threshold: f64,
    pub closeness: f64,
    pub p: f64,
    pub level: Option<usize>,
}

fn korn_row(out: &mut String, t: f64, stage: &str, interface: f64, r: &KornReport, p: f64) {
    let grad = |q: f64| {
        r.grad_norms
            .iter()
            .find(|g| g.0 == q)
            .map_or(f64::NAN, |g| g.1)
    };
    let ratio = |q: f64| {
        r.grad_ratios
            .iter()
            .find(|g| g.0 == q)
            .map_or(f64::NAN, |g| g.1)
    };
    writeln!(
        out,
        "{t:e},{stage},{},{interface:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e}",
        r.num_components,
        r.added_boundary,
        r.sup_norm_v,
        r.e_norm,
        r.sup_ratio,
        grad(1.0),
        grad(1.5),
        grad(p),
        ratio(1.0),
        ratio(1.5),
        ratio(p)
    )
    .unwrap();
}

/// Piecewise-rigid diagnostics at one stored time, before and after
/// merging components whose motions are `closeness`-close.
pub fn korn(args: &KornArgs) -> Result<(KornReport, KornReport), CliError> {
    if !(1.0..2.0).contains(&args.p) {
        return Err(CliError::Config(format!(
            "exponent p = {} must lie in [1, 2)",
            args.p
        )));
    }
    if !(args.threshold > 0.0 && args.threshold <= 1.0) || !(args.closeness >= 0.0) {
        return Err(CliError::Config(
            "threshold must lie in (0, 1] and closeness be non-negative".into(),
        ));
    }
    let loaded = load_trajectory(&args.traj, args.level)?;
    let state = loaded.state(loaded.step_at(args.time)?)?;
    let mesh = loaded.model.mesh();
    let part = crack_partition(mesh, &state.alpha, args.threshold).map_err(core_error)?;
    let motions = |part| -> Result<Vec<_>, CliError> {
        Ok(fit_component_motions(mesh, &state.u, part)
            .map_err(core_error)?
            .into_iter()
            .map(|f| f.motion)
            .collect())
    };
    let raw_motions = motions(&part)?;
    let raw = korn_diagnostic(mesh, &state.u, &part, &raw_motions, args.p).map_err(core_error)?;
    let merged_part =
        merge_components(mesh, &part, &raw_motions, args.closeness).map_err(core_error)?;
    let merged_motions = motions(&merged_part)?;
    let merged = korn_diagnostic(mesh, &state.u, &merged_part, &merged_motions, args.p)
        .map_err(core_error)?;

    let mut csv = String::from(
        "t,stage,components,interface_length,added_boundary,sup_v,e_norm,sup_ratio,grad_p1,grad_p1.5,grad_p,ratio_p1,ratio_p1.5,ratio_p\n",
    );
    korn_row(
        &mut csv,
        state.t,
        "raw",
        part.interface_length,
        &raw,
        args.p,
    );
    korn_row(
        &mut csv,
        state.t,
        "merged",
        merged_part.interface_length,
        &merged,
        args.p,
    );
    io::write(&args.traj.join("korn_report.csv"), &csv)?;
    Ok((raw, merged))
}
