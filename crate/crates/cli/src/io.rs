//! File formats: legacy ASCII VTK snapshots, CSV ledgers and JSON-lines
//! summaries. Floats are written in shortest round-trip form so that
//! snapshots read back bit-exactly.
//!
//! `ledger.csv` columns: `step,t,elastic,surface,total,work_cum,
//! balance_residual,am_iters,cg_iters,damage_iters,shifted_elastic,
//! fallback_used`.

use std::fmt::Write as _;
use std::path::Path;

use fracture_core::elasticity::DisplacementField;
use fracture_core::evolution::{EnergyRecord, State, Trajectory};
use fracture_core::mesh::Mesh;
use fracture_core::phasefield::DamageField;

use crate::CliError;

pub const LEDGER_HEADER: &str = "step,t,elastic,surface,total,work_cum,balance_residual,am_iters,cg_iters,damage_iters,shifted_elastic,fallback_used";

pub fn ledger_csv(records: &[EnergyRecord]) -> String {
    let mut out = String::from(LEDGER_HEADER);
    out.push('\n');
    for (k, r) in records.iter().enumerate() {
        writeln!(
            out,
            "{k},{:e},{:e},{:e},{:e},{:e},{:e},{},{},{},{:e},{}",
            r.t,
            r.elastic,
            r.surface,
            r.total,
            r.work_cum,
            r.balance_residual,
            r.am_iters,
            r.cg_iters,
            r.damage_iters,
            r.shifted_elastic,
            u8::from(r.fallback_used)
        )
        .unwrap();
    }
    out
}

pub fn parse_ledger(text: &str) -> Result<Vec<EnergyRecord>, CliError> {
    let bad = |line: usize, what: &str| CliError::Missing(format!("ledger line {line}: {what}"));
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h == LEDGER_HEADER => {}
        _ => return Err(bad(1, "unexpected header")),
    }
    let mut out = Vec::new();
    for (i, line) in lines {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 12 {
            return Err(bad(i + 1, "expected 12 fields"));
        }
        let x = |j: usize| f[j].parse::<f64>().map_err(|_| bad(i + 1, "bad number"));
        let n = |j: usize| f[j].parse::<usize>().map_err(|_| bad(i + 1, "bad count"));
        out.push(EnergyRecord {
            t: x(1)?,
            elastic: x(2)?,
            surface: x(3)?,
            total: x(4)?,
            work_cum: x(5)?,
            balance_residual: x(6)?,
            am_iters: n(7)?,
            cg_iters: n(8)?,
            damage_iters: n(9)?,
            shifted_elastic: x(10)?,
            fallback_used: n(11)? != 0,
        });
    }
    Ok(out)
}

/// One JSON object per state, then one closing object for the level.
pub fn summary_jsonl(level: usize, traj: &Trajectory, error: Option<&str>) -> String {
    let mut out = String::new();
    for (k, r) in traj.records.iter().enumerate() {
        let line = serde_json::json!({
            "level": level,
            "step": k,
            "t": r.t,
            "elastic": r.elastic,
            "surface": r.surface,
            "total": r.total,
            "work_cum": r.work_cum,
            "balance_residual": r.balance_residual,
            "fallback_used": r.fallback_used,
        });
        out.push_str(&line.to_string());
        out.push('\n');
    }
    let last = traj.records.last();
    let summary = serde_json::json!({
        "level": level,
        "steps": traj.records.len().saturating_sub(1),
        "apriori_bound": traj.apriori_bound,
        "energy_scale": traj.energy_scale(),
        "final_balance_residual": last.map(|r| r.balance_residual),
        "fallback_steps": traj.records.iter().filter(|r| r.fallback_used).count(),
        "error": error,
    });
    out.push_str(&summary.to_string());
    out.push('\n');
    out
}

pub fn snapshot_name(step: usize) -> String {
    format!("fields_{step:04}.vtk")
}

/// Legacy VTK 3.0 unstructured grid with point data `displacement` and
/// `damage` and cell data `region` and `partition`.
pub fn vtk_snapshot(mesh: &Mesh, state: &State, step: usize, partition: &[usize]) -> String {
    let nv = mesh.num_vertices();
    let nt = mesh.num_triangles();
    let mut out = String::with_capacity(64 * (nv + nt));
    out.push_str("# vtk DataFile Version 3.0\n");
    writeln!(out, "fracture t={:e} step={step}", state.t).unwrap();
    out.push_str("ASCII\nDATASET UNSTRUCTURED_GRID\n");
    writeln!(out, "POINTS {nv} double").unwrap();
    for x in &mesh.vertices {
        writeln!(out, "{:e} {:e} 0", x[0], x[1]).unwrap();
    }
    writeln!(out, "CELLS {nt} {}", 4 * nt).unwrap();
    for t in &mesh.triangles {
        writeln!(out, "3 {} {} {}", t[0], t[1], t[2]).unwrap();
    }
    writeln!(out, "CELL_TYPES {nt}").unwrap();
    for _ in 0..nt {
        out.push_str("5\n");
    }
    writeln!(out, "CELL_DATA {nt}").unwrap();
    out.push_str("SCALARS region int 1\nLOOKUP_TABLE default\n");
    for r in &mesh.regions {
        writeln!(out, "{}", r.code()).unwrap();
    }
    out.push_str("SCALARS partition int 1\nLOOKUP_TABLE default\n");
    for l in partition {
        writeln!(out, "{l}").unwrap();
    }
    writeln!(out, "POINT_DATA {nv}").unwrap();
    out.push_str("VECTORS displacement double\n");
    for v in 0..nv {
        let u = state.u.at(v);
        writeln!(out, "{:e} {:e} 0", u[0], u[1]).unwrap();
    }
    out.push_str("SCALARS damage double 1\nLOOKUP_TABLE default\n");
    for a in &state.alpha.values {
        writeln!(out, "{a:e}").unwrap();
    }
    out
}

/// Reads back a snapshot written by [`vtk_snapshot`]: the state and its
/// step index.
pub fn parse_vtk_snapshot(text: &str) -> Result<(State, usize), CliError> {
    let bad = |what: &str| CliError::Missing(format!("snapshot: {what}"));
    let mut lines = text.lines();
    if lines.next() != Some("# vtk DataFile Version 3.0") {
        return Err(bad("not a legacy VTK 3.0 file"));
    }
    let title = lines.next().ok_or_else(|| bad("missing title"))?;
    let mut t = None;
    let mut step = None;
    for word in title.split_whitespace() {
        if let Some(v) = word.strip_prefix("t=") {
            t = v.parse::<f64>().ok();
        } else if let Some(v) = word.strip_prefix("step=") {
            step = v.parse::<usize>().ok();
        }
    }
    let (t, step) = t.zip(step).ok_or_else(|| bad("title lacks t= and step="))?;
    let rest: Vec<&str> = lines.collect();
    let find = |prefix: &str| rest.iter().position(|l| l.starts_with(prefix));
    let npd = find("POINT_DATA ").ok_or_else(|| bad("no POINT_DATA"))?;
    let nv: usize = rest[npd]
        .split_whitespace()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| bad("bad POINT_DATA count"))?;
    let body = &rest[npd + 1..];
    let disp_at = body
        .iter()
        .position(|l| l.starts_with("VECTORS displacement"))
        .ok_or_else(|| bad("no displacement"))?;
    let dmg_at = body
        .iter()
        .position(|l| l.starts_with("SCALARS damage"))
        .ok_or_else(|| bad("no damage"))?;
    let num = |s: &str| s.parse::<f64>().map_err(|_| bad("bad number"));
    let mut u = Vec::with_capacity(nv);
    for line in body
        .get(disp_at + 1..disp_at + 1 + nv)
        .ok_or_else(|| bad("short displacement"))?
    {
        let mut w = line.split_whitespace();
        let x = num(w.next().unwrap_or(""))?;
        let y = num(w.next().unwrap_or(""))?;
        u.push([x, y]);
    }
    let mut alpha = Vec::with_capacity(nv);
    for line in body
        .get(dmg_at + 2..dmg_at + 2 + nv)
        .ok_or_else(|| bad("short damage"))?
    {
        alpha.push(num(line.trim())?);
    }
    Ok((
        State {
            t,
            u: DisplacementField::from_vectors(&u),
            alpha: DamageField { values: alpha },
        },
        step,
    ))
}

pub fn write(path: &Path, contents: &str) -> Result<(), CliError> {
    std::fs::write(path, contents).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

pub fn read(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::Missing(format!("{}: {e}", path.display())))
}
