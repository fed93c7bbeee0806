//! Command dispatch behind the `pucci-eigen` binary: runs a resolved [`RunConfig`] and writes
//! its JSON record and field files into an output directory.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde_json::{json, Value};

use crate::analysis::check_comparison;
use crate::barrier::{boundary_barrier_with, global_barrier_with, BarrierField, CertifyOptions};
use crate::config::{BarrierKind, CommandBlock, FieldFormat, RunConfig};
use crate::eigen::{estimate_on_grid, EigenOptions};
use crate::error::{Error, Result};
use crate::geometry::DomainSpec;
use crate::grid::{build_grid, Grid, ScalarField};
use crate::operator::{verify_operator_axioms, OperatorSpec};
use crate::radial::{radial_residual, radial_supersolution_bound, shoot_eigen, EigenResult};
use crate::record::write_json;
use crate::solver::solve_dirichlet_from;

/// Exit status of a run that produced a record.
pub const EXIT_OK: i32 = 0;
/// Invalid input or a check whose hypotheses failed.
pub const EXIT_REJECTED: i32 = 2;
pub const EXIT_NONCONVERGENCE: i32 = 3;
/// Barrier certification or eigenvalue bracketing failed.
pub const EXIT_CERTIFICATE: i32 = 4;
/// I/O and other failures outside the numerical pipeline.
pub const EXIT_INTERNAL: i32 = 1;

/// Exit status for an error.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::InvalidInput(_) | Error::Config(_) | Error::Singularity { .. } | Error::Pole | Error::OutsideDomain { .. } | Error::Resolution { .. } => {
            EXIT_REJECTED
        }
        Error::NonConvergence { .. } | Error::IndeterminateLambda { .. } => EXIT_NONCONVERGENCE,
        Error::InnerSolve { source, .. } => exit_code(source),
        Error::BarrierFailure { .. } | Error::Bracket(_) => EXIT_CERTIFICATE,
        Error::Io(_) | Error::Json(_) => EXIT_INTERNAL,
    }
}

/// Short machine-readable name of an error.
pub fn error_kind(err: &Error) -> &'static str {
    match err {
        Error::InvalidInput(_) => "invalid-input",
        Error::Singularity { .. } => "singularity",
        Error::Pole => "pole",
        Error::OutsideDomain { .. } => "outside-domain",
        Error::Resolution { .. } => "resolution",
        Error::NonConvergence { .. } => "non-convergence",
        Error::InnerSolve { .. } => "inner-solve",
        Error::Bracket(_) => "bracket",
        Error::IndeterminateLambda { .. } => "indeterminate-lambda",
        Error::BarrierFailure { .. } => "barrier-failure",
        Error::Config(_) => "config",
        Error::Io(_) => "io",
        Error::Json(_) => "json",
    }
}

/// Diagnostic written when a run fails.
pub fn diagnostic(command: &str, err: &Error, config: Option<&RunConfig>) -> Value {
    let mut d = json!({
        "command": command,
        "status": "error",
        "error": error_kind(err),
        "message": err.to_string(),
        "exit_code": exit_code(err),
    });
    if let Some(cfg) = config {
        d["config"] = serde_json::to_value(cfg).unwrap_or(Value::Null);
    }
    match err {
        Error::BarrierFailure { point, value } => {
            d["point"] = json!(point);
            d["value"] = json!(value);
        }
        Error::IndeterminateLambda { lambda } => d["lambda"] = json!(lambda),
        Error::NonConvergence { steps, residual, tol } => {
            d["steps"] = json!(steps);
            d["residual"] = json!(residual);
            d["tol"] = json!(tol);
        }
        _ => {}
    }
    d
}

/// What a successful run produced.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub exit_code: i32,
    pub record_path: PathBuf,
    pub record: Value,
}

/// Runs `cfg` and writes `<command>.json` plus field files into `out`.
pub fn run(cfg: &RunConfig, out: &Path) -> Result<RunOutput> {
    std::fs::create_dir_all(out)?;
    let (mut record, exit_code) = match cfg.command {
        CommandBlock::Eigen(_) => (run_eigen(cfg, out)?, EXIT_OK),
        CommandBlock::Solve(_) => (run_solve(cfg, out)?, EXIT_OK),
        CommandBlock::Radial(_) => (run_radial(cfg, out)?, EXIT_OK),
        CommandBlock::VerifyOperator(p) => {
            let report = verify_operator_axioms(&cfg.op(), p.samples, cfg.seed)?;
            (json!({ "axioms": report, "max_residual": report.max_residual() }), EXIT_OK)
        }
        CommandBlock::Barrier(_) => (run_barrier(cfg, out)?, EXIT_OK),
        CommandBlock::Compare(_) => run_compare(cfg, out)?,
    };
    record["command"] = json!(cfg.command.name());
    record["config"] = serde_json::to_value(cfg)?;
    record["operator"] = serde_json::to_value(cfg.op())?;
    record["status"] = json!(if exit_code == EXIT_OK { "ok" } else { "rejected" });
    let record_path = out.join(format!("{}.json", record_file_stem(cfg)));
    write_json(&record_path, &record)?;
    Ok(RunOutput { exit_code, record_path, record })
}

fn record_file_stem(cfg: &RunConfig) -> &'static str {
    match cfg.command {
        CommandBlock::VerifyOperator(_) => "axioms",
        ref c => c.name(),
    }
}

fn grid_for(cfg: &RunConfig) -> Result<Arc<Grid>> {
    Ok(Arc::new(build_grid(&cfg.domain, cfg.grid.h, cfg.stencil_width())?))
}

fn grid_record(cfg: &RunConfig, grid: &Grid) -> Value {
    json!({
        "h": cfg.grid.h,
        "domain": cfg.domain,
        "stencil_width": grid.stencil_width,
        "shape": grid.shape,
        "interior_nodes": grid.n_interior(),
    })
}

/// Writes `field` in every configured format; returns file names relative to `out`.
fn write_field(cfg: &RunConfig, out: &Path, stem: &str, field: &ScalarField) -> Result<Value> {
    let mut files = serde_json::Map::new();
    for fmt in &cfg.output.formats {
        let (key, name) = match fmt {
            FieldFormat::Csv => ("csv", format!("{stem}.csv")),
            FieldFormat::Binary => ("binary", format!("{stem}.bin")),
            FieldFormat::Gnuplot => ("gnuplot", format!("{stem}.dat")),
        };
        let path = out.join(&name);
        match fmt {
            FieldFormat::Csv => field.write_csv(&path)?,
            FieldFormat::Binary => field.write_binary(&path)?,
            FieldFormat::Gnuplot => field.write_gnuplot(&path)?,
        }
        files.insert(key.into(), json!(name));
    }
    Ok(Value::Object(files))
}

fn primary_path(files: &Value) -> Value {
    ["csv", "binary", "gnuplot"].iter().find_map(|k| files.get(*k).cloned()).unwrap_or(Value::Null)
}

fn eigen_fields(r: &EigenResult) -> Value {
    json!({
        "lambda_lo": r.lambda_lo,
        "lambda_hi": r.lambda_hi,
        "lambda_hat": r.lambda_hat,
        "residual": r.residual,
        "probes": r.probes,
    })
}

fn run_eigen(cfg: &RunConfig, out: &Path) -> Result<Value> {
    let CommandBlock::Eigen(p) = cfg.command else { unreachable!() };
    let op = cfg.op();
    let grid = grid_for(cfg)?;
    let opts = EigenOptions {
        stencil_width: Some(cfg.stencil_width()),
        tol_rel: p.tol_rel,
        threshold_factor: p.threshold_factor,
        n_max: p.n_max,
        ..EigenOptions::default()
    };
    let r = estimate_on_grid(&op, &grid, p.bracket_tol, &opts)?;
    let phi = r.eigenfunction.as_field().expect("grid estimates carry a field");
    let files = write_field(cfg, out, "eigenfunction", phi)?;
    let mut rec = eigen_fields(&r);
    rec["grid"] = grid_record(cfg, &grid);
    rec["upper_bound"] = json!(radial_supersolution_bound(&op, grid.dim, cfg.domain.inscribed_radius())?);
    rec["eigenfunction_path"] = primary_path(&files);
    rec["eigenfunction_files"] = files;
    if let Some(eps) = sensitivity_eps(&op) {
        let r2 = estimate_on_grid(&op.with_eps_reg(eps), &grid, p.bracket_tol, &opts)?;
        let mut alt = eigen_fields(&r2);
        alt["eps_reg"] = json!(eps);
        alt["lambda_hat_shift"] = json!(r2.lambda_hat - r.lambda_hat);
        rec["eps_sensitivity"] = alt;
    }
    Ok(rec)
}

/// For `alpha < 0` the answer depends on the gradient regularization, so runs are repeated
/// at half of it and both results are reported.
fn sensitivity_eps(op: &OperatorSpec) -> Option<f64> {
    (op.alpha < 0.0 && op.eps_reg > 0.0).then_some(0.5 * op.eps_reg)
}

fn run_solve(cfg: &RunConfig, out: &Path) -> Result<Value> {
    let CommandBlock::Solve(p) = cfg.command else { unreachable!() };
    let grid = grid_for(cfg)?;
    let f = ScalarField::constant(&grid, p.f);
    let boundary = ScalarField::constant(&grid, p.boundary);
    let op = cfg.op();
    let (u, stats) = solve_dirichlet_from(&op, &grid, &f, p.lambda, &boundary, None, p.tol, p.max_steps)?;
    let files = write_field(cfg, out, "solution", &u)?;
    let mut rec = json!({
        "grid": grid_record(cfg, &grid),
        "picard_steps": stats.picard_steps,
        "residual": stats.residual,
        "tol_used": stats.tol_used,
        "sup_norm": u.sup_norm(),
        "solution_path": primary_path(&files),
        "solution_files": files,
    });
    if let Some(eps) = sensitivity_eps(&op) {
        let (u2, stats2) = solve_dirichlet_from(&op.with_eps_reg(eps), &grid, &f, p.lambda, &boundary, Some(&u), p.tol, p.max_steps)?;
        let diff = u.values.iter().zip(&u2.values).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        rec["eps_sensitivity"] = json!({
            "eps_reg": eps,
            "picard_steps": stats2.picard_steps,
            "residual": stats2.residual,
            "sup_norm": u2.sup_norm(),
            "max_abs_difference": diff,
        });
    }
    Ok(rec)
}

fn run_radial(cfg: &RunConfig, out: &Path) -> Result<Value> {
    let CommandBlock::Radial(p) = cfg.command else { unreachable!() };
    let DomainSpec::Ball { center, radius } = &cfg.domain else {
        return Err(Error::InvalidInput("radial shooting needs a ball".into()));
    };
    let op = cfg.op();
    let r = shoot_eigen(&op, center.len(), *radius, p.tol)?;
    let profile = r.eigenfunction.as_radial().expect("shooting carries a profile");
    let mut dat = String::new();
    let mut csv = String::from("r,g,dg\n");
    for i in 0..p.samples {
        let x = radius * i as f64 / (p.samples - 1) as f64;
        let (g, gp) = profile.eval(x);
        dat.push_str(&format!("{x:.17e} {g:.17e} {gp:.17e}\n"));
        csv.push_str(&format!("{x:.17e},{g:.17e},{gp:.17e}\n"));
    }
    std::fs::write(out.join("profile.dat"), dat)?;
    std::fs::write(out.join("profile.csv"), csv)?;
    let mut rec = eigen_fields(&r);
    rec["dim"] = json!(center.len());
    rec["radius"] = json!(radius);
    rec["profile_residual"] = json!(radial_residual(profile, r.lambda_hat, 2000));
    rec["upper_bound"] = json!(radial_supersolution_bound(&op, center.len(), *radius)?);
    rec["eigenfunction_path"] = json!("profile.csv");
    rec["profile_plot"] = json!("profile.dat");
    Ok(rec)
}

fn barrier_record(cfg: &RunConfig, out: &Path, stem: &str, b: &BarrierField) -> Result<Value> {
    let files = write_field(cfg, out, stem, &b.field)?;
    Ok(json!({
        "params": b.params,
        "certified_margin": b.certified_margin,
        "samples": b.points.len(),
        "skipped": b.skipped,
        "ridge_fraction": b.ridge_fraction,
        "focal_margin": b.focal_margin,
        "worst_point": b.worst_point,
        "field_files": files,
    }))
}

fn run_barrier(cfg: &RunConfig, out: &Path) -> Result<Value> {
    let CommandBlock::Barrier(p) = cfg.command else { unreachable!() };
    let op = cfg.op();
    let grid = grid_for(cfg)?;
    let opts = CertifyOptions { seed: cfg.seed, random_per_node: p.random_per_node };
    let mut rec = json!({ "grid": grid_record(cfg, &grid) });
    if p.which != BarrierKind::Global {
        let b = boundary_barrier_with(&cfg.domain, &op, p.gamma, p.delta, &grid, &opts)?;
        rec["boundary"] = barrier_record(cfg, out, "boundary_barrier", &b)?;
    }
    if p.which != BarrierKind::Boundary {
        let b = global_barrier_with(&cfg.domain, &op, p.beta, p.gamma, &grid, &opts)?;
        rec["global"] = barrier_record(cfg, out, "global_barrier", &b)?;
    }
    Ok(rec)
}

fn run_compare(cfg: &RunConfig, out: &Path) -> Result<(Value, i32)> {
    let CommandBlock::Compare(p) = cfg.command else { unreachable!() };
    let op = cfg.op();
    let grid = grid_for(cfg)?;
    let zero = ScalarField::zeros(&grid);
    let f = ScalarField::constant(&grid, p.f);
    let g = ScalarField::constant(&grid, p.g);
    let (sup, s1) = solve_dirichlet_from(&op, &grid, &f, p.lambda, &zero, None, p.solve_tol, p.max_steps)?;
    let (sub, s2) = solve_dirichlet_from(&op, &grid, &g, p.lambda, &zero, None, p.solve_tol, p.max_steps)?;
    // the same problem as `sup` from another starting point
    let start = sup.scaled(2.0);
    let (again, s3) = solve_dirichlet_from(&op, &grid, &f, p.lambda, &zero, Some(&start), p.solve_tol, p.max_steps)?;
    let report = check_comparison(&op, p.lambda, &sub, &sup, &f, &g, p.tol)?;
    let code = if report.rejected.is_some() { EXIT_REJECTED } else { EXIT_OK };
    let sub_files = write_field(cfg, out, "sub", &sub)?;
    let sup_files = write_field(cfg, out, "super", &sup)?;
    let tol_used = s1.tol_used.max(s3.tol_used);
    let rec = json!({
        "grid": grid_record(cfg, &grid),
        "comparison": report,
        "uniqueness_gap": sup.max_diff(&again),
        "uniqueness_bound": 10.0 * tol_used,
        "solve_residuals": [s1.residual, s2.residual, s3.residual],
        "sub_files": sub_files,
        "super_files": sup_files,
    });
    Ok((rec, code))
}
