use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use qgd_core::analysis::{
    cfl_boundary_scan, fmt_sci, run_convergence_study, write_file, CellResult, ConvergenceTable, ErrorNorms, FailureKind,
    ReferenceCache, RowInfo, StudyRow, StudySpec,
};
use qgd_core::cem::{build_auxiliary_space, build_multiscale_basis, measure_decay};
use qgd_core::coefficient::PermeabilityField;
use qgd_core::fem::build_partition_of_unity;
use qgd_core::grid::build_hierarchy;
use qgd_core::qgd::{
    check_cfl, init_steps, leapfrog_solve, reference_solve, GalerkinSpace, LeapfrogConfig, QgdError, QgdProblem, Source,
};
use qgd_core::analysis::compute_errors;
use serde_json::json;

use crate::config::{Loaded, RunConfig};
use crate::output::reserve;
use crate::CliError;

#[derive(Debug, Clone, Default)]
pub struct Opts {
    pub dry_run: bool,
    pub allow_unstable: bool,
    pub max_cells: Option<usize>,
    pub out: Option<PathBuf>,
    pub refuse_existing: bool,
}

fn out_dir(c: &RunConfig, opts: &Opts) -> Result<PathBuf, CliError> {
    let base = opts.out.clone().unwrap_or_else(|| c.output.dir.clone());
    reserve(&base, opts.refuse_existing).map_err(|e| CliError::Config(format!("output directory: {e}")))
}

fn write(path: &Path, contents: &str) -> Result<(), CliError> {
    write_file(path, contents).map_err(|e| CliError::Other(format!("{}: {e}", path.display())))
}

/// CFL slack from the fine-grid bound `μ_max ≤ 12/h_x² + 12/h_y²`, a lower
/// bound on the slack of any subspace.
fn slack_bound(c: &RunConfig, beta: f64, alpha: f64) -> f64 {
    let (nx, ny) = (c.mesh.nx as f64, c.mesh.ny as f64);
    let mu = 12.0 * (nx * nx + ny * ny);
    alpha - 0.5 * beta * mu * c.time.dt * c.time.dt
}

fn cfl_or(e: QgdError) -> CliError {
    match e {
        QgdError::CflRefused { slack, delta } => {
            CliError::Cfl(format!("CFL slack {} below delta {}; rerun with --allow-unstable to force", fmt_sci(slack), fmt_sci(delta)))
        }
        other => CliError::Other(other.to_string()),
    }
}

fn json_string(v: &serde_json::Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("json values serialize");
    s.push('\n');
    s
}

fn energy_csv(samples: &[qgd_core::qgd::EnergySample]) -> String {
    let mut out = String::from("step,time,energy,balance\n");
    for e in samples {
        let b = e.balance.map(fmt_sci).unwrap_or_default();
        let _ = writeln!(out, "{},{},{},{}", e.step, fmt_sci(e.time), fmt_sci(e.energy), b);
    }
    out
}

pub fn solve(loaded: &Loaded, opts: &Opts) -> Result<String, CliError> {
    let c = &loaded.config;
    let field = loaded.field()?;
    let hier = build_hierarchy(c.mesh.nx, c.mesh.ny, c.mesh.coarse_nx, c.mesh.coarse_ny)?;
    let t = &c.time;
    let n_steps = LeapfrogConfig::new(t.dt).n_steps(t.t_final)?;
    let h = hier.coarse.h();
    if opts.dry_run {
        return Ok(format!(
            "dry-run ok: H={} h={} N_T={} slack_bound={} field_hash={}",
            fmt_sci(h),
            fmt_sci(hier.fine.h()),
            n_steps,
            fmt_sci(slack_bound(c, field.beta(), t.alpha)),
            field.hash()
        ));
    }
    let out = out_dir(c, opts)?;
    let pou = build_partition_of_unity(&hier, &field, c.cem.pou)?;
    let aux = build_auxiliary_space(&hier, &field, &pou, c.cem.ell)?;
    let basis = build_multiscale_basis(&hier, &field, &aux, c.cem.m)?;
    let space = GalerkinSpace::<f64>::from_basis(&hier, &field, &basis)?.with_stability(field.beta(), h)?;
    let info = RowInfo {
        h,
        m: c.cem.m,
        dim: basis.dim(),
        lambda: aux.lambda(),
        sigma_aux: aux.sigma_aux(),
        c_inv_emp: space.stability.map(|s| s.c_inv).unwrap_or(f64::NAN),
        max_residual: basis.max_residual,
    };
    log::info!("basis: dim {} Λ {:.4} C_inv {:.4}", info.dim, info.lambda, info.c_inv_emp);

    let problem = QgdProblem::new(t.alpha, Source::named(&t.source)?, t.t_final);
    let mut config = LeapfrogConfig::new(t.dt);
    config.cfl_delta = t.delta;
    config.energy_stride = c.output.energy_stride;
    config.track_balance = true;
    config.allow_unstable = opts.allow_unstable;
    let start = init_steps(&problem, &space, t.init, t.dt)?;
    let traj = leapfrog_solve(&space, &problem, &config, start).map_err(cfl_or)?;
    if c.output.wants("csv") {
        write(&out.join("energy.csv"), &energy_csv(&traj.energy))?;
    }

    let mut report = None;
    if t.reference && traj.completed() {
        let mut rc = config.clone();
        rc.energy_stride = 0;
        rc.cfl_delta = 0.0;
        let (_, reference) = reference_solve(&hier, &field, &problem, &rc, t.init).map_err(cfl_or)?;
        if !reference.completed() {
            return Err(CliError::Blowup(format!("reference run blew up at step {:?}", reference.blowup)));
        }
        let norms = ErrorNorms::new(&hier, &pou.kappa_tilde, space.fine_stiffness().clone())?;
        let r = compute_errors(&traj, &space, &reference, &norms)?;
        if c.output.wants("csv") {
            let table = ConvergenceTable {
                rows: vec![StudyRow { coarse: c.mesh.coarse_nx, m: c.cem.m }],
                row_info: vec![Some(info.clone())],
                alphas: vec![t.alpha],
                cells: vec![CellResult { row: 0, col: 0, h, m: c.cem.m, alpha: t.alpha, outcome: Ok(r.clone()), wall_seconds: traj.wall_seconds }],
                source: t.source.clone(),
                dt: t.dt,
                t_final: t.t_final,
                field_hash: field.hash(),
                partial: false,
                record_timing: c.output.record_timing,
            };
            write(&out.join("errors.csv"), &table.to_csv())?;
        }
        report = Some(r);
    }
    if c.output.wants("json") {
        let meta = json!({
            "command": "solve",
            "config": c,
            "field_hash": field.hash(),
            "contrast": field.contrast(),
            "n_steps": n_steps,
            "steps_completed": traj.steps_completed,
            "blowup_step": traj.blowup,
            "basis": info,
            "cfl": traj.cfl,
            "initial_norms": [traj.initial_norms.0, traj.initial_norms.1],
            "errors": report,
            "wall_seconds": if c.output.record_timing { traj.wall_seconds } else { 0.0 },
        });
        write(&out.join("meta.json"), &json_string(&meta))?;
    }
    if let Some(step) = traj.blowup {
        return Err(CliError::Blowup(format!("blow-up at step {step}; partial outputs in {}", out.display())));
    }
    let errs = report.map(|r| format!(" e_a={} e_l2={}", fmt_sci(r.e_a), fmt_sci(r.e_l2))).unwrap_or_default();
    Ok(format!("solve ok: dim={} steps={}{} out={}", info.dim, traj.steps_completed, errs, out.display()))
}

fn study_spec(c: &RunConfig, opts: &Opts) -> StudySpec {
    StudySpec {
        nx: c.mesh.nx,
        ny: c.mesh.ny,
        rows: c.study.rows.clone(),
        alphas: c.study.alphas.clone(),
        source: c.time.source.clone(),
        dt: c.time.dt,
        t_final: c.time.t_final,
        ell: c.cem.ell,
        pou: c.cem.pou,
        init: c.time.init,
        cfl_delta: c.time.delta,
        allow_unstable: opts.allow_unstable,
        max_cells: opts.max_cells,
        record_timing: c.output.record_timing,
    }
}

pub fn study(loaded: &Loaded, opts: &Opts) -> Result<String, CliError> {
    let c = &loaded.config;
    c.validate_study()?;
    let field = loaded.field()?;
    let spec = study_spec(c, opts);
    let total = spec.rows.len() * spec.alphas.len();
    let cells = opts.max_cells.unwrap_or(total).min(total);
    if opts.dry_run {
        let hs: Vec<String> = spec.rows.iter().map(|r| fmt_sci(std::f64::consts::SQRT_2 / r.coarse as f64)).collect();
        let amin = spec.alphas.iter().copied().fold(f64::INFINITY, f64::min);
        let n_steps = LeapfrogConfig::new(spec.dt).n_steps(spec.t_final)?;
        return Ok(format!(
            "dry-run ok: H=[{}] alphas={} cells={cells}/{total} N_T={n_steps} slack_bound(min alpha)={} field_hash={}",
            hs.join(" "),
            spec.alphas.len(),
            fmt_sci(slack_bound(c, field.beta(), amin)),
            field.hash()
        ));
    }
    let out = out_dir(c, opts)?;
    let cache = match &c.output.cache {
        Some(dir) => Some(ReferenceCache::new(dir).map_err(|e| CliError::Config(format!("output.cache: {e}")))?),
        None => None,
    };
    let table = run_convergence_study(&spec, &field, cache.as_ref())?;
    if c.output.wants("csv") {
        write(&out.join("errors.csv"), &table.to_csv())?;
    }
    if c.output.wants("svg") {
        write(&out.join("convergence.svg"), &table.to_svg())?;
    }
    let failures: Vec<_> = table
        .cells
        .iter()
        .filter_map(|cell| cell.outcome.as_ref().err().map(|f| json!({"row": cell.row, "col": cell.col, "failure": f})))
        .collect();
    if c.output.wants("json") {
        let meta = json!({
            "command": "study",
            "config": c,
            "field_hash": table.field_hash,
            "rows": table.row_info,
            "partial": table.partial,
            "cells_evaluated": table.cells.len(),
            "cells_total": total,
            "ratios": (0..table.alphas.len()).map(|k| table.ratios(k)).collect::<Vec<_>>(),
            "failures": failures,
        });
        write(&out.join("meta.json"), &json_string(&meta))?;
    }
    let kinds: Vec<FailureKind> = table.cells.iter().filter_map(|c| c.outcome.as_ref().err().map(|f| f.kind)).collect();
    let where_ = format!("{} of {} cells failed; see {}", kinds.len(), table.cells.len(), out.display());
    if kinds.contains(&FailureKind::CflRefused) {
        return Err(CliError::Cfl(where_));
    }
    if kinds.contains(&FailureKind::Blowup) {
        return Err(CliError::Blowup(where_));
    }
    if !kinds.is_empty() {
        return Err(CliError::Other(where_));
    }
    let first: Vec<String> = table.column_e_a(0).iter().map(|e| e.map(fmt_sci).unwrap_or_else(|| "-".into())).collect();
    Ok(format!("study ok: cells={}/{total} e_a[alpha={}]=[{}] out={}", table.cells.len(), fmt_sci(table.alphas[0]), first.join(" "), out.display()))
}

pub fn diagnose(loaded: &Loaded, opts: &Opts) -> Result<String, CliError> {
    let c = &loaded.config;
    let field = loaded.field()?;
    let hier = build_hierarchy(c.mesh.nx, c.mesh.ny, c.mesh.coarse_nx, c.mesh.coarse_ny)?;
    let d = &c.diagnose;
    if opts.dry_run {
        return Ok(format!(
            "dry-run ok: H={} decay_m={:?} scan_points={} horizon={} field_hash={}",
            fmt_sci(hier.coarse.h()),
            d.decay_m,
            d.scan_dt.len(),
            fmt_sci(d.horizon),
            field.hash()
        ));
    }
    let out = out_dir(c, opts)?;
    let pou = build_partition_of_unity(&hier, &field, c.cem.pou)?;
    let aux = build_auxiliary_space(&hier, &field, &pou, c.cem.ell)?;
    let mut summary = format!("diagnose ok: lambda={}", fmt_sci(aux.lambda()));
    let mut meta = json!({"command": "diagnose", "config": c, "field_hash": field.hash(), "lambda": aux.lambda(), "sigma_aux": aux.sigma_aux()});

    if !d.decay_m.is_empty() {
        let report = measure_decay(&hier, &field, &aux, &d.decay_m)?;
        let mut csv = String::from("m,column,gap,predicted\n");
        for (k, &m) in report.m_list.iter().enumerate() {
            for (col, g) in report.gaps[k].iter().enumerate() {
                let _ = writeln!(csv, "{m},{col},{},{}", fmt_sci(*g), fmt_sci(report.predicted[k]));
            }
        }
        if c.output.wants("csv") {
            write(&out.join("decay.csv"), &csv)?;
        }
        let _ = write!(summary, " decay_slope={}", fmt_sci(report.slope));
        meta["decay"] = json!(report);
    }

    let basis = build_multiscale_basis(&hier, &field, &aux, c.cem.m)?;
    let space = GalerkinSpace::<f64>::from_basis(&hier, &field, &basis)?.with_stability(field.beta(), hier.coarse.h())?;
    let stab = space.stability.expect("stability computed");
    let _ = write!(summary, " C_inv_emp={}", fmt_sci(stab.c_inv));
    meta["c_inv_emp"] = json!(stab.c_inv);
    meta["cfl"] = json!(check_cfl(c.time.alpha, stab.beta, stab.c_inv, stab.h, c.time.dt, c.time.delta));

    if !d.scan_dt.is_empty() {
        let problem = QgdProblem::new(c.time.alpha, Source::named(&c.time.source)?, d.horizon);
        let dt0 = d.scan_dt.iter().copied().fold(f64::INFINITY, f64::min);
        let start = init_steps(&problem, &space, c.time.init, dt0)?;
        let report = cfl_boundary_scan(&problem, &space, &start, &d.scan_dt, d.horizon)?;
        let mut csv = String::from("dt,steps,stable,blowup_step\n");
        for e in &report.entries {
            let b = e.blowup_step.map(|s| s.to_string()).unwrap_or_default();
            let _ = writeln!(csv, "{},{},{},{b}", fmt_sci(e.dt), e.steps, e.stable);
        }
        if c.output.wants("csv") {
            write(&out.join("scan.csv"), &csv)?;
        }
        let crit = report.empirical_critical.map(fmt_sci).unwrap_or_else(|| "none".into());
        let _ = write!(summary, " critical_dt={crit} predicted_dt={}", fmt_sci(report.predicted));
        meta["scan"] = json!(report);
    }
    if c.output.wants("json") {
        write(&out.join("meta.json"), &json_string(&meta))?;
    }
    let _ = write!(summary, " out={}", out.display());
    Ok(summary)
}

pub fn field(loaded: &Loaded, opts: &Opts) -> Result<String, CliError> {
    let field: PermeabilityField = loaded.field()?;
    if opts.dry_run {
        return Ok(format!("dry-run ok: {}x{} contrast={} hash={}", field.nx(), field.ny(), fmt_sci(field.contrast()), field.hash()));
    }
    let out = out_dir(&loaded.config, opts)?;
    let path = out.join("field.txt");
    write(&path, &field.to_raster_string())?;
    Ok(format!("field ok: contrast={} hash={} path={}", fmt_sci(field.contrast()), field.hash(), path.display()))
}
