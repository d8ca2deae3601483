//! Error metrics, convergence studies and stability diagnostics.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use thiserror::Error;

use crate::cem::{build_auxiliary_space, build_multiscale_basis, AuxiliarySpace, CemError, MultiscaleBasis};
use crate::coefficient::PermeabilityField;
use crate::fem::{assemble_mass, build_partition_of_unity, FemError, PouKind};
use crate::grid::{build_hierarchy, DofMap, GridError, GridHierarchy};
use crate::linalg::CsrMatrix;
use crate::qgd::{
    check_cfl, init_steps, leapfrog_solve, GalerkinSpace, InitPolicy, LeapfrogConfig, MassSolver, QgdError, QgdProblem,
    Source, Trajectory,
};

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("terminal times differ: {coarse} vs {reference}")]
    TerminalTime { coarse: f64, reference: f64 },
    #[error("run did not complete (blow-up at step {0:?})")]
    Incomplete(Option<usize>),
    #[error("reference norm {0:e} too small for a relative error")]
    DegenerateReference(f64),
    #[error("study has no rows")]
    EmptyStudy,
    #[error("study has no alpha columns")]
    NoColumns,
    #[error("reference cache: {0}")]
    Cache(#[from] io::Error),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Fem(#[from] FemError),
    #[error(transparent)]
    Cem(#[from] CemError),
    #[error(transparent)]
    Qgd(#[from] QgdError),
}

/// Operators defining the error norms on the fine interior space.
#[derive(Debug, Clone)]
pub struct ErrorNorms {
    /// `κ̃`-weighted mass (the s-norm).
    pub s: CsrMatrix<f64>,
    /// Stiffness (the energy norm).
    pub a: CsrMatrix<f64>,
}

impl ErrorNorms {
    pub fn new(hier: &GridHierarchy, kappa_tilde: &[f64], stiffness: CsrMatrix<f64>) -> Result<Self, AnalysisError> {
        let interior = DofMap::interior(&hier.fine);
        let s = assemble_mass::<f64>(&hier.fine, &interior, Some(kappa_tilde), None)?.matrix;
        Ok(Self { s, a: stiffness })
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct ErrorReport {
    pub e_l2: f64,
    pub e_a: f64,
    pub abs_l2: f64,
    pub abs_a: f64,
    pub ref_l2: f64,
    pub ref_a: f64,
}

/// Relative s- and energy-norm errors of a run against a fine reference at `T`.
pub fn compute_errors(
    coarse: &Trajectory<f64>,
    space: &GalerkinSpace<f64>,
    reference: &Trajectory<f64>,
    norms: &ErrorNorms,
) -> Result<ErrorReport, AnalysisError> {
    for t in [coarse, reference] {
        if !t.completed() {
            return Err(AnalysisError::Incomplete(t.blowup));
        }
    }
    let (tc, tr) = (coarse.final_time(), reference.final_time());
    if (tc - tr).abs() > 1e-12 * tr.abs().max(1.0) {
        return Err(AnalysisError::TerminalTime { coarse: tc, reference: tr });
    }
    errors_of(&space.prolong(&coarse.final_u), &reference.final_u, norms)
}

/// Relative errors between two fine interior vectors.
pub fn errors_of(u: &[f64], reference: &[f64], norms: &ErrorNorms) -> Result<ErrorReport, AnalysisError> {
    let d: Vec<f64> = reference.iter().zip(u).map(|(r, c)| r - c).collect();
    let ref_l2 = norms.s.quadratic(reference).max(0.0).sqrt();
    let ref_a = norms.a.quadratic(reference).max(0.0).sqrt();
    let denom = ref_l2.min(ref_a);
    if !(denom >= 1e-14) {
        return Err(AnalysisError::DegenerateReference(denom));
    }
    let abs_l2 = norms.s.quadratic(&d).max(0.0).sqrt();
    let abs_a = norms.a.quadratic(&d).max(0.0).sqrt();
    Ok(ErrorReport { e_l2: abs_l2 / ref_l2, e_a: abs_a / ref_a, abs_l2, abs_a, ref_l2, ref_a })
}

/// `ℰ(v) = √α ‖v_t‖ + ‖v‖_a` with `v_t` the backward difference quotient.
pub fn energy_functional(alpha: f64, u: &[f64], u_prev: &[f64], dt: f64, m: &CsrMatrix<f64>, a: &CsrMatrix<f64>) -> f64 {
    let vt: Vec<f64> = u.iter().zip(u_prev).map(|(x, y)| (x - y) / dt).collect();
    alpha.sqrt() * m.quadratic(&vt).max(0.0).sqrt() + a.quadratic(u).max(0.0).sqrt()
}

/// `C_inv = H √μ_max(RᵀK₁R, RᵀMR)`.
pub fn estimate_inverse_constant(space: &GalerkinSpace<f64>, h_coarse: f64) -> Result<f64, AnalysisError> {
    Ok(h_coarse * space.unit_stiffness_mu_max()?.sqrt())
}

/// C-style `%.5e` (two-digit signed exponent).
pub fn fmt_sci(x: f64) -> String {
    if !x.is_finite() {
        return format!("{x}");
    }
    let s = format!("{x:.5e}");
    let (mant, exp) = s.split_once('e').expect("exponent present");
    let e: i32 = exp.parse().expect("integer exponent");
    format!("{mant}e{}{:02}", if e < 0 { '-' } else { '+' }, e.abs())
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct StudyRow {
    /// Coarse elements per axis.
    pub coarse: usize,
    pub m: usize,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct StudySpec {
    pub nx: usize,
    pub ny: usize,
    pub rows: Vec<StudyRow>,
    pub alphas: Vec<f64>,
    pub source: String,
    pub dt: f64,
    pub t_final: f64,
    pub ell: usize,
    pub pou: PouKind,
    pub init: InitPolicy,
    pub cfl_delta: f64,
    pub allow_unstable: bool,
    /// Evaluate only the first `k` cells (row-major).
    pub max_cells: Option<usize>,
    pub record_timing: bool,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct CellResult {
    pub row: usize,
    pub col: usize,
    pub h: f64,
    pub m: usize,
    pub alpha: f64,
    pub outcome: Result<ErrorReport, CellFailure>,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureKind {
    CflRefused,
    Blowup,
    Other,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct CellFailure {
    pub kind: FailureKind,
    pub message: String,
}

impl From<&AnalysisError> for CellFailure {
    fn from(e: &AnalysisError) -> Self {
        let kind = match e {
            AnalysisError::Qgd(QgdError::CflRefused { .. }) => FailureKind::CflRefused,
            AnalysisError::Incomplete(_) => FailureKind::Blowup,
            _ => FailureKind::Other,
        };
        CellFailure { kind, message: e.to_string() }
    }
}

impl From<AnalysisError> for CellFailure {
    fn from(e: AnalysisError) -> Self {
        CellFailure::from(&e)
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct RowInfo {
    pub h: f64,
    pub m: usize,
    pub dim: usize,
    pub lambda: f64,
    pub sigma_aux: f64,
    pub c_inv_emp: f64,
    pub max_residual: f64,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct ConvergenceTable {
    pub rows: Vec<StudyRow>,
    pub row_info: Vec<Option<RowInfo>>,
    pub alphas: Vec<f64>,
    pub cells: Vec<CellResult>,
    pub source: String,
    pub dt: f64,
    pub t_final: f64,
    pub field_hash: String,
    /// Some cells failed or were skipped.
    pub partial: bool,
    pub record_timing: bool,
}

impl ConvergenceTable {
    pub const CSV_HEADER: &'static str = "H,m,alpha,e_l2,e_a,dt,T,source,field_hash,wall_seconds";

    pub fn cell(&self, row: usize, col: usize) -> Option<&CellResult> {
        self.cells.iter().find(|c| c.row == row && c.col == col)
    }

    /// `e_a` down column `col` (None where missing or failed).
    pub fn column_e_a(&self, col: usize) -> Vec<Option<f64>> {
        (0..self.rows.len()).map(|r| self.cell(r, col).and_then(|c| c.outcome.as_ref().ok()).map(|e| e.e_a)).collect()
    }

    /// Consecutive ratios `e(row) / e(row+1)` of `e_a` in column `col`.
    pub fn ratios(&self, col: usize) -> Vec<Option<f64>> {
        self.column_e_a(col).windows(2).map(|w| Some(w[0]? / w[1]?)).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        out.push_str(Self::CSV_HEADER);
        out.push('\n');
        for c in &self.cells {
            let (l2, a) = match &c.outcome {
                Ok(e) => (fmt_sci(e.e_l2), fmt_sci(e.e_a)),
                Err(_) => ("nan".to_string(), "nan".to_string()),
            };
            let wall = if self.record_timing { c.wall_seconds } else { 0.0 };
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{}",
                fmt_sci(c.h),
                c.m,
                fmt_sci(c.alpha),
                l2,
                a,
                fmt_sci(self.dt),
                fmt_sci(self.t_final),
                self.source,
                self.field_hash,
                fmt_sci(wall)
            );
        }
        out
    }

    /// Log-log plot of `e_a` and `e_L2` against `H`, one series per α.
    pub fn to_svg(&self) -> String {
        let (w, h, pad) = (640.0, 480.0, 60.0);
        let mut pts: Vec<(f64, f64)> = Vec::new();
        for c in &self.cells {
            if let Ok(e) = &c.outcome {
                for v in [e.e_a, e.e_l2] {
                    if v > 0.0 {
                        pts.push((c.h, v));
                    }
                }
            }
        }
        let mut svg = String::new();
        let _ = writeln!(svg, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#);
        let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
        if pts.is_empty() {
            svg.push_str("</svg>\n");
            return svg;
        }
        let lx = |v: f64| v.log10();
        let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
        for &(x, y) in &pts {
            x0 = x0.min(lx(x));
            x1 = x1.max(lx(x));
            y0 = y0.min(lx(y));
            y1 = y1.max(lx(y));
        }
        let (x0, x1) = (x0.floor() - if x1 - x0 < 1e-12 { 1.0 } else { 0.0 }, x1.ceil());
        let (y0, y1) = (y0.floor(), y1.ceil().max(y0.floor() + 1.0));
        let px = |v: f64| pad + (lx(v) - x0) / (x1 - x0) * (w - 2.0 * pad);
        let py = |v: f64| h - pad - (lx(v) - y0) / (y1 - y0) * (h - 2.0 * pad);
        let _ = writeln!(
            svg,
            r#"<rect x="{pad}" y="{pad}" width="{}" height="{}" fill="none" stroke="black"/>"#,
            w - 2.0 * pad,
            h - 2.0 * pad
        );
        for d in (x0 as i32)..=(x1 as i32) {
            let x = px(10f64.powi(d));
            let _ = writeln!(svg, r#"<text x="{x:.1}" y="{:.1}" font-size="12" text-anchor="middle">1e{d}</text>"#, h - pad + 18.0);
        }
        for d in (y0 as i32)..=(y1 as i32) {
            let y = py(10f64.powi(d));
            let _ = writeln!(svg, r#"<text x="{:.1}" y="{y:.1}" font-size="12" text-anchor="end">1e{d}</text>"#, pad - 6.0);
            let _ = writeln!(svg, r##"<line x1="{pad}" x2="{:.1}" y1="{y:.1}" y2="{y:.1}" stroke="#ddd"/>"##, w - pad);
        }
        let _ = writeln!(svg, r#"<text x="{:.1}" y="{:.1}" font-size="14" text-anchor="middle">H</text>"#, w / 2.0, h - 15.0);
        let palette = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f"];
        for (col, alpha) in self.alphas.iter().enumerate() {
            let color = palette[col % palette.len()];
            for (norm, dash) in [(0, ""), (1, r#" stroke-dasharray="5,4""#)] {
                let series: Vec<(f64, f64)> = (0..self.rows.len())
                    .filter_map(|r| {
                        let c = self.cell(r, col)?;
                        let e = c.outcome.as_ref().ok()?;
                        let v = if norm == 0 { e.e_a } else { e.e_l2 };
                        (v > 0.0).then_some((px(c.h), py(v)))
                    })
                    .collect();
                if series.is_empty() {
                    continue;
                }
                let path: Vec<String> = series.iter().map(|(x, y)| format!("{x:.1},{y:.1}")).collect();
                let _ = writeln!(svg, r#"<polyline points="{}" fill="none" stroke="{color}"{dash}/>"#, path.join(" "));
                for (x, y) in &series {
                    let _ = writeln!(svg, r#"<circle cx="{x:.1}" cy="{y:.1}" r="3" fill="{color}"/>"#);
                }
            }
            let _ = writeln!(
                svg,
                r#"<text x="{:.1}" y="{:.1}" font-size="12" fill="{color}">alpha = {}</text>"#,
                w - pad - 110.0,
                pad + 16.0 + 14.0 * col as f64,
                fmt_sci(*alpha)
            );
        }
        svg.push_str("</svg>\n");
        svg
    }
}

/// On-disk store of reference terminal states.
#[derive(Debug, Clone)]
pub struct ReferenceCache {
    dir: PathBuf,
}

const CACHE_MAGIC: &[u8; 8] = b"QGDREF1\n";

impl ReferenceCache {
    pub fn new(dir: impl Into<PathBuf>) -> io::Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        Ok(Self { dir })
    }

    pub fn key(field_hash: &str, source: &str, alpha: f64, dt: f64, t_final: f64, nx: usize) -> String {
        format!("{field_hash}_{source}_a{}_dt{}_T{}_n{nx}", fmt_sci(alpha), fmt_sci(dt), fmt_sci(t_final))
    }

    fn path(&self, key: &str) -> PathBuf {
        self.dir.join(format!("{key}.bin"))
    }

    pub fn load(&self, key: &str) -> io::Result<Option<Vec<f64>>> {
        let bytes = match fs::read(self.path(key)) {
            Ok(b) => b,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(e),
        };
        let bad = || io::Error::new(io::ErrorKind::InvalidData, format!("corrupt cache entry {key}"));
        if bytes.len() < 16 || &bytes[..8] != CACHE_MAGIC {
            return Err(bad());
        }
        let n = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        if bytes.len() != 16 + 8 * n {
            return Err(bad());
        }
        Ok(Some(bytes[16..].chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect()))
    }

    pub fn store(&self, key: &str, u: &[f64]) -> io::Result<()> {
        let mut bytes = Vec::with_capacity(16 + 8 * u.len());
        bytes.extend_from_slice(CACHE_MAGIC);
        bytes.extend_from_slice(&(u.len() as u64).to_le_bytes());
        for v in u {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        let tmp = self.dir.join(format!("{key}.tmp"));
        fs::write(&tmp, bytes)?;
        fs::rename(tmp, self.path(key))
    }
}

/// Everything needed to run one row of a study.
pub struct StudyLevel {
    pub hier: GridHierarchy,
    pub aux: AuxiliarySpace,
    pub basis: MultiscaleBasis,
    pub space: GalerkinSpace<f64>,
    pub norms: ErrorNorms,
    pub info: RowInfo,
}

/// Builds the multiscale space of one `(H, m)` row.
pub fn build_level(
    field: &PermeabilityField,
    nx: usize,
    ny: usize,
    row: StudyRow,
    ell: usize,
    pou_kind: PouKind,
) -> Result<StudyLevel, AnalysisError> {
    let hier = build_hierarchy(nx, ny, row.coarse, row.coarse)?;
    let pou = build_partition_of_unity(&hier, field, pou_kind)?;
    let aux = build_auxiliary_space(&hier, field, &pou, ell)?;
    let basis = build_multiscale_basis(&hier, field, &aux, row.m)?;
    let h = hier.coarse.h();
    let space = GalerkinSpace::<f64>::from_basis(&hier, field, &basis)?.with_stability(field.beta(), h)?;
    let norms = ErrorNorms::new(&hier, &pou.kappa_tilde, space.fine_stiffness().clone())?;
    let info = RowInfo {
        h,
        m: row.m,
        dim: basis.dim(),
        lambda: aux.lambda(),
        sigma_aux: aux.sigma_aux(),
        c_inv_emp: space.stability.unwrap().c_inv,
        max_residual: basis.max_residual,
    };
    Ok(StudyLevel { hier, aux, basis, space, norms, info })
}

/// Fine-grid reference terminal states for each α, optionally cached on disk.
pub struct ReferenceSet {
    pub space: GalerkinSpace<f64>,
    pub finals: Vec<Result<Trajectory<f64>, CellFailure>>,
}

pub fn reference_runs(
    field: &PermeabilityField,
    nx: usize,
    ny: usize,
    alphas: &[f64],
    source: &Source,
    dt: f64,
    t_final: f64,
    init: InitPolicy,
    cache: Option<&ReferenceCache>,
    allow_unstable: bool,
) -> Result<ReferenceSet, AnalysisError> {
    let hier = build_hierarchy(nx, ny, 1, 1)?;
    let mut space = GalerkinSpace::<f64>::fine(&hier, field, MassSolver::Kronecker)?;
    space.compute_stability(field.beta(), hier.fine.h())?;
    let hash = field.hash();
    let finals = alphas
        .par_iter()
        .map(|&alpha| -> Result<Trajectory<f64>, CellFailure> {
            let key = ReferenceCache::key(&hash, source.name(), alpha, dt, t_final, nx);
            let problem = QgdProblem::new(alpha, source.clone(), t_final);
            let mut config = LeapfrogConfig::new(dt);
            config.energy_stride = 0;
            config.allow_unstable = allow_unstable;
            if let Some(c) = cache {
                if let Some(u) = c.load(&key).map_err(|e| CellFailure::from(AnalysisError::from(e)))? {
                    let n_steps = config.n_steps(t_final).map_err(|e| CellFailure::from(AnalysisError::from(e)))?;
                    return Ok(Trajectory {
                        dt,
                        n_steps,
                        steps_completed: n_steps,
                        blowup: None,
                        final_u: u,
                        previous_u: Vec::new(),
                        snapshots: Vec::new(),
                        energy: Vec::new(),
                        initial_norms: (0.0, 0.0),
                        cfl: None,
                        wall_seconds: 0.0,
                    });
                }
            }
            let start = init_steps(&problem, &space, init, dt).map_err(|e| CellFailure::from(AnalysisError::from(e)))?;
            let traj = leapfrog_solve(&space, &problem, &config, start).map_err(|e| CellFailure::from(AnalysisError::from(e)))?;
            if !traj.completed() {
                return Err(AnalysisError::Incomplete(traj.blowup).into());
            }
            if let (Some(c), true) = (cache, traj.completed()) {
                c.store(&key, &traj.final_u).map_err(|e| CellFailure::from(AnalysisError::from(e)))?;
            }
            Ok(traj)
        })
        .collect();
    Ok(ReferenceSet { space, finals })
}

/// Runs a coarse solve of one cell and compares it with the reference.
pub fn run_cell(
    level: &StudyLevel,
    reference: &Trajectory<f64>,
    alpha: f64,
    source: &Source,
    dt: f64,
    t_final: f64,
    init: InitPolicy,
    cfl_delta: f64,
    allow_unstable: bool,
) -> Result<(ErrorReport, Trajectory<f64>), AnalysisError> {
    let problem = QgdProblem::new(alpha, source.clone(), t_final);
    let mut config = LeapfrogConfig::new(dt);
    config.energy_stride = 0;
    config.cfl_delta = cfl_delta;
    config.allow_unstable = allow_unstable;
    let start = init_steps(&problem, &level.space, init, dt)?;
    let traj = leapfrog_solve(&level.space, &problem, &config, start)?;
    let report = compute_errors(&traj, &level.space, reference, &level.norms)?;
    Ok((report, traj))
}

/// Convergence table over `(H, m)` rows and α columns.
pub fn run_convergence_study(
    spec: &StudySpec,
    field: &PermeabilityField,
    cache: Option<&ReferenceCache>,
) -> Result<ConvergenceTable, AnalysisError> {
    if spec.rows.is_empty() {
        return Err(AnalysisError::EmptyStudy);
    }
    if spec.alphas.is_empty() {
        return Err(AnalysisError::NoColumns);
    }
    let source = Source::named(&spec.source)?;
    let ncols = spec.alphas.len();
    let total = spec.rows.len() * ncols;
    let limit = spec.max_cells.unwrap_or(total).min(total);
    let rows_needed = limit.div_ceil(ncols);
    let cols_needed = if rows_needed > 1 { ncols } else { limit };

    let refs = reference_runs(
        field,
        spec.nx,
        spec.ny,
        &spec.alphas[..cols_needed],
        &source,
        spec.dt,
        spec.t_final,
        spec.init,
        cache,
        spec.allow_unstable,
    )?;
    let levels: Vec<Result<StudyLevel, CellFailure>> = spec.rows[..rows_needed]
        .par_iter()
        .map(|&row| build_level(field, spec.nx, spec.ny, row, spec.ell, spec.pou).map_err(CellFailure::from))
        .collect();

    let cells: Vec<CellResult> = (0..limit)
        .into_par_iter()
        .map(|k| {
            let (r, c) = (k / ncols, k % ncols);
            let clock = Instant::now();
            let alpha = spec.alphas[c];
            let row = spec.rows[r];
            let h = std::f64::consts::SQRT_2 / row.coarse as f64;
            let outcome = match (&levels[r], &refs.finals[c]) {
                (Ok(level), Ok(reference)) => run_cell(
                    level,
                    reference,
                    alpha,
                    &source,
                    spec.dt,
                    spec.t_final,
                    spec.init,
                    spec.cfl_delta,
                    spec.allow_unstable,
                )
                .map(|(e, _)| e)
                .map_err(CellFailure::from),
                (Err(e), _) | (_, Err(e)) => Err(e.clone()),
            };
            CellResult { row: r, col: c, h, m: row.m, alpha, outcome, wall_seconds: clock.elapsed().as_secs_f64() }
        })
        .collect();
    let partial = limit < total || cells.iter().any(|c| c.outcome.is_err());
    let row_info = (0..spec.rows.len()).map(|r| levels.get(r).and_then(|l| l.as_ref().ok()).map(|l| l.info.clone())).collect();
    Ok(ConvergenceTable {
        rows: spec.rows.clone(),
        row_info,
        alphas: spec.alphas.clone(),
        cells,
        source: spec.source.clone(),
        dt: spec.dt,
        t_final: spec.t_final,
        field_hash: field.hash(),
        partial,
        record_timing: spec.record_timing,
    })
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct ScanEntry {
    pub dt: f64,
    pub steps: usize,
    pub stable: bool,
    pub blowup_step: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct StabilityReport {
    pub entries: Vec<ScanEntry>,
    /// Geometric mean of the largest stable and the smallest unstable step.
    pub empirical_critical: Option<f64>,
    /// Largest step satisfying the CFL condition with `δ = 0`.
    pub predicted: f64,
    pub c_inv_emp: f64,
}

impl StabilityReport {
    pub fn ratio(&self) -> Option<f64> {
        self.empirical_critical.map(|e| e / self.predicted)
    }
}

/// Runs the scheme over `dt_list` for a fixed horizon and reports where it
/// stops being stable.
pub fn cfl_boundary_scan(
    problem: &QgdProblem,
    space: &GalerkinSpace<f64>,
    start: &(Vec<f64>, Vec<f64>),
    dt_list: &[f64],
    horizon: f64,
) -> Result<StabilityReport, AnalysisError> {
    let stab = space.stability.ok_or(QgdError::StabilityUnknown)?;
    let predicted = check_cfl(problem.alpha, stab.beta, stab.c_inv, stab.h, 1.0, 0.0).dt_max;
    let entries: Vec<ScanEntry> = dt_list
        .par_iter()
        .map(|&dt| -> Result<ScanEntry, AnalysisError> {
            let steps = ((horizon / dt).ceil() as usize).max(2);
            let mut p = problem.clone();
            p.t_final = steps as f64 * dt;
            let mut config = LeapfrogConfig::new(dt);
            config.energy_stride = 0;
            config.allow_unstable = true;
            let t = leapfrog_solve(space, &p, &config, start.clone())?;
            Ok(ScanEntry { dt, steps, stable: t.completed(), blowup_step: t.blowup })
        })
        .collect::<Result<_, _>>()?;
    let mut sorted: Vec<&ScanEntry> = entries.iter().collect();
    sorted.sort_by(|a, b| a.dt.total_cmp(&b.dt));
    let first_unstable = sorted.iter().position(|e| !e.stable);
    let empirical_critical = match first_unstable {
        Some(k) if k > 0 => Some((sorted[k - 1].dt * sorted[k].dt).sqrt()),
        _ => None,
    };
    Ok(StabilityReport { entries, empirical_critical, predicted, c_inv_emp: stab.c_inv })
}

/// Writes `contents` to `path`, creating parent directories.
pub fn write_file(path: &Path, contents: &str) -> io::Result<()> {
    if let Some(p) = path.parent() {
        fs::create_dir_all(p)?;
    }
    fs::write(path, contents)
}
