//! Leapfrog time integration of `u_t + α u_tt − ∇·(κ∇u) = f` on a Galerkin
//! space (the fine interior space or a multiscale space), with CFL checks
//! and discrete energy monitoring.

use std::fmt;
use std::sync::Arc;
use std::time::Instant;

use thiserror::Error;

use crate::cem::MultiscaleBasis;
use crate::coefficient::PermeabilityField;
use crate::fem::{assemble_load, assemble_load_cellwise, assemble_mass, assemble_stiffness, FemError};
use crate::grid::{DofMap, FineMesh, GridHierarchy};
use crate::linalg::{max_generalized_eigenvalue, CsrMatrix, KroneckerMass, LanczosOptions, LinalgError, MassFactor, SkylineCholesky};
use crate::scalar::{cast_vec, dot, Scalar};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QgdError {
    #[error("alpha must be positive, got {0}")]
    NonPositiveAlpha(f64),
    #[error("time step and final time must be positive (dt = {dt}, T = {t_final})")]
    NonPositiveTime { dt: f64, t_final: f64 },
    #[error("T = {t_final} is not an integer multiple of dt = {dt}")]
    IncommensurateStep { dt: f64, t_final: f64 },
    #[error("at least two time steps are needed (N_T = {0})")]
    TooFewSteps(usize),
    #[error("CFL condition violated: slack {slack:.6e} below required {delta:.6e}")]
    CflRefused { slack: f64, delta: f64 },
    #[error("stability data missing; compute it or allow unstable runs")]
    StabilityUnknown,
    #[error("unknown source `{0}`")]
    UnknownSource(String),
    #[error("unknown initial-step policy `{0}`")]
    UnknownPolicy(String),
    #[error("vector of length {found} given where {expected} is expected")]
    Dimension { expected: usize, found: usize },
    #[error("factorization failed: {0}")]
    Factorization(#[from] LinalgError),
    #[error(transparent)]
    Fem(#[from] FemError),
}

#[derive(Clone)]
pub enum SpatialProfile {
    /// `sin(πx) sin(πy)`
    SineProduct,
    /// Cell-constant values on the fine mesh.
    Raster(Arc<Vec<f64>>),
    /// Load vector on the fine interior DOFs, used as given.
    LoadVector(Arc<Vec<f64>>),
    Zero,
}

#[derive(Clone)]
pub enum TemporalProfile {
    Constant,
    /// `sin(πt)`
    SinPi,
    Custom(Arc<dyn Fn(f64) -> f64 + Send + Sync>),
}

impl TemporalProfile {
    pub fn eval(&self, t: f64) -> f64 {
        match self {
            TemporalProfile::Constant => 1.0,
            TemporalProfile::SinPi => (std::f64::consts::PI * t).sin(),
            TemporalProfile::Custom(g) => g(t),
        }
    }
}

#[derive(Clone)]
pub enum Source {
    /// `Σ_k g_k(t) f_k(x)`.
    Separable {
        name: String,
        terms: Vec<(SpatialProfile, TemporalProfile)>,
    },
    /// `f(t, x, y)`, reassembled at every step.
    General {
        name: String,
        f: Arc<dyn Fn(f64, f64, f64) -> f64 + Send + Sync>,
    },
}

impl fmt::Debug for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Source({})", self.name())
    }
}

impl Source {
    pub const NAMES: [&'static str; 3] = ["static_sine", "time_sine", "zero"];

    pub fn named(name: &str) -> Result<Self, QgdError> {
        let (spatial, temporal) = match name {
            "static_sine" => (SpatialProfile::SineProduct, TemporalProfile::Constant),
            "time_sine" => (SpatialProfile::SineProduct, TemporalProfile::SinPi),
            "zero" => (SpatialProfile::Zero, TemporalProfile::Constant),
            other => return Err(QgdError::UnknownSource(other.to_string())),
        };
        Ok(Source::Separable { name: name.to_string(), terms: vec![(spatial, temporal)] })
    }

    pub fn raster(name: &str, values: Vec<f64>, temporal: TemporalProfile) -> Self {
        Source::Separable { name: name.to_string(), terms: vec![(SpatialProfile::Raster(Arc::new(values)), temporal)] }
    }

    pub fn zero() -> Self {
        Self::named("zero").unwrap()
    }

    pub fn name(&self) -> &str {
        match self {
            Source::Separable { name, .. } | Source::General { name, .. } => name,
        }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            Source::Separable { terms, .. } => terms.iter().all(|(s, _)| matches!(s, SpatialProfile::Zero)),
            Source::General { .. } => false,
        }
    }
}

fn spatial_load(mesh: &FineMesh, dofs: &DofMap, p: &SpatialProfile) -> Vec<f64> {
    let pi = std::f64::consts::PI;
    match p {
        SpatialProfile::SineProduct => assemble_load(mesh, dofs, |x, y| (pi * x).sin() * (pi * y).sin()),
        SpatialProfile::Raster(v) => assemble_load_cellwise(mesh, dofs, v),
        SpatialProfile::LoadVector(v) => v.to_vec(),
        SpatialProfile::Zero => vec![0.0; dofs.len()],
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpaceKind {
    Fine,
    Multiscale,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MassSolver {
    /// Envelope Cholesky of the assembled mass.
    #[default]
    Skyline,
    /// Exact tensor-product factorisation (unit-weight fine mass only).
    Kronecker,
}

/// Quantities entering the CFL condition.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct StabilityData {
    pub beta: f64,
    /// Mesh size used to scale the inverse constant.
    pub h: f64,
    /// Largest eigenvalue of `K₁ x = μ M x` on the space.
    pub mu_max: f64,
    /// `C_inv = h √μ_max`.
    pub c_inv: f64,
}

/// Discrete space the scheme runs on, with its operators in precision `T`.
#[derive(Debug, Clone)]
pub struct GalerkinSpace<T> {
    pub kind: SpaceKind,
    pub mesh: FineMesh,
    pub interior: DofMap,
    pub a: CsrMatrix<T>,
    pub m: CsrMatrix<T>,
    m_factor: MassFactor<T>,
    r: Option<Arc<CsrMatrix<f64>>>,
    rt: Option<Arc<CsrMatrix<f64>>>,
    fine_a: Arc<CsrMatrix<f64>>,
    fine_m: Arc<CsrMatrix<f64>>,
    pub stability: Option<StabilityData>,
}

impl<T: Scalar> GalerkinSpace<T> {
    /// Full fine interior space.
    pub fn fine(hier: &GridHierarchy, field: &PermeabilityField, mass: MassSolver) -> Result<Self, QgdError> {
        let mesh = hier.fine;
        let interior = DofMap::interior(&mesh);
        let fa = assemble_stiffness::<f64>(&mesh, field, &interior, None)?.matrix;
        let fm = assemble_mass::<f64>(&mesh, &interior, None, None)?.matrix;
        let m: CsrMatrix<T> = fm.cast();
        let m_factor = match mass {
            MassSolver::Skyline => MassFactor::Skyline(SkylineCholesky::factor(&m)?),
            MassSolver::Kronecker => MassFactor::Kronecker(KroneckerMass::q1_interior(mesh.nx, mesh.ny, mesh.hx(), mesh.hy())?),
        };
        Ok(Self {
            kind: SpaceKind::Fine,
            mesh,
            interior,
            a: fa.cast(),
            m,
            m_factor,
            r: None,
            rt: None,
            fine_a: Arc::new(fa),
            fine_m: Arc::new(fm),
            stability: None,
        })
    }

    /// Space spanned by the columns of a multiscale basis.
    pub fn from_basis(hier: &GridHierarchy, field: &PermeabilityField, basis: &MultiscaleBasis) -> Result<Self, QgdError> {
        let interior = DofMap::interior(&hier.fine);
        let fa = assemble_stiffness::<f64>(&hier.fine, field, &interior, None)?.matrix;
        let fm = assemble_mass::<f64>(&hier.fine, &interior, None, None)?.matrix;
        Self::from_prolongation(hier.fine, basis.r.clone(), basis.a_ms.clone(), basis.m_ms.clone(), fa, fm)
    }

    /// Space with explicit prolongation `R` (fine interior × p) and reduced
    /// operators `RᵀAR`, `RᵀMR`.
    pub fn from_prolongation(
        mesh: FineMesh,
        r: CsrMatrix<f64>,
        a_red: CsrMatrix<f64>,
        m_red: CsrMatrix<f64>,
        fine_a: CsrMatrix<f64>,
        fine_m: CsrMatrix<f64>,
    ) -> Result<Self, QgdError> {
        let interior = DofMap::interior(&mesh);
        if r.nrows() != interior.len() {
            return Err(QgdError::Dimension { expected: interior.len(), found: r.nrows() });
        }
        let m: CsrMatrix<T> = m_red.cast();
        let m_factor = MassFactor::Skyline(SkylineCholesky::factor(&m)?);
        let rt = r.transpose();
        Ok(Self {
            kind: SpaceKind::Multiscale,
            mesh,
            interior,
            a: a_red.cast(),
            m,
            m_factor,
            r: Some(Arc::new(r)),
            rt: Some(Arc::new(rt)),
            fine_a: Arc::new(fine_a),
            fine_m: Arc::new(fine_m),
            stability: None,
        })
    }

    pub fn dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn mass_factor(&self) -> &MassFactor<T> {
        &self.m_factor
    }

    pub fn fine_stiffness(&self) -> &CsrMatrix<f64> {
        &self.fine_a
    }

    pub fn fine_mass(&self) -> &CsrMatrix<f64> {
        &self.fine_m
    }

    pub fn prolongation(&self) -> Option<&CsrMatrix<f64>> {
        self.r.as_deref()
    }

    /// `Rᵀ b` for a fine interior vector.
    pub fn restrict(&self, b: &[f64]) -> Vec<T> {
        match &self.rt {
            Some(rt) => cast_vec(&rt.mul_vec(b)),
            None => cast_vec(b),
        }
    }

    /// `R c` as a fine interior vector.
    pub fn prolong(&self, c: &[T]) -> Vec<f64> {
        let c64: Vec<f64> = cast_vec(c);
        match &self.r {
            Some(r) => r.mul_vec(&c64),
            None => c64,
        }
    }

    /// Largest eigenvalue of the unit-coefficient stiffness against the mass
    /// on this space.
    pub fn unit_stiffness_mu_max(&self) -> Result<f64, QgdError> {
        let unit = PermeabilityField::homogeneous(self.mesh.nx, self.mesh.ny, 1.0).expect("positive mesh");
        let k1 = assemble_stiffness::<f64>(&self.mesh, &unit, &self.interior, None)?.matrix;
        let (k, m) = match &self.r {
            Some(r) => (k1.galerkin(r), self.fine_m.galerkin(r)),
            None => (k1, (*self.fine_m).clone()),
        };
        let factor = match (&self.m_factor, self.kind) {
            (MassFactor::Kronecker(_), SpaceKind::Fine) => {
                MassFactor::Kronecker(KroneckerMass::q1_interior(self.mesh.nx, self.mesh.ny, self.mesh.hx(), self.mesh.hy())?)
            }
            _ => MassFactor::Skyline(SkylineCholesky::factor(&m)?),
        };
        Ok(max_generalized_eigenvalue(&k, &m, &factor, LanczosOptions::default()))
    }

    /// Computes and stores the CFL data with `C_inv = h √μ_max`.
    pub fn compute_stability(&mut self, beta: f64, h: f64) -> Result<StabilityData, QgdError> {
        let mu_max = self.unit_stiffness_mu_max()?;
        let s = StabilityData { beta, h, mu_max, c_inv: h * mu_max.sqrt() };
        self.stability = Some(s);
        Ok(s)
    }

    pub fn with_stability(mut self, beta: f64, h: f64) -> Result<Self, QgdError> {
        self.compute_stability(beta, h)?;
        Ok(self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct CflVerdict {
    /// `α − ½ β C_inv² H⁻² Δt²`.
    pub slack: f64,
    pub delta: f64,
    pub pass: bool,
    /// Largest step with `slack ≥ δ`.
    pub dt_max: f64,
}

pub fn check_cfl(alpha: f64, beta: f64, c_inv: f64, h: f64, dt: f64, delta: f64) -> CflVerdict {
    let rate = 0.5 * beta * c_inv * c_inv / (h * h);
    let slack = alpha - rate * dt * dt;
    let dt_max = if alpha > delta { ((alpha - delta) / rate).sqrt() } else { 0.0 };
    CflVerdict { slack, delta, pass: slack >= delta, dt_max }
}

#[derive(Debug, Clone)]
pub struct QgdProblem {
    pub alpha: f64,
    pub source: Source,
    pub t_final: f64,
    /// Initial value on the fine interior DOFs (`None` = 0).
    pub u0: Option<Vec<f64>>,
    /// Initial velocity on the fine interior DOFs (`None` = 0).
    pub v0: Option<Vec<f64>>,
}

impl QgdProblem {
    pub fn new(alpha: f64, source: Source, t_final: f64) -> Self {
        Self { alpha, source, t_final, u0: None, v0: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LeapfrogConfig {
    pub dt: f64,
    pub cfl_delta: f64,
    /// Energy is recorded every `energy_stride` steps (0 disables).
    pub energy_stride: usize,
    /// Also accumulate the dissipation and source work so that
    /// `E_n + D_n − W_n` can be checked for constancy.
    pub track_balance: bool,
    /// Solution snapshots every `snapshot_stride` steps (0 disables).
    pub snapshot_stride: usize,
    /// Absolute norm threshold; `None` = `1e12 (1 + ‖u¹‖)`.
    pub blowup_threshold: Option<f64>,
    pub allow_unstable: bool,
}

impl LeapfrogConfig {
    pub fn new(dt: f64) -> Self {
        Self {
            dt,
            cfl_delta: 0.0,
            energy_stride: 1,
            track_balance: false,
            snapshot_stride: 0,
            blowup_threshold: None,
            allow_unstable: false,
        }
    }

    /// `N_T = round(T/Δt)`, checked against `T` to 1e-12 relative.
    pub fn n_steps(&self, t_final: f64) -> Result<usize, QgdError> {
        if !(self.dt > 0.0) || !(t_final > 0.0) {
            return Err(QgdError::NonPositiveTime { dt: self.dt, t_final });
        }
        let n = (t_final / self.dt).round();
        if ((n * self.dt) - t_final).abs() > 1e-12 * t_final {
            return Err(QgdError::IncommensurateStep { dt: self.dt, t_final });
        }
        let n = n as usize;
        if n < 2 {
            return Err(QgdError::TooFewSteps(n));
        }
        Ok(n)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitPolicy {
    #[default]
    Zero,
    EllipticTaylor,
}

impl std::str::FromStr for InitPolicy {
    type Err = QgdError;
    fn from_str(s: &str) -> Result<Self, QgdError> {
        match s {
            "zero" => Ok(InitPolicy::Zero),
            "elliptic_taylor" => Ok(InitPolicy::EllipticTaylor),
            other => Err(QgdError::UnknownPolicy(other.to_string())),
        }
    }
}

/// Precomputed load data on a space.
struct Loads<T> {
    terms: Vec<(Vec<T>, TemporalProfile)>,
    general: Option<Arc<dyn Fn(f64, f64, f64) -> f64 + Send + Sync>>,
}

impl<T: Scalar> Loads<T> {
    fn new(space: &GalerkinSpace<T>, source: &Source) -> Result<Self, QgdError> {
        match source {
            Source::Separable { terms, .. } => {
                let mut out = Vec::with_capacity(terms.len());
                for (spatial, temporal) in terms {
                    if matches!(spatial, SpatialProfile::Zero) {
                        continue;
                    }
                    let b = spatial_load(&space.mesh, &space.interior, spatial);
                    check_len(&b, space.interior.len())?;
                    out.push((space.restrict(&b), temporal.clone()));
                }
                Ok(Loads { terms: out, general: None })
            }
            Source::General { f, .. } => Ok(Loads { terms: Vec::new(), general: Some(f.clone()) }),
        }
    }

    fn at(&self, space: &GalerkinSpace<T>, t: f64, out: &mut [T]) {
        if self.general.is_none() {
            out.iter_mut().for_each(|o| *o = T::zero());
            for (b, g) in &self.terms {
                let s = T::lit(g.eval(t));
                out.iter_mut().zip(b).for_each(|(o, v)| *o += s * *v);
            }
        } else if let Some(f) = &self.general {
            let b = assemble_load(&space.mesh, &space.interior, |x, y| f(t, x, y));
            out.copy_from_slice(&space.restrict(&b));
        }
    }
}

fn check_len(v: &[f64], n: usize) -> Result<(), QgdError> {
    if v.len() != n {
        return Err(QgdError::Dimension { expected: n, found: v.len() });
    }
    Ok(())
}

/// Starting values `(u⁰, u¹)` on the space.
pub fn init_steps<T: Scalar>(
    problem: &QgdProblem,
    space: &GalerkinSpace<T>,
    policy: InitPolicy,
    dt: f64,
) -> Result<(Vec<T>, Vec<T>), QgdError> {
    let n = space.dim();
    match policy {
        InitPolicy::Zero => Ok((vec![T::zero(); n], vec![T::zero(); n])),
        InitPolicy::EllipticTaylor => {
            let nf = space.interior.len();
            let u0 = match &problem.u0 {
                Some(u) => {
                    check_len(u, nf)?;
                    let rhs = space.restrict(&space.fine_a.mul_vec(u));
                    SkylineCholesky::factor(&space.a)?.solve(&rhs)
                }
                None => vec![T::zero(); n],
            };
            let v = match &problem.v0 {
                Some(v) => {
                    check_len(v, nf)?;
                    space.m_factor.solve(&space.restrict(&space.fine_m.mul_vec(v)))
                }
                None => vec![T::zero(); n],
            };
            let loads = Loads::new(space, &problem.source)?;
            let mut b = vec![T::zero(); n];
            loads.at(space, 0.0, &mut b);
            let au = space.a.mul_vec(&u0);
            b.iter_mut().zip(&au).for_each(|(x, y)| *x -= *y);
            space.m_factor.solve_in_place(&mut b);
            let (alpha, dt_t) = (T::lit(problem.alpha), T::lit(dt));
            let half_dt2 = T::lit(0.5 * dt * dt);
            let u1 = (0..n).map(|i| u0[i] + dt_t * v[i] + half_dt2 * (b[i] - v[i]) / alpha).collect();
            Ok((u0, u1))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct EnergySample {
    pub step: usize,
    pub time: f64,
    /// `E_n = ½(α‖(uⁿ − uⁿ⁻¹)/Δt‖² + a(uⁿ⁻¹, uⁿ))`.
    pub energy: f64,
    /// `E_n + D_n − W_n` when balance tracking is on.
    pub balance: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct Trajectory<T> {
    pub dt: f64,
    pub n_steps: usize,
    /// Last step reached (`n_steps` unless a blow-up stopped the run).
    pub steps_completed: usize,
    pub blowup: Option<usize>,
    pub final_u: Vec<T>,
    pub previous_u: Vec<T>,
    pub snapshots: Vec<(usize, Vec<T>)>,
    pub energy: Vec<EnergySample>,
    pub initial_norms: (f64, f64),
    pub cfl: Option<CflVerdict>,
    pub wall_seconds: f64,
}

impl<T: Scalar> Trajectory<T> {
    pub fn final_time(&self) -> f64 {
        self.steps_completed as f64 * self.dt
    }

    pub fn completed(&self) -> bool {
        self.blowup.is_none() && self.steps_completed == self.n_steps
    }
}

fn m_norm_sq<T: Scalar>(m: &CsrMatrix<T>, x: &[T], buf: &mut [T]) -> f64 {
    m.mul_vec_into(x, buf);
    dot(x, buf).as_f64()
}

/// Runs the leapfrog scheme from `(u⁰, u¹)` up to `T`.
pub fn leapfrog_solve<T: Scalar>(
    space: &GalerkinSpace<T>,
    problem: &QgdProblem,
    config: &LeapfrogConfig,
    start: (Vec<T>, Vec<T>),
) -> Result<Trajectory<T>, QgdError> {
    let clock = Instant::now();
    if !(problem.alpha > 0.0) {
        return Err(QgdError::NonPositiveAlpha(problem.alpha));
    }
    let n_steps = config.n_steps(problem.t_final)?;
    let n = space.dim();
    let (mut prev, mut cur) = start;
    if prev.len() != n || cur.len() != n {
        return Err(QgdError::Dimension { expected: n, found: prev.len().min(cur.len()) });
    }
    let cfl = match space.stability {
        Some(s) => {
            let v = check_cfl(problem.alpha, s.beta, s.c_inv, s.h, config.dt, config.cfl_delta);
            if !v.pass && !config.allow_unstable {
                return Err(QgdError::CflRefused { slack: v.slack, delta: v.delta });
            }
            Some(v)
        }
        None if config.allow_unstable => None,
        None => return Err(QgdError::StabilityUnknown),
    };

    let dt = config.dt;
    let alpha = problem.alpha;
    let (dt2, two_alpha, c_prev, inv_lead) = (
        T::lit(dt * dt),
        T::lit(2.0 * alpha),
        T::lit(0.5 * dt - alpha),
        T::one() / T::lit(alpha + 0.5 * dt),
    );
    let loads = Loads::new(space, &problem.source)?;
    let norm = |v: &[T]| dot(v, v).as_f64().sqrt();
    let initial_norms = (norm(&prev), norm(&cur));
    let threshold = config.blowup_threshold.unwrap_or(1e12 * (1.0 + initial_norms.1));

    let mut b = vec![T::zero(); n];
    let mut au = vec![T::zero(); n];
    let mut buf = vec![T::zero(); n];
    let mut diff = vec![T::zero(); n];
    let mut next = vec![T::zero(); n];
    let mut energy = Vec::new();
    let mut snapshots = Vec::new();
    let (mut dissipated, mut work) = (0.0f64, 0.0f64);
    let energy_at = |u: &[T], um: &[T], au: &[T], buf: &mut [T], diff: &mut [T]| {
        for i in 0..n {
            diff[i] = u[i] - um[i];
        }
        let kinetic = m_norm_sq(&space.m, diff, buf) / (dt * dt);
        0.5 * (alpha * kinetic + dot(um, au).as_f64())
    };
    let wants_record = |step: usize| config.energy_stride > 0 && (step == 1 || step % config.energy_stride == 0);
    let mut blowup = None;
    let mut steps_completed = 1;
    if config.snapshot_stride > 0 {
        snapshots.push((0, prev.clone()));
        if config.snapshot_stride == 1 {
            snapshots.push((1, cur.clone()));
        }
    }

    for step in 1..n_steps {
        space.a.mul_vec_into(&cur, &mut au);
        if wants_record(step) {
            let e = energy_at(&cur, &prev, &au, &mut buf, &mut diff);
            let balance = config.track_balance.then_some(e + dissipated - work);
            energy.push(EnergySample { step, time: step as f64 * dt, energy: e, balance });
        }
        loads.at(space, step as f64 * dt, &mut b);
        for i in 0..n {
            buf[i] = b[i] - au[i];
        }
        space.m_factor.solve_in_place(&mut buf);
        for i in 0..n {
            next[i] = (dt2 * buf[i] + two_alpha * cur[i] + c_prev * prev[i]) * inv_lead;
        }
        if config.track_balance {
            for i in 0..n {
                diff[i] = next[i] - prev[i];
            }
            dissipated += m_norm_sq(&space.m, &diff, &mut buf) / (4.0 * dt);
            work += 0.5 * dot(&b, &diff).as_f64();
        }
        std::mem::swap(&mut prev, &mut cur);
        std::mem::swap(&mut cur, &mut next);
        steps_completed = step + 1;
        let nrm = norm(&cur);
        if !nrm.is_finite() || nrm > threshold {
            blowup = Some(step + 1);
            break;
        }
        if config.snapshot_stride > 0 && (step + 1) % config.snapshot_stride == 0 {
            snapshots.push((step + 1, cur.clone()));
        }
    }
    if blowup.is_none() && config.energy_stride > 0 {
        space.a.mul_vec_into(&cur, &mut au);
        let e = energy_at(&cur, &prev, &au, &mut buf, &mut diff);
        let balance = config.track_balance.then_some(e + dissipated - work);
        energy.push(EnergySample { step: n_steps, time: problem.t_final, energy: e, balance });
    }
    Ok(Trajectory {
        dt,
        n_steps,
        steps_completed,
        blowup,
        final_u: cur,
        previous_u: prev,
        snapshots,
        energy,
        initial_norms,
        cfl,
        wall_seconds: clock.elapsed().as_secs_f64(),
    })
}

/// Fine-grid reference run.
pub fn reference_solve(
    hier: &GridHierarchy,
    field: &PermeabilityField,
    problem: &QgdProblem,
    config: &LeapfrogConfig,
    policy: InitPolicy,
) -> Result<(GalerkinSpace<f64>, Trajectory<f64>), QgdError> {
    let mut space = GalerkinSpace::<f64>::fine(hier, field, MassSolver::Kronecker)?;
    if !config.allow_unstable {
        space.compute_stability(field.beta(), hier.fine.h())?;
    }
    let start = init_steps(problem, &space, policy, config.dt)?;
    let traj = leapfrog_solve(&space, problem, config, start)?;
    Ok((space, traj))
}
