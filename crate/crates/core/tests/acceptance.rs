//! Acceptance run: one PASS/FAIL line per criterion, nonzero exit on failure.
//!
//! `QGD_ACCEPTANCE_FULL=1` switches criteria 2, 8 and 9 to full fidelity
//! (`T = 4`); `QGD_ACCEPTANCE_ONLY=1,4,7` restricts the run.

use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Instant;

use qgd_core::analysis::{
    build_level, cfl_boundary_scan, compute_errors, fmt_sci, reference_runs, run_cell, run_convergence_study, ErrorNorms,
    StudyLevel, StudyRow, StudySpec,
};
use qgd_core::cem::{build_auxiliary_space, build_multiscale_basis, measure_decay};
use qgd_core::coefficient::{generate_channels, ChannelLayout, PermeabilityField};
use qgd_core::fem::{assemble_stiffness, build_partition_of_unity, PouKind};
use qgd_core::grid::{build_hierarchy, DofMap};
use qgd_core::linalg::CsrMatrix;
use qgd_core::qgd::{
    check_cfl, init_steps, leapfrog_solve, GalerkinSpace, InitPolicy, LeapfrogConfig, MassSolver, QgdProblem, Source,
    SpatialProfile, TemporalProfile,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

const ROWS: [StudyRow; 3] = [StudyRow { coarse: 5, m: 3 }, StudyRow { coarse: 10, m: 4 }, StudyRow { coarse: 20, m: 6 }];

struct Settings {
    full: bool,
}

impl Settings {
    /// `(Δt, T)` of the static-source sweep.
    fn static_run(&self) -> (f64, f64) {
        if self.full {
            (1e-5, 4.0)
        } else {
            (2.5e-5, 0.5)
        }
    }

    fn time_run(&self) -> (f64, f64) {
        if self.full {
            (1e-5, 4.0)
        } else {
            (2.5e-5, 1.0)
        }
    }

    /// α = 0.01 needs Δt below 9.1e-6 on the fine grid.
    fn small_alpha_run(&self) -> (f64, f64) {
        if self.full {
            (8e-6, 4.0)
        } else {
            (8e-6, 0.5)
        }
    }
}

fn reference_field() -> PermeabilityField {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/reference_field_100x100.txt");
    PermeabilityField::load_raster(path).expect("committed reference field")
}

fn channel_field(n: usize) -> PermeabilityField {
    generate_channels(n, n, 1.0, 1e3, ChannelLayout::default()).unwrap()
}

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn e(r: impl std::fmt::Display) -> String {
    r.to_string()
}

fn energy_conservation() -> Outcome {
    let field = channel_field(40);
    let hier = build_hierarchy(40, 40, 5, 5).map_err(e)?;
    let pou = build_partition_of_unity(&hier, &field, PouKind::Bilinear).map_err(e)?;
    let aux = build_auxiliary_space(&hier, &field, &pou, 3).map_err(e)?;
    let basis = build_multiscale_basis(&hier, &field, &aux, 2).map_err(e)?;
    let space = GalerkinSpace::<f64>::from_basis(&hier, &field, &basis).map_err(e)?.with_stability(field.beta(), hier.coarse.h()).map_err(e)?;
    let alpha = 0.1;
    let stab = space.stability.unwrap();
    let dt = 0.5 * check_cfl(alpha, stab.beta, stab.c_inv, stab.h, 1.0, 0.0).dt_max;
    let steps = 10_000;
    let problem = QgdProblem::new(alpha, Source::zero(), steps as f64 * dt);
    let mut config = LeapfrogConfig::new(dt);
    config.energy_stride = 1;
    config.track_balance = true;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let u0: Vec<f64> = (0..space.dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let traj = leapfrog_solve(&space, &problem, &config, (u0.clone(), u0)).map_err(e)?;
    if !traj.completed() || traj.n_steps != steps {
        return Err(format!("run incomplete: {} of {steps} steps", traj.steps_completed));
    }
    let first = traj.energy[0];
    let b0 = first.balance.unwrap();
    let scale = first.energy.abs().max(1.0);
    let drift = traj.energy.iter().map(|s| (s.balance.unwrap() - b0).abs()).fold(0.0, f64::max) / scale;
    let decay = traj.energy.last().unwrap().energy / first.energy;
    check(drift <= 1e-10, format!("max relative drift of E+D {} over {steps} steps (raw E ratio {})", fmt_sci(drift), fmt_sci(decay)))
}

fn spatial_trend(levels: &[StudyLevel], field: &PermeabilityField, s: &Settings, source: &str, target: [f64; 3], min_ratio: f64) -> Outcome {
    let (dt, t) = if source == "static_sine" { s.static_run() } else { s.time_run() };
    let alpha = 0.1;
    let src = Source::named(source).map_err(e)?;
    let refs = reference_runs(field, 100, 100, &[alpha], &src, dt, t, InitPolicy::Zero, None, false).map_err(e)?;
    let reference = refs.finals[0].as_ref().map_err(|f| f.message.clone())?;
    let mut ea = Vec::new();
    for level in levels {
        let (report, _) = run_cell(level, reference, alpha, &src, dt, t, InitPolicy::Zero, 0.0, false).map_err(e)?;
        ea.push(report.e_a);
    }
    let ratios: Vec<f64> = ea.windows(2).map(|w| w[0] / w[1]).collect();
    let decreasing = ea.windows(2).all(|w| w[1] < w[0]);
    let ratio_ok = ratios.iter().all(|&r| r >= min_ratio);
    let magnitude_ok = ea.iter().zip(target).all(|(&x, p)| x / p <= 10.0 && p / x <= 10.0);
    let fmt = |v: &[f64]| v.iter().map(|&x| fmt_sci(x)).collect::<Vec<_>>().join(" ");
    let detail = format!(
        "dt={} T={} e_a=[{}] ratios=[{}] (need >= {min_ratio}) target=[{}] decreasing={decreasing} ratio_ok={ratio_ok} within_10x={magnitude_ok}",
        fmt_sci(dt),
        fmt_sci(t),
        fmt(&ea),
        fmt(&ratios),
        fmt(&target)
    );
    check(decreasing && ratio_ok && magnitude_ok, detail)
}

fn fine_equivalence() -> Outcome {
    let field = channel_field(40);
    let hier = build_hierarchy(40, 40, 5, 5).map_err(e)?;
    let fine = GalerkinSpace::<f64>::fine(&hier, &field, MassSolver::Skyline).map_err(e)?.with_stability(field.beta(), hier.fine.h()).map_err(e)?;
    let n = fine.dim();
    let identity = CsrMatrix::from_triplets(n, n, (0..n).map(|i| (i, i, 1.0)).collect());
    let reduced = GalerkinSpace::<f64>::from_prolongation(
        hier.fine.clone(),
        identity,
        fine.fine_stiffness().clone(),
        fine.fine_mass().clone(),
        fine.fine_stiffness().clone(),
        fine.fine_mass().clone(),
    )
    .map_err(e)?
    .with_stability(field.beta(), hier.fine.h())
    .map_err(e)?;
    let problem = QgdProblem::new(0.1, Source::named("time_sine").map_err(e)?, 0.02);
    let mut config = LeapfrogConfig::new(1e-5);
    config.snapshot_stride = 50;
    config.track_balance = true;
    let run = |space: &GalerkinSpace<f64>| {
        let start = init_steps(&problem, space, InitPolicy::EllipticTaylor, config.dt)?;
        leapfrog_solve(space, &problem, &config, start)
    };
    let (a, b) = (run(&fine).map_err(e)?, run(&reduced).map_err(e)?);
    let bitwise = a.snapshots == b.snapshots && a.final_u == b.final_u && a.energy == b.energy && a.snapshots.len() > 2;
    let pou = build_partition_of_unity(&hier, &field, PouKind::Bilinear).map_err(e)?;
    let norms = ErrorNorms::new(&hier, &pou.kappa_tilde, fine.fine_stiffness().clone()).map_err(e)?;
    let r = compute_errors(&b, &reduced, &a, &norms).map_err(e)?;
    let zero = r.e_a <= 1e-12 && r.e_l2 <= 1e-12;
    check(
        bitwise && zero,
        format!("{} snapshots bit-identical={bitwise} e_a={} e_l2={}", a.snapshots.len(), fmt_sci(r.e_a), fmt_sci(r.e_l2)),
    )
}

fn localization_decay() -> Outcome {
    let field = channel_field(40);
    let hier = build_hierarchy(40, 40, 5, 5).map_err(e)?;
    let pou = build_partition_of_unity(&hier, &field, PouKind::Bilinear).map_err(e)?;
    let aux = build_auxiliary_space(&hier, &field, &pou, 2).map_err(e)?;
    let m_list = [0, 1, 2, 3];
    let report = measure_decay(&hier, &field, &aux, &m_list).map_err(e)?;
    let full = hier.full_block();
    let mut violations = Vec::new();
    let mut saturated = 0;
    for (col, (element, _)) in aux.columns().into_iter().enumerate() {
        for k in 0..m_list.len() - 1 {
            let (g0, g1) = (report.gaps[k][col], report.gaps[k + 1][col]);
            // a patch covering Ω reproduces the global column, so nothing is left to decay
            if hier.oversample_block(element, m_list[k]) == full {
                saturated += 1;
                if g0 > 1e-12 || g1 > 1e-12 {
                    violations.push(format!("col {col} saturated at m={} but gap {}", m_list[k], fmt_sci(g0.max(g1))));
                }
            } else if !(g1 < g0) {
                violations.push(format!("col {col}: m={} {} -> {}", m_list[k], fmt_sci(g0), fmt_sci(g1)));
            }
        }
    }
    let max_gaps: Vec<String> = (0..m_list.len()).map(|k| fmt_sci(report.max_gap(k))).collect();
    let detail = format!(
        "{} columns, max gap per m=[{}] slope={} saturated pairs={saturated} violations={:?}",
        aux.dim(),
        max_gaps.join(" "),
        fmt_sci(report.slope),
        violations.iter().take(3).collect::<Vec<_>>()
    );
    check(violations.is_empty() && report.slope < 0.0, detail)
}

fn eigenstructure(levels: &[StudyLevel], field: &PermeabilityField) -> Outcome {
    let (mut worst_orth, mut worst_rayleigh, mut elements) = (0.0f64, 0.0f64, 0);
    let mut ascending = true;
    for level in levels {
        let hier = &level.hier;
        for el in &level.aux.elements {
            elements += 1;
            ascending &= el.eigenvalues.windows(2).all(|w| w[0] <= w[1]);
            let map = DofMap::new(hier.fine.num_nodes(), el.dofs.clone());
            let cells = hier.element_cells(el.element);
            let a = assemble_stiffness::<f64>(&hier.fine, field, &map, Some(&cells)).map_err(e)?.matrix;
            let scale = el.eigenvalues[el.ell()].max(1.0);
            for j in 0..el.ell() {
                for k in 0..el.ell() {
                    let s: f64 = el.vectors[k].iter().zip(&el.s_vectors[j]).map(|(x, y)| x * y).sum();
                    worst_orth = worst_orth.max((s - if j == k { 1.0 } else { 0.0 }).abs());
                    let expect = if j == k { el.eigenvalues[j] } else { 0.0 };
                    worst_rayleigh = worst_rayleigh.max((a.bilinear(&el.vectors[j], &el.vectors[k]) - expect).abs() / scale);
                }
            }
        }
    }
    check(
        ascending && worst_orth <= 1e-10 && worst_rayleigh <= 1e-8,
        format!("{elements} elements ascending={ascending} s-orthonormality {} Rayleigh {}", fmt_sci(worst_orth), fmt_sci(worst_rayleigh)),
    )
}

fn time_order() -> Outcome {
    let hier = build_hierarchy(16, 16, 1, 1).map_err(e)?;
    let field = PermeabilityField::homogeneous(16, 16, 1.0).map_err(e)?;
    let space = GalerkinSpace::<f64>::fine(&hier, &field, MassSolver::Kronecker).map_err(e)?.with_stability(1.0, hier.fine.h()).map_err(e)?;
    let source = Source::Separable {
        name: "sin2t".into(),
        terms: vec![(SpatialProfile::SineProduct, TemporalProfile::Custom(Arc::new(|t: f64| (2.0 * t).sin())))],
    };
    let problem = QgdProblem::new(0.1, source, 1.0);
    let run = |dt: f64| -> Result<Vec<f64>, String> {
        let mut config = LeapfrogConfig::new(dt);
        config.energy_stride = 0;
        let start = init_steps(&problem, &space, InitPolicy::EllipticTaylor, dt).map_err(e)?;
        Ok(leapfrog_solve(&space, &problem, &config, start).map_err(e)?.final_u)
    };
    let u: Vec<Vec<f64>> = [4e-3, 2e-3, 1e-3].iter().map(|&dt| run(dt)).collect::<Result<_, _>>()?;
    let a = space.fine_stiffness();
    let dist = |x: &[f64], y: &[f64]| a.quadratic(&x.iter().zip(y).map(|(p, q)| p - q).collect::<Vec<_>>()).sqrt();
    let (d1, d2) = (dist(&u[0], &u[1]), dist(&u[1], &u[2]));
    let order = (d1 / d2).log2();
    check(order >= 1.9, format!("successive differences {} {} observed order {order:.3}", fmt_sci(d1), fmt_sci(d2)))
}

fn cfl_sharpness() -> Outcome {
    let field = PermeabilityField::homogeneous(20, 20, 1.0).map_err(e)?;
    let hier = build_hierarchy(20, 20, 4, 4).map_err(e)?;
    let pou = build_partition_of_unity(&hier, &field, PouKind::Bilinear).map_err(e)?;
    let aux = build_auxiliary_space(&hier, &field, &pou, 3).map_err(e)?;
    let basis = build_multiscale_basis(&hier, &field, &aux, 2).map_err(e)?;
    let space = GalerkinSpace::<f64>::from_basis(&hier, &field, &basis).map_err(e)?.with_stability(1.0, hier.coarse.h()).map_err(e)?;
    let problem = QgdProblem::new(0.01, Source::named("static_sine").map_err(e)?, 2.0);
    let start = (vec![0.0; space.dim()], vec![0.0; space.dim()]);
    let stab = space.stability.unwrap();
    let predicted = check_cfl(problem.alpha, stab.beta, stab.c_inv, stab.h, 1.0, 0.0).dt_max;
    let dt_list: Vec<f64> = (-8..=8).map(|k| predicted * 2f64.powf(k as f64 / 4.0)).chain([10.0 * predicted]).collect();
    let report = cfl_boundary_scan(&problem, &space, &start, &dt_list, 2.0).map_err(e)?;
    let ratio = report.ratio().ok_or("no stable/unstable transition in the scan")?;
    let at_ten = report.entries.last().unwrap();
    check(
        (0.25..=4.0).contains(&ratio) && !at_ten.stable && at_ten.blowup_step.is_some(),
        format!(
            "C_inv_emp={} predicted={} empirical={} ratio={ratio:.3} blow-up at 10x: step {:?}",
            fmt_sci(report.c_inv_emp),
            fmt_sci(report.predicted),
            fmt_sci(report.empirical_critical.unwrap()),
            at_ten.blowup_step
        ),
    )
}

fn alpha_insensitivity(level: &StudyLevel, field: &PermeabilityField, s: &Settings) -> Outcome {
    let (dt, t) = s.small_alpha_run();
    let alphas = [0.1, 0.05, 0.01];
    let src = Source::named("static_sine").map_err(e)?;
    let refs = reference_runs(field, 100, 100, &alphas, &src, dt, t, InitPolicy::Zero, None, false).map_err(e)?;
    let mut ea = Vec::new();
    for (k, &alpha) in alphas.iter().enumerate() {
        let reference = refs.finals[k].as_ref().map_err(|f| f.message.clone())?;
        ea.push(run_cell(level, reference, alpha, &src, dt, t, InitPolicy::Zero, 0.0, false).map_err(e)?.0.e_a);
    }
    let (lo, hi) = ea.iter().fold((f64::INFINITY, 0.0f64), |(l, h), &x| (l.min(x), h.max(x)));
    let spread = (hi - lo) / lo;
    check(
        spread <= 0.05,
        format!("dt={} T={} e_a=[{}] spread {:.2}%", fmt_sci(dt), fmt_sci(t), ea.iter().map(|&x| fmt_sci(x)).collect::<Vec<_>>().join(" "), 100.0 * spread),
    )
}

fn reproducibility() -> Outcome {
    let field = channel_field(20);
    let spec = StudySpec {
        nx: 20,
        ny: 20,
        rows: vec![StudyRow { coarse: 2, m: 1 }, StudyRow { coarse: 4, m: 2 }],
        alphas: vec![0.5, 0.1],
        source: "time_sine".into(),
        dt: 2e-5,
        t_final: 0.01,
        ell: 2,
        pou: PouKind::Bilinear,
        init: InitPolicy::Zero,
        cfl_delta: 0.0,
        allow_unstable: false,
        max_cells: None,
        record_timing: false,
    };
    let run = |threads: usize| -> Result<String, String> {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().map_err(e)?;
        pool.install(|| run_convergence_study(&spec, &field, None)).map(|t| t.to_csv()).map_err(e)
    };
    let csvs = [run(1)?, run(1)?, run(3)?];
    let same = csvs.iter().all(|c| c == &csvs[0]);
    let complete = !csvs[0].contains("nan") && csvs[0].lines().count() == 5;
    check(same && complete, format!("{} data rows, identical across runs and thread counts: {same}", csvs[0].lines().count() - 1))
}

fn main() -> ExitCode {
    let settings = Settings { full: std::env::var("QGD_ACCEPTANCE_FULL").is_ok_and(|v| v == "1") };
    let only: Option<Vec<usize>> =
        std::env::var("QGD_ACCEPTANCE_ONLY").ok().map(|v| v.split(',').filter_map(|s| s.trim().parse().ok()).collect());
    let wanted = |k: usize| only.as_ref().is_none_or(|o| o.contains(&k));
    println!("acceptance ({} mode)", if settings.full { "full-fidelity" } else { "fast" });

    let needs_levels = [2, 5, 8, 9].iter().any(|&k| wanted(k));
    let field = reference_field();
    let clock = Instant::now();
    let levels: Vec<StudyLevel> = if needs_levels {
        match ROWS.iter().map(|&row| build_level(&field, 100, 100, row, 3, PouKind::Bilinear)).collect::<Result<Vec<_>, _>>() {
            Ok(l) => l,
            Err(err) => {
                println!("FAIL: could not build the multiscale levels: {err}");
                return ExitCode::FAILURE;
            }
        }
    } else {
        Vec::new()
    };
    if needs_levels {
        println!("  levels built in {:.1}s", clock.elapsed().as_secs_f64());
    }

    let mut failed = 0;
    let criteria: [(usize, &str, Box<dyn Fn() -> Outcome + '_>); 10] = [
        (1, "energy conservation", Box::new(energy_conservation)),
        (2, "spatial convergence (static source)", Box::new(|| spatial_trend(&levels, &field, &settings, "static_sine", [8.53e-3, 6.84e-4, 5.08e-5], 4.0))),
        (3, "fine-space equivalence", Box::new(fine_equivalence)),
        (4, "localization decay", Box::new(localization_decay)),
        (5, "eigenstructure", Box::new(|| eigenstructure(&levels, &field))),
        (6, "time order", Box::new(time_order)),
        (7, "CFL sharpness", Box::new(cfl_sharpness)),
        (8, "alpha insensitivity", Box::new(|| alpha_insensitivity(&levels[1], &field, &settings))),
        (9, "spatial convergence (time-dependent source)", Box::new(|| spatial_trend(&levels, &field, &settings, "time_sine", [0.8304, 0.0558, 0.0048], 5.0))),
        (10, "reproducibility", Box::new(reproducibility)),
    ];
    for (k, name, run) in criteria.iter() {
        if !wanted(*k) {
            continue;
        }
        let clock = Instant::now();
        let outcome = run();
        let secs = clock.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {k} ({name}): PASS [{secs:.1}s] {detail}"),
            Err(detail) => {
                failed += 1;
                println!("criterion {k} ({name}): FAIL [{secs:.1}s] {detail}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    } else {
        println!("all criteria passed");
        ExitCode::SUCCESS
    }
}
