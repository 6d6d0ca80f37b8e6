//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero if any fails.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use branchpde::branching::{birth_death, BranchLimits, ConstantRate};
use branchpde::config::{resolve, Resolved, RunConfig};
use branchpde::harness::{execute, run_convergence, ConvergenceConfig, RunKind};
use branchpde::metrics::{exact_mass_case2, rel_l2_grid};
use branchpde::record::RunRecord;
use branchpde::spectral::{basis_eval, mode_at, mode_count, ModeIndex};
use branchpde::{Error, GridField, ParticleSet, SpectralField, TorusDomain};

type Outcome = Result<(bool, String), Error>;
type Criterion = (&'static str, fn() -> Outcome);

fn config_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/configs").join(name)
}

fn load(name: &str, over: RunConfig) -> Resolved {
    let cfg = RunConfig::load(&config_path(name)).expect("config loads");
    resolve(&cfg.merged(&over)).expect("config resolves")
}

fn final_grid(record: &RunRecord, field: &str, n: usize) -> Result<GridField, Error> {
    let snap = record
        .final_snapshot()
        .ok_or_else(|| Error::InvalidArgument("run has no snapshots".into()))?;
    snap.field(field)
        .ok_or_else(|| Error::InvalidArgument(format!("no `{field}` in final snapshot")))?
        .on_grid(n)
}

fn uniform_set(rng: &mut ChaCha8Rng, n: usize) -> ParticleSet {
    let dom = TorusDomain::standard(2);
    let side = dom.side();
    let pos = (0..2 * n).map(|_| rng.random::<f64>() * side).collect();
    ParticleSet::new(dom, pos, n).unwrap()
}

fn branching_unbiased() -> Outcome {
    let (size, seeds, tau) = (100_000usize, 64u64, 0.1);
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let set = uniform_set(&mut rng, size);
    let limits = BranchLimits::default();
    let total = (size as f64) * seeds as f64;

    let mut grown = 0usize;
    let mut survived = 0usize;
    for seed in 0..seeds {
        grown += birth_death(&set, tau, &ConstantRate(1.0), 0, seed, 0, &limits)?.0.len();
        survived += birth_death(&set, tau, &ConstantRate(-1.0), 0, seed, 0, &limits)?
            .0
            .len();
    }
    let growth = grown as f64 / total;
    let want_g = (0.1f64).exp();
    let band_g = 5.0 * (want_g - 1.0).sqrt() / total.sqrt();
    let survival = survived as f64 / total;
    let p = (-0.1f64).exp();
    let band_s = 5.0 * (p * (1.0 - p)).sqrt() / total.sqrt();
    let ok = (growth - want_g).abs() <= band_g && (survival - p).abs() <= band_s;
    Ok((
        ok,
        format!(
            "multiplier {growth:.6} vs {want_g:.6} (band {band_g:.2e}); survival {survival:.6} vs {p:.6} (band {band_s:.2e})"
        ),
    ))
}

fn count_invariance() -> Outcome {
    let r = load("ks_linear_count.json", RunConfig::default());
    let rec = execute(RunKind::Ks, &r)?;
    let n = r.solver.n;
    let bad = rec.series.iter().filter(|row| row.count_u != n).count();
    let ok = rec.status.is_completed() && bad == 0 && rec.series.len() == r.solver.step_count() + 1;
    Ok((ok, format!("{} steps, {bad} with |S_u| != {n}", rec.series.len() - 1)))
}

fn mass_ode() -> Outcome {
    let seeds = [21u64, 22, 23, 24];
    let mut sums: Vec<(f64, f64)> = Vec::new();
    for &seed in &seeds {
        let r = load(
            "ks_linear_mass.json",
            RunConfig {
                seed: Some(seed),
                ..Default::default()
            },
        );
        let rec = execute(RunKind::Ks, &r)?;
        if !rec.status.is_completed() {
            return Ok((false, format!("seed {seed} failed: {:?}", rec.status)));
        }
        if sums.is_empty() {
            sums = rec.series.iter().map(|row| (row.t, 0.0)).collect();
        }
        for (acc, row) in sums.iter_mut().zip(&rec.series) {
            acc.1 += row.mass_v / seeds.len() as f64;
        }
    }
    let (worst_t, worst) = sums
        .iter()
        .map(|&(t, m)| (t, (m - exact_mass_case2(t)).abs() / exact_mass_case2(t)))
        .fold((0.0, 0.0), |a, b| if b.1 > a.1 { b } else { a });
    Ok((
        worst <= 0.03,
        format!(
            "max relative error {worst:.4e} at t = {worst_t:.3} over {} times",
            sums.len()
        ),
    ))
}

fn convergence_rate() -> Outcome {
    let text = std::fs::read_to_string(config_path("ks_linear_convergence.json")).unwrap();
    let cfg: ConvergenceConfig = serde_json::from_str(&text).unwrap();
    let report = run_convergence(&cfg, None)?;
    let errors: Vec<String> = report.rows.iter().map(|r| format!("{}:{:.4}", r.n, r.error)).collect();
    let s = report.fit.slope;
    Ok((
        (-0.65..=-0.35).contains(&s),
        format!(
            "slope {s:.4} (residual {:.3}); errors {}",
            report.fit.residual,
            errors.join(" ")
        ),
    ))
}

fn allen_cahn_vs_fd() -> Outcome {
    let r = load("allen_cahn.json", RunConfig::default());
    let particles = execute(RunKind::Scalar, &r)?;
    let fd = execute(RunKind::Fd, &r)?;
    if !particles.status.is_completed() || !fd.status.is_completed() {
        return Ok((false, "a run did not complete".into()));
    }
    let n = r.solver.grid;
    let err = rel_l2_grid(&final_grid(&particles, "u", n)?, &final_grid(&fd, "u", n)?)?;
    Ok((
        err <= 0.05,
        format!("rel L2 at t = {} is {err:.4e} (n = {n})", r.solver.t_end),
    ))
}

fn blowup_robustness() -> Outcome {
    let r = load("ks_blowup.json", RunConfig::default());
    let rec = execute(RunKind::Ks, &r)?;
    let n = r.solver.n;
    let constant = rec.series.iter().all(|row| row.count_u == n);
    let finite = rec
        .series
        .iter()
        .all(|row| row.mass_u.is_finite() && row.mass_v.is_finite());
    let completed = rec.status.is_completed();

    let grid = 200;
    let early = |over: RunConfig| load("ks_blowup_early.json", over);
    let small = execute(
        RunKind::Ks,
        &early(RunConfig {
            n: Some(40_000),
            ..Default::default()
        }),
    )?;
    let large = execute(
        RunKind::Ks,
        &early(RunConfig {
            n: Some(160_000),
            ..Default::default()
        }),
    )?;
    let coarse = execute(
        RunKind::Fd,
        &early(RunConfig {
            grid: Some(200),
            ..Default::default()
        }),
    )?;
    let fine = execute(
        RunKind::Fd,
        &early(RunConfig {
            grid: Some(400),
            ..Default::default()
        }),
    )?;
    let particle_gap = rel_l2_grid(&final_grid(&small, "u", grid)?, &final_grid(&large, "u", grid)?)?;
    let fd_gap = rel_l2_grid(
        &final_grid(&coarse, "u", grid)?,
        &final_grid(&fine, "u", 400)?.restrict(2)?,
    )?;
    let ok = completed && constant && finite && fd_gap >= 10.0 * particle_gap;
    Ok((
        ok,
        format!(
            "completed {completed}, |S_u| constant {constant}; at t = 5e-5 FD 200/400 gap {fd_gap:.4e} vs particle 4e4/1.6e5 gap {particle_gap:.4e} (ratio {:.1})",
            fd_gap / particle_gap
        ),
    ))
}

fn spectral_properties() -> Outcome {
    let dom = TorusDomain::standard(2);
    let mut notes = Vec::new();
    let mut ok = true;

    let order = 4;
    let q = 4 * order + 2;
    let pts = dom.uniform_grid(q)?;
    let cell = dom.grid_spacing(q).powi(2);
    let modes: Vec<ModeIndex> = (0..mode_count(2, order)).map(|i| mode_at(i, 2, order)).collect();
    let vals: Vec<Vec<f64>> = modes
        .iter()
        .map(|m| pts.chunks(2).map(|x| basis_eval(&dom, m, x)).collect())
        .collect();
    let mut gram_err: f64 = 0.0;
    for (i, a) in vals.iter().enumerate() {
        for (j, b) in vals.iter().enumerate() {
            let g: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() * cell;
            gram_err = gram_err.max((g - if i == j { 1.0 } else { 0.0 }).abs());
        }
    }
    ok &= gram_err <= 1e-12;
    notes.push(format!("gram {gram_err:.1e}"));

    let n = 200_000;
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let set = uniform_set(&mut rng, n);
    let field = SpectralField::project_particles(dom, 6, set.positions(), n)?;
    let sd = 1.0 / (2.0 * std::f64::consts::PI * (n as f64).sqrt());
    let worst_z = field
        .coeffs()
        .iter()
        .enumerate()
        .filter(|&(i, _)| mode_at(i, 2, 6).norm_sq() != 0)
        .map(|(_, a)| a.abs() / sd)
        .fold(0.0, f64::max);
    ok &= worst_z <= 5.0;
    notes.push(format!("unbiased max |z| {worst_z:.2}"));

    let half = ParticleSet::new(dom, set.positions()[..n].to_vec(), n)?;
    let projected = SpectralField::project_particles(dom, 6, half.positions(), n)?;
    let mass_err = (projected.mass() - half.len() as f64 / n as f64).abs();
    ok &= mass_err <= 1e-12;
    notes.push(format!("mass {mass_err:.1e}"));

    let coeffs = (0..mode_count(2, 5)).map(|_| rng.random::<f64>() - 0.5).collect();
    let f = SpectralField::from_coeffs(dom, 5, coeffs)?;
    let h = 1e-5;
    let mut grad_err: f64 = 0.0;
    for _ in 0..50 {
        let x = [rng.random::<f64>() * dom.side(), rng.random::<f64>() * dom.side()];
        let g = f.gradient(&x);
        for k in 0..2 {
            let (mut xp, mut xm) = (x, x);
            xp[k] += h;
            xm[k] -= h;
            let fdg = (f.evaluate(&xp) - f.evaluate(&xm)) / (2.0 * h);
            let scale = g.iter().map(|v| v.abs()).fold(1.0, f64::max);
            grad_err = grad_err.max((g[k] - fdg).abs() / scale);
        }
    }
    ok &= grad_err <= 1e-6;
    notes.push(format!("gradient {grad_err:.1e}"));

    let mut single = SpectralField::zeros(dom, 3);
    single.set_coeff(&ModeIndex(vec![1, 0]), 1.0)?;
    let sob_err = [0.5, 1.0, 2.0, 3.5]
        .iter()
        .map(|&s| (single.sobolev_norm_sq(s) - 2f64.powf(-s)).abs())
        .fold(0.0, f64::max);
    ok &= sob_err <= 1e-15;
    notes.push(format!("H^-s {sob_err:.1e}"));

    Ok((ok, notes.join(", ")))
}

fn determinism() -> Outcome {
    let max = std::thread::available_parallelism().map_or(1, |n| n.get());
    let mut counts = vec![1, 2, max];
    counts.sort_unstable();
    counts.dedup();
    let mut notes = Vec::new();
    let mut ok = true;
    for (name, kind) in [
        ("determinism.json", RunKind::Ks),
        ("determinism_scalar.json", RunKind::Scalar),
        ("determinism_scalar.json", RunKind::Fd),
    ] {
        let r = load(name, RunConfig::default());
        let mut outputs = Vec::new();
        for &t in &counts {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(t).build().unwrap();
            let rec = pool.install(|| execute(kind, &r))?;
            outputs.push(rec.series_csv());
        }
        let same = outputs.windows(2).all(|w| w[0] == w[1]);
        ok &= same;
        notes.push(format!(
            "{} {}",
            kind.label(),
            if same { "identical" } else { "differs" }
        ));
    }
    Ok((ok, format!("threads {counts:?}: {}", notes.join(", "))))
}

fn main() -> ExitCode {
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let criteria: [Criterion; 8] = [
        ("1 branching unbiasedness", branching_unbiased),
        ("2 count invariance", count_invariance),
        ("3 mass ODE", mass_ode),
        ("4 convergence rate", convergence_rate),
        ("5 allen-cahn vs fd", allen_cahn_vs_fd),
        ("6 blow-up robustness", blowup_robustness),
        ("7 spectral properties", spectral_properties),
        ("8 determinism", determinism),
    ];
    let mut failed = 0;
    for (name, run) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let t0 = Instant::now();
        let (ok, detail) = match run() {
            Ok(v) => v,
            Err(e) => (false, format!("error: {e}")),
        };
        let secs = t0.elapsed().as_secs_f64();
        println!(
            "{} criterion {name}: {detail} [{secs:.1} s]",
            if ok { "PASS" } else { "FAIL" }
        );
        failed += usize::from(!ok);
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
