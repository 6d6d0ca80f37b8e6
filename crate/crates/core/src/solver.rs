//! Lie–Trotter particle drivers for the scalar equation and the
//! Keller–Segel system.
//!
//! Each step runs transport, re-projection, branching and a final
//! re-projection. Fields carried between steps are probability densities
//! `ρ̃`; snapshots store the physical fields `Z ρ̃`.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::branching::{birth_death, sde_propagate, BranchLimits, ConstantDrift, SampledDrift, SampledRate};
use crate::error::{Error, Result};
use crate::geometry::TorusDomain;
use crate::model::{KsModel, ScalarModel};
use crate::particles::{compute_z, sample_initial, InitialSampler, ParticleSet};
use crate::record::{snapshot_times, FieldData, RunRecord, RunStatus, SeriesRow, Snapshot};
use crate::spectral::{sample_fields, SpectralField};

/// Population tags separating the random streams of the two species.
pub const POP_U: u64 = 0;
pub const POP_V: u64 = 1;

/// Fully resolved solver settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub domain: TorusDomain,
    pub tau: f64,
    pub t_end: f64,
    /// Initial particle count (of `u` for the two-species system).
    pub n: usize,
    /// Initial particle count of `v`.
    pub n_v: usize,
    /// Spectral truncation order `K`.
    pub modes: usize,
    pub seed: u64,
    pub density_floor: f64,
    pub drift_cap: f64,
    pub rate_cap: f64,
    pub population_cap_factor: f64,
    pub snapshots: Vec<f64>,
    /// Points per axis of the grid spectral snapshots are sampled on.
    pub grid: usize,
    pub sampler: InitialSampler,
    /// Quadrature points per axis for initial masses.
    pub quadrature: usize,
}

impl SolverConfig {
    /// Defaults derived from the domain and step: floor `10⁻⁴ L^{-d}`, drift
    /// cap `L / (4τ)`, rate cap 5, population cap `20 N`, five snapshots.
    pub fn new(domain: TorusDomain, tau: f64, t_end: f64, n: usize, modes: usize) -> Self {
        Self {
            domain,
            tau,
            t_end,
            n,
            n_v: n,
            modes,
            seed: 0,
            density_floor: 1e-4 / domain.volume(),
            drift_cap: 0.25 * domain.side() / tau,
            rate_cap: 5.0,
            population_cap_factor: 20.0,
            snapshots: snapshot_times(t_end, 5),
            grid: 100,
            sampler: InitialSampler::default(),
            quadrature: 512,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return bad(format!("tau must be positive, got {}", self.tau));
        }
        if !(self.t_end >= 0.0 && self.t_end.is_finite()) {
            return bad(format!("t_end must be non-negative, got {}", self.t_end));
        }
        if self.n == 0 || self.n_v == 0 {
            return bad("particle counts must be at least 1".into());
        }
        if self.modes == 0 {
            return bad("spectral truncation K must be at least 1".into());
        }
        if !(self.density_floor > 0.0) {
            return bad(format!("density floor must be positive, got {}", self.density_floor));
        }
        if !(self.drift_cap > 0.0) || !(self.rate_cap > 0.0) {
            return bad("drift and rate caps must be positive".into());
        }
        if !(self.population_cap_factor >= 1.0) {
            return bad("population cap factor must be at least 1".into());
        }
        if self.grid == 0 || self.quadrature == 0 {
            return bad("grid and quadrature sizes must be positive".into());
        }
        if let Some(t) = self.snapshots.iter().find(|&&t| !(0.0..=self.t_end).contains(&t)) {
            return bad(format!("snapshot time {t} lies outside [0, {}]", self.t_end));
        }
        Ok(())
    }

    /// `ceil(T/τ)`, ignoring a remainder below `10⁻⁹ τ`.
    pub fn step_count(&self) -> usize {
        let ratio = self.t_end / self.tau;
        let m = ratio.round();
        if (ratio - m).abs() <= 1e-9 * ratio.max(1.0) {
            m as usize
        } else {
            ratio.ceil() as usize
        }
    }

    /// Time at the end of step `n`.
    pub fn time_at(&self, n: usize) -> f64 {
        if n >= self.step_count() {
            self.t_end
        } else {
            n as f64 * self.tau
        }
    }

    /// Length of step `n` (1-based); only the last may be short.
    fn step_length(&self, n: usize) -> f64 {
        self.time_at(n) - self.time_at(n - 1)
    }

    /// Step index of each snapshot time paired with the time itself.
    fn snapshot_steps(&self) -> Vec<(usize, f64)> {
        let m = self.step_count();
        let mut out: Vec<(usize, f64)> = self
            .snapshots
            .iter()
            .map(|&t| (((t / self.tau).round() as usize).min(m), t))
            .collect();
        out.sort_by(|a, b| a.1.total_cmp(&b.1));
        out.dedup_by(|a, b| a.0 == b.0);
        out
    }

    fn limits(&self, n: usize) -> BranchLimits {
        BranchLimits {
            rate_cap: self.rate_cap,
            population_cap: (self.population_cap_factor * n as f64).floor() as usize,
        }
    }
}

fn project(set: &ParticleSet, modes: usize) -> Result<SpectralField> {
    SpectralField::project_particles(*set.domain(), modes, set.positions(), set.n_initial())
}

fn check_field(field: &SpectralField, step: usize, name: &str) -> Result<()> {
    if field.is_finite() {
        Ok(())
    } else {
        Err(Error::Blowup {
            step,
            reason: format!("non-finite coefficient in the projected {name} field"),
        })
    }
}

/// Caps each velocity vector at `cap` in Euclidean norm; returns the number capped.
fn cap_velocities(v: &mut [f64], dim: usize, cap: f64) -> u64 {
    let mut hits = 0;
    for b in v.chunks_mut(dim) {
        let norm = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > cap {
            let s = cap / norm;
            b.iter_mut().for_each(|x| *x *= s);
            hits += 1;
        }
    }
    hits
}

/// State of a scalar run between steps.
#[derive(Debug, Clone)]
pub struct ScalarState {
    pub particles: ParticleSet,
    /// Projection of `particles`.
    pub field: SpectralField,
    pub z: f64,
}

/// Activation counts of one step.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct StepCounters {
    pub floor_hits: u64,
    pub cap_hits: u64,
}

/// One Lie–Trotter step of the scalar solver; `n` is the 1-based step index.
pub fn step_scalar(
    state: &ScalarState,
    model: &ScalarModel,
    cfg: &SolverConfig,
    n: usize,
) -> Result<(ScalarState, StepCounters)> {
    let tau = cfg.step_length(n);
    let dim = cfg.domain.dim();
    let mut counters = StepCounters::default();
    let set = &state.particles;

    // The advection families are independent of u, so the drift is uniform.
    let mut a = vec![0.0; dim];
    model.advection.eval(0.0, &mut a);
    let mut drift: Vec<f64> = a.iter().map(|aj| -aj).collect();
    counters.cap_hits += cap_velocities(&mut drift, dim, cfg.drift_cap) * set.len() as u64;
    let sigma = (2.0 * model.diffusion).sqrt();
    let moved = sde_propagate(set, tau, &ConstantDrift(drift), sigma, n as u64, cfg.seed, POP_U)?;

    let (next, field) = if model.reaction.is_zero() {
        let field = project(&moved, cfg.modes)?;
        check_field(&field, n, "u")?;
        (moved, field)
    } else {
        let star = project(&moved, cfg.modes)?;
        check_field(&star, n, "u")?;
        let rho = star.sample(moved.positions(), false).values;
        let rates: Vec<f64> = rho
            .iter()
            .map(|&r| {
                if r < cfg.density_floor {
                    counters.floor_hits += 1;
                }
                model.reaction.eval(state.z * r.max(cfg.density_floor))
            })
            .collect();
        let (next, stats) = birth_death(
            &moved,
            tau,
            &SampledRate(rates),
            n as u64,
            cfg.seed,
            POP_U,
            &cfg.limits(cfg.n),
        )?;
        counters.cap_hits += stats.capped as u64;
        let field = project(&next, cfg.modes)?;
        check_field(&field, n, "u")?;
        (next, field)
    };
    Ok((
        ScalarState {
            particles: next,
            field,
            z: state.z,
        },
        counters,
    ))
}

fn config_echo(model: &impl Serialize, cfg: &SolverConfig, z: &[f64]) -> serde_json::Value {
    serde_json::json!({
        "model": model,
        "solver": cfg,
        "normalization": z,
    })
}

/// Runs the scalar solver. Configuration and initial-sampling errors are
/// returned; failures during stepping are recorded in the run status.
pub fn run_scalar(model: &ScalarModel, cfg: &SolverConfig) -> Result<RunRecord> {
    cfg.validate()?;
    model.validate(&cfg.domain)?;
    let t0 = Instant::now();
    let domain = cfg.domain;
    let z = match model.mass {
        Some(z) => z,
        None => compute_z(&domain, |x| model.initial.eval(&domain, x), cfg.quadrature)?,
    };
    if !(z > 0.0) {
        return Err(Error::Model(format!("initial mass must be positive, got {z}")));
    }
    let mut record = RunRecord::new("scalar", config_echo(model, cfg, &[z]), cfg.seed);
    let particles = sample_initial(
        domain,
        |x| model.initial.eval(&domain, x),
        cfg.n,
        &cfg.sampler,
        cfg.seed,
        POP_U,
    )?;
    let field = project(&particles, cfg.modes)?;
    let mut state = ScalarState { particles, field, z };
    record.add_time("initialize", t0);

    let row = |t: f64, s: &ScalarState, c: StepCounters| SeriesRow {
        t,
        count_u: s.particles.len(),
        count_v: 0,
        mass_u: s.particles.total_mass_estimate(s.z),
        mass_v: 0.0,
        floor_hits: c.floor_hits,
        cap_hits: c.cap_hits,
    };
    let snap = |step: usize, t: f64, s: &ScalarState| Snapshot {
        step,
        t,
        fields: vec![("u".into(), FieldData::Spectral(s.field.scaled(s.z)))],
    };

    let schedule = cfg.snapshot_steps();
    let mut pending = schedule.iter().peekable();
    record.series.push(row(0.0, &state, StepCounters::default()));
    while let Some(&(_, t)) = pending.next_if(|(k, _)| *k == 0) {
        record.snapshots.push(snap(0, t, &state));
    }

    let t_loop = Instant::now();
    for n in 1..=cfg.step_count() {
        match step_scalar(&state, model, cfg, n) {
            Ok((next, counters)) => {
                state = next;
                record.series.push(row(cfg.time_at(n), &state, counters));
            }
            Err(e) => {
                record.status = RunStatus::from_error(n, &e);
                record.notes.push(format!("run stopped at step {n}: {e}"));
                break;
            }
        }
        while let Some(&(_, t)) = pending.next_if(|(k, _)| *k == n) {
            record.snapshots.push(snap(n, t, &state));
        }
    }
    record.add_time("integrate", t_loop);
    Ok(record)
}

/// State of a Keller–Segel run between steps.
#[derive(Debug, Clone)]
pub struct KsState {
    pub u: ParticleSet,
    pub v: ParticleSet,
    pub field_u: SpectralField,
    pub field_v: SpectralField,
    pub z_u: f64,
    pub z_v: f64,
}

/// One Lie–Trotter step of the two-species solver; `n` is 1-based.
pub fn step_ks(state: &KsState, model: &KsModel, cfg: &SolverConfig, n: usize) -> Result<(KsState, StepCounters)> {
    let tau = cfg.step_length(n);
    let dim = cfg.domain.dim();
    let eps = cfg.density_floor;
    let (z_u, z_v) = (state.z_u, state.z_v);
    let mut counters = StepCounters::default();
    let sigma = std::f64::consts::SQRT_2;

    // u drifts up the chemical gradient with speed Z_v χ(ũ)/ũ |∇ρ̃_v|.
    let s = sample_fields(&[&state.field_u, &state.field_v], state.u.positions(), &[false, true]);
    let grad_v = s[1].gradients.as_ref().expect("gradient requested");
    let mut drift = vec![0.0; state.u.len() * dim];
    for ((b, g), &r) in drift.chunks_mut(dim).zip(grad_v.chunks(dim)).zip(&s[0].values) {
        if r < eps {
            counters.floor_hits += 1;
        }
        let factor = z_v * model.chemotaxis.ratio(z_u * r.max(eps));
        b.iter_mut().zip(g).for_each(|(bj, gj)| *bj = factor * gj);
    }
    counters.cap_hits += cap_velocities(&mut drift, dim, cfg.drift_cap);

    let (u_moved, v_moved) = rayon::join(
        || sde_propagate(&state.u, tau, &SampledDrift(drift), sigma, n as u64, cfg.seed, POP_U),
        || {
            sde_propagate(
                &state.v,
                tau,
                &ConstantDrift(vec![0.0; dim]),
                sigma,
                n as u64,
                cfg.seed,
                POP_V,
            )
        },
    );
    let (u_moved, v_moved) = (u_moved?, v_moved?);
    let star_u = project(&u_moved, cfg.modes)?;
    let star_v = project(&v_moved, cfg.modes)?;
    check_field(&star_u, n, "u")?;
    check_field(&star_v, n, "v")?;

    // Growth rates of u and v, f(ũ*, ṽ*) / max(ũ*, ε Z) with floored arguments.
    let branch = |set: &ParticleSet,
                  star: &SpectralField,
                  source: &crate::model::Source,
                  own_u: bool,
                  n_init: usize,
                  population: u64,
                  counters: &mut StepCounters|
     -> Result<(ParticleSet, SpectralField)> {
        if source.is_zero() {
            return Ok((set.clone(), star.clone()));
        }
        let s = sample_fields(&[&star_u, &star_v], set.positions(), &[false, false]);
        let rates: Vec<f64> = s[0]
            .values
            .iter()
            .zip(&s[1].values)
            .map(|(&ru, &rv)| {
                let own = if own_u { ru } else { rv };
                if own < eps {
                    counters.floor_hits += 1;
                }
                let u = z_u * ru.max(eps);
                let v = z_v * rv.max(eps);
                source.eval(u, v) / if own_u { u } else { v }
            })
            .collect();
        let (next, stats) = birth_death(
            set,
            tau,
            &SampledRate(rates),
            n as u64,
            cfg.seed,
            population,
            &cfg.limits(n_init),
        )?;
        counters.cap_hits += stats.capped as u64;
        let field = project(&next, cfg.modes)?;
        check_field(&field, n, if own_u { "u" } else { "v" })?;
        Ok((next, field))
    };
    let (u, field_u) = branch(&u_moved, &star_u, &model.source_u, true, cfg.n, POP_U, &mut counters)?;
    let (v, field_v) = branch(&v_moved, &star_v, &model.source_v, false, cfg.n_v, POP_V, &mut counters)?;
    Ok((
        KsState {
            u,
            v,
            field_u,
            field_v,
            z_u,
            z_v,
        },
        counters,
    ))
}

/// Runs the two-species solver; see [`run_scalar`] for error handling.
pub fn run_ks(model: &KsModel, cfg: &SolverConfig) -> Result<RunRecord> {
    cfg.validate()?;
    model.validate(&cfg.domain)?;
    let t0 = Instant::now();
    let domain = cfg.domain;
    let mass = |given: Option<f64>, datum: &crate::model::InitialDatum| -> Result<f64> {
        let z = match given {
            Some(z) => z,
            None => compute_z(&domain, |x| datum.eval(&domain, x), cfg.quadrature)?,
        };
        if z > 0.0 {
            Ok(z)
        } else {
            Err(Error::Model(format!("initial mass must be positive, got {z}")))
        }
    };
    let z_u = mass(model.mass_u, &model.initial_u)?;
    let z_v = mass(model.mass_v, &model.initial_v)?;
    let mut record = RunRecord::new("ks", config_echo(model, cfg, &[z_u, z_v]), cfg.seed);
    let u = sample_initial(
        domain,
        |x| model.initial_u.eval(&domain, x),
        cfg.n,
        &cfg.sampler,
        cfg.seed,
        POP_U,
    )?;
    let v = sample_initial(
        domain,
        |x| model.initial_v.eval(&domain, x),
        cfg.n_v,
        &cfg.sampler,
        cfg.seed,
        POP_V,
    )?;
    let field_u = project(&u, cfg.modes)?;
    let field_v = project(&v, cfg.modes)?;
    let mut state = KsState {
        u,
        v,
        field_u,
        field_v,
        z_u,
        z_v,
    };
    record.add_time("initialize", t0);

    let row = |t: f64, s: &KsState, c: StepCounters| SeriesRow {
        t,
        count_u: s.u.len(),
        count_v: s.v.len(),
        mass_u: s.u.total_mass_estimate(s.z_u),
        mass_v: s.v.total_mass_estimate(s.z_v),
        floor_hits: c.floor_hits,
        cap_hits: c.cap_hits,
    };
    let snap = |step: usize, t: f64, s: &KsState| Snapshot {
        step,
        t,
        fields: vec![
            ("u".into(), FieldData::Spectral(s.field_u.scaled(s.z_u))),
            ("v".into(), FieldData::Spectral(s.field_v.scaled(s.z_v))),
        ],
    };

    let schedule = cfg.snapshot_steps();
    let mut pending = schedule.iter().peekable();
    record.series.push(row(0.0, &state, StepCounters::default()));
    while let Some(&(_, t)) = pending.next_if(|(k, _)| *k == 0) {
        record.snapshots.push(snap(0, t, &state));
    }

    let t_loop = Instant::now();
    for n in 1..=cfg.step_count() {
        match step_ks(&state, model, cfg, n) {
            Ok((next, counters)) => {
                state = next;
                record.series.push(row(cfg.time_at(n), &state, counters));
            }
            Err(e) => {
                record.status = RunStatus::from_error(n, &e);
                record.notes.push(format!("run stopped at step {n}: {e}"));
                break;
            }
        }
        while let Some(&(_, t)) = pending.next_if(|(k, _)| *k == n) {
            record.snapshots.push(snap(n, t, &state));
        }
    }
    record.add_time("integrate", t_loop);
    Ok(record)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{preset, Advection, InitialDatum, Model, Reaction};
    use std::f64::consts::PI;

    fn scalar(reaction: Reaction) -> ScalarModel {
        ScalarModel {
            advection: Advection::Zero,
            reaction,
            diffusion: 0.1,
            initial: InitialDatum::SinCosSquared { amplitude: 1.0 },
            mass: Some(PI * PI),
        }
    }

    #[test]
    fn step_grid() {
        let cfg = SolverConfig::new(TorusDomain::standard(2), 0.3, 1.0, 10, 2);
        assert_eq!(cfg.step_count(), 4);
        assert_eq!(cfg.time_at(4), 1.0);
        assert!((cfg.step_length(4) - 0.1).abs() < 1e-12);
        let cfg = SolverConfig::new(TorusDomain::standard(2), 2e-3, 0.8, 10, 2);
        assert_eq!(cfg.step_count(), 400);
        let steps: Vec<usize> = cfg.snapshot_steps().iter().map(|s| s.0).collect();
        assert_eq!(steps, vec![0, 100, 200, 300, 400]);
    }

    #[test]
    fn zero_horizon() {
        let cfg = SolverConfig::new(TorusDomain::standard(2), 1e-2, 0.0, 1000, 4);
        let rec = run_scalar(&scalar(Reaction::AllenCahn), &cfg).unwrap();
        assert_eq!(rec.series.len(), 1);
        assert_eq!(rec.snapshots.len(), 1);
        assert_eq!(rec.series[0].mass_u, PI * PI);
    }

    #[test]
    fn heat_keeps_mass_mode() {
        let mut cfg = SolverConfig::new(TorusDomain::standard(2), 1e-2, 0.1, 2000, 4);
        cfg.seed = 5;
        let rec = run_scalar(&scalar(Reaction::Constant { rate: 0.0 }), &cfg).unwrap();
        assert!(rec.status.is_completed());
        assert!(rec.series.iter().all(|r| r.count_u == 2000));
        for s in &rec.snapshots {
            let FieldData::Spectral(f) = s.field("u").unwrap() else {
                panic!()
            };
            assert!((f.mass() - PI * PI).abs() < 1e-12);
        }
    }

    #[test]
    fn growth_matches_exponential() {
        let mut cfg = SolverConfig::new(TorusDomain::standard(2), 1e-2, 0.5, 10_000, 4);
        cfg.seed = 8;
        let rec = run_scalar(&scalar(Reaction::Constant { rate: 1.0 }), &cfg).unwrap();
        let last = rec.series.last().unwrap();
        let expected = 0.5f64.exp();
        // Yule-process variance of the multiplier: e^{2t} - e^{t}.
        let sd = ((expected * expected - expected) / 10_000.0).sqrt();
        let got = last.count_u as f64 / 10_000.0;
        assert!((got - expected).abs() < 5.0 * sd, "multiplier {got}");
    }

    #[test]
    fn ks_linear_counts_and_determinism() {
        let Model::KellerSegel(m) = preset("ks-linear").unwrap() else {
            panic!()
        };
        let mut cfg = SolverConfig::new(TorusDomain::standard(2), 1e-3, 0.02, 2000, 6);
        cfg.seed = 3;
        let a = run_ks(&m, &cfg).unwrap();
        let b = run_ks(&m, &cfg).unwrap();
        assert!(a.status.is_completed());
        assert!(a.series.iter().all(|r| r.count_u == 2000));
        assert_eq!(a.series_csv(), b.series_csv());
        assert_eq!(a.snapshots, b.snapshots);
    }

    #[test]
    fn snapshot_mass_identity() {
        let Model::KellerSegel(m) = preset("ks-linear").unwrap() else {
            panic!()
        };
        let cfg = SolverConfig::new(TorusDomain::standard(2), 1e-3, 0.01, 1000, 4);
        let rec = run_ks(&m, &cfg).unwrap();
        for snap in &rec.snapshots {
            let row = rec.series[snap.step];
            let FieldData::Spectral(v) = snap.field("v").unwrap() else {
                panic!()
            };
            assert!((v.mass() - row.mass_v).abs() < 1e-9 * row.mass_v);
        }
    }

    #[test]
    fn rejects_bad_config() {
        let mut cfg = SolverConfig::new(TorusDomain::standard(2), 1e-3, 0.1, 10, 2);
        cfg.modes = 0;
        assert!(matches!(
            run_scalar(&scalar(Reaction::AllenCahn), &cfg),
            Err(Error::Config(_))
        ));
    }
}
