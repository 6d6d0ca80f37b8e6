//! JSON run configuration, preset defaults and resolution.
//!
//! A config file names a preset or spells out a model, plus optional solver
//! settings. Unset settings take the preset's defaults; command-line
//! overrides are applied last. The resolved form is what runs record.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::TorusDomain;
use crate::model::{preset, Model};
use crate::particles::{InitialSampler, MhParams};
use crate::record::snapshot_times;
use crate::solver::SolverConfig;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DomainSpec {
    pub dim: usize,
    #[serde(default = "default_side")]
    pub side: f64,
    #[serde(default)]
    pub origin: f64,
}

fn default_side() -> f64 {
    2.0 * std::f64::consts::PI
}

/// A run as written in a config file; every field is optional.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub preset: Option<String>,
    pub model: Option<Model>,
    pub domain: Option<DomainSpec>,
    pub seed: Option<u64>,
    pub tau: Option<f64>,
    pub t_end: Option<f64>,
    /// Particle count for the scalar solver, or both species.
    pub n: Option<usize>,
    pub n_u: Option<usize>,
    pub n_v: Option<usize>,
    pub modes: Option<usize>,
    /// Sampling grid of spectral snapshots and the finite-difference grid.
    pub grid: Option<usize>,
    pub snapshots: Option<Vec<f64>>,
    pub snapshot_count: Option<usize>,
    pub density_floor: Option<f64>,
    pub drift_cap: Option<f64>,
    pub rate_cap: Option<f64>,
    pub population_cap_factor: Option<f64>,
    pub sampler: Option<InitialSampler>,
    pub quadrature: Option<usize>,
    /// Upper bound on the finite-difference step.
    pub fd_tau: Option<f64>,
    pub fd_safety: Option<f64>,
    pub threads: Option<usize>,
    pub recenter_plots: Option<bool>,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// Fields set in `over` replace those in `self`.
    pub fn merged(mut self, over: &RunConfig) -> Self {
        macro_rules! take {
            ($($f:ident),*) => { $( if over.$f.is_some() { self.$f = over.$f.clone(); } )* };
        }
        take!(
            preset,
            model,
            domain,
            seed,
            tau,
            t_end,
            n,
            n_u,
            n_v,
            modes,
            grid,
            snapshots,
            snapshot_count,
            density_floor,
            drift_cap,
            rate_cap,
            population_cap_factor,
            sampler,
            quadrature,
            fd_tau,
            fd_safety,
            threads,
            recenter_plots
        );
        if over.preset.is_some() && over.model.is_none() {
            self.model = None;
        }
        self
    }
}

/// Defaults that depend on the preset.
#[derive(Debug, Clone, PartialEq)]
pub struct PresetDefaults {
    pub tau: f64,
    pub t_end: f64,
    pub n: usize,
    pub modes: usize,
    pub grid: usize,
    pub sampler: InitialSampler,
    pub fd_tau: Option<f64>,
}

pub fn preset_defaults(name: Option<&str>) -> PresetDefaults {
    let base = PresetDefaults {
        tau: 1e-3,
        t_end: 0.1,
        n: 10_000,
        modes: 10,
        grid: 100,
        sampler: InitialSampler::default(),
        fd_tau: None,
    };
    match name {
        Some("allen-cahn") => PresetDefaults {
            tau: 2e-3,
            t_end: 0.8,
            n: 100_000,
            grid: 128,
            fd_tau: Some(1e-4),
            ..base
        },
        Some("heat") => PresetDefaults {
            tau: 1e-2,
            t_end: 1.0,
            ..base
        },
        Some("growth") => PresetDefaults {
            tau: 1e-2,
            t_end: 0.5,
            ..base
        },
        Some("ks-linear") => PresetDefaults {
            t_end: 0.5,
            n: 40_000,
            ..base
        },
        Some("ks-blowup") => PresetDefaults {
            tau: 1e-6,
            t_end: 1.5e-4,
            n: 40_000,
            grid: 200,
            sampler: InitialSampler::MetropolisHastings(MhParams {
                step: 0.1,
                burn_in: 500,
            }),
            ..base
        },
        Some("ks-logistic") => PresetDefaults {
            t_end: 1.0,
            n: 40_000,
            ..base
        },
        _ => base,
    }
}

/// A fully resolved run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Resolved {
    pub preset: Option<String>,
    pub model: Model,
    pub solver: SolverConfig,
    pub fd_tau: Option<f64>,
    pub fd_safety: f64,
    pub threads: Option<usize>,
    pub recenter_plots: bool,
}

impl Resolved {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("resolved config serializes")
    }

    pub fn fd_config(&self) -> crate::fd::FdConfig {
        crate::fd::FdConfig {
            grid: self.solver.grid,
            tau: self.fd_tau,
            t_end: self.solver.t_end,
            snapshots: self.solver.snapshots.clone(),
            safety: self.fd_safety,
        }
    }
}

pub fn resolve(cfg: &RunConfig) -> Result<Resolved> {
    let model = match (&cfg.model, &cfg.preset) {
        (Some(m), _) => m.clone(),
        (None, Some(name)) => preset(name)?,
        (None, None) => return Err(Error::Config("either `preset` or `model` is required".into())),
    };
    let defaults = preset_defaults(if cfg.model.is_none() {
        cfg.preset.as_deref()
    } else {
        None
    });
    let domain = match cfg.domain {
        Some(d) => TorusDomain::new(d.dim, d.side, d.origin).map_err(|e| Error::Config(e.to_string()))?,
        None => TorusDomain::standard(2),
    };
    let tau = cfg.tau.unwrap_or(defaults.tau);
    let t_end = cfg.t_end.unwrap_or(defaults.t_end);
    let n = cfg.n_u.or(cfg.n).unwrap_or(defaults.n);
    let mut solver = SolverConfig::new(domain, tau, t_end, n, cfg.modes.unwrap_or(defaults.modes));
    solver.n_v = cfg.n_v.or(cfg.n).unwrap_or(defaults.n);
    solver.seed = cfg.seed.unwrap_or(0);
    solver.grid = cfg.grid.unwrap_or(defaults.grid);
    solver.sampler = cfg.sampler.unwrap_or(defaults.sampler);
    if let Some(v) = cfg.density_floor {
        solver.density_floor = v;
    }
    if let Some(v) = cfg.drift_cap {
        solver.drift_cap = v;
    }
    if let Some(v) = cfg.rate_cap {
        solver.rate_cap = v;
    }
    if let Some(v) = cfg.population_cap_factor {
        solver.population_cap_factor = v;
    }
    if let Some(v) = cfg.quadrature {
        solver.quadrature = v;
    }
    solver.snapshots = match (&cfg.snapshots, cfg.snapshot_count) {
        (Some(s), _) => s.clone(),
        (None, Some(c)) => snapshot_times(t_end, c),
        (None, None) => snapshot_times(t_end, 5),
    };
    solver.validate()?;
    if let Some(t) = cfg.threads {
        if t == 0 {
            return Err(Error::Config("threads must be at least 1".into()));
        }
    }
    let fd_safety = cfg.fd_safety.unwrap_or(0.5);
    if !(fd_safety > 0.0 && fd_safety <= 1.0) {
        return Err(Error::Config(format!("fd_safety must lie in (0, 1], got {fd_safety}")));
    }
    Ok(Resolved {
        preset: cfg.preset.clone(),
        model,
        solver,
        fd_tau: cfg.fd_tau.or(defaults.fd_tau),
        fd_safety,
        threads: cfg.threads,
        recenter_plots: cfg.recenter_plots.unwrap_or(false),
    })
}
