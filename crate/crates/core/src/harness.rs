//! Experiment orchestration shared by the CLI and the FFI: single runs,
//! Monte Carlo convergence sweeps and run-directory comparison.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{resolve, Resolved, RunConfig};
use crate::error::{Error, Result};
use crate::fd::{run_fd, GridField};
use crate::geometry::TorusDomain;
use crate::metrics::{fit_convergence_slope, h_minus_s_distance, rel_l2_grid, MetricRow, SlopeFit};
use crate::model::Model;
use crate::record::{artifact_version, FieldData, RunManifest, RunRecord};
use crate::solver::{run_ks, run_scalar};
use crate::spectral::{read_grid_csv, SpectralField};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunKind {
    Scalar,
    Ks,
    Fd,
}

impl RunKind {
    pub fn label(self) -> &'static str {
        match self {
            RunKind::Scalar => "scalar",
            RunKind::Ks => "ks",
            RunKind::Fd => "fd",
        }
    }
}

/// Runs the resolved configuration with the requested driver.
pub fn execute(kind: RunKind, r: &Resolved) -> Result<RunRecord> {
    let mut record = match (kind, &r.model) {
        (RunKind::Scalar, Model::Scalar(m)) => run_scalar(m, &r.solver)?,
        (RunKind::Ks, Model::KellerSegel(m)) => run_ks(m, &r.solver)?,
        (RunKind::Fd, model) => {
            let mut rec = run_fd(model, r.solver.domain, &r.fd_config())?;
            rec.seed = r.solver.seed;
            rec
        }
        (RunKind::Scalar, _) => {
            return Err(Error::Config("run-scalar needs a scalar model".into()));
        }
        (RunKind::Ks, _) => {
            return Err(Error::Config("run-ks needs a Keller-Segel model".into()));
        }
    };
    record.config = serde_json::json!({ "resolved": r, "run": record.config });
    Ok(record)
}

/// `<kind>-<UTC timestamp>-seed<seed>`.
pub fn run_dir_name(kind: RunKind, seed: u64) -> String {
    let now = chrono::Utc::now();
    format!("{}-{}-seed{seed}", kind.label(), now.format("%Y%m%dT%H%M%S%3fZ"))
}

fn domain_of(manifest: &RunManifest) -> Result<TorusDomain> {
    let value = manifest
        .config
        .pointer("/resolved/solver/domain")
        .ok_or_else(|| Error::InvalidArgument("run.json lacks a domain".into()))?;
    serde_json::from_value(value.clone()).map_err(|e| Error::InvalidArgument(e.to_string()))
}

/// One field of one snapshot as stored on disk.
struct StoredField {
    spectral: Option<SpectralField>,
    grid: GridField,
}

fn load_field(
    dir: &Path,
    manifest: &RunManifest,
    domain: TorusDomain,
    step_files: &crate::record::SnapshotFiles,
) -> Result<StoredField> {
    let path = dir.join(&step_files.grid);
    let (n, values) = read_grid_csv(&path, domain.dim())?;
    let values = if manifest.recentered {
        unshift_grid_values(&domain, n, &values, domain.side() / 2.0)
    } else {
        values
    };
    let spectral = match &step_files.coef {
        Some(c) => Some(SpectralField::read_coef(&dir.join(c))?),
        None => None,
    };
    Ok(StoredField {
        spectral,
        grid: GridField::new(domain, n, values)?,
    })
}

/// Undoes the half-period recentering applied when writing plot grids.
pub fn unshift_grid_values(domain: &TorusDomain, n: usize, values: &[f64], shift: f64) -> Vec<f64> {
    let dim = domain.dim();
    let off = (shift / domain.grid_spacing(n)).round() as i64;
    (0..values.len())
        .map(|i| {
            let mut rest = i;
            let mut digits = vec![0usize; dim];
            for j in (0..dim).rev() {
                digits[j] = rest % n;
                rest /= n;
            }
            let src = digits.iter().fold(0usize, |acc, &dj| {
                acc * n + (dj as i64 + off).rem_euclid(n as i64) as usize
            });
            values[src]
        })
        .collect()
}

fn grid_at(f: &StoredField, n: usize) -> Result<GridField> {
    if f.grid.n() == n {
        return Ok(f.grid.clone());
    }
    if let Some(s) = &f.spectral {
        return s.sample_grid(n);
    }
    if f.grid.n().is_multiple_of(n) {
        return f.grid.restrict(f.grid.n() / n);
    }
    Err(Error::InvalidArgument(format!(
        "cannot bring a {}-point grid to {n} points per axis",
        f.grid.n()
    )))
}

fn spectral_of(f: &StoredField, order: usize) -> SpectralField {
    match &f.spectral {
        Some(s) if s.order() == order => s.clone(),
        _ => {
            let g = &f.grid;
            let d = g.domain().dim();
            let pts = g.domain().uniform_grid(g.n()).expect("grid size is positive");
            SpectralField::project_weighted(*g.domain(), order, &pts, Some(g.values()), g.spacing().powi(d as i32))
        }
    }
}

/// Per-snapshot relative L² of every shared field, `b` being the reference,
/// plus the H^{-s} distance when `sobolev` is given.
pub fn compare_dirs(a: &Path, b: &Path, sobolev: Option<f64>) -> Result<Vec<MetricRow>> {
    let (ma, mb) = (RunManifest::load(a)?, RunManifest::load(b)?);
    let ta: Vec<f64> = ma.snapshots.iter().map(|s| s.t).collect();
    let tb: Vec<f64> = mb.snapshots.iter().map(|s| s.t).collect();
    let same = ta.len() == tb.len()
        && ta
            .iter()
            .zip(&tb)
            .all(|(x, y)| (x - y).abs() <= 1e-12 * x.abs().max(1.0));
    if !same {
        return Err(Error::InvalidArgument(format!(
            "snapshot schedules differ:\n  {}: {ta:?}\n  {}: {tb:?}",
            a.display(),
            b.display()
        )));
    }
    let (da, db) = (domain_of(&ma)?, domain_of(&mb)?);
    if da != db {
        return Err(Error::InvalidArgument("runs use different domains".into()));
    }
    let mut rows = Vec::new();
    for (sa, sb) in ma.snapshots.iter().zip(&mb.snapshots) {
        for (name, fa) in &sa.files {
            let Some(fb) = sb.files.get(name) else { continue };
            let xa = load_field(a, &ma, da, fa)?;
            let xb = load_field(b, &mb, db, fb)?;
            let n = xa.grid.n().min(xb.grid.n());
            let (ga, gb) = (grid_at(&xa, n)?, grid_at(&xb, n)?);
            rows.push(MetricRow {
                metric: format!("rel_l2_{name}"),
                at: sa.t,
                value: rel_l2_grid(&ga, &gb)?,
            });
            if let Some(s) = sobolev {
                let order = xa.spectral.as_ref().or(xb.spectral.as_ref()).map_or(10, |f| f.order());
                let dist = h_minus_s_distance(&spectral_of(&xa, order), &spectral_of(&xb, order), s)?;
                rows.push(MetricRow {
                    metric: format!("h_minus_s_{name}"),
                    at: sa.t,
                    value: dist,
                });
            }
        }
    }
    Ok(rows)
}

/// A Monte Carlo convergence sweep against a large reference run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvergenceConfig {
    pub base: RunConfig,
    pub sweep: Vec<usize>,
    pub reference_n: usize,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_reference_seed")]
    pub reference_seed: u64,
    /// Compared field, `u` or `v`.
    #[serde(default = "default_field")]
    pub field: String,
}

fn default_seeds() -> Vec<u64> {
    vec![1, 2, 3]
}

fn default_reference_seed() -> u64 {
    1000
}

fn default_field() -> String {
    "u".into()
}

/// Particle-steps above which a sweep is flagged as long-running.
pub const LONG_RUNNING_WORK: f64 = 1e10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub n: usize,
    pub seed: u64,
    pub error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub rows: Vec<ConvergenceRow>,
    pub fit: SlopeFit,
    pub reference_n: usize,
    pub reference_cached: bool,
    pub long_running: bool,
    pub t: f64,
}

impl ConvergenceReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        if self.long_running {
            s.push_str("# long-running: large-scale sweep\n");
        }
        s.push_str(&format!(
            "# reference_n={} t={:.16e} slope={:.16e} intercept={:.16e} residual={:.16e}\n",
            self.reference_n, self.t, self.fit.slope, self.fit.intercept, self.fit.residual
        ));
        let mut rows: Vec<MetricRow> = self
            .rows
            .iter()
            .map(|r| MetricRow {
                metric: format!("rel_l2_seed{}", r.seed),
                at: r.n as f64,
                value: r.error,
            })
            .collect();
        rows.push(MetricRow {
            metric: "slope".into(),
            at: 0.0,
            value: self.fit.slope,
        });
        rows.push(MetricRow {
            metric: "residual".into(),
            at: 0.0,
            value: self.fit.residual,
        });
        s.push_str(&crate::metrics::metrics_csv(&rows));
        s
    }
}

fn final_field(record: &RunRecord, name: &str) -> Result<SpectralField> {
    if !record.status.is_completed() {
        return Err(Error::Blowup {
            step: record.series.len().saturating_sub(1),
            reason: format!("convergence run failed: {:?}", record.status),
        });
    }
    match record.final_snapshot().and_then(|s| s.field(name)) {
        Some(FieldData::Spectral(f)) => Ok(f.clone()),
        _ => Err(Error::Config(format!("run has no final `{name}` field"))),
    }
}

fn run_particles(r: &Resolved) -> Result<RunRecord> {
    match &r.model {
        Model::Scalar(m) => run_scalar(m, &r.solver),
        Model::KellerSegel(m) => run_ks(m, &r.solver),
    }
}

fn with_n(base: &RunConfig, n: usize, seed: u64) -> Result<Resolved> {
    let over = RunConfig {
        n: Some(n),
        seed: Some(seed),
        ..Default::default()
    };
    let mut cfg = base.clone().merged(&over);
    cfg.n_u = None;
    cfg.n_v = None;
    let mut r = resolve(&cfg)?;
    r.solver.snapshots = vec![r.solver.t_end];
    Ok(r)
}

fn cache_key(r: &Resolved) -> String {
    let mut h = Sha256::new();
    h.update(artifact_version().as_bytes());
    h.update(r.to_json().as_bytes());
    h.finalize().iter().take(12).map(|b| format!("{b:02x}")).collect()
}

/// Runs the sweep; the reference field is cached under `cache_dir` keyed by
/// a hash of its resolved configuration.
pub fn run_convergence(cfg: &ConvergenceConfig, cache_dir: Option<&Path>) -> Result<ConvergenceReport> {
    let mut distinct = cfg.sweep.clone();
    distinct.sort_unstable();
    distinct.dedup();
    if distinct.len() < 2 {
        return Err(Error::Config(
            "convergence sweep needs at least two distinct particle counts".into(),
        ));
    }
    if cfg.seeds.is_empty() {
        return Err(Error::Config("convergence sweep needs at least one seed".into()));
    }
    if cfg.sweep.len() * cfg.seeds.len() < 3 {
        return Err(Error::Config(
            "convergence sweep needs at least 3 (N, error) pairs".into(),
        ));
    }
    let reference = with_n(&cfg.base, cfg.reference_n, cfg.reference_seed)?;
    let steps = reference.solver.step_count().max(1) as f64;
    let work = steps * (cfg.reference_n as f64 + cfg.sweep.iter().sum::<usize>() as f64 * cfg.seeds.len() as f64);
    let long_running = work > LONG_RUNNING_WORK || cfg.reference_n >= 320_000;

    let cache_path: Option<PathBuf> =
        cache_dir.map(|d| d.join(format!("ref-{}-{}.coef", cache_key(&reference), cfg.field)));
    let mut reference_cached = false;
    let ref_field = match cache_path.as_ref().filter(|p| p.exists()) {
        Some(p) => {
            reference_cached = true;
            SpectralField::read_coef(p)?
        }
        None => {
            let f = final_field(&run_particles(&reference)?, &cfg.field)?;
            if let Some(p) = &cache_path {
                if let Some(parent) = p.parent() {
                    std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
                }
                f.write_coef(p)?;
            }
            f
        }
    };
    let grid = reference.solver.grid;
    let ref_grid = ref_field.sample_grid(grid)?;

    let mut rows = Vec::new();
    for &n in &cfg.sweep {
        for &seed in &cfg.seeds {
            let r = with_n(&cfg.base, n, seed)?;
            let f = final_field(&run_particles(&r)?, &cfg.field)?;
            rows.push(ConvergenceRow {
                n,
                seed,
                error: rel_l2_grid(&f.sample_grid(grid)?, &ref_grid)?,
            });
        }
    }
    let pairs: Vec<(f64, f64)> = rows.iter().map(|r| (r.n as f64, r.error)).collect();
    Ok(ConvergenceReport {
        fit: fit_convergence_slope(&pairs)?,
        rows,
        reference_n: cfg.reference_n,
        reference_cached,
        long_running,
        t: reference.solver.t_end,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_base() -> RunConfig {
        RunConfig {
            preset: Some("ks-linear".into()),
            tau: Some(1e-3),
            t_end: Some(0.005),
            modes: Some(4),
            grid: Some(16),
            ..Default::default()
        }
    }

    #[test]
    fn sweep_validation() {
        let cfg = ConvergenceConfig {
            base: small_base(),
            sweep: vec![1000, 1000],
            reference_n: 4000,
            seeds: vec![1, 2],
            reference_seed: 9,
            field: "u".into(),
        };
        assert!(matches!(run_convergence(&cfg, None), Err(Error::Config(_))));
    }

    #[test]
    fn cached_reference_is_reused() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = ConvergenceConfig {
            base: small_base(),
            sweep: vec![500, 2000],
            reference_n: 8000,
            seeds: vec![1, 2],
            reference_seed: 9,
            field: "u".into(),
        };
        let first = run_convergence(&cfg, Some(dir.path())).unwrap();
        let second = run_convergence(&cfg, Some(dir.path())).unwrap();
        assert!(!first.reference_cached && second.reference_cached);
        assert_eq!(first.rows, second.rows);
        assert!(first.to_csv().contains("slope"));
    }

    #[test]
    fn unshift_inverts_recentering() {
        let dom = TorusDomain::standard(2);
        let n = 8;
        let values: Vec<f64> = (0..64).map(|i| i as f64).collect();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.csv");
        crate::spectral::write_grid_csv(&path, &dom, n, &values, Some(dom.side() / 2.0)).unwrap();
        let (_, written) = read_grid_csv(&path, 2).unwrap();
        assert_ne!(written, values);
        assert_eq!(unshift_grid_values(&dom, n, &written, dom.side() / 2.0), values);
    }
}
