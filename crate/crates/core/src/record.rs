//! Run records and their on-disk layout.
//!
//! A run directory holds `run.json` (the manifest), `series.csv` and one
//! `snap_<step>_<field>.csv` per snapshot field, plus `snap_<step>_<field>.coef`
//! for spectral fields.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fd::GridField;
use crate::spectral::{write_grid_csv, SpectralField};

pub const SERIES_HEADER: &str = "t,count_u,count_v,mass_u,mass_v,floor_hits,cap_hits";

/// Version string recorded with every run.
pub fn artifact_version() -> String {
    format!("branchpde {}", env!("CARGO_PKG_VERSION"))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeriesRow {
    pub t: f64,
    pub count_u: usize,
    pub count_v: usize,
    pub mass_u: f64,
    pub mass_v: f64,
    pub floor_hits: u64,
    pub cap_hits: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum FieldData {
    Spectral(SpectralField),
    Grid(GridField),
}

impl FieldData {
    /// Values on `uniform_grid(n)`; grid fields must already have that size.
    pub fn on_grid(&self, n: usize) -> Result<GridField> {
        match self {
            FieldData::Spectral(f) => f.sample_grid(n),
            FieldData::Grid(g) if g.n() == n => Ok(g.clone()),
            FieldData::Grid(g) => Err(Error::InvalidArgument(format!(
                "grid field has {} points per axis, {n} requested",
                g.n()
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub step: usize,
    pub t: f64,
    /// Physical (mass-scaled) fields by name, e.g. `u`, `v`.
    pub fields: Vec<(String, FieldData)>,
}

impl Snapshot {
    pub fn field(&self, name: &str) -> Option<&FieldData> {
        self.fields.iter().find(|(n, _)| n == name).map(|(_, f)| f)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "kebab-case")]
pub enum RunStatus {
    Completed,
    Failed {
        step: usize,
        reason: String,
        exit_code: i32,
    },
}

impl RunStatus {
    pub fn from_error(step: usize, err: &Error) -> Self {
        RunStatus::Failed {
            step,
            reason: err.to_string(),
            exit_code: err.exit_code(),
        }
    }

    pub fn is_completed(&self) -> bool {
        matches!(self, RunStatus::Completed)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    /// `scalar`, `ks` or `fd`.
    pub kind: String,
    /// Fully resolved configuration.
    pub config: serde_json::Value,
    pub seed: u64,
    pub series: Vec<SeriesRow>,
    pub snapshots: Vec<Snapshot>,
    pub status: RunStatus,
    pub notes: Vec<String>,
    /// Wall-clock seconds per stage.
    pub timings: BTreeMap<String, f64>,
}

impl RunRecord {
    pub fn new(kind: &str, config: serde_json::Value, seed: u64) -> Self {
        Self {
            kind: kind.into(),
            config,
            seed,
            series: Vec::new(),
            snapshots: Vec::new(),
            status: RunStatus::Completed,
            notes: Vec::new(),
            timings: BTreeMap::new(),
        }
    }

    pub fn add_time(&mut self, stage: &str, since: std::time::Instant) {
        *self.timings.entry(stage.into()).or_default() += since.elapsed().as_secs_f64();
    }

    pub fn series_csv(&self) -> String {
        let mut s = String::with_capacity(64 * (self.series.len() + 1));
        s.push_str(SERIES_HEADER);
        s.push('\n');
        for r in &self.series {
            writeln!(
                s,
                "{:.16e},{},{},{:.16e},{:.16e},{},{}",
                r.t, r.count_u, r.count_v, r.mass_u, r.mass_v, r.floor_hits, r.cap_hits
            )
            .unwrap();
        }
        s
    }

    pub fn final_snapshot(&self) -> Option<&Snapshot> {
        self.snapshots.last()
    }

    /// Writes the run directory. `grid` sets the sampling grid for spectral
    /// fields; `recenter` shifts plotted grids by half a period.
    pub fn write_dir(&self, dir: &Path, grid: usize, recenter: bool) -> Result<RunManifest> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let series_path = dir.join("series.csv");
        std::fs::write(&series_path, self.series_csv()).map_err(|e| Error::io(&series_path, e))?;

        let mut entries = Vec::new();
        for snap in &self.snapshots {
            let mut files = BTreeMap::new();
            for (name, data) in &snap.fields {
                let csv = format!("snap_{}_{}.csv", snap.step, name);
                let coef = format!("snap_{}_{}.coef", snap.step, name);
                let (domain, n, values) = match data {
                    FieldData::Spectral(f) => {
                        f.write_coef(&dir.join(&coef))?;
                        let g = f.sample_grid(grid)?;
                        (*f.domain(), grid, g.into_values())
                    }
                    FieldData::Grid(g) => (*g.domain(), g.n(), g.values().to_vec()),
                };
                let shift = recenter.then(|| domain.side() / 2.0);
                write_grid_csv(&dir.join(&csv), &domain, n, &values, shift)?;
                files.insert(
                    name.clone(),
                    SnapshotFiles {
                        grid: csv,
                        coef: matches!(data, FieldData::Spectral(_)).then_some(coef),
                        grid_n: n,
                    },
                );
            }
            entries.push(SnapshotEntry {
                step: snap.step,
                t: snap.t,
                files,
            });
        }

        let manifest = RunManifest {
            kind: self.kind.clone(),
            version: artifact_version(),
            seed: self.seed,
            config: self.config.clone(),
            status: self.status.clone(),
            series: "series.csv".into(),
            snapshots: entries,
            notes: self.notes.clone(),
            timings: self.timings.clone(),
            recentered: recenter,
        };
        let path = dir.join("run.json");
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        Ok(manifest)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotFiles {
    pub grid: String,
    pub coef: Option<String>,
    pub grid_n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotEntry {
    pub step: usize,
    pub t: f64,
    pub files: BTreeMap<String, SnapshotFiles>,
}

/// The `run.json` document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub kind: String,
    pub version: String,
    pub seed: u64,
    pub config: serde_json::Value,
    pub status: RunStatus,
    pub series: String,
    pub snapshots: Vec<SnapshotEntry>,
    pub notes: Vec<String>,
    pub timings: BTreeMap<String, f64>,
    #[serde(default)]
    pub recentered: bool,
}

impl RunManifest {
    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join("run.json");
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::InvalidArgument(format!("{}: {e}", path.display())))
    }

    pub fn file(&self, dir: &Path, name: &str) -> PathBuf {
        dir.join(name)
    }
}

/// `count` evenly spaced times covering `[0, t_end]`, both ends included.
pub fn snapshot_times(t_end: f64, count: usize) -> Vec<f64> {
    if count <= 1 || t_end == 0.0 {
        let mut v = vec![0.0];
        if count == 1 && t_end > 0.0 {
            v[0] = t_end;
        }
        return v;
    }
    (0..count).map(|k| t_end * k as f64 / (count - 1) as f64).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule() {
        assert_eq!(snapshot_times(0.8, 5), vec![0.0, 0.2, 0.4, 0.6000000000000001, 0.8]);
        assert_eq!(snapshot_times(0.0, 5), vec![0.0]);
        assert_eq!(snapshot_times(1.0, 1), vec![1.0]);
    }

    #[test]
    fn series_format() {
        let mut r = RunRecord::new("scalar", serde_json::json!({}), 1);
        r.series.push(SeriesRow {
            t: 0.0,
            count_u: 10,
            count_v: 0,
            mass_u: 1.5,
            mass_v: 0.0,
            floor_hits: 0,
            cap_hits: 2,
        });
        assert_eq!(
            r.series_csv(),
            format!("{SERIES_HEADER}\n0.0000000000000000e0,10,0,1.5000000000000000e0,0.0000000000000000e0,0,2\n")
        );
    }
}
