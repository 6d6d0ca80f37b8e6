//! Particle populations, initial sampling and mass bookkeeping.

use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::TorusDomain;
use crate::rng::{self, KERNEL_INIT};

/// An unweighted particle population normalized by its initial count.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleSet {
    domain: TorusDomain,
    positions: Vec<f64>,
    ids: Vec<u64>,
    n_initial: usize,
}

impl ParticleSet {
    /// Root particles get lineage ids `0..n`.
    pub fn new(domain: TorusDomain, positions: Vec<f64>, n_initial: usize) -> Result<Self> {
        let ids = (0..(positions.len() / domain.dim()) as u64).collect();
        Self::with_ids(domain, positions, ids, n_initial)
    }

    pub fn with_ids(domain: TorusDomain, mut positions: Vec<f64>, ids: Vec<u64>, n_initial: usize) -> Result<Self> {
        if n_initial == 0 {
            return Err(Error::InvalidArgument("initial particle count must be >= 1".into()));
        }
        if positions.len() != ids.len() * domain.dim() {
            return Err(Error::InvalidArgument(format!(
                "{} coordinates do not match {} ids in dimension {}",
                positions.len(),
                ids.len(),
                domain.dim()
            )));
        }
        domain.wrap_in_place(&mut positions)?;
        Ok(Self {
            domain,
            positions,
            ids,
            n_initial,
        })
    }

    /// Assembles a set from parts already known to be wrapped.
    pub(crate) fn from_parts(domain: TorusDomain, positions: Vec<f64>, ids: Vec<u64>, n_initial: usize) -> Self {
        debug_assert_eq!(positions.len(), ids.len() * domain.dim());
        debug_assert!(positions
            .iter()
            .all(|&x| x >= domain.origin() && x < domain.origin() + domain.side()));
        Self {
            domain,
            positions,
            ids,
            n_initial,
        }
    }

    pub fn domain(&self) -> &TorusDomain {
        &self.domain
    }

    pub fn dim(&self) -> usize {
        self.domain.dim()
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn n_initial(&self) -> usize {
        self.n_initial
    }

    /// Flattened `len × d` coordinates.
    pub fn positions(&self) -> &[f64] {
        &self.positions
    }

    pub fn position(&self, i: usize) -> &[f64] {
        let d = self.dim();
        &self.positions[i * d..(i + 1) * d]
    }

    pub fn ids(&self) -> &[u64] {
        &self.ids
    }

    /// `Z |S| / N`.
    pub fn total_mass_estimate(&self, z: f64) -> f64 {
        z * self.len() as f64 / self.n_initial as f64
    }

    /// Debug dump: `id,x1,...,xd` per particle.
    pub fn to_csv_string(&self) -> String {
        let d = self.dim();
        let mut s = String::from("id");
        for j in 1..=d {
            write!(s, ",x{j}").unwrap();
        }
        s.push('\n');
        for (i, id) in self.ids.iter().enumerate() {
            write!(s, "{id}").unwrap();
            for x in self.position(i) {
                write!(s, ",{x:.16e}").unwrap();
            }
            s.push('\n');
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv_string()).map_err(|e| Error::io(path, e))
    }
}

/// Random-walk Metropolis–Hastings settings, one chain per particle. Each
/// chain starts at the first uniform draw where the density is positive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MhParams {
    pub step: f64,
    pub burn_in: usize,
}

impl Default for MhParams {
    fn default() -> Self {
        Self {
            step: 0.8,
            burn_in: 200,
        }
    }
}

/// How initial positions are drawn from the normalized initial datum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "method")]
pub enum InitialSampler {
    MetropolisHastings(MhParams),
    /// Exact rejection from the uniform law; `sup` must bound the density.
    Rejection {
        sup: f64,
    },
}

impl Default for InitialSampler {
    fn default() -> Self {
        InitialSampler::MetropolisHastings(MhParams::default())
    }
}

const MAX_REJECTION_TRIES: usize = 10_000_000;
/// Uniform draws allowed to find a chain start with positive density.
const MAX_START_TRIES: usize = 10_000;

fn checked_density<F: Fn(&[f64]) -> f64>(rho: &F, x: &[f64]) -> Result<f64> {
    let p = rho(x);
    if p.is_nan() || p < 0.0 {
        return Err(Error::Model(format!(
            "initial density is {p} at {x:?}; it must be non-negative"
        )));
    }
    Ok(p)
}

/// Draws `n` particles approximately i.i.d. from `rho / ∫rho`.
///
/// `population` separates the streams of different species in one run.
pub fn sample_initial<F>(
    domain: TorusDomain,
    rho: F,
    n: usize,
    sampler: &InitialSampler,
    seed: u64,
    population: u64,
) -> Result<ParticleSet>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    if n == 0 {
        return Err(Error::InvalidArgument("need at least one particle".into()));
    }
    let d = domain.dim();
    let tag = rng::tag(KERNEL_INIT, population);
    let draw = |i: usize| -> Result<Vec<f64>> {
        let mut r = rng::stream(seed, 0, tag, i as u64);
        let uniform_point = |r: &mut rand_chacha::ChaCha8Rng| -> Vec<f64> {
            (0..d)
                .map(|_| domain.origin() + domain.side() * r.random::<f64>())
                .map(|x| domain.wrap_coord(x))
                .collect()
        };
        match *sampler {
            InitialSampler::MetropolisHastings(mh) => {
                let mut x = uniform_point(&mut r);
                let mut p = checked_density(&rho, &x)?;
                let mut tries = 1;
                while p == 0.0 && tries < MAX_START_TRIES {
                    x = uniform_point(&mut r);
                    p = checked_density(&rho, &x)?;
                    tries += 1;
                }
                let mut accepted = 0usize;
                let mut y = vec![0.0; d];
                for _ in 0..mh.burn_in {
                    for (yj, xj) in y.iter_mut().zip(&x) {
                        let xi: f64 = r.sample(StandardNormal);
                        *yj = domain.wrap_coord(xj + mh.step * xi);
                    }
                    let q = checked_density(&rho, &y)?;
                    let u: f64 = r.random();
                    if p == 0.0 || u * p < q {
                        std::mem::swap(&mut x, &mut y);
                        p = q;
                        accepted += 1;
                    }
                }
                if mh.burn_in > 0 && (accepted == 0 || p == 0.0) {
                    return Err(Error::PathologicalDensity(format!(
                        "chain {i} made no progress during {} burn-in steps",
                        mh.burn_in
                    )));
                }
                Ok(x)
            }
            InitialSampler::Rejection { sup } => {
                for _ in 0..MAX_REJECTION_TRIES {
                    let x = uniform_point(&mut r);
                    let p = checked_density(&rho, &x)?;
                    if p > sup {
                        return Err(Error::Model(format!(
                            "density {p} at {x:?} exceeds the declared bound {sup}"
                        )));
                    }
                    if r.random::<f64>() * sup < p {
                        return Ok(x);
                    }
                }
                Err(Error::PathologicalDensity(format!(
                    "rejection sampler found no point in {MAX_REJECTION_TRIES} tries"
                )))
            }
        }
    };
    let points: Vec<Vec<f64>> = (0..n).into_par_iter().map(draw).collect::<Result<_>>()?;
    let positions = points.into_iter().flatten().collect();
    ParticleSet::new(domain, positions, n)
}

/// Trapezoid-rule integral of a non-negative function over the torus.
pub fn compute_z<F>(domain: &TorusDomain, u0: F, quad_points: usize) -> Result<f64>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let grid = domain.uniform_grid(quad_points)?;
    let d = domain.dim();
    let samples: Vec<f64> = grid
        .par_chunks(d)
        .map(|x| checked_density(&u0, x))
        .collect::<Result<_>>()?;
    let sum = crate::numeric::pairwise_sum(&samples);
    Ok(sum * domain.grid_spacing(quad_points).powi(d as i32))
}
