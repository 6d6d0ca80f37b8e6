//! The two stochastic particle kernels: Euler–Maruyama transport and the
//! Poisson-birth / Bernoulli-death branching step.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::numeric::ln_factorial;
use crate::particles::ParticleSet;
use crate::rng::{self, KERNEL_BRANCH, KERNEL_SDE};

/// Velocity field sampled at the particles of a set.
pub trait DriftField: Sync {
    /// Flattened `len × d` velocities.
    fn velocities(&self, set: &ParticleSet) -> Vec<f64>;
}

/// Growth rate sampled at the particles of a set.
pub trait RateField: Sync {
    fn rates(&self, set: &ParticleSet) -> Vec<f64>;
}

/// Spatially constant velocity.
#[derive(Debug, Clone)]
pub struct ConstantDrift(pub Vec<f64>);

impl DriftField for ConstantDrift {
    fn velocities(&self, set: &ParticleSet) -> Vec<f64> {
        self.0.iter().copied().cycle().take(set.positions().len()).collect()
    }
}

/// Pointwise drift `f(x, out)`.
pub struct FnDrift<F>(pub F);

impl<F> DriftField for FnDrift<F>
where
    F: Fn(&[f64], &mut [f64]) + Sync,
{
    fn velocities(&self, set: &ParticleSet) -> Vec<f64> {
        let d = set.dim();
        let mut out = vec![0.0; set.positions().len()];
        out.par_chunks_mut(d)
            .zip(set.positions().par_chunks(d))
            .for_each(|(o, x)| (self.0)(x, o));
        out
    }
}

/// Precomputed per-particle velocities.
pub struct SampledDrift(pub Vec<f64>);

impl DriftField for SampledDrift {
    fn velocities(&self, set: &ParticleSet) -> Vec<f64> {
        assert_eq!(
            self.0.len(),
            set.positions().len(),
            "drift samples do not match the set"
        );
        self.0.clone()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ConstantRate(pub f64);

impl RateField for ConstantRate {
    fn rates(&self, set: &ParticleSet) -> Vec<f64> {
        vec![self.0; set.len()]
    }
}

pub struct FnRate<F>(pub F);

impl<F> RateField for FnRate<F>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    fn rates(&self, set: &ParticleSet) -> Vec<f64> {
        set.positions().par_chunks(set.dim()).map(&self.0).collect()
    }
}

pub struct SampledRate(pub Vec<f64>);

impl RateField for SampledRate {
    fn rates(&self, set: &ParticleSet) -> Vec<f64> {
        assert_eq!(self.0.len(), set.len(), "rate samples do not match the set");
        self.0.clone()
    }
}

/// One Euler–Maruyama step `X ← wrap(X + b(X) τ + σ √τ ξ)`.
///
/// Each particle's noise comes from the stream `(seed, step, SDE/population,
/// lineage id)`. Count, order and ids are unchanged.
pub fn sde_propagate(
    set: &ParticleSet,
    tau: f64,
    drift: &dyn DriftField,
    sigma: f64,
    step: u64,
    seed: u64,
    population: u64,
) -> Result<ParticleSet> {
    if !(tau > 0.0) {
        return Err(Error::InvalidArgument(format!("time step must be positive, got {tau}")));
    }
    if !(sigma >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "diffusion amplitude must be >= 0, got {sigma}"
        )));
    }
    let d = set.dim();
    let domain = *set.domain();
    let velocities = drift.velocities(set);
    if let Some(bad) = velocities.iter().position(|v| !v.is_finite()) {
        let i = bad / d;
        return Err(Error::Blowup {
            step: step as usize,
            reason: format!(
                "non-finite drift {} at particle position {:?}",
                velocities[bad],
                set.position(i)
            ),
        });
    }
    let tag = rng::tag(KERNEL_SDE, population);
    let noise = sigma * tau.sqrt();
    let mut positions = set.positions().to_vec();
    positions
        .par_chunks_mut(d)
        .zip(velocities.par_chunks(d))
        .zip(set.ids().par_iter())
        .with_min_len(256)
        .for_each(|((x, b), &id)| {
            let mut r = rng::stream(seed, step, tag, id);
            for (xj, bj) in x.iter_mut().zip(b) {
                let xi: f64 = if noise > 0.0 { r.sample(StandardNormal) } else { 0.0 };
                *xj = domain.wrap_coord(*xj + bj * tau + noise * xi);
            }
        });
    Ok(ParticleSet::from_parts(
        domain,
        positions,
        set.ids().to_vec(),
        set.n_initial(),
    ))
}

/// Safeguards applied by [`birth_death`].
#[derive(Debug, Clone, Copy)]
pub struct BranchLimits {
    /// Bound on `|c τ|`.
    pub rate_cap: f64,
    /// Largest admissible population after the step.
    pub population_cap: usize,
}

impl Default for BranchLimits {
    fn default() -> Self {
        Self {
            rate_cap: 5.0,
            population_cap: usize::MAX,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct BranchStats {
    pub births: usize,
    pub deaths: usize,
    /// Particles whose rate was clamped to the cap.
    pub capped: usize,
}

/// Poisson birth / Bernoulli death over one step of length `tau`.
///
/// With `c` the (capped) rate at a particle: for `c > 0` the parent is kept
/// and `Poisson(e^{cτ} - 1)` copies are spawned at its position; for `c < 0`
/// it survives with probability `e^{cτ}`; for `c = 0` it is kept. Output
/// order: surviving parents in input order, then children grouped by parent.
pub fn birth_death(
    set: &ParticleSet,
    tau: f64,
    rate: &dyn RateField,
    step: u64,
    seed: u64,
    population: u64,
    limits: &BranchLimits,
) -> Result<(ParticleSet, BranchStats)> {
    if !(tau > 0.0) {
        return Err(Error::InvalidArgument(format!("time step must be positive, got {tau}")));
    }
    let rates = rate.rates(set);
    if let Some(i) = rates.iter().position(|c| c.is_nan()) {
        return Err(Error::Blowup {
            step: step as usize,
            reason: format!("NaN branching rate at particle position {:?}", set.position(i)),
        });
    }
    let tag = rng::tag(KERNEL_BRANCH, population);
    let max_rate = limits.rate_cap / tau;

    // (copies of the parent: 0 = died, 1 = kept, 1 + k = kept with k children)
    let outcomes: Vec<(u64, bool)> = rates
        .par_iter()
        .zip(set.ids().par_iter())
        .with_min_len(256)
        .map(|(&c_raw, &id)| -> Result<(u64, bool)> {
            let capped = c_raw.abs() > max_rate;
            let c = c_raw.clamp(-max_rate, max_rate);
            if c == 0.0 {
                return Ok((1, capped));
            }
            let mut r = rng::stream(seed, step, tag, id);
            if c > 0.0 {
                let k = sample_poisson((c * tau).exp_m1(), &mut r)?;
                Ok((1 + k, capped))
            } else {
                let keep = r.random::<f64>() < (c * tau).exp();
                Ok((keep as u64, capped))
            }
        })
        .collect::<Result<_>>()?;

    let mut stats = BranchStats::default();
    let mut total = 0usize;
    for &(copies, capped) in &outcomes {
        total += copies as usize;
        stats.capped += capped as usize;
        match copies {
            0 => stats.deaths += 1,
            c => stats.births += c as usize - 1,
        }
    }
    if total > limits.population_cap {
        return Err(Error::PopulationExplosion {
            step: step as usize,
            count: total,
            cap: limits.population_cap,
        });
    }

    let d = set.dim();
    let mut positions = Vec::with_capacity(total * d);
    let mut ids = Vec::with_capacity(total);
    for (i, &(copies, _)) in outcomes.iter().enumerate() {
        if copies > 0 {
            positions.extend_from_slice(set.position(i));
            ids.push(set.ids()[i]);
        }
    }
    for (i, &(copies, _)) in outcomes.iter().enumerate() {
        let parent = set.ids()[i];
        for ordinal in 1..copies {
            positions.extend_from_slice(set.position(i));
            ids.push(rng::child_id(parent, step, ordinal));
        }
    }
    Ok((
        ParticleSet::from_parts(*set.domain(), positions, ids, set.n_initial()),
        stats,
    ))
}

/// Exact Poisson sampling: sequential-search inversion for `λ ≤ 10`,
/// Hörmann's transformed rejection (PTRS) above.
pub fn sample_poisson<R: Rng + ?Sized>(lambda: f64, rng: &mut R) -> Result<u64> {
    if !lambda.is_finite() || lambda < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "Poisson mean must be finite and non-negative, got {lambda}"
        )));
    }
    if lambda == 0.0 {
        return Ok(0);
    }
    if lambda <= 10.0 {
        let u: f64 = rng.random();
        let mut k = 0u64;
        let mut p = (-lambda).exp();
        let mut cdf = p;
        // The tail beyond this point has probability below 1e-30.
        while u > cdf && k < 200 {
            k += 1;
            p *= lambda / k as f64;
            cdf += p;
        }
        return Ok(k);
    }
    let slam = lambda.sqrt();
    let loglam = lambda.ln();
    let b = 0.931 + 2.53 * slam;
    let a = -0.059 + 0.02483 * b;
    let inv_alpha = 1.1239 + 1.1328 / (b - 3.4);
    let v_r = 0.9277 - 3.6224 / (b - 2.0);
    loop {
        let u = rng.random::<f64>() - 0.5;
        let v: f64 = rng.random();
        let us = 0.5 - u.abs();
        let k = ((2.0 * a / us + b) * u + lambda + 0.43).floor();
        if us >= 0.07 && v <= v_r {
            return Ok(k as u64);
        }
        if k < 0.0 || (us < 0.013 && v > us) {
            continue;
        }
        let lhs = v.ln() + inv_alpha.ln() - (a / (us * us) + b).ln();
        let rhs = -lambda + k * loglam - ln_factorial(k as u64);
        if lhs <= rhs {
            return Ok(k as u64);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::TorusDomain;
    use crate::numeric::mean_var;

    fn point_cloud(n: usize) -> ParticleSet {
        let dom = TorusDomain::standard(2);
        let pos: Vec<f64> = (0..n).flat_map(|i| [0.001 * i as f64 % 6.0, 1.0]).collect();
        ParticleSet::new(dom, pos, n).unwrap()
    }

    #[test]
    fn zero_drift_zero_noise_is_identity() {
        let s = point_cloud(100);
        let out = sde_propagate(&s, 0.1, &ConstantDrift(vec![0.0, 0.0]), 0.0, 0, 1, 0).unwrap();
        assert_eq!(out, s);
    }

    #[test]
    fn constant_drift_shifts() {
        let dom = TorusDomain::standard(2);
        let s = ParticleSet::new(dom, vec![0.5, 0.5, 6.25, 3.0], 2).unwrap();
        let out = sde_propagate(&s, 0.1, &ConstantDrift(vec![1.0, 0.0]), 0.0, 0, 1, 0).unwrap();
        assert!((out.position(0)[0] - 0.6).abs() < 1e-12);
        assert!((out.position(1)[0] - dom.wrap_coord(6.35)).abs() < 1e-12);
        assert_eq!(out.position(1)[1], 3.0);
    }

    #[test]
    fn non_finite_drift_is_blowup() {
        let s = point_cloud(10);
        let err = sde_propagate(&s, 0.1, &ConstantDrift(vec![f64::NAN, 0.0]), 1.0, 3, 1, 0).unwrap_err();
        assert!(matches!(err, Error::Blowup { step: 3, .. }));
        assert_eq!(err.exit_code(), 4);
    }

    #[test]
    fn brownian_increment_moments() {
        let n = 100_000;
        let dom = TorusDomain::standard(2);
        let s = ParticleSet::new(dom, [3.0, 3.0].repeat(n), n).unwrap();
        let (sigma, tau) = (2f64.sqrt(), 0.01);
        let out = sde_propagate(&s, tau, &ConstantDrift(vec![0.0, 0.0]), sigma, 0, 9, 0).unwrap();
        for axis in 0..2 {
            let dx: Vec<f64> = out.positions().chunks(2).map(|p| p[axis] - 3.0).collect();
            let (mean, var) = mean_var(&dx);
            let target = sigma * sigma * tau;
            assert!(mean.abs() <= 5.0 * (target / n as f64).sqrt(), "mean {mean}");
            // var of the sample variance of a normal: 2σ⁴/(n-1)
            let se = (2.0 * target * target / (n as f64 - 1.0)).sqrt();
            assert!((var - target).abs() <= 5.0 * se, "var {var}");
        }
    }

    #[test]
    fn zero_rate_is_identity() {
        let s = point_cloud(1000);
        let (out, stats) = birth_death(&s, 0.1, &ConstantRate(0.0), 0, 1, 0, &BranchLimits::default()).unwrap();
        assert_eq!(out, s);
        assert_eq!(stats, BranchStats::default());
    }

    #[test]
    fn growth_and_decay_moments() {
        let n = 100_000;
        let s = point_cloud(n);
        let (grown, stats) = birth_death(&s, 0.1, &ConstantRate(1.0), 0, 5, 0, &BranchLimits::default()).unwrap();
        let lambda = 0.1f64.exp_m1();
        let sd = (n as f64 * lambda).sqrt();
        assert!((grown.len() as f64 - n as f64 * 0.1f64.exp()).abs() < 5.0 * sd);
        assert_eq!(stats.births, grown.len() - n);

        let (shrunk, _) = birth_death(&s, 0.1, &ConstantRate(-1.0), 0, 5, 0, &BranchLimits::default()).unwrap();
        let p = (-0.1f64).exp();
        let sd = (n as f64 * p * (1.0 - p)).sqrt();
        assert!((shrunk.len() as f64 - n as f64 * p).abs() < 5.0 * sd);
    }

    #[test]
    fn children_follow_parents() {
        let s = point_cloud(200);
        let (out, _) = birth_death(&s, 0.5, &ConstantRate(2.0), 4, 5, 0, &BranchLimits::default()).unwrap();
        // Parents first, unchanged and in order.
        assert_eq!(&out.ids()[..200], s.ids());
        assert_eq!(&out.positions()[..400], s.positions());
        // Every child sits bit-identically on some parent.
        for i in 200..out.len() {
            let p = out.position(i);
            assert!(s.positions().chunks(2).any(|q| q == p));
        }
    }

    #[test]
    fn rate_cap_and_population_cap() {
        let s = point_cloud(100);
        let limits = BranchLimits {
            rate_cap: 0.5,
            population_cap: usize::MAX,
        };
        let (_, stats) = birth_death(&s, 0.1, &ConstantRate(100.0), 0, 5, 0, &limits).unwrap();
        assert_eq!(stats.capped, 100);
        let limits = BranchLimits {
            rate_cap: 5.0,
            population_cap: 150,
        };
        let err = birth_death(&s, 1.0, &ConstantRate(5.0), 2, 5, 0, &limits).unwrap_err();
        assert!(matches!(err, Error::PopulationExplosion { step: 2, cap: 150, .. }));
    }

    #[test]
    fn poisson_small_and_large() {
        let mut r = rng::stream(1, 0, 0, 0);
        assert_eq!(sample_poisson(0.0, &mut r).unwrap(), 0);
        assert!(sample_poisson(f64::NAN, &mut r).is_err());
        assert!(sample_poisson(-1.0, &mut r).is_err());
        for &lambda in &[0.10517f64, 3.0, 50.0, 140.0] {
            let n = 1_000_000;
            let draws: Vec<f64> = (0..n).map(|_| sample_poisson(lambda, &mut r).unwrap() as f64).collect();
            let (mean, var) = mean_var(&draws);
            assert!(
                (mean - lambda).abs() < 5.0 * (lambda / n as f64).sqrt(),
                "λ={lambda} mean={mean}"
            );
            // Var of the sample variance for Poisson ≈ (λ + 2λ²)/n.
            let se = ((lambda + 2.0 * lambda * lambda) / n as f64).sqrt();
            assert!((var - lambda).abs() < 5.0 * se, "λ={lambda} var={var}");
        }
    }

    #[test]
    fn poisson_pmf_matches_at_fifty() {
        // Frequencies of a few values against the exact pmf.
        let mut r = rng::stream(2, 0, 0, 0);
        let n = 400_000usize;
        let mut counts = vec![0usize; 200];
        for _ in 0..n {
            counts[sample_poisson(50.0, &mut r).unwrap() as usize] += 1;
        }
        for k in [40u64, 50, 60] {
            let pmf = (-50.0 + k as f64 * 50f64.ln() - ln_factorial(k)).exp();
            let freq = counts[k as usize] as f64 / n as f64;
            assert!(
                (freq - pmf).abs() < 5.0 * (pmf * (1.0 - pmf) / n as f64).sqrt(),
                "k={k}"
            );
        }
    }
}
