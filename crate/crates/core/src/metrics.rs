//! Error metrics, mass series and convergence fits.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::fd::GridField;
use crate::record::{RunRecord, RunStatus};
use crate::spectral::{mode_at, SpectralField};

/// Labelled `(t, value)` pairs with strictly increasing `t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSeries {
    pub label: String,
    pub points: Vec<(f64, f64)>,
    /// Set when the source run failed; the series stops at the failure step.
    pub truncated: bool,
}

impl TimeSeries {
    pub fn new(label: &str, points: Vec<(f64, f64)>) -> Result<Self> {
        if points.windows(2).any(|w| !(w[1].0 > w[0].0)) {
            return Err(Error::InvalidArgument(format!(
                "time series `{label}` is not strictly increasing in t"
            )));
        }
        Ok(Self {
            label: label.into(),
            points,
            truncated: false,
        })
    }

    pub fn times(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.0).collect()
    }

    pub fn values(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.1).collect()
    }
}

/// `‖a − b‖₂ / ‖b‖₂` over grid values; `b` is the reference.
pub fn rel_l2_grid(a: &GridField, b: &GridField) -> Result<f64> {
    if a.n() != b.n() || a.domain() != b.domain() {
        return Err(Error::InvalidArgument(format!(
            "grids differ: {} vs {} points per axis",
            a.n(),
            b.n()
        )));
    }
    let (mut num, mut den) = (0.0, 0.0);
    for (x, y) in a.values().iter().zip(b.values()) {
        num += (x - y) * (x - y);
        den += y * y;
    }
    if den == 0.0 {
        return Err(Error::InvalidArgument("reference field is identically zero".into()));
    }
    Ok((num / den).sqrt())
}

/// `√(Σ_m (1+|κ_m|²)^(-s) (a_m − b_m)²)`.
pub fn h_minus_s_distance(f: &SpectralField, g: &SpectralField, s: f64) -> Result<f64> {
    if f.order() != g.order() || f.domain() != g.domain() {
        return Err(Error::InvalidArgument(format!(
            "fields differ in truncation or domain (K = {} vs {})",
            f.order(),
            g.order()
        )));
    }
    let omega = 2.0 * PI / f.domain().side();
    let dim = f.domain().dim();
    let sum: f64 = f
        .coeffs()
        .iter()
        .zip(g.coeffs())
        .enumerate()
        .map(|(i, (a, b))| {
            let k2 = mode_at(i, dim, f.order()).norm_sq() as f64;
            (1.0 + omega * omega * k2).powf(-s) * (a - b) * (a - b)
        })
        .sum();
    Ok(sum.sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Species {
    U,
    V,
}

/// Per-step mass estimates of one species.
pub fn mass_series(record: &RunRecord, which: Species) -> TimeSeries {
    let label = match which {
        Species::U => "mass_u",
        Species::V => "mass_v",
    };
    let points = record
        .series
        .iter()
        .map(|r| {
            (
                r.t,
                match which {
                    Species::U => r.mass_u,
                    Species::V => r.mass_v,
                },
            )
        })
        .collect();
    TimeSeries {
        label: label.into(),
        points,
        truncated: matches!(record.status, RunStatus::Failed { .. }),
    }
}

/// `π² + 7π² e^{-t}`: the mass of `v` for the linear Keller–Segel preset.
pub fn exact_mass_case2(t: f64) -> f64 {
    PI * PI * (1.0 + 7.0 * (-t).exp())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlopeFit {
    pub slope: f64,
    pub intercept: f64,
    /// Root-mean-square residual in log space.
    pub residual: f64,
}

/// Least-squares fit of `ln(error)` against `ln(N)`.
pub fn fit_convergence_slope(pairs: &[(f64, f64)]) -> Result<SlopeFit> {
    if pairs.len() < 3 {
        return Err(Error::InvalidArgument(format!(
            "need at least 3 (N, error) pairs, got {}",
            pairs.len()
        )));
    }
    if let Some(p) = pairs.iter().find(|(n, e)| !(*n > 0.0 && *e > 0.0)) {
        return Err(Error::InvalidArgument(format!("non-positive pair {p:?}")));
    }
    let xs: Vec<f64> = pairs.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = pairs.iter().map(|p| p.1.ln()).collect();
    let m = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / m, ys.iter().sum::<f64>() / m);
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidArgument("all pairs share the same N".into()));
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let residual = (xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (y - intercept - slope * x).powi(2))
        .sum::<f64>()
        / m)
        .sqrt();
    Ok(SlopeFit {
        slope,
        intercept,
        residual,
    })
}

/// One row of a metrics report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub metric: String,
    pub at: f64,
    pub value: f64,
}

pub fn metrics_csv(rows: &[MetricRow]) -> String {
    let mut s = String::from("metric,at,value\n");
    for r in rows {
        s.push_str(&format!("{},{:.16e},{:.16e}\n", r.metric, r.at, r.value));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::TorusDomain;
    use crate::spectral::mode_count;
    use rand::{Rng, SeedableRng};

    fn grid(values: Vec<f64>) -> GridField {
        GridField::new(TorusDomain::standard(2), 4, values).unwrap()
    }

    #[test]
    fn rel_l2_examples() {
        let b: Vec<f64> = (0..16).map(|i| 1.0 + i as f64).collect();
        let norm = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        let gb = grid(b.clone());
        assert_eq!(rel_l2_grid(&gb, &gb).unwrap(), 0.0);
        let g2 = grid(b.iter().map(|x| 2.0 * x).collect());
        assert!((rel_l2_grid(&g2, &gb).unwrap() - 1.0).abs() < 1e-15);
        let delta = 0.3;
        let shifted = grid(b.iter().map(|x| x + delta).collect());
        let want = delta * 4.0 / norm;
        assert!((rel_l2_grid(&shifted, &gb).unwrap() - want).abs() < 1e-14);
        let scaled = |g: &GridField, a: f64| grid(g.values().iter().map(|x| a * x).collect());
        let r1 = rel_l2_grid(&shifted, &gb).unwrap();
        let r2 = rel_l2_grid(&scaled(&shifted, -3.0), &scaled(&gb, -3.0)).unwrap();
        assert!((r1 - r2).abs() < 1e-14);
        assert!(rel_l2_grid(&gb, &grid(vec![0.0; 16])).is_err());
    }

    fn random_field(rng: &mut impl Rng, order: usize) -> SpectralField {
        let dom = TorusDomain::standard(2);
        let c = (0..mode_count(2, order)).map(|_| rng.random::<f64>() - 0.5).collect();
        SpectralField::from_coeffs(dom, order, c).unwrap()
    }

    #[test]
    fn h_minus_s_matches_direct_sum() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let (f, g) = (random_field(&mut rng, 3), random_field(&mut rng, 3));
        let s = 2.5;
        let mut want = 0.0;
        for k1 in -3i64..=3 {
            for k2 in -3i64..=3 {
                let m = crate::spectral::ModeIndex(vec![k1, k2]);
                let d = f.coeff(&m) - g.coeff(&m);
                want += (1.0 + (k1 * k1 + k2 * k2) as f64).powf(-s) * d * d;
            }
        }
        let got = h_minus_s_distance(&f, &g, s).unwrap();
        assert!((got - want.sqrt()).abs() < 1e-14);
        assert_eq!(h_minus_s_distance(&f, &f, s).unwrap(), 0.0);

        let mut z = SpectralField::zeros(*f.domain(), 3);
        z.set_coeff(&crate::spectral::ModeIndex(vec![0, 0]), -0.7).unwrap();
        let zero = SpectralField::zeros(*f.domain(), 3);
        assert!((h_minus_s_distance(&z, &zero, s).unwrap() - 0.7).abs() < 1e-15);
        assert!(h_minus_s_distance(&f, &SpectralField::zeros(*f.domain(), 2), s).is_err());
    }

    #[test]
    fn h_minus_s_is_a_metric() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let (a, b, c) = (
                random_field(&mut rng, 2),
                random_field(&mut rng, 2),
                random_field(&mut rng, 2),
            );
            let d = |x: &SpectralField, y: &SpectralField| h_minus_s_distance(x, y, 3.0).unwrap();
            assert!((d(&a, &b) - d(&b, &a)).abs() < 1e-15);
            assert!(d(&a, &c) <= d(&a, &b) + d(&b, &c) + 1e-15);
        }
    }

    #[test]
    fn exact_mass() {
        assert!((exact_mass_case2(0.0) - 8.0 * PI * PI).abs() < 1e-12);
        assert!((exact_mass_case2(0.5) - 51.77).abs() < 5e-3);
        assert!((exact_mass_case2(60.0) - PI * PI).abs() < 1e-12);
        let h = 1e-4;
        for t in [0.0, 0.3, 1.0, 2.5] {
            let deriv = (exact_mass_case2(t + h) - exact_mass_case2(t - h)) / (2.0 * h);
            assert!((deriv + exact_mass_case2(t) - PI * PI).abs() <= 1e-6);
        }
    }

    #[test]
    fn slopes() {
        let ns: [f64; 4] = [1e4, 2e4, 4e4, 8e4];
        let half: Vec<(f64, f64)> = ns.iter().map(|&n| (n, 3.0 / n.sqrt())).collect();
        assert!((fit_convergence_slope(&half).unwrap().slope + 0.5).abs() < 1e-12);
        let one: Vec<(f64, f64)> = ns.iter().map(|&n| (n, 7.0 / n)).collect();
        let fit = fit_convergence_slope(&one).unwrap();
        assert!((fit.slope + 1.0).abs() < 1e-12 && fit.residual < 1e-12);
        assert!(fit_convergence_slope(&half[..2]).is_err());
        assert!(fit_convergence_slope(&[(1.0, 1.0), (2.0, 0.0), (3.0, 1.0)]).is_err());
        assert!(fit_convergence_slope(&[(1.0, 1.0), (1.0, 2.0), (1.0, 3.0)]).is_err());
    }

    #[test]
    fn series_must_increase() {
        assert!(TimeSeries::new("m", vec![(0.0, 1.0), (0.0, 2.0)]).is_err());
        assert!(TimeSeries::new("m", vec![(0.0, 1.0), (0.1, 2.0)]).is_ok());
    }
}
