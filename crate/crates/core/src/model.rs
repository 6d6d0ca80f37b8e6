//! Model coefficients, initial data and the named presets.
//!
//! Coefficient functions are drawn from small parametric families so that a
//! model can be written down completely in a JSON config.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::geometry::TorusDomain;

/// `A exp(-rate |x - center|²)` with the periodic (minimum-image) distance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianBump {
    pub amplitude: f64,
    pub rate: f64,
    pub center: Vec<f64>,
}

/// Initial datum families.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum InitialDatum {
    Constant {
        value: f64,
    },
    /// `A sin²(x₁) Π_{j>1} cos²(x_j)`.
    SinCosSquared {
        amplitude: f64,
    },
    /// `A (Σ_j cos x_j + offset)`.
    CosineSum {
        amplitude: f64,
        offset: f64,
    },
    Gaussians {
        bumps: Vec<GaussianBump>,
    },
}

impl InitialDatum {
    pub fn eval(&self, domain: &TorusDomain, x: &[f64]) -> f64 {
        match self {
            InitialDatum::Constant { value } => *value,
            InitialDatum::SinCosSquared { amplitude } => {
                let mut v = amplitude * x[0].sin().powi(2);
                for xj in &x[1..] {
                    v *= xj.cos().powi(2);
                }
                v
            }
            InitialDatum::CosineSum { amplitude, offset } => {
                amplitude * (x.iter().map(|xj| xj.cos()).sum::<f64>() + offset)
            }
            InitialDatum::Gaussians { bumps } => bumps
                .iter()
                .map(|b| b.amplitude * (-b.rate * domain.distance_sq(x, &b.center)).exp())
                .sum(),
        }
    }

    /// An upper bound usable by the rejection sampler, when cheaply known.
    pub fn sup_bound(&self) -> Option<f64> {
        match self {
            InitialDatum::Constant { value } => Some(*value),
            InitialDatum::SinCosSquared { amplitude } => Some(amplitude.abs()),
            InitialDatum::CosineSum { .. } => None,
            InitialDatum::Gaussians { bumps } => Some(bumps.iter().map(|b| b.amplitude.abs()).sum()),
        }
    }

    pub fn scaled(&self, factor: f64) -> Self {
        match self {
            InitialDatum::Constant { value } => InitialDatum::Constant { value: value * factor },
            InitialDatum::SinCosSquared { amplitude } => InitialDatum::SinCosSquared {
                amplitude: amplitude * factor,
            },
            InitialDatum::CosineSum { amplitude, offset } => InitialDatum::CosineSum {
                amplitude: amplitude * factor,
                offset: *offset,
            },
            InitialDatum::Gaussians { bumps } => InitialDatum::Gaussians {
                bumps: bumps
                    .iter()
                    .map(|b| GaussianBump {
                        amplitude: b.amplitude * factor,
                        ..b.clone()
                    })
                    .collect(),
            },
        }
    }

    fn check_dim(&self, dim: usize) -> Result<()> {
        if let InitialDatum::Gaussians { bumps } = self {
            if let Some(b) = bumps.iter().find(|b| b.center.len() != dim) {
                return Err(Error::Model(format!(
                    "Gaussian center {:?} does not have dimension {dim}",
                    b.center
                )));
            }
        }
        Ok(())
    }
}

/// Advection coefficient `a(u)` of the scalar equation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Advection {
    Zero,
    Constant { velocity: Vec<f64> },
}

impl Advection {
    pub fn is_zero(&self) -> bool {
        match self {
            Advection::Zero => true,
            Advection::Constant { velocity } => velocity.iter().all(|&v| v == 0.0),
        }
    }

    /// Writes `a(u)` into `out`.
    pub fn eval(&self, _u: f64, out: &mut [f64]) {
        match self {
            Advection::Zero => out.fill(0.0),
            Advection::Constant { velocity } => out.copy_from_slice(velocity),
        }
    }
}

/// Reaction rate `r(u)`, the reaction term being `r(u) u`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Reaction {
    Constant {
        rate: f64,
    },
    /// `1 - u²`, i.e. `u - u³`.
    AllenCahn,
    /// `growth (1 - u / capacity)`.
    Logistic {
        growth: f64,
        capacity: f64,
    },
}

impl Reaction {
    pub fn is_zero(&self) -> bool {
        matches!(self, Reaction::Constant { rate } if *rate == 0.0)
    }

    pub fn eval(&self, u: f64) -> f64 {
        match self {
            Reaction::Constant { rate } => *rate,
            Reaction::AllenCahn => 1.0 - u * u,
            Reaction::Logistic { growth, capacity } => growth * (1.0 - u / capacity),
        }
    }
}

/// Chemotactic sensitivity `χ(u)` in the flux `χ(u) ∇v`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Chemotaxis {
    /// `coef · u`.
    Linear { coef: f64 },
    /// `coef · u / (1 + u²)`.
    Saturating { coef: f64 },
}

impl Chemotaxis {
    pub fn eval(&self, u: f64) -> f64 {
        u * self.ratio(u)
    }

    /// `χ(u) / u`, the per-particle velocity factor, continuous at `u = 0`.
    pub fn ratio(&self, u: f64) -> f64 {
        match self {
            Chemotaxis::Linear { coef } => *coef,
            Chemotaxis::Saturating { coef } => coef / (1.0 + u * u),
        }
    }

    /// `sup_u |χ(u)/u|`, used for explicit stability bounds.
    pub fn max_ratio(&self) -> f64 {
        match self {
            Chemotaxis::Linear { coef } | Chemotaxis::Saturating { coef } => coef.abs(),
        }
    }
}

/// Source term `f(u, v)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Source {
    Zero,
    /// `u_coef · u + v_coef · v`.
    Linear {
        u_coef: f64,
        v_coef: f64,
    },
    /// `growth · u (1 - u)`.
    Logistic {
        growth: f64,
    },
}

impl Source {
    pub fn is_zero(&self) -> bool {
        matches!(self, Source::Zero)
    }

    pub fn eval(&self, u: f64, v: f64) -> f64 {
        match self {
            Source::Zero => 0.0,
            Source::Linear { u_coef, v_coef } => u_coef * u + v_coef * v,
            Source::Logistic { growth } => growth * u * (1.0 - u),
        }
    }
}

/// `∂_t u = ∇·(a(u) u) + D Δu + r(u) u`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalarModel {
    pub advection: Advection,
    pub reaction: Reaction,
    pub diffusion: f64,
    pub initial: InitialDatum,
    /// Analytic `∫u₀`; computed by quadrature when absent.
    #[serde(default)]
    pub mass: Option<f64>,
}

impl ScalarModel {
    pub fn validate(&self, domain: &TorusDomain) -> Result<()> {
        if !(self.diffusion > 0.0 && self.diffusion.is_finite()) {
            return Err(Error::Model(format!(
                "diffusion must be positive, got {}",
                self.diffusion
            )));
        }
        if let Advection::Constant { velocity } = &self.advection {
            if velocity.len() != domain.dim() {
                return Err(Error::Model("advection velocity has the wrong dimension".into()));
            }
        }
        if let Some(z) = self.mass {
            if !(z > 0.0) {
                return Err(Error::Model(format!("initial mass must be positive, got {z}")));
            }
        }
        self.initial.check_dim(domain.dim())
    }
}

/// `∂_t u = ∇·(∇u − χ(u)∇v) + f_u(u, v)`, `∂_t v = Δv + f_v(u, v)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KsModel {
    pub chemotaxis: Chemotaxis,
    pub source_u: Source,
    pub source_v: Source,
    pub initial_u: InitialDatum,
    pub initial_v: InitialDatum,
    #[serde(default)]
    pub mass_u: Option<f64>,
    #[serde(default)]
    pub mass_v: Option<f64>,
}

impl KsModel {
    pub fn validate(&self, domain: &TorusDomain) -> Result<()> {
        for z in [self.mass_u, self.mass_v].into_iter().flatten() {
            if !(z > 0.0) {
                return Err(Error::Model(format!("initial mass must be positive, got {z}")));
            }
        }
        self.initial_u.check_dim(domain.dim())?;
        self.initial_v.check_dim(domain.dim())
    }
}

/// A model selected by preset name or given in full.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "system", rename_all = "kebab-case")]
pub enum Model {
    Scalar(ScalarModel),
    KellerSegel(KsModel),
}

fn sin2cos2() -> InitialDatum {
    InitialDatum::SinCosSquared { amplitude: 1.0 }
}

fn bumps(amplitude: f64, rate: f64, centers: &[[f64; 2]]) -> InitialDatum {
    InitialDatum::Gaussians {
        bumps: centers
            .iter()
            .map(|c| GaussianBump {
                amplitude,
                rate,
                center: c.to_vec(),
            })
            .collect(),
    }
}

pub const PRESETS: &[&str] = &["allen-cahn", "heat", "growth", "ks-linear", "ks-blowup", "ks-logistic"];

/// Looks up a named model.
pub fn preset(name: &str) -> Result<Model> {
    let ks_linear_sources = (
        Source::Zero,
        Source::Linear {
            u_coef: 1.0,
            v_coef: -1.0,
        },
    );
    Ok(match name {
        "allen-cahn" => Model::Scalar(ScalarModel {
            advection: Advection::Zero,
            reaction: Reaction::AllenCahn,
            diffusion: 0.01,
            initial: sin2cos2(),
            mass: Some(PI * PI),
        }),
        "heat" => Model::Scalar(ScalarModel {
            advection: Advection::Zero,
            reaction: Reaction::Constant { rate: 0.0 },
            diffusion: 0.1,
            initial: sin2cos2(),
            mass: Some(PI * PI),
        }),
        "growth" => Model::Scalar(ScalarModel {
            advection: Advection::Zero,
            reaction: Reaction::Constant { rate: 1.0 },
            diffusion: 0.1,
            initial: sin2cos2(),
            mass: Some(PI * PI),
        }),
        "ks-linear" => Model::KellerSegel(KsModel {
            chemotaxis: Chemotaxis::Linear { coef: 1.0 },
            source_u: ks_linear_sources.0,
            source_v: ks_linear_sources.1,
            initial_u: sin2cos2(),
            initial_v: InitialDatum::CosineSum {
                amplitude: 1.0,
                offset: 2.0,
            },
            mass_u: Some(PI * PI),
            mass_v: Some(8.0 * PI * PI),
        }),
        "ks-blowup" => Model::KellerSegel(KsModel {
            chemotaxis: Chemotaxis::Linear { coef: 1.0 },
            source_u: ks_linear_sources.0,
            source_v: ks_linear_sources.1,
            initial_u: bumps(840.0, 84.0, &[[0.0, 0.0]]),
            initial_v: bumps(420.0, 42.0, &[[0.0, 0.0]]),
            mass_u: None,
            mass_v: None,
        }),
        "ks-logistic" => Model::KellerSegel(KsModel {
            chemotaxis: Chemotaxis::Saturating { coef: 4.0 },
            source_u: Source::Logistic { growth: 1.0 },
            source_v: ks_linear_sources.1,
            initial_u: bumps(1.0, 1.0, &[[0.5 * PI, 0.5 * PI], [PI, PI], [1.5 * PI, 1.5 * PI]]),
            initial_v: bumps(
                1.0,
                1.0,
                &[
                    [0.4 * PI, 0.4 * PI],
                    [0.8 * PI, 0.8 * PI],
                    [1.2 * PI, 1.2 * PI],
                    [1.6 * PI, 1.6 * PI],
                ],
            ),
            mass_u: None,
            mass_v: None,
        }),
        other => {
            return Err(Error::Config(format!(
                "unknown preset `{other}` (known: {})",
                PRESETS.join(", ")
            )))
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_resolve() {
        for name in PRESETS {
            let m = preset(name).unwrap();
            let dom = TorusDomain::standard(2);
            match m {
                Model::Scalar(s) => s.validate(&dom).unwrap(),
                Model::KellerSegel(k) => k.validate(&dom).unwrap(),
            }
        }
        assert!(matches!(preset("nope"), Err(Error::Config(_))));
    }

    #[test]
    fn blowup_datum_is_periodic_around_origin() {
        let dom = TorusDomain::standard(2);
        let Model::KellerSegel(ks) = preset("ks-blowup").unwrap() else {
            panic!()
        };
        let at = |x: &[f64]| ks.initial_u.eval(&dom, x);
        assert_eq!(at(&[0.0, 0.0]), 840.0);
        let near = at(&[0.05, 0.0]);
        let wrapped = at(&[2.0 * PI - 0.05, 0.0]);
        assert!((near - wrapped).abs() < 1e-9 * near);
    }

    #[test]
    fn coefficient_families() {
        assert_eq!(Reaction::AllenCahn.eval(0.5), 0.75);
        assert_eq!(Chemotaxis::Saturating { coef: 4.0 }.eval(1.0), 2.0);
        assert_eq!(Chemotaxis::Linear { coef: 1.0 }.ratio(0.0), 1.0);
        assert_eq!(
            Source::Linear {
                u_coef: 1.0,
                v_coef: -1.0
            }
            .eval(3.0, 1.0),
            2.0
        );
        assert_eq!(Source::Logistic { growth: 1.0 }.eval(0.5, 9.0), 0.25);
        let model: Model = serde_json::from_str(
            r#"{"system":"scalar","advection":{"kind":"zero"},"reaction":{"kind":"allen-cahn"},
                "diffusion":0.01,"initial":{"kind":"sin-cos-squared","amplitude":1.0}}"#,
        )
        .unwrap();
        assert!(matches!(model, Model::Scalar(ScalarModel { mass: None, .. })));
    }
}
