//! Explicit finite-difference reference solvers on uniform periodic grids.
//!
//! Second-order central differences with explicit Euler in time. The
//! chemotaxis term is in flux form: face values of `χ(u)` are averaged from
//! the two adjacent cells and multiplied by the face difference of `v`, so the
//! discrete `u`-mass changes only through the source term.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::time::Instant;

use crate::error::{Error, Result};
use crate::geometry::TorusDomain;
use crate::model::{Advection, KsModel, Model, ScalarModel};
use crate::numeric::pairwise_sum;
use crate::record::{FieldData, RunRecord, RunStatus, SeriesRow, Snapshot};

/// Values on `uniform_grid(n)`, row-major with axis 0 slowest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridField {
    domain: TorusDomain,
    n: usize,
    values: Vec<f64>,
}

impl GridField {
    pub fn new(domain: TorusDomain, n: usize, values: Vec<f64>) -> Result<Self> {
        if n == 0 || values.len() != n.pow(domain.dim() as u32) {
            return Err(Error::InvalidArgument(format!(
                "{} values do not fill a {n}^{} grid",
                values.len(),
                domain.dim()
            )));
        }
        Ok(Self { domain, n, values })
    }

    pub fn from_fn<F>(domain: TorusDomain, n: usize, f: F) -> Result<Self>
    where
        F: Fn(&[f64]) -> f64 + Sync,
    {
        let pts = domain.uniform_grid(n)?;
        let values = pts.par_chunks(domain.dim()).map(&f).collect();
        Self::new(domain, n, values)
    }

    pub fn domain(&self) -> &TorusDomain {
        &self.domain
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn spacing(&self) -> f64 {
        self.domain.grid_spacing(self.n)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Riemann sum `Σ U h^d`.
    pub fn mass(&self) -> f64 {
        pairwise_sum(&self.values) * self.spacing().powi(self.domain.dim() as i32)
    }

    /// Every `factor`-th point per axis, onto the grid of size `n / factor`.
    pub fn restrict(&self, factor: usize) -> Result<Self> {
        if factor == 0 || !self.n.is_multiple_of(factor) {
            return Err(Error::InvalidArgument(format!(
                "cannot restrict a {}-point grid by {factor}",
                self.n
            )));
        }
        let m = self.n / factor;
        let d = self.domain.dim();
        let values = (0..m.pow(d as u32))
            .map(|i| {
                let mut rest = i;
                let mut idx = 0;
                let mut stride = 1;
                for _ in 0..d {
                    idx += (rest % m) * factor * stride;
                    rest /= m;
                    stride *= self.n;
                }
                self.values[idx]
            })
            .collect();
        Self::new(self.domain, m, values)
    }
}

/// Neighbour offsets on a periodic `n^d` grid.
struct Stencil {
    n: usize,
    dim: usize,
    strides: Vec<usize>,
}

impl Stencil {
    fn new(n: usize, dim: usize) -> Self {
        let strides = (0..dim).map(|j| n.pow((dim - 1 - j) as u32)).collect();
        Self { n, dim, strides }
    }

    /// Index of the neighbour of `i` one cell forward (`+1`) or back (`-1`) on `axis`.
    #[inline]
    fn shift(&self, i: usize, axis: usize, forward: bool) -> usize {
        let s = self.strides[axis];
        let digit = (i / s) % self.n;
        if forward {
            if digit + 1 == self.n {
                i + s - self.n * s
            } else {
                i + s
            }
        } else if digit == 0 {
            i + (self.n - 1) * s
        } else {
            i - s
        }
    }

    #[inline]
    fn laplacian(&self, u: &[f64], i: usize, inv_h2: f64) -> f64 {
        let mut acc = -2.0 * self.dim as f64 * u[i];
        for axis in 0..self.dim {
            acc += u[self.shift(i, axis, true)] + u[self.shift(i, axis, false)];
        }
        acc * inv_h2
    }
}

/// Largest stable explicit step for the scalar equation.
pub fn scalar_stable_step(model: &ScalarModel, h: f64, dim: usize) -> f64 {
    let mut bound = h * h / (2.0 * dim as f64 * model.diffusion);
    if let Advection::Constant { velocity } = &model.advection {
        let speed = velocity.iter().map(|v| v * v).sum::<f64>().sqrt();
        if speed > 0.0 {
            bound = bound.min(2.0 * model.diffusion / (speed * speed));
        }
    }
    bound
}

/// One explicit step of `u_t = ∇·(a u) + D Δu + r(u) u`.
pub fn fd_step_scalar(u: &GridField, model: &ScalarModel, tau: f64) -> Result<GridField> {
    let d = u.domain.dim();
    let h = u.spacing();
    let bound = scalar_stable_step(model, h, d);
    if !(tau > 0.0) || tau > bound * (1.0 + 1e-12) {
        return Err(Error::InvalidArgument(format!(
            "time step {tau} violates the explicit stability bound {bound}"
        )));
    }
    let st = Stencil::new(u.n, d);
    let inv_h2 = 1.0 / (h * h);
    let velocity: Vec<f64> = match &model.advection {
        Advection::Zero => vec![0.0; d],
        Advection::Constant { velocity } => velocity.clone(),
    };
    let vals = &u.values;
    let next: Vec<f64> = (0..vals.len())
        .into_par_iter()
        .map(|i| {
            let ui = vals[i];
            let mut rhs = model.diffusion * st.laplacian(vals, i, inv_h2);
            for (axis, &a) in velocity.iter().enumerate() {
                if a != 0.0 {
                    let du = vals[st.shift(i, axis, true)] - vals[st.shift(i, axis, false)];
                    rhs += a * du / (2.0 * h);
                }
            }
            rhs += model.reaction.eval(ui) * ui;
            ui + tau * rhs
        })
        .collect();
    let out = GridField::new(u.domain, u.n, next)?;
    if !out.is_finite() {
        return Err(Error::Blowup {
            step: 0,
            reason: "non-finite value in finite-difference update".into(),
        });
    }
    Ok(out)
}

/// `U' = U + τ (D Δ_h U + U − U³)`.
pub fn fd_step_ac(u: &GridField, diffusion: f64, tau: f64) -> Result<GridField> {
    let model = ScalarModel {
        advection: Advection::Zero,
        reaction: crate::model::Reaction::AllenCahn,
        diffusion,
        initial: crate::model::InitialDatum::Constant { value: 0.0 },
        mass: None,
    };
    fd_step_scalar(u, &model, tau)
}

/// Largest stable explicit step for the Keller–Segel system at this state.
pub fn ks_stable_step(v: &GridField, model: &KsModel) -> f64 {
    let d = v.domain.dim();
    let h = v.spacing();
    let st = Stencil::new(v.n, d);
    let max_grad = (0..v.values.len())
        .into_par_iter()
        .map(|i| {
            (0..d)
                .map(|axis| (v.values[st.shift(i, axis, true)] - v.values[i]).abs() / h)
                .fold(0.0, f64::max)
        })
        .reduce(|| 0.0, f64::max);
    let speed = model.chemotaxis.max_ratio() * max_grad * (d as f64).sqrt();
    let mut bound = h * h / (2.0 * d as f64);
    if speed > 0.0 {
        bound = bound.min(2.0 / (speed * speed)).min(h / speed);
    }
    bound
}

/// One explicit step of the Keller–Segel system with unit diffusions.
pub fn fd_step_ks(u: &GridField, v: &GridField, model: &KsModel, tau: f64) -> Result<(GridField, GridField)> {
    if u.n != v.n || u.domain != v.domain {
        return Err(Error::InvalidArgument("u and v grids differ".into()));
    }
    if !u.is_finite() || !v.is_finite() {
        return Err(Error::Blowup {
            step: 0,
            reason: "non-finite input to finite-difference step".into(),
        });
    }
    let bound = ks_stable_step(v, model);
    if !(tau > 0.0) || tau > bound * (1.0 + 1e-12) {
        return Err(Error::InvalidArgument(format!(
            "time step {tau} violates the explicit stability bound {bound}"
        )));
    }
    let d = u.domain.dim();
    let h = u.spacing();
    let st = Stencil::new(u.n, d);
    let inv_h2 = 1.0 / (h * h);
    let (uv, vv) = (&u.values, &v.values);
    let chi: Vec<f64> = uv.par_iter().map(|&x| model.chemotaxis.eval(x)).collect();
    let next: Vec<(f64, f64)> = (0..uv.len())
        .into_par_iter()
        .map(|i| {
            let mut div_flux = 0.0;
            for axis in 0..d {
                let f = st.shift(i, axis, true);
                let b = st.shift(i, axis, false);
                let flux_fwd = 0.5 * (chi[i] + chi[f]) * (vv[f] - vv[i]);
                let flux_back = 0.5 * (chi[b] + chi[i]) * (vv[i] - vv[b]);
                div_flux += flux_fwd - flux_back;
            }
            let (ui, vi) = (uv[i], vv[i]);
            let du = st.laplacian(uv, i, inv_h2) - div_flux * inv_h2 + model.source_u.eval(ui, vi);
            let dv = st.laplacian(vv, i, inv_h2) + model.source_v.eval(ui, vi);
            (ui + tau * du, vi + tau * dv)
        })
        .collect();
    let (nu, nv): (Vec<f64>, Vec<f64>) = next.into_iter().unzip();
    let (nu, nv) = (GridField::new(u.domain, u.n, nu)?, GridField::new(u.domain, u.n, nv)?);
    if !nu.is_finite() || !nv.is_finite() {
        return Err(Error::Blowup {
            step: 0,
            reason: "non-finite value in finite-difference update".into(),
        });
    }
    Ok((nu, nv))
}

/// Settings for [`run_fd`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FdConfig {
    pub grid: usize,
    /// Upper bound on the step; the runner also applies half the stability bound.
    pub tau: Option<f64>,
    pub t_end: f64,
    pub snapshots: Vec<f64>,
    pub safety: f64,
}

impl FdConfig {
    pub fn new(grid: usize, t_end: f64, snapshots: Vec<f64>) -> Self {
        Self {
            grid,
            tau: None,
            t_end,
            snapshots,
            safety: 0.5,
        }
    }
}

fn with_step(err: Error, step: usize) -> Error {
    match err {
        Error::Blowup { reason, .. } => Error::Blowup { step, reason },
        other => other,
    }
}

/// Runs the finite-difference oracle, landing exactly on every snapshot time.
pub fn run_fd(model: &Model, domain: TorusDomain, cfg: &FdConfig) -> Result<RunRecord> {
    if cfg.grid < 4 {
        return Err(Error::Config(
            "finite-difference grid needs at least 4 points per axis".into(),
        ));
    }
    if !(cfg.t_end >= 0.0) {
        return Err(Error::Config("end time must be non-negative".into()));
    }
    let config = serde_json::json!({ "model": model, "domain": domain, "fd": cfg });
    let mut record = RunRecord::new("fd", config, 0);
    let t0 = Instant::now();
    let eval = |datum: &crate::model::InitialDatum| GridField::from_fn(domain, cfg.grid, |x| datum.eval(&domain, x));
    let (mut u, mut v) = match model {
        Model::Scalar(m) => {
            m.validate(&domain)?;
            (eval(&m.initial)?, None)
        }
        Model::KellerSegel(m) => {
            m.validate(&domain)?;
            (eval(&m.initial_u)?, Some(eval(&m.initial_v)?))
        }
    };
    let h = u.spacing();
    record.notes.push(format!(
        "explicit Euler, central differences, h = {h:.6e}, safety factor {}",
        cfg.safety
    ));

    let row = |t: f64, u: &GridField, v: &Option<GridField>| SeriesRow {
        t,
        count_u: 0,
        count_v: 0,
        mass_u: u.mass(),
        mass_v: v.as_ref().map_or(0.0, |v| v.mass()),
        floor_hits: 0,
        cap_hits: 0,
    };
    let snapshot = |step: usize, t: f64, u: &GridField, v: &Option<GridField>| {
        let mut fields = vec![("u".to_string(), FieldData::Grid(u.clone()))];
        if let Some(v) = v {
            fields.push(("v".to_string(), FieldData::Grid(v.clone())));
        }
        Snapshot { step, t, fields }
    };

    let mut targets: Vec<f64> = cfg.snapshots.iter().copied().filter(|&t| t <= cfg.t_end).collect();
    targets.sort_by(f64::total_cmp);
    targets.dedup();
    if targets.last().is_none_or(|&t| t < cfg.t_end) {
        targets.push(cfg.t_end);
    }
    let is_snapshot = |t: f64| {
        cfg.snapshots
            .iter()
            .any(|&s| (s - t).abs() <= 1e-12 * cfg.t_end.max(1.0))
    };

    record.series.push(row(0.0, &u, &v));
    if is_snapshot(0.0) {
        record.snapshots.push(snapshot(0, 0.0, &u, &v));
    }
    record.add_time("initialize", t0);

    let t_loop = Instant::now();
    let mut t = 0.0;
    let mut step = 0usize;
    'outer: for &target in &targets {
        while t < target {
            let bound = match (model, &v) {
                (Model::Scalar(m), _) => scalar_stable_step(m, h, domain.dim()),
                (Model::KellerSegel(m), Some(vg)) => ks_stable_step(vg, m),
                _ => unreachable!(),
            };
            let mut dt = cfg.safety * bound;
            if let Some(cap) = cfg.tau {
                dt = dt.min(cap);
            }
            let remaining = target - t;
            // Avoid a sliver step just before the target.
            if dt >= remaining || remaining - dt < 1e-9 * dt {
                dt = remaining;
            }
            let result = match (model, &v) {
                (Model::Scalar(m), _) => fd_step_scalar(&u, m, dt).map(|nu| (nu, None)),
                (Model::KellerSegel(m), Some(vg)) => fd_step_ks(&u, vg, m, dt).map(|(nu, nv)| (nu, Some(nv))),
                _ => unreachable!(),
            };
            match result {
                Ok((nu, nv)) => {
                    u = nu;
                    v = nv;
                }
                Err(e) => {
                    let e = with_step(e, step + 1);
                    record.status = RunStatus::from_error(step + 1, &e);
                    break 'outer;
                }
            }
            step += 1;
            t = if dt == remaining { target } else { t + dt };
            record.series.push(row(t, &u, &v));
        }
        if is_snapshot(target) && record.snapshots.last().is_none_or(|s| s.t < target) {
            record.snapshots.push(snapshot(step, target, &u, &v));
        }
    }
    record.add_time("integrate", t_loop);
    Ok(record)
}
