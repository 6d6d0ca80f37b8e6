//! Truncated tensor-product Fourier fields.
//!
//! A field of truncation order `K` on a `d`-dimensional torus stores one real
//! coefficient per mode `k ∈ {-K..K}^d`. Per axis the basis is orthonormal on
//! `[0, L)`:
//!
//! ```text
//! φ_0(x) = 1/√L,   φ_k(x) = √(2/L) cos(kωx) (k > 0),   φ_k(x) = √(2/L) sin(|k|ωx) (k < 0)
//! ```
//!
//! with `ω = 2π/L`, and `ψ_m(x) = Π_j φ_{m_j}(x_j)`.
//!
//! Coefficients are stored densely, axis 0 slowest: the per-axis digit is
//! `k_j + K` and the linear index is `Σ_j (k_j + K) (2K+1)^(d-1-j)`. The
//! snapshot file format depends on this ordering.
//!
//! All particle sums run over fixed-size chunks keyed by particle index and
//! are combined with a fixed pairwise tree, so results do not depend on the
//! number of worker threads.

use std::fmt::Write as _;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use ndarray::{Array2, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::TorusDomain;

/// Particles processed per reduction leaf.
pub const CHUNK: usize = 4096;

/// A multi-index into the tensor-product basis.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ModeIndex(pub Vec<i64>);

impl ModeIndex {
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn norm_sq(&self) -> i64 {
        self.0.iter().map(|k| k * k).sum()
    }

    pub fn within(&self, order: usize) -> bool {
        self.0.iter().all(|k| k.unsigned_abs() as usize <= order)
    }
}

/// Number of modes `(2K+1)^d`.
pub fn mode_count(dim: usize, order: usize) -> usize {
    (2 * order + 1).pow(dim as u32)
}

pub fn linear_index(mode: &ModeIndex, order: usize) -> Option<usize> {
    if !mode.within(order) {
        return None;
    }
    let width = 2 * order as i64 + 1;
    Some(mode.0.iter().fold(0i64, |acc, &k| acc * width + k + order as i64) as usize)
}

pub fn mode_at(index: usize, dim: usize, order: usize) -> ModeIndex {
    let width = 2 * order + 1;
    let mut digits = vec![0i64; dim];
    let mut rest = index;
    for j in (0..dim).rev() {
        digits[j] = (rest % width) as i64 - order as i64;
        rest /= width;
    }
    ModeIndex(digits)
}

/// One-dimensional basis function `φ_k(x)`.
pub fn axis_basis(domain: &TorusDomain, k: i64, x: f64) -> f64 {
    let l = domain.side();
    let omega = 2.0 * std::f64::consts::PI / l;
    match k {
        0 => 1.0 / l.sqrt(),
        k if k > 0 => (2.0 / l).sqrt() * (k as f64 * omega * x).cos(),
        k => (2.0 / l).sqrt() * ((-k) as f64 * omega * x).sin(),
    }
}

/// `ψ_m(x)`. Defined for every mode, not only those within a truncation.
pub fn basis_eval(domain: &TorusDomain, mode: &ModeIndex, x: &[f64]) -> f64 {
    mode.0
        .iter()
        .zip(x)
        .map(|(&k, &xj)| axis_basis(domain, k, xj))
        .product()
}

/// Fills `out[k + K] = φ_k(x)` for `k ∈ -K..=K`, and optionally the derivative.
fn fill_axis_row(order: usize, side: f64, x: f64, out: &mut [f64], mut deriv: Option<&mut [f64]>) {
    let omega = 2.0 * std::f64::consts::PI / side;
    let c0 = 1.0 / side.sqrt();
    let ck = (2.0 / side).sqrt();
    out[order] = c0;
    if let Some(d) = deriv.as_deref_mut() {
        d[order] = 0.0;
    }
    let (s1, c1) = (omega * x).sin_cos();
    let (mut s, mut c) = (s1, c1);
    for k in 1..=order {
        out[order + k] = ck * c;
        out[order - k] = ck * s;
        if let Some(d) = deriv.as_deref_mut() {
            let kw = k as f64 * omega;
            d[order + k] = -kw * ck * s;
            d[order - k] = kw * ck * c;
        }
        let next_c = c * c1 - s * s1;
        s = s * c1 + c * s1;
        c = next_c;
    }
}

/// Basis rows for a block of points: axis 0 on its own, the remaining axes as
/// a Kronecker product, so a field contracts as `Φ0 · A · Rᵀ`.
struct BasisBlock {
    lead: Array2<f64>,
    lead_deriv: Option<Array2<f64>>,
    rest: Array2<f64>,
    /// `rest` with axis `j + 1` differentiated.
    rest_deriv: Vec<Array2<f64>>,
}

impl BasisBlock {
    fn build(domain: &TorusDomain, order: usize, points: &[f64], with_deriv: bool) -> Self {
        let dim = domain.dim();
        let width = 2 * order + 1;
        let n = points.len() / dim;
        let rest_width = width.pow(dim as u32 - 1);
        let mut lead = Array2::<f64>::zeros((n, width));
        let mut lead_deriv = with_deriv.then(|| Array2::<f64>::zeros((n, width)));
        let mut rest = Array2::<f64>::zeros((n, rest_width));
        let mut rest_deriv: Vec<Array2<f64>> = if with_deriv {
            (1..dim).map(|_| Array2::zeros((n, rest_width))).collect()
        } else {
            Vec::new()
        };

        let mut rows = vec![0.0; dim * width];
        let mut drows = vec![0.0; dim * width];
        for (i, x) in points.chunks_exact(dim).enumerate() {
            for (j, &xj) in x.iter().enumerate() {
                let (r, d) = (
                    &mut rows[j * width..(j + 1) * width],
                    &mut drows[j * width..(j + 1) * width],
                );
                fill_axis_row(order, domain.side(), xj, r, with_deriv.then_some(d));
            }
            lead.row_mut(i).as_slice_mut().unwrap().copy_from_slice(&rows[..width]);
            if let Some(ld) = lead_deriv.as_mut() {
                ld.row_mut(i).as_slice_mut().unwrap().copy_from_slice(&drows[..width]);
            }
            kron_rows(&rows[width..], None, width, rest.row_mut(i).as_slice_mut().unwrap());
            for (jd, rd) in rest_deriv.iter_mut().enumerate() {
                kron_rows(
                    &rows[width..],
                    Some((jd, &drows[width..])),
                    width,
                    rd.row_mut(i).as_slice_mut().unwrap(),
                );
            }
        }
        Self {
            lead,
            lead_deriv,
            rest,
            rest_deriv,
        }
    }
}

/// Kronecker product of per-axis rows (axis order preserved, first slowest).
/// `swap` replaces the row of one axis by its derivative row.
fn kron_rows(rows: &[f64], swap: Option<(usize, &[f64])>, width: usize, out: &mut [f64]) {
    let naxes = rows.len() / width;
    let axis_row = |j: usize| -> &[f64] {
        match swap {
            Some((sj, d)) if sj == j => &d[j * width..(j + 1) * width],
            _ => &rows[j * width..(j + 1) * width],
        }
    };
    out[0] = 1.0;
    let mut len = 1;
    for j in 0..naxes {
        let r = axis_row(j);
        // Expand in place from the back so earlier entries stay readable.
        for p in (0..len).rev() {
            let v = out[p];
            for (q, &rq) in r.iter().enumerate().rev() {
                out[p * width + q] = v * rq;
            }
        }
        len *= width;
    }
}

fn row_dot(a: ArrayView2<f64>, b: ArrayView2<f64>) -> Vec<f64> {
    a.outer_iter()
        .zip(b.outer_iter())
        .map(|(x, y)| x.iter().zip(y.iter()).map(|(p, q)| p * q).sum())
        .collect()
}

/// Sums partial results with a fixed pairwise tree.
fn tree_sum(mut parts: Vec<Array2<f64>>) -> Option<Array2<f64>> {
    while parts.len() > 1 {
        let mut next = Vec::with_capacity(parts.len().div_ceil(2));
        let mut it = parts.into_iter();
        while let Some(mut a) = it.next() {
            if let Some(b) = it.next() {
                a += &b;
            }
            next.push(a);
        }
        parts = next;
    }
    parts.pop()
}

/// Field values (and optionally gradients) sampled at a batch of points.
#[derive(Debug, Clone, Default)]
pub struct FieldSamples {
    pub values: Vec<f64>,
    /// Flattened `n × d`, present when requested.
    pub gradients: Option<Vec<f64>>,
}

/// A truncated Fourier field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralField {
    domain: TorusDomain,
    order: usize,
    coeffs: Vec<f64>,
}

impl SpectralField {
    pub fn zeros(domain: TorusDomain, order: usize) -> Self {
        Self {
            domain,
            order,
            coeffs: vec![0.0; mode_count(domain.dim(), order)],
        }
    }

    pub fn from_coeffs(domain: TorusDomain, order: usize, coeffs: Vec<f64>) -> Result<Self> {
        let expected = mode_count(domain.dim(), order);
        if coeffs.len() != expected {
            return Err(Error::InvalidArgument(format!(
                "expected {expected} coefficients for K={order}, d={}, got {}",
                domain.dim(),
                coeffs.len()
            )));
        }
        Ok(Self { domain, order, coeffs })
    }

    pub fn domain(&self) -> &TorusDomain {
        &self.domain
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn coeff(&self, mode: &ModeIndex) -> f64 {
        linear_index(mode, self.order).map_or(0.0, |i| self.coeffs[i])
    }

    pub fn set_coeff(&mut self, mode: &ModeIndex, value: f64) -> Result<()> {
        let i = linear_index(mode, self.order)
            .ok_or_else(|| Error::InvalidArgument(format!("mode {:?} outside truncation {}", mode.0, self.order)))?;
        self.coeffs[i] = value;
        Ok(())
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            domain: self.domain,
            order: self.order,
            coeffs: self.coeffs.iter().map(|c| c * factor).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.coeffs.iter().all(|c| c.is_finite())
    }

    /// `a_m = (1/N) Σ_i ψ_m(X_i)` over wrapped positions (flattened `n × d`).
    pub fn project_particles(domain: TorusDomain, order: usize, positions: &[f64], n_initial: usize) -> Result<Self> {
        if n_initial == 0 {
            return Err(Error::InvalidArgument("normalization count N must be positive".into()));
        }
        Ok(Self::project_weighted(
            domain,
            order,
            positions,
            None,
            1.0 / n_initial as f64,
        ))
    }

    /// `a_m = scale Σ_i w_i ψ_m(x_i)`; unit weights when `weights` is `None`.
    pub fn project_weighted(
        domain: TorusDomain,
        order: usize,
        points: &[f64],
        weights: Option<&[f64]>,
        scale: f64,
    ) -> Self {
        let dim = domain.dim();
        let width = 2 * order + 1;
        let parts: Vec<Array2<f64>> = points
            .par_chunks(CHUNK * dim)
            .enumerate()
            .map(|(c, block)| {
                let b = BasisBlock::build(&domain, order, block, false);
                let rest = match weights {
                    Some(w) => {
                        let w = &w[c * CHUNK..c * CHUNK + block.len() / dim];
                        let mut r = b.rest;
                        for (mut row, &wi) in r.outer_iter_mut().zip(w) {
                            row *= wi;
                        }
                        r
                    }
                    None => b.rest,
                };
                b.lead.t().dot(&rest)
            })
            .collect();
        let total = tree_sum(parts).unwrap_or_else(|| Array2::zeros((width, width.pow(dim as u32 - 1))));
        let coeffs = total.iter().map(|v| v * scale).collect();
        Self { domain, order, coeffs }
    }

    /// Trapezoid-rule projection of a pointwise function with `q` nodes per
    /// axis. Returns a warning when `q` is too small for exactness on
    /// band-limited inputs.
    pub fn project_function<F>(
        domain: TorusDomain,
        order: usize,
        quad_points: usize,
        f: F,
    ) -> Result<(Self, Option<String>)>
    where
        F: Fn(&[f64]) -> f64 + Sync,
    {
        let grid = domain.uniform_grid(quad_points)?;
        let dim = domain.dim();
        let weights: Vec<f64> = grid.par_chunks(dim).map(&f).collect();
        let cell = domain.grid_spacing(quad_points).powi(dim as i32);
        let field = Self::project_weighted(domain, order, &grid, Some(&weights), cell);
        let warning = (quad_points < 2 * order + 2)
            .then(|| format!("quadrature with {quad_points} points per axis is not exact for K={order}"));
        Ok((field, warning))
    }

    /// Values (and gradients) at a batch of points.
    pub fn sample(&self, points: &[f64], with_gradient: bool) -> FieldSamples {
        sample_fields(&[self], points, &[with_gradient])
            .pop()
            .expect("one field in, one out")
    }

    pub fn evaluate(&self, x: &[f64]) -> f64 {
        self.sample(x, false).values[0]
    }

    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        self.sample(x, true).gradients.unwrap()
    }

    /// Integral over the domain; only the constant mode contributes.
    pub fn mass(&self) -> f64 {
        let zero = linear_index(&ModeIndex(vec![0; self.domain.dim()]), self.order).unwrap();
        self.coeffs[zero] * self.domain.volume().sqrt()
    }

    /// `Σ_m (1 + |κ_m|²)^(-s) a_m²` with `κ = ω k`.
    pub fn sobolev_norm_sq(&self, s: f64) -> f64 {
        let omega = 2.0 * std::f64::consts::PI / self.domain.side();
        self.coeffs
            .iter()
            .enumerate()
            .map(|(i, &a)| {
                if a == 0.0 {
                    return 0.0;
                }
                let k2 = mode_at(i, self.domain.dim(), self.order).norm_sq() as f64;
                (1.0 + omega * omega * k2).powf(-s) * a * a
            })
            .sum()
    }

    /// Coefficient file: a `d K L` header, then one coefficient per line.
    pub fn to_coef_string(&self) -> String {
        let mut s = String::with_capacity(self.coeffs.len() * 26 + 32);
        writeln!(s, "{} {} {:.16e}", self.domain.dim(), self.order, self.domain.side()).unwrap();
        for c in &self.coeffs {
            writeln!(s, "{c:.16e}").unwrap();
        }
        s
    }

    pub fn parse_coef(text: &str) -> Result<Self> {
        let bad = |msg: &str| Error::InvalidArgument(format!("malformed coefficient file: {msg}"));
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| bad("empty"))?;
        let parts: Vec<&str> = header.split_whitespace().collect();
        if parts.len() != 3 {
            return Err(bad("header must be `d K L`"));
        }
        let dim: usize = parts[0].parse().map_err(|_| bad("dimension"))?;
        let order: usize = parts[1].parse().map_err(|_| bad("truncation"))?;
        let side: f64 = parts[2].parse().map_err(|_| bad("side length"))?;
        let coeffs = lines
            .filter(|l| !l.trim().is_empty())
            .map(|l| l.trim().parse::<f64>().map_err(|_| bad(l)))
            .collect::<Result<Vec<_>>>()?;
        Self::from_coeffs(TorusDomain::new(dim, side, 0.0)?, order, coeffs)
    }

    pub fn write_coef(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_coef_string()).map_err(|e| Error::io(path, e))
    }

    pub fn read_coef(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_coef(&text)
    }

    /// Samples the field on `uniform_grid(n)`.
    pub fn sample_grid(&self, n: usize) -> Result<crate::fd::GridField> {
        let grid = self.domain.uniform_grid(n)?;
        let values = self.sample(&grid, false).values;
        crate::fd::GridField::new(self.domain, n, values)
    }
}

/// Samples several fields of the same domain and order at one batch of
/// points, sharing the basis evaluation. `gradients[f]` selects gradients
/// for field `f`.
pub fn sample_fields(fields: &[&SpectralField], points: &[f64], gradients: &[bool]) -> Vec<FieldSamples> {
    assert_eq!(fields.len(), gradients.len(), "one gradient flag per field");
    let Some(first) = fields.first() else {
        return Vec::new();
    };
    assert!(
        fields
            .iter()
            .all(|f| f.domain == first.domain && f.order == first.order),
        "fields sampled together must share domain and order"
    );
    let domain = first.domain;
    let dim = domain.dim();
    let width = 2 * first.order + 1;
    let shape = (width, width.pow(dim as u32 - 1));
    let coeffs: Vec<ArrayView2<f64>> = fields
        .iter()
        .map(|f| ArrayView2::from_shape(shape, &f.coeffs).expect("coefficient layout"))
        .collect();
    let any_grad = gradients.iter().any(|&g| g);
    let blocks: Vec<Vec<(Vec<f64>, Vec<f64>)>> = points
        .par_chunks(CHUNK * dim)
        .map(|block| {
            let b = BasisBlock::build(&domain, first.order, block, any_grad);
            coeffs
                .iter()
                .zip(gradients)
                .map(|(a, &with_gradient)| {
                    let w = b.rest.dot(&a.t());
                    let values = row_dot(b.lead.view(), w.view());
                    let mut grads = Vec::new();
                    if with_gradient {
                        grads = vec![0.0; values.len() * dim];
                        let g0 = row_dot(b.lead_deriv.as_ref().unwrap().view(), w.view());
                        for (i, g) in g0.into_iter().enumerate() {
                            grads[i * dim] = g;
                        }
                        for (j, rd) in b.rest_deriv.iter().enumerate() {
                            let wj = rd.dot(&a.t());
                            for (i, g) in row_dot(b.lead.view(), wj.view()).into_iter().enumerate() {
                                grads[i * dim + j + 1] = g;
                            }
                        }
                    }
                    (values, grads)
                })
                .collect()
        })
        .collect();
    let mut out: Vec<FieldSamples> = gradients
        .iter()
        .map(|&g| FieldSamples {
            values: Vec::with_capacity(points.len() / dim),
            gradients: g.then(|| Vec::with_capacity(points.len())),
        })
        .collect();
    for block in blocks {
        for (o, (v, g)) in out.iter_mut().zip(block) {
            o.values.extend(v);
            if let Some(gs) = o.gradients.as_mut() {
                gs.extend(g);
            }
        }
    }
    out
}

/// Grid-sampled CSV: `x1,...,xd,value`, rows in `uniform_grid` order.
///
/// With `shift`, the value written at grid point `y` is the field at
/// `y - shift`, rounded to the nearest grid offset.
pub fn write_grid_csv(path: &Path, domain: &TorusDomain, n: usize, values: &[f64], shift: Option<f64>) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let dim = domain.dim();
    let grid = domain.uniform_grid(n)?;
    let io = |e| Error::io(path, e);
    let header: Vec<String> = (1..=dim).map(|j| format!("x{j}")).chain(["value".into()]).collect();
    writeln!(out, "{}", header.join(",")).map_err(io)?;
    let mut line = String::new();
    let offset = shift.map(|s| (s / domain.grid_spacing(n)).round() as i64);
    for (i, x) in grid.chunks(dim).enumerate() {
        line.clear();
        let value = match offset {
            None => values[i],
            Some(off) => values[shifted_index(i, dim, n, -off)],
        };
        for &xj in x {
            write!(line, "{xj:.16e},").unwrap();
        }
        writeln!(line, "{value:.16e}").unwrap();
        out.write_all(line.as_bytes()).map_err(io)?;
    }
    out.flush().map_err(io)
}

fn shifted_index(i: usize, dim: usize, n: usize, off: i64) -> usize {
    let mut digits = vec![0usize; dim];
    let mut rest = i;
    for j in (0..dim).rev() {
        digits[j] = rest % n;
        rest /= n;
    }
    digits.iter().fold(0usize, |acc, &dj| {
        acc * n + (dj as i64 + off).rem_euclid(n as i64) as usize
    })
}

/// Reads a grid CSV written by [`write_grid_csv`]; returns `(n, values)`.
pub fn read_grid_csv(path: &Path, dim: usize) -> Result<(usize, Vec<f64>)> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut values = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if lineno == 0 || line.trim().is_empty() {
            continue;
        }
        let v = line
            .rsplit(',')
            .next()
            .and_then(|s| s.trim().parse::<f64>().ok())
            .ok_or_else(|| Error::InvalidArgument(format!("{}:{}: bad row", path.display(), lineno + 1)))?;
        values.push(v);
    }
    let n = (values.len() as f64).powf(1.0 / dim as f64).round() as usize;
    if n.pow(dim as u32) != values.len() {
        return Err(Error::InvalidArgument(format!(
            "{}: {} rows is not a {dim}-dimensional square grid",
            path.display(),
            values.len()
        )));
    }
    Ok((n, values))
}
