//! Periodic box geometry.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};

/// A `d`-dimensional periodic box `[origin, origin + side)^d`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TorusDomain {
    dim: usize,
    side: f64,
    origin: f64,
}

impl TorusDomain {
    pub fn new(dim: usize, side: f64, origin: f64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidArgument("dimension must be >= 1".into()));
        }
        if !(side > 0.0 && side.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "side length must be positive and finite, got {side}"
            )));
        }
        if !origin.is_finite() {
            return Err(Error::InvalidArgument("origin must be finite".into()));
        }
        Ok(Self { dim, side, origin })
    }

    /// `[0, 2π)^dim`, the convention used throughout the solver.
    pub fn standard(dim: usize) -> Self {
        Self {
            dim: dim.max(1),
            side: 2.0 * PI,
            origin: 0.0,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn side(&self) -> f64 {
        self.side
    }

    pub fn origin(&self) -> f64 {
        self.origin
    }

    pub fn volume(&self) -> f64 {
        self.side.powi(self.dim as i32)
    }

    /// Reduces one coordinate into `[origin, origin + side)`.
    #[inline]
    pub fn wrap_coord(&self, x: f64) -> f64 {
        let rel = x - self.origin;
        let mut r = rel - self.side * (rel / self.side).floor();
        // Rounding can land exactly on the upper seam.
        if r >= self.side {
            r = 0.0;
        }
        self.origin + r
    }

    pub fn wrap(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut out = x.to_vec();
        self.wrap_in_place(&mut out)?;
        Ok(out)
    }

    pub fn wrap_in_place(&self, x: &mut [f64]) -> Result<()> {
        for (axis, v) in x.iter_mut().enumerate() {
            if !v.is_finite() {
                return Err(Error::CorruptedPosition {
                    axis: axis % self.dim,
                    value: *v,
                });
            }
            *v = self.wrap_coord(*v);
        }
        Ok(())
    }

    /// Signed minimum-image displacement `x - y` per coordinate.
    #[inline]
    pub fn min_image(&self, x: f64, y: f64) -> f64 {
        let d = x - y;
        d - self.side * (d / self.side).round()
    }

    /// Squared periodic distance between two points.
    pub fn distance_sq(&self, x: &[f64], y: &[f64]) -> f64 {
        x.iter()
            .zip(y)
            .map(|(&a, &b)| {
                let d = self.min_image(a, b);
                d * d
            })
            .sum()
    }

    pub fn grid_spacing(&self, n_per_axis: usize) -> f64 {
        self.side / n_per_axis as f64
    }

    /// Cell-corner grid: `n^d` points `origin + i h`, axis 0 slowest, flattened.
    pub fn uniform_grid(&self, n_per_axis: usize) -> Result<Vec<f64>> {
        if n_per_axis == 0 {
            return Err(Error::InvalidArgument("grid needs at least one point per axis".into()));
        }
        let h = self.grid_spacing(n_per_axis);
        let total = n_per_axis.pow(self.dim as u32);
        let mut pts = Vec::with_capacity(total * self.dim);
        let mut idx = vec![0usize; self.dim];
        for _ in 0..total {
            pts.extend(idx.iter().map(|&i| self.origin + i as f64 * h));
            for axis in (0..self.dim).rev() {
                idx[axis] += 1;
                if idx[axis] < n_per_axis {
                    break;
                }
                idx[axis] = 0;
            }
        }
        Ok(pts)
    }
}
