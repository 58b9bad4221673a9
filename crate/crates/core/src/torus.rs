//! Uniform periodic grids on the unit torus, the fields sampled on them, and
//! the norms and finite-difference calculus used throughout the crate.
//!
//! Grid points are `i / n` per axis. In two dimensions the flat index is
//! `i0 * n + i1`, so axis 1 varies fastest.

use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};

pub const MAX_DIM: usize = 2;

/// Wraps a coordinate difference into `[-1/2, 1/2)`.
#[inline]
pub fn wrap_signed(delta: f64) -> f64 {
    delta - (delta + 0.5).floor()
}

/// Wraps a coordinate into `[0, 1)`.
#[inline]
pub fn wrap_unit(x: f64) -> f64 {
    let w = x - x.floor();
    // x slightly below an integer can round up to exactly 1.0
    if w >= 1.0 {
        0.0
    } else {
        w
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct GridSpec {
    dim: usize,
    n_per_axis: usize,
}

impl GridSpec {
    pub fn new(dim: usize, n_per_axis: usize) -> Result<Self> {
        if dim == 0 || dim > MAX_DIM {
            return Err(Error::InvalidGrid(format!(
                "dimension must be 1 or 2, got {dim}"
            )));
        }
        if n_per_axis < 8 {
            return Err(Error::InvalidGrid(format!(
                "need at least 8 points per axis, got {n_per_axis}"
            )));
        }
        Ok(GridSpec { dim, n_per_axis })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_per_axis(&self) -> usize {
        self.n_per_axis
    }

    /// Total number of grid points, `n^d`.
    pub fn len(&self) -> usize {
        self.n_per_axis.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn spacing(&self) -> f64 {
        1.0 / self.n_per_axis as f64
    }

    /// Quadrature weight of one grid cell, `spacing^d`.
    pub fn cell_volume(&self) -> f64 {
        self.spacing().powi(self.dim as i32)
    }

    pub fn multi_index(&self, idx: usize) -> [usize; MAX_DIM] {
        let n = self.n_per_axis;
        match self.dim {
            1 => [idx, 0],
            _ => [idx / n, idx % n],
        }
    }

    pub fn flat_index(&self, multi: [usize; MAX_DIM]) -> usize {
        match self.dim {
            1 => multi[0],
            _ => multi[0] * self.n_per_axis + multi[1],
        }
    }

    /// Flat index of the point `multi + offset` with periodic wrap.
    pub fn offset_index(&self, multi: [usize; MAX_DIM], offset: [isize; MAX_DIM]) -> usize {
        let n = self.n_per_axis as isize;
        let mut m = [0usize; MAX_DIM];
        for a in 0..self.dim {
            m[a] = (multi[a] as isize + offset[a]).rem_euclid(n) as usize;
        }
        self.flat_index(m)
    }

    /// Coordinates in `[0,1)^d` of a grid point; unused axes are zero.
    pub fn coords(&self, idx: usize) -> [f64; MAX_DIM] {
        let m = self.multi_index(idx);
        let h = self.spacing();
        let mut c = [0.0; MAX_DIM];
        for a in 0..self.dim {
            c[a] = m[a] as f64 * h;
        }
        c
    }

    /// Coordinates of a grid point lifted into `[-1/2, 1/2)^d`.
    pub fn centered_coords(&self, idx: usize) -> [f64; MAX_DIM] {
        let mut c = self.coords(idx);
        for v in c.iter_mut().take(self.dim) {
            *v = wrap_signed(*v);
        }
        c
    }

    pub fn point(&self, idx: usize) -> TorusPoint {
        TorusPoint {
            dim: self.dim,
            coords: self.coords(idx),
        }
    }

    /// Index of the grid point nearest to `x` (any lift).
    pub fn nearest_index(&self, x: &[f64]) -> usize {
        let n = self.n_per_axis;
        let mut m = [0usize; MAX_DIM];
        for a in 0..self.dim {
            let s = (wrap_unit(x[a]) * n as f64).round() as usize;
            m[a] = s % n;
        }
        self.flat_index(m)
    }
}

/// A point of the torus with coordinates in `[0,1)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TorusPoint {
    dim: usize,
    coords: [f64; MAX_DIM],
}

impl TorusPoint {
    /// Projects an arbitrary lift onto `[0,1)^d`.
    pub fn new(coords: &[f64]) -> Result<Self> {
        let dim = coords.len();
        if dim == 0 || dim > MAX_DIM {
            return Err(Error::InvalidParameter(format!(
                "torus point needs 1 or 2 coordinates, got {dim}"
            )));
        }
        let mut c = [0.0; MAX_DIM];
        for (dst, &src) in c.iter_mut().zip(coords) {
            if !src.is_finite() {
                return Err(Error::NonFinite("TorusPoint::new"));
            }
            *dst = wrap_unit(src);
        }
        Ok(TorusPoint { dim, coords: c })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords[..self.dim]
    }
}

/// `|x - y|_T = min_k |x - y + k|`.
pub fn torus_distance(x: &TorusPoint, y: &TorusPoint) -> f64 {
    debug_assert_eq!(x.dim, y.dim);
    lift_distance(x.coords(), y.coords())
}

/// Torus distance between two arbitrary lifts.
pub fn lift_distance(x: &[f64], y: &[f64]) -> f64 {
    x.iter()
        .zip(y)
        .map(|(a, b)| wrap_signed(a - b).powi(2))
        .sum::<f64>()
        .sqrt()
}

/// Samples of a periodic function on a [`GridSpec`].
#[derive(Debug, Clone, PartialEq)]
pub struct TorusField {
    spec: GridSpec,
    values: Vec<f64>,
}

impl TorusField {
    pub fn new(spec: GridSpec, values: Vec<f64>) -> Result<Self> {
        if values.len() != spec.len() {
            return Err(Error::InvalidGrid(format!(
                "expected {} samples, got {}",
                spec.len(),
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("TorusField::new"));
        }
        Ok(TorusField { spec, values })
    }

    pub fn constant(spec: GridSpec, value: f64) -> Self {
        TorusField {
            spec,
            values: vec![value; spec.len()],
        }
    }

    pub fn from_fn(spec: GridSpec, f: impl Fn(&[f64]) -> f64 + Sync) -> Self {
        let values = (0..spec.len())
            .into_par_iter()
            .map(|i| {
                let c = spec.coords(i);
                f(&c[..spec.dim()])
            })
            .collect();
        TorusField { spec, values }
    }

    pub(crate) fn from_raw(spec: GridSpec, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), spec.len());
        TorusField { spec, values }
    }

    pub fn spec(&self) -> GridSpec {
        self.spec
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> TorusField {
        TorusField {
            spec: self.spec,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &TorusField, f: impl Fn(f64, f64) -> f64) -> TorusField {
        debug_assert_eq!(self.spec, other.spec);
        TorusField {
            spec: self.spec,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    pub fn add_const(&self, c: f64) -> TorusField {
        self.map(|v| v + c)
    }

    /// `||f||_* = inf_C sup |f + C| = (max f - min f) / 2`.
    pub fn sup_norm_mod_const(&self) -> f64 {
        0.5 * (self.max() - self.min())
    }

    /// Periodic cubic (4-point Lagrange) interpolation at an arbitrary lift.
    pub fn sample(&self, x: &[f64]) -> f64 {
        let n = self.spec.n_per_axis;
        let mut base = [0isize; MAX_DIM];
        let mut weights = [[0.0; 4]; MAX_DIM];
        for a in 0..self.spec.dim {
            let s = wrap_unit(x[a]) * n as f64;
            let i = s.floor();
            base[a] = i as isize;
            weights[a] = cubic_weights(s - i);
        }
        match self.spec.dim {
            1 => (0..4)
                .map(|k| {
                    let idx = (base[0] + k as isize - 1).rem_euclid(n as isize) as usize;
                    weights[0][k] * self.values[idx]
                })
                .sum(),
            _ => {
                let mut acc = 0.0;
                for k0 in 0..4 {
                    let i0 = (base[0] + k0 as isize - 1).rem_euclid(n as isize) as usize;
                    let mut row = 0.0;
                    for k1 in 0..4 {
                        let i1 = (base[1] + k1 as isize - 1).rem_euclid(n as isize) as usize;
                        row += weights[1][k1] * self.values[i0 * n + i1];
                    }
                    acc += weights[0][k0] * row;
                }
                acc
            }
        }
    }
}

fn cubic_weights(t: f64) -> [f64; 4] {
    [
        -t * (t - 1.0) * (t - 2.0) / 6.0,
        (t + 1.0) * (t - 1.0) * (t - 2.0) / 2.0,
        -(t + 1.0) * t * (t - 2.0) / 2.0,
        (t + 1.0) * t * (t - 1.0) / 6.0,
    ]
}

/// One [`TorusField`] per axis.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorField {
    components: Vec<TorusField>,
}

impl VectorField {
    pub fn new(components: Vec<TorusField>) -> Self {
        VectorField { components }
    }

    pub fn components(&self) -> &[TorusField] {
        &self.components
    }

    pub fn component(&self, axis: usize) -> &TorusField {
        &self.components[axis]
    }

    pub fn at(&self, idx: usize) -> [f64; MAX_DIM] {
        let mut v = [0.0; MAX_DIM];
        for (a, c) in self.components.iter().enumerate() {
            v[a] = c.values[idx];
        }
        v
    }

    pub fn sample(&self, x: &[f64]) -> [f64; MAX_DIM] {
        let mut v = [0.0; MAX_DIM];
        for (a, c) in self.components.iter().enumerate() {
            v[a] = c.sample(x);
        }
        v
    }
}

fn check_weight(v: &TorusField, beta: f64) -> Result<()> {
    if !(beta >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "beta must be non-negative, got {beta}"
        )));
    }
    if let Some((index, &value)) = v.values.iter().enumerate().find(|(_, &x)| x < 0.0) {
        return Err(Error::NegativeWeight { index, value });
    }
    Ok(())
}

/// `||f||_{beta V} = sup |f| / (1 + beta V)`.
pub fn weighted_norm(f: &TorusField, v: &TorusField, beta: f64) -> Result<f64> {
    check_weight(v, beta)?;
    Ok(weighted_sup(f.values(), v.values(), beta, 0.0))
}

fn weighted_sup(f: &[f64], v: &[f64], beta: f64, shift: f64) -> f64 {
    f.iter()
        .zip(v)
        .map(|(&a, &w)| (a + shift).abs() / (1.0 + beta * w))
        .fold(0.0, f64::max)
}

/// `||f||_{beta V, *} = inf_C ||f + C||_{beta V}`.
///
/// The objective is convex in `C` and every minimizer lies in
/// `[-max f, -min f]`; ternary search narrows that bracket to `1e-12`
/// relative to the oscillation of `f`.
pub fn weighted_norm_mod_const(f: &TorusField, v: &TorusField, beta: f64) -> Result<f64> {
    check_weight(v, beta)?;
    Ok(weighted_mod_const_raw(f.values(), v.values(), beta))
}

pub(crate) fn weighted_mod_const_raw(f: &[f64], v: &[f64], beta: f64) -> f64 {
    let (fmin, fmax) = f
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| {
            (lo.min(x), hi.max(x))
        });
    let width = fmax - fmin;
    if width == 0.0 {
        return 0.0;
    }
    if beta == 0.0 {
        return 0.5 * width;
    }
    let (mut lo, mut hi) = (-fmax, -fmin);
    let tol = 1e-12 * width;
    let obj = |c: f64| weighted_sup(f, v, beta, c);
    for _ in 0..400 {
        if hi - lo <= tol {
            break;
        }
        let m1 = lo + (hi - lo) / 3.0;
        let m2 = hi - (hi - lo) / 3.0;
        if obj(m1) <= obj(m2) {
            hi = m2;
        } else {
            lo = m1;
        }
    }
    obj(0.5 * (lo + hi)).min(obj(lo)).min(obj(hi))
}

/// Centered second-order periodic differences along each axis.
pub fn gradient_fd(f: &TorusField) -> VectorField {
    let spec = f.spec;
    let inv2h = 0.5 / spec.spacing();
    let components = (0..spec.dim)
        .map(|axis| {
            let mut plus = [0isize; MAX_DIM];
            plus[axis] = 1;
            let mut minus = [0isize; MAX_DIM];
            minus[axis] = -1;
            let values = (0..spec.len())
                .map(|i| {
                    let m = spec.multi_index(i);
                    (f.values[spec.offset_index(m, plus)] - f.values[spec.offset_index(m, minus)])
                        * inv2h
                })
                .collect();
            TorusField::from_raw(spec, values)
        })
        .collect();
    VectorField::new(components)
}

/// Symmetric matrix of centered second differences at every grid point.
/// Entry `[a][b]` of the returned field list is `d^2 f / dx_a dx_b`.
pub fn hessian_fd(f: &TorusField) -> Vec<Vec<TorusField>> {
    let spec = f.spec;
    let h = spec.spacing();
    let d = spec.dim;
    let mut out = vec![vec![TorusField::constant(spec, 0.0); d]; d];
    for a in 0..d {
        for b in a..d {
            let values: Vec<f64> = (0..spec.len())
                .map(|i| {
                    let m = spec.multi_index(i);
                    let at = |oa: isize, ob: isize| {
                        let mut off = [0isize; MAX_DIM];
                        off[a] += oa;
                        off[b] += ob;
                        f.values[spec.offset_index(m, off)]
                    };
                    if a == b {
                        (at(1, 0) - 2.0 * f.values[i] + at(-1, 0)) / (h * h)
                    } else {
                        (at(1, 1) - at(1, -1) - at(-1, 1) + at(-1, -1)) / (4.0 * h * h)
                    }
                })
                .collect();
            out[a][b] = TorusField::from_raw(spec, values);
            if a != b {
                out[b][a] = out[a][b].clone();
            }
        }
    }
    out
}

/// Largest eigenvalue of the discrete Hessian at each grid point.
pub fn max_curvature(f: &TorusField) -> TorusField {
    let hess = hessian_fd(f);
    let spec = f.spec;
    let values = (0..spec.len())
        .map(|i| match spec.dim {
            1 => hess[0][0].values[i],
            _ => {
                let (p, q, r) = (
                    hess[0][0].values[i],
                    hess[0][1].values[i],
                    hess[1][1].values[i],
                );
                0.5 * (p + r) + (0.25 * (p - r).powi(2) + q * q).sqrt()
            }
        })
        .collect();
    TorusField::from_raw(spec, values)
}

/// A smooth random trigonometric polynomial with modes `|k|_inf <= max_mode`,
/// coefficients decaying like `1/(1+|k|^2)`, scaled to the given oscillation
/// `max - min = 2 * amplitude`.
pub fn random_smooth_field<R: Rng + ?Sized>(
    spec: GridSpec,
    rng: &mut R,
    max_mode: usize,
    amplitude: f64,
) -> TorusField {
    let m = max_mode as i64;
    let mut modes = Vec::new();
    let k1_range = if spec.dim == 1 { 0..=0 } else { -m..=m };
    for k0 in -m..=m {
        for k1 in k1_range.clone() {
            if k0 == 0 && k1 == 0 {
                continue;
            }
            let decay = 1.0 / (1.0 + (k0 * k0 + k1 * k1) as f64);
            let a = rng.random_range(-1.0..1.0) * decay;
            let b = rng.random_range(-1.0..1.0) * decay;
            modes.push((k0 as f64, k1 as f64, a, b));
        }
    }
    let two_pi = 2.0 * std::f64::consts::PI;
    let raw = TorusField::from_fn(spec, |x| {
        let x1 = if x.len() > 1 { x[1] } else { 0.0 };
        modes
            .iter()
            .map(|&(k0, k1, a, b)| {
                let phase = two_pi * (k0 * x[0] + k1 * x1);
                a * phase.cos() + b * phase.sin()
            })
            .sum()
    });
    let osc = raw.sup_norm_mod_const();
    if osc == 0.0 {
        return raw;
    }
    let mid = 0.5 * (raw.max() + raw.min());
    raw.map(|v| (v - mid) * amplitude / osc)
}
