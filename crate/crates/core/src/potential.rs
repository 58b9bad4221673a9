//! Kick potentials `F` on the torus with closed-form derivatives.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::torus::{GridSpec, TorusField, MAX_DIM};

pub type Vec2 = [f64; MAX_DIM];
pub type Mat2 = [[f64; MAX_DIM]; MAX_DIM];
pub type Tensor3 = [[[f64; MAX_DIM]; MAX_DIM]; MAX_DIM];

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Family {
    /// `F = 0`. Free motion; fails validation and only exists for tests.
    Zero,
    /// `F = a/2 * sum_i g(x_i) + c * g(x_0) g(x_1)` with `g(t) = 1 - cos(2 pi t)`.
    /// The cross term is ignored in one dimension.
    Cosine { a: f64, c: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Potential {
    dim: usize,
    family: Family,
}

// g and its derivatives, g^(k)(t)
#[inline]
fn g_derivs(t: f64) -> [f64; 4] {
    let w = 2.0 * PI;
    let (s, c) = (w * t).sin_cos();
    [1.0 - c, w * s, w * w * c, -w * w * w * s]
}

impl Potential {
    /// The default family. Fails unless `a > 0`, `c >= 0` and `D^2 F(0)` is
    /// positive definite.
    pub fn cosine(dim: usize, a: f64, c: f64) -> Result<Self> {
        if dim == 0 || dim > MAX_DIM {
            return Err(Error::InvalidPotential(format!("unsupported dimension {dim}")));
        }
        if !(a > 0.0) || !a.is_finite() {
            return Err(Error::InvalidPotential(format!("amplitude a must be positive, got {a}")));
        }
        if !(c >= 0.0) || !c.is_finite() {
            return Err(Error::InvalidPotential(format!(
                "cross coupling c must be non-negative, got {c}"
            )));
        }
        let p = Potential {
            dim,
            family: Family::Cosine { a, c },
        };
        let m = p.hessian(&[0.0, 0.0]);
        let min_eig = min_sym_eigenvalue(&m, dim);
        if !(min_eig > 0.0) {
            return Err(Error::InvalidPotential(format!(
                "D^2F(0) is not positive definite (smallest eigenvalue {min_eig})"
            )));
        }
        Ok(p)
    }

    /// One-dimensional cosine potential with `F''(0) = m`.
    pub fn cosine_with_curvature(m: f64) -> Result<Self> {
        Self::cosine(1, m / (2.0 * PI * PI), 0.0)
    }

    pub fn zero(dim: usize) -> Self {
        Potential {
            dim,
            family: Family::Zero,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn is_zero(&self) -> bool {
        matches!(self.family, Family::Zero)
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        match self.family {
            Family::Zero => 0.0,
            Family::Cosine { a, c } => {
                let g0 = g_derivs(x[0])[0];
                if self.dim == 1 {
                    0.5 * a * g0
                } else {
                    let g1 = g_derivs(x[1])[0];
                    0.5 * a * (g0 + g1) + c * g0 * g1
                }
            }
        }
    }

    pub fn gradient(&self, x: &[f64]) -> Vec2 {
        match self.family {
            Family::Zero => [0.0; MAX_DIM],
            Family::Cosine { a, c } => {
                let d0 = g_derivs(x[0]);
                if self.dim == 1 {
                    [0.5 * a * d0[1], 0.0]
                } else {
                    let d1 = g_derivs(x[1]);
                    [
                        0.5 * a * d0[1] + c * d0[1] * d1[0],
                        0.5 * a * d1[1] + c * d1[1] * d0[0],
                    ]
                }
            }
        }
    }

    pub fn hessian(&self, x: &[f64]) -> Mat2 {
        match self.family {
            Family::Zero => [[0.0; MAX_DIM]; MAX_DIM],
            Family::Cosine { a, c } => {
                let d0 = g_derivs(x[0]);
                if self.dim == 1 {
                    [[0.5 * a * d0[2], 0.0], [0.0, 0.0]]
                } else {
                    let d1 = g_derivs(x[1]);
                    let off = c * d0[1] * d1[1];
                    [
                        [0.5 * a * d0[2] + c * d0[2] * d1[0], off],
                        [off, 0.5 * a * d1[2] + c * d1[2] * d0[0]],
                    ]
                }
            }
        }
    }

    /// `t[i][j][k] = d^3 F / dx_i dx_j dx_k`.
    pub fn third_derivative(&self, x: &[f64]) -> Tensor3 {
        let mut t = [[[0.0; MAX_DIM]; MAX_DIM]; MAX_DIM];
        if let Family::Cosine { a, c } = self.family {
            let d0 = g_derivs(x[0]);
            if self.dim == 1 {
                t[0][0][0] = 0.5 * a * d0[3];
                return t;
            }
            let d = [d0, g_derivs(x[1])];
            for i in 0..2 {
                for j in 0..2 {
                    for k in 0..2 {
                        let mut counts = [0usize; 2];
                        counts[i] += 1;
                        counts[j] += 1;
                        counts[k] += 1;
                        let sep = d[0][counts[0]] * d[1][counts[1]];
                        let diag = if counts[0] == 3 {
                            0.5 * a * d[0][3]
                        } else if counts[1] == 3 {
                            0.5 * a * d[1][3]
                        } else {
                            0.0
                        };
                        t[i][j][k] = diag + c * sep;
                    }
                }
            }
        }
        t
    }

    pub fn sample(&self, spec: GridSpec) -> TorusField {
        TorusField::from_fn(spec, |x| self.value(x))
    }

    /// Upper bound on `|grad F|` over the torus.
    pub fn gradient_bound(&self) -> f64 {
        match self.family {
            Family::Zero => 0.0,
            Family::Cosine { a, c } => {
                let w = 2.0 * PI;
                let g1 = w;
                if self.dim == 1 {
                    0.5 * a * g1
                } else {
                    (0.5 * a * g1 + 2.0 * c * g1) * 2f64.sqrt()
                }
            }
        }
    }
}

/// Smallest eigenvalue of the leading `dim x dim` block of a symmetric matrix.
pub fn min_sym_eigenvalue(m: &Mat2, dim: usize) -> f64 {
    if dim == 1 {
        m[0][0]
    } else {
        let (p, q, r) = (m[0][0], m[0][1], m[1][1]);
        0.5 * (p + r) - (0.25 * (p - r).powi(2) + q * q).sqrt()
    }
}
