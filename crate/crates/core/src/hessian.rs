//! The n-step action along backward minimizers, its block-tridiagonal
//! Hessian, and determinant and spectral evaluators for it.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};
use crate::torus::{hessian_fd, TorusField, MAX_DIM};
use crate::twist::{backward_orbit, to_dmatrix, BackwardOrbit};
use crate::variational::{generating_function, WeakKamSolution};
use crate::viscous::KernelOperator;

/// Minimizer `X* = (x_{-n}, ..., x_{-1})` of the n-step action ending at `x`.
#[derive(Debug, Clone)]
pub struct ActionPath {
    pub x: [f64; MAX_DIM],
    pub n: usize,
    /// Oldest point first.
    pub points: Vec<[f64; MAX_DIM]>,
    /// `D^2 psi` at each path point, same order as `points`.
    pub curvature: Vec<DMatrix<f64>>,
    /// `H_{n,x}(X*)`; zero up to grid error.
    pub h_value: f64,
    pub orbit: BackwardOrbit,
}

impl ActionPath {
    pub fn dim(&self) -> usize {
        self.orbit.dim()
    }
}

/// `H_{n,x}(X) = sum h(x_i, x_{i+1}) + psi(x_{-n}) - psi(x)` with `psi`
/// interpolated from the grid. `points` are oldest first and exclude `x`.
pub fn action_value(sol: &WeakKamSolution, x: &[f64], points: &[[f64; MAX_DIM]]) -> f64 {
    let d = sol.spec().dim();
    let f = sol.potential();
    let mut total = 0.0;
    for (i, p) in points.iter().enumerate() {
        let next: &[f64] = if i + 1 < points.len() {
            &points[i + 1][..d]
        } else {
            x
        };
        total += generating_function(&p[..d], next, f);
    }
    total + sol.psi.sample(&points[0][..d]) - sol.psi.sample(x)
}

pub fn build_action_path(idx: usize, n: usize, sol: &WeakKamSolution) -> Result<ActionPath> {
    let orbit = backward_orbit(idx, n, sol)?;
    Ok(path_from_orbit(orbit, sol))
}

pub fn path_from_orbit(orbit: BackwardOrbit, sol: &WeakKamSolution) -> ActionPath {
    let n = orbit.n();
    let d = orbit.dim();
    let points = orbit.path_positions();
    let curvature: Vec<DMatrix<f64>> = (1..=n).rev().map(|k| orbit.curvature[k].clone()).collect();
    let x = orbit.source;
    let h_value = action_value(sol, &x[..d], &points);
    ActionPath {
        x,
        n,
        points,
        curvature,
        h_value,
        orbit,
    }
}

/// Block-tridiagonal symmetric matrix with `-I` off the diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct HessianAssembly {
    pub dim: usize,
    pub diag: Vec<DMatrix<f64>>,
}

impl HessianAssembly {
    pub fn blocks(&self) -> usize {
        self.diag.len()
    }

    pub fn size(&self) -> usize {
        self.dim * self.diag.len()
    }

    /// Constant chain with every diagonal block equal to `block`.
    pub fn uniform(block: DMatrix<f64>, n: usize) -> Self {
        HessianAssembly {
            dim: block.nrows(),
            diag: vec![block; n],
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let d = self.dim;
        let size = self.size();
        let mut a = DMatrix::zeros(size, size);
        for (k, b) in self.diag.iter().enumerate() {
            a.view_mut((k * d, k * d), (d, d)).copy_from(b);
            if k + 1 < self.diag.len() {
                for i in 0..d {
                    a[(k * d + i, (k + 1) * d + i)] = -1.0;
                    a[((k + 1) * d + i, k * d + i)] = -1.0;
                }
            }
        }
        a
    }

    /// The leading `keep` blocks.
    pub fn leading(&self, keep: usize) -> HessianAssembly {
        HessianAssembly {
            dim: self.dim,
            diag: self.diag[..keep].to_vec(),
        }
    }
}

/// Diagonal blocks `I + D^2(F + psi)(x_{-n})`, then `2I + D^2F(x_k)`; the
/// `psi` curvature comes from the orbit's graph transform.
pub fn assemble_hessian(path: &ActionPath, sol: &WeakKamSolution) -> HessianAssembly {
    assemble_hessian_with(path, sol, &path.curvature[0])
}

/// Same as [`assemble_hessian`] with `D^2 psi(x_{-n})` taken from centered
/// differences of the grid solution. Errors on the cut locus.
pub fn assemble_hessian_fd(path: &ActionPath, sol: &WeakKamSolution) -> Result<HessianAssembly> {
    let d = path.dim();
    let idx = sol.spec().nearest_index(&path.points[0][..d]);
    if sol.cut_locus[idx] {
        return Err(Error::CutLocus(path.points[0][..d].to_vec()));
    }
    let s = psi_hessian_fd(&sol.psi, &path.points[0][..d]);
    Ok(assemble_hessian_with(path, sol, &s))
}

fn assemble_hessian_with(path: &ActionPath, sol: &WeakKamSolution, top: &DMatrix<f64>) -> HessianAssembly {
    let d = path.dim();
    let f = sol.potential();
    let id = DMatrix::<f64>::identity(d, d);
    let diag = path
        .points
        .iter()
        .enumerate()
        .map(|(k, p)| {
            let m = to_dmatrix(&f.hessian(&p[..d]), d);
            if k == 0 {
                &id + m + top
            } else {
                &id * 2.0 + m
            }
        })
        .collect();
    HessianAssembly { dim: d, diag }
}

/// Interpolated centered-difference Hessian of a grid field.
pub fn psi_hessian_fd(psi: &TorusField, x: &[f64]) -> DMatrix<f64> {
    let d = psi.spec().dim();
    let hs = hessian_fd(psi);
    DMatrix::from_fn(d, d, |a, b| hs[a][b].sample(x))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogDet {
    pub log_abs: f64,
    pub sign: f64,
}

impl LogDet {
    pub fn value(&self) -> f64 {
        self.sign * self.log_abs.exp()
    }
}

pub fn det_dense(a: &HessianAssembly) -> Result<LogDet> {
    log_det_matrix(a.to_dense())
}

pub(crate) fn log_det_matrix(m: DMatrix<f64>) -> Result<LogDet> {
    let size = m.nrows();
    let scale = m.amax();
    let lu = m.lu();
    let u = lu.u();
    let mut log_abs = 0.0;
    let mut sign = lu.p().determinant::<f64>();
    for i in 0..size {
        let piv = u[(i, i)];
        if piv.abs() <= f64::EPSILON * scale * size as f64 {
            return Err(Error::Singular);
        }
        log_abs += piv.abs().ln();
        if piv < 0.0 {
            sign = -sign;
        }
    }
    Ok(LogDet { log_abs, sign })
}

/// Top-left block of `prod [[A_i, -I], [I, 0]]`, rescaled every step.
pub fn det_transfer(a: &HessianAssembly) -> Result<LogDet> {
    let d = a.dim;
    let mut acc = DMatrix::<f64>::identity(2 * d, 2 * d);
    let mut log_scale = 0.0;
    for block in &a.diag {
        let mut t = DMatrix::zeros(2 * d, 2 * d);
        t.view_mut((0, 0), (d, d)).copy_from(block);
        for i in 0..d {
            t[(i, d + i)] = -1.0;
            t[(d + i, i)] = 1.0;
        }
        acc = t * acc;
        let s = acc.amax();
        if !(s > 0.0) || !s.is_finite() {
            return Err(Error::NonFinite("det_transfer"));
        }
        acc /= s;
        log_scale += s.ln();
    }
    let top = acc.view((0, 0), (d, d)).into_owned();
    let mut ld = log_det_matrix(top)?;
    ld.log_abs += d as f64 * log_scale;
    Ok(ld)
}

/// `sum_i log det(I + D^2(F + psi)(x_i))` along the path.
pub fn det_orbit_product(path: &ActionPath, sol: &WeakKamSolution) -> Result<LogDet> {
    let d = path.dim();
    let f = sol.potential();
    let id = DMatrix::<f64>::identity(d, d);
    let mut total = LogDet {
        log_abs: 0.0,
        sign: 1.0,
    };
    for (p, s) in path.points.iter().zip(&path.curvature) {
        let factor = &id + to_dmatrix(&f.hessian(&p[..d]), d) + s;
        let ld = log_det_matrix(factor)?;
        total.log_abs += ld.log_abs;
        total.sign *= ld.sign;
    }
    Ok(total)
}

const DENSE_LIMIT: usize = 400;

pub fn min_eigenvalue(a: &HessianAssembly) -> Result<f64> {
    if a.size() <= DENSE_LIMIT {
        let eig = SymmetricEigen::new(a.to_dense());
        Ok(eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min))
    } else {
        bisect_min_eigenvalue(a)
    }
}

// Number of eigenvalues below `sigma`, from the inertia of the block LDL^T
// factors `D_k = A_k - sigma I - D_{k-1}^{-1}`.
fn count_below(a: &HessianAssembly, sigma: f64) -> Option<usize> {
    let d = a.dim;
    let id = DMatrix::<f64>::identity(d, d);
    let mut count = 0;
    let mut prev_inv: Option<DMatrix<f64>> = None;
    for block in &a.diag {
        let mut dk = block - &id * sigma;
        if let Some(inv) = &prev_inv {
            dk -= inv;
        }
        let dk = (&dk + dk.transpose()) * 0.5;
        count += SymmetricEigen::new(dk.clone())
            .eigenvalues
            .iter()
            .filter(|&&l| l < 0.0)
            .count();
        prev_inv = Some(dk.try_inverse()?);
    }
    Some(count)
}

fn bisect_min_eigenvalue(a: &HessianAssembly) -> Result<f64> {
    // Gershgorin bracket
    let d = a.dim;
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for (k, b) in a.diag.iter().enumerate() {
        let off = if k == 0 || k + 1 == a.blocks() { 1.0 } else { 2.0 };
        for i in 0..d {
            let r: f64 = (0..d).filter(|&j| j != i).map(|j| b[(i, j)].abs()).sum::<f64>() + off;
            lo = lo.min(b[(i, i)] - r);
            hi = hi.max(b[(i, i)] + r);
        }
    }
    if !(lo.is_finite() && hi.is_finite()) {
        return Err(Error::NonFinite("min_eigenvalue"));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if hi - lo <= 1e-14 * hi.abs().max(lo.abs()).max(1.0) {
            break;
        }
        // a singular factor means `mid` is itself an eigenvalue; nudge it
        let c = match count_below(a, mid) {
            Some(c) => c,
            None => count_below(a, mid + 1e-15 * mid.abs().max(1.0)).ok_or(Error::Singular)?,
        };
        if c >= 1 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

#[derive(Debug, Clone, PartialEq)]
pub struct InterlacingReport {
    pub holds: bool,
    pub max_violation: f64,
    /// `log det A - log det B`.
    pub log_det_ratio: f64,
}

/// Compares the spectra of `A` and its leading principal submatrix `B` that
/// drops the last `n_cut` blocks: `lambda_k(A) <= lambda_k(B) <= lambda_{k+m}(A)`
/// with `m = n_cut * d`, eigenvalues ascending.
pub fn eigenvalue_interlacing_check(a: &HessianAssembly, n_cut: usize) -> Result<InterlacingReport> {
    if n_cut >= a.blocks() {
        return Err(Error::InvalidParameter(format!(
            "cannot drop {n_cut} of {} blocks",
            a.blocks()
        )));
    }
    let b = a.leading(a.blocks() - n_cut);
    let ea = sorted_eigenvalues(&a.to_dense());
    let eb = sorted_eigenvalues(&b.to_dense());
    let m = n_cut * a.dim;
    let tol = 1e-10 * ea.iter().fold(1.0f64, |s, v| s.max(v.abs()));
    let mut worst: f64 = 0.0;
    for k in 0..eb.len() {
        worst = worst.max(ea[k] - eb[k]);
        worst = worst.max(eb[k] - ea[k + m]);
    }
    let log_det_ratio = det_dense(a)?.log_abs - det_dense(&b)?.log_abs;
    Ok(InterlacingReport {
        holds: worst <= tol,
        max_violation: worst,
        log_det_ratio,
    })
}

fn sorted_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    let mut e: Vec<f64> = SymmetricEigen::new(m.clone()).eigenvalues.iter().copied().collect();
    e.sort_by(|a, b| a.total_cmp(b));
    e
}

/// `(det(A - eps I) / det A, det(A + eps I) / det A)`.
pub fn perturbed_det_ratio(a: &HessianAssembly, eps: f64) -> Result<(f64, f64)> {
    let ev = sorted_eigenvalues(&a.to_dense());
    if !(eps >= 0.0) || eps >= ev[0] {
        return Err(Error::InvalidParameter(format!(
            "eps = {eps} must lie in [0, lambda_min = {})",
            ev[0]
        )));
    }
    let lo: f64 = ev.iter().map(|l| (1.0 - eps / l).ln()).sum();
    let hi: f64 = ev.iter().map(|l| (1.0 + eps / l).ln()).sum();
    Ok((lo.exp(), hi.exp()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct LaplaceReport {
    pub n: usize,
    pub nu: f64,
    /// `log L~^n 1 (x)` by quadrature.
    pub log_partition: f64,
    pub log_det: f64,
    /// `L~^n 1 (x) * det(A*)^{1/2}`; tends to one as `nu -> 0`.
    pub ratio: f64,
    pub h_value: f64,
}

/// Compares the quadrature partition function at `idx` with the Gaussian
/// (Laplace) prediction `det(A*)^{-1/2}` at the minimizing path.
pub fn laplace_crosscheck(idx: usize, n: usize, op: &KernelOperator, sol: &WeakKamSolution) -> Result<LaplaceReport> {
    if !op.is_conjugated() {
        return Err(Error::InvalidParameter("Laplace check uses the conjugated kernel".into()));
    }
    let path = build_action_path(idx, n, sol)?;
    let ld = det_transfer(&assemble_hessian(&path, sol))?;
    let z = op.iterate_log(&vec![0.0; op.spec().len()], n)?;
    let log_partition = z[idx];
    Ok(LaplaceReport {
        n,
        nu: op.nu(),
        log_partition,
        log_det: ld.log_abs,
        ratio: (log_partition + 0.5 * ld.log_abs).exp(),
        h_value: path.h_value,
    })
}
