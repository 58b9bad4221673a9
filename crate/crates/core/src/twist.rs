//! The twist map generated by `h`, its linearization at the hyperbolic fixed
//! point, and minimizing backward orbits.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::potential::{min_sym_eigenvalue, Mat2, Potential};
use crate::torus::MAX_DIM;
use crate::variational::WeakKamSolution;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhasePoint {
    pub dim: usize,
    pub x: [f64; MAX_DIM],
    pub p: [f64; MAX_DIM],
}

impl PhasePoint {
    pub fn new(x: &[f64], p: &[f64]) -> Self {
        let dim = x.len();
        let mut q = PhasePoint {
            dim,
            x: [0.0; MAX_DIM],
            p: [0.0; MAX_DIM],
        };
        q.x[..dim].copy_from_slice(x);
        q.p[..dim].copy_from_slice(&p[..dim]);
        q
    }

    pub fn distance(&self, other: &PhasePoint) -> f64 {
        (0..self.dim)
            .map(|a| (self.x[a] - other.x[a]).powi(2) + (self.p[a] - other.p[a]).powi(2))
            .sum::<f64>()
            .sqrt()
    }
}

/// `(x, p) -> (x + p + grad F(x), p + grad F(x))`.
pub fn twist_forward(q: &PhasePoint, f: &Potential) -> PhasePoint {
    let g = f.gradient(&q.x[..q.dim]);
    let mut out = *q;
    for a in 0..q.dim {
        out.p[a] = q.p[a] + g[a];
        out.x[a] = q.x[a] + out.p[a];
    }
    out
}

/// Exact inverse of [`twist_forward`].
pub fn twist_backward(q: &PhasePoint, f: &Potential) -> PhasePoint {
    let mut out = *q;
    for a in 0..q.dim {
        out.x[a] = q.x[a] - q.p[a];
    }
    let g = f.gradient(&out.x[..q.dim]);
    for a in 0..q.dim {
        out.p[a] = q.p[a] - g[a];
    }
    out
}

/// `[[I + D^2F, I], [D^2F, I]]`, acting on `(dx, dp)`.
pub fn twist_jacobian(q: &PhasePoint, f: &Potential) -> DMatrix<f64> {
    let d = q.dim;
    let hess = f.hessian(&q.x[..d]);
    let mut j = DMatrix::zeros(2 * d, 2 * d);
    for a in 0..d {
        for b in 0..d {
            j[(a, b)] = hess[a][b] + if a == b { 1.0 } else { 0.0 };
            j[(d + a, b)] = hess[a][b];
        }
        j[(a, d + a)] = 1.0;
        j[(d + a, d + a)] = 1.0;
    }
    j
}

pub(crate) fn to_dmatrix(m: &Mat2, d: usize) -> DMatrix<f64> {
    DMatrix::from_fn(d, d, |i, j| m[i][j])
}

#[derive(Debug, Clone, PartialEq)]
pub struct HyperbolicData {
    pub m: DMatrix<f64>,
    pub s_plus: DMatrix<f64>,
    pub s_minus: DMatrix<f64>,
    /// `det(I + M + S+)`.
    pub mu: f64,
    /// `||(I + M + S+)^{-1}||_2`.
    pub kappa0: f64,
    /// `||S+^2 + S+ M - M||`.
    pub riccati_residual: f64,
    /// `||(I + M + S+)(I + M + S-) - I||`.
    pub branch_residual: f64,
    /// `||S+ M - M S+||`.
    pub commutation_residual: f64,
}

/// `S± = (-M ± sqrt(M^2 + 4M)) / 2` on the eigenbasis of `M = D^2F(0)`.
pub fn hyperbolic_linearization(f: &Potential) -> Result<HyperbolicData> {
    let d = f.dim();
    let m2 = f.hessian(&[0.0, 0.0]);
    if !(min_sym_eigenvalue(&m2, d) > 0.0) {
        return Err(Error::InvalidPotential(
            "D^2F(0) is not positive definite".into(),
        ));
    }
    let m = to_dmatrix(&m2, d);
    hyperbolic_from_matrix(&m)
}

pub fn hyperbolic_from_matrix(m: &DMatrix<f64>) -> Result<HyperbolicData> {
    let d = m.nrows();
    let eig = SymmetricEigen::new(m.clone());
    if eig.eigenvalues.iter().any(|&l| !(l > 0.0)) {
        return Err(Error::InvalidPotential(format!(
            "M is not positive definite: eigenvalues {:?}",
            eig.eigenvalues.as_slice()
        )));
    }
    let q = &eig.eigenvectors;
    let branch = |sign: f64| {
        let diag = DVector::from_iterator(
            d,
            eig.eigenvalues
                .iter()
                .map(|&l| 0.5 * (-l + sign * (l * l + 4.0 * l).sqrt())),
        );
        let s = q * DMatrix::from_diagonal(&diag) * q.transpose();
        // symmetrize away rounding
        (&s + s.transpose()) * 0.5
    };
    let s_plus = branch(1.0);
    let s_minus = branch(-1.0);
    let id = DMatrix::<f64>::identity(d, d);
    let expand = &id + m + &s_plus;
    let mu = expand.determinant();
    let expand_eig = SymmetricEigen::new(expand.clone());
    let min_expand = expand_eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    let kappa0 = 1.0 / min_expand;
    let riccati_residual = (&s_plus * &s_plus + &s_plus * m - m).norm();
    let branch_residual = (&expand * (&id + m + &s_minus) - &id).norm();
    let commutation_residual = (&s_plus * m - m * &s_plus).norm();
    Ok(HyperbolicData {
        m: m.clone(),
        s_plus,
        s_minus,
        mu,
        kappa0,
        riccati_residual,
        branch_residual,
        commutation_residual,
    })
}

/// Minimizing backward orbit `(x_{-k}, p_{-k})`, `k = 0..=n`, ending at `x`.
#[derive(Debug, Clone)]
pub struct BackwardOrbit {
    pub source: [f64; MAX_DIM],
    pub points: Vec<PhasePoint>,
    /// `D^2 psi(x_{-k})` propagated along the orbit by the graph transform.
    pub curvature: Vec<DMatrix<f64>>,
    /// Integer lift of the fixed point the orbit converges to.
    pub anchor: [f64; MAX_DIM],
    /// First `k` after which `|x_{-j} - anchor|` decreases for every `j >= k`.
    pub transient: usize,
    /// Largest Euler-Lagrange residual over the solved chain.
    pub el_residual: f64,
}

impl BackwardOrbit {
    pub fn n(&self) -> usize {
        self.points.len() - 1
    }

    pub fn dim(&self) -> usize {
        self.points[0].dim
    }

    /// Positions `x_{-n}, ..., x_{-1}` (oldest first).
    pub fn path_positions(&self) -> Vec<[f64; MAX_DIM]> {
        self.points[1..].iter().rev().map(|q| q.x).collect()
    }

    /// `|x_{-k} - anchor|` for `k = 0..=n`.
    pub fn radii(&self) -> Vec<f64> {
        let d = self.dim();
        self.points
            .iter()
            .map(|q| {
                (0..d)
                    .map(|a| (q.x[a] - self.anchor[a]).powi(2))
                    .sum::<f64>()
                    .sqrt()
            })
            .collect()
    }
}

/// Backward orbit seeded at grid point `idx`.
pub fn backward_orbit(idx: usize, n: usize, sol: &WeakKamSolution) -> Result<BackwardOrbit> {
    let spec = sol.spec();
    if sol.cut_locus[idx] {
        return Err(Error::CutLocus(spec.coords(idx)[..spec.dim()].to_vec()));
    }
    backward_orbit_from(&spec.centered_coords(idx)[..spec.dim()], n, sol)
}

/// Backward orbit ending at an arbitrary lift `x`.
///
/// Iterating the inverse map directly amplifies errors by about `mu` per step,
/// so the orbit is obtained as the solution of the discrete Euler-Lagrange
/// boundary problem on a chain longer than `n`, closed at the far end by the
/// linearized condition `p = S+ (x - anchor)`. The grid minimizer map only
/// provides the starting guess.
pub fn backward_orbit_from(x: &[f64], n: usize, sol: &WeakKamSolution) -> Result<BackwardOrbit> {
    if n == 0 {
        return Err(Error::InvalidParameter("orbit length must be at least 1".into()));
    }
    let f = sol.potential();
    let d = f.dim();
    let hyp = hyperbolic_linearization(f)?;
    let extra = ((40.0 / -hyp.kappa0.ln()).ceil() as usize).clamp(8, 200);
    let total = n + extra;

    let spec = sol.spec();
    let momentum = momentum_field(sol);
    let mut chain = vec![[0.0; MAX_DIM]; total + 1];
    chain[0][..d].copy_from_slice(x);
    for j in 1..=total {
        let prev = chain[j - 1];
        let p = if j == 1 && is_grid_point(spec, x) {
            sol.momentum(spec.nearest_index(x))
        } else {
            let mut p = [0.0; MAX_DIM];
            for a in 0..d {
                p[a] = momentum[a].sample(&prev[..d]);
            }
            p
        };
        for a in 0..d {
            chain[j][a] = prev[a] - p[a];
        }
    }
    let mut anchor = [0.0; MAX_DIM];
    for a in 0..d {
        anchor[a] = chain[total][a].round();
    }

    let el_residual = solve_chain(&mut chain, &anchor, &hyp.s_plus, f)?;

    let bound = 2.0 * sol.lipschitz + 1.0;
    let mut points = Vec::with_capacity(n + 1);
    for k in 0..=n {
        let mut p = [0.0; MAX_DIM];
        for a in 0..d {
            p[a] = chain[k][a] - chain[k + 1][a];
        }
        let pn = p[..d].iter().map(|v| v * v).sum::<f64>().sqrt();
        if pn > bound {
            return Err(Error::OrbitEscaped {
                step: k,
                momentum: pn,
                bound,
            });
        }
        points.push(PhasePoint::new(&chain[k][..d], &p[..d]));
    }

    // graph transform S_{k+1} = (M_k + S_k)(I + M_k + S_k)^{-1}, from the deep end
    let id = DMatrix::<f64>::identity(d, d);
    let mut s = hyp.s_plus.clone();
    let mut curvature = vec![DMatrix::zeros(d, d); n + 1];
    for j in (0..=total).rev() {
        if j <= n {
            curvature[j] = s.clone();
        }
        if j == 0 {
            break;
        }
        let mj = to_dmatrix(&f.hessian(&chain[j][..d]), d);
        let a = &mj + &s;
        let inv = (&id + &a).try_inverse().ok_or(Error::Singular)?;
        let next = &a * inv;
        s = (&next + next.transpose()) * 0.5;
    }

    let radii: Vec<f64> = chain
        .iter()
        .map(|c| (0..d).map(|a| (c[a] - anchor[a]).powi(2)).sum::<f64>().sqrt())
        .collect();
    let mut transient = n;
    for k in (0..n).rev() {
        if radii[k + 1] < radii[k] || radii[k] == 0.0 {
            transient = k;
        } else {
            break;
        }
    }

    let mut source = [0.0; MAX_DIM];
    source[..d].copy_from_slice(x);
    Ok(BackwardOrbit {
        source,
        points,
        curvature,
        anchor,
        transient,
        el_residual,
    })
}

fn is_grid_point(spec: crate::torus::GridSpec, x: &[f64]) -> bool {
    let n = spec.n_per_axis() as f64;
    x.iter().all(|&c| ((c * n) - (c * n).round()).abs() < 1e-9)
}

fn momentum_field(sol: &WeakKamSolution) -> Vec<crate::torus::TorusField> {
    let spec = sol.spec();
    (0..spec.dim())
        .map(|a| {
            let vals = (0..spec.len()).map(|i| sol.momentum(i)[a]).collect();
            crate::torus::TorusField::from_raw(spec, vals)
        })
        .collect()
}

// Newton on chain[1..] with chain[0] fixed. Returns the final residual.
fn solve_chain(
    chain: &mut [[f64; MAX_DIM]],
    anchor: &[f64; MAX_DIM],
    s_plus: &DMatrix<f64>,
    f: &Potential,
) -> Result<f64> {
    let d = f.dim();
    let len = chain.len() - 1;
    let size = len * d;
    let residual = |c: &[[f64; MAX_DIM]]| -> DVector<f64> {
        let mut r = DVector::zeros(size);
        for j in 1..=len {
            let g = f.gradient(&c[j][..d]);
            for a in 0..d {
                let v = if j < len {
                    2.0 * c[j][a] - c[j - 1][a] - c[j + 1][a] + g[a]
                } else {
                    let sp: f64 = (0..d).map(|b| s_plus[(a, b)] * (c[j][b] - anchor[b])).sum();
                    c[j][a] - c[j - 1][a] + g[a] + sp
                };
                r[(j - 1) * d + a] = v;
            }
        }
        r
    };
    let mut r = residual(chain);
    let mut norm = r.amax();
    for _ in 0..60 {
        if norm < 1e-13 {
            break;
        }
        let mut jac = DMatrix::zeros(size, size);
        for j in 1..=len {
            let hess = f.hessian(&chain[j][..d]);
            let base = (j - 1) * d;
            for a in 0..d {
                for b in 0..d {
                    let mut v = hess[a][b];
                    if j == len {
                        v += s_plus[(a, b)];
                    }
                    if a == b {
                        v += if j < len { 2.0 } else { 1.0 };
                    }
                    jac[(base + a, base + b)] = v;
                }
                if j < len {
                    jac[(base + a, base + d + a)] = -1.0;
                    jac[(base + d + a, base + a)] = -1.0;
                }
            }
        }
        let step = jac.lu().solve(&(-&r)).ok_or(Error::Singular)?;
        let mut t = 1.0;
        loop {
            let mut trial = chain.to_vec();
            for j in 1..=len {
                for a in 0..d {
                    trial[j][a] += t * step[(j - 1) * d + a];
                }
            }
            let rt = residual(&trial);
            let nt = rt.amax();
            if nt < norm || t < 1e-6 {
                chain.copy_from_slice(&trial);
                r = rt;
                norm = nt;
                break;
            }
            t *= 0.5;
        }
    }
    if !(norm < 1e-9) {
        return Err(Error::NotConverged {
            what: "backward orbit Newton solve",
            iterations: 60,
            residual: norm,
        });
    }
    Ok(norm)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::torus::GridSpec;
    use crate::variational::{backward_minimizer, solve_weak_kam};
    use std::f64::consts::PI;
    use std::sync::OnceLock;

    fn sol() -> &'static WeakKamSolution {
        static SOL: OnceLock<WeakKamSolution> = OnceLock::new();
        SOL.get_or_init(|| {
            let f = Potential::cosine(1, 1.0, 0.0).unwrap();
            solve_weak_kam(&f, GridSpec::new(1, 256).unwrap(), 1e-11, 500).unwrap()
        })
    }

    #[test]
    fn forward_examples() {
        let f = Potential::cosine(1, 1.0, 0.0).unwrap();
        let origin = PhasePoint::new(&[0.0], &[0.0]);
        assert_eq!(twist_forward(&origin, &f), origin);
        let free = twist_forward(&PhasePoint::new(&[0.3], &[0.2]), &Potential::zero(1));
        assert!((free.x[0] - 0.5).abs() < 1e-15 && free.p[0] == 0.2);
        let q = twist_forward(&PhasePoint::new(&[0.25], &[0.1]), &f);
        assert!((q.x[0] - (0.35 + PI)).abs() < 1e-12);
        assert!((q.p[0] - (0.1 + PI)).abs() < 1e-12);
    }

    #[test]
    fn jacobian_examples() {
        let j = twist_jacobian(&PhasePoint::new(&[0.3, 0.1], &[0.0, 0.0]), &Potential::zero(2));
        let expect = DMatrix::from_row_slice(
            4,
            4,
            &[1., 0., 1., 0., 0., 1., 0., 1., 0., 0., 1., 0., 0., 0., 0., 1.],
        );
        assert_eq!(j, expect);
        let f = Potential::cosine(2, 1.0, 0.4).unwrap();
        let q = PhasePoint::new(&[0.17, 0.61], &[0.3, -0.2]);
        let j = twist_jacobian(&q, &f);
        assert!((j.determinant() - 1.0).abs() < 1e-10);
        let h = 1e-6;
        for col in 0..4 {
            let mut qp = q;
            let mut qm = q;
            if col < 2 {
                qp.x[col] += h;
                qm.x[col] -= h;
            } else {
                qp.p[col - 2] += h;
                qm.p[col - 2] -= h;
            }
            let (fp, fm) = (twist_forward(&qp, &f), twist_forward(&qm, &f));
            for row in 0..4 {
                let v = |z: &PhasePoint| if row < 2 { z.x[row] } else { z.p[row - 2] };
                let fd = (v(&fp) - v(&fm)) / (2.0 * h);
                assert!((fd - j[(row, col)]).abs() < 1e-6, "{row}{col}");
            }
        }
    }

    #[test]
    fn scalar_linearization() {
        let f = Potential::cosine_with_curvature(3.0).unwrap();
        let hyp = hyperbolic_linearization(&f).unwrap();
        let s = (-3.0 + 21f64.sqrt()) / 2.0;
        assert!((hyp.s_plus[(0, 0)] - s).abs() < 1e-12);
        assert!((hyp.s_plus[(0, 0)] - 0.79129).abs() < 1e-5);
        assert!((hyp.mu - 4.79129).abs() < 1e-5);
        assert!((hyp.kappa0 - 0.20871).abs() < 1e-5);
        assert!(hyp.riccati_residual < 1e-10 && hyp.branch_residual < 1e-10);
    }

    #[test]
    fn diagonal_linearization() {
        let m = DMatrix::from_row_slice(2, 2, &[3.0, 0.0, 0.0, 5.0]);
        let hyp = hyperbolic_from_matrix(&m).unwrap();
        assert!((hyp.s_plus[(1, 1)] - (-5.0 + 45f64.sqrt()) / 2.0).abs() < 1e-12);
        assert!(hyp.s_plus[(0, 1)].abs() < 1e-14);
        let m = DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 3.0]);
        let hyp = hyperbolic_from_matrix(&m).unwrap();
        assert!(hyp.riccati_residual < 1e-10);
        assert!(hyp.commutation_residual < 1e-10);
        assert!(hyp.branch_residual < 1e-10);
        assert!(hyp.mu > 1.0 && hyp.kappa0 > 0.0 && hyp.kappa0 < 1.0);
        // graph of S+ is invariant under the linearized map
        let j = {
            let mut j = DMatrix::zeros(4, 4);
            j.view_mut((0, 0), (2, 2)).copy_from(&(DMatrix::identity(2, 2) + &m));
            j.view_mut((0, 2), (2, 2)).fill_with_identity();
            j.view_mut((2, 0), (2, 2)).copy_from(&m);
            j.view_mut((2, 2), (2, 2)).fill_with_identity();
            j
        };
        let hvec = DVector::from_vec(vec![0.3, -0.7]);
        let mut v = DVector::zeros(4);
        v.rows_mut(0, 2).copy_from(&hvec);
        v.rows_mut(2, 2).copy_from(&(&hyp.s_plus * &hvec));
        let w = j * v;
        let image = w.rows(0, 2).into_owned();
        assert!((w.rows(2, 2) - &hyp.s_plus * image).norm() < 1e-10);
        assert!(hyperbolic_from_matrix(&DMatrix::from_row_slice(1, 1, &[-1.0])).is_err());
    }

    #[test]
    fn orbit_at_origin_is_constant() {
        let o = backward_orbit(0, 10, sol()).unwrap();
        assert!(o.points.iter().all(|q| q.x[0] == 0.0 && q.p[0] == 0.0));
    }

    #[test]
    fn orbit_is_a_twist_orbit_and_matches_minimizer() {
        let s = sol();
        let f = s.potential();
        let hyp = hyperbolic_linearization(f).unwrap();
        for idx in [5, 40, 90, 160, 230] {
            let o = backward_orbit(idx, 12, s).unwrap();
            for k in 0..12 {
                let fwd = twist_forward(&o.points[k + 1], f);
                assert!(fwd.distance(&o.points[k]) < 1e-9, "{idx} {k}");
            }
            // first step agrees with the grid minimizer
            let y = backward_minimizer(idx, s).coords()[0];
            let dy = crate::torus::wrap_signed(o.points[1].x[0] - y);
            assert!(dy.abs() < 2.0 * s.spec().spacing(), "{idx}: {dy}");
            // exponential approach to the fixed point at rate kappa0
            let r = o.radii();
            let k0 = o.transient + 1;
            let rate = (r[12] / r[k0]).powf(1.0 / (12 - k0) as f64);
            assert!((rate - hyp.kappa0).abs() < 0.05 * hyp.kappa0, "{idx}: {rate}");
        }
    }

    #[test]
    fn orbit_agrees_with_iterated_minimizer() {
        let s = sol();
        let o = backward_orbit(70, 4, s).unwrap();
        let mut y = s.spec().point(70);
        for k in 1..=4 {
            let idx = s.spec().nearest_index(y.coords());
            y = s.ybar_point(idx);
            let d = crate::torus::wrap_signed(o.points[k].x[0] - y.coords()[0]);
            assert!(d.abs() < 2.0 * s.spec().spacing(), "{k}: {d}");
        }
    }

    #[test]
    fn orbit_curvature_matches_psi() {
        let s = sol();
        let o = backward_orbit(30, 3, s).unwrap();
        let hs = crate::torus::hessian_fd(&s.psi);
        let fd = hs[0][0].values()[30];
        assert!((o.curvature[0][(0, 0)] - fd).abs() < 1e-2 * (1.0 + fd.abs()), "{fd}");
    }

    #[test]
    fn cut_locus_seed_is_rejected() {
        let s = sol();
        assert!(matches!(backward_orbit(128, 5, s), Err(Error::CutLocus(_))));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn backward_inverts_forward(
                x0 in -1.0f64..1.0, x1 in -1.0f64..1.0,
                p0 in -2.0f64..2.0, p1 in -2.0f64..2.0,
                c in 0.0f64..0.5,
            ) {
                let f = Potential::cosine(2, 1.0, c).unwrap();
                let q = PhasePoint::new(&[x0, x1], &[p0, p1]);
                let round = twist_forward(&twist_backward(&q, &f), &f);
                prop_assert!(round.distance(&q) <= 1e-14 * (1.0 + x0.abs() + p0.abs() + 10.0));
                prop_assert!((twist_jacobian(&q, &f).determinant() - 1.0).abs() < 1e-10);
            }
        }
    }
}
