//! Inviscid side: the generating function, the Lax-Oleinik operator on the
//! grid, its weak KAM fixed point and the backward minimizer map.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fit::{linear_fit, LinearFit};
use crate::potential::Potential;
use crate::torus::{
    gradient_fd, hessian_fd, lift_distance, max_curvature, wrap_signed, GridSpec, TorusField,
    TorusPoint, VectorField, MAX_DIM,
};
use crate::twist::HyperbolicData;

/// `h(y, x) = |x - y|^2 / 2 + F(y)` for lifts `y`, `x`.
pub fn generating_function(y: &[f64], x: &[f64], f: &Potential) -> f64 {
    let sq: f64 = x.iter().zip(y).map(|(a, b)| (a - b).powi(2)).sum();
    0.5 * sq + f.value(y)
}

/// `A(y, x) = min_k h(y + k, x)` over integer shifts with `|k|_inf <= 1`.
pub fn periodic_action(y: &TorusPoint, x: &TorusPoint, f: &Potential) -> f64 {
    let d = y.dim();
    let mut best = f64::INFINITY;
    let shifts: &[[f64; 2]] = if d == 1 {
        &[[-1.0, 0.0], [0.0, 0.0], [1.0, 0.0]]
    } else {
        &[
            [-1.0, -1.0],
            [-1.0, 0.0],
            [-1.0, 1.0],
            [0.0, -1.0],
            [0.0, 0.0],
            [0.0, 1.0],
            [1.0, -1.0],
            [1.0, 0.0],
            [1.0, 1.0],
        ]
    };
    for k in shifts {
        let mut yk = [0.0; MAX_DIM];
        for a in 0..d {
            yk[a] = y.coords()[a] + k[a];
        }
        best = best.min(generating_function(&yk[..d], x.coords(), f));
    }
    best
}

/// Smallest `A(y,x) / (|y|^2 + |x|^2)` over distinct grid pairs, excluding
/// `x = y = 0`. A positive value is the coercivity constant `1/C`.
pub fn action_coercivity(f: &Potential, spec: GridSpec) -> f64 {
    let fv = f.sample(spec);
    let n = spec.len();
    (0..n)
        .into_par_iter()
        .map(|ix| {
            let xc = spec.centered_coords(ix);
            let x2: f64 = xc[..spec.dim()].iter().map(|v| v * v).sum();
            let mut best = f64::INFINITY;
            for iy in 0..n {
                if ix == 0 && iy == 0 {
                    continue;
                }
                let yc = spec.centered_coords(iy);
                let y2: f64 = yc[..spec.dim()].iter().map(|v| v * v).sum();
                let dist = lift_distance(&xc[..spec.dim()], &yc[..spec.dim()]);
                let a = 0.5 * dist * dist + fv.values()[iy];
                best = best.min(a / (x2 + y2));
            }
            best
        })
        .reduce(|| f64::INFINITY, f64::min)
}

/// Output of one application of [`LaxOleinik`] with argmin bookkeeping.
#[derive(Debug, Clone)]
pub struct LoStep {
    pub values: TorusField,
    /// Polished minimizer at each grid point, as the lift nearest to `x`.
    pub ybar: Vec<[f64; MAX_DIM]>,
    /// Grid points whose minimum is attained (to rounding) at two separated
    /// grid locations.
    pub ties: usize,
}

/// The min-plus operator `T(phi)(x) = min_y { phi(y) + A(y, x) }` on a grid.
#[derive(Debug, Clone)]
pub struct LaxOleinik {
    spec: GridSpec,
    potential: Potential,
    f_vals: Vec<f64>,
    // half squared torus distance per axis offset
    half_dsq: Vec<f64>,
    polish: bool,
}

struct Minimum {
    value: f64,
    disp: [f64; MAX_DIM],
    tie: bool,
}

impl LaxOleinik {
    pub fn new(spec: GridSpec, potential: Potential) -> Result<Self> {
        if spec.dim() != potential.dim() {
            return Err(Error::InvalidParameter(format!(
                "grid dimension {} does not match potential dimension {}",
                spec.dim(),
                potential.dim()
            )));
        }
        let n = spec.n_per_axis();
        let half_dsq = (0..n)
            .map(|k| 0.5 * wrap_signed(k as f64 / n as f64).powi(2))
            .collect();
        Ok(LaxOleinik {
            spec,
            potential,
            f_vals: potential.sample(spec).into_values(),
            half_dsq,
            polish: true,
        })
    }

    /// Toggle the local quadratic refinement of the grid argmin.
    pub fn with_polish(mut self, polish: bool) -> Self {
        self.polish = polish;
        self
    }

    pub fn spec(&self) -> GridSpec {
        self.spec
    }

    pub fn potential(&self) -> &Potential {
        &self.potential
    }

    pub fn polish(&self) -> bool {
        self.polish
    }

    fn cost_field(&self, phi: &TorusField) -> Vec<f64> {
        phi.values()
            .iter()
            .zip(&self.f_vals)
            .map(|(p, f)| p + f)
            .collect()
    }

    pub fn apply(&self, phi: &TorusField) -> TorusField {
        let g = self.cost_field(phi);
        let values = (0..self.spec.len())
            .into_par_iter()
            .map(|i| self.minimize(&g, i, false).value)
            .collect();
        TorusField::from_raw(self.spec, values)
    }

    pub fn apply_with_minimizers(&self, phi: &TorusField) -> LoStep {
        let g = self.cost_field(phi);
        let mins: Vec<Minimum> = (0..self.spec.len())
            .into_par_iter()
            .map(|i| self.minimize(&g, i, true))
            .collect();
        let ties = mins.iter().filter(|m| m.tie).count();
        let values = mins.iter().map(|m| m.value).collect();
        let ybar = mins
            .iter()
            .enumerate()
            .map(|(i, m)| {
                let x = self.spec.coords(i);
                let mut y = [0.0; MAX_DIM];
                for a in 0..self.spec.dim() {
                    y[a] = x[a] - m.disp[a];
                }
                y
            })
            .collect();
        LoStep {
            values: TorusField::from_raw(self.spec, values),
            ybar,
            ties,
        }
    }

    #[inline]
    fn cost(&self, g: &[f64], x: [usize; MAX_DIM], y: [usize; MAX_DIM]) -> f64 {
        let n = self.spec.n_per_axis();
        let mut c = g[self.spec.flat_index(y)];
        for a in 0..self.spec.dim() {
            c += self.half_dsq[(x[a] + n - y[a]) % n];
        }
        c
    }

    fn minimize(&self, g: &[f64], ix: usize, check_ties: bool) -> Minimum {
        let spec = self.spec;
        let n = spec.n_per_axis();
        let xm = spec.multi_index(ix);
        let (best_val, best_idx) = match spec.dim() {
            1 => {
                let i = xm[0];
                let mut bv = f64::INFINITY;
                let mut bj = 0;
                for (j, &gj) in g.iter().enumerate() {
                    let k = if j <= i { i - j } else { i + n - j };
                    let c = gj + self.half_dsq[k];
                    if c < bv {
                        bv = c;
                        bj = j;
                    }
                }
                (bv, bj)
            }
            _ => {
                let col: Vec<f64> = (0..n).map(|j1| self.half_dsq[(xm[1] + n - j1) % n]).collect();
                let mut bv = f64::INFINITY;
                let mut bj = 0;
                for j0 in 0..n {
                    let row = self.half_dsq[(xm[0] + n - j0) % n];
                    let gr = &g[j0 * n..(j0 + 1) * n];
                    for j1 in 0..n {
                        let c = gr[j1] + row + col[j1];
                        if c < bv {
                            bv = c;
                            bj = j0 * n + j1;
                        }
                    }
                }
                (bv, bj)
            }
        };

        let tie = check_ties && self.has_separated_tie(g, xm, best_idx, best_val);

        let ym = spec.multi_index(best_idx);
        let h = spec.spacing();
        let xc = spec.coords(ix);
        let yc = spec.coords(best_idx);
        let mut disp = [0.0; MAX_DIM];
        for a in 0..spec.dim() {
            disp[a] = wrap_signed(xc[a] - yc[a]);
        }
        let mut value = best_val;
        if self.polish {
            let at = |off: [isize; MAX_DIM]| {
                let m = spec.multi_index(spec.offset_index(ym, off));
                self.cost(g, xm, m)
            };
            match spec.dim() {
                1 => {
                    let (gm, gp) = (at([-1, 0]), at([1, 0]));
                    let c2 = gm - 2.0 * best_val + gp;
                    if c2 > 0.0 {
                        let t = ((gm - gp) / (2.0 * c2)).clamp(-1.0, 1.0);
                        value = best_val - (gm - gp).powi(2) / (8.0 * c2);
                        value = value.min(best_val);
                        disp[0] -= t * h;
                    }
                }
                _ => {
                    let g0 = best_val;
                    let b = [
                        0.5 * (at([1, 0]) - at([-1, 0])),
                        0.5 * (at([0, 1]) - at([0, -1])),
                    ];
                    let h00 = at([1, 0]) - 2.0 * g0 + at([-1, 0]);
                    let h11 = at([0, 1]) - 2.0 * g0 + at([0, -1]);
                    let h01 = 0.25 * (at([1, 1]) - at([1, -1]) - at([-1, 1]) + at([-1, -1]));
                    let det = h00 * h11 - h01 * h01;
                    if h00 > 0.0 && det > 0.0 {
                        let t0 = -(h11 * b[0] - h01 * b[1]) / det;
                        let t1 = -(-h01 * b[0] + h00 * b[1]) / det;
                        if t0.abs() <= 1.0 && t1.abs() <= 1.0 {
                            let q = g0 + 0.5 * (b[0] * t0 + b[1] * t1);
                            if q <= g0 {
                                value = q;
                                disp[0] -= t0 * h;
                                disp[1] -= t1 * h;
                            }
                        }
                    }
                }
            }
        }
        Minimum { value, disp, tie }
    }

    // Another grid point outside the 3^d stencil of the argmin reaching the
    // same value up to rounding.
    fn has_separated_tie(
        &self,
        g: &[f64],
        xm: [usize; MAX_DIM],
        best: usize,
        best_val: f64,
    ) -> bool {
        let spec = self.spec;
        let n = spec.n_per_axis() as isize;
        let bm = spec.multi_index(best);
        let tol = 1e-12 * (1.0 + best_val.abs());
        (0..spec.len()).any(|j| {
            let jm = spec.multi_index(j);
            let near = (0..spec.dim()).all(|a| {
                let d = (jm[a] as isize - bm[a] as isize).rem_euclid(n);
                d <= 1 || d == n - 1
            });
            !near && self.cost(g, xm, jm) <= best_val + tol
        })
    }
}

#[derive(Debug, Clone)]
pub struct WeakKamSolution {
    pub psi: TorusField,
    /// Centered finite differences of `psi`; meaningless where `cut_locus` is set.
    pub grad_psi: VectorField,
    pub ybar: Vec<[f64; MAX_DIM]>,
    pub cut_locus: Vec<bool>,
    pub residual: f64,
    pub iterations: usize,
    pub ties: usize,
    /// Largest finite-difference slope of `psi`.
    pub lipschitz: f64,
    potential: Potential,
    polish: bool,
}

impl WeakKamSolution {
    pub fn spec(&self) -> GridSpec {
        self.psi.spec()
    }

    pub fn potential(&self) -> &Potential {
        &self.potential
    }

    /// `grad psi(x)` from the finite-difference field, `None` on the cut locus.
    pub fn gradient_at(&self, idx: usize) -> Option<[f64; MAX_DIM]> {
        if self.cut_locus[idx] {
            None
        } else {
            Some(self.grad_psi.at(idx))
        }
    }

    /// `p = x - ybar(x)`, the momentum of the minimizing step arriving at `x`.
    pub fn momentum(&self, idx: usize) -> [f64; MAX_DIM] {
        let x = self.spec().coords(idx);
        let mut p = [0.0; MAX_DIM];
        for a in 0..self.spec().dim() {
            p[a] = x[a] - self.ybar[idx][a];
        }
        p
    }

    pub fn ybar_point(&self, idx: usize) -> TorusPoint {
        TorusPoint::new(&self.ybar[idx][..self.spec().dim()]).expect("finite minimizer")
    }

    pub fn lax_oleinik(&self) -> LaxOleinik {
        LaxOleinik::new(self.spec(), self.potential)
            .expect("dimensions checked at solve time")
            .with_polish(self.polish)
    }
}

/// Value iteration `phi <- T(phi) - T(phi)(0)` from `phi = 0`.
pub fn solve_weak_kam(
    potential: &Potential,
    spec: GridSpec,
    tol: f64,
    max_iter: usize,
) -> Result<WeakKamSolution> {
    let op = LaxOleinik::new(spec, *potential)?;
    solve_weak_kam_with(&op, tol, max_iter)
}

pub fn solve_weak_kam_with(op: &LaxOleinik, tol: f64, max_iter: usize) -> Result<WeakKamSolution> {
    if !(tol > 0.0) {
        return Err(Error::InvalidParameter(format!("tolerance must be positive, got {tol}")));
    }
    let spec = op.spec();
    let mut phi = TorusField::constant(spec, 0.0);
    let mut residual = f64::INFINITY;
    let mut iterations = 0;
    while iterations < max_iter {
        iterations += 1;
        let t = op.apply(&phi);
        residual = t.zip_map(&phi, |a, b| a - b).sup_norm_mod_const();
        if residual < tol {
            break;
        }
        let t0 = t.values()[0];
        phi = t.add_const(-t0);
    }
    if !(residual < tol) {
        return Err(Error::NotConverged {
            what: "weak KAM value iteration",
            iterations,
            residual,
        });
    }

    let psi = phi.map(|v| v.max(0.0));
    let step = op.apply_with_minimizers(&psi);
    let residual = step.values.zip_map(&psi, |a, b| a - b).sup_norm_mod_const();
    let grad_psi = gradient_fd(&psi);
    let cut_locus = detect_cut_locus(&psi);
    let lipschitz = (0..spec.len())
        .map(|i| {
            let g = grad_psi.at(i);
            g.iter().map(|v| v * v).sum::<f64>().sqrt()
        })
        .fold(0.0, f64::max);
    Ok(WeakKamSolution {
        psi,
        grad_psi,
        ybar: step.ybar,
        cut_locus,
        residual,
        iterations,
        ties: step.ties,
        lipschitz,
        potential: *op.potential(),
        polish: op.polish(),
    })
}

/// Marks grid points where the discrete second derivative of `psi` exceeds
/// five times its median magnitude, then dilates the mask by one cell.
pub fn detect_cut_locus(psi: &TorusField) -> Vec<bool> {
    let spec = psi.spec();
    let hess = hessian_fd(psi);
    let mag: Vec<f64> = (0..spec.len())
        .map(|i| match spec.dim() {
            1 => hess[0][0].values()[i].abs(),
            _ => {
                let (p, q, r) = (
                    hess[0][0].values()[i],
                    hess[0][1].values()[i],
                    hess[1][1].values()[i],
                );
                let mid = 0.5 * (p + r);
                let rad = (0.25 * (p - r).powi(2) + q * q).sqrt();
                (mid + rad).abs().max((mid - rad).abs())
            }
        })
        .collect();
    let mut sorted = mag.clone();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let median = sorted[sorted.len() / 2];
    let raw: Vec<bool> = mag.iter().map(|&m| m > 5.0 * median).collect();
    let mut out = raw.clone();
    for (i, &flag) in raw.iter().enumerate() {
        if !flag {
            continue;
        }
        let m = spec.multi_index(i);
        let r1 = if spec.dim() == 2 { -1..=1 } else { 0..=0 };
        for o0 in -1..=1 {
            for o1 in r1.clone() {
                out[spec.offset_index(m, [o0, o1])] = true;
            }
        }
    }
    out
}

/// `ybar(x)` for one grid point, recomputed with the same grid scan and polish
/// as the solver.
pub fn backward_minimizer(idx: usize, sol: &WeakKamSolution) -> TorusPoint {
    let op = sol.lax_oleinik();
    let g = op.cost_field(&sol.psi);
    let m = op.minimize(&g, idx, false);
    let x = sol.spec().coords(idx);
    let d = sol.spec().dim();
    let y: Vec<f64> = (0..d).map(|a| x[a] - m.disp[a]).collect();
    TorusPoint::new(&y).expect("finite minimizer")
}

/// Largest eigenvalue of the discrete Hessian over the grid, an upper
/// estimate of the semi-concavity constant.
pub fn semiconcavity_probe(f: &TorusField) -> f64 {
    max_curvature(f).max()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContractionReport {
    /// `max psi(ybar(x)) / psi(x)` over `psi(x) > eps_floor`.
    pub kappa_sq_emp: f64,
    /// `kappa0^2` from the linearization.
    pub kappa0_sq_pred: f64,
    pub eps_floor: f64,
    /// Ratios at the ten grid points nearest the origin.
    pub near_origin_ratios: Vec<f64>,
    /// Largest relative deviation of `near_origin_ratios` from `kappa0_sq_pred`.
    pub near_origin_rel_err: f64,
    /// `min psi(x) / |x|^2` over `x != 0`.
    pub quadratic_lower_c: f64,
    /// `min A(ybar(x), x)` over `|x| >= far_radius`.
    pub delta_far: f64,
    pub far_ratio_max: f64,
    /// `1 / (1 + delta_far / max psi)`.
    pub far_ratio_bound: f64,
    pub far_radius: f64,
}

pub fn contraction_report(sol: &WeakKamSolution, hyp: &HyperbolicData) -> Result<ContractionReport> {
    contraction_report_with(sol, hyp, 0.25)
}

pub fn contraction_report_with(
    sol: &WeakKamSolution,
    hyp: &HyperbolicData,
    far_radius: f64,
) -> Result<ContractionReport> {
    let spec = sol.spec();
    let d = spec.dim();
    let h = spec.spacing();
    let eps_floor = 10.0 * h * h;
    let psi = &sol.psi;
    let f = sol.potential();
    let psi_max = psi.max();

    let ratio_at = |i: usize| psi.sample(&sol.ybar[i][..d]) / psi.values()[i];
    let mut kappa_sq_emp: f64 = 0.0;
    let mut delta_far = f64::INFINITY;
    let mut far_ratio_max: f64 = 0.0;
    let mut quadratic_lower_c = f64::INFINITY;
    for i in 1..spec.len() {
        let v = psi.values()[i];
        let xc = spec.centered_coords(i);
        let r2: f64 = xc[..d].iter().map(|c| c * c).sum();
        quadratic_lower_c = quadratic_lower_c.min(v / r2);
        if v > eps_floor {
            kappa_sq_emp = kappa_sq_emp.max(ratio_at(i));
        }
        if r2.sqrt() >= far_radius && v > eps_floor {
            let x = spec.point(i);
            let a = periodic_action(&sol.ybar_point(i), &x, f);
            delta_far = delta_far.min(a);
            far_ratio_max = far_ratio_max.max(ratio_at(i));
        }
    }

    let mut order: Vec<usize> = (1..spec.len()).collect();
    order.sort_by(|&a, &b| {
        let da = lift_distance(&spec.centered_coords(a)[..d], &[0.0; MAX_DIM][..d]);
        let db = lift_distance(&spec.centered_coords(b)[..d], &[0.0; MAX_DIM][..d]);
        da.total_cmp(&db).then(a.cmp(&b))
    });
    let kappa0_sq_pred = hyp.kappa0 * hyp.kappa0;
    let near_origin_ratios: Vec<f64> = order.iter().take(10).map(|&i| ratio_at(i)).collect();
    let near_origin_rel_err = near_origin_ratios
        .iter()
        .map(|r| (r - kappa0_sq_pred).abs() / kappa0_sq_pred)
        .fold(0.0, f64::max);

    if !(kappa_sq_emp < 1.0) {
        return Err(Error::NoContraction {
            kappa_sq: kappa_sq_emp,
        });
    }
    Ok(ContractionReport {
        kappa_sq_emp,
        kappa0_sq_pred,
        eps_floor,
        near_origin_ratios,
        near_origin_rel_err,
        quadratic_lower_c,
        delta_far,
        far_ratio_max,
        far_ratio_bound: 1.0 / (1.0 + delta_far / psi_max),
        far_radius,
    })
}

/// `||T^n phi0 - psi||_*` for `n = 0..=steps`.
pub fn inviscid_decay(op: &LaxOleinik, phi0: &TorusField, psi: &TorusField, steps: usize) -> Vec<f64> {
    let mut phi = phi0.clone();
    let mut out = Vec::with_capacity(steps + 1);
    out.push(phi.zip_map(psi, |a, b| a - b).sup_norm_mod_const());
    for _ in 0..steps {
        let t = op.apply(&phi);
        let t0 = t.values()[0];
        phi = t.add_const(-t0);
        out.push(phi.zip_map(psi, |a, b| a - b).sup_norm_mod_const());
    }
    out
}

/// Log-linear fit of a decay sequence that bottoms out at a resolution floor.
///
/// The window starts at the first `n` with `d_n < d_0 / 2` and ends at the
/// last `n` with `d_n > 10 d_last`, so the plateau left by grid error is
/// excluded. Returns the fit and the window.
pub fn decay_fit(distances: &[f64]) -> Option<(LinearFit, (usize, usize))> {
    let d0 = *distances.first()?;
    let floor = *distances.last()?;
    let start = distances.iter().position(|&d| d < 0.5 * d0)?;
    let end = distances.iter().rposition(|&d| d > 10.0 * floor)?;
    if end < start + 2 {
        return None;
    }
    let ns: Vec<f64> = (start..=end).map(|n| n as f64).collect();
    let ls: Vec<f64> = distances[start..=end].iter().map(|d| d.ln()).collect();
    Some((linear_fit(&ns, &ls)?, (start, end)))
}
