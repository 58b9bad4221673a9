//! The viscous propagator after the Hopf-Cole substitution `u = exp(-phi / 2 nu)`:
//! heat kernels on the torus, their conjugation by the weak KAM solution,
//! partition functions and the stationary solution.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fit::{linear_fit, LinearFit};
use crate::potential::Potential;
use crate::torus::{lift_distance, wrap_signed, GridSpec, TorusField, TorusPoint};
use crate::variational::WeakKamSolution;

/// Tail exponent for truncating the periodized Gaussian sum.
const WRAP_TAIL_EXPONENT: f64 = 45.0;

#[inline]
pub(crate) fn log_sum_exp(it: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = it.clone().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + it.map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// Number of periodic images per axis needed so that the first omitted term
/// is below `exp(-45)` relative to the main one.
pub fn wrap_images(dim: usize, nu: f64) -> usize {
    let half_diag = (dim as f64).sqrt() / 2.0;
    let mut k = 1usize;
    while ((k as f64 - half_diag).max(0.0)).powi(2) / (4.0 * nu) <= WRAP_TAIL_EXPONENT {
        k += 1;
    }
    k
}

/// `log sum_k exp(-(delta + k)^2 / (4 nu))` for every grid offset `delta = j/n`.
fn log_theta_table(n: usize, nu: f64, images: usize) -> Vec<f64> {
    (0..n)
        .map(|j| {
            let delta = j as f64 / n as f64;
            log_sum_exp(
                (-(images as i64)..=images as i64)
                    .map(move |k| -(delta + k as f64).powi(2) / (4.0 * nu)),
            )
        })
        .collect()
}

/// Dense discretization of `K_nu(y, x)` or its conjugate, stored as logs.
#[derive(Debug, Clone)]
pub struct KernelOperator {
    spec: GridSpec,
    nu: f64,
    /// Row `x`, column `y`.
    log_k: Vec<f64>,
    conjugated: bool,
    /// `log(spacing^d)`.
    log_weight: f64,
    images: usize,
    theta: Vec<f64>,
}

/// Builds the kernel
/// `K(y, x) = (4 pi nu)^{-d/2} sum_k exp(-h(y + k, x) / 2 nu)`,
/// conjugated by `exp((psi(x) - psi(y)) / 2 nu)` when `psi` is given.
pub fn build_kernel(
    f: &Potential,
    psi: Option<&TorusField>,
    nu: f64,
    spec: GridSpec,
) -> Result<KernelOperator> {
    if !(nu > 0.0) || !nu.is_finite() {
        return Err(Error::InvalidParameter(format!("viscosity must be positive, got {nu}")));
    }
    if f.dim() != spec.dim() {
        return Err(Error::InvalidParameter("potential and grid dimensions differ".into()));
    }
    if let Some(p) = psi {
        if p.spec() != spec {
            return Err(Error::InvalidGrid("psi lives on a different grid".into()));
        }
    }
    let n = spec.n_per_axis();
    let d = spec.dim();
    let images = wrap_images(d, nu);
    let theta = log_theta_table(n, nu, images);
    let prefactor = -0.5 * d as f64 * (4.0 * std::f64::consts::PI * nu).ln();
    let inv2nu = 0.5 / nu;
    let fv = f.sample(spec);
    let col_term: Vec<f64> = (0..spec.len())
        .map(|y| {
            let mut c = -fv.values()[y] * inv2nu;
            if let Some(p) = psi {
                c -= p.values()[y] * inv2nu;
            }
            c
        })
        .collect();
    let len = spec.len();
    let mut log_k = vec![0.0; len * len];
    log_k.par_chunks_mut(len).enumerate().for_each(|(x, row)| {
        let xm = spec.multi_index(x);
        let row_term = prefactor + psi.map_or(0.0, |p| p.values()[x] * inv2nu);
        for (y, out) in row.iter_mut().enumerate() {
            let ym = spec.multi_index(y);
            let mut v = row_term + col_term[y];
            for a in 0..d {
                v += theta[(xm[a] + n - ym[a]) % n];
            }
            *out = v;
        }
    });
    if log_k.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("build_kernel"));
    }
    Ok(KernelOperator {
        spec,
        nu,
        log_k,
        conjugated: psi.is_some(),
        log_weight: d as f64 * spec.spacing().ln(),
        images,
        theta,
    })
}

impl KernelOperator {
    pub fn spec(&self) -> GridSpec {
        self.spec
    }

    pub fn nu(&self) -> f64 {
        self.nu
    }

    pub fn is_conjugated(&self) -> bool {
        self.conjugated
    }

    pub fn log_weight(&self) -> f64 {
        self.log_weight
    }

    pub fn images(&self) -> usize {
        self.images
    }

    /// `log K(y, x)`.
    pub fn log_entry(&self, y: usize, x: usize) -> f64 {
        self.log_k[x * self.spec.len() + y]
    }

    pub fn log_row(&self, x: usize) -> &[f64] {
        let len = self.spec.len();
        &self.log_k[x * len..(x + 1) * len]
    }

    /// `log L(exp w)` by a stabilized log-sum-exp per output point.
    pub fn apply_log(&self, w: &[f64]) -> Result<Vec<f64>> {
        let len = self.spec.len();
        debug_assert_eq!(w.len(), len);
        let out: Vec<f64> = (0..len)
            .into_par_iter()
            .map(|x| {
                let row = self.log_row(x);
                let m = row
                    .iter()
                    .zip(w)
                    .map(|(k, v)| k + v)
                    .fold(f64::NEG_INFINITY, f64::max);
                let s: f64 = row.iter().zip(w).map(|(k, v)| (k + v - m).exp()).sum();
                m + s.ln() + self.log_weight
            })
            .collect();
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("KernelOperator::apply_log"));
        }
        Ok(out)
    }

    /// Linear application to an arbitrary (signed) field.
    pub fn apply(&self, u: &TorusField) -> Result<TorusField> {
        let len = self.spec.len();
        let uv = u.values();
        let out: Vec<f64> = (0..len)
            .into_par_iter()
            .map(|x| {
                let row = self.log_row(x);
                let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let s: f64 = row.iter().zip(uv).map(|(k, v)| (k - m).exp() * v).sum();
                s * (m + self.log_weight).exp()
            })
            .collect();
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("KernelOperator::apply"));
        }
        Ok(TorusField::from_raw(self.spec, out))
    }

    /// `n` applications in log representation.
    pub fn iterate_log(&self, w0: &[f64], n: usize) -> Result<Vec<f64>> {
        let mut w = w0.to_vec();
        for _ in 0..n {
            w = self.apply_log(&w)?;
        }
        Ok(w)
    }

    /// `min_y h~(y, x)` read back from row `x` of a conjugated kernel, using
    /// the nearest periodic image for the quadratic term.
    pub fn column_min_action(&self, x: usize) -> f64 {
        let spec = self.spec;
        let n = spec.n_per_axis();
        let d = spec.dim();
        let prefactor = -0.5 * d as f64 * (4.0 * std::f64::consts::PI * self.nu).ln();
        let xm = spec.multi_index(x);
        let row = self.log_row(x);
        (0..spec.len())
            .map(|y| {
                let ym = spec.multi_index(y);
                let mut v = row[y] - prefactor;
                let mut quad = 0.0;
                for a in 0..d {
                    let off = (xm[a] + n - ym[a]) % n;
                    v -= self.theta[off];
                    quad += 0.5 * wrap_signed(off as f64 / n as f64).powi(2);
                }
                -2.0 * self.nu * v + quad
            })
            .fold(f64::INFINITY, f64::min)
    }
}

/// The set `U` (a neighborhood of the minimizer image) and the weight
/// `chi = 1` on `U`, `nu^{-d/2}` off `U`.
#[derive(Debug, Clone)]
pub struct DomainPartition {
    pub u_mask: Vec<bool>,
    pub r_u: f64,
    pub nu: f64,
    pub chi: TorusField,
}

impl DomainPartition {
    pub fn covers_torus(&self) -> bool {
        self.u_mask.iter().all(|&b| b)
    }

    pub fn indices_in_u(&self) -> Vec<usize> {
        (0..self.u_mask.len()).filter(|&i| self.u_mask[i]).collect()
    }
}

pub fn build_domain_partition(sol: &WeakKamSolution, r_u: f64, nu: f64) -> Result<DomainPartition> {
    if !(r_u > 0.0) {
        return Err(Error::InvalidParameter(format!("r_U must be positive, got {r_u}")));
    }
    if !(nu > 0.0) {
        return Err(Error::InvalidParameter(format!("viscosity must be positive, got {nu}")));
    }
    let spec = sol.spec();
    let d = spec.dim();
    let image: Vec<TorusPoint> = (0..spec.len()).map(|i| sol.ybar_point(i)).collect();
    let u_mask: Vec<bool> = (0..spec.len())
        .into_par_iter()
        .map(|i| {
            let x = spec.coords(i);
            image
                .iter()
                .any(|y| lift_distance(&x[..d], y.coords()) < r_u)
        })
        .collect();
    let off = nu.powf(-0.5 * d as f64);
    let chi = TorusField::from_raw(
        spec,
        u_mask.iter().map(|&b| if b { 1.0 } else { off }).collect(),
    );
    Ok(DomainPartition {
        u_mask,
        r_u,
        nu,
        chi,
    })
}

/// Iterates of the partition function `Z_n = L~^n 1` and the ratios that
/// control them.
#[derive(Debug, Clone)]
pub struct PartitionTrace {
    /// `log Z_n` on the grid, `n = 0..=n_max`.
    pub log_z: Vec<Vec<f64>>,
    /// `log Q_n`, `Q_n = min_x Z_n(x)`.
    pub log_q: Vec<f64>,
    /// `max_x Z_n(x) / (Q_n chi(x))`.
    pub ratio_hi: Vec<f64>,
    /// `log(Q_{n+1} / Q_n)`, `n = 0..n_max`.
    pub log_q_growth: Vec<f64>,
    pub c_budget: f64,
    /// Steps where `ratio_hi` exceeds `c_budget`.
    pub flagged: Vec<usize>,
}

impl PartitionTrace {
    pub fn n_max(&self) -> usize {
        self.log_z.len() - 1
    }

    /// Largest `n` such that `ratio_hi` stays within budget for all steps up
    /// to `n`.
    pub fn bounded_horizon(&self) -> usize {
        self.flagged.first().map_or(self.n_max(), |&n| n.saturating_sub(1))
    }

    /// Fits `log Z_n(x)` against `n` over `range` for each selected point.
    pub fn growth_fits(&self, points: &[usize], range: std::ops::RangeInclusive<usize>) -> Vec<LinearFit> {
        let ns: Vec<f64> = range.clone().map(|n| n as f64).collect();
        points
            .iter()
            .filter_map(|&x| {
                let ys: Vec<f64> = range.clone().map(|n| self.log_z[n][x]).collect();
                linear_fit(&ns, &ys)
            })
            .collect()
    }
}

pub fn partition_trace(
    op: &KernelOperator,
    n_max: usize,
    part: &DomainPartition,
    c_budget: f64,
) -> Result<PartitionTrace> {
    if !op.is_conjugated() {
        return Err(Error::InvalidParameter(
            "partition trace needs the conjugated kernel".into(),
        ));
    }
    let len = op.spec().len();
    let log_chi: Vec<f64> = part.chi.values().iter().map(|c| c.ln()).collect();
    let mut log_z = vec![vec![0.0; len]];
    for _ in 0..n_max {
        let next = op.apply_log(log_z.last().expect("non-empty"))?;
        log_z.push(next);
    }
    let log_q: Vec<f64> = log_z
        .iter()
        .map(|z| z.iter().copied().fold(f64::INFINITY, f64::min))
        .collect();
    let ratio_hi: Vec<f64> = log_z
        .iter()
        .zip(&log_q)
        .map(|(z, q)| {
            z.iter()
                .zip(&log_chi)
                .map(|(v, c)| v - q - c)
                .fold(f64::NEG_INFINITY, f64::max)
                .exp()
        })
        .collect();
    let log_q_growth = log_q.windows(2).map(|w| w[1] - w[0]).collect();
    let flagged = (0..=n_max).filter(|&n| ratio_hi[n] > c_budget).collect();
    Ok(PartitionTrace {
        log_z,
        log_q,
        ratio_hi,
        log_q_growth,
        c_budget,
        flagged,
    })
}

/// `max_x (L~ chi)(x) / chi(x)`.
pub fn chi_growth_constant(op: &KernelOperator, part: &DomainPartition) -> Result<f64> {
    let lc = op.apply(&part.chi)?;
    Ok(lc
        .values()
        .iter()
        .zip(part.chi.values())
        .map(|(a, b)| a / b)
        .fold(0.0, f64::max))
}

/// `log int L^n 1` for `n = 0..=n_max` (unconjugated kernel).
pub fn partition_integral_log(op: &KernelOperator, n_max: usize) -> Result<Vec<f64>> {
    let len = op.spec().len();
    let mut w = vec![0.0; len];
    let mut out = vec![0.0];
    for _ in 0..n_max {
        w = op.apply_log(&w)?;
        out.push(log_sum_exp(w.iter().copied()) + op.log_weight());
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct StationarySolution {
    /// `log u`, normalized to `min log u = 0`.
    pub log_u: TorusField,
    /// `-2 nu log u`.
    pub psi_nu: TorusField,
    /// `log` of the principal eigenvalue of `L`.
    pub log_eigenvalue: f64,
    pub residual: f64,
    pub iterations: usize,
}

/// Power iteration `w <- log L exp(w)` with `min w = 0`.
pub fn stationary_log_solution(op: &KernelOperator, tol: f64, max_iter: usize) -> Result<StationarySolution> {
    if op.is_conjugated() {
        return Err(Error::InvalidParameter(
            "stationary solution is defined for the unconjugated kernel".into(),
        ));
    }
    let spec = op.spec();
    let mut w = vec![0.0; spec.len()];
    let mut residual = f64::INFINITY;
    let mut shift = 0.0;
    let mut iterations = 0;
    while iterations < max_iter {
        iterations += 1;
        let next = op.apply_log(&w)?;
        let m = next.iter().copied().fold(f64::INFINITY, f64::min);
        let normalized: Vec<f64> = next.iter().map(|v| v - m).collect();
        residual = TorusField::from_raw(spec, normalized.iter().zip(&w).map(|(a, b)| a - b).collect())
            .sup_norm_mod_const();
        shift = m;
        w = normalized;
        if residual < tol {
            break;
        }
    }
    if !(residual < tol) {
        return Err(Error::NotConverged {
            what: "stationary power iteration",
            iterations,
            residual,
        });
    }
    let nu = op.nu();
    let psi_nu = TorusField::from_raw(spec, w.iter().map(|v| -2.0 * nu * v).collect());
    Ok(StationarySolution {
        log_u: TorusField::from_raw(spec, w),
        psi_nu,
        log_eigenvalue: shift,
        residual,
        iterations,
    })
}

/// Finest viscosity the grid resolves: `sqrt(2 nu) >= 3 h`.
pub fn min_resolved_nu(spec: GridSpec) -> f64 {
    let h = spec.spacing();
    (3.0 * h).powi(2) / 2.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::torus::random_smooth_field;
    use crate::variational::solve_weak_kam;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::sync::OnceLock;

    fn sol() -> &'static WeakKamSolution {
        static SOL: OnceLock<WeakKamSolution> = OnceLock::new();
        SOL.get_or_init(|| {
            let f = Potential::cosine(1, 1.0, 0.0).unwrap();
            solve_weak_kam(&f, GridSpec::new(1, 256).unwrap(), 1e-12, 500).unwrap()
        })
    }

    fn positive_field(g: GridSpec, seed: u64) -> TorusField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        random_smooth_field(g, &mut rng, 4, 0.5).map(|v| 1.0 + v)
    }

    #[test]
    fn image_count() {
        assert!(wrap_images(1, 0.01) >= 2);
        let k = wrap_images(2, 0.1);
        assert!(((k as f64 - 2f64.sqrt() / 2.0).powi(2)) / 0.4 > 45.0);
    }

    #[test]
    fn heat_kernel_preserves_mass() {
        for (d, n, nu) in [(1, 256, 0.01), (1, 128, 0.3), (2, 32, 0.02)] {
            let g = GridSpec::new(d, n).unwrap();
            let op = build_kernel(&Potential::zero(d), None, nu, g).unwrap();
            let one = op.apply(&TorusField::constant(g, 1.0)).unwrap();
            for v in one.values() {
                assert!((v - 1.0).abs() < 1e-8, "{d} {nu}: {v}");
            }
        }
    }

    #[test]
    fn rejects_bad_viscosity() {
        let g = GridSpec::new(1, 32).unwrap();
        assert!(build_kernel(&Potential::zero(1), None, 0.0, g).is_err());
        assert!(build_kernel(&Potential::zero(1), None, -1.0, g).is_err());
    }

    #[test]
    fn conjugation_identity() {
        let s = sol();
        let g = s.spec();
        let f = *s.potential();
        let nu = 0.02;
        let plain = build_kernel(&f, None, nu, g).unwrap();
        let conj = build_kernel(&f, Some(&s.psi), nu, g).unwrap();
        let u = positive_field(g, 11);
        let log_u: Vec<f64> = u.values().iter().map(|v| v.ln()).collect();
        let e: Vec<f64> = s.psi.values().iter().map(|p| p / (2.0 * nu)).collect();
        for n in 1..=3 {
            let lhs = conj.iterate_log(&log_u, n).unwrap();
            let inner: Vec<f64> = log_u.iter().zip(&e).map(|(a, b)| a - b).collect();
            let rhs = plain.iterate_log(&inner, n).unwrap();
            for x in 0..g.len() {
                let r = rhs[x] + e[x];
                assert!((lhs[x] - r).abs() < 1e-9, "n={n} x={x}");
            }
        }
    }

    #[test]
    fn conjugated_column_minimum_is_zero() {
        let s = sol();
        let conj = build_kernel(s.potential(), Some(&s.psi), 0.01, s.spec()).unwrap();
        let h = s.spec().spacing();
        for x in (0..256).step_by(5) {
            let m = conj.column_min_action(x);
            assert!(m.abs() < 2.0 * h, "{x}: {m}");
        }
    }

    #[test]
    fn linear_and_positive() {
        let g = GridSpec::new(1, 64).unwrap();
        let f = Potential::cosine(1, 1.0, 0.0).unwrap();
        let op = build_kernel(&f, None, 0.05, g).unwrap();
        let u = positive_field(g, 1);
        let v = positive_field(g, 2);
        let (a, b) = (0.7, -1.3);
        let comb = u.zip_map(&v, |p, q| a * p + b * q);
        let lhs = op.apply(&comb).unwrap();
        let (lu, lv) = (op.apply(&u).unwrap(), op.apply(&v).unwrap());
        for i in 0..g.len() {
            let rhs = a * lu.values()[i] + b * lv.values()[i];
            assert!((lhs.values()[i] - rhs).abs() < 1e-12 * (1.0 + rhs.abs()));
            assert!(lu.values()[i] > 0.0);
        }
        let log_u: Vec<f64> = u.values().iter().map(|x| x.ln()).collect();
        let via_log = op.apply_log(&log_u).unwrap();
        for i in 0..g.len() {
            assert!((via_log[i].exp() - lu.values()[i]).abs() < 1e-12 * lu.values()[i]);
        }
    }

    #[test]
    fn monotone() {
        let s = sol();
        let op = build_kernel(s.potential(), Some(&s.psi), 0.05, s.spec()).unwrap();
        let u = positive_field(s.spec(), 5);
        let v = u.map(|x| x + 0.1);
        let (lu, lv) = (op.apply(&u).unwrap(), op.apply(&v).unwrap());
        assert!(lu.values().iter().zip(lv.values()).all(|(a, b)| a <= b));
    }

    #[test]
    fn domain_partition_examples() {
        let s = sol();
        let part = build_domain_partition(s, 0.1, 0.01).unwrap();
        assert!(part.u_mask[0]);
        assert!(!part.covers_torus());
        for i in 0..s.spec().len() {
            let y = s.spec().nearest_index(&s.ybar[i][..1]);
            assert!(part.u_mask[y]);
            let expect = if part.u_mask[i] { 1.0 } else { 10.0 };
            assert!((part.chi.values()[i] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn partition_trace_basics() {
        let s = sol();
        let nu = 0.02;
        let op = build_kernel(s.potential(), Some(&s.psi), nu, s.spec()).unwrap();
        let part = build_domain_partition(s, 0.1, nu).unwrap();
        let tr = partition_trace(&op, 10, &part, 50.0).unwrap();
        assert_eq!(tr.log_q[0], 0.0);
        assert_eq!(tr.ratio_hi[0], 1.0);
        assert!(tr.ratio_hi.iter().all(|r| r.is_finite() && *r >= 1.0));
        // one step off U is at most a constant times nu^{-1/2}
        let c1 = (0..s.spec().len())
            .filter(|&i| !part.u_mask[i])
            .map(|i| tr.log_z[1][i].exp() * nu.sqrt())
            .fold(0.0, f64::max);
        assert!(c1 < 10.0, "{c1}");
        let plain = build_kernel(s.potential(), None, nu, s.spec()).unwrap();
        assert!(partition_trace(&plain, 2, &part, 1.0).is_err());
    }

    #[test]
    fn stationary_solution_approaches_psi() {
        let s = sol();
        let mut prev = f64::INFINITY;
        for nu in [0.08, 0.04, 0.02, 0.01] {
            let op = build_kernel(s.potential(), None, nu, s.spec()).unwrap();
            let st = stationary_log_solution(&op, 1e-12, 500).unwrap();
            assert!(st.residual < 1e-12);
            let again = op.apply_log(st.log_u.values()).unwrap();
            let defect = TorusField::from_raw(
                s.spec(),
                again.iter().zip(st.log_u.values()).map(|(a, b)| a - b).collect(),
            )
            .sup_norm_mod_const();
            assert!(defect < 1e-11);
            let dist = st.psi_nu.zip_map(&s.psi, |a, b| a - b).sup_norm_mod_const();
            assert!(dist < prev, "{nu}: {dist} vs {prev}");
            prev = dist;
        }
    }

    #[test]
    fn chi_is_sub_invariant() {
        let s = sol();
        let mut consts = Vec::new();
        for nu in [0.05, 0.02, 0.01] {
            let op = build_kernel(s.potential(), Some(&s.psi), nu, s.spec()).unwrap();
            let part = build_domain_partition(s, 0.1, nu).unwrap();
            consts.push(chi_growth_constant(&op, &part).unwrap());
        }
        let (lo, hi) = consts
            .iter()
            .fold((f64::INFINITY, 0.0f64), |(a, b), &c| (a.min(c), b.max(c)));
        assert!(hi < 10.0 && hi / lo < 5.0, "{consts:?}");
    }

    #[test]
    fn partition_integral_grows_at_most_linearly() {
        let s = sol();
        let op = build_kernel(s.potential(), None, 0.02, s.spec()).unwrap();
        let logs = partition_integral_log(&op, 12).unwrap();
        let steps: Vec<f64> = logs.windows(2).map(|w| w[1] - w[0]).collect();
        let max_step = steps.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        for (n, l) in logs.iter().enumerate() {
            assert!(*l <= n as f64 * max_step + 1e-9);
        }
    }
}
