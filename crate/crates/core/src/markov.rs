//! Markov normalization of the conjugated kernels by partition functions,
//! drift and minorization certificates, weighted-norm contraction and the
//! viscous decay rate.

use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fit::{linear_fit, LinearFit};
use crate::torus::{random_smooth_field, weighted_mod_const_raw, GridSpec, TorusField};
use crate::viscous::{KernelOperator, PartitionTrace};

/// `pi_n(y, x) = K~(y, x) Z_n(y) / Z_{n+1}(x)` with `Z_n = L~^n 1`.
#[derive(Debug, Clone)]
pub struct MarkovLayer {
    pub n: usize,
    kernel: Arc<KernelOperator>,
    log_z_n: Arc<Vec<f64>>,
    log_z_next: Arc<Vec<f64>>,
}

impl MarkovLayer {
    /// Layer built from arbitrary positive weights `exp(log_w)` and their image
    /// `log_w_next = log L~ exp(log_w)`.
    pub fn from_weights(
        n: usize,
        kernel: Arc<KernelOperator>,
        log_w: Arc<Vec<f64>>,
        log_w_next: Arc<Vec<f64>>,
    ) -> Self {
        MarkovLayer {
            n,
            kernel,
            log_z_n: log_w,
            log_z_next: log_w_next,
        }
    }

    pub fn spec(&self) -> GridSpec {
        self.kernel.spec()
    }

    /// `log pi_n(y, x)`.
    pub fn log_pi(&self, y: usize, x: usize) -> f64 {
        self.kernel.log_entry(y, x) + self.log_z_n[y] - self.log_z_next[x]
    }

    /// Transition weights out of `x` including the quadrature weight, so that
    /// they sum to one.
    pub fn row_weights(&self, x: usize) -> Vec<f64> {
        let lw = self.kernel.log_weight() - self.log_z_next[x];
        self.kernel
            .log_row(x)
            .iter()
            .zip(self.log_z_n.iter())
            .map(|(k, z)| (k + z + lw).exp())
            .collect()
    }

    /// `(P u)(x) = int pi_n(y, x) u(y) dy`.
    pub fn apply(&self, u: &[f64]) -> Vec<f64> {
        let len = self.spec().len();
        (0..len)
            .into_par_iter()
            .map(|x| {
                let lw = self.kernel.log_weight() - self.log_z_next[x];
                self.kernel
                    .log_row(x)
                    .iter()
                    .zip(self.log_z_n.iter())
                    .zip(u)
                    .map(|((k, z), v)| (k + z + lw).exp() * v)
                    .sum()
            })
            .collect()
    }

    /// `max_x |spacing^d sum_y pi(y, x) - 1|`.
    pub fn normalization_defect(&self) -> f64 {
        (0..self.spec().len())
            .into_par_iter()
            .map(|x| (self.row_weights(x).iter().sum::<f64>() - 1.0).abs())
            .reduce(|| 0.0, f64::max)
    }
}

/// Layers `0..n_max` from a trace computed to at least `n_max + 1`.
pub fn build_markov_layers(
    op: Arc<KernelOperator>,
    trace: &PartitionTrace,
    n_max: usize,
) -> Result<Vec<MarkovLayer>> {
    if !op.is_conjugated() {
        return Err(Error::InvalidParameter("Markov layers need the conjugated kernel".into()));
    }
    if trace.n_max() < n_max + 1 {
        return Err(Error::InvalidParameter(format!(
            "trace reaches n = {}, layers up to {} need n = {}",
            trace.n_max(),
            n_max,
            n_max + 1
        )));
    }
    let zs: Vec<Arc<Vec<f64>>> = trace.log_z.iter().map(|z| Arc::new(z.clone())).collect();
    let limit = 1e-8;
    let mut layers = Vec::with_capacity(n_max + 1);
    for n in 0..=n_max {
        let layer = MarkovLayer::from_weights(n, op.clone(), zs[n].clone(), zs[n + 1].clone());
        let defect = layer.normalization_defect();
        if defect > limit {
            return Err(Error::Normalization { defect, limit });
        }
        layers.push(layer);
    }
    Ok(layers)
}

/// Applies `P_{n-1} ... P_1 P_0` to `u`.
pub fn compose(layers: &[MarkovLayer], n: usize, u: &[f64]) -> Vec<f64> {
    let mut v = u.to_vec();
    for layer in &layers[..n] {
        v = layer.apply(&v);
    }
    v
}

/// Largest relative difference between `L~^n u / L~^n 1` and `P^n u`.
pub fn telescope_check(op: &KernelOperator, layers: &[MarkovLayer], u: &TorusField, n: usize) -> Result<f64> {
    if n > layers.len() {
        return Err(Error::InvalidParameter(format!(
            "need {n} layers, have {}",
            layers.len()
        )));
    }
    if u.values().iter().any(|&v| !(v > 0.0)) {
        return Err(Error::InvalidParameter("telescope check needs u > 0".into()));
    }
    let log_u: Vec<f64> = u.values().iter().map(|v| v.ln()).collect();
    let lu = op.iterate_log(&log_u, n)?;
    let l1 = op.iterate_log(&vec![0.0; log_u.len()], n)?;
    let pu = compose(layers, n, u.values());
    Ok(lu
        .iter()
        .zip(&l1)
        .zip(&pu)
        .map(|((a, b), p)| ((a - b).exp() - p).abs() / p.abs())
        .fold(0.0, f64::max))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DriftCertificate {
    pub gamma: f64,
    pub m_drift: f64,
    pub m_over_nu: f64,
}

/// `P V <= gamma V + M` with `gamma` scanned over 200 points in
/// `(gamma_floor, 1)`; keeps the pair minimizing `M / (1 - gamma)`.
pub fn certify_drift(layer: &MarkovLayer, v: &TorusField, nu: f64, gamma_floor: f64) -> Result<DriftCertificate> {
    if v.values().iter().any(|&x| x < 0.0) {
        return Err(Error::InvalidParameter("Lyapunov function must be non-negative".into()));
    }
    if !(0.0..1.0).contains(&gamma_floor) {
        return Err(Error::InvalidParameter(format!(
            "gamma floor must lie in [0, 1), got {gamma_floor}"
        )));
    }
    let pv = layer.apply(v.values());
    let steps = 200;
    let best = (0..steps)
        .into_par_iter()
        .map(|j| {
            let gamma = gamma_floor + (1.0 - gamma_floor) * (j as f64 + 0.5) / steps as f64;
            let m = pv
                .iter()
                .zip(v.values())
                .map(|(p, w)| p - gamma * w)
                .fold(0.0, f64::max);
            (gamma, m)
        })
        .filter(|(_, m)| m.is_finite())
        .min_by(|a, b| (a.1 / (1.0 - a.0)).total_cmp(&(b.1 / (1.0 - b.0))));
    match best {
        Some((gamma, m_drift)) => Ok(DriftCertificate {
            gamma,
            m_drift,
            m_over_nu: m_drift / nu,
        }),
        None => Err(Error::Admissibility("no drift constant below 1 found".into())),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Minorization {
    pub alpha0: f64,
    /// Normalized minorant `G / alpha0`.
    pub g_density: Vec<f64>,
    pub level: f64,
    pub level_set_size: usize,
}

/// `alpha0 = int min_{V(x) <= level} pi(y, x) dy` over the level set
/// `{V <= r_mult * nu}`.
pub fn certify_minorization(layer: &MarkovLayer, v: &TorusField, r_mult: f64, nu: f64) -> Result<Minorization> {
    let level = r_mult * nu;
    let set: Vec<usize> = (0..v.values().len()).filter(|&i| v.values()[i] <= level).collect();
    if set.is_empty() {
        return Err(Error::EmptyLevelSet { level });
    }
    let len = layer.spec().len();
    let mut g = vec![f64::INFINITY; len];
    for &x in &set {
        let row = layer.row_weights(x);
        for (gy, r) in g.iter_mut().zip(&row) {
            *gy = gy.min(*r);
        }
    }
    // row weights already include the quadrature weight
    let alpha0: f64 = g.iter().sum();
    let cell = layer.spec().cell_volume();
    let g_density = g.iter().map(|w| w / (alpha0 * cell)).collect();
    Ok(Minorization {
        alpha0,
        g_density,
        level,
        level_set_size: set.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DriftMinorizationParams {
    pub gamma: f64,
    pub m_drift: f64,
    /// Level of the minorization set `{V <= R}`.
    pub r_level: f64,
    pub alpha0: f64,
    pub alpha1: f64,
    pub gamma0: f64,
    pub beta: f64,
    pub alpha: f64,
}

/// Contraction constants for the weighted norm from a drift pair
/// `(gamma, M)` and a minorization mass `alpha0` on `{V <= r_level}`.
///
/// `alpha1 = alpha0 / 2`, `gamma0` is the midpoint of `(gamma + 2M/R, 1)`,
/// `beta = alpha1 / M` and
/// `alpha = max(1 - (alpha0 - alpha1), (2 + R beta gamma0) / (2 + R beta))`.
pub fn hm_parameters(gamma: f64, m_drift: f64, alpha0: f64, r_level: f64) -> Result<DriftMinorizationParams> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::Admissibility(format!("gamma = {gamma} not in (0, 1)")));
    }
    if !(alpha0 > 0.0 && alpha0 <= 1.0) {
        return Err(Error::Admissibility(format!("alpha0 = {alpha0} not in (0, 1]")));
    }
    if !(m_drift >= 0.0) {
        return Err(Error::Admissibility(format!("M = {m_drift} is negative")));
    }
    if !(r_level > 2.0 * m_drift / (1.0 - gamma)) {
        return Err(Error::Admissibility(format!(
            "R = {r_level} must exceed 2M/(1 - gamma) = {}",
            2.0 * m_drift / (1.0 - gamma)
        )));
    }
    let alpha1 = 0.5 * alpha0;
    let gamma0 = 0.5 * (gamma + 2.0 * m_drift / r_level + 1.0);
    let (beta, second) = if m_drift == 0.0 {
        (f64::INFINITY, gamma0)
    } else {
        let beta = alpha1 / m_drift;
        (beta, (2.0 + r_level * beta * gamma0) / (2.0 + r_level * beta))
    };
    let alpha = (1.0 - (alpha0 - alpha1)).max(second);
    Ok(DriftMinorizationParams {
        gamma,
        m_drift,
        r_level,
        alpha0,
        alpha1,
        gamma0,
        beta,
        alpha,
    })
}

/// Worst `||P u||_{beta V,*} / ||u||_{beta V,*}` over random smooth fields.
/// Errors if it exceeds `alpha + 1e-6`.
pub fn verify_hm_contraction<R: Rng + ?Sized>(
    layer: &MarkovLayer,
    params: &DriftMinorizationParams,
    v: &TorusField,
    trials: usize,
    rng: &mut R,
) -> Result<f64> {
    let spec = layer.spec();
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let modes = rng.random_range(1..=8);
        let amp = rng.random_range(0.1..10.0);
        let u = random_smooth_field(spec, rng, modes, amp);
        let before = weighted_mod_const_raw(u.values(), v.values(), params.beta);
        if before == 0.0 {
            continue;
        }
        let pu = layer.apply(u.values());
        let after = weighted_mod_const_raw(&pu, v.values(), params.beta);
        worst = worst.max(after / before);
    }
    if worst > params.alpha + 1e-6 {
        return Err(Error::CertificationInconsistent {
            ratio: worst,
            alpha: params.alpha,
        });
    }
    Ok(worst)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LyapunovEstimate {
    pub nu: f64,
    /// Decay rate per kick of `d_n`.
    pub lambda_hat: f64,
    pub fit_r2: f64,
    pub burn_in: usize,
    /// `d_n = ||log L~^n u - log L~^n v||_*`.
    pub distances: Vec<f64>,
    pub fit_window: (usize, usize),
    /// Set when the fit window is shorter than 8 points or the inputs coincide.
    pub flagged: bool,
}

/// Smallest distance used in the decay fit.
const DISTANCE_FLOOR: f64 = 1e-250;

/// Decay rate of `||log L^n u0 - log L^n v0||_*`.
///
/// The ratio `r_n = L^n u0 / L^n v0` obeys `r_{n+1} = Q_n r_n` for the Markov
/// operator `Q_n` built from the `v0` trajectory, so writing `r_n = c_n (1 + e_n)`
/// with `e_n` recentered every step keeps the distance resolvable far below
/// the rounding level of the log iterates themselves.
pub fn lyapunov_exponent(op: Arc<KernelOperator>, log_u0: &[f64], log_v0: &[f64], n_max: usize) -> Result<LyapunovEstimate> {
    let nu = op.nu();
    let mut e: Vec<f64> = log_u0
        .iter()
        .zip(log_v0)
        .map(|(a, b)| (a - b).exp_m1())
        .collect();
    let mut log_v = Arc::new(log_v0.to_vec());
    let mut distances = Vec::with_capacity(n_max + 1);
    let centered_distance = |e: &mut Vec<f64>| -> f64 {
        let (lo, hi) = e
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        let mid = 0.5 * (lo + hi);
        for v in e.iter_mut() {
            *v = (*v - mid) / (1.0 + mid);
        }
        let (lo, hi) = ((lo - mid) / (1.0 + mid), (hi - mid) / (1.0 + mid));
        0.5 * (hi.ln_1p() - lo.ln_1p())
    };
    distances.push(centered_distance(&mut e));
    for n in 0..n_max {
        if distances[n] == 0.0 || distances[n] < DISTANCE_FLOOR {
            break;
        }
        let next = Arc::new(op.apply_log(&log_v)?);
        let layer = MarkovLayer::from_weights(n, op.clone(), log_v.clone(), next.clone());
        e = layer.apply(&e);
        distances.push(centered_distance(&mut e));
        log_v = next;
    }
    Ok(fit_decay(nu, distances))
}

/// Same distance computed naively from the two log iterates; resolves
/// only down to the rounding level of the iterates.
pub fn direct_log_distances(op: &KernelOperator, log_u0: &[f64], log_v0: &[f64], n_max: usize) -> Result<Vec<f64>> {
    let spec = op.spec();
    let mut u = log_u0.to_vec();
    let mut v = log_v0.to_vec();
    let mut out = Vec::with_capacity(n_max + 1);
    let dist = |a: &[f64], b: &[f64]| {
        TorusField::from_raw(spec, a.iter().zip(b).map(|(x, y)| x - y).collect()).sup_norm_mod_const()
    };
    out.push(dist(&u, &v));
    for _ in 0..n_max {
        u = op.apply_log(&u)?;
        v = op.apply_log(&v)?;
        out.push(dist(&u, &v));
    }
    Ok(out)
}

fn fit_decay(nu: f64, distances: Vec<f64>) -> LyapunovEstimate {
    let d0 = distances[0];
    let degenerate = LyapunovEstimate {
        nu,
        lambda_hat: f64::NAN,
        fit_r2: f64::NAN,
        burn_in: 0,
        distances: distances.clone(),
        fit_window: (0, 0),
        flagged: true,
    };
    if d0 == 0.0 {
        return degenerate;
    }
    let burn_in = match distances.iter().position(|&d| d < 0.5 * d0) {
        Some(b) => b,
        None => return degenerate,
    };
    let end = distances
        .iter()
        .rposition(|&d| d >= DISTANCE_FLOOR)
        .unwrap_or(0);
    if end <= burn_in {
        return degenerate;
    }
    let ns: Vec<f64> = (burn_in..=end).map(|n| n as f64).collect();
    let ls: Vec<f64> = distances[burn_in..=end].iter().map(|d| d.ln()).collect();
    let fit: Option<LinearFit> = linear_fit(&ns, &ls);
    match fit {
        Some(f) => LyapunovEstimate {
            nu,
            lambda_hat: -f.slope,
            fit_r2: f.r2,
            burn_in,
            distances,
            fit_window: (burn_in, end),
            flagged: end + 1 - burn_in < 8,
        },
        None => degenerate,
    }
}

/// `||log(u / v)||_* <= 4 omega` for `min u, min v >= 1` and
/// `omega = max(||u||_*, ||v||_*) < 1/4`. `None` when the hypotheses fail.
pub fn ratio_star_check(u: &TorusField, v: &TorusField) -> Option<(bool, f64, f64)> {
    if u.min() < 1.0 || v.min() < 1.0 {
        return None;
    }
    let omega = u.sup_norm_mod_const().max(v.sup_norm_mod_const());
    if !(omega < 0.25) {
        return None;
    }
    let lhs = u.zip_map(v, |a, b| (a / b).ln()).sup_norm_mod_const();
    Some((lhs <= 4.0 * omega, lhs, omega))
}

/// `V = psi chi^2`.
pub fn lyapunov_function(psi: &TorusField, chi: &TorusField) -> TorusField {
    psi.zip_map(chi, |p, c| p * c * c)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::potential::Potential;
    use crate::variational::{solve_weak_kam, WeakKamSolution};
    use crate::viscous::{build_domain_partition, build_kernel, partition_trace};
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

    struct Setup {
        op: Arc<KernelOperator>,
        layers: Vec<MarkovLayer>,
        v: TorusField,
        nu: f64,
    }

    fn setup(nu: f64) -> Setup {
        let s = sol();
        let op = Arc::new(build_kernel(s.potential(), Some(&s.psi), nu, s.spec()).unwrap());
        let part = build_domain_partition(s, 0.1, nu).unwrap();
        let tr = partition_trace(&op, 7, &part, 1e6).unwrap();
        let layers = build_markov_layers(op.clone(), &tr, 6).unwrap();
        let v = lyapunov_function(&s.psi, &part.chi);
        Setup { op, layers, v, nu }
    }

    #[test]
    fn free_heat_kernel_layer() {
        let g = GridSpec::new(1, 64).unwrap();
        let zero = TorusField::constant(g, 0.0);
        let op = Arc::new(build_kernel(&Potential::zero(1), Some(&zero), 0.05, g).unwrap());
        let z = Arc::new(vec![0.0; 64]);
        let next = Arc::new(op.apply_log(&z).unwrap());
        assert!(next.iter().all(|v| v.abs() < 1e-8));
        let layer = MarkovLayer::from_weights(0, op.clone(), z, next);
        for x in [0, 10, 40] {
            for y in [0, 5, 33] {
                assert!((layer.log_pi(y, x) - op.log_entry(y, x)).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn layers_are_normalized_and_replay_definition() {
        let st = setup(0.02);
        for layer in &st.layers {
            assert!(layer.normalization_defect() < 1e-10);
        }
        let l = &st.layers[3];
        let z3 = st.op.iterate_log(&vec![0.0; 256], 3).unwrap();
        let z4 = st.op.apply_log(&z3).unwrap();
        for (x, y) in [(0, 0), (10, 200), (128, 3)] {
            let expect = z3[y] - z4[x];
            assert!((l.log_pi(y, x) - st.op.log_entry(y, x) - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn telescoping() {
        let st = setup(0.02);
        let g = sol().spec();
        assert!(telescope_check(&st.op, &st.layers, &TorusField::constant(g, 1.0), 3).unwrap() < 1e-12);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let u = random_smooth_field(g, &mut rng, 5, 0.8).map(|v| 1.0 + v);
        for n in 1..=5 {
            assert!(telescope_check(&st.op, &st.layers, &u, n).unwrap() < 1e-8);
        }
        let pu = compose(&st.layers, 4, u.values());
        assert!(pu.iter().all(|&v| v >= u.min() - 1e-12));
    }

    #[test]
    fn drift_examples() {
        let st = setup(0.02);
        let zero = TorusField::constant(sol().spec(), 0.0);
        let c = certify_drift(&st.layers[2], &zero, st.nu, 0.0).unwrap();
        assert_eq!(c.m_drift, 0.0);
        let c = certify_drift(&st.layers[2], &st.v, st.nu, 0.0).unwrap();
        assert!(c.gamma < 1.0 && c.m_drift > 0.0);
        assert!(c.m_over_nu.is_finite());
    }

    #[test]
    fn minorization_examples() {
        let st = setup(0.02);
        let m = certify_minorization(&st.layers[2], &st.v, 1e-9, st.nu).unwrap();
        assert_eq!(m.level_set_size, 1);
        assert!((m.alpha0 - 1.0).abs() < 1e-10);
        let m = certify_minorization(&st.layers[2], &st.v, 5.0, st.nu).unwrap();
        assert!(m.alpha0 > 0.0 && m.alpha0 < 1.0);
        assert!(matches!(
            certify_minorization(&st.layers[2], &st.v.map(|x| x + 1.0), 1.0, st.nu),
            Err(Error::EmptyLevelSet { .. })
        ));
    }

    #[test]
    fn hm_parameter_arithmetic() {
        let p = hm_parameters(0.5, 0.1, 0.5, 1.0).unwrap();
        assert_eq!(p.alpha1, 0.25);
        assert!((p.gamma0 - 0.85).abs() < 1e-15);
        assert!((p.beta - 2.5).abs() < 1e-15);
        let second = (2.0 + 2.5 * 0.85) / (2.0 + 2.5);
        assert!((p.alpha - second).abs() < 1e-15);
        assert!((p.alpha - 0.916_666_666_666_666_6).abs() < 1e-12);
        let p = hm_parameters(0.5, 0.0, 0.5, 1.0).unwrap();
        assert_eq!(p.alpha, p.gamma0.max(0.75));
        assert!(hm_parameters(0.5, 0.3, 0.5, 1.0).is_err());
        assert!(hm_parameters(1.0, 0.0, 0.5, 1.0).is_err());
    }

    #[test]
    fn certified_contraction_holds() {
        let st = setup(0.02);
        let layer = &st.layers[3];
        let drift = certify_drift(layer, &st.v, st.nu, 0.0).unwrap();
        let r_mult = 1.5 * 2.0 * drift.m_over_nu / (1.0 - drift.gamma);
        let minor = certify_minorization(layer, &st.v, r_mult, st.nu).unwrap();
        let params = hm_parameters(drift.gamma, drift.m_drift, minor.alpha0, r_mult * st.nu).unwrap();
        assert!(params.alpha < 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let worst = verify_hm_contraction(layer, &params, &st.v, 40, &mut rng).unwrap();
        assert!(worst <= params.alpha + 1e-6);
    }

    #[test]
    fn markov_step_is_star_nonexpansive() {
        let st = setup(0.05);
        let g = sol().spec();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let u = random_smooth_field(g, &mut rng, 6, 1.0);
            let pu = TorusField::new(g, st.layers[1].apply(u.values())).unwrap();
            assert!(pu.sup_norm_mod_const() <= u.sup_norm_mod_const() * (1.0 + 1e-12));
        }
    }

    #[test]
    fn lyapunov_matches_direct_differences() {
        let s = sol();
        let nu = 0.05;
        let op = Arc::new(build_kernel(s.potential(), Some(&s.psi), nu, s.spec()).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let u0 = random_smooth_field(s.spec(), &mut rng, 4, 0.5).into_values();
        let v0 = random_smooth_field(s.spec(), &mut rng, 4, 0.5).into_values();
        let est = lyapunov_exponent(op.clone(), &u0, &v0, 200).unwrap();
        let direct = direct_log_distances(&op, &u0, &v0, 6).unwrap();
        for n in 0..=6 {
            let rel = (est.distances[n] - direct[n]).abs() / direct[n];
            assert!(rel < 1e-6, "{n}: {} vs {}", est.distances[n], direct[n]);
        }
        assert!(est.lambda_hat > 0.0 && est.fit_r2 >= 0.99, "{est:?}");
        for w in est.distances[est.burn_in..].windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-12));
        }
        let same = lyapunov_exponent(op, &u0, &u0, 10).unwrap();
        assert!(same.flagged && same.lambda_hat.is_nan());
    }

    #[test]
    fn ratio_lemma_examples() {
        let g = GridSpec::new(1, 128).unwrap();
        let u = TorusField::from_fn(g, |x| 1.0 + 0.1 * (2.0 * std::f64::consts::PI * x[0]).sin());
        let v = TorusField::from_fn(g, |x| 1.0 + 0.1 * (2.0 * std::f64::consts::PI * x[0]).cos());
        assert!(ratio_star_check(&u, &v).is_none());
        let (us, vs) = (u.map(|a| a / u.min()), v.map(|a| a / v.min()));
        let (ok, lhs, omega) = ratio_star_check(&us, &vs).unwrap();
        assert!(ok && lhs < 4.0 * omega);
        let (ok, lhs, _) = ratio_star_check(&us, &us).unwrap();
        assert!(ok && lhs == 0.0);
    }
}
