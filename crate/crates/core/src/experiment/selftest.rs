use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::commands::{certify_stage, initial_pair, prepare, viscous_stage, Failure, Pipeline, Report};
use super::config::ExperimentConfig;
use crate::error::Result;
use crate::hessian::{assemble_hessian, det_dense, det_orbit_product, det_transfer, path_from_orbit};
use crate::markov::{lyapunov_exponent, ratio_star_check, telescope_check};
use crate::potential::Potential;
use crate::torus::{random_smooth_field, weighted_norm_mod_const, TorusField};
use crate::twist::backward_orbit_from;
use crate::viscous::build_kernel;

/// Deliberate corruption used to confirm that the suite can fail.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    /// Adds `0.1 sin(2 pi x_0)` to the weak KAM solution.
    PsiSine,
}

impl std::str::FromStr for Fault {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "psi-sin" => Ok(Fault::PsiSine),
            other => Err(format!("unknown fault `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

/// Grid and sweep used by the suite regardless of the requested resolution.
pub fn reduced_config(cfg: &ExperimentConfig) -> ExperimentConfig {
    let mut r = cfg.clone();
    r.n_per_axis = if cfg.dim == 1 { 256 } else { 32 };
    r.nu_list = vec![0.05, 0.02];
    r.n_max = 60;
    r.hm_trials = 20;
    r.layer_count = 3;
    r.trace_n_max = r.trace_n_max.max(r.layer_count + 1);
    r
}

pub fn run_checks(cfg: &ExperimentConfig, fault: Option<Fault>) -> Result<Vec<Check>> {
    let cfg = reduced_config(cfg);
    let mut p = prepare(&cfg)?;
    if fault == Some(Fault::PsiSine) {
        let two_pi = 2.0 * std::f64::consts::PI;
        let spec = p.sol.spec();
        let bump = TorusField::from_fn(spec, |x| 0.1 * (two_pi * x[0]).sin());
        p.sol.psi = p.sol.psi.zip_map(&bump, |a, b| a + b);
    }
    let mut checks = Vec::new();
    let mut push = |name: &'static str, passed: bool, detail: String| {
        checks.push(Check { name, passed, detail })
    };

    let lo = p.sol.lax_oleinik();
    let defect = lo
        .apply(&p.sol.psi)
        .zip_map(&p.sol.psi, |a, b| a - b)
        .sup_norm_mod_const();
    push("fixed_point", defect <= 1e-8, format!("||T psi - psi||_* = {defect:.3e}"));
    let psi0 = p.sol.psi.values()[0];
    let psi_min = p.sol.psi.min();
    push(
        "normalization",
        psi0 == 0.0 && psi_min >= 0.0,
        format!("psi(0) = {psi0:.3e}, min psi = {psi_min:.3e}"),
    );
    let h = &p.hyp;
    push(
        "hyperbolic_residuals",
        h.riccati_residual <= 1e-10 && h.branch_residual <= 1e-10,
        format!("{:.2e}, {:.2e}", h.riccati_residual, h.branch_residual),
    );
    push(
        "contraction",
        p.contraction.kappa_sq_emp < 1.0,
        format!("kappa_sq_emp = {:.4e}", p.contraction.kappa_sq_emp),
    );
    let (passed, detail) = hessian_check(&p)?;
    push("hessian_determinants", passed, detail);

    let spec = p.sol.spec();
    let heat = build_kernel(&Potential::zero(cfg.dim), None, cfg.nu_list[0], spec)?;
    let mass = heat
        .apply(&TorusField::constant(spec, 1.0))?
        .values()
        .iter()
        .fold(0.0f64, |m, v| m.max((v - 1.0).abs()));
    push("heat_kernel_mass", mass <= 1e-8, format!("max |L 1 - 1| = {mass:.2e}"));

    let (passed, detail) = conjugation_check(&p)?;
    push("conjugation", passed, detail);

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let test_u = random_smooth_field(spec, &mut rng, 4, 1.0).map(f64::exp);
    let pair = initial_pair(&cfg)?;
    for (k, &nu) in cfg.nu_list.iter().enumerate() {
        let stage = viscous_stage(&p, nu)?;
        let norm = stage.layers.iter().map(|l| l.normalization_defect()).fold(0.0, f64::max);
        let mut tele: f64 = 0.0;
        for n in 1..=stage.layers.len() {
            tele = tele.max(telescope_check(&stage.op, &stage.layers, &test_u, n)?);
        }
        push(
            "markov_layers",
            norm <= 1e-10 && tele <= 1e-8,
            format!("nu = {nu}: normalization {norm:.2e}, telescoping {tele:.2e}"),
        );
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1 + k as u64));
        match certify_stage(&p, &stage, &mut rng) {
            Ok(c) => push(
                "hm_certificate",
                c.params.gamma < 1.0 && c.worst_ratio <= c.params.alpha + 1e-6,
                format!(
                    "nu = {nu}: gamma {:.3}, alpha {:.4}, worst {:.4}",
                    c.params.gamma, c.params.alpha, c.worst_ratio
                ),
            ),
            Err(e) => push("hm_certificate", false, format!("nu = {nu}: {e}")),
        }
        let est = lyapunov_exponent(stage.op.clone(), pair.0.values(), pair.1.values(), cfg.n_max)?;
        push(
            "decay_rate",
            est.lambda_hat > 0.0 && est.fit_r2 >= 0.99 && !est.flagged,
            format!("nu = {nu}: lambda_hat {:.4}, r2 {:.5}", est.lambda_hat, est.fit_r2),
        );
    }

    let t = norm_lemma_check(&p, cfg.seed, 100);
    push(
        "norm_lemmas",
        t.passed(),
        format!(
            "{} of {} weighted-norm and {} of {} ratio trials violated",
            t.weighted_violations, t.weighted_trials, t.ratio_violations, t.ratio_trials
        ),
    );
    Ok(checks)
}

fn hessian_check(p: &Pipeline) -> Result<(bool, String)> {
    let mut worst: f64 = 0.0;
    for n in 1..=12 {
        let orbit = backward_orbit_from(&p.cfg.hessian_x, n, &p.sol)?;
        let path = path_from_orbit(orbit, &p.sol);
        let a = assemble_hessian(&path, &p.sol);
        let dense = det_dense(&a)?.log_abs;
        for other in [det_transfer(&a)?.log_abs, det_orbit_product(&path, &p.sol)?.log_abs] {
            worst = worst.max((other - dense).abs() / dense.abs());
        }
    }
    Ok((worst <= 1e-6, format!("worst relative spread {worst:.2e}")))
}

fn conjugation_check(p: &Pipeline) -> Result<(bool, String)> {
    let spec = p.sol.spec();
    let nu = p.cfg.nu_list[0];
    let plain = build_kernel(&p.potential, None, nu, spec)?;
    let conj = build_kernel(&p.potential, Some(&p.sol.psi), nu, spec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(p.cfg.seed ^ 0x5eed);
    let log_u = random_smooth_field(spec, &mut rng, 4, 1.0);
    let e: Vec<f64> = p.sol.psi.values().iter().map(|v| v / (2.0 * nu)).collect();
    let inner: Vec<f64> = log_u.values().iter().zip(&e).map(|(a, b)| a - b).collect();
    let mut worst: f64 = 0.0;
    for n in 1..=3 {
        let lhs = conj.iterate_log(log_u.values(), n)?;
        let rhs = plain.iterate_log(&inner, n)?;
        for x in 0..spec.len() {
            worst = worst.max((lhs[x] - rhs[x] - e[x]).exp_m1().abs());
        }
    }
    Ok((worst <= 1e-8, format!("max relative defect {worst:.2e}")))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct NormLemmaTally {
    pub weighted_trials: usize,
    pub weighted_violations: usize,
    pub ratio_trials: usize,
    pub ratio_violations: usize,
}

impl NormLemmaTally {
    pub fn passed(&self) -> bool {
        self.weighted_violations == 0 && self.ratio_violations == 0 && self.ratio_trials > 0
    }
}

/// Randomized checks of `||f||_{bV,*} <= ||f||_* <= (1 + b max V) ||f||_{bV,*}`
/// and `||log(u/v)||_* <= 4 omega`.
pub fn norm_lemma_check(p: &Pipeline, seed: u64, trials: usize) -> NormLemmaTally {
    let spec = p.sol.spec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6e6f726d);
    let mut t = NormLemmaTally::default();
    for _ in 0..trials {
        let modes = rng.random_range(1..=8);
        let amp = rng.random_range(0.01..10.0);
        let f = random_smooth_field(spec, &mut rng, modes, amp);
        let v_amp = rng.random_range(0.1..10.0);
        let v = random_smooth_field(spec, &mut rng, 3, v_amp);
        let v_min = v.min();
        let v = v.map(|x| x - v_min);
        let beta = 10f64.powf(rng.random_range(-3.0..3.0));
        let star = f.sup_norm_mod_const();
        t.weighted_trials += 1;
        match weighted_norm_mod_const(&f, &v, beta) {
            Ok(w) => {
                let bound = (1.0 + beta * v.max()) * w;
                if w > star * (1.0 + 1e-9) || star > bound * (1.0 + 1e-9) {
                    t.weighted_violations += 1;
                }
            }
            Err(_) => t.weighted_violations += 1,
        }
        let omega = rng.random_range(0.001..0.249);
        let base = 1.0 + rng.random_range(0.0..3.0);
        let u = random_smooth_field(spec, &mut rng, modes, omega).map(|x| x + base);
        let w = random_smooth_field(spec, &mut rng, modes, omega).map(|x| x + base);
        let shift = |g: TorusField| {
            let m = g.min();
            g.map(|x| x - m + 1.0)
        };
        if let Some((ok, _, _)) = ratio_star_check(&shift(u), &shift(w)) {
            t.ratio_trials += 1;
            if !ok {
                t.ratio_violations += 1;
            }
        }
    }
    t
}

pub fn cmd_selftest(cfg: &ExperimentConfig, fault: Option<Fault>) -> Result<Report> {
    let start = Instant::now();
    let checks = run_checks(cfg, fault)?;
    let mut lines = Vec::new();
    for c in &checks {
        lines.push(format!(
            "{:<22} {}  {}",
            c.name,
            if c.passed { "PASS" } else { "FAIL" },
            c.detail
        ));
    }
    let failed: Vec<&str> = checks.iter().filter(|c| !c.passed).map(|c| c.name).collect();
    lines.push(format!(
        "{} of {} checks passed in {:.1} s",
        checks.len() - failed.len(),
        checks.len(),
        start.elapsed().as_secs_f64()
    ));
    Ok(Report {
        files: Vec::new(),
        lines,
        failure: (!failed.is_empty()).then(|| Failure::Acceptance(format!("failed: {}", failed.join(", ")))),
    })
}
