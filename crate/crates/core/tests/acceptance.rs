//! One test per acceptance criterion. Each writes a single PASS/FAIL line
//! straight to stdout (past the test harness capture) before asserting.

use std::io::Write;
use std::sync::{Arc, OnceLock};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use kicked_hj::experiment::*;
use kicked_hj::hessian::*;
use kicked_hj::markov::{lyapunov_exponent, telescope_check};
use kicked_hj::torus::random_smooth_field;
use kicked_hj::twist::{hyperbolic_from_matrix, hyperbolic_linearization};
use kicked_hj::variational::{decay_fit, inviscid_decay, solve_weak_kam};
use kicked_hj::viscous::build_kernel;
use kicked_hj::{GridSpec, Potential, TorusField};

fn verdict(id: u32, name: &str, pass: bool, detail: String) {
    let line = format!("criterion {id:>2} {name}: {} | {detail}\n", if pass { "PASS" } else { "FAIL" });
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(line.as_bytes());
    let _ = out.flush();
    assert!(pass, "criterion {id} ({name}) failed: {detail}");
}

fn pipeline() -> &'static Pipeline {
    static P: OnceLock<Pipeline> = OnceLock::new();
    P.get_or_init(|| prepare(&ExperimentConfig::default()).unwrap())
}

struct Sweep {
    entries: Vec<SweepEntry>,
    seconds: f64,
}

fn sweep_1024() -> &'static Sweep {
    static S: OnceLock<Sweep> = OnceLock::new();
    S.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = ExperimentConfig::default();
        cfg.out_dir = dir.path().to_path_buf();
        let start = Instant::now();
        let p = prepare(&cfg).unwrap();
        let (entries, _) = run_sweep(&p).unwrap();
        Sweep {
            entries,
            seconds: start.elapsed().as_secs_f64(),
        }
    })
}

#[test]
fn c01_weak_kam_fixed_point() {
    let f = Potential::cosine(1, 1.0, 0.0).unwrap();
    let spec = GridSpec::new(1, 1024).unwrap();
    let start = Instant::now();
    let sol = solve_weak_kam(&f, spec, 1e-8, 5000).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let defect = sol
        .lax_oleinik()
        .apply(&sol.psi)
        .zip_map(&sol.psi, |a, b| a - b)
        .sup_norm_mod_const();
    let v = sol.psi.values();
    let positive = v[1..].iter().all(|&x| x > 0.0);
    verdict(
        1,
        "weak KAM fixed point",
        defect <= 1e-8 && sol.iterations <= 5000 && secs < 30.0 && v[0] == 0.0 && positive,
        format!(
            "defect {defect:.2e} after {} iterations in {secs:.2} s, psi(0) = {}, psi > 0 elsewhere: {positive}",
            sol.iterations, v[0]
        ),
    );
}

#[test]
fn c02_hyperbolic_linearization() {
    let mut worst: f64 = 0.0;
    for f in [
        Potential::cosine(1, 1.0, 0.0).unwrap(),
        Potential::cosine(2, 1.0, 0.1).unwrap(),
        Potential::cosine(2, 0.3, 0.05).unwrap(),
    ] {
        let h = hyperbolic_linearization(&f).unwrap();
        worst = worst.max(h.riccati_residual).max(h.branch_residual);
    }
    let m: f64 = 3.0;
    let oracle = 0.5 * (-m + (m * m + 4.0 * m).sqrt());
    let h3 = hyperbolic_from_matrix(&nalgebra::DMatrix::from_element(1, 1, m)).unwrap();
    let s_plus = h3.s_plus[(0, 0)];
    let scalar_err = (s_plus - oracle).abs();
    worst = worst.max(h3.riccati_residual).max(h3.branch_residual);
    verdict(
        2,
        "hyperbolic linearization",
        worst <= 1e-10 && scalar_err <= 1e-5 && (s_plus - 0.79129).abs() <= 1e-5,
        format!("worst residual {worst:.2e}; M = 3 gives S+ = {s_plus:.8} (oracle {oracle:.8})"),
    );
}

#[test]
fn c03_variational_contraction() {
    let c = &pipeline().contraction;
    verdict(
        3,
        "variational contraction",
        c.kappa_sq_emp < 1.0 && c.near_origin_rel_err <= 0.1,
        format!(
            "kappa_sq_emp {:.6e}, prediction {:.6e}, near-origin relative error {:.2e}",
            c.kappa_sq_emp, c.kappa0_sq_pred, c.near_origin_rel_err
        ),
    );
}

#[test]
fn c04_hessian_determinants() {
    let p = pipeline();
    let start = Instant::now();
    let stage = viscous_stage(p, 0.01).unwrap();
    let u = stage.part.indices_in_u();
    let seeds: Vec<usize> = (0..20).map(|k| u[k * u.len() / 20]).collect();
    let log_mu = p.hyp.mu.ln();
    let mut spread: f64 = 0.0;
    let mut band: f64 = 0.0;
    let mut eig_ratio = f64::INFINITY;
    for &s in &seeds {
        for n in 1..=40 {
            let path = build_action_path(s, n, &p.sol).unwrap();
            let a = assemble_hessian(&path, &p.sol);
            let transfer = det_transfer(&a).unwrap().log_abs;
            band = band.max((transfer - n as f64 * log_mu).abs());
            if n <= 12 {
                let dense = det_dense(&a).unwrap().log_abs;
                let orbit = det_orbit_product(&path, &p.sol).unwrap().log_abs;
                spread = spread
                    .max((transfer - dense).abs() / dense.abs())
                    .max((orbit - dense).abs() / dense.abs());
            }
        }
        let e10 = min_eigenvalue(&assemble_hessian(&build_action_path(s, 10, &p.sol).unwrap(), &p.sol)).unwrap();
        let e40 = min_eigenvalue(&assemble_hessian(&build_action_path(s, 40, &p.sol).unwrap(), &p.sol)).unwrap();
        eig_ratio = eig_ratio.min(e40 / e10);
    }
    let c_hat = band.exp();
    let secs = start.elapsed().as_secs_f64();
    verdict(
        4,
        "Hessian triple agreement",
        spread <= 1e-6 && c_hat <= 10.0 && eig_ratio >= 0.5 && secs < 60.0,
        format!(
            "relative spread {spread:.2e}, C_hat {c_hat:.4}, min eig(40)/eig(10) {eig_ratio:.4}, {secs:.2} s"
        ),
    );
}

#[test]
fn c05_operator_identities() {
    let p = pipeline();
    let spec = p.sol.spec();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let test_u = random_smooth_field(spec, &mut rng, 4, 1.0).map(f64::exp);
    let (mut mass, mut conj, mut norm, mut tele) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for nu in [0.05, 0.01, 0.002] {
        let heat = build_kernel(&Potential::zero(1), None, nu, spec).unwrap();
        let one = heat.apply(&TorusField::constant(spec, 1.0)).unwrap();
        mass = mass.max(one.values().iter().fold(0.0, |m, v| m.max((v - 1.0).abs())));

        let plain = build_kernel(&p.potential, None, nu, spec).unwrap();
        let stage = viscous_stage(p, nu).unwrap();
        let log_u: Vec<f64> = test_u.values().iter().map(|v| v.ln()).collect();
        let e: Vec<f64> = p.sol.psi.values().iter().map(|v| v / (2.0 * nu)).collect();
        let inner: Vec<f64> = log_u.iter().zip(&e).map(|(a, b)| a - b).collect();
        for n in 1..=3 {
            let lhs = stage.op.iterate_log(&log_u, n).unwrap();
            let rhs = plain.iterate_log(&inner, n).unwrap();
            for x in 0..spec.len() {
                conj = conj.max((lhs[x] - rhs[x] - e[x]).exp_m1().abs());
            }
        }
        for l in &stage.layers {
            norm = norm.max(l.normalization_defect());
        }
        for n in 1..=5 {
            tele = tele.max(telescope_check(&stage.op, &stage.layers, &test_u, n).unwrap());
        }
    }
    verdict(
        5,
        "operator identities",
        mass <= 1e-8 && conj <= 1e-8 && norm <= 1e-10 && tele <= 1e-8,
        format!(
            "mass {mass:.2e}, conjugation {conj:.2e}, normalization {norm:.2e}, telescoping {tele:.2e}"
        ),
    );
}

#[test]
fn c06_partition_function_scaling() {
    let p = pipeline();
    let log_mu = p.hyp.mu.ln();
    let stage = viscous_stage(p, 0.01).unwrap();
    let (mean, lo, hi) = growth_slopes(&stage, 1, 20);
    let rel = (mean - log_mu).abs() / log_mu;
    let mut ratio_max: f64 = 0.0;
    for &nu in &p.cfg.nu_list {
        let s = viscous_stage(p, nu).unwrap();
        ratio_max = ratio_max.max(s.trace.ratio_hi.iter().copied().fold(0.0, f64::max));
    }
    let bounded = ratio_max.is_finite() && ratio_max <= p.cfg.c_budget;
    verdict(
        6,
        "partition-function scaling",
        rel <= 0.1 && bounded,
        format!(
            "growth of log L~^n 1 on U at nu = 0.01: {mean:.5} per kick (range {lo:.5}..{hi:.5}) vs log mu = {log_mu:.5}, relative error {rel:.3}; max L~^n 1 / (Q_n chi) over the sweep {ratio_max:.4}"
        ),
    );
}

#[test]
fn c07_drift_minorization_contraction() {
    let s = sweep_1024();
    let rows: Vec<&SweepRow> = s.entries.iter().map(|e| &e.row).collect();
    let certified = rows
        .iter()
        .all(|r| !r.flag.starts_with("error") && r.gamma < 1.0 && r.alpha0 > 0.0);
    let m: Vec<f64> = rows.iter().map(|r| r.m_drift_over_nu).collect();
    let m_max = m.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let m_min = m.iter().copied().fold(f64::INFINITY, f64::min);
    let spread = m_max / m_min;
    let contraction_ok = rows.iter().all(|r| r.hm_worst_ratio <= r.alpha + 1e-6);
    let worst = rows
        .iter()
        .map(|r| format!("{}: {:.4}/{:.4}", r.nu, r.hm_worst_ratio, r.alpha))
        .collect::<Vec<_>>()
        .join(", ");
    verdict(
        7,
        "drift, minorization and contraction",
        certified && spread <= 3.0 && contraction_ok,
        format!(
            "certified at every nu: {certified}; M_drift/nu = {m:.4?}, spread {spread:.2}; worst/alpha {worst}"
        ),
    );
}

#[test]
fn c08_uniform_decay_rate() {
    let s = sweep_1024();
    let rows: Vec<&SweepRow> = s.entries.iter().map(|e| &e.row).collect();
    let lambdas: Vec<f64> = rows.iter().map(|r| r.lambda_hat).collect();
    let positive = rows.iter().all(|r| r.lambda_hat > 0.0 && r.fit_r2 >= 0.99);
    let unif = uniformity(&lambdas);

    let mut cfg = ExperimentConfig::default();
    cfg.n_per_axis = 2048;
    let p2 = prepare(&cfg).unwrap();
    let pair = initial_pair(&cfg).unwrap();
    let mut worst_rel: f64 = 0.0;
    let mut fine = Vec::new();
    for (k, &nu) in cfg.nu_list.iter().enumerate() {
        let op = Arc::new(build_kernel(&p2.potential, Some(&p2.sol.psi), nu, p2.sol.spec()).unwrap());
        let est = lyapunov_exponent(op, pair.0.values(), pair.1.values(), cfg.n_max).unwrap();
        worst_rel = worst_rel.max((est.lambda_hat - lambdas[k]).abs() / lambdas[k]);
        fine.push(est.lambda_hat);
    }
    let r2_min = rows.iter().map(|r| r.fit_r2).fold(f64::INFINITY, f64::min);
    verdict(
        8,
        "uniform decay rate",
        positive && unif >= 0.5 && worst_rel <= 0.1 && s.seconds < 600.0,
        format!(
            "lambda_hat (1024) = {lambdas:.4?}, (2048) = {fine:.4?}; min R^2 {r2_min:.6}; min/median {unif:.4}; grid change {worst_rel:.2e}; sweep {:.1} s",
            s.seconds
        ),
    );
}

#[test]
fn c09_norm_lemmas() {
    let mut cfg = ExperimentConfig::default();
    cfg.n_per_axis = 256;
    cfg.nu_list = vec![0.05];
    let p = prepare(&cfg).unwrap();
    let t = norm_lemma_check(&p, 9, 1000);
    verdict(
        9,
        "norm lemmas",
        t.passed() && t.weighted_trials == 1000 && t.ratio_trials == 1000,
        format!(
            "weighted-norm comparison {} violations in {} trials; ratio bound {} violations in {} trials",
            t.weighted_violations, t.weighted_trials, t.ratio_violations, t.ratio_trials
        ),
    );
}

#[test]
fn c10_inviscid_benchmark() {
    let p = pipeline();
    let op = p.sol.lax_oleinik();
    let spec = p.sol.spec();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut r2_min = f64::INFINITY;
    let mut rates = Vec::new();
    for _ in 0..10 {
        let phi0 = random_smooth_field(spec, &mut rng, 6, 1.0);
        let d = inviscid_decay(&op, &phi0, &p.sol.psi, 12);
        match decay_fit(&d) {
            Some((fit, _)) => {
                r2_min = r2_min.min(fit.r2);
                rates.push(-fit.slope);
            }
            None => r2_min = f64::NEG_INFINITY,
        }
    }
    let positive = rates.len() == 10 && rates.iter().all(|&r| r > 0.0);
    verdict(
        10,
        "inviscid benchmark",
        positive && r2_min >= 0.99,
        format!(
            "rates {rates:.4?} per kick (-ln kappa0 = {:.4}), min R^2 {r2_min:.5}",
            -p.hyp.kappa0.ln()
        ),
    );
}
