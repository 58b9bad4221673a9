use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::potential::Potential;
use crate::torus::GridSpec;
use crate::viscous::min_resolved_nu;

/// Flat experiment configuration. Keys in the text form match the field names.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    /// `cosine` or `zero`.
    pub family: String,
    pub a: f64,
    pub c: f64,
    pub dim: usize,
    pub n_per_axis: usize,
    /// Descending.
    pub nu_list: Vec<f64>,
    /// Kicks iterated for the decay-rate fit.
    pub n_max: usize,
    /// Horizon of the partition-function trace.
    pub trace_n_max: usize,
    /// Markov layers entering the drift and minorization certificates.
    pub layer_count: usize,
    pub wk_tol: f64,
    pub wk_max_iter: usize,
    pub stationary_tol: f64,
    pub growth_fit_start: usize,
    pub growth_fit_end: usize,
    pub r_u: f64,
    /// Minorization level in units of `nu`.
    pub r_mult: f64,
    pub c_budget: f64,
    pub hm_trials: usize,
    pub seed: u64,
    pub hessian_x: Vec<f64>,
    pub hessian_n_list: Vec<usize>,
    pub out_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            family: "cosine".into(),
            a: 1.0,
            c: 0.0,
            dim: 1,
            n_per_axis: 1024,
            nu_list: vec![0.1, 0.05, 0.02, 0.01, 0.005, 0.002],
            n_max: 200,
            trace_n_max: 20,
            layer_count: 5,
            wk_tol: 1e-10,
            wk_max_iter: 5000,
            stationary_tol: 1e-12,
            growth_fit_start: 5,
            growth_fit_end: 20,
            r_u: 0.1,
            r_mult: 5.0,
            c_budget: 50.0,
            hm_trials: 100,
            seed: 1,
            hessian_x: vec![0.05],
            hessian_n_list: vec![1, 2, 5, 10, 20, 40],
            out_dir: PathBuf::from("out"),
        }
    }
}

pub const KEYS: &[&str] = &[
    "family",
    "a",
    "c",
    "dim",
    "n_per_axis",
    "nu_list",
    "n_max",
    "trace_n_max",
    "layer_count",
    "wk_tol",
    "wk_max_iter",
    "stationary_tol",
    "growth_fit_start",
    "growth_fit_end",
    "r_u",
    "r_mult",
    "c_budget",
    "hm_trials",
    "seed",
    "hessian_x",
    "hessian_n_list",
    "out_dir",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("cannot parse `{value}` for key `{key}`")))
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| parse(key, s))
        .collect()
}

fn join<T: std::fmt::Display>(v: &[T]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

impl ExperimentConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::parse_str(&text)
    }

    /// Parses `key = value` lines over the defaults. `#` starts a comment.
    pub fn parse_str(text: &str) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", lineno + 1)))?;
            cfg.set(key.trim(), value.trim())?;
        }
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "family" => self.family = value.to_string(),
            "a" => self.a = parse(key, value)?,
            "c" => self.c = parse(key, value)?,
            "dim" => self.dim = parse(key, value)?,
            "n_per_axis" => self.n_per_axis = parse(key, value)?,
            "nu_list" => self.nu_list = parse_list(key, value)?,
            "n_max" => self.n_max = parse(key, value)?,
            "trace_n_max" => self.trace_n_max = parse(key, value)?,
            "layer_count" => self.layer_count = parse(key, value)?,
            "wk_tol" => self.wk_tol = parse(key, value)?,
            "wk_max_iter" => self.wk_max_iter = parse(key, value)?,
            "stationary_tol" => self.stationary_tol = parse(key, value)?,
            "growth_fit_start" => self.growth_fit_start = parse(key, value)?,
            "growth_fit_end" => self.growth_fit_end = parse(key, value)?,
            "r_u" => self.r_u = parse(key, value)?,
            "r_mult" => self.r_mult = parse(key, value)?,
            "c_budget" => self.c_budget = parse(key, value)?,
            "hm_trials" => self.hm_trials = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "hessian_x" => self.hessian_x = parse_list(key, value)?,
            "hessian_n_list" => self.hessian_n_list = parse_list(key, value)?,
            "out_dir" => self.out_dir = PathBuf::from(value),
            _ => return Err(Error::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    /// Applies `(key, value)` overrides in order.
    pub fn with_overrides<'a>(mut self, overrides: impl IntoIterator<Item = (&'a str, &'a str)>) -> Result<Self> {
        for (k, v) in overrides {
            self.set(k, v)?;
        }
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let spec = self.grid().map_err(|e| Error::Config(e.to_string()))?;
        self.potential().map_err(|e| Error::Config(e.to_string()))?;
        if self.nu_list.is_empty() {
            return Err(Error::Config("nu_list is empty".into()));
        }
        if self.nu_list.windows(2).any(|w| !(w[0] > w[1])) {
            return Err(Error::Config("nu_list must be strictly descending".into()));
        }
        let floor = min_resolved_nu(spec);
        for &nu in &self.nu_list {
            if !(nu > 0.0 && nu.is_finite()) {
                return Err(Error::Config(format!("viscosity {nu} must be positive")));
            }
            if nu < floor {
                return Err(Error::ViscosityBelowFloor { nu, floor });
            }
        }
        if self.trace_n_max < self.layer_count + 1 {
            return Err(Error::Config("trace_n_max must exceed layer_count".into()));
        }
        if self.layer_count == 0 {
            return Err(Error::Config("layer_count must be positive".into()));
        }
        if self.growth_fit_end > self.trace_n_max || self.growth_fit_start + 2 > self.growth_fit_end {
            return Err(Error::Config(
                "growth fit window must hold at least three points within the trace".into(),
            ));
        }
        if !(self.r_u > 0.0) || !(self.r_mult > 0.0) || !(self.c_budget > 0.0) || !(self.wk_tol > 0.0) {
            return Err(Error::Config("r_u, r_mult, c_budget and wk_tol must be positive".into()));
        }
        if self.hessian_x.len() != self.dim {
            return Err(Error::Config(format!(
                "hessian_x has {} coordinates, dim is {}",
                self.hessian_x.len(),
                self.dim
            )));
        }
        if self.hessian_n_list.contains(&0) {
            return Err(Error::Config("hessian_n_list entries must be at least 1".into()));
        }
        Ok(())
    }

    pub fn grid(&self) -> Result<GridSpec> {
        GridSpec::new(self.dim, self.n_per_axis)
    }

    pub fn potential(&self) -> Result<Potential> {
        match self.family.as_str() {
            "cosine" => Potential::cosine(self.dim, self.a, self.c),
            "zero" => Ok(Potential::zero(self.dim)),
            other => Err(Error::Config(format!("unknown potential family `{other}`"))),
        }
    }

    /// Canonical text form; parses back to an equal config.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "family = {}", self.family);
        let _ = writeln!(s, "a = {:e}", self.a);
        let _ = writeln!(s, "c = {:e}", self.c);
        let _ = writeln!(s, "dim = {}", self.dim);
        let _ = writeln!(s, "n_per_axis = {}", self.n_per_axis);
        let _ = writeln!(s, "nu_list = {}", join(&self.nu_list));
        let _ = writeln!(s, "n_max = {}", self.n_max);
        let _ = writeln!(s, "trace_n_max = {}", self.trace_n_max);
        let _ = writeln!(s, "layer_count = {}", self.layer_count);
        let _ = writeln!(s, "wk_tol = {:e}", self.wk_tol);
        let _ = writeln!(s, "wk_max_iter = {}", self.wk_max_iter);
        let _ = writeln!(s, "stationary_tol = {:e}", self.stationary_tol);
        let _ = writeln!(s, "growth_fit_start = {}", self.growth_fit_start);
        let _ = writeln!(s, "growth_fit_end = {}", self.growth_fit_end);
        let _ = writeln!(s, "r_u = {:e}", self.r_u);
        let _ = writeln!(s, "r_mult = {:e}", self.r_mult);
        let _ = writeln!(s, "c_budget = {:e}", self.c_budget);
        let _ = writeln!(s, "hm_trials = {}", self.hm_trials);
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "hessian_x = {}", join(&self.hessian_x));
        let _ = writeln!(s, "hessian_n_list = {}", join(&self.hessian_n_list));
        let _ = writeln!(s, "out_dir = {}", self.out_dir.display());
        s
    }
}
