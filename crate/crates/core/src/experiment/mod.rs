//! Configuration, the viscosity sweep, diagnostic reports and CSV output.

mod commands;
mod config;
mod csv;
mod selftest;

pub use commands::{
    certify_stage, cmd_hessian, cmd_hyperbolic, cmd_lyapunov_sweep, cmd_markov_check,
    cmd_partition_trace, cmd_weak_kam, exit_code, growth_slopes, initial_pair, prepare, run_sweep,
    sweep_entry, uniformity, viscous_stage, Certificate, Failure, Pipeline, Report, SweepEntry,
    SweepRow, ViscousStage,
};
pub use config::{ExperimentConfig, KEYS};
pub use csv::{format_float, gnuplot_script, write_atomic, write_gnuplot, Cell, CsvTable};
pub use selftest::{cmd_selftest, norm_lemma_check, reduced_config, run_checks, Check, Fault, NormLemmaTally};
