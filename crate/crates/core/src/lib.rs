//! Numerical tools for the kicked Hamilton-Jacobi equation on the torus:
//! the inviscid Lax-Oleinik semigroup and its weak KAM solution, the viscous
//! propagator after the Hopf-Cole transformation, Markov normalizations of
//! the conjugated kernels, and action-Hessian determinants along minimizing
//! orbits.

pub mod error;
pub mod experiment;
pub mod fit;
pub mod hessian;
pub mod markov;
pub mod potential;
pub mod torus;
pub mod twist;
pub mod variational;
pub mod viscous;

pub use error::{Error, Result};
pub use experiment::{ExperimentConfig, SweepRow};
pub use potential::Potential;
pub use torus::{GridSpec, TorusField, TorusPoint, VectorField};
pub use twist::{BackwardOrbit, HyperbolicData, PhasePoint};
pub use variational::{ContractionReport, LaxOleinik, WeakKamSolution};
pub use hessian::{ActionPath, HessianAssembly, LogDet};
pub use markov::{DriftMinorizationParams, LyapunovEstimate, MarkovLayer};
pub use viscous::{DomainPartition, KernelOperator, PartitionTrace};
