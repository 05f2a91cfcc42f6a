//! Arbitrary-order weak approximation of Markov semigroups by random-grid
//! corrections.
//!
//! The crate builds the scheme trees and their forests ([`trees`]), the
//! random grids they induce ([`random_grids`]), one-step kernels with a
//! shared-noise contract ([`kernels`]), the signed branching Monte Carlo
//! estimator ([`estimator`]) and a few benchmark problems ([`models`]).
//! The `randgrid` binary wraps all of it ([`cli`]).

pub mod cli;
pub mod estimator;
pub mod kernels;
pub mod models;
pub mod random_grids;
pub mod rng;
pub mod trees;

pub use estimator::{estimate, EstimateConfig, EstimateReport, SamplingMode, TermStats};
pub use kernels::{EulerKernel, Kernel, KernelError, ModelSpec, NvKernel, PdmpKernel};
pub use models::{BuiltinModel, ModelRegistry};
pub use random_grids::{Grid, LabeledTree};
pub use trees::{ForestTerm, NeveuWord, Rational, SchemeOrderParams, Tree};
