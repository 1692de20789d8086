//! Perturbative expansions and fast fixed-step solvers for linear matrix
//! differential equations `y'(t) = G(t) y(t)` whose generator splits into a
//! fast rotating frame plus small modulated perturbations.
//!
//! The building blocks, bottom up:
//!
//! - [`multiset`]: index multisets labeling multivariable expansion terms
//! - [`linalg`]: dense complex matrices, LU solves, the matrix exponential
//! - [`ode`]: fixed-step RK4 and adaptive Dormand-Prince integration of
//!   block-matrix ODEs
//! - [`signal`]: carrier-modulated envelopes and Chebyshev approximation
//! - [`perturbation`]: multivariable Dyson and Magnus expansion terms, plus
//!   array-valued polynomials for assembling and transforming them
//! - [`pertsolver`]: fixed-step solvers that precompute expansion terms once
//!   and replay them across steps via time translation
//! - [`models`]: transmon system construction, pulse shapes, fidelity and
//!   robustness metrics

pub mod linalg;
pub mod models;
pub mod multiset;
pub mod ode;
pub mod perturbation;
pub mod pertsolver;
pub mod signal;

pub use linalg::ComplexMatrix;
pub use multiset::Multiset;
pub use perturbation::{
    compute_perturbation_terms, ArrayPolynomial, Expansion, PerturbationProblem,
    PerturbationResult,
};
