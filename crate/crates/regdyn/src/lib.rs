//! Regularized dynamical parametric approximation.
//!
//! Approximates the flow of `u' = f(u)` on a Hilbert space H by a parametrized
//! family `u = Phi(q)`, choosing the parameter velocity as the minimizer of
//! `|Phi'(q) qdot - f(u)|_H^2 + eps^2 |qdot|_Q^2`. The crate provides the
//! regularized least-squares core, parametrized models (linear bases, a small
//! MLP, complex Gaussian sums), explicit and implicit time steppers, epsilon
//! and step-size adaptivity, constrained steps that preserve invariants, and
//! Schrodinger-specific flows including a parametric splitting integrator.

pub mod adapt;
pub mod conserve;
pub mod gauss;
pub mod integrate;
pub mod model;
pub mod reglsq;
pub mod schrodinger;

pub use reglsq::{GramSystem, MetricQ, RegLsqError, RegLsqResult};

/// Scalar type of a parameter space: `f64` or `Complex<f64>`.
///
/// Everything downstream is generic over this so that real models run in real
/// arithmetic while complex models get genuine Hermitian adjoints.
pub trait Field: nalgebra::ComplexField<RealField = f64> + Copy {}

impl<T: nalgebra::ComplexField<RealField = f64> + Copy> Field for T {}
