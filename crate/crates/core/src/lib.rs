//! Impossibility bounds for adversarial robustness under concentration of
//! measure, together with the machinery to verify them empirically.
//!
//! The library computes the critical perturbation tolerances, adversarial
//! accuracy decay curves, and distance-to-error-set bounds that hold for any
//! classifier once the class-conditional data distribution satisfies a
//! Talagrand transportation-cost inequality, and it checks those bounds
//! against exact closed forms and Monte-Carlo simulation on Gaussian, sphere,
//! pushforward, and synthetic two-class feature distributions.
//!
//! Module map:
//!
//! - [`scalar`]: normal CDF/quantile, ℓq norms and dual exponents
//! - [`bounds`]: closed-form bound evaluation and T2 constant constructors
//! - [`distributions`]: deterministic labeled samplers with T2 constants
//! - [`classifiers`]: linear models and a trainable multilayer perceptron
//! - [`attacks`]: margin geometry, PGD, robust-accuracy/distance estimators
//! - [`blowup`]: exact blowup-measure verification of the concentration lemma
//! - [`drobust`]: distributional-robustness dual/primal solvers
//! - [`idx`]: IDX image/label file ingestion

pub mod attacks;
pub mod blowup;
pub mod bounds;
pub mod classifiers;
pub mod distributions;
pub mod drobust;
pub mod experiments;
pub mod idx;
pub mod scalar;

pub use scalar::LqExponent;
