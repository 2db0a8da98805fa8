//! Distributional robustness on empirical distributions: the worst-case
//! error over all test distributions within a Wasserstein-1 budget of the
//! empirical one, labels preserved.
//!
//! On an empirical instance the adversary's problem is a fractional
//! knapsack: move sample mass toward the error set, paying each atom's
//! distance per unit mass. The dual is the one-dimensional convex
//! piecewise-linear function `λ ↦ Σ pᵢ(1-λdᵢ)₊ + λε`, minimized exactly over
//! its breakpoints `{0} ∪ {1/dᵢ}`. Strong duality is exact (it is a linear
//! program), which the solvers check against each other.

use crate::attacks::linear_margin_distance;
use crate::classifiers::{Classifier, LinearClassifier};
use crate::distributions::{stream_index, LabeledSampler, RngStream, StreamDomain};
use crate::scalar::LqExponent;
use rayon::prelude::*;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum DrError {
    #[error("atom masses must be positive and sum to at most 1, got sum {0}")]
    BadMasses(f64),
    #[error("atom distances must be finite and non-negative")]
    BadDistances,
    #[error("transport budget must be non-negative, got {0}")]
    BadBudget(f64),
    #[error(transparent)]
    Sampler(#[from] crate::distributions::DistributionError),
    #[error(transparent)]
    Bound(#[from] crate::bounds::BoundError),
}

/// An empirical distributional-robustness instance: point masses at known
/// distances from the error set, plus the transport budget. Atoms at
/// distance zero are already misclassified.
#[derive(Debug, Clone)]
pub struct DrInstance {
    atoms: Vec<(f64, f64)>,
    eps: f64,
}

impl DrInstance {
    pub fn new(atoms: Vec<(f64, f64)>, eps: f64) -> Result<Self, DrError> {
        if !(eps >= 0.0) {
            return Err(DrError::BadBudget(eps));
        }
        let sum: f64 = atoms.iter().map(|(p, _)| p).sum();
        if !atoms.iter().all(|(p, _)| *p > 0.0) || sum > 1.0 + 1e-12 {
            return Err(DrError::BadMasses(sum));
        }
        if !atoms.iter().all(|(_, d)| d.is_finite() && *d >= 0.0) {
            return Err(DrError::BadDistances);
        }
        Ok(DrInstance { atoms, eps })
    }

    pub fn atoms(&self) -> &[(f64, f64)] {
        &self.atoms
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn with_eps(&self, eps: f64) -> Result<Self, DrError> {
        if !(eps >= 0.0) {
            return Err(DrError::BadBudget(eps));
        }
        Ok(DrInstance {
            atoms: self.atoms.clone(),
            eps,
        })
    }

    pub fn total_mass(&self) -> f64 {
        self.atoms.iter().map(|(p, _)| p).sum()
    }

    /// Mass already at distance ≤ eps (the plain adversarial error at this
    /// tolerance).
    pub fn mass_within(&self, eps: f64) -> f64 {
        self.atoms
            .iter()
            .filter(|(_, d)| *d <= eps)
            .map(|(p, _)| p)
            .sum()
    }
}

/// Solution of one instance: the minimizing dual multiplier, both optimal
/// values, and their gap (zero up to float noise by LP duality).
#[derive(Debug, Clone, Copy)]
pub struct DrSolution {
    pub lambda_star: f64,
    pub dual_value: f64,
    pub primal_value: f64,
    pub duality_gap: f64,
}

/// The dual objective `Σ pᵢ(1-λdᵢ)₊ + λε`.
pub fn dual_objective(lambda: f64, inst: &DrInstance) -> f64 {
    debug_assert!(lambda >= 0.0);
    inst.atoms
        .iter()
        .map(|(p, d)| p * (1.0 - lambda * d).max(0.0))
        .sum::<f64>()
        + lambda * inst.eps
}

/// Greedy exact primal: absorb the zero-distance mass, then move atoms in
/// ascending distance order, fractionally at the budget cutoff. Exact
/// because the objective is linear in moved mass at unit cost `dᵢ`.
pub fn greedy_primal(inst: &DrInstance) -> f64 {
    let mut sorted: Vec<(f64, f64)> = inst
        .atoms
        .iter()
        .copied()
        .filter(|(_, d)| *d > 0.0)
        .collect();
    sorted.sort_by(|a, b| a.1.partial_cmp(&b.1).expect("finite distances"));
    let mut error: f64 = inst
        .atoms
        .iter()
        .filter(|(_, d)| *d == 0.0)
        .map(|(p, _)| p)
        .sum();
    let mut budget = inst.eps;
    for (p, d) in sorted {
        if budget <= 0.0 {
            break;
        }
        let movable = p.min(budget / d);
        error += movable;
        budget -= movable * d;
    }
    error
}

/// Exact minimization of the convex piecewise-linear dual by evaluating it
/// at `λ ∈ {0} ∪ {1/dᵢ}`; the smallest minimizer is reported. The primal is
/// solved alongside and the gap recorded.
pub fn solve_dual(inst: &DrInstance) -> DrSolution {
    // Sort ascending by distance; prefix sums give g(1/d) in one sweep.
    let mut sorted: Vec<(f64, f64)> = inst
        .atoms
        .iter()
        .copied()
        .filter(|(_, d)| *d > 0.0)
        .collect();
    sorted.sort_by(|a, b| a.1.partial_cmp(&b.1).expect("finite distances"));
    let zero_mass: f64 = inst
        .atoms
        .iter()
        .filter(|(_, d)| *d == 0.0)
        .map(|(p, _)| p)
        .sum();

    let mut best_lambda = 0.0;
    let mut best_value = dual_objective(0.0, inst);

    // Walk candidates in ascending lambda = descending distance. At
    // lambda = 1/d only atoms strictly below d contribute:
    // g = zero_mass + prefix_mass - lambda*prefix_cost + lambda*eps.
    let mut prefix: Vec<(f64, f64)> = Vec::with_capacity(sorted.len() + 1);
    prefix.push((0.0, 0.0));
    for (p, d) in &sorted {
        let last = *prefix.last().unwrap();
        prefix.push((last.0 + p, last.1 + p * d));
    }
    let mut j = sorted.len();
    while j > 0 {
        let d = sorted[j - 1].1;
        // Skip ties so each distinct distance is evaluated once.
        let mut first = j - 1;
        while first > 0 && sorted[first - 1].1 == d {
            first -= 1;
        }
        let lambda = 1.0 / d;
        let (mass_below, cost_below) = prefix[first];
        let value = zero_mass + mass_below + lambda * (inst.eps - cost_below);
        if value < best_value {
            best_value = value;
            best_lambda = lambda;
        }
        j = first;
    }

    let primal = greedy_primal(inst);
    DrSolution {
        lambda_star: best_lambda,
        dual_value: best_value,
        primal_value: primal,
        duality_gap: best_value - primal,
    }
}

/// The two-sided bracket `P(d < 1/λ*) ≤ dual ≤ P(d ≤ 1/λ*)` that the
/// blowup-set identity satisfies on atomic instances; `None` when λ* = 0
/// (budget covers all transport, dual = total mass by convention).
pub fn dual_bracket(inst: &DrInstance, sol: &DrSolution) -> Option<(f64, f64)> {
    if sol.lambda_star == 0.0 {
        return None;
    }
    // 1/(1/d) can land an ulp off the breakpoint distance; classify the
    // boundary atom with a relative tolerance so it is never lost to both
    // sides.
    let radius = 1.0 / sol.lambda_star;
    let below: f64 = inst
        .atoms
        .iter()
        .filter(|(_, d)| *d < radius * (1.0 - 1e-9))
        .map(|(p, _)| p)
        .sum();
    let at_or_below: f64 = inst
        .atoms
        .iter()
        .filter(|(_, d)| *d <= radius * (1.0 + 1e-9))
        .map(|(p, _)| p)
        .sum();
    Some((below, at_or_below))
}

/// One row of a distributional-robustness curve.
#[derive(Debug, Clone, Copy)]
pub struct DrCurvePoint {
    pub eps: f64,
    /// Plain adversarial error on the sample: mass within distance ε.
    pub err_adv: f64,
    /// Worst-case distributional error at transport budget ε.
    pub err_dr: f64,
    /// Theorem lower bound on both errors at this ε (1 minus the accuracy
    /// ceiling, the standard error below the critical tolerance).
    pub bound: f64,
    pub lambda_star: f64,
}

/// Build an empirical instance from `n` class-`k` samples of a linear
/// classifier (exact margins only) and solve it across the ε grid. The
/// `q = 2` bound column is the generally valid one; other exponents follow
/// the dimension-scaled formula.
pub fn dr_error_curve(
    h: &LinearClassifier,
    sampler: &LabeledSampler,
    k: usize,
    q: LqExponent,
    eps_grid: &[f64],
    n: usize,
    sigma: f64,
    seed: u64,
) -> Result<Vec<DrCurvePoint>, DrError> {
    sampler.conditional(k)?;
    let distances: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = RngStream::new(seed, stream_index(StreamDomain::Eval, i as u64));
            let x = sampler.sample_class(k, &mut rng).expect("validated class");
            if h.predict(&x) != k {
                0.0
            } else {
                linear_margin_distance(h, &x, q)
            }
        })
        .collect();
    let mass = 1.0 / n as f64;
    let inst = DrInstance::new(distances.iter().map(|d| (mass, *d)).collect(), 0.0)?;
    let err_std = inst.mass_within(0.0);
    let p_dim = sampler.dim();

    let mut out = Vec::with_capacity(eps_grid.len());
    for &eps in eps_grid {
        let at_eps = inst.with_eps(eps)?;
        let sol = solve_dual(&at_eps);
        let bound = if err_std == 0.0 {
            0.0
        } else {
            let eps_crit = crate::bounds::critical_epsilon_q(err_std, sigma, p_dim, q)?;
            if eps < eps_crit {
                err_std
            } else {
                1.0 - crate::bounds::adv_acc_bound_lq(1.0 - err_std, sigma, p_dim, q, eps)?
            }
        };
        out.push(DrCurvePoint {
            eps,
            err_adv: inst.mass_within(eps),
            err_dr: sol.primal_value,
            bound,
            lambda_star: sol.lambda_star,
        });
    }
    Ok(out)
}

/// Random instances for the verification suites: a random sub-simplex of
/// masses, log-uniform distances in `[1e-3, 1e3]`, a zero-distance atom
/// with probability 1/2.
pub fn random_instance(seed: u64, index: u64, max_atoms: usize) -> DrInstance {
    let mut rng = RngStream::new(seed, index);
    let n = 1 + (rng.next_u64() as usize) % max_atoms;
    let mut masses: Vec<f64> = (0..n).map(|_| rng.next_uniform()).collect();
    let total: f64 = masses.iter().sum();
    // Scale into a strict sub-simplex so the label-conditional reading
    // (mass of one class among many) stays valid.
    let scale = (0.2 + 0.8 * rng.next_uniform()) / total;
    for m in masses.iter_mut() {
        *m *= scale;
    }
    let mut atoms: Vec<(f64, f64)> = masses
        .into_iter()
        .map(|p| {
            let d = 10f64.powf(-3.0 + 6.0 * rng.next_uniform());
            (p, d)
        })
        .collect();
    if rng.next_uniform() < 0.5 {
        atoms[0].1 = 0.0;
    }
    let eps = if rng.next_uniform() < 0.2 {
        0.0
    } else {
        10f64.powf(-3.0 + 5.0 * rng.next_uniform())
    };
    DrInstance::new(atoms, eps).expect("generated instance is valid")
}
