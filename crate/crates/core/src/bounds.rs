//! Closed-form impossibility bounds and T2 noise-scale constructors.
//!
//! The central objects are the critical tolerance `ε(h|k) =
//! σ√(2 log(1/err))`, the Gaussian-rate decay of adversarial accuracy beyond
//! it, and the companion bound on the mean distance to the error set. The
//! distance bounds use the proof-derived form `ε(h|k) + σ√(π/2)`; the
//! flat-space variants rescale by `p^{1/q-1/2}`.
//!
//! For q > 2 (including ∞) the dimension-scaled accuracy/distance forms are
//! anti-conservative for weight geometries far from equal magnitude: the ℓq
//! ball at tolerance ε only contains the ℓ2 ball at the same ε, so the only
//! generally valid statement at q > 2 is the ℓ2 one. The q > 2 formulas are
//! still evaluated exactly as defined; consumers that need a sound guarantee
//! for arbitrary classifiers should use `q = 2`.

use crate::scalar::{lq_dim_factor, std_normal_cdf, LqExponent};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum BoundError {
    #[error("bound is vacuous: the standard error is zero, the critical-tolerance factor diverges")]
    VacuousBound,
    #[error("tolerance {eps} is below the phase transition at {eps_crit}; the decay bound is not asserted there")]
    BelowPhaseTransition { eps: f64, eps_crit: f64 },
    #[error("tolerance {eps} is below the blowup threshold {threshold}")]
    BelowBlowupThreshold { eps: f64, threshold: f64 },
    #[error("probability argument must lie in {range}, got {value}")]
    InvalidProbability { value: f64, range: &'static str },
    #[error("noise scale must be positive, got {0}")]
    InvalidSigma(f64),
    #[error("sphere constructions need ambient dimension >= 2, got {0}")]
    SphereDimension(usize),
    #[error("uniform-measure noise scale needs strictly positive curvature, got {0}")]
    NonpositiveCurvature(f64),
    #[error("oscillation is a sup minus an inf and cannot be negative, got {0}")]
    NegativeOscillation(f64),
    #[error("Lipschitz constant must be positive, got {0}")]
    InvalidLipschitz(f64),
    #[error("adversarial tolerance {eps} below the feature scale {eta} is outside the proof regime")]
    OutsideProofRegime { eps: f64, eta: f64 },
}

fn check_prob(value: f64, lo_open: bool, hi_closed: bool) -> Result<(), BoundError> {
    let ok_lo = if lo_open { value > 0.0 } else { value >= 0.0 };
    let ok_hi = if hi_closed { value <= 1.0 } else { value < 1.0 };
    if ok_lo && ok_hi && value.is_finite() {
        Ok(())
    } else {
        Err(BoundError::InvalidProbability {
            value,
            range: match (lo_open, hi_closed) {
                (true, true) => "(0,1]",
                (true, false) => "(0,1)",
                (false, true) => "[0,1]",
                (false, false) => "[0,1)",
            },
        })
    }
}

fn clamp_prob(x: f64) -> f64 {
    x.clamp(0.0, 1.0)
}

/// Critical tolerance `ε(h|k) = σ√(2 log(1/err))`.
///
/// A perfect classifier (`err = 0`) makes the factor diverge; that case is a
/// typed [`BoundError::VacuousBound`] so callers must branch explicitly.
pub fn critical_epsilon(err_std: f64, sigma: f64) -> Result<f64, BoundError> {
    if err_std == 0.0 {
        return Err(BoundError::VacuousBound);
    }
    check_prob(err_std, true, true)?;
    if !(sigma > 0.0) {
        return Err(BoundError::InvalidSigma(sigma));
    }
    Ok(sigma * (2.0 * (1.0 / err_std).ln()).sqrt())
}

/// Adversarial-accuracy bound for the geodesic threat model:
/// `min(acc, e^{-(ε-ε(h|k))²/(2σ²)})`, asserted only for `ε ≥ ε(h|k)`.
pub fn adv_acc_bound_geodesic(acc_std: f64, sigma: f64, eps: f64) -> Result<f64, BoundError> {
    check_prob(acc_std, false, false)?;
    let eps_crit = critical_epsilon(1.0 - acc_std, sigma)?;
    if eps < eps_crit {
        return Err(BoundError::BelowPhaseTransition { eps, eps_crit });
    }
    let d = eps - eps_crit;
    Ok(clamp_prob(acc_std.min((-d * d / (2.0 * sigma * sigma)).exp())))
}

/// Bound on the mean geodesic distance to the error set:
/// `ε(h|k) + σ√(π/2)`.
pub fn distance_bound_geodesic(err_std: f64, sigma: f64) -> Result<f64, BoundError> {
    let eps_crit = critical_epsilon(err_std, sigma)?;
    Ok(eps_crit + sigma * (std::f64::consts::PI / 2.0).sqrt())
}

/// Critical tolerance for the ℓq threat model:
/// `ε_q(h|k) = ε(h|k)·p^{1/q-1/2}`.
pub fn critical_epsilon_q(
    err_std: f64,
    sigma: f64,
    p: usize,
    q: LqExponent,
) -> Result<f64, BoundError> {
    Ok(critical_epsilon(err_std, sigma)? * lq_dim_factor(p, q))
}

/// Adversarial-accuracy bound for the ℓq threat model:
/// `min(acc, e^{-p^{1-2/q}(ε-ε_q)²/(2σ²)})`, asserted for `ε ≥ ε_q(h|k)`.
pub fn adv_acc_bound_lq(
    acc_std: f64,
    sigma: f64,
    p: usize,
    q: LqExponent,
    eps: f64,
) -> Result<f64, BoundError> {
    check_prob(acc_std, false, false)?;
    let eps_q = critical_epsilon_q(1.0 - acc_std, sigma, p, q)?;
    if eps < eps_q {
        return Err(BoundError::BelowPhaseTransition { eps, eps_crit: eps_q });
    }
    let rate = (p as f64).powf(1.0 - 2.0 * q.recip());
    let d = eps - eps_q;
    Ok(clamp_prob(
        acc_std.min((-rate * d * d / (2.0 * sigma * sigma)).exp()),
    ))
}

/// ℓq distance-to-error-set bound: the geodesic bound rescaled by
/// `p^{1/q-1/2}`.
pub fn distance_bound_lq(
    err_std: f64,
    sigma: f64,
    p: usize,
    q: LqExponent,
) -> Result<f64, BoundError> {
    Ok(distance_bound_geodesic(err_std, sigma)? * lq_dim_factor(p, q))
}

/// T2 noise scale of the uniform measure on a sphere of radius `r` embedded
/// in ambient dimension `p`: `σ = r/√(p-1)`.
pub fn sphere_t2_sigma(r: f64, p: usize) -> Result<f64, BoundError> {
    if p < 2 {
        return Err(BoundError::SphereDimension(p));
    }
    if !(r > 0.0) {
        return Err(BoundError::InvalidSigma(r));
    }
    Ok(r / ((p - 1) as f64).sqrt())
}

/// T2 noise scale of the volume measure on a manifold whose Ricci curvature
/// is bounded below by `ricci_min > 0`: `σ = 1/√ricci_min`.
pub fn ricci_uniform_sigma(ricci_min: f64) -> Result<f64, BoundError> {
    if !(ricci_min > 0.0) {
        return Err(BoundError::NonpositiveCurvature(ricci_min));
    }
    Ok(ricci_min.sqrt().recip())
}

/// T2 noise scale of the pushforward of a T2 distribution through an
/// `L`-Lipschitz map: `σ = L·σ̃`.
pub fn pushforward_sigma(lipschitz: f64, sigma_base: f64) -> Result<f64, BoundError> {
    if !(lipschitz > 0.0) {
        return Err(BoundError::InvalidLipschitz(lipschitz));
    }
    if !(sigma_base > 0.0) {
        return Err(BoundError::InvalidSigma(sigma_base));
    }
    Ok(lipschitz * sigma_base)
}

/// Degraded noise scale under a bounded log-density perturbation:
/// `σ̃ = σ·e^{osc}` with `osc = sup u - inf u ≥ 0`.
pub fn holley_stroock_sigma(sigma: f64, osc: f64) -> Result<f64, BoundError> {
    if !(sigma > 0.0) {
        return Err(BoundError::InvalidSigma(sigma));
    }
    if !(osc >= 0.0) {
        return Err(BoundError::NegativeOscillation(osc));
    }
    Ok(sigma * osc.exp())
}

/// Result of [`basic_nfl_bound`]: the `7δ/3` adversarial-accuracy ceiling,
/// clamped to 1 and flagged vacuous when `δ > 3/7`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NflBound {
    pub value: f64,
    pub vacuous: bool,
}

/// The basic no-free-lunch ceiling: a classifier with standard accuracy at
/// least `1-δ` on the two-class feature problem has ℓ∞ adversarial accuracy
/// at most `7δ/3` once `ε ≥ 2η`.
pub fn basic_nfl_bound(delta: f64) -> Result<NflBound, BoundError> {
    check_prob(delta, false, true)?;
    let raw = 7.0 * delta / 3.0;
    Ok(NflBound {
        value: raw.min(1.0),
        vacuous: raw > 1.0,
    })
}

/// An exact value together with the exponential bound that accompanies it in
/// the toy-problem analysis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToyAccuracy {
    /// Exact closed-form probability.
    pub exact: f64,
    /// The exponential tail bound (a lower bound for the standard accuracy,
    /// an upper bound for the adversarial one).
    pub bound: f64,
}

/// Standard accuracy of the averaging linear classifier on the toy problem:
/// exactly `Φ(η√(p-1))`, at least `1 - e^{-(p-1)η²/2}`.
pub fn toy_std_acc(p: usize, eta: f64) -> Result<ToyAccuracy, BoundError> {
    if p < 2 {
        return Err(BoundError::SphereDimension(p));
    }
    let m = ((p - 1) as f64).sqrt();
    Ok(ToyAccuracy {
        exact: std_normal_cdf(eta * m),
        bound: clamp_prob(1.0 - (-(p as f64 - 1.0) * eta * eta / 2.0).exp()),
    })
}

/// ℓ∞ adversarial accuracy of the averaging classifier at tolerance
/// `ε ≥ η`: exactly `Φ((η-ε)√(p-1))`, at most `e^{-(p-1)(ε-η)²/2}`.
pub fn toy_adv_acc(p: usize, eta: f64, eps: f64) -> Result<ToyAccuracy, BoundError> {
    if p < 2 {
        return Err(BoundError::SphereDimension(p));
    }
    if eps < eta {
        return Err(BoundError::OutsideProofRegime { eps, eta });
    }
    let m = ((p - 1) as f64).sqrt();
    let d = eps - eta;
    Ok(ToyAccuracy {
        exact: std_normal_cdf(-d * m),
        bound: clamp_prob((-(p as f64 - 1.0) * d * d / 2.0).exp()),
    })
}

/// Mutual information (nats) between one noisy feature and the label in the
/// toy problem: `η² - r`, with `r` evaluated by adaptive quadrature to an
/// absolute tolerance of 1e-10 and the result clamped to `[0, η²]`.
///
/// The ratio to `η²` tends to 1/2 as `η → 0⁺` and to 0 as `η → ∞` (the
/// information itself saturates at `ln 2`).
pub fn toy_mutual_information(eta: f64) -> f64 {
    if eta <= 0.0 {
        return 0.0;
    }
    let two_eta_sq = 2.0 * eta * eta;
    // cosh(z)·ln(cosh(z)) evaluated through logs for large z so the product
    // with the Gaussian factor never overflows.
    let integrand = move |z: f64| -> f64 {
        let gauss = -z * z / two_eta_sq;
        if z < 20.0 {
            let c = z.cosh();
            gauss.exp() * c * c.ln()
        } else {
            let ln_cosh = z + (0.5 * (1.0 + (-2.0 * z).exp())).ln();
            (gauss + ln_cosh).exp() * ln_cosh
        }
    };
    let mut z_max = 8.0 * eta + 20.0;
    // Keep the truncated tail analytically negligible even for noise scales
    // far beyond any grid used here.
    if z_max < 2.0 * eta * eta {
        z_max += 2.0 * eta * eta;
    }
    // The integrand lives at the scale of eta; seed the subdivision there so
    // a small spike inside a long interval cannot be missed.
    let mut cuts = vec![0.0];
    let mut b = eta.min(z_max);
    while b < z_max {
        cuts.push(b);
        b *= 4.0;
    }
    cuts.push(z_max);
    let tol = 1e-10 / (cuts.len() - 1) as f64;
    let integral: f64 = cuts
        .windows(2)
        .map(|w| adaptive_gauss_kronrod(&integrand, w[0], w[1], tol))
        .sum();
    let prefactor = 2.0 / ((2.0 * std::f64::consts::PI).sqrt() * eta) * (-eta * eta / 2.0).exp();
    let r = prefactor * integral;
    (eta * eta - r).clamp(0.0, eta * eta)
}

/// Lower bound on the measure of the ε-blowup of a set of mass `mass` under
/// any distribution with the T2 property at constant `c`, valid for
/// `ε ≥ √(2c log(1/mass))`.
pub fn blowup_lower_bound(c: f64, mass: f64, eps: f64) -> Result<f64, BoundError> {
    if !(c > 0.0) {
        return Err(BoundError::InvalidSigma(c));
    }
    check_prob(mass, true, true)?;
    let threshold = (2.0 * c * (1.0 / mass).ln()).sqrt();
    if eps < threshold {
        return Err(BoundError::BelowBlowupThreshold { eps, threshold });
    }
    let d = eps - threshold;
    Ok(clamp_prob(1.0 - (-d * d / (2.0 * c)).exp()))
}

/// A tabulated bound evaluation: critical tolerance, accuracy-decay curve,
/// and distance bound for one `(err, σ, p, q)` configuration.
#[derive(Debug, Clone)]
pub struct BoundReport {
    pub sigma: f64,
    pub err_std: f64,
    pub eps_crit: f64,
    pub p: Option<usize>,
    pub q: Option<LqExponent>,
    /// `(ε, accuracy upper bound)` pairs; below the critical tolerance the
    /// only valid ceiling is the standard accuracy itself.
    pub curve: Vec<(f64, f64)>,
    pub dist_bound: f64,
}

/// Build a [`BoundReport`] over an ε grid. With `p` and `q` present the ℓq
/// forms are used, otherwise the geodesic ones.
pub fn bound_report(
    err_std: f64,
    sigma: f64,
    p: Option<usize>,
    q: Option<LqExponent>,
    eps_grid: &[f64],
) -> Result<BoundReport, BoundError> {
    let acc_std = 1.0 - err_std;
    let (eps_crit, dist_bound) = match (p, q) {
        (Some(p), Some(q)) => (
            critical_epsilon_q(err_std, sigma, p, q)?,
            distance_bound_lq(err_std, sigma, p, q)?,
        ),
        _ => (
            critical_epsilon(err_std, sigma)?,
            distance_bound_geodesic(err_std, sigma)?,
        ),
    };
    let mut curve = Vec::with_capacity(eps_grid.len());
    for &eps in eps_grid {
        let bound = if eps < eps_crit {
            acc_std
        } else {
            match (p, q) {
                (Some(p), Some(q)) => adv_acc_bound_lq(acc_std, sigma, p, q, eps)?,
                _ => adv_acc_bound_geodesic(acc_std, sigma, eps)?,
            }
        };
        curve.push((eps, bound));
    }
    Ok(BoundReport {
        sigma,
        err_std,
        eps_crit,
        p,
        q,
        curve,
        dist_bound,
    })
}

// 15-point Kronrod rule with embedded 7-point Gauss rule (positive half of
// the symmetric nodes on [-1, 1]).
const KRONROD_X: [f64; 8] = [
    0.991455371120813,
    0.949107912342759,
    0.864864423359769,
    0.741531185599394,
    0.586087235467691,
    0.405845151377397,
    0.207784955007898,
    0.0,
];
const KRONROD_W: [f64; 8] = [
    0.022935322010529,
    0.063092092629979,
    0.104790010322250,
    0.140653259715525,
    0.169004726639267,
    0.190350578064785,
    0.204432940075298,
    0.209482141084728,
];
const GAUSS_W: [f64; 4] = [
    0.129484966168870,
    0.279705391489277,
    0.381830050505119,
    0.417959183673469,
];

fn gk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    let mut kronrod = KRONROD_W[7] * f(mid);
    let mut gauss = GAUSS_W[3] * f(mid);
    for i in 0..7 {
        let dx = half * KRONROD_X[i];
        let pair = f(mid - dx) + f(mid + dx);
        kronrod += KRONROD_W[i] * pair;
        if i % 2 == 1 {
            gauss += GAUSS_W[i / 2] * pair;
        }
    }
    kronrod *= half;
    gauss *= half;
    (kronrod, (kronrod - gauss).abs())
}

/// Adaptive bisection on the 15-point Kronrod rule to absolute tolerance
/// `tol`.
pub(crate) fn adaptive_gauss_kronrod<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
    fn recurse<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64, depth: u32) -> f64 {
        let (value, err) = gk15(f, a, b);
        if err <= tol || depth >= 48 {
            return value;
        }
        let mid = 0.5 * (a + b);
        recurse(f, a, mid, 0.5 * tol, depth + 1) + recurse(f, mid, b, 0.5 * tol, depth + 1)
    }
    recurse(f, a, b, tol, 0)
}
