//! Numerical verification of the blowup lemma on set families whose
//! ε-enlargement measures are exactly computable.
//!
//! Half-spaces under Gaussian measure and geodesic caps under the uniform
//! sphere measure are the extremal families for concentration, and both have
//! closed-form blowup masses, so the lemma's inequality can be checked to
//! floating-point accuracy rather than Monte-Carlo accuracy. MC agreement
//! checks live in the tests, interval-based.

use crate::bounds::{blowup_lower_bound, BoundError};
use crate::scalar::{lq_norm, std_normal_cdf, std_normal_quantile, LqExponent};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum BlowupError {
    #[error("half-space normal vector must be non-zero")]
    ZeroNormal,
    #[error("cap polar angle must lie in [0, pi], got {0}")]
    BadAngle(f64),
    #[error("ambient dimension must be at least 2, got {0}")]
    BadDimension(usize),
    #[error("scale parameter must be positive")]
    NonpositiveScale,
    #[error("base mass must lie in (0,1), got {0}")]
    BadMass(f64),
    #[error(transparent)]
    Bound(#[from] BoundError),
}

// ln Γ via Stirling's series after shifting the argument above 12; accurate
// to a few ulps across the range used here.
fn ln_gamma(mut x: f64) -> f64 {
    debug_assert!(x > 0.0);
    let mut shift = 0.0;
    while x < 12.0 {
        shift -= x.ln();
        x += 1.0;
    }
    const COEF: [f64; 6] = [
        1.0 / 12.0,
        -1.0 / 360.0,
        1.0 / 1260.0,
        -1.0 / 1680.0,
        1.0 / 1188.0,
        -691.0 / 360_360.0,
    ];
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    let mut series = 0.0;
    let mut term = inv;
    for c in COEF {
        series += c * term;
        term *= inv2;
    }
    shift + (x - 0.5) * x.ln() - x + 0.5 * (2.0 * std::f64::consts::PI).ln() + series
}

// Continued fraction for the regularized incomplete beta (Lentz), terminated
// at 1e-14.
fn beta_cf(a: f64, b: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    const EPS: f64 = 1e-14;
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..400 {
        let m = m as f64;
        let m2 = 2.0 * m;
        // Even step.
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        // Odd step.
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

/// Regularized incomplete beta function `I_x(a, b)`, with the symmetric form
/// chosen by argument size for stability.
pub fn reg_inc_beta(a: f64, b: f64, x: f64) -> f64 {
    debug_assert!(a > 0.0 && b > 0.0);
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = a * x.ln() + b * (1.0 - x).ln() + ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b);
    let front = ln_front.exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        (front * beta_cf(a, b, x) / a).clamp(0.0, 1.0)
    } else {
        (1.0 - front * beta_cf(b, a, 1.0 - x) / b).clamp(0.0, 1.0)
    }
}

/// Gaussian mass of the half-space `{x : w·x >= t}` under `N(0, σ²I)`:
/// `Φ(-t/(σ‖w‖₂))`.
pub fn halfspace_mass(sigma: f64, w: &[f64], t: f64) -> Result<f64, BlowupError> {
    let norm = lq_norm(w, LqExponent::Finite(2.0));
    if norm == 0.0 {
        return Err(BlowupError::ZeroNormal);
    }
    if !(sigma > 0.0) {
        return Err(BlowupError::NonpositiveScale);
    }
    Ok(std_normal_cdf(-t / (sigma * norm)))
}

/// Gaussian mass of the ℓq ε-blowup of the half-space `{w·x >= t}`: the
/// blowup is the shifted half-space `{w·x >= t - ε‖w‖_{q*}}`.
pub fn halfspace_blowup_mass(
    sigma: f64,
    w: &[f64],
    t: f64,
    eps: f64,
    q: LqExponent,
) -> Result<f64, BlowupError> {
    let norm2 = lq_norm(w, LqExponent::Finite(2.0));
    if norm2 == 0.0 {
        return Err(BlowupError::ZeroNormal);
    }
    if !(sigma > 0.0) {
        return Err(BlowupError::NonpositiveScale);
    }
    let dual = lq_norm(w, q.dual());
    Ok(std_normal_cdf((-t + eps * dual) / (sigma * norm2)))
}

/// Uniform-measure mass of a geodesic cap of polar angle `theta` on the
/// sphere in ambient dimension `p`: `I_{sin²θ}((p-1)/2, 1/2)/2` for
/// `θ ≤ π/2`, extended by symmetry above.
pub fn cap_mass(p: usize, theta: f64) -> Result<f64, BlowupError> {
    if p < 2 {
        return Err(BlowupError::BadDimension(p));
    }
    if !(0.0..=std::f64::consts::PI).contains(&theta) {
        return Err(BlowupError::BadAngle(theta));
    }
    let half_pi = std::f64::consts::FRAC_PI_2;
    if theta <= half_pi {
        let s = theta.sin();
        Ok(reg_inc_beta((p as f64 - 1.0) / 2.0, 0.5, s * s) / 2.0)
    } else {
        Ok(1.0 - cap_mass(p, std::f64::consts::PI - theta)?)
    }
}

/// Geodesic ε-blowup of a cap is a cap with the angle enlarged by `ε/r`.
pub fn cap_blowup_mass(p: usize, r: f64, theta: f64, eps: f64) -> Result<f64, BlowupError> {
    if !(r > 0.0) {
        return Err(BlowupError::NonpositiveScale);
    }
    if eps < 0.0 {
        return Err(BlowupError::BadAngle(eps));
    }
    let enlarged = (theta + eps / r).min(std::f64::consts::PI);
    cap_mass(p, enlarged)
}

/// Smallest polar angle whose cap holds at least `mass`, by bisection on the
/// monotone [`cap_mass`].
pub fn cap_angle_for_mass(p: usize, mass: f64) -> Result<f64, BlowupError> {
    if !(mass > 0.0 && mass < 1.0) {
        return Err(BlowupError::BadMass(mass));
    }
    let mut lo = 0.0;
    let mut hi = std::f64::consts::PI;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if cap_mass(p, mid)? < mass {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// The measured space of a blowup verification case.
#[derive(Debug, Clone)]
pub enum BlowupSpace {
    /// `N(0, σ²I)` on flat space; T2 constant `σ²`.
    Gaussian { p: usize, sigma: f64 },
    /// Uniform measure on the radius-`r` sphere in ambient dimension `p`
    /// with the geodesic metric; T2 constant `r²/(p-1)`.
    Sphere { p: usize, r: f64 },
}

/// The base set whose blowup is measured.
#[derive(Debug, Clone)]
pub enum BlowupSet {
    HalfSpace { w: Vec<f64>, t: f64 },
    Cap { theta: f64 },
}

/// One exactly computable verification case for the blowup lemma.
#[derive(Debug, Clone)]
pub struct BlowupCase {
    pub id: String,
    pub space: BlowupSpace,
    pub set: BlowupSet,
    pub base_mass: f64,
    /// T2 constant matching the space.
    pub c: f64,
}

impl BlowupCase {
    /// Gaussian half-space `{x₁ >= t}` with the threshold chosen so the base
    /// mass is exactly `mass`.
    pub fn gaussian_halfspace(p: usize, sigma: f64, mass: f64) -> Result<Self, BlowupError> {
        if !(mass > 0.0 && mass < 1.0) {
            return Err(BlowupError::BadMass(mass));
        }
        if !(sigma > 0.0) {
            return Err(BlowupError::NonpositiveScale);
        }
        if p == 0 {
            return Err(BlowupError::BadDimension(p));
        }
        let t = -sigma * std_normal_quantile(mass).expect("mass in (0,1)");
        let mut w = vec![0.0; p];
        w[0] = 1.0;
        let base_mass = halfspace_mass(sigma, &w, t)?;
        Ok(BlowupCase {
            id: format!("gauss-halfspace-p{p}-sigma{sigma}-mass{mass}"),
            space: BlowupSpace::Gaussian { p, sigma },
            set: BlowupSet::HalfSpace { w, t },
            base_mass,
            c: sigma * sigma,
        })
    }

    /// Spherical cap with the polar angle chosen so the base mass is `mass`.
    pub fn sphere_cap(p: usize, r: f64, mass: f64) -> Result<Self, BlowupError> {
        if p < 2 {
            return Err(BlowupError::BadDimension(p));
        }
        if !(r > 0.0) {
            return Err(BlowupError::NonpositiveScale);
        }
        let theta = cap_angle_for_mass(p, mass)?;
        let base_mass = cap_mass(p, theta)?;
        Ok(BlowupCase {
            id: format!("sphere-cap-p{p}-r{r}-mass{mass}"),
            space: BlowupSpace::Sphere { p, r },
            set: BlowupSet::Cap { theta },
            base_mass,
            c: r * r / (p as f64 - 1.0),
        })
    }

    /// Exact measure of the ε-blowup of the case's base set (ℓ2 metric for
    /// Gaussian half-spaces, geodesic for caps).
    pub fn exact_blowup_mass(&self, eps: f64) -> Result<f64, BlowupError> {
        match (&self.space, &self.set) {
            (BlowupSpace::Gaussian { sigma, .. }, BlowupSet::HalfSpace { w, t }) => {
                halfspace_blowup_mass(*sigma, w, *t, eps, LqExponent::Finite(2.0))
            }
            (BlowupSpace::Sphere { p, r }, BlowupSet::Cap { theta }) => {
                cap_blowup_mass(*p, *r, *theta, eps)
            }
            _ => Err(BlowupError::ZeroNormal),
        }
    }

    /// The smallest ε at which the lemma asserts anything.
    pub fn threshold(&self) -> f64 {
        (2.0 * self.c * (1.0 / self.base_mass).ln()).sqrt()
    }

    /// An `n`-point grid from the threshold up to `threshold + 4√c`,
    /// spanning the regime where the bound climbs from 0 toward 1.
    pub fn default_grid(&self, n: usize) -> Vec<f64> {
        let lo = self.threshold();
        let hi = lo + 4.0 * self.c.sqrt();
        (0..n)
            .map(|i| lo + (hi - lo) * i as f64 / (n.max(2) - 1) as f64)
            .collect()
    }
}

/// A grid point where the exact blowup mass fell below the lemma's lower
/// bound by more than the slack tolerance.
#[derive(Debug, Clone, PartialEq)]
pub struct BlowupViolation {
    pub eps: f64,
    pub exact: f64,
    pub bound: f64,
    pub slack: f64,
}

/// Check `exact μ(B^ε) >= bound(ε) - 1e-12` across the grid; violations are
/// returned as data, an empty list means the lemma held.
pub fn verify_blowup_lemma(
    case: &BlowupCase,
    eps_grid: &[f64],
) -> Result<Vec<BlowupViolation>, BlowupError> {
    let mut violations = Vec::new();
    for &eps in eps_grid {
        let exact = case.exact_blowup_mass(eps)?;
        let bound = blowup_lower_bound(case.c, case.base_mass, eps)?;
        let slack = exact - bound;
        if slack < -1e-12 {
            violations.push(BlowupViolation {
                eps,
                exact,
                bound,
                slack,
            });
        }
    }
    Ok(violations)
}

/// Every (exact mass, bound, slack) row for a case, for report serialization.
pub fn blowup_report_rows(
    case: &BlowupCase,
    eps_grid: &[f64],
) -> Result<Vec<BlowupViolation>, BlowupError> {
    eps_grid
        .iter()
        .map(|&eps| {
            let exact = case.exact_blowup_mass(eps)?;
            let bound = blowup_lower_bound(case.c, case.base_mass, eps)?;
            Ok(BlowupViolation {
                eps,
                exact,
                bound,
                slack: exact - bound,
            })
        })
        .collect()
}
