//! Labeled samplers for the distribution families the bounds apply to, each
//! carrying its T2 noise scale.
//!
//! Reproducibility contract: every random draw comes from a counter-based
//! [`RngStream`] keyed by `(seed, stream index)`. Streams with distinct keys
//! are statistically independent, the same key replays the identical
//! sequence, and per-sample work keyed by the sample index is therefore
//! reproducible bit-for-bit no matter how many threads consume the samples.
//! Gaussian draws go through the inverse CDF of one counter-derived uniform
//! per coordinate, which keeps the stream layout static.

use crate::bounds::{pushforward_sigma, sphere_t2_sigma};
use crate::scalar::{quantile_seed, std_normal_cdf};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum DistributionError {
    #[error("sampler kind mismatch: expected {expected}, got {got}")]
    KindMismatch {
        expected: &'static str,
        got: &'static str,
    },
    #[error("scale parameters must be positive")]
    NonpositiveScale,
    #[error("dimension must be at least {min}, got {got}")]
    BadDimension { min: usize, got: usize },
    #[error("class priors must be strictly positive and sum to 1, got sum {0}")]
    BadPriors(f64),
    #[error("conditionals must be non-empty and share the ambient dimension")]
    InconsistentConditionals,
    #[error("class index {0} out of range")]
    BadClass(usize),
}

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// A counter-based random stream keyed by `(seed, index)`.
///
/// The k-th output is a pure function of `(seed, index, k)`, so drawing from
/// one stream never perturbs another and replay is exact.
#[derive(Debug, Clone, Copy)]
pub struct RngStream {
    base: u64,
    counter: u64,
}

impl RngStream {
    pub fn new(seed: u64, index: u64) -> Self {
        let base = mix64(seed ^ mix64(index.wrapping_mul(GOLDEN) ^ 0x5851_F42D_4C95_7F2D));
        RngStream { base, counter: 0 }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.counter = self.counter.wrapping_add(1);
        mix64(self.base.wrapping_add(self.counter.wrapping_mul(GOLDEN)))
    }

    /// Uniform draw in the open interval (0,1).
    pub fn next_uniform(&mut self) -> f64 {
        ((self.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
    }

    /// Standard normal draw via the inverse CDF of one uniform. Uses the
    /// unrefined rational approximation (1e-9 relative): sampling accuracy
    /// is bounded by Monte-Carlo noise, not quantile precision.
    pub fn next_normal(&mut self) -> f64 {
        quantile_seed(self.next_uniform())
    }

    /// Uniform draw in [-1, 1].
    pub fn next_symmetric(&mut self) -> f64 {
        2.0 * self.next_uniform() - 1.0
    }
}

/// Stream-index namespaces, so independent subsystems sharing one seed never
/// collide on the same `(seed, index)` key.
#[derive(Debug, Clone, Copy)]
pub enum StreamDomain {
    Sampling = 0,
    Attack = 1,
    Shuffle = 2,
    Init = 3,
    Eval = 4,
    Fuzz = 5,
}

/// Builds a stream index namespaced by domain; `i` must stay below 2^56.
pub fn stream_index(domain: StreamDomain, i: u64) -> u64 {
    debug_assert!(i < (1 << 56));
    ((domain as u64) << 56) | i
}

/// A class-conditional sampling distribution together with the T2 noise
/// scale its geometry guarantees.
#[derive(Debug, Clone, PartialEq)]
pub enum ClassConditional {
    /// `N(mean, scale² I)`; noise scale is `scale`.
    IsotropicGaussian { mean: Vec<f64>, scale: f64 },
    /// `N(mean, diag(scales²))`; noise scale is the largest coordinate scale.
    DiagonalGaussian { mean: Vec<f64>, scales: Vec<f64> },
    /// Uniform on the sphere of the given radius in ambient dimension `dim`;
    /// noise scale `r/√(dim-1)`.
    SphereUniform { radius: f64, dim: usize },
    /// Componentwise normal CDF image of a standard Gaussian, uniform on the
    /// unit cube; noise scale `(2π)^{-1/2}`.
    HypercubePushforward { dim: usize },
    /// One class of the two-class feature problem, for the label `sign`
    /// (±1): a coordinate that copies `sign` 70% of the time, then `dim - 1`
    /// unit-variance Gaussians centered at `sign·eta`. The noise scale
    /// refers to the Gaussian block.
    ToyFeatureBlock { dim: usize, eta: f64, sign: i8 },
}

impl ClassConditional {
    pub fn kind_name(&self) -> &'static str {
        match self {
            ClassConditional::IsotropicGaussian { .. } => "isotropic gaussian",
            ClassConditional::DiagonalGaussian { .. } => "diagonal gaussian",
            ClassConditional::SphereUniform { .. } => "sphere uniform",
            ClassConditional::HypercubePushforward { .. } => "hypercube pushforward",
            ClassConditional::ToyFeatureBlock { .. } => "toy feature block",
        }
    }

    pub fn support_dim(&self) -> usize {
        match self {
            ClassConditional::IsotropicGaussian { mean, .. } => mean.len(),
            ClassConditional::DiagonalGaussian { mean, .. } => mean.len(),
            ClassConditional::SphereUniform { dim, .. } => *dim,
            ClassConditional::HypercubePushforward { dim } => *dim,
            ClassConditional::ToyFeatureBlock { dim, .. } => *dim,
        }
    }

    pub fn validate(&self) -> Result<(), DistributionError> {
        match self {
            ClassConditional::IsotropicGaussian { mean, scale } => {
                if mean.is_empty() {
                    return Err(DistributionError::BadDimension { min: 1, got: 0 });
                }
                if !(*scale > 0.0) {
                    return Err(DistributionError::NonpositiveScale);
                }
            }
            ClassConditional::DiagonalGaussian { mean, scales } => {
                if mean.is_empty() || mean.len() != scales.len() {
                    return Err(DistributionError::InconsistentConditionals);
                }
                if !scales.iter().all(|s| *s > 0.0) {
                    return Err(DistributionError::NonpositiveScale);
                }
            }
            ClassConditional::SphereUniform { radius, dim } => {
                if *dim < 2 {
                    return Err(DistributionError::BadDimension { min: 2, got: *dim });
                }
                if !(*radius > 0.0) {
                    return Err(DistributionError::NonpositiveScale);
                }
            }
            ClassConditional::HypercubePushforward { dim } => {
                if *dim == 0 {
                    return Err(DistributionError::BadDimension { min: 1, got: 0 });
                }
            }
            ClassConditional::ToyFeatureBlock { dim, eta, sign } => {
                if *dim < 2 {
                    return Err(DistributionError::BadDimension { min: 2, got: *dim });
                }
                if !(*eta > 0.0) || (*sign != 1 && *sign != -1) {
                    return Err(DistributionError::NonpositiveScale);
                }
            }
        }
        Ok(())
    }

    /// Draw one sample from this conditional.
    pub fn sample(&self, rng: &mut RngStream) -> Vec<f64> {
        match self {
            ClassConditional::IsotropicGaussian { mean, scale } => {
                mean.iter().map(|m| m + scale * rng.next_normal()).collect()
            }
            ClassConditional::DiagonalGaussian { mean, scales } => mean
                .iter()
                .zip(scales)
                .map(|(m, s)| m + s * rng.next_normal())
                .collect(),
            ClassConditional::SphereUniform { radius, dim } => {
                sample_sphere_uniform(*radius, *dim, rng)
            }
            ClassConditional::HypercubePushforward { dim } => {
                let z: Vec<f64> = (0..*dim).map(|_| rng.next_normal()).collect();
                hypercube_pushforward(&z)
            }
            ClassConditional::ToyFeatureBlock { dim, eta, sign } => {
                toy_features(*dim, *eta, *sign, rng)
            }
        }
    }
}

/// T2 noise scale attached to a conditional's geometry.
pub fn t2_sigma_of(cond: &ClassConditional) -> f64 {
    match cond {
        ClassConditional::IsotropicGaussian { scale, .. } => *scale,
        ClassConditional::DiagonalGaussian { scales, .. } => {
            scales.iter().fold(0.0f64, |m, s| m.max(*s))
        }
        ClassConditional::SphereUniform { radius, dim } => {
            sphere_t2_sigma(*radius, *dim).expect("validated sphere conditional")
        }
        ClassConditional::HypercubePushforward { .. } => {
            pushforward_sigma((2.0 * std::f64::consts::PI).sqrt().recip(), 1.0)
                .expect("constant Lipschitz factor")
        }
        // Only the unit-variance Gaussian block carries the T2 structure.
        ClassConditional::ToyFeatureBlock { .. } => 1.0,
    }
}

fn toy_features(p: usize, eta: f64, label: i8, rng: &mut RngStream) -> Vec<f64> {
    let y = f64::from(label);
    let mut x = Vec::with_capacity(p);
    x.push(if rng.next_uniform() < 0.7 { y } else { -y });
    for _ in 1..p {
        x.push(eta * y + rng.next_normal());
    }
    x
}

/// Draw one labeled sample of the two-class toy problem: the label is a fair
/// ±1 coin, the first feature copies the label with probability 0.7, and the
/// remaining `p-1` features are `N(η·label, 1)`.
pub fn sample_toy(p: usize, eta: f64, rng: &mut RngStream) -> (Vec<f64>, i8) {
    debug_assert!(p >= 2);
    let label: i8 = if rng.next_uniform() < 0.5 { 1 } else { -1 };
    (toy_features(p, eta, label, rng), label)
}

/// Draw from a Gaussian conditional (isotropic or diagonal).
pub fn sample_gaussian(
    cond: &ClassConditional,
    rng: &mut RngStream,
) -> Result<Vec<f64>, DistributionError> {
    match cond {
        ClassConditional::IsotropicGaussian { .. } | ClassConditional::DiagonalGaussian { .. } => {
            Ok(cond.sample(rng))
        }
        other => Err(DistributionError::KindMismatch {
            expected: "gaussian",
            got: other.kind_name(),
        }),
    }
}

/// Uniform draw on the radius-`r` sphere in ambient dimension `p`, via a
/// normalized Gaussian vector.
pub fn sample_sphere_uniform(r: f64, p: usize, rng: &mut RngStream) -> Vec<f64> {
    debug_assert!(p >= 2);
    loop {
        let z: Vec<f64> = (0..p).map(|_| rng.next_normal()).collect();
        let norm = z.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return z.iter().map(|v| r * v / norm).collect();
        }
        // Astronomically unlikely; redraw keeps the output well-defined.
    }
}

/// The componentwise normal-CDF map onto the unit cube. Applied to a
/// standard Gaussian vector it produces the uniform distribution on
/// `[0,1]^p` and contracts distances by at least `(2π)^{-1/2}`.
pub fn hypercube_pushforward(z: &[f64]) -> Vec<f64> {
    z.iter().map(|&v| std_normal_cdf(v)).collect()
}

/// A labeled mixture: class conditionals plus strictly positive priors
/// summing to one.
#[derive(Debug, Clone)]
pub struct LabeledSampler {
    conditionals: Vec<ClassConditional>,
    priors: Vec<f64>,
}

impl LabeledSampler {
    pub fn new(
        conditionals: Vec<ClassConditional>,
        priors: Vec<f64>,
    ) -> Result<Self, DistributionError> {
        if conditionals.is_empty() || conditionals.len() != priors.len() {
            return Err(DistributionError::InconsistentConditionals);
        }
        let dim = conditionals[0].support_dim();
        for c in &conditionals {
            c.validate()?;
            if c.support_dim() != dim {
                return Err(DistributionError::InconsistentConditionals);
            }
        }
        let sum: f64 = priors.iter().sum();
        if !priors.iter().all(|p| *p > 0.0) || (sum - 1.0).abs() > 1e-12 {
            return Err(DistributionError::BadPriors(sum));
        }
        Ok(LabeledSampler {
            conditionals,
            priors,
        })
    }

    /// Equal-prior constructor.
    pub fn uniform_priors(conditionals: Vec<ClassConditional>) -> Result<Self, DistributionError> {
        let k = conditionals.len().max(1);
        LabeledSampler::new(conditionals, vec![1.0 / k as f64; k])
    }

    pub fn num_classes(&self) -> usize {
        self.conditionals.len()
    }

    pub fn dim(&self) -> usize {
        self.conditionals[0].support_dim()
    }

    pub fn priors(&self) -> &[f64] {
        &self.priors
    }

    pub fn conditional(&self, k: usize) -> Result<&ClassConditional, DistributionError> {
        self.conditionals.get(k).ok_or(DistributionError::BadClass(k))
    }

    /// Draw a labeled sample: class by prior, then the conditional.
    pub fn sample(&self, rng: &mut RngStream) -> (Vec<f64>, usize) {
        let u = rng.next_uniform();
        let mut acc = 0.0;
        let mut k = self.conditionals.len() - 1;
        for (i, p) in self.priors.iter().enumerate() {
            acc += p;
            if u < acc {
                k = i;
                break;
            }
        }
        (self.conditionals[k].sample(rng), k)
    }

    /// Draw from class `k`'s conditional.
    pub fn sample_class(
        &self,
        k: usize,
        rng: &mut RngStream,
    ) -> Result<Vec<f64>, DistributionError> {
        Ok(self.conditional(k)?.sample(rng))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn streams_replay_exactly() {
        let mut a = RngStream::new(7, 3);
        let mut b = RngStream::new(7, 3);
        for _ in 0..100 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
        let mut c = RngStream::new(7, 4);
        let first: Vec<u64> = (0..8).map(|_| RngStream::new(7, 3).next_u64()).collect();
        assert!(first.iter().all(|v| *v == first[0]));
        assert_ne!(RngStream::new(7, 3).next_u64(), c.next_u64());
    }

    #[test]
    fn interleaving_streams_does_not_perturb_draws() {
        let solo: Vec<f64> = {
            let mut r = RngStream::new(11, 0);
            (0..32).map(|_| r.next_normal()).collect()
        };
        let mut r0 = RngStream::new(11, 0);
        let mut r1 = RngStream::new(11, 999);
        let mut interleaved = Vec::new();
        for _ in 0..32 {
            interleaved.push(r0.next_normal());
            let _ = r1.next_normal();
        }
        assert_eq!(solo, interleaved);
    }

    #[test]
    fn uniform_is_strictly_inside_unit_interval() {
        let mut r = RngStream::new(123, 5);
        for _ in 0..100_000 {
            let u = r.next_uniform();
            assert!(u > 0.0 && u < 1.0);
        }
    }

    #[test]
    fn toy_sampler_moments() {
        let p = 4;
        let eta = 0.8;
        let n = 1_000_000usize;
        let mut pos = 0usize;
        let mut agree = 0usize;
        let mut sum_x2 = 0.0;
        let mut count_pos = 0usize;
        for i in 0..n {
            let mut rng = RngStream::new(2024, i as u64);
            let (x, y) = sample_toy(p, eta, &mut rng);
            if y == 1 {
                pos += 1;
                sum_x2 += x[1];
                count_pos += 1;
            }
            if x[0] == f64::from(y) {
                agree += 1;
            }
        }
        // Label is a fair coin.
        let frac_pos = pos as f64 / n as f64;
        assert!((frac_pos - 0.5).abs() < 3.0 * 0.5 / (n as f64).sqrt());
        // First feature copies the label 70% of the time (3-sigma band).
        let frac_agree = agree as f64 / n as f64;
        assert!((frac_agree - 0.7).abs() < 3.0 * (0.7f64 * 0.3).sqrt() / (n as f64).sqrt());
        // Conditional mean of a Gaussian feature is eta (3-sigma CLT band).
        let mean_x2 = sum_x2 / count_pos as f64;
        assert!((mean_x2 - eta).abs() < 3.0 / (count_pos as f64).sqrt());
    }

    #[test]
    fn toy_gaussian_block_skewness_is_small() {
        let n = 1_000_000usize;
        let mut m1 = 0.0;
        let mut m2 = 0.0;
        let mut m3 = 0.0;
        let mut cnt = 0usize;
        for i in 0..n {
            let mut rng = RngStream::new(9, i as u64);
            let (x, y) = sample_toy(3, 0.5, &mut rng);
            if y == 1 {
                let v = x[1] - 0.5;
                m1 += v;
                m2 += v * v;
                m3 += v * v * v;
                cnt += 1;
            }
        }
        let n = cnt as f64;
        let mean = m1 / n;
        let var = m2 / n - mean * mean;
        let skew = (m3 / n - 3.0 * mean * var - mean.powi(3)) / var.powf(1.5);
        assert!(skew.abs() < 3.0 * (6.0 / n).sqrt());
    }

    #[test]
    fn gaussian_sampler_covariance() {
        let cond = ClassConditional::IsotropicGaussian {
            mean: vec![0.0, 0.0],
            scale: 1.0,
        };
        let n = 1_000_000usize;
        let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
        for i in 0..n {
            let mut rng = RngStream::new(31, i as u64);
            let x = sample_gaussian(&cond, &mut rng).unwrap();
            sxx += x[0] * x[0];
            syy += x[1] * x[1];
            sxy += x[0] * x[1];
        }
        let n = n as f64;
        assert!((sxx / n - 1.0).abs() < 0.005);
        assert!((syy / n - 1.0).abs() < 0.005);
        assert!((sxy / n).abs() < 0.005);
    }

    #[test]
    fn gaussian_sampler_rejects_other_kinds() {
        let cond = ClassConditional::SphereUniform { radius: 1.0, dim: 3 };
        let mut rng = RngStream::new(0, 0);
        assert!(matches!(
            sample_gaussian(&cond, &mut rng),
            Err(DistributionError::KindMismatch { .. })
        ));
        let bad = ClassConditional::IsotropicGaussian {
            mean: vec![0.0],
            scale: 0.0,
        };
        assert_eq!(bad.validate(), Err(DistributionError::NonpositiveScale));
    }

    #[test]
    fn sphere_sampler_radius_and_cap_mass() {
        let r = 1.0;
        let n = 1_000_000usize;
        let mut cap = 0usize;
        let theta = std::f64::consts::PI / 3.0;
        let cos_theta = theta.cos();
        for i in 0..n {
            let mut rng = RngStream::new(77, i as u64);
            let x = sample_sphere_uniform(r, 3, &mut rng);
            let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((norm - r).abs() < 1e-12);
            if x[2] >= cos_theta {
                cap += 1;
            }
        }
        // Closed form on the 2-sphere: (1-cos θ)/2 = 0.25.
        let mass = cap as f64 / n as f64;
        assert!((mass - 0.25).abs() < 3.0 * (0.25f64 * 0.75).sqrt() / (n as f64).sqrt());
    }

    #[test]
    fn sphere_sampler_rotation_symmetry() {
        // Cap masses around the first and last axes agree within MC bands,
        // and the sample mean vanishes by symmetry.
        let n = 400_000usize;
        let p = 10;
        let cos_t = 0.3f64;
        let (mut c_first, mut c_last) = (0usize, 0usize);
        let mut mean = vec![0.0; p];
        for i in 0..n {
            let mut rng = RngStream::new(5150, i as u64);
            let x = sample_sphere_uniform(1.0, p, &mut rng);
            if x[0] >= cos_t {
                c_first += 1;
            }
            if x[p - 1] >= cos_t {
                c_last += 1;
            }
            for (m, v) in mean.iter_mut().zip(&x) {
                *m += v;
            }
        }
        let (f, l) = (c_first as f64 / n as f64, c_last as f64 / n as f64);
        let band = 6.0 * (f.max(l) * (1.0 - f.min(l)) / n as f64).sqrt();
        assert!((f - l).abs() < band, "first {f} last {l} band {band}");
        for m in &mean {
            assert!((m / n as f64).abs() < 3.0 / (n as f64).sqrt());
        }
    }

    #[test]
    fn hypercube_pushforward_examples() {
        let t = hypercube_pushforward(&[0.0, 0.0, 0.0]);
        assert_eq!(t, vec![0.5, 0.5, 0.5]);
        let t = hypercube_pushforward(&[2.0, -1.0]);
        assert_abs_diff_eq!(t[0], 0.9772498680518208, epsilon = 1e-15);
    }

    #[test]
    fn hypercube_pushforward_is_lipschitz() {
        let lip = (2.0 * std::f64::consts::PI).sqrt().recip();
        let mut rng = RngStream::new(404, 0);
        for _ in 0..10_000 {
            let p = 1 + (rng.next_u64() % 6) as usize;
            let z: Vec<f64> = (0..p).map(|_| 3.0 * rng.next_normal()).collect();
            let w: Vec<f64> = (0..p).map(|_| 3.0 * rng.next_normal()).collect();
            let tz = hypercube_pushforward(&z);
            let tw = hypercube_pushforward(&w);
            let num: f64 = tz
                .iter()
                .zip(&tw)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            let den: f64 = z
                .iter()
                .zip(&w)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            assert!(num <= lip * den + 1e-12);
        }
    }

    #[test]
    fn t2_sigma_dispatch() {
        assert_abs_diff_eq!(
            t2_sigma_of(&ClassConditional::SphereUniform { radius: 1.0, dim: 501 }),
            0.044721359549995794,
            epsilon = 1e-15
        );
        assert_eq!(
            t2_sigma_of(&ClassConditional::IsotropicGaussian {
                mean: vec![0.0; 3],
                scale: 2.0
            }),
            2.0
        );
        assert_eq!(
            t2_sigma_of(&ClassConditional::DiagonalGaussian {
                mean: vec![0.0; 3],
                scales: vec![0.5, 1.5, 1.0]
            }),
            1.5
        );
        assert_abs_diff_eq!(
            t2_sigma_of(&ClassConditional::HypercubePushforward { dim: 8 }),
            0.3989422804014327,
            epsilon = 1e-15
        );
        assert_eq!(
            t2_sigma_of(&ClassConditional::ToyFeatureBlock {
                dim: 100,
                eta: 0.1,
                sign: 1
            }),
            1.0
        );
    }

    #[test]
    fn labeled_sampler_validation_and_mixture() {
        let conds = vec![
            ClassConditional::IsotropicGaussian {
                mean: vec![1.0, 0.0],
                scale: 1.0,
            },
            ClassConditional::IsotropicGaussian {
                mean: vec![-1.0, 0.0],
                scale: 1.0,
            },
        ];
        assert!(LabeledSampler::new(conds.clone(), vec![0.5, 0.6]).is_err());
        assert!(LabeledSampler::new(conds.clone(), vec![1.0, 0.0]).is_err());
        let s = LabeledSampler::new(conds, vec![0.3, 0.7]).unwrap();
        let n = 200_000usize;
        let mut k0 = 0usize;
        for i in 0..n {
            let mut rng = RngStream::new(8, i as u64);
            let (_, k) = s.sample(&mut rng);
            if k == 0 {
                k0 += 1;
            }
        }
        let f = k0 as f64 / n as f64;
        assert!((f - 0.3).abs() < 3.0 * (0.3f64 * 0.7).sqrt() / (n as f64).sqrt());
        assert!(s.sample_class(2, &mut RngStream::new(0, 0)).is_err());
    }
}
