//! Geometry-guided virtual outlier synthesis.
//!
//! For a vMF class with concentration `kappa` in `d` dimensions the scaled
//! displacement `xi = 2 kappa (1 - mu^T z)` is approximately chi-square with
//! `d - 1` degrees of freedom. Outliers are placed by drawing `xi` from a band
//! in the upper tail of that law, mapping it back to a cosine
//! `t = 1 - xi / (2 kappa)`, and composing `z = t mu + sqrt(1 - t^2) v` with a
//! uniform tangent direction `v`.

use crate::error::{Error, Result};
use crate::rng::RandomSource;
use crate::scalar::Real;
use crate::special::chi2_cdf;
use crate::sphere::{compose_on_sphere, sample_vmf_cosine, tangent_orthonormal, UnitVector, VmfMixture};

/// Exact moments of `chi2_{d-1}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Chi2Stats<T> {
    pub dof: usize,
    pub mean: T,
    pub std: T,
}

pub fn chi2_stats<T: Real>(dim: usize) -> Result<Chi2Stats<T>> {
    if dim < 2 {
        return Err(Error::Domain(format!("feature dimension must be >= 2, got {dim}")));
    }
    let dof = dim - 1;
    let mean = T::from_usize_lossy(dof);
    Ok(Chi2Stats { dof, mean, std: (mean * T::lit(2.0)).sqrt() })
}

/// Displacement band `[mean + lo_sigma * std, mean + hi_sigma * std]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnnulusSpec<T> {
    lo_sigma: T,
    hi_sigma: T,
}

impl<T: Real> AnnulusSpec<T> {
    pub fn new(lo_sigma: T, hi_sigma: T) -> Result<Self> {
        if !(lo_sigma >= T::zero() && lo_sigma < hi_sigma && hi_sigma.is_finite()) {
            return Err(Error::Spec(format!("annulus needs 0 <= lo < hi, got ({lo_sigma}, {hi_sigma})")));
        }
        Ok(Self { lo_sigma, hi_sigma })
    }

    pub fn lo_sigma(&self) -> T {
        self.lo_sigma
    }

    pub fn hi_sigma(&self) -> T {
        self.hi_sigma
    }

    /// Displacement interval for the given chi-square moments.
    pub fn bounds(&self, stats: &Chi2Stats<T>) -> (T, T) {
        (stats.mean + self.lo_sigma * stats.std, stats.mean + self.hi_sigma * stats.std)
    }
}

impl<T: Real> Default for AnnulusSpec<T> {
    fn default() -> Self {
        Self { lo_sigma: T::lit(2.0), hi_sigma: T::lit(3.0) }
    }
}

/// Which concentration drives the displacement-to-cosine map.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum AnchorKappa<T> {
    /// Each class uses its own (estimated) concentration.
    #[default]
    PerClass,
    /// One shared value for every class.
    Fixed(T),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthesizedOutlier<T> {
    pub vector: UnitVector<T>,
    pub anchor_class: usize,
    pub similarity: T,
    pub displacement: T,
}

pub fn sample_displacement<T: Real>(stats: &Chi2Stats<T>, annulus: &AnnulusSpec<T>, rng: &mut RandomSource) -> T {
    let (lo, hi) = annulus.bounds(stats);
    T::lit(rng.uniform_in(lo.as_f64(), hi.as_f64()))
}

/// `clamp(1 - xi / (2 kappa), -1, 1)`.
pub fn displacement_to_similarity<T: Real>(xi: T, kappa: T) -> Result<T> {
    if !(kappa > T::zero()) {
        return Err(Error::Domain(format!("anchor concentration {kappa} must be > 0")));
    }
    if !(xi >= T::zero()) {
        return Err(Error::Domain(format!("displacement {xi} must be >= 0")));
    }
    Ok((T::one() - xi / (T::lit(2.0) * kappa)).max(-T::one()).min(T::one()))
}

/// Unit vector at cosine `t` from `mu_k` along a fresh uniform tangent.
pub fn synthesize_outlier<T: Real>(mu_k: &UnitVector<T>, t: T, rng: &mut RandomSource) -> Result<UnitVector<T>> {
    if !(t >= -T::one() && t <= T::one()) {
        return Err(Error::Domain(format!("similarity {t} outside [-1, 1]")));
    }
    let v = tangent_orthonormal(mu_k, rng)?;
    Ok(UnitVector::from_raw(compose_on_sphere(mu_k, t, &v)))
}

/// `per_class` outliers for every class, each anchored on its class mean
/// with that class's concentration.
pub fn synthesize_balanced_batch<T: Real>(
    mix: &VmfMixture<T>,
    per_class: usize,
    annulus: &AnnulusSpec<T>,
    rng: &mut RandomSource,
) -> Result<Vec<SynthesizedOutlier<T>>> {
    synthesize_balanced_batch_with(mix, per_class, annulus, AnchorKappa::PerClass, rng)
}

pub fn synthesize_balanced_batch_with<T: Real>(
    mix: &VmfMixture<T>,
    per_class: usize,
    annulus: &AnnulusSpec<T>,
    anchor: AnchorKappa<T>,
    rng: &mut RandomSource,
) -> Result<Vec<SynthesizedOutlier<T>>> {
    if per_class == 0 {
        return Err(Error::Spec("outliers per class must be >= 1".into()));
    }
    let stats = chi2_stats::<T>(mix.dim())?;
    for (y, c) in mix.components().iter().enumerate() {
        let kappa = match anchor {
            AnchorKappa::PerClass => c.kappa,
            AnchorKappa::Fixed(k) => k,
        };
        if !(kappa > T::zero()) {
            return Err(Error::Domain(format!("class {y} has concentration {kappa}; synthesis needs > 0")));
        }
    }
    let mut out = Vec::with_capacity(per_class * mix.num_classes());
    for (y, c) in mix.components().iter().enumerate() {
        let kappa = match anchor {
            AnchorKappa::PerClass => c.kappa,
            AnchorKappa::Fixed(k) => k,
        };
        for _ in 0..per_class {
            let xi = sample_displacement(&stats, annulus, rng);
            let t = displacement_to_similarity(xi, kappa)?;
            let vector = synthesize_outlier(&c.mu, t, rng)?;
            out.push(SynthesizedOutlier { vector, anchor_class: y, similarity: t, displacement: xi });
        }
    }
    Ok(out)
}

/// Cosine interval `[1 - hi/(2 kappa), 1 - lo/(2 kappa)]` that unclamped
/// outliers of a class with concentration `kappa` fall into.
pub fn predicted_similarity_interval<T: Real>(dim: usize, kappa: T, annulus: &AnnulusSpec<T>) -> Result<(T, T)> {
    let stats = chi2_stats::<T>(dim)?;
    let (lo, hi) = annulus.bounds(&stats);
    let two_k = T::lit(2.0) * kappa;
    Ok((T::one() - hi / two_k, T::one() - lo / two_k))
}

/// Kolmogorov-Smirnov comparison of sampled displacements with `chi2_{d-1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct KsReport {
    pub dim: usize,
    pub kappa: f64,
    pub samples: usize,
    pub ks: f64,
    /// Set when `d < 8` or `kappa < 10 d`, outside the high-concentration regime.
    pub regime_warning: bool,
}

/// Draws `n` vMF samples around a fixed pole, computes
/// `xi_i = 2 kappa (1 - mu^T z_i)` and returns the KS distance between their
/// empirical CDF and the `chi2_{d-1}` CDF.
pub fn verify_chi2_equivalence(dim: usize, kappa: f64, n: usize, rng: &mut RandomSource) -> Result<KsReport> {
    if n == 0 {
        return Err(Error::Domain("need at least one sample".into()));
    }
    if dim < 2 {
        return Err(Error::Domain(format!("dimension must be >= 2, got {dim}")));
    }
    if !(kappa > 0.0) || !kappa.is_finite() {
        return Err(Error::Domain(format!("concentration {kappa} must be finite and > 0")));
    }
    let regime_warning = dim < 8 || kappa < 10.0 * dim as f64;
    // Only the cosine matters for xi; the tangent completion is irrelevant here.
    let mut xi: Vec<f64> = (0..n).map(|_| 2.0 * kappa * (1.0 - sample_vmf_cosine(dim, kappa, rng))).collect();
    xi.sort_by(|a, b| a.total_cmp(b));
    let ks = ks_statistic(&xi, |x| chi2_cdf(x, dim - 1))?;
    Ok(KsReport { dim, kappa, samples: n, ks, regime_warning })
}

/// One-sample KS distance of sorted data against a reference CDF.
pub fn ks_statistic<F>(sorted: &[f64], cdf: F) -> Result<f64>
where
    F: Fn(f64) -> Result<f64>,
{
    let n = sorted.len() as f64;
    let mut d = 0.0f64;
    for (i, &x) in sorted.iter().enumerate() {
        let f = cdf(x)?;
        d = d.max(f - i as f64 / n).max((i + 1) as f64 / n - f);
    }
    Ok(d)
}
