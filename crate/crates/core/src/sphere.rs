//! Directional statistics on the unit hypersphere: unit vectors, von
//! Mises-Fisher densities and mixtures, sampling, concentration estimation
//! and tangent-space construction.

use std::ops::Deref;

use crate::error::{Error, Result};
use crate::rng::RandomSource;
use crate::scalar::{dot, norm, Real};
use crate::special::{ln_gamma, log_bessel_i_ratio, logsumexp};

/// Cap reported when the mean resultant length saturates.
pub const KAPPA_MAX: f64 = 1e6;

const TANGENT_RETRIES: usize = 16;
const TANGENT_MIN_RESIDUAL: f64 = 1e-8;

/// A point on `S^{d-1}` with `d >= 2`.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitVector<T> {
    coords: Vec<T>,
}

impl<T: Real> UnitVector<T> {
    /// Wraps `coords` after checking the norm against [`Real::unit_tolerance`].
    pub fn new(coords: Vec<T>) -> Result<Self> {
        check_dim(coords.len())?;
        let n = norm(&coords);
        if !n.is_finite() || (n - T::one()).abs() > T::unit_tolerance() {
            return Err(Error::Degenerate(format!("vector norm {n} is not 1")));
        }
        Ok(Self { coords })
    }

    /// Wraps coordinates known to be unit norm by construction.
    pub(crate) fn from_raw(coords: Vec<T>) -> Self {
        debug_assert!(coords.len() >= 2);
        Self { coords }
    }

    /// Standard basis vector `e_axis`.
    pub fn axis(dim: usize, axis: usize) -> Result<Self> {
        check_dim(dim)?;
        if axis >= dim {
            return Err(Error::Domain(format!("axis {axis} out of range for dimension {dim}")));
        }
        let mut coords = vec![T::zero(); dim];
        coords[axis] = T::one();
        Ok(Self { coords })
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.coords
    }

    pub fn into_vec(self) -> Vec<T> {
        self.coords
    }

    pub fn dot(&self, other: &[T]) -> T {
        dot(&self.coords, other)
    }

    pub fn neg(&self) -> Self {
        Self { coords: self.coords.iter().map(|&c| -c).collect() }
    }
}

impl<T> Deref for UnitVector<T> {
    type Target = [T];
    fn deref(&self) -> &[T] {
        &self.coords
    }
}

impl<T> AsRef<[T]> for UnitVector<T> {
    fn as_ref(&self) -> &[T] {
        &self.coords
    }
}

fn check_dim(d: usize) -> Result<()> {
    if d < 2 {
        return Err(Error::Domain(format!("sphere dimension must be >= 2, got {d}")));
    }
    Ok(())
}

/// Scales `v` to unit norm.
pub fn normalize<T: Real>(v: &[T]) -> Result<UnitVector<T>> {
    check_dim(v.len())?;
    let n = norm(v);
    if !n.is_finite() {
        return Err(Error::Numeric("normalize input".into()));
    }
    if n == T::zero() {
        return Err(Error::Degenerate("cannot normalize the zero vector".into()));
    }
    Ok(UnitVector { coords: v.iter().map(|&c| c / n).collect() })
}

/// One class-conditional vMF component.
#[derive(Debug, Clone, PartialEq)]
pub struct VmfComponent<T> {
    pub mu: UnitVector<T>,
    pub kappa: T,
}

impl<T: Real> VmfComponent<T> {
    pub fn new(mu: UnitVector<T>, kappa: T) -> Result<Self> {
        if !(kappa >= T::zero()) || !kappa.is_finite() {
            return Err(Error::Domain(format!("concentration {kappa} must be finite and >= 0")));
        }
        Ok(Self { mu, kappa })
    }

    pub fn dim(&self) -> usize {
        self.mu.dim()
    }

    pub fn log_density(&self, z: &[T]) -> Result<T> {
        vmf_log_density(self, z)
    }
}

/// Prior-weighted mixture of vMF components, one per class.
#[derive(Debug, Clone, PartialEq)]
pub struct VmfMixture<T> {
    components: Vec<VmfComponent<T>>,
    priors: Vec<T>,
    log_priors: Vec<T>,
}

impl<T: Real> VmfMixture<T> {
    pub fn new(components: Vec<VmfComponent<T>>, priors: Vec<T>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::Spec("mixture needs at least one component".into()));
        }
        if components.len() != priors.len() {
            return Err(Error::Shape { expected: components.len(), got: priors.len() });
        }
        let d = components[0].dim();
        for c in &components {
            if c.dim() != d {
                return Err(Error::Shape { expected: d, got: c.dim() });
            }
        }
        if priors.iter().any(|&p| !(p > T::zero())) {
            return Err(Error::Spec("all mixture priors must be > 0".into()));
        }
        let total: T = priors.iter().copied().sum();
        if (total - T::one()).abs() > T::unit_tolerance() {
            return Err(Error::Spec(format!("mixture priors sum to {total}, not 1")));
        }
        let log_priors = priors.iter().map(|p| p.ln()).collect();
        Ok(Self { components, priors, log_priors })
    }

    /// Priors `N_y / N` from per-class counts.
    pub fn from_counts(components: Vec<VmfComponent<T>>, counts: &[usize]) -> Result<Self> {
        let n: usize = counts.iter().sum();
        if n == 0 {
            return Err(Error::Spec("class counts are all zero".into()));
        }
        let priors = counts.iter().map(|&c| T::from_usize_lossy(c) / T::from_usize_lossy(n)).collect();
        Self::new(components, priors)
    }

    pub fn uniform(components: Vec<VmfComponent<T>>) -> Result<Self> {
        let k = T::from_usize_lossy(components.len().max(1));
        let priors = vec![T::one() / k; components.len()];
        Self::new(components, priors)
    }

    pub fn num_classes(&self) -> usize {
        self.components.len()
    }

    pub fn dim(&self) -> usize {
        self.components[0].dim()
    }

    pub fn components(&self) -> &[VmfComponent<T>] {
        &self.components
    }

    pub fn component(&self, y: usize) -> &VmfComponent<T> {
        &self.components[y]
    }

    pub fn priors(&self) -> &[T] {
        &self.priors
    }

    pub fn log_priors(&self) -> &[T] {
        &self.log_priors
    }

    pub fn log_density(&self, z: &[T]) -> Result<T> {
        mixture_log_density(self, z)
    }
}

/// `log` of the inverse surface area of `S^{d-1}`.
pub fn log_inverse_sphere_area<T: Real>(d: usize) -> T {
    let half_d = T::from_usize_lossy(d) * T::lit(0.5);
    -(T::lit(2.0).ln() + half_d * T::PI().ln() - ln_gamma(half_d))
}

/// `log C_d(kappa)` where `C_d(kappa) = kappa^{d/2-1} / ((2 pi)^{d/2} I_{d/2-1}(kappa))`.
///
/// At `kappa = 0` this is the continuous limit, the log inverse surface area.
pub fn log_norm_const<T: Real>(d: usize, kappa: T) -> Result<T> {
    log_norm_const_with_slope(d, kappa).map(|(v, _)| v)
}

/// `log C_d(kappa)` together with its derivative in `kappa`, which is
/// `-I_{d/2}(kappa) / I_{d/2-1}(kappa)` (minus the mean resultant length).
pub fn log_norm_const_with_slope<T: Real>(d: usize, kappa: T) -> Result<(T, T)> {
    check_dim(d)?;
    if !(kappa >= T::zero()) {
        return Err(Error::Domain(format!("concentration {kappa} must be >= 0")));
    }
    if kappa == T::zero() {
        return Ok((log_inverse_sphere_area(d), T::zero()));
    }
    let half_d = T::from_usize_lossy(d) * T::lit(0.5);
    let nu = half_d - T::one();
    let (log_i, ratio) = log_bessel_i_ratio(nu, kappa)?;
    let value = nu * kappa.ln() - half_d * T::TAU().ln() - log_i;
    Ok((value, -ratio))
}

/// `log C_d(kappa) + kappa mu^T z`.
pub fn vmf_log_density<T: Real>(comp: &VmfComponent<T>, z: &[T]) -> Result<T> {
    if z.len() != comp.dim() {
        return Err(Error::Shape { expected: comp.dim(), got: z.len() });
    }
    Ok(log_norm_const(comp.dim(), comp.kappa)? + comp.kappa * comp.mu.dot(z))
}

/// Log of the prior-weighted mixture density, via max-shifted log-sum-exp.
pub fn mixture_log_density<T: Real>(mix: &VmfMixture<T>, z: &[T]) -> Result<T> {
    let terms = mix
        .components
        .iter()
        .zip(&mix.log_priors)
        .map(|(c, &lp)| vmf_log_density(c, z).map(|v| v + lp))
        .collect::<Result<Vec<T>>>()?;
    Ok(logsumexp(&terms))
}

/// Uniform unit tangent direction at `mu`: Gaussian noise, projected off `mu`
/// (twice, to clean up rounding) and renormalized.
pub fn tangent_orthonormal<T: Real>(mu: &UnitVector<T>, rng: &mut RandomSource) -> Result<UnitVector<T>> {
    let d = mu.dim();
    for _ in 0..TANGENT_RETRIES {
        let mut v: Vec<T> = (0..d).map(|_| T::lit(rng.normal())).collect();
        for _ in 0..2 {
            let proj = mu.dot(&v);
            for (vi, &mi) in v.iter_mut().zip(mu.iter()) {
                *vi -= proj * mi;
            }
        }
        let n = norm(&v);
        if n < T::lit(TANGENT_MIN_RESIDUAL) {
            continue;
        }
        for vi in v.iter_mut() {
            *vi /= n;
        }
        return Ok(UnitVector::from_raw(v));
    }
    Err(Error::TangentRetry(TANGENT_RETRIES))
}

/// `t mu + sqrt(1 - t^2) v` for a unit tangent `v`.
pub(crate) fn compose_on_sphere<T: Real>(mu: &[T], t: T, tangent: &[T]) -> Vec<T> {
    let s = (T::one() - t * t).max(T::zero()).sqrt();
    mu.iter().zip(tangent).map(|(&m, &v)| t * m + s * v).collect()
}

/// Draws the cosine `w = mu^T z` of a vMF sample (Wood's rejection scheme).
pub(crate) fn sample_vmf_cosine(dim: usize, kappa: f64, rng: &mut RandomSource) -> f64 {
    let m1 = (dim - 1) as f64;
    // b = (-2k + sqrt(4k^2 + (m-1)^2)) / (m-1), rationalized to avoid cancellation.
    let root = (4.0 * kappa * kappa + m1 * m1).sqrt();
    let b = m1 / (2.0 * kappa + root);
    let x0 = (1.0 - b) / (1.0 + b);
    let c = kappa * x0 + m1 * (1.0 - x0 * x0).ln();
    loop {
        let beta = rng.beta(0.5 * m1, 0.5 * m1);
        let w = (1.0 - (1.0 + b) * beta) / (1.0 - (1.0 - b) * beta);
        let u = rng.uniform();
        if kappa * w + m1 * (1.0 - x0 * w).ln() - c >= u.ln() {
            return w.clamp(-1.0, 1.0);
        }
    }
}

/// `n` i.i.d. draws from a vMF component.
pub fn sample_vmf<T: Real>(comp: &VmfComponent<T>, n: usize, rng: &mut RandomSource) -> Result<Vec<UnitVector<T>>> {
    let kappa = comp.kappa.as_f64();
    let d = comp.dim();
    (0..n)
        .map(|_| {
            let w = T::lit(sample_vmf_cosine(d, kappa, rng));
            let v = tangent_orthonormal(&comp.mu, rng)?;
            Ok(UnitVector::from_raw(compose_on_sphere(&comp.mu, w, &v)))
        })
        .collect()
}

/// `n` uniform draws on `S^{d-1}`.
pub fn sample_uniform_sphere<T: Real>(dim: usize, n: usize, rng: &mut RandomSource) -> Result<Vec<UnitVector<T>>> {
    check_dim(dim)?;
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let v: Vec<T> = (0..dim).map(|_| T::lit(rng.normal())).collect();
        if let Ok(u) = normalize(&v) {
            out.push(u);
        }
    }
    Ok(out)
}

/// Sample mean of unit vectors: its direction and length `r_bar`.
#[derive(Debug, Clone)]
pub struct MeanResultant<T> {
    pub mean: Vec<T>,
    pub length: T,
}

impl<T: Real> MeanResultant<T> {
    pub fn direction(&self) -> Result<UnitVector<T>> {
        normalize(&self.mean)
    }
}

pub fn mean_resultant<T: Real, S: AsRef<[T]>>(samples: &[S]) -> Result<MeanResultant<T>> {
    let first = samples.first().ok_or_else(|| Error::Degenerate("no samples".into()))?;
    let d = first.as_ref().len();
    let mut mean = vec![T::zero(); d];
    for s in samples {
        let s = s.as_ref();
        if s.len() != d {
            return Err(Error::Shape { expected: d, got: s.len() });
        }
        for (m, &x) in mean.iter_mut().zip(s) {
            *m += x;
        }
    }
    let n = T::from_usize_lossy(samples.len());
    for m in mean.iter_mut() {
        *m /= n;
    }
    let length = norm(&mean);
    Ok(MeanResultant { mean, length })
}

/// Closed-form concentration estimate `r(d - r^2) / (1 - r^2)` from the mean
/// resultant length `r`.
///
/// Fails with [`Error::Saturated`] (carrying [`KAPPA_MAX`]) when
/// `r >= 1 - 1e-12`.
pub fn estimate_kappa<T: Real, S: AsRef<[T]>>(samples: &[S]) -> Result<T> {
    if samples.len() < 2 {
        return Err(Error::Degenerate(format!("need >= 2 samples, got {}", samples.len())));
    }
    let mr = mean_resultant(samples)?;
    kappa_from_resultant(mr.length, samples[0].as_ref().len())
}

pub fn kappa_from_resultant<T: Real>(r: T, dim: usize) -> Result<T> {
    if r >= T::one() - T::lit(1e-12) {
        return Err(Error::Saturated { resultant: r.as_f64(), capped: KAPPA_MAX });
    }
    let d = T::from_usize_lossy(dim);
    let r2 = r * r;
    Ok((r * (d - r2) / (T::one() - r2)).max(T::zero()))
}

/// Mean direction and concentration fitted to one class's samples.
pub fn fit_vmf<T: Real, S: AsRef<[T]>>(samples: &[S]) -> Result<VmfComponent<T>> {
    let mr = mean_resultant(samples)?;
    let kappa = match kappa_from_resultant(mr.length, mr.mean.len()) {
        Ok(k) => k,
        Err(Error::Saturated { capped, .. }) => T::lit(capped),
        Err(e) => return Err(e),
    };
    VmfComponent::new(mr.direction()?, kappa)
}
