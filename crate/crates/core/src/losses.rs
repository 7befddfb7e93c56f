//! Training objective: energy score, the vMF contrastive loss with its
//! in-distribution and synthesized-outlier terms, prior-adjusted
//! temperature-scaled cross-entropy, and the energy polarization loss. Every
//! loss returns its value together with analytic gradients.
//!
//! The in-distribution weight is
//! `Psi(z, j) = pi_j Z(kt_y) Z(kappa_j) / (pi_y Z(kappa_j) Z(kt_j))` and the
//! outlier weight is
//! `Omega(z, m) = Z(kt_y) Z(kappa_k) / (pi_y Z(kappa_k) Z(kt_m))`, with
//! `kt_j = |kappa_j mu_j + z / tau|` and `kt_m = |z_m + z| / tau`. The
//! `Z(kappa_j)` and `Z(kappa_k)` factors cancel; only the reduced forms are
//! evaluated, in the log domain.

use crate::error::{Error, Result};
use crate::gos::SynthesizedOutlier;
use crate::rng::RandomSource;
use crate::scalar::{norm, Real};
use crate::special::{logsumexp, sigmoid, softmax_into, softplus};
use crate::sphere::{log_norm_const_with_slope, VmfComponent, VmfMixture};

/// Scalar hyperparameters of the joint objective
/// `dgs_weight * L_dgs + alpha * L_tla + beta * L_epr`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights<T> {
    /// Contrastive temperature inside the dynamic concentrations.
    pub tau: T,
    /// Logit temperature of the adjusted cross-entropy.
    pub epsilon: T,
    pub alpha: T,
    pub beta: T,
    /// Weight on the contrastive term; 1 in the standard objective, 0 to ablate it.
    pub dgs_weight: T,
    /// Energy temperature fed to the polarization head; defaults to `epsilon`.
    pub epr_temperature: Option<T>,
}

impl<T: Real> Default for LossWeights<T> {
    fn default() -> Self {
        Self {
            tau: T::lit(0.1),
            epsilon: T::one(),
            alpha: T::one(),
            beta: T::lit(0.1),
            dgs_weight: T::one(),
            epr_temperature: None,
        }
    }
}

impl<T: Real> LossWeights<T> {
    pub fn validate(&self) -> Result<()> {
        let temps = [("tau", self.tau), ("epsilon", self.epsilon), ("epr_temperature", self.epr_temperature())];
        for (name, v) in temps {
            if !(v > T::zero()) || !v.is_finite() {
                return Err(Error::Spec(format!("{name} must be finite and > 0, got {v}")));
            }
        }
        let weights = [("alpha", self.alpha), ("beta", self.beta), ("dgs_weight", self.dgs_weight)];
        for (name, v) in weights {
            if !(v >= T::zero()) || !v.is_finite() {
                return Err(Error::Spec(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }

    pub fn epr_temperature(&self) -> T {
        self.epr_temperature.unwrap_or(self.epsilon)
    }
}

/// Scalar-in, scalar-out perceptron with one ReLU hidden layer, mapping an
/// energy to a polarization logit.
#[derive(Debug, Clone, PartialEq)]
pub struct EnergyHead<T> {
    pub w1: Vec<T>,
    pub b1: Vec<T>,
    pub w2: Vec<T>,
    pub b2: T,
}

impl<T: Real> EnergyHead<T> {
    /// Hidden layer uniform on `[-1, 1]` (fan-in 1), output layer zeroed.
    pub fn new(hidden: usize, rng: &mut RandomSource) -> Self {
        let w1 = (0..hidden).map(|_| T::lit(rng.uniform_in(-1.0, 1.0))).collect();
        let b1 = (0..hidden).map(|_| T::lit(rng.uniform_in(-1.0, 1.0))).collect();
        Self { w1, b1, w2: vec![T::zero(); hidden], b2: T::zero() }
    }

    pub fn zeros(hidden: usize) -> Self {
        Self { w1: vec![T::zero(); hidden], b1: vec![T::zero(); hidden], w2: vec![T::zero(); hidden], b2: T::zero() }
    }

    pub fn hidden(&self) -> usize {
        self.w1.len()
    }

    pub fn forward(&self, e: T) -> T {
        self.w1
            .iter()
            .zip(&self.b1)
            .zip(&self.w2)
            .fold(self.b2, |acc, ((&a, &b), &c)| acc + c * (a * e + b).max(T::zero()))
    }

    /// Output and its derivative with respect to the input energy.
    pub fn forward_with_slope(&self, e: T) -> (T, T) {
        let mut out = self.b2;
        let mut slope = T::zero();
        for ((&a, &b), &c) in self.w1.iter().zip(&self.b1).zip(&self.w2) {
            let pre = a * e + b;
            if pre > T::zero() {
                out += c * pre;
                slope += c * a;
            }
        }
        (out, slope)
    }

    /// Adds `upstream * d(out)/d(params)` at input `e` into `grads`.
    pub fn accumulate_param_grad(&self, e: T, upstream: T, grads: &mut EnergyHead<T>) {
        for h in 0..self.hidden() {
            let pre = self.w1[h] * e + self.b1[h];
            if pre > T::zero() {
                grads.w2[h] += upstream * pre;
                grads.w1[h] += upstream * self.w2[h] * e;
                grads.b1[h] += upstream * self.w2[h];
            }
        }
        grads.b2 += upstream;
    }

    pub fn is_finite(&self) -> bool {
        self.b2.is_finite() && self.w1.iter().chain(&self.b1).chain(&self.w2).all(|v| v.is_finite())
    }
}

fn check_finite<T: Real>(xs: &[T], what: &str) -> Result<()> {
    if xs.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::Numeric(what.to_string()))
    }
}

/// `-T log sum_j exp(logit_j / T)`.
pub fn energy_score<T: Real>(logits: &[T], temperature: T) -> Result<T> {
    energy_with_grad(logits, temperature).map(|(e, _)| e)
}

/// Energy and its gradient `-softmax(logits / T)` with respect to the logits.
pub fn energy_with_grad<T: Real>(logits: &[T], temperature: T) -> Result<(T, Vec<T>)> {
    if !(temperature > T::zero()) {
        return Err(Error::Domain(format!("temperature {temperature} must be > 0")));
    }
    check_finite(logits, "logits")?;
    let scaled: Vec<T> = logits.iter().map(|&l| l / temperature).collect();
    let mut grad = vec![T::zero(); logits.len()];
    let lse = softmax_into(&scaled, &mut grad);
    for g in grad.iter_mut() {
        *g = -*g;
    }
    Ok((-temperature * lse, grad))
}

/// `|kappa_j mu_j + z / tau|`.
pub fn dynamic_kappa_id<T: Real>(comp: &VmfComponent<T>, z: &[T], tau: T) -> T {
    let mut acc = T::zero();
    for (&m, &x) in comp.mu.iter().zip(z) {
        let v = comp.kappa * m + x / tau;
        acc += v * v;
    }
    acc.sqrt()
}

/// `|z_gos + z| / tau`.
pub fn dynamic_kappa_gos<T: Real>(z_gos: &[T], z: &[T], tau: T) -> T {
    let mut acc = T::zero();
    for (&a, &b) in z_gos.iter().zip(z) {
        acc += (a + b) * (a + b);
    }
    acc.sqrt() / tau
}

fn check_query<T: Real>(mix: &VmfMixture<T>, z: &[T], y: usize, tau: T) -> Result<()> {
    if z.len() != mix.dim() {
        return Err(Error::Shape { expected: mix.dim(), got: z.len() });
    }
    if y >= mix.num_classes() {
        return Err(Error::Domain(format!("class {y} out of range for {} classes", mix.num_classes())));
    }
    if !(tau > T::zero()) {
        return Err(Error::Domain(format!("tau {tau} must be > 0")));
    }
    Ok(())
}

/// `log Psi(z, j) = log pi_j - log pi_y + log Z(kt_y) - log Z(kt_j)`.
pub fn psi_id<T: Real>(mix: &VmfMixture<T>, z: &[T], y: usize, j: usize, tau: T) -> Result<T> {
    check_query(mix, z, y, tau)?;
    if j >= mix.num_classes() {
        return Err(Error::Domain(format!("class {j} out of range")));
    }
    if j == y {
        return Ok(T::zero());
    }
    let d = mix.dim();
    let log_z_y = log_norm_const_with_slope(d, dynamic_kappa_id(mix.component(y), z, tau))?.0;
    let log_z_j = log_norm_const_with_slope(d, dynamic_kappa_id(mix.component(j), z, tau))?.0;
    Ok(mix.log_priors()[j] - mix.log_priors()[y] + log_z_y - log_z_j)
}

/// `log Omega(z, m) = -log pi_y + log Z(kt_y) - log Z(kt_m)`.
pub fn omega_ood<T: Real>(
    mix: &VmfMixture<T>,
    z: &[T],
    y: usize,
    outlier: &SynthesizedOutlier<T>,
    tau: T,
) -> Result<T> {
    check_query(mix, z, y, tau)?;
    if outlier.vector.dim() != z.len() {
        return Err(Error::Shape { expected: z.len(), got: outlier.vector.dim() });
    }
    let d = mix.dim();
    let log_z_y = log_norm_const_with_slope(d, dynamic_kappa_id(mix.component(y), z, tau))?.0;
    let log_z_m = log_norm_const_with_slope(d, dynamic_kappa_gos(&outlier.vector, z, tau))?.0;
    Ok(-mix.log_priors()[y] + log_z_y - log_z_m)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DgsOutput<T> {
    pub loss: T,
    /// Gradient with respect to the (ambient) feature vector.
    pub grad_z: Vec<T>,
}

/// `-log[Psi(z, y) / (sum_j Psi(z, j) + sum_m Omega(z, m))]`, assembled by
/// log-sum-exp over the log weights.
pub fn dgs_loss<T: Real>(
    mix: &VmfMixture<T>,
    z: &[T],
    y: usize,
    outliers: &[SynthesizedOutlier<T>],
    tau: T,
) -> Result<DgsOutput<T>> {
    check_query(mix, z, y, tau)?;
    check_finite(z, "feature")?;
    let d = mix.dim();
    let k = mix.num_classes();
    let inv_tau = T::one() / tau;

    // (log Z, slope, d kt / dz) per class
    let mut class_terms = Vec::with_capacity(k);
    for c in mix.components() {
        let u: Vec<T> = c.mu.iter().zip(z).map(|(&m, &x)| c.kappa * m + x * inv_tau).collect();
        let kt = norm(&u);
        let (log_z, slope) = log_norm_const_with_slope(d, kt)?;
        let dkt: Vec<T> = if kt > T::zero() { u.iter().map(|&v| v / (tau * kt)).collect() } else { vec![T::zero(); d] };
        class_terms.push((log_z, slope, dkt));
    }
    let log_z_y = class_terms[y].0;
    let log_pi = mix.log_priors();

    let mut logits = Vec::with_capacity(k + outliers.len());
    for (j, term) in class_terms.iter().enumerate() {
        logits.push(if j == y { T::zero() } else { log_pi[j] - log_pi[y] + log_z_y - term.0 });
    }
    let mut outlier_terms = Vec::with_capacity(outliers.len());
    for o in outliers {
        if o.vector.dim() != d {
            return Err(Error::Shape { expected: d, got: o.vector.dim() });
        }
        let s: Vec<T> = o.vector.iter().zip(z).map(|(&a, &b)| a + b).collect();
        let len = norm(&s);
        let kt = len * inv_tau;
        let (log_z, slope) = log_norm_const_with_slope(d, kt)?;
        let dkt: Vec<T> =
            if len > T::zero() { s.iter().map(|&v| v / (tau * len)).collect() } else { vec![T::zero(); d] };
        logits.push(-log_pi[y] + log_z_y - log_z);
        outlier_terms.push((slope, dkt));
    }

    let mut w = vec![T::zero(); logits.len()];
    let lse = softmax_into(&logits, &mut w);
    let loss = lse - logits[y];
    if !loss.is_finite() {
        return Err(Error::Numeric("dgs loss".into()));
    }

    let mut grad = vec![T::zero(); d];
    // Every non-target weight carries +slope_y * d kt_y / dz.
    let coeff_y = (T::one() - w[y]) * class_terms[y].1;
    for (g, &v) in grad.iter_mut().zip(&class_terms[y].2) {
        *g += coeff_y * v;
    }
    for (j, (_, slope, dkt)) in class_terms.iter().enumerate() {
        if j == y {
            continue;
        }
        let c = w[j] * *slope;
        for (g, &v) in grad.iter_mut().zip(dkt) {
            *g -= c * v;
        }
    }
    for (m, (slope, dkt)) in outlier_terms.iter().enumerate() {
        let c = w[k + m] * *slope;
        for (g, &v) in grad.iter_mut().zip(dkt) {
            *g -= c * v;
        }
    }
    Ok(DgsOutput { loss, grad_z: grad })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TlaOutput<T> {
    pub loss: T,
    pub grad_logits: Vec<T>,
}

/// `-log[pi_y exp(phi_y / eps) / sum_j pi_j exp(phi_j / eps)]`.
pub fn tla_loss<T: Real>(logits: &[T], y: usize, priors: &[T], epsilon: T) -> Result<TlaOutput<T>> {
    if logits.len() != priors.len() {
        return Err(Error::Shape { expected: priors.len(), got: logits.len() });
    }
    if y >= logits.len() {
        return Err(Error::Domain(format!("class {y} out of range")));
    }
    if !(epsilon > T::zero()) {
        return Err(Error::Domain(format!("epsilon {epsilon} must be > 0")));
    }
    if !(priors[y] > T::zero()) {
        return Err(Error::Domain(format!("prior of class {y} is {}", priors[y])));
    }
    check_finite(logits, "logits")?;
    let adjusted: Vec<T> = logits.iter().zip(priors).map(|(&l, &p)| p.ln() + l / epsilon).collect();
    let mut grad = vec![T::zero(); logits.len()];
    let lse = softmax_into(&adjusted, &mut grad);
    grad[y] -= T::one();
    for g in grad.iter_mut() {
        *g /= epsilon;
    }
    Ok(TlaOutput { loss: lse - adjusted[y], grad_logits: grad })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EprOutput<T> {
    pub loss: T,
    pub grad_head: EnergyHead<T>,
    pub grad_id: Vec<T>,
    pub grad_gos: Vec<T>,
    /// One of the two populations was empty and contributed nothing.
    pub empty_side: bool,
}

/// Mean of `-log sigmoid(phi(E))` over synthesized-outlier energies plus mean
/// of `-log(1 - sigmoid(phi(E)))` over in-distribution energies.
pub fn epr_loss<T: Real>(head: &EnergyHead<T>, id_energies: &[T], gos_energies: &[T]) -> Result<EprOutput<T>> {
    check_finite(id_energies, "id energies")?;
    check_finite(gos_energies, "outlier energies")?;
    let mut grad_head = EnergyHead::zeros(head.hidden());
    let mut loss = T::zero();
    let mut grad_id = vec![T::zero(); id_energies.len()];
    let mut grad_gos = vec![T::zero(); gos_energies.len()];

    if !gos_energies.is_empty() {
        let scale = T::one() / T::from_usize_lossy(gos_energies.len());
        for (g, &e) in grad_gos.iter_mut().zip(gos_energies) {
            let (s, slope) = head.forward_with_slope(e);
            loss += scale * softplus(-s);
            let upstream = scale * (sigmoid(s) - T::one());
            *g = upstream * slope;
            head.accumulate_param_grad(e, upstream, &mut grad_head);
        }
    }
    if !id_energies.is_empty() {
        let scale = T::one() / T::from_usize_lossy(id_energies.len());
        for (g, &e) in grad_id.iter_mut().zip(id_energies) {
            let (s, slope) = head.forward_with_slope(e);
            loss += scale * softplus(s);
            let upstream = scale * sigmoid(s);
            *g = upstream * slope;
            head.accumulate_param_grad(e, upstream, &mut grad_head);
        }
    }
    Ok(EprOutput { loss, grad_head, grad_id, grad_gos, empty_side: id_energies.is_empty() || gos_energies.is_empty() })
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossParts<T> {
    pub dgs: T,
    pub tla: T,
    pub epr: T,
}

pub fn total_loss<T: Real>(parts: &LossParts<T>, weights: &LossWeights<T>) -> T {
    weights.dgs_weight * parts.dgs + weights.alpha * parts.tla + weights.beta * parts.epr
}

/// Naive-domain evaluation of the contrastive loss, for cross-checks.
pub fn dgs_loss_naive<T: Real>(
    mix: &VmfMixture<T>,
    z: &[T],
    y: usize,
    outliers: &[SynthesizedOutlier<T>],
    tau: T,
) -> Result<T> {
    let mut denom = T::zero();
    for j in 0..mix.num_classes() {
        denom += psi_id(mix, z, y, j, tau)?.exp();
    }
    for o in outliers {
        denom += omega_ood(mix, z, y, o, tau)?.exp();
    }
    Ok(-(psi_id(mix, z, y, y, tau)?.exp() / denom).ln())
}

/// `logsumexp` re-export for callers assembling custom objectives.
pub fn log_sum_exp<T: Real>(xs: &[T]) -> T {
    logsumexp(xs)
}
