use rayon::prelude::*;

use super::{Block, TinyNet, Trace};
use crate::error::{Error, Result};
use crate::gos::SynthesizedOutlier;
use crate::losses::{dgs_loss, energy_with_grad, epr_loss, tla_loss, total_loss, LossParts, LossWeights};
use crate::scalar::Real;
use crate::sphere::VmfMixture;

/// Samples per parallel task. Fixed so the reduction order, and therefore
/// every bit of the result, does not depend on the thread count.
const CHUNK: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct BatchEval<T> {
    pub parts: LossParts<T>,
    pub total: T,
    /// Gradient of `total` with respect to every parameter.
    pub grads: Vec<T>,
    /// EPR saw an empty side (no outliers or no samples).
    pub epr_empty_side: bool,
}

struct Forward<T> {
    trace: Trace<T>,
    energy: T,
    energy_grad: Vec<T>,
}

fn finite_or<T: Real>(xs: &[T], what: &str) -> Result<()> {
    if xs.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Numeric(format!("non-finite gradient from {what}")))
    }
}

/// Joint objective over one batch with synthesized outliers held constant.
/// DGS and TLA are batch means; EPR averages each side separately.
pub fn batch_objective<T: Real>(
    net: &TinyNet<T>,
    mix: &VmfMixture<T>,
    xs: &[&[T]],
    labels: &[usize],
    outliers: &[SynthesizedOutlier<T>],
    weights: &LossWeights<T>,
) -> Result<BatchEval<T>> {
    weights.validate()?;
    if xs.is_empty() {
        return Err(Error::Spec("empty batch".into()));
    }
    if xs.len() != labels.len() {
        return Err(Error::Shape { expected: xs.len(), got: labels.len() });
    }
    let dims = net.dims();
    if mix.dim() != dims.feature || mix.num_classes() != dims.classes {
        return Err(Error::Spec(format!(
            "mixture is {} classes in dimension {}, network is {} classes in dimension {}",
            mix.num_classes(),
            mix.dim(),
            dims.classes,
            dims.feature
        )));
    }
    let temp = weights.epr_temperature();

    let forwards: Vec<Forward<T>> = xs
        .par_iter()
        .map(|x| {
            let trace = net.forward_trace(x)?;
            let (energy, energy_grad) = energy_with_grad(&trace.logits, temp)?;
            Ok(Forward { trace, energy, energy_grad })
        })
        .collect::<Result<_>>()?;
    let gos: Vec<(T, Vec<T>)> =
        outliers.par_iter().map(|o| energy_with_grad(&net.logits_of(&o.vector), temp)).collect::<Result<_>>()?;

    let head = net.energy_head();
    let id_e: Vec<T> = forwards.iter().map(|f| f.energy).collect();
    let gos_e: Vec<T> = gos.iter().map(|g| g.0).collect();
    let epr = epr_loss(&head, &id_e, &gos_e)?;
    finite_or(&epr.grad_id, "epr")?;
    finite_or(&epr.grad_gos, "epr")?;

    let n = xs.len();
    let inv_n = T::one() / T::from_usize_lossy(n);
    let np = net.num_params();
    let sample_tasks = n.div_ceil(CHUNK);
    let outlier_tasks = outliers.len().div_ceil(CHUNK);

    let partials: Vec<(Vec<T>, T, T)> = (0..sample_tasks + outlier_tasks)
        .into_par_iter()
        .map(|task| -> Result<(Vec<T>, T, T)> {
            let mut grads = vec![T::zero(); np];
            let (mut dgs_sum, mut tla_sum) = (T::zero(), T::zero());
            if task < sample_tasks {
                for i in task * CHUNK..((task + 1) * CHUNK).min(n) {
                    let f = &forwards[i];
                    let y = labels[i];
                    let dgs = dgs_loss(mix, &f.trace.feature, y, outliers, weights.tau)?;
                    finite_or(&dgs.grad_z, "dgs")?;
                    let tla = tla_loss(&f.trace.logits, y, mix.priors(), weights.epsilon)?;
                    finite_or(&tla.grad_logits, "tla")?;
                    dgs_sum += dgs.loss;
                    tla_sum += tla.loss;
                    let e_up = weights.beta * epr.grad_id[i];
                    let grad_logits: Vec<T> = tla
                        .grad_logits
                        .iter()
                        .zip(&f.energy_grad)
                        .map(|(&g, &eg)| weights.alpha * inv_n * g + e_up * eg)
                        .collect();
                    let grad_feature: Vec<T> = dgs.grad_z.iter().map(|&g| weights.dgs_weight * inv_n * g).collect();
                    net.backward(xs[i], &f.trace, &grad_feature, &grad_logits, Some(&mut grads));
                }
            } else {
                let t = task - sample_tasks;
                for m in t * CHUNK..((t + 1) * CHUNK).min(outliers.len()) {
                    let e_up = weights.beta * epr.grad_gos[m];
                    let grad_logits: Vec<T> = gos[m].1.iter().map(|&eg| e_up * eg).collect();
                    net.classifier_backward(&outliers[m].vector, &grad_logits, Some(&mut grads));
                }
            }
            Ok((grads, dgs_sum, tla_sum))
        })
        .collect::<Result<_>>()?;

    let mut grads = vec![T::zero(); np];
    let (mut dgs_sum, mut tla_sum) = (T::zero(), T::zero());
    for (g, d, t) in partials {
        for (a, b) in grads.iter_mut().zip(g) {
            *a += b;
        }
        dgs_sum += d;
        tla_sum += t;
    }
    let head_blocks = [
        (Block::HeadW1, &epr.grad_head.w1[..]),
        (Block::HeadB1, &epr.grad_head.b1[..]),
        (Block::HeadW2, &epr.grad_head.w2[..]),
        (Block::HeadB2, std::slice::from_ref(&epr.grad_head.b2)),
    ];
    for (block, g) in head_blocks {
        let r = dims.range(block);
        for (a, &b) in grads[r].iter_mut().zip(g) {
            *a += weights.beta * b;
        }
    }
    if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
        let block = dims.block_of(i).map_or("?", Block::name);
        return Err(Error::Numeric(format!("non-finite gradient at parameter {i} ({block})")));
    }
    let parts = LossParts { dgs: dgs_sum * inv_n, tla: tla_sum * inv_n, epr: epr.loss };
    Ok(BatchEval { parts, total: total_loss(&parts, weights), grads, epr_empty_side: epr.empty_side })
}
