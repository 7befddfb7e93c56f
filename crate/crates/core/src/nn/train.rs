use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{batch_objective, OptimizerKind, OptimizerState, TinyNet};
use crate::data::LabeledFeatureSet;
use crate::error::{Error, Result};
use crate::gos::{synthesize_balanced_batch_with, AnchorKappa, AnnulusSpec};
use crate::losses::{total_loss, LossParts, LossWeights};
use crate::rng::RandomSource;
use crate::scalar::Real;
use crate::sphere::{fit_vmf, normalize, UnitVector, VmfComponent, VmfMixture};

/// Lower bound on refreshed concentrations so synthesis always has a
/// positive anchor.
const KAPPA_FLOOR: f64 = 1e-3;

const STREAM_INIT: u64 = 0;
const STREAM_SHUFFLE: u64 = 1;
const STREAM_GOS: u64 = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig<T> {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: T,
    pub optimizer: OptimizerKind,
    pub seed: u64,
    pub weights: LossWeights<T>,
    pub annulus: AnnulusSpec<T>,
    /// Synthesized outliers per class per batch; 0 disables synthesis.
    pub outliers_per_class: usize,
    pub anchor: AnchorKappa<T>,
}

impl<T: Real> Default for TrainConfig<T> {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 128,
            learning_rate: T::lit(1e-3),
            optimizer: OptimizerKind::Adam,
            seed: 0,
            weights: LossWeights::default(),
            annulus: AnnulusSpec::default(),
            outliers_per_class: 4,
            anchor: AnchorKappa::PerClass,
        }
    }
}

impl<T: Real> TrainConfig<T> {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Spec("epochs and batch_size must be >= 1".into()));
        }
        if !(self.learning_rate > T::zero()) || !self.learning_rate.is_finite() {
            return Err(Error::Spec(format!("learning rate {} must be finite and > 0", self.learning_rate)));
        }
        self.weights.validate()
    }

    /// Seed for the parameter initialization stream.
    pub fn init_rng(&self) -> RandomSource {
        RandomSource::with_stream(self.seed, STREAM_INIT)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub dgs: f64,
    pub tla: f64,
    pub epr: f64,
    pub total: f64,
    /// Concentrations used for synthesis and the contrastive loss this epoch.
    pub kappa_hat: Vec<f64>,
    /// Classes whose concentration fell back to the median of the others.
    pub kappa_fallback: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    pub num_params: usize,
    /// CRC-32C of the final parameters.
    pub param_digest: u32,
    /// Not part of the determinism contract.
    pub wall_clock_secs: f64,
}

impl TrainReport {
    /// Equality ignoring wall-clock time.
    pub fn same_run(&self, other: &TrainReport) -> bool {
        self.epochs == other.epochs && self.num_params == other.num_params && self.param_digest == other.param_digest
    }

    pub fn final_record(&self) -> Option<&EpochRecord> {
        self.epochs.last()
    }
}

/// Re-estimates every class's mean direction and concentration from clean
/// forward features. See [`fit_class_mixture`] for the fallback rule.
pub fn refresh_mixture<T: Real>(net: &TinyNet<T>, data: &LabeledFeatureSet<T>) -> Result<(VmfMixture<T>, Vec<usize>)> {
    let labels = data.labels().ok_or_else(|| Error::Spec("training set has no labels".into()))?;
    let features: Vec<UnitVector<T>> =
        data.rows().collect::<Vec<_>>().par_iter().map(|x| net.forward(x).map(|(z, _)| z)).collect::<Result<_>>()?;
    fit_class_mixture(&features, labels, data.class_counts())
}

/// Per-class vMF fit of unit `rows` with priors from `counts`. Classes with
/// fewer than two samples take the median concentration of the others (1 if
/// none qualify) and their first sample as mean; their indices are returned.
pub fn fit_class_mixture<T: Real, S: AsRef<[T]> + Sync>(
    rows: &[S],
    labels: &[usize],
    counts: &[usize],
) -> Result<(VmfMixture<T>, Vec<usize>)> {
    if rows.len() != labels.len() {
        return Err(Error::Shape { expected: rows.len(), got: labels.len() });
    }
    let k = counts.len();
    let mut by_class: Vec<Vec<&[T]>> = vec![Vec::new(); k];
    for (z, &y) in rows.iter().zip(labels) {
        if y >= k {
            return Err(Error::Domain(format!("label {y} outside 0..{k}")));
        }
        by_class[y].push(z.as_ref());
    }
    let floor = T::lit(KAPPA_FLOOR);
    let mut fitted: Vec<Option<VmfComponent<T>>> = Vec::with_capacity(k);
    for rows in &by_class {
        fitted.push(if rows.len() >= 2 {
            let mut c = fit_vmf(rows)?;
            c.kappa = c.kappa.max(floor);
            Some(c)
        } else {
            None
        });
    }
    let mut ks: Vec<T> = fitted.iter().flatten().map(|c| c.kappa).collect();
    ks.sort_by(|a, b| a.partial_cmp(b).expect("finite concentrations"));
    let global = match ks.len() {
        0 => T::one(),
        n if n % 2 == 1 => ks[n / 2],
        n => (ks[n / 2 - 1] + ks[n / 2]) * T::lit(0.5),
    };
    let mut fallback = Vec::new();
    let mut comps = Vec::with_capacity(k);
    for (y, f) in fitted.into_iter().enumerate() {
        match f {
            Some(c) => comps.push(c),
            None => {
                let rows = &by_class[y];
                if rows.is_empty() {
                    return Err(Error::Spec(format!("class {y} has no training samples")));
                }
                fallback.push(y);
                comps.push(VmfComponent::new(normalize(rows[0])?, global)?);
            }
        }
    }
    Ok((VmfMixture::from_counts(comps, counts)?, fallback))
}

/// Mini-batch descent on the joint objective. Class statistics are
/// refreshed from a clean forward pass before every epoch and a fresh
/// balanced outlier batch is synthesized for every mini-batch.
pub fn train<T: Real>(
    net: &mut TinyNet<T>,
    data: &LabeledFeatureSet<T>,
    config: &TrainConfig<T>,
) -> Result<TrainReport> {
    config.validate()?;
    let start = Instant::now();
    let dims = net.dims();
    let labels = data.labels().ok_or_else(|| Error::Spec("training set has no labels".into()))?;
    if data.is_empty() {
        return Err(Error::Spec("training set is empty".into()));
    }
    if data.dim() != dims.input {
        return Err(Error::Shape { expected: dims.input, got: data.dim() });
    }
    if data.num_classes() != dims.classes {
        return Err(Error::Spec(format!("data has {} classes, network {}", data.num_classes(), dims.classes)));
    }
    if let Some(y) = data.class_counts().iter().position(|&c| c == 0) {
        return Err(Error::Spec(format!("class {y} has no training samples")));
    }

    let mut opt = OptimizerState::new(config.optimizer, net.num_params());
    let mut shuffle_rng = RandomSource::with_stream(config.seed, STREAM_SHUFFLE);
    let mut gos_rng = RandomSource::with_stream(config.seed, STREAM_GOS);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut records = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        let (mix, fallback) = refresh_mixture(net, data)?;
        shuffle_rng.shuffle(&mut order);
        let mut sums = LossParts { dgs: T::zero(), tla: T::zero(), epr: T::zero() };
        let mut batches = 0usize;
        for batch in order.chunks(config.batch_size) {
            let outliers = if config.outliers_per_class > 0 {
                synthesize_balanced_batch_with(
                    &mix,
                    config.outliers_per_class,
                    &config.annulus,
                    config.anchor,
                    &mut gos_rng,
                )?
            } else {
                Vec::new()
            };
            let xs: Vec<&[T]> = batch.iter().map(|&i| data.row(i)).collect();
            let ys: Vec<usize> = batch.iter().map(|&i| labels[i]).collect();
            let eval = batch_objective(net, &mix, &xs, &ys, &outliers, &config.weights)?;
            let w = T::from_usize_lossy(batch.len());
            sums.dgs += eval.parts.dgs * w;
            sums.tla += eval.parts.tla * w;
            sums.epr += eval.parts.epr;
            batches += 1;
            opt.step(net.params_mut(), &eval.grads, config.learning_rate);
        }
        let n = T::from_usize_lossy(data.len());
        let parts = LossParts { dgs: sums.dgs / n, tla: sums.tla / n, epr: sums.epr / T::from_usize_lossy(batches) };
        records.push(EpochRecord {
            epoch: epoch + 1,
            dgs: parts.dgs.as_f64(),
            tla: parts.tla.as_f64(),
            epr: parts.epr.as_f64(),
            total: total_loss(&parts, &config.weights).as_f64(),
            kappa_hat: mix.components().iter().map(|c| c.kappa.as_f64()).collect(),
            kappa_fallback: fallback,
        });
    }
    if let Some(i) = net.params().iter().position(|v| !v.is_finite()) {
        let block = dims.block_of(i).map_or("?", |b| b.name());
        return Err(Error::Numeric(format!("parameter {i} ({block}) diverged")));
    }
    Ok(TrainReport {
        epochs: records,
        num_params: net.num_params(),
        param_digest: net.param_digest(),
        wall_clock_secs: start.elapsed().as_secs_f64(),
    })
}
