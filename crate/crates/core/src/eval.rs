//! Out-of-distribution scoring and the detection/classification metrics.
//!
//! Metric convention: OOD is the positive class and every ranking metric
//! consumes *detection* scores, where higher means "more likely OOD". Raw
//! ODIN scores are mapped to detection scores by an [`Orientation`].

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::energy_score;
use crate::nn::TinyNet;
use crate::scalar::Real;
use crate::special::softmax_into;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OdinConfig<T> {
    /// Perturbation magnitude.
    pub eta: T,
    /// Scoring temperature.
    pub temp: T,
}

impl<T: Real> Default for OdinConfig<T> {
    fn default() -> Self {
        Self { eta: T::zero(), temp: T::one() }
    }
}

impl<T: Real> OdinConfig<T> {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta >= T::zero()) || !self.eta.is_finite() {
            return Err(Error::Spec(format!("eta {} must be finite and >= 0", self.eta)));
        }
        if !(self.temp > T::zero()) || !self.temp.is_finite() {
            return Err(Error::Spec(format!("temperature {} must be finite and > 0", self.temp)));
        }
        Ok(())
    }
}

/// Scores of the in-distribution and out-of-distribution populations.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ScoredSet {
    pub id: Vec<f64>,
    pub ood: Vec<f64>,
}

impl ScoredSet {
    pub fn new(id: Vec<f64>, ood: Vec<f64>) -> Result<Self> {
        if id.iter().chain(&ood).any(|s| !s.is_finite()) {
            return Err(Error::Numeric("non-finite score".into()));
        }
        Ok(Self { id, ood })
    }

    fn check_ranked(&self) -> Result<()> {
        if self.id.is_empty() || self.ood.is_empty() {
            return Err(Error::Domain(format!(
                "ranking metrics need both populations ({} ID, {} OOD)",
                self.id.len(),
                self.ood.len()
            )));
        }
        Ok(())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> ScoredSet {
        ScoredSet { id: self.id.iter().map(|&s| f(s)).collect(), ood: self.ood.iter().map(|&s| f(s)).collect() }
    }
}

/// How raw scores become detection scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Orientation {
    /// Higher raw score means in-distribution; detection score is `-S`.
    #[default]
    AsIs,
    /// Higher raw score means out-of-distribution; detection score is `S`.
    Flipped,
}

impl Orientation {
    pub fn detection(self, raw: f64) -> f64 {
        match self {
            Orientation::AsIs => -raw,
            Orientation::Flipped => raw,
        }
    }

    pub fn apply(self, raw: &ScoredSet) -> ScoredSet {
        raw.map(|s| self.detection(s))
    }
}

fn argmax<T: Real>(xs: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in xs.iter().enumerate() {
        if v > xs[best] {
            best = i;
        }
    }
    best
}

/// Predicted class, `log p(y_hat | x; temp)` and its gradient with respect
/// to the input.
pub fn log_softmax_input_gradient<T: Real>(net: &TinyNet<T>, x: &[T], temp: T) -> Result<(usize, T, Vec<T>)> {
    let trace = net.forward_trace(x)?;
    let y_hat = argmax(&trace.logits);
    let scaled: Vec<T> = trace.logits.iter().map(|&l| l / temp).collect();
    let mut p = vec![T::zero(); scaled.len()];
    let lse = softmax_into(&scaled, &mut p);
    let grad_logits: Vec<T> =
        p.iter().enumerate().map(|(j, &pj)| (if j == y_hat { T::one() } else { T::zero() } - pj) / temp).collect();
    let zeros = vec![T::zero(); trace.feature.dim()];
    let gx = net.backward(x, &trace, &zeros, &grad_logits, None);
    if gx.iter().any(|g| !g.is_finite()) {
        return Err(Error::Numeric("non-finite input gradient".into()));
    }
    Ok((y_hat, scaled[y_hat] - lse, gx))
}

/// `x + eta * sign(grad_x log p(y_hat | x; temp))`, with `sign(0) = 0`.
pub fn odin_perturb<T: Real>(net: &TinyNet<T>, x: &[T], cfg: &OdinConfig<T>) -> Result<Vec<T>> {
    cfg.validate()?;
    if cfg.eta == T::zero() {
        return Ok(x.to_vec());
    }
    let (_, _, g) = log_softmax_input_gradient(net, x, cfg.temp)?;
    Ok(x.iter()
        .zip(&g)
        .map(|(&xi, &gi)| {
            if gi > T::zero() {
                xi + cfg.eta
            } else if gi < T::zero() {
                xi - cfg.eta
            } else {
                xi
            }
        })
        .collect())
}

/// `-temp log sum_j exp(logit_j / temp)` on the (already perturbed) input.
pub fn ood_score<T: Real>(net: &TinyNet<T>, x_hat: &[T], cfg: &OdinConfig<T>) -> Result<T> {
    cfg.validate()?;
    let (_, logits) = net.forward(x_hat)?;
    energy_score(&logits, cfg.temp)
}

/// Raw ODIN score and clean-input prediction for every row.
pub fn score_rows<T: Real>(net: &TinyNet<T>, rows: &[&[T]], cfg: &OdinConfig<T>) -> Result<(Vec<f64>, Vec<usize>)> {
    let out: Vec<(f64, usize)> = rows
        .par_iter()
        .map(|x| {
            let (_, logits) = net.forward(x)?;
            let xh = odin_perturb(net, x, cfg)?;
            Ok((ood_score(net, &xh, cfg)?.as_f64(), argmax(&logits)))
        })
        .collect::<Result<_>>()?;
    Ok(out.into_iter().unzip())
}

/// Picks the orientation under which in-distribution scores rank as less
/// OOD (AUROC above 0.5). An exact 0.5 keeps [`Orientation::AsIs`].
pub fn orientation_selftest(raw: &ScoredSet) -> Result<(Orientation, f64)> {
    let a = auroc(&Orientation::AsIs.apply(raw))?;
    Ok(if a < 0.5 { (Orientation::Flipped, 1.0 - a) } else { (Orientation::AsIs, a) })
}

/// Splits each population into a calibration part (every fifth element,
/// starting at index 0) and the remainder.
pub fn calibration_split(raw: &ScoredSet) -> (ScoredSet, ScoredSet, Vec<usize>) {
    let split = |xs: &[f64]| {
        let mut cal = Vec::new();
        let mut rest = Vec::new();
        let mut rest_idx = Vec::new();
        for (i, &s) in xs.iter().enumerate() {
            if i % 5 == 0 {
                cal.push(s);
            } else {
                rest.push(s);
                rest_idx.push(i);
            }
        }
        (cal, rest, rest_idx)
    };
    let (ci, ri, id_idx) = split(&raw.id);
    let (co, ro, _) = split(&raw.ood);
    (ScoredSet { id: ci, ood: co }, ScoredSet { id: ri, ood: ro }, id_idx)
}

/// Mann-Whitney AUROC with OOD positive; ties count one half.
pub fn auroc(det: &ScoredSet) -> Result<f64> {
    det.check_ranked()?;
    let mut all: Vec<(f64, bool)> =
        det.id.iter().map(|&s| (s, false)).chain(det.ood.iter().map(|&s| (s, true))).collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    // twice the Mann-Whitney count, kept integral
    let mut twice: u128 = 0;
    let mut id_below: u128 = 0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        let (mut id_here, mut ood_here) = (0u128, 0u128);
        while j < all.len() && all[j].0 == all[i].0 {
            if all[j].1 {
                ood_here += 1;
            } else {
                id_here += 1;
            }
            j += 1;
        }
        twice += 2 * ood_here * id_below + ood_here * id_here;
        id_below += id_here;
        i = j;
    }
    Ok(twice as f64 / (2 * det.id.len() as u128 * det.ood.len() as u128) as f64)
}

/// Non-interpolated average precision with OOD positive, one step per
/// distinct threshold.
pub fn aupr(det: &ScoredSet) -> Result<f64> {
    det.check_ranked()?;
    let mut all: Vec<(f64, bool)> =
        det.id.iter().map(|&s| (s, false)).chain(det.ood.iter().map(|&s| (s, true))).collect();
    all.sort_by(|a, b| b.0.total_cmp(&a.0));
    let n_pos = det.ood.len() as f64;
    let (mut tp, mut fp, mut tp_prev) = (0usize, 0usize, 0usize);
    let mut ap = 0.0;
    let mut i = 0;
    while i < all.len() {
        let t = all[i].0;
        while i < all.len() && all[i].0 == t {
            if all[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        ap += ap_step(tp, tp_prev, fp, n_pos);
        tp_prev = tp;
    }
    Ok(ap)
}

/// `(R_k - R_{k-1}) P_k` at a threshold with `tp` true and `fp` false positives.
pub fn ap_step(tp: usize, tp_prev: usize, fp: usize, n_pos: f64) -> f64 {
    if tp == tp_prev {
        return 0.0;
    }
    ((tp - tp_prev) as f64 / n_pos) * (tp as f64 / (tp + fp) as f64)
}

/// Smallest `k` with `k / n >= level`, at least 1.
fn needed_hits(level: f64, n: usize) -> usize {
    let mut k = ((level * n as f64).floor() as usize).clamp(1, n);
    while k > 1 && (k - 1) as f64 / n as f64 >= level {
        k -= 1;
    }
    while k < n && (k as f64 / n as f64) < level {
        k += 1;
    }
    k
}

fn check_level(level: f64, lo_inclusive: bool) -> Result<()> {
    let ok = if lo_inclusive { (0.0..=1.0).contains(&level) } else { level > 0.0 && level <= 1.0 };
    if ok {
        Ok(())
    } else {
        Err(Error::Domain(format!("level {level} out of range")))
    }
}

/// Threshold for an OOD hit rate of at least `level`: the `k`-th largest OOD
/// detection score, `k` the smallest count with `k / n_ood >= level`.
pub fn tpr_threshold(det: &ScoredSet, level: f64) -> Result<f64> {
    det.check_ranked()?;
    check_level(level, false)?;
    let mut ood = det.ood.clone();
    ood.sort_by(|a, b| b.total_cmp(a));
    Ok(ood[needed_hits(level, ood.len()) - 1])
}

/// Fraction of ID samples with detection score at or above the TPR threshold.
pub fn fpr_at_tpr(det: &ScoredSet, level: f64) -> Result<f64> {
    let t = tpr_threshold(det, level)?;
    Ok(det.id.iter().filter(|&&s| s >= t).count() as f64 / det.id.len() as f64)
}

fn accuracy_where(keep: impl Fn(usize) -> bool, predictions: &[usize], labels: &[usize]) -> Option<f64> {
    let (mut n, mut hit) = (0usize, 0usize);
    for i in 0..labels.len() {
        if keep(i) {
            n += 1;
            hit += usize::from(predictions[i] == labels[i]);
        }
    }
    (n > 0).then(|| hit as f64 / n as f64)
}

fn check_predictions(det: &ScoredSet, predictions: &[usize], labels: &[usize]) -> Result<()> {
    if predictions.len() != det.id.len() || labels.len() != det.id.len() {
        return Err(Error::Shape { expected: det.id.len(), got: predictions.len().min(labels.len()) });
    }
    Ok(())
}

/// Accuracy over ID samples kept on the ID side (`score < t`) of the TPR
/// threshold; `None` when nothing survives.
pub fn acc_at_tpr(det: &ScoredSet, predictions: &[usize], labels: &[usize], level: f64) -> Result<Option<f64>> {
    check_predictions(det, predictions, labels)?;
    let t = tpr_threshold(det, level)?;
    Ok(accuracy_where(|i| det.id[i] < t, predictions, labels))
}

/// Accuracy over ID samples retained when at most a `level` fraction of
/// them is rejected. The threshold is the smallest candidate (distinct ID
/// scores and `+inf`) meeting the budget; `None` when nothing is retained.
pub fn acc_at_fpr(det: &ScoredSet, predictions: &[usize], labels: &[usize], level: f64) -> Result<Option<f64>> {
    check_predictions(det, predictions, labels)?;
    check_level(level, true)?;
    if det.id.is_empty() {
        return Ok(None);
    }
    let n = det.id.len() as f64;
    let mut sorted = det.id.clone();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let mut t = f64::INFINITY;
    // candidates ascending; rejected fraction shrinks as t grows
    let mut i = 0;
    while i < sorted.len() {
        let rejected = (sorted.len() - i) as f64 / n;
        if rejected <= level {
            t = sorted[i];
            break;
        }
        let v = sorted[i];
        while i < sorted.len() && sorted[i] == v {
            i += 1;
        }
    }
    Ok(accuracy_where(|i| det.id[i] < t, predictions, labels))
}

pub const ACC_AT_TPR_LEVELS: [&str; 1] = ["0.95"];
pub const ACC_AT_FPR_LEVELS: [&str; 4] = ["0", "0.001", "0.01", "0.1"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub auroc: f64,
    pub aupr: f64,
    #[serde(rename = "fpr@0.95")]
    pub fpr_at_95: f64,
    #[serde(rename = "acc@tpr")]
    pub acc_at_tpr: BTreeMap<String, Option<f64>>,
    #[serde(rename = "acc@fpr")]
    pub acc_at_fpr: BTreeMap<String, Option<f64>>,
    pub orientation: Orientation,
    pub config_digest: String,
}

/// All metrics on detection scores.
pub fn metric_report(
    det: &ScoredSet,
    predictions: &[usize],
    labels: &[usize],
    orientation: Orientation,
    config_digest: &str,
) -> Result<MetricReport> {
    let mut at_tpr = BTreeMap::new();
    for l in ACC_AT_TPR_LEVELS {
        at_tpr.insert(l.to_string(), acc_at_tpr(det, predictions, labels, l.parse().expect("literal"))?);
    }
    let mut at_fpr = BTreeMap::new();
    for l in ACC_AT_FPR_LEVELS {
        at_fpr.insert(l.to_string(), acc_at_fpr(det, predictions, labels, l.parse().expect("literal"))?);
    }
    Ok(MetricReport {
        auroc: auroc(det)?,
        aupr: aupr(det)?,
        fpr_at_95: fpr_at_tpr(det, 0.95)?,
        acc_at_tpr: at_tpr,
        acc_at_fpr: at_fpr,
        orientation,
        config_digest: config_digest.to_string(),
    })
}

/// Fixes the orientation on the calibration split of the raw scores and
/// reports metrics on the remaining samples.
pub fn evaluate_raw(
    raw: &ScoredSet,
    predictions: &[usize],
    labels: &[usize],
    config_digest: &str,
) -> Result<MetricReport> {
    check_predictions(raw, predictions, labels)?;
    let (cal, rest, idx) = calibration_split(raw);
    let (orientation, _) = orientation_selftest(&cal)?;
    let preds: Vec<usize> = idx.iter().map(|&i| predictions[i]).collect();
    let labs: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
    metric_report(&orientation.apply(&rest), &preds, &labs, orientation, config_digest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, NetDims};
    use crate::rng::RandomSource;

    fn set(id: &[f64], ood: &[f64]) -> ScoredSet {
        ScoredSet::new(id.to_vec(), ood.to_vec()).unwrap()
    }

    // --- brute-force oracles ---

    fn auroc_bf(s: &ScoredSet) -> f64 {
        let mut twice = 0u128;
        for &o in &s.ood {
            for &i in &s.id {
                twice += if o > i {
                    2
                } else if o == i {
                    1
                } else {
                    0
                };
            }
        }
        twice as f64 / (2 * s.id.len() as u128 * s.ood.len() as u128) as f64
    }

    fn aupr_bf(s: &ScoredSet) -> f64 {
        let mut th: Vec<f64> = s.id.iter().chain(&s.ood).copied().collect();
        th.sort_by(|a, b| b.total_cmp(a));
        th.dedup();
        let mut ap = 0.0;
        let mut prev = 0;
        for t in th {
            let tp = s.ood.iter().filter(|&&v| v >= t).count();
            let fp = s.id.iter().filter(|&&v| v >= t).count();
            ap += ap_step(tp, prev, fp, s.ood.len() as f64);
            prev = tp;
        }
        ap
    }

    /// Highest threshold among all observed scores whose OOD hit rate reaches `level`.
    fn tpr_threshold_bf(s: &ScoredSet, level: f64) -> f64 {
        let mut best = f64::NEG_INFINITY;
        for &t in s.id.iter().chain(&s.ood) {
            let hits = s.ood.iter().filter(|&&v| v >= t).count();
            if hits as f64 / s.ood.len() as f64 >= level && t > best {
                best = t;
            }
        }
        best
    }

    fn fpr_bf(s: &ScoredSet, level: f64) -> f64 {
        let t = tpr_threshold_bf(s, level);
        s.id.iter().filter(|&&v| v >= t).count() as f64 / s.id.len() as f64
    }

    fn acc_keep_bf(s: &ScoredSet, p: &[usize], l: &[usize], t: f64) -> Option<f64> {
        let kept: Vec<usize> = (0..s.id.len()).filter(|&i| s.id[i] < t).collect();
        if kept.is_empty() {
            None
        } else {
            Some(kept.iter().filter(|&&i| p[i] == l[i]).count() as f64 / kept.len() as f64)
        }
    }

    fn acc_fpr_bf(s: &ScoredSet, p: &[usize], l: &[usize], level: f64) -> Option<f64> {
        let mut best = f64::INFINITY;
        for &t in &s.id {
            let rej = s.id.iter().filter(|&&v| v >= t).count() as f64 / s.id.len() as f64;
            if rej <= level && t < best {
                best = t;
            }
        }
        acc_keep_bf(s, p, l, best)
    }

    fn random_case(rng: &mut RandomSource) -> (ScoredSet, Vec<usize>, Vec<usize>) {
        let n_id = 1 + rng.below(500);
        let n_ood = 1 + rng.below(500);
        // coarse grid so ties are common
        let grid = 1 + rng.below(40) as u32;
        let mut draw = |shift: f64| (rng.normal() + shift).mul_add(grid as f64, 0.0).round() / grid as f64;
        let id: Vec<f64> = (0..n_id).map(|_| draw(0.0)).collect();
        let ood: Vec<f64> = (0..n_ood).map(|_| draw(1.0)).collect();
        let labels: Vec<usize> = (0..n_id).map(|_| rng.below(3)).collect();
        let preds: Vec<usize> = labels.iter().map(|&l| if rng.uniform() < 0.7 { l } else { (l + 1) % 3 }).collect();
        (set(&id, &ood), preds, labels)
    }

    #[test]
    fn metrics_match_brute_force_exactly() {
        let mut rng = RandomSource::new(2024);
        for _ in 0..200 {
            let (s, p, l) = random_case(&mut rng);
            assert_eq!(auroc(&s).unwrap(), auroc_bf(&s));
            assert_eq!(aupr(&s).unwrap(), aupr_bf(&s));
            for level in [0.5, 0.9, 0.95, 1.0] {
                assert_eq!(fpr_at_tpr(&s, level).unwrap(), fpr_bf(&s, level));
                let t = tpr_threshold_bf(&s, level);
                assert_eq!(acc_at_tpr(&s, &p, &l, level).unwrap(), acc_keep_bf(&s, &p, &l, t));
            }
            for level in [0.0, 0.001, 0.01, 0.1, 0.5, 1.0] {
                assert_eq!(acc_at_fpr(&s, &p, &l, level).unwrap(), acc_fpr_bf(&s, &p, &l, level));
            }
        }
    }

    #[test]
    fn auroc_examples() {
        assert_eq!(auroc(&set(&[0.1, 0.2], &[0.5, 0.9])).unwrap(), 1.0);
        assert_eq!(auroc(&set(&[0.3; 4], &[0.3; 3])).unwrap(), 0.5);
        assert_eq!(auroc(&set(&[0.1, 0.4], &[0.3, 0.9])).unwrap(), 0.75);
        assert!(auroc(&set(&[], &[1.0])).is_err());
    }

    #[test]
    fn aupr_examples() {
        assert_eq!(aupr(&set(&[0.1, 0.2], &[0.5, 0.9])).unwrap(), 1.0);
        assert!((aupr(&set(&[1.0; 3], &[1.0; 2])).unwrap() - 0.4).abs() < 1e-15);
        // id=[1,2,3], ood=[2.5,4]: thresholds 4 (P=1, R=1/2), 3, 2.5 (P=2/3, R=1)
        let s = set(&[1.0, 2.0, 3.0], &[2.5, 4.0]);
        assert_eq!(aupr(&s).unwrap(), aupr_bf(&s));
        assert!((aupr(&s).unwrap() - (0.5 + 0.5 * 2.0 / 3.0)).abs() < 1e-15);
    }

    #[test]
    fn fpr_examples() {
        assert_eq!(fpr_at_tpr(&set(&[0.1, 0.2], &[0.5, 0.9]), 0.95).unwrap(), 0.0);
        let same = set(&[0.1, 0.2, 0.3, 0.4], &[0.1, 0.2, 0.3, 0.4]);
        assert_eq!(fpr_at_tpr(&same, 0.95).unwrap(), fpr_bf(&same, 0.95));
        assert_eq!(tpr_threshold(&set(&[0.0, 1.0], &[0.7]), 0.95).unwrap(), 0.7);
    }

    #[test]
    fn accuracy_examples() {
        let s = set(&[0.0, 0.1, 0.2, 0.3], &[1.0, 2.0]);
        assert_eq!(acc_at_tpr(&s, &[0, 1, 2, 0], &[0, 1, 2, 0], 0.95).unwrap(), Some(1.0));
        assert_eq!(acc_at_tpr(&s, &[0, 1, 2, 0], &[0, 0, 2, 2], 0.95).unwrap(), Some(0.5));
        // six samples: ood threshold at 0.5 keeps ids 0.1, 0.2, 0.4 (two correct)
        let s6 = set(&[0.1, 0.2, 0.4, 0.6], &[0.5, 0.9]);
        assert_eq!(acc_at_tpr(&s6, &[1, 1, 0, 0], &[1, 0, 0, 0], 0.95).unwrap(), Some(2.0 / 3.0));
        let l = [0, 1, 1, 0];
        let p = [0, 1, 0, 0];
        assert_eq!(acc_at_fpr(&s, &p, &l, 0.0).unwrap(), Some(0.75));
        assert_eq!(acc_at_fpr(&s, &p, &l, 1.0).unwrap(), None);
        // ten samples at 10%: reject only the top score (0.9, a wrong prediction)
        let ids: Vec<f64> = (0..10).map(|i| i as f64 / 10.0).collect();
        let s10 = set(&ids, &[1.0]);
        let l10 = [0; 10];
        let p10 = [0, 0, 1, 0, 0, 0, 0, 0, 0, 1];
        assert_eq!(acc_at_fpr(&s10, &p10, &l10, 0.1).unwrap(), Some(8.0 / 9.0));
    }

    #[test]
    fn orientation_examples() {
        assert_eq!(orientation_selftest(&set(&[5.0, 6.0], &[1.0, 2.0])).unwrap(), (Orientation::AsIs, 1.0));
        assert_eq!(orientation_selftest(&set(&[1.0, 2.0], &[5.0, 6.0])).unwrap().0, Orientation::Flipped);
        assert_eq!(orientation_selftest(&set(&[1.0, 1.0], &[1.0, 1.0])).unwrap(), (Orientation::AsIs, 0.5));
    }

    proptest::proptest! {
        #[test]
        fn auroc_invariant_under_monotone_maps(seed in 0u64..5000) {
            let mut rng = RandomSource::new(seed);
            let (s, _, _) = random_case(&mut rng);
            let a = auroc(&s).unwrap();
            proptest::prop_assert_eq!(a, auroc(&s.map(|v| (v * 0.7).exp())).unwrap());
            proptest::prop_assert_eq!(a, auroc(&s.map(|v| v.powi(3) + 2.0 * v)).unwrap());
        }

        #[test]
        fn fpr_is_monotone_in_level(seed in 0u64..5000) {
            let mut rng = RandomSource::new(seed);
            let (s, _, _) = random_case(&mut rng);
            let levels = [0.05, 0.2, 0.5, 0.8, 0.9, 0.95, 0.99, 1.0];
            let f: Vec<f64> = levels.iter().map(|&l| fpr_at_tpr(&s, l).unwrap()).collect();
            proptest::prop_assert!(f.windows(2).all(|w| w[0] <= w[1]));
        }
    }

    fn net() -> TinyNet<f64> {
        let dims = NetDims { input: 6, hidden: 10, feature: 8, classes: 4, head_hidden: 16 };
        TinyNet::new(dims, Activation::Relu, &mut RandomSource::new(77)).unwrap()
    }

    #[test]
    fn odin_perturbation_geometry() {
        let net = net();
        let mut rng = RandomSource::new(1);
        for _ in 0..50 {
            let x: Vec<f64> = (0..6).map(|_| rng.normal()).collect();
            assert_eq!(odin_perturb(&net, &x, &OdinConfig { eta: 0.0, temp: 10.0 }).unwrap(), x);
            let eta = 0.004;
            let xh = odin_perturb(&net, &x, &OdinConfig { eta, temp: 10.0 }).unwrap();
            for (a, b) in xh.iter().zip(&x) {
                let d = (a - b).abs();
                assert!(d == 0.0 || (d - eta).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn odin_input_gradient_matches_finite_differences() {
        let net = net();
        let mut rng = RandomSource::new(2);
        for _ in 0..50 {
            let x: Vec<f64> = (0..6).map(|_| rng.normal()).collect();
            let temp = rng.uniform_in(0.5, 100.0);
            let (y, _, g) = log_softmax_input_gradient(&net, &x, temp).unwrap();
            let f = |v: &[f64]| {
                let l: Vec<f64> = net.forward(v).unwrap().1.iter().map(|a| a / temp).collect();
                l[y] - crate::special::logsumexp(&l)
            };
            for i in 0..6 {
                let mut p = x.clone();
                p[i] += 1e-5;
                let mut m = x.clone();
                m[i] -= 1e-5;
                let n = (f(&p) - f(&m)) / 2e-5;
                let rel = (g[i] - n).abs() / g[i].abs().max(n.abs()).max(1e-6);
                assert!(rel <= 1e-4, "{} vs {n}", g[i]);
            }
        }
    }

    #[test]
    fn score_examples() {
        // zero classifier -> all logits 0
        let mut n = net();
        n.block_mut(crate::nn::Block::ClassifierW).fill(0.0);
        n.block_mut(crate::nn::Block::ClassifierB).fill(0.0);
        let x = [0.3; 6];
        let s1 = ood_score(&n, &x, &OdinConfig { eta: 0.0, temp: 1.0 }).unwrap();
        assert!((s1 + 4f64.ln()).abs() < 1e-15);
        let s2 = ood_score(&n, &x, &OdinConfig { eta: 0.0, temp: 2.0 }).unwrap();
        assert!((s2 - 2.0 * s1).abs() < 1e-15);
        let net = net();
        let cfg = OdinConfig { eta: 0.0, temp: 1.0 };
        let (_, logits) = net.forward(&x).unwrap();
        assert_eq!(
            ood_score(&net, &odin_perturb(&net, &x, &cfg).unwrap(), &cfg).unwrap(),
            energy_score(&logits, 1.0).unwrap()
        );
    }

    #[test]
    fn report_schema() {
        let s = set(&[0.1, 0.2, 0.3], &[0.5, 0.25]);
        let r = metric_report(&s, &[0, 1, 1], &[0, 1, 0], Orientation::Flipped, "0000abcd").unwrap();
        assert_eq!(r.acc_at_fpr["0"], Some(2.0 / 3.0));
        assert_eq!(r.acc_at_fpr.len(), 4);
        assert_eq!(r.acc_at_tpr.len(), 1);
    }
}
