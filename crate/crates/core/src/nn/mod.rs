//! A small differentiable model: one-hidden-layer encoder with unit-norm
//! output, linear classifier and the energy polarization head, all stored
//! in one flat parameter vector.

mod checkpoint;
mod objective;
mod optim;
mod train;

pub use checkpoint::{
    load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use objective::{batch_objective, BatchEval};
pub use optim::{OptimizerKind, OptimizerState};
pub use train::{fit_class_mixture, refresh_mixture, train, EpochRecord, TrainConfig, TrainReport};

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::EnergyHead;
use crate::rng::RandomSource;
use crate::scalar::{norm, Real};
use crate::sphere::UnitVector;

/// Layer sizes: raw input, encoder hidden, feature, classes, energy-head hidden.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetDims {
    pub input: usize,
    pub hidden: usize,
    pub feature: usize,
    pub classes: usize,
    pub head_hidden: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    #[default]
    Relu,
    Identity,
}

impl Activation {
    fn apply<T: Real>(self, x: T) -> T {
        match self {
            Activation::Relu => x.max(T::zero()),
            Activation::Identity => x,
        }
    }

    fn slope<T: Real>(self, x: T) -> T {
        match self {
            Activation::Relu if x <= T::zero() => T::zero(),
            _ => T::one(),
        }
    }
}

/// Parameter blocks in storage order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Block {
    EncoderW1,
    EncoderB1,
    EncoderW2,
    EncoderB2,
    ClassifierW,
    ClassifierB,
    HeadW1,
    HeadB1,
    HeadW2,
    HeadB2,
}

impl Block {
    pub const ALL: [Block; 10] = [
        Block::EncoderW1,
        Block::EncoderB1,
        Block::EncoderW2,
        Block::EncoderB2,
        Block::ClassifierW,
        Block::ClassifierB,
        Block::HeadW1,
        Block::HeadB1,
        Block::HeadW2,
        Block::HeadB2,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Block::EncoderW1 => "encoder.w1",
            Block::EncoderB1 => "encoder.b1",
            Block::EncoderW2 => "encoder.w2",
            Block::EncoderB2 => "encoder.b2",
            Block::ClassifierW => "classifier.w",
            Block::ClassifierB => "classifier.b",
            Block::HeadW1 => "energy_head.w1",
            Block::HeadB1 => "energy_head.b1",
            Block::HeadW2 => "energy_head.w2",
            Block::HeadB2 => "energy_head.b2",
        }
    }

    fn len(self, d: &NetDims) -> usize {
        match self {
            Block::EncoderW1 => d.hidden * d.input,
            Block::EncoderB1 => d.hidden,
            Block::EncoderW2 => d.feature * d.hidden,
            Block::EncoderB2 => d.feature,
            Block::ClassifierW => d.classes * d.feature,
            Block::ClassifierB => d.classes,
            Block::HeadW1 | Block::HeadB1 | Block::HeadW2 => d.head_hidden,
            Block::HeadB2 => 1,
        }
    }
}

impl NetDims {
    pub fn validate(&self) -> Result<()> {
        if self.input == 0 || self.hidden == 0 || self.classes == 0 || self.head_hidden == 0 {
            return Err(Error::Spec(format!("all layer sizes must be >= 1: {self:?}")));
        }
        if self.feature < 2 {
            return Err(Error::Spec(format!("feature dimension must be >= 2, got {}", self.feature)));
        }
        Ok(())
    }

    pub fn range(&self, block: Block) -> Range<usize> {
        let mut start = 0;
        for b in Block::ALL {
            let len = b.len(self);
            if b == block {
                return start..start + len;
            }
            start += len;
        }
        unreachable!("every block is listed")
    }

    pub fn num_params(&self) -> usize {
        Block::ALL.iter().map(|b| b.len(self)).sum()
    }

    /// Block owning flat parameter index `i`.
    pub fn block_of(&self, i: usize) -> Option<Block> {
        Block::ALL.into_iter().find(|&b| self.range(b).contains(&i))
    }
}

/// Intermediate values of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace<T> {
    pub pre_hidden: Vec<T>,
    pub hidden: Vec<T>,
    /// Encoder output before normalization (after any degenerate fix-up).
    pub pre_feature: Vec<T>,
    pub pre_norm: T,
    pub feature: UnitVector<T>,
    pub logits: Vec<T>,
    /// The pre-normalization vector was zero and got nudged along axis 0.
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TinyNet<T> {
    dims: NetDims,
    activation: Activation,
    params: Vec<T>,
}

fn fill_uniform<T: Real>(out: &mut [T], bound: f64, rng: &mut RandomSource) {
    for v in out {
        *v = T::lit(rng.uniform_in(-bound, bound));
    }
}

impl<T: Real> TinyNet<T> {
    /// Linear layers uniform on `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`; energy
    /// head as in [`EnergyHead::new`].
    pub fn new(dims: NetDims, activation: Activation, rng: &mut RandomSource) -> Result<Self> {
        dims.validate()?;
        let mut params = vec![T::zero(); dims.num_params()];
        let layers = [
            (Block::EncoderW1, dims.input),
            (Block::EncoderB1, dims.input),
            (Block::EncoderW2, dims.hidden),
            (Block::EncoderB2, dims.hidden),
            (Block::ClassifierW, dims.feature),
            (Block::ClassifierB, dims.feature),
        ];
        for (block, fan_in) in layers {
            fill_uniform(&mut params[dims.range(block)], 1.0 / (fan_in as f64).sqrt(), rng);
        }
        let mut net = Self { dims, activation, params };
        net.set_energy_head(&EnergyHead::new(dims.head_hidden, rng));
        Ok(net)
    }

    pub fn from_params(dims: NetDims, activation: Activation, params: Vec<T>) -> Result<Self> {
        dims.validate()?;
        if params.len() != dims.num_params() {
            return Err(Error::Shape { expected: dims.num_params(), got: params.len() });
        }
        if let Some(i) = params.iter().position(|v| !v.is_finite()) {
            let block = dims.block_of(i).map_or("?", Block::name);
            return Err(Error::Numeric(format!("non-finite parameter {i} in {block}")));
        }
        Ok(Self { dims, activation, params })
    }

    pub fn dims(&self) -> NetDims {
        self.dims
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[T] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [T] {
        &mut self.params
    }

    pub fn block(&self, block: Block) -> &[T] {
        &self.params[self.dims.range(block)]
    }

    pub fn block_mut(&mut self, block: Block) -> &mut [T] {
        let r = self.dims.range(block);
        &mut self.params[r]
    }

    pub fn energy_head(&self) -> EnergyHead<T> {
        EnergyHead {
            w1: self.block(Block::HeadW1).to_vec(),
            b1: self.block(Block::HeadB1).to_vec(),
            w2: self.block(Block::HeadW2).to_vec(),
            b2: self.block(Block::HeadB2)[0],
        }
    }

    pub fn set_energy_head(&mut self, head: &EnergyHead<T>) {
        self.block_mut(Block::HeadW1).copy_from_slice(&head.w1);
        self.block_mut(Block::HeadB1).copy_from_slice(&head.b1);
        self.block_mut(Block::HeadW2).copy_from_slice(&head.w2);
        self.block_mut(Block::HeadB2)[0] = head.b2;
    }

    pub fn forward(&self, x: &[T]) -> Result<(UnitVector<T>, Vec<T>)> {
        let t = self.forward_trace(x)?;
        Ok((t.feature, t.logits))
    }

    pub fn forward_trace(&self, x: &[T]) -> Result<Trace<T>> {
        let d = self.dims;
        if x.len() != d.input {
            return Err(Error::Shape { expected: d.input, got: x.len() });
        }
        let w1 = self.block(Block::EncoderW1);
        let b1 = self.block(Block::EncoderB1);
        let pre_hidden: Vec<T> = (0..d.hidden)
            .map(|h| b1[h] + w1[h * d.input..(h + 1) * d.input].iter().zip(x).map(|(&w, &v)| w * v).sum::<T>())
            .collect();
        let hidden: Vec<T> = pre_hidden.iter().map(|&p| self.activation.apply(p)).collect();
        let w2 = self.block(Block::EncoderW2);
        let b2 = self.block(Block::EncoderB2);
        let mut pre_feature: Vec<T> = (0..d.feature)
            .map(|f| b2[f] + w2[f * d.hidden..(f + 1) * d.hidden].iter().zip(&hidden).map(|(&w, &v)| w * v).sum::<T>())
            .collect();
        if !pre_feature.iter().all(|v| v.is_finite()) {
            return Err(Error::Numeric("non-finite encoder output".into()));
        }
        let mut pre_norm = norm(&pre_feature);
        let degenerate = pre_norm == T::zero();
        if degenerate {
            pre_feature[0] = T::lit(1e-12);
            pre_norm = T::lit(1e-12);
        }
        let feature = UnitVector::from_raw(pre_feature.iter().map(|&v| v / pre_norm).collect());
        let logits = self.logits_of(&feature);
        Ok(Trace { pre_hidden, hidden, pre_feature, pre_norm, feature, logits, degenerate })
    }

    /// Classifier applied directly to a feature-space vector.
    pub fn logits_of(&self, z: &[T]) -> Vec<T> {
        let d = self.dims;
        let w = self.block(Block::ClassifierW);
        let b = self.block(Block::ClassifierB);
        (0..d.classes)
            .map(|k| b[k] + w[k * d.feature..(k + 1) * d.feature].iter().zip(z).map(|(&a, &v)| a * v).sum::<T>())
            .collect()
    }

    /// Adds classifier parameter gradients for upstream `grad_logits` at
    /// feature `z`; returns the gradient with respect to `z`.
    pub fn classifier_backward(&self, z: &[T], grad_logits: &[T], grads: Option<&mut [T]>) -> Vec<T> {
        let d = self.dims;
        let w = self.block(Block::ClassifierW);
        let mut gz = vec![T::zero(); d.feature];
        for (k, &g) in grad_logits.iter().enumerate() {
            for (gzf, &wv) in gz.iter_mut().zip(&w[k * d.feature..(k + 1) * d.feature]) {
                *gzf += g * wv;
            }
        }
        if let Some(grads) = grads {
            let rw = d.range(Block::ClassifierW);
            let rb = d.range(Block::ClassifierB);
            for (k, &g) in grad_logits.iter().enumerate() {
                for (f, &zv) in z.iter().enumerate() {
                    grads[rw.start + k * d.feature + f] += g * zv;
                }
                grads[rb.start + k] += g;
            }
        }
        gz
    }

    /// Reverse pass for one sample. `grad_feature` is the loss gradient with
    /// respect to the unit feature from terms other than the logits. Adds
    /// parameter gradients into `grads` when given and returns the gradient
    /// with respect to the input.
    pub fn backward(
        &self,
        x: &[T],
        trace: &Trace<T>,
        grad_feature: &[T],
        grad_logits: &[T],
        mut grads: Option<&mut [T]>,
    ) -> Vec<T> {
        let d = self.dims;
        let mut gz = self.classifier_backward(&trace.feature, grad_logits, grads.as_deref_mut());
        for (a, &b) in gz.iter_mut().zip(grad_feature) {
            *a += b;
        }
        let gv = normalization_backward(&trace.feature, trace.pre_norm, &gz);

        let w2 = self.block(Block::EncoderW2);
        let mut gh = vec![T::zero(); d.hidden];
        for (f, &g) in gv.iter().enumerate() {
            for (ghv, &wv) in gh.iter_mut().zip(&w2[f * d.hidden..(f + 1) * d.hidden]) {
                *ghv += g * wv;
            }
        }
        let gpre: Vec<T> = gh.iter().zip(&trace.pre_hidden).map(|(&g, &p)| g * self.activation.slope(p)).collect();
        let w1 = self.block(Block::EncoderW1);
        let mut gx = vec![T::zero(); d.input];
        for (h, &g) in gpre.iter().enumerate() {
            if g != T::zero() {
                for (gxv, &wv) in gx.iter_mut().zip(&w1[h * d.input..(h + 1) * d.input]) {
                    *gxv += g * wv;
                }
            }
        }
        if let Some(grads) = grads {
            let r = d.range(Block::EncoderW2);
            for (f, &g) in gv.iter().enumerate() {
                for (hi, &hv) in trace.hidden.iter().enumerate() {
                    grads[r.start + f * d.hidden + hi] += g * hv;
                }
            }
            let r = d.range(Block::EncoderB2);
            for (f, &g) in gv.iter().enumerate() {
                grads[r.start + f] += g;
            }
            let r = d.range(Block::EncoderW1);
            for (h, &g) in gpre.iter().enumerate() {
                for (i, &xv) in x.iter().enumerate() {
                    grads[r.start + h * d.input + i] += g * xv;
                }
            }
            let r = d.range(Block::EncoderB1);
            for (h, &g) in gpre.iter().enumerate() {
                grads[r.start + h] += g;
            }
        }
        gx
    }

    /// CRC-32C over the little-endian `f64` encoding of every parameter.
    pub fn param_digest(&self) -> u32 {
        let mut bytes = Vec::with_capacity(8 * self.params.len());
        for v in &self.params {
            bytes.extend_from_slice(&v.as_f64().to_le_bytes());
        }
        crc32c::crc32c(&bytes)
    }
}

/// Gradient with respect to the pre-normalization vector for an upstream
/// gradient `g` on `z = v / |v|`.
pub fn normalization_backward<T: Real>(z: &[T], pre_norm: T, g: &[T]) -> Vec<T> {
    let proj = g.iter().zip(z).fold(T::zero(), |a, (&x, &y)| a + x * y);
    g.iter().zip(z).map(|(&gi, &zi)| (gi - proj * zi) / pre_norm).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sphere::normalize;

    fn dims() -> NetDims {
        NetDims { input: 5, hidden: 7, feature: 8, classes: 3, head_hidden: 16 }
    }

    #[test]
    fn layout_is_contiguous() {
        let d = dims();
        let mut end = 0;
        for b in Block::ALL {
            let r = d.range(b);
            assert_eq!(r.start, end);
            end = r.end;
        }
        assert_eq!(end, d.num_params());
        assert_eq!(d.block_of(0), Some(Block::EncoderW1));
        assert_eq!(d.block_of(end - 1), Some(Block::HeadB2));
    }

    #[test]
    fn feature_is_unit_and_deterministic() {
        let mut rng = RandomSource::new(1);
        let net = TinyNet::<f64>::new(dims(), Activation::Relu, &mut rng).unwrap();
        for _ in 0..50 {
            let x: Vec<f64> = (0..5).map(|_| rng.normal() * 3.0).collect();
            let (z, logits) = net.forward(&x).unwrap();
            assert!((norm(&z) - 1.0).abs() < 1e-9);
            assert_eq!(logits.len(), 3);
            assert_eq!(net.forward(&x).unwrap(), (z, logits));
        }
        assert!(net.forward(&[0.0; 4]).is_err());
    }

    #[test]
    fn zero_encoder_weights_give_constant_feature() {
        let mut rng = RandomSource::new(2);
        let mut net = TinyNet::<f64>::new(dims(), Activation::Relu, &mut rng).unwrap();
        net.block_mut(Block::EncoderW1).fill(0.0);
        let b1 = net.block(Block::EncoderB1).to_vec();
        let act: Vec<f64> = b1.iter().map(|v| v.max(0.0)).collect();
        let (w2, b2) = (net.block(Block::EncoderW2).to_vec(), net.block(Block::EncoderB2).to_vec());
        let v: Vec<f64> = (0..8).map(|f| b2[f] + (0..7).map(|h| w2[f * 7 + h] * act[h]).sum::<f64>()).collect();
        let want = normalize(&v).unwrap();
        for _ in 0..5 {
            let x: Vec<f64> = (0..5).map(|_| rng.normal()).collect();
            let z = net.forward(&x).unwrap().0;
            assert!(z.iter().zip(want.iter()).all(|(a, b)| (a - b).abs() < 1e-15));
        }
    }

    #[test]
    fn degenerate_feature_is_nudged() {
        let mut rng = RandomSource::new(3);
        let mut net = TinyNet::<f64>::new(dims(), Activation::Relu, &mut rng).unwrap();
        net.block_mut(Block::EncoderW2).fill(0.0);
        net.block_mut(Block::EncoderB2).fill(0.0);
        let t = net.forward_trace(&[1.0; 5]).unwrap();
        assert!(t.degenerate);
        assert_eq!(t.feature[0], 1.0);
    }

    #[test]
    fn normalization_gradient_is_tangent() {
        let mut rng = RandomSource::new(4);
        for _ in 0..100 {
            let v: Vec<f64> = (0..8).map(|_| rng.normal()).collect();
            let z = normalize(&v).unwrap();
            let g: Vec<f64> = (0..8).map(|_| rng.normal()).collect();
            let gv = normalization_backward(&z, norm(&v), &g);
            assert!(z.dot(&gv).abs() < 1e-9);
        }
    }

    #[test]
    fn input_gradient_matches_finite_differences() {
        let mut rng = RandomSource::new(5);
        let net = TinyNet::<f64>::new(dims(), Activation::Relu, &mut rng).unwrap();
        for _ in 0..20 {
            let x: Vec<f64> = (0..5).map(|_| rng.normal()).collect();
            let gl: Vec<f64> = (0..3).map(|_| rng.normal()).collect();
            let gf: Vec<f64> = (0..8).map(|_| rng.normal()).collect();
            let f = |x: &[f64]| {
                let t = net.forward_trace(x).unwrap();
                t.logits.iter().zip(&gl).map(|(a, b)| a * b).sum::<f64>()
                    + t.feature.iter().zip(&gf).map(|(a, b)| a * b).sum::<f64>()
            };
            let t = net.forward_trace(&x).unwrap();
            let gx = net.backward(&x, &t, &gf, &gl, None);
            for i in 0..5 {
                let mut p = x.clone();
                p[i] += 1e-6;
                let mut m = x.clone();
                m[i] -= 1e-6;
                let n = (f(&p) - f(&m)) / 2e-6;
                assert!((gx[i] - n).abs() <= 1e-6 * n.abs().max(1.0), "{} vs {n}", gx[i]);
            }
        }
    }
}
