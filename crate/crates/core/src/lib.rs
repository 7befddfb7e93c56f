//! Long-tailed out-of-distribution detection on hypersphere embeddings with
//! von Mises-Fisher class models and geometrically synthesized outliers.
//!
//! Everything is generic over [`Real`] (`f32` or `f64`); the `*F64` and
//! `*F32` aliases below fix the scalar for convenience.

// `!(x > 0)` style guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data;
pub mod error;
pub mod eval;
pub mod gos;
pub mod gradcheck;
pub mod losses;
pub mod nn;
pub mod rng;
pub mod scalar;
pub mod special;
pub mod sphere;

pub use error::{Error, Result};
pub use gos::{AnchorKappa, AnnulusSpec, Chi2Stats, KsReport, SynthesizedOutlier};
pub use losses::{EnergyHead, LossParts, LossWeights};
pub use rng::RandomSource;
pub use scalar::Real;
pub use sphere::{UnitVector, VmfComponent, VmfMixture, KAPPA_MAX};

pub type UnitVectorF64 = UnitVector<f64>;
pub type UnitVectorF32 = UnitVector<f32>;
pub type VmfComponentF64 = VmfComponent<f64>;
pub type VmfComponentF32 = VmfComponent<f32>;
pub type VmfMixtureF64 = VmfMixture<f64>;
pub type VmfMixtureF32 = VmfMixture<f32>;
pub type AnnulusSpecF64 = AnnulusSpec<f64>;
pub type LossWeightsF64 = LossWeights<f64>;
pub type EnergyHeadF64 = EnergyHead<f64>;
pub type TinyNetF64 = nn::TinyNet<f64>;
pub type TinyNetF32 = nn::TinyNet<f32>;
pub type TrainConfigF64 = nn::TrainConfig<f64>;
pub type LabeledFeatureSetF64 = data::LabeledFeatureSet<f64>;
pub type LabeledFeatureSetF32 = data::LabeledFeatureSet<f32>;
pub type OdinConfigF64 = eval::OdinConfig<f64>;
