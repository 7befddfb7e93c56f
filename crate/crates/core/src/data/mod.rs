//! Feature sets, synthetic long-tailed generators and on-disk formats.

mod file;
mod synth;

pub use file::{load_csv, load_features, save_csv, save_features, FEATURE_FILE_MAGIC, FEATURE_FILE_VERSION};
pub use synth::{
    exponential_class_counts, generate_long_tailed_vmf, generate_ood_set, random_well_separated_means, shifted_means,
    LongTailData, LongTailSpec, MixtureRecipe, OodRecipe,
};

use crate::error::{Error, Result};
use crate::scalar::{norm, Real};

/// Tolerance on row norms when a set claims to be normalized.
pub const NORMALIZED_TOLERANCE: f64 = 1e-6;

/// Row-major `n x dim` matrix with optional 0-based labels and optional
/// per-row auxiliary pair (used for synthesized outliers: anchor class and
/// cosine to the anchor mean).
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledFeatureSet<T> {
    dim: usize,
    num_classes: usize,
    features: Vec<T>,
    labels: Option<Vec<usize>>,
    aux: Option<Vec<[T; 2]>>,
    normalized: bool,
    class_counts: Vec<usize>,
}

impl<T: Real> LabeledFeatureSet<T> {
    pub fn new(
        dim: usize,
        num_classes: usize,
        features: Vec<T>,
        labels: Option<Vec<usize>>,
        normalized: bool,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Spec("feature dimension must be >= 1".into()));
        }
        if !features.len().is_multiple_of(dim) {
            return Err(Error::Shape { expected: dim * (features.len() / dim + 1), got: features.len() });
        }
        let n = features.len() / dim;
        if !features.iter().all(|v| v.is_finite()) {
            return Err(Error::Numeric("non-finite feature value".into()));
        }
        let mut class_counts = vec![0; num_classes];
        if let Some(labels) = &labels {
            if labels.len() != n {
                return Err(Error::Shape { expected: n, got: labels.len() });
            }
            for (i, &y) in labels.iter().enumerate() {
                if y >= num_classes {
                    return Err(Error::Domain(format!("row {i} has label {y} but there are {num_classes} classes")));
                }
                class_counts[y] += 1;
            }
        }
        if normalized {
            let tol = T::lit(NORMALIZED_TOLERANCE);
            for (i, row) in features.chunks(dim).enumerate() {
                if (norm(row) - T::one()).abs() > tol {
                    return Err(Error::Degenerate(format!("row {i} is flagged normalized but has norm {}", norm(row))));
                }
            }
        }
        Ok(Self { dim, num_classes, features, labels, aux: None, normalized, class_counts })
    }

    pub fn unlabeled(dim: usize, features: Vec<T>, normalized: bool) -> Result<Self> {
        Self::new(dim, 0, features, None, normalized)
    }

    /// Attaches one auxiliary pair per row.
    pub fn with_aux(mut self, aux: Vec<[T; 2]>) -> Result<Self> {
        if aux.len() != self.len() {
            return Err(Error::Shape { expected: self.len(), got: aux.len() });
        }
        self.aux = Some(aux);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.features.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn features(&self) -> &[T] {
        &self.features
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> std::slice::ChunksExact<'_, T> {
        self.features.chunks_exact(self.dim)
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    pub fn aux(&self) -> Option<&[[T; 2]]> {
        self.aux.as_deref()
    }

    /// Per-class counts; all zero for unlabeled sets.
    pub fn class_counts(&self) -> &[usize] {
        &self.class_counts
    }

    /// Rows whose label is in `classes`, in original order.
    pub fn indices_of_classes(&self, classes: &[usize]) -> Vec<usize> {
        match &self.labels {
            Some(l) => (0..l.len()).filter(|&i| classes.contains(&l[i])).collect(),
            None => Vec::new(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validation() {
        assert!(LabeledFeatureSet::new(2, 2, vec![1.0, 0.0, 0.0, 1.0], Some(vec![0, 1]), true).is_ok());
        assert!(LabeledFeatureSet::new(2, 2, vec![1.0, 0.0, 0.0], None, false).is_err());
        assert!(LabeledFeatureSet::new(2, 2, vec![1.0, 0.0], Some(vec![2]), false).is_err());
        assert!(LabeledFeatureSet::new(2, 2, vec![1.0, 1.0], Some(vec![0]), true).is_err());
        assert!(LabeledFeatureSet::new(2, 1, vec![f64::NAN, 0.0], None, false).is_err());
        let s = LabeledFeatureSet::new(1, 3, vec![0.5; 4], Some(vec![0, 2, 2, 0]), false).unwrap();
        assert_eq!(s.class_counts(), &[2, 0, 2]);
        assert_eq!(s.indices_of_classes(&[2]), vec![1, 2]);
        let empty = LabeledFeatureSet::<f64>::unlabeled(4, vec![], true).unwrap();
        assert_eq!(empty.len(), 0);
    }
}
