use rayon::prelude::*;

use super::LabeledFeatureSet;
use crate::error::{Error, Result};
use crate::rng::RandomSource;
use crate::scalar::Real;
use crate::sphere::{
    compose_on_sphere, sample_uniform_sphere, sample_vmf, tangent_orthonormal, UnitVector, VmfComponent, VmfMixture,
};

const MAX_REJECTION_ATTEMPTS: usize = 10_000;

// RNG stream layout under one seed.
const STREAM_MEANS: u64 = 1;
const STREAM_TRAIN: u64 = 1_000;
const STREAM_TEST: u64 = 1_000_000;
const STREAM_OOD: u64 = 2_000_000;

/// Where the class means and concentrations come from.
#[derive(Debug, Clone, PartialEq)]
pub enum MixtureRecipe<T> {
    /// Means drawn uniformly with every pairwise angle at least `min_angle_deg`;
    /// all classes share `kappa`.
    RandomWellSeparated {
        kappa: T,
        min_angle_deg: T,
    },
    Explicit {
        means: Vec<UnitVector<T>>,
        kappas: Vec<T>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct LongTailSpec<T> {
    pub num_classes: usize,
    pub head_count: usize,
    pub imbalance_ratio: f64,
    pub dim: usize,
    pub recipe: MixtureRecipe<T>,
    pub test_per_class: usize,
    pub seed: u64,
}

impl<T: Real> LongTailSpec<T> {
    pub fn well_separated(
        num_classes: usize,
        head_count: usize,
        imbalance_ratio: f64,
        dim: usize,
        kappa: T,
        seed: u64,
    ) -> Self {
        Self {
            num_classes,
            head_count,
            imbalance_ratio,
            dim,
            recipe: MixtureRecipe::RandomWellSeparated { kappa, min_angle_deg: T::lit(60.0) },
            test_per_class: 200,
            seed,
        }
    }
}

/// `N_y = round(N_1 rho^{-(y-1)/(K-1)})` for `y = 1..K`.
pub fn exponential_class_counts(num_classes: usize, head_count: usize, imbalance_ratio: f64) -> Result<Vec<usize>> {
    if num_classes == 0 {
        return Err(Error::Spec("need at least one class".into()));
    }
    if !(imbalance_ratio >= 1.0) || !imbalance_ratio.is_finite() {
        return Err(Error::Spec(format!("imbalance ratio {imbalance_ratio} must be finite and >= 1")));
    }
    if num_classes == 1 {
        return Ok(vec![head_count]);
    }
    let span = (num_classes - 1) as f64;
    let counts: Vec<usize> = (0..num_classes)
        .map(|y| (head_count as f64 * imbalance_ratio.powf(-(y as f64) / span)).round() as usize)
        .collect();
    if counts[num_classes - 1] < 1 {
        return Err(Error::Spec(format!("tail class would be empty: round({head_count} / {imbalance_ratio}) = 0")));
    }
    Ok(counts)
}

/// `count` unit vectors in `R^dim` with all pairwise angles at least
/// `min_angle_deg`, by sequential rejection.
pub fn random_well_separated_means<T: Real>(
    count: usize,
    dim: usize,
    min_angle_deg: T,
    rng: &mut RandomSource,
) -> Result<Vec<UnitVector<T>>> {
    let max_dot = min_angle_deg.to_radians().cos();
    let mut means: Vec<UnitVector<T>> = Vec::with_capacity(count);
    let mut attempts = 0;
    while means.len() < count {
        if attempts == MAX_REJECTION_ATTEMPTS {
            return Err(Error::Recipe(format!(
                "could not place {count} means {min_angle_deg} degrees apart in dimension {dim} \
                 after {MAX_REJECTION_ATTEMPTS} draws; use fewer classes or a larger dimension"
            )));
        }
        attempts += 1;
        let cand = sample_uniform_sphere::<T>(dim, 1, rng)?.remove(0);
        if means.iter().all(|m| m.dot(&cand) <= max_dot) {
            means.push(cand);
        }
    }
    Ok(means)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LongTailData<T> {
    pub train: LabeledFeatureSet<T>,
    /// Balanced in-distribution test split.
    pub test: LabeledFeatureSet<T>,
    /// Generating mixture, with priors proportional to the train counts.
    pub mixture: VmfMixture<T>,
}

fn draw_rows<T: Real>(
    comps: &[VmfComponent<T>],
    counts: &[usize],
    seed: u64,
    base: u64,
) -> Result<(Vec<T>, Vec<usize>)> {
    let per_class: Vec<Vec<UnitVector<T>>> = comps
        .par_iter()
        .zip(counts.par_iter())
        .enumerate()
        .map(|(y, (c, &n))| sample_vmf(c, n, &mut RandomSource::with_stream(seed, base + y as u64)))
        .collect::<Result<_>>()?;
    let mut features = Vec::with_capacity(counts.iter().sum::<usize>() * comps[0].dim());
    let mut labels = Vec::with_capacity(counts.iter().sum());
    for (y, rows) in per_class.into_iter().enumerate() {
        for r in rows {
            features.extend_from_slice(&r);
            labels.push(y);
        }
    }
    Ok((features, labels))
}

/// Long-tailed train split and balanced test split drawn from a vMF mixture.
/// Each class and split uses its own RNG stream.
pub fn generate_long_tailed_vmf<T: Real>(spec: &LongTailSpec<T>) -> Result<LongTailData<T>> {
    let k = spec.num_classes;
    let counts = exponential_class_counts(k, spec.head_count, spec.imbalance_ratio)?;
    let comps: Vec<VmfComponent<T>> = match &spec.recipe {
        MixtureRecipe::RandomWellSeparated { kappa, min_angle_deg } => {
            let mut rng = RandomSource::with_stream(spec.seed, STREAM_MEANS);
            random_well_separated_means(k, spec.dim, *min_angle_deg, &mut rng)?
                .into_iter()
                .map(|mu| VmfComponent::new(mu, *kappa))
                .collect::<Result<_>>()?
        }
        MixtureRecipe::Explicit { means, kappas } => {
            if means.len() != k || kappas.len() != k {
                return Err(Error::Shape { expected: k, got: means.len().min(kappas.len()) });
            }
            if means.iter().any(|m| m.dim() != spec.dim) {
                return Err(Error::Spec(format!("explicit means must have dimension {}", spec.dim)));
            }
            means.iter().zip(kappas).map(|(m, &kp)| VmfComponent::new(m.clone(), kp)).collect::<Result<_>>()?
        }
    };
    let (train_x, train_y) = draw_rows(&comps, &counts, spec.seed, STREAM_TRAIN)?;
    let (test_x, test_y) = draw_rows(&comps, &vec![spec.test_per_class; k], spec.seed, STREAM_TEST)?;
    Ok(LongTailData {
        train: LabeledFeatureSet::new(spec.dim, k, train_x, Some(train_y), true)?,
        test: LabeledFeatureSet::new(spec.dim, k, test_x, Some(test_y), true)?,
        mixture: VmfMixture::from_counts(comps, &counts)?,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub enum OodRecipe<T> {
    UniformSphere,
    /// vMF clusters around directions at least `min_angle_deg` away from
    /// every in-distribution mean.
    ShiftedMixture {
        id_means: Vec<UnitVector<T>>,
        kappa: T,
        components: usize,
        min_angle_deg: T,
    },
}

/// Directions obtained by rotating in-distribution means (round-robin) by
/// `min_angle_deg + 15` degrees along random tangents, kept only when every
/// in-distribution mean is at least `min_angle_deg` away.
pub fn shifted_means<T: Real>(
    id_means: &[UnitVector<T>],
    count: usize,
    min_angle_deg: T,
    rng: &mut RandomSource,
) -> Result<Vec<UnitVector<T>>> {
    if id_means.is_empty() {
        return Err(Error::Recipe("shifted mixture needs at least one in-distribution mean".into()));
    }
    let max_dot = min_angle_deg.to_radians().cos();
    let theta = (min_angle_deg + T::lit(15.0)).to_radians();
    let mut out = Vec::with_capacity(count);
    for c in 0..count {
        let base = &id_means[c % id_means.len()];
        let mut placed = false;
        for _ in 0..MAX_REJECTION_ATTEMPTS {
            let v = tangent_orthonormal(base, rng)?;
            let cand = UnitVector::new(compose_on_sphere(base, theta.cos(), &v))?;
            if id_means.iter().all(|m| m.dot(&cand) <= max_dot) {
                out.push(cand);
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(Error::Recipe(format!(
                "could not rotate a mean {min_angle_deg} degrees clear of all {} in-distribution means",
                id_means.len()
            )));
        }
    }
    Ok(out)
}

/// Unlabeled, normalized out-of-distribution features.
pub fn generate_ood_set<T: Real>(
    recipe: &OodRecipe<T>,
    n: usize,
    dim: usize,
    seed: u64,
) -> Result<LabeledFeatureSet<T>> {
    let mut rng = RandomSource::with_stream(seed, STREAM_OOD);
    let rows: Vec<UnitVector<T>> = match recipe {
        OodRecipe::UniformSphere => sample_uniform_sphere(dim, n, &mut rng)?,
        OodRecipe::ShiftedMixture { id_means, kappa, components, min_angle_deg } => {
            if *components == 0 {
                return Err(Error::Recipe("shifted mixture needs at least one component".into()));
            }
            if id_means.iter().any(|m| m.dim() != dim) {
                return Err(Error::Spec(format!("in-distribution means must have dimension {dim}")));
            }
            let means = shifted_means(id_means, *components, *min_angle_deg, &mut rng)?;
            let mut rows = Vec::with_capacity(n);
            for (c, mu) in means.into_iter().enumerate() {
                let share = n / components + usize::from(c < n % components);
                rows.extend(sample_vmf(&VmfComponent::new(mu, *kappa)?, share, &mut rng)?);
            }
            rows
        }
    };
    let features = rows.into_iter().flat_map(UnitVector::into_vec).collect();
    LabeledFeatureSet::unlabeled(dim, features, true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sphere::mean_resultant;

    #[test]
    fn class_count_examples() {
        assert_eq!(exponential_class_counts(2, 100, 100.0).unwrap(), vec![100, 1]);
        let c = exponential_class_counts(10, 1000, 100.0).unwrap();
        assert_eq!(c[9], 10);
        // independent evaluation of 1000 * 100^(-4/9)
        assert_eq!(c[4], (1000.0 * 10f64.powf(-8.0 / 9.0)).round() as usize);
        assert_eq!(c[4], 129);
        assert_eq!(exponential_class_counts(4, 50, 1.0).unwrap(), vec![50; 4]);
        assert!(exponential_class_counts(3, 10, 100.0).is_err());
        assert!(exponential_class_counts(3, 10, 0.5).is_err());
    }

    proptest::proptest! {
        #[test]
        fn class_counts_monotone(k in 2usize..30, n1 in 1usize..5000, rho in 1.0f64..200.0) {
            if let Ok(c) = exponential_class_counts(k, n1, rho) {
                proptest::prop_assert_eq!(c[0], n1);
                proptest::prop_assert_eq!(c[k - 1], (n1 as f64 / rho).round() as usize);
                proptest::prop_assert!(c.windows(2).all(|w| w[0] >= w[1]));
            } else {
                proptest::prop_assert!((n1 as f64 / rho).round() < 1.0);
            }
        }
    }

    #[test]
    fn generation_is_deterministic_and_long_tailed() {
        let spec = LongTailSpec::well_separated(10, 1000, 100.0, 32, 100.0f64, 7);
        let a = generate_long_tailed_vmf(&spec).unwrap();
        let b = generate_long_tailed_vmf(&spec).unwrap();
        assert_eq!(a, b);
        let counts = a.train.class_counts();
        assert_eq!(counts[0] / counts[9], 100);
        assert_eq!(a.test.class_counts(), &[200; 10]);
        for y in 0..10 {
            let rows: Vec<&[f64]> = a.train.indices_of_classes(&[y]).into_iter().map(|i| a.train.row(i)).collect();
            if rows.len() >= 50 {
                let dir = mean_resultant(&rows).unwrap().direction().unwrap();
                assert!(dir.dot(&a.mixture.component(y).mu) >= 0.9);
            }
        }
        for i in 0..10 {
            for j in 0..i {
                assert!(a.mixture.component(i).mu.dot(&a.mixture.component(j).mu) <= 0.5 + 1e-12);
            }
        }
    }

    #[test]
    fn separation_exhaustion_is_a_recipe_error() {
        let spec = LongTailSpec::well_separated(10, 100, 10.0, 2, 10.0f64, 1);
        assert!(matches!(generate_long_tailed_vmf(&spec), Err(Error::Recipe(_))));
    }

    #[test]
    fn uniform_ood_has_small_resultant() {
        let set = generate_ood_set::<f64>(&OodRecipe::UniformSphere, 100_000, 16, 3).unwrap();
        let rows: Vec<&[f64]> = set.rows().collect();
        assert!(mean_resultant(&rows).unwrap().length < 0.02);
        let empty = generate_ood_set::<f64>(&OodRecipe::UniformSphere, 0, 16, 3).unwrap();
        assert!(empty.is_empty());
    }

    #[test]
    fn shifted_means_clear_every_id_mean() {
        let mut rng = RandomSource::new(4);
        let id = random_well_separated_means(10, 32, 60.0f64, &mut rng).unwrap();
        let shifted = shifted_means(&id, 20, 45.0, &mut rng).unwrap();
        for s in &shifted {
            let max = id.iter().map(|m| m.dot(s)).fold(f64::MIN, f64::max);
            assert!(max <= std::f64::consts::FRAC_1_SQRT_2 + 1e-12);
        }
        let recipe = OodRecipe::ShiftedMixture { id_means: id, kappa: 50.0, components: 3, min_angle_deg: 45.0 };
        assert_eq!(generate_ood_set(&recipe, 100, 32, 9).unwrap().len(), 100);
    }
}
