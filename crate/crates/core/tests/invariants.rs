//! Property tests for the public API, one block per module.

use proptest::prelude::*;
use vmf_gos::data::{exponential_class_counts, load_features, save_features, LabeledFeatureSet};
use vmf_gos::gos::{predicted_similarity_interval, synthesize_balanced_batch};
use vmf_gos::losses::{energy_score, epr_loss, log_sum_exp, omega_ood, tla_loss};
use vmf_gos::sphere::{
    estimate_kappa, mixture_log_density, normalize, sample_uniform_sphere, sample_vmf, tangent_orthonormal,
    vmf_log_density,
};
use vmf_gos::{AnnulusSpec, EnergyHead, RandomSource, UnitVector, VmfComponent, VmfMixture};

fn unit(dim: usize, rng: &mut RandomSource) -> UnitVector<f64> {
    sample_uniform_sphere(dim, 1, rng).unwrap().remove(0)
}

fn mixture(k: usize, dim: usize, rng: &mut RandomSource) -> VmfMixture<f64> {
    let comps = (0..k).map(|_| VmfComponent::new(unit(dim, rng), rng.uniform_in(0.0, 200.0)).unwrap()).collect();
    let priors: Vec<f64> = (0..k).map(|_| rng.uniform_in(0.05, 1.0)).collect();
    let total: f64 = priors.iter().sum();
    VmfMixture::new(comps, priors.iter().map(|p| p / total).collect()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn normalize_emits_unit_vectors(v in prop::collection::vec(-1e6f64..1e6, 2..64)) {
        prop_assume!(v.iter().any(|&x| x != 0.0));
        let u = normalize(&v).unwrap();
        let n: f64 = u.as_slice().iter().map(|x| x * x).sum::<f64>().sqrt();
        prop_assert!((n - 1.0).abs() <= 1e-9);
    }

    #[test]
    fn mixture_density_obeys_log_sum_exp_bounds(seed in any::<u64>(), k in 1usize..8, dim in 2usize..32) {
        let mut rng = RandomSource::new(seed);
        let mix = mixture(k, dim, &mut rng);
        let z = unit(dim, &mut rng);
        let best = mix
            .components()
            .iter()
            .zip(mix.log_priors())
            .map(|(c, lp)| lp + vmf_log_density(c, z.as_slice()).unwrap())
            .fold(f64::NEG_INFINITY, f64::max);
        let ld = mixture_log_density(&mix, z.as_slice()).unwrap();
        prop_assert!(ld >= best - 1e-12 && ld <= best + (k as f64).ln() + 1e-12);
    }

    #[test]
    fn tangent_directions_are_orthonormal(seed in any::<u64>(), dim in 2usize..128) {
        let mut rng = RandomSource::new(seed);
        let mu = unit(dim, &mut rng);
        let v = tangent_orthonormal(&mu, &mut rng).unwrap();
        let n: f64 = v.as_slice().iter().map(|x| x * x).sum::<f64>().sqrt();
        prop_assert!((n - 1.0).abs() <= 1e-9);
        prop_assert!(mu.dot(v.as_slice()).abs() <= 1e-9);
    }

    #[test]
    fn outliers_are_unit_and_reproduce_their_similarity(seed in any::<u64>(), k in 1usize..6, dim in 2usize..64) {
        let mut rng = RandomSource::new(seed);
        let comps = (0..k).map(|_| VmfComponent::new(unit(dim, &mut rng), rng.uniform_in(0.5, 1e4)).unwrap()).collect();
        let mix = VmfMixture::uniform(comps).unwrap();
        let batch = synthesize_balanced_batch(&mix, 5, &AnnulusSpec::new(2.0, 3.0).unwrap(), &mut rng).unwrap();
        for o in &batch {
            let n: f64 = o.vector.as_slice().iter().map(|x| x * x).sum::<f64>().sqrt();
            prop_assert!((n - 1.0).abs() <= 1e-9);
            prop_assert!((mix.component(o.anchor_class).mu.dot(o.vector.as_slice()) - o.similarity).abs() <= 1e-9);
        }
    }

    #[test]
    fn unclamped_similarities_stay_inside_the_interval(seed in any::<u64>(), dim in 2usize..128) {
        let mut rng = RandomSource::new(seed);
        // no clamping once 2 kappa exceeds the outer displacement
        let floor = ((dim - 1) as f64 + 3.0 * (2.0 * (dim - 1) as f64).sqrt()) / 2.0;
        let kappa = floor * rng.uniform_in(1.01, 50.0);
        let annulus = AnnulusSpec::new(2.0, 3.0).unwrap();
        let mix = VmfMixture::uniform(vec![VmfComponent::new(unit(dim, &mut rng), kappa).unwrap()]).unwrap();
        let (lo, hi) = predicted_similarity_interval(dim, kappa, &annulus).unwrap();
        for o in synthesize_balanced_batch(&mix, 50, &annulus, &mut rng).unwrap() {
            prop_assert!(o.similarity >= lo && o.similarity <= hi, "{} not in [{lo}, {hi}]", o.similarity);
        }
    }

    #[test]
    fn balance_ignores_priors(seed in any::<u64>(), k in 1usize..8, per_class in 1usize..20) {
        let mut rng = RandomSource::new(seed);
        let mix = mixture(k, 8, &mut rng);
        prop_assume!(mix.components().iter().all(|c| c.kappa > 0.0));
        let batch = synthesize_balanced_batch(&mix, per_class, &AnnulusSpec::new(2.0, 3.0).unwrap(), &mut rng).unwrap();
        let mut counts = vec![0; k];
        for o in &batch {
            counts[o.anchor_class] += 1;
        }
        prop_assert!(counts.iter().all(|&c| c == per_class));
    }

    #[test]
    fn losses_are_finite_and_non_negative(
        logits in prop::collection::vec(-50f64..50.0, 2..10),
        seed in any::<u64>(),
        eps in 0.05f64..5.0,
    ) {
        let mut rng = RandomSource::new(seed);
        let k = logits.len();
        let raw: Vec<f64> = (0..k).map(|_| rng.uniform_in(0.01, 1.0)).collect();
        let total: f64 = raw.iter().sum();
        let priors: Vec<f64> = raw.iter().map(|p| p / total).collect();
        let y = rng.below(k);
        let tla = tla_loss(&logits, y, &priors, eps).unwrap();
        prop_assert!(tla.loss.is_finite() && tla.loss >= 0.0);
        let head = EnergyHead::new(8, &mut rng);
        let id: Vec<f64> = (0..4).map(|_| -10.0 * rng.uniform()).collect();
        let gos: Vec<f64> = (0..4).map(|_| -10.0 * rng.uniform()).collect();
        prop_assert!(epr_loss(&head, &id, &gos).unwrap().loss.is_finite());
    }

    #[test]
    fn tail_class_pays_more_for_identical_logits(c in -20f64..20.0, head in 0.5f64..0.99, eps in 0.1f64..5.0) {
        let priors = [head, 1.0 - head];
        let logits = [c, c];
        let head_loss = tla_loss(&logits, 0, &priors, eps).unwrap().loss;
        let tail_loss = tla_loss(&logits, 1, &priors, eps).unwrap().loss;
        prop_assert!(tail_loss > head_loss);
    }

    #[test]
    fn omega_slope_in_log_prior_is_minus_one(seed in any::<u64>(), p in 0.05f64..0.9) {
        let mut rng = RandomSource::new(seed);
        let dim = 8;
        let comps: Vec<_> = (0..2).map(|_| VmfComponent::new(unit(dim, &mut rng), 20.0).unwrap()).collect();
        let z = unit(dim, &mut rng);
        let mix_a = VmfMixture::new(comps.clone(), vec![p, 1.0 - p]).unwrap();
        let mix_b = VmfMixture::new(comps, vec![p / 2.0, 1.0 - p / 2.0]).unwrap();
        let o = synthesize_balanced_batch(&mix_a, 1, &AnnulusSpec::new(2.0, 3.0).unwrap(), &mut rng).unwrap().remove(0);
        let a = omega_ood(&mix_a, z.as_slice(), 0, &o, 0.5).unwrap();
        let b = omega_ood(&mix_b, z.as_slice(), 0, &o, 0.5).unwrap();
        let slope = (a - b) / (p.ln() - (p / 2.0).ln());
        prop_assert!((slope + 1.0).abs() <= 1e-9, "slope {slope}");
    }

    #[test]
    fn energy_shifts_with_logits(logits in prop::collection::vec(-30f64..30.0, 1..12), c in -100f64..100.0, t in 0.1f64..10.0) {
        let shifted: Vec<f64> = logits.iter().map(|l| l + c).collect();
        let lhs = energy_score(&shifted, t).unwrap();
        let rhs = energy_score(&logits, t).unwrap() - c;
        prop_assert!((lhs - rhs).abs() <= 1e-9 * (1.0 + rhs.abs()));
    }

    #[test]
    fn log_sum_exp_matches_naive_when_safe(xs in prop::collection::vec(-30f64..30.0, 1..20)) {
        let naive = xs.iter().map(|x| x.exp()).sum::<f64>().ln();
        prop_assert!((log_sum_exp(&xs) - naive).abs() <= 1e-10 * (1.0 + naive.abs()));
    }

    #[test]
    fn class_counts_are_monotone_with_exact_ends(k in 1usize..200, head in 1usize..5000, rho in 1f64..500.0) {
        prop_assume!(head as f64 / rho >= 0.5);
        let counts = exponential_class_counts(k, head, rho).unwrap();
        prop_assert_eq!(counts.len(), k);
        prop_assert_eq!(counts[0], head);
        if k > 1 {
            prop_assert_eq!(counts[k - 1], ((head as f64) / rho).round().max(1.0) as usize);
        }
        prop_assert!(counts.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn persistence_is_lossless(
        bits in prop::collection::vec(any::<u64>(), 1..64),
        dim in 1usize..5,
        classes in 1usize..4,
    ) {
        // any finite value, subnormals included
        let mut features: Vec<f64> = bits.iter().map(|&b| f64::from_bits(b)).filter(|v| v.is_finite()).collect();
        features.extend([f64::MIN_POSITIVE / 8.0, -5e-324, 0.0, -0.0]);
        let n = features.len() / dim;
        features.truncate(n * dim);
        prop_assume!(n > 0);
        let labels: Vec<usize> = (0..n).map(|i| i % classes).collect();
        let set = LabeledFeatureSet::new(dim, classes, features, Some(labels), false).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("set.vgfs");
        save_features(&set, &path).unwrap();
        let back: LabeledFeatureSet<f64> = load_features(&path).unwrap();
        let same = set.features().iter().zip(back.features()).all(|(a, b)| a.to_bits() == b.to_bits());
        prop_assert!(same);
        prop_assert_eq!(set.labels(), back.labels());
    }
}

#[test]
fn kappa_round_trip_within_five_percent() {
    let mut rng = RandomSource::new(5);
    for dim in [8, 64] {
        for kappa in [5.0, 50.0, 500.0] {
            let comp = VmfComponent::new(unit(dim, &mut rng), kappa).unwrap();
            let draws = sample_vmf(&comp, 100_000, &mut rng).unwrap();
            let est: f64 = estimate_kappa(&draws).unwrap();
            assert!((est - kappa).abs() / kappa <= 0.05, "d={dim} kappa={kappa}: {est}");
        }
    }
}

#[test]
fn larger_kappa_means_higher_mean_cosine_on_matched_seeds() {
    let mu = UnitVector::<f64>::axis(16, 0).unwrap();
    let mean_cos = |kappa: f64| {
        let comp = VmfComponent::new(mu.clone(), kappa).unwrap();
        let draws = sample_vmf(&comp, 10_000, &mut RandomSource::new(9)).unwrap();
        draws.iter().map(|z| z.as_slice()[0]).sum::<f64>() / 1e4
    };
    let kappas = [1.0, 10.0, 50.0, 200.0, 1000.0];
    let means: Vec<f64> = kappas.iter().map(|&k| mean_cos(k)).collect();
    assert!(means.windows(2).all(|w| w[0] < w[1]), "{means:?}");
}

#[test]
fn tangent_constraints_hold_on_many_pairs() {
    let mut rng = RandomSource::new(21);
    for i in 0..100_000u64 {
        let dim = 2 + (i % 63) as usize;
        let mu = unit(dim, &mut rng);
        let v = tangent_orthonormal(&mu, &mut RandomSource::new(i)).unwrap();
        let n: f64 = v.as_slice().iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((n - 1.0).abs() <= 1e-9 && mu.dot(v.as_slice()).abs() <= 1e-9, "pair {i}");
    }
}
