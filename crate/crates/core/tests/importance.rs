use icl_iml::importance::{loco, sage};
use icl_iml::stats::{mean, sample_sd};
use icl_iml::{Dataset, Predictor, ReferenceBackend, RiskKind};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn noise_task(seed: u64, n: usize, p: usize) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = Array2::from_shape_fn((n, p), |_| rng.sample::<f64, _>(StandardNormal));
    let y = (0..n).map(|_| rng.random_range(0..2)).collect();
    Dataset::from_parts(x, y).unwrap()
}

/// Mean SAGE score and its standard error per feature over 25 seeds of a
/// task whose three features are independent of the labels.
fn noise_sage_summary() -> Vec<(f64, f64)> {
    let (p, seeds) = (3, 25);
    let mut scores = vec![Vec::new(); p];
    for seed in 0..seeds {
        let train = noise_task(2 * seed, 120, p);
        let inference = noise_task(2 * seed + 1, 120, p);
        let predictor = Predictor::new(ReferenceBackend::default());
        // 2^3 - 2 = 6 coalitions: the full enumeration.
        let report = sage(&predictor, &train, &inference, 6, RiskKind::LogLoss, seed).unwrap();
        for (j, s) in report.scores.iter().enumerate() {
            scores[j].push(*s);
        }
    }
    scores.iter().map(|s| (mean(s), sample_sd(s) / (s.len() as f64).sqrt())).collect()
}

#[test]
#[ignore = "noise features raise the kernel smoother's risk above the base-rate predictor, \
            so their scores sit about 4 standard errors below zero at every n tried"]
fn sage_scores_of_pure_noise_are_null() {
    for (j, (m, se)) in noise_sage_summary().into_iter().enumerate() {
        assert!(m.abs() <= 2.0 * se, "feature {j}: mean {m} se {se}");
    }
}

#[test]
fn sage_never_credits_pure_noise() {
    for (j, (m, se)) in noise_sage_summary().into_iter().enumerate() {
        assert!(m <= 2.0 * se, "feature {j}: mean {m} se {se}");
        assert!(m.abs() < 0.02, "feature {j}: mean {m}");
    }
}

#[test]
fn loco_on_a_constant_column_is_exactly_zero() {
    for seed in 0..5 {
        let base = noise_task(seed, 40, 3);
        let mut x = base.features().to_owned();
        x.column_mut(1).fill(0.75);
        let train = base.with_features(x).unwrap();
        let inference = noise_task(seed + 100, 20, 3);
        let predictor = Predictor::new(ReferenceBackend::default());
        let report = loco(&predictor, &train, &inference, RiskKind::LogLoss).unwrap();
        assert_eq!(report.scores[1], 0.0);
        assert_eq!(report.evaluation_calls, 4);
        assert_eq!(predictor.ledger().snapshot().evaluation_calls, 4);
    }
}
