//! Shapley kernel weights and coalition sampling.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;

use crate::data::FeatureSubset;
use crate::error::{contract, Error, Result};
use crate::rng::{stream, Domain};

fn binomial(n: usize, k: usize) -> f64 {
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Kernel weight of one coalition of size `size` among `players`:
/// `(p - 1) / (C(p, s) * s * (p - s))`.
pub fn shap_kernel_weight(players: usize, size: usize) -> Result<f64> {
    if size == 0 || size >= players {
        return Err(Error::BoundaryCoalition { size, players });
    }
    let s = size as f64;
    let p = players as f64;
    Ok((p - 1.0) / (binomial(players, size) * s * (p - s)))
}

/// Total kernel mass of all coalitions of each size `1..p`, normalised to sum to one.
pub fn kernel_size_distribution(players: usize) -> Vec<f64> {
    let raw: Vec<f64> = (1..players).map(|s| 1.0 / (s as f64 * (players - s) as f64)).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|m| m / total).collect()
}

/// Number of coalitions excluding the empty and full ones, if it fits in a usize.
pub fn non_boundary_count(players: usize) -> Option<usize> {
    1usize.checked_shl(players as u32).filter(|_| players < 64).map(|n| n - 2)
}

/// Coalitions with their regression weights.
#[derive(Debug, Clone, PartialEq)]
pub struct CoalitionPlan {
    pub coalitions: Vec<FeatureSubset>,
    pub weights: Vec<f64>,
    /// True when every non-boundary coalition appears exactly once with its
    /// exact kernel weight.
    pub exhaustive: bool,
}

/// Draws `samples` non-boundary coalitions over `players` features.
///
/// When `samples` covers every non-boundary coalition the full enumeration is
/// returned in increasing bit order. Otherwise coalition `k` reads its own
/// stream: a size is drawn with probability proportional to the kernel mass
/// at that size, then a uniform subset of that size. Duplicates are allowed.
pub fn sample_coalitions(players: usize, samples: usize, seed: u64) -> Result<Vec<FeatureSubset>> {
    Ok(plan_coalitions(players, samples, seed)?.coalitions)
}

/// [`sample_coalitions`] plus regression weights: exact kernel weights for a
/// full enumeration, equal weights for sampled coalitions (the kernel is
/// already accounted for by the sampling distribution).
pub fn plan_coalitions(players: usize, samples: usize, seed: u64) -> Result<CoalitionPlan> {
    if players < 2 {
        return Err(contract(format!("coalition sampling needs at least 2 players, got {players}")));
    }
    let total = non_boundary_count(players);
    if total.is_some_and(|t| samples >= t) {
        let total = total.unwrap();
        let coalitions: Vec<FeatureSubset> =
            (1..=total as u64).map(|bits| FeatureSubset::from_bits(players, bits)).collect();
        let weights = coalitions.iter().map(|c| shap_kernel_weight(players, c.count())).collect::<Result<_>>()?;
        return Ok(CoalitionPlan { coalitions, weights, exhaustive: true });
    }
    if samples < players + 1 {
        return Err(contract(format!("{samples} coalitions cannot identify {players} attributions plus an intercept")));
    }
    let sampler = CoalitionSampler::new(players, seed);
    let coalitions = (0..samples as u64).map(|k| sampler.draw(k)).collect();
    Ok(CoalitionPlan { coalitions, weights: vec![1.0; samples], exhaustive: false })
}

/// Kernel-mass coalition sampler; draw `k` is a pure function of `(seed, k)`.
#[derive(Debug, Clone)]
pub struct CoalitionSampler {
    players: usize,
    seed: u64,
    sizes: WeightedIndex<f64>,
}

impl CoalitionSampler {
    pub fn new(players: usize, seed: u64) -> Self {
        assert!(players >= 2, "coalition sampler needs at least 2 players");
        let sizes = WeightedIndex::new(kernel_size_distribution(players)).expect("kernel size masses are positive");
        Self { players, seed, sizes }
    }

    pub fn draw(&self, k: u64) -> FeatureSubset {
        let mut rng = stream(self.seed, Domain::Coalition, k);
        let size = self.sizes.sample(&mut rng) + 1;
        let members = rand::seq::index::sample(&mut rng, self.players, size).into_vec();
        FeatureSubset::from_indices(self.players, &members)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    #[test]
    fn kernel_weight_examples() {
        assert!((shap_kernel_weight(3, 1).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert!((shap_kernel_weight(2, 1).unwrap() - 0.5).abs() < 1e-15);
        assert!(matches!(shap_kernel_weight(4, 0), Err(Error::BoundaryCoalition { .. })));
        assert!(matches!(shap_kernel_weight(4, 4), Err(Error::BoundaryCoalition { .. })));
    }

    #[test]
    fn kernel_weight_is_symmetric() {
        for p in 2..15 {
            for s in 1..p {
                let a = shap_kernel_weight(p, s).unwrap();
                let b = shap_kernel_weight(p, p - s).unwrap();
                assert!((a - b).abs() <= 1e-15 * a, "p={p} s={s}");
            }
        }
    }

    #[test]
    fn exhaustive_regime() {
        let three = sample_coalitions(3, 6, 0).unwrap();
        assert_eq!(three.len(), 6);
        assert_eq!(three.iter().collect::<BTreeSet<_>>().len(), 6);
        assert!(three.iter().all(|c| (1..3).contains(&c.count())));

        let six = plan_coalitions(6, 62, 9).unwrap();
        assert!(six.exhaustive);
        assert_eq!(six.coalitions.len(), 62);
        assert_eq!(six.coalitions.iter().collect::<BTreeSet<_>>().len(), 62);
        assert_eq!(plan_coalitions(6, 500, 1).unwrap(), plan_coalitions(6, 62, 2).unwrap());
    }

    #[test]
    fn sampling_is_deterministic_and_valid() {
        let a = plan_coalitions(8, 40, 11).unwrap();
        let b = plan_coalitions(8, 40, 11).unwrap();
        let c = plan_coalitions(8, 40, 12).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(!a.exhaustive);
        assert!(a.coalitions.iter().all(|s| (1..8).contains(&s.count())));
    }

    #[test]
    fn rejects_too_few_players_or_samples() {
        assert!(sample_coalitions(1, 10, 0).is_err());
        assert!(sample_coalitions(8, 8, 0).is_err());
    }

    #[test]
    fn size_histogram_follows_kernel_mass() {
        // Analytic kernel mass for p = 6 is proportional to 1/(s(6-s)).
        let p = 6;
        let draws = 10_000;
        let sampler = CoalitionSampler::new(p, 2024);
        let mut counts = vec![0usize; p - 1];
        for k in 0..draws as u64 {
            counts[sampler.draw(k).count() - 1] += 1;
        }
        let raw: Vec<f64> = (1..p).map(|s| 1.0 / (s * (p - s)) as f64).collect();
        let z: f64 = raw.iter().sum();
        for (s, (&count, r)) in counts.iter().zip(raw).enumerate() {
            let prob = r / z;
            let mean = draws as f64 * prob;
            let sd = (draws as f64 * prob * (1.0 - prob)).sqrt();
            assert!((count as f64 - mean).abs() <= 3.0 * sd, "size {}: {count} vs {mean:.1} ± {:.1}", s + 1, 3.0 * sd);
        }
    }
}
