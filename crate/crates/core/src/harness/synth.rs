//! Synthetic binary classification tasks.

use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::rng::{stream, Domain};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SynthTask {
    /// Two spherical Gaussians with means at `-1.5` and `+1.5` on every axis.
    GaussianClusters,
    /// Uniform features on `[-1, 1]`; the label is the XOR of the signs of the first two.
    Xor,
    /// Standard normal features; the label is the sign of a fixed linear score.
    NoisyLinear,
}

impl std::str::FromStr for SynthTask {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussian_clusters" => Ok(Self::GaussianClusters),
            "xor" => Ok(Self::Xor),
            "noisy_linear" => Ok(Self::NoisyLinear),
            other => Err(Error::Config(format!("unknown synthetic task '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub n: usize,
    pub p: usize,
    pub task: SynthTask,
    /// Probability of flipping each label after generation.
    #[serde(default)]
    pub noise_rate: f64,
    #[serde(default)]
    pub seed: u64,
}

/// A generated dataset with the mask of labels that were flipped.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthData {
    pub dataset: Dataset,
    pub flipped: Vec<bool>,
}

pub const CLUSTER_OFFSET: f64 = 1.5;

/// Coefficients of the linear score: alternating signs, decaying as `1 / (1 + j/2)`.
pub fn linear_weights(p: usize) -> Vec<f64> {
    (0..p).map(|j| if j % 2 == 0 { 1.0 } else { -1.0 } / (1.0 + j as f64 / 2.0)).collect()
}

pub fn synth_generate(spec: &SynthSpec) -> Result<Dataset> {
    Ok(synth_generate_with_flips(spec)?.dataset)
}

pub fn synth_generate_with_flips(spec: &SynthSpec) -> Result<SynthData> {
    if spec.n < 4 {
        return Err(Error::Config(format!("synthetic n must be at least 4, got {}", spec.n)));
    }
    if spec.p < 1 {
        return Err(Error::Config("synthetic p must be at least 1".into()));
    }
    if spec.task == SynthTask::Xor && spec.p < 2 {
        return Err(Error::Config("the xor task needs p >= 2".into()));
    }
    if !(0.0..=1.0).contains(&spec.noise_rate) {
        return Err(Error::Config(format!("noise_rate {} outside [0, 1]", spec.noise_rate)));
    }
    let (n, p) = (spec.n, spec.p);
    let mut rng = stream(spec.seed, Domain::Synth, 0);
    let mut x = Array2::zeros((n, p));
    let mut labels = Vec::with_capacity(n);
    match spec.task {
        SynthTask::GaussianClusters => {
            for mut row in x.rows_mut() {
                let y: bool = rng.random();
                let shift = if y { CLUSTER_OFFSET } else { -CLUSTER_OFFSET };
                for v in row.iter_mut() {
                    *v = shift + rng.sample::<f64, _>(StandardNormal);
                }
                labels.push(u8::from(y));
            }
        }
        SynthTask::Xor => {
            for mut row in x.rows_mut() {
                for v in row.iter_mut() {
                    *v = rng.random_range(-1.0..1.0);
                }
                labels.push(u8::from((row[0] > 0.0) != (row[1] > 0.0)));
            }
        }
        SynthTask::NoisyLinear => {
            let w = linear_weights(p);
            for mut row in x.rows_mut() {
                for v in row.iter_mut() {
                    *v = rng.sample(StandardNormal);
                }
                let score: f64 = row.iter().zip(&w).map(|(a, b)| a * b).sum();
                labels.push(u8::from(score > 0.0));
            }
        }
    }
    let flipped: Vec<bool> = (0..n).map(|_| rng.random_bool(spec.noise_rate)).collect();
    for (y, &f) in labels.iter_mut().zip(&flipped) {
        if f {
            *y = 1 - *y;
        }
    }
    Ok(SynthData { dataset: Dataset::from_parts(x, labels)?, flipped })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_given_seed() {
        let spec = SynthSpec { n: 50, p: 3, task: SynthTask::NoisyLinear, noise_rate: 0.1, seed: 4 };
        assert_eq!(synth_generate(&spec).unwrap(), synth_generate(&spec).unwrap());
        let other = SynthSpec { seed: 5, ..spec };
        assert_ne!(synth_generate(&spec).unwrap(), synth_generate(&other).unwrap());
    }

    #[test]
    fn flip_count_is_binomial() {
        let spec = SynthSpec { n: 10_000, p: 2, task: SynthTask::NoisyLinear, noise_rate: 0.1, seed: 1 };
        let data = synth_generate_with_flips(&spec).unwrap();
        let flips = data.flipped.iter().filter(|&&f| f).count() as f64;
        let (mean, sd) = (1000.0, (10_000.0f64 * 0.1 * 0.9).sqrt());
        assert!((flips - mean).abs() <= 3.0 * sd, "{flips}");
    }

    #[test]
    fn xor_labels_follow_signs() {
        let spec = SynthSpec { n: 200, p: 3, task: SynthTask::Xor, noise_rate: 0.0, seed: 2 };
        let d = synth_generate(&spec).unwrap();
        for (row, &y) in d.features().rows().into_iter().zip(d.labels()) {
            assert_eq!(y, u8::from((row[0] > 0.0) != (row[1] > 0.0)));
        }
    }

    #[test]
    fn invalid_specs() {
        let ok = SynthSpec { n: 10, p: 2, task: SynthTask::Xor, noise_rate: 0.0, seed: 0 };
        assert!(synth_generate(&SynthSpec { n: 3, ..ok }).is_err());
        assert!(synth_generate(&SynthSpec { p: 0, ..ok }).is_err());
        assert!(synth_generate(&SynthSpec { p: 1, ..ok }).is_err());
        assert!(synth_generate(&SynthSpec { noise_rate: 1.5, ..ok }).is_err());
    }
}
