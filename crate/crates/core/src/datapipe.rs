//! Data representations (raw, error-normalized, data-normalized), observational
//! noise and train/evaluation splitting.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dynamics::Trajectory;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Representation {
    /// Original data.
    OR,
    /// Per component: subtract the mean, divide by the variance.
    EN,
    /// Global min-max over all components.
    DN,
}

impl fmt::Display for Representation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Representation::OR => "OR",
            Representation::EN => "EN",
            Representation::DN => "DN",
        })
    }
}

impl FromStr for Representation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "OR" | "RAW" => Ok(Representation::OR),
            "EN" => Ok(Representation::EN),
            "DN" => Ok(Representation::DN),
            other => Err(Error::InvalidArgument(format!("unknown representation `{other}`"))),
        }
    }
}

/// A fitted data transform. Parameters come from training data only and are
/// never refitted when applied to evaluation data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode")]
pub enum Normalizer {
    OR,
    EN { mean: Vec<f64>, variance: Vec<f64> },
    DN { min: f64, max: f64 },
}

impl Normalizer {
    pub fn fit(train: &Trajectory, mode: Representation) -> Result<Normalizer> {
        if train.is_empty() {
            return Err(Error::DegenerateData("empty training data".into()));
        }
        match mode {
            Representation::OR => Ok(Normalizer::OR),
            Representation::EN => {
                let d = train.dim();
                let n = train.len() as f64;
                let mut mean = vec![0.0; d];
                for row in train.rows() {
                    for (m, v) in mean.iter_mut().zip(row) {
                        *m += v;
                    }
                }
                mean.iter_mut().for_each(|m| *m /= n);
                let mut variance = vec![0.0; d];
                for row in train.rows() {
                    for i in 0..d {
                        variance[i] += (row[i] - mean[i]).powi(2);
                    }
                }
                variance.iter_mut().for_each(|v| *v /= n);
                if let Some(i) = variance.iter().position(|v| !(*v > 0.0)) {
                    return Err(Error::DegenerateData(format!("component {i} has zero variance")));
                }
                Ok(Normalizer::EN { mean, variance })
            }
            Representation::DN => {
                let (min, max) = train
                    .values()
                    .iter()
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                        (lo.min(v), hi.max(v))
                    });
                if !(max > min) {
                    return Err(Error::DegenerateData(format!("u_max = u_min = {min}")));
                }
                Ok(Normalizer::DN { min, max })
            }
        }
    }

    pub fn mode(&self) -> Representation {
        match self {
            Normalizer::OR => Representation::OR,
            Normalizer::EN { .. } => Representation::EN,
            Normalizer::DN { .. } => Representation::DN,
        }
    }

    pub fn apply_row(&self, row: &mut [f64]) {
        match self {
            Normalizer::OR => {}
            Normalizer::EN { mean, variance } => {
                for ((v, m), var) in row.iter_mut().zip(mean).zip(variance) {
                    *v = (*v - m) / var;
                }
            }
            Normalizer::DN { min, max } => {
                let span = max - min;
                row.iter_mut().for_each(|v| *v = (*v - min) / span);
            }
        }
    }

    pub fn invert_row(&self, row: &mut [f64]) {
        match self {
            Normalizer::OR => {}
            Normalizer::EN { mean, variance } => {
                for ((v, m), var) in row.iter_mut().zip(mean).zip(variance) {
                    *v = *v * var + m;
                }
            }
            Normalizer::DN { min, max } => {
                let span = max - min;
                row.iter_mut().for_each(|v| *v = *v * span + min);
            }
        }
    }

    pub fn apply(&self, data: &Trajectory) -> Trajectory {
        let mut out = data.clone();
        let d = out.dim();
        out.values_mut().chunks_exact_mut(d).for_each(|r| self.apply_row(r));
        out
    }

    pub fn invert(&self, data: &Trajectory) -> Trajectory {
        let mut out = data.clone();
        let d = out.dim();
        out.values_mut().chunks_exact_mut(d).for_each(|r| self.invert_row(r));
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    /// Standard deviation, in units of the (normalized) data.
    pub std: f64,
    pub seed: u64,
}

/// Add independent `N(0, std^2)` noise to every entry.
pub fn add_noise(data: &Trajectory, spec: NoiseSpec) -> Result<Trajectory> {
    if !(spec.std >= 0.0) || !spec.std.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "noise std must be >= 0, got {}",
            spec.std
        )));
    }
    let mut out = data.clone();
    if spec.std == 0.0 {
        return Ok(out);
    }
    let normal = Normal::new(0.0, spec.std).expect("finite non-negative std");
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    out.values_mut().iter_mut().for_each(|v| *v += normal.sample(&mut rng));
    Ok(out)
}

/// Signal-to-noise ratio in dB: mean signal power over noise variance.
pub fn snr_db(data: &Trajectory, noise_std: f64) -> f64 {
    let power = data.values().iter().map(|v| v * v).sum::<f64>() / data.values().len() as f64;
    10.0 * (power / (noise_std * noise_std)).log10()
}

/// Contiguous split at `train_steps`; the evaluation part keeps its absolute times.
pub fn split(data: &Trajectory, train_steps: usize) -> Result<(Trajectory, Trajectory)> {
    if train_steps == 0 || train_steps >= data.len() {
        return Err(Error::InvalidArgument(format!(
            "split point {train_steps} must lie in (0, {})",
            data.len()
        )));
    }
    Ok((data.slice(0, train_steps)?, data.slice(train_steps, data.len())?))
}

/// `<|u|^2>^(1/2)` over a series; the denominator of the normalized error.
pub fn rms_norm(data: &Trajectory) -> f64 {
    let total: f64 = data.values().iter().map(|v| v * v).sum();
    (total / data.len() as f64).sqrt()
}
