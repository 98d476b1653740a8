//! Small order statistics and density helpers used by the reports.

use serde::{Deserialize, Serialize};

/// Median; the mean of the two middle values for even counts. NaN when empty.
pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Linear-interpolation quantile, `q` in `[0, 1]`.
pub fn quantile(values: &[f64], q: f64) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

pub fn iqr(values: &[f64]) -> f64 {
    quantile(values, 0.75) - quantile(values, 0.25)
}

/// Most frequent value; ties go to the smallest.
pub fn mode(values: &[usize]) -> Option<usize> {
    let max = *values.iter().max()?;
    let mut counts = vec![0usize; max + 1];
    values.iter().for_each(|&v| counts[v] += 1);
    let best = *counts.iter().max()?;
    counts.iter().position(|&c| c == best)
}

/// Gaussian kernel density estimate on a regular grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Kde {
    pub bandwidth: f64,
    pub grid: Vec<f64>,
    pub density: Vec<f64>,
}

pub fn gaussian_kde(samples: &[f64], bandwidth: f64, points: usize) -> Kde {
    if samples.is_empty() || points == 0 {
        return Kde {
            bandwidth,
            grid: vec![],
            density: vec![],
        };
    }
    let lo = samples.iter().cloned().fold(f64::INFINITY, f64::min) - 4.0 * bandwidth;
    let hi = samples.iter().cloned().fold(f64::NEG_INFINITY, f64::max) + 4.0 * bandwidth;
    let step = if points > 1 {
        (hi - lo) / (points - 1) as f64
    } else {
        0.0
    };
    let norm = 1.0 / (samples.len() as f64 * bandwidth * (2.0 * std::f64::consts::PI).sqrt());
    let grid: Vec<f64> = (0..points).map(|i| lo + i as f64 * step).collect();
    let density = grid
        .iter()
        .map(|x| {
            norm * samples
                .iter()
                .map(|s| (-0.5 * ((x - s) / bandwidth).powi(2)).exp())
                .sum::<f64>()
        })
        .collect();
    Kde {
        bandwidth,
        grid,
        density,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn medians() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert!(median(&[]).is_nan());
    }

    #[test]
    fn modes_prefer_smallest_on_ties() {
        assert_eq!(mode(&[1, 1, 1, 2, 2, 3]), Some(1));
        assert_eq!(mode(&[2, 3, 3, 2]), Some(2));
        assert_eq!(mode(&[]), None);
    }

    #[test]
    fn kde_integrates_to_one() {
        let k = gaussian_kde(&[-1.5, -1.7, -2.0], 0.1, 2001);
        let dx = k.grid[1] - k.grid[0];
        let area: f64 = k.density.iter().sum::<f64>() * dx;
        // Grid spans four bandwidths past the samples; two-sided tail mass is 6.3e-5.
        assert!((area - 1.0).abs() < 1e-4, "{area}");
    }

    #[test]
    fn iqr_of_uniform_grid() {
        let v: Vec<f64> = (0..=100).map(|i| i as f64).collect();
        assert_eq!(iqr(&v), 50.0);
    }
}
