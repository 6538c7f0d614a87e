//! Correlation statistics and small order-statistic helpers.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("need at least 2 samples, got {0}")]
    TooFewSamples(usize),
    #[error("non-finite input")]
    NonFinite,
}

fn check_pair(x: &[f64], y: &[f64]) -> Result<(), StatsError> {
    if x.len() != y.len() {
        return Err(StatsError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 2 {
        return Err(StatsError::TooFewSamples(x.len()));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(StatsError::NonFinite);
    }
    Ok(())
}

fn is_constant(x: &[f64]) -> bool {
    x.iter().all(|v| *v == x[0])
}

/// Product-moment correlation. `Ok(None)` when either input has zero
/// variance (the coefficient is undefined there).
pub fn pearson(x: &[f64], y: &[f64]) -> Result<Option<f64>, StatsError> {
    check_pair(x, y)?;
    if is_constant(x) || is_constant(y) {
        return Ok(None);
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let dx = a - mx;
        let dy = b - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Ok(None);
    }
    Ok(Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0)))
}

/// Rank correlation: Pearson over average ranks.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<Option<f64>, StatsError> {
    check_pair(x, y)?;
    pearson(&average_ranks(x), &average_ranks(y))
}

/// 1-based ranks; tied values share the mean of the ranks they span.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        // positions i..=j hold ranks i+1..=j+1
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Median; even counts take the midpoint of the two central values.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    })
}

pub fn mean(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        None
    } else {
        Some(values.iter().sum::<f64>() / values.len() as f64)
    }
}

/// Population standard deviation.
pub fn population_sd(values: &[f64]) -> Option<f64> {
    let m = mean(values)?;
    let var = values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / values.len() as f64;
    Some(var.sqrt())
}

/// Min-max map to [0, 1] over the slice; a zero-range slice maps to 0.5.
pub fn min_max(values: &[f64]) -> Vec<f64> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    values.iter().map(|v| scale_into(*v, lo, hi)).collect()
}

/// `(v - lo) / (hi - lo)` clipped to [0, 1]; 0.5 when `hi <= lo`.
pub fn scale_into(v: f64, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        ((v - lo) / (hi - lo)).clamp(0.0, 1.0)
    } else {
        0.5
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pearson_perfect_and_reversed() {
        assert_eq!(pearson(&[1., 2., 3.], &[1., 2., 3.]).unwrap(), Some(1.0));
        assert_eq!(pearson(&[1., 2., 3.], &[3., 2., 1.]).unwrap(), Some(-1.0));
    }

    #[test]
    fn pearson_hand_computed() {
        let r = pearson(&[1., 2., 3., 4.], &[1., 3., 2., 4.]).unwrap().unwrap();
        assert!((r - 0.8).abs() < 1e-12);
    }

    #[test]
    fn pearson_errors_and_undefined() {
        assert_eq!(pearson(&[1., 2.], &[1.]), Err(StatsError::LengthMismatch(2, 1)));
        assert_eq!(pearson(&[1.], &[1.]), Err(StatsError::TooFewSamples(1)));
        assert_eq!(pearson(&[0.1, 0.1, 0.1], &[1., 2., 3.]).unwrap(), None);
        assert_eq!(pearson(&[f64::NAN, 1.0], &[1., 2.]), Err(StatsError::NonFinite));
    }

    #[test]
    fn spearman_reversed_and_ties() {
        assert_eq!(spearman(&[1., 2., 3.], &[9., 4., 1.]).unwrap(), Some(-1.0));
        assert_eq!(average_ranks(&[1., 2., 2., 3.]), vec![1.0, 2.5, 2.5, 4.0]);
        let r = spearman(&[1., 2., 2., 3.], &[1., 2., 3., 4.]).unwrap().unwrap();
        // 4.5 / sqrt(4.5 * 5)
        assert!((r - 4.5 / (22.5f64).sqrt()).abs() < 1e-12);
        assert!((r - 0.9487).abs() < 1e-4);
    }

    #[test]
    fn spearman_monotone_transform() {
        let x = [0.3, -1.2, 4.0, 2.5, 0.0];
        let y: Vec<f64> = x.iter().map(|v: &f64| v.exp() * 3.0 + 1.0).collect();
        assert_eq!(spearman(&x, &y).unwrap(), Some(1.0));
    }

    #[test]
    fn median_cases() {
        assert_eq!(median(&[0.2, 0.9, 0.4]), Some(0.4));
        assert!((median(&[0.2, 0.4]).unwrap() - 0.3).abs() < 1e-15);
        assert_eq!(median(&[]), None);
    }

    #[test]
    fn min_max_cases() {
        assert_eq!(min_max(&[1., 2., 3.]), vec![0.0, 0.5, 1.0]);
        assert_eq!(min_max(&[5., 5., 5.]), vec![0.5; 3]);
        assert_eq!(min_max(&[-1., 0., 3.]), vec![0.0, 0.25, 1.0]);
    }
}
