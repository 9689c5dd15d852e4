//! Summary statistics of a vector; order statistics interpolate linearly
//! between closest ranks.

use crate::error::{Error, Result};

fn require(values: &[f64], needed: usize) -> Result<()> {
    if values.len() < needed {
        return Err(Error::TooFewPoints {
            needed,
            got: values.len(),
        });
    }
    Ok(())
}

fn finite(x: f64, what: &str) -> Result<f64> {
    if x.is_finite() {
        Ok(x)
    } else {
        Err(Error::NonFinite(what.to_string()))
    }
}

pub fn sorted_copy(values: &[f64]) -> Vec<f64> {
    let mut s = values.to_vec();
    s.sort_by(f64::total_cmp);
    s
}

/// Percentile `p` in [0, 100] of an ascending slice: `h = (n−1)p/100`,
/// interpolated between `x[⌊h⌋]` and `x[⌊h⌋+1]`.
pub fn percentile_sorted(sorted: &[f64], p: f64) -> Result<f64> {
    require(sorted, 1)?;
    if !(0.0..=100.0).contains(&p) {
        return Err(Error::InvalidInput(format!("percentile {p} outside [0, 100]")));
    }
    let n = sorted.len();
    let h = (n - 1) as f64 * p / 100.0;
    let lo = (h.floor() as usize).min(n - 1);
    if lo + 1 >= n {
        return Ok(sorted[n - 1]);
    }
    let frac = h - lo as f64;
    if frac == 0.0 {
        return Ok(sorted[lo]);
    }
    Ok(sorted[lo] + frac * (sorted[lo + 1] - sorted[lo]))
}

pub fn percentile(values: &[f64], p: f64) -> Result<f64> {
    percentile_sorted(&sorted_copy(values), p)
}

pub fn mean(values: &[f64]) -> Result<f64> {
    require(values, 1)?;
    Ok(values.iter().sum::<f64>() / values.len() as f64)
}

/// Central moments `m2, m3, m4` with the 1/n normalization.
fn central_moments(values: &[f64]) -> (f64, f64, f64) {
    let n = values.len() as f64;
    let mu = values.iter().sum::<f64>() / n;
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for &x in values {
        let d = x - mu;
        let d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
    }
    (m2 / n, m3 / n, m4 / n)
}

/// Sample variance (n − 1 denominator).
pub fn variance(values: &[f64]) -> Result<f64> {
    require(values, 2)?;
    let mu = mean(values)?;
    let ss: f64 = values.iter().map(|x| (x - mu) * (x - mu)).sum();
    Ok(ss / (values.len() - 1) as f64)
}

pub fn std_dev(values: &[f64]) -> Result<f64> {
    variance(values).map(f64::sqrt)
}

/// Adjusted Fisher–Pearson skewness `G1`.
pub fn skewness(values: &[f64]) -> Result<f64> {
    require(values, 3)?;
    let n = values.len() as f64;
    let (m2, m3, _) = central_moments(values);
    let g1 = m3 / m2.powf(1.5);
    finite((n * (n - 1.0)).sqrt() / (n - 2.0) * g1, "skewness of a constant vector")
}

/// Bias-adjusted excess kurtosis `G2`.
pub fn excess_kurtosis(values: &[f64]) -> Result<f64> {
    require(values, 4)?;
    let n = values.len() as f64;
    let (m2, _, m4) = central_moments(values);
    let g2 = m4 / (m2 * m2) - 3.0;
    finite(
        (n - 1.0) / ((n - 2.0) * (n - 3.0)) * ((n + 1.0) * g2 + 6.0),
        "kurtosis of a constant vector",
    )
}

/// Median absolute deviation from the median, unscaled.
pub fn median_abs_deviation(values: &[f64]) -> Result<f64> {
    let med = percentile(values, 50.0)?;
    let dev: Vec<f64> = values.iter().map(|x| (x - med).abs()).collect();
    percentile(&dev, 50.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_values() {
        assert_eq!(variance(&[1.0, 2.0, 3.0, 4.0, 5.0]).unwrap(), 2.5);
        let lin: Vec<f64> = (0..=100).map(f64::from).collect();
        assert_eq!(percentile(&lin, 90.0).unwrap() - percentile(&lin, 10.0).unwrap(), 80.0);
        assert_eq!(percentile(&[1.0, 2.0, 3.0, 4.0], 50.0).unwrap(), 2.5);
        assert_eq!(percentile(&[3.0, 1.0, 2.0, 4.0], 25.0).unwrap(), 1.75);
        assert_eq!(percentile(&[7.0], 33.0).unwrap(), 7.0);
        assert_eq!(median_abs_deviation(&[1.0, 1.0, 2.0, 2.0, 4.0, 6.0, 9.0]).unwrap(), 1.0);
        assert!(percentile(&[1.0], 101.0).is_err());
        assert!(variance(&[1.0]).is_err());
    }

    #[test]
    fn shape_statistics_reference_values() {
        // scipy.stats.skew / kurtosis with bias=False
        let x = [2.0, 8.0, 0.0, 4.0, 1.0, 9.0, 9.0, 0.0];
        assert!((skewness(&x).unwrap() - 0.3305821804079746).abs() < 1e-12);
        assert!((excess_kurtosis(&x).unwrap() - -2.098602258096087).abs() < 1e-12);
        assert!(skewness(&[1.0, 1.0, 1.0]).is_err());
    }

    #[test]
    fn symmetric_sample_has_zero_skew() {
        let x = [-3.0, -1.0, 0.0, 1.0, 3.0];
        assert!(skewness(&x).unwrap().abs() < 1e-15);
    }
}
