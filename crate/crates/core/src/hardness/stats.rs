use crate::error::{Error, Result};

fn check_pair(x: &[f64], y: &[f64]) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::Correlation(format!(
            "series lengths differ ({} vs {})",
            x.len(),
            y.len()
        )));
    }
    if x.len() < 2 {
        return Err(Error::Correlation("need at least two points".into()));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::Correlation("non-finite value in series".into()));
    }
    Ok(())
}

/// Product-moment correlation, computed from centered sums.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    check_pair(x, y)?;
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Correlation("zero variance".into()));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Fractional ranks starting at 1; tied values share their average rank.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && x[order[j + 1]] == x[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Pearson correlation of average ranks.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    check_pair(x, y)?;
    pearson(&average_ranks(x), &average_ranks(y))
}

pub fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Mean and half-width of the 95% normal-approximation interval.
pub fn mean_ci95(x: &[f64]) -> (f64, f64) {
    let m = mean(x);
    if x.len() < 2 {
        return (m, 0.0);
    }
    let var = x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (x.len() - 1) as f64;
    (m, 1.96 * (var / x.len() as f64).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_correlations() {
        assert!((pearson(&[1., 2., 3.], &[2., 4., 6.]).unwrap() - 1.0).abs() < 1e-15);
        assert!((pearson(&[1., 2., 3.], &[3., 2., 1.]).unwrap() + 1.0).abs() < 1e-15);
        assert!((spearman(&[1., 2., 3.], &[1., 4., 9.]).unwrap() - 1.0).abs() < 1e-15);
        assert!((spearman(&[1., 2., 3.], &[9., 4., 1.]).unwrap() + 1.0).abs() < 1e-15);
    }

    #[test]
    fn zero_variance_is_error() {
        assert!(matches!(pearson(&[1., 1., 1.], &[1., 2., 3.]), Err(Error::Correlation(_))));
        assert!(matches!(spearman(&[1., 2.], &[5., 5.]), Err(Error::Correlation(_))));
        assert!(pearson(&[1.], &[1.]).is_err());
        assert!(pearson(&[1., 2.], &[1.]).is_err());
    }

    #[test]
    fn ties_get_average_rank() {
        assert_eq!(average_ranks(&[10., 20., 10., 30.]), vec![1.5, 3., 1.5, 4.]);
        assert_eq!(average_ranks(&[5., 5., 5.]), vec![2., 2., 2.]);
    }

    #[test]
    fn ci_of_constant_is_zero() {
        assert_eq!(mean_ci95(&[0.5; 10]), (0.5, 0.0));
    }
}
