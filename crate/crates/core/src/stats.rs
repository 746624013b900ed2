//! Small numeric helpers shared across modules.

/// Arithmetic mean. Empty input yields NaN.
pub(crate) fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Two-pass mean and population variance, `None` for empty input.
pub(crate) fn mean_var(xs: &[f64]) -> Option<(f64, f64)> {
    if xs.is_empty() {
        return None;
    }
    let m = mean(xs);
    let ss: f64 = xs.iter().map(|x| (x - m) * (x - m)).sum();
    Some((m, ss / xs.len() as f64))
}

/// Mean and sample standard deviation (divisor n-1; zero for a single value).
pub(crate) fn mean_sd(xs: &[f64]) -> Option<(f64, f64)> {
    let (m, v) = mean_var(xs)?;
    let n = xs.len() as f64;
    let sd = if xs.len() > 1 { (v * n / (n - 1.0)).sqrt() } else { 0.0 };
    Some((m, sd))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn basics() {
        assert_eq!(mean_var(&[1.0, 2.0, 3.0]), Some((2.0, 2.0 / 3.0)));
        assert_eq!(mean_var(&[]), None);
        assert_eq!(mean_sd(&[1.0, 3.0]), Some((2.0, 2f64.sqrt())));
        assert_eq!(mean_sd(&[5.0]), Some((5.0, 0.0)));
    }

    #[test]
    fn two_pass_is_stable_at_large_offsets() {
        let xs: Vec<f64> = (0..4).map(|i| 1e9 + i as f64).collect();
        let (_, v) = mean_var(&xs).unwrap();
        assert_eq!(v, 1.25);
    }
}
