//! Small numeric helpers shared across modules.

/// Percentile of already-sorted data by linear interpolation between order
/// statistics (position `(n - 1) * q`). `q` is a fraction in `[0, 1]`.
///
/// Panics if `sorted` is empty.
pub fn percentile_sorted(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty(), "percentile of empty data");
    let q = q.clamp(0.0, 1.0);
    let pos = (sorted.len() - 1) as f64 * q;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let frac = pos - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

/// Sort a copy of `data` and take several percentiles from it.
pub fn percentiles(data: &[f64], qs: &[f64]) -> Vec<f64> {
    let mut sorted = data.to_vec();
    sorted.sort_by(f64::total_cmp);
    qs.iter().map(|&q| percentile_sorted(&sorted, q)).collect()
}

/// Shannon entropy in nats with `0 ln 0 = 0`.
pub fn entropy_nats(probs: &[f64]) -> f64 {
    let s: f64 = probs.iter().filter(|&&p| p > 0.0).map(|&p| p * p.ln()).sum();
    // Negating an exact zero would give -0.0.
    if s == 0.0 {
        0.0
    } else {
        -s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_hot_entropy_is_positive_zero() {
        assert!(entropy_nats(&[1.0, 0.0]).is_sign_positive());
    }

    #[test]
    fn one_to_hundred() {
        let data: Vec<f64> = (1..=100).map(f64::from).collect();
        let p = percentiles(&data, &[0.05, 0.50, 0.95]);
        assert!((p[0] - 5.95).abs() < 1e-12);
        assert!((p[1] - 50.5).abs() < 1e-12);
        assert!((p[2] - 95.05).abs() < 1e-12);
    }

    #[test]
    fn single_value() {
        assert_eq!(percentiles(&[7.0], &[0.0, 0.5, 1.0]), vec![7.0; 3]);
    }

    #[test]
    fn entropy_cases() {
        assert_eq!(entropy_nats(&[1.0, 0.0]), 0.0);
        let h = entropy_nats(&[0.6, 0.4]);
        assert!((h - (-(0.6f64 * 0.6f64.ln()) - 0.4 * 0.4f64.ln())).abs() < 1e-15);
        assert!((h - 0.673).abs() < 1e-3);
    }
}
