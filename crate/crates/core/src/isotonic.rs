//! Pool-adjacent-violators repair of sequences that should be nondecreasing.

/// Outcome of an isotonic repair.
#[derive(Debug, Clone, PartialEq)]
pub struct Repair {
    pub values: Vec<f64>,
    /// Number of entries that moved.
    pub changed: usize,
    /// Largest absolute adjustment.
    pub max_adjustment: f64,
}

/// Least-squares nondecreasing fit with optional positive weights.
pub fn pava(y: &[f64], weights: Option<&[f64]>) -> Vec<f64> {
    // Blocks of (weighted mean, weight, length).
    let mut blocks: Vec<(f64, f64, usize)> = Vec::with_capacity(y.len());
    for (j, &v) in y.iter().enumerate() {
        let w = weights.map_or(1.0, |w| w[j]);
        blocks.push((v, w, 1));
        while blocks.len() > 1 {
            let (m1, w1, l1) = blocks[blocks.len() - 1];
            let (m0, w0, l0) = blocks[blocks.len() - 2];
            if m0 <= m1 {
                break;
            }
            blocks.pop();
            let w = w0 + w1;
            *blocks.last_mut().expect("nonempty") = ((m0 * w0 + m1 * w1) / w, w, l0 + l1);
        }
    }
    blocks.into_iter().flat_map(|(m, _, l)| std::iter::repeat_n(m, l)).collect()
}

/// Unweighted PAVA with bookkeeping of what moved.
pub fn repair_nondecreasing(y: &[f64]) -> Repair {
    let values = pava(y, None);
    let mut changed = 0;
    let mut max_adjustment = 0.0f64;
    for (a, b) in y.iter().zip(&values) {
        let d = (a - b).abs();
        if d > 0.0 {
            changed += 1;
            max_adjustment = max_adjustment.max(d);
        }
    }
    Repair { values, changed, max_adjustment }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn pools_violators() {
        assert_eq!(pava(&[1.0, 3.0, 2.0, 4.0], None), vec![1.0, 2.5, 2.5, 4.0]);
        assert_eq!(pava(&[3.0, 2.0, 1.0], None), vec![2.0, 2.0, 2.0]);
        let w = pava(&[1.0, 0.0], Some(&[3.0, 1.0]));
        assert!((w[0] - 0.75).abs() < 1e-15 && (w[1] - 0.75).abs() < 1e-15);
    }

    #[test]
    fn monotone_input_untouched() {
        let r = repair_nondecreasing(&[0.1, 0.2, 0.2, 0.9]);
        assert_eq!(r.changed, 0);
        assert_eq!(r.max_adjustment, 0.0);
    }

    proptest! {
        #[test]
        fn output_is_monotone_and_mean_preserving(y in proptest::collection::vec(-10.0f64..10.0, 1..60)) {
            let fit = pava(&y, None);
            prop_assert!(fit.windows(2).all(|w| w[0] <= w[1] + 1e-12));
            let s0: f64 = y.iter().sum();
            let s1: f64 = fit.iter().sum();
            prop_assert!((s0 - s1).abs() < 1e-9);
        }
    }
}
