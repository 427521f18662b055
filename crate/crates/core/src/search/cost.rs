use crate::error::{Error, Result};
use crate::retrieval::ScoreMatrix;

/// Mean dissimilarity over the retained cells (row-major indices).
pub fn g_cost(retained: &[usize], scores: &ScoreMatrix) -> Result<f64> {
    if retained.is_empty() {
        return Err(Error::InvalidInput("empty retention set".into()));
    }
    let sum: f64 = retained.iter().map(|&i| scores.at(i)).sum();
    Ok(sum / retained.len() as f64)
}

/// `1 - P(yes)`.
pub fn h_from_yes(yes_probability: f64) -> f64 {
    1.0 - yes_probability
}

/// Weight of the confidence term at tree depth `d` (root is 1):
/// `(1 - b) * (1 - 1/d)^2 + b`. Starts at `b`, rises towards 1.
pub fn depth_weight(d: u32, b: f64) -> Result<f64> {
    if d == 0 {
        return Err(Error::InvalidInput("depth must be >= 1".into()));
    }
    let t = 1.0 - 1.0 / d as f64;
    Ok((1.0 - b) * t * t + b)
}

/// `(1 - w) * g + w * h` with `w = depth_weight(d, b)`.
pub fn f_cost(g: f64, h: f64, d: u32, b: f64) -> Result<f64> {
    let w = depth_weight(d, b)?;
    Ok((1.0 - w) * g + w * h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn g_is_mean() {
        let s = ScoreMatrix::new(1, 3, vec![0.1, 0.3, 0.07]).unwrap();
        assert!((g_cost(&[0, 1], &s).unwrap() - 0.2).abs() < 1e-15);
        assert_eq!(g_cost(&[2], &s).unwrap(), 0.07);
        assert!(g_cost(&[], &s).is_err());
        let u = ScoreMatrix::new(2, 2, vec![0.5; 4]).unwrap();
        assert_eq!(g_cost(&[0, 1, 2, 3], &u).unwrap(), 0.5);
    }

    #[test]
    fn h_complements() {
        assert_eq!(h_from_yes(1.0), 0.0);
        assert_eq!(h_from_yes(0.0), 1.0);
        assert!((h_from_yes(0.35) - 0.65).abs() < 1e-15);
    }

    #[test]
    fn weight_values() {
        assert_eq!(depth_weight(1, 0.2).unwrap(), 0.2);
        assert!((depth_weight(2, 0.2).unwrap() - 0.4).abs() < 1e-12);
        // 0.8 * 0.99^2 + 0.2 = 0.98408; written out: 0.8 * 0.9801 = 0.78408
        assert!((depth_weight(100, 0.2).unwrap() - 0.98408).abs() < 1e-12);
        assert!(depth_weight(0, 0.2).is_err());
    }

    #[test]
    fn f_values() {
        assert!((f_cost(0.3, 0.3, 7, 0.2).unwrap() - 0.3).abs() < 1e-15);
        assert!((f_cost(0.2, 0.6, 1, 0.2).unwrap() - 0.28).abs() < 1e-12);
        assert!((f_cost(0.2, 0.6, 2, 0.2).unwrap() - 0.36).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn weight_monotone_and_bounded(d in 1u32..1_000_000, b in 0.0f64..0.999) {
            let w = depth_weight(d, b).unwrap();
            let next = depth_weight(d + 1, b).unwrap();
            prop_assert!(w >= b && w < 1.0);
            prop_assert!(next >= w);
        }

        #[test]
        fn f_is_convex(g in 0.0f64..=1.0, h in 0.0f64..=1.0, d in 1u32..10_000) {
            let f = f_cost(g, h, d, 0.2).unwrap();
            prop_assert!(f >= g.min(h) - 1e-15 && f <= g.max(h) + 1e-15);
        }
    }
}
