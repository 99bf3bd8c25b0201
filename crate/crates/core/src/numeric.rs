//! Small numeric kernels with fixed evaluation order.

/// Pairwise (cascade) summation. The reduction tree depends only on the
/// slice length, so the result is reproducible regardless of how callers
/// partition work.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    const BLOCK: usize = 32;
    if xs.len() <= BLOCK {
        let mut acc = 0.0;
        for &x in xs {
            acc += x;
        }
        return acc;
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

pub fn pairwise_mean(xs: &[f64]) -> f64 {
    pairwise_sum(xs) / xs.len() as f64
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^z)` without overflow.
pub fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// Composite Simpson weights for an odd number of equally spaced points on [0, 1].
pub fn simpson_weights(points: usize) -> Vec<f64> {
    debug_assert!(points >= 3 && points % 2 == 1);
    let h = 1.0 / (points - 1) as f64;
    (0..points)
        .map(|k| {
            let c = if k == 0 || k == points - 1 {
                1.0
            } else if k % 2 == 1 {
                4.0
            } else {
                2.0
            };
            c * h / 3.0
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pairwise_matches_naive_on_integers() {
        let xs: Vec<f64> = (0..1000).map(|i| i as f64).collect();
        assert_eq!(pairwise_sum(&xs), 499_500.0);
        assert_eq!(pairwise_sum(&[]), 0.0);
    }

    #[test]
    fn sigmoid_of_ln3_is_three_quarters() {
        assert!((sigmoid(3f64.ln()) - 0.75).abs() < 1e-15);
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(-800.0) >= 0.0 && sigmoid(800.0) <= 1.0);
    }

    #[test]
    fn softplus_is_stable() {
        assert!((softplus(0.0) - 2f64.ln()).abs() < 1e-15);
        assert_eq!(softplus(1000.0), 1000.0);
        assert!(softplus(-1000.0) >= 0.0);
    }

    #[test]
    fn simpson_integrates_cubic_exactly() {
        let w = simpson_weights(11);
        let integral: f64 = w
            .iter()
            .enumerate()
            .map(|(k, wk)| {
                let x = k as f64 / 10.0;
                wk * x * x * x
            })
            .sum();
        assert!((integral - 0.25).abs() < 1e-14);
    }
}
