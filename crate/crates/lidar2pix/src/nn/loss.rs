//! Training objectives: binary cross-entropy on logits against a constant
//! label, and mean absolute error.

use ndarray::{Array3, NdFloat};

use super::cast;

/// Mean over all logits of BCE against a constant label (0 or 1), computed
/// in the numerically stable form max(x,0) - x*y + ln(1 + exp(-|x|)).
pub fn bce_with_logits<T: NdFloat>(logits: &Array3<T>, label: f64) -> T {
    let y = cast::<T>(label);
    let n = cast::<T>(logits.len() as f64);
    logits
        .iter()
        .map(|&x| x.max(T::zero()) - x * y + (T::one() + (-x.abs()).exp()).ln())
        .fold(T::zero(), |a, b| a + b)
        / n
}

/// Gradient of `bce_with_logits` w.r.t. the logits: (sigmoid(x) - y) / N.
pub fn bce_with_logits_grad<T: NdFloat>(logits: &Array3<T>, label: f64) -> Array3<T> {
    let y = cast::<T>(label);
    let n = cast::<T>(logits.len() as f64);
    logits.mapv(|x| (sigmoid(x) - y) / n)
}

fn sigmoid<T: NdFloat>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Mean absolute error.
pub fn l1_loss<T: NdFloat>(a: &Array3<T>, b: &Array3<T>) -> T {
    let n = cast::<T>(a.len() as f64);
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (*x - *y).abs())
        .fold(T::zero(), |acc, v| acc + v)
        / n
}

/// Gradient of `l1_loss` w.r.t. `a`: sign(a - b) / N, with sign(0) = 0.
pub fn l1_grad<T: NdFloat>(a: &Array3<T>, b: &Array3<T>) -> Array3<T> {
    let n = cast::<T>(a.len() as f64);
    let mut g = Array3::zeros(a.dim());
    ndarray::Zip::from(&mut g).and(a).and(b).for_each(|g, &x, &y| {
        *g = if x > y {
            T::one()
        } else if x < y {
            -T::one()
        } else {
            T::zero()
        } / n;
    });
    g
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_logits_give_ln2() {
        let logits = Array3::<f64>::zeros((1, 4, 4));
        let loss = bce_with_logits(&logits, 1.0);
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-12);
        let loss0 = bce_with_logits(&logits, 0.0);
        assert!((loss0 - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn saturated_logits_approach_zero_loss() {
        let pos = Array3::from_elem((1, 2, 2), 30.0f64);
        let neg = Array3::from_elem((1, 2, 2), -30.0f64);
        assert!(bce_with_logits(&pos, 1.0) < 1e-3);
        assert!(bce_with_logits(&neg, 0.0) < 1e-3);
    }

    #[test]
    fn bce_matches_scalar_reimplementation() {
        let logits = Array3::from_shape_fn((2, 3, 3), |(c, i, j)| {
            ((c * 9 + i * 3 + j) as f64).sin() * 3.0
        });
        for label in [0.0, 1.0] {
            // independent scalar route: -y ln s - (1-y) ln(1-s)
            let expected: f64 = logits
                .iter()
                .map(|&x| {
                    let s = 1.0 / (1.0 + (-x).exp());
                    -label * s.ln() - (1.0 - label) * (1.0 - s).ln()
                })
                .sum::<f64>()
                / 18.0;
            let got = bce_with_logits(&logits, label);
            assert!((got - expected).abs() < 1e-6, "{got} vs {expected}");
        }
    }

    #[test]
    fn bce_grad_finite_difference() {
        let logits = Array3::from_shape_fn((1, 3, 3), |(_, i, j)| ((i * 3 + j) as f64).cos());
        let g = bce_with_logits_grad(&logits, 1.0);
        let h = 1e-6;
        for i in 0..3 {
            for j in 0..3 {
                let mut lp = logits.clone();
                lp[[0, i, j]] += h;
                let mut lm = logits.clone();
                lm[[0, i, j]] -= h;
                let num = (bce_with_logits(&lp, 1.0) - bce_with_logits(&lm, 1.0)) / (2.0 * h);
                assert!((num - g[[0, i, j]]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn l1_zero_when_equal() {
        let a = Array3::from_elem((3, 4, 4), 0.3f64);
        assert_eq!(l1_loss(&a, &a), 0.0);
    }

    #[test]
    fn l1_matches_scalar() {
        let a = Array3::from_shape_fn((1, 2, 2), |(_, i, j)| (i + j) as f64);
        let b = Array3::from_elem((1, 2, 2), 0.5f64);
        // |0-0.5| + |1-0.5| + |1-0.5| + |2-0.5| = 3.0, mean 0.75
        assert!((l1_loss(&a, &b) - 0.75).abs() < 1e-12);
        let g = l1_grad(&a, &b);
        assert_eq!(g[[0, 0, 0]], -0.25);
        assert_eq!(g[[0, 1, 1]], 0.25);
    }
}
