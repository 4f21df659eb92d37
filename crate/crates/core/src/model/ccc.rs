//! Concordance correlation coefficient and its derivative.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// First and second moments of a trace pair, population (1/N) normalization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CccStats {
    pub mu_x: f64,
    pub mu_y: f64,
    pub var_x: f64,
    pub var_y: f64,
    pub cov: f64,
    /// Pearson correlation; zero when either side is constant.
    pub rho: f64,
}

impl CccStats {
    pub fn compute(x: &[f64], y: &[f64]) -> Result<Self> {
        if x.len() != y.len() {
            return Err(Error::Parameter(format!(
                "trace lengths differ: {} vs {}",
                x.len(),
                y.len()
            )));
        }
        if x.len() < 2 {
            return Err(Error::Parameter("CCC needs at least two frames".into()));
        }
        Ok(Self::compute_unchecked(x, y))
    }

    pub(crate) fn compute_unchecked(x: &[f64], y: &[f64]) -> Self {
        let n = x.len() as f64;
        let mu_x = x.iter().sum::<f64>() / n;
        let mu_y = y.iter().sum::<f64>() / n;
        let (mut var_x, mut var_y, mut cov) = (0.0, 0.0, 0.0);
        for (&a, &b) in x.iter().zip(y) {
            let (da, db) = (a - mu_x, b - mu_y);
            var_x += da * da;
            var_y += db * db;
            cov += da * db;
        }
        var_x /= n;
        var_y /= n;
        cov /= n;
        let rho = if var_x > 0.0 && var_y > 0.0 {
            (cov / (var_x.sqrt() * var_y.sqrt())).clamp(-1.0, 1.0)
        } else {
            0.0
        };
        Self {
            mu_x,
            mu_y,
            var_x,
            var_y,
            cov,
            rho,
        }
    }

    fn denominator(&self) -> f64 {
        self.var_x + self.var_y + (self.mu_x - self.mu_y).powi(2)
    }

    /// `2 rho sx sy / (sx^2 + sy^2 + (mx - my)^2)`, or 0 when both traces are constant.
    pub fn ccc(&self) -> f64 {
        let den = self.denominator();
        if den > 0.0 && !(self.var_x == 0.0 && self.var_y == 0.0) {
            2.0 * self.cov / den
        } else {
            0.0
        }
    }
}

pub fn ccc(x: &[f64], y: &[f64]) -> Result<f64> {
    CccStats::compute(x, y).map(|s| s.ccc())
}

/// CCC of `(x, y)` and its gradient with respect to `x`.
pub(crate) fn ccc_with_grad(x: &[f64], y: &[f64]) -> (f64, Vec<f64>) {
    let s = CccStats::compute_unchecked(x, y);
    let n = x.len() as f64;
    let den = s.denominator();
    if !(den > 0.0) || (s.var_x == 0.0 && s.var_y == 0.0) {
        return (0.0, vec![0.0; x.len()]);
    }
    let num = 2.0 * s.cov;
    let mean_gap = s.mu_x - s.mu_y;
    let grad = x
        .iter()
        .zip(y)
        .map(|(&a, &b)| {
            let d_num = 2.0 * (b - s.mu_y) / n;
            let d_den = 2.0 * (a - s.mu_x) / n + 2.0 * mean_gap / n;
            (d_num * den - num * d_den) / (den * den)
        })
        .collect();
    (num / den, grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn identical_traces() {
        let x = [0.1, -0.4, 0.9, 0.3];
        assert!((ccc(&x, &x).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn reversed_ramp() {
        assert!((ccc(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap() + 1.0).abs() < 1e-12);
    }

    #[test]
    fn offset_penalty() {
        // var = 2/3 for [1, 2, 3]; ccc = 2 var / (2 var + c^2).
        let x = [1.0, 2.0, 3.0];
        let y = [1.5, 2.5, 3.5];
        let var: f64 = 2.0 / 3.0;
        let expected = 2.0 * var / (2.0 * var + 0.25);
        assert!((ccc(&x, &y).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn degenerate_inputs() {
        assert_eq!(ccc(&[1.0, 1.0], &[1.0, 1.0]).unwrap(), 0.0);
        assert_eq!(ccc(&[1.0, 1.0], &[2.0, 2.0]).unwrap(), 0.0);
        assert_eq!(ccc(&[1.0, 2.0], &[2.0, 2.0]).unwrap(), 0.0);
        assert!(ccc(&[1.0], &[1.0]).is_err());
        assert!(ccc(&[1.0, 2.0], &[1.0]).is_err());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let x = [0.3, -0.1, 0.5, 0.2, -0.6];
        let y = [0.2, 0.0, 0.7, 0.1, -0.4];
        let (_, grad) = ccc_with_grad(&x, &y);
        let h = 1e-6;
        for i in 0..x.len() {
            let mut p = x;
            p[i] += h;
            let mut m = x;
            m[i] -= h;
            let fd = (ccc(&p, &y).unwrap() - ccc(&m, &y).unwrap()) / (2.0 * h);
            assert!((fd - grad[i]).abs() < 1e-8, "coordinate {i}");
        }
    }

    proptest! {
        #[test]
        fn symmetric_and_bounded(
            x in prop::collection::vec(-5.0f64..5.0, 2..40),
            seed in any::<u64>(),
        ) {
            let y: Vec<f64> = x.iter().enumerate()
                .map(|(i, v)| v * 0.5 + ((i as u64).wrapping_mul(seed | 1) % 97) as f64 / 50.0)
                .collect();
            let a = ccc(&x, &y).unwrap();
            let b = ccc(&y, &x).unwrap();
            prop_assert!((a - b).abs() < 1e-12);
            prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&a));
        }

        #[test]
        fn scale_sensitive(x in prop::collection::vec(-5.0f64..5.0, 2..40)) {
            let spread = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
                - x.iter().cloned().fold(f64::INFINITY, f64::min);
            prop_assume!(spread > 1e-6);
            let doubled: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
            prop_assert!(ccc(&x, &doubled).unwrap() < 1.0);
        }
    }
}
