//! Adaptive contrast enhancement: the spectral filter
//! `R = (γC^TC)^{1/2}(γC^TC + I)^{-1/2}` on the image grid, where `C` stacks
//! periodic first-order horizontal and vertical differences.

use num_complex::Complex64;

use crate::error::{check_len, Error, Result};
use crate::signal_ops::Fft2;

/// Spectrum of `C^TC` on a periodic `rows x cols` grid:
/// `4 sin²(π u / rows) + 4 sin²(π v / cols)`.
pub fn difference_spectrum(rows: usize, cols: usize) -> Vec<f64> {
    let pi = std::f64::consts::PI;
    let mut out = Vec::with_capacity(rows * cols);
    for u in 0..rows {
        let a = (pi * u as f64 / rows as f64).sin();
        for v in 0..cols {
            let b = (pi * v as f64 / cols as f64).sin();
            out.push(4.0 * (a * a + b * b));
        }
    }
    out
}

/// Symmetric PSD spectral filter with multipliers in `[0, 1]`.
#[derive(Clone, Debug)]
pub struct AceOperator {
    gamma: Option<f64>,
    rows: usize,
    cols: usize,
    multipliers: Vec<f64>,
    fft: Fft2,
}

impl AceOperator {
    /// `s(ξ) = √(γc(ξ) / (γc(ξ) + 1))`; `γ` must be positive and finite.
    pub fn new(gamma: f64, rows: usize, cols: usize) -> Result<Self> {
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(Error::InvalidConfig(format!("contrast weight must be positive, got {gamma}")));
        }
        let multipliers =
            difference_spectrum(rows, cols).into_iter().map(|c| (gamma * c / (gamma * c + 1.0)).sqrt()).collect();
        Ok(AceOperator { gamma: Some(gamma), rows, cols, multipliers, fft: Fft2::new(rows, cols) })
    }

    /// All-pass filter; the fidelity then reduces to the plain one.
    pub fn identity(rows: usize, cols: usize) -> Self {
        AceOperator { gamma: None, rows, cols, multipliers: vec![1.0; rows * cols], fft: Fft2::new(rows, cols) }
    }

    /// `None` for the identity filter.
    pub fn gamma(&self) -> Option<f64> {
        self.gamma
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn multipliers(&self) -> &[f64] {
        &self.multipliers
    }

    pub fn max_multiplier(&self) -> f64 {
        self.multipliers.iter().cloned().fold(0.0, f64::max)
    }

    fn filter(&self, x: &[f64], power: i32) -> Vec<f64> {
        assert_eq!(x.len(), self.rows * self.cols, "image size differs from the filter grid");
        let mut spec = self.fft.forward_real(x);
        for (v, s) in spec.iter_mut().zip(&self.multipliers) {
            *v *= s.powi(power);
        }
        self.fft.inverse_real(&spec)
    }

    /// `R x`.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.filter(x, 1)
    }

    /// `R^T R x = R² x`.
    pub fn apply_squared(&self, x: &[f64]) -> Vec<f64> {
        self.filter(x, 2)
    }

    /// `(½‖R r‖², R² r)`.
    pub fn energy_and_gradient(&self, r: &[f64]) -> (f64, Vec<f64>) {
        let spec = self.fft.forward_real(r);
        let n = r.len() as f64;
        let energy = 0.5 / n * spec.iter().zip(&self.multipliers).map(|(v, s)| s * s * v.norm_sqr()).sum::<f64>();
        let weighted: Vec<Complex64> = spec.iter().zip(&self.multipliers).map(|(v, s)| v * (s * s)).collect();
        (energy, self.fft.inverse_real(&weighted))
    }

    /// `(γC^TC + I)^{-1} x`; the identity filter has no `γ` and errors.
    pub fn regularized_inverse(&self, x: &[f64]) -> Result<Vec<f64>> {
        let gamma =
            self.gamma.ok_or_else(|| Error::InvalidConfig("identity filter has no regularized inverse".into()))?;
        check_len("image", self.rows * self.cols, x.len())?;
        let mut spec = self.fft.forward_real(x);
        for (v, c) in spec.iter_mut().zip(difference_spectrum(self.rows, self.cols)) {
            *v /= gamma * c + 1.0;
        }
        Ok(self.fft.inverse_real(&spec))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Dense periodic forward-difference operator, `2N x N`.
    fn dense_difference(rows: usize, cols: usize) -> DMatrix<f64> {
        let n = rows * cols;
        let mut c = DMatrix::zeros(2 * n, n);
        for r in 0..rows {
            for q in 0..cols {
                let i = r * cols + q;
                c[(i, i)] = -1.0;
                c[(i, r * cols + (q + 1) % cols)] += 1.0;
                c[(n + i, i)] = -1.0;
                c[(n + i, ((r + 1) % rows) * cols + q)] += 1.0;
            }
        }
        c
    }

    #[test]
    fn constants_are_annihilated() {
        let op = AceOperator::new(3.0, 4, 5).unwrap();
        assert_eq!(op.multipliers()[0], 0.0);
        let out = op.apply(&[2.5; 20]);
        assert!(out.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn large_weight_approaches_all_pass() {
        let op = AceOperator::new(1e12, 4, 4).unwrap();
        assert!(op.multipliers()[1..].iter().all(|s| (s - 1.0).abs() < 1e-9 && *s < 1.0));
    }

    #[test]
    fn nonpositive_weight_rejected() {
        assert!(AceOperator::new(0.0, 3, 3).is_err());
        assert!(AceOperator::new(-1.0, 3, 3).is_err());
    }

    #[test]
    fn squared_filter_matches_dense_solve() {
        let (rows, cols, gamma) = (4, 5, 0.7);
        let op = AceOperator::new(gamma, rows, cols).unwrap();
        let c = dense_difference(rows, cols);
        let a = c.transpose() * &c * gamma + DMatrix::identity(rows * cols, rows * cols);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let y: Vec<f64> = (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
        let solved = a.lu().solve(&DVector::from_vec(y.clone())).unwrap();
        let r2 = op.apply_squared(&y);
        for i in 0..y.len() {
            assert!((r2[i] - (y[i] - solved[i])).abs() < 1e-10);
        }
        let inv = op.regularized_inverse(&y).unwrap();
        for i in 0..y.len() {
            assert!((inv[i] - solved[i]).abs() < 1e-10);
        }
        let (e, grad) = op.energy_and_gradient(&y);
        let ry = op.apply(&y);
        assert!((e - 0.5 * ry.iter().map(|v| v * v).sum::<f64>()).abs() < 1e-12);
        for (a, b) in grad.iter().zip(&r2) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn identity_leaves_input() {
        let op = AceOperator::identity(3, 3);
        let x: Vec<f64> = (0..9).map(|i| i as f64).collect();
        for (a, b) in op.apply(&x).iter().zip(&x) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(op.regularized_inverse(&x).is_err());
    }
}
