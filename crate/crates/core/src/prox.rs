//! Proximal maps under a diagonal metric.
//!
//! [`soft_shrink`] handles the ℓ1 code penalty. [`unit_ball_prox`] handles the
//! filter constraint `‖d‖₂ ≤ 1`: the minimizer of `½‖x − ν‖²_M` over the unit
//! ball is `(M + φI)^{-1} M ν`, with `φ` the root of the secular equation
//! `f(φ) = Σ_j m_j² ν_j² / (φ + m_j)² = 1`.

use crate::error::{check_len, Error, Result};
use crate::signal_ops::norm2;

/// Newton iteration cap for the secular equation.
pub const NEWTON_MAX_ITER: usize = 10;
/// Newton stops once `|Δφ|` falls to this value.
pub const NEWTON_TOL: f64 = 1e-6;
/// Largest accepted `|f(φ) − 1|` before the bisection fallback engages.
pub const SECULAR_TOL: f64 = 1e-6;

/// `sgn(a)·max(|a| − b, 0)`.
pub fn shrink(a: f64, b: f64) -> f64 {
    a.signum() * (a.abs() - b).max(0.0)
}

/// Elementwise soft-shrinkage of `v` by `thresholds`.
pub fn soft_shrink(v: &[f64], thresholds: &[f64]) -> Result<Vec<f64>> {
    check_len("thresholds", v.len(), thresholds.len())?;
    if let Some(&t) = thresholds.iter().find(|t| !(**t >= 0.0)) {
        return Err(Error::NegativeThreshold(t));
    }
    Ok(v.iter().zip(thresholds).map(|(&a, &b)| shrink(a, b)).collect())
}

/// Outcome of the secular-equation solve.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SecularState {
    /// Lagrange multiplier, `0` when `ν` is already feasible.
    pub phi: f64,
    /// Newton iterations spent (bisection steps are not counted).
    pub iterations: usize,
    /// `|f(φ) − 1|`, or `0` for the interior case.
    pub residual: f64,
    pub used_bisection: bool,
}

/// `f(φ) = Σ_j m_j² ν_j² / (φ + m_j)²`.
pub fn secular_f(phi: f64, m: &[f64], nu: &[f64]) -> f64 {
    m.iter()
        .zip(nu)
        .map(|(&mj, &vj)| {
            let r = mj * vj / (phi + mj);
            r * r
        })
        .sum()
}

/// `f′(φ) = −2 Σ_j m_j² ν_j² / (φ + m_j)³`.
pub fn secular_derivative(phi: f64, m: &[f64], nu: &[f64]) -> f64 {
    -2.0 * m
        .iter()
        .zip(nu)
        .map(|(&mj, &vj)| {
            let r = mj * vj / (phi + mj);
            r * r / (phi + mj)
        })
        .sum::<f64>()
}

/// Root of `f(φ) = 1` by bisection on `[0, max_j m_j·‖ν‖]`.
///
/// Requires `‖ν‖ > 1`. Returns the upper (feasible) end of the final bracket.
pub fn secular_bisection(m: &[f64], nu: &[f64]) -> f64 {
    let m_max = m.iter().cloned().fold(0.0_f64, f64::max);
    let (mut lo, mut hi) = (0.0, m_max * norm2(nu));
    // f(hi) ≤ Σ ν_j² m_j²/(m_max‖ν‖)² ≤ 1.
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if secular_f(mid, m, nu) > 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    hi
}

fn newton(m: &[f64], nu: &[f64]) -> Option<(f64, usize)> {
    let mut phi = 0.0_f64;
    for it in 1..=NEWTON_MAX_ITER {
        let f = secular_f(phi, m, nu);
        let df = secular_derivative(phi, m, nu);
        if !(df < 0.0) {
            return None;
        }
        let step = -2.0 * (f / df) * (f.sqrt() - 1.0);
        let next = (phi + step).max(0.0);
        if !next.is_finite() {
            return None;
        }
        let delta = (next - phi).abs();
        phi = next;
        if delta <= NEWTON_TOL {
            return Some((phi, it));
        }
    }
    None
}

/// `argmin_{‖x‖₂ ≤ 1} ½ (x − ν)^T diag(m) (x − ν)`.
///
/// Accelerated Newton from `φ = 0`; falls back to bisection when Newton does
/// not settle within [`NEWTON_MAX_ITER`] steps or leaves `|f − 1| > SECULAR_TOL`.
pub fn unit_ball_prox(nu: &[f64], m: &[f64]) -> Result<(Vec<f64>, SecularState)> {
    check_len("majorizer", nu.len(), m.len())?;
    if norm2(nu) <= 1.0 {
        let state = SecularState { phi: 0.0, iterations: 0, residual: 0.0, used_bisection: false };
        return Ok((nu.to_vec(), state));
    }
    let (phi, iterations, used_bisection) = match newton(m, nu) {
        Some((phi, it)) if (secular_f(phi, m, nu) - 1.0).abs() <= SECULAR_TOL => (phi, it, false),
        Some((_, it)) => (secular_bisection(m, nu), it, true),
        None => (secular_bisection(m, nu), NEWTON_MAX_ITER, true),
    };
    let x: Vec<f64> = m.iter().zip(nu).map(|(&mj, &vj)| mj * vj / (mj + phi)).collect();
    let state = SecularState { phi, iterations, residual: (secular_f(phi, m, nu) - 1.0).abs(), used_bisection };
    Ok((x, state))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn shrink_examples() {
        assert_eq!(shrink(2.0, 0.5), 1.5);
        assert_eq!(shrink(-0.3, 0.5), 0.0);
        assert_eq!(shrink(-2.0, 0.5), -1.5);
    }

    #[test]
    fn negative_threshold_rejected() {
        assert!(matches!(soft_shrink(&[1.0], &[-0.1]), Err(Error::NegativeThreshold(_))));
        assert!(soft_shrink(&[1.0], &[0.1, 0.2]).is_err());
    }

    #[test]
    fn secular_values() {
        let m = [1.0, 4.0];
        let nu = [2.0, 1.0];
        assert!((secular_f(0.0, &m, &nu) - 5.0).abs() < 1e-15);
        assert!((secular_f(2.0, &m, &nu) - 8.0 / 9.0).abs() < 1e-15);
        assert!(secular_f(1e12, &m, &nu) < 1e-20);
        // f′ against a central difference
        let h = 1e-6;
        let fd = (secular_f(0.7 + h, &m, &nu) - secular_f(0.7 - h, &m, &nu)) / (2.0 * h);
        assert!((secular_derivative(0.7, &m, &nu) - fd).abs() < 1e-7);
    }

    #[test]
    fn interior_point_unchanged() {
        let (x, s) = unit_ball_prox(&[0.3, 0.4], &[1.0, 1.0]).unwrap();
        assert_eq!(x, vec![0.3, 0.4]);
        assert_eq!(s.phi, 0.0);
        let (x, _) = unit_ball_prox(&[0.6, 0.8], &[2.0, 3.0]).unwrap();
        assert_eq!(x, vec![0.6, 0.8]);
    }

    #[test]
    fn identity_metric_is_projection() {
        let (x, _) = unit_ball_prox(&[3.0, 4.0], &[1.0, 1.0]).unwrap();
        assert!((x[0] - 0.6).abs() < 1e-9 && (x[1] - 0.8).abs() < 1e-9);
    }

    #[test]
    fn weighted_example() {
        let (x, s) = unit_ball_prox(&[2.0, 1.0], &[1.0, 4.0]).unwrap();
        let oracle = secular_bisection(&[1.0, 4.0], &[2.0, 1.0]);
        assert!((s.phi - 1.774).abs() < 1e-3);
        assert!((s.phi - oracle).abs() < 1e-6);
        assert!((x[0] - 0.721).abs() < 1e-3 && (x[1] - 0.693).abs() < 1e-3);
        assert!((norm2(&x) - 1.0).abs() < 1e-6);
        assert!(!s.used_bisection);
    }

    #[test]
    fn kkt_stationarity() {
        let m = [0.5, 2.0, 7.0];
        let nu = [1.5, -2.0, 0.25];
        let (x, s) = unit_ball_prox(&nu, &m).unwrap();
        let r: f64 = (0..3).map(|j| (m[j] * (x[j] - nu[j]) + s.phi * x[j]).powi(2)).sum::<f64>().sqrt();
        let scale = norm2(&[m[0] * nu[0], m[1] * nu[1], m[2] * nu[2]]);
        assert!(r <= 1e-6 * scale);
        assert!(s.phi > 0.0);
    }

    proptest! {
        #[test]
        fn shrink_is_nonexpansive(
            pairs in prop::collection::vec((-5.0..5.0f64, -5.0..5.0f64, 0.01..10.0f64), 1..32),
            alpha in 0.0..2.0f64,
        ) {
            let (u, rest): (Vec<f64>, Vec<(f64, f64)>) = pairs.iter().map(|&(a, b, m)| (a, (b, m))).unzip();
            let (v, m): (Vec<f64>, Vec<f64>) = rest.into_iter().unzip();
            let t: Vec<f64> = m.iter().map(|mj| alpha / mj).collect();
            let pu = soft_shrink(&u, &t).unwrap();
            let pv = soft_shrink(&v, &t).unwrap();
            let lhs: f64 = (0..u.len()).map(|j| m[j] * (pu[j] - pv[j]).powi(2)).sum();
            let rhs: f64 = (0..u.len()).map(|j| m[j] * (u[j] - v[j]).powi(2)).sum();
            prop_assert!(lhs <= rhs + 1e-12);
        }

        #[test]
        fn shrink_is_optimal(a in -5.0..5.0f64, m in 0.01..10.0f64, alpha in 0.0..3.0f64) {
            // 0 ∈ m(x − a) + α ∂|x|
            let x = shrink(a, alpha / m);
            let g = m * (x - a);
            if x != 0.0 {
                prop_assert!((g + alpha * x.signum()).abs() <= 1e-12 * (1.0 + m * a.abs()));
            } else {
                prop_assert!(g.abs() <= alpha + 1e-12);
            }
        }

        #[test]
        fn prox_is_feasible(
            pairs in prop::collection::vec((-10.0..10.0f64, 0.01..10.0f64), 1..64),
        ) {
            let (nu, m): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            let (x, _) = unit_ball_prox(&nu, &m).unwrap();
            prop_assert!(norm2(&x) <= 1.0 + 1e-6);
        }
    }
}
