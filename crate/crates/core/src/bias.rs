//! Closed-form estimators from two analytically tractable case studies.
//!
//! Both are deliberately *wrong* estimators: one drops the higher-order drift
//! terms from the smooth components' mean, the other imputes a hidden
//! velocity by finite differences. Their limits are known exactly, which
//! makes them executable witnesses of the bias the full scheme avoids.

use std::sync::OnceLock;

use num_rational::Rational64;
use num_traits::{One, ToPrimitive, Zero};

use crate::error::{Error, Result};
use crate::linalg::{gauss_jordan_inverse, Mat};
use crate::scalar::{from_usize, lit, Real};
use crate::stochastics::ObservationSet;

/// Inverse of the constant unit-step covariance of the three-dimensional
/// toy model, and the two combinations of its entries that govern the
/// limit of the truncated-drift estimator.
#[derive(Debug, Clone, PartialEq)]
pub struct CaseStudyConstants<F> {
    pub sigma: Mat<F>,
    pub sigma_inv: Mat<F>,
    /// `Lambda_32 / 2 + Lambda_33 + Lambda_22 / 4 + Lambda_23 / 2`
    pub c1: F,
    /// `Lambda_31 / 6 + Lambda_21 / 12`
    pub c2: F,
    /// `1 + c2 / c1`
    pub predicted_limit_factor: F,
}

impl CaseStudyConstants<Rational64> {
    /// Exact constants from rational arithmetic.
    pub fn exact() -> Self {
        let r = Rational64::new;
        let sigma = Mat::from_rows(&[
            vec![r(1, 20), r(1, 8), r(1, 6)],
            vec![r(1, 8), r(1, 3), r(1, 2)],
            vec![r(1, 6), r(1, 2), r(1, 1)],
        ]);
        let inv = gauss_jordan_inverse(&sigma).expect("constant covariance is invertible");
        // 1-based entry (i, j)
        let l = |i: usize, j: usize| inv[(i - 1, j - 1)];
        let c1 = l(3, 2) / r(2, 1) + l(3, 3) + l(2, 2) / r(4, 1) + l(2, 3) / r(2, 1);
        let c2 = l(3, 1) / r(6, 1) + l(2, 1) / r(12, 1);
        let factor = Rational64::one() + c2 / c1;
        Self { sigma, sigma_inv: inv, c1, c2, predicted_limit_factor: factor }
    }

    pub fn to_f64(&self) -> CaseStudyConstants<f64> {
        let f = |v: &Rational64| v.to_f64().expect("finite rational");
        let m = |a: &Mat<Rational64>| Mat::from_fn(a.rows(), a.cols(), |i, j| f(&a[(i, j)]));
        CaseStudyConstants {
            sigma: m(&self.sigma),
            sigma_inv: m(&self.sigma_inv),
            c1: f(&self.c1),
            c2: f(&self.c2),
            predicted_limit_factor: f(&self.predicted_limit_factor),
        }
    }

    /// Whether `sigma_inv * sigma` is exactly the identity.
    pub fn inverse_is_exact(&self) -> bool {
        let p = self.sigma_inv.matmul(&self.sigma);
        (0..3).all(|i| (0..3).all(|j| if i == j { p[(i, j)].is_one() } else { p[(i, j)].is_zero() }))
    }
}

/// Floating-point constants, derived once from the exact ones.
pub fn case_study_constants() -> &'static CaseStudyConstants<f64> {
    static C: OnceLock<CaseStudyConstants<f64>> = OnceLock::new();
    C.get_or_init(|| CaseStudyConstants::exact().to_f64())
}

/// Truncated-drift estimator `g_n / f_n` of `beta` from complete
/// observations `(q, p, s)` of the three-dimensional toy model.
pub fn estimator_incorrect_drift<T: Real>(data: &ObservationSet<T>) -> Result<T> {
    if data.width() != 3 || !data.is_complete() {
        return Err(Error::Argument(format!(
            "complete (q, p, s) observations required, got {} column(s)",
            data.width()
        )));
    }
    let n = data.n_steps();
    if n == 0 {
        return Err(Error::Argument("no transitions in data".into()));
    }
    let c = case_study_constants();
    let lam = |i: usize, j: usize| lit::<T>(c.sigma_inv[(i - 1, j - 1)]);
    let (l31, l32, l33) = (lam(3, 1), lam(3, 2), lam(3, 3));
    let (l21, l22, l23) = (lam(2, 1), lam(2, 2), lam(2, 3));
    let half = lit::<T>(0.5);

    let dl = data.delta;
    let sd = dl.sqrt();
    let (d32, d52) = (sd * dl, sd * dl * dl);
    let mut sum_s2 = T::zero();
    let mut sum_g = T::zero();
    for i in 1..=n {
        let (prev, cur) = (data.row(i - 1), data.row(i));
        let (q0, p0, s0) = (prev[0], prev[1], prev[2]);
        let (q1, p1, s1) = (cur[0], cur[1], cur[2]);
        let m1 = (q1 - q0 - p0 * dl - s0 * dl * dl * half) / d52;
        let mp = (p1 - p0 - s0 * dl) / d32;
        let ms = (s1 - s0) / sd;
        let inner = l31 * m1 + l32 * mp + l33 * ms + half * (l21 * m1 + l22 * mp + l23 * ms);
        sum_g += s0 * inner;
        sum_s2 += s0 * s0;
    }
    let nf = from_usize::<T>(n);
    let f = lit::<T>(c.c1) * sum_s2 / nf;
    if !(sum_s2 / nf > T::min_positive_value()) || !f.is_finite() {
        return Err(Error::DegenerateData("rough component vanishes along the path".into()));
    }
    let g = -sum_g / (nf * sd);
    Ok(g / f)
}

/// Diffusion estimate `sigma_hat^2` with the middle component imputed by
/// forward differences `p_i = (q_{i+1} - q_i) / Delta`.
///
/// `q` must hold one more value than `s`.
pub fn estimator_finite_difference_sigma<T: Real>(q: &[T], s: &[T], delta: T) -> Result<T> {
    if q.len() != s.len() + 1 {
        return Err(Error::Argument(format!(
            "q series must be one longer than s series, got {} and {}",
            q.len(),
            s.len()
        )));
    }
    if s.len() < 2 {
        return Err(Error::Argument("at least one transition required".into()));
    }
    if !(delta > T::zero()) {
        return Err(Error::Argument(format!("step must be positive, got {delta}")));
    }
    let n = s.len() - 1;
    let half = lit::<T>(0.5);
    let (c12, c6, c4) = (lit::<T>(12.0), lit::<T>(6.0), lit::<T>(4.0));
    let sd = delta.sqrt();
    let d32 = sd * delta;
    let p_hat = |i: usize| (q[i + 1] - q[i]) / delta;
    let mut acc = T::zero();
    for i in 1..=n {
        let s0 = s[i - 1];
        let a = (p_hat(i) - p_hat(i - 1) - s0 * delta + s0 * delta * delta * half) / d32;
        let b = (s[i] - s0 + s0 * delta) / sd;
        // [[1/3, 1/2], [1/2, 1]]^{-1} = [[12, -6], [-6, 4]]
        acc += c12 * a * a - c6 * (a * b + a * b) + c4 * b * b;
    }
    Ok(acc / (lit::<T>(2.0) * from_usize::<T>(n)))
}

/// As [`estimator_finite_difference_sigma`] from observations of `(q, s)`
/// (or of the full state); the final `s` value is unused.
pub fn estimator_finite_difference_sigma_obs<T: Real>(data: &ObservationSet<T>) -> Result<T> {
    let col = |c: usize| {
        data.mask
            .iter()
            .position(|&m| m == c)
            .ok_or_else(|| Error::Argument(format!("coordinate {c} is not observed (mask {:?})", data.mask)))
    };
    let (iq, is) = (col(0)?, col(2)?);
    let q = data.coordinate(iq);
    let mut s = data.coordinate(is);
    s.pop();
    estimator_finite_difference_sigma(&q, &s, data.delta)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_constants() {
        let c = CaseStudyConstants::exact();
        assert!(c.inverse_is_exact());
        assert_eq!(c.sigma_inv[(0, 0)], Rational64::from_integer(720));
        assert_eq!(c.c1, Rational64::from_integer(21));
        assert_eq!(c.c2, Rational64::from_integer(-20));
        assert_eq!(c.predicted_limit_factor, Rational64::new(1, 21));
        let f = case_study_constants();
        assert!((f.predicted_limit_factor - 1.0 / 21.0).abs() < 1e-16);
    }

    #[test]
    fn fd_sigma_length_contract() {
        assert!(matches!(estimator_finite_difference_sigma(&[0.0, 1.0], &[0.0, 1.0], 0.1), Err(Error::Argument(_))));
    }

    #[test]
    fn fd_sigma_scale_equivariant() {
        let q: Vec<f64> = (0..12).map(|i| (i as f64 * 0.37).sin()).collect();
        let s: Vec<f64> = (0..11).map(|i| (i as f64 * 1.3).cos()).collect();
        let a = estimator_finite_difference_sigma(&q, &s, 0.01).unwrap();
        let q3: Vec<f64> = q.iter().map(|v| 3.0 * v).collect();
        let s3: Vec<f64> = s.iter().map(|v| 3.0 * v).collect();
        let b = estimator_finite_difference_sigma(&q3, &s3, 0.01).unwrap();
        assert!((b / a - 9.0).abs() < 1e-12);
    }

    #[test]
    fn degenerate_rough_component() {
        let data = ObservationSet { t0: 0.0, delta: 0.1, full_dim: 3, mask: vec![0, 1, 2], values: vec![0.0; 9] };
        assert!(matches!(estimator_incorrect_drift(&data), Err(Error::DegenerateData(_))));
    }
}
