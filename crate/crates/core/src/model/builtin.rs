//! Built-in models and their reference parameter presets.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::scalar::{lit, Real};

use super::{Dims, HypoModel, ParamLayout, ParamVector};

/// Gaussian prior on the hidden block `(x_S2, x_R)` used to start the filter.
#[derive(Debug, Clone)]
pub struct HiddenPrior<T> {
    pub mean: Vec<T>,
    pub cov: Mat<T>,
}

impl<T: Real> HiddenPrior<T> {
    pub fn isotropic(dim: usize, var: T) -> Self {
        Self { mean: vec![T::zero(); dim], cov: Mat::identity(dim).scale(var) }
    }
}

/// A model together with the reference values used by the experiments.
#[derive(Clone)]
pub struct Preset<T: Real> {
    pub model: Arc<dyn HypoModel<T>>,
    pub theta_true: ParamVector<T>,
    pub theta_init: ParamVector<T>,
    pub x0: Vec<T>,
    pub prior: HiddenPrior<T>,
}

const NAMES: [&str; 5] = ["toy3", "toy2", "qgle_ho", "qgle_dw", "qgle_prony"];

pub fn builtin_names() -> &'static [&'static str] {
    &NAMES
}

fn pv<T: Real>(layout: &ParamLayout, values: &[f64], lo: &[f64], hi: &[f64]) -> Result<ParamVector<T>> {
    let c = |v: &[f64]| v.iter().map(|a| lit::<T>(*a)).collect::<Vec<T>>();
    ParamVector::new(layout.clone(), c(values), c(lo), c(hi))
}

/// Looks up a built-in model by name.
pub fn builtin_model<T: Real>(name: &str) -> Result<Preset<T>> {
    let v = |a: &[f64]| a.iter().map(|x| lit::<T>(*x)).collect::<Vec<T>>();
    match name {
        "toy3" => {
            let m = Toy3::new(true);
            let (lo, hi) = ([1e-3, 1e-3], [50.0, 50.0]);
            Ok(Preset {
                theta_true: pv(&m.layout, &[2.0, 4.0], &lo, &hi)?,
                theta_init: pv(&m.layout, &[1.0, 3.0], &lo, &hi)?,
                x0: v(&[0.0, 0.0, 0.0]),
                prior: HiddenPrior::isotropic(2, lit(10.0)),
                model: Arc::new(m),
            })
        }
        "toy2" => {
            let m = Toy3::new(false);
            let (lo, hi) = ([1e-3], [50.0]);
            Ok(Preset {
                theta_true: pv(&m.layout, &[1.0], &lo, &hi)?,
                theta_init: pv(&m.layout, &[2.0], &lo, &hi)?,
                x0: v(&[0.0, 0.0, 0.0]),
                prior: HiddenPrior::isotropic(2, lit(10.0)),
                model: Arc::new(m),
            })
        }
        "qgle_ho" | "qgle_dw" => {
            let dw = name == "qgle_dw";
            let m = Qgle::new(if dw { Potential::DoubleWell } else { Potential::Harmonic });
            let (lo, hi) = ([1e-3; 4], [50.0; 4]);
            let truth = if dw { [1.0, 2.0, 4.0, 4.0] } else { [1.0, 2.0, 4.0, 1.0] };
            let init = if dw { [3.0; 4] } else { [2.0; 4] };
            Ok(Preset {
                theta_true: pv(&m.layout, &truth, &lo, &hi)?,
                theta_init: pv(&m.layout, &init, &lo, &hi)?,
                x0: v(&[0.0, 0.0, 0.0]),
                prior: HiddenPrior::isotropic(2, lit(10.0)),
                model: Arc::new(m),
            })
        }
        "qgle_prony" => {
            let m = QgleProny::new(2.949, [0.30, 0.90, 1200.0, 0.001]);
            let lo = [1e-4, 1e-4, 1e-4, 1e-4];
            let hi = [20.0, 100.0, 20.0, 100.0];
            let kt = m.kt;
            Ok(Preset {
                theta_true: pv(&m.layout, &[0.22, 0.007, 1.2, 4.6], &lo, &hi)?,
                theta_init: pv(&m.layout, &[0.1, 0.01, 1.0, 10.0], &lo, &hi)?,
                x0: v(&[0.3, 0.0, 0.0, 0.0]),
                prior: HiddenPrior::isotropic(3, lit(kt)),
                model: Arc::new(m),
            })
        }
        other => {
            Err(Error::Lookup { name: other.to_string(), available: NAMES.iter().map(|s| s.to_string()).collect() })
        }
    }
}

/// Linear three-layer chain `dq = p dt, dp = s dt, ds = -beta s dt + sigma dB`.
///
/// With `free_beta = false` the drift rate is pinned to 1 and `sigma` is the
/// only parameter.
#[derive(Debug, Clone)]
pub struct Toy3 {
    layout: ParamLayout,
    free_beta: bool,
}

impl Toy3 {
    pub fn new(free_beta: bool) -> Self {
        let layout = if free_beta {
            ParamLayout::new([0, 0, 1, 1], &["beta", "sigma"])
        } else {
            ParamLayout::new([0, 0, 0, 1], &["sigma"])
        }
        .expect("static layout");
        Self { layout, free_beta }
    }

    #[inline]
    fn beta_sigma<T: Real>(&self, theta: &[T]) -> (T, T) {
        if self.free_beta {
            (theta[0], theta[1])
        } else {
            (T::one(), theta[0])
        }
    }
}

impl<T: Real> HypoModel<T> for Toy3 {
    fn name(&self) -> &str {
        if self.free_beta {
            "toy3"
        } else {
            "toy2"
        }
    }

    fn dims(&self) -> Dims {
        Dims { n_s1: 1, n_s2: 1, n_r: 1, d: 1, n: 3 }
    }

    fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    fn drift_s1(&self, x_s: &[T], _theta: &[T], out: &mut [T]) {
        out[0] = x_s[1];
    }

    fn drift_s2(&self, x: &[T], _theta: &[T], out: &mut [T]) {
        out[0] = x[2];
    }

    fn drift_r(&self, x: &[T], theta: &[T], out: &mut [T]) {
        let (beta, _) = self.beta_sigma(theta);
        out[0] = -beta * x[2];
    }

    fn diffusion_r(&self, _x: &[T], theta: &[T], _j: usize, out: &mut [T]) {
        out[0] = self.beta_sigma(theta).1;
    }

    fn jac_s1_wrt_s2(&self, _x_s: &[T], _theta: &[T], out: &mut [T]) {
        out[0] = T::one();
    }

    fn jac_s2_wrt_r(&self, _x: &[T], _theta: &[T], out: &mut [T]) {
        out[0] = T::one();
    }

    fn generator_terms(&self, x: &[T], theta: &[T], l_s1: &mut [T], l2_s1: &mut [T], l_s2: &mut [T]) -> bool {
        let (beta, _) = self.beta_sigma(theta);
        l_s1[0] = x[2];
        l2_s1[0] = -beta * x[2];
        l_s2[0] = -beta * x[2];
        true
    }

    fn constant_diffusion(&self) -> bool {
        true
    }

    fn constant_covariance(&self) -> bool {
        true
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Potential {
    /// `U(q) = D q^2 / 2`
    Harmonic,
    /// `U(q) = D q^2 / 2 + sin(1/4 + 2q)`
    DoubleWell,
}

/// Scalar quasi-Markovian Langevin model
/// `dq = p dt, dp = (-U'(q) + lambda s) dt, ds = (-lambda p - alpha s) dt + sigma dB`.
///
/// `lambda` lives in the S2 block; the rough drift reads it from there.
#[derive(Debug, Clone)]
pub struct Qgle {
    layout: ParamLayout,
    potential: Potential,
}

impl Qgle {
    pub fn new(potential: Potential) -> Self {
        Self {
            layout: ParamLayout::new([0, 2, 1, 1], &["D", "lambda", "alpha", "sigma"]).expect("static layout"),
            potential,
        }
    }

    /// `(U'(q), U''(q))`.
    #[inline]
    fn grad_hess<T: Real>(&self, q: T, d: T) -> (T, T) {
        match self.potential {
            Potential::Harmonic => (d * q, d),
            Potential::DoubleWell => {
                let arg = lit::<T>(0.25) + lit::<T>(2.0) * q;
                (d * q + lit::<T>(2.0) * arg.cos(), d - lit::<T>(4.0) * arg.sin())
            }
        }
    }
}

impl<T: Real> HypoModel<T> for Qgle {
    fn name(&self) -> &str {
        match self.potential {
            Potential::Harmonic => "qgle_ho",
            Potential::DoubleWell => "qgle_dw",
        }
    }

    fn dims(&self) -> Dims {
        Dims { n_s1: 1, n_s2: 1, n_r: 1, d: 1, n: 3 }
    }

    fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    fn drift_s1(&self, x_s: &[T], _theta: &[T], out: &mut [T]) {
        out[0] = x_s[1];
    }

    fn drift_s2(&self, x: &[T], theta: &[T], out: &mut [T]) {
        let (du, _) = self.grad_hess(x[0], theta[0]);
        out[0] = -du + theta[1] * x[2];
    }

    fn drift_r(&self, x: &[T], theta: &[T], out: &mut [T]) {
        out[0] = -theta[1] * x[1] - theta[2] * x[2];
    }

    fn diffusion_r(&self, _x: &[T], theta: &[T], _j: usize, out: &mut [T]) {
        out[0] = theta[3];
    }

    fn jac_s1_wrt_s2(&self, _x_s: &[T], _theta: &[T], out: &mut [T]) {
        out[0] = T::one();
    }

    fn jac_s2_wrt_r(&self, _x: &[T], theta: &[T], out: &mut [T]) {
        out[0] = theta[1];
    }

    fn generator_terms(&self, x: &[T], theta: &[T], l_s1: &mut [T], l2_s1: &mut [T], l_s2: &mut [T]) -> bool {
        let (q, p, s) = (x[0], x[1], x[2]);
        let (lam, alpha) = (theta[1], theta[2]);
        let (du, d2u) = self.grad_hess(q, theta[0]);
        l_s1[0] = -du + lam * s;
        let l_vs2 = -d2u * p + lam * (-lam * p - alpha * s);
        l2_s1[0] = l_vs2;
        l_s2[0] = l_vs2;
        true
    }

    fn constant_diffusion(&self) -> bool {
        true
    }

    fn constant_covariance(&self) -> bool {
        true
    }
}

/// Langevin model with a two-term Prony memory kernel at unit mass:
/// `dq = p dt, dp = (-U'(q) + s_1 + s_2) dt,
///  ds_l = (-s_l / tau_l - c_l p / tau_l) dt + sqrt(2 kT c_l) / tau_l dB_l`
/// with `U(q) = a (q - q_min)^2 (q - q_max)^2 + b q^3`.
///
/// All four kernel parameters sit in the rough block since they enter both
/// the rough drift and the diffusion.
#[derive(Debug, Clone)]
pub struct QgleProny {
    layout: ParamLayout,
    pub kt: f64,
    /// `(q_min, q_max, a, b)`
    pub u: [f64; 4],
}

impl QgleProny {
    pub fn new(kt: f64, u: [f64; 4]) -> Self {
        Self { layout: ParamLayout::new([0, 0, 4, 0], &["c1", "tau1", "c2", "tau2"]).expect("static layout"), kt, u }
    }

    #[inline]
    fn grad_hess<T: Real>(&self, q: T) -> (T, T) {
        let [qmin, qmax, a, b] = self.u.map(lit::<T>);
        let u = q - qmin;
        let v = q - qmax;
        let w = u + v;
        let two = lit::<T>(2.0);
        let grad = two * a * u * v * w + lit::<T>(3.0) * b * q * q;
        let hess = two * a * (w * w + two * u * v) + lit::<T>(6.0) * b * q;
        (grad, hess)
    }
}

impl<T: Real> HypoModel<T> for QgleProny {
    fn name(&self) -> &str {
        "qgle_prony"
    }

    fn dims(&self) -> Dims {
        Dims { n_s1: 1, n_s2: 1, n_r: 2, d: 2, n: 4 }
    }

    fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    fn drift_s1(&self, x_s: &[T], _theta: &[T], out: &mut [T]) {
        out[0] = x_s[1];
    }

    fn drift_s2(&self, x: &[T], _theta: &[T], out: &mut [T]) {
        let (du, _) = self.grad_hess(x[0]);
        out[0] = -du + x[2] + x[3];
    }

    fn drift_r(&self, x: &[T], theta: &[T], out: &mut [T]) {
        let p = x[1];
        for l in 0..2 {
            let (c, tau) = (theta[2 * l], theta[2 * l + 1]);
            out[l] = -(x[2 + l] + c * p) / tau;
        }
    }

    fn diffusion_r(&self, _x: &[T], theta: &[T], j: usize, out: &mut [T]) {
        let (c, tau) = (theta[2 * j], theta[2 * j + 1]);
        out[0] = T::zero();
        out[1] = T::zero();
        out[j] = (lit::<T>(2.0 * self.kt) * c).sqrt() / tau;
    }

    fn jac_s1_wrt_s2(&self, _x_s: &[T], _theta: &[T], out: &mut [T]) {
        out[0] = T::one();
    }

    fn jac_s2_wrt_r(&self, _x: &[T], _theta: &[T], out: &mut [T]) {
        out[0] = T::one();
        out[1] = T::one();
    }

    fn generator_terms(&self, x: &[T], theta: &[T], l_s1: &mut [T], l2_s1: &mut [T], l_s2: &mut [T]) -> bool {
        let (du, d2u) = self.grad_hess(x[0]);
        let p = x[1];
        l_s1[0] = -du + x[2] + x[3];
        let mut acc = -d2u * p;
        for l in 0..2 {
            let (c, tau) = (theta[2 * l], theta[2 * l + 1]);
            acc += -(x[2 + l] + c * p) / tau;
        }
        l2_s1[0] = acc;
        l_s2[0] = acc;
        true
    }

    fn constant_diffusion(&self) -> bool {
        true
    }

    fn constant_covariance(&self) -> bool {
        true
    }
}
