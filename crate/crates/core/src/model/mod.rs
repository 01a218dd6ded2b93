//! Degenerate diffusion models with a three-layer state `x = (x_S1, x_S2, x_R)`.
//!
//! Only `x_R` is driven by Brownian motion. `x_S2` sees the noise through
//! the drift, and `x_S1` only through `x_S2`. Setting `n_s1 = 0` gives the
//! two-layer class, which the Euler and first-order local Gaussian schemes
//! still support.

pub mod builtin;
pub mod fd;

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{numerical_rank, Mat};
use crate::scalar::{lit, Real};

pub use builtin::{builtin_model, builtin_names, HiddenPrior, Preset};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub n_s1: usize,
    pub n_s2: usize,
    pub n_r: usize,
    pub d: usize,
    pub n: usize,
}

impl Dims {
    pub fn new(n_s1: usize, n_s2: usize, n_r: usize, d: usize) -> Result<Self> {
        if n_s2 == 0 || n_r == 0 || d == 0 {
            return Err(Error::Shape(format!("n_s2, n_r and d must be positive (got {n_s2}, {n_r}, {d})")));
        }
        Ok(Self { n_s1, n_s2, n_r, d, n: n_s1 + n_s2 + n_r })
    }

    #[inline]
    pub fn n_s(&self) -> usize {
        self.n_s1 + self.n_s2
    }

    /// Size of the block that is hidden when only `x_S1` is observed.
    #[inline]
    pub fn n_hidden(&self) -> usize {
        self.n_s2 + self.n_r
    }

    #[inline]
    pub fn s1(&self) -> Range<usize> {
        0..self.n_s1
    }

    #[inline]
    pub fn s2(&self) -> Range<usize> {
        self.n_s1..self.n_s()
    }

    #[inline]
    pub fn r(&self) -> Range<usize> {
        self.n_s()..self.n
    }

    pub fn is_two_layer(&self) -> bool {
        self.n_s1 == 0
    }
}

/// Which drift block a parameter enters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ParamBlock {
    BetaS1,
    BetaS2,
    BetaR,
    Sigma,
}

impl ParamBlock {
    pub const ALL: [ParamBlock; 4] = [ParamBlock::BetaS1, ParamBlock::BetaS2, ParamBlock::BetaR, ParamBlock::Sigma];
}

/// Block lengths and names of a parameter vector, always ordered
/// `(beta_S1, beta_S2, beta_R, sigma)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamLayout {
    pub lens: [usize; 4],
    pub names: Vec<String>,
}

impl ParamLayout {
    pub fn new(lens: [usize; 4], names: &[&str]) -> Result<Self> {
        let total: usize = lens.iter().sum();
        if names.len() != total {
            return Err(Error::Shape(format!("{} parameter names for {total} parameters", names.len())));
        }
        Ok(Self { lens, names: names.iter().map(|s| s.to_string()).collect() })
    }

    pub fn len(&self) -> usize {
        self.lens.iter().sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self, block: ParamBlock) -> Range<usize> {
        let idx = block as usize;
        let start: usize = self.lens[..idx].iter().sum();
        start..start + self.lens[idx]
    }

    pub fn block_of(&self, k: usize) -> ParamBlock {
        ParamBlock::ALL.into_iter().find(|b| self.range(*b).contains(&k)).expect("parameter index out of range")
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }
}

/// Parameter values together with the box that stands in for the compact
/// parameter set.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector<T> {
    layout: ParamLayout,
    values: Vec<T>,
    lower: Vec<T>,
    upper: Vec<T>,
}

impl<T: Real> ParamVector<T> {
    pub fn new(layout: ParamLayout, values: Vec<T>, lower: Vec<T>, upper: Vec<T>) -> Result<Self> {
        let p = layout.len();
        if values.len() != p || lower.len() != p || upper.len() != p {
            return Err(Error::Shape(format!(
                "parameter vector expects {p} entries (values {}, lower {}, upper {})",
                values.len(),
                lower.len(),
                upper.len()
            )));
        }
        for k in 0..p {
            if !(lower[k] <= upper[k]) {
                return Err(Error::Argument(format!("empty bound interval for {}", layout.names[k])));
            }
        }
        let out = Self { layout, values: lower.clone(), lower, upper };
        out.with_values(&values)
    }

    /// Same layout and bounds, new values. Fails when a value is outside
    /// its interval.
    pub fn with_values(&self, values: &[T]) -> Result<Self> {
        if values.len() != self.values.len() {
            return Err(Error::Shape(format!("expected {} parameter values, got {}", self.values.len(), values.len())));
        }
        for (k, v) in values.iter().enumerate() {
            if !(*v >= self.lower[k] && *v <= self.upper[k]) {
                return Err(Error::Argument(format!(
                    "{} = {} outside [{}, {}]",
                    self.layout.names[k], v, self.lower[k], self.upper[k]
                )));
            }
        }
        Ok(Self { values: values.to_vec(), ..self.clone() })
    }

    /// Projects `values` onto the box.
    pub fn clamped(&self, values: &[T]) -> Self {
        let values = values.iter().enumerate().map(|(k, v)| v.max(self.lower[k]).min(self.upper[k])).collect();
        Self { values, ..self.clone() }
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn lower(&self) -> &[T] {
        &self.lower
    }

    pub fn upper(&self) -> &[T] {
        &self.upper
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn block(&self, b: ParamBlock) -> &[T] {
        &self.values[self.layout.range(b)]
    }

    pub fn beta_s1(&self) -> &[T] {
        self.block(ParamBlock::BetaS1)
    }

    pub fn beta_s2(&self) -> &[T] {
        self.block(ParamBlock::BetaS2)
    }

    pub fn beta_r(&self) -> &[T] {
        self.block(ParamBlock::BetaR)
    }

    pub fn sigma(&self) -> &[T] {
        self.block(ParamBlock::Sigma)
    }

    pub fn get(&self, name: &str) -> Option<T> {
        self.layout.index_of(name).map(|k| self.values[k])
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.values.iter().map(|v| crate::scalar::to_f64(*v)).collect()
    }
}

/// A model in the three-layer class.
///
/// Parameters are passed as the flat vector in canonical block order; the
/// model reads whichever entries it needs. `drift_s1` only receives
/// `x_S = (x_S1, x_S2)`, which makes independence from `x_R` structural.
pub trait HypoModel<T: Real>: Send + Sync {
    fn name(&self) -> &str;
    fn dims(&self) -> Dims;
    fn layout(&self) -> &ParamLayout;

    fn drift_s1(&self, x_s: &[T], theta: &[T], out: &mut [T]);
    fn drift_s2(&self, x: &[T], theta: &[T], out: &mut [T]);
    fn drift_r(&self, x: &[T], theta: &[T], out: &mut [T]);
    /// Column `j` of the rough-block diffusion matrix.
    fn diffusion_r(&self, x: &[T], theta: &[T], j: usize, out: &mut [T]);

    /// `d V_S1 / d x_S2`, row-major `n_s1 x n_s2`.
    fn jac_s1_wrt_s2(&self, x_s: &[T], theta: &[T], out: &mut [T]) {
        let d = self.dims();
        let f = |xs: &[T], o: &mut [T]| self.drift_s1(xs, theta, o);
        fd::partial_jacobian(&f, x_s, d.s2(), d.n_s1, out).expect("finite-difference jacobian of drift_s1");
    }

    /// `d V_S2 / d x_R`, row-major `n_s2 x n_r`.
    fn jac_s2_wrt_r(&self, x: &[T], theta: &[T], out: &mut [T]) {
        let d = self.dims();
        let f = |xx: &[T], o: &mut [T]| self.drift_s2(xx, theta, o);
        fd::partial_jacobian(&f, x, d.r(), d.n_s2, out).expect("finite-difference jacobian of drift_s2");
    }

    /// Closed forms of `L V_S1`, `L^2 V_S1` and `L V_S2`. Returns `false`
    /// when the model has none.
    fn generator_terms(&self, _x: &[T], _theta: &[T], _l_s1: &mut [T], _l2_s1: &mut [T], _l_s2: &mut [T]) -> bool {
        false
    }

    /// Whether finite differences may stand in for missing closed forms.
    fn derivative_fallback(&self) -> bool {
        true
    }

    /// Whether the diffusion coefficients are independent of the state.
    fn constant_diffusion(&self) -> bool {
        false
    }

    /// Whether the diffusion and both Jacobians are independent of the
    /// state, which makes the unit-step covariance a function of `theta`
    /// alone. Lets likelihood loops factorize it once.
    fn constant_covariance(&self) -> bool {
        false
    }
}

fn check_state<T: Real>(dims: &Dims, x: &[T]) -> Result<()> {
    if x.len() != dims.n {
        return Err(Error::Shape(format!("state has length {}, model expects {}", x.len(), dims.n)));
    }
    Ok(())
}

fn check_theta<T: Real>(model: &dyn HypoModel<T>, theta: &[T]) -> Result<()> {
    if theta.len() != model.layout().len() {
        return Err(Error::Shape(format!("{} parameters given, model expects {}", theta.len(), model.layout().len())));
    }
    Ok(())
}

fn check_finite<T: Real>(block: &str, v: &[T]) -> Result<()> {
    if v.iter().all(|a| a.is_finite()) {
        Ok(())
    } else {
        Err(Error::Numeric { block: block.into(), detail: "non-finite value".into() })
    }
}

/// Full drift `V_0(x) = (V_S1, V_S2, V_R)` into `out` (no checks).
pub fn drift_into<T: Real>(model: &dyn HypoModel<T>, x: &[T], theta: &[T], out: &mut [T]) {
    let d = model.dims();
    let (s1, rest) = out.split_at_mut(d.n_s1);
    let (s2, r) = rest.split_at_mut(d.n_s2);
    model.drift_s1(&x[..d.n_s()], theta, s1);
    model.drift_s2(x, theta, s2);
    model.drift_r(x, theta, r);
}

/// Diffusion column `V_j` embedded in the full state space.
pub fn diffusion_full_into<T: Real>(model: &dyn HypoModel<T>, x: &[T], theta: &[T], j: usize, out: &mut [T]) {
    let d = model.dims();
    out[..d.n_s()].iter_mut().for_each(|a| *a = T::zero());
    model.diffusion_r(x, theta, j, &mut out[d.n_s()..]);
}

/// Stacked drift with shape and finiteness checks.
pub fn eval_drift<T: Real>(model: &dyn HypoModel<T>, x: &[T], theta: &ParamVector<T>) -> Result<Vec<T>> {
    let d = model.dims();
    check_state(&d, x)?;
    check_theta(model, theta.values())?;
    let mut out = vec![T::zero(); d.n];
    drift_into(model, x, theta.values(), &mut out);
    check_finite("S1", &out[d.s1()])?;
    check_finite("S2", &out[d.s2()])?;
    check_finite("R", &out[d.r()])?;
    Ok(out)
}

/// Target of the generator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phi {
    VS1,
    VS2,
}

/// Generator of a vector function by finite differences:
/// `L phi = D_{V0} phi + 1/2 sum_k D^2_{V_k} phi`.
fn generator_fd<T: Real>(
    model: &dyn HypoModel<T>,
    theta: &[T],
    phi: &fd::Field<'_, T>,
    m: usize,
    second_order: bool,
    x: &[T],
    out: &mut [T],
) -> Result<()> {
    let d = model.dims();
    let mut v0 = vec![T::zero(); d.n];
    drift_into(model, x, theta, &mut v0);
    fd::directional(phi, x, &v0, m, out)?;
    if second_order {
        let mut vk = vec![T::zero(); d.n];
        let mut acc = vec![T::zero(); m];
        let half = lit::<T>(0.5);
        for j in 0..d.d {
            diffusion_full_into(model, x, theta, j, &mut vk);
            fd::second_directional(phi, x, &vk, m, &mut acc)?;
            for i in 0..m {
                out[i] += half * acc[i];
            }
        }
    }
    Ok(())
}

/// Finite-difference versions of the three generator terms.
pub fn generator_terms_fd<T: Real>(
    model: &dyn HypoModel<T>,
    x: &[T],
    theta: &[T],
    l_s1: &mut [T],
    l2_s1: &mut [T],
    l_s2: &mut [T],
) -> Result<()> {
    let d = model.dims();
    let ns = d.n_s();
    let phi_s1 = |xx: &[T], o: &mut [T]| model.drift_s1(&xx[..ns], theta, o);
    let phi_s2 = |xx: &[T], o: &mut [T]| model.drift_s2(xx, theta, o);
    // V_S1 ignores x_R and the noise only moves x_R, so the diffusion part vanishes.
    generator_fd(model, theta, &phi_s1, d.n_s1, false, x, l_s1)?;
    generator_fd(model, theta, &phi_s2, d.n_s2, true, x, l_s2)?;
    let l_phi = |xx: &[T], o: &mut [T]| {
        if generator_fd(model, theta, &phi_s1, d.n_s1, false, xx, o).is_err() {
            o.iter_mut().for_each(|a| *a = T::nan());
        }
    };
    generator_fd(model, theta, &l_phi, d.n_s1, true, x, l2_s1)?;
    check_finite("generator", l_s1)?;
    check_finite("generator", l2_s1)?;
    check_finite("generator", l_s2)
}

/// Closed-form generator terms if the model has them, otherwise finite
/// differences when permitted.
pub fn generator_terms_into<T: Real>(
    model: &dyn HypoModel<T>,
    x: &[T],
    theta: &[T],
    l_s1: &mut [T],
    l2_s1: &mut [T],
    l_s2: &mut [T],
) -> Result<()> {
    if model.generator_terms(x, theta, l_s1, l2_s1, l_s2) {
        return Ok(());
    }
    if !model.derivative_fallback() {
        return Err(Error::Config(format!(
            "model '{}' supplies no generator terms and finite-difference fallback is disabled",
            model.name()
        )));
    }
    generator_terms_fd(model, x, theta, l_s1, l2_s1, l_s2)
}

/// `L phi(x)` for `phi` one of the smooth drifts.
pub fn apply_generator<T: Real>(model: &dyn HypoModel<T>, phi: Phi, x: &[T], theta: &ParamVector<T>) -> Result<Vec<T>> {
    let d = model.dims();
    check_state(&d, x)?;
    check_theta(model, theta.values())?;
    let (mut a, mut b, mut c) = (vec![T::zero(); d.n_s1], vec![T::zero(); d.n_s1], vec![T::zero(); d.n_s2]);
    generator_terms_into(model, x, theta.values(), &mut a, &mut b, &mut c)?;
    Ok(match phi {
        Phi::VS1 => a,
        Phi::VS2 => c,
    })
}

/// `L^2 V_S1(x)`.
pub fn apply_generator_twice<T: Real>(model: &dyn HypoModel<T>, x: &[T], theta: &ParamVector<T>) -> Result<Vec<T>> {
    let d = model.dims();
    check_state(&d, x)?;
    check_theta(model, theta.values())?;
    let (mut a, mut b, mut c) = (vec![T::zero(); d.n_s1], vec![T::zero(); d.n_s1], vec![T::zero(); d.n_s2]);
    generator_terms_into(model, x, theta.values(), &mut a, &mut b, &mut c)?;
    Ok(b)
}

/// Ranks of the three span families of the Hormander-type condition.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct A2Report {
    pub rank_r: usize,
    pub rank_s2r: usize,
    pub rank_full: usize,
    pub pass: bool,
    /// Columns `V_k`, `[V~0, V_k]`, `[V~0, [V~0, V_k]]` for each `k`, as f64.
    pub columns: Vec<Vec<f64>>,
}

/// Evaluates the span conditions at `x` using Lie brackets of the
/// Stratonovich drift, all by finite differences.
pub fn check_condition_a2<T: Real>(
    model: &dyn HypoModel<T>,
    x: &[T],
    theta: &ParamVector<T>,
    tol: T,
) -> Result<A2Report> {
    if !(tol > T::zero()) {
        return Err(Error::Argument(format!("rank tolerance must be positive, got {tol}")));
    }
    let d = model.dims();
    check_state(&d, x)?;
    check_theta(model, theta.values())?;
    if d.is_two_layer() {
        return Err(Error::Argument("condition check requires a three-layer model (n_s1 >= 1)".into()));
    }
    let th = theta.values();
    let n = d.n;
    let constant = model.constant_diffusion();

    let strat = |xx: &[T], o: &mut [T]| {
        drift_into(model, xx, th, o);
        if constant {
            return;
        }
        let mut vk = vec![T::zero(); n];
        let mut corr = vec![T::zero(); n];
        for j in 0..d.d {
            diffusion_full_into(model, xx, th, j, &mut vk);
            let vj = |y: &[T], oo: &mut [T]| diffusion_full_into(model, y, th, j, oo);
            if fd::directional(&vj, xx, &vk, n, &mut corr).is_err() {
                o.iter_mut().for_each(|a| *a = T::nan());
                return;
            }
            for i in 0..n {
                o[i] -= lit::<T>(0.5) * corr[i];
            }
        }
    };

    let mut cols_r = Vec::new();
    let mut cols_s2r = Vec::new();
    let mut cols_full = Vec::new();
    for k in 0..d.d {
        let vk = |y: &[T], o: &mut [T]| diffusion_full_into(model, y, th, k, o);
        let mut v = vec![T::zero(); n];
        vk(x, &mut v);
        let mut b1 = vec![T::zero(); n];
        fd::lie_bracket(&strat, &vk, x, &mut b1)?;
        let br1 = |y: &[T], o: &mut [T]| {
            if fd::lie_bracket(&strat, &vk, y, o).is_err() {
                o.iter_mut().for_each(|a| *a = T::nan());
            }
        };
        let mut b2 = vec![T::zero(); n];
        fd::lie_bracket(&strat, &br1, x, &mut b2)?;
        check_finite("lie bracket", &b1)?;
        check_finite("lie bracket", &b2)?;
        cols_r.push(v[d.r()].to_vec());
        cols_s2r.push(v[d.n_s1..].to_vec());
        cols_s2r.push(b1[d.n_s1..].to_vec());
        cols_full.push(v);
        cols_full.push(b1);
        cols_full.push(b2);
    }
    let as_mat = |cols: &[Vec<T>]| {
        let rows = cols[0].len();
        Mat::from_fn(rows, cols.len(), |i, j| cols[j][i])
    };
    let rank_r = numerical_rank(&as_mat(&cols_r), tol);
    let rank_s2r = numerical_rank(&as_mat(&cols_s2r), tol);
    let rank_full = numerical_rank(&as_mat(&cols_full), tol);
    Ok(A2Report {
        rank_r,
        rank_s2r,
        rank_full,
        pass: rank_r == d.n_r && rank_s2r == d.n_s2 + d.n_r && rank_full == n,
        columns: cols_full.iter().map(|c| c.iter().map(|v| crate::scalar::to_f64(*v)).collect()).collect(),
    })
}

/// Prony-series memory kernel `K(t) = sum_l c_l / tau_l * exp(-t / tau_l)`.
pub fn memory_kernel_prony<T: Real>(t: T, c: &[T], tau: &[T]) -> Result<T> {
    if c.len() != tau.len() {
        return Err(Error::Shape(format!("{} weights but {} time scales", c.len(), tau.len())));
    }
    if !(t >= T::zero()) {
        return Err(Error::Argument(format!("kernel time must be non-negative, got {t}")));
    }
    if let Some(bad) = tau.iter().find(|v| !(**v > T::zero())) {
        return Err(Error::Argument(format!("time scales must be positive, got {bad}")));
    }
    Ok(c.iter().zip(tau).map(|(ci, ti)| *ci / *ti * (-t / *ti).exp()).sum())
}
