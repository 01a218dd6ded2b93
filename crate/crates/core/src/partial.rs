//! Kalman filtering and marginal likelihood when only the smoothest block is
//! observed.
//!
//! For conditionally Gaussian models the scheme's mean is affine in the
//! hidden block `h = (x_S2, x_R)` once `x_S1` is fixed, and its covariance
//! does not depend on `h`:
//!
//! ```text
//! X_{k+1} = b(x_S1,k) + A(x_S1,k) h_k + w_k,   w_k ~ N(0, Sigma_w(x_S1,k))
//! ```
//!
//! `b` and `A` are read off the mean by evaluating it at `h = 0` and at the
//! unit vectors, and the affinity is probed once per likelihood evaluation.

use std::io::Write;

use crate::complete::{infeasible, minimize_params, ContrastResult};
use crate::density::{LgEvaluator, MeanVariant, NEAR_SINGULAR};
use crate::error::{Error, Result};
use crate::linalg::{cholesky_in_place, forward_subst_in_place, Mat};
use crate::model::{HiddenPrior, HypoModel, ParamVector};
use crate::optim::OptimConfig;
use crate::scalar::{from_usize, lit, to_f64, Real};
use crate::stochastics::ObservationSet;

/// Relative tolerance of the affinity and covariance-independence probes.
pub const AFFINITY_TOL: f64 = 1e-10;

/// A conditionally Gaussian model with its filter initialisation.
#[derive(Clone)]
pub struct CondGaussSpec<'m, T: Real> {
    pub model: &'m dyn HypoModel<T>,
    pub variant: MeanVariant,
    /// Gaussian law of the hidden block at the first observation.
    pub prior: HiddenPrior<T>,
}

impl<'m, T: Real> CondGaussSpec<'m, T> {
    pub fn new(model: &'m dyn HypoModel<T>, variant: MeanVariant, prior: HiddenPrior<T>) -> Result<Self> {
        let d = model.dims();
        if d.is_two_layer() {
            return Err(Error::ModelShape(format!("model '{}' has no top smooth block to observe", model.name())));
        }
        let h = d.n_hidden();
        if prior.mean.len() != h || prior.cov.shape() != (h, h) {
            return Err(Error::Shape(format!(
                "hidden prior has dimension {} / {:?}, model hides {h} coordinates",
                prior.mean.len(),
                prior.cov.shape()
            )));
        }
        Ok(Self { model, variant, prior })
    }

    fn obs_dim(&self) -> usize {
        self.model.dims().n_s1
    }

    fn hidden_dim(&self) -> usize {
        self.model.dims().n_hidden()
    }
}

/// `X_{k+1} = b + A h + w`, `w ~ N(0, sigma_w)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linearization<T> {
    pub b: Vec<T>,
    /// `N x (N_S2 + N_R)`
    pub a: Mat<T>,
    pub sigma_w: Mat<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterState<T> {
    pub m: Vec<T>,
    pub q: Mat<T>,
    pub k: usize,
}

impl<T: Real> FilterState<T> {
    pub fn from_prior(prior: &HiddenPrior<T>) -> Self {
        Self { m: prior.mean.clone(), q: prior.cov.clone(), k: 0 }
    }
}

/// One-step predictive law of the observed block.
#[derive(Debug, Clone, PartialEq)]
pub struct Predictive<T> {
    pub mu_s1: Vec<T>,
    pub lambda_s1s1: Mat<T>,
    /// `log N(x_S1,k+1; mu_s1, lambda_s1s1)`
    pub log_density: T,
}

/// Allocation-free filter workspace.
struct Filter<'a, 'm, T: Real> {
    spec: &'a CondGaussSpec<'m, T>,
    ev: LgEvaluator<'m, T>,
    n: usize,
    n1: usize,
    h: usize,
    x: Vec<T>,
    b: Vec<T>,
    /// `N x H`
    a: Vec<T>,
    sigma_w: Vec<T>,
    sigma_cached: bool,
    mu: Vec<T>,
    aq: Vec<T>,
    p: Vec<T>,
    s: Vec<T>,
    e: Vec<T>,
    /// `n1 x H`, `L^{-1} P_OH`
    w: Vec<T>,
    col: Vec<T>,
    m: Vec<T>,
    q: Vec<T>,
}

impl<'a, 'm, T: Real> Filter<'a, 'm, T> {
    fn new(spec: &'a CondGaussSpec<'m, T>) -> Self {
        let d = spec.model.dims();
        let (n, n1, h) = (d.n, d.n_s1, d.n_hidden());
        let z = |k: usize| vec![T::zero(); k];
        Self {
            spec,
            ev: LgEvaluator::new(spec.model, spec.variant),
            n,
            n1,
            h,
            x: z(n),
            b: z(n),
            a: z(n * h),
            sigma_w: z(n * n),
            sigma_cached: false,
            mu: z(n),
            aq: z(n * h),
            p: z(n * n),
            s: z(n1 * n1),
            e: z(n1),
            w: z(n1 * h),
            col: z(n1),
            m: spec.prior.mean.clone(),
            q: spec.prior.cov.as_slice().to_vec(),
        }
    }

    fn set_state(&mut self, m: &[T], q: &[T]) {
        self.m.copy_from_slice(m);
        self.q.copy_from_slice(q);
    }

    /// Fills `b` (as an increment over `(x_s1, 0)`), `A` and `Sigma_w` for
    /// the step from `x_s1`.
    fn linearize(&mut self, delta: T, x_s1: &[T], theta: &[T]) -> Result<()> {
        let (n, n1, h) = (self.n, self.n1, self.h);
        self.x[..n1].copy_from_slice(x_s1);
        self.x[n1..].iter_mut().for_each(|v| *v = T::zero());
        self.ev.increment_into(delta, &self.x, theta, &mut self.b)?;
        for j in 0..h {
            self.x[n1 + j] = T::one();
            self.ev.increment_into(delta, &self.x, theta, &mut self.mu)?;
            self.x[n1 + j] = T::zero();
            for i in 0..n {
                self.a[i * h + j] = self.mu[i] - self.b[i];
            }
            self.a[(n1 + j) * h + j] += T::one();
        }
        if !self.sigma_cached {
            let sd = delta.sqrt();
            let d = self.spec.model.dims();
            let scale: Vec<T> = (0..n)
                .map(|i| {
                    if i < d.n_s1 {
                        sd.powi(5)
                    } else if i < d.n_s() {
                        sd.powi(3)
                    } else {
                        sd
                    }
                })
                .collect();
            let unit = self.ev.unit_covariance(&self.x, theta);
            for i in 0..n {
                for j in 0..n {
                    self.sigma_w[i * n + j] = unit[i * n + j] * scale[i] * scale[j];
                }
            }
            self.sigma_cached = self.spec.model.constant_covariance();
        }
        Ok(())
    }

    /// Checks that the mean is affine in `h` and that the covariance does
    /// not depend on it, at a fixed probe point.
    fn probe(&mut self, delta: T, x_s1: &[T], theta: &[T]) -> Result<()> {
        let (n, n1, h) = (self.n, self.n1, self.h);
        self.linearize(delta, x_s1, theta)?;
        let probe: Vec<T> = (0..h).map(|j| lit::<T>([0.7, -1.3, 0.45, 2.1, -0.85][j % 5] * (1.0 + j as f64))).collect();
        self.x[..n1].copy_from_slice(x_s1);
        self.x[n1..].copy_from_slice(&probe);
        self.ev.mean_into(delta, &self.x, theta, &mut self.mu)?;
        let mut worst = T::zero();
        for i in 0..n {
            let base = if i < n1 { x_s1[i] } else { T::zero() };
            let lin: T = base + self.b[i] + (0..h).map(|j| self.a[i * h + j] * probe[j]).sum::<T>();
            let scale = self.mu[i].abs().max(lin.abs()).max(T::one());
            worst = worst.max((self.mu[i] - lin).abs() / scale);
        }
        if !(worst <= lit(AFFINITY_TOL)) {
            return Err(Error::ModelShape(format!(
                "model '{}' is not conditionally Gaussian: mean deviates from affine by {worst} (relative)",
                self.spec.model.name()
            )));
        }
        let at_probe = self.ev.unit_covariance(&self.x, theta).to_vec();
        self.x[n1..].iter_mut().for_each(|v| *v = T::zero());
        let at_zero = self.ev.unit_covariance(&self.x, theta);
        let scale = at_zero.iter().fold(T::zero(), |m, v| m.max(v.abs())).max(T::min_positive_value());
        let dev = at_zero.iter().zip(&at_probe).fold(T::zero(), |m, (a, b)| m.max((*a - *b).abs()));
        if !(dev / scale <= lit(AFFINITY_TOL)) {
            return Err(Error::ModelShape(format!(
                "model '{}' is not conditionally Gaussian: covariance depends on the hidden block",
                self.spec.model.name()
            )));
        }
        Ok(())
    }

    /// Prediction from `x_s1` and update on `x_next`; returns the predictive
    /// log density of `x_next`.
    fn step(&mut self, delta: T, x_s1: &[T], x_next: &[T], theta: &[T], k: usize) -> Result<T> {
        let (n, n1, h) = (self.n, self.n1, self.h);
        self.linearize(delta, x_s1, theta)?;

        // mu = b + A m (observed rows relative to x_s1) ; P = Sigma_w + A Q A^T
        for i in 0..n {
            let mut s = self.b[i];
            for j in 0..h {
                s += self.a[i * h + j] * self.m[j];
            }
            self.mu[i] = s;
            for j in 0..h {
                let mut t = T::zero();
                for l in 0..h {
                    t += self.a[i * h + l] * self.q[l * h + j];
                }
                self.aq[i * h + j] = t;
            }
        }
        for i in 0..n {
            for j in 0..=i {
                let mut t = self.sigma_w[i * n + j];
                for l in 0..h {
                    t += self.aq[i * h + l] * self.a[j * h + l];
                }
                self.p[i * n + j] = t;
                self.p[j * n + i] = t;
            }
        }

        let mut trace = T::zero();
        for i in 0..n1 {
            for j in 0..n1 {
                self.s[i * n1 + j] = self.p[i * n + j];
            }
            trace += self.p[i * n + i];
        }
        let definiteness = |detail: String| Error::Definiteness { step: Some(k), detail };
        if !cholesky_in_place(&mut self.s, n1) {
            return Err(definiteness("predictive covariance of the observed block is not positive definite".into()));
        }
        let mut log_det = T::zero();
        for i in 0..n1 {
            let l = self.s[i * n1 + i];
            if !(l > T::zero()) || l * l < lit::<T>(NEAR_SINGULAR) * trace {
                return Err(definiteness("predictive covariance of the observed block is singular".into()));
            }
            log_det += l.ln();
        }
        log_det = log_det + log_det;
        for i in 0..n1 {
            self.e[i] = (x_next[i] - x_s1[i]) - self.mu[i];
        }
        forward_subst_in_place(&self.s, n1, &mut self.e);
        let quad: T = self.e.iter().map(|v| *v * *v).sum();

        for j in 0..h {
            for i in 0..n1 {
                self.col[i] = self.p[i * n + n1 + j];
            }
            forward_subst_in_place(&self.s, n1, &mut self.col);
            for i in 0..n1 {
                self.w[i * h + j] = self.col[i];
            }
        }
        // m = mu_H + P_HO S^{-1} e ; Q = P_HH - P_HO S^{-1} P_OH in Gram form
        for j in 0..h {
            let mut s = self.mu[n1 + j];
            for i in 0..n1 {
                s += self.w[i * h + j] * self.e[i];
            }
            self.m[j] = s;
        }
        for r in 0..h {
            for c in 0..=r {
                let mut t = self.p[(n1 + r) * n + n1 + c];
                for i in 0..n1 {
                    t -= self.w[i * h + r] * self.w[i * h + c];
                }
                self.q[r * h + c] = t;
                self.q[c * h + r] = t;
            }
        }
        if !quad.is_finite() || self.m.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric {
                block: "kalman".into(),
                detail: format!("non-finite filter state at step {k}"),
            });
        }
        let two_pi = lit::<T>(std::f64::consts::TAU);
        Ok(-lit::<T>(0.5) * (from_usize::<T>(n1) * two_pi.ln() + log_det + quad))
    }

    fn predictive_s(&self) -> Mat<T> {
        let (n, n1) = (self.n, self.n1);
        Mat::from_fn(n1, n1, |i, j| self.p[i * n + j])
    }
}

fn check_obs<T: Real>(spec: &CondGaussSpec<'_, T>, obs: &ObservationSet<T>) -> Result<()> {
    let n1 = spec.obs_dim();
    if obs.mask != (0..n1).collect::<Vec<_>>() {
        return Err(Error::Argument(format!(
            "partial observations must cover exactly the first {n1} coordinate(s), got mask {:?}",
            obs.mask
        )));
    }
    if obs.n_steps() == 0 {
        return Err(Error::Argument("no transitions in data".into()));
    }
    Ok(())
}

/// `(b, A, Sigma_w)` for one step from `x_s1`.
pub fn linearize_step<T: Real>(
    spec: &CondGaussSpec<'_, T>,
    delta: T,
    x_s1: &[T],
    theta: &ParamVector<T>,
) -> Result<Linearization<T>> {
    if x_s1.len() != spec.obs_dim() {
        return Err(Error::Shape(format!("observed state has length {}, expected {}", x_s1.len(), spec.obs_dim())));
    }
    if !(delta >= T::zero()) {
        return Err(Error::Argument(format!("step must be non-negative, got {delta}")));
    }
    let mut f = Filter::new(spec);
    f.probe(delta, x_s1, theta.values())?;
    f.linearize(delta, x_s1, theta.values())?;
    let (n, h) = (f.n, f.h);
    let mut b = f.b;
    for (bi, xi) in b.iter_mut().zip(x_s1) {
        *bi += *xi;
    }
    Ok(Linearization { b, a: Mat::from_vec(n, h, f.a), sigma_w: Mat::from_vec(n, n, f.sigma_w) })
}

/// One prediction-update cycle from `state`.
pub fn kalman_step<T: Real>(
    spec: &CondGaussSpec<'_, T>,
    state: &FilterState<T>,
    x_s1_next: &[T],
    x_s1_curr: &[T],
    delta: T,
    theta: &ParamVector<T>,
) -> Result<(FilterState<T>, Predictive<T>)> {
    let (n1, h) = (spec.obs_dim(), spec.hidden_dim());
    if x_s1_next.len() != n1 || x_s1_curr.len() != n1 {
        return Err(Error::Shape(format!("observed states must have length {n1}")));
    }
    if state.m.len() != h || state.q.shape() != (h, h) {
        return Err(Error::Shape(format!("filter state must have dimension {h}")));
    }
    let mut f = Filter::new(spec);
    f.set_state(&state.m, state.q.as_slice());
    let ld = f.step(delta, x_s1_curr, x_s1_next, theta.values(), state.k + 1)?;
    let mu_s1 = f.mu[..n1].iter().zip(x_s1_curr).map(|(m, x)| *m + *x).collect();
    let pred = Predictive { mu_s1, lambda_s1s1: f.predictive_s(), log_density: ld };
    let mut q = Mat::from_vec(h, h, f.q);
    q.symmetrize();
    Ok((FilterState { m: f.m, q, k: state.k + 1 }, pred))
}

/// Per-step predictive log densities `log N(x_S1,k; mu_S1,k-1, Lambda_S1S1,k-1)`
/// for `k = 1..=n`. The density of the first observation is not included.
pub fn predictive_terms<T: Real>(
    spec: &CondGaussSpec<'_, T>,
    obs: &ObservationSet<T>,
    theta: &ParamVector<T>,
) -> Result<Vec<T>> {
    let mut out = Vec::with_capacity(obs.n_steps());
    run_filter(spec, obs, theta, |_, ld, _| out.push(ld))?;
    Ok(out)
}

fn run_filter<T: Real>(
    spec: &CondGaussSpec<'_, T>,
    obs: &ObservationSet<T>,
    theta: &ParamVector<T>,
    mut visit: impl FnMut(usize, T, &Filter<'_, '_, T>),
) -> Result<()> {
    check_obs(spec, obs)?;
    let th = theta.values();
    let mut f = Filter::new(spec);
    f.probe(obs.delta, obs.row(0), th)?;
    for k in 0..obs.n_steps() {
        let ld = f.step(obs.delta, obs.row(k), obs.row(k + 1), th, k + 1)?;
        visit(k + 1, ld, &f);
    }
    Ok(())
}

/// Marginal log-likelihood of the observed block.
pub fn marginal_loglik<T: Real>(
    spec: &CondGaussSpec<'_, T>,
    obs: &ObservationSet<T>,
    theta: &ParamVector<T>,
) -> Result<T> {
    let mut total = T::zero();
    run_filter(spec, obs, theta, |_, ld, _| total += ld)?;
    Ok(total)
}

/// Filter means and covariances after each update, starting with the prior.
pub fn filter_trace<T: Real>(
    spec: &CondGaussSpec<'_, T>,
    obs: &ObservationSet<T>,
    theta: &ParamVector<T>,
) -> Result<Vec<FilterState<T>>> {
    let h = spec.hidden_dim();
    let mut states = vec![FilterState::from_prior(&spec.prior)];
    run_filter(spec, obs, theta, |k, _, f| {
        let mut q = Mat::from_vec(h, h, f.q.clone());
        q.symmetrize();
        states.push(FilterState { m: f.m.clone(), q, k });
    })?;
    Ok(states)
}

/// Writes `k,m_1..m_H,q_11..q_HH` rows (covariance row-major).
pub fn write_filter_trace_csv<T: Real, W: Write>(states: &[FilterState<T>], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let h = states.first().map_or(0, |s| s.m.len());
    let mut header = vec!["k".to_string()];
    header.extend((1..=h).map(|i| format!("m_{i}")));
    header.extend((1..=h).flat_map(|i| (1..=h).map(move |j| format!("q_{i}{j}"))));
    w.write_record(&header).map_err(csv_err)?;
    for s in states {
        let mut rec = vec![s.k.to_string()];
        rec.extend(s.m.iter().map(|v| format!("{:.16e}", to_f64(*v))));
        rec.extend(s.q.as_slice().iter().map(|v| format!("{:.16e}", to_f64(*v))));
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

/// Maximizes the marginal likelihood; `contrast_value` is its negative.
pub fn estimate_partial<T: Real>(
    spec: &CondGaussSpec<'_, T>,
    obs: &ObservationSet<T>,
    theta0: &ParamVector<T>,
    config: &OptimConfig,
) -> Result<ContrastResult<T>> {
    check_obs(spec, obs)?;
    // Shape problems surface immediately rather than as an infeasible start.
    let mut f = Filter::new(spec);
    f.probe(obs.delta, obs.row(0), theta0.values())?;
    minimize_params(
        &mut |th| match marginal_loglik(spec, obs, th) {
            Ok(v) if v.is_finite() => Ok(-v),
            Ok(_) | Err(Error::Definiteness { .. }) | Err(Error::Numeric { .. }) => Ok(infeasible()),
            Err(e) => Err(e),
        },
        theta0,
        config,
    )
}
