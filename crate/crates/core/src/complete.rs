//! Estimation from complete observations: contrast, its minimizer and
//! rate-scaled standard errors.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::density::{LgEvaluator, MeanVariant};
use crate::error::{Error, Result};
use crate::linalg::{symmetric_pinv, Mat};
use crate::model::{HypoModel, ParamBlock, ParamVector};
use crate::optim::{fd_gradient, minimize, Method, OptimConfig, INFEASIBLE};
use crate::scalar::{from_usize, lit, to_f64, Real};
use crate::stochastics::ObservationSet;

/// Transitions handled per parallel task.
const CHUNK: usize = 8192;

/// The infeasibility sentinel in `T` (saturates for narrow types).
pub fn infeasible<T: Real>() -> T {
    T::from_f64(INFEASIBLE).filter(|v| v.is_finite()).unwrap_or_else(T::max_value)
}

fn check_complete<T: Real>(model: &dyn HypoModel<T>, data: &ObservationSet<T>) -> Result<()> {
    let n = model.dims().n;
    if !data.is_complete() || data.width() != n {
        return Err(Error::Argument(format!(
            "complete observations of all {n} coordinates required, data has {} column(s)",
            data.width()
        )));
    }
    if data.n_steps() == 0 {
        return Err(Error::Argument("no transitions in data".into()));
    }
    Ok(())
}

/// Sum of contrast terms over the transitions `lo..hi`.
fn contrast_range<T: Real>(
    model: &dyn HypoModel<T>,
    data: &ObservationSet<T>,
    theta: &[T],
    variant: MeanVariant,
    lo: usize,
    hi: usize,
) -> Result<T> {
    let mut ev = LgEvaluator::new(model, variant);
    let mut acc = T::zero();
    for i in lo..hi {
        acc += ev.contrast_term(data.delta, data.row(i), data.row(i + 1), theta, Some(i + 1))?;
    }
    Ok(acc)
}

/// `sum_i [ m_i^T Lambda(X_{i-1}) m_i + log |Sigma(1, X_{i-1})| ]`.
///
/// Returns [`infeasible`] when the covariance fails to be positive
/// definite at some transition, or any term is not finite.
pub fn contrast<T: Real>(model: &dyn HypoModel<T>, data: &ObservationSet<T>, theta: &ParamVector<T>) -> Result<T> {
    contrast_variant(model, data, theta, MeanVariant::Full)
}

pub fn contrast_variant<T: Real>(
    model: &dyn HypoModel<T>,
    data: &ObservationSet<T>,
    theta: &ParamVector<T>,
    variant: MeanVariant,
) -> Result<T> {
    check_complete(model, data)?;
    if theta.len() != model.layout().len() {
        return Err(Error::Shape(format!("{} parameters given, model expects {}", theta.len(), model.layout().len())));
    }
    let n = data.n_steps();
    let th = theta.values();
    let partial: Vec<Result<T>> = (0..n.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| contrast_range(model, data, th, variant, c * CHUNK, ((c + 1) * CHUNK).min(n)))
        .collect();
    let mut total = T::zero();
    for p in partial {
        match p {
            Ok(v) => total += v,
            Err(Error::Definiteness { .. }) | Err(Error::Numeric { .. }) => return Ok(infeasible()),
            Err(e) => return Err(e),
        }
    }
    Ok(if total.is_finite() { total } else { infeasible() })
}

/// Central-difference gradient of the contrast in `theta`, with the
/// optimizer's relative step `1e-5 max(1, |theta_k|)`.
pub fn contrast_gradient<T: Real>(
    model: &dyn HypoModel<T>,
    data: &ObservationSet<T>,
    theta: &ParamVector<T>,
) -> Result<Vec<f64>> {
    let mut failure = None;
    let mut f = |x: &[f64]| -> f64 {
        let vals: Vec<T> = x.iter().map(|v| lit::<T>(*v)).collect();
        match contrast(model, data, &theta.clamped(&vals)) {
            Ok(v) => to_f64(v),
            Err(e) => {
                failure.get_or_insert(e);
                f64::NAN
            }
        }
    };
    let x = theta.to_f64();
    let lo: Vec<f64> = theta.lower().iter().map(|v| to_f64(*v)).collect();
    let hi: Vec<f64> = theta.upper().iter().map(|v| to_f64(*v)).collect();
    let fx = f(&x);
    let mut g = vec![0.0; x.len()];
    fd_gradient(&mut f, &x, fx, &lo, &hi, OptimConfig::default().adam.fd_step, &mut g);
    match failure {
        Some(e) => Err(e),
        None => Ok(g),
    }
}

/// Outcome of a minimization.
#[derive(Debug, Clone)]
pub struct ContrastResult<T> {
    pub theta_hat: ParamVector<T>,
    pub contrast_value: T,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
    pub optimizer: Method,
}

/// Minimizes `objective` over the box of `theta0`.
pub fn minimize_params<T: Real>(
    objective: &mut dyn FnMut(&ParamVector<T>) -> Result<T>,
    theta0: &ParamVector<T>,
    config: &OptimConfig,
) -> Result<ContrastResult<T>> {
    let mut failure: Option<Error> = None;
    let mut f = |x: &[f64]| -> f64 {
        if failure.is_some() {
            return INFEASIBLE;
        }
        let vals: Vec<T> = x.iter().map(|v| lit::<T>(*v)).collect();
        match objective(&theta0.clamped(&vals)) {
            Ok(v) => to_f64(v),
            Err(e) => {
                failure = Some(e);
                INFEASIBLE
            }
        }
    };
    let x0 = theta0.to_f64();
    let lo: Vec<f64> = theta0.lower().iter().map(|v| to_f64(*v)).collect();
    let hi: Vec<f64> = theta0.upper().iter().map(|v| to_f64(*v)).collect();
    let r = minimize(&mut f, &x0, &lo, &hi, config)?;
    if let Some(e) = failure {
        return Err(e);
    }
    let vals: Vec<T> = r.x.iter().map(|v| lit::<T>(*v)).collect();
    Ok(ContrastResult {
        theta_hat: theta0.clamped(&vals),
        contrast_value: lit(r.value),
        iterations: r.iterations,
        evaluations: r.evaluations,
        converged: r.converged && r.value < INFEASIBLE,
        optimizer: r.method,
    })
}

/// Contrast estimator from complete observations.
pub fn estimate_complete<T: Real>(
    model: &dyn HypoModel<T>,
    data: &ObservationSet<T>,
    theta0: &ParamVector<T>,
    config: &OptimConfig,
) -> Result<ContrastResult<T>> {
    estimate_complete_variant(model, data, theta0, config, MeanVariant::Full)
}

pub fn estimate_complete_variant<T: Real>(
    model: &dyn HypoModel<T>,
    data: &ObservationSet<T>,
    theta0: &ParamVector<T>,
    config: &OptimConfig,
    variant: MeanVariant,
) -> Result<ContrastResult<T>> {
    check_complete(model, data)?;
    minimize_params(&mut |th| contrast_variant(model, data, th, variant), theta0, config)
}

/// Plug-in asymptotic precision with per-parameter rates.
#[derive(Debug, Clone)]
pub struct PrecisionMatrix<T> {
    /// `Gamma` blocks in order `beta_S1, beta_S2, beta_R, sigma`.
    pub gamma_blocks: [Mat<T>; 4],
    /// Rate of each parameter in canonical order.
    pub rate_vector: Vec<T>,
    /// Whether any block had to be pseudo-inverted.
    pub pseudo_inverse: bool,
    inverse_diag: Vec<T>,
}

impl<T: Real> PrecisionMatrix<T> {
    /// `sqrt([Gamma^{-1}]_kk) / rate_k` per parameter.
    pub fn standard_errors(&self) -> Vec<T> {
        self.inverse_diag.iter().zip(&self.rate_vector).map(|(v, r)| v.max(T::zero()).sqrt() / *r).collect()
    }
}

/// Central difference of `field(theta)` in parameter `k`.
fn theta_derivative<T: Real>(theta: &[T], k: usize, m: usize, mut field: impl FnMut(&[T], &mut [T]), out: &mut [T]) {
    let h = lit::<T>(1e-5) * theta[k].abs().max(T::one());
    let mut tp = theta.to_vec();
    let (mut up, mut down) = (vec![T::zero(); m], vec![T::zero(); m]);
    tp[k] = theta[k] + h;
    field(&tp, &mut up);
    tp[k] = theta[k] - h;
    field(&tp, &mut down);
    for i in 0..m {
        out[i] = (up[i] - down[i]) / (h + h);
    }
}

/// Replaces the stationary average in `Gamma` by the empirical average over
/// the observed states `X_0, ..., X_{n-1}`.
pub fn asymptotic_precision<T: Real>(
    model: &dyn HypoModel<T>,
    data: &ObservationSet<T>,
    theta_hat: &ParamVector<T>,
) -> Result<PrecisionMatrix<T>> {
    check_complete(model, data)?;
    let d = model.dims();
    let layout = model.layout().clone();
    let th = theta_hat.values();
    let n = data.n_steps();
    let mut ev = LgEvaluator::new(model, MeanVariant::Full);

    let mut blocks: [Mat<T>; 4] = ParamBlock::ALL.map(|b| {
        let l = layout.range(b).len();
        Mat::zeros(l, l)
    });

    // Per-block drift derivative `d V_b / d theta_k` for every parameter
    // in the block, weighted by 720 a_S1^{-1}, 12 a_S2^{-1} or a_R^{-1}.
    let drift_blocks =
        [(ParamBlock::BetaS1, d.s1(), 720.0), (ParamBlock::BetaS2, d.s2(), 12.0), (ParamBlock::BetaR, d.r(), 1.0)];
    let sig_range = layout.range(ParamBlock::Sigma);
    let ns = sig_range.len();
    let mut dsig: Vec<Mat<T>> = vec![Mat::zeros(d.n, d.n); ns];

    for i in 0..n {
        let x = data.row(i);
        let sigma = Mat::from_vec(d.n, d.n, ev.unit_covariance(x, th).to_vec());
        let a = |r: std::ops::Range<usize>| sigma.block(r.start, r.start, r.len(), r.len());
        for (bi, &(block, ref rows, weight)) in drift_blocks.iter().enumerate() {
            let pr = layout.range(block);
            if pr.is_empty() || rows.is_empty() {
                continue;
            }
            let m = rows.len();
            // a_b recovered from the unit covariance: the diagonal blocks are
            // a_S1 / 20, a_S2 / 3 and a_R.
            let coef = [20.0, 3.0, 1.0][bi];
            let a_b = a(rows.clone()).scale(lit(coef));
            let ch = a_b.cholesky().ok_or_else(|| Error::Definiteness {
                step: Some(i),
                detail: format!("diffusion block {bi} is not positive definite"),
            })?;
            let mut grads: Vec<Vec<T>> = Vec::with_capacity(pr.len());
            for k in pr.clone() {
                let mut g = vec![T::zero(); m];
                match block {
                    ParamBlock::BetaS1 => {
                        theta_derivative(th, k, m, |t, o| model.drift_s1(&x[..d.n_s()], t, o), &mut g)
                    }
                    ParamBlock::BetaS2 => theta_derivative(th, k, m, |t, o| model.drift_s2(x, t, o), &mut g),
                    _ => theta_derivative(th, k, m, |t, o| model.drift_r(x, t, o), &mut g),
                }
                grads.push(g);
            }
            let solved: Vec<Vec<T>> = grads.iter().map(|g| ch.solve_vec(g)).collect();
            let w = lit::<T>(weight);
            let g = &mut blocks[block as usize];
            for p in 0..pr.len() {
                for q in 0..pr.len() {
                    let v: T = grads[p].iter().zip(&solved[q]).map(|(a, b)| *a * *b).sum();
                    g[(p, q)] += w * v;
                }
            }
        }
        if ns > 0 {
            let ch = sigma.cholesky().ok_or_else(|| Error::Definiteness {
                step: Some(i),
                detail: "covariance is not positive definite".into(),
            })?;
            for (jj, k) in sig_range.clone().enumerate() {
                let h = lit::<T>(1e-5) * th[k].abs().max(T::one());
                let mut tp = th.to_vec();
                tp[k] = th[k] + h;
                let up = ev.unit_covariance(x, &tp).to_vec();
                tp[k] = th[k] - h;
                let down = ev.unit_covariance(x, &tp).to_vec();
                let dm = Mat::from_fn(d.n, d.n, |r, c| (up[r * d.n + c] - down[r * d.n + c]) / (h + h));
                dsig[jj] = ch.solve_mat(&dm);
            }
            let g = &mut blocks[ParamBlock::Sigma as usize];
            for p in 0..ns {
                for q in 0..ns {
                    let tr = dsig[p].matmul(&dsig[q]).trace();
                    g[(p, q)] += lit::<T>(0.5) * tr;
                }
            }
        }
    }

    let nf = from_usize::<T>(n);
    let mut pseudo = false;
    let mut inverse_diag = vec![T::zero(); layout.len()];
    for b in ParamBlock::ALL {
        let g = &mut blocks[b as usize];
        *g = g.scale(T::one() / nf);
        g.symmetrize();
        if g.rows() == 0 {
            continue;
        }
        let inv = match g.cholesky() {
            Some(ch) if ch.min_pivot() > lit::<T>(1e-12) * g.trace() => ch.inverse(),
            _ => {
                pseudo = true;
                symmetric_pinv(g, lit(1e-10))
            }
        };
        for (jj, k) in layout.range(b).enumerate() {
            inverse_diag[k] = inv[(jj, jj)];
        }
    }

    let (nn, dl) = (nf, data.delta);
    let rates = [(nn / (dl * dl * dl)).sqrt(), (nn / dl).sqrt(), (nn * dl).sqrt(), nn.sqrt()];
    let rate_vector = (0..layout.len()).map(|k| rates[layout.block_of(k) as usize]).collect();
    Ok(PrecisionMatrix { gamma_blocks: blocks, rate_vector, pseudo_inverse: pseudo, inverse_diag })
}

/// Machine-readable summary of one fit.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct FitReport {
    pub model: String,
    pub regime: String,
    pub scheme: String,
    pub names: Vec<String>,
    pub theta_hat: Vec<f64>,
    /// Absent when standard errors are not available for the regime.
    pub se: Option<Vec<f64>>,
    pub pseudo_inverse: bool,
    pub contrast_value: f64,
    pub converged: bool,
    pub iterations: usize,
    pub evaluations: usize,
    pub config: OptimConfig,
    pub seed: Option<u64>,
}
