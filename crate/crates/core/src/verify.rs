//! Self-check suite: sampler moments, covariance identities, filter against
//! a dense Gaussian computation, and the bracket span condition.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::density::{covariance_blocks_with, mean_lg2, precision_with_residuals, CovarianceCoefficients, MeanVariant};
use crate::error::Result;
use crate::linalg::Mat;
use crate::model::{builtin_model, builtin_names, check_condition_a2, ParamVector, Preset};
use crate::partial::{marginal_loglik, CondGaussSpec};
use crate::stochastics::{increment_covariance, sample_increment, ObservationSet};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: String,
    /// Measured error (or number of standard errors for Monte-Carlo checks).
    pub measured: f64,
    pub tolerance: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyReport {
    pub checks: Vec<CheckResult>,
}

impl VerifyReport {
    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }
}

impl std::fmt::Display for VerifyReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for c in &self.checks {
            writeln!(
                f,
                "{} {:<40} measured {:.3e}  tolerance {:.1e}",
                if c.pass { "PASS" } else { "FAIL" },
                c.name,
                c.measured,
                c.tolerance
            )?;
        }
        Ok(())
    }
}

fn check(name: impl Into<String>, measured: f64, tolerance: f64) -> CheckResult {
    CheckResult { name: name.into(), measured, tolerance, pass: measured <= tolerance }
}

/// Random interior parameters for a preset: each coordinate scaled by a
/// factor in `[0.5, 1.5]` around the reference value.
pub fn random_theta(p: &Preset<f64>, rng: &mut impl Rng) -> Result<ParamVector<f64>> {
    let vals: Vec<f64> = p.theta_true.values().iter().map(|v| v * rng.gen_range(0.5..1.5)).collect();
    p.theta_true.with_values(&vals)
}

/// Random state around the preset's starting point.
pub fn random_state(p: &Preset<f64>, rng: &mut impl Rng) -> Vec<f64> {
    p.x0.iter().map(|v| v + rng.gen_range(-1.0..1.0)).collect()
}

/// Largest deviation of the sample covariance of `draws` increments from
/// the exact one, in Monte-Carlo standard errors.
pub fn increment_moment_z(draws: usize, delta: f64, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut acc = [[0.0f64; 3]; 3];
    let mut acc2 = [[0.0f64; 3]; 3];
    for _ in 0..draws {
        let inc = sample_increment(delta, 1, &mut rng)?;
        let v = [inc.db[0], inc.i10[0], inc.i110[0]];
        for i in 0..3 {
            for j in 0..3 {
                let p = v[i] * v[j];
                acc[i][j] += p;
                acc2[i][j] += p * p;
            }
        }
    }
    let exact = increment_covariance(delta);
    let n = draws as f64;
    let mut worst = 0.0f64;
    for i in 0..3 {
        for j in i..3 {
            let mean = acc[i][j] / n;
            let var = (acc2[i][j] / n - mean * mean).max(0.0);
            let se = (var / n).sqrt();
            worst = worst.max((mean - exact[i][j]).abs() / se);
        }
    }
    Ok(worst)
}

/// Dense Gaussian log-likelihood of `q_1..q_n` given `q_0` for a model whose
/// scheme mean is linear in the full state and whose covariance is constant.
pub fn dense_linear_loglik(p: &Preset<f64>, theta: &ParamVector<f64>, obs: &ObservationSet<f64>) -> Result<f64> {
    let model = p.model.as_ref();
    let d = model.dims();
    let (nn, h, n1) = (d.n, d.n_hidden(), d.n_s1);
    let delta = obs.delta;
    // F x = mean(x) for the linear scheme
    let f = Mat::from_fn(nn, nn, |i, j| {
        let mut e = vec![0.0; nn];
        e[j] = 1.0;
        mean_lg2(model, delta, &e, theta).expect("mean").stacked()[i]
    });
    let x = vec![0.0; nn];
    let cov = covariance_blocks_with(model, &x, theta, &CovarianceCoefficients::default())?;
    let sw = cov.scaled(delta);
    let steps = obs.n_steps();
    // latent = (h_0, w_1, ..., w_n); X_k = c_k + M_k latent
    let nl = h + steps * nn;
    let mut c = vec![0.0; nn];
    c[..n1].copy_from_slice(obs.row(0));
    c[n1..].copy_from_slice(&p.prior.mean);
    let mut m = Mat::zeros(nn, nl);
    for r in 0..h {
        m[(n1 + r, r)] = 1.0;
    }
    let mut latent_cov = Mat::zeros(nl, nl);
    latent_cov.set_block(0, 0, &p.prior.cov);
    let mut mean_q = Vec::with_capacity(steps * n1);
    let mut rows_q: Vec<Vec<f64>> = Vec::new();
    for k in 0..steps {
        c = f.mul_vec(&c);
        m = f.matmul(&m);
        for i in 0..nn {
            m[(i, h + k * nn + i)] = 1.0;
        }
        latent_cov.set_block(h + k * nn, h + k * nn, &sw);
        for i in 0..n1 {
            mean_q.push(c[i]);
            rows_q.push(m.row(i).to_vec());
        }
    }
    let g = Mat::from_rows(&rows_q);
    let cq = g.matmul(&latent_cov).matmul(&g.transpose());
    let ch = cq.cholesky().ok_or_else(|| crate::error::Error::Definiteness {
        step: None,
        detail: "dense joint covariance is not positive definite".into(),
    })?;
    let resid: Vec<f64> = (0..steps * n1).map(|i| obs.row(1 + i / n1)[i % n1] - mean_q[i]).collect();
    let k = (steps * n1) as f64;
    Ok(-0.5 * (k * std::f64::consts::TAU.ln() + ch.log_det() + ch.quad_form(&resid)))
}

/// Runs every check with the exact covariance coefficients.
pub fn run_checks() -> Result<VerifyReport> {
    run_checks_with(&CovarianceCoefficients::default())
}

/// Runs every check, building covariances from `coeffs`.
pub fn run_checks_with(coeffs: &CovarianceCoefficients) -> Result<VerifyReport> {
    let mut checks = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(20_240_601);

    checks.push(check("increment moments (max |z|)", increment_moment_z(200_000, 0.01, 11)?, 4.0));

    for name in ["toy3", "qgle_ho"] {
        let p = builtin_model::<f64>(name)?;
        let mut worst = 0.0f64;
        for _ in 0..100 {
            let th = random_theta(&p, &mut rng)?;
            let x = random_state(&p, &mut rng);
            let cov = covariance_blocks_with(p.model.as_ref(), &x, &th, coeffs)?;
            let delta = rng.gen_range(1e-3..0.5);
            let det = cov.determinant(delta)?;
            let formula = delta.powi(9) * cov.determinant_product_formula()?;
            worst = worst.max((det / formula - 1.0).abs());
        }
        checks.push(check(format!("determinant product formula [{name}]"), worst, 1e-10));
    }

    for name in builtin_names() {
        let p = builtin_model::<f64>(name)?;
        if p.model.dims().is_two_layer() {
            continue;
        }
        let mut worst = [0.0f64; 4];
        for _ in 0..100 {
            let th = random_theta(&p, &mut rng)?;
            let x = random_state(&p, &mut rng);
            let cov = covariance_blocks_with(p.model.as_ref(), &x, &th, coeffs)?;
            let (_, r) = precision_with_residuals(&cov)?;
            for (w, v) in worst.iter_mut().zip([r.s1s1, r.s1s2, r.s2s2, r.phi]) {
                *w = w.max(v);
            }
        }
        for (label, w) in ["Lambda_S1S1 = 720 a_S1^-1", "Lambda_S1S2", "Lambda_S2S2", "Phi = 0"].iter().zip(worst) {
            checks.push(check(format!("{label} [{name}]"), w, 1e-10));
        }
    }

    {
        let p = builtin_model::<f64>("toy3")?;
        let th = p.theta_true.clone();
        let spec = CondGaussSpec::new(p.model.as_ref(), MeanVariant::Full, p.prior.clone())?;
        let mut worst = 0.0f64;
        for n in 1..=5 {
            let values: Vec<f64> = (0..=n).map(|_| rng.gen_range(-0.05..0.05)).collect();
            let obs = ObservationSet { t0: 0.0, delta: 0.1, full_dim: 3, mask: vec![0], values };
            let kf = marginal_loglik(&spec, &obs, &th)?;
            let dense = dense_linear_loglik(&p, &th, &obs)?;
            worst = worst.max(((kf - dense) / dense).abs());
        }
        checks.push(check("Kalman vs dense Gaussian [toy3]", worst, 1e-8));
    }

    for name in builtin_names() {
        let p = builtin_model::<f64>(name)?;
        if p.model.dims().is_two_layer() {
            continue;
        }
        let x = random_state(&p, &mut rng);
        let r = check_condition_a2(p.model.as_ref(), &x, &p.theta_true, 1e-8)?;
        checks.push(check(format!("bracket span condition [{name}]"), if r.pass { 0.0 } else { 1.0 }, 0.0));
    }
    Ok(VerifyReport { checks })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mutation_is_detected() {
        let mut c = CovarianceCoefficients::default();
        c.0[0] = 1.0 / 19.0;
        let r = run_checks_with(&c).unwrap();
        let failing: Vec<_> = r.checks.iter().filter(|c| !c.pass).map(|c| c.name.as_str()).collect();
        assert!(failing.iter().any(|n| n.starts_with("Lambda_S1S1")), "{failing:?}");
    }
}
