//! Box-constrained minimizers: Nelder–Mead and Adam with finite-difference
//! gradients.
//!
//! Objectives are plain `f64` functions; estimators convert from their own
//! scalar type at the boundary. Candidates outside the box are clamped onto
//! it, so the objective is never evaluated out of bounds.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Value objectives return where they are undefined (e.g. a covariance that
/// is not positive definite). Finite so simplex methods can retreat from it.
pub const INFEASIBLE: f64 = 1e300;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Method {
    NelderMead,
    Adam,
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Method::NelderMead => "nelder-mead",
            Method::Adam => "adam",
        })
    }
}

impl std::str::FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "nelder-mead" | "neldermead" | "nm" => Ok(Method::NelderMead),
            "adam" => Ok(Method::Adam),
            _ => Err(Error::Lookup { name: s.into(), available: vec!["nelder-mead".into(), "adam".into()] }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub step: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Relative step in the central-difference gradient.
    pub fd_step: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { step: 0.1, beta1: 0.9, beta2: 0.999, eps: 1e-8, fd_step: 1e-5 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimConfig {
    pub method: Method,
    /// Maximum number of objective evaluations.
    pub budget: usize,
    /// Simplex diameter (Nelder–Mead) or iterate change (Adam), relative to
    /// `max(1, |x|_inf)`.
    pub xtol: f64,
    /// Spread of simplex values relative to `max(1, |f|)`.
    pub ftol: f64,
    /// Initial simplex edge as a fraction of each coordinate (absolute when
    /// the coordinate is zero).
    pub simplex_scale: f64,
    pub adam: AdamConfig,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            method: Method::NelderMead,
            budget: 10_000,
            xtol: 1e-8,
            ftol: 1e-10,
            simplex_scale: 0.05,
            adam: AdamConfig::default(),
        }
    }
}

impl OptimConfig {
    pub fn adam() -> Self {
        Self { method: Method::Adam, xtol: 1e-10, ..Self::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
    pub method: Method,
}

struct Bounded<'a> {
    f: &'a mut dyn FnMut(&[f64]) -> f64,
    lower: &'a [f64],
    upper: &'a [f64],
    evals: usize,
}

impl Bounded<'_> {
    fn clamp(&self, x: &mut [f64]) {
        for ((v, lo), hi) in x.iter_mut().zip(self.lower).zip(self.upper) {
            *v = v.clamp(*lo, *hi);
        }
    }

    fn eval(&mut self, x: &[f64]) -> f64 {
        self.evals += 1;
        let v = (self.f)(x);
        if v.is_nan() {
            INFEASIBLE
        } else {
            v.min(INFEASIBLE)
        }
    }
}

fn inf_norm(x: &[f64]) -> f64 {
    x.iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// Minimizes `f` over the box `[lower, upper]` starting from `x0`.
pub fn minimize(
    f: &mut dyn FnMut(&[f64]) -> f64,
    x0: &[f64],
    lower: &[f64],
    upper: &[f64],
    config: &OptimConfig,
) -> Result<OptimResult> {
    let n = x0.len();
    if n == 0 {
        return Err(Error::Argument("nothing to optimize: empty parameter vector".into()));
    }
    if lower.len() != n || upper.len() != n {
        return Err(Error::Shape(format!("bounds have lengths {}/{}, start has {n}", lower.len(), upper.len())));
    }
    for k in 0..n {
        if !(lower[k] <= x0[k] && x0[k] <= upper[k]) {
            return Err(Error::Argument(format!(
                "start value {} of coordinate {k} lies outside [{}, {}]",
                x0[k], lower[k], upper[k]
            )));
        }
    }
    if config.budget == 0 {
        return Err(Error::Config("optimizer budget must be positive".into()));
    }
    let mut obj = Bounded { f, lower, upper, evals: 0 };
    match config.method {
        Method::NelderMead => nelder_mead(&mut obj, x0, config),
        Method::Adam => adam(&mut obj, x0, config),
    }
}

/// Fraction of `xtol` at which a simplex counts as collapsed.
const COLLAPSE: f64 = 1e-4;

fn nelder_mead(obj: &mut Bounded<'_>, x0: &[f64], cfg: &OptimConfig) -> Result<OptimResult> {
    const REFLECT: f64 = 1.0;
    const EXPAND: f64 = 2.0;
    const CONTRACT: f64 = 0.5;
    const SHRINK: f64 = 0.5;
    let n = x0.len();

    let mut simplex: Vec<Vec<f64>> = vec![x0.to_vec()];
    for k in 0..n {
        let mut v = x0.to_vec();
        let h = if x0[k] != 0.0 { cfg.simplex_scale * x0[k].abs() } else { cfg.simplex_scale };
        // Step away from whichever bound is nearer so the vertex stays distinct.
        v[k] = if x0[k] + h <= obj.upper[k] { x0[k] + h } else { x0[k] - h };
        obj.clamp(&mut v);
        simplex.push(v);
    }
    let mut values: Vec<f64> = simplex.iter().map(|v| obj.eval(v)).collect();

    let mut order: Vec<usize> = (0..=n).collect();
    let mut iterations = 0;
    let mut centroid = vec![0.0; n];
    let mut trial = vec![0.0; n];
    let mut trial2 = vec![0.0; n];
    let converged = loop {
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        let (best, worst, second) = (order[0], order[n], order[n - 1]);

        let scale = inf_norm(&simplex[best]).max(1.0);
        let diameter = simplex
            .iter()
            .map(|v| v.iter().zip(&simplex[best]).fold(0.0f64, |m, (a, b)| m.max((a - b).abs())))
            .fold(0.0, f64::max);
        let spread = values[worst] - values[best];
        if diameter <= cfg.xtol * scale && spread <= cfg.ftol * values[best].abs().max(1.0) {
            break true;
        }
        // Collapsed far below the step tolerance: what spread remains is
        // rounding noise in the objective, which no further step can reduce.
        if diameter <= COLLAPSE * cfg.xtol * scale {
            break true;
        }
        // an iteration costs at most reflect + contract + n shrink evaluations
        if obj.evals + n + 2 > cfg.budget {
            break false;
        }
        iterations += 1;

        centroid.iter_mut().for_each(|c| *c = 0.0);
        for &i in &order[..n] {
            for (c, v) in centroid.iter_mut().zip(&simplex[i]) {
                *c += v / n as f64;
            }
        }
        let along = |t: f64, out: &mut Vec<f64>, obj: &Bounded<'_>| {
            for k in 0..n {
                out[k] = centroid[k] + t * (simplex[worst][k] - centroid[k]);
            }
            obj.clamp(out);
        };

        along(-REFLECT, &mut trial, obj);
        let fr = obj.eval(&trial);
        if fr < values[best] {
            along(-REFLECT * EXPAND, &mut trial2, obj);
            let fe = obj.eval(&trial2);
            if fe < fr {
                simplex[worst].copy_from_slice(&trial2);
                values[worst] = fe;
            } else {
                simplex[worst].copy_from_slice(&trial);
                values[worst] = fr;
            }
            continue;
        }
        if fr < values[second] {
            simplex[worst].copy_from_slice(&trial);
            values[worst] = fr;
            continue;
        }
        // Outside contraction if the reflection improved on the worst point,
        // inside contraction otherwise.
        let (t, reference) = if fr < values[worst] { (-CONTRACT, fr) } else { (CONTRACT, values[worst]) };
        along(t, &mut trial2, obj);
        let fc = obj.eval(&trial2);
        if fc < reference {
            simplex[worst].copy_from_slice(&trial2);
            values[worst] = fc;
            continue;
        }
        let anchor = simplex[best].clone();
        for &i in &order[1..] {
            for k in 0..n {
                simplex[i][k] = anchor[k] + SHRINK * (simplex[i][k] - anchor[k]);
            }
            obj.clamp(&mut simplex[i]);
            values[i] = obj.eval(&simplex[i]);
        }
    };
    let best = (0..=n).min_by(|&a, &b| values[a].total_cmp(&values[b])).unwrap_or(0);
    Ok(OptimResult {
        x: simplex[best].clone(),
        value: values[best],
        iterations,
        evaluations: obj.evals,
        converged,
        method: Method::NelderMead,
    })
}

/// Central-difference gradient of `f` at `x` with per-coordinate steps
/// `h max(1, |x_k|)`; one-sided where a step would leave `[lower, upper]`.
/// `fx` is `f(x)`, reused by the one-sided differences.
pub fn fd_gradient(
    f: &mut dyn FnMut(&[f64]) -> f64,
    x: &[f64],
    fx: f64,
    lower: &[f64],
    upper: &[f64],
    h: f64,
    grad: &mut [f64],
) {
    let mut xp = x.to_vec();
    for k in 0..x.len() {
        let step = h * x[k].abs().max(1.0);
        let up = (x[k] + step).min(upper[k]);
        let down = (x[k] - step).max(lower[k]);
        xp[k] = up;
        let fu = if up > x[k] { f(&xp) } else { fx };
        xp[k] = down;
        let fd = if down < x[k] { f(&xp) } else { fx };
        xp[k] = x[k];
        grad[k] = if up > down { (fu - fd) / (up - down) } else { 0.0 };
    }
}

fn adam(obj: &mut Bounded<'_>, x0: &[f64], cfg: &OptimConfig) -> Result<OptimResult> {
    let a = cfg.adam;
    let n = x0.len();
    let mut x = x0.to_vec();
    let mut fx = obj.eval(&x);
    let (mut best_x, mut best_f) = (x.clone(), fx);
    let (mut m, mut v, mut g) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    let mut iterations = 0;
    let converged = loop {
        if obj.evals + 2 * n + 1 > cfg.budget {
            break false;
        }
        if fx >= INFEASIBLE {
            return Err(Error::Numeric {
                block: "adam".into(),
                detail: format!("objective infeasible at iterate {iterations}; gradient undefined"),
            });
        }
        iterations += 1;
        let (lo, hi) = (obj.lower, obj.upper);
        fd_gradient(&mut |p| obj.eval(p), &x, fx, lo, hi, a.fd_step, &mut g);
        let t = iterations as i32;
        let (c1, c2) = (1.0 - a.beta1.powi(t), 1.0 - a.beta2.powi(t));
        let mut moved = 0.0f64;
        for k in 0..n {
            m[k] = a.beta1 * m[k] + (1.0 - a.beta1) * g[k];
            v[k] = a.beta2 * v[k] + (1.0 - a.beta2) * g[k] * g[k];
            let step = a.step * (m[k] / c1) / ((v[k] / c2).sqrt() + a.eps);
            let next = (x[k] - step).clamp(obj.lower[k], obj.upper[k]);
            moved = moved.max((next - x[k]).abs());
            x[k] = next;
        }
        fx = obj.eval(&x);
        if fx < best_f {
            best_f = fx;
            best_x.copy_from_slice(&x);
        }
        if moved <= cfg.xtol * inf_norm(&x).max(1.0) {
            break true;
        }
    };
    Ok(OptimResult { x: best_x, value: best_f, iterations, evaluations: obj.evals, converged, method: Method::Adam })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quadratic(x: &[f64]) -> f64 {
        let d = [x[0] - 1.5, x[1] + 0.5, x[2] - 3.0];
        let a = [[4.0, 1.0, 0.0], [1.0, 3.0, 0.5], [0.0, 0.5, 2.0]];
        (0..3).map(|i| (0..3).map(|j| d[i] * a[i][j] * d[j]).sum::<f64>()).sum()
    }

    #[test]
    fn nelder_mead_quadratic() {
        let r = minimize(&mut quadratic, &[0.0, 0.0, 0.0], &[-10.0; 3], &[10.0; 3], &OptimConfig::default()).unwrap();
        assert!(r.converged);
        for (a, b) in r.x.iter().zip([1.5, -0.5, 3.0]) {
            assert!((a - b).abs() < 1e-6, "{:?}", r.x);
        }
    }

    #[test]
    fn adam_quadratic() {
        let cfg = OptimConfig { budget: 100_000, ..OptimConfig::adam() };
        let r = minimize(&mut quadratic, &[0.0, 0.0, 0.0], &[-10.0; 3], &[10.0; 3], &cfg).unwrap();
        for (a, b) in r.x.iter().zip([1.5, -0.5, 3.0]) {
            assert!((a - b).abs() < 1e-6, "{:?} after {} iterations", r.x, r.iterations);
        }
    }

    #[test]
    fn respects_box() {
        let mut f = |x: &[f64]| (x[0] + 5.0).powi(2) + (x[1] - 1.0).powi(2);
        for cfg in [OptimConfig::default(), OptimConfig::adam()] {
            let r = minimize(&mut f, &[1.0, 2.0], &[0.0, -3.0], &[4.0, 3.0], &cfg).unwrap();
            assert!(r.x[0].abs() < 1e-6 && (r.x[1] - 1.0).abs() < 1e-4, "{cfg:?}: {:?}", r.x);
        }
    }

    #[test]
    fn budget_exhaustion_reports_best() {
        let cfg = OptimConfig { budget: 20, ..OptimConfig::default() };
        let r = minimize(&mut quadratic, &[0.0, 0.0, 0.0], &[-10.0; 3], &[10.0; 3], &cfg).unwrap();
        assert!(!r.converged);
        assert!(r.value < quadratic(&[0.0, 0.0, 0.0]));
    }

    #[test]
    fn rejects_start_outside_box() {
        let r = minimize(&mut quadratic, &[20.0, 0.0, 0.0], &[-10.0; 3], &[10.0; 3], &OptimConfig::default());
        assert!(matches!(r, Err(Error::Argument(_))));
    }
}
