//! Oracles shared by the integration tests.
#![allow(dead_code)]

use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};

type Q = BigRational;
type M3 = [[Q; 3]; 3];

fn q(v: f64) -> Q {
    BigRational::from_float(v).expect("finite input")
}

fn mm(a: &M3, b: &M3) -> M3 {
    std::array::from_fn(|i| std::array::from_fn(|j| (0..3).fold(Q::zero(), |acc, k| acc + &a[i][k] * &b[k][j])))
}

fn tr(a: &M3) -> M3 {
    std::array::from_fn(|i| std::array::from_fn(|j| a[j][i].clone()))
}

/// Log-density of `r ~ N(0, c)` with `c` factored as `L D L^T` in exact
/// arithmetic; only the final logarithms are rounded.
fn gauss_logpdf_exact(c: &[Vec<Q>], r: &[Q]) -> f64 {
    let n = r.len();
    let mut l = vec![vec![Q::zero(); n]; n];
    let mut d = vec![Q::zero(); n];
    for j in 0..n {
        let mut s = c[j][j].clone();
        for k in 0..j {
            s -= &l[j][k] * &l[j][k] * &d[k];
        }
        assert!(s > Q::zero(), "joint covariance not positive definite");
        d[j] = s;
        l[j][j] = Q::one();
        for i in j + 1..n {
            let mut s = c[i][j].clone();
            for k in 0..j {
                s -= &l[i][k] * &l[j][k] * &d[k];
            }
            l[i][j] = s / &d[j];
        }
    }
    // L z = r, then r^T C^{-1} r = sum z_i^2 / d_i
    let mut z = vec![Q::zero(); n];
    for i in 0..n {
        let mut s = r[i].clone();
        for k in 0..i {
            s -= &l[i][k] * &z[k];
        }
        z[i] = s;
    }
    let quad = (0..n).fold(Q::zero(), |acc, i| acc + &z[i] * &z[i] / &d[i]);
    let logdet: f64 = d.iter().map(|v| v.to_f64().expect("representable pivot").ln()).sum();
    -0.5 * (n as f64 * std::f64::consts::TAU.ln() + logdet + quad.to_f64().expect("representable quadratic form"))
}

/// Marginal likelihood of `q_1..q_n` under the toy model's linear scheme,
/// by forming the joint Gaussian law of all observed positions exactly.
pub fn dense_toy3(beta: f64, sigma: f64, delta: f64, prior_mean: [f64; 2], prior_var: f64, obs: &[f64]) -> f64 {
    let (b, d) = (q(beta), q(delta));
    let d2 = &d * &d;
    let d3 = &d2 * &d;
    let c = |n: i64| Q::from_integer(n.into());
    let f: M3 = [
        [c(1), d.clone(), &d2 / c(2) - &b * &d3 / c(6)],
        [c(0), c(1), &d - &b * &d2 / c(2)],
        [c(0), c(0), c(1) - &b * &d],
    ];
    let s2 = q(sigma) * q(sigma);
    let pw = |k: i32| (0..k).fold(Q::one(), |acc, _| acc * &d);
    let w: M3 = [
        [&s2 * pw(5) / c(20), &s2 * pw(4) / c(8), &s2 * pw(3) / c(6)],
        [&s2 * pw(4) / c(8), &s2 * pw(3) / c(3), &s2 * pw(2) / c(2)],
        [&s2 * pw(3) / c(6), &s2 * pw(2) / c(2), &s2 * &d],
    ];
    let n = obs.len() - 1;
    let mut mean = vec![[q(obs[0]), q(prior_mean[0]), q(prior_mean[1])]];
    let v = q(prior_var);
    let mut cov: Vec<M3> = vec![[[c(0), c(0), c(0)], [c(0), v.clone(), c(0)], [c(0), c(0), v]]];
    // F^k for k = 0..n
    let mut pow: Vec<M3> = vec![[[c(1), c(0), c(0)], [c(0), c(1), c(0)], [c(0), c(0), c(1)]]];
    for k in 1..=n {
        let m = &mean[k - 1];
        let next: [Q; 3] = std::array::from_fn(|i| (0..3).fold(Q::zero(), |acc, j| acc + &f[i][j] * &m[j]));
        mean.push(next);
        let mut cv = mm(&mm(&f, &cov[k - 1]), &tr(&f));
        for i in 0..3 {
            for j in 0..3 {
                cv[i][j] += &w[i][j];
            }
        }
        cov.push(cv);
        let p = mm(&f, &pow[k - 1]);
        pow.push(p);
    }
    // Cov(x_i, x_j) = F^{i-j} Cov(x_j) for i >= j
    let joint: Vec<Vec<Q>> = (1..=n)
        .map(|i| {
            (1..=n)
                .map(|j| {
                    let (hi, lo) = if i >= j { (i, j) } else { (j, i) };
                    mm(&pow[hi - lo], &cov[lo])[0][0].clone()
                })
                .collect()
        })
        .collect();
    let r: Vec<Q> = (1..=n).map(|k| q(obs[k]) - &mean[k][0]).collect();
    gauss_logpdf_exact(&joint, &r)
}
