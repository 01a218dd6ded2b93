//! Transition mean, block covariance and Gaussian transition density of the
//! second-order local Gaussian scheme.
//!
//! Block `S1` scales with `Delta^{5/2}`, `S2` with `Delta^{3/2}` and `R` with
//! `Delta^{1/2}`, so the covariance is `D Sigma(1, x, theta) D` with
//! `D = diag(Delta^{k/2})` and everything below works with the unit-step
//! matrix `Sigma(1, x, theta)`.

use crate::error::{Error, Result};
use crate::linalg::{chol_solve_in_place, cholesky_in_place, forward_subst_in_place, Cholesky, Mat};
use crate::model::{drift_into, generator_terms_into, Dims, HypoModel, ParamVector};
use crate::scalar::{from_usize, lit, Real};

/// Factor pivots below this fraction of the trace are treated as singular.
pub const NEAR_SINGULAR: f64 = 1e-12;

/// Relative tolerance for the closed-form precision identities.
pub const IDENTITY_TOL: f64 = 1e-10;

/// Whether the mean carries the generator corrections.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum MeanVariant {
    /// Full second-order mean.
    Full,
    /// Drops the `Delta^2 / 2` and `Delta^3 / 6` terms.
    NoCorrection,
}

/// Block coefficients in order `S1S1, S1S2, S1R, S2S2, S2R, RR`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CovarianceCoefficients(pub [f64; 6]);

impl Default for CovarianceCoefficients {
    fn default() -> Self {
        Self([1.0 / 20.0, 1.0 / 8.0, 1.0 / 6.0, 1.0 / 3.0, 1.0 / 2.0, 1.0])
    }
}

/// Half-powers `k` of `Delta` per coordinate (5, 3, 1 by block).
fn half_powers(d: &Dims) -> impl Iterator<Item = i32> + '_ {
    (0..d.n).map(move |i| {
        if i < d.n_s1 {
            5
        } else if i < d.n_s() {
            3
        } else {
            1
        }
    })
}

/// Exponent of `Delta` in `det Sigma(Delta) = Delta^p det Sigma(1)`.
pub fn delta_power(d: &Dims) -> usize {
    5 * d.n_s1 + 3 * d.n_s2 + d.n_r
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeanVector<T> {
    pub mu_s1: Vec<T>,
    pub mu_s2: Vec<T>,
    pub mu_r: Vec<T>,
    pub delta: T,
}

impl<T: Real> MeanVector<T> {
    pub fn stacked(&self) -> Vec<T> {
        self.mu_s1.iter().chain(&self.mu_s2).chain(&self.mu_r).copied().collect()
    }
}

/// Unit-step covariance together with its building blocks.
#[derive(Debug, Clone)]
pub struct BlockCovariance<T> {
    pub dims: Dims,
    pub a_r: Mat<T>,
    pub a_s2: Mat<T>,
    pub a_s1: Mat<T>,
    /// `d V_S1 / d x_S2`
    pub j12: Mat<T>,
    /// `d V_S2 / d x_R`
    pub j2r: Mat<T>,
    /// `Sigma(1, x, theta)`
    pub unit: Mat<T>,
}

/// Block identifiers for [`BlockCovariance::block`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Block {
    S1,
    S2,
    R,
}

impl<T: Real> BlockCovariance<T> {
    fn range(&self, b: Block) -> std::ops::Range<usize> {
        match b {
            Block::S1 => self.dims.s1(),
            Block::S2 => self.dims.s2(),
            Block::R => self.dims.r(),
        }
    }

    /// Unit-step block `Sigma_{b1 b2}`.
    pub fn block(&self, b1: Block, b2: Block) -> Mat<T> {
        let (r, c) = (self.range(b1), self.range(b2));
        self.unit.block(r.start, c.start, r.len(), c.len())
    }

    /// `Sigma(Delta, x, theta)`.
    pub fn scaled(&self, delta: T) -> Mat<T> {
        let sd = delta.sqrt();
        let scale: Vec<T> = half_powers(&self.dims).map(|k| sd.powi(k)).collect();
        Mat::from_fn(self.dims.n, self.dims.n, |i, j| self.unit[(i, j)] * scale[i] * scale[j])
    }

    /// `det Sigma(Delta)` by factorization of the unit-step matrix.
    pub fn determinant(&self, delta: T) -> Result<T> {
        if !(delta > T::zero()) {
            return Err(Error::Argument(format!("step must be positive, got {delta}")));
        }
        let ch = factor_checked(&self.unit, None)?;
        Ok(delta.powi(delta_power(&self.dims) as i32) * ch.det())
    }

    /// Closed form `|a_R| |a_S2| |a_S1| / (12^{N_S2} 720^{N_S1})` of `det Sigma(1)`.
    pub fn determinant_product_formula(&self) -> Result<T> {
        let det = |m: &Mat<T>, name: &str| -> Result<T> {
            if m.rows() == 0 {
                return Ok(T::one());
            }
            m.cholesky()
                .map(|c| c.det())
                .ok_or_else(|| Error::Definiteness { step: None, detail: format!("{name} is not positive definite") })
        };
        let d = self.dims;
        let denom = lit::<T>(12.0).powi(d.n_s2 as i32) * lit::<T>(720.0).powi(d.n_s1 as i32);
        Ok(det(&self.a_r, "a_R")? * det(&self.a_s2, "a_S2")? * det(&self.a_s1, "a_S1")? / denom)
    }
}

/// Builds `Sigma(1, x, theta)` with the exact block coefficients.
pub fn covariance_blocks<T: Real>(
    model: &dyn HypoModel<T>,
    x: &[T],
    theta: &ParamVector<T>,
) -> Result<BlockCovariance<T>> {
    covariance_blocks_with(model, x, theta, &CovarianceCoefficients::default())
}

/// As [`covariance_blocks`] with injectable block coefficients.
pub fn covariance_blocks_with<T: Real>(
    model: &dyn HypoModel<T>,
    x: &[T],
    theta: &ParamVector<T>,
    coeffs: &CovarianceCoefficients,
) -> Result<BlockCovariance<T>> {
    let d = model.dims();
    if x.len() != d.n {
        return Err(Error::Shape(format!("state has length {}, model expects {}", x.len(), d.n)));
    }
    let mut w = CovWork::new(&d);
    w.fill(model, x, theta.values(), coeffs);
    if !w.sigma.iter().all(|v| v.is_finite()) {
        return Err(Error::Numeric { block: "covariance".into(), detail: "non-finite entry".into() });
    }
    Ok(BlockCovariance {
        dims: d,
        a_r: Mat::from_vec(d.n_r, d.n_r, w.a_r.clone()),
        a_s2: Mat::from_vec(d.n_s2, d.n_s2, w.a_s2.clone()),
        a_s1: Mat::from_vec(d.n_s1, d.n_s1, w.a_s1.clone()),
        j12: Mat::from_vec(d.n_s1, d.n_s2, w.j12.clone()),
        j2r: Mat::from_vec(d.n_s2, d.n_r, w.j2r.clone()),
        unit: Mat::from_vec(d.n, d.n, w.sigma.clone()),
    })
}

/// `det Sigma(Delta, x, theta)`.
pub fn determinant_sigma<T: Real>(cov: &BlockCovariance<T>, delta: T) -> Result<T> {
    cov.determinant(delta)
}

/// Cholesky factor with the near-singularity rule applied.
fn factor_checked<T: Real>(m: &Mat<T>, step: Option<usize>) -> Result<Cholesky<T>> {
    let ch = m
        .cholesky()
        .ok_or_else(|| Error::Definiteness { step, detail: "covariance is not positive definite".into() })?;
    let tr = m.trace();
    if ch.min_pivot() < lit::<T>(NEAR_SINGULAR) * tr {
        return Err(Error::Definiteness {
            step,
            detail: format!("covariance is near singular (pivot {} vs trace {tr})", ch.min_pivot()),
        });
    }
    Ok(ch)
}

/// Inverse of a symmetric positive definite matrix after symmetric diagonal
/// equilibration, which keeps badly scaled blocks accurate.
fn equilibrated_inverse<T: Real>(m: &Mat<T>) -> Result<Mat<T>> {
    let n = m.rows();
    let s: Vec<T> = (0..n).map(|i| T::one() / m[(i, i)].sqrt()).collect();
    let scaled = Mat::from_fn(n, n, |i, j| m[(i, j)] * s[i] * s[j]);
    factor_checked(m, None)?;
    let inv = scaled
        .cholesky()
        .ok_or_else(|| Error::Definiteness { step: None, detail: "covariance is not positive definite".into() })?
        .inverse();
    Ok(Mat::from_fn(n, n, |i, j| inv[(i, j)] * s[i] * s[j]))
}

/// Relative residuals of the closed-form precision identities.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IdentityResiduals<T> {
    /// `Lambda_S1S1` vs `720 a_S1^{-1}`
    pub s1s1: T,
    /// `Lambda_S1S2` vs `-1/2 Lambda_S1S1 J12`
    pub s1s2: T,
    /// `Lambda_S2S2` vs `12 a_S2^{-1} - 1/2 Lambda_S2S1 J12`
    pub s2s2: T,
    /// `Lambda_S1S1 J12 + 2 Lambda_S1S2` relative to `|Lambda_S1S1 J12|`
    pub phi: T,
}

impl<T: Real> IdentityResiduals<T> {
    pub fn max(&self) -> T {
        self.s1s1.max(self.s1s2).max(self.s2s2).max(self.phi)
    }
}

/// Precision matrix `Lambda = Sigma(1)^{-1}` and the residuals of its
/// closed-form block identities.
pub fn precision_with_residuals<T: Real>(cov: &BlockCovariance<T>) -> Result<(Mat<T>, IdentityResiduals<T>)> {
    let lam = equilibrated_inverse(&cov.unit)?;
    let d = cov.dims;
    if d.n_s1 == 0 {
        let z = T::zero();
        return Ok((lam, IdentityResiduals { s1s1: z, s1s2: z, s2s2: z, phi: z }));
    }
    let (n1, n2) = (d.n_s1, d.n_s2);
    let l11 = lam.block(0, 0, n1, n1);
    let l12 = lam.block(0, n1, n1, n2);
    let l21 = lam.block(n1, 0, n2, n1);
    let l22 = lam.block(n1, n1, n2, n2);
    let inv = |m: &Mat<T>| equilibrated_inverse(m);
    let a_s1_inv = inv(&cov.a_s1)?;
    let a_s2_inv = inv(&cov.a_s2)?;
    let half = lit::<T>(0.5);
    let e11 = a_s1_inv.scale(lit(720.0));
    let l11j = l11.matmul(&cov.j12);
    let e12 = l11j.scale(-half);
    let e22 = a_s2_inv.scale(lit(12.0)).sub(&l21.matmul(&cov.j12).scale(half));
    let phi = l11j.add(&l12.scale(lit(2.0)));
    let res = IdentityResiduals {
        s1s1: l11.sub(&e11).max_abs() / e11.max_abs(),
        s1s2: l12.sub(&e12).max_abs() / e12.max_abs().max(l12.max_abs()),
        s2s2: l22.sub(&e22).max_abs() / e22.max_abs(),
        phi: phi.max_abs() / l11j.max_abs(),
    };
    Ok((lam, res))
}

/// `Lambda = Sigma(1, x, theta)^{-1}`, verified against the closed-form
/// block identities.
pub fn precision_closed_form<T: Real>(cov: &BlockCovariance<T>) -> Result<Mat<T>> {
    let (lam, res) = precision_with_residuals(cov)?;
    let tol = lit::<T>(IDENTITY_TOL);
    if !(res.max() <= tol) {
        return Err(Error::Internal(format!(
            "precision identities violated (S1S1 {}, S1S2 {}, S2S2 {}, Phi {})",
            res.s1s1, res.s1s2, res.s2s2, res.phi
        )));
    }
    Ok(lam)
}

/// Mean of the scheme from `x` over a step `delta`.
pub fn mean_lg2<T: Real>(model: &dyn HypoModel<T>, delta: T, x: &[T], theta: &ParamVector<T>) -> Result<MeanVector<T>> {
    mean_lg2_variant(model, delta, x, theta, MeanVariant::Full)
}

pub fn mean_lg2_variant<T: Real>(
    model: &dyn HypoModel<T>,
    delta: T,
    x: &[T],
    theta: &ParamVector<T>,
    variant: MeanVariant,
) -> Result<MeanVector<T>> {
    let d = model.dims();
    if x.len() != d.n {
        return Err(Error::Shape(format!("state has length {}, model expects {}", x.len(), d.n)));
    }
    if !(delta >= T::zero()) {
        return Err(Error::Argument(format!("step must be non-negative, got {delta}")));
    }
    let mut ev = LgEvaluator::new(model, variant);
    let mut mu = vec![T::zero(); d.n];
    ev.mean_into(delta, x, theta.values(), &mut mu)?;
    Ok(MeanVector { mu_s1: mu[d.s1()].to_vec(), mu_s2: mu[d.s2()].to_vec(), mu_r: mu[d.r()].to_vec(), delta })
}

/// Scaled residual `m = D^{-1} (y - mu)`.
pub fn residual_m<T: Real>(
    model: &dyn HypoModel<T>,
    delta: T,
    x: &[T],
    y: &[T],
    theta: &ParamVector<T>,
) -> Result<Vec<T>> {
    residual_m_variant(model, delta, x, y, theta, MeanVariant::Full)
}

pub fn residual_m_variant<T: Real>(
    model: &dyn HypoModel<T>,
    delta: T,
    x: &[T],
    y: &[T],
    theta: &ParamVector<T>,
    variant: MeanVariant,
) -> Result<Vec<T>> {
    let d = model.dims();
    if y.len() != d.n {
        return Err(Error::Shape(format!("state has length {}, model expects {}", y.len(), d.n)));
    }
    if !(delta > T::zero()) {
        return Err(Error::Argument(format!("step must be positive, got {delta}")));
    }
    let mu = mean_lg2_variant(model, delta, x, theta, variant)?.stacked();
    let sd = delta.sqrt();
    Ok(half_powers(&d).zip(y.iter().zip(&mu)).map(|(k, (yi, mi))| (*yi - *mi) / sd.powi(k)).collect())
}

/// `log pbar_Delta(x, y; theta)`.
pub fn log_transition_density<T: Real>(
    model: &dyn HypoModel<T>,
    delta: T,
    x: &[T],
    y: &[T],
    theta: &ParamVector<T>,
) -> Result<T> {
    let mut ev = LgEvaluator::new(model, MeanVariant::Full);
    ev.log_density(delta, x, y, theta.values())
}

/// Scratch space for building the unit covariance without allocating.
#[derive(Debug, Clone)]
struct CovWork<T> {
    dims: Dims,
    vk: Vec<T>,
    a_r: Vec<T>,
    a_s2: Vec<T>,
    a_s1: Vec<T>,
    j12: Vec<T>,
    j2r: Vec<T>,
    /// J2R a_R
    t2r: Vec<T>,
    /// J12 a_S2
    t12: Vec<T>,
    /// J12 J2R a_R
    t1r: Vec<T>,
    sigma: Vec<T>,
}

impl<T: Real> CovWork<T> {
    fn new(d: &Dims) -> Self {
        let z = |n: usize| vec![T::zero(); n];
        Self {
            dims: *d,
            vk: z(d.n_r),
            a_r: z(d.n_r * d.n_r),
            a_s2: z(d.n_s2 * d.n_s2),
            a_s1: z(d.n_s1 * d.n_s1),
            j12: z(d.n_s1 * d.n_s2),
            j2r: z(d.n_s2 * d.n_r),
            t2r: z(d.n_s2 * d.n_r),
            t12: z(d.n_s1 * d.n_s2),
            t1r: z(d.n_s1 * d.n_r),
            sigma: z(d.n * d.n),
        }
    }

    /// `out (m x p) = a (m x k) * b (k x p)` for row-major slices.
    #[inline]
    fn mm(a: &[T], b: &[T], m: usize, k: usize, p: usize, out: &mut [T]) {
        for i in 0..m {
            for j in 0..p {
                let mut s = T::zero();
                for l in 0..k {
                    s += a[i * k + l] * b[l * p + j];
                }
                out[i * p + j] = s;
            }
        }
    }

    /// `out (m x m) = a (m x k) * b^T` where `b` is `m x k`.
    #[inline]
    fn mm_t(a: &[T], b: &[T], m: usize, k: usize, out: &mut [T]) {
        for i in 0..m {
            for j in 0..m {
                let mut s = T::zero();
                for l in 0..k {
                    s += a[i * k + l] * b[j * k + l];
                }
                out[i * m + j] = s;
            }
        }
    }

    fn fill(&mut self, model: &dyn HypoModel<T>, x: &[T], theta: &[T], c: &CovarianceCoefficients) {
        let d = self.dims;
        let (n1, n2, nr, n) = (d.n_s1, d.n_s2, d.n_r, d.n);
        self.a_r.iter_mut().for_each(|v| *v = T::zero());
        for k in 0..d.d {
            model.diffusion_r(x, theta, k, &mut self.vk);
            for i in 0..nr {
                for j in 0..nr {
                    self.a_r[i * nr + j] += self.vk[i] * self.vk[j];
                }
            }
        }
        model.jac_s2_wrt_r(x, theta, &mut self.j2r);
        model.jac_s1_wrt_s2(&x[..d.n_s()], theta, &mut self.j12);
        Self::mm(&self.j2r, &self.a_r, n2, nr, nr, &mut self.t2r);
        Self::mm_t(&self.t2r, &self.j2r, n2, nr, &mut self.a_s2);
        Self::mm(&self.j12, &self.a_s2, n1, n2, n2, &mut self.t12);
        Self::mm_t(&self.t12, &self.j12, n1, n2, &mut self.a_s1);
        Self::mm(&self.j12, &self.t2r, n1, n2, nr, &mut self.t1r);

        let cf: [T; 6] = c.0.map(lit::<T>);
        let s = &mut self.sigma;
        let (o2, or) = (n1, n1 + n2);
        for i in 0..n1 {
            for j in 0..n1 {
                s[i * n + j] = cf[0] * self.a_s1[i * n1 + j];
            }
            for j in 0..n2 {
                let v = cf[1] * self.t12[i * n2 + j];
                s[i * n + o2 + j] = v;
                s[(o2 + j) * n + i] = v;
            }
            for j in 0..nr {
                let v = cf[2] * self.t1r[i * nr + j];
                s[i * n + or + j] = v;
                s[(or + j) * n + i] = v;
            }
        }
        for i in 0..n2 {
            for j in 0..n2 {
                s[(o2 + i) * n + o2 + j] = cf[3] * self.a_s2[i * n2 + j];
            }
            for j in 0..nr {
                let v = cf[4] * self.t2r[i * nr + j];
                s[(o2 + i) * n + or + j] = v;
                s[(or + j) * n + o2 + i] = v;
            }
        }
        for i in 0..nr {
            for j in 0..nr {
                s[(or + i) * n + or + j] = cf[5] * self.a_r[i * nr + j];
            }
        }
    }
}

/// Reusable evaluator for means, unit covariances and density terms.
///
/// Holds all scratch buffers, so repeated calls along a path do not
/// allocate. Not `Sync`; create one per thread.
pub struct LgEvaluator<'m, T: Real> {
    model: &'m dyn HypoModel<T>,
    dims: Dims,
    variant: MeanVariant,
    coeffs: CovarianceCoefficients,
    v0: Vec<T>,
    l_s1: Vec<T>,
    l2_s1: Vec<T>,
    l_s2: Vec<T>,
    mu: Vec<T>,
    m: Vec<T>,
    cov: CovWork<T>,
    chol: Vec<T>,
    log_det_unit: T,
    /// Whether `chol` holds a factor that can be reused for the next state.
    cached: bool,
}

impl<'m, T: Real> LgEvaluator<'m, T> {
    pub fn new(model: &'m dyn HypoModel<T>, variant: MeanVariant) -> Self {
        let d = model.dims();
        Self {
            model,
            dims: d,
            variant,
            coeffs: CovarianceCoefficients::default(),
            v0: vec![T::zero(); d.n],
            l_s1: vec![T::zero(); d.n_s1],
            l2_s1: vec![T::zero(); d.n_s1],
            l_s2: vec![T::zero(); d.n_s2],
            mu: vec![T::zero(); d.n],
            m: vec![T::zero(); d.n],
            cov: CovWork::new(&d),
            chol: vec![T::zero(); d.n * d.n],
            log_det_unit: T::zero(),
            cached: false,
        }
    }

    pub fn with_coefficients(mut self, coeffs: CovarianceCoefficients) -> Self {
        self.coeffs = coeffs;
        self
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    /// Forgets any cached factorization (call when `theta` changes).
    pub fn reset(&mut self) {
        self.cached = false;
    }

    /// Mean of the scheme into `out`.
    pub fn mean_into(&mut self, delta: T, x: &[T], theta: &[T], out: &mut [T]) -> Result<()> {
        self.increment_into(delta, x, theta, out)?;
        for (o, xi) in out.iter_mut().zip(x) {
            *o += *xi;
        }
        Ok(())
    }

    /// Mean minus the current state. Residuals formed as `(y - x) - increment`
    /// keep their precision when the state is large compared to a step.
    pub fn increment_into(&mut self, delta: T, x: &[T], theta: &[T], out: &mut [T]) -> Result<()> {
        self.split_increment(delta, x, theta)?;
        for i in 0..self.dims.n {
            out[i] = self.v0[i] * delta + self.mu[i];
        }
        Ok(())
    }

    /// Leaves the drift in `v0` and the higher-order corrections in `mu`.
    /// Keeping them apart lets residuals subtract the large first-order
    /// part before the small, parameter-sensitive corrections.
    fn split_increment(&mut self, delta: T, x: &[T], theta: &[T]) -> Result<()> {
        let d = self.dims;
        drift_into(self.model, x, theta, &mut self.v0);
        self.mu.iter_mut().for_each(|v| *v = T::zero());
        if self.variant == MeanVariant::Full {
            generator_terms_into(self.model, x, theta, &mut self.l_s1, &mut self.l2_s1, &mut self.l_s2)?;
            let h2 = delta * delta * lit(0.5);
            let h3 = delta * delta * delta * lit(1.0 / 6.0);
            for i in 0..d.n_s1 {
                self.mu[i] = self.l_s1[i] * h2 + self.l2_s1[i] * h3;
            }
            for i in 0..d.n_s2 {
                self.mu[d.n_s1 + i] = self.l_s2[i] * h2;
            }
        }
        Ok(())
    }

    /// Unit-step covariance at `x`, row-major.
    pub fn unit_covariance(&mut self, x: &[T], theta: &[T]) -> &[T] {
        self.cov.fill(self.model, x, theta, &self.coeffs);
        &self.cov.sigma
    }

    /// Factorizes `Sigma(1, x, theta)` unless a reusable factor is cached.
    fn factor(&mut self, x: &[T], theta: &[T], step: Option<usize>) -> Result<()> {
        if self.cached {
            return Ok(());
        }
        let n = self.dims.n;
        self.cov.fill(self.model, x, theta, &self.coeffs);
        self.chol.copy_from_slice(&self.cov.sigma);
        let trace: T = (0..n).map(|i| self.cov.sigma[i * n + i]).sum();
        if !cholesky_in_place(&mut self.chol, n) {
            return Err(Error::Definiteness { step, detail: "covariance is not positive definite".into() });
        }
        let mut ld = T::zero();
        let floor = lit::<T>(NEAR_SINGULAR) * trace;
        for i in 0..n {
            let l = self.chol[i * n + i];
            if l * l < floor {
                return Err(Error::Definiteness { step, detail: "covariance is near singular".into() });
            }
            ld += l.ln();
        }
        self.log_det_unit = ld + ld;
        self.cached = self.model.constant_covariance();
        Ok(())
    }

    /// `m^T Lambda m + log |Sigma(1)|` for one transition.
    pub fn contrast_term(&mut self, delta: T, x: &[T], y: &[T], theta: &[T], step: Option<usize>) -> Result<T> {
        let d = self.dims;
        self.split_increment(delta, x, theta)?;
        self.factor(x, theta, step)?;
        let sd = delta.sqrt();
        let (s5, s3) = (sd.powi(5), sd.powi(3));
        for i in 0..d.n {
            let scale = if i < d.n_s1 {
                s5
            } else if i < d.n_s() {
                s3
            } else {
                sd
            };
            self.m[i] = ((y[i] - x[i]) - self.v0[i] * delta - self.mu[i]) / scale;
        }
        forward_subst_in_place(&self.chol, d.n, &mut self.m);
        let q: T = self.m.iter().map(|v| *v * *v).sum();
        Ok(q + self.log_det_unit)
    }

    pub fn log_density(&mut self, delta: T, x: &[T], y: &[T], theta: &[T]) -> Result<T> {
        if !(delta > T::zero()) {
            return Err(Error::Argument(format!("step must be positive, got {delta}")));
        }
        let d = self.dims;
        let c = self.contrast_term(delta, x, y, theta, None)?;
        let n = from_usize::<T>(d.n);
        let p = from_usize::<T>(delta_power(&d));
        Ok(-lit::<T>(0.5) * (n * lit::<T>(std::f64::consts::TAU).ln() + p * delta.ln() + c))
    }

    /// Solves `Sigma(1) v = b` with the current factor (after a density call).
    pub fn solve_unit(&self, b: &mut [T]) {
        chol_solve_in_place(&self.chol, self.dims.n, b);
    }
}
