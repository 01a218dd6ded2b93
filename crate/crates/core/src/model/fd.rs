//! Finite-difference derivatives of vector-valued maps.
//!
//! All derivatives are taken along a direction `v` by differentiating
//! `t -> f(x + t v)` at `t = 0` with five-point stencils. First derivatives
//! use a displacement of `eps^(1/5) * max(1, |x|_inf)`, second derivatives
//! `eps^(1/6) * max(1, |x|_inf)`; those are the error-balancing steps for the
//! fourth-order stencils and keep nested applications accurate to ~1e-9.

use crate::error::{Error, Result};
use crate::scalar::{lit, Real};

/// A vector field `x -> f(x)` writing into `out`.
pub type Field<'a, T> = dyn Fn(&[T], &mut [T]) + 'a;

fn inf_norm<T: Real>(v: &[T]) -> T {
    v.iter().fold(T::zero(), |m, a| m.max(a.abs()))
}

fn displaced<T: Real>(x: &[T], v: &[T], t: T, buf: &mut [T]) {
    for ((b, xi), vi) in buf.iter_mut().zip(x).zip(v) {
        *b = *xi + t * *vi;
    }
}

/// Parameter step along direction `v`, or `None` when `v` vanishes.
fn direction_step<T: Real>(x: &[T], v: &[T], power: f64) -> Result<Option<T>> {
    let vn = inf_norm(v);
    if vn == T::zero() {
        return Ok(None);
    }
    if !vn.is_finite() || x.iter().any(|a| !a.is_finite()) {
        return Err(Error::Numeric {
            block: "finite difference".into(),
            detail: "non-finite evaluation point or direction".into(),
        });
    }
    let h = T::epsilon().powf(lit(power)) * inf_norm(x).max(T::one());
    let t = h / vn;
    if !(t > T::zero()) || t.is_infinite() {
        return Err(Error::Numeric { block: "finite difference".into(), detail: "step underflow".into() });
    }
    Ok(Some(t))
}

/// `d/dt f(x + t v)` at `t = 0`.
pub fn directional<T: Real>(f: &Field<'_, T>, x: &[T], v: &[T], m: usize, out: &mut [T]) -> Result<()> {
    let Some(t) = direction_step(x, v, 0.2)? else {
        out[..m].iter_mut().for_each(|o| *o = T::zero());
        return Ok(());
    };
    let mut buf = vec![T::zero(); x.len()];
    let mut f_vals = [vec![T::zero(); m], vec![T::zero(); m], vec![T::zero(); m], vec![T::zero(); m]];
    let offsets = [-2.0, -1.0, 1.0, 2.0];
    for (val, off) in f_vals.iter_mut().zip(offsets) {
        displaced(x, v, t * lit(off), &mut buf);
        f(&buf, val);
    }
    let c8 = lit::<T>(8.0);
    let denom = lit::<T>(12.0) * t;
    for i in 0..m {
        out[i] = (f_vals[0][i] - c8 * f_vals[1][i] + c8 * f_vals[2][i] - f_vals[3][i]) / denom;
    }
    Ok(())
}

/// `d^2/dt^2 f(x + t v)` at `t = 0`, i.e. `v^T (Hess f) v` per component.
pub fn second_directional<T: Real>(f: &Field<'_, T>, x: &[T], v: &[T], m: usize, out: &mut [T]) -> Result<()> {
    let Some(t) = direction_step(x, v, 1.0 / 6.0)? else {
        out[..m].iter_mut().for_each(|o| *o = T::zero());
        return Ok(());
    };
    let mut buf = vec![T::zero(); x.len()];
    let mut vals: Vec<Vec<T>> = (0..5).map(|_| vec![T::zero(); m]).collect();
    for (k, off) in [-2.0, -1.0, 0.0, 1.0, 2.0].into_iter().enumerate() {
        displaced(x, v, t * lit(off), &mut buf);
        f(&buf, &mut vals[k]);
    }
    let c16 = lit::<T>(16.0);
    let c30 = lit::<T>(30.0);
    let denom = lit::<T>(12.0) * t * t;
    for i in 0..m {
        out[i] = (-vals[0][i] + c16 * vals[1][i] - c30 * vals[2][i] + c16 * vals[3][i] - vals[4][i]) / denom;
    }
    Ok(())
}

/// Row-major `m x cols.len()` Jacobian of `f` with respect to the listed
/// coordinates of `x`.
pub fn partial_jacobian<T: Real>(
    f: &Field<'_, T>,
    x: &[T],
    cols: std::ops::Range<usize>,
    m: usize,
    out: &mut [T],
) -> Result<()> {
    let nc = cols.len();
    for (jj, j) in cols.enumerate() {
        // Per-coordinate scaling: step relative to |x_j| rather than |x|_inf.
        let scale = x[j].abs().max(T::one());
        let mut xs = x.to_vec();
        let t = T::epsilon().powf(lit(0.2)) * scale;
        let mut vals = [vec![T::zero(); m], vec![T::zero(); m], vec![T::zero(); m], vec![T::zero(); m]];
        for (val, off) in vals.iter_mut().zip([-2.0, -1.0, 1.0, 2.0]) {
            xs[j] = x[j] + t * lit(off);
            f(&xs, val);
        }
        let c8 = lit::<T>(8.0);
        let denom = lit::<T>(12.0) * t;
        for i in 0..m {
            out[i * nc + jj] = (vals[0][i] - c8 * vals[1][i] + c8 * vals[2][i] - vals[3][i]) / denom;
        }
    }
    if out[..m * nc].iter().any(|a| !a.is_finite()) {
        return Err(Error::Numeric { block: "jacobian".into(), detail: "non-finite finite-difference entry".into() });
    }
    Ok(())
}

/// Lie bracket `[W, Z](x) = D_W Z(x) - D_Z W(x)`.
pub fn lie_bracket<T: Real>(w: &Field<'_, T>, z: &Field<'_, T>, x: &[T], out: &mut [T]) -> Result<()> {
    let n = x.len();
    let mut wx = vec![T::zero(); n];
    let mut zx = vec![T::zero(); n];
    w(x, &mut wx);
    z(x, &mut zx);
    let mut dwz = vec![T::zero(); n];
    let mut dzw = vec![T::zero(); n];
    directional(z, x, &wx, n, &mut dwz)?;
    directional(w, x, &zx, n, &mut dzw)?;
    for i in 0..n {
        out[i] = dwz[i] - dzw[i];
    }
    Ok(())
}
