//! Brownian increments with their first and second time integrals, and path
//! simulation under the Euler, first-order and second-order local Gaussian
//! schemes.

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{drift_into, generator_terms_into, HypoModel, ParamVector};
use crate::scalar::{lit, to_f64, Real};

/// States with any entry beyond this magnitude abort a simulation.
pub const DIVERGENCE_BOUND: f64 = 1e12;

/// `(B_{t+h} - B_t, int int dB dv, int int int dB dv du)` per Brownian coordinate.
#[derive(Debug, Clone, PartialEq)]
pub struct IteratedIncrement<T> {
    pub db: Vec<T>,
    pub i10: Vec<T>,
    pub i110: Vec<T>,
    pub delta: T,
}

/// Maps three independent standard normals to one coordinate of the triple.
#[inline(always)]
pub fn increment_from_normals<T: Real>(delta: T, z1: T, z2: T, z3: T) -> (T, T, T) {
    let sd = delta.sqrt();
    let db = sd * z1;
    let i10 = sd * delta * (z1 * lit(0.5) + z2 * lit(0.5 / 3f64.sqrt()));
    let i110 = sd
        * delta
        * delta
        * (z1 * lit(1.0 / 6.0) + z2 * lit(0.25 / 3f64.sqrt()) + z3 * lit(1.0 / (12.0 * 5f64.sqrt())));
    (db, i10, i110)
}

/// Exact covariance of the triple for one coordinate.
pub fn increment_covariance(delta: f64) -> [[f64; 3]; 3] {
    let d = delta;
    [
        [d, d * d / 2.0, d.powi(3) / 6.0],
        [d * d / 2.0, d.powi(3) / 3.0, d.powi(4) / 8.0],
        [d.powi(3) / 6.0, d.powi(4) / 8.0, d.powi(5) / 20.0],
    ]
}

pub fn sample_increment<T: Real, R: Rng + ?Sized>(delta: T, d: usize, rng: &mut R) -> Result<IteratedIncrement<T>> {
    if !(delta > T::zero()) {
        return Err(Error::Argument(format!("step must be positive, got {delta}")));
    }
    let mut inc =
        IteratedIncrement { db: vec![T::zero(); d], i10: vec![T::zero(); d], i110: vec![T::zero(); d], delta };
    for j in 0..d {
        let z: [f64; 3] = [rng.sample(StandardNormal), rng.sample(StandardNormal), rng.sample(StandardNormal)];
        let (a, b, c) = increment_from_normals(delta, lit(z[0]), lit(z[1]), lit(z[2]));
        inc.db[j] = a;
        inc.i10[j] = b;
        inc.i110[j] = c;
    }
    Ok(inc)
}

/// Reproducible stream of standard normals, `3 d` per step.
///
/// Each step consumes a fixed number of generator words (Box-Muller on
/// pairs), so the noise of step `k` depends only on `(seed, stream, k)` and
/// [`NoiseStream::seek`] gives random access.
#[derive(Debug, Clone)]
pub struct NoiseStream {
    rng: ChaCha8Rng,
    per_step: usize,
}

impl NoiseStream {
    pub fn new(seed: u64, stream: u64, d: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Self { rng, per_step: 3 * d }
    }

    /// Generator words (u32) consumed per step.
    pub fn words_per_step(&self) -> u128 {
        // One Box-Muller pair uses two u64 draws.
        4 * self.per_step.div_ceil(2) as u128
    }

    pub fn seek(&mut self, step: u64) {
        self.rng.set_word_pos(step as u128 * self.words_per_step());
    }

    #[inline]
    fn uniform_open(&mut self) -> f64 {
        // (0, 1]
        ((self.rng.next_u64() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    #[inline]
    fn pair(&mut self) -> (f64, f64) {
        let u1 = self.uniform_open();
        let u2 = self.uniform_open();
        let r = (-2.0 * u1.ln()).sqrt();
        let (s, c) = (std::f64::consts::TAU * u2).sin_cos();
        (r * c, r * s)
    }

    /// Fills `z` (length `3 d`) with the normals of the next step.
    #[inline]
    pub fn next_step<T: Real>(&mut self, z: &mut [T]) {
        debug_assert_eq!(z.len(), self.per_step);
        let mut i = 0;
        while i < self.per_step {
            let (a, b) = self.pair();
            z[i] = lit(a);
            if i + 1 < self.per_step {
                z[i + 1] = lit(b);
            }
            i += 2;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Hash)]
pub enum Scheme {
    #[serde(rename = "EM")]
    Em,
    #[serde(rename = "LG1")]
    Lg1,
    #[serde(rename = "LG2")]
    Lg2,
    #[serde(rename = "LG2_nocorr")]
    Lg2NoCorr,
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scheme::Em => "EM",
            Scheme::Lg1 => "LG1",
            Scheme::Lg2 => "LG2",
            Scheme::Lg2NoCorr => "LG2_nocorr",
        })
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "em" => Ok(Scheme::Em),
            "lg1" => Ok(Scheme::Lg1),
            "lg2" => Ok(Scheme::Lg2),
            "lg2_nocorr" | "lg2-nocorr" => Ok(Scheme::Lg2NoCorr),
            _ => Err(Error::Lookup {
                name: s.to_string(),
                available: ["EM", "LG1", "LG2", "LG2_nocorr"].iter().map(|v| v.to_string()).collect(),
            }),
        }
    }
}

/// Equi-spaced states `x_0, ..., x_n`, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PathSample<T> {
    pub t0: T,
    pub delta: T,
    pub dim: usize,
    pub states: Vec<T>,
    pub seed: u64,
    pub scheme: Scheme,
}

impl<T: Real> PathSample<T> {
    pub fn n_states(&self) -> usize {
        self.states.len() / self.dim
    }

    pub fn n_steps(&self) -> usize {
        self.n_states().saturating_sub(1)
    }

    #[inline]
    pub fn state(&self, k: usize) -> &[T] {
        &self.states[k * self.dim..(k + 1) * self.dim]
    }

    pub fn time(&self, k: usize) -> T {
        self.t0 + self.delta * crate::scalar::from_usize(k)
    }

    pub fn times(&self) -> Vec<T> {
        (0..self.n_states()).map(|k| self.time(k)).collect()
    }

    /// Coordinate `i` across all states.
    pub fn coordinate(&self, i: usize) -> Vec<T> {
        self.states.iter().skip(i).step_by(self.dim).copied().collect()
    }
}

/// Per-step scratch space so the stepping loop does not allocate.
struct StepWork<T> {
    v0: Vec<T>,
    l_s1: Vec<T>,
    l2_s1: Vec<T>,
    l_s2: Vec<T>,
    j12: Vec<T>,
    j2r: Vec<T>,
    vk: Vec<T>,
    w_s2: Vec<T>,
    z: Vec<T>,
    next: Vec<T>,
}

impl<T: Real> StepWork<T> {
    fn new(model: &dyn HypoModel<T>) -> Self {
        let d = model.dims();
        Self {
            v0: vec![T::zero(); d.n],
            l_s1: vec![T::zero(); d.n_s1],
            l2_s1: vec![T::zero(); d.n_s1],
            l_s2: vec![T::zero(); d.n_s2],
            j12: vec![T::zero(); d.n_s1 * d.n_s2],
            j2r: vec![T::zero(); d.n_s2 * d.n_r],
            vk: vec![T::zero(); d.n_r],
            w_s2: vec![T::zero(); d.n_s2],
            z: vec![T::zero(); 3 * d.d],
            next: vec![T::zero(); d.n],
        }
    }
}

fn check_compatible<T: Real>(model: &dyn HypoModel<T>, scheme: Scheme) -> Result<()> {
    if matches!(scheme, Scheme::Lg2 | Scheme::Lg2NoCorr) && model.dims().is_two_layer() {
        return Err(Error::Argument(format!("scheme {scheme} needs a three-layer model (n_s1 >= 1)")));
    }
    Ok(())
}

/// One step of `scheme` from `x` with normals `w.z`, written to `w.next`.
fn step_into<T: Real>(
    model: &dyn HypoModel<T>,
    theta: &[T],
    x: &[T],
    delta: T,
    scheme: Scheme,
    w: &mut StepWork<T>,
) -> Result<()> {
    let d = model.dims();
    let (n_s1, n_s2, n_r, ns) = (d.n_s1, d.n_s2, d.n_r, d.n_s());
    drift_into(model, x, theta, &mut w.v0);
    let half = lit::<T>(0.5);
    let sixth = lit::<T>(1.0 / 6.0);
    let dt2 = delta * delta;
    let dt3 = dt2 * delta;
    for i in 0..d.n {
        w.next[i] = x[i] + w.v0[i] * delta;
    }
    let corrected = matches!(scheme, Scheme::Lg1 | Scheme::Lg2);
    if corrected {
        generator_terms_into(model, x, theta, &mut w.l_s1, &mut w.l2_s1, &mut w.l_s2)?;
        for i in 0..n_s1 {
            w.next[i] += w.l_s1[i] * dt2 * half;
            if scheme == Scheme::Lg2 {
                w.next[i] += w.l2_s1[i] * dt3 * sixth;
            }
        }
        for i in 0..n_s2 {
            w.next[n_s1 + i] += w.l_s2[i] * dt2 * half;
        }
    }
    let smooth_noise = scheme != Scheme::Em;
    if smooth_noise {
        model.jac_s2_wrt_r(x, theta, &mut w.j2r);
        if matches!(scheme, Scheme::Lg2 | Scheme::Lg2NoCorr) {
            model.jac_s1_wrt_s2(&x[..ns], theta, &mut w.j12);
        }
    }
    for j in 0..d.d {
        model.diffusion_r(x, theta, j, &mut w.vk);
        let (db, i10, i110) = increment_from_normals(delta, w.z[3 * j], w.z[3 * j + 1], w.z[3 * j + 2]);
        for i in 0..n_r {
            w.next[ns + i] += w.vk[i] * db;
        }
        if !smooth_noise {
            continue;
        }
        // w_s2 = J2R V_Rj
        for a in 0..n_s2 {
            let mut s = T::zero();
            for b in 0..n_r {
                s += w.j2r[a * n_r + b] * w.vk[b];
            }
            w.w_s2[a] = s;
            w.next[n_s1 + a] += s * i10;
        }
        if matches!(scheme, Scheme::Lg2 | Scheme::Lg2NoCorr) {
            for a in 0..n_s1 {
                let mut s = T::zero();
                for b in 0..n_s2 {
                    s += w.j12[a * n_s2 + b] * w.w_s2[b];
                }
                w.next[a] += s * i110;
            }
        }
    }
    Ok(())
}

fn guard<T: Real>(state: &[T], step: usize) -> Result<()> {
    let bound = lit::<T>(DIVERGENCE_BOUND);
    if let Some((i, v)) = state.iter().enumerate().find(|(_, v)| !v.is_finite() || v.abs() > bound) {
        return Err(Error::Divergence { step, detail: format!("coordinate {} reached {}", i + 1, v) });
    }
    Ok(())
}

/// Simulates `n` steps of size `delta` from `x0`.
pub fn simulate<T: Real>(
    model: &dyn HypoModel<T>,
    theta: &ParamVector<T>,
    x0: &[T],
    delta: T,
    n: usize,
    scheme: Scheme,
    noise: &mut NoiseStream,
    seed: u64,
) -> Result<PathSample<T>> {
    simulate_subsampled(model, theta, x0, delta, 1, n, 0, scheme, noise, seed)
}

/// Simulates on a fine grid of step `fine_delta`, discards `burn_in` fine
/// steps, then records every `stride`-th state until `n_obs` coarse steps
/// have been taken. Equivalent to simulating and then calling [`subsample`],
/// without holding the fine path in memory.
#[allow(clippy::too_many_arguments)]
pub fn simulate_subsampled<T: Real>(
    model: &dyn HypoModel<T>,
    theta: &ParamVector<T>,
    x0: &[T],
    fine_delta: T,
    stride: usize,
    n_obs: usize,
    burn_in: usize,
    scheme: Scheme,
    noise: &mut NoiseStream,
    seed: u64,
) -> Result<PathSample<T>> {
    let d = model.dims();
    if x0.len() != d.n {
        return Err(Error::Shape(format!("initial state has length {}, model expects {}", x0.len(), d.n)));
    }
    if !(fine_delta > T::zero()) {
        return Err(Error::Argument(format!("step must be positive, got {fine_delta}")));
    }
    if stride == 0 {
        return Err(Error::Argument("stride must be positive".into()));
    }
    check_compatible(model, scheme)?;
    let th = theta.values();
    let mut w = StepWork::new(model);
    let mut x = x0.to_vec();
    let mut step = 0usize;
    for _ in 0..burn_in {
        noise.next_step(&mut w.z);
        step_into(model, th, &x, fine_delta, scheme, &mut w)?;
        step += 1;
        guard(&w.next, step)?;
        std::mem::swap(&mut x, &mut w.next);
    }
    let mut states = Vec::with_capacity((n_obs + 1) * d.n);
    states.extend_from_slice(&x);
    for _ in 0..n_obs {
        for _ in 0..stride {
            noise.next_step(&mut w.z);
            step_into(model, th, &x, fine_delta, scheme, &mut w)?;
            step += 1;
            guard(&w.next, step)?;
            std::mem::swap(&mut x, &mut w.next);
        }
        states.extend_from_slice(&x);
    }
    Ok(PathSample {
        t0: T::zero(),
        delta: fine_delta * crate::scalar::from_usize(stride),
        dim: d.n,
        states,
        seed,
        scheme,
    })
}

/// Keeps every `stride`-th state.
pub fn subsample<T: Real>(path: &PathSample<T>, stride: usize) -> Result<PathSample<T>> {
    let n = path.n_steps();
    if stride == 0 || n % stride != 0 {
        return Err(Error::Argument(format!("stride {stride} does not divide {n} steps")));
    }
    let mut states = Vec::with_capacity((n / stride + 1) * path.dim);
    for k in (0..=n).step_by(stride) {
        states.extend_from_slice(path.state(k));
    }
    Ok(PathSample { states, delta: path.delta * crate::scalar::from_usize(stride), ..path.clone() })
}

/// Observed coordinates of a path. `mask` holds 0-based coordinate indices.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationSet<T> {
    pub t0: T,
    pub delta: T,
    pub full_dim: usize,
    pub mask: Vec<usize>,
    pub values: Vec<T>,
}

impl<T: Real> ObservationSet<T> {
    pub fn width(&self) -> usize {
        self.mask.len()
    }

    pub fn n_states(&self) -> usize {
        if self.mask.is_empty() {
            0
        } else {
            self.values.len() / self.mask.len()
        }
    }

    pub fn n_steps(&self) -> usize {
        self.n_states().saturating_sub(1)
    }

    #[inline]
    pub fn row(&self, k: usize) -> &[T] {
        let w = self.mask.len();
        &self.values[k * w..(k + 1) * w]
    }

    pub fn is_complete(&self) -> bool {
        self.mask.len() == self.full_dim && self.mask.iter().enumerate().all(|(i, m)| i == *m)
    }

    /// True when exactly the leading `k` coordinates are observed.
    pub fn is_leading(&self, k: usize) -> bool {
        self.mask.len() == k && self.mask.iter().enumerate().all(|(i, m)| i == *m)
    }

    pub fn coordinate(&self, col: usize) -> Vec<T> {
        self.values.iter().skip(col).step_by(self.mask.len()).copied().collect()
    }

    pub fn time(&self, k: usize) -> T {
        self.t0 + self.delta * crate::scalar::from_usize(k)
    }

    /// Writes `t,x<i>...` rows with 17 significant digits.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let header: Vec<String> =
            std::iter::once("t".to_string()).chain(self.mask.iter().map(|i| format!("x{}", i + 1))).collect();
        write_rows(out, &header, self.n_states(), |k| self.time(k), |k| self.row(k))
    }

    /// Reads the CSV layout written by [`ObservationSet::write_csv`] or
    /// [`write_path_csv`].
    pub fn read_csv<R: Read>(input: R, full_dim: Option<usize>) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(input);
        let header = rdr.headers().map_err(|e| Error::Parse { row: 1, detail: e.to_string() })?.clone();
        if header.get(0) != Some("t") {
            return Err(Error::Parse { row: 1, detail: "missing column 't' (first column must be time)".into() });
        }
        let mut mask = Vec::new();
        for (c, name) in header.iter().enumerate().skip(1) {
            let idx =
                name.strip_prefix('x').and_then(|s| s.parse::<usize>().ok()).filter(|i| *i >= 1).ok_or_else(|| {
                    Error::Parse {
                        row: 1,
                        detail: format!("column {} has invalid name '{name}' (expected x<k>)", c + 1),
                    }
                })?;
            mask.push(idx - 1);
        }
        if mask.is_empty() {
            return Err(Error::Parse { row: 1, detail: "missing column 'x1' (no state columns)".into() });
        }
        let mut times = Vec::new();
        let mut values = Vec::new();
        for (r, rec) in rdr.records().enumerate() {
            let row = r + 2;
            let rec = rec.map_err(|e| Error::Parse { row, detail: e.to_string() })?;
            if rec.len() != header.len() {
                return Err(Error::Parse {
                    row,
                    detail: format!("expected {} fields, found {}", header.len(), rec.len()),
                });
            }
            for (c, field) in rec.iter().enumerate() {
                let v: f64 = field.parse().map_err(|_| Error::Parse {
                    row,
                    detail: format!("column '{}': cannot parse '{field}'", &header[c]),
                })?;
                if c == 0 {
                    times.push(v);
                } else {
                    values.push(lit::<T>(v));
                }
            }
        }
        if times.len() < 2 {
            return Err(Error::Parse { row: times.len() + 1, detail: "need at least two rows".into() });
        }
        let n = times.len() - 1;
        let delta = (times[n] - times[0]) / n as f64;
        if !(delta > 0.0) {
            return Err(Error::Parse { row: 2, detail: "time column is not increasing".into() });
        }
        for (k, t) in times.iter().enumerate() {
            let expected = times[0] + delta * k as f64;
            if (t - expected).abs() > 1e-12 * expected.abs().max(1.0) + 1e-9 * delta {
                return Err(Error::Parse { row: k + 2, detail: format!("time {t} breaks the constant step {delta}") });
            }
        }
        let full_dim = full_dim.unwrap_or_else(|| mask.iter().max().map_or(0, |m| m + 1));
        Ok(Self { t0: lit(times[0]), delta: lit(delta), full_dim, mask, values })
    }
}

/// Restricts a path to the coordinates in `mask`.
pub fn project_observed<T: Real>(path: &PathSample<T>, mask: &[usize]) -> Result<ObservationSet<T>> {
    if mask.is_empty() {
        return Err(Error::Argument("observation mask is empty".into()));
    }
    if let Some(bad) = mask.iter().find(|m| **m >= path.dim) {
        return Err(Error::Argument(format!("mask index {bad} out of range for dimension {}", path.dim)));
    }
    let mut values = Vec::with_capacity(path.n_states() * mask.len());
    for k in 0..path.n_states() {
        let s = path.state(k);
        values.extend(mask.iter().map(|m| s[*m]));
    }
    Ok(ObservationSet { t0: path.t0, delta: path.delta, full_dim: path.dim, mask: mask.to_vec(), values })
}

fn write_rows<'a, T: Real + 'a, W: Write>(
    out: W,
    header: &[String],
    n: usize,
    time: impl Fn(usize) -> T,
    row: impl Fn(usize) -> &'a [T],
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let err = |e: csv::Error| Error::Io(std::io::Error::other(e));
    w.write_record(header).map_err(err)?;
    let mut rec: Vec<String> = Vec::with_capacity(header.len());
    for k in 0..n {
        rec.clear();
        rec.push(format!("{:.16e}", to_f64(time(k))));
        rec.extend(row(k).iter().map(|v| format!("{:.16e}", to_f64(*v))));
        w.write_record(&rec).map_err(err)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes a full path as `t,x1,...,xN`.
pub fn write_path_csv<T: Real, W: Write>(path: &PathSample<T>, out: W) -> Result<()> {
    let header: Vec<String> = std::iter::once("t".to_string()).chain((1..=path.dim).map(|i| format!("x{i}"))).collect();
    write_rows(out, &header, path.n_states(), |k| path.time(k), |k| path.state(k))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::builtin_model;

    #[test]
    fn zero_normals_zero_integrals() {
        assert_eq!(increment_from_normals(0.3f64, 0.0, 0.0, 0.0), (0.0, 0.0, 0.0));
    }

    #[test]
    fn increment_map_matches_covariance() {
        // Linear map rows; covariance = M M^T must equal the target exactly.
        let delta = 0.7f64;
        let cols: Vec<(f64, f64, f64)> = [(1.0, 0.0, 0.0), (0.0, 1.0, 0.0), (0.0, 0.0, 1.0)]
            .iter()
            .map(|(a, b, c)| increment_from_normals(delta, *a, *b, *c))
            .collect();
        let row = |i: usize| -> [f64; 3] {
            [0, 1, 2].map(|k| match i {
                0 => cols[k].0,
                1 => cols[k].1,
                _ => cols[k].2,
            })
        };
        let target = increment_covariance(delta);
        for i in 0..3 {
            for j in 0..3 {
                let (ri, rj) = (row(i), row(j));
                let c: f64 = (0..3).map(|k| ri[k] * rj[k]).sum();
                assert!((c - target[i][j]).abs() < 1e-14 * target[i][j].abs().max(1e-300) + 1e-16, "{i}{j}");
            }
        }
    }

    #[test]
    fn noise_stream_seek_matches_sequential() {
        let mut a = NoiseStream::new(7, 3, 1);
        let mut z = [0.0f64; 3];
        for _ in 0..5 {
            a.next_step(&mut z);
        }
        let mut b = NoiseStream::new(7, 3, 1);
        b.seek(4);
        let mut y = [0.0f64; 3];
        b.next_step(&mut y);
        assert_eq!(z, y);
        let mut c = NoiseStream::new(7, 4, 1);
        c.next_step(&mut y);
        assert_ne!(z, y);
    }

    #[test]
    fn deterministic_lg2_step() {
        let p = builtin_model::<f64>("toy3").unwrap();
        // The preset box excludes sigma = 0, so build a wider one.
        let layout = p.theta_true.layout().clone();
        let zero_sigma = ParamVector::new(layout, vec![2.0, 0.0], vec![0.0, 0.0], vec![10.0, 10.0]).unwrap();
        let mut noise = NoiseStream::new(1, 0, 1);
        let path =
            simulate(p.model.as_ref(), &zero_sigma, &[0.0, 1.0, 2.0], 0.1, 1, Scheme::Lg2, &mut noise, 1).unwrap();
        let x1 = path.state(1);
        assert!((x1[0] - 0.109_333_333_333_333_33).abs() < 1e-15);
        assert!((x1[1] - 1.18).abs() < 1e-15);
        assert!((x1[2] - 1.6).abs() < 1e-15);
    }

    #[test]
    fn em_smooth_update_is_noise_free() {
        let p = builtin_model::<f64>("toy3").unwrap();
        let mut noise = NoiseStream::new(5, 0, 1);
        let path =
            simulate(p.model.as_ref(), &p.theta_true, &[0.5, 1.0, 2.0], 0.01, 20, Scheme::Em, &mut noise, 5).unwrap();
        for k in 1..=20 {
            let (prev, cur) = (path.state(k - 1), path.state(k));
            assert_eq!(cur[0], prev[0] + prev[1] * 0.01);
        }
    }

    #[test]
    fn subsample_indices() {
        let path = PathSample {
            t0: 0.0,
            delta: 0.1,
            dim: 1,
            states: (0..=10).map(|v| v as f64).collect(),
            seed: 0,
            scheme: Scheme::Em,
        };
        assert_eq!(subsample(&path, 1).unwrap(), path);
        let s = subsample(&path, 5).unwrap();
        assert_eq!(s.states, vec![0.0, 5.0, 10.0]);
        assert!((s.delta - 0.5).abs() < 1e-15);
        assert!(subsample(&path, 3).is_err());
    }

    #[test]
    fn lg2_rejects_two_layer_models() {
        struct TwoLayer(crate::model::ParamLayout);
        impl HypoModel<f64> for TwoLayer {
            fn name(&self) -> &str {
                "two"
            }
            fn dims(&self) -> crate::model::Dims {
                crate::model::Dims::new(0, 1, 1, 1).unwrap()
            }
            fn layout(&self) -> &crate::model::ParamLayout {
                &self.0
            }
            fn drift_s1(&self, _: &[f64], _: &[f64], _: &mut [f64]) {}
            fn drift_s2(&self, x: &[f64], _: &[f64], o: &mut [f64]) {
                o[0] = x[1];
            }
            fn drift_r(&self, x: &[f64], _: &[f64], o: &mut [f64]) {
                o[0] = -x[1];
            }
            fn diffusion_r(&self, _: &[f64], t: &[f64], _: usize, o: &mut [f64]) {
                o[0] = t[0];
            }
        }
        let layout = crate::model::ParamLayout::new([0, 0, 0, 1], &["sigma"]).unwrap();
        let m = TwoLayer(layout.clone());
        let th = ParamVector::new(layout, vec![1.0], vec![0.0], vec![2.0]).unwrap();
        let mut noise = NoiseStream::new(1, 0, 1);
        assert!(simulate(&m, &th, &[0.0, 0.0], 0.1, 3, Scheme::Lg2, &mut noise, 1).is_err());
        // Finite-difference generator terms drive the first-order scheme.
        assert!(simulate(&m, &th, &[0.0, 0.0], 0.1, 3, Scheme::Lg1, &mut noise, 1).is_ok());
    }

    #[test]
    fn csv_round_trip() {
        let path = PathSample {
            t0: 0.0,
            delta: 1e-3,
            dim: 2,
            states: vec![0.1, -2.0, 1.0 / 3.0, 5e-7, 2.0, 3.0],
            seed: 0,
            scheme: Scheme::Lg2,
        };
        let mut buf = Vec::new();
        write_path_csv(&path, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("t,x1,x2\n"));
        let obs = ObservationSet::<f64>::read_csv(buf.as_slice(), None).unwrap();
        assert!(obs.is_complete());
        assert_eq!(obs.values, path.states);
        let bad = "t,x1,x3\n0,1,2\n1,1,2\n";
        let obs = ObservationSet::<f64>::read_csv(bad.as_bytes(), Some(3)).unwrap();
        assert_eq!(obs.mask, vec![0, 2]);
        let err = ObservationSet::<f64>::read_csv("t,x1\n0,1\n1,zz\n".as_bytes(), None).unwrap_err();
        assert!(err.to_string().contains("row 3"), "{err}");
    }
}
