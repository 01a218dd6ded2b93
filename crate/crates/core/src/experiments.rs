//! Reproducible simulate → fit pipelines and the replication tables.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::complete::{asymptotic_precision, estimate_complete_variant, FitReport};
use crate::density::MeanVariant;
use crate::error::{Error, Result};
use crate::model::{builtin_model, memory_kernel_prony, Preset};
use crate::optim::OptimConfig;
use crate::partial::{estimate_partial, CondGaussSpec};
use crate::stochastics::{project_observed, simulate_subsampled, NoiseStream, ObservationSet, PathSample, Scheme};

/// Environment variable capping the worker pool.
pub const THREADS_ENV: &str = "HYPOSDE_THREADS";

/// Which likelihood a fit uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Complete,
    Partial,
}

impl std::fmt::Display for Regime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Regime::Complete => "complete",
            Regime::Partial => "partial",
        })
    }
}

/// One estimator applied to every replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Arm {
    pub label: String,
    pub regime: Regime,
    /// Mean used by the fitted likelihood.
    pub variant: MeanVariant,
}

impl Arm {
    fn variant_name(&self) -> &'static str {
        match self.variant {
            MeanVariant::Full => "LG2",
            MeanVariant::NoCorrection => "LG2_nocorr",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub model: String,
    /// Scheme used to generate data.
    pub scheme: Scheme,
    /// Defaults to the model preset.
    pub theta_true: Option<Vec<f64>>,
    pub theta_init: Option<Vec<f64>>,
    pub x0: Option<Vec<f64>>,
    /// Number of observed transitions.
    pub n: usize,
    /// Observation step.
    pub delta: f64,
    /// Simulation step; `fine_delta * stride` must equal `delta`.
    pub fine_delta: Option<f64>,
    pub stride: usize,
    /// Simulation steps discarded before the first observation.
    pub burn_in: usize,
    pub replications: usize,
    pub seed: Option<u64>,
    /// Observed coordinates (0-based); all of them when absent.
    pub mask: Option<Vec<usize>>,
    pub optimizer: OptimConfig,
    /// Estimators compared on each replication (replicate only).
    pub arms: Vec<Arm>,
    pub out: Option<String>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            model: "toy3".into(),
            scheme: Scheme::Lg2,
            theta_true: None,
            theta_init: None,
            x0: None,
            n: 1000,
            delta: 1e-3,
            fine_delta: None,
            stride: 1,
            burn_in: 0,
            replications: 1,
            seed: None,
            mask: None,
            optimizer: OptimConfig::default(),
            arms: vec![Arm { label: "proposed".into(), regime: Regime::Complete, variant: MeanVariant::Full }],
            out: None,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.replications == 0 {
            return Err(Error::Config("replications must be at least 1".into()));
        }
        if self.n == 0 {
            return Err(Error::Config("n must be at least 1".into()));
        }
        if !(self.delta > 0.0) {
            return Err(Error::Config(format!("delta must be positive, got {}", self.delta)));
        }
        if self.stride == 0 {
            return Err(Error::Config("stride must be at least 1".into()));
        }
        let fine = self.simulation_step();
        if ((fine * self.stride as f64) - self.delta).abs() > 1e-12 * self.delta {
            return Err(Error::Config(format!(
                "fine_delta * stride = {} does not match delta = {}",
                fine * self.stride as f64,
                self.delta
            )));
        }
        if let Some(mask) = &self.mask {
            if mask.is_empty() {
                return Err(Error::Config("observation mask is empty".into()));
            }
        }
        Ok(())
    }

    pub fn simulation_step(&self) -> f64 {
        self.fine_delta.unwrap_or(self.delta / self.stride as f64)
    }

    /// Model preset with the configured overrides applied.
    pub fn preset(&self) -> Result<Preset<f64>> {
        let mut p = builtin_model::<f64>(&self.model)?;
        if let Some(t) = &self.theta_true {
            p.theta_true = p.theta_true.with_values(t)?;
        }
        if let Some(t) = &self.theta_init {
            p.theta_init = p.theta_init.with_values(t)?;
        }
        if let Some(x0) = &self.x0 {
            if x0.len() != p.model.dims().n {
                return Err(Error::Shape(format!("x0 has length {}, model expects {}", x0.len(), p.model.dims().n)));
            }
            p.x0 = x0.clone();
        }
        Ok(p)
    }

    fn require_seed(&self) -> Result<u64> {
        self.seed.ok_or_else(|| Error::Config("a seed is required".into()))
    }
}

/// The replication tables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TableKind {
    Table1Set1,
    Table1Set2,
    Table1Set3,
    Table2Ho,
    Table2Dw,
    Prony,
}

impl TableKind {
    pub const ALL: [TableKind; 6] = [
        TableKind::Table1Set1,
        TableKind::Table1Set2,
        TableKind::Table1Set3,
        TableKind::Table2Ho,
        TableKind::Table2Dw,
        TableKind::Prony,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            TableKind::Table1Set1 => "table1_set1",
            TableKind::Table1Set2 => "table1_set2",
            TableKind::Table1Set3 => "table1_set3",
            TableKind::Table2Ho => "table2_ho",
            TableKind::Table2Dw => "table2_dw",
            TableKind::Prony => "prony",
        }
    }

    /// Desk-scale default configuration.
    pub fn config(&self) -> ExperimentConfig {
        let partial = |label: &str, variant| Arm { label: label.into(), regime: Regime::Partial, variant };
        let complete = |label: &str| Arm { label: label.into(), regime: Regime::Complete, variant: MeanVariant::Full };
        let table1 = |n: usize, delta: f64| ExperimentConfig {
            model: "toy3".into(),
            n,
            delta,
            fine_delta: Some(1e-4),
            stride: (delta / 1e-4).round() as usize,
            replications: 20,
            mask: Some(vec![0]),
            arms: vec![partial("proposed", MeanVariant::Full), partial("incorrect", MeanVariant::NoCorrection)],
            ..ExperimentConfig::default()
        };
        let table2 = |model: &str| ExperimentConfig {
            model: model.into(),
            n: 200_000,
            delta: 1e-3,
            fine_delta: Some(1e-4),
            stride: 10,
            replications: 5,
            optimizer: OptimConfig::adam(),
            arms: vec![complete("complete"), partial("partial", MeanVariant::Full)],
            ..ExperimentConfig::default()
        };
        match self {
            TableKind::Table1Set1 => table1(500_000, 1e-3),
            TableKind::Table1Set2 => table1(2_000_000, 5e-4),
            TableKind::Table1Set3 => table1(10_000_000, 1e-3),
            TableKind::Table2Ho => table2("qgle_ho"),
            TableKind::Table2Dw => table2("qgle_dw"),
            TableKind::Prony => ExperimentConfig {
                model: "qgle_prony".into(),
                n: 200_000,
                delta: 1e-3,
                fine_delta: Some(1e-4),
                stride: 10,
                // 50 time units
                burn_in: 500_000,
                replications: 1,
                mask: Some(vec![0]),
                arms: vec![partial("partial", MeanVariant::Full)],
                ..ExperimentConfig::default()
            },
        }
    }
}

impl std::fmt::Display for TableKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for TableKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        TableKind::ALL.into_iter().find(|t| t.name() == s).ok_or_else(|| Error::Lookup {
            name: s.into(),
            available: TableKind::ALL.iter().map(|t| t.name().to_string()).collect(),
        })
    }
}

/// Simulates replication `rep`; each replication draws from its own stream.
pub fn simulate_replication(
    config: &ExperimentConfig,
    preset: &Preset<f64>,
    seed: u64,
    rep: usize,
) -> Result<PathSample<f64>> {
    let model = preset.model.as_ref();
    let mut noise = NoiseStream::new(seed, rep as u64, model.dims().d);
    simulate_subsampled(
        model,
        &preset.theta_true,
        &preset.x0,
        config.simulation_step(),
        config.stride,
        config.n,
        config.burn_in,
        config.scheme,
        &mut noise,
        seed,
    )
}

/// Fits observations with the likelihood the arm calls for.
pub fn fit_arm(
    preset: &Preset<f64>,
    obs: &ObservationSet<f64>,
    arm: &Arm,
    optimizer: &OptimConfig,
    seed: Option<u64>,
) -> Result<FitReport> {
    let model = preset.model.as_ref();
    let (res, se, pseudo) = match arm.regime {
        Regime::Complete => {
            let r = estimate_complete_variant(model, obs, &preset.theta_init, optimizer, arm.variant)?;
            let prec = asymptotic_precision(model, obs, &r.theta_hat)?;
            (r, Some(prec.standard_errors()), prec.pseudo_inverse)
        }
        Regime::Partial => {
            let spec = CondGaussSpec::new(model, arm.variant, preset.prior.clone())?;
            (estimate_partial(&spec, obs, &preset.theta_init, optimizer)?, None, false)
        }
    };
    Ok(FitReport {
        model: model.name().to_string(),
        regime: arm.regime.to_string(),
        scheme: arm.variant_name().to_string(),
        names: model.layout().names.clone(),
        theta_hat: res.theta_hat.values().to_vec(),
        se,
        pseudo_inverse: pseudo,
        contrast_value: res.contrast_value,
        converged: res.converged,
        iterations: res.iterations,
        evaluations: res.evaluations,
        config: *optimizer,
        seed,
    })
}

/// Fits a data file: complete observations use the contrast, observations of
/// the top smooth block use the Kalman likelihood.
pub fn fit_observations(config: &ExperimentConfig, obs: &ObservationSet<f64>) -> Result<FitReport> {
    let preset = config.preset()?;
    let d = preset.model.dims();
    if obs.full_dim != d.n {
        return Err(Error::Shape(format!(
            "data has {} coordinates, model '{}' has {}",
            obs.full_dim, config.model, d.n
        )));
    }
    let regime = if obs.is_complete() {
        Regime::Complete
    } else if obs.mask == (0..d.n_s1).collect::<Vec<_>>() {
        Regime::Partial
    } else {
        return Err(Error::Argument(format!(
            "observed coordinates {:?} are neither complete nor the top smooth block",
            obs.mask
        )));
    };
    let variant = config.arms.first().map_or(MeanVariant::Full, |a| a.variant);
    let arm = Arm { label: regime.to_string(), regime, variant };
    fit_arm(&preset, obs, &arm, &config.optimizer, config.seed)
}

/// One fitted parameter of one replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationRow {
    pub replication: usize,
    pub arm: String,
    pub regime: Regime,
    pub scheme: String,
    pub param: String,
    pub true_value: f64,
    pub estimate: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub arm: String,
    pub regime: Regime,
    pub scheme: String,
    pub param: String,
    pub true_value: f64,
    pub mean: f64,
    /// Sample standard deviation across replications.
    pub sd: f64,
    /// Standard error of the mean, `sd / sqrt(replications)`.
    pub se: f64,
    pub mean_bias: f64,
    pub replications: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationOutput {
    pub table: Option<TableKind>,
    pub rows: Vec<ReplicationRow>,
    pub summary: Vec<SummaryRow>,
}

impl ReplicationOutput {
    pub fn summary_for(&self, arm: &str, param: &str) -> Option<&SummaryRow> {
        self.summary.iter().find(|s| s.arm == arm && s.param == param)
    }

    pub fn write_rows_csv<W: Write>(&self, out: W) -> Result<()> {
        write_csv(out, &self.rows)
    }

    pub fn write_summary_csv<W: Write>(&self, out: W) -> Result<()> {
        write_csv(out, &self.summary)
    }
}

fn write_csv<W: Write, S: Serialize>(out: W, rows: &[S]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r).map_err(|e| Error::Io(std::io::Error::other(e)))?;
    }
    w.flush()?;
    Ok(())
}

/// Kernel time grid for the Prony comparison: log-spaced on `[0.01, 10]`.
pub fn kernel_grid(points: usize) -> Vec<f64> {
    let (a, b) = (0.01f64.ln(), 10f64.ln());
    (0..points).map(|i| (a + (b - a) * i as f64 / (points - 1).max(1) as f64).exp()).collect()
}

/// `max_t |K_hat(t) - K(t)| / K(t)` over `grid` for `theta = (c1, tau1, c2, tau2, ...)`.
pub fn kernel_max_relative_error(theta_hat: &[f64], theta_true: &[f64], grid: &[f64]) -> Result<f64> {
    let split = |t: &[f64]| -> (Vec<f64>, Vec<f64>) {
        (t.iter().step_by(2).copied().collect(), t.iter().skip(1).step_by(2).copied().collect())
    };
    let (ch, th) = split(theta_hat);
    let (ct, tt) = split(theta_true);
    let mut worst = 0.0f64;
    for &t in grid {
        let k = memory_kernel_prony(t, &ct, &tt)?;
        let kh = memory_kernel_prony(t, &ch, &th)?;
        worst = worst.max((kh - k).abs() / k.abs());
    }
    Ok(worst)
}

/// Runs `f` on a pool capped by [`THREADS_ENV`] when it is set.
pub fn with_pool<R: Send>(f: impl FnOnce() -> R + Send) -> Result<R> {
    match std::env::var(THREADS_ENV) {
        Ok(v) => {
            let n: usize = v
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("{THREADS_ENV} must be a positive integer, got '{v}'")))?;
            if n == 0 {
                return Err(Error::Config(format!("{THREADS_ENV} must be a positive integer, got '{v}'")));
            }
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::Config(format!("cannot build worker pool: {e}")))?;
            Ok(pool.install(f))
        }
        Err(_) => Ok(f()),
    }
}

/// Simulates `config.replications` datasets and fits every arm on each.
pub fn replicate(config: &ExperimentConfig, table: Option<TableKind>) -> Result<ReplicationOutput> {
    config.validate()?;
    let seed = config.require_seed()?;
    if config.arms.is_empty() {
        return Err(Error::Config("no estimators configured".into()));
    }
    let preset = config.preset()?;
    let d = preset.model.dims();
    let is_prony = config.model == "qgle_prony";
    let names = preset.model.layout().names.clone();
    let truth = preset.theta_true.values().to_vec();
    let grid = kernel_grid(200);

    let per_rep: Vec<Result<Vec<ReplicationRow>>> = with_pool(|| {
        (0..config.replications)
            .into_par_iter()
            .map(|rep| {
                let path = simulate_replication(config, &preset, seed, rep)?;
                let mut rows = Vec::new();
                for arm in &config.arms {
                    let mask: Vec<usize> = match arm.regime {
                        Regime::Complete => (0..d.n).collect(),
                        Regime::Partial => (0..d.n_s1).collect(),
                    };
                    let obs = project_observed(&path, &mask)?;
                    let fit = fit_arm(&preset, &obs, arm, &config.optimizer, Some(seed))?;
                    let row = |param: &str, true_value: f64, estimate: f64| ReplicationRow {
                        replication: rep,
                        arm: arm.label.clone(),
                        regime: arm.regime,
                        scheme: arm.variant_name().into(),
                        param: param.into(),
                        true_value,
                        estimate,
                        converged: fit.converged,
                    };
                    for (k, name) in names.iter().enumerate() {
                        rows.push(row(name, truth[k], fit.theta_hat[k]));
                    }
                    if is_prony {
                        rows.push(row(
                            "kernel_max_rel_err",
                            0.0,
                            kernel_max_relative_error(&fit.theta_hat, &truth, &grid)?,
                        ));
                    }
                }
                Ok(rows)
            })
            .collect()
    })?;
    let mut rows = Vec::new();
    for r in per_rep {
        rows.extend(r?);
    }
    let summary = summarize(&rows);
    Ok(ReplicationOutput { table, rows, summary })
}

/// Mean, spread and standard error per (arm, parameter), in first-seen order.
pub fn summarize(rows: &[ReplicationRow]) -> Vec<SummaryRow> {
    let mut keys: Vec<(String, String)> = Vec::new();
    for r in rows {
        let k = (r.arm.clone(), r.param.clone());
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    keys.into_iter()
        .map(|(arm, param)| {
            let sel: Vec<&ReplicationRow> = rows.iter().filter(|r| r.arm == arm && r.param == param).collect();
            let n = sel.len();
            let mean = sel.iter().map(|r| r.estimate).sum::<f64>() / n as f64;
            let var =
                if n > 1 { sel.iter().map(|r| (r.estimate - mean).powi(2)).sum::<f64>() / (n - 1) as f64 } else { 0.0 };
            let sd = var.sqrt();
            SummaryRow {
                arm,
                regime: sel[0].regime,
                scheme: sel[0].scheme.clone(),
                param,
                true_value: sel[0].true_value,
                mean,
                sd,
                se: sd / (n as f64).sqrt(),
                mean_bias: mean - sel[0].true_value,
                replications: n,
            }
        })
        .collect()
}
