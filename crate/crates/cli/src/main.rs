use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use hyposde::experiments::{fit_observations, replicate, simulate_replication, ExperimentConfig, TableKind};
use hyposde::optim::{Method, OptimConfig};
use hyposde::stochastics::{project_observed, write_path_csv, ObservationSet, Scheme};
use hyposde::verify::run_checks;

#[derive(Parser)]
#[command(name = "hyposde", version, about = "Simulate and fit highly degenerate diffusions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a path and write it as CSV with a JSON sidecar.
    Simulate {
        #[command(flatten)]
        common: Common,
    },
    /// Fit a model to a CSV data file.
    Fit {
        /// Observations: header `t,x<k>...`.
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Run one of the replication tables.
    Replicate {
        /// table1_set1, table1_set2, table1_set3, table2_ho, table2_dw or prony.
        #[arg(long)]
        table: TableKind,
        #[command(flatten)]
        common: Common,
    },
    /// Run the identity and oracle checks.
    Verify {
        /// Write the report as JSON here as well.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args, Default)]
struct Common {
    /// JSON experiment configuration; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    model: Option<String>,
    /// Simulation scheme: EM, LG1, LG2 or LG2_nocorr.
    #[arg(long)]
    scheme: Option<Scheme>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    reps: Option<usize>,
    /// Output path (file, or prefix for replicate).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Simulation steps per observation step.
    #[arg(long)]
    stride: Option<usize>,
    /// Observed coordinates, 0-based and comma separated (e.g. `0` or `0,2`).
    #[arg(long, value_delimiter = ',')]
    mask: Option<Vec<usize>>,
    /// nelder-mead or adam.
    #[arg(long)]
    method: Option<Method>,
    /// Maximum objective evaluations.
    #[arg(long)]
    budget: Option<usize>,
}

/// Overlays the fields of `file` onto `base`.
fn merge(base: &mut serde_json::Value, file: serde_json::Value) {
    match (base, file) {
        (serde_json::Value::Object(b), serde_json::Value::Object(f)) => {
            for (k, v) in f {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, f) => *b = f,
    }
}

impl Common {
    fn resolve(&self, base: ExperimentConfig) -> Result<ExperimentConfig> {
        let mut cfg = base;
        if let Some(path) = &self.config {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let file: serde_json::Value =
                serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
            let mut value = serde_json::to_value(&cfg)?;
            merge(&mut value, file);
            cfg = serde_json::from_value(value)
                .with_context(|| format!("invalid configuration in {}", path.display()))?;
        }
        if let Some(m) = &self.model {
            cfg.model = m.clone();
        }
        if let Some(s) = self.scheme {
            cfg.scheme = s;
        }
        if let Some(n) = self.n {
            cfg.n = n;
        }
        if let Some(s) = self.stride {
            cfg.stride = s;
            cfg.fine_delta = None;
        }
        if let Some(d) = self.delta {
            cfg.delta = d;
            cfg.fine_delta = None;
        }
        if let Some(s) = self.seed {
            cfg.seed = Some(s);
        }
        if let Some(r) = self.reps {
            cfg.replications = r;
        }
        if let Some(m) = &self.mask {
            cfg.mask = Some(m.clone());
        }
        if let Some(m) = self.method {
            let budget = cfg.optimizer.budget;
            cfg.optimizer = match m {
                Method::NelderMead => OptimConfig::default(),
                Method::Adam => OptimConfig::adam(),
            };
            cfg.optimizer.budget = budget;
        }
        if let Some(b) = self.budget {
            cfg.optimizer.budget = b;
        }
        if let Some(o) = &self.out {
            cfg.out = Some(o.display().to_string());
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(BufWriter::new(File::create(path).with_context(|| format!("cannot write {}", path.display()))?))
}

fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

#[derive(Serialize)]
struct Sidecar<'a> {
    config: &'a ExperimentConfig,
    seed: u64,
    replication: usize,
}

fn cmd_simulate(common: &Common) -> Result<()> {
    let mut cfg = common.resolve(ExperimentConfig::default())?;
    let seed = *cfg.seed.get_or_insert(0);
    let preset = cfg.preset()?;
    let out = PathBuf::from(cfg.out.clone().unwrap_or_else(|| format!("{}.csv", cfg.model)));
    for rep in 0..cfg.replications {
        let path = simulate_replication(&cfg, &preset, seed, rep)?;
        let file = if cfg.replications == 1 {
            out.clone()
        } else {
            let stem = out.with_extension("");
            with_suffix(&stem, &format!("_rep{rep}.csv"))
        };
        let mut w = create(&file)?;
        match &cfg.mask {
            Some(mask) => project_observed(&path, mask)?.write_csv(&mut w)?,
            None => write_path_csv(&path, &mut w)?,
        }
        w.flush()?;
        write_json(&with_suffix(&file, ".json"), &Sidecar { config: &cfg, seed, replication: rep })?;
        eprintln!("wrote {} ({} rows)", file.display(), path.n_states());
    }
    Ok(())
}

fn cmd_fit(data: &Path, common: &Common) -> Result<()> {
    let cfg = common.resolve(ExperimentConfig::default())?;
    let preset = cfg.preset()?;
    let file = File::open(data).with_context(|| format!("cannot read {}", data.display()))?;
    let obs = ObservationSet::<f64>::read_csv(BufReader::new(file), Some(preset.model.dims().n))
        .with_context(|| format!("in {}", data.display()))?;
    let report = fit_observations(&cfg, &obs)?;
    match &cfg.out {
        Some(o) => write_json(Path::new(o), &report)?,
        None => println!("{}", serde_json::to_string_pretty(&report)?),
    }
    Ok(())
}

fn cmd_replicate(table: TableKind, common: &Common) -> Result<()> {
    let cfg = common.resolve(table.config())?;
    if cfg.seed.is_none() {
        bail!("replicate requires --seed (or a seed in the configuration)");
    }
    let out = replicate(&cfg, Some(table))?;
    let prefix = PathBuf::from(cfg.out.clone().unwrap_or_else(|| table.name().to_string()));
    let rows_path = with_suffix(&prefix, "_rows.csv");
    let summary_path = with_suffix(&prefix, "_summary.csv");
    let mut w = create(&rows_path)?;
    out.write_rows_csv(&mut w)?;
    w.flush()?;
    let mut w = create(&summary_path)?;
    out.write_summary_csv(&mut w)?;
    w.flush()?;
    out.write_summary_csv(std::io::stdout().lock())?;
    eprintln!("wrote {} and {}", rows_path.display(), summary_path.display());
    Ok(())
}

fn cmd_verify(out: Option<&Path>) -> Result<bool> {
    let report = run_checks()?;
    print!("{report}");
    if let Some(p) = out {
        write_json(p, &report)?;
    }
    let ok = report.all_pass();
    println!("{}", if ok { "all checks passed" } else { "some checks FAILED" });
    Ok(ok)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Simulate { common } => cmd_simulate(common).map(|_| true),
        Command::Fit { data, common } => cmd_fit(data, common).map(|_| true),
        Command::Replicate { table, common } => cmd_replicate(*table, common).map(|_| true),
        Command::Verify { out } => cmd_verify(out.as_deref()),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
