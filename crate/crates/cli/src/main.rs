use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

use spsnn::checkpoint::{load_network, save_network};
use spsnn::config::{RunConfig, SparsityMode, SparsityPolicy};
use spsnn::datasets::read_spike_file;
use spsnn::gradcheck::{gradcheck, small_network, small_sample, GradCheckOptions};
use spsnn::network::Dimensionality;
use spsnn::trainer::{aggregate, evaluate, load_data, static_prune, train, MetricsRow, RunResult, METRICS_HEADER};
use spsnn::Error;

#[derive(Parser)]
#[command(name = "spsnn", version, about = "Train and evaluate spatial spiking networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one model; writes metrics.csv, model.spnn and config.toml.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the seed in the config.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Accuracy of a saved model, optionally after one-shot pruning.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Supplies the loss and the Yin-Yang test set.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Spike file to evaluate on instead of the configured test set.
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long, default_value_t = 0.0)]
        sp: f64,
    },
    /// Finite-difference check of the gradient engine on a small random network.
    Gradcheck {
        /// Neuron model and dimensionality are read from `[network]`.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 1e-2)]
        tolerance: f64,
        #[arg(long, default_value_t = 1e-4)]
        dt: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Cross product of axis values and seeds; writes per-run metrics and sweep.csv.
    Sweep {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum)]
        axis: Axis,
        /// Comma-separated; dimensions accept `inf`.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
        /// Number of seeds, counted up from `--seed`.
        #[arg(long, default_value_t = 5)]
        seeds: u64,
        #[arg(long)]
        seed: Option<u64>,
        /// Runs in flight at once.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Axis {
    Dimension,
    Hidden,
    Sparsity,
}

/// Configuration problems exit with 2, everything else with 1.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

impl From<anyhow::Error> for Failure {
    fn from(error: anyhow::Error) -> Self {
        let code = match error.downcast_ref::<Error>() {
            Some(Error::InvalidConfig(_)) => 2,
            _ => 1,
        };
        Failure { code, error }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        anyhow::Error::from(e).into()
    }
}

fn load_config(path: Option<&Path>) -> Result<RunConfig, Failure> {
    match path {
        Some(p) => Ok(RunConfig::load(p)?),
        None => Ok(RunConfig::default()),
    }
}

fn metrics_writer(path: &Path) -> anyhow::Result<BufWriter<File>> {
    let mut w = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    writeln!(w, "{METRICS_HEADER}")?;
    Ok(w)
}

fn write_row(w: &mut BufWriter<File>, row: &MetricsRow) {
    // A failed metrics write must not abort a long run; the error resurfaces on flush.
    let _ = writeln!(w, "{}", row.csv());
}

fn cmd_train(config: Option<&Path>, out: &Path, seed: Option<u64>) -> Result<(), Failure> {
    let mut cfg = load_config(config)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    fs::write(out.join("config.toml"), cfg.to_toml()).context("writing config.toml")?;
    let (train_set, test_set) = load_data(&cfg)?;
    let mut w = metrics_writer(&out.join("metrics.csv"))?;
    let result = train(&cfg, &train_set, &test_set, cfg.seed, &mut |row| {
        write_row(&mut w, row);
        eprintln!("epoch {:>4} {:<11} loss {:.4} acc {:.4}", row.epoch, row.split, row.loss, row.accuracy);
    })?;
    w.flush().context("writing metrics.csv")?;
    save_network(&out.join("model.spnn"), &result.network)?;
    println!("test accuracy {:.4}", result.test.accuracy);
    if let Some(s) = result.static_test {
        println!("test accuracy after pruning {:.4}", s.accuracy);
    }
    Ok(())
}

fn cmd_eval(checkpoint: &Path, config: Option<&Path>, dataset: Option<&Path>, sp: f64) -> Result<(), Failure> {
    if !(0.0..=1.0).contains(&sp) {
        return Err(Error::InvalidConfig(format!("sp must lie in [0, 1], got {sp}")).into());
    }
    let mut cfg = load_config(config)?;
    let net = load_network(checkpoint)?;
    cfg.network = net.config.clone();
    let samples = match dataset {
        Some(p) => read_spike_file(p)?.samples,
        None => load_data(&cfg)?.1,
    };
    let net = static_prune(&net, sp);
    let e = evaluate(&net, &samples, &cfg.objective())?;
    let count = net.param_count();
    println!("accuracy {}", e.accuracy);
    println!("loss {:.6}", e.loss);
    println!("samples {} silent {}", samples.len(), e.silent);
    println!(
        "parameters {} (weights {}, positions {}, tortuosity {}, delays {}, readout {})",
        count.total(),
        count.weights,
        count.positions,
        count.tortuosity,
        count.delays,
        count.readout
    );
    println!("nonzero parameters {}", net.effective_param_count());
    println!("sparsity {:.6}", net.sparsity());
    Ok(())
}

fn cmd_gradcheck(config: Option<&Path>, tolerance: f64, dt: f64, seed: u64) -> Result<bool, Failure> {
    let cfg = load_config(config)?;
    let net = small_network(cfg.network.model, cfg.network.dims, dt, seed)?;
    let objective = spsnn::objectives::Objective::Ttfs(cfg.loss);
    let report = gradcheck(&net, &[small_sample()], &objective, &GradCheckOptions::default())?;
    println!("loss engine {:.9} reference {:.9}", report.loss_engine, report.loss_reference);
    for b in &report.blocks {
        println!(
            "{:<10} checked {:>3} flagged {:>3} max_rel_err {:.3e}",
            b.name, b.checked, b.flagged, b.max_rel_err
        );
    }
    let ok = report.passes(tolerance);
    println!("{} at tolerance {tolerance:e}", if ok { "PASS" } else { "FAIL" });
    Ok(ok)
}

struct RunSpec {
    value: String,
    seed: u64,
    cfg: RunConfig,
}

fn sweep_config(base: &RunConfig, axis: Axis, value: &str) -> Result<RunConfig, Failure> {
    let mut cfg = base.clone();
    let bad = |what: &str| Failure::from(Error::InvalidConfig(format!("bad {what} value `{value}`")));
    match axis {
        Axis::Dimension => cfg.network.dims = value.parse::<Dimensionality>().map_err(|_| bad("dimension"))?,
        Axis::Hidden => cfg.network.n_hidden = value.parse().map_err(|_| bad("hidden"))?,
        Axis::Sparsity => {
            let sp: f64 = value.parse().map_err(|_| bad("sparsity"))?;
            cfg.sparsity = SparsityPolicy {
                mode: SparsityMode::Dynamic,
                sp,
            };
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn cmd_sweep(
    config: Option<&Path>,
    out: &Path,
    axis: Axis,
    values: &[String],
    seeds: u64,
    seed: Option<u64>,
    jobs: usize,
) -> Result<(), Failure> {
    let base = load_config(config)?;
    let first = seed.unwrap_or(base.seed);
    let mut specs = Vec::new();
    for v in values {
        let cfg = sweep_config(&base, axis, v)?;
        for s in first..first + seeds {
            specs.push(RunSpec {
                value: v.clone(),
                seed: s,
                cfg: RunConfig { seed: s, ..cfg.clone() },
            });
        }
    }
    // Static pruning reuses one dense model per seed.
    if axis == Axis::Sparsity {
        for s in first..first + seeds {
            let mut cfg = base.clone();
            cfg.seed = s;
            cfg.sparsity = SparsityPolicy::default();
            specs.push(RunSpec {
                value: "dense".into(),
                seed: s,
                cfg,
            });
        }
    }
    let runs_dir = out.join("runs");
    fs::create_dir_all(&runs_dir).with_context(|| format!("creating {}", runs_dir.display()))?;
    fs::write(out.join("config.toml"), base.to_toml()).context("writing config.toml")?;
    let (train_set, test_set) = load_data(&base)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.clamp(1, rayon::current_num_threads()))
        .build()
        .context("building thread pool")?;
    let results: Vec<anyhow::Result<RunResult>> = pool.install(|| {
        specs
            .par_iter()
            .map(|spec| {
                let path = runs_dir.join(format!("{}_{}_seed{}.csv", axis_name(axis), spec.value, spec.seed));
                let mut w = metrics_writer(&path)?;
                let r = train(&spec.cfg, &train_set, &test_set, spec.seed, &mut |row| write_row(&mut w, row))?;
                w.flush()?;
                eprintln!("{} {} seed {}: {:.4}", axis_name(axis), spec.value, spec.seed, r.test.accuracy);
                Ok(r)
            })
            .collect()
    });
    let mut runs = Vec::with_capacity(results.len());
    for r in results {
        runs.push(r.map_err(Failure::from)?);
    }

    let mut w = BufWriter::new(File::create(out.join("sweep.csv")).context("creating sweep.csv")?);
    writeln!(w, "axis,value,variant,runs,median_accuracy,q1_accuracy,q3_accuracy").context("writing sweep.csv")?;
    let mut emit = |value: &str, variant: &str, accs: &[f64]| -> anyhow::Result<()> {
        let s = aggregate(accs);
        writeln!(w, "{},{value},{variant},{},{},{},{}", axis_name(axis), s.n, s.median, s.q1, s.q3)?;
        println!("{} {value} {variant}: median {:.4} [{:.4}, {:.4}]", axis_name(axis), s.median, s.q1, s.q3);
        Ok(())
    };
    let variant = match (axis, base.sparsity.mode) {
        (Axis::Sparsity, _) | (_, SparsityMode::Dynamic) => "dyn",
        (_, SparsityMode::None) => "dense",
        (_, SparsityMode::Static) => "stat",
    };
    let final_accuracy = |r: &RunResult| r.static_test.unwrap_or(r.test).accuracy;
    let group = |value: &str| -> Vec<&RunResult> {
        specs
            .iter()
            .zip(&runs)
            .filter(|(s, _)| s.value == value)
            .map(|(_, r)| r)
            .collect()
    };
    for v in values {
        let accs: Vec<f64> = group(v).into_iter().map(final_accuracy).collect();
        emit(v, variant, &accs)?;
    }
    if axis == Axis::Sparsity {
        let dense = group("dense");
        emit("0", "dense", &dense.iter().map(|r| r.test.accuracy).collect::<Vec<_>>())?;
        let objective = base.objective();
        for v in values {
            let sp: f64 = v.parse().expect("validated above");
            let accs: Vec<f64> = dense
                .iter()
                .map(|r| Ok(evaluate(&static_prune(&r.network, sp), &test_set, &objective)?.accuracy))
                .collect::<Result<_, Error>>()?;
            emit(v, "stat", &accs)?;
        }
    }
    w.flush().context("writing sweep.csv")?;
    Ok(())
}

fn axis_name(axis: Axis) -> &'static str {
    match axis {
        Axis::Dimension => "dimension",
        Axis::Hidden => "hidden",
        Axis::Sparsity => "sparsity",
    }
}

fn configure_threads() -> anyhow::Result<()> {
    if let Ok(v) = std::env::var("SPSNN_THREADS") {
        let n: usize = v.parse().with_context(|| format!("SPSNN_THREADS must be a positive integer, got `{v}`"))?;
        if n == 0 {
            bail!("SPSNN_THREADS must be a positive integer, got `{v}`");
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<bool, Failure> {
    configure_threads()?;
    match cli.command {
        Command::Train { config, out, seed } => cmd_train(config.as_deref(), &out, seed).map(|_| true),
        Command::Eval {
            checkpoint,
            config,
            dataset,
            sp,
        } => cmd_eval(&checkpoint, config.as_deref(), dataset.as_deref(), sp).map(|_| true),
        Command::Gradcheck {
            config,
            tolerance,
            dt,
            seed,
        } => cmd_gradcheck(config.as_deref(), tolerance, dt, seed),
        Command::Sweep {
            config,
            out,
            axis,
            values,
            seeds,
            seed,
            jobs,
        } => cmd_sweep(config.as_deref(), &out, axis, &values, seeds, seed, jobs).map(|_| true),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}
