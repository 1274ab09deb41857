//! Batch command-line front-end. Every subcommand reads an optional flat
//! `key=value` config file first and then applies command-line flags on top,
//! so flags always win. Failures print a single `error: <code>: <message>`
//! line on stderr and exit nonzero.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use faspca::error::{Error, Result};
use faspca::io;
use faspca::pipeline::{self, PipelineConfig};

#[derive(Parser)]
#[command(
    name = "faspca",
    version,
    about = "Functional Moran statistics and areal spatial PCA for curve panels"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Smooth a raw observation panel into basis coefficients and curves.
    Smooth(PipelineOpts),
    /// Trace and pointwise Moran statistics with a permutation test.
    Moran(PipelineOpts),
    /// Spatially informed functional PCA, or the classical baseline.
    Spca(PipelineOpts),
    /// Truncated curve reconstruction from the fitted components.
    Reconstruct(PipelineOpts),
    /// Replicated simulation experiment comparing both methods.
    Simulate(SimulateOpts),
}

#[derive(Args)]
struct PipelineOpts {
    /// Flat key=value config file, applied before any flag.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Observation panel CSV with unit,variable,x,value columns.
    #[arg(long, value_name = "PATH")]
    panel: Option<PathBuf>,
    /// Coordinate CSV with unit,s1,s2 columns.
    #[arg(long, value_name = "PATH")]
    coords: Option<PathBuf>,
    /// Output directory for result tables.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Spatial weights: knn:<k>, rook, queen, file:<path> or edges:<path>.
    #[arg(long, value_name = "SPEC")]
    weights: Option<String>,
    /// Seed for the permutation tests.
    #[arg(long, value_name = "INT")]
    seed: Option<u64>,
    /// Number of permutations.
    #[arg(long, value_name = "INT")]
    nperm: Option<usize>,
    /// Log-transform the panel before smoothing.
    #[arg(long)]
    log_transform: bool,
    /// Positive components to keep.
    #[arg(long, value_name = "INT")]
    npos: Option<usize>,
    /// Negative components to keep.
    #[arg(long, value_name = "INT")]
    nneg: Option<usize>,
    /// Classical functional PCA instead of the spatial method.
    #[arg(long)]
    fpca: bool,
    /// Components used for reconstruction; defaults to all kept.
    #[arg(long, value_name = "INT")]
    k: Option<usize>,
}

impl PipelineOpts {
    fn build(&self) -> Result<PipelineConfig> {
        let mut config = match &self.config {
            Some(path) => PipelineConfig::from_kv_file(path)?,
            None => PipelineConfig::new("panel.csv", "out"),
        };
        if let Some(path) = &self.panel {
            config.panel = path.clone();
        }
        if let Some(path) = &self.coords {
            config.coords = Some(path.clone());
        }
        if let Some(dir) = &self.out {
            config.out_dir = dir.clone();
        }
        if let Some(spec) = &self.weights {
            config.weights = pipeline::parse_weights_source(spec)?;
        }
        if let Some(seed) = self.seed {
            config.seed = seed;
        }
        if let Some(n) = self.nperm {
            config.n_permutations = n;
        }
        if self.log_transform {
            config.log_transform = true;
        }
        if let Some(n) = self.npos {
            config.n_pos = n;
        }
        if let Some(n) = self.nneg {
            config.n_neg = n;
        }
        if self.fpca {
            config.fpca = true;
        }
        if let Some(k) = self.k {
            config.reconstruct_k = Some(k);
        }
        Ok(config)
    }
}

#[derive(Args)]
struct SimulateOpts {
    /// Flat key=value simulation config file.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Output directory for the replicate and summary tables.
    #[arg(long, value_name = "DIR", default_value = "out")]
    out: PathBuf,
    /// Spatial weights: knn:<k>, rook, queen, file:<path> or edges:<path>.
    #[arg(long, value_name = "SPEC")]
    weights: Option<String>,
    /// Seed for data generation and permutation tests.
    #[arg(long, value_name = "INT")]
    seed: Option<u64>,
    /// Number of permutations per test.
    #[arg(long, value_name = "INT")]
    nperm: Option<usize>,
    /// Extra key=value override, repeatable; applied after the config file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl SimulateOpts {
    fn build(&self) -> Result<faspca::SimConfig> {
        let mut pairs = match &self.config {
            Some(path) => io::read_kv(path)?,
            None => Vec::new(),
        };
        for item in &self.set {
            let (key, value) = item.split_once('=').ok_or_else(|| Error::BadConfig {
                key: "set".into(),
                message: format!("expected key=value, got {item:?}"),
            })?;
            pairs.push((key.trim().to_string(), value.trim().to_string()));
        }
        if let Some(spec) = &self.weights {
            pairs.push(("weights".into(), spec.clone()));
        }
        if let Some(seed) = self.seed {
            pairs.push(("seed".into(), seed.to_string()));
        }
        if let Some(n) = self.nperm {
            pairs.push(("n_permutations".into(), n.to_string()));
        }
        pipeline::sim_config_from_kv(&pairs)
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Smooth(opts) => {
            let config = opts.build()?;
            let out = pipeline::cmd_smooth(&config)?;
            if let Some(constant) = out.log_constant {
                println!("log transform with constant {constant}");
            }
            println!(
                "wrote {}, {}, {}",
                out.basis_file.display(),
                out.coef_file.display(),
                out.curves_file.display()
            );
        }
        Command::Moran(opts) => {
            let config = opts.build()?;
            let out = pipeline::cmd_moran(&config)?;
            println!(
                "trace Moran {:.6} (p = {:.4}{}, {} permutations)",
                out.trace.statistic,
                out.test.p_value,
                fmt_stars(pipeline::significance_stars(out.test.p_value)),
                out.test.n_permutations
            );
            println!("pooled Moran {:.6}", out.pooled);
            println!("{}", pipeline::stars_legend());
            match &out.bivariate_file {
                Some(path) => println!(
                    "wrote {}, {}, {}",
                    out.curve_file.display(),
                    out.test_file.display(),
                    path.display()
                ),
                None => println!(
                    "wrote {}, {}",
                    out.curve_file.display(),
                    out.test_file.display()
                ),
            }
        }
        Command::Spca(opts) => {
            let config = opts.build()?;
            let out = pipeline::cmd_spca(&config)?;
            for row in &out.eigen_rows {
                println!(
                    "{}: eigenvalue {:.6}, var explained {:.2}%, score Moran {:.4}",
                    row.component,
                    row.eigenvalue,
                    row.var_explained,
                    row.score_moran.unwrap_or(f64::NAN)
                );
            }
            println!("{}", pipeline::stars_legend());
            println!(
                "wrote {}, {}, {}, {}",
                out.eigen_file.display(),
                out.component_tests_file.display(),
                out.eigenfunctions_file.display(),
                out.scores_file.display()
            );
        }
        Command::Reconstruct(opts) => {
            let config = opts.build()?;
            let out = pipeline::cmd_reconstruct(&config)?;
            println!(
                "reconstruction with {} components: relative error {:.3e}",
                out.k, out.relative_error
            );
            println!("wrote {}", out.reconstruction_file.display());
        }
        Command::Simulate(opts) => {
            let config = opts.build()?;
            let out = pipeline::cmd_simulate(&config, &opts.out)?;
            println!(
                "{} result rows over {} replicates",
                out.n_rows, config.n_replicates
            );
            println!(
                "wrote {}, {}",
                out.experiment_file.display(),
                out.summary_file.display()
            );
        }
    }
    Ok(())
}

fn fmt_stars(stars: &str) -> String {
    if stars.is_empty() {
        String::new()
    } else {
        format!(" {stars}")
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {}: {err}", err.code());
            ExitCode::FAILURE
        }
    }
}
