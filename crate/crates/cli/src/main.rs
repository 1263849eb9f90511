use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use ghostcorr::run::{self, CONFIG};
use ghostcorr::RunConfig;

#[derive(Parser)]
#[command(
    name = "ghostcorr",
    version,
    about = "Ghost-imaging simulator for chaotically seeded parametric downconversion"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate shots and dark frames into a run directory.
    Simulate {
        #[command(flatten)]
        run: RunArgs,
        /// Also write the first N Reference frames as PGM images.
        #[arg(long, default_value_t = 0, value_name = "N")]
        export_frames: u64,
    },
    /// Correlate a simulated run and write maps, fits and a report.
    Analyze {
        /// Run directory produced by `simulate`.
        #[arg(long, value_name = "DIR")]
        run: PathBuf,
        /// Configuration to check the run against; defaults to the copy
        /// stored in the run directory.
        #[arg(long, value_name = "PATH")]
        config: Option<PathBuf>,
        /// Where to write the results; defaults to the run directory.
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 0, value_name = "N")]
        workers: usize,
    },
    /// Photon-number state and separability table for one mode pair.
    FockCheck {
        #[arg(long, value_delimiter = ',', default_values_t = [1.0, 10.0, 100.0])]
        n_th: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_values_t = [0.1, 0.5, 1.0])]
        n_pdc: Vec<f64>,
        #[arg(long, default_value_t = 60)]
        cutoff: usize,
        #[arg(long, value_name = "DIR", default_value = "fock-check")]
        out: PathBuf,
    },
    /// Generate seed-speckle realizations and check their statistics.
    SpeckleCheck {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, default_value_t = 16, value_name = "N")]
        realizations: u64,
    },
}

#[derive(Args)]
struct RunArgs {
    /// TOML run configuration; the laboratory defaults when absent.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    #[arg(long, value_name = "U64")]
    seed: Option<u64>,
    #[arg(long, value_name = "N")]
    shots: Option<u64>,
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Worker threads; 0 uses every core.
    #[arg(long, default_value_t = 0, value_name = "N")]
    workers: usize,
}

impl RunArgs {
    fn config(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => {
                RunConfig::load(path).with_context(|| format!("loading {}", path.display()))?
            }
            None => RunConfig::laboratory(),
        };
        if let Some(seed) = self.seed {
            cfg.run.master_seed = seed;
        }
        if let Some(shots) = self.shots {
            cfg.run.shots = shots;
        }
        if let Some(out) = &self.out {
            cfg.run.output_dir = out.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn simulate(args: &RunArgs, export_frames: u64) -> Result<()> {
    let cfg = args.config()?;
    let s = run::simulate(&cfg, args.workers, export_frames)?;
    println!(
        "wrote {} shots and {} dark frames to {}",
        s.shots,
        s.dark_frames,
        s.out_dir.display()
    );
    println!("config_hash = {}", s.config_hash);
    println!("gain_counts_per_au = {}", s.gain_counts_per_au);
    println!("expected_bucket_modes = {:.3}", s.expected_bucket_modes);
    Ok(())
}

fn analyze(dir: &Path, config: Option<&Path>, out: Option<&Path>, workers: usize) -> Result<()> {
    let config_path = config.map_or_else(|| dir.join(CONFIG), Path::to_path_buf);
    let cfg = RunConfig::load(&config_path)
        .with_context(|| format!("loading {}", config_path.display()))?;
    let analysis = run::analyze(dir, &cfg, workers)?;
    let out = out.unwrap_or(dir);
    analysis.write(out)?;
    print!("{}", analysis.report().render());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Simulate { run, export_frames } => simulate(run, *export_frames),
        Command::Analyze {
            run,
            config,
            out,
            workers,
        } => analyze(run, config.as_deref(), out.as_deref(), *workers),
        Command::FockCheck {
            n_th,
            n_pdc,
            cutoff,
            out,
        } => run::fock_check(n_th, n_pdc, *cutoff, out)
            .map(|rows| {
                for r in &rows {
                    println!(
                        "n_th = {:<8} n_pdc = {:<5} nu = {:.6}  {}{}",
                        r.n_th,
                        r.n_pdc,
                        r.report.symplectic_eigenvalue,
                        r.report.verdict,
                        r.report
                            .flag
                            .as_deref()
                            .map(|f| format!("  ({f})"))
                            .unwrap_or_default()
                    );
                }
            })
            .map_err(Into::into),
        Command::SpeckleCheck {
            run: args,
            realizations,
        } => args
            .config()
            .and_then(|cfg| {
                let out = args
                    .out
                    .clone()
                    .unwrap_or_else(|| PathBuf::from("speckle-check"));
                Ok(run::speckle_check(&cfg, *realizations, &out)?)
            })
            .map(|check| print!("{}", check.report().render())),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
