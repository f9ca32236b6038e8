//! `otssl`: dataset generation, distance caches, training and grid experiments.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use otssl::harness::{
    load_table, plan_cells, prepare_data, run_cells, write_report, CellKey, ExperimentConfig,
    GridEvent, Profile,
};
use otssl::{Error, ErrorCategory};

#[derive(Parser)]
#[command(
    name = "otssl",
    version,
    about = "Semi-supervised GNSS multipath detection with optimal-transport similarities"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate (or verify) the datasets of every (C/N0, N_SUP) group.
    Generate(ConfigArgs),
    /// Build the pairwise distance cache of every group that needs one.
    Distances(ConfigArgs),
    /// Run a single grid cell.
    Train {
        #[arg(long)]
        cn0: f64,
        #[arg(long)]
        n_sup: usize,
        /// 0 runs the supervised baseline.
        #[arg(long, default_value_t = 0.0)]
        lambda: f64,
        #[arg(long)]
        sigma: Option<f64>,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Run the full grid and write the report.
    Grid(ConfigArgs),
    /// Recompute statistics and report files from finished cells.
    Report {
        /// Experiment output directory.
        #[arg(long)]
        output_dir: PathBuf,
        /// Report directory (default: `<output-dir>/report`).
        #[arg(long)]
        report_dir: Option<PathBuf>,
    },
}

#[derive(Args)]
struct ConfigArgs {
    /// JSON configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Built-in starting point: `full` (default) or `desk`.
    #[arg(long)]
    profile: Option<String>,
    /// Field overrides as `--key value` pairs, e.g. `--master-seed 7 --cn0-list 37,40`.
    #[arg(
        trailing_var_arg = true,
        allow_hyphen_values = true,
        value_name = "OVERRIDES"
    )]
    overrides: Vec<String>,
}

impl ConfigArgs {
    /// Splits the trailing flags into `(key, value)` pairs.
    fn pairs(&self) -> Result<Vec<(String, String)>, Error> {
        let mut out = Vec::new();
        let mut it = self.overrides.iter();
        while let Some(flag) = it.next() {
            let key = flag
                .strip_prefix("--")
                .ok_or_else(|| Error::Config(format!("expected a --key flag, got {flag:?}")))?;
            match key.split_once('=') {
                Some((k, v)) => out.push((k.to_string(), v.to_string())),
                None => {
                    let v = it
                        .next()
                        .ok_or_else(|| Error::Config(format!("flag --{key} needs a value")))?;
                    out.push((key.to_string(), v.clone()));
                }
            }
        }
        Ok(out)
    }

    fn resolve(&self) -> Result<ExperimentConfig, Error> {
        let mut profile = self.profile.clone();
        let mut config = self.config.clone();
        let mut overrides = Vec::new();
        // --profile and --config may also appear among the overrides
        for (k, v) in self.pairs()? {
            match k.as_str() {
                "profile" => profile = Some(v),
                "config" => config = Some(PathBuf::from(v)),
                _ => overrides.push((k, v)),
            }
        }
        let profile = match profile {
            Some(p) => p.parse()?,
            None => Profile::Full,
        };
        let mut cfg = ExperimentConfig::for_profile(profile);
        if let Some(path) = &config {
            let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
                path: path.clone(),
                source: e,
            })?;
            let patch: serde_json::Value = serde_json::from_str(&text)
                .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
            cfg = cfg.merge_json(&patch)?;
        }
        for (k, v) in overrides {
            cfg.apply_override(&k, &v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn groups(cfg: &ExperimentConfig) -> Vec<(f64, usize)> {
    cfg.cn0_list
        .iter()
        .flat_map(|&c| cfg.nsup_list.iter().map(move |&n| (c, n)))
        .collect()
}

fn progress(event: GridEvent<'_>) {
    match event {
        GridEvent::DataReady { cn0_dbhz, n_sup } => {
            eprintln!("data ready: C/N0 {cn0_dbhz} dBHz, N_SUP {n_sup}")
        }
        GridEvent::RunDone {
            cell,
            run_id,
            max_accuracy,
        } => {
            eprintln!(
                "{} run {run_id}: max accuracy {max_accuracy}",
                cell.dir_name()
            )
        }
        GridEvent::CellDone(s) => eprintln!(
            "{}: {} runs, median max accuracy {}",
            s.key.dir_name(),
            s.runs,
            s.median_max_accuracy
        ),
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Generate(args) => {
            let cfg = args.resolve()?;
            for (cn0, n_sup) in groups(&cfg) {
                prepare_data(&cfg, cn0, n_sup, None, false)?;
                progress(GridEvent::DataReady {
                    cn0_dbhz: cn0,
                    n_sup,
                });
            }
            println!("{}", cfg.data_root().display());
        }
        Command::Distances(args) => {
            let cfg = args.resolve()?;
            for (cn0, n_sup) in groups(&cfg) {
                let need = n_sup < cfg.n_train;
                prepare_data(&cfg, cn0, n_sup, None, need)?;
                progress(GridEvent::DataReady {
                    cn0_dbhz: cn0,
                    n_sup,
                });
            }
            println!("{}", cfg.data_root().display());
        }
        Command::Train {
            cn0,
            n_sup,
            lambda,
            sigma,
            config,
        } => {
            let cfg = config.resolve()?;
            let key = if lambda == 0.0 {
                CellKey::baseline(cn0, n_sup)
            } else {
                let sigma = sigma
                    .ok_or_else(|| Error::Config("--sigma is required when lambda > 0".into()))?;
                if !(lambda > 0.0 && lambda.is_finite()) {
                    return Err(Error::Config(format!(
                        "lambda must be finite and >= 0, got {lambda}"
                    )));
                }
                CellKey {
                    cn0_dbhz: cn0,
                    n_sup,
                    lambda,
                    sigma: Some(sigma),
                }
            };
            if n_sup == 0 || n_sup > cfg.n_train {
                return Err(Error::Config(format!(
                    "n_sup must lie in 1..={}",
                    cfg.n_train
                )));
            }
            let stats = run_cells(&cfg, &[key], &progress)?;
            println!(
                "{}",
                serde_json::to_string_pretty(&stats[0]).expect("serializable")
            );
        }
        Command::Grid(args) => {
            let cfg = args.resolve()?;
            let table = run_cells(&cfg, &plan_cells(&cfg), &progress)?;
            let report = write_report(&table, &cfg.output_dir.join("report"))?;
            println!(
                "{}",
                serde_json::to_string_pretty(&report.best_pairs).expect("serializable")
            );
        }
        Command::Report {
            output_dir,
            report_dir,
        } => {
            let table = load_table(&output_dir)?;
            let dir = report_dir.unwrap_or_else(|| output_dir.join("report"));
            let report = write_report(&table, &dir)?;
            println!(
                "{}",
                serde_json::to_string_pretty(&report.best_pairs).expect("serializable")
            );
        }
    }
    Ok(())
}

fn exit_code(e: &Error) -> u8 {
    match e.category() {
        ErrorCategory::Configuration => 1,
        ErrorCategory::Io => 2,
        ErrorCategory::Numerical => 3,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
