//! Grid execution. Layout under `output_dir`:
//!
//! - `config.json`: the effective experiment configuration.
//! - `cells/<cell>/cell.json`: cell key and configuration hash (checked on resume).
//! - `cells/<cell>/runs/run_NNNN.csv` and `run_NNNN.json`: one file pair per run.
//! - `cells/<cell>/epochs.csv`: every run's rows concatenated in run order.
//! - `cells/<cell>/summary.json`: the cell statistics.
//!
//! Datasets and distance caches go to `data_dir` (default `<output_dir>/data`).

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::stats::{median, quartiles, Quartiles};
use crate::ot::{
    build_cost_matrix, build_distance_cache, DistanceCache, DistanceCacheMeta, SOLVER_VERSION,
};
use crate::ssl::{train_run, RunResult, SSLConfig};
use crate::synth::{generate_dataset, Dataset};
use crate::{io, Error, Result};

const GRID_VERSION: &str = "otssl-grid/1";
pub const RUN_CSV_HEADER: &str = "run_id,epoch,val_accuracy,train_loss";

/// One grid cell; `lambda = 0` with `sigma = None` is the supervised baseline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellKey {
    pub cn0_dbhz: f64,
    pub n_sup: usize,
    pub lambda: f64,
    pub sigma: Option<f64>,
}

impl CellKey {
    pub fn baseline(cn0_dbhz: f64, n_sup: usize) -> Self {
        Self {
            cn0_dbhz,
            n_sup,
            lambda: 0.0,
            sigma: None,
        }
    }

    pub fn is_baseline(&self) -> bool {
        self.lambda == 0.0
    }

    pub fn dir_name(&self) -> String {
        let head = format!("cn0-{}_nsup-{}", self.cn0_dbhz, self.n_sup);
        match self.sigma {
            Some(s) if !self.is_baseline() => format!("{head}_lambda-{}_sigma-{s}", self.lambda),
            _ => format!("{head}_baseline"),
        }
    }

    /// Ordering used for tables: C/N0, N_SUP, baseline first, then λ and σ.
    pub fn sort_key(&self) -> impl Ord {
        (
            OrdF64(self.cn0_dbhz),
            self.n_sup,
            OrdF64(self.lambda),
            OrdF64(self.sigma.unwrap_or(f64::NEG_INFINITY)),
        )
    }
}

struct OrdF64(f64);

impl PartialEq for OrdF64 {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other).is_eq()
    }
}

impl Eq for OrdF64 {}

impl PartialOrd for OrdF64 {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for OrdF64 {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0)
    }
}

/// Every cell of the configured grid: per (C/N0, N_SUP), the baseline followed by
/// each (λ, σ) pair.
pub fn plan_cells(cfg: &ExperimentConfig) -> Vec<CellKey> {
    let mut cells = Vec::new();
    for &cn0 in &cfg.cn0_list {
        for &n_sup in &cfg.nsup_list {
            cells.push(CellKey::baseline(cn0, n_sup));
            for &lambda in &cfg.lambda_grid {
                for &sigma in &cfg.sigma_grid {
                    cells.push(CellKey {
                        cn0_dbhz: cn0,
                        n_sup,
                        lambda,
                        sigma: Some(sigma),
                    });
                }
            }
        }
    }
    cells
}

pub fn run_seed(master_seed: u64, key: &CellKey, run_index: usize) -> u64 {
    let sigma = match key.sigma {
        Some(s) if !key.is_baseline() => s.to_le_bytes(),
        _ => *b"baseline",
    };
    io::hash_u64(&[
        b"run",
        &master_seed.to_le_bytes(),
        &key.cn0_dbhz.to_le_bytes(),
        &(key.n_sup as u64).to_le_bytes(),
        &key.lambda.to_le_bytes(),
        &sigma,
        &(run_index as u64).to_le_bytes(),
    ])
}

/// Seed of the dataset for a (C/N0, N_SUP) group, or of one run's private draw.
pub fn dataset_seed(
    master_seed: u64,
    cn0_dbhz: f64,
    n_sup: usize,
    run_index: Option<usize>,
) -> u64 {
    let run = run_index.map_or(u64::MAX, |r| r as u64);
    io::hash_u64(&[
        b"dataset",
        &master_seed.to_le_bytes(),
        &cn0_dbhz.to_le_bytes(),
        &(n_sup as u64).to_le_bytes(),
        &run.to_le_bytes(),
    ])
}

#[derive(Serialize)]
struct CellHashInput<'a> {
    version: &'a str,
    key: &'a CellKey,
    master_seed: u64,
    epochs: usize,
    batch_size: usize,
    n_train: usize,
    n_val: usize,
    shared_dataset: bool,
    standardize: bool,
    generator: &'a crate::synth::GeneratorConfig,
    adam: &'a crate::nn::AdamConfig,
}

/// Hash of everything that determines a cell's per-run results. The run count is
/// excluded so a cell can be extended with more runs.
pub fn cell_config_hash(cfg: &ExperimentConfig, key: &CellKey) -> Result<String> {
    let input = CellHashInput {
        version: GRID_VERSION,
        key,
        master_seed: cfg.master_seed()?,
        epochs: cfg.epochs,
        batch_size: cfg.batch_size,
        n_train: cfg.n_train,
        n_val: cfg.n_val,
        shared_dataset: cfg.shared_dataset,
        standardize: cfg.standardize,
        generator: &cfg.generator,
        adam: &cfg.adam,
    };
    Ok(io::sha256_hex(
        &serde_json::to_vec(&input).expect("hash input serializes"),
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CellManifest {
    key: CellKey,
    config_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: usize,
    pub cell: CellKey,
    #[serde(flatten)]
    pub result: RunResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellStatistics {
    pub key: CellKey,
    pub runs: usize,
    pub median_max_accuracy: f64,
    /// `None` when the cell has fewer than four runs.
    pub quartiles: Option<Quartiles>,
    pub max_accuracies: Vec<f64>,
}

impl CellStatistics {
    pub fn from_maxima(key: CellKey, maxima: Vec<f64>) -> Result<Self> {
        if let Some(a) = maxima.iter().find(|a| !(0.0..=1.0).contains(*a)) {
            return Err(Error::Statistics(format!("accuracy {a} outside [0, 1]")));
        }
        Ok(Self {
            key,
            runs: maxima.len(),
            median_max_accuracy: median(&maxima)?,
            quartiles: if maxima.len() >= 4 {
                Some(quartiles(&maxima)?)
            } else {
                None
            },
            max_accuracies: maxima,
        })
    }
}

pub struct PreparedData {
    pub train: Dataset,
    pub val: Dataset,
    pub cache: Option<DistanceCache>,
}

pub fn cell_dir(cfg: &ExperimentConfig, key: &CellKey) -> PathBuf {
    cfg.output_dir.join("cells").join(key.dir_name())
}

fn run_paths(cell: &Path, run: usize) -> (PathBuf, PathBuf) {
    let runs = cell.join("runs");
    (
        runs.join(format!("run_{run:04}.csv")),
        runs.join(format!("run_{run:04}.json")),
    )
}

fn data_group_dir(
    cfg: &ExperimentConfig,
    cn0: f64,
    n_sup: usize,
    run_index: Option<usize>,
) -> PathBuf {
    let dir = cfg.data_root().join(format!(
        "cn0-{cn0}_nsup-{n_sup}_ntrain-{}_nval-{}",
        cfg.n_train, cfg.n_val
    ));
    match run_index {
        Some(r) => dir.join(format!("run_{r:04}")),
        None => dir,
    }
}

fn check_dataset(
    path: &Path,
    d: &Dataset,
    cfg: &ExperimentConfig,
    seed: u64,
    n: usize,
    n_sup: usize,
    cn0: f64,
) -> Result<()> {
    if d.seed != seed
        || d.generator != cfg.generator
        || d.len() != n
        || d.n_sup != n_sup
        || d.cn0_dbhz != cn0
    {
        return Err(Error::ResumeMismatch {
            path: path.to_path_buf(),
            reason: "stored dataset was generated with different settings".into(),
        });
    }
    Ok(())
}

/// Loads the datasets (and, if asked, the distance cache) of a (C/N0, N_SUP)
/// group from the data directory, generating and saving whatever is missing.
pub fn prepare_data(
    cfg: &ExperimentConfig,
    cn0: f64,
    n_sup: usize,
    run_index: Option<usize>,
    need_cache: bool,
) -> Result<PreparedData> {
    let master = cfg.master_seed()?;
    let seed = dataset_seed(master, cn0, n_sup, run_index);
    let dir = data_group_dir(cfg, cn0, n_sup, run_index);
    let (train_dir, val_dir) = (dir.join("train"), dir.join("val"));
    let (train, val) = if train_dir.join("meta.json").exists() && val_dir.join("meta.json").exists()
    {
        let train = Dataset::load(&train_dir)?;
        let val = Dataset::load(&val_dir)?;
        check_dataset(&train_dir, &train, cfg, seed, cfg.n_train, n_sup, cn0)?;
        check_dataset(&val_dir, &val, cfg, seed, cfg.n_val, cfg.n_val, cn0)?;
        (train, val)
    } else {
        let (train, val) =
            generate_dataset(&cfg.generator, cfg.n_train, n_sup, cfg.n_val, cn0, seed)?;
        train.save(&train_dir)?;
        val.save(&val_dir)?;
        (train, val)
    };
    let cache = if need_cache {
        let cache_dir = dir.join("distances");
        let hash = train.content_hash();
        if cache_dir.join("meta.json").exists() {
            let (cache, meta) = DistanceCache::load(&cache_dir)?;
            if meta.dataset_hash != hash || meta.grid != cfg.generator.grid {
                return Err(Error::ResumeMismatch {
                    path: cache_dir,
                    reason: "distance cache belongs to a different dataset".into(),
                });
            }
            Some(cache)
        } else {
            let cache = build_distance_cache(&train, &build_cost_matrix(&cfg.generator.grid)?)?;
            io::create_dir_all(&cache_dir)?;
            cache.save(
                &cache_dir,
                &DistanceCacheMeta {
                    dataset_hash: hash,
                    grid: cfg.generator.grid,
                    solver_version: SOLVER_VERSION.to_string(),
                    n_samples: train.len(),
                },
            )?;
            Some(cache)
        }
    } else {
        None
    };
    Ok(PreparedData { train, val, cache })
}

/// Whether a cell can ever form a pair that needs a distance.
fn needs_cache(cfg: &ExperimentConfig, key: &CellKey) -> bool {
    !key.is_baseline() && key.n_sup < cfg.n_train
}

pub fn ssl_config(cfg: &ExperimentConfig, key: &CellKey, run_index: usize) -> Result<SSLConfig> {
    Ok(SSLConfig {
        lambda: key.lambda,
        sigma: key.sigma.unwrap_or(1.0),
        batch_size: cfg.batch_size,
        epochs: cfg.epochs,
        seed: run_seed(cfg.master_seed()?, key, run_index),
        standardize: cfg.standardize,
        adam: cfg.adam,
    })
}

pub fn run_csv(run_id: usize, result: &RunResult) -> String {
    let mut s = String::new();
    writeln!(s, "{RUN_CSV_HEADER}").unwrap();
    for (e, (acc, loss)) in result
        .val_accuracy
        .iter()
        .zip(&result.train_loss)
        .enumerate()
    {
        writeln!(s, "{run_id},{},{acc},{loss}", e + 1).unwrap();
    }
    s
}

#[derive(Debug)]
pub enum GridEvent<'a> {
    DataReady {
        cn0_dbhz: f64,
        n_sup: usize,
    },
    RunDone {
        cell: &'a CellKey,
        run_id: usize,
        max_accuracy: f64,
    },
    CellDone(&'a CellStatistics),
}

pub fn run_grid(cfg: &ExperimentConfig) -> Result<Vec<CellStatistics>> {
    run_cells(cfg, &plan_cells(cfg), &|_| {})
}

fn open_cell(cfg: &ExperimentConfig, key: &CellKey) -> Result<PathBuf> {
    let dir = cell_dir(cfg, key);
    let manifest_path = dir.join("cell.json");
    let manifest = CellManifest {
        key: *key,
        config_hash: cell_config_hash(cfg, key)?,
    };
    if manifest_path.exists() {
        let stored: CellManifest = io::read_json(&manifest_path)?;
        if stored != manifest {
            return Err(Error::ResumeMismatch {
                path: manifest_path,
                reason: "existing results were produced with a different configuration".into(),
            });
        }
    } else {
        io::create_dir_all(&dir.join("runs"))?;
        io::write_json(&manifest_path, &manifest)?;
    }
    Ok(dir)
}

fn run_job(
    cfg: &ExperimentConfig,
    key: &CellKey,
    dir: &Path,
    run: usize,
    data: &PreparedData,
) -> Result<RunRecord> {
    let ssl = ssl_config(cfg, key, run)?;
    let result = train_run(&data.train, &data.val, &ssl, data.cache.as_ref())?;
    let (csv_path, json_path) = run_paths(dir, run);
    let record = RunRecord {
        run_id: run,
        cell: *key,
        result,
    };
    io::write_atomic(&csv_path, run_csv(run, &record.result).as_bytes())?;
    io::write_json(&json_path, &record)?;
    Ok(record)
}

fn aggregate_cell(cfg: &ExperimentConfig, key: &CellKey, dir: &Path) -> Result<CellStatistics> {
    let mut epochs = String::new();
    writeln!(epochs, "{RUN_CSV_HEADER}").unwrap();
    let mut maxima = Vec::with_capacity(cfg.runs_per_cell);
    for run in 0..cfg.runs_per_cell {
        let (csv_path, json_path) = run_paths(dir, run);
        let record: RunRecord = io::read_json(&json_path)?;
        if record.run_id != run || record.cell != *key {
            return Err(Error::format(
                &json_path,
                "run record does not belong to this cell",
            ));
        }
        let csv = io::read_to_string(&csv_path)?;
        let body = csv
            .strip_prefix(RUN_CSV_HEADER)
            .and_then(|b| b.strip_prefix('\n'))
            .ok_or_else(|| Error::format(&csv_path, "missing header"))?;
        epochs.push_str(body);
        maxima.push(record.result.max_accuracy);
    }
    let stats = CellStatistics::from_maxima(*key, maxima)?;
    io::write_atomic(&dir.join("epochs.csv"), epochs.as_bytes())?;
    io::write_json(&dir.join("summary.json"), &stats)?;
    Ok(stats)
}

type GroupKey = (u64, usize, Option<usize>);

/// Runs (or resumes) the given cells. Completed runs are skipped; every cell is
/// re-aggregated from its run files, so the result does not depend on how the
/// work was split across invocations or threads.
pub fn run_cells(
    cfg: &ExperimentConfig,
    cells: &[CellKey],
    progress: &(dyn Fn(GridEvent<'_>) + Sync),
) -> Result<Vec<CellStatistics>> {
    cfg.validate()?;
    cfg.master_seed()?;
    io::create_dir_all(&cfg.output_dir)?;
    io::write_json(&cfg.output_dir.join("config.json"), cfg)?;
    let dirs: Vec<PathBuf> = cells
        .iter()
        .map(|k| open_cell(cfg, k))
        .collect::<Result<_>>()?;

    let mut jobs = Vec::new();
    for (c, dir) in dirs.iter().enumerate() {
        for run in 0..cfg.runs_per_cell {
            if !run_paths(dir, run).1.exists() {
                jobs.push((c, run));
            }
        }
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;

    pool.install(|| -> Result<()> {
        let mut shared: HashMap<GroupKey, Arc<PreparedData>> = HashMap::new();
        if cfg.shared_dataset {
            for &(c, _) in &jobs {
                let key = &cells[c];
                let g = (key.cn0_dbhz.to_bits(), key.n_sup, None);
                let need = needs_cache(cfg, key);
                let have = shared.get(&g).map(|d| d.cache.is_some() || !need);
                if have != Some(true) {
                    let data = prepare_data(cfg, key.cn0_dbhz, key.n_sup, None, need)?;
                    shared.insert(g, Arc::new(data));
                    progress(GridEvent::DataReady {
                        cn0_dbhz: key.cn0_dbhz,
                        n_sup: key.n_sup,
                    });
                }
            }
        }
        jobs.par_iter()
            .map(|&(c, run)| {
                let key = &cells[c];
                let data = if cfg.shared_dataset {
                    shared[&(key.cn0_dbhz.to_bits(), key.n_sup, None)].clone()
                } else {
                    Arc::new(prepare_data(
                        cfg,
                        key.cn0_dbhz,
                        key.n_sup,
                        Some(run),
                        needs_cache(cfg, key),
                    )?)
                };
                let record = run_job(cfg, key, &dirs[c], run, &data)?;
                progress(GridEvent::RunDone {
                    cell: key,
                    run_id: run,
                    max_accuracy: record.result.max_accuracy,
                });
                Ok(())
            })
            .collect::<Result<()>>()
    })?;

    cells
        .iter()
        .zip(&dirs)
        .map(|(key, dir)| {
            let stats = aggregate_cell(cfg, key, dir)?;
            progress(GridEvent::CellDone(&stats));
            Ok(stats)
        })
        .collect()
}

/// Reads every `summary.json` under `<output_dir>/cells`, in table order.
pub fn load_table(output_dir: &Path) -> Result<Vec<CellStatistics>> {
    let cells = output_dir.join("cells");
    let entries = std::fs::read_dir(&cells).map_err(|e| Error::io(&cells, e))?;
    let mut table = Vec::new();
    for entry in entries {
        let path = entry
            .map_err(|e| Error::io(&cells, e))?
            .path()
            .join("summary.json");
        if path.exists() {
            table.push(io::read_json::<CellStatistics>(&path)?);
        }
    }
    table.sort_by_key(|c| c.key.sort_key());
    Ok(table)
}
