use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::nn::AdamConfig;
use crate::synth::GeneratorConfig;
use crate::{io, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub cn0_list: Vec<f64>,
    pub nsup_list: Vec<usize>,
    /// Positive λ values; the λ = 0 baseline is always added per (C/N0, N_SUP).
    pub lambda_grid: Vec<f64>,
    pub sigma_grid: Vec<f64>,
    pub runs_per_cell: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub n_train: usize,
    pub n_val: usize,
    pub master_seed: Option<u64>,
    pub output_dir: PathBuf,
    /// Where datasets and distance caches live; defaults to `<output_dir>/data`.
    pub data_dir: Option<PathBuf>,
    /// One dataset per (C/N0, N_SUP) shared by every run, or a fresh draw per run index.
    pub shared_dataset: bool,
    pub standardize: bool,
    /// Worker threads; 0 uses every available core.
    pub workers: usize,
    pub generator: GeneratorConfig,
    pub adam: AdamConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            cn0_list: vec![37.0, 40.0, 43.0],
            nsup_list: vec![25, 40, 50, 60, 75],
            lambda_grid: vec![1.0, 10.0, 100.0, 1000.0],
            sigma_grid: vec![0.01, 0.05, 0.1, 0.2, 0.5, 1.0, 2.0, 10.0],
            runs_per_cell: 299,
            epochs: 55,
            batch_size: 50,
            n_train: 200,
            n_val: 100,
            master_seed: None,
            output_dir: PathBuf::from("otssl-out"),
            data_dir: None,
            shared_dataset: true,
            standardize: false,
            workers: 0,
            generator: GeneratorConfig::default(),
            adam: AdamConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Profile {
    Full,
    Desk,
}

impl std::str::FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Profile::Full),
            "desk" => Ok(Profile::Desk),
            other => Err(Error::Config(format!(
                "unknown profile {other:?} (expected full or desk)"
            ))),
        }
    }
}

impl ExperimentConfig {
    /// Scaled-down protocol: 31 runs per cell over the supervised trend cells
    /// (N_SUP = N_TRAIN) and the single SSL cell (λ, σ) = (1, 1.0) at N_SUP = 75.
    pub fn desk() -> Self {
        Self {
            nsup_list: vec![75, 200],
            lambda_grid: vec![1.0],
            sigma_grid: vec![1.0],
            runs_per_cell: 31,
            ..Self::default()
        }
    }

    pub fn for_profile(profile: Profile) -> Self {
        match profile {
            Profile::Full => Self::default(),
            Profile::Desk => Self::desk(),
        }
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = io::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Layers a JSON object over this config; unknown keys are rejected.
    pub fn merge_json(&self, patch: &Value) -> Result<Self> {
        let mut base = serde_json::to_value(self).expect("config serializes");
        merge(&mut base, patch);
        serde_json::from_value(base).map_err(|e| Error::Config(e.to_string()))
    }

    /// Sets one field by dotted path (`generator.grid.height`, `cn0_list`, ...).
    /// Values parse as JSON when possible; comma-separated values become lists;
    /// anything else is taken as a string.
    pub fn apply_override(&mut self, key: &str, raw: &str) -> Result<()> {
        let mut root = serde_json::to_value(&*self).expect("config serializes");
        let key_norm = key.trim_start_matches("--").replace('-', "_");
        let mut slot = &mut root;
        for part in key_norm.split('.') {
            slot = slot
                .as_object_mut()
                .and_then(|o| o.get_mut(part))
                .ok_or_else(|| Error::Config(format!("unknown configuration key {key:?}")))?;
        }
        let mut value = parse_value(raw);
        if slot.is_array() && !value.is_array() {
            value = Value::Array(vec![value]);
        }
        if slot.is_string() || (slot.is_null() && !value.is_number()) {
            value = Value::String(raw.to_string());
        }
        *slot = value;
        *self = serde_json::from_value(root)
            .map_err(|e| Error::Config(format!("bad value {raw:?} for {key}: {e}")))?;
        Ok(())
    }

    pub fn data_root(&self) -> PathBuf {
        self.data_dir
            .clone()
            .unwrap_or_else(|| self.output_dir.join("data"))
    }

    pub fn master_seed(&self) -> Result<u64> {
        self.master_seed
            .ok_or_else(|| Error::Config("master_seed must be set".into()))
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.cn0_list.is_empty() || self.nsup_list.is_empty() {
            return fail("cn0_list and nsup_list must be non-empty".into());
        }
        if !self.lambda_grid.is_empty() && self.sigma_grid.is_empty() {
            return fail("sigma_grid must be non-empty when lambda_grid is".into());
        }
        if let Some(c) = self.cn0_list.iter().find(|c| c.is_nan()) {
            return fail(format!("invalid C/N0 {c}"));
        }
        if let Some(l) = self
            .lambda_grid
            .iter()
            .find(|l| !(**l > 0.0 && l.is_finite()))
        {
            return fail(format!(
                "lambda_grid values must be finite and > 0 (baseline is implicit), got {l}"
            ));
        }
        if let Some(s) = self
            .sigma_grid
            .iter()
            .find(|s| !(**s > 0.0 && s.is_finite()))
        {
            return fail(format!("sigma_grid values must be finite and > 0, got {s}"));
        }
        for (name, v) in [
            ("runs_per_cell", self.runs_per_cell),
            ("epochs", self.epochs),
            ("batch_size", self.batch_size),
            ("n_train", self.n_train),
            ("n_val", self.n_val),
        ] {
            if v == 0 {
                return fail(format!("{name} must be positive"));
            }
        }
        if !self.lambda_grid.is_empty() && self.batch_size < 2 {
            return fail("batch_size must be >= 2 when the grid has lambda > 0".into());
        }
        if let Some(n) = self.nsup_list.iter().find(|&&n| n == 0 || n > self.n_train) {
            return fail(format!(
                "every n_sup must lie in 1..={}, got {n}",
                self.n_train
            ));
        }
        if has_duplicates(&self.cn0_list)
            || has_duplicates(&self.lambda_grid)
            || has_duplicates(&self.sigma_grid)
        {
            return fail("grid lists must not repeat values".into());
        }
        let mut nsup = self.nsup_list.clone();
        nsup.sort_unstable();
        nsup.dedup();
        if nsup.len() != self.nsup_list.len() {
            return fail("nsup_list must not repeat values".into());
        }
        self.generator.validate()?;
        for &c in &self.cn0_list {
            self.generator.noise_sigma(c)?;
        }
        self.adam.validate()
    }
}

fn has_duplicates(v: &[f64]) -> bool {
    v.iter().enumerate().any(|(i, a)| v[i + 1..].contains(a))
}

fn merge(base: &mut Value, patch: &Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k.clone(), v.clone());
                    }
                }
            }
        }
        (b, p) => *b = p.clone(),
    }
}

fn parse_value(raw: &str) -> Value {
    if let Ok(v) = serde_json::from_str::<Value>(raw) {
        return v;
    }
    if raw.contains(',') {
        return Value::Array(raw.split(',').map(|s| parse_value(s.trim())).collect());
    }
    Value::String(raw.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_with_seed() {
        let mut c = ExperimentConfig::default();
        c.validate().unwrap();
        assert!(c.master_seed().is_err());
        c.master_seed = Some(1);
        assert_eq!(c.master_seed().unwrap(), 1);
    }

    #[test]
    fn overrides() {
        let mut c = ExperimentConfig::default();
        c.apply_override("cn0_list", "37,43").unwrap();
        assert_eq!(c.cn0_list, vec![37.0, 43.0]);
        c.apply_override("--nsup-list", "75").unwrap();
        assert_eq!(c.nsup_list, vec![75]);
        c.apply_override("generator.grid.height", "20").unwrap();
        assert_eq!(c.generator.grid.height, 20);
        c.apply_override("output_dir", "/tmp/x").unwrap();
        assert_eq!(c.output_dir, PathBuf::from("/tmp/x"));
        c.apply_override("data_dir", "shared").unwrap();
        assert_eq!(c.data_dir, Some(PathBuf::from("shared")));
        c.apply_override("master_seed", "42").unwrap();
        assert_eq!(c.master_seed, Some(42));
        c.apply_override("shared_dataset", "false").unwrap();
        assert!(!c.shared_dataset);
        assert!(c.apply_override("no_such_key", "1").is_err());
        assert!(c.apply_override("epochs", "many").is_err());
    }

    #[test]
    fn merge_json_patch() {
        let c = ExperimentConfig::default()
            .merge_json(&serde_json::json!({"runs_per_cell": 3, "adam": {"learning_rate": 0.01}}))
            .unwrap();
        assert_eq!(c.runs_per_cell, 3);
        assert_eq!(c.adam.learning_rate, 0.01);
        assert_eq!(c.adam.beta1, 0.9);
        assert!(ExperimentConfig::default()
            .merge_json(&serde_json::json!({"bogus": 1}))
            .is_err());
    }

    #[test]
    fn invalid_configs() {
        let ok = ExperimentConfig::default();
        let cases = [
            ExperimentConfig {
                nsup_list: vec![201],
                ..ok.clone()
            },
            ExperimentConfig {
                lambda_grid: vec![0.0],
                ..ok.clone()
            },
            ExperimentConfig {
                sigma_grid: vec![-1.0],
                ..ok.clone()
            },
            ExperimentConfig {
                runs_per_cell: 0,
                ..ok.clone()
            },
            ExperimentConfig {
                cn0_list: vec![],
                ..ok.clone()
            },
            ExperimentConfig {
                cn0_list: vec![37.0, 37.0],
                ..ok.clone()
            },
        ];
        for c in cases {
            assert!(matches!(c.validate(), Err(Error::Config(_))), "{c:?}");
        }
        let baseline_only = ExperimentConfig {
            lambda_grid: vec![],
            sigma_grid: vec![],
            ..ok
        };
        baseline_only.validate().unwrap();
    }

    #[test]
    fn desk_profile() {
        let d = ExperimentConfig::desk();
        assert_eq!(d.runs_per_cell, 31);
        assert_eq!(d.nsup_list, vec![75, 200]);
        d.validate().unwrap();
        assert_eq!("desk".parse::<Profile>().unwrap(), Profile::Desk);
        assert!("huge".parse::<Profile>().is_err());
    }
}
