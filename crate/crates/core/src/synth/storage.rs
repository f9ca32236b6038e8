//! On-disk dataset layout:
//!
//! - `meta.json`: generator version, split, seed, C/N0 (`null` for the noiseless
//!   limit), sample counts and the full generator configuration.
//! - `data.f32`: little-endian `f32`, samples in index order, each sample's I
//!   channel row-major followed by its Q channel row-major.
//! - `labels.csv`: `index,label,is_labelled` with 0-based indices.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Dataset, GeneratorConfig, IQPair, Label, LabelledSample, Split};
use crate::io;
use crate::{Error, Result};

pub const GENERATOR_VERSION: &str = "otssl-synth/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct DatasetMeta {
    generator_version: String,
    split: Split,
    seed: u64,
    cn0_dbhz: Option<f64>,
    n_samples: usize,
    n_sup: usize,
    n_unsup: usize,
    generator: GeneratorConfig,
}

impl Dataset {
    fn data_bytes(&self) -> Vec<u8> {
        io::f32s_to_le_bytes(
            self.samples
                .iter()
                .flat_map(|s| s.image.i_channel().iter().chain(s.image.q_channel()))
                .map(|&v| v as f32),
        )
    }

    fn labels_csv(&self) -> String {
        let mut out = String::from("index,label,is_labelled\n");
        for (k, s) in self.samples.iter().enumerate() {
            writeln!(out, "{k},{},{}", s.label as u8, s.is_labelled).expect("string write");
        }
        out
    }

    /// SHA-256 over the serialized pixels and labels; identifies the dataset content.
    pub fn content_hash(&self) -> String {
        let mut bytes = self.data_bytes();
        bytes.extend_from_slice(self.labels_csv().as_bytes());
        io::sha256_hex(&bytes)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        io::create_dir_all(dir)?;
        let meta = DatasetMeta {
            generator_version: GENERATOR_VERSION.to_string(),
            split: self.split,
            seed: self.seed,
            cn0_dbhz: self.cn0_dbhz.is_finite().then_some(self.cn0_dbhz),
            n_samples: self.len(),
            n_sup: self.n_sup,
            n_unsup: self.n_unsup,
            generator: self.generator,
        };
        io::write_atomic(&dir.join("data.f32"), &self.data_bytes())?;
        io::write_atomic(&dir.join("labels.csv"), self.labels_csv().as_bytes())?;
        // meta.json last: its presence marks a complete dataset directory.
        io::write_json(&dir.join("meta.json"), &meta)
    }

    pub fn load(dir: &Path) -> Result<Dataset> {
        let meta_path = dir.join("meta.json");
        let meta: DatasetMeta = io::read_json(&meta_path)?;
        if meta.generator_version != GENERATOR_VERSION {
            return Err(Error::format(
                &meta_path,
                format!("unsupported generator version {}", meta.generator_version),
            ));
        }
        if meta.n_sup + meta.n_unsup != meta.n_samples {
            return Err(Error::format(&meta_path, "n_sup + n_unsup != n_samples"));
        }
        let grid = meta.generator.grid;
        let n_pixels = grid.n_pixels();

        let data_path = dir.join("data.f32");
        let values = io::f32s_from_le_bytes(&data_path, &io::read(&data_path)?)?;
        if values.len() != meta.n_samples * 2 * n_pixels {
            return Err(Error::format(
                &data_path,
                format!(
                    "expected {} floats, found {}",
                    meta.n_samples * 2 * n_pixels,
                    values.len()
                ),
            ));
        }

        let labels_path = dir.join("labels.csv");
        let text = io::read_to_string(&labels_path)?;
        let mut lines = text.lines();
        if lines.next() != Some("index,label,is_labelled") {
            return Err(Error::format(&labels_path, "missing or wrong header"));
        }
        let mut samples = Vec::with_capacity(meta.n_samples);
        for (k, line) in lines.enumerate() {
            let bad = |why: &str| Error::format(&labels_path, format!("line {}: {why}", k + 2));
            let fields: Vec<&str> = line.split(',').collect();
            let [index, label, is_labelled] = fields[..] else {
                return Err(bad("expected three fields"));
            };
            if index.parse::<usize>().map_err(|_| bad("bad index"))? != k {
                return Err(bad("indices must be consecutive from 0"));
            }
            let label = label
                .parse::<u8>()
                .ok()
                .and_then(|v| Label::from_u8(v).ok())
                .ok_or_else(|| bad("label must be 0 or 1"))?;
            let is_labelled = is_labelled
                .parse::<bool>()
                .map_err(|_| bad("is_labelled must be true or false"))?;
            if k >= meta.n_samples {
                return Err(bad("more label rows than samples"));
            }
            let base = k * 2 * n_pixels;
            let to_f64 = |s: &[f32]| s.iter().map(|&v| v as f64).collect::<Vec<_>>();
            let image = IQPair::new(
                grid.height,
                grid.width,
                to_f64(&values[base..base + n_pixels]),
                to_f64(&values[base + n_pixels..base + 2 * n_pixels]),
            )
            .map_err(|e| Error::format(&data_path, e))?;
            samples.push(LabelledSample {
                image,
                label,
                is_labelled,
            });
        }
        if samples.len() != meta.n_samples {
            return Err(Error::format(&labels_path, "fewer label rows than samples"));
        }
        if samples
            .iter()
            .enumerate()
            .any(|(k, s)| s.is_labelled != (k < meta.n_sup))
        {
            return Err(Error::format(
                &labels_path,
                "labelled samples must occupy the first n_sup indices",
            ));
        }
        Ok(Dataset {
            samples,
            n_sup: meta.n_sup,
            n_unsup: meta.n_unsup,
            seed: meta.seed,
            cn0_dbhz: meta.cn0_dbhz.unwrap_or(f64::INFINITY),
            split: meta.split,
            generator: meta.generator,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::super::generate_dataset;
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let cfg = GeneratorConfig::default();
        let (train, val) = generate_dataset(&cfg, 12, 5, 4, 37.0, 77).unwrap();
        let dir = tempfile::tempdir().unwrap();
        for (name, ds) in [("train", &train), ("val", &val)] {
            let p = dir.path().join(name);
            ds.save(&p).unwrap();
            let back = Dataset::load(&p).unwrap();
            assert_eq!(&back, ds);
            let first = std::fs::read(p.join("data.f32")).unwrap();
            back.save(&p).unwrap();
            assert_eq!(std::fs::read(p.join("data.f32")).unwrap(), first);
        }
    }

    #[test]
    fn same_seed_same_bytes() {
        let cfg = GeneratorConfig::default();
        let dir = tempfile::tempdir().unwrap();
        for name in ["a", "b"] {
            let (train, _) = generate_dataset(&cfg, 10, 4, 2, 43.0, 5).unwrap();
            train.save(&dir.path().join(name)).unwrap();
        }
        for f in ["meta.json", "data.f32", "labels.csv"] {
            assert_eq!(
                std::fs::read(dir.path().join("a").join(f)).unwrap(),
                std::fs::read(dir.path().join("b").join(f)).unwrap(),
                "{f}"
            );
        }
    }

    #[test]
    fn noiseless_cn0_round_trips() {
        let cfg = GeneratorConfig::default();
        let (train, _) = generate_dataset(&cfg, 4, 2, 2, f64::INFINITY, 5).unwrap();
        let dir = tempfile::tempdir().unwrap();
        train.save(dir.path()).unwrap();
        assert_eq!(Dataset::load(dir.path()).unwrap().cn0_dbhz, f64::INFINITY);
    }

    #[test]
    fn truncated_data_is_format_error() {
        let cfg = GeneratorConfig::default();
        let (train, _) = generate_dataset(&cfg, 4, 2, 2, 40.0, 5).unwrap();
        let dir = tempfile::tempdir().unwrap();
        train.save(dir.path()).unwrap();
        let p = dir.path().join("data.f32");
        let bytes = std::fs::read(&p).unwrap();
        std::fs::write(&p, &bytes[..bytes.len() - 4]).unwrap();
        assert!(matches!(
            Dataset::load(dir.path()),
            Err(Error::Format { .. })
        ));
    }
}
