//! `model.f64` holds every parameter as little-endian `f64` in [`PARAM_NAMES`]
//! order, each tensor row-major. `model.json` records the architecture and the
//! per-tensor shapes.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::PARAM_NAMES;
use super::{Architecture, ModelParams};
use crate::{io, Error, Result};

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    architecture: Architecture,
    byte_order: String,
    n_params: usize,
    tensors: Vec<TensorEntry>,
    sha256: String,
}

impl ModelParams {
    pub fn save(&self, dir: &Path) -> Result<()> {
        io::create_dir_all(dir)?;
        let bytes = io::f64s_to_le_bytes(&self.flatten());
        let arch = self.architecture();
        let manifest = Manifest {
            architecture: arch,
            byte_order: "little-endian f64".into(),
            n_params: self.n_params(),
            tensors: PARAM_NAMES
                .iter()
                .zip(arch.param_shapes()?)
                .map(|(n, s)| TensorEntry {
                    name: n.to_string(),
                    shape: s,
                })
                .collect(),
            sha256: io::sha256_hex(&bytes),
        };
        io::write_atomic(&dir.join("model.f64"), &bytes)?;
        io::write_json(&dir.join("model.json"), &manifest)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let json_path = dir.join("model.json");
        let manifest: Manifest = io::read_json(&json_path)?;
        let shapes = manifest.architecture.param_shapes()?;
        let listed: Vec<(&str, &[usize])> = manifest
            .tensors
            .iter()
            .map(|t| (t.name.as_str(), t.shape.as_slice()))
            .collect();
        let expected: Vec<(&str, &[usize])> = PARAM_NAMES
            .iter()
            .copied()
            .zip(shapes.iter().map(Vec::as_slice))
            .collect();
        if listed != expected {
            return Err(Error::format(
                &json_path,
                "tensor list does not match the architecture",
            ));
        }
        let bin_path = dir.join("model.f64");
        let bytes = io::read(&bin_path)?;
        if io::sha256_hex(&bytes) != manifest.sha256 {
            return Err(Error::format(&bin_path, "checksum mismatch"));
        }
        let flat = io::f64s_from_le_bytes(&bin_path, &bytes)?;
        Self::from_flat(manifest.architecture, &flat)
    }
}
