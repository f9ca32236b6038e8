//! Pairwise sample distances, computed once per dataset and reused for every
//! kernel bandwidth.
//!
//! Persistence: `distances.f64` holds the strict upper triangle (`i < j`),
//! row-major, as little-endian `f64`; `meta.json` records the dataset hash, grid
//! and solver version so a stale cache is never reused.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{histogram_pair_distance, normalize_pair, CostMatrix, Histogram};
use crate::io;
use crate::synth::{Dataset, GridSpec};
use crate::{Error, Result};

pub const SOLVER_VERSION: &str = "otssl-transport-simplex/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceCacheMeta {
    pub dataset_hash: String,
    pub grid: GridSpec,
    pub solver_version: String,
    pub n_samples: usize,
}

/// Symmetric matrix of sample distances with per-entry computed flags.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceCache {
    n: usize,
    d: Vec<f64>,
    computed: Vec<bool>,
}

impl DistanceCache {
    /// An empty cache where only the diagonal (distance 0) is known.
    pub fn new(n: usize) -> Self {
        let mut computed = vec![false; n * n];
        for i in 0..n {
            computed[i * n + i] = true;
        }
        Self {
            n,
            d: vec![0.0; n * n],
            computed,
        }
    }

    /// Builds a complete cache from a full row-major matrix, checking symmetry.
    pub fn from_matrix(n: usize, d: Vec<f64>) -> Result<Self> {
        if d.len() != n * n {
            return Err(Error::Shape(format!(
                "expected {} entries, got {}",
                n * n,
                d.len()
            )));
        }
        let mut cache = Self::new(n);
        for i in 0..n {
            if d[i * n + i] != 0.0 {
                return Err(Error::InvalidParameter(
                    "diagonal distances must be 0".into(),
                ));
            }
            for j in i + 1..n {
                if d[i * n + j] != d[j * n + i] {
                    return Err(Error::InvalidParameter(
                        "distance matrix must be symmetric".into(),
                    ));
                }
                cache.set(i, j, d[i * n + j])?;
            }
        }
        Ok(cache)
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn set(&mut self, i: usize, j: usize, d: f64) -> Result<()> {
        if i >= self.n || j >= self.n {
            return Err(Error::Bounds(format!("pair ({i}, {j}) outside {}", self.n)));
        }
        if !(d >= 0.0 && d.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "distance must be finite and >= 0, got {d}"
            )));
        }
        if i == j && d != 0.0 {
            return Err(Error::InvalidParameter("self-distance must be 0".into()));
        }
        let n = self.n;
        self.d[i * n + j] = d;
        self.d[j * n + i] = d;
        self.computed[i * n + j] = true;
        self.computed[j * n + i] = true;
        Ok(())
    }

    /// The cached distance, or `None` if the pair was never computed.
    #[inline]
    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        let k = i * self.n + j;
        self.computed[k].then(|| self.d[k])
    }

    pub fn is_complete(&self) -> bool {
        self.computed.iter().all(|&c| c)
    }

    /// Full row-major matrix.
    pub fn matrix(&self) -> &[f64] {
        &self.d
    }

    pub fn save(&self, dir: &Path, meta: &DistanceCacheMeta) -> Result<()> {
        if !self.is_complete() {
            return Err(Error::InvalidParameter(
                "only complete caches can be saved".into(),
            ));
        }
        if meta.n_samples != self.n {
            return Err(Error::InvalidParameter(
                "metadata sample count mismatch".into(),
            ));
        }
        let mut upper = Vec::with_capacity(self.n * self.n.saturating_sub(1) / 2);
        for i in 0..self.n {
            upper.extend_from_slice(&self.d[i * self.n + i + 1..(i + 1) * self.n]);
        }
        io::write_atomic(&dir.join("distances.f64"), &io::f64s_to_le_bytes(&upper))?;
        io::write_json(&dir.join("meta.json"), meta)
    }

    pub fn load(dir: &Path) -> Result<(Self, DistanceCacheMeta)> {
        let meta_path = dir.join("meta.json");
        let meta: DistanceCacheMeta = io::read_json(&meta_path)?;
        if meta.solver_version != SOLVER_VERSION {
            return Err(Error::format(
                &meta_path,
                format!("unsupported solver version {}", meta.solver_version),
            ));
        }
        let path = dir.join("distances.f64");
        let upper = io::f64s_from_le_bytes(&path, &io::read(&path)?)?;
        let n = meta.n_samples;
        if upper.len() != n * n.saturating_sub(1) / 2 {
            return Err(Error::format(&path, "entry count does not match n_samples"));
        }
        let mut cache = Self::new(n);
        let mut values = upper.into_iter();
        for i in 0..n {
            for j in i + 1..n {
                let d = values.next().expect("length checked");
                cache.set(i, j, d).map_err(|e| Error::format(&path, e))?;
            }
        }
        Ok((cache, meta))
    }
}

/// Computes every pairwise distance of `dataset`. Channel histograms are built
/// once per sample; pairs are solved in parallel and written to disjoint cells,
/// so the result does not depend on scheduling.
pub fn build_distance_cache(dataset: &Dataset, cost: &CostMatrix) -> Result<DistanceCache> {
    if dataset.is_empty() {
        return Err(Error::InvalidParameter(
            "cannot build a cache for an empty dataset".into(),
        ));
    }
    let histograms: Vec<[Histogram; 2]> = dataset
        .images()
        .map(|x| {
            if x.height() * x.width() != cost.n_pixels() {
                return Err(Error::Shape(
                    "sample grid does not match the cost matrix".into(),
                ));
            }
            normalize_pair(x)
        })
        .collect::<Result<_>>()?;
    let n = histograms.len();
    let pairs: Vec<(usize, usize)> = (0..n)
        .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
        .collect();
    let distances = pairs
        .par_iter()
        .map(|&(i, j)| {
            let [xi, xq] = &histograms[i];
            let [yi, yq] = &histograms[j];
            histogram_pair_distance([xi, xq], [yi, yq], cost)
        })
        .collect::<Result<Vec<f64>>>()?;
    let mut cache = DistanceCache::new(n);
    for (&(i, j), d) in pairs.iter().zip(distances) {
        cache.set(i, j, d)?;
    }
    Ok(cache)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_sample_cache() {
        let c = DistanceCache::new(1);
        assert!(c.is_complete());
        assert_eq!(c.get(0, 0), Some(0.0));
    }

    #[test]
    fn partial_cache_reports_missing() {
        let mut c = DistanceCache::new(3);
        c.set(0, 2, 1.5).unwrap();
        assert_eq!(c.get(2, 0), Some(1.5));
        assert_eq!(c.get(0, 1), None);
        assert!(!c.is_complete());
        assert!(c.set(0, 1, -1.0).is_err());
        assert!(c.set(1, 1, 0.5).is_err());
    }

    #[test]
    fn save_load_round_trip() {
        let d = vec![0.0, 1.0, 2.5, 1.0, 0.0, 0.25, 2.5, 0.25, 0.0];
        let cache = DistanceCache::from_matrix(3, d).unwrap();
        let meta = DistanceCacheMeta {
            dataset_hash: "abc".into(),
            grid: GridSpec::default(),
            solver_version: SOLVER_VERSION.into(),
            n_samples: 3,
        };
        let dir = tempfile::tempdir().unwrap();
        cache.save(dir.path(), &meta).unwrap();
        assert_eq!(
            std::fs::metadata(dir.path().join("distances.f64"))
                .unwrap()
                .len(),
            24
        );
        let (back, back_meta) = DistanceCache::load(dir.path()).unwrap();
        assert_eq!(back, cache);
        assert_eq!(back_meta, meta);
    }

    #[test]
    fn asymmetric_matrix_rejected() {
        assert!(DistanceCache::from_matrix(2, vec![0.0, 1.0, 2.0, 0.0]).is_err());
    }
}
