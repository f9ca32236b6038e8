//! Exact Wasserstein-1 (earth mover's) distances between images on a pixel grid.
//!
//! Each channel is turned into a probability histogram by [`normalize_image`]
//! (offset to a zero minimum, scaled to unit mass). Two histograms are compared
//! with [`emd`], an exact transportation-simplex solve against the Euclidean
//! pixel-distance matrix. The distance between two I/Q samples is the sum of the
//! I-channel and Q-channel transport costs, in pixel units.

mod cache;
mod simplex;

use crate::synth::{GridSpec, IQPair};
use crate::{Error, Result};

pub use cache::{build_distance_cache, DistanceCache, DistanceCacheMeta, SOLVER_VERSION};
pub use simplex::{emd, TransportPlan};

/// Mass tolerance accepted by [`Histogram::new`] and by the marginal repair in [`emd`].
pub const MASS_TOLERANCE: f64 = 1e-9;

/// 1-based row-major flattening: `(row, col) ↦ col + (row − 1)·n`.
pub fn flatten_index(row: usize, col: usize, n: usize) -> Result<usize> {
    if row == 0 || col == 0 || row > n || col > n {
        return Err(Error::Bounds(format!(
            "pixel ({row}, {col}) outside the 1..={n} grid"
        )));
    }
    Ok(col + (row - 1) * n)
}

/// Dense Euclidean distance matrix between grid pixels, indexed by 0-based
/// row-major pixel index.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    height: usize,
    width: usize,
    entries: Vec<f64>,
}

impl CostMatrix {
    pub fn n_pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// Cost between 0-based pixel indices `i` and `j`.
    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.n_pixels() + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let n = self.n_pixels();
        &self.entries[i * n..(i + 1) * n]
    }

    pub fn max_cost(&self) -> f64 {
        self.entries.iter().copied().fold(0.0, f64::max)
    }
}

/// Builds the pixel-distance matrix once per grid; it is shared by every solve.
pub fn build_cost_matrix(grid: &GridSpec) -> Result<CostMatrix> {
    grid.validate()?;
    let (h, w) = (grid.height, grid.width);
    let n = h * w;
    let mut entries = Vec::with_capacity(n * n);
    for p in 0..n {
        let (pr, pc) = ((p / w) as f64, (p % w) as f64);
        for k in 0..n {
            let (kr, kc) = ((k / w) as f64, (k % w) as f64);
            entries.push((pr - kr).hypot(pc - kc));
        }
    }
    Ok(CostMatrix {
        height: h,
        width: w,
        entries,
    })
}

/// Nonnegative mass vector summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    mass: Vec<f64>,
}

impl Histogram {
    pub fn new(mass: Vec<f64>) -> Result<Self> {
        if mass.iter().any(|m| !(m.is_finite() && *m >= 0.0)) {
            return Err(Error::InvalidParameter(
                "histogram entries must be finite and nonnegative".into(),
            ));
        }
        let total: f64 = mass.iter().sum();
        if (total - 1.0).abs() > MASS_TOLERANCE {
            return Err(Error::InvalidParameter(format!(
                "histogram mass must be 1 within {MASS_TOLERANCE}, got {total}"
            )));
        }
        Ok(Self { mass })
    }

    /// Unit mass on a single bin.
    pub fn dirac(len: usize, index: usize) -> Result<Self> {
        if index >= len {
            return Err(Error::Bounds(format!(
                "bin {index} outside histogram of {len}"
            )));
        }
        let mut mass = vec![0.0; len];
        mass[index] = 1.0;
        Ok(Self { mass })
    }

    pub fn mass(&self) -> &[f64] {
        &self.mass
    }

    pub fn len(&self) -> usize {
        self.mass.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mass.is_empty()
    }
}

/// Offsets a channel to a zero minimum and scales it to unit mass.
///
/// A constant channel has no mass left after the offset and is rejected as
/// degenerate rather than mapped to an arbitrary histogram.
pub fn normalize_image(channel: &[f64]) -> Result<Histogram> {
    if channel.is_empty() {
        return Err(Error::DegenerateInput("empty channel".into()));
    }
    if channel.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter(
            "channel values must be finite".into(),
        ));
    }
    let min = channel.iter().copied().fold(f64::INFINITY, f64::min);
    let shifted: Vec<f64> = channel.iter().map(|v| v - min).collect();
    let total: f64 = shifted.iter().sum();
    if !(total > 0.0 && total.is_finite()) {
        return Err(Error::DegenerateInput(
            "constant channel has zero mass after offset".into(),
        ));
    }
    Ok(Histogram {
        mass: shifted.into_iter().map(|v| v / total).collect(),
    })
}

/// Both channels of a sample as histograms.
pub fn normalize_pair(x: &IQPair) -> Result<[Histogram; 2]> {
    Ok([
        normalize_image(x.i_channel())?,
        normalize_image(x.q_channel())?,
    ])
}

/// Sum of the I-channel and Q-channel transport costs between two samples.
pub fn pair_distance(x: &IQPair, y: &IQPair, cost: &CostMatrix) -> Result<f64> {
    if !x.same_shape(y) || x.height() * x.width() != cost.n_pixels() {
        return Err(Error::Shape(format!(
            "samples {}x{} and {}x{} do not match the {}x{} cost grid",
            x.height(),
            x.width(),
            y.height(),
            y.width(),
            cost.height(),
            cost.width()
        )));
    }
    let [xi, xq] = normalize_pair(x)?;
    let [yi, yq] = normalize_pair(y)?;
    histogram_pair_distance([&xi, &xq], [&yi, &yq], cost)
}

pub(crate) fn histogram_pair_distance(
    x: [&Histogram; 2],
    y: [&Histogram; 2],
    cost: &CostMatrix,
) -> Result<f64> {
    Ok(emd(x[0], y[0], cost)?.cost() + emd(x[1], y[1], cost)?.cost())
}

/// Gaussian similarity `exp(−d²/σ)`.
///
/// The result lies in `(0, 1]` mathematically; in `f64` it underflows to 0 once
/// `d²/σ` exceeds roughly 745.
pub fn kernel_weight(d: f64, sigma: f64) -> Result<f64> {
    if !(sigma.is_finite() && sigma > 0.0) {
        return Err(Error::Config(format!(
            "kernel bandwidth must be finite and > 0, got {sigma}"
        )));
    }
    if d.is_nan() || d < 0.0 {
        return Err(Error::InvalidParameter(format!(
            "distance must be >= 0, got {d}"
        )));
    }
    Ok((-(d * d) / sigma).exp())
}
