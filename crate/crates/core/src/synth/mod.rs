//! Synthetic GNSS I/Q correlator images.
//!
//! Each sample is a pair of `height × width` images sampled on a delay/Doppler
//! grid: columns span code delay in chips, rows span frequency offset in Hz.
//! A component (LOS or echo) is the separable correlation kernel
//!
//! ```text
//! K(τ, f) = max(0, 1 − |τ|) · sinc(f · T_coh)        sinc(x) = sin(πx) / (πx)
//! ```
//!
//! shifted to `(delay, doppler)`, scaled by `amplitude` and rotated by `phase`
//! between the I (cosine) and Q (sine) channels. The LOS is always amplitude 1,
//! zero delay, zero Doppler, zero phase; a contaminated sample adds one echo and
//! both add white Gaussian noise whose standard deviation follows from C/N0:
//!
//! ```text
//! σ_noise = 1 / sqrt(2 · 10^(C/N0 / 10) · T_coh)
//! ```
//!
//! # Random streams
//!
//! Every random draw comes from a [`ChaCha8Rng`] seeded with the dataset seed via
//! `seed_from_u64`. The stream id selects the independent sub-sequence:
//! `(split << 32) | sample_index` for sample `sample_index` of a split
//! (train = 1, validation = 2), and `(split << 32) | 0xFFFF_FFFF` for the label
//! permutation of that split. Samples therefore do not depend on generation
//! order and parallel generation reproduces serial generation exactly.

mod storage;

use std::f64::consts::{PI, TAU};

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub use storage::GENERATOR_VERSION;

/// Image dimensions and the physical extent they cover.
///
/// Column `c` sits at delay `(c − width/2) · 2·delay_span/width` chips and row
/// `r` at Doppler `(r − height/2) · 2·doppler_span/height` Hz, so for even sizes
/// the origin falls exactly on cell `(height/2, width/2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub height: usize,
    pub width: usize,
    /// Half-range of code delay in chips.
    pub delay_span: f64,
    /// Half-range of frequency offset in Hz.
    pub doppler_span: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            height: 26,
            width: 26,
            delay_span: 1.5,
            doppler_span: 500.0,
        }
    }
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        if self.height < 2 || self.width < 2 {
            return Err(Error::InvalidParameter(format!(
                "grid must be at least 2x2, got {}x{}",
                self.height, self.width
            )));
        }
        if !(self.delay_span.is_finite() && self.delay_span > 0.0)
            || !(self.doppler_span.is_finite() && self.doppler_span > 0.0)
        {
            return Err(Error::InvalidParameter(
                "grid spans must be finite and strictly positive".into(),
            ));
        }
        Ok(())
    }

    pub fn n_pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn delay_at(&self, col: usize) -> f64 {
        (col as f64 - (self.width / 2) as f64) * (2.0 * self.delay_span / self.width as f64)
    }

    pub fn doppler_at(&self, row: usize) -> f64 {
        (row as f64 - (self.height / 2) as f64) * (2.0 * self.doppler_span / self.height as f64)
    }
}

/// Echo parameters relative to the LOS component.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MultipathParams {
    pub amplitude_ratio: f64,
    pub delay_offset: f64,
    pub doppler_offset: f64,
    pub phase_offset: f64,
}

impl MultipathParams {
    /// Validates the ranges and wraps the phase into `[0, 2π)`.
    pub fn new(
        amplitude_ratio: f64,
        delay_offset: f64,
        doppler_offset: f64,
        phase_offset: f64,
    ) -> Result<Self> {
        if !(amplitude_ratio > 0.0 && amplitude_ratio <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "amplitude ratio must lie in (0, 1], got {amplitude_ratio}"
            )));
        }
        if !(delay_offset.is_finite() && delay_offset >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "delay offset must be finite and >= 0, got {delay_offset}"
            )));
        }
        if !doppler_offset.is_finite() || !phase_offset.is_finite() {
            return Err(Error::InvalidParameter(
                "doppler and phase offsets must be finite".into(),
            ));
        }
        let mut phase = phase_offset.rem_euclid(TAU);
        if phase >= TAU {
            phase = 0.0;
        }
        Ok(Self {
            amplitude_ratio,
            delay_offset,
            doppler_offset,
            phase_offset: phase,
        })
    }
}

/// Uniform ranges the echo parameters are drawn from; phase is always uniform on `[0, 2π)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MultipathDistribution {
    pub amplitude_ratio: [f64; 2],
    pub delay_offset: [f64; 2],
    pub doppler_offset: [f64; 2],
}

impl Default for MultipathDistribution {
    fn default() -> Self {
        Self {
            amplitude_ratio: [0.2, 0.9],
            delay_offset: [0.0, 1.0],
            doppler_offset: [-125.0, 125.0],
        }
    }
}

impl MultipathDistribution {
    fn validate(&self) -> Result<()> {
        let [alo, ahi] = self.amplitude_ratio;
        let [dlo, dhi] = self.delay_offset;
        let [flo, fhi] = self.doppler_offset;
        let ordered = |lo: f64, hi: f64| lo.is_finite() && hi.is_finite() && lo <= hi;
        if !(ordered(alo, ahi) && alo > 0.0 && ahi <= 1.0) {
            return Err(Error::Config(
                "multipath amplitude range must be ordered within (0, 1]".into(),
            ));
        }
        if !(ordered(dlo, dhi) && dlo >= 0.0) {
            return Err(Error::Config(
                "multipath delay range must be ordered and non-negative".into(),
            ));
        }
        if !ordered(flo, fhi) {
            return Err(Error::Config(
                "multipath doppler range must be ordered".into(),
            ));
        }
        Ok(())
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> MultipathParams {
        let draw = |rng: &mut R, [lo, hi]: [f64; 2]| lo + (hi - lo) * rng.random::<f64>();
        let amplitude = draw(rng, self.amplitude_ratio);
        let delay = draw(rng, self.delay_offset);
        let doppler = draw(rng, self.doppler_offset);
        let phase = TAU * rng.random::<f64>();
        MultipathParams {
            // A draw of exactly 0 is possible only when the range starts at 0.
            amplitude_ratio: amplitude.max(f64::MIN_POSITIVE),
            delay_offset: delay,
            doppler_offset: doppler,
            phase_offset: phase,
        }
    }
}

/// Everything that shapes a generated image apart from C/N0 and the seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorConfig {
    pub grid: GridSpec,
    /// Coherent integration time in seconds.
    pub coherent_integration: f64,
    pub multipath: MultipathDistribution,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            grid: GridSpec::default(),
            coherent_integration: 1e-3,
            multipath: MultipathDistribution::default(),
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        if !(self.coherent_integration.is_finite() && self.coherent_integration > 0.0) {
            return Err(Error::Config(
                "coherent integration time must be finite and positive".into(),
            ));
        }
        self.multipath.validate()
    }

    /// Standard deviation of the per-pixel, per-channel Gaussian noise.
    ///
    /// `cn0_dbhz = +∞` is the noiseless limit and yields 0.
    pub fn noise_sigma(&self, cn0_dbhz: f64) -> Result<f64> {
        if cn0_dbhz.is_nan() || cn0_dbhz == f64::NEG_INFINITY {
            return Err(Error::InvalidParameter(format!(
                "C/N0 must be a number or +inf, got {cn0_dbhz}"
            )));
        }
        if cn0_dbhz == f64::INFINITY {
            return Ok(0.0);
        }
        let linear = 10f64.powf(cn0_dbhz / 10.0);
        Ok(1.0 / (2.0 * linear * self.coherent_integration).sqrt())
    }
}

/// Two-channel correlator image, both channels row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct IQPair {
    height: usize,
    width: usize,
    i: Vec<f64>,
    q: Vec<f64>,
}

impl IQPair {
    pub fn new(height: usize, width: usize, i: Vec<f64>, q: Vec<f64>) -> Result<Self> {
        let n = height * width;
        if i.len() != n || q.len() != n {
            return Err(Error::Shape(format!(
                "I/Q channels must both hold {n} values, got {} and {}",
                i.len(),
                q.len()
            )));
        }
        if i.iter().chain(&q).any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("I/Q values must be finite".into()));
        }
        Ok(Self {
            height,
            width,
            i,
            q,
        })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        let n = height * width;
        Self {
            height,
            width,
            i: vec![0.0; n],
            q: vec![0.0; n],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn i_channel(&self) -> &[f64] {
        &self.i
    }

    pub fn q_channel(&self) -> &[f64] {
        &self.q
    }

    pub fn same_shape(&self, other: &IQPair) -> bool {
        self.height == other.height && self.width == other.width
    }

    /// Pixel-wise sum of two images of identical shape.
    pub fn add(&self, other: &IQPair) -> Result<IQPair> {
        if !self.same_shape(other) {
            return Err(Error::Shape(format!(
                "cannot add {}x{} and {}x{} images",
                self.height, self.width, other.height, other.width
            )));
        }
        let sum = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x + y).collect();
        Ok(IQPair {
            height: self.height,
            width: self.width,
            i: sum(&self.i, &other.i),
            q: sum(&self.q, &other.q),
        })
    }

    /// Rounds every pixel to the nearest `f32`, the on-disk precision.
    pub fn quantize_f32(&mut self) {
        for v in self.i.iter_mut().chain(self.q.iter_mut()) {
            *v = *v as f32 as f64;
        }
    }

    /// Squared Euclidean norm over both channels.
    pub fn energy(&self) -> f64 {
        self.i.iter().chain(&self.q).map(|v| v * v).sum()
    }
}

fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        let px = PI * x;
        px.sin() / px
    }
}

/// Separable correlator response: code triangle times coherent-integration sinc.
pub fn correlation_kernel(delay: f64, doppler: f64, coherent_integration: f64) -> f64 {
    (1.0 - delay.abs()).max(0.0) * sinc(doppler * coherent_integration)
}

/// Renders one signal component (LOS or echo) on the grid.
pub fn render_component(
    cfg: &GeneratorConfig,
    amplitude: f64,
    delay: f64,
    doppler: f64,
    phase: f64,
) -> Result<IQPair> {
    for (name, v) in [
        ("amplitude", amplitude),
        ("delay", delay),
        ("doppler", doppler),
        ("phase", phase),
    ] {
        if !v.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "{name} must be finite, got {v}"
            )));
        }
    }
    if amplitude < 0.0 {
        return Err(Error::InvalidParameter(format!(
            "amplitude must be >= 0, got {amplitude}"
        )));
    }
    let grid = cfg.grid;
    grid.validate()?;
    let (sin, cos) = phase.sin_cos();
    let n = grid.n_pixels();
    let mut i = Vec::with_capacity(n);
    let mut q = Vec::with_capacity(n);
    for r in 0..grid.height {
        let doppler_term = sinc((grid.doppler_at(r) - doppler) * cfg.coherent_integration);
        for c in 0..grid.width {
            let triangle = (1.0 - (grid.delay_at(c) - delay).abs()).max(0.0);
            let k = amplitude * triangle * doppler_term;
            i.push(k * cos);
            q.push(k * sin);
        }
    }
    Ok(IQPair {
        height: grid.height,
        width: grid.width,
        i,
        q,
    })
}

/// The noiseless line-of-sight template shared by every sample.
pub fn los_template(cfg: &GeneratorConfig) -> Result<IQPair> {
    render_component(cfg, 1.0, 0.0, 0.0, 0.0)
}

/// Renders the echo described by `echo` relative to the LOS.
pub fn render_echo(cfg: &GeneratorConfig, echo: &MultipathParams) -> Result<IQPair> {
    render_component(
        cfg,
        echo.amplitude_ratio,
        echo.delay_offset,
        echo.doppler_offset,
        echo.phase_offset,
    )
}

/// Returns `image + ε` with i.i.d. `N(0, σ_noise²)` entries on both channels,
/// I channel drawn first, row-major.
pub fn add_noise<R: Rng + ?Sized>(
    cfg: &GeneratorConfig,
    image: &IQPair,
    cn0_dbhz: f64,
    rng: &mut R,
) -> Result<IQPair> {
    let sigma = cfg.noise_sigma(cn0_dbhz)?;
    let mut out = image.clone();
    if sigma == 0.0 {
        return Ok(out);
    }
    for v in out.i.iter_mut().chain(out.q.iter_mut()) {
        let z: f64 = rng.sample(StandardNormal);
        *v += sigma * z;
    }
    Ok(out)
}

/// Binary class of a sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Label {
    Clean = 0,
    Multipath = 1,
}

impl Label {
    pub fn as_f64(self) -> f64 {
        self as u8 as f64
    }

    pub fn from_u8(v: u8) -> Result<Self> {
        match v {
            0 => Ok(Label::Clean),
            1 => Ok(Label::Multipath),
            other => Err(Error::InvalidParameter(format!(
                "label must be 0 or 1, got {other}"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabelledSample {
    pub image: IQPair,
    pub label: Label,
    /// `false` hides the label from training; it stays available for bookkeeping.
    pub is_labelled: bool,
}

/// Generates one sample; contaminated samples draw their echo from `cfg.multipath`.
pub fn generate_sample<R: Rng + ?Sized>(
    cfg: &GeneratorConfig,
    contaminated: bool,
    cn0_dbhz: f64,
    rng: &mut R,
) -> Result<LabelledSample> {
    let echo = contaminated.then(|| cfg.multipath.sample(rng));
    generate_sample_with_echo(cfg, echo.as_ref(), cn0_dbhz, rng)
}

/// Like [`generate_sample`] with explicit echo parameters (`None` for a clean sample).
pub fn generate_sample_with_echo<R: Rng + ?Sized>(
    cfg: &GeneratorConfig,
    echo: Option<&MultipathParams>,
    cn0_dbhz: f64,
    rng: &mut R,
) -> Result<LabelledSample> {
    let los = los_template(cfg)?;
    let (signal, label) = match echo {
        Some(p) => (los.add(&render_echo(cfg, p)?)?, Label::Multipath),
        None => (los, Label::Clean),
    };
    Ok(LabelledSample {
        image: add_noise(cfg, &signal, cn0_dbhz, rng)?,
        label,
        is_labelled: true,
    })
}

/// Which split a dataset was drawn for; selects its random streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
}

impl Split {
    fn stream_prefix(self) -> u64 {
        match self {
            Split::Train => 1 << 32,
            Split::Validation => 2 << 32,
        }
    }

    pub fn sample_stream(self, index: usize) -> u64 {
        assert!(
            index < u32::MAX as usize,
            "sample index exceeds the stream space"
        );
        self.stream_prefix() | index as u64
    }

    pub fn label_stream(self) -> u64 {
        self.stream_prefix() | u32::MAX as u64
    }
}

/// Labelled samples first (indices `0..n_sup`), unlabelled after.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub samples: Vec<LabelledSample>,
    pub n_sup: usize,
    pub n_unsup: usize,
    pub seed: u64,
    pub cn0_dbhz: f64,
    pub split: Split,
    pub generator: GeneratorConfig,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn is_labelled(&self, index: usize) -> bool {
        self.samples[index].is_labelled
    }

    pub fn labelled_mask(&self) -> Vec<bool> {
        self.samples.iter().map(|s| s.is_labelled).collect()
    }

    pub fn count_label(&self, range: std::ops::Range<usize>, label: Label) -> usize {
        self.samples[range]
            .iter()
            .filter(|s| s.label == label)
            .count()
    }

    pub fn images(&self) -> impl Iterator<Item = &IQPair> {
        self.samples.iter().map(|s| &s.image)
    }
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Balanced label sequence for `n_sup` labelled then `n_total − n_sup` unlabelled
/// samples, each block shuffled independently.
fn balanced_labels(n_total: usize, n_sup: usize, rng: &mut ChaCha8Rng) -> Vec<Label> {
    let block = |ones: usize, len: usize, rng: &mut ChaCha8Rng| {
        let mut v: Vec<Label> = (0..len)
            .map(|k| {
                if k < ones {
                    Label::Multipath
                } else {
                    Label::Clean
                }
            })
            .collect();
        v.shuffle(rng);
        v
    };
    let ones_sup = n_sup / 2;
    let ones_unsup = n_total / 2 - ones_sup;
    let mut labels = block(ones_sup, n_sup, rng);
    labels.extend(block(ones_unsup, n_total - n_sup, rng));
    labels
}

fn generate_split(
    cfg: &GeneratorConfig,
    split: Split,
    n_total: usize,
    n_sup: usize,
    cn0_dbhz: f64,
    seed: u64,
) -> Result<Dataset> {
    let labels = balanced_labels(n_total, n_sup, &mut stream_rng(seed, split.label_stream()));
    let samples = labels
        .par_iter()
        .enumerate()
        .map(|(index, &label)| {
            let mut rng = stream_rng(seed, split.sample_stream(index));
            let mut sample = generate_sample(cfg, label == Label::Multipath, cn0_dbhz, &mut rng)?;
            sample.image.quantize_f32();
            sample.is_labelled = index < n_sup;
            Ok(sample)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        samples,
        n_sup,
        n_unsup: n_total - n_sup,
        seed,
        cn0_dbhz,
        split,
        generator: *cfg,
    })
}

/// Builds the training set (`n_sup` labelled + `n_train − n_sup` unlabelled) and a
/// fully labelled validation set, both class-balanced. Pixels are rounded to `f32`
/// so the in-memory dataset equals what [`Dataset::save`] writes.
pub fn generate_dataset(
    cfg: &GeneratorConfig,
    n_train: usize,
    n_sup: usize,
    n_val: usize,
    cn0_dbhz: f64,
    seed: u64,
) -> Result<(Dataset, Dataset)> {
    cfg.validate()?;
    if n_sup > n_train {
        return Err(Error::Config(format!(
            "n_sup ({n_sup}) cannot exceed n_train ({n_train})"
        )));
    }
    cfg.noise_sigma(cn0_dbhz)?;
    let train = generate_split(cfg, Split::Train, n_train, n_sup, cn0_dbhz, seed)?;
    let val = generate_split(cfg, Split::Validation, n_val, n_val, cn0_dbhz, seed)?;
    Ok((train, val))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> GeneratorConfig {
        GeneratorConfig::default()
    }

    #[test]
    fn zero_amplitude_renders_zeros() {
        let img = render_component(&cfg(), 0.0, 0.3, 40.0, 1.0).unwrap();
        assert!(img
            .i_channel()
            .iter()
            .chain(img.q_channel())
            .all(|&v| v == 0.0));
    }

    #[test]
    fn quarter_turn_swaps_channels() {
        let c = cfg();
        let base = render_component(&c, 1.0, 0.0, 0.0, 0.0).unwrap();
        let rotated = render_component(&c, 1.0, 0.0, 0.0, PI / 2.0).unwrap();
        for (k, (&i, &q)) in rotated
            .i_channel()
            .iter()
            .zip(rotated.q_channel())
            .enumerate()
        {
            assert!(i.abs() < 1e-15);
            assert!((q - base.i_channel()[k]).abs() < 1e-15);
        }
    }

    #[test]
    fn los_peak_and_delay_decay() {
        let c = cfg();
        let g = c.grid;
        let img = los_template(&c).unwrap();
        let i = img.i_channel();
        let (argmax, &max) = i
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .unwrap();
        assert_eq!(max, 1.0);
        assert_eq!(argmax, (g.height / 2) * g.width + g.width / 2);
        // Along the peak row, the value drops strictly with |delay| while |delay| < 1 chip.
        let row = &i[(g.height / 2) * g.width..(g.height / 2 + 1) * g.width];
        let centre = g.width / 2;
        for c in centre + 1..g.width {
            if g.delay_at(c).abs() >= 1.0 {
                break;
            }
            assert!(row[c] < row[c - 1]);
        }
        for c in (0..centre).rev() {
            if g.delay_at(c).abs() >= 1.0 {
                break;
            }
            assert!(row[c] < row[c + 1]);
        }
    }

    #[test]
    fn non_finite_parameters_rejected() {
        assert!(matches!(
            render_component(&cfg(), 1.0, f64::NAN, 0.0, 0.0),
            Err(Error::InvalidParameter(_))
        ));
        assert!(render_component(&cfg(), f64::INFINITY, 0.0, 0.0, 0.0).is_err());
        assert!(render_component(&cfg(), -1.0, 0.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn noiseless_limit_is_identity() {
        let c = cfg();
        let img = los_template(&c).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert_eq!(add_noise(&c, &img, f64::INFINITY, &mut rng).unwrap(), img);
    }

    #[test]
    fn noise_is_deterministic_per_seed() {
        let c = cfg();
        let img = los_template(&c).unwrap();
        let a = add_noise(&c, &img, 43.0, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = add_noise(&c, &img, 43.0, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, img);
    }

    #[test]
    fn noise_sigma_formula() {
        let c = cfg();
        let s = c.noise_sigma(40.0).unwrap();
        assert!((s - 1.0 / (20.0f64).sqrt()).abs() < 1e-15);
        assert!(c.noise_sigma(f64::NAN).is_err());
    }

    #[test]
    fn clean_noiseless_sample_is_los() {
        let c = cfg();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = generate_sample(&c, false, f64::INFINITY, &mut rng).unwrap();
        assert_eq!(s.label, Label::Clean);
        assert_eq!(s.image, los_template(&c).unwrap());
    }

    #[test]
    fn vanishing_echo_is_los() {
        let c = cfg();
        let echo = MultipathParams::new(f64::MIN_POSITIVE, 0.4, 30.0, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = generate_sample_with_echo(&c, Some(&echo), f64::INFINITY, &mut rng).unwrap();
        assert_eq!(s.label, Label::Multipath);
        let los = los_template(&c).unwrap();
        for (a, b) in s.image.i_channel().iter().zip(los.i_channel()) {
            assert!((a - b).abs() < 1e-300);
        }
    }

    #[test]
    fn echo_leaves_residual_off_peak() {
        let c = cfg();
        let g = c.grid;
        let echo = MultipathParams::new(0.8, 0.5, 0.0, 0.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = generate_sample_with_echo(&c, Some(&echo), f64::INFINITY, &mut rng).unwrap();
        let los = los_template(&c).unwrap();
        let residual: Vec<f64> = s
            .image
            .i_channel()
            .iter()
            .zip(los.i_channel())
            .map(|(a, b)| a - b)
            .collect();
        let norm: f64 = residual.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(norm > 0.1);
        let peak = (g.height / 2) * g.width + g.width / 2;
        let off_peak: f64 = residual
            .iter()
            .enumerate()
            .filter(|&(k, _)| k != peak)
            .map(|(_, v)| v * v)
            .sum();
        assert!(off_peak > 0.0);
    }

    #[test]
    fn multipath_phase_wraps() {
        let p = MultipathParams::new(0.5, 0.1, 0.0, -PI / 2.0).unwrap();
        assert!((p.phase_offset - 1.5 * PI).abs() < 1e-12);
        assert!(MultipathParams::new(0.0, 0.1, 0.0, 0.0).is_err());
        assert!(MultipathParams::new(1.5, 0.1, 0.0, 0.0).is_err());
        assert!(MultipathParams::new(0.5, -0.1, 0.0, 0.0).is_err());
    }

    #[test]
    fn dataset_composition() {
        let (train, val) = generate_dataset(&cfg(), 200, 75, 100, 40.0, 11).unwrap();
        assert_eq!(train.len(), 200);
        assert_eq!((train.n_sup, train.n_unsup), (75, 125));
        assert_eq!(train.count_label(0..200, Label::Multipath), 100);
        assert_eq!(train.count_label(0..200, Label::Clean), 100);
        assert!((0..75).all(|k| train.is_labelled(k)));
        assert!((75..200).all(|k| !train.is_labelled(k)));
        assert_eq!(val.len(), 100);
        assert!(val.samples.iter().all(|s| s.is_labelled));
        assert_eq!(val.count_label(0..100, Label::Multipath), 50);
    }

    #[test]
    fn fully_supervised_dataset() {
        let (train, _) = generate_dataset(&cfg(), 20, 20, 4, 40.0, 1).unwrap();
        assert_eq!(train.n_unsup, 0);
        assert!(train.samples.iter().all(|s| s.is_labelled));
    }

    #[test]
    fn too_many_labelled_is_config_error() {
        assert!(matches!(
            generate_dataset(&cfg(), 10, 11, 4, 40.0, 1),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn los_template_is_shared() {
        // Every clean noiseless sample equals the same template regardless of stream.
        let c = cfg();
        let a = generate_sample(&c, false, f64::INFINITY, &mut stream_rng(1, 5)).unwrap();
        let b = generate_sample(&c, false, f64::INFINITY, &mut stream_rng(2, 9)).unwrap();
        assert_eq!(a.image, b.image);
    }
}
