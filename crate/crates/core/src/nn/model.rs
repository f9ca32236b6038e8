use rand::Rng;
use serde::{Deserialize, Serialize};

use super::layers::{
    conv2d_backward, conv2d_forward, dense_backward, dense_forward, maxpool2x2_backward,
    maxpool2x2_forward, relu_backward, relu_forward, sigmoid,
};
use super::Tensor;
use crate::synth::IQPair;
use crate::{Error, Result};

/// Layer sizes of the classifier. The default is the 2×26×26 → 1 network; smaller
/// instances share the same topology and are handy for gradient checks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub in_channels: usize,
    pub height: usize,
    pub width: usize,
    pub conv1_filters: usize,
    pub conv2_filters: usize,
    pub kernel: usize,
    pub hidden: usize,
}

impl Default for Architecture {
    fn default() -> Self {
        Self {
            in_channels: 2,
            height: 26,
            width: 26,
            conv1_filters: 16,
            conv2_filters: 32,
            kernel: 3,
            hidden: 256,
        }
    }
}

/// Names of the eight parameter tensors in checkpoint order.
pub const PARAM_NAMES: [&str; 8] = [
    "conv1.weight",
    "conv1.bias",
    "conv2.weight",
    "conv2.bias",
    "fc1.weight",
    "fc1.bias",
    "fc2.weight",
    "fc2.bias",
];

impl Architecture {
    /// Per-sample activation shapes from input to output.
    pub fn shape_chain(&self) -> Result<Vec<Vec<usize>>> {
        let k = self.kernel;
        if [
            self.in_channels,
            self.conv1_filters,
            self.conv2_filters,
            self.hidden,
            k,
        ]
        .contains(&0)
        {
            return Err(Error::Shape("architecture sizes must be positive".into()));
        }
        if self.height < 2 * k - 1 || self.width < 2 * k - 1 {
            return Err(Error::Shape(format!(
                "input {}x{} too small for two {k}x{k} convolutions",
                self.height, self.width
            )));
        }
        let (h1, w1) = (self.height - k + 1, self.width - k + 1);
        let (h2, w2) = (h1 - k + 1, w1 - k + 1);
        if h2 % 2 != 0 || w2 % 2 != 0 || h2 == 0 || w2 == 0 {
            return Err(Error::Shape(format!(
                "conv2 output {h2}x{w2} cannot be max-pooled 2x2"
            )));
        }
        let (h3, w3) = (h2 / 2, w2 / 2);
        Ok(vec![
            vec![self.in_channels, self.height, self.width],
            vec![self.conv1_filters, h1, w1],
            vec![self.conv2_filters, h2, w2],
            vec![self.conv2_filters, h3, w3],
            vec![self.conv2_filters * h3 * w3],
            vec![self.hidden],
            vec![1],
        ])
    }

    pub fn flat_features(&self) -> Result<usize> {
        Ok(self.shape_chain()?[4][0])
    }

    pub fn param_shapes(&self) -> Result<[Vec<usize>; 8]> {
        let flat = self.flat_features()?;
        let k = self.kernel;
        Ok([
            vec![self.conv1_filters, self.in_channels, k, k],
            vec![self.conv1_filters],
            vec![self.conv2_filters, self.conv1_filters, k, k],
            vec![self.conv2_filters],
            vec![self.hidden, flat],
            vec![self.hidden],
            vec![1, self.hidden],
            vec![1],
        ])
    }

    pub fn n_params(&self) -> Result<usize> {
        Ok(self
            .param_shapes()?
            .iter()
            .map(|s| s.iter().product::<usize>())
            .sum())
    }

    /// Half-width of the uniform init range for each weight tensor: He-uniform
    /// `sqrt(6 / fan_in)` for the ReLU layers, Glorot-uniform
    /// `sqrt(6 / (fan_in + fan_out))` for the sigmoid output.
    pub fn init_bounds(&self) -> Result<[f64; 4]> {
        let k2 = self.kernel * self.kernel;
        let flat = self.flat_features()?;
        Ok([
            (6.0 / (self.in_channels * k2) as f64).sqrt(),
            (6.0 / (self.conv1_filters * k2) as f64).sqrt(),
            (6.0 / flat as f64).sqrt(),
            (6.0 / (self.hidden + 1) as f64).sqrt(),
        ])
    }
}

/// Classifier parameters θ, stored as eight flat tensors in [`PARAM_NAMES`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    arch: Architecture,
    tensors: Vec<Vec<f64>>,
}

/// Activations kept from a forward pass for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    input: Tensor,
    conv1: Tensor,
    conv2: Tensor,
    pool_argmax: Vec<usize>,
    flat: Tensor,
    hidden: Tensor,
    logits: Vec<f64>,
    probabilities: Vec<f64>,
}

impl ForwardCache {
    pub fn logits(&self) -> &[f64] {
        &self.logits
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.probabilities
    }

    /// fc1 output after ReLU, `[batch, hidden]`.
    pub fn hidden(&self) -> &Tensor {
        &self.hidden
    }

    pub fn batch(&self) -> usize {
        self.logits.len()
    }

    /// True when both passes share every ReLU on/off state and every pooling
    /// argmax, i.e. the network is the same affine map around both inputs.
    pub fn same_linear_region(&self, other: &ForwardCache) -> bool {
        let on = |t: &Tensor| t.data().iter().map(|&v| v > 0.0).collect::<Vec<_>>();
        self.pool_argmax == other.pool_argmax
            && on(&self.conv1) == on(&other.conv1)
            && on(&self.conv2) == on(&other.conv2)
            && on(&self.hidden) == on(&other.hidden)
    }
}

/// Sigmoid output pulled just inside the open unit interval, so a saturated
/// logit still yields a probability in `(0, 1)`.
fn output_probability(z: f64) -> f64 {
    sigmoid(z).clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
}

impl ModelParams {
    pub fn zeros(arch: Architecture) -> Result<Self> {
        let tensors = arch
            .param_shapes()?
            .iter()
            .map(|s| vec![0.0; s.iter().product()])
            .collect();
        Ok(Self { arch, tensors })
    }

    /// Uniform fan-scaled weights, zero biases.
    pub fn init<R: Rng + ?Sized>(arch: Architecture, rng: &mut R) -> Result<Self> {
        let mut params = Self::zeros(arch)?;
        let bounds = arch.init_bounds()?;
        for (layer, &bound) in bounds.iter().enumerate() {
            for w in params.tensors[2 * layer].iter_mut() {
                *w = rng.random_range(-bound..bound);
            }
        }
        Ok(params)
    }

    pub fn from_tensors(arch: Architecture, tensors: Vec<Vec<f64>>) -> Result<Self> {
        let shapes = arch.param_shapes()?;
        if tensors.len() != shapes.len() {
            return Err(Error::Shape(format!(
                "expected {} parameter tensors, got {}",
                shapes.len(),
                tensors.len()
            )));
        }
        for ((name, shape), t) in PARAM_NAMES.iter().zip(&shapes).zip(&tensors) {
            let n: usize = shape.iter().product();
            if t.len() != n {
                return Err(Error::Shape(format!(
                    "{name} expects {n} values ({shape:?}), got {}",
                    t.len()
                )));
            }
            if t.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numerical(format!(
                    "{name} contains a non-finite value"
                )));
            }
        }
        Ok(Self { arch, tensors })
    }

    /// Splits a flat vector laid out in checkpoint order.
    pub fn from_flat(arch: Architecture, flat: &[f64]) -> Result<Self> {
        let shapes = arch.param_shapes()?;
        let total: usize = shapes.iter().map(|s| s.iter().product::<usize>()).sum();
        if flat.len() != total {
            return Err(Error::Shape(format!(
                "expected {total} parameters, got {}",
                flat.len()
            )));
        }
        let mut tensors = Vec::with_capacity(8);
        let mut offset = 0;
        for s in &shapes {
            let n: usize = s.iter().product();
            tensors.push(flat[offset..offset + n].to_vec());
            offset += n;
        }
        Self::from_tensors(arch, tensors)
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.tensors.concat()
    }

    pub fn architecture(&self) -> Architecture {
        self.arch
    }

    pub fn tensors(&self) -> &[Vec<f64>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Vec<f64>] {
        &mut self.tensors
    }

    pub fn n_params(&self) -> usize {
        self.tensors.iter().map(Vec::len).sum()
    }

    pub fn forward(&self, input: &Tensor) -> Result<ForwardCache> {
        let a = &self.arch;
        let chain = a.shape_chain()?;
        input.expect_rank(4, "model input")?;
        if input.shape()[1..] != chain[0][..] {
            return Err(Error::Shape(format!(
                "model expects per-sample shape {:?}, got {:?}",
                chain[0],
                &input.shape()[1..]
            )));
        }
        let batch = input.batch();
        let t = &self.tensors;
        let conv1 = relu_forward(&conv2d_forward(
            input,
            &t[0],
            &t[1],
            a.conv1_filters,
            a.kernel,
        )?);
        let conv2 = relu_forward(&conv2d_forward(
            &conv1,
            &t[2],
            &t[3],
            a.conv2_filters,
            a.kernel,
        )?);
        let (pooled, pool_argmax) = maxpool2x2_forward(&conv2)?;
        let flat = pooled.reshape(vec![batch, chain[4][0]])?;
        let hidden = relu_forward(&dense_forward(&flat, &t[4], &t[5], a.hidden)?);
        let logits = dense_forward(&hidden, &t[6], &t[7], 1)?.into_data();
        let probabilities = logits.iter().map(|&z| output_probability(z)).collect();
        Ok(ForwardCache {
            input: input.clone(),
            conv1,
            conv2,
            pool_argmax,
            flat,
            hidden,
            logits,
            probabilities,
        })
    }

    pub fn predict(&self, input: &Tensor) -> Result<Vec<f64>> {
        Ok(self.forward(input)?.probabilities)
    }

    /// Parameter gradients given `∂L/∂z` for each logit in the batch. The result
    /// mirrors [`ModelParams::tensors`].
    pub fn backward(&self, cache: &ForwardCache, grad_logits: &[f64]) -> Result<Vec<Vec<f64>>> {
        let a = &self.arch;
        let batch = cache.batch();
        if grad_logits.len() != batch {
            return Err(Error::Shape(format!(
                "expected {batch} logit gradients, got {}",
                grad_logits.len()
            )));
        }
        let t = &self.tensors;
        let g_out = Tensor::new(vec![batch, 1], grad_logits.to_vec())?;
        let fc2 = dense_backward(&cache.hidden, &t[6], 1, &g_out)?;
        let g_hidden = relu_backward(&cache.hidden, &fc2.input);
        let fc1 = dense_backward(&cache.flat, &t[4], a.hidden, &g_hidden)?;
        let mut pooled_shape = cache.conv2.shape().to_vec();
        pooled_shape[2] /= 2;
        pooled_shape[3] /= 2;
        let g_pooled = fc1.input.reshape(pooled_shape)?;
        let g_conv2 = maxpool2x2_backward(cache.conv2.shape(), &cache.pool_argmax, &g_pooled)?;
        let g_conv2 = relu_backward(&cache.conv2, &g_conv2);
        let c2 = conv2d_backward(
            &cache.conv1,
            &t[2],
            a.conv2_filters,
            a.kernel,
            &g_conv2,
            true,
        )?;
        let g_conv1 = relu_backward(&cache.conv1, c2.input.as_ref().expect("requested"));
        let c1 = conv2d_backward(
            &cache.input,
            &t[0],
            a.conv1_filters,
            a.kernel,
            &g_conv1,
            false,
        )?;
        Ok(vec![
            c1.weight, c1.bias, c2.weight, c2.bias, fc1.weight, fc1.bias, fc2.weight, fc2.bias,
        ])
    }
}

/// Stacks images into a `[batch, 2, height, width]` tensor (I channel first).
/// With `standardize`, each image is shifted and scaled to zero mean and unit
/// variance over both channels; constant images are only centred.
pub fn images_to_tensor<'a, I>(images: I, standardize: bool) -> Result<Tensor>
where
    I: IntoIterator<Item = &'a IQPair>,
{
    let mut data = Vec::new();
    let mut dims: Option<(usize, usize)> = None;
    let mut batch = 0;
    for img in images {
        let d = (img.height(), img.width());
        match dims {
            None => dims = Some(d),
            Some(prev) if prev != d => {
                return Err(Error::Shape(format!(
                    "images in a batch differ in size: {prev:?} vs {d:?}"
                )))
            }
            _ => {}
        }
        let start = data.len();
        data.extend_from_slice(img.i_channel());
        data.extend_from_slice(img.q_channel());
        if standardize {
            let x = &mut data[start..];
            let n = x.len() as f64;
            let mean = x.iter().sum::<f64>() / n;
            let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            let scale = if var > 0.0 { 1.0 / var.sqrt() } else { 1.0 };
            for v in x.iter_mut() {
                *v = (*v - mean) * scale;
            }
        }
        batch += 1;
    }
    let (h, w) = dims.unwrap_or((0, 0));
    Tensor::new(vec![batch, 2, h, w], data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn default_shape_chain() {
        let chain = Architecture::default().shape_chain().unwrap();
        assert_eq!(
            chain,
            vec![
                vec![2, 26, 26],
                vec![16, 24, 24],
                vec![32, 22, 22],
                vec![32, 11, 11],
                vec![3872],
                vec![256],
                vec![1],
            ]
        );
        assert_eq!(
            Architecture::default().n_params().unwrap(),
            288 + 16 + 4608 + 32 + 991_232 + 256 + 256 + 1
        );
    }

    #[test]
    fn odd_pool_input_rejected() {
        let arch = Architecture {
            height: 25,
            ..Architecture::default()
        };
        assert!(matches!(ModelParams::zeros(arch), Err(Error::Shape(_))));
    }

    #[test]
    fn zero_params_give_one_half() {
        let params = ModelParams::zeros(Architecture::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x: Vec<f64> = (0..3 * 2 * 26 * 26)
            .map(|_| rng.random_range(-2.0..2.0))
            .collect();
        let p = params
            .predict(&Tensor::new(vec![3, 2, 26, 26], x).unwrap())
            .unwrap();
        assert_eq!(p, vec![0.5; 3]);
    }

    #[test]
    fn forward_is_pure() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let params = ModelParams::init(Architecture::default(), &mut rng).unwrap();
        let x: Vec<f64> = (0..2 * 26 * 26)
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        let x = Tensor::new(vec![1, 2, 26, 26], x).unwrap();
        let a = params.predict(&x).unwrap();
        let b = params.predict(&x).unwrap();
        assert_eq!(a, b);
        assert!(a[0] > 0.0 && a[0] < 1.0);
    }

    #[test]
    fn saturated_logit_stays_inside_unit_interval() {
        assert!(output_probability(1e3) < 1.0);
        assert!(output_probability(-1e3) > 0.0);
    }

    #[test]
    fn zero_upstream_gradient_gives_zero_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let params = ModelParams::init(Architecture::default(), &mut rng).unwrap();
        let x: Vec<f64> = (0..2 * 2 * 26 * 26)
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        let cache = params
            .forward(&Tensor::new(vec![2, 2, 26, 26], x).unwrap())
            .unwrap();
        let grads = params.backward(&cache, &[0.0, 0.0]).unwrap();
        assert!(grads.iter().flatten().all(|&g| g == 0.0));
    }

    #[test]
    fn flat_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let params = ModelParams::init(Architecture::default(), &mut rng).unwrap();
        let back = ModelParams::from_flat(params.architecture(), &params.flatten()).unwrap();
        assert_eq!(params, back);
        assert!(ModelParams::from_flat(params.architecture(), &[0.0; 3]).is_err());
    }

    #[test]
    fn tensor_from_images() {
        let img = IQPair::new(2, 2, vec![1.0, 2.0, 3.0, 4.0], vec![5.0, 6.0, 7.0, 8.0]).unwrap();
        let t = images_to_tensor([&img, &img], false).unwrap();
        assert_eq!(t.shape(), &[2, 2, 2, 2]);
        assert_eq!(&t.data()[..8], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]);
        let s = images_to_tensor([&img], true).unwrap();
        let mean: f64 = s.data().iter().sum::<f64>() / 8.0;
        let var: f64 = s.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 8.0;
        assert!(mean.abs() < 1e-12 && (var - 1.0).abs() < 1e-12);
    }
}
