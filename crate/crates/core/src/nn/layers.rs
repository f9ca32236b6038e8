//! Layer primitives. Batched tensors are `[batch, channels, height, width]` for
//! images and `[batch, features]` for dense activations.

use super::linalg::gemm;
use super::Tensor;
use crate::{Error, Result};

/// BCE clamps probabilities into `[1e-7, 1 − 1e-7]`.
pub const PROBABILITY_CLAMP: f64 = 1e-7;

pub struct ConvGrads {
    /// `None` when the caller did not ask for the input gradient.
    pub input: Option<Tensor>,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

pub struct DenseGrads {
    pub input: Tensor,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

struct ConvDims {
    batch: usize,
    c_in: usize,
    h: usize,
    w: usize,
    ho: usize,
    wo: usize,
    k: usize,
}

impl ConvDims {
    fn patch(&self) -> usize {
        self.c_in * self.k * self.k
    }

    fn out_pixels(&self) -> usize {
        self.ho * self.wo
    }
}

fn conv_dims(
    input: &Tensor,
    weight: &[f64],
    bias: &[f64],
    c_out: usize,
    k: usize,
) -> Result<ConvDims> {
    input.expect_rank(4, "conv2d")?;
    let s = input.shape();
    let (batch, c_in, h, w) = (s[0], s[1], s[2], s[3]);
    if k == 0 || h < k || w < k {
        return Err(Error::Shape(format!(
            "conv2d with kernel {k} needs spatial size >= {k}, got {h}x{w}"
        )));
    }
    if weight.len() != c_out * c_in * k * k || bias.len() != c_out {
        return Err(Error::Shape(format!(
            "conv2d expects {c_out}x{c_in}x{k}x{k} weights and {c_out} biases, got {} and {}",
            weight.len(),
            bias.len()
        )));
    }
    Ok(ConvDims {
        batch,
        c_in,
        h,
        w,
        ho: h - k + 1,
        wo: w - k + 1,
        k,
    })
}

/// Unfolds one `[c_in, h, w]` sample into a `(c_in·k·k) × (ho·wo)` patch matrix.
fn im2col(x: &[f64], d: &ConvDims, cols: &mut [f64]) {
    let np = d.out_pixels();
    for ci in 0..d.c_in {
        for ky in 0..d.k {
            for kx in 0..d.k {
                let row = ((ci * d.k + ky) * d.k + kx) * np;
                for oy in 0..d.ho {
                    let src = (ci * d.h + oy + ky) * d.w + kx;
                    cols[row + oy * d.wo..row + (oy + 1) * d.wo]
                        .copy_from_slice(&x[src..src + d.wo]);
                }
            }
        }
    }
}

fn col2im(cols: &[f64], d: &ConvDims, dx: &mut [f64]) {
    let np = d.out_pixels();
    for ci in 0..d.c_in {
        for ky in 0..d.k {
            for kx in 0..d.k {
                let row = ((ci * d.k + ky) * d.k + kx) * np;
                for oy in 0..d.ho {
                    let dst = (ci * d.h + oy + ky) * d.w + kx;
                    for (t, s) in dx[dst..dst + d.wo]
                        .iter_mut()
                        .zip(&cols[row + oy * d.wo..row + (oy + 1) * d.wo])
                    {
                        *t += s;
                    }
                }
            }
        }
    }
}

/// Valid (unpadded), stride-1 cross-correlation with a per-channel bias.
/// `weight` is `[c_out, c_in, k, k]` row-major.
pub fn conv2d_forward(
    input: &Tensor,
    weight: &[f64],
    bias: &[f64],
    c_out: usize,
    k: usize,
) -> Result<Tensor> {
    let d = conv_dims(input, weight, bias, c_out, k)?;
    let (patch, np) = (d.patch(), d.out_pixels());
    let in_len = d.c_in * d.h * d.w;
    let mut out = Tensor::zeros(vec![d.batch, c_out, d.ho, d.wo]);
    let mut cols = vec![0.0; patch * np];
    for b in 0..d.batch {
        im2col(&input.data()[b * in_len..(b + 1) * in_len], &d, &mut cols);
        let ob = &mut out.data_mut()[b * c_out * np..(b + 1) * c_out * np];
        for (o, chunk) in ob.chunks_exact_mut(np).enumerate() {
            chunk.fill(bias[o]);
        }
        gemm(
            c_out,
            patch,
            np,
            1.0,
            weight,
            (patch, 1),
            &cols,
            (np, 1),
            1.0,
            ob,
            (np, 1),
        );
    }
    Ok(out)
}

pub fn conv2d_backward(
    input: &Tensor,
    weight: &[f64],
    c_out: usize,
    k: usize,
    grad_out: &Tensor,
    need_input: bool,
) -> Result<ConvGrads> {
    let zeros_bias = vec![0.0; c_out];
    let d = conv_dims(input, weight, &zeros_bias, c_out, k)?;
    if grad_out.shape() != [d.batch, c_out, d.ho, d.wo] {
        return Err(Error::Shape(format!(
            "conv2d gradient has shape {:?}, expected {:?}",
            grad_out.shape(),
            [d.batch, c_out, d.ho, d.wo]
        )));
    }
    let (patch, np) = (d.patch(), d.out_pixels());
    let in_len = d.c_in * d.h * d.w;
    let mut gw = vec![0.0; c_out * patch];
    let mut gb = vec![0.0; c_out];
    let mut gx = need_input.then(|| Tensor::zeros(input.shape().to_vec()));
    let mut cols = vec![0.0; patch * np];
    let mut dcols = vec![0.0; if need_input { patch * np } else { 0 }];
    for b in 0..d.batch {
        let go = &grad_out.data()[b * c_out * np..(b + 1) * c_out * np];
        for (o, chunk) in go.chunks_exact(np).enumerate() {
            gb[o] += chunk.iter().sum::<f64>();
        }
        im2col(&input.data()[b * in_len..(b + 1) * in_len], &d, &mut cols);
        gemm(
            c_out,
            np,
            patch,
            1.0,
            go,
            (np, 1),
            &cols,
            (1, np),
            1.0,
            &mut gw,
            (patch, 1),
        );
        if let Some(gx) = gx.as_mut() {
            gemm(
                patch,
                c_out,
                np,
                1.0,
                weight,
                (1, patch),
                go,
                (np, 1),
                0.0,
                &mut dcols,
                (np, 1),
            );
            col2im(&dcols, &d, &mut gx.data_mut()[b * in_len..(b + 1) * in_len]);
        }
    }
    Ok(ConvGrads {
        input: gx,
        weight: gw,
        bias: gb,
    })
}

/// Non-overlapping 2×2 max pooling. Also returns, per output element, the flat
/// input index of the first maximum in its window (row-major scan).
pub fn maxpool2x2_forward(input: &Tensor) -> Result<(Tensor, Vec<usize>)> {
    input.expect_rank(4, "maxpool2x2")?;
    let s = input.shape();
    let (batch, c, h, w) = (s[0], s[1], s[2], s[3]);
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::Shape(format!(
            "maxpool2x2 needs even spatial dimensions, got {h}x{w}"
        )));
    }
    let (ho, wo) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(batch * c * ho * wo);
    let mut argmax = Vec::with_capacity(batch * c * ho * wo);
    let x = input.data();
    for plane in 0..batch * c {
        let base = plane * h * w;
        for oy in 0..ho {
            for ox in 0..wo {
                let top = base + 2 * oy * w + 2 * ox;
                let mut best = top;
                for idx in [top + 1, top + w, top + w + 1] {
                    if x[idx] > x[best] {
                        best = idx;
                    }
                }
                out.push(x[best]);
                argmax.push(best);
            }
        }
    }
    Ok((Tensor::new(vec![batch, c, ho, wo], out)?, argmax))
}

pub fn maxpool2x2_backward(
    input_shape: &[usize],
    argmax: &[usize],
    grad_out: &Tensor,
) -> Result<Tensor> {
    if argmax.len() != grad_out.len() {
        return Err(Error::Shape(
            "maxpool2x2 gradient does not match its argmax record".into(),
        ));
    }
    let mut gx = Tensor::zeros(input_shape.to_vec());
    let gxd = gx.data_mut();
    for (&idx, &g) in argmax.iter().zip(grad_out.data()) {
        gxd[idx] += g;
    }
    Ok(gx)
}

fn dense_dims(x: &Tensor, weight: &[f64], out: usize) -> Result<(usize, usize)> {
    x.expect_rank(2, "dense")?;
    let (batch, inp) = (x.shape()[0], x.shape()[1]);
    if weight.len() != out * inp {
        return Err(Error::Shape(format!(
            "dense expects {out}x{inp} weights, got {}",
            weight.len()
        )));
    }
    Ok((batch, inp))
}

/// `y = x · Wᵀ + b` with `W` stored `[out, in]`.
pub fn dense_forward(x: &Tensor, weight: &[f64], bias: &[f64], out: usize) -> Result<Tensor> {
    let (batch, inp) = dense_dims(x, weight, out)?;
    if bias.len() != out {
        return Err(Error::Shape(format!(
            "dense expects {out} biases, got {}",
            bias.len()
        )));
    }
    let mut y = Vec::with_capacity(batch * out);
    for _ in 0..batch {
        y.extend_from_slice(bias);
    }
    gemm(
        batch,
        inp,
        out,
        1.0,
        x.data(),
        (inp, 1),
        weight,
        (1, inp),
        1.0,
        &mut y,
        (out, 1),
    );
    Tensor::new(vec![batch, out], y)
}

pub fn dense_backward(
    x: &Tensor,
    weight: &[f64],
    out: usize,
    grad_out: &Tensor,
) -> Result<DenseGrads> {
    let (batch, inp) = dense_dims(x, weight, out)?;
    if grad_out.shape() != [batch, out] {
        return Err(Error::Shape(format!(
            "dense gradient has shape {:?}, expected [{batch}, {out}]",
            grad_out.shape()
        )));
    }
    let go = grad_out.data();
    let mut gx = vec![0.0; batch * inp];
    gemm(
        batch,
        out,
        inp,
        1.0,
        go,
        (out, 1),
        weight,
        (inp, 1),
        0.0,
        &mut gx,
        (inp, 1),
    );
    let mut gw = vec![0.0; out * inp];
    gemm(
        out,
        batch,
        inp,
        1.0,
        go,
        (1, out),
        x.data(),
        (inp, 1),
        0.0,
        &mut gw,
        (inp, 1),
    );
    let mut gb = vec![0.0; out];
    for row in go.chunks_exact(out) {
        for (g, v) in gb.iter_mut().zip(row) {
            *g += v;
        }
    }
    Ok(DenseGrads {
        input: Tensor::new(vec![batch, inp], gx)?,
        weight: gw,
        bias: gb,
    })
}

pub fn relu_forward(x: &Tensor) -> Tensor {
    let data = x.data().iter().map(|&v| v.max(0.0)).collect();
    Tensor::new(x.shape().to_vec(), data).expect("same shape")
}

/// Gradient through ReLU given its forward output; units with output 0 pass nothing.
pub fn relu_backward(output: &Tensor, grad_out: &Tensor) -> Tensor {
    let data = output
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&y, &g)| if y > 0.0 { g } else { 0.0 })
        .collect();
    Tensor::new(output.shape().to_vec(), data).expect("same shape")
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn clamp_probability(p: f64) -> f64 {
    p.clamp(PROBABILITY_CLAMP, 1.0 - PROBABILITY_CLAMP)
}

/// Binary cross-entropy `−[y ln p + (1 − y) ln(1 − p)]` on the clamped probability.
pub fn bce_loss(p: f64, y: f64) -> f64 {
    let p = clamp_probability(p);
    -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
}

/// `∂ bce_loss / ∂p`; zero where the clamp is active.
pub fn bce_grad(p: f64, y: f64) -> f64 {
    if !(PROBABILITY_CLAMP..=1.0 - PROBABILITY_CLAMP).contains(&p) {
        return 0.0;
    }
    -y / p + (1.0 - y) / (1.0 - p)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_kernel_crops_border() {
        let x: Vec<f64> = (0..25).map(|v| v as f64).collect();
        let input = Tensor::new(vec![1, 1, 5, 5], x.clone()).unwrap();
        let mut w = vec![0.0; 9];
        w[4] = 1.0;
        let out = conv2d_forward(&input, &w, &[0.0], 1, 3).unwrap();
        assert_eq!(out.shape(), &[1, 1, 3, 3]);
        let expect: Vec<f64> = (1..4)
            .flat_map(|r| (1..4).map(move |c| (r * 5 + c) as f64))
            .collect();
        assert_eq!(out.data(), &expect[..]);
    }

    #[test]
    fn zero_input_gives_bias() {
        let input = Tensor::zeros(vec![2, 2, 6, 6]);
        let w: Vec<f64> = (0..3 * 2 * 9).map(|v| v as f64 * 0.1).collect();
        let out = conv2d_forward(&input, &w, &[1.0, -2.0, 0.5], 3, 3).unwrap();
        for b in 0..2 {
            for (o, bias) in [1.0, -2.0, 0.5].iter().enumerate() {
                let start = (b * 3 + o) * 16;
                assert!(out.data()[start..start + 16].iter().all(|v| v == bias));
            }
        }
    }

    #[test]
    fn classifier_conv_shapes() {
        let input = Tensor::zeros(vec![1, 2, 26, 26]);
        let out = conv2d_forward(&input, &vec![0.0; 16 * 2 * 9], &[0.0; 16], 16, 3).unwrap();
        assert_eq!(out.shape(), &[1, 16, 24, 24]);
        let pooled = maxpool2x2_forward(&Tensor::zeros(vec![1, 32, 22, 22]))
            .unwrap()
            .0;
        assert_eq!(pooled.shape(), &[1, 32, 11, 11]);
        assert_eq!(pooled.len(), 3872);
    }

    #[test]
    fn conv_rejects_bad_shapes() {
        let input = Tensor::zeros(vec![1, 1, 2, 2]);
        assert!(matches!(
            conv2d_forward(&input, &[0.0; 9], &[0.0], 1, 3),
            Err(Error::Shape(_))
        ));
        let input = Tensor::zeros(vec![1, 1, 4, 4]);
        assert!(conv2d_forward(&input, &[0.0; 8], &[0.0], 1, 3).is_err());
    }

    #[test]
    fn pool_examples() {
        let constant = Tensor::new(vec![1, 1, 4, 4], vec![2.5; 16]).unwrap();
        let (out, _) = maxpool2x2_forward(&constant).unwrap();
        assert_eq!(out.data(), &[2.5; 4]);

        #[rustfmt::skip]
        let x = vec![
            1.0, 9.0, 0.0, 0.0,
            3.0, 2.0, 0.0, 7.0,
            4.0, 0.0, 1.0, 1.0,
            0.0, 0.0, 8.0, 1.0,
        ];
        let (out, arg) = maxpool2x2_forward(&Tensor::new(vec![1, 1, 4, 4], x).unwrap()).unwrap();
        assert_eq!(out.data(), &[9.0, 7.0, 4.0, 8.0]);
        assert_eq!(arg, vec![1, 7, 8, 14]);

        assert!(maxpool2x2_forward(&Tensor::zeros(vec![1, 1, 3, 4])).is_err());
    }

    #[test]
    #[allow(clippy::approx_constant)]
    fn bce_examples() {
        assert!((bce_loss(0.5, 0.0) - std::f64::consts::LN_2).abs() < 1e-15);
        assert!((bce_loss(0.5, 1.0) - 0.6931).abs() < 1e-4);
        assert!((bce_loss(0.9, 0.0) - 2.3026).abs() < 1e-4);
        assert!(bce_loss(1.0, 1.0) < 1e-6);
        assert!(bce_loss(0.0, 0.0) < 1e-6);
        assert!(bce_loss(0.0, 1.0).is_finite());
        assert_eq!(bce_grad(1.0, 0.0), 0.0);
    }

    #[test]
    fn relu_blocks_negative_units() {
        let pre = Tensor::new(vec![1, 3], vec![-1.0, 0.5, -0.1]).unwrap();
        let post = relu_forward(&pre);
        let g = relu_backward(
            &post,
            &Tensor::new(vec![1, 3], vec![1.0, 1.0, 1.0]).unwrap(),
        );
        assert_eq!(g.data(), &[0.0, 1.0, 0.0]);
    }

    #[test]
    fn sigmoid_is_stable() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(-800.0) >= 0.0 && sigmoid(800.0) <= 1.0);
        assert!((sigmoid(2.0) + sigmoid(-2.0) - 1.0).abs() < 1e-15);
    }
}
