//! Layer kernels with explicit backward passes.

use serde::{Deserialize, Serialize};

use super::gemm::{gemm, Mat};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::rng::SplitMix64;

/// Variance floor of [`channel_norm_forward`].
pub const NORM_EPS: f64 = 1e-5;

/// `y = x·W + b` with `W: [in, out]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseParams {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl DenseParams {
    /// Glorot-uniform weights, zero bias.
    pub fn init(inputs: usize, outputs: usize, rng: &mut SplitMix64) -> Self {
        let a = (6.0 / (inputs + outputs) as f64).sqrt();
        let w = (0..inputs * outputs).map(|_| rng.uniform(-a, a)).collect();
        Self { weight: Tensor::new(vec![inputs, outputs], w).expect("shape"), bias: Tensor::zeros(&[outputs]) }
    }

    pub fn inputs(&self) -> usize {
        self.weight.dim(0)
    }

    pub fn outputs(&self) -> usize {
        self.weight.dim(1)
    }
}

pub fn dense_forward(x: &Tensor, p: &DenseParams) -> Result<Tensor> {
    x.expect_rank(2, "dense")?;
    let (n, fin) = (x.dim(0), x.dim(1));
    if fin != p.inputs() {
        return Err(Error::shape(format!("dense expects {} inputs, got {fin}", p.inputs())));
    }
    let fout = p.outputs();
    let mut y = Vec::with_capacity(n * fout);
    for _ in 0..n {
        y.extend_from_slice(p.bias.data());
    }
    gemm(Mat::new(x.data(), n, fin), Mat::new(p.weight.data(), fin, fout), 1.0, &mut y);
    Tensor::new(vec![n, fout], y)
}

/// Gradients `(dx, dW, db)` of `Σ dy ⊙ dense_forward(x, p)`.
pub fn dense_backward(x: &Tensor, p: &DenseParams, dy: &Tensor) -> Result<(Tensor, Tensor, Tensor)> {
    let (dx, dw, db) = dense_backward_impl(x, p, dy, true)?;
    Ok((dx.expect("requested"), dw, db))
}

fn dense_backward_impl(
    x: &Tensor,
    p: &DenseParams,
    dy: &Tensor,
    need_dx: bool,
) -> Result<(Option<Tensor>, Tensor, Tensor)> {
    x.expect_rank(2, "dense backward")?;
    let (n, fin, fout) = (x.dim(0), p.inputs(), p.outputs());
    if x.dim(1) != fin || dy.shape() != [n, fout] {
        return Err(Error::shape(format!(
            "dense backward: x {:?}, dy {:?}, weight {:?}",
            x.shape(),
            dy.shape(),
            p.weight.shape()
        )));
    }
    let dyv = Mat::new(dy.data(), n, fout);
    let mut dw = vec![0.0; fin * fout];
    gemm(Mat::new(x.data(), n, fin).t(), dyv, 0.0, &mut dw);
    let mut db = vec![0.0; fout];
    for row in dy.data().chunks_exact(fout) {
        for (a, b) in db.iter_mut().zip(row) {
            *a += b;
        }
    }
    let dx = if need_dx {
        let mut dx = vec![0.0; n * fin];
        gemm(dyv, Mat::new(p.weight.data(), fin, fout).t(), 0.0, &mut dx);
        Some(Tensor::new(vec![n, fin], dx)?)
    } else {
        None
    };
    Ok((dx, Tensor::new(vec![fin, fout], dw)?, Tensor::new(vec![fout], db)?))
}

/// 2-D cross-correlation with zero padding. `weight: [Cout, Cin, k, k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvParams {
    pub weight: Tensor,
    pub bias: Tensor,
    pub stride: usize,
    pub pad: usize,
}

impl ConvParams {
    pub fn init(cin: usize, cout: usize, kernel: usize, stride: usize, pad: usize, rng: &mut SplitMix64) -> Self {
        let fan = kernel * kernel;
        let a = (6.0 / ((cin + cout) * fan) as f64).sqrt();
        let w = (0..cout * cin * fan).map(|_| rng.uniform(-a, a)).collect();
        Self {
            weight: Tensor::new(vec![cout, cin, kernel, kernel], w).expect("shape"),
            bias: Tensor::zeros(&[cout]),
            stride,
            pad,
        }
    }

    pub fn cout(&self) -> usize {
        self.weight.dim(0)
    }

    pub fn cin(&self) -> usize {
        self.weight.dim(1)
    }

    pub fn kernel(&self) -> usize {
        self.weight.dim(2)
    }

    /// Output spatial size for an `h × w` input.
    pub fn output_size(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let k = self.kernel();
        if self.stride == 0 || h + 2 * self.pad < k || w + 2 * self.pad < k {
            return Err(Error::shape(format!(
                "conv {k}x{k}/stride {} pad {} does not fit a {h}x{w} input",
                self.stride, self.pad
            )));
        }
        Ok(((h + 2 * self.pad - k) / self.stride + 1, (w + 2 * self.pad - k) / self.stride + 1))
    }

    fn is_pointwise(&self) -> bool {
        self.kernel() == 1 && self.stride == 1 && self.pad == 0
    }
}

struct ConvGeom {
    cin: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

impl ConvGeom {
    fn rows(&self) -> usize {
        self.cin * self.k * self.k
    }

    fn cols(&self) -> usize {
        self.ho * self.wo
    }
}

fn im2col(x: &[f64], g: &ConvGeom, col: &mut [f64]) {
    let cols = g.cols();
    for ci in 0..g.cin {
        let plane = &x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ki in 0..g.k {
            for kj in 0..g.k {
                let row = (ci * g.k + ki) * g.k + kj;
                let dst = &mut col[row * cols..(row + 1) * cols];
                for oh in 0..g.ho {
                    let ih = (oh * g.stride + ki) as isize - g.pad as isize;
                    let out = &mut dst[oh * g.wo..(oh + 1) * g.wo];
                    if ih < 0 || ih >= g.h as isize {
                        out.fill(0.0);
                        continue;
                    }
                    let src = &plane[ih as usize * g.w..(ih as usize + 1) * g.w];
                    for (ow, o) in out.iter_mut().enumerate() {
                        let iw = (ow * g.stride + kj) as isize - g.pad as isize;
                        *o = if iw < 0 || iw >= g.w as isize { 0.0 } else { src[iw as usize] };
                    }
                }
            }
        }
    }
}

fn col2im_add(col: &[f64], g: &ConvGeom, dx: &mut [f64]) {
    let cols = g.cols();
    for ci in 0..g.cin {
        let plane = &mut dx[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ki in 0..g.k {
            for kj in 0..g.k {
                let row = (ci * g.k + ki) * g.k + kj;
                let src = &col[row * cols..(row + 1) * cols];
                for oh in 0..g.ho {
                    let ih = (oh * g.stride + ki) as isize - g.pad as isize;
                    if ih < 0 || ih >= g.h as isize {
                        continue;
                    }
                    let dst = &mut plane[ih as usize * g.w..(ih as usize + 1) * g.w];
                    for ow in 0..g.wo {
                        let iw = (ow * g.stride + kj) as isize - g.pad as isize;
                        if iw >= 0 && iw < g.w as isize {
                            dst[iw as usize] += src[oh * g.wo + ow];
                        }
                    }
                }
            }
        }
    }
}

fn conv_geom(x: &Tensor, p: &ConvParams) -> Result<ConvGeom> {
    x.expect_rank(4, "conv2d")?;
    if x.dim(1) != p.cin() {
        return Err(Error::shape(format!("conv2d expects {} channels, got {}", p.cin(), x.dim(1))));
    }
    let (h, w) = (x.dim(2), x.dim(3));
    let (ho, wo) = p.output_size(h, w)?;
    Ok(ConvGeom { cin: p.cin(), h, w, k: p.kernel(), stride: p.stride, pad: p.pad, ho, wo })
}

pub fn conv2d_forward(x: &Tensor, p: &ConvParams) -> Result<Tensor> {
    let g = conv_geom(x, p)?;
    let (n, cout) = (x.dim(0), p.cout());
    let in_plane = g.cin * g.h * g.w;
    let out_plane = cout * g.cols();
    let mut y = vec![0.0; n * out_plane];
    let mut col = if p.is_pointwise() { Vec::new() } else { vec![0.0; g.rows() * g.cols()] };
    let wmat = Mat::new(p.weight.data(), cout, g.rows());
    for s in 0..n {
        let xs = &x.data()[s * in_plane..(s + 1) * in_plane];
        let ys = &mut y[s * out_plane..(s + 1) * out_plane];
        for (co, chunk) in ys.chunks_exact_mut(g.cols()).enumerate() {
            chunk.fill(p.bias.data()[co]);
        }
        let cm = if p.is_pointwise() {
            Mat::new(xs, g.rows(), g.cols())
        } else {
            im2col(xs, &g, &mut col);
            Mat::new(&col, g.rows(), g.cols())
        };
        gemm(wmat, cm, 1.0, ys);
    }
    Tensor::new(vec![n, cout, g.ho, g.wo], y)
}

pub fn conv2d_backward(x: &Tensor, p: &ConvParams, dy: &Tensor) -> Result<(Tensor, Tensor, Tensor)> {
    let (dx, dw, db) = conv2d_backward_impl(x, p, dy, true)?;
    Ok((dx.expect("requested"), dw, db))
}

fn conv2d_backward_impl(
    x: &Tensor,
    p: &ConvParams,
    dy: &Tensor,
    need_dx: bool,
) -> Result<(Option<Tensor>, Tensor, Tensor)> {
    let g = conv_geom(x, p)?;
    let (n, cout) = (x.dim(0), p.cout());
    if dy.shape() != [n, cout, g.ho, g.wo] {
        return Err(Error::shape(format!(
            "conv2d backward: dy {:?}, expected {:?}",
            dy.shape(),
            [n, cout, g.ho, g.wo]
        )));
    }
    let in_plane = g.cin * g.h * g.w;
    let out_plane = cout * g.cols();
    let mut dw = vec![0.0; cout * g.rows()];
    let mut db = vec![0.0; cout];
    let mut dx = if need_dx { vec![0.0; x.len()] } else { Vec::new() };
    let pointwise = p.is_pointwise();
    let mut col = if pointwise { Vec::new() } else { vec![0.0; g.rows() * g.cols()] };
    let mut dcol = if pointwise || !need_dx { Vec::new() } else { vec![0.0; g.rows() * g.cols()] };
    let wmat = Mat::new(p.weight.data(), cout, g.rows());
    for s in 0..n {
        let xs = &x.data()[s * in_plane..(s + 1) * in_plane];
        let dys = &dy.data()[s * out_plane..(s + 1) * out_plane];
        for (co, chunk) in dys.chunks_exact(g.cols()).enumerate() {
            db[co] += chunk.iter().sum::<f64>();
        }
        let dymat = Mat::new(dys, cout, g.cols());
        let cm = if pointwise {
            Mat::new(xs, g.rows(), g.cols())
        } else {
            im2col(xs, &g, &mut col);
            Mat::new(&col, g.rows(), g.cols())
        };
        gemm(dymat, cm.t(), 1.0, &mut dw);
        if need_dx {
            let dxs = &mut dx[s * in_plane..(s + 1) * in_plane];
            if pointwise {
                gemm(wmat.t(), dymat, 1.0, dxs);
            } else {
                gemm(wmat.t(), dymat, 0.0, &mut dcol);
                col2im_add(&dcol, &g, dxs);
            }
        }
    }
    let dx = if need_dx { Some(Tensor::new(x.shape().to_vec(), dx)?) } else { None };
    Ok((dx, Tensor::new(p.weight.shape().to_vec(), dw)?, Tensor::new(vec![cout], db)?))
}

/// Per-sample, per-channel normalization over spatial positions with a
/// learned affine transform.
#[derive(Debug, Clone, PartialEq)]
pub struct NormParams {
    pub gain: Tensor,
    pub shift: Tensor,
}

impl NormParams {
    pub fn identity(channels: usize) -> Self {
        Self { gain: Tensor::full(&[channels], 1.0), shift: Tensor::zeros(&[channels]) }
    }

    pub fn channels(&self) -> usize {
        self.gain.len()
    }
}

fn norm_check(x: &Tensor, gain: &Tensor, shift: &Tensor) -> Result<(usize, usize, usize)> {
    x.expect_rank(4, "channel_norm")?;
    let (n, c) = (x.dim(0), x.dim(1));
    let m = x.dim(2) * x.dim(3);
    if gain.len() != c || shift.len() != c {
        return Err(Error::shape(format!(
            "channel_norm over {c} channels got gain/shift of {}/{}",
            gain.len(),
            shift.len()
        )));
    }
    if m == 0 {
        return Err(Error::shape("channel_norm needs at least one spatial position"));
    }
    Ok((n, c, m))
}

fn moments(v: &[f64]) -> (f64, f64) {
    let m = v.len() as f64;
    let mean = v.iter().sum::<f64>() / m;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / m;
    (mean, var)
}

pub fn channel_norm_forward(x: &Tensor, gain: &Tensor, shift: &Tensor) -> Result<Tensor> {
    let (_, c, m) = norm_check(x, gain, shift)?;
    let mut y = x.data().to_vec();
    for (i, plane) in y.chunks_exact_mut(m).enumerate() {
        let ch = i % c;
        let (mean, var) = moments(plane);
        let inv = 1.0 / (var + NORM_EPS).sqrt();
        let (g, b) = (gain.data()[ch], shift.data()[ch]);
        for v in plane.iter_mut() {
            *v = g * (*v - mean) * inv + b;
        }
    }
    Tensor::new(x.shape().to_vec(), y)
}

/// Gradients `(dx, dgain, dshift)`.
pub fn channel_norm_backward(x: &Tensor, gain: &Tensor, dy: &Tensor) -> Result<(Tensor, Tensor, Tensor)> {
    let (_, c, m) = norm_check(x, gain, gain)?;
    x.expect_same_shape(dy, "channel_norm backward")?;
    let mut dx = vec![0.0; x.len()];
    let mut dgain = vec![0.0; c];
    let mut dshift = vec![0.0; c];
    let mf = m as f64;
    let mut xhat = vec![0.0; m];
    for (i, (plane, dyp)) in x.data().chunks_exact(m).zip(dy.data().chunks_exact(m)).enumerate() {
        let ch = i % c;
        let (mean, var) = moments(plane);
        let inv = 1.0 / (var + NORM_EPS).sqrt();
        let g = gain.data()[ch];
        let mut sum_d = 0.0;
        let mut sum_dx = 0.0;
        for ((xh, &xv), &d) in xhat.iter_mut().zip(plane).zip(dyp) {
            *xh = (xv - mean) * inv;
            dgain[ch] += d * *xh;
            dshift[ch] += d;
            sum_d += d * g;
            sum_dx += d * g * *xh;
        }
        let out = &mut dx[i * m..(i + 1) * m];
        for ((o, &xh), &d) in out.iter_mut().zip(&xhat).zip(dyp) {
            *o = inv / mf * (mf * d * g - sum_d - xh * sum_dx);
        }
    }
    Ok((Tensor::new(x.shape().to_vec(), dx)?, Tensor::new(vec![c], dgain)?, Tensor::new(vec![c], dshift)?))
}

/// Nearest-neighbour 2× upsampling: each pixel becomes a 2×2 block.
pub fn nn_upsample2x_forward(x: &Tensor) -> Result<Tensor> {
    x.expect_rank(4, "upsample")?;
    let (n, c, h, w) = (x.dim(0), x.dim(1), x.dim(2), x.dim(3));
    if h == 0 || w == 0 {
        return Err(Error::shape("upsample needs nonempty spatial dims"));
    }
    let mut y = vec![0.0; n * c * 4 * h * w];
    for (src, dst) in x.data().chunks_exact(h * w).zip(y.chunks_exact_mut(4 * h * w)) {
        for i in 0..2 * h {
            for j in 0..2 * w {
                dst[i * 2 * w + j] = src[(i / 2) * w + j / 2];
            }
        }
    }
    Tensor::new(vec![n, c, 2 * h, 2 * w], y)
}

/// Adjoint of [`nn_upsample2x_forward`]: sums each 2×2 block.
pub fn nn_upsample2x_backward(dy: &Tensor) -> Result<Tensor> {
    dy.expect_rank(4, "upsample backward")?;
    let (n, c, h2, w2) = (dy.dim(0), dy.dim(1), dy.dim(2), dy.dim(3));
    if h2 % 2 != 0 || w2 % 2 != 0 || h2 == 0 || w2 == 0 {
        return Err(Error::shape(format!("upsample backward needs even spatial dims, got {h2}x{w2}")));
    }
    let (h, w) = (h2 / 2, w2 / 2);
    let mut dx = vec![0.0; n * c * h * w];
    for (src, dst) in dy.data().chunks_exact(h2 * w2).zip(dx.chunks_exact_mut(h * w)) {
        for i in 0..h2 {
            for j in 0..w2 {
                dst[(i / 2) * w + j / 2] += src[i * w2 + j];
            }
        }
    }
    Tensor::new(vec![n, c, h, w], dx)
}

pub fn relu(x: &Tensor) -> Tensor {
    x.map(|v| if v > 0.0 { v } else { 0.0 })
}

/// Passes `dy` where `x > 0`; zero at the kink.
pub fn relu_backward(x: &Tensor, dy: &Tensor) -> Result<Tensor> {
    x.expect_same_shape(dy, "relu backward")?;
    let data = x.data().iter().zip(dy.data()).map(|(&xv, &d)| if xv > 0.0 { d } else { 0.0 }).collect();
    Tensor::new(x.shape().to_vec(), data)
}

pub fn sigmoid(x: &Tensor) -> Tensor {
    x.map(|v| 1.0 / (1.0 + (-v).exp()))
}

pub fn sigmoid_backward(x: &Tensor, dy: &Tensor) -> Result<Tensor> {
    x.expect_same_shape(dy, "sigmoid backward")?;
    let data = x
        .data()
        .iter()
        .zip(dy.data())
        .map(|(&xv, &d)| {
            let s = 1.0 / (1.0 + (-xv).exp());
            d * s * (1.0 - s)
        })
        .collect();
    Tensor::new(x.shape().to_vec(), data)
}

/// One network stage.
#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Dense(DenseParams),
    Conv2d(ConvParams),
    ChannelNorm(NormParams),
    Relu,
    Sigmoid,
    Upsample2x,
}

/// Architecture-only description of a [`Layer`], used in checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Dense { inputs: usize, outputs: usize },
    Conv2d { cin: usize, cout: usize, kernel: usize, stride: usize, pad: usize },
    ChannelNorm { channels: usize },
    Relu,
    Sigmoid,
    Upsample2x,
}

impl Layer {
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        match self {
            Layer::Dense(p) => dense_forward(x, p),
            Layer::Conv2d(p) => conv2d_forward(x, p),
            Layer::ChannelNorm(p) => channel_norm_forward(x, &p.gain, &p.shift),
            Layer::Relu => Ok(relu(x)),
            Layer::Sigmoid => Ok(sigmoid(x)),
            Layer::Upsample2x => nn_upsample2x_forward(x),
        }
    }

    /// Input gradient (when requested) and parameter gradients in
    /// [`Layer::params`] order.
    pub fn backward(&self, x: &Tensor, dy: &Tensor, need_dx: bool) -> Result<(Option<Tensor>, Vec<Tensor>)> {
        Ok(match self {
            Layer::Dense(p) => {
                let (dx, dw, db) = dense_backward_impl(x, p, dy, need_dx)?;
                (dx, vec![dw, db])
            }
            Layer::Conv2d(p) => {
                let (dx, dw, db) = conv2d_backward_impl(x, p, dy, need_dx)?;
                (dx, vec![dw, db])
            }
            Layer::ChannelNorm(p) => {
                let (dx, dg, ds) = channel_norm_backward(x, &p.gain, dy)?;
                (Some(dx), vec![dg, ds])
            }
            Layer::Relu => (Some(relu_backward(x, dy)?), vec![]),
            Layer::Sigmoid => (Some(sigmoid_backward(x, dy)?), vec![]),
            Layer::Upsample2x => (Some(nn_upsample2x_backward(dy)?), vec![]),
        })
    }

    pub fn params(&self) -> Vec<&Tensor> {
        match self {
            Layer::Dense(p) => vec![&p.weight, &p.bias],
            Layer::Conv2d(p) => vec![&p.weight, &p.bias],
            Layer::ChannelNorm(p) => vec![&p.gain, &p.shift],
            _ => vec![],
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        match self {
            Layer::Dense(p) => vec![&mut p.weight, &mut p.bias],
            Layer::Conv2d(p) => vec![&mut p.weight, &mut p.bias],
            Layer::ChannelNorm(p) => vec![&mut p.gain, &mut p.shift],
            _ => vec![],
        }
    }

    pub fn spec(&self) -> LayerSpec {
        match self {
            Layer::Dense(p) => LayerSpec::Dense { inputs: p.inputs(), outputs: p.outputs() },
            Layer::Conv2d(p) => {
                LayerSpec::Conv2d { cin: p.cin(), cout: p.cout(), kernel: p.kernel(), stride: p.stride, pad: p.pad }
            }
            Layer::ChannelNorm(p) => LayerSpec::ChannelNorm { channels: p.channels() },
            Layer::Relu => LayerSpec::Relu,
            Layer::Sigmoid => LayerSpec::Sigmoid,
            Layer::Upsample2x => LayerSpec::Upsample2x,
        }
    }

    /// Zero-parameter layer of the given architecture.
    pub fn from_spec(spec: &LayerSpec) -> Self {
        match *spec {
            LayerSpec::Dense { inputs, outputs } => {
                Layer::Dense(DenseParams { weight: Tensor::zeros(&[inputs, outputs]), bias: Tensor::zeros(&[outputs]) })
            }
            LayerSpec::Conv2d { cin, cout, kernel, stride, pad } => Layer::Conv2d(ConvParams {
                weight: Tensor::zeros(&[cout, cin, kernel, kernel]),
                bias: Tensor::zeros(&[cout]),
                stride,
                pad,
            }),
            LayerSpec::ChannelNorm { channels } => Layer::ChannelNorm(NormParams::identity(channels)),
            LayerSpec::Relu => Layer::Relu,
            LayerSpec::Sigmoid => Layer::Sigmoid,
            LayerSpec::Upsample2x => Layer::Upsample2x,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn dense_identity_and_zero_input() {
        let p = DenseParams { weight: t(&[3, 3], &[1., 0., 0., 0., 1., 0., 0., 0., 1.]), bias: Tensor::zeros(&[3]) };
        let x = t(&[2, 3], &[1., -2., 3., 0.5, 0.25, -1.]);
        assert_eq!(dense_forward(&x, &p).unwrap(), x);
        let p = DenseParams { weight: t(&[3, 2], &[1., 2., 3., 4., 5., 6.]), bias: t(&[2], &[0.5, -1.5]) };
        let y = dense_forward(&Tensor::zeros(&[2, 3]), &p).unwrap();
        assert_eq!(y.data(), &[0.5, -1.5, 0.5, -1.5]);
        assert!(dense_forward(&Tensor::zeros(&[2, 4]), &p).is_err());
    }

    #[test]
    fn dense_scalar_chain_rule() {
        let p = DenseParams { weight: t(&[1, 1], &[3.0]), bias: t(&[1], &[0.0]) };
        let x = t(&[1, 1], &[2.0]);
        let dy = t(&[1, 1], &[0.5]);
        let (dx, dw, db) = dense_backward(&x, &p, &dy).unwrap();
        assert_eq!(dx.data(), &[1.5]);
        assert_eq!(dw.data(), &[1.0]);
        assert_eq!(db.data(), &[0.5]);
        let (dx, dw, db) = dense_backward(&x, &p, &Tensor::zeros(&[1, 1])).unwrap();
        assert!(dx.data().iter().chain(dw.data()).chain(db.data()).all(|&v| v == 0.0));
    }

    #[test]
    fn conv_identity_and_box_sum() {
        let mut rng = SplitMix64::new(1);
        let x = Tensor::new(vec![1, 1, 4, 5], (0..20).map(|_| rng.next_f64()).collect()).unwrap();
        let id = ConvParams { weight: Tensor::full(&[1, 1, 1, 1], 1.0), bias: Tensor::zeros(&[1]), stride: 1, pad: 0 };
        assert_eq!(conv2d_forward(&x, &id).unwrap(), x);

        let c = 0.7;
        let box3 =
            ConvParams { weight: Tensor::full(&[1, 1, 3, 3], 1.0), bias: Tensor::zeros(&[1]), stride: 1, pad: 0 };
        let y = conv2d_forward(&Tensor::full(&[1, 1, 5, 5], c), &box3).unwrap();
        assert_eq!(y.shape(), &[1, 1, 3, 3]);
        assert!(y.data().iter().all(|v| (v - 9.0 * c).abs() < 1e-12));
    }

    #[test]
    fn conv_output_size_and_geometry_errors() {
        let mut rng = SplitMix64::new(2);
        let p = ConvParams::init(2, 3, 3, 2, 1, &mut rng);
        assert_eq!(p.output_size(16, 16).unwrap(), (8, 8));
        assert_eq!(p.output_size(5, 5).unwrap(), (3, 3));
        let p7 = ConvParams::init(1, 1, 7, 1, 0, &mut rng);
        assert!(conv2d_forward(&Tensor::zeros(&[1, 1, 5, 5]), &p7).is_err());
        assert!(conv2d_forward(&Tensor::zeros(&[1, 2, 5, 5]), &p7).is_err());
    }

    #[test]
    fn pointwise_conv_equals_dense_per_pixel() {
        let mut rng = SplitMix64::new(5);
        let (cin, cout, h, w) = (5, 4, 3, 6);
        let conv = ConvParams::init(cin, cout, 1, 1, 0, &mut rng);
        let mut conv = conv;
        conv.bias = Tensor::new(vec![cout], (0..cout).map(|_| rng.next_f64()).collect()).unwrap();
        let x = Tensor::new(vec![2, cin, h, w], (0..2 * cin * h * w).map(|_| rng.next_normal()).collect()).unwrap();
        let y = conv2d_forward(&x, &conv).unwrap();
        // dense weight is the transposed 1×1 kernel
        let mut wd = vec![0.0; cin * cout];
        for co in 0..cout {
            for ci in 0..cin {
                wd[ci * cout + co] = conv.weight.data()[co * cin + ci];
            }
        }
        let dense = DenseParams { weight: Tensor::new(vec![cin, cout], wd).unwrap(), bias: conv.bias.clone() };
        for s in 0..2 {
            for pix in 0..h * w {
                let xp: Vec<f64> = (0..cin).map(|ci| x.data()[(s * cin + ci) * h * w + pix]).collect();
                let yp = dense_forward(&Tensor::new(vec![1, cin], xp).unwrap(), &dense).unwrap();
                for co in 0..cout {
                    assert_eq!(yp.data()[co], y.data()[(s * cout + co) * h * w + pix]);
                }
            }
        }
    }

    #[test]
    fn channel_norm_cases() {
        let x = Tensor::full(&[1, 2, 3, 3], 4.0);
        let gain = t(&[2], &[2.0, 3.0]);
        let shift = t(&[2], &[0.5, -1.0]);
        let y = channel_norm_forward(&x, &gain, &shift).unwrap();
        assert!(y.data()[..9].iter().all(|&v| v == 0.5));
        assert!(y.data()[9..].iter().all(|&v| v == -1.0));

        let single = t(&[2, 1, 1, 1], &[3.0, -7.0]);
        let y = channel_norm_forward(&single, &t(&[1], &[1.3]), &t(&[1], &[0.2])).unwrap();
        assert_eq!(y.data(), &[0.2, 0.2]);

        let mut rng = SplitMix64::new(8);
        let x = Tensor::new(vec![2, 3, 4, 4], (0..96).map(|_| rng.uniform(-3.0, 5.0)).collect()).unwrap();
        let y = channel_norm_forward(&x, &Tensor::full(&[3], 1.0), &Tensor::zeros(&[3])).unwrap();
        for plane in y.data().chunks_exact(16) {
            let (mean, var) = moments(plane);
            assert!(mean.abs() < 1e-10);
            assert!((var - 1.0).abs() < 1e-3);
        }
    }

    #[test]
    fn upsample_cases() {
        let y = nn_upsample2x_forward(&t(&[1, 1, 1, 1], &[2.5])).unwrap();
        assert_eq!(y.shape(), &[1, 1, 2, 2]);
        assert_eq!(y.data(), &[2.5; 4]);
        let dx = nn_upsample2x_backward(&Tensor::full(&[1, 1, 2, 2], 1.0)).unwrap();
        assert_eq!(dx.data(), &[4.0]);
        assert!(nn_upsample2x_backward(&Tensor::zeros(&[1, 1, 3, 2])).is_err());
    }

    #[test]
    fn activations() {
        let x = t(&[3], &[-1.0, 0.0, 2.0]);
        assert_eq!(relu(&x).data(), &[0.0, 0.0, 2.0]);
        let g = relu_backward(&x, &Tensor::full(&[3], 1.0)).unwrap();
        assert_eq!(g.data(), &[0.0, 0.0, 1.0]);
        assert_eq!(sigmoid(&t(&[1], &[0.0])).data(), &[0.5]);
    }

    #[test]
    fn spec_round_trip() {
        let mut rng = SplitMix64::new(3);
        let layers = vec![
            Layer::Dense(DenseParams::init(3, 4, &mut rng)),
            Layer::Conv2d(ConvParams::init(2, 5, 3, 2, 1, &mut rng)),
            Layer::ChannelNorm(NormParams::identity(5)),
            Layer::Relu,
            Layer::Upsample2x,
        ];
        for l in &layers {
            let back = Layer::from_spec(&l.spec());
            assert_eq!(back.spec(), l.spec());
            let shapes: Vec<_> = back.params().iter().map(|p| p.shape().to_vec()).collect();
            let expect: Vec<_> = l.params().iter().map(|p| p.shape().to_vec()).collect();
            assert_eq!(shapes, expect);
        }
    }
}
