//! Layer parameters and their forward/backward kernels. Activations are
//! NCHW; dense activations use `h = w = 1`.

use serde::{Deserialize, Serialize};

use super::scalar::{matmul, Scalar};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(n: usize, c: usize, h: usize, w: usize) -> Self {
        Self {
            n,
            c,
            h,
            w,
            data: vec![T::zero(); n * c * h * w],
        }
    }

    pub fn new(n: usize, c: usize, h: usize, w: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != n * c * h * w {
            return Err(Error::ShapeMismatch(format!(
                "tensor [{n}, {c}, {h}, {w}] needs {} values, got {}",
                n * c * h * w,
                data.len()
            )));
        }
        Ok(Self { n, c, h, w, data })
    }

    pub fn shape(&self) -> [usize; 4] {
        [self.n, self.c, self.h, self.w]
    }

    /// Elements per sample.
    pub fn stride(&self) -> usize {
        self.c * self.h * self.w
    }
}

/// Architecture-level description of one layer (no weights).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LayerDef {
    Conv2d {
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        bias: bool,
    },
    BatchNorm {
        channels: usize,
    },
    Relu,
    MaxPool {
        size: usize,
    },
    GlobalAvgPool,
    Dense {
        inputs: usize,
        outputs: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d<T> {
    pub c_in: usize,
    pub c_out: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    /// `[c_out, c_in, k, k]`.
    pub weight: Vec<T>,
    pub bias: Option<Vec<T>>,
}

impl<T: Scalar> Conv2d<T> {
    pub fn zeros(
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        bias: bool,
    ) -> Self {
        Self {
            c_in,
            c_out,
            kernel,
            stride,
            padding,
            weight: vec![T::zero(); c_out * c_in * kernel * kernel],
            bias: bias.then(|| vec![T::zero(); c_out]),
        }
    }

    pub fn output_size(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let (ph, pw) = (h + 2 * self.padding, w + 2 * self.padding);
        if ph < self.kernel || pw < self.kernel || self.stride == 0 {
            return Err(Error::ShapeMismatch(format!(
                "{h}x{w} input too small for {k}x{k} kernel with padding {p}",
                k = self.kernel,
                p = self.padding
            )));
        }
        Ok((
            (ph - self.kernel) / self.stride + 1,
            (pw - self.kernel) / self.stride + 1,
        ))
    }

    fn patch_len(&self) -> usize {
        self.c_in * self.kernel * self.kernel
    }

    /// Unfolds one sample into `[c_in k k, ho wo]`.
    fn im2col(&self, x: &[T], h: usize, w: usize, ho: usize, wo: usize, cols: &mut [T]) {
        let k = self.kernel;
        let hw = ho * wo;
        for ci in 0..self.c_in {
            let plane = &x[ci * h * w..(ci + 1) * h * w];
            for ky in 0..k {
                for kx in 0..k {
                    let row = &mut cols[((ci * k + ky) * k + kx) * hw..][..hw];
                    for oy in 0..ho {
                        let iy = (oy * self.stride + ky) as isize - self.padding as isize;
                        let dst = &mut row[oy * wo..(oy + 1) * wo];
                        if iy < 0 || iy >= h as isize {
                            dst.fill(T::zero());
                            continue;
                        }
                        let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                        for (ox, d) in dst.iter_mut().enumerate() {
                            let ix = (ox * self.stride + kx) as isize - self.padding as isize;
                            *d = if ix < 0 || ix >= w as isize {
                                T::zero()
                            } else {
                                src[ix as usize]
                            };
                        }
                    }
                }
            }
        }
    }

    fn col2im(&self, cols: &[T], h: usize, w: usize, ho: usize, wo: usize, dx: &mut [T]) {
        let k = self.kernel;
        let hw = ho * wo;
        for ci in 0..self.c_in {
            let plane = &mut dx[ci * h * w..(ci + 1) * h * w];
            for ky in 0..k {
                for kx in 0..k {
                    let row = &cols[((ci * k + ky) * k + kx) * hw..][..hw];
                    for oy in 0..ho {
                        let iy = (oy * self.stride + ky) as isize - self.padding as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let dst = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                        for (ox, &g) in row[oy * wo..(oy + 1) * wo].iter().enumerate() {
                            let ix = (ox * self.stride + kx) as isize - self.padding as isize;
                            if ix >= 0 && ix < w as isize {
                                dst[ix as usize] += g;
                            }
                        }
                    }
                }
            }
        }
    }

    /// Returns the output and the unfolded input of every sample.
    pub fn forward(&self, x: &Tensor<T>) -> Result<(Tensor<T>, Vec<T>)> {
        if x.c != self.c_in {
            return Err(Error::ShapeMismatch(format!(
                "conv expects {} input channels, got {}",
                self.c_in, x.c
            )));
        }
        let (ho, wo) = self.output_size(x.h, x.w)?;
        let (pl, hw) = (self.patch_len(), ho * wo);
        let mut cols = vec![T::zero(); x.n * pl * hw];
        let mut y = Tensor::zeros(x.n, self.c_out, ho, wo);
        for i in 0..x.n {
            let col = &mut cols[i * pl * hw..(i + 1) * pl * hw];
            self.im2col(&x.data[i * x.stride()..(i + 1) * x.stride()], x.h, x.w, ho, wo, col);
            let out = &mut y.data[i * self.c_out * hw..(i + 1) * self.c_out * hw];
            matmul(self.c_out, pl, hw, &self.weight, false, col, false, out, false);
            if let Some(bias) = &self.bias {
                for (co, b) in bias.iter().enumerate() {
                    out[co * hw..(co + 1) * hw].iter_mut().for_each(|v| *v += *b);
                }
            }
        }
        Ok((y, cols))
    }

    /// Gradients `(d weight, d bias, d input)`; `d input` only if requested.
    pub fn backward(
        &self,
        input_shape: [usize; 4],
        cols: &[T],
        dy: &Tensor<T>,
        need_dx: bool,
    ) -> (Vec<T>, Option<Vec<T>>, Option<Tensor<T>>) {
        let [n, _, h, w] = input_shape;
        let (ho, wo) = (dy.h, dy.w);
        let (pl, hw) = (self.patch_len(), ho * wo);
        let mut dw = vec![T::zero(); self.weight.len()];
        let mut db = self.bias.as_ref().map(|b| vec![T::zero(); b.len()]);
        let mut dx = need_dx.then(|| Tensor::zeros(n, self.c_in, h, w));
        let mut dcols = vec![T::zero(); if need_dx { pl * hw } else { 0 }];
        for i in 0..n {
            let g = &dy.data[i * self.c_out * hw..(i + 1) * self.c_out * hw];
            let col = &cols[i * pl * hw..(i + 1) * pl * hw];
            matmul(self.c_out, hw, pl, g, false, col, true, &mut dw, true);
            if let Some(db) = db.as_mut() {
                for (co, d) in db.iter_mut().enumerate() {
                    *d += g[co * hw..(co + 1) * hw].iter().copied().sum::<T>();
                }
            }
            if let Some(dx) = dx.as_mut() {
                matmul(pl, self.c_out, hw, &self.weight, true, g, false, &mut dcols, false);
                let stride = dx.stride();
                self.col2im(&dcols, h, w, ho, wo, &mut dx.data[i * stride..(i + 1) * stride]);
            }
        }
        (dw, db, dx)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm<T> {
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
}

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Per-batch state kept for the backward pass and the running-stat update.
#[derive(Debug, Clone)]
pub struct BnCache<T> {
    pub xhat: Vec<T>,
    pub inv_std: Vec<T>,
    pub mean: Vec<T>,
    /// Unbiased batch variance.
    pub var_unbiased: Vec<T>,
}

impl<T: Scalar> BatchNorm<T> {
    pub fn identity(channels: usize) -> Self {
        Self {
            gamma: vec![T::one(); channels],
            beta: vec![T::zero(); channels],
            running_mean: vec![T::zero(); channels],
            running_var: vec![T::one(); channels],
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    fn check(&self, x: &Tensor<T>) -> Result<()> {
        if x.c != self.channels() {
            return Err(Error::ShapeMismatch(format!(
                "batch norm over {} channels got {}",
                self.channels(),
                x.c
            )));
        }
        Ok(())
    }

    pub fn forward_eval(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check(x)?;
        let hw = x.h * x.w;
        let eps = T::from_f64(BN_EPS);
        let mut y = x.clone();
        for i in 0..x.n {
            for c in 0..x.c {
                let scale = self.gamma[c] / (self.running_var[c] + eps).sqrt();
                let shift = self.beta[c] - self.running_mean[c] * scale;
                let base = (i * x.c + c) * hw;
                y.data[base..base + hw]
                    .iter_mut()
                    .for_each(|v| *v = *v * scale + shift);
            }
        }
        Ok(y)
    }

    pub fn forward_train(&self, x: &Tensor<T>) -> Result<(Tensor<T>, BnCache<T>)> {
        self.check(x)?;
        let hw = x.h * x.w;
        let count = x.n * hw;
        let m = T::from_f64(count as f64);
        let eps = T::from_f64(BN_EPS);
        let mut cache = BnCache {
            xhat: vec![T::zero(); x.data.len()],
            inv_std: vec![T::zero(); x.c],
            mean: vec![T::zero(); x.c],
            var_unbiased: vec![T::zero(); x.c],
        };
        let mut y = Tensor::zeros(x.n, x.c, x.h, x.w);
        for c in 0..x.c {
            let slices = (0..x.n).map(|i| (i * x.c + c) * hw);
            let mean = slices
                .clone()
                .map(|b| x.data[b..b + hw].iter().copied().sum::<T>())
                .sum::<T>()
                / m;
            let sq = slices
                .clone()
                .map(|b| x.data[b..b + hw].iter().map(|&v| (v - mean) * (v - mean)).sum::<T>())
                .sum::<T>();
            let var = sq / m;
            let inv_std = T::one() / (var + eps).sqrt();
            for b in slices {
                for j in b..b + hw {
                    let xh = (x.data[j] - mean) * inv_std;
                    cache.xhat[j] = xh;
                    y.data[j] = self.gamma[c] * xh + self.beta[c];
                }
            }
            cache.mean[c] = mean;
            cache.inv_std[c] = inv_std;
            cache.var_unbiased[c] = if count > 1 {
                sq / T::from_f64((count - 1) as f64)
            } else {
                var
            };
        }
        Ok((y, cache))
    }

    pub fn update_running(&mut self, cache: &BnCache<T>) {
        let mom = T::from_f64(BN_MOMENTUM);
        for c in 0..self.channels() {
            self.running_mean[c] = (T::one() - mom) * self.running_mean[c] + mom * cache.mean[c];
            self.running_var[c] =
                (T::one() - mom) * self.running_var[c] + mom * cache.var_unbiased[c];
        }
    }

    /// Gradients `(d gamma, d beta, d input)` for a train-mode forward.
    pub fn backward(&self, cache: &BnCache<T>, dy: &Tensor<T>) -> (Vec<T>, Vec<T>, Tensor<T>) {
        let hw = dy.h * dy.w;
        let m = T::from_f64((dy.n * hw) as f64);
        let mut dgamma = vec![T::zero(); dy.c];
        let mut dbeta = vec![T::zero(); dy.c];
        let mut dx = Tensor::zeros(dy.n, dy.c, dy.h, dy.w);
        for c in 0..dy.c {
            let slices = (0..dy.n).map(|i| (i * dy.c + c) * hw);
            let (mut dg, mut db) = (T::zero(), T::zero());
            for b in slices.clone() {
                for j in b..b + hw {
                    dg += dy.data[j] * cache.xhat[j];
                    db += dy.data[j];
                }
            }
            let k = self.gamma[c] * cache.inv_std[c] / m;
            for b in slices {
                for j in b..b + hw {
                    dx.data[j] = k * (m * dy.data[j] - db - cache.xhat[j] * dg);
                }
            }
            dgamma[c] = dg;
            dbeta[c] = db;
        }
        (dgamma, dbeta, dx)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense<T> {
    pub inputs: usize,
    pub outputs: usize,
    /// `[outputs, inputs]`.
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> Dense<T> {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            inputs,
            outputs,
            weight: vec![T::zero(); inputs * outputs],
            bias: vec![T::zero(); outputs],
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        if x.stride() != self.inputs {
            return Err(Error::ShapeMismatch(format!(
                "dense expects {} features, got {}",
                self.inputs,
                x.stride()
            )));
        }
        let mut y = Tensor::zeros(x.n, self.outputs, 1, 1);
        matmul(x.n, self.inputs, self.outputs, &x.data, false, &self.weight, true, &mut y.data, false);
        for row in y.data.chunks_exact_mut(self.outputs) {
            row.iter_mut().zip(&self.bias).for_each(|(v, b)| *v += *b);
        }
        Ok(y)
    }

    pub fn backward(&self, x: &Tensor<T>, dy: &Tensor<T>) -> (Vec<T>, Vec<T>, Tensor<T>) {
        let mut dw = vec![T::zero(); self.weight.len()];
        matmul(self.outputs, x.n, self.inputs, &dy.data, true, &x.data, false, &mut dw, false);
        let mut db = vec![T::zero(); self.outputs];
        for row in dy.data.chunks_exact(self.outputs) {
            db.iter_mut().zip(row).for_each(|(d, g)| *d += *g);
        }
        let mut dx = Tensor::zeros(x.n, x.c, x.h, x.w);
        matmul(x.n, self.outputs, self.inputs, &dy.data, false, &self.weight, false, &mut dx.data, false);
        (dw, db, dx)
    }
}

pub fn relu_forward<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let mut y = x.clone();
    y.data.iter_mut().for_each(|v| *v = v.max(T::zero()));
    y
}

/// Uses the forward output: the derivative is 1 where the output is positive.
pub fn relu_backward<T: Scalar>(y: &Tensor<T>, dy: &Tensor<T>) -> Tensor<T> {
    let mut dx = dy.clone();
    dx.data
        .iter_mut()
        .zip(&y.data)
        .for_each(|(d, &out)| {
            if out <= T::zero() {
                *d = T::zero();
            }
        });
    dx
}

/// Non-overlapping `size x size` max pooling; returns argmax offsets.
pub fn maxpool_forward<T: Scalar>(x: &Tensor<T>, size: usize) -> Result<(Tensor<T>, Vec<usize>)> {
    if size == 0 || x.h < size || x.w < size {
        return Err(Error::ShapeMismatch(format!(
            "cannot max-pool {}x{} with window {size}",
            x.h, x.w
        )));
    }
    let (ho, wo) = (x.h / size, x.w / size);
    let mut y = Tensor::zeros(x.n, x.c, ho, wo);
    let mut arg = vec![0; y.data.len()];
    for plane in 0..x.n * x.c {
        let src = plane * x.h * x.w;
        for oy in 0..ho {
            for ox in 0..wo {
                let mut best = src + oy * size * x.w + ox * size;
                for dy in 0..size {
                    for dx in 0..size {
                        let j = src + (oy * size + dy) * x.w + ox * size + dx;
                        if x.data[j] > x.data[best] {
                            best = j;
                        }
                    }
                }
                let o = (plane * ho + oy) * wo + ox;
                y.data[o] = x.data[best];
                arg[o] = best;
            }
        }
    }
    Ok((y, arg))
}

pub fn maxpool_backward<T: Scalar>(
    input_shape: [usize; 4],
    arg: &[usize],
    dy: &Tensor<T>,
) -> Tensor<T> {
    let [n, c, h, w] = input_shape;
    let mut dx = Tensor::zeros(n, c, h, w);
    for (o, &j) in arg.iter().enumerate() {
        dx.data[j] += dy.data[o];
    }
    dx
}

pub fn gap_forward<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let hw = x.h * x.w;
    let scale = T::from_f64(1.0 / hw as f64);
    let data = x
        .data
        .chunks_exact(hw)
        .map(|p| p.iter().copied().sum::<T>() * scale)
        .collect();
    Tensor {
        n: x.n,
        c: x.c,
        h: 1,
        w: 1,
        data,
    }
}

pub fn gap_backward<T: Scalar>(input_shape: [usize; 4], dy: &Tensor<T>) -> Tensor<T> {
    let [n, c, h, w] = input_shape;
    let scale = T::from_f64(1.0 / (h * w) as f64);
    let mut dx = Tensor::zeros(n, c, h, w);
    for (plane, g) in dx.data.chunks_exact_mut(h * w).zip(&dy.data) {
        plane.fill(*g * scale);
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct nested-loop convolution.
    fn conv_naive(conv: &Conv2d<f64>, x: &Tensor<f64>) -> Tensor<f64> {
        let (ho, wo) = conv.output_size(x.h, x.w).unwrap();
        let k = conv.kernel;
        let mut y = Tensor::zeros(x.n, conv.c_out, ho, wo);
        for i in 0..x.n {
            for co in 0..conv.c_out {
                for oy in 0..ho {
                    for ox in 0..wo {
                        let mut acc = conv.bias.as_ref().map_or(0.0, |b| b[co]);
                        for ci in 0..conv.c_in {
                            for ky in 0..k {
                                for kx in 0..k {
                                    let iy = (oy * conv.stride + ky) as isize - conv.padding as isize;
                                    let ix = (ox * conv.stride + kx) as isize - conv.padding as isize;
                                    if iy < 0 || ix < 0 || iy >= x.h as isize || ix >= x.w as isize {
                                        continue;
                                    }
                                    acc += conv.weight[((co * conv.c_in + ci) * k + ky) * k + kx]
                                        * x.data[((i * x.c + ci) * x.h + iy as usize) * x.w + ix as usize];
                                }
                            }
                        }
                        y.data[((i * conv.c_out + co) * ho + oy) * wo + ox] = acc;
                    }
                }
            }
        }
        y
    }

    #[test]
    fn conv_matches_naive_loops() {
        for (stride, padding) in [(1, 0), (2, 1), (1, 1), (3, 2)] {
            let mut conv = Conv2d::<f64>::zeros(2, 3, 3, stride, padding, true);
            conv.weight
                .iter_mut()
                .enumerate()
                .for_each(|(i, w)| *w = ((i * 7) % 11) as f64 / 11.0 - 0.5);
            conv.bias = Some(vec![0.1, -0.2, 0.3]);
            let x = Tensor::new(2, 2, 7, 6, (0..168).map(|i| (i as f64 * 0.37).sin()).collect())
                .unwrap();
            let (fast, _) = conv.forward(&x).unwrap();
            let slow = conv_naive(&conv, &x);
            assert_eq!(fast.shape(), slow.shape());
            for (a, b) in fast.data.iter().zip(&slow.data) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn conv_rejects_wrong_channels() {
        let conv = Conv2d::<f32>::zeros(3, 4, 3, 1, 1, false);
        assert!(conv.forward(&Tensor::zeros(1, 2, 5, 5)).is_err());
        assert!(conv.forward(&Tensor::zeros(1, 3, 1, 1)).is_ok());
        let tight = Conv2d::<f32>::zeros(1, 1, 3, 1, 0, false);
        assert!(tight.forward(&Tensor::zeros(1, 1, 2, 2)).is_err());
    }

    #[test]
    fn maxpool_and_gap() {
        let x = Tensor::new(1, 1, 2, 4, vec![1.0, 5.0, 2.0, 0.0, 3.0, 4.0, 8.0, -1.0]).unwrap();
        let (y, arg) = maxpool_forward(&x, 2).unwrap();
        assert_eq!(y.data, vec![5.0, 8.0]);
        let dx = maxpool_backward(x.shape(), &arg, &Tensor::new(1, 1, 1, 2, vec![1.0, 2.0]).unwrap());
        assert_eq!(dx.data, vec![0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 2.0, 0.0]);
        let g = gap_forward(&x);
        assert_eq!(g.data, vec![22.0 / 8.0]);
    }

    #[test]
    fn batchnorm_normalizes_in_train_mode() {
        let bn = BatchNorm::<f64>::identity(2);
        let x = Tensor::new(2, 2, 1, 2, vec![1.0, 2.0, 10.0, 10.0, 3.0, 4.0, 20.0, 30.0]).unwrap();
        let (y, cache) = bn.forward_train(&x).unwrap();
        for c in 0..2 {
            let vals: Vec<f64> = (0..2).flat_map(|i| y.data[(i * 2 + c) * 2..][..2].to_vec()).collect();
            let mean = vals.iter().sum::<f64>() / 4.0;
            assert!(mean.abs() < 1e-12);
        }
        assert!((cache.mean[0] - 2.5).abs() < 1e-12);
        assert!((cache.var_unbiased[0] - 5.0 / 3.0).abs() < 1e-12);
    }
}
