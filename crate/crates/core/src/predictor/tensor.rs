//! Dense CHW tensors and the layer kernels used by the network.
//!
//! Kernels are generic over [`Scalar`] so the same code runs at 32-bit in
//! production and 64-bit for gradient checks. Parallel loops split work by
//! output plane; every output value is reduced by a single thread in a
//! fixed order, so results do not depend on the thread count.

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::AddAssign;

use num_traits::Float;
use rayon::prelude::*;

pub trait Scalar: Float + AddAssign + Sum + Default + Debug + Send + Sync + 'static {
    fn of(v: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Scalar for f32 {
    fn of(v: f64) -> Self {
        v as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    fn of(v: f64) -> Self {
        v
    }
    fn as_f64(self) -> f64 {
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<F> {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<F>,
}

impl<F: Scalar> Tensor<F> {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![F::zero(); channels * height * width],
        }
    }

    pub fn from_vec(channels: usize, height: usize, width: usize, data: Vec<F>) -> Self {
        assert_eq!(data.len(), channels * height * width, "tensor data length");
        Self {
            channels,
            height,
            width,
            data,
        }
    }

    /// Square planes of equal size stacked as channels.
    pub fn from_planes(planes: &[Vec<f32>], height: usize, width: usize) -> Self {
        let data = planes
            .iter()
            .flat_map(|p| {
                assert_eq!(p.len(), height * width, "plane size");
                p.iter().map(|&v| F::of(v as f64))
            })
            .collect();
        Self::from_vec(planes.len(), height, width, data)
    }

    pub fn plane_len(&self) -> usize {
        self.height * self.width
    }

    pub fn plane(&self, c: usize) -> &[F] {
        let n = self.plane_len();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn cast<G: Scalar>(&self) -> Tensor<G> {
        Tensor {
            channels: self.channels,
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|v| G::of(v.as_f64())).collect(),
        }
    }
}

/// Convolution parameters: `weight[out][in][k][k]`, `bias[out]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer<F> {
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub weight: Vec<F>,
    pub bias: Vec<F>,
}

impl<F: Scalar> ConvLayer<F> {
    pub fn zeros(in_ch: usize, out_ch: usize, kernel: usize) -> Self {
        Self {
            in_ch,
            out_ch,
            kernel,
            weight: vec![F::zero(); out_ch * in_ch * kernel * kernel],
            bias: vec![F::zero(); out_ch],
        }
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    #[inline]
    fn w(&self, o: usize, i: usize, ky: usize, kx: usize) -> F {
        let k = self.kernel;
        self.weight[((o * self.in_ch + i) * k + ky) * k + kx]
    }
}

/// Index ranges for a shifted plane: output rows/cols whose source
/// `y + d` stays inside `[0, n)`.
#[inline]
fn shift_range(n: usize, d: isize) -> (usize, usize) {
    let lo = (-d).max(0) as usize;
    let hi = (n as isize - d).min(n as isize).max(0) as usize;
    (lo, hi.max(lo))
}

/// Stride-1 "same" convolution with zero padding.
pub fn conv_forward<F: Scalar>(layer: &ConvLayer<F>, input: &Tensor<F>) -> Tensor<F> {
    assert_eq!(input.channels, layer.in_ch, "conv input channels");
    let (h, w) = (input.height, input.width);
    let k = layer.kernel;
    let pad = (k / 2) as isize;
    let mut out = Tensor::zeros(layer.out_ch, h, w);
    out.data
        .par_chunks_mut(h * w)
        .enumerate()
        .for_each(|(o, plane)| {
            plane.fill(layer.bias[o]);
            for i in 0..layer.in_ch {
                let src = input.plane(i);
                for ky in 0..k {
                    let dy = ky as isize - pad;
                    let (y0, y1) = shift_range(h, dy);
                    for kx in 0..k {
                        let dx = kx as isize - pad;
                        let (x0, x1) = shift_range(w, dx);
                        let wv = layer.w(o, i, ky, kx);
                        for y in y0..y1 {
                            let sy = (y as isize + dy) as usize;
                            let srow = &src[sy * w..(sy + 1) * w];
                            let drow = &mut plane[y * w..(y + 1) * w];
                            let sx0 = (x0 as isize + dx) as usize;
                            for (d, &s) in drow[x0..x1].iter_mut().zip(&srow[sx0..sx0 + (x1 - x0)]) {
                                *d += wv * s;
                            }
                        }
                    }
                }
            }
        });
    out
}

/// Gradients of a convolution given the upstream gradient `gout`.
/// Returns `(grad_input, grad_weight, grad_bias)`.
pub fn conv_backward<F: Scalar>(
    layer: &ConvLayer<F>,
    input: &Tensor<F>,
    gout: &Tensor<F>,
) -> (Tensor<F>, Vec<F>, Vec<F>) {
    let (h, w) = (input.height, input.width);
    let k = layer.kernel;
    let pad = (k / 2) as isize;

    let grad_bias: Vec<F> = (0..layer.out_ch)
        .into_par_iter()
        .map(|o| gout.plane(o).iter().copied().sum())
        .collect();

    let mut grad_weight = vec![F::zero(); layer.weight.len()];
    grad_weight
        .par_chunks_mut(layer.in_ch * k * k)
        .enumerate()
        .for_each(|(o, gw)| {
            let g = gout.plane(o);
            for i in 0..layer.in_ch {
                let src = input.plane(i);
                for ky in 0..k {
                    let dy = ky as isize - pad;
                    let (y0, y1) = shift_range(h, dy);
                    for kx in 0..k {
                        let dx = kx as isize - pad;
                        let (x0, x1) = shift_range(w, dx);
                        let mut acc = F::zero();
                        for y in y0..y1 {
                            let sy = (y as isize + dy) as usize;
                            let sx0 = (x0 as isize + dx) as usize;
                            let srow = &src[sy * w + sx0..sy * w + sx0 + (x1 - x0)];
                            let grow = &g[y * w + x0..y * w + x1];
                            for (&a, &b) in grow.iter().zip(srow) {
                                acc += a * b;
                            }
                        }
                        gw[(i * k + ky) * k + kx] = acc;
                    }
                }
            }
        });

    let mut grad_in = Tensor::zeros(layer.in_ch, h, w);
    grad_in
        .data
        .par_chunks_mut(h * w)
        .enumerate()
        .for_each(|(i, gin)| {
            for o in 0..layer.out_ch {
                let g = gout.plane(o);
                for ky in 0..k {
                    let dy = ky as isize - pad;
                    let (y0, y1) = shift_range(h, dy);
                    for kx in 0..k {
                        let dx = kx as isize - pad;
                        let (x0, x1) = shift_range(w, dx);
                        let wv = layer.w(o, i, ky, kx);
                        for y in y0..y1 {
                            let sy = (y as isize + dy) as usize;
                            let sx0 = (x0 as isize + dx) as usize;
                            let dst = &mut gin[sy * w + sx0..sy * w + sx0 + (x1 - x0)];
                            for (d, &gv) in dst.iter_mut().zip(&g[y * w + x0..y * w + x1]) {
                                *d += wv * gv;
                            }
                        }
                    }
                }
            }
        });

    (grad_in, grad_weight, grad_bias)
}

pub fn relu_inplace<F: Scalar>(t: &mut Tensor<F>) {
    for v in t.data.iter_mut() {
        if !(*v > F::zero()) {
            *v = F::zero();
        }
    }
}

/// Zeroes gradient entries where the ReLU output was not positive.
pub fn relu_backward_inplace<F: Scalar>(grad: &mut Tensor<F>, output: &Tensor<F>) {
    for (g, &o) in grad.data.iter_mut().zip(&output.data) {
        if !(o > F::zero()) {
            *g = F::zero();
        }
    }
}

/// 2×2 max pooling with stride 2. Also returns, per output cell, the flat
/// input index of the winning cell (first maximum in scan order).
pub fn maxpool_forward<F: Scalar>(input: &Tensor<F>) -> (Tensor<F>, Vec<usize>) {
    let (h, w) = (input.height / 2, input.width / 2);
    let mut out = Tensor::zeros(input.channels, h, w);
    let mut arg = vec![0usize; out.data.len()];
    let iw = input.width;
    for c in 0..input.channels {
        let base = c * input.plane_len();
        for y in 0..h {
            for x in 0..w {
                let mut best = base + (2 * y) * iw + 2 * x;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let j = base + (2 * y + dy) * iw + 2 * x + dx;
                    if input.data[j] > input.data[best] {
                        best = j;
                    }
                }
                let o = (c * h + y) * w + x;
                out.data[o] = input.data[best];
                arg[o] = best;
            }
        }
    }
    (out, arg)
}

pub fn maxpool_backward<F: Scalar>(
    gout: &Tensor<F>,
    argmax: &[usize],
    input_shape: (usize, usize, usize),
) -> Tensor<F> {
    let (c, h, w) = input_shape;
    let mut g = Tensor::zeros(c, h, w);
    for (o, &j) in argmax.iter().enumerate() {
        g.data[j] += gout.data[o];
    }
    g
}

/// Nearest-neighbour 2× upsampling.
pub fn upsample_forward<F: Scalar>(input: &Tensor<F>) -> Tensor<F> {
    let (h, w) = (input.height * 2, input.width * 2);
    let mut out = Tensor::zeros(input.channels, h, w);
    for c in 0..input.channels {
        let src = input.plane(c);
        let dst = &mut out.data[c * h * w..(c + 1) * h * w];
        for y in 0..h {
            for x in 0..w {
                dst[y * w + x] = src[(y / 2) * input.width + x / 2];
            }
        }
    }
    out
}

pub fn upsample_backward<F: Scalar>(gout: &Tensor<F>) -> Tensor<F> {
    let (h, w) = (gout.height / 2, gout.width / 2);
    let mut g = Tensor::zeros(gout.channels, h, w);
    for c in 0..gout.channels {
        let src = gout.plane(c);
        for y in 0..gout.height {
            for x in 0..gout.width {
                g.data[(c * h + y / 2) * w + x / 2] += src[y * gout.width + x];
            }
        }
    }
    g
}

/// Channel concatenation `[a; b]`.
pub fn concat<F: Scalar>(a: &Tensor<F>, b: &Tensor<F>) -> Tensor<F> {
    assert_eq!((a.height, a.width), (b.height, b.width), "concat spatial size");
    let mut data = Vec::with_capacity(a.data.len() + b.data.len());
    data.extend_from_slice(&a.data);
    data.extend_from_slice(&b.data);
    Tensor::from_vec(a.channels + b.channels, a.height, a.width, data)
}

/// Splits a concatenation gradient back into its two parts.
pub fn split_channels<F: Scalar>(g: &Tensor<F>, first: usize) -> (Tensor<F>, Tensor<F>) {
    let n = first * g.plane_len();
    (
        Tensor::from_vec(first, g.height, g.width, g.data[..n].to_vec()),
        Tensor::from_vec(g.channels - first, g.height, g.width, g.data[n..].to_vec()),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(rng: &mut ChaCha8Rng, c: usize, h: usize, w: usize) -> Tensor<f64> {
        Tensor::from_vec(c, h, w, (0..c * h * w).map(|_| rng.random_range(-1.0..1.0)).collect())
    }

    fn rand_layer(rng: &mut ChaCha8Rng, i: usize, o: usize, k: usize) -> ConvLayer<f64> {
        let mut l = ConvLayer::zeros(i, o, k);
        l.weight.iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
        l.bias.iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
        l
    }

    // Direct definition with explicit bounds checks.
    fn naive_conv(l: &ConvLayer<f64>, x: &Tensor<f64>) -> Tensor<f64> {
        let (h, w, k) = (x.height as isize, x.width as isize, l.kernel as isize);
        let p = k / 2;
        let mut out = Tensor::zeros(l.out_ch, x.height, x.width);
        for o in 0..l.out_ch {
            for y in 0..h {
                for xx in 0..w {
                    let mut s = l.bias[o];
                    for i in 0..l.in_ch {
                        for ky in 0..k {
                            for kx in 0..k {
                                let (sy, sx) = (y + ky - p, xx + kx - p);
                                if sy >= 0 && sy < h && sx >= 0 && sx < w {
                                    s += l.w(o, i, ky as usize, kx as usize)
                                        * x.data[(i * x.height + sy as usize) * x.width + sx as usize];
                                }
                            }
                        }
                    }
                    out.data[(o * x.height + y as usize) * x.width + xx as usize] = s;
                }
            }
        }
        out
    }

    #[test]
    fn conv_matches_naive() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for &(i, o, k, h, w) in &[(3, 4, 3, 7, 5), (2, 1, 1, 4, 4), (1, 2, 5, 6, 9), (2, 3, 3, 1, 1)] {
            let l = rand_layer(&mut rng, i, o, k);
            let x = rand_tensor(&mut rng, i, h, w);
            let a = conv_forward(&l, &x);
            let b = naive_conv(&l, &x);
            for (p, q) in a.data.iter().zip(&b.data) {
                assert!((p - q).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn conv_backward_is_adjoint() {
        // <conv(x), g> - bias term == <x, grad_in>  and  == <w, grad_w>
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let l = rand_layer(&mut rng, 3, 2, 3);
        let x = rand_tensor(&mut rng, 3, 6, 5);
        let g = rand_tensor(&mut rng, 2, 6, 5);
        let y = conv_forward(&l, &x);
        let (gi, gw, gb) = conv_backward(&l, &x, &g);
        let lhs: f64 = y.data.iter().zip(&g.data).map(|(a, b)| a * b).sum::<f64>()
            - gb.iter().zip(&l.bias).map(|(a, b)| a * b).sum::<f64>();
        let via_x: f64 = x.data.iter().zip(&gi.data).map(|(a, b)| a * b).sum();
        let via_w: f64 = l.weight.iter().zip(&gw).map(|(a, b)| a * b).sum();
        assert!((lhs - via_x).abs() < 1e-10);
        assert!((lhs - via_w).abs() < 1e-10);
    }

    #[test]
    fn pool_and_upsample() {
        let x = Tensor::from_vec(1, 2, 4, vec![1.0, 5.0, 2.0, 2.0, 3.0, 4.0, 2.0, 0.0f64]);
        let (p, arg) = maxpool_forward(&x);
        assert_eq!(p.data, vec![5.0, 2.0]);
        assert_eq!(arg, vec![1, 2]);
        let g = maxpool_backward(&Tensor::from_vec(1, 1, 2, vec![1.0, 2.0]), &arg, (1, 2, 4));
        assert_eq!(g.data, vec![0.0, 1.0, 2.0, 0.0, 0.0, 0.0, 0.0, 0.0]);

        let u = upsample_forward(&Tensor::from_vec(1, 1, 2, vec![1.0, 2.0f64]));
        assert_eq!(u.data, vec![1.0, 1.0, 2.0, 2.0, 1.0, 1.0, 2.0, 2.0]);
        let back = upsample_backward(&u);
        assert_eq!(back.data, vec![4.0, 8.0]);
    }
}
