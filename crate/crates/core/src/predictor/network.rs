use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::tensor::{
    concat, conv_backward, conv_forward, maxpool_backward, maxpool_forward, relu_backward_inplace,
    relu_inplace, split_channels, upsample_backward, upsample_forward, ConvLayer, Scalar, Tensor,
};
use crate::error::{Error, Result};

/// Shape of the encoder–decoder.
///
/// Level `l` of the encoder has `base_filters · 2^l` filters; the bottleneck
/// has `base_filters · 2^depth`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub depth: usize,
    pub base_filters: usize,
    pub kernel_size: usize,
    pub in_channels: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            depth: 3,
            base_filters: 8,
            kernel_size: 3,
            in_channels: 3,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 || self.depth > 8 {
            return Err(Error::Input(format!("depth must be in 1..=8, got {}", self.depth)));
        }
        if self.base_filters == 0 || self.in_channels == 0 {
            return Err(Error::Input("base_filters and in_channels must be positive".into()));
        }
        if self.kernel_size.is_multiple_of(2) {
            return Err(Error::Input(format!("kernel size must be odd, got {}", self.kernel_size)));
        }
        if 256 % (1usize << self.depth) != 0 {
            return Err(Error::Input(format!("256 is not divisible by 2^{}", self.depth)));
        }
        Ok(())
    }

    fn width(&self, level: usize) -> usize {
        self.base_filters << level
    }

    /// `(in, out, kernel)` per convolution in parameter order: encoder levels,
    /// bottleneck, decoder levels from deepest to shallowest, 1×1 head.
    pub fn layer_shapes(&self) -> Vec<(usize, usize, usize)> {
        let k = self.kernel_size;
        let d = self.depth;
        let mut shapes = Vec::with_capacity(2 * d + 2);
        let mut prev = self.in_channels;
        for l in 0..d {
            shapes.push((prev, self.width(l), k));
            prev = self.width(l);
        }
        shapes.push((prev, self.width(d), k));
        for l in (0..d).rev() {
            shapes.push((self.width(l + 1) + self.width(l), self.width(l), k));
        }
        shapes.push((self.width(0), 1, 1));
        shapes
    }

    pub fn param_count(&self) -> usize {
        self.layer_shapes()
            .iter()
            .map(|&(i, o, k)| o * i * k * k + o)
            .sum()
    }

    /// Tiles must have sides divisible by this.
    pub fn spatial_multiple(&self) -> usize {
        1 << self.depth
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Weights<F> {
    pub config: ModelConfig,
    pub layers: Vec<ConvLayer<F>>,
}

impl<F: Scalar> Weights<F> {
    pub fn zeros(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let layers = config
            .layer_shapes()
            .into_iter()
            .map(|(i, o, k)| ConvLayer::zeros(i, o, k))
            .collect();
        Ok(Self { config, layers })
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(ConvLayer::param_count).sum()
    }

    /// Parameters as one vector: per layer, kernel then bias.
    pub fn to_flat(&self) -> Vec<F> {
        let mut v = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            v.extend_from_slice(&l.weight);
            v.extend_from_slice(&l.bias);
        }
        v
    }

    pub fn from_flat(config: ModelConfig, flat: &[F]) -> Result<Self> {
        let mut w = Self::zeros(config)?;
        if flat.len() != w.param_count() {
            return Err(Error::Shape(format!(
                "expected {} parameters, got {}",
                w.param_count(),
                flat.len()
            )));
        }
        let mut pos = 0;
        for l in &mut w.layers {
            let n = l.weight.len();
            l.weight.copy_from_slice(&flat[pos..pos + n]);
            pos += n;
            let n = l.bias.len();
            l.bias.copy_from_slice(&flat[pos..pos + n]);
            pos += n;
        }
        Ok(w)
    }

    pub fn cast<G: Scalar>(&self) -> Weights<G> {
        let conv = |l: &ConvLayer<F>| ConvLayer {
            in_ch: l.in_ch,
            out_ch: l.out_ch,
            kernel: l.kernel,
            weight: l.weight.iter().map(|v| G::of(v.as_f64())).collect(),
            bias: l.bias.iter().map(|v| G::of(v.as_f64())).collect(),
        };
        Weights {
            config: self.config,
            layers: self.layers.iter().map(conv).collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weight.iter().chain(&l.bias).all(|v| v.is_finite()))
    }

    fn encoder(&self, l: usize) -> &ConvLayer<F> {
        &self.layers[l]
    }

    fn bottleneck(&self) -> &ConvLayer<F> {
        &self.layers[self.config.depth]
    }

    fn decoder(&self, l: usize) -> &ConvLayer<F> {
        let d = self.config.depth;
        &self.layers[d + 1 + (d - 1 - l)]
    }

    fn head(&self) -> &ConvLayer<F> {
        self.layers.last().expect("head layer")
    }
}

/// He-normal kernels (std = √(2 / fan_in)) from a seeded generator; zero biases.
pub fn init_weights(cfg: &ModelConfig) -> Result<Weights<f32>> {
    let mut w = Weights::<f32>::zeros(*cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    for l in &mut w.layers {
        let fan_in = (l.in_ch * l.kernel * l.kernel) as f64;
        let normal = Normal::new(0.0, (2.0 / fan_in).sqrt()).expect("positive std");
        for v in l.weight.iter_mut() {
            *v = normal.sample(&mut rng) as f32;
        }
    }
    Ok(w)
}

/// Activations kept for the backward pass.
struct Cache<F> {
    input: Tensor<F>,
    // post-ReLU encoder outputs (also the skip connections)
    enc_out: Vec<Tensor<F>>,
    pool_arg: Vec<Vec<usize>>,
    pooled: Vec<Tensor<F>>,
    bottleneck_out: Tensor<F>,
    // per decoder level, indexed by level: conv input (concat) and output
    dec_in: Vec<Option<Tensor<F>>>,
    dec_out: Vec<Option<Tensor<F>>>,
    output: Tensor<F>,
}

fn check_input<F: Scalar>(w: &Weights<F>, tile: &Tensor<F>) -> Result<()> {
    let cfg = &w.config;
    if tile.channels != cfg.in_channels {
        return Err(Error::Shape(format!(
            "tile has {} channels, model expects {}",
            tile.channels, cfg.in_channels
        )));
    }
    let m = cfg.spatial_multiple();
    if tile.height == 0 || !tile.height.is_multiple_of(m) || !tile.width.is_multiple_of(m) || tile.width == 0 {
        return Err(Error::Shape(format!(
            "tile {}×{} is not divisible by {m}",
            tile.height, tile.width
        )));
    }
    if tile.data.iter().any(|v| !v.is_finite()) {
        return Err(Error::Input("tile holds non-finite values".into()));
    }
    Ok(())
}

fn forward_cached<F: Scalar>(w: &Weights<F>, tile: &Tensor<F>) -> Result<Cache<F>> {
    check_input(w, tile)?;
    let d = w.config.depth;
    let mut enc_out = Vec::with_capacity(d);
    let mut pool_arg = Vec::with_capacity(d);
    let mut pooled = Vec::with_capacity(d);
    for l in 0..d {
        let x = if l == 0 { tile } else { &pooled[l - 1] };
        let mut a = conv_forward(w.encoder(l), x);
        relu_inplace(&mut a);
        let (p, arg) = maxpool_forward(&a);
        enc_out.push(a);
        pool_arg.push(arg);
        pooled.push(p);
    }
    let mut bottleneck_out = conv_forward(w.bottleneck(), &pooled[d - 1]);
    relu_inplace(&mut bottleneck_out);

    let mut dec_in: Vec<Option<Tensor<F>>> = (0..d).map(|_| None).collect();
    let mut dec_out: Vec<Option<Tensor<F>>> = (0..d).map(|_| None).collect();
    for l in (0..d).rev() {
        let below = if l == d - 1 {
            &bottleneck_out
        } else {
            dec_out[l + 1].as_ref().expect("deeper level done")
        };
        let cat = concat(&upsample_forward(below), &enc_out[l]);
        let mut y = conv_forward(w.decoder(l), &cat);
        relu_inplace(&mut y);
        dec_in[l] = Some(cat);
        dec_out[l] = Some(y);
    }
    let mut output = conv_forward(w.head(), dec_out[0].as_ref().expect("level 0"));
    relu_inplace(&mut output);
    Ok(Cache {
        input: tile.clone(),
        enc_out,
        pool_arg,
        pooled,
        bottleneck_out,
        dec_in,
        dec_out,
        output,
    })
}

/// Height map for one tile: `1 × H × W`, non-negative.
pub fn forward<F: Scalar>(w: &Weights<F>, tile: &Tensor<F>) -> Result<Tensor<F>> {
    Ok(forward_cached(w, tile)?.output)
}

/// Backpropagates `gout` (gradient w.r.t. the network output) to a flat
/// parameter gradient laid out like [`Weights::to_flat`].
fn backward<F: Scalar>(w: &Weights<F>, cache: &Cache<F>, gout: Tensor<F>) -> Vec<F> {
    let d = w.config.depth;
    let mut grads: Vec<Option<(Vec<F>, Vec<F>)>> = (0..w.layers.len()).map(|_| None).collect();
    let head_idx = w.layers.len() - 1;
    let dec_idx = |l: usize| d + 1 + (d - 1 - l);

    let mut g = gout;
    relu_backward_inplace(&mut g, &cache.output);
    let (mut g_dec, gw, gb) = conv_backward(w.head(), cache.dec_out[0].as_ref().unwrap(), &g);
    grads[head_idx] = Some((gw, gb));

    // gradients flowing into each encoder output through its skip connection
    let mut skip_grads: Vec<Option<Tensor<F>>> = (0..d).map(|_| None).collect();
    for l in 0..d {
        relu_backward_inplace(&mut g_dec, cache.dec_out[l].as_ref().unwrap());
        let (g_cat, gw, gb) = conv_backward(w.decoder(l), cache.dec_in[l].as_ref().unwrap(), &g_dec);
        grads[dec_idx(l)] = Some((gw, gb));
        let below_ch = g_cat.channels - cache.enc_out[l].channels;
        let (g_up, g_skip) = split_channels(&g_cat, below_ch);
        skip_grads[l] = Some(g_skip);
        g_dec = upsample_backward(&g_up);
    }

    // g_dec now holds the gradient at the bottleneck output
    relu_backward_inplace(&mut g_dec, &cache.bottleneck_out);
    let (mut g_pool, gw, gb) = conv_backward(w.bottleneck(), &cache.pooled[d - 1], &g_dec);
    grads[d] = Some((gw, gb));

    for l in (0..d).rev() {
        let a = &cache.enc_out[l];
        let mut g_a = maxpool_backward(&g_pool, &cache.pool_arg[l], (a.channels, a.height, a.width));
        for (x, &s) in g_a.data.iter_mut().zip(&skip_grads[l].as_ref().unwrap().data) {
            *x += s;
        }
        relu_backward_inplace(&mut g_a, a);
        let x = if l == 0 { &cache.input } else { &cache.pooled[l - 1] };
        let (g_x, gw, gb) = conv_backward(w.encoder(l), x, &g_a);
        grads[l] = Some((gw, gb));
        g_pool = g_x;
    }

    let mut flat = Vec::with_capacity(w.param_count());
    for g in grads {
        let (gw, gb) = g.expect("every layer has a gradient");
        flat.extend(gw);
        flat.extend(gb);
    }
    flat
}

/// Mean squared error over cells and its gradient w.r.t. every parameter.
pub fn loss_and_gradient<F: Scalar>(
    w: &Weights<F>,
    tile: &Tensor<F>,
    target: &[F],
) -> Result<(F, Vec<F>)> {
    let cache = forward_cached(w, tile)?;
    let out = &cache.output;
    if target.len() != out.data.len() {
        return Err(Error::Shape(format!(
            "target has {} cells, output has {}",
            target.len(),
            out.data.len()
        )));
    }
    let n = F::of(out.data.len() as f64);
    let two = F::of(2.0);
    let mut loss = F::zero();
    let mut g = Tensor::zeros(1, out.height, out.width);
    for ((gv, &o), &t) in g.data.iter_mut().zip(&out.data).zip(target) {
        let r = o - t;
        loss += r * r;
        *gv = two * r / n;
    }
    Ok((loss / n, backward(w, &cache, g)))
}

/// Forward-only loss.
pub fn loss<F: Scalar>(w: &Weights<F>, tile: &Tensor<F>, target: &[F]) -> Result<F> {
    let out = forward(w, tile)?;
    if target.len() != out.data.len() {
        return Err(Error::Shape("target/output size mismatch".into()));
    }
    let n = F::of(out.data.len() as f64);
    Ok(out
        .data
        .iter()
        .zip(target)
        .map(|(&o, &t)| (o - t) * (o - t))
        .sum::<F>()
        / n)
}
