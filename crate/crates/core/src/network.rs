//! Variational autoencoder with a geometric-transform classification head.
//!
//! ```text
//! x ─▶ [conv3x3/2 + ReLU] × L ─▶ flatten ─┬─▶ μ ─┐
//!                  │                      └─▶ log σ² ─┴─▶ z ─▶ FC + ReLU ─▶ [convT4x4/2] × L ─▶ sigmoid ─▶ x̂
//!                  └─▶ global average pool ─▶ FC ─▶ K logits
//! ```
//!
//! All learnable scalars live in one flat `Vec<f64>`; [`ParamLayout`] maps
//! named tensors onto ranges of it. That keeps the optimizer, checkpointing
//! and finite-difference checks oblivious to the architecture.

use std::ops::Range;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::datamodel::SliceImage;
use crate::error::{Error, Result};
use crate::geoxform::NUM_CLASSES;
use crate::layers::{relu_backward_in_place, relu_in_place, sigmoid, Conv2d, ConvGeom, ConvTranspose2d, Linear};

const ENC_KERNEL: usize = 3;
const DEC_KERNEL: usize = 4;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetworkConfig {
    pub input_side: usize,
    /// Encoder channel counts, one stride-2 block each; the decoder mirrors them.
    pub filters: Vec<usize>,
    pub latent_dim: usize,
    pub num_classes: usize,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            input_side: 128,
            filters: vec![32, 64, 128, 256],
            latent_dim: 128,
            num_classes: NUM_CLASSES,
        }
    }
}

impl NetworkConfig {
    /// 16×16 input, two filters per block, latent 4.
    pub fn tiny() -> Self {
        Self {
            input_side: 16,
            filters: vec![2, 2, 2, 2],
            latent_dim: 4,
            num_classes: NUM_CLASSES,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.filters.is_empty() {
            return bad("at least one encoder block is required".into());
        }
        if self.filters.contains(&0) {
            return bad(format!("filter counts must be positive, got {:?}", self.filters));
        }
        if self.latent_dim < 1 {
            return bad("latent_dim must be >= 1".into());
        }
        if self.num_classes < 1 {
            return bad("num_classes must be >= 1".into());
        }
        let factor = 1usize << self.filters.len();
        if self.input_side == 0 || self.input_side % 8 != 0 || self.input_side % factor != 0 {
            return bad(format!(
                "input_side {} must be a positive multiple of 8 and of 2^{}",
                self.input_side,
                self.filters.len()
            ));
        }
        Ok(())
    }

    pub fn bottleneck_side(&self) -> usize {
        self.input_side >> self.filters.len()
    }

    pub fn bottleneck_channels(&self) -> usize {
        *self.filters.last().expect("validated")
    }

    pub fn flat_dim(&self) -> usize {
        self.bottleneck_channels() * self.bottleneck_side().pow(2)
    }

    fn encoder(&self) -> Vec<Conv2d> {
        let mut side = self.input_side;
        let mut c_in = 1;
        self.filters
            .iter()
            .map(|&c_out| {
                let geom = ConvGeom::new(c_in, side, ENC_KERNEL, 2, 1);
                side = geom.side_out;
                c_in = c_out;
                Conv2d { geom, c_out }
            })
            .collect()
    }

    fn decoder(&self) -> Vec<ConvTranspose2d> {
        let mut chans: Vec<usize> = self.filters.iter().rev().copied().collect();
        chans.push(1);
        let mut side = self.bottleneck_side();
        chans
            .windows(2)
            .map(|w| {
                let layer = ConvTranspose2d::new(w[0], w[1], side, DEC_KERNEL, 2, 1);
                side = layer.side_out();
                layer
            })
            .collect()
    }
}

/// Named tensor inside the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub range: Range<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Pair {
    w: Range<usize>,
    b: Range<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamLayout {
    tensors: Vec<TensorSpec>,
    enc: Vec<Pair>,
    mu: Pair,
    log_var: Pair,
    dec_fc: Pair,
    dec: Vec<Pair>,
    geo: Pair,
}

impl ParamLayout {
    pub fn new(cfg: &NetworkConfig) -> Result<Self> {
        cfg.validate()?;
        let mut tensors = Vec::new();
        let mut offset = 0;
        let mut push = |name: String, shape: Vec<usize>| {
            let len: usize = shape.iter().product();
            let range = offset..offset + len;
            offset += len;
            tensors.push(TensorSpec {
                name,
                shape,
                range: range.clone(),
            });
            range
        };
        let mut pair = |name: &str, w_shape: Vec<usize>, b_len: usize| Pair {
            w: push(format!("{name}.weight"), w_shape),
            b: push(format!("{name}.bias"), vec![b_len]),
        };

        let enc = cfg
            .encoder()
            .iter()
            .enumerate()
            .map(|(i, l)| {
                pair(
                    &format!("enc{i}"),
                    vec![l.c_out, l.geom.channels, ENC_KERNEL, ENC_KERNEL],
                    l.c_out,
                )
            })
            .collect();
        let flat = cfg.flat_dim();
        let mu = pair("mu", vec![cfg.latent_dim, flat], cfg.latent_dim);
        let log_var = pair("log_var", vec![cfg.latent_dim, flat], cfg.latent_dim);
        let dec_fc = pair("dec_fc", vec![flat, cfg.latent_dim], flat);
        let dec = cfg
            .decoder()
            .iter()
            .enumerate()
            .map(|(i, l)| {
                pair(
                    &format!("dec{i}"),
                    vec![l.c_in, l.c_out(), DEC_KERNEL, DEC_KERNEL],
                    l.c_out(),
                )
            })
            .collect();
        let geo = pair(
            "geo",
            vec![cfg.num_classes, cfg.bottleneck_channels()],
            cfg.num_classes,
        );
        Ok(Self {
            tensors,
            enc,
            mu,
            log_var,
            dec_fc,
            dec,
            geo,
        })
    }

    pub fn tensors(&self) -> &[TensorSpec] {
        &self.tensors
    }

    pub fn total(&self) -> usize {
        self.tensors.last().map_or(0, |t| t.range.end)
    }

    /// Range covering the geometric head (weights and bias are contiguous).
    pub fn geo_head(&self) -> Range<usize> {
        self.geo.w.start..self.geo.b.end
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    config: NetworkConfig,
    layout: ParamLayout,
    values: Vec<f64>,
}

impl ModelParams {
    /// Wraps an existing value vector (e.g. from a checkpoint).
    pub fn from_values(config: NetworkConfig, values: Vec<f64>) -> Result<Self> {
        let layout = ParamLayout::new(&config)?;
        if values.len() != layout.total() {
            return Err(Error::ShapeMismatch {
                expected: format!("{} parameters", layout.total()),
                actual: format!("{} parameters", values.len()),
            });
        }
        Ok(Self {
            config,
            layout,
            values,
        })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    fn t(&self, r: &Range<usize>) -> &[f64] {
        &self.values[r.clone()]
    }
}

/// Fan-in scaled Gaussian weights (He scaling before ReLUs), zero biases.
pub fn init_params(seed: u64, config: &NetworkConfig) -> Result<ModelParams> {
    let layout = ParamLayout::new(config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut values = vec![0.0; layout.total()];
    let mut fill = |r: &Range<usize>, fan_in: usize, gain: f64| {
        let normal = Normal::new(0.0, (gain / fan_in as f64).sqrt()).expect("positive std");
        for v in &mut values[r.clone()] {
            *v = normal.sample(&mut rng);
        }
    };
    for (pair, layer) in layout.enc.iter().zip(config.encoder()) {
        fill(&pair.w, layer.geom.col_rows(), 2.0);
    }
    fill(&layout.mu.w, config.flat_dim(), 1.0);
    fill(&layout.log_var.w, config.flat_dim(), 0.1);
    fill(&layout.dec_fc.w, config.latent_dim, 2.0);
    let dec = config.decoder();
    let last = dec.len() - 1;
    for (i, (pair, layer)) in layout.dec.iter().zip(&dec).enumerate() {
        // Each output pixel of a stride-2, 4×4 transposed conv sees 2×2 taps per channel.
        let gain = if i == last { 1.0 } else { 2.0 };
        fill(&pair.w, layer.c_in * 4, gain);
    }
    fill(&layout.geo.w, config.bottleneck_channels(), 1.0);
    Ok(ModelParams {
        config: config.clone(),
        layout,
        values,
    })
}

/// Exact number of learnable scalars.
pub fn count_params(params: &ModelParams) -> usize {
    params.len()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// `z = μ + exp(½ log σ²) ⊙ ε`, ε ~ N(0, I).
    Train,
    /// `z = μ`.
    Eval,
}

/// Which branches a forward pass evaluates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Heads {
    Full,
    Vae,
    Geo,
}

impl Heads {
    fn vae(self) -> bool {
        matches!(self, Heads::Full | Heads::Vae)
    }

    fn geo(self) -> bool {
        matches!(self, Heads::Full | Heads::Geo)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput {
    /// Row-major, same shape as the input, values in (0, 1).
    pub reconstruction: Vec<f64>,
    pub mu: Vec<f64>,
    pub log_var: Vec<f64>,
    pub geo_logits: Vec<f64>,
}

/// Intermediate activations kept for the backward pass.
#[derive(Debug, Clone, Default)]
pub(crate) struct Trace {
    enc_cols: Vec<Vec<f64>>,
    enc_out: Vec<Vec<f64>>,
    pub mu: Vec<f64>,
    pub log_var: Vec<f64>,
    eps: Option<Vec<f64>>,
    z: Vec<f64>,
    /// Inputs to each transposed conv followed by the final sigmoid output.
    dec_out: Vec<Vec<f64>>,
    pooled: Vec<f64>,
    pub logits: Vec<f64>,
}

impl Trace {
    pub fn reconstruction(&self) -> &[f64] {
        self.dec_out.last().map_or(&[], Vec::as_slice)
    }

    pub fn into_output(mut self) -> ForwardOutput {
        ForwardOutput {
            reconstruction: self.dec_out.pop().unwrap_or_default(),
            mu: self.mu,
            log_var: self.log_var,
            geo_logits: self.logits,
        }
    }
}

/// Loss gradients with respect to the network outputs.
#[derive(Debug, Default)]
pub(crate) struct OutputGrads<'a> {
    pub d_recon: Option<&'a [f64]>,
    pub d_mu: Option<&'a [f64]>,
    pub d_log_var: Option<&'a [f64]>,
    pub d_logits: Option<&'a [f64]>,
}

fn check_input(params: &ModelParams, x: &[f64]) -> Result<()> {
    let n = params.config.input_side;
    if x.len() != n * n {
        return Err(Error::ShapeMismatch {
            expected: format!("{n}x{n} input"),
            actual: format!("{} pixels", x.len()),
        });
    }
    Ok(())
}

/// Runs the selected heads. `eps` supplies the reparameterization noise;
/// `None` means `z = μ`.
pub(crate) fn forward_trace(
    params: &ModelParams,
    x: &[f64],
    eps: Option<Vec<f64>>,
    heads: Heads,
) -> Result<Trace> {
    check_input(params, x)?;
    let cfg = &params.config;
    let lay = &params.layout;
    let mut tr = Trace::default();

    let mut h: &[f64] = x;
    for (layer, pair) in cfg.encoder().iter().zip(&lay.enc) {
        let (mut out, cols) = layer.forward(h, params.t(&pair.w), params.t(&pair.b));
        relu_in_place(&mut out);
        tr.enc_cols.push(cols);
        tr.enc_out.push(out);
        h = tr.enc_out.last().expect("just pushed");
    }
    let flat = tr.enc_out.last().expect("at least one block").clone();

    if heads.geo() {
        let plane = cfg.bottleneck_side().pow(2);
        tr.pooled = flat
            .chunks_exact(plane)
            .map(|c| c.iter().sum::<f64>() / plane as f64)
            .collect();
        let head = Linear {
            n_in: cfg.bottleneck_channels(),
            n_out: cfg.num_classes,
        };
        tr.logits = head.forward(&tr.pooled, params.t(&lay.geo.w), params.t(&lay.geo.b));
    }

    if heads.vae() {
        let lat = Linear {
            n_in: cfg.flat_dim(),
            n_out: cfg.latent_dim,
        };
        tr.mu = lat.forward(&flat, params.t(&lay.mu.w), params.t(&lay.mu.b));
        tr.log_var = lat.forward(&flat, params.t(&lay.log_var.w), params.t(&lay.log_var.b));
        tr.z = match &eps {
            Some(e) => {
                if e.len() != cfg.latent_dim {
                    return Err(Error::ShapeMismatch {
                        expected: format!("{} noise values", cfg.latent_dim),
                        actual: format!("{}", e.len()),
                    });
                }
                tr.mu
                    .iter()
                    .zip(&tr.log_var)
                    .zip(e)
                    .map(|((m, lv), n)| m + (0.5 * lv).exp() * n)
                    .collect()
            }
            None => tr.mu.clone(),
        };
        tr.eps = eps;

        let fc = Linear {
            n_in: cfg.latent_dim,
            n_out: cfg.flat_dim(),
        };
        let mut cur = fc.forward(&tr.z, params.t(&lay.dec_fc.w), params.t(&lay.dec_fc.b));
        relu_in_place(&mut cur);

        let dec = cfg.decoder();
        let last = dec.len() - 1;
        for (i, (layer, pair)) in dec.iter().zip(&lay.dec).enumerate() {
            let mut out = layer.forward(&cur, params.t(&pair.w), params.t(&pair.b));
            if i == last {
                out.iter_mut().for_each(|v| *v = sigmoid(*v));
            } else {
                relu_in_place(&mut out);
            }
            tr.dec_out.push(std::mem::replace(&mut cur, out));
        }
        tr.dec_out.push(cur);
    }
    Ok(tr)
}

/// Accumulates parameter gradients into `grad` (same layout as the values).
pub(crate) fn backward(
    params: &ModelParams,
    tr: &Trace,
    g: &OutputGrads<'_>,
    grad: &mut [f64],
) {
    assert_eq!(grad.len(), params.len());
    let cfg = &params.config;
    let lay = &params.layout;
    let flat_dim = cfg.flat_dim();
    let mut d_flat = vec![0.0; flat_dim];
    let mut touched = false;

    let mut d_mu = g.d_mu.map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; tr.mu.len()]);
    let mut d_lv = g
        .d_log_var
        .map(<[f64]>::to_vec)
        .unwrap_or_else(|| vec![0.0; tr.log_var.len()]);

    if let Some(d_recon) = g.d_recon {
        let dec = cfg.decoder();
        let n_dec = dec.len();
        let recon = tr.reconstruction();
        let mut d: Vec<f64> = d_recon
            .iter()
            .zip(recon)
            .map(|(dr, r)| dr * r * (1.0 - r))
            .collect();
        for i in (0..n_dec).rev() {
            let pair = &lay.dec[i];
            let (wr, br) = (pair.w.clone(), pair.b.clone());
            let (dw, db) = split_pair(grad, &wr, &br);
            let input = &tr.dec_out[i];
            let mut d_in = dec[i]
                .backward(&d, input, params.t(&wr), dw, db, true)
                .expect("input grad requested");
            // dec_out[0] is the FC output, itself post-ReLU.
            relu_backward_in_place(&mut d_in, input);
            d = d_in;
        }
        let fc = Linear {
            n_in: cfg.latent_dim,
            n_out: flat_dim,
        };
        let (dw, db) = split_pair(grad, &lay.dec_fc.w, &lay.dec_fc.b);
        let d_z = fc
            .backward(&d, &tr.z, params.t(&lay.dec_fc.w), dw, db, true)
            .expect("input grad requested");
        for k in 0..d_z.len() {
            d_mu[k] += d_z[k];
            if let Some(eps) = &tr.eps {
                d_lv[k] += d_z[k] * eps[k] * 0.5 * (0.5 * tr.log_var[k]).exp();
            }
        }
    }

    if g.d_recon.is_some() || g.d_mu.is_some() || g.d_log_var.is_some() {
        let lat = Linear {
            n_in: flat_dim,
            n_out: cfg.latent_dim,
        };
        let flat = tr.enc_out.last().expect("encoder ran");
        for (pair, d_out) in [(&lay.mu, &d_mu), (&lay.log_var, &d_lv)] {
            let (dw, db) = split_pair(grad, &pair.w, &pair.b);
            let d_in = lat
                .backward(d_out, flat, params.t(&pair.w), dw, db, true)
                .expect("input grad requested");
            d_flat.iter_mut().zip(&d_in).for_each(|(a, b)| *a += b);
        }
        touched = true;
    }

    if let Some(d_logits) = g.d_logits {
        let head = Linear {
            n_in: cfg.bottleneck_channels(),
            n_out: cfg.num_classes,
        };
        let (dw, db) = split_pair(grad, &lay.geo.w, &lay.geo.b);
        let d_pooled = head
            .backward(d_logits, &tr.pooled, params.t(&lay.geo.w), dw, db, true)
            .expect("input grad requested");
        let plane = cfg.bottleneck_side().pow(2);
        for (chunk, dp) in d_flat.chunks_exact_mut(plane).zip(&d_pooled) {
            let share = dp / plane as f64;
            chunk.iter_mut().for_each(|v| *v += share);
        }
        touched = true;
    }

    if !touched {
        return;
    }
    let enc = cfg.encoder();
    let mut d = d_flat;
    for i in (0..enc.len()).rev() {
        relu_backward_in_place(&mut d, &tr.enc_out[i]);
        let pair = &lay.enc[i];
        let (dw, db) = split_pair(grad, &pair.w, &pair.b);
        match enc[i].backward(&d, &tr.enc_cols[i], params.t(&pair.w), dw, db, i > 0) {
            Some(d_in) => d = d_in,
            None => break,
        }
    }
}

/// Disjoint mutable views of a weight range and the bias range right after it.
fn split_pair<'a>(grad: &'a mut [f64], w: &Range<usize>, b: &Range<usize>) -> (&'a mut [f64], &'a mut [f64]) {
    debug_assert_eq!(w.end, b.start);
    let (head, tail) = grad[w.start..b.end].split_at_mut(w.len());
    (head, tail)
}

/// Draws the reparameterization noise for one forward pass.
pub fn sample_noise<R: Rng + ?Sized>(rng: &mut R, latent_dim: usize) -> Vec<f64> {
    (0..latent_dim).map(|_| StandardNormal.sample(rng)).collect()
}

/// Evaluates reconstruction and geometric heads. In [`Mode::Eval`] the
/// generator is untouched and the result depends only on `(params, x)`.
pub fn forward<R: Rng + ?Sized>(
    params: &ModelParams,
    x: &SliceImage,
    rng: &mut R,
    mode: Mode,
) -> Result<ForwardOutput> {
    let eps = match mode {
        Mode::Train => Some(sample_noise(rng, params.config.latent_dim)),
        Mode::Eval => None,
    };
    Ok(forward_trace(params, x.pixels(), eps, Heads::Full)?.into_output())
}

/// Deterministic (`z = μ`) forward pass on raw pixels.
pub fn forward_eval(params: &ModelParams, x: &[f64]) -> Result<ForwardOutput> {
    Ok(forward_trace(params, x, None, Heads::Full)?.into_output())
}

/// Reconstruction only, `z = μ`.
pub fn reconstruct(params: &ModelParams, x: &[f64]) -> Result<Vec<f64>> {
    let mut tr = forward_trace(params, x, None, Heads::Vae)?;
    Ok(tr.dec_out.pop().unwrap_or_default())
}

/// Geometric logits only; skips the latent path and decoder.
pub fn geo_logits(params: &ModelParams, x: &[f64]) -> Result<Vec<f64>> {
    Ok(forward_trace(params, x, None, Heads::Geo)?.logits)
}
