//! Micro-patch masked autoencoder.
//!
//! The encoder sees only visible tokens (linear embedding + fixed 2D sine–cosine
//! positions, pre-norm transformer blocks, final norm). The decoder receives the
//! encoder output projected to its own width, a shared learned mask token at
//! every hidden position and its own positional table, and predicts the four
//! pixels of every token.

mod layers;
mod posenc;

use ndarray::{Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::patching::{MaskRealization, TokenGrid, TOKEN_DIM};
use crate::scalar::Scalar;

use layers::{BlockCache, NormCache};
pub use layers::{BlockSlots, LinearSlots, NormSlots, Slot};
pub use posenc::sincos_2d;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    pub encoder_dim: usize,
    pub decoder_dim: usize,
    pub encoder_heads: usize,
    pub decoder_heads: usize,
    pub mlp_ratio: f64,
    pub token_dim: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            encoder_layers: 12,
            decoder_layers: 4,
            encoder_dim: 192,
            decoder_dim: 96,
            encoder_heads: 3,
            decoder_heads: 3,
            mlp_ratio: 4.0,
            token_dim: TOKEN_DIM,
        }
    }
}

impl ModelConfig {
    /// Small configuration used for desk-scale experiments and tests.
    pub fn tiny() -> Self {
        Self {
            encoder_layers: 2,
            decoder_layers: 1,
            encoder_dim: 32,
            decoder_dim: 32,
            encoder_heads: 2,
            decoder_heads: 2,
            mlp_ratio: 2.0,
            token_dim: TOKEN_DIM,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.token_dim != TOKEN_DIM {
            problems.push(format!("token_dim must be {TOKEN_DIM}, got {}", self.token_dim));
        }
        for (name, dim, heads) in [
            ("encoder", self.encoder_dim, self.encoder_heads),
            ("decoder", self.decoder_dim, self.decoder_heads),
        ] {
            if dim == 0 || dim % 4 != 0 {
                problems.push(format!("{name}_dim must be a positive multiple of 4, got {dim}"));
            }
            if heads == 0 || dim % heads != 0 {
                problems.push(format!("{name}_dim {dim} not divisible by {name}_heads {heads}"));
            }
        }
        if !(self.mlp_ratio > 0.0) {
            problems.push(format!("mlp_ratio must be > 0, got {}", self.mlp_ratio));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Parameter(problems.join("; ")))
        }
    }

    fn hidden(&self, dim: usize) -> usize {
        ((dim as f64 * self.mlp_ratio).round() as usize).max(1)
    }
}

/// Named parameter tensor in the flat buffer.
#[derive(Clone, Debug)]
pub struct ParamEntry {
    pub name: String,
    pub slot: Slot,
    /// Whether decoupled weight decay applies (linear weights only).
    pub decay: bool,
}

#[derive(Clone, Debug)]
pub struct ParamLayout {
    pub patch_embed: LinearSlots,
    pub encoder: Vec<BlockSlots>,
    pub encoder_norm: NormSlots,
    pub decoder_embed: LinearSlots,
    pub mask_token: Slot,
    pub decoder: Vec<BlockSlots>,
    pub decoder_norm: NormSlots,
    pub head: LinearSlots,
    pub entries: Vec<ParamEntry>,
    pub total: usize,
}

struct LayoutBuilder {
    entries: Vec<ParamEntry>,
    total: usize,
}

impl LayoutBuilder {
    fn push(&mut self, name: String, rows: usize, cols: usize, decay: bool) -> Slot {
        let slot = Slot {
            offset: self.total,
            rows,
            cols,
        };
        self.total += rows * cols;
        self.entries.push(ParamEntry { name, slot, decay });
        slot
    }

    fn linear(&mut self, name: &str, fan_in: usize, fan_out: usize) -> LinearSlots {
        LinearSlots {
            weight: self.push(format!("{name}.weight"), fan_in, fan_out, true),
            bias: self.push(format!("{name}.bias"), 1, fan_out, false),
        }
    }

    fn norm(&mut self, name: &str, dim: usize) -> NormSlots {
        NormSlots {
            gamma: self.push(format!("{name}.gamma"), 1, dim, false),
            beta: self.push(format!("{name}.beta"), 1, dim, false),
        }
    }

    fn block(&mut self, name: &str, dim: usize, hidden: usize) -> BlockSlots {
        BlockSlots {
            norm1: self.norm(&format!("{name}.norm1"), dim),
            qkv: self.linear(&format!("{name}.attn.qkv"), dim, 3 * dim),
            proj: self.linear(&format!("{name}.attn.proj"), dim, dim),
            norm2: self.norm(&format!("{name}.norm2"), dim),
            fc1: self.linear(&format!("{name}.mlp.fc1"), dim, hidden),
            fc2: self.linear(&format!("{name}.mlp.fc2"), hidden, dim),
        }
    }
}

impl ParamLayout {
    pub fn new(config: &ModelConfig) -> Self {
        let (de, dd) = (config.encoder_dim, config.decoder_dim);
        let mut b = LayoutBuilder {
            entries: Vec::new(),
            total: 0,
        };
        let patch_embed = b.linear("patch_embed", config.token_dim, de);
        let encoder = (0..config.encoder_layers)
            .map(|i| b.block(&format!("encoder.{i}"), de, config.hidden(de)))
            .collect();
        let encoder_norm = b.norm("encoder_norm", de);
        let decoder_embed = b.linear("decoder_embed", de, dd);
        let mask_token = b.push("mask_token".into(), 1, dd, false);
        let decoder = (0..config.decoder_layers)
            .map(|i| b.block(&format!("decoder.{i}"), dd, config.hidden(dd)))
            .collect();
        let decoder_norm = b.norm("decoder_norm", dd);
        let head = b.linear("head", dd, config.token_dim);
        Self {
            patch_embed,
            encoder,
            encoder_norm,
            decoder_embed,
            mask_token,
            decoder,
            decoder_norm,
            head,
            entries: b.entries,
            total: b.total,
        }
    }
}

/// Exact trainable-parameter count for a configuration.
pub fn count_parameters(config: &ModelConfig) -> usize {
    ParamLayout::new(config).total
}

/// Sequence lengths seen by the two stacks during one forward pass.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ForwardTrace {
    pub encoder_tokens: usize,
    pub decoder_tokens: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReconstructionOutput<T> {
    /// Predicted pixels for every token, shape (L, 4), normalized units.
    pub predicted_tokens: Array2<T>,
    pub mask: MaskRealization,
}

struct ForwardCache<T> {
    visible: Vec<usize>,
    tokens_in: Array2<T>,
    encoder: Vec<BlockCache<T>>,
    encoder_norm_in: NormCache<T>,
    encoder_out: Array2<T>,
    decoder: Vec<BlockCache<T>>,
    decoder_norm_in: NormCache<T>,
    decoder_out: Array2<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MaeModel<T> {
    config: ModelConfig,
    layout_total: usize,
    params: Vec<T>,
}

impl<T: Scalar> MaeModel<T> {
    /// Xavier-uniform linear weights, zero biases, unit norms and a
    /// N(0, 0.02²) mask token.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let layout = ParamLayout::new(&config);
        let mut params = vec![T::zero(); layout.total];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for entry in &layout.entries {
            let dst = &mut params[entry.slot.range()];
            if entry.decay {
                let limit = (6.0 / (entry.slot.rows + entry.slot.cols) as f64).sqrt();
                let dist = Uniform::new_inclusive(-limit, limit);
                dst.iter_mut().for_each(|v| *v = T::of(dist.sample(&mut rng)));
            } else if entry.name.ends_with(".gamma") {
                dst.iter_mut().for_each(|v| *v = T::one());
            } else if entry.name == "mask_token" {
                let dist = Normal::new(0.0, 0.02).expect("valid std");
                dst.iter_mut().for_each(|v| *v = T::of(dist.sample(&mut rng)));
            }
        }
        Ok(Self {
            config,
            layout_total: layout.total,
            params,
        })
    }

    pub fn from_params(config: ModelConfig, params: Vec<T>) -> Result<Self> {
        config.validate()?;
        let total = count_parameters(&config);
        if params.len() != total {
            return Err(Error::State(format!(
                "parameter buffer has {} values, config needs {total}",
                params.len()
            )));
        }
        Ok(Self {
            config,
            layout_total: total,
            params,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn layout(&self) -> ParamLayout {
        ParamLayout::new(&self.config)
    }

    pub fn num_parameters(&self) -> usize {
        self.layout_total
    }

    pub fn params(&self) -> &[T] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [T] {
        &mut self.params
    }

    pub fn cast<U: Scalar>(&self) -> MaeModel<U> {
        MaeModel {
            config: self.config.clone(),
            layout_total: self.layout_total,
            params: self.params.iter().map(|v| U::of(v.as_f64())).collect(),
        }
    }

    fn check_inputs(&self, grid: &TokenGrid<T>, visible: &[usize]) -> Result<()> {
        let (l, d) = grid.tokens.dim();
        if l != grid.len() || d != self.config.token_dim {
            return Err(Error::Shape(format!(
                "token array {l}x{d} does not match grid {}x{} with token_dim {}",
                grid.grid_h, grid.grid_w, self.config.token_dim
            )));
        }
        if let Some(&bad) = visible.iter().find(|&&k| k >= l) {
            return Err(Error::Shape(format!("visible index {bad} out of range for L={l}")));
        }
        Ok(())
    }

    fn run(&self, grid: &TokenGrid<T>, visible: &[usize]) -> (Array2<T>, ForwardCache<T>) {
        let p = &self.params;
        let lay = self.layout();
        let cfg = &self.config;
        let l = grid.len();

        let tokens_in = grid.tokens.select(Axis(0), visible);
        let enc_pos = sincos_2d::<T>(grid.grid_h, grid.grid_w, cfg.encoder_dim);
        let mut x = layers::linear(&tokens_in.view(), p, &lay.patch_embed);
        x += &enc_pos.select(Axis(0), visible);

        let mut encoder = Vec::with_capacity(lay.encoder.len());
        for b in &lay.encoder {
            let (y, c) = layers::block(x, p, b, cfg.encoder_heads);
            x = y;
            encoder.push(c);
        }
        let (encoder_out, encoder_norm_in) = layers::layer_norm(&x.view(), p, &lay.encoder_norm);

        let y_vis = layers::linear(&encoder_out.view(), p, &lay.decoder_embed);
        let mask_token = lay.mask_token.vec(p);
        let mut y = Array2::zeros((l, cfg.decoder_dim));
        for mut row in y.rows_mut() {
            row.assign(&mask_token);
        }
        for (k, &tok) in visible.iter().enumerate() {
            y.row_mut(tok).assign(&y_vis.row(k));
        }
        y += &sincos_2d::<T>(grid.grid_h, grid.grid_w, cfg.decoder_dim);

        let mut decoder = Vec::with_capacity(lay.decoder.len());
        for b in &lay.decoder {
            let (z, c) = layers::block(y, p, b, cfg.decoder_heads);
            y = z;
            decoder.push(c);
        }
        let (decoder_out, decoder_norm_in) = layers::layer_norm(&y.view(), p, &lay.decoder_norm);
        let pred = layers::linear(&decoder_out.view(), p, &lay.head);
        (
            pred,
            ForwardCache {
                visible: visible.to_vec(),
                tokens_in,
                encoder,
                encoder_norm_in,
                encoder_out,
                decoder,
                decoder_norm_in,
                decoder_out,
            },
        )
    }

    /// Backpropagates `dpred` (L, 4) and returns the flat parameter gradient.
    fn backward(&self, dpred: &Array2<T>, cache: &ForwardCache<T>) -> Vec<T> {
        let p = &self.params;
        let lay = self.layout();
        let cfg = &self.config;
        let mut g = vec![T::zero(); self.layout_total];

        let dy = layers::linear_backward(&dpred.view(), &cache.decoder_out.view(), p, &mut g, &lay.head);
        let mut dy =
            layers::layer_norm_backward(&dy.view(), &cache.decoder_norm_in, p, &mut g, &lay.decoder_norm);
        for (b, c) in lay.decoder.iter().zip(&cache.decoder).rev() {
            dy = layers::block_backward(dy, c, p, &mut g, b, cfg.decoder_heads);
        }

        let mut is_visible = vec![false; dy.nrows()];
        cache.visible.iter().for_each(|&k| is_visible[k] = true);
        {
            let mut dmask = lay.mask_token.vec_mut(&mut g);
            for (row, _) in dy.rows().into_iter().zip(&is_visible).filter(|(_, v)| !**v) {
                dmask += &row;
            }
        }
        let dy_vis = dy.select(Axis(0), &cache.visible);

        let dx = layers::linear_backward(
            &dy_vis.view(),
            &cache.encoder_out.view(),
            p,
            &mut g,
            &lay.decoder_embed,
        );
        let mut dx =
            layers::layer_norm_backward(&dx.view(), &cache.encoder_norm_in, p, &mut g, &lay.encoder_norm);
        for (b, c) in lay.encoder.iter().zip(&cache.encoder).rev() {
            dx = layers::block_backward(dx, c, p, &mut g, b, cfg.encoder_heads);
        }
        layers::linear_backward(&dx.view(), &cache.tokens_in.view(), p, &mut g, &lay.patch_embed);
        g
    }

    pub fn forward(&self, grid: &TokenGrid<T>, mask: &MaskRealization) -> Result<ReconstructionOutput<T>> {
        if mask.len() != grid.len() {
            return Err(Error::Shape(format!(
                "mask length {} does not match token count {}",
                mask.len(),
                grid.len()
            )));
        }
        let visible = mask.visible_indices();
        self.check_inputs(grid, &visible)?;
        let (predicted_tokens, _) = self.run(grid, &visible);
        Ok(ReconstructionOutput {
            predicted_tokens,
            mask: mask.clone(),
        })
    }

    /// Forward pass feeding visible tokens in the given order; also reports
    /// the sequence lengths processed by encoder and decoder.
    pub fn forward_traced(
        &self,
        grid: &TokenGrid<T>,
        visible_order: &[usize],
    ) -> Result<(Array2<T>, ForwardTrace)> {
        self.check_inputs(grid, visible_order)?;
        let (pred, _) = self.run(grid, visible_order);
        let trace = ForwardTrace {
            encoder_tokens: visible_order.len(),
            decoder_tokens: grid.len(),
        };
        Ok((pred, trace))
    }

    /// Masked-MSE loss and its gradient with respect to every parameter.
    pub fn loss_and_grad(
        &self,
        grid: &TokenGrid<T>,
        mask: &MaskRealization,
        validity: &Array2<bool>,
    ) -> Result<(T, Vec<T>)> {
        if mask.len() != grid.len() || validity.dim() != grid.tokens.dim() {
            return Err(Error::Shape("mask/validity do not match token grid".into()));
        }
        let visible = mask.visible_indices();
        self.check_inputs(grid, &visible)?;
        let (pred, cache) = self.run(grid, &visible);
        let loss = masked_mse_parts(&pred, &grid.tokens, &mask.visible, validity);
        let dpred = masked_mse_grad_parts(&pred, &grid.tokens, &mask.visible, validity);
        Ok((loss, self.backward(&dpred, &cache)))
    }

    /// Loss only, for finite-difference checks and evaluation.
    pub fn loss(&self, grid: &TokenGrid<T>, mask: &MaskRealization, validity: &Array2<bool>) -> Result<T> {
        let out = self.forward(grid, mask)?;
        Ok(masked_mse(&out, grid, validity))
    }
}

pub fn forward<T: Scalar>(
    grid: &TokenGrid<T>,
    mask: &MaskRealization,
    model: &MaeModel<T>,
) -> Result<ReconstructionOutput<T>> {
    model.forward(grid, mask)
}

fn loss_entries<'a>(
    visible: &'a [bool],
    validity: &'a Array2<bool>,
) -> impl Iterator<Item = (usize, usize)> + 'a {
    (0..visible.len())
        .filter(move |&k| !visible[k])
        .flat_map(move |k| (0..validity.ncols()).map(move |e| (k, e)))
        .filter(move |&(k, e)| validity[[k, e]])
}

fn masked_mse_parts<T: Scalar>(
    pred: &Array2<T>,
    target: &Array2<T>,
    visible: &[bool],
    validity: &Array2<bool>,
) -> T {
    let (sum, n) = loss_entries(visible, validity).fold((T::zero(), 0usize), |(s, n), (k, e)| {
        let d = pred[[k, e]] - target[[k, e]];
        (s + d * d, n + 1)
    });
    if n == 0 {
        T::zero()
    } else {
        sum / T::of(n as f64)
    }
}

fn masked_mse_grad_parts<T: Scalar>(
    pred: &Array2<T>,
    target: &Array2<T>,
    visible: &[bool],
    validity: &Array2<bool>,
) -> Array2<T> {
    let mut grad = Array2::zeros(pred.dim());
    let n = loss_entries(visible, validity).count();
    if n == 0 {
        return grad;
    }
    let scale = T::of(2.0 / n as f64);
    for (k, e) in loss_entries(visible, validity) {
        grad[[k, e]] = scale * (pred[[k, e]] - target[[k, e]]);
    }
    grad
}

/// Mean squared error over pixels of hidden tokens that are also valid;
/// zero when that set is empty.
pub fn masked_mse<T: Scalar>(
    output: &ReconstructionOutput<T>,
    target: &TokenGrid<T>,
    validity: &Array2<bool>,
) -> T {
    masked_mse_parts(&output.predicted_tokens, &target.tokens, &output.mask.visible, validity)
}

/// Gradient of [`masked_mse`] with respect to the predicted tokens.
pub fn masked_mse_grad<T: Scalar>(
    output: &ReconstructionOutput<T>,
    target: &TokenGrid<T>,
    validity: &Array2<bool>,
) -> Array2<T> {
    masked_mse_grad_parts(&output.predicted_tokens, &target.tokens, &output.mask.visible, validity)
}

/// Euclidean norm of a flat parameter or gradient buffer.
pub fn l2_norm<T: Scalar>(v: &[T]) -> f64 {
    v.iter().map(|x| x.as_f64() * x.as_f64()).sum::<f64>().sqrt()
}
