//! Forward pass built on the autodiff tape.

use std::sync::Arc;

use geomsign_autodiff::{Real, Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::ModelConfig;
use crate::error::{ModelError, Result};
use crate::input::ModelInput;
use crate::params::{layout, Init, LayerIndex, ParamIndex, ParamSpec};

/// Parameters of one message-passing block.
#[derive(Debug, Clone, Copy)]
pub struct SpatialParams {
    pub conv_b: Var,
    pub norm_g: Var,
    pub norm_b: Var,
    pub mlp_in_w: Var,
    pub mlp_in_b: Var,
    pub mlp_out_w: Var,
    pub mlp_out_b: Var,
    pub scale: Option<Var>,
}

/// Parameters of one temporal convolution block.
#[derive(Debug, Clone, Copy)]
pub struct TemporalParams {
    pub w1: Var,
    pub b1: Var,
    pub w2: Var,
    pub b2: Var,
}

impl LayerIndex {
    fn spatial(&self, v: &[Var]) -> SpatialParams {
        SpatialParams {
            conv_b: v[self.conv_b],
            norm_g: v[self.norm_g],
            norm_b: v[self.norm_b],
            mlp_in_w: v[self.mlp_in_w],
            mlp_in_b: v[self.mlp_in_b],
            mlp_out_w: v[self.mlp_out_w],
            mlp_out_b: v[self.mlp_out_b],
            scale: self.scale.map(|i| v[i]),
        }
    }

    fn temporal(&self, v: &[Var]) -> TemporalParams {
        TemporalParams {
            w1: v[self.temporal1_w],
            b1: v[self.temporal1_b],
            w2: v[self.temporal2_w],
            b2: v[self.temporal2_b],
        }
    }
}

/// Shared first stage of the kernel network: `GeLU(attrs @ basis_w)`.
pub fn basis_embedding<F: Real>(tape: &mut Tape<F>, attrs: Var, basis_w: Var) -> Result<Var> {
    let h = tape.matmul(attrs, basis_w)?;
    Ok(tape.gelu(h)?)
}

/// Per-pair, per-channel kernel values `GeLU(attrs @ basis_w) @ kernel_w`.
pub fn kernel_basis<F: Real>(
    tape: &mut Tape<F>,
    attrs: Var,
    basis_w: Var,
    kernel_w: Var,
) -> Result<Var> {
    let h = basis_embedding(tape, attrs, basis_w)?;
    Ok(tape.matmul(h, kernel_w)?)
}

/// Message passing `m_i = sum_j k(i, j) * f_j`, then a ConvNeXt-style
/// pointwise MLP with a residual connection. `x` is `[B, T, R, H]` and
/// `kernels` is `[pairs, H]`.
#[allow(clippy::too_many_arguments)]
pub fn ponita_spatial_block<F: Real>(
    tape: &mut Tape<F>,
    x: Var,
    kernels: Var,
    senders: &Arc<[usize]>,
    receivers: &Arc<[usize]>,
    p: &SpatialParams,
    norm_eps: f64,
) -> Result<Var> {
    let shape = tape.shape(x).to_vec();
    let h = *shape
        .last()
        .ok_or_else(|| ModelError::InvalidInput("rank-0 features".into()))?;
    let rows = tape.value(x).len() / h.max(1);
    if tape.shape(kernels) != [senders.len(), h] || receivers.len() != senders.len() {
        return Err(ModelError::InvalidInput(format!(
            "kernels {:?} do not match {} pairs of width {h}",
            tape.shape(kernels),
            senders.len()
        )));
    }
    let flat = tape.reshape(x, &[rows, h])?;
    let gathered = tape.gather_rows(flat, senders.clone())?;
    let weighted = tape.mul(gathered, kernels)?;
    let msg = tape.segment_sum(weighted, receivers.clone(), rows)?;
    let msg = tape.reshape(msg, &shape)?;
    let msg = tape.add(msg, p.conv_b)?;
    let y = tape.layer_norm(msg, p.norm_g, p.norm_b, norm_eps)?;
    let y = tape.matmul(y, p.mlp_in_w)?;
    let y = tape.add(y, p.mlp_in_b)?;
    let y = tape.gelu(y)?;
    let y = tape.matmul(y, p.mlp_out_w)?;
    let mut y = tape.add(y, p.mlp_out_b)?;
    if let Some(s) = p.scale {
        y = tape.mul(y, s)?;
    }
    Ok(tape.add(x, y)?)
}

/// Two time convolutions with GeLU, added back onto the input.
pub fn temporal_block<F: Real>(tape: &mut Tape<F>, x: Var, p: &TemporalParams) -> Result<Var> {
    let y = tape.conv1d_time(x, p.w1)?;
    let y = tape.add(y, p.b1)?;
    let y = tape.gelu(y)?;
    let y = tape.conv1d_time(y, p.w2)?;
    let y = tape.add(y, p.b2)?;
    let y = tape.gelu(y)?;
    Ok(tape.add(x, y)?)
}

/// Logits `[B, num_classes]` for a batch. `params` follow the order of
/// [`layout`].
pub fn forward<F: Real>(
    tape: &mut Tape<F>,
    cfg: &ModelConfig,
    index: &ParamIndex,
    params: &[Var],
    input: &ModelInput<F>,
) -> Result<Var> {
    let din = cfg.input_dim();
    if input.features.last_dim() != din
        || input.rows_per_frame != cfg.num_nodes * cfg.num_orientations
    {
        return Err(ModelError::InvalidInput(format!(
            "input rows/features {:?} do not fit the model config",
            input.features.shape()
        )));
    }
    let feats = tape.constant(input.features.clone());
    let attrs = tape.constant(input.attributes.clone());
    let x = tape.matmul(feats, params[index.embed_w])?;
    let mut x = tape.add(x, params[index.embed_b])?;
    let basis = basis_embedding(tape, attrs, params[index.basis_w])?;
    for layer in &index.layers {
        let kernels = tape.matmul(basis, params[layer.kernel_w])?;
        x = ponita_spatial_block(
            tape,
            x,
            kernels,
            &input.senders,
            &input.receivers,
            &layer.spatial(params),
            cfg.norm_eps,
        )?;
        x = temporal_block(tape, x, &layer.temporal(params))?;
    }
    // Pool over time and graph rows (nodes and orientations).
    let pooled = tape.mean_over_axes(x, &[1, 2])?;
    let logits = tape.matmul(pooled, params[index.head_w])?;
    Ok(tape.add(logits, params[index.head_b])?)
}

/// A configuration together with its parameter values.
#[derive(Debug, Clone)]
pub struct Model<F> {
    config: ModelConfig,
    specs: Vec<ParamSpec>,
    index: ParamIndex,
    params: Vec<Tensor<F>>,
}

/// Draws initial values in double precision so that every element type
/// starts from the same numbers.
fn init_values(specs: &[ParamSpec], seed: u64) -> Vec<Tensor<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    specs
        .iter()
        .map(|s| match s.init {
            Init::Uniform { fan_in } => {
                let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
                Tensor::from_fn(&s.shape, |_| rng.gen_range(-bound..=bound))
            }
            Init::Constant(v) => Tensor::full(&s.shape, v),
        })
        .collect()
}

impl<F: Real> Model<F> {
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let (specs, index) = layout(&config);
        let params = init_values(&specs, seed).iter().map(Tensor::cast).collect();
        Ok(Self {
            config,
            specs,
            index,
            params,
        })
    }

    /// Rebuilds a model from stored values, checking shapes against the
    /// config's layout.
    pub fn from_params(config: ModelConfig, params: Vec<Tensor<F>>) -> Result<Self> {
        config.validate()?;
        let (specs, index) = layout(&config);
        if specs.len() != params.len() {
            return Err(ModelError::InvalidConfig(format!(
                "expected {} parameters, got {}",
                specs.len(),
                params.len()
            )));
        }
        for (s, p) in specs.iter().zip(&params) {
            if s.shape != p.shape() {
                return Err(ModelError::InvalidConfig(format!(
                    "parameter {} has shape {:?}, expected {:?}",
                    s.name,
                    p.shape(),
                    s.shape
                )));
            }
        }
        Ok(Self {
            config,
            specs,
            index,
            params,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn specs(&self) -> &[ParamSpec] {
        &self.specs
    }

    pub fn index(&self) -> &ParamIndex {
        &self.index
    }

    pub fn params(&self) -> &[Tensor<F>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor<F>] {
        &mut self.params
    }

    pub fn decay_mask(&self) -> Vec<bool> {
        self.specs.iter().map(|s| s.decay).collect()
    }

    pub fn num_params(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    pub fn cast<G: Real>(&self) -> Model<G> {
        Model {
            config: self.config.clone(),
            specs: self.specs.clone(),
            index: self.index.clone(),
            params: self.params.iter().map(Tensor::cast).collect(),
        }
    }

    fn bind(&self, tape: &mut Tape<F>, track: bool) -> Vec<Var> {
        self.params
            .iter()
            .map(|p| tape.leaf(p.clone(), track))
            .collect()
    }

    /// Inference only; records nothing for differentiation.
    pub fn logits(&self, input: &ModelInput<F>) -> Result<Tensor<F>> {
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape, false);
        let out = forward(&mut tape, &self.config, &self.index, &vars, input)?;
        Ok(tape.value(out).clone())
    }

    /// Mean cross-entropy over the batch, the logits, and one gradient slot
    /// per parameter (`None` when a parameter does not reach the loss).
    pub fn loss_and_grads(
        &self,
        input: &ModelInput<F>,
        labels: &[usize],
    ) -> Result<(f64, Tensor<F>, Vec<Option<Tensor<F>>>)> {
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape, true);
        let logits = forward(&mut tape, &self.config, &self.index, &vars, input)?;
        let loss = tape.softmax_cross_entropy(logits, labels.into())?;
        let mut grads = tape.backward(loss)?;
        let loss_value = tape.value(loss).item().as_f64();
        let logits = tape.value(logits).clone();
        let grads = vars.iter().map(|&v| grads.take(v)).collect();
        Ok((loss_value, logits, grads))
    }
}
