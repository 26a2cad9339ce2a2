//! Toy pre-norm transformer encoder producing per-layer hidden embedding
//! stacks, with layer truncation and freeze/unfreeze support.
//!
//! Stands in for a large pre-trained speech encoder at desk scale: the
//! waveform frontend is replaced by direct feature input, and blocks use
//! plain sinusoidal positional encodings rather than learned relative
//! position biases.

use rand::Rng;
use rand_chacha::ChaCha12Rng;

use crate::tape::{Tape, Var};
use crate::tensor::{Tensor, TensorError};

const LAYER_NORM_EPS: f64 = 1e-5;

/// Encoder dimensions and init seed.
#[derive(Debug, Clone)]
pub struct EncoderConfig {
    pub num_layers: usize,
    pub hidden_dim: usize,
    pub num_heads: usize,
    pub ffn_dim: usize,
    pub seed: u64,
    /// Sinusoidal positional encoding added to the input (default on).
    pub use_positional: bool,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            num_layers: 6,
            hidden_dim: 16,
            num_heads: 2,
            ffn_dim: 32,
            seed: 0,
            use_positional: true,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<(), TensorError> {
        if self.num_layers == 0
            || self.hidden_dim == 0
            || self.num_heads == 0
            || self.ffn_dim == 0
            || !self.hidden_dim.is_multiple_of(self.num_heads)
        {
            return Err(TensorError::ShapeMismatch {
                op: "encoder config (hidden_dim must be a positive multiple of num_heads)",
                left: vec![self.hidden_dim],
                right: vec![self.num_heads],
            });
        }
        Ok(())
    }
}

/// All hidden embeddings of one utterance: a T×H×L tensor plus its id.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingStack {
    data: Tensor,
    utterance_id: String,
}

impl EmbeddingStack {
    pub fn new(data: Tensor, utterance_id: impl Into<String>) -> Result<Self, TensorError> {
        if data.rank() != 3 {
            return Err(TensorError::RankMismatch {
                op: "embedding stack",
                expected: 3,
                shape: data.shape().to_vec(),
            });
        }
        Ok(Self {
            data,
            utterance_id: utterance_id.into(),
        })
    }

    pub fn data(&self) -> &Tensor {
        &self.data
    }

    pub fn utterance_id(&self) -> &str {
        &self.utterance_id
    }

    pub fn num_frames(&self) -> usize {
        self.data.shape()[0]
    }

    pub fn hidden_dim(&self) -> usize {
        self.data.shape()[1]
    }

    pub fn num_layers(&self) -> usize {
        self.data.shape()[2]
    }
}

/// Keep only the first `k` layer slices; downstream merge blocks size
/// themselves to the reduced layer count.
pub fn truncate(stack: &EmbeddingStack, k: usize) -> Result<EmbeddingStack, TensorError> {
    let l = stack.num_layers();
    if k == 0 || k > l {
        return Err(TensorError::LayerCapOutOfRange { k, l });
    }
    if k == l {
        return Ok(stack.clone());
    }
    let (t, h) = (stack.num_frames(), stack.hidden_dim());
    let src = stack.data.data();
    let mut out = vec![0.0; t * h * k];
    for i in 0..t * h {
        out[i * k..(i + 1) * k].copy_from_slice(&src[i * l..i * l + k]);
    }
    EmbeddingStack::new(
        Tensor::new(vec![t, h, k], out)?,
        stack.utterance_id.clone(),
    )
}

/// One pre-norm transformer block's weights.
#[derive(Debug, Clone)]
pub struct LayerParams {
    pub ln1_gamma: Tensor,
    pub ln1_beta: Tensor,
    pub w_q: Tensor,
    pub b_q: Tensor,
    pub w_k: Tensor,
    pub b_k: Tensor,
    pub w_v: Tensor,
    pub b_v: Tensor,
    pub w_o: Tensor,
    pub b_o: Tensor,
    pub ln2_gamma: Tensor,
    pub ln2_beta: Tensor,
    pub w_ff1: Tensor,
    pub b_ff1: Tensor,
    pub w_ff2: Tensor,
    pub b_ff2: Tensor,
}

/// Tape handles for one block's weights.
#[derive(Debug, Clone, Copy)]
pub struct LayerVars {
    pub ln1_gamma: Var,
    pub ln1_beta: Var,
    pub w_q: Var,
    pub b_q: Var,
    pub w_k: Var,
    pub b_k: Var,
    pub w_v: Var,
    pub b_v: Var,
    pub w_o: Var,
    pub b_o: Var,
    pub ln2_gamma: Var,
    pub ln2_beta: Var,
    pub w_ff1: Var,
    pub b_ff1: Var,
    pub w_ff2: Var,
    pub b_ff2: Var,
}

macro_rules! layer_fields {
    ($macro_cb:ident) => {
        $macro_cb!(
            ln1_gamma, ln1_beta, w_q, b_q, w_k, b_k, w_v, b_v, w_o, b_o, ln2_gamma, ln2_beta,
            w_ff1, b_ff1, w_ff2, b_ff2
        )
    };
}

impl LayerParams {
    fn init(h: usize, ffn: usize, rng: &mut ChaCha12Rng) -> Self {
        let bound = 1.0 / (h as f64).sqrt();
        let mut mat = |rows: usize, cols: usize| {
            let data: Vec<f64> = (0..rows * cols)
                .map(|_| rng.random_range(-bound..=bound))
                .collect();
            Tensor::new(vec![rows, cols], data).expect("init shape")
        };
        Self {
            w_q: mat(h, h),
            w_k: mat(h, h),
            w_v: mat(h, h),
            w_o: mat(h, h),
            w_ff1: mat(h, ffn),
            w_ff2: mat(ffn, h),
            ln1_gamma: Tensor::new(vec![h], vec![1.0; h]).expect("ones"),
            ln1_beta: Tensor::zeros(&[h]),
            b_q: Tensor::zeros(&[h]),
            b_k: Tensor::zeros(&[h]),
            b_v: Tensor::zeros(&[h]),
            b_o: Tensor::zeros(&[h]),
            ln2_gamma: Tensor::new(vec![h], vec![1.0; h]).expect("ones"),
            ln2_beta: Tensor::zeros(&[h]),
            b_ff1: Tensor::zeros(&[ffn]),
            b_ff2: Tensor::zeros(&[h]),
        }
    }

    fn push(&self, tape: &mut Tape, trainable: bool) -> LayerVars {
        let mut leaf = |t: &Tensor| {
            if trainable {
                tape.param(t.clone())
            } else {
                tape.constant(t.clone())
            }
        };
        macro_rules! push_all {
            ($($f:ident),*) => {
                LayerVars { $($f: leaf(&self.$f)),* }
            };
        }
        layer_fields!(push_all)
    }

    fn entries(&self, prefix: &str) -> Vec<(String, &Tensor)> {
        macro_rules! collect {
            ($($f:ident),*) => {
                vec![$((format!("{prefix}.{}", stringify!($f)), &self.$f)),*]
            };
        }
        layer_fields!(collect)
    }

    fn entries_mut(&mut self, prefix: &str) -> Vec<(String, &mut Tensor)> {
        macro_rules! collect_mut {
            ($($f:ident),*) => {
                vec![$((format!("{prefix}.{}", stringify!($f)), &mut self.$f)),*]
            };
        }
        layer_fields!(collect_mut)
    }
}

impl LayerVars {
    fn entries(&self, prefix: &str) -> Vec<(String, Var)> {
        macro_rules! collect {
            ($($f:ident),*) => {
                vec![$((format!("{prefix}.{}", stringify!($f)), self.$f)),*]
            };
        }
        layer_fields!(collect)
    }
}

/// Full encoder weights plus the freeze flag consulted by the trainer.
#[derive(Debug, Clone)]
pub struct EncoderParams {
    pub layers: Vec<LayerParams>,
    frozen: bool,
}

impl EncoderParams {
    /// Initialize from the config seed: weights uniform(-1/sqrt(H), 1/sqrt(H)),
    /// biases zero, layer-norm gains one.
    pub fn init(config: &EncoderConfig, rng: &mut ChaCha12Rng) -> Self {
        let layers = (0..config.num_layers)
            .map(|_| LayerParams::init(config.hidden_dim, config.ffn_dim, rng))
            .collect();
        Self {
            layers,
            frozen: false,
        }
    }

    /// Frozen parameters receive zero gradient and are skipped by the
    /// optimizer; unfrozen parameters resume normal updates.
    pub fn set_frozen(&mut self, frozen: bool) {
        self.frozen = frozen;
    }

    pub fn frozen(&self) -> bool {
        self.frozen
    }

    pub fn push(&self, tape: &mut Tape) -> EncoderVars {
        let trainable = !self.frozen;
        EncoderVars {
            layers: self
                .layers
                .iter()
                .map(|l| l.push(tape, trainable))
                .collect(),
        }
    }

    pub fn entries(&self, prefix: &str) -> Vec<(String, &Tensor)> {
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(i, l)| l.entries(&format!("{prefix}.{i}")))
            .collect()
    }

    pub fn entries_mut(&mut self, prefix: &str) -> Vec<(String, &mut Tensor)> {
        self.layers
            .iter_mut()
            .enumerate()
            .flat_map(|(i, l)| l.entries_mut(&format!("{prefix}.{i}")))
            .collect()
    }
}

/// Tape handles for the full encoder.
pub struct EncoderVars {
    pub layers: Vec<LayerVars>,
}

impl EncoderVars {
    pub fn entries(&self, prefix: &str) -> Vec<(String, Var)> {
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(i, l)| l.entries(&format!("{prefix}.{i}")))
            .collect()
    }
}

/// Sinusoidal positional encoding table of shape T×H.
pub fn positional_encoding(t: usize, h: usize) -> Tensor {
    let mut data = vec![0.0; t * h];
    for ti in 0..t {
        for j in 0..h / 2 {
            let rate = 10_000f64.powf(2.0 * j as f64 / h as f64);
            let angle = ti as f64 / rate;
            data[ti * h + 2 * j] = angle.sin();
            data[ti * h + 2 * j + 1] = angle.cos();
        }
        if h % 2 == 1 {
            let j = h / 2;
            let rate = 10_000f64.powf(2.0 * j as f64 / h as f64);
            data[ti * h + h - 1] = (ti as f64 / rate).sin();
        }
    }
    Tensor::new(vec![t, h], data).expect("positional encoding shape")
}

fn attention_block(
    tape: &mut Tape,
    x: Var,
    layer: &LayerVars,
    num_heads: usize,
) -> Result<Var, TensorError> {
    let h = tape.shape(x)[1];
    let d = h / num_heads;
    let scale = 1.0 / (d as f64).sqrt();

    let q0 = tape.matmul(x, layer.w_q)?;
    let q = tape.add_row(q0, layer.b_q)?;
    let k0 = tape.matmul(x, layer.w_k)?;
    let k = tape.add_row(k0, layer.b_k)?;
    let v0 = tape.matmul(x, layer.w_v)?;
    let v = tape.add_row(v0, layer.b_v)?;

    let mut heads = Vec::with_capacity(num_heads);
    for head in 0..num_heads {
        let (lo, hi) = (head * d, (head + 1) * d);
        let qh = tape.slice_cols(q, lo, hi)?;
        let kh = tape.slice_cols(k, lo, hi)?;
        let vh = tape.slice_cols(v, lo, hi)?;
        let kt = tape.transpose(kh)?;
        let raw = tape.matmul(qh, kt)?;
        let scores = tape.scale(raw, scale);
        let attn = tape.softmax_rows(scores)?;
        heads.push(tape.matmul(attn, vh)?);
    }
    let mut merged = heads[0];
    for &head in &heads[1..] {
        merged = tape.concat_cols(merged, head)?;
    }
    let proj = tape.matmul(merged, layer.w_o)?;
    tape.add_row(proj, layer.b_o)
}

/// Differentiable forward pass through the first `upto` blocks, returning
/// the T×H×`upto` stack of block outputs.
pub fn encode_tape(
    tape: &mut Tape,
    input: Var,
    vars: &EncoderVars,
    config: &EncoderConfig,
    upto: usize,
) -> Result<Var, TensorError> {
    config.validate()?;
    if tape.shape(input).len() != 2 || tape.shape(input)[1] != config.hidden_dim {
        return Err(TensorError::ShapeMismatch {
            op: "encode",
            left: tape.shape(input).to_vec(),
            right: vec![config.hidden_dim],
        });
    }
    assert!(
        upto >= 1 && upto <= vars.layers.len(),
        "layer count {upto} out of range"
    );

    let mut x = if config.use_positional {
        let t = tape.shape(input)[0];
        let pe = tape.constant(positional_encoding(t, config.hidden_dim));
        tape.add(input, pe)?
    } else {
        input
    };

    let mut outputs = Vec::with_capacity(upto);
    for layer in &vars.layers[..upto] {
        let normed = tape.layer_norm(x, layer.ln1_gamma, layer.ln1_beta, LAYER_NORM_EPS)?;
        let attn = attention_block(tape, normed, layer, config.num_heads)?;
        x = tape.add(x, attn)?;

        let normed2 = tape.layer_norm(x, layer.ln2_gamma, layer.ln2_beta, LAYER_NORM_EPS)?;
        let ff0 = tape.matmul(normed2, layer.w_ff1)?;
        let ff1 = tape.add_row(ff0, layer.b_ff1)?;
        let act = tape.swish(ff1);
        let ff2 = tape.matmul(act, layer.w_ff2)?;
        let ff = tape.add_row(ff2, layer.b_ff2)?;
        x = tape.add(x, ff)?;

        outputs.push(x);
    }
    tape.stack_layers(&outputs)
}

/// Run the full encoder over one feature sequence.
pub fn encode(
    input: &Tensor,
    params: &EncoderParams,
    config: &EncoderConfig,
    utterance_id: impl Into<String>,
) -> Result<EmbeddingStack, TensorError> {
    let mut tape = Tape::new();
    let x = tape.constant(input.clone());
    let vars = params.push(&mut tape);
    let stack = encode_tape(&mut tape, x, &vars, config, config.num_layers)?;
    EmbeddingStack::new(tape.value(stack).clone(), utterance_id)
}
