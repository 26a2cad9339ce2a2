//! Attentive merging of stacked layer embeddings.
//!
//! A squeeze step collapses each layer to one scalar (time average, then a
//! linear map through a SWISH), an excitation maps those scalars through a
//! two-layer bottleneck and a sigmoid into per-layer gates, the gates
//! rescale the stack, and a three-matrix linear bottleneck merges the
//! gated stack down to one T×H sequence.

use rand::Rng;
use rand_chacha::ChaCha12Rng;

use crate::encoder::EmbeddingStack;
use crate::tape::{Tape, Var};
use crate::tensor::{Tensor, TensorError};

/// Derived block dimensions for a given hidden size and layer count:
/// excitation bottleneck `s = max(1, L/2)` and merge bottleneck
/// `i = max(1, H*L/4)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AttmDims {
    pub hidden_dim: usize,
    pub num_layers: usize,
    pub excite_dim: usize,
    pub merge_dim: usize,
}

impl AttmDims {
    pub fn new(hidden_dim: usize, num_layers: usize) -> Self {
        Self {
            hidden_dim,
            num_layers,
            excite_dim: (num_layers / 2).max(1),
            merge_dim: (hidden_dim * num_layers / 4).max(1),
        }
    }
}

/// Trainable weights of the attentive-merge block.
#[derive(Debug, Clone)]
pub struct AttmParams {
    /// H×1 squeeze projection.
    pub w_squeeze: Tensor,
    /// L×s excitation expansion.
    pub w_excite1: Tensor,
    /// s×L excitation contraction.
    pub w_excite2: Tensor,
    /// (H*L)×i merge projection, first stage.
    pub w_merge1: Tensor,
    /// i×i merge projection, second stage.
    pub w_merge2: Tensor,
    /// i×H merge projection, final stage.
    pub w_merge3: Tensor,
}

/// Tape handles for [`AttmParams`].
#[derive(Debug, Clone, Copy)]
pub struct AttmVars {
    pub w_squeeze: Var,
    pub w_excite1: Var,
    pub w_excite2: Var,
    pub w_merge1: Var,
    pub w_merge2: Var,
    pub w_merge3: Var,
}

macro_rules! attm_fields {
    ($cb:ident) => {
        $cb!(w_squeeze, w_excite1, w_excite2, w_merge1, w_merge2, w_merge3)
    };
}

impl AttmParams {
    /// Initialize every matrix uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)).
    pub fn init(dims: AttmDims, rng: &mut ChaCha12Rng) -> Self {
        let mut mat = |rows: usize, cols: usize| {
            let bound = 1.0 / (rows as f64).sqrt();
            let data: Vec<f64> = (0..rows * cols)
                .map(|_| rng.random_range(-bound..=bound))
                .collect();
            Tensor::new(vec![rows, cols], data).expect("init shape")
        };
        let (h, l) = (dims.hidden_dim, dims.num_layers);
        let (s, i) = (dims.excite_dim, dims.merge_dim);
        Self {
            w_squeeze: mat(h, 1),
            w_excite1: mat(l, s),
            w_excite2: mat(s, l),
            w_merge1: mat(h * l, i),
            w_merge2: mat(i, i),
            w_merge3: mat(i, h),
        }
    }

    pub fn dims(&self) -> AttmDims {
        AttmDims::new(self.w_squeeze.shape()[0], self.w_excite1.shape()[0])
    }

    pub fn push(&self, tape: &mut Tape) -> AttmVars {
        macro_rules! push_all {
            ($($f:ident),*) => {
                AttmVars { $($f: tape.param(self.$f.clone())),* }
            };
        }
        attm_fields!(push_all)
    }

    pub fn entries(&self, prefix: &str) -> Vec<(String, &Tensor)> {
        macro_rules! collect {
            ($($f:ident),*) => {
                vec![$((format!("{prefix}.{}", stringify!($f)), &self.$f)),*]
            };
        }
        attm_fields!(collect)
    }

    pub fn entries_mut(&mut self, prefix: &str) -> Vec<(String, &mut Tensor)> {
        macro_rules! collect_mut {
            ($($f:ident),*) => {
                vec![$((format!("{prefix}.{}", stringify!($f)), &mut self.$f)),*]
            };
        }
        attm_fields!(collect_mut)
    }
}

impl AttmVars {
    pub fn entries(&self, prefix: &str) -> Vec<(String, Var)> {
        macro_rules! collect {
            ($($f:ident),*) => {
                vec![$((format!("{prefix}.{}", stringify!($f)), self.$f)),*]
            };
        }
        attm_fields!(collect)
    }
}

/// Per-layer gates produced by the excitation; sigmoid outputs, so every
/// entry lies in (0,1) when produced by [`excite`].
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionWeights {
    values: Tensor,
}

impl AttentionWeights {
    /// Wrap a 1×L (or length-L) weight tensor without range checking; used
    /// for inspection and for injecting fixed gates in tests. `excite`
    /// guarantees the (0,1) range for weights it produces.
    pub fn from_raw(values: Tensor) -> Result<Self, TensorError> {
        let values = match values.rank() {
            1 => {
                let l = values.shape()[0];
                values.reshape(vec![1, l])?
            }
            2 if values.shape()[0] == 1 => values,
            _ => {
                return Err(TensorError::RankMismatch {
                    op: "attention weights",
                    expected: 2,
                    shape: values.shape().to_vec(),
                })
            }
        };
        Ok(Self { values })
    }

    /// Row vector 1×L.
    pub fn values(&self) -> &Tensor {
        &self.values
    }

    pub fn num_layers(&self) -> usize {
        self.values.shape()[1]
    }

    /// Flat per-layer weights.
    pub fn as_slice(&self) -> &[f64] {
        self.values.data()
    }
}

fn check_stack_hidden(op: &'static str, stack: &Tensor, h: usize) -> Result<(), TensorError> {
    if stack.rank() != 3 || stack.shape()[1] != h {
        return Err(TensorError::ShapeMismatch {
            op,
            left: stack.shape().to_vec(),
            right: vec![h],
        });
    }
    Ok(())
}

/// Squeeze a T×H×L stack into one scalar per layer: time-average each
/// layer, project H to 1, apply SWISH. Returns a 1×L row.
pub fn squeeze_tape(tape: &mut Tape, stack: Var, w_squeeze: Var) -> Result<Var, TensorError> {
    let h = tape.shape(w_squeeze)[0];
    check_stack_hidden("squeeze", tape.value(stack), h)?;
    let l = tape.shape(stack)[2];
    let mean = tape.mean_axis(stack, 0)?; // H×L
    let by_layer = tape.transpose(mean)?; // L×H
    let proj = tape.matmul(by_layer, w_squeeze)?; // L×1
    let row = tape.reshape(proj, vec![1, l])?;
    Ok(tape.swish(row))
}

/// Excite squeezed per-layer scalars into per-layer gates in (0,1).
pub fn excite_tape(
    tape: &mut Tape,
    squeezed: Var,
    w_excite1: Var,
    w_excite2: Var,
) -> Result<Var, TensorError> {
    let a = tape.matmul(squeezed, w_excite1)?;
    let act = tape.swish(a);
    let b = tape.matmul(act, w_excite2)?;
    Ok(tape.sigmoid(b))
}

/// Hadamard-rescale each layer slice of the stack by its gate.
pub fn reweight_tape(tape: &mut Tape, stack: Var, weights: Var) -> Result<Var, TensorError> {
    let l = tape.value(weights).len();
    let flat = tape.reshape(weights, vec![l])?;
    tape.mul_layerwise(stack, flat)
}

/// Merge the gated stack to T×H: flatten each frame (layer-major) and run
/// the bare three-matrix projection chain, no biases or activations.
pub fn merge_projection_tape(
    tape: &mut Tape,
    gated: Var,
    w_merge1: Var,
    w_merge2: Var,
    w_merge3: Var,
) -> Result<Var, TensorError> {
    let flat = tape.flatten_frames(gated)?;
    let a = tape.matmul(flat, w_merge1)?;
    let b = tape.matmul(a, w_merge2)?;
    tape.matmul(b, w_merge3)
}

/// Full attentive merge; returns the merged T×H sequence and the gates.
pub fn forward_tape(
    tape: &mut Tape,
    stack: Var,
    vars: &AttmVars,
) -> Result<(Var, Var), TensorError> {
    let squeezed = squeeze_tape(tape, stack, vars.w_squeeze)?;
    let weights = excite_tape(tape, squeezed, vars.w_excite1, vars.w_excite2)?;
    let gated = reweight_tape(tape, stack, weights)?;
    let merged = merge_projection_tape(tape, gated, vars.w_merge1, vars.w_merge2, vars.w_merge3)?;
    Ok((merged, weights))
}

// ── Plain (non-tape) entry points ────────────────────────────────────

/// Squeeze step on a plain stack; returns the length-L vector.
pub fn squeeze(stack: &EmbeddingStack, w_squeeze: &Tensor) -> Result<Tensor, TensorError> {
    let mut tape = Tape::new();
    let s = tape.constant(stack.data().clone());
    let w = tape.constant(w_squeeze.clone());
    let out = squeeze_tape(&mut tape, s, w)?;
    let l = stack.num_layers();
    tape.value(out).reshape(vec![l])
}

/// Excitation on a squeezed vector; returns gates in (0,1).
pub fn excite(
    squeezed: &Tensor,
    w_excite1: &Tensor,
    w_excite2: &Tensor,
) -> Result<AttentionWeights, TensorError> {
    let row = match squeezed.rank() {
        1 => squeezed.reshape(vec![1, squeezed.shape()[0]])?,
        _ => squeezed.clone(),
    };
    let mut tape = Tape::new();
    let s = tape.constant(row);
    let w1 = tape.constant(w_excite1.clone());
    let w2 = tape.constant(w_excite2.clone());
    let out = excite_tape(&mut tape, s, w1, w2)?;
    AttentionWeights::from_raw(tape.value(out).clone())
}

/// Rescale a stack by fixed per-layer gates.
pub fn reweight(stack: &EmbeddingStack, weights: &AttentionWeights) -> Result<Tensor, TensorError> {
    let mut tape = Tape::new();
    let s = tape.constant(stack.data().clone());
    let w = tape.constant(weights.values().clone());
    let out = reweight_tape(&mut tape, s, w)?;
    Ok(tape.value(out).clone())
}

/// Bottleneck merge of a gated stack down to T×H.
pub fn merge_projection(
    gated: &Tensor,
    w_merge1: &Tensor,
    w_merge2: &Tensor,
    w_merge3: &Tensor,
) -> Result<Tensor, TensorError> {
    let mut tape = Tape::new();
    let g = tape.constant(gated.clone());
    let w1 = tape.constant(w_merge1.clone());
    let w2 = tape.constant(w_merge2.clone());
    let w3 = tape.constant(w_merge3.clone());
    let out = merge_projection_tape(&mut tape, g, w1, w2, w3)?;
    Ok(tape.value(out).clone())
}

/// Full attentive merge of a plain stack.
pub fn forward(
    stack: &EmbeddingStack,
    params: &AttmParams,
) -> Result<(Tensor, AttentionWeights), TensorError> {
    let mut tape = Tape::new();
    let s = tape.constant(stack.data().clone());
    let vars = params.push(&mut tape);
    let (merged, weights) = forward_tape(&mut tape, s, &vars)?;
    Ok((
        tape.value(merged).clone(),
        AttentionWeights::from_raw(tape.value(weights).clone())?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream_rng, Stream};
    use rand::Rng;

    fn stack_from(data: Vec<f64>, t: usize, h: usize, l: usize) -> EmbeddingStack {
        EmbeddingStack::new(Tensor::new(vec![t, h, l], data).unwrap(), "utt").unwrap()
    }

    fn random_stack(t: usize, h: usize, l: usize, seed: u64) -> EmbeddingStack {
        let mut rng = stream_rng(seed, Stream::Data);
        let data: Vec<f64> = (0..t * h * l).map(|_| rng.random_range(-1.5..1.5)).collect();
        stack_from(data, t, h, l)
    }

    #[test]
    fn dims_follow_scaling_rules() {
        let d = AttmDims::new(1024, 24);
        assert_eq!(d.excite_dim, 12);
        assert_eq!(d.merge_dim, 6144);
        // clamped for tiny configurations
        let d = AttmDims::new(1, 1);
        assert_eq!(d.excite_dim, 1);
        assert_eq!(d.merge_dim, 1);
        let d = AttmDims::new(16, 3);
        assert_eq!(d.excite_dim, 1);
        assert_eq!(d.merge_dim, 12);
    }

    #[test]
    fn squeeze_of_zero_stack_is_zero() {
        let stack = stack_from(vec![0.0; 3 * 4 * 2], 3, 4, 2);
        let w = Tensor::new(vec![4, 1], vec![0.3, -0.2, 0.9, 0.5]).unwrap();
        let out = squeeze(&stack, &w).unwrap();
        assert_eq!(out.data(), &[0.0, 0.0]);
    }

    #[test]
    fn squeeze_hand_case() {
        // T=1, H=1, unit squeeze weight, layer values [2, -1]
        let stack = stack_from(vec![2.0, -1.0], 1, 1, 2);
        let w = Tensor::new(vec![1, 1], vec![1.0]).unwrap();
        let out = squeeze(&stack, &w).unwrap();
        let swish = |x: f64| x / (1.0 + (-x).exp());
        assert!((out.data()[0] - swish(2.0)).abs() < 1e-15);
        assert!((out.data()[1] - swish(-1.0)).abs() < 1e-15);
        assert!((out.data()[0] - 1.76159).abs() < 1e-5);
        assert!((out.data()[1] + 0.26894).abs() < 1e-5);
    }

    #[test]
    fn squeeze_rejects_hidden_mismatch() {
        let stack = random_stack(2, 4, 3, 1);
        let w = Tensor::new(vec![3, 1], vec![1.0, 1.0, 1.0]).unwrap();
        assert!(squeeze(&stack, &w).is_err());
    }

    #[test]
    fn excite_of_zero_input_is_half_everywhere() {
        let squeezed = Tensor::zeros(&[4]);
        let w1 = Tensor::zeros(&[4, 2]);
        let w2 = Tensor::zeros(&[2, 4]);
        let gates = excite(&squeezed, &w1, &w2).unwrap();
        assert!(gates.as_slice().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn excite_stays_in_unit_interval() {
        let mut rng = stream_rng(3, Stream::Data);
        for _ in 0..50 {
            let l = rng.random_range(1..=6);
            let s = (l / 2).max(1);
            // moderate pre-activations: sigmoid saturates to exact 0/1
            // only beyond |x| ~ 37, far outside this range
            let squeezed =
                Tensor::new(vec![l], (0..l).map(|_| rng.random_range(-1.0..1.0)).collect())
                    .unwrap();
            let w1 = Tensor::new(
                vec![l, s],
                (0..l * s).map(|_| rng.random_range(-0.8..0.8)).collect(),
            )
            .unwrap();
            let w2 = Tensor::new(
                vec![s, l],
                (0..s * l).map(|_| rng.random_range(-0.8..0.8)).collect(),
            )
            .unwrap();
            let gates = excite(&squeezed, &w1, &w2).unwrap();
            assert!(gates.as_slice().iter().all(|&v| v > 0.0 && v < 1.0));
        }
    }

    #[test]
    fn reweight_identity_zero_and_selection() {
        let stack = random_stack(3, 2, 4, 5);

        let ones = AttentionWeights::from_raw(Tensor::new(vec![4], vec![1.0; 4]).unwrap()).unwrap();
        assert_eq!(&reweight(&stack, &ones).unwrap(), stack.data());

        let zeros = AttentionWeights::from_raw(Tensor::zeros(&[4])).unwrap();
        assert!(reweight(&stack, &zeros)
            .unwrap()
            .data()
            .iter()
            .all(|&v| v == 0.0));

        let onehot =
            AttentionWeights::from_raw(Tensor::new(vec![4], vec![0.0, 0.0, 1.0, 0.0]).unwrap())
                .unwrap();
        let picked = reweight(&stack, &onehot).unwrap();
        for t in 0..3 {
            for h in 0..2 {
                for l in 0..4 {
                    let expect = if l == 2 { stack.data().at(&[t, h, l]) } else { 0.0 };
                    assert_eq!(picked.at(&[t, h, l]), expect);
                }
            }
        }
    }

    #[test]
    fn reweight_rejects_length_mismatch() {
        let stack = random_stack(2, 2, 3, 7);
        let w = AttentionWeights::from_raw(Tensor::new(vec![2], vec![0.5, 0.5]).unwrap()).unwrap();
        assert!(reweight(&stack, &w).is_err());
    }

    #[test]
    fn merge_projection_of_zero_input_is_zero() {
        let dims = AttmDims::new(4, 2);
        let mut rng = stream_rng(11, Stream::Init);
        let params = AttmParams::init(dims, &mut rng);
        let gated = Tensor::zeros(&[3, 4, 2]);
        let out =
            merge_projection(&gated, &params.w_merge1, &params.w_merge2, &params.w_merge3).unwrap();
        assert_eq!(out.shape(), &[3, 4]);
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn forward_composition_matches_stagewise_calls() {
        let dims = AttmDims::new(6, 4);
        let mut rng = stream_rng(13, Stream::Init);
        let params = AttmParams::init(dims, &mut rng);
        let stack = random_stack(5, 6, 4, 17);

        let (merged, weights) = forward(&stack, &params).unwrap();

        let squeezed = squeeze(&stack, &params.w_squeeze).unwrap();
        let gates = excite(&squeezed, &params.w_excite1, &params.w_excite2).unwrap();
        let gated = reweight(&stack, &gates).unwrap();
        let merged2 =
            merge_projection(&gated, &params.w_merge1, &params.w_merge2, &params.w_merge3)
                .unwrap();

        assert_eq!(weights.values().data(), gates.values().data());
        assert_eq!(merged.data(), merged2.data());
    }

    #[test]
    fn gates_invariant_under_frame_permutation() {
        let dims = AttmDims::new(5, 3);
        let mut rng = stream_rng(19, Stream::Init);
        let params = AttmParams::init(dims, &mut rng);
        let stack = random_stack(6, 5, 3, 23);

        // reverse the frame order
        let (t, h, l) = (6, 5, 3);
        let mut rev = vec![0.0; t * h * l];
        for ti in 0..t {
            let src = &stack.data().data()[ti * h * l..(ti + 1) * h * l];
            rev[(t - 1 - ti) * h * l..(t - ti) * h * l].copy_from_slice(src);
        }
        let reversed = stack_from(rev, t, h, l);

        let (_, w1) = forward(&stack, &params).unwrap();
        let (_, w2) = forward(&reversed, &params).unwrap();
        for (a, b) in w1.as_slice().iter().zip(w2.as_slice()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn attention_weight_names_align() {
        let dims = AttmDims::new(4, 2);
        let mut rng = stream_rng(29, Stream::Init);
        let params = AttmParams::init(dims, &mut rng);
        let mut tape = Tape::new();
        let vars = params.push(&mut tape);
        let a: Vec<String> = params.entries("attm").into_iter().map(|(n, _)| n).collect();
        let b: Vec<String> = vars.entries("attm").into_iter().map(|(n, _)| n).collect();
        assert_eq!(a, b);
    }
}
