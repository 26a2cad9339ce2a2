//! Downstream binary classifiers over merged embedding sequences: a
//! single-layer gated recurrent head and an attentive-statistics-pooling
//! head, plus the scalar detection score used for error-rate evaluation.

use rand::Rng;
use rand_chacha::ChaCha12Rng;

use crate::tape::{Tape, Var};
use crate::tensor::{Tensor, TensorError};

/// Which recurrent state feeds the output projection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum StateReduction {
    /// Final hidden state (default).
    #[default]
    Final,
    /// Mean of the hidden states over time.
    Mean,
}

/// Single-layer gated recurrence (input H, hidden r) with an r->2 output
/// projection. Gate blocks are ordered input, forget, cell, output within
/// the 4r gate dimension.
#[derive(Debug, Clone)]
pub struct RecurrentParams {
    pub w_input: Tensor,
    pub w_hidden: Tensor,
    pub b_gates: Tensor,
    pub w_out: Tensor,
    pub b_out: Tensor,
    pub reduction: StateReduction,
}

#[derive(Debug, Clone, Copy)]
pub struct RecurrentVars {
    pub w_input: Var,
    pub w_hidden: Var,
    pub b_gates: Var,
    pub w_out: Var,
    pub b_out: Var,
}

macro_rules! recurrent_fields {
    ($cb:ident) => {
        $cb!(w_input, w_hidden, b_gates, w_out, b_out)
    };
}

impl RecurrentParams {
    pub fn init(input_dim: usize, hidden: usize, rng: &mut ChaCha12Rng) -> Self {
        let mut mat = |rows: usize, cols: usize| {
            let bound = 1.0 / (rows as f64).sqrt();
            let data: Vec<f64> = (0..rows * cols)
                .map(|_| rng.random_range(-bound..=bound))
                .collect();
            Tensor::new(vec![rows, cols], data).expect("init shape")
        };
        Self {
            w_input: mat(input_dim, 4 * hidden),
            w_hidden: mat(hidden, 4 * hidden),
            b_gates: Tensor::zeros(&[4 * hidden]),
            w_out: mat(hidden, 2),
            b_out: Tensor::zeros(&[2]),
            reduction: StateReduction::Final,
        }
    }

    pub fn hidden_size(&self) -> usize {
        self.w_hidden.shape()[0]
    }

    pub fn push(&self, tape: &mut Tape) -> RecurrentVars {
        macro_rules! push_all {
            ($($f:ident),*) => {
                RecurrentVars { $($f: tape.param(self.$f.clone())),* }
            };
        }
        recurrent_fields!(push_all)
    }

    pub fn entries(&self, prefix: &str) -> Vec<(String, &Tensor)> {
        macro_rules! collect {
            ($($f:ident),*) => {
                vec![$((format!("{prefix}.{}", stringify!($f)), &self.$f)),*]
            };
        }
        recurrent_fields!(collect)
    }

    pub fn entries_mut(&mut self, prefix: &str) -> Vec<(String, &mut Tensor)> {
        macro_rules! collect_mut {
            ($($f:ident),*) => {
                vec![$((format!("{prefix}.{}", stringify!($f)), &mut self.$f)),*]
            };
        }
        recurrent_fields!(collect_mut)
    }
}

impl RecurrentVars {
    pub fn entries(&self, prefix: &str) -> Vec<(String, Var)> {
        macro_rules! collect {
            ($($f:ident),*) => {
                vec![$((format!("{prefix}.{}", stringify!($f)), self.$f)),*]
            };
        }
        recurrent_fields!(collect)
    }
}

fn check_sequence(op: &'static str, shape: &[usize], dim: usize) -> Result<(), TensorError> {
    if shape.len() != 2 || shape[1] != dim {
        return Err(TensorError::ShapeMismatch {
            op,
            left: shape.to_vec(),
            right: vec![dim],
        });
    }
    Ok(())
}

/// Recurrence over the frames of a T×H sequence; logits [bonafide, spoof].
pub fn recurrent_tape(
    tape: &mut Tape,
    x: Var,
    vars: &RecurrentVars,
    reduction: StateReduction,
) -> Result<Var, TensorError> {
    let input_dim = tape.shape(vars.w_input)[0];
    check_sequence("recurrent head", tape.shape(x), input_dim)?;
    let t_len = tape.shape(x)[0];
    let r = tape.shape(vars.w_hidden)[0];

    let mut h = tape.constant(Tensor::zeros(&[1, r]));
    let mut c = tape.constant(Tensor::zeros(&[1, r]));
    let mut h_sum: Option<Var> = None;

    for t in 0..t_len {
        let frame = tape.slice_rows(x, t, t + 1)?;
        let gx = tape.matmul(frame, vars.w_input)?;
        let gh = tape.matmul(h, vars.w_hidden)?;
        let gsum = tape.add(gx, gh)?;
        let gates = tape.add_row(gsum, vars.b_gates)?;

        let pre_i = tape.slice_cols(gates, 0, r)?;
        let pre_f = tape.slice_cols(gates, r, 2 * r)?;
        let pre_g = tape.slice_cols(gates, 2 * r, 3 * r)?;
        let pre_o = tape.slice_cols(gates, 3 * r, 4 * r)?;

        let gate_i = tape.sigmoid(pre_i);
        let gate_f = tape.sigmoid(pre_f);
        let cell = tape.tanh(pre_g);
        let gate_o = tape.sigmoid(pre_o);

        let keep = tape.mul(gate_f, c)?;
        let write = tape.mul(gate_i, cell)?;
        c = tape.add(keep, write)?;
        let c_act = tape.tanh(c);
        h = tape.mul(gate_o, c_act)?;

        if reduction == StateReduction::Mean {
            h_sum = Some(match h_sum {
                Some(acc) => tape.add(acc, h)?,
                None => h,
            });
        }
    }

    let state = match reduction {
        StateReduction::Final => h,
        StateReduction::Mean => tape.scale(h_sum.expect("t_len >= 1"), 1.0 / t_len as f64),
    };
    let proj = tape.matmul(state, vars.w_out)?;
    let logits = tape.add_row(proj, vars.b_out)?;
    tape.reshape(logits, vec![2])
}

/// Plain recurrent head over a sequence.
pub fn recurrent_head(x: &Tensor, params: &RecurrentParams) -> Result<Tensor, TensorError> {
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let vars = params.push(&mut tape);
    let logits = recurrent_tape(&mut tape, xv, &vars, params.reduction)?;
    Ok(tape.value(logits).clone())
}

/// Attentive-statistics-pooling head: frame-wise projection with SWISH, a
/// scalar attention score per frame normalized over time, attention-weighted
/// mean and standard deviation concatenated and projected to 2 logits.
#[derive(Debug, Clone)]
pub struct PoolingParams {
    pub w_proj: Tensor,
    pub b_proj: Tensor,
    pub w_score: Tensor,
    pub b_score: Tensor,
    pub w_out: Tensor,
    pub b_out: Tensor,
}

#[derive(Debug, Clone, Copy)]
pub struct PoolingVars {
    pub w_proj: Var,
    pub b_proj: Var,
    pub w_score: Var,
    pub b_score: Var,
    pub w_out: Var,
    pub b_out: Var,
}

macro_rules! pooling_fields {
    ($cb:ident) => {
        $cb!(w_proj, b_proj, w_score, b_score, w_out, b_out)
    };
}

impl PoolingParams {
    pub fn init(input_dim: usize, proj_dim: usize, rng: &mut ChaCha12Rng) -> Self {
        let mut mat = |rows: usize, cols: usize| {
            let bound = 1.0 / (rows as f64).sqrt();
            let data: Vec<f64> = (0..rows * cols)
                .map(|_| rng.random_range(-bound..=bound))
                .collect();
            Tensor::new(vec![rows, cols], data).expect("init shape")
        };
        Self {
            w_proj: mat(input_dim, proj_dim),
            b_proj: Tensor::zeros(&[proj_dim]),
            w_score: mat(proj_dim, 1),
            b_score: Tensor::zeros(&[1]),
            w_out: mat(2 * proj_dim, 2),
            b_out: Tensor::zeros(&[2]),
        }
    }

    pub fn proj_dim(&self) -> usize {
        self.w_proj.shape()[1]
    }

    pub fn push(&self, tape: &mut Tape) -> PoolingVars {
        macro_rules! push_all {
            ($($f:ident),*) => {
                PoolingVars { $($f: tape.param(self.$f.clone())),* }
            };
        }
        pooling_fields!(push_all)
    }

    pub fn entries(&self, prefix: &str) -> Vec<(String, &Tensor)> {
        macro_rules! collect {
            ($($f:ident),*) => {
                vec![$((format!("{prefix}.{}", stringify!($f)), &self.$f)),*]
            };
        }
        pooling_fields!(collect)
    }

    pub fn entries_mut(&mut self, prefix: &str) -> Vec<(String, &mut Tensor)> {
        macro_rules! collect_mut {
            ($($f:ident),*) => {
                vec![$((format!("{prefix}.{}", stringify!($f)), &mut self.$f)),*]
            };
        }
        pooling_fields!(collect_mut)
    }
}

impl PoolingVars {
    pub fn entries(&self, prefix: &str) -> Vec<(String, Var)> {
        macro_rules! collect {
            ($($f:ident),*) => {
                vec![$((format!("{prefix}.{}", stringify!($f)), self.$f)),*]
            };
        }
        pooling_fields!(collect)
    }
}

/// Pooling head over a T×H sequence; logits [bonafide, spoof].
pub fn pooling_tape(tape: &mut Tape, x: Var, vars: &PoolingVars) -> Result<Var, TensorError> {
    let input_dim = tape.shape(vars.w_proj)[0];
    check_sequence("pooling head", tape.shape(x), input_dim)?;
    let t_len = tape.shape(x)[0];

    let proj = tape.matmul(x, vars.w_proj)?;
    let proj_b = tape.add_row(proj, vars.b_proj)?;
    let frames = tape.swish(proj_b); // T×p

    let raw = tape.matmul(frames, vars.w_score)?;
    let scores = tape.add_row(raw, vars.b_score)?; // T×1
    let scores_row = tape.reshape(scores, vec![1, t_len])?;
    let alpha = tape.softmax_rows(scores_row)?; // 1×T, sums to 1

    let mean = tape.matmul(alpha, frames)?; // 1×p
    let sq = tape.mul(frames, frames)?;
    let second = tape.matmul(alpha, sq)?; // 1×p
    let mean_sq = tape.mul(mean, mean)?;
    let variance = tape.sub(second, mean_sq)?;
    let std = tape.sqrt_clamped(variance);

    let stats = tape.concat_cols(mean, std)?; // 1×2p
    let out = tape.matmul(stats, vars.w_out)?;
    let logits = tape.add_row(out, vars.b_out)?;
    tape.reshape(logits, vec![2])
}

/// Plain pooling head over a sequence.
pub fn pooling_head(x: &Tensor, params: &PoolingParams) -> Result<Tensor, TensorError> {
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let vars = params.push(&mut tape);
    let logits = pooling_tape(&mut tape, xv, &vars)?;
    Ok(tape.value(logits).clone())
}

/// Scalar detection score: bonafide logit minus spoof logit. Higher means
/// more bona fide; translation of both logits leaves it unchanged.
pub fn detection_score(logits: &Tensor) -> f64 {
    assert_eq!(logits.len(), 2, "detection_score expects 2 logits");
    logits.data()[0] - logits.data()[1]
}
