use std::path::Path;

use anyhow::{bail, Result};

use attmerge_core::attm::{self, AttmDims, AttmParams, AttmVars};
use attmerge_core::encoder::{encode_tape, EncoderParams, EncoderVars, LayerVars};
use attmerge_core::eval::Label;
use attmerge_core::heads::{PoolingParams, PoolingVars, RecurrentParams, RecurrentVars};
use attmerge_core::linm::{self, LinmVars};
use attmerge_core::rng::{stream_rng, Stream};
use attmerge_core::tape::{grad_check_with_fault, Tape, Var};
use attmerge_core::tensor::{Tensor, TensorError};
use attmerge_core::trainer::cross_entropy_tape;

use crate::config::RunConfig;

const STEP: f64 = 1e-5;
const THRESHOLD: f64 = 1e-4;
const CHECK_FRAMES: usize = 5;

/// Deterministic filler for check inputs; independent of the crate RNG so
/// report values are stable across library changes.
struct Filler(u64);

impl Filler {
    fn next(&mut self) -> f64 {
        self.0 = self
            .0
            .wrapping_mul(6364136223846793005)
            .wrapping_add(1442695040888963407);
        ((self.0 >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
    }

    fn tensor(&mut self, shape: &[usize]) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| self.next()).collect()).expect("filler shape")
    }
}

fn loss_through_tanh_dot(
    tape: &mut Tape,
    value: Var,
    direction: &Tensor,
) -> Result<Var, TensorError> {
    let n = tape.value(value).len();
    let flat = tape.reshape(value, vec![1, n])?;
    let squashed = tape.tanh(flat);
    let dir = tape.constant(direction.clone());
    let dot = tape.matmul(squashed, dir)?;
    tape.reshape(dot, vec![])
}

pub fn run(config_path: &Path, seed: Option<u64>, fault: Option<&str>) -> Result<()> {
    let mut config = RunConfig::from_file(config_path)?;
    if let Some(seed) = seed {
        config.seed = seed;
    }
    let enc_config = config.encoder_config();
    let (h, l) = (enc_config.hidden_dim, enc_config.num_layers);
    let t = CHECK_FRAMES;
    let mut filler = Filler(config.seed.wrapping_add(0x5EED));

    let stack = filler.tensor(&[t, h, l]);
    let seq = filler.tensor(&[t, h]);
    let mut failures = Vec::new();

    let mut check = |name: &str, err: f64| {
        let verdict = if err < THRESHOLD { "PASS" } else { "FAIL" };
        println!("block {name}: max relative error {err:.3e} {verdict}");
        if err >= THRESHOLD {
            failures.push(name.to_string());
        }
    };
    let fault_for = |name: &str| -> Option<f64> {
        (fault == Some(name)).then_some(1.0)
    };

    // attentive merge
    {
        let mut rng = stream_rng(config.seed, Stream::Init);
        let params = AttmParams::init(AttmDims::new(h, l), &mut rng);
        let list: Vec<Tensor> = params
            .entries("attm")
            .into_iter()
            .map(|(_, t)| t.clone())
            .collect();
        let direction = filler.tensor(&[t * h, 1]);
        let stack_c = stack.clone();
        let build = move |tape: &mut Tape, vars: &[Var]| {
            let sv = tape.constant(stack_c.clone());
            let av = AttmVars {
                w_squeeze: vars[0],
                w_excite1: vars[1],
                w_excite2: vars[2],
                w_merge1: vars[3],
                w_merge2: vars[4],
                w_merge3: vars[5],
            };
            let (merged, _) = attm::forward_tape(tape, sv, &av)?;
            loss_through_tanh_dot(tape, merged, &direction)
        };
        check("attm", grad_check_with_fault(&build, &list, STEP, fault_for("attm"))?);
    }

    // linear merge
    {
        let theta = filler.tensor(&[l]);
        let direction = filler.tensor(&[t * h, 1]);
        let stack_c = stack.clone();
        let build = move |tape: &mut Tape, vars: &[Var]| {
            let sv = tape.constant(stack_c.clone());
            let merged = linm::merge_tape(tape, sv, &LinmVars { theta: vars[0] })?;
            loss_through_tanh_dot(tape, merged, &direction)
        };
        check(
            "linm",
            grad_check_with_fault(&build, std::slice::from_ref(&theta), STEP, fault_for("linm"))?,
        );
    }

    // recurrent head
    {
        let mut rng = stream_rng(config.seed.wrapping_add(1), Stream::Init);
        let params = RecurrentParams::init(h, config.recurrent_hidden, &mut rng);
        let list: Vec<Tensor> = params
            .entries("head")
            .into_iter()
            .map(|(_, t)| t.clone())
            .collect();
        let reduction = config.recurrent_reduction;
        let seq_c = seq.clone();
        let build = move |tape: &mut Tape, vars: &[Var]| {
            let x = tape.constant(seq_c.clone());
            let rv = RecurrentVars {
                w_input: vars[0],
                w_hidden: vars[1],
                b_gates: vars[2],
                w_out: vars[3],
                b_out: vars[4],
            };
            let logits = attmerge_core::heads::recurrent_tape(tape, x, &rv, reduction)?;
            cross_entropy_tape(tape, logits, Label::Bonafide)
        };
        check(
            "head-recurrent",
            grad_check_with_fault(&build, &list, STEP, fault_for("head-recurrent"))?,
        );
    }

    // pooling head
    {
        let mut rng = stream_rng(config.seed.wrapping_add(2), Stream::Init);
        let params = PoolingParams::init(h, config.pooling_dim, &mut rng);
        let list: Vec<Tensor> = params
            .entries("head")
            .into_iter()
            .map(|(_, t)| t.clone())
            .collect();
        let seq_c = seq.clone();
        let build = move |tape: &mut Tape, vars: &[Var]| {
            let x = tape.constant(seq_c.clone());
            let pv = PoolingVars {
                w_proj: vars[0],
                b_proj: vars[1],
                w_score: vars[2],
                b_score: vars[3],
                w_out: vars[4],
                b_out: vars[5],
            };
            let logits = attmerge_core::heads::pooling_tape(tape, x, &pv)?;
            cross_entropy_tape(tape, logits, Label::Spoof)
        };
        check(
            "head-pooling",
            grad_check_with_fault(&build, &list, STEP, fault_for("head-pooling"))?,
        );
    }

    // toy encoder
    {
        let mut rng = stream_rng(config.seed.wrapping_add(3), Stream::Init);
        let params = EncoderParams::init(&enc_config, &mut rng);
        let list: Vec<Tensor> = params
            .entries("encoder")
            .into_iter()
            .map(|(_, t)| t.clone())
            .collect();
        let direction = filler.tensor(&[t * h * l, 1]);
        let enc_c = enc_config.clone();
        let seq_c = seq.clone();
        let build = move |tape: &mut Tape, vars: &[Var]| {
            let layers: Vec<LayerVars> = vars
                .chunks(16)
                .map(|c| LayerVars {
                    ln1_gamma: c[0],
                    ln1_beta: c[1],
                    w_q: c[2],
                    b_q: c[3],
                    w_k: c[4],
                    b_k: c[5],
                    w_v: c[6],
                    b_v: c[7],
                    w_o: c[8],
                    b_o: c[9],
                    ln2_gamma: c[10],
                    ln2_beta: c[11],
                    w_ff1: c[12],
                    b_ff1: c[13],
                    w_ff2: c[14],
                    b_ff2: c[15],
                })
                .collect();
            let x = tape.constant(seq_c.clone());
            let stack = encode_tape(tape, x, &EncoderVars { layers }, &enc_c, enc_c.num_layers)?;
            loss_through_tanh_dot(tape, stack, &direction)
        };
        check(
            "encoder",
            grad_check_with_fault(&build, &list, STEP, fault_for("encoder"))?,
        );
    }

    if !failures.is_empty() {
        bail!("gradient check failed for: {}", failures.join(", "));
    }
    Ok(())
}
