//! Full countermeasure pipelines: an input frontend (embedding stacks
//! consumed directly, or a trainable encoder over feature sequences), a
//! merging block, and a classifier head.

use rand_chacha::ChaCha12Rng;

use crate::attm::{self, AttmDims, AttmParams, AttmVars};
use crate::dataio::ParamContainer;
use crate::encoder::{self, EmbeddingStack, EncoderConfig, EncoderParams, EncoderVars};
use crate::eval::Label;
use crate::heads::{
    self, PoolingParams, PoolingVars, RecurrentParams, RecurrentVars, StateReduction,
};
use crate::linm::{self, LinmParams, LinmVars};
use crate::tape::{Tape, Var};
use crate::tensor::{Tensor, TensorError};

/// One training or evaluation example.
#[derive(Debug, Clone)]
pub struct Utterance {
    pub input: UttInput,
    pub label: Label,
}

#[derive(Debug, Clone)]
pub enum UttInput {
    /// Pre-extracted T×H×L embedding stack.
    Stack(EmbeddingStack),
    /// Raw T×H feature sequence for encoder-in-the-loop pipelines.
    Features { id: String, data: Tensor },
}

impl Utterance {
    pub fn id(&self) -> &str {
        match &self.input {
            UttInput::Stack(s) => s.utterance_id(),
            UttInput::Features { id, .. } => id,
        }
    }
}

/// Where the layer stack comes from.
#[derive(Debug, Clone)]
#[allow(clippy::large_enum_variant)]
pub enum Frontend {
    /// Stacks arrive as data; nothing upstream is trainable.
    Stack,
    /// A toy encoder produces the stack from feature input; subject to the
    /// schedule's freeze/unfreeze regime.
    Encoder {
        params: EncoderParams,
        config: EncoderConfig,
    },
}

/// Merging block choice.
#[derive(Debug, Clone)]
#[allow(clippy::large_enum_variant)]
pub enum Merge {
    Attentive(AttmParams),
    Linear(LinmParams),
    /// No merging: the top kept layer feeds the head directly.
    Select,
}

impl Merge {
    pub fn kind(&self) -> &'static str {
        match self {
            Merge::Attentive(_) => "attm",
            Merge::Linear(_) => "linm",
            Merge::Select => "none",
        }
    }
}

/// Classifier head choice.
#[derive(Debug, Clone)]
pub enum Head {
    Recurrent(RecurrentParams),
    Pooling(PoolingParams),
}

impl Head {
    pub fn kind(&self) -> &'static str {
        match self {
            Head::Recurrent(_) => "recurrent",
            Head::Pooling(_) => "pooling",
        }
    }
}

/// Assembled pipeline with its layer cap K.
#[derive(Debug, Clone)]
pub struct Model {
    pub frontend: Frontend,
    pub merge: Merge,
    pub head: Head,
    /// Number of leading layers kept from the stack.
    pub layer_cap: usize,
    pub hidden_dim: usize,
}

enum MergeVars {
    Attentive(AttmVars),
    Linear(LinmVars),
    Select,
}

enum HeadVars {
    Recurrent(RecurrentVars),
    Pooling(PoolingVars),
}

/// Tape handles for every parameter of a [`Model`].
pub struct ModelVars {
    encoder: Option<EncoderVars>,
    merge: MergeVars,
    head: HeadVars,
}

impl ModelVars {
    /// Rebuild the structured handles from a flat list ordered like
    /// [`Model::entries`]; used by gradient checks that treat the whole
    /// pipeline as one parameter vector.
    pub fn from_slice(model: &Model, vars: &[Var]) -> ModelVars {
        let mut idx = 0usize;
        let mut next = || {
            let v = vars[idx];
            idx += 1;
            v
        };
        let encoder = match &model.frontend {
            Frontend::Encoder { params, .. } => Some(EncoderVars {
                layers: (0..params.layers.len())
                    .map(|_| encoder::LayerVars {
                        ln1_gamma: next(),
                        ln1_beta: next(),
                        w_q: next(),
                        b_q: next(),
                        w_k: next(),
                        b_k: next(),
                        w_v: next(),
                        b_v: next(),
                        w_o: next(),
                        b_o: next(),
                        ln2_gamma: next(),
                        ln2_beta: next(),
                        w_ff1: next(),
                        b_ff1: next(),
                        w_ff2: next(),
                        b_ff2: next(),
                    })
                    .collect(),
            }),
            Frontend::Stack => None,
        };
        let merge = match &model.merge {
            Merge::Attentive(_) => MergeVars::Attentive(AttmVars {
                w_squeeze: next(),
                w_excite1: next(),
                w_excite2: next(),
                w_merge1: next(),
                w_merge2: next(),
                w_merge3: next(),
            }),
            Merge::Linear(_) => MergeVars::Linear(LinmVars { theta: next() }),
            Merge::Select => MergeVars::Select,
        };
        let head = match &model.head {
            Head::Recurrent(_) => HeadVars::Recurrent(RecurrentVars {
                w_input: next(),
                w_hidden: next(),
                b_gates: next(),
                w_out: next(),
                b_out: next(),
            }),
            Head::Pooling(_) => HeadVars::Pooling(PoolingVars {
                w_proj: next(),
                b_proj: next(),
                w_score: next(),
                b_score: next(),
                w_out: next(),
                b_out: next(),
            }),
        };
        assert_eq!(idx, vars.len(), "wrong number of parameter handles");
        ModelVars {
            encoder,
            merge,
            head,
        }
    }

    /// Named handles in the same traversal order as [`Model::entries`].
    pub fn entries(&self) -> Vec<(String, Var)> {
        let mut out = Vec::new();
        if let Some(enc) = &self.encoder {
            out.extend(enc.entries("encoder"));
        }
        match &self.merge {
            MergeVars::Attentive(v) => out.extend(v.entries("attm")),
            MergeVars::Linear(v) => out.extend(v.entries("linm")),
            MergeVars::Select => {}
        }
        match &self.head {
            HeadVars::Recurrent(v) => out.extend(v.entries("head")),
            HeadVars::Pooling(v) => out.extend(v.entries("head")),
        }
        out
    }
}

/// Options describing which blocks a fresh model should contain.
#[derive(Debug, Clone)]
pub struct ModelSpec {
    pub merge: MergeKind,
    pub head: HeadKind,
    pub layer_cap: usize,
    pub hidden_dim: usize,
    pub recurrent_hidden: usize,
    pub recurrent_reduction: StateReduction,
    pub pooling_dim: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MergeKind {
    Attentive,
    Linear,
    Select,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeadKind {
    Recurrent,
    Pooling,
}

impl Model {
    /// Fresh stack-input model with randomly initialized blocks.
    pub fn init(spec: &ModelSpec, rng: &mut ChaCha12Rng) -> Self {
        let merge = match spec.merge {
            MergeKind::Attentive => Merge::Attentive(AttmParams::init(
                AttmDims::new(spec.hidden_dim, spec.layer_cap),
                rng,
            )),
            MergeKind::Linear => Merge::Linear(LinmParams::init(spec.layer_cap, rng)),
            MergeKind::Select => Merge::Select,
        };
        let head = match spec.head {
            HeadKind::Recurrent => {
                let mut params = RecurrentParams::init(spec.hidden_dim, spec.recurrent_hidden, rng);
                params.reduction = spec.recurrent_reduction;
                Head::Recurrent(params)
            }
            HeadKind::Pooling => {
                Head::Pooling(PoolingParams::init(spec.hidden_dim, spec.pooling_dim, rng))
            }
        };
        Model {
            frontend: Frontend::Stack,
            merge,
            head,
            layer_cap: spec.layer_cap,
            hidden_dim: spec.hidden_dim,
        }
    }

    /// Attach a freshly initialized encoder frontend.
    pub fn with_encoder(mut self, config: EncoderConfig, rng: &mut ChaCha12Rng) -> Self {
        let params = EncoderParams::init(&config, rng);
        self.frontend = Frontend::Encoder { params, config };
        self
    }

    pub fn encoder_mut(&mut self) -> Option<&mut EncoderParams> {
        match &mut self.frontend {
            Frontend::Encoder { params, .. } => Some(params),
            Frontend::Stack => None,
        }
    }

    pub fn encoder(&self) -> Option<&EncoderParams> {
        match &self.frontend {
            Frontend::Encoder { params, .. } => Some(params),
            Frontend::Stack => None,
        }
    }

    /// Push every parameter onto a tape (frozen encoder parameters become
    /// constants).
    pub fn push(&self, tape: &mut Tape) -> ModelVars {
        let encoder = match &self.frontend {
            Frontend::Encoder { params, .. } => Some(params.push(tape)),
            Frontend::Stack => None,
        };
        let merge = match &self.merge {
            Merge::Attentive(p) => MergeVars::Attentive(p.push(tape)),
            Merge::Linear(p) => MergeVars::Linear(p.push(tape)),
            Merge::Select => MergeVars::Select,
        };
        let head = match &self.head {
            Head::Recurrent(p) => HeadVars::Recurrent(p.push(tape)),
            Head::Pooling(p) => HeadVars::Pooling(p.push(tape)),
        };
        ModelVars {
            encoder,
            merge,
            head,
        }
    }

    /// Named parameter tensors in a fixed traversal order.
    pub fn entries(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        if let Frontend::Encoder { params, .. } = &self.frontend {
            out.extend(params.entries("encoder"));
        }
        match &self.merge {
            Merge::Attentive(p) => out.extend(p.entries("attm")),
            Merge::Linear(p) => out.extend(p.entries("linm")),
            Merge::Select => {}
        }
        match &self.head {
            Head::Recurrent(p) => out.extend(p.entries("head")),
            Head::Pooling(p) => out.extend(p.entries("head")),
        }
        out
    }

    /// Mutable view of the same parameters in the same order.
    pub fn entries_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = Vec::new();
        if let Frontend::Encoder { params, .. } = &mut self.frontend {
            out.extend(params.entries_mut("encoder"));
        }
        match &mut self.merge {
            Merge::Attentive(p) => out.extend(p.entries_mut("attm")),
            Merge::Linear(p) => out.extend(p.entries_mut("linm")),
            Merge::Select => {}
        }
        match &mut self.head {
            Head::Recurrent(p) => out.extend(p.entries_mut("head")),
            Head::Pooling(p) => out.extend(p.entries_mut("head")),
        }
        out
    }

    fn stack_var(&self, tape: &mut Tape, vars: &ModelVars, utt: &Utterance) -> Result<Var, TensorError> {
        match (&self.frontend, &utt.input) {
            (Frontend::Stack, UttInput::Stack(stack)) => {
                if stack.hidden_dim() != self.hidden_dim {
                    return Err(TensorError::ShapeMismatch {
                        op: "model input",
                        left: stack.data().shape().to_vec(),
                        right: vec![self.hidden_dim],
                    });
                }
                let capped = encoder::truncate(stack, self.layer_cap.min(stack.num_layers()))?;
                if capped.num_layers() != self.layer_cap {
                    return Err(TensorError::LayerCapOutOfRange {
                        k: self.layer_cap,
                        l: stack.num_layers(),
                    });
                }
                Ok(tape.constant(capped.data().clone()))
            }
            (Frontend::Encoder { config, .. }, UttInput::Features { data, .. }) => {
                let enc_vars = vars.encoder.as_ref().expect("encoder vars pushed");
                let x = tape.constant(data.clone());
                encoder::encode_tape(tape, x, enc_vars, config, self.layer_cap)
            }
            _ => Err(TensorError::ShapeMismatch {
                op: "model input kind",
                left: vec![],
                right: vec![],
            }),
        }
    }

    /// Differentiable forward pass to the 2-class logits.
    pub fn logits_tape(
        &self,
        tape: &mut Tape,
        vars: &ModelVars,
        utt: &Utterance,
    ) -> Result<Var, TensorError> {
        let stack = self.stack_var(tape, vars, utt)?;
        let merged = match (&vars.merge, &self.merge) {
            (MergeVars::Attentive(v), _) => attm::forward_tape(tape, stack, v)?.0,
            (MergeVars::Linear(v), _) => linm::merge_tape(tape, stack, v)?,
            (MergeVars::Select, _) => tape.layer_slice(stack, self.layer_cap - 1)?,
        };
        match (&vars.head, &self.head) {
            (HeadVars::Recurrent(v), Head::Recurrent(p)) => {
                heads::recurrent_tape(tape, merged, v, p.reduction)
            }
            (HeadVars::Pooling(v), _) => heads::pooling_tape(tape, merged, v),
            _ => unreachable!("vars built from this model"),
        }
    }

    /// Detection score of one utterance (higher = more bona fide).
    pub fn score(&self, utt: &Utterance) -> Result<f64, TensorError> {
        let mut tape = Tape::new();
        let vars = self.push(&mut tape);
        let logits = self.logits_tape(&mut tape, &vars, utt)?;
        Ok(heads::detection_score(tape.value(logits)))
    }

    /// Attention gates for one stack (attentive merge models only).
    pub fn attention_weights(&self, utt: &Utterance) -> Result<Option<Vec<f64>>, TensorError> {
        if !matches!(self.merge, Merge::Attentive(_)) {
            return Ok(None);
        }
        let mut tape = Tape::new();
        let vars = self.push(&mut tape);
        let stack = self.stack_var(&mut tape, &vars, utt)?;
        let MergeVars::Attentive(av) = vars.merge else {
            unreachable!("attentive merge pushed above");
        };
        let (_, weights) = attm::forward_tape(&mut tape, stack, &av)?;
        Ok(Some(tape.value(weights).data().to_vec()))
    }

    // ── Checkpoint conversion ────────────────────────────────────────

    pub fn to_container(&self) -> ParamContainer {
        let mut container = ParamContainer::default();
        container.meta.insert("merge".into(), self.merge.kind().into());
        container.meta.insert("head".into(), self.head.kind().into());
        container
            .meta
            .insert("layer_cap".into(), self.layer_cap.to_string());
        container
            .meta
            .insert("hidden_dim".into(), self.hidden_dim.to_string());
        if let Head::Recurrent(p) = &self.head {
            container
                .meta
                .insert("recurrent_hidden".into(), p.hidden_size().to_string());
            let red = match p.reduction {
                StateReduction::Final => "final",
                StateReduction::Mean => "mean",
            };
            container.meta.insert("recurrent_reduction".into(), red.into());
        }
        if let Head::Pooling(p) = &self.head {
            container
                .meta
                .insert("pooling_dim".into(), p.proj_dim().to_string());
        }
        for (name, tensor) in self.entries() {
            container.tensors.push((name, tensor.clone()));
        }
        container
    }

    /// Rebuild a stack-input model from a checkpoint container.
    pub fn from_container(container: &ParamContainer) -> Result<Model, TensorError> {
        let missing = |what: &str| TensorError::ShapeMismatch {
            op: "checkpoint is missing a field",
            left: vec![what.len()],
            right: vec![],
        };
        let meta = |key: &str| {
            container
                .meta
                .get(key)
                .cloned()
                .ok_or_else(|| missing(key))
        };
        let parse = |key: &str| -> Result<usize, TensorError> {
            meta(key)?.parse::<usize>().map_err(|_| missing(key))
        };
        let hidden_dim = parse("hidden_dim")?;
        let layer_cap = parse("layer_cap")?;
        let grab = |name: &str| -> Result<Tensor, TensorError> {
            container
                .tensor(name)
                .cloned()
                .ok_or_else(|| missing(name))
        };

        let merge = match meta("merge")?.as_str() {
            "attm" => Merge::Attentive(AttmParams {
                w_squeeze: grab("attm.w_squeeze")?,
                w_excite1: grab("attm.w_excite1")?,
                w_excite2: grab("attm.w_excite2")?,
                w_merge1: grab("attm.w_merge1")?,
                w_merge2: grab("attm.w_merge2")?,
                w_merge3: grab("attm.w_merge3")?,
            }),
            "linm" => Merge::Linear(LinmParams {
                theta: grab("linm.theta")?,
            }),
            _ => Merge::Select,
        };
        let head = match meta("head")?.as_str() {
            "pooling" => Head::Pooling(PoolingParams {
                w_proj: grab("head.w_proj")?,
                b_proj: grab("head.b_proj")?,
                w_score: grab("head.w_score")?,
                b_score: grab("head.b_score")?,
                w_out: grab("head.w_out")?,
                b_out: grab("head.b_out")?,
            }),
            _ => {
                let reduction = match meta("recurrent_reduction")?.as_str() {
                    "mean" => StateReduction::Mean,
                    _ => StateReduction::Final,
                };
                Head::Recurrent(RecurrentParams {
                    w_input: grab("head.w_input")?,
                    w_hidden: grab("head.w_hidden")?,
                    b_gates: grab("head.b_gates")?,
                    w_out: grab("head.w_out")?,
                    b_out: grab("head.b_out")?,
                    reduction,
                })
            }
        };
        Ok(Model {
            frontend: Frontend::Stack,
            merge,
            head,
            layer_cap,
            hidden_dim,
        })
    }
}
