//! Run configuration: a flat `key = value` text format with `#` comments.
//!
//! Every key has a documented default; unknown keys are rejected so typos
//! fail loudly instead of silently running a different experiment.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};

use attmerge_core::dataio::SyntheticSpec;
use attmerge_core::encoder::EncoderConfig;
use attmerge_core::heads::StateReduction;
use attmerge_core::model::{HeadKind, MergeKind, ModelSpec};
use attmerge_core::trainer::{AdamConfig, Schedule, Strategy, TrainOptions};

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub seed: u64,

    pub merge: MergeKind,
    pub head: HeadKind,
    /// Leading layers kept from each stack; 0 means "all layers the data
    /// provides".
    pub layer_cap: usize,
    pub recurrent_hidden: usize,
    pub recurrent_reduction: StateReduction,
    pub pooling_dim: usize,

    pub encoder_layers: usize,
    pub encoder_hidden: usize,
    pub encoder_heads: usize,
    pub encoder_ffn: usize,
    pub encoder_positional: bool,

    pub schedule: Schedule,
    pub batch_size: usize,
    pub clip_norm: Option<f64>,
    pub adam: AdamConfig,
    pub train_data: Option<PathBuf>,
    pub dev_data: Option<PathBuf>,

    pub data: SyntheticSpec,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            merge: MergeKind::Attentive,
            head: HeadKind::Recurrent,
            layer_cap: 0,
            recurrent_hidden: 16,
            recurrent_reduction: StateReduction::Final,
            pooling_dim: 16,
            encoder_layers: 6,
            encoder_hidden: 16,
            encoder_heads: 2,
            encoder_ffn: 32,
            encoder_positional: true,
            schedule: Schedule::default(),
            batch_size: 8,
            clip_norm: None,
            adam: AdamConfig::default(),
            train_data: None,
            dev_data: None,
            data: SyntheticSpec::default(),
        }
    }
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("in config {}", path.display()))
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut seen = BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = match raw.find('#') {
                Some(pos) => &raw[..pos],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                bail!("line {line_no}: expected `key = value`, got {raw:?}");
            };
            let key = key.trim().to_string();
            let value = value.trim().to_string();
            if seen.insert(key.clone(), (line_no, value)).is_some() {
                bail!("line {line_no}: duplicate key {key}");
            }
        }

        let mut config = RunConfig::default();
        for (key, (line_no, value)) in &seen {
            config
                .apply(key, value)
                .with_context(|| format!("line {line_no}: key {key}"))?;
        }
        config.validate()?;
        Ok(config)
    }

    fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(value: &str) -> Result<T>
        where
            T::Err: std::fmt::Display,
        {
            value
                .parse()
                .map_err(|e| anyhow!("cannot parse {value:?}: {e}"))
        }
        match key {
            "seed" => self.seed = num(value)?,

            "model.merge" => {
                self.merge = match value {
                    "attm" => MergeKind::Attentive,
                    "linm" => MergeKind::Linear,
                    "none" => MergeKind::Select,
                    _ => bail!("expected attm|linm|none, got {value:?}"),
                }
            }
            "model.head" => {
                self.head = match value {
                    "recurrent" => HeadKind::Recurrent,
                    "pooling" => HeadKind::Pooling,
                    _ => bail!("expected recurrent|pooling, got {value:?}"),
                }
            }
            "model.layer_cap" => self.layer_cap = num(value)?,
            "model.recurrent_hidden" => self.recurrent_hidden = num(value)?,
            "model.recurrent_reduction" => {
                self.recurrent_reduction = match value {
                    "final" => StateReduction::Final,
                    "mean" => StateReduction::Mean,
                    _ => bail!("expected final|mean, got {value:?}"),
                }
            }
            "model.pooling_dim" => self.pooling_dim = num(value)?,

            "encoder.layers" => self.encoder_layers = num(value)?,
            "encoder.hidden" => self.encoder_hidden = num(value)?,
            "encoder.heads" => self.encoder_heads = num(value)?,
            "encoder.ffn" => self.encoder_ffn = num(value)?,
            "encoder.positional" => self.encoder_positional = num(value)?,

            "schedule.total_epochs" => self.schedule.total_epochs = num(value)?,
            "schedule.warmup_epochs" => self.schedule.warmup_epochs = num(value)?,
            "schedule.unfreeze_epoch" => self.schedule.unfreeze_epoch = num(value)?,
            "schedule.peak_lr" => self.schedule.peak_lr = num(value)?,
            "schedule.decay" => self.schedule.decay = num(value)?,
            "schedule.strategy" => {
                self.schedule.strategy = match value {
                    "fine-tuned" => Strategy::FineTuned,
                    "fixed" => Strategy::Fixed,
                    _ => bail!("expected fine-tuned|fixed, got {value:?}"),
                }
            }

            "train.batch_size" => self.batch_size = num(value)?,
            "train.clip_norm" => self.clip_norm = Some(num(value)?),
            "train.adam_beta1" => self.adam.beta1 = num(value)?,
            "train.adam_beta2" => self.adam.beta2 = num(value)?,
            "train.adam_epsilon" => self.adam.epsilon = num(value)?,
            "train.data" => self.train_data = Some(PathBuf::from(value)),
            "train.dev" => self.dev_data = Some(PathBuf::from(value)),

            "data.num_utts" => self.data.num_utts = num(value)?,
            "data.frames_min" => self.data.frames_min = num(value)?,
            "data.frames_max" => self.data.frames_max = num(value)?,
            "data.hidden" => self.data.hidden_dim = num(value)?,
            "data.layers" => self.data.num_layers = num(value)?,
            "data.band_lo" => self.data.band_lo = num(value)?,
            "data.band_hi" => self.data.band_hi = num(value)?,
            "data.effect_size" => self.data.effect_size = num(value)?,
            "data.noise_std" => self.data.noise_std = num(value)?,

            _ => bail!("unknown key"),
        }
        Ok(())
    }

    fn validate(&self) -> Result<()> {
        if self.layer_cap > 0 && self.layer_cap > self.encoder_layers {
            bail!(
                "model.layer_cap {} exceeds encoder.layers {}",
                self.layer_cap,
                self.encoder_layers
            );
        }
        if self.recurrent_hidden == 0 || self.pooling_dim == 0 {
            bail!("head dimensions must be positive");
        }
        Ok(())
    }

    /// Layer cap resolved against a dataset's layer count.
    pub fn effective_layer_cap(&self, data_layers: usize) -> usize {
        if self.layer_cap == 0 {
            data_layers
        } else {
            self.layer_cap
        }
    }

    pub fn model_spec(&self, layer_cap: usize, hidden_dim: usize) -> ModelSpec {
        ModelSpec {
            merge: self.merge,
            head: self.head,
            layer_cap,
            hidden_dim,
            recurrent_hidden: self.recurrent_hidden,
            recurrent_reduction: self.recurrent_reduction,
            pooling_dim: self.pooling_dim,
        }
    }

    pub fn encoder_config(&self) -> EncoderConfig {
        EncoderConfig {
            num_layers: self.encoder_layers,
            hidden_dim: self.encoder_hidden,
            num_heads: self.encoder_heads,
            ffn_dim: self.encoder_ffn,
            seed: self.seed,
            use_positional: self.encoder_positional,
        }
    }

    pub fn train_options(&self) -> TrainOptions {
        TrainOptions {
            batch_size: self.batch_size,
            adam: self.adam.clone(),
            clip_norm: self.clip_norm,
            seed: self.seed,
        }
    }

    /// The synthetic-data recipe with the run seed folded in.
    pub fn synthetic_spec(&self) -> SyntheticSpec {
        SyntheticSpec {
            seed: self.seed,
            ..self.data.clone()
        }
    }
}
