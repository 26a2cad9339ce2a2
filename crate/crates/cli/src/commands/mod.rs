pub mod evaluate;
pub mod gen_data;
pub mod gradcheck;
pub mod inspect;
pub mod train;

use std::path::Path;

use anyhow::{bail, Context, Result};

use attmerge_core::dataio;
use attmerge_core::model::{Utterance, UttInput};

/// Load a stack dataset directory into utterances, checking that every
/// stack agrees on the hidden and layer dimensions.
pub fn load_dataset(dir: &Path) -> Result<Vec<Utterance>> {
    let items = dataio::read_dataset(dir)
        .with_context(|| format!("loading dataset {}", dir.display()))?;
    if items.is_empty() {
        bail!("dataset {} is empty", dir.display());
    }
    let (h, l) = (items[0].0.hidden_dim(), items[0].0.num_layers());
    for (stack, _) in &items {
        if stack.hidden_dim() != h || stack.num_layers() != l {
            bail!(
                "dataset {}: stack {} is {}x{} but the rest are {h}x{l} (hidden x layers)",
                dir.display(),
                stack.utterance_id(),
                stack.hidden_dim(),
                stack.num_layers()
            );
        }
    }
    Ok(items
        .into_iter()
        .map(|(stack, label)| Utterance {
            input: UttInput::Stack(stack),
            label,
        })
        .collect())
}

/// Hidden/layer dimensions of a loaded dataset.
pub fn dataset_dims(utterances: &[Utterance]) -> (usize, usize) {
    match &utterances[0].input {
        UttInput::Stack(s) => (s.hidden_dim(), s.num_layers()),
        UttInput::Features { data, .. } => (data.shape()[1], 1),
    }
}
