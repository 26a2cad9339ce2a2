use std::path::Path;

use anyhow::{bail, Context, Result};

use attmerge_core::dataio::{atomic_write, read_params};
use attmerge_core::linm::{normalized_weights, LinmParams};
use attmerge_core::model::Model;

use crate::commands::load_dataset;

pub fn run(checkpoint: &Path, dataset: Option<&Path>, out: Option<&Path>) -> Result<()> {
    let container = read_params(checkpoint)?;
    let merge = container.meta.get("merge").map(String::as_str);

    let csv = match merge {
        Some("linm") => {
            let theta = container
                .tensor("linm.theta")
                .context("checkpoint is missing linm.theta")?
                .clone();
            let normalized = normalized_weights(&LinmParams { theta });
            weights_csv(normalized.data())
        }
        Some("attm") => {
            let Some(dataset) = dataset else {
                bail!("attentive-merge gates depend on the input; pass --dataset");
            };
            let model = Model::from_container(&container)?;
            let utterances = load_dataset(dataset)?;
            let layers = model.layer_cap;
            let mut sums = vec![0.0f64; layers];
            for utt in &utterances {
                let gates = model
                    .attention_weights(utt)?
                    .context("attentive checkpoint produced no gates")?;
                for (acc, g) in sums.iter_mut().zip(&gates) {
                    *acc += g;
                }
            }
            let n = utterances.len() as f64;
            for v in &mut sums {
                *v /= n;
            }
            weights_csv(&sums)
        }
        _ => bail!("checkpoint has no merging parameters to inspect"),
    };

    match out {
        Some(path) => atomic_write(path, csv.as_bytes())?,
        None => print!("{csv}"),
    }
    Ok(())
}

fn weights_csv(weights: &[f64]) -> String {
    let mut csv = String::from("layer_index,weight\n");
    for (i, w) in weights.iter().enumerate() {
        csv.push_str(&format!("{},{}\n", i + 1, w));
    }
    csv
}
