use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};

use attmerge_core::dataio;
use attmerge_core::model::Model;
use attmerge_core::rng::{stream_rng, Stream};
use attmerge_core::trainer;

use crate::commands::{dataset_dims, load_dataset};
use crate::config::RunConfig;

pub fn run(config_path: &Path, out: &Path, seed: Option<u64>) -> Result<()> {
    let mut config = RunConfig::from_file(config_path)?;
    if let Some(seed) = seed {
        config.seed = seed;
    }

    let Some(train_dir) = config.train_data.clone() else {
        bail!("config does not set train.data");
    };
    let train = load_dataset(&train_dir)?;
    let (hidden, layers) = dataset_dims(&train);
    let layer_cap = config.effective_layer_cap(layers);
    if layer_cap > layers {
        bail!("model.layer_cap {layer_cap} exceeds the dataset's {layers} layers");
    }

    let dev = match &config.dev_data {
        Some(dir) => Some(load_dataset(dir)?),
        None => None,
    };

    let mut init_rng = stream_rng(config.seed, Stream::Init);
    let model = Model::init(&config.model_spec(layer_cap, hidden), &mut init_rng);
    let merge_kind = model.merge.kind();
    let head_kind = model.head.kind();

    let result = trainer::fit(
        model,
        &train,
        dev.as_deref(),
        &config.schedule,
        &config.train_options(),
    )?;

    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let mut container = result.best_model.to_container();
    container.meta.insert("seed".into(), config.seed.to_string());
    let checkpoint_path = out.join("checkpoint.embp");
    dataio::write_params(&checkpoint_path, &container)?;
    dataio::atomic_write(&out.join("train_log.csv"), result.log.to_csv().as_bytes())?;

    match result.best_dev_eer {
        Some(eer) => println!(
            "trained {merge_kind}+{head_kind} (K={layer_cap}); best dev EER {:.4} at epoch {}; checkpoint {}",
            eer,
            result.best_epoch,
            checkpoint_path.display()
        ),
        None => println!(
            "trained {merge_kind}+{head_kind} (K={layer_cap}) for {} epochs; checkpoint {}",
            config.schedule.total_epochs,
            checkpoint_path.display()
        ),
    }
    Ok(())
}
