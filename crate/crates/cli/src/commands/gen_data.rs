use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};

use attmerge_core::dataio;

use crate::config::RunConfig;

pub fn run(config_path: &Path, out: &Path, seed: Option<u64>, force: bool) -> Result<()> {
    let mut config = RunConfig::from_file(config_path)?;
    if let Some(seed) = seed {
        config.seed = seed;
    }
    let spec = config.synthetic_spec();

    if out.exists() {
        if !force {
            bail!(
                "output {} already exists (pass --force to replace it)",
                out.display()
            );
        }
        fs::remove_dir_all(out)
            .with_context(|| format!("removing existing {}", out.display()))?;
    }

    let items = dataio::generate_synthetic(&spec)?;

    // build in a sibling directory, then rename, so an interrupted run
    // never leaves a half-written dataset at the target path
    let partial = out.with_extension("partial");
    if partial.exists() {
        fs::remove_dir_all(&partial)
            .with_context(|| format!("removing stale {}", partial.display()))?;
    }
    dataio::write_dataset(&partial, &items, &spec)?;
    fs::rename(&partial, out)
        .with_context(|| format!("moving dataset into place at {}", out.display()))?;

    println!(
        "wrote {} stacks ({} per class), key.txt and manifest.txt to {} (seed {})",
        items.len(),
        spec.num_utts,
        out.display(),
        spec.seed
    );
    Ok(())
}
