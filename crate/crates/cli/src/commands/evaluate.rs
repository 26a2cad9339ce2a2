use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};

use attmerge_core::dataio::{self, read_params};
use attmerge_core::eval::{average_eer, compute_eer, det_csv, det_points, ScoreRecord, ScoreSet};
use attmerge_core::model::{Model, Utterance};

use crate::commands::{dataset_dims, load_dataset};
use crate::config::RunConfig;

pub fn run(
    config_path: &Path,
    checkpoint: &Path,
    out: &Path,
    workers: usize,
    datasets: &[PathBuf],
) -> Result<()> {
    let config = RunConfig::from_file(config_path)?;
    let container = read_params(checkpoint)?;
    let model = Model::from_container(&container)
        .with_context(|| format!("rebuilding model from {}", checkpoint.display()))?;

    if model.merge.kind() != merge_name(&config) {
        bail!(
            "checkpoint merge block is {} but config requests {}",
            model.merge.kind(),
            merge_name(&config)
        );
    }
    if config.layer_cap > 0 && config.layer_cap != model.layer_cap {
        bail!(
            "checkpoint was trained with layer cap {} but config sets {}",
            model.layer_cap,
            config.layer_cap
        );
    }

    // load and validate every dataset before producing any output
    let mut loaded = Vec::new();
    for dir in datasets {
        let utterances = load_dataset(dir)?;
        let (hidden, layers) = dataset_dims(&utterances);
        if hidden != model.hidden_dim || layers < model.layer_cap {
            bail!(
                "dataset {}: stacks are {hidden}x{layers} (hidden x layers) but the checkpoint needs hidden {} and at least {} layers",
                dir.display(),
                model.hidden_dim,
                model.layer_cap
            );
        }
        let name = dir
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "dataset".into());
        loaded.push((name, utterances));
    }

    let mut names = Vec::new();
    let mut eers = Vec::new();
    let mut output_files = Vec::new();
    for (name, utterances) in &loaded {
        let scores = score_dataset(&model, utterances, workers)?;
        let records: Vec<ScoreRecord> = utterances
            .iter()
            .zip(&scores)
            .map(|(utt, &score)| ScoreRecord {
                utterance_id: utt.id().to_string(),
                label: utt.label,
                score,
            })
            .collect();
        let set = ScoreSet::new(records)?;
        let eer = compute_eer(&set)?;

        let mut map = BTreeMap::new();
        for r in set.records() {
            map.insert(r.utterance_id.clone(), r.score);
        }
        output_files.push((format!("scores_{name}.txt"), dataio::score_file_to_string(&map)));
        output_files.push((format!("det_{name}.csv"), det_csv(&det_points(&set)?)));
        names.push(name.clone());
        eers.push(eer);
    }
    let avg = average_eer(&eers)?;

    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    for (file, content) in &output_files {
        dataio::atomic_write(&out.join(file), content.as_bytes())?;
    }
    let label = checkpoint
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "model".into());
    let report = attmerge_core::eval::eer_report_csv(&names, &[(label, eers.clone())]);
    dataio::atomic_write(&out.join("eer_report.csv"), report.as_bytes())?;

    for (name, eer) in names.iter().zip(&eers) {
        println!("{name}: EER {:.4} ({:.2}%)", eer, eer * 100.0);
    }
    println!("avg: EER {:.4} ({:.2}%)", avg, avg * 100.0);
    Ok(())
}

fn merge_name(config: &RunConfig) -> &'static str {
    use attmerge_core::model::MergeKind;
    match config.merge {
        MergeKind::Attentive => "attm",
        MergeKind::Linear => "linm",
        MergeKind::Select => "none",
    }
}

/// Score utterances, optionally fanning out over threads. Results are
/// merged in utterance order regardless of worker count.
fn score_dataset(model: &Model, utterances: &[Utterance], workers: usize) -> Result<Vec<f64>> {
    if workers <= 1 || utterances.len() < 2 {
        return utterances
            .iter()
            .map(|u| model.score(u).map_err(Into::into))
            .collect();
    }
    let workers = workers.min(utterances.len());
    let chunk = utterances.len().div_ceil(workers);
    let mut scores = vec![0.0; utterances.len()];
    std::thread::scope(|scope| -> Result<()> {
        let mut handles = Vec::new();
        for (index, (slice, out)) in utterances
            .chunks(chunk)
            .zip(scores.chunks_mut(chunk))
            .enumerate()
        {
            handles.push((
                index,
                scope.spawn(move || -> Result<()> {
                    for (utt, slot) in slice.iter().zip(out.iter_mut()) {
                        *slot = model.score(utt)?;
                    }
                    Ok(())
                }),
            ));
        }
        for (index, handle) in handles {
            handle
                .join()
                .map_err(|_| anyhow::anyhow!("scoring worker {index} panicked"))??;
        }
        Ok(())
    })?;
    Ok(scores)
}
