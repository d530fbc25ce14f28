//! `xfire train`: fit one detector family on a dataset's training split.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::{Args, ValueEnum};
use rand_chacha::ChaCha8Rng;
use xfire_core::dataset::{
    make_ae_windows, make_cnn_windows, make_lstm_sequence_at, split_dataset, Partition, Trace,
};
use xfire_core::io::load_dataset;
use xfire_core::models::{
    ae_features, load_checkpoint, save_checkpoint, train_autoencoder, train_cnn, train_lstm,
    train_random_forest, Checkpoint, CheckpointPayload, CnnConfig, EpochRecord, ForestConfig,
    LstmModel, AE_WIDTHS,
};
use xfire_core::rng::{stream, StreamTag};
use xfire_core::sim::NormStats;
use xfire_core::Error;

use crate::config::{condition_label, derived_seed, write_run_meta, RunConfig, SeedPurpose};

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ModelKind {
    /// Reconstruction feature extractor.
    Ae,
    /// Random forest over autoencoder features; needs --ae-checkpoint.
    Rf,
    /// Grid classifier over 15x80 windows.
    Cnn,
    /// Per-sample recurrent detector.
    Lstm,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Which detector family to fit.
    #[arg(value_enum)]
    pub model: ModelKind,

    /// Dataset directory written by `xfire simulate`.
    #[arg(long)]
    pub data: PathBuf,

    /// Trained autoencoder checkpoint; required when fitting `rf`.
    #[arg(long)]
    pub ae_checkpoint: Option<PathBuf>,
}

pub fn run(config: &RunConfig, out: &Path, args: &TrainArgs) -> anyhow::Result<u8> {
    let (manifest, traces) = load_dataset(&args.data)
        .with_context(|| format!("loading dataset {}", args.data.display()))?;
    let stats = manifest.norm_stats.clone().ok_or_else(|| {
        Error::InvalidConfig("dataset manifest carries no normalization stats".into())
    })?;
    let condition = condition_label(&manifest.scenario);
    let master = manifest.scenario.master_seed;

    let split = split_dataset(traces.len(), manifest.split_seed)?;
    let train_idx = split.indices(Partition::Train);
    let val_idx = split.indices(Partition::Val);
    let normalized: Vec<Trace> = traces.iter().map(|t| t.normalized(&stats)).collect();

    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let training = &config.training;

    match args.model {
        ModelKind::Ae => {
            let widths = ae_widths_for(manifest.scenario.n_servers)?;
            let mut train = collect_ae_windows(&normalized, &train_idx)?;
            let mut val = collect_ae_windows(&normalized, &val_idx)?;
            let mut rng = stream(
                master,
                SeedPurpose::SampleAeWindows.stream_index(),
                StreamTag::Split,
            );
            train = subsample(train, training.ae_train_window_cap, &mut rng);
            val = subsample(val, training.ae_val_window_cap, &mut rng);

            let seed = derived_seed(master, SeedPurpose::TrainAutoencoder);
            let train_config = training.autoencoder.to_train_config(seed);
            println!(
                "training autoencoder on {} windows (val {}), up to {} epochs",
                train.len(),
                val.len(),
                train_config.max_epochs,
            );
            let (model, curve) = train_autoencoder(&train, &val, &widths, &train_config)?;
            let checkpoint = Checkpoint {
                condition,
                config: training_record(
                    &curve,
                    serde_json::json!({
                        "hyperparams": training.autoencoder,
                        "train_seed": seed,
                        "train_windows": train.len(),
                        "val_windows": val.len(),
                    }),
                ),
                norm_stats: Some(stats),
                payload: CheckpointPayload::Autoencoder(model),
            };
            finish(out, "ae", &checkpoint, Some(&curve))?;
        }
        ModelKind::Rf => {
            let ae_path = args.ae_checkpoint.as_deref().ok_or_else(|| {
                Error::InvalidConfig(
                    "training rf needs --ae-checkpoint pointing at a trained autoencoder".into(),
                )
            })?;
            let ae_ckpt = load_checkpoint(ae_path)?;
            let ae = ae_ckpt.expect_autoencoder()?;
            if ae_ckpt.condition != condition {
                return Err(Error::ConditionMismatch {
                    checkpoint: ae_ckpt.condition.clone(),
                    dataset: condition,
                }
                .into());
            }
            check_stats_agree(ae_ckpt.norm_stats.as_ref(), &stats)?;

            let mut windows = collect_ae_windows(&normalized, &train_idx)?;
            let mut rng = stream(
                master,
                SeedPurpose::SampleForestWindows.stream_index(),
                StreamTag::Split,
            );
            windows = subsample(windows, training.forest_window_cap, &mut rng);
            let labels: Vec<bool> = windows.iter().map(|w| w.label).collect();
            let features = ae_features(ae, &windows)?;

            let seed = derived_seed(master, SeedPurpose::TrainForest);
            println!(
                "training random forest ({} trees) on {} feature rows",
                training.forest_trees,
                windows.len(),
            );
            let forest = train_random_forest(
                &features,
                &labels,
                &ForestConfig {
                    n_trees: training.forest_trees,
                    seed,
                },
            )?;
            let checkpoint = Checkpoint {
                condition,
                // No file paths in here: checkpoints must be byte-identical
                // across runs regardless of where inputs happened to live.
                config: serde_json::json!({
                    "trees": training.forest_trees,
                    "train_seed": seed,
                    "feature_rows": windows.len(),
                }),
                norm_stats: Some(stats),
                payload: CheckpointPayload::AeRf {
                    ae: ae.clone(),
                    forest,
                },
            };
            finish(out, "ae_rf", &checkpoint, None)?;
        }
        ModelKind::Cnn => {
            let arch = CnnConfig {
                n_servers: manifest.scenario.n_servers,
                ..CnnConfig::default()
            };
            arch.validate()?;
            let stride = training.cnn_train_stride;
            let train = collect_cnn_windows(&normalized, &train_idx, stride)?;
            let val = collect_cnn_windows(&normalized, &val_idx, stride)?;

            let seed = derived_seed(master, SeedPurpose::TrainCnn);
            let train_config = training.cnn.to_train_config(seed);
            println!(
                "training cnn on {} windows (val {}, stride {stride}), up to {} epochs",
                train.len(),
                val.len(),
                train_config.max_epochs,
            );
            let (model, curve) = train_cnn(&train, &val, &arch, &train_config)?;
            let checkpoint = Checkpoint {
                condition,
                config: training_record(
                    &curve,
                    serde_json::json!({
                        "hyperparams": training.cnn,
                        "train_seed": seed,
                        "train_windows": train.len(),
                        "val_windows": val.len(),
                        "stride": stride,
                    }),
                ),
                norm_stats: Some(stats),
                payload: CheckpointPayload::Cnn(model),
            };
            finish(out, "cnn", &checkpoint, Some(&curve))?;
        }
        ModelKind::Lstm => {
            let per_instance = training.lstm_windows_per_instance;
            let mut offset_rng = stream(
                master,
                SeedPurpose::SampleLstmWindows.stream_index(),
                StreamTag::Split,
            );
            let train =
                collect_lstm_sequences(&normalized, &train_idx, per_instance, &mut offset_rng)?;
            let val = collect_lstm_sequences(&normalized, &val_idx, per_instance, &mut offset_rng)?;

            let seed = derived_seed(master, SeedPurpose::TrainLstm);
            let train_config = training.lstm.to_train_config(seed);
            println!(
                "training lstm on {} sequences (val {}, {per_instance} windows/instance), up to {} epochs",
                train.len(),
                val.len(),
                train_config.max_epochs,
            );
            let (model, curve) = train_lstm(
                &train,
                &val,
                manifest.scenario.n_servers,
                LstmModel::<f32>::DEFAULT_HIDDEN,
                &train_config,
            )?;
            let checkpoint = Checkpoint {
                condition,
                config: training_record(
                    &curve,
                    serde_json::json!({
                        "hyperparams": training.lstm,
                        "train_seed": seed,
                        "train_sequences": train.len(),
                        "val_sequences": val.len(),
                        "windows_per_instance": per_instance,
                        "hidden": LstmModel::<f32>::DEFAULT_HIDDEN,
                    }),
                ),
                norm_stats: Some(stats),
                payload: CheckpointPayload::Lstm(model),
            };
            finish(out, "lstm", &checkpoint, Some(&curve))?;
        }
    }

    write_run_meta(out, config)?;
    Ok(0)
}

/// Encoder ladder for flattened 5-sample windows. At 80 servers this is
/// exactly the stock 400-390-370-390-400 architecture; other server counts
/// keep the same -10/-30 offsets so the bottleneck stays proportionate.
fn ae_widths_for(n_servers: usize) -> anyhow::Result<Vec<usize>> {
    let width = xfire_core::dataset::AE_WINDOW_LEN * n_servers;
    if width == AE_WIDTHS[0] {
        return Ok(AE_WIDTHS.to_vec());
    }
    anyhow::ensure!(
        width > 30,
        "autoencoder windows must be wider than 30 values; {n_servers} servers give {width}",
    );
    Ok(vec![width, width - 10, width - 30, width - 10, width])
}

pub fn collect_ae_windows(
    traces: &[Trace],
    indices: &[usize],
) -> xfire_core::Result<Vec<xfire_core::dataset::AeWindow>> {
    let mut out = Vec::new();
    for &i in indices {
        out.extend(make_ae_windows(&traces[i], i)?);
    }
    Ok(out)
}

fn collect_cnn_windows(
    traces: &[Trace],
    indices: &[usize],
    stride: usize,
) -> xfire_core::Result<Vec<xfire_core::dataset::CnnWindow>> {
    let mut out = Vec::new();
    for &i in indices {
        out.extend(make_cnn_windows(&traces[i], i, stride)?);
    }
    Ok(out)
}

/// Cuts `per_instance` sequences from each trace at start offsets sampled
/// without replacement, so warm-up onsets land anywhere in the window. With
/// fewer possible offsets than requested, every offset is taken once.
pub fn collect_lstm_sequences(
    traces: &[Trace],
    indices: &[usize],
    per_instance: usize,
    rng: &mut ChaCha8Rng,
) -> xfire_core::Result<Vec<xfire_core::dataset::SequenceExample>> {
    use xfire_core::dataset::LSTM_SEQUENCE_LEN;
    let mut out = Vec::new();
    for &i in indices {
        let n = traces[i].n_samples();
        if n < LSTM_SEQUENCE_LEN {
            return Err(Error::InstanceTooShort {
                len: n,
                min: LSTM_SEQUENCE_LEN,
            });
        }
        let n_offsets = n - LSTM_SEQUENCE_LEN + 1;
        let mut offsets: Vec<usize> = if per_instance < n_offsets {
            rand::seq::index::sample(rng, n_offsets, per_instance).into_vec()
        } else {
            (0..n_offsets).collect()
        };
        offsets.sort_unstable();
        for offset in offsets {
            out.push(make_lstm_sequence_at(&traces[i], i, offset)?);
        }
    }
    Ok(out)
}

/// Uniform random subsample of at most `cap` items, in place.
pub fn subsample<T>(mut items: Vec<T>, cap: usize, rng: &mut ChaCha8Rng) -> Vec<T> {
    use rand::Rng;
    if items.len() <= cap {
        return items;
    }
    // Partial Fisher-Yates: after `cap` swaps the prefix is a uniform
    // sample without replacement.
    for i in 0..cap {
        let j = rng.random_range(i..items.len());
        items.swap(i, j);
    }
    items.truncate(cap);
    items
}

fn check_stats_agree(checkpoint: Option<&NormStats>, dataset: &NormStats) -> anyhow::Result<()> {
    if let Some(ck) = checkpoint {
        if ck.global_min != dataset.global_min || ck.global_max != dataset.global_max {
            anyhow::bail!(
                "autoencoder checkpoint normalization [{}, {}] does not match the dataset's [{}, {}]",
                ck.global_min,
                ck.global_max,
                dataset.global_min,
                dataset.global_max,
            );
        }
    }
    Ok(())
}

/// Folds the curve summary into the per-model config block.
fn training_record(curve: &[EpochRecord], mut extra: serde_json::Value) -> serde_json::Value {
    let best = curve
        .iter()
        .min_by(|a, b| a.val_loss.total_cmp(&b.val_loss))
        .expect("training ran at least one epoch");
    if let serde_json::Value::Object(map) = &mut extra {
        map.insert("epochs_run".into(), serde_json::json!(curve.len()));
        map.insert("best_epoch".into(), serde_json::json!(best.epoch));
        map.insert("best_val_loss".into(), serde_json::json!(best.val_loss));
    }
    extra
}

fn finish(
    out: &Path,
    name: &str,
    checkpoint: &Checkpoint,
    curve: Option<&[EpochRecord]>,
) -> anyhow::Result<()> {
    let ckpt_path = out.join(format!("{name}.xfck"));
    save_checkpoint(&ckpt_path, checkpoint)?;
    if let Some(curve) = curve {
        let curve_path = out.join(format!("{name}_curve.csv"));
        let mut text = String::from("epoch,train_loss,val_loss\n");
        for r in curve {
            text.push_str(&format!("{},{},{}\n", r.epoch, r.train_loss, r.val_loss));
        }
        fs::write(&curve_path, text)
            .with_context(|| format!("writing {}", curve_path.display()))?;
        let best = curve
            .iter()
            .min_by(|a, b| a.val_loss.total_cmp(&b.val_loss))
            .expect("nonempty curve");
        println!(
            "stopped after {} epochs; best val loss {:.6} at epoch {}",
            curve.len(),
            best.val_loss,
            best.epoch,
        );
    }
    println!("saved checkpoint to {}", ckpt_path.display());
    Ok(())
}
