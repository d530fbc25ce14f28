//! Effective run configuration: built-in defaults, overlaid by an optional
//! JSON file, overlaid by command-line flags (flags win).

use std::fs;
use std::path::Path;

use anyhow::Context;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use xfire_core::detector::DEFAULT_BUFFER_CAPACITY;
use xfire_core::io::{MANIFEST_VERSION, XFIR_VERSION};
use xfire_core::models::checkpoint::XFCK_VERSION;
use xfire_core::models::TrainConfig;
use xfire_core::rng::instance_seed;
use xfire_core::sim::ScenarioConfig;

/// Instance counts selected by `--profile`.
pub const DESK_INSTANCES: usize = 1000;
pub const FULL_INSTANCES: usize = 6000;

/// Purpose of a seed derived from the master seed.
///
/// Indices start far above any instance index so the per-instance streams
/// and the per-purpose streams can never collide.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SeedPurpose {
    TrainAutoencoder,
    TrainForest,
    TrainCnn,
    TrainLstm,
    SampleAeWindows,
    SampleForestWindows,
    PermuteLabels,
    SampleLstmWindows,
}

impl SeedPurpose {
    /// Position of this purpose in the derived-stream index space.
    pub fn stream_index(self) -> u64 {
        match self {
            SeedPurpose::TrainAutoencoder => 1_000_001,
            SeedPurpose::TrainForest => 1_000_002,
            SeedPurpose::TrainCnn => 1_000_003,
            SeedPurpose::TrainLstm => 1_000_004,
            SeedPurpose::SampleAeWindows => 2_000_001,
            SeedPurpose::SampleForestWindows => 2_000_002,
            SeedPurpose::PermuteLabels => 2_000_003,
            SeedPurpose::SampleLstmWindows => 2_000_004,
        }
    }
}

/// Seed for one derived purpose under `master`.
pub fn derived_seed(master: u64, purpose: SeedPurpose) -> u64 {
    instance_seed(master, purpose.stream_index())
}

/// Optimizer knobs for one trainable model. Seeds are not configurable
/// here: every run derives them from the scenario master seed, so one seed
/// reproduces the whole pipeline.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HyperParams {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub patience: usize,
    pub max_epochs: usize,
}

impl HyperParams {
    fn from_train(t: TrainConfig) -> Self {
        HyperParams {
            learning_rate: t.learning_rate,
            batch_size: t.batch_size,
            patience: t.patience,
            max_epochs: t.max_epochs,
        }
    }

    pub fn to_train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            patience: self.patience,
            max_epochs: self.max_epochs,
            seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingSection {
    pub autoencoder: HyperParams,
    pub cnn: HyperParams,
    pub lstm: HyperParams,
    /// Trees in the forest head over autoencoder features.
    pub forest_trees: usize,
    /// Stride between grid windows cut for CNN training. Evaluation always
    /// re-windows at stride 1.
    pub cnn_train_stride: usize,
    /// 64-step sequences cut per instance for LSTM training, at start
    /// offsets sampled without replacement. Random offsets matter: the
    /// stream detector scores every sample against its trailing window, so
    /// the model has to handle a warm-up onset at any in-window position,
    /// not just the handful a fixed stride would produce.
    pub lstm_windows_per_instance: usize,
    /// Caps on randomly subsampled window sets, keeping single-core
    /// training tractable. The stride-1 window supply grows linearly with
    /// instance count; reconstruction quality saturates long before that.
    pub ae_train_window_cap: usize,
    pub ae_val_window_cap: usize,
    pub forest_window_cap: usize,
}

impl Default for TrainingSection {
    fn default() -> Self {
        // At the stock learning rate the grid classifier's validation loss
        // still creeps downward past epoch 100 while its F1 saturates within
        // a few dozen epochs, so the default run caps the epoch budget
        // instead of waiting out the early stopper.
        let mut cnn = HyperParams::from_train(TrainConfig::cnn_default(0));
        cnn.max_epochs = 60;
        TrainingSection {
            autoencoder: HyperParams::from_train(TrainConfig::autoencoder_default(0)),
            cnn,
            lstm: HyperParams::from_train(TrainConfig::lstm_default(0)),
            forest_trees: 100,
            cnn_train_stride: 5,
            lstm_windows_per_instance: 5,
            ae_train_window_cap: 20_000,
            ae_val_window_cap: 5_000,
            forest_window_cap: 8_000,
        }
    }
}

/// Everything a run needs beyond its command-line verbs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub scenario: ScenarioConfig,
    pub training: TrainingSection,
    /// Smoothing-buffer capacity used by `eval` and `detect` unless a flag
    /// overrides it.
    pub buffer_capacity: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            scenario: ScenarioConfig {
                n_instances: DESK_INSTANCES,
                ..ScenarioConfig::default()
            },
            training: TrainingSection::default(),
            buffer_capacity: DEFAULT_BUFFER_CAPACITY,
        }
    }
}

/// "attacked/total" servers, e.g. "80/80". Checkpoints carry this tag and
/// refuse datasets generated under a different one.
pub fn condition_label(scenario: &ScenarioConfig) -> String {
    format!("{}/{}", scenario.n_attacked, scenario.n_servers)
}

/// Defaults overlaid with the JSON file at `path`, when given. The file may
/// set any subset of fields; unknown keys are rejected.
pub fn load_config(path: Option<&Path>) -> anyhow::Result<RunConfig> {
    let mut base = serde_json::to_value(RunConfig::default()).expect("defaults serialize");
    if let Some(path) = path {
        let text = fs::read_to_string(path)
            .with_context(|| format!("reading config file {}", path.display()))?;
        let overlay: Value = serde_json::from_str(&text)
            .with_context(|| format!("parsing config file {}", path.display()))?;
        deep_merge(&mut base, overlay);
    }
    let config: RunConfig = serde_json::from_value(base).with_context(|| match path {
        Some(p) => format!("applying config file {}", p.display()),
        None => "building default config".to_string(),
    })?;
    Ok(config)
}

fn deep_merge(base: &mut Value, overlay: Value) {
    match (base, overlay) {
        (Value::Object(base), Value::Object(overlay)) => {
            for (key, value) in overlay {
                match base.get_mut(&key) {
                    Some(slot) => deep_merge(slot, value),
                    None => {
                        base.insert(key, value);
                    }
                }
            }
        }
        (base, overlay) => *base = overlay,
    }
}

#[derive(Serialize)]
struct FormatVersions {
    manifest: u32,
    instance: u32,
    checkpoint: u32,
}

#[derive(Serialize)]
struct RunMeta<'a> {
    tool_version: &'static str,
    format_versions: FormatVersions,
    config: &'a RunConfig,
}

/// Writes `run_config.json` so the output directory alone reproduces the
/// run: exact config, seed, and every format version involved.
pub fn write_run_meta(dir: &Path, config: &RunConfig) -> anyhow::Result<()> {
    let meta = RunMeta {
        tool_version: env!("CARGO_PKG_VERSION"),
        format_versions: FormatVersions {
            manifest: MANIFEST_VERSION,
            instance: XFIR_VERSION,
            checkpoint: XFCK_VERSION,
        },
        config,
    };
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let path = dir.join("run_config.json");
    let text = serde_json::to_string_pretty(&meta).expect("meta serializes");
    fs::write(&path, text + "\n").with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}
