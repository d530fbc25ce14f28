//! Trained-model container: `XFCK` magic, version, JSON directory, raw
//! `f32` blobs, trailing checksum.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::autoencoder::AutoencoderModel;
use super::cnn::{CnnConfig, CnnModel};
use super::forest::RandomForest;
use super::lstm::LstmModel;
use crate::error::{Error, Result};
use crate::io::crc32;
use crate::nn::ops::BatchNormState;
use crate::nn::{Parameter, Tensor};
use crate::sim::NormStats;

pub const XFCK_MAGIC: [u8; 4] = *b"XFCK";
pub const XFCK_VERSION: u32 = 1;

/// Architecture tags stored in the header.
pub const ARCH_AUTOENCODER: &str = "autoencoder";
pub const ARCH_AE_RF: &str = "ae_rf";
pub const ARCH_CNN: &str = "cnn";
pub const ARCH_LSTM: &str = "lstm";

#[derive(Clone, Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    /// Offset into the blob region, counted in floats.
    offset: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct Header {
    format_version: u32,
    architecture: String,
    /// Attack condition the model was trained for, e.g. `"80/80"`.
    condition: String,
    /// Training metadata: optimizer settings, seed, epochs run.
    config: serde_json::Value,
    norm_stats: Option<NormStats>,
    tensors: Vec<TensorEntry>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    forest: Option<RandomForest>,
}

/// A trained model plus everything needed to apply it to raw traces.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub condition: String,
    pub config: serde_json::Value,
    pub norm_stats: Option<NormStats>,
    pub payload: CheckpointPayload,
}

#[derive(Clone, Debug)]
pub enum CheckpointPayload {
    Autoencoder(AutoencoderModel<f32>),
    AeRf {
        ae: AutoencoderModel<f32>,
        forest: RandomForest,
    },
    Cnn(CnnModel<f32>),
    Lstm(LstmModel<f32>),
}

impl Checkpoint {
    pub fn architecture(&self) -> &'static str {
        match &self.payload {
            CheckpointPayload::Autoencoder(_) => ARCH_AUTOENCODER,
            CheckpointPayload::AeRf { .. } => ARCH_AE_RF,
            CheckpointPayload::Cnn(_) => ARCH_CNN,
            CheckpointPayload::Lstm(_) => ARCH_LSTM,
        }
    }

    /// Normalization statistics are mandatory for prediction; scoring raw
    /// traces without the training-time scale would be meaningless.
    pub fn require_stats(&self) -> Result<NormStats> {
        self.norm_stats.clone().ok_or_else(|| {
            Error::InvalidConfig(
                "checkpoint carries no normalization statistics; refusing to predict".into(),
            )
        })
    }

    pub fn expect_lstm(&self) -> Result<&LstmModel<f32>> {
        match &self.payload {
            CheckpointPayload::Lstm(m) => Ok(m),
            _ => Err(self.wrong_arch(ARCH_LSTM)),
        }
    }

    pub fn expect_cnn(&self) -> Result<&CnnModel<f32>> {
        match &self.payload {
            CheckpointPayload::Cnn(m) => Ok(m),
            _ => Err(self.wrong_arch(ARCH_CNN)),
        }
    }

    pub fn expect_ae_rf(&self) -> Result<(&AutoencoderModel<f32>, &RandomForest)> {
        match &self.payload {
            CheckpointPayload::AeRf { ae, forest } => Ok((ae, forest)),
            _ => Err(self.wrong_arch(ARCH_AE_RF)),
        }
    }

    pub fn expect_autoencoder(&self) -> Result<&AutoencoderModel<f32>> {
        match &self.payload {
            CheckpointPayload::Autoencoder(m) => Ok(m),
            CheckpointPayload::AeRf { ae, .. } => Ok(ae),
            _ => Err(self.wrong_arch(ARCH_AUTOENCODER)),
        }
    }

    fn wrong_arch(&self, expected: &str) -> Error {
        Error::ArchitectureMismatch {
            expected: expected.to_string(),
            found: self.architecture().to_string(),
        }
    }
}

fn named_tensors(payload: &CheckpointPayload) -> Vec<(String, Tensor<f32>)> {
    let from_params = |params: &[Parameter<f32>]| -> Vec<(String, Tensor<f32>)> {
        params
            .iter()
            .map(|p| (p.name.clone(), p.value.clone()))
            .collect()
    };
    match payload {
        CheckpointPayload::Autoencoder(m) => from_params(&m.params),
        CheckpointPayload::AeRf { ae, .. } => from_params(&ae.params),
        CheckpointPayload::Lstm(m) => from_params(&m.params),
        CheckpointPayload::Cnn(m) => {
            let mut out = from_params(&m.params);
            out.push(("bn1_running_mean".into(), m.bn1.running_mean.clone()));
            out.push(("bn1_running_var".into(), m.bn1.running_var.clone()));
            out.push(("bn2_running_mean".into(), m.bn2.running_mean.clone()));
            out.push(("bn2_running_var".into(), m.bn2.running_var.clone()));
            out
        }
    }
}

pub fn save_checkpoint(path: &Path, checkpoint: &Checkpoint) -> Result<()> {
    let tensors = named_tensors(&checkpoint.payload);
    let mut entries = Vec::with_capacity(tensors.len());
    let mut offset = 0usize;
    for (name, t) in &tensors {
        entries.push(TensorEntry {
            name: name.clone(),
            shape: t.shape().to_vec(),
            offset,
        });
        offset += t.len();
    }
    let forest = match &checkpoint.payload {
        CheckpointPayload::AeRf { forest, .. } => Some(forest.clone()),
        _ => None,
    };
    let header = Header {
        format_version: XFCK_VERSION,
        architecture: checkpoint.architecture().to_string(),
        condition: checkpoint.condition.clone(),
        config: checkpoint.config.clone(),
        norm_stats: checkpoint.norm_stats.clone(),
        tensors: entries,
        forest,
    };
    let header_bytes = serde_json::to_vec(&header).map_err(|e| {
        Error::json(
            format!("encoding checkpoint header for {}", path.display()),
            e,
        )
    })?;

    let mut bytes = Vec::with_capacity(16 + header_bytes.len() + offset * 4);
    bytes.extend_from_slice(&XFCK_MAGIC);
    bytes.extend_from_slice(&XFCK_VERSION.to_le_bytes());
    bytes.extend_from_slice(&(header_bytes.len() as u32).to_le_bytes());
    bytes.extend_from_slice(&header_bytes);
    for (_, t) in &tensors {
        for v in t.data() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    let sum = crc32(&bytes);
    bytes.extend_from_slice(&sum.to_le_bytes());
    fs::write(path, bytes)
        .map_err(|e| Error::io(format!("writing checkpoint {}", path.display()), e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path)
        .map_err(|e| Error::io(format!("reading checkpoint {}", path.display()), e))?;
    if bytes.len() < 16 {
        return Err(Error::corrupt(
            path,
            "file shorter than any valid checkpoint",
        ));
    }
    if bytes[0..4] != XFCK_MAGIC {
        return Err(Error::corrupt(path, "bad magic, not a checkpoint file"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != XFCK_VERSION {
        return Err(Error::VersionMismatch {
            path: path.to_path_buf(),
            found: version,
            supported: XFCK_VERSION,
        });
    }
    let stored_sum = u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().unwrap());
    let body = &bytes[..bytes.len() - 4];
    if crc32(body) != stored_sum {
        return Err(Error::corrupt(path, "checksum mismatch"));
    }
    let header_len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    if 12 + header_len > body.len() {
        return Err(Error::corrupt(path, "header length exceeds file size"));
    }
    let header: Header = serde_json::from_slice(&body[12..12 + header_len])
        .map_err(|e| Error::json(format!("parsing checkpoint header {}", path.display()), e))?;
    if header.format_version != XFCK_VERSION {
        return Err(Error::VersionMismatch {
            path: path.to_path_buf(),
            found: header.format_version,
            supported: XFCK_VERSION,
        });
    }
    let blob = &body[12 + header_len..];
    if blob.len() % 4 != 0 {
        return Err(Error::corrupt(path, "float blob region is misaligned"));
    }
    let floats: Vec<f32> = blob
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();

    let mut tensors = Vec::with_capacity(header.tensors.len());
    for e in &header.tensors {
        let len: usize = e.shape.iter().product();
        let end = e.offset.checked_add(len).filter(|&end| end <= floats.len());
        let end = end.ok_or_else(|| {
            Error::corrupt(path, format!("tensor {} overruns the blob region", e.name))
        })?;
        let t = Tensor::from_vec(&e.shape, floats[e.offset..end].to_vec())?;
        tensors.push((e.name.clone(), t));
    }

    let payload = rebuild_payload(path, &header, tensors)?;
    Ok(Checkpoint {
        condition: header.condition,
        config: header.config,
        norm_stats: header.norm_stats,
        payload,
    })
}

/// Architecture geometry is recovered from the stored tensor shapes alone,
/// so a checkpoint can never disagree with itself.
fn rebuild_payload(
    path: &Path,
    header: &Header,
    tensors: Vec<(String, Tensor<f32>)>,
) -> Result<CheckpointPayload> {
    let take = |name: &str| -> Result<Tensor<f32>> {
        tensors
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t.clone())
            .ok_or_else(|| Error::corrupt(path, format!("missing tensor {name}")))
    };
    let params_from = |names: &[&str]| -> Result<Vec<Parameter<f32>>> {
        names
            .iter()
            .map(|n| Ok(Parameter::new(*n, take(n)?)))
            .collect()
    };

    match header.architecture.as_str() {
        ARCH_AUTOENCODER | ARCH_AE_RF => {
            let params = params_from(&["w1", "b1", "w2", "b2", "w3", "b3", "w4", "b4"])?;
            let widths = vec![
                params[0].value.shape()[0],
                params[0].value.shape()[1],
                params[2].value.shape()[1],
                params[4].value.shape()[1],
                params[6].value.shape()[1],
            ];
            let ae = AutoencoderModel { widths, params };
            if header.architecture == ARCH_AUTOENCODER {
                Ok(CheckpointPayload::Autoencoder(ae))
            } else {
                let forest = header
                    .forest
                    .clone()
                    .ok_or_else(|| Error::corrupt(path, "ae_rf checkpoint without a forest"))?;
                Ok(CheckpointPayload::AeRf { ae, forest })
            }
        }
        ARCH_CNN => {
            let params = params_from(&[
                "conv1",
                "bn1_gamma",
                "bn1_beta",
                "conv2",
                "bn2_gamma",
                "bn2_beta",
                "fc_w",
                "fc_b",
            ])?;
            let conv1 = params[0].value.shape().to_vec();
            let conv2 = params[3].value.shape().to_vec();
            let flat = params[6].value.shape()[0];
            let (tk, tf) = (conv1[0], conv1[3]);
            let (sk, s, sf) = (conv2[0], conv2[1], conv2[3]);
            if sf == 0 || flat % sf != 0 {
                return Err(Error::corrupt(path, "head width disagrees with filters"));
            }
            let config = CnnConfig {
                window_len: flat / sf + tk + sk - 2,
                n_servers: s,
                temporal_kernel: tk,
                temporal_filters: tf,
                spatial_kernel: sk,
                spatial_filters: sf,
            };
            config.validate()?;
            let mut bn1 = BatchNormState::new(tf);
            bn1.running_mean = take("bn1_running_mean")?;
            bn1.running_var = take("bn1_running_var")?;
            let mut bn2 = BatchNormState::new(sf);
            bn2.running_mean = take("bn2_running_mean")?;
            bn2.running_var = take("bn2_running_var")?;
            Ok(CheckpointPayload::Cnn(CnnModel {
                config,
                params,
                bn1,
                bn2,
            }))
        }
        ARCH_LSTM => {
            let params = params_from(&["wx1", "wh1", "b1", "wx2", "wh2", "b2", "fc_w", "fc_b"])?;
            let input_width = params[0].value.shape()[0];
            let hidden = params[1].value.shape()[0];
            Ok(CheckpointPayload::Lstm(LstmModel {
                input_width,
                hidden,
                params,
            }))
        }
        other => Err(Error::corrupt(
            path,
            format!("unknown architecture tag {other:?}"),
        )),
    }
}
