//! On-disk formats: the `XFIR` matrix container, the dataset manifest, and
//! CSV export for eyeballing traces.
//!
//! An `XFIR` file is `magic "XFIR" | u32 version | u32 rows | u32 cols |
//! rows*cols little-endian f32 row-major | rows label bytes (0/1)`. The same
//! container stores raw instances (rows = samples) and windowed datasets
//! (rows = windows, or stacked sequence steps), distinguished by the
//! manifest's windowing block.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::Trace;
use crate::error::{Error, Result};
use crate::sim::{NormStats, ScenarioConfig, UtilizationInstance};

pub const XFIR_MAGIC: [u8; 4] = *b"XFIR";
pub const XFIR_VERSION: u32 = 1;
pub const MANIFEST_VERSION: u32 = 1;

/// CRC-32 (IEEE 802.3, reflected, poly 0xEDB88320). Checkpoints append this
/// over all preceding bytes.
pub fn crc32(bytes: &[u8]) -> u32 {
    let mut crc: u32 = 0xFFFF_FFFF;
    for &b in bytes {
        crc ^= b as u32;
        for _ in 0..8 {
            let mask = (crc & 1).wrapping_neg();
            crc = (crc >> 1) ^ (0xEDB8_8320 & mask);
        }
    }
    !crc
}

/// Decoded contents of one container file.
#[derive(Clone, Debug, PartialEq)]
pub struct MatrixFile {
    pub rows: usize,
    pub cols: usize,
    /// Row-major, `rows * cols` entries.
    pub values: Vec<f32>,
    /// One label per row.
    pub labels: Vec<bool>,
}

pub fn write_matrix_file(
    path: &Path,
    rows: usize,
    cols: usize,
    values: &[f32],
    labels: &[bool],
) -> Result<()> {
    if values.len() != rows * cols || labels.len() != rows {
        return Err(Error::ShapeMismatch(format!(
            "matrix file {rows}x{cols} given {} values, {} labels",
            values.len(),
            labels.len()
        )));
    }
    let mut buf = Vec::with_capacity(16 + values.len() * 4 + labels.len());
    buf.extend_from_slice(&XFIR_MAGIC);
    buf.extend_from_slice(&XFIR_VERSION.to_le_bytes());
    buf.extend_from_slice(&(rows as u32).to_le_bytes());
    buf.extend_from_slice(&(cols as u32).to_le_bytes());
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf.extend(labels.iter().map(|&l| l as u8));
    let mut file = fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    file.write_all(&buf)
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(())
}

pub fn read_matrix_file(path: &Path) -> Result<MatrixFile> {
    let mut bytes = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    if bytes.len() < 16 {
        return Err(Error::corrupt(path, "shorter than the fixed header"));
    }
    if bytes[0..4] != XFIR_MAGIC {
        return Err(Error::corrupt(path, "bad magic"));
    }
    let word = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let version = word(4);
    if version != XFIR_VERSION {
        return Err(Error::VersionMismatch {
            path: path.to_path_buf(),
            found: version,
            supported: XFIR_VERSION,
        });
    }
    let rows = word(8) as usize;
    let cols = word(12) as usize;
    let expect = 16 + rows * cols * 4 + rows;
    if bytes.len() != expect {
        return Err(Error::corrupt(
            path,
            format!("{} bytes but {rows}x{cols} needs {expect}", bytes.len()),
        ));
    }
    let mut values = Vec::with_capacity(rows * cols);
    for chunk in bytes[16..16 + rows * cols * 4].chunks_exact(4) {
        values.push(f32::from_le_bytes(chunk.try_into().unwrap()));
    }
    let mut labels = Vec::with_capacity(rows);
    for (i, &b) in bytes[16 + rows * cols * 4..].iter().enumerate() {
        match b {
            0 => labels.push(false),
            1 => labels.push(true),
            other => {
                return Err(Error::corrupt(
                    path,
                    format!("label byte for row {i} is {other}, not 0/1"),
                ))
            }
        }
    }
    Ok(MatrixFile {
        rows,
        cols,
        values,
        labels,
    })
}

/// File name of instance `index` inside a dataset directory.
pub fn instance_file_name(index: usize) -> String {
    format!("instance_{index:06}.xfir")
}

pub fn instance_path(dir: &Path, index: usize) -> PathBuf {
    dir.join("instances").join(instance_file_name(index))
}

/// Writes one instance, quantizing values to f32.
pub fn write_instance(dir: &Path, index: usize, instance: &UtilizationInstance) -> Result<()> {
    let path = instance_path(dir, index);
    let values: Vec<f32> = instance.values().iter().map(|&v| v as f32).collect();
    write_matrix_file(
        &path,
        instance.n_samples(),
        instance.n_servers(),
        &values,
        &instance.labels,
    )
}

/// Loads one instance back as a trace (f32 storage lifted to f64).
pub fn read_trace(dir: &Path, index: usize) -> Result<Trace> {
    let path = instance_path(dir, index);
    let m = read_matrix_file(&path)?;
    Trace::new(
        m.values.iter().map(|&v| v as f64).collect(),
        m.cols,
        m.labels,
    )
}

/// Extra manifest block describing a windowed (rather than raw) dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowingMeta {
    /// "cnn_grid" | "ae_vector" | "lstm_steps".
    pub window: String,
    pub stride: usize,
    pub label_rule: String,
}

/// `manifest.json` at the root of every dataset directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub scenario: ScenarioConfig,
    /// Seed the 70:20:10 instance split was drawn with.
    pub split_seed: u64,
    /// Min/max over the training split, in original Kbps.
    pub norm_stats: Option<NormStats>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub windowing: Option<WindowingMeta>,
}

pub fn manifest_path(dir: &Path) -> PathBuf {
    dir.join("manifest.json")
}

pub fn write_manifest(dir: &Path, manifest: &DatasetManifest) -> Result<()> {
    let path = manifest_path(dir);
    let text = serde_json::to_string_pretty(manifest)
        .map_err(|e| Error::json("serializing manifest", e))?;
    fs::write(&path, text.as_bytes()).map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(())
}

pub fn read_manifest(dir: &Path) -> Result<DatasetManifest> {
    let path = manifest_path(dir);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let manifest: DatasetManifest =
        serde_json::from_str(&text).map_err(|e| Error::json(path.display().to_string(), e))?;
    if manifest.format_version != MANIFEST_VERSION {
        return Err(Error::VersionMismatch {
            path: path.to_path_buf(),
            found: manifest.format_version,
            supported: MANIFEST_VERSION,
        });
    }
    Ok(manifest)
}

/// Writes a complete dataset directory: manifest plus one file per instance.
pub fn write_dataset(
    dir: &Path,
    manifest: &DatasetManifest,
    instances: &[UtilizationInstance],
) -> Result<()> {
    fs::create_dir_all(dir.join("instances"))
        .map_err(|e| Error::io(dir.display().to_string(), e))?;
    write_manifest(dir, manifest)?;
    for (i, inst) in instances.iter().enumerate() {
        write_instance(dir, i, inst)?;
    }
    Ok(())
}

/// Reads manifest plus all instances named by it.
pub fn load_dataset(dir: &Path) -> Result<(DatasetManifest, Vec<Trace>)> {
    let manifest = read_manifest(dir)?;
    let traces = (0..manifest.scenario.n_instances)
        .map(|i| read_trace(dir, i))
        .collect::<Result<Vec<_>>>()?;
    Ok((manifest, traces))
}

/// One CSV per instance, header `t,label,s0..s{n-1}`, for inspection.
pub fn export_csv(path: &Path, trace: &Trace) -> Result<()> {
    let mut text = String::from("t,label");
    for s in 0..trace.n_servers() {
        text.push_str(&format!(",s{s}"));
    }
    text.push('\n');
    for t in 0..trace.n_samples() {
        text.push_str(&format!("{t},{}", trace.labels[t] as u8));
        for v in trace.row(t) {
            text.push_str(&format!(",{v}"));
        }
        text.push('\n');
    }
    fs::write(path, text.as_bytes()).map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{draw_server_profiles, synthesize_instance};

    fn tiny_config() -> ScenarioConfig {
        ScenarioConfig {
            n_servers: 5,
            n_attacked: 3,
            pre_len: 4,
            warmup_len: 3,
            plateau_len: 4,
            n_instances: 2,
            master_seed: 31,
            ..ScenarioConfig::default()
        }
    }

    #[test]
    fn crc32_matches_reference_vector() {
        assert_eq!(crc32(b"123456789"), 0xCBF4_3926);
        assert_eq!(crc32(b""), 0);
    }

    #[test]
    fn matrix_file_roundtrip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.xfir");
        let values: Vec<f32> = (0..12).map(|i| i as f32 * 0.25 - 1.0).collect();
        let labels = vec![true, false, true];
        write_matrix_file(&path, 3, 4, &values, &labels).unwrap();
        let m = read_matrix_file(&path).unwrap();
        assert_eq!(m.rows, 3);
        assert_eq!(m.cols, 4);
        assert_eq!(m.values, values);
        assert_eq!(m.labels, labels);
    }

    #[test]
    fn instance_roundtrip_preserves_labels_and_quantized_values() {
        let config = tiny_config();
        let profiles = draw_server_profiles(&config);
        let inst = synthesize_instance(&config, &profiles, 0).unwrap();
        let dir = tempfile::tempdir().unwrap();
        std::fs::create_dir_all(dir.path().join("instances")).unwrap();
        write_instance(dir.path(), 0, &inst).unwrap();
        let trace = read_trace(dir.path(), 0).unwrap();
        assert_eq!(trace.labels, inst.labels);
        assert_eq!(trace.n_servers(), inst.n_servers());
        for t in 0..inst.n_samples() {
            for s in 0..inst.n_servers() {
                let orig = inst.value(t, s);
                let got = trace.row(t)[s];
                assert!((orig - got).abs() <= orig.abs() * 1e-6, "{orig} vs {got}");
            }
        }
    }

    #[test]
    fn truncated_file_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.xfir");
        write_matrix_file(&path, 2, 2, &[1.0, 2.0, 3.0, 4.0], &[true, false]).unwrap();
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(
            read_matrix_file(&path),
            Err(Error::CorruptFile { .. })
        ));
    }

    #[test]
    fn bad_magic_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.xfir");
        write_matrix_file(&path, 1, 1, &[1.0], &[false]).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        bytes[0] = b'Y';
        fs::write(&path, &bytes).unwrap();
        assert!(matches!(
            read_matrix_file(&path),
            Err(Error::CorruptFile { .. })
        ));
    }

    #[test]
    fn future_version_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.xfir");
        write_matrix_file(&path, 1, 1, &[1.0], &[false]).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        bytes[4] = 9;
        fs::write(&path, &bytes).unwrap();
        assert!(matches!(
            read_matrix_file(&path),
            Err(Error::VersionMismatch { found: 9, .. })
        ));
    }

    #[test]
    fn nonbinary_label_byte_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.xfir");
        write_matrix_file(&path, 1, 1, &[1.0], &[false]).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        let last = bytes.len() - 1;
        bytes[last] = 2;
        fs::write(&path, &bytes).unwrap();
        assert!(matches!(
            read_matrix_file(&path),
            Err(Error::CorruptFile { .. })
        ));
    }

    #[test]
    fn dataset_directory_roundtrip() {
        let config = tiny_config();
        let data = crate::sim::synthesize_dataset(&config).unwrap();
        let stats = crate::sim::compute_minmax(&data).unwrap();
        let manifest = DatasetManifest {
            format_version: MANIFEST_VERSION,
            scenario: config.clone(),
            split_seed: config.master_seed,
            norm_stats: Some(stats),
            windowing: None,
        };
        let dir = tempfile::tempdir().unwrap();
        write_dataset(dir.path(), &manifest, &data).unwrap();
        let (m2, traces) = load_dataset(dir.path()).unwrap();
        assert_eq!(m2, manifest);
        assert_eq!(traces.len(), 2);
        assert_eq!(traces[0].labels, data[0].labels);
    }

    #[test]
    fn manifest_rewrite_is_byte_identical() {
        let manifest = DatasetManifest {
            format_version: MANIFEST_VERSION,
            scenario: tiny_config(),
            split_seed: 31,
            norm_stats: Some(NormStats {
                global_min: 93.25,
                global_max: 171.5,
            }),
            windowing: Some(WindowingMeta {
                window: "cnn_grid".into(),
                stride: 5,
                label_rule: "warm_rows>=5of15".into(),
            }),
        };
        let dir = tempfile::tempdir().unwrap();
        write_manifest(dir.path(), &manifest).unwrap();
        let first = fs::read(manifest_path(dir.path())).unwrap();
        write_manifest(dir.path(), &manifest).unwrap();
        let second = fs::read(manifest_path(dir.path())).unwrap();
        assert_eq!(first, second);
    }

    #[test]
    fn csv_export_has_expected_header_and_rows() {
        let config = tiny_config();
        let profiles = draw_server_profiles(&config);
        let inst = synthesize_instance(&config, &profiles, 1).unwrap();
        let trace = Trace::from_instance(&inst);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("inst.csv");
        export_csv(&path, &trace).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "t,label,s0,s1,s2,s3,s4");
        let body: Vec<&str> = lines.collect();
        assert_eq!(body.len(), 11);
        // Row 4 is the first warm-up sample under pre_len = 4.
        assert!(body[4].starts_with("4,1,"));
        assert!(body[0].starts_with("0,0,"));
    }

    #[test]
    fn windowed_container_roundtrip_with_meta() {
        // CNN windows: one row per window, flattened grid, window label.
        let labels = vec![false, false, true, true, true, true, true, false, false];
        let n = labels.len();
        let values: Vec<f64> = (0..n * 2).map(|i| i as f64).collect();
        let trace = Trace::new(values, 2, labels).unwrap();
        let windows = crate::dataset::make_ae_windows(&trace, 0).unwrap();
        let rows = windows.len();
        let cols = windows[0].vector.len();
        let mut flat = Vec::with_capacity(rows * cols);
        let mut row_labels = Vec::with_capacity(rows);
        for w in &windows {
            flat.extend_from_slice(&w.vector);
            row_labels.push(w.label);
        }
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ae_windows.xfir");
        write_matrix_file(&path, rows, cols, &flat, &row_labels).unwrap();
        let manifest = DatasetManifest {
            format_version: MANIFEST_VERSION,
            scenario: tiny_config(),
            split_seed: 1,
            norm_stats: None,
            windowing: Some(WindowingMeta {
                window: "ae_vector".into(),
                stride: 1,
                label_rule: "warm_rows>=3of5".into(),
            }),
        };
        write_manifest(dir.path(), &manifest).unwrap();

        let m = read_matrix_file(&path).unwrap();
        let m2 = read_manifest(dir.path()).unwrap();
        assert_eq!(m.rows, rows);
        assert_eq!(m.values, flat);
        assert_eq!(m.labels, row_labels);
        assert_eq!(m2.windowing.unwrap().window, "ae_vector");
    }
}
