//! Turns labeled utilization traces into the three model-specific example
//! shapes and assigns whole instances to train/validation/test.
//!
//! Splitting is always by instance: windows of one episode never cross the
//! partition boundary, which keeps temporal leakage out of training.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{stream, StreamTag};
use crate::sim::{NormStats, UtilizationInstance};

/// Samples per grid window fed to the convolutional classifier.
pub const CNN_WINDOW_LEN: usize = 15;
/// Warm-up rows required before a grid window counts as positive.
pub const CNN_POSITIVE_ROWS: usize = 5;
/// Samples concatenated into one reconstruction vector.
pub const AE_WINDOW_LEN: usize = 5;
/// Warm-up samples required before a reconstruction window is positive.
pub const AE_POSITIVE_ROWS: usize = 3;
/// Steps per recurrent training sequence.
pub const LSTM_SEQUENCE_LEN: usize = 64;

/// A labeled utilization matrix decoupled from how it was produced —
/// either fresh from the synthesizer or loaded back from disk.
#[derive(Clone, Debug, PartialEq)]
pub struct Trace {
    values: Vec<f64>,
    n_servers: usize,
    pub labels: Vec<bool>,
}

impl Trace {
    pub fn new(values: Vec<f64>, n_servers: usize, labels: Vec<bool>) -> Result<Self> {
        if n_servers == 0 || values.len() != n_servers * labels.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} values cannot form {} samples x {} servers",
                values.len(),
                labels.len(),
                n_servers
            )));
        }
        Ok(Trace {
            values,
            n_servers,
            labels,
        })
    }

    pub fn from_instance(instance: &UtilizationInstance) -> Self {
        Trace {
            values: instance.values().to_vec(),
            n_servers: instance.n_servers(),
            labels: instance.labels.clone(),
        }
    }

    pub fn n_samples(&self) -> usize {
        self.labels.len()
    }

    pub fn n_servers(&self) -> usize {
        self.n_servers
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.values[t * self.n_servers..(t + 1) * self.n_servers]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Min/max-mapped copy; out-of-range values stay unclamped.
    pub fn normalized(&self, stats: &NormStats) -> Trace {
        Trace {
            values: self
                .values
                .iter()
                .map(|&v| stats.normalize_value(v))
                .collect(),
            n_servers: self.n_servers,
            labels: self.labels.clone(),
        }
    }
}

/// One grid example for the convolutional classifier.
#[derive(Clone, Debug)]
pub struct CnnWindow {
    /// Row-major `[CNN_WINDOW_LEN][n_servers]`, already normalized.
    pub values: Vec<f32>,
    pub label: bool,
    pub instance_id: usize,
    /// Sample index of the window's first row.
    pub offset: usize,
}

/// One concatenated reconstruction example.
#[derive(Clone, Debug)]
pub struct AeWindow {
    /// `AE_WINDOW_LEN * n_servers` values, time-major: element
    /// `n_servers*j + k` is sample `offset+j`, server `k`.
    pub vector: Vec<f32>,
    pub label: bool,
    pub instance_id: usize,
    pub offset: usize,
}

/// One recurrent training sequence with per-step labels.
#[derive(Clone, Debug, PartialEq)]
pub struct SequenceExample {
    /// Row-major `[LSTM_SEQUENCE_LEN][n_servers]`.
    pub steps: Vec<f32>,
    pub step_labels: Vec<bool>,
    pub instance_id: usize,
    pub offset: usize,
}

fn window_values(trace: &Trace, offset: usize, len: usize) -> Vec<f32> {
    let w = trace.n_servers();
    trace.values[offset * w..(offset + len) * w]
        .iter()
        .map(|&v| v as f32)
        .collect()
}

fn check_length(trace: &Trace, window: usize) -> Result<()> {
    if trace.n_samples() < window {
        return Err(Error::InstanceTooShort {
            len: trace.n_samples(),
            min: window,
        });
    }
    Ok(())
}

/// Sliding 15-row grids at `stride`; positive iff at least 5 of the 15
/// rows fall inside the warm-up.
pub fn make_cnn_windows(
    trace: &Trace,
    instance_id: usize,
    stride: usize,
) -> Result<Vec<CnnWindow>> {
    check_length(trace, CNN_WINDOW_LEN)?;
    assert!(stride >= 1, "stride must be positive");
    let mut out = Vec::new();
    let mut offset = 0;
    while offset + CNN_WINDOW_LEN <= trace.n_samples() {
        let warm_rows = trace.labels[offset..offset + CNN_WINDOW_LEN]
            .iter()
            .filter(|&&l| l)
            .count();
        out.push(CnnWindow {
            values: window_values(trace, offset, CNN_WINDOW_LEN),
            label: warm_rows >= CNN_POSITIVE_ROWS,
            instance_id,
            offset,
        });
        offset += stride;
    }
    Ok(out)
}

/// Stride-1 windows of 5 concatenated samples; positive on warm-up
/// majority (at least 3 of 5).
pub fn make_ae_windows(trace: &Trace, instance_id: usize) -> Result<Vec<AeWindow>> {
    check_length(trace, AE_WINDOW_LEN)?;
    let mut out = Vec::with_capacity(trace.n_samples() - AE_WINDOW_LEN + 1);
    for offset in 0..=trace.n_samples() - AE_WINDOW_LEN {
        let warm_rows = trace.labels[offset..offset + AE_WINDOW_LEN]
            .iter()
            .filter(|&&l| l)
            .count();
        out.push(AeWindow {
            vector: window_values(trace, offset, AE_WINDOW_LEN),
            label: warm_rows >= AE_POSITIVE_ROWS,
            instance_id,
            offset,
        });
    }
    Ok(out)
}

/// The single 64-step sequence starting at `offset`, labels copied per step.
pub fn make_lstm_sequence_at(
    trace: &Trace,
    instance_id: usize,
    offset: usize,
) -> Result<SequenceExample> {
    check_length(trace, LSTM_SEQUENCE_LEN)?;
    if offset + LSTM_SEQUENCE_LEN > trace.n_samples() {
        return Err(Error::ShapeMismatch(format!(
            "sequence offset {offset} overruns a {}-sample trace",
            trace.n_samples()
        )));
    }
    Ok(SequenceExample {
        steps: window_values(trace, offset, LSTM_SEQUENCE_LEN),
        step_labels: trace.labels[offset..offset + LSTM_SEQUENCE_LEN].to_vec(),
        instance_id,
        offset,
    })
}

/// Sliding 64-step sequences at `stride` with labels copied per step.
pub fn make_lstm_sequences(
    trace: &Trace,
    instance_id: usize,
    stride: usize,
) -> Result<Vec<SequenceExample>> {
    check_length(trace, LSTM_SEQUENCE_LEN)?;
    assert!(stride >= 1, "stride must be positive");
    let mut out = Vec::new();
    let mut offset = 0;
    while offset + LSTM_SEQUENCE_LEN <= trace.n_samples() {
        out.push(make_lstm_sequence_at(trace, instance_id, offset)?);
        offset += stride;
    }
    Ok(out)
}

/// Which partition an instance landed in.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Partition {
    Train,
    Val,
    Test,
}

/// Whole-instance assignment at the fixed 70:20:10 ratio.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_frac: f64,
    pub val_frac: f64,
    pub test_frac: f64,
    /// `assignment[i]` is instance i's partition.
    pub assignment: Vec<Partition>,
}

impl SplitSpec {
    /// Instance ids in one partition, ascending.
    pub fn indices(&self, part: Partition) -> Vec<usize> {
        self.assignment
            .iter()
            .enumerate()
            .filter(|(_, &p)| p == part)
            .map(|(i, _)| i)
            .collect()
    }
}

/// Shuffles instance ids by seed, then cuts 70% train / 20% val / rest test.
pub fn split_dataset(n_instances: usize, seed: u64) -> Result<SplitSpec> {
    if n_instances < 10 {
        return Err(Error::InvalidConfig(format!(
            "need at least 10 instances to split 70:20:10, got {n_instances}"
        )));
    }
    let mut order: Vec<usize> = (0..n_instances).collect();
    order.shuffle(&mut stream(seed, 0, StreamTag::Split));
    let n_train = n_instances * 7 / 10;
    let n_val = n_instances * 2 / 10;
    let mut assignment = vec![Partition::Test; n_instances];
    for (rank, &id) in order.iter().enumerate() {
        assignment[id] = if rank < n_train {
            Partition::Train
        } else if rank < n_train + n_val {
            Partition::Val
        } else {
            Partition::Test
        };
    }
    Ok(SplitSpec {
        train_frac: 0.7,
        val_frac: 0.2,
        test_frac: 0.1,
        assignment,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{draw_server_profiles, synthesize_instance, ScenarioConfig};
    use proptest::prelude::*;

    /// A trace whose value at (t, s) encodes its own coordinates.
    fn coordinate_trace(n_samples: usize, n_servers: usize, labels: Vec<bool>) -> Trace {
        let values = (0..n_samples)
            .flat_map(|t| (0..n_servers).map(move |s| (t * 1000 + s) as f64))
            .collect();
        Trace::new(values, n_servers, labels).unwrap()
    }

    fn default_labels(n: usize, pre: usize, warm: usize) -> Vec<bool> {
        (0..n).map(|t| t >= pre && t < pre + warm).collect()
    }

    #[test]
    fn grid_window_inside_warmup_is_positive() {
        let labels = default_labels(45, 10, 20);
        let trace = coordinate_trace(45, 4, labels);
        let windows = make_cnn_windows(&trace, 0, 1).unwrap();
        // Offset 12 covers samples 12..27, all inside the 10..30 warm-up.
        let w = &windows[12];
        assert_eq!(w.offset, 12);
        assert!(w.label);
    }

    #[test]
    fn grid_label_threshold_is_five_rows() {
        // Warm-up 20..26; window at offset 11 covers 11..26 → 6 warm rows,
        // offset 7 covers 7..22 → 2 warm rows. Build windows around the
        // 4-vs-5 boundary explicitly.
        let mut labels = vec![false; 40];
        for l in labels.iter_mut().skip(20).take(10) {
            *l = true;
        }
        let trace = coordinate_trace(40, 2, labels);
        let windows = make_cnn_windows(&trace, 0, 1).unwrap();
        // Offset 10: rows 10..25 → warm rows 20..25 = 5 → positive.
        assert!(windows[10].label);
        // Offset 9: rows 9..24 → warm rows 20..24 = 4 → negative.
        assert!(!windows[9].label);
    }

    #[test]
    fn grid_window_count_matches_stride_one_formula() {
        let labels = default_labels(120, 45, 30);
        let trace = coordinate_trace(120, 3, labels);
        let windows = make_cnn_windows(&trace, 0, 1).unwrap();
        assert_eq!(windows.len(), 106);
    }

    #[test]
    fn grid_rejects_short_instance() {
        let trace = coordinate_trace(14, 2, vec![false; 14]);
        assert!(matches!(
            make_cnn_windows(&trace, 0, 1),
            Err(Error::InstanceTooShort { len: 14, min: 15 })
        ));
    }

    #[test]
    fn reconstruction_window_all_warm_is_positive() {
        let labels = default_labels(20, 5, 10);
        let trace = coordinate_trace(20, 2, labels);
        let windows = make_ae_windows(&trace, 0).unwrap();
        assert!(windows[7].label); // samples 7..12 all warm
        assert!(!windows[0].label);
    }

    #[test]
    fn reconstruction_vector_layout_is_time_major() {
        let labels = default_labels(12, 3, 4);
        let trace = coordinate_trace(12, 80, labels);
        let windows = make_ae_windows(&trace, 0).unwrap();
        let t0 = 4;
        let w = &windows[t0];
        assert_eq!(w.vector.len(), 400);
        for j in 0..AE_WINDOW_LEN {
            for k in 0..80 {
                let expect = ((t0 + j) * 1000 + k) as f32;
                assert_eq!(w.vector[80 * j + k], expect, "j={j} k={k}");
            }
        }
    }

    #[test]
    fn reconstruction_window_count() {
        let labels = default_labels(120, 45, 30);
        let trace = coordinate_trace(120, 2, labels);
        assert_eq!(make_ae_windows(&trace, 0).unwrap().len(), 116);
    }

    #[test]
    fn sequences_at_stride_fifty_six() {
        let labels = default_labels(120, 45, 30);
        let trace = coordinate_trace(120, 2, labels);
        let seqs = make_lstm_sequences(&trace, 3, 56).unwrap();
        assert_eq!(seqs.len(), 2);
        assert_eq!(seqs[0].offset, 0);
        assert_eq!(seqs[1].offset, 56);
        assert!(seqs.iter().all(|s| s.instance_id == 3));
    }

    #[test]
    fn sequence_labels_are_copied_verbatim() {
        let labels = default_labels(120, 45, 30);
        let trace = coordinate_trace(120, 2, labels.clone());
        let seqs = make_lstm_sequences(&trace, 0, 56).unwrap();
        for seq in &seqs {
            for (i, &l) in seq.step_labels.iter().enumerate() {
                assert_eq!(l, labels[seq.offset + i]);
            }
        }
    }

    #[test]
    fn sequence_starting_at_warmup_has_thirty_leading_positives() {
        let labels = default_labels(120, 45, 30);
        let trace = coordinate_trace(120, 2, labels);
        let seqs = make_lstm_sequences(&trace, 0, 45).unwrap();
        let seq = seqs.iter().find(|s| s.offset == 45).unwrap();
        for (i, &l) in seq.step_labels.iter().enumerate() {
            assert_eq!(l, i < 30, "position {i}");
        }
    }

    #[test]
    fn single_offset_sequence_matches_the_strided_walk() {
        let labels = default_labels(120, 45, 30);
        let trace = coordinate_trace(120, 2, labels);
        let strided = make_lstm_sequences(&trace, 4, 7).unwrap();
        for seq in &strided {
            let single = make_lstm_sequence_at(&trace, 4, seq.offset).unwrap();
            assert_eq!(&single, seq);
        }
    }

    #[test]
    fn sequence_offset_past_the_end_is_rejected() {
        let labels = default_labels(120, 45, 30);
        let trace = coordinate_trace(120, 2, labels);
        assert!(make_lstm_sequence_at(&trace, 0, 56).is_ok());
        assert!(make_lstm_sequence_at(&trace, 0, 57).is_err());
    }

    #[test]
    fn split_hits_exact_partition_sizes() {
        let split = split_dataset(6000, 11).unwrap();
        assert_eq!(split.indices(Partition::Train).len(), 4200);
        assert_eq!(split.indices(Partition::Val).len(), 1200);
        assert_eq!(split.indices(Partition::Test).len(), 600);
    }

    #[test]
    fn split_partitions_are_disjoint_and_cover() {
        let split = split_dataset(997, 5).unwrap();
        let mut seen = vec![0_u8; 997];
        for part in [Partition::Train, Partition::Val, Partition::Test] {
            for id in split.indices(part) {
                seen[id] += 1;
            }
        }
        assert!(seen.iter().all(|&c| c == 1));
    }

    #[test]
    fn split_is_deterministic_and_seed_sensitive() {
        let a = split_dataset(100, 5).unwrap();
        let b = split_dataset(100, 5).unwrap();
        let c = split_dataset(100, 6).unwrap();
        assert_eq!(a.assignment, b.assignment);
        assert_ne!(a.assignment, c.assignment);
    }

    #[test]
    fn split_rejects_tiny_datasets() {
        assert!(split_dataset(9, 1).is_err());
        assert!(split_dataset(10, 1).is_ok());
    }

    #[test]
    fn windows_from_different_partitions_never_share_instances() {
        let split = split_dataset(30, 2).unwrap();
        let labels = default_labels(120, 45, 30);
        let mut train_ids = std::collections::HashSet::new();
        let mut test_ids = std::collections::HashSet::new();
        for id in split.indices(Partition::Train) {
            let trace = coordinate_trace(120, 2, labels.clone());
            for w in make_cnn_windows(&trace, id, 5).unwrap() {
                train_ids.insert(w.instance_id);
            }
        }
        for id in split.indices(Partition::Test) {
            let trace = coordinate_trace(120, 2, labels.clone());
            for w in make_cnn_windows(&trace, id, 1).unwrap() {
                test_ids.insert(w.instance_id);
            }
        }
        assert!(train_ids.is_disjoint(&test_ids));
    }

    #[test]
    fn positive_fraction_matches_exhaustive_recount() {
        let config = ScenarioConfig {
            n_servers: 6,
            n_attacked: 4,
            n_instances: 1,
            ..ScenarioConfig::default()
        };
        let profiles = draw_server_profiles(&config);
        let inst = synthesize_instance(&config, &profiles, 0).unwrap();
        let trace = Trace::from_instance(&inst);
        let windows = make_cnn_windows(&trace, 0, 1).unwrap();
        let positives = windows.iter().filter(|w| w.label).count();
        let mut expect = 0;
        for offset in 0..=trace.n_samples() - CNN_WINDOW_LEN {
            let warm = inst.labels[offset..offset + CNN_WINDOW_LEN]
                .iter()
                .filter(|&&l| l)
                .count();
            if warm >= CNN_POSITIVE_ROWS {
                expect += 1;
            }
        }
        assert_eq!(positives, expect);
        assert!(positives > 0);
    }

    proptest! {
        #[test]
        fn grid_labels_match_brute_force_recount(
            labels in proptest::collection::vec(any::<bool>(), 15..150),
            stride in 1_usize..7,
        ) {
            let n = labels.len();
            let trace = coordinate_trace(n, 2, labels.clone());
            let windows = make_cnn_windows(&trace, 0, stride).unwrap();
            let expect_count = (n - CNN_WINDOW_LEN) / stride + 1;
            prop_assert_eq!(windows.len(), expect_count);
            for w in &windows {
                let warm = labels[w.offset..w.offset + CNN_WINDOW_LEN]
                    .iter().filter(|&&l| l).count();
                prop_assert_eq!(w.label, warm >= CNN_POSITIVE_ROWS);
            }
        }

        #[test]
        fn reconstruction_labels_match_majority_recount(
            labels in proptest::collection::vec(any::<bool>(), 5..80),
        ) {
            let n = labels.len();
            let trace = coordinate_trace(n, 3, labels.clone());
            let windows = make_ae_windows(&trace, 0).unwrap();
            prop_assert_eq!(windows.len(), n - AE_WINDOW_LEN + 1);
            for w in &windows {
                let warm = labels[w.offset..w.offset + AE_WINDOW_LEN]
                    .iter().filter(|&&l| l).count();
                prop_assert_eq!(w.label, warm >= AE_POSITIVE_ROWS);
            }
        }
    }
}
