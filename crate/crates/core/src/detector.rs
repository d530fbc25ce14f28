//! Streaming early-warning layer: per-sample recurrent scoring smoothed by
//! an all-ones circular buffer.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::dataset::{Trace, LSTM_SEQUENCE_LEN};
use crate::error::{Error, Result};
use crate::models::LstmModel;
use crate::sim::NormStats;

/// Keeps the most recent hard predictions; says "attack" only when it is
/// full and every entry agrees.
#[derive(Clone, Debug)]
pub struct SmoothingBuffer {
    capacity: usize,
    window: std::collections::VecDeque<bool>,
    ones: usize,
}

pub const DEFAULT_BUFFER_CAPACITY: usize = 7;

impl SmoothingBuffer {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::InvalidConfig(
                "smoothing buffer needs capacity >= 1".into(),
            ));
        }
        Ok(SmoothingBuffer {
            capacity,
            window: std::collections::VecDeque::with_capacity(capacity),
            ones: 0,
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Inserts one hard prediction, evicting the oldest when full, and
    /// returns the smoothed decision.
    pub fn push_and_decide(&mut self, prediction: bool) -> bool {
        if self.window.len() == self.capacity {
            if self.window.pop_front() == Some(true) {
                self.ones -= 1;
            }
        }
        self.window.push_back(prediction);
        if prediction {
            self.ones += 1;
        }
        self.window.len() == self.capacity && self.ones == self.capacity
    }
}

/// Replays a whole prediction sequence through one buffer.
pub fn smooth_predictions(predictions: &[bool], capacity: usize) -> Result<Vec<bool>> {
    let mut buffer = SmoothingBuffer::new(capacity)?;
    Ok(predictions
        .iter()
        .map(|&p| buffer.push_and_decide(p))
        .collect())
}

/// First smoothed firing at or after the warm-up start. Anything earlier is
/// a false alarm, not a detection.
pub fn first_event_index(smoothed: &[bool], warmup_start: usize) -> Option<usize> {
    smoothed
        .iter()
        .enumerate()
        .skip(warmup_start)
        .find(|(_, &s)| s)
        .map(|(t, _)| t)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DetectionEvent {
    pub instance_id: usize,
    /// Sample index of the first smoothed attack decision.
    pub detect_index: usize,
    /// `detect_index - warmup_start + 1`: samples of warm-up consumed
    /// before the alarm, counted inclusively.
    pub latency: usize,
}

/// One carried detection pipeline: a bounded sample history, a smoothing
/// window, and a clock.
///
/// The recurrent model only ever trains on fixed 64-step windows, so the
/// stream never shows it a longer context: each arriving sample is scored
/// by replaying the most recent [`LSTM_SEQUENCE_LEN`] normalized samples
/// through a fresh recurrent state and reading the final step. Carrying one
/// state forever instead would push the recurrence into sequence lengths it
/// has never seen.
#[derive(Clone, Debug)]
pub struct StreamState {
    window: VecDeque<Vec<f32>>,
    buffer: SmoothingBuffer,
    samples_seen: usize,
}

/// What the detector said about one sample.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: usize,
    /// Attack-class probability.
    pub p: f64,
    pub raw: bool,
    pub smoothed: bool,
}

impl StreamState {
    pub fn new(buffer_capacity: usize) -> Result<Self> {
        Ok(StreamState {
            window: VecDeque::with_capacity(LSTM_SEQUENCE_LEN),
            buffer: SmoothingBuffer::new(buffer_capacity)?,
            samples_seen: 0,
        })
    }

    pub fn samples_seen(&self) -> usize {
        self.samples_seen
    }

    /// Normalizes one raw sample, rescores the trailing history window, and
    /// smooths the thresholded final-step prediction.
    pub fn step(
        &mut self,
        model: &LstmModel<f32>,
        stats: &NormStats,
        raw_sample: &[f64],
    ) -> Result<StepRecord> {
        let normalized: Vec<f32> = raw_sample
            .iter()
            .map(|&v| stats.normalize_value(v) as f32)
            .collect();
        if self.window.len() == LSTM_SEQUENCE_LEN {
            self.window.pop_front();
        }
        self.window.push_back(normalized);
        let mut state = model.fresh_state();
        let mut logits = [0.0_f32; 2];
        for row in &self.window {
            logits = model.stream_step(&mut state, row)?;
        }
        let p = attack_probability(logits[0] as f64, logits[1] as f64);
        let raw = p >= 0.5;
        let smoothed = self.buffer.push_and_decide(raw);
        let record = StepRecord {
            t: self.samples_seen,
            p,
            raw,
            smoothed,
        };
        self.samples_seen += 1;
        Ok(record)
    }
}

/// Numerically stable two-way softmax for the attack class.
pub fn attack_probability(logit_benign: f64, logit_attack: f64) -> f64 {
    let m = logit_benign.max(logit_attack);
    let e0 = (logit_benign - m).exp();
    let e1 = (logit_attack - m).exp();
    e1 / (e0 + e1)
}

/// Feeds a raw trace through a fresh stream state and reports the first
/// detection at or after the warm-up start, plus the full per-sample record.
pub fn stream_detect(
    model: &LstmModel<f32>,
    stats: &NormStats,
    trace: &Trace,
    buffer_capacity: usize,
    instance_id: usize,
) -> Result<(Option<DetectionEvent>, Vec<StepRecord>)> {
    let mut state = StreamState::new(buffer_capacity)?;
    let mut records = Vec::with_capacity(trace.n_samples());
    for t in 0..trace.n_samples() {
        records.push(state.step(model, stats, trace.row(t))?);
    }
    let warmup_start = trace.labels.iter().position(|&l| l);
    let event = warmup_start.and_then(|start| {
        records
            .iter()
            .skip(start)
            .find(|r| r.smoothed)
            .map(|r| DetectionEvent {
                instance_id,
                detect_index: r.t,
                latency: r.t - start + 1,
            })
    });
    Ok((event, records))
}

/// Event bookkeeping over a set of traces at one buffer capacity.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TradeoffRow {
    pub capacity: usize,
    /// Instances whose event landed inside the warm-up window.
    pub tp: usize,
    /// Instances that fired before their warm-up started.
    pub fp: usize,
    /// Instances with a warm-up but no in-window event.
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
    pub latency_min: Option<usize>,
    pub latency_mean: Option<f64>,
    pub latency_max: Option<usize>,
}

/// Classifies one trace's smoothed decisions into event counts.
///
/// A detection is a true positive only while the warm-up is still running
/// (the sample at `detect_index` is labeled attack); a later alarm means the
/// attack already completed, which counts as a miss. Any firing before the
/// warm-up starts marks the instance as a false-positive source, and both
/// can happen on the same trace.
fn classify_trace(smoothed: &[bool], labels: &[bool]) -> (bool, bool, bool, Option<usize>) {
    let warmup_start = labels.iter().position(|&l| l);
    let Some(start) = warmup_start else {
        let fired = smoothed.iter().any(|&s| s);
        return (false, fired, false, None);
    };
    let early = smoothed[..start].iter().any(|&s| s);
    let event = first_event_index(smoothed, start);
    match event {
        Some(t) if labels[t] => (true, early, false, Some(t - start + 1)),
        _ => (false, early, true, None),
    }
}

/// Event counts over already-smoothed decision sequences, one per trace.
pub(crate) fn tally_events(
    capacity: usize,
    smoothed: &[Vec<bool>],
    labels: &[&[bool]],
) -> TradeoffRow {
    let mut row = TradeoffRow {
        capacity,
        tp: 0,
        fp: 0,
        fn_: 0,
        precision: 0.0,
        recall: 0.0,
        latency_min: None,
        latency_mean: None,
        latency_max: None,
    };
    let mut latencies = Vec::new();
    for (s, l) in smoothed.iter().zip(labels) {
        let (tp, fp, fn_, latency) = classify_trace(s, l);
        row.tp += tp as usize;
        row.fp += fp as usize;
        row.fn_ += fn_ as usize;
        if let Some(l) = latency {
            latencies.push(l);
        }
    }
    if row.tp + row.fp > 0 {
        row.precision = row.tp as f64 / (row.tp + row.fp) as f64;
    }
    if row.tp + row.fn_ > 0 {
        row.recall = row.tp as f64 / (row.tp + row.fn_) as f64;
    }
    if !latencies.is_empty() {
        row.latency_min = latencies.iter().min().copied();
        row.latency_max = latencies.iter().max().copied();
        row.latency_mean = Some(latencies.iter().sum::<usize>() as f64 / latencies.len() as f64);
    }
    row
}

/// Sweeps buffer capacities over precomputed per-sample predictions. The
/// recurrent pass runs once per trace; only the smoothing is replayed.
pub fn latency_tradeoff(
    model: &LstmModel<f32>,
    stats: &NormStats,
    traces: &[Trace],
    capacities: &[usize],
) -> Result<Vec<TradeoffRow>> {
    if traces.is_empty() {
        return Err(Error::EmptyInput("no traces to sweep".into()));
    }
    let mut raw_per_trace = Vec::with_capacity(traces.len());
    for trace in traces {
        let (_, records) = stream_detect(model, stats, trace, 1, 0)?;
        raw_per_trace.push(records.iter().map(|r| r.raw).collect::<Vec<bool>>());
    }
    let labels: Vec<&[bool]> = traces.iter().map(|t| t.labels.as_slice()).collect();
    capacities
        .iter()
        .map(|&capacity| {
            let smoothed = raw_per_trace
                .iter()
                .map(|raw| smooth_predictions(raw, capacity))
                .collect::<Result<Vec<_>>>()?;
            Ok(tally_events(capacity, &smoothed, &labels))
        })
        .collect()
}
