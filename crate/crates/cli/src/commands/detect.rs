//! `xfire detect`: stream per-sample decisions over CSV rows of raw
//! per-server utilization.

use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::PathBuf;

use anyhow::Context;
use clap::Args;
use xfire_core::detector::StreamState;
use xfire_core::models::load_checkpoint;

use crate::config::RunConfig;

#[derive(Args, Debug)]
pub struct DetectArgs {
    /// Trained lstm checkpoint.
    #[arg(long)]
    pub checkpoint: PathBuf,

    /// CSV rows of per-server utilization in Kbps, one sample per line;
    /// standard input when omitted.
    #[arg(long)]
    pub input: Option<PathBuf>,

    /// Smoothing-buffer capacity.
    #[arg(long)]
    pub buffer: Option<usize>,
}

/// Exit code 0 when at least one smoothed event fired, 1 when none did.
pub fn run(config: &RunConfig, args: &DetectArgs) -> anyhow::Result<u8> {
    let checkpoint = load_checkpoint(&args.checkpoint)?;
    let model = checkpoint.expect_lstm()?;
    let stats = checkpoint.require_stats()?;
    let capacity = args.buffer.unwrap_or(config.buffer_capacity);
    let width = model.input_width;

    let reader: Box<dyn BufRead> = match &args.input {
        Some(path) => Box::new(BufReader::new(
            File::open(path).with_context(|| format!("opening {}", path.display()))?,
        )),
        None => Box::new(BufReader::new(std::io::stdin())),
    };

    let mut state = StreamState::new(capacity)?;
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    let mut event_fired = false;

    for (lineno, line) in reader.lines().enumerate() {
        let line = line.context("reading input")?;
        let row = match parse_row(&line, width) {
            Ok(row) => row,
            Err(reason) => {
                eprintln!("warning: line {}: {reason}", lineno + 1);
                continue;
            }
        };
        let record = state.step(model, &stats, &row)?;
        writeln!(
            out,
            "{{\"t\":{},\"p\":{},\"raw\":{},\"smoothed\":{}}}",
            record.t, record.p, record.raw as u8, record.smoothed as u8,
        )
        .context("writing decision")?;
        if record.smoothed && !event_fired {
            event_fired = true;
            eprintln!("event: smoothed attack decision at sample {}", record.t);
        }
    }

    Ok(if event_fired { 0 } else { 1 })
}

fn parse_row(line: &str, width: usize) -> Result<Vec<f64>, String> {
    let trimmed = line.trim();
    if trimmed.is_empty() {
        return Err("empty line".into());
    }
    let values: Result<Vec<f64>, _> = trimmed
        .split(',')
        .map(|token| token.trim().parse::<f64>())
        .collect();
    match values {
        Err(e) => Err(format!("not a number: {e}")),
        Ok(v) if v.len() != width => Err(format!("expected {width} values, got {}", v.len())),
        Ok(v) if v.iter().any(|x| !x.is_finite()) => Err("non-finite value".into()),
        Ok(v) => Ok(v),
    }
}
