//! `xfire eval`: score checkpoints on a dataset split and write reports.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::{Args, ValueEnum};
use xfire_core::dataset::{split_dataset, Partition, Trace};
use xfire_core::detector::{latency_tradeoff, TradeoffRow};
use xfire_core::eval::{
    evaluate_ae_rf, evaluate_cnn, evaluate_lstm, render_report, write_roc_points, EvalReport,
    ReportFormat,
};
use xfire_core::io::read_manifest;
use xfire_core::io::read_trace;
use xfire_core::models::load_checkpoint;
use xfire_core::Error;

use crate::config::{condition_label, RunConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SplitChoice {
    Train,
    Val,
    Test,
}

impl SplitChoice {
    fn partition(self) -> Partition {
        match self {
            SplitChoice::Train => Partition::Train,
            SplitChoice::Val => Partition::Val,
            SplitChoice::Test => Partition::Test,
        }
    }

    fn name(self) -> &'static str {
        match self {
            SplitChoice::Train => "train",
            SplitChoice::Val => "val",
            SplitChoice::Test => "test",
        }
    }
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Model checkpoint; repeat to stack rows into one report.
    #[arg(long = "checkpoint", required = true)]
    pub checkpoints: Vec<PathBuf>,

    /// Dataset directory; either one per checkpoint or a single shared one.
    #[arg(long = "data", required = true)]
    pub data: Vec<PathBuf>,

    /// Which split to score.
    #[arg(long, value_enum, default_value_t = SplitChoice::Test)]
    pub split: SplitChoice,

    /// Permit scoring the training split.
    #[arg(long)]
    pub allow_leakage: bool,

    /// Smoothing-buffer capacity for event metrics (lstm rows only): a
    /// single value, or a sweep like "1..9" or "1,3,5" that adds a latency
    /// trade-off table per lstm row.
    #[arg(long, value_name = "CAPACITIES")]
    pub buffer: Option<String>,
}

pub fn run(config: &RunConfig, out: &Path, args: &EvalArgs) -> anyhow::Result<u8> {
    if args.split == SplitChoice::Train && !args.allow_leakage {
        return Err(Error::LeakageGuard("train".into()).into());
    }
    let data: Vec<&PathBuf> = if args.data.len() == 1 {
        args.checkpoints.iter().map(|_| &args.data[0]).collect()
    } else if args.data.len() == args.checkpoints.len() {
        args.data.iter().collect()
    } else {
        anyhow::bail!(
            "{} checkpoints but {} datasets; pass one --data per checkpoint or a single shared one",
            args.checkpoints.len(),
            args.data.len(),
        );
    };
    let capacities = args
        .buffer
        .as_deref()
        .map(parse_capacities)
        .transpose()?
        .unwrap_or_else(|| vec![config.buffer_capacity]);
    // A single capacity becomes the headline event row; a sweep keeps the
    // configured default as the headline and adds the trade-off table.
    let (capacity, sweep) = if capacities.len() == 1 {
        (capacities[0], None)
    } else {
        (config.buffer_capacity, Some(capacities))
    };

    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let mut report = EvalReport::default();
    let mut roc_written = 0usize;
    let mut tradeoffs_written = 0usize;
    let mut stdout_extra = String::new();

    for (ckpt_path, data_dir) in args.checkpoints.iter().zip(data) {
        let checkpoint = load_checkpoint(ckpt_path)?;
        let manifest = read_manifest(data_dir)?;
        let condition = condition_label(&manifest.scenario);
        if checkpoint.condition != condition {
            return Err(Error::ConditionMismatch {
                checkpoint: checkpoint.condition.clone(),
                dataset: condition,
            }
            .into());
        }
        let stats = checkpoint.require_stats()?;

        let split = split_dataset(manifest.scenario.n_instances, manifest.split_seed)?;
        let indices = split.indices(args.split.partition());
        anyhow::ensure!(
            !indices.is_empty(),
            "the {} split of {} is empty",
            args.split.name(),
            data_dir.display(),
        );
        let traces: Vec<Trace> = indices
            .iter()
            .map(|&i| read_trace(data_dir, i))
            .collect::<xfire_core::Result<_>>()?;

        match checkpoint.architecture() {
            "lstm" => {
                let model = checkpoint.expect_lstm()?;
                let row = evaluate_lstm(model, &traces, &stats, capacity, &condition)?;
                report.rows.push(row);
                if let Some(capacities) = &sweep {
                    let rows = latency_tradeoff(model, &stats, &traces, capacities)?;
                    tradeoffs_written += 1;
                    let path = out.join(suffixed("tradeoff", "csv", tradeoffs_written));
                    fs::write(&path, tradeoff_csv(&rows))
                        .with_context(|| format!("writing {}", path.display()))?;
                    stdout_extra.push_str(&tradeoff_markdown(&condition, &rows));
                }
            }
            "cnn" => {
                let model = checkpoint.expect_cnn()?;
                report
                    .rows
                    .push(evaluate_cnn(model, &traces, &stats, &condition)?);
            }
            "ae_rf" => {
                let (ae, forest) = checkpoint.expect_ae_rf()?;
                let (row, curve) = evaluate_ae_rf(ae, forest, &traces, &stats, &condition)?;
                report.rows.push(row);
                roc_written += 1;
                write_roc_points(
                    &out.join(suffixed("roc_points", "csv", roc_written)),
                    &curve,
                )?;
            }
            other => {
                return Err(Error::InvalidConfig(format!(
                    "a bare {other} checkpoint cannot classify; train rf on top of it"
                ))
                .into())
            }
        }
    }

    let json = render_report(&report, ReportFormat::Json);
    let markdown = render_report(&report, ReportFormat::Markdown);
    fs::write(out.join("report.json"), &json).context("writing report.json")?;
    fs::write(out.join("report.md"), &markdown).context("writing report.md")?;
    write_eval_meta(out, args, capacity)?;

    print!("{markdown}");
    print!("{stdout_extra}");
    println!("wrote report.json and report.md to {}", out.display());
    Ok(0)
}

/// "3..9" (inclusive) or "3,5,7".
fn parse_capacities(expr: &str) -> anyhow::Result<Vec<usize>> {
    let caps: Vec<usize> = if let Some((lo, hi)) = expr.split_once("..") {
        let lo: usize = lo.trim().parse().context("sweep lower bound")?;
        let hi: usize = hi.trim().parse().context("sweep upper bound")?;
        anyhow::ensure!(lo <= hi, "sweep range {lo}..{hi} is empty");
        (lo..=hi).collect()
    } else {
        expr.split(',')
            .map(|s| s.trim().parse::<usize>())
            .collect::<Result<_, _>>()
            .with_context(|| format!("parsing sweep list {expr:?}"))?
    };
    anyhow::ensure!(
        !caps.is_empty() && caps.iter().all(|&c| c >= 1),
        "sweep capacities must be >= 1",
    );
    Ok(caps)
}

/// "name.ext" for the first file of a kind, "name_2.ext" after that.
fn suffixed(name: &str, ext: &str, ordinal: usize) -> String {
    if ordinal <= 1 {
        format!("{name}.{ext}")
    } else {
        format!("{name}_{ordinal}.{ext}")
    }
}

fn tradeoff_csv(rows: &[TradeoffRow]) -> String {
    let mut text =
        String::from("capacity,tp,fp,fn,precision,recall,latency_min,latency_mean,latency_max\n");
    for r in rows {
        text.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            r.capacity,
            r.tp,
            r.fp,
            r.fn_,
            r.precision,
            r.recall,
            r.latency_min.map_or(String::new(), |v| v.to_string()),
            r.latency_mean.map_or(String::new(), |v| v.to_string()),
            r.latency_max.map_or(String::new(), |v| v.to_string()),
        ));
    }
    text
}

fn tradeoff_markdown(condition: &str, rows: &[TradeoffRow]) -> String {
    let mut text = format!("\n## Buffer sweep ({condition})\n\n");
    text.push_str("| capacity | tp | fp | fn | precision | recall | latency min | latency mean | latency max |\n");
    text.push_str("|---|---|---|---|---|---|---|---|---|\n");
    for r in rows {
        text.push_str(&format!(
            "| {} | {} | {} | {} | {:.4} | {:.4} | {} | {} | {} |\n",
            r.capacity,
            r.tp,
            r.fp,
            r.fn_,
            r.precision,
            r.recall,
            r.latency_min.map_or("-".into(), |v| v.to_string()),
            r.latency_mean.map_or("-".into(), |v| format!("{v:.2}")),
            r.latency_max.map_or("-".into(), |v| v.to_string()),
        ));
    }
    text
}

#[derive(serde::Serialize)]
struct EvalMeta {
    tool_version: &'static str,
    split: &'static str,
    buffer_capacity: usize,
    checkpoints: Vec<String>,
    datasets: Vec<String>,
}

fn write_eval_meta(out: &Path, args: &EvalArgs, capacity: usize) -> anyhow::Result<()> {
    let meta = EvalMeta {
        tool_version: env!("CARGO_PKG_VERSION"),
        split: args.split.name(),
        buffer_capacity: capacity,
        checkpoints: args
            .checkpoints
            .iter()
            .map(|p| p.display().to_string())
            .collect(),
        datasets: args.data.iter().map(|p| p.display().to_string()).collect(),
    };
    let path = out.join("eval_meta.json");
    let text = serde_json::to_string_pretty(&meta).expect("meta serializes");
    fs::write(&path, text + "\n").with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sweep_exprs_parse() {
        assert_eq!(parse_capacities("3..6").unwrap(), vec![3, 4, 5, 6]);
        assert_eq!(parse_capacities("1,5,9").unwrap(), vec![1, 5, 9]);
        assert_eq!(parse_capacities("7").unwrap(), vec![7]);
        assert!(parse_capacities("9..3").is_err());
        assert!(parse_capacities("0..2").is_err());
        assert!(parse_capacities("a,b").is_err());
    }

    #[test]
    fn file_suffixes() {
        assert_eq!(suffixed("roc_points", "csv", 1), "roc_points.csv");
        assert_eq!(suffixed("roc_points", "csv", 2), "roc_points_2.csv");
    }
}
