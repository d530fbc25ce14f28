//! `xfire simulate`: synthesize a dataset directory.

use std::path::Path;

use clap::Args;
use xfire_core::dataset::{split_dataset, Partition};
use xfire_core::io::{self, DatasetManifest, MANIFEST_VERSION};
use xfire_core::sim::{
    compute_minmax_values, draw_server_profiles, synthesize_instance, UtilizationInstance,
};

use crate::config::{condition_label, write_run_meta, RunConfig};

#[derive(Args, Debug)]
pub struct SimulateArgs {
    /// Instance count; overrides --profile and the config file.
    #[arg(long)]
    pub instances: Option<usize>,

    /// How many of the servers the flood targets; defaults to all of them.
    #[arg(long)]
    pub attacked: Option<usize>,

    /// Also dump instance N as a CSV next to the manifest, for inspection.
    #[arg(long, value_name = "N")]
    pub export_csv: Option<usize>,
}

pub fn run(mut config: RunConfig, out: &Path, args: &SimulateArgs) -> anyhow::Result<u8> {
    if let Some(n) = args.instances {
        config.scenario.n_instances = n;
    }
    if let Some(a) = args.attacked {
        config.scenario.n_attacked = a;
    }
    config.scenario.validate()?;

    let scenario = &config.scenario;
    let n = scenario.n_instances;
    let instances = generate_all(scenario, n)?;

    let split = split_dataset(n, scenario.master_seed)?;
    let train_indices = split.indices(Partition::Train);
    let stats = compute_minmax_values(
        train_indices
            .iter()
            .flat_map(|&i| instances[i].values().iter().copied()),
    )?;

    let manifest = DatasetManifest {
        format_version: MANIFEST_VERSION,
        scenario: scenario.clone(),
        split_seed: scenario.master_seed,
        norm_stats: Some(stats.clone()),
        windowing: None,
    };
    io::write_dataset(out, &manifest, &instances)?;
    write_run_meta(out, &config)?;

    if let Some(index) = args.export_csv {
        anyhow::ensure!(index < n, "--export-csv {index} out of range (0..{n})");
        let trace = io::read_trace(out, index)?;
        io::export_csv(&out.join(format!("instance_{index:05}.csv")), &trace)?;
    }

    let val = split.indices(Partition::Val).len();
    let test = split.indices(Partition::Test).len();
    println!(
        "wrote {n} instances to {} ({} servers x {} samples, condition {})",
        out.display(),
        scenario.n_servers,
        scenario.total_len(),
        condition_label(scenario),
    );
    println!(
        "split {} train / {val} val / {test} test (seed {})",
        train_indices.len(),
        scenario.master_seed,
    );
    println!(
        "train-split utilization range [{:.2}, {:.2}] Kbps",
        stats.global_min, stats.global_max,
    );
    Ok(0)
}

/// Synthesizes every instance, in parallel when allowed. Each instance is
/// derived from its own seed, so the thread count never changes the output.
fn generate_all(
    scenario: &xfire_core::sim::ScenarioConfig,
    n: usize,
) -> anyhow::Result<Vec<UtilizationInstance>> {
    let profiles = draw_server_profiles(scenario);
    let threads = generation_threads(n);

    let mut slots: Vec<Option<UtilizationInstance>> = (0..n).map(|_| None).collect();
    if threads <= 1 {
        for (i, slot) in slots.iter_mut().enumerate() {
            *slot = Some(synthesize_instance(scenario, &profiles, i as u64)?);
        }
    } else {
        let results: Vec<xfire_core::Result<Vec<(usize, UtilizationInstance)>>> =
            std::thread::scope(|scope| {
                let handles: Vec<_> = (0..threads)
                    .map(|worker| {
                        let profiles = &profiles;
                        scope.spawn(move || {
                            let mut mine = Vec::new();
                            let mut i = worker;
                            while i < n {
                                mine.push((i, synthesize_instance(scenario, profiles, i as u64)?));
                                i += threads;
                            }
                            Ok(mine)
                        })
                    })
                    .collect();
                handles
                    .into_iter()
                    .map(|h| h.join().expect("generation worker panicked"))
                    .collect()
            });
        for result in results {
            for (i, instance) in result? {
                slots[i] = Some(instance);
            }
        }
    }
    Ok(slots
        .into_iter()
        .map(|slot| slot.expect("every index generated"))
        .collect())
}

/// Worker count: `XFIRE_THREADS` caps the machine's parallelism.
fn generation_threads(n: usize) -> usize {
    let available = std::thread::available_parallelism()
        .map(|v| v.get())
        .unwrap_or(1);
    let cap = std::env::var("XFIRE_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&v| v >= 1)
        .unwrap_or(available);
    cap.min(n).max(1)
}
