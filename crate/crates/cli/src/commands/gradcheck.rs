//! `xfire gradcheck`: finite-difference audit of every backward pass.

use clap::Args;
use xfire_core::nn::gradcheck::run_layer_suite;

use crate::config::RunConfig;

#[derive(Args, Debug)]
pub struct GradcheckArgs {
    /// Finite-difference trials per layer.
    #[arg(long, default_value_t = 100)]
    pub trials: usize,

    /// Inject a sign fault into this layer's backward pass to prove the
    /// harness catches it. Only `dense` supports injection.
    #[arg(long, value_name = "LAYER")]
    pub corrupt: Option<String>,
}

/// Exit code 0 when every layer passes, 1 otherwise.
pub fn run(config: &RunConfig, args: &GradcheckArgs) -> anyhow::Result<u8> {
    let corrupt = match args.corrupt.as_deref() {
        None => false,
        Some("dense") => true,
        Some(other) => anyhow::bail!("fault injection supports only `dense`, not `{other}`"),
    };
    anyhow::ensure!(args.trials >= 1, "--trials must be at least 1");

    let reports = run_layer_suite(config.scenario.master_seed, args.trials, corrupt);
    println!(
        "{:<22} {:>14} {:>11} {:>8}",
        "layer", "max rel error", "tolerance", "verdict"
    );
    let mut failures = 0usize;
    for report in &reports {
        let verdict = if report.passed() { "PASS" } else { "FAIL" };
        if !report.passed() {
            failures += 1;
        }
        println!(
            "{:<22} {:>14.3e} {:>11.0e} {:>8}",
            report.name, report.max_rel_error, report.tolerance, verdict
        );
    }
    if failures > 0 {
        println!("{failures} layer(s) failed the gradient audit");
        return Ok(1);
    }
    println!(
        "all {} layers passed ({} trials each)",
        reports.len(),
        args.trials
    );
    Ok(0)
}
