//! Synthetic decoy-server traffic: Gaussian background per server plus a
//! ramped flood on the attacked columns.
//!
//! Every instance is a `[pre_len + warmup_len + plateau_len] x [n_servers]`
//! matrix of link utilizations in Kbps, sampled once per minute, with a
//! boolean label per sample that is true exactly during the warm-up ramp.
//! All randomness branches off `(master_seed, instance index, stream tag)`,
//! so any instance can be produced in isolation and generation order can
//! never change a byte.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, stream, StreamTag};

/// Background-traffic parameters of a single decoy server.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ServerProfile {
    /// Kbps, drawn uniform in [100, 150].
    pub mean_rate: f64,
    /// Kbps, drawn uniform in [0.45, 2.45].
    pub std_rate: f64,
}

/// Aggregate flood arriving at one attacked server.
#[derive(Clone, Debug, PartialEq)]
pub struct AttackProfile {
    pub bots_per_server: usize,
    /// Kbps per bot, each in [0.43, 2.2].
    pub bot_rates: Vec<f64>,
    /// Exact sum of `bot_rates`.
    pub peak_rate: f64,
}

/// Everything one scenario needs: sizes, rate ranges, timeline, seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub n_servers: usize,
    pub n_attacked: usize,
    /// Samples of pure background before the ramp starts.
    pub pre_len: usize,
    /// Samples of ramp; labels are true exactly here.
    pub warmup_len: usize,
    /// Samples at full flood after the ramp.
    pub plateau_len: usize,
    pub n_instances: usize,
    pub master_seed: u64,
    /// Bots aimed at one attacked server: uniform integer in
    /// [bots_min, bots_max].
    pub bots_min: usize,
    pub bots_max: usize,
    /// Multiplicative ramp noise, uniform in [-jitter, +jitter].
    pub ramp_jitter: f64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            n_servers: 80,
            n_attacked: 80,
            pre_len: 45,
            warmup_len: 30,
            plateau_len: 45,
            n_instances: 6000,
            master_seed: 7,
            bots_min: 5,
            bots_max: 20,
            ramp_jitter: 0.25,
        }
    }
}

impl ScenarioConfig {
    /// Samples per instance.
    pub fn total_len(&self) -> usize {
        self.pre_len + self.warmup_len + self.plateau_len
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_servers == 0 {
            return Err(Error::InvalidConfig("n_servers must be positive".into()));
        }
        if self.n_attacked > self.n_servers {
            return Err(Error::InvalidConfig(format!(
                "n_attacked ({}) exceeds n_servers ({})",
                self.n_attacked, self.n_servers
            )));
        }
        if self.warmup_len < 1 {
            return Err(Error::InvalidConfig("warmup_len must be >= 1".into()));
        }
        if self.bots_min > self.bots_max || self.bots_min == 0 {
            return Err(Error::InvalidConfig(format!(
                "bot count range [{}, {}] is invalid",
                self.bots_min, self.bots_max
            )));
        }
        if !(0.0..1.0).contains(&self.ramp_jitter) {
            return Err(Error::InvalidConfig(format!(
                "ramp_jitter must be in [0, 1), got {}",
                self.ramp_jitter
            )));
        }
        if self.n_instances == 0 {
            return Err(Error::InvalidConfig("n_instances must be positive".into()));
        }
        Ok(())
    }
}

/// One labeled attack episode.
#[derive(Clone, Debug, PartialEq)]
pub struct UtilizationInstance {
    /// Row-major `[n_samples][n_servers]`, Kbps.
    values: Vec<f64>,
    n_servers: usize,
    /// True exactly for `pre_len <= t < pre_len + warmup_len`.
    pub labels: Vec<bool>,
    /// Sorted attacked server indices.
    pub attacked_set: Vec<usize>,
    /// Peak flood rate per attacked server, parallel to `attacked_set`.
    pub attack_peaks: Vec<f64>,
    pub instance_seed: u64,
}

impl UtilizationInstance {
    pub fn n_samples(&self) -> usize {
        self.labels.len()
    }

    pub fn n_servers(&self) -> usize {
        self.n_servers
    }

    /// Utilization at sample `t`, server `s`.
    pub fn value(&self, t: usize, s: usize) -> f64 {
        self.values[t * self.n_servers + s]
    }

    /// One sample across all servers.
    pub fn row(&self, t: usize) -> &[f64] {
        &self.values[t * self.n_servers..(t + 1) * self.n_servers]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Global min/max used to map utilizations into [0, 1].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub global_min: f64,
    pub global_max: f64,
}

impl NormStats {
    pub fn normalize_value(&self, v: f64) -> f64 {
        (v - self.global_min) / (self.global_max - self.global_min)
    }

    pub fn denormalize_value(&self, v: f64) -> f64 {
        v * (self.global_max - self.global_min) + self.global_min
    }
}

/// Draws the per-server background profiles for a scenario. One fixed set
/// of servers is monitored across all of a scenario's instances.
pub fn draw_server_profiles(config: &ScenarioConfig) -> Vec<ServerProfile> {
    let mut rng = stream(config.master_seed, 0, StreamTag::ServerProfiles);
    (0..config.n_servers)
        .map(|_| ServerProfile {
            mean_rate: rng.random_range(100.0..=150.0),
            std_rate: rng.random_range(0.45..=2.45),
        })
        .collect()
}

/// `n` Gaussian draws around the profile, clamped at zero from below.
pub fn sample_background<R: Rng>(profile: &ServerProfile, n: usize, rng: &mut R) -> Vec<f64> {
    let normal =
        Normal::new(profile.mean_rate, profile.std_rate).expect("std_rate > 0 by construction");
    (0..n).map(|_| normal.sample(rng).max(0.0)).collect()
}

/// Draws the flood aimed at one attacked server.
pub fn draw_attack_profile<R: Rng>(config: &ScenarioConfig, rng: &mut R) -> AttackProfile {
    let bots = rng.random_range(config.bots_min..=config.bots_max);
    let bot_rates: Vec<f64> = (0..bots).map(|_| rng.random_range(0.43..=2.2)).collect();
    let peak_rate = bot_rates.iter().sum();
    AttackProfile {
        bots_per_server: bots,
        bot_rates,
        peak_rate,
    }
}

/// Linear ramp to `peak_rate` with multiplicative jitter.
///
/// Value `k` is `(k+1)/warmup_len * peak * (1 + u_k)` with `u_k` uniform in
/// `[-jitter, +jitter]`, clamped into `[0, peak]`; the final value is forced
/// to exactly `peak_rate` so the plateau joins without a step.
pub fn attack_ramp<R: Rng>(
    profile: &AttackProfile,
    warmup_len: usize,
    jitter: f64,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if warmup_len == 0 {
        return Err(Error::InvalidConfig("warmup_len must be >= 1".into()));
    }
    if !(0.0..1.0).contains(&jitter) {
        return Err(Error::InvalidConfig(format!(
            "jitter must be in [0, 1), got {jitter}"
        )));
    }
    let peak = profile.peak_rate;
    let mut out = Vec::with_capacity(warmup_len);
    for k in 0..warmup_len {
        let u = if jitter > 0.0 {
            rng.random_range(-jitter..=jitter)
        } else {
            0.0
        };
        let base = (k + 1) as f64 / warmup_len as f64 * peak;
        let v = if k + 1 == warmup_len {
            peak
        } else {
            (base * (1.0 + u)).clamp(0.0, peak)
        };
        out.push(v);
    }
    Ok(out)
}

/// Builds instance `index` of the scenario. Pure function of
/// `(config, profiles, index)`: every random stream is derived from the
/// master seed and the index, so instances can be generated in any order,
/// in parallel, or alone.
pub fn synthesize_instance(
    config: &ScenarioConfig,
    profiles: &[ServerProfile],
    index: u64,
) -> Result<UtilizationInstance> {
    config.validate()?;
    if profiles.len() != config.n_servers {
        return Err(Error::InvalidConfig(format!(
            "{} profiles for {} servers",
            profiles.len(),
            config.n_servers
        )));
    }
    let total = config.total_len();
    let master = config.master_seed;

    let mut attacked_set = rand::seq::index::sample(
        &mut stream(master, index, StreamTag::AttackedSet),
        config.n_servers,
        config.n_attacked,
    )
    .into_vec();
    attacked_set.sort_unstable();

    let mut values = vec![0.0_f64; total * config.n_servers];
    let mut bg_rng = stream(master, index, StreamTag::Background);
    for (s, profile) in profiles.iter().enumerate() {
        let series = sample_background(profile, total, &mut bg_rng);
        for (t, v) in series.into_iter().enumerate() {
            values[t * config.n_servers + s] = v;
        }
    }

    let mut atk_rng = stream(master, index, StreamTag::AttackProfile);
    let mut ramp_rng = stream(master, index, StreamTag::RampJitter);
    let mut attack_peaks = Vec::with_capacity(attacked_set.len());
    for &s in &attacked_set {
        let attack = draw_attack_profile(config, &mut atk_rng);
        let ramp = attack_ramp(
            &attack,
            config.warmup_len,
            config.ramp_jitter,
            &mut ramp_rng,
        )?;
        for (k, add) in ramp.into_iter().enumerate() {
            values[(config.pre_len + k) * config.n_servers + s] += add;
        }
        for t in config.pre_len + config.warmup_len..total {
            values[t * config.n_servers + s] += attack.peak_rate;
        }
        attack_peaks.push(attack.peak_rate);
    }

    let labels = (0..total)
        .map(|t| t >= config.pre_len && t < config.pre_len + config.warmup_len)
        .collect();

    Ok(UtilizationInstance {
        values,
        n_servers: config.n_servers,
        labels,
        attacked_set,
        attack_peaks,
        instance_seed: rng::instance_seed(master, index),
    })
}

/// All `n_instances` episodes of a scenario, in index order.
pub fn synthesize_dataset(config: &ScenarioConfig) -> Result<Vec<UtilizationInstance>> {
    config.validate()?;
    let profiles = draw_server_profiles(config);
    (0..config.n_instances as u64)
        .map(|i| synthesize_instance(config, &profiles, i))
        .collect()
}

/// Global min/max over every value of the given (training) instances.
pub fn compute_minmax(instances: &[UtilizationInstance]) -> Result<NormStats> {
    compute_minmax_values(instances.iter().flat_map(|i| i.values().iter().copied()))
}

/// Min/max over a raw value stream; shared by the in-memory and the
/// on-disk dataset paths.
pub fn compute_minmax_values(values: impl Iterator<Item = f64>) -> Result<NormStats> {
    let mut min = f64::INFINITY;
    let mut max = f64::NEG_INFINITY;
    let mut any = false;
    for v in values {
        any = true;
        min = min.min(v);
        max = max.max(v);
    }
    if !any {
        return Err(Error::EmptyInput("compute_minmax over no values".into()));
    }
    if min >= max {
        return Err(Error::DegenerateStats { min, max });
    }
    Ok(NormStats {
        global_min: min,
        global_max: max,
    })
}

/// Maps every value by `(v - min) / (max - min)`. Values outside the stats
/// range leave [0, 1] and are deliberately not clamped.
pub fn normalize(instance: &UtilizationInstance, stats: &NormStats) -> UtilizationInstance {
    let mut out = instance.clone();
    for v in &mut out.values {
        *v = stats.normalize_value(*v);
    }
    out
}

/// Inverse of [`normalize`].
pub fn denormalize(instance: &UtilizationInstance, stats: &NormStats) -> UtilizationInstance {
    let mut out = instance.clone();
    for v in &mut out.values {
        *v = stats.denormalize_value(*v);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config() -> ScenarioConfig {
        ScenarioConfig {
            n_servers: 8,
            n_attacked: 6,
            pre_len: 10,
            warmup_len: 6,
            plateau_len: 10,
            n_instances: 4,
            master_seed: 99,
            ..ScenarioConfig::default()
        }
    }

    #[test]
    fn profiles_stay_in_documented_ranges() {
        let config = ScenarioConfig::default();
        let profiles = draw_server_profiles(&config);
        assert_eq!(profiles.len(), 80);
        for p in &profiles {
            assert!((100.0..=150.0).contains(&p.mean_rate));
            assert!((0.45..=2.45).contains(&p.std_rate));
        }
    }

    #[test]
    fn profiles_are_deterministic() {
        let config = ScenarioConfig::default();
        assert_eq!(draw_server_profiles(&config), draw_server_profiles(&config));
    }

    #[test]
    fn mean_of_many_profile_means_is_near_midpoint() {
        // Law of large numbers over U[100, 150]: 10000 draws put the
        // empirical mean within 1 of 125 (sigma/sqrt(n) ≈ 0.14).
        let config = ScenarioConfig {
            n_servers: 10_000,
            n_attacked: 0,
            ..ScenarioConfig::default()
        };
        let profiles = draw_server_profiles(&config);
        let mean: f64 = profiles.iter().map(|p| p.mean_rate).sum::<f64>() / 10_000.0;
        assert!((mean - 125.0).abs() < 1.0, "mean of means {mean}");
    }

    #[test]
    fn near_zero_std_collapses_to_mean() {
        let profile = ServerProfile {
            mean_rate: 125.0,
            std_rate: 1e-9,
        };
        let mut rng = stream(1, 0, StreamTag::Background);
        for v in sample_background(&profile, 50, &mut rng) {
            assert!((v - 125.0).abs() < 1e-6);
        }
    }

    #[test]
    fn background_matches_requested_moments() {
        let profile = ServerProfile {
            mean_rate: 125.0,
            std_rate: 2.0,
        };
        let mut rng = stream(2, 0, StreamTag::Background);
        let xs = sample_background(&profile, 100_000, &mut rng);
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        let std = (xs.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / xs.len() as f64).sqrt();
        assert!((mean - 125.0).abs() < 0.05, "sample mean {mean}");
        assert!((std - 2.0).abs() < 0.05, "sample std {std}");
    }

    #[test]
    fn background_is_nonnegative_even_at_widest_spread() {
        let profile = ServerProfile {
            mean_rate: 100.0,
            std_rate: 2.45,
        };
        let mut rng = stream(3, 0, StreamTag::Background);
        let xs = sample_background(&profile, 30, &mut rng);
        assert_eq!(xs.len(), 30);
        assert!(xs.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn attack_profile_respects_bot_rate_range_and_sum() {
        let config = ScenarioConfig::default();
        let mut rng = stream(4, 0, StreamTag::AttackProfile);
        for _ in 0..100 {
            let a = draw_attack_profile(&config, &mut rng);
            assert!((5..=20).contains(&a.bots_per_server));
            assert_eq!(a.bot_rates.len(), a.bots_per_server);
            assert!(a.bot_rates.iter().all(|r| (0.43..=2.2).contains(r)));
            assert_eq!(a.peak_rate, a.bot_rates.iter().sum::<f64>());
        }
    }

    #[test]
    fn unjittered_ramp_is_exactly_linear() {
        let profile = AttackProfile {
            bots_per_server: 1,
            bot_rates: vec![10.0],
            peak_rate: 10.0,
        };
        let mut rng = stream(5, 0, StreamTag::RampJitter);
        let ramp = attack_ramp(&profile, 30, 0.0, &mut rng).unwrap();
        assert_eq!(ramp.len(), 30);
        assert_eq!(ramp[14], 5.0);
        assert_eq!(ramp[29], 10.0);
    }

    #[test]
    fn ramp_rejects_zero_length() {
        let profile = AttackProfile {
            bots_per_server: 1,
            bot_rates: vec![1.0],
            peak_rate: 1.0,
        };
        let mut rng = stream(6, 0, StreamTag::RampJitter);
        assert!(attack_ramp(&profile, 0, 0.1, &mut rng).is_err());
    }

    #[test]
    fn jittered_ramp_has_positive_regression_slope() {
        let profile = AttackProfile {
            bots_per_server: 1,
            bot_rates: vec![8.0],
            peak_rate: 8.0,
        };
        for seed in 0..20 {
            let mut rng = stream(seed, 0, StreamTag::RampJitter);
            let ramp = attack_ramp(&profile, 30, 0.2, &mut rng).unwrap();
            // Least-squares slope of value over step index.
            let n = ramp.len() as f64;
            let mean_x = (n - 1.0) / 2.0;
            let mean_y = ramp.iter().sum::<f64>() / n;
            let mut num = 0.0;
            let mut den = 0.0;
            for (k, &y) in ramp.iter().enumerate() {
                num += (k as f64 - mean_x) * (y - mean_y);
                den += (k as f64 - mean_x).powi(2);
            }
            assert!(num / den > 0.0, "seed {seed} slope {}", num / den);
        }
    }

    #[test]
    fn instance_with_no_attack_is_labeled_but_clean() {
        let config = ScenarioConfig {
            n_attacked: 0,
            ..small_config()
        };
        let profiles = draw_server_profiles(&config);
        let inst = synthesize_instance(&config, &profiles, 0).unwrap();
        assert!(inst.attacked_set.is_empty());
        // Labels still mark the warm-up window.
        for t in 0..inst.n_samples() {
            assert_eq!(inst.labels[t], (10..16).contains(&t));
        }
        // No column ever exceeds background plausibility: means stay near
        // their profiles instead of climbing by a peak rate.
        for s in 0..config.n_servers {
            let plateau_mean: f64 = (16..26).map(|t| inst.value(t, s)).sum::<f64>() / 10.0;
            assert!((plateau_mean - profiles[s].mean_rate).abs() < 4.0 * profiles[s].std_rate);
        }
    }

    #[test]
    fn attacked_set_has_exact_size_and_redraws_per_instance() {
        let config = ScenarioConfig {
            n_attacked: 70,
            ..ScenarioConfig::default()
        };
        let profiles = draw_server_profiles(&config);
        let a = synthesize_instance(&config, &profiles, 0).unwrap();
        let b = synthesize_instance(&config, &profiles, 1).unwrap();
        assert_eq!(a.attacked_set.len(), 70);
        assert_eq!(b.attacked_set.len(), 70);
        assert!(
            a.attacked_set.windows(2).all(|w| w[0] < w[1]),
            "sorted, unique"
        );
        assert_ne!(
            a.attacked_set, b.attacked_set,
            "independent draw per instance"
        );
    }

    #[test]
    fn plateau_mean_of_attacked_column_is_background_plus_peak() {
        let config = ScenarioConfig {
            plateau_len: 45,
            ..small_config()
        };
        let profiles = draw_server_profiles(&config);
        let inst = synthesize_instance(&config, &profiles, 2).unwrap();
        let plateau_start = config.pre_len + config.warmup_len;
        for (i, &s) in inst.attacked_set.iter().enumerate() {
            let mean: f64 = (plateau_start..config.total_len())
                .map(|t| inst.value(t, s))
                .sum::<f64>()
                / config.plateau_len as f64;
            let expect = profiles[s].mean_rate + inst.attack_peaks[i];
            let tol = 3.0 * profiles[s].std_rate / (config.plateau_len as f64).sqrt();
            assert!(
                (mean - expect).abs() < tol,
                "server {s}: plateau mean {mean}, expected {expect} ± {tol}"
            );
        }
    }

    #[test]
    fn dataset_has_requested_cardinality() {
        // Full instance count with a shrunken timeline to keep this cheap.
        let config = ScenarioConfig {
            n_servers: 4,
            n_attacked: 3,
            pre_len: 2,
            warmup_len: 3,
            plateau_len: 2,
            n_instances: 6000,
            ..ScenarioConfig::default()
        };
        let data = synthesize_dataset(&config).unwrap();
        assert_eq!(data.len(), 6000);
    }

    #[test]
    fn same_master_seed_reproduces_identical_values() {
        let config = small_config();
        let a = synthesize_dataset(&config).unwrap();
        let b = synthesize_dataset(&config).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn generation_order_does_not_matter() {
        let config = small_config();
        let profiles = draw_server_profiles(&config);
        let forward: Vec<_> = (0..4)
            .map(|i| synthesize_instance(&config, &profiles, i).unwrap())
            .collect();
        let mut reversed: Vec<_> = (0..4)
            .rev()
            .map(|i| synthesize_instance(&config, &profiles, i).unwrap())
            .collect();
        reversed.reverse();
        assert_eq!(forward, reversed);
    }

    #[test]
    fn labels_flag_exactly_the_warmup_window() {
        let config = small_config();
        let data = synthesize_dataset(&config).unwrap();
        for inst in &data {
            for t in 0..inst.n_samples() {
                let expect = t >= config.pre_len && t < config.pre_len + config.warmup_len;
                assert_eq!(inst.labels[t], expect, "t = {t}");
            }
        }
    }

    #[test]
    fn minmax_finds_exact_extremes() {
        let config = small_config();
        let profiles = draw_server_profiles(&config);
        let mut inst = synthesize_instance(&config, &profiles, 0).unwrap();
        inst.values[0] = 99.1;
        inst.values[7] = 160.4;
        for v in inst.values.iter_mut().skip(8) {
            *v = v.clamp(100.0, 160.0);
        }
        let stats = compute_minmax(std::slice::from_ref(&inst)).unwrap();
        assert_eq!(stats.global_min, 99.1);
        assert_eq!(stats.global_max, 160.4);
    }

    #[test]
    fn minmax_rejects_empty_and_degenerate_inputs() {
        assert!(matches!(compute_minmax(&[]), Err(Error::EmptyInput(_))));
        assert!(matches!(
            compute_minmax_values([5.0, 5.0, 5.0].into_iter()),
            Err(Error::DegenerateStats { .. })
        ));
    }

    #[test]
    fn normalize_maps_extremes_to_unit_interval() {
        let stats = NormStats {
            global_min: 99.1,
            global_max: 160.4,
        };
        assert_eq!(stats.normalize_value(99.1), 0.0);
        assert_eq!(stats.normalize_value(160.4), 1.0);
    }

    #[test]
    fn normalize_roundtrip_is_tight() {
        let config = small_config();
        let profiles = draw_server_profiles(&config);
        let inst = synthesize_instance(&config, &profiles, 1).unwrap();
        let stats = compute_minmax(std::slice::from_ref(&inst)).unwrap();
        let back = denormalize(&normalize(&inst, &stats), &stats);
        for (a, b) in inst.values().iter().zip(back.values()) {
            assert!((a - b).abs() <= 1e-9 * a.abs().max(1.0), "{a} vs {b}");
        }
    }

    #[test]
    fn out_of_split_values_may_leave_unit_interval() {
        let stats = NormStats {
            global_min: 100.0,
            global_max: 150.0,
        };
        // A test-split value above the training max keeps its overshoot.
        assert!(stats.normalize_value(160.0) > 1.0);
        assert!(stats.normalize_value(90.0) < 0.0);
    }

    #[test]
    fn ramp_always_ends_exactly_at_peak() {
        for seed in 0..50 {
            let mut rng = stream(seed, 3, StreamTag::RampJitter);
            let profile = AttackProfile {
                bots_per_server: 2,
                bot_rates: vec![1.1, 2.2],
                peak_rate: 3.3000000000000003,
            };
            let jitter = (seed as f64) / 60.0; // spans [0, ~0.82)
            let len = 1 + (seed as usize % 40);
            let ramp = attack_ramp(&profile, len, jitter, &mut rng).unwrap();
            assert_eq!(*ramp.last().unwrap(), profile.peak_rate);
            assert!(ramp.iter().all(|&v| (0.0..=profile.peak_rate).contains(&v)));
        }
    }

    #[test]
    fn non_attacked_columns_look_like_fresh_background() {
        // Two-sample Kolmogorov–Smirnov at alpha = 0.01: the attacked-set
        // bookkeeping must leave untouched columns statistically identical
        // to background. 100 column trials, >= 95 must pass.
        let config = ScenarioConfig {
            n_servers: 8,
            n_attacked: 4,
            pre_len: 40,
            warmup_len: 30,
            plateau_len: 50,
            n_instances: 1,
            master_seed: 424242,
            ..ScenarioConfig::default()
        };
        let profiles = draw_server_profiles(&config);
        let total = config.total_len();
        let mut passes = 0;
        let mut trials = 0;
        let mut fresh_rng = stream(config.master_seed ^ 0x00D1_5C0B, 0, StreamTag::Background);
        'outer: for index in 0.. {
            let inst = synthesize_instance(&config, &profiles, index).unwrap();
            for s in 0..config.n_servers {
                if inst.attacked_set.contains(&s) {
                    continue;
                }
                let col: Vec<f64> = (0..total).map(|t| inst.value(t, s)).collect();
                let fresh = sample_background(&profiles[s], total, &mut fresh_rng);
                if ks_two_sample_passes(&col, &fresh, 1.628) {
                    passes += 1;
                }
                trials += 1;
                if trials == 100 {
                    break 'outer;
                }
            }
        }
        assert!(passes >= 95, "{passes}/100 columns passed the KS test");
    }

    /// Two-sample KS: true iff D < c * sqrt((n+m)/(n*m)).
    fn ks_two_sample_passes(a: &[f64], b: &[f64], c: f64) -> bool {
        let mut a = a.to_vec();
        let mut b = b.to_vec();
        a.sort_by(|x, y| x.partial_cmp(y).unwrap());
        b.sort_by(|x, y| x.partial_cmp(y).unwrap());
        let (n, m) = (a.len(), b.len());
        let (mut i, mut j) = (0, 0);
        let mut d: f64 = 0.0;
        while i < n && j < m {
            if a[i] <= b[j] {
                i += 1;
            } else {
                j += 1;
            }
            d = d.max((i as f64 / n as f64 - j as f64 / m as f64).abs());
        }
        d < c * (((n + m) as f64) / ((n * m) as f64)).sqrt()
    }
}
