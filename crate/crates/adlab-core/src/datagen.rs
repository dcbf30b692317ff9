//! Synthetic patch dataset: generation, test-distribution sampling, and the
//! concentration checks that the dichotomy analysis conditions on.
//!
//! Every sample is a `P x d` stack of patches. Exactly one patch (the signal
//! patch) is `alpha * y * e_1` for learnable samples or `alpha * y * e_d` for
//! unlearnable ones; every other patch is Gaussian noise supported on the
//! `d - 2` coordinates orthogonal to both feature directions, so coordinates
//! `1` and `d` of a noise patch are exactly zero.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::network::StudentWeights;

/// Parameters of the synthetic data model.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SyntheticConfig {
    /// Patch dimension; needs coordinates 1, d and at least one noise direction.
    pub d: usize,
    /// Number of training samples.
    pub n: usize,
    /// Patches per sample.
    pub p: usize,
    /// Signal strength.
    pub alpha: f64,
    /// Noise standard deviation per free coordinate.
    pub sigma_n: f64,
    /// Fraction of unlearnable samples.
    pub p_un: f64,
    /// RNG seed for dataset generation.
    pub seed: u64,
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d < 3 {
            return Err(Error::InvalidConfig(alloc::format!("d must be >= 3, got {}", self.d)));
        }
        if self.n == 0 {
            return Err(Error::InvalidConfig(String::from("n must be >= 1")));
        }
        if self.p < 2 {
            return Err(Error::InvalidConfig(alloc::format!("p must be >= 2, got {}", self.p)));
        }
        if !(self.alpha > 0.0) {
            return Err(Error::InvalidConfig(alloc::format!("alpha must be > 0, got {}", self.alpha)));
        }
        if !(self.sigma_n > 0.0) {
            return Err(Error::InvalidConfig(alloc::format!("sigma_n must be > 0, got {}", self.sigma_n)));
        }
        if !(0.0..=1.0).contains(&self.p_un) {
            return Err(Error::InvalidConfig(alloc::format!("p_un must be in [0,1], got {}", self.p_un)));
        }
        Ok(())
    }

    /// Number of unlearnable samples: `round(p_un * n)`, ties rounded up.
    pub fn unlearnable_count(&self) -> usize {
        libm::floor(self.p_un * self.n as f64 + 0.5) as usize
    }
}

/// One training or test sample.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Sample {
    /// `p x d` patch matrix, row-major.
    pub patches: Vec<f64>,
    /// Label in `{+1, -1}`.
    pub label: f64,
    /// Index of the signal patch.
    pub signal_index: usize,
    /// Whether the signal lies along the learnable direction `e_1`.
    pub learnable: bool,
    /// Patches per sample.
    pub p: usize,
    /// Patch dimension.
    pub d: usize,
}

impl Sample {
    pub fn patch(&self, p: usize) -> &[f64] {
        &self.patches[p * self.d..(p + 1) * self.d]
    }

    pub fn patch_mut(&mut self, p: usize) -> &mut [f64] {
        &mut self.patches[p * self.d..(p + 1) * self.d]
    }

    /// Indices of the non-signal (noise) patches.
    pub fn noise_patches(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.p).filter(move |&j| j != self.signal_index)
    }

    /// Coordinate index of the signal direction (`0` for `e_1`, `d-1` for `e_d`).
    pub fn signal_coordinate(&self) -> usize {
        if self.learnable {
            0
        } else {
            self.d - 1
        }
    }
}

/// A generated training dataset together with its ground-truth partition.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Dataset {
    pub config: SyntheticConfig,
    pub samples: Vec<Sample>,
    /// Sorted indices of learnable samples.
    pub learnable_indices: Vec<usize>,
    /// Sorted indices of unlearnable samples.
    pub unlearnable_indices: Vec<usize>,
}

impl Dataset {
    pub fn n(&self) -> usize {
        self.samples.len()
    }
}

fn fill_noise_patch(rng: &mut ChaCha8Rng, patch: &mut [f64], sigma_n: f64) {
    let d = patch.len();
    for v in patch.iter_mut() {
        let g: f64 = rng.sample(StandardNormal);
        *v = sigma_n * g;
    }
    // projection onto the complement of span{e_1, e_d}
    patch[0] = 0.0;
    patch[d - 1] = 0.0;
}

fn draw_sample(rng: &mut ChaCha8Rng, cfg: &SyntheticConfig, learnable: bool) -> Sample {
    let (p, d) = (cfg.p, cfg.d);
    let label = if rng.random::<bool>() { 1.0 } else { -1.0 };
    let signal_index = rng.random_range(0..p);
    let mut patches = vec![0.0; p * d];
    for j in 0..p {
        if j == signal_index {
            let coord = if learnable { 0 } else { d - 1 };
            patches[j * d + coord] = cfg.alpha * label;
        } else {
            fill_noise_patch(rng, &mut patches[j * d..(j + 1) * d], cfg.sigma_n);
        }
    }
    Sample { patches, label, signal_index, learnable, p, d }
}

/// Generate the training dataset. Deterministic given `config.seed`.
///
/// The unlearnable set is the first `round(p_un * n)` indices of a seeded
/// shuffle of `[n]`, so unlearnability is not correlated with sample index.
pub fn generate_dataset(config: &SyntheticConfig) -> Result<Dataset> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let n = config.n;
    let n_un = config.unlearnable_count();

    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rng);
    let mut is_unlearnable = vec![false; n];
    for &i in perm.iter().take(n_un) {
        is_unlearnable[i] = true;
    }

    let samples: Vec<Sample> =
        (0..n).map(|i| draw_sample(&mut rng, config, !is_unlearnable[i])).collect();

    let learnable_indices: Vec<usize> = (0..n).filter(|&i| !is_unlearnable[i]).collect();
    let unlearnable_indices: Vec<usize> = (0..n).filter(|&i| is_unlearnable[i]).collect();

    Ok(Dataset { config: config.clone(), samples, learnable_indices, unlearnable_indices })
}

/// Sample `count` fresh learnable samples (the test distribution).
///
/// Noise is drawn from an independent stream keyed by `seed`, so test data
/// never overlaps the training randomness.
pub fn sample_test_learnable(config: &SyntheticConfig, count: usize, seed: u64) -> Result<Vec<Sample>> {
    config.validate()?;
    if count == 0 {
        return Err(Error::InvalidConfig(String::from("test sample count must be >= 1")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..count).map(|_| draw_sample(&mut rng, config, true)).collect())
}

/// Which side of a bound a reported worst case refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum BoundSide {
    Lower,
    Upper,
}

/// Outcome of one concentration property.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PropertyCheck {
    pub name: &'static str,
    pub description: &'static str,
    pub pass: bool,
    /// Worst-case measured value on the binding side.
    pub worst: f64,
    /// Threshold the worst case is compared against.
    pub threshold: f64,
    pub side: BoundSide,
}

impl PropertyCheck {
    fn one_sided_upper(
        name: &'static str,
        description: &'static str,
        worst: f64,
        threshold: f64,
    ) -> Self {
        PropertyCheck { name, description, pass: worst <= threshold, worst, threshold, side: BoundSide::Upper }
    }

    /// Build a two-sided check, reporting whichever side is binding
    /// (violated, or closest to violation in relative terms).
    fn two_sided(
        name: &'static str,
        description: &'static str,
        worst_low: f64,
        thr_low: f64,
        worst_high: f64,
        thr_high: f64,
    ) -> Self {
        let low_ok = worst_low >= thr_low;
        let high_ok = worst_high <= thr_high;
        let pass = low_ok && high_ok;
        // relative slack; negative when violated
        let slack_low = (worst_low - thr_low) / thr_low.abs().max(f64::MIN_POSITIVE);
        let slack_high = (thr_high - worst_high) / thr_high.abs().max(f64::MIN_POSITIVE);
        let (worst, threshold, side) = if slack_low <= slack_high {
            (worst_low, thr_low, BoundSide::Lower)
        } else {
            (worst_high, thr_high, BoundSide::Upper)
        };
        PropertyCheck { name, description, pass, worst, threshold, side }
    }
}

/// Report of the eight concentration properties, evaluated literally against
/// their stated inequalities at failure budget `delta`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EventEReport {
    pub delta: f64,
    pub sigma_0: f64,
    pub properties: Vec<PropertyCheck>,
}

impl EventEReport {
    /// True when every property holds.
    pub fn all_pass(&self) -> bool {
        self.properties.iter().all(|p| p.pass)
    }
}

/// Evaluate the concentration event on a dataset and its initial weights.
///
/// The report is informational: runs proceed even when a property fails, the
/// report is simply attached to the run's metadata.
pub fn check_event_e(
    dataset: &Dataset,
    init_weights: &StudentWeights,
    sigma_0: f64,
    delta: f64,
) -> Result<EventEReport> {
    let cfg = &dataset.config;
    let (d, n, p) = (cfg.d, dataset.n(), cfg.p);
    if init_weights.d != d {
        return Err(Error::ShapeMismatch { expected: (init_weights.m, d), got: (init_weights.m, init_weights.d) });
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::InvalidConfig(alloc::format!("delta must be in (0,1), got {delta}")));
    }
    let m = init_weights.m;
    let sn2 = cfg.sigma_n * cfg.sigma_n;
    let df = d as f64;
    let ln = |x: f64| libm::log(x);
    let sqrt = |x: f64| libm::sqrt(x);

    // Collect noise patches as (sample, patch) index pairs once.
    let noise: Vec<(usize, usize)> = dataset
        .samples
        .iter()
        .enumerate()
        .flat_map(|(i, s)| s.noise_patches().map(move |j| (i, j)))
        .collect();

    // P1: 1/2 sigma_n^2 d <= ||x||^2 <= 3/2 sigma_n^2 d
    let mut min_norm2 = f64::INFINITY;
    let mut max_norm2 = f64::NEG_INFINITY;
    for &(i, j) in &noise {
        let x = dataset.samples[i].patch(j);
        let nrm2: f64 = x.iter().map(|v| v * v).sum();
        min_norm2 = min_norm2.min(nrm2);
        max_norm2 = max_norm2.max(nrm2);
    }
    let p1 = PropertyCheck::two_sided(
        "P1",
        "noise patch squared norms within [1/2, 3/2] sigma_n^2 d",
        min_norm2,
        0.5 * sn2 * df,
        max_norm2,
        1.5 * sn2 * df,
    );

    // P2: |<x_ij, x_kq>| <= 2 sigma_n^2 sqrt(d ln(16 N^2 P^2 / delta))
    let thr2 = 2.0 * sn2 * sqrt(df * ln(16.0 * (n * n * p * p) as f64 / delta));
    let mut worst2 = 0.0_f64;
    for a in 0..noise.len() {
        let xa = dataset.samples[noise[a].0].patch(noise[a].1);
        for b in (a + 1)..noise.len() {
            let xb = dataset.samples[noise[b].0].patch(noise[b].1);
            let dot: f64 = xa.iter().zip(xb).map(|(u, v)| u * v).sum();
            worst2 = worst2.max(dot.abs());
        }
    }
    let p2 = PropertyCheck::one_sided_upper("P2", "pairwise noise correlations", worst2, thr2);

    // P3: ||x||_inf <= sigma_n sqrt(2 ln(16 d N P / delta))
    let thr3 = cfg.sigma_n * sqrt(2.0 * ln(16.0 * (d * n * p) as f64 / delta));
    let worst3 = noise
        .iter()
        .flat_map(|&(i, j)| dataset.samples[i].patch(j).iter().map(|v| v.abs()))
        .fold(0.0_f64, f64::max);
    let p3 = PropertyCheck::one_sided_upper("P3", "noise patch l-inf norms", worst3, thr3);

    // P4: ||w_r|| <= 2 sigma_0 sqrt(d)
    let worst4 = (0..m)
        .map(|r| sqrt(init_weights.row(r).iter().map(|v| v * v).sum()))
        .fold(0.0_f64, f64::max);
    let p4 = PropertyCheck::one_sided_upper(
        "P4",
        "initial filter norms",
        worst4,
        2.0 * sigma_0 * sqrt(df),
    );

    // P5: |<w_r, e_1>| <= sigma_0 sqrt(2 ln(16 m / delta))
    let thr5 = sigma_0 * sqrt(2.0 * ln(16.0 * m as f64 / delta));
    let worst5 = (0..m).map(|r| init_weights.row(r)[0].abs()).fold(0.0_f64, f64::max);
    let p5 = PropertyCheck::one_sided_upper("P5", "initial signal alignments", worst5, thr5);

    // P6: |<w_r, x_ij>| <= 2 sigma_0 sigma_n sqrt(d ln(16 N m P / delta))
    let thr6 = 2.0 * sigma_0 * cfg.sigma_n * sqrt(df * ln(16.0 * (n * m * p) as f64 / delta));
    let mut worst6 = 0.0_f64;
    // P8 needs the per-patch max over filters of y <w_r, x>; compute together.
    let mut min_max_aligned = f64::INFINITY;
    let mut max_max_aligned = f64::NEG_INFINITY;
    for &(i, j) in &noise {
        let s = &dataset.samples[i];
        let x = s.patch(j);
        let mut best = f64::NEG_INFINITY;
        for r in 0..m {
            let ip: f64 = init_weights.row(r).iter().zip(x).map(|(u, v)| u * v).sum();
            worst6 = worst6.max(ip.abs());
            best = best.max(s.label * ip);
        }
        min_max_aligned = min_max_aligned.min(best);
        max_max_aligned = max_max_aligned.max(best);
    }
    let p6 = PropertyCheck::one_sided_upper("P6", "initial noise responses", worst6, thr6);

    // P7: 1/2 sigma_0 <= max_r <w_r, e_1> <= sigma_0 sqrt(2 ln(16 m / delta))
    let max_signal = (0..m).map(|r| init_weights.row(r)[0]).fold(f64::NEG_INFINITY, f64::max);
    let p7 = PropertyCheck::two_sided(
        "P7",
        "maximum initial signal margin",
        max_signal,
        0.5 * sigma_0,
        max_signal,
        thr5,
    );

    // P8: 1/4 sigma_0 sigma_n sqrt(d) <= max_r y <w_r, x_ij> <= thr6, per patch
    let p8 = PropertyCheck::two_sided(
        "P8",
        "maximum initial noise margins per patch",
        min_max_aligned,
        0.25 * sigma_0 * cfg.sigma_n * sqrt(df),
        max_max_aligned,
        thr6,
    );

    Ok(EventEReport { delta, sigma_0, properties: vec![p1, p2, p3, p4, p5, p6, p7, p8] })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::init_weights;

    fn paper_config(seed: u64) -> SyntheticConfig {
        SyntheticConfig { d: 100, n: 200, p: 4, alpha: 5.0, sigma_n: 0.4, p_un: 0.1, seed }
    }

    #[test]
    fn paper_config_partition_sizes() {
        let ds = generate_dataset(&paper_config(7)).unwrap();
        assert_eq!(ds.unlearnable_indices.len(), 20);
        assert_eq!(ds.learnable_indices.len(), 180);
        for s in &ds.samples {
            for j in s.noise_patches() {
                let x = s.patch(j);
                assert_eq!(x[0], 0.0);
                assert_eq!(x[99], 0.0);
            }
            let sig = s.patch(s.signal_index);
            let coord = s.signal_coordinate();
            assert_eq!(sig[coord], 5.0 * s.label);
            assert_eq!(sig.iter().filter(|v| **v != 0.0).count(), 1);
        }
    }

    #[test]
    fn learnable_only_regime() {
        let cfg = SyntheticConfig { p_un: 0.0, ..paper_config(3) };
        let ds = generate_dataset(&cfg).unwrap();
        assert!(ds.unlearnable_indices.is_empty());
        assert!(ds.samples.iter().all(|s| s.learnable));
        assert!(ds.samples.iter().all(|s| s.signal_coordinate() == 0));
    }

    #[test]
    fn regeneration_is_bit_identical() {
        let cfg = paper_config(42);
        let a = generate_dataset(&cfg).unwrap();
        let b = generate_dataset(&cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn unlearnable_count_rounds_half_up() {
        let mut cfg = paper_config(1);
        cfg.n = 10;
        cfg.p_un = 0.25; // 2.5 -> 3
        assert_eq!(cfg.unlearnable_count(), 3);
        cfg.p_un = 0.24; // 2.4 -> 2
        assert_eq!(cfg.unlearnable_count(), 2);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut cfg = paper_config(1);
        cfg.alpha = 0.0;
        assert!(matches!(generate_dataset(&cfg), Err(Error::InvalidConfig(_))));
        let mut cfg = paper_config(1);
        cfg.d = 2;
        assert!(generate_dataset(&cfg).is_err());
        let mut cfg = paper_config(1);
        cfg.p_un = 1.5;
        assert!(generate_dataset(&cfg).is_err());
        let mut cfg = paper_config(1);
        cfg.sigma_n = -0.1;
        assert!(generate_dataset(&cfg).is_err());
    }

    #[test]
    fn noise_second_moment_matches_chi_square_mean() {
        // Monte Carlo oracle: E||x||^2 = sigma_n^2 (d - 2) = 15.68 at the paper config.
        let cfg = SyntheticConfig { n: 4000, ..paper_config(11) };
        let ds = generate_dataset(&cfg).unwrap();
        let mut total = 0.0;
        let mut count = 0usize;
        for s in &ds.samples {
            for j in s.noise_patches() {
                total += s.patch(j).iter().map(|v| v * v).sum::<f64>();
                count += 1;
            }
        }
        assert!(count >= 10_000);
        let mean = total / count as f64;
        let expected = 0.4 * 0.4 * 98.0;
        assert!(
            (mean - expected).abs() / expected < 0.02,
            "mean {mean} vs expected {expected}"
        );
    }

    #[test]
    fn test_sampler_is_learnable_and_balanced() {
        let cfg = paper_config(5);
        let samples = sample_test_learnable(&cfg, 10_000, 9).unwrap();
        assert!(samples.iter().all(|s| s.learnable));
        let positives = samples.iter().filter(|s| s.label > 0.0).count() as f64;
        // binomial concentration: within 3 sigma of n/2
        let sigma = (10_000.0_f64 * 0.25).sqrt();
        assert!((positives - 5000.0).abs() <= 3.0 * sigma, "positives = {positives}");
        // zero-noise limit: only the signal patch is nonzero
        let tiny = SyntheticConfig { sigma_n: 1e-300, ..cfg };
        let s = &sample_test_learnable(&tiny, 1, 1).unwrap()[0];
        for j in s.noise_patches() {
            assert!(s.patch(j).iter().all(|v| v.abs() < 1e-290));
        }
        assert_eq!(s.patch(s.signal_index)[0], 5.0 * s.label);
    }

    #[test]
    fn event_e_degenerate_patch_fails_p1() {
        let cfg = SyntheticConfig { d: 20, n: 4, p: 3, ..paper_config(2) };
        let mut ds = generate_dataset(&cfg).unwrap();
        let w = init_weights(4, 20, 0.01, 1).unwrap();
        let ok = check_event_e(&ds, &w, 0.01, 0.05).unwrap();
        // zero out one noise patch: P1's lower bound must fail
        let j = ds.samples[0].noise_patches().next().unwrap();
        ds.samples[0].patch_mut(j).fill(0.0);
        let report = check_event_e(&ds, &w, 0.01, 0.05).unwrap();
        let p1 = &report.properties[0];
        assert!(!p1.pass);
        assert_eq!(p1.side, BoundSide::Lower);
        assert_eq!(p1.worst, 0.0);
        assert!(ok.properties[0].worst > 0.0);
    }

    #[test]
    fn event_e_p7_thresholds_are_exact() {
        let ds = generate_dataset(&paper_config(3)).unwrap();
        let w = init_weights(80, 100, 0.01, 4).unwrap();
        let report = check_event_e(&ds, &w, 0.01, 0.05).unwrap();
        let p7 = &report.properties[6];
        assert_eq!(p7.name, "P7");
        let lower = 0.5 * 0.01;
        let upper = 0.01 * (2.0 * (16.0 * 80.0 / 0.05_f64).ln()).sqrt();
        match p7.side {
            BoundSide::Lower => assert_eq!(p7.threshold, lower),
            BoundSide::Upper => assert_eq!(p7.threshold, upper),
        }
    }

    #[test]
    fn event_e_shape_mismatch() {
        let ds = generate_dataset(&paper_config(3)).unwrap();
        let w = init_weights(8, 50, 0.01, 4).unwrap();
        assert!(matches!(
            check_event_e(&ds, &w, 0.01, 0.05),
            Err(Error::ShapeMismatch { .. })
        ));
    }
}
