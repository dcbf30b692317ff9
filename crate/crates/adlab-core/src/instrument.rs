//! Theorem-level instrumentation: noise coefficients, the exact inner-product
//! decomposition, hitting-time detectors, and the memorization probe.
//!
//! The coefficient ledger mirrors the weight update's noise-direction
//! component exactly: on every training step, entry `(i, j, r)` grows by
//! `(3 eta / N) * g_i * <w_r, x_{i,j}>^2`, using the pre-update weights and
//! the same per-sample scalar factor `g_i` the step used. Because signal and
//! noise patches live in orthogonal subspaces, the identity
//!
//! ```text
//! <w_r^(t), x_ij> = <w_r^(0), x_ij> + y_i rho_ijr ||x_ij||^2
//!                   + sum_{(k,q) != (i,j)} y_k rho_kqr <x_kq, x_ij>
//! ```
//!
//! holds exactly in real arithmetic; [`verify_decomposition`] measures its
//! floating-point residual.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::datagen::{Dataset, SyntheticConfig};
use crate::error::{Error, Result};
use crate::network::{dot, patch_responses, StudentWeights};

/// The `N x P x m` noise-coefficient tensor.
///
/// Entry `(i, j, r)` is defined for noise patches only; signal-patch slots
/// stay exactly zero. Under plain adversarial training all entries are
/// non-negative and non-decreasing; under distillation the per-sample factor
/// can change sign, so `signed` records which regime produced the ledger.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct NoiseCoefficients {
    /// Row-major `(i * p + j) * m + r`.
    pub rho: Vec<f64>,
    pub n: usize,
    pub p: usize,
    pub m: usize,
    pub signed: bool,
}

impl NoiseCoefficients {
    pub fn zeros(n: usize, p: usize, m: usize, signed: bool) -> Self {
        NoiseCoefficients { rho: vec![0.0; n * p * m], n, p, m, signed }
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, r: usize) -> f64 {
        self.rho[(i * self.p + j) * self.m + r]
    }

    fn check_dataset(&self, dataset: &Dataset) -> Result<()> {
        if dataset.n() != self.n || dataset.config.p != self.p {
            return Err(Error::ShapeMismatch {
                expected: (self.n, self.p),
                got: (dataset.n(), dataset.config.p),
            });
        }
        Ok(())
    }

    /// Apply one training step's increments given the pre-update patch
    /// responses (`responses[(i * p + j) * m + r] = <w_r, x_ij>`).
    pub(crate) fn apply_step_from_responses(
        &mut self,
        responses: &[f64],
        per_sample_factor: &[f64],
        dataset: &Dataset,
        eta: f64,
    ) {
        let scale = 3.0 * eta / self.n as f64;
        for (i, sample) in dataset.samples.iter().enumerate() {
            let g = per_sample_factor[i];
            if g == 0.0 {
                continue;
            }
            for j in sample.noise_patches() {
                let base = (i * self.p + j) * self.m;
                for r in 0..self.m {
                    let ip = responses[base + r];
                    self.rho[base + r] += scale * g * ip * ip;
                }
            }
        }
    }
}

/// One noise-coefficient update step, exactly mirroring the weight update.
///
/// `per_sample_factor[i]` must be the scalar the training step used for
/// sample `i` (`psi` of the adversarial margin for AT, the soft-label factor
/// for AD); increments use the pre-update `weights_before`.
pub fn update_noise_coefficients(
    coeffs: &mut NoiseCoefficients,
    weights_before: &StudentWeights,
    per_sample_factor: &[f64],
    dataset: &Dataset,
    eta: f64,
) -> Result<()> {
    coeffs.check_dataset(dataset)?;
    if weights_before.m != coeffs.m || weights_before.d != dataset.config.d {
        return Err(Error::ShapeMismatch {
            expected: (coeffs.m, dataset.config.d),
            got: (weights_before.m, weights_before.d),
        });
    }
    if per_sample_factor.len() != coeffs.n {
        return Err(Error::ShapeMismatch {
            expected: (coeffs.n, 1),
            got: (per_sample_factor.len(), 1),
        });
    }
    let (p, m, d) = (coeffs.p, coeffs.m, weights_before.d);
    let mut responses = vec![0.0; p * m];
    let scale = 3.0 * eta / coeffs.n as f64;
    for (i, sample) in dataset.samples.iter().enumerate() {
        let g = per_sample_factor[i];
        patch_responses(weights_before, &sample.patches, &mut responses);
        let _ = d;
        for j in sample.noise_patches() {
            for r in 0..m {
                let ip = responses[j * m + r];
                coeffs.rho[(i * p + j) * m + r] += scale * g * ip * ip;
            }
        }
    }
    Ok(())
}

/// Shifted coefficients `rho_hat = rho + y_i <w_r^(0), x_ij> / ||x_ij||^2`.
///
/// The shift is constant over training, so `rho_hat - rho` never changes per
/// entry; the maximum of `rho_hat` over unlearnable noise patches is the
/// quantity whose threshold crossing defines the noise hitting time.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ShiftedCoefficients {
    pub rho_hat: Vec<f64>,
    pub n: usize,
    pub p: usize,
    pub m: usize,
}

impl ShiftedCoefficients {
    #[inline]
    pub fn get(&self, i: usize, j: usize, r: usize) -> f64 {
        self.rho_hat[(i * self.p + j) * self.m + r]
    }

    /// Maximum shifted coefficient over unlearnable noise patches, or `None`
    /// when the unlearnable set is empty.
    pub fn max_over_unlearnable(&self, dataset: &Dataset) -> Option<f64> {
        let mut best = f64::NEG_INFINITY;
        for &i in &dataset.unlearnable_indices {
            let sample = &dataset.samples[i];
            for j in sample.noise_patches() {
                for r in 0..self.m {
                    best = best.max(self.get(i, j, r));
                }
            }
        }
        if best == f64::NEG_INFINITY {
            None
        } else {
            Some(best)
        }
    }
}

/// The per-entry shift table `y_i <w_r^(0), x_ij> / ||x_ij||^2` (zero on
/// signal slots). Computed once from the initial weights.
pub(crate) fn initial_alignment_shift(init: &StudentWeights, dataset: &Dataset) -> Vec<f64> {
    let (p, m) = (dataset.config.p, init.m);
    let mut shift = vec![0.0; dataset.n() * p * m];
    for (i, sample) in dataset.samples.iter().enumerate() {
        for j in sample.noise_patches() {
            let x = sample.patch(j);
            let norm2: f64 = x.iter().map(|v| v * v).sum();
            if norm2 == 0.0 {
                continue;
            }
            for r in 0..m {
                shift[(i * p + j) * m + r] = sample.label * dot(init.row(r), x) / norm2;
            }
        }
    }
    shift
}

/// Derive shifted coefficients from a ledger and the initial weights.
pub fn shifted_coefficients(
    coeffs: &NoiseCoefficients,
    init_weights: &StudentWeights,
    dataset: &Dataset,
) -> Result<ShiftedCoefficients> {
    coeffs.check_dataset(dataset)?;
    if init_weights.m != coeffs.m {
        return Err(Error::ShapeMismatch { expected: (coeffs.m, 0), got: (init_weights.m, 0) });
    }
    let shift = initial_alignment_shift(init_weights, dataset);
    let rho_hat: Vec<f64> = coeffs.rho.iter().zip(&shift).map(|(r, s)| r + s).collect();
    Ok(ShiftedCoefficients { rho_hat, n: coeffs.n, p: coeffs.p, m: coeffs.m })
}

/// Result of checking the decomposition identity.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DecompositionCheck {
    /// Iteration the check ran at (filled in by the training loop; 0 otherwise).
    pub iteration: usize,
    /// Max over `(i, j, r)` of the absolute identity residual.
    pub max_abs_residual: f64,
    /// Max over `(i, j, r)` of `|<w_r^(t), x_ij>|`, the natural scale.
    pub max_abs_response: f64,
}

impl DecompositionCheck {
    /// Residual relative to the largest inner product.
    pub fn relative(&self) -> f64 {
        self.max_abs_residual / self.max_abs_response.max(f64::MIN_POSITIVE)
    }
}

/// Measure the worst-case residual of the inner-product decomposition.
///
/// The coefficients must have been updated in lockstep with the training run
/// that produced `weights_now` from `weights_init`.
pub fn verify_decomposition(
    coeffs: &NoiseCoefficients,
    weights_now: &StudentWeights,
    weights_init: &StudentWeights,
    dataset: &Dataset,
) -> Result<DecompositionCheck> {
    coeffs.check_dataset(dataset)?;
    if weights_now.m != coeffs.m || weights_init.m != coeffs.m {
        return Err(Error::ShapeMismatch {
            expected: (coeffs.m, weights_now.d),
            got: (weights_now.m, weights_init.d),
        });
    }
    let m = coeffs.m;

    // flatten the noise patches
    let noise: Vec<(usize, usize)> = dataset
        .samples
        .iter()
        .enumerate()
        .flat_map(|(i, s)| s.noise_patches().map(move |j| (i, j)))
        .collect();
    let k = noise.len();

    // Gram matrix of noise patches (signal patches are orthogonal to all of
    // them, so they never enter the identity)
    let mut gram = vec![0.0; k * k];
    for a in 0..k {
        let xa = dataset.samples[noise[a].0].patch(noise[a].1);
        for b in a..k {
            let xb = dataset.samples[noise[b].0].patch(noise[b].1);
            let g = dot(xa, xb);
            gram[a * k + b] = g;
            gram[b * k + a] = g;
        }
    }

    let mut max_abs_residual = 0.0_f64;
    let mut max_abs_response = 0.0_f64;
    let mut signed = vec![0.0; k];
    for r in 0..m {
        for (a, &(i, j)) in noise.iter().enumerate() {
            signed[a] = dataset.samples[i].label * coeffs.get(i, j, r);
        }
        for (a, &(i, j)) in noise.iter().enumerate() {
            let x = dataset.samples[i].patch(j);
            let now = dot(weights_now.row(r), x);
            let init = dot(weights_init.row(r), x);
            // v^T gram row includes the own-patch term y_i rho ||x||^2
            let reconstructed = init + dot(&signed, &gram[a * k..(a + 1) * k]);
            max_abs_residual = max_abs_residual.max((now - reconstructed).abs());
            max_abs_response = max_abs_response.max(now.abs());
        }
    }
    Ok(DecompositionCheck { iteration: 0, max_abs_residual, max_abs_response })
}

/// Full-resolution per-step trace of the two hitting-time statistics.
///
/// Index `t` holds the state after `t` updates (index 0 is initialization).
/// `max_shifted_noise` uses `NEG_INFINITY` when the unlearnable set is empty.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainTrace {
    pub max_signal_weight: Vec<f64>,
    pub max_shifted_noise: Vec<f64>,
}

/// Detected hitting times and the cutoffs they used.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct HittingTimes {
    /// First iteration with `max_r w_{r,1} > c0 / (alpha m^(1/3))`.
    pub t0: Option<usize>,
    /// First iteration with `rho_hat_max > c1 / ((m P)^(1/3) sigma_n^2 d)`.
    pub t1: Option<usize>,
    pub c0: f64,
    pub c1: f64,
    pub signal_cutoff: f64,
    pub noise_cutoff: f64,
}

/// Scan a full-resolution trace for the two threshold crossings.
pub fn detect_hitting_times(
    trace: &TrainTrace,
    c0: f64,
    c1: f64,
    config: &SyntheticConfig,
    m: usize,
) -> HittingTimes {
    let signal_cutoff = c0 / (config.alpha * libm::cbrt(m as f64));
    let noise_cutoff =
        c1 / (libm::cbrt((m * config.p) as f64) * config.sigma_n * config.sigma_n * config.d as f64);
    let first_above = |xs: &[f64], cutoff: f64| xs.iter().position(|&v| v > cutoff);
    HittingTimes {
        t0: first_above(&trace.max_signal_weight, signal_cutoff),
        t1: first_above(&trace.max_shifted_noise, noise_cutoff),
        c0,
        c1,
        signal_cutoff,
        noise_cutoff,
    }
}

/// Location and value of the strongest aligned noise response on the
/// unlearnable set.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct NoiseResponse {
    pub value: f64,
    pub sample: usize,
    pub patch: usize,
    pub filter: usize,
}

/// Max over unlearnable samples, noise patches and filters of
/// `y_i <w_r, x_ij>`; its argmax locates the vulnerable patch used by the
/// memorized-patch attack.
pub fn max_unlearnable_noise_response(
    weights: &StudentWeights,
    dataset: &Dataset,
) -> Result<NoiseResponse> {
    if dataset.unlearnable_indices.is_empty() {
        return Err(Error::EmptyDomain(String::from("unlearnable set is empty")));
    }
    if weights.d != dataset.config.d {
        return Err(Error::ShapeMismatch {
            expected: (weights.m, dataset.config.d),
            got: (weights.m, weights.d),
        });
    }
    let mut best = NoiseResponse { value: f64::NEG_INFINITY, sample: 0, patch: 0, filter: 0 };
    for &i in &dataset.unlearnable_indices {
        let sample = &dataset.samples[i];
        for j in sample.noise_patches() {
            let x = sample.patch(j);
            for r in 0..weights.m {
                let v = sample.label * dot(weights.row(r), x);
                if v > best.value {
                    best = NoiseResponse { value: v, sample: i, patch: j, filter: r };
                }
            }
        }
    }
    Ok(best)
}

/// Max over *all* samples' noise patches and filters of `|<w_r, x_ij>|`.
///
/// This is the quantity that stays at initialization scale in the
/// no-memorization regimes.
pub fn max_noise_response(weights: &StudentWeights, dataset: &Dataset) -> f64 {
    let mut best = 0.0_f64;
    for sample in &dataset.samples {
        for j in sample.noise_patches() {
            let x = sample.patch(j);
            for r in 0..weights.m {
                best = best.max(dot(weights.row(r), x).abs());
            }
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{generate_dataset, SyntheticConfig};
    use crate::math::psi;
    use crate::network::init_weights;

    fn world(p_un: f64) -> (Dataset, StudentWeights) {
        let cfg = SyntheticConfig { d: 12, n: 10, p: 3, alpha: 3.0, sigma_n: 0.5, p_un, seed: 31 };
        let ds = generate_dataset(&cfg).unwrap();
        let w = init_weights(4, 12, 0.05, 7).unwrap();
        (ds, w)
    }

    #[test]
    fn zero_factor_leaves_coefficients_unchanged() {
        let (ds, w) = world(0.3);
        let mut coeffs = NoiseCoefficients::zeros(10, 3, 4, false);
        update_noise_coefficients(&mut coeffs, &w, &[0.0; 10], &ds, 0.1).unwrap();
        assert!(coeffs.rho.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn at_increments_are_nonnegative_and_match_scalar_oracle() {
        let (ds, w) = world(0.3);
        let mut coeffs = NoiseCoefficients::zeros(10, 3, 4, false);
        let factors: alloc::vec::Vec<f64> = (0..10).map(|i| psi(0.1 * i as f64)).collect();
        update_noise_coefficients(&mut coeffs, &w, &factors, &ds, 0.05).unwrap();
        assert!(coeffs.rho.iter().all(|v| *v >= 0.0));
        // scalar oracle on one entry: (3 eta / N) psi <w, x>^2
        let i = 2;
        let s = &ds.samples[i];
        let j = s.noise_patches().next().unwrap();
        let ip = dot(w.row(1), s.patch(j));
        let expected = 3.0 * 0.05 / 10.0 * factors[i] * ip * ip;
        assert!((coeffs.get(i, j, 1) - expected).abs() <= 1e-15 * expected.abs().max(1e-300));
        // signal slots untouched
        for (i, s) in ds.samples.iter().enumerate() {
            for r in 0..4 {
                assert_eq!(coeffs.get(i, s.signal_index, r), 0.0);
            }
        }
    }

    #[test]
    fn shift_is_time_constant() {
        let (ds, w) = world(0.5);
        let mut coeffs = NoiseCoefficients::zeros(10, 3, 4, false);
        let before = shifted_coefficients(&coeffs, &w, &ds).unwrap();
        update_noise_coefficients(&mut coeffs, &w, &[0.7; 10], &ds, 0.02).unwrap();
        let after = shifted_coefficients(&coeffs, &w, &ds).unwrap();
        for idx in 0..coeffs.rho.len() {
            let da = after.rho_hat[idx] - coeffs.rho[idx];
            let db = before.rho_hat[idx]; // rho was zero
            assert!((da - db).abs() < 1e-18);
        }
    }

    #[test]
    fn decomposition_residual_zero_at_init() {
        let (ds, w) = world(0.4);
        let coeffs = NoiseCoefficients::zeros(10, 3, 4, false);
        let check = verify_decomposition(&coeffs, &w, &w, &ds).unwrap();
        assert_eq!(check.max_abs_residual, 0.0);
    }

    #[test]
    fn hitting_times_on_constructed_traces() {
        let cfg = SyntheticConfig { d: 10, n: 4, p: 2, alpha: 2.0, sigma_n: 0.5, p_un: 0.5, seed: 1 };
        // constant-zero trace: nothing fires
        let zero = TrainTrace {
            max_signal_weight: vec![0.0; 20],
            max_shifted_noise: vec![f64::NEG_INFINITY; 20],
        };
        let ht = detect_hitting_times(&zero, 1.0, 1.0, &cfg, 8);
        assert_eq!(ht.t0, None);
        assert_eq!(ht.t1, None);
        // monotone ramp crossing the signal cutoff at step 7
        let cutoff = 1.0 / (2.0 * libm::cbrt(8.0));
        let ramp: alloc::vec::Vec<f64> = (0..20).map(|t| cutoff * (t as f64 / 7.0) * 1.0001).collect();
        let trace = TrainTrace { max_signal_weight: ramp, max_shifted_noise: vec![0.0; 20] };
        let ht = detect_hitting_times(&trace, 1.0, 1.0, &cfg, 8);
        assert_eq!(ht.t0, Some(7));
        assert!((ht.signal_cutoff - cutoff).abs() < 1e-15);
        let expected_noise_cutoff = 1.0 / (libm::cbrt(16.0) * 0.25 * 10.0);
        assert!((ht.noise_cutoff - expected_noise_cutoff).abs() < 1e-15);
    }

    #[test]
    fn unlearnable_probe_zero_weights_and_errors() {
        let (ds, mut w) = world(0.5);
        w.weights.fill(0.0);
        let probe = max_unlearnable_noise_response(&w, &ds).unwrap();
        assert_eq!(probe.value, 0.0);
        let (ds0, w0) = world(0.0);
        assert!(matches!(
            max_unlearnable_noise_response(&w0, &ds0),
            Err(Error::EmptyDomain(_))
        ));
    }
}
