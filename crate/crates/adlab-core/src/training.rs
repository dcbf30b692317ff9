//! Full-batch gradient descent for the adversarial-training and
//! adversarial-distillation objectives.
//!
//! Each iteration regenerates every training adversarial example with the
//! current weights, reduces the per-sample loss gradient to one scalar factor
//! per sample, applies the averaged update, re-projects the weights
//! orthogonal to the unlearnable direction, and advances the
//! noise-coefficient ledger with the same factors. Runs are deterministic
//! given the dataset, the initial weights and the config; there is no
//! stochasticity anywhere in the loop.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::adversary::{endpoint_scale, pgd_attack, perturb_signal_patch, AttackConfig};
use crate::datagen::{Dataset, Sample};
use crate::error::{Error, Result};
use crate::instrument::{
    detect_hitting_times, initial_alignment_shift, max_noise_response,
    max_unlearnable_noise_response, verify_decomposition, DecompositionCheck, HittingTimes,
    NoiseCoefficients, TrainTrace,
};
use crate::math::{logistic_loss, psi, sigmoid};
use crate::network::{axpy, forward, patch_responses, project_in_place, StudentWeights};
use crate::teacher::{teacher_margin, TeacherSpec};

/// Training objective.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum Objective {
    /// Plain adversarial training on the logistic loss.
    At,
    /// Adversarial distillation against a margin-oracle teacher.
    Ad(TeacherSpec),
}

/// Training-run parameters.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TrainConfig {
    /// Learning rate.
    pub eta: f64,
    /// Training attack budget (signal-patch attack).
    pub epsilon: f64,
    /// Iteration count `T`.
    pub iterations: usize,
    pub objective: Objective,
    /// Metrics cadence; hitting-time detectors use the full-resolution trace
    /// regardless.
    pub log_every: usize,
    /// Evaluation attack defining robust test accuracy.
    pub eval_attack: AttackConfig,
    /// Hitting-time constants.
    pub c0: f64,
    pub c1: f64,
    /// Abort when any |weight| or |loss| exceeds this.
    pub divergence_limit: f64,
    /// Record per-sample adversarial margins in the metrics log.
    pub log_margins: bool,
}

impl TrainConfig {
    pub fn new(eta: f64, epsilon: f64, iterations: usize, objective: Objective) -> Self {
        TrainConfig {
            eta,
            epsilon,
            iterations,
            objective,
            log_every: 10,
            eval_attack: AttackConfig::pgd(epsilon, 20),
            c0: 1.0,
            c1: 1.0,
            divergence_limit: 1e12,
            log_margins: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eta >= 0.0) || !self.eta.is_finite() {
            return Err(Error::InvalidConfig(alloc::format!("eta must be >= 0, got {}", self.eta)));
        }
        if self.iterations == 0 {
            return Err(Error::InvalidConfig(String::from("iterations must be >= 1")));
        }
        if !(self.epsilon >= 0.0) {
            return Err(Error::InvalidConfig(alloc::format!("epsilon must be >= 0, got {}", self.epsilon)));
        }
        if self.log_every == 0 {
            return Err(Error::InvalidConfig(String::from("log_every must be >= 1")));
        }
        self.eval_attack.validate()
    }
}

/// One logged metrics record.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MetricsRow {
    pub iteration: usize,
    pub train_loss: f64,
    /// Accuracy under the training (signal-patch) attack.
    pub robust_train_acc: f64,
    /// Accuracy under the evaluation PGD attack.
    pub robust_test_acc: f64,
    pub clean_test_acc: f64,
    pub max_signal_weight: f64,
    /// Max shifted noise coefficient over the unlearnable set; absent when
    /// the unlearnable set is empty.
    pub max_rho_hat: Option<f64>,
    /// Per-sample adversarial margins, when enabled.
    pub margins: Option<Vec<f64>>,
}

/// The metrics log of a run.
#[derive(Debug, Clone, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MetricsLog {
    pub rows: Vec<MetricsRow>,
}

impl MetricsLog {
    /// Check iteration monotonicity and accuracy ranges.
    pub fn validate(&self) -> Result<()> {
        let mut last = 0usize;
        for (k, row) in self.rows.iter().enumerate() {
            if k > 0 && row.iteration <= last {
                return Err(Error::InvalidConfig(alloc::format!(
                    "metrics iterations not strictly increasing at row {k}"
                )));
            }
            last = row.iteration;
            for acc in [row.robust_train_acc, row.robust_test_acc, row.clean_test_acc] {
                if !(0.0..=1.0).contains(&acc) {
                    return Err(Error::InvalidConfig(alloc::format!("accuracy out of range: {acc}")));
                }
            }
        }
        Ok(())
    }

    pub fn peak_robust_test(&self) -> Option<&MetricsRow> {
        self.rows.iter().max_by(|a, b| {
            a.robust_test_acc
                .partial_cmp(&b.robust_test_acc)
                .unwrap_or(core::cmp::Ordering::Equal)
        })
    }
}

/// Weights at the iteration of peak robust test accuracy.
#[derive(Debug, Clone, PartialEq)]
pub struct PeakCheckpoint {
    pub weights: StudentWeights,
    pub iteration: usize,
    pub robust_test_acc: f64,
}

/// Noise-response scales measured at one point in training.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct NoiseDiagnostics {
    /// Max |<w_r, x_ij>| over all noise patches.
    pub max_noise_response: f64,
    /// Max aligned response over the unlearnable set, when it exists.
    pub max_unlearnable_response: Option<f64>,
}

/// Everything a training run produces.
#[derive(Debug, Clone)]
pub struct TrainResult {
    pub final_weights: StudentWeights,
    pub log: MetricsLog,
    pub hitting: HittingTimes,
    pub peak: PeakCheckpoint,
    /// Full-resolution trace (index 0 = initialization).
    pub trace: TrainTrace,
    /// Final noise-coefficient ledger.
    pub coefficients: NoiseCoefficients,
    /// Decomposition checks run at T/4, T/2 and T.
    pub decomposition_checks: Vec<DecompositionCheck>,
    pub initial: NoiseDiagnostics,
    pub final_: NoiseDiagnostics,
}

/// Magnitude of the logistic-loss gradient w.r.t. the logit:
/// `psi(z) = 1 / (1 + e^z)`. The per-sample AT gradient is `-y psi(y f)`.
pub fn loss_grad_factor_at(student_margin: f64) -> f64 {
    psi(student_margin)
}

/// Scalar factor of the distillation loss gradient w.r.t. the logit:
/// `sigma(tm) psi(z) - sigma(-tm) psi(-z)`. The per-sample AD gradient is
/// `-y` times this. For saturated teacher margins it approaches the AT
/// factor; for a zero teacher margin it changes sign at `z = 0`.
pub fn loss_grad_factor_ad(student_margin: f64, teacher_margin: f64) -> f64 {
    sigmoid(teacher_margin) * psi(student_margin) - sigmoid(-teacher_margin) * psi(-student_margin)
}

/// Fraction of samples robustly correct under the evaluation PGD attack
/// (`y f > 0` strictly; a zero logit counts as an error).
pub fn robust_accuracy(weights: &StudentWeights, samples: &[Sample], attack: &AttackConfig) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    let correct = samples
        .iter()
        .filter(|s| {
            let adv = pgd_attack(weights, s, attack).expect("shape checked");
            s.label * forward(weights, &adv).expect("shape checked") > 0.0
        })
        .count();
    correct as f64 / samples.len() as f64
}

/// Fraction of samples robustly correct under the training-time
/// signal-patch attack at budget `epsilon`.
pub fn signal_attack_accuracy(weights: &StudentWeights, samples: &[Sample], epsilon: f64) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    let correct = samples
        .iter()
        .filter(|s| {
            let adv = perturb_signal_patch(weights, s, epsilon).expect("shape checked");
            s.label * forward(weights, &adv).expect("shape checked") > 0.0
        })
        .count();
    correct as f64 / samples.len() as f64
}

/// Fraction of samples correct on clean inputs.
pub fn clean_accuracy(weights: &StudentWeights, samples: &[Sample]) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    let correct = samples
        .iter()
        .filter(|s| s.label * forward(weights, s).expect("shape checked") > 0.0)
        .count();
    correct as f64 / samples.len() as f64
}

struct Engine<'a> {
    dataset: &'a Dataset,
    n: usize,
    p: usize,
    d: usize,
    m: usize,
    /// Clean patches, flattened `n * p * d`.
    patches: Vec<f64>,
    /// Signal scalar of each sample along its signal coordinate.
    signal_scale: Vec<f64>,
    /// Signal coordinate of each sample.
    signal_coord: Vec<usize>,
    /// Teacher margins per sample (zero-filled for AT).
    teacher_margins: Vec<f64>,
    objective_is_ad: bool,
    /// Shift table for the shifted noise coefficients.
    shift: Vec<f64>,
}

impl<'a> Engine<'a> {
    fn new(dataset: &'a Dataset, weights: &StudentWeights, config: &TrainConfig) -> Result<Self> {
        let n = dataset.n();
        let p = dataset.config.p;
        let d = dataset.config.d;
        if weights.d != d {
            return Err(Error::ShapeMismatch { expected: (weights.m, d), got: (weights.m, weights.d) });
        }
        let mut patches = Vec::with_capacity(n * p * d);
        for s in &dataset.samples {
            if s.p != p || s.d != d {
                return Err(Error::ShapeMismatch { expected: (p, d), got: (s.p, s.d) });
            }
            patches.extend_from_slice(&s.patches);
        }
        let signal_coord: Vec<usize> = dataset.samples.iter().map(|s| s.signal_coordinate()).collect();
        let signal_scale: Vec<f64> = dataset
            .samples
            .iter()
            .map(|s| s.patch(s.signal_index)[s.signal_coordinate()])
            .collect();
        let (objective_is_ad, teacher_margins) = match &config.objective {
            Objective::At => (false, vec![0.0; n]),
            Objective::Ad(spec) => {
                (true, dataset.samples.iter().map(|s| teacher_margin(spec, s)).collect())
            }
        };
        let shift = initial_alignment_shift(weights, dataset);
        Ok(Engine {
            dataset,
            n,
            p,
            d,
            m: weights.m,
            patches,
            signal_scale,
            signal_coord,
            teacher_margins,
            objective_is_ad,
            shift,
        })
    }

    /// Adversarial margins `z_i = y_i f(X~_i)` and chosen signal scales for
    /// the current weights, from precomputed responses on the clean patches.
    fn adversarial_margins(
        &self,
        weights: &StudentWeights,
        responses: &[f64],
        epsilon: f64,
        margins: &mut [f64],
        chosen_scale: &mut [f64],
    ) {
        let (p, m) = (self.p, self.m);
        // cube-sums of the two feature columns
        let s_first: f64 = (0..m).map(|r| weights.row(r)[0]).map(|w| w * w * w).sum();
        let s_last: f64 = (0..m).map(|r| weights.row(r)[self.d - 1]).map(|w| w * w * w).sum();
        for (i, sample) in self.dataset.samples.iter().enumerate() {
            let mut rest = 0.0;
            for j in sample.noise_patches() {
                let g = &responses[(i * p + j) * m..(i * p + j + 1) * m];
                for &v in g {
                    rest += v * v * v;
                }
            }
            let s_coord = if self.signal_coord[i] == 0 { s_first } else { s_last };
            let c = endpoint_scale(self.signal_scale[i], sample.label, epsilon, rest, s_coord);
            chosen_scale[i] = c;
            margins[i] = sample.label * (rest + c * c * c * s_coord);
        }
    }

    fn factors(&self, margins: &[f64], out: &mut [f64]) {
        if self.objective_is_ad {
            for i in 0..self.n {
                out[i] = loss_grad_factor_ad(margins[i], self.teacher_margins[i]);
            }
        } else {
            for i in 0..self.n {
                out[i] = loss_grad_factor_at(margins[i]);
            }
        }
    }

    fn mean_loss(&self, margins: &[f64]) -> f64 {
        let mut total = 0.0;
        if self.objective_is_ad {
            for i in 0..self.n {
                let tm = self.teacher_margins[i];
                total += sigmoid(tm) * logistic_loss(margins[i])
                    + sigmoid(-tm) * logistic_loss(-margins[i]);
            }
        } else {
            for m in margins {
                total += logistic_loss(*m);
            }
        }
        total / self.n as f64
    }

    /// Max shifted noise coefficient over the unlearnable set.
    fn max_rho_hat(&self, coeffs: &NoiseCoefficients) -> f64 {
        let mut best = f64::NEG_INFINITY;
        for &i in &self.dataset.unlearnable_indices {
            let sample = &self.dataset.samples[i];
            for j in sample.noise_patches() {
                let base = (i * self.p + j) * self.m;
                for r in 0..self.m {
                    best = best.max(coeffs.rho[base + r] + self.shift[base + r]);
                }
            }
        }
        best
    }
}

/// Run full-batch gradient descent.
///
/// At every step the training adversarial examples are regenerated with the
/// current weights, the per-sample scalar factors are accumulated into one
/// averaged update, the weights are re-projected orthogonal to `e_d`, and
/// the noise-coefficient ledger advances with the pre-update responses.
/// Metrics are logged every `log_every` steps and at the final iteration;
/// the full-resolution trace feeds the hitting-time detectors.
pub fn train(
    dataset: &Dataset,
    init: &StudentWeights,
    config: &TrainConfig,
    test_set: &[Sample],
) -> Result<TrainResult> {
    config.validate()?;
    let mut weights = init.clone();
    project_in_place(&mut weights);
    let engine = Engine::new(dataset, &weights, config)?;
    for s in test_set {
        weights.check_sample(s)?;
    }
    let (n, p, d, m) = (engine.n, engine.p, engine.d, engine.m);
    let t_max = config.iterations;

    let mut coeffs = NoiseCoefficients::zeros(n, p, m, engine.objective_is_ad);
    let mut responses = vec![0.0; n * p * m];
    let mut margins = vec![0.0; n];
    let mut chosen_scale = vec![0.0; n];
    let mut factors = vec![0.0; n];
    let mut grad = vec![0.0; m * d];

    let mut trace = TrainTrace {
        max_signal_weight: Vec::with_capacity(t_max + 1),
        max_shifted_noise: Vec::with_capacity(t_max + 1),
    };
    trace.max_signal_weight.push(weights.max_signal_weight());
    trace.max_shifted_noise.push(engine.max_rho_hat(&coeffs));

    let initial = NoiseDiagnostics {
        max_noise_response: max_noise_response(&weights, dataset),
        max_unlearnable_response: max_unlearnable_noise_response(&weights, dataset)
            .ok()
            .map(|r| r.value),
    };

    let mut log = MetricsLog::default();
    let mut peak =
        PeakCheckpoint { weights: weights.clone(), iteration: 0, robust_test_acc: f64::NEG_INFINITY };
    let mut decomposition_checks = Vec::new();
    let checkpoints = [t_max / 4, t_max / 2, t_max];

    for t in 1..=t_max {
        patch_responses(&weights, &engine.patches, &mut responses);
        engine.adversarial_margins(&weights, &responses, config.epsilon, &mut margins, &mut chosen_scale);
        engine.factors(&margins, &mut factors);

        // ledger first: it must see the pre-update weights
        coeffs.apply_step_from_responses(&responses, &factors, dataset, config.eta);

        grad.fill(0.0);
        for (i, sample) in dataset.samples.iter().enumerate() {
            let yg = sample.label * factors[i];
            if yg == 0.0 {
                continue;
            }
            for j in sample.noise_patches() {
                let x = &engine.patches[(i * p + j) * d..(i * p + j + 1) * d];
                let g = &responses[(i * p + j) * m..(i * p + j + 1) * m];
                for r in 0..m {
                    let coef = yg * 3.0 * g[r] * g[r];
                    axpy(coef, x, &mut grad[r * d..(r + 1) * d]);
                }
            }
            // adversarial signal patch c * e_coord touches one column
            let c = chosen_scale[i];
            let coord = engine.signal_coord[i];
            for r in 0..m {
                let w = weights.row(r)[coord];
                grad[r * d + coord] += yg * 3.0 * (c * w) * (c * w) * c;
            }
        }
        let step = config.eta / n as f64;
        for (w, g) in weights.weights.iter_mut().zip(&grad) {
            *w += step * g;
        }
        project_in_place(&mut weights);

        // divergence guard
        let mut max_abs = 0.0_f64;
        let mut finite = true;
        for &w in &weights.weights {
            finite &= w.is_finite();
            max_abs = max_abs.max(w.abs());
        }
        if !finite || max_abs > config.divergence_limit {
            return Err(Error::Divergence {
                iteration: t,
                what: alloc::format!("max |weight| = {max_abs}"),
            });
        }

        trace.max_signal_weight.push(weights.max_signal_weight());
        trace.max_shifted_noise.push(engine.max_rho_hat(&coeffs));

        if t % config.log_every == 0 || t == t_max {
            // evaluate the post-update model: fresh adversarial examples
            patch_responses(&weights, &engine.patches, &mut responses);
            engine.adversarial_margins(&weights, &responses, config.epsilon, &mut margins, &mut chosen_scale);
            let train_loss = engine.mean_loss(&margins);
            if !train_loss.is_finite() || train_loss.abs() > config.divergence_limit {
                return Err(Error::Divergence {
                    iteration: t,
                    what: alloc::format!("train loss = {train_loss}"),
                });
            }
            let robust_train_acc =
                margins.iter().filter(|z| **z > 0.0).count() as f64 / n as f64;
            let robust_test_acc = robust_accuracy(&weights, test_set, &config.eval_attack);
            let clean_test_acc = clean_accuracy(&weights, test_set);
            let rho_hat = *trace.max_shifted_noise.last().unwrap();
            log.rows.push(MetricsRow {
                iteration: t,
                train_loss,
                robust_train_acc,
                robust_test_acc,
                clean_test_acc,
                max_signal_weight: *trace.max_signal_weight.last().unwrap(),
                max_rho_hat: if rho_hat == f64::NEG_INFINITY { None } else { Some(rho_hat) },
                margins: config.log_margins.then(|| margins.clone()),
            });
            if robust_test_acc > peak.robust_test_acc {
                peak = PeakCheckpoint { weights: weights.clone(), iteration: t, robust_test_acc };
            }
        }

        if checkpoints.contains(&t) {
            let mut check = verify_decomposition(&coeffs, &weights, init, dataset)?;
            check.iteration = t;
            decomposition_checks.push(check);
        }
    }

    let hitting = detect_hitting_times(&trace, config.c0, config.c1, &dataset.config, m);
    let final_ = NoiseDiagnostics {
        max_noise_response: max_noise_response(&weights, dataset),
        max_unlearnable_response: max_unlearnable_noise_response(&weights, dataset)
            .ok()
            .map(|r| r.value),
    };
    Ok(TrainResult {
        final_weights: weights,
        log,
        hitting,
        peak,
        trace,
        coefficients: coeffs,
        decomposition_checks,
        initial,
        final_,
    })
}
