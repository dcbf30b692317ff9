//! Adversarial example generation.
//!
//! Three attacks with different roles:
//!
//! * [`perturb_signal_patch`] — the training-time adversary. Perturbations are
//!   restricted to the signal-patch direction, where the margin is a monotone
//!   cubic in the scalar offset, so evaluating the two endpoints of the budget
//!   is exactly optimal.
//! * [`pgd_attack`] — the evaluation adversary defining robust error: signed
//!   gradient ascent on the logistic loss over the full l-inf ball, keeping
//!   the best iterate seen.
//! * [`memorized_patch_attack`] — the diagnostic attack that replays a
//!   memorized training noise patch against fresh test samples.

use alloc::vec;

use crate::datagen::Sample;
use crate::error::{Error, Result};
use crate::math::logistic_loss;
use crate::network::{dot, patch_responses, StudentWeights};

/// Evaluation attack parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AttackConfig {
    /// l-inf budget.
    pub epsilon: f64,
    /// PGD iteration count.
    pub steps: usize,
    /// Per-step magnitude.
    pub step_size: f64,
}

impl AttackConfig {
    /// Standard evaluation convention: step size `2.5 * epsilon / steps`,
    /// no random start, projection after every step.
    pub fn pgd(epsilon: f64, steps: usize) -> Self {
        AttackConfig { epsilon, steps, step_size: 2.5 * epsilon / steps as f64 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon >= 0.0) || !self.epsilon.is_finite() {
            return Err(Error::InvalidConfig(alloc::format!("epsilon must be >= 0, got {}", self.epsilon)));
        }
        if self.steps == 0 {
            return Err(Error::InvalidConfig(alloc::string::String::from("steps must be >= 1")));
        }
        if !(self.step_size >= 0.0) || !self.step_size.is_finite() {
            return Err(Error::InvalidConfig(alloc::format!("step_size must be >= 0, got {}", self.step_size)));
        }
        Ok(())
    }
}

/// Choose the loss-maximizing signal-patch scale from the two budget endpoints.
///
/// `c0` is the current scalar along the signal direction, `rest` the logit
/// contribution of all other patches, `s_coord` the cube-sum of the weights'
/// signal coordinate. The margin is `y * (rest + c^3 * s_coord)`, monotone in
/// `c`, so the maximizer over `|c - c0| <= eps` is an endpoint; on ties the
/// margin-reducing convention `c0 - eps * y` is used.
pub(crate) fn endpoint_scale(c0: f64, y: f64, eps: f64, rest: f64, s_coord: f64) -> f64 {
    let lo = c0 - eps;
    let hi = c0 + eps;
    let loss_at = |c: f64| logistic_loss(y * (rest + c * c * c * s_coord));
    let (l_lo, l_hi) = (loss_at(lo), loss_at(hi));
    if l_lo > l_hi {
        lo
    } else if l_hi > l_lo {
        hi
    } else {
        c0 - eps * y
    }
}

/// Training-time adversary: perturb only the signal patch, along its own
/// direction, within l-inf budget `epsilon`.
pub fn perturb_signal_patch(weights: &StudentWeights, sample: &Sample, epsilon: f64) -> Result<Sample> {
    weights.check_sample(sample)?;
    if !(epsilon >= 0.0) {
        return Err(Error::InvalidConfig(alloc::format!("epsilon must be >= 0, got {epsilon}")));
    }
    let coord = sample.signal_coordinate();
    let c0 = sample.patch(sample.signal_index)[coord];
    let s_coord: f64 = (0..weights.m).map(|r| weights.row(r)[coord]).map(|w| w * w * w).sum();
    // logit contribution of the non-signal patches
    let mut rest = 0.0;
    for j in sample.noise_patches() {
        let x = sample.patch(j);
        for r in 0..weights.m {
            let ip = dot(weights.row(r), x);
            rest += ip * ip * ip;
        }
    }
    let c = endpoint_scale(c0, sample.label, epsilon, rest, s_coord);
    let mut out = sample.clone();
    let patch = out.patch_mut(sample.signal_index);
    patch.fill(0.0);
    patch[coord] = c;
    Ok(out)
}

/// Evaluation adversary: `steps` rounds of signed gradient ascent on
/// `l(y f(X'))` over the full l-inf ball of radius `epsilon`, with projection
/// onto the box after each step and the best-loss iterate kept.
pub fn pgd_attack(weights: &StudentWeights, sample: &Sample, config: &AttackConfig) -> Result<Sample> {
    weights.check_sample(sample)?;
    config.validate()?;
    let (m, d, p) = (weights.m, weights.d, sample.p);
    let y = sample.label;
    let x0 = &sample.patches;
    let mut current = sample.patches.clone();
    let mut responses = vec![0.0; p * m];
    let mut deriv = vec![0.0; d];

    let margin = |resp: &[f64]| y * resp.iter().map(|g| g * g * g).sum::<f64>();

    patch_responses(weights, &current, &mut responses);
    let mut best = sample.patches.clone();
    let mut best_loss = logistic_loss(margin(&responses));

    for _ in 0..config.steps {
        // ascend: X += step * sign(grad_X l(y f)) with
        // grad_X l = -y psi(y f) grad_X f and grad_{x_p} f = sum_r 3 <w_r,x_p>^2 w_r;
        // psi > 0, so only -y * sign(grad_X f) matters.
        for patch in 0..p {
            let g = &responses[patch * m..(patch + 1) * m];
            deriv.fill(0.0);
            for r in 0..m {
                crate::network::axpy(3.0 * g[r] * g[r], weights.row(r), &mut deriv);
            }
            for c in 0..d {
                let idx = patch * d + c;
                let v = current[idx] + config.step_size * (-y * sign(deriv[c]));
                current[idx] = v.clamp(x0[idx] - config.epsilon, x0[idx] + config.epsilon);
            }
        }
        patch_responses(weights, &current, &mut responses);
        let loss = logistic_loss(margin(&responses));
        if loss > best_loss {
            best_loss = loss;
            best.copy_from_slice(&current);
        }
    }
    let mut out = sample.clone();
    out.patches = best;
    Ok(out)
}

#[inline]
fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Replay a memorized training noise patch against a test sample.
///
/// Every non-signal patch receives
/// `-y * y_vuln * (eps / (sigma_n * sqrt(2 ln(16 d N P / delta)))) * x_vuln`.
/// The scale keeps the perturbation inside the l-inf budget exactly when the
/// vulnerable patch satisfies the P3 coordinate bound; otherwise the attack
/// is inadmissible and an error reports the measured l-inf norm.
#[allow(clippy::too_many_arguments)]
pub fn memorized_patch_attack(
    weights: &StudentWeights,
    vulnerable_patch: &[f64],
    vulnerable_label: f64,
    test_sample: &Sample,
    epsilon: f64,
    delta: f64,
    sigma_n: f64,
    dims: (usize, usize, usize),
) -> Result<Sample> {
    weights.check_sample(test_sample)?;
    let (d, n, p) = dims;
    if vulnerable_patch.len() != test_sample.d {
        return Err(Error::ShapeMismatch {
            expected: (1, test_sample.d),
            got: (1, vulnerable_patch.len()),
        });
    }
    if !(epsilon >= 0.0) {
        return Err(Error::InvalidConfig(alloc::format!("epsilon must be >= 0, got {epsilon}")));
    }
    let p3_bound = sigma_n * libm::sqrt(2.0 * libm::log(16.0 * (d * n * p) as f64 / delta));
    let linf = vulnerable_patch.iter().map(|v| v.abs()).fold(0.0_f64, f64::max);
    let scale = epsilon / p3_bound;
    if scale * linf > epsilon {
        return Err(Error::BudgetExceeded { linf, limit: p3_bound });
    }
    let coef = -test_sample.label * vulnerable_label * scale;
    let mut out = test_sample.clone();
    for j in 0..out.p {
        if j == out.signal_index {
            continue;
        }
        let d = out.d;
        let patch = out.patch_mut(j);
        for c in 0..d {
            patch[c] += coef * vulnerable_patch[c];
        }
    }
    Ok(out)
}
