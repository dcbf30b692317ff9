//! The two-layer cubic-activation student network.
//!
//! The logit is `f_W(X) = sum_r sum_p [phi(<w_r, x_p>) - phi(-<w_r, x_p>)]`
//! with `phi(z) = max(0, z)^3`. Since `phi(z) - phi(-z) = z^3` exactly, the
//! implementation cubes inner products directly. The student is kept
//! structurally orthogonal to the unlearnable direction `e_d`: the `d`-th
//! weight coordinate is zero at initialization and re-projected after every
//! update.

use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::datagen::Sample;
use crate::error::{Error, Result};

/// Student weights: an `m x d` filter matrix with column `d` identically zero.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct StudentWeights {
    /// Row-major `m x d` matrix; row `r` is filter `w_r`.
    pub weights: Vec<f64>,
    pub m: usize,
    pub d: usize,
    /// Initialization scale the weights were drawn at (recorded for reporting).
    pub sigma_0: f64,
}

impl StudentWeights {
    pub fn row(&self, r: usize) -> &[f64] {
        &self.weights[r * self.d..(r + 1) * self.d]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.weights[r * self.d..(r + 1) * self.d]
    }

    /// Largest signal coordinate `max_r w_{r,1}`.
    pub fn max_signal_weight(&self) -> f64 {
        (0..self.m).map(|r| self.row(r)[0]).fold(f64::NEG_INFINITY, f64::max)
    }

    /// True when every entry is finite.
    pub fn all_finite(&self) -> bool {
        self.weights.iter().all(|v| v.is_finite())
    }

    pub(crate) fn check_sample(&self, sample: &Sample) -> Result<()> {
        if sample.d != self.d {
            return Err(Error::ShapeMismatch { expected: (self.m, self.d), got: (sample.p, sample.d) });
        }
        Ok(())
    }
}

/// Per-filter gradient of the logit, same shape as the weights.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitGradient {
    /// Row-major `m x d`; row `r` is `d f / d w_r`.
    pub grad: Vec<f64>,
    pub m: usize,
    pub d: usize,
}

impl LogitGradient {
    pub fn row(&self, r: usize) -> &[f64] {
        &self.grad[r * self.d..(r + 1) * self.d]
    }
}

/// Draw initial weights `w_r ~ N(0, sigma_0^2 I_d)` with the `e_d` component
/// zeroed out. Deterministic given `seed`.
pub fn init_weights(m: usize, d: usize, sigma_0: f64, seed: u64) -> Result<StudentWeights> {
    if m == 0 {
        return Err(Error::InvalidConfig(alloc::format!("m must be >= 1, got {m}")));
    }
    if d < 3 {
        return Err(Error::InvalidConfig(alloc::format!("d must be >= 3, got {d}")));
    }
    if !(sigma_0 > 0.0) {
        return Err(Error::InvalidConfig(alloc::format!("sigma_0 must be > 0, got {sigma_0}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut weights = vec![0.0; m * d];
    for v in weights.iter_mut() {
        let g: f64 = rng.sample(StandardNormal);
        *v = sigma_0 * g;
    }
    let mut w = StudentWeights { weights, m, d, sigma_0 };
    project_in_place(&mut w);
    Ok(w)
}

/// Zero the `d`-th coordinate of every filter, leaving the rest untouched.
pub fn project_orthogonal_to_v(weights: &StudentWeights) -> StudentWeights {
    let mut out = weights.clone();
    project_in_place(&mut out);
    out
}

pub(crate) fn project_in_place(weights: &mut StudentWeights) {
    let d = weights.d;
    for r in 0..weights.m {
        weights.row_mut(r)[d - 1] = 0.0;
    }
}

/// Student logit `f_W(X) = sum_r sum_p <w_r, x_p>^3`.
pub fn forward(weights: &StudentWeights, sample: &Sample) -> Result<f64> {
    weights.check_sample(sample)?;
    let mut total = 0.0;
    for p in 0..sample.p {
        let x = sample.patch(p);
        for r in 0..weights.m {
            let ip = dot(weights.row(r), x);
            total += ip * ip * ip;
        }
    }
    Ok(total)
}

/// Analytic gradient of the logit: row `r` is `sum_p 3 <w_r, x_p>^2 x_p`.
///
/// The `d`-th column may be nonzero (via unlearnable signal patches); the
/// training loop re-projects after each update.
pub fn logit_gradient(weights: &StudentWeights, sample: &Sample) -> Result<LogitGradient> {
    weights.check_sample(sample)?;
    let (m, d) = (weights.m, weights.d);
    let mut grad = vec![0.0; m * d];
    for p in 0..sample.p {
        let x = sample.patch(p);
        for r in 0..m {
            let ip = dot(weights.row(r), x);
            let coef = 3.0 * ip * ip;
            axpy(coef, x, &mut grad[r * d..(r + 1) * d]);
        }
    }
    Ok(LogitGradient { grad, m, d })
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = 0.0;
    for i in 0..a.len() {
        acc += a[i] * b[i];
    }
    acc
}

#[inline]
pub(crate) fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for i in 0..x.len() {
        y[i] += alpha * x[i];
    }
}

/// Inner products `<w_r, x_p>` for a block of patches.
///
/// `patches` is `k` rows of length `d`; the result is `k x m` row-major
/// (`out[p * m + r]`). This is the shared kernel behind the forward pass, the
/// analytic gradient, the attacks and the coefficient updates.
pub(crate) fn patch_responses(weights: &StudentWeights, patches: &[f64], out: &mut [f64]) {
    let (m, d) = (weights.m, weights.d);
    let k = patches.len() / d;
    debug_assert_eq!(out.len(), k * m);
    for p in 0..k {
        let x = &patches[p * d..(p + 1) * d];
        let row = &mut out[p * m..(p + 1) * m];
        for r in 0..m {
            row[r] = dot(weights.row(r), x);
        }
    }
}
