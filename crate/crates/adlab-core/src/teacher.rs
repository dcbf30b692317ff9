//! Margin-oracle teachers.
//!
//! The analysis only ever consumes the teacher through the aligned margin
//! `y * f_T(X)`, which is `Gamma` on learnable samples for every teacher and
//! differs only on unlearnable ones: `0` for a Good teacher, `Gamma` for a
//! Bad teacher, or a caller-chosen value for `CustomMargin` (which is what
//! the entropy-criterion margin sweep uses). Simulating teacher weight
//! matrices would add nothing, so teachers are oracles, not networks.
//!
//! Teacher outputs depend only on the teacher parameters and the sample's
//! learnability flag, never on noise patch values. In particular a teacher's
//! margin on an adversarially perturbed sample equals its margin on the clean
//! sample.

use crate::datagen::Sample;
use crate::math::{binary_entropy_of_margin, sigmoid};

/// Teacher behavior on unlearnable samples.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum TeacherKind {
    /// Uncertain on unlearnable samples: margin 0.
    Good,
    /// Confident on unlearnable samples: margin `Gamma`.
    Bad,
    /// Margin `custom_unlearnable_margin` on unlearnable samples.
    CustomMargin,
}

/// A teacher configuration.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TeacherSpec {
    pub kind: TeacherKind,
    /// Teacher margin on learnable samples (and on unlearnable ones for `Bad`).
    pub gamma: f64,
    /// Unlearnable-sample margin used by `CustomMargin`; ignored otherwise.
    pub custom_unlearnable_margin: f64,
}

impl TeacherSpec {
    pub fn good(gamma: f64) -> Self {
        TeacherSpec { kind: TeacherKind::Good, gamma, custom_unlearnable_margin: 0.0 }
    }

    pub fn bad(gamma: f64) -> Self {
        TeacherSpec { kind: TeacherKind::Bad, gamma, custom_unlearnable_margin: gamma }
    }

    pub fn custom(gamma: f64, unlearnable_margin: f64) -> Self {
        TeacherSpec { kind: TeacherKind::CustomMargin, gamma, custom_unlearnable_margin: unlearnable_margin }
    }
}

/// Soft label induced by the teacher margin: probability mass on the true
/// label and its complement.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SoftLabel {
    pub p_plus: f64,
    pub p_minus: f64,
}

/// Aligned teacher margin `y * f_T(X)`.
pub fn teacher_margin(spec: &TeacherSpec, sample: &Sample) -> f64 {
    if sample.learnable {
        spec.gamma
    } else {
        match spec.kind {
            TeacherKind::Good => 0.0,
            TeacherKind::Bad => spec.gamma,
            TeacherKind::CustomMargin => spec.custom_unlearnable_margin,
        }
    }
}

/// Soft label `(sigma(y f_T), 1 - sigma(y f_T))`.
pub fn soft_label(spec: &TeacherSpec, sample: &Sample) -> SoftLabel {
    let margin = teacher_margin(spec, sample);
    let p_plus = sigmoid(margin);
    SoftLabel { p_plus, p_minus: sigmoid(-margin) }
}

/// Binary Shannon entropy (nats) of the teacher's soft label on `sample`.
pub fn teacher_entropy(spec: &TeacherSpec, sample: &Sample) -> f64 {
    binary_entropy_of_margin(teacher_margin(spec, sample))
}
