//! Study orchestration: the dichotomy sweep over unlearnable fractions and
//! methods, consensus identification of the unlearnable set, and the
//! teacher-entropy selection criterion.
//!
//! Everything here is pure: cells are fully determined by `(p_un, method,
//! seed)`, so callers may execute them concurrently and aggregate in cell
//! order. Seeds derive per-role streams with [`crate::math::subseed`]; two
//! cells sharing `(p_un, seed)` see the same dataset, initialization and
//! test set, which makes method-to-method comparisons paired.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::adversary::{pgd_attack, AttackConfig};
use crate::datagen::{generate_dataset, sample_test_learnable, Dataset, Sample, SyntheticConfig};
use crate::error::{Error, Result};
use crate::math::{spearman, subseed, SeedRole};
use crate::network::{forward, init_weights, StudentWeights};
use crate::teacher::{teacher_entropy, TeacherSpec};
use crate::training::{train, Objective, TrainConfig, TrainResult};

/// Training method of one sweep cell.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum SweepMethod {
    At,
    AdGood,
    AdBad,
    AdCustom(f64),
}

impl SweepMethod {
    pub fn label(&self) -> String {
        match self {
            SweepMethod::At => String::from("at"),
            SweepMethod::AdGood => String::from("ad_good"),
            SweepMethod::AdBad => String::from("ad_bad"),
            SweepMethod::AdCustom(margin) => format!("ad_custom_{margin}"),
        }
    }

    pub fn objective(&self, gamma: f64) -> Objective {
        match self {
            SweepMethod::At => Objective::At,
            SweepMethod::AdGood => Objective::Ad(TeacherSpec::good(gamma)),
            SweepMethod::AdBad => Objective::Ad(TeacherSpec::bad(gamma)),
            SweepMethod::AdCustom(margin) => Objective::Ad(TeacherSpec::custom(gamma, *margin)),
        }
    }
}

/// A dichotomy sweep: the cross product of unlearnable fractions, methods
/// and seeds on a shared base configuration.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SweepSpec {
    pub data: SyntheticConfig,
    pub train: TrainConfig,
    /// Teacher margin used by the AD methods.
    pub gamma: f64,
    pub p_un_values: Vec<f64>,
    pub methods: Vec<SweepMethod>,
    pub seeds: Vec<u64>,
    pub test_count: usize,
    /// Student width.
    pub init_m: usize,
    /// Student initialization scale.
    pub init_sigma_0: f64,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        self.data.validate()?;
        self.train.validate()?;
        if self.p_un_values.is_empty() || self.methods.is_empty() || self.seeds.is_empty() {
            return Err(Error::InvalidConfig(String::from(
                "sweep needs non-empty p_un_values, methods and seeds",
            )));
        }
        if self.test_count == 0 {
            return Err(Error::InvalidConfig(String::from("test_count must be >= 1")));
        }
        Ok(())
    }

    /// Cells in deterministic order.
    pub fn cells(&self) -> Vec<CellSpec> {
        let mut out = Vec::new();
        for &p_un in &self.p_un_values {
            for method in &self.methods {
                for &seed in &self.seeds {
                    out.push(CellSpec { p_un, method: *method, seed });
                }
            }
        }
        out
    }
}

/// One sweep cell.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CellSpec {
    pub p_un: f64,
    pub method: SweepMethod,
    pub seed: u64,
}

/// Outcome of one cell; `diverged` cells carry the failing iteration and NaN
/// metrics so the sweep can continue.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CellResult {
    pub p_un: f64,
    pub method: SweepMethod,
    pub seed: u64,
    pub diverged: Option<usize>,
    pub final_robust_train_acc: f64,
    pub final_robust_test_acc: f64,
    pub peak_robust_test_acc: f64,
    pub peak_iteration: usize,
    pub final_clean_test_acc: f64,
    pub t0: Option<usize>,
    pub t1: Option<usize>,
    /// Peak minus final robust test accuracy.
    pub degradation: f64,
}

/// The assembled sweep output.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepTable {
    pub cells: Vec<CellResult>,
}

/// Build the dataset, init and test set of a cell and train it.
///
/// Returns the full training result next to the summary row so callers can
/// persist logs or reuse checkpoints.
pub fn run_cell(spec: &SweepSpec, cell: &CellSpec) -> Result<(CellResult, Option<TrainResult>)> {
    let mut data = spec.data.clone();
    data.p_un = cell.p_un;
    data.seed = subseed(cell.seed, SeedRole::Dataset);
    let dataset = generate_dataset(&data)?;
    let test = sample_test_learnable(&data, spec.test_count, subseed(cell.seed, SeedRole::TestSet))?;
    // m and sigma_0 ride in on the train config via the init weights, which
    // the caller sizes through `SweepSpec::train`; they are provided here.
    let init = init_weights(spec.init_m, data.d, spec.init_sigma_0, subseed(cell.seed, SeedRole::Init))?;
    let mut tc = spec.train.clone();
    tc.objective = cell.method.objective(spec.gamma);
    match train(&dataset, &init, &tc, &test) {
        Ok(result) => {
            let last = result.log.rows.last().expect("at least one logged row");
            let row = CellResult {
                p_un: cell.p_un,
                method: cell.method,
                seed: cell.seed,
                diverged: None,
                final_robust_train_acc: last.robust_train_acc,
                final_robust_test_acc: last.robust_test_acc,
                peak_robust_test_acc: result.peak.robust_test_acc,
                peak_iteration: result.peak.iteration,
                final_clean_test_acc: last.clean_test_acc,
                t0: result.hitting.t0,
                t1: result.hitting.t1,
                degradation: result.peak.robust_test_acc - last.robust_test_acc,
            };
            Ok((row, Some(result)))
        }
        Err(Error::Divergence { iteration, .. }) => Ok((
            CellResult {
                p_un: cell.p_un,
                method: cell.method,
                seed: cell.seed,
                diverged: Some(iteration),
                final_robust_train_acc: f64::NAN,
                final_robust_test_acc: f64::NAN,
                peak_robust_test_acc: f64::NAN,
                peak_iteration: 0,
                final_clean_test_acc: f64::NAN,
                t0: None,
                t1: None,
                degradation: f64::NAN,
            },
            None,
        )),
        Err(e) => Err(e),
    }
}

/// Run every cell sequentially. Callers wanting parallelism map
/// [`SweepSpec::cells`] through [`run_cell`] themselves and keep cell order.
pub fn run_dichotomy_sweep(spec: &SweepSpec) -> Result<SweepTable> {
    spec.validate()?;
    let mut cells = Vec::new();
    for cell in spec.cells() {
        let (row, _) = run_cell(spec, &cell)?;
        cells.push(row);
    }
    Ok(SweepTable { cells })
}

/// Consensus identification of the learnable/unlearnable split from an
/// ensemble of peak-accuracy checkpoints.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct IdentificationResult {
    /// Samples robustly correct under every checkpoint.
    pub estimated_learnable: Vec<usize>,
    /// Samples robustly wrong under every checkpoint.
    pub estimated_unlearnable: Vec<usize>,
    /// Samples with mixed outcomes (excluded from both sets).
    pub unclassified: Vec<usize>,
    /// `histogram[c]` = number of samples robustly correct under exactly `c`
    /// checkpoints.
    pub histogram: Vec<usize>,
    pub ensemble_size: usize,
}

/// Classify every training sample by the strict intersection rule: learnable
/// iff robustly correct for all checkpoints, unlearnable iff robustly wrong
/// for all.
pub fn identify_unlearnable_set(
    checkpoints: &[StudentWeights],
    dataset: &Dataset,
    attack: &AttackConfig,
) -> Result<IdentificationResult> {
    if checkpoints.is_empty() {
        return Err(Error::EmptyDomain(String::from("checkpoint list is empty")));
    }
    attack.validate()?;
    let m = checkpoints.len();
    let n = dataset.n();
    let mut counts = alloc::vec![0usize; n];
    for w in checkpoints {
        for (i, sample) in dataset.samples.iter().enumerate() {
            let adv = pgd_attack(w, sample, attack)?;
            if sample.label * forward(w, &adv)? > 0.0 {
                counts[i] += 1;
            }
        }
    }
    let mut histogram = alloc::vec![0usize; m + 1];
    let mut learnable = Vec::new();
    let mut unlearnable = Vec::new();
    let mut unclassified = Vec::new();
    for (i, &c) in counts.iter().enumerate() {
        histogram[c] += 1;
        if c == m {
            learnable.push(i);
        } else if c == 0 {
            unlearnable.push(i);
        } else {
            unclassified.push(i);
        }
    }
    Ok(IdentificationResult {
        estimated_learnable: learnable,
        estimated_unlearnable: unlearnable,
        unclassified,
        histogram,
        ensemble_size: m,
    })
}

/// One row of the entropy-criterion table.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EntropyRow {
    /// Teacher margin on unlearnable samples.
    pub margin: f64,
    /// Mean teacher entropy on the proxy unlearnable set (adversarial
    /// examples of the reference student).
    pub mean_entropy: f64,
    pub final_robust_test_acc: f64,
}

/// Output of the entropy-criterion study.
#[derive(Debug, Clone)]
pub struct EntropyStudy {
    pub rows: Vec<EntropyRow>,
    /// Spearman rank correlation between entropy and final robust test
    /// accuracy; `None` when undefined (constant ranks or empty proxy).
    pub spearman: Option<f64>,
    /// Proxy unlearnable set from the reference run's peak checkpoint.
    pub proxy_unlearnable: Vec<usize>,
    /// The reference adversarial-training run.
    pub reference: TrainResult,
    /// The distilled students, one per margin, in `rows` order.
    pub students: Vec<TrainResult>,
}

/// Proxy unlearnable set: training samples robustly misclassified by a
/// single reference checkpoint under `attack`.
pub fn proxy_unlearnable_set(
    reference: &StudentWeights,
    dataset: &Dataset,
    attack: &AttackConfig,
) -> Result<Vec<usize>> {
    let mut out = Vec::new();
    for (i, sample) in dataset.samples.iter().enumerate() {
        let adv = pgd_attack(reference, sample, attack)?;
        if sample.label * forward(reference, &adv)? <= 0.0 {
            out.push(i);
        }
    }
    Ok(out)
}

/// Run the teacher-selection study.
///
/// An AT reference is trained first; its peak checkpoint furnishes the proxy
/// unlearnable set and the adversarial examples on which teacher entropy is
/// evaluated. One student is then distilled per margin using a custom-margin
/// teacher, and the study reports mean entropy against final robust test
/// accuracy with their Spearman rank correlation.
pub fn entropy_criterion_study(
    dataset: &Dataset,
    test_set: &[Sample],
    base: &TrainConfig,
    init: &StudentWeights,
    gamma: f64,
    margins: &[f64],
    id_attack: &AttackConfig,
) -> Result<EntropyStudy> {
    let mut at_config = base.clone();
    at_config.objective = Objective::At;
    let reference = train(dataset, init, &at_config, test_set)?;
    entropy_criterion_study_with_reference(dataset, test_set, base, init, gamma, margins, id_attack, reference)
}

/// Same as [`entropy_criterion_study`] but reusing an existing reference run
/// (trained on the same dataset with the same init).
#[allow(clippy::too_many_arguments)]
pub fn entropy_criterion_study_with_reference(
    dataset: &Dataset,
    test_set: &[Sample],
    base: &TrainConfig,
    init: &StudentWeights,
    gamma: f64,
    margins: &[f64],
    id_attack: &AttackConfig,
    reference: TrainResult,
) -> Result<EntropyStudy> {
    if margins.is_empty() {
        return Err(Error::InvalidConfig(String::from("margins must be non-empty")));
    }
    let proxy = proxy_unlearnable_set(&reference.peak.weights, dataset, id_attack)?;
    if proxy.is_empty() {
        return Ok(EntropyStudy {
            rows: Vec::new(),
            spearman: None,
            proxy_unlearnable: proxy,
            reference,
            students: Vec::new(),
        });
    }
    // adversarial examples of the proxy set against the reference student
    let adv_proxy: Vec<Sample> = proxy
        .iter()
        .map(|&i| pgd_attack(&reference.peak.weights, &dataset.samples[i], id_attack))
        .collect::<Result<_>>()?;

    let mut rows = Vec::new();
    let mut students = Vec::new();
    for &margin in margins {
        let spec = TeacherSpec::custom(gamma, margin);
        let mean_entropy =
            adv_proxy.iter().map(|s| teacher_entropy(&spec, s)).sum::<f64>() / adv_proxy.len() as f64;
        let mut tc = base.clone();
        tc.objective = Objective::Ad(spec);
        let student = train(dataset, init, &tc, test_set)?;
        let final_acc = student.log.rows.last().expect("logged rows").robust_test_acc;
        rows.push(EntropyRow { margin, mean_entropy, final_robust_test_acc: final_acc });
        students.push(student);
    }
    let xs: Vec<f64> = rows.iter().map(|r| r.mean_entropy).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.final_robust_test_acc).collect();
    let rho = spearman(&xs, &ys);
    Ok(EntropyStudy { rows, spearman: rho, proxy_unlearnable: proxy, reference, students })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::generate_dataset;
    use crate::network::init_weights;

    fn small_spec() -> SweepSpec {
        SweepSpec {
            data: SyntheticConfig { d: 16, n: 10, p: 3, alpha: 4.0, sigma_n: 0.4, p_un: 0.0, seed: 0 },
            train: {
                let mut tc = TrainConfig::new(0.05, 0.5, 20, Objective::At);
                tc.log_every = 10;
                tc.eval_attack = AttackConfig::pgd(0.5, 4);
                tc
            },
            gamma: 10.0,
            p_un_values: alloc::vec![0.0, 0.3],
            methods: alloc::vec![SweepMethod::At, SweepMethod::AdGood],
            seeds: alloc::vec![1, 2],
            test_count: 6,
            init_m: 4,
            init_sigma_0: 0.05,
        }
    }

    #[test]
    fn cell_order_is_deterministic_and_complete() {
        let spec = small_spec();
        let cells = spec.cells();
        assert_eq!(cells.len(), 8);
        assert_eq!(cells[0], CellSpec { p_un: 0.0, method: SweepMethod::At, seed: 1 });
        assert_eq!(cells[7], CellSpec { p_un: 0.3, method: SweepMethod::AdGood, seed: 2 });
    }

    #[test]
    fn sweep_runs_and_is_reproducible() {
        let spec = small_spec();
        let a = run_dichotomy_sweep(&spec).unwrap();
        let b = run_dichotomy_sweep(&spec).unwrap();
        assert_eq!(a.cells, b.cells);
        for cell in &a.cells {
            assert!(cell.diverged.is_none());
            assert!(cell.peak_robust_test_acc >= cell.final_robust_test_acc);
            assert!((cell.degradation
                - (cell.peak_robust_test_acc - cell.final_robust_test_acc))
                .abs()
                < 1e-15);
        }
    }

    #[test]
    fn single_cell_reduces_to_one_train_call() {
        let mut spec = small_spec();
        spec.p_un_values = alloc::vec![0.3];
        spec.methods = alloc::vec![SweepMethod::At];
        spec.seeds = alloc::vec![5];
        let table = run_dichotomy_sweep(&spec).unwrap();
        assert_eq!(table.cells.len(), 1);
        // reproduce by hand
        let cell = CellSpec { p_un: 0.3, method: SweepMethod::At, seed: 5 };
        let (row, result) = run_cell(&spec, &cell).unwrap();
        assert!(result.is_some());
        assert_eq!(row, table.cells[0]);
    }

    #[test]
    fn identification_unanimity_and_intersection() {
        let data = SyntheticConfig { d: 16, n: 8, p: 3, alpha: 4.0, sigma_n: 0.4, p_un: 0.5, seed: 3 };
        let dataset = generate_dataset(&data).unwrap();
        let attack = AttackConfig::pgd(0.0, 1); // no perturbation: clean predictions
        // a strong hand-built classifier: w = e_1 responds to learnable signal
        let mut strong = init_weights(1, 16, 0.05, 1).unwrap();
        strong.weights.fill(0.0);
        strong.weights[0] = 1.0;
        let res = identify_unlearnable_set(&[strong.clone()], &dataset, &attack).unwrap();
        // learnable samples have margin alpha^3 > 0; unlearnable logits are 0 (tie = wrong)
        assert_eq!(res.estimated_learnable, dataset.learnable_indices);
        assert_eq!(res.estimated_unlearnable, dataset.unlearnable_indices);
        assert!(res.unclassified.is_empty());

        // complementary checkpoints: strict intersection empties both sets
        let mut anti = strong.clone();
        anti.weights[0] = -1.0;
        let res = identify_unlearnable_set(&[strong, anti], &dataset, &attack).unwrap();
        assert!(res.estimated_learnable.is_empty());
        // unlearnable samples are wrong under both (zero logit both times)
        assert_eq!(res.estimated_unlearnable, dataset.unlearnable_indices);
        let mixed = dataset.learnable_indices.len();
        assert_eq!(res.unclassified.len(), mixed);
        assert_eq!(res.histogram.iter().sum::<usize>(), dataset.n());

        let empty: [StudentWeights; 0] = [];
        assert!(matches!(
            identify_unlearnable_set(&empty, &dataset, &attack),
            Err(Error::EmptyDomain(_))
        ));
    }

    #[test]
    fn identification_is_checkpoint_order_invariant() {
        let data = SyntheticConfig { d: 16, n: 8, p: 3, alpha: 4.0, sigma_n: 0.4, p_un: 0.5, seed: 4 };
        let dataset = generate_dataset(&data).unwrap();
        let attack = AttackConfig::pgd(0.3, 3);
        let a = init_weights(3, 16, 0.2, 1).unwrap();
        let b = init_weights(3, 16, 0.2, 2).unwrap();
        let fwd = identify_unlearnable_set(&[a.clone(), b.clone()], &dataset, &attack).unwrap();
        let rev = identify_unlearnable_set(&[b, a], &dataset, &attack).unwrap();
        assert_eq!(fwd.estimated_learnable, rev.estimated_learnable);
        assert_eq!(fwd.estimated_unlearnable, rev.estimated_unlearnable);
        assert_eq!(fwd.histogram, rev.histogram);
    }
}
