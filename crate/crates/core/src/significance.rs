//! Wilcoxon signed-rank tests pairing embedding errors against baseline
//! errors, and the Bonferroni correction over hypothesis groups.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::cognitive::Modality;
use crate::error::{Error, Result};
use crate::regression::ExperimentResult;

/// Direction of the test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Alternative {
    /// The differences are predominantly negative (embedding errors below
    /// baseline errors).
    #[default]
    Less,
    TwoSided,
}

/// How the p-value was computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PValueMethod {
    Exact,
    NormalApproximation,
}

impl std::fmt::Display for PValueMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            PValueMethod::Exact => write!(f, "exact"),
            PValueMethod::NormalApproximation => write!(f, "normal_approximation"),
        }
    }
}

/// Wilcoxon signed-rank test result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    /// Sum of the ranks of the positive differences.
    pub w_statistic: f64,
    /// Number of non-zero differences.
    pub n_effective: usize,
    pub p_value: f64,
    pub method: PValueMethod,
    /// True when every difference was zero; no evidence either way.
    pub degenerate: bool,
}

/// Exact enumeration is used up to this many non-zero differences; the
/// tie-corrected normal approximation beyond.
pub const EXACT_LIMIT: usize = 20;

/// Runs the test, choosing the exact distribution for
/// `n_effective <= EXACT_LIMIT` and the normal approximation otherwise.
pub fn wilcoxon_signed_rank(differences: &[f64], alternative: Alternative) -> Result<TestResult> {
    let prepared = prepare(differences)?;
    let Some(prepared) = prepared else {
        return Ok(degenerate_result());
    };
    if prepared.doubled_ranks.len() <= EXACT_LIMIT {
        Ok(exact_test(&prepared, alternative))
    } else {
        Ok(normal_test(&prepared, alternative))
    }
}

/// Forces the requested method regardless of sample size. The exact method
/// is quadratic in n and intended for moderate n only.
pub fn wilcoxon_signed_rank_with(
    differences: &[f64],
    alternative: Alternative,
    method: PValueMethod,
) -> Result<TestResult> {
    let prepared = prepare(differences)?;
    let Some(prepared) = prepared else {
        return Ok(degenerate_result());
    };
    Ok(match method {
        PValueMethod::Exact => exact_test(&prepared, alternative),
        PValueMethod::NormalApproximation => normal_test(&prepared, alternative),
    })
}

fn degenerate_result() -> TestResult {
    TestResult {
        w_statistic: 0.0,
        n_effective: 0,
        p_value: 1.0,
        method: PValueMethod::Exact,
        degenerate: true,
    }
}

struct Prepared {
    /// 2x the average rank of each non-zero |difference|; doubling makes
    /// tied (half-integral) ranks exact integers.
    doubled_ranks: Vec<u64>,
    /// 2x the observed W statistic.
    doubled_w: u64,
}

fn prepare(differences: &[f64]) -> Result<Option<Prepared>> {
    if differences.is_empty() {
        return Err(Error::invalid("no paired differences"));
    }
    if differences.iter().any(|d| !d.is_finite()) {
        return Err(Error::invalid("non-finite difference"));
    }
    // Zero differences are dropped (Wilcoxon's original treatment).
    let mut nonzero: Vec<f64> = differences.iter().copied().filter(|d| *d != 0.0).collect();
    if nonzero.is_empty() {
        return Ok(None);
    }
    nonzero.sort_by(|a, b| a.abs().total_cmp(&b.abs()));

    let n = nonzero.len();
    let mut doubled_ranks = vec![0u64; n];
    let mut positive = vec![false; n];
    let mut i = 0;
    while i < n {
        let mut j = i + 1;
        while j < n && nonzero[j].abs() == nonzero[i].abs() {
            j += 1;
        }
        // Ranks i+1 ..= j share the average rank (i + j + 1) / 2.
        let doubled_average = (i + j + 1) as u64;
        for (k, d) in nonzero.iter().enumerate().take(j).skip(i) {
            doubled_ranks[k] = doubled_average;
            positive[k] = *d > 0.0;
        }
        i = j;
    }
    let doubled_w = doubled_ranks
        .iter()
        .zip(&positive)
        .filter(|(_, &p)| p)
        .map(|(r, _)| r)
        .sum();
    Ok(Some(Prepared {
        doubled_ranks,
        doubled_w,
    }))
}

/// Exact null distribution of the doubled W statistic via convolution over
/// sign assignments: counts[w] = number of assignments with doubled-W = w.
fn exact_distribution(doubled_ranks: &[u64]) -> Vec<f64> {
    let total: u64 = doubled_ranks.iter().sum();
    let mut counts = vec![0.0; total as usize + 1];
    counts[0] = 1.0;
    let mut reach = 0usize;
    for &rank in doubled_ranks {
        let rank = rank as usize;
        reach += rank;
        for w in (0..=reach - rank).rev() {
            if counts[w] > 0.0 {
                counts[w + rank] += counts[w];
            }
        }
    }
    counts
}

fn exact_test(prepared: &Prepared, alternative: Alternative) -> TestResult {
    let counts = exact_distribution(&prepared.doubled_ranks);
    let assignments = 2f64.powi(prepared.doubled_ranks.len() as i32);
    let w = prepared.doubled_w as usize;
    let lower: f64 = counts[..=w].iter().sum();
    let upper: f64 = counts[w..].iter().sum();
    let p_value = match alternative {
        Alternative::Less => lower / assignments,
        Alternative::TwoSided => (2.0 * lower.min(upper) / assignments).min(1.0),
    };
    TestResult {
        w_statistic: prepared.doubled_w as f64 / 2.0,
        n_effective: prepared.doubled_ranks.len(),
        p_value,
        method: PValueMethod::Exact,
        degenerate: false,
    }
}

fn normal_test(prepared: &Prepared, alternative: Alternative) -> TestResult {
    let n = prepared.doubled_ranks.len() as f64;
    let w = prepared.doubled_w as f64 / 2.0;
    let mean = n * (n + 1.0) / 4.0;
    // W = sum r_i B_i over fair signs, so the tie-corrected variance
    // n(n+1)(2n+1)/24 - sum(t^3 - t)/48 equals sum r_i^2 / 4, and the
    // fourth cumulant is -sum r_i^4 / 8. The Edgeworth kurtosis term
    // tightens the mid-range tail where the plain normal is weakest.
    let variance: f64 = prepared
        .doubled_ranks
        .iter()
        .map(|&d| {
            let r = d as f64 / 2.0;
            r * r / 4.0
        })
        .sum();
    if variance <= 0.0 {
        return TestResult {
            w_statistic: w,
            n_effective: prepared.doubled_ranks.len(),
            p_value: 1.0,
            method: PValueMethod::NormalApproximation,
            degenerate: false,
        };
    }
    let kurtosis_4th: f64 = prepared
        .doubled_ranks
        .iter()
        .map(|&d| {
            let r = d as f64 / 2.0;
            -r.powi(4) / 8.0
        })
        .sum();
    let excess_kurtosis = kurtosis_4th / (variance * variance);
    let sd = variance.sqrt();
    // Inclusive tails with a half-rank continuity correction.
    let lower = edgeworth_cdf((w - mean + 0.5) / sd, excess_kurtosis);
    let upper = 1.0 - edgeworth_cdf((w - mean - 0.5) / sd, excess_kurtosis);
    let p_value = match alternative {
        Alternative::Less => lower,
        Alternative::TwoSided => (2.0 * lower.min(upper)).min(1.0),
    };
    TestResult {
        w_statistic: w,
        n_effective: prepared.doubled_ranks.len(),
        p_value,
        method: PValueMethod::NormalApproximation,
        degenerate: false,
    }
}

fn edgeworth_cdf(z: f64, excess_kurtosis: f64) -> f64 {
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let density = (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let correction = density * (excess_kurtosis / 24.0) * (z * z * z - 3.0 * z);
    (normal.cdf(z) - correction).clamp(0.0, 1.0)
}

/// One embedding-vs-baseline comparison on a shared word set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hypothesis {
    pub id: String,
    pub modality: Modality,
    pub embedding_errors: BTreeMap<String, f64>,
    /// Per-word mean over the matched baseline experiments.
    pub baseline_errors: BTreeMap<String, f64>,
}

impl Hypothesis {
    /// Per-word differences embedding - baseline, in word order.
    pub fn differences(&self) -> Vec<f64> {
        self.embedding_errors
            .iter()
            .map(|(word, e)| e - self.baseline_errors[word])
            .collect()
    }
}

/// Pairs an embedding experiment with its baseline experiments. All
/// experiments must share an identical word set; the baseline error per
/// word is the mean over the baseline experiments.
pub fn pair_errors(
    experiment: &ExperimentResult,
    baselines: &[ExperimentResult],
) -> Result<Hypothesis> {
    if baselines.is_empty() {
        return Err(Error::invalid(format!(
            "no baseline experiments for {}",
            experiment.hypothesis_id()
        )));
    }
    let words: Vec<&String> = experiment.per_word_errors.keys().collect();
    for baseline in baselines {
        if baseline.per_word_errors.len() != words.len()
            || !words
                .iter()
                .all(|w| baseline.per_word_errors.contains_key(*w))
        {
            let difference: Vec<String> = experiment
                .per_word_errors
                .keys()
                .filter(|w| !baseline.per_word_errors.contains_key(*w))
                .chain(
                    baseline
                        .per_word_errors
                        .keys()
                        .filter(|w| !experiment.per_word_errors.contains_key(*w)),
                )
                .cloned()
                .collect();
            return Err(Error::WordSetMismatch {
                left: experiment.hypothesis_id(),
                right: baseline.hypothesis_id(),
                difference,
            });
        }
    }
    let baseline_errors = experiment
        .per_word_errors
        .keys()
        .map(|word| {
            let mean = baselines
                .iter()
                .map(|b| b.per_word_errors[word])
                .sum::<f64>()
                / baselines.len() as f64;
            (word.clone(), mean)
        })
        .collect();
    Ok(Hypothesis {
        id: experiment.hypothesis_id(),
        modality: experiment.modality,
        embedding_errors: experiment.per_word_errors.clone(),
        baseline_errors,
    })
}

/// Bonferroni verdicts over a group of hypotheses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrectionOutcome {
    pub alpha: f64,
    /// Number of planned hypotheses; may exceed the number actually run.
    pub n_hypotheses: usize,
    pub threshold: f64,
    pub verdicts: BTreeMap<String, bool>,
    pub significant: usize,
    /// significant / n_hypotheses.
    pub ratio: f64,
}

impl CorrectionOutcome {
    /// "significant/total" as annotated on result charts.
    pub fn label(&self) -> String {
        format!("{}/{}", self.significant, self.n_hypotheses)
    }
}

/// Applies the Bonferroni correction: a hypothesis is significant iff
/// p < alpha / n.
pub fn bonferroni(
    results: &BTreeMap<String, TestResult>,
    alpha: f64,
    n_hypotheses: usize,
) -> Result<CorrectionOutcome> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::invalid(format!("alpha {alpha} outside (0, 1)")));
    }
    if n_hypotheses == 0 {
        return Err(Error::invalid("hypothesis count must be at least 1"));
    }
    if results.len() > n_hypotheses {
        return Err(Error::invalid(format!(
            "{} results exceed the declared {} hypotheses",
            results.len(),
            n_hypotheses
        )));
    }
    let threshold = alpha / n_hypotheses as f64;
    let verdicts: BTreeMap<String, bool> = results
        .iter()
        .map(|(id, r)| (id.clone(), r.p_value < threshold))
        .collect();
    let significant = verdicts.values().filter(|&&v| v).count();
    Ok(CorrectionOutcome {
        alpha,
        n_hypotheses,
        threshold,
        verdicts,
        significant,
        ratio: significant as f64 / n_hypotheses as f64,
    })
}

/// A tested hypothesis with its verdict, for reporting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HypothesisOutcome {
    pub id: String,
    pub modality: Modality,
    pub test: TestResult,
    pub threshold: f64,
    pub significant: bool,
}

/// Per-modality test results and correction outcomes.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SignificanceBattery {
    pub outcomes: Vec<HypothesisOutcome>,
    pub corrections: BTreeMap<Modality, CorrectionOutcome>,
}

/// Tests every embedding experiment against its matched baselines and
/// applies the Bonferroni correction per modality. `n_overrides` replaces
/// the per-modality hypothesis count (to mirror a planned-hypothesis
/// convention); the default is the number actually tested. Baselines match
/// an experiment when they share the prediction unit and the embedding
/// dimension; their word maps are restricted to the experiment's word set
/// before pairing.
pub fn significance_battery(
    experiments: &[ExperimentResult],
    baselines: &[ExperimentResult],
    alpha: f64,
    alternative: Alternative,
    n_overrides: &BTreeMap<Modality, usize>,
) -> Result<SignificanceBattery> {
    let mut tests_by_modality: BTreeMap<Modality, BTreeMap<String, TestResult>> = BTreeMap::new();
    let mut tested = Vec::new();

    for experiment in experiments {
        let matched: Vec<ExperimentResult> = baselines
            .iter()
            .filter(|b| {
                b.unit_key() == experiment.unit_key()
                    && b.embedding_dimension == experiment.embedding_dimension
            })
            .map(|b| restrict_to_words(b, experiment))
            .collect::<Result<_>>()?;
        if matched.is_empty() {
            return Err(Error::MissingResults(vec![format!(
                "baseline (dimension {}) for {}",
                experiment.embedding_dimension,
                experiment.hypothesis_id()
            )]));
        }
        let hypothesis = pair_errors(experiment, &matched)?;
        let test = wilcoxon_signed_rank(&hypothesis.differences(), alternative)?;
        tests_by_modality
            .entry(experiment.modality)
            .or_default()
            .insert(hypothesis.id.clone(), test.clone());
        tested.push((hypothesis.id, experiment.modality, test));
    }

    let mut corrections = BTreeMap::new();
    for (modality, tests) in &tests_by_modality {
        let n = n_overrides.get(modality).copied().unwrap_or(tests.len());
        corrections.insert(*modality, bonferroni(tests, alpha, n)?);
    }

    let outcomes = tested
        .into_iter()
        .map(|(id, modality, test)| {
            let correction = &corrections[&modality];
            HypothesisOutcome {
                significant: correction.verdicts[&id],
                threshold: correction.threshold,
                id,
                modality,
                test,
            }
        })
        .collect();
    Ok(SignificanceBattery {
        outcomes,
        corrections,
    })
}

/// Restricts a baseline's word errors to the experiment's word set,
/// erroring when the baseline is missing any needed word.
fn restrict_to_words(
    baseline: &ExperimentResult,
    experiment: &ExperimentResult,
) -> Result<ExperimentResult> {
    let missing: Vec<String> = experiment
        .per_word_errors
        .keys()
        .filter(|w| !baseline.per_word_errors.contains_key(*w))
        .cloned()
        .collect();
    if !missing.is_empty() {
        return Err(Error::WordSetMismatch {
            left: experiment.hypothesis_id(),
            right: baseline.hypothesis_id(),
            difference: missing,
        });
    }
    let mut restricted = baseline.clone();
    restricted
        .per_word_errors
        .retain(|w, _| experiment.per_word_errors.contains_key(w));
    Ok(restricted)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::regression::TrainConfig;
    use proptest::prelude::*;
    use rand::Rng;

    // Brute-force oracle: enumerate all 2^n sign assignments over the
    // average ranks of |d| and apply the same p-value definition.
    pub(super) fn oracle_wilcoxon(differences: &[f64], alternative: Alternative) -> TestResult {
        let mut nonzero: Vec<f64> = differences.iter().copied().filter(|d| *d != 0.0).collect();
        if nonzero.is_empty() {
            return TestResult {
                w_statistic: 0.0,
                n_effective: 0,
                p_value: 1.0,
                method: PValueMethod::Exact,
                degenerate: true,
            };
        }
        nonzero.sort_by(|a, b| a.abs().total_cmp(&b.abs()));
        let n = nonzero.len();
        let mut ranks = vec![0.0f64; n];
        let mut i = 0;
        while i < n {
            let mut j = i + 1;
            while j < n && nonzero[j].abs() == nonzero[i].abs() {
                j += 1;
            }
            let average = (i + j + 1) as f64 / 2.0;
            for rank in ranks.iter_mut().take(j).skip(i) {
                *rank = average;
            }
            i = j;
        }
        let observed: f64 = nonzero
            .iter()
            .zip(&ranks)
            .filter(|(d, _)| **d > 0.0)
            .map(|(_, r)| *r)
            .sum();

        let assignments = 1u64 << n;
        let mut at_or_below = 0u64;
        let mut at_or_above = 0u64;
        for mask in 0..assignments {
            let w: f64 = (0..n)
                .filter(|bit| mask & (1 << bit) != 0)
                .map(|bit| ranks[bit])
                .sum();
            if w <= observed + 1e-9 {
                at_or_below += 1;
            }
            if w >= observed - 1e-9 {
                at_or_above += 1;
            }
        }
        let total = assignments as f64;
        let p_value = match alternative {
            Alternative::Less => at_or_below as f64 / total,
            Alternative::TwoSided => (2.0 * (at_or_below.min(at_or_above) as f64) / total).min(1.0),
        };
        TestResult {
            w_statistic: observed,
            n_effective: n,
            p_value,
            method: PValueMethod::Exact,
            degenerate: false,
        }
    }

    #[test]
    fn all_negative_differences_give_the_extreme_tail() {
        let result =
            wilcoxon_signed_rank(&[-1.0, -2.0, -3.0, -4.0, -5.0], Alternative::Less).unwrap();
        assert_eq!(result.w_statistic, 0.0);
        assert_eq!(result.n_effective, 5);
        assert_eq!(result.p_value, 1.0 / 32.0);
        assert_eq!(result.method, PValueMethod::Exact);
    }

    #[test]
    fn all_zero_differences_are_degenerate() {
        let result = wilcoxon_signed_rank(&[0.0, 0.0, 0.0], Alternative::Less).unwrap();
        assert!(result.degenerate);
        assert_eq!(result.n_effective, 0);
        assert_eq!(result.p_value, 1.0);
    }

    #[test]
    fn single_positive_difference_among_negatives() {
        // |d| ranks: 1,2,3,4 with the positive difference at rank 4, so
        // W = 4 and P(W <= 4) counts {}, {1}, {2}, {3}, {4}, {1,2}, {1,3}.
        let result = wilcoxon_signed_rank(&[-1.0, -2.0, -3.0, 4.0], Alternative::Less).unwrap();
        assert_eq!(result.w_statistic, 4.0);
        assert_eq!(result.p_value, 7.0 / 16.0);
        let oracle = oracle_wilcoxon(&[-1.0, -2.0, -3.0, 4.0], Alternative::Less);
        assert_eq!(result.p_value, oracle.p_value);

        // With the positive difference at rank 3 instead, W = 3 and
        // P(W <= 3) = 5/16.
        let result = wilcoxon_signed_rank(&[-1.0, -2.0, 3.0, -4.0], Alternative::Less).unwrap();
        assert_eq!(result.w_statistic, 3.0);
        assert_eq!(result.p_value, 5.0 / 16.0);
        let oracle = oracle_wilcoxon(&[-1.0, -2.0, 3.0, -4.0], Alternative::Less);
        assert_eq!(result.p_value, oracle.p_value);
    }

    #[test]
    fn implementation_matches_oracle_on_random_inputs() {
        let mut rng = crate::util::rng_from_seed(17);
        for n in 1..=10usize {
            for _ in 0..40 {
                let differences: Vec<f64> = (0..n)
                    .map(|_| {
                        // Quantized values produce ties and zeros.
                        let v: f64 = rng.gen_range(-5i32..=5i32) as f64 / 2.0;
                        v
                    })
                    .collect();
                if differences.iter().all(|d| *d == 0.0) {
                    continue;
                }
                for alternative in [Alternative::Less, Alternative::TwoSided] {
                    let ours = wilcoxon_signed_rank(&differences, alternative).unwrap();
                    let oracle = oracle_wilcoxon(&differences, alternative);
                    assert!(
                        (ours.p_value - oracle.p_value).abs() < 1e-12,
                        "{differences:?} {alternative:?}: {} vs {}",
                        ours.p_value,
                        oracle.p_value
                    );
                    assert_eq!(ours.w_statistic, oracle.w_statistic);
                }
            }
        }
    }

    // Tie-free differences whose positive ranks form a subset of 1..=n
    // summing to exactly w (greedy from the largest rank down).
    pub(super) fn differences_with_w(n: usize, w: usize) -> Vec<f64> {
        let mut remaining = w;
        let mut differences = Vec::with_capacity(n);
        for rank in (1..=n).rev() {
            if remaining >= rank {
                remaining -= rank;
                differences.push(rank as f64);
            } else {
                differences.push(-(rank as f64));
            }
        }
        assert_eq!(remaining, 0);
        differences
    }

    #[test]
    fn normal_approximation_is_close_to_exact_for_moderate_n() {
        // Exhaustive over every achievable W for tie-free n = 15..=20.
        for n in 15..=20usize {
            let max_w = n * (n + 1) / 2;
            for w in 0..=max_w {
                let differences = differences_with_w(n, w);
                for alternative in [Alternative::Less, Alternative::TwoSided] {
                    let exact =
                        wilcoxon_signed_rank_with(&differences, alternative, PValueMethod::Exact)
                            .unwrap();
                    let approx = wilcoxon_signed_rank_with(
                        &differences,
                        alternative,
                        PValueMethod::NormalApproximation,
                    )
                    .unwrap();
                    assert_eq!(exact.w_statistic, w as f64);
                    assert!(
                        (exact.p_value - approx.p_value).abs() < 0.01,
                        "n={n} w={w}: exact {} vs approx {}",
                        exact.p_value,
                        approx.p_value
                    );
                }
            }
        }
    }

    #[test]
    fn large_samples_use_the_normal_approximation() {
        let differences: Vec<f64> = (1..=25).map(|i| -(i as f64)).collect();
        let result = wilcoxon_signed_rank(&differences, Alternative::Less).unwrap();
        assert_eq!(result.method, PValueMethod::NormalApproximation);
        assert!(result.p_value < 1e-4);
    }

    proptest! {
        // The statistic depends only on ranks, so positive rescaling
        // changes nothing.
        #[test]
        fn p_value_is_scale_invariant(
            differences in proptest::collection::vec(-10.0f64..10.0, 1..30),
            scale in 1e-3f64..1e3,
        ) {
            let scaled: Vec<f64> = differences.iter().map(|d| d * scale).collect();
            let a = wilcoxon_signed_rank(&differences, Alternative::Less).unwrap();
            let b = wilcoxon_signed_rank(&scaled, Alternative::Less).unwrap();
            prop_assert_eq!(a.p_value, b.p_value);
            prop_assert_eq!(a.w_statistic, b.w_statistic);
        }
    }

    fn result_with_errors(name: &str, dataset: &str, errors: &[(&str, f64)]) -> ExperimentResult {
        ExperimentResult {
            embedding_name: name.into(),
            embedding_dimension: 4,
            is_baseline: name.starts_with("baseline"),
            dataset_name: dataset.into(),
            modality: Modality::Eeg,
            feature_label: None,
            candidates: vec![2],
            folds: Vec::new(),
            overall_mse: errors.iter().map(|(_, e)| e).sum::<f64>() / errors.len() as f64,
            per_word_errors: errors.iter().map(|(w, e)| (w.to_string(), *e)).collect(),
            per_dimension_errors: None,
            dimension_labels: None,
            config: TrainConfig::default(),
        }
    }

    #[test]
    fn pairing_averages_baselines() {
        let experiment = result_with_errors("emb", "d", &[("w", 0.5), ("x", 0.1)]);
        let b1 = result_with_errors("baseline-4d-0", "d", &[("w", 0.2), ("x", 0.3)]);
        let b2 = result_with_errors("baseline-4d-1", "d", &[("w", 0.4), ("x", 0.5)]);
        let hypothesis = pair_errors(&experiment, &[b1, b2]).unwrap();
        assert!((hypothesis.baseline_errors["w"] - 0.3).abs() < 1e-12);
        assert!((hypothesis.baseline_errors["x"] - 0.4).abs() < 1e-12);
        let differences = hypothesis.differences();
        assert!((differences[0] - 0.2).abs() < 1e-12);
        assert!((differences[1] + 0.3).abs() < 1e-12);
    }

    #[test]
    fn identical_maps_give_all_zero_differences() {
        let experiment = result_with_errors("emb", "d", &[("w", 0.5)]);
        let baseline = result_with_errors("baseline-4d-0", "d", &[("w", 0.5)]);
        let hypothesis = pair_errors(&experiment, &[baseline]).unwrap();
        assert_eq!(hypothesis.differences(), vec![0.0]);
        let test = wilcoxon_signed_rank(&hypothesis.differences(), Alternative::Less).unwrap();
        assert!(test.degenerate);
    }

    #[test]
    fn missing_word_is_named() {
        let experiment = result_with_errors("emb", "d", &[("w", 0.5), ("x", 0.2)]);
        let baseline = result_with_errors("baseline-4d-0", "d", &[("w", 0.5)]);
        match pair_errors(&experiment, &[baseline]) {
            Err(Error::WordSetMismatch { difference, .. }) => {
                assert_eq!(difference, vec!["x".to_string()]);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    fn p(p_value: f64) -> TestResult {
        TestResult {
            w_statistic: 0.0,
            n_effective: 10,
            p_value,
            method: PValueMethod::Exact,
            degenerate: false,
        }
    }

    #[test]
    fn bonferroni_thresholds_match_declared_hypothesis_counts() {
        let results: BTreeMap<String, TestResult> =
            [("h".to_string(), p(0.5))].into_iter().collect();
        let eye = bonferroni(&results, 0.01, 42).unwrap();
        assert!((eye.threshold - 2.380952380952381e-4).abs() < 1e-12);
        let eeg = bonferroni(&results, 0.01, 4).unwrap();
        assert!((eeg.threshold - 2.5e-3).abs() < 1e-15);
        let fmri = bonferroni(&results, 0.01, 59).unwrap();
        assert!((fmri.threshold - 1.6949152542372882e-4).abs() < 1e-12);
    }

    #[test]
    fn single_hypothesis_is_uncorrected() {
        let results: BTreeMap<String, TestResult> =
            [("h".to_string(), p(0.009))].into_iter().collect();
        let outcome = bonferroni(&results, 0.01, 1).unwrap();
        assert_eq!(outcome.threshold, 0.01);
        assert!(outcome.verdicts["h"]);
        assert_eq!(outcome.label(), "1/1");
    }

    #[test]
    fn verdict_count_is_monotone_in_n() {
        let results: BTreeMap<String, TestResult> = (0..10)
            .map(|i| (format!("h{i}"), p(0.001 * (i + 1) as f64)))
            .collect();
        let mut previous = usize::MAX;
        for n in [10, 20, 40, 80, 200] {
            let outcome = bonferroni(&results, 0.05, n).unwrap();
            assert!(outcome.significant <= previous);
            previous = outcome.significant;
        }
    }

    #[test]
    fn invalid_alpha_is_rejected() {
        let results: BTreeMap<String, TestResult> =
            [("h".to_string(), p(0.5))].into_iter().collect();
        assert!(bonferroni(&results, 0.0, 1).is_err());
        assert!(bonferroni(&results, 1.0, 1).is_err());
        assert!(bonferroni(&results, 0.05, 0).is_err());
    }

    #[test]
    fn shifted_errors_are_detected_reliably() {
        // Embedding errors sit one noise standard deviation below the
        // baseline errors; with n = 200 pairs the verdict at threshold
        // 0.01/50 must be significant in at least 99% of seeds.
        let threshold = 0.01 / 50.0;
        let mut significant = 0;
        let seeds = 100u64;
        for seed in 0..seeds {
            let mut rng = crate::util::rng_from_seed(seed + 1000);
            let differences: Vec<f64> = (0..200)
                .map(|_| {
                    let u1: f64 = rng.gen::<f64>().max(f64::MIN_POSITIVE);
                    let u2: f64 = rng.gen();
                    let noise = (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
                    -0.1 + 0.1 * noise
                })
                .collect();
            let test = wilcoxon_signed_rank(&differences, Alternative::Less).unwrap();
            if test.p_value < threshold {
                significant += 1;
            }
        }
        assert!(significant >= 99, "only {significant}/{seeds} significant");
    }

    #[test]
    fn battery_counts_and_labels_per_modality() {
        // Six all-negative differences reach p = 1/64, below 0.05/2.
        let low = &[
            ("a", 0.1),
            ("b", 0.2),
            ("c", 0.15),
            ("d", 0.12),
            ("e", 0.18),
            ("f", 0.11),
        ];
        let high = &[
            ("a", 0.9),
            ("b", 0.8),
            ("c", 0.85),
            ("d", 0.82),
            ("e", 0.88),
            ("f", 0.91),
        ];
        let base = &[
            ("a", 0.5),
            ("b", 0.6),
            ("c", 0.55),
            ("d", 0.52),
            ("e", 0.58),
            ("f", 0.56),
        ];
        let experiments = vec![
            result_with_errors("emb", "d1", low),
            result_with_errors("emb", "d2", high),
        ];
        let baselines = vec![
            result_with_errors("baseline-4d-0", "d1", base),
            result_with_errors("baseline-4d-0", "d2", base),
        ];
        let battery = significance_battery(
            &experiments,
            &baselines,
            0.05,
            Alternative::Less,
            &BTreeMap::new(),
        )
        .unwrap();
        let correction = &battery.corrections[&Modality::Eeg];
        assert_eq!(correction.n_hypotheses, 2);
        assert_eq!(correction.significant, 1);
        assert_eq!(correction.label(), "1/2");
        assert!((correction.ratio - 0.5).abs() < 1e-12);

        // Override mirrors a planned-hypothesis convention.
        let overrides: BTreeMap<Modality, usize> = [(Modality::Eeg, 59)].into_iter().collect();
        let overridden = significance_battery(
            &experiments,
            &baselines,
            0.01,
            Alternative::Less,
            &overrides,
        )
        .unwrap();
        let correction = &overridden.corrections[&Modality::Eeg];
        assert_eq!(correction.n_hypotheses, 59);
        assert!((correction.threshold - 0.01 / 59.0).abs() < 1e-15);
    }

    #[test]
    fn battery_requires_matched_baselines() {
        let experiments = vec![result_with_errors("emb", "d1", &[("a", 0.1)])];
        let baselines = vec![result_with_errors("baseline-4d-0", "d2", &[("a", 0.5)])];
        assert!(matches!(
            significance_battery(
                &experiments,
                &baselines,
                0.05,
                Alternative::Less,
                &BTreeMap::new(),
            ),
            Err(Error::MissingResults(_))
        ));
    }

    #[test]
    fn battery_restricts_baselines_to_experiment_words() {
        let experiments = vec![result_with_errors("emb", "d1", &[("a", 0.1), ("b", 0.2)])];
        let baselines = vec![result_with_errors(
            "baseline-4d-0",
            "d1",
            &[("a", 0.5), ("b", 0.6), ("extra", 0.7)],
        )];
        let battery = significance_battery(
            &experiments,
            &baselines,
            0.05,
            Alternative::Less,
            &BTreeMap::new(),
        )
        .unwrap();
        assert_eq!(battery.outcomes.len(), 1);
        assert_eq!(battery.outcomes[0].test.n_effective, 2);
    }
}
