//! Cross validation, hidden-size grid search, and the per-combination
//! experiment driver.

use std::collections::BTreeMap;

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::cognitive::{build_supervision_pairs, CasePolicy, CognitiveDataset, Modality};
use crate::embedding::{TableKind, WordVectorTable};
use crate::error::{Error, Result};
use crate::regression::network::{init_network, mse, train, NetworkSpec, TrainConfig};
use crate::util::{derive_seed, rng_from_seed};

/// Seeded shuffle followed by a contiguous partition into `folds` folds.
/// Fold sizes differ by at most one; test sets are disjoint and cover all
/// indices.
pub fn kfold_split(n: usize, folds: usize, seed: u64) -> Result<Vec<(Vec<usize>, Vec<usize>)>> {
    if folds == 0 {
        return Err(Error::invalid("fold count must be at least 1"));
    }
    if n < folds {
        return Err(Error::invalid(format!(
            "cannot split {n} rows into {folds} folds"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng_from_seed(seed));

    let base = n / folds;
    let remainder = n % folds;
    let mut splits = Vec::with_capacity(folds);
    let mut start = 0;
    for fold in 0..folds {
        let size = base + usize::from(fold < remainder);
        let test: Vec<usize> = order[start..start + size].to_vec();
        let train: Vec<usize> = order[..start]
            .iter()
            .chain(&order[start + size..])
            .copied()
            .collect();
        splits.push((train, test));
        start += size;
    }
    Ok(splits)
}

/// Validation score of one hidden-size candidate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateScore {
    pub hidden_units: usize,
    /// Mean validation MSE over the repetitions; infinite when training
    /// failed.
    pub mean_validation_mse: f64,
    pub failed: bool,
}

/// Outcome of the hidden-size grid search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSearchOutcome {
    pub chosen: usize,
    pub scores: Vec<CandidateScore>,
}

const GRID_REPETITIONS: usize = 3;

/// Scores each candidate hidden size by three seeded 80/20 splits of the
/// given rows and returns the candidate with the lowest mean validation
/// MSE (ties go to the smaller size). The same three splits are reused
/// across candidates.
pub fn grid_search_hidden_units(
    inputs: &Array2<f64>,
    targets: &Array2<f64>,
    candidates: &[usize],
    config: &TrainConfig,
) -> Result<GridSearchOutcome> {
    if candidates.is_empty() {
        return Err(Error::invalid("no hidden-size candidates"));
    }
    if candidates.contains(&0) {
        return Err(Error::invalid("hidden-size candidates must be positive"));
    }
    let n = inputs.nrows();
    if n < 2 {
        return Err(Error::invalid(format!(
            "{n} rows are too few for a validation split"
        )));
    }

    // 80/20 split per repetition, at least one row on each side.
    let validation_len = (n / 5).max(1);
    let splits: Vec<(Vec<usize>, Vec<usize>)> = (0..GRID_REPETITIONS)
        .map(|rep| {
            let mut order: Vec<usize> = (0..n).collect();
            let split_seed = derive_seed(config.seed, &["grid-split", &rep.to_string()]);
            order.shuffle(&mut rng_from_seed(split_seed));
            let validation = order[..validation_len].to_vec();
            let training = order[validation_len..].to_vec();
            (training, validation)
        })
        .collect();

    let mut scores = Vec::with_capacity(candidates.len());
    for &hidden_units in candidates {
        let spec = NetworkSpec::new(inputs.ncols(), hidden_units, targets.ncols())?;
        let mut total = 0.0;
        let mut failed = false;
        for (rep, (train_idx, val_idx)) in splits.iter().enumerate() {
            let train_x = inputs.select(Axis(0), train_idx);
            let train_t = targets.select(Axis(0), train_idx);
            let val_x = inputs.select(Axis(0), val_idx);
            let val_t = targets.select(Axis(0), val_idx);

            let labels = ["grid", &hidden_units.to_string(), &rep.to_string()];
            let model = init_network(spec, derive_seed(config.seed, &labels));
            let rep_config = TrainConfig {
                seed: derive_seed(
                    config.seed,
                    &["grid-train", &hidden_units.to_string(), &rep.to_string()],
                ),
                ..config.clone()
            };
            match train(model, &train_x, &train_t, &rep_config) {
                Ok(model) => {
                    total += mse(&model.forward_batch(&val_x), &val_t)?.0;
                }
                Err(Error::NonFiniteLoss { epoch, batch }) => {
                    log::warn!(
                        "candidate {hidden_units}: non-finite loss at epoch {epoch}, batch {batch}; scoring +inf"
                    );
                    failed = true;
                    break;
                }
                Err(other) => return Err(other),
            }
        }
        scores.push(CandidateScore {
            hidden_units,
            mean_validation_mse: if failed {
                f64::INFINITY
            } else {
                total / GRID_REPETITIONS as f64
            },
            failed,
        });
    }

    let chosen = scores
        .iter()
        .filter(|s| !s.failed)
        .min_by(|a, b| {
            a.mean_validation_mse
                .total_cmp(&b.mean_validation_mse)
                .then(a.hidden_units.cmp(&b.hidden_units))
        })
        .map(|s| s.hidden_units)
        .ok_or(Error::AllCandidatesFailed(candidates.len()))?;

    Ok(GridSearchOutcome { chosen, scores })
}

/// One outer cross-validation fold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldOutcome {
    pub fold_index: usize,
    pub chosen_hidden_units: usize,
    pub candidate_scores: Vec<CandidateScore>,
    /// Squared error per test word, averaged over output components.
    pub per_word_errors: BTreeMap<String, f64>,
    /// Mean of `per_word_errors`.
    pub fold_mse: f64,
}

/// Result of fitting one (embedding, dataset, feature) combination.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub embedding_name: String,
    pub embedding_dimension: usize,
    pub is_baseline: bool,
    pub dataset_name: String,
    pub modality: Modality,
    /// None when the whole target vector is predicted.
    pub feature_label: Option<String>,
    pub candidates: Vec<usize>,
    pub folds: Vec<FoldOutcome>,
    /// Mean of the fold MSEs.
    pub overall_mse: f64,
    /// Union over folds; each word is tested in exactly one fold.
    pub per_word_errors: BTreeMap<String, f64>,
    /// Mean squared error per output dimension over all test words, when
    /// recording was requested.
    pub per_dimension_errors: Option<Vec<f64>>,
    pub dimension_labels: Option<Vec<String>>,
    pub config: TrainConfig,
}

impl ExperimentResult {
    /// `embedding/dataset` or `embedding/dataset/feature`.
    pub fn hypothesis_id(&self) -> String {
        match &self.feature_label {
            Some(feature) => format!("{}/{}/{}", self.embedding_name, self.dataset_name, feature),
            None => format!("{}/{}", self.embedding_name, self.dataset_name),
        }
    }

    /// Key identifying the prediction unit this result belongs to.
    pub fn unit_key(&self) -> (String, Option<String>) {
        (self.dataset_name.clone(), self.feature_label.clone())
    }

    /// Writes `word,error` rows for the significance stage.
    pub fn write_word_errors_csv<W: std::io::Write>(&self, mut writer: W) -> Result<()> {
        writeln!(writer, "word,error")?;
        for (word, error) in &self.per_word_errors {
            writeln!(writer, "{word},{error}")?;
        }
        Ok(())
    }
}

/// Knobs that do not affect the trained models themselves.
#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    pub case_policy: CasePolicy,
    /// Record per-output-dimension errors (needed for electrode/voxel
    /// rankings; storage grows with m).
    pub record_dimension_errors: bool,
    /// Seed for the outer fold partition. When set, embeddings evaluated
    /// on the same data share the partition, so per-word error pairs are
    /// tested on identical folds. Defaults to a seed derived from
    /// `config.seed`.
    pub fold_seed: Option<u64>,
}

const OUTER_FOLDS: usize = 5;

/// Runs 5-fold cross validation for one (embedding, dataset, feature)
/// combination: per fold, a grid search picks the hidden size on the
/// training split, the best size is retrained on the full training split,
/// and the held-out words are predicted. Deterministic in `config.seed`.
pub fn run_experiment(
    table: &WordVectorTable,
    dataset: &CognitiveDataset,
    feature: Option<&str>,
    candidates: &[usize],
    config: &TrainConfig,
    options: &RunOptions,
) -> Result<ExperimentResult> {
    config.validate()?;
    let restricted;
    let view = match feature {
        Some(label) => {
            restricted = dataset.select_feature(label)?;
            &restricted
        }
        None => dataset,
    };
    let pairs = build_supervision_pairs(table, view, options.case_policy)?;
    let n = pairs.words.len();
    let m = view.output_dim();

    let fold_seed = options
        .fold_seed
        .unwrap_or_else(|| derive_seed(config.seed, &["outer-folds"]));
    let splits = kfold_split(n, OUTER_FOLDS, fold_seed)?;

    let mut folds = Vec::with_capacity(OUTER_FOLDS);
    let mut all_errors: BTreeMap<String, f64> = BTreeMap::new();
    let mut dimension_sse = vec![0.0; m];

    for (fold_index, (train_idx, test_idx)) in splits.iter().enumerate() {
        let train_x = pairs.inputs.select(Axis(0), train_idx);
        let train_t = pairs.targets.select(Axis(0), train_idx);
        let test_x = pairs.inputs.select(Axis(0), test_idx);
        let test_t = pairs.targets.select(Axis(0), test_idx);

        let search_config = TrainConfig {
            seed: derive_seed(config.seed, &["grid-search", &fold_index.to_string()]),
            ..config.clone()
        };
        let search = grid_search_hidden_units(&train_x, &train_t, candidates, &search_config)?;

        let spec = NetworkSpec::new(table.dimension, search.chosen, m)?;
        let init_seed = derive_seed(config.seed, &["fold-init", &fold_index.to_string()]);
        let fold_config = TrainConfig {
            seed: derive_seed(config.seed, &["fold-train", &fold_index.to_string()]),
            ..config.clone()
        };
        let model = train(
            init_network(spec, init_seed),
            &train_x,
            &train_t,
            &fold_config,
        )?;

        let predictions = model.forward_batch(&test_x);
        let (fold_mse, per_row) = mse(&predictions, &test_t)?;
        if options.record_dimension_errors {
            for (pred, target) in predictions.rows().into_iter().zip(test_t.rows()) {
                for (j, (p, t)) in pred.iter().zip(target.iter()).enumerate() {
                    dimension_sse[j] += (p - t) * (p - t);
                }
            }
        }

        let mut per_word_errors = BTreeMap::new();
        for (row, &word_index) in test_idx.iter().enumerate() {
            per_word_errors.insert(pairs.words[word_index].clone(), per_row[row]);
        }
        all_errors.extend(per_word_errors.clone());

        folds.push(FoldOutcome {
            fold_index,
            chosen_hidden_units: search.chosen,
            candidate_scores: search.scores,
            per_word_errors,
            fold_mse,
        });
    }

    let overall_mse = folds.iter().map(|f| f.fold_mse).sum::<f64>() / folds.len() as f64;
    let (per_dimension_errors, dimension_labels) = if options.record_dimension_errors {
        (
            Some(dimension_sse.into_iter().map(|s| s / n as f64).collect()),
            Some(view.feature_labels.clone()),
        )
    } else {
        (None, None)
    };

    Ok(ExperimentResult {
        embedding_name: table.name.clone(),
        embedding_dimension: table.dimension,
        is_baseline: table.kind == TableKind::Baseline,
        dataset_name: dataset.name.clone(),
        modality: dataset.modality,
        feature_label: feature.map(str::to_string),
        candidates: candidates.to_vec(),
        folds,
        overall_mse,
        per_word_errors: all_errors,
        per_dimension_errors,
        dimension_labels,
        config: config.clone(),
    })
}
