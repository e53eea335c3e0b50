//! Declarative experiment manifests: structured text with `[section]`
//! headers and `key = value` entries (TOML), validated into a plan-ready
//! form.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::cognitive::{CasePolicy, Modality, Stimulus};
use crate::embedding::BaselineDistribution;
use crate::error::{Error, Result};
use crate::regression::TrainConfig;
use crate::significance::Alternative;
use crate::util::derive_seed;

/// How hypotheses are counted for a dataset: one per feature column or one
/// per dataset. Defaults to per-feature for eye-tracking and per-dataset
/// otherwise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HypothesisGrouping {
    PerFeature,
    PerDataset,
}

/// One pretrained embedding to evaluate.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingEntry {
    pub name: String,
    pub path: PathBuf,
    /// Hidden-size search space; defaults derived from the dimension when
    /// absent.
    pub candidates: Option<Vec<usize>>,
}

/// One cognitive dataset to predict.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetEntry {
    pub name: String,
    pub modality: Modality,
    pub stimulus: Stimulus,
    /// Single aggregated CSV, or per-subject CSVs to average.
    pub path: Option<PathBuf>,
    pub subject_paths: Vec<PathBuf>,
    pub scale: bool,
    pub voxel_count: Option<usize>,
    pub voxel_seed: Option<u64>,
    pub grouping: HypothesisGrouping,
    pub record_dimension_errors: bool,
}

/// Baseline generation settings.
#[derive(Debug, Clone, PartialEq)]
pub struct BaselineSettings {
    pub count: usize,
    pub seed: u64,
    pub distribution: BaselineDistribution,
}

/// A validated experiment manifest.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentManifest {
    pub master_seed: u64,
    pub alpha: f64,
    pub output_dir: Option<PathBuf>,
    pub parallelism: usize,
    pub case_policy: CasePolicy,
    pub alternative: Alternative,
    pub train: TrainConfig,
    pub baseline: BaselineSettings,
    /// Per-modality overrides of the Bonferroni hypothesis count.
    pub n_overrides: BTreeMap<Modality, usize>,
    pub embeddings: Vec<EmbeddingEntry>,
    pub datasets: Vec<DatasetEntry>,
}

/// Default hidden-size candidates for a dimension: half and a sixth,
/// rounded, deduplicated (300 -> [150, 50]).
pub fn default_candidates(dimension: usize) -> Vec<usize> {
    let mut candidates: Vec<usize> = [dimension as f64 / 2.0, dimension as f64 / 6.0]
        .iter()
        .map(|v| (v.round() as usize).max(1))
        .collect();
    candidates.dedup();
    candidates
}

// Raw deserialization targets; defaults and validation are applied after.

#[derive(Debug, Deserialize, Default)]
struct RawManifest {
    experiment: Option<RawExperiment>,
    train: Option<RawTrain>,
    baseline: Option<RawBaseline>,
    significance: Option<RawSignificance>,
    #[serde(default)]
    embedding: Vec<RawEmbedding>,
    #[serde(default)]
    dataset: Vec<RawDataset>,
}

#[derive(Debug, Deserialize, Default)]
struct RawExperiment {
    #[allow(dead_code)]
    name: Option<String>,
    master_seed: Option<u64>,
    alpha: Option<f64>,
    output_dir: Option<String>,
    parallelism: Option<usize>,
    case_policy: Option<CasePolicy>,
    alternative: Option<Alternative>,
}

#[derive(Debug, Deserialize, Default)]
struct RawTrain {
    learning_rate: Option<f64>,
    epochs: Option<usize>,
    batch_size: Option<usize>,
    adam_beta1: Option<f64>,
    adam_beta2: Option<f64>,
    adam_epsilon: Option<f64>,
    early_stop_patience: Option<usize>,
}

#[derive(Debug, Deserialize, Default)]
struct RawBaseline {
    count: Option<usize>,
    seed: Option<u64>,
    distribution: Option<BaselineDistribution>,
}

#[derive(Debug, Deserialize, Default)]
struct RawSignificance {
    n_eye_tracking: Option<usize>,
    n_eeg: Option<usize>,
    n_fmri: Option<usize>,
}

#[derive(Debug, Deserialize)]
struct RawEmbedding {
    name: String,
    path: String,
    candidates: Option<Vec<usize>>,
}

#[derive(Debug, Deserialize)]
struct RawDataset {
    name: String,
    modality: Modality,
    stimulus: Option<Stimulus>,
    path: Option<String>,
    #[serde(default)]
    subject_paths: Vec<String>,
    scale: Option<bool>,
    voxel_count: Option<usize>,
    voxel_seed: Option<u64>,
    hypothesis_grouping: Option<HypothesisGrouping>,
    record_dimension_errors: Option<bool>,
}

const KNOWN_SECTIONS: &[&str] = &[
    "experiment",
    "train",
    "baseline",
    "significance",
    "embedding",
    "dataset",
];
const KNOWN_EXPERIMENT: &[&str] = &[
    "name",
    "master_seed",
    "alpha",
    "output_dir",
    "parallelism",
    "case_policy",
    "alternative",
];
const KNOWN_TRAIN: &[&str] = &[
    "learning_rate",
    "epochs",
    "batch_size",
    "adam_beta1",
    "adam_beta2",
    "adam_epsilon",
    "early_stop_patience",
];
const KNOWN_BASELINE: &[&str] = &["count", "seed", "distribution"];
const KNOWN_SIGNIFICANCE: &[&str] = &["n_eye_tracking", "n_eeg", "n_fmri"];
const KNOWN_EMBEDDING: &[&str] = &["name", "path", "candidates"];
const KNOWN_DATASET: &[&str] = &[
    "name",
    "modality",
    "stimulus",
    "path",
    "subject_paths",
    "scale",
    "voxel_count",
    "voxel_seed",
    "hypothesis_grouping",
    "record_dimension_errors",
];

fn check_keys(warnings: &mut Vec<String>, section: &str, table: &toml::Table, known: &[&str]) {
    for key in table.keys() {
        if !known.contains(&key.as_str()) {
            warnings.push(format!("unknown key `{key}` in [{section}]"));
        }
    }
}

fn unknown_key_warnings(value: &toml::Table) -> Vec<String> {
    let mut warnings = Vec::new();
    for (section, entry) in value {
        match section.as_str() {
            "experiment" | "train" | "baseline" | "significance" => {
                if let Some(table) = entry.as_table() {
                    let known = match section.as_str() {
                        "experiment" => KNOWN_EXPERIMENT,
                        "train" => KNOWN_TRAIN,
                        "baseline" => KNOWN_BASELINE,
                        _ => KNOWN_SIGNIFICANCE,
                    };
                    check_keys(&mut warnings, section, table, known);
                }
            }
            "embedding" | "dataset" => {
                if let Some(entries) = entry.as_array() {
                    let known = if section == "embedding" {
                        KNOWN_EMBEDDING
                    } else {
                        KNOWN_DATASET
                    };
                    for item in entries.iter().filter_map(|v| v.as_table()) {
                        check_keys(&mut warnings, section, item, known);
                    }
                }
            }
            other => {
                if !KNOWN_SECTIONS.contains(&other) {
                    warnings.push(format!("unknown section [{other}]"));
                }
            }
        }
    }
    warnings
}

/// Parses and validates a manifest. Returns the manifest and a list of
/// warnings (unknown keys). Relative paths resolve against the manifest's
/// directory; all missing paths are reported in one pass.
pub fn parse_manifest(path: &Path) -> Result<(ExperimentManifest, Vec<String>)> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Manifest(format!("{}: {e}", path.display())))?;
    let base_dir = path
        .parent()
        .unwrap_or_else(|| Path::new("."))
        .to_path_buf();
    parse_manifest_str(&text, &base_dir)
}

/// Same as [`parse_manifest`] on already-loaded text.
pub fn parse_manifest_str(
    text: &str,
    base_dir: &Path,
) -> Result<(ExperimentManifest, Vec<String>)> {
    let table: toml::Table = text
        .parse()
        .map_err(|e: toml::de::Error| Error::Manifest(e.to_string()))?;
    let warnings = unknown_key_warnings(&table);
    let raw: RawManifest = table
        .try_into()
        .map_err(|e: toml::de::Error| Error::Manifest(e.to_string()))?;

    let experiment = raw.experiment.unwrap_or_default();
    let master_seed = experiment.master_seed.unwrap_or(0);
    let alpha = experiment.alpha.unwrap_or(0.01);
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Manifest(format!(
            "alpha {alpha} outside (0, 1) in [experiment]"
        )));
    }
    let parallelism = experiment.parallelism.unwrap_or(1);
    if parallelism == 0 {
        return Err(Error::Manifest(
            "parallelism must be at least 1 in [experiment]".into(),
        ));
    }

    let train_raw = raw.train.unwrap_or_default();
    let defaults = TrainConfig::default();
    let train = TrainConfig {
        learning_rate: train_raw.learning_rate.unwrap_or(defaults.learning_rate),
        epochs: train_raw.epochs.unwrap_or(defaults.epochs),
        batch_size: train_raw.batch_size.unwrap_or(defaults.batch_size),
        adam_beta1: train_raw.adam_beta1.unwrap_or(defaults.adam_beta1),
        adam_beta2: train_raw.adam_beta2.unwrap_or(defaults.adam_beta2),
        adam_epsilon: train_raw.adam_epsilon.unwrap_or(defaults.adam_epsilon),
        seed: 0, // derived per job from master_seed
        early_stop_patience: train_raw.early_stop_patience,
    };
    train
        .validate()
        .map_err(|e| Error::Manifest(format!("{e} in [train]")))?;

    let baseline_raw = raw.baseline.unwrap_or_default();
    let baseline = BaselineSettings {
        count: baseline_raw.count.unwrap_or(5),
        seed: baseline_raw
            .seed
            .unwrap_or_else(|| derive_seed(master_seed, &["baseline"])),
        distribution: baseline_raw.distribution.unwrap_or_default(),
    };
    if baseline.count == 0 {
        return Err(Error::Manifest(
            "count must be at least 1 in [baseline]".into(),
        ));
    }

    let significance = raw.significance.unwrap_or_default();
    let mut n_overrides = BTreeMap::new();
    for (modality, n) in [
        (Modality::EyeTracking, significance.n_eye_tracking),
        (Modality::Eeg, significance.n_eeg),
        (Modality::Fmri, significance.n_fmri),
    ] {
        if let Some(n) = n {
            if n == 0 {
                return Err(Error::Manifest(format!(
                    "hypothesis count for {modality} must be at least 1 in [significance]"
                )));
            }
            n_overrides.insert(modality, n);
        }
    }

    if raw.embedding.is_empty() {
        return Err(Error::Manifest(
            "at least one [[embedding]] is required".into(),
        ));
    }
    if raw.dataset.is_empty() {
        return Err(Error::Manifest(
            "at least one [[dataset]] is required".into(),
        ));
    }

    let mut embeddings = Vec::new();
    for entry in raw.embedding {
        if let Some(candidates) = &entry.candidates {
            if candidates.is_empty() || candidates.contains(&0) {
                return Err(Error::Manifest(format!(
                    "candidates for embedding `{}` must be non-empty positive integers",
                    entry.name
                )));
            }
        }
        embeddings.push(EmbeddingEntry {
            name: entry.name,
            path: base_dir.join(entry.path),
            candidates: entry.candidates,
        });
    }
    let mut datasets = Vec::new();
    for entry in raw.dataset {
        let grouping = entry.hypothesis_grouping.unwrap_or(match entry.modality {
            Modality::EyeTracking => HypothesisGrouping::PerFeature,
            _ => HypothesisGrouping::PerDataset,
        });
        if entry.path.is_none() && entry.subject_paths.is_empty() {
            return Err(Error::Manifest(format!(
                "dataset `{}` needs `path` or `subject_paths`",
                entry.name
            )));
        }
        if entry.path.is_some() && !entry.subject_paths.is_empty() {
            return Err(Error::Manifest(format!(
                "dataset `{}` has both `path` and `subject_paths`",
                entry.name
            )));
        }
        if entry.voxel_count == Some(0) {
            return Err(Error::Manifest(format!(
                "voxel_count for dataset `{}` must be at least 1",
                entry.name
            )));
        }
        datasets.push(DatasetEntry {
            name: entry.name,
            modality: entry.modality,
            stimulus: entry.stimulus.unwrap_or_default(),
            path: entry.path.map(|p| base_dir.join(p)),
            subject_paths: entry
                .subject_paths
                .iter()
                .map(|p| base_dir.join(p))
                .collect(),
            scale: entry.scale.unwrap_or(true),
            voxel_count: entry.voxel_count,
            voxel_seed: entry.voxel_seed,
            grouping,
            record_dimension_errors: entry.record_dimension_errors.unwrap_or(false),
        });
    }

    // Uniqueness.
    for (kind, names) in [
        (
            "embedding",
            embeddings.iter().map(|e| &e.name).collect::<Vec<_>>(),
        ),
        (
            "dataset",
            datasets.iter().map(|d| &d.name).collect::<Vec<_>>(),
        ),
    ] {
        let mut seen = std::collections::BTreeSet::new();
        for name in names {
            if !seen.insert(name) {
                return Err(Error::Manifest(format!("duplicate {kind} name `{name}`")));
            }
        }
    }

    // Path existence, all failures in one pass.
    let mut missing = Vec::new();
    for entry in &embeddings {
        if !entry.path.is_file() {
            missing.push(entry.path.display().to_string());
        }
    }
    for entry in &datasets {
        for path in entry.path.iter().chain(&entry.subject_paths) {
            if !path.is_file() {
                missing.push(path.display().to_string());
            }
        }
    }
    if !missing.is_empty() {
        return Err(Error::Manifest(format!(
            "missing input files: {}",
            missing.join(", ")
        )));
    }

    Ok((
        ExperimentManifest {
            master_seed,
            alpha,
            output_dir: experiment.output_dir.map(|p| base_dir.join(p)),
            parallelism,
            case_policy: experiment.case_policy.unwrap_or_default(),
            alternative: experiment.alternative.unwrap_or_default(),
            train,
            baseline,
            n_overrides,
            embeddings,
            datasets,
        },
        warnings,
    ))
}
