//! Word-level cognitive datasets and their preprocessing contracts:
//! word-type aggregation, subject averaging, min-max scaling, and random
//! output-dimension (voxel) sampling.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::path::Path;

use ndarray::Array2;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::embedding::WordVectorTable;
use crate::error::{Error, Result};
use crate::util::rng_from_seed;

/// Recording modality of a cognitive signal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    EyeTracking,
    Eeg,
    Fmri,
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Modality::EyeTracking => write!(f, "eye_tracking"),
            Modality::Eeg => write!(f, "eeg"),
            Modality::Fmri => write!(f, "fmri"),
        }
    }
}

/// How stimuli were presented to the participants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stimulus {
    #[default]
    Text,
    Speech,
    Image,
}

/// A named, modality-tagged map from word to an m-dimensional target
/// vector with feature labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CognitiveDataset {
    pub name: String,
    pub modality: Modality,
    pub stimulus: Stimulus,
    pub feature_labels: Vec<String>,
    pub targets: BTreeMap<String, Vec<f64>>,
    /// Number of subjects averaged into the targets; 0 when unknown.
    pub subject_count: usize,
}

impl CognitiveDataset {
    /// Output dimension m.
    pub fn output_dim(&self) -> usize {
        self.feature_labels.len()
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    fn validate(&self) -> Result<()> {
        if self.feature_labels.is_empty() {
            return Err(Error::invalid(format!(
                "dataset {}: no feature labels",
                self.name
            )));
        }
        let m = self.feature_labels.len();
        for (word, vector) in &self.targets {
            if vector.len() != m {
                return Err(Error::invalid(format!(
                    "dataset {}: word {word:?} has {} values, expected {m}",
                    self.name,
                    vector.len()
                )));
            }
            if vector.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid(format!(
                    "dataset {}: word {word:?} has a non-finite value",
                    self.name
                )));
            }
        }
        Ok(())
    }

    /// Restricts the dataset to a single feature column (m = 1).
    pub fn select_feature(&self, label: &str) -> Result<CognitiveDataset> {
        let index = self
            .feature_labels
            .iter()
            .position(|l| l == label)
            .ok_or_else(|| {
                Error::invalid(format!("dataset {}: no feature {label:?}", self.name))
            })?;
        Ok(CognitiveDataset {
            name: self.name.clone(),
            modality: self.modality,
            stimulus: self.stimulus,
            feature_labels: vec![label.to_string()],
            targets: self
                .targets
                .iter()
                .map(|(w, v)| (w.clone(), vec![v[index]]))
                .collect(),
            subject_count: self.subject_count,
        })
    }

    /// Explodes the dataset into one single-feature dataset per feature.
    pub fn split_features(&self) -> Vec<CognitiveDataset> {
        self.feature_labels
            .iter()
            .map(|label| self.select_feature(label).expect("label from own list"))
            .collect()
    }
}

/// One subject's targets before averaging; words may be missing.
#[derive(Debug, Clone, PartialEq)]
pub struct SubjectTable {
    pub subject_id: String,
    pub feature_labels: Vec<String>,
    pub targets: BTreeMap<String, Vec<f64>>,
}

type FeatureRows = (Vec<String>, BTreeMap<String, Vec<f64>>);

/// Parses a feature CSV: header `word,label1,..,labelm`, one row per word
/// occurrence. Rows repeating a word are averaged component-wise
/// (word-type aggregation).
fn read_feature_csv(path: &Path) -> Result<FeatureRows> {
    let source = path.display().to_string();
    let file = File::open(path)?;
    let mut reader = csv::ReaderBuilder::new().flexible(true).from_reader(file);

    let headers = reader
        .headers()
        .map_err(|e| Error::parse(&source, 1, e.to_string()))?
        .clone();
    if headers.len() < 2 {
        return Err(Error::parse(&source, 1, "header must be `word,label1,...`"));
    }
    let labels: Vec<String> = headers.iter().skip(1).map(str::to_string).collect();
    if labels.iter().any(String::is_empty) {
        return Err(Error::parse(&source, 1, "empty feature label in header"));
    }
    let m = labels.len();

    // word -> (component sums, occurrence count)
    let mut accum: BTreeMap<String, (Vec<f64>, usize)> = BTreeMap::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = match e.position() {
                Some(pos) => pos.line(),
                None => 0,
            };
            Error::parse(&source, line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != m + 1 {
            return Err(Error::parse(
                &source,
                line,
                format!("expected {} fields, found {}", m + 1, record.len()),
            ));
        }
        let word = record.get(0).unwrap_or("").trim();
        if word.is_empty() {
            return Err(Error::parse(&source, line, "empty word"));
        }
        let mut values = Vec::with_capacity(m);
        for cell in record.iter().skip(1) {
            let value: f64 = cell
                .trim()
                .parse()
                .map_err(|_| Error::parse(&source, line, format!("non-numeric cell {cell:?}")))?;
            if !value.is_finite() {
                return Err(Error::parse(
                    &source,
                    line,
                    format!("non-finite cell {cell:?}"),
                ));
            }
            values.push(value);
        }
        let entry = accum
            .entry(word.to_string())
            .or_insert_with(|| (vec![0.0; m], 0));
        for (sum, v) in entry.0.iter_mut().zip(&values) {
            *sum += v;
        }
        entry.1 += 1;
    }
    if accum.is_empty() {
        return Err(Error::EmptyFile(path.to_path_buf()));
    }
    let targets = accum
        .into_iter()
        .map(|(word, (sums, count))| (word, sums.into_iter().map(|s| s / count as f64).collect()))
        .collect();
    Ok((labels, targets))
}

/// Loads a dataset from a feature CSV.
pub fn load_dataset_csv(
    path: &Path,
    name: impl Into<String>,
    modality: Modality,
    stimulus: Stimulus,
) -> Result<CognitiveDataset> {
    let (feature_labels, targets) = read_feature_csv(path)?;
    let dataset = CognitiveDataset {
        name: name.into(),
        modality,
        stimulus,
        feature_labels,
        targets,
        subject_count: 0,
    };
    dataset.validate()?;
    Ok(dataset)
}

/// Loads one subject's table; same CSV schema as datasets.
pub fn load_subject_csv(path: &Path, subject_id: impl Into<String>) -> Result<SubjectTable> {
    let (feature_labels, targets) = read_feature_csv(path)?;
    Ok(SubjectTable {
        subject_id: subject_id.into(),
        feature_labels,
        targets,
    })
}

/// Averages feature values over all subjects in which each word appears.
/// Words missing from a subject are skipped, not zero-filled.
///
/// Subjects are processed in `subject_id` order, so the result does not
/// depend on the order of the input list.
pub fn average_over_subjects(
    name: impl Into<String>,
    modality: Modality,
    stimulus: Stimulus,
    tables: &[SubjectTable],
) -> Result<CognitiveDataset> {
    if tables.is_empty() {
        return Err(Error::invalid("no subject tables"));
    }
    let labels = &tables[0].feature_labels;
    for table in tables {
        if &table.feature_labels != labels {
            return Err(Error::invalid(format!(
                "subject {} has feature labels {:?}, expected {:?}",
                table.subject_id, table.feature_labels, labels
            )));
        }
    }
    let mut ordered: Vec<&SubjectTable> = tables.iter().collect();
    ordered.sort_by(|a, b| a.subject_id.cmp(&b.subject_id));

    let m = labels.len();
    let mut accum: BTreeMap<String, (Vec<f64>, usize)> = BTreeMap::new();
    for table in ordered {
        for (word, values) in &table.targets {
            let entry = accum
                .entry(word.clone())
                .or_insert_with(|| (vec![0.0; m], 0));
            for (sum, v) in entry.0.iter_mut().zip(values) {
                *sum += v;
            }
            entry.1 += 1;
        }
    }
    let dataset = CognitiveDataset {
        name: name.into(),
        modality,
        stimulus,
        feature_labels: labels.clone(),
        targets: accum
            .into_iter()
            .map(|(word, (sums, count))| {
                (word, sums.into_iter().map(|s| s / count as f64).collect())
            })
            .collect(),
        subject_count: tables.len(),
    };
    dataset.validate()?;
    Ok(dataset)
}

/// Maps each feature column independently to [0, 1] via
/// `x -> (x - min) / (max - min)`. Constant columns map to 0.0 everywhere;
/// their labels are returned so callers can surface the warning.
pub fn min_max_scale(dataset: &CognitiveDataset) -> Result<(CognitiveDataset, Vec<String>)> {
    if dataset.is_empty() {
        return Err(Error::invalid(format!("dataset {} is empty", dataset.name)));
    }
    let m = dataset.output_dim();
    let mut mins = vec![f64::INFINITY; m];
    let mut maxs = vec![f64::NEG_INFINITY; m];
    for vector in dataset.targets.values() {
        for (j, v) in vector.iter().enumerate() {
            mins[j] = mins[j].min(*v);
            maxs[j] = maxs[j].max(*v);
        }
    }
    let mut constant = Vec::new();
    for (j, label) in dataset.feature_labels.iter().enumerate() {
        if maxs[j] == mins[j] {
            constant.push(label.clone());
            log::warn!(
                "dataset {}: feature {label:?} is constant, scaling to 0.0",
                dataset.name
            );
        }
    }
    let targets = dataset
        .targets
        .iter()
        .map(|(word, vector)| {
            let scaled = vector
                .iter()
                .enumerate()
                .map(|(j, v)| {
                    let range = maxs[j] - mins[j];
                    if range == 0.0 {
                        0.0
                    } else {
                        (v - mins[j]) / range
                    }
                })
                .collect();
            (word.clone(), scaled)
        })
        .collect();
    let scaled = CognitiveDataset {
        targets,
        ..dataset.clone()
    };
    debug_assert!(scaled
        .targets
        .values()
        .all(|v| v.iter().all(|x| (0.0..=1.0).contains(x))));
    Ok((scaled, constant))
}

/// Restricts the dataset to a seed-deterministic random subset of `count`
/// feature columns, sampled uniformly without replacement. Column order is
/// preserved.
pub fn select_output_dimensions(
    dataset: &CognitiveDataset,
    count: usize,
    seed: u64,
) -> Result<CognitiveDataset> {
    let m = dataset.output_dim();
    if count == 0 {
        return Err(Error::invalid("cannot select 0 output dimensions"));
    }
    if count > m {
        return Err(Error::invalid(format!(
            "cannot select {count} of {m} output dimensions"
        )));
    }
    let mut rng = rng_from_seed(seed);
    let mut indices: Vec<usize> = (0..m).collect();
    indices.shuffle(&mut rng);
    let mut chosen: Vec<usize> = indices.into_iter().take(count).collect();
    chosen.sort_unstable();

    let feature_labels = chosen
        .iter()
        .map(|&j| dataset.feature_labels[j].clone())
        .collect();
    let targets = dataset
        .targets
        .iter()
        .map(|(word, vector)| (word.clone(), chosen.iter().map(|&j| vector[j]).collect()))
        .collect();
    Ok(CognitiveDataset {
        feature_labels,
        targets,
        ..dataset.clone()
    })
}

/// How words are matched between vector tables and datasets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CasePolicy {
    /// Lowercase both sides before joining.
    #[default]
    Lowercase,
    Exact,
}

/// Row-aligned training arrays for one (table, dataset) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct SupervisionPairs {
    /// N x k embedding inputs.
    pub inputs: Array2<f64>,
    /// N x m cognitive targets.
    pub targets: Array2<f64>,
    /// Words in lexicographic order, one per row.
    pub words: Vec<String>,
}

/// Joins a vector table with a dataset on the shared vocabulary under the
/// given case policy. Rows are ordered lexicographically by word, so the
/// output is independent of input iteration order. When lowercasing folds
/// several source words together, the lexicographically last one wins.
pub fn build_supervision_pairs(
    table: &WordVectorTable,
    dataset: &CognitiveDataset,
    policy: CasePolicy,
) -> Result<SupervisionPairs> {
    let fold = |w: &str| match policy {
        CasePolicy::Lowercase => w.to_lowercase(),
        CasePolicy::Exact => w.to_string(),
    };
    let mut vectors: BTreeMap<String, &[f64]> = BTreeMap::new();
    for (word, vector) in table.iter() {
        vectors.insert(fold(word), vector);
    }
    let mut targets: BTreeMap<String, &[f64]> = BTreeMap::new();
    for (word, vector) in &dataset.targets {
        targets.insert(fold(word), vector);
    }

    let words: Vec<String> = vectors
        .keys()
        .filter(|w| targets.contains_key(*w))
        .cloned()
        .collect();
    if words.is_empty() {
        return Err(Error::EmptyIntersection {
            left: table.name.clone(),
            right: dataset.name.clone(),
        });
    }
    let k = table.dimension;
    let m = dataset.output_dim();
    let mut inputs = Array2::zeros((words.len(), k));
    let mut outs = Array2::zeros((words.len(), m));
    for (i, word) in words.iter().enumerate() {
        inputs
            .row_mut(i)
            .assign(&ndarray::ArrayView1::from(vectors[word]));
        outs.row_mut(i)
            .assign(&ndarray::ArrayView1::from(targets[word]));
    }
    Ok(SupervisionPairs {
        inputs,
        targets: outs,
        words,
    })
}
