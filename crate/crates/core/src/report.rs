//! Aggregation of experiment results into tables, correlations, rankings,
//! and serialized reports.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::regression::{ExperimentResult, TrainConfig};
use crate::significance::SignificanceBattery;

pub const SCHEMA_VERSION: u32 = 1;

/// Aggregation granularity.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AggregationLevel {
    Dataset,
    Modality,
    Global,
}

/// Unweighted mean of `overall_mse` per (embedding, group). Group keys are
/// dataset names, modality names, or `"all"` depending on the level.
pub fn aggregate(
    results: &[ExperimentResult],
    level: AggregationLevel,
) -> BTreeMap<String, BTreeMap<String, f64>> {
    let mut sums: BTreeMap<String, BTreeMap<String, (f64, usize)>> = BTreeMap::new();
    for result in results {
        let group = match level {
            AggregationLevel::Dataset => result.dataset_name.clone(),
            AggregationLevel::Modality => result.modality.to_string(),
            AggregationLevel::Global => "all".to_string(),
        };
        let cell = sums
            .entry(result.embedding_name.clone())
            .or_default()
            .entry(group)
            .or_insert((0.0, 0));
        cell.0 += result.overall_mse;
        cell.1 += 1;
    }
    sums.into_iter()
        .map(|(embedding, groups)| {
            let means = groups
                .into_iter()
                .map(|(group, (sum, count))| (group, sum / count as f64))
                .collect();
            (embedding, means)
        })
        .collect()
}

/// Correlation between two aligned series keyed by embedding name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationResult {
    /// None when a series is constant and the coefficient is undefined.
    pub pearson_r: Option<f64>,
    pub spearman_rho: Option<f64>,
    pub n: usize,
    /// (label, x, y) scatter points.
    pub points: Vec<(String, f64, f64)>,
}

fn pearson_of(xs: &[f64], ys: &[f64]) -> Option<f64> {
    let n = xs.len() as f64;
    let mean_x = xs.iter().sum::<f64>() / n;
    let mean_y = ys.iter().sum::<f64>() / n;
    let mut covariance = 0.0;
    let mut var_x = 0.0;
    let mut var_y = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        covariance += (x - mean_x) * (y - mean_y);
        var_x += (x - mean_x).powi(2);
        var_y += (y - mean_y).powi(2);
    }
    if var_x == 0.0 || var_y == 0.0 {
        return None;
    }
    Some(covariance / (var_x * var_y).sqrt())
}

fn average_ranks(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i + 1;
        while j < n && values[order[j]] == values[order[i]] {
            j += 1;
        }
        let average = (i + j + 1) as f64 / 2.0;
        for &index in &order[i..j] {
            ranks[index] = average;
        }
        i = j;
    }
    ranks
}

/// Pearson product-moment correlation plus Spearman (Pearson on average
/// ranks) over the embeddings present in both series.
pub fn correlate(
    series_x: &BTreeMap<String, f64>,
    series_y: &BTreeMap<String, f64>,
) -> Result<CorrelationResult> {
    let shared: Vec<&String> = series_x
        .keys()
        .filter(|k| series_y.contains_key(*k))
        .collect();
    if shared.len() < 2 {
        return Err(Error::invalid(format!(
            "need at least 2 shared points, found {}",
            shared.len()
        )));
    }
    let xs: Vec<f64> = shared.iter().map(|k| series_x[*k]).collect();
    let ys: Vec<f64> = shared.iter().map(|k| series_y[*k]).collect();
    let pearson_r = pearson_of(&xs, &ys);
    let spearman_rho = pearson_of(&average_ranks(&xs), &average_ranks(&ys));
    Ok(CorrelationResult {
        pearson_r,
        spearman_rho,
        n: shared.len(),
        points: shared
            .iter()
            .enumerate()
            .map(|(i, k)| ((*k).clone(), xs[i], ys[i]))
            .collect(),
    })
}

/// A labeled correlation between two series, with notes about skipped or
/// excluded entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledCorrelation {
    pub series_x: String,
    pub series_y: String,
    pub result: CorrelationResult,
}

/// Everything the pipeline knows after aggregation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub schema_version: u32,
    /// embedding -> dataset -> mean MSE.
    pub mse_tables: BTreeMap<String, BTreeMap<String, f64>>,
    /// embedding -> modality name -> mean MSE.
    pub modality_aggregates: BTreeMap<String, BTreeMap<String, f64>>,
    /// embedding -> global mean MSE.
    pub global_aggregates: BTreeMap<String, f64>,
    pub significance: Option<SignificanceBattery>,
    /// Names of baseline tables included in the tables above.
    pub baseline_names: BTreeSet<String>,
    pub modalities: BTreeMap<String, Vec<String>>,
    pub config: Option<TrainConfig>,
    /// Free-text provenance collected from the inputs.
    pub provenance: Vec<String>,
    pub notes: Vec<String>,
}

/// Builds a report from experiment results. `significance` may be attached
/// when the battery has been run.
pub fn build_report(
    results: &[ExperimentResult],
    significance: Option<SignificanceBattery>,
    provenance: Vec<String>,
) -> Result<EvaluationReport> {
    if results.is_empty() {
        return Err(Error::invalid("no experiment results to report"));
    }
    let mut modalities: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for result in results {
        let datasets = modalities.entry(result.modality.to_string()).or_default();
        if !datasets.contains(&result.dataset_name) {
            datasets.push(result.dataset_name.clone());
        }
    }
    let baseline_names = results
        .iter()
        .filter(|r| r.is_baseline)
        .map(|r| r.embedding_name.clone())
        .collect();
    let config = results.first().map(|r| r.config.clone());
    Ok(EvaluationReport {
        schema_version: SCHEMA_VERSION,
        mse_tables: aggregate(results, AggregationLevel::Dataset),
        modality_aggregates: aggregate(results, AggregationLevel::Modality),
        global_aggregates: aggregate(results, AggregationLevel::Global)
            .into_iter()
            .filter_map(|(embedding, mut groups)| groups.remove("all").map(|v| (embedding, v)))
            .collect(),
        significance,
        baseline_names,
        modalities,
        config,
        provenance,
        notes: Vec::new(),
    })
}

impl EvaluationReport {
    fn embedding_series(&self, modality: &str) -> BTreeMap<String, f64> {
        self.modality_aggregates
            .iter()
            .filter(|(embedding, _)| !self.baseline_names.contains(*embedding))
            .filter_map(|(embedding, groups)| groups.get(modality).map(|v| (embedding.clone(), *v)))
            .collect()
    }
}

/// Correlates per-embedding aggregate MSEs between every modality pair.
/// Baseline tables are excluded; pairs with fewer than two shared
/// embeddings are skipped with a note.
pub fn cross_modality_correlation(
    report: &EvaluationReport,
) -> Result<(Vec<LabeledCorrelation>, Vec<String>)> {
    let modality_names: Vec<String> = report.modalities.keys().cloned().collect();
    if modality_names.len() < 2 {
        return Err(Error::invalid("need at least 2 modalities to correlate"));
    }
    let mut correlations = Vec::new();
    let mut notes = Vec::new();
    for i in 0..modality_names.len() {
        for j in i + 1..modality_names.len() {
            let xs = report.embedding_series(&modality_names[i]);
            let ys = report.embedding_series(&modality_names[j]);
            match correlate(&xs, &ys) {
                Ok(result) => correlations.push(LabeledCorrelation {
                    series_x: modality_names[i].clone(),
                    series_y: modality_names[j].clone(),
                    result,
                }),
                Err(_) => notes.push(format!(
                    "skipped {} vs {}: fewer than 2 shared embeddings",
                    modality_names[i], modality_names[j]
                )),
            }
        }
    }
    Ok((correlations, notes))
}

/// Correlates per-embedding dataset MSEs between dataset pairs within each
/// modality.
pub fn within_modality_correlation(
    report: &EvaluationReport,
) -> Result<(Vec<LabeledCorrelation>, Vec<String>)> {
    let mut correlations = Vec::new();
    let mut notes = Vec::new();
    for datasets in report.modalities.values() {
        for i in 0..datasets.len() {
            for j in i + 1..datasets.len() {
                let series = |name: &str| -> BTreeMap<String, f64> {
                    report
                        .mse_tables
                        .iter()
                        .filter(|(embedding, _)| !report.baseline_names.contains(*embedding))
                        .filter_map(|(embedding, groups)| {
                            groups.get(name).map(|v| (embedding.clone(), *v))
                        })
                        .collect()
                };
                match correlate(&series(&datasets[i]), &series(&datasets[j])) {
                    Ok(result) => correlations.push(LabeledCorrelation {
                        series_x: datasets[i].clone(),
                        series_y: datasets[j].clone(),
                        result,
                    }),
                    Err(_) => notes.push(format!(
                        "skipped {} vs {}: fewer than 2 shared embeddings",
                        datasets[i], datasets[j]
                    )),
                }
            }
        }
    }
    Ok((correlations, notes))
}

/// Correlates global aggregate MSE against supplied task scores. Embeddings
/// missing from either side are excluded and listed in the notes.
pub fn extrinsic_correlation(
    report: &EvaluationReport,
    task_scores: &BTreeMap<String, f64>,
    task_name: &str,
) -> Result<(LabeledCorrelation, Vec<String>)> {
    let mse: BTreeMap<String, f64> = report
        .global_aggregates
        .iter()
        .filter(|(embedding, _)| !report.baseline_names.contains(*embedding))
        .map(|(embedding, v)| (embedding.clone(), *v))
        .collect();
    let mut notes = Vec::new();
    for embedding in mse.keys() {
        if !task_scores.contains_key(embedding) {
            notes.push(format!("{embedding}: no {task_name} score supplied"));
        }
    }
    for embedding in task_scores.keys() {
        if !mse.contains_key(embedding) {
            notes.push(format!("{embedding}: no prediction results"));
        }
    }
    let result = correlate(&mse, task_scores)?;
    Ok((
        LabeledCorrelation {
            series_x: "mse".to_string(),
            series_y: task_name.to_string(),
            result,
        },
        notes,
    ))
}

/// Mean error per output dimension across the given results for one
/// dataset, sorted ascending (best predicted first), ties broken by label.
pub fn rank_output_dimensions(results: &[ExperimentResult]) -> Result<Vec<(String, f64)>> {
    let with_dims: Vec<&ExperimentResult> = results
        .iter()
        .filter(|r| r.per_dimension_errors.is_some())
        .collect();
    if with_dims.is_empty() {
        return Err(Error::invalid(
            "no per-dimension errors recorded; re-run with dimension recording enabled",
        ));
    }
    let labels = with_dims[0]
        .dimension_labels
        .as_ref()
        .ok_or_else(|| Error::invalid("per-dimension errors lack labels"))?;
    if labels.len() < 2 {
        return Err(Error::invalid("output-dimension ranking needs m >= 2"));
    }
    let mut sums = vec![0.0; labels.len()];
    for result in &with_dims {
        let errors = result.per_dimension_errors.as_ref().unwrap();
        if errors.len() != labels.len() {
            return Err(Error::invalid(format!(
                "{}: {} dimension errors, expected {}",
                result.hypothesis_id(),
                errors.len(),
                labels.len()
            )));
        }
        for (sum, e) in sums.iter_mut().zip(errors) {
            *sum += e;
        }
    }
    let mut ranked: Vec<(String, f64)> = labels
        .iter()
        .cloned()
        .zip(sums.into_iter().map(|s| s / with_dims.len() as f64))
        .collect();
    ranked.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    Ok(ranked)
}

/// First `k` entries of a ranking (clamped to its length).
pub fn best_k(ranked: &[(String, f64)], k: usize) -> &[(String, f64)] {
    &ranked[..k.min(ranked.len())]
}

/// Last `k` entries of a ranking, worst last.
pub fn worst_k(ranked: &[(String, f64)], k: usize) -> &[(String, f64)] {
    &ranked[ranked.len() - k.min(ranked.len())..]
}

/// Output format for [`emit_report`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    CsvBundle,
}

/// Writes the report under `dir`: `report.json`, or a CSV bundle of the
/// MSE tables, significance rows, and plot-data series (`x,y,label,series`
/// columns).
pub fn emit_report(report: &EvaluationReport, dir: &Path, format: ReportFormat) -> Result<()> {
    fs::create_dir_all(dir)?;
    match format {
        ReportFormat::Json => {
            let path = dir.join("report.json");
            let json = serde_json::to_string_pretty(report)?;
            fs::write(path, json)?;
        }
        ReportFormat::CsvBundle => {
            write_table_csv(&dir.join("mse_by_dataset.csv"), &report.mse_tables)?;
            write_table_csv(
                &dir.join("mse_by_modality.csv"),
                &report.modality_aggregates,
            )?;
            let mut global = fs::File::create(dir.join("mse_global.csv"))?;
            writeln!(global, "embedding,mse")?;
            for (embedding, mse) in &report.global_aggregates {
                writeln!(global, "{embedding},{mse}")?;
            }
            if let Some(battery) = &report.significance {
                write_significance_csv(&dir.join("significance.csv"), battery)?;
                write_significance_summary_csv(&dir.join("significance_summary.csv"), battery)?;
            }
            let plots = dir.join("plots");
            fs::create_dir_all(&plots)?;
            let (cross, _) = cross_modality_correlation(report).unwrap_or_default();
            for correlation in &cross {
                write_plot_csv(&plots, "cross", correlation)?;
            }
            let (within, _) = within_modality_correlation(report).unwrap_or_default();
            for correlation in &within {
                write_plot_csv(&plots, "within", correlation)?;
            }
        }
    }
    Ok(())
}

/// Reads back a JSON report.
pub fn load_report(path: &Path) -> Result<EvaluationReport> {
    let text = fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

fn write_table_csv(path: &Path, table: &BTreeMap<String, BTreeMap<String, f64>>) -> Result<()> {
    let columns: BTreeSet<String> = table
        .values()
        .flat_map(|groups| groups.keys().cloned())
        .collect();
    let mut file = fs::File::create(path)?;
    write!(file, "embedding")?;
    for column in &columns {
        write!(file, ",{column}")?;
    }
    writeln!(file)?;
    for (embedding, groups) in table {
        write!(file, "{embedding}")?;
        for column in &columns {
            match groups.get(column) {
                Some(value) => write!(file, ",{value}")?,
                None => write!(file, ",")?,
            }
        }
        writeln!(file)?;
    }
    Ok(())
}

/// `hypothesis_id,modality,W,n,p,method,threshold,significant` rows.
pub fn write_significance_csv(path: &Path, battery: &SignificanceBattery) -> Result<()> {
    let mut file = fs::File::create(path)?;
    writeln!(
        file,
        "hypothesis_id,modality,W,n,p,method,threshold,significant"
    )?;
    for outcome in &battery.outcomes {
        writeln!(
            file,
            "{},{},{},{},{},{},{},{}",
            outcome.id,
            outcome.modality,
            outcome.test.w_statistic,
            outcome.test.n_effective,
            outcome.test.p_value,
            outcome.test.method,
            outcome.threshold,
            outcome.significant
        )?;
    }
    Ok(())
}

/// Per-modality `significant/total` summary rows.
pub fn write_significance_summary_csv(path: &Path, battery: &SignificanceBattery) -> Result<()> {
    let mut file = fs::File::create(path)?;
    writeln!(file, "modality,significant,total,label,ratio,threshold")?;
    for (modality, correction) in &battery.corrections {
        writeln!(
            file,
            "{},{},{},{},{},{}",
            modality,
            correction.significant,
            correction.n_hypotheses,
            correction.label(),
            correction.ratio,
            correction.threshold
        )?;
    }
    Ok(())
}

/// One scatter series as `x,y,label,series` rows.
pub fn write_plot_csv(dir: &Path, prefix: &str, correlation: &LabeledCorrelation) -> Result<()> {
    let name = format!(
        "{prefix}_{}_vs_{}.csv",
        sanitize(&correlation.series_x),
        sanitize(&correlation.series_y)
    );
    let mut file = fs::File::create(dir.join(name))?;
    writeln!(file, "x,y,label,series")?;
    let series = format!("{}|{}", correlation.series_x, correlation.series_y);
    for (label, x, y) in &correlation.result.points {
        writeln!(file, "{x},{y},{label},{series}")?;
    }
    Ok(())
}

fn sanitize(name: &str) -> String {
    name.chars()
        .map(|c| {
            if c.is_alphanumeric() || c == '-' || c == '_' {
                c
            } else {
                '_'
            }
        })
        .collect()
}
