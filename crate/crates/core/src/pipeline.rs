//! Orchestration: load manifest inputs, plan jobs, run them on a bounded
//! worker pool with resumable per-job records, and drive the significance
//! and reporting stages.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::cognitive::{
    average_over_subjects, load_dataset_csv, load_subject_csv, min_max_scale,
    select_output_dimensions, CognitiveDataset,
};
use crate::embedding::{
    generate_baselines, parse_vector_file, table_digest, write_vector_file, BaselineSpec,
    WordVectorTable,
};
use crate::error::{Error, Result};
use crate::manifest::{DatasetEntry, ExperimentManifest, HypothesisGrouping};
use crate::regression::{run_experiment, ExperimentResult, RunOptions, TrainConfig};
use crate::report::{
    build_report, cross_modality_correlation, emit_report, extrinsic_correlation,
    rank_output_dimensions, within_modality_correlation, EvaluationReport, ReportFormat,
};
use crate::significance::{significance_battery, SignificanceBattery};
use crate::util::{content_hash, derive_seed};

/// One prediction target: a dataset, optionally restricted to a single
/// feature.
#[derive(Debug, Clone)]
pub struct AnalysisUnit {
    pub dataset: Arc<CognitiveDataset>,
    pub feature: Option<String>,
    pub record_dimension_errors: bool,
    /// Identity of the preprocessed targets, folded into job hashes.
    pub digest: String,
}

impl AnalysisUnit {
    pub fn key(&self) -> (String, Option<String>) {
        (self.dataset.name.clone(), self.feature.clone())
    }
}

/// Everything loaded and preprocessed for a manifest.
pub struct LoadedInputs {
    pub embeddings: Vec<Arc<WordVectorTable>>,
    pub baselines: Vec<Arc<WordVectorTable>>,
    pub units: Vec<AnalysisUnit>,
    pub provenance: Vec<String>,
}

fn dataset_digest(dataset: &CognitiveDataset, feature: Option<&str>) -> String {
    let mut parts: Vec<String> = vec![
        dataset.name.clone(),
        dataset.modality.to_string(),
        feature.unwrap_or("").to_string(),
        dataset.feature_labels.join("|"),
    ];
    for (word, vector) in &dataset.targets {
        parts.push(word.clone());
        parts.push(
            vector
                .iter()
                .map(|v| v.to_bits().to_string())
                .collect::<Vec<_>>()
                .join(","),
        );
    }
    let refs: Vec<&str> = parts.iter().map(String::as_str).collect();
    content_hash(&refs)
}

fn preprocess_dataset(
    entry: &DatasetEntry,
    master_seed: u64,
) -> Result<(CognitiveDataset, Vec<String>)> {
    let mut provenance = Vec::new();
    let mut dataset = match &entry.path {
        Some(path) => load_dataset_csv(path, &entry.name, entry.modality, entry.stimulus)?,
        None => {
            let mut subjects = Vec::new();
            for (index, path) in entry.subject_paths.iter().enumerate() {
                let id = path
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_else(|| format!("subject-{index}"));
                subjects.push(load_subject_csv(path, id)?);
            }
            average_over_subjects(&entry.name, entry.modality, entry.stimulus, &subjects)?
        }
    };
    if let Some(count) = entry.voxel_count {
        let seed = entry
            .voxel_seed
            .unwrap_or_else(|| derive_seed(master_seed, &["voxels", &entry.name]));
        dataset = select_output_dimensions(&dataset, count, seed)?;
        provenance.push(format!(
            "{}: sampled {count} of the output dimensions (seed {seed})",
            entry.name
        ));
    }
    if entry.scale {
        let (scaled, constant) = min_max_scale(&dataset)?;
        dataset = scaled;
        if !constant.is_empty() {
            provenance.push(format!(
                "{}: constant features scaled to 0: {}",
                entry.name,
                constant.join(", ")
            ));
        }
    }
    Ok((dataset, provenance))
}

/// Loads embeddings and datasets, applies preprocessing, splits
/// eye-tracking style datasets into per-feature units, and generates the
/// dimension-matched baselines over the union of all dataset vocabularies.
pub fn load_inputs(manifest: &ExperimentManifest) -> Result<LoadedInputs> {
    let mut provenance = Vec::new();

    let mut embeddings = Vec::new();
    for entry in &manifest.embeddings {
        let mut table = parse_vector_file(&entry.path)?;
        table.name = entry.name.clone();
        if let Some(note) = &table.provenance {
            provenance.push(format!("{}: {note}", entry.name));
        }
        embeddings.push(Arc::new(table));
    }

    let mut units = Vec::new();
    let mut vocabulary: BTreeSet<String> = BTreeSet::new();
    for entry in &manifest.datasets {
        let (dataset, notes) = preprocess_dataset(entry, manifest.master_seed)?;
        provenance.extend(notes);
        vocabulary.extend(dataset.targets.keys().cloned());
        let dataset = Arc::new(dataset);
        match entry.grouping {
            HypothesisGrouping::PerFeature => {
                for label in dataset.feature_labels.clone() {
                    units.push(AnalysisUnit {
                        digest: dataset_digest(&dataset, Some(&label)),
                        dataset: Arc::clone(&dataset),
                        feature: Some(label),
                        record_dimension_errors: entry.record_dimension_errors,
                    });
                }
            }
            HypothesisGrouping::PerDataset => {
                units.push(AnalysisUnit {
                    digest: dataset_digest(&dataset, None),
                    dataset: Arc::clone(&dataset),
                    feature: None,
                    record_dimension_errors: entry.record_dimension_errors,
                });
            }
        }
    }

    // One baseline family per embedding dimension in use, over every word
    // any dataset might need.
    let mut baselines = Vec::new();
    let mut seen_dims = BTreeSet::new();
    for embedding in &embeddings {
        if !seen_dims.insert(embedding.dimension) {
            continue;
        }
        let spec = BaselineSpec {
            dimension: embedding.dimension,
            seed: derive_seed(manifest.baseline.seed, &[&embedding.dimension.to_string()]),
            count: manifest.baseline.count,
            distribution: manifest.baseline.distribution,
        };
        for table in generate_baselines(&vocabulary, &spec)? {
            baselines.push(Arc::new(table));
        }
    }
    provenance.push(format!(
        "baselines: {} per dimension, {} distribution, seed {}",
        manifest.baseline.count, manifest.baseline.distribution, manifest.baseline.seed
    ));

    Ok(LoadedInputs {
        embeddings,
        baselines,
        units,
        provenance,
    })
}

/// One planned (embedding or baseline) x unit combination.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobSpec {
    pub id: String,
    pub embedding_name: String,
    pub dimension: usize,
    pub is_baseline: bool,
    pub dataset_name: String,
    pub feature: Option<String>,
    pub candidates: Vec<usize>,
    pub seed: u64,
}

/// The ordered job list for a manifest; a pure function of the manifest
/// and its referenced files.
#[derive(Debug, Clone, PartialEq)]
pub struct JobPlan {
    pub jobs: Vec<JobSpec>,
}

fn job_id(
    embedding_name: &str,
    unit: &AnalysisUnit,
    candidates: &[usize],
    config: &TrainConfig,
    table_id: &str,
) -> String {
    let candidates_text = candidates
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join(",");
    let config_text = serde_json::to_string(config).expect("config serializes");
    content_hash(&[
        embedding_name,
        &unit.dataset.name,
        unit.feature.as_deref().unwrap_or(""),
        &candidates_text,
        &config_text,
        table_id,
        &unit.digest,
    ])
}

/// Builds the job plan: for every unit, one job per embedding plus the
/// matched baseline jobs for every embedding dimension in use. Job seeds
/// derive from (master seed, embedding, dataset, feature) so results do
/// not depend on scheduling.
pub fn plan_jobs(manifest: &ExperimentManifest, inputs: &LoadedInputs) -> Result<JobPlan> {
    let mut candidate_by_dim: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    let mut explicit: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (entry, table) in manifest.embeddings.iter().zip(&inputs.embeddings) {
        let candidates = entry
            .candidates
            .clone()
            .unwrap_or_else(|| crate::manifest::default_candidates(table.dimension));
        // Baselines inherit the search space of the first embedding with
        // their dimension, keeping the comparison protocol identical.
        candidate_by_dim
            .entry(table.dimension)
            .or_insert_with(|| candidates.clone());
        explicit.insert(entry.name.clone(), candidates);
    }

    let digests: BTreeMap<&str, String> = inputs
        .embeddings
        .iter()
        .chain(&inputs.baselines)
        .map(|t| (t.name.as_str(), table_digest(t)))
        .collect();

    let mut jobs = Vec::new();
    for unit in &inputs.units {
        let feature = unit.feature.as_deref().unwrap_or("");
        for table in &inputs.embeddings {
            let candidates = explicit[&table.name].clone();
            let seed = derive_seed(
                manifest.master_seed,
                &[&table.name, &unit.dataset.name, feature],
            );
            let config = TrainConfig {
                seed,
                ..manifest.train.clone()
            };
            jobs.push(JobSpec {
                id: job_id(
                    &table.name,
                    unit,
                    &candidates,
                    &config,
                    &digests[table.name.as_str()],
                ),
                embedding_name: table.name.clone(),
                dimension: table.dimension,
                is_baseline: false,
                dataset_name: unit.dataset.name.clone(),
                feature: unit.feature.clone(),
                candidates,
                seed,
            });
        }
        for table in &inputs.baselines {
            let candidates = candidate_by_dim[&table.dimension].clone();
            let seed = derive_seed(
                manifest.master_seed,
                &[&table.name, &unit.dataset.name, feature],
            );
            let config = TrainConfig {
                seed,
                ..manifest.train.clone()
            };
            jobs.push(JobSpec {
                id: job_id(
                    &table.name,
                    unit,
                    &candidates,
                    &config,
                    &digests[table.name.as_str()],
                ),
                embedding_name: table.name.clone(),
                dimension: table.dimension,
                is_baseline: true,
                dataset_name: unit.dataset.name.clone(),
                feature: unit.feature.clone(),
                candidates,
                seed,
            });
        }
    }
    Ok(JobPlan { jobs })
}

/// Result of a `run` invocation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub completed: usize,
    pub skipped: usize,
    /// (job id, error message) for jobs that failed; the run continues
    /// past failures.
    pub failed: Vec<(String, String)>,
}

impl RunSummary {
    pub fn all_ok(&self) -> bool {
        self.failed.is_empty()
    }
}

fn jobs_dir(out_dir: &Path) -> PathBuf {
    out_dir.join("jobs")
}

fn job_record_path(out_dir: &Path, id: &str) -> PathBuf {
    jobs_dir(out_dir).join(format!("{id}.json"))
}

/// Executes the plan with at most `parallelism` concurrent jobs. Completed
/// jobs (matching record file already present) are skipped, making reruns
/// resumable. Each finished job is written to `jobs/<id>.json` and its
/// per-word errors to `word-errors/<id>.csv`; afterwards all available
/// records are assembled into `results.jsonl` in plan order.
pub fn run_jobs(
    manifest: &ExperimentManifest,
    inputs: &LoadedInputs,
    plan: &JobPlan,
    out_dir: &Path,
    parallelism: usize,
) -> Result<RunSummary> {
    fs::create_dir_all(jobs_dir(out_dir))?;
    fs::create_dir_all(out_dir.join("word-errors"))?;

    let tables: BTreeMap<&str, &Arc<WordVectorTable>> = inputs
        .embeddings
        .iter()
        .chain(&inputs.baselines)
        .map(|t| (t.name.as_str(), t))
        .collect();
    let units: BTreeMap<(String, Option<String>), &AnalysisUnit> =
        inputs.units.iter().map(|u| (u.key(), u)).collect();

    let completed = Mutex::new(0usize);
    let skipped = Mutex::new(0usize);
    let failed = Mutex::new(Vec::new());

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism.max(1))
        .build()
        .map_err(|e| Error::invalid(format!("worker pool: {e}")))?;

    pool.install(|| {
        rayon::scope(|scope| {
            for job in &plan.jobs {
                let tables = &tables;
                let units = &units;
                let completed = &completed;
                let skipped = &skipped;
                let failed = &failed;
                scope.spawn(move |_| {
                    let record_path = job_record_path(out_dir, &job.id);
                    if record_path.is_file() {
                        log::info!("job={} status=skipped", job.id);
                        *skipped.lock().unwrap() += 1;
                        return;
                    }
                    let started = Instant::now();
                    match execute_job(manifest, tables, units, job, out_dir) {
                        Ok(result) => {
                            let chosen: Vec<String> = result
                                .folds
                                .iter()
                                .map(|f| f.chosen_hidden_units.to_string())
                                .collect();
                            log::info!(
                                "job={} status=ok wall_ms={} chosen_n={} mse={}",
                                job.id,
                                started.elapsed().as_millis(),
                                chosen.join(","),
                                result.overall_mse
                            );
                            *completed.lock().unwrap() += 1;
                        }
                        Err(error) => {
                            log::error!(
                                "job={} status=failed wall_ms={} error={error}",
                                job.id,
                                started.elapsed().as_millis()
                            );
                            failed
                                .lock()
                                .unwrap()
                                .push((job.id.clone(), error.to_string()));
                        }
                    }
                });
            }
        });
    });

    let summary = RunSummary {
        completed: completed.into_inner().unwrap(),
        skipped: skipped.into_inner().unwrap(),
        failed: {
            let mut failures = failed.into_inner().unwrap();
            failures.sort();
            failures
        },
    };
    assemble_records(plan, out_dir)?;
    Ok(summary)
}

fn execute_job(
    manifest: &ExperimentManifest,
    tables: &BTreeMap<&str, &Arc<WordVectorTable>>,
    units: &BTreeMap<(String, Option<String>), &AnalysisUnit>,
    job: &JobSpec,
    out_dir: &Path,
) -> Result<ExperimentResult> {
    let table = tables
        .get(job.embedding_name.as_str())
        .ok_or_else(|| Error::invalid(format!("unknown table {}", job.embedding_name)))?;
    let unit = units
        .get(&(job.dataset_name.clone(), job.feature.clone()))
        .ok_or_else(|| Error::invalid(format!("unknown unit {}", job.dataset_name)))?;
    let config = TrainConfig {
        seed: job.seed,
        ..manifest.train.clone()
    };
    // All embeddings on a unit share the fold partition, so the per-word
    // errors entering the significance pairing come from identical folds.
    let fold_seed = derive_seed(
        manifest.master_seed,
        &[
            "unit-folds",
            &job.dataset_name,
            job.feature.as_deref().unwrap_or(""),
        ],
    );
    let options = RunOptions {
        case_policy: manifest.case_policy,
        record_dimension_errors: unit.record_dimension_errors,
        fold_seed: Some(fold_seed),
    };
    let result = run_experiment(
        table,
        &unit.dataset,
        job.feature.as_deref(),
        &job.candidates,
        &config,
        &options,
    )?;

    let record_path = job_record_path(out_dir, &job.id);
    let temp_path = record_path.with_extension("json.tmp");
    fs::write(&temp_path, serde_json::to_string(&result)?)?;
    fs::rename(&temp_path, &record_path)?;

    let errors_path = out_dir.join("word-errors").join(format!("{}.csv", job.id));
    let mut writer = fs::File::create(errors_path)?;
    result.write_word_errors_csv(&mut writer)?;
    Ok(result)
}

/// Concatenates the available per-job records into `results.jsonl` in plan
/// order, so the file bytes are independent of scheduling and parallelism.
pub fn assemble_records(plan: &JobPlan, out_dir: &Path) -> Result<()> {
    let mut lines = Vec::new();
    for job in &plan.jobs {
        let path = job_record_path(out_dir, &job.id);
        if path.is_file() {
            lines.push(fs::read_to_string(path)?.trim_end().to_string());
        }
    }
    fs::write(out_dir.join("results.jsonl"), lines.join("\n") + "\n")?;
    Ok(())
}

/// Loads the records for every planned job, erroring with the missing job
/// ids when any are absent.
pub fn load_results(plan: &JobPlan, out_dir: &Path) -> Result<Vec<ExperimentResult>> {
    let mut results = Vec::with_capacity(plan.jobs.len());
    let mut missing = Vec::new();
    for job in &plan.jobs {
        let path = job_record_path(out_dir, &job.id);
        if !path.is_file() {
            missing.push(format!(
                "{} ({} on {})",
                job.id, job.embedding_name, job.dataset_name
            ));
            continue;
        }
        let text = fs::read_to_string(path)?;
        results.push(serde_json::from_str(&text)?);
    }
    if !missing.is_empty() {
        return Err(Error::MissingResults(missing));
    }
    Ok(results)
}

/// Splits records into embedding experiments and baselines and runs the
/// battery with the manifest's alpha, alternative, and overrides.
pub fn run_significance(
    manifest: &ExperimentManifest,
    results: &[ExperimentResult],
) -> Result<SignificanceBattery> {
    let (baselines, experiments): (Vec<_>, Vec<_>) =
        results.iter().cloned().partition(|r| r.is_baseline);
    if experiments.is_empty() {
        return Err(Error::invalid("no embedding experiments in the results"));
    }
    significance_battery(
        &experiments,
        &baselines,
        manifest.alpha,
        manifest.alternative,
        &manifest.n_overrides,
    )
}

/// Builds the evaluation report for a set of records, attaching the
/// significance battery and provenance.
pub fn build_evaluation_report(
    results: &[ExperimentResult],
    battery: Option<SignificanceBattery>,
    provenance: Vec<String>,
) -> Result<EvaluationReport> {
    build_report(results, battery, provenance)
}

/// Writes the report JSON, the CSV bundle, correlation plot data, and any
/// available output-dimension rankings under `out_dir/report`.
pub fn emit_full_report(
    report: &EvaluationReport,
    results: &[ExperimentResult],
    out_dir: &Path,
) -> Result<PathBuf> {
    let report_dir = out_dir.join("report");
    emit_report(report, &report_dir, ReportFormat::Json)?;
    emit_report(report, &report_dir, ReportFormat::CsvBundle)?;

    // Rankings per dataset where dimension errors were recorded.
    let mut by_dataset: BTreeMap<&str, Vec<ExperimentResult>> = BTreeMap::new();
    for result in results {
        if result.per_dimension_errors.is_some() {
            by_dataset
                .entry(result.dataset_name.as_str())
                .or_default()
                .push(result.clone());
        }
    }
    for (dataset, group) in by_dataset {
        let ranked = rank_output_dimensions(&group)?;
        let path = report_dir.join(format!("dimension_ranking_{dataset}.csv"));
        let mut text = String::from("rank,label,mean_error\n");
        for (rank, (label, error)) in ranked.iter().enumerate() {
            text.push_str(&format!("{},{label},{error}\n", rank + 1));
        }
        fs::write(path, text)?;
    }
    Ok(report_dir)
}

/// Reads an `embedding,score` CSV for extrinsic-task correlation.
pub fn parse_task_scores(path: &Path) -> Result<BTreeMap<String, f64>> {
    let source = path.display().to_string();
    let text = fs::read_to_string(path)?;
    let mut scores = BTreeMap::new();
    for (index, line) in text.lines().enumerate() {
        let line_no = index as u64 + 1;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if index == 0 && line.to_lowercase().starts_with("embedding") {
            continue;
        }
        let (embedding, score) = line
            .split_once(',')
            .ok_or_else(|| Error::parse(&source, line_no, "expected `embedding,score`"))?;
        let score: f64 = score
            .trim()
            .parse()
            .map_err(|_| Error::parse(&source, line_no, format!("non-numeric score {score:?}")))?;
        scores.insert(embedding.trim().to_string(), score);
    }
    if scores.is_empty() {
        return Err(Error::EmptyFile(path.to_path_buf()));
    }
    Ok(scores)
}

/// Correlates the report's global MSEs against task scores and writes the
/// scatter data and summary under `out_dir/correlation`.
pub fn emit_extrinsic_correlation(
    report: &EvaluationReport,
    scores: &BTreeMap<String, f64>,
    task_name: &str,
    out_dir: &Path,
) -> Result<PathBuf> {
    let dir = out_dir.join("correlation");
    fs::create_dir_all(&dir)?;
    let (correlation, notes) = extrinsic_correlation(report, scores, task_name)?;
    crate::report::write_plot_csv(&dir, "extrinsic", &correlation)?;
    let summary = serde_json::json!({
        "task": task_name,
        "pearson_r": correlation.result.pearson_r,
        "spearman_rho": correlation.result.spearman_rho,
        "n": correlation.result.n,
        "notes": notes,
    });
    fs::write(
        dir.join(format!("extrinsic_{}.json", task_name)),
        serde_json::to_string_pretty(&summary)?,
    )?;
    Ok(dir)
}

/// Writes the cross- and within-modality correlation summaries under
/// `out_dir/correlation`.
pub fn emit_modality_correlations(report: &EvaluationReport, out_dir: &Path) -> Result<PathBuf> {
    let dir = out_dir.join("correlation");
    fs::create_dir_all(&dir)?;
    let (cross, mut notes) = cross_modality_correlation(report)?;
    let (within, within_notes) = within_modality_correlation(report)?;
    notes.extend(within_notes);
    for correlation in cross.iter().chain(&within) {
        crate::report::write_plot_csv(&dir, "modality", correlation)?;
    }
    let rows: Vec<serde_json::Value> = cross
        .iter()
        .map(|c| (c, "cross"))
        .chain(within.iter().map(|c| (c, "within")))
        .map(|(c, kind)| {
            serde_json::json!({
                "kind": kind,
                "x": c.series_x,
                "y": c.series_y,
                "pearson_r": c.result.pearson_r,
                "spearman_rho": c.result.spearman_rho,
                "n": c.result.n,
            })
        })
        .collect();
    let summary = serde_json::json!({ "correlations": rows, "notes": notes });
    fs::write(
        dir.join("modality_correlations.json"),
        serde_json::to_string_pretty(&summary)?,
    )?;
    Ok(dir)
}

/// Writes every baseline table in the vector text format for audit.
pub fn export_baselines(inputs: &LoadedInputs, out_dir: &Path) -> Result<PathBuf> {
    let dir = out_dir.join("baselines");
    fs::create_dir_all(&dir)?;
    for table in &inputs.baselines {
        write_vector_file(table, &dir.join(format!("{}.vec", table.name)))?;
    }
    Ok(dir)
}
