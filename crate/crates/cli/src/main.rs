//! Command-line front end for the evaluation pipeline.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use cogfit::manifest::{parse_manifest, ExperimentManifest};
use cogfit::pipeline;

/// Output root used when neither `--out` nor the manifest set one.
const OUTPUT_ROOT_VAR: &str = "COGFIT_OUT";

#[derive(Parser)]
#[command(
    name = "cogfit",
    about = "Evaluate word embeddings by predicting cognitive signals",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// Experiment manifest (TOML).
    #[arg(long)]
    manifest: PathBuf,
    /// Output directory; overrides the manifest and COGFIT_OUT.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Master seed override.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Run all planned experiment jobs (resumable).
    Run {
        #[command(flatten)]
        common: CommonArgs,
        /// Maximum concurrent jobs; overrides the manifest.
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Test every embedding against its baselines and write the
    /// significance CSVs.
    Significance {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Aggregate results into the report JSON and CSV bundle.
    Report {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Correlate aggregate errors with supplied task scores.
    Correlate {
        #[command(flatten)]
        common: CommonArgs,
        /// CSV of `embedding,score` rows.
        #[arg(long)]
        scores: PathBuf,
        /// Name of the task, used in output file names.
        #[arg(long, default_value = "task")]
        task: String,
    },
    /// Generate and export the random baseline tables.
    BaselineGen {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Check a manifest without loading data.
    Validate {
        /// Experiment manifest (TOML).
        #[arg(long)]
        manifest: PathBuf,
    },
}

fn load_manifest(common: &CommonArgs) -> anyhow::Result<(ExperimentManifest, PathBuf)> {
    let (mut manifest, warnings) = parse_manifest(&common.manifest)
        .with_context(|| format!("reading {}", common.manifest.display()))?;
    for warning in warnings {
        log::warn!("{warning}");
    }
    if let Some(seed) = common.seed {
        manifest.master_seed = seed;
    }
    let out = common
        .out
        .clone()
        .or_else(|| manifest.output_dir.clone())
        .or_else(|| std::env::var_os(OUTPUT_ROOT_VAR).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("cogfit-out"));
    Ok((manifest, out))
}

fn load_planned_results(
    manifest: &ExperimentManifest,
    out: &std::path::Path,
) -> anyhow::Result<(
    pipeline::LoadedInputs,
    Vec<cogfit::regression::ExperimentResult>,
)> {
    let inputs = pipeline::load_inputs(manifest)?;
    let plan = pipeline::plan_jobs(manifest, &inputs)?;
    let results = pipeline::load_results(&plan, out)?;
    Ok((inputs, results))
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    match cli.command {
        Command::Run { common, jobs } => {
            let (manifest, out) = load_manifest(&common)?;
            let inputs = pipeline::load_inputs(&manifest)?;
            let plan = pipeline::plan_jobs(&manifest, &inputs)?;
            let parallelism = jobs.unwrap_or(manifest.parallelism);
            log::info!(
                "running {} jobs with parallelism {parallelism} into {}",
                plan.jobs.len(),
                out.display()
            );
            let summary = pipeline::run_jobs(&manifest, &inputs, &plan, &out, parallelism)?;
            println!(
                "completed {} jobs, skipped {}, failed {}",
                summary.completed,
                summary.skipped,
                summary.failed.len()
            );
            for (id, error) in &summary.failed {
                eprintln!("failed job {id}: {error}");
            }
            Ok(if summary.all_ok() {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            })
        }
        Command::Significance { common } => {
            let (manifest, out) = load_manifest(&common)?;
            let (_, results) = load_planned_results(&manifest, &out)?;
            let battery = pipeline::run_significance(&manifest, &results)?;
            cogfit::report::write_significance_csv(&out.join("significance.csv"), &battery)?;
            cogfit::report::write_significance_summary_csv(
                &out.join("significance_summary.csv"),
                &battery,
            )?;
            for (modality, correction) in &battery.corrections {
                println!(
                    "{modality}: {} significant at threshold {:.6e}",
                    correction.label(),
                    correction.threshold
                );
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Report { common } => {
            let (manifest, out) = load_manifest(&common)?;
            let (inputs, results) = load_planned_results(&manifest, &out)?;
            let battery = pipeline::run_significance(&manifest, &results).ok();
            let report =
                pipeline::build_evaluation_report(&results, battery, inputs.provenance.clone())?;
            let report_dir = pipeline::emit_full_report(&report, &results, &out)?;
            pipeline::emit_modality_correlations(&report, &out)?;
            println!("report written to {}", report_dir.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Correlate {
            common,
            scores,
            task,
        } => {
            let (manifest, out) = load_manifest(&common)?;
            let (inputs, results) = load_planned_results(&manifest, &out)?;
            let report =
                pipeline::build_evaluation_report(&results, None, inputs.provenance.clone())?;
            let task_scores = pipeline::parse_task_scores(&scores)?;
            let dir = pipeline::emit_extrinsic_correlation(&report, &task_scores, &task, &out)?;
            println!("correlation written to {}", dir.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::BaselineGen { common } => {
            let (manifest, out) = load_manifest(&common)?;
            let inputs = pipeline::load_inputs(&manifest)?;
            let dir = pipeline::export_baselines(&inputs, &out)?;
            println!(
                "wrote {} baseline tables to {}",
                inputs.baselines.len(),
                dir.display()
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Validate { manifest } => {
            let (parsed, warnings) = parse_manifest(&manifest)?;
            for warning in &warnings {
                println!("warning: {warning}");
            }
            if parsed.embeddings.is_empty() {
                bail!("no embeddings configured");
            }
            println!(
                "manifest ok: {} embeddings, {} datasets, {} warnings",
                parsed.embeddings.len(),
                parsed.datasets.len(),
                warnings.len()
            );
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(error) => {
            eprintln!("error: {error:#}");
            ExitCode::FAILURE
        }
    }
}
