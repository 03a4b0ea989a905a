//! The four subcommands: dataset synthesis, training, evaluation, and
//! cross-run reporting.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use log::info;

use emofuse::checkpoint::{self, CheckpointError};
use emofuse::data::{load_manifest, write_dataset, DataError, Emotion, UtteranceRecord};
use emofuse::report::{format_ccc, format_percent, render_report, render_table};
use emofuse::synth::{generate_synthetic, nearest_mean_accuracy};
use emofuse::train::{evaluate_records, run_experiment, TrainError};
use emofuse::{EvalReport, ExperimentSummary, FusionModel, LossWeights, SynthSpec};

use crate::config::{load_run_config, out_root, resolve_run_dir, RunConfig};
use crate::CliError;

// ---------------------------------------------------------------------------
// Shared error mapping
// ---------------------------------------------------------------------------

/// Sorts a training failure into the CLI's three exit classes.
pub(crate) fn map_train_error(err: TrainError) -> CliError {
    match err {
        TrainError::Config(e) => CliError::Config(e.to_string()),
        TrainError::Data(e) => map_data_error(e),
        // A checkpoint written by a different configuration is the caller's
        // configuration problem; anything else wrong with the file is data.
        TrainError::Checkpoint(e @ CheckpointError::ConfigMismatch) => {
            CliError::Config(e.to_string())
        }
        TrainError::Checkpoint(e) => CliError::Data(e.to_string()),
        TrainError::Numeric(e) => CliError::Numeric(e.to_string()),
        TrainError::Rmm(e) => CliError::Config(e.to_string()),
        e @ TrainError::NonFiniteLoss { .. } => CliError::Numeric(e.to_string()),
    }
}

/// Sorts a data-layer failure: an invalid synthesis spec is a configuration
/// mistake, everything else is a problem with files on disk.
fn map_data_error(err: DataError) -> CliError {
    match err {
        DataError::InvalidSynthSpec { .. } => CliError::Config(err.to_string()),
        other => CliError::Data(other.to_string()),
    }
}

fn io_data(path: &Path, err: std::io::Error) -> CliError {
    CliError::Data(format!("{}: {err}", path.display()))
}

// ---------------------------------------------------------------------------
// gen-synth
// ---------------------------------------------------------------------------

/// Flags for `gen-synth`. Defaults mirror the library's synthesis defaults.
#[derive(Debug, Args)]
pub struct GenSynthArgs {
    /// Output directory for the dataset (default: `<out root>/synth`).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Number of utterances; spread round-robin over the ten speakers.
    #[arg(long, default_value_t = 500)]
    pub n: usize,
    /// Feature dimensionality of both modalities.
    #[arg(long, default_value_t = 16)]
    pub d: usize,
    /// Shortest sequence length (inclusive).
    #[arg(long, default_value_t = 4)]
    pub min_len: usize,
    /// Longest sequence length (inclusive).
    #[arg(long, default_value_t = 12)]
    pub max_len: usize,
    /// Euclidean distance between class means; larger is easier.
    #[arg(long, default_value_t = 6.0)]
    pub class_separation: f64,
    /// Half-width of the uniform noise on the valence/arousal targets.
    #[arg(long, default_value_t = 0.05)]
    pub noise: f64,
    /// Seed for the generator.
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
}

impl GenSynthArgs {
    fn spec(&self) -> SynthSpec {
        SynthSpec {
            n_utterances: self.n,
            d: self.d,
            seq_len_range: (self.min_len, self.max_len),
            class_separation: self.class_separation,
            dim_noise: self.noise,
            seed: self.seed,
        }
    }
}

pub fn gen_synth(args: &GenSynthArgs) -> Result<(), CliError> {
    let spec = args.spec();
    let records = generate_synthetic(&spec).map_err(map_data_error)?;

    let out_dir = args
        .out
        .clone()
        .unwrap_or_else(|| out_root().join("synth"));
    fs::create_dir_all(&out_dir).map_err(|e| io_data(&out_dir, e))?;
    let manifest_path = write_dataset(&out_dir, &records).map_err(map_data_error)?;

    let mut counts = [0usize; emofuse::data::N_CLASSES];
    for r in &records {
        counts[r.emotion.index()] += 1;
    }
    let class_counts = Emotion::ALL
        .iter()
        .map(|e| format!("{} {}", e.name(), counts[e.index()]))
        .collect::<Vec<_>>()
        .join(", ");
    let speakers = {
        let mut ids: Vec<usize> = records.iter().map(|r| r.speaker_id).collect();
        ids.sort_unstable();
        ids.dedup();
        ids.len()
    };

    println!(
        "wrote {} utterances ({speakers} speakers) to {}",
        records.len(),
        out_dir.display()
    );
    println!("manifest: {}", manifest_path.display());
    println!("class counts: {class_counts}");
    println!(
        "nearest-class-mean accuracy on pooled features: {}%",
        format_percent(nearest_mean_accuracy(&records))
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

/// Which task to optimize when training a single head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SingleTask {
    /// Categorical classification only.
    Disc,
    /// Dimensional (valence/arousal) regression only.
    Con,
}

/// Flags for `train`.
#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Run configuration file (TOML).
    #[arg(long)]
    pub config: PathBuf,
    /// Run directory override (default: config `output_dir`, then
    /// `<out root>/runs/<name>`).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Seed list override, comma separated (e.g. `--seeds 1,2,3`).
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    /// Train one task head only, leaving the other untouched.
    #[arg(long, value_enum)]
    pub single_task: Option<SingleTask>,
    /// Enable the random modality-masking schedule over all epochs.
    #[arg(long, conflicts_with = "no_rmm")]
    pub rmm: bool,
    /// Disable the random modality-masking schedule.
    #[arg(long)]
    pub no_rmm: bool,
    /// Epoch count override; the masking schedule follows it when enabled.
    #[arg(long)]
    pub epochs: Option<usize>,
    /// How many folds to train in parallel.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

fn apply_overrides(config: &mut RunConfig, args: &TrainArgs) -> Result<(), CliError> {
    if let Some(seeds) = &args.seeds {
        if seeds.is_empty() {
            return Err(CliError::Config(
                "--seeds needs at least one value".to_string(),
            ));
        }
        config.train.seeds = seeds.clone();
    }
    match args.single_task {
        Some(SingleTask::Disc) => config.train.loss_weights = LossWeights::categorical_only(),
        Some(SingleTask::Con) => config.train.loss_weights = LossWeights::dimensional_only(),
        None => {}
    }
    if args.rmm {
        config.rmm.enabled = true;
        config.rmm.total_epochs = config.train.epochs;
    }
    if args.no_rmm {
        config.rmm.enabled = false;
    }
    if let Some(epochs) = args.epochs {
        config.train.epochs = epochs;
        if config.rmm.enabled {
            config.rmm.total_epochs = epochs;
        }
    }
    Ok(())
}

fn load_records(config: &RunConfig) -> Result<Vec<UtteranceRecord>, CliError> {
    if let Some(manifest) = &config.data.manifest {
        load_manifest(manifest).map_err(map_data_error)
    } else if let Some(spec) = &config.data.synth {
        generate_synthetic(spec).map_err(map_data_error)
    } else {
        // validate() has already required exactly one source.
        Err(CliError::Config("no data source configured".to_string()))
    }
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| io_data(path, e))
}

pub fn train(args: &TrainArgs) -> Result<(), CliError> {
    let mut config = load_run_config(&args.config)?;
    apply_overrides(&mut config, args)?;
    config.validate()?;

    let records = load_records(&config)?;
    let run_dir = resolve_run_dir(&config, args.out.as_deref());
    let checkpoint_dir = run_dir.join("checkpoints");
    fs::create_dir_all(&checkpoint_dir).map_err(|e| io_data(&checkpoint_dir, e))?;

    // Freeze the fully resolved configuration (overrides applied, run
    // directory pinned) next to the artifacts it produced.
    let mut resolved = config.clone();
    resolved.output_dir = Some(run_dir.clone());
    let resolved_toml = toml::to_string_pretty(&resolved)
        .map_err(|e| CliError::Config(format!("cannot serialize resolved config: {e}")))?;
    write_text(&run_dir.join("config.resolved.toml"), &resolved_toml)?;

    info!(
        "run '{}': {} records, {} seed(s), writing to {}",
        config.name,
        records.len(),
        config.train.seeds.len(),
        run_dir.display()
    );

    let experiment = config.experiment();
    let outcome = run_experiment(&experiment, &records, Some(&checkpoint_dir), args.jobs)
        .map_err(map_train_error)?;

    let folds_json = serde_json::to_string_pretty(&outcome.fold_plan)
        .map_err(|e| CliError::Data(format!("cannot serialize fold plan: {e}")))?;
    write_text(&run_dir.join("folds.json"), &folds_json)?;

    // Per-fold logs: epoch-by-epoch losses, gradient norms, masking
    // decisions, and the final test metrics of each (seed, fold) run.
    let log_dir = run_dir.join("logs");
    fs::create_dir_all(&log_dir).map_err(|e| io_data(&log_dir, e))?;
    for seed_outcome in &outcome.per_seed {
        for fold in &seed_outcome.folds {
            let log = serde_json::to_string_pretty(fold)
                .map_err(|e| CliError::Data(format!("cannot serialize fold log: {e}")))?;
            let name = format!("seed{}_fold{}.json", fold.seed, fold.fold_index);
            write_text(&log_dir.join(name), &log)?;
        }
    }

    let summary = emofuse::report::summarize(&config.name, &experiment, &outcome);
    let summary_json = serde_json::to_string_pretty(&summary)
        .map_err(|e| CliError::Data(format!("cannot serialize summary: {e}")))?;
    write_text(&run_dir.join("summary.json"), &summary_json)?;

    let report = render_report(&summary);
    write_text(&run_dir.join("report.txt"), &report)?;
    print!("{report}");
    Ok(())
}

// ---------------------------------------------------------------------------
// evaluate
// ---------------------------------------------------------------------------

/// Flags for `evaluate`.
#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Checkpoint to load; best-epoch weights are used when present.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Manifest of records to score.
    #[arg(long)]
    pub manifest: PathBuf,
    /// Restrict scoring to one speaker id.
    #[arg(long)]
    pub speaker: Option<usize>,
    /// Evaluation batch size.
    #[arg(long, default_value_t = 16)]
    pub batch_size: usize,
    /// Print the metrics as JSON instead of text.
    #[arg(long)]
    pub json: bool,
}

pub fn evaluate(args: &EvaluateArgs) -> Result<(), CliError> {
    let ckpt = checkpoint::load(&args.checkpoint, None).map_err(|e| match e {
        e @ CheckpointError::ConfigMismatch => CliError::Config(e.to_string()),
        other => CliError::Data(other.to_string()),
    })?;

    let mut model = FusionModel::new(&ckpt.model_config, 0)
        .map_err(|e| CliError::Config(format!("checkpoint architecture is invalid: {e}")))?;
    let weights = ckpt.best_params.as_ref().unwrap_or(&ckpt.params);
    model
        .params
        .restore(weights)
        .map_err(|e| CliError::Data(format!("checkpoint weights do not fit the model: {e}")))?;

    let mut records = load_manifest(&args.manifest).map_err(map_data_error)?;
    if let Some(record) = records.first() {
        let d = record.audio_seq.shape()[1];
        if d != ckpt.model_config.d_model {
            return Err(CliError::Config(format!(
                "checkpoint expects {}-dimensional features, manifest provides {d}",
                ckpt.model_config.d_model
            )));
        }
    }
    if let Some(speaker) = args.speaker {
        records.retain(|r| r.speaker_id == speaker);
        if records.is_empty() {
            return Err(CliError::Data(format!(
                "no records for speaker {speaker} in {}",
                args.manifest.display()
            )));
        }
    }

    let (report, _loss) = evaluate_records(&model, &records, args.batch_size, &LossWeights::balanced())
        .map_err(map_train_error)?;

    if args.json {
        let text = serde_json::to_string_pretty(&report)
            .map_err(|e| CliError::Data(format!("cannot serialize metrics: {e}")))?;
        println!("{text}");
    } else {
        print!("{}", eval_text(&report));
    }
    Ok(())
}

/// Human-readable evaluation summary with the confusion matrix.
fn eval_text(report: &EvalReport) -> String {
    let mut out = String::new();
    out.push_str(&format!("samples: {}\n", report.n_samples));
    out.push_str(&format!(
        "WAR: {}%   UAR: {}%\n",
        format_percent(report.war),
        format_percent(report.uar)
    ));
    out.push_str(&format!(
        "CCC: valence {}   arousal {}\n",
        format_ccc(report.ccc_valence),
        format_ccc(report.ccc_arousal)
    ));
    out.push_str("confusion (rows = truth, columns = predicted):\n");
    let names: Vec<&str> = Emotion::ALL.iter().map(|e| e.name()).collect();
    let label_width = names.iter().map(|n| n.len()).max().unwrap_or(0);
    let cell_width = report
        .confusion
        .iter()
        .flatten()
        .map(|c| c.to_string().len())
        .chain(names.iter().map(|n| n.len()))
        .max()
        .unwrap_or(1);
    out.push_str(&format!("{:label_width$}", ""));
    for name in &names {
        out.push_str(&format!("  {name:>cell_width$}"));
    }
    out.push('\n');
    for (truth, row) in report.confusion.iter().enumerate() {
        out.push_str(&format!("{:label_width$}", names[truth]));
        for count in row {
            out.push_str(&format!("  {count:>cell_width$}"));
        }
        out.push('\n');
    }
    out
}

// ---------------------------------------------------------------------------
// report
// ---------------------------------------------------------------------------

/// Flags for `report`.
#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Run directory containing `summary.json`; repeat to combine runs
    /// into one table.
    #[arg(long = "run", required = true)]
    pub runs: Vec<PathBuf>,
    /// Also write the table to this file.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn report(args: &ReportArgs) -> Result<(), CliError> {
    let mut summaries = Vec::new();
    for dir in &args.runs {
        let path = dir.join("summary.json");
        let text = fs::read_to_string(&path).map_err(|e| io_data(&path, e))?;
        let summary: ExperimentSummary = serde_json::from_str(&text)
            .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        summaries.push(summary);
    }
    let table = render_table(&summaries);
    print!("{table}");
    if let Some(out) = &args.out {
        write_text(out, &table)?;
    }
    Ok(())
}
