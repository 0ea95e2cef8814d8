//! `mbt` — batch CLI over the toolkit: ingest corpora, generate traces,
//! judge them, compute metrics, build SFT datasets, check GRPO math, and
//! render report tables.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use mbt_core::config::LoadedConfig;
use mbt_core::grpo::{evaluate_group, GrpoGroup, ObjectiveOptions};
use mbt_core::ingest::{load_dataset, supporting_only, DatasetSource, QAExample, Split};
use mbt_core::judge::{run_judges, JudgeKind, JudgeSuite, VerdictRecord};
use mbt_core::metrics::{aggregate, AggregateOptions, CorrectnessSource, MetricReport};
use mbt_core::prompts::TemplateStore;
use mbt_core::report::{build_report, emit, EmitFormat};
use mbt_core::sft::{export_sft, rejection_filter, BuildOutcome, SftBuilder, SftRecord};
use mbt_core::store::{read_jsonl, write_jsonl, OrderedJsonlWriter, RunManifest, RunPaths};
use mbt_core::trace::{TraceGenerator, TraceMode, TraceRecord};

#[derive(Parser)]
#[command(
    name = "mbt",
    version,
    about = "MHQA trace generation, judging, metrics, and SFT dataset construction"
)]
struct Cli {
    /// Run config file (TOML). Defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override the configured worker/in-flight bound.
    #[arg(long, global = true)]
    concurrency: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Load a published dataset file into the unified corpus schema.
    Ingest(IngestArgs),
    /// Generate reasoning traces for a corpus.
    Generate(GenerateArgs),
    /// Run judge protocols over a generation run.
    Judge(JudgeArgs),
    /// Aggregate a run into a metric report.
    Metrics(MetricsArgs),
    /// Build an SFT dataset (mbt-s, mbt-r, or rejection sampling).
    BuildSft(BuildSftArgs),
    /// Evaluate GRPO groups from a file: advantages, terms, objective.
    GrpoCheck(GrpoCheckArgs),
    /// Render report tables over one or more runs.
    Report(ReportArgs),
}

#[derive(Args)]
struct IngestArgs {
    /// hotpotqa | musique | 2wiki
    #[arg(long)]
    format: String,
    /// Source file as published.
    #[arg(long)]
    input: PathBuf,
    /// train | validation
    #[arg(long, default_value = "validation")]
    split: String,
    /// Keep only supporting paragraphs (MuSiQue-style sources).
    #[arg(long)]
    supporting_only: bool,
    /// Output corpus file (line-delimited records).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GenerateArgs {
    /// Unified corpus file.
    #[arg(long)]
    dataset: PathBuf,
    /// base | metaprompt
    #[arg(long, default_value = "base")]
    mode: String,
    /// Model name; defaults to the configured student model.
    #[arg(long)]
    model: Option<String>,
    /// Run directory to create.
    #[arg(long)]
    out: PathBuf,
    /// Run id recorded in the manifest (defaults to the directory name).
    #[arg(long)]
    run_id: Option<String>,
}

#[derive(Args)]
struct JudgeArgs {
    /// Run directory produced by `generate`.
    #[arg(long)]
    run: PathBuf,
    /// Comma-separated kinds: correctness,inclusion,ot,ut,meta
    #[arg(long, default_value = "correctness,inclusion,ot,ut,meta")]
    kinds: String,
    /// Corpus file; defaults to the dataset recorded in the run manifest.
    #[arg(long)]
    dataset: Option<PathBuf>,
}

#[derive(Args)]
struct MetricsArgs {
    /// Run directory.
    #[arg(long)]
    run: PathBuf,
    /// Baseline run directory for AES (may equal --run).
    #[arg(long)]
    baseline: Option<PathBuf>,
    /// llm | em — correctness criterion for stratified metrics.
    #[arg(long, default_value = "llm")]
    correctness: String,
    /// Corpus file; defaults to the dataset recorded in the run manifest.
    #[arg(long)]
    dataset: Option<PathBuf>,
}

#[derive(Args)]
struct BuildSftArgs {
    /// mbt-s | mbt-r | rejection
    #[arg(long)]
    strategy: String,
    /// Unified corpus file.
    #[arg(long)]
    dataset: PathBuf,
    /// Draft run directory (required for mbt-r and rejection).
    #[arg(long)]
    drafts: Option<PathBuf>,
    /// Teacher model; defaults to the configured teacher.
    #[arg(long)]
    teacher: Option<String>,
    /// Output file (line-delimited chat records).
    #[arg(long)]
    out: PathBuf,
    /// Drop records whose trace exceeds this many chars.
    #[arg(long)]
    max_trace_chars: Option<usize>,
    /// Reject synthesized traces that never mention the gold answer.
    #[arg(long)]
    verify_final_answer: bool,
    /// llm | em — draft correctness source (mbt-r / rejection).
    #[arg(long, default_value = "llm")]
    correctness: String,
}

#[derive(Args)]
struct GrpoCheckArgs {
    /// Line-delimited group file (rewards + cur/old/ref log-prob arrays).
    #[arg(long)]
    group_file: PathBuf,
    /// Divide each output's surrogate sum by its token count.
    #[arg(long)]
    normalize_surrogate_by_length: bool,
    /// Aggregate KL as a sum over tokens instead of a mean.
    #[arg(long)]
    kl_sum: bool,
}

#[derive(Args)]
struct ReportArgs {
    /// Run directories (each must contain report.json).
    #[arg(long, num_args = 1.., required = true)]
    runs: Vec<PathBuf>,
    /// Baseline run id for AES normalization.
    #[arg(long)]
    baseline: String,
    /// aligned_text | delimited
    #[arg(long, default_value = "aligned_text")]
    format: String,
    /// Directory to write report.txt and report.csv into.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let mut loaded = match &cli.config {
        Some(path) => LoadedConfig::from_path(path)
            .with_context(|| format!("loading config {}", path.display()))?,
        None => LoadedConfig::defaults(),
    };
    if let Some(n) = cli.concurrency {
        loaded.config.limits.concurrency = n;
    }

    match cli.command {
        Command::Ingest(args) => cmd_ingest(args),
        Command::Generate(args) => cmd_generate(&loaded, args),
        Command::Judge(args) => cmd_judge(&loaded, args),
        Command::Metrics(args) => cmd_metrics(&loaded, args),
        Command::BuildSft(args) => cmd_build_sft(&loaded, args),
        Command::GrpoCheck(args) => cmd_grpo_check(args),
        Command::Report(args) => cmd_report(args),
    }
}

fn read_corpus(path: &Path) -> Result<Vec<QAExample>> {
    let examples: Vec<QAExample> =
        read_jsonl(path).with_context(|| format!("reading corpus {}", path.display()))?;
    if examples.is_empty() {
        bail!("corpus {} is empty", path.display());
    }
    Ok(examples)
}

fn cmd_ingest(args: IngestArgs) -> Result<()> {
    let format: DatasetSource = args.format.parse().map_err(|e| anyhow!("{e}"))?;
    let split = match args.split.as_str() {
        "train" => Split::Train,
        "validation" => Split::Validation,
        other => bail!("unknown split: {other}"),
    };
    let file =
        fs::File::open(&args.input).with_context(|| format!("opening {}", args.input.display()))?;
    let mut examples = load_dataset(format, std::io::BufReader::new(file), split)?;
    if args.supporting_only {
        for example in &mut examples {
            supporting_only(example);
            if example.documents.is_empty() {
                bail!("example {} has no supporting paragraphs", example.id);
            }
        }
    }
    write_jsonl(&args.out, &examples)?;
    eprintln!(
        "ingested {} examples -> {}",
        examples.len(),
        args.out.display()
    );
    Ok(())
}

fn cmd_generate(loaded: &LoadedConfig, args: GenerateArgs) -> Result<()> {
    let examples = read_corpus(&args.dataset)?;
    let mode: TraceMode = args.mode.parse().map_err(|e: String| anyhow!(e))?;
    let model = args
        .model
        .unwrap_or_else(|| loaded.config.models.student.clone());
    let gateway = loaded.build_gateway()?;
    let templates = TemplateStore::builtin();
    let generator = TraceGenerator::new(&gateway, &templates, model.clone())
        .with_sampling(loaded.config.sampling);

    let paths = RunPaths::new(&args.out);
    fs::create_dir_all(&paths.dir)?;
    let writer = OrderedJsonlWriter::create(paths.traces())?;
    let records =
        generator.generate_run(&examples, mode, loaded.config.limits.concurrency, &writer)?;

    let run_id = args.run_id.unwrap_or_else(|| {
        paths
            .dir
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| "run".to_string())
    });
    paths.write_manifest(&RunManifest {
        run_id,
        model,
        mode: args.mode,
        dataset: args.dataset.display().to_string(),
        config_snapshot: loaded.raw.clone(),
        record_count: records.len(),
        created_at: chrono::Utc::now(),
    })?;
    let degenerated = records.iter().filter(|r| r.degenerated).count();
    eprintln!(
        "generated {} records ({} degenerated) -> {}",
        records.len(),
        degenerated,
        paths.traces().display()
    );
    Ok(())
}

fn load_run(
    run: &Path,
    dataset_override: Option<&Path>,
) -> Result<(RunManifest, Vec<QAExample>, Vec<TraceRecord>)> {
    let paths = RunPaths::new(run);
    let manifest = paths.read_manifest().with_context(|| {
        format!(
            "reading manifest in {} (run `generate` first)",
            run.display()
        )
    })?;
    let dataset = dataset_override
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from(&manifest.dataset));
    let examples = read_corpus(&dataset)?;
    let records: Vec<TraceRecord> = read_jsonl(paths.traces())?;
    Ok((manifest, examples, records))
}

fn cmd_judge(loaded: &LoadedConfig, args: JudgeArgs) -> Result<()> {
    let (manifest, examples, records) = load_run(&args.run, args.dataset.as_deref())?;
    let kinds = args
        .kinds
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| s.trim().parse::<JudgeKind>().map_err(|e| anyhow!(e)))
        .collect::<Result<Vec<_>>>()?;
    let gateway = loaded.build_gateway()?;
    let templates = TemplateStore::builtin();
    let mut suite = JudgeSuite::new(&gateway, &templates, loaded.config.models.judge.clone());
    suite.sampling = loaded.config.judge_sampling.as_sampling();

    let verdicts = run_judges(
        &suite,
        &examples,
        &records,
        &kinds,
        loaded.config.limits.concurrency,
        &manifest.run_id,
    )?;
    let paths = RunPaths::new(&args.run);
    write_jsonl(paths.verdicts(), &verdicts)?;
    let flagged = verdicts.iter().filter(|v| v.flagged).count();
    eprintln!(
        "judged {} verdicts ({} flagged) -> {}",
        verdicts.len(),
        flagged,
        paths.verdicts().display()
    );
    Ok(())
}

fn correctness_source(name: &str) -> Result<CorrectnessSource> {
    match name {
        "llm" => Ok(CorrectnessSource::LlmJudge),
        "em" => Ok(CorrectnessSource::ExactMatch),
        other => bail!("unknown correctness source: {other} (expected llm or em)"),
    }
}

fn compute_report(
    run: &Path,
    dataset_override: Option<&Path>,
    correctness: CorrectnessSource,
    baseline: Option<&MetricReport>,
) -> Result<MetricReport> {
    let (manifest, examples, records) = load_run(run, dataset_override)?;
    let paths = RunPaths::new(run);
    let verdicts: Vec<VerdictRecord> = if paths.verdicts().exists() {
        read_jsonl(paths.verdicts())?
    } else {
        Vec::new()
    };
    let report = aggregate(
        &examples,
        &records,
        &verdicts,
        &AggregateOptions {
            run_id: manifest.run_id.clone(),
            correctness,
            weights: None,
        },
        baseline,
    )?;
    Ok(report)
}

fn cmd_metrics(_loaded: &LoadedConfig, args: MetricsArgs) -> Result<()> {
    let correctness = correctness_source(&args.correctness)?;
    let baseline_report = match &args.baseline {
        Some(baseline_dir) if baseline_dir == &args.run => Some(compute_report(
            &args.run,
            args.dataset.as_deref(),
            correctness,
            None,
        )?),
        Some(baseline_dir) => {
            let path = RunPaths::new(baseline_dir).report();
            let bytes = fs::read(&path).with_context(|| {
                format!(
                    "reading baseline report {} (run `metrics` there first)",
                    path.display()
                )
            })?;
            Some(serde_json::from_slice(&bytes)?)
        }
        None => None,
    };
    let report = compute_report(
        &args.run,
        args.dataset.as_deref(),
        correctness,
        baseline_report.as_ref(),
    )?;
    let paths = RunPaths::new(&args.run);
    fs::write(paths.report(), serde_json::to_vec_pretty(&report)?)?;
    eprintln!(
        "metrics for {}: em {:.2} f1 {:.2} degen {} -> {}",
        report.run_id,
        report.em,
        report.f1,
        report.degen_count,
        paths.report().display()
    );
    Ok(())
}

fn draft_correctness(
    run: &Path,
    records: &[TraceRecord],
    examples: &[QAExample],
    source: CorrectnessSource,
) -> Result<HashMap<String, bool>> {
    let by_id: HashMap<&str, &QAExample> = examples.iter().map(|e| (e.id.as_str(), e)).collect();
    match source {
        CorrectnessSource::ExactMatch => Ok(records
            .iter()
            .filter_map(|r| {
                by_id.get(r.example_id.as_str()).map(|e| {
                    (
                        r.example_id.clone(),
                        mbt_core::metrics::exact_match(&r.prediction.answer_text, &e.gold_answer),
                    )
                })
            })
            .collect()),
        CorrectnessSource::LlmJudge => {
            let paths = RunPaths::new(run);
            let verdicts: Vec<VerdictRecord> = read_jsonl(paths.verdicts()).with_context(|| {
                format!(
                    "reading verdicts in {} (run `judge --kinds correctness` first, or pass --correctness em)",
                    run.display()
                )
            })?;
            Ok(verdicts
                .iter()
                .filter(|v| v.kind == JudgeKind::Correctness)
                .filter_map(|v| v.correct.map(|c| (v.example_id.clone(), c)))
                .collect())
        }
    }
}

fn cmd_build_sft(loaded: &LoadedConfig, args: BuildSftArgs) -> Result<()> {
    let examples = read_corpus(&args.dataset)?;
    let teacher = args
        .teacher
        .unwrap_or_else(|| loaded.config.models.teacher.clone());
    let templates = TemplateStore::builtin();
    let workers = loaded.config.limits.concurrency;

    let (records, skipped): (Vec<SftRecord>, usize) = match args.strategy.as_str() {
        "mbt-s" => {
            let gateway = loaded.build_gateway()?;
            let builder = SftBuilder::new(&gateway, &templates, teacher)
                .with_sampling(loaded.config.sampling)
                .with_verify_final_answer(args.verify_final_answer);
            let outcomes =
                mbt_core::par_map(&examples, workers, |example| builder.build_mbt_s(example))?;
            split_outcomes(outcomes)
        }
        "mbt-r" => {
            let drafts_dir = args
                .drafts
                .as_ref()
                .ok_or_else(|| anyhow!("--drafts required for mbt-r"))?;
            let drafts: Vec<TraceRecord> = read_jsonl(RunPaths::new(drafts_dir).traces())?;
            let correctness = draft_correctness(
                drafts_dir,
                &drafts,
                &examples,
                correctness_source(&args.correctness)?,
            )?;
            let by_id: HashMap<&str, &QAExample> =
                examples.iter().map(|e| (e.id.as_str(), e)).collect();
            let gateway = loaded.build_gateway()?;
            let builder = SftBuilder::new(&gateway, &templates, teacher)
                .with_sampling(loaded.config.sampling);
            let jobs: Vec<&TraceRecord> = drafts
                .iter()
                .filter(|d| !d.trace_text.trim().is_empty())
                .collect();
            let outcomes = mbt_core::par_map(&jobs, workers, |draft| -> Result<BuildOutcome> {
                let example = by_id
                    .get(draft.example_id.as_str())
                    .ok_or_else(|| anyhow!("draft {} has no corpus example", draft.example_id))?;
                let correct = correctness.get(&draft.example_id).copied().ok_or_else(|| {
                    anyhow!("no correctness entry for draft {}", draft.example_id)
                })?;
                Ok(builder.build_mbt_r(example, draft, correct)?)
            })?;
            split_outcomes(outcomes)
        }
        "rejection" => {
            let drafts_dir = args
                .drafts
                .as_ref()
                .ok_or_else(|| anyhow!("--drafts required for rejection"))?;
            let drafts: Vec<TraceRecord> = read_jsonl(RunPaths::new(drafts_dir).traces())?;
            let manifest = RunPaths::new(drafts_dir).read_manifest()?;
            let correctness = draft_correctness(
                drafts_dir,
                &drafts,
                &examples,
                correctness_source(&args.correctness)?,
            )?;
            let by_id: HashMap<&str, &QAExample> =
                examples.iter().map(|e| (e.id.as_str(), e)).collect();
            let items: Vec<(&QAExample, &TraceRecord, bool)> = drafts
                .iter()
                .filter_map(|record| {
                    let example = by_id.get(record.example_id.as_str())?;
                    let correct = correctness.get(&record.example_id).copied()?;
                    Some((*example, record, correct))
                })
                .collect();
            let (kept, dropped) = rejection_filter(&items, &manifest.model, &templates)?;
            if kept.is_empty() {
                eprintln!("warning: zero correct drafts survived rejection sampling");
            }
            (kept, dropped)
        }
        other => bail!("unknown strategy: {other} (expected mbt-s, mbt-r, or rejection)"),
    };

    if records.is_empty() {
        bail!("no records to export (skipped {skipped})");
    }
    let summary = export_sft(&records, &args.out, args.max_trace_chars)?;
    eprintln!(
        "exported {} records ({} bytes, {} skipped at export, {} rejected at build) -> {}",
        summary.count,
        summary.bytes,
        summary.skipped,
        skipped,
        args.out.display()
    );
    Ok(())
}

fn split_outcomes(outcomes: Vec<BuildOutcome>) -> (Vec<SftRecord>, usize) {
    let mut records = Vec::new();
    let mut rejected = 0usize;
    for outcome in outcomes {
        match outcome {
            BuildOutcome::Record(record) => records.push(record),
            BuildOutcome::Rejected { example_id, reason } => {
                eprintln!("rejected {example_id}: {reason:?}");
                rejected += 1;
            }
        }
    }
    (records, rejected)
}

fn cmd_grpo_check(args: GrpoCheckArgs) -> Result<()> {
    let groups: Vec<GrpoGroup> = read_jsonl(&args.group_file)?;
    let options = ObjectiveOptions {
        normalize_surrogate_by_length: args.normalize_surrogate_by_length,
        kl_mean_over_tokens: !args.kl_sum,
    };
    for (index, group) in groups.iter().enumerate() {
        let eval = evaluate_group(group, options)?;
        println!(
            "group {index}: G={} eps_clip={} beta_kl={} eps_std={}",
            group.rewards.len(),
            group.eps_clip,
            group.beta_kl,
            group.eps_std
        );
        println!(
            "  advantages: [{}]",
            eval.advantages
                .iter()
                .map(f64::to_string)
                .collect::<Vec<_>>()
                .join(", ")
        );
        for (i, terms) in eval.clipped_terms.iter().enumerate() {
            println!(
                "  output {i} terms: [{}]",
                terms
                    .iter()
                    .map(f64::to_string)
                    .collect::<Vec<_>>()
                    .join(", ")
            );
        }
        println!("  surrogate: {}", eval.surrogate);
        println!("  kl: {}", eval.kl);
        println!("  objective: {}", eval.objective);
    }
    Ok(())
}

fn cmd_report(args: ReportArgs) -> Result<()> {
    let mut reports = Vec::new();
    for run in &args.runs {
        let path = RunPaths::new(run).report();
        let bytes = fs::read(&path)
            .with_context(|| format!("reading {} (run `metrics` there first)", path.display()))?;
        let report: MetricReport = serde_json::from_slice(&bytes)?;
        reports.push(report);
    }
    let tables = build_report(&reports, &args.baseline, Default::default())?;
    let format: EmitFormat = args.format.parse().map_err(|e: String| anyhow!(e))?;
    let rendered = emit(&tables, format);
    print!("{rendered}");
    if let Some(out) = &args.out {
        fs::create_dir_all(out)?;
        fs::write(
            out.join("report.txt"),
            emit(&tables, EmitFormat::AlignedText),
        )?;
        fs::write(out.join("report.csv"), emit(&tables, EmitFormat::Delimited))?;
        eprintln!("wrote {}/report.txt and report.csv", out.display());
    }
    Ok(())
}
