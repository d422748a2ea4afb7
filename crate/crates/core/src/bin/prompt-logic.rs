use std::fs::File;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};

use prompt_logic::backend::{ApiConfig, Backend, BackendMode, FixtureStore, LiveBackend, RecordingBackend, RetryPolicy};
use prompt_logic::evolution::{analyze_reduction, classify_session, heatmap, select_cohort, Cohort, TransitionRecord};
use prompt_logic::formalizer::{read_formalized, write_formalized_jsonl, FewShotExemplar, FormalizeOutcome, FormalizedSession};
use prompt_logic::logic::DiffMode;
use prompt_logic::progress::{detect_intervention_points, measure_progress, write_radar_csv, DEFAULT_CHURN_THRESHOLD};
use prompt_logic::report::{
    build_backend, file_token, formalize_corpus, load_solutions, model_settings, record_hand_authored, run_pipeline,
    sample_for_review, solutions_for, write_heatmap_csv, write_reductions_csv, write_review_csv,
    write_transitions_csv, PipelineError, RunConfig, DEFAULT_REVIEW_CONFIDENCE, DEFAULT_REVIEW_MARGIN, DEFAULT_SEED,
};
use prompt_logic::session::{load_sessions, PromptSession};
use prompt_logic::stats::{
    compare_diff_sizes, correlate_changes_with_length, diff_sizes_by_outcome, required_sample_size,
    summarize_constraints, task_ids, words_constraints_series, write_comparison_csv, write_correlation_csv,
    write_series_csv, write_summary_csv,
};

/// Turn prompting-session logs into constraint traces and analyze them.
#[derive(Parser)]
#[command(name = "prompt-logic", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Extract constraints for every session and write formalized JSONL.
    Formalize {
        #[command(flatten)]
        backend: BackendArgs,
        #[arg(long)]
        sessions: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Classify consecutive-prompt transitions.
    Classify {
        #[command(flatten)]
        input: FormalizedInput,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write one heatmap CSV per task into this directory.
        #[arg(long)]
        heatmap_dir: Option<PathBuf>,
        #[arg(long, default_value_t = Cohort::FinishedAll)]
        cohort: Cohort,
        /// Also write the prompt-reduction findings here.
        #[arg(long)]
        reductions: Option<PathBuf>,
    },
    /// Descriptive statistics and hypothesis tests.
    Stats {
        #[command(subcommand)]
        which: StatsCommand,
    },
    /// Distance of each prompt of one session to known-good solutions.
    Progress {
        #[command(flatten)]
        backend: BackendArgs,
        #[arg(long)]
        sessions: PathBuf,
        #[arg(long)]
        session: String,
        #[arg(long = "solution-text", conflicts_with = "solution_file")]
        solution_text: Vec<String>,
        /// JSON object mapping session or task ids to lists of solution prompts.
        #[arg(long)]
        solution_file: Option<PathBuf>,
        #[arg(long, default_value_t = DiffMode::Linked)]
        diff_mode: DiffMode,
        #[arg(long, default_value_t = DEFAULT_CHURN_THRESHOLD)]
        churn_threshold: usize,
        /// Where to write the JSON trace; stdout if absent.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        radar: Option<PathBuf>,
    },
    /// Run the whole pipeline and write every artifact to a directory.
    Report {
        #[command(flatten)]
        backend: BackendArgs,
        #[arg(long)]
        sessions: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = Cohort::FinishedAll)]
        cohort: Cohort,
        #[arg(long, default_value_t = DiffMode::Linked)]
        diff_mode: DiffMode,
        #[arg(long, default_value_t = DEFAULT_CHURN_THRESHOLD)]
        churn_threshold: usize,
        #[arg(long, default_value_t = DEFAULT_SEED)]
        seed: u64,
    },
    /// Draw a seeded sample of prompts for manual review.
    Sample {
        #[command(flatten)]
        input: FormalizedInput,
        #[arg(long, default_value_t = DEFAULT_REVIEW_CONFIDENCE)]
        confidence: f64,
        #[arg(long, default_value_t = DEFAULT_REVIEW_MARGIN)]
        margin: f64,
        #[arg(long, default_value_t = DEFAULT_SEED)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Populate a replay fixture directory, from the live API or from
    /// hand-written replies.
    RecordFixtures {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        exemplar: Option<PathBuf>,
        #[arg(long)]
        sessions: PathBuf,
        #[arg(long)]
        fixtures: PathBuf,
        /// Directory of `<session_id>.txt` and `<session_id>.joint.txt` replies.
        #[arg(long)]
        responses: Option<PathBuf>,
        #[arg(long)]
        solutions: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum StatsCommand {
    /// Per-task constraint-count summary.
    Summary {
        #[command(flatten)]
        input: FormalizedInput,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Correlate transition-class shares with session length.
    Correlate {
        #[command(flatten)]
        input: FormalizedInput,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare diff sizes of successful and unsuccessful sessions.
    Compare {
        #[command(flatten)]
        input: FormalizedInput,
        #[arg(long, default_value_t = DiffMode::Linked)]
        diff_mode: DiffMode,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Mean words and constraints per prompt step for one task.
    Series {
        #[command(flatten)]
        input: FormalizedInput,
        #[arg(long)]
        task: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Review sample size for a population.
    Samplesize {
        #[arg(long)]
        population: u64,
        #[arg(long, default_value_t = DEFAULT_REVIEW_CONFIDENCE)]
        confidence: f64,
        #[arg(long, default_value_t = DEFAULT_REVIEW_MARGIN)]
        margin: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct BackendArgs {
    #[arg(long, default_value_t = BackendMode::Replay)]
    mode: BackendMode,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    fixtures: Option<PathBuf>,
    #[arg(long)]
    exemplar: Option<PathBuf>,
    #[arg(long)]
    concurrency: Option<usize>,
}

#[derive(Args)]
struct FormalizedInput {
    #[arg(long)]
    sessions: PathBuf,
    #[arg(long)]
    formalized: PathBuf,
}

fn setup(what: impl std::fmt::Display) -> PipelineError {
    PipelineError::Setup(what.to_string())
}

fn exemplar(path: Option<&Path>) -> Result<FewShotExemplar, PipelineError> {
    Ok(match path {
        Some(p) => FewShotExemplar::load(p)?,
        None => FewShotExemplar::default(),
    })
}

impl FormalizedInput {
    fn load(&self) -> Result<(Vec<PromptSession>, Vec<FormalizedSession>), PipelineError> {
        let sessions = load_sessions(&self.sessions)?;
        let file = File::open(&self.formalized).map_err(|e| setup(format!("{}: {e}", self.formalized.display())))?;
        let corpus = read_formalized(BufReader::new(file), &sessions).map_err(|e| PipelineError::Analysis(e.to_string()))?;
        Ok((sessions, corpus))
    }
}

/// Writes to `path` through a `.partial` file, or to stdout.
fn emit(path: Option<&Path>, body: impl FnOnce(&mut dyn Write) -> std::io::Result<()>) -> Result<(), PipelineError> {
    match path {
        Some(p) => {
            let partial = PathBuf::from(format!("{}.partial", p.display()));
            let err = |source| PipelineError::Output { path: p.display().to_string(), source };
            let mut w = std::io::BufWriter::new(File::create(&partial).map_err(err)?);
            body(&mut w).map_err(err)?;
            w.flush().map_err(err)?;
            drop(w);
            std::fs::rename(&partial, p).map_err(err)
        }
        None => {
            let stdout = std::io::stdout();
            let mut lock = stdout.lock();
            body(&mut lock).map_err(|source| PipelineError::Output { path: "<stdout>".into(), source })
        }
    }
}

fn csv_io(e: csv::Error) -> std::io::Error {
    std::io::Error::other(e)
}

fn transitions_of(corpus: &[FormalizedSession]) -> Vec<TransitionRecord> {
    corpus.iter().flat_map(classify_session).collect()
}

fn run(command: Command) -> Result<(), PipelineError> {
    match command {
        Command::Formalize { backend: args, sessions, out } => {
            let api = ApiConfig::load(args.config.as_deref())?;
            let backend = build_backend(args.mode, &api, args.fixtures.as_deref())?;
            let sessions = load_sessions(&sessions)?;
            let ex = exemplar(args.exemplar.as_deref())?;
            let outcomes = formalize_corpus(
                &sessions,
                &ex,
                &model_settings(&api),
                backend.as_ref(),
                args.concurrency.unwrap_or(api.concurrency),
            )?;
            let mut corpus = Vec::new();
            for o in outcomes {
                match o {
                    FormalizeOutcome::Formalized(fs) => corpus.push(fs),
                    FormalizeOutcome::Unformalized { session_id, reason } => {
                        eprintln!("unformalized {session_id}: {reason}")
                    }
                }
            }
            emit(out.as_deref(), |w| write_formalized_jsonl(w, &corpus))
        }
        Command::Classify { input, out, heatmap_dir, cohort, reductions } => {
            let (_, corpus) = input.load()?;
            let transitions = transitions_of(&corpus);
            emit(out.as_deref(), |w| write_transitions_csv(w, &transitions).map_err(csv_io))?;
            if let Some(dir) = heatmap_dir {
                std::fs::create_dir_all(&dir).map_err(|e| setup(format!("{}: {e}", dir.display())))?;
                let ids: std::collections::BTreeSet<String> =
                    select_cohort(&corpus, cohort).iter().map(|fs| fs.session.session_id.clone()).collect();
                let kept: Vec<_> = transitions.iter().filter(|t| ids.contains(&t.session_id)).cloned().collect();
                for task in task_ids(&corpus) {
                    let path = dir.join(format!("heatmap_task_{}.csv", file_token(&task)));
                    emit(Some(&path), |w| write_heatmap_csv(w, &heatmap(&task, &kept)).map_err(csv_io))?;
                }
            }
            if let Some(path) = reductions {
                let mut findings = Vec::new();
                for fs in &corpus {
                    findings.extend(
                        analyze_reduction(fs, &fs.session.success_flags())
                            .map_err(|e| PipelineError::Analysis(e.to_string()))?,
                    );
                }
                emit(Some(&path), |w| write_reductions_csv(w, &findings).map_err(csv_io))?;
            }
            Ok(())
        }
        Command::Stats { which } => run_stats(which),
        Command::Progress {
            backend: args,
            sessions,
            session,
            solution_text,
            solution_file,
            diff_mode,
            churn_threshold,
            out,
            radar,
        } => {
            let api = ApiConfig::load(args.config.as_deref())?;
            let backend = build_backend(args.mode, &api, args.fixtures.as_deref())?;
            let sessions = load_sessions(&sessions)?;
            let target = sessions
                .iter()
                .find(|s| s.session_id == session)
                .ok_or_else(|| setup(format!("no session {session:?} in the input")))?;
            let solutions = match solution_file {
                Some(path) => solutions_for(&load_solutions(&path)?, target).map(<[String]>::to_vec).unwrap_or_default(),
                None => solution_text,
            };
            let report = measure_progress(
                target,
                &solutions,
                &exemplar(args.exemplar.as_deref())?,
                &model_settings(&api),
                backend.as_ref(),
                diff_mode,
            )
            .map_err(|e| match e {
                prompt_logic::progress::ProgressError::Backend(source) => {
                    PipelineError::Backend { session_id: session.clone(), source }
                }
                other => PipelineError::Analysis(other.to_string()),
            })?;
            let points = detect_intervention_points(&report.trace, churn_threshold);
            let json = serde_json::json!({
                "trace": report.trace,
                "intervention_points": points,
                "churn_threshold": churn_threshold,
                "stagnation_rule": "heuristic: distance non-decreasing over 3 consecutive prompts",
            });
            emit(out.as_deref(), |w| {
                serde_json::to_writer_pretty(&mut *w, &json).map_err(std::io::Error::other)?;
                w.write_all(b"\n")
            })?;
            if let Some(path) = radar {
                emit(Some(&path), |w| write_radar_csv(w, &report).map_err(csv_io))?;
            }
            Ok(())
        }
        Command::Report { backend: args, sessions, out_dir, cohort, diff_mode, churn_threshold, seed } => {
            let config = RunConfig {
                mode: args.mode,
                config_path: args.config,
                exemplar_path: args.exemplar,
                fixture_dir: args.fixtures,
                concurrency: args.concurrency,
                cohort,
                diff_mode,
                churn_threshold,
                seed,
                ..RunConfig::new(sessions, out_dir)
            };
            let output = run_pipeline(&config)?;
            eprintln!(
                "{} sessions, {} formalized, {} unformalized",
                output.manifest.counts.sessions,
                output.manifest.counts.formalized_sessions,
                output.manifest.counts.unformalized_sessions
            );
            Ok(())
        }
        Command::Sample { input, confidence, margin, seed, out } => {
            let (_, corpus) = input.load()?;
            let items = sample_for_review(&corpus, confidence, margin, seed)?;
            emit(out.as_deref(), |w| write_review_csv(w, &items).map_err(csv_io))
        }
        Command::RecordFixtures { config, exemplar: ex_path, sessions, fixtures, responses, solutions } => {
            let sessions = load_sessions(&sessions)?;
            let ex = exemplar(ex_path.as_deref())?;
            let solutions = match &solutions {
                Some(p) => load_solutions(p)?,
                None => Default::default(),
            };
            let store = FixtureStore::create(&fixtures).map_err(setup)?;
            match responses {
                Some(dir) => {
                    let api = ApiConfig::load(config.as_deref())?;
                    let keys = record_hand_authored(&sessions, &ex, &model_settings(&api), &dir, &solutions, &store)
                        .map_err(setup)?;
                    eprintln!("recorded {} fixtures into {}", keys.len(), fixtures.display());
                }
                None => {
                    let api = ApiConfig::load(config.as_deref())?;
                    let live = LiveBackend::new(&api, RetryPolicy::default())?;
                    let backend = RecordingBackend::new(live, Arc::new(store));
                    let settings = model_settings(&api);
                    formalize_corpus(&sessions, &ex, &settings, &backend, api.concurrency)?;
                    for s in &sessions {
                        if let Some(sols) = solutions_for(&solutions, s) {
                            measure_progress(s, sols, &ex, &settings, &backend, DiffMode::Linked).map_err(|e| {
                                PipelineError::Analysis(format!("session {}: {e}", s.session_id))
                            })?;
                        }
                    }
                    eprintln!("recorded {} completions into {}", backend.calls(), fixtures.display());
                }
            }
            Ok(())
        }
    }
}

fn run_stats(which: StatsCommand) -> Result<(), PipelineError> {
    match which {
        StatsCommand::Summary { input, out } => {
            let (_, corpus) = input.load()?;
            let rows =
                task_ids(&corpus).iter().map(|t| summarize_constraints(&corpus, t)).collect::<Result<Vec<_>, _>>()?;
            emit(out.as_deref(), |w| write_summary_csv(w, &rows).map_err(csv_io))
        }
        StatsCommand::Correlate { input, out } => {
            let (_, corpus) = input.load()?;
            let rows = correlate_changes_with_length(&transitions_of(&corpus))?;
            emit(out.as_deref(), |w| write_correlation_csv(w, &rows).map_err(csv_io))
        }
        StatsCommand::Compare { input, diff_mode, out } => {
            let (_, corpus) = input.load()?;
            let (success, failure) = diff_sizes_by_outcome(&corpus, &transitions_of(&corpus), diff_mode);
            let result = compare_diff_sizes(&success, &failure)?;
            emit(out.as_deref(), |w| write_comparison_csv(w, &result).map_err(csv_io))
        }
        StatsCommand::Series { input, task, out } => {
            let (_, corpus) = input.load()?;
            let rows = words_constraints_series(&corpus, &task);
            emit(out.as_deref(), |w| write_series_csv(w, &task, &rows).map_err(csv_io))
        }
        StatsCommand::Samplesize { population, confidence, margin, out } => {
            let n = required_sample_size(population, confidence, margin)?;
            emit(out.as_deref(), |w| {
                writeln!(w, "population,confidence,margin,sample_size")?;
                writeln!(w, "{population},{confidence},{margin},{n}")
            })
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            // usage errors share the config/input exit code
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let out_dir = match &cli.command {
        Command::Report { out_dir, .. } => Some(out_dir.clone()),
        _ => None,
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            // The report command already wrote its error.json.
            if out_dir.is_none() {
                let report = prompt_logic::report::ErrorReport::from(&e);
                eprintln!("{}", serde_json::to_string(&report).expect("error report serializes"));
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
