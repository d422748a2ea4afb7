//! End-to-end runs: ingest, formalize, analyze, and write every artifact.
//!
//! Each artifact is first written as `<name>.partial` and renamed once it is
//! complete, so a crashed run never leaves a truncated file under its final
//! name.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::backend::{
    ApiConfig, Backend, BackendError, BackendMode, CompletionResponse, ConfigError, FixtureStore, LiveBackend,
    RecordingBackend, ReplayBackend, RetryPolicy,
};
use crate::evolution::{
    analyze_reduction, classify_session, heatmap, select_cohort, tally_reductions, Cohort, Heatmap, ReductionFinding,
    ReductionRelation, TransitionClass, TransitionRecord,
};
use crate::formalizer::{
    build_request, formalize_session, write_formalized_jsonl, ExemplarError, FewShotExemplar, FormalizeOutcome,
    FormalizedSession, ModelSettings,
};
use crate::logic::DiffMode;
use crate::progress::joint_session;
use crate::session::{load_sessions, LoadError, PromptSession};
use crate::stats::{
    compare_diff_sizes, correlate_changes_with_length, diff_sizes_by_outcome, required_sample_size,
    summarize_constraints, task_ids, words_constraints_series, write_comparison_csv, write_correlation_csv,
    write_series_csv, write_summary_csv, StatsError,
};

pub const DEFAULT_SEED: u64 = 20_250_101;
pub const DEFAULT_REVIEW_CONFIDENCE: f64 = 0.95;
pub const DEFAULT_REVIEW_MARGIN: f64 = 0.06;

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub mode: BackendMode,
    pub config_path: Option<PathBuf>,
    pub exemplar_path: Option<PathBuf>,
    pub sessions_path: PathBuf,
    pub out_dir: PathBuf,
    /// Overrides `fixture_dir` from the config file.
    pub fixture_dir: Option<PathBuf>,
    pub cohort: Cohort,
    pub diff_mode: DiffMode,
    pub churn_threshold: usize,
    /// Overrides `concurrency` from the config file.
    pub concurrency: Option<usize>,
    pub seed: u64,
    pub review_confidence: f64,
    pub review_margin: f64,
}

impl RunConfig {
    pub fn new(sessions_path: impl Into<PathBuf>, out_dir: impl Into<PathBuf>) -> Self {
        RunConfig {
            mode: BackendMode::Replay,
            config_path: None,
            exemplar_path: None,
            sessions_path: sessions_path.into(),
            out_dir: out_dir.into(),
            fixture_dir: None,
            cohort: Cohort::default(),
            diff_mode: DiffMode::default(),
            churn_threshold: crate::progress::DEFAULT_CHURN_THRESHOLD,
            concurrency: None,
            seed: DEFAULT_SEED,
            review_confidence: DEFAULT_REVIEW_CONFIDENCE,
            review_margin: DEFAULT_REVIEW_MARGIN,
        }
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Setup(String),
    #[error(transparent)]
    Input(#[from] LoadError),
    #[error(transparent)]
    Exemplar(#[from] ExemplarError),
    #[error("cannot write {path}: {source}")]
    Output {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("backend failure on session {session_id}: {source}")]
    Backend {
        session_id: String,
        #[source]
        source: BackendError,
    },
    #[error("analysis failed: {0}")]
    Analysis(String),
}

impl PipelineError {
    /// 1 for input or configuration problems, 2 for backend failures, 3 for
    /// parse or validation failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_)
            | PipelineError::Setup(_)
            | PipelineError::Input(_)
            | PipelineError::Exemplar(_)
            | PipelineError::Output { .. } => 1,
            PipelineError::Backend { .. } => 2,
            PipelineError::Analysis(_) => 3,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            PipelineError::Config(_) => "config",
            PipelineError::Setup(_) => "setup",
            PipelineError::Input(_) => "input",
            PipelineError::Exemplar(_) => "exemplar",
            PipelineError::Output { .. } => "output",
            PipelineError::Backend { .. } => "backend",
            PipelineError::Analysis(_) => "analysis",
        }
    }
}

impl From<StatsError> for PipelineError {
    fn from(e: StatsError) -> Self {
        PipelineError::Analysis(e.to_string())
    }
}

/// Machine-readable failure report written as `error.json`.
#[derive(Debug, Serialize)]
pub struct ErrorReport<'a> {
    pub exit_code: i32,
    pub kind: &'a str,
    pub message: String,
}

impl<'a> From<&'a PipelineError> for ErrorReport<'a> {
    fn from(e: &'a PipelineError) -> Self {
        ErrorReport { exit_code: e.exit_code(), kind: e.kind(), message: e.to_string() }
    }
}

/// Builds the backend for `mode`. Replay never touches credentials; live
/// and record fail before any network call when the key is missing.
pub fn build_backend(
    mode: BackendMode,
    api: &ApiConfig,
    fixture_dir: Option<&Path>,
) -> Result<Box<dyn Backend>, PipelineError> {
    let dir = fixture_dir.or(api.fixture_dir.as_deref());
    match mode {
        BackendMode::Replay => {
            let dir = dir.ok_or_else(|| PipelineError::Setup("replay mode needs a fixture directory".into()))?;
            let backend = ReplayBackend::open(dir).map_err(|e| PipelineError::Setup(e.to_string()))?;
            Ok(Box::new(backend))
        }
        BackendMode::Live => Ok(Box::new(LiveBackend::new(api, RetryPolicy::default())?)),
        BackendMode::Record => {
            let dir = dir.ok_or_else(|| PipelineError::Setup("record mode needs a writable fixture directory".into()))?;
            let live = LiveBackend::new(api, RetryPolicy::default())?;
            let store = FixtureStore::create(dir).map_err(|e| PipelineError::Setup(e.to_string()))?;
            Ok(Box::new(RecordingBackend::new(live, Arc::new(store))))
        }
    }
}

pub fn model_settings(api: &ApiConfig) -> ModelSettings {
    ModelSettings { model_id: api.model.clone(), temperature: api.temperature, max_output_tokens: api.max_output_tokens }
}

/// Formalizes every session with at most `concurrency` requests in flight.
/// Results keep the input order.
pub fn formalize_corpus(
    sessions: &[PromptSession],
    exemplar: &FewShotExemplar,
    settings: &ModelSettings,
    backend: &dyn Backend,
    concurrency: usize,
) -> Result<Vec<FormalizeOutcome>, PipelineError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(concurrency.max(1))
        .build()
        .map_err(|e| PipelineError::Setup(format!("cannot start worker pool: {e}")))?;
    let results: Vec<_> = pool.install(|| {
        sessions
            .par_iter()
            .map(|s| {
                formalize_session(s, exemplar, settings, backend)
                    .map_err(|source| PipelineError::Backend { session_id: s.session_id.clone(), source })
            })
            .collect()
    });
    results.into_iter().collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Counts {
    pub sessions: usize,
    pub prompts: usize,
    pub formalized_sessions: usize,
    pub unformalized_sessions: usize,
    pub transitions: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Unformalized {
    pub session_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Manifest {
    pub tool_version: String,
    pub backend_mode: BackendMode,
    pub backend_id: String,
    pub model_id: String,
    pub exemplar_hash: String,
    pub sessions_sha256: String,
    pub diff_mode: DiffMode,
    pub cohort: Cohort,
    pub churn_threshold: usize,
    pub seed: u64,
    pub counts: Counts,
    pub unformalized: Vec<Unformalized>,
    pub network_calls: u64,
    pub artifacts: Vec<String>,
    pub metadata: BTreeMap<String, String>,
}

fn analysis_metadata() -> BTreeMap<String, String> {
    [
        ("p_value_sidedness", "two-sided"),
        ("p_value_floor", "1e-15"),
        ("quartile_method", "linear interpolation between order statistics (type 7)"),
        ("std_denominator", "n-1"),
        ("mann_whitney_exact_limit", "12 values in total, tie-free"),
        ("churn_rule", "diff size to previous prompt >= churn_threshold"),
        ("stagnation_rule", "heuristic: distance non-decreasing over 3 consecutive prompts"),
        ("reduction_ties", "equal cardinality with different atoms reported as ambiguous"),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v.to_string()))
    .collect()
}

/// What a finished run produced.
#[derive(Debug)]
pub struct RunOutput {
    pub manifest: Manifest,
    pub corpus: Vec<FormalizedSession>,
    pub transitions: Vec<TransitionRecord>,
}

/// Runs the whole pipeline as configured. On failure an `error.json` is
/// written to the output directory when possible.
pub fn run_pipeline(config: &RunConfig) -> Result<RunOutput, PipelineError> {
    let result = (|| {
        let api = ApiConfig::load(config.config_path.as_deref())?;
        let backend = build_backend(config.mode, &api, config.fixture_dir.as_deref())?;
        let concurrency = config.concurrency.unwrap_or(api.concurrency);
        run_with_backend(config, backend.as_ref(), &model_settings(&api), concurrency)
    })();
    if let Err(e) = &result {
        write_error_report(&config.out_dir, e);
    }
    result
}

pub fn write_error_report(out_dir: &Path, error: &PipelineError) {
    let report = ErrorReport::from(error);
    let written = std::fs::create_dir_all(out_dir).and_then(|_| {
        let json = serde_json::to_string_pretty(&report).expect("error report serializes");
        std::fs::write(out_dir.join("error.json"), json + "\n")
    });
    if let Err(e) = written {
        log::error!("cannot write error report to {}: {e}", out_dir.display());
    }
}

/// The pipeline with a caller-supplied backend.
pub fn run_with_backend(
    config: &RunConfig,
    backend: &dyn Backend,
    settings: &ModelSettings,
    concurrency: usize,
) -> Result<RunOutput, PipelineError> {
    let sessions = load_sessions(&config.sessions_path)?;
    let sessions_bytes = std::fs::read(&config.sessions_path)
        .map_err(|e| PipelineError::Setup(format!("cannot read {}: {e}", config.sessions_path.display())))?;
    let exemplar = match &config.exemplar_path {
        Some(p) => FewShotExemplar::load(p)?,
        None => FewShotExemplar::default(),
    };

    let outcomes = formalize_corpus(&sessions, &exemplar, settings, backend, concurrency)?;
    let mut corpus = Vec::new();
    let mut unformalized = Vec::new();
    for outcome in outcomes {
        match outcome {
            FormalizeOutcome::Formalized(fs) => corpus.push(fs),
            FormalizeOutcome::Unformalized { session_id, reason } => unformalized.push(Unformalized { session_id, reason }),
        }
    }

    let transitions: Vec<TransitionRecord> = corpus.par_iter().flat_map_iter(classify_session).collect();
    let mut reductions = Vec::new();
    for fs in &corpus {
        let flags = fs.session.success_flags();
        reductions.extend(analyze_reduction(fs, &flags).map_err(|e| PipelineError::Analysis(e.to_string()))?);
    }

    let tasks = task_ids(&corpus);
    let summary = tasks.iter().map(|t| summarize_constraints(&corpus, t)).collect::<Result<Vec<_>, _>>()?;
    let correlation = correlate_changes_with_length(&transitions)?;
    let (success, failure) = diff_sizes_by_outcome(&corpus, &transitions, config.diff_mode);
    let comparison = compare_diff_sizes(&success, &failure)?;
    let review = sample_for_review(&corpus, config.review_confidence, config.review_margin, config.seed)?;

    let out = ArtifactDir::create(&config.out_dir)?;
    let _ = std::fs::remove_file(config.out_dir.join("error.json"));
    out.write("formalized.jsonl", |w| write_formalized_jsonl(w, &corpus))?;
    out.write("transitions.csv", |w| write_transitions_csv(w, &transitions).map_err(csv_io))?;
    let cohort = select_cohort(&corpus, config.cohort);
    let cohort_ids: BTreeSet<&str> = cohort.iter().map(|fs| fs.session.session_id.as_str()).collect();
    let cohort_transitions: Vec<TransitionRecord> =
        transitions.iter().filter(|t| cohort_ids.contains(t.session_id.as_str())).cloned().collect();
    for task in &tasks {
        let map = heatmap(task, &cohort_transitions);
        out.write(&format!("heatmap_task_{}.csv", file_token(task)), |w| write_heatmap_csv(w, &map).map_err(csv_io))?;
        let series = words_constraints_series(&corpus, task);
        out.write(&format!("series_task_{}.csv", file_token(task)), |w| {
            write_series_csv(w, task, &series).map_err(csv_io)
        })?;
    }
    out.write("summary.csv", |w| write_summary_csv(w, &summary).map_err(csv_io))?;
    out.write("correlation.csv", |w| write_correlation_csv(w, &correlation).map_err(csv_io))?;
    out.write("comparison.csv", |w| write_comparison_csv(w, &comparison).map_err(csv_io))?;
    out.write("reductions.csv", |w| write_reductions_csv(w, &reductions).map_err(csv_io))?;
    out.write("reductions_table.md", |w| write_reduction_table(w, &reductions))?;
    out.write("churn_points.csv", |w| {
        write_churn_csv(w, &transitions, config.diff_mode, config.churn_threshold).map_err(csv_io)
    })?;
    out.write("review_sample.csv", |w| write_review_csv(w, &review).map_err(csv_io))?;

    let manifest = Manifest {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        backend_mode: config.mode,
        backend_id: backend.id(),
        model_id: settings.model_id.clone(),
        exemplar_hash: exemplar.hash(),
        sessions_sha256: hex::encode(Sha256::digest(&sessions_bytes)),
        diff_mode: config.diff_mode,
        cohort: config.cohort,
        churn_threshold: config.churn_threshold,
        seed: config.seed,
        counts: Counts {
            sessions: sessions.len(),
            prompts: sessions.iter().map(PromptSession::len).sum(),
            formalized_sessions: corpus.len(),
            unformalized_sessions: unformalized.len(),
            transitions: transitions.len(),
        },
        unformalized,
        network_calls: backend.network_calls(),
        artifacts: {
            let mut names = out.written.borrow().clone();
            names.push("manifest.json".into());
            names.sort();
            names
        },
        metadata: analysis_metadata(),
    };
    out.write("manifest.json", |w| {
        serde_json::to_writer_pretty(&mut *w, &manifest).map_err(std::io::Error::other)?;
        w.write_all(b"\n")
    })?;
    log::info!(
        "run complete: {} sessions, {} formalized, {} transitions",
        manifest.counts.sessions,
        manifest.counts.formalized_sessions,
        manifest.counts.transitions
    );
    Ok(RunOutput { manifest, corpus, transitions })
}

fn csv_io(e: csv::Error) -> std::io::Error {
    std::io::Error::other(e)
}

/// Task ids restricted to characters that are safe in file names.
pub fn file_token(task: &str) -> String {
    task.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' }).collect()
}

/// An output directory whose files appear under their final names only when
/// complete.
pub struct ArtifactDir {
    dir: PathBuf,
    written: std::cell::RefCell<Vec<String>>,
}

impl ArtifactDir {
    pub fn create(dir: &Path) -> Result<Self, PipelineError> {
        std::fs::create_dir_all(dir)
            .map_err(|source| PipelineError::Output { path: dir.display().to_string(), source })?;
        Ok(ArtifactDir { dir: dir.to_path_buf(), written: Default::default() })
    }

    pub fn write(
        &self,
        name: &str,
        body: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>,
    ) -> Result<PathBuf, PipelineError> {
        let final_path = self.dir.join(name);
        let partial = self.dir.join(format!("{name}.partial"));
        let err = |source| PipelineError::Output { path: partial.display().to_string(), source };
        let file = File::create(&partial).map_err(err)?;
        let mut w = BufWriter::new(file);
        body(&mut w).map_err(err)?;
        w.flush().map_err(err)?;
        drop(w);
        std::fs::rename(&partial, &final_path).map_err(err)?;
        self.written.borrow_mut().push(name.to_string());
        Ok(final_path)
    }
}

pub fn write_transitions_csv<W: Write>(w: W, transitions: &[TransitionRecord]) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["session_id", "task_id", "from_index", "class", "diff_raw", "diff_linked"])?;
    for t in transitions {
        out.write_record([
            t.session_id.clone(),
            t.task_id.clone(),
            t.from_index.to_string(),
            t.class.to_string(),
            t.diff_size_raw.to_string(),
            t.diff_size_linked.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// Rows for every step from 2 to the last step seen, zero-filled.
pub fn write_heatmap_csv<W: Write>(w: W, map: &Heatmap) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(std::iter::once("step").chain(TransitionClass::ALL.iter().map(|c| c.name())))?;
    let last = map.rows.keys().next_back().copied().unwrap_or(1);
    for step in 2..=last {
        let counts = map.rows.get(&step).copied().unwrap_or_default();
        out.write_record(std::iter::once(step.to_string()).chain(counts.iter().map(usize::to_string)))?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_reductions_csv<W: Write>(w: W, findings: &[ReductionFinding]) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["session_id", "original_index", "reduced_index", "relation"])?;
    for f in findings {
        out.write_record([
            f.session_id.clone(),
            f.original_index.to_string(),
            f.reduced_index.to_string(),
            f.relation.name().to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// Three-column table of reduction outcomes; ambiguous cases go in a
/// footnote.
pub fn write_reduction_table<W: Write>(mut w: W, findings: &[ReductionFinding]) -> std::io::Result<()> {
    let t = tally_reductions(findings);
    writeln!(w, "| Identical constraints | Fewer constraints | More constraints |")?;
    writeln!(w, "|---|---|---|")?;
    writeln!(
        w,
        "| {} | {} | {} |",
        t[&ReductionRelation::Identical],
        t[&ReductionRelation::Fewer],
        t[&ReductionRelation::More]
    )?;
    let ambiguous = t[&ReductionRelation::Ambiguous];
    if ambiguous > 0 {
        writeln!(w)?;
        writeln!(w, "Not shown: {ambiguous} reduced prompt(s) with the same number of different constraints.")?;
    }
    Ok(())
}

pub fn write_churn_csv<W: Write>(
    w: W,
    transitions: &[TransitionRecord],
    mode: DiffMode,
    threshold: usize,
) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["session_id", "task_id", "prompt_index", "diff_size"])?;
    for t in transitions.iter().filter(|t| t.diff_size(mode) >= threshold) {
        out.write_record([t.session_id.clone(), t.task_id.clone(), t.to_index.to_string(), t.diff_size(mode).to_string()])?;
    }
    out.flush()?;
    Ok(())
}

/// One prompt picked for manual checking of its extracted constraints.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ReviewItem {
    pub session_id: String,
    pub task_id: String,
    pub prompt_index: usize,
    pub text: String,
    pub atoms: String,
    pub descriptions: String,
}

/// Draws a uniform sample of prompts, without replacement, sized for the
/// given confidence and margin. Items come back in corpus order.
pub fn sample_for_review(
    corpus: &[FormalizedSession],
    confidence: f64,
    margin: f64,
    seed: u64,
) -> Result<Vec<ReviewItem>, StatsError> {
    let population: Vec<(&FormalizedSession, usize)> =
        corpus.iter().flat_map(|fs| (0..fs.formalizations.len()).map(move |i| (fs, i))).collect();
    if population.is_empty() {
        return Err(StatsError::EmptySample);
    }
    let wanted = required_sample_size(population.len() as u64, confidence, margin)? as usize;
    let size = if wanted > population.len() {
        log::warn!("sample size {wanted} exceeds the {} available prompts; returning all of them", population.len());
        population.len()
    } else {
        wanted
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = rand::seq::index::sample(&mut rng, population.len(), size).into_vec();
    picked.sort_unstable();

    Ok(picked
        .into_iter()
        .map(|k| {
            let (fs, i) = population[k];
            let f = &fs.formalizations[i];
            let descriptions = f
                .atoms
                .iter()
                .map(|l| format!("{l}: {}", fs.descriptions.get(l).map(String::as_str).unwrap_or("")))
                .collect::<Vec<_>>()
                .join("\n");
            ReviewItem {
                session_id: fs.session.session_id.clone(),
                task_id: fs.session.task_id.clone(),
                prompt_index: fs.session.prompts[i].index,
                text: fs.session.prompts[i].text.clone(),
                atoms: f.atoms.to_string(),
                descriptions,
            }
        })
        .collect())
}

pub fn write_review_csv<W: Write>(w: W, items: &[ReviewItem]) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["session_id", "task_id", "prompt_index", "text", "atoms", "descriptions", "verdict"])?;
    for item in items {
        out.write_record([
            item.session_id.as_str(),
            item.task_id.as_str(),
            &item.prompt_index.to_string(),
            item.text.as_str(),
            item.atoms.as_str(),
            item.descriptions.as_str(),
            "",
        ])?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Debug, Error)]
pub enum HandFixtureError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("no response file for session {0}")]
    MissingResponse(String),
    #[error("session {session_id} has a joint response but no solutions (by session or task {task_id})")]
    MissingSolutions { session_id: String, task_id: String },
    #[error(transparent)]
    Store(#[from] BackendError),
}

/// Solution prompts keyed by session id or task id.
pub type Solutions = BTreeMap<String, Vec<String>>;

/// The solutions for `session`: an entry under its session id wins over one
/// under its task id. Empty lists count as absent.
pub fn solutions_for<'a>(solutions: &'a Solutions, session: &PromptSession) -> Option<&'a [String]> {
    [&session.session_id, &session.task_id]
        .into_iter()
        .find_map(|key| solutions.get(key).filter(|v| !v.is_empty()))
        .map(Vec::as_slice)
}

pub fn load_solutions(path: &Path) -> Result<Solutions, PipelineError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| PipelineError::Setup(format!("cannot read solutions {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| PipelineError::Setup(format!("invalid solutions file {}: {e}", path.display())))
}

/// Records hand-written replies as replay fixtures.
///
/// `<session_id>.txt` answers the session's extraction request and the
/// optional `<session_id>.joint.txt` answers the joint request built from
/// the session plus its task's solutions. Returns the recorded keys.
pub fn record_hand_authored(
    sessions: &[PromptSession],
    exemplar: &FewShotExemplar,
    settings: &ModelSettings,
    responses_dir: &Path,
    solutions: &Solutions,
    store: &FixtureStore,
) -> Result<Vec<String>, HandFixtureError> {
    let read = |path: PathBuf| {
        std::fs::read_to_string(&path).map_err(|source| HandFixtureError::Read { path: path.display().to_string(), source })
    };
    let response = |text: String| CompletionResponse { text, backend_id: "hand-authored".into(), latency_ms: 0 };

    let mut keys = Vec::new();
    for s in sessions {
        let path = responses_dir.join(format!("{}.txt", s.session_id));
        if !path.exists() {
            return Err(HandFixtureError::MissingResponse(s.session_id.clone()));
        }
        keys.push(store.record(&build_request(exemplar, s, settings), &response(read(path)?))?);

        let joint_path = responses_dir.join(format!("{}.joint.txt", s.session_id));
        if joint_path.exists() {
            let sols = solutions_for(solutions, s).ok_or_else(|| {
                HandFixtureError::MissingSolutions { session_id: s.session_id.clone(), task_id: s.task_id.clone() }
            })?;
            let joint = joint_session(s, sols);
            keys.push(store.record(&build_request(exemplar, &joint, settings), &response(read(joint_path)?))?);
        }
    }
    Ok(keys)
}
