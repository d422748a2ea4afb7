//! One PASS/FAIL line per acceptance criterion. Exits nonzero if any fails.

use std::collections::{BTreeMap, BTreeSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use prompt_logic::backend::{
    Backend, BackendError, CompletionRequest, CompletionResponse, FixtureStore, ReplayBackend,
};
use prompt_logic::evolution::{
    analyze_reduction, classify_session, classify_transition, tally_reductions, ReductionRelation, TransitionClass,
};
use prompt_logic::formalizer::{
    formalize_session, parse_response, split_request_prompts, FewShotExemplar, Formalization, FormalizedSession,
    ModelSettings,
};
use prompt_logic::logic::{AtomSet, DiffMode, Label};
use prompt_logic::progress::measure_progress;
use prompt_logic::report::{load_solutions, run_pipeline, run_with_backend, RunConfig};
use prompt_logic::session::{load_sessions, Outcome, PromptRecord, PromptSession};
use prompt_logic::stats::{mann_whitney_statistic, mann_whitney_u_with, pearson, required_sample_size, TestMethod};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use sha2::{Digest, Sha256};

type Check = Result<String, String>;
type Criterion = (&'static str, fn() -> Check);

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(limit: Duration, started: Instant) -> Result<(), String> {
    let took = started.elapsed();
    ensure(took < limit, || format!("took {took:?}, limit {limit:?}"))
}

fn numbers(a: &AtomSet) -> Vec<u32> {
    a.iter().map(|l| l.number()).collect()
}

fn annotations(path: &Path) -> BTreeMap<String, Vec<Vec<u32>>> {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn replay_corpus() -> (Vec<PromptSession>, ReplayBackend) {
    let f = fixtures();
    (load_sessions(f.join("sessions.jsonl")).unwrap(), ReplayBackend::open(f.join("replay")).unwrap())
}

fn formalize(id: &str) -> FormalizedSession {
    let (sessions, backend) = replay_corpus();
    let s = sessions.iter().find(|s| s.session_id == id).unwrap();
    formalize_session(s, &FewShotExemplar::default(), &ModelSettings::default(), &backend)
        .unwrap()
        .formalized()
        .unwrap()
}

fn parser_conformance() -> Check {
    let f = fixtures();
    let mut cases: Vec<(String, Vec<Vec<u32>>)> = Vec::new();
    for (file, want) in annotations(&f.join("grammar/annotations.json")) {
        cases.push((std::fs::read_to_string(f.join("grammar").join(&file)).unwrap(), want));
    }
    for (sid, want) in annotations(&f.join("annotations.json")) {
        cases.push((std::fs::read_to_string(f.join("responses").join(format!("{sid}.txt"))).unwrap(), want));
    }
    let label = Regex::new(r"\bC(\d+)\b").unwrap();
    let started = Instant::now();
    let mut inventions = 0;
    for (text, want) in &cases {
        let parsed = parse_response(text, want.len()).map_err(|e| e.to_string())?;
        let got: Vec<Vec<u32>> = parsed.formalizations.iter().map(|f| numbers(&f.atoms)).collect();
        ensure(&got == want, || format!("atoms {got:?} != annotated {want:?}"))?;
        let mentioned: BTreeSet<u32> = label.captures_iter(text).map(|c| c[1].parse().unwrap()).collect();
        for f in &parsed.formalizations {
            for l in f.atoms.iter() {
                if !mentioned.contains(&l.number()) || !parsed.descriptions.contains_key(l) {
                    inventions += 1;
                }
            }
        }
    }
    within(Duration::from_secs(1), started)?;
    ensure(inventions == 0, || format!("{inventions} invented labels"))?;
    Ok(format!("{} replies agree with annotations, 0 inventions, {:?}", cases.len(), started.elapsed()))
}

fn motivating_example() -> Check {
    let fs = formalize("t1-u01");
    let sets: Vec<Vec<u32>> = fs.formalizations.iter().map(|f| numbers(&f.atoms)).collect();
    ensure(sets == vec![vec![1, 2, 3], vec![1, 2, 3, 4], vec![1, 2, 3, 5]], || format!("atoms {sets:?}"))?;
    let refs: Vec<(u32, u32)> = fs.formalizations[2].refinements.iter().map(|(a, b)| (a.number(), b.number())).collect();
    ensure(refs == vec![(4, 5)], || format!("refinements {refs:?}"))?;
    let t = classify_session(&fs);
    let classes: Vec<_> = t.iter().map(|r| r.class).collect();
    ensure(
        classes == [TransitionClass::AddingConstraints, TransitionClass::ModifyingConstraints],
        || format!("classes {classes:?}"),
    )?;
    let linked: Vec<_> = t.iter().map(|r| r.diff_size_linked).collect();
    ensure(linked == [1, 1], || format!("linked diffs {linked:?}"))?;
    Ok("atoms, classes and linked diffs [1, 1] match".into())
}

fn oracle_class(prev_text: &str, curr_text: &str, a: u64, b: u64) -> TransitionClass {
    let norm = |t: &str| t.split_whitespace().collect::<Vec<_>>().join(" ");
    if norm(prev_text) == norm(curr_text) {
        TransitionClass::Resubmission
    } else if a == b {
        TransitionClass::Rewording
    } else if a & b == a {
        TransitionClass::AddingConstraints
    } else {
        TransitionClass::ModifyingConstraints
    }
}

fn mask_set(m: u64) -> AtomSet {
    (0..12).filter(|i| m >> i & 1 == 1).map(|i| Label::new(i + 1).unwrap()).collect()
}

fn rewording_rules() -> Check {
    let fs = formalize("t1-u03");
    let classes: Vec<_> = classify_session(&fs).iter().map(|r| r.class).collect();
    ensure(
        classes == [TransitionClass::Rewording, TransitionClass::Resubmission],
        || format!("t1-u03 classes {classes:?}"),
    )?;
    ensure(fs.session.prompts[1].text == fs.session.prompts[2].text, || "resubmission pair not byte-identical".into())?;

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut seen = BTreeSet::new();
    for i in 0..1000 {
        let a: u64 = rng.gen_range(0..1 << 12);
        let b: u64 = match rng.gen_range(0..4) {
            0 => a,
            1 => a | rng.gen_range(0..1 << 12),
            _ => rng.gen_range(0..1 << 12),
        };
        let same_text = rng.gen_bool(0.1);
        let prev_text = format!("prompt {i}");
        let curr_text = if same_text { format!("  prompt\t {i} ") } else { format!("prompt {i} revised") };
        let fa = Formalization { prompt_index: 1, atoms: mask_set(a), ..Default::default() };
        let fb = Formalization { prompt_index: 2, atoms: mask_set(b), ..Default::default() };
        let pa = PromptRecord::new(1, prev_text.clone());
        let pb = PromptRecord::new(2, curr_text.clone());
        let r = classify_transition("s", "1", (&pa, &fa), (&pb, &fb));
        let want = oracle_class(&prev_text, &curr_text, a, b);
        ensure(r.class == want, || format!("pair {a:#x}->{b:#x}: {:?} != oracle {want:?}", r.class))?;
        let raw = (a ^ b).count_ones() as usize;
        ensure(r.diff_size_raw == raw, || format!("raw diff {} != {raw}", r.diff_size_raw))?;
        seen.insert(r.class);
    }
    ensure(seen.len() == 4, || format!("only {} classes exercised", seen.len()))?;
    Ok("t1-u03 = [Rewording, Resubmission]; 1000 random pairs agree with the oracle ladder".into())
}

/// Replies with one formalization per prompt, reading atom numbers from the
/// prompt text (`need 3 7 1`).
struct EchoBackend {
    exemplar: FewShotExemplar,
}

impl Backend for EchoBackend {
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, BackendError> {
        let prompts = split_request_prompts(&self.exemplar, &request.user_text)
            .ok_or_else(|| BackendError::BadResponse("not a formalization request".into()))?;
        let mut out = String::new();
        for (i, p) in prompts.iter().enumerate() {
            let k = i + 1;
            let atoms: Vec<&str> = p.split_whitespace().skip(1).collect();
            out.push_str(&format!("Formalization of P{k}\n"));
            for a in &atoms {
                out.push_str(&format!("C{a}: requirement {a}.\n"));
            }
            let conj: Vec<String> = atoms.iter().map(|a| format!("C{a}")).collect();
            out.push_str(&format!("We can formalize P{k} as: P{k} → ({})\n", conj.join(" ∧ ")));
        }
        Ok(CompletionResponse { text: out, backend_id: "echo".into(), latency_ms: 0 })
    }
    fn id(&self) -> String {
        "echo".into()
    }
    fn calls(&self) -> u64 {
        0
    }
}

fn progress_oracle() -> Check {
    let f = fixtures();
    let (sessions, backend) = replay_corpus();
    let s = sessions.iter().find(|s| s.session_id == "t1-u01").unwrap();
    let solution = vec![s.prompts[2].text.clone()];
    let ann = annotations(&f.join("annotations.json"));
    let sol: BTreeSet<u32> = ann["t1-u01.joint"].last().unwrap().iter().copied().collect();
    let expected: Vec<usize> = ann["t1-u01"]
        .iter()
        .map(|a| a.iter().copied().collect::<BTreeSet<u32>>().symmetric_difference(&sol).count())
        .collect();
    ensure(expected == [1, 2, 0], || format!("hand oracle {expected:?}"))?;
    for mode in [DiffMode::Linked, DiffMode::Raw] {
        let r = measure_progress(s, &solution, &FewShotExemplar::default(), &ModelSettings::default(), &backend, mode)
            .map_err(|e| e.to_string())?;
        let d = r.trace.distance_values();
        ensure(d == expected, || format!("{mode:?} distances {d:?} != {expected:?}"))?;
    }

    let exemplar = FewShotExemplar::default();
    let echo = EchoBackend { exemplar: exemplar.clone() };
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for n in 0..100 {
        let len = rng.gen_range(1..8);
        let mut sets = Vec::new();
        let texts: Vec<String> = (0..len)
            .map(|i| {
                let mut atoms: Vec<u32> = (1..=10).filter(|_| rng.gen_bool(0.4)).collect();
                if atoms.is_empty() {
                    atoms.push(rng.gen_range(1..=10));
                }
                sets.push(atoms.iter().copied().collect::<BTreeSet<u32>>());
                let nums: Vec<String> = atoms.iter().map(|a| a.to_string()).collect();
                format!("need{i} {}", nums.join(" "))
            })
            .collect();
        let pick = rng.gen_range(0..len);
        let session = PromptSession::from_texts(format!("syn{n}"), "u", "1", texts.clone(), Outcome::Success);
        let r = measure_progress(&session, &[texts[pick].clone()], &exemplar, &ModelSettings::default(), &echo, DiffMode::Linked)
            .map_err(|e| format!("synthetic {n}: {e}"))?;
        let d = r.trace.distance_values();
        ensure(d[pick] == 0, || format!("synthetic {n}: self distance {}", d[pick]))?;
        for (i, s) in sets.iter().enumerate() {
            let want = s.symmetric_difference(&sets[pick]).count();
            ensure(d[i] == want, || format!("synthetic {n} prompt {i}: {} != {want}", d[i]))?;
        }
    }
    Ok("t1-u01 distances [1, 2, 0] in both modes; self distance 0 on 100 synthetic sessions".into())
}

fn direct_pearson(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    let r = sxy / (sxx * syy).sqrt();
    let df = n - 2.0;
    let t2 = r * r * df / (1.0 - r * r);
    let p = statrs::function::beta::beta_reg(df / 2.0, 0.5, df / (df + t2));
    (r, p.max(1e-15))
}

fn enumerate_p(n1: usize, n2: usize, u_obs: f64) -> f64 {
    let n = n1 + n2;
    let mu = (n1 * n2) as f64 / 2.0;
    let (mut total, mut hit) = (0u64, 0u64);
    for mask in 0u32..1 << n {
        if mask.count_ones() as usize != n1 {
            continue;
        }
        let rank_sum: usize = (0..n).filter(|i| mask >> i & 1 == 1).map(|i| i + 1).sum();
        let u = (rank_sum - n1 * (n1 + 1) / 2) as f64;
        total += 1;
        if (u - mu).abs() >= (u_obs - mu).abs() - 1e-9 {
            hit += 1;
        }
    }
    hit as f64 / total as f64
}

fn statistics_oracles() -> Check {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..100 {
        let n = rng.gen_range(3..=50);
        let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-10.0..10.0)).collect();
        let y: Vec<f64> = x.iter().map(|v| 0.3 * v + rng.gen_range(-10.0..10.0)).collect();
        let got = pearson(&x, &y).map_err(|e| e.to_string())?;
        let (r, p) = direct_pearson(&x, &y);
        ensure((got.statistic - r).abs() <= 1e-10 * r.abs().max(1e-300), || format!("r {} vs {r}", got.statistic))?;
        ensure((got.p_value - p).abs() <= 1e-8 * p.max(1e-15), || format!("p {} vs {p}", got.p_value))?;
    }

    let mut pairs = 0;
    for n1 in 1..10usize {
        for n2 in 1..=10 - n1 {
            let n = n1 + n2;
            for mask in 0u32..1 << n {
                if mask.count_ones() as usize != n1 {
                    continue;
                }
                let a: Vec<f64> = (0..n).filter(|i| mask >> i & 1 == 1).map(|i| i as f64).collect();
                let b: Vec<f64> = (0..n).filter(|i| mask >> i & 1 == 0).map(|i| i as f64).collect();
                let got = mann_whitney_u_with(&a, &b, TestMethod::MannWhitneyExact).map_err(|e| e.to_string())?;
                let want = enumerate_p(n1, n2, got.statistic);
                ensure((got.p_value - want).abs() < 1e-12, || format!("({n1},{n2}) p {} vs {want}", got.p_value))?;
            }
            pairs += 1;
        }
    }

    for _ in 0..1000 {
        let a: Vec<f64> = (0..rng.gen_range(1..15)).map(|_| rng.gen_range(0..8) as f64).collect();
        let b: Vec<f64> = (0..rng.gen_range(1..15)).map(|_| rng.gen_range(0..8) as f64).collect();
        let sum = mann_whitney_statistic(&a, &b) + mann_whitney_statistic(&b, &a);
        ensure((sum - (a.len() * b.len()) as f64).abs() < 1e-9, || format!("U sum {sum}"))?;
    }

    let size = required_sample_size(1872, 0.95, 0.06).map_err(|e| e.to_string())?;
    ensure(size == 234, || format!("sample size {size}"))?;
    within(Duration::from_secs(10), started)?;
    Ok(format!("pearson x100, exact MW on {pairs} size pairs, U sums x1000, n=234, {:?}", started.elapsed()))
}

fn summary_schema() -> Check {
    let f = fixtures();
    let dir = tempfile::tempdir().unwrap();
    let formalized = dir.path().join("formalized.jsonl");
    let bin = env!("CARGO_BIN_EXE_prompt-logic");
    let sessions = f.join("sessions.jsonl");
    let st = Command::new(bin)
        .args(["formalize", "--sessions"])
        .arg(&sessions)
        .arg("--fixtures")
        .arg(f.join("replay"))
        .arg("--out")
        .arg(&formalized)
        .status()
        .unwrap();
    ensure(st.success(), || "formalize failed".into())?;
    let out = Command::new(bin)
        .args(["stats", "summary", "--sessions"])
        .arg(&sessions)
        .arg("--formalized")
        .arg(&formalized)
        .output()
        .unwrap();
    ensure(out.status.success(), || String::from_utf8_lossy(&out.stderr).into_owned())?;
    let mut rdr = csv::Reader::from_reader(out.stdout.as_slice());
    let header: Vec<String> = rdr.headers().unwrap().iter().map(String::from).collect();
    ensure(
        header == ["Task", "#Users", "Mean", "Std", "Min", "Q1", "Median", "Q3", "Max"],
        || format!("header {header:?}"),
    )?;
    let mut rows = 0;
    for rec in rdr.records() {
        let rec = rec.unwrap();
        let q: Vec<f64> = (4..9).map(|i| rec[i].parse().unwrap()).collect();
        ensure(q.windows(2).all(|w| w[0] <= w[1]), || format!("row {rec:?} not ordered"))?;
        rows += 1;
    }
    ensure(rows == 3, || format!("{rows} rows"))?;
    Ok(format!("header order exact; {rows} rows ordered"))
}

fn reduction() -> Check {
    let fs = formalize("t1-u05");
    let findings = analyze_reduction(&fs, &fs.session.success_flags()).map_err(|e| e.to_string())?;
    let tally = tally_reductions(&findings);
    let got = (
        tally[&ReductionRelation::Identical],
        tally[&ReductionRelation::Fewer],
        tally[&ReductionRelation::More],
        tally[&ReductionRelation::Ambiguous],
    );
    ensure(got == (3, 1, 1, 0), || format!("identical/fewer/more/ambiguous {got:?}"))?;
    Ok("Identical x3, Fewer x1, More x1".into())
}

fn hash_dir(dir: &Path) -> BTreeMap<String, String> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            let bytes = std::fs::read(e.path()).unwrap();
            (e.file_name().to_string_lossy().into_owned(), hex::encode(Sha256::digest(&bytes)))
        })
        .collect()
}

fn pipeline_run(fixture_dir: &Path) -> Result<(tempfile::TempDir, u64), String> {
    let out = tempfile::tempdir().unwrap();
    let mut config = RunConfig::new(fixtures().join("sessions.jsonl"), out.path());
    config.fixture_dir = Some(fixture_dir.to_path_buf());
    let run = run_pipeline(&config).map_err(|e| e.to_string())?;
    Ok((out, run.manifest.network_calls))
}

fn determinism() -> Check {
    let started = Instant::now();
    let replay = fixtures().join("replay");
    let (a, calls_a) = pipeline_run(&replay)?;
    let (b, calls_b) = pipeline_run(&replay)?;
    let (ha, hb) = (hash_dir(a.path()), hash_dir(b.path()));
    ensure(ha.len() > 10, || format!("only {} artifacts", ha.len()))?;
    ensure(ha == hb, || "artifact hashes differ between runs".into())?;
    ensure(calls_a == 0 && calls_b == 0, || format!("network calls {calls_a}/{calls_b}"))?;

    let backend = ReplayBackend::open(&replay).unwrap();
    let out = tempfile::tempdir().unwrap();
    let config = RunConfig::new(fixtures().join("sessions.jsonl"), out.path());
    let run = run_with_backend(&config, &backend, &ModelSettings::default(), 4).map_err(|e| e.to_string())?;
    let sessions = run.manifest.counts.sessions as u64;
    ensure(backend.network_calls() == 0, || "replay sent network traffic".into())?;
    ensure(backend.calls() == sessions, || format!("{} backend calls for {sessions} sessions", backend.calls()))?;
    within(Duration::from_secs(30), started)?;
    Ok(format!("{} artifacts byte-identical; 0 network calls; {:?}", ha.len(), started.elapsed()))
}

/// Reorders the labels inside every "formalize Pk as:" expression.
fn permute_reply(text: &str, rng: &mut ChaCha8Rng) -> String {
    let formalize = Regex::new(r"(?i)formalize\s+P_?\d+\s+as\s*:").unwrap();
    let label = Regex::new(r"C\d+").unwrap();
    let lines: Vec<String> = text
        .split('\n')
        .map(|line| {
            let Some(m) = formalize.find(line) else { return line.to_string() };
            let (head, tail) = line.split_at(m.end());
            let mut labels: Vec<&str> = label.find_iter(tail).map(|m| m.as_str()).collect();
            if labels.len() > 1 {
                let orig = labels.clone();
                while labels == orig {
                    labels.shuffle(rng);
                }
            }
            let mut it = labels.into_iter();
            format!("{head}{}", label.replace_all(tail, |_: &regex::Captures| it.next().unwrap().to_string()))
        })
        .collect();
    lines.join("\n")
}

fn robustness() -> Check {
    let replay = fixtures().join("replay");
    let original = FixtureStore::open(&replay).unwrap();
    let permuted_dir = tempfile::tempdir().unwrap();
    let permuted = FixtureStore::create(permuted_dir.path()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut changed = 0;
    for key in original.keys() {
        let fx = original.get(&key).unwrap();
        let text = permute_reply(&fx.response.text, &mut rng);
        changed += usize::from(text != fx.response.text);
        let response = CompletionResponse { text, ..fx.response.clone() };
        permuted.record(&fx.request, &response).map_err(|e| e.to_string())?;
    }
    ensure(changed > 10, || format!("only {changed} replies changed"))?;

    let (a, _) = pipeline_run(&replay)?;
    let (b, _) = pipeline_run(permuted_dir.path())?;
    let (mut ha, mut hb) = (hash_dir(a.path()), hash_dir(b.path()));
    ha.remove("formalized.jsonl");
    hb.remove("formalized.jsonl");
    let differing: Vec<_> = ha.keys().filter(|k| ha.get(*k) != hb.get(*k)).cloned().collect();
    ensure(differing.is_empty() && ha.len() == hb.len(), || format!("artifacts differ: {differing:?}"))?;

    let sessions = load_sessions(fixtures().join("sessions.jsonl")).unwrap();
    let solutions = load_solutions(&fixtures().join("solutions.json")).unwrap();
    let store = std::sync::Arc::new(permuted);
    let pb = ReplayBackend::new(store);
    let (_, ob) = replay_corpus();
    for (sid, sols) in &solutions {
        let s = sessions.iter().find(|s| &s.session_id == sid).unwrap();
        let run = |b: &ReplayBackend| {
            measure_progress(s, sols, &FewShotExemplar::default(), &ModelSettings::default(), b, DiffMode::Linked)
                .map(|r| r.trace.distance_values())
                .map_err(|e| e.to_string())
        };
        let (x, y) = (run(&ob)?, run(&pb)?);
        ensure(x == y, || format!("{sid} distances {x:?} vs {y:?}"))?;
    }
    Ok(format!("{changed} replies permuted; {} artifacts and progress traces unchanged", ha.len()))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 9] = [
        ("parser-conformance", parser_conformance),
        ("motivating-example-oracle", motivating_example),
        ("rewording-resubmission-rules", rewording_rules),
        ("progress-oracle", progress_oracle),
        ("statistics-oracles", statistics_oracles),
        ("summary-schema", summary_schema),
        ("reduction-analysis", reduction),
        ("end-to-end-determinism", determinism),
        ("atom-order-robustness", robustness),
    ];
    std::panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (name, check) in criteria {
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            Err(e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_else(|| "panic".into()))
        });
        match result {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL {name}: {why}");
            }
        }
    }
    println!("{} of {} criteria passed", 9 - failed, 9);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
