//! Descriptive statistics and the two hypothesis tests used on constraint
//! traces.
//!
//! Quartiles interpolate linearly between order statistics, standard
//! deviations use the `n - 1` denominator, and every p-value is two-sided
//! and floored at [`P_VALUE_FLOOR`].

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::Write;

use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal, StudentsT};
use thiserror::Error;

use crate::evolution::{TransitionClass, TransitionRecord};
use crate::formalizer::FormalizedSession;
use crate::logic::DiffMode;
use crate::session::Outcome;

pub const P_VALUE_FLOOR: f64 = 1e-15;
/// Largest combined sample size for which Mann-Whitney p is computed exactly.
pub const EXACT_MW_LIMIT: usize = 12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StatsError {
    #[error("task {0} has no prompts")]
    EmptyTask(String),
    #[error("series lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("need at least {needed} observations, got {got}")]
    TooFew { needed: usize, got: usize },
    #[error("{0} series is constant; correlation is undefined")]
    Constant(&'static str),
    #[error("empty sample")]
    EmptySample,
    #[error("exact Mann-Whitney needs tie-free samples with at most {EXACT_MW_LIMIT} values in total")]
    ExactUnavailable,
    #[error("{0}")]
    InvalidArgument(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum TestMethod {
    PearsonT,
    MannWhitneyNormalApprox,
    MannWhitneyExact,
}

impl fmt::Display for TestMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TestMethod::PearsonT => "pearson_t",
            TestMethod::MannWhitneyNormalApprox => "mann_whitney_normal",
            TestMethod::MannWhitneyExact => "mann_whitney_exact",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TestResult {
    pub statistic: f64,
    pub p_value: f64,
    pub method: TestMethod,
}

fn floor_p(p: f64) -> f64 {
    p.clamp(P_VALUE_FLOOR, 1.0)
}

pub fn mean(xs: &[f64]) -> Option<f64> {
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

/// Sample standard deviation; zero for a single value.
pub fn sample_std(xs: &[f64]) -> Option<f64> {
    let m = mean(xs)?;
    if xs.len() < 2 {
        return Some(0.0);
    }
    let ss: f64 = xs.iter().map(|x| (x - m).powi(2)).sum();
    Some((ss / (xs.len() - 1) as f64).sqrt())
}

/// Quantile of already sorted data by linear interpolation at
/// `h = (n - 1) q`.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> Option<f64> {
    if sorted.is_empty() {
        return None;
    }
    let h = (sorted.len() - 1) as f64 * q.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    Some(sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo]))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub task_id: String,
    pub n_users: usize,
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

impl SummaryRow {
    pub fn from_counts(task_id: &str, n_users: usize, counts: &[f64]) -> Result<Self, StatsError> {
        let mut sorted = counts.to_vec();
        sorted.sort_by(f64::total_cmp);
        let q = |p| quantile_sorted(&sorted, p).ok_or_else(|| StatsError::EmptyTask(task_id.to_string()));
        Ok(SummaryRow {
            task_id: task_id.to_string(),
            n_users,
            mean: mean(&sorted).ok_or_else(|| StatsError::EmptyTask(task_id.to_string()))?,
            std: sample_std(&sorted).unwrap_or(0.0),
            min: q(0.0)?,
            q1: q(0.25)?,
            median: q(0.5)?,
            q3: q(0.75)?,
            max: q(1.0)?,
        })
    }
}

/// Statistics over the atom count of every prompt of `task_id`.
pub fn summarize_constraints(corpus: &[FormalizedSession], task_id: &str) -> Result<SummaryRow, StatsError> {
    let in_task = corpus.iter().filter(|fs| fs.session.task_id == task_id);
    let users: BTreeSet<&str> = in_task.clone().map(|fs| fs.session.user_id.as_str()).collect();
    let counts: Vec<f64> = in_task.flat_map(|fs| fs.atom_counts()).map(|c| c as f64).collect();
    SummaryRow::from_counts(task_id, users.len(), &counts)
}

/// Tasks of the corpus in sorted order.
pub fn task_ids(corpus: &[FormalizedSession]) -> Vec<String> {
    corpus.iter().map(|fs| fs.session.task_id.clone()).collect::<BTreeSet<_>>().into_iter().collect()
}

/// Product-moment correlation with a two-sided t-test on `n - 2` degrees of
/// freedom.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<TestResult, StatsError> {
    if x.len() != y.len() {
        return Err(StatsError::LengthMismatch(x.len(), y.len()));
    }
    let n = x.len();
    if n < 3 {
        return Err(StatsError::TooFew { needed: 3, got: n });
    }
    let (mx, my) = (mean(x).unwrap(), mean(y).unwrap());
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    if sxx == 0.0 {
        return Err(StatsError::Constant("x"));
    }
    if syy == 0.0 {
        return Err(StatsError::Constant("y"));
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let r = (sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0);

    let df = (n - 2) as f64;
    let p = if r.abs() == 1.0 {
        0.0
    } else {
        let t = r * (df / (1.0 - r * r)).sqrt();
        let dist = StudentsT::new(0.0, 1.0, df).expect("df > 0");
        2.0 * dist.sf(t.abs())
    };
    Ok(TestResult { statistic: r, p_value: floor_p(p), method: TestMethod::PearsonT })
}

/// Ranks of the pooled sample (1-based, ties get their midrank) and the tie
/// group sizes.
fn midranks(pooled: &[f64]) -> (Vec<f64>, Vec<usize>) {
    let mut order: Vec<usize> = (0..pooled.len()).collect();
    order.sort_by(|&i, &j| pooled[i].total_cmp(&pooled[j]));
    let mut ranks = vec![0.0; pooled.len()];
    let mut ties = Vec::new();
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && pooled[order[end]] == pooled[order[start]] {
            end += 1;
        }
        let rank = (start + end + 1) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = rank;
        }
        ties.push(end - start);
        start = end;
    }
    (ranks, ties)
}

/// U statistic for `a`: the number of pairs where the `a` value is larger,
/// ties counting one half.
pub fn mann_whitney_statistic(a: &[f64], b: &[f64]) -> f64 {
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let (ranks, _) = midranks(&pooled);
    let rank_sum: f64 = ranks[..a.len()].iter().sum();
    rank_sum - (a.len() * (a.len() + 1)) as f64 / 2.0
}

/// Two-sided Mann-Whitney U test, exact for small tie-free samples and
/// normal-approximated otherwise.
pub fn mann_whitney_u(a: &[f64], b: &[f64]) -> Result<TestResult, StatsError> {
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let (_, ties) = midranks(&pooled);
    let tie_free = ties.iter().all(|&t| t == 1);
    let method = if tie_free && pooled.len() <= EXACT_MW_LIMIT {
        TestMethod::MannWhitneyExact
    } else {
        TestMethod::MannWhitneyNormalApprox
    };
    mann_whitney_u_with(a, b, method)
}

/// As [`mann_whitney_u`] with the method chosen by the caller.
pub fn mann_whitney_u_with(a: &[f64], b: &[f64], method: TestMethod) -> Result<TestResult, StatsError> {
    if a.is_empty() || b.is_empty() {
        return Err(StatsError::EmptySample);
    }
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let (ranks, ties) = midranks(&pooled);
    let (n1, n2) = (a.len(), b.len());
    let u = ranks[..n1].iter().sum::<f64>() - (n1 * (n1 + 1)) as f64 / 2.0;
    let mu = (n1 * n2) as f64 / 2.0;

    let p = match method {
        TestMethod::MannWhitneyExact => {
            if ties.iter().any(|&t| t > 1) || pooled.len() > EXACT_MW_LIMIT {
                return Err(StatsError::ExactUnavailable);
            }
            exact_two_sided(n1, n2, u)
        }
        TestMethod::MannWhitneyNormalApprox => {
            let n = (n1 + n2) as f64;
            let tie_term: f64 = ties.iter().map(|&t| (t * t * t - t) as f64).sum::<f64>() / (n * (n - 1.0)).max(1.0);
            let var = (n1 * n2) as f64 / 12.0 * ((n + 1.0) - tie_term);
            if var <= 0.0 {
                1.0
            } else {
                let z = ((u - mu).abs() - 0.5).max(0.0) / var.sqrt();
                (2.0 * Normal::new(0.0, 1.0).expect("standard normal").sf(z)).min(1.0)
            }
        }
        TestMethod::PearsonT => {
            return Err(StatsError::InvalidArgument("pearson_t is not a Mann-Whitney method".into()));
        }
    };
    Ok(TestResult { statistic: u, p_value: floor_p(p), method })
}

/// Share of rank assignments whose U is at least as far from its mean as
/// the observed one. Counts are built by dynamic programming over ranks.
fn exact_two_sided(n1: usize, n2: usize, u: f64) -> f64 {
    let n = n1 + n2;
    let max_u = n1 * n2;
    // ways[k][s]: subsets of size k from the ranks seen so far with U-sum s,
    // where choosing rank r (0-based) as the k-th smallest adds r - (k - 1).
    let mut ways = vec![vec![0f64; max_u + 1]; n1 + 1];
    ways[0][0] = 1.0;
    for r in 0..n {
        for k in (1..=n1.min(r + 1)).rev() {
            let add = r + 1 - k;
            if add > n2 {
                continue;
            }
            for s in (add..=max_u).rev() {
                let prev = ways[k - 1][s - add];
                if prev != 0.0 {
                    ways[k][s] += prev;
                }
            }
        }
    }
    let total: f64 = ways[n1].iter().sum();
    let mu = max_u as f64 / 2.0;
    let observed = (u - mu).abs();
    let extreme: f64 = ways[n1]
        .iter()
        .enumerate()
        .filter(|&(s, _)| (s as f64 - mu).abs() >= observed - 1e-9)
        .map(|(_, w)| w)
        .sum();
    extreme / total
}

/// Cochran's sample size with a finite-population correction, rounded up.
pub fn required_sample_size(population: u64, confidence: f64, margin: f64) -> Result<u64, StatsError> {
    if population == 0 {
        return Err(StatsError::InvalidArgument("population must be positive".into()));
    }
    if !(confidence > 0.0 && confidence < 1.0) {
        return Err(StatsError::InvalidArgument(format!("confidence {confidence} is outside (0, 1)")));
    }
    if !(margin > 0.0 && margin <= 1.0) {
        return Err(StatsError::InvalidArgument(format!("margin {margin} is outside (0, 1]")));
    }
    let z = Normal::new(0.0, 1.0).expect("standard normal").inverse_cdf(1.0 - (1.0 - confidence) / 2.0);
    let n0 = z * z * 0.25 / (margin * margin);
    let n = n0 / (1.0 + (n0 - 1.0) / population as f64);
    Ok((n.ceil() as u64).max(1))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorrelationRow {
    pub class: TransitionClass,
    pub n_sessions: usize,
    pub result: Result<TestResult, String>,
}

/// Per class, correlates the share of a session's transitions in that class
/// (as a percentage) with the session's prompt count. Sessions without
/// transitions are left out.
pub fn correlate_changes_with_length(transitions: &[TransitionRecord]) -> Result<Vec<CorrelationRow>, StatsError> {
    let mut per_session: BTreeMap<&str, Vec<TransitionClass>> = BTreeMap::new();
    for t in transitions {
        per_session.entry(&t.session_id).or_default().push(t.class);
    }
    if per_session.len() < 3 {
        return Err(StatsError::TooFew { needed: 3, got: per_session.len() });
    }
    let lengths: Vec<f64> = per_session.values().map(|c| (c.len() + 1) as f64).collect();
    Ok(TransitionClass::ALL
        .iter()
        .map(|&class| {
            let shares: Vec<f64> = per_session
                .values()
                .map(|c| 100.0 * c.iter().filter(|&&k| k == class).count() as f64 / c.len() as f64)
                .collect();
            CorrelationRow { class, n_sessions: lengths.len(), result: pearson(&shares, &lengths).map_err(|e| e.to_string()) }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiffComparison {
    pub mean_success: f64,
    pub mean_failure: f64,
    pub mean_overall: f64,
    pub n_success: usize,
    pub n_failure: usize,
    pub test: TestResult,
}

pub fn compare_diff_sizes(success: &[f64], failure: &[f64]) -> Result<DiffComparison, StatsError> {
    let test = mann_whitney_u(success, failure)?;
    let all: Vec<f64> = success.iter().chain(failure).copied().collect();
    Ok(DiffComparison {
        mean_success: mean(success).ok_or(StatsError::EmptySample)?,
        mean_failure: mean(failure).ok_or(StatsError::EmptySample)?,
        mean_overall: mean(&all).ok_or(StatsError::EmptySample)?,
        n_success: success.len(),
        n_failure: failure.len(),
        test,
    })
}

/// Diff sizes of transitions split by their session's outcome. Sessions
/// with an unknown outcome are left out.
pub fn diff_sizes_by_outcome(
    corpus: &[FormalizedSession],
    transitions: &[TransitionRecord],
    mode: DiffMode,
) -> (Vec<f64>, Vec<f64>) {
    let outcome: BTreeMap<&str, Outcome> =
        corpus.iter().map(|fs| (fs.session.session_id.as_str(), fs.session.outcome)).collect();
    let (mut success, mut failure) = (Vec::new(), Vec::new());
    for t in transitions {
        match outcome.get(t.session_id.as_str()) {
            Some(Outcome::Success) => success.push(t.diff_size(mode) as f64),
            Some(Outcome::Failure) => failure.push(t.diff_size(mode) as f64),
            _ => {}
        }
    }
    (success, failure)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeriesRow {
    pub step: usize,
    pub mean_words: f64,
    pub mean_constraints: f64,
    pub participants: usize,
}

/// For each prompt step, mean word count and atom count over the sessions
/// of `task_id` that reached that step.
pub fn words_constraints_series(corpus: &[FormalizedSession], task_id: &str) -> Vec<SeriesRow> {
    let mut steps: BTreeMap<usize, (f64, f64, usize)> = BTreeMap::new();
    for fs in corpus.iter().filter(|fs| fs.session.task_id == task_id) {
        for (p, f) in fs.steps() {
            let e = steps.entry(p.index).or_default();
            e.0 += p.word_count as f64;
            e.1 += f.atoms.len() as f64;
            e.2 += 1;
        }
    }
    steps
        .into_iter()
        .map(|(step, (w, c, n))| SeriesRow { step, mean_words: w / n as f64, mean_constraints: c / n as f64, participants: n })
        .collect()
}

pub const SUMMARY_HEADER: [&str; 9] = ["Task", "#Users", "Mean", "Std", "Min", "Q1", "Median", "Q3", "Max"];

pub fn write_summary_csv<W: Write>(w: W, rows: &[SummaryRow]) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(SUMMARY_HEADER)?;
    for r in rows {
        out.write_record([
            r.task_id.clone(),
            r.n_users.to_string(),
            r.mean.to_string(),
            r.std.to_string(),
            r.min.to_string(),
            r.q1.to_string(),
            r.median.to_string(),
            r.q3.to_string(),
            r.max.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_correlation_csv<W: Write>(w: W, rows: &[CorrelationRow]) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["class", "n_sessions", "r", "p_value", "sidedness", "method", "error"])?;
    for row in rows {
        let (r, p, method, err) = match &row.result {
            Ok(t) => (t.statistic.to_string(), t.p_value.to_string(), t.method.to_string(), String::new()),
            Err(e) => (String::new(), String::new(), String::new(), e.clone()),
        };
        out.write_record([row.class.to_string(), row.n_sessions.to_string(), r, p, "two-sided".into(), method, err])?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_comparison_csv<W: Write>(w: W, c: &DiffComparison) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record([
        "mean_success",
        "mean_failure",
        "mean_overall",
        "n_success",
        "n_failure",
        "u",
        "p_value",
        "sidedness",
        "method",
    ])?;
    out.write_record([
        c.mean_success.to_string(),
        c.mean_failure.to_string(),
        c.mean_overall.to_string(),
        c.n_success.to_string(),
        c.n_failure.to_string(),
        c.test.statistic.to_string(),
        c.test.p_value.to_string(),
        "two-sided".into(),
        c.test.method.to_string(),
    ])?;
    out.flush()?;
    Ok(())
}

pub fn write_series_csv<W: Write>(w: W, task_id: &str, rows: &[SeriesRow]) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["task", "step", "mean_words", "mean_constraints", "participants"])?;
    for r in rows {
        out.write_record([
            task_id.to_string(),
            r.step.to_string(),
            r.mean_words.to_string(),
            r.mean_constraints.to_string(),
            r.participants.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}
