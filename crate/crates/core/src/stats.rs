//! Scores, rankings, consistency, time-to-completion curves, balanced
//! accuracy and Spearman rank correlation.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

use crate::judging::{Annotation, Outcome};
use crate::suite::{filter, Suite, SuiteError};
use crate::task::Category;

/// Largest sample size for which Spearman p-values are computed by full
/// permutation enumeration.
pub const EXACT_MAX_N: usize = 7;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StatsError {
    #[error("spearman needs at least 3 paired values, got {0}")]
    TooFew(usize),
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("zero variance in {0}")]
    ZeroVariance(&'static str),
    #[error("{} continuations lack a selected annotation: {}", .0.len(), .0.join(", "))]
    Unannotated(Vec<String>),
    #[error("no continuations for agent {0:?} under the filter")]
    NoContinuations(String),
    #[error("reports use different version filters: {0:?}")]
    MixedFilters(Vec<String>),
    #[error(transparent)]
    Suite(#[from] SuiteError),
}

/// Binary confusion counts with success as the positive class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub fp: u64,
    pub tn: u64,
}

impl Confusion {
    pub fn new(tp: u64, fn_: u64, fp: u64, tn: u64) -> Self {
        Self { tp, fn_, fp, tn }
    }

    pub fn record(&mut self, truth: bool, predicted: bool) {
        match (truth, predicted) {
            (true, true) => self.tp += 1,
            (true, false) => self.fn_ += 1,
            (false, true) => self.fp += 1,
            (false, false) => self.tn += 1,
        }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fn_ + self.fp + self.tn
    }

    /// The confusion of an annotator who always says the opposite.
    pub fn flipped(&self) -> Self {
        Self {
            tp: self.fn_,
            fn_: self.tp,
            fp: self.tn,
            tn: self.fp,
        }
    }
}

/// Mean of the true-positive and true-negative rates. When one class is
/// absent the other rate is returned alone; `None` for an empty confusion.
pub fn balanced_accuracy(c: &Confusion) -> Option<f64> {
    let tpr = (c.tp + c.fn_ > 0).then(|| c.tp as f64 / (c.tp + c.fn_) as f64);
    let tnr = (c.tn + c.fp > 0).then(|| c.tn as f64 / (c.tn + c.fp) as f64);
    match (tpr, tnr) {
        (Some(a), Some(b)) => Some((a + b) / 2.0),
        (Some(a), None) | (None, Some(a)) => Some(a),
        (None, None) => None,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub score: f64,
    pub se: f64,
    pub n: u64,
}

impl Estimate {
    /// Success fraction with the binomial (Wald) standard error.
    pub fn wald(successes: u64, n: u64) -> Self {
        if n == 0 {
            return Self { score: 0.0, se: 0.0, n };
        }
        let p = successes as f64 / n as f64;
        Self {
            score: p,
            se: (p * (1.0 - p) / n as f64).sqrt(),
            n,
        }
    }
}

/// The continuation facts scoring needs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoredContinuation {
    pub continuation_id: String,
    pub scenario_id: String,
    pub agent_name: String,
    pub takeover_tick: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub agent_name: String,
    pub overall: Estimate,
    pub per_category: BTreeMap<String, Estimate>,
    pub per_kind: BTreeMap<String, Estimate>,
    pub suite_version_filter: String,
}

/// Pass rate of `agent` over the continuations of scenarios matching
/// `version_filter`. `selected` maps continuation id to its chosen
/// annotation; any included continuation missing from it is an error.
pub fn sts_score(
    selected: &BTreeMap<&str, &Annotation>,
    suite: &Suite,
    continuations: &[ScoredContinuation],
    agent: &str,
    version_filter: &str,
) -> Result<ScoreReport, StatsError> {
    let scoped = filter(suite, version_filter)?;
    let categories: BTreeMap<&str, &str> = scoped
        .scenarios
        .iter()
        .map(|s| (s.scenario_id.as_str(), s.category.as_str()))
        .collect();
    let kinds: BTreeMap<&str, String> = suite
        .categories
        .iter()
        .map(|c| (c.name.as_str(), c.kind.as_str().to_string()))
        .collect();

    let mut missing = Vec::new();
    let mut overall = (0u64, 0u64);
    let mut per_category: BTreeMap<String, (u64, u64)> = BTreeMap::new();
    let mut per_kind: BTreeMap<String, (u64, u64)> = BTreeMap::new();
    for c in continuations.iter().filter(|c| c.agent_name == agent) {
        let Some(cat) = categories.get(c.scenario_id.as_str()) else {
            continue;
        };
        let Some(a) = selected.get(c.continuation_id.as_str()) else {
            missing.push(c.continuation_id.clone());
            continue;
        };
        let s = a.outcome.is_success() as u64;
        for slot in [
            &mut overall,
            per_category.entry(cat.to_string()).or_default(),
            per_kind
                .entry(kinds.get(cat).cloned().unwrap_or_else(|| "unknown".into()))
                .or_default(),
        ] {
            slot.0 += s;
            slot.1 += 1;
        }
    }
    if !missing.is_empty() {
        missing.sort();
        return Err(StatsError::Unannotated(missing));
    }
    if overall.1 == 0 {
        return Err(StatsError::NoContinuations(agent.to_string()));
    }
    let est = |m: BTreeMap<String, (u64, u64)>| m.into_iter().map(|(k, (s, n))| (k, Estimate::wald(s, n))).collect();
    Ok(ScoreReport {
        agent_name: agent.to_string(),
        overall: Estimate::wald(overall.0, overall.1),
        per_category: est(per_category),
        per_kind: est(per_kind),
        suite_version_filter: version_filter.to_string(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConsistency {
    pub scenario_id: String,
    pub category: String,
    pub success_rate: f64,
    pub n: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyReport {
    pub agent_name: String,
    pub scenarios: Vec<ScenarioConsistency>,
}

impl ConsistencyReport {
    /// Unweighted mean of the per-scenario success rates.
    pub fn mean_rate(&self) -> f64 {
        if self.scenarios.is_empty() {
            return 0.0;
        }
        self.scenarios.iter().map(|s| s.success_rate).sum::<f64>() / self.scenarios.len() as f64
    }
}

/// Per-scenario success rate of `agent` over its replicates. Continuations
/// without a selected annotation are left out.
pub fn consistency(
    selected: &BTreeMap<&str, &Annotation>,
    suite: &Suite,
    continuations: &[ScoredContinuation],
    agent: &str,
) -> ConsistencyReport {
    let mut counts: BTreeMap<&str, (u64, u64)> = BTreeMap::new();
    for c in continuations.iter().filter(|c| c.agent_name == agent) {
        if let Some(a) = selected.get(c.continuation_id.as_str()) {
            let e = counts.entry(c.scenario_id.as_str()).or_default();
            e.0 += a.outcome.is_success() as u64;
            e.1 += 1;
        }
    }
    let scenarios = suite
        .scenarios
        .iter()
        .filter_map(|s| {
            counts.get(s.scenario_id.as_str()).map(|(k, n)| ScenarioConsistency {
                scenario_id: s.scenario_id.clone(),
                category: s.category.clone(),
                success_rate: *k as f64 / *n as f64,
                n: *n,
            })
        })
        .collect();
    ConsistencyReport {
        agent_name: agent.to_string(),
        scenarios,
    }
}

/// Scenario × agent success-rate matrix, for gauging scenario difficulty.
pub fn difficulty_matrix(reports: &[ConsistencyReport]) -> BTreeMap<String, BTreeMap<String, f64>> {
    let mut m: BTreeMap<String, BTreeMap<String, f64>> = BTreeMap::new();
    for r in reports {
        for s in &r.scenarios {
            m.entry(s.scenario_id.clone())
                .or_default()
                .insert(r.agent_name.clone(), s.success_rate);
        }
    }
    m
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TtcCurve {
    /// `(ticks_to_success, cumulative fraction)`, one point per distinct
    /// tick count.
    pub points: Vec<(u64, f64)>,
}

impl TtcCurve {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("ticks_to_success,cumulative\n");
        for (t, c) in &self.points {
            let _ = writeln!(s, "{t},{c}");
        }
        s
    }
}

/// Empirical CDF of time to completion over successful annotations.
/// `takeover_ticks` maps continuation id to its takeover tick.
pub fn ttc_cdf<'a>(
    annotations: impl IntoIterator<Item = &'a Annotation>,
    takeover_ticks: &BTreeMap<&str, u64>,
) -> TtcCurve {
    let mut deltas: Vec<u64> = annotations
        .into_iter()
        .filter(|a| a.outcome == Outcome::Success)
        .filter_map(|a| {
            takeover_ticks
                .get(a.continuation_id.as_str())
                .map(|t| a.marker_tick.saturating_sub(*t))
        })
        .collect();
    deltas.sort_unstable();
    let n = deltas.len() as f64;
    let mut points: Vec<(u64, f64)> = Vec::new();
    for (i, d) in deltas.iter().enumerate() {
        let frac = (i + 1) as f64 / n;
        match points.last_mut() {
            Some(last) if last.0 == *d => last.1 = frac,
            _ => points.push((*d, frac)),
        }
    }
    TtcCurve { points }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PValueMethod {
    ExactPermutation,
    TApprox,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationResult {
    pub metric_a: String,
    pub metric_b: String,
    pub r: f64,
    pub p: f64,
    pub n: usize,
    pub method: PValueMethod,
}

/// Ranks with ties averaged, doubled so that they stay integral.
fn doubled_ranks(xs: &[f64]) -> Vec<i64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0i64; xs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && xs[order[j + 1]] == xs[order[i]] {
            j += 1;
        }
        // Positions i..=j share the mean of ranks i+1..=j+1.
        let doubled = (i + j + 2) as i64;
        for k in i..=j {
            ranks[order[k]] = doubled;
        }
        i = j + 1;
    }
    ranks
}

/// Average ranks, 1-based.
pub fn average_ranks(xs: &[f64]) -> Vec<f64> {
    doubled_ranks(xs).into_iter().map(|r| r as f64 / 2.0).collect()
}

fn centered_cross(a: &[i64], b: &[i64]) -> i128 {
    let n = a.len() as i128;
    let sa: i128 = a.iter().map(|&v| v as i128).sum();
    let sb: i128 = b.iter().map(|&v| v as i128).sum();
    let sab: i128 = a.iter().zip(b).map(|(&x, &y)| x as i128 * y as i128).sum();
    n * sab - sa * sb
}

/// Calls `f` on every permutation of `v` (Heap's algorithm).
fn for_each_permutation(v: &mut [i64], mut f: impl FnMut(&[i64])) {
    let n = v.len();
    let mut c = vec![0usize; n];
    f(v);
    let mut i = 0;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                v.swap(0, i);
            } else {
                v.swap(c[i], i);
            }
            f(v);
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
}

/// Spearman rank correlation with a two-sided p-value.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Result<CorrelationResult, StatsError> {
    spearman_named("x", "y", xs, ys)
}

pub fn spearman_named(metric_a: &str, metric_b: &str, xs: &[f64], ys: &[f64]) -> Result<CorrelationResult, StatsError> {
    if xs.len() != ys.len() {
        return Err(StatsError::LengthMismatch(xs.len(), ys.len()));
    }
    let n = xs.len();
    if n < 3 {
        return Err(StatsError::TooFew(n));
    }
    let a = doubled_ranks(xs);
    let b = doubled_ranks(ys);
    let saa = centered_cross(&a, &a);
    let sbb = centered_cross(&b, &b);
    if saa == 0 {
        return Err(StatsError::ZeroVariance(if metric_a == "x" { "xs" } else { "metric_a" }));
    }
    if sbb == 0 {
        return Err(StatsError::ZeroVariance(if metric_b == "y" { "ys" } else { "metric_b" }));
    }
    let sab = centered_cross(&a, &b);
    let perfect = matches!((sab.checked_mul(sab), saa.checked_mul(sbb)), (Some(a), Some(b)) if a == b);
    let r = if perfect {
        sab.signum() as f64
    } else {
        (sab as f64 / ((saa as f64).sqrt() * (sbb as f64).sqrt())).clamp(-1.0, 1.0)
    };

    let (p, method) = if n <= EXACT_MAX_N {
        // Under permutation the denominators are fixed, so |r'| >= |r|
        // reduces to an exact integer comparison of cross terms.
        let threshold = sab.abs();
        let mut hits = 0u64;
        let mut total = 0u64;
        let mut perm = b.clone();
        for_each_permutation(&mut perm, |p| {
            total += 1;
            if centered_cross(&a, p).abs() >= threshold {
                hits += 1;
            }
        });
        (hits as f64 / total as f64, PValueMethod::ExactPermutation)
    } else {
        let df = (n - 2) as f64;
        let p = if r.abs() >= 1.0 {
            0.0
        } else {
            let t = r * (df / (1.0 - r * r)).sqrt();
            let dist = StudentsT::new(0.0, 1.0, df).expect("df > 0");
            (2.0 * (1.0 - dist.cdf(t.abs()))).clamp(0.0, 1.0)
        };
        (p, PValueMethod::TApprox)
    };
    Ok(CorrelationResult {
        metric_a: metric_a.to_string(),
        metric_b: metric_b.to_string(),
        r,
        p,
        n,
        method,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankRow {
    pub position: usize,
    pub agent_name: String,
    pub score: f64,
    pub se: f64,
    pub n: u64,
    /// Shares its score with at least one other row.
    pub tied: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankTable {
    pub suite_version_filter: String,
    pub rows: Vec<RankRow>,
}

/// Orders reports by overall score, highest first. Equal scores are
/// flagged as tied and ordered by agent name.
pub fn rank(reports: &[ScoreReport]) -> Result<RankTable, StatsError> {
    let mut filters: Vec<String> = reports.iter().map(|r| r.suite_version_filter.clone()).collect();
    filters.sort();
    filters.dedup();
    if filters.len() > 1 {
        return Err(StatsError::MixedFilters(filters));
    }
    let mut sorted: Vec<&ScoreReport> = reports.iter().collect();
    sorted.sort_by(|a, b| {
        b.overall
            .score
            .total_cmp(&a.overall.score)
            .then_with(|| a.agent_name.cmp(&b.agent_name))
    });
    let rows = sorted
        .iter()
        .enumerate()
        .map(|(i, r)| RankRow {
            position: i + 1,
            agent_name: r.agent_name.clone(),
            score: r.overall.score,
            se: r.overall.se,
            n: r.overall.n,
            tied: sorted
                .iter()
                .filter(|o| o.overall.score == r.overall.score)
                .count()
                > 1,
        })
        .collect();
    Ok(RankTable {
        suite_version_filter: filters.pop().unwrap_or_default(),
        rows,
    })
}

impl RankTable {
    /// Aligned-column text table.
    pub fn to_text(&self) -> String {
        let width = self.rows.iter().map(|r| r.agent_name.len()).max().unwrap_or(5).max(5);
        let mut s = format!("filter: {}\n", self.suite_version_filter);
        let _ = writeln!(s, "{:>4}  {:<width$}  {:>7}  {:>7}  {:>6}  tie", "rank", "agent", "score", "se", "n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{:>4}  {:<width$}  {:>7.4}  {:>7.4}  {:>6}  {}",
                r.position,
                r.agent_name,
                r.score,
                r.se,
                r.n,
                if r.tied { "*" } else { "" }
            );
        }
        s
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("rank,agent,score,se,n,tied\n");
        for r in &self.rows {
            let _ = writeln!(s, "{},{},{},{},{},{}", r.position, r.agent_name, r.score, r.se, r.n, r.tied);
        }
        s
    }
}

impl ScoreReport {
    /// Aligned-column text rendering of overall, per-kind and per-category
    /// scores.
    pub fn to_text(&self) -> String {
        let mut s = format!("agent: {}  filter: {}\n", self.agent_name, self.suite_version_filter);
        let mut line = |label: &str, e: &Estimate| {
            let _ = writeln!(s, "  {label:<24} {:>7.4} ± {:<7.4} n={}", e.score, e.se, e.n);
        };
        line("overall", &self.overall);
        for (k, e) in &self.per_kind {
            line(k, e);
        }
        for c in Category::ALL {
            if let Some(e) = self.per_category.get(c.name()) {
                line(c.name(), e);
            }
        }
        for (k, e) in self.per_category.iter().filter(|(k, _)| k.parse::<Category>().is_err()) {
            line(k, e);
        }
        s
    }
}
