//! End-to-end desk study: record a corpus, curate a suite, generate
//! continuations for a roster, judge them with the oracle and compute every
//! metric on the same roster.

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::{validate_roster, AgentError, AgentRef};
use crate::continuation::{generate_all, Continuation, ContinuationError, PreparedScenario};
use crate::judging::{oracle_judge, select_annotations, Annotation, JudgeError, SelectionPolicy};
use crate::proxy::{
    correlate, default_probes, interactive_eval, mean_log_prob, run_probes, InteractiveOptions, MetricRow,
    MetricTable, ProbeTask, ProxyError,
};
use crate::record::{record_corpus, CorpusSpec, RecordError};
use crate::stats::{consistency, rank, sts_score, ConsistencyReport, CorrelationResult, RankTable, ScoreReport, ScoredContinuation, StatsError};
use crate::suite::{curate_by_category, default_registry, CurationOptions, Suite, SuiteError};
use crate::trajectory::Episode;

#[derive(Debug, Error)]
pub enum StudyError {
    #[error(transparent)]
    Record(#[from] RecordError),
    #[error(transparent)]
    Suite(#[from] SuiteError),
    #[error(transparent)]
    Continuation(#[from] ContinuationError),
    #[error(transparent)]
    Judge(#[from] JudgeError),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error(transparent)]
    Proxy(#[from] ProxyError),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error("scenario {0} has no source episode")]
    MissingSource(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StudyConfig {
    pub corpus: CorpusSpec,
    pub scenarios_per_category: usize,
    pub replicates: u32,
    pub continuation_length: u64,
    pub base_seed: u64,
    /// Recorded separately from the corpus; never a scenario source.
    pub heldout: CorpusSpec,
    pub interactive: InteractiveOptions,
    pub probes: Vec<ProbeTask>,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            corpus: CorpusSpec {
                per_category: 14,
                seed: 1,
                ..CorpusSpec::default()
            },
            scenarios_per_category: 10,
            replicates: 10,
            continuation_length: crate::suite::DEFAULT_CONTINUATION_LENGTH,
            base_seed: 0,
            heldout: CorpusSpec {
                per_category: 3,
                seed: 2,
                ..CorpusSpec::default()
            },
            interactive: InteractiveOptions::default(),
            probes: default_probes(3),
        }
    }
}

/// `noisy(ε)` for ε = 0.0, 0.1, …, 0.7; index equals planted rank.
pub fn planted_ladder() -> Vec<AgentRef> {
    (0..8).map(|i| AgentRef::noisy(i as f64 / 10.0)).collect()
}

/// Records the corpus and curates the suite. Returns the suite with its
/// source episodes, keyed by episode id.
pub fn build_suite(cfg: &StudyConfig) -> Result<(Suite, HashMap<String, Arc<Episode>>), StudyError> {
    let corpus = record_corpus(&cfg.corpus)?;
    let opts = CurationOptions {
        continuation_length: cfg.continuation_length,
        ..CurationOptions::default()
    };
    let suite = curate_by_category(&corpus, &default_registry(), cfg.scenarios_per_category, &opts)?;
    let sources = corpus.into_iter().map(|e| (e.episode_id.clone(), Arc::new(e))).collect();
    Ok((suite, sources))
}

pub fn prepare_suite(suite: &Suite, sources: &HashMap<String, Arc<Episode>>) -> Result<Vec<PreparedScenario>, StudyError> {
    suite
        .scenarios
        .par_iter()
        .map(|s| {
            let src = sources
                .get(&s.episode_id)
                .ok_or_else(|| StudyError::MissingSource(s.scenario_id.clone()))?;
            Ok(PreparedScenario::new(s.clone(), src.clone())?)
        })
        .collect()
}

/// Oracle annotations for `continuations`, in input order.
pub fn oracle_annotations(suite: &Suite, continuations: &[Continuation], created_at: &str) -> Result<Vec<Annotation>, StudyError> {
    let scenarios: HashMap<&str, _> = suite.scenarios.iter().map(|s| (s.scenario_id.as_str(), s)).collect();
    continuations
        .par_iter()
        .map(|c| {
            let s = scenarios
                .get(c.scenario_id.as_str())
                .ok_or_else(|| StudyError::MissingSource(c.scenario_id.clone()))?;
            Ok(oracle_judge(
                &c.continuation_id,
                &c.episode,
                c.takeover_tick,
                &s.category,
                &s.instruction_text,
                created_at,
            )?)
        })
        .collect()
}

pub fn scored(continuations: &[Continuation]) -> Vec<ScoredContinuation> {
    continuations
        .iter()
        .map(|c| ScoredContinuation {
            continuation_id: c.continuation_id.clone(),
            scenario_id: c.scenario_id.clone(),
            agent_name: c.agent_name.clone(),
            takeover_tick: c.takeover_tick,
        })
        .collect()
}

/// Everything the study produced.
#[derive(Debug, Clone)]
pub struct StudyResult {
    pub suite: Suite,
    pub continuations: Vec<Continuation>,
    pub annotations: Vec<Annotation>,
    pub reports: Vec<ScoreReport>,
    pub ranking: RankTable,
    pub consistency: Vec<ConsistencyReport>,
    pub table: MetricTable,
    pub correlations: Vec<CorrelationResult>,
}

impl StudyResult {
    pub fn report(&self, agent: &str) -> Option<&ScoreReport> {
        self.reports.iter().find(|r| r.agent_name == agent)
    }
}

/// Runs the whole pipeline for `roster`. With fewer than four agents the
/// correlation list is left empty.
pub fn run_study(cfg: &StudyConfig, roster: &[AgentRef]) -> Result<StudyResult, StudyError> {
    validate_roster(roster)?;
    let (suite, sources) = build_suite(cfg)?;
    let prepared = prepare_suite(&suite, &sources)?;
    let continuations = generate_all(&prepared, roster, cfg.replicates, cfg.base_seed)?;
    let annotations = oracle_annotations(&suite, &continuations, "")?;
    let selected: BTreeMap<&str, &Annotation> = select_annotations(&annotations, SelectionPolicy::OracleMajorityEarliest, None);
    let sc = scored(&continuations);
    let all_versions = crate::suite::version_tag(suite.version);
    let reports = roster
        .iter()
        .map(|a| sts_score(&selected, &suite, &sc, &a.name, &all_versions))
        .collect::<Result<Vec<_>, _>>()?;
    let ranking = rank(&reports)?;
    let consistency = roster.iter().map(|a| consistency(&selected, &suite, &sc, &a.name)).collect();

    let heldout = record_corpus(&cfg.heldout)?;
    let rows = roster
        .iter()
        .zip(&reports)
        .map(|(a, r)| {
            Ok(MetricRow {
                agent_name: a.name.clone(),
                sts_score: r.overall.score,
                interactive_score: interactive_eval(a, &cfg.interactive)?.interactive_score,
                mean_log_prob: mean_log_prob(a, &heldout)?,
                probe_score: run_probes(a, &cfg.probes)?.probe_score,
            })
        })
        .collect::<Result<Vec<_>, ProxyError>>()?;
    let table = MetricTable { rows };
    let correlations = if roster.len() >= crate::proxy::MIN_CORRELATION_AGENTS {
        correlate(&table)?
    } else {
        Vec::new()
    };
    Ok(StudyResult {
        suite,
        continuations,
        annotations,
        reports,
        ranking,
        consistency,
        table,
        correlations,
    })
}
