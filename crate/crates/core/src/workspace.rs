//! On-disk workspace: every artifact of a pipeline run, addressed by id.
//!
//! ```text
//! <root>/workspace.json
//! <root>/episodes/<episode_id>.stse
//! <root>/suites/<suite_id>.json
//! <root>/continuations/<continuation_id>.stse
//! <root>/continuations/index.json
//! <root>/annotations/annotations.jsonl
//! <root>/annotations/references.jsonl
//! <root>/reports/...
//! ```

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::continuation::{Continuation, ContinuationIndex, IndexEntry};
use crate::judging::{
    select_annotations, Annotation, AnnotationInput, AnnotationStore, IngestError, Ingested, ReferenceEpisode,
    SelectionPolicy,
};
use crate::seed::str_seed;
use crate::stats::{sts_score, ScoreReport, ScoredContinuation, StatsError};
use crate::suite::{load_suite, save_suite, Scenario, Suite, SuiteError};
use crate::trajectory::{load_episode, save_episode, Episode, EpisodeFileError, EPISODE_EXTENSION};

pub const WORKSPACE_ENV: &str = "STS_WORKSPACE";
pub const WORKSPACE_FILE: &str = "workspace.json";
pub const SUBDIRS: [&str; 5] = ["episodes", "suites", "continuations", "annotations", "reports"];
pub const DEFAULT_REFERENCE_RATE: f64 = 0.1;
/// When set, used verbatim as every `created_at` timestamp.
pub const FIXED_TIME_ENV: &str = "STS_FIXED_TIME";

#[derive(Debug, Error)]
pub enum WorkspaceError {
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("{0} is not an initialised workspace (missing {WORKSPACE_FILE})")]
    NotInitialised(PathBuf),
    #[error("{path}: malformed JSON: {message}")]
    Json { path: PathBuf, message: String },
    #[error("unknown {kind} {id:?}")]
    Unknown { kind: &'static str, id: String },
    #[error("scenario {0} appears in more than one suite with different contents")]
    ScenarioClash(String),
    #[error("reference_rate {0} outside [0, 1)")]
    ReferenceRate(f64),
    #[error(transparent)]
    Episode(#[from] EpisodeFileError),
    #[error(transparent)]
    Suite(#[from] SuiteError),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Stats(#[from] StatsError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> WorkspaceError + '_ {
    move |e| WorkspaceError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorkspaceConfig {
    pub format: u32,
    /// Fraction of a pending queue made of reference episodes.
    pub reference_rate: f64,
}

impl Default for WorkspaceConfig {
    fn default() -> Self {
        Self {
            format: 1,
            reference_rate: DEFAULT_REFERENCE_RATE,
        }
    }
}

/// Writes `bytes` to `path` through a sibling temp file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), WorkspaceError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), WorkspaceError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| WorkspaceError::Json {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, WorkspaceError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| WorkspaceError::Json {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

#[derive(Debug, Clone)]
pub struct Workspace {
    root: PathBuf,
    pub config: WorkspaceConfig,
}

impl Workspace {
    /// Creates the directory layout and config file if missing. Existing
    /// content is left alone.
    pub fn init(root: &Path) -> Result<Self, WorkspaceError> {
        for d in SUBDIRS {
            let p = root.join(d);
            fs::create_dir_all(&p).map_err(io_err(&p))?;
        }
        let cfg_path = root.join(WORKSPACE_FILE);
        let config = if cfg_path.exists() {
            read_json(&cfg_path)?
        } else {
            let c = WorkspaceConfig::default();
            write_json(&cfg_path, &c)?;
            c
        };
        Self::checked(root, config)
    }

    pub fn open(root: &Path) -> Result<Self, WorkspaceError> {
        let cfg_path = root.join(WORKSPACE_FILE);
        if !cfg_path.exists() {
            return Err(WorkspaceError::NotInitialised(root.to_path_buf()));
        }
        Self::checked(root, read_json(&cfg_path)?)
    }

    fn checked(root: &Path, config: WorkspaceConfig) -> Result<Self, WorkspaceError> {
        if !(0.0..1.0).contains(&config.reference_rate) {
            return Err(WorkspaceError::ReferenceRate(config.reference_rate));
        }
        Ok(Self {
            root: root.to_path_buf(),
            config,
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn dir(&self, sub: &str) -> PathBuf {
        self.root.join(sub)
    }

    pub fn episode_path(&self, id: &str) -> PathBuf {
        self.dir("episodes").join(format!("{id}.{EPISODE_EXTENSION}"))
    }

    pub fn save_episode(&self, e: &Episode) -> Result<(), WorkspaceError> {
        Ok(save_episode(e, &self.episode_path(&e.episode_id))?)
    }

    pub fn load_episode(&self, id: &str) -> Result<Episode, WorkspaceError> {
        Ok(load_episode(&self.episode_path(id))?)
    }

    /// Every episode under `episodes/`, sorted by id.
    pub fn load_corpus(&self) -> Result<Vec<Episode>, WorkspaceError> {
        let mut ids = list_ids(&self.dir("episodes"), EPISODE_EXTENSION)?;
        ids.sort();
        ids.iter().map(|id| self.load_episode(id)).collect()
    }

    pub fn suite_path(&self, suite_id: &str) -> PathBuf {
        self.dir("suites").join(format!("{suite_id}.json"))
    }

    pub fn save_suite(&self, s: &Suite) -> Result<(), WorkspaceError> {
        Ok(save_suite(s, &self.suite_path(&s.suite_id))?)
    }

    /// Loads a suite by id, or by path if `name` points at a file.
    pub fn load_suite(&self, name: &str) -> Result<Suite, WorkspaceError> {
        let p = Path::new(name);
        let path = if p.extension().is_some_and(|e| e == "json") && p.exists() {
            p.to_path_buf()
        } else {
            self.suite_path(name)
        };
        if !path.exists() {
            return Err(WorkspaceError::Unknown {
                kind: "suite",
                id: name.to_string(),
            });
        }
        Ok(load_suite(&path)?)
    }

    pub fn suites(&self) -> Result<Vec<Suite>, WorkspaceError> {
        let mut ids = list_ids(&self.dir("suites"), "json")?;
        ids.sort();
        ids.iter().map(|id| self.load_suite(id)).collect()
    }

    /// Scenarios of every suite, by id.
    pub fn scenarios(&self) -> Result<HashMap<String, Scenario>, WorkspaceError> {
        let mut out: HashMap<String, Scenario> = HashMap::new();
        for s in self.suites()? {
            for sc in s.scenarios {
                match out.get(&sc.scenario_id) {
                    Some(prev) if !same_scenario(prev, &sc) => {
                        return Err(WorkspaceError::ScenarioClash(sc.scenario_id));
                    }
                    _ => {
                        out.insert(sc.scenario_id.clone(), sc);
                    }
                }
            }
        }
        Ok(out)
    }

    pub fn index_path(&self) -> PathBuf {
        self.dir("continuations").join("index.json")
    }

    pub fn load_index(&self) -> Result<ContinuationIndex, WorkspaceError> {
        let p = self.index_path();
        if p.exists() {
            read_json(&p)
        } else {
            Ok(ContinuationIndex::default())
        }
    }

    /// Stores the continuation episodes and records them in the index.
    pub fn save_continuations(&self, cs: &[Continuation]) -> Result<ContinuationIndex, WorkspaceError> {
        let mut index = self.load_index()?;
        let mut entries = Vec::with_capacity(cs.len());
        for c in cs {
            let rel = format!("continuations/{}.{EPISODE_EXTENSION}", c.continuation_id);
            save_episode(&c.episode, &self.root.join(&rel))?;
            entries.push(c.index_entry(rel));
        }
        index.upsert(entries);
        write_json(&self.index_path(), &index)?;
        Ok(index)
    }

    pub fn load_continuation_episode(&self, entry: &IndexEntry) -> Result<Episode, WorkspaceError> {
        Ok(load_episode(&self.root.join(&entry.path))?)
    }

    pub fn annotations_path(&self) -> PathBuf {
        self.dir("annotations").join("annotations.jsonl")
    }

    pub fn open_store(&self) -> Result<AnnotationStore, WorkspaceError> {
        Ok(AnnotationStore::open(&self.annotations_path())?)
    }

    pub fn references_path(&self) -> PathBuf {
        self.dir("annotations").join("references.jsonl")
    }

    pub fn load_references(&self) -> Result<Vec<ReferenceEpisode>, WorkspaceError> {
        let p = self.references_path();
        if !p.exists() {
            return Ok(Vec::new());
        }
        let text = fs::read_to_string(&p).map_err(io_err(&p))?;
        text.lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| {
                serde_json::from_str(l).map_err(|e| WorkspaceError::Json {
                    path: p.clone(),
                    message: e.to_string(),
                })
            })
            .collect()
    }

    /// Replaces the reference set.
    pub fn save_references(&self, refs: &[ReferenceEpisode]) -> Result<(), WorkspaceError> {
        let mut text = String::new();
        for r in refs {
            text.push_str(&serde_json::to_string(r).expect("reference serialises"));
            text.push('\n');
        }
        write_atomic(&self.references_path(), text.as_bytes())
    }

    pub fn report_path(&self, name: &str) -> PathBuf {
        self.dir("reports").join(name)
    }
}

fn same_scenario(a: &Scenario, b: &Scenario) -> bool {
    // Extending a suite rewrites nothing, so copies across suites agree on
    // everything except possibly the version tag.
    a.episode_id == b.episode_id
        && a.takeover_tick == b.takeover_tick
        && a.continuation_length == b.continuation_length
        && a.instruction_text == b.instruction_text
}

fn list_ids(dir: &Path, ext: &str) -> Result<Vec<String>, WorkspaceError> {
    if !dir.exists() {
        return Ok(Vec::new());
    }
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(io_err(dir))? {
        let p = entry.map_err(io_err(dir))?.path();
        if p.extension().is_some_and(|e| e == ext) {
            if let Some(stem) = p.file_stem().and_then(|s| s.to_str()) {
                out.push(stem.to_string());
            }
        }
    }
    Ok(out)
}

/// Current UTC time in RFC 3339, or the value of [`FIXED_TIME_ENV`].
pub fn timestamp() -> String {
    std::env::var(FIXED_TIME_ENV)
        .unwrap_or_else(|_| chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true))
}

/// The single ingestion path shared by the CLI and the HTTP service.
pub fn ingest_input(
    store: &AnnotationStore,
    index: &ContinuationIndex,
    input: AnnotationInput,
    created_at: &str,
) -> Result<Ingested, IngestError> {
    let bounds = index.get(&input.continuation_id).map(IndexEntry::bounds);
    store.ingest(
        Annotation {
            continuation_id: input.continuation_id,
            outcome: input.outcome,
            marker_tick: input.marker_tick,
            annotator_id: input.annotator_id,
            created_at: created_at.to_string(),
        },
        bounds,
    )
}

/// Pending queue for `annotator`: continuations nobody has annotated yet,
/// with reference episodes the annotator has not seen spliced in so that
/// about `rate` of the queue is references. The placement depends only on
/// the annotator id and the inputs.
pub fn pending_queue(
    index: &ContinuationIndex,
    store: &AnnotationStore,
    references: &[ReferenceEpisode],
    annotator: &str,
    rate: f64,
) -> Vec<String> {
    use rand::seq::SliceRandom;
    use rand::SeedableRng;

    let all = store.all();
    let annotated: std::collections::HashSet<&str> = all.iter().map(|a| a.continuation_id.as_str()).collect();
    let seen: std::collections::HashSet<&str> = all
        .iter()
        .filter(|a| a.annotator_id == annotator)
        .map(|a| a.continuation_id.as_str())
        .collect();
    let is_ref: std::collections::HashSet<&str> = references.iter().map(|r| r.continuation_id.as_str()).collect();
    let ordinary: Vec<&str> = index
        .continuations
        .iter()
        .map(|e| e.continuation_id.as_str())
        .filter(|id| !annotated.contains(id) && !is_ref.contains(id))
        .collect();
    let mut refs: Vec<&str> = references
        .iter()
        .map(|r| r.continuation_id.as_str())
        .filter(|id| !seen.contains(id))
        .collect();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(str_seed(annotator));
    refs.shuffle(&mut rng);

    // After k ordinary items, floor(k * rate / (1 - rate)) references have
    // been placed; references left over once the ordinary items run out are
    // dropped so the fraction holds.
    let ratio = if rate <= 0.0 { 0.0 } else { rate / (1.0 - rate) };
    let mut out = Vec::with_capacity(ordinary.len() + refs.len());
    let mut refs = refs.into_iter();
    let mut placed = 0usize;
    for (k, id) in ordinary.iter().enumerate() {
        out.push(id.to_string());
        let due = ((k + 1) as f64 * ratio).floor() as usize;
        while placed < due {
            match refs.next() {
                Some(r) => out.push(r.to_string()),
                None => break,
            }
            placed += 1;
        }
    }
    if ordinary.is_empty() {
        // Nothing else to do: serve the references on their own.
        out.extend(refs.map(str::to_string));
    }
    out
}

/// Score report for one agent from the workspace's current annotations.
pub fn agent_report(
    ws: &Workspace,
    store: &AnnotationStore,
    suite: &Suite,
    agent: &str,
    version: &str,
) -> Result<ScoreReport, WorkspaceError> {
    let index = ws.load_index()?;
    let scored: Vec<ScoredContinuation> = index.continuations.iter().map(IndexEntry::scored).collect();
    let all = store.all();
    let selected = select_annotations(&all, SelectionPolicy::OracleMajorityEarliest, None);
    if !scored.iter().any(|c| c.agent_name == agent) {
        return Err(WorkspaceError::Unknown {
            kind: "agent",
            id: agent.to_string(),
        });
    }
    Ok(sts_score(&selected, suite, &scored, agent, version)?)
}

/// Agent names appearing in the index, sorted.
pub fn agents_in(index: &ContinuationIndex) -> Vec<String> {
    let set: BTreeMap<&str, ()> = index.continuations.iter().map(|e| (e.agent_name.as_str(), ())).collect();
    set.into_keys().map(str::to_string).collect()
}
