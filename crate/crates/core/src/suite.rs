//! Scenario suites: curation from a recorded corpus, version tags, and the
//! JSON manifest.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::judging::Outcome;
use crate::sim::ActionKind;
use crate::task::{Category, CategoryKind, Difficulty, Instruction};
use crate::trajectory::{replay_prefix, Episode};

pub const DEFAULT_CONTINUATION_LENGTH: u64 = 300;
/// Upper bound on `takeover_tick + continuation_length`.
pub const MAX_EPISODE_BUDGET: u64 = 600;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryEntry {
    pub name: String,
    pub kind: CategoryKind,
}

/// The default registry: every built-in category.
pub fn default_registry() -> Vec<CategoryEntry> {
    Category::ALL
        .iter()
        .map(|c| CategoryEntry {
            name: c.name().to_string(),
            kind: c.kind(),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Scenario {
    pub scenario_id: String,
    pub episode_id: String,
    pub takeover_tick: u64,
    pub continuation_length: u64,
    pub category: String,
    /// Sorted; always holds exactly one version tag `v<N>`.
    pub tags: Vec<String>,
    pub instruction_text: String,
    pub difficulty_hint: Difficulty,
}

impl Scenario {
    /// Contexts always start at the first tick of the source episode.
    pub fn context_start(&self) -> u64 {
        0
    }

    pub fn version(&self) -> Option<u32> {
        self.tags.iter().find_map(|t| parse_version_tag(t))
    }

    pub fn end_tick(&self) -> u64 {
        self.takeover_tick + self.continuation_length
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Suite {
    pub suite_id: String,
    pub version: u32,
    pub categories: Vec<CategoryEntry>,
    pub scenarios: Vec<Scenario>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SuiteError {
    #[error("insufficient scenarios: {}", format_shortfalls(.0))]
    Insufficient(Vec<Shortfall>),
    #[error("per_category must be at least 1")]
    PerCategory,
    #[error("fail_weight {0} outside [0, 1]")]
    FailWeight(f64),
    #[error("bucket exhausted: need {need_fail} failures and {need_success} successes, have {have_fail} and {have_success}")]
    BucketExhausted {
        need_fail: usize,
        have_fail: usize,
        need_success: usize,
        have_success: usize,
    },
    #[error("duplicate scenario id {0:?}")]
    DuplicateScenario(String),
    #[error("unknown tag syntax {0:?}")]
    TagSyntax(String),
    #[error("category {0:?} is not in the registry")]
    UnregisteredCategory(String),
    #[error("scenario {id:?}: {reason}")]
    InvalidScenario { id: String, reason: String },
    #[error("new version {new} must exceed current version {current}")]
    VersionNotIncreasing { current: u32, new: u32 },
    #[error("manifest i/o: {0}")]
    Io(String),
    #[error("manifest parse: {0}")]
    Parse(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shortfall {
    pub category: String,
    pub needed: usize,
    pub available: usize,
}

fn format_shortfalls(s: &[Shortfall]) -> String {
    s.iter()
        .map(|f| format!("category {} has {} of {}", f.category, f.available, f.needed))
        .collect::<Vec<_>>()
        .join("; ")
}

pub fn version_tag(v: u32) -> String {
    format!("v{v}")
}

fn parse_version_tag(t: &str) -> Option<u32> {
    t.strip_prefix('v')
        .filter(|d| !d.is_empty() && d.bytes().all(|b| b.is_ascii_digit()))
        .and_then(|d| d.parse().ok())
}

fn valid_plain_tag(t: &str) -> bool {
    let mut bytes = t.bytes();
    matches!(bytes.next(), Some(b'a'..=b'z'))
        && bytes.all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || b == b'_')
}

/// Checks tag syntax: `v<N>` or a lowercase identifier.
pub fn validate_tag(t: &str) -> Result<(), SuiteError> {
    if parse_version_tag(t).is_some() || valid_plain_tag(t) {
        Ok(())
    } else {
        Err(SuiteError::TagSyntax(t.to_string()))
    }
}

/// The prompt of a recorded episode: the first setter utterance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Prompt {
    pub said_tick: u64,
    pub text: String,
    pub instruction: Instruction,
}

impl Prompt {
    pub fn takeover_tick(&self) -> u64 {
        self.said_tick + 1
    }
}

pub fn find_prompt(episode: &Episode) -> Option<Prompt> {
    episode.steps.iter().find_map(|s| {
        let a = &s.setter_action;
        if a.kind != ActionKind::Say || !a.is_well_formed() {
            return None;
        }
        let text = a.utterance.clone()?;
        let instruction = Instruction::parse(&text).ok()?;
        Some(Prompt {
            said_tick: s.tick,
            text,
            instruction,
        })
    })
}

/// Builds the scenario for `episode` at `version`, or `None` if the
/// episode has no usable prompt.
pub fn scenario_for(episode: &Episode, continuation_length: u64, version: u32) -> Option<Scenario> {
    let prompt = find_prompt(episode)?;
    let takeover = prompt.takeover_tick();
    if takeover >= episode.len() || takeover + continuation_length > MAX_EPISODE_BUDGET {
        return None;
    }
    let state = replay_prefix(episode, takeover).ok()?;
    let category = prompt.instruction.category();
    let difficulty = Difficulty::assess(&prompt.instruction, &state);
    let mut tags = vec![
        version_tag(version),
        category.name().to_string(),
        difficulty.as_str().to_string(),
    ];
    tags.sort();
    tags.dedup();
    Some(Scenario {
        scenario_id: format!("s-{}", episode.episode_id),
        episode_id: episode.episode_id.clone(),
        takeover_tick: takeover,
        continuation_length,
        category: category.name().to_string(),
        tags,
        instruction_text: prompt.text,
        difficulty_hint: difficulty,
    })
}

/// Parameters shared by the curation strategies.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CurationOptions {
    pub suite_id: String,
    pub version: u32,
    pub continuation_length: u64,
}

impl Default for CurationOptions {
    fn default() -> Self {
        Self {
            suite_id: "sts".into(),
            version: 1,
            continuation_length: DEFAULT_CONTINUATION_LENGTH,
        }
    }
}

/// Picks `per_category` scenarios for each registered category, cycling
/// through easy, medium and hard candidates in corpus order. Episodes
/// flagged for training are never used.
pub fn curate_by_category(
    corpus: &[Episode],
    registry: &[CategoryEntry],
    per_category: usize,
    opts: &CurationOptions,
) -> Result<Suite, SuiteError> {
    if per_category == 0 {
        return Err(SuiteError::PerCategory);
    }
    validate_registry(registry)?;
    let wanted: BTreeSet<&str> = registry.iter().map(|c| c.name.as_str()).collect();
    let mut buckets: BTreeMap<&str, BTreeMap<Difficulty, Vec<Scenario>>> = BTreeMap::new();
    for e in corpus.iter().filter(|e| !e.metadata.training) {
        let Some(cat) = e.metadata.category.as_deref().filter(|c| wanted.contains(c)) else {
            continue;
        };
        if let Some(s) = scenario_for(e, opts.continuation_length, opts.version) {
            if s.category == cat {
                buckets.entry(cat).or_default().entry(s.difficulty_hint).or_default().push(s);
            }
        }
    }

    let mut scenarios = Vec::new();
    let mut shortfalls = Vec::new();
    for entry in registry {
        let mut by_difficulty: Vec<std::vec::IntoIter<Scenario>> = buckets
            .remove(entry.name.as_str())
            .unwrap_or_default()
            .into_values()
            .map(Vec::into_iter)
            .collect();
        let mut picked = Vec::new();
        while picked.len() < per_category {
            let before = picked.len();
            for it in by_difficulty.iter_mut() {
                if picked.len() == per_category {
                    break;
                }
                if let Some(s) = it.next() {
                    picked.push(s);
                }
            }
            if picked.len() == before {
                break;
            }
        }
        if picked.len() < per_category {
            shortfalls.push(Shortfall {
                category: entry.name.clone(),
                needed: per_category,
                available: picked.len(),
            });
        }
        scenarios.extend(picked);
    }
    if !shortfalls.is_empty() {
        return Err(SuiteError::Insufficient(shortfalls));
    }
    let suite = Suite {
        suite_id: opts.suite_id.clone(),
        version: opts.version,
        categories: registry.to_vec(),
        scenarios,
    };
    validate_suite(&suite)?;
    Ok(suite)
}

/// Samples `n` scenarios from judged episodes, `round(fail_weight * n)` of
/// them from the failures. Deterministic given `seed`.
pub fn curate_from_outcomes(
    judged: &[(Episode, Outcome)],
    fail_weight: f64,
    n: usize,
    seed: u64,
    opts: &CurationOptions,
) -> Result<Suite, SuiteError> {
    if !(0.0..=1.0).contains(&fail_weight) {
        return Err(SuiteError::FailWeight(fail_weight));
    }
    let mut fails = Vec::new();
    let mut successes = Vec::new();
    for (e, outcome) in judged.iter().filter(|(e, _)| !e.metadata.training) {
        if let Some(s) = scenario_for(e, opts.continuation_length, opts.version) {
            match outcome {
                Outcome::Failure => fails.push(s),
                Outcome::Success => successes.push(s),
            }
        }
    }
    let need_fail = (fail_weight * n as f64).round() as usize;
    let need_success = n - need_fail;
    if fails.len() < need_fail || successes.len() < need_success {
        return Err(SuiteError::BucketExhausted {
            need_fail,
            have_fail: fails.len(),
            need_success,
            have_success: successes.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    fails.shuffle(&mut rng);
    successes.shuffle(&mut rng);
    let mut scenarios: Vec<Scenario> = fails.into_iter().take(need_fail).collect();
    scenarios.extend(successes.into_iter().take(need_success));
    let suite = Suite {
        suite_id: opts.suite_id.clone(),
        version: opts.version,
        categories: default_registry(),
        scenarios,
    };
    validate_suite(&suite)?;
    Ok(suite)
}

fn validate_registry(registry: &[CategoryEntry]) -> Result<(), SuiteError> {
    for c in registry {
        let known: Category = c
            .name
            .parse()
            .map_err(|_| SuiteError::UnregisteredCategory(c.name.clone()))?;
        if known.kind() != c.kind {
            return Err(SuiteError::UnregisteredCategory(format!("{} as {}", c.name, c.kind)));
        }
    }
    Ok(())
}

/// Checks every suite invariant.
pub fn validate_suite(suite: &Suite) -> Result<(), SuiteError> {
    validate_registry(&suite.categories)?;
    let registered: BTreeSet<&str> = suite.categories.iter().map(|c| c.name.as_str()).collect();
    let mut ids = BTreeSet::new();
    for s in &suite.scenarios {
        let invalid = |reason: &str| SuiteError::InvalidScenario {
            id: s.scenario_id.clone(),
            reason: reason.to_string(),
        };
        if !ids.insert(s.scenario_id.as_str()) {
            return Err(SuiteError::DuplicateScenario(s.scenario_id.clone()));
        }
        if !registered.contains(s.category.as_str()) {
            return Err(SuiteError::UnregisteredCategory(s.category.clone()));
        }
        for t in &s.tags {
            validate_tag(t)?;
        }
        if s.tags.iter().filter(|t| parse_version_tag(t).is_some()).count() != 1 {
            return Err(invalid("needs exactly one version tag"));
        }
        if s.takeover_tick == 0 {
            return Err(invalid("takeover_tick must be positive"));
        }
        if s.continuation_length == 0 || s.end_tick() > MAX_EPISODE_BUDGET {
            return Err(invalid("takeover_tick + continuation_length exceeds the episode budget"));
        }
    }
    Ok(())
}

/// Scenarios matching `query`: `v<k>` selects everything tagged with a
/// version up to `k`; any other tag matches literally.
pub fn filter(suite: &Suite, query: &str) -> Result<Suite, SuiteError> {
    validate_tag(query)?;
    let (version, scenarios) = match parse_version_tag(query) {
        Some(k) => (
            k.min(suite.version),
            suite
                .scenarios
                .iter()
                .filter(|s| s.version().is_some_and(|v| v <= k))
                .cloned()
                .collect(),
        ),
        None => (
            suite.version,
            suite.scenarios.iter().filter(|s| s.tags.iter().any(|t| t == query)).cloned().collect(),
        ),
    };
    Ok(Suite {
        suite_id: suite.suite_id.clone(),
        version,
        categories: suite.categories.clone(),
        scenarios,
    })
}

/// Appends `scenarios` as version `new_version`. Existing scenarios are
/// untouched; the new ones have their version tag replaced.
pub fn extend(suite: &Suite, scenarios: Vec<Scenario>, new_version: u32) -> Result<Suite, SuiteError> {
    if new_version <= suite.version {
        return Err(SuiteError::VersionNotIncreasing {
            current: suite.version,
            new: new_version,
        });
    }
    let mut out = suite.clone();
    out.version = new_version;
    for mut s in scenarios {
        s.tags.retain(|t| parse_version_tag(t).is_none());
        s.tags.push(version_tag(new_version));
        s.tags.sort();
        s.tags.dedup();
        if out.scenarios.iter().any(|o| o.scenario_id == s.scenario_id) {
            return Err(SuiteError::DuplicateScenario(s.scenario_id));
        }
        out.scenarios.push(s);
    }
    validate_suite(&out)?;
    Ok(out)
}

pub fn to_manifest(suite: &Suite) -> String {
    let mut s = serde_json::to_string_pretty(suite).expect("suite serializes");
    s.push('\n');
    s
}

pub fn from_manifest(text: &str) -> Result<Suite, SuiteError> {
    let suite: Suite = serde_json::from_str(text).map_err(|e| SuiteError::Parse(e.to_string()))?;
    validate_suite(&suite)?;
    Ok(suite)
}

pub fn save_suite(suite: &Suite, path: &Path) -> Result<(), SuiteError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| SuiteError::Io(e.to_string()))?;
    }
    fs::write(path, to_manifest(suite)).map_err(|e| SuiteError::Io(format!("{}: {e}", path.display())))
}

pub fn load_suite(path: &Path) -> Result<Suite, SuiteError> {
    let text = fs::read_to_string(path).map_err(|e| SuiteError::Io(format!("{}: {e}", path.display())))?;
    from_manifest(&text)
}

#[cfg(test)]
mod tests;
