use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use sts_core::agents::{parse_roster, AgentRef};
use sts_core::continuation::{generate_all, IndexEntry, PreparedScenario};
use sts_core::judging::{
    judge_episode, oracle_judge, simulate_annotator, AnnotationInput, Annotation, NoiseParams, ReferenceEpisode,
    ORACLE_ANNOTATOR,
};
use sts_core::proxy::{
    check_heldout_disjoint, correlate, default_probes, interactive_eval, mean_log_prob, run_probes,
    InteractiveOptions, MetricRow, MetricTable,
};
use sts_core::record::{record_corpus, CorpusSpec};
use sts_core::service::{serve, AppState};
use sts_core::stats::rank;
use sts_core::suite::{
    curate_by_category, curate_from_outcomes, default_registry, find_prompt, version_tag, CurationOptions,
    DEFAULT_CONTINUATION_LENGTH,
};
use sts_core::workspace::{
    agent_report, agents_in, ingest_input, pending_queue, read_json, timestamp, write_atomic, write_json, Workspace,
    WORKSPACE_ENV,
};

/// Standardised test suite harness.
#[derive(Debug, Parser)]
#[command(name = "sts", version)]
struct Cli {
    /// Workspace root.
    #[arg(long, global = true, env = WORKSPACE_ENV, default_value = ".")]
    workspace: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Create the workspace layout.
    Init {
        #[arg(long)]
        reference_rate: Option<f64>,
    },
    /// Record a corpus of setter/solver episodes.
    Record {
        /// JSON corpus spec; flags below override its fields.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Episodes per category.
        #[arg(long)]
        count: Option<u32>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        length: Option<u64>,
    },
    /// Select scenarios from the recorded corpus into a suite.
    Curate(CurateArgs),
    /// Generate continuations for a roster of agents.
    Continue {
        #[arg(long, default_value = "sts")]
        suite: String,
        /// Roster string (e.g. `ladder` or `oracle,noisy:0.3,random`) or a
        /// JSON file holding an array of agents.
        #[arg(long, default_value = "ladder")]
        agents: String,
        /// Replicates per agent and scenario.
        #[arg(long, default_value_t = 10)]
        n: u32,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Produce annotations or annotation queues.
    Judge(JudgeArgs),
    /// Score every agent with continuations and write the rank table.
    Rank {
        #[arg(long, default_value = "sts")]
        suite: String,
        /// Version filter: `v<k>` selects every scenario up to version k, any
        /// other tag matches literally. Defaults to the suite's own version.
        #[arg(long)]
        version: Option<String>,
    },
    /// Compute every metric for a roster and correlate them.
    Correlate {
        #[arg(long, default_value = "sts")]
        suite: String,
        /// Roster; defaults to every agent recorded by `continue`.
        #[arg(long)]
        agents: Option<String>,
        #[arg(long)]
        version: Option<String>,
        #[arg(long, default_value_t = 3)]
        heldout_per_category: u32,
        #[arg(long, default_value_t = 2)]
        heldout_seed: u64,
        #[arg(long, default_value_t = 3)]
        probe_seed: u64,
        #[arg(long, default_value_t = 0)]
        interactive_seed: u64,
    },
    /// Serve the annotation API.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: std::net::IpAddr,
    },
}

#[derive(Debug, Args)]
#[group(id = "strategy", required = true, multiple = false)]
struct Strategy {
    /// Scenarios per category.
    #[arg(long)]
    per_category: Option<usize>,
    /// Total scenarios sampled by judged outcome.
    #[arg(long)]
    from_outcomes: Option<usize>,
}

#[derive(Debug, Args)]
struct CurateArgs {
    #[command(flatten)]
    strategy: Strategy,
    /// Fraction of `--from-outcomes` scenarios taken from failures.
    #[arg(long, default_value_t = 0.5)]
    fail_weight: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "sts")]
    suite_id: String,
    #[arg(long, default_value_t = 1)]
    version: u32,
    #[arg(long, default_value_t = DEFAULT_CONTINUATION_LENGTH)]
    continuation_length: u64,
}

#[derive(Debug, Args)]
#[group(id = "mode", required = true, multiple = false)]
struct JudgeMode {
    /// Annotate every continuation with the programmatic oracle.
    #[arg(long)]
    oracle: bool,
    /// Simulated annotator, e.g. `flip=0.1,strict=0.05,jitter=3`.
    #[arg(long, value_name = "PARAMS")]
    simulate: Option<NoiseParams>,
    /// Write the pending queue to `annotations/pending.json`.
    #[arg(long)]
    export_pending: bool,
    /// Draw this many continuations as oracle-labelled reference episodes.
    #[arg(long, value_name = "N")]
    references: Option<usize>,
    /// Ingest a JSON-lines file of annotations.
    #[arg(long, value_name = "FILE")]
    ingest: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct JudgeArgs {
    #[command(flatten)]
    mode: JudgeMode,
    /// Per-annotator queue for `--export-pending`.
    #[arg(long)]
    annotator: Option<String>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

/// An operational failure, printed as `error: <kind>: <message>`.
#[derive(Debug)]
struct CliError {
    kind: &'static str,
    message: String,
}

impl CliError {
    fn new(kind: &'static str, message: impl ToString) -> Self {
        Self {
            kind,
            message: message.to_string(),
        }
    }
}

macro_rules! impl_from {
    ($($t:ty => $kind:literal),* $(,)?) => {
        $(impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::new($kind, e)
            }
        })*
    };
}

impl_from! {
    sts_core::workspace::WorkspaceError => "workspace",
    sts_core::record::RecordError => "record",
    sts_core::suite::SuiteError => "suite",
    sts_core::continuation::ContinuationError => "continuation",
    sts_core::judging::JudgeError => "judge",
    sts_core::judging::IngestError => "ingest",
    sts_core::stats::StatsError => "stats",
    sts_core::proxy::ProxyError => "proxy",
    sts_core::agents::AgentError => "agent",
    std::io::Error => "io",
}

type CliResult<T = ()> = Result<T, CliError>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.message.replace('\n', " ");
            eprintln!("error: {}: {msg}", e.kind);
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> CliResult {
    let root = cli.workspace;
    if let Command::Init { reference_rate } = cli.command {
        return init(&root, reference_rate);
    }
    let ws = Workspace::open(&root)?;
    match cli.command {
        Command::Init { .. } => unreachable!(),
        Command::Record {
            config,
            count,
            seed,
            length,
        } => record(&ws, config.as_deref(), count, seed, length),
        Command::Curate(args) => curate(&ws, &args),
        Command::Continue { suite, agents, n, seed } => continue_cmd(&ws, &suite, &agents, n, seed),
        Command::Judge(args) => judge(&ws, &args),
        Command::Rank { suite, version } => rank_cmd(&ws, &suite, version),
        Command::Correlate {
            suite,
            agents,
            version,
            heldout_per_category,
            heldout_seed,
            probe_seed,
            interactive_seed,
        } => {
            let opts = CorrelateOpts {
                heldout_per_category,
                heldout_seed,
                probe_seed,
                interactive_seed,
            };
            correlate_cmd(&ws, &suite, agents.as_deref(), version, &opts)
        }
        Command::Serve { port, host } => {
            let state = AppState::load(ws)?;
            let rt = tokio::runtime::Runtime::new()?;
            let addr = std::net::SocketAddr::new(host, port);
            eprintln!("listening on http://{addr}");
            rt.block_on(serve(state, addr))?;
            Ok(())
        }
    }
}

fn init(root: &Path, reference_rate: Option<f64>) -> CliResult {
    let ws = Workspace::init(root)?;
    if let Some(rate) = reference_rate {
        let mut cfg = ws.config.clone();
        cfg.reference_rate = rate;
        let path = root.join(sts_core::workspace::WORKSPACE_FILE);
        write_json(&path, &cfg)?;
        // Re-open so the rate is range-checked.
        if let Err(e) = Workspace::open(root) {
            write_json(&path, &ws.config)?;
            return Err(e.into());
        }
    }
    println!("initialised {}", root.display());
    Ok(())
}

fn record(ws: &Workspace, config: Option<&Path>, count: Option<u32>, seed: Option<u64>, length: Option<u64>) -> CliResult {
    let mut spec: CorpusSpec = match config {
        Some(p) => read_json(p)?,
        None => sts_core::study::StudyConfig::default().corpus,
    };
    if let Some(c) = count {
        spec.per_category = c;
    }
    if let Some(s) = seed {
        spec.seed = s;
    }
    if let Some(l) = length {
        spec.length = l;
    }
    let corpus = record_corpus(&spec)?;
    for e in &corpus {
        ws.save_episode(e)?;
    }
    println!("recorded {} episodes", corpus.len());
    Ok(())
}

fn curate(ws: &Workspace, args: &CurateArgs) -> CliResult {
    let corpus = ws.load_corpus()?;
    let opts = CurationOptions {
        suite_id: args.suite_id.clone(),
        version: args.version,
        continuation_length: args.continuation_length,
    };
    let suite = if let Some(per) = args.strategy.per_category {
        curate_by_category(&corpus, &default_registry(), per, &opts)?
    } else {
        let n = args.strategy.from_outcomes.unwrap_or(0);
        let judged = corpus
            .into_par_iter()
            .filter_map(|e| {
                let p = find_prompt(&e)?;
                let v = judge_episode(&e, p.takeover_tick(), &p.text);
                Some(v.map(|v| (e, v.outcome)))
            })
            .collect::<Result<Vec<_>, _>>()?;
        curate_from_outcomes(&judged, args.fail_weight, n, args.seed, &opts)?
    };
    ws.save_suite(&suite)?;
    println!("suite {} with {} scenarios", suite.suite_id, suite.scenarios.len());
    Ok(())
}

fn roster_path(ws: &Workspace) -> PathBuf {
    ws.dir("continuations").join("roster.json")
}

fn load_roster(text: &str) -> CliResult<Vec<AgentRef>> {
    let p = Path::new(text);
    let roster: Vec<AgentRef> = if p.extension().is_some_and(|e| e == "json") {
        read_json(p)?
    } else {
        parse_roster(text).map_err(|e| CliError::new("agent", e))?
    };
    if roster.is_empty() {
        return Err(CliError::new("agent", "roster is empty"));
    }
    sts_core::agents::validate_roster(&roster)?;
    Ok(roster)
}

fn continue_cmd(ws: &Workspace, suite_name: &str, agents: &str, n: u32, seed: u64) -> CliResult {
    if n == 0 {
        return Err(CliError::new("continuation", "--n must be at least 1"));
    }
    let suite = ws.load_suite(suite_name)?;
    let roster = load_roster(agents)?;
    let prepared = suite
        .scenarios
        .par_iter()
        .map(|s| Ok(PreparedScenario::new(s.clone(), Arc::new(ws.load_episode(&s.episode_id)?))?))
        .collect::<CliResult<Vec<_>>>()?;
    let cs = generate_all(&prepared, &roster, n, seed)?;
    let index = ws.save_continuations(&cs)?;

    // Remember every agent that has continuations so `correlate` can
    // rebuild the roster.
    let path = roster_path(ws);
    let mut known: BTreeMap<String, AgentRef> = if path.exists() {
        read_json::<Vec<AgentRef>>(&path)?.into_iter().map(|a| (a.name.clone(), a)).collect()
    } else {
        BTreeMap::new()
    };
    for a in roster {
        known.insert(a.name.clone(), a);
    }
    write_json(&path, &known.into_values().collect::<Vec<_>>())?;
    println!("generated {} continuations ({} in index)", cs.len(), index.continuations.len());
    Ok(())
}

fn oracle_for(ws: &Workspace, entry: &IndexEntry, scenarios: &HashMap<String, sts_core::suite::Scenario>, created_at: &str) -> CliResult<Annotation> {
    let sc = scenarios
        .get(&entry.scenario_id)
        .ok_or_else(|| CliError::new("workspace", format!("unknown scenario {:?}", entry.scenario_id)))?;
    let ep = ws.load_continuation_episode(entry)?;
    Ok(oracle_judge(
        &entry.continuation_id,
        &ep,
        entry.takeover_tick,
        &sc.category,
        &sc.instruction_text,
        created_at,
    )?)
}

fn judge(ws: &Workspace, args: &JudgeArgs) -> CliResult {
    let index = ws.load_index()?;
    let store = ws.open_store()?;
    let mode = &args.mode;
    if let Some(path) = &mode.ingest {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::new("io", format!("{}: {e}", path.display())))?;
        let created_at = timestamp();
        let (mut created, mut existing) = (0, 0);
        for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let input: AnnotationInput = serde_json::from_str(line)
                .map_err(|e| CliError::new("parse", format!("{}:{}: {e}", path.display(), i + 1)))?;
            match ingest_input(&store, &index, input, &created_at)? {
                sts_core::judging::Ingested::Created(_) => created += 1,
                sts_core::judging::Ingested::Existing(_) => existing += 1,
            }
        }
        println!("ingested {created} new, {existing} already present");
        return Ok(());
    }
    if mode.export_pending {
        let ids: Vec<String> = match &args.annotator {
            Some(a) => pending_queue(&index, &store, &ws.load_references()?, a, ws.config.reference_rate),
            None => {
                let all = store.all();
                let done: std::collections::HashSet<&str> = all.iter().map(|a| a.continuation_id.as_str()).collect();
                index
                    .continuations
                    .iter()
                    .filter(|e| !done.contains(e.continuation_id.as_str()))
                    .map(|e| e.continuation_id.clone())
                    .collect()
            }
        };
        let path = ws.dir("annotations").join("pending.json");
        write_json(&path, &ids)?;
        println!("{} pending", ids.len());
        return Ok(());
    }

    let scenarios = ws.scenarios()?;
    let created_at = timestamp();
    if let Some(n) = mode.references {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        if n > index.continuations.len() {
            return Err(CliError::new(
                "judge",
                format!("asked for {n} references but only {} continuations exist", index.continuations.len()),
            ));
        }
        let mut entries: Vec<&IndexEntry> = index.continuations.iter().collect();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(args.seed);
        entries.shuffle(&mut rng);
        let mut refs = entries[..n]
            .par_iter()
            .map(|e| Ok(ReferenceEpisode::from_annotation(&oracle_for(ws, e, &scenarios, &created_at)?)))
            .collect::<CliResult<Vec<_>>>()?;
        refs.sort_by(|a, b| a.continuation_id.cmp(&b.continuation_id));
        ws.save_references(&refs)?;
        println!("{} reference episodes", refs.len());
        return Ok(());
    }

    let todo: Vec<&IndexEntry> = match &mode.simulate {
        Some(p) => index
            .continuations
            .iter()
            .filter(|e| store.get(&e.continuation_id, &p.annotator_id()).is_none())
            .collect(),
        None => index
            .continuations
            .iter()
            .filter(|e| store.get(&e.continuation_id, ORACLE_ANNOTATOR).is_none())
            .collect(),
    };
    let anns = todo
        .par_iter()
        .map(|e| {
            let truth = oracle_for(ws, e, &scenarios, &created_at)?;
            Ok(match &mode.simulate {
                Some(p) => simulate_annotator(&truth, p, e.bounds(), args.seed),
                None => truth,
            })
        })
        .collect::<CliResult<Vec<_>>>()?;
    let bounds: Vec<_> = todo.iter().map(|e| Some(e.bounds())).collect();
    let added = store.ingest_all(anns.into_iter().zip(bounds))?;
    println!("{added} annotations added ({} total)", store.len());
    Ok(())
}

fn resolve_version(ws: &Workspace, suite: &str, version: Option<String>) -> CliResult<(sts_core::suite::Suite, String)> {
    let suite = ws.load_suite(suite)?;
    let version = version.unwrap_or_else(|| version_tag(suite.version));
    Ok((suite, version))
}

fn rank_cmd(ws: &Workspace, suite_name: &str, version: Option<String>) -> CliResult {
    let (suite, version) = resolve_version(ws, suite_name, version)?;
    let index = ws.load_index()?;
    let store = ws.open_store()?;
    let agents = agents_in(&index);
    if agents.is_empty() {
        return Err(CliError::new("rank", "no continuations in the workspace"));
    }
    let reports = agents
        .iter()
        .map(|a| agent_report(ws, &store, &suite, a, &version))
        .collect::<Result<Vec<_>, _>>()?;
    for r in &reports {
        write_json(&ws.report_path(&format!("{}.json", r.agent_name)), r)?;
    }
    let table = rank(&reports)?;
    write_atomic(&ws.report_path("rank.txt"), table.to_text().as_bytes())?;
    write_atomic(&ws.report_path("rank.csv"), table.to_csv().as_bytes())?;
    write_json(&ws.report_path("rank.json"), &table)?;
    print!("{}", table.to_text());
    Ok(())
}

struct CorrelateOpts {
    heldout_per_category: u32,
    heldout_seed: u64,
    probe_seed: u64,
    interactive_seed: u64,
}

fn correlate_cmd(ws: &Workspace, suite_name: &str, agents: Option<&str>, version: Option<String>, o: &CorrelateOpts) -> CliResult {
    let (suite, version) = resolve_version(ws, suite_name, version)?;
    let roster = match agents {
        Some(a) => load_roster(a)?,
        None => {
            let p = roster_path(ws);
            if !p.exists() {
                return Err(CliError::new("correlate", "no roster recorded; run `continue` or pass --agents"));
            }
            read_json(&p)?
        }
    };
    let store = ws.open_store()?;
    let heldout = record_corpus(&CorpusSpec {
        per_category: o.heldout_per_category,
        seed: o.heldout_seed,
        ..CorpusSpec::default()
    })?;
    check_heldout_disjoint(&heldout, &suite)?;
    let probes = default_probes(o.probe_seed);
    let interactive = InteractiveOptions {
        seed: o.interactive_seed,
        ..InteractiveOptions::default()
    };
    let rows = roster
        .iter()
        .map(|a| {
            let sts = agent_report(ws, &store, &suite, &a.name, &version)?.overall.score;
            Ok(MetricRow {
                agent_name: a.name.clone(),
                sts_score: sts,
                interactive_score: interactive_eval(a, &interactive)?.interactive_score,
                mean_log_prob: mean_log_prob(a, &heldout)?,
                probe_score: run_probes(a, &probes)?.probe_score,
            })
        })
        .collect::<CliResult<Vec<_>>>()?;
    let table = MetricTable { rows };
    let correlations = correlate(&table)?;
    write_atomic(&ws.report_path("metrics.csv"), table.to_csv().as_bytes())?;
    write_json(&ws.report_path("correlations.json"), &correlations)?;
    print!("{}", table.to_csv());
    for c in &correlations {
        println!("{} ~ {}: r={:.4} p={:.4} n={}", c.metric_a, c.metric_b, c.r, c.p, c.n);
    }
    Ok(())
}
