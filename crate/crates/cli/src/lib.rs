//! Pipeline wiring behind the `relayer` CLI: configuration, record
//! caching, report emission and the full parse -> elements -> graph ->
//! freq -> cost -> optimize -> simulate run.

use relayer_core::cost::{
    load_costs, measure_costs, CostError, CostTable, DockerCliAdapter,
};
use relayer_core::dockerfile::{parse_dockerfile, ParseError, ParsedDockerfile};
use relayer_core::graph::{build_graph, GraphError};
use relayer_core::history::{
    collect_history, compute_frequencies, filter_window, head_commit, FrequencyTable,
    HistoryError, HistoryOptions, Matcher, ModificationRecord,
};
use relayer_core::optimizer::{
    emit_dockerfile, optimize, KeyRule, OptimizationOptions, OptimizationPlan, OptimizeError,
};
use relayer_core::semantics::{extract_all, CommandKnowledgeRegistry, SemanticElements};
use relayer_core::simulator::{events_from_records, replay, EfficiencyReport, SimulatorError};
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

/// Exit status classes.
pub const EXIT_OK: i32 = 0;
pub const EXIT_INTERNAL: i32 = 1;
pub const EXIT_USER: i32 = 2;
pub const EXIT_TOOL: i32 = 3;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    User(String),
    #[error("{0}")]
    Internal(String),
    #[error("{0}")]
    ToolUnavailable(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::User(_) => EXIT_USER,
            CliError::Internal(_) => EXIT_INTERNAL,
            CliError::ToolUnavailable(_) => EXIT_TOOL,
        }
    }

    fn internal(e: impl std::fmt::Display) -> Self {
        CliError::Internal(e.to_string())
    }
}

impl From<ParseError> for CliError {
    fn from(e: ParseError) -> Self {
        CliError::User(format!("dockerfile parse error: {e}"))
    }
}

impl From<HistoryError> for CliError {
    fn from(e: HistoryError) -> Self {
        match e {
            HistoryError::GitUnavailable(_) => CliError::ToolUnavailable(e.to_string()),
            HistoryError::NotARepository(_) | HistoryError::DockerfileNotFound(_) => {
                CliError::User(e.to_string())
            }
            other => CliError::Internal(other.to_string()),
        }
    }
}

impl From<CostError> for CliError {
    fn from(e: CostError) -> Self {
        match e {
            CostError::RuntimeUnavailable(_) => CliError::ToolUnavailable(e.to_string()),
            CostError::ParseError(_) | CostError::NegativeCost(_) => CliError::User(e.to_string()),
            other => CliError::Internal(other.to_string()),
        }
    }
}

impl From<GraphError> for CliError {
    fn from(e: GraphError) -> Self {
        CliError::Internal(e.to_string())
    }
}

impl From<OptimizeError> for CliError {
    fn from(e: OptimizeError) -> Self {
        match e {
            OptimizeError::InvalidGroups(_) | OptimizeError::GroupCycle(_) => {
                CliError::User(e.to_string())
            }
            other => CliError::Internal(other.to_string()),
        }
    }
}

impl From<SimulatorError> for CliError {
    fn from(e: SimulatorError) -> Self {
        CliError::Internal(e.to_string())
    }
}

/// Where build costs come from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CostSourceConfig {
    /// Measure with the container runtime.
    Measure,
    /// Load a JSON index->seconds table.
    Load(PathBuf),
    /// 1.0 everywhere (frequency-only optimization).
    Uniform,
}

/// Full-pipeline configuration.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub dockerfile: PathBuf,
    pub repo: Option<PathBuf>,
    pub window_months: u32,
    pub tau: f64,
    pub key_rule: KeyRule,
    pub stale_keys: bool,
    pub safeguard: bool,
    pub repeats: u32,
    pub cost_source: CostSourceConfig,
    /// Force uniform frequencies (ablation knob).
    pub uniform_freq: bool,
    /// Drop all dependency edges before scheduling (ablation knob;
    /// routinely breaks builds, useful only for comparison runs).
    pub ignore_deps: bool,
    pub groups_path: Option<PathBuf>,
    pub registry_path: Option<PathBuf>,
    /// Record cache file for incremental mining.
    pub records_cache: Option<PathBuf>,
    /// Directory for step artifacts (graph/freq/cost JSON).
    pub out_dir: Option<PathBuf>,
    /// Suffix for the emitted Dockerfile when no explicit path is given.
    pub suffix: String,
    pub emit_path: Option<PathBuf>,
    pub report_path: Option<PathBuf>,
    pub dry_run: bool,
    pub git_program: String,
    pub runtime_program: String,
    pub context: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            dockerfile: PathBuf::from("Dockerfile"),
            repo: None,
            window_months: 30,
            tau: 0.5,
            key_rule: KeyRule::Paper,
            stale_keys: false,
            safeguard: true,
            repeats: 3,
            cost_source: CostSourceConfig::Uniform,
            uniform_freq: false,
            ignore_deps: false,
            groups_path: None,
            registry_path: None,
            records_cache: None,
            out_dir: None,
            suffix: ".optimized".to_string(),
            emit_path: None,
            report_path: None,
            dry_run: false,
            git_program: git_program_from_env(),
            runtime_program: runtime_program_from_env(),
            context: None,
        }
    }
}

pub fn git_program_from_env() -> String {
    std::env::var("RELAYER_GIT").unwrap_or_else(|_| "git".to_string())
}

pub fn runtime_program_from_env() -> String {
    std::env::var("RELAYER_DOCKER").unwrap_or_else(|_| "docker".to_string())
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), CliError> {
        if self.window_months < 1 {
            return Err(CliError::User("--window-months must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return Err(CliError::User("--tau must be within [0, 1]".into()));
        }
        if self.repeats < 1 {
            return Err(CliError::User("--repeats must be >= 1".into()));
        }
        Ok(())
    }
}

/// Cached mining results, keyed by repo head, dockerfile path and window.
#[derive(Debug, Serialize, Deserialize)]
pub struct RecordCache {
    pub head: String,
    pub dockerfile: String,
    pub window_months: u32,
    pub records: Vec<ModificationRecord>,
}

/// Per-instruction move in the final plan.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MoveDetail {
    pub index: usize,
    pub kind: String,
    pub from_position: usize,
    pub to_position: usize,
}

/// Machine-readable run report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunReport {
    pub dockerfile: String,
    pub instructions: usize,
    pub cost_before: f64,
    pub cost_after: f64,
    /// (before - after) / before, 0 when before is 0.
    pub improvement_ratio: f64,
    pub chosen_variant: relayer_core::optimizer::ChosenVariant,
    pub order_before: Vec<usize>,
    pub order_after: Vec<usize>,
    pub frequencies: Vec<f64>,
    pub costs: Vec<f64>,
    pub moves: Vec<MoveDetail>,
    pub total_modifications: usize,
    pub efficiency: Option<EfficiencyReport>,
    pub emitted_to: Option<String>,
}

/// Everything a `run` produced, for callers that want the values.
pub struct RunOutputs {
    pub doc: ParsedDockerfile,
    pub elements: Vec<SemanticElements>,
    pub frequencies: FrequencyTable,
    pub costs: CostTable,
    pub plan: OptimizationPlan,
    pub report: RunReport,
    pub records: Vec<ModificationRecord>,
}

pub fn read_dockerfile(path: &Path) -> Result<(String, ParsedDockerfile), CliError> {
    let text = if path == Path::new("-") {
        use std::io::Read;
        let mut buf = String::new();
        std::io::stdin()
            .read_to_string(&mut buf)
            .map_err(CliError::internal)?;
        buf
    } else {
        std::fs::read_to_string(path)
            .map_err(|e| CliError::User(format!("cannot read {}: {e}", path.display())))?
    };
    let doc = parse_dockerfile(&text)?;
    Ok((text, doc))
}

pub fn load_registry(path: Option<&Path>) -> Result<CommandKnowledgeRegistry, CliError> {
    match path {
        Some(p) => CommandKnowledgeRegistry::from_file(p)
            .map_err(|e| CliError::User(format!("registry {}: {e}", p.display()))),
        None => Ok(CommandKnowledgeRegistry::builtin()),
    }
}

/// Mine records, going through the cache when one is configured.
/// A cache hit on the same head is reused as-is; on a new head only the
/// commits since the cached head are mined and merged.
pub fn mine_records(
    repo: &Path,
    dockerfile: &Path,
    config: &RunConfig,
) -> Result<Vec<ModificationRecord>, CliError> {
    let opts = HistoryOptions {
        window_months: config.window_months,
        git_program: config.git_program.clone(),
        ..HistoryOptions::default()
    };
    let head = head_commit(repo, &config.git_program)?;
    let dockerfile_key = dockerfile.to_string_lossy().to_string();

    if let Some(cache_path) = &config.records_cache {
        if let Ok(text) = std::fs::read_to_string(cache_path) {
            if let Ok(cache) = serde_json::from_str::<RecordCache>(&text) {
                if cache.dockerfile == dockerfile_key && cache.window_months == config.window_months
                {
                    if cache.head == head {
                        return Ok(cache.records);
                    }
                    // incremental: mine only commits after the cached head
                    let inc_opts = HistoryOptions {
                        since_commit: Some(cache.head.clone()),
                        ..opts.clone()
                    };
                    let mut records = collect_history(repo, dockerfile, &inc_opts)?;
                    records.extend(cache.records);
                    let as_of = chrono_now();
                    let mut records =
                        filter_window(records, config.window_months, as_of);
                    records.sort_by_key(|r| std::cmp::Reverse(r.date));
                    save_cache(cache_path, &head, &dockerfile_key, config, &records)?;
                    return Ok(records);
                }
            }
        }
        let records = collect_history(repo, dockerfile, &opts)?;
        save_cache(cache_path, &head, &dockerfile_key, config, &records)?;
        return Ok(records);
    }

    Ok(collect_history(repo, dockerfile, &opts)?)
}

fn chrono_now() -> i64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs() as i64)
        .unwrap_or(0)
}

fn save_cache(
    path: &Path,
    head: &str,
    dockerfile: &str,
    config: &RunConfig,
    records: &[ModificationRecord],
) -> Result<(), CliError> {
    let cache = RecordCache {
        head: head.to_string(),
        dockerfile: dockerfile.to_string(),
        window_months: config.window_months,
        records: records.to_vec(),
    };
    write_json(path, &cache)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(CliError::internal)?;
        }
    }
    let text = serde_json::to_string_pretty(value).map_err(CliError::internal)?;
    std::fs::write(path, text).map_err(CliError::internal)
}

pub fn load_groups(path: &Path) -> Result<Vec<Vec<usize>>, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::User(format!("cannot read groups {}: {e}", path.display())))?;
    serde_json::from_str::<Vec<Vec<usize>>>(&text)
        .map_err(|e| CliError::User(format!("groups file {}: {e}", path.display())))
}

fn resolve_costs(
    config: &RunConfig,
    doc: &ParsedDockerfile,
) -> Result<(CostTable, Vec<usize>), CliError> {
    match &config.cost_source {
        CostSourceConfig::Uniform => Ok((CostTable::uniform(doc.instructions.len()), Vec::new())),
        CostSourceConfig::Load(path) => {
            let (table, missing) = load_costs(path, doc.instructions.len())?;
            Ok((table, missing))
        }
        CostSourceConfig::Measure => {
            let mut adapter = DockerCliAdapter::new(config.runtime_program.clone());
            let context = config
                .context
                .clone()
                .or_else(|| config.dockerfile.parent().map(Path::to_path_buf))
                .unwrap_or_else(|| PathBuf::from("."));
            let table = measure_costs(doc, &context, &mut adapter, config.repeats)?;
            Ok((table, Vec::new()))
        }
    }
}

/// Execute the full pipeline. Step artifacts are flushed to `out_dir` as
/// each step completes, so an expensive late failure (cost measurement)
/// leaves the earlier outputs on disk.
pub fn run_pipeline(config: &RunConfig) -> Result<RunOutputs, CliError> {
    config.validate()?;
    let (_, doc) = read_dockerfile(&config.dockerfile)?;
    let registry = load_registry(config.registry_path.as_deref())?;
    let elements = extract_all(&doc, &registry);
    let mut graph = build_graph(&doc, &elements)?;
    if config.ignore_deps {
        graph = relayer_core::graph::DependencyGraph::new(graph.nodes);
    }

    let artifact = |name: &str, value: &dyn erased::SerializeRef| -> Result<(), CliError> {
        if let Some(dir) = &config.out_dir {
            let path = dir.join(name);
            if let Some(parent) = path.parent() {
                std::fs::create_dir_all(parent).map_err(CliError::internal)?;
            }
            std::fs::write(&path, value.to_json()?).map_err(CliError::internal)?;
        }
        Ok(())
    };
    artifact("elements.json", &erased::wrap(&elements))?;
    artifact(
        "graph.json",
        &erased::wrap_text(relayer_core::graph::export_graph(
            &graph,
            relayer_core::graph::ExportFormat::Json,
        )),
    )?;

    // frequencies
    let (records, frequencies) = if config.uniform_freq {
        (
            Vec::new(),
            FrequencyTable::uniform(doc.instructions.len(), config.window_months),
        )
    } else if let Some(repo) = &config.repo {
        let records = mine_records(repo, &config.dockerfile, config)?;
        let matcher = Matcher::new(&doc, &elements, &records, config.tau);
        let table = compute_frequencies(&matcher, &records, config.window_months);
        (records, table)
    } else {
        (
            Vec::new(),
            FrequencyTable::uniform(doc.instructions.len(), config.window_months),
        )
    };
    artifact("frequencies.json", &erased::wrap(&frequencies))?;

    // costs
    let (costs, missing) = resolve_costs(config, &doc)?;
    if !missing.is_empty() {
        eprintln!(
            "warning: cost table missing indices {missing:?}; filled with 1.0s"
        );
    }
    artifact("costs.json", &erased::wrap(&costs))?;

    // optimize
    let opts = OptimizationOptions {
        key_rule: config.key_rule,
        stale_keys: config.stale_keys,
        safeguard: config.safeguard,
        group_map: match &config.groups_path {
            Some(p) => Some(load_groups(p)?),
            None => None,
        },
    };
    let plan = optimize(&graph, &frequencies.normalized, &costs.seconds, &opts)?;

    // simulate replay over mined events
    let efficiency = if records.is_empty() {
        None
    } else {
        let matcher = Matcher::new(&doc, &elements, &records, config.tau);
        let events = events_from_records(&doc, &matcher, &records);
        if events.is_empty() {
            None
        } else {
            Some(replay(
                &events,
                &plan.original_order,
                &plan.optimized_order,
                &costs,
            )?)
        }
    };

    // emit
    let emitted_to = if config.dry_run {
        None
    } else {
        let out_path = config.emit_path.clone().unwrap_or_else(|| {
            let mut name = config.dockerfile.as_os_str().to_owned();
            name.push(&config.suffix);
            PathBuf::from(name)
        });
        let text = emit_dockerfile(&doc, &plan);
        std::fs::write(&out_path, text).map_err(CliError::internal)?;
        Some(out_path.display().to_string())
    };

    let report = build_report(config, &doc, &frequencies, &costs, &plan, efficiency, emitted_to);
    if !config.dry_run {
        if let Some(path) = &config.report_path {
            write_json(path, &report)?;
        }
    }

    Ok(RunOutputs {
        doc,
        elements,
        frequencies,
        costs,
        plan,
        report,
        records,
    })
}

fn build_report(
    config: &RunConfig,
    doc: &ParsedDockerfile,
    frequencies: &FrequencyTable,
    costs: &CostTable,
    plan: &OptimizationPlan,
    efficiency: Option<EfficiencyReport>,
    emitted_to: Option<String>,
) -> RunReport {
    let mut to_position = vec![0usize; doc.instructions.len()];
    for (pos, &idx) in plan.optimized_order.iter().enumerate() {
        to_position[idx] = pos;
    }
    let moves = doc
        .instructions
        .iter()
        .map(|i| MoveDetail {
            index: i.index,
            kind: i.kind.keyword().to_string(),
            from_position: i.index,
            to_position: to_position[i.index],
        })
        .collect();
    let improvement = if plan.cost_before > 0.0 {
        (plan.cost_before - plan.cost_after) / plan.cost_before
    } else {
        0.0
    };
    RunReport {
        dockerfile: config.dockerfile.display().to_string(),
        instructions: doc.instructions.len(),
        cost_before: plan.cost_before,
        cost_after: plan.cost_after,
        improvement_ratio: improvement,
        chosen_variant: plan.chosen_variant.clone(),
        order_before: plan.original_order.clone(),
        order_after: plan.optimized_order.clone(),
        frequencies: frequencies.normalized.clone(),
        costs: costs.seconds.clone(),
        moves,
        total_modifications: frequencies.total_modifications,
        efficiency,
        emitted_to,
    }
}

/// Write per-event efficiency rows as CSV.
pub fn write_efficiency_csv(path: &Path, report: &EfficiencyReport) -> Result<(), CliError> {
    let mut out = String::from("event,cost_before,cost_after,efficiency\n");
    for (i, (before, after)) in report.per_event.iter().enumerate() {
        let eff = if *before > 0.0 {
            (before - after) / before
        } else {
            0.0
        };
        out.push_str(&format!("{i},{before},{after},{eff}\n"));
    }
    std::fs::write(path, out).map_err(CliError::internal)
}

/// Write an interval-sweep curve as CSV.
pub fn write_sweep_csv(path: &Path, curve: &[(usize, f64)]) -> Result<(), CliError> {
    let mut out = String::from("interval,efficiency\n");
    for (interval, eff) in curve {
        out.push_str(&format!("{interval},{eff}\n"));
    }
    std::fs::write(path, out).map_err(CliError::internal)
}

/// Default dynamic-env excludes plus user extensions.
pub fn env_excludes(extra: &[String]) -> BTreeSet<String> {
    let mut set = relayer_core::consistency::default_excludes();
    set.extend(extra.iter().cloned());
    set
}

/// Tiny serialize-erasure helper so step artifacts share one code path.
mod erased {
    use super::CliError;

    pub trait SerializeRef {
        fn to_json(&self) -> Result<String, CliError>;
    }

    pub struct Wrapped<'a, T: serde::Serialize>(&'a T);
    pub struct WrappedText(String);

    pub fn wrap<T: serde::Serialize>(value: &T) -> Wrapped<'_, T> {
        Wrapped(value)
    }

    pub fn wrap_text(text: String) -> WrappedText {
        WrappedText(text)
    }

    impl<T: serde::Serialize> SerializeRef for Wrapped<'_, T> {
        fn to_json(&self) -> Result<String, CliError> {
            serde_json::to_string_pretty(self.0).map_err(|e| CliError::Internal(e.to_string()))
        }
    }

    impl SerializeRef for WrappedText {
        fn to_json(&self) -> Result<String, CliError> {
            Ok(self.0.clone())
        }
    }
}
