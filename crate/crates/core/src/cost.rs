//! Per-instruction build-time collection.
//!
//! Costs come either from measured builds through a [`BuilderAdapter`]
//! (cleanup, build, parse the BuildKit log, repeat and average) or from a
//! user-provided JSON table. A scripted [`FakeBuilderAdapter`] lets the
//! whole pipeline run without a container runtime.

use crate::dockerfile::{InstructionKind, ParsedDockerfile};
use regex::Regex;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostSource {
    Measured,
    Loaded,
    Estimated,
}

/// Per-instruction build seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostTable {
    pub seconds: Vec<f64>,
    pub source: CostSource,
    pub repeats: u32,
    /// True when stages were aligned to instructions by position rather
    /// than by builder step labels.
    pub alignment_estimated: bool,
}

impl CostTable {
    pub fn uniform(n: usize) -> Self {
        CostTable {
            seconds: vec![1.0; n],
            source: CostSource::Estimated,
            repeats: 0,
            alignment_estimated: false,
        }
    }

    pub fn len(&self) -> usize {
        self.seconds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.seconds.is_empty()
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CostError {
    #[error("container runtime unavailable: {0}")]
    RuntimeUnavailable(String),
    #[error("cleanup left {0} bytes of build cache")]
    CleanupIncomplete(u64),
    #[error("no `#N DONE Ts` lines found in build log")]
    MalformedLog,
    #[error("build failed: {0}")]
    BuildFailed(String),
    #[error("cost file parse error: {0}")]
    ParseError(String),
    #[error("negative cost at index {0}")]
    NegativeCost(usize),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Capability handle over a container builder.
pub trait BuilderAdapter {
    /// Run a build and return the console log.
    fn build(&mut self, dockerfile: &str, context: &Path) -> Result<String, CostError>;
    /// Remove all images, containers and build cache.
    fn prune_all(&mut self) -> Result<(), CostError>;
    /// Bytes of build cache currently held.
    fn disk_usage(&mut self) -> Result<u64, CostError>;
}

/// Prune everything and verify the cache is actually empty.
pub fn cleanup_environment(adapter: &mut dyn BuilderAdapter) -> Result<(), CostError> {
    adapter.prune_all()?;
    let remaining = adapter.disk_usage()?;
    if remaining > 0 {
        return Err(CostError::CleanupIncomplete(remaining));
    }
    Ok(())
}

/// Parse `#N DONE Ts` stage-completion lines out of a BuildKit log.
/// When a stage number appears more than once (cache probe, then the real
/// execution), the last occurrence wins.
pub fn parse_buildkit_log(log: &str) -> Result<BTreeMap<u32, f64>, CostError> {
    let re = Regex::new(r"(?m)^#(\d+)\s+DONE\s+([0-9]+(?:\.[0-9]+)?)s\s*$").unwrap();
    let mut stages = BTreeMap::new();
    for caps in re.captures_iter(log) {
        let stage: u32 = caps[1].parse().unwrap_or(0);
        let secs: f64 = caps[2].parse().unwrap_or(0.0);
        stages.insert(stage, secs);
    }
    if stages.is_empty() {
        return Err(CostError::MalformedLog);
    }
    Ok(stages)
}

/// Step labels `#N [k/m] ...` / `#N [name k/m] ...` mapping a stage number
/// to a 1-based step within a named build stage.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StepLabel {
    pub stage_name: Option<String>,
    pub step: u32,
    pub total: u32,
}

pub fn parse_step_labels(log: &str) -> BTreeMap<u32, StepLabel> {
    let re =
        Regex::new(r"(?m)^#(\d+)\s+\[(?:([A-Za-z0-9_.-]+)\s+)?(\d+)/(\d+)\]").unwrap();
    let mut labels = BTreeMap::new();
    for caps in re.captures_iter(log) {
        let stage: u32 = caps[1].parse().unwrap_or(0);
        labels.insert(
            stage,
            StepLabel {
                stage_name: caps.get(2).map(|m| m.as_str().to_string()),
                step: caps[3].parse().unwrap_or(0),
                total: caps[4].parse().unwrap_or(0),
            },
        );
    }
    labels
}

/// Map each DONE stage to an instruction index.
///
/// Labeled stages land on `stage_start + step - 1` (BuildKit counts the
/// stage's FROM as step 1). Unlabeled stages are overhead (build definition,
/// context transfer, exporter) and are attributed to the first FROM. When a
/// log carries no labels at all, DONE stages are aligned to instructions
/// monotonically and the result is flagged estimated.
pub fn align_stages(
    doc: &ParsedDockerfile,
    stage_seconds: &BTreeMap<u32, f64>,
    labels: &BTreeMap<u32, StepLabel>,
) -> (Vec<f64>, bool) {
    let n = doc.instructions.len();
    let mut seconds = vec![0.0f64; n];
    let first_from = doc.first_from_index().unwrap_or(0);

    // name/order -> first instruction index of that build stage
    let mut stage_starts: Vec<usize> = Vec::new();
    let mut stage_names: BTreeMap<String, usize> = BTreeMap::new();
    for instr in &doc.instructions {
        if instr.kind == InstructionKind::From {
            let ordinal = stage_starts.len();
            stage_starts.push(instr.index);
            if let Some(alias) = instr.stage_alias() {
                stage_names.insert(alias.to_ascii_lowercase(), ordinal);
            }
            stage_names.insert(format!("stage-{ordinal}"), ordinal);
        }
    }

    if labels.is_empty() {
        // Monotone fallback: earliest stages beyond the instruction count
        // are overhead and accrue to the first FROM.
        let count = stage_seconds.len();
        let extras = count.saturating_sub(n);
        for (rank, (_, secs)) in stage_seconds.iter().enumerate() {
            let idx = if rank < extras {
                first_from
            } else {
                (rank - extras).min(n.saturating_sub(1))
            };
            if n > 0 {
                seconds[idx] += secs;
            }
        }
        return (seconds, true);
    }

    for (stage_num, secs) in stage_seconds {
        let idx = match labels.get(stage_num) {
            Some(label) => {
                let ordinal = label
                    .stage_name
                    .as_deref()
                    .and_then(|name| stage_names.get(&name.to_ascii_lowercase()).copied())
                    .unwrap_or(0);
                let start = stage_starts.get(ordinal).copied().unwrap_or(first_from);
                (start + label.step.saturating_sub(1) as usize).min(n.saturating_sub(1))
            }
            None => first_from,
        };
        if n > 0 {
            seconds[idx] += secs;
        }
    }
    (seconds, false)
}

/// Measure per-instruction build seconds: `repeats` rounds of
/// cleanup + build + log parsing, averaged arithmetically.
pub fn measure_costs(
    doc: &ParsedDockerfile,
    context: &Path,
    adapter: &mut dyn BuilderAdapter,
    repeats: u32,
) -> Result<CostTable, CostError> {
    let repeats = repeats.max(1);
    let n = doc.instructions.len();
    let mut acc = vec![0.0f64; n];
    let mut estimated = false;
    let text = crate::dockerfile::serialize(doc);

    for _ in 0..repeats {
        cleanup_environment(adapter)?;
        let log = adapter.build(&text, context)?;
        let stage_seconds = parse_buildkit_log(&log)?;
        let labels = parse_step_labels(&log);
        let (run_seconds, run_estimated) = align_stages(doc, &stage_seconds, &labels);
        estimated |= run_estimated;
        for (a, s) in acc.iter_mut().zip(run_seconds) {
            *a += s;
        }
    }
    for a in acc.iter_mut() {
        *a /= repeats as f64;
    }
    Ok(CostTable {
        seconds: acc,
        source: CostSource::Measured,
        repeats,
        alignment_estimated: estimated,
    })
}

/// Load a cost table from a JSON map of instruction index to seconds.
/// Missing indices are filled with 1.0 and reported back to the caller.
pub fn load_costs(path: &Path, n: usize) -> Result<(CostTable, Vec<usize>), CostError> {
    let text = std::fs::read_to_string(path)?;
    parse_costs(&text, n)
}

pub fn parse_costs(text: &str, n: usize) -> Result<(CostTable, Vec<usize>), CostError> {
    let map: BTreeMap<String, f64> =
        serde_json::from_str(text).map_err(|e| CostError::ParseError(e.to_string()))?;
    let mut seconds = vec![f64::NAN; n];
    for (key, value) in &map {
        let Ok(index) = key.parse::<usize>() else {
            return Err(CostError::ParseError(format!(
                "cost key `{key}` is not an instruction index"
            )));
        };
        if *value < 0.0 {
            return Err(CostError::NegativeCost(index));
        }
        if index < n {
            seconds[index] = *value;
        }
    }
    let mut missing = Vec::new();
    for (i, s) in seconds.iter_mut().enumerate() {
        if s.is_nan() {
            *s = 1.0;
            missing.push(i);
        }
    }
    Ok((
        CostTable {
            seconds,
            source: CostSource::Loaded,
            repeats: 0,
            alignment_estimated: false,
        },
        missing,
    ))
}

// ---------------------------------------------------------------------------
// Adapters
// ---------------------------------------------------------------------------

/// In-process adapter with scripted logs and cache state.
#[derive(Debug, Default)]
pub struct FakeBuilderAdapter {
    /// Logs returned by successive `build` calls; `Err` scripts a failure.
    pub logs: std::collections::VecDeque<Result<String, String>>,
    pub cache_bytes: u64,
    /// Bytes left behind by every prune (models an incomplete cleanup).
    pub prune_residue: u64,
    pub builds: u32,
    pub prunes: u32,
}

impl FakeBuilderAdapter {
    pub fn with_logs<I: IntoIterator<Item = String>>(logs: I) -> Self {
        FakeBuilderAdapter {
            logs: logs.into_iter().map(Ok).collect(),
            ..Default::default()
        }
    }

    pub fn with_cache(mut self, bytes: u64) -> Self {
        self.cache_bytes = bytes;
        self
    }

    pub fn with_prune_residue(mut self, bytes: u64) -> Self {
        self.prune_residue = bytes;
        self
    }
}

impl BuilderAdapter for FakeBuilderAdapter {
    fn build(&mut self, _dockerfile: &str, _context: &Path) -> Result<String, CostError> {
        self.builds += 1;
        self.cache_bytes += 1024; // a build repopulates the cache
        match self.logs.pop_front() {
            Some(Ok(log)) => Ok(log),
            Some(Err(excerpt)) => Err(CostError::BuildFailed(excerpt)),
            None => Err(CostError::BuildFailed("no scripted log".to_string())),
        }
    }

    fn prune_all(&mut self) -> Result<(), CostError> {
        self.prunes += 1;
        self.cache_bytes = self.prune_residue;
        Ok(())
    }

    fn disk_usage(&mut self) -> Result<u64, CostError> {
        Ok(self.cache_bytes)
    }
}

/// Adapter shelling out to the container CLI (`docker` compatible).
pub struct DockerCliAdapter {
    pub program: String,
}

impl DockerCliAdapter {
    pub fn new(program: impl Into<String>) -> Self {
        DockerCliAdapter {
            program: program.into(),
        }
    }

    fn run(&self, args: &[&str]) -> Result<std::process::Output, CostError> {
        std::process::Command::new(&self.program)
            .args(args)
            .output()
            .map_err(|e| {
                if e.kind() == std::io::ErrorKind::NotFound {
                    CostError::RuntimeUnavailable(self.program.clone())
                } else {
                    CostError::RuntimeUnavailable(e.to_string())
                }
            })
    }
}

impl BuilderAdapter for DockerCliAdapter {
    fn build(&mut self, dockerfile: &str, context: &Path) -> Result<String, CostError> {
        let dir = tempfile_dir()?;
        let df_path = dir.join("Dockerfile");
        std::fs::write(&df_path, dockerfile)?;
        let out = self.run(&[
            "build",
            "--progress=plain",
            "--no-cache=false",
            "-f",
            df_path.to_str().unwrap_or("Dockerfile"),
            context.to_str().unwrap_or("."),
        ])?;
        // BuildKit writes progress to stderr
        let log = format!(
            "{}{}",
            String::from_utf8_lossy(&out.stdout),
            String::from_utf8_lossy(&out.stderr)
        );
        let _ = std::fs::remove_file(&df_path);
        if !out.status.success() {
            let tail: String = log.lines().rev().take(20).collect::<Vec<_>>().join("\n");
            return Err(CostError::BuildFailed(tail));
        }
        Ok(log)
    }

    fn prune_all(&mut self) -> Result<(), CostError> {
        let out = self.run(&["system", "prune", "-a", "-f", "--volumes"])?;
        if !out.status.success() {
            return Err(CostError::RuntimeUnavailable(
                String::from_utf8_lossy(&out.stderr).into_owned(),
            ));
        }
        Ok(())
    }

    fn disk_usage(&mut self) -> Result<u64, CostError> {
        let out = self.run(&["system", "df", "--format", "{{.Type}}\t{{.Size}}"])?;
        if !out.status.success() {
            return Err(CostError::RuntimeUnavailable(
                String::from_utf8_lossy(&out.stderr).into_owned(),
            ));
        }
        let text = String::from_utf8_lossy(&out.stdout);
        for line in text.lines() {
            let mut cols = line.split('\t');
            if cols.next().map(|t| t.trim() == "Build Cache") == Some(true) {
                return Ok(parse_size(cols.next().unwrap_or("0B")));
            }
        }
        Ok(0)
    }
}

fn tempfile_dir() -> Result<PathBuf, CostError> {
    let dir = std::env::temp_dir().join(format!("relayer-build-{}", std::process::id()));
    std::fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn parse_size(text: &str) -> u64 {
    let t = text.trim();
    let split = t
        .find(|c: char| !(c.is_ascii_digit() || c == '.'))
        .unwrap_or(t.len());
    let value: f64 = t[..split].parse().unwrap_or(0.0);
    let unit = t[split..].trim();
    let mult = match unit.to_ascii_uppercase().as_str() {
        "KB" => 1e3,
        "MB" => 1e6,
        "GB" => 1e9,
        "TB" => 1e12,
        _ => 1.0,
    };
    (value * mult) as u64
}
