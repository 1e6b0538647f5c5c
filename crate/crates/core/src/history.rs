//! Repository history mining and modification-frequency estimation.
//!
//! Mining walks the first-parent line of a git repository and produces one
//! record per (commit, instruction) for direct Dockerfile edits, plus
//! implicit `FILE` records for commits touching paths referenced by
//! COPY/ADD sources. Records inside the time window are matched to current
//! instructions through a four-category strategy (strict key matching,
//! path containment, TF-IDF cosine on shell text, type matching) and
//! aggregated into normalized per-instruction frequencies.

use crate::dockerfile::{logical_lines, InstructionKind, ParsedDockerfile};
use crate::semantics::{PathTrie, SemanticElements};
use regex::Regex;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::{Path, PathBuf};
use std::process::Command;

/// Marker used in place of an instruction keyword for implicit records.
pub const FILE_RECORD_KIND: &str = "FILE";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChangeKind {
    Addition,
    Deletion,
    Modification,
}

/// One mined modification record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModificationRecord {
    pub commit_id: String,
    /// Instruction keyword, or `FILE` for implicit context-file records.
    pub instruction_kind: String,
    /// Instruction text for direct records; changed path for implicit ones.
    pub content: String,
    /// Unix timestamp (committer date).
    pub date: i64,
    pub change_kind: ChangeKind,
    pub line_numbers: Vec<usize>,
    /// For implicit records: a current COPY/ADD instruction whose source
    /// pattern contains the changed path.
    pub related_instruction_hint: Option<usize>,
}

impl ModificationRecord {
    pub fn is_implicit(&self) -> bool {
        self.instruction_kind == FILE_RECORD_KIND
    }
}

/// The four matching categories of §instruction classification.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MatchCategory {
    KeyValue,
    FileSystem,
    ShellScript,
    Special,
}

/// Total mapping from instruction kind to its matching category.
pub fn classify(kind: InstructionKind) -> MatchCategory {
    use InstructionKind::*;
    match kind {
        Arg | Env | User | Expose | Label => MatchCategory::KeyValue,
        Copy | Add | Volume | Workdir | Entrypoint => MatchCategory::FileSystem,
        Run | Shell | Cmd => MatchCategory::ShellScript,
        From | Onbuild | Healthcheck | Stopsignal => MatchCategory::Special,
        // deprecated, treated like LABEL
        Maintainer => MatchCategory::KeyValue,
    }
}

/// Per-instruction modification frequencies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencyTable {
    /// Raw F(c): similarity-weighted record mass over total modifications.
    pub raw: Vec<f64>,
    /// Normalized F(c): sums to 1 (uniform when no record matches).
    pub normalized: Vec<f64>,
    pub total_modifications: usize,
    pub window_months: u32,
}

impl FrequencyTable {
    pub fn uniform(n: usize, window_months: u32) -> Self {
        let share = if n == 0 { 0.0 } else { 1.0 / n as f64 };
        FrequencyTable {
            raw: vec![0.0; n],
            normalized: vec![share; n],
            total_modifications: 0,
            window_months,
        }
    }

    pub fn len(&self) -> usize {
        self.normalized.len()
    }

    pub fn is_empty(&self) -> bool {
        self.normalized.is_empty()
    }
}

#[derive(Debug, thiserror::Error)]
pub enum HistoryError {
    #[error("git executable not available: {0}")]
    GitUnavailable(String),
    #[error("not a git repository: {0}")]
    NotARepository(PathBuf),
    #[error("dockerfile not found: {0}")]
    DockerfileNotFound(PathBuf),
    #[error("git command failed: {0}")]
    GitCommand(String),
    #[error(transparent)]
    Parse(#[from] crate::dockerfile::ParseError),
}

/// Options for history collection.
#[derive(Debug, Clone)]
pub struct HistoryOptions {
    pub window_months: u32,
    /// Reference "now" for the window; `None` uses the wall clock.
    pub as_of: Option<i64>,
    /// git program to invoke (overridable for odd installs).
    pub git_program: String,
    /// Mine only commits after this one (exclusive); for incremental runs.
    pub since_commit: Option<String>,
}

impl Default for HistoryOptions {
    fn default() -> Self {
        HistoryOptions {
            window_months: 30,
            as_of: None,
            git_program: "git".to_string(),
            since_commit: None,
        }
    }
}

const EMPTY_TREE: &str = "4b825dc642cb6eb9a060e54bf8d69288fbee4904";

fn git_output(program: &str, repo: &Path, args: &[&str]) -> Result<String, HistoryError> {
    let out = Command::new(program)
        .arg("-C")
        .arg(repo)
        .args(args)
        .output()
        .map_err(|e| {
            if e.kind() == std::io::ErrorKind::NotFound {
                HistoryError::GitUnavailable(program.to_string())
            } else {
                HistoryError::GitCommand(e.to_string())
            }
        })?;
    if !out.status.success() {
        return Err(HistoryError::GitCommand(format!(
            "git {} failed: {}",
            args.first().unwrap_or(&""),
            String::from_utf8_lossy(&out.stderr).trim()
        )));
    }
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

/// `git show` variant that tolerates missing objects (absent paths).
fn git_show_or_empty(program: &str, repo: &Path, spec: &str) -> String {
    Command::new(program)
        .arg("-C")
        .arg(repo)
        .args(["show", spec])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .map(|o| String::from_utf8_lossy(&o.stdout).into_owned())
        .unwrap_or_default()
}

/// Current HEAD commit id.
pub fn head_commit(repo: &Path, git_program: &str) -> Result<String, HistoryError> {
    Ok(git_output(git_program, repo, &["rev-parse", "HEAD"])?
        .trim()
        .to_string())
}

/// Timestamp cutoff for a month window ending at `as_of`.
pub fn window_cutoff(as_of: i64, window_months: u32) -> i64 {
    use chrono::{DateTime, Months, Utc};
    let dt = DateTime::<Utc>::from_timestamp(as_of, 0).unwrap_or_else(Utc::now);
    dt.checked_sub_months(Months::new(window_months))
        .unwrap_or(dt)
        .timestamp()
}

/// Keep only records within the window ending at `as_of`.
pub fn filter_window(
    records: Vec<ModificationRecord>,
    window_months: u32,
    as_of: i64,
) -> Vec<ModificationRecord> {
    let cutoff = window_cutoff(as_of, window_months);
    records.into_iter().filter(|r| r.date >= cutoff).collect()
}

/// Mine the repository for Dockerfile-related modification records.
///
/// Direct records come from diffing the Dockerfile between adjacent
/// first-parent commits; implicit records from commits touching any path
/// matched by the current COPY/ADD source patterns. Records older than the
/// window are dropped.
pub fn collect_history(
    repo: &Path,
    dockerfile: &Path,
    opts: &HistoryOptions,
) -> Result<Vec<ModificationRecord>, HistoryError> {
    let git = opts.git_program.as_str();
    git_output(git, repo, &["rev-parse", "--git-dir"])
        .map_err(|e| match e {
            HistoryError::GitCommand(_) => HistoryError::NotARepository(repo.to_path_buf()),
            other => other,
        })?;

    let dockerfile_rel = relative_to_repo(repo, dockerfile);
    if !repo.join(&dockerfile_rel).is_file() {
        return Err(HistoryError::DockerfileNotFound(repo.join(&dockerfile_rel)));
    }
    let dockerfile_rel_str = dockerfile_rel.to_string_lossy().replace('\\', "/");

    // Address list: COPY/ADD source patterns of the current Dockerfile,
    // made repo-relative (the build context is the Dockerfile's directory).
    let text = std::fs::read_to_string(repo.join(&dockerfile_rel))
        .map_err(|e| HistoryError::GitCommand(e.to_string()))?;
    let doc = crate::dockerfile::parse_dockerfile(&text)?;
    let registry = crate::semantics::CommandKnowledgeRegistry::builtin();
    let elements = crate::semantics::extract_all(&doc, &registry);
    let context_prefix = dockerfile_rel
        .parent()
        .map(|p| p.to_string_lossy().replace('\\', "/"))
        .unwrap_or_default();
    let mut copy_sources: Vec<(usize, PathTrie)> = Vec::new();
    for (i, el) in elements.iter().enumerate() {
        if el.context_paths.is_empty() {
            continue;
        }
        let trie = PathTrie::from_paths(el.context_paths.iter().map(|p| {
            if context_prefix.is_empty() {
                p.clone()
            } else {
                format!("{context_prefix}/{p}")
            }
        }));
        copy_sources.push((i, trie));
    }

    let range = opts
        .since_commit
        .as_ref()
        .map(|c| format!("{c}..HEAD"))
        .unwrap_or_default();

    let mut records = Vec::new();
    collect_direct(
        git,
        repo,
        &dockerfile_rel_str,
        &range,
        &mut records,
    )?;
    collect_implicit(
        git,
        repo,
        &dockerfile_rel_str,
        &range,
        &copy_sources,
        &mut records,
    )?;

    let as_of = opts.as_of.unwrap_or_else(|| chrono::Utc::now().timestamp());
    let mut records = filter_window(records, opts.window_months, as_of);
    records.sort_by(|a, b| b.date.cmp(&a.date).then(a.commit_id.cmp(&b.commit_id)));
    Ok(records)
}

fn relative_to_repo(repo: &Path, dockerfile: &Path) -> PathBuf {
    dockerfile
        .strip_prefix(repo)
        .map(Path::to_path_buf)
        .unwrap_or_else(|_| dockerfile.to_path_buf())
}

fn collect_direct(
    git: &str,
    repo: &Path,
    dockerfile_rel: &str,
    range: &str,
    records: &mut Vec<ModificationRecord>,
) -> Result<(), HistoryError> {
    let mut args = vec!["log", "--first-parent", "--format=%H %ct %P"];
    if !range.is_empty() {
        args.push(range);
    }
    args.extend(["--", dockerfile_rel]);
    let log = git_output(git, repo, &args)?;

    let hunk_re = Regex::new(r"(?m)^@@ -(\d+)(?:,(\d+))? \+(\d+)(?:,(\d+))? @@").unwrap();

    for line in log.lines() {
        let mut parts = line.split_whitespace();
        let (Some(commit), Some(ts)) = (parts.next(), parts.next()) else {
            continue;
        };
        let date: i64 = ts.parse().unwrap_or(0);
        let first_parent = parts.next().unwrap_or(EMPTY_TREE);

        let diff = git_output(
            git,
            repo,
            &[
                "diff",
                "-U0",
                "--no-color",
                first_parent,
                commit,
                "--",
                dockerfile_rel,
            ],
        )?;
        if diff.is_empty() {
            continue;
        }

        let old_text = git_show_or_empty(git, repo, &format!("{first_parent}:{dockerfile_rel}"));
        let new_text = git_show_or_empty(git, repo, &format!("{commit}:{dockerfile_rel}"));
        let old_lines = logical_lines(&old_text).lines;
        let new_lines = logical_lines(&new_text).lines;

        // (kind, content) -> (change_kind, line numbers); dedup per commit
        let mut touched: BTreeMap<(String, String), (ChangeKind, BTreeSet<usize>)> =
            BTreeMap::new();
        for caps in hunk_re.captures_iter(&diff) {
            let old_start: usize = caps[1].parse().unwrap_or(0);
            let old_count: usize = caps.get(2).map_or(1, |m| m.as_str().parse().unwrap_or(1));
            let new_start: usize = caps[3].parse().unwrap_or(0);
            let new_count: usize = caps.get(4).map_or(1, |m| m.as_str().parse().unwrap_or(1));

            let change = match (old_count, new_count) {
                (0, _) => ChangeKind::Addition,
                (_, 0) => ChangeKind::Deletion,
                _ => ChangeKind::Modification,
            };
            let (lines, start, count) = if change == ChangeKind::Deletion {
                (&old_lines, old_start, old_count)
            } else {
                (&new_lines, new_start, new_count)
            };
            let range_end = start + count.max(1) - 1;
            for ll in lines.iter() {
                if ll.start_line <= range_end && ll.end_line >= start {
                    let entry = touched
                        .entry((ll.keyword().to_ascii_uppercase(), ll.folded.clone()))
                        .or_insert((change, BTreeSet::new()));
                    // modification outranks pure addition/deletion labels
                    if entry.0 != change {
                        entry.0 = ChangeKind::Modification;
                    }
                    entry
                        .1
                        .extend(ll.start_line.max(start)..=ll.end_line.min(range_end));
                }
            }
        }
        for ((kind, content), (change, lines)) in touched {
            if kind.is_empty() {
                continue;
            }
            records.push(ModificationRecord {
                commit_id: commit.to_string(),
                instruction_kind: kind,
                content,
                date,
                change_kind: change,
                line_numbers: lines.into_iter().collect(),
                related_instruction_hint: None,
            });
        }
    }
    Ok(())
}

fn collect_implicit(
    git: &str,
    repo: &Path,
    dockerfile_rel: &str,
    range: &str,
    copy_sources: &[(usize, PathTrie)],
    records: &mut Vec<ModificationRecord>,
) -> Result<(), HistoryError> {
    if copy_sources.is_empty() {
        return Ok(());
    }
    let mut args = vec![
        "log",
        "--first-parent",
        "--format=%x01%H %ct",
        "--name-status",
    ];
    if !range.is_empty() {
        args.push(range);
    }
    let log = git_output(git, repo, &args)?;

    for block in log.split('\u{1}').filter(|b| !b.trim().is_empty()) {
        let mut lines = block.lines();
        let Some(header) = lines.next() else { continue };
        let mut head_parts = header.split_whitespace();
        let (Some(commit), Some(ts)) = (head_parts.next(), head_parts.next()) else {
            continue;
        };
        let date: i64 = ts.parse().unwrap_or(0);

        let mut seen_paths = BTreeSet::new();
        for line in lines {
            let mut cols = line.split('\t');
            let Some(status) = cols.next() else { continue };
            let status = status.trim();
            if status.is_empty() {
                continue;
            }
            let change = match status.chars().next().unwrap_or('M') {
                'A' | 'C' => ChangeKind::Addition,
                'D' => ChangeKind::Deletion,
                _ => ChangeKind::Modification,
            };
            // renames/copies list two paths; both sides can invalidate
            for path in cols {
                let path = path.trim();
                if path.is_empty() || path == dockerfile_rel || !seen_paths.insert(path.to_string())
                {
                    continue;
                }
                let hint = copy_sources
                    .iter()
                    .find(|(_, trie)| trie.contains(path))
                    .map(|(i, _)| *i);
                if hint.is_some() {
                    records.push(ModificationRecord {
                        commit_id: commit.to_string(),
                        instruction_kind: FILE_RECORD_KIND.to_string(),
                        content: path.to_string(),
                        date,
                        change_kind: change,
                        line_numbers: Vec::new(),
                        related_instruction_hint: hint,
                    });
                }
            }
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Matching
// ---------------------------------------------------------------------------

fn tokenize(text: &str) -> Vec<String> {
    text.to_ascii_lowercase()
        .split(|c: char| {
            c.is_whitespace() || matches!(c, '|' | '&' | ';' | '<' | '>' | '(' | ')' | '`' | '$' | '"' | '\'')
        })
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

/// TF-IDF model over a token corpus.
#[derive(Debug, Clone, Default)]
pub struct TfIdf {
    df: HashMap<String, usize>,
    n_docs: usize,
}

impl TfIdf {
    pub fn fit<S: AsRef<str>>(docs: &[S]) -> Self {
        let mut df: HashMap<String, usize> = HashMap::new();
        for doc in docs {
            let uniq: BTreeSet<String> = tokenize(doc.as_ref()).into_iter().collect();
            for t in uniq {
                *df.entry(t).or_default() += 1;
            }
        }
        TfIdf {
            df,
            n_docs: docs.len(),
        }
    }

    pub fn vector(&self, text: &str) -> HashMap<String, f64> {
        let mut tf: HashMap<String, f64> = HashMap::new();
        for t in tokenize(text) {
            *tf.entry(t).or_default() += 1.0;
        }
        for (term, w) in tf.iter_mut() {
            let df = self.df.get(term).copied().unwrap_or(0) as f64;
            let idf = ((1.0 + self.n_docs as f64) / (1.0 + df)).ln() + 1.0;
            *w *= idf;
        }
        tf
    }

    pub fn cosine(a: &HashMap<String, f64>, b: &HashMap<String, f64>) -> f64 {
        let mut dot = 0.0;
        let mut norm_a = 0.0;
        for (term, w) in a {
            norm_a += w * w;
            if let Some(wb) = b.get(term) {
                dot += w * wb;
            }
        }
        let norm_b: f64 = b.values().map(|w| w * w).sum();
        if norm_a == 0.0 || norm_b == 0.0 {
            return 0.0;
        }
        (dot / (norm_a.sqrt() * norm_b.sqrt())).clamp(0.0, 1.0)
    }
}

fn args_text(content: &str) -> &str {
    let trimmed = content.trim_start();
    match trimmed.find(char::is_whitespace) {
        Some(pos) => trimmed[pos..].trim(),
        None => "",
    }
}

/// Match keys for KeyValue-category content (`ENV K=V ...` -> `{K}`).
fn match_keys(kind: InstructionKind, content_args: &str) -> BTreeSet<String> {
    use InstructionKind::*;
    match kind {
        Arg | Env | Label => {
            let mut keys = BTreeSet::new();
            let first = content_args.split_whitespace().next().unwrap_or("");
            if !first.contains('=') && matches!(kind, Env | Label) {
                // legacy single-pair form
                if !first.is_empty() {
                    keys.insert(first.to_string());
                }
            } else {
                for token in content_args.split_whitespace() {
                    let key = token.split('=').next().unwrap_or("");
                    if !key.is_empty() {
                        keys.insert(key.trim_matches(['"', '\'']).to_string());
                    }
                }
            }
            keys
        }
        Expose => content_args
            .split_whitespace()
            .map(str::to_string)
            .collect(),
        // USER and anything else: the whole argument is the key
        _ => {
            let t = content_args.trim();
            if t.is_empty() {
                BTreeSet::new()
            } else {
                BTreeSet::from([t.to_string()])
            }
        }
    }
}

/// Paths used for FileSystem-category matching.
fn match_paths(kind: InstructionKind, content_args: &str) -> Vec<String> {
    use InstructionKind::*;
    let tokens: Vec<&str> = content_args.split_whitespace().collect();
    match kind {
        Copy | Add => {
            // flags, then sources..., destination: match on the sources
            let paths: Vec<&str> = tokens
                .iter()
                .copied()
                .filter(|t| !t.starts_with("--"))
                .collect();
            if paths.len() > 1 {
                paths[..paths.len() - 1]
                    .iter()
                    .map(|s| s.trim_start_matches("./").to_string())
                    .collect()
            } else {
                paths.iter().map(|s| s.to_string()).collect()
            }
        }
        Volume => {
            if content_args.trim_start().starts_with('[') {
                serde_json::from_str::<Vec<String>>(content_args.trim()).unwrap_or_default()
            } else {
                tokens.iter().map(|s| s.to_string()).collect()
            }
        }
        Workdir => tokens.iter().map(|s| s.to_string()).collect(),
        Entrypoint => {
            if content_args.trim_start().starts_with('[') {
                serde_json::from_str::<Vec<String>>(content_args.trim())
                    .ok()
                    .and_then(|v| v.first().cloned())
                    .into_iter()
                    .collect()
            } else {
                tokens.first().map(|s| s.to_string()).into_iter().collect()
            }
        }
        _ => Vec::new(),
    }
}

/// Precomputed matching context for one Dockerfile against a record set.
pub struct Matcher {
    kinds: Vec<InstructionKind>,
    categories: Vec<MatchCategory>,
    keys: Vec<BTreeSet<String>>,
    /// FileSystem matching tries (source side for COPY/ADD).
    fs_tries: Vec<PathTrie>,
    /// COPY/ADD context-source tries for implicit records.
    context_tries: Vec<Option<PathTrie>>,
    shell_args: Vec<String>,
    tfidf: TfIdf,
    tau: f64,
}

impl Matcher {
    pub fn new(
        doc: &ParsedDockerfile,
        elements: &[SemanticElements],
        records: &[ModificationRecord],
        tau: f64,
    ) -> Self {
        let n = doc.instructions.len();
        let mut kinds = Vec::with_capacity(n);
        let mut categories = Vec::with_capacity(n);
        let mut keys = Vec::with_capacity(n);
        let mut fs_tries = Vec::with_capacity(n);
        let mut context_tries = Vec::with_capacity(n);
        let mut shell_args = Vec::with_capacity(n);
        let mut corpus: Vec<String> = Vec::new();

        for (i, instr) in doc.instructions.iter().enumerate() {
            let args = instruction_args_text(instr);
            kinds.push(instr.kind);
            let cat = classify(instr.kind);
            categories.push(cat);
            keys.push(match_keys(instr.kind, &args));
            fs_tries.push(PathTrie::from_paths(match_paths(instr.kind, &args)));
            context_tries.push(if elements[i].context_paths.is_empty() {
                None
            } else {
                Some(PathTrie::from_paths(elements[i].context_paths.iter()))
            });
            if cat == MatchCategory::ShellScript {
                corpus.push(args.clone());
            }
            shell_args.push(args);
        }
        for r in records {
            if !r.is_implicit() {
                if let Some(kind) = InstructionKind::from_keyword(&r.instruction_kind) {
                    if classify(kind) == MatchCategory::ShellScript {
                        corpus.push(args_text(&r.content).to_string());
                    }
                }
            }
        }

        Matcher {
            kinds,
            categories,
            keys,
            fs_tries,
            context_tries,
            shell_args,
            tfidf: TfIdf::fit(&corpus),
            tau,
        }
    }

    /// Similarity between current instruction `index` and a record,
    /// in `[0, 1]`. Strict categories return exactly 0 or 1.
    pub fn similarity(&self, index: usize, record: &ModificationRecord) -> f64 {
        if record.is_implicit() {
            // Implicit file records match COPY/ADD whose source pattern
            // contains the changed path.
            return match &self.context_tries[index] {
                Some(trie) if trie.contains(&record.content) => 1.0,
                _ => 0.0,
            };
        }
        let Some(record_kind) = InstructionKind::from_keyword(&record.instruction_kind) else {
            return 0.0;
        };
        if record_kind != self.kinds[index] {
            return 0.0;
        }
        match self.categories[index] {
            MatchCategory::KeyValue => {
                let record_keys = match_keys(record_kind, args_text(&record.content));
                if self.keys[index].intersection(&record_keys).next().is_some() {
                    1.0
                } else {
                    0.0
                }
            }
            MatchCategory::FileSystem => {
                let record_paths = match_paths(record_kind, args_text(&record.content));
                let contained = record_paths
                    .iter()
                    .any(|p| self.fs_tries[index].contains(p));
                if contained {
                    1.0
                } else {
                    0.0
                }
            }
            MatchCategory::Special => 1.0,
            MatchCategory::ShellScript => {
                let a = self.tfidf.vector(&self.shell_args[index]);
                let b = self.tfidf.vector(args_text(&record.content));
                let sim = TfIdf::cosine(&a, &b);
                if sim < self.tau {
                    0.0
                } else {
                    sim
                }
            }
        }
    }
}

/// Argument text of an instruction as a single string.
fn instruction_args_text(instr: &crate::dockerfile::Instruction) -> String {
    use crate::dockerfile::ArgumentPayload::*;
    let mut flags = instr
        .flags
        .iter()
        .map(|f| match &f.value {
            Some(v) => format!("--{}={}", f.name, v),
            None => format!("--{}", f.name),
        })
        .collect::<Vec<_>>()
        .join(" ");
    if !flags.is_empty() {
        flags.push(' ');
    }
    let args = match &instr.arguments {
        KeyValuePairs(pairs) => pairs
            .iter()
            .map(|kv| match &kv.value {
                Some(v) => format!("{}={}", kv.key, v),
                None => kv.key.clone(),
            })
            .collect::<Vec<_>>()
            .join(" "),
        ShellText(t) => t.clone(),
        ExecArray(items) => serde_json::to_string(items).unwrap_or_default(),
        PathArgs {
            sources,
            destination,
        } => {
            let mut v = sources.clone();
            v.push(destination.clone());
            v.join(" ")
        }
        SingleValue(v) => v.clone(),
    };
    format!("{flags}{args}")
}

/// Aggregate record similarities into per-instruction frequencies.
///
/// `F(c) = sum_r Sim(c, r) / total_modifications`, then normalized across
/// the file. With no records (or no matching mass) the normalized table is
/// uniform so downstream weighting stays well-defined.
pub fn compute_frequencies(
    matcher: &Matcher,
    records: &[ModificationRecord],
    window_months: u32,
) -> FrequencyTable {
    let n = matcher.kinds.len();
    if n == 0 {
        return FrequencyTable::uniform(0, window_months);
    }
    let total = records.len();
    if total == 0 {
        return FrequencyTable::uniform(n, window_months);
    }
    let mut raw = vec![0.0f64; n];
    for record in records {
        for (i, r) in raw.iter_mut().enumerate() {
            *r += matcher.similarity(i, record);
        }
    }
    for r in raw.iter_mut() {
        *r /= total as f64;
    }
    let sum: f64 = raw.iter().sum();
    let normalized = if sum > 0.0 {
        raw.iter().map(|f| f / sum).collect()
    } else {
        vec![1.0 / n as f64; n]
    };
    FrequencyTable {
        raw,
        normalized,
        total_modifications: total,
        window_months,
    }
}
