//! Semantic element extraction.
//!
//! For each instruction, five element categories are derived: variables
//! (defined / used), related paths (input / output, plus build-context
//! sources), the executing user, packages (installed / used), and layer
//! context (workdir, shell, env, user). Extraction folds an environment
//! state through the instruction sequence so that variable references and
//! relative paths resolve the way the builder would resolve them.

mod registry;
mod trie;

pub use registry::{CommandEffects, CommandKnowledgeRegistry, EffectTemplate, RegistryError};
pub use trie::{path_sets_overlap, PathTrie};

use crate::dockerfile::{
    parse_shell, ArgumentPayload, Instruction, InstructionKind, ParsedDockerfile,
};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};

/// Build state accumulated over an instruction prefix.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnvState {
    /// ARG/ENV variables visible at this point, in resolved form.
    pub variables: BTreeMap<String, String>,
    /// Current working directory; always absolute.
    pub workdir: String,
    /// Executing user.
    pub user: String,
    /// Active shell vector.
    pub shell: Vec<String>,
    pub stage_index: usize,
    /// ARG defaults declared before the first FROM; visible to FROM lines
    /// and re-importable by a bare in-stage `ARG NAME`.
    global_args: BTreeMap<String, String>,
}

impl Default for EnvState {
    fn default() -> Self {
        EnvState {
            variables: BTreeMap::new(),
            workdir: "/".to_string(),
            user: "root".to_string(),
            shell: vec!["/bin/sh".to_string(), "-c".to_string()],
            stage_index: 0,
            global_args: BTreeMap::new(),
        }
    }
}

/// Layer-context keys an instruction may read or write.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(rename_all = "snake_case")]
pub enum ContextKey {
    Workdir,
    Shell,
    Env,
    User,
}

/// Special-handling markers.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MiscFlags {
    /// Shell body outside the supported subset; handled conservatively.
    pub opaque: bool,
    /// HEALTHCHECK/ONBUILD/STOPSIGNAL keep their relative position.
    pub pinned: bool,
    /// This is a FROM instruction.
    pub from: bool,
    /// `COPY --from=<ref>` source stage reference.
    pub copy_from: Option<String>,
    /// ADD sources that are remote URLs (ignored by history mining).
    pub remote_sources: BTreeSet<String>,
}

/// The per-instruction semantic element sets.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SemanticElements {
    pub vars_defined: BTreeSet<String>,
    pub vars_used: BTreeSet<String>,
    /// Absolute in-image paths read.
    pub paths_in: BTreeSet<String>,
    /// Absolute in-image paths written.
    pub paths_out: BTreeSet<String>,
    /// Build-context-relative source patterns (COPY/ADD).
    pub context_paths: BTreeSet<String>,
    /// User executing this instruction.
    pub user_read: String,
    /// User set by this instruction (USER, or useradd-style creation).
    pub user_written: Option<String>,
    /// Packages installed, lowercase-normalized.
    pub pkgs_installed: BTreeSet<String>,
    /// Programs/packages invoked, lowercase-normalized.
    pub pkgs_used: BTreeSet<String>,
    pub context_writes: BTreeSet<ContextKey>,
    pub context_reads: BTreeSet<ContextKey>,
    pub misc: MiscFlags,
}

/// Result of variable substitution.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Resolved {
    pub text: String,
    /// Every variable name referenced.
    pub used: BTreeSet<String>,
    /// Referenced names with no definition; left verbatim in the text.
    pub unresolved: BTreeSet<String>,
}

const MAX_SUBSTITUTION_PASSES: usize = 8;

/// Substitute `$NAME` / `${NAME}` references from `vars`, to a fixpoint
/// bounded at eight passes. Undefined references stay verbatim and are
/// reported; cycles hit the pass bound and stay verbatim too.
pub fn resolve_with_map(text: &str, vars: &BTreeMap<String, String>) -> Resolved {
    let mut used = BTreeSet::new();
    let mut unresolved = BTreeSet::new();
    let mut current = text.to_string();
    for _ in 0..MAX_SUBSTITUTION_PASSES {
        unresolved.clear();
        let (next, changed) = substitute_once(&current, vars, &mut used, &mut unresolved);
        current = next;
        if !changed {
            break;
        }
    }
    Resolved {
        text: current,
        used,
        unresolved,
    }
}

fn substitute_once(
    text: &str,
    vars: &BTreeMap<String, String>,
    used: &mut BTreeSet<String>,
    unresolved: &mut BTreeSet<String>,
) -> (String, bool) {
    let bytes = text.as_bytes();
    let mut out = String::with_capacity(text.len());
    let mut changed = false;
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        if c == '\\' && i + 1 < bytes.len() && bytes[i + 1] == b'$' {
            out.push('\\');
            out.push('$');
            i += 2;
            continue;
        }
        if c != '$' || i + 1 >= bytes.len() {
            out.push(c);
            i += 1;
            continue;
        }
        // ${NAME...} or $NAME
        if bytes[i + 1] == b'{' {
            let close = text[i..].find('}').map(|p| i + p);
            let Some(close) = close else {
                out.push(c);
                i += 1;
                continue;
            };
            let inner = &text[i + 2..close];
            let name_end = inner
                .find(|ch: char| !(ch.is_ascii_alphanumeric() || ch == '_'))
                .unwrap_or(inner.len());
            let name = &inner[..name_end];
            if name.is_empty() {
                out.push_str(&text[i..=close]);
                i = close + 1;
                continue;
            }
            used.insert(name.to_string());
            match vars.get(name) {
                Some(value) => {
                    out.push_str(value);
                    changed = true;
                }
                None => {
                    unresolved.insert(name.to_string());
                    out.push_str(&text[i..=close]);
                }
            }
            i = close + 1;
        } else {
            let rest = &text[i + 1..];
            let name_end = rest
                .find(|ch: char| !(ch.is_ascii_alphanumeric() || ch == '_'))
                .unwrap_or(rest.len());
            let name = &rest[..name_end];
            if name.is_empty() || name.chars().next().unwrap().is_ascii_digit() {
                out.push(c);
                i += 1;
                continue;
            }
            used.insert(name.to_string());
            match vars.get(name) {
                Some(value) => {
                    out.push_str(value);
                    changed = true;
                }
                None => {
                    unresolved.insert(name.to_string());
                    out.push('$');
                    out.push_str(name);
                }
            }
            i += 1 + name_end;
        }
    }
    (out, changed)
}

/// Substitute variable references from the folded environment state.
pub fn resolve_variables(text: &str, state: &EnvState) -> Resolved {
    resolve_with_map(text, &state.variables)
}

/// Join a path pattern to the working directory and normalize `.`/`..`.
/// Absolute patterns pass through (normalized); a trailing `/` is kept to
/// mark directories.
pub fn expand_path(pattern: &str, state: &EnvState) -> String {
    expand_against(pattern, &state.workdir)
}

fn expand_against(pattern: &str, cwd: &str) -> String {
    let joined = if pattern.starts_with('/') {
        pattern.to_string()
    } else {
        format!("{}/{}", cwd.trim_end_matches('/'), pattern)
    };
    let had_trailing = joined.len() > 1 && joined.ends_with('/');
    let mut parts: Vec<&str> = Vec::new();
    for comp in joined.split('/') {
        match comp {
            "" | "." => {}
            ".." => {
                parts.pop();
            }
            c => parts.push(c),
        }
    }
    let mut out = String::from("/");
    out.push_str(&parts.join("/"));
    if had_trailing && out.len() > 1 {
        out.push('/');
    }
    out
}

/// Apply one instruction's effects to the build state.
///
/// WORKDIR/USER/ENV/ARG/SHELL evolve the state; FROM resets it to a fresh
/// stage (global ARG defaults stay importable). Everything else leaves the
/// state unchanged.
pub fn fold_state(state: &EnvState, instr: &Instruction) -> EnvState {
    let mut next = state.clone();
    match instr.kind {
        InstructionKind::From => {
            next.variables.clear();
            next.workdir = "/".to_string();
            next.user = "root".to_string();
            next.shell = vec!["/bin/sh".to_string(), "-c".to_string()];
            next.stage_index = instr.stage_index;
        }
        InstructionKind::Arg => {
            if let ArgumentPayload::KeyValuePairs(pairs) = &instr.arguments {
                for kv in pairs {
                    match &kv.value {
                        Some(v) => {
                            let resolved = resolve_variables(v, &next).text;
                            if instr.preamble {
                                next.global_args.insert(kv.key.clone(), resolved.clone());
                            }
                            next.variables.insert(kv.key.clone(), resolved);
                        }
                        None => {
                            // A bare in-stage ARG re-imports the global default.
                            if let Some(v) = next.global_args.get(&kv.key).cloned() {
                                next.variables.insert(kv.key.clone(), v);
                            }
                        }
                    }
                }
            }
        }
        InstructionKind::Env => {
            if let ArgumentPayload::KeyValuePairs(pairs) = &instr.arguments {
                for kv in pairs {
                    let value = kv.value.clone().unwrap_or_default();
                    let resolved = resolve_variables(&value, &next).text;
                    next.variables.insert(kv.key.clone(), resolved);
                }
            }
        }
        InstructionKind::Workdir => {
            if let ArgumentPayload::SingleValue(path) = &instr.arguments {
                let resolved = resolve_variables(path, &next).text;
                next.workdir = expand_path(&resolved, &next);
            }
        }
        InstructionKind::User => {
            if let ArgumentPayload::SingleValue(user) = &instr.arguments {
                next.user = resolve_variables(user, &next).text;
            }
        }
        InstructionKind::Shell => {
            if let ArgumentPayload::ExecArray(items) = &instr.arguments {
                next.shell = items.clone();
            }
        }
        _ => {}
    }
    next
}

fn normalize_pkg(token: &str) -> Option<String> {
    let t = token.trim().trim_matches(',');
    if t.is_empty() || t.starts_with('-') {
        return None;
    }
    let cut = t
        .find(['=', '<', '>', '~'])
        .or_else(|| t.find('@').filter(|&p| p > 0))
        .unwrap_or(t.len());
    let name = &t[..cut];
    if name.is_empty() {
        return None;
    }
    Some(name.to_ascii_lowercase())
}

fn is_remote(source: &str) -> bool {
    source.starts_with("http://")
        || source.starts_with("https://")
        || source.starts_with("ftp://")
        || source.starts_with("git@")
}

fn scan_variable_uses(text: &str, state: &EnvState, elements: &mut SemanticElements) {
    let resolved = resolve_variables(text, state);
    elements.vars_used.extend(resolved.used);
}

/// Extract the semantic elements of one instruction given the folded state
/// of everything before it.
pub fn extract_elements(
    instr: &Instruction,
    state: &EnvState,
    registry: &CommandKnowledgeRegistry,
) -> SemanticElements {
    let mut el = SemanticElements {
        user_read: state.user.clone(),
        ..SemanticElements::default()
    };

    match instr.kind {
        InstructionKind::From => {
            el.misc.from = true;
            if let ArgumentPayload::SingleValue(v) = &instr.arguments {
                // FROM resolves against global ARGs.
                let resolved = resolve_with_map(v, &state.global_args);
                el.vars_used.extend(resolved.used);
            }
        }
        InstructionKind::Arg | InstructionKind::Env => {
            if let ArgumentPayload::KeyValuePairs(pairs) = &instr.arguments {
                for kv in pairs {
                    el.vars_defined.insert(kv.key.clone());
                    match &kv.value {
                        Some(v) => scan_variable_uses(v, state, &mut el),
                        None if !instr.preamble => {
                            // bare in-stage ARG imports the global default
                            el.vars_used.insert(kv.key.clone());
                        }
                        None => {}
                    }
                }
            }
            if instr.kind == InstructionKind::Env {
                el.context_writes.insert(ContextKey::Env);
            }
        }
        InstructionKind::Copy | InstructionKind::Add => {
            extract_copy_add(instr, state, &mut el);
        }
        InstructionKind::Workdir => {
            el.context_writes.insert(ContextKey::Workdir);
            el.context_reads.insert(ContextKey::Workdir);
            if let ArgumentPayload::SingleValue(v) = &instr.arguments {
                scan_variable_uses(v, state, &mut el);
            }
        }
        InstructionKind::User => {
            if let ArgumentPayload::SingleValue(v) = &instr.arguments {
                let resolved = resolve_variables(v, state);
                el.vars_used.extend(resolved.used.clone());
                el.user_written = Some(resolved.text);
            }
        }
        InstructionKind::Volume => {
            let paths: Vec<String> = match &instr.arguments {
                ArgumentPayload::ExecArray(items) => items.clone(),
                ArgumentPayload::SingleValue(v) => {
                    v.split_whitespace().map(str::to_string).collect()
                }
                _ => Vec::new(),
            };
            for p in paths {
                let resolved = resolve_variables(&p, state);
                el.vars_used.extend(resolved.used.clone());
                el.paths_in.insert(expand_path(&resolved.text, state));
            }
        }
        InstructionKind::Run => {
            extract_run(instr, state, registry, &mut el);
        }
        InstructionKind::Cmd | InstructionKind::Entrypoint => {
            // Runtime commands: variables and context only (no package or
            // file effects are attributed to them).
            el.context_reads.insert(ContextKey::Workdir);
            match &instr.arguments {
                ArgumentPayload::ShellText(t) => {
                    el.context_reads.insert(ContextKey::Shell);
                    scan_variable_uses(t, state, &mut el);
                }
                ArgumentPayload::ExecArray(items) => {
                    for item in items {
                        scan_variable_uses(item, state, &mut el);
                    }
                }
                _ => {}
            }
        }
        InstructionKind::Shell => {
            el.context_writes.insert(ContextKey::Shell);
        }
        InstructionKind::Expose => {
            // Ports only; opens no dependency on other instructions.
        }
        InstructionKind::Healthcheck | InstructionKind::Onbuild | InstructionKind::Stopsignal => {
            el.misc.pinned = true;
        }
        InstructionKind::Label | InstructionKind::Maintainer => {}
    }
    el
}

fn extract_copy_add(instr: &Instruction, state: &EnvState, el: &mut SemanticElements) {
    el.misc.copy_from = instr.flag("from").map(str::to_string);
    let ArgumentPayload::PathArgs {
        sources,
        destination,
    } = &instr.arguments
    else {
        return;
    };

    let mut resolved_sources = Vec::new();
    for src in sources {
        let resolved = resolve_variables(src, state);
        el.vars_used.extend(resolved.used.clone());
        if is_remote(&resolved.text) {
            el.misc.remote_sources.insert(resolved.text.clone());
        } else if el.misc.copy_from.is_none() {
            let cleaned = resolved.text.trim_start_matches("./").to_string();
            el.context_paths.insert(cleaned);
        }
        resolved_sources.push(resolved.text);
    }

    let dest = resolve_variables(destination, state);
    el.vars_used.extend(dest.used.clone());
    if !dest.text.starts_with('/') {
        el.context_reads.insert(ContextKey::Workdir);
    }
    let dest_exp = expand_path(&dest.text, state);

    // A destination that is a directory (trailing slash, `.`, or multiple
    // sources) receives each file at dest/<basename>; a whole-directory
    // source lands its contents in the destination directory itself.
    let dir_dest = dest.text.ends_with('/')
        || dest.text == "."
        || dest.text == ".."
        || dest.text.ends_with("/.")
        || resolved_sources.len() > 1;
    if resolved_sources.is_empty() {
        el.paths_out.insert(dest_exp);
        return;
    }
    for src in &resolved_sources {
        let dir_contents = src == "." || src.ends_with('/');
        if dir_dest {
            if dir_contents {
                el.paths_out.insert(dest_exp.clone());
            } else {
                let base = src.trim_end_matches('/').rsplit('/').next().unwrap_or(src);
                el.paths_out
                    .insert(expand_path(&format!("{}/{}", dest_exp, base), state));
            }
        } else {
            el.paths_out.insert(dest_exp.clone());
        }
    }
}

fn extract_run(
    instr: &Instruction,
    state: &EnvState,
    registry: &CommandKnowledgeRegistry,
    el: &mut SemanticElements,
) {
    el.context_reads.insert(ContextKey::Workdir);

    let commands = match &instr.arguments {
        ArgumentPayload::ShellText(body) => {
            el.context_reads.insert(ContextKey::Shell);
            if instr.heredoc {
                el.misc.opaque = true;
                scan_variable_uses(body, state, el);
                return;
            }
            match parse_shell(body) {
                Ok(cmds) => cmds,
                Err(_) => {
                    el.misc.opaque = true;
                    scan_variable_uses(body, state, el);
                    return;
                }
            }
        }
        ArgumentPayload::ExecArray(items) => {
            // Exec form runs no shell: one command, tokens as-is.
            let Some((program, rest)) = items.split_first() else {
                return;
            };
            vec![crate::dockerfile::SimpleCommand {
                program: program.clone(),
                flags: rest
                    .iter()
                    .filter(|t| t.starts_with('-') && t.len() > 1)
                    .cloned()
                    .collect(),
                positional_args: rest
                    .iter()
                    .filter(|t| !(t.starts_with('-') && t.len() > 1))
                    .cloned()
                    .collect(),
                connector_to_next: crate::dockerfile::Connector::None,
                redirections: Vec::new(),
                env_assignments: Vec::new(),
                argv: rest.to_vec(),
            }]
        }
        _ => return,
    };

    // Variables exported earlier in this same instruction overlay the
    // persistent state for resolution within it; `cd` moves the local cwd.
    let mut local_vars = state.variables.clone();
    let mut local_cwd = state.workdir.clone();

    for cmd in &commands {
        let resolve = |token: &str,
                       vars: &BTreeMap<String, String>,
                       el: &mut SemanticElements|
         -> String {
            let r = resolve_with_map(token, vars);
            el.vars_used.extend(r.used.clone());
            crate::dockerfile::shell::unquote(&r.text)
        };

        for assignment in &cmd.env_assignments {
            let resolved = resolve(assignment, &local_vars, el);
            if let Some(eq) = resolved.find('=') {
                local_vars.insert(resolved[..eq].to_string(), resolved[eq + 1..].to_string());
            }
        }

        let program = resolve(&cmd.program, &local_vars, el);
        if program.is_empty() {
            continue;
        }
        // Pure-assignment commands define transient variables only.
        if program.contains('=') && !program.contains('/') {
            if let Some(eq) = program.find('=') {
                local_vars.insert(program[..eq].to_string(), program[eq + 1..].to_string());
            }
            continue;
        }

        let argv: Vec<String> = cmd
            .argv
            .iter()
            .map(|t| resolve(t, &local_vars, el))
            .collect();
        let effects = registry.effects_of(&program, &argv);

        if let Some(dir) = &effects.changes_dir_to {
            local_cwd = expand_against(dir, &local_cwd);
        }
        for (k, v) in effects.defines_vars {
            local_vars.insert(k, v);
        }
        for pkg in effects.installs.iter().filter_map(|p| normalize_pkg(p)) {
            el.pkgs_installed.insert(pkg);
        }
        for used in effects.uses.iter().filter_map(|p| normalize_pkg(p)) {
            el.pkgs_used.insert(used);
        }
        let record_path = |path: &str, into_out: bool, el: &mut SemanticElements| {
            if is_remote(path) {
                return;
            }
            let expanded = if path == "$cwd" {
                local_cwd.clone()
            } else {
                expand_against(path, &local_cwd)
            };
            if into_out {
                el.paths_out.insert(expanded);
            } else {
                el.paths_in.insert(expanded);
            }
        };
        for p in &effects.reads {
            record_path(p, false, el);
        }
        for p in &effects.writes {
            record_path(p, true, el);
        }
        if let Some(user) = effects.defines_user {
            el.user_written = Some(user);
        }
        for redir in &cmd.redirections {
            if redir.target.is_empty() {
                continue;
            }
            let target = resolve(&redir.target, &local_vars, el);
            if redir.direction.ends_with('<') {
                record_path(&target, false, el);
            } else {
                record_path(&target, true, el);
            }
        }
    }
}

/// Fold states through the document and extract elements per instruction.
/// Element `i` is computed under the state produced by instructions `0..i`.
pub fn extract_all(
    doc: &ParsedDockerfile,
    registry: &CommandKnowledgeRegistry,
) -> Vec<SemanticElements> {
    let mut state = EnvState::default();
    let mut out = Vec::with_capacity(doc.instructions.len());
    for instr in &doc.instructions {
        out.push(extract_elements(instr, &state, registry));
        state = fold_state(&state, instr);
    }
    out
}
