//! Command knowledge: what shell programs read, write, install and change.
//!
//! A checked-in data file maps programs (and subcommands) to effect
//! templates. Lookups are total: an unknown program yields a conservative
//! template that records only the program itself as used.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;

const DEFAULT_REGISTRY: &str = include_str!("registry_default.json");

/// Effect template for one program or subcommand.
///
/// Path selectors: `$1`, `$2`, `$last`, `$all`, `$allButLast`,
/// `$allButFirst` pick positional arguments (after the subcommand, when the
/// template is a subcommand template); `$cwd` is the working directory at
/// the time the command runs; anything else is a literal path.
/// `flag_values` marks flags whose following token is a value, and what the
/// value means (`reads`, `writes` or `skip`).
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EffectTemplate {
    pub installs: Option<String>,
    pub uses: Vec<String>,
    pub reads: Vec<String>,
    pub writes: Vec<String>,
    pub flag_values: BTreeMap<String, String>,
    pub changes_dir: bool,
    pub defines_user: Option<String>,
    pub defines_vars: bool,
    pub wraps_command: bool,
    pub subcommands: BTreeMap<String, EffectTemplate>,
}

/// Concrete effects of one resolved simple command.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CommandEffects {
    pub installs: Vec<String>,
    pub uses: Vec<String>,
    /// Paths read; `$cwd` stands for the current working directory.
    pub reads: Vec<String>,
    pub writes: Vec<String>,
    pub changes_dir_to: Option<String>,
    pub defines_user: Option<String>,
    /// `KEY=value` assignments from export-like commands.
    pub defines_vars: Vec<(String, String)>,
}

#[derive(Debug, Clone)]
pub struct CommandKnowledgeRegistry {
    programs: BTreeMap<String, EffectTemplate>,
}

#[derive(Debug, thiserror::Error)]
pub enum RegistryError {
    #[error("failed to read registry file: {0}")]
    Io(#[from] std::io::Error),
    #[error("invalid registry JSON: {0}")]
    Json(#[from] serde_json::Error),
}

fn basename(program: &str) -> String {
    program
        .rsplit('/')
        .next()
        .unwrap_or(program)
        .to_ascii_lowercase()
}

fn is_flag(token: &str) -> bool {
    token.starts_with('-') && token.len() > 1
}

impl Default for CommandKnowledgeRegistry {
    fn default() -> Self {
        Self::builtin()
    }
}

impl CommandKnowledgeRegistry {
    /// The registry embedded in the binary.
    pub fn builtin() -> Self {
        serde_json::from_str(DEFAULT_REGISTRY)
            .map(|programs| Self { programs })
            .expect("embedded registry is valid")
    }

    pub fn from_file(path: &Path) -> Result<Self, RegistryError> {
        let text = std::fs::read_to_string(path)?;
        let programs = serde_json::from_str(&text)?;
        Ok(Self { programs })
    }

    pub fn known_programs(&self) -> impl Iterator<Item = &str> {
        self.programs.keys().map(String::as_str)
    }

    /// Effects of a command whose tokens are already variable-resolved and
    /// unquoted. `argv` excludes the program word.
    pub fn effects_of(&self, program: &str, argv: &[String]) -> CommandEffects {
        self.effects_inner(program, argv, 0)
    }

    fn effects_inner(&self, program: &str, argv: &[String], depth: usize) -> CommandEffects {
        let prog = basename(program);
        let mut effects = CommandEffects::default();
        if prog.is_empty() {
            return effects;
        }
        effects.uses.push(prog.clone());

        let Some(template) = self.programs.get(&prog) else {
            // Unknown program: only the program itself is recorded as used.
            return effects;
        };

        if template.wraps_command && depth < 2 {
            // sudo-style wrappers: re-dispatch on the wrapped command.
            if let Some(pos) = argv.iter().position(|t| !is_flag(t)) {
                let mut inner = self.effects_inner(&argv[pos], &argv[pos + 1..], depth + 1);
                inner.uses.insert(0, prog);
                return inner;
            }
            return effects;
        }

        // Subcommand dispatch on the first positional token.
        let first_positional = argv.iter().find(|t| !is_flag(t));
        let (template, sub_used) = match first_positional {
            Some(sub) if template.subcommands.contains_key(sub.as_str()) => {
                (&template.subcommands[sub.as_str()], true)
            }
            _ => (template, false),
        };

        // Flag-value consumption.
        let mut consumed = vec![false; argv.len()];
        let mut flag_reads: Vec<String> = Vec::new();
        let mut flag_writes: Vec<String> = Vec::new();
        let mut apply = |effect: &str, value: String| match effect {
            "reads" => flag_reads.push(value),
            "writes" => flag_writes.push(value),
            _ => {}
        };
        for i in 0..argv.len() {
            let token = &argv[i];
            if !is_flag(token) {
                continue;
            }
            if let Some(eq) = token.find('=') {
                if let Some(effect) = template.flag_values.get(&token[..eq]) {
                    apply(effect, token[eq + 1..].to_string());
                }
                continue;
            }
            let effect = template.flag_values.get(token.as_str()).or_else(|| {
                // single-dash bundles: `-xzf file` consumes via `-f`
                if !token.starts_with("--") && token.len() > 2 {
                    let last = token.chars().last().unwrap();
                    template.flag_values.get(format!("-{last}").as_str())
                } else {
                    None
                }
            });
            if let Some(effect) = effect {
                if let Some(value) = argv.get(i + 1) {
                    if !is_flag(value) {
                        consumed[i + 1] = true;
                        apply(effect, value.clone());
                    }
                }
            }
        }

        let mut positionals: Vec<&String> = argv
            .iter()
            .enumerate()
            .filter(|(i, t)| !is_flag(t) && !consumed[*i])
            .map(|(_, t)| t)
            .collect();
        if sub_used && !positionals.is_empty() {
            positionals.remove(0);
        }

        let select = |selector: &str| -> Vec<String> {
            match selector {
                "$1" => positionals.first().map(|s| s.to_string()).into_iter().collect(),
                "$2" => positionals.get(1).map(|s| s.to_string()).into_iter().collect(),
                "$last" => positionals.last().map(|s| s.to_string()).into_iter().collect(),
                "$all" => positionals.iter().map(|s| s.to_string()).collect(),
                "$allButLast" => positionals
                    .iter()
                    .take(positionals.len().saturating_sub(1))
                    .map(|s| s.to_string())
                    .collect(),
                "$allButFirst" => positionals.iter().skip(1).map(|s| s.to_string()).collect(),
                other => vec![other.to_string()],
            }
        };

        if let Some(sel) = &template.installs {
            effects.installs.extend(select(sel));
        }
        for sel in &template.reads {
            effects.reads.extend(select(sel));
        }
        for sel in &template.writes {
            effects.writes.extend(select(sel));
        }
        effects.reads.extend(flag_reads);
        effects.writes.extend(flag_writes);
        effects.uses.extend(template.uses.iter().cloned());
        if template.changes_dir {
            effects.changes_dir_to = positionals.first().map(|s| s.to_string());
        }
        if let Some(sel) = &template.defines_user {
            effects.defines_user = select(sel).into_iter().next();
        }
        if template.defines_vars {
            for p in &positionals {
                if let Some(eq) = p.find('=') {
                    if eq > 0 {
                        effects
                            .defines_vars
                            .push((p[..eq].to_string(), p[eq + 1..].to_string()));
                    }
                }
            }
        }
        effects
    }
}
