//! Dockerfile parsing and lossless serialization.
//!
//! Two layers: the DSL layer turns Dockerfile text into a typed
//! [`Instruction`] list, and the shell layer ([`shell`]) splits shell-form
//! bodies into simple commands. Parsing keeps the exact source bytes of
//! every instruction (including the comments and blank lines directly
//! above it) so that serialization is byte-identical for an unmodified
//! document and comments travel with their instruction on reorder.

mod lexer;
mod parser;
pub mod shell;

pub use lexer::{logical_lines, LogicalLine};
pub use parser::parse_dockerfile;
pub use shell::{parse_shell, rejoin_commands, Connector, Redirection, ShellError, SimpleCommand};

use serde::{Deserialize, Serialize};
use std::fmt;

/// The 18 Dockerfile instruction keywords.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum InstructionKind {
    From,
    Arg,
    Env,
    Label,
    Copy,
    Add,
    Workdir,
    User,
    Volume,
    Run,
    Shell,
    Cmd,
    Entrypoint,
    Expose,
    Onbuild,
    Healthcheck,
    Stopsignal,
    Maintainer,
}

impl InstructionKind {
    pub const ALL: [InstructionKind; 18] = [
        InstructionKind::From,
        InstructionKind::Arg,
        InstructionKind::Env,
        InstructionKind::Label,
        InstructionKind::Copy,
        InstructionKind::Add,
        InstructionKind::Workdir,
        InstructionKind::User,
        InstructionKind::Volume,
        InstructionKind::Run,
        InstructionKind::Shell,
        InstructionKind::Cmd,
        InstructionKind::Entrypoint,
        InstructionKind::Expose,
        InstructionKind::Onbuild,
        InstructionKind::Healthcheck,
        InstructionKind::Stopsignal,
        InstructionKind::Maintainer,
    ];

    pub fn from_keyword(word: &str) -> Option<InstructionKind> {
        let upper = word.to_ascii_uppercase();
        Self::ALL.iter().copied().find(|k| k.keyword() == upper)
    }

    pub fn keyword(&self) -> &'static str {
        match self {
            InstructionKind::From => "FROM",
            InstructionKind::Arg => "ARG",
            InstructionKind::Env => "ENV",
            InstructionKind::Label => "LABEL",
            InstructionKind::Copy => "COPY",
            InstructionKind::Add => "ADD",
            InstructionKind::Workdir => "WORKDIR",
            InstructionKind::User => "USER",
            InstructionKind::Volume => "VOLUME",
            InstructionKind::Run => "RUN",
            InstructionKind::Shell => "SHELL",
            InstructionKind::Cmd => "CMD",
            InstructionKind::Entrypoint => "ENTRYPOINT",
            InstructionKind::Expose => "EXPOSE",
            InstructionKind::Onbuild => "ONBUILD",
            InstructionKind::Healthcheck => "HEALTHCHECK",
            InstructionKind::Stopsignal => "STOPSIGNAL",
            InstructionKind::Maintainer => "MAINTAINER",
        }
    }

    /// MAINTAINER still parses, but is deprecated.
    pub fn is_deprecated(&self) -> bool {
        matches!(self, InstructionKind::Maintainer)
    }
}

impl fmt::Display for InstructionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.keyword())
    }
}

/// Exact source location of one instruction, including the comment and
/// blank lines directly above it. `raw_text` re-serializes byte-identically.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceSpan {
    /// 1-based first line of the span (first attached comment, if any).
    pub start_line: usize,
    /// 1-based last line of the span.
    pub end_line: usize,
    /// Exact original text of the span, continuations and comments included.
    pub raw_text: String,
}

/// One `--name[=value]` flag on an instruction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstructionFlag {
    pub name: String,
    pub value: Option<String>,
}

/// One `key[=value]` pair from ENV/ARG/LABEL-style arguments.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyValue {
    pub key: String,
    pub value: Option<String>,
}

/// Instruction arguments, shaped by the instruction kind.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArgumentPayload {
    /// ENV/ARG/LABEL/EXPOSE: parsed key/value pairs.
    KeyValuePairs(Vec<KeyValue>),
    /// Shell-form RUN/CMD/ENTRYPOINT/HEALTHCHECK body, verbatim.
    ShellText(String),
    /// Exec-form (JSON array) arguments.
    ExecArray(Vec<String>),
    /// COPY/ADD sources and destination.
    PathArgs {
        sources: Vec<String>,
        destination: String,
    },
    /// Single free-form value (FROM, WORKDIR, USER, ...).
    SingleValue(String),
}

/// One parsed Dockerfile instruction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Instruction {
    pub kind: InstructionKind,
    pub flags: Vec<InstructionFlag>,
    pub arguments: ArgumentPayload,
    pub span: SourceSpan,
    /// 0-based build-stage ordinal; increments at each FROM.
    pub stage_index: usize,
    /// 0-based position within the file.
    pub index: usize,
    /// True for instructions before the first FROM (global ARGs).
    pub preamble: bool,
    /// True when the body contains a heredoc block; treated as opaque.
    pub heredoc: bool,
}

impl Instruction {
    /// The `FROM ... AS name` stage alias, if this is a FROM with one.
    pub fn stage_alias(&self) -> Option<&str> {
        if self.kind != InstructionKind::From {
            return None;
        }
        if let ArgumentPayload::SingleValue(v) = &self.arguments {
            let tokens: Vec<&str> = v.split_whitespace().collect();
            for w in tokens.windows(2) {
                if w[0].eq_ignore_ascii_case("as") {
                    return Some(w[1]);
                }
            }
        }
        None
    }

    /// The base image reference of a FROM instruction.
    pub fn from_image(&self) -> Option<&str> {
        if self.kind != InstructionKind::From {
            return None;
        }
        if let ArgumentPayload::SingleValue(v) = &self.arguments {
            return v.split_whitespace().next();
        }
        None
    }

    /// Value of a `--flag`, if present.
    pub fn flag(&self, name: &str) -> Option<&str> {
        self.flags
            .iter()
            .find(|f| f.name == name)
            .and_then(|f| f.value.as_deref())
    }

    /// True for shell-form RUN/CMD/ENTRYPOINT/HEALTHCHECK bodies.
    pub fn is_shell_form(&self) -> bool {
        matches!(self.arguments, ArgumentPayload::ShellText(_))
    }

    /// Whitespace-split tokens of a SingleValue payload (used for VOLUME).
    pub fn single_value_tokens(&self) -> Vec<&str> {
        match &self.arguments {
            ArgumentPayload::SingleValue(v) => v.split_whitespace().collect(),
            _ => Vec::new(),
        }
    }
}

/// A `# key=value` parser directive from the top of the file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Directive {
    pub name: String,
    pub value: String,
    /// Exact source line, trailing newline included.
    pub raw_line: String,
}

/// A whole parsed Dockerfile.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedDockerfile {
    pub directives: Vec<Directive>,
    pub instructions: Vec<Instruction>,
    /// Comments and blank lines after the last instruction, verbatim.
    pub trailing_comments: String,
}

impl ParsedDockerfile {
    /// Index of the first FROM instruction, if any.
    pub fn first_from_index(&self) -> Option<usize> {
        self.instructions
            .iter()
            .position(|i| i.kind == InstructionKind::From)
    }

    /// Resolve a `--from` reference (stage ordinal or alias) to a stage index.
    pub fn resolve_stage_ref(&self, reference: &str) -> Option<usize> {
        if let Ok(n) = reference.parse::<usize>() {
            let stages = self
                .instructions
                .iter()
                .filter(|i| i.kind == InstructionKind::From)
                .count();
            return if n < stages { Some(n) } else { None };
        }
        self.instructions
            .iter()
            .find(|i| {
                i.stage_alias()
                    .map(|a| a.eq_ignore_ascii_case(reference))
                    .unwrap_or(false)
            })
            .map(|i| i.stage_index)
    }

    /// Instruction indices belonging to the given stage.
    pub fn stage_members(&self, stage: usize) -> Vec<usize> {
        self.instructions
            .iter()
            .filter(|i| i.stage_index == stage)
            .map(|i| i.index)
            .collect()
    }
}

/// Parse error with the offending 1-based line number.
#[derive(Debug, Clone, thiserror::Error, PartialEq, Eq)]
pub enum ParseError {
    #[error("line {line}: {reason}")]
    Syntax { line: usize, reason: String },
}

impl ParseError {
    pub fn syntax(line: usize, reason: impl Into<String>) -> Self {
        ParseError::Syntax {
            line,
            reason: reason.into(),
        }
    }
}

/// Serialize a parsed Dockerfile back to text.
///
/// For a document unmodified since parse the output equals the input
/// byte-for-byte. For a reordered document, instruction spans are emitted
/// in list order with their attached comments, directives stay first and
/// trailing comments last.
pub fn serialize(doc: &ParsedDockerfile) -> String {
    let mut out = String::new();
    for d in &doc.directives {
        out.push_str(&d.raw_line);
    }
    let last = doc.instructions.len().saturating_sub(1);
    for (i, instr) in doc.instructions.iter().enumerate() {
        let raw = &instr.span.raw_text;
        out.push_str(raw);
        // A span that lost its trailing newline (originally last in file)
        // needs one back when another span or trailing text follows it.
        if !raw.ends_with('\n') && (i != last || !doc.trailing_comments.is_empty()) {
            out.push('\n');
        }
    }
    out.push_str(&doc.trailing_comments);
    out
}
