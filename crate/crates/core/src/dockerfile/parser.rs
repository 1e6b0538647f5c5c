//! Instruction parsing over folded logical lines.

use super::lexer::{logical_lines, LogicalLine};
use super::{
    ArgumentPayload, Instruction, InstructionFlag, InstructionKind, KeyValue, ParseError,
    ParsedDockerfile, SourceSpan,
};

/// Parse Dockerfile text into a typed document.
///
/// Every non-comment logical line yields exactly one instruction;
/// continuations are folded and comments attach to the instruction below.
pub fn parse_dockerfile(text: &str) -> Result<ParsedDockerfile, ParseError> {
    let lex = logical_lines(text);
    let mut instructions = Vec::new();
    let mut stage: isize = -1;

    for (index, line) in lex.lines.iter().enumerate() {
        let keyword = line.keyword();
        let kind = InstructionKind::from_keyword(keyword).ok_or_else(|| {
            ParseError::syntax(line.content_line, format!("unknown instruction `{keyword}`"))
        })?;
        if kind == InstructionKind::From {
            stage += 1;
        }
        let preamble = stage < 0;
        let (flags, rest) = split_flags(&line.folded, keyword.len());
        let arguments = parse_arguments(kind, &rest, line)?;
        instructions.push(Instruction {
            kind,
            flags,
            arguments,
            span: SourceSpan {
                start_line: line.start_line,
                end_line: line.end_line,
                raw_text: line.raw.clone(),
            },
            stage_index: stage.max(0) as usize,
            index,
            preamble,
            heredoc: line.heredoc,
        });
    }

    Ok(ParsedDockerfile {
        directives: lex.directives,
        instructions,
        trailing_comments: lex.trailing,
    })
}

/// Consume `--name[=value]` tokens after the keyword.
fn split_flags(folded: &str, keyword_len: usize) -> (Vec<InstructionFlag>, String) {
    let mut rest = folded[folded
        .find(|c: char| !c.is_whitespace())
        .unwrap_or(0)..]
        .to_string();
    rest = rest[keyword_len.min(rest.len())..].trim_start().to_string();

    let mut flags = Vec::new();
    loop {
        if !rest.starts_with("--") {
            break;
        }
        let token_end = rest.find(char::is_whitespace).unwrap_or(rest.len());
        let token = &rest[..token_end];
        let flag = match token.find('=') {
            Some(eq) => InstructionFlag {
                name: token[2..eq].to_string(),
                value: Some(token[eq + 1..].to_string()),
            },
            None => InstructionFlag {
                name: token[2..].to_string(),
                value: None,
            },
        };
        flags.push(flag);
        rest = rest[token_end..].trim_start().to_string();
    }
    (flags, rest)
}

fn parse_arguments(
    kind: InstructionKind,
    rest: &str,
    line: &LogicalLine,
) -> Result<ArgumentPayload, ParseError> {
    use InstructionKind::*;
    let err = |reason: String| ParseError::syntax(line.content_line, reason);

    match kind {
        Env => Ok(ArgumentPayload::KeyValuePairs(parse_key_values(
            rest, true, true,
        ))),
        Label => Ok(ArgumentPayload::KeyValuePairs(parse_key_values(
            rest, true, true,
        ))),
        Arg => {
            if rest.trim().is_empty() {
                return Err(err("ARG requires a name".into()));
            }
            Ok(ArgumentPayload::KeyValuePairs(parse_key_values(
                rest, false, false,
            )))
        }
        Expose => {
            if rest.trim().is_empty() {
                return Err(err("EXPOSE requires at least one port".into()));
            }
            Ok(ArgumentPayload::KeyValuePairs(
                rest.split_whitespace()
                    .map(|p| KeyValue {
                        key: p.to_string(),
                        value: None,
                    })
                    .collect(),
            ))
        }
        Run | Cmd | Entrypoint => {
            if line.heredoc {
                return Ok(ArgumentPayload::ShellText(rest.to_string()));
            }
            match parse_json_array(rest) {
                Some(Ok(items)) => Ok(ArgumentPayload::ExecArray(items)),
                Some(Err(_)) | None => Ok(ArgumentPayload::ShellText(rest.trim().to_string())),
            }
        }
        Shell => match parse_json_array(rest) {
            Some(Ok(items)) => Ok(ArgumentPayload::ExecArray(items)),
            _ => Err(err("SHELL requires a JSON array".into())),
        },
        Copy | Add => {
            if line.heredoc {
                // Inline heredoc content: the destination is the last token
                // of the opener line, there are no context sources.
                let opener = rest.lines().next().unwrap_or("");
                let dest = opener
                    .split_whitespace()
                    .last()
                    .unwrap_or("")
                    .to_string();
                return Ok(ArgumentPayload::PathArgs {
                    sources: Vec::new(),
                    destination: dest,
                });
            }
            let tokens = match parse_json_array(rest) {
                Some(Ok(items)) => items,
                _ => tokenize_quoted(rest),
            };
            if tokens.len() < 2 {
                return Err(err(format!(
                    "{} requires at least one source and a destination",
                    kind.keyword()
                )));
            }
            let destination = tokens.last().unwrap().clone();
            Ok(ArgumentPayload::PathArgs {
                sources: tokens[..tokens.len() - 1].to_vec(),
                destination,
            })
        }
        From => {
            if rest.trim().is_empty() {
                return Err(err("FROM requires an image reference".into()));
            }
            Ok(ArgumentPayload::SingleValue(rest.trim().to_string()))
        }
        Workdir | User | Stopsignal | Maintainer | Onbuild => {
            if rest.trim().is_empty() {
                return Err(err(format!("{} requires an argument", kind.keyword())));
            }
            Ok(ArgumentPayload::SingleValue(rest.trim().to_string()))
        }
        Volume => match parse_json_array(rest) {
            Some(Ok(items)) => Ok(ArgumentPayload::ExecArray(items)),
            _ => {
                if rest.trim().is_empty() {
                    return Err(err("VOLUME requires at least one path".into()));
                }
                Ok(ArgumentPayload::SingleValue(rest.trim().to_string()))
            }
        },
        Healthcheck => {
            let trimmed = rest.trim();
            if trimmed.eq_ignore_ascii_case("none") {
                return Ok(ArgumentPayload::SingleValue("NONE".to_string()));
            }
            let Some(stripped) = strip_leading_keyword(trimmed, "CMD") else {
                return Err(err("HEALTHCHECK expects CMD or NONE".into()));
            };
            match parse_json_array(stripped) {
                Some(Ok(items)) => Ok(ArgumentPayload::ExecArray(items)),
                _ => Ok(ArgumentPayload::ShellText(stripped.trim().to_string())),
            }
        }
    }
}

fn strip_leading_keyword<'a>(text: &'a str, keyword: &str) -> Option<&'a str> {
    let first = text.split_whitespace().next()?;
    if first.eq_ignore_ascii_case(keyword) {
        let pos = text.find(first).unwrap() + first.len();
        Some(&text[pos..])
    } else {
        None
    }
}

/// `Some(Ok(..))` for a valid JSON string array, `Some(Err(..))` for text
/// that starts with `[` but is not one, `None` otherwise.
fn parse_json_array(text: &str) -> Option<Result<Vec<String>, serde_json::Error>> {
    let trimmed = text.trim();
    if !trimmed.starts_with('[') {
        return None;
    }
    Some(serde_json::from_str::<Vec<String>>(trimmed))
}

/// Split on unquoted whitespace, keeping quoted segments together and
/// stripping the outer quotes.
fn tokenize_quoted(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut current = String::new();
    let mut started = false;
    let mut quote: Option<char> = None;
    let mut chars = text.chars().peekable();
    while let Some(c) = chars.next() {
        match quote {
            Some(q) => {
                if c == q {
                    quote = None;
                } else {
                    current.push(c);
                }
            }
            None => match c {
                '"' | '\'' => {
                    quote = Some(c);
                    started = true;
                }
                '\\' => {
                    if let Some(&next) = chars.peek() {
                        current.push(next);
                        chars.next();
                        started = true;
                    }
                }
                c if c.is_whitespace() => {
                    if started {
                        tokens.push(std::mem::take(&mut current));
                        started = false;
                    }
                }
                _ => {
                    current.push(c);
                    started = true;
                }
            },
        }
    }
    if started {
        tokens.push(current);
    }
    tokens
}

/// Parse `key=value` lists (ENV/LABEL/ARG). `legacy` allows the old
/// `KEY the rest of the line` single-pair form; `require_value` controls
/// whether a bare key keeps `None` (ARG) or an empty value.
fn parse_key_values(text: &str, legacy: bool, require_value: bool) -> Vec<KeyValue> {
    let trimmed = text.trim();
    if trimmed.is_empty() {
        return Vec::new();
    }
    let first = trimmed.split_whitespace().next().unwrap_or("");
    if legacy && !first.contains('=') {
        // Legacy space-separated form: one pair, value is the remainder.
        let value_start = trimmed.find(first).unwrap() + first.len();
        let value = trimmed[value_start..].trim();
        return vec![KeyValue {
            key: first.to_string(),
            value: Some(strip_outer_quotes(value).to_string()),
        }];
    }
    tokenize_kv(trimmed)
        .into_iter()
        .map(|token| match token.find('=') {
            Some(eq) => KeyValue {
                key: strip_outer_quotes(&token[..eq]).to_string(),
                value: Some(strip_outer_quotes(&token[eq + 1..]).to_string()),
            },
            None => KeyValue {
                key: token,
                value: if require_value {
                    Some(String::new())
                } else {
                    None
                },
            },
        })
        .collect()
}

/// Split `K=v K2="v w"` into tokens on unquoted whitespace, quotes kept.
fn tokenize_kv(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut current = String::new();
    let mut quote: Option<char> = None;
    let mut chars = text.chars().peekable();
    while let Some(c) = chars.next() {
        match quote {
            Some(q) => {
                current.push(c);
                if c == q {
                    quote = None;
                }
            }
            None => match c {
                '"' | '\'' => {
                    current.push(c);
                    quote = Some(c);
                }
                '\\' => {
                    current.push(c);
                    if let Some(&n) = chars.peek() {
                        current.push(n);
                        chars.next();
                    }
                }
                c if c.is_whitespace() => {
                    if !current.is_empty() {
                        tokens.push(std::mem::take(&mut current));
                    }
                }
                _ => current.push(c),
            },
        }
    }
    if !current.is_empty() {
        tokens.push(current);
    }
    tokens
}

fn strip_outer_quotes(text: &str) -> &str {
    let t = text.trim();
    if t.len() >= 2 {
        let first = t.chars().next().unwrap();
        if (first == '"' || first == '\'') && t.ends_with(first) {
            return &t[1..t.len() - 1];
        }
    }
    t
}
