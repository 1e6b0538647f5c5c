//! Logical-line lexing: directives, comment attachment, line continuations
//! and heredoc bodies.

use super::Directive;

/// One logical instruction line: the folded content plus the exact raw
/// source block it came from (attached comments and blank lines included).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LogicalLine {
    /// 1-based first line of the raw block.
    pub start_line: usize,
    /// 1-based last line of the raw block.
    pub end_line: usize,
    /// 1-based line where the instruction keyword sits.
    pub content_line: usize,
    /// Exact source text of the block.
    pub raw: String,
    /// Instruction text with continuations folded and inner comments dropped.
    pub folded: String,
    /// True when the folded body includes a heredoc block.
    pub heredoc: bool,
}

impl LogicalLine {
    /// First whitespace token of the folded content (the keyword).
    pub fn keyword(&self) -> &str {
        self.folded.split_whitespace().next().unwrap_or("")
    }
}

pub struct LexOutput {
    pub directives: Vec<Directive>,
    pub lines: Vec<LogicalLine>,
    pub trailing: String,
    pub escape_char: char,
}

fn line_content(line: &str) -> &str {
    line.trim_end_matches(['\n', '\r'])
}

fn is_comment(line: &str) -> bool {
    line_content(line).trim_start().starts_with('#')
}

fn is_blank(line: &str) -> bool {
    line_content(line).trim().is_empty()
}

fn parse_directive(line: &str) -> Option<(String, String)> {
    let content = line_content(line).trim();
    let body = content.strip_prefix('#')?;
    let eq = body.find('=')?;
    let name = body[..eq].trim();
    let value = body[eq + 1..].trim();
    if name.is_empty() || !name.chars().all(|c| c.is_ascii_alphanumeric()) {
        return None;
    }
    Some((name.to_ascii_lowercase(), value.to_string()))
}

/// Heredoc openers on RUN/COPY/ADD lines: `<<EOF`, `<<-EOF`, `<<"EOF"`.
fn heredoc_delimiters(folded: &str) -> Vec<String> {
    let mut out = Vec::new();
    let bytes = folded.as_bytes();
    let mut i = 0;
    while i + 1 < bytes.len() {
        if bytes[i] == b'<' && bytes[i + 1] == b'<' {
            let mut j = i + 2;
            // `<<<` here-strings and `<<(` are not heredocs.
            if j < bytes.len() && bytes[j] == b'<' {
                i = j + 1;
                continue;
            }
            if j < bytes.len() && bytes[j] == b'-' {
                j += 1;
            }
            let quote = if j < bytes.len() && (bytes[j] == b'"' || bytes[j] == b'\'') {
                let q = bytes[j];
                j += 1;
                Some(q)
            } else {
                None
            };
            let start = j;
            while j < bytes.len()
                && (bytes[j].is_ascii_alphanumeric() || bytes[j] == b'_' || bytes[j] == b'.')
            {
                j += 1;
            }
            if j > start {
                if let Some(q) = quote {
                    if j < bytes.len() && bytes[j] == q {
                        out.push(folded[start..j].to_string());
                    }
                } else {
                    out.push(folded[start..j].to_string());
                }
            }
            i = j;
        } else {
            i += 1;
        }
    }
    out
}

/// Split source text into parser directives, logical instruction lines and
/// trailing comment text. Tolerant of unknown keywords: classification of
/// the keyword happens in the parser, not here.
pub fn logical_lines(text: &str) -> LexOutput {
    let lines: Vec<&str> = text.split_inclusive('\n').collect();
    let mut directives = Vec::new();
    let mut escape_char = '\\';
    let mut idx = 0;

    // Parser directives: leading `# key=value` lines, stopping at the first
    // line that is not one (including blank lines and plain comments).
    let mut seen: Vec<String> = Vec::new();
    while idx < lines.len() {
        match parse_directive(lines[idx]) {
            Some((name, value)) if !seen.contains(&name) => {
                if name == "escape" {
                    if let Some(c) = value.chars().next() {
                        if c == '\\' || c == '`' {
                            escape_char = c;
                        }
                    }
                }
                seen.push(name.clone());
                directives.push(Directive {
                    name,
                    value,
                    raw_line: lines[idx].to_string(),
                });
                idx += 1;
            }
            _ => break,
        }
    }

    let mut out = Vec::new();
    let mut pending_start: Option<usize> = None; // index into `lines`
    let mut i = idx;
    while i < lines.len() {
        let line = lines[i];
        if is_blank(line) || is_comment(line) {
            if pending_start.is_none() {
                pending_start = Some(i);
            }
            i += 1;
            continue;
        }

        // Start of an instruction.
        let block_start = pending_start.take().unwrap_or(i);
        let content_line = i + 1;
        let mut folded = String::new();
        let mut cont = false;
        let first_word = line_content(line)
            .split_whitespace()
            .next()
            .unwrap_or("")
            .to_ascii_uppercase();
        let heredoc_capable = matches!(first_word.as_str(), "RUN" | "COPY" | "ADD" | "ONBUILD");

        loop {
            let content = line_content(lines[i]);
            if cont && is_comment(content) {
                // Comment lines inside a continuation are dropped from the
                // folded text but stay in the raw block.
                i += 1;
                if i >= lines.len() {
                    break;
                }
                continue;
            }
            let (body, continues) = match content.strip_suffix(escape_char) {
                // An escaped escape char (e.g. `\\` at end) still continues
                // per Docker's own line-joining behavior; no lookbehind.
                Some(stripped) => (stripped, true),
                None => (content, false),
            };
            folded.push_str(body);
            i += 1;
            cont = true;
            if !continues || i >= lines.len() {
                break;
            }
        }

        let mut heredoc = false;
        if heredoc_capable {
            for delim in heredoc_delimiters(&folded) {
                heredoc = true;
                folded.push('\n');
                while i < lines.len() {
                    let content = line_content(lines[i]);
                    folded.push_str(content);
                    folded.push('\n');
                    i += 1;
                    if content.trim_start_matches('\t') == delim {
                        break;
                    }
                }
            }
        }

        let raw: String = lines[block_start..i].concat();
        out.push(LogicalLine {
            start_line: block_start + 1,
            end_line: i,
            content_line,
            raw,
            folded,
            heredoc,
        });
    }

    let trailing = match pending_start {
        Some(p) => lines[p..].concat(),
        None => String::new(),
    };

    LexOutput {
        directives,
        lines: out,
        trailing,
        escape_char,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn folds_continuations() {
        let text = "RUN apt update && \\\n    apt install -y wget\n";
        let lex = logical_lines(text);
        assert_eq!(lex.lines.len(), 1);
        assert_eq!(
            lex.lines[0].folded,
            "RUN apt update &&     apt install -y wget"
        );
        assert_eq!(lex.lines[0].raw, text);
    }

    #[test]
    fn attaches_comments_above() {
        let text = "# build deps\nFROM alpine\n\n# app\nRUN make\n";
        let lex = logical_lines(text);
        assert_eq!(lex.lines.len(), 2);
        assert!(lex.lines[0].raw.starts_with("# build deps"));
        assert!(lex.lines[1].raw.starts_with("\n# app"));
        assert_eq!(lex.lines[1].content_line, 5);
    }

    #[test]
    fn escape_directive_switches_continuation_char() {
        let text = "# escape=`\nFROM alpine\nRUN echo a `\n  b\n";
        let lex = logical_lines(text);
        assert_eq!(lex.directives.len(), 1);
        assert_eq!(lex.escape_char, '`');
        assert_eq!(lex.lines.len(), 2);
        assert_eq!(lex.lines[1].folded, "RUN echo a   b");
    }

    #[test]
    fn directives_stop_at_first_plain_comment() {
        let text = "# syntax=docker/dockerfile:1\n# just a comment\n# escape=`\nFROM alpine\n";
        let lex = logical_lines(text);
        assert_eq!(lex.directives.len(), 1);
        assert_eq!(lex.escape_char, '\\');
    }

    #[test]
    fn heredoc_body_captured() {
        let text = "RUN <<EOF\necho hi\necho bye\nEOF\nCMD [\"x\"]\n";
        let lex = logical_lines(text);
        assert_eq!(lex.lines.len(), 2);
        assert!(lex.lines[0].heredoc);
        assert!(lex.lines[0].folded.contains("echo bye"));
        assert!(lex.lines[0].raw.ends_with("EOF\n"));
    }

    #[test]
    fn comment_inside_continuation_dropped_from_folded() {
        let text = "RUN echo a \\\n# note\n  && echo b\n";
        let lex = logical_lines(text);
        assert_eq!(lex.lines.len(), 1);
        assert_eq!(lex.lines[0].folded, "RUN echo a   && echo b");
        assert!(lex.lines[0].raw.contains("# note"));
    }

    #[test]
    fn trailing_comments_preserved() {
        let text = "FROM alpine\n# done\n";
        let lex = logical_lines(text);
        assert_eq!(lex.lines.len(), 1);
        assert_eq!(lex.trailing, "# done\n");
    }
}
