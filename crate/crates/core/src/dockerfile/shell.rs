//! POSIX-subset shell parsing for shell-form instruction bodies.
//!
//! The subset covers pipelines, `&&`/`||`/`;`, single and double quoting,
//! `$VAR`/`${VAR}` references (left verbatim in tokens), redirections and
//! flag/positional separation. Anything else is rejected with
//! [`ShellError::UnsupportedConstruct`] and the caller treats the whole
//! body as one opaque command with conservative semantics.

use serde::{Deserialize, Serialize};

/// Connector between one simple command and the next.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Connector {
    And,
    Or,
    Pipe,
    Sequence,
    None,
}

/// One redirection, e.g. `(">", "/log")` or `("2>&1", "")`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Redirection {
    pub direction: String,
    pub target: String,
}

/// One simple command split out of a compound shell line.
///
/// Tokens keep their original quoting and `$` references verbatim;
/// expansion happens later, in the semantic extractor.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimpleCommand {
    pub program: String,
    /// Tokens starting with `-` (flags), in order of appearance.
    pub flags: Vec<String>,
    /// Non-flag tokens, in order of appearance.
    pub positional_args: Vec<String>,
    pub connector_to_next: Connector,
    pub redirections: Vec<Redirection>,
    /// Leading `NAME=value` assignments before the program word.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub env_assignments: Vec<String>,
    /// All tokens after the program word, in original order.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub argv: Vec<String>,
}

impl SimpleCommand {
    /// Rejoin into shell text: assignments, program, arguments in original
    /// order, redirections. Re-parsing the result yields the same command.
    pub fn rejoin(&self) -> String {
        let mut parts: Vec<String> = Vec::new();
        parts.extend(self.env_assignments.iter().cloned());
        parts.push(self.program.clone());
        parts.extend(self.argv.iter().cloned());
        for r in &self.redirections {
            parts.push(r.direction.clone());
            if !r.target.is_empty() {
                parts.push(r.target.clone());
            }
        }
        parts.join(" ")
    }
}

/// Rejoin a full command list with its connectors.
pub fn rejoin_commands(commands: &[SimpleCommand]) -> String {
    let mut out = String::new();
    for cmd in commands {
        out.push_str(&cmd.rejoin());
        match cmd.connector_to_next {
            Connector::And => out.push_str(" && "),
            Connector::Or => out.push_str(" || "),
            Connector::Pipe => out.push_str(" | "),
            Connector::Sequence => out.push_str(" ; "),
            Connector::None => {}
        }
    }
    out
}

#[derive(Debug, Clone, thiserror::Error, PartialEq, Eq)]
pub enum ShellError {
    /// Unbalanced quote; the offset is the byte position of the opening quote.
    #[error("unbalanced quote at byte {0}")]
    ShellParseError(usize),
    /// Syntax outside the supported subset (e.g. command substitution).
    #[error("unsupported shell construct: {0}")]
    UnsupportedConstruct(String),
}

const RESERVED_WORDS: [&str; 15] = [
    "if", "then", "elif", "else", "fi", "for", "while", "until", "do", "done", "case", "esac",
    "function", "select", "coproc",
];

#[derive(Debug, PartialEq)]
enum Token {
    Word(String),
    Op(String),
}

fn is_assignment(word: &str) -> bool {
    match word.find('=') {
        Some(0) | None => false,
        Some(eq) => word[..eq]
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '_'),
    }
}

fn lex(text: &str) -> Result<Vec<Token>, ShellError> {
    let bytes = text.as_bytes();
    let mut tokens = Vec::new();
    let mut word = String::new();
    let mut word_started = false;
    let mut i = 0;

    macro_rules! flush {
        () => {
            if word_started {
                tokens.push(Token::Word(std::mem::take(&mut word)));
                word_started = false;
            }
        };
    }

    while i < bytes.len() {
        let c = bytes[i] as char;
        match c {
            '\'' | '"' => {
                let open = i;
                let quote = c;
                word.push(c);
                word_started = true;
                i += 1;
                let mut closed = false;
                while i < bytes.len() {
                    let d = bytes[i] as char;
                    if quote == '"' && d == '\\' && i + 1 < bytes.len() {
                        word.push(d);
                        word.push(bytes[i + 1] as char);
                        i += 2;
                        continue;
                    }
                    if quote == '"' && d == '`' {
                        return Err(ShellError::UnsupportedConstruct(
                            "command substitution".into(),
                        ));
                    }
                    word.push(d);
                    i += 1;
                    if d == quote {
                        closed = true;
                        break;
                    }
                }
                if !closed {
                    return Err(ShellError::ShellParseError(open));
                }
            }
            '\\' => {
                word.push(c);
                if i + 1 < bytes.len() {
                    word.push(bytes[i + 1] as char);
                    i += 2;
                } else {
                    i += 1;
                }
                word_started = true;
            }
            '`' => return Err(ShellError::UnsupportedConstruct("command substitution".into())),
            '$' if i + 1 < bytes.len() && bytes[i + 1] == b'(' => {
                return Err(ShellError::UnsupportedConstruct("command substitution".into()))
            }
            '(' | ')' => return Err(ShellError::UnsupportedConstruct("subshell".into())),
            '{' | '}' if !word_started => {
                return Err(ShellError::UnsupportedConstruct("brace group".into()))
            }
            '&' => {
                if i + 1 < bytes.len() && bytes[i + 1] == b'&' {
                    flush!();
                    tokens.push(Token::Op("&&".into()));
                    i += 2;
                } else {
                    return Err(ShellError::UnsupportedConstruct("background job".into()));
                }
            }
            '|' => {
                if i + 1 < bytes.len() && bytes[i + 1] == b'|' {
                    flush!();
                    tokens.push(Token::Op("||".into()));
                    i += 2;
                } else {
                    flush!();
                    tokens.push(Token::Op("|".into()));
                    i += 1;
                }
            }
            ';' => {
                flush!();
                tokens.push(Token::Op(";".into()));
                i += 1;
            }
            '<' | '>' => {
                // Possible fd prefix: the word so far is all digits.
                let fd_prefix = if word_started && word.chars().all(|ch| ch.is_ascii_digit()) {
                    let p = std::mem::take(&mut word);
                    word_started = false;
                    p
                } else {
                    flush!();
                    String::new()
                };
                let mut op = fd_prefix;
                op.push(c);
                i += 1;
                if c == '<' && i < bytes.len() && bytes[i] == b'<' {
                    return Err(ShellError::UnsupportedConstruct("heredoc".into()));
                }
                if c == '>' && i < bytes.len() && bytes[i] == b'>' {
                    op.push('>');
                    i += 1;
                }
                if i < bytes.len() && bytes[i] == b'(' {
                    return Err(ShellError::UnsupportedConstruct("process substitution".into()));
                }
                // fd duplication: `>&1`
                if i < bytes.len() && bytes[i] == b'&' {
                    op.push('&');
                    i += 1;
                    while i < bytes.len() && bytes[i].is_ascii_digit() {
                        op.push(bytes[i] as char);
                        i += 1;
                    }
                }
                tokens.push(Token::Op(op));
            }
            c if c.is_whitespace() => {
                flush!();
                i += 1;
            }
            _ => {
                word.push(c);
                word_started = true;
                i += 1;
            }
        }
    }
    if word_started {
        tokens.push(Token::Word(word));
    }
    Ok(tokens)
}

/// Split a shell-form body into simple commands on `&&`, `||`, `;` and `|`.
pub fn parse_shell(text: &str) -> Result<Vec<SimpleCommand>, ShellError> {
    let tokens = lex(text)?;
    let mut commands = Vec::new();
    let mut words: Vec<String> = Vec::new();
    let mut redirections: Vec<Redirection> = Vec::new();
    let mut pending_redirect: Option<String> = None;

    fn finish(
        words: &mut Vec<String>,
        redirections: &mut Vec<Redirection>,
        connector: Connector,
        commands: &mut Vec<SimpleCommand>,
    ) -> Result<(), ShellError> {
        if words.is_empty() && redirections.is_empty() {
            return Ok(());
        }
        let mut env_assignments = Vec::new();
        let mut rest = words.as_slice();
        while let Some(first) = rest.first() {
            if is_assignment(first) && rest.len() > 1 {
                env_assignments.push(first.clone());
                rest = &rest[1..];
            } else {
                break;
            }
        }
        let program = rest
            .first()
            .cloned()
            .ok_or_else(|| ShellError::UnsupportedConstruct("empty command".into()))?;
        if RESERVED_WORDS.contains(&program.as_str()) {
            return Err(ShellError::UnsupportedConstruct(format!(
                "reserved word `{program}`"
            )));
        }
        let argv: Vec<String> = rest[1..].to_vec();
        let (flags, positional): (Vec<String>, Vec<String>) = argv
            .iter()
            .cloned()
            .partition(|t| t.starts_with('-') && t.len() > 1);
        commands.push(SimpleCommand {
            program,
            flags,
            positional_args: positional,
            connector_to_next: connector,
            redirections: std::mem::take(redirections),
            env_assignments,
            argv,
        });
        words.clear();
        Ok(())
    }

    for token in tokens {
        match token {
            Token::Word(w) => {
                if let Some(op) = pending_redirect.take() {
                    redirections.push(Redirection {
                        direction: op,
                        target: w,
                    });
                } else {
                    words.push(w);
                }
            }
            Token::Op(op) => match op.as_str() {
                "&&" => finish(&mut words, &mut redirections, Connector::And, &mut commands)?,
                "||" => finish(&mut words, &mut redirections, Connector::Or, &mut commands)?,
                "|" => finish(&mut words, &mut redirections, Connector::Pipe, &mut commands)?,
                ";" => finish(
                    &mut words,
                    &mut redirections,
                    Connector::Sequence,
                    &mut commands,
                )?,
                _ if op.contains('&') => {
                    // fd duplication has no path target
                    redirections.push(Redirection {
                        direction: op,
                        target: String::new(),
                    });
                }
                _ => pending_redirect = Some(op),
            },
        }
    }
    if pending_redirect.is_some() {
        return Err(ShellError::UnsupportedConstruct(
            "redirection without target".into(),
        ));
    }
    finish(&mut words, &mut redirections, Connector::None, &mut commands)?;

    // A trailing `;` leaves the true last command marked Sequence.
    if let Some(last) = commands.last_mut() {
        if last.connector_to_next == Connector::Sequence {
            last.connector_to_next = Connector::None;
        }
    }
    Ok(commands)
}

/// Strip one layer of outer quotes from a token.
pub fn unquote(token: &str) -> String {
    let mut out = String::new();
    let mut chars = token.chars().peekable();
    let mut quote: Option<char> = None;
    while let Some(c) = chars.next() {
        match quote {
            Some(q) => {
                if c == q {
                    quote = None;
                } else if q == '"' && c == '\\' {
                    if let Some(&n) = chars.peek() {
                        out.push(n);
                        chars.next();
                    }
                } else {
                    out.push(c);
                }
            }
            None => match c {
                '"' | '\'' => quote = Some(c),
                '\\' => {
                    if let Some(&n) = chars.peek() {
                        out.push(n);
                        chars.next();
                    }
                }
                _ => out.push(c),
            },
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn splits_on_and() {
        let cmds = parse_shell("apt update && apt install -y wget").unwrap();
        assert_eq!(cmds.len(), 2);
        assert_eq!(cmds[0].program, "apt");
        assert_eq!(cmds[0].positional_args, vec!["update"]);
        assert_eq!(cmds[0].connector_to_next, Connector::And);
        assert_eq!(cmds[1].flags, vec!["-y"]);
        assert_eq!(cmds[1].positional_args, vec!["install", "wget"]);
        assert_eq!(cmds[1].connector_to_next, Connector::None);
    }

    #[test]
    fn single_command() {
        let cmds = parse_shell("echo hi").unwrap();
        assert_eq!(cmds.len(), 1);
        assert_eq!(cmds[0].program, "echo");
        assert_eq!(cmds[0].positional_args, vec!["hi"]);
        assert_eq!(cmds[0].connector_to_next, Connector::None);
    }

    #[test]
    fn semicolon_sequence() {
        let cmds = parse_shell("cd /app; make").unwrap();
        assert_eq!(cmds.len(), 2);
        assert_eq!(cmds[0].connector_to_next, Connector::Sequence);
        assert_eq!(cmds[1].program, "make");
        assert_eq!(cmds[1].connector_to_next, Connector::None);
    }

    #[test]
    fn pipes_and_quotes() {
        let cmds = parse_shell("echo 'a b' | grep \"a\"").unwrap();
        assert_eq!(cmds.len(), 2);
        assert_eq!(cmds[0].positional_args, vec!["'a b'"]);
        assert_eq!(cmds[0].connector_to_next, Connector::Pipe);
        assert_eq!(cmds[1].positional_args, vec!["\"a\""]);
    }

    #[test]
    fn unbalanced_quote_reports_offset() {
        let err = parse_shell("echo 'oops").unwrap_err();
        assert_eq!(err, ShellError::ShellParseError(5));
    }

    #[test]
    fn unsupported_constructs() {
        assert!(matches!(
            parse_shell("cat <(ls)").unwrap_err(),
            ShellError::UnsupportedConstruct(_)
        ));
        assert!(matches!(
            parse_shell("echo $(date)").unwrap_err(),
            ShellError::UnsupportedConstruct(_)
        ));
        assert!(matches!(
            parse_shell("if [ -f x ]; then echo y; fi").unwrap_err(),
            ShellError::UnsupportedConstruct(_)
        ));
        assert!(matches!(
            parse_shell("sleep 1 &").unwrap_err(),
            ShellError::UnsupportedConstruct(_)
        ));
    }

    #[test]
    fn redirections_captured() {
        let cmds = parse_shell("echo hi > /log/out.txt 2>&1").unwrap();
        assert_eq!(cmds.len(), 1);
        assert_eq!(
            cmds[0].redirections,
            vec![
                Redirection {
                    direction: ">".into(),
                    target: "/log/out.txt".into()
                },
                Redirection {
                    direction: "2>&1".into(),
                    target: String::new()
                },
            ]
        );
    }

    #[test]
    fn env_prefix_assignments() {
        let cmds = parse_shell("DEBIAN_FRONTEND=noninteractive apt-get install -y curl").unwrap();
        assert_eq!(cmds.len(), 1);
        assert_eq!(cmds[0].program, "apt-get");
        assert_eq!(cmds[0].env_assignments, vec!["DEBIAN_FRONTEND=noninteractive"]);
    }

    #[test]
    fn rejoin_reparse_fixpoint() {
        let sources = [
            "apt update && apt install -y wget",
            "echo hi",
            "cd /app; make",
            "echo 'a b' | grep \"a\" > /out",
            "VER=1 make build && make test || echo failed",
        ];
        for src in sources {
            let first = parse_shell(src).unwrap();
            let rejoined = rejoin_commands(&first);
            let second = parse_shell(&rejoined).unwrap();
            assert_eq!(first, second, "fixpoint failed for {src:?}");
        }
    }

    #[test]
    fn trailing_semicolon_last_connector_is_none() {
        let cmds = parse_shell("make;").unwrap();
        assert_eq!(cmds.len(), 1);
        assert_eq!(cmds[0].connector_to_next, Connector::None);
    }

    #[test]
    fn dollar_refs_kept_verbatim() {
        let cmds = parse_shell("cd ${HOME_DIR} && echo $USER").unwrap();
        assert_eq!(cmds[0].positional_args, vec!["${HOME_DIR}"]);
        assert_eq!(cmds[1].positional_args, vec!["$USER"]);
    }
}
