//! Path trie for containment queries over absolute paths and patterns.

use std::collections::BTreeMap;

/// A dictionary tree over path components. Inserted paths may contain
/// wildcard components; `*` at a level matches any single component and a
/// `*` inside a component is a glob within that component.
#[derive(Debug, Clone, Default)]
pub struct PathTrie {
    root: Node,
}

#[derive(Debug, Clone, Default)]
struct Node {
    children: BTreeMap<String, Node>,
    /// A path ends here (concrete file or pattern tail).
    terminal: bool,
}

fn components(path: &str) -> Vec<String> {
    path.split('/')
        .filter(|c| !c.is_empty() && *c != ".")
        .map(str::to_string)
        .collect()
}

fn component_matches(pattern: &str, concrete: &str) -> bool {
    if pattern == concrete || pattern == "*" {
        return true;
    }
    if pattern.contains('*') || pattern.contains('?') {
        return glob_match(pattern.as_bytes(), concrete.as_bytes());
    }
    false
}

fn glob_match(pattern: &[u8], text: &[u8]) -> bool {
    match (pattern.first(), text.first()) {
        (None, None) => true,
        (Some(b'*'), _) => {
            glob_match(&pattern[1..], text)
                || (!text.is_empty() && glob_match(pattern, &text[1..]))
        }
        (Some(b'?'), Some(_)) => glob_match(&pattern[1..], &text[1..]),
        (Some(p), Some(t)) if p == t => glob_match(&pattern[1..], &text[1..]),
        _ => false,
    }
}

impl PathTrie {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_paths<I, S>(paths: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut trie = Self::new();
        for p in paths {
            trie.insert(p.as_ref());
        }
        trie
    }

    pub fn insert(&mut self, path: &str) {
        let mut node = &mut self.root;
        for comp in components(path) {
            node = node.children.entry(comp).or_default();
        }
        node.terminal = true;
    }

    pub fn is_empty(&self) -> bool {
        self.root.children.is_empty() && !self.root.terminal
    }

    /// True when some inserted path is an ancestor of `path` or equal to it
    /// (a parent path matches a child path, never the reverse).
    pub fn contains(&self, path: &str) -> bool {
        fn walk(node: &Node, comps: &[String]) -> bool {
            if node.terminal {
                return true;
            }
            let Some(first) = comps.first() else {
                return false;
            };
            node.children
                .iter()
                .any(|(pat, child)| component_matches(pat, first) && walk(child, &comps[1..]))
        }
        walk(&self.root, &components(path))
    }

    /// True when an inserted path and `path` overlap in either direction:
    /// one is an ancestor-or-equal of the other.
    pub fn overlaps(&self, path: &str) -> bool {
        fn walk(node: &Node, comps: &[String]) -> bool {
            if node.terminal {
                return true;
            }
            match comps.first() {
                // `path` exhausted while inserted paths continue below:
                // `path` is an ancestor of something inserted.
                None => !node.children.is_empty(),
                Some(first) => node
                    .children
                    .iter()
                    .any(|(pat, child)| component_matches(pat, first) && walk(child, &comps[1..])),
            }
        }
        walk(&self.root, &components(path))
    }
}

/// Overlap between two path sets: some pair is ancestor-or-equal in either
/// direction. Returns a witness pair for edge evidence.
pub fn path_sets_overlap<'a, A, B>(outputs: A, inputs: B) -> Option<(String, String)>
where
    A: IntoIterator<Item = &'a String>,
    B: IntoIterator<Item = &'a String> + Clone,
{
    let inputs: Vec<&String> = inputs.into_iter().collect();
    for out in outputs {
        let out_trie = PathTrie::from_paths([out.as_str()]);
        for inp in &inputs {
            if out_trie.overlaps(inp) {
                return Some((out.clone(), (*inp).clone()));
            }
            // wildcard on the input side matching the concrete output
            let in_trie = PathTrie::from_paths([inp.as_str()]);
            if in_trie.overlaps(out) {
                return Some((out.clone(), (*inp).clone()));
            }
        }
    }
    None
}
