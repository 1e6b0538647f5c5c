//! History mining against synthetic git repositories.

use relayer_core::history::{collect_history, head_commit, ChangeKind, HistoryOptions};
use std::path::Path;
use std::process::Command;

fn git(dir: &Path, args: &[&str], date: &str) {
    let status = Command::new("git")
        .arg("-C")
        .arg(dir)
        .args(args)
        .env("GIT_AUTHOR_DATE", date)
        .env("GIT_COMMITTER_DATE", date)
        .env("GIT_AUTHOR_NAME", "fixture")
        .env("GIT_AUTHOR_EMAIL", "fixture@example.com")
        .env("GIT_COMMITTER_NAME", "fixture")
        .env("GIT_COMMITTER_EMAIL", "fixture@example.com")
        .status()
        .expect("git runs");
    assert!(status.success(), "git {args:?} failed");
}

fn write(dir: &Path, rel: &str, content: &str) {
    let path = dir.join(rel);
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).unwrap();
    }
    std::fs::write(path, content).unwrap();
}

fn init_repo(dir: &Path) {
    git(dir, &["init", "-q", "-b", "main"], "2025-01-01T10:00:00");
}

/// Three commits: initial Dockerfile, a Dockerfile line edit, and an edit
/// of a context file referenced by `COPY src/ /app`.
fn fixture_repo(dir: &Path) {
    init_repo(dir);
    write(
        dir,
        "Dockerfile",
        "FROM alpine:3.19\nENV PORT=8080\nCOPY src/ /app\nRUN make -C /app\nCMD [\"/app/run\"]\n",
    );
    write(dir, "src/main.c", "int main() { return 0; }\n");
    git(dir, &["add", "."], "2025-02-01T10:00:00");
    git(dir, &["commit", "-q", "-m", "initial"], "2025-02-01T10:00:00");

    write(
        dir,
        "Dockerfile",
        "FROM alpine:3.19\nENV PORT=9090\nCOPY src/ /app\nRUN make -C /app\nCMD [\"/app/run\"]\n",
    );
    git(dir, &["add", "."], "2025-03-01T10:00:00");
    git(dir, &["commit", "-q", "-m", "bump port"], "2025-03-01T10:00:00");

    write(dir, "src/main.c", "int main() { return 1; }\n");
    git(dir, &["add", "."], "2025-04-01T10:00:00");
    git(dir, &["commit", "-q", "-m", "fix exit"], "2025-04-01T10:00:00");
}

fn opts(as_of: &str) -> HistoryOptions {
    HistoryOptions {
        as_of: Some(
            chrono::DateTime::parse_from_rfc3339(as_of)
                .unwrap()
                .timestamp(),
        ),
        ..HistoryOptions::default()
    }
}

#[test]
fn empty_repo_yields_no_records() {
    let tmp = tempfile::tempdir().unwrap();
    init_repo(tmp.path());
    write(tmp.path(), "Dockerfile", "FROM alpine\n");
    write(tmp.path(), "README.md", "hi\n");
    git(tmp.path(), &["add", "README.md"], "2025-02-01T10:00:00");
    git(
        tmp.path(),
        &["commit", "-q", "-m", "unrelated"],
        "2025-02-01T10:00:00",
    );
    let records = collect_history(
        tmp.path(),
        Path::new("Dockerfile"),
        &opts("2025-05-01T00:00:00+00:00"),
    )
    .unwrap();
    assert!(records.is_empty());
}

#[test]
fn direct_and_implicit_records() {
    let tmp = tempfile::tempdir().unwrap();
    fixture_repo(tmp.path());

    let records = collect_history(
        tmp.path(),
        Path::new("Dockerfile"),
        &opts("2025-05-01T00:00:00+00:00"),
    )
    .unwrap();

    // Commit 1 adds five instructions + src/main.c, commit 2 edits ENV,
    // commit 3 edits src/main.c.
    let direct_edits: Vec<_> = records
        .iter()
        .filter(|r| r.instruction_kind == "ENV" && r.change_kind == ChangeKind::Modification)
        .collect();
    assert_eq!(direct_edits.len(), 1);
    assert_eq!(direct_edits[0].content, "ENV PORT=9090");
    assert_eq!(direct_edits[0].line_numbers, vec![2]);

    let implicit: Vec<_> = records.iter().filter(|r| r.is_implicit()).collect();
    assert_eq!(implicit.len(), 2, "initial add + later edit of src/main.c");
    assert!(implicit.iter().all(|r| r.content == "src/main.c"));
    // hint points at the COPY instruction (index 2)
    assert!(implicit.iter().all(|r| r.related_instruction_hint == Some(2)));
    assert!(implicit
        .iter()
        .any(|r| r.change_kind == ChangeKind::Modification));

    // the initial commit contributes addition records for all 5 instructions
    let additions = records
        .iter()
        .filter(|r| r.change_kind == ChangeKind::Addition && !r.is_implicit())
        .count();
    assert_eq!(additions, 5);
}

#[test]
fn window_excludes_old_commits() {
    let tmp = tempfile::tempdir().unwrap();
    fixture_repo(tmp.path());

    // As-of far in the future: a 30-month window starting 2030 excludes all
    // the 2025 commits.
    let records = collect_history(
        tmp.path(),
        Path::new("Dockerfile"),
        &opts("2030-01-01T00:00:00+00:00"),
    )
    .unwrap();
    assert!(records.is_empty());

    // A 40-month-old record is excluded at window 30 but kept at window 60.
    let mut o = opts("2028-07-01T00:00:00+00:00"); // ~40 months after 2025-03
    o.window_months = 60;
    let kept = collect_history(tmp.path(), Path::new("Dockerfile"), &o).unwrap();
    assert!(!kept.is_empty());
}

#[test]
fn not_a_repository_error() {
    let tmp = tempfile::tempdir().unwrap();
    write(tmp.path(), "Dockerfile", "FROM alpine\n");
    let err = collect_history(
        tmp.path(),
        Path::new("Dockerfile"),
        &HistoryOptions::default(),
    )
    .unwrap_err();
    assert!(matches!(
        err,
        relayer_core::history::HistoryError::NotARepository(_)
    ));
}

#[test]
fn dockerfile_not_found_error() {
    let tmp = tempfile::tempdir().unwrap();
    init_repo(tmp.path());
    let err = collect_history(
        tmp.path(),
        Path::new("Dockerfile"),
        &HistoryOptions::default(),
    )
    .unwrap_err();
    assert!(matches!(
        err,
        relayer_core::history::HistoryError::DockerfileNotFound(_)
    ));
}

#[test]
fn git_unavailable_error() {
    let tmp = tempfile::tempdir().unwrap();
    write(tmp.path(), "Dockerfile", "FROM alpine\n");
    let o = HistoryOptions {
        git_program: "definitely-not-git-anywhere".to_string(),
        ..HistoryOptions::default()
    };
    let err = collect_history(tmp.path(), Path::new("Dockerfile"), &o).unwrap_err();
    assert!(matches!(
        err,
        relayer_core::history::HistoryError::GitUnavailable(_)
    ));
}

#[test]
fn incremental_since_commit_mines_only_new_commits() {
    let tmp = tempfile::tempdir().unwrap();
    fixture_repo(tmp.path());
    let head = head_commit(tmp.path(), "git").unwrap();

    // nothing after HEAD
    let o = HistoryOptions {
        since_commit: Some(head.clone()),
        ..opts("2025-05-01T00:00:00+00:00")
    };
    let records = collect_history(tmp.path(), Path::new("Dockerfile"), &o).unwrap();
    assert!(records.is_empty());

    // one more commit after the remembered head
    write(tmp.path(), "src/main.c", "int main() { return 2; }\n");
    git(tmp.path(), &["add", "."], "2025-04-15T10:00:00");
    git(
        tmp.path(),
        &["commit", "-q", "-m", "again"],
        "2025-04-15T10:00:00",
    );
    let records = collect_history(tmp.path(), Path::new("Dockerfile"), &o).unwrap();
    assert_eq!(records.len(), 1);
    assert!(records[0].is_implicit());
}
