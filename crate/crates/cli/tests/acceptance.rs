//! Acceptance suite: one test per release criterion, each printing a
//! PASS line with its measured detail (run with `--nocapture` to see
//! them). Tolerances are pinned in the assertions.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use relayer_core::consistency::{compare_images, default_excludes, FakeInspector, Verdict};
use relayer_core::cost::{parse_buildkit_log, CostSource, CostTable};
use relayer_core::dockerfile::{parse_dockerfile, serialize};
use relayer_core::graph::{build_graph, DependencyGraph, EdgeKind};
use relayer_core::history::{
    compute_frequencies, filter_window, window_cutoff, ChangeKind, Matcher, ModificationRecord,
};
use relayer_core::optimizer::{
    brute_force_optimal, emit_dockerfile, optimize, total_cost, KeyRule, OptimizationOptions,
    OptimizationPlan,
};
use relayer_core::semantics::{extract_all, CommandKnowledgeRegistry};
use relayer_core::simulator::{replay, simulate_rebuild_cost, ModificationEvent};
use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::time::Instant;

fn pass(name: &str, detail: &str, started: Instant) {
    println!(
        "[PASS] {name}: {detail} ({:.2}s)",
        started.elapsed().as_secs_f64()
    );
}

fn uniform_cost_table(n: usize) -> CostTable {
    CostTable {
        seconds: vec![1.0; n],
        source: CostSource::Estimated,
        repeats: 0,
        alignment_estimated: false,
    }
}

fn cost_table(seconds: &[f64]) -> CostTable {
    CostTable {
        seconds: seconds.to_vec(),
        source: CostSource::Loaded,
        repeats: 0,
        alignment_estimated: false,
    }
}

// -------------------------------------------------------------------------
// 1. Cost-model oracle
// -------------------------------------------------------------------------
#[test]
fn criterion_01_cost_model_oracle() {
    let t = Instant::now();
    let f = [0.5, 0.3, 0.2];
    let b = [10.0, 5.0, 2.0];
    assert_eq!(total_cost(&[0, 1, 2], &f, &b), 11.0);
    assert_eq!(total_cost(&[2, 1, 0], &f, &b), 12.9);
    let g = DependencyGraph::from_edges(3, &[]).unwrap();
    let (_, best) = brute_force_optimal(&g, &f, &b, 10).unwrap();
    assert_eq!(best, 11.0);
    pass(
        "cost-model-oracle",
        "total_cost 11.0 / 12.9 exact, brute force optimum 11.0",
        t,
    );
}

// -------------------------------------------------------------------------
// 2. Greedy validity on 1000 random DAGs
// -------------------------------------------------------------------------
#[test]
fn criterion_02_greedy_validity() {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5EED_0002);
    let mut checked = 0usize;
    for case in 0..1000 {
        let n = rng.gen_range(1..=50);
        let density: f64 = rng.gen_range(0.0..0.5);
        let mut edges = Vec::new();
        for a in 0..n {
            for b in (a + 1)..n {
                if rng.gen_bool(density) {
                    edges.push((a, b));
                }
            }
        }
        let graph = DependencyGraph::from_edges(n, &edges).unwrap();
        let freq: Vec<f64> = (0..n).map(|_| rng.gen_range(0.001..1.0)).collect();
        let cost: Vec<f64> = (0..n).map(|_| rng.gen_range(0.01..100.0)).collect();
        let rule = if case % 2 == 0 {
            KeyRule::Paper
        } else {
            KeyRule::Ratio
        };
        let plan = optimize(
            &graph,
            &freq,
            &cost,
            &OptimizationOptions {
                key_rule: rule,
                ..Default::default()
            },
        )
        .unwrap();

        let mut pos = vec![0usize; n];
        let mut sorted = plan.optimized_order.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..n).collect::<Vec<_>>(), "not a permutation");
        for (p, &i) in plan.optimized_order.iter().enumerate() {
            pos[i] = p;
        }
        for &(a, b) in &edges {
            assert!(pos[a] < pos[b], "edge ({a},{b}) violated in case {case}");
        }
        assert!(
            plan.cost_after <= plan.cost_before,
            "safeguard violated in case {case}: {} > {}",
            plan.cost_after,
            plan.cost_before
        );
        checked += 1;
    }
    pass(
        "greedy-validity",
        &format!("{checked}/1000 random DAGs: topological order and cost_after <= cost_before"),
        t,
    );
}

// -------------------------------------------------------------------------
// 3. Oracle equivalence of the ratio key on edge-free instances
// -------------------------------------------------------------------------
#[test]
fn criterion_03_oracle_equivalence() {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5EED_0003);
    let mut paper_gap_max = 0.0f64;
    let mut paper_gap_sum = 0.0f64;
    for draw in 0..200 {
        let n = 2 + (draw % 7); // sizes 2..=8
        let graph = DependencyGraph::from_edges(n, &[]).unwrap();
        let freq: Vec<f64> = (0..n).map(|_| rng.gen_range(0.001..1.0)).collect();
        let cost: Vec<f64> = (0..n).map(|_| rng.gen_range(0.01..100.0)).collect();

        let ratio = optimize(
            &graph,
            &freq,
            &cost,
            &OptimizationOptions {
                key_rule: KeyRule::Ratio,
                safeguard: false,
                ..Default::default()
            },
        )
        .unwrap();
        let (_, best) = brute_force_optimal(&graph, &freq, &cost, 10).unwrap();
        assert_eq!(
            ratio.cost_after, best,
            "ratio key not optimal on draw {draw} (n={n})"
        );

        let paper = optimize(
            &graph,
            &freq,
            &cost,
            &OptimizationOptions {
                key_rule: KeyRule::Paper,
                safeguard: false,
                ..Default::default()
            },
        )
        .unwrap();
        let gap = (paper.cost_after - best) / best;
        paper_gap_max = paper_gap_max.max(gap);
        paper_gap_sum += gap;
    }
    pass(
        "oracle-equivalence",
        &format!(
            "ratio == brute force on 200/200 draws; paper-key gap mean {:.4}, max {:.4}",
            paper_gap_sum / 200.0,
            paper_gap_max
        ),
        t,
    );
}

// -------------------------------------------------------------------------
// 4. Dependency-rule oracle on the curated corpus
// -------------------------------------------------------------------------
type Edge = (usize, usize, EdgeKind);

fn corpus_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures/corpus")
}

fn graph_edges(text: &str) -> BTreeSet<Edge> {
    let doc = parse_dockerfile(text).unwrap();
    let reg = CommandKnowledgeRegistry::builtin();
    let els = extract_all(&doc, &reg);
    build_graph(&doc, &els)
        .unwrap()
        .edges()
        .iter()
        .map(|e| (e.from_index, e.to_index, e.kind))
        .collect()
}

#[test]
fn criterion_04_dependency_rule_oracle() {
    let t = Instant::now();
    use EdgeKind::{Context, FileDir, Other, Package, User, Variable};
    // Hand-derived complete edge sets, one entry per corpus file.
    let expectations: Vec<(&str, Vec<Edge>)> = vec![
        (
            "c01_python_app.Dockerfile",
            vec![
                (0, 1, Other), (0, 2, Other), (0, 3, Other), (0, 4, Other), (0, 5, Other),
                (0, 6, Other), (2, 3, Context), (2, 4, Context), (2, 5, Context),
                (2, 6, Context), (3, 4, FileDir),
            ],
        ),
        (
            "c02_var_def_use.Dockerfile",
            vec![
                (0, 1, Other), (0, 2, Other), (0, 3, Other), (0, 4, Other), (0, 5, Other),
                (1, 2, Variable), (2, 3, Variable), (2, 4, Variable), (4, 5, Variable),
            ],
        ),
        (
            "c03_user_switch.Dockerfile",
            vec![
                (0, 1, Other), (0, 2, Other), (0, 3, Other), (0, 4, Other), (0, 5, Other),
                (1, 2, User), (2, 3, User), (2, 4, User), (4, 5, User),
            ],
        ),
        (
            "c04_apt_pipeline.Dockerfile",
            vec![
                (0, 1, Other), (0, 2, Other), (0, 3, Other), (0, 4, Other),
                (1, 2, FileDir), (2, 3, Package), (3, 4, FileDir),
            ],
        ),
        (
            "c05_workdir_chain.Dockerfile",
            vec![
                (0, 1, Other), (0, 2, Other), (0, 3, Other), (0, 4, Other), (0, 5, Other),
                (1, 2, Context), (2, 3, Context), (2, 5, Context),
            ],
        ),
        (
            "c06_multistage.Dockerfile",
            vec![
                (0, 1, Other), (0, 2, Other), (0, 3, Other), (1, 2, Context), (1, 3, Context),
                (2, 3, FileDir), (4, 5, Other), (4, 6, Other), (3, 5, Other),
            ],
        ),
        (
            "c07_opaque_shell.Dockerfile",
            vec![
                (0, 1, Other), (0, 2, Other), (0, 3, Other), (0, 4, Other),
                (1, 2, FileDir), (2, 4, FileDir), (3, 4, FileDir),
            ],
        ),
        (
            "c08_pinned_kinds.Dockerfile",
            vec![
                (0, 1, Other), (0, 2, Other), (0, 3, Other), (0, 4, Other),
                (1, 2, Other), (2, 3, Other), (2, 4, Other), (1, 4, Other), (3, 4, Other),
            ],
        ),
        (
            "c09_duplicate_cmd.Dockerfile",
            vec![(0, 1, Other), (0, 2, Other), (0, 3, Other), (1, 3, Other)],
        ),
        (
            "c10_preamble_args.Dockerfile",
            vec![
                (0, 2, Other), (0, 2, Variable), (1, 2, Other), (1, 2, Variable),
                (0, 4, Other), (0, 4, Variable), (1, 4, Other), (2, 3, Other),
                (4, 5, Other), (3, 5, Other),
            ],
        ),
        (
            "c11_shell_env_ctx.Dockerfile",
            vec![
                (0, 1, Other), (0, 2, Other), (0, 3, Other), (0, 4, Other),
                (1, 3, Context), (1, 4, Context), (2, 3, Variable),
            ],
        ),
        (
            "c12_node_layers.Dockerfile",
            vec![
                (0, 1, Other), (0, 2, Other), (0, 3, Other), (0, 4, Other), (1, 2, FileDir),
            ],
        ),
    ];
    assert_eq!(expectations.len(), 12);
    for (name, expected) in &expectations {
        let text = std::fs::read_to_string(corpus_dir().join(name)).unwrap();
        let actual = graph_edges(&text);
        let expected: BTreeSet<Edge> = expected.iter().copied().collect();
        assert_eq!(actual, expected, "{name}");
    }
    pass(
        "dependency-rule-oracle",
        "12/12 corpus files match the hand-derived edge sets exactly",
        t,
    );
}

// -------------------------------------------------------------------------
// 5. Frequency normalization, window soundness, strict-match codomain
// -------------------------------------------------------------------------
#[test]
fn criterion_05_frequency_normalization() {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5EED_0005);
    let text = "FROM python:3.11\nENV PORT=8080\nCOPY src/ /app/src\nRUN pip install flask\nCMD [\"python\"]\n";
    let doc = parse_dockerfile(text).unwrap();
    let reg = CommandKnowledgeRegistry::builtin();
    let els = extract_all(&doc, &reg);

    let kinds = ["ENV", "COPY", "RUN", "FROM", "CMD", "FILE"];
    let contents = [
        "ENV PORT=9090",
        "COPY src/x.py /app/src",
        "RUN pip install flask gunicorn",
        "FROM python:3.12",
        "CMD [\"python\", \"-m\", \"app\"]",
        "src/x.py",
    ];
    let as_of = 1_750_000_000i64;

    for case in 0..100 {
        let m = rng.gen_range(1..40);
        let records: Vec<ModificationRecord> = (0..m)
            .map(|_| {
                let k = rng.gen_range(0..kinds.len());
                ModificationRecord {
                    commit_id: format!("c{case}"),
                    instruction_kind: kinds[k].to_string(),
                    content: contents[k].to_string(),
                    date: as_of - rng.gen_range(0..86_400 * 300),
                    change_kind: ChangeKind::Modification,
                    line_numbers: vec![1],
                    related_instruction_hint: None,
                }
            })
            .collect();
        let matcher = Matcher::new(&doc, &els, &records, 0.5);
        let table = compute_frequencies(&matcher, &records, 30);
        let sum: f64 = table.normalized.iter().sum();
        assert!(
            (sum - 1.0).abs() <= 1e-9,
            "normalization off in case {case}: {sum}"
        );

        // strict-match categories return exactly 0 or 1
        for r in &records {
            for i in 0..doc.instructions.len() {
                let kind = doc.instructions[i].kind;
                let strict = r.is_implicit()
                    || !matches!(
                        relayer_core::history::classify(kind),
                        relayer_core::history::MatchCategory::ShellScript
                    );
                if strict {
                    let s = matcher.similarity(i, r);
                    assert!(s == 0.0 || s == 1.0, "strict similarity {s} not in {{0,1}}");
                }
            }
        }
    }

    // the 30-month window excludes all older records
    let cutoff = window_cutoff(as_of, 30);
    let old = ModificationRecord {
        commit_id: "old".into(),
        instruction_kind: "RUN".into(),
        content: "RUN pip install flask".into(),
        date: cutoff - 1,
        change_kind: ChangeKind::Modification,
        line_numbers: vec![1],
        related_instruction_hint: None,
    };
    let kept = filter_window(vec![old], 30, as_of);
    assert!(kept.is_empty(), "window failed to exclude an older record");

    pass(
        "frequency-normalization",
        "100 random record sets: sum F_norm = 1 +/- 1e-9; strict sims in {0,1}; window sound",
        t,
    );
}

// -------------------------------------------------------------------------
// 6. Simulator consistency with the cost model
// -------------------------------------------------------------------------
#[test]
fn criterion_06_simulator_consistency() {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5EED_0006);
    for case in 0..50 {
        let n = rng.gen_range(2..10);
        let seconds: Vec<f64> = (0..n).map(|_| rng.gen_range(0.1..60.0)).collect();
        let cost = cost_table(&seconds);
        // a random order to evaluate under
        let mut order: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            let j = rng.gen_range(0..=i);
            order.swap(i, j);
        }
        // empirical single-instruction event distribution
        let m = rng.gen_range(5..50);
        let events: Vec<ModificationEvent> = (0..m)
            .map(|k| ModificationEvent {
                modified_indices: BTreeSet::from([rng.gen_range(0..n)]),
                timestamp: k as i64,
            })
            .collect();
        let mut freq = vec![0.0f64; n];
        for e in &events {
            for &i in &e.modified_indices {
                freq[i] += 1.0 / m as f64;
            }
        }
        let expected: f64 = events
            .iter()
            .map(|e| simulate_rebuild_cost(&order, e, &cost).unwrap())
            .sum::<f64>()
            / m as f64;
        let model = total_cost(&order, &freq, &seconds);
        let rel = (expected - model).abs() / model.abs().max(1e-12);
        assert!(rel <= 1e-9, "case {case}: relative error {rel}");

        // multi-index events never double count
        let a = rng.gen_range(0..n);
        let b = rng.gen_range(0..n);
        let multi = ModificationEvent {
            modified_indices: BTreeSet::from([a, b]),
            timestamp: 0,
        };
        let pos = |x: usize| order.iter().position(|&v| v == x).unwrap();
        let first = if pos(a) <= pos(b) { a } else { b };
        let single = ModificationEvent {
            modified_indices: BTreeSet::from([first]),
            timestamp: 0,
        };
        assert_eq!(
            simulate_rebuild_cost(&order, &multi, &cost).unwrap(),
            simulate_rebuild_cost(&order, &single, &cost).unwrap(),
            "double counting in case {case}"
        );
    }
    pass(
        "simulator-consistency",
        "50 fixtures: E[rebuild cost] == total_cost to 1e-9 relative; no double counting",
        t,
    );
}

// -------------------------------------------------------------------------
// 7. Qualitative motivating-example reproduction
// -------------------------------------------------------------------------
#[test]
fn criterion_07_motivating_example() {
    let t = Instant::now();
    // volatile COPY before a stable, expensive RUN pip3 install, and no
    // dependency between them (disjoint paths)
    let text = "FROM python:3.9\nCOPY app.py /srv/app.py\nRUN pip3 install flask\nCMD [\"python3\", \"/srv/app.py\"]\n";
    let doc = parse_dockerfile(text).unwrap();
    let reg = CommandKnowledgeRegistry::builtin();
    let els = extract_all(&doc, &reg);
    let graph = build_graph(&doc, &els).unwrap();
    assert!(
        !graph
            .edges()
            .iter()
            .any(|e| e.from_index == 1 && e.to_index == 2),
        "fixture broken: COPY->RUN edge exists"
    );

    // COPY volatile, RUN stable and expensive
    let freq = [0.05, 0.75, 0.10, 0.10];
    let cost = cost_table(&[5.0, 0.2, 60.0, 0.1]);
    let plan = optimize(
        &graph,
        &freq,
        &cost.seconds,
        &OptimizationOptions::default(),
    )
    .unwrap();
    let pos = |i: usize| plan.optimized_order.iter().position(|&x| x == i).unwrap();
    assert!(
        pos(2) < pos(1),
        "RUN pip3 install was not moved before COPY: {:?}",
        plan.optimized_order
    );

    // replay: most events touch the COPY
    let events: Vec<ModificationEvent> = (0..10)
        .map(|k| ModificationEvent {
            modified_indices: BTreeSet::from([if k % 5 == 0 { 2 } else { 1 }]),
            timestamp: k,
        })
        .collect();
    let report = replay(
        &events,
        &plan.original_order,
        &plan.optimized_order,
        &cost,
    )
    .unwrap();
    assert!(
        report.efficiency > 0.0,
        "replay efficiency not strictly positive: {}",
        report.efficiency
    );
    pass(
        "motivating-example",
        &format!(
            "RUN moved before COPY; replay efficiency {:.3} > 0",
            report.efficiency
        ),
        t,
    );
}

// -------------------------------------------------------------------------
// 8. BuildKit log parsing
// -------------------------------------------------------------------------
#[test]
fn criterion_08_buildkit_log_parsing() {
    let t = Instant::now();
    let log = "\
#1 [internal] load build definition from Dockerfile
#1 transferring dockerfile: 123B done
#1 DONE 0.1s
#2 [1/3] FROM docker.io/library/alpine:3.19
#2 resolve docker.io/library/alpine:3.19 0.2s done
#2 DONE 0.0s
random interleaved noise line
#2 DONE 1.5s
#3 [2/3] RUN apk add --no-cache python3
#3 4.012 fetch https://dl-cdn.alpinelinux.org/...
#3 DONE 12.7s
#4 [3/3] COPY . /app
#4 DONE 0.3s
#5 exporting to image
#5 DONE 0.9s
";
    let map = parse_buildkit_log(log).unwrap();
    let expected: std::collections::BTreeMap<u32, f64> =
        [(1, 0.1), (2, 1.5), (3, 12.7), (4, 0.3), (5, 0.9)]
            .into_iter()
            .collect();
    assert_eq!(map, expected, "repeated stage must take the last DONE");

    assert!(parse_buildkit_log("").is_err());
    assert!(parse_buildkit_log("no stages at all\n").is_err());
    let single = parse_buildkit_log("#7 DONE 3.4s\n").unwrap();
    assert_eq!(single, [(7u32, 3.4f64)].into_iter().collect());
    pass(
        "buildkit-log-parsing",
        "exact stage maps incl. repeated stages and interleaved noise",
        t,
    );
}

// -------------------------------------------------------------------------
// 9. Round-trip and reorder emission
// -------------------------------------------------------------------------
#[test]
fn criterion_09_round_trip() {
    let t = Instant::now();
    let dir = corpus_dir();
    let mut files = 0;
    for entry in std::fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().map(|e| e == "Dockerfile") != Some(true) {
            continue;
        }
        let text = std::fs::read_to_string(&path).unwrap();
        let doc = parse_dockerfile(&text).unwrap();
        assert_eq!(serialize(&doc), text, "{} not byte-identical", path.display());
        files += 1;
    }
    assert_eq!(files, 12);

    // a reorder plan re-parses to exactly the planned order
    let text = std::fs::read_to_string(dir.join("c01_python_app.Dockerfile")).unwrap();
    let doc = parse_dockerfile(&text).unwrap();
    let reg = CommandKnowledgeRegistry::builtin();
    let els = extract_all(&doc, &reg);
    let graph = build_graph(&doc, &els).unwrap();
    let freq = [0.05, 0.05, 0.05, 0.4, 0.1, 0.3, 0.05];
    let cost = [3.0, 0.1, 0.1, 0.5, 45.0, 0.5, 0.1];
    let plan = optimize(&graph, &freq, &cost, &OptimizationOptions::default()).unwrap();
    let emitted = emit_dockerfile(&doc, &plan);
    let reparsed = parse_dockerfile(&emitted).unwrap();
    let emitted_kinds: Vec<_> = reparsed.instructions.iter().map(|i| i.kind).collect();
    let planned_kinds: Vec<_> = plan
        .optimized_order
        .iter()
        .map(|&i| doc.instructions[i].kind)
        .collect();
    assert_eq!(emitted_kinds, planned_kinds, "emitted order != planned");
    pass(
        "round-trip",
        "12/12 corpus files byte-identical; reordered emission re-parses to plan order",
        t,
    );
}

// -------------------------------------------------------------------------
// 10. Consistency checker on fake inspectors
// -------------------------------------------------------------------------
#[test]
fn criterion_10_consistency_checker() {
    let t = Instant::now();
    let image = FakeInspector::new("img")
        .file("/bin/sh", "shell")
        .file("/app/main.py", "code")
        .env("PATH", "/usr/bin")
        .package("pip", "flask")
        .with_workdir("/app");

    // reflexivity
    let same = compare_images(&image, &image, &default_excludes()).unwrap();
    assert_eq!(same.verdict, Verdict::Equivalent);

    // HOSTNAME/PWD exclusion
    let mut with_dynamic = image.clone();
    with_dynamic.env_vars.insert("HOSTNAME".into(), "h1".into());
    with_dynamic.env_vars.insert("PWD".into(), "/tmp".into());
    let excl = compare_images(&image, &with_dynamic, &default_excludes()).unwrap();
    assert!(excl.env_equal);
    assert_eq!(excl.verdict, Verdict::Equivalent);

    // single-package diff detection
    let mut extra_pkg = image.clone();
    extra_pkg.packages.get_mut("pip").unwrap().insert("gunicorn".into());
    let diff = compare_images(&image, &extra_pkg, &default_excludes()).unwrap();
    assert!(!diff.pkg_equal);
    assert_eq!(diff.verdict, Verdict::SimilarWithDiffs);
    assert_eq!(diff.pkg_diffs[0].only_right, vec!["gunicorn".to_string()]);
    pass(
        "consistency-checker",
        "reflexivity, HOSTNAME/PWD exclusion and one-package diff all detected",
        t,
    );
}

// -------------------------------------------------------------------------
// 11. End-to-end `run` on a synthetic git fixture
// -------------------------------------------------------------------------
fn git(dir: &Path, args: &[&str], epoch: i64) {
    let date = format!("{epoch} +0000");
    let status = std::process::Command::new("git")
        .arg("-C")
        .arg(dir)
        .args(args)
        .env("GIT_AUTHOR_DATE", &date)
        .env("GIT_COMMITTER_DATE", &date)
        .env("GIT_AUTHOR_NAME", "fixture")
        .env("GIT_AUTHOR_EMAIL", "f@example.com")
        .env("GIT_COMMITTER_NAME", "fixture")
        .env("GIT_COMMITTER_EMAIL", "f@example.com")
        .status()
        .unwrap();
    assert!(status.success());
}

#[test]
fn criterion_11_end_to_end() {
    let t = Instant::now();
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let now = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .unwrap()
        .as_secs() as i64;
    const DAY: i64 = 86_400;

    // 3 commits: initial, one Dockerfile edit, one implicit file edit
    std::fs::create_dir_all(dir.join("src")).unwrap();
    let v1 = "FROM python:3.11\nENV PORT=8080\nCOPY src/ /app/src\nRUN pip install flask\nCMD [\"python\", \"/app/src/app.py\"]\n";
    let v2 = "FROM python:3.11\nENV PORT=9090\nCOPY src/ /app/src\nRUN pip install flask\nCMD [\"python\", \"/app/src/app.py\"]\n";
    std::fs::write(dir.join("Dockerfile"), v1).unwrap();
    std::fs::write(dir.join("src/app.py"), "print(1)\n").unwrap();
    git(dir, &["init", "-q", "-b", "main"], now - 80 * DAY);
    git(dir, &["add", "."], now - 80 * DAY);
    git(dir, &["commit", "-q", "-m", "initial"], now - 80 * DAY);
    std::fs::write(dir.join("Dockerfile"), v2).unwrap();
    git(dir, &["add", "."], now - 50 * DAY);
    git(dir, &["commit", "-q", "-m", "edit env"], now - 50 * DAY);
    std::fs::write(dir.join("src/app.py"), "print(2)\n").unwrap();
    git(dir, &["add", "."], now - 20 * DAY);
    git(dir, &["commit", "-q", "-m", "edit app"], now - 20 * DAY);

    let report_path = dir.join("report.json");
    let out = std::process::Command::new(env!("CARGO_BIN_EXE_relayer"))
        .args([
            "run",
            dir.join("Dockerfile").to_str().unwrap(),
            "--repo",
            dir.to_str().unwrap(),
            "--report",
            report_path.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "run failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert_eq!(out.status.code(), Some(0));

    // recompute the module-level oracles through the library and compare
    let report: relayer_cli::RunReport =
        serde_json::from_str(&std::fs::read_to_string(&report_path).unwrap()).unwrap();

    let doc = parse_dockerfile(v2).unwrap();
    let reg = CommandKnowledgeRegistry::builtin();
    let els = extract_all(&doc, &reg);
    let graph = build_graph(&doc, &els).unwrap();
    let records = relayer_core::history::collect_history(
        dir,
        Path::new("Dockerfile"),
        &relayer_core::history::HistoryOptions::default(),
    )
    .unwrap();
    assert!(
        records.iter().any(|r| r.is_implicit()),
        "expected an implicit record for src/app.py"
    );
    assert!(
        records.iter().any(|r| r.instruction_kind == "ENV"),
        "expected a direct ENV record"
    );
    let matcher = Matcher::new(&doc, &els, &records, 0.5);
    let freq = compute_frequencies(&matcher, &records, 30);
    let costs = uniform_cost_table(doc.instructions.len());
    let plan: OptimizationPlan = optimize(
        &graph,
        &freq.normalized,
        &costs.seconds,
        &OptimizationOptions::default(),
    )
    .unwrap();

    assert_eq!(report.instructions, 5);
    assert_eq!(report.frequencies, freq.normalized, "frequency mismatch");
    assert_eq!(report.costs, costs.seconds);
    assert_eq!(report.order_after, plan.optimized_order);
    assert_eq!(report.cost_before, plan.cost_before);
    assert_eq!(report.cost_after, plan.cost_after);
    assert!(report.efficiency.is_some(), "replay efficiency missing");

    let emitted = dir.join("Dockerfile.optimized");
    assert!(emitted.exists());
    let reparsed = parse_dockerfile(&std::fs::read_to_string(&emitted).unwrap()).unwrap();
    let emitted_kinds: Vec<_> = reparsed.instructions.iter().map(|i| i.kind).collect();
    let planned_kinds: Vec<_> = plan
        .optimized_order
        .iter()
        .map(|&i| doc.instructions[i].kind)
        .collect();
    assert_eq!(emitted_kinds, planned_kinds);

    pass(
        "end-to-end",
        &format!(
            "exit 0; report matches library oracles (cost {:.3} -> {:.3})",
            report.cost_before, report.cost_after
        ),
        t,
    );
}
