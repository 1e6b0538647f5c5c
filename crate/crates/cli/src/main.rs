//! `relayer` — reorder Dockerfile instructions to cut expected rebuild
//! cost, using the dependency graph, per-instruction modification
//! frequencies mined from git history, and per-instruction build times.

use clap::{Args, Parser, Subcommand, ValueEnum};
use relayer_cli::{
    env_excludes, load_registry, mine_records, read_dockerfile, run_pipeline,
    runtime_program_from_env, write_efficiency_csv, write_json, write_sweep_csv, CliError,
    CostSourceConfig, RunConfig,
};
use relayer_core::consistency::{
    compare_images, ContainerCliInspector, DirectoryInspector, ImageInspector,
};
use relayer_core::cost::{load_costs, measure_costs, CostTable, DockerCliAdapter};
use relayer_core::graph::{build_graph, export_graph, ExportFormat};
use relayer_core::history::{compute_frequencies, Matcher};
use relayer_core::optimizer::{optimize, KeyRule, OptimizationOptions};
use relayer_core::semantics::extract_all;
use relayer_core::simulator::{
    events_from_records, replay, sweep_usage_interval, ModificationEvent,
};
use std::path::PathBuf;

#[derive(Parser)]
#[command(
    name = "relayer",
    version,
    about = "Cache-aware Dockerfile instruction reordering"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum KeyRuleArg {
    Paper,
    Ratio,
}

impl From<KeyRuleArg> for KeyRule {
    fn from(k: KeyRuleArg) -> KeyRule {
        match k {
            KeyRuleArg::Paper => KeyRule::Paper,
            KeyRuleArg::Ratio => KeyRule::Ratio,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum GraphFormat {
    Dot,
    Json,
}

#[derive(Args)]
struct FreqArgs {
    /// Git repository to mine (work tree containing the Dockerfile).
    #[arg(long)]
    repo: Option<PathBuf>,
    /// History window in months.
    #[arg(long, default_value_t = 30)]
    window_months: u32,
    /// Shell-text similarity threshold.
    #[arg(long, default_value_t = 0.5)]
    tau: f64,
    /// Treat all instructions as equally likely to change.
    #[arg(long)]
    uniform_freq: bool,
    /// Record cache path (JSON); enables incremental mining.
    #[arg(long)]
    records: Option<PathBuf>,
}

#[derive(Args)]
struct CostArgs {
    /// JSON cost table (index -> seconds).
    #[arg(long)]
    costs: Option<PathBuf>,
    /// Assign build cost 1.0 everywhere.
    #[arg(long)]
    uniform_cost: bool,
    /// Measure with the container runtime.
    #[arg(long)]
    measure: bool,
    /// Build repetitions when measuring.
    #[arg(long, default_value_t = 3)]
    repeats: u32,
    /// Build context directory (defaults to the Dockerfile's directory).
    #[arg(long)]
    context: Option<PathBuf>,
}

#[derive(Args)]
struct OptimizeArgs {
    /// Ready-node key rule.
    #[arg(long, value_enum, default_value = "paper")]
    key: KeyRuleArg,
    /// Keep insertion-time keys (no refresh at pops).
    #[arg(long)]
    stale_keys: bool,
    /// Disable the no-regression fallback to the original order.
    #[arg(long)]
    no_safeguard: bool,
    /// JSON partition of instruction indices into readability groups.
    #[arg(long)]
    groups: Option<PathBuf>,
    /// Drop all dependency edges before scheduling (ablation knob).
    #[arg(long)]
    ignore_deps: bool,
    /// Command knowledge registry (JSON); defaults to the built-in.
    #[arg(long)]
    registry: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Parse a Dockerfile to structured JSON.
    Parse {
        dockerfile: PathBuf,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Emit per-instruction semantic elements as JSON.
    Elements {
        dockerfile: PathBuf,
        /// Command knowledge registry (JSON); defaults to the built-in.
        #[arg(long)]
        registry: Option<PathBuf>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Build and export the dependency graph.
    Graph {
        dockerfile: PathBuf,
        #[arg(long)]
        registry: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "dot")]
        format: GraphFormat,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Mine modification records and compute frequencies.
    Freq {
        dockerfile: PathBuf,
        #[command(flatten)]
        freq: FreqArgs,
        /// Dump mined records here (doubles as the cache file).
        #[arg(long)]
        records_out: Option<PathBuf>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Obtain per-instruction build costs.
    Cost {
        #[command(subcommand)]
        action: CostCommand,
    },
    /// Reorder instructions to minimize expected rebuild cost.
    Optimize {
        dockerfile: PathBuf,
        #[command(flatten)]
        freq: FreqArgs,
        #[command(flatten)]
        cost: CostArgs,
        #[command(flatten)]
        opt: OptimizeArgs,
        /// Write the reordered Dockerfile here.
        #[arg(long)]
        emit: Option<PathBuf>,
        /// Write the optimization plan (JSON) here.
        #[arg(long)]
        report: Option<PathBuf>,
        /// Compute and print the plan without writing files.
        #[arg(long)]
        dry_run: bool,
    },
    /// Replay modification history against original and optimized orders.
    Simulate {
        dockerfile: PathBuf,
        /// JSON event list, or a git repository to mine live.
        #[arg(long)]
        history: PathBuf,
        #[command(flatten)]
        freq: FreqArgs,
        #[command(flatten)]
        cost: CostArgs,
        #[command(flatten)]
        opt: OptimizeArgs,
        /// Also sweep re-optimization intervals 1..=N.
        #[arg(long)]
        interval: Option<usize>,
        #[arg(long)]
        report: Option<PathBuf>,
        /// Per-event rows (CSV) for plotting.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Compare two images on the four consistency proxies.
    Verify {
        #[arg(long)]
        image_a: String,
        #[arg(long)]
        image_b: String,
        /// Extra environment variables to exclude (repeatable).
        #[arg(long = "exclude-env")]
        exclude_env: Vec<String>,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Full pipeline: parse, analyze, mine, cost, optimize, emit.
    Run {
        dockerfile: PathBuf,
        #[command(flatten)]
        freq: FreqArgs,
        #[command(flatten)]
        cost: CostArgs,
        #[command(flatten)]
        opt: OptimizeArgs,
        /// Directory for step artifacts (elements/graph/freq/cost JSON).
        #[arg(long)]
        out_dir: Option<PathBuf>,
        /// Suffix for the emitted Dockerfile.
        #[arg(long, default_value = ".optimized")]
        suffix: String,
        #[arg(long)]
        emit: Option<PathBuf>,
        #[arg(long)]
        report: Option<PathBuf>,
        /// Report only; write no files.
        #[arg(long)]
        dry_run: bool,
    },
}

#[derive(Subcommand)]
enum CostCommand {
    /// Measure builds through the container runtime.
    Measure {
        dockerfile: PathBuf,
        #[arg(long, default_value_t = 3)]
        repeats: u32,
        #[arg(long)]
        context: Option<PathBuf>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Load a JSON cost table.
    Load {
        path: PathBuf,
        dockerfile: PathBuf,
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

fn emit<T: serde::Serialize>(value: &T, output: Option<&PathBuf>) -> Result<(), CliError> {
    match output {
        Some(path) => write_json(path, value),
        None => {
            let text = serde_json::to_string_pretty(value)
                .map_err(|e| CliError::Internal(e.to_string()))?;
            println!("{text}");
            Ok(())
        }
    }
}

fn emit_text(text: &str, output: Option<&PathBuf>) -> Result<(), CliError> {
    match output {
        Some(path) => {
            std::fs::write(path, text).map_err(|e| CliError::Internal(e.to_string()))
        }
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

fn config_from_parts(
    dockerfile: PathBuf,
    freq: &FreqArgs,
    cost: &CostArgs,
    opt: &OptimizeArgs,
) -> RunConfig {
    RunConfig {
        dockerfile,
        repo: freq.repo.clone(),
        window_months: freq.window_months,
        tau: freq.tau,
        key_rule: opt.key.into(),
        stale_keys: opt.stale_keys,
        safeguard: !opt.no_safeguard,
        repeats: cost.repeats,
        cost_source: if cost.measure {
            CostSourceConfig::Measure
        } else if let Some(path) = &cost.costs {
            CostSourceConfig::Load(path.clone())
        } else {
            CostSourceConfig::Uniform
        },
        uniform_freq: freq.uniform_freq,
        ignore_deps: opt.ignore_deps,
        groups_path: opt.groups.clone(),
        registry_path: opt.registry.clone(),
        records_cache: freq.records.clone(),
        context: cost.context.clone(),
        ..RunConfig::default()
    }
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Parse { dockerfile, output } => {
            let (_, doc) = read_dockerfile(&dockerfile)?;
            #[derive(serde::Serialize)]
            struct ParseOut<'a> {
                directives: &'a [relayer_core::dockerfile::Directive],
                instructions: Vec<InstructionOut<'a>>,
            }
            #[derive(serde::Serialize)]
            struct InstructionOut<'a> {
                index: usize,
                kind: &'a str,
                deprecated: bool,
                stage_index: usize,
                flags: &'a [relayer_core::dockerfile::InstructionFlag],
                arguments: &'a relayer_core::dockerfile::ArgumentPayload,
                span: &'a relayer_core::dockerfile::SourceSpan,
            }
            let out = ParseOut {
                directives: &doc.directives,
                instructions: doc
                    .instructions
                    .iter()
                    .map(|i| InstructionOut {
                        index: i.index,
                        kind: i.kind.keyword(),
                        deprecated: i.kind.is_deprecated(),
                        stage_index: i.stage_index,
                        flags: &i.flags,
                        arguments: &i.arguments,
                        span: &i.span,
                    })
                    .collect(),
            };
            emit(&out, output.as_ref())
        }
        Command::Elements {
            dockerfile,
            registry,
            output,
        } => {
            let (_, doc) = read_dockerfile(&dockerfile)?;
            let registry = load_registry(registry.as_deref())?;
            let elements = extract_all(&doc, &registry);
            emit(&elements, output.as_ref())
        }
        Command::Graph {
            dockerfile,
            registry,
            format,
            output,
        } => {
            let (_, doc) = read_dockerfile(&dockerfile)?;
            let registry = load_registry(registry.as_deref())?;
            let elements = extract_all(&doc, &registry);
            let graph = build_graph(&doc, &elements)?;
            let text = export_graph(
                &graph,
                match format {
                    GraphFormat::Dot => ExportFormat::Dot,
                    GraphFormat::Json => ExportFormat::Json,
                },
            );
            emit_text(&text, output.as_ref())
        }
        Command::Freq {
            dockerfile,
            freq,
            records_out,
            output,
        } => {
            let (_, doc) = read_dockerfile(&dockerfile)?;
            let registry = load_registry(None)?;
            let elements = extract_all(&doc, &registry);
            let mut config = config_from_parts(
                dockerfile.clone(),
                &freq,
                &CostArgs {
                    costs: None,
                    uniform_cost: true,
                    measure: false,
                    repeats: 3,
                    context: None,
                },
                &OptimizeArgs {
                    key: KeyRuleArg::Paper,
                    stale_keys: false,
                    no_safeguard: false,
                    groups: None,
                    ignore_deps: false,
                    registry: None,
                },
            );
            if config.records_cache.is_none() {
                config.records_cache = records_out.clone();
            }
            config.validate()?;
            let records = match &config.repo {
                Some(repo) => mine_records(repo, &dockerfile, &config)?,
                None => {
                    return Err(CliError::User(
                        "freq requires --repo (or use --uniform-freq with optimize/run)".into(),
                    ))
                }
            };
            if let Some(path) = &records_out {
                if config.records_cache.as_deref() != Some(path.as_path()) {
                    write_json(path, &records)?;
                }
            }
            let matcher = Matcher::new(&doc, &elements, &records, config.tau);
            let table = compute_frequencies(&matcher, &records, config.window_months);
            emit(&table, output.as_ref())
        }
        Command::Cost { action } => match action {
            CostCommand::Measure {
                dockerfile,
                repeats,
                context,
                output,
            } => {
                let (_, doc) = read_dockerfile(&dockerfile)?;
                let mut adapter = DockerCliAdapter::new(runtime_program_from_env());
                let ctx = context
                    .or_else(|| dockerfile.parent().map(|p| p.to_path_buf()))
                    .unwrap_or_else(|| PathBuf::from("."));
                let table = measure_costs(&doc, &ctx, &mut adapter, repeats)?;
                emit(&table, output.as_ref())
            }
            CostCommand::Load {
                path,
                dockerfile,
                output,
            } => {
                let (_, doc) = read_dockerfile(&dockerfile)?;
                let (table, missing) = load_costs(&path, doc.instructions.len())?;
                if !missing.is_empty() {
                    eprintln!("warning: missing indices {missing:?} filled with 1.0s");
                }
                emit(&table, output.as_ref())
            }
        },
        Command::Optimize {
            dockerfile,
            freq,
            cost,
            opt,
            emit: emit_path,
            report,
            dry_run,
        } => {
            let mut config = config_from_parts(dockerfile, &freq, &cost, &opt);
            config.emit_path = emit_path;
            config.report_path = report;
            config.dry_run = dry_run;
            let outputs = run_pipeline(&config)?;
            print_plan_summary(&outputs);
            if dry_run {
                let text = serde_json::to_string_pretty(&outputs.report)
                    .map_err(|e| CliError::Internal(e.to_string()))?;
                println!("{text}");
            }
            Ok(())
        }
        Command::Simulate {
            dockerfile,
            history,
            freq,
            cost,
            opt,
            interval,
            report,
            csv,
        } => {
            let mut config = config_from_parts(dockerfile.clone(), &freq, &cost, &opt);
            let (_, doc) = read_dockerfile(&dockerfile)?;
            let registry = load_registry(config.registry_path.as_deref())?;
            let elements = extract_all(&doc, &registry);
            let graph = build_graph(&doc, &elements)?;

            // events from a JSON file or mined live from a repository
            let (events, records) = if history.is_dir() {
                config.repo = Some(history.clone());
                config.validate()?;
                let records = mine_records(&history, &dockerfile, &config)?;
                let matcher = Matcher::new(&doc, &elements, &records, config.tau);
                (events_from_records(&doc, &matcher, &records), records)
            } else {
                let text = std::fs::read_to_string(&history).map_err(|e| {
                    CliError::User(format!("cannot read {}: {e}", history.display()))
                })?;
                let events: Vec<ModificationEvent> = serde_json::from_str(&text)
                    .map_err(|e| CliError::User(format!("history JSON: {e}")))?;
                (events, Vec::new())
            };
            if events.is_empty() {
                return Err(CliError::User("no modification events to replay".into()));
            }

            let frequencies = if config.uniform_freq || records.is_empty() {
                relayer_core::history::FrequencyTable::uniform(
                    doc.instructions.len(),
                    config.window_months,
                )
            } else {
                let matcher = Matcher::new(&doc, &elements, &records, config.tau);
                compute_frequencies(&matcher, &records, config.window_months)
            };
            let costs = match &config.cost_source {
                CostSourceConfig::Load(path) => {
                    load_costs(path, doc.instructions.len())?.0
                }
                _ => CostTable::uniform(doc.instructions.len()),
            };
            let opts = OptimizationOptions {
                key_rule: config.key_rule,
                stale_keys: config.stale_keys,
                safeguard: config.safeguard,
                group_map: None,
            };
            let plan = optimize(&graph, &frequencies.normalized, &costs.seconds, &opts)?;
            let replay_report = replay(
                &events,
                &plan.original_order,
                &plan.optimized_order,
                &costs,
            )?;

            let sweep = match interval {
                Some(max) if max >= 1 => {
                    let matcher = Matcher::new(&doc, &elements, &records, config.tau);
                    let records_ref = &records;
                    let curve = sweep_usage_interval(
                        &events,
                        &graph,
                        |prefix: &[ModificationEvent]| {
                            // frequencies from records up to the prefix's
                            // last timestamp
                            if records_ref.is_empty() {
                                return frequencies.normalized.clone();
                            }
                            let cutoff =
                                prefix.last().map(|e| e.timestamp).unwrap_or(i64::MIN);
                            let subset: Vec<_> = records_ref
                                .iter()
                                .filter(|r| r.date <= cutoff)
                                .cloned()
                                .collect();
                            compute_frequencies(&matcher, &subset, config.window_months)
                                .normalized
                        },
                        &costs,
                        max,
                        &opts,
                    )?;
                    Some(curve)
                }
                _ => None,
            };

            #[derive(serde::Serialize)]
            struct SimulateOut {
                replay: relayer_core::simulator::EfficiencyReport,
                sweep: Option<Vec<(usize, f64)>>,
                order_before: Vec<usize>,
                order_after: Vec<usize>,
            }
            let out = SimulateOut {
                replay: replay_report.clone(),
                sweep: sweep.clone(),
                order_before: plan.original_order.clone(),
                order_after: plan.optimized_order.clone(),
            };
            println!(
                "replayed {} events: aggregate efficiency {:.4}",
                replay_report.events, replay_report.efficiency
            );
            if let Some(path) = &csv {
                write_efficiency_csv(path, &replay_report)?;
                if let Some(curve) = &sweep {
                    let sweep_path = path.with_extension("sweep.csv");
                    write_sweep_csv(&sweep_path, curve)?;
                }
            }
            match report {
                Some(path) => write_json(&path, &out),
                None => emit(&out, None),
            }
        }
        Command::Verify {
            image_a,
            image_b,
            exclude_env,
            report,
        } => {
            let runtime = runtime_program_from_env();
            let make = |reference: &str| -> Box<dyn ImageInspector> {
                let path = PathBuf::from(reference);
                if path.is_dir() {
                    Box::new(DirectoryInspector::new(path))
                } else {
                    Box::new(ContainerCliInspector::new(runtime.clone(), reference))
                }
            };
            let a = make(&image_a);
            let b = make(&image_b);
            let excludes = env_excludes(&exclude_env);
            let result = compare_images(a.as_ref(), b.as_ref(), &excludes)
                .map_err(|e| CliError::Internal(e.to_string()))?;
            println!("verdict: {:?}", result.verdict);
            match report {
                Some(path) => write_json(&path, &result),
                None => emit(&result, None),
            }
        }
        Command::Run {
            dockerfile,
            freq,
            cost,
            opt,
            out_dir,
            suffix,
            emit: emit_path,
            report,
            dry_run,
        } => {
            let mut config = config_from_parts(dockerfile, &freq, &cost, &opt);
            config.out_dir = out_dir;
            config.suffix = suffix;
            config.emit_path = emit_path;
            config.dry_run = dry_run;
            config.report_path = report.or_else(|| {
                if dry_run {
                    None
                } else {
                    let mut name = config.dockerfile.as_os_str().to_owned();
                    name.push(".report.json");
                    Some(PathBuf::from(name))
                }
            });
            let outputs = run_pipeline(&config)?;
            print_plan_summary(&outputs);
            if dry_run {
                let text = serde_json::to_string_pretty(&outputs.report)
                    .map_err(|e| CliError::Internal(e.to_string()))?;
                println!("{text}");
            } else if let Some(path) = &config.report_path {
                println!("report: {}", path.display());
            }
            Ok(())
        }
    }
}

fn print_plan_summary(outputs: &relayer_cli::RunOutputs) {
    let r = &outputs.report;
    println!(
        "{}: {} instructions, cost {:.3} -> {:.3} ({:+.1}%)",
        r.dockerfile,
        r.instructions,
        r.cost_before,
        r.cost_after,
        -100.0 * r.improvement_ratio
    );
    if let Some(path) = &r.emitted_to {
        println!("emitted: {path}");
    }
    if let Some(eff) = &r.efficiency {
        println!(
            "replayed {} events: aggregate efficiency {:.4}",
            eff.events, eff.efficiency
        );
    }
}

fn main() {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => {}
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(e.exit_code());
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn exit_internal_is_one() {
        assert_eq!(relayer_cli::EXIT_INTERNAL, 1);
    }
}
