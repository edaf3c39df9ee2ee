use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use timem_core::bench::{self, questions_to_json_lines, BenchError};
use timem_core::config::{BackendKind, Config, ConfigError};
use timem_core::engine::{Engine, EngineError};
use timem_core::fixture;
use timem_core::manifold;
use timem_core::recall::{Complexity, RecallOptions};
use timem_core::store::{self, OpenMode, StoreError, DATA_DIR_ENV};
use timem_core::time::{format_ts, parse_ts};

#[derive(Parser)]
#[command(name = "timem", version, about = "Temporal hierarchical memory for dialog agents")]
struct Cli {
    /// Root directory of per-user logs.
    #[arg(long, global = true, env = DATA_DIR_ENV)]
    data_dir: Option<PathBuf>,
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    backend: Option<Backend>,
    #[arg(long, global = true, value_enum, default_value_t = Output::Table)]
    output: Output,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Backend {
    Mock,
    Http,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Output {
    Json,
    Table,
}

#[derive(Args, Clone)]
struct RecallFlags {
    /// Skip the gating call and keep every candidate.
    #[arg(long)]
    no_gate: bool,
    /// Use this complexity instead of the planner's.
    #[arg(long, value_parser = parse_complexity)]
    complexity_override: Option<Complexity>,
}

impl RecallFlags {
    fn options(&self) -> RecallOptions {
        RecallOptions {
            gating: self.no_gate.then_some(false),
            complexity_override: self.complexity_override,
        }
    }
}

fn parse_complexity(s: &str) -> Result<Complexity, String> {
    s.parse()
}

#[derive(Subcommand)]
enum Command {
    /// Ingest transcript files and flush each user.
    Ingest {
        #[arg(required = true)]
        transcripts: Vec<PathBuf>,
        /// Leave groups open after the last turn.
        #[arg(long)]
        no_flush: bool,
    },
    /// Recall memories for a question.
    Recall {
        #[arg(long)]
        user: String,
        /// Query time; only memories ending by then are activated.
        #[arg(long)]
        at: Option<String>,
        #[command(flatten)]
        flags: RecallFlags,
        question: String,
    },
    /// Check the structural properties of stored trees.
    Validate {
        /// Users to check; all when omitted.
        #[arg(long)]
        user: Vec<String>,
    },
    /// Replay transcripts and questions, reporting context size and latency.
    Bench {
        #[arg(long)]
        questions: PathBuf,
        #[arg(required = true)]
        transcripts: Vec<PathBuf>,
        #[command(flatten)]
        flags: RecallFlags,
        /// Leave latency out so the report is reproducible.
        #[arg(long)]
        no_timing: bool,
    },
    /// Embedding geometry per user and level.
    Analyze {
        #[arg(long)]
        user: Vec<String>,
    },
    /// Write a seeded synthetic fixture.
    GenFixture {
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = FixtureKind::Bench)]
        kind: FixtureKind,
    },
    /// Print the effective configuration.
    ConfigDump,
}

#[derive(Clone, Copy, ValueEnum)]
enum FixtureKind {
    /// 3 users, 120 turns, 30 questions.
    Bench,
    /// One user, 3 to 12 sessions of 1 to 40 turns.
    Random,
    /// One user, 10 sessions, 85 turns.
    TenSession,
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Data(String),
    Engine(EngineError),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Engine(e) => e.exit_code() as u8,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Data(m) => f.write_str(m),
            CliError::Engine(e) => write!(f, "{e}"),
        }
    }
}

impl From<EngineError> for CliError {
    fn from(e: EngineError) -> Self {
        CliError::Engine(e)
    }
}

impl From<StoreError> for CliError {
    fn from(e: StoreError) -> Self {
        CliError::Engine(e.into())
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Engine(e.into())
    }
}

impl From<BenchError> for CliError {
    fn from(e: BenchError) -> Self {
        let code = e.source.exit_code();
        let message = e.to_string();
        if code == 3 {
            CliError::Engine(e.source)
        } else {
            CliError::Data(message)
        }
    }
}

fn io_error(path: &Path, e: std::io::Error) -> CliError {
    CliError::Data(format!("{}: {e}", path.display()))
}

fn load_config(cli: &Cli) -> Result<Config, CliError> {
    let mut config = match &cli.config {
        Some(path) => Config::load(path)?,
        None => Config::default(),
    };
    if let Some(b) = cli.backend {
        config.backend = match b {
            Backend::Mock => BackendKind::Mock,
            Backend::Http => BackendKind::Http,
        };
    }
    Ok(config)
}

fn data_dir(cli: &Cli) -> Result<&Path, CliError> {
    cli.data_dir
        .as_deref()
        .ok_or_else(|| CliError::Usage(format!("--data-dir or {DATA_DIR_ENV} is required")))
}

fn print_json<T: serde::Serialize>(value: &T) {
    println!("{}", serde_json::to_string(value).expect("serializable"));
}

fn run(cli: Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::ConfigDump => {
            let config = load_config(&cli)?;
            match cli.output {
                Output::Json => print_json(&config),
                Output::Table => print!("{}", config.to_toml()),
            }
        }
        Command::GenFixture { seed, out, kind } => gen_fixture(*seed, out, *kind)?,
        Command::Ingest { transcripts, no_flush } => {
            let engine = Engine::from_config(load_config(&cli)?)?.with_store(data_dir(&cli)?, OpenMode::Writable);
            for path in transcripts {
                let transcript = store::load_transcript(path)?;
                let turns = transcript.to_turns()?;
                let mut created = engine.ingest_turns(&transcript.user_id, &turns)?;
                if !no_flush {
                    created.extend(engine.flush(&transcript.user_id, None)?);
                }
                match cli.output {
                    Output::Json => print_json(&serde_json::json!({
                        "transcript": path.display().to_string(),
                        "user_id": transcript.user_id,
                        "turns": turns.len(),
                        "nodes_created": created.len(),
                    })),
                    Output::Table => println!(
                        "{}: user {} turns {} nodes created {}",
                        path.display(),
                        transcript.user_id,
                        turns.len(),
                        created.len()
                    ),
                }
            }
        }
        Command::Recall {
            user,
            at,
            flags,
            question,
        } => {
            let t_q = at
                .as_deref()
                .map(|s| parse_ts(s).map_err(|e| CliError::Usage(format!("--at {s:?}: {e}"))))
                .transpose()?;
            let engine = Engine::from_config(load_config(&cli)?)?.with_store(data_dir(&cli)?, OpenMode::ReadOnly);
            let result = engine.recall(user, question, t_q, flags.options())?;
            match cli.output {
                Output::Json => print_json(&result),
                Output::Table => {
                    println!(
                        "complexity {} keywords [{}]{}",
                        result.plan.complexity,
                        result.plan.keywords.join(", "),
                        if result.plan.planner_fallback_used {
                            " (fallback)"
                        } else {
                            ""
                        }
                    );
                    println!(
                        "leaves {} candidates {} retained {} tokens {}",
                        result.counts.leaves,
                        result.counts.candidates,
                        result.counts.retained,
                        result.context_token_count
                    );
                    for m in &result.memories {
                        println!(
                            "L{} #{} [{} .. {}] {}",
                            m.level.value(),
                            m.node_id,
                            format_ts(&m.interval.start),
                            format_ts(&m.interval.end),
                            m.text
                        );
                    }
                }
            }
        }
        Command::Validate { user } => {
            let engine = Engine::from_config(load_config(&cli)?)?.with_store(data_dir(&cli)?, OpenMode::ReadOnly);
            let users = if user.is_empty() { engine.users()? } else { user.clone() };
            let mut dirty = 0;
            for u in &users {
                let report = engine.validate(u)?;
                if !report.is_clean() {
                    dirty += 1;
                }
                match cli.output {
                    Output::Json => print_json(&report),
                    Output::Table => {
                        let counts: Vec<String> = report
                            .node_count_per_level
                            .iter()
                            .map(|(l, c)| format!("L{l}={c}"))
                            .collect();
                        println!("{u}: {} violations, {}", report.violations.len(), counts.join(" "));
                        for v in &report.violations {
                            println!("  node {} {}: {}", v.node_id, v.rule, v.detail);
                        }
                    }
                }
            }
            if dirty > 0 {
                return Err(CliError::Data(format!("{dirty} tree(s) with violations")));
            }
        }
        Command::Bench {
            questions,
            transcripts,
            flags,
            no_timing,
        } => {
            let mut engine = Engine::from_config(load_config(&cli)?)?;
            if let Some(dir) = &cli.data_dir {
                engine = engine.with_store(dir, OpenMode::Writable);
            }
            let transcripts = transcripts
                .iter()
                .map(|p| store::load_transcript(p))
                .collect::<Result<Vec<_>, _>>()?;
            bench::ingest_all(&engine, &transcripts)?;
            let questions = bench::load_questions(questions)?;
            let report = bench::run_bench(&engine, &questions, flags.options())?;
            match cli.output {
                Output::Json => print!("{}", report.to_json_lines(!no_timing)),
                Output::Table => print!("{}", report.to_table(!no_timing)),
            }
        }
        Command::Analyze { user } => {
            let engine = Engine::from_config(load_config(&cli)?)?.with_store(data_dir(&cli)?, OpenMode::ReadOnly);
            let users = if user.is_empty() { engine.users()? } else { user.clone() };
            let trees = users
                .iter()
                .map(|u| engine.with_tree(u, |t| t.clone()))
                .collect::<Result<Vec<_>, _>>()?;
            let report = manifold::analyze(&trees);
            match cli.output {
                Output::Json => print_json(&report),
                Output::Table => {
                    println!("# {}", report.definitions);
                    println!(
                        "{:<10} {:>5} {:>6} {:>10} {:>8} {:>9} {:>10}",
                        "user", "level", "count", "silhouette", "spread", "radius95", "sep_ratio"
                    );
                    let fmt = |v: Option<f64>| v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "-".into());
                    for r in &report.rows {
                        println!(
                            "{:<10} {:>5} {:>6} {:>10} {:>8} {:>9} {:>10}",
                            r.user_id,
                            r.level.value(),
                            r.count,
                            fmt(r.silhouette),
                            fmt(r.spread),
                            fmt(r.radius95),
                            fmt(r.separation_ratio)
                        );
                    }
                }
            }
        }
    }
    Ok(())
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).expect("serializable") + "\n";
    fs::write(path, text).map_err(|e| io_error(path, e))
}

fn gen_fixture(seed: u64, out: &Path, kind: FixtureKind) -> Result<(), CliError> {
    fs::create_dir_all(out).map_err(|e| io_error(out, e))?;
    match kind {
        FixtureKind::Bench => {
            let f = fixture::standard_bench_fixture(seed);
            for t in &f.transcripts {
                write_json(&out.join(format!("{}.json", t.user_id)), t)?;
            }
            let path = out.join("questions.jsonl");
            fs::write(&path, questions_to_json_lines(&f.questions)).map_err(|e| io_error(&path, e))?;
            println!(
                "wrote {} transcripts and {} questions to {}",
                f.transcripts.len(),
                f.questions.len(),
                out.display()
            );
        }
        FixtureKind::Random => {
            let t = fixture::random_transcript(seed, "user1");
            write_json(&out.join("user1.json"), &t)?;
            println!("wrote {}", out.join("user1.json").display());
        }
        FixtureKind::TenSession => {
            let t = fixture::ten_session_transcript();
            write_json(&out.join("ten_sessions.json"), &t)?;
            println!("wrote {}", out.join("ten_sessions.json").display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
