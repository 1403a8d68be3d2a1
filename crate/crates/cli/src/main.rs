//! `cobp`: run or verify one of the bundled example programs.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand, ValueEnum};
use cobp::examples::{self, ExampleProgram};
use cobp::verifier::{verify, Limits, Outcome, SearchOrder, VerifyOptions};
use cobp::{Arbiter, CobpError, ContextStore, Engine, StepStatus};

mod exit {
    pub const OK: u8 = 0;
    pub const ERROR: u8 = 1;
    pub const DEADLOCK: u8 = 2;
    /// Step limit for runs, state or depth bound for verification.
    pub const LIMIT: u8 = 3;
    pub const VIOLATION: u8 = 4;
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error(transparent)]
    Cobp(#[from] CobpError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_owned(),
        source,
    }
}

#[derive(Parser)]
#[command(name = "cobp", version, about = "Run and verify context-oriented behavioral programs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute an example and write its trace as JSON lines.
    Run {
        name: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 10_000, value_parser = clap::value_parser!(u64).range(1..))]
        max_steps: u64,
        #[arg(long, value_enum, default_value_t = ArbiterName::Random)]
        arbiter: ArbiterName,
        /// Context-init document replacing the example's initial context.
        #[arg(long)]
        ctx: Option<PathBuf>,
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Explore every event choice looking for deadlocks and violations.
    Verify {
        name: String,
        #[arg(long, default_value_t = 1_000_000)]
        max_states: usize,
        #[arg(long, default_value_t = 10_000)]
        depth: usize,
        #[arg(long)]
        ctx: Option<PathBuf>,
        /// Where to write the verdict as JSON.
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Search::Dfs)]
        search: Search,
        /// Worker threads for breadth-first search (0 picks a default).
        #[arg(long, default_value_t = 0)]
        workers: usize,
    },
    /// List the registered examples.
    List,
}

#[derive(Clone, Copy, ValueEnum)]
enum ArbiterName {
    Random,
    First,
    Priority,
}

#[derive(Clone, Copy, ValueEnum)]
enum Search {
    Dfs,
    Bfs,
}

fn load_ctx(ex: &ExampleProgram, path: Option<&Path>) -> Result<ContextStore, CliError> {
    let Some(path) = path else {
        return Ok(ex.ctx_init.clone());
    };
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    let parse = ex.parse_ctx.unwrap_or(ContextStore::from_init_json);
    Ok(parse(&text)?)
}

fn arbiter(ex: &ExampleProgram, name: ArbiterName) -> Arbiter {
    match name {
        ArbiterName::Random => Arbiter::SeededRandom,
        ArbiterName::First => Arbiter::FirstLexicographic,
        ArbiterName::Priority => match &ex.arbiter {
            Arbiter::Priority(ranks) => Arbiter::Priority(ranks.clone()),
            _ => Arbiter::Priority(Vec::new()),
        },
    }
}

fn run(
    name: &str,
    seed: u64,
    max_steps: u64,
    arb: ArbiterName,
    ctx: Option<&Path>,
    trace_path: Option<&Path>,
) -> Result<u8, CliError> {
    let ex = examples::build(name)?;
    let ctx = load_ctx(&ex, ctx)?;
    let mut engine = Engine::new(Arc::clone(&ex.program), ctx, arbiter(&ex, arb), seed)?;
    let trace = engine.run(max_steps)?;
    if let Some(path) = trace_path {
        let mut out = BufWriter::new(File::create(path).map_err(io_err(path))?);
        trace.write_jsonl(&mut out).map_err(io_err(path))?;
        out.flush().map_err(io_err(path))?;
    }
    let status = trace.final_status().unwrap_or(StepStatus::StepLimit);
    let events = trace.events().count();
    println!("{name}: {status:?} after {events} events");
    if let Some(last) = trace.entries.last() {
        println!("final context digest {}", last.ctx_digest);
    }
    Ok(match status {
        StepStatus::Deadlock => exit::DEADLOCK,
        StepStatus::StepLimit => exit::LIMIT,
        _ => exit::OK,
    })
}

fn verify_cmd(
    name: &str,
    max_states: usize,
    depth: usize,
    ctx: Option<&Path>,
    report: Option<&Path>,
    search: Search,
    workers: usize,
) -> Result<u8, CliError> {
    let ex = examples::build(name)?;
    let ctx = load_ctx(&ex, ctx)?;
    let opts = VerifyOptions {
        limits: Limits::new(max_states, depth)?,
        order: match search {
            Search::Dfs => SearchOrder::Dfs,
            Search::Bfs => SearchOrder::Bfs,
        },
        workers,
    };
    let verdict = verify(&ex.program, ctx, &ex.assertions, opts)?;
    if let Some(path) = report {
        std::fs::write(path, verdict.to_json() + "\n").map_err(io_err(path))?;
    }
    println!("{name}: {verdict}");
    if let Some(cex) = &verdict.counterexample {
        let path: Vec<String> = cex.iter().map(ToString::to_string).collect();
        println!("counterexample ({} events): {}", cex.len(), path.join(", "));
    }
    Ok(match verdict.outcome {
        Outcome::Ok => exit::OK,
        Outcome::Deadlock => exit::DEADLOCK,
        Outcome::BoundExceeded => exit::LIMIT,
        Outcome::Violation => exit::VIOLATION,
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter("COBP_LOG")).init();
    // clap exits with 2 on usage errors, which would read as a deadlock
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { exit::ERROR } else { exit::OK });
        }
    };
    let result = match cli.command {
        Command::Run {
            name,
            seed,
            max_steps,
            arbiter,
            ctx,
            trace,
        } => run(&name, seed, max_steps, arbiter, ctx.as_deref(), trace.as_deref()),
        Command::Verify {
            name,
            max_states,
            depth,
            ctx,
            report,
            search,
            workers,
        } => verify_cmd(&name, max_states, depth, ctx.as_deref(), report.as_deref(), search, workers),
        Command::List => {
            for n in examples::names() {
                println!("{n:26} {}", examples::describe(n).unwrap_or_default());
            }
            Ok(exit::OK)
        }
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            log::debug!("{e:?}");
            eprintln!("error: {e}");
            ExitCode::from(exit::ERROR)
        }
    }
}
