//! `codevqa` command-line runner.
//!
//! Exit codes: 0 success, 1 I/O failure writing outputs, 2 configuration
//! error, 3 dataset error, 4 backend unreachable, 5 program parse failure,
//! 130 interrupted (a partial report is still written).

mod run_config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicBool, Ordering};

use clap::{Parser, Subcommand, ValueEnum};
use codevqa_core::config::{RetrievalMode, RunMode};
use codevqa_core::fixtures;
use codevqa_core::harness::{
    breakdown, load_dataset, run_eval, trace_file_name, write_outputs, Engine, EngineError,
    RunOptions,
};
use codevqa_core::instance::VqaInstance;
use codevqa_core::proglang::parse_source;
use codevqa_core::retrieval::ExampleStore;

use run_config::{BackendSpec, BackendsConfig, RunConfig};

const EXIT_IO: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_DATA: u8 = 3;
const EXIT_UNREACHABLE: u8 = 4;
const EXIT_PARSE: u8 = 5;
const EXIT_INTERRUPTED: u8 = 130;

static STOP: AtomicBool = AtomicBool::new(false);

extern "C" fn on_sigint(_: libc::c_int) {
    STOP.store(true, Ordering::SeqCst);
    // A second Ctrl-C terminates immediately.
    unsafe {
        libc::signal(libc::SIGINT, libc::SIG_DFL);
    }
}

fn install_sigint() {
    let handler: extern "C" fn(libc::c_int) = on_sigint;
    unsafe {
        libc::signal(libc::SIGINT, handler as libc::sighandler_t);
    }
}

#[derive(Parser)]
#[command(
    name = "codevqa",
    version,
    about = "Visual question answering by program synthesis"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Codevqa,
    BaselineAlwaysFallback,
}

#[derive(Clone, Copy, ValueEnum)]
enum RetrievalArg {
    Embedding,
    Random,
}

#[derive(clap::Args)]
struct Overrides {
    /// Run configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    #[arg(long, value_enum)]
    retrieval: Option<RetrievalArg>,
    #[arg(long)]
    workers: Option<usize>,
    /// Output directory for report, traces and manifest.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Answer and score every instance of the configured dataset.
    Eval(Overrides),
    /// Answer one question about the given images.
    Ask {
        #[command(flatten)]
        overrides: Overrides,
        /// Image reference; repeat for multi-image questions.
        #[arg(long = "image", required = true)]
        images: Vec<String>,
        question: String,
    },
    /// Parse a program file and print its syntax tree.
    Parse { source: PathBuf },
    /// Synthetic scenes, instances and scripted programs.
    Fixtures {
        #[command(subcommand)]
        command: FixturesCommand,
    },
}

#[derive(Subcommand)]
enum FixturesCommand {
    /// Write scenes/, instances.jsonl, script.json, examples.jsonl and
    /// config.toml into the output directory.
    Gen {
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value_t = 50)]
        n: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

/// A failure with its exit code; the message goes to stderr.
struct Failure(u8, String);

impl Failure {
    fn config(e: impl std::fmt::Display) -> Self {
        Failure(EXIT_CONFIG, e.to_string())
    }

    fn data(e: impl std::fmt::Display) -> Self {
        Failure(EXIT_DATA, e.to_string())
    }

    fn io(e: impl std::fmt::Display) -> Self {
        Failure(EXIT_IO, e.to_string())
    }
}

fn main() -> ExitCode {
    // Exit quietly when stdout is a closed pipe.
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Eval(o) => cmd_eval(&o),
        Command::Ask {
            overrides,
            images,
            question,
        } => cmd_ask(&overrides, images, &question),
        Command::Parse { source } => cmd_parse(&source),
        Command::Fixtures {
            command: FixturesCommand::Gen { seed, n, out },
        } => cmd_fixtures_gen(seed, n, &out),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(Failure(code, message)) => {
            eprintln!("error: {message}");
            ExitCode::from(code)
        }
    }
}

fn load_config(o: &Overrides, need_dataset: bool) -> Result<RunConfig, Failure> {
    let mut config = RunConfig::load(&o.config).map_err(Failure::config)?;
    if let Some(seed) = o.seed {
        config.engine.rng_seed = seed;
    }
    if let Some(mode) = o.mode {
        config.engine.mode = match mode {
            ModeArg::Codevqa => RunMode::Codevqa,
            ModeArg::BaselineAlwaysFallback => RunMode::BaselineAlwaysFallback,
        };
    }
    if let Some(r) = o.retrieval {
        config.engine.retrieval = match r {
            RetrievalArg::Embedding => RetrievalMode::Embedding,
            RetrievalArg::Random => RetrievalMode::Random,
        };
    }
    if let Some(w) = o.workers {
        config.workers = w;
    }
    if let Some(out) = &o.output {
        config.output_dir = out.clone();
    }
    config.validate(need_dataset).map_err(Failure::config)?;
    Ok(config)
}

fn build_engine(config: &RunConfig) -> Result<Engine, Failure> {
    let store = ExampleStore::load(&config.example_store).map_err(Failure::data)?;
    let backends = config.build_backends().map_err(Failure::config)?;
    Engine::new(config.engine.clone(), backends, store).map_err(|e| match e {
        EngineError::Unreachable(_) | EngineError::Describe { .. } => {
            Failure(EXIT_UNREACHABLE, e.to_string())
        }
        EngineError::Config(_) | EngineError::Store(_) => Failure::config(e),
    })
}

fn cmd_eval(o: &Overrides) -> Result<u8, Failure> {
    let config = load_config(o, true)?;
    let dataset = config.dataset.as_ref().expect("validated");
    let instances = load_dataset(dataset, config.dataset_format).map_err(Failure::data)?;
    let engine = build_engine(&config)?;
    install_sigint();
    let opts = RunOptions {
        workers: config.workers,
        scoring: config.scoring,
        stop: Some(&STOP),
    };
    let out = run_eval(&engine, &instances, &opts).map_err(Failure::data)?;
    write_outputs(&config.output_dir, &out).map_err(Failure::io)?;

    let r = &out.report;
    println!(
        "accuracy: {:.4} ({} / {})  fallback rate: {:.4}  mode: {}",
        r.accuracy, r.correct, r.total, r.fallback_rate, out.manifest.mode
    );
    for key in ["question_type", "num_images"] {
        let table = breakdown(r, key).map_err(Failure::data)?;
        print!("\n{}", table.render());
    }
    println!("\noutputs written to {}", config.output_dir.display());
    let unreachable = out.traces.iter().filter(|t| t.backend_unreachable).count();
    if unreachable > 0 {
        eprintln!("warning: {unreachable} instances hit an unreachable backend");
    }
    if r.partial {
        eprintln!(
            "interrupted: report covers {} of {} instances",
            r.total,
            instances.len()
        );
        return Ok(EXIT_INTERRUPTED);
    }
    Ok(0)
}

fn cmd_ask(o: &Overrides, images: Vec<String>, question: &str) -> Result<u8, Failure> {
    let config = load_config(o, false)?;
    let engine = build_engine(&config)?;
    let instance = VqaInstance::new(
        "ask",
        question,
        false,
        images,
        vec![String::new()],
        "ask",
        None,
    )
    .map_err(Failure::data)?;
    let (record, trace) = engine.answer_instance(&instance, 0);

    let dir = config.output_dir.join("traces");
    std::fs::create_dir_all(&dir).map_err(Failure::io)?;
    let path = dir.join(trace_file_name(instance.id()));
    let mut json = serde_json::to_string_pretty(&trace).map_err(Failure::io)?;
    json.push('\n');
    std::fs::write(&path, json).map_err(Failure::io)?;

    println!("answer: {}", record.predicted);
    println!("fallback_used: {}", trace.fallback_used);
    if let Some(reason) = &trace.fallback_reason {
        println!("fallback_reason: {:?}: {}", reason.stage, reason.message);
    }
    println!("program:");
    println!(
        "{}",
        trace.program.as_deref().unwrap_or("(none)").trim_end()
    );
    println!("trace: {}", path.display());
    if trace.backend_unreachable {
        eprintln!("error: a backend was unreachable while answering");
        return Ok(EXIT_UNREACHABLE);
    }
    Ok(0)
}

fn cmd_parse(source: &Path) -> Result<u8, Failure> {
    let text = std::fs::read_to_string(source)
        .map_err(|e| Failure::data(format!("{}: {e}", source.display())))?;
    match parse_source(&text) {
        Ok(program) => {
            print!("{program}");
            Ok(0)
        }
        Err(e) => {
            eprintln!("{}: {e}", source.display());
            Ok(EXIT_PARSE)
        }
    }
}

fn cmd_fixtures_gen(seed: u64, n: usize, out: &Path) -> Result<u8, Failure> {
    let set = fixtures::generate(seed, n);
    set.write(out).map_err(Failure::io)?;
    let oracle = BackendSpec::Oracle {
        scenes: "scenes".into(),
        grid: None,
    };
    let config = RunConfig {
        dataset: Some("instances.jsonl".into()),
        dataset_format: Default::default(),
        example_store: "examples.jsonl".into(),
        output_dir: "out".into(),
        workers: 1,
        cache_dir: None,
        max_in_flight: None,
        scoring: Default::default(),
        backends: BackendsConfig {
            code_lm: BackendSpec::Scripted {
                script: Some("script.json".into()),
                default_answer: None,
            },
            qa_lm: oracle.clone(),
            vision: oracle.clone(),
            embedder: oracle,
        },
        engine: codevqa_core::config::EngineConfig {
            rng_seed: seed,
            ..codevqa_core::config::EngineConfig::multi_image()
        },
    };
    std::fs::write(out.join("config.toml"), config.to_toml()).map_err(Failure::io)?;
    println!("wrote {n} instances to {}", out.display());
    Ok(0)
}
