use std::io::{BufReader, Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use querywise::domain::MemberProfile;
use querywise::eval::{self, compare, render_table, MetricReport};
use querywise::service::http;
use querywise::service::{BackendKind, CallMode, ConfigLayer, Engine, Settings, UnderstandError, UnderstandRequest};
use querywise::stream_parser::StreamParser;
use querywise::training::{self, BatchMode};

type BoxError = Box<dyn std::error::Error + Send + Sync>;

#[derive(Parser)]
#[command(name = "querywise", version, about = "Query understanding for job search")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// TOML config file (also QUERYWISE_CONFIG).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Taxonomy JSON; defaults to the bundled sample.
    #[arg(long, global = true)]
    taxonomy: Option<PathBuf>,
    #[arg(long, global = true)]
    backend: Option<BackendArg>,
    /// Mock backend script; defaults to the bundled sample.
    #[arg(long, global = true)]
    mock_script: Option<PathBuf>,
    #[arg(long, global = true)]
    timeout_ms: Option<u64>,
    #[arg(long, global = true)]
    call_mode: Option<CallModeArg>,
}

#[derive(Clone, Copy, ValueEnum)]
enum BackendArg {
    Mock,
    Live,
}

#[derive(Clone, Copy, ValueEnum)]
enum CallModeArg {
    Combined,
    Split,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    #[value(alias = "homogeneous")]
    Homo,
    #[value(alias = "heterogeneous")]
    Hetero,
}

#[derive(Args)]
struct QueryArgs {
    #[arg(long)]
    query: String,
    /// Member profile JSON file.
    #[arg(long)]
    profile: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Full pipeline for one query; prints the result JSON.
    Understand(QueryArgs),
    /// Routing decision only.
    Plan(QueryArgs),
    /// Profile-based rewrite only.
    Rewrite(QueryArgs),
    /// Scores the pipeline against a labeled JSONL dataset.
    Eval {
        #[arg(long)]
        dataset: PathBuf,
        /// Writes the metric report JSON here.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Earlier report to compare against; prints the deltas.
        #[arg(long)]
        baseline: Option<PathBuf>,
        #[arg(long, default_value_t = 16)]
        concurrency: usize,
    },
    /// Builds a fine-tuning batch manifest from a JSONL corpus.
    Schedule {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum)]
        mode: ModeArg,
        #[arg(long)]
        batch_size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Comma-separated task order (homogeneous mode).
        #[arg(long, value_delimiter = ',')]
        curriculum: Option<Vec<String>>,
        /// Balances task sizes by resampling before batching.
        #[arg(long)]
        upsample: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Summed loss of a JSONL corpus with token log-probabilities.
    Loss {
        #[arg(long)]
        data: PathBuf,
    },
    /// Feeds stdin (or a file) to the stream parser in chunks and prints events as JSONL.
    ParseStream {
        #[arg(long)]
        input: Option<PathBuf>,
        /// Chunk separator; `\n`, `\t`, `\r`, `\0`, `\\` and `\xHH` are unescaped.
        #[arg(long, default_value = "\\n")]
        separator: String,
    },
    /// Tool registry.
    Tools {
        #[command(subcommand)]
        action: ToolsAction,
    },
    /// Runs the HTTP service.
    Serve {
        #[arg(long)]
        bind: Option<String>,
    },
}

#[derive(Subcommand)]
enum ToolsAction {
    /// Prints the tool signatures.
    List,
}

/// Failures that exit with status 2 rather than 1.
#[derive(Debug)]
struct Usage(String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn unescape(s: &str) -> Result<Vec<u8>, BoxError> {
    let mut out = Vec::new();
    let mut chars = s.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            let mut buf = [0u8; 4];
            out.extend_from_slice(c.encode_utf8(&mut buf).as_bytes());
            continue;
        }
        match chars.next() {
            Some('n') => out.push(b'\n'),
            Some('t') => out.push(b'\t'),
            Some('r') => out.push(b'\r'),
            Some('0') => out.push(0),
            Some('\\') => out.push(b'\\'),
            Some('x') => {
                let hex: String = chars.by_ref().take(2).collect();
                let b = u8::from_str_radix(&hex, 16).map_err(|_| Usage(format!("bad escape \\x{hex}")))?;
                out.push(b);
            }
            other => return Err(Usage(format!("bad escape \\{}", other.map(String::from).unwrap_or_default())).into()),
        }
    }
    if out.is_empty() {
        return Err(Usage("separator must not be empty".into()).into());
    }
    Ok(out)
}

fn split_on<'a>(data: &'a [u8], sep: &[u8]) -> Vec<&'a [u8]> {
    let mut parts = Vec::new();
    let mut rest = data;
    while let Some(i) = rest.windows(sep.len()).position(|w| w == sep) {
        parts.push(&rest[..i]);
        rest = &rest[i + sep.len()..];
    }
    parts.push(rest);
    parts
}

fn parse_stream(input: Option<&Path>, separator: &str) -> Result<(), BoxError> {
    let sep = unescape(separator)?;
    let mut data = Vec::new();
    match input {
        Some(p) => data = std::fs::read(p)?,
        None => {
            std::io::stdin().read_to_end(&mut data)?;
        }
    }
    let mut parser = StreamParser::new();
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    let mut failed = false;
    for chunk in split_on(&data, &sep) {
        for ev in parser.feed(chunk) {
            failed |= ev.is_error();
            writeln!(out, "{}", serde_json::to_string(&ev)?)?;
        }
    }
    for ev in parser.finish() {
        failed |= ev.is_error();
        writeln!(out, "{}", serde_json::to_string(&ev)?)?;
    }
    if failed {
        return Err("stream contained a parse error".into());
    }
    Ok(())
}

fn read_profile(path: Option<&Path>) -> Result<Option<MemberProfile>, BoxError> {
    path.map(|p| -> Result<MemberProfile, BoxError> { Ok(serde_json::from_str(&std::fs::read_to_string(p)?)?) })
        .transpose()
}

fn request(args: &QueryArgs) -> Result<UnderstandRequest, BoxError> {
    Ok(UnderstandRequest { profile: read_profile(args.profile.as_deref())?, ..UnderstandRequest::new(&args.query) })
}

fn print_json<T: serde::Serialize>(v: &T) -> Result<(), BoxError> {
    writeln!(std::io::stdout(), "{}", serde_json::to_string_pretty(v)?)?;
    Ok(())
}

fn lift(e: UnderstandError) -> BoxError {
    match e {
        UnderstandError::InvalidInput(m) => Usage(m).into(),
        other => other.into(),
    }
}

fn settings(g: &Global, bind: Option<String>) -> Result<Settings, BoxError> {
    let cli = ConfigLayer {
        taxonomy: g.taxonomy.clone(),
        backend: g.backend.map(|b| match b {
            BackendArg::Mock => BackendKind::Mock,
            BackendArg::Live => BackendKind::Live,
        }),
        mock_script: g.mock_script.clone(),
        timeout_ms: g.timeout_ms,
        call_mode: g.call_mode.map(|m| match m {
            CallModeArg::Combined => CallMode::Combined,
            CallModeArg::Split => CallMode::Split,
        }),
        bind,
        ..Default::default()
    };
    Ok(Settings::resolve(cli, g.config.as_deref())?)
}

fn engine(g: &Global) -> Result<Engine, BoxError> {
    Ok(Engine::from_settings(&settings(g, None)?)?)
}

fn write_or_print(out: Option<&Path>, body: &str) -> Result<(), BoxError> {
    match out {
        Some(p) => std::fs::write(p, format!("{body}\n"))?,
        None => writeln!(std::io::stdout(), "{body}")?,
    }
    Ok(())
}

async fn run(cli: Cli) -> Result<(), BoxError> {
    let g = &cli.global;
    match cli.command {
        Command::Understand(a) => print_json(&engine(g)?.understand(&request(&a)?).await.map_err(lift)?),
        Command::Plan(a) => print_json(&engine(g)?.plan(&request(&a)?).await.map_err(lift)?),
        Command::Rewrite(a) => print_json(&engine(g)?.rewrite(&request(&a)?).await.map_err(lift)?),
        Command::Eval { dataset, out, baseline, concurrency } => {
            let examples = eval::read_dataset(BufReader::new(std::fs::File::open(&dataset)?))?;
            let engine = engine(g)?;
            let report = eval::evaluate(&examples, &engine, concurrency).await;
            write!(std::io::stdout(), "{}", render_table(&report))?;
            if let Some(p) = out {
                std::fs::write(p, serde_json::to_string_pretty(&report)?)?;
            }
            if let Some(p) = baseline {
                let before: MetricReport = serde_json::from_str(&std::fs::read_to_string(p)?)?;
                print_json(&compare(&before, &report))?;
            }
            Ok(())
        }
        Command::Schedule { data, mode, batch_size, seed, curriculum, upsample, out } => {
            let mut sets = training::read_datasets(BufReader::new(std::fs::File::open(&data)?))?;
            if upsample {
                sets = training::upsample(&sets, seed);
            }
            let mode = match mode {
                ModeArg::Homo => BatchMode::Homogeneous,
                ModeArg::Hetero => BatchMode::Heterogeneous,
            };
            let manifest = training::schedule(&sets, mode, batch_size, seed, curriculum.as_deref())?;
            write_or_print(out.as_deref(), &manifest.to_json())
        }
        Command::Loss { data } => {
            let sets = training::read_datasets(BufReader::new(std::fs::File::open(&data)?))?;
            let loss = training::corpus_loss(sets.iter().flat_map(|d| &d.examples))?;
            writeln!(std::io::stdout(), "{loss}")?;
            Ok(())
        }
        Command::ParseStream { input, separator } => parse_stream(input.as_deref(), &separator),
        Command::Tools { action: ToolsAction::List } => {
            writeln!(std::io::stdout(), "{}", querywise::tools::default_registry().catalog().trim_end())?;
            Ok(())
        }
        Command::Serve { bind } => {
            let s = settings(g, bind)?;
            let engine = Arc::new(Engine::from_settings(&s)?);
            http::serve(&s.bind, engine).await?;
            Ok(())
        }
    }
}

#[tokio::main]
async fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::from_default_env())
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    match run(cli).await {
        Ok(()) => ExitCode::SUCCESS,
        // a closed pipe (e.g. `| head`) is not a failure
        Err(e) if e.downcast_ref::<std::io::Error>().is_some_and(|io| io.kind() == std::io::ErrorKind::BrokenPipe) => {
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            if e.downcast_ref::<Usage>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
