use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use tracing_subscriber::EnvFilter;

use ticketsearch_core::corpus::{parse_corpus, write_jsonl, CorpusSchema};
use ticketsearch_core::engine::SearchRequest;
use ticketsearch_core::ingest::write_atomic;
use ticketsearch_core::synth::{corpus_from_spec, generate_raw_messages, Language, SynthSpec};
use ticketsearch_core::SourceType;
use ticketsearch_service::api::SearchBody;
use ticketsearch_service::config::{ServiceConfig, DEFAULT_CONFIG_PATH};
use ticketsearch_service::{app, build_state, router};

#[derive(Parser)]
#[command(name = "ticketsearch", version, about = "Hybrid retrieval over support tickets and documentation")]
struct Cli {
    /// Service configuration; built-in defaults when the default path is absent.
    #[arg(long, global = true, default_value = DEFAULT_CONFIG_PATH)]
    config: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Start the HTTP service.
    Serve {
        /// Overrides server.bind.
        #[arg(long)]
        bind: Option<String>,
    },
    /// Build and publish an index from a chunk-record JSONL corpus.
    BuildIndex { corpus: PathBuf },
    /// Write a synthetic corpus as JSONL.
    GenCorpus {
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long, default_value_t = 200)]
        tickets: usize,
        /// Comma-separated subset of es,en,gl.
        #[arg(long, default_value = "es,en,gl")]
        languages: String,
        /// Emit raw messages (an rt-weekly source) instead of chunk records.
        #[arg(long)]
        raw: bool,
        /// Output file; stdout when omitted.
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// Answer one query against the published index, without a server.
    Search {
        query: String,
        #[arg(long)]
        final_k: Option<usize>,
        #[arg(long)]
        department: Option<String>,
        /// RFC 3339 timestamp or YYYY-MM-DD.
        #[arg(long)]
        date_from: Option<String>,
        #[arg(long)]
        date_to: Option<String>,
        /// Comma-separated source types (ticket, web, pdf, repo_doc).
        #[arg(long)]
        source_types: Option<String>,
        /// Print the full JSON response.
        #[arg(long)]
        json: bool,
    },
}

fn load_config(path: &Path) -> anyhow::Result<ServiceConfig> {
    if !path.exists() && path == Path::new(DEFAULT_CONFIG_PATH) {
        tracing::warn!("{} not found; using built-in defaults", path.display());
        let mut config = ServiceConfig::default();
        config.apply_env(|k| std::env::var(k).ok())?;
        config.validate()?;
        return Ok(config);
    }
    Ok(ServiceConfig::load(path)?)
}

fn parse_languages(s: &str) -> anyhow::Result<Vec<Language>> {
    s.split(',')
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(|l| serde_json::from_value(serde_json::Value::String(l.to_ascii_lowercase())))
        .collect::<Result<Vec<Language>, _>>()
        .context("languages must be drawn from es, en, gl")
}

fn parse_source_types(s: &str) -> anyhow::Result<std::collections::BTreeSet<SourceType>> {
    s.split(',')
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(|l| serde_json::from_value(serde_json::Value::String(l.to_string())))
        .collect::<Result<_, _>>()
        .context("source types must be drawn from ticket, web, pdf, repo_doc")
}

async fn serve(config: ServiceConfig, bind: Option<String>) -> anyhow::Result<()> {
    let bind = bind.unwrap_or_else(|| config.server.bind.clone());
    let state = build_state(&config)?;
    let app = router(state, &config.server.cors_origins);
    let listener = tokio::net::TcpListener::bind(&bind)
        .await
        .with_context(|| format!("binding {bind}"))?;
    tracing::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}

fn build_index(config: &ServiceConfig, corpus: &Path) -> anyhow::Result<()> {
    let file = File::open(corpus).with_context(|| format!("opening {}", corpus.display()))?;
    let schema = CorpusSchema::new(config.departments());
    let records = parse_corpus(BufReader::new(file), &schema)?.records;
    let ctx = app::engine_context(config)?;
    // the merged dataset mirrors what the index was built from
    let mut bytes = Vec::new();
    write_jsonl(&records, &mut bytes)?;
    write_atomic(&config.storage.root.join("data").join("dataset.jsonl"), &bytes)?;
    let store = app::index_store(config);
    let n = records.len();
    store.build_and_publish(records, ctx.embedder.as_ref(), config.bm25)?;
    println!("published {n} records to {}", config.index_dir().display());
    Ok(())
}

fn gen_corpus(
    seed: u64,
    tickets: usize,
    languages: &str,
    raw: bool,
    out: Option<PathBuf>,
    config: &ServiceConfig,
) -> anyhow::Result<()> {
    let mut spec = SynthSpec::new(seed, tickets).with_languages(parse_languages(languages)?);
    spec.departments = config.departments.clone();
    let mut sink: Box<dyn Write> = match &out {
        Some(path) => Box::new(BufWriter::new(
            File::create(path).with_context(|| format!("creating {}", path.display()))?,
        )),
        None => Box::new(BufWriter::new(std::io::stdout().lock())),
    };
    if raw {
        for m in generate_raw_messages(&spec) {
            serde_json::to_writer(&mut sink, &m)?;
            sink.write_all(b"\n")?;
        }
    } else {
        corpus_from_spec(&spec, &config.chunking).write_jsonl(&mut sink)?;
    }
    sink.flush()?;
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn search(
    config: &ServiceConfig,
    query: String,
    final_k: Option<usize>,
    department: Option<String>,
    date_from: Option<String>,
    date_to: Option<String>,
    source_types: Option<String>,
    json: bool,
) -> anyhow::Result<()> {
    let body = SearchBody {
        query,
        final_k,
        department,
        date_from,
        date_to,
        source_types: source_types.as_deref().map(parse_source_types).transpose()?,
    };
    let request: SearchRequest = body.into_request()?;
    let snapshot = app::open_snapshot(config)?;
    let response = snapshot.search(&request)?;
    if json {
        println!("{}", serde_json::to_string_pretty(&response)?);
        return Ok(());
    }
    if let Some(w) = &response.warning {
        eprintln!("warning: {w}");
    }
    if response.results.is_empty() {
        println!("no results");
    }
    for (i, r) in response.results.iter().enumerate() {
        println!(
            "{:>2}. [{:.4}] {} ({}, {}, {})\n    {}\n    {}",
            i + 1,
            r.score,
            r.ticket_id,
            r.department,
            r.source_type.as_str(),
            r.last_updated.format("%Y-%m-%d"),
            r.snippet.replace('\n', " "),
            r.link
        );
    }
    Ok(())
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info")))
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let config = load_config(&cli.config)?;
    match cli.command {
        Command::Serve { bind } => tokio::runtime::Runtime::new()?.block_on(serve(config, bind)),
        Command::BuildIndex { corpus } => build_index(&config, &corpus),
        Command::GenCorpus {
            seed,
            tickets,
            languages,
            raw,
            out,
        } => gen_corpus(seed, tickets, &languages, raw, out, &config),
        Command::Search {
            query,
            final_k,
            department,
            date_from,
            date_to,
            source_types,
            json,
        } => search(&config, query, final_k, department, date_from, date_to, source_types, json),
    }
}
