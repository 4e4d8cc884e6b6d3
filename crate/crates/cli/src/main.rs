use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use qrewrite_core::attribution::attribute_query;
use qrewrite_core::corpus::{load_corpus, Query};
use qrewrite_core::pipeline::{compare_dirs, open_retriever, Experiment, RunConfig};
use qrewrite_core::retriever::{NativeRetriever, RetrieverKind};
use qrewrite_core::rewrite::{select_top_tokens, MethodTag, MockLlmServer, RewriteScript};

#[derive(Parser)]
#[command(
    name = "qrewrite",
    version,
    about = "Attribution-guided query rewriting experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Run configuration file (`key = value` lines).
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Override a config key, e.g. `--set attribution.steps=128`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Shorthand for `--set retriever=...`.
    #[arg(long)]
    retriever: Option<RetrieverKind>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let mut config = match &self.config {
            Some(path) => RunConfig::load(path)
                .with_context(|| format!("reading config {}", path.display()))?,
            None => RunConfig::default(),
        };
        for assignment in &self.overrides {
            config.apply_override(assignment)?;
        }
        if let Some(kind) = self.retriever {
            config.retriever = kind;
        }
        config.validate()?;
        Ok(config)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Build a native retriever from the corpus and save its snapshot.
    Index {
        #[command(flatten)]
        config: ConfigArgs,
        /// Snapshot path; defaults to the config's `index` key.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the token attribution table for one query.
    Attribute {
        #[command(flatten)]
        config: ConfigArgs,
        /// Query text.
        query: String,
    },
    /// Run the configured methods and write trace.jsonl, per_query.jsonl and report.tsv.
    Run {
        #[command(flatten)]
        config: ConfigArgs,
        /// Only run these methods (repeatable); defaults to the config's `methods`.
        #[arg(long = "method")]
        methods: Vec<MethodTag>,
        /// Output directory; defaults to the config's `output` key.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Merge the per-query results of one or more run directories.
    Compare {
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        /// Where to write compare.tsv and compare.txt.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Serve a scripted chat-completions endpoint until interrupted.
    MockLlm {
        /// JSON rewrite script keyed by original query text.
        #[arg(long)]
        script: Option<PathBuf>,
        #[arg(long, default_value = "127.0.0.1:8089")]
        addr: String,
        /// Answer the first N requests with HTTP 503.
        #[arg(long, default_value_t = 0)]
        fail_first: usize,
    },
}

fn index(config: RunConfig, out: Option<PathBuf>) -> Result<()> {
    let Some(out) = out.or(config.index.clone()) else {
        bail!("no snapshot path: pass --out or set `index`");
    };
    if config.retriever == RetrieverKind::Bridge {
        bail!("the bridge retriever keeps its own index");
    }
    let corpus = load_corpus(config.corpus_path()?)?;
    let retriever = NativeRetriever::build(
        config.retriever,
        &corpus,
        config.seed,
        config.dim,
        config.expansions,
    )?;
    retriever.snapshot()?.save(&out)?;
    println!(
        "indexed {} documents ({} retriever) into {}",
        corpus.len(),
        config.retriever,
        out.display()
    );
    Ok(())
}

fn attribute(config: RunConfig, text: &str) -> Result<()> {
    let query = Query::new("cli", text);
    if query.tokens.is_empty() {
        bail!("the query has no tokens");
    }
    let retriever = open_retriever(&config)?;
    let ranked = retriever.search(&query, config.k_docs)?;
    let attributed = attribute_query(
        &query,
        &ranked,
        config.k_docs,
        config.steps,
        retriever.as_ref(),
        config.normalization,
    )?;
    let width = query
        .tokens
        .iter()
        .map(String::len)
        .max()
        .unwrap_or(5)
        .max(5);
    println!(
        "{:<width$}  {:>10}  {:>10}",
        "token",
        "raw",
        attributed.scheme.to_string()
    );
    for ((token, raw), norm) in query
        .tokens
        .iter()
        .zip(&attributed.raw)
        .zip(&attributed.normalized)
    {
        println!("{token:<width$}  {raw:>10.4}  {norm:>10.4}");
    }
    if attributed.no_evidence {
        println!("\nno documents retrieved; scores are uniform");
    } else {
        println!("\naveraged over {}", attributed.doc_ids.join(", "));
    }
    let top = select_top_tokens(&query, &attributed.normalized)?;
    println!("Tkn: {}", top.text);
    Ok(())
}

fn run(mut config: RunConfig, methods: Vec<MethodTag>, output: Option<PathBuf>) -> Result<()> {
    if !methods.is_empty() {
        config.methods = methods;
    }
    if let Some(output) = output {
        config.output = output;
    }
    config.validate()?;
    let experiment = Experiment::load(config)?;
    let outputs = experiment.run()?;
    let dir = &experiment.config.output;
    outputs.write(dir, &experiment.config)?;
    let errors: usize = outputs
        .runs
        .iter()
        .flat_map(|r| &r.traces)
        .filter(|t| t.error.is_some())
        .count();
    for report in &outputs.reports {
        let ndcg = report.mean(qrewrite_core::eval::Metric::Ndcg, 10);
        println!(
            "{:<5} {} queries evaluated, nDCG@10 {}",
            report.method.as_str(),
            report.evaluated(),
            ndcg.map_or("-".into(), |v| format!("{v:.4}"))
        );
    }
    if errors > 0 {
        println!("{errors} queries kept their original ranking after a rewriter failure");
    }
    println!("results in {}", dir.display());
    Ok(())
}

fn compare(runs: Vec<PathBuf>, output: Option<PathBuf>) -> Result<()> {
    let comparison = compare_dirs(&runs)?;
    let text = comparison.to_text();
    let dir = output.unwrap_or_else(|| runs[0].clone());
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    std::fs::write(dir.join("compare.tsv"), comparison.to_tsv())?;
    std::fs::write(dir.join("compare.txt"), &text)?;
    print!("{text}");
    Ok(())
}

fn mock_llm(script: Option<PathBuf>, addr: &str, fail_first: usize) -> Result<()> {
    let script = match script {
        Some(path) => RewriteScript::load(path)?,
        None => RewriteScript::default(),
    };
    let server = MockLlmServer::start(script, addr, fail_first)?;
    println!("{}", server.endpoint());
    server.wait();
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Index { config, out } => config.resolve().and_then(|c| index(c, out)),
        Command::Attribute { config, query } => config.resolve().and_then(|c| attribute(c, &query)),
        Command::Run {
            config,
            methods,
            output,
        } => config.resolve().and_then(|c| run(c, methods, output)),
        Command::Compare { runs, output } => compare(runs, output),
        Command::MockLlm {
            script,
            addr,
            fail_first,
        } => mock_llm(script, &addr, fail_first),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
