use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use icr::bench::{bench_pipeline, BenchConfig};
use icr::icra::{validate_dir, DEFAULT_ROW_SUM_TOLERANCE};
use icr::metrics::{report, Metric, Qrels, Run};
use icr::pipeline::{
    export_layouts, run_rerank, threads_from_env, write_rerank_output, BackendSpec, RunConfig, TokenScoreFile,
};
use icr::viz::render_heatmap;
use icr::{OrderMode, QueryStyle, ScoreMode, ToyConfig};

#[derive(Parser)]
#[command(name = "icr", version, about = "Attention-based in-context re-ranking")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Re-rank candidates; writes a TREC run and `<out>.tokens.json`.
    Rerank {
        #[command(flatten)]
        input: InputArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write query and calibration layout JSON for each query.
    LayoutExport {
        #[command(flatten)]
        input: InputArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a run against qrels. Repeat `--task name=run,qrels` for several tasks.
    Eval {
        #[arg(long)]
        run: Option<PathBuf>,
        #[arg(long)]
        qrels: Option<PathBuf>,
        #[arg(long = "task")]
        tasks: Vec<String>,
        #[arg(long, value_delimiter = ',', default_value = "10")]
        k: Vec<usize>,
        /// Write the report as JSON here as well.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render token scores as an HTML heatmap.
    Viz {
        #[arg(long)]
        scores: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check every ICRA dump in a directory.
    Validate {
        #[arg(long)]
        dir: PathBuf,
        #[arg(long, default_value_t = DEFAULT_ROW_SUM_TOLERANCE)]
        tolerance: f64,
    },
    /// Time the toy pipeline for several candidate-list sizes.
    Bench {
        #[arg(long, value_delimiter = ',', default_value = "20,40,60,80,100")]
        k: Vec<usize>,
        #[arg(long, default_value_t = 3)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        parallel: bool,
        #[command(flatten)]
        toy: ToyArgs,
        /// CSV output; the JSON summary goes next to it.
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args, Clone)]
struct ToyArgs {
    #[arg(long, default_value_t = 2)]
    layers: usize,
    #[arg(long, default_value_t = 2)]
    heads: usize,
    #[arg(long, default_value_t = 32)]
    dim: usize,
}

#[derive(Args)]
struct InputArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    queries: PathBuf,
    #[arg(long)]
    candidates: PathBuf,
    /// `toy`, `planted:<plant.json>` or `dump:<dir>`.
    #[arg(long, default_value = "toy")]
    backend: String,
    /// `reversed`, `retriever` or `random`.
    #[arg(long, default_value = "reversed")]
    order: String,
    /// `full`, `no_calibration`, `last_token_only` or `neither`.
    #[arg(long, default_value = "full")]
    mode: String,
    /// Override every query's prompt style (`qa` or `ie`).
    #[arg(long)]
    style: Option<QueryStyle>,
    /// Re-rank only the top k retrieved candidates.
    #[arg(long)]
    k: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    toy: ToyArgs,
}

impl ToyArgs {
    fn config(&self, seed: u64) -> ToyConfig {
        ToyConfig {
            layers: self.layers,
            heads: self.heads,
            model_dim: self.dim,
            seed,
            ..ToyConfig::default()
        }
    }
}

impl InputArgs {
    fn run_config(&self) -> Result<RunConfig> {
        let backend = match self.backend.split_once(':') {
            None if self.backend == "toy" => BackendSpec::Toy(self.toy.config(self.seed)),
            Some(("planted", p)) => BackendSpec::Planted { plant: p.into() },
            Some(("dump", d)) => BackendSpec::Dump { dir: d.into() },
            _ => bail!("unknown backend `{}`", self.backend),
        };
        let order = match self.order.as_str() {
            "reversed" => OrderMode::Reversed,
            "retriever" => OrderMode::Retriever,
            "random" => OrderMode::Random(self.seed),
            other => bail!("unknown order `{other}`"),
        };
        let mode: ScoreMode = self.mode.parse().map_err(anyhow::Error::msg)?;
        if self.k == Some(0) {
            bail!("--k must be positive");
        }
        let mut config = RunConfig::new(&self.corpus, &self.queries, &self.candidates);
        config.backend = backend;
        config.order = order;
        config.mode = mode;
        config.style = self.style;
        config.top_k = self.k;
        config.threads = threads_from_env();
        Ok(config)
    }
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn eval(
    run: Option<PathBuf>,
    qrels: Option<PathBuf>,
    tasks: Vec<String>,
    k: Vec<usize>,
    out: Option<PathBuf>,
) -> Result<()> {
    let mut specs: Vec<(String, PathBuf, PathBuf)> = Vec::new();
    match (run, qrels) {
        (Some(r), Some(q)) => specs.push(("run".into(), r, q)),
        (None, None) => {}
        _ => bail!("--run and --qrels go together"),
    }
    for t in tasks {
        let (name, files) = t.split_once('=').context("--task expects name=run,qrels")?;
        let (r, q) = files.split_once(',').context("--task expects name=run,qrels")?;
        specs.push((name.into(), r.into(), q.into()));
    }
    if specs.is_empty() {
        bail!("nothing to evaluate");
    }
    if k.contains(&0) {
        bail!("k values must be positive");
    }
    let mut loaded = Vec::new();
    for (name, r, q) in specs {
        let run = Run::parse(&read(&r)?).with_context(|| r.display().to_string())?;
        let qrels = Qrels::parse(&read(&q)?).with_context(|| q.display().to_string())?;
        loaded.push((name, run, qrels));
    }
    let rep = report(&loaded, &Metric::for_cutoffs(&k))?;
    print!("{}", rep.to_table());
    if let Some(out) = out {
        std::fs::write(&out, serde_json::to_vec_pretty(&rep)?)?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Rerank { input, out } => {
            let config = input.run_config()?;
            let output = run_rerank(&config)?;
            let tokens = write_rerank_output(&output, config.mode, &out)?;
            eprintln!(
                "{} queries -> {} ({})",
                output.results.len(),
                out.display(),
                tokens.display()
            );
        }
        Command::LayoutExport { input, out } => {
            let written = export_layouts(&input.run_config()?, &out)?;
            eprintln!("wrote {} layout files to {}", written.len(), out.display());
        }
        Command::Eval {
            run,
            qrels,
            tasks,
            k,
            out,
        } => eval(run, qrels, tasks, k, out)?,
        Command::Viz { scores, out } => {
            let file: TokenScoreFile =
                serde_json::from_str(&read(&scores)?).with_context(|| format!("parsing {}", scores.display()))?;
            std::fs::write(&out, render_heatmap(&file)).with_context(|| format!("writing {}", out.display()))?;
        }
        Command::Validate { dir, tolerance } => {
            let mut bad = 0;
            for (path, result) in validate_dir(&dir, tolerance)? {
                match result {
                    Ok(r) if r.is_clean() => println!("ok   {} ({} rows)", path.display(), r.rows_checked),
                    Ok(r) => {
                        bad += 1;
                        println!("FAIL {} ({} violations)", path.display(), r.violations.len());
                        for v in r.violations.iter().take(10) {
                            println!("     layer {} head {} row {}: {:?}", v.layer, v.head, v.row, v.kind);
                        }
                    }
                    Err(e) => {
                        bad += 1;
                        println!("FAIL {}: {e}", path.display());
                    }
                }
            }
            if bad > 0 {
                bail!("{bad} invalid dump(s)");
            }
        }
        Command::Bench {
            k,
            trials,
            seed,
            parallel,
            toy,
            out,
        } => {
            let config = BenchConfig {
                toy: ToyConfig {
                    max_len: BenchConfig::default().toy.max_len,
                    ..toy.config(seed)
                },
                ks: k,
                trials,
                seed,
                parallel,
                ..BenchConfig::default()
            };
            let rep = bench_pipeline(&config)?;
            std::fs::write(&out, rep.to_csv())?;
            std::fs::write(out.with_extension("json"), serde_json::to_vec_pretty(&rep)?)?;
            for s in &rep.summary {
                println!(
                    "K={:<4} tokens={:<6} median {:>9.2} ms  icr FP {}  listwise FP {}",
                    s.k, s.context_tokens, s.median_ms, s.icr_forward_passes, s.listwise_forward_passes
                );
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
