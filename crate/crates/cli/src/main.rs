use std::io::{BufRead, BufReader, BufWriter, Write};
use std::net::{TcpListener, TcpStream};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mgdspr_core::error::CoreError;
use mgdspr_core::pipeline::{self, PipelineConfig, Retrieval, Retriever, SweepAxis};
use serde::{Deserialize, Serialize};

#[derive(Parser)]
#[command(name = "mgdspr", version, about = "Two-tower product retrieval: data, training, index, evaluation and serving")]
struct Cli {
    /// Pipeline config (TOML). Built-in defaults when omitted.
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,
    /// Master seed; overrides the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic corpus.
    GenData,
    /// Train from initialization; writes the checkpoint and metrics CSV.
    Train(TrainArgs),
    /// Write item vectors for the whole catalog.
    Export,
    /// Build the ANN index from exported item vectors.
    BuildIndex(IndexArgs),
    /// Answer a file of JSON requests, one per line.
    Search(SearchArgs),
    /// Offline evaluation over the test clicks.
    Eval(EvalArgs),
    /// Train and evaluate one model per value of a hyperparameter.
    Sweep(SweepArgs),
    /// Serve JSON-line requests over TCP.
    Serve(ServeArgs),
    /// gen-data, train, export, build-index and eval in sequence.
    Run,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    negatives: Option<usize>,
    #[arg(long)]
    hard_negatives: Option<usize>,
    #[arg(long)]
    temperature: Option<f64>,
    #[arg(long)]
    learning_rate: Option<f64>,
    /// Train with the hinge loss at this margin instead of softmax.
    #[arg(long)]
    hinge_margin: Option<f64>,
}

#[derive(Args)]
struct IndexArgs {
    #[arg(long)]
    columns: Option<usize>,
    #[arg(long)]
    branching: Option<usize>,
    #[arg(long)]
    depth: Option<usize>,
    #[arg(long)]
    scan_ratio: Option<f32>,
    #[arg(long = "index-seed")]
    index_seed: Option<u64>,
}

#[derive(Args)]
struct SearchArgs {
    /// JSON lines of `{"user_id": .., "query": "..", "k": ..}`; `-` for stdin.
    queries: PathBuf,
    #[arg(long)]
    scan_ratio: Option<f32>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    max_queries: Option<usize>,
    #[arg(long)]
    scan_ratio: Option<f32>,
}

#[derive(Args)]
struct SweepArgs {
    /// `tau` or `n_hard`.
    #[arg(long)]
    axis: String,
    /// Comma-separated values.
    #[arg(long, value_delimiter = ',', required = true)]
    values: Vec<f64>,
    /// Working directory for per-value artifacts.
    #[arg(long, default_value = "out/sweep")]
    work: PathBuf,
    #[arg(long, default_value = "out/sweep.csv")]
    out: PathBuf,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:7878")]
    addr: String,
    #[arg(long)]
    scan_ratio: Option<f32>,
}

#[derive(Debug, Deserialize)]
struct Request {
    user_id: u32,
    query: String,
    k: Option<usize>,
}

#[derive(Debug, Serialize)]
struct Response {
    item_ids: Vec<u32>,
    scores: Vec<f32>,
    kept: usize,
    dropped: usize,
}

impl From<Retrieval> for Response {
    fn from(r: Retrieval) -> Self {
        Self {
            item_ids: r.kept.iter().map(|h| h.item_id).collect(),
            scores: r.kept.iter().map(|h| h.score).collect(),
            kept: r.kept.len(),
            dropped: r.dropped,
        }
    }
}

enum Failure {
    Usage(String),
    Core(CoreError),
}

impl From<CoreError> for Failure {
    fn from(e: CoreError) -> Self {
        Self::Core(e)
    }
}

fn exit_code(e: &CoreError) -> u8 {
    match e {
        CoreError::Config(_) => 1,
        CoreError::Numeric(_) | CoreError::Diverged { .. } => 3,
        _ => 2,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Core(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn load_config(cli: &Cli) -> Result<PipelineConfig, Failure> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg = cfg.with_seed(s);
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), Failure> {
    let mut cfg = load_config(&cli)?;
    match cli.command {
        Command::GenData => {
            cfg.data.validate()?;
            let c = pipeline::gen_data(&cfg)?;
            log::info!(
                "wrote {} items, {} users, {} train and {} test clicks to {}",
                c.items.len(),
                c.users.len(),
                c.clicks_train.len(),
                c.clicks_test.len(),
                cfg.paths.corpus.display()
            );
        }
        Command::Train(a) => {
            apply_train(&mut cfg, &a);
            cfg.validate()?;
            let corpus = pipeline::load_corpus(&cfg)?;
            let (_, _, out) = pipeline::train_stage(&cfg, &corpus)?;
            log::info!(
                "trained {} steps, final Recall@{} {:?}; checkpoint {}",
                out.steps,
                cfg.train.eval_k,
                out.final_recall(),
                cfg.paths.checkpoint.display()
            );
        }
        Command::Export => {
            let corpus = pipeline::load_corpus(&cfg)?;
            let m = pipeline::export_stage(&cfg, &corpus)?;
            log::info!("exported {} × {} to {}", m.len(), m.dim(), cfg.paths.embeddings.display());
        }
        Command::BuildIndex(a) => {
            let i = &mut cfg.index;
            set(&mut i.n_columns, a.columns);
            set(&mut i.branching, a.branching);
            set(&mut i.depth, a.depth);
            set(&mut i.max_scan_ratio, a.scan_ratio);
            set(&mut i.seed, a.index_seed);
            i.validate().map_err(CoreError::from)?;
            let index = pipeline::build_index_stage(&cfg)?;
            log::info!("indexed {} items in {} columns at {}", index.len(), index.columns().len(), cfg.paths.index.display());
        }
        Command::Search(a) => {
            set_scan(&mut cfg, a.scan_ratio)?;
            let corpus = pipeline::load_corpus(&cfg)?;
            let r = Retriever::load(&cfg, &corpus)?;
            let input: Box<dyn BufRead> = if a.queries == Path::new("-") {
                Box::new(BufReader::new(std::io::stdin()))
            } else {
                let f = std::fs::File::open(&a.queries).map_err(CoreError::file(&a.queries))?;
                Box::new(BufReader::new(f))
            };
            let mut out = BufWriter::new(std::io::stdout().lock());
            for (n, line) in input.lines().enumerate() {
                let line = line.map_err(CoreError::file(&a.queries))?;
                if line.trim().is_empty() {
                    continue;
                }
                let req: Request = serde_json::from_str(&line).map_err(|e| CoreError::Parse {
                    path: a.queries.clone(),
                    line: n + 1,
                    message: e.to_string(),
                })?;
                let resp = answer(&r, &req)?;
                writeln!(out, "{}", serde_json::to_string(&resp).expect("response serializes")).map_err(CoreError::from)?;
            }
            out.flush().map_err(CoreError::from)?;
        }
        Command::Eval(a) => {
            set_scan(&mut cfg, a.scan_ratio)?;
            if a.max_queries.is_some() {
                cfg.eval.max_queries = a.max_queries;
            }
            let corpus = pipeline::load_corpus(&cfg)?;
            let report = pipeline::eval_stage(&cfg, &corpus)?;
            println!(
                "recall@{} {:.4}  p_good {:.4}  num_prank {:.1}  num_rank {:.1}  queries {}",
                cfg.eval.k_recall, report.recall_at_k, report.p_good, report.num_prank, report.num_rank, report.n_queries
            );
        }
        Command::Sweep(a) => {
            let axis = SweepAxis::parse(&a.axis).ok_or_else(|| Failure::Usage(format!("unknown sweep axis `{}`", a.axis)))?;
            cfg.validate()?;
            let corpus = pipeline::load_corpus(&cfg)?;
            let rows = pipeline::run_sweep(&cfg, &corpus, axis, &a.values, &a.work)?;
            if let Some(dir) = a.out.parent() {
                std::fs::create_dir_all(dir).map_err(CoreError::file(dir))?;
            }
            pipeline::write_sweep_csv(&rows, &a.out)?;
            for r in &rows {
                println!("{} p_good {:.4} recall {:.4}", r.value, r.p_good, r.recall);
            }
        }
        Command::Serve(a) => {
            set_scan(&mut cfg, a.scan_ratio)?;
            let corpus = pipeline::load_corpus(&cfg)?;
            let r = Retriever::load(&cfg, &corpus)?;
            let listener = TcpListener::bind(&a.addr).map_err(|e| Failure::Usage(format!("cannot bind {}: {e}", a.addr)))?;
            let local = listener.local_addr().map_err(CoreError::from)?;
            println!("listening on {local}");
            std::io::stdout().flush().map_err(CoreError::from)?;
            serve(&r, listener);
        }
        Command::Run => {
            let report = pipeline::run_all(&cfg)?;
            println!("recall@{} {:.4}  p_good {:.4}", cfg.eval.k_recall, report.recall_at_k, report.p_good);
        }
    }
    Ok(())
}

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

fn set_scan(cfg: &mut PipelineConfig, scan: Option<f32>) -> Result<(), Failure> {
    if let Some(s) = scan {
        if !(s > 0.0 && s <= 1.0) {
            return Err(Failure::Usage(format!("scan ratio must be in (0, 1], got {s}")));
        }
        cfg.eval.scan_ratio = Some(s);
    }
    Ok(())
}

fn apply_train(cfg: &mut PipelineConfig, a: &TrainArgs) {
    let t = &mut cfg.train;
    if a.steps.is_some() {
        t.max_steps = a.steps;
    }
    set(&mut t.epochs, a.epochs);
    set(&mut t.batch_size, a.batch_size);
    set(&mut t.negatives, a.negatives);
    set(&mut t.loss.hard_negatives, a.hard_negatives);
    set(&mut t.loss.temperature, a.temperature);
    set(&mut t.learning_rate, a.learning_rate);
    if let Some(margin) = a.hinge_margin {
        t.loss.kind = mgdspr_core::training::LossKind::Hinge { margin };
    }
}

fn answer(r: &Retriever, req: &Request) -> Result<Response, CoreError> {
    let k = req.k.unwrap_or_else(|| r.default_k());
    Ok(r.retrieve_text(req.user_id, &req.query, k)?.into())
}

/// One thread per connection over the shared snapshot.
fn serve(r: &Retriever, listener: TcpListener) {
    std::thread::scope(|s| {
        for conn in listener.incoming() {
            match conn {
                Ok(stream) => {
                    s.spawn(move || {
                        if let Err(e) = handle(r, stream) {
                            log::warn!("connection closed: {e}");
                        }
                    });
                }
                Err(e) => log::warn!("accept failed: {e}"),
            }
        }
    });
}

fn handle(r: &Retriever, stream: TcpStream) -> std::io::Result<()> {
    let reader = BufReader::new(stream.try_clone()?);
    let mut out = BufWriter::new(stream);
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let reply = match serde_json::from_str::<Request>(&line) {
            Ok(req) => match answer(r, &req) {
                Ok(resp) => serde_json::to_string(&resp).expect("response serializes"),
                Err(e) => serde_json::json!({ "error": e.to_string() }).to_string(),
            },
            Err(e) => serde_json::json!({ "error": format!("bad request: {e}") }).to_string(),
        };
        writeln!(out, "{reply}")?;
        out.flush()?;
    }
    Ok(())
}
