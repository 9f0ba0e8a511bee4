use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use listrank::backend::{BackendConfig, Gateway};
use listrank::harness::{
    self, cmd_eval, cmd_latency, cmd_rerank, cmd_reward, load_dataset, read_rollouts, read_run, run_rankings,
    write_run, BackendSpec, DatasetBundle, DatasetPaths, FileConfig, RerankOptions, RUN_TAG,
};
use listrank::metrics::{RelevanceJudgments, RewardParams};
use listrank::synthesis::{self, SynthesisConfig, Synthesizer};
use listrank::training::{grpo_loss, read_rollout_groups, GrpoParams};
use listrank::window::{plan_windows, WindowParams};
use listrank::{Error, Result};

#[derive(Parser)]
#[command(name = "listrank", version, about = "Listwise LLM reranking, evaluation and training-data tools")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Rerank a first-stage run with a sliding window.
    Rerank(RerankArgs),
    /// NDCG@k of a run against qrels.
    Eval(EvalArgs),
    /// Gated multi-view reward and group advantages for policy rollouts.
    Reward(RewardArgs),
    /// Drop training records whose consistency is below alpha.
    Filter(FilterArgs),
    /// Build training records with a teacher backend.
    Synthesize(SynthesizeArgs),
    /// Print the windows a list of a given length is split into.
    PlanWindows(PlanArgs),
    /// Seconds per query over repeated reranking runs.
    Latency(LatencyArgs),
    /// GRPO loss per group from a rollout log-prob file.
    Grpo(GrpoArgs),
}

#[derive(Args, Clone)]
struct WindowArgs {
    /// Window size.
    #[arg(long, default_value_t = 20)]
    window: usize,
    /// Step between window starts.
    #[arg(long, default_value_t = 10)]
    stride: usize,
    /// Rerank only the top N candidates.
    #[arg(long, default_value_t = 100)]
    topn: usize,
}

impl WindowArgs {
    fn params(&self) -> Result<WindowParams> {
        WindowParams::new(self.topn, self.window, self.stride)
    }
}

#[derive(Args, Clone)]
struct BackendArgs {
    /// identity | reverse | oracle | noisy:<rate> | malformed:<mode> | http(s) endpoint URL.
    /// Defaults to the endpoint in --config.
    #[arg(long)]
    backend: Option<String>,
    /// TOML file with [backend] and [synthesis] tables.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    temperature: Option<f64>,
    #[arg(long)]
    max_tokens: Option<u32>,
    #[arg(long)]
    concurrency: Option<usize>,
    /// Seed for noisy mocks and list sampling.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl BackendArgs {
    fn file_config(&self) -> Result<FileConfig> {
        self.config.as_deref().map_or_else(|| Ok(FileConfig::default()), FileConfig::load)
    }

    fn backend_config(&self, file: &FileConfig) -> BackendConfig {
        let mut c = file.backend.clone();
        if let Some(m) = &self.model {
            c.model = m.clone();
        }
        if let Some(t) = self.temperature {
            c.temperature = t;
        }
        if let Some(t) = self.max_tokens {
            c.max_tokens = t;
        }
        if let Some(n) = self.concurrency {
            c.concurrency = n;
        }
        c
    }

    fn spec(&self, file: &FileConfig) -> Result<BackendSpec> {
        match (&self.backend, &self.config) {
            (Some(b), _) => b.parse(),
            (None, Some(_)) => Ok(BackendSpec::Http(file.backend.endpoint.clone())),
            (None, None) => Err(Error::Invalid("no backend given; pass --backend or --config".into())),
        }
    }

    fn gateway(&self, judgments: Option<&RelevanceJudgments>) -> Result<Gateway> {
        let file = self.file_config()?;
        let spec = self.spec(&file)?;
        spec.gateway(&self.backend_config(&file), self.seed, judgments.cloned())
    }
}

#[derive(Args)]
struct DatasetArgs {
    /// Corpus, one {"id","text"} object per line.
    #[arg(long)]
    corpus: PathBuf,
    /// Queries, one {"qid","text"} object per line.
    #[arg(long)]
    queries: PathBuf,
    /// First-stage run: qid Q0 docid rank score tag.
    #[arg(long)]
    run: PathBuf,
    /// Judgments: qid 0 docid grade.
    #[arg(long)]
    qrels: Option<PathBuf>,
}

impl DatasetArgs {
    fn load(&self, topn: usize) -> Result<DatasetBundle> {
        load_dataset(
            &DatasetPaths {
                corpus: self.corpus.clone(),
                queries: self.queries.clone(),
                run: self.run.clone(),
                qrels: self.qrels.clone(),
            },
            topn,
        )
    }
}

#[derive(Args)]
struct RerankArgs {
    #[command(flatten)]
    data: DatasetArgs,
    #[command(flatten)]
    window: WindowArgs,
    #[command(flatten)]
    backend: BackendArgs,
    /// Output run file.
    #[arg(long)]
    out: PathBuf,
    /// Also write key=value report lines here.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Fail on the first query whose reranking fails.
    #[arg(long)]
    strict: bool,
    /// Clip passages to this many characters in prompts.
    #[arg(long)]
    max_passage_chars: Option<usize>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    run: PathBuf,
    #[arg(long)]
    qrels: PathBuf,
    #[arg(long, default_value_t = 10)]
    k: usize,
    /// Print key=value lines instead of a table.
    #[arg(long)]
    lines: bool,
}

#[derive(Args)]
struct RewardArgs {
    /// Rollouts, one {"group","qid","response"} object per line.
    #[arg(long)]
    rollouts: PathBuf,
    /// Records file holding the labelled training lists.
    #[arg(long)]
    labels: PathBuf,
    #[arg(long, default_value_t = 0.2)]
    phi: f64,
    #[arg(long, default_value_t = 0.1)]
    gamma: f64,
    #[arg(long, default_value_t = 0.9)]
    rbo_p: f64,
    /// Output file; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct FilterArgs {
    #[arg(long)]
    records: PathBuf,
    #[arg(long, default_value_t = synthesis::DEFAULT_ALPHA)]
    alpha: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SynthesizeArgs {
    /// Candidates file, one query per line.
    #[arg(long)]
    input: PathBuf,
    /// Records file to write.
    #[arg(long)]
    out: PathBuf,
    /// Judgments the oracle and noisy mock teachers answer from.
    #[arg(long)]
    qrels: Option<PathBuf>,
    #[command(flatten)]
    backend: BackendArgs,
    /// Also apply the consistency filter at this alpha.
    #[arg(long)]
    alpha: Option<f64>,
}

#[derive(Args)]
struct PlanArgs {
    #[command(flatten)]
    window: WindowArgs,
    /// Candidate list length; defaults to --topn.
    #[arg(long)]
    len: Option<usize>,
}

#[derive(Args)]
struct LatencyArgs {
    #[command(flatten)]
    data: DatasetArgs,
    #[command(flatten)]
    window: WindowArgs,
    #[command(flatten)]
    backend: BackendArgs,
    #[arg(long, default_value_t = 1)]
    repeats: usize,
    #[arg(long)]
    strict: bool,
    /// Print key=value lines instead of a table.
    #[arg(long)]
    lines: bool,
}

#[derive(Args)]
struct GrpoArgs {
    /// One {"group","reward","policy_logprobs","ref_logprobs","old_logprobs"?} object per line.
    #[arg(long)]
    rollouts: PathBuf,
    #[arg(long, default_value_t = 0.2)]
    epsilon: f64,
    #[arg(long, default_value_t = 0.001)]
    beta: f64,
}

fn reader(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| io_err(path, e))
}

fn writer(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| io_err(path, e))
}

fn io_err(path: &Path, source: io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn name(path: &Path) -> String {
    path.display().to_string()
}

fn write_lines(path: &Path, lines: &[String]) -> Result<()> {
    let mut w = writer(path)?;
    for l in lines {
        writeln!(w, "{l}").map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

fn rerank(args: RerankArgs) -> Result<()> {
    let window = args.window.params()?;
    let bundle = args.data.load(window.n)?;
    let gateway = args.backend.gateway(Some(&bundle.qrels))?;
    let options = RerankOptions {
        window,
        strict: args.strict,
        max_passage_chars: args.max_passage_chars,
    };
    let (runs, report) = cmd_rerank(&bundle, &gateway, &options)?;
    let mut w = writer(&args.out)?;
    write_run(&mut w, &runs, RUN_TAG)
        .and_then(|_| w.flush())
        .map_err(|e| io_err(&args.out, e))?;
    if let Some(path) = &args.report {
        write_lines(path, &report.to_lines())?;
    }
    println!("{report}");
    Ok(())
}

fn eval(args: EvalArgs) -> Result<()> {
    let rows = read_run(reader(&args.run)?, &name(&args.run))?;
    let qrels = harness::load_qrels(&args.qrels)?;
    let report = cmd_eval(&run_rankings(&rows), &qrels, args.k);
    if args.lines {
        for l in report.to_lines() {
            println!("{l}");
        }
    } else {
        println!("{report}");
    }
    Ok(())
}

fn reward(args: RewardArgs) -> Result<()> {
    let params = RewardParams {
        phi: args.phi,
        gamma: args.gamma,
        p: args.rbo_p,
        ..RewardParams::default()
    };
    let rollouts = read_rollouts(reader(&args.rollouts)?, &name(&args.rollouts))?;
    let labels = synthesis::read_records(reader(&args.labels)?, &name(&args.labels))?;
    let out = cmd_reward(&rollouts, &labels, &params)?;
    let mut w: Box<dyn Write> = match &args.out {
        Some(p) => Box::new(writer(p)?),
        None => Box::new(io::stdout().lock()),
    };
    for r in &out {
        serde_json::to_writer(&mut w, r)?;
        writeln!(w).map_err(|e| io_err(Path::new("<output>"), e))?;
    }
    w.flush().map_err(|e| io_err(Path::new("<output>"), e))?;
    let failed = out.iter().filter(|r| r.error.is_some()).count();
    if failed > 0 {
        eprintln!("{failed} rollout(s) could not be scored");
    }
    Ok(())
}

fn write_records(path: &Path, records: &[synthesis::SynthesisRecord]) -> Result<()> {
    let mut w = writer(path)?;
    synthesis::write_records(&mut w, records)?;
    w.flush().map_err(|e| io_err(path, e))
}

fn filter(args: FilterArgs) -> Result<()> {
    let records = synthesis::read_records(reader(&args.records)?, &name(&args.records))?;
    let (kept, report) = synthesis::self_consistency_filter(records, args.alpha);
    write_records(&args.out, &kept)?;
    println!("{report}");
    Ok(())
}

fn synthesize(args: SynthesizeArgs) -> Result<()> {
    let file = args.backend.file_config()?;
    let judgments = args.qrels.as_deref().map(harness::load_qrels).transpose()?;
    let gateway = args.backend.gateway(judgments.as_ref())?;
    let config = SynthesisConfig {
        seed: args.backend.seed,
        ..file.synthesis
    };
    let inputs = synthesis::read_inputs(reader(&args.input)?, &name(&args.input))?;
    let (records, report) = Synthesizer::new(&gateway, config).run(&inputs);
    let records = match args.alpha {
        Some(alpha) => {
            let (kept, filter_report) = synthesis::self_consistency_filter(records, alpha);
            println!("{filter_report}");
            kept
        }
        None => records,
    };
    write_records(&args.out, &records)?;
    println!(
        "produced={} written={} skipped={} warnings={}",
        report.produced,
        records.len(),
        report.skipped.len(),
        report.warnings.len()
    );
    Ok(())
}

fn plan(args: PlanArgs) -> Result<()> {
    let params = args.window.params()?;
    let len = args.len.unwrap_or(params.n);
    let plan = plan_windows(&params, len.min(params.n))?;
    for (i, r) in plan.ranges.iter().enumerate() {
        println!("window {:>3}: ranks {:>4}..={:<4}", i + 1, r.start + 1, r.end);
    }
    println!("{} windows", plan.len());
    Ok(())
}

fn latency(args: LatencyArgs) -> Result<()> {
    let window = args.window.params()?;
    let bundle = args.data.load(window.n)?;
    let gateway = args.backend.gateway(Some(&bundle.qrels))?;
    let options = RerankOptions {
        window,
        strict: args.strict,
        max_passage_chars: None,
    };
    let report = cmd_latency(&bundle, &gateway, &options, args.repeats)?;
    if args.lines {
        for l in report.to_lines() {
            println!("{l}");
        }
    } else {
        println!("{report}");
    }
    Ok(())
}

fn grpo(args: GrpoArgs) -> Result<()> {
    let params = GrpoParams {
        epsilon: args.epsilon,
        beta: args.beta,
    };
    let groups = read_rollout_groups(reader(&args.rollouts)?, &name(&args.rollouts))?;
    println!("{:<16} {:>5} {:>14} {:>14} {:>14}", "group", "size", "loss", "surrogate", "kl");
    for (id, mut group) in groups {
        group.compute_advantages();
        let l = grpo_loss(&group, &params)?;
        println!(
            "{id:<16} {:>5} {:>14.8} {:>14.8} {:>14.8}",
            group.len(),
            l.loss,
            l.surrogate,
            l.kl
        );
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Rerank(a) => rerank(a),
        Command::Eval(a) => eval(a),
        Command::Reward(a) => reward(a),
        Command::Filter(a) => filter(a),
        Command::Synthesize(a) => synthesize(a),
        Command::PlanWindows(a) => plan(a),
        Command::Latency(a) => latency(a),
        Command::Grpo(a) => grpo(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
