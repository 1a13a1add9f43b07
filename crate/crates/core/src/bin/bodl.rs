use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use bodl::harness::{median, summary_table, NetSettings};
use bodl::{
    gen_drift_stream, prequential_run, run_suite, BaselineParams, BilevelConfig, DetectorConfig, Error,
    GeneratorSpec, LearnerSpec, MetricsReport, Result, RunConfig, StreamSpec,
};

#[derive(Parser)]
#[command(name = "bodl", version, about = "Online deep learning with drift-triggered bilevel adaptation")]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Prequential run of one learner on one stream; prints a JSON report.
    Run(RunArgs),
    /// bodl-2 / bodl-1 / bodl-base over several seeds.
    Ablate(AblateArgs),
    /// Runs a JSON suite in parallel and writes a summary table.
    Bench(BenchArgs),
    /// Writes a synthetic stream to CSV.
    Gen(GenArgs),
}

#[derive(Args, Clone)]
struct HyperArgs {
    /// Hedge discount rate.
    #[arg(long)]
    eta: Option<f64>,
    /// Similarity penalty weight.
    #[arg(long)]
    lambda: Option<f64>,
    /// Optimizer learning rate.
    #[arg(long)]
    lr: Option<f64>,
    /// Number of hidden layers.
    #[arg(long)]
    layers: Option<usize>,
    /// Hidden width.
    #[arg(long)]
    width: Option<usize>,
    /// Episodic memory capacity.
    #[arg(long)]
    mem: Option<usize>,
    /// Inner (and look-ahead) SGD rate.
    #[arg(long)]
    mu: Option<f64>,
    /// Outer interpolation rate.
    #[arg(long)]
    gamma: Option<f64>,
    /// Inner steps per adaptation.
    #[arg(long)]
    inner: Option<usize>,
}

impl HyperArgs {
    fn apply(&self, cfg: &mut RunConfig) {
        let net = &mut cfg.network;
        set(&mut net.eta, self.eta);
        set(&mut net.lambda, self.lambda);
        set(&mut net.learning_rate, self.lr);
        set(&mut net.hidden_layers, self.layers);
        set(&mut net.width, self.width);
        set(&mut cfg.memory_capacity, self.mem);
        set(&mut cfg.bilevel.inner_rate, self.mu);
        set(&mut cfg.bilevel.outer_rate, self.gamma);
        set(&mut cfg.bilevel.inner_steps, self.inner);
    }
}

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

#[derive(Args)]
struct RunArgs {
    /// `csv:pima`, `csv:path/to.csv;label=0`, `sea:...` or `hyperplane:...`.
    #[arg(long)]
    stream: StreamSpec,
    #[arg(long, default_value = "bodl-2")]
    learner: LearnerSpec,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    hyper: HyperArgs,
    /// Report path (stdout when absent).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Include wall-clock time in the report (makes it non-reproducible).
    #[arg(long)]
    timing: bool,
}

#[derive(Args)]
struct AblateArgs {
    #[arg(long)]
    stream: StreamSpec,
    /// `1..5` (inclusive) or `1,2,3`.
    #[arg(long, default_value = "1..5", value_parser = parse_seeds)]
    seeds: Seeds,
    #[command(flatten)]
    hyper: HyperArgs,
    #[arg(long, default_value_t = default_workers())]
    workers: usize,
    /// Summary table path (stdout when absent).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    /// Suite file.
    #[arg(long)]
    config: PathBuf,
    #[arg(long, default_value_t = default_workers())]
    workers: usize,
    /// Summary table path (stdout when absent).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Directory for one JSON report per run.
    #[arg(long)]
    reports: Option<PathBuf>,
}

#[derive(Args)]
struct GenArgs {
    #[arg(long)]
    spec: GeneratorSpec,
    #[arg(long)]
    out: PathBuf,
}

fn default_workers() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}

#[derive(Clone)]
struct Seeds(Vec<u64>);

fn parse_seeds(s: &str) -> std::result::Result<Seeds, String> {
    let bad = |_| format!("bad seed list `{s}`");
    if let Some((a, b)) = s.split_once("..") {
        let (a, b): (u64, u64) = (a.trim().parse().map_err(bad)?, b.trim().parse().map_err(bad)?);
        if a > b {
            return Err(format!("empty seed range `{s}`"));
        }
        return Ok(Seeds((a..=b).collect()));
    }
    s.split(',').map(|t| t.trim().parse().map_err(bad)).collect::<std::result::Result<_, _>>().map(Seeds)
}

/// Suite file: explicit `runs`, and/or the grid `streams × learners × seeds`
/// sharing the optional hyperparameter sections.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Suite {
    #[serde(default)]
    runs: Vec<RunConfig>,
    #[serde(default)]
    streams: Vec<StreamSpec>,
    #[serde(default)]
    learners: Vec<LearnerSpec>,
    #[serde(default)]
    seeds: Vec<u64>,
    network: Option<NetSettings>,
    bilevel: Option<BilevelConfig>,
    detector: Option<DetectorConfig>,
    memory_capacity: Option<usize>,
    baseline: Option<BaselineParams>,
}

impl Suite {
    fn expand(self) -> Vec<RunConfig> {
        let mut out = self.runs;
        let seeds = if self.seeds.is_empty() { vec![0] } else { self.seeds };
        for stream in &self.streams {
            for learner in &self.learners {
                for &seed in &seeds {
                    let mut c = RunConfig::new(stream.clone(), *learner, seed);
                    set(&mut c.network, self.network.clone());
                    set(&mut c.bilevel, self.bilevel);
                    set(&mut c.detector, self.detector);
                    set(&mut c.memory_capacity, self.memory_capacity);
                    set(&mut c.baseline, self.baseline);
                    out.push(c);
                }
            }
        }
        out
    }
}

fn write_out(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => Ok(fs::write(p, text)?),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn run(args: RunArgs) -> Result<()> {
    let mut cfg = RunConfig::new(args.stream, args.learner, args.seed);
    args.hyper.apply(&mut cfg);
    let report = prequential_run(&cfg)?;
    if let Some(t) = report.wall_time_secs {
        eprintln!("{} on {}: accuracy {:.4} in {t:.2}s", cfg.learner, cfg.stream, report.accuracy());
    }
    let report = if args.timing { report } else { report.without_timing() };
    write_out(args.out.as_deref(), &(report.to_json()? + "\n"))
}

fn collect(results: Vec<Result<MetricsReport>>, configs: &[RunConfig]) -> Result<Vec<MetricsReport>> {
    let mut ok = Vec::with_capacity(results.len());
    let mut failed = 0;
    for (r, c) in results.into_iter().zip(configs) {
        match r {
            Ok(r) => ok.push(r),
            Err(e) => {
                failed += 1;
                eprintln!("run {} on {} (seed {}) failed: {e}", c.learner, c.stream, c.seed);
            }
        }
    }
    if failed > 0 && ok.is_empty() {
        return Err(Error::Config(format!("all {failed} runs failed")));
    }
    Ok(ok)
}

fn ablate(args: AblateArgs) -> Result<()> {
    let mut configs = Vec::new();
    for l in LearnerSpec::ABLATION {
        for &s in &args.seeds.0 {
            let mut c = RunConfig::new(args.stream.clone(), l, s);
            args.hyper.apply(&mut c);
            configs.push(c);
        }
    }
    let reports = collect(run_suite(&configs, args.workers), &configs)?;
    for l in LearnerSpec::ABLATION {
        let accs: Vec<f64> = reports.iter().filter(|r| r.config.learner == l).map(|r| r.accuracy()).collect();
        if !accs.is_empty() {
            eprintln!("{l}: median accuracy {:.4} over {} seeds", median(&accs), accs.len());
        }
    }
    write_out(args.out.as_deref(), &summary_table(&reports))
}

fn bench(args: BenchArgs) -> Result<()> {
    let suite: Suite = serde_json::from_str(&fs::read_to_string(&args.config)?)?;
    let configs = suite.expand();
    if configs.is_empty() {
        return Err(Error::Config("suite has no runs".into()));
    }
    let reports = collect(run_suite(&configs, args.workers), &configs)?;
    if let Some(dir) = &args.reports {
        fs::create_dir_all(dir)?;
        for (i, r) in reports.iter().enumerate() {
            fs::write(dir.join(format!("{i:03}-{}-seed{}.json", r.config.learner, r.config.seed)), r.to_json()?)?;
        }
    }
    write_out(args.out.as_deref(), &summary_table(&reports))
}

fn gen(args: GenArgs) -> Result<()> {
    let stream = gen_drift_stream(&args.spec)?;
    stream.write_csv(&args.out)?;
    eprintln!("wrote {} instances to {}", stream.len(), args.out.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match cli.cmd {
        Command::Run(a) => run(a),
        Command::Ablate(a) => ablate(a),
        Command::Bench(a) => bench(a),
        Command::Gen(a) => gen(a),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
