use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use tagad_core::checkpoint;
use tagad_core::config::RunConfig;
use tagad_core::error::Error;
use tagad_core::evalkit::evaluate;
use tagad_core::io::{ensure_dir, load_dir, load_labels, save_dataset, write_idmap, write_text, IDMAP_FILE};
use tagad_core::pipeline::{bench, featurize, inject, run_pipeline};
use tagad_core::scorer::{parse_scores_csv, score, scores_csv};
use tagad_core::synthgen::{generate, SynthSpec};
use tagad_core::trainer::{grad_check, loss_log_csv, tiny_config, train_with, TrainError};
use tagad_core::{InjectionLabel, TagGraph};

const DEFAULT_SEED: u64 = 0;
const GRAD_CHECK_PROBES: usize = 64;
const GRAD_CHECK_TOLERANCE: f64 = 1e-3;

#[derive(Parser, Debug)]
#[command(name = "tagad", version, about = "Contrastive anomaly detection on text-attributed graphs")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Global {
    /// Seed for every random draw; overrides the config's seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Path to config.json.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, short, global = true)]
    verbose: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a clean synthetic dataset.
    Generate {
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Plant labeled anomalies in a dataset.
    Inject {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train both encoders.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Check gradients on a tiny configuration before training.
        #[arg(long)]
        grad_check: bool,
    },
    /// Score every node with a trained model.
    Score {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        rounds: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compute AUC, AP and ROC from scores and labels.
    Eval {
        #[arg(long)]
        scores: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        roc: Option<PathBuf>,
    },
    /// Time each stage on a dataset.
    Bench {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "bench.json")]
        out: PathBuf,
    },
    /// Inject, featurize, train, score and evaluate in one go.
    Pipeline {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Config(_) => 1,
            Error::Numeric(_) => 3,
            Error::Parse { .. } | Error::Validation(_) | Error::Io { .. } | Error::Json(_) => 2,
        };
        Failure { code, message: e.to_string() }
    }
}

fn usage(message: impl Into<String>) -> Failure {
    Failure { code: 1, message: message.into() }
}

struct Ctx {
    verbose: bool,
}

impl Ctx {
    fn log(&self, msg: &str) {
        eprintln!("[tagad] {msg}");
    }

    fn debug(&self, msg: &str) {
        if self.verbose {
            self.log(msg);
        }
    }
}

fn resolve_config(g: &Global, ctx: &Ctx) -> Result<RunConfig, Failure> {
    let mut cfg = match &g.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    match g.seed {
        Some(s) => cfg.seed = s,
        None if g.config.is_none() => {
            cfg.seed = DEFAULT_SEED;
            ctx.log(&format!("no --seed given, using default seed {DEFAULT_SEED}"));
        }
        None => {}
    }
    cfg.validate()?;
    ctx.log(&format!("seed {}", cfg.seed));
    ctx.log(&format!("config {}", serde_json::to_string(&cfg).expect("config serializes")));
    Ok(cfg)
}

/// Refuses to write into (or under) an input directory.
fn check_distinct(input: &Path, out: &Path) -> Result<(), Failure> {
    let (i, o) = (absolute(input), absolute(out));
    if o == i || o.starts_with(&i) {
        return Err(usage(format!(
            "output {} must not be inside input directory {}",
            out.display(),
            input.display()
        )));
    }
    Ok(())
}

/// Canonical form of `p`, resolving the longest existing ancestor.
fn absolute(p: &Path) -> PathBuf {
    let mut tail = Vec::new();
    let mut cur = p.to_path_buf();
    loop {
        if let Ok(c) = std::fs::canonicalize(&cur) {
            return tail.iter().rev().fold(c, |acc, part| acc.join(part));
        }
        match (cur.file_name().map(|f| f.to_os_string()), cur.parent()) {
            (Some(name), Some(parent)) => {
                tail.push(name);
                cur = if parent.as_os_str().is_empty() { PathBuf::from(".") } else { parent.to_path_buf() };
            }
            _ => return p.to_path_buf(),
        }
    }
}

fn load_graph(dir: &Path, out_dir: Option<&Path>) -> Result<TagGraph, Failure> {
    let ds = load_dir(dir)?;
    if let (Some(ids), Some(out)) = (&ds.original_ids, out_dir) {
        ensure_dir(out)?;
        write_idmap(ids, &out.join(IDMAP_FILE))?;
    }
    Ok(ds.graph)
}

fn parent_dir(file: &Path) -> PathBuf {
    match file.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    let ctx = Ctx { verbose: cli.global.verbose };
    match cli.command {
        Command::Generate { spec, out } => {
            let mut s = match &spec {
                Some(p) => SynthSpec::load(p)?,
                None => SynthSpec::default(),
            };
            match cli.global.seed {
                Some(seed) => s.seed = seed,
                None if spec.is_none() => ctx.log(&format!("no --seed given, using default seed {}", s.seed)),
                None => {}
            }
            s.validate()?;
            ctx.log(&format!("seed {}", s.seed));
            ctx.log(&format!("spec {}", serde_json::to_string(&s).expect("spec serializes")));
            let g = generate(&s)?;
            save_dataset(&g, &InjectionLabel::all_normal(g.node_count()), &out)?;
            ctx.log(&format!("wrote {} nodes, {} edges to {}", g.node_count(), g.edge_count(), out.display()));
        }
        Command::Inject { input, out } => {
            let cfg = resolve_config(&cli.global, &ctx)?;
            check_distinct(&input, &out)?;
            let g = load_graph(&input, Some(&out))?;
            let (g2, labels, report) = inject(&g, &cfg)?;
            save_dataset(&g2, &labels, &out)?;
            write_text(&out.join("report.json"), &report.to_json())?;
            ctx.log(&format!("label histogram {:?}", labels.histogram()));
        }
        Command::Train { data, out, grad_check: check } => {
            let cfg = resolve_config(&cli.global, &ctx)?;
            check_distinct(&data, &out)?;
            if check {
                run_grad_check(cfg.seed, &ctx)?;
            }
            let g = load_graph(&data, None)?;
            let features = featurize(&g, &cfg, Some(&data))?;
            ctx.log(&format!("features {:?}, {} x {}", features.provenance, features.matrix.rows(), features.dim()));
            let log_path = parent_dir(&out).join("loss_log.csv");
            let result = train_with(&g, &features, &cfg, |s| {
                if let Some(e) = s.log.last() {
                    ctx.debug(&format!("epoch {} loss {:.6}", s.epoch, e.loss));
                }
            });
            match result {
                Ok(state) => {
                    checkpoint::save(&out, &cfg, &state.model)?;
                    write_text(&log_path, &loss_log_csv(&state.log))?;
                    ctx.log(&format!("trained {} steps, model written to {}", state.optimizer.step, out.display()));
                }
                Err(TrainError::Diverged { message, last_good }) => {
                    checkpoint::save(&out, &cfg, &last_good.model)?;
                    write_text(&log_path, &loss_log_csv(&last_good.log))?;
                    ctx.log("last good model saved");
                    return Err(Error::Numeric(message).into());
                }
                Err(TrainError::Invalid(e)) => return Err(e.into()),
            }
        }
        Command::Score { model, data, rounds, out } => {
            let (mut cfg, m) = checkpoint::load(&model)?;
            if cli.global.config.is_some() {
                return Err(usage("score takes its configuration from the checkpoint; drop --config"));
            }
            if let Some(s) = cli.global.seed {
                cfg.seed = s;
            }
            if let Some(r) = rounds {
                cfg.rounds = r;
            }
            cfg.validate()?;
            ctx.log(&format!("seed {}", cfg.seed));
            ctx.log(&format!("config {}", serde_json::to_string(&cfg).expect("config serializes")));
            check_distinct(&data, &out)?;
            let g = load_graph(&data, None)?;
            let features = featurize(&g, &cfg, Some(&data))?;
            let recs = score(&m, &g, &features, &cfg, cfg.rounds)?;
            write_text(&out, &scores_csv(&recs))?;
            ctx.log(&format!("scored {} nodes over {} rounds", recs.len(), cfg.rounds));
        }
        Command::Eval { scores, labels, out, roc } => {
            ctx.log("eval uses no randomness");
            let text = std::fs::read_to_string(&scores).map_err(|e| Failure::from(Error::Io { path: scores.clone(), source: e }))?;
            let pairs = parse_scores_csv(&text, &scores.display().to_string())?;
            let n = pairs.len();
            let mut values = vec![f64::NAN; n];
            for (id, s) in pairs {
                if id >= n || !values[id].is_nan() {
                    return Err(Error::Validation(format!("scores.csv: id {id} duplicated or out of range")).into());
                }
                values[id] = s;
            }
            let l = load_labels(&labels, n)?;
            let report = evaluate(&values, &l)?;
            write_text(&out, &report.to_json())?;
            if let Some(r) = roc {
                write_text(&r, &report.roc_csv())?;
            }
            ctx.log(&format!("auc {:.4} ap {:.4}", report.auc, report.ap));
        }
        Command::Bench { data, out } => {
            let cfg = resolve_config(&cli.global, &ctx)?;
            check_distinct(&data, &out)?;
            let g = load_graph(&data, None)?;
            let report = bench(&g, &cfg, Some(&data))?;
            write_text(&out, &report.to_json())?;
            ctx.log(&format!("bench written to {}", out.display()));
        }
        Command::Pipeline { data, out } => {
            let cfg = resolve_config(&cli.global, &ctx)?;
            check_distinct(&data, &out)?;
            let g = load_graph(&data, Some(&out))?;
            let report = run_pipeline(&cfg, &g, &data, &out, &mut |m| ctx.log(m))?;
            println!("auc {:.6} ap {:.6}", report.auc, report.ap);
        }
    }
    Ok(())
}

fn run_grad_check(seed: u64, ctx: &Ctx) -> Result<(), Failure> {
    let spec = SynthSpec {
        nodes: 8,
        communities: 2,
        p_in: 0.6,
        p_out: 0.1,
        block_size: 12,
        tokens_mean: 10,
        tokens_jitter: 3,
        sentence_len: 4,
        noise: 0.1,
        seed,
    };
    let g = generate(&spec)?;
    let cfg = tiny_config(seed);
    let f = featurize(&g, &cfg, None)?;
    let report = grad_check(&g, &f, &cfg, GRAD_CHECK_PROBES)?;
    ctx.log(&format!("grad check: max relative error {:.3e} over {GRAD_CHECK_PROBES} probes", report.max_rel_error));
    if report.max_rel_error > GRAD_CHECK_TOLERANCE {
        return Err(Error::Numeric(format!(
            "gradient check failed: {:.3e} > {GRAD_CHECK_TOLERANCE}",
            report.max_rel_error
        ))
        .into());
    }
    Ok(())
}

fn configure_threads() -> Result<(), Failure> {
    if let Ok(v) = std::env::var("TAGAD_THREADS") {
        let n: usize = v
            .trim()
            .parse()
            .ok()
            .filter(|&n| n >= 1)
            .ok_or_else(|| usage(format!("TAGAD_THREADS must be a positive integer, got {v:?}")))?;
        tagad_core::set_threads(n);
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match configure_threads().and_then(|_| run(cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("[tagad] error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
