use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use modpipe_core::audit::{cache_cases, evaluate, parse_grid, sample, sweep, sweep_csv, Strata};
use modpipe_core::corpus::{
    generate_corpus_with, parse_generator_keys, parse_truth, Corpus, CorpusSpec,
};
use modpipe_core::detection::{
    Detector, ResidueDetector, SimulatedDetector, SubprocessDetector, VerifierRegistry,
};
use modpipe_core::log::{read_log, DecisionLog};
use modpipe_core::model::{parse_manifest, ContentItem, GroundTruth};
use modpipe_core::par::Execution;
use modpipe_core::pipeline::{DecisionStatus, Engine, ModerationConfig};
use modpipe_core::scoring::{decision_table_csv, Weights};
use modpipe_core::trust::TrustStore;
use modpipe_service::{AppState, ServiceConfig, DEFAULT_PORT};
use serde_json::json;

use crate::{read_json, read_text, system_now, write_bytes, CliError};

#[derive(Debug, Parser)]
#[command(
    name = "modpipe",
    version,
    about = "Moderation pipeline for AI-generated media"
)]
pub struct Cli {
    /// `parallel` or `sequential`; output is identical either way.
    #[arg(long, global = true)]
    pub exec: Option<Execution>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Moderate every item of a manifest into a decision log.
    Run(RunArgs),
    /// Generate a seeded synthetic corpus.
    GenCorpus {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Stratified random-sample audit of a decision log.
    Audit {
        #[arg(long)]
        log: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "label")]
        strata: Strata,
        #[arg(long)]
        report: PathBuf,
    },
    /// Threshold/weight tradeoff table over a corpus.
    Sweep {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        policy: Option<PathBuf>,
        /// `start:end:step` or a single value.
        #[arg(long, default_value = "0:1:0.05")]
        theta_grid: String,
        /// Extra weight points as `technical:trusted:risk`; repeatable.
        #[arg(long = "weights")]
        weights: Vec<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the decision table of a policy as CSV.
    DecisionTable {
        #[arg(long)]
        policy: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub policy: Option<PathBuf>,
    #[arg(long)]
    pub trust_store: PathBuf,
    /// Decision log file (batch) or data directory (serve).
    #[arg(long)]
    pub out: PathBuf,
    /// `residue`, `simulated:TPR:FPR[:SEED]` or `exec:PROGRAM [ARGS..]`;
    /// repeatable. Defaults to `residue`.
    #[arg(long = "detectors")]
    pub detectors: Vec<String>,
    /// JSON list of hex watermark keys for the residue detector.
    #[arg(long)]
    pub generator_keys: Option<PathBuf>,
    /// Registered verifiers (serve mode).
    #[arg(long)]
    pub verifiers: Option<PathBuf>,
    /// Unix seconds used as the evaluation time; defaults to the clock.
    #[arg(long)]
    pub now: Option<i64>,
    #[arg(long, conflicts_with = "serve")]
    pub batch: bool,
    /// Ingest the manifest into a service data directory and serve HTTP.
    #[arg(long)]
    pub serve: bool,
    #[arg(long, default_value_t = DEFAULT_PORT)]
    pub port: u16,
}

pub fn main_with(cli: Cli) -> Result<(), CliError> {
    let exec = cli.exec.unwrap_or_default();
    match cli.command {
        Command::Run(args) if args.serve => serve(args),
        Command::Run(args) => run_batch(args, exec),
        Command::GenCorpus { spec, out } => gen_corpus(&spec, &out, exec),
        Command::Audit {
            log,
            truth,
            n,
            seed,
            strata,
            report,
        } => audit(&log, &truth, n, seed, strata, &report),
        Command::Sweep {
            corpus,
            policy,
            theta_grid,
            weights,
            out,
        } => run_sweep(
            &corpus,
            policy.as_deref(),
            &theta_grid,
            &weights,
            &out,
            exec,
        ),
        Command::DecisionTable { policy, out } => {
            let cfg = load_policy(policy.as_deref())?;
            let csv = decision_table_csv(&cfg.policy);
            match out {
                Some(p) => write_bytes(&p, csv.as_bytes()),
                None => {
                    print!("{csv}");
                    Ok(())
                }
            }
        }
    }
}

fn load_policy(path: Option<&Path>) -> Result<ModerationConfig, CliError> {
    match path {
        Some(p) => Ok(ModerationConfig::from_json(&read_text(p)?)?),
        None => Ok(ModerationConfig::default()),
    }
}

/// Builds detectors from their command-line specs.
pub fn build_detectors(specs: &[String], keys: &[u64]) -> Result<Vec<Arc<dyn Detector>>, CliError> {
    let default = ["residue".to_owned()];
    let specs = if specs.is_empty() {
        &default[..]
    } else {
        specs
    };
    let mut out: Vec<Arc<dyn Detector>> = Vec::new();
    for (i, spec) in specs.iter().enumerate() {
        let bad = |why: &str| CliError::Usage(format!("detector `{spec}`: {why}"));
        let (kind, rest) = spec.split_once(':').unwrap_or((spec, ""));
        match kind {
            "residue" => out.push(Arc::new(ResidueDetector::new(keys.iter().copied()))),
            "simulated" => {
                let nums: Vec<&str> = rest.split(':').collect();
                let tpr = nums
                    .first()
                    .and_then(|v| v.parse().ok())
                    .ok_or_else(|| bad("missing TPR"))?;
                let fpr = nums
                    .get(1)
                    .and_then(|v| v.parse().ok())
                    .ok_or_else(|| bad("missing FPR"))?;
                let seed = match nums.get(2) {
                    Some(s) => s.parse().map_err(|_| bad("bad seed"))?,
                    None => 0,
                };
                out.push(Arc::new(
                    SimulatedDetector::new(tpr, fpr, seed).map_err(|e| bad(&e))?,
                ));
            }
            "exec" => {
                let mut words = rest.split_whitespace().map(str::to_owned);
                let program = words.next().ok_or_else(|| bad("missing program"))?;
                let id = if i == 0 {
                    "external".to_owned()
                } else {
                    format!("external-{i}")
                };
                out.push(Arc::new(SubprocessDetector::new(
                    id,
                    program,
                    words.collect(),
                )));
            }
            _ => return Err(bad("unknown kind")),
        }
    }
    Ok(out)
}

struct RunInputs {
    items: Vec<(ContentItem, Option<GroundTruth>)>,
    config: ModerationConfig,
    store: TrustStore,
    detectors: Vec<Arc<dyn Detector>>,
}

fn run_inputs(args: &RunArgs) -> Result<RunInputs, CliError> {
    let records = parse_manifest(&read_text(&args.manifest)?)?;
    let base = args.manifest.parent().unwrap_or(Path::new("."));
    let items = records
        .iter()
        .map(|r| Ok((r.load(base)?, r.ground_truth)))
        .collect::<Result<Vec<_>, CliError>>()?;
    let keys = match &args.generator_keys {
        Some(p) => parse_generator_keys(&read_text(p)?)
            .map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?,
        None => Vec::new(),
    };
    Ok(RunInputs {
        items,
        config: load_policy(args.policy.as_deref())?,
        store: TrustStore::from_json(&read_text(&args.trust_store)?)?,
        detectors: build_detectors(&args.detectors, &keys)?,
    })
}

fn run_batch(args: RunArgs, exec: Execution) -> Result<(), CliError> {
    let inputs = run_inputs(&args)?;
    let mut engine = Engine::new(inputs.config, inputs.store)?;
    for d in inputs.detectors {
        engine = engine.with_detector(d);
    }
    let (mut log, recovery) = DecisionLog::open(&args.out)?;
    if recovery.discarded_bytes > 0 {
        log::warn!(
            "{}: discarded {} byte torn tail",
            args.out.display(),
            recovery.discarded_bytes
        );
    }
    let now = args.now.unwrap_or_else(system_now);
    let outcomes = engine.run_batch(&inputs.items, now, exec, &mut log)?;
    let mut labels: BTreeMap<String, usize> = BTreeMap::new();
    let mut provisional = 0;
    let mut tasks = Vec::new();
    for o in &outcomes {
        *labels.entry(o.decision.label.to_string()).or_default() += 1;
        if o.decision.status == DecisionStatus::Provisional {
            provisional += 1;
        }
        tasks.extend(o.review_task.as_ref().map(|t| t.task_id.clone()));
    }
    let summary = json!({
        "items": outcomes.len(),
        "labels": labels,
        "provisional": provisional,
        "review_tasks": tasks.len(),
        "log": args.out,
    });
    println!("{summary}");
    Ok(())
}

fn serve(args: RunArgs) -> Result<(), CliError> {
    let inputs = run_inputs(&args)?;
    let mut cfg = ServiceConfig::new(&args.out);
    cfg.trust_store = inputs.store;
    cfg.detectors = inputs.detectors;
    cfg.policy = Some(inputs.config);
    if let Some(p) = &args.verifiers {
        cfg.registry = VerifierRegistry::from_json(&read_text(p)?)
            .map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?;
    }
    if let Some(now) = args.now {
        cfg.clock = Arc::new(move || now);
    }
    let state = AppState::open(cfg)?;
    for (item, _) in inputs.items {
        let id = item.id.clone();
        state
            .ingest(item)
            .map_err(|e| CliError::Usage(format!("ingesting `{id}`: {e}")))?;
    }
    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(CliError::io(&args.out))?;
    rt.block_on(modpipe_service::serve(
        state,
        SocketAddr::from(([0, 0, 0, 0], args.port)),
    ))
    .map_err(CliError::io(&args.out))
}

fn gen_corpus(spec_path: &Path, out: &Path, exec: Execution) -> Result<(), CliError> {
    let spec: CorpusSpec = read_json(spec_path)?;
    let corpus = generate_corpus_with(&spec, exec)?;
    corpus.write(out)?;
    let fakes = corpus.items.iter().filter(|c| c.truth.is_deepfake).count();
    println!(
        "{}",
        json!({"items": corpus.items.len(), "deepfakes": fakes, "out": out})
    );
    Ok(())
}

fn audit(
    log: &Path,
    truth: &Path,
    n: usize,
    seed: u64,
    strata: Strata,
    report: &Path,
) -> Result<(), CliError> {
    let mut mem = DecisionLog::in_memory();
    for d in read_log(log)? {
        mem.append(d)?;
    }
    let truth = parse_truth(&read_text(truth)?).map_err(|source| CliError::Json {
        path: truth.to_owned(),
        source,
    })?;
    let population = mem.latest_per_item();
    let s = sample(&population, strata, n, seed)?;
    let r = evaluate(&s, &truth)?;
    let text = serde_json::to_string_pretty(&r).expect("report serializes");
    write_bytes(report, text.as_bytes())?;
    println!(
        "{}",
        json!({"n": r.n, "fp_rate": r.fp_rate.value, "fn_rate": r.fn_rate.value, "report": report})
    );
    Ok(())
}

/// Parses `technical:trusted:risk`.
pub fn parse_weights(spec: &str) -> Result<Weights, CliError> {
    let v: Vec<f64> = spec
        .split(':')
        .map(|p| p.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| CliError::Usage(format!("bad weights `{spec}`")))?;
    match v[..] {
        [technical, trusted, risk] => Ok(Weights {
            technical,
            trusted,
            risk,
        }),
        _ => Err(CliError::Usage(format!(
            "weights need three values, got `{spec}`"
        ))),
    }
}

fn run_sweep(
    dir: &Path,
    policy: Option<&Path>,
    grid: &str,
    weights: &[String],
    out: &Path,
    exec: Execution,
) -> Result<(), CliError> {
    let corpus = Corpus::load(dir)?;
    let config = load_policy(policy)?;
    let base = config.policy.clone();
    let engine = corpus.engine(config)?;
    let mut log = DecisionLog::in_memory();
    engine.run_batch(&corpus.inputs(), corpus.spec.now, exec, &mut log)?;
    let cases = cache_cases(&log.latest_per_item(), &corpus.truth())?;
    let thetas = parse_grid(grid)?;
    let weights = weights
        .iter()
        .map(|w| parse_weights(w))
        .collect::<Result<Vec<_>, _>>()?;
    let rows = sweep(&cases, &base, &thetas, &weights, exec)?;
    write_bytes(out, sweep_csv(&rows).as_bytes())?;
    println!(
        "{}",
        json!({"rows": rows.len(), "items": cases.len(), "out": out})
    );
    Ok(())
}
