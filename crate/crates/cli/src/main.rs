use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use cagr::centrality::{compute, CentralityOptions, Measure};
use cagr::config::TrainingConfig;
use cagr::eval::{evaluate, rank_items, EvalSet};
use cagr::gradcheck::{self, GradCheckSpec};
use cagr::graph::{load_dataset, load_dataset_with_ids, Dataset, IdMaps};
use cagr::params::{self, ModelState};
use cagr::pipeline::Prepared;
use cagr::synth::{generate, SynthSpec};
use cagr::train::{trace_tsv, train, Network};

mod manifest;

use manifest::{config_json, Manifest};

const MODEL_FILE: &str = "model.bin";
const CONFIG_FILE: &str = "config.txt";
const SEED_ENV: &str = "CAGR_SEED";
const GRAD_TOLERANCE: f64 = 1e-4;

/// Group recommendation for occasional groups.
#[derive(Parser)]
#[command(name = "cagr", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset with planted clusters.
    GenSynth(GenSynthArgs),
    /// Score every user under each centrality measure.
    Centrality(CentralityArgs),
    /// Train a model.
    Train(TrainArgs),
    /// Evaluate a trained model on the held-out split.
    Evaluate(EvaluateArgs),
    /// Top-n items for an ad hoc group.
    Recommend(RecommendArgs),
    /// Compare analytic gradients with central differences.
    GradCheck(GradCheckArgs),
}

#[derive(Args)]
struct GenSynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    clusters: Option<usize>,
    #[arg(long)]
    users_per_cluster: Option<usize>,
    #[arg(long)]
    items_per_cluster: Option<usize>,
    #[arg(long)]
    p_in: Option<f64>,
    #[arg(long)]
    p_out: Option<f64>,
    #[arg(long)]
    groups: Option<usize>,
    #[arg(long)]
    group_size_min: Option<usize>,
    #[arg(long)]
    group_size_max: Option<usize>,
    #[arg(long)]
    interactions_per_group: Option<usize>,
    #[arg(long)]
    social_p_in: Option<f64>,
    #[arg(long)]
    social_p_out: Option<f64>,
    #[arg(long)]
    topics_per_cluster: Option<usize>,
    #[arg(long)]
    member_bias: Option<f64>,
}

#[derive(Args)]
struct CentralityArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Comma-separated subset of pagerank, eigenvector, closeness, betweenness.
    #[arg(long, value_delimiter = ',')]
    measures: Option<Vec<String>>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    St,
    Tst,
    Jt,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// `key = value` file over the defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, short = 'n')]
    iterations: Option<usize>,
    #[arg(long)]
    d: Option<usize>,
    #[arg(long)]
    h: Option<usize>,
    #[arg(long, short = 'm')]
    negatives: Option<usize>,
    #[arg(long)]
    workers: Option<usize>,
    /// Any config key, as `key=value`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Args)]
struct ModelArgs {
    #[arg(long)]
    data: PathBuf,
    /// Directory written by `train`.
    #[arg(long)]
    model: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Test,
    Validation,
}

#[derive(Args)]
struct EvaluateArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "test")]
    split: SplitArg,
    /// Also write the rank of every case to ranks.tsv.
    #[arg(long)]
    ranks: bool,
}

#[derive(Args)]
struct RecommendArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Comma-separated user ids as they appear in the data files.
    #[arg(long, value_delimiter = ',', required = true)]
    members: Vec<String>,
    #[arg(long, default_value_t = 10)]
    topn: usize,
    /// Also write recommendations.tsv and a manifest here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GradCheckArgs {
    #[arg(long, default_value_t = 6)]
    d: usize,
    #[arg(long, default_value_t = 2)]
    h: usize,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Bad flag values that clap cannot see. Exit code 2.
#[derive(Debug)]
struct Usage(String);

/// Numerical failure detected by the command itself. Exit code 4.
#[derive(Debug)]
struct NumericFailure(String);

macro_rules! message_error {
    ($t:ty) => {
        impl std::fmt::Display for $t {
            fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl std::error::Error for $t {}
    };
}

message_error!(Usage);
message_error!(NumericFailure);

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<Usage>() {
            return 2;
        }
        if cause.is::<NumericFailure>() {
            return 4;
        }
        if let Some(e) = cause.downcast_ref::<cagr::Error>() {
            return match e {
                e if e.is_numeric() => 4,
                cagr::Error::Config(_) | cagr::Error::HeadMismatch { .. } | cagr::Error::InvalidGamma(_) => 2,
                _ => 3,
            };
        }
    }
    3
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn write(dir: &Path, name: &str, contents: impl AsRef<[u8]>) -> Result<()> {
    let path = dir.join(name);
    fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))
}

fn env_seed() -> Result<Option<u64>> {
    match std::env::var(SEED_ENV) {
        Ok(v) => {
            v.trim().parse().map(Some).map_err(|_| Usage(format!("{SEED_ENV}={v} is not an unsigned integer")).into())
        }
        Err(_) => Ok(None),
    }
}

fn gen_synth(a: GenSynthArgs) -> Result<()> {
    let d = SynthSpec::default();
    let spec = SynthSpec {
        seed: a.seed.or(env_seed()?).unwrap_or(d.seed),
        clusters: a.clusters.unwrap_or(d.clusters),
        users_per_cluster: a.users_per_cluster.unwrap_or(d.users_per_cluster),
        items_per_cluster: a.items_per_cluster.unwrap_or(d.items_per_cluster),
        p_in: a.p_in.unwrap_or(d.p_in),
        p_out: a.p_out.unwrap_or(d.p_out),
        groups: a.groups.unwrap_or(d.groups),
        group_size_min: a.group_size_min.unwrap_or(d.group_size_min),
        group_size_max: a.group_size_max.unwrap_or(d.group_size_max),
        interactions_per_group: a.interactions_per_group.unwrap_or(d.interactions_per_group),
        social_p_in: a.social_p_in.unwrap_or(d.social_p_in),
        social_p_out: a.social_p_out.unwrap_or(d.social_p_out),
        topics_per_cluster: a.topics_per_cluster.unwrap_or(d.topics_per_cluster),
        member_bias: a.member_bias.unwrap_or(d.member_bias),
        ..d
    };
    let synthetic = generate(&spec)?;
    create_dir(&a.out)?;
    synthetic.text.write(&a.out)?;
    println!(
        "wrote {} users, {} items, {} groups ({} occasional) to {}",
        spec.user_count(),
        spec.item_count(),
        spec.groups,
        spec.groups - synthetic.history_groups,
        a.out.display()
    );
    Manifest::new("gen-synth")
        .seed(spec.seed)
        .config(synth_json(&spec))
        .outputs(["user_item.tsv", "group_item.tsv", "groups.tsv", "social.tsv"])
        .write(&a.out)
}

fn synth_json(s: &SynthSpec) -> serde_json::Value {
    json!({
        "clusters": s.clusters,
        "users_per_cluster": s.users_per_cluster,
        "items_per_cluster": s.items_per_cluster,
        "p_in": s.p_in,
        "p_out": s.p_out,
        "popularity_skew": s.popularity_skew,
        "activity_skew": s.activity_skew,
        "topics_per_cluster": s.topics_per_cluster,
        "topic_focus": s.topic_focus,
        "social_focus": s.social_focus,
        "groups": s.groups,
        "group_size_min": s.group_size_min,
        "group_size_max": s.group_size_max,
        "interactions_per_group": s.interactions_per_group,
        "member_bias": s.member_bias,
        "leader_share": s.leader_share,
        "social_p_in": s.social_p_in,
        "social_p_out": s.social_p_out,
        "seed": s.seed,
    })
}

fn centrality(a: CentralityArgs) -> Result<()> {
    let measures: Vec<Measure> = match &a.measures {
        Some(names) => {
            names.iter().map(|n| n.parse().map_err(|e: cagr::Error| Usage(e.to_string()))).collect::<Result<_, _>>()?
        }
        None => Measure::ALL.to_vec(),
    };
    let ds = load_dataset(&a.data)?;
    let opts = CentralityOptions::default();
    let mut out = String::from("# user\tmeasure\tscore\n");
    for &m in &measures {
        let scores = compute(&ds.social, m, &opts)?;
        for (u, s) in scores.scores.iter().enumerate() {
            let _ = writeln!(out, "{}\t{m}\t{s}", ds.ids.users.name(u as u32));
        }
    }
    create_dir(&a.out)?;
    write(&a.out, "centrality.tsv", out)?;
    let names: Vec<&str> = measures.iter().map(|m| m.name()).collect();
    Manifest::new("centrality")
        .seed(opts.seed)
        .config(json!({
            "measures": names,
            "damping": opts.damping,
            "tol": opts.tol,
            "max_iter": opts.max_iter,
            "betweenness_exact_limit": opts.betweenness_exact_limit,
            "betweenness_samples": opts.betweenness_samples,
        }))
        .inputs([&a.data])
        .outputs(["centrality.tsv"])
        .write(&a.out)
}

/// Defaults, then the config file, then `CAGR_SEED`, then `--set`, then
/// dedicated flags.
fn resolve_config(a: &TrainArgs) -> Result<TrainingConfig> {
    let mut cfg = TrainingConfig::default();
    if let Some(path) = &a.config {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        cfg.apply_text(&text).with_context(|| format!("in {}", path.display()))?;
    }
    if let Some(seed) = env_seed()? {
        cfg.seed = seed;
    }
    for kv in &a.set {
        let (k, v) = kv.split_once('=').ok_or_else(|| Usage(format!("--set {kv}: expected KEY=VALUE")))?;
        cfg.set(k, v)?;
    }
    let mode = a.mode.map(|m| match m {
        ModeArg::St => "st",
        ModeArg::Tst => "tst",
        ModeArg::Jt => "jt",
    });
    let flags = [
        ("mode", mode.map(String::from)),
        ("eta", a.eta.map(|x| x.to_string())),
        ("seed", a.seed.map(|x| x.to_string())),
        ("iterations", a.iterations.map(|x| x.to_string())),
        ("d", a.d.map(|x| x.to_string())),
        ("heads", a.h.map(|x| x.to_string())),
        ("negatives", a.negatives.map(|x| x.to_string())),
        ("workers", a.workers.map(|x| x.to_string())),
    ];
    for (k, v) in flags {
        if let Some(v) = v {
            cfg.set(k, &v)?;
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn train_cmd(a: TrainArgs) -> Result<()> {
    let cfg = resolve_config(&a)?;
    let ds = load_dataset(&a.data)?;
    let prepared = Prepared::new(&ds, &cfg, &CentralityOptions::default())?;
    let outcome = train(prepared.data(&ds), &cfg)?;
    create_dir(&a.out)?;
    params::save(&outcome.state, &a.out.join(MODEL_FILE))?;
    let config_text = cfg.to_text();
    write(&a.out, CONFIG_FILE, &config_text)?;
    write(&a.out, "loss_trace.tsv", trace_tsv(&outcome.trace))?;
    ds.ids.save(&a.out)?;
    let last = outcome.trace.last().map(|p| p.loss);
    println!(
        "trained {} group-item and {} user-item steps; final loss {}",
        outcome.gv_steps,
        outcome.uv_steps,
        last.map_or("n/a".into(), |l| format!("{l:.4}"))
    );
    let mut inputs = vec![a.data.clone()];
    inputs.extend(a.config.clone());
    Manifest::new("train")
        .seed(cfg.seed)
        .config(config_json(&config_text))
        .inputs(inputs)
        .outputs([MODEL_FILE, CONFIG_FILE, "loss_trace.tsv", "users.map", "items.map", "groups.map"])
        .write(&a.out)
}

struct Loaded {
    cfg: TrainingConfig,
    ds: Dataset,
    state: ModelState<f32>,
    config_text: String,
}

fn load_model(a: &ModelArgs) -> Result<Loaded> {
    let config_path = a.model.join(CONFIG_FILE);
    let config_text = fs::read_to_string(&config_path).with_context(|| format!("reading {}", config_path.display()))?;
    let cfg = TrainingConfig::parse(&config_text)?;
    let ids = IdMaps::load(&a.model)?;
    let ds = load_dataset_with_ids(&a.data, ids)?;
    let state = params::load(&a.model.join(MODEL_FILE))?;
    let s = state.shape;
    if (s.d, s.heads, s.views) != (cfg.d, cfg.heads, cfg.views.len()) {
        return Err(cagr::Error::Shape(format!(
            "model has d={} h={} views={}, config says d={} h={} views={}",
            s.d,
            s.heads,
            s.views,
            cfg.d,
            cfg.heads,
            cfg.views.len()
        ))
        .into());
    }
    if ds.ids.users.len() != s.users || ds.ids.items.len() != s.items {
        return Err(cagr::Error::Shape(format!(
            "data has {} users and {} items, model has {} and {}",
            ds.ids.users.len(),
            ds.ids.items.len(),
            s.users,
            s.items
        ))
        .into());
    }
    Ok(Loaded { cfg, ds, state, config_text })
}

fn evaluate_cmd(a: EvaluateArgs) -> Result<()> {
    let m = load_model(&a.model)?;
    let prepared = Prepared::new(&m.ds, &m.cfg, &CentralityOptions::default())?;
    let set = match a.split {
        SplitArg::Test => EvalSet::test(&prepared.split),
        SplitArg::Validation => EvalSet::validation(&prepared.split),
    };
    let evaluation = evaluate(&prepared.network(&m.cfg), &m.state, &m.ds.groups, &set)?;
    if let Err(e) = evaluation.report.check_invariants() {
        return Err(NumericFailure(format!("report violates metric invariants: {e}")).into());
    }
    create_dir(&a.out)?;
    let json = serde_json::to_string_pretty(&evaluation.report.to_json())?;
    write(&a.out, "report.json", json.clone() + "\n")?;
    println!("{json}");
    let mut outputs = vec!["report.json"];
    if a.ranks {
        let mut tsv = String::from("# group\titem\trank\n");
        for (case, rank) in set.cases.iter().zip(&evaluation.ranks) {
            let _ = writeln!(tsv, "{}\t{}\t{rank}", m.ds.ids.groups.name(case.group), m.ds.ids.items.name(case.item));
        }
        write(&a.out, "ranks.tsv", tsv)?;
        outputs.push("ranks.tsv");
    }
    Manifest::new("evaluate")
        .seed(m.cfg.seed)
        .config(json!({
            "model": config_json(&m.config_text),
            "split": match a.split { SplitArg::Test => "test", SplitArg::Validation => "validation" },
        }))
        .inputs([&a.model.data, &a.model.model])
        .outputs(outputs)
        .write(&a.out)
}

fn recommend_cmd(a: RecommendArgs) -> Result<()> {
    let m = load_model(&a.model)?;
    let members: Vec<u32> = a
        .members
        .iter()
        .map(|name| {
            m.ds.ids.users.get(name).ok_or_else(|| {
                anyhow::Error::from(cagr::Error::Parse {
                    file: "--members".into(),
                    line: 0,
                    msg: format!("unknown user {name}"),
                })
            })
        })
        .collect::<Result<_>>()?;
    let social = cagr::centrality::with_views(&m.ds.social, &m.cfg.views, &CentralityOptions::default())?;
    let net = Network::new(&social, &m.cfg);
    net.check(&m.state)?;
    let group = net.group_vector(&m.state, &members)?;
    let mut out = String::new();
    for (item, score) in rank_items(&m.state, &group, &[]).into_iter().take(a.topn) {
        let _ = writeln!(out, "{}\t{score}", m.ds.ids.items.name(item));
    }
    print!("{out}");
    if let Some(dir) = &a.out {
        create_dir(dir)?;
        write(dir, "recommendations.tsv", &out)?;
        Manifest::new("recommend")
            .seed(m.cfg.seed)
            .config(json!({ "members": a.members, "topn": a.topn, "model": config_json(&m.config_text) }))
            .inputs([&a.model.data, &a.model.model])
            .outputs(["recommendations.tsv"])
            .write(dir)?;
    }
    Ok(())
}

fn grad_check_cmd(a: GradCheckArgs) -> Result<()> {
    let d = GradCheckSpec::default();
    let spec = GradCheckSpec { d: a.d, heads: a.h, seed: a.seed.or(env_seed()?).unwrap_or(d.seed), ..d };
    let report = gradcheck::run(&spec)?;
    let mut out = String::from("# loss\tblock\trelative_error\tanalytic_norm\n");
    for b in &report.blocks {
        let _ = writeln!(out, "{}\t{}\t{:e}\t{:e}", b.loss, b.block.name(), b.relative_error, b.analytic_norm);
    }
    let max = report.max_relative_error();
    if let Some(dir) = &a.out {
        create_dir(dir)?;
        write(dir, "grad_check.tsv", &out)?;
        Manifest::new("grad-check")
            .seed(spec.seed)
            .config(json!({ "d": spec.d, "heads": spec.heads, "epsilon": spec.epsilon, "init_scale": spec.init_scale }))
            .outputs(["grad_check.tsv"])
            .write(dir)?;
    }
    print!("{out}");
    println!("max relative error {max:e}");
    if max.is_nan() || max >= GRAD_TOLERANCE {
        bail!(NumericFailure(format!("max relative error {max:e} is not below {GRAD_TOLERANCE:e}")));
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => e.exit(),
    };
    let result = match cli.command {
        Command::GenSynth(a) => gen_synth(a),
        Command::Centrality(a) => centrality(a),
        Command::Train(a) => train_cmd(a),
        Command::Evaluate(a) => evaluate_cmd(a),
        Command::Recommend(a) => recommend_cmd(a),
        Command::GradCheck(a) => grad_check_cmd(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
