//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each
//! and exits nonzero if any fails.

use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use cagr::attention::group_forward;
use cagr::centrality::{CentralityOptions, Measure};
use cagr::config::{MemberSource, Mode, TrainingConfig};
use cagr::conv::user_forward;
use cagr::eval::{EvalReport, EvalSet};
use cagr::gradcheck::{self, GradCheckSpec};
use cagr::graph::{BipartiteGraph, Dataset, DuplicatePolicy, Edge};
use cagr::params::{self, ModelState};
use cagr::pipeline::Prepared;
use cagr::sampling::{choose_graph, classic_noise, group_aware_noise, AliasTable, GraphChoice, NoiseKind};
use cagr::synth::{generate, SynthSpec};
use cagr::train::{train, TrainOutcome};

const SEEDS: [u64; 3] = [7, 8, 9];
const TOL: f64 = 1e-6;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

fn benchmark_config(seed: u64) -> TrainingConfig {
    TrainingConfig {
        d: 32,
        heads: 4,
        negatives: 6,
        iterations: 200_000,
        seed,
        nan_check: false,
        ..TrainingConfig::default()
    }
}

fn dataset(seed: u64) -> Dataset {
    generate(&SynthSpec { seed, ..SynthSpec::default() })
        .expect("synthetic spec is valid")
        .text
        .parse()
        .expect("synthetic files parse")
}

struct Run {
    ds: Dataset,
    cfg: TrainingConfig,
    prepared: Prepared,
    outcome: TrainOutcome,
    train_time: Duration,
    report: EvalReport,
    untrained: EvalReport,
}

fn run(seed: u64, cfg: TrainingConfig) -> Run {
    let ds = dataset(seed);
    let prepared = Prepared::new(&ds, &cfg, &CentralityOptions::default()).unwrap();
    let init = ModelState::init(prepared.data(&ds).shape(&cfg), cfg.seed).unwrap();
    let untrained = prepared.evaluate_test(&ds, &cfg, &init).unwrap().report;
    let start = Instant::now();
    let outcome = train(prepared.data(&ds), &cfg).unwrap();
    let train_time = start.elapsed();
    let report = prepared.evaluate_test(&ds, &cfg, &outcome.state).unwrap().report;
    Run { ds, cfg, prepared, outcome, train_time, report, untrained }
}

fn hits(r: &EvalReport, n: usize) -> f64 {
    r.hits_at(n).expect("cutoff is reported")
}

fn gradient_correctness() -> Verdict {
    let start = Instant::now();
    let report = gradcheck::run(&GradCheckSpec::default()).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let worst = report.worst().unwrap();
    let max = report.max_relative_error();
    verdict(
        max < 1e-4 && secs < 10.0,
        format!("max relative error {max:.2e} ({} {}), {secs:.2}s", worst.loss, worst.block.name()),
    )
}

fn frequencies(table: &AliasTable, draws: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut counts = vec![0usize; table.len()];
    for _ in 0..draws {
        counts[table.sample(rng)] += 1;
    }
    counts.into_iter().map(|c| c as f64 / draws as f64).collect()
}

fn sampler_fidelity() -> Verdict {
    let start = Instant::now();
    let draws = 1_000_000;
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let edge = |left, item, weight| Edge { left, item, weight, timestamp: None };

    // Item 0 has degree 1, item 1 degree 16.
    let edges = std::iter::once(edge(0, 0, 1.0)).chain((0..16).map(|u| edge(u, 1, 1.0)));
    let g = BipartiteGraph::new(16, 2, edges, DuplicatePolicy::Unit).unwrap();
    let classic = frequencies(&classic_noise(&g).unwrap(), draws, &mut rng);
    let classic_err = (classic[0] - 1.0 / 9.0).abs().max((classic[1] - 8.0 / 9.0).abs());

    // Members a, b; a has weight 2 on item 0, nobody has item 1.
    let uv = BipartiteGraph::new(2, 2, [edge(0, 0, 2.0)], DuplicatePolicy::Sum).unwrap();
    let aware = frequencies(&group_aware_noise(&uv, &[0, 1], 1.0).unwrap(), draws, &mut rng);
    let aware_err = (aware[0] - 0.695).abs().max((aware[1] - 0.305).abs());

    let mut coin_err: f64 = 0.0;
    let mut coins = Vec::new();
    for (eta, expected) in [(0.0, 1.0), (1.0, 0.5), (3.0, 0.25)] {
        let gv = (0..draws).filter(|_| choose_graph(eta, &mut rng) == GraphChoice::GroupItem).count();
        let f = gv as f64 / draws as f64;
        coin_err = coin_err.max((f - expected).abs());
        coins.push(format!("{f:.4}"));
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(
        classic_err <= 0.005 && aware_err <= 0.005 && coin_err <= 0.01 && secs < 30.0,
        format!(
            "classic [{:.4}, {:.4}], group-aware [{:.4}, {:.4}], coin [{}], {secs:.2}s",
            classic[0],
            classic[1],
            aware[0],
            aware[1],
            coins.join(", ")
        ),
    )
}

fn is_simplex(xs: &[f64]) -> bool {
    xs.iter().all(|&x| x >= -TOL) && (xs.iter().sum::<f64>() - 1.0).abs() < TOL
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Checks every invariant on one model and dataset, in 64-bit arithmetic so
/// that reordered f32 sums do not count as violations. Returns the list of
/// violations.
fn invariant_violations(run: &Run, state: &ModelState<f32>) -> Vec<String> {
    let state = &state.cast::<f64>();
    let mut bad = Vec::new();
    let net = run.prepared.network(&run.cfg);
    let opts = run.cfg.conv_options();
    for u in 0..state.shape.users as u32 {
        let out = user_forward(state, &run.prepared.social, u, &opts);
        if !is_simplex(&out.alpha) {
            bad.push(format!("alpha of user {u}"));
        }
        for v in &out.views {
            let n = v.output.iter().map(|x| x * x).sum::<f64>().sqrt();
            if n != 0.0 && (n - 1.0).abs() > TOL {
                bad.push(format!("conv norm {n} for user {u}"));
            }
        }
    }
    let d = state.shape.d;
    for (g, members) in run.ds.groups.iter().enumerate() {
        let matrix: Vec<f64> = members.iter().flat_map(|&u| net.user_vector(state, u)).collect();
        let fwd = group_forward(state, &matrix, run.cfg.scale).unwrap();
        for h in 0..state.shape.heads {
            for i in 0..fwd.size {
                if !is_simplex(fwd.attention_row(h, i)) {
                    bad.push(format!("attention row {h}/{i} of group {g}"));
                }
            }
        }
        if !is_simplex(&fwd.lambda) {
            bad.push(format!("lambda of group {g}"));
        }
        // Reverse the members: outputs permute, the group vector stays.
        let n = members.len();
        let reversed: Vec<f64> = (0..n).rev().flat_map(|i| matrix[i * d..(i + 1) * d].to_vec()).collect();
        let rev = group_forward(state, &reversed, run.cfg.scale).unwrap();
        if max_abs_diff(&fwd.group, &rev.group) > TOL {
            bad.push(format!("group vector of {g} depends on member order"));
        }
        for i in 0..n {
            let j = n - 1 - i;
            let a = &fwd.output[i * d..(i + 1) * d];
            let b = &rev.output[j * d..(j + 1) * d];
            if max_abs_diff(a, b) > TOL || (fwd.lambda[i] - rev.lambda[j]).abs() > TOL {
                bad.push(format!("member {i} of group {g} is not equivariant"));
            }
        }
    }
    bad
}

fn structural_invariants(benchmark: &Run) -> Verdict {
    let start = Instant::now();
    let mut bad = invariant_violations(benchmark, &benchmark.outcome.state);
    let init = ModelState::init(benchmark.outcome.state.shape, 99).unwrap();
    bad.extend(invariant_violations(benchmark, &init));
    for report in [&benchmark.report, &benchmark.untrained] {
        if let Err(e) = report.check_invariants() {
            bad.push(e);
        }
    }
    let net = benchmark.prepared.network(&benchmark.cfg);
    let validation = EvalSet::validation(&benchmark.prepared.split);
    let val = cagr::eval::evaluate(&net, &benchmark.outcome.state, &benchmark.ds.groups, &validation).unwrap();
    if let Err(e) = val.report.check_invariants() {
        bad.push(e);
    }
    let secs = start.elapsed().as_secs_f64();
    let detail = match bad.first() {
        None => format!(
            "{} users, {} groups, 2 models, 3 reports, {secs:.2}s",
            benchmark.outcome.state.shape.users,
            benchmark.ds.groups.len()
        ),
        Some(first) => format!("{} violations, first: {first}", bad.len()),
    };
    verdict(bad.is_empty() && secs < 10.0, detail)
}

fn planted_recoverability(benchmark: &Run) -> Verdict {
    let h5 = hits(&benchmark.report, 5);
    let (mrr, random_mrr) = (benchmark.report.mrr, benchmark.untrained.mrr);
    let secs = benchmark.train_time.as_secs_f64();
    verdict(
        h5 >= 0.31 && mrr >= 3.0 * random_mrr && secs < 300.0,
        format!(
            "Hits@5 {h5:.3} (need 0.31), MRR {mrr:.3} vs untrained {random_mrr:.3} (x{:.2}, need 3), {} test groups, {secs:.1}s",
            mrr / random_mrr,
            benchmark.report.cases
        ),
    )
}

fn mean_hits10(variant: &str, jt: &[f64]) -> f64 {
    if variant == "jt" {
        return jt.iter().sum::<f64>() / jt.len() as f64;
    }
    let total: f64 = SEEDS
        .iter()
        .map(|&seed| {
            let mut cfg = benchmark_config(seed);
            match variant {
                "tst" => cfg.mode = Mode::TwoStage,
                "st" => cfg.mode = Mode::Simple,
                "classic" => cfg.neg_sampler = NoiseKind::Classic,
                "view1" => cfg.views = vec![Measure::PageRank],
                "noconv" => {
                    cfg.views = vec![];
                    cfg.members = MemberSource::Base;
                }
                _ => unreachable!(),
            }
            hits(&run(seed, cfg).report, 10)
        })
        .sum();
    total / SEEDS.len() as f64
}

fn ablation_ordering(benchmark: &Run) -> Verdict {
    let mut jt = vec![hits(&benchmark.report, 10)];
    jt.extend(SEEDS[1..].iter().map(|&s| hits(&run(s, benchmark_config(s)).report, 10)));
    let m = |v: &str| mean_hits10(v, &jt);
    let (jt, tst, st, classic, view1, noconv) = (m("jt"), m("tst"), m("st"), m("classic"), m("view1"), m("noconv"));
    let checks = [
        ("jt>=tst", jt >= tst),
        ("tst>=st", tst >= st),
        ("group-aware>=classic", jt >= classic),
        ("1-view>=no-conv", view1 >= noconv),
    ];
    let failed: Vec<&str> = checks.iter().filter(|c| !c.1).map(|c| c.0).collect();
    verdict(
        failed.is_empty(),
        format!(
            "Hits@10 means: jt {jt:.3} tst {tst:.3} st {st:.3} classic {classic:.3} 1-view {view1:.3} no-conv {noconv:.3}{}",
            if failed.is_empty() { String::new() } else { format!("; violated: {}", failed.join(", ")) }
        ),
    )
}

fn determinism_and_persistence(benchmark: &Run) -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let small = TrainingConfig { iterations: 20_000, ..benchmark_config(7) };
    let data = benchmark.prepared.data(&benchmark.ds);
    let a = train(data, &small).unwrap();
    let b = train(data, &small).unwrap();
    let (pa, pb) = (dir.path().join("a.bin"), dir.path().join("b.bin"));
    params::save(&a.state, &pa).unwrap();
    params::save(&b.state, &pb).unwrap();
    let identical = std::fs::read(&pa).unwrap() == std::fs::read(&pb).unwrap();

    let path = dir.path().join("model.bin");
    params::save(&benchmark.outcome.state, &path).unwrap();
    let loaded = params::load(&path).unwrap();
    let round_trip = params::to_bytes(&loaded) == params::to_bytes(&benchmark.outcome.state)
        && std::fs::read(&path).unwrap() == params::to_bytes(&loaded);
    let reloaded = benchmark.prepared.evaluate_test(&benchmark.ds, &benchmark.cfg, &loaded).unwrap();
    let in_memory = benchmark.prepared.evaluate_test(&benchmark.ds, &benchmark.cfg, &benchmark.outcome.state).unwrap();
    let same_eval = reloaded.report == in_memory.report && reloaded.ranks == in_memory.ranks;
    verdict(
        identical && round_trip && same_eval,
        format!("identical seeds -> identical files: {identical}, save/load bit-identical: {round_trip}, reloaded evaluation equal: {same_eval}"),
    )
}

fn throughput(benchmark: &Run) -> Verdict {
    let steps = (benchmark.outcome.gv_steps + benchmark.outcome.uv_steps) as f64;
    let per_min = steps / benchmark.train_time.as_secs_f64() * 60.0;
    verdict(per_min >= 50_000.0, format!("{per_min:.0} steps/min ({steps} steps, 1 worker, d=32)"))
}

fn main() {
    let mut results: Vec<(&str, Verdict)> = Vec::new();
    let mut report = |name, v: Verdict| {
        println!("[{}] {name}: {}", if v.pass { "PASS" } else { "FAIL" }, v.detail);
        results.push((name, v));
    };
    report("1 gradient correctness", gradient_correctness());
    report("2 sampler fidelity", sampler_fidelity());
    let benchmark = run(7, benchmark_config(7));
    report("3 structural invariants", structural_invariants(&benchmark));
    report("4 planted recoverability", planted_recoverability(&benchmark));
    report("5 ablation ordering", ablation_ordering(&benchmark));
    report("6 determinism and persistence", determinism_and_persistence(&benchmark));
    report("7 throughput", throughput(&benchmark));
    let failed = results.iter().filter(|(_, v)| !v.pass).count();
    println!("acceptance: {} of {} criteria pass", results.len() - failed, results.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
