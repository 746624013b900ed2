//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.
//!
//! Run with `cargo test -p agentimpute --test acceptance`.

mod common;

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use agentimpute::agent::{AgentId, Context, Message, Outgoing, Performative, Platform, Scheduler, PLATFORM};
use agentimpute::amputation::{ampute, run_trials, MaskSpec, Mechanism};
use agentimpute::imputation::{
    aggregate_donor_weighted, em_gaussian, impute, impute_classification, impute_knn, impute_pmm, Distance,
    Fallback, ImputationResult, Strategy, StrategyConfig, FRACTION_TOLERANCE,
};
use agentimpute::pipeline::{run_on_table, run_pipeline, Executor, PipelineError, PipelinePlan};
use agentimpute::tabular::{Column, Table, Value};
use common::*;
use rand::Rng;

type Check = Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn criterion(name: &str, budget: Option<Duration>, f: impl FnOnce() -> Check) -> bool {
    let start = Instant::now();
    let outcome = catch_unwind(AssertUnwindSafe(f));
    let elapsed = start.elapsed();
    let verdict = match outcome {
        Ok(Ok(detail)) => match budget {
            Some(b) if elapsed > b => Err(format!("{detail}; took {elapsed:.2?}, budget {b:.0?}")),
            _ => Ok(detail),
        },
        Ok(Err(detail)) => Err(detail),
        Err(panic) => Err(format!(
            "panicked: {}",
            panic
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default()
        )),
    };
    let (tag, detail, ok) = match verdict {
        Ok(d) => ("PASS", d, true),
        Err(d) => ("FAIL", d, false),
    };
    println!("{tag} {name} [{:.2}s] {detail}", elapsed.as_secs_f64());
    ok
}

fn main() {
    let results = [
        criterion("donor-weighted aggregation fidelity", Some(Duration::from_secs(10)), aggregation_fidelity),
        criterion("donor closed world", None, donor_closed_world),
        criterion("pmm and knn match exhaustive search", Some(Duration::from_secs(30)), oracle_equivalence),
        criterion("closed-form fixture", None, closed_form),
        criterion("em log-likelihood is monotone", None, em_monotone),
        criterion("em on complete data is the mle", None, em_complete_mle),
        criterion("em mean within 3 standard errors", None, em_mean_recovery),
        criterion("pmm and regression beat mean on linear data", Some(Duration::from_secs(60)), directional),
        criterion("fifo and exactly-once delivery", None, fifo_exactly_once),
        criterion("random pipeline plans terminate", None, pipelines_terminate),
        criterion("pipeline runs are byte-identical", None, byte_identical),
        criterion("mcar masking rate", None, mcar_rate),
        criterion("mar masking follows the driver", None, mar_direction),
    ];
    let failed = results.iter().filter(|&&ok| !ok).count();
    println!("{} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}

const SEEDS: u64 = 120;

fn check_result(input: &Table, r: &ImputationResult, column: &str, counts: &mut (usize, usize)) -> Result<(), String> {
    let ledger = r.ledger(column).ok_or("no ledger")?;
    for j in ledger.recipients() {
        let sum = ledger.fraction_sum(j);
        ensure((sum - 1.0).abs() <= 1e-9, || format!("{column} row {j}: fractions sum to {sum}"))?;
    }
    if input.column(column).unwrap().numeric_cells().is_none() {
        return Ok(());
    }
    let recomputed = aggregate_donor_weighted(ledger, input.column(column).unwrap()).map_err(|e| e.to_string())?;
    for cell in r.log.iter().filter(|c| !c.donors.is_empty()) {
        let v = cell.value.as_f64().unwrap();
        let agg = recomputed[&cell.row];
        if cell.donors.len() == 1 {
            ensure(agg == v, || format!("{column} row {}: single donor {agg} != {v}", cell.row))?;
            counts.0 += 1;
        } else {
            ensure((agg - v).abs() <= 1e-12, || format!("{column} row {}: {agg} vs {v}", cell.row))?;
            counts.1 += 1;
        }
    }
    Ok(())
}

fn aggregation_fidelity() -> Check {
    let mut counts = (0, 0);
    for seed in 0..SEEDS {
        let n = 20 + (seed as usize * 37) % 481;
        let t = mixed_table(seed, n);
        let hd = StrategyConfig::new(Strategy::HotDeckRandom).with_seed(seed);
        check_result(&t, &impute(&t, "y", &hd, None).unwrap(), "y", &mut counts)?;
        check_result(&t, &impute(&t, "label", &hd, None).unwrap(), "label", &mut counts)?;
        let pmm = impute_pmm(&t, "y", &["x1", "x2"], Fallback::MeanMode).unwrap();
        check_result(&t, &pmm, "y", &mut counts)?;
        for k in [2, 3, 5] {
            let knn = impute_knn(&t, "y", &["x1", "x2", "c"], k, Distance::Euclidean, Fallback::MeanMode).unwrap();
            check_result(&t, &knn, "y", &mut counts)?;
        }
    }
    Ok(format!(
        "{SEEDS} tables, {} single-donor cells exact, {} multi-donor cells within 1e-12 (fraction tolerance {FRACTION_TOLERANCE})",
        counts.0, counts.1
    ))
}

fn donor_closed_world() -> Check {
    let mut cells = 0;
    for seed in 0..SEEDS {
        let t = mixed_table(seed, 20 + (seed as usize * 37) % 481);
        let hd = StrategyConfig::new(Strategy::HotDeckRandom).with_seed(seed);
        let runs = [
            ("y", impute(&t, "y", &hd, None).unwrap()),
            ("label", impute(&t, "label", &hd, None).unwrap()),
            ("y", impute_pmm(&t, "y", &["x1", "x2"], Fallback::MeanMode).unwrap()),
            (
                "label",
                impute_knn(&t, "label", &["x1", "c"], 3, Distance::Euclidean, Fallback::MeanMode).unwrap(),
            ),
            (
                "label",
                impute_classification(&t, "label", &["x1", "x2"], 5, Distance::Manhattan, Fallback::MeanMode)
                    .unwrap(),
            ),
        ];
        for (column, r) in &runs {
            let outside = outside_pool(&t, r, column);
            ensure(outside.is_empty(), || format!("seed {seed} {column}: {outside:?}"))?;
            ensure(observed_preserved(&t, &r.table), || format!("seed {seed}: observed cell changed"))?;
            cells += r.log.iter().filter(|c| !c.donors.is_empty()).count();
        }
    }
    Ok(format!("{cells} donor-based cells over {SEEDS} tables, none outside the observed pool"))
}

fn oracle_equivalence() -> Check {
    let mut compared = 0;
    for seed in 0..SEEDS {
        let t = mixed_table(1000 + seed, 10 + seed as usize % 191);
        for preds in [&["x1"][..], &["x1", "x2"], &["x2"]] {
            let r = impute_pmm(&t, "y", preds, Fallback::MeanMode).unwrap();
            let got: BTreeMap<usize, usize> = recorded_donors(&r, "y").into_iter().map(|(j, d)| (j, d[0])).collect();
            ensure(got == pmm_oracle(&t, "y", preds), || format!("pmm seed {seed} {preds:?}"))?;
            compared += got.len();
        }
        for k in [1, 3, 5] {
            for preds in [&["x1", "x2"][..], &["x2", "c"], &["x1", "c", "x2"]] {
                let r = impute_knn(&t, "y", preds, k, Distance::Euclidean, Fallback::MeanMode).unwrap();
                let got = recorded_donors(&r, "y");
                ensure(got == knn_oracle(&t, "y", preds, k), || format!("knn seed {seed} k {k} {preds:?}"))?;
                compared += got.len();
                let r = impute_classification(&t, "label", preds, k, Distance::Euclidean, Fallback::MeanMode)
                    .unwrap();
                let got = recorded_donors(&r, "label");
                ensure(got == knn_oracle(&t, "label", preds, k), || {
                    format!("classification seed {seed} k {k} {preds:?}")
                })?;
                compared += got.len();
            }
        }
    }
    Ok(format!("{compared} donor sets identical over {SEEDS} tables"))
}

fn closed_form() -> Check {
    let t = Table::new(vec![
        Column::numeric("x", vec![Some(1.0), Some(2.0), Some(3.0), Some(4.0)]),
        Column::numeric("y", vec![Some(2.0), Some(4.0), Some(6.0), None]),
    ])
    .unwrap();
    let reg = impute(&t, "y", &StrategyConfig::new(Strategy::Regression).with_predictors(&["x"]), None)
        .map_err(|e| e.to_string())?;
    let r = reg.log[0].value.as_f64().unwrap();
    ensure((r - 8.0).abs() <= 1e-9, || format!("regression gave {r}"))?;
    let pmm = impute(&t, "y", &StrategyConfig::new(Strategy::Pmm).with_predictors(&["x"]), None)
        .map_err(|e| e.to_string())?;
    ensure(pmm.log[0].value == Value::Num(6.0), || format!("pmm gave {:?}", pmm.log[0].value))?;
    Ok(format!("regression {r}, pmm {}", pmm.log[0].value.as_f64().unwrap()))
}

fn em_monotone() -> Check {
    let mut r = rng(77);
    let mut iterations = 0;
    for i in 0..50 {
        let d = 1 + i % 4;
        let n = r.random_range(50..=1000);
        let rate = r.random_range(0.0..=0.3);
        let l = random_factor(&mut r, d);
        let mu: Vec<f64> = (0..d).map(|_| r.random_range(-5.0..5.0)).collect();
        let rows = gaussian_rows(&mut r, n, &mu, &l);
        let t = masked_gaussian_table(&mut r, &rows, rate);
        let names: Vec<String> = (0..d).map(|k| format!("v{k}")).collect();
        let p = em_gaussian(&t, &names, 1e-10, 1000).map_err(|e| format!("dataset {i}: {e}"))?;
        for (s, w) in p.log_likelihood_trace.windows(2).enumerate() {
            ensure(w[1] >= w[0] - 1e-9, || format!("dataset {i} (d {d}, n {n}) step {s}: {} -> {}", w[0], w[1]))?;
        }
        iterations += p.iterations;
    }
    Ok(format!("50 datasets, {iterations} iterations, no decrease beyond 1e-9"))
}

fn em_complete_mle() -> Check {
    let mut r = rng(11);
    let mut worst: f64 = 0.0;
    for d in 1..=4 {
        for _ in 0..5 {
            let l = random_factor(&mut r, d);
            let mu: Vec<f64> = (0..d).map(|k| k as f64 * 2.0 - 3.0).collect();
            let n = r.random_range(20..=1000);
            let rows = gaussian_rows(&mut r, n, &mu, &l);
            let t = masked_gaussian_table(&mut r, &rows, 0.0);
            let names: Vec<String> = (0..d).map(|k| format!("v{k}")).collect();
            let p = em_gaussian(&t, &names, 1e-9, 100).map_err(|e| e.to_string())?;
            let (m, s) = gaussian_mle(&rows);
            for a in 0..d {
                worst = worst.max((p.mu[a] - m[a]).abs());
                for b in 0..d {
                    worst = worst.max((p.sigma[a][b] - s[a][b]).abs());
                }
            }
        }
    }
    ensure(worst <= 1e-10, || format!("max deviation {worst:e}"))?;
    Ok(format!("20 datasets, max deviation {worst:e}"))
}

fn em_mean_recovery() -> Check {
    let mut r = rng(5);
    let d = 3;
    let l = random_factor(&mut r, d);
    let mu = vec![1.0, -2.0, 0.5];
    let rows = gaussian_rows(&mut r, 10_000, &mu, &l);
    let t = masked_gaussian_table(&mut r, &rows, 0.2);
    let names: Vec<String> = (0..d).map(|k| format!("v{k}")).collect();
    let p = em_gaussian(&t, &names, 1e-10, 1000).map_err(|e| e.to_string())?;
    let mut detail = Vec::new();
    for k in 0..d {
        let n_obs = t.numeric(&names[k]).unwrap().iter().flatten().count() as f64;
        let se = (p.sigma[k][k] / n_obs).sqrt();
        let z = (p.mu[k] - mu[k]) / se;
        ensure(z.abs() <= 3.0, || format!("v{k}: estimate {} vs {} is {z:.2} SE", p.mu[k], mu[k]))?;
        detail.push(format!("v{k} {z:+.2} SE"));
    }
    Ok(detail.join(", "))
}

fn directional() -> Check {
    let t = linear_table(2024, 500, 0.1);
    let spec = MaskSpec::mcar("y", 0.2, 0);
    let strategies = [
        StrategyConfig::new(Strategy::Mean),
        StrategyConfig::new(Strategy::Regression).with_predictors(&["x"]),
        StrategyConfig::new(Strategy::Pmm).with_predictors(&["x"]),
    ];
    let reports = run_trials(&t, &[spec], &strategies, 30).map_err(|e| e.to_string())?;
    let rmse = |i: usize| reports[i].rmse_mean.unwrap();
    let (mean, reg, pmm) = (rmse(0), rmse(1), rmse(2));
    ensure(pmm < mean && reg < mean, || format!("rmse mean {mean}, regression {reg}, pmm {pmm}"))?;
    let wins = reports[2]
        .per_trial
        .iter()
        .zip(&reports[0].per_trial)
        .filter(|(p, m)| p.rmse.unwrap() < m.rmse.unwrap())
        .count();
    ensure(wins * 10 >= 30 * 8, || format!("pmm beat mean in {wins}/30 trials"))?;
    Ok(format!("rmse mean {mean:.4}, regression {reg:.4}, pmm {pmm:.4}; pmm won {wins}/30 trials"))
}

#[derive(Debug, Clone)]
enum Event {
    Data { sender: String, seq: u64, n: usize },
    Bounce { reason: Option<String> },
}

/// Each agent sends its script in three bursts, one per kick. Returns the
/// number of messages addressed to live and to unknown receivers.
fn delivery_scenario(seed: u64, threaded: Option<usize>) -> Result<(usize, usize), String> {
    let mut r = rng(seed);
    let m = r.random_range(2..=6);
    let names: Vec<String> = (0..m).map(|i| format!("a{i}")).collect();
    let scripts: Vec<Vec<String>> = (0..m)
        .map(|_| {
            (0..r.random_range(0..30))
                .map(|_| {
                    if r.random_range(0..10) == 0 {
                        "ghost".to_string()
                    } else {
                        names[r.random_range(0..m)].clone()
                    }
                })
                .collect()
        })
        .collect();
    let log: Arc<Mutex<BTreeMap<String, Vec<Event>>>> = Arc::default();
    let platform = Platform::new(seed);
    for (i, name) in names.iter().enumerate() {
        let script = scripts[i].clone();
        let log = log.clone();
        let mut cursor = 0;
        let mut kicks = 0;
        platform
            .spawn(name.clone(), move |msg: Message, ctx: &mut Context| {
                let me = ctx.me().as_str().to_string();
                match msg.performative {
                    Performative::Request => {
                        kicks += 1;
                        let end = if kicks == 3 { script.len() } else { (script.len() * kicks / 3).max(cursor) };
                        for to in &script[cursor..end] {
                            ctx.send(Outgoing::new(Performative::Inform, to.as_str(), "c", &cursor));
                            cursor += 1;
                        }
                    }
                    Performative::Inform => log.lock().unwrap().entry(me).or_default().push(Event::Data {
                        sender: msg.sender.as_str().to_string(),
                        seq: msg.seq,
                        n: msg.payload().unwrap(),
                    }),
                    Performative::Failure => {
                        log.lock().unwrap().entry(me).or_default().push(Event::Bounce { reason: msg.reason() })
                    }
                    _ => {}
                }
            })
            .map_err(|e| e.to_string())?;
    }
    let kicker = AgentId::from("kicker");
    for _ in 0..3 {
        for name in &names {
            platform.send(&kicker, Outgoing::new(Performative::Request, name.as_str(), "k", &()));
        }
    }
    let limit = 10_000;
    match threaded {
        Some(w) => platform.run_threaded(w, limit),
        None => platform.run(Scheduler::Random { seed }, limit),
    }
    .map_err(|e| e.to_string())?;

    let log = log.lock().unwrap();
    let mut live = 0;
    let mut ghosts = 0;
    for (i, sender) in names.iter().enumerate() {
        for receiver in &names {
            let expected: Vec<usize> = (0..scripts[i].len()).filter(|&n| &scripts[i][n] == receiver).collect();
            let got: Vec<(u64, usize)> = log
                .get(receiver)
                .map(|events| {
                    events
                        .iter()
                        .filter_map(|e| match e {
                            Event::Data { sender: s, seq, n } if s == sender => Some((*seq, *n)),
                            _ => None,
                        })
                        .collect()
                })
                .unwrap_or_default();
            let seqs: Vec<u64> = got.iter().map(|g| g.0).collect();
            let ns: Vec<usize> = got.iter().map(|g| g.1).collect();
            ensure(ns == expected, || format!("seed {seed} {sender}->{receiver}: got {ns:?}, sent {expected:?}"))?;
            ensure(seqs == (0..expected.len() as u64).collect::<Vec<_>>(), || {
                format!("seed {seed} {sender}->{receiver}: seqs {seqs:?}")
            })?;
            live += expected.len();
        }
        let sent_to_ghost = scripts[i].iter().filter(|to| *to == "ghost").count();
        let bounces: Vec<&Event> = log
            .get(sender)
            .map(|e| e.iter().filter(|e| matches!(e, Event::Bounce { .. })).collect())
            .unwrap_or_default();
        ensure(bounces.len() == sent_to_ghost, || {
            format!("seed {seed} {sender}: {} bounces for {sent_to_ghost} unknown sends", bounces.len())
        })?;
        ensure(
            bounces
                .iter()
                .all(|b| matches!(b, Event::Bounce { reason: Some(r) } if r == "unknown-receiver")),
            || format!("seed {seed} {sender}: wrong bounce reason"),
        )?;
        ghosts += sent_to_ghost;
    }
    ensure(platform.pending() == 0, || format!("seed {seed}: mail left"))?;
    let stray = platform.dead_letters().iter().filter(|m| m.sender.as_str() != PLATFORM).count();
    ensure(stray == 0, || format!("seed {seed}: {stray} dead letters"))?;
    Ok((live, ghosts))
}

fn fifo_exactly_once() -> Check {
    let (mut live, mut ghosts) = (0, 0);
    for seed in 0..200 {
        let threaded = (seed % 4 == 3).then_some(1 + seed as usize % 4);
        let (l, g) = delivery_scenario(seed, threaded)?;
        live += l;
        ghosts += g;
    }
    Ok(format!("200 scenarios, {live} messages delivered once in order, {ghosts} unknown-receiver bounces"))
}

fn random_plan(r: &mut rand_chacha::ChaCha8Rng) -> PipelinePlan {
    let mut plan = PipelinePlan::new("unused.csv");
    let pick = |r: &mut rand_chacha::ChaCha8Rng, pool: &[Strategy]| -> Vec<Strategy> {
        let mut out: Vec<Strategy> = pool.iter().copied().filter(|_| r.random_bool(0.5)).collect();
        if out.is_empty() {
            out.push(pool[r.random_range(0..pool.len())]);
        }
        out
    };
    use Strategy::*;
    plan.candidates.numeric = pick(r, &[Mean, Regression, HotDeckRandom, ColdDeck, Knn, Pmm, EmGaussian]);
    plan.candidates.nominal = pick(r, &[Mode, HotDeckRandom, ColdDeck, Knn, ClassificationKnn]);
    if r.random_bool(0.3) {
        plan.priority = pick(r, &Strategy::ALL);
    }
    if r.random_bool(0.3) {
        let names = ["x1", "x2", "c", "y", "label"];
        plan.targets = Some(names.iter().filter(|_| r.random_bool(0.5)).map(|s| s.to_string()).collect());
    }
    plan.tournament.n_trials = r.random_range(1..=3);
    plan.tournament.base_seed = r.random();
    plan.tournament.rate = r.random_bool(0.5).then(|| r.random_range(0.1..0.5));
    if r.random_bool(0.25) {
        plan.tournament.mechanism = Mechanism::Mar;
        plan.tournament.driver = Some(if r.random_bool(0.5) { "x1" } else { "x2" }.to_string());
    }
    plan.strategy.k = r.random_range(1..=6);
    plan.strategy.donor_pool_min = r.random_range(1..=3);
    plan.strategy.seed = r.random();
    plan.executor = match r.random_range(0..3) {
        0 => Executor::RoundRobin,
        1 => Executor::Random { seed: r.random() },
        _ => Executor::Threaded {
            workers: r.random_range(1..=4),
        },
    };
    plan
}

fn pipelines_terminate() -> Check {
    let mut r = rng(99);
    let (mut ok, mut requests, mut untreated) = (0, 0, 0);
    for i in 0..1000 {
        let plan = random_plan(&mut r);
        let n = r.random_range(6..40);
        let t = mixed_table(r.random(), n);
        let out = match run_on_table(&plan, t) {
            Ok(out) => out,
            Err(e @ (PipelineError::Runtime(_) | PipelineError::Protocol(_))) => {
                return Err(format!("plan {i}: {e}\n{plan:?}"))
            }
            Err(_) => continue,
        };
        ok += 1;
        untreated += out.untreated().len();
        let events: Vec<serde_json::Value> = out.trace.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
        for req in events.iter().filter(|e| e["performative"] == "REQUEST") {
            requests += 1;
            let answered = events.iter().any(|e| {
                e["conversation_id"] == req["conversation_id"]
                    && e["sender"] == req["receiver"]
                    && e["receiver"] == req["sender"]
                    && (e["performative"] == "INFORM" || e["performative"] == "FAILURE")
            });
            ensure(answered, || format!("plan {i}: unanswered {req}"))?;
        }
    }
    Ok(format!("1000 plans terminated ({ok} completed, {untreated} untreated columns), {requests} requests answered"))
}

fn byte_identical() -> Check {
    let dir = std::env::temp_dir().join(format!("agentimpute-acceptance-{}", std::process::id()));
    std::fs::create_dir_all(&dir).map_err(|e| e.to_string())?;
    let input = dir.join("input.csv");
    std::fs::write(&input, mixed_table(8, 200).to_csv("NA")).map_err(|e| e.to_string())?;
    let mut plan = PipelinePlan::new(&input);
    plan.tournament.n_trials = 3;
    let mut first: Option<[Vec<u8>; 3]> = None;
    for run in 0..10 {
        let run_dir = dir.join(run.to_string());
        std::fs::create_dir_all(&run_dir).map_err(|e| e.to_string())?;
        plan.output.table = Some(run_dir.join("out.csv"));
        plan.output.report = Some(run_dir.join("report.json"));
        plan.output.trace = Some(run_dir.join("trace.jsonl"));
        let out = run_pipeline(&plan).map_err(|e| e.to_string())?;
        out.write(&plan.output, "NA").map_err(|e| e.to_string())?;
        let bytes = [
            std::fs::read(run_dir.join("out.csv")).unwrap(),
            std::fs::read(run_dir.join("report.json")).unwrap(),
            std::fs::read(run_dir.join("trace.jsonl")).unwrap(),
        ];
        match &first {
            None => first = Some(bytes),
            Some(f) => {
                for (k, name) in ["table", "report", "trace"].iter().enumerate() {
                    ensure(f[k] == bytes[k], || format!("run {run}: {name} differs"))?;
                }
            }
        }
    }
    let _ = std::fs::remove_dir_all(&dir);
    let sizes = first.unwrap().map(|b| b.len());
    Ok(format!("10 runs, table {} B, report {} B, trace {} B identical", sizes[0], sizes[1], sizes[2]))
}

fn mcar_rate() -> Check {
    let t = linear_table(1, 10_000, 1.0);
    let mut masked = 0;
    for seed in 0..100 {
        let (out, truth) = ampute(&t, &MaskSpec::mcar("y", 0.2, seed)).map_err(|e| e.to_string())?;
        ensure(out.column("y").unwrap().n_missing() == truth.len(), || format!("seed {seed}: mask/truth mismatch"))?;
        masked += truth.len();
    }
    let rate = masked as f64 / 1_000_000.0;
    ensure((rate - 0.2).abs() <= 0.01, || format!("pooled rate {rate}"))?;
    Ok(format!("pooled rate {rate:.5} over 100 seeds"))
}

fn mar_direction() -> Check {
    let t = linear_table(2, 10_000, 1.0);
    let (out, _) = ampute(&t, &MaskSpec::mar("y", "x", 0.3, 4)).map_err(|e| e.to_string())?;
    let x: Vec<f64> = t.numeric("x").unwrap().iter().map(|v| v.unwrap()).collect();
    let mask: Vec<f64> = out.numeric("y").unwrap().iter().map(|v| v.is_none() as u8 as f64).collect();
    let rho = spearman(&x, &mask);
    ensure(rho > 0.0, || format!("spearman {rho}"))?;
    Ok(format!("spearman(driver, mask) = {rho:.3}"))
}
