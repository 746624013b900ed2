//! Per-column strategy tournament run by cooperating agents.
//!
//! | agent         | service           | answers                              |
//! |---------------|-------------------|--------------------------------------|
//! | `coordinator` | `coordinate`      | the operator's run request           |
//! | `profiler`    | `profile`         | a table, with its profile            |
//! | `evaluator`   | `evaluate`        | a tournament, with score reports     |
//! | `imputer-<s>` | `impute/<s>`      | an imputation with strategy `<s>`    |
//!
//! Every REQUEST is answered with AGREE and then INFORM, or with FAILURE.
//! The coordinator profiles the table, runs one tournament per target column
//! on that column's observed rows, picks the winner and asks the winner's
//! imputer to treat the real column. Columns are imputed independently from
//! the input table and merged at the end.

mod plan;
mod report;

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use plan::{Candidates, Executor, Knobs, Outputs, PipelinePlan, PlanError, Tournament};
pub use report::{
    assemble_report, ledger_digest, select_winner, CandidateFailure, CandidateScore, CellProvenance,
    ColumnEntry, ColumnSelection, ColumnStatus, Margin, Metric, PipelineReport, ReportHeader,
};

use crate::agent::{Context, Message, Outgoing, Performative, Platform, RuntimeError, Scheduler};
use crate::amputation::{run_trials, MaskSpec, ScoreReport};
use crate::imputation::{default_predictors, impute, ImputationResult, Strategy, StrategyConfig};
use crate::tabular::{parse_csv, profile, CsvOptions, ProfileReport, Table, TableError};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error("cannot read input {path}: {source}")]
    Input {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Data(#[from] TableError),
    #[error(transparent)]
    Runtime(#[from] RuntimeError),
    #[error("pipeline protocol failure: {0}")]
    Protocol(String),
}

#[derive(Debug, Serialize, Deserialize)]
struct TournamentRequest {
    column: String,
    table: Table,
    spec: MaskSpec,
    candidates: Vec<StrategyConfig>,
    n_trials: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct ImputeRequest {
    column: String,
    table: Table,
    config: StrategyConfig,
}

#[derive(Debug, Serialize, Deserialize)]
struct RunResult {
    selections: Vec<ColumnSelection>,
    results: BTreeMap<String, ImputationResult>,
}

fn failure(reason: impl ToString) -> serde_json::Value {
    serde_json::json!({ "reason": reason.to_string() })
}

/// Decodes a REQUEST, answers AGREE, then INFORM with `work`'s output or
/// FAILURE with its error.
fn serve<Req, Resp, E>(msg: &Message, ctx: &mut Context, work: impl FnOnce(Req) -> Result<Resp, E>)
where
    Req: serde::de::DeserializeOwned,
    Resp: Serialize,
    E: ToString,
{
    if msg.performative != Performative::Request {
        return;
    }
    let req = match msg.payload::<Req>() {
        Ok(r) => r,
        Err(e) => return ctx.reply(msg, Performative::Failure, &failure(format!("bad request: {e}"))),
    };
    ctx.reply(msg, Performative::Agree, &serde_json::json!({}));
    match work(req) {
        Ok(resp) => ctx.reply(msg, Performative::Inform, &resp),
        Err(e) => ctx.reply(msg, Performative::Failure, &failure(e)),
    }
}

fn profiler(msg: Message, ctx: &mut Context) {
    serve(&msg, ctx, |t: Table| profile(&t));
}

fn evaluator(msg: Message, ctx: &mut Context) {
    serve(&msg, ctx, |r: TournamentRequest| {
        run_trials(&r.table, &[r.spec], &r.candidates, r.n_trials)
    });
}

fn imputer(strategy: Strategy) -> impl FnMut(Message, &mut Context) + Send {
    move |msg, ctx| {
        serve(&msg, ctx, |r: ImputeRequest| {
            if r.config.method != strategy {
                return Err(format!("this imputer only runs {strategy}"));
            }
            impute(&r.table, &r.column, &r.config, None).map_err(|e| e.to_string())
        })
    }
}

enum Pending {
    Profile,
    Tournament(String),
    Impute(String),
}

struct Coordinator {
    plan: PipelinePlan,
    table: Table,
    operator: Option<Message>,
    targets: Vec<String>,
    pending: BTreeMap<String, Pending>,
    selections: BTreeMap<String, ColumnSelection>,
    results: BTreeMap<String, ImputationResult>,
}

impl Coordinator {
    fn request(&mut self, ctx: &mut Context, service: &str, payload: &impl Serialize, pending: Pending) -> bool {
        let Some(to) = ctx.lookup(service).into_iter().next() else {
            return false;
        };
        let conv = ctx.new_conversation_id();
        ctx.send(Outgoing::new(Performative::Request, to, conv.clone(), payload));
        self.pending.insert(conv, pending);
        true
    }

    fn abort(&mut self, ctx: &mut Context, reason: String) {
        if let Some(op) = self.operator.take() {
            ctx.reply(&op, Performative::Failure, &failure(reason));
        }
    }

    fn untreated(&mut self, column: &str, strategy: Option<Strategy>, reason: impl ToString) {
        let sel = self.selections.get_mut(column).expect("target has a selection");
        sel.status = report::ColumnStatus::Untreated;
        sel.failures.push(CandidateFailure {
            strategy,
            reason: reason.to_string(),
        });
    }

    fn config_for(&self, column: &str, method: Strategy) -> StrategyConfig {
        let k = &self.plan.strategy;
        StrategyConfig {
            method,
            k: k.k,
            distance: k.distance,
            predictors: default_predictors(&self.table, column, method),
            donor_pool_min: k.donor_pool_min,
            fallback: k.fallback,
            seed: k.seed,
        }
    }

    fn on_profile(&mut self, ctx: &mut Context, report: ProfileReport) {
        let targets: Vec<String> = match &self.plan.targets {
            Some(t) => t.clone(),
            None => report
                .columns
                .iter()
                .filter(|c| c.n_observed < report.n_rows)
                .map(|c| c.name.clone())
                .collect(),
        };
        for target in &targets {
            let Some(p) = report.columns.iter().find(|c| &c.name == target) else {
                return self.abort(ctx, format!("unknown target column {target:?}"));
            };
            let n_missing = report.n_rows - p.n_observed;
            self.selections
                .insert(target.clone(), ColumnSelection::new(target, p.kind, n_missing));
        }
        self.targets = targets.clone();
        for target in targets {
            let sel = &self.selections[&target];
            if sel.n_missing == 0 {
                continue;
            }
            let t = &self.plan.tournament;
            let rate = t.rate.unwrap_or_else(|| (sel.n_missing as f64 / report.n_rows as f64).clamp(0.05, 0.5));
            let driver = t.driver.as_deref().and_then(|d| self.table.column(d).ok());
            let target_col = self.table.column(&target).expect("profiled column exists");
            let rows: Vec<usize> = (0..self.table.n_rows())
                .filter(|&r| !target_col.is_missing(r) && driver.is_none_or(|d| !d.is_missing(r)))
                .collect();
            let candidates: Vec<StrategyConfig> = self
                .plan
                .candidates
                .for_kind(sel.kind)
                .iter()
                .map(|&s| self.config_for(&target, s))
                .collect();
            let req = TournamentRequest {
                column: target.clone(),
                table: self.table.select_rows(&rows),
                spec: MaskSpec {
                    mechanism: t.mechanism,
                    rate,
                    target: target.clone(),
                    driver: t.driver.clone(),
                    seed: t.base_seed,
                },
                candidates,
                n_trials: t.n_trials,
            };
            self.selections.get_mut(&target).unwrap().rate = Some(rate);
            if !self.request(ctx, "evaluate", &req, Pending::Tournament(target.clone())) {
                self.untreated(&target, None, "no evaluator registered");
            }
        }
    }

    fn on_tournament(&mut self, ctx: &mut Context, column: String, reports: Vec<ScoreReport>) {
        let metric = self.selections[&column].metric;
        let scores: Vec<CandidateScore> = reports.iter().map(|r| CandidateScore::from_report(metric, r)).collect();
        let failures = reports
            .iter()
            .filter(|r| r.all_failed())
            .map(|r| CandidateFailure {
                strategy: Some(r.strategy),
                reason: r
                    .per_trial
                    .iter()
                    .find_map(|t| t.error.clone())
                    .unwrap_or_else(|| "no score".into()),
            });
        let sel = self.selections.get_mut(&column).unwrap();
        sel.failures.extend(failures);
        let winner = select_winner(metric, &scores, |s| self.plan.priority_rank(s));
        sel.scores = scores;
        let Some((strategy, margin)) = winner else {
            return self.untreated(&column, None, "every candidate failed the tournament");
        };
        sel.chosen = Some(strategy);
        sel.margin = Some(margin);
        let req = ImputeRequest {
            column: column.clone(),
            table: self.table.clone(),
            config: self.config_for(&column, strategy),
        };
        if !self.request(ctx, &format!("impute/{}", strategy.tag()), &req, Pending::Impute(column.clone())) {
            self.untreated(&column, Some(strategy), "no imputer registered");
        }
    }

    fn on_reply(&mut self, ctx: &mut Context, msg: &Message) {
        if msg.performative == Performative::Agree {
            return;
        }
        let Some(pending) = self.pending.remove(&msg.conversation_id) else {
            return;
        };
        let ok = msg.performative == Performative::Inform;
        let reason = || msg.reason().unwrap_or_else(|| "unspecified".into());
        match pending {
            Pending::Profile => match msg.payload::<ProfileReport>() {
                Ok(report) if ok => self.on_profile(ctx, report),
                _ => self.abort(ctx, format!("profiling failed: {}", reason())),
            },
            Pending::Tournament(column) => match msg.payload::<Vec<ScoreReport>>() {
                Ok(reports) if ok => self.on_tournament(ctx, column, reports),
                _ => self.untreated(&column, None, format!("tournament failed: {}", reason())),
            },
            Pending::Impute(column) => {
                let chosen = self.selections[&column].chosen;
                match msg.payload::<ImputationResult>() {
                    Ok(result) if ok => {
                        self.selections.get_mut(&column).unwrap().status = report::ColumnStatus::Treated;
                        self.results.insert(column, result);
                    }
                    _ => self.untreated(&column, chosen, reason()),
                }
            }
        }
        if self.pending.is_empty() {
            if let Some(op) = self.operator.take() {
                let result = RunResult {
                    selections: self.targets.iter().map(|t| self.selections[t].clone()).collect(),
                    results: std::mem::take(&mut self.results),
                };
                ctx.reply(&op, Performative::Inform, &result);
            }
        }
    }

    fn handle(&mut self, msg: Message, ctx: &mut Context) {
        if msg.performative == Performative::Request {
            if self.operator.is_some() {
                return ctx.reply(&msg, Performative::Refuse, &failure("a run is in progress"));
            }
            ctx.reply(&msg, Performative::Agree, &serde_json::json!({}));
            self.operator = Some(msg);
            let table = self.table.clone();
            if !self.request(ctx, "profile", &table, Pending::Profile) {
                self.abort(ctx, "no profiler registered".into());
            }
        } else {
            self.on_reply(ctx, &msg);
        }
    }
}

/// Everything a pipeline run produces.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOutcome {
    /// Input table with every treated column filled.
    pub table: Table,
    pub results: BTreeMap<String, ImputationResult>,
    pub report: PipelineReport,
    /// Delivery trace, one JSON object per line.
    pub trace: String,
}

impl PipelineOutcome {
    pub fn untreated(&self) -> &[String] {
        &self.report.untreated
    }

    /// Writes the artifacts named in `outputs`. Missing cells of untreated
    /// columns are written as `missing_token`.
    pub fn write(&self, outputs: &Outputs, missing_token: &str) -> std::io::Result<()> {
        if let Some(p) = &outputs.table {
            std::fs::write(p, self.table.to_csv(missing_token))?;
        }
        if let Some(p) = &outputs.report {
            std::fs::write(p, self.report.to_json())?;
        }
        if let Some(p) = &outputs.trace {
            std::fs::write(p, &self.trace)?;
        }
        Ok(())
    }
}

/// Reads the plan's input and runs the pipeline on it.
pub fn run_pipeline(plan: &PipelinePlan) -> Result<PipelineOutcome, PipelineError> {
    let text = std::fs::read_to_string(&plan.input).map_err(|source| PipelineError::Input {
        path: plan.input.clone(),
        source,
    })?;
    let options = CsvOptions {
        missing_tokens: plan.missing_tokens.iter().cloned().collect(),
        ..CsvOptions::default()
    };
    run_on_table(plan, parse_csv(&text, &options)?)
}

pub fn run_on_table(plan: &PipelinePlan, table: Table) -> Result<PipelineOutcome, PipelineError> {
    plan.validate()?;
    if table.n_rows() == 0 || table.n_cols() == 0 {
        return Err(TableError::Empty.into());
    }
    for t in plan.targets.iter().flatten() {
        table.column(t)?;
    }

    let platform = Platform::new(plan.tournament.base_seed);
    let coordinator = Mutex::new(Coordinator {
        plan: plan.clone(),
        table: table.clone(),
        operator: None,
        targets: Vec::new(),
        pending: BTreeMap::new(),
        selections: BTreeMap::new(),
        results: BTreeMap::new(),
    });
    let id = platform.spawn("coordinator", move |m: Message, ctx: &mut Context| {
        coordinator.lock().unwrap().handle(m, ctx)
    })?;
    platform.register("coordinate", &id)?;
    let id = platform.spawn("profiler", profiler)?;
    platform.register("profile", &id)?;
    let id = platform.spawn("evaluator", evaluator)?;
    platform.register("evaluate", &id)?;
    let mut strategies: Vec<Strategy> = plan.candidates.numeric.clone();
    strategies.extend(&plan.candidates.nominal);
    strategies.sort();
    strategies.dedup();
    for s in &strategies {
        let id = platform.spawn(format!("imputer-{}", s.tag()), imputer(*s))?;
        platform.register(format!("impute/{}", s.tag()), &id)?;
    }

    let inbox: Arc<Mutex<Vec<Message>>> = Arc::default();
    let sink = Arc::clone(&inbox);
    let operator = platform.spawn("operator", move |m: Message, _: &mut Context| {
        sink.lock().unwrap().push(m)
    })?;
    let conv = platform.new_conversation_id();
    platform.send(&operator, Outgoing::new(Performative::Request, "coordinator", conv, &serde_json::json!({})));

    let n_targets = plan.targets.as_ref().map_or(table.n_cols(), Vec::len) as u64;
    let budget = 64 + 16 * n_targets;
    match plan.executor {
        Executor::RoundRobin => platform.run(Scheduler::RoundRobin, budget)?,
        Executor::Random { seed } => platform.run(Scheduler::Random { seed }, budget)?,
        Executor::Threaded { workers } => platform.run_threaded(workers, budget)?,
    };
    let trace = platform.trace_jsonl();
    platform.shutdown();

    let replies = std::mem::take(&mut *inbox.lock().unwrap());
    let done = replies
        .into_iter()
        .find(|m| matches!(m.performative, Performative::Inform | Performative::Failure | Performative::Refuse))
        .ok_or_else(|| PipelineError::Protocol("coordinator never answered".into()))?;
    if done.performative != Performative::Inform {
        return Err(PipelineError::Protocol(done.reason().unwrap_or_default()));
    }
    let RunResult { selections, results } = done
        .payload()
        .map_err(|e| PipelineError::Protocol(format!("undecodable result: {e}")))?;

    let mut merged = table.clone();
    for (column, result) in &results {
        merged = merged.with_column(result.table.column(column)?.clone())?;
    }
    let mut priority = strategies;
    priority.sort_by_key(|&s| plan.priority_rank(s));
    let header = ReportHeader {
        n_rows: table.n_rows(),
        n_cols: table.n_cols(),
        mechanism: plan.tournament.mechanism,
        n_trials: plan.tournament.n_trials,
        base_seed: plan.tournament.base_seed,
        priority,
    };
    let report = assemble_report(header, &results, &selections);
    Ok(PipelineOutcome {
        table: merged,
        results,
        report,
        trace,
    })
}
