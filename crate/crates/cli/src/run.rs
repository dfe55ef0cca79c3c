//! `federl run`: trains every configured method for every seed and writes
//! per-run CSVs plus the iso-budget summary, T_rob sweep, ablation and
//! proxy-swap tables.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{Context, Result};
use federl_core::budget::{rounds_within_budget, Budget, BudgetLedger, ServerLedger};
use federl_core::dart::DartVariant;
use federl_core::data::io::{load_labeled, load_suite, load_unlabeled};
use federl_core::data::{partition_clients, CorruptedTestSuite, LabeledDataset, UnlabeledDataset};
use federl_core::eval::{evaluate, write_breakdown, MetricsRecord};
use federl_core::fed::{
    robustify_trajectory, run_experiment, EvalMode, EvalPlan, FedConfig, Federation, Method, RoundRecord, RunOutcome,
};
use federl_core::model::{checkpoint, Architecture, Classifier, ParameterVector};
use serde::Serialize;

use crate::config::ExperimentConfig;

/// Command line overrides of the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub method: Option<Method>,
    pub one_shot: bool,
    pub t_rob: Option<usize>,
    pub budget_time: Option<f64>,
    pub budget_energy: Option<f64>,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut ExperimentConfig) {
        if let Some(out) = &self.out {
            cfg.output = Some(out.clone());
        }
        if let Some(s) = self.seed {
            cfg.sweep.seeds = vec![s];
        }
        if let Some(m) = self.method {
            cfg.methods = vec![m];
        }
        if self.one_shot {
            cfg.fed.one_shot = true;
        }
        if let Some(t) = self.t_rob {
            cfg.fed.t_rob = t;
        }
        if let Some(t) = self.budget_time {
            cfg.budget.time_s = Some(t);
        }
        if let Some(e) = self.budget_energy {
            cfg.budget.energy_j = Some(e);
        }
    }
}

#[derive(Debug, Default)]
pub struct RunReport {
    pub out_dir: PathBuf,
    pub files: Vec<PathBuf>,
    /// Runs whose budget did not cover a single round.
    pub starved: Vec<String>,
}

struct Inputs {
    train: LabeledDataset,
    suite: CorruptedTestSuite,
    proxy: Option<UnlabeledDataset>,
    proxy_alt: Option<UnlabeledDataset>,
    arch: Arc<Architecture>,
}

impl Inputs {
    fn load(cfg: &ExperimentConfig) -> Result<Self> {
        let train = load_labeled(&cfg.data.train)?;
        let suite = load_suite(&cfg.data.test, &cfg.corruption_specs()?, cfg.data.corruption_seed)?;
        let load_proxy = |p: &Option<PathBuf>| -> Result<Option<UnlabeledDataset>> {
            Ok(match p {
                Some(p) => Some(load_unlabeled(p)?),
                None => None,
            })
        };
        let proxy = load_proxy(&cfg.data.proxy)?;
        let proxy_alt = load_proxy(&cfg.data.proxy_alt)?;
        let shape = train.shape().context("empty training set")?;
        if suite.base.shape() != Some(shape) {
            anyhow::bail!(federl_core::Error::Config("train and test image shapes differ".into()));
        }
        for p in proxy.iter().chain(&proxy_alt) {
            if p.shape() != shape {
                anyhow::bail!(federl_core::Error::Config(format!(
                    "proxy `{}` has shape {} but training images are {shape}",
                    p.name(),
                    p.shape()
                )));
            }
        }
        let arch = Arc::new(cfg.model.build(shape, train.num_classes())?);
        Ok(Inputs {
            train,
            suite,
            proxy,
            proxy_alt,
            arch,
        })
    }
}

#[derive(Serialize)]
struct RecordRow<'a> {
    round: usize,
    time_s: String,
    #[serde(rename = "energy_J")]
    energy_j: String,
    acc_clean: String,
    acc_robust: String,
    acc_avg: String,
    method: &'a str,
}

#[derive(Serialize)]
struct LedgerRow {
    party: String,
    time_s: String,
    #[serde(rename = "energy_J")]
    energy_j: String,
    dart_runs: usize,
    dart_epochs: usize,
}

#[derive(Serialize)]
struct SummaryRow {
    seed: u64,
    budget_kind: &'static str,
    budget: String,
    method: &'static str,
    t_g: usize,
    acc_clean: String,
    acc_robust: String,
    acc_avg: String,
}

#[derive(Serialize)]
struct TrobRow {
    seed: u64,
    t_rob: String,
    dart_runs: usize,
    acc_clean: String,
    acc_robust: String,
    acc_avg: String,
    client_time_s: String,
    #[serde(rename = "client_energy_J")]
    client_energy_j: String,
}

#[derive(Serialize)]
struct AblationRow {
    seed: u64,
    variant: &'static str,
    acc_clean: String,
    acc_robust: String,
    acc_avg: String,
}

#[derive(Serialize)]
struct ProxyRow {
    seed: u64,
    proxy: String,
    proxy_size: usize,
    acc_clean: String,
    acc_robust: String,
    acc_avg: String,
}

fn num(v: f64) -> String {
    format!("{v:.6}")
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T], report: &mut RunReport) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    report.files.push(path.to_path_buf());
    Ok(())
}

fn record_rows(records: &[RoundRecord]) -> Vec<RecordRow<'static>> {
    records
        .iter()
        .map(|r| RecordRow {
            round: r.round,
            time_s: num(r.time_s),
            energy_j: num(r.energy_j),
            acc_clean: num(r.acc_clean),
            acc_robust: num(r.acc_robust),
            acc_avg: num(r.acc_avg),
            method: r.method.name(),
        })
        .collect()
}

fn ledger_rows(ledger: &BudgetLedger, server: &ServerLedger) -> Vec<LedgerRow> {
    let mut rows: Vec<LedgerRow> = ledger
        .clients()
        .iter()
        .enumerate()
        .map(|(k, c)| LedgerRow {
            party: format!("client{k}"),
            time_s: num(c.time_s),
            energy_j: num(c.energy_j),
            dart_runs: 0,
            dart_epochs: 0,
        })
        .collect();
    rows.push(LedgerRow {
        party: "server".into(),
        time_s: num(server.spent.time_s),
        energy_j: num(server.spent.energy_j),
        dart_runs: server.dart_runs,
        dart_epochs: server.dart_epochs,
    });
    rows
}

/// Rounds each budget affords `method`, in sweep order.
fn budget_points(cfg: &ExperimentConfig, method: Method) -> Result<Vec<(&'static str, f64, usize)>> {
    let mut points = Vec::new();
    let mode = method.client_mode();
    for &b in &cfg.sweep.time_budgets {
        points.push(("time", b, rounds_within_budget(Budget::Time(b), cfg.fed.local_epochs, mode, &cfg.cost)?));
    }
    for &b in &cfg.sweep.energy_budgets {
        points.push(("energy", b, rounds_within_budget(Budget::Energy(b), cfg.fed.local_epochs, mode, &cfg.cost)?));
    }
    Ok(points)
}

fn metric_strings(m: &MetricsRecord) -> (String, String, String) {
    (num(m.acc_clean), num(m.acc_robust), num(m.acc_avg))
}

struct SeedContext<'a> {
    cfg: &'a ExperimentConfig,
    inputs: &'a Inputs,
    seed: u64,
    clients: Vec<LabeledDataset>,
}

impl SeedContext<'_> {
    fn federation(&self, method: Method) -> Federation {
        let cfg = self.cfg;
        Federation {
            arch: self.inputs.arch.clone(),
            clients: self.clients.clone(),
            proxy: self.inputs.proxy.clone(),
            cfg: FedConfig {
                seed: self.seed,
                method,
                ..cfg.fed.clone()
            },
            dart: cfg.dart.clone(),
            aug: cfg.augmix.clone(),
            cost: cfg.cost.clone(),
            cap: cfg.budget,
            client_counter: None,
        }
    }

    fn plan(&self, method: Method) -> Result<EvalPlan> {
        let extra: BTreeSet<usize> = budget_points(self.cfg, method)?
            .into_iter()
            .map(|(_, _, t)| t)
            .filter(|&t| t > 0 && t <= self.cfg.fed.global_rounds)
            .collect();
        Ok(EvalPlan {
            every: self.cfg.eval.every,
            extra: extra.into_iter().collect(),
            mode: self.cfg.eval.mode,
        })
    }

    fn evaluate(&self, w: &ParameterVector) -> Result<MetricsRecord> {
        let fed = self.federation(Method::CleanFL);
        Ok(evaluate(&fed.classifier(w.clone())?, &self.inputs.suite)?)
    }
}

pub fn cmd_run(cfg: &ExperimentConfig) -> Result<RunReport> {
    let out_dir = cfg.output.clone().unwrap_or_else(|| PathBuf::from("federl_out"));
    fs::create_dir_all(&out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    let inputs = Inputs::load(cfg)?;
    log::info!(
        "model {} ({} parameters), {} training images, {} corruption entries",
        inputs.arch,
        inputs.arch.num_params(),
        inputs.train.len(),
        inputs.suite.len()
    );
    let mut report = RunReport {
        out_dir: out_dir.clone(),
        ..RunReport::default()
    };
    let mut summary = Vec::new();
    let mut trob = Vec::new();
    let mut ablation = Vec::new();
    let mut swap = Vec::new();
    for &seed in &cfg.sweep.seeds {
        let ctx = SeedContext {
            cfg,
            inputs: &inputs,
            seed,
            clients: partition_clients(&inputs.train, cfg.fed.clients, seed)?,
        };
        let mut outcomes: Vec<(Method, RunOutcome)> = Vec::new();
        for &method in &cfg.methods {
            let fed = ctx.federation(method);
            let plan = ctx.plan(method)?;
            // CleanFL and FedERL share client costs, hence evaluation rounds,
            // and a FedERL curve only needs the CleanFL snapshots
            let reuse = outcomes
                .iter()
                .find(|(m, _)| *m == Method::CleanFL)
                .filter(|_| method == Method::FedERL && plan.mode == EvalMode::Curve);
            let outcome = match reuse {
                Some((_, clean)) => {
                    fed.validate()?;
                    robustify_trajectory(&fed, clean, &inputs.suite)?
                }
                None => run_experiment(&fed, &plan, &inputs.suite)?,
            };
            if outcome.records.is_empty() {
                report.starved.push(format!("{method} seed {seed}"));
            }
            write_run(&out_dir, &inputs.arch, method, seed, &outcome, &mut report)?;
            summary.extend(summary_rows(&ctx, method, &outcome)?);
            outcomes.push((method, outcome));
        }

        let needs_pretrained = !cfg.sweep.t_rob.is_empty() || cfg.sweep.ablation || cfg.sweep.proxy_swap;
        if !needs_pretrained {
            continue;
        }
        let clean = match outcomes.iter().find(|(m, _)| *m == Method::CleanFL) {
            Some((_, o)) => o.clone(),
            None => run_experiment(&ctx.federation(Method::CleanFL), &EvalPlan::final_only(), &inputs.suite)?,
        };
        let pretrained = clean.state.global.clone();
        let t_final = clean.state.round;
        if t_final == 0 {
            report.starved.push(format!("pretrained cleanfl seed {seed}"));
            continue;
        }
        // full DART on the final CleanFL model, shared by the one-shot,
        // ablation and primary-proxy rows
        let one_shot = match outcomes
            .iter()
            .find(|(m, _)| *m == Method::FedERL)
            .and_then(|(_, o)| o.snapshots.last().filter(|(t, _)| *t == t_final && cfg.eval.mode == EvalMode::Curve))
        {
            Some((_, w)) => w.clone(),
            None => ctx.federation(Method::FedERL).robustify(&pretrained, t_final)?.0,
        };

        if !cfg.sweep.t_rob.is_empty() {
            let (c, r, a) = metric_strings(&ctx.evaluate(&one_shot)?);
            let spend = clean.state.ledger.max_spend();
            trob.push(TrobRow {
                seed,
                t_rob: "one_shot".into(),
                dart_runs: 1,
                acc_clean: c,
                acc_robust: r,
                acc_avg: a,
                client_time_s: num(spend.time_s),
                client_energy_j: num(spend.energy_j),
            });
            for &t_rob in &cfg.sweep.t_rob {
                let mut fed = ctx.federation(Method::FedERL);
                fed.cfg.t_rob = t_rob;
                fed.cfg.one_shot = false;
                let o = run_experiment(&fed, &EvalPlan::final_only(), &inputs.suite)?;
                let spend = o.state.ledger.max_spend();
                let m = o.metrics.last().context("T_rob run produced no evaluation")?;
                let (c, r, a) = metric_strings(m);
                trob.push(TrobRow {
                    seed,
                    t_rob: t_rob.to_string(),
                    dart_runs: o.state.server.dart_runs,
                    acc_clean: c,
                    acc_robust: r,
                    acc_avg: a,
                    client_time_s: num(spend.time_s),
                    client_energy_j: num(spend.energy_j),
                });
            }
        }

        if cfg.sweep.ablation {
            let (c, r, a) = metric_strings(&ctx.evaluate(&pretrained)?);
            ablation.push(AblationRow {
                seed,
                variant: "clean",
                acc_clean: c,
                acc_robust: r,
                acc_avg: a,
            });
            for variant in [DartVariant::NoConsistency, DartVariant::NoDistillation, DartVariant::Full] {
                let w = if variant == DartVariant::Full {
                    one_shot.clone()
                } else {
                    let mut fed = ctx.federation(Method::FedERL);
                    fed.dart.variant = variant;
                    fed.robustify(&pretrained, t_final)?.0
                };
                let (c, r, a) = metric_strings(&ctx.evaluate(&w)?);
                ablation.push(AblationRow {
                    seed,
                    variant: variant.name(),
                    acc_clean: c,
                    acc_robust: r,
                    acc_avg: a,
                });
            }
        }

        if cfg.sweep.proxy_swap {
            for (i, proxy) in inputs.proxy.iter().chain(&inputs.proxy_alt).enumerate() {
                let w = if i == 0 {
                    one_shot.clone()
                } else {
                    let mut fed = ctx.federation(Method::FedERL);
                    fed.proxy = Some(proxy.clone());
                    fed.robustify(&pretrained, t_final)?.0
                };
                let (c, r, a) = metric_strings(&ctx.evaluate(&w)?);
                swap.push(ProxyRow {
                    seed,
                    proxy: proxy.name().to_string(),
                    proxy_size: proxy.len(),
                    acc_clean: c,
                    acc_robust: r,
                    acc_avg: a,
                });
            }
        }
    }
    if !summary.is_empty() {
        write_csv(&out_dir.join("summary.csv"), &summary, &mut report)?;
    }
    if !trob.is_empty() {
        write_csv(&out_dir.join("trob_sweep.csv"), &trob, &mut report)?;
    }
    if !ablation.is_empty() {
        write_csv(&out_dir.join("ablation.csv"), &ablation, &mut report)?;
    }
    if !swap.is_empty() {
        write_csv(&out_dir.join("proxy_swap.csv"), &swap, &mut report)?;
    }
    Ok(report)
}

fn write_run(out: &Path, arch: &Arc<Architecture>, method: Method, seed: u64, o: &RunOutcome, report: &mut RunReport) -> Result<()> {
    let stem = format!("{}_seed{seed}", method.name());
    write_csv(&out.join(format!("records_{stem}.csv")), &record_rows(&o.records), report)?;
    write_csv(&out.join(format!("ledger_{stem}.csv")), &ledger_rows(&o.state.ledger, &o.state.server), report)?;
    if let Some(m) = o.metrics.last() {
        let path = out.join(format!("breakdown_{stem}.csv"));
        write_breakdown(&path, &m.breakdown)?;
        report.files.push(path);
    }
    if let Some((_, w)) = o.snapshots.last() {
        let ckpt = out.join("checkpoints").join(&stem);
        checkpoint::save(&Classifier::new(arch.clone(), w.clone())?, &ckpt)?;
        report.files.push(ckpt.with_extension("weights"));
    }
    if !o.state.dart_reports.is_empty() {
        let path = out.join(format!("dart_{stem}.json"));
        let reports: Vec<serde_json::Value> = o
            .state
            .dart_reports
            .iter()
            .map(|(round, r)| serde_json::json!({ "round": round, "report": r }))
            .collect();
        fs::write(&path, serde_json::to_string_pretty(&reports)? + "\n")?;
        report.files.push(path);
    }
    Ok(())
}

fn summary_rows(ctx: &SeedContext, method: Method, o: &RunOutcome) -> Result<Vec<SummaryRow>> {
    let mut rows = Vec::new();
    for (kind, budget, t_g) in budget_points(ctx.cfg, method)? {
        let t_eff = t_g.min(o.state.round);
        let rec = o.records.iter().find(|r| r.round == t_eff);
        let (c, r, a) = match rec {
            Some(r) => (num(r.acc_clean), num(r.acc_robust), num(r.acc_avg)),
            None => (String::new(), String::new(), String::new()),
        };
        rows.push(SummaryRow {
            seed: ctx.seed,
            budget_kind: kind,
            budget: num(budget),
            method: method.name(),
            t_g: t_eff,
            acc_clean: c,
            acc_robust: r,
            acc_avg: a,
        });
    }
    Ok(rows)
}
