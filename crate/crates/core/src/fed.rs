//! The federated protocol: client updates, FedAvg aggregation and periodic
//! server-side DART.
//!
//! Clients run sequentially but every source of randomness is keyed by
//! `(seed, client id, round, epoch)`, and aggregation always sums in client
//! id order, so the execution order never changes the result.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::augmix::{AugMixConfig, AugmentedBatch};
use crate::budget::{BudgetCap, BudgetLedger, CostModel, Mode, ServerLedger};
use crate::dart::{dart_train, DartConfig, DartReport};
use crate::data::{CorruptedTestSuite, LabeledDataset, UnlabeledDataset};
use crate::error::{Error, Result};
use crate::eval::{evaluate, MetricsRecord};
use crate::image::Image;
use crate::losses::{cross_entropy_loss, robust_client_loss};
use crate::model::{sgd_step, Architecture, Classifier, ParameterVector, PassCounter};
use crate::rng::{self, tag};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "cleanfl")]
    CleanFL,
    #[serde(rename = "robustfl")]
    RobustFL,
    #[serde(rename = "federl")]
    FedERL,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::CleanFL, Method::RobustFL, Method::FedERL];

    pub fn name(self) -> &'static str {
        match self {
            Method::CleanFL => "cleanfl",
            Method::RobustFL => "robustfl",
            Method::FedERL => "federl",
        }
    }

    /// Cost mode charged to clients.
    pub fn client_mode(self) -> Mode {
        match self {
            Method::RobustFL => Mode::Robust,
            Method::CleanFL | Method::FedERL => Mode::Clean,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.to_ascii_lowercase();
        Method::ALL
            .into_iter()
            .find(|m| m.name() == lower)
            .ok_or_else(|| Error::Config(format!("unknown method `{s}` (expected cleanfl, robustfl or federl)")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FedConfig {
    pub clients: usize,
    pub global_rounds: usize,
    pub local_epochs: usize,
    /// Rounds between DART invocations (FedERL only).
    pub t_rob: usize,
    pub client_lr: f64,
    pub method: Method,
    pub batch_size: usize,
    pub seed: u64,
    /// FedERL: run DART only after the final round.
    pub one_shot: bool,
    /// Consistency weight of the RobustFL client objective.
    pub robust_alpha: f64,
}

impl Default for FedConfig {
    fn default() -> Self {
        FedConfig {
            clients: 4,
            global_rounds: 200,
            local_epochs: 1,
            t_rob: 1,
            client_lr: 0.1,
            method: Method::CleanFL,
            batch_size: 32,
            seed: 0,
            one_shot: false,
            robust_alpha: 12.0,
        }
    }
}

impl FedConfig {
    /// `t_rob` above `global_rounds` is allowed and simply never fires.
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("clients", self.clients),
            ("global_rounds", self.global_rounds),
            ("local_epochs", self.local_epochs),
            ("t_rob", self.t_rob),
            ("batch_size", self.batch_size),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("fed {name} must be at least 1")));
        }
        if !(self.client_lr >= 0.0 && self.client_lr.is_finite()) {
            return Err(Error::Config(format!("client lr must be finite and >= 0, got {}", self.client_lr)));
        }
        if !(self.robust_alpha >= 0.0 && self.robust_alpha.is_finite()) {
            return Err(Error::Config("robust_alpha must be finite and >= 0".into()));
        }
        Ok(())
    }

    /// Whether FedERL runs DART after round `t` (1-based).
    pub fn dart_fires(&self, t: usize) -> bool {
        self.method == Method::FedERL
            && if self.one_shot {
                t == self.global_rounds
            } else {
                t % self.t_rob == 0
            }
    }
}

/// Sample order of one client epoch.
pub fn epoch_order(seed: u64, client: usize, round: usize, epoch: usize, n: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::stream(seed, &[tag::CLIENT, client as u64, round as u64, epoch as u64]));
    order
}

/// `T_l` local epochs of minibatch SGD starting from `w`'s weights. The
/// objective is cross-entropy, or for RobustFL cross-entropy plus the
/// AugMix consistency term over two augmented views.
pub fn client_update(
    k: usize,
    w: &Classifier,
    data: &LabeledDataset,
    cfg: &FedConfig,
    round: usize,
    aug: &AugMixConfig,
) -> Result<ParameterVector> {
    if data.is_empty() {
        return Err(Error::EmptyDataset(format!("client {k} holds no data")));
    }
    if !w.params().is_finite() {
        return Err(Error::NonFinite(format!("weights sent to client {k}")));
    }
    let mut clf = w.clone();
    for epoch in 1..=cfg.local_epochs {
        let order = epoch_order(cfg.seed, k, round, epoch, data.len());
        let aug_seed = rng::derive_seed(cfg.seed, &[tag::CLIENT_AUG, k as u64, round as u64, epoch as u64]);
        for idx in order.chunks(cfg.batch_size) {
            let images: Vec<Image> = idx.iter().map(|&i| data.images()[i].clone()).collect();
            let labels: Vec<u16> = idx.iter().map(|&i| data.labels()[i]).collect();
            let grad = match cfg.method {
                Method::CleanFL | Method::FedERL => clf.grad(&images, |p| cross_entropy_loss(p, &labels))?,
                Method::RobustFL => {
                    let keys: Vec<u64> = idx.iter().map(|&i| i as u64).collect();
                    let b = AugmentedBatch::build(images, &keys, aug, aug_seed)?;
                    clf.loss_and_grad(&[&b.clean, &b.aug1, &b.aug2], |p| {
                        robust_client_loss(p, &labels, cfg.robust_alpha)
                    })?
                    .1
                }
            };
            let next = sgd_step(clf.params(), &grad, cfg.client_lr)?;
            clf.set_params(next)?;
        }
    }
    Ok(clf.into_params())
}

/// Unweighted FedAvg.
pub fn aggregate(models: &[ParameterVector]) -> Result<ParameterVector> {
    ParameterVector::mean(models)
}

/// Server state between rounds.
#[derive(Debug, Clone)]
pub struct FedState {
    /// Completed rounds.
    pub round: usize,
    pub global: ParameterVector,
    pub ledger: BudgetLedger,
    pub server: ServerLedger,
    /// `(round, report)` for every DART run.
    pub dart_reports: Vec<(usize, DartReport)>,
}

/// Everything a run needs besides its mutable state.
#[derive(Debug, Clone)]
pub struct Federation {
    pub arch: Arc<Architecture>,
    pub clients: Vec<LabeledDataset>,
    pub proxy: Option<UnlabeledDataset>,
    pub cfg: FedConfig,
    pub dart: DartConfig,
    pub aug: AugMixConfig,
    pub cost: CostModel,
    pub cap: BudgetCap,
    /// Counts client-side passes only; DART and evaluation are not counted.
    pub client_counter: Option<Arc<PassCounter>>,
}

impl Federation {
    pub fn new(arch: Arc<Architecture>, clients: Vec<LabeledDataset>, cfg: FedConfig) -> Self {
        Federation {
            arch,
            clients,
            proxy: None,
            cfg,
            dart: DartConfig::default(),
            aug: AugMixConfig::default(),
            cost: CostModel::default(),
            cap: BudgetCap::default(),
            client_counter: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.cfg.validate()?;
        self.dart.validate()?;
        self.aug.validate()?;
        self.cost.validate()?;
        if self.clients.len() != self.cfg.clients {
            return Err(Error::Config(format!(
                "{} client datasets for {} configured clients",
                self.clients.len(),
                self.cfg.clients
            )));
        }
        if self.cfg.method == Method::FedERL && self.proxy.is_none() {
            return Err(Error::Config("FedERL needs a server proxy dataset".into()));
        }
        if self.cfg.method == Method::FedERL && self.cfg.t_rob > self.cfg.global_rounds && !self.cfg.one_shot {
            log::warn!("t_rob {} exceeds global_rounds {}; DART never runs", self.cfg.t_rob, self.cfg.global_rounds);
        }
        Ok(())
    }

    pub fn classifier(&self, params: ParameterVector) -> Result<Classifier> {
        Classifier::new(self.arch.clone(), params)
    }

    pub fn initial_state(&self) -> FedState {
        FedState {
            round: 0,
            global: Classifier::init(self.arch.clone(), self.cfg.seed).into_params(),
            ledger: BudgetLedger::new(self.cfg.clients, self.cap),
            server: ServerLedger::default(),
            dart_reports: Vec::new(),
        }
    }

    fn client_model(&self, params: ParameterVector) -> Result<Classifier> {
        let clf = self.classifier(params)?;
        Ok(match &self.client_counter {
            Some(c) => clf.with_counter(c.clone()),
            None => clf,
        })
    }

    /// DART on `params` as run after round `t`.
    pub fn robustify(&self, params: &ParameterVector, t: usize) -> Result<(ParameterVector, DartReport)> {
        let proxy = self
            .proxy
            .as_ref()
            .ok_or_else(|| Error::Config("DART needs a server proxy dataset".into()))?;
        let cfg = DartConfig {
            seed: rng::derive_seed(self.cfg.seed, &[tag::SERVER_DART, self.dart.seed, t as u64]),
            ..self.dart.clone()
        };
        dart_train(&self.classifier(params.clone())?, proxy, &cfg, &self.aug)
    }

    pub fn run_round(&self, state: &FedState) -> Result<FedState> {
        let order: Vec<usize> = (0..self.cfg.clients).collect();
        self.run_round_with_order(state, &order)
    }

    /// As [`Federation::run_round`], computing client updates in `order`.
    pub fn run_round_with_order(&self, state: &FedState, order: &[usize]) -> Result<FedState> {
        let t = state.round + 1;
        let mut sorted = order.to_vec();
        sorted.sort_unstable();
        if sorted != (0..self.cfg.clients).collect::<Vec<_>>() {
            return Err(Error::InvalidArgument("client order must be a permutation of client ids".into()));
        }
        let mode = self.cfg.method.client_mode();
        let round_cost = self.cost.cost(mode).scaled(self.cfg.local_epochs as f64);
        let mut ledger = state.ledger.clone();
        ledger.charge(round_cost, t)?;

        let start = self.client_model(state.global.clone())?;
        let mut updates: Vec<Option<ParameterVector>> = vec![None; self.cfg.clients];
        for &k in order {
            updates[k] = Some(client_update(k, &start, &self.clients[k], &self.cfg, t, &self.aug)?);
        }
        let updates: Vec<ParameterVector> = updates.into_iter().map(|u| u.expect("every client ran")).collect();
        let mut global = aggregate(&updates)?;

        let mut server = state.server;
        let mut dart_reports = state.dart_reports.clone();
        if self.cfg.dart_fires(t) {
            let (robust, report) = self.robustify(&global, t)?;
            server.charge_dart(report.epochs_run, &self.cost);
            log::info!(
                "round {t}: DART ran {} epochs, selected epoch {}",
                report.epochs_run,
                report.selected_epoch
            );
            dart_reports.push((t, report));
            global = robust;
        }
        Ok(FedState {
            round: t,
            global,
            ledger,
            server,
            dart_reports,
        })
    }
}

/// How FedERL is evaluated along the trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalMode {
    /// Evaluate the global model as produced by the protocol.
    #[default]
    Protocol,
    /// Run clients without DART feedback; at each evaluation point apply
    /// DART to a copy of the global model and evaluate that copy.
    Curve,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EvalPlan {
    /// Evaluate after every `every` rounds and after the last round.
    pub every: usize,
    /// Additional rounds to evaluate after.
    pub extra: Vec<usize>,
    pub mode: EvalMode,
}

impl EvalPlan {
    pub fn new(every: usize, mode: EvalMode) -> Self {
        EvalPlan {
            every,
            extra: Vec::new(),
            mode,
        }
    }

    pub fn final_only() -> Self {
        EvalPlan::new(usize::MAX, EvalMode::Protocol)
    }

    fn due(&self, t: usize, last: usize) -> bool {
        t == last || (self.every > 0 && t % self.every == 0) || self.extra.contains(&t)
    }
}

/// One evaluation point of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    /// Fingerprint of the evaluated weights.
    pub snapshot: String,
    pub time_s: f64,
    pub energy_j: f64,
    pub acc_clean: f64,
    pub acc_robust: f64,
    pub acc_avg: f64,
    pub method: Method,
    /// Set on the last record of a run stopped by its budget.
    pub halted: bool,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub records: Vec<RoundRecord>,
    pub metrics: Vec<MetricsRecord>,
    /// `(round, weights)` at every evaluation point, as evaluated.
    pub snapshots: Vec<(usize, ParameterVector)>,
    pub state: FedState,
    pub halted: bool,
}

pub fn run_experiment(fed: &Federation, plan: &EvalPlan, suite: &CorruptedTestSuite) -> Result<RunOutcome> {
    fed.validate()?;
    if plan.mode == EvalMode::Curve && fed.cfg.method == Method::FedERL {
        // in curve mode the trajectory itself is CleanFL's
        let clean = Federation {
            cfg: FedConfig {
                method: Method::CleanFL,
                ..fed.cfg.clone()
            },
            ..fed.clone()
        };
        let trajectory = run_experiment(
            &clean,
            &EvalPlan {
                mode: EvalMode::Protocol,
                ..plan.clone()
            },
            suite,
        )?;
        return robustify_trajectory(fed, &trajectory, suite);
    }
    let mut state = fed.initial_state();
    let mut out = RunOutcome {
        records: Vec::new(),
        metrics: Vec::new(),
        snapshots: Vec::new(),
        state: state.clone(),
        halted: false,
    };
    let last = fed.cfg.global_rounds;
    let mut evaluated_round = 0;
    for t in 1..=last {
        match fed.run_round(&state) {
            Ok(next) => state = next,
            Err(Error::BudgetExhausted { round, detail }) => {
                log::warn!("{}: budget exhausted before round {round}: {detail}", fed.cfg.method);
                out.halted = true;
                break;
            }
            Err(e) => return Err(e),
        }
        if plan.due(t, last) {
            let w = state.global.clone();
            record_point(fed, &state, w, suite, &mut out)?;
            evaluated_round = t;
        }
    }
    if out.halted && state.round > 0 && evaluated_round != state.round {
        let w = state.global.clone();
        record_point(fed, &state, w, suite, &mut out)?;
    }
    if out.halted {
        if let Some(r) = out.records.last_mut() {
            r.halted = true;
        }
    }
    out.state = state;
    Ok(out)
}

/// FedERL curve from a CleanFL run: every evaluated snapshot is passed
/// through DART (as after its round) and the result evaluated. Each point
/// equals one-shot FedERL stopped at that round.
pub fn robustify_trajectory(fed: &Federation, clean: &RunOutcome, suite: &CorruptedTestSuite) -> Result<RunOutcome> {
    let mut state = clean.state.clone();
    let mut out = RunOutcome {
        records: Vec::new(),
        metrics: Vec::new(),
        snapshots: Vec::new(),
        state: state.clone(),
        halted: clean.halted,
    };
    for (record, (t, w)) in clean.records.iter().zip(&clean.snapshots) {
        let (robust, report) = fed.robustify(w, *t)?;
        state.server.charge_dart(report.epochs_run, &fed.cost);
        state.dart_reports.push((*t, report));
        let metrics = evaluate(&fed.classifier(robust.clone())?, suite)?;
        out.records.push(RoundRecord {
            round: *t,
            snapshot: robust.fingerprint(),
            acc_clean: metrics.acc_clean,
            acc_robust: metrics.acc_robust,
            acc_avg: metrics.acc_avg,
            method: Method::FedERL,
            ..record.clone()
        });
        out.metrics.push(metrics);
        out.snapshots.push((*t, robust));
    }
    if let Some((t, w)) = out.snapshots.last() {
        if *t == state.round {
            state.global = w.clone();
        }
    }
    out.state = state;
    Ok(out)
}

fn record_point(
    fed: &Federation,
    state: &FedState,
    weights: ParameterVector,
    suite: &CorruptedTestSuite,
    out: &mut RunOutcome,
) -> Result<()> {
    let t = state.round;
    let metrics = evaluate(&fed.classifier(weights.clone())?, suite)?;
    let spend = state.ledger.max_spend();
    out.records.push(RoundRecord {
        round: t,
        snapshot: weights.fingerprint(),
        time_s: spend.time_s,
        energy_j: spend.energy_j,
        acc_clean: metrics.acc_clean,
        acc_robust: metrics.acc_robust,
        acc_avg: metrics.acc_avg,
        method: fed.cfg.method,
        halted: false,
    });
    log::info!(
        "{} round {t}: clean {:.4} robust {:.4}",
        fed.cfg.method,
        metrics.acc_clean,
        metrics.acc_robust
    );
    out.metrics.push(metrics);
    out.snapshots.push((t, weights));
    Ok(())
}
