//! Simulated client training cost: per-epoch time/energy tables, cumulative
//! per-client ledgers and budget-constrained round planning.
//!
//! Costs are in arbitrary units unless measured values are configured; only
//! the robust/clean ratios carry meaning by default.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_TIME_RATIO: f64 = 3.4;
pub const DEFAULT_ENERGY_RATIO: f64 = 3.2;

/// Relative slack when comparing accumulated spend against a cap, so that
/// exactly affordable round counts survive floating-point summation.
const CAP_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Clean,
    Robust,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Clean => "clean",
            Mode::Robust => "robust",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "clean" => Ok(Mode::Clean),
            "robust" => Ok(Mode::Robust),
            other => Err(Error::UnknownMode(other.to_string())),
        }
    }
}

/// Time (s) and energy (J) of one unit of work.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Cost {
    pub time_s: f64,
    pub energy_j: f64,
}

impl Cost {
    pub fn new(time_s: f64, energy_j: f64) -> Self {
        Cost { time_s, energy_j }
    }

    pub fn scaled(self, k: f64) -> Cost {
        Cost::new(self.time_s * k, self.energy_j * k)
    }

    fn positive(self) -> bool {
        self.time_s > 0.0 && self.energy_j > 0.0 && self.time_s.is_finite() && self.energy_j.is_finite()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CostModel {
    pub architecture: String,
    /// Per-epoch cost of plain cross-entropy training.
    pub clean: Cost,
    /// Per-epoch cost of augmentation-consistency training.
    pub robust: Cost,
    /// Per-epoch cost of a server DART epoch; never charged to clients.
    pub server_dart: Cost,
}

impl Default for CostModel {
    fn default() -> Self {
        CostModel::from_ratios("small_cnn", Cost::new(1.0, 10.0), DEFAULT_TIME_RATIO, DEFAULT_ENERGY_RATIO)
    }
}

impl CostModel {
    pub fn from_ratios(architecture: impl Into<String>, clean: Cost, time_ratio: f64, energy_ratio: f64) -> Self {
        CostModel {
            architecture: architecture.into(),
            clean,
            robust: Cost::new(clean.time_s * time_ratio, clean.energy_j * energy_ratio),
            server_dart: clean,
        }
    }

    /// All costs positive and robust training no cheaper than clean.
    pub fn validate(&self) -> Result<()> {
        if !(self.clean.positive() && self.robust.positive() && self.server_dart.positive()) {
            return Err(Error::Config("cost table entries must be positive and finite".into()));
        }
        if self.robust.time_s < self.clean.time_s || self.robust.energy_j < self.clean.energy_j {
            return Err(Error::Config("robust epoch cost must not be below clean epoch cost".into()));
        }
        Ok(())
    }

    pub fn cost(&self, mode: Mode) -> Cost {
        match mode {
            Mode::Clean => self.clean,
            Mode::Robust => self.robust,
        }
    }
}

/// Per-epoch cost for a mode given by name.
pub fn epoch_cost(model: &CostModel, mode: &str) -> Result<Cost> {
    Ok(model.cost(mode.parse()?))
}

/// Optional per-client caps.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BudgetCap {
    pub time_s: Option<f64>,
    pub energy_j: Option<f64>,
}

fn exceeds(spent: f64, cap: Option<f64>) -> bool {
    cap.is_some_and(|c| spent > c + CAP_SLACK * c.abs().max(1.0))
}

/// Cumulative spend of every client.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetLedger {
    clients: Vec<Cost>,
    cap: BudgetCap,
}

impl BudgetLedger {
    pub fn new(clients: usize, cap: BudgetCap) -> Self {
        BudgetLedger {
            clients: vec![Cost::default(); clients],
            cap,
        }
    }

    pub fn clients(&self) -> &[Cost] {
        &self.clients
    }

    pub fn cap(&self) -> BudgetCap {
        self.cap
    }

    /// Largest cumulative spend over clients.
    pub fn max_spend(&self) -> Cost {
        self.clients.iter().fold(Cost::default(), |acc, c| {
            Cost::new(acc.time_s.max(c.time_s), acc.energy_j.max(c.energy_j))
        })
    }

    /// Whether adding `per_client` to every client stays within the caps.
    pub fn can_afford(&self, per_client: Cost) -> bool {
        self.clients.iter().all(|c| {
            !exceeds(c.time_s + per_client.time_s, self.cap.time_s)
                && !exceeds(c.energy_j + per_client.energy_j, self.cap.energy_j)
        })
    }

    /// Adds `per_client` to every client, or fails without charging anything
    /// if a cap would be exceeded. Negative charges are rejected.
    pub fn charge(&mut self, per_client: Cost, round: usize) -> Result<()> {
        if !(per_client.time_s >= 0.0 && per_client.energy_j >= 0.0) {
            return Err(Error::InvalidArgument("charges must be non-negative".into()));
        }
        if !self.can_afford(per_client) {
            let spent = self.max_spend();
            return Err(Error::BudgetExhausted {
                round,
                detail: format!(
                    "spent {:.3} s / {:.3} J per client, next round costs {:.3} s / {:.3} J",
                    spent.time_s, spent.energy_j, per_client.time_s, per_client.energy_j
                ),
            });
        }
        for c in &mut self.clients {
            c.time_s += per_client.time_s;
            c.energy_j += per_client.energy_j;
        }
        Ok(())
    }

    /// Charges `local_epochs` epochs of `mode` to every client.
    pub fn charge_round(&mut self, local_epochs: usize, mode: Mode, model: &CostModel, round: usize) -> Result<()> {
        self.charge(model.cost(mode).scaled(local_epochs as f64), round)
    }
}

/// Server-side spend on DART; kept apart from client budgets.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ServerLedger {
    pub dart_runs: usize,
    pub dart_epochs: usize,
    pub spent: Cost,
}

impl ServerLedger {
    pub fn charge_dart(&mut self, epochs: usize, model: &CostModel) {
        self.dart_runs += 1;
        self.dart_epochs += epochs;
        let c = model.server_dart.scaled(epochs as f64);
        self.spent.time_s += c.time_s;
        self.spent.energy_j += c.energy_j;
    }
}

/// A per-client budget on one resource.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Budget {
    Time(f64),
    Energy(f64),
}

/// Largest `T_g` with `T_g · T_l · cost ≤ budget`; 0 (with a warning) if not
/// even one round fits.
pub fn rounds_within_budget(budget: Budget, local_epochs: usize, mode: Mode, model: &CostModel) -> Result<usize> {
    let (amount, unit) = match budget {
        Budget::Time(t) => (t, model.cost(mode).time_s),
        Budget::Energy(e) => (e, model.cost(mode).energy_j),
    };
    if !(amount > 0.0 && amount.is_finite()) {
        return Err(Error::InvalidArgument(format!("budget must be positive, got {amount}")));
    }
    if local_epochs == 0 || !(unit > 0.0) {
        return Err(Error::InvalidArgument("round cost must be positive".into()));
    }
    let per_round = unit * local_epochs as f64;
    let fits = |n: usize| !exceeds(n as f64 * per_round, Some(amount));
    let mut n = (amount / per_round).floor() as usize;
    while n > 0 && !fits(n) {
        n -= 1;
    }
    while fits(n + 1) {
        n += 1;
    }
    if n == 0 {
        log::warn!("budget {amount} is below the cost of one round ({per_round}); no rounds fit");
    }
    Ok(n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn default_ratios() {
        let m = CostModel::default();
        assert_eq!(m.robust.time_s, 3.4 * m.clean.time_s);
        assert_eq!(m.robust.energy_j, 3.2 * m.clean.energy_j);
        m.validate().unwrap();
    }

    #[test]
    fn unit_ratio_gives_equal_costs() {
        let m = CostModel::from_ratios("x", Cost::new(2.0, 5.0), 1.0, 1.0);
        assert_eq!(m.clean, m.robust);
        m.validate().unwrap();
    }

    #[test]
    fn unknown_mode_rejected() {
        assert!(matches!(epoch_cost(&CostModel::default(), "turbo"), Err(Error::UnknownMode(_))));
        assert_eq!(epoch_cost(&CostModel::default(), "robust").unwrap(), CostModel::default().robust);
    }

    #[test]
    fn one_round_charge() {
        let m = CostModel::from_ratios("x", Cost::new(10.0, 100.0), 3.4, 3.2);
        let mut l = BudgetLedger::new(3, BudgetCap::default());
        l.charge_round(1, Mode::Clean, &m, 1).unwrap();
        assert!(l.clients().iter().all(|c| *c == Cost::new(10.0, 100.0)));
    }

    #[test]
    fn loop_matches_closed_form() {
        let m = CostModel::default();
        let mut l = BudgetLedger::new(2, BudgetCap::default());
        for t in 1..=37 {
            l.charge_round(2, Mode::Robust, &m, t).unwrap();
        }
        let expect = 37.0 * 2.0 * m.robust.time_s;
        assert!((l.clients()[0].time_s - expect).abs() < 1e-9);
    }

    #[test]
    fn cap_halts_without_charging() {
        let m = CostModel::default();
        let cap = BudgetCap {
            time_s: Some(2.5),
            energy_j: None,
        };
        let mut l = BudgetLedger::new(1, cap);
        l.charge_round(1, Mode::Clean, &m, 1).unwrap();
        l.charge_round(1, Mode::Clean, &m, 2).unwrap();
        let before = l.clone();
        assert!(matches!(l.charge_round(1, Mode::Clean, &m, 3), Err(Error::BudgetExhausted { round: 3, .. })));
        assert_eq!(l, before);
    }

    #[test]
    fn exact_budget_rounds() {
        let m = CostModel::from_ratios("x", Cost::new(0.1, 1.0), 3.4, 3.2);
        assert_eq!(rounds_within_budget(Budget::Time(1.0), 1, Mode::Clean, &m).unwrap(), 10);
        assert_eq!(rounds_within_budget(Budget::Time(0.05), 1, Mode::Clean, &m).unwrap(), 0);
    }

    #[test]
    fn table_shape_with_implied_costs() {
        let m = CostModel {
            architecture: "resnet18".into(),
            clean: Cost::new(12.0, 1.0),
            robust: Cost::new(37.0, 3.0),
            server_dart: Cost::new(1.0, 1.0),
        };
        assert_eq!(rounds_within_budget(Budget::Time(1000.0), 1, Mode::Clean, &m).unwrap(), 83);
        assert_eq!(rounds_within_budget(Budget::Time(1000.0), 1, Mode::Robust, &m).unwrap(), 27);
    }

    proptest! {
        #[test]
        fn rounds_match_linear_scan(budget in 0.5f64..500.0, unit in 0.05f64..20.0, epochs in 1usize..4) {
            let m = CostModel::from_ratios("x", Cost::new(unit, 1.0), 3.4, 3.2);
            let n = rounds_within_budget(Budget::Time(budget), epochs, Mode::Clean, &m).unwrap();
            let per_round = unit * epochs as f64;
            let scan = (0..100_000usize).take_while(|&k| (k + 1) as f64 * per_round <= budget * (1.0 + 1e-9)).count();
            prop_assert_eq!(n, scan);
        }

        #[test]
        fn robust_rounds_bounded_by_ratio(budget in 1.0f64..1000.0, ratio in 1.01f64..6.0) {
            let m = CostModel::from_ratios("x", Cost::new(1.0, 1.0), ratio, ratio);
            let clean = rounds_within_budget(Budget::Time(budget), 1, Mode::Clean, &m).unwrap() as f64;
            let robust = rounds_within_budget(Budget::Time(budget), 1, Mode::Robust, &m).unwrap() as f64;
            prop_assert!(robust <= clean / ratio + 1.0);
        }

        #[test]
        fn ledger_is_monotone(charges in proptest::collection::vec((0.0f64..5.0, 0.0f64..50.0), 1..40)) {
            let cap = BudgetCap { time_s: Some(40.0), energy_j: Some(400.0) };
            let mut l = BudgetLedger::new(2, cap);
            let mut prev = l.max_spend();
            for (i, (t, e)) in charges.into_iter().enumerate() {
                let _ = l.charge(Cost::new(t, e), i);
                let now = l.max_spend();
                prop_assert!(now.time_s >= prev.time_s && now.energy_j >= prev.energy_j);
                prop_assert!(now.time_s <= 40.0 * (1.0 + 1e-9) && now.energy_j <= 400.0 * (1.0 + 1e-9));
                prev = now;
            }
        }
    }
}
