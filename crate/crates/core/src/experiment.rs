//! End-to-end experiment wiring: GHP baselines, constraint levels expressed as
//! uplifts over GHP, dual training and policy construction.

use serde::{Deserialize, Serialize};

use crate::io::TraceEntry;
use crate::lp::{build_offline_lp, solve_exact, Attainable, InfeasibilityReport, LpStatus};
use crate::model::{CampaignTable, DualParams, Goal, ProblemConfig, Request};
use crate::policy::{
    ot_train, BudgetState, DualPolicy, GreedyPolicy, LpOptions, Policy, PolicyKind, ThrottlePolicy,
};
use crate::replay::{replay, Accounting, ReplayReport};
use crate::trainer::{train_iterative, TrainerConfig};
use crate::{Error, Result};

/// Click and conversion floors as relative uplifts over the GHP baseline
/// (`0.15` means 15% above GHP). An absent uplift disables that floor.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Uplift {
    pub clk: Option<f64>,
    pub cvn: Option<f64>,
}

impl Uplift {
    pub fn validate(&self) -> Result<()> {
        for u in [self.clk, self.cvn].into_iter().flatten() {
            if !(u.is_finite() && u > -1.0) {
                return Err(Error::Invalid(format!(
                    "uplift {u} must be finite and > -1"
                )));
            }
        }
        Ok(())
    }
}

/// The campaign table a policy sees: goals optionally replaced by one class.
pub fn policy_table(campaigns: &CampaignTable, goal_override: Option<Goal>) -> CampaignTable {
    match goal_override {
        Some(goal) => campaigns.with_goal(goal),
        None => campaigns.clone(),
    }
}

pub fn ghp_baseline(
    log: &[Request],
    campaigns: &CampaignTable,
    config: &ProblemConfig,
) -> ReplayReport {
    replay(
        log,
        campaigns,
        &GreedyPolicy { config },
        Accounting::Expected,
        "",
    )
    .report
}

/// Turns uplifts into absolute levels over the goal classes of `baseline`.
pub fn resolve_targets(
    config: &ProblemConfig,
    baseline: &ReplayReport,
    uplift: &Uplift,
) -> ProblemConfig {
    ProblemConfig {
        t_cy: uplift
            .clk
            .map_or(0.0, |u| (1.0 + u) * baseline.goal_clicks()),
        t_vy: uplift
            .cvn
            .map_or(0.0, |u| (1.0 + u) * baseline.goal_conversions()),
        ..config.clone()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainMethod {
    Exact,
    Iterative,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trained {
    pub duals: DualParams,
    pub method: TrainMethod,
    pub converged: bool,
    pub trace: Vec<TraceEntry>,
}

/// Trains dual prices for `config`'s floors: the exact LP when the slate
/// enumeration fits its guard, the iterative trainer otherwise. Floors the
/// exact LP cannot meet, or the iterative trainer never reached within
/// tolerance, are reported as [`Error::Infeasible`].
pub fn train(
    log: &[Request],
    campaigns: &CampaignTable,
    config: &ProblemConfig,
    hyper: &TrainerConfig,
) -> Result<Trained> {
    match build_offline_lp(log, campaigns, config) {
        Ok(lp) => {
            let solution = solve_exact(&lp)?;
            match solution.status {
                LpStatus::Optimal => Ok(Trained {
                    duals: solution.duals,
                    method: TrainMethod::Exact,
                    converged: true,
                    trace: Vec::new(),
                }),
                LpStatus::Infeasible => Err(Error::Infeasible(InfeasibilityReport {
                    target_clicks: config.t_cy,
                    target_conversions: config.t_vy,
                    attainable: solution
                        .attainable
                        .expect("infeasible solutions carry levels"),
                })),
                LpStatus::Unbounded => Err(Error::Invalid("offline LP is unbounded".into())),
            }
        }
        Err(Error::EnumerationGuard { .. }) => {
            let outcome = train_iterative(log, campaigns, config, hyper);
            let chosen = &outcome.trace[outcome.epoch];
            let shortfall = chosen
                .enforced_click_shortfall
                .max(chosen.enforced_conversion_shortfall);
            if shortfall > hyper.tolerance {
                let best = |target: f64, short: fn(&TraceEntry) -> f64| {
                    outcome
                        .trace
                        .iter()
                        .map(|e| target * (1.0 - short(e)))
                        .fold(0.0, f64::max)
                };
                return Err(Error::Infeasible(InfeasibilityReport {
                    target_clicks: config.t_cy,
                    target_conversions: config.t_vy,
                    attainable: Attainable {
                        goal_clicks: best(config.t_cy, |e| e.enforced_click_shortfall),
                        goal_conversions: best(config.t_vy, |e| e.enforced_conversion_shortfall),
                    },
                }));
            }
            Ok(Trained {
                duals: outcome.duals,
                method: TrainMethod::Iterative,
                converged: outcome.converged,
                trace: outcome.trace,
            })
        }
        Err(e) => Err(e),
    }
}

/// Builds a policy over `table`. Throttling thresholds are fitted on `log`;
/// the dual-price policy needs `duals`.
pub fn build_policy<'a>(
    kind: PolicyKind,
    log: &[Request],
    table: &'a CampaignTable,
    config: &'a ProblemConfig,
    duals: Option<&DualParams>,
) -> Result<Box<dyn Policy + 'a>> {
    Ok(match kind {
        PolicyKind::Ghp => Box::new(GreedyPolicy { config }),
        PolicyKind::Ot => Box::new(ThrottlePolicy {
            campaigns: table,
            config,
            thresholds: ot_train(log, table, config),
        }),
        PolicyKind::Lp => {
            let duals =
                duals.ok_or_else(|| Error::Invalid("the lp policy needs dual prices".into()))?;
            if duals.alpha.len() != table.len() || !duals.is_dual_feasible() {
                return Err(Error::Invalid(
                    "dual prices must be non-negative, one per campaign".into(),
                ));
            }
            Box::new(DualPolicy {
                campaigns: table,
                config,
                duals: duals.clone(),
                options: LpOptions::default(),
            })
        }
    })
}

/// One row of a benchmark table: a policy, the goal classes it optimizes for
/// and, for the dual-price policy, its floors.
#[derive(Clone, Debug, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub policy: PolicyKind,
    pub goal_override: Option<Goal>,
    pub uplift: Uplift,
}

impl Scenario {
    pub fn ghp() -> Self {
        Self {
            name: "GHP".into(),
            policy: PolicyKind::Ghp,
            goal_override: None,
            uplift: Uplift::default(),
        }
    }

    /// Throttling on clicks for every campaign.
    pub fn ot_clk() -> Self {
        Self {
            name: "OT-clk".into(),
            policy: PolicyKind::Ot,
            goal_override: Some(Goal::Click),
            uplift: Uplift::default(),
        }
    }

    /// Throttling on each campaign's own goal.
    pub fn ot_clk_cvn() -> Self {
        Self {
            name: "OT-clk-cvn".into(),
            policy: PolicyKind::Ot,
            goal_override: None,
            uplift: Uplift::default(),
        }
    }

    /// Single-objective clicks: every campaign is a click campaign and total
    /// clicks must rise by `uplift` over GHP.
    pub fn so_clk(uplift: f64) -> Self {
        Self {
            name: "SO-clk".into(),
            policy: PolicyKind::Lp,
            goal_override: Some(Goal::Click),
            uplift: Uplift {
                clk: Some(uplift),
                cvn: None,
            },
        }
    }

    /// Multi-objective: click campaigns gain `clk`, conversion campaigns `cvn`.
    pub fn mo(clk: f64, cvn: f64) -> Self {
        Self {
            name: "MO".into(),
            policy: PolicyKind::Lp,
            goal_override: None,
            uplift: Uplift {
                clk: Some(clk),
                cvn: Some(cvn),
            },
        }
    }
}

#[derive(Clone, Debug)]
pub struct ScenarioRun {
    pub report: ReplayReport,
    pub budget: BudgetState,
    pub trained: Option<Trained>,
}

/// Trains (where needed) and replays one scenario on `log`. Accounting always
/// uses the original campaign table, so reports compare across scenarios.
pub fn run_scenario(
    log: &[Request],
    campaigns: &CampaignTable,
    config: &ProblemConfig,
    scenario: &Scenario,
    hyper: &TrainerConfig,
    fingerprint: &str,
) -> Result<ScenarioRun> {
    let table = policy_table(campaigns, scenario.goal_override);
    let trained = match scenario.policy {
        PolicyKind::Lp => {
            let baseline = ghp_baseline(log, &table, config);
            let targets = resolve_targets(config, &baseline, &scenario.uplift);
            Some(train(log, &table, &targets, hyper)?)
        }
        _ => None,
    };
    let policy = build_policy(
        scenario.policy,
        log,
        &table,
        config,
        trained.as_ref().map(|t| &t.duals),
    )?;
    let mut run = replay(
        log,
        campaigns,
        policy.as_ref(),
        Accounting::Expected,
        fingerprint,
    );
    run.report.policy = scenario.name.clone();
    Ok(ScenarioRun {
        report: run.report,
        budget: run.budget,
        trained,
    })
}
