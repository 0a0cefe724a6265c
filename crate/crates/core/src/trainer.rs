//! Iterative dual adjustment: replay the training log with the dual-price
//! policy, then move every price along its normalized constraint violation.
//!
//! Budgets are not enforced during these replays, so the measured spend is the
//! demand the prices themselves induce.

use log::warn;
use serde::{Deserialize, Serialize};

use crate::io::TraceEntry;
use crate::model::{CampaignTable, DualParams, ProblemConfig, Request};
use crate::policy::{DualPolicy, LpOptions};
use crate::replay::{replay, Accounting};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainerConfig {
    pub epochs: usize,
    /// Initial step for the budget prices.
    pub step_alpha: f64,
    /// Initial step for the click price.
    pub step_gamma: f64,
    /// Initial step for the conversion price.
    pub step_delta: f64,
    /// Steps shrink as `step / (1 + decay * epoch)`.
    pub decay: f64,
    /// Largest relative overspend or shortfall accepted as converged.
    pub tolerance: f64,
    /// Per-price step adaptation: shrink on sign change, grow otherwise.
    pub adaptive: bool,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            epochs: 300,
            step_alpha: 0.5,
            step_gamma: 2.0,
            step_delta: 20.0,
            decay: 0.02,
            tolerance: 0.01,
            adaptive: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    pub duals: DualParams,
    pub trace: Vec<TraceEntry>,
    pub converged: bool,
    /// Epoch whose prices were returned.
    pub epoch: usize,
    /// Prices after the final update.
    pub last: DualParams,
}

/// Violations measured in one epoch.
#[derive(Clone, Debug)]
struct Epoch {
    duals: DualParams,
    entry: TraceEntry,
    /// Signed relative budget violation per campaign; `None` for zero budgets.
    budget_gap: Vec<Option<f64>>,
    click_gap: f64,
    conversion_gap: f64,
}

impl Epoch {
    fn enforced_shortfall(&self) -> f64 {
        self.entry
            .enforced_click_shortfall
            .max(self.entry.enforced_conversion_shortfall)
    }

    /// Feasible within `tol`, and every positive price sits on a constraint
    /// that is tight within `tol`. Without the second condition a price that
    /// switches a campaign off entirely would count as converged.
    fn within(&self, tol: f64) -> bool {
        let feasible = self.entry.max_overspend <= tol
            && self.entry.click_shortfall <= tol
            && self.entry.conversion_shortfall <= tol
            && self.enforced_shortfall() <= tol;
        let tight = |price: f64, gap: f64| price <= 0.0 || gap.abs() <= tol;
        let slack_ok = self
            .duals
            .alpha
            .iter()
            .zip(&self.budget_gap)
            .all(|(&a, gap)| gap.is_none_or(|g| tight(a, g)))
            && tight(self.duals.gamma, self.click_gap)
            && tight(self.duals.delta, self.conversion_gap);
        feasible && slack_ok
    }
}

fn relative_gap(target: f64, achieved: f64) -> f64 {
    if target > 0.0 {
        (target - achieved) / target
    } else {
        0.0
    }
}

fn evaluate(
    log: &[Request],
    campaigns: &CampaignTable,
    config: &ProblemConfig,
    duals: &DualParams,
    epoch: usize,
) -> Epoch {
    let policy = |filter_exhausted| DualPolicy {
        campaigns,
        config,
        duals: duals.clone(),
        options: LpOptions {
            filter_exhausted,
            ..LpOptions::default()
        },
    };
    let run = replay(log, campaigns, &policy(false), Accounting::Expected, "");
    let enforced = replay(log, campaigns, &policy(true), Accounting::Expected, "");
    let budget_gap: Vec<Option<f64>> = campaigns
        .iter()
        .map(|(idx, c)| (c.budget > 0.0).then(|| (run.budget.spent(idx) - c.budget) / c.budget))
        .collect();
    let overspends = budget_gap.iter().flatten().map(|g| g.max(0.0));
    let overspend: f64 = overspends.clone().sum();
    let max_overspend = overspends.fold(0.0, f64::max);
    let click_gap = relative_gap(config.t_cy, run.report.goal_clicks());
    let conversion_gap = relative_gap(config.t_vy, run.report.goal_conversions());
    Epoch {
        duals: duals.clone(),
        entry: TraceEntry {
            epoch,
            overspend,
            max_overspend,
            click_shortfall: click_gap.max(0.0),
            conversion_shortfall: conversion_gap.max(0.0),
            revenue: run.report.totals.rev,
            enforced_click_shortfall: relative_gap(config.t_cy, enforced.report.goal_clicks())
                .max(0.0),
            enforced_conversion_shortfall: relative_gap(
                config.t_vy,
                enforced.report.goal_conversions(),
            )
            .max(0.0),
            enforced_revenue: campaigns
                .iter()
                .map(|(idx, c)| enforced.budget.spent(idx).min(c.budget))
                .sum(),
            gamma: duals.gamma,
            delta: duals.delta,
        },
        budget_gap,
        click_gap,
        conversion_gap,
    }
}

/// Runs up to `hyper.epochs` replays from all-zero prices and moves each price
/// along its relative constraint violation. Every epoch is scored twice: once
/// without budget enforcement (the signal for the update) and once with the
/// exhausted-campaign filter on, the way the prices are used in production.
///
/// Stops at the first epoch whose overspends and shortfalls are all within
/// `hyper.tolerance` under both replays. Otherwise returns the epoch with the
/// highest enforced revenue among those whose enforced goal shortfalls are
/// within tolerance, or the smallest enforced shortfall when none are. Enforced
/// revenue counts spend only up to each budget, so the charge that overshoots
/// a budget earns an iterate nothing.
/// Zero-budget campaigns keep a zero price; the online budget filter already
/// excludes them.
pub fn train_iterative(
    log: &[Request],
    campaigns: &CampaignTable,
    config: &ProblemConfig,
    hyper: &TrainerConfig,
) -> TrainOutcome {
    let n = campaigns.len();
    let mut duals = DualParams::zeros(n);
    let mut steps: Vec<f64> = vec![hyper.step_alpha; n];
    steps.extend([hyper.step_gamma, hyper.step_delta]);
    let caps = steps.clone();
    let mut last_sign = vec![0.0f64; n + 2];
    let mut history: Vec<Epoch> = Vec::with_capacity(hyper.epochs);
    for epoch in 0..hyper.epochs.max(1) {
        let e = evaluate(log, campaigns, config, &duals, epoch);
        if e.within(hyper.tolerance) {
            let duals = e.duals.clone();
            history.push(e);
            return TrainOutcome {
                last: duals.clone(),
                duals,
                trace: history.into_iter().map(|e| e.entry).collect(),
                converged: true,
                epoch,
            };
        }
        let scale = if hyper.adaptive {
            1.0
        } else {
            1.0 / (1.0 + hyper.decay * epoch as f64)
        };
        let mut step = |slot: usize, gap: f64| {
            if hyper.adaptive {
                let sign = gap.signum();
                let factor = if sign * last_sign[slot] < 0.0 {
                    0.5
                } else {
                    1.1
                };
                steps[slot] = (steps[slot] * factor).min(caps[slot]);
                last_sign[slot] = sign;
            }
            steps[slot] * scale * gap
        };
        for (k, gap) in e.budget_gap.iter().enumerate() {
            if let Some(gap) = gap {
                let a = &mut duals.alpha[k];
                *a = (*a + step(k, *gap)).max(0.0);
            }
        }
        if config.t_cy > 0.0 {
            duals.gamma = (duals.gamma + step(n, e.click_gap)).max(0.0);
        }
        if config.t_vy > 0.0 {
            duals.delta = (duals.delta + step(n + 1, e.conversion_gap)).max(0.0);
        }
        history.push(e);
    }
    let feasible = history
        .iter()
        .filter(|e| e.enforced_shortfall() <= hyper.tolerance)
        .max_by(|a, b| {
            a.entry
                .enforced_revenue
                .total_cmp(&b.entry.enforced_revenue)
                .then(b.entry.epoch.cmp(&a.entry.epoch))
        });
    let best = feasible.unwrap_or_else(|| {
        history
            .iter()
            .min_by(|a, b| a.enforced_shortfall().total_cmp(&b.enforced_shortfall()))
            .expect("at least one epoch")
    });
    warn!(
        "dual trainer did not converge in {} epochs; returning epoch {} (overspend {:.4}, click shortfall {:.4}, conversion shortfall {:.4})",
        hyper.epochs,
        best.entry.epoch,
        best.entry.overspend,
        best.entry.enforced_click_shortfall,
        best.entry.enforced_conversion_shortfall
    );
    TrainOutcome {
        duals: best.duals.clone(),
        epoch: best.entry.epoch,
        converged: false,
        last: duals.clone(),
        trace: history.into_iter().map(|e| e.entry).collect(),
    }
}
