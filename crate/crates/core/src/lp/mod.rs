//! Offline slate LP and its dual.
//!
//! Every request contributes one column per non-empty order-preserving slate
//! of at most `slots` ads, priced exactly as displayed. The primal maximizes
//! expected revenue subject to campaign budgets, at most one slate per
//! request, and optional aggregate click and conversion floors for the click-
//! and conversion-goal campaigns. The dual prices of those rows are the
//! `alpha`, `beta`, `gamma`, `delta` consumed by the online policy (all but
//! `beta`).

pub mod simplex;

use serde::Serialize;

use crate::auction::price_selection;
use crate::error::{Error, Result};
use crate::model::{CampaignIdx, CampaignTable, DualParams, Goal, ProblemConfig, Request};
use crate::selector::{degeneracy_jitter, slate_count};

use simplex::{LinearProgram, Row, RowKind, Status};

/// Largest LP (in slate columns) [`build_offline_lp`] will enumerate.
pub const OFFLINE_SLATE_LIMIT: u128 = 100_000;

/// Default relative tolerance for optimality checks.
pub const CS_TOLERANCE: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct SlateColumn {
    /// Position of the request in the log.
    pub request: usize,
    /// Landscape indices of the displayed ads.
    pub ads: Vec<usize>,
    pub revenue: f64,
    /// Expected cost per campaign in the slate.
    pub costs: Vec<(CampaignIdx, f64)>,
    /// Expected clicks of click-goal campaigns in the slate.
    pub goal_clicks: f64,
    /// Expected conversions of conversion-goal campaigns in the slate.
    pub goal_conversions: f64,
    /// Sum of the slate's per-ad [`degeneracy_jitter`] terms.
    pub jitter: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OfflineLp {
    pub columns: Vec<SlateColumn>,
    pub n_requests: usize,
    pub budgets: Vec<f64>,
    pub t_cy: f64,
    pub t_vy: f64,
}

pub fn build_offline_lp(
    log: &[Request],
    campaigns: &CampaignTable,
    config: &ProblemConfig,
) -> Result<OfflineLp> {
    let count: u128 = log
        .iter()
        .map(|r| slate_count(r.landscape.len(), config.slots) - 1)
        .sum();
    if count > OFFLINE_SLATE_LIMIT {
        return Err(Error::EnumerationGuard {
            count,
            limit: OFFLINE_SLATE_LIMIT,
            hint: "the iterative trainer",
        });
    }
    let mut columns = Vec::with_capacity(count as usize);
    let mut ads = Vec::with_capacity(config.slots);
    for (i, request) in log.iter().enumerate() {
        enumerate_slates(
            request.landscape.len(),
            config.slots,
            0,
            &mut ads,
            &mut |ads| {
                let slate = price_selection(&request.landscape, ads, config)
                    .expect("enumeration respects slot count");
                let mut goal_clicks = 0.0;
                let mut goal_conversions = 0.0;
                for e in &slate.entries {
                    match campaigns.goal(e.campaign) {
                        Goal::Click => goal_clicks += e.eff_ctr,
                        Goal::Conversion => goal_conversions += e.eff_cvn,
                        Goal::None => {}
                    }
                }
                columns.push(SlateColumn {
                    request: i,
                    ads: ads.to_vec(),
                    revenue: slate.revenue(),
                    costs: slate
                        .entries
                        .iter()
                        .map(|e| (e.campaign, e.eff_cost))
                        .collect(),
                    goal_clicks,
                    goal_conversions,
                    jitter: slate
                        .entries
                        .iter()
                        .map(|e| degeneracy_jitter(request.id, e.campaign))
                        .sum(),
                });
            },
        );
    }
    Ok(OfflineLp {
        columns,
        n_requests: log.len(),
        budgets: campaigns.campaigns().iter().map(|c| c.budget).collect(),
        t_cy: config.t_cy,
        t_vy: config.t_vy,
    })
}

fn enumerate_slates(
    n: usize,
    slots: usize,
    start: usize,
    current: &mut Vec<usize>,
    emit: &mut dyn FnMut(&[usize]),
) {
    for i in start..n {
        current.push(i);
        emit(current);
        if current.len() < slots {
            enumerate_slates(n, slots, i + 1, current, emit);
        }
        current.pop();
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

/// Best aggregate levels reachable under the budgets alone.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Attainable {
    pub goal_clicks: f64,
    pub goal_conversions: f64,
}

/// Requested click/conversion floors next to the best levels reachable.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct InfeasibilityReport {
    pub target_clicks: f64,
    pub target_conversions: f64,
    pub attainable: Attainable,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LpSolution {
    pub status: LpStatus,
    /// Fractional assignment per column of the LP.
    pub primal: Vec<f64>,
    pub objective: f64,
    pub duals: DualParams,
    /// Per-request shadow prices.
    pub beta: Vec<f64>,
    /// Filled in when the click/conversion floors cannot be met.
    pub attainable: Option<Attainable>,
}

impl OfflineLp {
    fn program(&self, objective: impl Fn(&SlateColumn) -> f64, with_floors: bool) -> LinearProgram {
        let n_campaigns = self.budgets.len();
        let mut rows: Vec<Row> = self
            .budgets
            .iter()
            .map(|&b| Row {
                coeffs: Vec::new(),
                kind: RowKind::Le,
                rhs: b,
            })
            .collect();
        rows.extend((0..self.n_requests).map(|_| Row {
            coeffs: Vec::new(),
            kind: RowKind::Le,
            rhs: 1.0,
        }));
        for (j, col) in self.columns.iter().enumerate() {
            for &(k, cost) in &col.costs {
                rows[k.0].coeffs.push((j, cost));
            }
            rows[n_campaigns + col.request].coeffs.push((j, 1.0));
        }
        if with_floors {
            if self.t_cy > 0.0 {
                rows.push(Row {
                    coeffs: self
                        .columns
                        .iter()
                        .enumerate()
                        .map(|(j, c)| (j, c.goal_clicks))
                        .collect(),
                    kind: RowKind::Ge,
                    rhs: self.t_cy,
                });
            }
            if self.t_vy > 0.0 {
                rows.push(Row {
                    coeffs: self
                        .columns
                        .iter()
                        .enumerate()
                        .map(|(j, c)| (j, c.goal_conversions))
                        .collect(),
                    kind: RowKind::Ge,
                    rhs: self.t_vy,
                });
            }
        }
        LinearProgram {
            objective: self.columns.iter().map(objective).collect(),
            rows,
        }
    }

    /// Dual-adjusted value of a column, the right-hand side of its dual row.
    pub fn column_score(&self, j: usize, duals: &DualParams) -> f64 {
        let col = &self.columns[j];
        col.revenue
            - col
                .costs
                .iter()
                .map(|&(k, c)| duals.alpha(k) * c)
                .sum::<f64>()
            + duals.gamma * col.goal_clicks
            + duals.delta * col.goal_conversions
    }

    pub fn primal_objective(&self, x: &[f64]) -> f64 {
        self.columns.iter().zip(x).map(|(c, v)| c.revenue * v).sum()
    }

    pub fn spend(&self, x: &[f64]) -> Vec<f64> {
        let mut spend = vec![0.0; self.budgets.len()];
        for (col, &v) in self.columns.iter().zip(x) {
            for &(k, c) in &col.costs {
                spend[k.0] += c * v;
            }
        }
        spend
    }

    pub fn goal_totals(&self, x: &[f64]) -> (f64, f64) {
        self.columns
            .iter()
            .zip(x)
            .fold((0.0, 0.0), |(clk, cvn), (c, v)| {
                (clk + c.goal_clicks * v, cvn + c.goal_conversions * v)
            })
    }

    pub fn request_load(&self, x: &[f64]) -> Vec<f64> {
        let mut load = vec![0.0; self.n_requests];
        for (col, &v) in self.columns.iter().zip(x) {
            load[col.request] += v;
        }
        load
    }

    /// Feasibility of an assignment with absolute slack `tol`.
    pub fn is_primal_feasible(&self, x: &[f64], tol: f64) -> bool {
        if x.len() != self.columns.len() || x.iter().any(|&v| v < -tol) {
            return false;
        }
        let spend_ok = self
            .spend(x)
            .iter()
            .zip(&self.budgets)
            .all(|(s, b)| *s <= b + tol);
        let load_ok = self.request_load(x).iter().all(|&l| l <= 1.0 + tol);
        let (clk, cvn) = self.goal_totals(x);
        spend_ok && load_ok && clk >= self.t_cy - tol && cvn >= self.t_vy - tol
    }

    pub fn dual_objective(&self, duals: &DualParams, beta: &[f64]) -> f64 {
        let budget_term: f64 = self
            .budgets
            .iter()
            .enumerate()
            .map(|(k, b)| duals.alpha(CampaignIdx(k)) * b)
            .sum();
        budget_term + beta.iter().sum::<f64>() - duals.gamma * self.t_cy - duals.delta * self.t_vy
    }

    /// Smallest `beta` that makes `duals` dual feasible.
    pub fn tight_beta(&self, duals: &DualParams) -> Vec<f64> {
        let mut beta = vec![0.0f64; self.n_requests];
        for j in 0..self.columns.len() {
            let r = self.columns[j].request;
            beta[r] = beta[r].max(self.column_score(j, duals));
        }
        beta
    }

    pub fn is_dual_feasible(&self, duals: &DualParams, beta: &[f64], tol: f64) -> bool {
        duals.is_dual_feasible()
            && beta.iter().all(|&b| b >= 0.0)
            && (0..self.columns.len())
                .all(|j| beta[self.columns[j].request] >= self.column_score(j, duals) - tol)
    }
}

/// Largest relative residuals of the optimality conditions.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct OptimalityResiduals {
    /// Positive columns whose dual row is not tight.
    pub column: f64,
    /// Priced budgets that are not spent exactly.
    pub budget: f64,
    /// Priced requests that are not fully assigned.
    pub request: f64,
    /// Priced click/conversion floors that are not met exactly.
    pub floor: f64,
    /// Violated dual rows.
    pub dual_infeasibility: f64,
    /// Primal/dual objective gap.
    pub gap: f64,
}

impl OptimalityResiduals {
    pub fn max(&self) -> f64 {
        [
            self.column,
            self.budget,
            self.request,
            self.floor,
            self.dual_infeasibility,
            self.gap,
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }
}

fn relative(residual: f64, scale: f64) -> f64 {
    residual.abs() / scale.abs().max(1e-9)
}

impl LpSolution {
    /// Complementary-slackness and duality-gap residuals; `eps` decides when a
    /// primal or dual value counts as positive.
    pub fn residuals(&self, lp: &OfflineLp, eps: f64) -> OptimalityResiduals {
        let mut res = OptimalityResiduals::default();
        for (j, &x) in self.primal.iter().enumerate() {
            let col = &lp.columns[j];
            let score = lp.column_score(j, &self.duals);
            let beta = self.beta[col.request];
            let scale = beta.abs().max(col.revenue.abs());
            let slack = beta - score;
            if x > eps {
                res.column = res.column.max(relative(slack, scale));
            }
            if slack < 0.0 {
                res.dual_infeasibility = res.dual_infeasibility.max(relative(slack, scale));
            }
        }
        for (k, spend) in lp.spend(&self.primal).into_iter().enumerate() {
            if self.duals.alpha[k] > eps {
                let b = lp.budgets[k];
                res.budget = res.budget.max(relative(b - spend, b));
            }
        }
        for (i, load) in lp.request_load(&self.primal).into_iter().enumerate() {
            if self.beta[i] > eps {
                res.request = res.request.max(relative(1.0 - load, 1.0));
            }
        }
        let (clk, cvn) = lp.goal_totals(&self.primal);
        if self.duals.gamma > eps {
            res.floor = res.floor.max(relative(clk - lp.t_cy, lp.t_cy));
        }
        if self.duals.delta > eps {
            res.floor = res.floor.max(relative(cvn - lp.t_vy, lp.t_vy));
        }
        let dual = lp.dual_objective(&self.duals, &self.beta);
        res.gap = relative(dual - self.objective, self.objective.abs().max(dual.abs()));
        res
    }
}

/// Solves the offline LP exactly. Unreachable click/conversion floors give an
/// `Infeasible` solution carrying the attainable levels.
pub fn solve_exact(lp: &OfflineLp) -> Result<LpSolution> {
    solve_with(lp, |c| c.revenue)
}

/// Solves the offline LP with every column's revenue shifted by its
/// [`SlateColumn::jitter`]. Under pay-per-click a campaign whose budget binds
/// usually gets a price of exactly 1, which leaves all of its ads at score 0;
/// the shift breaks those ties in the LP the same way the jittered online
/// rule breaks them, so the online choices can follow the LP's. The reported
/// objective is the unshifted revenue.
pub fn solve_perturbed(lp: &OfflineLp) -> Result<LpSolution> {
    solve_with(lp, |c| c.revenue + c.jitter)
}

fn solve_with(lp: &OfflineLp, objective: impl Fn(&SlateColumn) -> f64) -> Result<LpSolution> {
    let n_campaigns = lp.budgets.len();
    let program = lp.program(objective, true);
    let sol = simplex::solve(&program)?;
    match sol.status {
        Status::Optimal => {
            let prices = &sol.shadow_prices;
            let clamp = |v: f64| if v.abs() < 1e-13 { 0.0 } else { v };
            let alpha = prices[..n_campaigns]
                .iter()
                .map(|&v| clamp(v).max(0.0))
                .collect();
            let beta = prices[n_campaigns..n_campaigns + lp.n_requests]
                .iter()
                .map(|&v| clamp(v).max(0.0))
                .collect();
            let mut floor = n_campaigns + lp.n_requests;
            let mut gamma = 0.0;
            let mut delta = 0.0;
            if lp.t_cy > 0.0 {
                gamma = clamp(-prices[floor]).max(0.0);
                floor += 1;
            }
            if lp.t_vy > 0.0 {
                delta = clamp(-prices[floor]).max(0.0);
            }
            Ok(LpSolution {
                status: LpStatus::Optimal,
                objective: lp.primal_objective(&sol.x),
                primal: sol.x,
                duals: DualParams {
                    alpha,
                    gamma,
                    delta,
                },
                beta,
                attainable: None,
            })
        }
        Status::Infeasible => {
            let max_clicks = simplex::solve(&lp.program(|c| c.goal_clicks, false))?;
            let max_conversions = simplex::solve(&lp.program(|c| c.goal_conversions, false))?;
            Ok(LpSolution {
                status: LpStatus::Infeasible,
                primal: vec![0.0; lp.columns.len()],
                objective: 0.0,
                duals: DualParams::zeros(n_campaigns),
                beta: vec![0.0; lp.n_requests],
                attainable: Some(Attainable {
                    goal_clicks: max_clicks.objective,
                    goal_conversions: max_conversions.objective,
                }),
            })
        }
        Status::Unbounded => Ok(LpSolution {
            status: LpStatus::Unbounded,
            primal: vec![0.0; lp.columns.len()],
            objective: f64::INFINITY,
            duals: DualParams::zeros(n_campaigns),
            beta: vec![0.0; lp.n_requests],
            attainable: None,
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Campaign, Candidate};

    fn cand(c: usize, ctr: f64, bid: f64) -> Candidate {
        Candidate {
            campaign: CampaignIdx(c),
            base_ctr: ctr,
            cvr_given_click: 0.2,
            bid_price: bid,
        }
    }

    fn table(budgets: &[f64]) -> CampaignTable {
        CampaignTable::new(
            budgets
                .iter()
                .enumerate()
                .map(|(i, &b)| Campaign::new(format!("c{i}"), b, 1.0, Goal::Click))
                .collect(),
        )
        .unwrap()
    }

    fn request(id: u64, cands: Vec<Candidate>) -> Request {
        Request {
            id,
            timestamp: 0,
            landscape: cands,
        }
    }

    #[test]
    fn column_counts() {
        let two = vec![request(0, vec![cand(0, 0.1, 1.0), cand(1, 0.1, 1.0)])];
        let lp =
            build_offline_lp(&two, &table(&[1.0, 1.0]), &ProblemConfig::with_slots(1)).unwrap();
        assert_eq!(lp.columns.len(), 2);
        let three = vec![request(
            0,
            vec![cand(0, 0.1, 1.0), cand(1, 0.1, 1.0), cand(2, 0.1, 1.0)],
        )];
        let lp = build_offline_lp(
            &three,
            &table(&[1.0, 1.0, 1.0]),
            &ProblemConfig::with_slots(2),
        )
        .unwrap();
        assert_eq!(lp.columns.len(), 6);
        let sizes: Vec<usize> = lp.columns.iter().map(|c| c.ads.len()).collect();
        assert_eq!(sizes.iter().filter(|&&s| s == 1).count(), 3);
        assert_eq!(sizes.iter().filter(|&&s| s == 2).count(), 3);
    }

    #[test]
    fn guard_points_to_iterative_trainer() {
        let wide: Vec<Candidate> = (0..30).map(|c| cand(c, 0.1, 1.0)).collect();
        let log: Vec<Request> = (0..30).map(|i| request(i, wide.clone())).collect();
        let err = build_offline_lp(&log, &table(&[1.0; 30]), &ProblemConfig::with_slots(3));
        assert!(matches!(err, Err(Error::EnumerationGuard { .. })));
    }

    #[test]
    fn single_ad_unconstrained() {
        let mut cfg = ProblemConfig::with_slots(1);
        cfg.reserve_price = 0.5;
        // sole bidder pays the reserve: revenue 0.1 * 0.5 = 0.05
        let log = vec![request(0, vec![cand(0, 0.1, 2.0)])];
        let lp = build_offline_lp(&log, &table(&[1e6]), &cfg).unwrap();
        let sol = solve_exact(&lp).unwrap();
        assert_eq!(sol.status, LpStatus::Optimal);
        assert!((sol.objective - 0.05).abs() < 1e-12);
        assert_eq!(sol.duals.alpha, vec![0.0]);
        assert!((sol.beta[0] - 0.05).abs() < 1e-12);
    }

    #[test]
    fn zero_budgets_allow_nothing() {
        let log = vec![
            request(0, vec![cand(0, 0.1, 2.0), cand(1, 0.05, 1.0)]),
            request(1, vec![cand(1, 0.2, 1.0), cand(0, 0.1, 1.0)]),
        ];
        let lp =
            build_offline_lp(&log, &table(&[0.0, 0.0]), &ProblemConfig::with_slots(2)).unwrap();
        let sol = solve_exact(&lp).unwrap();
        assert_eq!(sol.status, LpStatus::Optimal);
        assert!(sol.objective.abs() < 1e-12);
        assert!(sol.primal.iter().all(|&x| x.abs() < 1e-12));
    }

    #[test]
    fn unreachable_floor_is_infeasible_with_report() {
        let log = vec![request(0, vec![cand(0, 0.1, 2.0), cand(1, 0.05, 1.0)])];
        let mut cfg = ProblemConfig::with_slots(2);
        cfg.t_cy = 10.0;
        let lp = build_offline_lp(&log, &table(&[1e6, 1e6]), &cfg).unwrap();
        let sol = solve_exact(&lp).unwrap();
        assert_eq!(sol.status, LpStatus::Infeasible);
        let att = sol.attainable.unwrap();
        // Both ads shown: 0.1 * 1.0 + 0.05 * 0.6
        assert!((att.goal_clicks - 0.13).abs() < 1e-12);
    }

    #[test]
    fn binding_budget_prices_the_campaign() {
        // One campaign, two identical requests, budget for half of one.
        let log = vec![
            request(0, vec![cand(0, 0.1, 1.0), cand(1, 0.1, 0.5)]),
            request(1, vec![cand(0, 0.1, 1.0), cand(1, 0.1, 0.5)]),
        ];
        let lp =
            build_offline_lp(&log, &table(&[0.025, 1e6]), &ProblemConfig::with_slots(1)).unwrap();
        let sol = solve_exact(&lp).unwrap();
        assert_eq!(sol.status, LpStatus::Optimal);
        let res = sol.residuals(&lp, 1e-9);
        assert!(res.max() < CS_TOLERANCE, "{res:?}");
        assert!(lp.is_primal_feasible(&sol.primal, 1e-9));
        assert!(lp.is_dual_feasible(&sol.duals, &sol.beta, 1e-9));
    }
}
