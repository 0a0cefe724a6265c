//! Allocation policies behind one decision interface: the greedy baseline
//! (serve until the budget runs out), optimized throttling (per-campaign value
//! thresholds fitted offline) and the dual-price policy.

use std::fmt;
use std::str::FromStr;

use serde::Serialize;

use crate::auction::{price_landscape, price_selection, PricedEntry, Slate};
use crate::error::{Error, Result};
use crate::model::{
    CampaignIdx, CampaignTable, Candidate, DualParams, Goal, ProblemConfig, Request,
};
use crate::selector::{degeneracy_jitter, score_ads, select_fast};

/// Cumulative spend per campaign. A campaign is exhausted once its spend
/// reaches its budget.
#[derive(Clone, Debug, PartialEq)]
pub struct BudgetState {
    budgets: Vec<f64>,
    spent: Vec<f64>,
    spent_before_last: Vec<f64>,
    largest_charge: Vec<f64>,
}

impl BudgetState {
    pub fn new(campaigns: &CampaignTable) -> Self {
        let n = campaigns.len();
        Self {
            budgets: campaigns.campaigns().iter().map(|c| c.budget).collect(),
            spent: vec![0.0; n],
            spent_before_last: vec![0.0; n],
            largest_charge: vec![0.0; n],
        }
    }

    pub fn budget(&self, idx: CampaignIdx) -> f64 {
        self.budgets[idx.0]
    }

    pub fn spent(&self, idx: CampaignIdx) -> f64 {
        self.spent[idx.0]
    }

    pub fn is_exhausted(&self, idx: CampaignIdx) -> bool {
        self.spent[idx.0] >= self.budgets[idx.0]
    }

    pub fn exhausted(&self) -> impl Iterator<Item = CampaignIdx> + '_ {
        (0..self.spent.len())
            .map(CampaignIdx)
            .filter(|&i| self.is_exhausted(i))
    }

    pub fn charge(&mut self, idx: CampaignIdx, amount: f64) {
        debug_assert!(amount >= 0.0);
        let k = idx.0;
        self.spent_before_last[k] = self.spent[k];
        self.spent[k] += amount;
        self.largest_charge[k] = self.largest_charge[k].max(amount);
    }

    /// Spend just before the most recent charge.
    pub fn spent_before_last_charge(&self, idx: CampaignIdx) -> f64 {
        self.spent_before_last[idx.0]
    }

    pub fn largest_charge(&self, idx: CampaignIdx) -> f64 {
        self.largest_charge[idx.0]
    }

    pub fn len(&self) -> usize {
        self.spent.len()
    }

    pub fn is_empty(&self) -> bool {
        self.spent.is_empty()
    }

    /// Campaigns whose spend breaks the one-decision overshoot bound, or whose
    /// spend already exceeded the budget before their final charge.
    pub fn feasibility_violations(&self) -> Vec<CampaignIdx> {
        (0..self.len())
            .map(CampaignIdx)
            .filter(|&i| {
                let k = i.0;
                let over = self.spent[k] - self.budgets[k];
                let overshoot_ok = over <= self.largest_charge[k];
                let pre_final_ok =
                    self.spent_before_last[k] <= self.budgets[k] || self.largest_charge[k] == 0.0;
                !(overshoot_ok && pre_final_ok)
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Decision {
    pub request_id: u64,
    pub slate: Slate,
}

impl Decision {
    pub fn empty(request_id: u64) -> Self {
        Self {
            request_id,
            slate: Slate::default(),
        }
    }
}

pub trait Policy {
    fn name(&self) -> &str;
    fn decide(&self, request: &Request, budget: &BudgetState) -> Decision;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum PolicyKind {
    Ghp,
    Ot,
    Lp,
}

impl FromStr for PolicyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ghp" => Ok(Self::Ghp),
            "ot" => Ok(Self::Ot),
            "lp" => Ok(Self::Lp),
            other => Err(Error::Invalid(format!(
                "unknown policy {other:?} (expected ghp, ot or lp)"
            ))),
        }
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Ghp => "ghp",
            Self::Ot => "ot",
            Self::Lp => "lp",
        })
    }
}

fn take_prefix(
    landscape: &[Candidate],
    keep: impl Fn(usize, &Candidate) -> bool,
    config: &ProblemConfig,
) -> Slate {
    let indices: Vec<usize> = landscape
        .iter()
        .enumerate()
        .filter(|&(i, c)| keep(i, c))
        .map(|(i, _)| i)
        .take(config.slots)
        .collect();
    price_selection(landscape, &indices, config).expect("prefix never exceeds slots")
}

/// Greedy: the first `slots` non-exhausted ads in landscape order.
pub fn ghp_decide(request: &Request, budget: &BudgetState, config: &ProblemConfig) -> Decision {
    Decision {
        request_id: request.id,
        slate: take_prefix(
            &request.landscape,
            |_, c| !budget.is_exhausted(c.campaign),
            config,
        ),
    }
}

pub struct GreedyPolicy<'a> {
    pub config: &'a ProblemConfig,
}

impl Policy for GreedyPolicy<'_> {
    fn name(&self) -> &str {
        "ghp"
    }

    fn decide(&self, request: &Request, budget: &BudgetState) -> Decision {
        ghp_decide(request, budget, self.config)
    }
}

/// Throttling value of an ad for a campaign pursuing `goal`: click rate for
/// click goals, conversions for conversion goals, revenue otherwise.
pub fn ot_value(entry: &PricedEntry, goal: Goal) -> f64 {
    match goal {
        Goal::Click => entry.eff_ctr,
        Goal::Conversion => entry.eff_cvn,
        Goal::None => entry.rpm,
    }
}

/// Per-campaign participation thresholds, indexed by [`CampaignIdx`].
/// `f64::INFINITY` means the campaign never participates.
#[derive(Clone, Debug, PartialEq)]
pub struct OtThresholds(pub Vec<f64>);

impl OtThresholds {
    pub fn get(&self, idx: CampaignIdx) -> f64 {
        self.0.get(idx.0).copied().unwrap_or(0.0)
    }
}

/// Fits throttling thresholds on a training log. Each campaign ranks its
/// requests by value (the campaign's goal metric at its original landscape
/// position) and admits them best-first while the accumulated expected cost
/// stays within budget; the threshold is the value of the last admitted
/// request.
pub fn ot_train(
    log: &[Request],
    campaigns: &CampaignTable,
    config: &ProblemConfig,
) -> OtThresholds {
    let mut per_campaign: Vec<Vec<(f64, f64)>> = vec![Vec::new(); campaigns.len()];
    for request in log {
        for entry in price_landscape(&request.landscape, config) {
            let goal = campaigns.goal(entry.campaign);
            per_campaign[entry.campaign.0].push((ot_value(&entry, goal), entry.eff_cost));
        }
    }
    let thresholds = per_campaign
        .into_iter()
        .zip(campaigns.campaigns())
        .map(|(items, c)| fit_threshold(items, c.budget))
        .collect();
    OtThresholds(thresholds)
}

/// Threshold for one campaign from its `(value, expected cost)` pairs.
fn fit_threshold(mut items: Vec<(f64, f64)>, budget: f64) -> f64 {
    if budget <= 0.0 {
        return f64::INFINITY;
    }
    let demand: f64 = items.iter().map(|&(_, cost)| cost).sum();
    if demand <= budget {
        return 0.0;
    }
    // Stable sort keeps log order among equal values.
    items.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut spent = 0.0;
    let mut last = f64::INFINITY;
    for (value, cost) in items {
        spent += cost;
        if spent > budget {
            break;
        }
        last = value;
    }
    last
}

/// Drops exhausted campaigns and campaigns valuing this request below their
/// threshold, then serves the rest greedily.
pub fn ot_decide(
    request: &Request,
    thresholds: &OtThresholds,
    campaigns: &CampaignTable,
    budget: &BudgetState,
    config: &ProblemConfig,
) -> Decision {
    let priced = price_landscape(&request.landscape, config);
    Decision {
        request_id: request.id,
        slate: take_prefix(
            &request.landscape,
            |i, c| {
                !budget.is_exhausted(c.campaign)
                    && ot_value(&priced[i], campaigns.goal(c.campaign))
                        >= thresholds.get(c.campaign)
            },
            config,
        ),
    }
}

pub struct ThrottlePolicy<'a> {
    pub campaigns: &'a CampaignTable,
    pub config: &'a ProblemConfig,
    pub thresholds: OtThresholds,
}

impl Policy for ThrottlePolicy<'_> {
    fn name(&self) -> &str {
        "ot"
    }

    fn decide(&self, request: &Request, budget: &BudgetState) -> Decision {
        ot_decide(
            request,
            &self.thresholds,
            self.campaigns,
            budget,
            self.config,
        )
    }
}

/// How the emitted slate of the dual-price policy is priced.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum SlatePricing {
    /// Re-price the displayed ads as a fresh GSP slate, so the campaign is
    /// charged what the auction over the shown ads actually costs.
    #[default]
    Displayed,
    /// Keep the frozen landscape-position prices used for selection.
    Landscape,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LpOptions {
    /// Skip exhausted campaigns. Disabled when training or when comparing
    /// against the offline LP, which enforces budgets itself.
    pub filter_exhausted: bool,
    /// Add [`degeneracy_jitter`] to every score.
    pub jitter: bool,
    pub pricing: SlatePricing,
}

impl Default for LpOptions {
    fn default() -> Self {
        Self {
            filter_exhausted: true,
            jitter: false,
            pricing: SlatePricing::Displayed,
        }
    }
}

/// Dual-price decision: score every eligible ad, keep the top positive ones.
/// An empty result means no ads are displayed.
pub fn lp_decide(
    request: &Request,
    duals: &DualParams,
    campaigns: &CampaignTable,
    budget: &BudgetState,
    config: &ProblemConfig,
    options: &LpOptions,
) -> Decision {
    let mut kept = Vec::with_capacity(request.landscape.len());
    let mut eligible = Vec::with_capacity(request.landscape.len());
    for (i, c) in request.landscape.iter().enumerate() {
        if options.filter_exhausted && budget.is_exhausted(c.campaign) {
            continue;
        }
        kept.push(i);
        eligible.push(c.clone());
    }
    if eligible.is_empty() {
        return Decision::empty(request.id);
    }
    let mut scored = score_ads(&eligible, campaigns, duals, config);
    if options.jitter {
        for s in &mut scored {
            s.score += degeneracy_jitter(request.id, s.campaign);
        }
    }
    let chosen = select_fast(&scored, config.slots);
    let mut slate = match options.pricing {
        SlatePricing::Displayed => {
            price_selection(&eligible, &chosen, config).expect("selection within slots")
        }
        SlatePricing::Landscape => Slate {
            entries: chosen.iter().map(|&i| scored[i].entry.clone()).collect(),
        },
    };
    for e in &mut slate.entries {
        e.landscape_index = kept[e.landscape_index];
    }
    Decision {
        request_id: request.id,
        slate,
    }
}

pub struct DualPolicy<'a> {
    pub campaigns: &'a CampaignTable,
    pub config: &'a ProblemConfig,
    pub duals: DualParams,
    pub options: LpOptions,
}

impl Policy for DualPolicy<'_> {
    fn name(&self) -> &str {
        "lp"
    }

    fn decide(&self, request: &Request, budget: &BudgetState) -> Decision {
        lp_decide(
            request,
            &self.duals,
            self.campaigns,
            budget,
            self.config,
            &self.options,
        )
    }
}
