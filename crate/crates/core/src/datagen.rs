//! Synthetic campaigns and request logs with a controllable budget tightness.
//!
//! Every random draw comes from one ChaCha8 stream seeded by `GenSpec::seed`,
//! so the same spec always yields byte-identical files.

use rand::seq::index::sample_weighted;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};

use crate::auction::price_selection;
use crate::error::{Error, Result};
use crate::io::campaign_id;
use crate::model::{
    Campaign, CampaignIdx, CampaignTable, Candidate, Goal, ProblemConfig, Request, SECONDS_PER_DAY,
};

/// Closed interval `[min, max]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Range<T> {
    pub min: T,
    pub max: T,
}

impl<T> Range<T> {
    pub const fn new(min: T, max: T) -> Self {
        Self { min, max }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BetaParams {
    pub a: f64,
    pub b: f64,
}

/// Share of campaigns per goal, in the order click, conversion, none.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GoalSplit {
    pub clk: f64,
    pub cvn: f64,
    pub none: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arrival {
    #[default]
    Uniform,
    /// `early_share` of the traffic arrives in the first three hours.
    Diurnal,
}

/// Seconds covered by the diurnal early window (six half-hour buckets).
pub const EARLY_WINDOW: u32 = 10_800;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenSpec {
    pub seed: u64,
    pub n_campaigns: usize,
    pub n_requests: usize,
    /// Ad slots per page.
    pub slots: usize,
    /// Candidates per landscape.
    pub landscape_size: Range<usize>,
    /// Multiplicative spread of budgets around each campaign's own demand
    /// (log-uniform).
    pub budget_spread: Range<f64>,
    /// Total unconstrained greedy spend divided by total budget.
    pub tightness: f64,
    /// Click bid per campaign (log-uniform).
    pub bid: Range<f64>,
    /// Relative retrieval frequency per campaign (log-uniform).
    pub popularity: Range<f64>,
    pub base_ctr: BetaParams,
    pub cvr_given_click: BetaParams,
    pub goal_split: GoalSplit,
    pub arrival: Arrival,
    pub early_share: f64,
}

impl Default for GenSpec {
    fn default() -> Self {
        Self {
            seed: 42,
            n_campaigns: 200,
            n_requests: 10_000,
            slots: 3,
            landscape_size: Range::new(3, 6),
            budget_spread: Range::new(0.5, 2.0),
            tightness: 2.0,
            bid: Range::new(0.2, 2.0),
            popularity: Range::new(1.0, 20.0),
            base_ctr: BetaParams { a: 2.0, b: 38.0 },
            cvr_given_click: BetaParams { a: 2.0, b: 18.0 },
            goal_split: GoalSplit {
                clk: 0.7,
                cvn: 0.3,
                none: 0.0,
            },
            arrival: Arrival::Uniform,
            early_share: 0.35,
        }
    }
}

impl GenSpec {
    /// The small fixture used throughout the tests: 4 campaigns, 5 requests,
    /// 2 slots, every landscape holding all 4 campaigns.
    pub fn micro() -> Self {
        Self {
            n_campaigns: 4,
            n_requests: 5,
            slots: 2,
            landscape_size: Range::new(4, 4),
            ..Self::default()
        }
    }

    pub fn problem_config(&self) -> ProblemConfig {
        ProblemConfig::with_slots(self.slots)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Invalid(msg.to_string()));
        let GoalSplit { clk, cvn, none } = self.goal_split;
        if [clk, cvn, none].iter().any(|f| !(0.0..=1.0).contains(f)) {
            return bad("goal_split fractions must lie in [0, 1]");
        }
        if (clk + cvn + none - 1.0).abs() > 1e-9 {
            return bad("goal_split fractions must sum to 1");
        }
        let classes = [clk, cvn, none].iter().filter(|&&f| f > 0.0).count();
        if self.n_campaigns < classes {
            return Err(Error::Invalid(format!(
                "{} campaigns cannot cover {classes} goal classes",
                self.n_campaigns
            )));
        }
        if self.slots == 0 {
            return bad("slots must be positive");
        }
        let sizes = self.landscape_size;
        if sizes.min == 0 || sizes.min > sizes.max {
            return bad("landscape_size must satisfy 0 < min <= max");
        }
        if self.n_requests > 0 && sizes.max > self.n_campaigns {
            return bad("landscape_size.max exceeds n_campaigns");
        }
        if self.n_requests > 0 && self.n_requests * sizes.max < self.n_campaigns {
            return bad("too few requests for every campaign to appear in a landscape");
        }
        for (name, r) in [
            ("budget_spread", self.budget_spread),
            ("bid", self.bid),
            ("popularity", self.popularity),
        ] {
            if !(r.min > 0.0 && r.min <= r.max && r.max.is_finite()) {
                return Err(Error::Invalid(format!(
                    "{name} must satisfy 0 < min <= max"
                )));
            }
        }
        if !(self.tightness > 0.0 && self.tightness.is_finite()) {
            return bad("tightness must be positive");
        }
        for p in [self.base_ctr, self.cvr_given_click] {
            if !(p.a > 0.0 && p.b > 0.0) {
                return bad("beta parameters must be positive");
            }
        }
        if !(0.0..=1.0).contains(&self.early_share) {
            return bad("early_share must lie in [0, 1]");
        }
        Ok(())
    }
}

/// Largest-remainder apportionment of `n` items to `fractions`; ties in the
/// remainder go to the earlier class.
pub fn apportion(n: usize, fractions: &[f64]) -> Vec<usize> {
    let quotas: Vec<f64> = fractions.iter().map(|f| f * n as f64).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let mut order: Vec<usize> = (0..fractions.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    let assigned: usize = counts.iter().sum();
    for &class in order.iter().take(n.saturating_sub(assigned)) {
        counts[class] += 1;
    }
    counts
}

fn log_uniform(rng: &mut ChaCha8Rng, r: Range<f64>) -> f64 {
    let (lo, hi) = (r.min.ln(), r.max.ln());
    (lo + rng.random::<f64>() * (hi - lo)).exp()
}

/// Generated campaigns and a log ordered by timestamp.
#[derive(Clone, Debug)]
pub struct Generated {
    pub campaigns: CampaignTable,
    pub requests: Vec<Request>,
}

pub fn generate(spec: &GenSpec) -> Result<Generated> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = spec.n_campaigns;

    let split = spec.goal_split;
    let counts = apportion(n, &[split.clk, split.cvn, split.none]);
    let mut goals: Vec<Goal> = [Goal::Click, Goal::Conversion, Goal::None]
        .iter()
        .zip(&counts)
        .flat_map(|(&g, &c)| std::iter::repeat_n(g, c))
        .collect();
    goals.shuffle(&mut rng);
    let bids: Vec<f64> = (0..n).map(|_| log_uniform(&mut rng, spec.bid)).collect();
    let popularity: Vec<f64> = (0..n)
        .map(|_| log_uniform(&mut rng, spec.popularity))
        .collect();
    let spread: Vec<f64> = (0..n)
        .map(|_| log_uniform(&mut rng, spec.budget_spread))
        .collect();

    let mut timestamps: Vec<u32> = (0..spec.n_requests)
        .map(|_| match spec.arrival {
            Arrival::Uniform => rng.random_range(0..SECONDS_PER_DAY),
            Arrival::Diurnal => {
                if rng.random::<f64>() < spec.early_share {
                    rng.random_range(0..EARLY_WINDOW)
                } else {
                    rng.random_range(EARLY_WINDOW..SECONDS_PER_DAY)
                }
            }
        })
        .collect();
    timestamps.sort_unstable();

    let ctr = Beta::new(spec.base_ctr.a, spec.base_ctr.b).expect("validated");
    let cvr = Beta::new(spec.cvr_given_click.a, spec.cvr_given_click.b).expect("validated");
    // Campaigns not yet retrieved anywhere; drained first so every campaign
    // appears in at least one landscape.
    let mut unseen: Vec<usize> = (0..n).collect();
    unseen.shuffle(&mut rng);
    let mut requests = Vec::with_capacity(spec.n_requests);
    for (i, &timestamp) in timestamps.iter().enumerate() {
        let size = rng.random_range(spec.landscape_size.min..=spec.landscape_size.max);
        let remaining = spec.n_requests - i;
        let forced = unseen.len().div_ceil(remaining).min(size);
        let mut members: Vec<usize> = unseen.split_off(unseen.len() - forced);
        let mut taken = vec![false; n];
        for &m in &members {
            taken[m] = true;
        }
        let extra = sample_weighted(
            &mut rng,
            n,
            |k| if taken[k] { 0.0 } else { popularity[k] },
            size - forced,
        )
        .expect("weights are finite and non-negative");
        members.extend(extra.iter());
        members.sort_unstable();
        let mut landscape: Vec<Candidate> = members
            .into_iter()
            .map(|k| Candidate {
                campaign: CampaignIdx(k),
                base_ctr: ctr.sample(&mut rng),
                cvr_given_click: cvr.sample(&mut rng),
                bid_price: bids[k],
            })
            .collect();
        // Stable sort keeps ascending campaign order among equal scores.
        landscape.sort_by(|a, b| b.rank_score().total_cmp(&a.rank_score()));
        requests.push(Request {
            id: i as u64,
            timestamp,
            landscape,
        });
    }

    // Budgets follow each campaign's unconstrained greedy spend, spread
    // log-uniformly, then scaled to the requested tightness. Campaigns never
    // displayed get the average budget so none starts at zero.
    let config = spec.problem_config();
    let mut demand = vec![0.0f64; n];
    for r in &requests {
        let top: Vec<usize> = (0..r.landscape.len().min(config.slots)).collect();
        let slate = price_selection(&r.landscape, &top, &config).expect("within slots");
        for e in &slate.entries {
            demand[e.campaign.0] += e.eff_cost;
        }
    }
    let total_demand: f64 = demand.iter().sum();
    let mean_demand = if n > 0 { total_demand / n as f64 } else { 0.0 };
    let raw: Vec<f64> = (0..n)
        .map(|k| {
            let base = if demand[k] > 0.0 {
                demand[k]
            } else {
                mean_demand
            };
            base * spread[k]
        })
        .collect();
    let raw_total: f64 = raw.iter().sum();
    let scale = if raw_total > 0.0 {
        total_demand / spec.tightness / raw_total
    } else {
        0.0
    };
    let campaigns = CampaignTable::new(
        (0..n)
            .map(|k| Campaign::new(campaign_id(k), raw[k] * scale, bids[k], goals[k]))
            .collect(),
    )?;
    Ok(Generated {
        campaigns,
        requests,
    })
}
