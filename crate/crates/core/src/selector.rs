//! Slate choice for one request. Every ad gets a fixed dual-adjusted score
//! computed at its original landscape position; because the slate score is
//! the sum of its ads' scores, the best slate is the top positive-scoring
//! ads, which [`select_fast`] finds with one sort. [`select_exhaustive`]
//! enumerates every order-preserving subset and is kept as the oracle.

use crate::auction::{price_landscape, PricedEntry};
use crate::error::{Error, Result};
use crate::model::{CampaignIdx, CampaignTable, Candidate, DualParams, Goal, ProblemConfig};

/// Maximum number of slates [`select_exhaustive`] will visit.
pub const EXHAUSTIVE_LIMIT: u128 = 1_000_000;

#[derive(Clone, Debug, PartialEq)]
pub struct ScoredAd {
    pub landscape_index: usize,
    pub campaign: CampaignIdx,
    /// `rpm - alpha*cost + gamma*[click goal]*ctr + delta*[conversion goal]*cvn`
    pub score: f64,
    /// Landscape-position pricing the score was computed from.
    pub entry: PricedEntry,
}

/// Dual-adjusted value of one priced ad.
pub fn ad_score(entry: &PricedEntry, goal: Goal, duals: &DualParams) -> f64 {
    let goal_term = match goal {
        Goal::Click => duals.gamma * entry.eff_ctr,
        Goal::Conversion => duals.delta * entry.eff_cvn,
        Goal::None => 0.0,
    };
    entry.rpm - duals.alpha(entry.campaign) * entry.eff_cost + goal_term
}

pub fn score_ads(
    landscape: &[Candidate],
    campaigns: &CampaignTable,
    duals: &DualParams,
    config: &ProblemConfig,
) -> Vec<ScoredAd> {
    price_landscape(landscape, config)
        .into_iter()
        .map(|entry| ScoredAd {
            landscape_index: entry.landscape_index,
            campaign: entry.campaign,
            score: ad_score(&entry, campaigns.goal(entry.campaign), duals),
            entry,
        })
        .collect()
}

/// Deterministic jitter in `[-1e-9, 1e-9]` keyed by request and campaign,
/// used to break exact score ties when replaying LP duals.
pub fn degeneracy_jitter(request_id: u64, campaign: CampaignIdx) -> f64 {
    // splitmix64 finalizer
    let mut z = request_id
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add((campaign.0 as u64).wrapping_mul(0xD1B5_4A32_D192_ED03))
        .wrapping_add(0x2545_F491_4F6C_DD1D);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^= z >> 31;
    let unit = (z >> 11) as f64 / (1u64 << 53) as f64;
    (2.0 * unit - 1.0) * 1e-9
}

/// Landscape indices of the best slate: the highest positive scores, at most
/// `slots` of them, in landscape order. Ties go to the earlier ad.
pub fn select_fast(scored: &[ScoredAd], slots: usize) -> Vec<usize> {
    select_top(scored, slots, || {})
}

pub(crate) fn select_top(
    scored: &[ScoredAd],
    slots: usize,
    mut on_compare: impl FnMut(),
) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scored.len()).collect();
    order.sort_by(|&a, &b| {
        on_compare();
        scored[b].score.total_cmp(&scored[a].score).then(a.cmp(&b))
    });
    let mut chosen = vec![false; scored.len()];
    for &i in order.iter().take(slots) {
        if scored[i].score > 0.0 {
            chosen[i] = true;
        }
    }
    chosen
        .iter()
        .enumerate()
        .filter(|&(_, &c)| c)
        .map(|(i, _)| scored[i].landscape_index)
        .collect()
}

/// Sum of the chosen ads' scores, in landscape order.
pub fn total_score(scored: &[ScoredAd], chosen: &[usize]) -> f64 {
    chosen
        .iter()
        .map(|&i| {
            scored
                .iter()
                .find(|s| s.landscape_index == i)
                .map_or(0.0, |s| s.score)
        })
        .sum()
}

/// Number of order-preserving subsets of size `0..=slots` of `n` ads.
pub fn slate_count(n: usize, slots: usize) -> u128 {
    let mut total = 0u128;
    let mut binom = 1u128;
    for s in 0..=slots.min(n) {
        if s > 0 {
            binom = binom * (n - s + 1) as u128 / s as u128;
        }
        total += binom;
    }
    total
}

/// Enumerates every slate (empty included) and returns the best one and its
/// score, using the same frozen per-ad scores as the fast path.
pub fn select_exhaustive(
    landscape: &[Candidate],
    campaigns: &CampaignTable,
    duals: &DualParams,
    config: &ProblemConfig,
) -> Result<(Vec<usize>, f64)> {
    let scored = score_ads(landscape, campaigns, duals, config);
    select_exhaustive_scored(&scored, config.slots)
}

pub fn select_exhaustive_scored(scored: &[ScoredAd], slots: usize) -> Result<(Vec<usize>, f64)> {
    let count = slate_count(scored.len(), slots);
    if count > EXHAUSTIVE_LIMIT {
        return Err(Error::EnumerationGuard {
            count,
            limit: EXHAUSTIVE_LIMIT,
            hint: "select_fast",
        });
    }
    let mut best: (Vec<usize>, f64) = (Vec::new(), 0.0);
    let mut current = Vec::with_capacity(slots);
    enumerate(scored, slots, 0, &mut current, &mut best);
    let indices = best.0.iter().map(|&i| scored[i].landscape_index).collect();
    Ok((indices, best.1))
}

fn enumerate(
    scored: &[ScoredAd],
    slots: usize,
    start: usize,
    current: &mut Vec<usize>,
    best: &mut (Vec<usize>, f64),
) {
    if !current.is_empty() {
        let total: f64 = current.iter().map(|&i| scored[i].score).sum();
        let better = total > best.1
            || (total == best.1
                && (current.len() < best.0.len()
                    || (current.len() == best.0.len() && current[..] < best.0[..])));
        if better {
            best.0.clone_from(current);
            best.1 = total;
        }
    }
    if current.len() == slots {
        return;
    }
    for i in start..scored.len() {
        current.push(i);
        enumerate(scored, slots, i + 1, current, best);
        current.pop();
    }
}
