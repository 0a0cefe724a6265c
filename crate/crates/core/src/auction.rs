//! Per-slate auction mechanics: position-biased click rates, quality-weighted
//! GSP click prices, expected cost and conversions, and sum-method revenue.
//!
//! Under pay-per-click the expected revenue of a slot (`rpm`) and the expected
//! cost charged to its campaign are the same product `eff_ctr * click_price`,
//! so both fields are computed by one multiplication and agree bit for bit.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{CampaignIdx, Candidate, ProblemConfig};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PricedEntry {
    pub campaign: CampaignIdx,
    /// Index of the ad in the landscape it was drawn from.
    pub landscape_index: usize,
    /// 1-based display position.
    pub position: usize,
    pub eff_ctr: f64,
    pub click_price: f64,
    pub eff_cost: f64,
    pub eff_cvn: f64,
    pub rpm: f64,
    pub cvr_given_click: f64,
}

/// Ordered, priced subset of a landscape.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct Slate {
    pub entries: Vec<PricedEntry>,
}

impl Slate {
    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn revenue(&self) -> f64 {
        slate_revenue(self)
    }

    pub fn clicks(&self) -> f64 {
        self.entries.iter().map(|e| e.eff_ctr).sum()
    }

    pub fn conversions(&self) -> f64 {
        self.entries.iter().map(|e| e.eff_cvn).sum()
    }
}

/// GSP click price of an ad followed by `next`: the next ad's quality-weighted
/// bid divided by this ad's quality, floored at the reserve and capped at the
/// ad's own bid. The last ad, and an ad with zero click rate, pays the reserve.
pub fn gsp_click_price(own: &Candidate, next: Option<&Candidate>, reserve: f64) -> f64 {
    match next {
        Some(next) if own.base_ctr > 0.0 => {
            let price = next.bid_price * (next.base_ctr / own.base_ctr);
            price.min(own.bid_price).max(reserve)
        }
        _ => reserve,
    }
}

fn price_chain<'a, I>(ads: I, config: &ProblemConfig) -> Vec<PricedEntry>
where
    I: IntoIterator<Item = (usize, &'a Candidate)>,
{
    let ads: Vec<(usize, &Candidate)> = ads.into_iter().collect();
    ads.iter()
        .enumerate()
        .map(|(slot, &(landscape_index, cand))| {
            let position = slot + 1;
            let next = ads.get(slot + 1).map(|&(_, c)| c);
            let click_price = gsp_click_price(cand, next, config.reserve_price);
            let eff_ctr = config.exam_prob(position) * cand.base_ctr;
            let eff_cost = eff_ctr * click_price;
            PricedEntry {
                campaign: cand.campaign,
                landscape_index,
                position,
                eff_ctr,
                click_price,
                eff_cost,
                eff_cvn: eff_ctr * cand.cvr_given_click,
                rpm: eff_cost,
                cvr_given_click: cand.cvr_given_click,
            }
        })
        .collect()
}

/// Prices ads exactly as displayed, in the given order.
pub fn price_slate(ordered: &[Candidate], config: &ProblemConfig) -> Result<Slate> {
    if ordered.len() > config.slots {
        return Err(Error::SlateTooLong {
            len: ordered.len(),
            slots: config.slots,
        });
    }
    Ok(Slate {
        entries: price_chain(ordered.iter().enumerate(), config),
    })
}

/// Prices the landscape ads at `indices` (strictly increasing) as a displayed
/// slate, keeping their landscape indices.
pub fn price_selection(
    landscape: &[Candidate],
    indices: &[usize],
    config: &ProblemConfig,
) -> Result<Slate> {
    if indices.len() > config.slots {
        return Err(Error::SlateTooLong {
            len: indices.len(),
            slots: config.slots,
        });
    }
    debug_assert!(indices.windows(2).all(|w| w[0] < w[1]));
    Ok(Slate {
        entries: price_chain(indices.iter().map(|&i| (i, &landscape[i])), config),
    })
}

/// Prices every landscape ad at its original landscape position, each paying
/// against its landscape successor. This is the frozen approximation the
/// fast slate selector scores with; positions past the last slot reuse the
/// last slot's examination probability.
pub fn price_landscape(landscape: &[Candidate], config: &ProblemConfig) -> Vec<PricedEntry> {
    price_chain(landscape.iter().enumerate(), config)
}

/// Sum-method expected revenue of a slate.
pub fn slate_revenue(slate: &Slate) -> f64 {
    slate.entries.iter().map(|e| e.rpm).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cand(c: usize, ctr: f64, bid: f64) -> Candidate {
        Candidate {
            campaign: CampaignIdx(c),
            base_ctr: ctr,
            cvr_given_click: 0.1,
            bid_price: bid,
        }
    }

    fn config(exam: &[f64], reserve: f64) -> ProblemConfig {
        ProblemConfig {
            slots: exam.len(),
            exam_probs: exam.to_vec(),
            reserve_price: reserve,
            t_cy: 0.0,
            t_vy: 0.0,
        }
    }

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() <= 1e-12 * (1.0 + b.abs())
    }

    #[test]
    fn equal_quality_is_second_price() {
        let slate = price_slate(
            &[cand(0, 0.1, 2.0), cand(1, 0.1, 1.0)],
            &config(&[1.0, 1.0], 0.0),
        )
        .unwrap();
        let prices: Vec<_> = slate.entries.iter().map(|e| e.click_price).collect();
        assert_eq!(prices, [1.0, 0.0]);
        assert!(close(slate.entries[0].eff_cost, 0.1));
        assert_eq!(slate.entries[1].eff_cost, 0.0);
    }

    #[test]
    fn sole_bidder_pays_reserve() {
        let slate = price_slate(&[cand(0, 0.3, 2.0)], &config(&[1.0], 0.01)).unwrap();
        assert_eq!(slate.entries[0].click_price, 0.01);
    }

    #[test]
    fn three_ad_quality_weighted_example() {
        let cands = [cand(0, 0.2, 3.0), cand(1, 0.1, 2.0), cand(2, 0.05, 1.0)];
        let slate = price_slate(&cands, &config(&[1.0, 0.5, 0.25], 0.0)).unwrap();

        // Independent recomputation, one column at a time.
        let exam = [1.0, 0.5, 0.25];
        let mut expected_price = [0.0; 3];
        for p in 0..2 {
            expected_price[p] = cands[p + 1].rank_score() / cands[p].base_ctr;
        }
        let expected_ctr: Vec<f64> = (0..3).map(|p| exam[p] * cands[p].base_ctr).collect();

        for (p, e) in slate.entries.iter().enumerate() {
            assert!(close(e.click_price, expected_price[p]));
            assert!(close(e.eff_ctr, expected_ctr[p]));
            assert!(close(e.eff_cost, expected_ctr[p] * expected_price[p]));
            assert_eq!(e.position, p + 1);
        }
        // Frozen hand values.
        for (e, (price, ctr, cost)) in
            slate
                .entries
                .iter()
                .zip([(1.0, 0.2, 0.2), (0.5, 0.05, 0.025), (0.0, 0.0125, 0.0)])
        {
            assert!(close(e.click_price, price));
            assert!(close(e.eff_ctr, ctr));
            assert!(close(e.eff_cost, cost));
        }
        assert!(close(slate_revenue(&slate), 0.225));
    }

    #[test]
    fn revenue_edge_cases() {
        assert_eq!(slate_revenue(&Slate::default()), 0.0);
        let slate = price_slate(&[cand(0, 0.1, 2.0)], &config(&[1.0], 0.5)).unwrap();
        assert!(close(slate_revenue(&slate), 0.05));
    }

    #[test]
    fn zero_ctr_with_successor_pays_reserve() {
        let slate = price_slate(
            &[cand(0, 0.0, 2.0), cand(1, 0.1, 1.0)],
            &config(&[1.0, 0.5], 0.02),
        )
        .unwrap();
        assert_eq!(slate.entries[0].click_price, 0.02);
    }

    #[test]
    fn too_many_ads_is_an_error() {
        let err = price_slate(
            &[cand(0, 0.1, 1.0), cand(1, 0.1, 1.0)],
            &config(&[1.0], 0.0),
        );
        assert!(matches!(err, Err(Error::SlateTooLong { len: 2, slots: 1 })));
    }

    #[test]
    fn landscape_pricing_clamps_examination() {
        let cands = [cand(0, 0.2, 3.0), cand(1, 0.1, 2.0), cand(2, 0.05, 1.0)];
        let entries = price_landscape(&cands, &config(&[1.0, 0.5], 0.0));
        assert_eq!(entries.len(), 3);
        assert!(close(entries[2].eff_ctr, 0.5 * 0.05));
        assert!(close(entries[1].click_price, 0.5));
    }

    #[test]
    fn selection_keeps_landscape_indices() {
        let cands = [cand(0, 0.2, 3.0), cand(1, 0.1, 2.0), cand(2, 0.05, 1.0)];
        let slate = price_selection(&cands, &[0, 2], &config(&[1.0, 0.5], 0.0)).unwrap();
        assert_eq!(slate.entries[1].landscape_index, 2);
        assert_eq!(slate.entries[1].position, 2);
        // Price now set by the ad actually displayed below.
        assert!(close(slate.entries[0].click_price, 1.0 * 0.05 / 0.2));
    }

    fn arb_slate() -> impl Strategy<Value = (Vec<Candidate>, ProblemConfig)> {
        (1usize..=5).prop_flat_map(|n| {
            (
                prop::collection::vec((1e-4f64..1.0, 0.05f64..5.0), n),
                prop::collection::vec(0.05f64..1.0, n),
                0.0f64..0.05,
            )
                .prop_map(move |(ads, mut exam, reserve)| {
                    exam.sort_by(|a, b| b.total_cmp(a));
                    let mut cands: Vec<Candidate> = ads
                        .into_iter()
                        .enumerate()
                        .map(|(i, (ctr, bid))| cand(i, ctr, bid))
                        .collect();
                    cands.sort_by(|a, b| b.rank_score().total_cmp(&a.rank_score()));
                    (cands, config(&exam, reserve))
                })
        })
    }

    proptest! {
        #[test]
        fn priced_entries_hold_invariants((cands, cfg) in arb_slate()) {
            let slate = price_slate(&cands, &cfg).unwrap();
            let mut total = 0.0;
            for (e, c) in slate.entries.iter().zip(&cands) {
                prop_assert_eq!(e.eff_ctr, cfg.exam_probs[e.position - 1] * c.base_ctr);
                prop_assert_eq!(e.eff_cost, e.eff_ctr * e.click_price);
                prop_assert_eq!(e.rpm, e.eff_cost);
                prop_assert!(e.click_price >= cfg.reserve_price);
                prop_assert!(e.click_price <= c.bid_price.max(cfg.reserve_price));
                total += e.eff_cost;
            }
            prop_assert_eq!(total, slate_revenue(&slate));
        }

        #[test]
        fn raising_next_bid_never_lowers_price((cands, cfg) in arb_slate(), bump in 0.0f64..3.0) {
            prop_assume!(cands.len() >= 2);
            let before = price_slate(&cands, &cfg).unwrap();
            let mut raised = cands.clone();
            raised[1].bid_price += bump;
            let after = price_slate(&raised, &cfg).unwrap();
            prop_assert!(after.entries[0].click_price >= before.entries[0].click_price);
        }

        #[test]
        fn equal_quality_prices_are_next_bids(bids in prop::collection::vec(0.1f64..5.0, 2..5)) {
            let mut bids = bids;
            bids.sort_by(|a, b| b.total_cmp(a));
            let cands: Vec<_> = bids.iter().enumerate().map(|(i, &b)| cand(i, 0.1, b)).collect();
            let cfg = config(&vec![1.0; cands.len()], 0.0);
            let slate = price_slate(&cands, &cfg).unwrap();
            for p in 0..cands.len() - 1 {
                prop_assert_eq!(slate.entries[p].click_price, bids[p + 1]);
            }
        }

        #[test]
        fn revenue_ignores_campaign_labels((cands, cfg) in arb_slate(), shift in 1usize..50) {
            let relabeled: Vec<_> = cands
                .iter()
                .map(|c| Candidate { campaign: CampaignIdx(c.campaign.0 + shift), ..c.clone() })
                .collect();
            let a = price_slate(&cands, &cfg).unwrap();
            let b = price_slate(&relabeled, &cfg).unwrap();
            prop_assert_eq!(slate_revenue(&a), slate_revenue(&b));
        }
    }
}
