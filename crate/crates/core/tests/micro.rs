//! The canonical micro-log (seed 42, 4 campaigns, 5 requests, 2 slots,
//! 4 candidates each) checked against independent recomputations.

use std::fs;

use adalloc::datagen::{generate, GenSpec};
use adalloc::io::{
    campaigns_to_bytes, read_campaigns, read_request_records, read_requests, requests_to_bytes,
};
use adalloc::lp::{build_offline_lp, solve_exact, solve_perturbed, LpStatus};
use adalloc::model::{validate_log, CampaignTable, Candidate, ProblemConfig, Request};
use adalloc::policy::GreedyPolicy;
use adalloc::replay::{replay, Accounting};

const DIR: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures/micro/");

fn fixture(name: &str) -> Vec<u8> {
    fs::read(format!("{DIR}{name}")).unwrap()
}

fn micro() -> (CampaignTable, Vec<Request>, ProblemConfig) {
    let table = read_campaigns(&fixture("campaigns.csv")[..]).unwrap();
    let log = read_requests(&fixture("requests.jsonl")[..], &table).unwrap();
    (table, log, ProblemConfig::with_slots(2))
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12 * a.abs().max(b.abs()).max(1.0)
}

/// Hand-rolled pricing of a displayed slate: examination 1.0 then 0.6,
/// quality-weighted next bid clamped to [reserve, own bid], last pays reserve.
/// Returns (revenue, clicks, conversions, cost per ad).
fn hand_price(slate: &[&Candidate]) -> (f64, f64, f64, Vec<f64>) {
    let exam = [1.0, 0.6];
    let reserve = 0.01;
    let (mut rev, mut clk, mut cvn) = (0.0, 0.0, 0.0);
    let mut costs = Vec::new();
    for (p, c) in slate.iter().enumerate() {
        let price = match slate.get(p + 1) {
            Some(next) => (next.bid_price * next.base_ctr / c.base_ctr)
                .min(c.bid_price)
                .max(reserve),
            None => reserve,
        };
        let ctr = exam[p] * c.base_ctr;
        rev += ctr * price;
        clk += ctr;
        cvn += ctr * c.cvr_given_click;
        costs.push(ctr * price);
    }
    (rev, clk, cvn, costs)
}

#[test]
fn generator_reproduces_the_committed_fixture() {
    let spec: GenSpec = serde_json::from_slice(&fixture("spec.json")).unwrap();
    assert_eq!(spec, GenSpec::micro());
    let g = generate(&spec).unwrap();
    assert_eq!(campaigns_to_bytes(&g.campaigns), fixture("campaigns.csv"));
    assert_eq!(
        requests_to_bytes(&g.requests, &g.campaigns),
        fixture("requests.jsonl")
    );
    let (table, log, _) = micro();
    let report = validate_log(read_request_records(&fixture("requests.jsonl")[..]), &table);
    assert!(report.is_valid(), "{:?}", report.violations);
    assert_eq!((report.requests, report.campaigns), (5, 4));
    assert!(log.iter().all(|r| r.landscape.len() == 4));
}

#[test]
fn greedy_replay_matches_a_hand_trace() {
    let (table, log, config) = micro();
    let mut spent = vec![0.0; table.len()];
    let (mut rev, mut clk, mut cvn) = (0.0, 0.0, 0.0);
    for r in &log {
        let slate: Vec<&Candidate> = r
            .landscape
            .iter()
            .filter(|c| spent[c.campaign.0] < table.get(c.campaign).budget)
            .take(2)
            .collect();
        let (r_rev, r_clk, r_cvn, costs) = hand_price(&slate);
        for (c, cost) in slate.iter().zip(costs) {
            spent[c.campaign.0] += cost;
        }
        rev += r_rev;
        clk += r_clk;
        cvn += r_cvn;
    }
    let run = replay(
        &log,
        &table,
        &GreedyPolicy { config: &config },
        Accounting::Expected,
        "",
    );
    let t = &run.report.totals;
    assert!(
        close(t.rev, rev) && close(t.clk, clk) && close(t.cvn, cvn),
        "{t:?} vs {rev} {clk} {cvn}"
    );
    for (idx, _) in table.iter() {
        assert!(close(run.budget.spent(idx), spent[idx.0]));
    }
}

#[test]
fn offline_lp_has_ten_columns_per_request() {
    let (table, log, config) = micro();
    let lp = build_offline_lp(&log, &table, &config).unwrap();
    // C(4,1) + C(4,2) slates per request.
    assert_eq!(lp.columns.len(), 5 * (4 + 6));
    for i in 0..5 {
        assert_eq!(lp.columns.iter().filter(|c| c.request == i).count(), 10);
    }
}

/// Revenue of one option plus its charges as `(campaign, cost)`.
type Priced = (f64, Vec<(usize, f64)>);

#[test]
fn offline_lp_bounds_the_best_integral_assignment() {
    let (table, log, config) = micro();
    // Every request: no ads, or one of its 10 order-preserving slates, priced
    // by hand.
    let options: Vec<Vec<Priced>> = log
        .iter()
        .map(|r| {
            let l = &r.landscape;
            let mut opts = vec![(0.0, Vec::new())];
            let mut subsets: Vec<Vec<usize>> = (0..4).map(|a| vec![a]).collect();
            for a in 0..4 {
                for b in a + 1..4 {
                    subsets.push(vec![a, b]);
                }
            }
            for s in subsets {
                let slate: Vec<&Candidate> = s.iter().map(|&i| &l[i]).collect();
                let (rev, _, _, costs) = hand_price(&slate);
                let charges = slate.iter().map(|c| c.campaign.0).zip(costs).collect();
                opts.push((rev, charges));
            }
            opts
        })
        .collect();
    let budgets: Vec<f64> = table.campaigns().iter().map(|c| c.budget).collect();
    let mut best = 0.0f64;
    let mut choice = [0usize; 5];
    loop {
        let mut spend = [0.0; 4];
        let mut rev = 0.0;
        for (i, &o) in choice.iter().enumerate() {
            rev += options[i][o].0;
            for &(k, c) in &options[i][o].1 {
                spend[k] += c;
            }
        }
        if spend.iter().zip(&budgets).all(|(s, b)| *s <= b + 1e-12) {
            best = best.max(rev);
        }
        // Odometer over 11^5 assignments.
        let mut pos = 0;
        while pos < 5 {
            choice[pos] += 1;
            if choice[pos] < 11 {
                break;
            }
            choice[pos] = 0;
            pos += 1;
        }
        if pos == 5 {
            break;
        }
    }
    let lp = build_offline_lp(&log, &table, &config).unwrap();
    let sol = solve_exact(&lp).unwrap();
    assert_eq!(sol.status, LpStatus::Optimal);
    assert!(sol.objective >= best - 1e-12, "{} < {best}", sol.objective);
    let integral = sol
        .primal
        .iter()
        .all(|&x| !(1e-9..=1.0 - 1e-9).contains(&x));
    if integral {
        assert!(close(sol.objective, best), "{} vs {best}", sol.objective);
    }
    assert!(sol.residuals(&lp, 1e-9).max() < 1e-6);
}

#[test]
fn tie_breaking_perturbation_keeps_the_optimum() {
    let (table, log, config) = micro();
    let lp = build_offline_lp(&log, &table, &config).unwrap();
    let exact = solve_exact(&lp).unwrap();
    let perturbed = solve_perturbed(&lp).unwrap();
    assert_eq!(perturbed.status, LpStatus::Optimal);
    assert!(lp.is_primal_feasible(&perturbed.primal, 1e-9));
    // Each column moves by at most 1e-9 per ad, so the optimum can move by
    // at most that much per request.
    let bound = 2e-9 * log.len() as f64;
    assert!((perturbed.objective - exact.objective).abs() <= 2.0 * bound);
    assert!(perturbed.duals.is_dual_feasible());
}
