//! Offline auction replay: stream a request log through a policy with budget
//! accounting, then summarize revenue, clicks and conversions in total, per
//! campaign and per half-hour bucket.
//!
//! All accrual goes through [`Replayer::apply`]; a policy influences a report
//! only through the decisions it returns.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::{CampaignTable, Goal, ProblemConfig, Request};
use crate::policy::{BudgetState, Decision, Policy};

pub const BUCKETS: usize = 48;
pub const BUCKET_SECONDS: u32 = 1800;

/// Two campaign totals closer than this count as equal in the `+`/`-` ratios.
pub const RATIO_EPSILON: f64 = 1e-12;

/// How clicks and conversions are credited.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Accounting {
    /// Expected values: every displayed ad earns `eff_ctr` clicks and
    /// `eff_cost` spend.
    #[default]
    Expected,
    /// One Bernoulli click (and conversion given click) per displayed ad,
    /// charged at the click price.
    Sampled { seed: u64 },
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub rev: f64,
    pub clk: f64,
    pub cvn: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CampaignMetrics {
    pub goal: Goal,
    pub rev: f64,
    pub clk: f64,
    pub cvn: f64,
    pub spend: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BucketMetrics {
    /// First second of the window.
    pub start: u32,
    pub rev: f64,
    pub clk: f64,
    pub cvn: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplayReport {
    pub policy: String,
    pub fingerprint: String,
    pub accounting: Accounting,
    pub requests: usize,
    pub impressions: usize,
    pub totals: Metrics,
    pub per_campaign: BTreeMap<String, CampaignMetrics>,
    pub buckets: Vec<BucketMetrics>,
}

impl ReplayReport {
    pub fn to_json(&self) -> Vec<u8> {
        let mut bytes = serde_json::to_vec_pretty(self).expect("report serializes");
        bytes.push(b'\n');
        bytes
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self> {
        let report: Self = serde_json::from_slice(bytes)?;
        if report.buckets.len() != BUCKETS {
            return Err(Error::Invalid(format!(
                "report has {} buckets, expected {BUCKETS}",
                report.buckets.len()
            )));
        }
        Ok(report)
    }

    /// Clicks of click-goal campaigns.
    pub fn goal_clicks(&self) -> f64 {
        self.per_campaign
            .values()
            .filter(|c| c.goal == Goal::Click)
            .map(|c| c.clk)
            .sum()
    }

    /// Conversions of conversion-goal campaigns.
    pub fn goal_conversions(&self) -> f64 {
        self.per_campaign
            .values()
            .filter(|c| c.goal == Goal::Conversion)
            .map(|c| c.cvn)
            .sum()
    }

    /// `bucket,rev,clk,cvn` rows, one per half-hour window, keyed by the
    /// window's first second.
    pub fn bucket_csv(&self) -> String {
        let mut out = String::from("bucket,rev,clk,cvn\n");
        for b in &self.buckets {
            writeln!(out, "{},{},{},{}", b.start, b.rev, b.clk, b.cvn).unwrap();
        }
        out
    }
}

/// Content hash of the inputs a report depends on.
pub fn fingerprint(log_bytes: &[u8], campaign_bytes: &[u8], config: &ProblemConfig) -> String {
    let config_bytes = serde_json::to_vec(config).expect("config serializes");
    let mut hasher = Sha256::new();
    for part in [log_bytes, campaign_bytes, &config_bytes] {
        hasher.update((part.len() as u64).to_le_bytes());
        hasher.update(part);
    }
    hex::encode(hasher.finalize())
}

#[derive(Clone, Copy, Default)]
struct Accrued {
    rev: f64,
    clk: f64,
    cvn: f64,
}

/// Shared accrual state for one replay stream.
pub struct Replayer<'a> {
    campaigns: &'a CampaignTable,
    accounting: Accounting,
    rng: Option<ChaCha8Rng>,
    budget: BudgetState,
    per_campaign: Vec<Accrued>,
    buckets: Vec<Accrued>,
    requests: usize,
    impressions: usize,
}

impl<'a> Replayer<'a> {
    pub fn new(campaigns: &'a CampaignTable, accounting: Accounting) -> Self {
        let rng = match accounting {
            Accounting::Expected => None,
            Accounting::Sampled { seed } => Some(ChaCha8Rng::seed_from_u64(seed)),
        };
        Self {
            campaigns,
            accounting,
            rng,
            budget: BudgetState::new(campaigns),
            per_campaign: vec![Accrued::default(); campaigns.len()],
            buckets: vec![Accrued::default(); BUCKETS],
            requests: 0,
            impressions: 0,
        }
    }

    pub fn budget(&self) -> &BudgetState {
        &self.budget
    }

    /// Accrue one decision and charge its campaigns.
    pub fn apply(&mut self, request: &Request, decision: &Decision) {
        self.requests += 1;
        let bucket = &mut self.buckets[request.bucket()];
        for e in &decision.slate.entries {
            self.impressions += 1;
            let (rev, clk, cvn) = match &mut self.rng {
                None => (e.eff_cost, e.eff_ctr, e.eff_cvn),
                Some(rng) => {
                    let clicked = rng.random::<f64>() < e.eff_ctr;
                    let converted = rng.random::<f64>() < e.cvr_given_click;
                    if clicked {
                        (e.click_price, 1.0, if converted { 1.0 } else { 0.0 })
                    } else {
                        (0.0, 0.0, 0.0)
                    }
                }
            };
            let c = &mut self.per_campaign[e.campaign.0];
            c.rev += rev;
            c.clk += clk;
            c.cvn += cvn;
            bucket.rev += rev;
            bucket.clk += clk;
            bucket.cvn += cvn;
            self.budget.charge(e.campaign, rev);
        }
    }

    pub fn finish(self, policy: &str, fingerprint: &str) -> ReplayRun {
        let mut totals = Metrics::default();
        let mut per_campaign = BTreeMap::new();
        // Table order is ascending campaign id, which fixes the summation order.
        for (idx, c) in self.campaigns.iter() {
            let a = self.per_campaign[idx.0];
            totals.rev += a.rev;
            totals.clk += a.clk;
            totals.cvn += a.cvn;
            per_campaign.insert(
                c.id.clone(),
                CampaignMetrics {
                    goal: c.goal,
                    rev: a.rev,
                    clk: a.clk,
                    cvn: a.cvn,
                    spend: self.budget.spent(idx),
                },
            );
        }
        let buckets = self
            .buckets
            .iter()
            .enumerate()
            .map(|(b, a)| BucketMetrics {
                start: b as u32 * BUCKET_SECONDS,
                rev: a.rev,
                clk: a.clk,
                cvn: a.cvn,
            })
            .collect();
        ReplayRun {
            report: ReplayReport {
                policy: policy.to_string(),
                fingerprint: fingerprint.to_string(),
                accounting: self.accounting,
                requests: self.requests,
                impressions: self.impressions,
                totals,
                per_campaign,
                buckets,
            },
            budget: self.budget,
        }
    }
}

/// A finished replay with its final budget ledger.
#[derive(Clone, Debug)]
pub struct ReplayRun {
    pub report: ReplayReport,
    pub budget: BudgetState,
}

/// Replays `log` in order through `policy`. `campaigns` is the accounting
/// table; the policy may hold a relabeled copy of it.
pub fn replay(
    log: &[Request],
    campaigns: &CampaignTable,
    policy: &dyn Policy,
    accounting: Accounting,
    fingerprint: &str,
) -> ReplayRun {
    let mut replayer = Replayer::new(campaigns, accounting);
    for request in log {
        let decision = policy.decide(request, replayer.budget());
        replayer.apply(request, &decision);
    }
    replayer.finish(policy.name(), fingerprint)
}

/// Relative change of one report against a baseline, in percent, plus the
/// share of campaigns that gained or lost clicks and conversions.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ComparisonReport {
    pub baseline: String,
    pub candidate: String,
    pub delta_rev: f64,
    pub delta_clk: f64,
    pub delta_cvn: f64,
    pub delta_clk_c1: f64,
    pub delta_cvn_c2: f64,
    pub clk_plus: f64,
    pub clk_minus: f64,
    pub cvn_plus: f64,
    pub cvn_minus: f64,
}

/// Percent change; a zero baseline gives 0 when unchanged, ±inf otherwise.
pub fn relative_delta(candidate: f64, baseline: f64) -> f64 {
    if baseline == 0.0 {
        if candidate == 0.0 {
            0.0
        } else {
            candidate.signum() * f64::INFINITY
        }
    } else {
        (candidate - baseline) / baseline * 100.0
    }
}

/// Compares `candidate` against `baseline`. Goal subsets follow the baseline's
/// campaign labels.
pub fn compare(candidate: &ReplayReport, baseline: &ReplayReport) -> Result<ComparisonReport> {
    if candidate.fingerprint != baseline.fingerprint {
        return Err(Error::FingerprintMismatch(
            candidate.fingerprint.clone(),
            baseline.fingerprint.clone(),
        ));
    }
    let mut clk_c1 = (0.0, 0.0);
    let mut cvn_c2 = (0.0, 0.0);
    let mut counts = [0usize; 4];
    for (cid, b) in &baseline.per_campaign {
        let a = candidate.per_campaign.get(cid).ok_or_else(|| {
            Error::Invalid(format!(
                "campaign {cid:?} missing from the candidate report"
            ))
        })?;
        match b.goal {
            Goal::Click => {
                clk_c1.0 += a.clk;
                clk_c1.1 += b.clk;
            }
            Goal::Conversion => {
                cvn_c2.0 += a.cvn;
                cvn_c2.1 += b.cvn;
            }
            Goal::None => {}
        }
        counts[0] += usize::from(a.clk > b.clk + RATIO_EPSILON);
        counts[1] += usize::from(a.clk < b.clk - RATIO_EPSILON);
        counts[2] += usize::from(a.cvn > b.cvn + RATIO_EPSILON);
        counts[3] += usize::from(a.cvn < b.cvn - RATIO_EPSILON);
    }
    let n = baseline.per_campaign.len().max(1) as f64;
    Ok(ComparisonReport {
        baseline: baseline.policy.clone(),
        candidate: candidate.policy.clone(),
        delta_rev: relative_delta(candidate.totals.rev, baseline.totals.rev),
        delta_clk: relative_delta(candidate.totals.clk, baseline.totals.clk),
        delta_cvn: relative_delta(candidate.totals.cvn, baseline.totals.cvn),
        delta_clk_c1: relative_delta(clk_c1.0, clk_c1.1),
        delta_cvn_c2: relative_delta(cvn_c2.0, cvn_c2.1),
        clk_plus: counts[0] as f64 / n,
        clk_minus: counts[1] as f64 / n,
        cvn_plus: counts[2] as f64 / n,
        cvn_minus: counts[3] as f64 / n,
    })
}

/// Signed percentage with two decimals, e.g. `+5.61%`.
pub fn format_delta(percent: f64) -> String {
    if percent.is_infinite() {
        return if percent > 0.0 {
            "+inf%".into()
        } else {
            "-inf%".into()
        };
    }
    let rounded = (percent * 100.0).round() / 100.0;
    // Avoid "-0.00%".
    let rounded = if rounded == 0.0 { 0.0 } else { rounded };
    format!("{rounded:+.2}%")
}

fn format_ratio(ratio: f64) -> String {
    format!("{:.2}%", ratio * 100.0)
}

/// Table with one row per algorithm: the baseline first (all `-`), then one
/// row per comparison.
pub fn comparison_table(rows: &[ComparisonReport]) -> String {
    let mut out = String::from(
        "algorithm,delta_rev,delta_clk,delta_cvn,delta_clk_c1,delta_cvn_c2,\
         clk_plus,clk_minus,cvn_plus,cvn_minus\n",
    );
    if let Some(first) = rows.first() {
        writeln!(out, "{}{}", first.baseline, ",-".repeat(9)).unwrap();
    }
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            r.candidate,
            format_delta(r.delta_rev),
            format_delta(r.delta_clk),
            format_delta(r.delta_cvn),
            format_delta(r.delta_clk_c1),
            format_delta(r.delta_cvn_c2),
            format_ratio(r.clk_plus),
            format_ratio(r.clk_minus),
            format_ratio(r.cvn_plus),
            format_ratio(r.cvn_minus),
        )
        .unwrap();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Campaign, CampaignIdx, Candidate};
    use crate::policy::{ghp_decide, GreedyPolicy};

    fn table() -> CampaignTable {
        CampaignTable::new(vec![
            Campaign::new("a", 1.0, 1.0, Goal::Click),
            Campaign::new("b", 1.0, 1.0, Goal::Conversion),
        ])
        .unwrap()
    }

    fn request(id: u64, ts: u32) -> Request {
        Request {
            id,
            timestamp: ts,
            landscape: vec![
                Candidate {
                    campaign: CampaignIdx(0),
                    base_ctr: 0.2,
                    cvr_given_click: 0.1,
                    bid_price: 1.0,
                },
                Candidate {
                    campaign: CampaignIdx(1),
                    base_ctr: 0.1,
                    cvr_given_click: 0.5,
                    bid_price: 1.0,
                },
            ],
        }
    }

    #[test]
    fn empty_log_gives_zero_report() {
        let t = table();
        let cfg = ProblemConfig::with_slots(2);
        let run = replay(
            &[],
            &t,
            &GreedyPolicy { config: &cfg },
            Accounting::Expected,
            "f",
        );
        assert_eq!(run.report.totals, Metrics::default());
        assert_eq!(run.report.buckets.len(), BUCKETS);
        assert!(run
            .report
            .buckets
            .iter()
            .all(|b| b.rev == 0.0 && b.clk == 0.0));
        let csv = run.report.bucket_csv();
        assert_eq!(csv.lines().count(), 1 + BUCKETS);
        assert!(csv.lines().skip(1).all(|l| l.ends_with(",0,0,0")));
    }

    #[test]
    fn single_request_totals_equal_its_slate() {
        let t = table();
        let cfg = ProblemConfig::with_slots(2);
        let r = request(0, 0);
        let slate = ghp_decide(&r, &BudgetState::new(&t), &cfg).slate;
        let run = replay(
            &[r],
            &t,
            &GreedyPolicy { config: &cfg },
            Accounting::Expected,
            "f",
        );
        assert_eq!(run.report.totals.rev, slate.revenue());
        assert_eq!(run.report.totals.clk, slate.clicks());
        assert_eq!(run.report.totals.cvn, slate.conversions());
        assert_eq!(run.report.buckets[0].rev, slate.revenue());
    }

    #[test]
    fn last_second_lands_in_last_bucket() {
        let t = table();
        let cfg = ProblemConfig::with_slots(2);
        let run = replay(
            &[request(0, 86_399)],
            &t,
            &GreedyPolicy { config: &cfg },
            Accounting::Expected,
            "f",
        );
        let b = &run.report.buckets;
        assert!(b[47].clk > 0.0);
        assert_eq!(b[47].start, 84_600);
        assert!(b[..47].iter().all(|x| x.clk == 0.0));
    }

    fn report(clk: &[f64], rev: f64) -> ReplayReport {
        let mut per_campaign = BTreeMap::new();
        for (i, &c) in clk.iter().enumerate() {
            per_campaign.insert(
                format!("c{i}"),
                CampaignMetrics {
                    goal: Goal::Click,
                    rev: 0.0,
                    clk: c,
                    cvn: 0.0,
                    spend: 0.0,
                },
            );
        }
        ReplayReport {
            policy: "p".into(),
            fingerprint: "f".into(),
            accounting: Accounting::Expected,
            requests: 0,
            impressions: 0,
            totals: Metrics {
                rev,
                clk: clk.iter().sum(),
                cvn: 0.0,
            },
            per_campaign,
            buckets: vec![BucketMetrics::default(); BUCKETS],
        }
    }

    #[test]
    fn self_comparison_is_all_zero() {
        let r = report(&[1.0, 2.0], 3.0);
        let c = compare(&r, &r).unwrap();
        for v in [
            c.delta_rev,
            c.delta_clk,
            c.delta_cvn,
            c.delta_clk_c1,
            c.delta_cvn_c2,
        ] {
            assert_eq!(v, 0.0);
        }
        assert_eq!(
            (c.clk_plus, c.clk_minus, c.cvn_plus, c.cvn_minus),
            (0.0, 0.0, 0.0, 0.0)
        );
        let table = comparison_table(&[c]);
        assert!(table.lines().nth(2).unwrap().starts_with("p,+0.00%,+0.00%"));
    }

    #[test]
    fn delta_formatting() {
        let base = report(&[1.0], 100.0);
        let cand = report(&[1.0], 105.61);
        let c = compare(&cand, &base).unwrap();
        assert_eq!(format_delta(c.delta_rev), "+5.61%");
        assert_eq!(format_delta(-5.934), "-5.93%");
        assert_eq!(format_delta(-0.0001), "+0.00%");
    }

    #[test]
    fn campaign_ratios_count_gainers() {
        let base = report(&[1.0, 1.0], 0.0);
        let cand = report(&[2.0, 1.0], 0.0);
        let c = compare(&cand, &base).unwrap();
        assert_eq!(c.clk_plus, 0.5);
        assert_eq!(c.clk_minus, 0.0);
    }

    #[test]
    fn mismatched_fingerprints_are_rejected() {
        let a = report(&[1.0], 1.0);
        let mut b = a.clone();
        b.fingerprint = "g".into();
        assert!(matches!(
            compare(&a, &b),
            Err(Error::FingerprintMismatch(..))
        ));
    }

    #[test]
    fn report_json_round_trips() {
        let t = table();
        let cfg = ProblemConfig::with_slots(2);
        let log: Vec<Request> = (0..4).map(|i| request(i, i as u32 * 20_000)).collect();
        let run = replay(
            &log,
            &t,
            &GreedyPolicy { config: &cfg },
            Accounting::Expected,
            "f",
        );
        let bytes = run.report.to_json();
        assert_eq!(ReplayReport::from_json(&bytes).unwrap(), run.report);
    }

    #[test]
    fn sampled_mode_is_seeded() {
        let t = table();
        let cfg = ProblemConfig::with_slots(2);
        let log: Vec<Request> = (0..200).map(|i| request(i, i as u32 * 400)).collect();
        let run = |seed| {
            replay(
                &log,
                &t,
                &GreedyPolicy { config: &cfg },
                Accounting::Sampled { seed },
                "f",
            )
            .report
        };
        assert_eq!(run(7), run(7));
        let r = run(7);
        assert!(r.totals.clk.fract() == 0.0 && r.totals.clk > 0.0);
    }

    #[test]
    fn fingerprint_covers_every_input() {
        let cfg = ProblemConfig::with_slots(2);
        let base = fingerprint(b"log", b"csv", &cfg);
        assert_eq!(base.len(), 64);
        assert_ne!(base, fingerprint(b"log2", b"csv", &cfg));
        assert_ne!(base, fingerprint(b"log", b"csv2", &cfg));
        assert_ne!(
            base,
            fingerprint(b"log", b"csv", &ProblemConfig::with_slots(3))
        );
        // Length prefixes keep part boundaries significant.
        assert_ne!(
            fingerprint(b"ab", b"c", &cfg),
            fingerprint(b"a", b"bc", &cfg)
        );
    }
}
