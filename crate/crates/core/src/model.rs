//! Domain types shared across the allocation engine: campaigns, requests with
//! their bidding landscapes, the auction configuration and the dual prices
//! consumed by the online policy.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::RequestRecord;

pub const SECONDS_PER_DAY: u32 = 86_400;

/// Performance goal class of a campaign. A campaign belongs to at most one
/// class, so the click set and the conversion set never overlap.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Goal {
    #[serde(rename = "clk")]
    Click,
    #[serde(rename = "cvn")]
    Conversion,
    #[serde(rename = "none")]
    None,
}

impl Goal {
    pub fn as_str(self) -> &'static str {
        match self {
            Goal::Click => "clk",
            Goal::Conversion => "cvn",
            Goal::None => "none",
        }
    }
}

impl fmt::Display for Goal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Goal {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "clk" => Ok(Goal::Click),
            "cvn" => Ok(Goal::Conversion),
            "none" => Ok(Goal::None),
            other => Err(Error::Invalid(format!("unknown goal {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Campaign {
    #[serde(rename = "cid")]
    pub id: String,
    /// Daily budget in currency units.
    pub budget: f64,
    /// Fixed price per click.
    pub bid: f64,
    pub goal: Goal,
}

impl Campaign {
    pub fn new(id: impl Into<String>, budget: f64, bid: f64, goal: Goal) -> Self {
        Self {
            id: id.into(),
            budget,
            bid,
            goal,
        }
    }

    fn check(&self) -> Result<()> {
        if !(self.budget >= 0.0 && self.budget.is_finite()) {
            return Err(Error::Invalid(format!(
                "campaign {}: budget {} must be finite and >= 0",
                self.id, self.budget
            )));
        }
        if !(self.bid > 0.0 && self.bid.is_finite()) {
            return Err(Error::Invalid(format!(
                "campaign {}: bid {} must be finite and > 0",
                self.id, self.bid
            )));
        }
        Ok(())
    }
}

/// Dense handle into a [`CampaignTable`]. Handles follow ascending campaign
/// id order, so iterating by handle is iterating by id.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct CampaignIdx(pub usize);

#[derive(Clone, Debug, Default, PartialEq)]
pub struct CampaignTable {
    campaigns: Vec<Campaign>,
    by_id: HashMap<String, CampaignIdx>,
}

impl CampaignTable {
    pub fn new(mut campaigns: Vec<Campaign>) -> Result<Self> {
        campaigns.sort_by(|a, b| a.id.cmp(&b.id));
        let mut by_id = HashMap::with_capacity(campaigns.len());
        for (i, c) in campaigns.iter().enumerate() {
            c.check()?;
            if by_id.insert(c.id.clone(), CampaignIdx(i)).is_some() {
                return Err(Error::Invalid(format!("duplicate campaign id {}", c.id)));
            }
        }
        Ok(Self { campaigns, by_id })
    }

    pub fn len(&self) -> usize {
        self.campaigns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.campaigns.is_empty()
    }

    pub fn get(&self, idx: CampaignIdx) -> &Campaign {
        &self.campaigns[idx.0]
    }

    pub fn lookup(&self, id: &str) -> Option<CampaignIdx> {
        self.by_id.get(id).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (CampaignIdx, &Campaign)> {
        self.campaigns
            .iter()
            .enumerate()
            .map(|(i, c)| (CampaignIdx(i), c))
    }

    pub fn campaigns(&self) -> &[Campaign] {
        &self.campaigns
    }

    pub fn goal(&self, idx: CampaignIdx) -> Goal {
        self.campaigns[idx.0].goal
    }

    /// Same campaigns with every goal replaced, e.g. to run a click-only
    /// experiment where all campaigns pursue clicks.
    pub fn with_goal(&self, goal: Goal) -> Self {
        let mut out = self.clone();
        for c in &mut out.campaigns {
            c.goal = goal;
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Candidate {
    pub campaign: CampaignIdx,
    /// Position-free click probability.
    pub base_ctr: f64,
    /// Conversion probability given a click.
    pub cvr_given_click: f64,
    /// Price per click the campaign bids on this request.
    pub bid_price: f64,
}

impl Candidate {
    /// Quality-weighted bid used for ranking and GSP pricing.
    pub fn rank_score(&self) -> f64 {
        self.bid_price * self.base_ctr
    }
}

/// One ad request and its bidding landscape, in ad-server rank order.
#[derive(Clone, Debug, PartialEq)]
pub struct Request {
    pub id: u64,
    /// Seconds since the start of the day, in `[0, 86400)`.
    pub timestamp: u32,
    pub landscape: Vec<Candidate>,
}

impl Request {
    /// 30-minute window index in `0..48`.
    pub fn bucket(&self) -> usize {
        (self.timestamp.min(SECONDS_PER_DAY - 1) / 1800) as usize
    }
}

/// Auction and constraint configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProblemConfig {
    /// Maximum ads per page.
    pub slots: usize,
    /// Examination probability per slot, non-increasing.
    pub exam_probs: Vec<f64>,
    pub reserve_price: f64,
    /// Aggregate click level required from click-goal campaigns.
    #[serde(default)]
    pub t_cy: f64,
    /// Aggregate conversion level required from conversion-goal campaigns.
    #[serde(default)]
    pub t_vy: f64,
}

impl ProblemConfig {
    pub const DEFAULT_DECAY: f64 = 0.6;
    pub const DEFAULT_RESERVE: f64 = 0.01;

    /// Geometric examination decay `0.6^(p-1)` with a 0.01 reserve.
    pub fn with_slots(slots: usize) -> Self {
        let exam_probs = (0..slots)
            .map(|p| Self::DEFAULT_DECAY.powi(p as i32))
            .collect();
        Self {
            slots,
            exam_probs,
            reserve_price: Self::DEFAULT_RESERVE,
            t_cy: 0.0,
            t_vy: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.slots == 0 {
            return Err(Error::Invalid("slots must be positive".into()));
        }
        if self.exam_probs.len() != self.slots {
            return Err(Error::Invalid(format!(
                "expected {} examination probabilities, got {}",
                self.slots,
                self.exam_probs.len()
            )));
        }
        if self.exam_probs.iter().any(|&e| !(e > 0.0 && e <= 1.0)) {
            return Err(Error::Invalid(
                "examination probabilities must lie in (0, 1]".into(),
            ));
        }
        if self.exam_probs.windows(2).any(|w| w[1] > w[0]) {
            return Err(Error::Invalid(
                "examination probabilities must be non-increasing".into(),
            ));
        }
        if !(self.reserve_price >= 0.0 && self.reserve_price.is_finite()) {
            return Err(Error::Invalid("reserve price must be >= 0".into()));
        }
        if !(self.t_cy >= 0.0 && self.t_vy >= 0.0) {
            return Err(Error::Invalid("constraint levels must be >= 0".into()));
        }
        Ok(())
    }

    /// Examination probability of 1-based `position`. Positions past the last
    /// slot reuse the last slot's probability.
    pub fn exam_prob(&self, position: usize) -> f64 {
        let p = position.clamp(1, self.slots);
        self.exam_probs[p - 1]
    }
}

/// Dual prices driving the online decision rule. `alpha` is indexed by
/// [`CampaignIdx`].
#[derive(Clone, Debug, PartialEq)]
pub struct DualParams {
    pub alpha: Vec<f64>,
    pub gamma: f64,
    pub delta: f64,
}

impl DualParams {
    pub fn zeros(n_campaigns: usize) -> Self {
        Self {
            alpha: vec![0.0; n_campaigns],
            gamma: 0.0,
            delta: 0.0,
        }
    }

    pub fn alpha(&self, idx: CampaignIdx) -> f64 {
        self.alpha.get(idx.0).copied().unwrap_or(0.0)
    }

    pub fn is_dual_feasible(&self) -> bool {
        self.alpha.iter().all(|&a| a >= 0.0) && self.gamma >= 0.0 && self.delta >= 0.0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    Unreadable {
        line: usize,
        message: String,
    },
    UnknownCampaign {
        request: u64,
        cid: String,
    },
    DuplicateCampaign {
        request: u64,
        cid: String,
    },
    ProbabilityOutOfRange {
        request: u64,
        cid: String,
        field: &'static str,
        value: f64,
    },
    NonPositiveBid {
        request: u64,
        cid: String,
        value: f64,
    },
    TimestampOutOfDay {
        request: u64,
        ts: u64,
    },
    NonMonotoneTimestamp {
        request: u64,
        previous: u64,
        ts: u64,
    },
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct ValidationReport {
    pub requests: usize,
    pub campaigns: usize,
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks a raw request stream against the campaign table. Unreadable
/// records are reported, never fatal.
pub fn validate_log<I>(records: I, campaigns: &CampaignTable) -> ValidationReport
where
    I: IntoIterator<Item = Result<RequestRecord>>,
{
    let mut report = ValidationReport {
        campaigns: campaigns.len(),
        ..Default::default()
    };
    let mut previous_ts: Option<u64> = None;
    for (line, record) in records.into_iter().enumerate() {
        report.requests += 1;
        let record = match record {
            Ok(r) => r,
            Err(e) => {
                report.violations.push(Violation::Unreadable {
                    line: line + 1,
                    message: e.to_string(),
                });
                continue;
            }
        };
        let rid = record.id;
        if record.ts >= u64::from(SECONDS_PER_DAY) {
            report.violations.push(Violation::TimestampOutOfDay {
                request: rid,
                ts: record.ts,
            });
        }
        if let Some(prev) = previous_ts {
            if record.ts < prev {
                report.violations.push(Violation::NonMonotoneTimestamp {
                    request: rid,
                    previous: prev,
                    ts: record.ts,
                });
            }
        }
        previous_ts = Some(record.ts);

        let mut seen = std::collections::HashSet::new();
        for cand in &record.landscape {
            if campaigns.lookup(&cand.cid).is_none() {
                report.violations.push(Violation::UnknownCampaign {
                    request: rid,
                    cid: cand.cid.clone(),
                });
            }
            if !seen.insert(cand.cid.as_str()) {
                report.violations.push(Violation::DuplicateCampaign {
                    request: rid,
                    cid: cand.cid.clone(),
                });
            }
            for (field, value) in [("ctr", cand.ctr), ("cvr", cand.cvr)] {
                if !(0.0..=1.0).contains(&value) {
                    report.violations.push(Violation::ProbabilityOutOfRange {
                        request: rid,
                        cid: cand.cid.clone(),
                        field,
                        value,
                    });
                }
            }
            if !(cand.bid > 0.0 && cand.bid.is_finite()) {
                report.violations.push(Violation::NonPositiveBid {
                    request: rid,
                    cid: cand.cid.clone(),
                    value: cand.bid,
                });
            }
        }
    }
    report
}
