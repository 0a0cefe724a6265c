//! On-disk formats: line-delimited JSON request logs, the campaign CSV table
//! and the persisted dual prices.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Campaign, CampaignTable, Candidate, DualParams, Request, SECONDS_PER_DAY};

/// Wire form of a landscape entry: `{"cid","ctr","cvr","bid"}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CandidateRecord {
    pub cid: String,
    pub ctr: f64,
    pub cvr: f64,
    pub bid: f64,
}

/// Wire form of a request: `{"id","ts","landscape":[...]}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RequestRecord {
    pub id: u64,
    pub ts: u64,
    pub landscape: Vec<CandidateRecord>,
}

impl RequestRecord {
    pub fn from_request(request: &Request, campaigns: &CampaignTable) -> Self {
        Self {
            id: request.id,
            ts: u64::from(request.timestamp),
            landscape: request
                .landscape
                .iter()
                .map(|c| CandidateRecord {
                    cid: campaigns.get(c.campaign).id.clone(),
                    ctr: c.base_ctr,
                    cvr: c.cvr_given_click,
                    bid: c.bid_price,
                })
                .collect(),
        }
    }

    /// Binds campaign ids to table handles. Fails on ids the table does not
    /// know and on timestamps outside the day.
    pub fn resolve(&self, campaigns: &CampaignTable) -> Result<Request> {
        if self.ts >= u64::from(SECONDS_PER_DAY) {
            return Err(Error::Invalid(format!(
                "request {}: timestamp {} outside the day",
                self.id, self.ts
            )));
        }
        let landscape = self
            .landscape
            .iter()
            .map(|c| {
                let campaign = campaigns.lookup(&c.cid).ok_or_else(|| {
                    Error::Invalid(format!("request {}: unknown campaign {:?}", self.id, c.cid))
                })?;
                Ok(Candidate {
                    campaign,
                    base_ctr: c.ctr,
                    cvr_given_click: c.cvr,
                    bid_price: c.bid,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Request {
            id: self.id,
            timestamp: self.ts as u32,
            landscape,
        })
    }
}

/// Lazily parses a JSONL stream. Blank lines are skipped; every other line
/// yields a record or a per-line error.
pub fn read_request_records<R: BufRead>(reader: R) -> impl Iterator<Item = Result<RequestRecord>> {
    reader
        .lines()
        .enumerate()
        .filter_map(|(i, line)| match line {
            Err(e) => Some(Err(Error::Io(e))),
            Ok(l) if l.trim().is_empty() => None,
            Ok(l) => Some(serde_json::from_str(&l).map_err(|e| Error::Parse {
                line: i + 1,
                message: e.to_string(),
            })),
        })
}

/// Reads and resolves a full log, stopping at the first bad record.
pub fn read_requests<R: BufRead>(reader: R, campaigns: &CampaignTable) -> Result<Vec<Request>> {
    read_request_records(reader)
        .map(|r| r.and_then(|rec| rec.resolve(campaigns)))
        .collect()
}

pub fn write_requests<W: Write>(
    mut writer: W,
    requests: &[Request],
    campaigns: &CampaignTable,
) -> Result<()> {
    for r in requests {
        serde_json::to_writer(&mut writer, &RequestRecord::from_request(r, campaigns))?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

pub fn requests_to_bytes(requests: &[Request], campaigns: &CampaignTable) -> Vec<u8> {
    let mut buf = Vec::new();
    write_requests(&mut buf, requests, campaigns).expect("writing to memory");
    buf
}

/// Campaign CSV with header `cid,budget,bid,goal`.
pub fn read_campaigns<R: std::io::Read>(reader: R) -> Result<CampaignTable> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != ["cid", "budget", "bid", "goal"] {
        return Err(Error::Invalid(format!(
            "campaign header must be cid,budget,bid,goal, got {}",
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let campaigns = rdr
        .deserialize::<Campaign>()
        .collect::<std::result::Result<Vec<_>, _>>()?;
    CampaignTable::new(campaigns)
}

pub fn write_campaigns<W: Write>(writer: W, campaigns: &CampaignTable) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    for c in campaigns.campaigns() {
        wtr.serialize(c)?;
    }
    if campaigns.is_empty() {
        wtr.write_record(["cid", "budget", "bid", "goal"])?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn campaigns_to_bytes(campaigns: &CampaignTable) -> Vec<u8> {
    let mut buf = Vec::new();
    write_campaigns(&mut buf, campaigns).expect("writing to memory");
    buf
}

/// One row of the trainer's convergence trace. The first group of metrics
/// comes from a replay without budget enforcement, the `enforced_` group from
/// a replay that stops serving exhausted campaigns.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub epoch: usize,
    /// Sum of relative budget overspends.
    pub overspend: f64,
    /// Largest relative budget overspend.
    pub max_overspend: f64,
    pub click_shortfall: f64,
    pub conversion_shortfall: f64,
    pub revenue: f64,
    pub enforced_click_shortfall: f64,
    pub enforced_conversion_shortfall: f64,
    /// Revenue of the enforced replay, each campaign's spend capped at its
    /// budget.
    pub enforced_revenue: f64,
    pub gamma: f64,
    pub delta: f64,
}

/// Persisted dual prices: `{"alpha": {cid: v}, "gamma": v, "delta": v, "trace": [...]}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DualsDocument {
    pub alpha: BTreeMap<String, f64>,
    pub gamma: f64,
    pub delta: f64,
    #[serde(default)]
    pub trace: Vec<TraceEntry>,
}

impl DualsDocument {
    pub fn new(duals: &DualParams, campaigns: &CampaignTable, trace: Vec<TraceEntry>) -> Self {
        Self {
            alpha: campaigns
                .iter()
                .map(|(idx, c)| (c.id.clone(), duals.alpha(idx)))
                .collect(),
            gamma: duals.gamma,
            delta: duals.delta,
            trace,
        }
    }

    /// Campaigns missing from the document get a zero price.
    pub fn to_params(&self, campaigns: &CampaignTable) -> Result<DualParams> {
        let mut duals = DualParams::zeros(campaigns.len());
        for (cid, &a) in &self.alpha {
            let idx = campaigns
                .lookup(cid)
                .ok_or_else(|| Error::Invalid(format!("duals name unknown campaign {cid:?}")))?;
            duals.alpha[idx.0] = a;
        }
        duals.gamma = self.gamma;
        duals.delta = self.delta;
        if !duals.is_dual_feasible() {
            return Err(Error::Invalid("dual prices must be non-negative".into()));
        }
        Ok(duals)
    }
}

/// Canonical generated campaign id (`c000`, `c001`, ...). Zero padding keeps
/// lexical and numeric order aligned up to 1000 campaigns.
pub fn campaign_id(i: usize) -> String {
    format!("c{i:03}")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{CampaignIdx, Goal};
    use proptest::prelude::*;

    fn table() -> CampaignTable {
        CampaignTable::new(vec![
            Campaign::new("c000", 12.5, 0.75, Goal::Click),
            Campaign::new("c001", 0.0, 2.0, Goal::Conversion),
            Campaign::new("c002", 3.0, 1.1, Goal::None),
        ])
        .unwrap()
    }

    #[test]
    fn request_wire_keys_are_exact() {
        let t = table();
        let req = Request {
            id: 7,
            timestamp: 120,
            landscape: vec![Candidate {
                campaign: CampaignIdx(1),
                base_ctr: 0.1,
                cvr_given_click: 0.2,
                bid_price: 1.5,
            }],
        };
        let text = String::from_utf8(requests_to_bytes(std::slice::from_ref(&req), &t)).unwrap();
        assert_eq!(
            text,
            "{\"id\":7,\"ts\":120,\"landscape\":[{\"cid\":\"c001\",\"ctr\":0.1,\"cvr\":0.2,\"bid\":1.5}]}\n"
        );
        let back = read_requests(text.as_bytes(), &t).unwrap();
        assert_eq!(back, vec![req]);
    }

    #[test]
    fn rejects_extra_keys_and_unknown_ids() {
        let t = table();
        let extra = "{\"id\":1,\"ts\":0,\"landscape\":[],\"user\":3}\n";
        assert!(read_requests(extra.as_bytes(), &t).is_err());
        let unknown = "{\"id\":1,\"ts\":0,\"landscape\":[{\"cid\":\"X\",\"ctr\":0.1,\"cvr\":0.1,\"bid\":1}]}\n";
        assert!(read_requests(unknown.as_bytes(), &t).is_err());
    }

    #[test]
    fn bad_lines_are_reported_per_record() {
        let text = "{\"id\":1,\"ts\":0,\"landscape\":[]}\nnot json\n\n{\"id\":2,\"ts\":1,\"landscape\":[]}\n";
        let recs: Vec<_> = read_request_records(text.as_bytes()).collect();
        assert_eq!(recs.len(), 3);
        assert!(recs[0].is_ok());
        assert!(matches!(recs[1], Err(Error::Parse { line: 2, .. })));
        assert!(recs[2].is_ok());
    }

    #[test]
    fn campaign_csv_round_trip() {
        let t = table();
        let bytes = campaigns_to_bytes(&t);
        let text = std::str::from_utf8(&bytes).unwrap();
        assert!(text.starts_with("cid,budget,bid,goal\nc000,12.5,0.75,clk\n"));
        assert_eq!(read_campaigns(bytes.as_slice()).unwrap(), t);
    }

    #[test]
    fn empty_campaign_table_keeps_header() {
        let bytes = campaigns_to_bytes(&CampaignTable::default());
        assert_eq!(bytes, b"cid,budget,bid,goal\n");
        assert!(read_campaigns(bytes.as_slice()).unwrap().is_empty());
    }

    #[test]
    fn campaign_csv_rejects_bad_header_and_goal() {
        assert!(read_campaigns("id,budget,bid,goal\na,1,1,clk\n".as_bytes()).is_err());
        assert!(read_campaigns("cid,budget,bid,goal\na,1,1,brand\n".as_bytes()).is_err());
    }

    #[test]
    fn duals_document_round_trip() {
        let t = table();
        let duals = DualParams {
            alpha: vec![0.5, 0.0, 1.25],
            gamma: 0.3,
            delta: 0.0,
        };
        let doc = DualsDocument::new(&duals, &t, vec![]);
        let json = serde_json::to_string(&doc).unwrap();
        assert_eq!(
            json,
            "{\"alpha\":{\"c000\":0.5,\"c001\":0.0,\"c002\":1.25},\"gamma\":0.3,\"delta\":0.0,\"trace\":[]}"
        );
        let back: DualsDocument = serde_json::from_str(&json).unwrap();
        assert_eq!(back.to_params(&t).unwrap(), duals);
    }

    fn arb_request() -> impl Strategy<Value = Request> {
        let cand =
            (0usize..3, 0.0f64..=1.0, 0.0f64..=1.0, 1e-6f64..1e3).prop_map(|(c, ctr, cvr, bid)| {
                Candidate {
                    campaign: CampaignIdx(c),
                    base_ctr: ctr,
                    cvr_given_click: cvr,
                    bid_price: bid,
                }
            });
        (
            any::<u64>(),
            0u32..SECONDS_PER_DAY,
            prop::collection::vec(cand, 0..6),
        )
            .prop_map(|(id, timestamp, landscape)| Request {
                id,
                timestamp,
                landscape,
            })
    }

    proptest! {
        #[test]
        fn requests_round_trip_field_for_field(reqs in prop::collection::vec(arb_request(), 0..8)) {
            let t = table();
            let bytes = requests_to_bytes(&reqs, &t);
            let back = read_requests(bytes.as_slice(), &t).unwrap();
            prop_assert_eq!(back, reqs);
        }
    }
}
