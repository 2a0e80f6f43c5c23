//! Record-by-record comparison of a table route against its native twin.

use std::collections::BTreeMap;
use std::fmt;

use super::config::{PayloadMode, Route};
use super::engine::convert_source;
use super::node::{drive, Outlet};
use super::{Endpoint, Payload, PipelineError};
use crate::cdm::constant_to_json;

/// The first record on which the two routes disagree.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Divergence {
    pub record: String,
    pub tip: String,
    pub baseline: String,
}

impl fmt::Display for Divergence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "record {}: table route {} vs baseline {}", self.record, self.tip, self.baseline)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct VerifyReport {
    pub records: u64,
    pub tip_counts: BTreeMap<String, u64>,
    pub baseline_counts: BTreeMap<String, u64>,
    pub divergence: Option<Divergence>,
}

impl VerifyReport {
    pub fn is_equivalent(&self) -> bool {
        self.divergence.is_none()
    }
}

/// Everything one record turned into: `channel<TAB>relation<TAB>row` lines,
/// sorted, plus filter and error markers.
#[derive(Default)]
struct Trace {
    lines: Vec<String>,
}

impl Trace {
    fn finish(mut self) -> Vec<String> {
        self.lines.sort();
        self.lines
    }
}

impl Outlet for Trace {
    fn deliver(&mut self, channel: &str, payload: Payload) {
        match payload {
            Payload::Table(m) => {
                for rel in m.body.relations() {
                    for t in rel.iter() {
                        let row: Vec<serde_json::Value> = t.iter().map(constant_to_json).collect();
                        self.lines.push(format!(
                            "{channel}\t{}\t{}",
                            rel.name(),
                            serde_json::Value::Array(row)
                        ));
                    }
                }
                if m.body.fact_count() == 0 {
                    self.lines.push(format!("{channel}\t(empty)"));
                }
            }
            Payload::Native(rs) => {
                for r in rs {
                    for (rel, row) in r.rows() {
                        self.lines.push(format!("{channel}\t{rel}\t{}", serde_json::Value::Array(row)));
                    }
                }
            }
        }
    }

    fn filtered(&mut self, records: u64) {
        self.lines.push(format!("(filtered {records})"));
    }

    fn held(&mut self, records: u64) {
        self.lines.push(format!("(held {records})"));
    }

    fn failed(&mut self, _records: u64, _id: &str, _error: &PipelineError) {
        self.lines.push("(error)".into());
    }
}

fn channels(trace: &[String]) -> impl Iterator<Item = &str> {
    let mut seen: Vec<&str> = trace
        .iter()
        .filter(|l| !l.starts_with('('))
        .filter_map(|l| l.split('\t').next())
        .collect();
    seen.dedup();
    seen.into_iter()
}

fn summary(trace: &[String]) -> String {
    if trace.is_empty() {
        return "(nothing)".into();
    }
    trace.join(" | ")
}

/// Feeds every record of `source` through both routes one at a time and
/// stops at the first record whose outcomes differ.
pub fn verify(tip: &Route, baseline: &Route, source: &Endpoint) -> Result<VerifyReport, PipelineError> {
    if tip.mode() != PayloadMode::Table || baseline.mode() != PayloadMode::Native {
        return Err(PipelineError::Config(
            "verify needs a table route and a baseline route".into(),
        ));
    }
    let (tip_in, tip_stats) = convert_source(&tip.reader_only(), source)?;
    let (base_in, base_stats) = convert_source(&baseline.reader_only(), source)?;
    let mut report = VerifyReport::default();
    if tip_in.len() != base_in.len() {
        report.divergence = Some(Divergence {
            record: "(input)".into(),
            tip: format!("{} parsed, {} failed", tip_in.len(), tip_stats.errors),
            baseline: format!("{} parsed, {} failed", base_in.len(), base_stats.errors),
        });
        return Ok(report);
    }
    for (t, b) in tip_in.into_iter().zip(base_in) {
        let id = t.id().to_string();
        report.records += 1;
        let mut tt = Trace::default();
        drive(&tip.nodes, 0, t, &mut tt);
        let mut bt = Trace::default();
        drive(&baseline.nodes, 0, b, &mut bt);
        let (tt, bt) = (tt.finish(), bt.finish());
        for c in channels(&tt) {
            *report.tip_counts.entry(c.to_string()).or_default() += 1;
        }
        for c in channels(&bt) {
            *report.baseline_counts.entry(c.to_string()).or_default() += 1;
        }
        if tt != bt {
            report.divergence = Some(Divergence {
                record: id,
                tip: summary(&tt),
                baseline: summary(&bt),
            });
            break;
        }
    }
    Ok(report)
}
