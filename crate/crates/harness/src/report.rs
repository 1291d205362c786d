//! CSV rows and human-readable tables.

use std::fmt::Write as _;
use std::io::Write;

use pmvba::simnet::{InstanceMetrics, RunMetrics};
use serde::Serialize;

/// One row per (instance, honest deciding party). Column order is frozen.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct DecisionRow {
    pub instance: u64,
    pub party: u32,
    pub decided_proposer: u32,
    pub decide_round: u64,
    pub iterations: usize,
    /// Messages this party sent in this instance.
    pub msgs_total: u64,
    /// Payload plus proof bytes this party sent in this instance.
    pub bytes_total: u64,
}

pub fn decision_rows(m: &RunMetrics) -> Vec<DecisionRow> {
    let mut rows = Vec::new();
    for im in &m.instances {
        for (p, d) in &im.decisions {
            let sent = im.sent_by.get(p).copied().unwrap_or_default();
            rows.push(DecisionRow {
                instance: im.instance,
                party: p.0,
                decided_proposer: d.proposer.0,
                decide_round: d.decide_round,
                iterations: d.iterations,
                msgs_total: sent.msgs,
                bytes_total: sent.bytes(),
            });
        }
    }
    rows
}

pub fn write_csv<W: Write, R: Serialize>(out: W, rows: &[R]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Per-proposer reach table at the first entry into agreement.
pub fn reach_table(im: &InstanceMetrics, threshold: usize) -> String {
    let mut s = String::new();
    let Some(r) = &im.reach else {
        return "  (no party entered agreement)\n".into();
    };
    let _ = writeln!(
        s,
        "  reach at t={} (first entry by {}), threshold {threshold}:",
        r.time, r.first_party
    );
    for (p, &k) in &r.reach {
        let mark = if k >= threshold { "ok" } else { "--" };
        let _ = writeln!(s, "    {p:>4} | {:<13} {k:>3} [{mark}]", "#".repeat(k));
    }
    s
}
