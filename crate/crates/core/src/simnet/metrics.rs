//! Per-run and per-instance measurements.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::committee::Committee;
use crate::message::{Message, MessageKind};
use crate::{InstanceId, PartyId};

/// What one party decided in one instance, and how long it took.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct PartyOutcome {
    pub proposer: PartyId,
    pub payload_len: usize,
    /// Simulated time from the party's instance start to its decision.
    pub decide_time: u64,
    /// Causal depth from the party's instance start to its decision.
    pub decide_round: u64,
    pub iterations: usize,
    pub abba_round: u32,
}

/// Who held each committee member's certified proposal when the first honest
/// party entered sequential agreement.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ReachSnapshot {
    pub time: u64,
    pub first_party: PartyId,
    /// Committee member -> number of responsive parties holding its proposal.
    pub reach: BTreeMap<PartyId, usize>,
    /// Same table recounted from the delivery transcript.
    pub recount: BTreeMap<PartyId, usize>,
}

impl ReachSnapshot {
    pub fn max_reach(&self) -> usize {
        self.reach.values().copied().max().unwrap_or(0)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct Traffic {
    pub msgs: u64,
    pub payload_bytes: u64,
    pub proof_bytes: u64,
}

impl Traffic {
    pub fn add(&mut self, msg: &Message) {
        self.msgs += 1;
        self.payload_bytes += msg.payload_bytes() as u64;
        self.proof_bytes += msg.proof_bytes() as u64;
    }

    pub fn bytes(&self) -> u64 {
        self.payload_bytes + self.proof_bytes
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct InstanceMetrics {
    pub instance: InstanceId,
    /// The committee as computed by an omniscient observer.
    pub committee: Option<Committee>,
    pub order: Vec<PartyId>,
    pub decisions: BTreeMap<PartyId, PartyOutcome>,
    pub traffic: Traffic,
    pub by_kind: BTreeMap<MessageKind, u64>,
    pub sent_by: BTreeMap<PartyId, Traffic>,
    pub reach: Option<ReachSnapshot>,
    /// Causal depth from instance start to the permutation, per party.
    pub pre_agreement_rounds: BTreeMap<PartyId, u64>,
    /// `(party, candidate index, bit, round)` for every ABBA decision.
    pub abba_decisions: Vec<(PartyId, usize, bool, u32)>,
    pub recoveries: u64,
}

impl InstanceMetrics {
    pub fn max_iterations(&self) -> usize {
        self.decisions.values().map(|d| d.iterations).max().unwrap_or(0)
    }

    pub fn max_decide_round(&self) -> u64 {
        self.decisions.values().map(|d| d.decide_round).max().unwrap_or(0)
    }

    pub fn decided_proposer(&self) -> Option<PartyId> {
        self.decisions.values().next().map(|d| d.proposer)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct RunMetrics {
    pub n: usize,
    pub f: usize,
    /// Parties the adversary corrupted.
    pub corrupted: Vec<PartyId>,
    pub instances: Vec<InstanceMetrics>,
    pub deliveries: u64,
    pub end_time: u64,
    /// `time,from,to,msg_type,size` per delivery, when requested.
    pub transcript: Vec<String>,
}

impl RunMetrics {
    pub fn total_traffic(&self) -> Traffic {
        let mut t = Traffic::default();
        for i in &self.instances {
            t.msgs += i.traffic.msgs;
            t.payload_bytes += i.traffic.payload_bytes;
            t.proof_bytes += i.traffic.proof_bytes;
        }
        t
    }

    pub fn is_honest(&self, p: PartyId) -> bool {
        !self.corrupted.contains(&p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::message::{Body, Proposal};

    #[test]
    fn traffic_splits_payload_and_proof_bytes() {
        let mut t = Traffic::default();
        t.add(&Message::new(
            1,
            Body::VcbcSend {
                proposal: Proposal {
                    proposer: PartyId(1),
                    instance: 1,
                    payload: vec![1; 10],
                },
            },
        ));
        assert_eq!(t, Traffic { msgs: 1, payload_bytes: 10, proof_bytes: 0 });
        assert_eq!(t.bytes(), 10);
    }
}
