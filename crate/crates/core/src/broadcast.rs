//! Prioritized verifiable consistent broadcast (pVCBC), the
//! propose/recommend relay and decide-time payload recovery.
//!
//! A committee member sends its proposal to everybody; each party signs the
//! first valid proposal it sees from each member, and `n - f` signature shares
//! combine into a proof binding exactly one payload to `(instance, proposer)`.
//! The member then announces the certified proposal with PROPOSE, and every
//! party relays the first certified proposal it learns with exactly one
//! RECOMMENDATION.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use thiserror::Error;

use crate::committee::Committee;
use crate::message::{Body, CertifiedProposal, Proposal};
use crate::tcrypto::{SignShare, ThresholdProof};
use crate::tcrypto::PartyKeys;
use crate::{schemes, InstanceId, PartyId};

/// External validity predicate on proposal payloads.
pub trait Predicate: Send + Sync + fmt::Debug {
    fn check(&self, payload: &[u8]) -> bool;
}

/// Accepts payloads made of one or more `tx_size`-byte transactions, none of
/// them all zero.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TxBatchPredicate {
    pub tx_size: usize,
}

impl Predicate for TxBatchPredicate {
    fn check(&self, payload: &[u8]) -> bool {
        self.tx_size > 0
            && !payload.is_empty()
            && payload.len().is_multiple_of(self.tx_size)
            && payload
                .chunks(self.tx_size)
                .all(|tx| tx.iter().any(|&b| b != 0))
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum BroadcastError {
    #[error("{0} is not a committee member")]
    NotMember(PartyId),
    #[error("payload of {0} fails the validity predicate")]
    InvalidPayload(PartyId),
}

/// Checks a certified proposal: right instance, verifying proof, valid payload.
pub fn verify_certified(
    keys: &PartyKeys,
    instance: InstanceId,
    predicate: &dyn Predicate,
    cp: &CertifiedProposal,
) -> bool {
    cp.proposal.instance == instance
        && cp.proof.scheme == schemes::SIG
        && keys.verify_proof(&cp.proposal.signing_bytes(), &cp.proof)
        && predicate.check(&cp.proposal.payload)
}

/// Sender side of pVCBC for our own proposal.
#[derive(Debug)]
pub struct PvcbcSender {
    proposal: Proposal,
    shares: BTreeMap<PartyId, SignShare>,
    output: Option<CertifiedProposal>,
}

impl PvcbcSender {
    /// Starts the broadcast, returning the request to send to everybody.
    pub fn start(
        committee: &Committee,
        predicate: &dyn Predicate,
        proposal: Proposal,
    ) -> Result<(Self, Body), BroadcastError> {
        if !committee.contains(proposal.proposer) {
            return Err(BroadcastError::NotMember(proposal.proposer));
        }
        if !predicate.check(&proposal.payload) {
            return Err(BroadcastError::InvalidPayload(proposal.proposer));
        }
        let body = Body::VcbcSend {
            proposal: proposal.clone(),
        };
        Ok((
            PvcbcSender {
                proposal,
                shares: BTreeMap::new(),
                output: None,
            },
            body,
        ))
    }

    /// Adds a reply; returns the PROPOSE body once the proof forms.
    pub fn on_reply(&mut self, keys: &PartyKeys, from: PartyId, share: SignShare) -> Option<Body> {
        if self.output.is_some() || share.signer != from || share.scheme != schemes::SIG {
            return None;
        }
        let msg = self.proposal.signing_bytes();
        if !keys.verify_share(&msg, &share) {
            return None;
        }
        self.shares.entry(from).or_insert(share);
        let t = keys.threshold(schemes::SIG).ok()?;
        if self.shares.len() < t {
            return None;
        }
        let shares: Vec<SignShare> = self.shares.values().cloned().collect();
        let proof = keys.combine(schemes::SIG, &msg, &shares).ok()?;
        let cp = CertifiedProposal {
            proposal: self.proposal.clone(),
            proof,
        };
        self.output = Some(cp.clone());
        Some(Body::Propose { cp })
    }

    pub fn output(&self) -> Option<&CertifiedProposal> {
        self.output.as_ref()
    }
}

/// Receiver side of pVCBC: signs at most one payload per committee member.
#[derive(Debug, Default)]
pub struct PvcbcSigner {
    signed: BTreeMap<PartyId, Proposal>,
    dropped: usize,
}

impl PvcbcSigner {
    pub fn new() -> Self {
        Self::default()
    }

    /// Returns the reply body if the request deserves our signature share.
    pub fn on_request(
        &mut self,
        keys: &PartyKeys,
        instance: InstanceId,
        committee: &Committee,
        predicate: &dyn Predicate,
        from: PartyId,
        proposal: Proposal,
    ) -> Option<Body> {
        let acceptable = proposal.proposer == from
            && proposal.instance == instance
            && committee.contains(from)
            && !self.signed.contains_key(&from)
            && predicate.check(&proposal.payload);
        if !acceptable {
            self.dropped += 1;
            return None;
        }
        let share = keys
            .sign(schemes::SIG, &proposal.signing_bytes())
            .expect("protocol scheme is registered");
        self.signed.insert(from, proposal);
        Some(Body::VcbcReply { share })
    }

    pub fn signed(&self, proposer: PartyId) -> Option<&Proposal> {
        self.signed.get(&proposer)
    }

    pub fn dropped(&self) -> usize {
        self.dropped
    }
}

/// What one PROPOSE or RECOMMENDATION did to the recommend state.
#[derive(Debug, Default, PartialEq)]
pub struct RecommendStep {
    /// Our single RECOMMENDATION, if this message triggered it.
    pub broadcast: Option<Body>,
    /// The proposal was new to the map.
    pub inserted: bool,
    /// The map just became complete.
    pub completed: bool,
}

/// The recommendation map plus the one-shot relay.
#[derive(Debug)]
pub struct Recommend {
    quorum: usize,
    sent: bool,
    map: BTreeMap<PartyId, CertifiedProposal>,
    senders: BTreeSet<PartyId>,
    complete: bool,
}

impl Recommend {
    /// `quorum` is the number of distinct RECOMMENDATION senders (`n - f`)
    /// after which the map is complete.
    pub fn new(quorum: usize) -> Self {
        Recommend {
            quorum,
            sent: false,
            map: BTreeMap::new(),
            senders: BTreeSet::new(),
            complete: false,
        }
    }

    /// Handles a PROPOSE whose proposal has already been verified.
    pub fn on_propose(&mut self, cp: CertifiedProposal) -> RecommendStep {
        self.absorb(None, cp)
    }

    /// Handles a verified RECOMMENDATION from `from`.
    pub fn on_recommendation(&mut self, from: PartyId, cp: CertifiedProposal) -> RecommendStep {
        self.absorb(Some(from), cp)
    }

    fn absorb(&mut self, recommender: Option<PartyId>, cp: CertifiedProposal) -> RecommendStep {
        let mut step = RecommendStep::default();
        if !self.sent {
            self.sent = true;
            step.broadcast = Some(Body::Recommendation { cp: cp.clone() });
        }
        let proposer = cp.proposal.proposer;
        if let std::collections::btree_map::Entry::Vacant(slot) = self.map.entry(proposer) {
            slot.insert(cp);
            step.inserted = true;
        }
        if let Some(from) = recommender {
            self.senders.insert(from);
        }
        if !self.complete && self.senders.len() >= self.quorum {
            self.complete = true;
            step.completed = true;
        }
        step
    }

    pub fn get(&self, proposer: PartyId) -> Option<&CertifiedProposal> {
        self.map.get(&proposer)
    }

    pub fn map(&self) -> &BTreeMap<PartyId, CertifiedProposal> {
        &self.map
    }

    pub fn is_complete(&self) -> bool {
        self.complete
    }

    pub fn has_recommended(&self) -> bool {
        self.sent
    }

    pub fn sender_count(&self) -> usize {
        self.senders.len()
    }
}

/// An outstanding request for a candidate's payload after it won agreement.
#[derive(Clone, Debug)]
pub struct Recovery {
    pub candidate: PartyId,
    pub proof: Option<ThresholdProof>,
}

impl Recovery {
    pub fn request(&self) -> Body {
        Body::Recover {
            candidate: self.candidate,
            proof: self.proof.clone(),
        }
    }

    /// Accepts an answer iff it certifies a payload for our candidate and,
    /// when we know the proof, it is that proof.
    pub fn accept(
        &self,
        keys: &PartyKeys,
        instance: InstanceId,
        predicate: &dyn Predicate,
        cp: &CertifiedProposal,
    ) -> bool {
        cp.proposal.proposer == self.candidate
            && self.proof.as_ref().is_none_or(|p| *p == cp.proof)
            && verify_certified(keys, instance, predicate, cp)
    }
}

/// Answer to a RECOVER if we hold the requested candidate's proposal.
pub fn answer_recover(
    held: Option<&CertifiedProposal>,
    candidate: PartyId,
    proof: Option<&ThresholdProof>,
) -> Option<Body> {
    let cp = held?;
    if cp.proposal.proposer != candidate || proof.is_some_and(|p| *p != cp.proof) {
        return None;
    }
    Some(Body::RecoverAnswer { cp: cp.clone() })
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::tcrypto::IdealOracle;
    use crate::protocol_catalogue;

    const Q: TxBatchPredicate = TxBatchPredicate { tx_size: 4 };

    fn setup(n: usize) -> Vec<PartyKeys> {
        let o = Arc::new(IdealOracle::key_setup(n, protocol_catalogue(n), b"bc").unwrap());
        PartyId::all(n).map(|p| o.party_keys(p)).collect()
    }

    fn prop(proposer: u32, byte: u8) -> Proposal {
        Proposal {
            proposer: PartyId(proposer),
            instance: 1,
            payload: vec![byte; 8],
        }
    }

    fn certify(ks: &[PartyKeys], p: &Proposal) -> CertifiedProposal {
        let shares: Vec<_> = ks[..3]
            .iter()
            .map(|k| k.sign(schemes::SIG, &p.signing_bytes()).unwrap())
            .collect();
        CertifiedProposal {
            proposal: p.clone(),
            proof: ks[0].combine(schemes::SIG, &p.signing_bytes(), &shares).unwrap(),
        }
    }

    #[test]
    fn predicate_examples() {
        assert!(Q.check(&[1, 0, 0, 0, 0, 0, 0, 9]));
        assert!(!Q.check(&[]));
        assert!(!Q.check(&[1, 1, 1, 1, 1]));
        assert!(!Q.check(&[1, 1, 1, 1, 0, 0, 0, 0]));
    }

    #[test]
    fn sender_requires_membership_and_validity() {
        let committee = Committee::new([PartyId(1), PartyId(2)]);
        assert_eq!(
            PvcbcSender::start(&committee, &Q, prop(3, 1)).unwrap_err(),
            BroadcastError::NotMember(PartyId(3))
        );
        assert_eq!(
            PvcbcSender::start(&committee, &Q, prop(1, 0)).unwrap_err(),
            BroadcastError::InvalidPayload(PartyId(1))
        );
        let (_, body) = PvcbcSender::start(&committee, &Q, prop(1, 1)).unwrap();
        assert!(matches!(body, Body::VcbcSend { .. }));
    }

    #[test]
    fn proof_forms_at_n_minus_f_replies() {
        let ks = setup(4);
        let committee = Committee::new([PartyId(1), PartyId(2)]);
        let p = prop(1, 7);
        let (mut sender, _) = PvcbcSender::start(&committee, &Q, p.clone()).unwrap();
        let mut signers: Vec<PvcbcSigner> = (0..4).map(|_| PvcbcSigner::new()).collect();
        let mut replies = Vec::new();
        for (i, s) in signers.iter_mut().enumerate() {
            if let Some(Body::VcbcReply { share }) =
                s.on_request(&ks[i], 1, &committee, &Q, PartyId(1), p.clone())
            {
                replies.push((PartyId::from_index(i), share));
            }
        }
        assert_eq!(replies.len(), 4);
        assert!(sender.on_reply(&ks[0], replies[0].0, replies[0].1.clone()).is_none());
        // A duplicate does not count twice.
        assert!(sender.on_reply(&ks[0], replies[0].0, replies[0].1.clone()).is_none());
        assert!(sender.on_reply(&ks[0], replies[1].0, replies[1].1.clone()).is_none());
        let Some(Body::Propose { cp }) = sender.on_reply(&ks[0], replies[2].0, replies[2].1.clone())
        else {
            panic!("expected PROPOSE");
        };
        assert!(verify_certified(&ks[3], 1, &Q, &cp));
        assert!(sender.on_reply(&ks[0], replies[3].0, replies[3].1.clone()).is_none());
    }

    #[test]
    fn shares_over_another_payload_never_count() {
        let ks = setup(4);
        let committee = Committee::new([PartyId(1), PartyId(2)]);
        let (mut sender, _) = PvcbcSender::start(&committee, &Q, prop(1, 7)).unwrap();
        for (i, k) in ks.iter().enumerate() {
            let share = k.sign(schemes::SIG, &prop(1, 8).signing_bytes()).unwrap();
            assert!(sender.on_reply(k, PartyId::from_index(i), share).is_none());
        }
        assert!(sender.output().is_none());
    }

    #[test]
    fn signer_guards() {
        let ks = setup(4);
        let committee = Committee::new([PartyId(1), PartyId(2)]);
        let mut s = PvcbcSigner::new();
        assert!(s.on_request(&ks[0], 1, &committee, &Q, PartyId(3), prop(3, 1)).is_none());
        assert!(s.on_request(&ks[0], 1, &committee, &Q, PartyId(2), prop(1, 1)).is_none());
        assert!(s.on_request(&ks[0], 1, &committee, &Q, PartyId(1), prop(1, 1)).is_some());
        assert!(s.on_request(&ks[0], 1, &committee, &Q, PartyId(1), prop(1, 2)).is_none());
        assert_eq!(s.signed(PartyId(1)), Some(&prop(1, 1)));
        assert_eq!(s.dropped(), 3);
    }

    #[test]
    fn equivocation_cannot_certify_two_payloads() {
        // Oracle: every split of 4 honest signers between payloads A and B.
        let ks = setup(4);
        let committee = Committee::new([PartyId(1), PartyId(2)]);
        let (a, b) = (prop(1, 0xA), prop(1, 0xB));
        for mask in 0u8..16 {
            let mut for_a = Vec::new();
            let mut for_b = Vec::new();
            for i in 0..4 {
                let mut signer = PvcbcSigner::new();
                let (first, second) = if mask & (1 << i) != 0 { (&a, &b) } else { (&b, &a) };
                for p in [first, second] {
                    if let Some(Body::VcbcReply { share }) =
                        signer.on_request(&ks[i], 1, &committee, &Q, PartyId(1), p.clone())
                    {
                        if p == &a { for_a.push(share) } else { for_b.push(share) }
                    }
                }
            }
            let pa = ks[0].combine(schemes::SIG, &a.signing_bytes(), &for_a).is_ok();
            let pb = ks[0].combine(schemes::SIG, &b.signing_bytes(), &for_b).is_ok();
            assert!(!(pa && pb), "mask {mask:04b} certified both payloads");
        }
    }

    #[test]
    fn recommend_relays_once_and_counts_distinct_senders() {
        let ks = setup(4);
        let cp1 = certify(&ks, &prop(1, 1));
        let cp2 = certify(&ks, &prop(2, 2));
        let mut r = Recommend::new(3);
        let step = r.on_propose(cp1.clone());
        assert!(matches!(step.broadcast, Some(Body::Recommendation { .. })));
        assert!(step.inserted && !step.completed);
        let step = r.on_recommendation(PartyId(2), cp2.clone());
        assert!(step.broadcast.is_none() && step.inserted);
        assert!(!r.on_recommendation(PartyId(2), cp1.clone()).completed);
        assert_eq!(r.sender_count(), 1);
        r.on_recommendation(PartyId(3), cp1.clone());
        let step = r.on_recommendation(PartyId(4), cp1);
        assert!(step.completed && r.is_complete());
        assert_eq!(r.map().len(), 2);
    }

    #[test]
    fn recovery_rejects_forged_answers() {
        let ks = setup(4);
        let cp = certify(&ks, &prop(2, 5));
        let rec = Recovery {
            candidate: PartyId(2),
            proof: None,
        };
        assert!(rec.accept(&ks[0], 1, &Q, &cp));
        let mut forged = cp.clone();
        forged.proposal.payload = vec![6; 8];
        assert!(!rec.accept(&ks[0], 1, &Q, &forged));
        let other = certify(&ks, &prop(1, 5));
        assert!(!rec.accept(&ks[0], 1, &Q, &other));
        assert!(matches!(
            answer_recover(Some(&cp), PartyId(2), None),
            Some(Body::RecoverAnswer { .. })
        ));
        assert!(answer_recover(Some(&cp), PartyId(1), None).is_none());
        assert!(answer_recover(None, PartyId(2), None).is_none());
    }
}
