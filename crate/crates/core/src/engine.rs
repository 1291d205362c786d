//! Per-party protocol engine.
//!
//! Each instance proceeds through committee selection, broadcast of the
//! members' proposals, the recommend relay, random ordering of the committee
//! and then sequential agreement: for every member in order, parties exchange
//! a VOTE saying whether they hold that member's certified proposal and run a
//! biased ABBA on it. The first ABBA deciding 1 fixes the output.
//!
//! The engine is a pure state machine: inputs are delivered messages and timer
//! expiries, outputs are [`Action`]s for the surrounding runtime. Instances run
//! one after another; messages for later instances are buffered until
//! [`PartyEngine::start_instance`] is called for them, and messages that need
//! state not yet available (the committee, the order, a later candidate) are
//! deferred and retried on progress.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use thiserror::Error;

use crate::abba::{Abba, AbbaConfig, AbbaError, AbbaInput, AbbaStep};
use crate::broadcast::{
    answer_recover, verify_certified, BroadcastError, Predicate, PvcbcSender, PvcbcSigner,
    Recommend, Recovery,
};
use crate::committee::{Committee, CommitteeSelection, RandomOrder};
use crate::message::{Body, CertifiedProposal, CoinKind, Message, Proposal};
use crate::tcrypto::{PartyKeys, ThresholdProof};
use crate::{max_faults, InstanceId, PartyId};

/// Simulated time units between RECOVER re-broadcasts.
pub const RECOVERY_TIMEOUT: u64 = 4;

#[derive(Clone, Debug)]
pub struct EngineConfig {
    pub n: usize,
    pub f: usize,
    /// Committee size; `f + 1` unless overridden.
    pub kappa: usize,
    pub keys: PartyKeys,
    pub predicate: Arc<dyn Predicate>,
    pub recovery_timeout: u64,
}

impl EngineConfig {
    pub fn new(n: usize, keys: PartyKeys, predicate: Arc<dyn Predicate>) -> Self {
        let f = max_faults(n);
        EngineConfig {
            n,
            f,
            kappa: f + 1,
            keys,
            predicate,
            recovery_timeout: RECOVERY_TIMEOUT,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Timer {
    Recovery {
        instance: InstanceId,
        candidate: PartyId,
    },
}

/// The value an instance decided.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DecidedValue {
    pub instance: InstanceId,
    pub proposer: PartyId,
    pub payload: Vec<u8>,
    pub proof: ThresholdProof,
    /// Number of ABBA instances run, i.e. the 1-based index of the winner.
    pub iterations: usize,
    /// ABBA round in which the winning instance decided.
    pub abba_round: u32,
}

/// Observable progress points, reported for metrics and assertions.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Milestone {
    CommitteeSelected {
        instance: InstanceId,
        committee: Committee,
    },
    ProposalCertified {
        instance: InstanceId,
    },
    RecommendationsComplete {
        instance: InstanceId,
    },
    PermutationReady {
        instance: InstanceId,
        order: Vec<PartyId>,
    },
    EnteredAgreement {
        instance: InstanceId,
    },
    AbbaDecided {
        instance: InstanceId,
        candidate: PartyId,
        index: usize,
        bit: bool,
        round: u32,
    },
    RecoveryStarted {
        instance: InstanceId,
        candidate: PartyId,
    },
    Decided(DecidedValue),
}

#[derive(Clone, Debug, PartialEq)]
pub enum Action {
    Send { to: PartyId, msg: Message },
    /// To every party, including the sender.
    Broadcast(Message),
    SetTimer { delay: u64, timer: Timer },
    Note(Milestone),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EngineError {
    #[error("instance {requested} cannot start: current is {current:?}, decided: {decided}")]
    InstanceOrder {
        requested: InstanceId,
        current: Option<InstanceId>,
        decided: bool,
    },
    #[error("instance {instance}: agreement ran past the last candidate")]
    CandidatesExhausted { instance: InstanceId },
    #[error("instance {instance}, candidate {candidate}: {source}")]
    Abba {
        instance: InstanceId,
        candidate: PartyId,
        source: AbbaError,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Phase {
    Selecting,
    Broadcasting,
    Ordering,
    Agreeing,
    Decided,
}

#[derive(Debug, Default)]
struct VoteState {
    u: bool,
    payload: Option<CertifiedProposal>,
    senders: BTreeSet<PartyId>,
    abba_started: bool,
}

#[derive(Debug)]
struct InstanceState {
    id: InstanceId,
    phase: Phase,
    payload: Vec<u8>,
    cs: CommitteeSelection,
    committee: Option<Committee>,
    sender: Option<PvcbcSender>,
    signer: PvcbcSigner,
    recommend: Recommend,
    order: RandomOrder,
    permutation: Option<Vec<PartyId>>,
    index: usize,
    votes: VoteState,
    abba: Option<Abba>,
    deferred: Vec<(PartyId, Body)>,
    recovery: Option<Recovery>,
}

/// One party's protocol state across instances.
#[derive(Debug)]
pub struct PartyEngine {
    cfg: EngineConfig,
    current: Option<InstanceState>,
    future: BTreeMap<InstanceId, Vec<(PartyId, Message)>>,
    held: BTreeMap<InstanceId, BTreeMap<PartyId, CertifiedProposal>>,
    decided: BTreeMap<InstanceId, DecidedValue>,
    dropped: usize,
}

impl PartyEngine {
    pub fn new(cfg: EngineConfig) -> Self {
        PartyEngine {
            cfg,
            current: None,
            future: BTreeMap::new(),
            held: BTreeMap::new(),
            decided: BTreeMap::new(),
            dropped: 0,
        }
    }

    pub fn me(&self) -> PartyId {
        self.cfg.keys.me()
    }

    pub fn config(&self) -> &EngineConfig {
        &self.cfg
    }

    pub fn current_instance(&self) -> Option<InstanceId> {
        self.current.as_ref().map(|s| s.id)
    }

    pub fn phase(&self) -> Option<Phase> {
        self.current.as_ref().map(|s| s.phase)
    }

    pub fn poll_decided(&self, instance: InstanceId) -> Option<&DecidedValue> {
        self.decided.get(&instance)
    }

    /// Proposers whose certified proposal is in this party's recommendation
    /// map for `instance`.
    pub fn map_holdings(&self, instance: InstanceId) -> BTreeSet<PartyId> {
        match &self.current {
            Some(s) if s.id == instance => s.recommend.map().keys().copied().collect(),
            _ => BTreeSet::new(),
        }
    }

    pub fn committee(&self, instance: InstanceId) -> Option<&Committee> {
        self.current
            .as_ref()
            .filter(|s| s.id == instance)
            .and_then(|s| s.committee.as_ref())
    }

    /// Messages discarded as stale, malformed or unverifiable.
    pub fn dropped(&self) -> usize {
        self.dropped
    }

    pub fn start_instance(
        &mut self,
        instance: InstanceId,
        payload: Vec<u8>,
    ) -> Result<Vec<Action>, EngineError> {
        if let Some(cur) = &self.current {
            if instance <= cur.id || cur.phase != Phase::Decided {
                return Err(EngineError::InstanceOrder {
                    requested: instance,
                    current: Some(cur.id),
                    decided: cur.phase == Phase::Decided,
                });
            }
        }
        let n = self.cfg.n;
        self.current = Some(InstanceState {
            id: instance,
            phase: Phase::Selecting,
            payload,
            cs: CommitteeSelection::new(instance, n, self.cfg.kappa),
            committee: None,
            sender: None,
            signer: PvcbcSigner::new(),
            recommend: Recommend::new(n - self.cfg.f),
            order: RandomOrder::new(instance, n),
            permutation: None,
            index: 0,
            votes: VoteState::default(),
            abba: None,
            deferred: Vec::new(),
            recovery: None,
        });
        self.future.retain(|&i, _| i >= instance);
        let mut out = Vec::new();
        let keys = self.cfg.keys.clone();
        let (body, committee) = self.st().cs.start(&keys);
        if let Some(body) = body {
            out.push(Action::Broadcast(Message::new(instance, body)));
        }
        if let Some(c) = committee {
            self.on_committee(c, &mut out)?;
        }
        for (from, msg) in self.future.remove(&instance).unwrap_or_default() {
            self.dispatch(from, msg.body, &mut out)?;
        }
        Ok(out)
    }

    pub fn deliver(&mut self, from: PartyId, msg: Message) -> Result<Vec<Action>, EngineError> {
        let mut out = Vec::new();
        match self.current_instance() {
            Some(cur) if msg.instance == cur => self.dispatch(from, msg.body, &mut out)?,
            Some(cur) if msg.instance < cur => self.on_past(from, msg, &mut out),
            _ => self.future.entry(msg.instance).or_default().push((from, msg)),
        }
        Ok(out)
    }

    pub fn on_timer(&mut self, timer: Timer) -> Vec<Action> {
        let Timer::Recovery {
            instance,
            candidate,
        } = timer;
        let mut out = Vec::new();
        if let Some(s) = &self.current {
            if let Some(rec) = s.recovery.as_ref().filter(|r| r.candidate == candidate) {
                if s.id == instance {
                    out.push(Action::Broadcast(Message::new(instance, rec.request())));
                    out.push(Action::SetTimer {
                        delay: self.cfg.recovery_timeout,
                        timer: Timer::Recovery {
                            instance,
                            candidate,
                        },
                    });
                }
            }
        }
        out
    }

    fn st(&mut self) -> &mut InstanceState {
        self.current.as_mut().expect("an instance is running")
    }

    fn hold(&mut self, cp: &CertifiedProposal) {
        self.held
            .entry(cp.proposal.instance)
            .or_default()
            .entry(cp.proposal.proposer)
            .or_insert_with(|| cp.clone());
    }

    fn held_for(&self, instance: InstanceId, proposer: PartyId) -> Option<&CertifiedProposal> {
        self.held.get(&instance).and_then(|m| m.get(&proposer))
    }

    fn on_past(&mut self, from: PartyId, msg: Message, out: &mut Vec<Action>) {
        match msg.body {
            Body::Recover { candidate, proof } => {
                if let Some(body) =
                    answer_recover(self.held_for(msg.instance, candidate), candidate, proof.as_ref())
                {
                    out.push(Action::Send {
                        to: from,
                        msg: Message::new(msg.instance, body),
                    });
                }
            }
            _ => self.dropped += 1,
        }
    }

    fn verified(&self, cp: &CertifiedProposal) -> bool {
        let instance = self.current.as_ref().map_or(0, |s| s.id);
        verify_certified(&self.cfg.keys, instance, self.cfg.predicate.as_ref(), cp)
    }

    fn dispatch(
        &mut self,
        from: PartyId,
        body: Body,
        out: &mut Vec<Action>,
    ) -> Result<(), EngineError> {
        let keys = self.cfg.keys.clone();
        let instance = self.st().id;
        match body {
            Body::Share {
                kind: CoinKind::Cs,
                share,
            } => {
                if let Some(c) = self.st().cs.on_share(&keys, from, share) {
                    self.on_committee(c, out)?;
                }
            }
            Body::Share {
                kind: CoinKind::Order,
                share,
            } => {
                if let Some(order) = self.st().order.on_share(&keys, from, share) {
                    self.on_permutation(order, out)?;
                }
            }
            Body::VcbcSend { proposal } => {
                let predicate = self.cfg.predicate.clone();
                let s = self.st();
                let Some(committee) = s.committee.clone() else {
                    s.deferred.push((from, Body::VcbcSend { proposal }));
                    return Ok(());
                };
                if let Some(reply) = s.signer.on_request(
                    &keys,
                    instance,
                    &committee,
                    predicate.as_ref(),
                    from,
                    proposal,
                ) {
                    out.push(Action::Send {
                        to: from,
                        msg: Message::new(instance, reply),
                    });
                }
            }
            Body::VcbcReply { share } => {
                let propose = self
                    .st()
                    .sender
                    .as_mut()
                    .and_then(|snd| snd.on_reply(&keys, from, share));
                if let Some(body) = propose {
                    out.push(Action::Note(Milestone::ProposalCertified { instance }));
                    out.push(Action::Broadcast(Message::new(instance, body)));
                }
            }
            Body::Propose { cp } => {
                if cp.proposal.proposer != from || !self.verified(&cp) {
                    self.dropped += 1;
                    return Ok(());
                }
                self.hold(&cp);
                let step = self.st().recommend.on_propose(cp);
                self.after_recommend(step, out)?;
            }
            Body::Recommendation { cp } => {
                if !self.verified(&cp) {
                    self.dropped += 1;
                    return Ok(());
                }
                self.hold(&cp);
                let step = self.st().recommend.on_recommendation(from, cp);
                self.after_recommend(step, out)?;
            }
            Body::Vote {
                candidate,
                u,
                payload,
            } => self.on_vote(from, candidate, u, payload, out)?,
            Body::Abba { candidate, msg } => {
                match self.candidate_slot(candidate) {
                    Slot::Wait => self.st().deferred.push((from, Body::Abba { candidate, msg })),
                    Slot::Stale => self.dropped += 1,
                    Slot::Current => {
                        let step = self
                            .st()
                            .abba
                            .as_mut()
                            .expect("current candidate has an ABBA")
                            .handle(from, msg)
                            .map_err(|source| EngineError::Abba {
                                instance,
                                candidate,
                                source,
                            })?;
                        self.after_abba(step, out)?;
                    }
                }
            }
            Body::Recover { candidate, proof } => {
                if let Some(body) =
                    answer_recover(self.held_for(instance, candidate), candidate, proof.as_ref())
                {
                    out.push(Action::Send {
                        to: from,
                        msg: Message::new(instance, body),
                    });
                }
            }
            Body::RecoverAnswer { cp } => {
                let predicate = self.cfg.predicate.clone();
                let accepted = self
                    .st()
                    .recovery
                    .as_ref()
                    .is_some_and(|r| r.accept(&keys, instance, predicate.as_ref(), &cp));
                if accepted {
                    self.hold(&cp);
                    self.st().recovery = None;
                    let (iterations, round) = self.winner_stats();
                    self.decide(cp, iterations, round, out);
                } else {
                    self.dropped += 1;
                }
            }
        }
        Ok(())
    }

    fn after_recommend(
        &mut self,
        step: crate::broadcast::RecommendStep,
        out: &mut Vec<Action>,
    ) -> Result<(), EngineError> {
        let instance = self.st().id;
        if let Some(body) = step.broadcast {
            out.push(Action::Broadcast(Message::new(instance, body)));
        }
        if step.completed {
            out.push(Action::Note(Milestone::RecommendationsComplete { instance }));
            self.try_order(out)?;
        }
        Ok(())
    }

    fn on_committee(&mut self, committee: Committee, out: &mut Vec<Action>) -> Result<(), EngineError> {
        let me = self.me();
        let predicate = self.cfg.predicate.clone();
        let s = self.st();
        let instance = s.id;
        s.committee = Some(committee.clone());
        s.phase = Phase::Broadcasting;
        out.push(Action::Note(Milestone::CommitteeSelected {
            instance,
            committee: committee.clone(),
        }));
        if committee.contains(me) {
            let proposal = Proposal {
                proposer: me,
                instance,
                payload: s.payload.clone(),
            };
            match PvcbcSender::start(&committee, predicate.as_ref(), proposal) {
                Ok((sender, body)) => {
                    s.sender = Some(sender);
                    out.push(Action::Broadcast(Message::new(instance, body)));
                }
                // An invalid own payload only forfeits our proposal.
                Err(BroadcastError::InvalidPayload(_)) => {}
                Err(BroadcastError::NotMember(_)) => unreachable!("membership checked"),
            }
        }
        self.try_order(out)?;
        self.retry_deferred(out)
    }

    fn try_order(&mut self, out: &mut Vec<Action>) -> Result<(), EngineError> {
        let keys = self.cfg.keys.clone();
        let s = self.st();
        if s.phase != Phase::Broadcasting || !s.recommend.is_complete() {
            return Ok(());
        }
        let Some(committee) = s.committee.clone() else {
            return Ok(());
        };
        s.phase = Phase::Ordering;
        let instance = s.id;
        let (body, order) = s.order.start(&keys, committee);
        if let Some(body) = body {
            out.push(Action::Broadcast(Message::new(instance, body)));
        }
        if let Some(order) = order {
            self.on_permutation(order, out)?;
        }
        Ok(())
    }

    fn on_permutation(&mut self, order: Vec<PartyId>, out: &mut Vec<Action>) -> Result<(), EngineError> {
        let s = self.st();
        let instance = s.id;
        s.permutation = Some(order.clone());
        s.phase = Phase::Agreeing;
        out.push(Action::Note(Milestone::PermutationReady { instance, order }));
        out.push(Action::Note(Milestone::EnteredAgreement { instance }));
        self.enter_candidate(0, out)?;
        self.retry_deferred(out)
    }

    fn enter_candidate(&mut self, index: usize, out: &mut Vec<Action>) -> Result<(), EngineError> {
        let instance = self.st().id;
        let perm_len = self.st().permutation.as_ref().map_or(0, Vec::len);
        if index >= perm_len || index >= self.cfg.kappa {
            return Err(EngineError::CandidatesExhausted { instance });
        }
        let candidate = self.st().permutation.as_ref().expect("ordered")[index];
        let held = self.held_for(instance, candidate).cloned();
        let abba = Abba::new(AbbaConfig {
            instance,
            candidate,
            n: self.cfg.n,
            f: self.cfg.f,
            keys: self.cfg.keys.clone(),
            predicate: self.cfg.predicate.clone(),
        });
        let s = self.st();
        s.index = index;
        s.abba = Some(abba);
        s.votes = VoteState {
            u: held.is_some(),
            payload: held.clone(),
            ..VoteState::default()
        };
        out.push(Action::Broadcast(Message::new(
            instance,
            Body::Vote {
                candidate,
                u: held.is_some(),
                payload: held,
            },
        )));
        Ok(())
    }

    fn candidate_slot(&mut self, candidate: PartyId) -> Slot {
        let s = self.st();
        let Some(perm) = &s.permutation else {
            return Slot::Wait;
        };
        match perm.iter().position(|&c| c == candidate) {
            None => Slot::Stale,
            Some(i) if i < s.index => Slot::Stale,
            Some(i) if i > s.index => Slot::Wait,
            Some(_) => Slot::Current,
        }
    }

    fn on_vote(
        &mut self,
        from: PartyId,
        candidate: PartyId,
        u: bool,
        payload: Option<CertifiedProposal>,
        out: &mut Vec<Action>,
    ) -> Result<(), EngineError> {
        match self.candidate_slot(candidate) {
            Slot::Wait => {
                self.st().deferred.push((
                    from,
                    Body::Vote {
                        candidate,
                        u,
                        payload,
                    },
                ));
                return Ok(());
            }
            Slot::Stale => {
                self.dropped += 1;
                return Ok(());
            }
            Slot::Current => {}
        }
        if u {
            let valid = payload
                .as_ref()
                .is_some_and(|cp| cp.proposal.proposer == candidate && self.verified(cp));
            if !valid {
                self.dropped += 1;
                return Ok(());
            }
            let cp = payload.expect("checked above");
            self.hold(&cp);
            let votes = &mut self.st().votes;
            if !votes.abba_started && !votes.u {
                votes.u = true;
                votes.payload = Some(cp);
            }
        }
        let quorum = self.cfg.n - self.cfg.f;
        let votes = &mut self.st().votes;
        votes.senders.insert(from);
        if votes.abba_started || votes.senders.len() < quorum {
            return Ok(());
        }
        votes.abba_started = true;
        let input = match votes.payload.clone() {
            Some(cp) if votes.u => AbbaInput::one(cp),
            _ => AbbaInput::zero(),
        };
        let instance = self.st().id;
        let step = self
            .st()
            .abba
            .as_mut()
            .expect("current candidate has an ABBA")
            .start(input)
            .map_err(|source| EngineError::Abba {
                instance,
                candidate,
                source,
            })?;
        self.after_abba(step, out)
    }

    fn after_abba(&mut self, step: AbbaStep, out: &mut Vec<Action>) -> Result<(), EngineError> {
        let s = self.st();
        let instance = s.id;
        let index = s.index;
        let candidate = s.abba.as_ref().expect("running").candidate();
        for msg in step.broadcasts {
            out.push(Action::Broadcast(Message::new(
                instance,
                Body::Abba { candidate, msg },
            )));
        }
        let Some(decision) = step.decided else {
            return Ok(());
        };
        out.push(Action::Note(Milestone::AbbaDecided {
            instance,
            candidate,
            index,
            bit: decision.bit,
            round: decision.round,
        }));
        if s.phase == Phase::Decided {
            return Ok(());
        }
        if !decision.bit {
            self.enter_candidate(index + 1, out)?;
            return self.retry_deferred(out);
        }
        let payload = decision
            .payload
            .clone()
            .or_else(|| self.st().votes.payload.clone())
            .or_else(|| self.held_for(instance, candidate).cloned());
        match payload {
            Some(cp) => {
                self.hold(&cp);
                self.decide(cp, index + 1, decision.round, out);
            }
            None => {
                let rec = Recovery {
                    candidate,
                    proof: None,
                };
                out.push(Action::Note(Milestone::RecoveryStarted {
                    instance,
                    candidate,
                }));
                out.push(Action::Broadcast(Message::new(instance, rec.request())));
                out.push(Action::SetTimer {
                    delay: self.cfg.recovery_timeout,
                    timer: Timer::Recovery {
                        instance,
                        candidate,
                    },
                });
                self.st().recovery = Some(rec);
            }
        }
        Ok(())
    }

    fn winner_stats(&mut self) -> (usize, u32) {
        let s = self.st();
        let round = s
            .abba
            .as_ref()
            .and_then(|a| a.decision())
            .map_or(0, |d| d.round);
        (s.index + 1, round)
    }

    fn decide(&mut self, cp: CertifiedProposal, iterations: usize, abba_round: u32, out: &mut Vec<Action>) {
        let s = self.st();
        if s.phase == Phase::Decided {
            return;
        }
        s.phase = Phase::Decided;
        let value = DecidedValue {
            instance: s.id,
            proposer: cp.proposal.proposer,
            payload: cp.proposal.payload,
            proof: cp.proof,
            iterations,
            abba_round,
        };
        self.decided.insert(value.instance, value.clone());
        out.push(Action::Note(Milestone::Decided(value)));
    }

    fn retry_deferred(&mut self, out: &mut Vec<Action>) -> Result<(), EngineError> {
        let pending = std::mem::take(&mut self.st().deferred);
        for (from, body) in pending {
            self.dispatch(from, body, out)?;
        }
        Ok(())
    }
}

enum Slot {
    /// The message will become relevant later.
    Wait,
    /// The message concerns a candidate we are done with.
    Stale,
    Current,
}

#[cfg(test)]
mod tests {
    use std::collections::VecDeque;

    use super::*;
    use crate::broadcast::TxBatchPredicate;
    use crate::message::MessageKind;
    use crate::tcrypto::IdealOracle;
    use crate::protocol_catalogue;

    fn engines(n: usize) -> Vec<PartyEngine> {
        let o = Arc::new(IdealOracle::key_setup(n, protocol_catalogue(n), b"engine").unwrap());
        PartyId::all(n)
            .map(|p| {
                PartyEngine::new(EngineConfig::new(
                    n,
                    o.party_keys(p),
                    Arc::new(TxBatchPredicate { tx_size: 4 }),
                ))
            })
            .collect()
    }

    fn payload(p: u32) -> Vec<u8> {
        vec![p as u8; 8]
    }

    /// FIFO delivery to every party; returns decided values.
    fn run(engines: &mut [PartyEngine], live: &[bool]) -> Vec<Option<DecidedValue>> {
        let n = engines.len();
        let mut queue: VecDeque<(PartyId, PartyId, Message)> = VecDeque::new();
        let push = |q: &mut VecDeque<_>, from: PartyId, acts: Vec<Action>| {
            for a in acts {
                match a {
                    Action::Send { to, msg } => q.push_back((from, to, msg)),
                    Action::Broadcast(msg) => {
                        for to in PartyId::all(n) {
                            q.push_back((from, to, msg.clone()));
                        }
                    }
                    _ => {}
                }
            }
        };
        for (i, e) in engines.iter_mut().enumerate() {
            if live[i] {
                let acts = e.start_instance(1, payload(i as u32 + 1)).unwrap();
                push(&mut queue, e.me(), acts);
            }
        }
        while let Some((from, to, msg)) = queue.pop_front() {
            if !live[to.index()] {
                continue;
            }
            let acts = engines[to.index()].deliver(from, msg).unwrap();
            push(&mut queue, to, acts);
        }
        engines.iter().map(|e| e.poll_decided(1).cloned()).collect()
    }

    #[test]
    fn all_honest_decide_the_same_member_proposal() {
        let mut es = engines(4);
        let out = run(&mut es, &[true; 4]);
        let first = out[0].clone().unwrap();
        assert!(out.iter().all(|d| d.as_ref() == Some(&first)));
        assert_eq!(first.payload, payload(first.proposer.0));
        assert_eq!(first.iterations, 1);
    }

    #[test]
    fn first_action_is_a_committee_share() {
        let mut es = engines(4);
        let acts = es[0].start_instance(1, payload(1)).unwrap();
        assert_eq!(acts.len(), 1);
        match &acts[0] {
            Action::Broadcast(m) => assert_eq!(m.kind(), MessageKind::CsShare),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn one_crashed_party_does_not_block() {
        let mut es = engines(4);
        let out = run(&mut es, &[true, true, true, false]);
        let first = out[0].clone().unwrap();
        assert!(out[..3].iter().all(|d| d.as_ref() == Some(&first)));
    }

    #[test]
    fn invalid_own_payload_still_participates() {
        let mut es = engines(4);
        let n = 4;
        let mut queue: VecDeque<(PartyId, PartyId, Message)> = VecDeque::new();
        for (i, e) in es.iter_mut().enumerate() {
            // Every payload is all zero: nobody can propose, nobody decides,
            // but every party still selects the committee.
            let acts = e.start_instance(1, vec![0; 8]).unwrap();
            for a in acts {
                if let Action::Broadcast(msg) = a {
                    for to in PartyId::all(n) {
                        queue.push_back((PartyId::from_index(i), to, msg.clone()));
                    }
                }
            }
        }
        while let Some((from, to, msg)) = queue.pop_front() {
            for a in es[to.index()].deliver(from, msg).unwrap() {
                if let Action::Broadcast(msg) = a {
                    for t in PartyId::all(n) {
                        queue.push_back((to, t, msg.clone()));
                    }
                }
            }
        }
        assert!(es.iter().all(|e| e.phase() == Some(Phase::Broadcasting)));
    }

    #[test]
    fn instances_must_be_sequential() {
        let mut es = engines(4);
        es[0].start_instance(1, payload(1)).unwrap();
        assert!(matches!(
            es[0].start_instance(2, payload(1)),
            Err(EngineError::InstanceOrder { requested: 2, .. })
        ));
    }

    #[test]
    fn future_instance_messages_are_buffered() {
        let mut es = engines(4);
        let acts = es[1].start_instance(1, payload(2)).unwrap();
        let Action::Broadcast(share) = acts[0].clone() else { panic!() };
        // Party 1 has not started anything yet.
        assert!(es[0].deliver(PartyId(2), share).unwrap().is_empty());
        let acts = es[0].start_instance(1, payload(1)).unwrap();
        // Own share plus the buffered one reach f + 1 = 2: committee selected.
        assert!(acts
            .iter()
            .any(|a| matches!(a, Action::Note(Milestone::CommitteeSelected { .. }))));
    }
}
