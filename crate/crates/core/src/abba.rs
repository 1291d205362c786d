//! Asynchronous binary Byzantine agreement biased towards 1.
//!
//! One instance decides whether the current candidate's proposal is adopted.
//! The protocol runs a pre-processing step followed by rounds of
//! pre-vote / main-vote / coin, in the style of Cachin, Kursawe, Petzold and
//! Shoup, with every vote carrying a sign-share and a justification:
//!
//! * a **pre-process** 1 counts only with a certified proposal for the
//!   candidate; any such 1 makes the round-1 pre-vote 1 (the bias);
//! * a round-1 **pre-vote** is justified by the certified proposal (1) or by a
//!   threshold signature on `n - f` pre-process 0 votes (0); a later pre-vote
//!   follows a certificate from the previous round, or the previous round's
//!   coin when the previous round's main-votes were all abstain;
//! * a **main-vote** for `b` carries a threshold signature on `n - f`
//!   pre-votes for `b`; an abstain carries one full pre-vote for each value;
//! * `n - f` main-votes for the same `b` decide `b`. The deciding party
//!   combines them into a [`DecideCertificate`] and broadcasts it, so that
//!   laggards adopt the decision in whatever phase they are in.
//!
//! Messages for later rounds are buffered and validated once their round is
//! reached; messages for earlier rounds are dropped.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::broadcast::{verify_certified, Predicate};
use crate::message::{CertifiedProposal, MessageKind};
use crate::tcrypto::{CoinShare, CryptoError, PartyKeys, SignShare, ThresholdProof, DIGEST_LEN};
use crate::{schemes, InstanceId, PartyId};

/// Value of a main-vote.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum MainValue {
    Zero,
    One,
    Abstain,
}

impl MainValue {
    pub fn from_bit(bit: bool) -> Self {
        if bit {
            MainValue::One
        } else {
            MainValue::Zero
        }
    }

    pub fn bit(self) -> Option<bool> {
        match self {
            MainValue::Zero => Some(false),
            MainValue::One => Some(true),
            MainValue::Abstain => None,
        }
    }

    fn code(self) -> u8 {
        match self {
            MainValue::Zero => 0,
            MainValue::One => 1,
            MainValue::Abstain => 2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum PreVoteJustification {
    /// Round 1, bit 1: a certified proposal for the candidate.
    Biased(CertifiedProposal),
    /// Round 1, bit 0: threshold signature on `n - f` pre-process 0 votes.
    PreProcessZero(ThresholdProof),
    /// Round `r > 1`: threshold signature on `n - f` pre-votes for the same
    /// bit in round `r - 1`.
    PriorCertificate(ThresholdProof),
    /// Round `r > 1`: threshold signature on `n - f` abstain main-votes in
    /// round `r - 1`; the bit must equal that round's coin.
    CoinAbstain(ThresholdProof),
}

/// A complete, self-verifying pre-vote.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreVoteRecord {
    pub signer: PartyId,
    pub round: u32,
    pub bit: bool,
    pub justification: PreVoteJustification,
    pub share: SignShare,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum MainVoteJustification {
    /// Threshold signature on `n - f` pre-votes for the voted bit.
    Certificate(ThresholdProof),
    /// One valid pre-vote for each bit.
    Abstain {
        zero: Box<PreVoteRecord>,
        one: Box<PreVoteRecord>,
    },
}

/// Transferable proof of a decision.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecideCertificate {
    pub bit: bool,
    pub round: u32,
    /// Threshold signature on `n - f` main-votes for `bit` in `round`.
    pub cert: ThresholdProof,
    /// The candidate's proposal, when the sender holds it and `bit` is 1.
    pub payload: Option<CertifiedProposal>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum AbbaMessage {
    PreProcess {
        bit: bool,
        justification: Option<CertifiedProposal>,
        share: SignShare,
    },
    PreVote {
        vote: PreVoteRecord,
        payload: Option<CertifiedProposal>,
    },
    MainVote {
        round: u32,
        value: MainValue,
        justification: MainVoteJustification,
        share: SignShare,
        payload: Option<CertifiedProposal>,
    },
    Coin {
        round: u32,
        share: CoinShare,
    },
    Decide(DecideCertificate),
}

fn opt_payload(cp: &Option<CertifiedProposal>) -> usize {
    cp.as_ref().map_or(0, |cp| cp.proposal.payload.len())
}

fn opt_proof(cp: &Option<CertifiedProposal>) -> usize {
    cp.as_ref().map_or(0, |_| DIGEST_LEN)
}

impl PreVoteJustification {
    fn payload_bytes(&self) -> usize {
        match self {
            PreVoteJustification::Biased(cp) => cp.proposal.payload.len(),
            _ => 0,
        }
    }
}

impl PreVoteRecord {
    fn payload_bytes(&self) -> usize {
        self.justification.payload_bytes()
    }

    // Share plus one proof in every justification variant.
    fn proof_bytes(&self) -> usize {
        2 * DIGEST_LEN
    }
}

impl AbbaMessage {
    /// Round of a round-scoped message; pre-process and decide are unscoped.
    pub fn round(&self) -> Option<u32> {
        match self {
            AbbaMessage::PreVote { vote, .. } => Some(vote.round),
            AbbaMessage::MainVote { round, .. } | AbbaMessage::Coin { round, .. } => Some(*round),
            AbbaMessage::PreProcess { .. } | AbbaMessage::Decide(_) => None,
        }
    }

    pub fn kind(&self) -> MessageKind {
        match self {
            AbbaMessage::PreProcess { .. } => MessageKind::PreProcess,
            AbbaMessage::PreVote { .. } => MessageKind::PreVote,
            AbbaMessage::MainVote { .. } => MessageKind::MainVote,
            AbbaMessage::Coin { .. } => MessageKind::Coin,
            AbbaMessage::Decide(_) => MessageKind::Decide,
        }
    }

    pub fn payload_bytes(&self) -> usize {
        match self {
            AbbaMessage::PreProcess { justification, .. } => opt_payload(justification),
            AbbaMessage::PreVote { vote, payload } => vote.payload_bytes() + opt_payload(payload),
            AbbaMessage::MainVote {
                justification,
                payload,
                ..
            } => {
                let records = match justification {
                    MainVoteJustification::Abstain { zero, one } => {
                        zero.payload_bytes() + one.payload_bytes()
                    }
                    MainVoteJustification::Certificate(_) => 0,
                };
                records + opt_payload(payload)
            }
            AbbaMessage::Coin { .. } => 0,
            AbbaMessage::Decide(d) => opt_payload(&d.payload),
        }
    }

    pub fn proof_bytes(&self) -> usize {
        match self {
            AbbaMessage::PreProcess { justification, .. } => DIGEST_LEN + opt_proof(justification),
            AbbaMessage::PreVote { vote, payload } => vote.proof_bytes() + opt_proof(payload),
            AbbaMessage::MainVote {
                justification,
                payload,
                ..
            } => {
                let just = match justification {
                    MainVoteJustification::Abstain { zero, one } => {
                        zero.proof_bytes() + one.proof_bytes()
                    }
                    MainVoteJustification::Certificate(_) => DIGEST_LEN,
                };
                DIGEST_LEN + just + opt_proof(payload)
            }
            AbbaMessage::Coin { .. } => DIGEST_LEN,
            AbbaMessage::Decide(d) => DIGEST_LEN + opt_proof(&d.payload),
        }
    }
}

/// Byte strings signed by the different votes of one instance.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct VoteDomain {
    pub instance: InstanceId,
    pub candidate: PartyId,
}

impl VoteDomain {
    fn bytes(&self, label: &str, round: u32, value: u8) -> Vec<u8> {
        let mut out = Vec::with_capacity(32);
        out.extend_from_slice(b"ABBA");
        out.extend_from_slice(&self.instance.to_be_bytes());
        out.extend_from_slice(&self.candidate.0.to_be_bytes());
        out.extend_from_slice(label.as_bytes());
        out.extend_from_slice(&round.to_be_bytes());
        out.push(value);
        out
    }

    pub fn pre_process(&self, bit: bool) -> Vec<u8> {
        self.bytes("pre-process", 0, bit as u8)
    }

    pub fn pre_vote(&self, round: u32, bit: bool) -> Vec<u8> {
        self.bytes("pre-vote", round, bit as u8)
    }

    pub fn main_vote(&self, round: u32, value: MainValue) -> Vec<u8> {
        self.bytes("main-vote", round, value.code())
    }

    pub fn coin_name(&self, round: u32) -> String {
        format!("ABBA/{}/{}/{}", self.instance, self.candidate.0, round)
    }
}

#[derive(Clone, Debug)]
pub struct AbbaConfig {
    pub instance: InstanceId,
    pub candidate: PartyId,
    pub n: usize,
    pub f: usize,
    pub keys: PartyKeys,
    pub predicate: Arc<dyn Predicate>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AbbaInput {
    pub bit: bool,
    /// Required iff `bit` is 1.
    pub justification: Option<CertifiedProposal>,
}

impl AbbaInput {
    pub fn zero() -> Self {
        AbbaInput {
            bit: false,
            justification: None,
        }
    }

    pub fn one(cp: CertifiedProposal) -> Self {
        AbbaInput {
            bit: true,
            justification: Some(cp),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AbbaDecision {
    pub bit: bool,
    pub round: u32,
    /// Present when the decision is 1 and the proposal is known locally.
    pub payload: Option<CertifiedProposal>,
    pub certificate: DecideCertificate,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct AbbaStep {
    pub broadcasts: Vec<AbbaMessage>,
    pub decided: Option<AbbaDecision>,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AbbaError {
    #[error("input 1 without a valid certified proposal")]
    InvalidInput,
    #[error("valid certificates for both 0 and 1 in round {0}")]
    ProtocolViolation(u32),
    #[error(transparent)]
    Crypto(#[from] CryptoError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Phase {
    Idle,
    PreProcess,
    PreVote,
    MainVote,
    Coin,
    Done,
}

#[derive(Clone, Debug)]
struct PreProcessRecord {
    bit: bool,
    justification: Option<CertifiedProposal>,
    share: SignShare,
}

#[derive(Clone, Debug)]
struct MainVoteRecord {
    value: MainValue,
    share: SignShare,
}

#[derive(Debug, Default)]
struct RoundState {
    pre_votes: BTreeMap<PartyId, PreVoteRecord>,
    main_votes: BTreeMap<PartyId, MainVoteRecord>,
    coin_shares: BTreeMap<PartyId, CoinShare>,
    /// Pre-vote certificates seen inside main-votes, indexed by bit.
    certs: [Option<ThresholdProof>; 2],
    coin: Option<bool>,
}

/// One ABBA instance for `(instance, candidate)`.
#[derive(Debug)]
pub struct Abba {
    cfg: AbbaConfig,
    domain: VoteDomain,
    quorum: usize,
    phase: Phase,
    round: u32,
    pre_process: BTreeMap<PartyId, PreProcessRecord>,
    rounds: BTreeMap<u32, RoundState>,
    future: BTreeMap<u32, Vec<(PartyId, AbbaMessage)>>,
    known_payload: Option<CertifiedProposal>,
    decision: Option<AbbaDecision>,
    rejected: usize,
}

impl Abba {
    pub fn new(cfg: AbbaConfig) -> Self {
        let domain = VoteDomain {
            instance: cfg.instance,
            candidate: cfg.candidate,
        };
        let quorum = cfg.n - cfg.f;
        Abba {
            cfg,
            domain,
            quorum,
            phase: Phase::Idle,
            round: 1,
            pre_process: BTreeMap::new(),
            rounds: BTreeMap::new(),
            future: BTreeMap::new(),
            known_payload: None,
            decision: None,
            rejected: 0,
        }
    }

    pub fn candidate(&self) -> PartyId {
        self.cfg.candidate
    }

    pub fn round(&self) -> u32 {
        self.round
    }

    pub fn decision(&self) -> Option<&AbbaDecision> {
        self.decision.as_ref()
    }

    pub fn is_started(&self) -> bool {
        self.phase != Phase::Idle
    }

    pub fn known_payload(&self) -> Option<&CertifiedProposal> {
        self.known_payload.as_ref()
    }

    /// Messages dropped as invalid so far.
    pub fn rejected(&self) -> usize {
        self.rejected
    }

    pub fn domain(&self) -> VoteDomain {
        self.domain
    }

    pub fn start(&mut self, input: AbbaInput) -> Result<AbbaStep, AbbaError> {
        let mut step = AbbaStep::default();
        if self.phase != Phase::Idle {
            return Ok(step);
        }
        let justification = if input.bit {
            match input.justification {
                Some(cp) if self.valid_payload(&cp) => {
                    self.known_payload = Some(cp.clone());
                    Some(cp)
                }
                _ => return Err(AbbaError::InvalidInput),
            }
        } else {
            None
        };
        let share = self
            .cfg
            .keys
            .sign(schemes::SIG, &self.domain.pre_process(input.bit))?;
        step.broadcasts.push(AbbaMessage::PreProcess {
            bit: input.bit,
            justification,
            share,
        });
        self.phase = Phase::PreProcess;
        self.progress(&mut step)?;
        Ok(step)
    }

    pub fn handle(&mut self, from: PartyId, msg: AbbaMessage) -> Result<AbbaStep, AbbaError> {
        let mut step = AbbaStep::default();
        if self.phase == Phase::Done {
            return Ok(step);
        }
        match msg.round() {
            Some(r) if r > self.round => {
                self.future.entry(r).or_default().push((from, msg));
                return Ok(step);
            }
            Some(r) if r < self.round => return Ok(step),
            _ => {}
        }
        self.record(from, msg, &mut step)?;
        self.progress(&mut step)?;
        Ok(step)
    }

    fn valid_payload(&self, cp: &CertifiedProposal) -> bool {
        cp.proposal.proposer == self.cfg.candidate
            && verify_certified(
                &self.cfg.keys,
                self.cfg.instance,
                self.cfg.predicate.as_ref(),
                cp,
            )
    }

    fn learn_payload(&mut self, cp: &Option<CertifiedProposal>) {
        if self.known_payload.is_none() {
            if let Some(cp) = cp {
                if self.valid_payload(cp) {
                    self.known_payload = Some(cp.clone());
                }
            }
        }
    }

    fn valid_proof(&self, msg: &[u8], proof: &ThresholdProof) -> bool {
        proof.scheme == schemes::SIG && self.cfg.keys.verify_proof(msg, proof)
    }

    fn valid_share(&self, signer: PartyId, msg: &[u8], share: &SignShare) -> bool {
        share.signer == signer
            && share.scheme == schemes::SIG
            && self.cfg.keys.verify_share(msg, share)
    }

    fn coin_of(&self, round: u32) -> Option<bool> {
        self.rounds.get(&round).and_then(|rs| rs.coin)
    }

    fn valid_pre_vote(&self, v: &PreVoteRecord) -> bool {
        if v.round == 0 || !self.valid_share(v.signer, &self.domain.pre_vote(v.round, v.bit), &v.share)
        {
            return false;
        }
        match &v.justification {
            PreVoteJustification::Biased(cp) => v.round == 1 && v.bit && self.valid_payload(cp),
            PreVoteJustification::PreProcessZero(proof) => {
                v.round == 1 && !v.bit && self.valid_proof(&self.domain.pre_process(false), proof)
            }
            PreVoteJustification::PriorCertificate(proof) => {
                v.round > 1 && self.valid_proof(&self.domain.pre_vote(v.round - 1, v.bit), proof)
            }
            PreVoteJustification::CoinAbstain(proof) => {
                v.round > 1
                    && self.coin_of(v.round - 1) == Some(v.bit)
                    && self.valid_proof(
                        &self.domain.main_vote(v.round - 1, MainValue::Abstain),
                        proof,
                    )
            }
        }
    }

    fn valid_main_vote(
        &self,
        from: PartyId,
        round: u32,
        value: MainValue,
        justification: &MainVoteJustification,
        share: &SignShare,
    ) -> bool {
        if !self.valid_share(from, &self.domain.main_vote(round, value), share) {
            return false;
        }
        match (value.bit(), justification) {
            (Some(bit), MainVoteJustification::Certificate(proof)) => {
                self.valid_proof(&self.domain.pre_vote(round, bit), proof)
            }
            (None, MainVoteJustification::Abstain { zero, one }) => {
                zero.round == round
                    && one.round == round
                    && !zero.bit
                    && one.bit
                    && self.valid_pre_vote(zero)
                    && self.valid_pre_vote(one)
            }
            _ => false,
        }
    }

    fn reject(&mut self) {
        self.rejected += 1;
    }

    fn record(
        &mut self,
        from: PartyId,
        msg: AbbaMessage,
        step: &mut AbbaStep,
    ) -> Result<(), AbbaError> {
        match msg {
            AbbaMessage::PreProcess {
                bit,
                justification,
                share,
            } => {
                let justified = !bit || justification.as_ref().is_some_and(|cp| self.valid_payload(cp));
                if !justified || !self.valid_share(from, &self.domain.pre_process(bit), &share) {
                    self.reject();
                    return Ok(());
                }
                self.learn_payload(&justification);
                self.pre_process.entry(from).or_insert(PreProcessRecord {
                    bit,
                    justification,
                    share,
                });
            }
            AbbaMessage::PreVote { vote, payload } => {
                if vote.signer != from || !self.valid_pre_vote(&vote) {
                    self.reject();
                    return Ok(());
                }
                if let PreVoteJustification::Biased(cp) = &vote.justification {
                    self.learn_payload(&Some(cp.clone()));
                }
                self.learn_payload(&payload);
                self.rounds
                    .entry(vote.round)
                    .or_default()
                    .pre_votes
                    .entry(from)
                    .or_insert(vote);
            }
            AbbaMessage::MainVote {
                round,
                value,
                justification,
                share,
                payload,
            } => {
                if !self.valid_main_vote(from, round, value, &justification, &share) {
                    self.reject();
                    return Ok(());
                }
                self.learn_payload(&payload);
                let rs = self.rounds.entry(round).or_default();
                if let (Some(bit), MainVoteJustification::Certificate(proof)) =
                    (value.bit(), &justification)
                {
                    if rs.certs[!bit as usize].is_some() {
                        return Err(AbbaError::ProtocolViolation(round));
                    }
                    rs.certs[bit as usize].get_or_insert_with(|| proof.clone());
                }
                rs.main_votes
                    .entry(from)
                    .or_insert(MainVoteRecord { value, share });
            }
            AbbaMessage::Coin { round, share } => {
                let name = self.domain.coin_name(round);
                if share.scheme != schemes::COIN_HI
                    || !self.cfg.keys.verify_coin_share(&name, from, &share)
                {
                    self.reject();
                    return Ok(());
                }
                self.rounds
                    .entry(round)
                    .or_default()
                    .coin_shares
                    .entry(from)
                    .or_insert(share);
            }
            AbbaMessage::Decide(cert) => {
                let msg = self.domain.main_vote(cert.round, MainValue::from_bit(cert.bit));
                if cert.round == 0 || !self.valid_proof(&msg, &cert.cert) {
                    self.reject();
                    return Ok(());
                }
                if cert.bit {
                    self.learn_payload(&cert.payload);
                }
                self.finish(cert.bit, cert.round, cert.cert, step);
            }
        }
        Ok(())
    }

    fn finish(&mut self, bit: bool, round: u32, cert: ThresholdProof, step: &mut AbbaStep) {
        let payload = if bit { self.known_payload.clone() } else { None };
        let certificate = DecideCertificate {
            bit,
            round,
            cert,
            payload: payload.clone(),
        };
        step.broadcasts.push(AbbaMessage::Decide(certificate.clone()));
        let decision = AbbaDecision {
            bit,
            round,
            payload,
            certificate,
        };
        self.decision = Some(decision.clone());
        step.decided = Some(decision);
        self.phase = Phase::Done;
        self.future.clear();
    }

    fn progress(&mut self, step: &mut AbbaStep) -> Result<(), AbbaError> {
        loop {
            let advanced = match self.phase {
                Phase::Idle | Phase::Done => false,
                Phase::PreProcess => self.try_first_pre_vote(step)?,
                Phase::PreVote => self.try_main_vote(step)?,
                Phase::MainVote => self.try_check(step)?,
                Phase::Coin => self.try_coin(step)?,
            };
            if !advanced {
                return Ok(());
            }
        }
    }

    fn combine(&self, msg: &[u8], shares: Vec<SignShare>) -> Result<ThresholdProof, AbbaError> {
        Ok(self.cfg.keys.combine(schemes::SIG, msg, &shares)?)
    }

    fn send_pre_vote(
        &mut self,
        bit: bool,
        justification: PreVoteJustification,
        step: &mut AbbaStep,
    ) -> Result<(), AbbaError> {
        let share = self
            .cfg
            .keys
            .sign(schemes::SIG, &self.domain.pre_vote(self.round, bit))?;
        let payload = match justification {
            PreVoteJustification::Biased(_) => None,
            _ if bit => self.known_payload.clone(),
            _ => None,
        };
        step.broadcasts.push(AbbaMessage::PreVote {
            vote: PreVoteRecord {
                signer: self.cfg.keys.me(),
                round: self.round,
                bit,
                justification,
                share,
            },
            payload,
        });
        self.phase = Phase::PreVote;
        Ok(())
    }

    fn try_first_pre_vote(&mut self, step: &mut AbbaStep) -> Result<bool, AbbaError> {
        if self.pre_process.len() < self.quorum {
            return Ok(false);
        }
        let justified_one = self
            .pre_process
            .values()
            .find_map(|r| r.justification.clone().filter(|_| r.bit));
        match justified_one {
            Some(cp) => self.send_pre_vote(true, PreVoteJustification::Biased(cp), step)?,
            None => {
                let shares = self.pre_process.values().map(|r| r.share.clone()).collect();
                let proof = self.combine(&self.domain.pre_process(false), shares)?;
                self.send_pre_vote(false, PreVoteJustification::PreProcessZero(proof), step)?;
            }
        }
        Ok(true)
    }

    fn try_main_vote(&mut self, step: &mut AbbaStep) -> Result<bool, AbbaError> {
        let round = self.round;
        let rs = self.rounds.entry(round).or_default();
        if rs.pre_votes.len() < self.quorum {
            return Ok(false);
        }
        let of_bit = |bit: bool| -> Vec<&PreVoteRecord> {
            rs.pre_votes.values().filter(|v| v.bit == bit).collect()
        };
        let (zeros, ones) = (of_bit(false), of_bit(true));
        let (value, justification) = if ones.len() >= self.quorum || zeros.len() >= self.quorum {
            let bit = ones.len() >= self.quorum;
            let votes = if bit { &ones } else { &zeros };
            let shares = votes.iter().map(|v| v.share.clone()).collect();
            let proof = self.combine(&self.domain.pre_vote(round, bit), shares)?;
            (MainValue::from_bit(bit), MainVoteJustification::Certificate(proof))
        } else {
            (
                MainValue::Abstain,
                MainVoteJustification::Abstain {
                    zero: Box::new(zeros[0].clone()),
                    one: Box::new(ones[0].clone()),
                },
            )
        };
        let share = self
            .cfg
            .keys
            .sign(schemes::SIG, &self.domain.main_vote(round, value))?;
        let payload = if value == MainValue::One {
            self.known_payload.clone()
        } else {
            None
        };
        step.broadcasts.push(AbbaMessage::MainVote {
            round,
            value,
            justification,
            share,
            payload,
        });
        self.phase = Phase::MainVote;
        Ok(true)
    }

    fn try_check(&mut self, step: &mut AbbaStep) -> Result<bool, AbbaError> {
        let round = self.round;
        let rs = self.rounds.entry(round).or_default();
        if rs.main_votes.len() < self.quorum {
            return Ok(false);
        }
        for bit in [true, false] {
            let value = MainValue::from_bit(bit);
            let shares: Vec<SignShare> = rs
                .main_votes
                .values()
                .filter(|m| m.value == value)
                .map(|m| m.share.clone())
                .collect();
            if shares.len() >= self.quorum {
                let cert = self.combine(&self.domain.main_vote(round, value), shares)?;
                self.finish(bit, round, cert, step);
                return Ok(true);
            }
        }
        let share = self
            .cfg
            .keys
            .coin_share(schemes::COIN_HI, &self.domain.coin_name(round))?;
        step.broadcasts.push(AbbaMessage::Coin { round, share });
        self.phase = Phase::Coin;
        Ok(true)
    }

    fn try_coin(&mut self, step: &mut AbbaStep) -> Result<bool, AbbaError> {
        let round = self.round;
        let t = self.cfg.keys.threshold(schemes::COIN_HI)?;
        let rs = self.rounds.entry(round).or_default();
        if rs.coin_shares.len() < t {
            return Ok(false);
        }
        let shares: Vec<CoinShare> = rs.coin_shares.values().cloned().collect();
        let coin = self
            .cfg
            .keys
            .coin_toss(schemes::COIN_HI, &self.domain.coin_name(round), &shares)?
            .bit();
        rs.coin = Some(coin);
        let followed = match (&rs.certs[1], &rs.certs[0]) {
            (Some(p), _) => Some((true, p.clone())),
            (None, Some(p)) => Some((false, p.clone())),
            (None, None) => None,
        };
        let (bit, justification) = match followed {
            Some((bit, proof)) => (bit, PreVoteJustification::PriorCertificate(proof)),
            None => {
                let shares = rs
                    .main_votes
                    .values()
                    .filter(|m| m.value == MainValue::Abstain)
                    .map(|m| m.share.clone())
                    .collect();
                let proof = self.combine(&self.domain.main_vote(round, MainValue::Abstain), shares)?;
                (coin, PreVoteJustification::CoinAbstain(proof))
            }
        };
        self.round += 1;
        self.send_pre_vote(bit, justification, step)?;
        let next = self.round;
        for (from, msg) in self.future.remove(&next).unwrap_or_default() {
            self.record(from, msg, step)?;
            if self.phase == Phase::Done {
                break;
            }
        }
        Ok(true)
    }
}
