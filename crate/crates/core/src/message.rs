//! Wire messages exchanged by party engines.

use serde::{Deserialize, Serialize};

use crate::abba::AbbaMessage;
use crate::tcrypto::{CoinShare, SignShare, ThresholdProof, DIGEST_LEN};
use crate::{InstanceId, PartyId};

/// A payload offered by a committee member for one instance.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Proposal {
    pub proposer: PartyId,
    pub instance: InstanceId,
    pub payload: Vec<u8>,
}

impl Proposal {
    /// The byte string covered by the broadcast proof for this proposal.
    pub fn signing_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.payload.len() + 24);
        out.extend_from_slice(b"VCBC");
        out.extend_from_slice(&self.instance.to_be_bytes());
        out.extend_from_slice(&self.proposer.0.to_be_bytes());
        out.extend_from_slice(&(self.payload.len() as u64).to_be_bytes());
        out.extend_from_slice(&self.payload);
        out
    }
}

/// A proposal together with the `n - f` proof that a quorum accepted it.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CertifiedProposal {
    pub proposal: Proposal,
    pub proof: ThresholdProof,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum CoinKind {
    /// Committee selection.
    Cs,
    /// Random order of committee members.
    Order,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Body {
    Share { kind: CoinKind, share: CoinShare },
    VcbcSend { proposal: Proposal },
    VcbcReply { share: SignShare },
    Propose { cp: CertifiedProposal },
    Recommendation { cp: CertifiedProposal },
    Vote {
        candidate: PartyId,
        u: bool,
        payload: Option<CertifiedProposal>,
    },
    Abba { candidate: PartyId, msg: AbbaMessage },
    Recover {
        candidate: PartyId,
        proof: Option<ThresholdProof>,
    },
    RecoverAnswer { cp: CertifiedProposal },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub instance: InstanceId,
    pub body: Body,
}

/// Coarse message type, used for counters and transcripts.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum MessageKind {
    CsShare,
    OrderShare,
    VcbcSend,
    VcbcReply,
    Propose,
    Recommendation,
    Vote,
    PreProcess,
    PreVote,
    MainVote,
    Coin,
    Decide,
    Recover,
    RecoverAnswer,
}

impl MessageKind {
    pub const ALL: [MessageKind; 14] = [
        MessageKind::CsShare,
        MessageKind::OrderShare,
        MessageKind::VcbcSend,
        MessageKind::VcbcReply,
        MessageKind::Propose,
        MessageKind::Recommendation,
        MessageKind::Vote,
        MessageKind::PreProcess,
        MessageKind::PreVote,
        MessageKind::MainVote,
        MessageKind::Coin,
        MessageKind::Decide,
        MessageKind::Recover,
        MessageKind::RecoverAnswer,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MessageKind::CsShare => "CS_SHARE",
            MessageKind::OrderShare => "ORDER_SHARE",
            MessageKind::VcbcSend => "VCBC_SEND",
            MessageKind::VcbcReply => "VCBC_REPLY",
            MessageKind::Propose => "PROPOSE",
            MessageKind::Recommendation => "RECOMMENDATION",
            MessageKind::Vote => "VOTE",
            MessageKind::PreProcess => "PRE_PROCESS",
            MessageKind::PreVote => "PRE_VOTE",
            MessageKind::MainVote => "MAIN_VOTE",
            MessageKind::Coin => "COIN",
            MessageKind::Decide => "DECIDE",
            MessageKind::Recover => "RECOVER",
            MessageKind::RecoverAnswer => "RECOVER_ANSWER",
        }
    }
}

fn cp_payload(cp: &Option<CertifiedProposal>) -> usize {
    cp.as_ref().map_or(0, |cp| cp.proposal.payload.len())
}

fn cp_proofs(cp: &Option<CertifiedProposal>) -> usize {
    cp.as_ref().map_or(0, |_| DIGEST_LEN)
}

impl Message {
    pub fn new(instance: InstanceId, body: Body) -> Self {
        Message { instance, body }
    }

    pub fn kind(&self) -> MessageKind {
        match &self.body {
            Body::Share { kind: CoinKind::Cs, .. } => MessageKind::CsShare,
            Body::Share { kind: CoinKind::Order, .. } => MessageKind::OrderShare,
            Body::VcbcSend { .. } => MessageKind::VcbcSend,
            Body::VcbcReply { .. } => MessageKind::VcbcReply,
            Body::Propose { .. } => MessageKind::Propose,
            Body::Recommendation { .. } => MessageKind::Recommendation,
            Body::Vote { .. } => MessageKind::Vote,
            Body::Abba { msg, .. } => msg.kind(),
            Body::Recover { .. } => MessageKind::Recover,
            Body::RecoverAnswer { .. } => MessageKind::RecoverAnswer,
        }
    }

    /// Transaction bytes carried by this message.
    pub fn payload_bytes(&self) -> usize {
        match &self.body {
            Body::VcbcSend { proposal } => proposal.payload.len(),
            Body::Propose { cp } | Body::Recommendation { cp } | Body::RecoverAnswer { cp } => {
                cp.proposal.payload.len()
            }
            Body::Vote { payload, .. } => cp_payload(payload),
            Body::Abba { msg, .. } => msg.payload_bytes(),
            _ => 0,
        }
    }

    /// Bytes of shares and proofs carried by this message, 32 per item.
    pub fn proof_bytes(&self) -> usize {
        match &self.body {
            Body::Share { .. } | Body::VcbcReply { .. } => DIGEST_LEN,
            Body::VcbcSend { .. } => 0,
            Body::Propose { .. } | Body::Recommendation { .. } | Body::RecoverAnswer { .. } => {
                DIGEST_LEN
            }
            Body::Vote { payload, .. } => cp_proofs(payload),
            Body::Abba { msg, .. } => msg.proof_bytes(),
            Body::Recover { proof, .. } => proof.as_ref().map_or(0, |_| DIGEST_LEN),
        }
    }

    /// Accounted size: payload plus proof bytes; headers are not charged.
    pub fn size(&self) -> usize {
        self.payload_bytes() + self.proof_bytes()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn proposal(len: usize) -> Proposal {
        Proposal {
            proposer: PartyId(2),
            instance: 7,
            payload: vec![1; len],
        }
    }

    #[test]
    fn signing_bytes_bind_every_field() {
        let base = proposal(4);
        let mut other = base.clone();
        other.proposer = PartyId(3);
        assert_ne!(base.signing_bytes(), other.signing_bytes());
        let mut other = base.clone();
        other.instance = 8;
        assert_ne!(base.signing_bytes(), other.signing_bytes());
        let mut other = base.clone();
        other.payload.push(0);
        assert_ne!(base.signing_bytes(), other.signing_bytes());
    }

    #[test]
    fn vcbc_send_charges_payload_only() {
        let m = Message::new(1, Body::VcbcSend { proposal: proposal(100) });
        assert_eq!(m.kind(), MessageKind::VcbcSend);
        assert_eq!(m.payload_bytes(), 100);
        assert_eq!(m.proof_bytes(), 0);
    }

    #[test]
    fn kind_names_are_unique() {
        let names: std::collections::BTreeSet<_> =
            MessageKind::ALL.iter().map(|k| k.name()).collect();
        assert_eq!(names.len(), MessageKind::ALL.len());
    }
}
