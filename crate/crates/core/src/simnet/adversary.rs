//! Fault injection and Byzantine message rewriting.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::abba::{AbbaMessage, VoteDomain};
use crate::committee::Committee;
use crate::message::{Body, Message};
use crate::tcrypto::PartyKeys;
use crate::{schemes, PartyId};

/// A set of parties, possibly defined relative to the (unknown in advance)
/// committee of the first instance.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum PartySet {
    Fixed(Vec<PartyId>),
    /// Committee members by rank (0-based) in ascending id order.
    Members(Vec<usize>),
    /// The first `count` committee members in ascending id order.
    FirstMembers(usize),
    /// The first `count` non-members in ascending id order.
    NonMembers(usize),
}

impl PartySet {
    pub fn is_committee_relative(&self) -> bool {
        !matches!(self, PartySet::Fixed(_))
    }

    /// Resolves the set; `None` while it still depends on an unknown committee.
    pub fn resolve(&self, n: usize, committee: Option<&Committee>) -> Option<BTreeSet<PartyId>> {
        match self {
            PartySet::Fixed(ps) => Some(ps.iter().copied().collect()),
            PartySet::Members(ranks) => {
                let members: Vec<PartyId> = committee?.members().iter().copied().collect();
                Some(ranks.iter().filter_map(|&r| members.get(r).copied()).collect())
            }
            PartySet::FirstMembers(count) => {
                Some(committee?.members().iter().copied().take(*count).collect())
            }
            PartySet::NonMembers(count) => {
                let c = committee?;
                Some(
                    PartyId::all(n)
                        .filter(|p| !c.contains(*p))
                        .take(*count)
                        .collect(),
                )
            }
        }
    }
}

/// Misbehavior of a corrupted party that keeps running the protocol.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Behavior {
    /// Votes and pre-processes 0, sends unjustified 0 pre-votes and
    /// main-votes, and withholds DECIDE.
    VoteZero,
    /// Sends its proposal to half the parties and a different payload to the
    /// other half.
    EquivocateVcbc,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Fault {
    /// Corrupted parties that stop at `at_time`.
    Crash { parties: PartySet, at_time: u64 },
    /// Corrupted parties whose traffic is held forever.
    Isolate { parties: PartySet },
    /// Corrupted parties that never send anything.
    Silent { parties: PartySet },
    Byzantine { parties: PartySet, behavior: Behavior },
    /// Traffic from `sources` is delayed by `delay` extra time units. The
    /// sources need not be corrupted.
    Delay { sources: PartySet, delay: u64 },
}

impl Fault {
    pub fn parties(&self) -> &PartySet {
        match self {
            Fault::Crash { parties, .. }
            | Fault::Isolate { parties }
            | Fault::Silent { parties }
            | Fault::Byzantine { parties, .. } => parties,
            Fault::Delay { sources, .. } => sources,
        }
    }

    pub fn corrupts(&self) -> bool {
        !matches!(self, Fault::Delay { .. })
    }
}

/// Rewrites an outgoing message of a vote-zero party. `None` drops it.
pub fn vote_zero(keys: &PartyKeys, msg: &Message) -> Option<Message> {
    let body = match &msg.body {
        Body::Vote { candidate, .. } => Body::Vote {
            candidate: *candidate,
            u: false,
            payload: None,
        },
        Body::Abba { candidate, msg: abba } => {
            let domain = VoteDomain {
                instance: msg.instance,
                candidate: *candidate,
            };
            let rewritten = match abba {
                AbbaMessage::PreProcess { .. } => AbbaMessage::PreProcess {
                    bit: false,
                    justification: None,
                    share: keys.sign(schemes::SIG, &domain.pre_process(false)).ok()?,
                },
                AbbaMessage::PreVote { vote, .. } => {
                    let mut vote = vote.clone();
                    vote.bit = false;
                    AbbaMessage::PreVote {
                        vote,
                        payload: None,
                    }
                }
                AbbaMessage::MainVote {
                    round,
                    justification,
                    share,
                    ..
                } => AbbaMessage::MainVote {
                    round: *round,
                    value: crate::abba::MainValue::Zero,
                    justification: justification.clone(),
                    share: share.clone(),
                    payload: None,
                },
                AbbaMessage::Coin { .. } => abba.clone(),
                AbbaMessage::Decide(_) => return None,
            };
            Body::Abba {
                candidate: *candidate,
                msg: rewritten,
            }
        }
        other => other.clone(),
    };
    Some(Message::new(msg.instance, body))
}

/// The alternative payload an equivocating proposer sends to the upper half.
pub fn equivocate(msg: &Message, to: PartyId, n: usize) -> Message {
    match &msg.body {
        Body::VcbcSend { proposal } if to.index() >= n / 2 => {
            let mut other = proposal.clone();
            other.payload = vec![0xEE; other.payload.len()];
            Message::new(
                msg.instance,
                Body::VcbcSend { proposal: other },
            )
        }
        _ => msg.clone(),
    }
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::message::Proposal;
    use crate::tcrypto::IdealOracle;
    use crate::protocol_catalogue;

    #[test]
    fn relative_sets_wait_for_the_committee() {
        let c = Committee::new([PartyId(2), PartyId(4)]);
        assert!(PartySet::Members(vec![1]).resolve(4, None).is_none());
        assert_eq!(
            PartySet::Members(vec![1]).resolve(4, Some(&c)).unwrap(),
            [PartyId(4)].into()
        );
        assert_eq!(
            PartySet::NonMembers(1).resolve(4, Some(&c)).unwrap(),
            [PartyId(1)].into()
        );
        assert_eq!(
            PartySet::FirstMembers(2).resolve(4, Some(&c)).unwrap(),
            [PartyId(2), PartyId(4)].into()
        );
        assert!(PartySet::Fixed(vec![PartyId(3)]).resolve(4, None).is_some());
    }

    #[test]
    fn vote_zero_rewrites_votes_and_drops_decide() {
        let o = Arc::new(IdealOracle::key_setup(4, protocol_catalogue(4), b"adv").unwrap());
        let keys = o.party_keys(PartyId(3));
        let vote = Message::new(
            1,
            Body::Vote {
                candidate: PartyId(1),
                u: true,
                payload: None,
            },
        );
        match vote_zero(&keys, &vote).unwrap().body {
            Body::Vote { u, .. } => assert!(!u),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn equivocation_splits_by_receiver() {
        let m = Message::new(
            1,
            Body::VcbcSend {
                proposal: Proposal {
                    proposer: PartyId(1),
                    instance: 1,
                    payload: vec![1; 4],
                },
            },
        );
        assert_eq!(equivocate(&m, PartyId(1), 4), m);
        assert_ne!(equivocate(&m, PartyId(4), 4), m);
    }
}
