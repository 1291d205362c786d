//! Prioritized multi-valued validated Byzantine agreement (pMVBA).
//!
//! Every sub-protocol is a message-driven state machine:
//!
//! * [`committee`]: coin-based selection of `f + 1` proposers and the random
//!   order in which their proposals are tried.
//! * [`broadcast`]: prioritized verifiable consistent broadcast, the
//!   propose/recommend relay and decide-time payload recovery.
//! * [`abba`]: asynchronous binary agreement biased towards 1.
//! * [`engine`]: the per-party loop that ties the above together.
//!
//! [`tcrypto`] supplies an ideal threshold signature / coin oracle and
//! [`simnet`] a deterministic discrete-event network with adversarial
//! schedulers used to exercise the protocol.

use std::fmt;

use serde::{Deserialize, Serialize};

pub mod abba;
pub mod broadcast;
pub mod committee;
pub mod engine;
pub mod message;
pub mod simnet;
pub mod tcrypto;

pub use abba::{Abba, AbbaConfig, AbbaDecision, AbbaInput, AbbaMessage};
pub use broadcast::{Predicate, TxBatchPredicate};
pub use committee::Committee;
pub use engine::{Action, DecidedValue, EngineConfig, EngineError, Milestone, PartyEngine};
pub use message::{Body, CertifiedProposal, Message, MessageKind, Proposal};
pub use tcrypto::{IdealOracle, PartyKeys, ThresholdBackend};

/// Identifier of a party, numbered `1..=n`.
#[derive(
    Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default,
)]
#[serde(transparent)]
pub struct PartyId(pub u32);

impl PartyId {
    /// Zero-based index for slice lookups.
    pub fn index(self) -> usize {
        self.0 as usize - 1
    }

    pub fn from_index(idx: usize) -> Self {
        PartyId(idx as u32 + 1)
    }

    /// All parties `1..=n` in ascending order.
    pub fn all(n: usize) -> impl Iterator<Item = PartyId> {
        (1..=n as u32).map(PartyId)
    }
}

impl fmt::Debug for PartyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "p{}", self.0)
    }
}

impl fmt::Display for PartyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "p{}", self.0)
    }
}

/// Sequence number of one agreement instance, starting at 1.
pub type InstanceId = u64;

/// Largest `f` with `n > 3f`.
pub fn max_faults(n: usize) -> usize {
    n.saturating_sub(1) / 3
}

/// Names of the threshold schemes the protocol registers.
pub mod schemes {
    /// `n - f` signatures: pVCBC proofs and ABBA vote certificates.
    pub const SIG: &str = "sig";
    /// `f + 1` coin shares: committee selection.
    pub const COIN_LO: &str = "coin_lo";
    /// `2f + 1` coin shares: random order and the ABBA coin.
    pub const COIN_HI: &str = "coin_hi";
}

/// The scheme catalogue used by the protocol for `n` parties.
pub fn protocol_catalogue(n: usize) -> std::collections::BTreeMap<String, usize> {
    let f = max_faults(n);
    [
        (schemes::SIG.to_string(), n - f),
        (schemes::COIN_LO.to_string(), f + 1),
        (schemes::COIN_HI.to_string(), 2 * f + 1),
    ]
    .into_iter()
    .collect()
}
