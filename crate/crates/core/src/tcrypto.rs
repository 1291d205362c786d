//! Threshold signatures and threshold coin tossing.
//!
//! [`IdealOracle`] is a trusted, deterministic stand-in for a real pairing-based
//! scheme: every share, proof and coin value is a keyed SHA-256 of the master
//! seed and the inputs. It keeps the properties the protocol relies on:
//!
//! * `t` shares from distinct signers are necessary and sufficient to combine;
//! * a combined proof depends only on the message, never on the quorum;
//! * combining rejects any invalid share instead of producing garbage;
//! * a coin value is the same for every valid `t`-subset of shares.
//!
//! Protocol code only talks to the [`ThresholdBackend`] trait (usually through a
//! per-party [`PartyKeys`] handle), so a real backend can be dropped in.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};
use thiserror::Error;

use crate::{max_faults, PartyId};

/// Size in bytes of digests, shares and proofs. Also the byte cost charged
/// for one share or proof when accounting communication.
pub const DIGEST_LEN: usize = 32;

/// Coin values carry this many pseudorandom bits.
pub const COIN_BITS: u32 = 64;

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Digest(pub [u8; DIGEST_LEN]);

impl Digest {
    pub fn of(bytes: &[u8]) -> Self {
        Digest(Sha256::digest(bytes).into())
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }
}

impl fmt::Debug for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}..", hex::encode(&self.0[..6]))
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CryptoError {
    #[error("at least 4 parties are required, got {0}")]
    TooFewParties(usize),
    #[error("threshold {t} for scheme `{scheme}` is outside ({f}, {max}]")]
    ThresholdOutOfRange {
        scheme: String,
        t: usize,
        f: usize,
        max: usize,
    },
    #[error("unknown scheme `{0}`")]
    UnknownScheme(String),
    #[error("party {party} is outside 1..={n}")]
    UnknownParty { party: PartyId, n: usize },
    #[error("insufficient shares: {have} distinct valid, {need} required")]
    InsufficientShares { have: usize, need: usize },
    #[error("invalid share from {0}")]
    InvalidShare(PartyId),
}

/// One party's signature share on a message.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SignShare {
    pub signer: PartyId,
    pub scheme: String,
    pub msg_digest: Digest,
    pub value: Digest,
}

/// A combined `t`-of-`n` signature.
///
/// `quorum` records who contributed; it is kept for auditing and ignored by
/// equality and verification.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ThresholdProof {
    pub scheme: String,
    pub msg_digest: Digest,
    pub value: Digest,
    pub quorum: BTreeSet<PartyId>,
}

impl PartialEq for ThresholdProof {
    fn eq(&self, other: &Self) -> bool {
        self.scheme == other.scheme
            && self.msg_digest == other.msg_digest
            && self.value == other.value
    }
}

impl Eq for ThresholdProof {}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoinShare {
    pub party: PartyId,
    pub scheme: String,
    pub coin_name: String,
    pub value: Digest,
}

/// The combined value `F(name)` of a named coin.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CoinValue(pub u64);

impl CoinValue {
    /// The single-bit coin used by binary agreement.
    pub fn bit(self) -> bool {
        self.0 & 1 == 1
    }
}

/// Operations a threshold backend must offer to the protocol.
pub trait ThresholdBackend: Send + Sync + fmt::Debug {
    fn parties(&self) -> usize;
    fn threshold(&self, scheme: &str) -> Result<usize, CryptoError>;
    fn sign_share(&self, signer: PartyId, scheme: &str, msg: &[u8])
        -> Result<SignShare, CryptoError>;
    fn verify_share(&self, msg: &[u8], share: &SignShare) -> bool;
    fn combine(
        &self,
        scheme: &str,
        msg: &[u8],
        shares: &[SignShare],
    ) -> Result<ThresholdProof, CryptoError>;
    fn verify_proof(&self, msg: &[u8], proof: &ThresholdProof) -> bool;
    fn coin_share(
        &self,
        party: PartyId,
        scheme: &str,
        coin_name: &str,
    ) -> Result<CoinShare, CryptoError>;
    fn verify_coin_share(&self, coin_name: &str, party: PartyId, share: &CoinShare) -> bool;
    fn coin_toss(
        &self,
        scheme: &str,
        coin_name: &str,
        shares: &[CoinShare],
    ) -> Result<CoinValue, CryptoError>;
}

/// Key material of the ideal oracle: the master seed and the scheme catalogue.
#[derive(Clone, PartialEq, Eq)]
pub struct IdealOracle {
    n: usize,
    master_seed: Vec<u8>,
    catalogue: BTreeMap<String, usize>,
}

impl fmt::Debug for IdealOracle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        // The seed is the whole secret; keep it out of logs.
        f.debug_struct("IdealOracle")
            .field("n", &self.n)
            .field("catalogue", &self.catalogue)
            .finish_non_exhaustive()
    }
}

fn keyed_hash(seed: &[u8], domain: &str, parts: &[&[u8]]) -> Digest {
    let mut h = Sha256::new();
    for chunk in [seed, domain.as_bytes()].into_iter().chain(parts.iter().copied()) {
        h.update((chunk.len() as u64).to_be_bytes());
        h.update(chunk);
    }
    Digest(h.finalize().into())
}

impl IdealOracle {
    /// Sets up key material for `n` parties.
    ///
    /// Every threshold must satisfy `f < t <= n - f` with `f = (n - 1) / 3`.
    pub fn key_setup(
        n: usize,
        catalogue: BTreeMap<String, usize>,
        seed: &[u8],
    ) -> Result<Self, CryptoError> {
        if n < 4 {
            return Err(CryptoError::TooFewParties(n));
        }
        let f = max_faults(n);
        for (scheme, &t) in &catalogue {
            if t <= f || t > n - f {
                return Err(CryptoError::ThresholdOutOfRange {
                    scheme: scheme.clone(),
                    t,
                    f,
                    max: n - f,
                });
            }
        }
        Ok(IdealOracle {
            n,
            master_seed: seed.to_vec(),
            catalogue,
        })
    }

    pub fn catalogue(&self) -> &BTreeMap<String, usize> {
        &self.catalogue
    }

    /// Direct evaluation of `F(name)`, bypassing shares. Only an omniscient
    /// observer (tests, the simulated adversary) may call this.
    pub fn coin_value(&self, coin_name: &str) -> CoinValue {
        let d = keyed_hash(&self.master_seed, "coin", &[coin_name.as_bytes()]);
        let mut word = [0u8; 8];
        word.copy_from_slice(&d.0[..8]);
        CoinValue(u64::from_be_bytes(word))
    }

    /// Handle that can only sign on behalf of `party`.
    pub fn party_keys(self: &Arc<Self>, party: PartyId) -> PartyKeys {
        PartyKeys {
            backend: self.clone(),
            me: party,
        }
    }

    fn check_party(&self, party: PartyId) -> Result<(), CryptoError> {
        if party.0 == 0 || party.0 as usize > self.n {
            return Err(CryptoError::UnknownParty { party, n: self.n });
        }
        Ok(())
    }

    fn share_value(&self, scheme: &str, signer: PartyId, digest: &Digest) -> Digest {
        keyed_hash(
            &self.master_seed,
            "sig-share",
            &[scheme.as_bytes(), &signer.0.to_be_bytes(), &digest.0],
        )
    }

    fn proof_value(&self, scheme: &str, digest: &Digest) -> Digest {
        keyed_hash(&self.master_seed, "sig-proof", &[scheme.as_bytes(), &digest.0])
    }

    fn coin_share_value(&self, scheme: &str, coin_name: &str, party: PartyId) -> Digest {
        keyed_hash(
            &self.master_seed,
            "coin-share",
            &[scheme.as_bytes(), coin_name.as_bytes(), &party.0.to_be_bytes()],
        )
    }
}

impl ThresholdBackend for IdealOracle {
    fn parties(&self) -> usize {
        self.n
    }

    fn threshold(&self, scheme: &str) -> Result<usize, CryptoError> {
        self.catalogue
            .get(scheme)
            .copied()
            .ok_or_else(|| CryptoError::UnknownScheme(scheme.to_string()))
    }

    fn sign_share(
        &self,
        signer: PartyId,
        scheme: &str,
        msg: &[u8],
    ) -> Result<SignShare, CryptoError> {
        self.threshold(scheme)?;
        self.check_party(signer)?;
        let msg_digest = Digest::of(msg);
        Ok(SignShare {
            signer,
            scheme: scheme.to_string(),
            value: self.share_value(scheme, signer, &msg_digest),
            msg_digest,
        })
    }

    fn verify_share(&self, msg: &[u8], share: &SignShare) -> bool {
        if self.threshold(&share.scheme).is_err() || self.check_party(share.signer).is_err() {
            return false;
        }
        let digest = Digest::of(msg);
        share.msg_digest == digest
            && share.value == self.share_value(&share.scheme, share.signer, &digest)
    }

    fn combine(
        &self,
        scheme: &str,
        msg: &[u8],
        shares: &[SignShare],
    ) -> Result<ThresholdProof, CryptoError> {
        let t = self.threshold(scheme)?;
        let mut quorum = BTreeSet::new();
        for share in shares {
            if share.scheme != scheme || !self.verify_share(msg, share) {
                return Err(CryptoError::InvalidShare(share.signer));
            }
            quorum.insert(share.signer);
        }
        if quorum.len() < t {
            return Err(CryptoError::InsufficientShares {
                have: quorum.len(),
                need: t,
            });
        }
        let msg_digest = Digest::of(msg);
        Ok(ThresholdProof {
            scheme: scheme.to_string(),
            value: self.proof_value(scheme, &msg_digest),
            msg_digest,
            quorum,
        })
    }

    fn verify_proof(&self, msg: &[u8], proof: &ThresholdProof) -> bool {
        if self.threshold(&proof.scheme).is_err() {
            return false;
        }
        let digest = Digest::of(msg);
        proof.msg_digest == digest && proof.value == self.proof_value(&proof.scheme, &digest)
    }

    fn coin_share(
        &self,
        party: PartyId,
        scheme: &str,
        coin_name: &str,
    ) -> Result<CoinShare, CryptoError> {
        self.threshold(scheme)?;
        self.check_party(party)?;
        Ok(CoinShare {
            party,
            scheme: scheme.to_string(),
            coin_name: coin_name.to_string(),
            value: self.coin_share_value(scheme, coin_name, party),
        })
    }

    fn verify_coin_share(&self, coin_name: &str, party: PartyId, share: &CoinShare) -> bool {
        self.threshold(&share.scheme).is_ok()
            && self.check_party(party).is_ok()
            && share.party == party
            && share.coin_name == coin_name
            && share.value == self.coin_share_value(&share.scheme, coin_name, party)
    }

    fn coin_toss(
        &self,
        scheme: &str,
        coin_name: &str,
        shares: &[CoinShare],
    ) -> Result<CoinValue, CryptoError> {
        let t = self.threshold(scheme)?;
        let mut contributors = BTreeSet::new();
        for share in shares {
            if share.scheme != scheme || !self.verify_coin_share(coin_name, share.party, share) {
                return Err(CryptoError::InvalidShare(share.party));
            }
            contributors.insert(share.party);
        }
        if contributors.len() < t {
            return Err(CryptoError::InsufficientShares {
                have: contributors.len(),
                need: t,
            });
        }
        Ok(self.coin_value(coin_name))
    }
}

/// A party's view of the threshold schemes: it can sign and produce coin
/// shares only as itself, and verify anything.
#[derive(Clone, Debug)]
pub struct PartyKeys {
    backend: Arc<dyn ThresholdBackend>,
    me: PartyId,
}

impl PartyKeys {
    pub fn new(backend: Arc<dyn ThresholdBackend>, me: PartyId) -> Self {
        PartyKeys { backend, me }
    }

    pub fn me(&self) -> PartyId {
        self.me
    }

    pub fn backend(&self) -> &Arc<dyn ThresholdBackend> {
        &self.backend
    }

    pub fn threshold(&self, scheme: &str) -> Result<usize, CryptoError> {
        self.backend.threshold(scheme)
    }

    pub fn sign(&self, scheme: &str, msg: &[u8]) -> Result<SignShare, CryptoError> {
        self.backend.sign_share(self.me, scheme, msg)
    }

    pub fn coin_share(&self, scheme: &str, coin_name: &str) -> Result<CoinShare, CryptoError> {
        self.backend.coin_share(self.me, scheme, coin_name)
    }

    pub fn verify_share(&self, msg: &[u8], share: &SignShare) -> bool {
        self.backend.verify_share(msg, share)
    }

    pub fn combine(
        &self,
        scheme: &str,
        msg: &[u8],
        shares: &[SignShare],
    ) -> Result<ThresholdProof, CryptoError> {
        self.backend.combine(scheme, msg, shares)
    }

    pub fn verify_proof(&self, msg: &[u8], proof: &ThresholdProof) -> bool {
        self.backend.verify_proof(msg, proof)
    }

    pub fn verify_coin_share(&self, coin_name: &str, party: PartyId, share: &CoinShare) -> bool {
        self.backend.verify_coin_share(coin_name, party, share)
    }

    pub fn coin_toss(
        &self,
        scheme: &str,
        coin_name: &str,
        shares: &[CoinShare],
    ) -> Result<CoinValue, CryptoError> {
        self.backend.coin_toss(scheme, coin_name, shares)
    }
}

/// Pseudorandom permutation of parties `1..=n` seeded by a coin value
/// (Fisher-Yates over a ChaCha20 stream).
pub fn prg_permutation(seed: CoinValue, n: usize) -> Vec<PartyId> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed.0);
    let mut parties: Vec<PartyId> = PartyId::all(n).collect();
    parties.shuffle(&mut rng);
    parties
}
