//! Run configuration: flags or TOML, plus the adversary mini-language.
//!
//! Adversary tokens, combinable:
//!
//! ```text
//! lockstep | uniform[:SEED] | worst-case
//! crash:SET[@TIME] | silent:SET | isolate:SET | vote-zero:SET | equivocate:SET
//! delay:SET:UNITS
//! ```
//!
//! `SET` is `4,5,6` (party ids), `members:K` (first K committee members of
//! instance 1) or `nonmembers:K`.

use std::path::PathBuf;
use std::str::FromStr;

use pmvba::simnet::{BaseOrder, Behavior, Fault, PartySet, SimConfig, DEFAULT_EVENT_BUDGET};
use pmvba::tcrypto::Digest;
use pmvba::{max_faults, PartyId};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Invalid user input; the CLI maps it to exit status 2.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum ConfigError {
    #[error("n = {n} must exceed 3f = {}", 3 * f)]
    TooFewParties { n: usize, f: usize },
    #[error("bad seed {0:?}: expected hex")]
    Seed(String),
    #[error("bad adversary token {token:?}: {reason}")]
    Adversary { token: String, reason: String },
    #[error("{0}")]
    Invalid(String),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum AdversaryToken {
    Order(BaseOrderToken),
    WorstCase,
    Fault(Fault),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BaseOrderToken {
    Lockstep,
    Uniform(Option<u64>),
}

fn parse_set(s: &str) -> Result<PartySet, String> {
    if let Some(k) = s.strip_prefix("members:") {
        return k.parse().map(PartySet::FirstMembers).map_err(|e| e.to_string());
    }
    if let Some(k) = s.strip_prefix("nonmembers:") {
        return k.parse().map(PartySet::NonMembers).map_err(|e| e.to_string());
    }
    s.split(',')
        .map(|p| p.trim().parse::<u32>().map(PartyId).map_err(|e| format!("{p:?}: {e}")))
        .collect::<Result<Vec<_>, _>>()
        .map(PartySet::Fixed)
}

impl FromStr for AdversaryToken {
    type Err = ConfigError;

    fn from_str(token: &str) -> Result<Self, Self::Err> {
        let err = |reason: String| ConfigError::Adversary {
            token: token.to_string(),
            reason,
        };
        let (head, rest) = token.split_once(':').unwrap_or((token, ""));
        let set = || parse_set(rest).map_err(err);
        Ok(match head {
            "lockstep" => AdversaryToken::Order(BaseOrderToken::Lockstep),
            "uniform" | "uniform_random" => {
                let seed = if rest.is_empty() {
                    None
                } else {
                    Some(rest.parse().map_err(|e: std::num::ParseIntError| err(e.to_string()))?)
                };
                AdversaryToken::Order(BaseOrderToken::Uniform(seed))
            }
            "worst-case" | "worst_case_order" => AdversaryToken::WorstCase,
            "crash" => {
                let (parties, at) = rest.split_once('@').unwrap_or((rest, "0"));
                AdversaryToken::Fault(Fault::Crash {
                    parties: parse_set(parties).map_err(err)?,
                    at_time: at.parse().map_err(|e: std::num::ParseIntError| err(e.to_string()))?,
                })
            }
            "silent" => AdversaryToken::Fault(Fault::Silent { parties: set()? }),
            "isolate" => AdversaryToken::Fault(Fault::Isolate { parties: set()? }),
            "vote-zero" => AdversaryToken::Fault(Fault::Byzantine {
                parties: set()?,
                behavior: Behavior::VoteZero,
            }),
            "equivocate" => AdversaryToken::Fault(Fault::Byzantine {
                parties: set()?,
                behavior: Behavior::EquivocateVcbc,
            }),
            "delay" => {
                let (parties, units) = rest
                    .rsplit_once(':')
                    .ok_or_else(|| err("expected delay:SET:UNITS".into()))?;
                AdversaryToken::Fault(Fault::Delay {
                    sources: parse_set(parties).map_err(err)?,
                    delay: units.parse().map_err(|e: std::num::ParseIntError| err(e.to_string()))?,
                })
            }
            _ => return Err(err("unknown adversary".into())),
        })
    }
}

/// Everything a single run needs. Mirrors the TOML key set.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub n: usize,
    /// Fault bound; defaults to `(n - 1) / 3`.
    pub f: Option<usize>,
    /// Hex seed for keys, inputs and the random scheduler.
    pub seed: String,
    pub instances: u64,
    pub batch_size: usize,
    pub tx_size: usize,
    pub adversary: Vec<String>,
    pub event_budget: u64,
    pub transcript: bool,
    pub scenario: Option<String>,
    pub out: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            n: 4,
            f: None,
            seed: "01".into(),
            instances: 1,
            batch_size: 2,
            tx_size: 32,
            adversary: vec!["lockstep".into()],
            event_budget: DEFAULT_EVENT_BUDGET,
            transcript: false,
            scenario: None,
            out: None,
        }
    }
}

/// Derives a scheduler seed from key-seed bytes.
pub fn derive_u64(seed: &[u8]) -> u64 {
    let d = Digest::of(seed);
    u64::from_be_bytes(d.0[..8].try_into().expect("digest has 32 bytes"))
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    pub fn seed_bytes(&self) -> Result<Vec<u8>, ConfigError> {
        hex::decode(&self.seed).map_err(|_| ConfigError::Seed(self.seed.clone()))
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let f = self.f.unwrap_or_else(|| max_faults(self.n));
        if f == 0 || self.n <= 3 * f {
            return Err(ConfigError::TooFewParties {
                n: self.n,
                f: f.max(1),
            });
        }
        if self.batch_size == 0 || self.tx_size == 0 {
            return Err(ConfigError::Invalid("batch_size and tx_size must be at least 1".into()));
        }
        if self.instances == 0 {
            return Err(ConfigError::Invalid("instances must be at least 1".into()));
        }
        self.seed_bytes()?;
        Ok(())
    }

    pub fn to_sim(&self) -> Result<SimConfig, ConfigError> {
        self.validate()?;
        let seed = self.seed_bytes()?;
        let mut sim = SimConfig::new(self.n, &seed);
        sim.instances = self.instances;
        sim.batch_size = self.batch_size;
        sim.tx_size = self.tx_size;
        sim.event_budget = self.event_budget;
        sim.transcript = self.transcript;
        for raw in &self.adversary {
            match raw.parse()? {
                AdversaryToken::Order(BaseOrderToken::Lockstep) => sim.order = BaseOrder::Lockstep,
                AdversaryToken::Order(BaseOrderToken::Uniform(s)) => {
                    sim.order = BaseOrder::UniformRandom {
                        seed: s.unwrap_or_else(|| derive_u64(&seed)),
                    }
                }
                AdversaryToken::WorstCase => sim.worst_case = true,
                AdversaryToken::Fault(fault) => sim.faults.push(fault),
            }
        }
        let limit = self.f.unwrap_or_else(|| max_faults(self.n));
        let fixed: usize = sim
            .faults
            .iter()
            .filter(|f| f.corrupts())
            .map(|f| match f.parties() {
                PartySet::Fixed(ps) => ps.len(),
                PartySet::Members(r) => r.len(),
                PartySet::FirstMembers(k) | PartySet::NonMembers(k) => *k,
            })
            .sum();
        if fixed > limit {
            return Err(ConfigError::Invalid(format!(
                "{fixed} corrupted parties exceed f = {limit}"
            )));
        }
        Ok(sim)
    }
}
