//! Stand-alone binary agreement battery: every honest-input assignment at a
//! given `n`, each under many seeded delivery schedules.

use std::collections::BTreeMap;
use std::sync::Arc;

use pmvba::abba::{Abba, AbbaConfig, AbbaDecision, AbbaInput, AbbaMessage};
use pmvba::broadcast::TxBatchPredicate;
use pmvba::message::{CertifiedProposal, Proposal};
use pmvba::simnet::{BaseOrder, EventQueue};
use pmvba::tcrypto::IdealOracle;
use pmvba::{max_faults, protocol_catalogue, schemes, PartyId};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

const CANDIDATE: PartyId = PartyId(1);
const DELIVERY_CAP: u64 = 1_000_000;

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct BatteryRun {
    /// Parties that never speak.
    pub silent: Vec<PartyId>,
    pub inputs: BTreeMap<PartyId, bool>,
    pub schedule: u64,
    pub decisions: BTreeMap<PartyId, (bool, u32)>,
}

impl BatteryRun {
    pub fn honest_ones(&self) -> usize {
        self.inputs.values().filter(|&&b| b).count()
    }

    pub fn all_decided(&self) -> bool {
        self.decisions.len() == self.inputs.len()
    }

    pub fn agreement(&self) -> bool {
        let mut bits = self.decisions.values().map(|d| d.0);
        let first = bits.next();
        bits.all(|b| Some(b) == first)
    }

    /// At least `f + 1` honest ones force 1.
    pub fn biased_validity(&self, f: usize) -> bool {
        self.honest_ones() < f + 1 || self.decisions.values().all(|d| d.0)
    }

    pub fn unanimity_zero(&self) -> bool {
        self.honest_ones() > 0 || self.decisions.values().all(|d| !d.0)
    }

    pub fn max_round(&self) -> u32 {
        self.decisions.values().map(|d| d.1).max().unwrap_or(u32::MAX)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct BatterySummary {
    pub runs: usize,
    pub undecided: usize,
    pub agreement_failures: usize,
    pub biased_validity_failures: usize,
    pub unanimity_failures: usize,
    pub within_5: usize,
    pub within_40: usize,
    pub max_round: u32,
}

impl BatterySummary {
    pub fn frac_within_5(&self) -> f64 {
        self.within_5 as f64 / self.runs as f64
    }
}

fn certified(oracle: &Arc<IdealOracle>, n: usize) -> CertifiedProposal {
    let proposal = Proposal {
        proposer: CANDIDATE,
        instance: 1,
        payload: vec![7; 8],
    };
    let msg = proposal.signing_bytes();
    let keys = oracle.party_keys(PartyId(1));
    let shares: Vec<_> = PartyId::all(n)
        .map(|p| oracle.party_keys(p).sign(schemes::SIG, &msg).expect("scheme exists"))
        .collect();
    let proof = keys.combine(schemes::SIG, &msg, &shares).expect("enough shares");
    CertifiedProposal { proposal, proof }
}

enum Item {
    Start(bool),
    Msg(AbbaMessage),
}

/// One battery run. Starts are staggered by up to three time units and
/// deliveries follow the seeded uniform order.
pub fn run_one(n: usize, silent: &[PartyId], inputs: &BTreeMap<PartyId, bool>, schedule: u64) -> BatteryRun {
    let oracle = Arc::new(
        IdealOracle::key_setup(n, protocol_catalogue(n), &schedule.to_be_bytes()).expect("valid n"),
    );
    let cp = certified(&oracle, n);
    let f = max_faults(n);
    let mut abbas: BTreeMap<PartyId, Abba> = inputs
        .keys()
        .map(|&p| {
            let cfg = AbbaConfig {
                instance: 1,
                candidate: CANDIDATE,
                n,
                f,
                keys: oracle.party_keys(p),
                predicate: Arc::new(TxBatchPredicate { tx_size: 8 }),
            };
            (p, Abba::new(cfg))
        })
        .collect();
    let mut queue = EventQueue::new(BaseOrder::UniformRandom { seed: schedule });
    let mut rng = ChaCha8Rng::seed_from_u64(schedule ^ 0x5eed);
    for (&p, &bit) in inputs {
        queue.push(p, p, 0, rng.gen_range(0..3), Item::Start(bit));
    }
    let mut decisions: BTreeMap<PartyId, AbbaDecision> = BTreeMap::new();
    let mut deliveries = 0;
    while let Some(env) = queue.pop() {
        deliveries += 1;
        if deliveries > DELIVERY_CAP || decisions.len() == inputs.len() {
            break;
        }
        let Some(abba) = abbas.get_mut(&env.to) else {
            continue;
        };
        let step = match env.item {
            Item::Start(bit) => {
                let input = if bit {
                    AbbaInput::one(cp.clone())
                } else {
                    AbbaInput::zero()
                };
                abba.start(input)
            }
            Item::Msg(m) => abba.handle(env.from, m),
        }
        .expect("honest parties never see conflicting certificates");
        for m in step.broadcasts {
            for to in PartyId::all(n) {
                if !silent.contains(&to) {
                    queue.push(env.to, to, 0, 0, Item::Msg(m.clone()));
                }
            }
        }
        if let Some(d) = step.decided {
            decisions.insert(env.to, d);
        }
    }
    BatteryRun {
        silent: silent.to_vec(),
        inputs: inputs.clone(),
        schedule,
        decisions: decisions.into_iter().map(|(p, d)| (p, (d.bit, d.round))).collect(),
    }
}

/// Every input assignment for the honest parties, with no silent party and
/// with the last party silent, each under `schedules` schedules.
pub fn run_battery(n: usize, schedules: u64) -> Vec<BatteryRun> {
    let f = max_faults(n);
    let mut cases = Vec::new();
    for silent_count in [0, f] {
        let silent: Vec<PartyId> = PartyId::all(n).skip(n - silent_count).collect();
        let honest: Vec<PartyId> = PartyId::all(n).take(n - silent_count).collect();
        for mask in 0u32..(1 << honest.len()) {
            let inputs: BTreeMap<PartyId, bool> = honest
                .iter()
                .enumerate()
                .map(|(i, &p)| (p, mask >> i & 1 == 1))
                .collect();
            for s in 0..schedules {
                cases.push((silent.clone(), inputs.clone(), s));
            }
        }
    }
    cases
        .par_iter()
        .map(|(silent, inputs, s)| run_one(n, silent, inputs, *s))
        .collect()
}

pub fn summarize(n: usize, runs: &[BatteryRun]) -> BatterySummary {
    let f = max_faults(n);
    let mut s = BatterySummary {
        runs: runs.len(),
        ..BatterySummary::default()
    };
    for r in runs {
        if !r.all_decided() {
            s.undecided += 1;
            continue;
        }
        s.agreement_failures += usize::from(!r.agreement());
        s.biased_validity_failures += usize::from(!r.biased_validity(f));
        s.unanimity_failures += usize::from(!r.unanimity_zero());
        let round = r.max_round();
        s.within_5 += usize::from(round <= 5);
        s.within_40 += usize::from(round <= 40);
        s.max_round = s.max_round.max(round);
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unanimous_one_decides_one() {
        let inputs = PartyId::all(4).map(|p| (p, true)).collect();
        let r = run_one(4, &[], &inputs, 3);
        assert!(r.all_decided());
        assert!(r.decisions.values().all(|d| d.0));
    }

    #[test]
    fn silent_party_does_not_block() {
        let inputs = PartyId::all(3).map(|p| (p, false)).collect();
        let r = run_one(4, &[PartyId(4)], &inputs, 1);
        assert!(r.all_decided() && r.unanimity_zero());
    }
}
