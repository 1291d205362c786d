//! Deterministic discrete-event network for running `n` party engines under
//! an adversarial scheduler.
//!
//! A run is a pure function of its [`SimConfig`]: key material, inputs and the
//! delivery order all derive from seeds, and every container is ordered.
//! Honest-to-honest messages are never dropped or altered; the adversary
//! chooses delivery order, delays traffic, and controls up to `f` corrupted
//! parties (crashed, silent, isolated or Byzantine).
//!
//! While running, the simulator checks agreement, external validity,
//! integrity and proof uniqueness, takes the reach snapshot when the first
//! honest party enters sequential agreement, and reports a liveness failure
//! if the event budget runs out or the network goes quiet before every honest
//! party has decided.

pub mod adversary;
pub mod metrics;
pub mod queue;

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::broadcast::{Predicate, TxBatchPredicate};
use crate::committee::{cs_coin_name, derive_committee, filter_order, order_coin_name, Committee};
use crate::engine::{Action, EngineConfig, Milestone, PartyEngine, Timer};
use crate::message::{Body, CertifiedProposal, Message, MessageKind};
use crate::tcrypto::{CryptoError, Digest, IdealOracle, ThresholdBackend};
use crate::{max_faults, protocol_catalogue, schemes, InstanceId, PartyId};

pub use adversary::{Behavior, Fault, PartySet};
pub use metrics::{InstanceMetrics, PartyOutcome, ReachSnapshot, RunMetrics, Traffic};
pub use queue::{BaseOrder, Envelope, EventQueue};

/// Default event budget: deliveries allowed per instance.
pub const DEFAULT_EVENT_BUDGET: u64 = 1_000_000;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SimConfig {
    pub n: usize,
    /// Seed of the threshold key material; also seeds proposal contents.
    pub key_seed: Vec<u8>,
    pub instances: u64,
    /// Transactions per proposal.
    pub batch_size: usize,
    /// Bytes per transaction.
    pub tx_size: usize,
    pub order: BaseOrder,
    pub faults: Vec<Fault>,
    /// Withhold proposals so that every candidate but the last is rejected.
    pub worst_case: bool,
    pub event_budget: u64,
    pub transcript: bool,
}

impl SimConfig {
    pub fn new(n: usize, key_seed: &[u8]) -> Self {
        SimConfig {
            n,
            key_seed: key_seed.to_vec(),
            instances: 1,
            batch_size: 2,
            tx_size: 32,
            order: BaseOrder::Lockstep,
            faults: Vec::new(),
            worst_case: false,
            event_budget: DEFAULT_EVENT_BUDGET,
            transcript: false,
        }
    }

    pub fn f(&self) -> usize {
        max_faults(self.n)
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SimError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Crypto(#[from] CryptoError),
    #[error("liveness failure in instance {instance} after {deliveries} deliveries ({reason}); undecided: {undecided:?}")]
    Liveness {
        instance: InstanceId,
        deliveries: u64,
        reason: &'static str,
        undecided: Vec<PartyId>,
    },
    #[error("agreement violated in instance {instance}: {a} and {b} decided differently")]
    Agreement {
        instance: InstanceId,
        a: PartyId,
        b: PartyId,
    },
    #[error("instance {instance}: {party} decided a payload failing the predicate")]
    Validity { instance: InstanceId, party: PartyId },
    #[error("instance {instance}: {party} decided a value no committee member proposed")]
    Integrity { instance: InstanceId, party: PartyId },
    #[error("instance {instance}: two certified payloads for proposer {proposer}")]
    ProofUniqueness {
        instance: InstanceId,
        proposer: PartyId,
    },
    #[error("honest {party} failed: {error}")]
    Engine { party: PartyId, error: String },
    #[error("instance {instance}: reach table {reach:?} differs from transcript recount {recount:?}")]
    ReachMismatch {
        instance: InstanceId,
        reach: BTreeMap<PartyId, usize>,
        recount: BTreeMap<PartyId, usize>,
    },
}

/// Deterministic payload of `party` for `instance`: `batch` transactions of
/// `tx_size` bytes, each with a nonzero first byte.
pub fn make_payload(seed: &[u8], party: PartyId, instance: InstanceId, batch: usize, tx_size: usize) -> Vec<u8> {
    let mut material = seed.to_vec();
    material.extend_from_slice(&party.0.to_be_bytes());
    material.extend_from_slice(&instance.to_be_bytes());
    let d = Digest::of(&material);
    let mut rng = ChaCha8Rng::from_seed(d.0);
    let mut out = vec![0u8; batch * tx_size];
    rng.fill(out.as_mut_slice());
    for tx in out.chunks_mut(tx_size.max(1)) {
        tx[0] |= 1;
    }
    out
}

#[derive(Clone, Debug)]
enum Item {
    Msg(Message),
    Timer(Timer),
}

#[derive(Clone, Debug, Default)]
struct PartyStatus {
    crash_at: Option<u64>,
    silent: bool,
    isolated: bool,
    behavior: Option<Behavior>,
    delay: u64,
    corrupted: bool,
    /// A corrupted engine that hit an error stops acting.
    stopped: bool,
}

struct WorstCase {
    /// Candidates whose proposals are withheld, per instance.
    held: BTreeMap<InstanceId, BTreeSet<PartyId>>,
    withheld: BTreeMap<InstanceId, Vec<(PartyId, PartyId, u64, Message)>>,
    /// Highest ABBA index each party finished, per instance.
    progress: BTreeMap<InstanceId, BTreeMap<PartyId, usize>>,
}

struct Sim {
    cfg: SimConfig,
    oracle: Arc<IdealOracle>,
    predicate: Arc<dyn Predicate>,
    engines: Vec<PartyEngine>,
    queue: EventQueue<Item>,
    status: Vec<PartyStatus>,
    pending_faults: Vec<Fault>,
    depth: Vec<u64>,
    starts: Vec<BTreeMap<InstanceId, (u64, u64)>>,
    metrics: RunMetrics,
    decided_payloads: BTreeMap<InstanceId, BTreeMap<PartyId, (PartyId, Vec<u8>)>>,
    sent_proposals: BTreeMap<(InstanceId, PartyId), BTreeSet<Vec<u8>>>,
    certified: BTreeMap<(InstanceId, PartyId), Vec<u8>>,
    delivered_props: Vec<BTreeMap<InstanceId, BTreeSet<PartyId>>>,
    worst: Option<WorstCase>,
}

/// Runs a full simulation.
pub fn run(cfg: &SimConfig) -> Result<RunMetrics, SimError> {
    let mut sim = Sim::new(cfg.clone())?;
    sim.run()?;
    Ok(sim.metrics)
}

fn cps_in(msg: &Message) -> Vec<&CertifiedProposal> {
    match &msg.body {
        Body::Propose { cp } | Body::Recommendation { cp } | Body::RecoverAnswer { cp } => vec![cp],
        Body::Vote {
            payload: Some(cp), ..
        } => vec![cp],
        _ => Vec::new(),
    }
}

impl Sim {
    fn new(cfg: SimConfig) -> Result<Self, SimError> {
        let n = cfg.n;
        if n < 4 {
            return Err(SimError::Config(format!("need n >= 4 (n > 3f with f >= 1), got {n}")));
        }
        if cfg.batch_size == 0 || cfg.tx_size == 0 {
            return Err(SimError::Config("batch_size and tx_size must be positive".into()));
        }
        let f = cfg.f();
        let oracle = Arc::new(IdealOracle::key_setup(n, protocol_catalogue(n), &cfg.key_seed)?);
        let predicate: Arc<dyn Predicate> = Arc::new(TxBatchPredicate {
            tx_size: cfg.tx_size,
        });
        let engines = PartyId::all(n)
            .map(|p| {
                PartyEngine::new(EngineConfig::new(
                    n,
                    oracle.party_keys(p),
                    predicate.clone(),
                ))
            })
            .collect();
        let mut instances = Vec::new();
        for i in 1..=cfg.instances {
            let committee = derive_committee(oracle.coin_value(&cs_coin_name(i)), n, f + 1);
            let order = filter_order(oracle.coin_value(&order_coin_name(i)), n, &committee);
            instances.push(InstanceMetrics {
                instance: i,
                committee: Some(committee),
                order,
                ..InstanceMetrics::default()
            });
        }
        let worst = cfg.worst_case.then(|| WorstCase {
            held: instances
                .iter()
                .map(|m| {
                    let keep = m.order.len().saturating_sub(1);
                    (m.instance, m.order[..keep].iter().copied().collect())
                })
                .collect(),
            withheld: BTreeMap::new(),
            progress: BTreeMap::new(),
        });
        let mut sim = Sim {
            queue: EventQueue::new(cfg.order),
            status: vec![PartyStatus::default(); n],
            pending_faults: Vec::new(),
            depth: vec![0; n],
            starts: vec![BTreeMap::new(); n],
            metrics: RunMetrics {
                n,
                f,
                instances,
                ..RunMetrics::default()
            },
            decided_payloads: BTreeMap::new(),
            sent_proposals: BTreeMap::new(),
            certified: BTreeMap::new(),
            delivered_props: vec![BTreeMap::new(); n],
            worst,
            oracle,
            predicate,
            engines,
            cfg,
        };
        for fault in sim.cfg.faults.clone() {
            if fault.parties().is_committee_relative() {
                sim.pending_faults.push(fault);
            } else {
                sim.apply_fault(&fault, None)?;
            }
        }
        Ok(sim)
    }

    fn apply_fault(&mut self, fault: &Fault, committee: Option<&Committee>) -> Result<(), SimError> {
        let n = self.cfg.n;
        let parties = fault
            .parties()
            .resolve(n, committee)
            .expect("resolvable once the committee is known");
        // Relative faults resolve after time 0: silence and crashes then
        // start at the current time.
        let now = self.queue.now();
        for p in parties {
            if p.0 == 0 || p.index() >= n {
                return Err(SimError::Config(format!("party {p} outside 1..={n}")));
            }
            let s = &mut self.status[p.index()];
            s.corrupted |= fault.corrupts();
            match fault {
                Fault::Crash { at_time, .. } => s.crash_at = Some((*at_time).max(now)),
                Fault::Isolate { .. } => s.isolated = true,
                Fault::Silent { .. } => {
                    if committee.is_some() {
                        s.crash_at = Some(now);
                    } else {
                        s.silent = true;
                    }
                }
                Fault::Byzantine { behavior, .. } => s.behavior = Some(*behavior),
                Fault::Delay { delay, .. } => s.delay = *delay,
            }
        }
        let corrupted: Vec<PartyId> = PartyId::all(n)
            .filter(|p| self.status[p.index()].corrupted)
            .collect();
        if corrupted.len() > self.cfg.f() {
            return Err(SimError::Config(format!(
                "{} corrupted parties exceed f = {}",
                corrupted.len(),
                self.cfg.f()
            )));
        }
        self.metrics.corrupted = corrupted;
        Ok(())
    }

    fn resolve_pending(&mut self) -> Result<(), SimError> {
        if self.pending_faults.is_empty() {
            return Ok(());
        }
        let committee = self.metrics.instances[0]
            .committee
            .clone()
            .expect("computed at setup");
        for fault in std::mem::take(&mut self.pending_faults) {
            self.apply_fault(&fault, Some(&committee))?;
        }
        Ok(())
    }

    fn down(&self, p: PartyId) -> bool {
        let s = &self.status[p.index()];
        s.silent || s.stopped || s.crash_at.is_some_and(|t| self.queue.now() >= t)
    }

    fn responsive(&self, p: PartyId) -> bool {
        !self.down(p) && !self.status[p.index()].isolated
    }

    fn honest(&self, p: PartyId) -> bool {
        !self.status[p.index()].corrupted
    }

    fn all_decided(&self) -> bool {
        let last = self.cfg.instances;
        PartyId::all(self.cfg.n)
            .filter(|&p| self.honest(p))
            .all(|p| self.engines[p.index()].poll_decided(last).is_some())
    }

    fn inst(&mut self, instance: InstanceId) -> Option<&mut InstanceMetrics> {
        let idx = instance.checked_sub(1)? as usize;
        self.metrics.instances.get_mut(idx)
    }

    fn start(&mut self, p: PartyId, instance: InstanceId) -> Result<(), SimError> {
        let payload = make_payload(
            &self.cfg.key_seed,
            p,
            instance,
            self.cfg.batch_size,
            self.cfg.tx_size,
        );
        self.starts[p.index()].insert(instance, (self.queue.now(), self.depth[p.index()]));
        let acts = self.engines[p.index()].start_instance(instance, payload);
        self.absorb(p, acts)
    }

    fn absorb(
        &mut self,
        p: PartyId,
        acts: Result<Vec<Action>, crate::engine::EngineError>,
    ) -> Result<(), SimError> {
        match acts {
            Ok(acts) => self.emit(p, acts),
            Err(e) if self.honest(p) => Err(SimError::Engine {
                party: p,
                error: e.to_string(),
            }),
            Err(_) => {
                self.status[p.index()].stopped = true;
                Ok(())
            }
        }
    }

    fn run(&mut self) -> Result<(), SimError> {
        for p in PartyId::all(self.cfg.n) {
            if !self.down(p) {
                self.start(p, 1)?;
            }
        }
        let budget = self.cfg.event_budget.saturating_mul(self.cfg.instances);
        while !self.all_decided() {
            let Some(env) = self.queue.pop() else {
                return Err(self.liveness("network quiet"));
            };
            self.metrics.deliveries += 1;
            if self.metrics.deliveries > budget {
                return Err(self.liveness("event budget exhausted"));
            }
            self.deliver(env)?;
        }
        self.metrics.end_time = self.queue.now();
        Ok(())
    }

    fn liveness(&self, reason: &'static str) -> SimError {
        let instance = (1..=self.cfg.instances)
            .find(|&i| {
                PartyId::all(self.cfg.n)
                    .any(|p| self.honest(p) && self.engines[p.index()].poll_decided(i).is_none())
            })
            .unwrap_or(self.cfg.instances);
        SimError::Liveness {
            instance,
            deliveries: self.metrics.deliveries,
            reason,
            undecided: PartyId::all(self.cfg.n)
                .filter(|&p| self.honest(p) && self.engines[p.index()].poll_decided(instance).is_none())
                .collect(),
        }
    }

    fn deliver(&mut self, env: Envelope<Item>) -> Result<(), SimError> {
        let to = env.to;
        if self.down(to) {
            return Ok(());
        }
        let d = &mut self.depth[to.index()];
        *d = (*d).max(env.depth);
        match env.item {
            Item::Timer(timer) => {
                let acts = self.engines[to.index()].on_timer(timer);
                self.emit(to, acts)
            }
            Item::Msg(msg) => {
                if self.cfg.transcript {
                    self.metrics.transcript.push(format!(
                        "{},{},{},{},{}",
                        self.queue.now(),
                        env.from.0,
                        to.0,
                        msg.kind().name(),
                        msg.size()
                    ));
                }
                let first_honest_share = msg.kind() == MessageKind::CsShare
                    && self.honest(env.from)
                    && !self.pending_faults.is_empty();
                match &msg.body {
                    Body::Propose { cp } if cp.proposal.proposer == env.from => {
                        self.credit(to, msg.instance, cp.proposal.proposer)
                    }
                    Body::Recommendation { cp } => self.credit(to, msg.instance, cp.proposal.proposer),
                    _ => {}
                }
                let acts = self.engines[to.index()].deliver(env.from, msg);
                self.absorb(to, acts)?;
                if first_honest_share {
                    self.resolve_pending()?;
                }
                Ok(())
            }
        }
    }

    fn credit(&mut self, to: PartyId, instance: InstanceId, proposer: PartyId) {
        self.delivered_props[to.index()]
            .entry(instance)
            .or_default()
            .insert(proposer);
    }

    fn emit(&mut self, p: PartyId, acts: Vec<Action>) -> Result<(), SimError> {
        for act in acts {
            match act {
                Action::Send { to, msg } => self.send(p, to, msg)?,
                Action::Broadcast(msg) => {
                    for to in PartyId::all(self.cfg.n) {
                        self.send(p, to, msg.clone())?;
                    }
                }
                Action::SetTimer { delay, timer } => {
                    if !self.down(p) {
                        let depth = self.depth[p.index()];
                        self.queue
                            .push(p, p, depth, delay.saturating_sub(1), Item::Timer(timer));
                    }
                }
                Action::Note(m) => self.note(p, m)?,
            }
        }
        Ok(())
    }

    fn send(&mut self, from: PartyId, to: PartyId, msg: Message) -> Result<(), SimError> {
        if self.down(from) {
            return Ok(());
        }
        let status = self.status[from.index()].clone();
        let msg = match status.behavior {
            Some(_) if to == from => msg,
            Some(Behavior::VoteZero) => {
                match adversary::vote_zero(&self.oracle.party_keys(from), &msg) {
                    Some(m) => m,
                    None => return Ok(()),
                }
            }
            Some(Behavior::EquivocateVcbc) => adversary::equivocate(&msg, to, self.cfg.n),
            None => msg,
        };
        if let Some(m) = self.inst(msg.instance) {
            m.traffic.add(&msg);
            m.sent_by.entry(from).or_default().add(&msg);
            *m.by_kind.entry(msg.kind()).or_default() += 1;
        }
        if let Body::VcbcSend { proposal } = &msg.body {
            self.sent_proposals
                .entry((msg.instance, proposal.proposer))
                .or_default()
                .insert(proposal.payload.clone());
        }
        self.check_unique(&msg)?;
        if status.isolated || self.status[to.index()].isolated {
            return Ok(());
        }
        if self.withhold(from, to, &msg) {
            return Ok(());
        }
        let depth = self.depth[from.index()] + 1;
        self.queue.push(from, to, depth, status.delay, Item::Msg(msg));
        Ok(())
    }

    fn check_unique(&mut self, msg: &Message) -> Result<(), SimError> {
        for cp in cps_in(msg) {
            let key = (cp.proposal.instance, cp.proposal.proposer);
            if let Some(known) = self.certified.get(&key) {
                if *known != cp.proposal.payload
                    && self
                        .oracle
                        .verify_proof(&cp.proposal.signing_bytes(), &cp.proof)
                {
                    return Err(SimError::ProofUniqueness {
                        instance: key.0,
                        proposer: key.1,
                    });
                }
                continue;
            }
            if cp.proof.scheme == schemes::SIG
                && self.oracle.verify_proof(&cp.proposal.signing_bytes(), &cp.proof)
            {
                self.certified.insert(key, cp.proposal.payload.clone());
            }
        }
        Ok(())
    }

    fn withhold(&mut self, from: PartyId, to: PartyId, msg: &Message) -> bool {
        let Some(w) = self.worst.as_mut() else {
            return false;
        };
        let proposer = match &msg.body {
            Body::Propose { cp } | Body::Recommendation { cp } => cp.proposal.proposer,
            _ => return false,
        };
        let Some(held) = w.held.get(&msg.instance) else {
            return false;
        };
        if !held.contains(&proposer) {
            return false;
        }
        let depth = self.depth[from.index()] + 1;
        w.withheld
            .entry(msg.instance)
            .or_default()
            .push((from, to, depth, msg.clone()));
        true
    }

    fn maybe_release(&mut self, instance: InstanceId) {
        let n = self.cfg.n;
        let honest: Vec<PartyId> = PartyId::all(n).filter(|&p| self.honest(p)).collect();
        let decided: Vec<bool> = honest
            .iter()
            .map(|p| self.engines[p.index()].poll_decided(instance).is_some())
            .collect();
        let Some(w) = self.worst.as_mut() else {
            return;
        };
        let Some(held) = w.held.get(&instance) else {
            return;
        };
        let last_held = held.len();
        if last_held == 0 {
            w.held.remove(&instance);
            return;
        }
        let progress = w.progress.entry(instance).or_default();
        let done = honest.iter().zip(&decided).all(|(p, &dec)| {
            dec || progress.get(p).is_some_and(|&idx| idx + 1 >= last_held)
        });
        if !done {
            return;
        }
        w.held.remove(&instance);
        for (from, to, depth, msg) in w.withheld.remove(&instance).unwrap_or_default() {
            self.queue.push(from, to, depth, 0, Item::Msg(msg));
        }
    }

    fn note(&mut self, p: PartyId, m: Milestone) -> Result<(), SimError> {
        let depth = self.depth[p.index()];
        let now = self.queue.now();
        match m {
            Milestone::PermutationReady { instance, .. } => {
                let (_, d0) = self.starts[p.index()][&instance];
                if let Some(im) = self.inst(instance) {
                    im.pre_agreement_rounds.insert(p, depth - d0);
                }
            }
            Milestone::EnteredAgreement { instance } => {
                if self.honest(p) && self.inst(instance).is_some_and(|im| im.reach.is_none()) {
                    self.snapshot_reach(p, instance)?;
                }
            }
            Milestone::AbbaDecided {
                instance,
                index,
                bit,
                round,
                ..
            } => {
                if let Some(im) = self.inst(instance) {
                    im.abba_decisions.push((p, index, bit, round));
                }
                if let Some(w) = self.worst.as_mut() {
                    let e = w.progress.entry(instance).or_default().entry(p).or_insert(index);
                    *e = (*e).max(index);
                }
                self.maybe_release(instance);
            }
            Milestone::RecoveryStarted { instance, .. } => {
                if let Some(im) = self.inst(instance) {
                    im.recoveries += 1;
                }
            }
            Milestone::Decided(v) => {
                let instance = v.instance;
                if self.honest(p) {
                    self.check_decision(p, &v)?;
                    let (t0, d0) = self.starts[p.index()][&instance];
                    let outcome = PartyOutcome {
                        proposer: v.proposer,
                        payload_len: v.payload.len(),
                        decide_time: now - t0,
                        decide_round: depth - d0,
                        iterations: v.iterations,
                        abba_round: v.abba_round,
                    };
                    if let Some(im) = self.inst(instance) {
                        im.decisions.insert(p, outcome);
                    }
                }
                self.maybe_release(instance);
                if instance < self.cfg.instances {
                    self.start(p, instance + 1)?;
                }
            }
            Milestone::CommitteeSelected { .. }
            | Milestone::ProposalCertified { .. }
            | Milestone::RecommendationsComplete { .. } => {}
        }
        Ok(())
    }

    fn check_decision(&mut self, p: PartyId, v: &crate::engine::DecidedValue) -> Result<(), SimError> {
        let instance = v.instance;
        if !self.predicate.check(&v.payload) {
            return Err(SimError::Validity { instance, party: p });
        }
        let committee = self.metrics.instances[(instance - 1) as usize]
            .committee
            .clone()
            .expect("computed at setup");
        let proposed = self
            .sent_proposals
            .get(&(instance, v.proposer))
            .is_some_and(|s| s.contains(&v.payload));
        if !committee.contains(v.proposer) || !proposed {
            return Err(SimError::Integrity { instance, party: p });
        }
        let decided = self.decided_payloads.entry(instance).or_default();
        if let Some((&other, first)) = decided.iter().next() {
            if *first != (v.proposer, v.payload.clone()) {
                return Err(SimError::Agreement {
                    instance,
                    a: other,
                    b: p,
                });
            }
        }
        decided.insert(p, (v.proposer, v.payload.clone()));
        Ok(())
    }

    fn snapshot_reach(&mut self, first: PartyId, instance: InstanceId) -> Result<(), SimError> {
        let members: Vec<PartyId> = self.metrics.instances[(instance - 1) as usize]
            .committee
            .as_ref()
            .expect("computed at setup")
            .members()
            .iter()
            .copied()
            .collect();
        let responsive: Vec<PartyId> = PartyId::all(self.cfg.n)
            .filter(|&q| self.responsive(q))
            .collect();
        let mut reach = BTreeMap::new();
        let mut recount = BTreeMap::new();
        for &m in &members {
            let holders = responsive
                .iter()
                .filter(|q| self.engines[q.index()].map_holdings(instance).contains(&m))
                .count();
            let delivered = responsive
                .iter()
                .filter(|q| {
                    self.engines[q.index()].current_instance() == Some(instance)
                        && self.delivered_props[q.index()]
                            .get(&instance)
                            .is_some_and(|s| s.contains(&m))
                })
                .count();
            reach.insert(m, holders);
            recount.insert(m, delivered);
        }
        if reach != recount {
            return Err(SimError::ReachMismatch {
                instance,
                reach,
                recount,
            });
        }
        let time = self.queue.now();
        if let Some(im) = self.inst(instance) {
            im.reach = Some(ReachSnapshot {
                time,
                first_party: first,
                reach,
                recount,
            });
        }
        Ok(())
    }
}
