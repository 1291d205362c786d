//! Pending-event queue with the two base delivery orders.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::PartyId;

/// How the scheduler picks the next event among those pending.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum BaseOrder {
    /// Every event is delivered exactly one time unit after it was sent
    /// (plus any extra delay); ties break by receiver, then send order.
    Lockstep,
    /// A uniformly random eligible event, drawn from a seeded stream.
    UniformRandom { seed: u64 },
}

#[derive(Clone, Debug)]
pub struct Envelope<T> {
    pub seq: u64,
    pub send_time: u64,
    pub ready_at: u64,
    pub from: PartyId,
    pub to: PartyId,
    /// Causal depth: length of the longest message chain ending here.
    pub depth: u64,
    pub item: T,
}

type Key = Reverse<(u64, PartyId, u64)>;

/// Deterministic event queue over simulated integral time.
///
/// Lockstep pops in `(ready_at, to, seq)` order and sets `now` to `ready_at`.
/// Uniform-random draws uniformly from an eligible pool. Events with extra
/// delay are held out of the pool until `now` reaches their `ready_at`; when
/// the pool is empty, time jumps to the earliest held event.
#[derive(Debug)]
pub struct EventQueue<T> {
    order: BaseOrder,
    now: u64,
    next_seq: u64,
    held: BinaryHeap<Key>,
    slab: std::collections::BTreeMap<u64, Envelope<T>>,
    eligible: Vec<u64>,
    rng: ChaCha8Rng,
}

impl<T> EventQueue<T> {
    pub fn new(order: BaseOrder) -> Self {
        let seed = match order {
            BaseOrder::Lockstep => 0,
            BaseOrder::UniformRandom { seed } => seed,
        };
        EventQueue {
            order,
            now: 0,
            next_seq: 0,
            held: BinaryHeap::new(),
            slab: std::collections::BTreeMap::new(),
            eligible: Vec::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn now(&self) -> u64 {
        self.now
    }

    pub fn len(&self) -> usize {
        self.slab.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slab.is_empty()
    }

    /// Enqueues an item sent now, ready `1 + extra_delay` time units later.
    pub fn push(&mut self, from: PartyId, to: PartyId, depth: u64, extra_delay: u64, item: T) -> u64 {
        let seq = self.next_seq;
        self.next_seq += 1;
        let ready_at = self.now + 1 + extra_delay;
        self.slab.insert(
            seq,
            Envelope {
                seq,
                send_time: self.now,
                ready_at,
                from,
                to,
                depth,
                item,
            },
        );
        let uniform = matches!(self.order, BaseOrder::UniformRandom { .. });
        if uniform && extra_delay == 0 {
            self.eligible.push(seq);
        } else {
            self.held.push(Reverse((ready_at, to, seq)));
        }
        seq
    }

    pub fn pop(&mut self) -> Option<Envelope<T>> {
        match self.order {
            BaseOrder::Lockstep => {
                let Reverse((ready_at, _, seq)) = self.held.pop()?;
                self.now = self.now.max(ready_at);
                self.slab.remove(&seq)
            }
            BaseOrder::UniformRandom { .. } => {
                self.promote();
                if self.eligible.is_empty() {
                    let Reverse((ready_at, _, _)) = *self.held.peek()?;
                    self.now = ready_at;
                    self.promote();
                }
                let pick = self.rng.gen_range(0..self.eligible.len());
                let seq = self.eligible.swap_remove(pick);
                let env = self.slab.remove(&seq)?;
                self.now = self.now.max(env.send_time + 1);
                Some(env)
            }
        }
    }

    fn promote(&mut self) {
        while let Some(&Reverse((ready_at, _, seq))) = self.held.peek() {
            if ready_at > self.now {
                break;
            }
            self.held.pop();
            self.eligible.push(seq);
        }
    }
}
