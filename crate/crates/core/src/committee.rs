//! Committee selection and random ordering of committee members.
//!
//! Both are threshold coin flips with a different coin name and threshold:
//! the committee is the first `kappa` parties of the permutation seeded by the
//! `f + 1` coin `CS/<instance>`; the order is the `2f + 1` coin
//! `ORDER/<instance>` permutation restricted to committee members.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::message::{Body, CoinKind};
use crate::tcrypto::{prg_permutation, CoinShare, CoinValue, PartyKeys};
use crate::{schemes, InstanceId, PartyId};

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Committee {
    members: BTreeSet<PartyId>,
}

impl Committee {
    pub fn new(members: impl IntoIterator<Item = PartyId>) -> Self {
        Committee {
            members: members.into_iter().collect(),
        }
    }

    pub fn contains(&self, party: PartyId) -> bool {
        self.members.contains(&party)
    }

    pub fn members(&self) -> &BTreeSet<PartyId> {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

/// The first `kappa` entries of the permutation seeded by `coin`.
pub fn derive_committee(coin: CoinValue, n: usize, kappa: usize) -> Committee {
    assert!(kappa <= n, "committee of {kappa} out of {n} parties");
    Committee::new(prg_permutation(coin, n).into_iter().take(kappa))
}

/// The full permutation seeded by `coin`, restricted to `committee`.
pub fn filter_order(coin: CoinValue, n: usize, committee: &Committee) -> Vec<PartyId> {
    prg_permutation(coin, n)
        .into_iter()
        .filter(|p| committee.contains(*p))
        .collect()
}

pub fn cs_coin_name(instance: InstanceId) -> String {
    format!("CS/{instance}")
}

pub fn order_coin_name(instance: InstanceId) -> String {
    format!("ORDER/{instance}")
}

/// Collects verified coin shares for one named coin until its threshold.
///
/// Shares may arrive before `start`; at most one share per party is kept, so
/// the buffer never exceeds `n`. The coin is tossed only after `start`.
#[derive(Debug)]
struct CoinCollector {
    name: String,
    scheme: &'static str,
    started: bool,
    shares: BTreeMap<PartyId, CoinShare>,
    rejected: usize,
    value: Option<CoinValue>,
}

impl CoinCollector {
    fn new(name: String, scheme: &'static str) -> Self {
        CoinCollector {
            name,
            scheme,
            started: false,
            shares: BTreeMap::new(),
            rejected: 0,
            value: None,
        }
    }

    /// Returns our own share the first time it is called.
    fn start(&mut self, keys: &PartyKeys) -> Option<CoinShare> {
        if self.started {
            return None;
        }
        self.started = true;
        let own = keys
            .coin_share(self.scheme, &self.name)
            .expect("protocol scheme is registered");
        self.shares.insert(keys.me(), own.clone());
        Some(own)
    }

    fn add(&mut self, keys: &PartyKeys, from: PartyId, share: CoinShare) {
        if share.scheme != self.scheme || !keys.verify_coin_share(&self.name, from, &share) {
            self.rejected += 1;
            return;
        }
        self.shares.entry(from).or_insert(share);
    }

    /// Tosses the coin once enough shares are held; `Some` exactly once.
    fn try_toss(&mut self, keys: &PartyKeys) -> Option<CoinValue> {
        if !self.started || self.value.is_some() {
            return None;
        }
        let t = keys.threshold(self.scheme).ok()?;
        if self.shares.len() < t {
            return None;
        }
        let shares: Vec<CoinShare> = self.shares.values().cloned().collect();
        let value = keys.coin_toss(self.scheme, &self.name, &shares).ok()?;
        self.value = Some(value);
        Some(value)
    }
}

/// Committee selection for one instance.
#[derive(Debug)]
pub struct CommitteeSelection {
    instance: InstanceId,
    n: usize,
    kappa: usize,
    coin: CoinCollector,
    output: Option<Committee>,
}

impl CommitteeSelection {
    pub fn new(instance: InstanceId, n: usize, kappa: usize) -> Self {
        CommitteeSelection {
            instance,
            n,
            kappa,
            coin: CoinCollector::new(cs_coin_name(instance), schemes::COIN_LO),
            output: None,
        }
    }

    pub fn instance(&self) -> InstanceId {
        self.instance
    }

    /// Broadcast body carrying our share, on the first call only. A committee
    /// may already be available if enough shares were buffered.
    pub fn start(&mut self, keys: &PartyKeys) -> (Option<Body>, Option<Committee>) {
        let body = self.coin.start(keys).map(|share| Body::Share {
            kind: CoinKind::Cs,
            share,
        });
        (body, self.poll(keys))
    }

    /// Returns the committee the first time it becomes known.
    pub fn on_share(
        &mut self,
        keys: &PartyKeys,
        from: PartyId,
        share: CoinShare,
    ) -> Option<Committee> {
        self.coin.add(keys, from, share);
        self.poll(keys)
    }

    fn poll(&mut self, keys: &PartyKeys) -> Option<Committee> {
        let coin = self.coin.try_toss(keys)?;
        let committee = derive_committee(coin, self.n, self.kappa);
        self.output = Some(committee.clone());
        Some(committee)
    }

    pub fn output(&self) -> Option<&Committee> {
        self.output.as_ref()
    }

    pub fn rejected_shares(&self) -> usize {
        self.coin.rejected
    }
}

/// Random order of the committee for one instance.
#[derive(Debug)]
pub struct RandomOrder {
    instance: InstanceId,
    n: usize,
    committee: Option<Committee>,
    coin: CoinCollector,
    output: Option<Vec<PartyId>>,
}

impl RandomOrder {
    pub fn new(instance: InstanceId, n: usize) -> Self {
        RandomOrder {
            instance,
            n,
            committee: None,
            coin: CoinCollector::new(order_coin_name(instance), schemes::COIN_HI),
            output: None,
        }
    }

    pub fn instance(&self) -> InstanceId {
        self.instance
    }

    pub fn start(
        &mut self,
        keys: &PartyKeys,
        committee: Committee,
    ) -> (Option<Body>, Option<Vec<PartyId>>) {
        if self.committee.is_none() {
            self.committee = Some(committee);
        }
        let body = self.coin.start(keys).map(|share| Body::Share {
            kind: CoinKind::Order,
            share,
        });
        (body, self.poll(keys))
    }

    pub fn on_share(
        &mut self,
        keys: &PartyKeys,
        from: PartyId,
        share: CoinShare,
    ) -> Option<Vec<PartyId>> {
        self.coin.add(keys, from, share);
        self.poll(keys)
    }

    fn poll(&mut self, keys: &PartyKeys) -> Option<Vec<PartyId>> {
        let coin = self.coin.try_toss(keys)?;
        let committee = self.committee.as_ref().expect("started with a committee");
        let order = filter_order(coin, self.n, committee);
        self.output = Some(order.clone());
        Some(order)
    }

    pub fn output(&self) -> Option<&[PartyId]> {
        self.output.as_deref()
    }

    pub fn rejected_shares(&self) -> usize {
        self.coin.rejected
    }
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::tcrypto::{IdealOracle, ThresholdBackend};
    use crate::{max_faults, protocol_catalogue};

    fn keys(n: usize) -> (Arc<IdealOracle>, Vec<PartyKeys>) {
        let o = Arc::new(IdealOracle::key_setup(n, protocol_catalogue(n), b"committee").unwrap());
        let ks = PartyId::all(n).map(|p| o.party_keys(p)).collect();
        (o, ks)
    }

    fn share_of(b: Option<Body>) -> CoinShare {
        match b {
            Some(Body::Share { share, .. }) => share,
            other => panic!("expected a share body, got {other:?}"),
        }
    }

    #[test]
    fn start_broadcasts_once() {
        let (_, ks) = keys(4);
        let mut cs = CommitteeSelection::new(1, 4, 2);
        let (body, committee) = cs.start(&ks[0]);
        let share = share_of(body);
        assert_eq!(share.coin_name, "CS/1");
        assert!(committee.is_none());
        assert!(cs.start(&ks[0]).0.is_none());
    }

    #[test]
    fn committee_at_f_plus_one_shares() {
        let (o, ks) = keys(4);
        let mut cs = CommitteeSelection::new(1, 4, 2);
        cs.start(&ks[0]);
        let s2 = o.coin_share(PartyId(2), schemes::COIN_LO, "CS/1").unwrap();
        let c = cs.on_share(&ks[0], PartyId(2), s2.clone()).unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c, derive_committee(o.coin_value("CS/1"), 4, 2));
        // Output happens exactly once.
        assert!(cs.on_share(&ks[0], PartyId(2), s2).is_none());
    }

    #[test]
    fn duplicate_forged_and_stale_shares_are_ignored() {
        let (o, ks) = keys(4);
        let mut cs = CommitteeSelection::new(2, 4, 2);
        cs.start(&ks[0]);
        let own = o.coin_share(PartyId(1), schemes::COIN_LO, "CS/2").unwrap();
        assert!(cs.on_share(&ks[0], PartyId(1), own).is_none());
        let stale = o.coin_share(PartyId(3), schemes::COIN_LO, "CS/1").unwrap();
        assert!(cs.on_share(&ks[0], PartyId(3), stale).is_none());
        let mut forged = o.coin_share(PartyId(4), schemes::COIN_LO, "CS/2").unwrap();
        forged.value.0[0] ^= 1;
        assert!(cs.on_share(&ks[0], PartyId(4), forged).is_none());
        assert_eq!(cs.rejected_shares(), 2);
        assert!(cs.output().is_none());
    }

    #[test]
    fn shares_before_start_are_buffered() {
        let (o, ks) = keys(4);
        let mut cs = CommitteeSelection::new(1, 4, 2);
        for p in 2..=4 {
            let s = o.coin_share(PartyId(p), schemes::COIN_LO, "CS/1").unwrap();
            assert!(cs.on_share(&ks[0], PartyId(p), s).is_none());
        }
        let (_, committee) = cs.start(&ks[0]);
        assert!(committee.is_some());
    }

    #[test]
    fn derive_committee_edge_cases() {
        assert_eq!(derive_committee(CoinValue(5), 4, 4), Committee::new(PartyId::all(4)));
        assert_eq!(derive_committee(CoinValue(5), 10, 4), derive_committee(CoinValue(5), 10, 4));
    }

    #[test]
    fn filter_preserves_permutation_order() {
        let committee = Committee::new([PartyId(2), PartyId(3)]);
        // Find a seed whose full permutation is [3,1,4,2].
        let target = [3, 1, 4, 2].map(PartyId).to_vec();
        let seed = (0..10_000u64)
            .map(CoinValue)
            .find(|c| prg_permutation(*c, 4) == target)
            .expect("some seed yields the permutation");
        assert_eq!(filter_order(seed, 4, &committee), vec![PartyId(3), PartyId(2)]);
    }

    #[test]
    fn order_needs_two_f_plus_one_and_is_quorum_independent() {
        let n = 7;
        let f = max_faults(n);
        let (o, ks) = keys(n);
        let committee = derive_committee(o.coin_value("CS/1"), n, f + 1);
        let run = |me: usize, others: &[u32]| {
            let mut ro = RandomOrder::new(1, n);
            ro.start(&ks[me], committee.clone());
            let mut out = None;
            for &p in others {
                let s = o.coin_share(PartyId(p), schemes::COIN_HI, "ORDER/1").unwrap();
                if let Some(x) = ro.on_share(&ks[me], PartyId(p), s) {
                    out = Some(x);
                }
            }
            out
        };
        // Own share plus 2f-1 others: 2f in total, still waiting.
        assert!(run(0, &[2, 3, 4]).is_none());
        let a = run(0, &[2, 3, 4, 5]).unwrap();
        let b = run(6, &[3, 4, 5, 6]).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), f + 1);
        assert!(a.iter().all(|p| committee.contains(*p)));
    }

    #[test]
    fn permutation_cells_are_uniform() {
        // Oracle: exhaustive tally of the 24 permutations of 4 parties.
        let mut tally: BTreeMap<Vec<PartyId>, usize> = BTreeMap::new();
        let seeds = 10_000u64;
        for s in 0..seeds {
            *tally.entry(prg_permutation(CoinValue(s), 4)).or_default() += 1;
        }
        assert_eq!(tally.len(), 24);
        let expected = seeds as f64 / 24.0;
        let chi2: f64 = tally
            .values()
            .map(|&c| (c as f64 - expected).powi(2) / expected)
            .sum();
        // 23 degrees of freedom, 0.999 quantile is about 49.7.
        assert!(chi2 < 49.7, "chi-square {chi2}");
        for &c in tally.values() {
            assert!((c as f64 / seeds as f64 - 1.0 / 24.0).abs() <= 0.01);
        }
    }

    #[test]
    fn each_party_selected_equally_often() {
        let (n, kappa, coins) = (10, 4, 10_000u64);
        let mut hits = [0usize; 10];
        for c in 0..coins {
            for p in derive_committee(CoinValue(c.wrapping_mul(0x9e37_79b9_7f4a_7c15)), n, kappa)
                .members()
            {
                hits[p.index()] += 1;
            }
        }
        for h in hits {
            let freq = h as f64 / coins as f64;
            assert!((freq - 0.4).abs() <= 0.02, "frequency {freq}");
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn committee_has_exactly_kappa_members(seed: u64, n in 4usize..40) {
                let kappa = max_faults(n) + 1;
                let c = derive_committee(CoinValue(seed), n, kappa);
                prop_assert_eq!(c.len(), kappa);
                prop_assert!(c.members().iter().all(|p| (1..=n as u32).contains(&p.0)));
            }

            #[test]
            fn order_is_a_permutation_of_the_committee(a: u64, b: u64, n in 4usize..30) {
                let committee = derive_committee(CoinValue(a), n, max_faults(n) + 1);
                let order = filter_order(CoinValue(b), n, &committee);
                let as_set: BTreeSet<PartyId> = order.iter().copied().collect();
                prop_assert_eq!(order.len(), committee.len());
                prop_assert_eq!(&as_set, committee.members());
            }
        }
    }
}
