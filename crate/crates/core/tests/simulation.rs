use pmvba::simnet::{run, BaseOrder, Behavior, Fault, PartySet, SimConfig, SimError};
use pmvba::{max_faults, PartyId};
use proptest::prelude::*;

fn uniform(n: usize, seed: u64) -> SimConfig {
    let mut c = SimConfig::new(n, &seed.to_be_bytes());
    c.order = BaseOrder::UniformRandom { seed };
    c
}

#[test]
fn worst_case_order_forces_f_plus_one_iterations() {
    for n in [4, 7, 10] {
        let mut c = SimConfig::new(n, b"worst");
        c.worst_case = true;
        let m = run(&c).unwrap();
        let im = &m.instances[0];
        assert_eq!(im.max_iterations(), max_faults(n) + 1, "n={n}");
        assert_eq!(im.decided_proposer(), im.order.last().copied());
    }
}

#[test]
fn isolated_member_still_terminates() {
    let mut c = SimConfig::new(4, b"iso");
    c.faults.push(Fault::Isolate {
        parties: PartySet::FirstMembers(1),
    });
    let m = run(&c).unwrap();
    let isolated = m.corrupted[0];
    assert!(m.instances[0].committee.as_ref().unwrap().contains(isolated));
    assert_eq!(m.instances[0].decisions.len(), 3);
    assert_ne!(m.instances[0].decided_proposer(), Some(isolated));
}

#[test]
fn equivocating_proposer_cannot_split_decisions() {
    for seed in 0..20u64 {
        let mut c = uniform(4, seed);
        c.faults.push(Fault::Byzantine {
            parties: PartySet::FirstMembers(1),
            behavior: Behavior::EquivocateVcbc,
        });
        run(&c).unwrap();
    }
}

#[test]
fn delayed_honest_party_is_not_corrupted() {
    let mut c = SimConfig::new(4, b"slow");
    c.faults.push(Fault::Delay {
        sources: PartySet::Fixed(vec![PartyId(2)]),
        delay: 30,
    });
    let m = run(&c).unwrap();
    assert!(m.corrupted.is_empty());
    assert_eq!(m.instances[0].decisions.len(), 4);
}

#[test]
fn exhausted_budget_is_a_liveness_error() {
    let mut c = SimConfig::new(7, b"budget");
    c.event_budget = 50;
    assert!(matches!(run(&c), Err(SimError::Liveness { .. })));
}

#[test]
fn several_instances_run_back_to_back() {
    let mut c = uniform(7, 11);
    c.instances = 3;
    let m = run(&c).unwrap();
    assert_eq!(m.instances.len(), 3);
    for im in &m.instances {
        assert_eq!(im.decisions.len(), 7);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn safety_holds_under_random_faults(
        seed in any::<u64>(),
        n in prop::sample::select(vec![4usize, 7]),
        kind in 0u8..4,
        count in 0usize..3,
    ) {
        let f = max_faults(n);
        let parties = PartySet::FirstMembers(count.min(f));
        let mut c = uniform(n, seed);
        c.faults.push(match kind {
            0 => Fault::Crash { parties, at_time: seed % 8 },
            1 => Fault::Silent { parties },
            2 => Fault::Byzantine { parties, behavior: Behavior::VoteZero },
            _ => Fault::Isolate { parties },
        });
        let m = run(&c).unwrap();
        let im = &m.instances[0];
        prop_assert!(im.max_iterations() <= f + 1);
        let honest = (1..=n as u32).filter(|&i| m.is_honest(PartyId(i))).count();
        prop_assert_eq!(im.decisions.len(), honest);
        let reach = im.reach.as_ref().unwrap();
        prop_assert!(reach.max_reach() > 2 * f);
    }
}
