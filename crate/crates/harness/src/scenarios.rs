//! Named case studies with machine-checked expectations.

use std::fmt::Write as _;

use pmvba::simnet::{run, BaseOrder, Fault, PartySet, RunMetrics, SimConfig};
use pmvba::{max_faults, PartyId};

use crate::battery;
use crate::config::derive_u64;
use crate::report::reach_table;

/// A machine-checkable expectation over the first instance's metrics.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Check {
    AllHonestDecide,
    /// Every honest committee member's proposal reaches this many parties.
    HonestMembersReach(usize),
    /// At least `count` members' proposals reach `threshold` parties.
    SomeMembersReach { count: usize, threshold: usize },
    /// Corrupted members' proposals reach nobody.
    CorruptedMembersUnheard,
    DecidedHonestMember,
    Iterations(usize),
    IterationsAtMost(usize),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Kind {
    Simulation {
        order: BaseOrder,
        faults: Vec<Fault>,
        worst_case: bool,
    },
    /// The stand-alone binary agreement battery.
    AbbaBattery { schedules: u64 },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Scenario {
    pub name: &'static str,
    pub about: &'static str,
    pub n: usize,
    pub kind: Kind,
    pub checks: Vec<Check>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CheckOutcome {
    pub label: String,
    pub pass: bool,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScenarioReport {
    pub name: String,
    pub outcomes: Vec<CheckOutcome>,
    pub table: String,
    pub metrics: Option<RunMetrics>,
}

impl ScenarioReport {
    pub fn passed(&self) -> bool {
        self.outcomes.iter().all(|o| o.pass)
    }

    pub fn render(&self) -> String {
        let mut s = format!("scenario {}\n", self.name);
        s.push_str(&self.table);
        for o in &self.outcomes {
            let _ = writeln!(
                s,
                "  [{}] {} ({})",
                if o.pass { "PASS" } else { "FAIL" },
                o.label,
                o.detail
            );
        }
        s
    }
}

fn sim(order: BaseOrder, faults: Vec<Fault>) -> Kind {
    Kind::Simulation {
        order,
        faults,
        worst_case: false,
    }
}

/// The registered scenarios, in listing order.
pub fn library() -> Vec<Scenario> {
    use Check::*;
    let lock = BaseOrder::Lockstep;
    let q4 = 3;
    let q10 = 7;
    vec![
        Scenario {
            name: "fig4a_uniform",
            about: "n=4, no faults, both proposals delivered evenly",
            n: 4,
            kind: sim(lock, vec![]),
            checks: vec![AllHonestDecide, HonestMembersReach(q4), Iterations(1)],
        },
        Scenario {
            name: "fig4b_nonuniform",
            about: "n=4, the second member's traffic is delayed",
            n: 4,
            kind: sim(
                lock,
                vec![Fault::Delay {
                    sources: PartySet::Members(vec![1]),
                    delay: 3,
                }],
            ),
            checks: vec![
                AllHonestDecide,
                SomeMembersReach {
                    count: 1,
                    threshold: q4,
                },
            ],
        },
        Scenario {
            name: "fig5a_selected_isolated",
            about: "n=4, the second member is isolated",
            n: 4,
            kind: sim(
                lock,
                vec![Fault::Isolate {
                    parties: PartySet::Members(vec![1]),
                }],
            ),
            checks: vec![
                AllHonestDecide,
                HonestMembersReach(q4),
                CorruptedMembersUnheard,
                DecidedHonestMember,
            ],
        },
        Scenario {
            name: "fig5b_nonselected_crash",
            about: "n=4, one non-member stops responding",
            n: 4,
            kind: sim(
                lock,
                vec![Fault::Crash {
                    parties: PartySet::NonMembers(1),
                    at_time: 0,
                }],
            ),
            checks: vec![AllHonestDecide, HonestMembersReach(q4)],
        },
        Scenario {
            name: "case3_all_responsive",
            about: "n=10, every party responsive",
            n: 10,
            kind: sim(lock, vec![]),
            checks: vec![AllHonestDecide, HonestMembersReach(q10)],
        },
        Scenario {
            name: "case2_nonselected_silent",
            about: "n=10, three non-members silent",
            n: 10,
            kind: sim(
                lock,
                vec![Fault::Silent {
                    parties: PartySet::NonMembers(3),
                }],
            ),
            checks: vec![AllHonestDecide, HonestMembersReach(q10)],
        },
        Scenario {
            name: "case1_f_selected_silent",
            about: "n=10, three of four members silent",
            n: 10,
            kind: sim(
                lock,
                vec![Fault::Silent {
                    parties: PartySet::FirstMembers(3),
                }],
            ),
            checks: vec![
                AllHonestDecide,
                HonestMembersReach(q10),
                CorruptedMembersUnheard,
                DecidedHonestMember,
            ],
        },
        Scenario {
            name: "fig7a_two_selected_honest",
            about: "n=10, two members silent",
            n: 10,
            kind: sim(
                lock,
                vec![Fault::Silent {
                    parties: PartySet::Members(vec![2, 3]),
                }],
            ),
            checks: vec![
                AllHonestDecide,
                HonestMembersReach(q10),
                SomeMembersReach {
                    count: 2,
                    threshold: q10,
                },
            ],
        },
        Scenario {
            name: "fig7b_three_selected_honest",
            about: "n=10, one member silent",
            n: 10,
            kind: sim(
                lock,
                vec![Fault::Silent {
                    parties: PartySet::Members(vec![3]),
                }],
            ),
            checks: vec![
                AllHonestDecide,
                SomeMembersReach {
                    count: 3,
                    threshold: q10,
                },
            ],
        },
        Scenario {
            name: "fig7c_nonuniform",
            about: "n=10, two members' traffic delayed",
            n: 10,
            kind: sim(
                lock,
                vec![Fault::Delay {
                    sources: PartySet::Members(vec![2, 3]),
                    delay: 4,
                }],
            ),
            checks: vec![
                AllHonestDecide,
                SomeMembersReach {
                    count: 2,
                    threshold: q10,
                },
            ],
        },
        Scenario {
            name: "lemma2_worst_order",
            about: "n=4, the adversary withholds every proposal but the last in the order",
            n: 4,
            kind: Kind::Simulation {
                order: lock,
                faults: vec![],
                worst_case: true,
            },
            checks: vec![AllHonestDecide, Iterations(2), IterationsAtMost(2)],
        },
        Scenario {
            name: "abba_bias",
            about: "n=4 binary agreement, all input assignments x 100 schedules",
            n: 4,
            kind: Kind::AbbaBattery { schedules: 100 },
            checks: vec![],
        },
    ]
}

pub fn find(name: &str) -> Option<Scenario> {
    library().into_iter().find(|s| s.name == name)
}

impl Scenario {
    pub fn sim_config(&self, seed: &[u8]) -> Option<SimConfig> {
        let Kind::Simulation {
            order,
            faults,
            worst_case,
        } = &self.kind
        else {
            return None;
        };
        let mut cfg = SimConfig::new(self.n, seed);
        cfg.order = match order {
            BaseOrder::UniformRandom { .. } => BaseOrder::UniformRandom {
                seed: derive_u64(seed),
            },
            o => *o,
        };
        cfg.faults = faults.clone();
        cfg.worst_case = *worst_case;
        Some(cfg)
    }

    pub fn run(&self, seed: &[u8]) -> ScenarioReport {
        match &self.kind {
            Kind::AbbaBattery { schedules } => self.run_battery(*schedules),
            Kind::Simulation { .. } => {
                let cfg = self.sim_config(seed).expect("simulation scenario");
                match run(&cfg) {
                    Ok(m) => self.evaluate(m),
                    Err(e) => ScenarioReport {
                        name: self.name.into(),
                        outcomes: vec![CheckOutcome {
                            label: "run completes".into(),
                            pass: false,
                            detail: e.to_string(),
                        }],
                        table: String::new(),
                        metrics: None,
                    },
                }
            }
        }
    }

    fn run_battery(&self, schedules: u64) -> ScenarioReport {
        let runs = battery::run_battery(self.n, schedules);
        let s = battery::summarize(self.n, &runs);
        let ok = |label: &str, pass: bool, detail: String| CheckOutcome {
            label: label.into(),
            pass,
            detail,
        };
        ScenarioReport {
            name: self.name.into(),
            outcomes: vec![
                ok("all decide", s.undecided == 0, format!("{} undecided of {}", s.undecided, s.runs)),
                ok("agreement", s.agreement_failures == 0, format!("{} failures", s.agreement_failures)),
                ok(
                    "f+1 honest ones decide 1",
                    s.biased_validity_failures == 0,
                    format!("{} failures", s.biased_validity_failures),
                ),
                ok("unanimous 0 decides 0", s.unanimity_failures == 0, format!("{} failures", s.unanimity_failures)),
                ok(
                    ">= 99% within 5 rounds",
                    s.frac_within_5() >= 0.99,
                    format!("{:.4}", s.frac_within_5()),
                ),
                ok("all within 40 rounds", s.within_40 == s.runs, format!("max round {}", s.max_round)),
            ],
            table: String::new(),
            metrics: None,
        }
    }

    pub fn evaluate(&self, m: RunMetrics) -> ScenarioReport {
        let f = max_faults(self.n);
        let im = &m.instances[0];
        let committee: Vec<PartyId> = im
            .committee
            .as_ref()
            .map(|c| c.members().iter().copied().collect())
            .unwrap_or_default();
        let reach = |p: &PartyId| {
            im.reach
                .as_ref()
                .and_then(|r| r.reach.get(p).copied())
                .unwrap_or(0)
        };
        let honest_members: Vec<PartyId> = committee.iter().copied().filter(|&p| m.is_honest(p)).collect();
        let mut outcomes = Vec::new();
        for check in &self.checks {
            let (label, pass, detail) = match check {
                Check::AllHonestDecide => {
                    let honest = PartyId::all(self.n).filter(|&p| m.is_honest(p)).count();
                    (
                        "every honest party decides".to_string(),
                        im.decisions.len() == honest,
                        format!("{}/{honest}", im.decisions.len()),
                    )
                }
                Check::HonestMembersReach(t) => {
                    let low: Vec<String> = honest_members
                        .iter()
                        .filter(|p| reach(p) < *t)
                        .map(|p| format!("{p}:{}", reach(p)))
                        .collect();
                    (
                        format!("every honest member's proposal reaches >= {t}"),
                        low.is_empty() && !honest_members.is_empty(),
                        if low.is_empty() {
                            format!("{} members", honest_members.len())
                        } else {
                            format!("short: {}", low.join(" "))
                        },
                    )
                }
                Check::SomeMembersReach { count, threshold } => {
                    let k = committee.iter().filter(|p| reach(p) >= *threshold).count();
                    (
                        format!(">= {count} proposals reach >= {threshold}"),
                        k >= *count,
                        format!("{k} do"),
                    )
                }
                Check::CorruptedMembersUnheard => {
                    let heard: Vec<String> = committee
                        .iter()
                        .filter(|&&p| !m.is_honest(p) && reach(&p) > 0)
                        .map(|p| p.to_string())
                        .collect();
                    (
                        "faulty members' proposals reach nobody".to_string(),
                        heard.is_empty(),
                        format!("heard: {heard:?}"),
                    )
                }
                Check::DecidedHonestMember => {
                    let d = im.decided_proposer();
                    (
                        "decided proposal is an honest member's".to_string(),
                        d.is_some_and(|p| honest_members.contains(&p)),
                        format!("{d:?}"),
                    )
                }
                Check::Iterations(k) => (
                    format!("iterations = {k}"),
                    im.max_iterations() == *k,
                    format!("achieved {}", im.max_iterations()),
                ),
                Check::IterationsAtMost(k) => (
                    format!("iterations <= {k}"),
                    im.max_iterations() <= *k,
                    format!("achieved {}", im.max_iterations()),
                ),
            };
            outcomes.push(CheckOutcome { label, pass, detail });
        }
        ScenarioReport {
            name: self.name.into(),
            outcomes,
            table: reach_table(im, 2 * f + 1),
            metrics: Some(m),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_are_unique_and_findable() {
        let lib = library();
        assert_eq!(lib.len(), 12);
        for s in &lib {
            assert_eq!(find(s.name).unwrap().name, s.name);
        }
        assert!(find("nope").is_none());
    }

    #[test]
    fn every_simulation_scenario_passes_on_the_default_seed() {
        for s in library() {
            if matches!(s.kind, Kind::Simulation { .. }) {
                let r = s.run(&[1]);
                assert!(r.passed(), "{}", r.render());
            }
        }
    }
}
