//! Canned experiment scenarios and the randomized property suite.
//!
//! The scenario corpus covers: the three-flow two-level hierarchy whose
//! dispatch orders and share violations are known in closed form, the
//! dynamic-allocation run with staggered basic-forwarding / monitoring /
//! ipsec flows on a throttled CPU and a 200 Mb/s link, and a 4-level 15-leaf
//! hierarchy for delay CDFs, per-level statistics and weight sweeps.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::drfq::IdleMemory;
use crate::hierarchy::{HierarchyDoc, HierarchySpec, NodeIdx, ValidationMode};
use crate::profile::PacketProfile;
use crate::scheduler::SchedulerKind;
use crate::sim::{
    cost_profile_unscaled, ArrivalPattern, FlowSource, MiddleboxModule, ResourceKind,
    ResourceSpec, Scenario, SizeDist,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PresetKind {
    Fig3Orders,
    Fig1NaiveViolation,
    Fig5Dynamic,
    Fig7Cdf,
    Fig8WeightSweep,
    Fig10Levels,
    RandomPropertySuite,
}

impl PresetKind {
    pub const ALL: [PresetKind; 7] = [
        PresetKind::Fig3Orders,
        PresetKind::Fig1NaiveViolation,
        PresetKind::Fig5Dynamic,
        PresetKind::Fig7Cdf,
        PresetKind::Fig8WeightSweep,
        PresetKind::Fig10Levels,
        PresetKind::RandomPropertySuite,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            PresetKind::Fig3Orders => "fig3-orders",
            PresetKind::Fig1NaiveViolation => "fig1-naive-violation",
            PresetKind::Fig5Dynamic => "fig5-dynamic",
            PresetKind::Fig7Cdf => "fig7-cdf",
            PresetKind::Fig8WeightSweep => "fig8-weight-sweep",
            PresetKind::Fig10Levels => "fig10-levels",
            PresetKind::RandomPropertySuite => "random-property-suite",
        }
    }

    pub fn parse(s: &str) -> Option<PresetKind> {
        PresetKind::ALL.iter().copied().find(|k| k.name() == s)
    }
}

impl std::fmt::Display for PresetKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Two unit-capacity abstract resources, for scenarios expressed directly in
/// processing-time units.
pub fn unit_resources() -> Vec<ResourceSpec> {
    vec![
        ResourceSpec {
            name: "r1".into(),
            kind: ResourceKind::Custom,
            capacity_fraction: 1.0,
        },
        ResourceSpec {
            name: "r2".into(),
            kind: ResourceKind::Custom,
            capacity_fraction: 1.0,
        },
    ]
}

/// CPU plus a 200 Mb/s link; `cpu_fraction` throttles the CPU stage.
pub fn middlebox_resources(cpu_fraction: f64) -> Vec<ResourceSpec> {
    vec![
        ResourceSpec {
            name: "cpu".into(),
            kind: ResourceKind::Cpu,
            capacity_fraction: cpu_fraction,
        },
        ResourceSpec {
            name: "bandwidth".into(),
            kind: ResourceKind::Bandwidth {
                link_rate_bps: 200e6,
            },
            capacity_fraction: 1.0,
        },
    ]
}

/// The two-level hierarchy (f1 at 0.5; f2 at 0.5 over f2.1/f2.2 at 0.25)
/// with unit-time profiles <1,1>, <1,2>, <2,1>. The <1,1> profile for f1 is
/// an assumption: only its dominant time of 1 on r1 is pinned down.
pub fn simple_hierarchy() -> HierarchySpec {
    crate::hierarchy::parse_hierarchy(crate::hierarchy::simple_two_level_doc())
        .expect("embedded document parses")
        .validate_and_normalize(ValidationMode::Strict)
        .expect("embedded document validates")
}

pub fn simple_leaf_demands() -> Vec<(&'static str, Vec<f64>)> {
    vec![
        ("f1", vec![1.0, 1.0]),
        ("f2.1", vec![1.0, 2.0]),
        ("f2.2", vec![2.0, 1.0]),
    ]
}

pub fn simple_leaf_profiles(spec: &HierarchySpec) -> BTreeMap<NodeIdx, PacketProfile> {
    simple_leaf_demands()
        .into_iter()
        .map(|(id, d)| {
            (
                spec.lookup(id).unwrap(),
                PacketProfile::new(d).unwrap(),
            )
        })
        .collect()
}

/// Saturated constant-rate scenario on the simple hierarchy: all three flows
/// backlogged from t = 0.
pub fn simple_saturated_scenario(scheduler: SchedulerKind, horizon_s: f64, seed: u64) -> Scenario {
    let flows = simple_leaf_demands()
        .into_iter()
        .map(|(leaf, demand_us)| FlowSource {
            leaf: leaf.into(),
            start_s: 0.0,
            stop_s: horizon_s,
            arrival: ArrivalPattern::Constant {
                rate_pps: 1_000_000.0,
            },
            size_dist: SizeDist::Fixed { bytes: 100 },
            module: MiddleboxModule::Explicit { demand_us },
            demand_scale: None,
        })
        .collect();
    Scenario {
        hierarchy: serde_json::from_str(crate::hierarchy::simple_two_level_doc()).unwrap(),
        flows,
        resources: unit_resources(),
        scheduler,
        horizon_s,
        seed,
        share_window_s: horizon_s / 4.0,
        dovetail_idle_memory: IdleMemory::Clamp,
    }
}

/// 4-level, 15-leaf hierarchy with uniform weights inside each sibling
/// group: three leaves directly under the root, two flat groups of 3 and 4
/// leaves, and one chain of groups carrying leaves at depths 2, 3 and 4.
pub fn fig6_hierarchy() -> HierarchySpec {
    let mut children = Vec::new();
    for id in ["1", "2", "3"] {
        children.push(leaf_doc(id));
    }
    children.push(HierarchyDoc {
        id: Some("4".into()),
        weight: 1.0,
        children: vec![
            leaf_doc("4.1"),
            leaf_doc("4.2"),
            leaf_doc("4.3"),
            HierarchyDoc {
                id: Some("4.4".into()),
                weight: 1.0,
                children: vec![
                    leaf_doc("4.4.1"),
                    leaf_doc("4.4.2"),
                    HierarchyDoc {
                        id: Some("4.4.3".into()),
                        weight: 1.0,
                        children: vec![
                            leaf_doc("4.4.3.1"),
                            leaf_doc("4.4.3.2"),
                            leaf_doc("4.4.3.3"),
                        ],
                    },
                ],
            },
        ],
    });
    children.push(HierarchyDoc {
        id: Some("5".into()),
        weight: 1.0,
        children: vec![
            leaf_doc("5.1"),
            leaf_doc("5.2"),
            leaf_doc("5.3"),
            leaf_doc("5.4"),
        ],
    });
    let doc = HierarchyDoc {
        id: Some("root".into()),
        weight: 1.0,
        children,
    };
    HierarchySpec::from_doc(&doc)
        .expect("embedded document parses")
        .validate_and_normalize(ValidationMode::Renormalize)
        .expect("embedded document validates")
}

fn leaf_doc(id: &str) -> HierarchyDoc {
    HierarchyDoc {
        id: Some(id.into()),
        weight: 1.0,
        children: Vec::new(),
    }
}

/// Middlebox module of each 15-leaf hierarchy flow, cycling through the
/// three module kinds in leaf document order.
pub fn fig6_module(leaf_ordinal: usize) -> MiddleboxModule {
    match leaf_ordinal % 3 {
        0 => MiddleboxModule::BasicForwarding,
        1 => MiddleboxModule::StatisticalMonitoring,
        _ => MiddleboxModule::Ipsec,
    }
}

/// Measured (full-capacity) profiles of the 15 leaves at 1300-byte packets
/// over CPU + 200 Mb/s bandwidth.
pub fn fig6_leaf_profiles(spec: &HierarchySpec) -> BTreeMap<NodeIdx, PacketProfile> {
    let resources = middlebox_resources(1.0);
    spec.leaves()
        .into_iter()
        .enumerate()
        .map(|(i, leaf)| {
            (
                leaf,
                cost_profile_unscaled(&fig6_module(i), 1300, &resources).unwrap(),
            )
        })
        .collect()
}

pub struct Fig6Options {
    pub scheduler: SchedulerKind,
    pub rate_pps: f64,
    pub horizon_s: f64,
    pub seed: u64,
    pub staggered_start_s: f64,
    pub size_dist: SizeDist,
    pub poisson: bool,
    pub cpu_fraction: f64,
}

pub fn fig6_scenario(opts: &Fig6Options) -> Scenario {
    let spec = fig6_hierarchy();
    let flows = spec
        .leaves()
        .into_iter()
        .enumerate()
        .map(|(i, leaf)| FlowSource {
            leaf: spec.id(leaf).to_string(),
            start_s: opts.staggered_start_s * i as f64,
            stop_s: opts.horizon_s,
            arrival: if opts.poisson {
                ArrivalPattern::Poisson {
                    rate_pps: opts.rate_pps,
                }
            } else {
                ArrivalPattern::Constant {
                    rate_pps: opts.rate_pps,
                }
            },
            size_dist: opts.size_dist.clone(),
            module: fig6_module(i),
            demand_scale: None,
        })
        .collect();
    Scenario {
        hierarchy: spec.to_doc(),
        flows,
        resources: middlebox_resources(opts.cpu_fraction),
        scheduler: opts.scheduler,
        horizon_s: opts.horizon_s,
        seed: opts.seed,
        share_window_s: (opts.horizon_s / 8.0).max(0.05),
        dovetail_idle_memory: IdleMemory::Clamp,
    }
}

/// Staggered dynamic-allocation scenario: basic forwarding from t=0,
/// statistical monitoring from t=5, ipsec from t=10, each at 25k
/// 1300-byte packets per second over a 20% CPU and a 200 Mb/s link.
pub fn fig5_scenario(scheduler: SchedulerKind, seed: u64) -> Scenario {
    let horizon_s = 16.0;
    let mk = |leaf: &str, start: f64, stop: f64, module: MiddleboxModule| FlowSource {
        leaf: leaf.into(),
        start_s: start,
        stop_s: stop,
        arrival: ArrivalPattern::Constant { rate_pps: 25_000.0 },
        size_dist: SizeDist::Fixed { bytes: 1300 },
        module,
        demand_scale: None,
    };
    Scenario {
        hierarchy: serde_json::from_str(crate::hierarchy::simple_two_level_doc()).unwrap(),
        flows: vec![
            mk("f1", 0.0, 12.0, MiddleboxModule::BasicForwarding),
            mk("f2.1", 5.0, horizon_s, MiddleboxModule::StatisticalMonitoring),
            mk("f2.2", 10.0, horizon_s, MiddleboxModule::Ipsec),
        ],
        resources: middlebox_resources(0.2),
        scheduler,
        horizon_s,
        seed,
        share_window_s: 1.0,
        dovetail_idle_memory: IdleMemory::Clamp,
    }
}

/// One weight-sweep variant: the first leaf at `level` gets its raw weight
/// multiplied by `factor`, then the tree is renormalized.
pub fn fig8_variant(level: usize, factor: f64) -> (HierarchySpec, String) {
    let base = fig6_hierarchy();
    let target = base
        .leaves()
        .into_iter()
        .find(|l| base.depth(*l) == level)
        .expect("every level 1..=4 has a leaf");
    let target_id = base.id(target).to_string();
    let mut doc = base.to_doc();
    scale_leaf_weight(&mut doc, &target_id, factor);
    let spec = HierarchySpec::from_doc(&doc)
        .unwrap()
        .validate_and_normalize(ValidationMode::Renormalize)
        .unwrap();
    (spec, target_id)
}

fn scale_leaf_weight(doc: &mut HierarchyDoc, id: &str, factor: f64) -> bool {
    if doc.id.as_deref() == Some(id) {
        doc.weight *= factor;
        return true;
    }
    doc.children
        .iter_mut()
        .any(|c| scale_leaf_weight(c, id, factor))
}

// ---------------------------------------------------------------------------
// Randomized property suite
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct PropertyViolation {
    pub check: String,
    pub detail: String,
    /// Offending hierarchy, serialized, for reproduction.
    pub hierarchy: HierarchyDoc,
    pub profiles_us: BTreeMap<String, Vec<f64>>,
}

#[derive(Debug, Clone, Serialize)]
pub struct PropertySuiteReport {
    pub seed: u64,
    pub trees: usize,
    pub probes: usize,
    pub schedulers: Vec<String>,
    pub bound_comparisons: usize,
    pub share_checks: usize,
    pub probe_checks: usize,
    pub violations: Vec<PropertyViolation>,
    pub pass: bool,
}

fn violation(
    spec: &HierarchySpec,
    profiles: &BTreeMap<NodeIdx, PacketProfile>,
    check: &str,
    detail: String,
) -> PropertyViolation {
    PropertyViolation {
        check: check.into(),
        detail,
        hierarchy: spec.to_doc(),
        profiles_us: profiles
            .iter()
            .map(|(n, p)| (spec.id(*n).to_string(), p.demand().to_vec()))
            .collect(),
    }
}

/// Randomized checks: bound dominance on every leaf of `trees` random
/// hierarchies, share guarantees for the schedulers under test on saturated
/// drives, and `probes` paired strategy-proofness runs.
pub fn property_suite(
    trees: usize,
    probes: usize,
    seed: u64,
    schedulers: &[SchedulerKind],
) -> PropertySuiteReport {
    use rand::Rng;
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut violations = Vec::new();
    let mut bound_comparisons = 0usize;
    let mut share_checks = 0usize;

    for _ in 0..trees {
        let (spec, profiles) = crate::randgen::random_instance(&mut rng);

        // delay-bound dominance per leaf
        for leaf in spec.leaves() {
            bound_comparisons += 1;
            let report = crate::analysis::dovetail_delay_bound(&spec, &profiles, leaf)
                .expect("strictly positive profiles");
            if report.dovetail_bound_us > report.collapsed_bound_us + 1e-9 {
                violations.push(violation(
                    &spec,
                    &profiles,
                    "bound-dominance",
                    format!(
                        "leaf {}: dovetail {} > collapsed {}",
                        spec.id(leaf),
                        report.dovetail_bound_us,
                        report.collapsed_bound_us
                    ),
                ));
            }
        }

        // share guarantees on a saturated drive
        for kind in schedulers {
            share_checks += 1;
            if let Some(v) = share_guarantee_violation(&spec, &profiles, *kind) {
                violations.push(violation(&spec, &profiles, "share-guarantee", v));
            }
        }
    }

    // strategy-proofness probes on fresh random instances
    let mut probe_checks = 0usize;
    for i in 0..probes {
        let (spec, profiles) = crate::randgen::random_instance(&mut rng);
        let kind = if i % 2 == 0 {
            SchedulerKind::DovetailingHdrfq
        } else {
            SchedulerKind::CollapsedHdrfq
        };
        let scenario = saturated_scenario(&spec, &profiles, kind, 0.01, seed ^ i as u64);
        let leaves = spec.leaves();
        // pick a leaf, or a whole subtree one time in three
        let target: Vec<String> = if rng.gen_bool(1.0 / 3.0) {
            let internal: Vec<NodeIdx> = spec
                .internal_nodes()
                .into_iter()
                .filter(|n| *n != spec.root())
                .collect();
            match internal.get(rng.gen_range(0..internal.len().max(1))) {
                Some(node) => spec
                    .leaves_under(*node)
                    .iter()
                    .map(|l| spec.id(*l).to_string())
                    .collect(),
                None => vec![spec.id(leaves[0]).to_string()],
            }
        } else {
            vec![spec.id(leaves[rng.gen_range(0..leaves.len())]).to_string()]
        };
        let m = profiles.values().next().unwrap().resources();
        let mut scale = vec![1.0; m];
        scale[rng.gen_range(0..m)] = rng.gen_range(1.3..2.0);
        probe_checks += 1;
        match crate::analysis::strategyproofness_probe(&scenario, &target, &scale) {
            Ok(verdict) if verdict.pass => {}
            Ok(verdict) => violations.push(violation(
                &spec,
                &profiles,
                "strategy-proofness",
                format!(
                    "target {:?} gained packets: {:?}",
                    verdict.target,
                    verdict
                        .cumulative_counts
                        .iter()
                        .filter(|(_, h, g)| g > h)
                        .collect::<Vec<_>>()
                ),
            )),
            Err(e) => violations.push(violation(
                &spec,
                &profiles,
                "strategy-proofness",
                format!("probe error: {e}"),
            )),
        }
    }

    PropertySuiteReport {
        seed,
        trees,
        probes,
        schedulers: schedulers.iter().map(|s| s.name().to_string()).collect(),
        bound_comparisons,
        share_checks,
        probe_checks,
        pass: violations.is_empty(),
        violations,
    }
}

/// Saturated constant-rate scenario over explicit profiles, used by the
/// randomized probes.
pub fn saturated_scenario(
    spec: &HierarchySpec,
    profiles: &BTreeMap<NodeIdx, PacketProfile>,
    scheduler: SchedulerKind,
    horizon_s: f64,
    seed: u64,
) -> Scenario {
    let m = profiles.values().next().unwrap().resources();
    let resources: Vec<ResourceSpec> = (0..m)
        .map(|r| ResourceSpec {
            name: format!("r{}", r + 1),
            kind: ResourceKind::Custom,
            capacity_fraction: 1.0,
        })
        .collect();
    let flows = spec
        .leaves()
        .into_iter()
        .map(|leaf| FlowSource {
            leaf: spec.id(leaf).to_string(),
            start_s: 0.0,
            stop_s: horizon_s,
            arrival: ArrivalPattern::Constant { rate_pps: 400_000.0 },
            size_dist: SizeDist::Fixed { bytes: 100 },
            module: MiddleboxModule::Explicit {
                demand_us: profiles[&leaf].demand().to_vec(),
            },
            demand_scale: None,
        })
        .collect();
    Scenario {
        hierarchy: spec.to_doc(),
        flows,
        resources,
        scheduler,
        horizon_s,
        seed,
        share_window_s: horizon_s / 5.0,
        dovetail_idle_memory: IdleMemory::Clamp,
    }
}

/// Drive `kind` with everything backlogged and verify every node's dominant
/// service within one packet of its guaranteed share of its parent.
/// Returns a description of the first violation, if any.
pub fn share_guarantee_violation(
    spec: &HierarchySpec,
    profiles: &BTreeMap<NodeIdx, PacketProfile>,
    kind: SchedulerKind,
) -> Option<String> {
    let cycles: BTreeMap<NodeIdx, Vec<PacketProfile>> = profiles
        .iter()
        .map(|(n, p)| (*n, vec![p.clone()]))
        .collect();
    let mut sched = crate::scheduler::build_scheduler(kind, spec, IdleMemory::Clamp);
    let seq = crate::scheduler::drive_backlogged(&mut *sched, spec, &cycles, 4000)
        .expect("backlogged drive");
    let m = profiles.values().next().unwrap().resources();

    let mut counts: BTreeMap<NodeIdx, u64> = BTreeMap::new();
    for leaf in &seq {
        *counts.entry(*leaf).or_default() += 1;
    }
    let busy = |node: NodeIdx| -> Vec<f64> {
        let mut acc = vec![0.0; m];
        for leaf in spec.leaves_under(node) {
            let n = counts.get(&leaf).copied().unwrap_or(0) as f64;
            for (a, d) in acc.iter_mut().zip(profiles[&leaf].demand()) {
                *a += n * d;
            }
        }
        acc
    };
    for node in spec.depth_first() {
        let Some(parent) = spec.parent(node) else { continue };
        let w_node = busy(node).into_iter().fold(0.0, f64::max);
        let w_parent = busy(parent).into_iter().fold(0.0, f64::max);
        let guaranteed = spec.weight(node) / spec.weight(parent);
        let slack = spec
            .leaves_under(parent)
            .iter()
            .map(|l| profiles[l].mu())
            .fold(0.0, f64::max);
        if w_node + slack < guaranteed * w_parent {
            return Some(format!(
                "{kind}: node {} got {w_node:.3} of parent's {w_parent:.3}, guaranteed {guaranteed:.3}",
                spec.id(node),
            ));
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fig6_shape() {
        let spec = fig6_hierarchy();
        assert_eq!(spec.leaves().len(), 15);
        assert_eq!(spec.len(), 20);
        let max_depth = spec.leaves().iter().map(|l| spec.depth(*l)).max().unwrap();
        assert_eq!(max_depth, 4);
        // leaves exist at every level 1..=4
        for level in 1..=4 {
            assert!(
                spec.leaves().iter().any(|l| spec.depth(*l) == level),
                "no leaf at level {level}"
            );
        }
        // uniform weights inside each sibling group
        let l1 = spec.lookup("1").unwrap();
        assert!((spec.weight(l1) - 0.2).abs() < 1e-12);
        let g44 = spec.lookup("4.4").unwrap();
        assert!((spec.weight(g44) - 0.05).abs() < 1e-12);
    }

    #[test]
    fn naive_baselines_violate_share_guarantee_and_hdrfq_does_not() {
        let spec = simple_hierarchy();
        let profiles = simple_leaf_profiles(&spec);
        for kind in [SchedulerKind::NaiveCollapsed, SchedulerKind::NaiveMemoryless] {
            assert!(
                share_guarantee_violation(&spec, &profiles, kind).is_some(),
                "{kind} should violate on the simple instance"
            );
        }
        for kind in [SchedulerKind::CollapsedHdrfq, SchedulerKind::DovetailingHdrfq] {
            assert_eq!(share_guarantee_violation(&spec, &profiles, kind), None);
        }
    }

    #[test]
    fn naive_memoryless_fails_on_some_random_tree_where_dovetailing_holds() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let mut found = false;
        for _ in 0..80 {
            let (spec, profiles) = crate::randgen::random_instance(&mut rng);
            let naive = share_guarantee_violation(&spec, &profiles, SchedulerKind::NaiveMemoryless);
            let dove =
                share_guarantee_violation(&spec, &profiles, SchedulerKind::DovetailingHdrfq);
            assert_eq!(dove, None, "dove-tailing must hold the guarantee");
            if naive.is_some() {
                found = true;
            }
        }
        assert!(found, "expected at least one naive-memoryless violation");
    }

    #[test]
    fn fig8_variant_scales_one_leaf() {
        let (spec, target) = fig8_variant(2, 4.0);
        let t = spec.lookup(&target).unwrap();
        assert_eq!(spec.depth(t), 2);
        // the scaled leaf outweighs its uniform siblings four to one
        let sib = spec.siblings(t)[0];
        assert!((spec.weight(t) / spec.weight(sib) - 4.0).abs() < 1e-9);
    }

    #[test]
    fn property_suite_smoke() {
        let report = property_suite(
            5,
            2,
            123,
            &[SchedulerKind::CollapsedHdrfq, SchedulerKind::DovetailingHdrfq],
        );
        assert!(report.pass, "violations: {:?}", report.violations);
        assert!(report.bound_comparisons > 0);
    }

    #[test]
    fn property_suite_flags_naive_negative_control() {
        let report = property_suite(15, 0, 7, &[SchedulerKind::NaiveCollapsed]);
        assert!(!report.pass, "naive baseline must be flagged");
        assert!(report
            .violations
            .iter()
            .all(|v| v.check == "share-guarantee"));
    }
}
