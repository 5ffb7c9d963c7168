//! Delay bounds, ideal shares, worst-case fair indices and property checkers.
//!
//! The two start-of-service delay bounds are evaluated over the full tree
//! with every leaf treated as backlogged:
//!
//! * collapsed: the flattened tree behaves like a flat DRFQ group, so a
//!   packet arriving to an idle leaf waits at most
//!   `max_r sum_{j != i} s_{j,r}` over all other leaves;
//! * dove-tailing: one term per ancestor level. Level `w` contributes the
//!   product of `weight(P^h)/mu(P^{h+1})` factors for `h < w` times
//!   `max_r sum s_{j,r}` over the leaves under the siblings of the `w`-th
//!   ancestor, plus a final own-sibling term that uses the componentwise
//!   maximum profile for internal siblings.
//!
//! The ideal dominant share of a node is the product of
//! `weight(P^h)/mu(P^{h+1})` along its ancestor chain; saturated runs of both
//! hierarchical schedulers converge to it.

use std::collections::{BTreeMap, BTreeSet};

use num::rational::Ratio;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::hierarchy::{HierarchySpec, NodeIdx};
use crate::profile::{virtual_profiles_bottom_up, PacketProfile};
use crate::sim::{self, Scenario};
use crate::trace::{
    backlogged_throughout, busy_in_window, dominant_service, Nanos, Trace,
};

/// Componentwise maximum profile over the leaves of a subtree; the effective
/// worst packet an internal node can forward.
fn subtree_max_profile(
    spec: &HierarchySpec,
    profiles: &BTreeMap<NodeIdx, PacketProfile>,
    node: NodeIdx,
) -> Result<PacketProfile> {
    let mut acc: Option<Vec<f64>> = None;
    for leaf in spec.leaves_under(node) {
        let p = profiles
            .get(&leaf)
            .ok_or_else(|| Error::UnknownNode(spec.id(leaf).to_string()))?;
        match &mut acc {
            None => acc = Some(p.demand().to_vec()),
            Some(v) => {
                if v.len() != p.resources() {
                    return Err(Error::ResourceCountMismatch(p.resources(), v.len()));
                }
                for (a, d) in v.iter_mut().zip(p.demand()) {
                    *a = a.max(*d);
                }
            }
        }
    }
    PacketProfile::new(acc.ok_or(Error::NoActiveLeaves)?)
}

fn require_strictly_positive(
    spec: &HierarchySpec,
    profiles: &BTreeMap<NodeIdx, PacketProfile>,
) -> Result<()> {
    for leaf in spec.leaves() {
        let p = profiles
            .get(&leaf)
            .ok_or_else(|| Error::UnknownNode(spec.id(leaf).to_string()))?;
        if p.demand().iter().any(|d| *d <= 0.0) {
            return Err(Error::ZeroDemandEntry(spec.id(leaf).to_string()));
        }
    }
    Ok(())
}

fn max_r_sum(profiles: &[&PacketProfile]) -> f64 {
    if profiles.is_empty() {
        return 0.0;
    }
    let m = profiles[0].resources();
    (0..m)
        .map(|r| profiles.iter().map(|p| p.get(r)).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Start-of-service delay bound of a leaf under collapsed scheduling:
/// `max_r` of the summed demand of every other leaf on `r`.
pub fn collapsed_delay_bound(
    spec: &HierarchySpec,
    profiles: &BTreeMap<NodeIdx, PacketProfile>,
    leaf: NodeIdx,
) -> Result<f64> {
    require_strictly_positive(spec, profiles)?;
    let others: Vec<&PacketProfile> = spec
        .leaves()
        .into_iter()
        .filter(|l| *l != leaf)
        .map(|l| &profiles[&l])
        .collect();
    Ok(max_r_sum(&others))
}

#[derive(Debug, Clone, Serialize)]
pub struct BoundReport {
    pub leaf: String,
    pub collapsed_bound_us: f64,
    pub dovetail_bound_us: f64,
    /// Per ancestor level w >= 1: (w, scaling factor, unscaled sibling term).
    pub dovetail_terms: Vec<(usize, f64, f64)>,
    /// Own-sibling term common to level 0.
    pub own_sibling_term_us: f64,
}

/// Start-of-service delay bound of a leaf under dove-tailing scheduling,
/// with its per-level breakdown.
pub fn dovetail_delay_bound(
    spec: &HierarchySpec,
    profiles: &BTreeMap<NodeIdx, PacketProfile>,
    leaf: NodeIdx,
) -> Result<BoundReport> {
    require_strictly_positive(spec, profiles)?;
    let active: BTreeSet<NodeIdx> = spec.leaves().into_iter().collect();
    let virtuals = virtual_profiles_bottom_up(spec, profiles, &active)?;

    // own siblings: internal ones contribute their subtree-max profile
    let mut own: Vec<PacketProfile> = Vec::new();
    for sib in spec.siblings(leaf) {
        own.push(if spec.is_leaf(sib) {
            profiles[&sib].clone()
        } else {
            subtree_max_profile(spec, profiles, sib)?
        });
    }
    let own_refs: Vec<&PacketProfile> = own.iter().collect();
    let own_term = max_r_sum(&own_refs);

    let depth = spec.depth(leaf);
    let mut terms = Vec::new();
    let mut bound = own_term;
    for w in 1..depth {
        let mut factor = 1.0;
        for h in 0..w {
            let node = spec.ancestor(leaf, h)?;
            let parent = spec.ancestor(leaf, h + 1)?;
            factor *= spec.weight(node) / virtuals[&parent].mu();
        }
        let anc = spec.ancestor(leaf, w)?;
        let alien: Vec<&PacketProfile> = spec
            .siblings(anc)
            .into_iter()
            .flat_map(|sib| spec.leaves_under(sib))
            .map(|l| &profiles[&l])
            .collect();
        let term = max_r_sum(&alien);
        terms.push((w, factor, term));
        bound += factor * term;
    }

    Ok(BoundReport {
        leaf: spec.id(leaf).to_string(),
        collapsed_bound_us: collapsed_delay_bound(spec, profiles, leaf)?,
        dovetail_bound_us: bound,
        dovetail_terms: terms,
        own_sibling_term_us: own_term,
    })
}

/// Ideal dominant share of a node: the product of `weight/mu(parent)` factors
/// along its ancestor chain, with every leaf backlogged. The root's share
/// is 1.
pub fn ideal_dominant_share(
    spec: &HierarchySpec,
    profiles: &BTreeMap<NodeIdx, PacketProfile>,
    node: NodeIdx,
) -> Result<f64> {
    let active: BTreeSet<NodeIdx> = spec.leaves().into_iter().collect();
    let virtuals = virtual_profiles_bottom_up(spec, profiles, &active)?;
    let mut share = 1.0;
    for h in 0..spec.depth(node) {
        let n = spec.ancestor(node, h)?;
        let p = spec.ancestor(node, h + 1)?;
        share *= spec.weight(n) / virtuals[&p].mu();
    }
    Ok(share)
}

/// Measured counterpart of [`ideal_dominant_share`]: the node's dominant
/// service over the window divided by the root's.
pub fn measured_share_of_root(
    trace: &Trace,
    spec: &HierarchySpec,
    node: NodeIdx,
    t1: Nanos,
    t2: Nanos,
) -> f64 {
    let w_node = dominant_service(trace, spec, node, t1, t2);
    let w_root = dominant_service(trace, spec, spec.root(), t1, t2);
    if w_root <= 0.0 {
        0.0
    } else {
        w_node / w_root
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct WfiReport {
    pub node: String,
    /// Largest fair-share deficit observed over packet intervals, in
    /// microseconds of dominant service (floored at zero).
    pub alpha_us: f64,
    /// Largest start delay over the node's packets, microseconds.
    pub max_start_delay_us: f64,
    pub packets: usize,
}

/// Worst-case fair index of `node` under its parent, measured over the trace:
/// for every packet interval `[arrival, completion]`, compare the node's
/// dominant service against its ideal slice of the parent's.
pub fn empirical_wfi(
    trace: &Trace,
    spec: &HierarchySpec,
    leaf_profiles: &BTreeMap<NodeIdx, PacketProfile>,
    node: NodeIdx,
) -> Result<WfiReport> {
    let leaves: BTreeSet<NodeIdx> = spec.leaves_under(node).into_iter().collect();
    let packets: Vec<_> = trace
        .records
        .iter()
        .filter(|r| leaves.contains(&r.leaf))
        .collect();
    if packets.is_empty() {
        return Err(Error::NeverBacklogged(spec.id(node).to_string()));
    }
    let parent = match spec.parent(node) {
        Some(p) => p,
        None => {
            // the root is trivially fair with itself
            return Ok(WfiReport {
                node: spec.id(node).to_string(),
                alpha_us: 0.0,
                max_start_delay_us: packets
                    .iter()
                    .map(|r| r.start_delay() as f64 / 1e3)
                    .fold(0.0, f64::max),
                packets: packets.len(),
            });
        }
    };
    let active: BTreeSet<NodeIdx> = spec.leaves().into_iter().collect();
    let virtuals = virtual_profiles_bottom_up(spec, leaf_profiles, &active)?;
    let ideal = spec.weight(node) / virtuals[&parent].mu();

    let mut alpha: f64 = 0.0;
    let mut max_delay: f64 = 0.0;
    for rec in &packets {
        let (a, d) = (rec.arrival, rec.completion());
        let w_node = dominant_service(trace, spec, node, a, d);
        let w_parent = dominant_service(trace, spec, parent, a, d);
        alpha = alpha.max(ideal * w_parent - w_node);
        max_delay = max_delay.max(rec.start_delay() as f64);
    }
    Ok(WfiReport {
        node: spec.id(node).to_string(),
        alpha_us: alpha.max(0.0) / 1e3,
        max_start_delay_us: max_delay / 1e3,
        packets: packets.len(),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct ShareReport {
    pub node: String,
    pub window: (Nanos, Nanos),
    /// Node's dominant service divided by its parent's over the window.
    pub measured_share_of_parent: f64,
    pub guaranteed_share: f64,
    /// Thm-3 style ideal share of the parent's service.
    pub ideal_share: f64,
    /// One-packet slack in microseconds used for the violation decision.
    pub slack_us: f64,
    pub violated: bool,
    /// False when the node was not continuously backlogged in the window, in
    /// which case no guarantee applies and `violated` is always false.
    pub backlogged: bool,
}

/// Hierarchical share-guarantee check over a window: every node backlogged
/// throughout must receive at least its weight share of its parent's
/// dominant service, up to one maximum packet of slack.
pub fn share_guarantee_report(
    trace: &Trace,
    spec: &HierarchySpec,
    window: (Nanos, Nanos),
) -> Vec<ShareReport> {
    let (t1, t2) = window;
    // representative per-leaf profiles from the trace: mean observed work
    let mut profiles: BTreeMap<NodeIdx, PacketProfile> = BTreeMap::new();
    for leaf in spec.leaves() {
        let recs: Vec<_> = trace.records.iter().filter(|r| r.leaf == leaf).collect();
        if recs.is_empty() {
            continue;
        }
        let m = trace.resources();
        let mut mean = vec![0.0; m];
        for rec in &recs {
            for r in 0..m {
                mean[r] += (rec.finishes[r] - rec.starts[r]) as f64
                    * trace.capacity_fractions[r]
                    / 1e3;
            }
        }
        mean.iter_mut().for_each(|v| *v /= recs.len() as f64);
        if let Ok(p) = PacketProfile::new(mean) {
            profiles.insert(leaf, p);
        }
    }
    let active: BTreeSet<NodeIdx> = profiles.keys().copied().collect();
    let virtuals = virtual_profiles_bottom_up(spec, &profiles, &active).ok();

    let mut out = Vec::new();
    for node in spec.depth_first() {
        let Some(parent) = spec.parent(node) else {
            continue;
        };
        let backlogged = backlogged_throughout(trace, spec, node, t1, t2);
        let w_node = dominant_service(trace, spec, node, t1, t2);
        let w_parent = dominant_service(trace, spec, parent, t1, t2);
        let guaranteed = spec.weight(node) / spec.weight(parent);
        let ideal = virtuals
            .as_ref()
            .and_then(|v| v.get(&parent).map(|p| spec.weight(node) / p.mu()))
            .unwrap_or(guaranteed);
        // one-packet granularity: the largest packet service among the
        // parent's descendants in the window
        let slack_ns = spec
            .leaves_under(parent)
            .iter()
            .flat_map(|l| {
                trace
                    .records
                    .iter()
                    .filter(move |r| r.leaf == *l && r.dispatch < t2 && r.completion() > t1)
            })
            .map(|r| {
                (0..trace.resources())
                    .map(|ri| {
                        (r.finishes[ri] - r.starts[ri]) as f64 * trace.capacity_fractions[ri]
                    })
                    .fold(0.0, f64::max)
            })
            .fold(0.0, f64::max);
        let measured = if w_parent > 0.0 { w_node / w_parent } else { 1.0 };
        let violated =
            backlogged && w_parent > 0.0 && w_node + slack_ns < guaranteed * w_parent;
        out.push(ShareReport {
            node: spec.id(node).to_string(),
            window,
            measured_share_of_parent: measured,
            guaranteed_share: guaranteed,
            ideal_share: ideal,
            slack_us: slack_ns / 1e3,
            violated,
            backlogged,
        });
    }
    out
}

#[derive(Debug, Clone, Serialize)]
pub struct ProbeVerdict {
    pub target: Vec<String>,
    pub pass: bool,
    /// (window end ns, honest cumulative dispatches, inflated cumulative).
    pub cumulative_counts: Vec<(Nanos, u64, u64)>,
}

/// Paired-run strategy-proofness probe: rerun `scenario` with the demand of
/// `target_leaves` inflated by `scale` (componentwise >= 1, strictly greater
/// somewhere) and verify the target's cumulative dispatched-packet count
/// never exceeds the honest run's by more than one packet at any window
/// boundary.
pub fn strategyproofness_probe(
    scenario: &Scenario,
    target_leaves: &[String],
    scale: &[f64],
) -> Result<ProbeVerdict> {
    if scale.iter().any(|s| *s < 1.0) || !scale.iter().any(|s| *s > 1.0) {
        return Err(Error::NotAnInflation);
    }
    let spec = scenario.validated_spec()?;
    let mut inflated = scenario.clone();
    let mut touched = false;
    for flow in &mut inflated.flows {
        if target_leaves.iter().any(|t| *t == flow.leaf) {
            let combined = match &flow.demand_scale {
                Some(prev) => prev.iter().zip(scale).map(|(a, b)| a * b).collect(),
                None => scale.to_vec(),
            };
            flow.demand_scale = Some(combined);
            touched = true;
        }
    }
    if !touched {
        return Err(Error::UnknownNode(target_leaves.join(",")));
    }

    let honest = sim::run(scenario)?;
    let gamed = sim::run(&inflated)?;

    let targets: BTreeSet<NodeIdx> = target_leaves
        .iter()
        .map(|t| spec.lookup(t))
        .collect::<Result<_>>()?;
    let window_ns = sim::sec_to_ns(scenario.share_window_s);
    let horizon_ns = sim::sec_to_ns(scenario.horizon_s);
    let mut cumulative = Vec::new();
    let mut pass = true;
    let mut t = window_ns;
    while t <= horizon_ns {
        let count = |trace: &Trace| -> u64 {
            trace
                .records
                .iter()
                .filter(|r| targets.contains(&r.leaf) && r.dispatch < t)
                .count() as u64
        };
        let h = count(&honest.trace);
        let g = count(&gamed.trace);
        if g > h + 1 {
            pass = false;
        }
        cumulative.push((t, h, g));
        t += window_ns;
    }
    Ok(ProbeVerdict {
        target: target_leaves.to_vec(),
        pass,
        cumulative_counts: cumulative,
    })
}

/// Find the eventual period of a dispatch sequence: the smallest pattern
/// length whose repetition covers the tail of `seq` at least three times.
/// Returns (warm-up length, period length).
pub fn detect_period<T: PartialEq>(seq: &[T]) -> Option<(usize, usize)> {
    let n = seq.len();
    for p in 1..=n / 3 {
        let pat = &seq[n - p..];
        let mut start = n - p;
        while start >= p && seq[start - p..start] == *pat {
            start -= p;
        }
        let reps = (n - start) / p;
        if reps >= 3 {
            return Some((start, p));
        }
    }
    None
}

/// Exact dominant-resource share of every node over one period of a dispatch
/// sequence, with integer microsecond profiles. The share of a node is
/// `max_r busy_r(subtree) / max_r busy_r(root)` as an exact rational.
pub fn exact_period_shares(
    spec: &HierarchySpec,
    period: &[NodeIdx],
    profiles_us: &BTreeMap<NodeIdx, Vec<i64>>,
) -> BTreeMap<NodeIdx, Ratio<i64>> {
    let m = profiles_us.values().next().map_or(0, |v| v.len());
    let mut busy: BTreeMap<NodeIdx, Vec<i64>> = BTreeMap::new();
    for leaf in period {
        let entry = busy.entry(*leaf).or_insert_with(|| vec![0; m]);
        for (b, s) in entry.iter_mut().zip(&profiles_us[leaf]) {
            *b += s;
        }
    }
    let node_busy = |node: NodeIdx| -> Vec<i64> {
        let mut acc = vec![0i64; m];
        for leaf in spec.leaves_under(node) {
            if let Some(b) = busy.get(&leaf) {
                for (a, v) in acc.iter_mut().zip(b) {
                    *a += v;
                }
            }
        }
        acc
    };
    let root_busy = node_busy(spec.root());
    let root_dominant = *root_busy.iter().max().unwrap_or(&0);
    spec.depth_first()
        .into_iter()
        .map(|node| {
            let dom = *node_busy(node).iter().max().unwrap_or(&0);
            (node, Ratio::new(dom, root_dominant.max(1)))
        })
        .collect()
}
