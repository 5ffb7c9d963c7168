//! The hierarchical schedulers: collapsed H-DRFQ, dove-tailing H-DRFQ, the
//! two naive baselines they replace, and a plain flat DRFQ comparator.
//!
//! All five expose the same driving interface: the caller tells the scheduler
//! when a leaf becomes backlogged or drains, and asks it which backlogged
//! leaf's head packet to dispatch next. Tie-breaks everywhere follow document
//! child order, so identical inputs give identical dispatch sequences.
//!
//! * collapsed H-DRFQ rebuilds the hierarchy as a one-level tree whose leaf
//!   weights are corrected by the dominant times of ancestor virtual
//!   profiles, then runs memoryless DRFQ on that flat tree. Weights are
//!   recomputed whenever the set of backlogged leaves changes.
//! * dove-tailing H-DRFQ runs one dove-tailing DRFQ group per internal node;
//!   an internal node forwards whichever packet its own group picked, so its
//!   parent sees the child's time-varying logical packet profile.
//! * naive-collapsed keeps the original leaf weights after flattening and
//!   naive-memoryless runs memoryless DRFQ per sibling group; both violate
//!   the hierarchical share guarantee and exist as negative baselines.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::drfq::{GroupScheduler, IdleMemory, Variant};
use crate::error::{Error, Result};
use crate::hierarchy::{HierarchySpec, NodeIdx};
use crate::profile::{
    effective_weight, virtual_profiles_bottom_up, PacketProfile,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SchedulerKind {
    CollapsedHdrfq,
    DovetailingHdrfq,
    NaiveCollapsed,
    NaiveMemoryless,
    FlatDrfq,
}

impl SchedulerKind {
    pub const ALL: [SchedulerKind; 5] = [
        SchedulerKind::CollapsedHdrfq,
        SchedulerKind::DovetailingHdrfq,
        SchedulerKind::NaiveCollapsed,
        SchedulerKind::NaiveMemoryless,
        SchedulerKind::FlatDrfq,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            SchedulerKind::CollapsedHdrfq => "collapsed-hdrfq",
            SchedulerKind::DovetailingHdrfq => "dovetailing-hdrfq",
            SchedulerKind::NaiveCollapsed => "naive-collapsed",
            SchedulerKind::NaiveMemoryless => "naive-memoryless",
            SchedulerKind::FlatDrfq => "flat-drfq",
        }
    }

    pub fn parse(s: &str) -> Option<SchedulerKind> {
        SchedulerKind::ALL.iter().copied().find(|k| k.name() == s)
    }

    pub fn is_hierarchical(&self) -> bool {
        matches!(
            self,
            SchedulerKind::CollapsedHdrfq | SchedulerKind::DovetailingHdrfq
        )
    }
}

impl std::fmt::Display for SchedulerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Driving interface shared by all schedulers. `heads` returns the profile of
/// the head packet currently queued at a backlogged leaf.
pub trait PacketScheduler {
    /// The leaf went from empty to backlogged; `head` is its queued packet's
    /// profile.
    fn activate(&mut self, leaf: NodeIdx, head: &PacketProfile) -> Result<()>;

    /// The leaf's queue drained.
    fn deactivate(&mut self, leaf: NodeIdx) -> Result<()>;

    /// Pick the next leaf to serve and account its head packet. Returns
    /// `None` when no leaf is backlogged.
    fn dispatch(&mut self, heads: &dyn Fn(NodeIdx) -> PacketProfile) -> Result<Option<NodeIdx>>;
}

/// Flattened leaf weights: each active leaf's weight multiplied by
/// `weight(ancestor) / mu(ancestor)` for every strict ancestor below the
/// root, with `mu` taken from the ancestor's virtual profile over the active
/// set. Weights of idle siblings accrue to the active members of each group.
pub fn flatten_weights(
    spec: &HierarchySpec,
    leaf_profiles: &BTreeMap<NodeIdx, PacketProfile>,
    active: &BTreeSet<NodeIdx>,
) -> Result<BTreeMap<NodeIdx, f64>> {
    let virtuals = virtual_profiles_bottom_up(spec, leaf_profiles, active)?;
    let mut out = BTreeMap::new();
    for leaf in active {
        let mut w = effective_weight(spec, *leaf, active).ok_or(Error::NoActiveLeaves)?;
        let depth = spec.depth(*leaf);
        for h in 1..depth {
            let anc = spec.ancestor(*leaf, h)?;
            let anc_w = effective_weight(spec, anc, active).ok_or(Error::NoActiveLeaves)?;
            w *= anc_w / virtuals[&anc].mu();
        }
        out.insert(*leaf, w);
    }
    Ok(out)
}

/// Memoryless DRFQ over the leaves with the weights a flat tree would carry.
/// With `use_flattened_weights` the corrected weights are recomputed on every
/// active-set change (collapsed H-DRFQ); without it the declared leaf weights
/// are used as-is (naive-collapsed and the flat DRFQ comparator).
pub struct FlatScheduler {
    spec: HierarchySpec,
    group: GroupScheduler,
    use_flattened_weights: bool,
    active: BTreeSet<NodeIdx>,
    registered: BTreeMap<NodeIdx, PacketProfile>,
}

impl FlatScheduler {
    pub fn new(spec: &HierarchySpec, use_flattened_weights: bool) -> Self {
        let members: Vec<(NodeIdx, String, f64)> = spec
            .leaves()
            .into_iter()
            .map(|l| (l, spec.id(l).to_string(), spec.weight(l)))
            .collect();
        FlatScheduler {
            spec: spec.clone(),
            group: GroupScheduler::new(Variant::Memoryless, &members),
            use_flattened_weights,
            active: BTreeSet::new(),
            registered: BTreeMap::new(),
        }
    }

    fn recompute_weights(&mut self) -> Result<()> {
        if !self.use_flattened_weights || self.active.is_empty() {
            return Ok(());
        }
        let weights = flatten_weights(&self.spec, &self.registered, &self.active)?;
        for (leaf, w) in weights {
            self.group.set_weight(leaf, w)?;
        }
        Ok(())
    }

    /// Current flattened weight of an active leaf (diagnostics).
    pub fn leaf_weight(&self, leaf: NodeIdx) -> Result<f64> {
        self.group.weight(leaf)
    }
}

impl PacketScheduler for FlatScheduler {
    fn activate(&mut self, leaf: NodeIdx, head: &PacketProfile) -> Result<()> {
        self.active.insert(leaf);
        self.registered.insert(leaf, head.clone());
        self.group.set_active(leaf, true)?;
        self.recompute_weights()
    }

    fn deactivate(&mut self, leaf: NodeIdx) -> Result<()> {
        self.active.remove(&leaf);
        self.registered.remove(&leaf);
        self.group.set_active(leaf, false)?;
        self.recompute_weights()
    }

    fn dispatch(&mut self, heads: &dyn Fn(NodeIdx) -> PacketProfile) -> Result<Option<NodeIdx>> {
        if !self.group.any_active() {
            return Ok(None);
        }
        let leaf = self.group.next_member()?;
        self.group.charge(leaf, &heads(leaf))?;
        Ok(Some(leaf))
    }
}

/// One DRFQ group per internal node, applied recursively: the root's group
/// picks among its children, an internal child's group picks among its own
/// children, and so on down to a leaf. The chosen leaf's packet profile is
/// charged at every group along the path, which is exactly the logical
/// packet profile its ancestors forward.
pub struct TreeScheduler {
    spec: HierarchySpec,
    groups: Vec<Option<GroupScheduler>>,
    active: BTreeSet<NodeIdx>,
    /// Memoryless groups charge an internal child by the largest head packet
    /// time in its subtree (the naive extension); dove-tailing groups charge
    /// the actual packet vector.
    variant: Variant,
}

impl TreeScheduler {
    pub fn new(spec: &HierarchySpec, variant: Variant, idle_memory: IdleMemory) -> Self {
        let mut groups: Vec<Option<GroupScheduler>> = vec![None; spec.len()];
        for node in spec.internal_nodes() {
            let members: Vec<(NodeIdx, String, f64)> = spec
                .node(node)
                .children
                .iter()
                .map(|c| (*c, spec.id(*c).to_string(), spec.weight(*c)))
                .collect();
            groups[node.0] =
                Some(GroupScheduler::new(variant, &members).with_idle_memory(idle_memory));
        }
        TreeScheduler {
            spec: spec.clone(),
            groups,
            active: BTreeSet::new(),
            variant,
        }
    }

    fn group_mut(&mut self, node: NodeIdx) -> &mut GroupScheduler {
        self.groups[node.0].as_mut().expect("internal node group")
    }

    /// Largest head-packet dominant time among active leaves under `node`.
    fn subtree_head_mu(&self, node: NodeIdx, heads: &dyn Fn(NodeIdx) -> PacketProfile) -> f64 {
        self.spec
            .leaves_under(node)
            .into_iter()
            .filter(|l| self.active.contains(l))
            .map(|l| heads(l).mu())
            .fold(0.0, f64::max)
    }
}

impl PacketScheduler for TreeScheduler {
    fn activate(&mut self, leaf: NodeIdx, _head: &PacketProfile) -> Result<()> {
        self.active.insert(leaf);
        let mut child = leaf;
        while let Some(parent) = self.spec.parent(child) {
            let group = self.group_mut(parent);
            let first_in_group = !group.any_active();
            group.set_active(child, true)?;
            if !first_in_group {
                break; // parent already counted as active further up
            }
            child = parent;
        }
        Ok(())
    }

    fn deactivate(&mut self, leaf: NodeIdx) -> Result<()> {
        self.active.remove(&leaf);
        let mut child = leaf;
        while let Some(parent) = self.spec.parent(child) {
            let group = self.group_mut(parent);
            group.set_active(child, false)?;
            if group.any_active() {
                break;
            }
            child = parent;
        }
        Ok(())
    }

    fn dispatch(&mut self, heads: &dyn Fn(NodeIdx) -> PacketProfile) -> Result<Option<NodeIdx>> {
        let root = self.spec.root();
        if !self.groups[root.0].as_ref().expect("root group").any_active() {
            return Ok(None);
        }
        let mut node = root;
        while !self.spec.is_leaf(node) {
            node = self.groups[node.0]
                .as_ref()
                .expect("internal node group")
                .next_member()?;
        }
        let profile = heads(node);

        let mut child = node;
        while let Some(parent) = self.spec.parent(child) {
            let amount = match self.variant {
                Variant::Dovetailing => profile.clone(),
                Variant::Memoryless => {
                    let mu = if self.spec.is_leaf(child) {
                        profile.mu()
                    } else {
                        self.subtree_head_mu(child, heads)
                    };
                    PacketProfile::new(vec![mu])?
                }
            };
            self.group_mut(parent).charge(child, &amount)?;
            child = parent;
        }
        Ok(Some(node))
    }
}

/// Build a scheduler of the given kind over a validated hierarchy.
pub fn build_scheduler(
    kind: SchedulerKind,
    spec: &HierarchySpec,
    idle_memory: IdleMemory,
) -> Box<dyn PacketScheduler> {
    match kind {
        SchedulerKind::CollapsedHdrfq => Box::new(FlatScheduler::new(spec, true)),
        SchedulerKind::NaiveCollapsed | SchedulerKind::FlatDrfq => {
            Box::new(FlatScheduler::new(spec, false))
        }
        SchedulerKind::DovetailingHdrfq => {
            Box::new(TreeScheduler::new(spec, Variant::Dovetailing, idle_memory))
        }
        SchedulerKind::NaiveMemoryless => {
            Box::new(TreeScheduler::new(spec, Variant::Memoryless, idle_memory))
        }
    }
}

/// Drive a scheduler with every leaf continuously backlogged, cycling through
/// `profiles[leaf]` for successive packets. Returns the dispatch sequence.
/// Leaves are activated in document order before the first dispatch.
pub fn drive_backlogged(
    sched: &mut dyn PacketScheduler,
    spec: &HierarchySpec,
    profiles: &BTreeMap<NodeIdx, Vec<PacketProfile>>,
    steps: usize,
) -> Result<Vec<NodeIdx>> {
    let mut counts: BTreeMap<NodeIdx, usize> = BTreeMap::new();
    for leaf in spec.leaves() {
        if let Some(cycle) = profiles.get(&leaf) {
            sched.activate(leaf, &cycle[0])?;
            counts.insert(leaf, 0);
        }
    }
    let mut seq = Vec::with_capacity(steps);
    for _ in 0..steps {
        let counts_now = counts.clone();
        let heads = |leaf: NodeIdx| -> PacketProfile {
            let cycle = &profiles[&leaf];
            cycle[counts_now.get(&leaf).copied().unwrap_or(0) % cycle.len()].clone()
        };
        match sched.dispatch(&heads)? {
            Some(leaf) => {
                *counts.get_mut(&leaf).unwrap() += 1;
                seq.push(leaf);
            }
            None => break,
        }
    }
    Ok(seq)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hierarchy::{parse_hierarchy, simple_two_level_doc, ValidationMode};

    fn p(d: &[f64]) -> PacketProfile {
        PacketProfile::new(d.to_vec()).unwrap()
    }

    fn simple_spec() -> HierarchySpec {
        parse_hierarchy(simple_two_level_doc())
            .unwrap()
            .validate_and_normalize(ValidationMode::Strict)
            .unwrap()
    }

    fn simple_profiles(spec: &HierarchySpec) -> BTreeMap<NodeIdx, Vec<PacketProfile>> {
        [
            ("f1", vec![p(&[1.0, 1.0])]),
            ("f2.1", vec![p(&[1.0, 2.0])]),
            ("f2.2", vec![p(&[2.0, 1.0])]),
        ]
        .into_iter()
        .map(|(id, v)| (spec.lookup(id).unwrap(), v))
        .collect()
    }

    fn names(spec: &HierarchySpec, seq: &[NodeIdx]) -> Vec<String> {
        seq.iter().map(|n| spec.id(*n).to_string()).collect()
    }

    #[test]
    fn flatten_weight_simple_example() {
        let spec = simple_spec();
        let profiles: BTreeMap<_, _> = simple_profiles(&spec)
            .into_iter()
            .map(|(k, v)| (k, v[0].clone()))
            .collect();
        let active: BTreeSet<_> = profiles.keys().copied().collect();
        let w = flatten_weights(&spec, &profiles, &active).unwrap();
        let f21 = spec.lookup("f2.1").unwrap();
        let f1 = spec.lookup("f1").unwrap();
        assert!((w[&f21] - 1.0 / 3.0).abs() < 1e-12, "w = {}", w[&f21]);
        assert!((w[&f1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn flatten_weight_depth_one_identity() {
        let doc = r#"{"weight":1.0,"children":[
            {"id":"a","weight":0.7},{"id":"b","weight":0.3}
        ]}"#;
        let spec = parse_hierarchy(doc)
            .unwrap()
            .validate_and_normalize(ValidationMode::Strict)
            .unwrap();
        let profiles: BTreeMap<_, _> = [("a", &[2.0, 1.0][..]), ("b", &[1.0, 3.0])]
            .into_iter()
            .map(|(id, d)| (spec.lookup(id).unwrap(), p(d)))
            .collect();
        let active: BTreeSet<_> = profiles.keys().copied().collect();
        let w = flatten_weights(&spec, &profiles, &active).unwrap();
        assert_eq!(w[&spec.lookup("a").unwrap()], 0.7);
        assert_eq!(w[&spec.lookup("b").unwrap()], 0.3);
    }

    #[test]
    fn collapsed_reproduces_published_order() {
        let spec = simple_spec();
        let mut s = build_scheduler(SchedulerKind::CollapsedHdrfq, &spec, IdleMemory::Clamp);
        let seq = drive_backlogged(&mut *s, &spec, &simple_profiles(&spec), 23).unwrap();
        let mut want = vec!["f1", "f2.1", "f2.2"];
        for _ in 0..4 {
            want.extend(["f1", "f1", "f1", "f2.1", "f2.2"]);
        }
        assert_eq!(names(&spec, &seq), want);
    }

    #[test]
    fn dovetailing_reproduces_published_order() {
        let spec = simple_spec();
        let mut s = build_scheduler(SchedulerKind::DovetailingHdrfq, &spec, IdleMemory::Clamp);
        let seq = drive_backlogged(&mut *s, &spec, &simple_profiles(&spec), 20).unwrap();
        let mut want = Vec::new();
        for _ in 0..4 {
            want.extend(["f1", "f2.1", "f1", "f1", "f2.2"]);
        }
        assert_eq!(names(&spec, &seq), want);
    }

    #[test]
    fn naive_collapsed_four_to_one_to_one() {
        let spec = simple_spec();
        let mut s = build_scheduler(SchedulerKind::NaiveCollapsed, &spec, IdleMemory::Clamp);
        let seq = drive_backlogged(&mut *s, &spec, &simple_profiles(&spec), 27).unwrap();
        let mut want = vec!["f1", "f2.1", "f2.2"];
        for _ in 0..4 {
            want.extend(["f1", "f1", "f1", "f1", "f2.1", "f2.2"]);
        }
        assert_eq!(names(&spec, &seq), want);
    }

    #[test]
    fn naive_memoryless_four_to_one_to_one() {
        let spec = simple_spec();
        let mut s = build_scheduler(SchedulerKind::NaiveMemoryless, &spec, IdleMemory::Clamp);
        let seq = drive_backlogged(&mut *s, &spec, &simple_profiles(&spec), 3000).unwrap();
        let count = |id: &str| {
            let n = spec.lookup(id).unwrap();
            seq.iter().filter(|x| **x == n).count() as isize
        };
        let (n1, n21, n22) = (count("f1"), count("f2.1"), count("f2.2"));
        assert!((n1 - 4 * n21).abs() <= 4, "{n1}:{n21}:{n22}");
        assert!((n21 - n22).abs() <= 1);
    }

    #[test]
    fn single_backlogged_leaf_runs_back_to_back() {
        let spec = simple_spec();
        for kind in SchedulerKind::ALL {
            let mut s = build_scheduler(kind, &spec, IdleMemory::Clamp);
            let f21 = spec.lookup("f2.1").unwrap();
            let profiles = BTreeMap::from([(f21, vec![p(&[1.0, 2.0])])]);
            let seq = drive_backlogged(&mut *s, &spec, &profiles, 5).unwrap();
            assert_eq!(seq, vec![f21; 5], "{kind}");
        }
    }

    #[test]
    fn degenerate_chain_serves_leaf_back_to_back() {
        let doc = r#"{"weight":1.0,"children":[
            {"id":"g","weight":1.0,"children":[{"id":"x","weight":1.0}]}
        ]}"#;
        let spec = parse_hierarchy(doc)
            .unwrap()
            .validate_and_normalize(ValidationMode::Strict)
            .unwrap();
        let x = spec.lookup("x").unwrap();
        let profiles = BTreeMap::from([(x, vec![p(&[3.0, 1.0])])]);
        let mut s = build_scheduler(SchedulerKind::DovetailingHdrfq, &spec, IdleMemory::Clamp);
        let seq = drive_backlogged(&mut *s, &spec, &profiles, 4).unwrap();
        assert_eq!(seq, vec![x; 4]);
    }

    #[test]
    fn depth_one_tree_naive_equals_collapsed() {
        let doc = r#"{"weight":1.0,"children":[
            {"id":"a","weight":0.6},{"id":"b","weight":0.4}
        ]}"#;
        let spec = parse_hierarchy(doc)
            .unwrap()
            .validate_and_normalize(ValidationMode::Strict)
            .unwrap();
        let profiles: BTreeMap<_, _> = [("a", &[1.0, 2.0][..]), ("b", &[2.0, 1.0])]
            .into_iter()
            .map(|(id, d)| (spec.lookup(id).unwrap(), vec![p(d)]))
            .collect();
        let mut a = build_scheduler(SchedulerKind::CollapsedHdrfq, &spec, IdleMemory::Clamp);
        let mut b = build_scheduler(SchedulerKind::NaiveCollapsed, &spec, IdleMemory::Clamp);
        let sa = drive_backlogged(&mut *a, &spec, &profiles, 200).unwrap();
        let sb = drive_backlogged(&mut *b, &spec, &profiles, 200).unwrap();
        assert_eq!(sa, sb);
    }

    #[test]
    fn identical_leaves_make_naive_memoryless_match_dovetailing() {
        let spec = simple_spec();
        let profiles: BTreeMap<_, _> = spec
            .leaves()
            .into_iter()
            .map(|l| (l, vec![p(&[1.0, 1.0])]))
            .collect();
        let mut a = build_scheduler(SchedulerKind::NaiveMemoryless, &spec, IdleMemory::Clamp);
        let mut b = build_scheduler(SchedulerKind::DovetailingHdrfq, &spec, IdleMemory::Clamp);
        let sa = drive_backlogged(&mut *a, &spec, &profiles, 300).unwrap();
        let sb = drive_backlogged(&mut *b, &spec, &profiles, 300).unwrap();
        assert_eq!(sa, sb);
    }

    /// Independent oracle for the flattened weights: walk the ancestor chain
    /// of each leaf explicitly and multiply the weight/mu factors, with each
    /// ancestor's virtual profile recomputed here from its leaf set.
    fn ancestor_walk_oracle(
        spec: &HierarchySpec,
        profiles: &BTreeMap<NodeIdx, PacketProfile>,
        leaf: NodeIdx,
    ) -> f64 {
        fn node_profile(
            spec: &HierarchySpec,
            profiles: &BTreeMap<NodeIdx, PacketProfile>,
            node: NodeIdx,
        ) -> PacketProfile {
            if spec.is_leaf(node) {
                return profiles[&node].clone();
            }
            let parts: Vec<_> = spec
                .node(node)
                .children
                .iter()
                .map(|c| (node_profile(spec, profiles, *c).normalize(), spec.weight(*c)))
                .collect();
            crate::profile::virtual_profile(&parts).unwrap()
        }
        let mut w = spec.weight(leaf);
        for h in 1..spec.depth(leaf) {
            let anc = spec.ancestor(leaf, h).unwrap();
            w *= spec.weight(anc) / node_profile(spec, profiles, anc).mu();
        }
        w
    }

    #[test]
    fn flatten_weights_match_ancestor_walk_oracle_on_random_trees() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let (spec, profiles) = crate::randgen::random_instance(&mut rng);
            let active: BTreeSet<_> = profiles.keys().copied().collect();
            let got = flatten_weights(&spec, &profiles, &active).unwrap();
            for leaf in spec.leaves() {
                let want = ancestor_walk_oracle(&spec, &profiles, leaf);
                let rel = (got[&leaf] - want).abs() / want.abs().max(1e-300);
                assert!(rel < 1e-12, "leaf {} rel {rel}", spec.id(leaf));
            }
        }
    }
}
