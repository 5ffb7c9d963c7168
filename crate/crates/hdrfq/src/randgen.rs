//! Seeded random hierarchies and packet profiles for the property suites.
//!
//! Trees stay small on purpose: at most 4 levels, at most 12 leaves, 1 to 3
//! resources, strictly positive demands. That is the regime the randomized
//! checks (bound dominance, share guarantees, strategy-proofness probes)
//! quantify over.

use std::collections::BTreeMap;

use rand::Rng;

use crate::hierarchy::{HierarchyDoc, HierarchySpec, NodeIdx, ValidationMode};
use crate::profile::PacketProfile;

pub const MAX_LEVELS: usize = 4;
pub const MAX_LEAVES: usize = 12;
pub const MAX_RESOURCES: usize = 3;

fn random_subtree<R: Rng>(
    rng: &mut R,
    depth: usize,
    leaf_budget: &mut usize,
) -> HierarchyDoc {
    let weight = rng.gen_range(0.5..2.0);
    let can_branch = depth < MAX_LEVELS && *leaf_budget > 1;
    let make_internal = can_branch && rng.gen_bool(if depth == 0 { 1.0 } else { 0.4 });
    if !make_internal {
        *leaf_budget -= 1;
        return HierarchyDoc {
            id: None,
            weight,
            children: Vec::new(),
        };
    }
    let max_kids = (*leaf_budget).min(4).max(2);
    let n_kids = rng.gen_range(2..=max_kids);
    let children = (0..n_kids)
        .map(|_| random_subtree(rng, depth + 1, leaf_budget))
        .collect();
    HierarchyDoc {
        id: None,
        weight,
        children,
    }
}

/// A validated random hierarchy (weights renormalized so leaves sum to 1).
pub fn random_tree<R: Rng>(rng: &mut R) -> HierarchySpec {
    let mut budget = rng.gen_range(2..=MAX_LEAVES);
    let doc = random_subtree(rng, 0, &mut budget);
    HierarchySpec::from_doc(&doc)
        .expect("generated doc is well formed")
        .validate_and_normalize(ValidationMode::Renormalize)
        .expect("generated doc validates")
}

/// Strictly positive per-leaf profiles over a common resource count.
pub fn random_profiles<R: Rng>(
    rng: &mut R,
    spec: &HierarchySpec,
    resources: usize,
) -> BTreeMap<NodeIdx, PacketProfile> {
    spec.leaves()
        .into_iter()
        .map(|leaf| {
            let demand: Vec<f64> = (0..resources).map(|_| rng.gen_range(0.5..4.0)).collect();
            (leaf, PacketProfile::new(demand).unwrap())
        })
        .collect()
}

/// A random tree together with profiles for every leaf.
pub fn random_instance<R: Rng>(rng: &mut R) -> (HierarchySpec, BTreeMap<NodeIdx, PacketProfile>) {
    let spec = random_tree(rng);
    let m = rng.gen_range(1..=MAX_RESOURCES);
    let profiles = random_profiles(rng, &spec, m);
    (spec, profiles)
}
