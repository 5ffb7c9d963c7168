//! Packet profiles and the synthetic profiles of internal nodes.
//!
//! A packet profile is the vector of processing times (microseconds) a packet
//! needs on each of the `m` middlebox resources. The dominant resource is the
//! one with the largest entry. An internal node behaves like a virtual
//! backlogged flow whose constant profile is the weight-scaled sum of its
//! children's normalized profiles; that construction is what the flattening
//! step and the delay bounds are built on.

use std::collections::{BTreeMap, BTreeSet};

use crate::error::{Error, Result};
use crate::hierarchy::{HierarchySpec, NodeIdx};

/// Absolute tolerance for time comparisons, in microseconds.
pub const TIME_TOL: f64 = 1e-9;

/// Per-resource processing-time demand of one packet, in microseconds.
#[derive(Debug, Clone, PartialEq)]
pub struct PacketProfile(Vec<f64>);

/// Dominant resource of a profile: the lowest index attaining the maximum
/// processing time, together with that time (`mu`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DominantInfo {
    pub resource: usize,
    pub mu: f64,
}

/// A profile divided by its dominant time; the maximum entry is exactly 1.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedProfile(Vec<f64>);

impl PacketProfile {
    pub fn new(demand: Vec<f64>) -> Result<Self> {
        if demand.is_empty()
            || demand.iter().any(|d| *d < 0.0 || !d.is_finite())
            || demand.iter().all(|d| *d <= 0.0)
        {
            return Err(Error::ZeroProfile);
        }
        Ok(PacketProfile(demand))
    }

    pub fn resources(&self) -> usize {
        self.0.len()
    }

    pub fn demand(&self) -> &[f64] {
        &self.0
    }

    pub fn get(&self, r: usize) -> f64 {
        self.0[r]
    }

    /// Largest entry and the lowest resource index attaining it.
    pub fn dominant(&self) -> DominantInfo {
        let mut best = 0;
        for (r, d) in self.0.iter().enumerate() {
            if *d > self.0[best] {
                best = r;
            }
        }
        DominantInfo {
            resource: best,
            mu: self.0[best],
        }
    }

    pub fn mu(&self) -> f64 {
        self.dominant().mu
    }

    /// Componentwise division by the dominant time.
    pub fn normalize(&self) -> NormalizedProfile {
        let mu = self.dominant().mu;
        NormalizedProfile(self.0.iter().map(|d| d / mu).collect())
    }

    /// Componentwise scale, used for capacity fractions and demand inflation.
    pub fn scaled(&self, factors: &[f64]) -> Result<Self> {
        if factors.len() != self.0.len() {
            return Err(Error::ResourceCountMismatch(factors.len(), self.0.len()));
        }
        PacketProfile::new(
            self.0
                .iter()
                .zip(factors)
                .map(|(d, f)| d * f)
                .collect::<Vec<_>>(),
        )
    }

    pub fn approx_eq(&self, other: &Self) -> bool {
        self.0.len() == other.0.len()
            && self
                .0
                .iter()
                .zip(&other.0)
                .all(|(a, b)| (a - b).abs() <= TIME_TOL)
    }
}

impl NormalizedProfile {
    pub fn values(&self) -> &[f64] {
        &self.0
    }
}

/// Weight-scaled sum of normalized child profiles: entry `r` of the result is
/// the sum over children of `normalized[r] * weight`. All children must agree
/// on the resource count.
pub fn virtual_profile(children: &[(NormalizedProfile, f64)]) -> Result<PacketProfile> {
    let (first, _) = children.first().ok_or(Error::NoActiveLeaves)?;
    let m = first.0.len();
    let mut acc = vec![0.0; m];
    for (norm, weight) in children {
        if norm.0.len() != m {
            return Err(Error::ResourceCountMismatch(norm.0.len(), m));
        }
        for (a, l) in acc.iter_mut().zip(&norm.0) {
            *a += l * weight;
        }
    }
    PacketProfile::new(acc)
}

/// Profiles of every node that has at least one active descendant.
///
/// Leaves map to their own profiles. An internal node maps to the virtual
/// profile over its active children, where a child's contribution uses its
/// own (virtual) profile normalized, and the weights of the active children
/// are rescaled so they still sum to the node's weight: the share an idle
/// sibling would have received accrues to the active ones.
pub fn virtual_profiles_bottom_up(
    spec: &HierarchySpec,
    leaf_profiles: &BTreeMap<NodeIdx, PacketProfile>,
    active: &BTreeSet<NodeIdx>,
) -> Result<BTreeMap<NodeIdx, PacketProfile>> {
    if active.is_empty() {
        return Err(Error::NoActiveLeaves);
    }
    let mut out = BTreeMap::new();
    fill_virtual(spec, spec.root(), leaf_profiles, active, &mut out)?;
    Ok(out)
}

fn fill_virtual(
    spec: &HierarchySpec,
    node: NodeIdx,
    leaf_profiles: &BTreeMap<NodeIdx, PacketProfile>,
    active: &BTreeSet<NodeIdx>,
    out: &mut BTreeMap<NodeIdx, PacketProfile>,
) -> Result<bool> {
    if spec.is_leaf(node) {
        if !active.contains(&node) {
            return Ok(false);
        }
        let profile = leaf_profiles
            .get(&node)
            .ok_or_else(|| Error::UnknownNode(spec.id(node).to_string()))?;
        out.insert(node, profile.clone());
        return Ok(true);
    }

    let mut live = Vec::new();
    for child in &spec.node(node).children {
        if fill_virtual(spec, *child, leaf_profiles, active, out)? {
            live.push(*child);
        }
    }
    if live.is_empty() {
        return Ok(false);
    }
    let live_weight: f64 = live.iter().map(|c| spec.weight(*c)).sum();
    let scale = spec.weight(node) / live_weight;
    let parts: Vec<(NormalizedProfile, f64)> = live
        .iter()
        .map(|c| (out[c].normalize(), spec.weight(*c) * scale))
        .collect();
    out.insert(node, virtual_profile(&parts)?);
    Ok(true)
}

/// Effective weight of `node` when only `active` leaves are backlogged:
/// its declared weight scaled up by the idle share of each sibling group on
/// the path (the weight of inactive siblings is split among active ones).
/// Returns `None` if `node` has no active descendant.
pub fn effective_weight(
    spec: &HierarchySpec,
    node: NodeIdx,
    active: &BTreeSet<NodeIdx>,
) -> Option<f64> {
    let has_active = |n: NodeIdx| spec.leaves_under(n).iter().any(|l| active.contains(l));
    if !has_active(node) {
        return None;
    }
    let mut w = spec.weight(node);
    let mut cur = node;
    while let Some(parent) = spec.parent(cur) {
        let live_sum: f64 = spec
            .node(parent)
            .children
            .iter()
            .filter(|c| has_active(**c))
            .map(|c| spec.weight(*c))
            .sum();
        w *= spec.weight(parent) / live_sum;
        cur = parent;
    }
    Some(w)
}
