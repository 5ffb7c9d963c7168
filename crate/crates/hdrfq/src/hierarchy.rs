//! Weighted scheduling tree: parsing, validation and topology queries.
//!
//! A hierarchy is given as a JSON document of nested nodes
//! `{"id": string, "weight": number, "children": [...]}`. A missing or empty
//! `children` list marks a leaf. Node ids default to the path string
//! ("2.1" for the first child of the root's second child). Child order in
//! the document is significant: it is the tie-break order used by every
//! scheduler in this crate.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Hierarchies deeper than this are rejected during validation.
pub const MAX_DEPTH: usize = 16;

/// Relative tolerance for weight-sum checks in strict validation.
pub const WEIGHT_TOL: f64 = 1e-9;

/// Index of a node inside its [`HierarchySpec`]. Indices are assigned in
/// document (depth-first, child-order) order and are stable after validation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeIdx(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeKind {
    Leaf,
    Internal,
}

#[derive(Debug, Clone)]
pub struct Node {
    pub id: String,
    pub weight: f64,
    pub kind: NodeKind,
    pub parent: Option<NodeIdx>,
    pub children: Vec<NodeIdx>,
    /// Distance from the root (root is 0).
    pub depth: usize,
}

/// JSON document form of a hierarchy node.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HierarchyDoc {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    pub weight: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub children: Vec<HierarchyDoc>,
}

/// Validation mode for [`HierarchySpec::validate_and_normalize`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ValidationMode {
    /// Reject any sibling group whose weights do not sum to the parent's
    /// weight (and leaf weights that do not sum to 1).
    Strict,
    /// Rescale each sibling group so it sums to the parent's weight; leaf
    /// weights then sum to 1 and internal weights are recomputed bottom-up.
    Renormalize,
}

/// An immutable weighted tree of groups (internal nodes) and flows (leaves).
///
/// Construct with [`parse_hierarchy`] followed by
/// [`HierarchySpec::validate_and_normalize`]; all schedulers and analyses
/// require a validated spec. The struct is safe to share across threads.
#[derive(Debug, Clone)]
pub struct HierarchySpec {
    nodes: Vec<Node>,
    root: NodeIdx,
    by_id: HashMap<String, NodeIdx>,
    validated: bool,
}

/// Parse a hierarchy document. The result preserves child order and raw
/// weights; run [`HierarchySpec::validate_and_normalize`] before using it.
pub fn parse_hierarchy(document: &str) -> Result<HierarchySpec> {
    let doc: HierarchyDoc =
        serde_json::from_str(document).map_err(|e| Error::MalformedDocument(e.to_string()))?;
    HierarchySpec::from_doc(&doc)
}

impl HierarchySpec {
    pub fn from_doc(doc: &HierarchyDoc) -> Result<Self> {
        let mut nodes = Vec::new();
        let mut by_id = HashMap::new();
        let root = build_node(doc, None, "", 0, &mut nodes, &mut by_id)?;
        Ok(HierarchySpec {
            nodes,
            root,
            by_id,
            validated: false,
        })
    }

    /// Check tree invariants and weight sums. In `Renormalize` mode sibling
    /// weights are rescaled to sum to the parent's weight (so leaf weights
    /// sum to 1); in `Strict` mode any mismatch beyond `WEIGHT_TOL` is an
    /// error. Returns a validated spec; the input is consumed conceptually
    /// (call on a parsed spec).
    pub fn validate_and_normalize(mut self, mode: ValidationMode) -> Result<Self> {
        for idx in 0..self.nodes.len() {
            let node = &self.nodes[idx];
            if node.kind == NodeKind::Internal && node.children.is_empty() {
                return Err(Error::EmptyInternalNode(node.id.clone()));
            }
            if node.depth > MAX_DEPTH {
                return Err(Error::TooDeep {
                    node: node.id.clone(),
                    max: MAX_DEPTH,
                });
            }
        }

        match mode {
            ValidationMode::Strict => {
                let rw = self.nodes[self.root.0].weight;
                if !approx_eq(rw, 1.0) {
                    return Err(Error::WeightSumMismatch {
                        node: self.nodes[self.root.0].id.clone(),
                        sum: rw,
                        expected: 1.0,
                    });
                }
                for idx in 0..self.nodes.len() {
                    let node = &self.nodes[idx];
                    if node.children.is_empty() {
                        continue;
                    }
                    let sum: f64 = node.children.iter().map(|c| self.nodes[c.0].weight).sum();
                    if !approx_eq(sum, node.weight) {
                        return Err(Error::WeightSumMismatch {
                            node: node.id.clone(),
                            sum,
                            expected: node.weight,
                        });
                    }
                }
            }
            ValidationMode::Renormalize => {
                // Top-down: rescale each sibling group to its parent's weight,
                // starting from a root weight of 1.
                self.nodes[self.root.0].weight = 1.0;
                let order = self.depth_first();
                for idx in order {
                    let children = self.nodes[idx.0].children.clone();
                    if children.is_empty() {
                        continue;
                    }
                    let parent_w = self.nodes[idx.0].weight;
                    let sum: f64 = children.iter().map(|c| self.nodes[c.0].weight).sum();
                    for c in children {
                        self.nodes[c.0].weight = self.nodes[c.0].weight / sum * parent_w;
                    }
                }
            }
        }

        self.validated = true;
        Ok(self)
    }

    pub fn is_validated(&self) -> bool {
        self.validated
    }

    pub fn root(&self) -> NodeIdx {
        self.root
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, idx: NodeIdx) -> &Node {
        &self.nodes[idx.0]
    }

    pub fn id(&self, idx: NodeIdx) -> &str {
        &self.nodes[idx.0].id
    }

    pub fn weight(&self, idx: NodeIdx) -> f64 {
        self.nodes[idx.0].weight
    }

    pub fn lookup(&self, id: &str) -> Result<NodeIdx> {
        self.by_id
            .get(id)
            .copied()
            .ok_or_else(|| Error::UnknownNode(id.to_string()))
    }

    pub fn is_leaf(&self, idx: NodeIdx) -> bool {
        self.nodes[idx.0].kind == NodeKind::Leaf
    }

    /// All node indices in document (depth-first) order.
    pub fn depth_first(&self) -> Vec<NodeIdx> {
        (0..self.nodes.len()).map(NodeIdx).collect()
    }

    /// Leaves in document order. This order is the global tie-break order
    /// used by the flat schedulers.
    pub fn leaves(&self) -> Vec<NodeIdx> {
        self.depth_first()
            .into_iter()
            .filter(|i| self.is_leaf(*i))
            .collect()
    }

    pub fn internal_nodes(&self) -> Vec<NodeIdx> {
        self.depth_first()
            .into_iter()
            .filter(|i| !self.is_leaf(*i))
            .collect()
    }

    /// Depth of node `i`: the number of ancestors up to and including the
    /// root, i.e. `ancestor(i, depth(i)) == root`.
    pub fn depth(&self, i: NodeIdx) -> usize {
        self.nodes[i.0].depth
    }

    /// `h`-th predecessor of `i`: `ancestor(i, 0) == i`,
    /// `ancestor(i, depth(i)) == root`.
    pub fn ancestor(&self, i: NodeIdx, h: usize) -> Result<NodeIdx> {
        let depth = self.depth(i);
        if h > depth {
            return Err(Error::AncestorOutOfRange {
                node: self.id(i).to_string(),
                h,
                depth,
            });
        }
        let mut cur = i;
        for _ in 0..h {
            cur = self.nodes[cur.0].parent.expect("depth accounting");
        }
        Ok(cur)
    }

    pub fn parent(&self, i: NodeIdx) -> Option<NodeIdx> {
        self.nodes[i.0].parent
    }

    /// Sibling nodes of `i` (same parent, `i` itself excluded), in child
    /// order. The root has no siblings.
    pub fn siblings(&self, i: NodeIdx) -> Vec<NodeIdx> {
        match self.nodes[i.0].parent {
            None => Vec::new(),
            Some(p) => self.nodes[p.0]
                .children
                .iter()
                .copied()
                .filter(|c| *c != i)
                .collect(),
        }
    }

    /// Leaves of the subtree rooted at `i`, in document order.
    /// `leaves_under(leaf) == [leaf]`.
    pub fn leaves_under(&self, i: NodeIdx) -> Vec<NodeIdx> {
        let mut out = Vec::new();
        let mut stack = vec![i];
        while let Some(n) = stack.pop() {
            if self.is_leaf(n) {
                out.push(n);
            } else {
                // push in reverse so children pop in document order
                for c in self.nodes[n.0].children.iter().rev() {
                    stack.push(*c);
                }
            }
        }
        out
    }

    /// Serialize back to the document form (ids always explicit).
    pub fn to_doc(&self) -> HierarchyDoc {
        self.node_doc(self.root)
    }

    fn node_doc(&self, idx: NodeIdx) -> HierarchyDoc {
        let n = &self.nodes[idx.0];
        HierarchyDoc {
            id: Some(n.id.clone()),
            weight: n.weight,
            children: n.children.iter().map(|c| self.node_doc(*c)).collect(),
        }
    }
}

fn build_node(
    doc: &HierarchyDoc,
    parent: Option<NodeIdx>,
    path: &str,
    depth: usize,
    nodes: &mut Vec<Node>,
    by_id: &mut HashMap<String, NodeIdx>,
) -> Result<NodeIdx> {
    let id = match &doc.id {
        Some(id) => id.clone(),
        None if depth == 0 => "root".to_string(),
        None => path.to_string(),
    };
    if doc.weight <= 0.0 || !doc.weight.is_finite() {
        return Err(Error::NonPositiveWeight(id, doc.weight));
    }
    let idx = NodeIdx(nodes.len());
    if by_id.insert(id.clone(), idx).is_some() {
        return Err(Error::DuplicateNodeId(id));
    }
    nodes.push(Node {
        id,
        weight: doc.weight,
        kind: if doc.children.is_empty() {
            NodeKind::Leaf
        } else {
            NodeKind::Internal
        },
        parent,
        children: Vec::new(),
        depth,
    });
    for (k, child) in doc.children.iter().enumerate() {
        let child_path = if depth == 0 {
            format!("{}", k + 1)
        } else {
            format!("{}.{}", path, k + 1)
        };
        let c = build_node(child, Some(idx), &child_path, depth + 1, nodes, by_id)?;
        nodes[idx.0].children.push(c);
    }
    Ok(idx)
}

fn approx_eq(a: f64, b: f64) -> bool {
    (a - b).abs() <= WEIGHT_TOL * b.abs().max(1.0)
}

/// The example hierarchy used throughout: two tenants with weight 0.5 each,
/// one a plain flow (`f1`) and the other a group `f2` of two flows with
/// weight 0.25 each.
pub fn simple_two_level_doc() -> &'static str {
    r#"{"id":"root","weight":1.0,"children":[
        {"id":"f1","weight":0.5},
        {"id":"f2","weight":0.5,"children":[
            {"id":"f2.1","weight":0.25},
            {"id":"f2.2","weight":0.25}
        ]}
    ]}"#
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fig9_doc() -> &'static str {
        r#"{"id":"root","weight":1.0,"children":[
            {"id":"f1","weight":0.5,"children":[
                {"id":"f1.1","weight":0.2},
                {"id":"f1.2","weight":0.3}
            ]},
            {"id":"f2","weight":0.5,"children":[
                {"id":"f2.1","weight":0.2},
                {"id":"f2.2","weight":0.3}
            ]}
        ]}"#
    }

    #[test]
    fn parses_seven_node_tree() {
        let spec = parse_hierarchy(fig9_doc()).unwrap();
        assert_eq!(spec.len(), 7);
        let spec = spec.validate_and_normalize(ValidationMode::Strict).unwrap();
        assert_eq!(spec.leaves().len(), 4);
    }

    #[test]
    fn single_leaf_under_root() {
        let spec = parse_hierarchy(r#"{"weight":1.0,"children":[{"weight":1.0}]}"#).unwrap();
        assert_eq!(spec.len(), 2);
        let spec = spec.validate_and_normalize(ValidationMode::Strict).unwrap();
        assert_eq!(spec.id(spec.leaves()[0]), "1");
    }

    #[test]
    fn zero_weight_rejected() {
        let err = parse_hierarchy(r#"{"weight":1.0,"children":[{"weight":0.0}]}"#).unwrap_err();
        assert!(matches!(err, Error::NonPositiveWeight(_, _)));
    }

    #[test]
    fn duplicate_id_rejected() {
        let doc = r#"{"weight":1.0,"children":[{"id":"x","weight":0.5},{"id":"x","weight":0.5}]}"#;
        assert!(matches!(
            parse_hierarchy(doc).unwrap_err(),
            Error::DuplicateNodeId(_)
        ));
    }

    #[test]
    fn strict_rejects_weight_mismatch() {
        // siblings .3/.3 under parent .5
        let doc = r#"{"weight":1.0,"children":[
            {"id":"a","weight":0.5},
            {"id":"b","weight":0.5,"children":[{"weight":0.3},{"weight":0.3}]}
        ]}"#;
        let err = parse_hierarchy(doc)
            .unwrap()
            .validate_and_normalize(ValidationMode::Strict)
            .unwrap_err();
        assert!(matches!(err, Error::WeightSumMismatch { .. }));
    }

    #[test]
    fn renormalize_rescales_siblings() {
        // raw weights 2 and 2 under parent weight 1 -> 0.5 and 0.5
        let doc = r#"{"weight":1.0,"children":[{"id":"a","weight":2.0},{"id":"b","weight":2.0}]}"#;
        let spec = parse_hierarchy(doc)
            .unwrap()
            .validate_and_normalize(ValidationMode::Renormalize)
            .unwrap();
        let a = spec.lookup("a").unwrap();
        let b = spec.lookup("b").unwrap();
        assert!((spec.weight(a) - 0.5).abs() < 1e-12);
        assert!((spec.weight(b) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn fig9_weights_unchanged_by_renormalize() {
        let spec = parse_hierarchy(fig9_doc())
            .unwrap()
            .validate_and_normalize(ValidationMode::Renormalize)
            .unwrap();
        for (id, w) in [("f1", 0.5), ("f1.1", 0.2), ("f2.2", 0.3)] {
            let idx = spec.lookup(id).unwrap();
            assert!((spec.weight(idx) - w).abs() < 1e-12, "{id}");
        }
    }

    #[test]
    fn topology_queries_fig9() {
        let spec = parse_hierarchy(fig9_doc())
            .unwrap()
            .validate_and_normalize(ValidationMode::Strict)
            .unwrap();
        let f21 = spec.lookup("f2.1").unwrap();
        let f2 = spec.lookup("f2").unwrap();
        let f11 = spec.lookup("f1.1").unwrap();
        let f12 = spec.lookup("f1.2").unwrap();
        assert_eq!(spec.ancestor(f21, 1).unwrap(), f2);
        assert_eq!(spec.siblings(f11), vec![f12]);
        assert_eq!(spec.ancestor(spec.root(), 0).unwrap(), spec.root());
        assert!(spec.siblings(spec.root()).is_empty());
        assert_eq!(spec.leaves_under(f21), vec![f21]);
        // h beyond the depth errors
        assert!(spec.ancestor(f21, 3).is_err());
        assert!(spec.lookup("nope").is_err());
    }

    /// Independent breadth-first enumeration used as the oracle for
    /// `leaves_under` on a deeper tree.
    fn bfs_leaves(spec: &HierarchySpec, start: NodeIdx) -> Vec<NodeIdx> {
        let mut q = std::collections::VecDeque::from([start]);
        let mut out = Vec::new();
        while let Some(n) = q.pop_front() {
            if spec.is_leaf(n) {
                out.push(n);
            }
            for c in &spec.node(n).children {
                q.push_back(*c);
            }
        }
        out.sort();
        out
    }

    #[test]
    fn leaves_under_matches_bfs_oracle_on_four_level_tree() {
        let spec = crate::presets::fig6_hierarchy();
        for n in spec.depth_first() {
            let mut got = spec.leaves_under(n);
            got.sort();
            assert_eq!(got, bfs_leaves(&spec, n), "node {}", spec.id(n));
        }
        // an L2 group has exactly its leaf descendants
        let g = spec.lookup("4.4").unwrap();
        let ids: Vec<_> = spec.leaves_under(g).iter().map(|l| spec.id(*l)).collect();
        assert_eq!(
            ids,
            vec!["4.4.1", "4.4.2", "4.4.3.1", "4.4.3.2", "4.4.3.3"]
        );
    }

    #[test]
    fn ancestor_composition_and_sibling_sums() {
        let spec = crate::presets::fig6_hierarchy();
        for i in spec.depth_first() {
            for h in 1..=spec.depth(i) {
                let step = spec.ancestor(i, 1).unwrap();
                assert_eq!(
                    spec.ancestor(step, h - 1).unwrap(),
                    spec.ancestor(i, h).unwrap()
                );
            }
            if let Some(p) = spec.parent(i) {
                let sum: f64 = spec
                    .siblings(i)
                    .iter()
                    .chain(std::iter::once(&i))
                    .map(|n| spec.weight(*n))
                    .sum();
                assert!((sum - spec.weight(p)).abs() < 1e-9);
            }
        }
        let leaf_sum: f64 = spec.leaves().iter().map(|l| spec.weight(*l)).sum();
        assert!((leaf_sum - 1.0).abs() < 1e-9);
    }

    #[test]
    fn parse_serialize_parse_identity() {
        let spec = parse_hierarchy(fig9_doc())
            .unwrap()
            .validate_and_normalize(ValidationMode::Strict)
            .unwrap();
        let doc = serde_json::to_string(&spec.to_doc()).unwrap();
        let again = parse_hierarchy(&doc)
            .unwrap()
            .validate_and_normalize(ValidationMode::Strict)
            .unwrap();
        assert_eq!(spec.len(), again.len());
        for i in spec.depth_first() {
            assert_eq!(spec.id(i), again.id(i));
            assert!((spec.weight(i) - again.weight(i)).abs() < 1e-12);
            assert_eq!(spec.node(i).children, again.node(i).children);
        }
    }

    #[test]
    fn depth_cap_enforced() {
        let mut doc = String::from(r#"{"weight":1.0"#);
        let mut closers = String::new();
        for _ in 0..18 {
            doc.push_str(r#","children":[{"weight":1.0"#);
            closers.push_str("}]");
        }
        doc.push_str(&closers);
        doc.push('}');
        let err = parse_hierarchy(&doc)
            .unwrap()
            .validate_and_normalize(ValidationMode::Strict)
            .unwrap_err();
        assert!(matches!(err, Error::TooDeep { .. }));
    }
}
