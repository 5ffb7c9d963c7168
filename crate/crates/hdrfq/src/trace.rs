//! Per-packet traces and the measurements taken over them.
//!
//! A trace records, for every dispatched packet: arrival, dispatch epoch and
//! per-resource start/finish timestamps, all in integer nanoseconds. Shares
//! come in three normalizations. For resource `r` with capacity fraction `c`:
//!
//! * occupancy: busy time on the (possibly throttled) stage per window;
//! * machine: measured work delivered per window, i.e. occupancy times `c` —
//!   a module holding 20% of a CPU at full tilt scores 0.2 here;
//! * delivered: the node's slice of all work the resource delivered in the
//!   window.
//!
//! A node's dominant share is its largest machine-normalized share, which for
//! a leaf is exactly its dominant-resource service per unit time.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::hierarchy::{HierarchySpec, NodeIdx};

pub type Nanos = i64;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PacketRecord {
    pub leaf: NodeIdx,
    /// Sequence number of the packet within its leaf.
    pub k: u64,
    pub arrival: Nanos,
    pub dispatch: Nanos,
    pub starts: Vec<Nanos>,
    pub finishes: Vec<Nanos>,
}

impl PacketRecord {
    pub fn start_delay(&self) -> Nanos {
        self.dispatch - self.arrival
    }

    pub fn completion(&self) -> Nanos {
        *self.finishes.last().expect("at least one resource")
    }
}

#[derive(Debug, Clone)]
pub struct Trace {
    pub resource_names: Vec<String>,
    pub capacity_fractions: Vec<f64>,
    /// Node ids indexed by `NodeIdx`, covering the whole hierarchy.
    pub leaf_ids: Vec<String>,
    /// Sorted by dispatch epoch.
    pub records: Vec<PacketRecord>,
    pub horizon_ns: Nanos,
}

impl Trace {
    pub fn resources(&self) -> usize {
        self.resource_names.len()
    }

    /// Dispatch order as leaf indices.
    pub fn dispatch_sequence(&self) -> Vec<NodeIdx> {
        self.records.iter().map(|r| r.leaf).collect()
    }

    /// CSV with one row per packet:
    /// `leaf,seq,arrival_ns,dispatch_ns,start_r1_ns,finish_r1_ns,...,start_delay_ns,completion_ns`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("leaf,seq,arrival_ns,dispatch_ns");
        for r in 1..=self.resources() {
            out.push_str(&format!(",start_r{r}_ns,finish_r{r}_ns"));
        }
        out.push_str(",start_delay_ns,completion_ns\n");
        for rec in &self.records {
            out.push_str(&format!(
                "{},{},{},{}",
                self.leaf_ids[rec.leaf.0], rec.k, rec.arrival, rec.dispatch
            ));
            for r in 0..self.resources() {
                out.push_str(&format!(",{},{}", rec.starts[r], rec.finishes[r]));
            }
            out.push_str(&format!(",{},{}\n", rec.start_delay(), rec.completion()));
        }
        out
    }

    /// Packets of `leaf` that arrived while the leaf was idle (no earlier
    /// packet still queued). The first packet always qualifies.
    pub fn idle_arrivals(&self, leaf: NodeIdx) -> Vec<&PacketRecord> {
        let mut by_k: Vec<&PacketRecord> =
            self.records.iter().filter(|r| r.leaf == leaf).collect();
        by_k.sort_by_key(|r| r.k);
        let mut out = Vec::new();
        for (i, rec) in by_k.iter().enumerate() {
            if i == 0 || by_k[i - 1].dispatch < rec.arrival {
                out.push(*rec);
            }
        }
        out
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ResourceShare {
    pub resource: String,
    /// Busy fraction of the stage during the window.
    pub occupancy: f64,
    /// Work delivered relative to the full machine (occupancy x fraction).
    pub machine: f64,
    /// Slice of the work this resource delivered within the window.
    pub delivered: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct WindowShares {
    pub t1_ns: Nanos,
    pub t2_ns: Nanos,
    pub node: String,
    pub per_resource: Vec<ResourceShare>,
    /// Largest machine-normalized share across resources.
    pub dominant: f64,
}

/// Per-window, per-node resource shares. Busy time on a resource is
/// attributed to the leaf that owns the packet and aggregated over
/// `leaves_under` for internal nodes. Windows tile `[0, horizon)`.
pub fn windowed_shares(trace: &Trace, spec: &HierarchySpec, window_ns: Nanos) -> Vec<WindowShares> {
    assert!(window_ns > 0, "window must be positive");
    let m = trace.resources();
    let n_windows = ((trace.horizon_ns + window_ns - 1) / window_ns).max(0) as usize;
    let n_nodes = spec.len();
    // busy[w][leaf][r] in ns
    let mut busy = vec![vec![vec![0i64; m]; n_nodes]; n_windows];
    let mut total = vec![vec![0i64; m]; n_windows];
    for rec in &trace.records {
        for r in 0..m {
            let (mut s, f) = (rec.starts[r], rec.finishes[r]);
            while s < f {
                let w = (s / window_ns) as usize;
                if w >= n_windows {
                    break;
                }
                let w_end = (w as i64 + 1) * window_ns;
                let chunk = f.min(w_end) - s;
                busy[w][rec.leaf.0][r] += chunk;
                total[w][r] += chunk;
                s += chunk;
            }
        }
    }

    let mut out = Vec::new();
    for w in 0..n_windows {
        let t1 = w as i64 * window_ns;
        let t2 = ((w as i64 + 1) * window_ns).min(trace.horizon_ns);
        let span = (t2 - t1) as f64;
        if span <= 0.0 {
            continue;
        }
        for node in spec.depth_first() {
            let mut per_resource = Vec::with_capacity(m);
            let mut dominant: f64 = 0.0;
            for r in 0..m {
                let occ_ns: i64 = spec
                    .leaves_under(node)
                    .iter()
                    .map(|l| busy[w][l.0][r])
                    .sum();
                let occupancy = occ_ns as f64 / span;
                let machine = occupancy * trace.capacity_fractions[r];
                let delivered = if total[w][r] > 0 {
                    occ_ns as f64 / total[w][r] as f64
                } else {
                    0.0
                };
                dominant = dominant.max(machine);
                per_resource.push(ResourceShare {
                    resource: trace.resource_names[r].clone(),
                    occupancy,
                    machine,
                    delivered,
                });
            }
            out.push(WindowShares {
                t1_ns: t1,
                t2_ns: t2,
                node: spec.id(node).to_string(),
                per_resource,
                dominant,
            });
        }
    }
    out
}

/// Accumulated busy nanoseconds per node and resource over `[t1, t2)`,
/// measured as delivered work (occupancy times capacity fraction).
pub fn busy_in_window(
    trace: &Trace,
    spec: &HierarchySpec,
    node: NodeIdx,
    t1: Nanos,
    t2: Nanos,
) -> Vec<f64> {
    let m = trace.resources();
    let leaves: std::collections::BTreeSet<NodeIdx> =
        spec.leaves_under(node).into_iter().collect();
    let mut busy = vec![0.0; m];
    for rec in &trace.records {
        if !leaves.contains(&rec.leaf) {
            continue;
        }
        for r in 0..m {
            let s = rec.starts[r].max(t1);
            let f = rec.finishes[r].min(t2);
            if f > s {
                busy[r] += (f - s) as f64 * trace.capacity_fractions[r];
            }
        }
    }
    busy
}

/// Dominant service of a node in a window: the largest per-resource delivered
/// work, in nanoseconds of measured processing time.
pub fn dominant_service(
    trace: &Trace,
    spec: &HierarchySpec,
    node: NodeIdx,
    t1: Nanos,
    t2: Nanos,
) -> f64 {
    busy_in_window(trace, spec, node, t1, t2)
        .into_iter()
        .fold(0.0, f64::max)
}

/// True when the subtree under `node` holds at least one queued packet at
/// every instant of `[t1, t2)`.
pub fn backlogged_throughout(
    trace: &Trace,
    spec: &HierarchySpec,
    node: NodeIdx,
    t1: Nanos,
    t2: Nanos,
) -> bool {
    let leaves: std::collections::BTreeSet<NodeIdx> =
        spec.leaves_under(node).into_iter().collect();
    // +1 at arrival, -1 at dispatch; a packet is queued over [arrival, dispatch)
    let mut deltas: Vec<(Nanos, i64)> = Vec::new();
    for rec in trace.records.iter().filter(|r| leaves.contains(&r.leaf)) {
        deltas.push((rec.arrival, 1));
        deltas.push((rec.dispatch, -1));
    }
    if deltas.is_empty() {
        return false;
    }
    deltas.sort();
    let mut backlog = 0i64;
    let mut prev = Nanos::MIN;
    for (t, d) in deltas {
        if prev < t && backlog <= 0 && t > t1 && prev < t2 {
            // a zero-backlog gap [prev, t) intersects the window
            if prev.max(t1) < t.min(t2) {
                return false;
            }
        }
        backlog += d;
        prev = t;
    }
    // after the last event the backlog is whatever remains undispatched,
    // which this trace cannot see; require the window to end by then
    backlog > 0 || prev >= t2
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum GroupBy {
    Level,
    Leaf,
    Weight,
    All,
}

#[derive(Debug, Clone, Serialize)]
pub struct DelayStats {
    pub group: String,
    pub count: usize,
    pub mean_us: f64,
    pub max_us: f64,
    /// (quantile, start delay in us) pairs, nearest-rank.
    pub cdf: Vec<(f64, f64)>,
}

pub const DEFAULT_QUANTILES: [f64; 7] = [0.10, 0.25, 0.50, 0.80, 0.90, 0.99, 1.0];

/// Start-delay summaries grouped by leaf level (distance from root), leaf id
/// or leaf weight.
pub fn delay_stats(
    trace: &Trace,
    spec: &HierarchySpec,
    group_by: GroupBy,
    quantiles: &[f64],
) -> Vec<DelayStats> {
    let mut groups: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for rec in &trace.records {
        let key = match group_by {
            GroupBy::Level => format!("L{}", spec.depth(rec.leaf)),
            GroupBy::Leaf => spec.id(rec.leaf).to_string(),
            GroupBy::Weight => format!("{:.6}", spec.weight(rec.leaf)),
            GroupBy::All => "all".to_string(),
        };
        groups
            .entry(key)
            .or_default()
            .push(rec.start_delay() as f64 / 1e3);
    }
    groups
        .into_iter()
        .map(|(group, mut delays)| {
            delays.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let count = delays.len();
            let mean_us = delays.iter().sum::<f64>() / count as f64;
            let max_us = *delays.last().unwrap();
            let cdf = quantiles
                .iter()
                .map(|q| {
                    let rank = ((q * count as f64).ceil() as usize).clamp(1, count) - 1;
                    (*q, delays[rank])
                })
                .collect();
            DelayStats {
                group,
                count,
                mean_us,
                max_us,
                cdf,
            }
        })
        .collect()
}
