//! Output files for simulation runs: trace CSV, shares CSV, delay-stats CSV,
//! bounds JSON and a run manifest. Files are written atomically (temp file
//! plus rename) and contain no timestamps, so a rerun from the manifest
//! reproduces every byte.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::analysis::{dovetail_delay_bound, BoundReport};
use crate::error::Result;
use crate::hierarchy::{HierarchySpec, NodeIdx};
use crate::profile::PacketProfile;
use crate::sim::{cost_profile_unscaled, Scenario, SimOutput};
use crate::trace::{
    delay_stats, windowed_shares, DelayStats, GroupBy, WindowShares, DEFAULT_QUANTILES,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputFormat {
    Csv,
    Json,
}

impl OutputFormat {
    pub fn parse(s: &str) -> Option<OutputFormat> {
        match s {
            "csv" => Some(OutputFormat::Csv),
            "json" => Some(OutputFormat::Json),
            _ => None,
        }
    }
}

pub fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, contents)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut body = serde_json::to_string_pretty(value)?;
    body.push('\n');
    write_atomic(path, &body)
}

pub fn shares_csv(shares: &[WindowShares]) -> String {
    let mut out = String::from(
        "window_t1_ns,window_t2_ns,node,resource,occupancy_share,machine_share,delivered_share\n",
    );
    for row in shares {
        for r in &row.per_resource {
            out.push_str(&format!(
                "{},{},{},{},{:.9},{:.9},{:.9}\n",
                row.t1_ns, row.t2_ns, row.node, r.resource, r.occupancy, r.machine, r.delivered
            ));
        }
        out.push_str(&format!(
            "{},{},{},dominant,{:.9},{:.9},\n",
            row.t1_ns, row.t2_ns, row.node, row.dominant, row.dominant
        ));
    }
    out
}

pub fn delay_stats_csv(stats: &[DelayStats]) -> String {
    let quantile_header: String = stats
        .first()
        .map(|s| {
            s.cdf
                .iter()
                .map(|(q, _)| format!(",p{:02.0}_us", q * 100.0))
                .collect()
        })
        .unwrap_or_default();
    let mut out = format!("group,count,mean_us,max_us{quantile_header}\n");
    for s in stats {
        out.push_str(&format!(
            "{},{},{:.6},{:.6}",
            s.group, s.count, s.mean_us, s.max_us
        ));
        for (_, v) in &s.cdf {
            out.push_str(&format!(",{v:.6}"));
        }
        out.push('\n');
    }
    out
}

/// Worst-case per-leaf profiles implied by a scenario's flows (largest packet
/// size per source, measured processing times). `None` when some leaf has no
/// flow, in which case the delay bounds are not defined for the scenario.
pub fn scenario_bound_profiles(
    scenario: &Scenario,
    spec: &HierarchySpec,
) -> Option<BTreeMap<NodeIdx, PacketProfile>> {
    let mut out: BTreeMap<NodeIdx, PacketProfile> = BTreeMap::new();
    for flow in &scenario.flows {
        let leaf = spec.lookup(&flow.leaf).ok()?;
        let max_size = match flow.size_dist {
            crate::sim::SizeDist::Fixed { bytes } => bytes,
            crate::sim::SizeDist::Uniform { hi, .. } => hi,
        };
        let mut profile = cost_profile_unscaled(&flow.module, max_size, &scenario.resources).ok()?;
        if let Some(scale) = &flow.demand_scale {
            profile = profile.scaled(scale).ok()?;
        }
        out.entry(leaf)
            .and_modify(|prev| {
                let merged: Vec<f64> = prev
                    .demand()
                    .iter()
                    .zip(profile.demand())
                    .map(|(a, b)| a.max(*b))
                    .collect();
                *prev = PacketProfile::new(merged).expect("positive profiles");
            })
            .or_insert(profile);
    }
    for leaf in spec.leaves() {
        if !out.contains_key(&leaf) {
            return None;
        }
    }
    Some(out)
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub preset: Option<String>,
    pub scenario: Scenario,
    pub outputs: Vec<String>,
}

/// Standard output bundle of one run: trace.csv, shares.csv,
/// delay_stats.csv, bounds.json (when defined) and manifest.json.
/// Returns the paths written.
pub fn write_run_outputs(
    dir: &Path,
    preset: Option<&str>,
    scenario: &Scenario,
    spec: &HierarchySpec,
    out: &SimOutput,
    format: OutputFormat,
) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();

    let trace_path = dir.join("trace.csv");
    write_atomic(&trace_path, &out.trace.to_csv())?;
    written.push(trace_path);

    let window_ns = crate::sim::sec_to_ns(scenario.share_window_s);
    let shares = windowed_shares(&out.trace, spec, window_ns);
    let stats = delay_stats(&out.trace, spec, GroupBy::Level, &DEFAULT_QUANTILES);
    match format {
        OutputFormat::Csv => {
            let p = dir.join("shares.csv");
            write_atomic(&p, &shares_csv(&shares))?;
            written.push(p);
            let p = dir.join("delay_stats.csv");
            write_atomic(&p, &delay_stats_csv(&stats))?;
            written.push(p);
        }
        OutputFormat::Json => {
            let p = dir.join("shares.json");
            write_json(&p, &shares)?;
            written.push(p);
            let p = dir.join("delay_stats.json");
            write_json(&p, &stats)?;
            written.push(p);
        }
    }

    if let Some(profiles) = scenario_bound_profiles(scenario, spec) {
        if profiles
            .values()
            .all(|p| p.demand().iter().all(|d| *d > 0.0))
        {
            let bounds: Vec<BoundReport> = spec
                .leaves()
                .into_iter()
                .map(|leaf| dovetail_delay_bound(spec, &profiles, leaf))
                .collect::<Result<_>>()?;
            let p = dir.join("bounds.json");
            write_json(&p, &bounds)?;
            written.push(p);
        }
    }

    let manifest = RunManifest {
        tool: "hdrfq",
        version: env!("CARGO_PKG_VERSION"),
        preset: preset.map(str::to_string),
        scenario: scenario.clone(),
        outputs: written
            .iter()
            .map(|p| p.file_name().unwrap().to_string_lossy().into_owned())
            .collect(),
    };
    let p = dir.join("manifest.json");
    write_json(&p, &manifest)?;
    written.push(p);
    Ok(written)
}
