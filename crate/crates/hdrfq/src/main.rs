//! Scenario-driven command line front end.
//!
//! `hdrfq run` executes a scenario file or one of the canned presets and
//! writes trace/share/delay files plus a manifest; `hdrfq check` runs the
//! seeded randomized property suite. Exit codes: 0 success, 1 validation or
//! usage error, 2 property-check failure.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use num::rational::Ratio;
use serde::Serialize;

use hdrfq::analysis::{detect_period, exact_period_shares};
use hdrfq::error::Error;
use hdrfq::hierarchy::{HierarchySpec, NodeIdx};
use hdrfq::presets::{self, PresetKind};
use hdrfq::report::{self, OutputFormat};
use hdrfq::scheduler::SchedulerKind;
use hdrfq::sim::{self, Scenario, SizeDist};
use hdrfq::trace::{delay_stats, windowed_shares, GroupBy};

#[derive(Parser)]
#[command(name = "hdrfq", version, about = "Hierarchical multi-resource fair queueing simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario file or a named preset.
    Run(RunArgs),
    /// Run the randomized property suite (bound dominance, share guarantees,
    /// strategy-proofness probes).
    Check(CheckArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Preset name: fig3-orders | fig1-naive-violation | fig5-dynamic |
    /// fig7-cdf | fig8-weight-sweep | fig10-levels | random-property-suite.
    #[arg(long, conflicts_with = "scenario")]
    preset: Option<String>,
    /// Path to a scenario JSON file.
    #[arg(long)]
    scenario: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Override the scenario/preset seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Restrict to one scheduler (presets) or override the scenario's.
    #[arg(long)]
    scheduler: Option<String>,
    /// Override the horizon in seconds.
    #[arg(long)]
    horizon: Option<f64>,
    /// Override the share window in seconds.
    #[arg(long)]
    window: Option<f64>,
    /// Report format for shares and delay stats.
    #[arg(long, default_value = "csv")]
    format: String,
}

#[derive(Args)]
struct CheckArgs {
    /// Number of random trees.
    #[arg(long, default_value_t = 100)]
    trees: usize,
    /// Number of paired strategy-proofness probes.
    #[arg(long, default_value_t = 50)]
    probes: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Scheduler under test for the share-guarantee checks (repeatable);
    /// defaults to both hierarchical schedulers.
    #[arg(long)]
    scheduler: Vec<String>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match cli.command {
        Command::Run(args) => run_command(&args),
        Command::Check(args) => check_command(&args),
    };
    match code {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

fn parse_scheduler(s: &str) -> Result<SchedulerKind, Error> {
    SchedulerKind::parse(s)
        .ok_or_else(|| Error::InvalidScenario(format!("unknown scheduler `{s}`")))
}

fn parse_format(s: &str) -> Result<OutputFormat, Error> {
    OutputFormat::parse(s).ok_or_else(|| Error::InvalidScenario(format!("unknown format `{s}`")))
}

fn run_command(args: &RunArgs) -> Result<ExitCode, Error> {
    let format = parse_format(&args.format)?;
    let scheduler = args.scheduler.as_deref().map(parse_scheduler).transpose()?;

    if let Some(path) = &args.scenario {
        let json = std::fs::read_to_string(path)?;
        let mut scenario = Scenario::from_json(&json)?;
        if let Some(seed) = args.seed {
            scenario.seed = seed;
        }
        if let Some(kind) = scheduler {
            scenario.scheduler = kind;
        }
        if let Some(h) = args.horizon {
            scenario.horizon_s = h;
            for f in &mut scenario.flows {
                f.stop_s = f.stop_s.min(h);
            }
        }
        if let Some(w) = args.window {
            scenario.share_window_s = w;
        }
        let spec = scenario.validated_spec()?;
        let out = sim::run(&scenario)?;
        report::write_run_outputs(&args.out, None, &scenario, &spec, &out, format)?;
        println!("wrote {}", args.out.display());
        return Ok(ExitCode::SUCCESS);
    }

    let preset_name = args
        .preset
        .as_deref()
        .ok_or_else(|| Error::InvalidScenario("pass --preset or --scenario".into()))?;
    let preset =
        PresetKind::parse(preset_name).ok_or_else(|| Error::UnknownPreset(preset_name.into()))?;
    run_preset(preset, args, format, scheduler)
}

fn restrict(defaults: &[SchedulerKind], chosen: Option<SchedulerKind>) -> Vec<SchedulerKind> {
    match chosen {
        Some(k) => vec![k],
        None => defaults.to_vec(),
    }
}

#[derive(Serialize)]
struct OrderSummary {
    scheduler: String,
    warmup: Vec<String>,
    period: Vec<String>,
    counts: BTreeMap<String, usize>,
}

#[derive(Serialize)]
struct ViolationSummary {
    scheduler: String,
    period: Vec<String>,
    f2_dominant_share: String,
    guaranteed_share: String,
    violated: bool,
}

fn run_preset(
    preset: PresetKind,
    args: &RunArgs,
    format: OutputFormat,
    scheduler: Option<SchedulerKind>,
) -> Result<ExitCode, Error> {
    let seed = args.seed.unwrap_or(42);
    let out_dir = &args.out;
    match preset {
        PresetKind::Fig3Orders => {
            let horizon = args.horizon.unwrap_or(0.002);
            let kinds = restrict(
                &[SchedulerKind::CollapsedHdrfq, SchedulerKind::DovetailingHdrfq],
                scheduler,
            );
            let mut summaries = Vec::new();
            for kind in kinds {
                let mut scenario = presets::simple_saturated_scenario(kind, horizon, seed);
                if let Some(w) = args.window {
                    scenario.share_window_s = w;
                }
                let spec = scenario.validated_spec()?;
                let out = sim::run(&scenario)?;
                let dir = out_dir.join(kind.name());
                report::write_run_outputs(&dir, Some(preset.name()), &scenario, &spec, &out, format)?;
                summaries.push(order_summary(&spec, kind, &out.trace.dispatch_sequence()));
            }
            report::write_json(&out_dir.join("summary.json"), &summaries)?;
            println!("wrote {}", out_dir.display());
            Ok(ExitCode::SUCCESS)
        }

        PresetKind::Fig1NaiveViolation => {
            let horizon = args.horizon.unwrap_or(0.002);
            let kinds = restrict(
                &[
                    SchedulerKind::NaiveCollapsed,
                    SchedulerKind::NaiveMemoryless,
                    SchedulerKind::CollapsedHdrfq,
                    SchedulerKind::DovetailingHdrfq,
                ],
                scheduler,
            );
            let mut any_violated = false;
            let mut summaries = Vec::new();
            for kind in kinds {
                let scenario = presets::simple_saturated_scenario(kind, horizon, seed);
                let spec = scenario.validated_spec()?;
                let out = sim::run(&scenario)?;
                let dir = out_dir.join(kind.name());
                report::write_run_outputs(&dir, Some(preset.name()), &scenario, &spec, &out, format)?;
                let summary = violation_summary(&spec, kind, &out.trace.dispatch_sequence())?;
                any_violated |= summary.violated;
                summaries.push(summary);
            }
            report::write_json(&out_dir.join("summary.json"), &summaries)?;
            println!("wrote {}", out_dir.display());
            Ok(if any_violated {
                ExitCode::from(2)
            } else {
                ExitCode::SUCCESS
            })
        }

        PresetKind::Fig5Dynamic => {
            let kinds = restrict(
                &[SchedulerKind::CollapsedHdrfq, SchedulerKind::DovetailingHdrfq],
                scheduler,
            );
            let mut summaries = Vec::new();
            for kind in kinds {
                let mut scenario = presets::fig5_scenario(kind, seed);
                if let Some(h) = args.horizon {
                    scenario.horizon_s = h;
                    for f in &mut scenario.flows {
                        f.stop_s = f.stop_s.min(h);
                    }
                }
                if let Some(w) = args.window {
                    scenario.share_window_s = w;
                }
                let spec = scenario.validated_spec()?;
                let out = sim::run(&scenario)?;
                let dir = out_dir.join(kind.name());
                report::write_run_outputs(&dir, Some(preset.name()), &scenario, &spec, &out, format)?;
                summaries.push(fig5_summary(kind, &scenario, &spec, &out));
            }
            report::write_json(&out_dir.join("summary.json"), &summaries)?;
            println!("wrote {}", out_dir.display());
            Ok(ExitCode::SUCCESS)
        }

        PresetKind::Fig7Cdf | PresetKind::Fig10Levels => {
            let kinds = restrict(
                &[
                    SchedulerKind::CollapsedHdrfq,
                    SchedulerKind::DovetailingHdrfq,
                    SchedulerKind::FlatDrfq,
                ],
                scheduler,
            );
            for kind in kinds {
                let opts = presets::Fig6Options {
                    scheduler: kind,
                    rate_pps: 5_000.0,
                    horizon_s: args.horizon.unwrap_or(2.0),
                    seed,
                    staggered_start_s: 0.1,
                    size_dist: SizeDist::Uniform { lo: 200, hi: 1400 },
                    poisson: true,
                    cpu_fraction: 0.2,
                };
                let mut scenario = presets::fig6_scenario(&opts);
                if let Some(w) = args.window {
                    scenario.share_window_s = w;
                }
                let spec = scenario.validated_spec()?;
                let out = sim::run(&scenario)?;
                let dir = out_dir.join(kind.name());
                report::write_run_outputs(&dir, Some(preset.name()), &scenario, &spec, &out, format)?;
                // plot-ready extras
                let fine: Vec<f64> = (1..=50).map(|k| k as f64 / 50.0).collect();
                let cdf = delay_stats(&out.trace, &spec, GroupBy::All, &fine);
                report::write_atomic(&dir.join("cdf.csv"), &report::delay_stats_csv(&cdf))?;
                let levels = delay_stats(
                    &out.trace,
                    &spec,
                    GroupBy::Level,
                    &hdrfq::trace::DEFAULT_QUANTILES,
                );
                report::write_atomic(&dir.join("levels.csv"), &report::delay_stats_csv(&levels))?;
            }
            println!("wrote {}", out_dir.display());
            Ok(ExitCode::SUCCESS)
        }

        PresetKind::Fig8WeightSweep => {
            let kinds = restrict(
                &[SchedulerKind::CollapsedHdrfq, SchedulerKind::DovetailingHdrfq],
                scheduler,
            );
            let mut csv = String::from(
                "level,factor,leaf,weight,scheduler,mean_start_delay_us,collapsed_bound_us,dovetail_bound_us\n",
            );
            for level in 1..=4usize {
                for factor in [1.0, 2.0, 4.0, 8.0] {
                    let (spec, target_id) = presets::fig8_variant(level, factor);
                    let target = spec.lookup(&target_id)?;
                    let profiles = presets::fig6_leaf_profiles(&spec);
                    let bounds =
                        hdrfq::analysis::dovetail_delay_bound(&spec, &profiles, target)?;
                    for kind in &kinds {
                        let scenario = fig8_scenario(&spec, *kind, args.horizon.unwrap_or(0.3), seed);
                        let out = sim::run(&scenario)?;
                        let delays: Vec<f64> = out
                            .trace
                            .records
                            .iter()
                            .filter(|r| r.leaf == target)
                            .map(|r| r.start_delay() as f64 / 1e3)
                            .collect();
                        let mean = if delays.is_empty() {
                            f64::NAN
                        } else {
                            delays.iter().sum::<f64>() / delays.len() as f64
                        };
                        csv.push_str(&format!(
                            "{},{},{},{:.6},{},{:.3},{:.3},{:.3}\n",
                            level,
                            factor,
                            target_id,
                            spec.weight(target),
                            kind.name(),
                            mean,
                            bounds.collapsed_bound_us,
                            bounds.dovetail_bound_us,
                        ));
                    }
                }
            }
            std::fs::create_dir_all(out_dir)?;
            report::write_atomic(&out_dir.join("weight_sweep.csv"), &csv)?;
            println!("wrote {}", out_dir.display());
            Ok(ExitCode::SUCCESS)
        }

        PresetKind::RandomPropertySuite => {
            let kinds = restrict(
                &[SchedulerKind::CollapsedHdrfq, SchedulerKind::DovetailingHdrfq],
                scheduler,
            );
            let report_data = presets::property_suite(100, 50, seed, &kinds);
            std::fs::create_dir_all(out_dir)?;
            report::write_json(&out_dir.join("property_report.json"), &report_data)?;
            println!(
                "{}: {} bound comparisons, {} share checks, {} probes",
                if report_data.pass { "pass" } else { "FAIL" },
                report_data.bound_comparisons,
                report_data.share_checks,
                report_data.probe_checks
            );
            Ok(if report_data.pass {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(2)
            })
        }
    }
}

fn fig8_scenario(spec: &HierarchySpec, kind: SchedulerKind, horizon_s: f64, seed: u64) -> Scenario {
    let flows = spec
        .leaves()
        .into_iter()
        .enumerate()
        .map(|(i, leaf)| sim::FlowSource {
            leaf: spec.id(leaf).to_string(),
            start_s: 0.0,
            stop_s: horizon_s,
            arrival: sim::ArrivalPattern::Constant { rate_pps: 3000.0 },
            size_dist: SizeDist::Fixed { bytes: 1000 },
            module: presets::fig6_module(i),
            demand_scale: None,
        })
        .collect();
    Scenario {
        hierarchy: spec.to_doc(),
        flows,
        resources: presets::middlebox_resources(1.0),
        scheduler: kind,
        horizon_s,
        seed,
        share_window_s: horizon_s / 4.0,
        dovetail_idle_memory: hdrfq::drfq::IdleMemory::Clamp,
    }
}

fn order_summary(spec: &HierarchySpec, kind: SchedulerKind, seq: &[NodeIdx]) -> OrderSummary {
    let names: Vec<String> = seq.iter().map(|n| spec.id(*n).to_string()).collect();
    let (warmup, period) = match detect_period(&names) {
        Some((w, p)) => (w, p),
        None => (names.len(), 0),
    };
    let mut counts = BTreeMap::new();
    for name in &names[warmup..] {
        *counts.entry(name.clone()).or_default() += 1;
    }
    OrderSummary {
        scheduler: kind.name().into(),
        warmup: names[..warmup.min(names.len())].to_vec(),
        period: names[warmup..(warmup + period).min(names.len())].to_vec(),
        counts,
    }
}

fn violation_summary(
    spec: &HierarchySpec,
    kind: SchedulerKind,
    seq: &[NodeIdx],
) -> Result<ViolationSummary, Error> {
    let (warmup, period_len) =
        detect_period(seq).ok_or_else(|| Error::InvalidScenario("no periodic tail".into()))?;
    let period = &seq[warmup..warmup + period_len];
    let profiles_us: BTreeMap<NodeIdx, Vec<i64>> = presets::simple_leaf_demands()
        .into_iter()
        .map(|(id, d)| {
            (
                spec.lookup(id).unwrap(),
                d.iter().map(|x| *x as i64).collect(),
            )
        })
        .collect();
    let shares = exact_period_shares(spec, period, &profiles_us);
    let f2 = spec.lookup("f2")?;
    let share = shares[&f2];
    let guaranteed = Ratio::new(1, 2);
    Ok(ViolationSummary {
        scheduler: kind.name().into(),
        period: period.iter().map(|n| spec.id(*n).to_string()).collect(),
        f2_dominant_share: format!("{}/{}", share.numer(), share.denom()),
        guaranteed_share: "1/2".into(),
        violated: share < guaranteed,
    })
}

#[derive(Serialize)]
struct Fig5Summary {
    scheduler: String,
    f1_alone_bandwidth_share: f64,
    f21_dominant_share: f64,
    f22_dominant_share: f64,
    f22_bandwidth_of_total: f64,
    f2_cpu_of_scheduler: f64,
    f22_cpu_of_scheduler: f64,
}

fn fig5_summary(
    kind: SchedulerKind,
    scenario: &Scenario,
    spec: &HierarchySpec,
    out: &sim::SimOutput,
) -> Fig5Summary {
    let window_ns = sim::sec_to_ns(scenario.share_window_s);
    let shares = windowed_shares(&out.trace, spec, window_ns);
    let avg = |node: &str, resource: Option<&str>, t1_s: f64, t2_s: f64, field: &str| -> f64 {
        let (t1, t2) = (sim::sec_to_ns(t1_s), sim::sec_to_ns(t2_s));
        let rows: Vec<f64> = shares
            .iter()
            .filter(|s| s.node == node && s.t1_ns >= t1 && s.t2_ns <= t2)
            .map(|s| match resource {
                None => s.dominant,
                Some(r) => {
                    let rs = s
                        .per_resource
                        .iter()
                        .find(|x| x.resource == r)
                        .expect("resource name");
                    match field {
                        "occupancy" => rs.occupancy,
                        "machine" => rs.machine,
                        _ => rs.delivered,
                    }
                }
            })
            .collect();
        rows.iter().sum::<f64>() / rows.len().max(1) as f64
    };
    Fig5Summary {
        scheduler: kind.name().into(),
        f1_alone_bandwidth_share: avg("f1", Some("bandwidth"), 2.0, 4.0, "occupancy"),
        f21_dominant_share: avg("f2.1", None, 12.0, 16.0, ""),
        f22_dominant_share: avg("f2.2", None, 12.0, 16.0, ""),
        f22_bandwidth_of_total: avg("f2.2", Some("bandwidth"), 12.0, 16.0, "delivered"),
        f2_cpu_of_scheduler: avg("f2", Some("cpu"), 12.0, 16.0, "delivered"),
        f22_cpu_of_scheduler: avg("f2.2", Some("cpu"), 12.0, 16.0, "delivered"),
    }
}

fn check_command(args: &CheckArgs) -> Result<ExitCode, Error> {
    let kinds = if args.scheduler.is_empty() {
        vec![SchedulerKind::CollapsedHdrfq, SchedulerKind::DovetailingHdrfq]
    } else {
        args.scheduler
            .iter()
            .map(|s| parse_scheduler(s))
            .collect::<Result<_, _>>()?
    };
    let report_data = presets::property_suite(args.trees, args.probes, args.seed, &kinds);
    std::fs::create_dir_all(&args.out)?;
    report::write_json(&args.out.join("property_report.json"), &report_data)?;
    for v in &report_data.violations {
        eprintln!("violation [{}]: {}", v.check, v.detail);
    }
    println!(
        "{}: {} bound comparisons, {} share checks, {} probes, {} violations",
        if report_data.pass { "pass" } else { "FAIL" },
        report_data.bound_comparisons,
        report_data.share_checks,
        report_data.probe_checks,
        report_data.violations.len()
    );
    Ok(if report_data.pass {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(2)
    })
}
