//! Open-loop benchmark driver.

use std::collections::HashMap;
use std::sync::Arc;
use std::time::{Duration, Instant};

use log::{info, warn};
use serde::{Deserialize, Serialize};

use super::load::{generate_load, tier_request, LoadSpec, ScheduledRequest};
use crate::error::{Error, Result};
use crate::serving::{
    now_ns, serve_request, ComputeProfile, DeployOptions, Deployment, Engine, ServingModel, Span, Topology,
};
use crate::transport::{ResponseMsg, ResponseStatus};
use crate::vico::nearest_rank;

/// Fraction trimmed from each end of the run before measuring throughput.
pub const TRIM: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub topology: Topology,
    pub tier: u32,
    /// Completed requests per second over the steady-state window.
    pub request_throughput: f64,
    /// Throughput over the monolith row's; `None` for the baseline itself or
    /// when no valid baseline exists.
    pub speedup_vs_baseline: Option<f64>,
    pub p50_latency_ms: f64,
    pub p99_latency_ms: f64,
    pub failure_count: usize,
    pub generated: usize,
    pub completed: usize,
    /// Submitted but unanswered when the run ended.
    pub inflight: usize,
    /// Set when the topology could not be run; the numbers are then zero.
    pub error: Option<String>,
}

impl BenchReport {
    fn invalid(topology: Topology, tier: u32, generated: usize, error: String) -> Self {
        Self {
            topology,
            tier,
            request_throughput: 0.0,
            speedup_vs_baseline: None,
            p50_latency_ms: 0.0,
            p99_latency_ms: 0.0,
            failure_count: 0,
            generated,
            completed: 0,
            inflight: 0,
            error: Some(error),
        }
    }

    pub fn is_valid(&self) -> bool {
        self.error.is_none()
    }
}

/// One topology's report and the span trace of its run.
#[derive(Debug, Clone)]
pub struct BenchRun {
    pub report: BenchReport,
    pub spans: Vec<Span>,
}

fn percentile_ms(latencies_ns: &[f64], p: f64) -> f64 {
    nearest_rank(latencies_ns, p).map(|v| v / 1e6).unwrap_or(0.0)
}

/// Drives `load` against a fresh deployment of `topology` until the spec's
/// duration has elapsed, then stops the servers.
pub fn run_topology(
    spec: &LoadSpec,
    load: &[ScheduledRequest],
    topology: Topology,
    model: Arc<ServingModel>,
    options: &DeployOptions,
) -> Result<BenchRun> {
    let deployment = Deployment::start(topology, model, options)?;
    let mut client = deployment.client()?;
    let mut got: HashMap<u64, ResponseMsg> = HashMap::new();
    let mut take = |r: ResponseMsg| {
        got.entry(r.request_id).or_insert(r);
    };
    let start = Instant::now();
    let start_ns = now_ns();
    let end = start + spec.duration;
    for s in load {
        let due = start + s.offset;
        loop {
            let now = Instant::now();
            if now >= due {
                break;
            }
            if let Some(r) = client.recv_timeout(due - now) {
                take(r);
            }
        }
        let mut request = s.request.clone();
        request.arrival_ns = now_ns();
        client.submit(&request).map_err(|e| Error::Io(e.to_string()))?;
    }
    loop {
        let now = Instant::now();
        if now >= end {
            break;
        }
        if let Some(r) = client.recv_timeout(end - now) {
            take(r);
        }
    }
    // Submits can stall past the end under overload; responses that queued
    // up meanwhile are judged by their server-side completion time.
    let cutoff_ns = now_ns();
    while let Some(r) = client.try_recv() {
        take(r);
    }
    drop(client);
    let trace = deployment.trace().clone();
    deployment.shutdown();

    let completed: Vec<&ResponseMsg> = got
        .values()
        .filter(|r| r.status == ResponseStatus::Ok && r.timings.decode_done_ns.is_some_and(|d| d <= cutoff_ns))
        .collect();
    let failed = got.values().filter(|r| r.status != ResponseStatus::Ok).count();
    let duration_ns = spec.duration.as_nanos() as f64;
    let (lo, hi) = (
        start_ns as f64 + TRIM * duration_ns,
        start_ns as f64 + (1.0 - TRIM) * duration_ns,
    );
    let in_window = completed
        .iter()
        .filter_map(|r| r.timings.decode_done_ns)
        .filter(|&t| (lo..=hi).contains(&(t as f64)))
        .count();
    let window_s = (1.0 - 2.0 * TRIM) * spec.duration.as_secs_f64();
    let throughput = if window_s > 0.0 { in_window as f64 / window_s } else { 0.0 };
    let latencies: Vec<f64> = completed
        .iter()
        .filter_map(|r| r.timings.decode_done_ns.map(|d| d.saturating_sub(r.timings.arrival_ns) as f64))
        .collect();
    let report = BenchReport {
        topology,
        tier: spec.tier,
        request_throughput: throughput,
        speedup_vs_baseline: None,
        p50_latency_ms: percentile_ms(&latencies, 50.0),
        p99_latency_ms: percentile_ms(&latencies, 99.0),
        failure_count: failed,
        generated: load.len(),
        completed: completed.len(),
        inflight: load.len() - completed.len() - failed,
        error: None,
    };
    info!(
        "{topology} tier {}: {:.2} req/s, {} of {} completed",
        spec.tier,
        throughput,
        completed.len(),
        load.len()
    );
    Ok(BenchRun {
        report,
        spans: trace.spans(),
    })
}

/// Fills `speedup_vs_baseline` against the valid monolith row of the same tier.
pub fn apply_speedups(reports: &mut [BenchReport]) {
    let baselines: HashMap<u32, f64> = reports
        .iter()
        .filter(|r| r.topology == Topology::Monolith && r.is_valid())
        .map(|r| (r.tier, r.request_throughput))
        .collect();
    for r in reports.iter_mut() {
        r.speedup_vs_baseline = match baselines.get(&r.tier) {
            Some(&b) if r.topology != Topology::Monolith && r.is_valid() && b > 0.0 => Some(r.request_throughput / b),
            _ => None,
        };
    }
}

/// Runs every topology against the same seeded load. A topology that fails
/// to start yields an invalid report; the others still run.
pub fn run_benchmark(
    spec: &LoadSpec,
    topologies: &[(Topology, DeployOptions)],
    model: Arc<ServingModel>,
) -> Result<Vec<BenchRun>> {
    let load = generate_load(spec)?;
    let mut runs: Vec<BenchRun> = topologies
        .iter()
        .map(|(t, options)| {
            run_topology(spec, &load, *t, model.clone(), options).unwrap_or_else(|e| {
                warn!("{t}: {e}");
                BenchRun {
                    report: BenchReport::invalid(*t, spec.tier, load.len(), e.to_string()),
                    spans: Vec::new(),
                }
            })
        })
        .collect();
    let mut reports: Vec<BenchReport> = runs.iter().map(|r| r.report.clone()).collect();
    apply_speedups(&mut reports);
    for (run, report) in runs.iter_mut().zip(reports) {
        run.report = report;
    }
    Ok(runs)
}

/// Requests per second one monolith executor sustains at `tier`, from
/// `samples` back-to-back requests served in process.
pub fn monolith_capacity(model: Arc<ServingModel>, profile: ComputeProfile, tier: u32, samples: usize) -> Result<f64> {
    let spec = LoadSpec::new(1.0, Duration::ZERO, tier, 0);
    let engine = Engine::new(model, profile);
    let requests = (0..samples.max(1) as u64)
        .map(|id| tier_request(&spec, id))
        .collect::<Result<Vec<_>>>()?;
    let start = Instant::now();
    for r in &requests {
        let resp = serve_request(&engine, r);
        if resp.status != ResponseStatus::Ok {
            return Err(Error::InvalidInput(format!("calibration request failed: {}", resp.error)));
        }
    }
    Ok(requests.len() as f64 / start.elapsed().as_secs_f64())
}

/// Default offered load: twice the measured monolith capacity.
pub fn calibrated_rate(model: Arc<ServingModel>, profile: ComputeProfile, tier: u32) -> Result<f64> {
    Ok(2.0 * monolith_capacity(model, profile, tier, 3)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report(t: Topology, tier: u32, thr: f64) -> BenchReport {
        BenchReport {
            request_throughput: thr,
            ..BenchReport::invalid(t, tier, 0, String::new())
        }
    }

    #[test]
    fn speedups_use_matching_tier() {
        let mut rs = vec![
            BenchReport {
                error: None,
                ..report(Topology::Monolith, 448, 2.0)
            },
            BenchReport {
                error: None,
                ..report(Topology::Dvd, 448, 3.0)
            },
            BenchReport {
                error: None,
                ..report(Topology::Dvd, 896, 3.0)
            },
        ];
        apply_speedups(&mut rs);
        assert_eq!(rs[0].speedup_vs_baseline, None);
        assert_eq!(rs[1].speedup_vs_baseline, Some(1.5));
        assert_eq!(rs[2].speedup_vs_baseline, None);
    }

    #[test]
    fn percentiles_in_ms() {
        let v: Vec<f64> = (1..=100).map(|i| i as f64 * 1e6).collect();
        assert_eq!(percentile_ms(&v, 50.0), 50.0);
        assert_eq!(percentile_ms(&v, 99.0), 99.0);
        assert_eq!(percentile_ms(&[], 50.0), 0.0);
    }
}
