//! In-process deployments over loopback TCP and the batch pipeline driver.

use std::collections::{HashMap, HashSet};
use std::sync::Arc;
use std::time::{Duration, Instant};

use log::warn;

use super::client::{Client, Endpoints};
use super::config::{ServingConfig, Topology};
use super::kernels::{ComputeProfile, WorkMeter, WorkTotals};
use super::language_server::LanguageServer;
use super::model::{Engine, Request, ServingModel};
use super::monolith::MonolithServer;
use super::net::ServerHandle;
use super::trace::{now_ns, Span, Stage, Trace};
use super::vision_server::{VisionServer, VisionServerOptions};
use crate::error::{invalid, Error, Result};
use crate::transport::{ResponseMsg, ResponseStatus};
use crate::types::CompressionRate;
use crate::vision::RatePolicy;

/// A response that has not arrived after this long counts as failed.
pub const RESPONSE_TIMEOUT: Duration = Duration::from_secs(120);

#[derive(Debug, Clone)]
pub struct DeployOptions {
    pub profile: ComputeProfile,
    /// Vision-side rate policy for the split topologies; the monolith always
    /// runs at 1/4.
    pub policy: RatePolicy,
    pub vision: VisionServerOptions,
    pub nodelay: bool,
}

impl DeployOptions {
    pub fn new(profile: ComputeProfile, policy: RatePolicy) -> Self {
        Self {
            profile,
            policy,
            vision: VisionServerOptions::default(),
            nodelay: true,
        }
    }

    /// Options for `topology` from a config, loading or fitting the router
    /// when the topology needs one.
    pub fn from_config(config: &ServingConfig, topology: Topology, model: &ServingModel) -> Result<Self> {
        Ok(Self {
            profile: config.profile,
            policy: config.rate_policy(topology, &model.vision)?,
            vision: VisionServerOptions {
                workers: config.vision.workers,
                batch_tiles: config.vision.batch_tiles,
                batch_window: Duration::from_secs_f64(config.vision.batch_window_ms / 1e3),
                window: config.transport.window,
                nodelay: config.transport.nodelay,
            },
            nodelay: config.transport.nodelay,
        })
    }
}

/// Every server of one topology, bound to ephemeral loopback ports.
pub struct Deployment {
    // Drop order matters: vision stops (and flushes) before language.
    servers: Vec<ServerHandle>,
    topology: Topology,
    endpoints: Endpoints,
    trace: Trace,
    meters: Vec<Arc<WorkMeter>>,
    nodelay: bool,
}

impl Deployment {
    pub fn start(topology: Topology, model: Arc<ServingModel>, options: &DeployOptions) -> Result<Self> {
        options.profile.validate()?;
        let trace = Trace::new();
        let io = |e: std::io::Error| Error::Io(e.to_string());
        let engine = || Engine::new(model.clone(), options.profile).with_trace(trace.clone());
        let (servers, endpoints, meters) = if topology.is_split() {
            let lang_engine = engine();
            let vision_engine = engine();
            let meters = vec![vision_engine.meter.clone(), lang_engine.meter.clone()];
            let lang = LanguageServer::start("127.0.0.1:0", "127.0.0.1:0", lang_engine, options.nodelay).map_err(io)?;
            let (features, language) = (lang.addrs()[0], lang.addrs()[1]);
            let vision = VisionServer::start(
                "127.0.0.1:0",
                features.to_string(),
                vision_engine,
                options.policy.clone(),
                options.vision.clone(),
            )
            .map_err(io)?;
            let endpoints = Endpoints::Split {
                vision: vision.addr(),
                language,
            };
            (vec![vision, lang], endpoints, meters)
        } else {
            let e = engine();
            let meters = vec![e.meter.clone()];
            let server = MonolithServer::start("127.0.0.1:0", e, options.nodelay).map_err(io)?;
            let endpoints = Endpoints::Monolith { addr: server.addr() };
            (vec![server], endpoints, meters)
        };
        Ok(Self {
            servers,
            topology,
            endpoints,
            trace,
            meters,
            nodelay: options.nodelay,
        })
    }

    pub fn topology(&self) -> Topology {
        self.topology
    }

    pub fn endpoints(&self) -> Endpoints {
        self.endpoints
    }

    pub fn client(&self) -> Result<Client> {
        Client::connect(&self.endpoints, self.nodelay).map_err(|e| Error::Io(e.to_string()))
    }

    pub fn trace(&self) -> &Trace {
        &self.trace
    }

    /// Work performed so far, summed over servers.
    pub fn work(&self) -> WorkTotals {
        self.meters.iter().fold(WorkTotals::default(), |acc, m| {
            let t = m.totals();
            WorkTotals {
                vision: acc.vision + t.vision,
                prefill: acc.prefill + t.prefill,
                decode: acc.decode + t.decode,
            }
        })
    }

    pub fn shutdown(mut self) {
        self.servers.drain(..).for_each(drop);
    }
}

/// Fills `vision_done` on split-topology responses from the latest vision
/// span of each request.
pub fn fill_vision_done(responses: &mut [ResponseMsg], spans: &[Span]) {
    let mut done: HashMap<u64, u64> = HashMap::new();
    for s in spans.iter().filter(|s| s.stage == Stage::Vision) {
        let e = done.entry(s.request_id).or_default();
        *e = (*e).max(s.end_ns);
    }
    for r in responses.iter_mut() {
        if r.status == ResponseStatus::Ok && r.timings.vision_done_ns.is_none() {
            r.timings.vision_done_ns = done.get(&r.request_id).copied();
        }
    }
}

#[derive(Debug, Clone)]
pub struct PipelineRun {
    /// One response per request, sorted by request id.
    pub responses: Vec<ResponseMsg>,
    pub spans: Vec<Span>,
    pub work: WorkTotals,
}

/// Collects the first response per id until every id in `ids` has one or
/// nothing arrives for `timeout`.
pub fn collect_responses(client: &Client, ids: &HashSet<u64>, timeout: Duration) -> HashMap<u64, ResponseMsg> {
    let mut out = HashMap::with_capacity(ids.len());
    while out.len() < ids.len() {
        match client.recv_timeout(timeout) {
            Some(r) if ids.contains(&r.request_id) => {
                out.entry(r.request_id).or_insert(r);
            }
            Some(r) => warn!("unexpected response for request {}", r.request_id),
            None => break,
        }
    }
    out
}

/// Submits every request at once (arrival stamped at submission) and waits
/// for all responses.
pub fn run_pipeline(
    requests: &[Request],
    topology: Topology,
    model: Arc<ServingModel>,
    options: &DeployOptions,
) -> Result<PipelineRun> {
    let ids: HashSet<u64> = requests.iter().map(|r| r.request_id).collect();
    if ids.len() != requests.len() {
        return Err(invalid("request ids must be unique"));
    }
    let deployment = Deployment::start(topology, model, options)?;
    let mut client = deployment.client()?;
    let started = Instant::now();
    for r in requests {
        let mut r = r.clone();
        r.arrival_ns = now_ns();
        client.submit(&r).map_err(|e| Error::Io(e.to_string()))?;
    }
    let mut got = collect_responses(&client, &ids, RESPONSE_TIMEOUT);
    drop(client);
    let work = deployment.work();
    let trace = deployment.trace().clone();
    deployment.shutdown();
    let spans = trace.spans();
    let mut responses: Vec<ResponseMsg> = requests
        .iter()
        .map(|r| {
            got.remove(&r.request_id).unwrap_or_else(|| {
                ResponseMsg::failed(
                    r.request_id,
                    r.arrival_ns,
                    format!("no response after {:?}", started.elapsed()),
                )
            })
        })
        .collect();
    responses.sort_by_key(|r| r.request_id);
    if topology.is_split() {
        fill_vision_done(&mut responses, &spans);
    }
    Ok(PipelineRun { responses, spans, work })
}

/// Router that sends every tile to `rate`.
pub fn pinned_policy(dim: usize, rate: CompressionRate) -> RatePolicy {
    RatePolicy::Routed {
        params: crate::vision::RouterParams::pinned(dim, rate),
        threshold: 0.5,
    }
}
