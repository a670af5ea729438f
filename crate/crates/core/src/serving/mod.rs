//! The three deployment topologies: a monolith that runs vision and language
//! back to back, and split vision/language servers joined by a one-way
//! feature stream, with or without the resolution router.

mod client;
pub mod config;
pub mod kernels;
mod language_server;
mod model;
mod monolith;
mod net;
mod pipeline;
pub mod trace;
mod vision_server;

pub use client::{Client, Endpoints};
pub use config::{ServingConfig, Topology, CONFIG_ENV};
pub use kernels::{burn, ComputeProfile, WorkMeter, WorkTotals};
pub use language_server::LanguageServer;
pub use model::{frames_to_tiles, fuse, fused_checksum, visual_token_count, Engine, Fused, OutputHead, Request, ServingModel};
pub use monolith::{run_monolith, serve_request, MonolithServer};
pub use net::ServerHandle;
pub use pipeline::{
    collect_responses, fill_vision_done, pinned_policy, run_pipeline, DeployOptions, Deployment, PipelineRun,
    RESPONSE_TIMEOUT,
};
pub use trace::{find_cross_request_overlap, now_ns, read_trace, write_trace, Span, Stage, Trace};
pub use vision_server::{VisionServer, VisionServerOptions};
