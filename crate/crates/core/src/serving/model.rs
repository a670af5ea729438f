//! Model-side computation shared by every topology.

use std::sync::Arc;

use super::kernels::{ComputeProfile, WorkMeter};
use super::trace::{now_ns, Stage, Trace};
use crate::error::{invalid, Result};
use crate::rng::mix64;
use crate::transport::{FeatureFrame, FrameError, ResponseMsg, ResponseStatus, Timings};
use crate::types::{CompressionRate, ImageTensor, PatchGrid};
use crate::vico::ToyLm;
use crate::vision::{RatePolicy, TileFeatures, VisionModel};

/// An inference request.
#[derive(Debug, Clone, PartialEq)]
pub struct Request {
    pub request_id: u64,
    pub image: ImageTensor,
    pub prompt: Vec<u32>,
    pub decode_len: u32,
    /// Submission time, nanoseconds since the Unix epoch.
    pub arrival_ns: u64,
}

impl Request {
    pub fn validate(&self) -> Result<()> {
        if self.decode_len == 0 {
            return Err(invalid(format!("request {}: decode_len must be at least 1", self.request_id)));
        }
        if self.prompt.is_empty() {
            return Err(invalid(format!("request {}: prompt is empty", self.request_id)));
        }
        Ok(())
    }
}

/// How output tokens are produced from the fused context.
#[derive(Debug, Clone)]
pub enum OutputHead {
    /// Hash chain over the fused-input checksum, reduced mod `vocab`.
    Hash { vocab: u32 },
    /// Greedy decoding of a toy language model over the visual features.
    ToyLm(Arc<ToyLm>),
}

#[derive(Debug, Clone)]
pub struct ServingModel {
    pub vision: VisionModel,
    pub head: OutputHead,
}

/// Visual tokens plus prompt, ready for prefill.
#[derive(Debug, Clone, PartialEq)]
pub struct Fused {
    pub tiles: Vec<PatchGrid>,
    pub prompt: Vec<u32>,
    pub visual_tokens: usize,
    pub checksum: u64,
}

impl Fused {
    /// Positions processed by prefill.
    pub fn positions(&self) -> usize {
        self.visual_tokens + self.prompt.len()
    }
}

/// Order-sensitive digest of every feature bit pattern and prompt token.
pub fn fused_checksum(tiles: &[PatchGrid], prompt: &[u32]) -> u64 {
    let mut h = mix64(0x6675_7365);
    for t in tiles {
        h = mix64(h ^ t.token_count() as u64);
        for v in t.data() {
            h = mix64(h ^ v.to_bits());
        }
    }
    for &p in prompt {
        h = mix64(h ^ (u64::from(p) | 1 << 40));
    }
    h
}

pub fn fuse(tiles: Vec<PatchGrid>, prompt: &[u32]) -> Fused {
    Fused {
        visual_tokens: tiles.iter().map(PatchGrid::token_count).sum(),
        checksum: fused_checksum(&tiles, prompt),
        tiles,
        prompt: prompt.to_vec(),
    }
}

/// Decoded features of a complete request, in tile order.
pub fn frames_to_tiles(frames: &[FeatureFrame]) -> std::result::Result<Vec<PatchGrid>, FrameError> {
    frames.iter().map(FeatureFrame::to_grid).collect()
}

impl ServingModel {
    pub fn new(vision: VisionModel, head: OutputHead) -> Self {
        Self { vision, head }
    }

    /// Vision-stage work for one tile: profile work plus the real encoder.
    pub fn vision_tile(
        &self,
        tile: &ImageTensor,
        policy: &RatePolicy,
        profile: &ComputeProfile,
        meter: &WorkMeter,
    ) -> Result<TileFeatures> {
        meter.vision(profile.vision_work_per_tile);
        self.vision.process_tile(tile, policy)
    }

    /// Runs prefill work over every fused position.
    pub fn prefill(&self, fused: &Fused, profile: &ComputeProfile, meter: &WorkMeter) {
        meter.prefill(profile.prefill_work_per_token * fused.positions() as u64);
    }

    /// Generates `decode_len` tokens, one decode work block per token.
    pub fn decode(
        &self,
        request_id: u64,
        fused: &Fused,
        decode_len: u32,
        profile: &ComputeProfile,
        meter: &WorkMeter,
    ) -> Result<Vec<u32>> {
        let tokens = match &self.head {
            OutputHead::Hash { vocab } => {
                if *vocab == 0 {
                    return Err(invalid("vocabulary is empty"));
                }
                let mut h = fused.checksum;
                (0..decode_len)
                    .map(|t| {
                        meter.decode(profile.decode_work_per_token);
                        h = mix64(h ^ mix64(request_id ^ mix64(u64::from(t) + 1)));
                        (h % u64::from(*vocab)) as u32
                    })
                    .collect()
            }
            OutputHead::ToyLm(lm) => {
                meter.decode(profile.decode_work_per_token * u64::from(decode_len));
                let visual = lm.visual_context(&fused.tiles)?;
                lm.greedy(&visual, decode_len as usize)?.into_iter().map(|t| t as u32).collect()
            }
        };
        Ok(tokens)
    }
}

/// A model bound to a compute profile, a work meter and a span log.
#[derive(Debug, Clone)]
pub struct Engine {
    pub model: Arc<ServingModel>,
    pub profile: ComputeProfile,
    pub meter: Arc<WorkMeter>,
    pub trace: Trace,
}

impl Engine {
    pub fn new(model: Arc<ServingModel>, profile: ComputeProfile) -> Self {
        Self {
            model,
            profile,
            meter: Arc::new(WorkMeter::default()),
            trace: Trace::new(),
        }
    }

    pub fn with_trace(mut self, trace: Trace) -> Self {
        self.trace = trace;
        self
    }

    /// Vision stage for one tile, packed into the frame that crosses the wire.
    pub fn vision_frame(
        &self,
        request_id: u64,
        index: u32,
        count: u32,
        tile: &ImageTensor,
        policy: &RatePolicy,
    ) -> Result<FeatureFrame> {
        let start = now_ns();
        let tf = self.model.vision_tile(tile, policy, &self.profile, &self.meter)?;
        let frame = FeatureFrame::from_grid(request_id, index, count, tf.rate, &tf.features)
            .map_err(|e| invalid(e.to_string()))?;
        self.trace.span(request_id, Stage::Vision, Some(index), start, now_ns());
        Ok(frame)
    }

    /// Fuse, prefill and decode; fills the prefill and decode timestamps.
    pub fn language(
        &self,
        request_id: u64,
        tiles: Vec<PatchGrid>,
        prompt: &[u32],
        decode_len: u32,
        mut timings: Timings,
    ) -> Result<ResponseMsg> {
        let start = now_ns();
        let fused = fuse(tiles, prompt);
        self.model.prefill(&fused, &self.profile, &self.meter);
        let prefilled = now_ns();
        self.trace.span(request_id, Stage::Prefill, None, start, prefilled);
        let tokens = self
            .model
            .decode(request_id, &fused, decode_len, &self.profile, &self.meter)?;
        let decoded = now_ns();
        self.trace.span(request_id, Stage::Decode, None, prefilled, decoded);
        timings.prefill_done_ns = Some(prefilled);
        timings.decode_done_ns = Some(decoded);
        Ok(ResponseMsg {
            request_id,
            status: ResponseStatus::Ok,
            tokens,
            visual_tokens: fused.visual_tokens as u32,
            timings,
            error: String::new(),
        })
    }
}

/// Visual tokens a request contributes at the given per-tile rates.
pub fn visual_token_count(rates: &[CompressionRate]) -> usize {
    rates.iter().map(|r| r.tokens_per_tile()).sum()
}
