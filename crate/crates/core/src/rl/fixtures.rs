//! Line-delimited JSON fixtures for the loss kit.
//!
//! Every line is one object tagged by `"type"`. Policies are stored as
//! [`PolicySpec`] seeds rather than weight dumps, so each record is small and
//! fully reproducible. See `docs/fixtures.md` for the schema.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::gspo::{GspoConfig, RolloutGroup};
use super::ntp::LossSequence;
use super::policy::ToyPolicy;
use super::preference::{MpoConfig, PreferencePair};
use crate::rng::Rng;
use crate::synth::TileKind;
use crate::types::CompressionRate;

/// `ToyPolicy::random(vocab, dim, scale, seed)` plus optional Gaussian jitter
/// of std `jitter` drawn from `jitter_seed`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolicySpec {
    pub vocab: usize,
    pub dim: usize,
    pub scale: f64,
    pub seed: u64,
    #[serde(default)]
    pub jitter: f64,
    #[serde(default)]
    pub jitter_seed: u64,
}

impl PolicySpec {
    pub fn build(&self) -> crate::Result<ToyPolicy> {
        let mut p = ToyPolicy::random(self.vocab, self.dim, self.scale, self.seed)?;
        if self.jitter != 0.0 {
            let mut rng = Rng::new(self.jitter_seed);
            for w in p.params_mut() {
                *w += self.jitter * rng.normal();
            }
        }
        Ok(p)
    }
}

/// A visual consistency case rebuilt from seeds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VicoCase {
    pub lm_seed: u64,
    pub vision_seed: u64,
    pub tile_seed: u64,
    pub tile_kind: TileKind,
    pub tile_size: usize,
    pub response_len: usize,
    pub xi: CompressionRate,
    pub jitter: f64,
    pub jitter_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LossFixture {
    Ntp {
        policy: PolicySpec,
        batch: Vec<LossSequence>,
    },
    Dpo {
        policy: PolicySpec,
        pairs: Vec<PreferencePair>,
        beta: f64,
    },
    Bco {
        policy: PolicySpec,
        pairs: Vec<PreferencePair>,
        beta: f64,
        delta: f64,
    },
    Mpo {
        policy: PolicySpec,
        pairs: Vec<PreferencePair>,
        config: MpoConfig,
    },
    Gspo {
        policy: PolicySpec,
        groups: Vec<RolloutGroup>,
        config: GspoConfig,
    },
    Vico(VicoCase),
}

impl LossFixture {
    pub fn kind(&self) -> &'static str {
        match self {
            LossFixture::Ntp { .. } => "ntp",
            LossFixture::Dpo { .. } => "dpo",
            LossFixture::Bco { .. } => "bco",
            LossFixture::Mpo { .. } => "mpo",
            LossFixture::Gspo { .. } => "gspo",
            LossFixture::Vico(_) => "vico",
        }
    }
}

#[derive(Debug, Error)]
pub enum FixtureError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {source}")]
    Parse {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("serialization failed: {0}")]
    Serialize(#[from] serde_json::Error),
}

/// Reads one fixture per non-empty line.
pub fn read_fixtures<R: BufRead>(reader: R) -> Result<Vec<LossFixture>, FixtureError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|source| FixtureError::Parse { line: i + 1, source })?);
    }
    Ok(out)
}

pub fn write_fixtures<W: Write>(mut writer: W, fixtures: &[LossFixture]) -> Result<(), FixtureError> {
    for f in fixtures {
        serde_json::to_writer(&mut writer, f)?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jsonl_round_trip() {
        let spec = PolicySpec {
            vocab: 4,
            dim: 3,
            scale: 0.5,
            seed: 1,
            jitter: 0.0,
            jitter_seed: 0,
        };
        let fixtures = vec![
            LossFixture::Ntp {
                policy: spec,
                batch: vec![LossSequence::response(0, 1, vec![1, 2])],
            },
            LossFixture::Gspo {
                policy: spec,
                groups: vec![RolloutGroup {
                    query_id: 0,
                    responses: vec![vec![1], vec![2]],
                    rewards: vec![1.0, 0.0],
                    old_logprobs: vec![vec![-0.5], vec![-1.5]],
                }],
                config: GspoConfig::default(),
            },
        ];
        let mut buf = Vec::new();
        write_fixtures(&mut buf, &fixtures).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.lines().next().unwrap().starts_with(r#"{"type":"ntp""#));
        assert_eq!(read_fixtures(buf.as_slice()).unwrap(), fixtures);
    }

    #[test]
    fn parse_error_reports_line() {
        let text = "\n{\"type\":\"nope\"}\n";
        match read_fixtures(text.as_bytes()) {
            Err(FixtureError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }
}
