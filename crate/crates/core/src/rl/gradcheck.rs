//! Central finite-difference verification of every analytic gradient.

use super::fixtures::{LossFixture, PolicySpec, VicoCase};
use super::gspo::{gspo_objective, GspoConfig, RolloutGroup};
use super::ntp::{ntp_batch_grad, ntp_batch_loss, LossSequence};
use super::policy::ToyPolicy;
use super::preference::{
    bco_batch_grad, bco_delta, dpo_batch_grad, mpo_loss_grad, BcoSample, MpoConfig, MpoWeights, PreferencePair,
};
use crate::error::Result;
use crate::rng::Rng;
use crate::synth::{synth_tile, TileKind};
use crate::types::CompressionRate;
use crate::vico::{vico_loss_grad, vico_sample_loss, ToyLm, ToyLmConfig, VicoSample};
use crate::vision::{RatePolicy, VisionModel};

pub const FD_STEP: f64 = 1e-5;
pub const GRAD_TOLERANCE: f64 = 1e-4;
pub const DEFAULT_FIXTURES_PER_LOSS: usize = 20;

/// `(f(θ + h e_k) − f(θ − h e_k)) / 2h` for every coordinate.
pub fn central_difference<F>(f: F, params: &[f64], h: f64) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> Result<f64>,
{
    let mut theta = params.to_vec();
    let mut out = Vec::with_capacity(params.len());
    for k in 0..params.len() {
        let orig = theta[k];
        theta[k] = orig + h;
        let plus = f(&theta)?;
        theta[k] = orig - h;
        let minus = f(&theta)?;
        theta[k] = orig;
        out.push((plus - minus) / (2.0 * h));
    }
    Ok(out)
}

/// `‖a − n‖∞ / max(‖a‖∞, ‖n‖∞)`, zero when both vanish.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let inf = |v: &[f64]| v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let diff = analytic.iter().zip(numeric).fold(0.0f64, |m, (a, n)| m.max((a - n).abs()));
    let scale = inf(analytic).max(inf(numeric));
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub loss: &'static str,
    pub fixture: usize,
    pub value: f64,
    pub grad_norm: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossSuiteReport {
    pub tolerance: f64,
    pub checks: Vec<GradCheck>,
}

impl LossSuiteReport {
    pub fn passed(&self) -> bool {
        !self.checks.is_empty() && self.checks.iter().all(|c| c.rel_error <= self.tolerance)
    }

    /// `(loss, fixtures, worst relative error)` in first-seen order.
    pub fn summary(&self) -> Vec<(&'static str, usize, f64)> {
        let mut out: Vec<(&'static str, usize, f64)> = Vec::new();
        for c in &self.checks {
            match out.iter_mut().find(|(name, _, _)| *name == c.loss) {
                Some(entry) => {
                    entry.1 += 1;
                    entry.2 = entry.2.max(c.rel_error);
                }
                None => out.push((c.loss, 1, c.rel_error)),
            }
        }
        out
    }
}

fn vico_parts(case: &VicoCase) -> Result<(ToyLm, ToyLm, VicoSample)> {
    let vision = VisionModel::new(case.tile_size, 1, 8, case.vision_seed)?;
    let reference = ToyLm::new(ToyLmConfig::default(), case.lm_seed)?;
    let mut policy = reference.clone();
    let mut jitter = Rng::new(case.jitter_seed);
    for w in policy.head_mut().params_mut() {
        *w += case.jitter * jitter.normal();
    }
    let mut rng = Rng::new(case.tile_seed);
    let grid = vision.encode(&synth_tile(case.tile_kind, case.tile_size, &mut rng))?;
    let quarter = vision.compress(&grid, &RatePolicy::Fixed(CompressionRate::Quarter))?.features;
    let sixteenth = vision.compress(&grid, &RatePolicy::Fixed(CompressionRate::Sixteenth))?.features;
    let visual = reference.visual_context(std::slice::from_ref(&quarter))?;
    let response = reference.sample(&visual, case.response_len, &mut rng)?;
    Ok((
        reference,
        policy,
        VicoSample {
            response,
            quarter: vec![quarter],
            sixteenth: vec![sixteenth],
        },
    ))
}

type Objective<'a> = Box<dyn Fn(&[f64]) -> Result<f64> + 'a>;

/// Runs one fixture: analytic value and gradient against central differences.
pub fn check_fixture(index: usize, fixture: &LossFixture, h: f64) -> Result<GradCheck> {
    let (params, value, analytic, objective): (Vec<f64>, f64, Vec<f64>, Objective) = match fixture {
        LossFixture::Ntp { policy, batch } => {
            let p = policy.build()?;
            let grad = ntp_batch_grad(&p, batch)?;
            let value = ntp_batch_loss(&p, batch)?;
            let base = p.clone();
            (p.params().to_vec(), value, grad, Box::new(move |t| ntp_batch_loss(&base.with_params(t), batch)))
        }
        LossFixture::Dpo { policy, pairs, beta } => {
            let p = policy.build()?;
            let (value, grad) = dpo_batch_grad(&p, pairs, *beta)?;
            let base = p.clone();
            (
                p.params().to_vec(),
                value,
                grad,
                Box::new(move |t| Ok(dpo_batch_grad(&base.with_params(t), pairs, *beta)?.0)),
            )
        }
        LossFixture::Bco {
            policy,
            pairs,
            beta,
            delta,
        } => {
            let p = policy.build()?;
            let (value, grad) = bco_batch_grad(&p, pairs, *beta, Some(*delta))?;
            let base = p.clone();
            (
                p.params().to_vec(),
                value,
                grad,
                Box::new(move |t| Ok(bco_batch_grad(&base.with_params(t), pairs, *beta, Some(*delta))?.0)),
            )
        }
        LossFixture::Mpo { policy, pairs, config } => {
            let p = policy.build()?;
            let (value, grad) = mpo_loss_grad(&p, pairs, config)?;
            let base = p.clone();
            (
                p.params().to_vec(),
                value,
                grad,
                Box::new(move |t| Ok(mpo_loss_grad(&base.with_params(t), pairs, config)?.0)),
            )
        }
        LossFixture::Gspo { policy, groups, config } => {
            let p = policy.build()?;
            let out = gspo_objective(groups, &p, config)?;
            let base = p.clone();
            (
                p.params().to_vec(),
                out.loss,
                out.grad,
                Box::new(move |t| Ok(gspo_objective(groups, &base.with_params(t), config)?.loss)),
            )
        }
        LossFixture::Vico(case) => {
            let (reference, policy, sample) = vico_parts(case)?;
            let grad = vico_loss_grad(&reference, &policy, &sample, case.xi)?;
            let value = vico_sample_loss(&reference, &policy, &sample, case.xi)?;
            let params = policy.head().params().to_vec();
            let xi = case.xi;
            (
                params,
                value,
                grad,
                Box::new(move |t| {
                    let mut pol = policy.clone();
                    pol.head_mut().params_mut().copy_from_slice(t);
                    vico_sample_loss(&reference, &pol, &sample, xi)
                }),
            )
        }
    };
    let numeric = central_difference(objective, &params, h)?;
    Ok(GradCheck {
        loss: fixture.kind(),
        fixture: index,
        value,
        grad_norm: analytic.iter().fold(0.0f64, |m, x| m.max(x.abs())),
        rel_error: relative_error(&analytic, &numeric),
    })
}

fn policy_spec(rng: &mut Rng) -> PolicySpec {
    PolicySpec {
        vocab: 4 + rng.below(4),
        dim: 3 + rng.below(4),
        scale: rng.uniform_range(0.3, 1.0),
        seed: rng.below(1 << 30) as u64,
        jitter: 0.0,
        jitter_seed: 0,
    }
}

fn random_tokens(rng: &mut Rng, vocab: usize, min_len: usize, max_len: usize) -> Vec<u32> {
    let len = min_len + rng.below(max_len - min_len + 1);
    (0..len).map(|_| rng.below(vocab) as u32).collect()
}

fn random_pairs(policy: &ToyPolicy, reference: &ToyPolicy, rng: &mut Rng, n: usize) -> Result<Vec<PreferencePair>> {
    let vocab = policy.vocab();
    (0..n)
        .map(|i| {
            let chosen = random_tokens(rng, vocab, 1, 5);
            let mut rejected = random_tokens(rng, vocab, 1, 5);
            while rejected == chosen {
                rejected = random_tokens(rng, vocab, 1, 5);
            }
            PreferencePair::from_models(policy, reference, i as u64 + rng.below(100) as u64, chosen, rejected)
        })
        .collect()
}

fn preference_setup(rng: &mut Rng) -> Result<(PolicySpec, Vec<PreferencePair>)> {
    let spec = policy_spec(rng);
    let reference = PolicySpec {
        seed: spec.seed ^ 0x5eed,
        ..spec
    };
    let n = 2 + rng.below(3);
    let pairs = random_pairs(&spec.build()?, &reference.build()?, rng, n)?;
    Ok((spec, pairs))
}

/// Keeps every ratio at least `margin` away from a clip edge so the objective
/// is smooth within the finite-difference stencil.
fn clear_of_kinks(groups: &[RolloutGroup], policy: &ToyPolicy, config: &GspoConfig, margin: f64) -> Result<bool> {
    let out = gspo_objective(groups, policy, config)?;
    Ok(out
        .ratios
        .iter()
        .flatten()
        .all(|s| (s - (1.0 - config.clip_eps)).abs() > margin && (s - (1.0 + config.clip_eps)).abs() > margin))
}

fn gspo_setup(rng: &mut Rng) -> Result<LossFixture> {
    loop {
        let old = policy_spec(rng);
        let old_policy = old.build()?;
        let config = GspoConfig {
            clip_eps: rng.uniform_range(0.1, 0.3),
            ..GspoConfig::default()
        };
        let mut groups = Vec::new();
        for q in 0..2 + rng.below(2) {
            let g = 2 + rng.below(4);
            let len = 1 + rng.below(4);
            let rewards = (0..g).map(|_| rng.uniform()).collect();
            groups.push(RolloutGroup::sample(&old_policy, q as u64, g, len, rewards, rng)?);
        }
        let spec = PolicySpec {
            jitter: rng.uniform_range(0.05, 0.4),
            jitter_seed: rng.below(1 << 30) as u64,
            ..old
        };
        if clear_of_kinks(&groups, &spec.build()?, &config, 1e-3)? {
            return Ok(LossFixture::Gspo {
                policy: spec,
                groups,
                config,
            });
        }
    }
}

/// A deterministic suite of `per_loss` fixtures for each loss.
pub fn generate_suite(seed: u64, per_loss: usize) -> Result<Vec<LossFixture>> {
    let root = Rng::new(seed);
    let mut out = Vec::new();

    let mut rng = root.fork(1);
    for _ in 0..per_loss {
        let policy = policy_spec(&mut rng);
        let mut batch = Vec::new();
        for s in 0..2 + rng.below(3) {
            let tokens = random_tokens(&mut rng, policy.vocab, 2, 7);
            let mut mask: Vec<bool> = tokens.iter().map(|_| rng.coin(0.7)).collect();
            let last = mask.len() - 1;
            mask[last] = true;
            // Some samples span two sequences.
            let sample_id = if s > 0 && rng.coin(0.3) { s as u64 - 1 } else { s as u64 };
            batch.push(LossSequence {
                sample_id,
                query_id: rng.below(50) as u64,
                tokens,
                mask,
            });
        }
        out.push(LossFixture::Ntp { policy, batch });
    }

    let mut rng = root.fork(2);
    for _ in 0..per_loss {
        let (policy, pairs) = preference_setup(&mut rng)?;
        let beta = rng.uniform_range(0.1, 1.0);
        out.push(LossFixture::Dpo { policy, pairs, beta });
    }

    let mut rng = root.fork(3);
    for _ in 0..per_loss {
        let (policy, pairs) = preference_setup(&mut rng)?;
        let beta = rng.uniform_range(0.1, 1.0);
        let samples: Vec<BcoSample> = pairs.iter().flat_map(BcoSample::from_pair).collect();
        let delta = bco_delta(&samples, beta)?;
        out.push(LossFixture::Bco {
            policy,
            pairs,
            beta,
            delta,
        });
    }

    let mut rng = root.fork(4);
    for _ in 0..per_loss {
        let (policy, pairs) = preference_setup(&mut rng)?;
        let beta = rng.uniform_range(0.1, 1.0);
        let samples: Vec<BcoSample> = pairs.iter().flat_map(BcoSample::from_pair).collect();
        let config = MpoConfig {
            weights: MpoWeights::new(rng.uniform(), rng.uniform(), rng.uniform() + 0.1)?,
            beta,
            delta: Some(bco_delta(&samples, beta)?),
        };
        out.push(LossFixture::Mpo { policy, pairs, config });
    }

    let mut rng = root.fork(5);
    for _ in 0..per_loss {
        out.push(gspo_setup(&mut rng)?);
    }

    let mut rng = root.fork(6);
    for i in 0..per_loss {
        out.push(LossFixture::Vico(VicoCase {
            lm_seed: rng.below(1 << 30) as u64,
            vision_seed: rng.below(1 << 30) as u64,
            tile_seed: rng.below(1 << 30) as u64,
            tile_kind: if i % 2 == 0 { TileKind::Detailed } else { TileKind::Smooth },
            tile_size: 64,
            response_len: 2 + rng.below(6),
            xi: if rng.coin(0.5) {
                CompressionRate::Quarter
            } else {
                CompressionRate::Sixteenth
            },
            jitter: rng.uniform_range(0.05, 0.5),
            jitter_seed: rng.below(1 << 30) as u64,
        }));
    }
    Ok(out)
}

pub fn run_fixtures(fixtures: &[LossFixture], h: f64, tolerance: f64) -> Result<LossSuiteReport> {
    let checks = fixtures
        .iter()
        .enumerate()
        .map(|(i, f)| check_fixture(i, f, h))
        .collect::<Result<_>>()?;
    Ok(LossSuiteReport { tolerance, checks })
}

/// Generates and checks the default suite.
pub fn run_loss_suite(seed: u64, per_loss: usize) -> Result<LossSuiteReport> {
    run_fixtures(&generate_suite(seed, per_loss)?, FD_STEP, GRAD_TOLERANCE)
}
