//! Adam optimisation over whole-video batches.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::backbone::{forward, BackboneParams, DEFAULT_TOPK_RATIO};
use crate::dataio::Video;
use crate::error::{Error, Result};
use crate::losses::{backward, LossTerms, LossWeights};
use crate::mining::{apply_mask, SlowMask};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub iterations: usize,
    /// Videos per step.
    pub batch_size: usize,
    pub seed: u64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub topk_ratio: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            iterations: 500,
            batch_size: 8,
            seed: 0,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            topk_ratio: DEFAULT_TOPK_RATIO,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate > 0.0
            && self.batch_size > 0
            && (0.0..1.0).contains(&self.adam_beta1)
            && (0.0..1.0).contains(&self.adam_beta2)
            && self.adam_eps > 0.0
            && self.topk_ratio > 0.0
            && self.topk_ratio <= 1.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("invalid training config {self:?}")))
        }
    }
}

/// First and second moment estimates plus the number of steps taken.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: BackboneParams,
    pub v: BackboneParams,
    pub step: u64,
}

impl AdamState {
    pub fn new(params: &BackboneParams) -> Self {
        Self {
            m: params.zeros_like(),
            v: params.zeros_like(),
            step: 0,
        }
    }
}

/// One bias-corrected Adam update in place.
pub fn adam_step(params: &mut BackboneParams, grads: &BackboneParams, state: &mut AdamState, cfg: &TrainConfig) -> Result<()> {
    if !params.same_shape(grads) || !params.same_shape(&state.m) {
        return Err(Error::InvalidArgument("adam_step: parameter, gradient and state shapes differ".into()));
    }
    state.step += 1;
    let (b1, b2) = (cfg.adam_beta1, cfg.adam_beta2);
    let bc1 = 1.0 - b1.powi(state.step as i32);
    let bc2 = 1.0 - b2.powi(state.step as i32);
    let grads = grads.tensors();
    let m = state.m.tensors_mut();
    let v = state.v.tensors_mut();
    for (ti, p) in params.tensors_mut().into_iter().enumerate() {
        for i in 0..p.len() {
            let g = grads[ti][i];
            m[ti][i] = b1 * m[ti][i] + (1.0 - b1) * g;
            v[ti][i] = b2 * v[ti][i] + (1.0 - b2) * g * g;
            let m_hat = m[ti][i] / bc1;
            let v_hat = v[ti][i] / bc2;
            p[i] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.adam_eps);
        }
    }
    Ok(())
}

/// Cycles through shuffled epochs of video indices.
#[derive(Debug, Clone)]
pub struct BatchSampler {
    rng: ChaCha8Rng,
    order: Vec<usize>,
    pos: usize,
}

impl BatchSampler {
    pub fn new(n: usize, seed: u64) -> Self {
        let mut s = Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            order: (0..n).collect(),
            pos: n,
        };
        s.reshuffle();
        s
    }

    fn reshuffle(&mut self) {
        self.order.shuffle(&mut self.rng);
        self.pos = 0;
    }

    pub fn next_batch(&mut self, size: usize) -> Vec<usize> {
        let size = size.min(self.order.len());
        let mut out = Vec::with_capacity(size);
        while out.len() < size {
            if self.pos == self.order.len() {
                self.reshuffle();
            }
            out.push(self.order[self.pos]);
            self.pos += 1;
        }
        out
    }
}

/// Per-iteration batch means.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LossCurve {
    pub total: Vec<f64>,
    pub classification: Vec<f64>,
}

impl LossCurve {
    pub fn to_csv(&self) -> String {
        crate::dataio::format_loss_curve(&self.total)
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: BackboneParams,
    pub curve: LossCurve,
}

pub(crate) struct VideoGrad {
    pub grad: BackboneParams,
    pub terms: LossTerms,
    pub total: f64,
}

pub(crate) fn video_gradient(
    params: &BackboneParams,
    video: &Video,
    weights: &LossWeights,
    topk_ratio: f64,
    iteration: usize,
) -> Result<VideoGrad> {
    let out = forward(params, &video.features)?;
    let terms = LossTerms::compute(&out, &video.label, weights, topk_ratio)?;
    let total = terms.total(weights);
    if !total.is_finite() {
        return Err(Error::NonFinite {
            iteration,
            video_id: video.id.clone(),
            value: total,
        });
    }
    let grad = backward(params, &out, &video.label, weights, topk_ratio)?;
    if !grad.all_finite() {
        return Err(Error::NonFinite {
            iteration,
            video_id: video.id.clone(),
            value: f64::NAN,
        });
    }
    Ok(VideoGrad { grad, terms, total })
}

/// Replaces each video's features by the masked features.
pub fn mask_videos(videos: &[Video], masks: &[SlowMask]) -> Result<Vec<Video>> {
    if videos.len() != masks.len() {
        return Err(Error::shape("mask count", videos.len(), masks.len()));
    }
    videos
        .iter()
        .zip(masks)
        .map(|(v, m)| {
            Ok(Video {
                features: apply_mask(&v.features, m)?,
                ..v.clone()
            })
        })
        .collect()
}

/// Trains `params` with Adam; gradients are averaged over each batch.
/// With `masks`, every video is masked before its forward pass.
pub fn train(
    params: &BackboneParams,
    videos: &[Video],
    weights: &LossWeights,
    cfg: &TrainConfig,
    masks: Option<&[SlowMask]>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    weights.validate()?;
    if videos.is_empty() {
        return Err(Error::InvalidInput("training corpus is empty".into()));
    }
    let masked;
    let videos = match masks {
        Some(m) => {
            masked = mask_videos(videos, m)?;
            &masked[..]
        }
        None => videos,
    };
    let mut params = params.clone();
    let mut state = AdamState::new(&params);
    let mut sampler = BatchSampler::new(videos.len(), cfg.seed);
    let mut curve = LossCurve::default();
    for it in 0..cfg.iterations {
        let batch = sampler.next_batch(cfg.batch_size);
        let results = batch
            .par_iter()
            .map(|&i| video_gradient(&params, &videos[i], weights, cfg.topk_ratio, it))
            .collect::<Result<Vec<_>>>()?;
        let n = results.len() as f64;
        let mut grad = params.zeros_like();
        let (mut total, mut cls) = (0.0, 0.0);
        for r in &results {
            grad.add_scaled(&r.grad, 1.0 / n);
            total += r.total;
            cls += r.terms.classification;
        }
        curve.total.push(total / n);
        curve.classification.push(cls / n);
        adam_step(&mut params, &grad, &mut state, cfg)?;
    }
    Ok(TrainOutcome { params, curve })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backbone::init_params;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = init_params(3, 4, 2, 1, 0);
        let before = p.clone();
        let mut s = AdamState::new(&p);
        let zero = p.zeros_like();
        adam_step(&mut p, &zero, &mut s, &TrainConfig::default()).unwrap();
        assert_eq!(p, before);
        assert_eq!(s.step, 1);
    }

    #[test]
    fn first_step_matches_hand_formula() {
        let cfg = TrainConfig {
            learning_rate: 0.01,
            ..TrainConfig::default()
        };
        let mut p = init_params(2, 3, 1, 0, 4);
        let before = p.clone();
        let mut g = p.zeros_like();
        g.tensors_mut()[0][0] = 0.3;
        g.cls_b[1] = -2.0;
        let mut s = AdamState::new(&p);
        adam_step(&mut p, &g, &mut s, &cfg).unwrap();
        // step 1: m̂ = g, v̂ = g², update = -lr·g/(|g|+eps)
        let expect = |g: f64| -0.01 * g / (g.abs() + 1e-8);
        assert!((p.tensors()[0][0] - before.tensors()[0][0] - expect(0.3)).abs() < 1e-12);
        assert!((p.cls_b[1] - before.cls_b[1] - expect(-2.0)).abs() < 1e-12);
        assert_eq!(p.attn_w, before.attn_w);
        assert!((s.m.tensors()[0][0] - 0.1 * 0.3).abs() < 1e-15);
        assert!((s.v.cls_b[1] - 0.001 * 4.0).abs() < 1e-15);
    }

    #[test]
    fn adam_rejects_shape_mismatch() {
        let mut p = init_params(2, 3, 1, 0, 4);
        let q = init_params(2, 4, 1, 0, 4);
        let mut s = AdamState::new(&p);
        assert!(adam_step(&mut p, &q, &mut s, &TrainConfig::default()).is_err());
    }

    #[test]
    fn sampler_covers_each_epoch() {
        let mut s = BatchSampler::new(5, 3);
        let mut seen: Vec<usize> = s.next_batch(3);
        seen.extend(s.next_batch(2));
        seen.sort_unstable();
        assert_eq!(seen, vec![0, 1, 2, 3, 4]);
        assert_eq!(s.next_batch(9).len(), 5);
    }
}
