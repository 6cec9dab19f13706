//! Two-branch localizer: the normal branch sees the original features, the
//! slow branch sees the mined (masked) features during training. At
//! inference both branches read the original features and their CAS logits
//! and attention weights are fused by elementwise maximum.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;

use crate::backbone::{forward, init_params, BackboneOutput, BackboneParams};
use crate::dataio::{read_kv, read_params, write_kv, write_params, Video};
use crate::error::{Error, Result};
use crate::losses::{LossTerms, LossWeights};
use crate::mining::{apply_mask, SlowMask};
use crate::tensorseq::{AttentionTriple, Cas, FeatureSequence, Matrix};
use crate::trainer::{adam_step, mask_videos, video_gradient, AdamState, BatchSampler, LossCurve, TrainConfig};

pub const NORMAL_CHECKPOINT: &str = "n_branch.prm";
pub const SLOW_CHECKPOINT: &str = "s_branch.prm";
pub const WEIGHTS_FILE: &str = "loss_weights.txt";

#[derive(Debug, Clone, PartialEq)]
pub struct LocalizerState {
    pub n_params: BackboneParams,
    pub s_params: BackboneParams,
    pub loss_weights: LossWeights,
}

impl LocalizerState {
    pub fn new(n_params: BackboneParams, s_params: BackboneParams, loss_weights: LossWeights) -> Result<Self> {
        if !n_params.same_shape(&s_params) {
            return Err(Error::InvalidArgument("branch parameter shapes differ".into()));
        }
        loss_weights.validate()?;
        Ok(Self {
            n_params,
            s_params,
            loss_weights,
        })
    }

    /// Fresh branches drawn from two seeds.
    pub fn init(d: usize, h: usize, num_classes: usize, radius: usize, n_seed: u64, s_seed: u64, loss_weights: LossWeights) -> Result<Self> {
        Self::new(
            init_params(d, h, num_classes, radius, n_seed),
            init_params(d, h, num_classes, radius, s_seed),
            loss_weights,
        )
    }
}

/// Elementwise maximum of two equally shaped matrices.
pub fn fuse(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if !a.same_shape(b) {
        return Err(Error::shape(
            "fuse",
            format!("{}x{}", a.rows(), a.cols()),
            format!("{}x{}", b.rows(), b.cols()),
        ));
    }
    let data = a.as_slice().iter().zip(b.as_slice()).map(|(x, y)| x.max(*y)).collect();
    Matrix::new(a.rows(), a.cols(), data)
}

pub fn fuse_cas(a: &Cas, b: &Cas) -> Result<Cas> {
    Cas::new(fuse(&a.logits, &b.logits)?)
}

pub fn fuse_attention(a: &AttentionTriple, b: &AttentionTriple) -> Result<AttentionTriple> {
    AttentionTriple::new(fuse(&a.weights, &b.weights)?)
}

/// Per-branch loss weights: the feature-separation weight is split by `beta`
/// between the normal `(1-beta)` and slow `beta` branches.
pub fn branch_weights(w: &LossWeights) -> (LossWeights, LossWeights) {
    let n = LossWeights {
        lambda2: w.lambda2 * (1.0 - w.beta),
        ..*w
    };
    let s = LossWeights {
        lambda2: w.lambda2 * w.beta,
        ..*w
    };
    (n, s)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepLoss {
    pub total: f64,
    pub normal: LossTerms,
    pub slow: LossTerms,
}

impl StepLoss {
    fn from_terms(normal: LossTerms, slow: LossTerms, w: &LossWeights) -> Self {
        let (wn, ws) = branch_weights(w);
        Self {
            total: normal.total(&wn) + slow.total(&ws),
            normal,
            slow,
        }
    }
}

/// Both branch outputs for one training video.
pub fn branch_outputs(state: &LocalizerState, x: &FeatureSequence, mask: &SlowMask) -> Result<(BackboneOutput, BackboneOutput)> {
    let x_slow = apply_mask(x, mask)?;
    let (n, s) = rayon::join(|| forward(&state.n_params, x), || forward(&state.s_params, &x_slow));
    Ok((n?, s?))
}

/// Joint training loss of one video.
pub fn step_loss(state: &LocalizerState, video: &Video, mask: &SlowMask, topk_ratio: f64) -> Result<StepLoss> {
    let (n, s) = branch_outputs(state, &video.features, mask)?;
    let w = &state.loss_weights;
    Ok(StepLoss::from_terms(
        LossTerms::compute(&n, &video.label, w, topk_ratio)?,
        LossTerms::compute(&s, &video.label, w, topk_ratio)?,
        w,
    ))
}

/// Optimiser state for both branches, kept separate.
#[derive(Debug, Clone)]
pub struct LocalizerTrainer {
    pub state: LocalizerState,
    pub adam_n: AdamState,
    pub adam_s: AdamState,
}

impl LocalizerTrainer {
    pub fn new(state: LocalizerState) -> Self {
        Self {
            adam_n: AdamState::new(&state.n_params),
            adam_s: AdamState::new(&state.s_params),
            state,
        }
    }

    /// One Adam update of both branches on a batch. `slow_videos[i]` must be
    /// the masked counterpart of `videos[i]`.
    pub fn step(&mut self, videos: &[&Video], slow_videos: &[&Video], cfg: &TrainConfig, iteration: usize) -> Result<StepLoss> {
        if videos.len() != slow_videos.len() || videos.is_empty() {
            return Err(Error::shape("slow batch size", videos.len(), slow_videos.len()));
        }
        let (wn, ws) = branch_weights(&self.state.loss_weights);
        let state = &self.state;
        let results = videos
            .par_iter()
            .zip(slow_videos.par_iter())
            .map(|(v, vs)| {
                let n = video_gradient(&state.n_params, v, &wn, cfg.topk_ratio, iteration)?;
                let s = video_gradient(&state.s_params, vs, &ws, cfg.topk_ratio, iteration)?;
                Ok((n, s))
            })
            .collect::<Result<Vec<_>>>()?;
        let inv = 1.0 / results.len() as f64;
        let mut gn = state.n_params.zeros_like();
        let mut gs = state.s_params.zeros_like();
        let mut normal = LossTerms::default();
        let mut slow = LossTerms::default();
        let acc = |a: &mut LossTerms, b: &LossTerms| {
            a.classification += b.classification * inv;
            a.guide += b.guide * inv;
            a.feature += b.feature * inv;
            a.sparsity += b.sparsity * inv;
        };
        for (n, s) in &results {
            gn.add_scaled(&n.grad, inv);
            gs.add_scaled(&s.grad, inv);
            acc(&mut normal, &n.terms);
            acc(&mut slow, &s.terms);
        }
        adam_step(&mut self.state.n_params, &gn, &mut self.adam_n, cfg)?;
        adam_step(&mut self.state.s_params, &gs, &mut self.adam_s, cfg)?;
        Ok(StepLoss::from_terms(normal, slow, &self.state.loss_weights))
    }
}

/// Single-video convenience wrapper around [`LocalizerTrainer::step`].
pub fn train_step(trainer: &mut LocalizerTrainer, video: &Video, mask: &SlowMask, cfg: &TrainConfig) -> Result<StepLoss> {
    let slow = Video {
        features: apply_mask(&video.features, mask)?,
        ..video.clone()
    };
    trainer.step(&[video], &[&slow], cfg, 0)
}

#[derive(Debug, Clone)]
pub struct LocalizerOutcome {
    pub state: LocalizerState,
    pub curve: LossCurve,
}

pub fn train(state: &LocalizerState, videos: &[Video], masks: &[SlowMask], cfg: &TrainConfig) -> Result<LocalizerOutcome> {
    cfg.validate()?;
    if videos.is_empty() {
        return Err(Error::InvalidInput("training corpus is empty".into()));
    }
    let slow = mask_videos(videos, masks)?;
    let mut trainer = LocalizerTrainer::new(state.clone());
    let mut sampler = BatchSampler::new(videos.len(), cfg.seed);
    let mut curve = LossCurve::default();
    for it in 0..cfg.iterations {
        let batch = sampler.next_batch(cfg.batch_size);
        let vn: Vec<&Video> = batch.iter().map(|&i| &videos[i]).collect();
        let vs: Vec<&Video> = batch.iter().map(|&i| &slow[i]).collect();
        let loss = trainer.step(&vn, &vs, cfg, it)?;
        curve.total.push(loss.total);
        curve.classification.push(loss.normal.classification + loss.slow.classification);
    }
    Ok(LocalizerOutcome {
        state: trainer.state,
        curve,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InferMode {
    NOnly,
    SOnly,
    /// Normal-branch CAS with slow-branch attention.
    Combo,
    Full,
}

impl FromStr for InferMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "n_only" => Ok(Self::NOnly),
            "s_only" => Ok(Self::SOnly),
            "combo" => Ok(Self::Combo),
            "full" => Ok(Self::Full),
            other => Err(Error::InvalidArgument(format!(
                "unknown mode {other:?} (expected full, n_only, s_only or combo)"
            ))),
        }
    }
}

impl fmt::Display for InferMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::NOnly => "n_only",
            Self::SOnly => "s_only",
            Self::Combo => "combo",
            Self::Full => "full",
        })
    }
}

/// Both branches on the unmasked features, fused.
pub fn infer(state: &LocalizerState, x: &FeatureSequence) -> Result<(Cas, AttentionTriple)> {
    infer_combo(state, x, InferMode::Full)
}

pub fn infer_combo(state: &LocalizerState, x: &FeatureSequence, mode: InferMode) -> Result<(Cas, AttentionTriple)> {
    match mode {
        InferMode::NOnly => {
            let n = forward(&state.n_params, x)?;
            Ok((n.cas, n.attn))
        }
        InferMode::SOnly => {
            let s = forward(&state.s_params, x)?;
            Ok((s.cas, s.attn))
        }
        InferMode::Combo | InferMode::Full => {
            let (n, s) = rayon::join(|| forward(&state.n_params, x), || forward(&state.s_params, x));
            let (n, s) = (n?, s?);
            if mode == InferMode::Combo {
                Ok((n.cas, s.attn))
            } else {
                Ok((fuse_cas(&n.cas, &s.cas)?, fuse_attention(&n.attn, &s.attn)?))
            }
        }
    }
}

pub fn loss_weights_kv(w: &LossWeights) -> Vec<(String, String)> {
    [
        ("lambda1", w.lambda1),
        ("lambda2", w.lambda2),
        ("lambda3", w.lambda3),
        ("beta", w.beta),
        ("margin", w.margin),
    ]
    .iter()
    .map(|(k, v)| (k.to_string(), v.to_string()))
    .collect()
}

/// Writes both branch checkpoints and the loss-weight record into `dir`.
pub fn save(dir: &Path, state: &LocalizerState) -> Result<()> {
    write_params(&dir.join(NORMAL_CHECKPOINT), &state.n_params)?;
    write_params(&dir.join(SLOW_CHECKPOINT), &state.s_params)?;
    write_kv(&dir.join(WEIGHTS_FILE), &loss_weights_kv(&state.loss_weights))
}

pub fn load(dir: &Path) -> Result<LocalizerState> {
    let wpath = dir.join(WEIGHTS_FILE);
    let mut w = LossWeights::default();
    for (k, v) in read_kv(&wpath)? {
        let x: f64 = v
            .parse()
            .map_err(|e| Error::InvalidInput(format!("{}: {k}={v}: {e}", wpath.display())))?;
        match k.as_str() {
            "lambda1" => w.lambda1 = x,
            "lambda2" => w.lambda2 = x,
            "lambda3" => w.lambda3 = x,
            "beta" => w.beta = x,
            "margin" => w.margin = x,
            _ => return Err(Error::InvalidInput(format!("{}: unknown key {k}", wpath.display()))),
        }
    }
    LocalizerState::new(
        read_params(&dir.join(NORMAL_CHECKPOINT))?,
        read_params(&dir.join(SLOW_CHECKPOINT))?,
        w,
    )
}
