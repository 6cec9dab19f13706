//! End-to-end pipeline: mining backbone, slow masks, two-branch localizer,
//! and the comparison against a single normal branch and a two-branch
//! ensemble trained without mining.

use rayon::prelude::*;

use crate::backbone::{init_params, BackboneParams, DEFAULT_CONTEXT_RADIUS, DEFAULT_HIDDEN};
use crate::dataio::Video;
use crate::error::{Error, Result};
use crate::localizer::{self, infer_combo, InferMode, LocalizerState};
use crate::losses::LossWeights;
use crate::metrics::{map_bands, slow_subset_filter, Band, Detection, GroundTruthSegment};
use crate::mining::{generate_mask, subsample, MiningConfig, SlowMask};
use crate::proposals::{localize, PostprocessConfig};
use crate::synthgen::SynthConfig;
use crate::tensorseq::{AttentionTriple, Cas};
use crate::trainer::{self, LossCurve, TrainConfig};

/// Every tunable of the pipeline, addressable by a flat key.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub synth: SynthConfig,
    pub mining: MiningConfig,
    pub postprocess: PostprocessConfig,
    pub loss_weights: LossWeights,
    /// Miner optimisation; the localizer uses the same settings with the
    /// learning rate multiplied by `loc_lr_multiplier`.
    pub train: TrainConfig,
    pub loc_lr_multiplier: f64,
    pub hidden: usize,
    pub context_radius: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            synth: SynthConfig::default(),
            mining: MiningConfig::default(),
            postprocess: PostprocessConfig::default(),
            loss_weights: LossWeights::default(),
            train: TrainConfig {
                learning_rate: 1e-3,
                iterations: 1000,
                ..TrainConfig::default()
            },
            loc_lr_multiplier: 0.3,
            hidden: DEFAULT_HIDDEN,
            context_radius: DEFAULT_CONTEXT_RADIUS,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| Error::InvalidArgument(format!("{key}={value}: {e}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "1" | "true" | "on" => Ok(true),
        "0" | "false" | "off" => Ok(false),
        _ => Err(Error::InvalidArgument(format!("{key}={value}: expected true/false"))),
    }
}

impl PipelineConfig {
    /// All keys with their current values, in a stable order.
    pub fn to_kv(&self) -> Vec<(String, String)> {
        let s = &self.synth;
        let t = &self.train;
        let w = &self.loss_weights;
        let p = &self.postprocess;
        let thresholds = p
            .act_thresholds
            .iter()
            .map(|v| v.to_string())
            .collect::<Vec<_>>()
            .join(",");
        let pairs: Vec<(&str, String)> = vec![
            ("num_videos", s.num_videos.to_string()),
            ("num_test_videos", s.num_test_videos.to_string()),
            ("num_classes", s.num_classes.to_string()),
            ("dim", s.dim.to_string()),
            ("min_t", s.min_t.to_string()),
            ("max_t", s.max_t.to_string()),
            ("slow_fraction", s.slow_fraction.to_string()),
            ("stretch_factor", s.stretch_factor.to_string()),
            ("context_fraction", s.context_fraction.to_string()),
            ("context_amplitude", s.context_amplitude.to_string()),
            ("noise_sigma", s.noise_sigma.to_string()),
            ("min_motif_len", s.min_motif_len.to_string()),
            ("max_motif_len", s.max_motif_len.to_string()),
            ("min_freq", s.min_freq.to_string()),
            ("max_freq", s.max_freq.to_string()),
            ("max_instances", s.max_instances.to_string()),
            ("two_class_fraction", s.two_class_fraction.to_string()),
            ("snippet_seconds", s.snippet_seconds.to_string()),
            ("synth_seed", s.seed.to_string()),
            ("tau", self.mining.tau.to_string()),
            ("theta", self.mining.theta.to_string()),
            ("s", self.mining.s.to_string()),
            ("smooth", self.mining.smooth_enabled.to_string()),
            ("lambda1", w.lambda1.to_string()),
            ("lambda2", w.lambda2.to_string()),
            ("lambda3", w.lambda3.to_string()),
            ("beta", w.beta.to_string()),
            ("margin", w.margin.to_string()),
            ("hidden", self.hidden.to_string()),
            ("context_radius", self.context_radius.to_string()),
            ("topk_ratio", t.topk_ratio.to_string()),
            ("learning_rate", t.learning_rate.to_string()),
            ("loc_lr_multiplier", self.loc_lr_multiplier.to_string()),
            ("iterations", t.iterations.to_string()),
            ("batch_size", t.batch_size.to_string()),
            ("seed", t.seed.to_string()),
            ("adam_beta1", t.adam_beta1.to_string()),
            ("adam_beta2", t.adam_beta2.to_string()),
            ("adam_eps", t.adam_eps.to_string()),
            ("act_thresholds", thresholds),
            ("nms_iou", p.nms_iou.to_string()),
            ("class_threshold", p.class_threshold.to_string()),
            ("outer_margin_ratio", p.outer_margin_ratio.to_string()),
        ];
        pairs.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let s = &mut self.synth;
        let t = &mut self.train;
        let w = &mut self.loss_weights;
        let p = &mut self.postprocess;
        match key {
            "num_videos" => s.num_videos = parse(key, value)?,
            "num_test_videos" => s.num_test_videos = parse(key, value)?,
            "num_classes" => s.num_classes = parse(key, value)?,
            "dim" => s.dim = parse(key, value)?,
            "min_t" => s.min_t = parse(key, value)?,
            "max_t" => s.max_t = parse(key, value)?,
            "slow_fraction" => s.slow_fraction = parse(key, value)?,
            "stretch_factor" => s.stretch_factor = parse(key, value)?,
            "context_fraction" => s.context_fraction = parse(key, value)?,
            "context_amplitude" => s.context_amplitude = parse(key, value)?,
            "noise_sigma" => s.noise_sigma = parse(key, value)?,
            "min_motif_len" => s.min_motif_len = parse(key, value)?,
            "max_motif_len" => s.max_motif_len = parse(key, value)?,
            "min_freq" => s.min_freq = parse(key, value)?,
            "max_freq" => s.max_freq = parse(key, value)?,
            "max_instances" => s.max_instances = parse(key, value)?,
            "two_class_fraction" => s.two_class_fraction = parse(key, value)?,
            "snippet_seconds" => s.snippet_seconds = parse(key, value)?,
            "synth_seed" => s.seed = parse(key, value)?,
            "tau" => self.mining.tau = parse(key, value)?,
            "theta" => self.mining.theta = parse(key, value)?,
            "s" => self.mining.s = parse(key, value)?,
            "smooth" => self.mining.smooth_enabled = parse_bool(key, value)?,
            "lambda1" => w.lambda1 = parse(key, value)?,
            "lambda2" => w.lambda2 = parse(key, value)?,
            "lambda3" => w.lambda3 = parse(key, value)?,
            "beta" => w.beta = parse(key, value)?,
            "margin" => w.margin = parse(key, value)?,
            "hidden" => self.hidden = parse(key, value)?,
            "context_radius" => self.context_radius = parse(key, value)?,
            "topk_ratio" => {
                t.topk_ratio = parse(key, value)?;
                p.topk_ratio = t.topk_ratio;
            }
            "learning_rate" => t.learning_rate = parse(key, value)?,
            "loc_lr_multiplier" => self.loc_lr_multiplier = parse(key, value)?,
            "iterations" => t.iterations = parse(key, value)?,
            "batch_size" => t.batch_size = parse(key, value)?,
            "seed" => t.seed = parse(key, value)?,
            "adam_beta1" => t.adam_beta1 = parse(key, value)?,
            "adam_beta2" => t.adam_beta2 = parse(key, value)?,
            "adam_eps" => t.adam_eps = parse(key, value)?,
            "act_thresholds" => {
                p.act_thresholds = value
                    .split(',')
                    .map(|v| parse(key, v.trim()))
                    .collect::<Result<Vec<f64>>>()?
            }
            "nms_iou" => p.nms_iou = parse(key, value)?,
            "class_threshold" => p.class_threshold = parse(key, value)?,
            "outer_margin_ratio" => p.outer_margin_ratio = parse(key, value)?,
            _ => return Err(Error::InvalidArgument(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    pub fn apply_kv(&mut self, pairs: &[(String, String)]) -> Result<()> {
        pairs.iter().try_for_each(|(k, v)| self.set(k, v))
    }

    pub fn validate(&self) -> Result<()> {
        self.synth.validate()?;
        self.mining.validate()?;
        self.postprocess.validate()?;
        self.loss_weights.validate()?;
        self.train.validate()?;
        self.localizer_train().validate()?;
        if self.hidden == 0 {
            return Err(Error::InvalidArgument("hidden must be positive".into()));
        }
        if (self.train.topk_ratio - self.postprocess.topk_ratio).abs() > 0.0 {
            return Err(Error::InvalidArgument("topk_ratio differs between training and post-processing".into()));
        }
        Ok(())
    }

    /// Localizer training settings: same as the miner at a scaled learning rate.
    pub fn localizer_train(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.train.learning_rate * self.loc_lr_multiplier,
            seed: self.train.seed.wrapping_add(SAMPLER_OFFSET),
            ..self.train.clone()
        }
    }

    /// Initialisation seeds of (miner, normal branch, slow branch).
    pub fn init_seeds(&self) -> (u64, u64, u64) {
        let base = self.train.seed.wrapping_mul(1000);
        (base.wrapping_add(1), base.wrapping_add(2), base.wrapping_add(3))
    }
}

const SAMPLER_OFFSET: u64 = 7919;

/// Miner input: every video sub-sampled by `tau`.
pub fn subsampled_videos(videos: &[Video], tau: usize) -> Result<Vec<Video>> {
    videos
        .iter()
        .map(|v| {
            Ok(Video {
                features: subsample(&v.features, tau)?,
                ..v.clone()
            })
        })
        .collect()
}

/// Trains the mining backbone on sub-sampled features.
pub fn train_miner(cfg: &PipelineConfig, videos: &[Video]) -> Result<(BackboneParams, LossCurve)> {
    let first = videos
        .first()
        .ok_or_else(|| Error::InvalidInput("training corpus is empty".into()))?;
    let sub = subsampled_videos(videos, cfg.mining.tau)?;
    let (seed, _, _) = cfg.init_seeds();
    let init = init_params(
        first.features.dim(),
        cfg.hidden,
        first.label.num_classes(),
        cfg.context_radius,
        seed,
    );
    let out = trainer::train(&init, &sub, &cfg.loss_weights, &cfg.train, None)?;
    Ok((out.params, out.curve))
}

pub fn generate_masks(miner: &BackboneParams, videos: &[Video], mining: &MiningConfig) -> Result<Vec<SlowMask>> {
    videos
        .par_iter()
        .map(|v| generate_mask(miner, &v.features, mining))
        .collect()
}

fn initial_state(cfg: &PipelineConfig, videos: &[Video]) -> Result<LocalizerState> {
    let first = videos
        .first()
        .ok_or_else(|| Error::InvalidInput("training corpus is empty".into()))?;
    let (_, n_seed, s_seed) = cfg.init_seeds();
    LocalizerState::init(
        first.features.dim(),
        cfg.hidden,
        first.label.num_classes(),
        cfg.context_radius,
        n_seed,
        s_seed,
        cfg.loss_weights,
    )
}

pub fn train_localizer(cfg: &PipelineConfig, videos: &[Video], masks: &[SlowMask]) -> Result<(LocalizerState, LossCurve)> {
    let init = initial_state(cfg, videos)?;
    let out = localizer::train(&init, videos, masks, &cfg.localizer_train())?;
    Ok((out.state, out.curve))
}

/// Single normal branch: same initialisation and batches as the localizer's
/// normal branch, trained with the unsplit loss.
pub fn train_single_branch(cfg: &PipelineConfig, videos: &[Video]) -> Result<(BackboneParams, LossCurve)> {
    let init = initial_state(cfg, videos)?;
    let out = trainer::train(&init.n_params, videos, &cfg.loss_weights, &cfg.localizer_train(), None)?;
    Ok((out.params, out.curve))
}

pub fn to_detections(video_id: &str, cas: &Cas, attn: &AttentionTriple, snippet_seconds: f64, post: &PostprocessConfig) -> Result<Vec<Detection>> {
    Ok(localize(cas, attn, post)?
        .into_iter()
        .map(|p| Detection {
            video_id: video_id.to_string(),
            class_id: p.class_id,
            start_sec: p.start as f64 * snippet_seconds,
            end_sec: p.end as f64 * snippet_seconds,
            confidence: p.confidence,
        })
        .collect())
}

/// Detections of a localizer over a set of videos, in video order.
pub fn detect(state: &LocalizerState, videos: &[Video], mode: InferMode, post: &PostprocessConfig) -> Result<Vec<Detection>> {
    let per_video = videos
        .par_iter()
        .map(|v| {
            let (cas, attn) = infer_combo(state, &v.features, mode)?;
            to_detections(&v.id, &cas, &attn, v.features.snippet_seconds(), post)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(per_video.into_iter().flatten().collect())
}

pub fn detect_single(params: &BackboneParams, videos: &[Video], post: &PostprocessConfig) -> Result<Vec<Detection>> {
    let state = LocalizerState::new(params.clone(), params.clone(), LossWeights::default())?;
    detect(&state, videos, InferMode::NOnly, post)
}

/// Average mAP over `[0.1:0.1:0.7]` on all segments and on the slow subset.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scores {
    pub all: f64,
    pub slow: f64,
}

pub fn score(dets: &[Detection], gts: &[GroundTruthSegment]) -> Scores {
    let band = [Band::thumos()];
    let all = map_bands(dets, gts, &band).bands[0].1;
    let slow = map_bands(dets, &slow_subset_filter(gts), &band).bands[0].1;
    Scores { all, slow }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeedResult {
    pub seed: u64,
    pub smen: Scores,
    pub single_branch: Scores,
    pub no_mining: Scores,
    /// Fraction of training snippets kept by the masks.
    pub mask_coverage: f64,
    /// Fraction of slow ground-truth snippets kept by the masks.
    pub slow_recall: f64,
}

fn mask_stats(videos: &[Video], masks: &[SlowMask]) -> (f64, f64) {
    let total: usize = masks.iter().map(SlowMask::len).sum();
    let kept: usize = masks.iter().map(SlowMask::count_ones).sum();
    let (mut slow_total, mut slow_kept) = (0usize, 0usize);
    for (v, m) in videos.iter().zip(masks) {
        let ss = v.features.snippet_seconds();
        for g in v.gts.iter().filter(|g| g.slow_motion) {
            let (a, b) = ((g.start_sec / ss).round() as usize, (g.end_sec / ss).round() as usize);
            for t in a..b.min(m.len()) {
                slow_total += 1;
                slow_kept += usize::from(m.bits[t] == 1);
            }
        }
    }
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    (ratio(kept, total), ratio(slow_kept, slow_total))
}

/// SMEN and both baselines for one training seed on fixed train/test videos.
pub fn run_seed(cfg: &PipelineConfig, train: &[Video], test: &[Video]) -> Result<SeedResult> {
    cfg.validate()?;
    let gts: Vec<GroundTruthSegment> = test.iter().flat_map(|v| v.gts.iter().cloned()).collect();
    let post = &cfg.postprocess;

    let (miner, _) = train_miner(cfg, train)?;
    let masks = generate_masks(&miner, train, &cfg.mining)?;
    let (mask_coverage, slow_recall) = mask_stats(train, &masks);
    let ones: Vec<SlowMask> = train.iter().map(|v| SlowMask::ones(v.features.len())).collect();

    let (smen, (single, no_mining)) = rayon::join(
        || train_localizer(cfg, train, &masks),
        || rayon::join(|| train_single_branch(cfg, train), || train_localizer(cfg, train, &ones)),
    );
    let smen = score(&detect(&smen?.0, test, InferMode::Full, post)?, &gts);
    let single_branch = score(&detect_single(&single?.0, test, post)?, &gts);
    let no_mining = score(&detect(&no_mining?.0, test, InferMode::Full, post)?, &gts);
    Ok(SeedResult {
        seed: cfg.train.seed,
        smen,
        single_branch,
        no_mining,
        mask_coverage,
        slow_recall,
    })
}

pub fn run_seeds(cfg: &PipelineConfig, train: &[Video], test: &[Video], seeds: &[u64]) -> Result<Vec<SeedResult>> {
    seeds
        .iter()
        .map(|&seed| {
            let mut c = cfg.clone();
            c.train.seed = seed;
            run_seed(&c, train, test)
        })
        .collect()
}
