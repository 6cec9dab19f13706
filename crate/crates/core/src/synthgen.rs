//! Synthetic untrimmed-video corpus with planted class motifs.
//!
//! Each action instance is a class motif (a smooth trajectory in feature
//! space); slow instances are the same motif stretched in time, so every
//! snippet changes only slightly from its neighbour. Low-amplitude copies of
//! the motif next to an instance play the role of action context.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::dataio::{Corpus, Video};
use crate::error::{Error, Result};
use crate::metrics::GroundTruthSegment;
use crate::tensorseq::{FeatureSequence, Matrix, VideoLabel, DEFAULT_SNIPPET_SECONDS};

const MOTIF_STREAM_BASE: u64 = 1 << 40;
const SINUSOIDS_PER_DIM: usize = 3;
/// Minimum number of background snippets between two planted blocks.
const MIN_GAP: usize = 2;
pub const DEFAULT_FREQ_BAND: (f64, f64) = (0.5, 2.5);
/// Band of the default corpus.
pub const CORPUS_FREQ_BAND: (f64, f64) = (0.1, 0.4);

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    /// Training videos.
    pub num_videos: usize,
    pub num_test_videos: usize,
    pub num_classes: usize,
    pub dim: usize,
    pub min_t: usize,
    pub max_t: usize,
    pub slow_fraction: f64,
    pub stretch_factor: usize,
    pub context_fraction: f64,
    pub context_amplitude: f64,
    pub noise_sigma: f64,
    pub min_motif_len: usize,
    pub max_motif_len: usize,
    /// Sinusoid frequencies of the motifs, in cycles per motif.
    pub min_freq: f64,
    pub max_freq: f64,
    pub max_instances: usize,
    /// Probability that a video holds two action classes instead of one.
    pub two_class_fraction: f64,
    pub snippet_seconds: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            num_videos: 40,
            num_test_videos: 20,
            num_classes: 4,
            dim: 16,
            min_t: 64,
            max_t: 128,
            slow_fraction: 0.4,
            stretch_factor: 4,
            context_fraction: 0.5,
            context_amplitude: 0.35,
            noise_sigma: 0.5,
            min_motif_len: 6,
            max_motif_len: 10,
            min_freq: CORPUS_FREQ_BAND.0,
            max_freq: CORPUS_FREQ_BAND.1,
            max_instances: 3,
            two_class_fraction: 0.3,
            snippet_seconds: DEFAULT_SNIPPET_SECONDS,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.num_classes == 0 || self.dim == 0 {
            return bad("num_classes and dim must be positive".into());
        }
        if self.min_t == 0 || self.min_t > self.max_t {
            return bad(format!("need 0 < min_t <= max_t, got {}..{}", self.min_t, self.max_t));
        }
        if self.stretch_factor < 2 {
            return bad(format!("stretch_factor must be >= 2, got {}", self.stretch_factor));
        }
        if !(0.0..=1.0).contains(&self.slow_fraction)
            || !(0.0..=1.0).contains(&self.context_fraction)
            || !(0.0..=1.0).contains(&self.two_class_fraction)
        {
            return bad("fractions must lie in [0,1]".into());
        }
        if !(self.noise_sigma > 0.0) || !(self.context_amplitude >= 0.0) {
            return bad("noise_sigma must be positive and context_amplitude non-negative".into());
        }
        if self.min_motif_len < 2 || self.min_motif_len > self.max_motif_len {
            return bad(format!(
                "need 2 <= min_motif_len <= max_motif_len, got {}..{}",
                self.min_motif_len, self.max_motif_len
            ));
        }
        if !(self.min_freq > 0.0 && self.min_freq <= self.max_freq) {
            return bad(format!("need 0 < min_freq <= max_freq, got {}..{}", self.min_freq, self.max_freq));
        }
        if self.max_instances == 0 {
            return bad("max_instances must be positive".into());
        }
        let classes_per_video = if self.num_classes >= 2 { 2 } else { 1 };
        let worst = classes_per_video * (self.stretch_factor * self.max_motif_len + MIN_GAP);
        if worst > self.max_t {
            return bad(format!("max_t {} cannot hold {worst} planted snippets", self.max_t));
        }
        if !(self.snippet_seconds > 0.0) {
            return bad("snippet_seconds must be positive".into());
        }
        Ok(())
    }
}

/// Smooth class-keyed trajectory, zero mean and unit variance per dimension.
pub fn class_motif(class_id: usize, length: usize, d: usize, seed: u64) -> Matrix {
    class_motif_in_band(class_id, length, d, seed, DEFAULT_FREQ_BAND)
}

/// [`class_motif`] with sinusoid frequencies drawn from `band` (cycles per motif).
pub fn class_motif_in_band(class_id: usize, length: usize, d: usize, seed: u64, band: (f64, f64)) -> Matrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(MOTIF_STREAM_BASE + class_id as u64);
    let waves: Vec<[(f64, f64, f64); SINUSOIDS_PER_DIM]> = (0..d)
        .map(|_| {
            std::array::from_fn(|_| {
                (
                    rng.gen_range(0.5..1.0),
                    rng.gen_range(band.0..=band.1),
                    rng.gen_range(0.0..std::f64::consts::TAU),
                )
            })
        })
        .collect();
    let mut m = Matrix::zeros(length, d);
    let denom = (length.max(2) - 1) as f64;
    for i in 0..length {
        let u = i as f64 / denom;
        for (j, w) in waves.iter().enumerate() {
            let v: f64 = w
                .iter()
                .map(|(amp, freq, phase)| amp * (std::f64::consts::TAU * freq * u + phase).sin())
                .sum();
            m.set(i, j, v);
        }
    }
    for j in 0..d {
        let col = m.column(j);
        let mean = col.iter().sum::<f64>() / length as f64;
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / length as f64;
        let sd = var.sqrt();
        for i in 0..length {
            let centred = m.get(i, j) - mean;
            m.set(i, j, if sd > 0.0 { centred / sd } else { centred });
        }
    }
    m
}

/// Linear interpolation to `factor` times as many rows; row `i` is the motif
/// at position `i / factor`, clamped to the last row.
pub fn stretch(motif: &Matrix, factor: usize) -> Result<Matrix> {
    if factor == 0 {
        return Err(Error::InvalidArgument("stretch factor must be >= 1".into()));
    }
    let (l, d) = (motif.rows(), motif.cols());
    let mut out = Matrix::zeros(l * factor, d);
    for i in 0..l * factor {
        let lo = i / factor;
        let w = (i % factor) as f64 / factor as f64;
        let hi = (lo + 1).min(l - 1);
        let row = out.row_mut(i);
        for j in 0..d {
            let a = motif.get(lo, j);
            row[j] = a + (motif.get(hi, j) - a) * w;
        }
    }
    Ok(out)
}

/// Train and test splits drawn from disjoint per-video random streams.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthCorpus {
    pub train: Corpus,
    pub test: Corpus,
}

struct Planted {
    class_id: usize,
    slow: bool,
    rows: Matrix,
    context: Option<(Matrix, bool)>,
}

impl Planted {
    fn block_len(&self) -> usize {
        self.rows.rows() + self.context.as_ref().map_or(0, |(m, _)| m.rows())
    }
}

fn synth_video(cfg: &SynthConfig, index: usize, id: String) -> Result<Video> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(index as u64);
    let mut t_len = rng.gen_range(cfg.min_t..=cfg.max_t);

    let mut all: Vec<usize> = (0..cfg.num_classes).collect();
    all.shuffle(&mut rng);
    let n_cls = if cfg.num_classes >= 2 && rng.gen_bool(cfg.two_class_fraction) { 2 } else { 1 };
    let classes = &all[..n_cls];
    let n_inst = rng.gen_range(n_cls..=cfg.max_instances.max(n_cls));

    let mut planted = Vec::with_capacity(n_inst);
    for k in 0..n_inst {
        let class_id = if k < n_cls { classes[k] } else { classes[rng.gen_range(0..n_cls)] };
        let len = rng.gen_range(cfg.min_motif_len..=cfg.max_motif_len);
        let slow = rng.gen_bool(cfg.slow_fraction);
        let motif = class_motif_in_band(class_id, len, cfg.dim, cfg.seed, (cfg.min_freq, cfg.max_freq));
        let rows = if slow { stretch(&motif, cfg.stretch_factor)? } else { motif };
        let context = if rng.gen_bool(cfg.context_fraction) {
            let clen = rng.gen_range(cfg.min_motif_len..=cfg.max_motif_len);
            let mut c = class_motif_in_band(class_id, clen, cfg.dim, cfg.seed, (cfg.min_freq, cfg.max_freq));
            c.as_mut_slice().iter_mut().for_each(|v| *v *= cfg.context_amplitude);
            Some((c, rng.gen_bool(0.5)))
        } else {
            None
        };
        planted.push(Planted {
            class_id,
            slow,
            rows,
            context,
        });
    }
    planted.shuffle(&mut rng);

    let required = |p: &[Planted]| p.iter().map(Planted::block_len).sum::<usize>() + MIN_GAP * (p.len() - 1);
    while required(&planted) > t_len {
        if let Some(p) = planted.iter_mut().rev().find(|p| p.context.is_some()) {
            p.context = None;
        } else if let Some(pos) = (0..planted.len())
            .rev()
            .find(|&i| planted.iter().filter(|p| p.class_id == planted[i].class_id).count() > 1)
        {
            planted.remove(pos);
        } else {
            t_len = required(&planted);
        }
    }

    // split the free snippets into len+1 gaps at sorted random cut points
    let slack = t_len - required(&planted);
    let mut cuts: Vec<usize> = (0..planted.len()).map(|_| rng.gen_range(0..=slack)).collect();
    cuts.sort_unstable();
    let noise = Normal::new(0.0, cfg.noise_sigma).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let mut data = Matrix::zeros(t_len, cfg.dim);
    data.as_mut_slice().iter_mut().for_each(|v| *v = noise.sample(&mut rng));

    let add = |data: &mut Matrix, at: usize, rows: &Matrix| {
        for i in 0..rows.rows() {
            for (dst, src) in data.row_mut(at + i).iter_mut().zip(rows.row(i)) {
                *dst += src;
            }
        }
    };
    let mut gts = Vec::with_capacity(planted.len());
    let mut cursor = 0;
    let mut prev_cut = 0;
    for (k, p) in planted.iter().enumerate() {
        cursor += cuts[k] - prev_cut + if k > 0 { MIN_GAP } else { 0 };
        prev_cut = cuts[k];
        let mut start = cursor;
        match &p.context {
            Some((c, true)) => {
                add(&mut data, cursor, c);
                start += c.rows();
                add(&mut data, start, &p.rows);
            }
            Some((c, false)) => {
                add(&mut data, cursor, &p.rows);
                add(&mut data, cursor + p.rows.rows(), c);
            }
            None => add(&mut data, cursor, &p.rows),
        }
        let end = start + p.rows.rows();
        gts.push(GroundTruthSegment {
            video_id: id.clone(),
            class_id: p.class_id,
            start_sec: start as f64 * cfg.snippet_seconds,
            end_sec: end as f64 * cfg.snippet_seconds,
            slow_motion: p.slow,
        });
        cursor += p.block_len();
    }
    gts.sort_by(|a, b| a.start_sec.total_cmp(&b.start_sec));
    // stored features are 32-bit
    data.as_mut_slice().iter_mut().for_each(|v| *v = f64::from(*v as f32));

    let mut present: Vec<usize> = gts.iter().map(|g| g.class_id).collect();
    present.sort_unstable();
    present.dedup();
    Ok(Video {
        label: VideoLabel::from_classes(cfg.num_classes, &present)?,
        features: FeatureSequence::new(data, cfg.snippet_seconds)?,
        gts,
        id,
    })
}

pub fn generate(cfg: &SynthConfig) -> Result<SynthCorpus> {
    cfg.validate()?;
    let build = |range: std::ops::Range<usize>, prefix: &str, offset: usize| -> Result<Corpus> {
        let videos = range
            .into_par_iter()
            .map(|i| synth_video(cfg, offset + i, format!("{prefix}_{i:04}")))
            .collect::<Result<Vec<_>>>()?;
        Ok(Corpus {
            num_classes: cfg.num_classes,
            snippet_seconds: cfg.snippet_seconds,
            videos,
        })
    };
    Ok(SynthCorpus {
        train: build(0..cfg.num_videos, "train", 0)?,
        test: build(0..cfg.num_test_videos, "test", cfg.num_videos)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mining::subsample;

    fn small() -> SynthConfig {
        SynthConfig {
            num_videos: 6,
            num_test_videos: 3,
            ..SynthConfig::default()
        }
    }

    fn pearson(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
        let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
        let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
        let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
        cov / (va * vb).sqrt()
    }

    #[test]
    fn corpus_survives_disk_round_trip() {
        let c = generate(&small()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        crate::dataio::write_corpus(dir.path(), &c.train).unwrap();
        assert_eq!(crate::dataio::read_corpus(dir.path()).unwrap(), c.train);
    }

    #[test]
    fn motif_shape_and_stats() {
        let m = class_motif(2, 2, 5, 9);
        assert_eq!((m.rows(), m.cols()), (2, 5));
        let m = class_motif(1, 10, 8, 3);
        assert_eq!(m, class_motif(1, 10, 8, 3));
        for j in 0..8 {
            let c = m.column(j);
            let mean = c.iter().sum::<f64>() / 10.0;
            let var = c.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 10.0;
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn motifs_of_different_classes_decorrelate() {
        let (len, d) = (10, 16);
        let mut total = 0.0;
        let mut n = 0;
        for seed in 0..5 {
            for a in 0..4 {
                for b in (a + 1)..4 {
                    let (ma, mb) = (class_motif(a, len, d, seed), class_motif(b, len, d, seed));
                    for j in 0..d {
                        total += pearson(&ma.column(j), &mb.column(j)).abs();
                        n += 1;
                    }
                }
            }
        }
        assert!(total / (n as f64) < 0.5, "mean |corr| {}", total / n as f64);
    }

    #[test]
    fn stretch_identity_and_inverse() {
        let m = class_motif(0, 7, 4, 1);
        assert_eq!(stretch(&m, 1).unwrap(), m);
        let s = stretch(&m, 4).unwrap();
        assert_eq!(s.rows(), 28);
        let back = subsample(&FeatureSequence::from_matrix(s).unwrap(), 4).unwrap();
        assert_eq!(back.data(), &m);
    }

    fn mean_delta(m: &Matrix) -> f64 {
        let n = m.rows() - 1;
        (0..n)
            .map(|i| m.row(i).iter().zip(m.row(i + 1)).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt())
            .sum::<f64>()
            / n as f64
    }

    #[test]
    fn stretched_deltas_shrink_by_factor() {
        let m = class_motif(3, 9, 16, 5);
        let s = stretch(&m, 4).unwrap();
        // the clamped tail adds zero deltas, so compare over the interpolated part
        let interior = s.select_rows(0..=4 * 8);
        let ratio = mean_delta(&interior) / mean_delta(&m);
        assert!((ratio - 0.25).abs() < 0.02, "{ratio}");
    }

    #[test]
    fn generate_is_deterministic_and_consistent() {
        let cfg = small();
        let a = generate(&cfg).unwrap();
        assert_eq!(a, generate(&cfg).unwrap());
        assert_eq!(a.train.videos.len(), 6);
        assert_eq!(a.test.videos.len(), 3);
        for v in a.train.videos.iter().chain(&a.test.videos) {
            let t = v.features.len();
            assert!((cfg.min_t..=cfg.max_t).contains(&t));
            assert!(!v.gts.is_empty());
            for g in &v.gts {
                assert!(v.label.has_class(g.class_id));
                assert!(g.start_sec < g.end_sec);
                assert!(g.start_sec >= 0.0 && g.end_sec <= t as f64 * cfg.snippet_seconds + 1e-9);
            }
            for c in v.label.classes() {
                assert!(v.gts.iter().any(|g| g.class_id == c));
            }
            for w in v.gts.windows(2) {
                assert!(w[0].end_sec <= w[1].start_sec);
            }
        }
        let other = generate(&SynthConfig { seed: 1, ..cfg }).unwrap();
        assert_ne!(a.train.videos[0].features, other.train.videos[0].features);
    }

    #[test]
    fn no_slow_flags_when_fraction_zero() {
        let c = generate(&SynthConfig {
            slow_fraction: 0.0,
            ..small()
        })
        .unwrap();
        assert!(c.train.videos.iter().flat_map(|v| &v.gts).all(|g| !g.slow_motion));
    }

    #[test]
    fn slow_lengths_match_stretch() {
        let cfg = small();
        let c = generate(&cfg).unwrap();
        for g in c.train.videos.iter().flat_map(|v| &v.gts) {
            let len = ((g.end_sec - g.start_sec) / cfg.snippet_seconds).round() as usize;
            if g.slow_motion {
                assert_eq!(len % cfg.stretch_factor, 0);
                assert!(len >= cfg.stretch_factor * cfg.min_motif_len);
            } else {
                assert!((cfg.min_motif_len..=cfg.max_motif_len).contains(&len));
            }
        }
    }

    #[test]
    fn rejects_bad_config() {
        assert!(generate(&SynthConfig { stretch_factor: 1, ..small() }).is_err());
        assert!(generate(&SynthConfig { min_t: 100, max_t: 50, ..small() }).is_err());
        assert!(generate(&SynthConfig { max_t: 60, min_t: 10, ..small() }).is_err());
    }
}
