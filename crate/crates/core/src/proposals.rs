//! CAS + attention to scored temporal proposals, then per-class greedy NMS.

use std::cmp::Ordering;

use crate::backbone::{video_scores, weighted_cas, DEFAULT_TOPK_RATIO};
use crate::error::{Error, Result};
use crate::tensorseq::{sigmoid, AttentionTriple, Branch, Cas};

/// A detected segment in snippet units, `end` exclusive.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Proposal {
    pub class_id: usize,
    pub start: usize,
    pub end: usize,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PostprocessConfig {
    /// Ascending thresholds on the suppressed activation track.
    pub act_thresholds: Vec<f64>,
    pub nms_iou: f64,
    /// Minimum video-level class probability for a class to be localized.
    pub class_threshold: f64,
    /// Flank width as a fraction of the segment length.
    pub outer_margin_ratio: f64,
    pub topk_ratio: f64,
}

impl Default for PostprocessConfig {
    fn default() -> Self {
        Self {
            act_thresholds: (1..=9).map(|i| f64::from(i) / 10.0).collect(),
            nms_iou: 0.5,
            class_threshold: 0.1,
            outer_margin_ratio: 0.25,
            topk_ratio: DEFAULT_TOPK_RATIO,
        }
    }
}

impl PostprocessConfig {
    pub fn validate(&self) -> Result<()> {
        if self.act_thresholds.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::InvalidArgument("act_thresholds must be ascending".into()));
        }
        if self.act_thresholds.iter().any(|t| !(0.0..1.0).contains(t) || *t == 0.0) {
            return Err(Error::InvalidArgument("act_thresholds must lie in (0,1)".into()));
        }
        if !(self.nms_iou > 0.0 && self.nms_iou < 1.0) {
            return Err(Error::InvalidArgument(format!("nms_iou {} outside (0,1)", self.nms_iou)));
        }
        if !(self.outer_margin_ratio >= 0.0) {
            return Err(Error::InvalidArgument("outer_margin_ratio must be >= 0".into()));
        }
        Ok(())
    }
}

/// Maximal runs `[start, end)` where `track >= threshold`.
pub fn runs_above(track: &[f64], threshold: f64) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut start = None;
    for (t, &v) in track.iter().enumerate() {
        match (v >= threshold, start) {
            (true, None) => start = Some(t),
            (false, Some(s)) => {
                out.push((s, t));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        out.push((s, track.len()));
    }
    out
}

/// Inside mean minus the mean over both flanks (each `ceil(ratio·len)` wide,
/// clipped to the track). Flanks that fall entirely outside count as 0.
pub fn outer_inner_contrast(track: &[f64], start: usize, end: usize, margin_ratio: f64) -> f64 {
    let len = end - start;
    let inner = track[start..end].iter().sum::<f64>() / len as f64;
    let width = (margin_ratio * len as f64).ceil() as usize;
    let left = start.saturating_sub(width)..start;
    let right = end..(end + width).min(track.len());
    let n = left.len() + right.len();
    let outer = if n == 0 {
        0.0
    } else {
        (track[left].iter().sum::<f64>() + track[right].iter().sum::<f64>()) / n as f64
    };
    inner - outer
}

/// Action classes whose score reaches `threshold`; the single best class
/// when none does.
pub fn selected_classes(action_scores: &[f64], threshold: f64) -> Vec<usize> {
    let picked: Vec<usize> = (0..action_scores.len())
        .filter(|&c| action_scores[c] >= threshold)
        .collect();
    if !picked.is_empty() || action_scores.is_empty() {
        return picked;
    }
    let best = (1..action_scores.len()).fold(0, |b, c| if action_scores[c] > action_scores[b] { c } else { b });
    vec![best]
}

/// Candidate proposals before NMS.
pub fn generate(cas: &Cas, attn: &AttentionTriple, cfg: &PostprocessConfig) -> Result<Vec<Proposal>> {
    if cas.len() != attn.len() {
        return Err(Error::shape("attention length", cas.len(), attn.len()));
    }
    let scores = video_scores(&weighted_cas(cas, attn, Branch::Instance)?, cfg.topk_ratio)?;
    let ins = attn.column(Branch::Instance);
    let mut out = Vec::new();
    for c in selected_classes(&scores[..cas.num_classes()], cfg.class_threshold) {
        let track: Vec<f64> = (0..cas.len())
            .map(|t| ins[t] * sigmoid(cas.logits.get(t, c)))
            .collect();
        for &th in &cfg.act_thresholds {
            for (start, end) in runs_above(&track, th) {
                out.push(Proposal {
                    class_id: c,
                    start,
                    end,
                    confidence: outer_inner_contrast(&track, start, end, cfg.outer_margin_ratio),
                });
            }
        }
    }
    Ok(out)
}

/// Intersection over union of two real intervals.
pub fn tiou(a: (f64, f64), b: (f64, f64)) -> f64 {
    let inter = (a.1.min(b.1) - a.0.max(b.0)).max(0.0);
    let union = (a.1 - a.0) + (b.1 - b.0) - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

fn span(p: &Proposal) -> (f64, f64) {
    (p.start as f64, p.end as f64)
}

/// Confidence descending, then earlier start, then lower class, then earlier end.
pub fn proposal_order(a: &Proposal, b: &Proposal) -> Ordering {
    b.confidence
        .total_cmp(&a.confidence)
        .then(a.start.cmp(&b.start))
        .then(a.class_id.cmp(&b.class_id))
        .then(a.end.cmp(&b.end))
}

/// Greedy per-class NMS.
pub fn nms(props: &[Proposal], iou_threshold: f64) -> Vec<Proposal> {
    let mut sorted = props.to_vec();
    sorted.sort_by(proposal_order);
    let mut kept: Vec<Proposal> = Vec::new();
    for p in sorted {
        let clash = kept
            .iter()
            .any(|k| k.class_id == p.class_id && tiou(span(k), span(&p)) >= iou_threshold);
        if !clash {
            kept.push(p);
        }
    }
    kept
}

/// `generate` followed by `nms`.
pub fn localize(cas: &Cas, attn: &AttentionTriple, cfg: &PostprocessConfig) -> Result<Vec<Proposal>> {
    cfg.validate()?;
    Ok(nms(&generate(cas, attn, cfg)?, cfg.nms_iou))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensorseq::Matrix;

    fn prop(class_id: usize, start: usize, end: usize, confidence: f64) -> Proposal {
        Proposal {
            class_id,
            start,
            end,
            confidence,
        }
    }

    #[test]
    fn runs_examples() {
        assert!(runs_above(&[0.0; 4], 0.1).is_empty());
        assert_eq!(runs_above(&[0.0, 1.0, 1.0, 0.0], 0.5), vec![(1, 3)]);
        assert_eq!(runs_above(&[1.0, 0.0, 1.0], 0.5), vec![(0, 1), (2, 3)]);
    }

    #[test]
    fn contrast_example() {
        assert_eq!(outer_inner_contrast(&[0.0, 1.0, 1.0, 0.0], 1, 3, 0.5), 1.0);
        // whole-video segment has no flanks
        assert_eq!(outer_inner_contrast(&[0.5, 0.5], 0, 2, 0.25), 0.5);
    }

    fn tracks(ins: &[f64], logits: &[f64]) -> (Cas, AttentionTriple) {
        let rows: Vec<Vec<f64>> = logits.iter().map(|&l| vec![l, 0.0]).collect();
        let cas = Cas::new(Matrix::from_rows(&rows).unwrap()).unwrap();
        let arows: Vec<Vec<f64>> = ins.iter().map(|&a| vec![a, 0.0, 1.0 - a]).collect();
        (cas, AttentionTriple::new(Matrix::from_rows(&arows).unwrap()).unwrap())
    }

    #[test]
    fn generate_on_zero_track() {
        let (cas, attn) = tracks(&[0.0; 5], &[3.0; 5]);
        assert!(generate(&cas, &attn, &PostprocessConfig::default()).unwrap().is_empty());
    }

    #[test]
    fn generate_single_run() {
        // attention [0,1,1,0] with huge logits gives u ≈ [0,1,1,0]
        let (cas, attn) = tracks(&[0.0, 1.0, 1.0, 0.0], &[50.0; 4]);
        let cfg = PostprocessConfig {
            act_thresholds: vec![0.5],
            outer_margin_ratio: 0.5,
            ..Default::default()
        };
        let props = generate(&cas, &attn, &cfg).unwrap();
        assert_eq!(props.len(), 1);
        assert_eq!((props[0].start, props[0].end), (1, 3));
        assert!((props[0].confidence - 1.0).abs() < 1e-12);
    }

    #[test]
    fn class_selection() {
        assert_eq!(selected_classes(&[0.3, 0.05, 0.2], 0.1), vec![0, 2]);
        assert_eq!(selected_classes(&[0.01, 0.04, 0.04], 0.1), vec![1]);
        assert!(selected_classes(&[], 0.1).is_empty());
    }

    #[test]
    fn tiou_examples() {
        assert_eq!(tiou((0.0, 10.0), (0.0, 10.0)), 1.0);
        assert_eq!(tiou((0.0, 1.0), (2.0, 3.0)), 0.0);
        assert!((tiou((0.0, 10.0), (5.0, 15.0)) - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn nms_examples() {
        assert_eq!(nms(&[prop(0, 0, 4, 0.3)], 0.5).len(), 1);
        let kept = nms(&[prop(0, 2, 6, 0.4), prop(0, 2, 6, 0.9)], 0.5);
        assert_eq!(kept, vec![prop(0, 2, 6, 0.9)]);
        // [0,10) vs [0,3): t-IoU 0.3
        assert!((tiou((0.0, 10.0), (0.0, 3.0)) - 0.3).abs() < 1e-15);
        assert_eq!(nms(&[prop(1, 0, 10, 0.5), prop(1, 0, 3, 0.6)], 0.5).len(), 2);
        // other class never suppresses
        assert_eq!(nms(&[prop(0, 0, 5, 0.5), prop(1, 0, 5, 0.6)], 0.5).len(), 2);
    }

    #[test]
    fn nms_tie_break_is_deterministic() {
        let a = prop(0, 3, 8, 0.5);
        let b = prop(0, 2, 8, 0.5);
        assert_eq!(nms(&[a, b], 0.5), vec![b]);
        assert_eq!(nms(&[b, a], 0.5), vec![b]);
    }

    mod props {
        use super::super::*;
        use crate::tensorseq::Matrix;
        use proptest::prelude::*;

        fn arb_props() -> impl Strategy<Value = Vec<Proposal>> {
            prop::collection::vec((0usize..3, 0usize..40, 1usize..15, 0f64..1.0), 0..40).prop_map(|v| {
                v.into_iter()
                    .map(|(c, s, l, conf)| Proposal {
                        class_id: c,
                        start: s,
                        end: s + l,
                        confidence: conf,
                    })
                    .collect()
            })
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(200))]

            #[test]
            fn nms_leaves_no_same_class_overlap(ps in arb_props(), th in 0.05f64..0.95) {
                let kept = nms(&ps, th);
                for (i, a) in kept.iter().enumerate() {
                    for b in &kept[i + 1..] {
                        if a.class_id == b.class_id {
                            prop_assert!(tiou(span(a), span(b)) < th);
                        }
                    }
                }
                let mut shuffled = ps.clone();
                shuffled.reverse();
                prop_assert_eq!(nms(&shuffled, th), kept);
            }

            #[test]
            fn higher_threshold_segments_nest(ins in prop::collection::vec(0f64..=1.0, 1..30), logit in -2f64..4.0) {
                let t = ins.len();
                let cas = Cas::new(Matrix::from_rows(&vec![vec![logit, -5.0]; t]).unwrap()).unwrap();
                let attn = AttentionTriple::new(
                    Matrix::from_rows(&ins.iter().map(|&a| vec![a, 0.0, 1.0 - a]).collect::<Vec<_>>()).unwrap(),
                ).unwrap();
                let cfg = PostprocessConfig { class_threshold: 0.0, ..Default::default() };
                let track: Vec<f64> = ins.iter().map(|a| a * sigmoid(logit)).collect();
                let props = generate(&cas, &attn, &cfg).unwrap();
                for p in &props {
                    prop_assert!(p.start < p.end && p.end <= t);
                }
                for w in cfg.act_thresholds.windows(2) {
                    let lo = runs_above(&track, w[0]);
                    for (s, e) in runs_above(&track, w[1]) {
                        prop_assert!(lo.iter().any(|&(a, b)| a <= s && e <= b));
                    }
                }
            }
        }
    }
}
