//! Detection AP and mAP over t-IoU thresholds.
//!
//! AP is the exact sum of precision at each true-positive rank divided by
//! the number of ground-truth segments (no 11-point interpolation). Matching
//! is greedy in confidence order; a detection whose best unmatched segment
//! in the same video falls below the threshold is a false positive, so a
//! duplicate on an already-claimed segment counts against precision.

use std::cmp::Ordering;
use std::collections::BTreeSet;
use std::fmt::Write as _;

use crate::proposals::tiou;

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthSegment {
    pub video_id: String,
    pub class_id: usize,
    pub start_sec: f64,
    pub end_sec: f64,
    pub slow_motion: bool,
}

/// A proposal placed on a video's time axis.
#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub video_id: String,
    pub class_id: usize,
    pub start_sec: f64,
    pub end_sec: f64,
    pub confidence: f64,
}

/// Confidence descending; ties by earlier start, lower class, video id, earlier end.
pub fn detection_order(a: &Detection, b: &Detection) -> Ordering {
    b.confidence
        .total_cmp(&a.confidence)
        .then(a.start_sec.total_cmp(&b.start_sec))
        .then(a.class_id.cmp(&b.class_id))
        .then(a.video_id.cmp(&b.video_id))
        .then(a.end_sec.total_cmp(&b.end_sec))
}

/// AP for one class. `dets` must already be in [`detection_order`].
pub fn average_precision(dets: &[Detection], gts: &[GroundTruthSegment], iou_t: f64) -> f64 {
    if gts.is_empty() {
        return 0.0;
    }
    let mut matched = vec![false; gts.len()];
    let mut tp = 0usize;
    let mut ap = 0.0;
    for (rank, d) in dets.iter().enumerate() {
        let best = gts
            .iter()
            .enumerate()
            .filter(|(i, g)| !matched[*i] && g.video_id == d.video_id)
            .map(|(i, g)| (i, tiou((d.start_sec, d.end_sec), (g.start_sec, g.end_sec))))
            .max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0)));
        if let Some((i, iou)) = best {
            if iou >= iou_t {
                matched[i] = true;
                tp += 1;
                ap += tp as f64 / (rank + 1) as f64;
            }
        }
    }
    ap / gts.len() as f64
}

/// Mean AP over the classes that have at least one ground-truth segment.
pub fn map_at(dets: &[Detection], gts: &[GroundTruthSegment], iou_t: f64) -> f64 {
    let classes: BTreeSet<usize> = gts.iter().map(|g| g.class_id).collect();
    if classes.is_empty() {
        return 0.0;
    }
    let mut sorted = dets.to_vec();
    sorted.sort_by(detection_order);
    let total: f64 = classes
        .iter()
        .map(|&c| {
            let d: Vec<Detection> = sorted.iter().filter(|d| d.class_id == c).cloned().collect();
            let g: Vec<GroundTruthSegment> = gts.iter().filter(|g| g.class_id == c).cloned().collect();
            average_precision(&d, &g, iou_t)
        })
        .sum();
    total / classes.len() as f64
}

/// A named set of t-IoU thresholds whose mAPs are averaged.
#[derive(Debug, Clone, PartialEq)]
pub struct Band {
    pub name: String,
    pub thresholds: Vec<f64>,
}

impl Band {
    /// Thresholds `lo, lo+step, …, hi` in hundredths, e.g. `(10, 70, 10)` is `[0.1:0.1:0.7]`.
    pub fn hundredths(name: &str, lo: u32, hi: u32, step: u32) -> Self {
        Self {
            name: name.to_string(),
            thresholds: (lo..=hi).step_by(step as usize).map(|v| f64::from(v) / 100.0).collect(),
        }
    }

    pub fn thumos() -> Self {
        Self::hundredths("avg[0.1:0.7]", 10, 70, 10)
    }

    pub fn anet() -> Self {
        Self::hundredths("avg[0.5:0.95]", 50, 95, 5)
    }

    pub fn defaults() -> Vec<Band> {
        vec![
            Self::thumos(),
            Self::hundredths("avg[0.3:0.7]", 30, 70, 10),
            Self::hundredths("avg[0.1:0.5]", 10, 50, 10),
            Self::anet(),
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MapReport {
    /// `(threshold, mAP)`, ascending by threshold.
    pub per_threshold: Vec<(f64, f64)>,
    /// `(band name, average mAP)`.
    pub bands: Vec<(String, f64)>,
}

impl MapReport {
    pub fn map_at(&self, iou_t: f64) -> Option<f64> {
        self.per_threshold.iter().find(|(t, _)| *t == iou_t).map(|(_, m)| *m)
    }

    pub fn band(&self, name: &str) -> Option<f64> {
        self.bands.iter().find(|(n, _)| n == name).map(|(_, v)| *v)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("threshold,mAP\n");
        for (t, m) in &self.per_threshold {
            let _ = writeln!(s, "{t},{m}");
        }
        s
    }

    /// Thresholds across, one row of percentages, band averages on the right.
    pub fn to_table(&self) -> String {
        let mut header = String::from("| method |");
        let mut row = String::from("| mAP(%) |");
        for (t, m) in &self.per_threshold {
            let _ = write!(header, " {t:.2} |");
            let _ = write!(row, " {:.1} |", 100.0 * m);
        }
        for (name, v) in &self.bands {
            let _ = write!(header, " {name} |");
            let _ = write!(row, " {:.1} |", 100.0 * v);
        }
        let sep: String = header.chars().map(|c| if c == '|' { '|' } else { '-' }).collect();
        format!("{header}\n{sep}\n{row}\n")
    }
}

pub fn map_bands(dets: &[Detection], gts: &[GroundTruthSegment], bands: &[Band]) -> MapReport {
    let mut grid: Vec<f64> = bands.iter().flat_map(|b| b.thresholds.iter().copied()).collect();
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    let per_threshold: Vec<(f64, f64)> = grid.iter().map(|&t| (t, map_at(dets, gts, t))).collect();
    let lookup = |t: f64| per_threshold.iter().find(|(g, _)| *g == t).map(|(_, m)| *m).unwrap_or(0.0);
    let bands = bands
        .iter()
        .map(|b| {
            let avg = if b.thresholds.is_empty() {
                0.0
            } else {
                b.thresholds.iter().map(|&t| lookup(t)).sum::<f64>() / b.thresholds.len() as f64
            };
            (b.name.clone(), avg)
        })
        .collect();
    MapReport { per_threshold, bands }
}

pub fn slow_subset_filter(gts: &[GroundTruthSegment]) -> Vec<GroundTruthSegment> {
    gts.iter().filter(|g| g.slow_motion).cloned().collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gt(v: &str, c: usize, s: f64, e: f64) -> GroundTruthSegment {
        GroundTruthSegment {
            video_id: v.into(),
            class_id: c,
            start_sec: s,
            end_sec: e,
            slow_motion: false,
        }
    }

    fn det(v: &str, c: usize, s: f64, e: f64, conf: f64) -> Detection {
        Detection {
            video_id: v.into(),
            class_id: c,
            start_sec: s,
            end_sec: e,
            confidence: conf,
        }
    }

    #[test]
    fn ap_examples() {
        let g = [gt("a", 0, 0.0, 5.0)];
        assert_eq!(average_precision(&[det("a", 0, 0.0, 5.0, 0.9)], &g, 0.5), 1.0);
        let fp_then_tp = [det("a", 0, 10.0, 12.0, 0.9), det("a", 0, 0.0, 5.0, 0.5)];
        assert_eq!(average_precision(&fp_then_tp, &g, 0.5), 0.5);
        assert_eq!(average_precision(&[], &g, 0.5), 0.0);
        assert_eq!(average_precision(&fp_then_tp, &[], 0.5), 0.0);
    }

    #[test]
    fn wrong_video_never_matches() {
        let g = [gt("a", 0, 0.0, 5.0)];
        assert_eq!(average_precision(&[det("b", 0, 0.0, 5.0, 0.9)], &g, 0.1), 0.0);
    }

    #[test]
    fn duplicates_give_one_tp() {
        let g = [gt("a", 0, 0.0, 5.0)];
        let d = [det("a", 0, 0.0, 5.0, 0.9), det("a", 0, 0.0, 5.0, 0.8)];
        // TP at rank 1 only
        assert_eq!(average_precision(&d, &g, 0.5), 1.0);
        let g2 = [gt("a", 0, 0.0, 5.0), gt("a", 0, 20.0, 25.0)];
        assert_eq!(average_precision(&d, &g2, 0.5), 0.5);
    }

    #[test]
    fn map_examples() {
        let gts = [gt("a", 0, 0.0, 5.0), gt("a", 1, 6.0, 9.0)];
        let perfect = [det("a", 0, 0.0, 5.0, 0.9), det("a", 1, 6.0, 9.0, 0.8)];
        assert_eq!(map_at(&perfect, &gts, 0.7), 1.0);
        let half = [det("a", 0, 0.0, 5.0, 0.9), det("a", 1, 20.0, 30.0, 0.8)];
        assert_eq!(map_at(&half, &gts, 0.5), 0.5);
        assert_eq!(map_at(&half, &[], 0.5), 0.0);
    }

    #[test]
    fn band_examples() {
        let gts = [gt("a", 0, 0.0, 5.0)];
        let d = [det("a", 0, 0.0, 4.0, 0.9)];
        let one = Band {
            name: "x".into(),
            thresholds: vec![0.5],
        };
        let r = map_bands(&d, &gts, &[one]);
        assert_eq!(r.band("x"), Some(map_at(&d, &gts, 0.5)));

        let perfect = [det("a", 0, 0.0, 5.0, 0.9)];
        let r = map_bands(&perfect, &gts, &Band::defaults());
        assert!(r.bands.iter().all(|(_, v)| *v == 1.0));
        assert_eq!(r.per_threshold.len(), 7 + 10 - 3);
        assert!(r.to_csv().starts_with("threshold,mAP\n0.1,1\n"));
        assert!(r.to_table().contains("avg[0.1:0.7]"));
    }

    #[test]
    fn band_grid_values() {
        assert_eq!(Band::thumos().thresholds, vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7]);
        assert_eq!(Band::anet().thresholds.len(), 10);
        assert_eq!(*Band::anet().thresholds.last().unwrap(), 0.95);
    }

    #[test]
    fn slow_filter_counts() {
        let mut gts = vec![gt("a", 0, 0.0, 1.0), gt("a", 1, 2.0, 3.0), gt("b", 0, 0.0, 4.0)];
        assert!(slow_subset_filter(&gts).is_empty());
        gts[1].slow_motion = true;
        gts[2].slow_motion = true;
        assert_eq!(slow_subset_filter(&gts).len(), 2);
        for g in &mut gts {
            g.slow_motion = true;
        }
        assert_eq!(slow_subset_filter(&gts), gts);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn arb_case() -> impl Strategy<Value = (Vec<Detection>, Vec<GroundTruthSegment>)> {
            let g = prop::collection::vec((0usize..2, 0u8..3, 0f64..20.0, 0.5f64..6.0), 1..8);
            let d = prop::collection::vec((0usize..2, 0u8..3, 0f64..20.0, 0.5f64..6.0, 0f64..1.0), 0..15);
            (g, d).prop_map(|(g, d)| {
                let gts = g
                    .into_iter()
                    .map(|(c, v, s, l)| gt(&format!("v{v}"), c, s, s + l))
                    .collect();
                let dets = d
                    .into_iter()
                    .map(|(c, v, s, l, conf)| det(&format!("v{v}"), c, s, s + l, conf))
                    .collect();
                (dets, gts)
            })
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(200))]

            #[test]
            fn ap_bounded_and_monotone_in_iou((dets, gts) in arb_case()) {
                let mut prev = f64::INFINITY;
                for i in 1..=9 {
                    let m = map_at(&dets, &gts, f64::from(i) / 10.0);
                    prop_assert!((0.0..=1.0).contains(&m));
                    prop_assert!(m <= prev + 1e-12);
                    prev = m;
                }
            }

            #[test]
            fn map_ignores_input_order((dets, gts) in arb_case()) {
                let mut rev = dets.clone();
                rev.reverse();
                prop_assert_eq!(map_at(&dets, &gts, 0.3), map_at(&rev, &gts, 0.3));
            }
        }
    }
}
