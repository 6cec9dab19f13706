//! Slow-motion mask mining.
//!
//! A frozen miner backbone runs on features sub-sampled by `tau`. Slow
//! instances, sped back up by the sub-sampling, light up its CAS; the
//! max-over-actions track is min-max normalized, sharpened by the
//! coefficient-of-variation power law, thresholded, and stretched back to
//! the original length by nearest neighbour.

use crate::backbone::{forward, BackboneParams};
use crate::error::{Error, Result};
use crate::tensorseq::{min_max_normalize, Cas, FeatureSequence, Matrix};

/// Lower clamp on the smoothing exponent.
pub const ALPHA_MIN: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MiningConfig {
    pub tau: usize,
    pub theta: f64,
    pub s: f64,
    pub smooth_enabled: bool,
}

impl Default for MiningConfig {
    fn default() -> Self {
        Self {
            tau: 4,
            theta: 0.4,
            s: 0.3,
            smooth_enabled: true,
        }
    }
}

impl MiningConfig {
    pub fn validate(&self) -> Result<()> {
        if self.tau == 0 {
            return Err(Error::InvalidArgument("tau must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.theta) {
            return Err(Error::InvalidArgument(format!("theta {} outside [0,1]", self.theta)));
        }
        if !(self.s.is_finite() && self.s >= 0.0) {
            return Err(Error::InvalidArgument(format!("smoothing scale {} must be >= 0", self.s)));
        }
        Ok(())
    }
}

/// Binary per-snippet mask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SlowMask {
    pub bits: Vec<u8>,
}

impl SlowMask {
    pub fn ones(t_len: usize) -> Self {
        Self { bits: vec![1; t_len] }
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn count_ones(&self) -> usize {
        self.bits.iter().filter(|&&b| b == 1).count()
    }

    pub fn to_bitstring(&self) -> String {
        self.bits.iter().map(|&b| if b == 1 { '1' } else { '0' }).collect()
    }

    pub fn from_bitstring(s: &str) -> Result<Self> {
        let bits = s
            .chars()
            .map(|ch| match ch {
                '0' => Ok(0),
                '1' => Ok(1),
                other => Err(Error::InvalidInput(format!("mask character {other:?} is not 0/1"))),
            })
            .collect::<Result<Vec<u8>>>()?;
        if bits.is_empty() {
            return Err(Error::InvalidInput("empty mask".into()));
        }
        Ok(Self { bits })
    }
}

/// Keeps rows `0, tau, 2·tau, …` for `floor(T/tau)` rows.
pub fn subsample(x: &FeatureSequence, tau: usize) -> Result<FeatureSequence> {
    if tau == 0 {
        return Err(Error::InvalidArgument("tau must be >= 1".into()));
    }
    let n = x.len() / tau;
    if n == 0 {
        return Err(Error::InvalidInput(format!(
            "sequence of length {} is shorter than the sub-sampling ratio {tau}",
            x.len()
        )));
    }
    Ok(x.with_data(x.data().select_rows((0..n).map(|i| i * tau))))
}

/// Per-snippet maximum over the action columns (background excluded).
pub fn activation_track(cas: &Cas) -> Vec<f64> {
    let c = cas.num_classes();
    cas.logits
        .iter_rows()
        .map(|r| r[..c].iter().copied().fold(f64::NEG_INFINITY, f64::max))
        .collect()
}

/// Smoothing exponent `1 - s·c_v` from the population mean and deviation,
/// clamped to `[ALPHA_MIN, 1]`. `None` when the mean is zero.
pub fn smoothing_exponent(m_norm: &[f64], s: f64) -> Option<f64> {
    let n = m_norm.len() as f64;
    let mean = m_norm.iter().sum::<f64>() / n;
    if mean == 0.0 {
        return None;
    }
    let var = m_norm.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let cv = var.sqrt() / mean;
    Some((1.0 - s * cv).clamp(ALPHA_MIN, 1.0))
}

/// Raises each activation to the smoothing exponent.
pub fn smooth_activations(m_norm: &[f64], s: f64, smooth_enabled: bool) -> Vec<f64> {
    if !smooth_enabled || m_norm.is_empty() {
        return m_norm.to_vec();
    }
    match smoothing_exponent(m_norm, s) {
        Some(alpha) if alpha != 1.0 => m_norm.iter().map(|v| v.powf(alpha)).collect(),
        _ => m_norm.to_vec(),
    }
}

/// `1` where the value is at least `theta`.
pub fn binarize(m_smooth: &[f64], theta: f64) -> Vec<u8> {
    m_smooth.iter().map(|&v| u8::from(v >= theta)).collect()
}

/// Nearest-neighbour stretch to length `t_len` using bin centres:
/// source index `min(floor((j + 0.5)·L/T), L-1)`.
pub fn upsample_mask(mask: &[u8], t_len: usize) -> Result<SlowMask> {
    let l = mask.len();
    if l == 0 || t_len < l {
        return Err(Error::InvalidArgument(format!(
            "cannot upsample a mask of length {l} to {t_len}"
        )));
    }
    let bits = (0..t_len)
        .map(|j| {
            let src = (((j as f64 + 0.5) * l as f64 / t_len as f64).floor() as usize).min(l - 1);
            mask[src]
        })
        .collect();
    Ok(SlowMask { bits })
}

/// Zeroes the rows where the mask is 0.
pub fn apply_mask(x: &FeatureSequence, mask: &SlowMask) -> Result<FeatureSequence> {
    if mask.len() != x.len() {
        return Err(Error::shape("mask length", x.len(), mask.len()));
    }
    let mut data: Matrix = x.data().clone();
    for (t, &b) in mask.bits.iter().enumerate() {
        if b == 0 {
            data.row_mut(t).fill(0.0);
        }
    }
    Ok(x.with_data(data))
}

/// Every intermediate of one mask generation.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskTrace {
    pub track: Vec<f64>,
    pub normalized: Vec<f64>,
    pub smoothed: Vec<f64>,
    pub sub_mask: Vec<u8>,
    pub mask: SlowMask,
}

pub fn trace_mask(miner: &BackboneParams, x: &FeatureSequence, cfg: &MiningConfig) -> Result<MaskTrace> {
    cfg.validate()?;
    let sub = subsample(x, cfg.tau)?;
    let out = forward(miner, &sub)?;
    let track = activation_track(&out.cas);
    let normalized = min_max_normalize(&track)?;
    let smoothed = smooth_activations(&normalized, cfg.s, cfg.smooth_enabled);
    let sub_mask = binarize(&smoothed, cfg.theta);
    let mask = upsample_mask(&sub_mask, x.len())?;
    Ok(MaskTrace {
        track,
        normalized,
        smoothed,
        sub_mask,
        mask,
    })
}

pub fn generate_mask(miner: &BackboneParams, x: &FeatureSequence, cfg: &MiningConfig) -> Result<SlowMask> {
    Ok(trace_mask(miner, x, cfg)?.mask)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backbone::init_params;

    fn seq(t: usize, d: usize) -> FeatureSequence {
        let data = (0..t * d).map(|i| i as f64).collect();
        FeatureSequence::from_matrix(Matrix::new(t, d, data).unwrap()).unwrap()
    }

    #[test]
    fn subsample_examples() {
        let x = seq(9, 2);
        let s = subsample(&x, 4).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s.row(0), x.row(0));
        assert_eq!(s.row(1), x.row(4));
        assert_eq!(subsample(&x, 1).unwrap(), x);
        let s8 = subsample(&seq(8, 1), 4).unwrap();
        assert_eq!(s8.data().as_slice(), &[0.0, 4.0]);
        assert!(matches!(subsample(&seq(3, 1), 4), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn activation_track_examples() {
        let cas = Cas::new(Matrix::from_rows(&[vec![3.0, 5.0, 9.0]]).unwrap()).unwrap();
        assert_eq!(activation_track(&cas), vec![5.0]);
        let cas = Cas::new(Matrix::from_rows(&[vec![0.7, 2.0], vec![-0.1, 3.0]]).unwrap()).unwrap();
        assert_eq!(activation_track(&cas), vec![0.7, -0.1]);
        let cas = Cas::new(Matrix::from_rows(&[vec![1.0, 0.0, 4.0], vec![0.0, 2.0, 4.0]]).unwrap()).unwrap();
        assert_eq!(activation_track(&cas), vec![1.0, 2.0]);
    }

    #[test]
    fn smoothing_examples() {
        assert_eq!(smooth_activations(&[0.5, 0.5], 0.3, true), vec![0.5, 0.5]);
        let alpha = smoothing_exponent(&[0.2, 0.8], 0.3).unwrap();
        assert!((alpha - 0.82).abs() < 1e-12);
        let out = smooth_activations(&[0.2, 0.8], 0.3, true);
        assert_eq!(out, vec![0.2f64.powf(alpha), 0.8f64.powf(alpha)]);
        assert_eq!(smooth_activations(&[0.2, 0.8, 0.0], 0.0, true), vec![0.2, 0.8, 0.0]);
        assert_eq!(smooth_activations(&[0.2, 0.8], 0.3, false), vec![0.2, 0.8]);
        assert_eq!(smooth_activations(&[0.0, 0.0], 0.3, true), vec![0.0, 0.0]);
    }

    #[test]
    fn alpha_clamped_for_high_variance_tracks() {
        // one spike among zeros: c_v = sqrt(n-1), large enough to push 1 - s·c_v below zero
        let mut v = vec![0.0; 99];
        v.push(1.0);
        assert_eq!(smoothing_exponent(&v, 0.3), Some(ALPHA_MIN));
    }

    #[test]
    fn binarize_examples() {
        assert_eq!(binarize(&[0.5, 0.3], 0.4), vec![1, 0]);
        assert_eq!(binarize(&[0.4], 0.4), vec![1]);
        assert_eq!(MiningConfig::default().theta, 0.4);
    }

    #[test]
    fn upsample_examples() {
        assert_eq!(upsample_mask(&[1, 0], 4).unwrap().bits, vec![1, 1, 0, 0]);
        assert_eq!(upsample_mask(&[1], 7).unwrap().bits, vec![1; 7]);
        assert_eq!(upsample_mask(&[1, 0, 1], 3).unwrap().bits, vec![1, 0, 1]);
        assert!(upsample_mask(&[1, 0], 1).is_err());
        assert!(upsample_mask(&[], 3).is_err());
    }

    #[test]
    fn apply_mask_examples() {
        let x = FeatureSequence::from_matrix(Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap()).unwrap();
        assert_eq!(apply_mask(&x, &SlowMask::ones(2)).unwrap(), x);
        let zero = apply_mask(&x, &SlowMask { bits: vec![0, 0] }).unwrap();
        assert!(zero.data().as_slice().iter().all(|&v| v == 0.0));
        let half = apply_mask(&x, &SlowMask { bits: vec![1, 0] }).unwrap();
        assert_eq!(half.data().as_slice(), &[1.0, 2.0, 0.0, 0.0]);
        assert!(apply_mask(&x, &SlowMask::ones(3)).is_err());
    }

    #[test]
    fn degenerate_compositions() {
        let mut miner = init_params(3, 4, 2, 1, 9);
        for t in miner.tensors_mut() {
            t.fill(0.0);
        }
        let x = FeatureSequence::from_matrix(Matrix::filled(12, 3, 0.5)).unwrap();
        let mask = generate_mask(&miner, &x, &MiningConfig::default()).unwrap();
        assert_eq!(mask.bits, vec![0; 12]);

        let miner = init_params(3, 4, 2, 1, 9);
        let cfg = MiningConfig {
            tau: 1,
            theta: 0.0,
            ..Default::default()
        };
        let x = seq(10, 3);
        assert_eq!(generate_mask(&miner, &x, &cfg).unwrap(), SlowMask::ones(10));
    }

    #[test]
    fn bitstring_round_trip() {
        let m = SlowMask::from_bitstring("0011110000").unwrap();
        assert_eq!(m.count_ones(), 4);
        assert_eq!(m.to_bitstring(), "0011110000");
        assert!(SlowMask::from_bitstring("01x").is_err());
    }

    mod props {
        use super::super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(200))]

            #[test]
            fn smoothing_preserves_order_and_raises(v in prop::collection::vec(0f64..=1.0, 1..40), s in 0f64..2.0) {
                let out = smooth_activations(&v, s, true);
                for i in 0..v.len() {
                    prop_assert!(out[i] >= v[i] - 1e-15);
                    prop_assert!((0.0..=1.0).contains(&out[i]));
                    for j in 0..v.len() {
                        if v[i] <= v[j] {
                            prop_assert!(out[i] <= out[j]);
                        }
                    }
                }
            }

            #[test]
            fn binarize_monotone_in_theta(v in prop::collection::vec(0f64..=1.0, 1..40), a in 0f64..=1.0, b in 0f64..=1.0) {
                let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
                let ones = |th| binarize(&v, th).iter().filter(|&&x| x == 1).count();
                prop_assert!(ones(lo) >= ones(hi));
            }

            #[test]
            fn upsample_length_and_constancy(l in 1usize..20, extra in 0usize..60, bit in 0u8..=1) {
                let t = l + extra;
                let up = upsample_mask(&vec![bit; l], t).unwrap();
                prop_assert_eq!(up.len(), t);
                prop_assert!(up.bits.iter().all(|&b| b == bit));
            }

            #[test]
            fn apply_mask_idempotent(bits in prop::collection::vec(0u8..=1, 1..20), d in 1usize..4) {
                let t = bits.len();
                let data = (0..t * d).map(|i| (i as f64).sin()).collect();
                let x = FeatureSequence::from_matrix(Matrix::new(t, d, data).unwrap()).unwrap();
                let m = SlowMask { bits };
                let once = apply_mask(&x, &m).unwrap();
                prop_assert_eq!(apply_mask(&once, &m).unwrap(), once);
            }
        }
    }
}
