//! Numeric value types shared by the whole pipeline and the handful of
//! vector primitives (normalization, softmax, top-k pooling) built on them.
//!
//! Everything here is plain `f64` row-major storage; there is no general
//! tensor algebra, only what the backbone, losses and mask pipeline need.

use crate::error::{Error, Result};

/// Seconds covered by one 16-frame snippet at 25 fps.
pub const DEFAULT_SNIPPET_SECONDS: f64 = 16.0 / 25.0;

/// Dense row-major matrix of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape(
                "matrix data length",
                format!("{rows}x{cols}={}", rows * cols),
                data.len(),
            ));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    /// Builds a matrix from equal-length rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != cols {
                return Err(Error::shape(&format!("row {i} length"), cols, r.len()));
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, value: f64) {
        self.data[r * self.cols + c] = value;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self.get(r, c)).collect()
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        // chunks_exact panics on a zero chunk size
        self.data.chunks_exact(self.cols.max(1)).take(self.rows)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn same_shape(&self, other: &Matrix) -> bool {
        self.rows == other.rows && self.cols == other.cols
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Keeps only the listed rows, in order.
    pub fn select_rows(&self, indices: impl IntoIterator<Item = usize>) -> Matrix {
        let mut data = Vec::new();
        let mut rows = 0;
        for i in indices {
            data.extend_from_slice(self.row(i));
            rows += 1;
        }
        Matrix {
            rows,
            cols: self.cols,
            data,
        }
    }
}

/// Per-snippet feature matrix of one video, `T` snippets by `d` dims.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence {
    data: Matrix,
    snippet_seconds: f64,
}

impl FeatureSequence {
    pub fn new(data: Matrix, snippet_seconds: f64) -> Result<Self> {
        if data.rows() == 0 || data.cols() == 0 {
            return Err(Error::InvalidInput(format!(
                "feature sequence must be non-empty, got {}x{}",
                data.rows(),
                data.cols()
            )));
        }
        if !data.all_finite() {
            return Err(Error::InvalidInput(
                "feature sequence contains non-finite values".into(),
            ));
        }
        if !(snippet_seconds.is_finite() && snippet_seconds > 0.0) {
            return Err(Error::InvalidInput(format!(
                "snippet_seconds must be positive, got {snippet_seconds}"
            )));
        }
        Ok(Self {
            data,
            snippet_seconds,
        })
    }

    /// Uses the default 16/25 s snippet duration.
    pub fn from_matrix(data: Matrix) -> Result<Self> {
        Self::new(data, DEFAULT_SNIPPET_SECONDS)
    }

    pub fn len(&self) -> usize {
        self.data.rows()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn dim(&self) -> usize {
        self.data.cols()
    }

    pub fn snippet_seconds(&self) -> f64 {
        self.snippet_seconds
    }

    pub fn data(&self) -> &Matrix {
        &self.data
    }

    pub fn row(&self, t: usize) -> &[f64] {
        self.data.row(t)
    }

    pub(crate) fn with_data(&self, data: Matrix) -> Self {
        debug_assert!(data.rows() >= 1 && data.cols() == self.dim());
        Self {
            data,
            snippet_seconds: self.snippet_seconds,
        }
    }
}

/// Multi-hot video label over `C` action classes plus the background slot at index `C`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VideoLabel {
    y: Vec<u8>,
}

impl VideoLabel {
    pub fn new(y: Vec<u8>) -> Result<Self> {
        if y.len() < 2 {
            return Err(Error::InvalidInput(format!(
                "label needs at least one action class plus background, got length {}",
                y.len()
            )));
        }
        if let Some(bad) = y.iter().find(|&&v| v > 1) {
            return Err(Error::InvalidInput(format!("label entry {bad} is not binary")));
        }
        Ok(Self { y })
    }

    /// Label with the given action classes set and the background bit clear.
    pub fn from_classes(num_classes: usize, classes: &[usize]) -> Result<Self> {
        let mut y = vec![0u8; num_classes + 1];
        for &c in classes {
            if c >= num_classes {
                return Err(Error::InvalidInput(format!(
                    "class {c} out of range for {num_classes} classes"
                )));
            }
            y[c] = 1;
        }
        Self::new(y)
    }

    pub fn num_classes(&self) -> usize {
        self.y.len() - 1
    }

    pub fn bits(&self) -> &[u8] {
        &self.y
    }

    pub fn has_class(&self, c: usize) -> bool {
        self.y.get(c).copied() == Some(1)
    }

    /// Action classes present, ascending.
    pub fn classes(&self) -> Vec<usize> {
        (0..self.num_classes()).filter(|&c| self.y[c] == 1).collect()
    }

    pub fn has_action(&self) -> bool {
        self.y[..self.num_classes()].iter().any(|&v| v == 1)
    }
}

/// Class activation sequence: `T × (C+1)` logits, background in the last column.
#[derive(Debug, Clone, PartialEq)]
pub struct Cas {
    pub logits: Matrix,
}

impl Cas {
    pub fn new(logits: Matrix) -> Result<Self> {
        if !logits.all_finite() {
            return Err(Error::InvalidInput("CAS contains non-finite logits".into()));
        }
        Ok(Self { logits })
    }

    pub fn len(&self) -> usize {
        self.logits.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.logits.rows() == 0
    }

    /// Number of action classes (columns minus background).
    pub fn num_classes(&self) -> usize {
        self.logits.cols().saturating_sub(1)
    }
}

/// Attention branch selector; also the column index into [`AttentionTriple`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Branch {
    Instance = 0,
    Context = 1,
    Background = 2,
}

impl Branch {
    pub const ALL: [Branch; 3] = [Branch::Instance, Branch::Context, Branch::Background];

    #[inline]
    pub fn index(self) -> usize {
        self as usize
    }
}

/// `T × 3` attention weights with columns (instance, context, background).
///
/// Backbone outputs lie on the simplex row-wise. Fused outputs from the
/// localizer are elementwise maxima and generally do not, so the simplex
/// property is checked on demand rather than enforced at construction.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionTriple {
    pub weights: Matrix,
}

impl AttentionTriple {
    pub fn new(weights: Matrix) -> Result<Self> {
        if weights.cols() != 3 {
            return Err(Error::shape("attention columns", 3, weights.cols()));
        }
        if weights.as_slice().iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidInput("attention weight outside [0,1]".into()));
        }
        Ok(Self { weights })
    }

    pub fn len(&self) -> usize {
        self.weights.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.rows() == 0
    }

    #[inline]
    pub fn get(&self, t: usize, branch: Branch) -> f64 {
        self.weights.get(t, branch.index())
    }

    pub fn column(&self, branch: Branch) -> Vec<f64> {
        self.weights.column(branch.index())
    }

    pub fn is_simplex(&self, tol: f64) -> bool {
        self.weights
            .iter_rows()
            .all(|r| (r.iter().sum::<f64>() - 1.0).abs() <= tol)
    }
}

fn check_finite(v: &[f64], what: &str) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("{what}: non-finite input")))
    }
}

/// Rescales to `[0,1]`. A constant vector maps to all zeros.
pub fn min_max_normalize(v: &[f64]) -> Result<Vec<f64>> {
    if v.is_empty() {
        return Err(Error::InvalidInput("min_max_normalize: empty input".into()));
    }
    check_finite(v, "min_max_normalize")?;
    let (lo, hi) = v
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)));
    if hi == lo {
        return Ok(vec![0.0; v.len()]);
    }
    let span = hi - lo;
    Ok(v.iter().map(|&x| ((x - lo) / span).clamp(0.0, 1.0)).collect())
}

/// Max-shifted softmax.
pub fn softmax(v: &[f64]) -> Result<Vec<f64>> {
    check_finite(v, "softmax")?;
    Ok(softmax_unchecked(v))
}

pub(crate) fn softmax_unchecked(v: &[f64]) -> Vec<f64> {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = v.iter().map(|&x| (x - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Indices of the `k` largest entries, ordered by value descending and then
/// by index ascending, so equal values resolve to the lowest index.
pub fn topk_indices(v: &[f64], k: usize) -> Result<Vec<usize>> {
    if k == 0 || k > v.len() {
        return Err(Error::InvalidArgument(format!(
            "top-k: k={k} outside 1..={}",
            v.len()
        )));
    }
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[b].total_cmp(&v[a]).then(a.cmp(&b)));
    idx.truncate(k);
    Ok(idx)
}

/// Mean of the `k` largest entries.
pub fn topk_mean(v: &[f64], k: usize) -> Result<f64> {
    let idx = topk_indices(v, k)?;
    Ok(idx.iter().map(|&i| v[i]).sum::<f64>() / k as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn min_max_examples() {
        assert!(close(&min_max_normalize(&[2.0, 4.0, 8.0]).unwrap(), &[0.0, 1.0 / 3.0, 1.0], 1e-15));
        assert_eq!(min_max_normalize(&[5.0, 5.0, 5.0]).unwrap(), vec![0.0; 3]);
        assert_eq!(min_max_normalize(&[0.0, 1.0]).unwrap(), vec![0.0, 1.0]);
    }

    #[test]
    fn min_max_rejects_bad_input() {
        assert!(matches!(min_max_normalize(&[1.0, f64::NAN]), Err(Error::InvalidInput(_))));
        assert!(matches!(min_max_normalize(&[]), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn softmax_examples() {
        assert!(close(&softmax(&[0.0; 3]).unwrap(), &[1.0 / 3.0; 3], 1e-15));
        let big = softmax(&[1000.0, 0.0]).unwrap();
        assert!(big.iter().all(|v| v.is_finite()));
        assert!((big[0] - 1.0).abs() < 1e-15 && big[1] < 1e-300);
        assert!(close(&softmax(&[2f64.ln(), 0.0]).unwrap(), &[2.0 / 3.0, 1.0 / 3.0], 1e-15));
        assert!(softmax(&[f64::INFINITY]).is_err());
    }

    #[test]
    fn topk_examples() {
        assert_eq!(topk_mean(&[1.0, 3.0, 2.0], 2).unwrap(), 2.5);
        assert_eq!(topk_mean(&[7.0], 1).unwrap(), 7.0);
        assert_eq!(topk_mean(&[1.0; 4], 3).unwrap(), 1.0);
        assert!(matches!(topk_mean(&[1.0], 0), Err(Error::InvalidArgument(_))));
        assert!(matches!(topk_mean(&[1.0], 2), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn topk_ties_pick_lowest_index() {
        assert_eq!(topk_indices(&[2.0, 5.0, 5.0, 5.0], 2).unwrap(), vec![1, 2]);
    }

    #[test]
    fn label_helpers() {
        let y = VideoLabel::from_classes(3, &[0, 2]).unwrap();
        assert_eq!(y.bits(), &[1, 0, 1, 0]);
        assert_eq!(y.classes(), vec![0, 2]);
        assert!(VideoLabel::from_classes(3, &[3]).is_err());
        assert!(VideoLabel::new(vec![0, 2]).is_err());
    }

    #[test]
    fn feature_sequence_invariants() {
        assert!(FeatureSequence::from_matrix(Matrix::zeros(0, 3)).is_err());
        assert!(FeatureSequence::from_matrix(Matrix::filled(2, 2, f64::NAN)).is_err());
        let fs = FeatureSequence::from_matrix(Matrix::zeros(4, 3)).unwrap();
        assert_eq!((fs.len(), fs.dim()), (4, 3));
        assert_eq!(fs.snippet_seconds(), 0.64);
    }

    mod props {
        use super::super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn min_max_in_unit_range_and_keeps_argmax(v in prop::collection::vec(-1e3f64..1e3, 1..40)) {
                let n = min_max_normalize(&v).unwrap();
                prop_assert!(n.iter().all(|x| (0.0..=1.0).contains(x)));
                let (lo, hi) = v.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
                if hi > lo {
                    let am = v.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(&a.0))).unwrap().0;
                    prop_assert_eq!(n[am], 1.0);
                }
            }

            #[test]
            fn softmax_shift_invariant(v in prop::collection::vec(-50f64..50.0, 1..20), c in -100f64..100.0) {
                let a = softmax(&v).unwrap();
                let shifted: Vec<f64> = v.iter().map(|x| x + c).collect();
                let b = softmax(&shifted).unwrap();
                prop_assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-9);
                for (x, y) in a.iter().zip(&b) {
                    prop_assert!(*x > 0.0);
                    prop_assert!((x - y).abs() < 1e-9);
                }
            }

            #[test]
            fn topk_mean_monotone_in_k(v in prop::collection::vec(-10f64..10.0, 1..30)) {
                let mean = v.iter().sum::<f64>() / v.len() as f64;
                prop_assert!((topk_mean(&v, v.len()).unwrap() - mean).abs() < 1e-12);
                for k in 1..v.len() {
                    prop_assert!(topk_mean(&v, k).unwrap() >= topk_mean(&v, k + 1).unwrap() - 1e-12);
                }
            }
        }
    }
}
