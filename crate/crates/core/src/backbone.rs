//! Reference CAS-generation network.
//!
//! One hidden ReLU layer over a clamped temporal mean window, followed by a
//! linear classification head (`C+1` logits per snippet) and a three-way
//! softmax attention head (instance / context / background). The analytic
//! backward pass lives here too; loss-side gradients arrive as
//! [`OutputGrads`] from the `losses` module.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensorseq::{
    softmax_unchecked, topk_mean, AttentionTriple, Branch, Cas, FeatureSequence, Matrix,
};

pub const DEFAULT_HIDDEN: usize = 64;
pub const DEFAULT_CONTEXT_RADIUS: usize = 1;
pub const DEFAULT_TOPK_RATIO: f64 = 1.0 / 8.0;

/// Weights of one backbone. Also reused as the gradient container, since
/// gradients have exactly the parameter shapes.
#[derive(Debug, Clone, PartialEq)]
pub struct BackboneParams {
    /// `d × h`
    pub embed_w: Matrix,
    pub embed_b: Vec<f64>,
    /// `h × (C+1)`
    pub cls_w: Matrix,
    pub cls_b: Vec<f64>,
    /// `h × 3`
    pub attn_w: Matrix,
    pub attn_b: Vec<f64>,
    pub context_radius: usize,
}

/// Xavier/Glorot uniform bound.
pub fn xavier_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

fn uniform_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    let a = xavier_bound(rows, cols);
    let data = (0..rows * cols).map(|_| rng.gen_range(-a..=a)).collect();
    Matrix::new(rows, cols, data).expect("sized above")
}

/// Fresh parameters: Xavier-uniform weights, zero biases.
pub fn init_params(d: usize, h: usize, num_classes: usize, context_radius: usize, seed: u64) -> BackboneParams {
    assert!(d > 0 && h > 0 && num_classes > 0, "backbone dims must be positive");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let embed_w = uniform_matrix(&mut rng, d, h);
    let cls_w = uniform_matrix(&mut rng, h, num_classes + 1);
    let attn_w = uniform_matrix(&mut rng, h, 3);
    BackboneParams {
        embed_w,
        embed_b: vec![0.0; h],
        cls_w,
        cls_b: vec![0.0; num_classes + 1],
        attn_w,
        attn_b: vec![0.0; 3],
        context_radius,
    }
}

impl BackboneParams {
    pub fn input_dim(&self) -> usize {
        self.embed_w.rows()
    }

    pub fn hidden_dim(&self) -> usize {
        self.embed_w.cols()
    }

    pub fn num_classes(&self) -> usize {
        self.cls_w.cols() - 1
    }

    /// Same shapes, all zeros.
    pub fn zeros_like(&self) -> Self {
        Self {
            embed_w: Matrix::zeros(self.embed_w.rows(), self.embed_w.cols()),
            embed_b: vec![0.0; self.embed_b.len()],
            cls_w: Matrix::zeros(self.cls_w.rows(), self.cls_w.cols()),
            cls_b: vec![0.0; self.cls_b.len()],
            attn_w: Matrix::zeros(self.attn_w.rows(), self.attn_w.cols()),
            attn_b: vec![0.0; 3],
            context_radius: self.context_radius,
        }
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.embed_w.same_shape(&other.embed_w)
            && self.cls_w.same_shape(&other.cls_w)
            && self.attn_w.same_shape(&other.attn_w)
            && self.context_radius == other.context_radius
    }

    /// Parameter tensors in checkpoint order.
    pub fn tensors(&self) -> [&[f64]; 6] {
        [
            self.embed_w.as_slice(),
            &self.embed_b,
            self.cls_w.as_slice(),
            &self.cls_b,
            self.attn_w.as_slice(),
            &self.attn_b,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut [f64]; 6] {
        [
            self.embed_w.as_mut_slice(),
            &mut self.embed_b,
            self.cls_w.as_mut_slice(),
            &mut self.cls_b,
            self.attn_w.as_mut_slice(),
            &mut self.attn_b,
        ]
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// `self += scale * other`.
    pub fn add_scaled(&mut self, other: &Self, scale: f64) {
        for (dst, src) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (a, b) in dst.iter_mut().zip(src) {
                *a += scale * b;
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for t in self.tensors_mut() {
            t.iter_mut().for_each(|v| *v *= factor);
        }
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }
}

/// Forward results kept for the losses and the backward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct BackboneOutput {
    pub cas: Cas,
    pub attn: AttentionTriple,
    /// `T × h` post-ReLU embeddings.
    pub embedded: Matrix,
    /// `T × d` temporal window means fed to the embedding layer.
    pub pooled: Matrix,
}

impl BackboneOutput {
    pub fn len(&self) -> usize {
        self.cas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cas.is_empty()
    }
}

/// Mean of rows `t-r..=t+r`, clamped to the sequence.
pub fn window_mean(x: &Matrix, radius: usize) -> Matrix {
    let t_len = x.rows();
    let d = x.cols();
    let mut out = Matrix::zeros(t_len, d);
    for t in 0..t_len {
        let lo = t.saturating_sub(radius);
        let hi = (t + radius).min(t_len - 1);
        let n = (hi - lo + 1) as f64;
        let row = out.row_mut(t);
        for s in lo..=hi {
            for (o, v) in row.iter_mut().zip(x.row(s)) {
                *o += v;
            }
        }
        row.iter_mut().for_each(|v| *v /= n);
    }
    out
}

/// `out[t] = W' · input[t] + b` for a `rows_in × cols_out` weight matrix.
fn affine(input: &Matrix, w: &Matrix, b: &[f64]) -> Matrix {
    let mut out = Matrix::zeros(input.rows(), w.cols());
    for t in 0..input.rows() {
        let o = out.row_mut(t);
        o.copy_from_slice(b);
        for (i, &xi) in input.row(t).iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            for (oj, wij) in o.iter_mut().zip(w.row(i)) {
                *oj += xi * wij;
            }
        }
    }
    out
}

pub fn forward(params: &BackboneParams, x: &FeatureSequence) -> Result<BackboneOutput> {
    if x.dim() != params.input_dim() {
        return Err(Error::shape("feature dim", params.input_dim(), x.dim()));
    }
    let pooled = window_mean(x.data(), params.context_radius);
    let mut embedded = affine(&pooled, &params.embed_w, &params.embed_b);
    embedded.as_mut_slice().iter_mut().for_each(|v| *v = v.max(0.0));
    let cas = affine(&embedded, &params.cls_w, &params.cls_b);
    let mut attn = affine(&embedded, &params.attn_w, &params.attn_b);
    for t in 0..attn.rows() {
        let p = softmax_unchecked(attn.row(t));
        attn.row_mut(t).copy_from_slice(&p);
    }
    Ok(BackboneOutput {
        cas: Cas::new(cas)?,
        attn: AttentionTriple::new(attn)?,
        embedded,
        pooled,
    })
}

/// Attention-weighted CAS for one branch: row `t` scaled by `attn[t, branch]`.
pub fn weighted_cas(cas: &Cas, attn: &AttentionTriple, branch: Branch) -> Result<Cas> {
    if cas.len() != attn.len() {
        return Err(Error::shape("attention length", cas.len(), attn.len()));
    }
    let mut logits = cas.logits.clone();
    for t in 0..logits.rows() {
        let w = attn.get(t, branch);
        logits.row_mut(t).iter_mut().for_each(|v| *v *= w);
    }
    Ok(Cas { logits })
}

/// Number of snippets pooled per class: `max(1, floor(T * ratio))`.
pub fn topk_count(t_len: usize, topk_ratio: f64) -> usize {
    ((t_len as f64 * topk_ratio).floor() as usize).clamp(1, t_len.max(1))
}

/// Top-k mean pooling per column, then softmax over the `C+1` classes.
pub fn video_scores(cas_branch: &Cas, topk_ratio: f64) -> Result<Vec<f64>> {
    if !(topk_ratio > 0.0 && topk_ratio <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "topk_ratio must be in (0,1], got {topk_ratio}"
        )));
    }
    let k = topk_count(cas_branch.len(), topk_ratio);
    let pooled = (0..cas_branch.logits.cols())
        .map(|c| topk_mean(&cas_branch.logits.column(c), k))
        .collect::<Result<Vec<_>>>()?;
    Ok(softmax_unchecked(&pooled))
}

/// Loss gradients with respect to the backbone outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputGrads {
    pub cas: Matrix,
    pub attn: Matrix,
    pub embedded: Matrix,
}

impl OutputGrads {
    pub fn zeros(t_len: usize, num_classes: usize, hidden: usize) -> Self {
        Self {
            cas: Matrix::zeros(t_len, num_classes + 1),
            attn: Matrix::zeros(t_len, 3),
            embedded: Matrix::zeros(t_len, hidden),
        }
    }
}

/// Chains output gradients back to every parameter.
pub fn backward_params(params: &BackboneParams, out: &BackboneOutput, grads: &OutputGrads) -> BackboneParams {
    let t_len = out.len();
    let h = params.hidden_dim();
    let mut g = params.zeros_like();

    let mut d_embedded = grads.embedded.clone();
    for t in 0..t_len {
        let e = out.embedded.row(t);
        let d_cas = grads.cas.row(t);

        // softmax Jacobian on the attention row
        let a = out.attn.weights.row(t);
        let da = grads.attn.row(t);
        let dot: f64 = a.iter().zip(da).map(|(x, y)| x * y).sum();
        let d_logit: [f64; 3] = std::array::from_fn(|k| a[k] * (da[k] - dot));

        for (c, &gc) in d_cas.iter().enumerate() {
            g.cls_b[c] += gc;
        }
        for k in 0..3 {
            g.attn_b[k] += d_logit[k];
        }
        let de = d_embedded.row_mut(t);
        for j in 0..h {
            let ej = e[j];
            let cw = params.cls_w.row(j);
            let aw = params.attn_w.row(j);
            let gcw = g.cls_w.row_mut(j);
            let mut acc = 0.0;
            for c in 0..d_cas.len() {
                gcw[c] += ej * d_cas[c];
                acc += cw[c] * d_cas[c];
            }
            let gaw = g.attn_w.row_mut(j);
            for k in 0..3 {
                gaw[k] += ej * d_logit[k];
                acc += aw[k] * d_logit[k];
            }
            de[j] += acc;
        }
    }

    for t in 0..t_len {
        let e = out.embedded.row(t);
        let p = out.pooled.row(t);
        let dz: Vec<f64> = d_embedded
            .row(t)
            .iter()
            .zip(e)
            .map(|(&d, &ev)| if ev > 0.0 { d } else { 0.0 })
            .collect();
        for (j, &v) in dz.iter().enumerate() {
            g.embed_b[j] += v;
        }
        for (i, &pi) in p.iter().enumerate() {
            if pi == 0.0 {
                continue;
            }
            for (gw, &v) in g.embed_w.row_mut(i).iter_mut().zip(&dz) {
                *gw += pi * v;
            }
        }
    }
    g
}
