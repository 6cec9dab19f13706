//! Training objectives and their analytic gradients.
//!
//! The classification loss sums three BCE terms, one per attention branch,
//! against fixed branch targets derived from the video label. The three
//! auxiliary terms (guide, feature separation, sparsity) use compact forms
//! that keep each term's role: background attention should agree with the
//! background class probability, branch-pooled embeddings should be apart,
//! and instance attention should be sparse.

use crate::backbone::{
    backward_params, topk_count, video_scores, weighted_cas, BackboneOutput, BackboneParams,
    OutputGrads,
};
use crate::error::{Error, Result};
use crate::tensorseq::{softmax_unchecked, topk_indices, AttentionTriple, Branch, Cas, Matrix, VideoLabel};

pub const PROB_EPS: f64 = 1e-12;
const MASS_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    /// guide loss weight
    pub lambda1: f64,
    /// feature separation weight
    pub lambda2: f64,
    /// sparsity weight
    pub lambda3: f64,
    /// share of the slow branch in the fused feature loss
    pub beta: f64,
    /// hinge margin on unit-normalized branch embeddings
    pub margin: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda1: 1.0,
            lambda2: 0.1,
            lambda3: 0.1,
            beta: 0.5,
            margin: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let ok = [self.lambda1, self.lambda2, self.lambda3]
            .iter()
            .all(|v| v.is_finite() && *v >= 0.0)
            && (0.0..=1.0).contains(&self.beta)
            && self.margin.is_finite()
            && self.margin > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("invalid loss weights {self:?}")))
        }
    }
}

/// Per-branch BCE targets.
#[derive(Debug, Clone, PartialEq)]
pub struct BranchTargets {
    pub y_ins: Vec<f64>,
    pub y_con: Vec<f64>,
    pub y_bac: Vec<f64>,
}

impl BranchTargets {
    /// Instance: actions, no background. Context: actions and background.
    /// Background: background only.
    pub fn from_label(label: &VideoLabel) -> Self {
        let c = label.num_classes();
        let actions: Vec<f64> = label.bits()[..c].iter().map(|&b| f64::from(b)).collect();
        let with_bg = |bg: f64, keep_actions: bool| {
            let mut v: Vec<f64> = if keep_actions { actions.clone() } else { vec![0.0; c] };
            v.push(bg);
            v
        };
        Self {
            y_ins: with_bg(0.0, true),
            y_con: with_bg(1.0, true),
            y_bac: with_bg(1.0, false),
        }
    }

    pub fn for_branch(&self, branch: Branch) -> &[f64] {
        match branch {
            Branch::Instance => &self.y_ins,
            Branch::Context => &self.y_con,
            Branch::Background => &self.y_bac,
        }
    }
}

/// Mean binary cross-entropy with probabilities clamped to `[1e-12, 1-1e-12]`.
pub fn bce(pred: &[f64], target: &[f64]) -> Result<f64> {
    if pred.len() != target.len() || pred.is_empty() {
        return Err(Error::shape("bce lengths", pred.len(), target.len()));
    }
    let sum: f64 = pred
        .iter()
        .zip(target)
        .map(|(&p, &t)| {
            let p = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
            t * p.ln() + (1.0 - t) * (1.0 - p).ln()
        })
        .sum();
    Ok((-sum / pred.len() as f64).max(0.0))
}

/// d bce / d pred, zero where the clamp is active.
fn bce_grad(pred: &[f64], target: &[f64]) -> Vec<f64> {
    let n = pred.len() as f64;
    pred.iter()
        .zip(target)
        .map(|(&p, &t)| {
            if p < PROB_EPS || p > 1.0 - PROB_EPS {
                0.0
            } else {
                -(t / p - (1.0 - t) / (1.0 - p)) / n
            }
        })
        .collect()
}

fn check_lengths(out: &BackboneOutput, label: &VideoLabel) -> Result<()> {
    if out.cas.num_classes() != label.num_classes() {
        return Err(Error::shape("label classes", out.cas.num_classes(), label.num_classes()));
    }
    if out.attn.len() != out.cas.len() || out.embedded.rows() != out.cas.len() {
        return Err(Error::InvalidArgument("backbone output lengths disagree".into()));
    }
    Ok(())
}

/// Sum of the instance, context and background BCE terms.
pub fn classification_loss(out: &BackboneOutput, label: &VideoLabel, topk_ratio: f64) -> Result<f64> {
    check_lengths(out, label)?;
    let targets = BranchTargets::from_label(label);
    let mut total = 0.0;
    for b in Branch::ALL {
        let scores = video_scores(&weighted_cas(&out.cas, &out.attn, b)?, topk_ratio)?;
        total += bce(&scores, targets.for_branch(b))?;
    }
    Ok(total)
}

/// Mean absolute gap between background attention and background class probability.
pub fn guide_loss(cas: &Cas, attn: &AttentionTriple) -> Result<f64> {
    if cas.len() != attn.len() {
        return Err(Error::shape("attention length", cas.len(), attn.len()));
    }
    let bg = cas.num_classes();
    let t_len = cas.len() as f64;
    Ok((0..cas.len())
        .map(|t| {
            let p_bg = softmax_unchecked(cas.logits.row(t))[bg];
            (attn.get(t, Branch::Background) - p_bg).abs()
        })
        .sum::<f64>()
        / t_len)
}

/// Mean instance attention.
pub fn sparsity_loss(attn: &AttentionTriple) -> f64 {
    attn.column(Branch::Instance).iter().sum::<f64>() / attn.len().max(1) as f64
}

struct BranchEmbeddings {
    mass: [f64; 3],
    /// attention-weighted sums
    sums: [Vec<f64>; 3],
    /// weighted means
    means: [Vec<f64>; 3],
    norms: [f64; 3],
    units: [Vec<f64>; 3],
}

const PAIRS: [(usize, usize); 3] = [(0, 1), (0, 2), (1, 2)];

fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn branch_embeddings(embedded: &Matrix, attn: &AttentionTriple) -> BranchEmbeddings {
    let h = embedded.cols();
    let mass: [f64; 3] = std::array::from_fn(|b| attn.weights.column(b).iter().sum::<f64>() + MASS_EPS);
    let sums: [Vec<f64>; 3] = std::array::from_fn(|b| {
        let mut s = vec![0.0; h];
        for t in 0..embedded.rows() {
            let w = attn.weights.get(t, b);
            for (acc, e) in s.iter_mut().zip(embedded.row(t)) {
                *acc += w * e;
            }
        }
        s
    });
    let means: [Vec<f64>; 3] = std::array::from_fn(|b| sums[b].iter().map(|v| v / mass[b]).collect());
    let norms: [f64; 3] = std::array::from_fn(|b| l2(&means[b]));
    let units: [Vec<f64>; 3] = std::array::from_fn(|b| {
        if norms[b] > 0.0 {
            means[b].iter().map(|v| v / norms[b]).collect()
        } else {
            vec![0.0; h]
        }
    });
    BranchEmbeddings {
        mass,
        sums,
        means,
        norms,
        units,
    }
}

/// Hinge on the pairwise distances of the unit-normalized, attention-pooled
/// branch embeddings.
pub fn feature_separation_loss(embedded: &Matrix, attn: &AttentionTriple, margin: f64) -> Result<f64> {
    if embedded.rows() != attn.len() || embedded.rows() == 0 {
        return Err(Error::shape("embedding length", attn.len(), embedded.rows()));
    }
    let be = branch_embeddings(embedded, attn);
    Ok(PAIRS
        .iter()
        .map(|&(a, b)| {
            let diff: Vec<f64> = be.units[a].iter().zip(&be.units[b]).map(|(x, y)| x - y).collect();
            (margin - l2(&diff)).max(0.0)
        })
        .sum())
}

/// Convex blend of the normal- and slow-branch feature losses.
pub fn fused_feature_loss(l_feat_normal: f64, l_feat_slow: f64, beta: f64) -> f64 {
    (1.0 - beta) * l_feat_normal + beta * l_feat_slow
}

/// Unweighted loss components of one backbone output.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossTerms {
    pub classification: f64,
    pub guide: f64,
    pub feature: f64,
    pub sparsity: f64,
}

impl LossTerms {
    pub fn compute(out: &BackboneOutput, label: &VideoLabel, weights: &LossWeights, topk_ratio: f64) -> Result<Self> {
        Ok(Self {
            classification: classification_loss(out, label, topk_ratio)?,
            guide: guide_loss(&out.cas, &out.attn)?,
            feature: feature_separation_loss(&out.embedded, &out.attn, weights.margin)?,
            sparsity: sparsity_loss(&out.attn),
        })
    }

    pub fn total(&self, weights: &LossWeights) -> f64 {
        self.classification
            + weights.lambda1 * self.guide
            + weights.lambda2 * self.feature
            + weights.lambda3 * self.sparsity
    }
}

pub fn total_loss(out: &BackboneOutput, label: &VideoLabel, weights: &LossWeights, topk_ratio: f64) -> Result<f64> {
    Ok(LossTerms::compute(out, label, weights, topk_ratio)?.total(weights))
}

/// Gradients of [`total_loss`] with respect to CAS, attention and embeddings.
pub fn output_gradients(
    out: &BackboneOutput,
    label: &VideoLabel,
    weights: &LossWeights,
    topk_ratio: f64,
) -> Result<OutputGrads> {
    check_lengths(out, label)?;
    let t_len = out.len();
    let n_cls = out.cas.logits.cols();
    let mut g = OutputGrads::zeros(t_len, out.cas.num_classes(), out.embedded.cols());

    // classification: bce <- softmax <- top-k mean <- attn * cas
    let targets = BranchTargets::from_label(label);
    let k = topk_count(t_len, topk_ratio);
    for b in Branch::ALL {
        let wc = weighted_cas(&out.cas, &out.attn, b)?;
        let scores = video_scores(&wc, topk_ratio)?;
        let dp = bce_grad(&scores, targets.for_branch(b));
        let dot: f64 = scores.iter().zip(&dp).map(|(p, d)| p * d).sum();
        for c in 0..n_cls {
            let ds = scores[c] * (dp[c] - dot);
            if ds == 0.0 {
                continue;
            }
            let col = wc.logits.column(c);
            for t in topk_indices(&col, k)? {
                let dw = ds / k as f64;
                let a = out.attn.get(t, b);
                let cv = out.cas.logits.get(t, c);
                g.cas.row_mut(t)[c] += dw * a;
                g.attn.row_mut(t)[b.index()] += dw * cv;
            }
        }
    }

    // guide: |attn_bac - softmax(cas)[bg]|
    if weights.lambda1 != 0.0 {
        let bg = n_cls - 1;
        for t in 0..t_len {
            let q = softmax_unchecked(out.cas.logits.row(t));
            let diff = out.attn.get(t, Branch::Background) - q[bg];
            let s = weights.lambda1 * sign(diff) / t_len as f64;
            if s == 0.0 {
                continue;
            }
            g.attn.row_mut(t)[Branch::Background.index()] += s;
            let row = g.cas.row_mut(t);
            for (j, gj) in row.iter_mut().enumerate() {
                let delta = if j == bg { 1.0 } else { 0.0 };
                *gj -= s * q[bg] * (delta - q[j]);
            }
        }
    }

    // sparsity
    if weights.lambda3 != 0.0 {
        let s = weights.lambda3 / t_len as f64;
        for t in 0..t_len {
            g.attn.row_mut(t)[Branch::Instance.index()] += s;
        }
    }

    if weights.lambda2 != 0.0 {
        feature_separation_grad(out, weights.margin, weights.lambda2, &mut g);
    }
    Ok(g)
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn feature_separation_grad(out: &BackboneOutput, margin: f64, scale: f64, g: &mut OutputGrads) {
    let be = branch_embeddings(&out.embedded, &out.attn);
    let h = out.embedded.cols();
    let mut d_units: [Vec<f64>; 3] = std::array::from_fn(|_| vec![0.0; h]);
    for &(a, b) in &PAIRS {
        let diff: Vec<f64> = be.units[a].iter().zip(&be.units[b]).map(|(x, y)| x - y).collect();
        let dist = l2(&diff);
        if dist <= 0.0 || margin - dist <= 0.0 {
            continue;
        }
        for j in 0..h {
            let step = scale * diff[j] / dist;
            d_units[a][j] -= step;
            d_units[b][j] += step;
        }
    }
    for b in 0..3 {
        if be.norms[b] <= 0.0 {
            continue;
        }
        let u = &be.units[b];
        let du = &d_units[b];
        let proj: f64 = u.iter().zip(du).map(|(x, y)| x * y).sum();
        let d_mean: Vec<f64> = (0..h).map(|j| (du[j] - u[j] * proj) / be.norms[b]).collect();
        let mean_dot: f64 = be.means[b].iter().zip(&d_mean).map(|(x, y)| x * y).sum();
        debug_assert!(be.sums[b].len() == h);
        for t in 0..out.len() {
            let w = out.attn.get(t, Branch::ALL[b]);
            let e = out.embedded.row(t);
            let e_dot: f64 = e.iter().zip(&d_mean).map(|(x, y)| x * y).sum();
            g.attn.row_mut(t)[b] += (e_dot - mean_dot) / be.mass[b];
            let ge = g.embedded.row_mut(t);
            for j in 0..h {
                ge[j] += w * d_mean[j] / be.mass[b];
            }
        }
    }
}

/// Gradient of [`total_loss`] with respect to every backbone parameter.
pub fn backward(
    params: &BackboneParams,
    out: &BackboneOutput,
    label: &VideoLabel,
    weights: &LossWeights,
    topk_ratio: f64,
) -> Result<BackboneParams> {
    let g = output_gradients(out, label, weights, topk_ratio)?;
    Ok(backward_params(params, out, &g))
}
