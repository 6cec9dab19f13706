//! Central finite-difference check of the analytic backbone gradients.
//!
//! The numeric side only calls `forward` and `total_loss`, never the
//! backward code it is checking.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::backbone::{forward, init_params, BackboneParams};
use crate::error::Result;
use crate::losses::{backward, total_loss, LossWeights};
use crate::tensorseq::{FeatureSequence, Matrix, VideoLabel};

pub const FD_STEP: f64 = 1e-6;
pub const REL_TOL: f64 = 1e-4;
/// Denominator floor for the relative error, so gradients that are zero up
/// to rounding noise are compared absolutely.
pub const REL_FLOOR: f64 = 1e-6;

pub const TENSOR_NAMES: [&str; 6] = ["embed_w", "embed_b", "cls_w", "cls_b", "attn_w", "attn_b"];

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Numeric gradient of `total_loss` by central differences.
pub fn numeric_gradient(
    params: &BackboneParams,
    x: &FeatureSequence,
    label: &VideoLabel,
    weights: &LossWeights,
    topk_ratio: f64,
    step: f64,
) -> Result<BackboneParams> {
    let mut grad = params.zeros_like();
    let mut probe = params.clone();
    for ti in 0..6 {
        let n = params.tensors()[ti].len();
        for i in 0..n {
            let orig = params.tensors()[ti][i];
            probe.tensors_mut()[ti][i] = orig + step;
            let up = total_loss(&forward(&probe, x)?, label, weights, topk_ratio)?;
            probe.tensors_mut()[ti][i] = orig - step;
            let down = total_loss(&forward(&probe, x)?, label, weights, topk_ratio)?;
            probe.tensors_mut()[ti][i] = orig;
            grad.tensors_mut()[ti][i] = (up - down) / (2.0 * step);
        }
    }
    Ok(grad)
}

/// One randomized problem instance.
#[derive(Debug, Clone)]
pub struct GradCase {
    pub params: BackboneParams,
    pub x: FeatureSequence,
    pub label: VideoLabel,
    pub weights: LossWeights,
    pub topk_ratio: f64,
}

pub fn random_case(rng: &mut ChaCha8Rng, t_len: usize) -> GradCase {
    let d = rng.gen_range(2..=5);
    let h = rng.gen_range(3..=7);
    let c = rng.gen_range(1..=3);
    let r = rng.gen_range(0..=2);
    let mut params = init_params(d, h, c, r, rng.gen());
    for b in params.embed_b.iter_mut().chain(params.cls_b.iter_mut()).chain(params.attn_b.iter_mut()) {
        *b = rng.gen_range(-0.3..0.3);
    }
    let data = (0..t_len * d).map(|_| rng.gen_range(-1.5..1.5)).collect();
    let x = FeatureSequence::from_matrix(Matrix::new(t_len, d, data).expect("sized")).expect("finite");
    let mut classes: Vec<usize> = (0..c).filter(|_| rng.gen_bool(0.5)).collect();
    if classes.is_empty() {
        classes.push(rng.gen_range(0..c));
    }
    let label = VideoLabel::from_classes(c, &classes).expect("in range");
    let weights = LossWeights {
        lambda1: rng.gen_range(0.2..1.0),
        lambda2: rng.gen_range(0.2..1.0),
        lambda3: rng.gen_range(0.2..1.0),
        beta: 0.5,
        margin: 1.5,
    };
    let topk_ratio = [0.125, 0.4, 1.0][rng.gen_range(0..3)];
    GradCase {
        params,
        x,
        label,
        weights,
        topk_ratio,
    }
}

#[derive(Debug, Clone)]
pub struct CaseResult {
    pub t_len: usize,
    pub max_rel_err: f64,
    pub worst_tensor: &'static str,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

impl CaseResult {
    pub fn passed(&self) -> bool {
        self.max_rel_err <= REL_TOL
    }
}

pub fn check_case(case: &GradCase) -> Result<CaseResult> {
    let out = forward(&case.params, &case.x)?;
    let analytic = backward(&case.params, &out, &case.label, &case.weights, case.topk_ratio)?;
    let numeric = numeric_gradient(&case.params, &case.x, &case.label, &case.weights, case.topk_ratio, FD_STEP)?;
    let mut res = CaseResult {
        t_len: case.x.len(),
        max_rel_err: 0.0,
        worst_tensor: TENSOR_NAMES[0],
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
    };
    for (ti, (a, n)) in analytic.tensors().iter().zip(numeric.tensors()).enumerate() {
        for (i, (&av, &nv)) in a.iter().zip(n.iter()).enumerate() {
            let e = relative_error(av, nv);
            if e > res.max_rel_err || !e.is_finite() {
                res = CaseResult {
                    max_rel_err: if e.is_finite() { e } else { f64::INFINITY },
                    worst_tensor: TENSOR_NAMES[ti],
                    worst_index: i,
                    analytic: av,
                    numeric: nv,
                    ..res
                };
            }
        }
    }
    Ok(res)
}

/// `cases` random problems cycling through `T ∈ {1, 3, 8}`.
pub fn run_suite(seed: u64, cases: usize) -> Result<Vec<CaseResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..cases)
        .map(|i| check_case(&random_case(&mut rng, [1, 3, 8][i % 3])))
        .collect()
}
