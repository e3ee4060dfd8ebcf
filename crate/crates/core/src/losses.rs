//! Training objectives: pixel-wise cross entropy, Sobel edge loss, the
//! 4-level saliency loss, the modality-translation contrastive loss, and
//! their unweighted total.

use std::str::FromStr;

use ndarray::{Array2, Array3, ArrayD, Axis};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::types::FeaturePyramid;

/// Clamp applied to predictions before taking logs.
pub const CE_EPS: f64 = 1e-7;
/// Smoothing inside the Sobel magnitude square root.
pub const SOBEL_EPS: f64 = 1e-12;
/// Knee of the contrastive exponential: exact `exp` below, linear above.
/// An implementation guard that bounds the term's gradient at `e^knee`
/// without a dead zone; healthy training operates well below it.
pub const MTC_EXP_KNEE: f64 = 2.0;

/// Distance between two same-shaped feature blocks, on flattened values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
pub enum DistanceFn {
    /// Mean of squared differences (resolution-independent scale). Default.
    #[default]
    #[serde(rename = "euclidean-mean")]
    EuclideanMean,
    /// Sum of squared differences.
    #[serde(rename = "euclidean-sum")]
    EuclideanSum,
}

impl std::fmt::Display for DistanceFn {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            DistanceFn::EuclideanMean => f.write_str("euclidean-mean"),
            DistanceFn::EuclideanSum => f.write_str("euclidean-sum"),
        }
    }
}

impl FromStr for DistanceFn {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "euclidean-mean" => Ok(DistanceFn::EuclideanMean),
            "euclidean-sum" => Ok(DistanceFn::EuclideanSum),
            other => Err(Error::Parse(format!(
                "unknown distance '{other}', expected euclidean-mean or euclidean-sum"
            ))),
        }
    }
}

// ---- graph builders (shared by the array wrappers and the training loop) ----

/// Mean binary cross entropy of `pred` against `gt`, negated to a minimized
/// quantity; `pred` is clamped to `[CE_EPS, 1 - CE_EPS]`.
pub fn ce_graph(t: &Tape, pred: Var, gt: Var) -> Var {
    let p = t.clamp(pred, CE_EPS, 1.0 - CE_EPS);
    let one_minus_p = t.add_scalar(t.mul_scalar(p, -1.0), 1.0);
    let one_minus_gt = t.add_scalar(t.mul_scalar(gt, -1.0), 1.0);
    let pos = t.mul(gt, t.ln(p));
    let neg = t.mul(one_minus_gt, t.ln(one_minus_p));
    let ll = t.add(pos, neg);
    t.mul_scalar(t.mean_all(ll), -1.0)
}

/// Sobel gradient magnitude of a `(H, W)` map: valid 3x3 convolution, so the
/// output is `(2, H-2, W-2)` before the magnitude reduction.
pub fn sobel_magnitude_graph(t: &Tape, map: Var) -> Var {
    let shape = t.value(map).shape().to_vec();
    let (h, w) = (shape[0], shape[1]);
    let as_img = t.reshape(map, &[1, h, w]);
    let mut kernel = ArrayD::zeros(ndarray::IxDyn(&[2, 1, 3, 3]));
    let gx = [[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]];
    for i in 0..3 {
        for j in 0..3 {
            kernel[[0, 0, i, j]] = gx[i][j];
            kernel[[1, 0, i, j]] = gx[j][i]; // gy is the transpose
        }
    }
    let k = t.leaf(kernel);
    let grads = t.conv2d(as_img, k, None, 0);
    let gx = t.slice_axis(grads, Axis(0), 0, 1);
    let gy = t.slice_axis(grads, Axis(0), 1, 2);
    let sq = t.add(t.mul(gx, gx), t.mul(gy, gy));
    t.sqrt(t.add_scalar(sq, SOBEL_EPS * SOBEL_EPS))
}

/// MSE between the Sobel magnitudes of `pred` and `gt`. Zero for maps
/// smaller than the 3x3 kernel.
pub fn edge_graph(t: &Tape, pred: Var, gt: Var) -> Var {
    let shape = t.value(pred).shape().to_vec();
    if shape[0] < 3 || shape[1] < 3 {
        return t.leaf(ArrayD::zeros(ndarray::IxDyn(&[])));
    }
    let mp = sobel_magnitude_graph(t, pred);
    let mg = sobel_magnitude_graph(t, gt);
    t.mse(mp, mg)
}

/// Per-level cross entropy + edge loss, summed over the four maps.
pub fn saliency_graph(t: &Tape, maps: &[Var; 4], gt: Var) -> Var {
    let mut total = None;
    for &m in maps {
        let ce = ce_graph(t, m, gt);
        let edge = edge_graph(t, m, gt);
        let term = t.add(ce, edge);
        total = Some(match total {
            None => term,
            Some(acc) => t.add(acc, term),
        });
    }
    total.unwrap()
}

/// Same cross entropy evaluated from pre-sigmoid maps:
/// `mean(softplus(z) - gt * z)` equals `ce_graph(sigmoid(z), gt)` but keeps
/// gradients alive on saturated pixels.
pub fn ce_logits_graph(t: &Tape, logits: Var, gt: Var) -> Var {
    let sp = t.softplus(logits);
    let gz = t.mul(gt, logits);
    t.mean_all(t.sub(sp, gz))
}

/// Saliency loss for training: per level, logit-form cross entropy plus the
/// edge term on the sigmoid maps.
pub fn saliency_logits_graph(
    t: &Tape,
    maps: &[Var; 4],
    logits: &[Var; 4],
    gt: Var,
) -> Var {
    let mut total = None;
    for l in 0..4 {
        let ce = ce_logits_graph(t, logits[l], gt);
        let edge = edge_graph(t, maps[l], gt);
        let term = t.add(ce, edge);
        total = Some(match total {
            None => term,
            Some(acc) => t.add(acc, term),
        });
    }
    total.unwrap()
}

fn distance_graph(t: &Tape, a: Var, b: Var, d: DistanceFn) -> Var {
    let diff = t.sub(a, b);
    let sq = t.mul(diff, diff);
    match d {
        DistanceFn::EuclideanMean => t.mean_all(sq),
        DistanceFn::EuclideanSum => t.sum_all(sq),
    }
}

/// Contrastive term per level: exp(same-prompt distances minus
/// different-prompt distances), summed over levels. Algebraically equal to
/// the ratio-of-exponentials form, computed as exp-of-difference for
/// stability, with the exponential continued linearly above
/// [`MTC_EXP_KNEE`].
pub fn mtc_graph(
    t: &Tape,
    own_m1: &[Var],
    own_m2: &[Var],
    swapped_m1: &[Var],
    swapped_m2: &[Var],
    d: DistanceFn,
) -> Var {
    let mut total = None;
    for l in 0..own_m1.len() {
        let num_a = distance_graph(t, own_m1[l], swapped_m2[l], d);
        let num_b = distance_graph(t, swapped_m1[l], own_m2[l], d);
        let den_a = distance_graph(t, own_m1[l], own_m2[l], d);
        let den_b = distance_graph(t, swapped_m1[l], swapped_m2[l], d);
        let num = t.add(num_a, num_b);
        let den = t.add(den_a, den_b);
        let term = t.exp_linear_tail(t.sub(num, den), MTC_EXP_KNEE);
        total = Some(match total {
            None => term,
            Some(acc) => t.add(acc, term),
        });
    }
    total.unwrap()
}

// ---- array-level operations ----

fn check_same_2d(pred: &Array2<f64>, gt: &Array2<f64>) -> Result<()> {
    if pred.dim() != gt.dim() {
        return Err(Error::ShapeMismatch(format!(
            "prediction is {:?} but ground truth is {:?}",
            pred.dim(),
            gt.dim()
        )));
    }
    Ok(())
}

/// Mean binary cross entropy (minimized form).
pub fn cross_entropy_loss(pred: &Array2<f64>, gt: &Array2<f64>) -> Result<f64> {
    check_same_2d(pred, gt)?;
    let t = Tape::new();
    let p = t.leaf(pred.clone().into_dyn());
    let g = t.leaf(gt.clone().into_dyn());
    Ok(t.scalar(ce_graph(&t, p, g)))
}

/// MSE between Sobel gradient magnitudes.
pub fn edge_loss(pred: &Array2<f64>, gt: &Array2<f64>) -> Result<f64> {
    check_same_2d(pred, gt)?;
    let t = Tape::new();
    let p = t.leaf(pred.clone().into_dyn());
    let g = t.leaf(gt.clone().into_dyn());
    Ok(t.scalar(edge_graph(&t, p, g)))
}

/// Sum over the four maps of CE + edge against one full-resolution mask.
pub fn saliency_loss(
    prediction: &crate::types::SaliencyPrediction,
    gt: &Array2<f64>,
) -> Result<f64> {
    for m in prediction.maps() {
        check_same_2d(m, gt)?;
    }
    let t = Tape::new();
    let maps = prediction.maps();
    let vars = [
        t.leaf(maps[0].clone().into_dyn()),
        t.leaf(maps[1].clone().into_dyn()),
        t.leaf(maps[2].clone().into_dyn()),
        t.leaf(maps[3].clone().into_dyn()),
    ];
    let g = t.leaf(gt.clone().into_dyn());
    Ok(t.scalar(saliency_graph(&t, &vars, g)))
}

/// The four extractions of one registered image pair: each image passed
/// under its own prompt and under the partner's prompt.
#[derive(Debug, Clone)]
pub struct MtcBatch {
    /// Features of X_M1 under prompt P_M1.
    pub own_m1: FeaturePyramid,
    /// Features of X_M2 under prompt P_M2.
    pub own_m2: FeaturePyramid,
    /// Features of X_M1 under prompt P_M2.
    pub swapped_m1: FeaturePyramid,
    /// Features of X_M2 under prompt P_M1.
    pub swapped_m2: FeaturePyramid,
}

/// Level-wise contrastive loss over four same-shaped level lists (no
/// pyramid-chain requirement; useful for fixtures).
pub fn mtc_loss_levels(
    own_m1: &[Array3<f64>],
    own_m2: &[Array3<f64>],
    swapped_m1: &[Array3<f64>],
    swapped_m2: &[Array3<f64>],
    d: DistanceFn,
) -> Result<f64> {
    let n = own_m1.len();
    if n == 0 || own_m2.len() != n || swapped_m1.len() != n || swapped_m2.len() != n {
        return Err(Error::ShapeMismatch("level lists must have equal nonzero length".into()));
    }
    for l in 0..n {
        let dim = own_m1[l].dim();
        for other in [&own_m2[l], &swapped_m1[l], &swapped_m2[l]] {
            if other.dim() != dim {
                return Err(Error::ShapeMismatch(format!(
                    "level {} shapes differ: {:?} vs {:?}",
                    l + 1,
                    dim,
                    other.dim()
                )));
            }
        }
    }
    let t = Tape::new();
    let bind = |levels: &[Array3<f64>]| -> Vec<Var> {
        levels.iter().map(|a| t.leaf(a.clone().into_dyn())).collect()
    };
    let (a, b, c, dd) = (bind(own_m1), bind(own_m2), bind(swapped_m1), bind(swapped_m2));
    Ok(t.scalar(mtc_graph(&t, &a, &b, &c, &dd, d)))
}

/// Contrastive loss of one [`MtcBatch`].
pub fn mtc_loss(batch: &MtcBatch, d: DistanceFn) -> Result<f64> {
    mtc_loss_levels(
        batch.own_m1.levels(),
        batch.own_m2.levels(),
        batch.swapped_m1.levels(),
        batch.swapped_m2.levels(),
        d,
    )
}

/// Mean contrastive loss over every modality pair of a sample with three or
/// more modalities.
pub fn mtc_loss_all_pairs(batches: &[MtcBatch], d: DistanceFn) -> Result<f64> {
    if batches.is_empty() {
        return Err(Error::EmptyInput("no modality pairs".into()));
    }
    let mut acc = 0.0;
    for b in batches {
        acc += mtc_loss(b, d)?;
    }
    Ok(acc / batches.len() as f64)
}

/// Unweighted sum of the saliency and contrastive terms.
pub fn total_loss(saliency: f64, mtc: f64) -> Result<f64> {
    if !saliency.is_finite() || !mtc.is_finite() {
        return Err(Error::NonFinite(format!(
            "total_loss inputs (saliency={saliency}, mtc={mtc})"
        )));
    }
    Ok(saliency + mtc)
}
