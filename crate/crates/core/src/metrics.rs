//! Evaluation: mean absolute error, mean F-measure, and the sole/joint
//! protocol over modality-combination subsets.

use std::str::FromStr;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::par;
use crate::types::{ComboLabel, MultimodalSample};

/// omega^2 weighting inside the F-measure.
pub const OMEGA_SQ: f64 = 0.3;
/// Number of uniform binarization thresholds in the sweep.
pub const N_THRESHOLDS: usize = 255;

/// Mean absolute deviation between a prediction and the ground truth.
pub fn mae(pred: &Array2<f64>, gt: &Array2<f64>) -> Result<f64> {
    if pred.dim() != gt.dim() {
        return Err(Error::ShapeMismatch(format!(
            "prediction is {:?} but ground truth is {:?}",
            pred.dim(),
            gt.dim()
        )));
    }
    let n = pred.len() as f64;
    Ok(pred.iter().zip(gt.iter()).map(|(p, g)| (p - g).abs()).sum::<f64>() / n)
}

/// Thresholding rule behind the F-measure.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FbetaPolicy {
    /// Mean F over 255 uniform thresholds in (0, 1). Default.
    #[default]
    Sweep,
    /// Single threshold at twice the prediction mean (clamped to 1).
    Adaptive,
}

impl FromStr for FbetaPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "sweep" => Ok(FbetaPolicy::Sweep),
            "adaptive" => Ok(FbetaPolicy::Adaptive),
            other => Err(Error::Parse(format!(
                "unknown fbeta policy '{other}', expected sweep or adaptive"
            ))),
        }
    }
}

fn fscore(tp: f64, fp: f64, npos: f64) -> f64 {
    let precision = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
    let recall = tp / npos;
    let denom = OMEGA_SQ * precision + recall;
    if denom > 0.0 {
        (1.0 + OMEGA_SQ) * precision * recall / denom
    } else {
        0.0
    }
}

/// F-measure with omega^2 = 0.3. Under the sweep policy, the prediction is
/// binarized at each threshold `i/256` (i = 1..255, pixel positive when
/// `pred >= t`) and the mean F over thresholds is returned. Errors when the
/// ground truth has no positive pixel (recall undefined).
pub fn f_beta(pred: &Array2<f64>, gt: &Array2<f64>, policy: FbetaPolicy) -> Result<f64> {
    if pred.dim() != gt.dim() {
        return Err(Error::ShapeMismatch(format!(
            "prediction is {:?} but ground truth is {:?}",
            pred.dim(),
            gt.dim()
        )));
    }
    let npos = gt.iter().filter(|&&g| g >= 0.5).count() as f64;
    if npos == 0.0 {
        return Err(Error::Eval("ground truth has no positive pixel; recall undefined".into()));
    }
    match policy {
        FbetaPolicy::Adaptive => {
            let t = (2.0 * pred.sum() / pred.len() as f64).min(1.0);
            let mut tp = 0.0;
            let mut fp = 0.0;
            for (p, g) in pred.iter().zip(gt.iter()) {
                if *p >= t {
                    if *g >= 0.5 {
                        tp += 1.0;
                    } else {
                        fp += 1.0;
                    }
                }
            }
            Ok(fscore(tp, fp, npos))
        }
        FbetaPolicy::Sweep => {
            // pred >= i/256  <=>  i <= floor(pred * 256); histogram + suffix
            // sums give per-threshold counts in one pass.
            let mut pos_hist = [0u64; 256];
            let mut neg_hist = [0u64; 256];
            for (p, g) in pred.iter().zip(gt.iter()) {
                let c = ((p * 256.0).floor() as i64).clamp(0, 255) as usize;
                if *g >= 0.5 {
                    pos_hist[c] += 1;
                } else {
                    neg_hist[c] += 1;
                }
            }
            let mut acc = 0.0;
            let mut tp = 0u64;
            let mut fp = 0u64;
            let mut scores = [0.0f64; 256];
            for i in (1..=255usize).rev() {
                tp += pos_hist[i];
                fp += neg_hist[i];
                scores[i] = fscore(tp as f64, fp as f64, npos);
            }
            for s in scores.iter().skip(1) {
                acc += s;
            }
            Ok(acc / N_THRESHOLDS as f64)
        }
    }
}

/// Evaluation protocol: per-subset or pooled.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalMode {
    Sole,
    Joint,
}

impl FromStr for EvalMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "sole" => Ok(EvalMode::Sole),
            "joint" => Ok(EvalMode::Joint),
            other => {
                Err(Error::Parse(format!("unknown mode '{other}', expected sole or joint")))
            }
        }
    }
}

/// One evaluated subset.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub subset: String,
    pub n: usize,
    pub mae: f64,
    pub fbeta: f64,
}

/// Evaluation output: one row per subset in sole mode, a single `ALL` row in
/// joint mode.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
}

impl EvalReport {
    /// Aligned plain-text table.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("{:<10} {:>6} {:>10} {:>10}\n", "subset", "n", "MAE", "Fbeta"));
        for r in &self.rows {
            out.push_str(&format!(
                "{:<10} {:>6} {:>10.4} {:>10.4}\n",
                r.subset, r.n, r.mae, r.fbeta
            ));
        }
        out
    }

    /// Machine-readable record stream: one tab-separated record per row,
    /// `subset<TAB>n<TAB>mae<TAB>fbeta`.
    pub fn to_records(&self) -> String {
        let mut out = String::new();
        for r in &self.rows {
            out.push_str(&format!("{}\t{}\t{:.17}\t{:.17}\n", r.subset, r.n, r.mae, r.fbeta));
        }
        out
    }
}

/// A dataset sample tagged with its modality-combination label.
#[derive(Debug, Clone)]
pub struct LabeledSample {
    pub combo: ComboLabel,
    pub sample: MultimodalSample,
}

/// Runs the sole/joint protocol with an arbitrary per-sample predictor.
/// Predictions are resized to ground-truth resolution before scoring.
/// Per-sample metrics run in parallel; aggregation sorts by sample id, so
/// the report is invariant to sample order.
pub fn evaluate<F>(
    predict: &F,
    samples: &[LabeledSample],
    mode: EvalMode,
    subsets: Option<&[ComboLabel]>,
    policy: FbetaPolicy,
) -> Result<EvalReport>
where
    F: Fn(&MultimodalSample) -> Result<Array2<f64>> + Sync,
{
    if samples.is_empty() {
        return Err(Error::EmptyInput("no samples to evaluate".into()));
    }
    let scored: Vec<Result<(String, ComboLabel, f64, f64)>> = par::map(samples, |ls| {
        let pred = predict(&ls.sample)?;
        let (gh, gw) = ls.sample.ground_truth.dim();
        let pred = crate::imgio::resize_map(&pred, gh, gw);
        let m = mae(&pred, &ls.sample.ground_truth)?;
        let f = f_beta(&pred, &ls.sample.ground_truth, policy)?;
        Ok((ls.sample.id.clone(), ls.combo.clone(), m, f))
    });
    let mut scored: Vec<(String, ComboLabel, f64, f64)> =
        scored.into_iter().collect::<Result<_>>()?;
    scored.sort_by(|a, b| a.0.cmp(&b.0));

    let aggregate = |items: &[&(String, ComboLabel, f64, f64)]| -> (f64, f64) {
        let n = items.len() as f64;
        let mae_sum: f64 = items.iter().map(|x| x.2).sum();
        let f_sum: f64 = items.iter().map(|x| x.3).sum();
        (mae_sum / n, f_sum / n)
    };

    let mut rows = Vec::new();
    match mode {
        EvalMode::Joint => {
            let all: Vec<&(String, ComboLabel, f64, f64)> = scored.iter().collect();
            let (m, f) = aggregate(&all);
            rows.push(EvalRow { subset: "ALL".into(), n: all.len(), mae: m, fbeta: f });
        }
        EvalMode::Sole => {
            let order: Vec<ComboLabel> = match subsets {
                Some(list) => list.to_vec(),
                None => {
                    // present combos, in the standard seven's order first
                    let standard = ComboLabel::standard_seven();
                    let mut present: Vec<ComboLabel> = Vec::new();
                    for c in &standard {
                        if scored.iter().any(|s| &s.1 == c) {
                            present.push(c.clone());
                        }
                    }
                    let mut extras: Vec<ComboLabel> = scored
                        .iter()
                        .map(|s| s.1.clone())
                        .filter(|c| !standard.contains(c))
                        .collect();
                    extras.sort_by_key(|c| c.to_string());
                    extras.dedup();
                    present.extend(extras);
                    present
                }
            };
            for combo in &order {
                let items: Vec<&(String, ComboLabel, f64, f64)> =
                    scored.iter().filter(|s| &s.1 == combo).collect();
                if items.is_empty() {
                    return Err(Error::Eval(format!("subset {combo} has no samples")));
                }
                let (m, f) = aggregate(&items);
                rows.push(EvalRow {
                    subset: combo.to_string(),
                    n: items.len(),
                    mae: m,
                    fbeta: f,
                });
            }
        }
    }
    Ok(EvalReport { rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::default_modalities;
    use ndarray::{arr2, Array2, Array3};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn mae_trivial_cases() {
        let ones = Array2::from_elem((4, 4), 1.0);
        let zeros = Array2::zeros((4, 4));
        assert_eq!(mae(&ones, &ones).unwrap(), 0.0);
        assert_eq!(mae(&zeros, &ones).unwrap(), 1.0);
        let pred = arr2(&[[0.2, 0.8], [0.0, 1.0]]);
        let gt = arr2(&[[0.0, 1.0], [0.0, 1.0]]);
        assert!((mae(&pred, &gt).unwrap() - 0.1).abs() < 1e-12);
    }

    #[test]
    fn mae_is_symmetric_and_linear_in_blend() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let pred = Array2::from_shape_fn((6, 6), |_| rng.gen_range(0.0..1.0));
        let gt = Array2::from_shape_fn((6, 6), |(i, j)| ((i + j) % 2) as f64);
        assert_eq!(mae(&pred, &gt).unwrap(), mae(&gt, &pred).unwrap());
        let base = mae(&pred, &gt).unwrap();
        for alpha in [0.0, 0.5, 1.0] {
            let blend = pred.mapv(|p| 0.0) + &(alpha * &pred + (1.0 - alpha) * &gt);
            let m = mae(&blend, &gt).unwrap();
            assert!((m - alpha * base).abs() < 1e-12, "alpha {alpha}");
        }
    }

    #[test]
    fn fbeta_perfect_and_empty_predictions() {
        let gt = Array2::from_shape_fn((4, 4), |(i, _)| if i < 2 { 1.0 } else { 0.0 });
        assert!((f_beta(&gt, &gt, FbetaPolicy::Sweep).unwrap() - 1.0).abs() < 1e-12);
        let zeros = Array2::zeros((4, 4));
        assert_eq!(f_beta(&zeros, &gt, FbetaPolicy::Sweep).unwrap(), 0.0);
    }

    #[test]
    fn fbeta_rejects_all_negative_gt() {
        let pred = Array2::from_elem((3, 3), 0.5);
        let gt = Array2::zeros((3, 3));
        assert!(f_beta(&pred, &gt, FbetaPolicy::Sweep).is_err());
    }

    /// Independent naive sweep: binarize at each threshold with a full pass.
    fn fbeta_oracle(pred: &Array2<f64>, gt: &Array2<f64>) -> f64 {
        let npos = gt.iter().filter(|&&g| g >= 0.5).count() as f64;
        let mut acc = 0.0;
        for i in 1..=255 {
            let t = i as f64 / 256.0;
            let mut tp = 0.0;
            let mut fp = 0.0;
            for (p, g) in pred.iter().zip(gt.iter()) {
                if *p >= t {
                    if *g >= 0.5 {
                        tp += 1.0;
                    } else {
                        fp += 1.0;
                    }
                }
            }
            acc += fscore(tp, fp, npos);
        }
        acc / 255.0
    }

    #[test]
    fn fbeta_matches_oracle_on_three_level_case() {
        let pred = arr2(&[[0.2, 0.6, 0.9], [0.9, 0.6, 0.2], [0.2, 0.2, 0.9]]);
        let gt = arr2(&[[0.0, 1.0, 1.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]]);
        let fast = f_beta(&pred, &gt, FbetaPolicy::Sweep).unwrap();
        let slow = fbeta_oracle(&pred, &gt);
        assert!((fast - slow).abs() < 1e-12, "{fast} vs {slow}");
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(16))]

        #[test]
        fn fbeta_is_bounded_and_matches_oracle(seed in 0u64..10_000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let pred = Array2::from_shape_fn((8, 8), |_| rng.gen_range(0.0..=1.0));
            let mut gt = Array2::from_shape_fn((8, 8), |_| {
                if rng.gen_bool(0.4) { 1.0 } else { 0.0 }
            });
            gt[[0, 0]] = 1.0; // keep recall defined
            let fast = f_beta(&pred, &gt, FbetaPolicy::Sweep).unwrap();
            proptest::prop_assert!((0.0..=1.0).contains(&fast));
            let slow = fbeta_oracle(&pred, &gt);
            proptest::prop_assert!((fast - slow).abs() < 1e-9, "{} vs {}", fast, slow);
        }
    }

    fn labeled(id: &str, combo: &str, fill: f64) -> LabeledSample {
        let known = default_modalities();
        let combo = ComboLabel::parse(combo, &known).unwrap();
        let mut images = std::collections::BTreeMap::new();
        for k in combo.kinds() {
            let c = if k.as_str() == "RGB" { 3 } else { 1 };
            images.insert(k.clone(), Array3::from_elem((c, 8, 8), fill));
        }
        let gt = Array2::from_shape_fn((8, 8), |(i, _)| if i < 4 { 1.0 } else { 0.0 });
        LabeledSample {
            combo,
            sample: MultimodalSample { id: id.into(), images, ground_truth: gt },
        }
    }

    fn checkerboard_predictor(s: &MultimodalSample) -> Result<Array2<f64>> {
        let (h, w) = s.size();
        Ok(Array2::from_shape_fn((h, w), |(i, j)| {
            0.1 + 0.8 * (((i * w + j) % 5) as f64 / 4.0)
        }))
    }

    #[test]
    fn sole_mode_reports_requested_subsets_in_order() {
        let samples = vec![
            labeled("a", "RGB", 0.2),
            labeled("b", "RGB-D", 0.4),
            labeled("c", "RGB", 0.6),
        ];
        let report = evaluate(
            &checkerboard_predictor,
            &samples,
            EvalMode::Sole,
            None,
            FbetaPolicy::Sweep,
        )
        .unwrap();
        let names: Vec<&str> = report.rows.iter().map(|r| r.subset.as_str()).collect();
        assert_eq!(names, vec!["RGB", "RGB-D"]);
        assert_eq!(report.rows[0].n, 2);
    }

    #[test]
    fn requested_empty_subset_is_an_error() {
        let samples = vec![labeled("a", "RGB", 0.2)];
        let known = default_modalities();
        let req = vec![ComboLabel::parse("D-T", &known).unwrap()];
        let err = evaluate(
            &checkerboard_predictor,
            &samples,
            EvalMode::Sole,
            Some(&req),
            FbetaPolicy::Sweep,
        )
        .unwrap_err()
        .to_string();
        assert!(err.contains("D-T"), "{err}");
    }

    #[test]
    fn joint_mae_is_weighted_mean_of_sole_maes() {
        let samples = vec![
            labeled("a", "RGB", 0.2),
            labeled("b", "RGB-D", 0.4),
            labeled("c", "RGB", 0.6),
            labeled("d", "T", 0.1),
        ];
        let sole = evaluate(
            &checkerboard_predictor,
            &samples,
            EvalMode::Sole,
            None,
            FbetaPolicy::Sweep,
        )
        .unwrap();
        let joint = evaluate(
            &checkerboard_predictor,
            &samples,
            EvalMode::Joint,
            None,
            FbetaPolicy::Sweep,
        )
        .unwrap();
        let total_n: usize = sole.rows.iter().map(|r| r.n).sum();
        let weighted: f64 =
            sole.rows.iter().map(|r| r.mae * r.n as f64).sum::<f64>() / total_n as f64;
        assert_eq!(joint.rows.len(), 1);
        assert_eq!(joint.rows[0].subset, "ALL");
        assert!((joint.rows[0].mae - weighted).abs() < 1e-12);
    }

    #[test]
    fn evaluate_is_invariant_to_sample_order() {
        let mut samples = vec![
            labeled("a", "RGB", 0.2),
            labeled("b", "RGB-D", 0.4),
            labeled("c", "RGB", 0.6),
        ];
        let before = evaluate(
            &checkerboard_predictor,
            &samples,
            EvalMode::Sole,
            None,
            FbetaPolicy::Sweep,
        )
        .unwrap();
        samples.reverse();
        let after = evaluate(
            &checkerboard_predictor,
            &samples,
            EvalMode::Sole,
            None,
            FbetaPolicy::Sweep,
        )
        .unwrap();
        assert_eq!(before, after);
    }
}
