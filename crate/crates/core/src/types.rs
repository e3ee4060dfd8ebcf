//! Domain types shared by every other module: modality tags, registered
//! multimodal samples, feature pyramids and saliency predictions.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A modality tag. The stock tags are `RGB`, `D` (depth) and `T` (thermal);
/// any other label can be registered in the model config.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ModalityKind(String);

impl ModalityKind {
    pub fn new(tag: impl AsRef<str>) -> Self {
        ModalityKind(tag.as_ref().trim().to_ascii_uppercase())
    }

    pub fn rgb() -> Self {
        ModalityKind("RGB".into())
    }

    pub fn depth() -> Self {
        ModalityKind("D".into())
    }

    pub fn thermal() -> Self {
        ModalityKind("T".into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for ModalityKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl FromStr for ModalityKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.trim().is_empty() {
            return Err(Error::Parse("empty modality tag".into()));
        }
        Ok(ModalityKind::new(s))
    }
}

/// The default modality set and its canonical ordering.
pub fn default_modalities() -> Vec<ModalityKind> {
    vec![ModalityKind::rgb(), ModalityKind::depth(), ModalityKind::thermal()]
}

/// A modality combination (e.g. `RGB-D-T`), kept in the canonical order of a
/// known-modality list.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ComboLabel(Vec<ModalityKind>);

impl ComboLabel {
    /// Builds a combo from an unordered set of tags, sorting by the position
    /// each tag holds in `known`.
    pub fn new(mut kinds: Vec<ModalityKind>, known: &[ModalityKind]) -> Result<Self> {
        if kinds.is_empty() {
            return Err(Error::EmptyInput("combo has no modalities".into()));
        }
        for k in &kinds {
            if !known.contains(k) {
                return Err(Error::UnknownModality(k.to_string(), join_kinds(known)));
            }
        }
        kinds.sort_by_key(|k| known.iter().position(|m| m == k).unwrap());
        kinds.dedup();
        Ok(ComboLabel(kinds))
    }

    pub fn kinds(&self) -> &[ModalityKind] {
        &self.0
    }

    pub fn contains(&self, kind: &ModalityKind) -> bool {
        self.0.contains(kind)
    }

    pub fn parse(s: &str, known: &[ModalityKind]) -> Result<Self> {
        let kinds: Vec<ModalityKind> = s
            .split('-')
            .map(ModalityKind::new)
            .collect();
        ComboLabel::new(kinds, known)
    }

    /// The seven standard combos over {RGB, D, T}, in evaluation order.
    pub fn standard_seven() -> Vec<ComboLabel> {
        let known = default_modalities();
        ["RGB", "D", "T", "RGB-D", "RGB-T", "D-T", "RGB-D-T"]
            .iter()
            .map(|s| ComboLabel::parse(s, &known).unwrap())
            .collect()
    }
}

impl fmt::Display for ComboLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<&str> = self.0.iter().map(|k| k.as_str()).collect();
        f.write_str(&parts.join("-"))
    }
}

fn join_kinds(kinds: &[ModalityKind]) -> String {
    kinds.iter().map(|k| k.as_str()).collect::<Vec<_>>().join(", ")
}

/// A set of spatially registered single-modality images plus a ground-truth
/// saliency mask. Images are `(channels, H, W)` with unit-interval
/// intensities; channels is 1 or 3.
#[derive(Debug, Clone)]
pub struct MultimodalSample {
    pub id: String,
    pub images: BTreeMap<ModalityKind, Array3<f64>>,
    pub ground_truth: Array2<f64>,
}

impl MultimodalSample {
    pub fn size(&self) -> (usize, usize) {
        self.ground_truth.dim()
    }

    pub fn modalities(&self) -> Vec<ModalityKind> {
        self.images.keys().cloned().collect()
    }
}

/// Checks every `MultimodalSample` invariant and returns one description per
/// violation. An empty list means the sample is valid. Never fails.
pub fn validate_sample(sample: &MultimodalSample) -> Vec<String> {
    let mut violations = Vec::new();
    if sample.images.is_empty() {
        violations.push("no modalities present".to_string());
        return violations;
    }
    let (gh, gw) = sample.ground_truth.dim();
    for (kind, img) in &sample.images {
        let (c, h, w) = img.dim();
        if c != 1 && c != 3 {
            violations.push(format!("{kind} has {c} channels, expected 1 or 3"));
        }
        if (h, w) != (gh, gw) {
            violations.push(format!(
                "images not co-registered: {kind} is {h}\u{d7}{w}, expected {gh}\u{d7}{gw}"
            ));
        }
        if img.iter().any(|v| !(0.0..=1.0).contains(v)) {
            violations.push(format!("{kind} has intensities outside [0,1]"));
        }
    }
    if sample.ground_truth.iter().any(|&v| v != 0.0 && v != 1.0) {
        violations.push("ground truth is not binary".to_string());
    }
    violations
}

/// Replicates a single-channel image to three channels. Three-channel inputs
/// pass through unchanged; any other channel count is an error.
pub fn unify_channels(image: &Array3<f64>) -> Result<Array3<f64>> {
    let (c, h, w) = image.dim();
    match c {
        3 => Ok(image.clone()),
        1 => {
            let mut out = Array3::zeros((3, h, w));
            for ch in 0..3 {
                out.index_axis_mut(ndarray::Axis(0), ch)
                    .assign(&image.index_axis(ndarray::Axis(0), 0));
            }
            Ok(out)
        }
        other => Err(Error::ShapeMismatch(format!(
            "unify_channels expects 1 or 3 channels, got {other}"
        ))),
    }
}

/// Four levels of spatial feature maps for one modality, `(C_l, H_l, W_l)`
/// per level, spatial sizes halving per level and channel widths strictly
/// increasing.
#[derive(Debug, Clone)]
pub struct FeaturePyramid {
    levels: Vec<Array3<f64>>,
}

impl FeaturePyramid {
    pub fn new(levels: Vec<Array3<f64>>) -> Result<Self> {
        if levels.len() != 4 {
            return Err(Error::ShapeMismatch(format!(
                "feature pyramid needs exactly 4 levels, got {}",
                levels.len()
            )));
        }
        for l in 0..3 {
            let (c0, h0, w0) = levels[l].dim();
            let (c1, h1, w1) = levels[l + 1].dim();
            if h1 * 2 != h0 || w1 * 2 != w0 {
                return Err(Error::ShapeMismatch(format!(
                    "level {} is {h0}\u{d7}{w0} but level {} is {h1}\u{d7}{w1}; sizes must halve",
                    l + 1,
                    l + 2
                )));
            }
            if c1 <= c0 {
                return Err(Error::ShapeMismatch(format!(
                    "channel widths must strictly increase, got {c0} then {c1}"
                )));
            }
        }
        Ok(FeaturePyramid { levels })
    }

    pub fn levels(&self) -> &[Array3<f64>] {
        &self.levels
    }

    pub fn level(&self, index: usize) -> &Array3<f64> {
        &self.levels[index]
    }
}

/// Primary saliency map plus the three auxiliary maps, all at input
/// resolution with post-sigmoid values in [0,1].
#[derive(Debug, Clone)]
pub struct SaliencyPrediction {
    pub primary: Array2<f64>,
    pub auxiliary: Vec<Array2<f64>>,
}

impl SaliencyPrediction {
    pub fn new(primary: Array2<f64>, auxiliary: Vec<Array2<f64>>) -> Result<Self> {
        if auxiliary.len() != 3 {
            return Err(Error::ShapeMismatch(format!(
                "expected 3 auxiliary maps, got {}",
                auxiliary.len()
            )));
        }
        for (i, m) in std::iter::once(&primary).chain(auxiliary.iter()).enumerate() {
            if m.dim() != primary.dim() {
                return Err(Error::ShapeMismatch(format!(
                    "auxiliary map {i} has size {:?}, expected {:?}",
                    m.dim(),
                    primary.dim()
                )));
            }
            if m.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::ShapeMismatch(format!(
                    "saliency map {i} has values outside [0,1]"
                )));
            }
        }
        Ok(SaliencyPrediction { primary, auxiliary })
    }

    /// All four maps, primary first.
    pub fn maps(&self) -> Vec<&Array2<f64>> {
        std::iter::once(&self.primary).chain(self.auxiliary.iter()).collect()
    }
}
