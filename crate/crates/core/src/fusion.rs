//! Variable-arity cross-modal fusion.
//!
//! Both fusion modules treat one modality's features as a token and attend
//! across the modality axis, so any number of modalities fuses through the
//! same parameters:
//!
//! * SDFM: at every spatial position, attention over the N modality vectors
//!   of length C (spatial-wise interactions).
//! * CDFM: at every channel, attention over the N modality rows of length
//!   W*H (channel-wise interactions).
//!
//! The hybrid plan assigns one module kind to each pyramid level; the stock
//! plan runs SDFM on levels 1-2 and CDFM on levels 3-4.

use std::fmt;

use ndarray::{Array1, Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::nn::{Ctx, Init};

/// Which fusion module handles a pyramid level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FusionKind {
    Sdfm,
    Cdfm,
}

impl FusionKind {
    pub fn as_str(self) -> &'static str {
        match self {
            FusionKind::Sdfm => "sdfm",
            FusionKind::Cdfm => "cdfm",
        }
    }
}

/// Assignment of a fusion module kind to each of the four pyramid levels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FusionPlan {
    per_level: [FusionKind; 4],
}

impl Default for FusionPlan {
    /// SDFM on the two low levels, CDFM on the two high levels.
    fn default() -> Self {
        FusionPlan {
            per_level: [FusionKind::Sdfm, FusionKind::Sdfm, FusionKind::Cdfm, FusionKind::Cdfm],
        }
    }
}

impl FusionPlan {
    pub fn new(per_level: [FusionKind; 4]) -> Self {
        FusionPlan { per_level }
    }

    /// Module kind at `level` (1-based).
    pub fn kind_at(&self, level: usize) -> FusionKind {
        self.per_level[level - 1]
    }

    /// Parses either the `sdfm=1,2 cdfm=3,4` form or the table form
    /// `1,2|3,4` (SDFM levels left of the bar, `-` for an empty side).
    pub fn parse(text: &str) -> Result<Self> {
        let text = text.trim();
        let mut assigned: [Option<FusionKind>; 4] = [None; 4];
        let mut assign = |level: usize, kind: FusionKind| -> Result<()> {
            if !(1..=4).contains(&level) {
                return Err(Error::Parse(format!("fusion level {level} out of range 1..4")));
            }
            if assigned[level - 1].is_some() {
                return Err(Error::Parse(format!("fusion level {level} assigned twice")));
            }
            assigned[level - 1] = Some(kind);
            Ok(())
        };
        let parse_levels = |s: &str| -> Result<Vec<usize>> {
            let s = s.trim();
            if s.is_empty() || s == "-" || s == "\u{2212}" {
                return Ok(Vec::new());
            }
            s.split(',')
                .map(|p| {
                    p.trim()
                        .parse::<usize>()
                        .map_err(|_| Error::Parse(format!("bad fusion level '{p}'")))
                })
                .collect()
        };
        if text.contains('|') {
            let (sdfm, cdfm) = text.split_once('|').unwrap();
            for l in parse_levels(sdfm)? {
                assign(l, FusionKind::Sdfm)?;
            }
            for l in parse_levels(cdfm)? {
                assign(l, FusionKind::Cdfm)?;
            }
        } else {
            for part in text.split_whitespace() {
                let (kind, levels) = part.split_once('=').ok_or_else(|| {
                    Error::Parse(format!("expected 'sdfm=..' or 'cdfm=..', got '{part}'"))
                })?;
                let kind = match kind.to_ascii_lowercase().as_str() {
                    "sdfm" => FusionKind::Sdfm,
                    "cdfm" => FusionKind::Cdfm,
                    other => {
                        return Err(Error::Parse(format!("unknown fusion module '{other}'")))
                    }
                };
                for l in parse_levels(levels)? {
                    assign(l, kind)?;
                }
            }
        }
        let mut per_level = [FusionKind::Sdfm; 4];
        for (i, slot) in assigned.iter().enumerate() {
            per_level[i] = slot.ok_or_else(|| {
                Error::Parse(format!("fusion level {} not assigned", i + 1))
            })?;
        }
        Ok(FusionPlan { per_level })
    }
}

impl fmt::Display for FusionPlan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let levels_of = |kind: FusionKind| -> Vec<String> {
            (1..=4)
                .filter(|&l| self.kind_at(l) == kind)
                .map(|l| l.to_string())
                .collect()
        };
        let sdfm = levels_of(FusionKind::Sdfm);
        let cdfm = levels_of(FusionKind::Cdfm);
        let mut parts = Vec::new();
        if !sdfm.is_empty() {
            parts.push(format!("sdfm={}", sdfm.join(",")));
        }
        if !cdfm.is_empty() {
            parts.push(format!("cdfm={}", cdfm.join(",")));
        }
        f.write_str(&parts.join(" "))
    }
}

/// Fusion strategy: the hybrid per-level plan, or plain element-wise
/// averaging of the unimodal maps (the ablation baseline).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum FusionMode {
    Hybrid(FusionPlan),
    Additive,
}

impl FusionMode {
    pub fn parse(text: &str) -> Result<Self> {
        if text.trim().eq_ignore_ascii_case("additive") {
            return Ok(FusionMode::Additive);
        }
        Ok(FusionMode::Hybrid(FusionPlan::parse(text)?))
    }

    pub fn plan(&self) -> Option<&FusionPlan> {
        match self {
            FusionMode::Hybrid(p) => Some(p),
            FusionMode::Additive => None,
        }
    }
}

impl fmt::Display for FusionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FusionMode::Hybrid(p) => p.fmt(f),
            FusionMode::Additive => f.write_str("additive"),
        }
    }
}

/// Modality token embedding: unimodal level-l maps rearranged so one
/// modality is one token. Spatial variant is `(W*H, N, C)`; channel variant
/// is `(C, N, W*H)`.
#[derive(Debug, Clone)]
pub struct ModalityTokenEmbedding {
    pub data: Array3<f64>,
    pub kind: FusionKind,
    /// Spatial size of the embedded maps.
    pub height: usize,
    pub width: usize,
}

fn check_same_shapes(features: &[Array3<f64>]) -> Result<(usize, usize, usize)> {
    if features.is_empty() {
        return Err(Error::EmptyInput("fusion requires at least one modality".into()));
    }
    let dim = features[0].dim();
    for (i, f) in features.iter().enumerate() {
        if f.dim() != dim {
            return Err(Error::ShapeMismatch(format!(
                "modality {i} has shape {:?}, expected {:?}",
                f.dim(),
                dim
            )));
        }
    }
    Ok(dim)
}

/// Rearranges N same-shaped `(C, H, W)` maps into the spatial embedding
/// `(W*H, N, C)`: slot `(p, n, :)` is modality n's channel vector at
/// flattened raster position p.
pub fn embed_modalities_spatial(features: &[Array3<f64>]) -> Result<ModalityTokenEmbedding> {
    let (c, h, w) = check_same_shapes(features)?;
    let n = features.len();
    let mut data = Array3::zeros((h * w, n, c));
    for (ni, f) in features.iter().enumerate() {
        for p in 0..h * w {
            for ch in 0..c {
                data[[p, ni, ch]] = f[[ch, p / w, p % w]];
            }
        }
    }
    Ok(ModalityTokenEmbedding { data, kind: FusionKind::Sdfm, height: h, width: w })
}

/// Rearranges N same-shaped `(C, H, W)` maps into the channel embedding
/// `(C, N, W*H)`: slot `(ch, n, :)` is modality n's channel `ch` flattened.
pub fn embed_modalities_channel(features: &[Array3<f64>]) -> Result<ModalityTokenEmbedding> {
    let (c, h, w) = check_same_shapes(features)?;
    let n = features.len();
    let mut data = Array3::zeros((c, n, h * w));
    for (ni, f) in features.iter().enumerate() {
        for ch in 0..c {
            for p in 0..h * w {
                data[[ch, ni, p]] = f[[ch, p / w, p % w]];
            }
        }
    }
    Ok(ModalityTokenEmbedding { data, kind: FusionKind::Cdfm, height: h, width: w })
}

impl ModalityTokenEmbedding {
    /// Number of embedded modalities.
    pub fn arity(&self) -> usize {
        self.data.dim().1
    }

    /// Recovers the original per-modality maps exactly.
    pub fn unembed(&self) -> Vec<Array3<f64>> {
        let (h, w) = (self.height, self.width);
        let n = self.arity();
        let c = match self.kind {
            FusionKind::Sdfm => self.data.dim().2,
            FusionKind::Cdfm => self.data.dim().0,
        };
        (0..n)
            .map(|ni| {
                Array3::from_shape_fn((c, h, w), |(ch, i, j)| match self.kind {
                    FusionKind::Sdfm => self.data[[i * w + j, ni, ch]],
                    FusionKind::Cdfm => self.data[[ch, ni, i * w + j]],
                })
            })
            .collect()
    }
}

/// Parameters of one dynamic fusion module. For SDFM the projections act on
/// channel vectors (`C x C`); for CDFM they act on flattened spatial rows
/// (`W*H x W*H`). The feed-forward network is position-wise over channels in
/// both.
#[derive(Debug, Clone)]
pub struct DfmParams {
    pub wq: Array2<f64>,
    pub bq: Array1<f64>,
    pub wk: Array2<f64>,
    pub bk: Array1<f64>,
    pub wv: Array2<f64>,
    pub bv: Array1<f64>,
    pub ffn_w1: Array2<f64>,
    pub ffn_b1: Array1<f64>,
    pub ffn_w2: Array2<f64>,
    pub ffn_b2: Array1<f64>,
}

impl DfmParams {
    /// Identity Q/K/V projections and an all-zero FFN: useful for
    /// hand-checkable fixtures. `proj_dim` is C for SDFM, W*H for CDFM;
    /// `channels` sizes the FFN.
    pub fn identity(proj_dim: usize, channels: usize, expansion: usize) -> Self {
        DfmParams {
            wq: Array2::eye(proj_dim),
            bq: Array1::zeros(proj_dim),
            wk: Array2::eye(proj_dim),
            bk: Array1::zeros(proj_dim),
            wv: Array2::eye(proj_dim),
            bv: Array1::zeros(proj_dim),
            ffn_w1: Array2::zeros((channels, channels * expansion)),
            ffn_b1: Array1::zeros(channels * expansion),
            ffn_w2: Array2::zeros((channels * expansion, channels)),
            ffn_b2: Array1::zeros(channels),
        }
    }

    /// Draws all tensors from a named store under `prefix`.
    pub fn from_store(store: &crate::nn::ParamStore, prefix: &str) -> Result<Self> {
        let get2 = |suffix: &str| -> Result<Array2<f64>> {
            let name = format!("{prefix}.{suffix}");
            store
                .get(&name)
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter '{name}'")))?
                .clone()
                .into_dimensionality::<ndarray::Ix2>()
                .map_err(|_| Error::ShapeMismatch(format!("{name} is not 2-d")))
        };
        let get1 = |suffix: &str| -> Result<Array1<f64>> {
            let name = format!("{prefix}.{suffix}");
            store
                .get(&name)
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter '{name}'")))?
                .clone()
                .into_dimensionality::<ndarray::Ix1>()
                .map_err(|_| Error::ShapeMismatch(format!("{name} is not 1-d")))
        };
        Ok(DfmParams {
            wq: get2("q.weight")?,
            bq: get1("q.bias")?,
            wk: get2("k.weight")?,
            bk: get1("k.bias")?,
            wv: get2("v.weight")?,
            bv: get1("v.bias")?,
            ffn_w1: get2("ffn.fc1.weight")?,
            ffn_b1: get1("ffn.fc1.bias")?,
            ffn_w2: get2("ffn.fc2.weight")?,
            ffn_b2: get1("ffn.fc2.bias")?,
        })
    }
}

/// Tape bindings of a [`DfmParams`] set.
pub struct DfmVars {
    pub wq: Var,
    pub bq: Var,
    pub wk: Var,
    pub bk: Var,
    pub wv: Var,
    pub bv: Var,
    pub ffn_w1: Var,
    pub ffn_b1: Var,
    pub ffn_w2: Var,
    pub ffn_b2: Var,
}

impl DfmVars {
    pub fn bind(tape: &Tape, p: &DfmParams) -> Self {
        DfmVars {
            wq: tape.leaf(p.wq.clone().into_dyn()),
            bq: tape.leaf(p.bq.clone().into_dyn()),
            wk: tape.leaf(p.wk.clone().into_dyn()),
            bk: tape.leaf(p.bk.clone().into_dyn()),
            wv: tape.leaf(p.wv.clone().into_dyn()),
            bv: tape.leaf(p.bv.clone().into_dyn()),
            ffn_w1: tape.leaf(p.ffn_w1.clone().into_dyn()),
            ffn_b1: tape.leaf(p.ffn_b1.clone().into_dyn()),
            ffn_w2: tape.leaf(p.ffn_w2.clone().into_dyn()),
            ffn_b2: tape.leaf(p.ffn_b2.clone().into_dyn()),
        }
    }

    pub fn from_ctx(ctx: &Ctx<'_>, prefix: &str) -> Self {
        DfmVars {
            wq: ctx.param(&format!("{prefix}.q.weight")),
            bq: ctx.param(&format!("{prefix}.q.bias")),
            wk: ctx.param(&format!("{prefix}.k.weight")),
            bk: ctx.param(&format!("{prefix}.k.bias")),
            wv: ctx.param(&format!("{prefix}.v.weight")),
            bv: ctx.param(&format!("{prefix}.v.bias")),
            ffn_w1: ctx.param(&format!("{prefix}.ffn.fc1.weight")),
            ffn_b1: ctx.param(&format!("{prefix}.ffn.fc1.bias")),
            ffn_w2: ctx.param(&format!("{prefix}.ffn.fc2.weight")),
            ffn_b2: ctx.param(&format!("{prefix}.ffn.fc2.bias")),
        }
    }
}

/// Registers the parameters of one fusion module at `prefix`.
pub(crate) fn init_dfm(
    init: &mut Init<'_>,
    prefix: &str,
    kind: FusionKind,
    channels: usize,
    spatial: usize,
    expansion: usize,
) {
    let proj = match kind {
        FusionKind::Sdfm => channels,
        FusionKind::Cdfm => spatial,
    };
    init.linear(&format!("{prefix}.q"), proj, proj);
    init.linear(&format!("{prefix}.k"), proj, proj);
    init.linear(&format!("{prefix}.v"), proj, proj);
    init.linear(&format!("{prefix}.ffn.fc1"), channels, channels * expansion);
    init.linear(&format!("{prefix}.ffn.fc2"), channels * expansion, channels);
}

fn ffn_tokens(tape: &Tape, tokens: Var, p: &DfmVars) -> Var {
    let h = tape.linear(tokens, p.ffn_w1, p.ffn_b1);
    let h = tape.gelu(h);
    tape.linear(h, p.ffn_w2, p.ffn_b2)
}

/// SDFM graph: at each spatial position, attention over the N modality
/// channel vectors, modality-axis mean, plus an FFN residual on the
/// element-wise mean of the raw inputs. Inputs are `(C, H, W)` nodes.
pub fn sdfm_graph(
    tape: &Tape,
    inputs: &[Var],
    dims: (usize, usize, usize),
    p: &DfmVars,
) -> Var {
    let (c, h, w) = dims;
    let n = inputs.len();
    let tokens: Vec<Var> = inputs.iter().map(|&x| tape.chw_to_tokens(x)).collect();
    // (P, N*C) -> (P*N, C): rows grouped by position, one row per modality
    let emb = if n == 1 {
        tokens[0]
    } else {
        let cat = tape.concat(ndarray::Axis(1), &tokens);
        tape.reshape(cat, &[h * w * n, c])
    };
    let q = tape.linear(emb, p.wq, p.bq);
    let k = tape.linear(emb, p.wk, p.bk);
    let v = tape.linear(emb, p.wv, p.bv);
    let scores = tape.batched_scores(q, k, n, 1.0 / (c as f64).sqrt());
    let weights = tape.softmax_rows(scores);
    let interacted = tape.batched_apply(weights, v);
    let prelim = tape.group_mean_rows(interacted, n);
    let prelim_map = tape.tokens_to_chw(prelim, h, w);

    let mean_raw = tape.mean_vars(inputs);
    let mean_tokens = tape.chw_to_tokens(mean_raw);
    let ffn_out = ffn_tokens(tape, mean_tokens, p);
    let ffn_map = tape.tokens_to_chw(ffn_out, h, w);
    tape.add(ffn_map, prelim_map)
}

/// CDFM graph: same pipeline with attention per channel over the N modality
/// rows of length W*H.
pub fn cdfm_graph(
    tape: &Tape,
    inputs: &[Var],
    dims: (usize, usize, usize),
    p: &DfmVars,
) -> Var {
    let (c, h, w) = dims;
    let n = inputs.len();
    let sp = h * w;
    // (C, H, W) -> (C, P) rows
    let rows: Vec<Var> = inputs.iter().map(|&x| tape.reshape(x, &[c, sp])).collect();
    // (C, N*P) -> (C*N, P): rows grouped by channel, one row per modality
    let emb = if n == 1 {
        rows[0]
    } else {
        let cat = tape.concat(ndarray::Axis(1), &rows);
        tape.reshape(cat, &[c * n, sp])
    };
    let q = tape.linear(emb, p.wq, p.bq);
    let k = tape.linear(emb, p.wk, p.bk);
    let v = tape.linear(emb, p.wv, p.bv);
    let scores = tape.batched_scores(q, k, n, 1.0 / (sp as f64).sqrt());
    let weights = tape.softmax_rows(scores);
    let interacted = tape.batched_apply(weights, v);
    let prelim = tape.group_mean_rows(interacted, n); // (C, P)
    let prelim_map = tape.reshape(prelim, &[c, h, w]);

    let mean_raw = tape.mean_vars(inputs);
    let mean_tokens = tape.chw_to_tokens(mean_raw);
    let ffn_out = ffn_tokens(tape, mean_tokens, p);
    let ffn_map = tape.tokens_to_chw(ffn_out, h, w);
    tape.add(ffn_map, prelim_map)
}

fn fuse_arrays(
    features: &[Array3<f64>],
    params: &DfmParams,
    kind: FusionKind,
) -> Result<Array3<f64>> {
    let dims = check_same_shapes(features)?;
    let proj_dim = match kind {
        FusionKind::Sdfm => dims.0,
        FusionKind::Cdfm => dims.1 * dims.2,
    };
    if params.wq.dim() != (proj_dim, proj_dim) {
        return Err(Error::ShapeMismatch(format!(
            "projection is {:?}, expected ({proj_dim}, {proj_dim})",
            params.wq.dim()
        )));
    }
    let tape = Tape::new();
    let inputs: Vec<Var> =
        features.iter().map(|f| tape.leaf(f.clone().into_dyn())).collect();
    let vars = DfmVars::bind(&tape, params);
    let out = match kind {
        FusionKind::Sdfm => sdfm_graph(&tape, &inputs, dims, &vars),
        FusionKind::Cdfm => cdfm_graph(&tape, &inputs, dims, &vars),
    };
    Ok((*tape.value(out))
        .clone()
        .into_dimensionality::<ndarray::Ix3>()
        .expect("fusion output is 3-d"))
}

/// Fuses N same-shaped `(C, H, W)` maps spatial-wise. For N = 1 this
/// degenerates to `FFN(F) + V(F)`.
pub fn sdfm_fuse(features: &[Array3<f64>], params: &DfmParams) -> Result<Array3<f64>> {
    fuse_arrays(features, params, FusionKind::Sdfm)
}

/// Fuses N same-shaped `(C, H, W)` maps channel-wise. For N = 1 this
/// degenerates to `FFN(F) + V(F)`.
pub fn cdfm_fuse(features: &[Array3<f64>], params: &DfmParams) -> Result<Array3<f64>> {
    fuse_arrays(features, params, FusionKind::Cdfm)
}

/// Hybrid fusion of whole pyramids: level `l` goes through the module the
/// plan assigns it, with that module's parameters drawn from `store` under
/// `fusion.level{l}.{kind}`. Returns the four fused maps.
pub fn csfh_fuse(
    pyramids: &std::collections::BTreeMap<crate::types::ModalityKind, crate::types::FeaturePyramid>,
    plan: &FusionPlan,
    store: &crate::nn::ParamStore,
) -> Result<Vec<Array3<f64>>> {
    if pyramids.is_empty() {
        return Err(Error::EmptyInput("no pyramids to fuse".into()));
    }
    let reference: Vec<_> = pyramids.values().next().unwrap().levels().to_vec();
    for (kind, p) in pyramids {
        for l in 0..4 {
            if p.level(l).dim() != reference[l].dim() {
                return Err(Error::ShapeMismatch(format!(
                    "pyramid of {kind} has level-{} shape {:?}, expected {:?}",
                    l + 1,
                    p.level(l).dim(),
                    reference[l].dim()
                )));
            }
        }
    }
    let mut fused = Vec::with_capacity(4);
    for l in 1..=4 {
        let kind = plan.kind_at(l);
        let params = DfmParams::from_store(store, &format!("fusion.level{l}.{}", kind.as_str()))?;
        let features: Vec<Array3<f64>> =
            pyramids.values().map(|p| p.level(l - 1).clone()).collect();
        fused.push(fuse_arrays(&features, &params, kind)?);
    }
    Ok(fused)
}
