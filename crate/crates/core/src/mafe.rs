//! Modality-adaptive feature extractor: a 4-stage pyramid attention backbone
//! whose token stream carries the input modality's prompt tokens.
//!
//! Spatial tokens follow the usual pyramid recipe (patch embed, per-stage
//! 2x2 merges, pooled spatial-reduction attention). Prompt tokens ride in a
//! parallel lane: they join every block's attention as extra query/key/value
//! rows, skip pooling and merging, and cross stage boundaries through a
//! learned width projection. Spatial queries read the prompt rows through a
//! per-head gate (initialized to zero) added on top of their softmax over
//! the pooled spatial keys, so a zero-gate, zero-prompt model reproduces the
//! prompt-free pass bit for bit while trained gates let prompt content steer
//! every spatial token.

use ndarray::{Array2, Array3, Axis};

use crate::autodiff::Var;
use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::nn::{Ctx, Init};
use crate::types::{FeaturePyramid, ModalityKind};

/// Registers every backbone parameter (and one prompt per known modality).
pub(crate) fn init_mafe(init: &mut Init<'_>, cfg: &ModelConfig) {
    if cfg.prompts_enabled {
        for m in &cfg.modalities {
            init.normal(
                &format!("prompt.{m}"),
                &[cfg.n_prompt_tokens, cfg.prompt_width()],
                0.02,
            );
        }
    }
    for s in 1..=4 {
        let c = cfg.widths[s - 1];
        let grid = cfg.grid_side(s);
        let prefix = format!("mafe.stage{s}");
        if s == 1 {
            let in_dim = 3 * cfg.patch_size * cfg.patch_size;
            init.linear(&format!("{prefix}.embed"), in_dim, c);
        } else {
            init.linear(&format!("{prefix}.embed"), 4 * cfg.widths[s - 2], c);
            if cfg.prompts_enabled {
                init.linear(&format!("{prefix}.prompt_carry"), cfg.widths[s - 2], c);
            }
        }
        init.normal(&format!("{prefix}.pos"), &[grid * grid, c], 0.02);
        for b in 0..cfg.blocks[s - 1] {
            let bp = format!("{prefix}.block{b}");
            init.layer_norm(&format!("{bp}.norm1"), c);
            for proj in ["q", "k", "v", "o"] {
                init.linear(&format!("{bp}.attn.{proj}"), c, c);
            }
            init.linear(&format!("{bp}.attn.sr"), c, c);
            init.layer_norm(&format!("{bp}.attn.srnorm"), c);
            if cfg.prompts_enabled {
                init.zeros(&format!("{bp}.attn.gate"), &[cfg.heads[s - 1]]);
            }
            init.layer_norm(&format!("{bp}.norm2"), c);
            init.linear(&format!("{bp}.ffn.fc1"), c, c * cfg.ffn_expansion);
            init.linear(&format!("{bp}.ffn.fc2"), c * cfg.ffn_expansion, c);
        }
    }
}

/// Projects each non-overlapping patch of a channel-unified image to a
/// stage-1 token: `(3, H, W)` -> `(K, C2)` with `K = (H/patch)*(W/patch)`.
pub fn embed_patches(
    cfg: &ModelConfig,
    store: &crate::nn::ParamStore,
    image: &Array3<f64>,
) -> Result<Array2<f64>> {
    let (c, h, w) = image.dim();
    if c != 3 {
        return Err(Error::ShapeMismatch(format!(
            "embed_patches expects a channel-unified 3-channel image, got {c} channels"
        )));
    }
    let p = cfg.patch_size;
    if h % p != 0 || w % p != 0 {
        return Err(Error::ShapeMismatch(format!(
            "image {h}\u{d7}{w} not divisible by patch size {p}"
        )));
    }
    let tape = crate::autodiff::Tape::new();
    let ctx = Ctx::new(&tape, store);
    let img = tape.leaf(image.clone().into_dyn());
    let tokens = embed_patches_graph(&ctx, img, h, w, p);
    Ok((*tape.value(tokens))
        .clone()
        .into_dimensionality::<ndarray::Ix2>()
        .expect("token matrix is 2-d"))
}

fn embed_patches_graph(ctx: &Ctx<'_>, image: Var, h: usize, w: usize, patch: usize) -> Var {
    let t = ctx.tape;
    let tokens = t.chw_to_tokens(image);
    let patches = t.space_to_depth_tokens(tokens, h, w, patch);
    ctx.linear(patches, "mafe.stage1.embed")
}

struct BlockIo {
    spatial: Var,
    prompt: Option<Var>,
}

/// One attention + FFN block. `grid` is the current spatial side.
fn block_graph(ctx: &Ctx<'_>, cfg: &ModelConfig, io: BlockIo, stage: usize, b: usize, grid: usize) -> BlockIo {
    let t = ctx.tape;
    let c = cfg.widths[stage - 1];
    let heads = cfg.heads[stage - 1];
    let dh = c / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let k_spatial = grid * grid;
    let bp = format!("mafe.stage{stage}.block{b}");

    let joined = match io.prompt {
        Some(p) => t.concat(Axis(0), &[io.spatial, p]),
        None => io.spatial,
    };
    let normed = ctx.layer_norm(joined, &format!("{bp}.norm1"));
    let x_norm = t.slice_axis(normed, Axis(0), 0, k_spatial);

    // pooled spatial keys/values ("linear" spatial reduction)
    let sr = cfg.sr_ratios[stage - 1];
    let pooled = t.avgpool_tokens(x_norm, grid, grid, sr);
    let pooled = ctx.linear(pooled, &format!("{bp}.attn.sr"));
    let pooled = ctx.layer_norm(pooled, &format!("{bp}.attn.srnorm"));
    let pooled = t.gelu(pooled);
    let k_reduced = (grid / sr) * (grid / sr);

    let kv_src = match io.prompt {
        Some(_) => {
            let p_norm = t.slice_axis(normed, Axis(0), k_spatial, k_spatial + cfg.n_prompt_tokens);
            t.concat(Axis(0), &[pooled, p_norm])
        }
        None => pooled,
    };
    let q_all = ctx.linear(normed, &format!("{bp}.attn.q"));
    let k_all = ctx.linear(kv_src, &format!("{bp}.attn.k"));
    let v_all = ctx.linear(kv_src, &format!("{bp}.attn.v"));

    let q_sp = t.slice_axis(q_all, Axis(0), 0, k_spatial);
    let mut spatial_heads = Vec::with_capacity(heads);
    let mut prompt_heads = Vec::with_capacity(heads);
    for h in 0..heads {
        let cols = (h * dh, (h + 1) * dh);
        let qh = t.slice_axis(q_sp, Axis(1), cols.0, cols.1);
        let kh = t.slice_axis(k_all, Axis(1), cols.0, cols.1);
        let vh = t.slice_axis(v_all, Axis(1), cols.0, cols.1);
        let k_sp = t.slice_axis(kh, Axis(0), 0, k_reduced);
        let v_sp = t.slice_axis(vh, Axis(0), 0, k_reduced);

        // spatial queries over pooled spatial keys
        let logits_sp = t.mul_scalar(t.matmul(qh, t.transpose2(k_sp)), scale);
        let w_sp = t.softmax_rows(logits_sp);
        let mut out_sp = t.matmul(w_sp, v_sp);

        if io.prompt.is_some() {
            // gated prompt-group softmax added on top
            let n = cfg.n_prompt_tokens;
            let k_pr = t.slice_axis(kh, Axis(0), k_reduced, k_reduced + n);
            let v_pr = t.slice_axis(vh, Axis(0), k_reduced, k_reduced + n);
            let logits_pr = t.mul_scalar(t.matmul(qh, t.transpose2(k_pr)), scale);
            let w_pr = t.softmax_rows(logits_pr);
            let pr_out = t.matmul(w_pr, v_pr);
            let gate = ctx.param(&format!("{bp}.attn.gate"));
            let gh = t.index_1d(gate, h);
            let gated = t.scale_by(pr_out, gh);
            out_sp = t.add(out_sp, gated);

            // prompt queries attend to everything jointly
            let q_pr = t.slice_axis(q_all, Axis(0), k_spatial, k_spatial + n);
            let qph = t.slice_axis(q_pr, Axis(1), cols.0, cols.1);
            let logits = t.mul_scalar(t.matmul(qph, t.transpose2(kh)), scale);
            let w = t.softmax_rows(logits);
            prompt_heads.push(t.matmul(w, vh));
        }
        spatial_heads.push(out_sp);
    }
    let attn_src = if io.prompt.is_some() {
        let sp = t.concat(Axis(1), &spatial_heads);
        let pr = t.concat(Axis(1), &prompt_heads);
        t.concat(Axis(0), &[sp, pr])
    } else {
        t.concat(Axis(1), &spatial_heads)
    };
    let attn_out = ctx.linear(attn_src, &format!("{bp}.attn.o"));

    let (mut spatial, mut prompt) = match io.prompt {
        Some(p) => {
            let sp = t.slice_axis(attn_out, Axis(0), 0, k_spatial);
            let pr =
                t.slice_axis(attn_out, Axis(0), k_spatial, k_spatial + cfg.n_prompt_tokens);
            (t.add(io.spatial, sp), Some(t.add(p, pr)))
        }
        None => (t.add(io.spatial, attn_out), None),
    };

    // FFN with pre-norm, applied to spatial and prompt rows alike
    let joined = match prompt {
        Some(p) => t.concat(Axis(0), &[spatial, p]),
        None => spatial,
    };
    let normed = ctx.layer_norm(joined, &format!("{bp}.norm2"));
    let ffn_out = ctx.ffn(normed, &format!("{bp}.ffn"));
    match prompt {
        Some(p) => {
            let sp = t.slice_axis(ffn_out, Axis(0), 0, k_spatial);
            let pr = t.slice_axis(ffn_out, Axis(0), k_spatial, k_spatial + cfg.n_prompt_tokens);
            spatial = t.add(spatial, sp);
            prompt = Some(t.add(p, pr));
        }
        None => {
            spatial = t.add(spatial, ffn_out);
        }
    }
    BlockIo { spatial, prompt }
}

/// Builds the full backbone graph for one image and returns the four level
/// features as `(C_l, H_l, W_l)` nodes. `modality` selects the prompt; pass
/// `None` for a prompt-free pass (prompts disabled).
pub fn backbone_graph(
    ctx: &Ctx<'_>,
    cfg: &ModelConfig,
    image: Var,
    modality: Option<&ModalityKind>,
) -> Result<[Var; 4]> {
    let t = ctx.tape;
    let dims = ctx.tape.value(image).shape().to_vec();
    if dims != [3, cfg.input_size, cfg.input_size] {
        return Err(Error::ShapeMismatch(format!(
            "backbone expects a (3, {0}, {0}) image, got {dims:?}",
            cfg.input_size
        )));
    }
    if let Some(m) = modality {
        if !cfg.modalities.contains(m) {
            let known = cfg
                .modalities
                .iter()
                .map(|k| k.as_str())
                .collect::<Vec<_>>()
                .join(", ");
            return Err(Error::UnknownModality(m.to_string(), known));
        }
    }

    let mut spatial =
        embed_patches_graph(ctx, image, cfg.input_size, cfg.input_size, cfg.patch_size);
    let mut prompt = match (cfg.prompts_enabled, modality) {
        (true, Some(m)) => Some(ctx.param(&format!("prompt.{m}"))),
        _ => None,
    };

    let mut levels = Vec::with_capacity(4);
    for s in 1..=4 {
        let grid = cfg.grid_side(s);
        if s > 1 {
            let prev_grid = cfg.grid_side(s - 1);
            let merged = t.space_to_depth_tokens(spatial, prev_grid, prev_grid, 2);
            spatial = ctx.linear(merged, &format!("mafe.stage{s}.embed"));
            if let Some(p) = prompt {
                prompt = Some(ctx.linear(p, &format!("mafe.stage{s}.prompt_carry")));
            }
        }
        let pos = ctx.param(&format!("mafe.stage{s}.pos"));
        spatial = t.add(spatial, pos);
        let mut io = BlockIo { spatial, prompt };
        for b in 0..cfg.blocks[s - 1] {
            io = block_graph(ctx, cfg, io, s, b, grid);
        }
        spatial = io.spatial;
        prompt = io.prompt;
        levels.push(t.tokens_to_chw(spatial, grid, grid));
    }
    Ok([levels[0], levels[1], levels[2], levels[3]])
}

/// Array-level wrapper: extracts the 4-level pyramid for one image with one
/// modality's prompt.
pub fn extract_features(
    cfg: &ModelConfig,
    store: &crate::nn::ParamStore,
    image: &Array3<f64>,
    modality: &ModalityKind,
) -> Result<FeaturePyramid> {
    let unified = crate::types::unify_channels(image)?;
    let tape = crate::autodiff::Tape::new();
    let ctx = Ctx::new(&tape, store);
    let img = tape.leaf(unified.into_dyn());
    let levels = backbone_graph(&ctx, cfg, img, Some(modality))?;
    let arrays = levels
        .iter()
        .map(|&v| {
            (*tape.value(v))
                .clone()
                .into_dimensionality::<ndarray::Ix3>()
                .expect("level is 3-d")
        })
        .collect();
    FeaturePyramid::new(arrays)
}
