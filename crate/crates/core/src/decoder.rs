//! Coarse-to-fine saliency decoder.
//!
//! Level 4 is decoded alone; each lower level merges its lateral projection
//! with the upsampled decode of the level above (concatenate, 3x3 conv,
//! GELU). Every level carries a 1-channel sigmoid head, and all four maps
//! are bilinearly upsampled to input resolution.

use ndarray::Array3;

use crate::autodiff::Var;
use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::nn::{Ctx, Init};
use crate::types::SaliencyPrediction;

pub(crate) fn init_decoder(init: &mut Init<'_>, cfg: &ModelConfig) {
    let d = cfg.decoder_width;
    for l in 1..=4 {
        init.conv(&format!("decoder.lateral{l}"), d, cfg.widths[l - 1], 1);
        let merge_in = if l == 4 { d } else { 2 * d };
        init.conv(&format!("decoder.merge{l}"), d, merge_in, 3);
        init.conv(&format!("decoder.head{l}"), 1, d, 1);
    }
}

/// Decoded saliency maps as graph nodes, all `(1, S, S)`. Probabilities are
/// the sigmoid of the full-resolution logits; the logits stay available so
/// losses can use the numerically stable logit form of cross entropy.
pub struct DecodedMaps {
    /// `maps[0]` is S^1 (primary), `maps[1..]` are S^2..S^4; values in [0,1].
    pub maps: [Var; 4],
    /// Pre-sigmoid full-resolution maps, same order.
    pub logits: [Var; 4],
}

pub fn decode_graph(ctx: &Ctx<'_>, cfg: &ModelConfig, fused: &[Var; 4]) -> DecodedMaps {
    let t = ctx.tape;
    let full = cfg.input_size;
    let mut maps: Vec<Option<Var>> = vec![None; 4];
    let mut logit_maps: Vec<Option<Var>> = vec![None; 4];
    let mut above: Option<Var> = None;
    for l in (1..=4).rev() {
        let side = cfg.grid_side(l);
        let lateral = ctx.conv2d(fused[l - 1], &format!("decoder.lateral{l}"), 0);
        let merged_in = match above {
            None => lateral,
            Some(top) => {
                let up = t.upsample_bilinear(top, side, side);
                t.concat(ndarray::Axis(0), &[lateral, up])
            }
        };
        let dec = t.gelu(ctx.conv2d(merged_in, &format!("decoder.merge{l}"), 1));
        let logits = ctx.conv2d(dec, &format!("decoder.head{l}"), 0);
        let logits_full = t.upsample_bilinear(logits, full, full);
        logit_maps[l - 1] = Some(logits_full);
        maps[l - 1] = Some(t.sigmoid(logits_full));
        above = Some(dec);
    }
    DecodedMaps {
        maps: [
            maps[0].unwrap(),
            maps[1].unwrap(),
            maps[2].unwrap(),
            maps[3].unwrap(),
        ],
        logits: [
            logit_maps[0].unwrap(),
            logit_maps[1].unwrap(),
            logit_maps[2].unwrap(),
            logit_maps[3].unwrap(),
        ],
    }
}

/// Array-level wrapper over [`decode_graph`], validating the fused pyramid
/// shape chain against the config.
pub fn decode(
    cfg: &ModelConfig,
    store: &crate::nn::ParamStore,
    fused: &[Array3<f64>],
) -> Result<SaliencyPrediction> {
    if fused.len() != 4 {
        return Err(Error::ShapeMismatch(format!(
            "decoder expects 4 fused maps, got {}",
            fused.len()
        )));
    }
    for (i, f) in fused.iter().enumerate() {
        let side = cfg.grid_side(i + 1);
        let expect = (cfg.widths[i], side, side);
        if f.dim() != expect {
            return Err(Error::ShapeMismatch(format!(
                "fused level {} is {:?}, expected {:?}",
                i + 1,
                f.dim(),
                expect
            )));
        }
    }
    let tape = crate::autodiff::Tape::new();
    let ctx = Ctx::new(&tape, store);
    let vars = [
        tape.leaf(fused[0].clone().into_dyn()),
        tape.leaf(fused[1].clone().into_dyn()),
        tape.leaf(fused[2].clone().into_dyn()),
        tape.leaf(fused[3].clone().into_dyn()),
    ];
    let decoded = decode_graph(&ctx, cfg, &vars);
    let mut out = Vec::with_capacity(4);
    for v in decoded.maps {
        let arr = tape.value(v);
        let (_, h, w) = arr
            .view()
            .into_dimensionality::<ndarray::Ix3>()
            .expect("map is 3-d")
            .dim();
        out.push(
            arr.to_shape((h, w))
                .expect("1-channel map")
                .to_owned(),
        );
    }
    let primary = out.remove(0);
    SaliencyPrediction::new(primary, out)
}
