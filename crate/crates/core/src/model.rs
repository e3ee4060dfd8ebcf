//! The full detector: prompt-conditioned backbone per input modality,
//! per-level cross-modal fusion, coarse-to-fine decoding.

use std::collections::BTreeMap;

use ndarray::Array3;

use crate::autodiff::{Tape, Var};
use crate::config::ModelConfig;
use crate::decoder::{decode_graph, init_decoder, DecodedMaps};
use crate::error::{Error, Result};
use crate::fusion::{cdfm_graph, init_dfm, sdfm_graph, DfmVars, FusionKind, FusionMode};
use crate::mafe::{backbone_graph, init_mafe};
use crate::nn::{Ctx, Init, ParamStore};
use crate::types::{
    unify_channels, FeaturePyramid, ModalityKind, MultimodalSample, SaliencyPrediction,
};

/// Model = config + named parameters.
#[derive(Debug, Clone)]
pub struct Model {
    pub cfg: ModelConfig,
    pub params: ParamStore,
}

/// Registers every parameter of the architecture described by `cfg`.
pub fn init_params(cfg: &ModelConfig, seed: u64) -> ParamStore {
    let mut store = ParamStore::new();
    let mut init = Init::new(&mut store, seed);
    init_mafe(&mut init, cfg);
    if let FusionMode::Hybrid(plan) = &cfg.fusion {
        for l in 1..=4 {
            let kind = plan.kind_at(l);
            let side = cfg.grid_side(l);
            init_dfm(
                &mut init,
                &format!("fusion.level{l}.{}", kind.as_str()),
                kind,
                cfg.widths[l - 1],
                side * side,
                cfg.ffn_expansion,
            );
        }
    }
    init_decoder(&mut init, cfg);
    store
}

pub(crate) struct SampleGraph {
    pub decoded: DecodedMaps,
    /// Own-prompt pyramids per present modality, in config order.
    pub pyramids: Vec<(ModalityKind, [Var; 4])>,
}

impl Model {
    pub fn new(cfg: ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let params = init_params(&cfg, seed);
        Ok(Model { cfg, params })
    }

    /// Channel-unifies and resizes an input image to the model resolution.
    pub fn prepare_image(&self, image: &Array3<f64>) -> Result<Array3<f64>> {
        let unified = unify_channels(image)?;
        Ok(crate::imgio::resize_image(&unified, self.cfg.input_size, self.cfg.input_size))
    }

    /// Extracts the 4-level pyramid for one image under one modality prompt.
    pub fn extract_features(
        &self,
        image: &Array3<f64>,
        modality: &ModalityKind,
    ) -> Result<FeaturePyramid> {
        let prepared = self.prepare_image(image)?;
        crate::mafe::extract_features(&self.cfg, &self.params, &prepared, modality)
    }

    /// Extracts one pyramid per present modality, each under its own prompt,
    /// all through the same shared parameters.
    pub fn extract_all(
        &self,
        sample: &MultimodalSample,
    ) -> Result<BTreeMap<ModalityKind, FeaturePyramid>> {
        let violations = crate::types::validate_sample(sample);
        if !violations.is_empty() {
            return Err(Error::InvalidSample(violations.join("; ")));
        }
        let mut out = BTreeMap::new();
        for (kind, image) in &sample.images {
            out.insert(kind.clone(), self.extract_features(image, kind)?);
        }
        Ok(out)
    }

    /// Builds the forward graph for one sample's images (already unified and
    /// at model resolution), through fusion and decoding.
    pub(crate) fn sample_graph(
        &self,
        ctx: &Ctx<'_>,
        images: &[(ModalityKind, Array3<f64>)],
    ) -> Result<SampleGraph> {
        if images.is_empty() {
            return Err(Error::EmptyInput("sample has no modalities".into()));
        }
        let mut pyramids = Vec::with_capacity(images.len());
        for (kind, image) in images {
            let img = ctx.tape.leaf(image.clone().into_dyn());
            let levels = backbone_graph(ctx, &self.cfg, img, Some(kind))?;
            pyramids.push((kind.clone(), levels));
        }
        let fused = self.fuse_graph(ctx, &pyramids)?;
        let decoded = decode_graph(ctx, &self.cfg, &fused);
        Ok(SampleGraph { decoded, pyramids })
    }

    pub(crate) fn fuse_graph(
        &self,
        ctx: &Ctx<'_>,
        pyramids: &[(ModalityKind, [Var; 4])],
    ) -> Result<[Var; 4]> {
        let t = ctx.tape;
        let mut fused = Vec::with_capacity(4);
        for l in 1..=4 {
            let inputs: Vec<Var> = pyramids.iter().map(|(_, p)| p[l - 1]).collect();
            let side = self.cfg.grid_side(l);
            let dims = (self.cfg.widths[l - 1], side, side);
            let out = match &self.cfg.fusion {
                FusionMode::Additive => t.mean_vars(&inputs),
                FusionMode::Hybrid(plan) => {
                    let kind = plan.kind_at(l);
                    let prefix = format!("fusion.level{l}.{}", kind.as_str());
                    let vars = DfmVars::from_ctx(ctx, &prefix);
                    match kind {
                        FusionKind::Sdfm => sdfm_graph(t, &inputs, dims, &vars),
                        FusionKind::Cdfm => cdfm_graph(t, &inputs, dims, &vars),
                    }
                }
            };
            fused.push(out);
        }
        Ok([fused[0], fused[1], fused[2], fused[3]])
    }

    /// Orders a sample's images canonically and prepares them for the graph.
    pub(crate) fn prepared_images(
        &self,
        sample: &MultimodalSample,
    ) -> Result<Vec<(ModalityKind, Array3<f64>)>> {
        let violations = crate::types::validate_sample(sample);
        if !violations.is_empty() {
            return Err(Error::InvalidSample(violations.join("; ")));
        }
        let mut out = Vec::new();
        for kind in &self.cfg.modalities {
            if let Some(image) = sample.images.get(kind) {
                out.push((kind.clone(), self.prepare_image(image)?));
            }
        }
        for kind in sample.images.keys() {
            if !self.cfg.modalities.contains(kind) {
                let known = self
                    .cfg
                    .modalities
                    .iter()
                    .map(|k| k.as_str())
                    .collect::<Vec<_>>()
                    .join(", ");
                return Err(Error::UnknownModality(kind.to_string(), known));
            }
        }
        Ok(out)
    }

    /// Full forward pass: saliency maps at the sample's own resolution.
    pub fn predict(&self, sample: &MultimodalSample) -> Result<SaliencyPrediction> {
        let images = self.prepared_images(sample)?;
        let tape = Tape::new();
        let ctx = Ctx::new(&tape, &self.params);
        let graph = self.sample_graph(&ctx, &images)?;
        let (gh, gw) = sample.size();
        let mut maps = Vec::with_capacity(4);
        for v in graph.decoded.maps {
            let arr = tape.value(v);
            let full = arr
                .view()
                .into_dimensionality::<ndarray::Ix3>()
                .expect("map is 3-d");
            let (_, h, w) = full.dim();
            let plane = full.index_axis(ndarray::Axis(0), 0).to_owned();
            let plane = if (h, w) == (gh, gw) {
                plane
            } else {
                crate::imgio::resize_map(&plane, gh, gw)
            };
            maps.push(plane);
        }
        let primary = maps.remove(0);
        SaliencyPrediction::new(primary, maps)
    }

    /// Primary map only; the usual entry point for evaluation.
    pub fn predict_map(&self, sample: &MultimodalSample) -> Result<ndarray::Array2<f64>> {
        Ok(self.predict(sample)?.primary)
    }
}
