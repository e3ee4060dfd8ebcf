//! Training loop, two-phase schedule, checkpointing and parameter
//! accounting.
//!
//! Phase 1 trains every parameter with SGD (Nesterov momentum, L2 decay);
//! phase 2 freezes everything but the prompt tokens. Batch gradients are
//! computed per sample in parallel and reduced in sample order, so training
//! histories are bit-reproducible for a given seed regardless of thread
//! count.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;
use std::time::Instant;

use ndarray::{ArrayD, IxDyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tape;
use crate::config::{ModelConfig, TrainConfig};
use crate::error::{Error, Result};
use crate::losses::{mtc_graph, saliency_logits_graph, DistanceFn};
use crate::metrics::LabeledSample;
use crate::model::{init_params, Model};
use crate::nn::{name_seed, Ctx, ParamStore};
use crate::par;
use crate::types::{ModalityKind, MultimodalSample};

/// SGD with Nesterov momentum and L2 weight decay.
pub struct SgdNesterov {
    pub lr: f64,
    pub weight_decay: f64,
    pub momentum: f64,
    velocity: BTreeMap<String, ArrayD<f64>>,
}

impl SgdNesterov {
    pub fn new(lr: f64, weight_decay: f64, momentum: f64) -> Self {
        SgdNesterov { lr, weight_decay, momentum, velocity: BTreeMap::new() }
    }

    /// Applies one update. Only parameters passing `trainable` move; decay
    /// applies only to trainable parameters passing `decay`.
    pub fn step(
        &mut self,
        params: &mut ParamStore,
        grads: &BTreeMap<String, ArrayD<f64>>,
        trainable: impl Fn(&str) -> bool,
        decay: impl Fn(&str) -> bool,
    ) {
        let names: Vec<String> = params.names().cloned().collect();
        for name in names {
            if !trainable(&name) {
                continue;
            }
            let Some(grad) = grads.get(&name) else { continue };
            let p = params.get_mut(&name).expect("trainable param exists");
            let mut g = grad.clone();
            if self.weight_decay > 0.0 && decay(&name) {
                g.zip_mut_with(p, |gv, &pv| *gv += self.weight_decay * pv);
            }
            let v = self
                .velocity
                .entry(name.clone())
                .or_insert_with(|| ArrayD::zeros(p.raw_dim()));
            v.zip_mut_with(&g, |vv, &gv| *vv = self.momentum * *vv + gv);
            // nesterov update: g + mu * v
            let mu = self.momentum;
            let lr = self.lr;
            ndarray::Zip::from(p).and(&g.view()).and(&v.view()).for_each(|pv, &gv, &vv| {
                *pv -= lr * (gv + mu * vv);
            });
        }
    }
}

struct Prepared {
    id: String,
    images: Vec<(ModalityKind, ndarray::Array3<f64>)>,
    gt: ndarray::Array2<f64>,
}

/// Training output: per-step losses and schedule bookkeeping.
#[derive(Debug, Clone)]
pub struct TrainReport {
    /// `(step, mean batch loss)` over both phases, 1-based steps.
    pub history: Vec<(usize, f64)>,
    pub phase1_steps: usize,
    /// False when MTC was requested but no multimodal sample exists.
    pub mtc_active: bool,
}

impl TrainReport {
    /// Two-column text series `step<TAB>loss`.
    pub fn history_text(&self) -> String {
        let mut out = String::new();
        for (step, loss) in &self.history {
            out.push_str(&format!("{step}\t{loss:.17}\n"));
        }
        out
    }
}

fn prepare(model: &Model, samples: &[LabeledSample]) -> Result<Vec<Prepared>> {
    let prepared: Vec<Result<Prepared>> = par::map(samples, |ls| {
        let images = model.prepared_images(&ls.sample)?;
        let side = model.cfg.input_size;
        let gt = if ls.sample.ground_truth.dim() == (side, side) {
            ls.sample.ground_truth.clone()
        } else {
            crate::imgio::resize_map(&ls.sample.ground_truth, side, side)
                .mapv(|v| if v > 0.5 { 1.0 } else { 0.0 })
        };
        Ok(Prepared { id: ls.sample.id.clone(), images, gt })
    });
    prepared.into_iter().collect()
}

/// Computes one sample's total loss and parameter gradients.
fn sample_gradients(
    model: &Model,
    sample: &Prepared,
    mtc_pair: Option<(usize, usize)>,
    distance: DistanceFn,
) -> Result<(f64, BTreeMap<String, ArrayD<f64>>)> {
    let tape = Tape::new();
    let ctx = Ctx::new(&tape, &model.params);
    let graph = model.sample_graph(&ctx, &sample.images)?;
    let side = model.cfg.input_size;
    let gt = tape.leaf(sample.gt.clone().into_dyn());
    let flat_maps = [
        tape.reshape(graph.decoded.maps[0], &[side, side]),
        tape.reshape(graph.decoded.maps[1], &[side, side]),
        tape.reshape(graph.decoded.maps[2], &[side, side]),
        tape.reshape(graph.decoded.maps[3], &[side, side]),
    ];
    let flat_logits = [
        tape.reshape(graph.decoded.logits[0], &[side, side]),
        tape.reshape(graph.decoded.logits[1], &[side, side]),
        tape.reshape(graph.decoded.logits[2], &[side, side]),
        tape.reshape(graph.decoded.logits[3], &[side, side]),
    ];
    let mut total = saliency_logits_graph(&tape, &flat_maps, &flat_logits, gt);

    if let Some((i, j)) = mtc_pair {
        let (kind_i, own_i) = (&graph.pyramids[i].0, graph.pyramids[i].1);
        let (kind_j, own_j) = (&graph.pyramids[j].0, graph.pyramids[j].1);
        // re-extract both images under the partner's prompt
        let img_i = tape.leaf(sample.images[i].1.clone().into_dyn());
        let img_j = tape.leaf(sample.images[j].1.clone().into_dyn());
        let swapped_i = crate::mafe::backbone_graph(&ctx, &model.cfg, img_i, Some(kind_j))?;
        let swapped_j = crate::mafe::backbone_graph(&ctx, &model.cfg, img_j, Some(kind_i))?;
        let mtc = mtc_graph(&tape, &own_i, &own_j, &swapped_i, &swapped_j, distance);
        total = tape.add(total, mtc);
    }

    let loss = tape.scalar(total);
    if !loss.is_finite() {
        return Err(Error::NonFinite(format!("loss for sample {}", sample.id)));
    }
    let mut grads = tape.backward(total);
    let mut out = BTreeMap::new();
    for (name, var) in ctx.bound_params() {
        if let Some(g) = grads.take(var) {
            out.insert(name, g);
        }
    }
    Ok((loss, out))
}

/// Runs the two-phase schedule and returns the loss history. Deterministic
/// for a given config and dataset.
pub fn train(model: &mut Model, samples: &[LabeledSample], cfg: &TrainConfig) -> Result<TrainReport> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(Error::EmptyInput("training set is empty".into()));
    }
    let prepared = prepare(model, samples)?;
    let has_multimodal = prepared.iter().any(|p| p.images.len() >= 2);
    let mtc_active = cfg.mtc_enabled && model.cfg.prompts_enabled && has_multimodal;
    if cfg.mtc_enabled && !has_multimodal {
        eprintln!("warning: MTC enabled but no sample has two or more modalities; term skipped");
    }

    let mut optimizer = SgdNesterov::new(cfg.learning_rate, cfg.weight_decay, cfg.momentum);
    let mut history = Vec::new();
    let mut step = 0usize;
    let mut phase1_steps = 0usize;

    for phase in [1usize, 2] {
        let epochs = if phase == 1 { cfg.epochs } else { cfg.prompt_epochs };
        if phase == 2 && (!model.cfg.prompts_enabled || epochs == 0) {
            break;
        }
        for epoch in 0..epochs {
            let mut order: Vec<usize> = (0..prepared.len()).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(name_seed(
                cfg.seed,
                &format!("shuffle/{phase}/{epoch}"),
            ));
            for i in (1..order.len()).rev() {
                order.swap(i, rng.gen_range(0..=i));
            }
            for chunk in order.chunks(cfg.batch_size) {
                let jobs: Vec<(usize, Option<(usize, usize)>)> = chunk
                    .iter()
                    .map(|&idx| {
                        let p = &prepared[idx];
                        let pair = if mtc_active && p.images.len() >= 2 {
                            let mut prng = ChaCha8Rng::seed_from_u64(name_seed(
                                cfg.seed,
                                &format!("pair/{phase}/{epoch}/{}", p.id),
                            ));
                            let n = p.images.len();
                            let i = prng.gen_range(0..n);
                            let j = (i + prng.gen_range(1..n)) % n;
                            Some((i.min(j), i.max(j)))
                        } else {
                            None
                        };
                        (idx, pair)
                    })
                    .collect();
                let results: Vec<Result<(f64, BTreeMap<String, ArrayD<f64>>)>> =
                    par::map(&jobs, |(idx, pair)| {
                        sample_gradients(model, &prepared[*idx], *pair, cfg.mtc_distance)
                    });

                let mut batch_loss = 0.0;
                let mut grads: BTreeMap<String, ArrayD<f64>> = BTreeMap::new();
                let count = jobs.len() as f64;
                for r in results {
                    let (loss, g) = r?;
                    batch_loss += loss;
                    for (name, grad) in g {
                        match grads.get_mut(&name) {
                            Some(acc) => *acc += &grad,
                            None => {
                                grads.insert(name, grad);
                            }
                        }
                    }
                }
                for g in grads.values_mut() {
                    g.mapv_inplace(|v| v / count);
                }
                batch_loss /= count;
                if cfg.clip_grad_norm > 0.0 {
                    let norm = grads
                        .values()
                        .map(|g| g.iter().map(|v| v * v).sum::<f64>())
                        .sum::<f64>()
                        .sqrt();
                    if norm > cfg.clip_grad_norm {
                        let scale = cfg.clip_grad_norm / norm;
                        for g in grads.values_mut() {
                            g.mapv_inplace(|v| v * scale);
                        }
                    }
                }

                let decay_prompts = cfg.decay_prompts_in_phase2;
                if phase == 1 {
                    optimizer.step(&mut model.params, &grads, |_| true, |_| true);
                } else {
                    optimizer.step(
                        &mut model.params,
                        &grads,
                        |n| n.starts_with("prompt."),
                        |_| decay_prompts,
                    );
                }
                step += 1;
                if phase == 1 {
                    phase1_steps = step;
                }
                history.push((step, batch_loss));
            }
        }
    }
    Ok(TrainReport { history, phase1_steps, mtc_active })
}

/// Per-module parameter accounting.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ParamCounts {
    pub backbone: usize,
    pub prompts: usize,
    pub fusion: usize,
    pub decoder: usize,
    pub total: usize,
}

pub fn count_parameters(model: &Model) -> ParamCounts {
    let s = &model.params;
    let counts = ParamCounts {
        backbone: s.scalar_count_prefix("mafe."),
        prompts: s.scalar_count_prefix("prompt."),
        fusion: s.scalar_count_prefix("fusion."),
        decoder: s.scalar_count_prefix("decoder."),
        total: s.scalar_count(),
    };
    debug_assert_eq!(
        counts.total,
        counts.backbone + counts.prompts + counts.fusion + counts.decoder
    );
    counts
}

// ---- checkpointing ----

const BLOB_MAGIC: &[u8; 8] = b"AMSODF64";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ManifestParam {
    name: String,
    shape: Vec<usize>,
    file: String,
}

#[derive(Serialize, Deserialize)]
struct CheckpointManifest {
    version: u32,
    dtype: String,
    config: ModelConfig,
    params: Vec<ManifestParam>,
}

/// Writes a checkpoint directory: a versioned JSON manifest plus one binary
/// blob per parameter (8-byte magic, then little-endian f64, row-major).
pub fn save_checkpoint(model: &Model, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut manifest = CheckpointManifest {
        version: CHECKPOINT_VERSION,
        dtype: "f64".into(),
        config: model.cfg.clone(),
        params: Vec::new(),
    };
    for (name, value) in model.params.iter() {
        let file = format!("{name}.bin");
        let mut bytes = Vec::with_capacity(8 + value.len() * 8);
        bytes.extend_from_slice(BLOB_MAGIC);
        for v in value.iter() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        std::fs::write(dir.join(&file), bytes)?;
        manifest.params.push(ManifestParam {
            name: name.clone(),
            shape: value.shape().to_vec(),
            file,
        });
    }
    let json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| Error::Checkpoint(format!("manifest serialization: {e}")))?;
    std::fs::write(dir.join("manifest.json"), json)?;
    Ok(())
}

/// Reads a checkpoint directory back into a model.
pub fn load_checkpoint(dir: &Path) -> Result<Model> {
    let text = std::fs::read_to_string(dir.join("manifest.json"))?;
    let manifest: CheckpointManifest = serde_json::from_str(&text)
        .map_err(|e| Error::Checkpoint(format!("manifest parse: {e}")))?;
    if manifest.version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint version {} (expected {CHECKPOINT_VERSION})",
            manifest.version
        )));
    }
    if manifest.dtype != "f64" {
        return Err(Error::Checkpoint(format!("unsupported dtype {}", manifest.dtype)));
    }
    let mut params = ParamStore::new();
    for p in &manifest.params {
        let mut file = std::fs::File::open(dir.join(&p.file))?;
        let mut magic = [0u8; 8];
        file.read_exact(&mut magic)?;
        if &magic != BLOB_MAGIC {
            return Err(Error::Checkpoint(format!("bad magic in blob for '{}'", p.name)));
        }
        let expected: usize = p.shape.iter().product();
        let mut bytes = Vec::new();
        file.read_to_end(&mut bytes)?;
        if bytes.len() != expected * 8 {
            return Err(Error::Checkpoint(format!(
                "blob for '{}' holds {} bytes, expected {}",
                p.name,
                bytes.len(),
                expected * 8
            )));
        }
        let values: Vec<f64> = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let arr = ArrayD::from_shape_vec(IxDyn(&p.shape), values)
            .map_err(|e| Error::Checkpoint(format!("shape of '{}': {e}", p.name)))?;
        params.insert(p.name.clone(), arr);
    }
    let model = Model { cfg: manifest.config, params };
    model.cfg.validate()?;
    // the manifest must describe exactly the parameter set of its config
    let reference = init_params(&model.cfg, 0);
    reference.validate_shapes(&model.params)?;
    Ok(model)
}

/// Loads a checkpoint and verifies it fits `expected`'s architecture,
/// naming the first mismatching parameter otherwise.
pub fn load_checkpoint_into(dir: &Path, expected: &ModelConfig) -> Result<Model> {
    let model = load_checkpoint(dir)?;
    let reference = init_params(expected, 0);
    reference.validate_shapes(&model.params)?;
    Ok(Model { cfg: expected.clone(), params: model.params })
}

/// Writes the loss history as a two-column text series.
pub fn save_history(report: &TrainReport, path: &Path) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(report.history_text().as_bytes())?;
    Ok(())
}

/// Forward cost at each modality arity, for the scaling report.
#[derive(Debug, Clone)]
pub struct ArityCost {
    pub n_modalities: usize,
    pub median_ms: f64,
}

/// Times a forward pass with 1, 2, ... known modalities on a synthetic
/// input and reports the median wall time per arity.
pub fn arity_scaling_report(model: &Model, max_arity: usize, reps: usize) -> Result<Vec<ArityCost>> {
    let side = model.cfg.input_size;
    let max_arity = max_arity.min(model.cfg.modalities.len());
    let mut out = Vec::new();
    for arity in 1..=max_arity {
        let mut images = std::collections::BTreeMap::new();
        for kind in model.cfg.modalities.iter().take(arity) {
            let c = if kind.as_str() == "RGB" { 3 } else { 1 };
            let img = ndarray::Array3::from_shape_fn((c, side, side), |(ch, i, j)| {
                ((ch + 1) * (i * side + j) % 97) as f64 / 96.0
            });
            images.insert(kind.clone(), img);
        }
        let sample = MultimodalSample {
            id: format!("arity{arity}"),
            images,
            ground_truth: ndarray::Array2::zeros((side, side)),
        };
        let mut times: Vec<f64> = Vec::with_capacity(reps);
        model.predict(&sample)?; // warm-up
        for _ in 0..reps {
            let t0 = Instant::now();
            model.predict(&sample)?;
            times.push(t0.elapsed().as_secs_f64() * 1e3);
        }
        times.sort_by(|a, b| a.partial_cmp(b).unwrap());
        out.push(ArityCost { n_modalities: arity, median_ms: times[times.len() / 2] });
    }
    Ok(out)
}

/// Renders the arity report as an aligned table.
pub fn arity_table(costs: &[ArityCost]) -> String {
    let mut out = String::new();
    out.push_str(&format!("{:<12} {:>12}\n", "modalities", "median ms"));
    for c in costs {
        out.push_str(&format!("{:<12} {:>12.2}\n", c.n_modalities, c.median_ms));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fusion::FusionMode;
    use crate::types::{ComboLabel, default_modalities};
    use ndarray::{Array2, Array3};
    use rand::Rng;

    fn tiny_cfg() -> ModelConfig {
        ModelConfig {
            input_size: 32,
            widths: [4, 6, 8, 10],
            heads: [1, 1, 1, 1],
            ffn_expansion: 2,
            n_prompt_tokens: 2,
            decoder_width: 4,
            ..ModelConfig::default()
        }
    }

    fn tiny_dataset(n: usize, side: usize, seed: u64) -> Vec<LabeledSample> {
        let known = default_modalities();
        let combos = ["RGB", "RGB-D", "D-T", "RGB-D-T"];
        (0..n)
            .map(|i| {
                let combo = ComboLabel::parse(combos[i % combos.len()], &known).unwrap();
                let mut rng = ChaCha8Rng::seed_from_u64(seed + i as u64);
                let mut images = std::collections::BTreeMap::new();
                for k in combo.kinds() {
                    let c = if k.as_str() == "RGB" { 3 } else { 1 };
                    images.insert(
                        k.clone(),
                        Array3::from_shape_fn((c, side, side), |_| rng.gen_range(0.0..1.0)),
                    );
                }
                let gt = Array2::from_shape_fn((side, side), |(r, c)| {
                    if r >= side / 4 && r < side / 2 && c >= side / 4 && c < side / 2 {
                        1.0
                    } else {
                        0.0
                    }
                });
                LabeledSample {
                    combo,
                    sample: MultimodalSample { id: format!("s{i:03}"), images, ground_truth: gt },
                }
            })
            .collect()
    }

    fn quick_train_cfg() -> TrainConfig {
        TrainConfig {
            epochs: 2,
            prompt_epochs: 0,
            batch_size: 4,
            learning_rate: 1e-3,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn history_length_matches_schedule() {
        let mut model = Model::new(tiny_cfg(), 1).unwrap();
        let data = tiny_dataset(16, 32, 10);
        let report = train(&mut model, &data, &quick_train_cfg()).unwrap();
        assert_eq!(report.history.len(), 2 * 4); // 2 epochs * ceil(16/4)
        assert!(report.mtc_active);
    }

    #[test]
    fn phase_two_only_moves_prompts() {
        let mut model = Model::new(tiny_cfg(), 2).unwrap();
        // prompt-attention gates start at zero (prompts influence nothing
        // until phase 1 moves them); emulate a post-phase-1 state
        let gate_names: Vec<String> = model
            .params
            .names()
            .filter(|n| n.ends_with(".attn.gate"))
            .cloned()
            .collect();
        for (i, name) in gate_names.iter().enumerate() {
            model.params.get_mut(name).unwrap().fill(0.3 + 0.1 * i as f64);
        }
        let data = tiny_dataset(4, 32, 11);
        let before = model.params.clone();
        let cfg = TrainConfig {
            epochs: 0,
            prompt_epochs: 1,
            batch_size: 2,
            ..TrainConfig::default()
        };
        train(&mut model, &data, &cfg).unwrap();
        let mut prompts_moved = false;
        for (name, value) in model.params.iter() {
            let old = before.get(name).unwrap();
            if name.starts_with("prompt.") {
                if value != old {
                    prompts_moved = true;
                }
            } else {
                assert_eq!(value, old, "frozen parameter '{name}' changed");
            }
        }
        assert!(prompts_moved, "no prompt token moved in phase 2");
    }

    #[test]
    fn training_is_seed_deterministic() {
        let data = tiny_dataset(8, 32, 12);
        let cfg = quick_train_cfg();
        let mut run = || {
            let mut model = Model::new(tiny_cfg(), 3).unwrap();
            let report = train(&mut model, &data, &cfg).unwrap();
            (report.history, model)
        };
        let (h1, m1) = run();
        let (h2, m2) = run();
        assert_eq!(h1, h2, "histories differ between identical runs");
        for (name, value) in m1.params.iter() {
            assert_eq!(value, m2.params.get(name).unwrap(), "param '{name}' differs");
        }
    }

    #[test]
    fn mtc_skips_gracefully_on_single_modality_data() {
        let mut model = Model::new(tiny_cfg(), 4).unwrap();
        let known = default_modalities();
        let data: Vec<LabeledSample> = tiny_dataset(4, 32, 13)
            .into_iter()
            .map(|mut ls| {
                let rgb = ModalityKind::rgb();
                let img = ls.sample.images.get(&rgb).cloned().unwrap_or_else(|| {
                    Array3::from_elem((3, 32, 32), 0.4)
                });
                ls.sample.images.clear();
                ls.sample.images.insert(rgb, img);
                ls.combo = ComboLabel::parse("RGB", &known).unwrap();
                ls
            })
            .collect();
        let report = train(&mut model, &data, &quick_train_cfg()).unwrap();
        assert!(!report.mtc_active);
    }

    #[test]
    fn checkpoint_roundtrip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let model = Model::new(tiny_cfg(), 5).unwrap();
        save_checkpoint(&model, dir.path()).unwrap();
        let back = load_checkpoint(dir.path()).unwrap();
        assert_eq!(back.cfg, model.cfg);
        assert_eq!(back.params.len(), model.params.len());
        for (name, value) in model.params.iter() {
            assert_eq!(back.params.get(name).unwrap(), value, "param '{name}'");
        }
    }

    #[test]
    fn prompt_shape_mismatch_names_the_tensor() {
        let dir = tempfile::tempdir().unwrap();
        let model = Model::new(tiny_cfg(), 6).unwrap();
        save_checkpoint(&model, dir.path()).unwrap();
        let other = ModelConfig { n_prompt_tokens: 3, ..tiny_cfg() };
        let err = load_checkpoint_into(dir.path(), &other).unwrap_err().to_string();
        assert!(err.contains("prompt."), "{err}");
    }

    #[test]
    fn manifest_names_match_parameter_accounting() {
        let dir = tempfile::tempdir().unwrap();
        let model = Model::new(tiny_cfg(), 7).unwrap();
        save_checkpoint(&model, dir.path()).unwrap();
        let text = std::fs::read_to_string(dir.path().join("manifest.json")).unwrap();
        let manifest: CheckpointManifest = serde_json::from_str(&text).unwrap();
        let manifest_total: usize =
            manifest.params.iter().map(|p| p.shape.iter().product::<usize>()).sum();
        let counts = count_parameters(&model);
        assert_eq!(manifest_total, counts.total);
        assert_eq!(manifest.params.len(), model.params.len());
    }

    #[test]
    fn prompt_parameter_count_is_exact() {
        let model = Model::new(ModelConfig::default(), 1).unwrap();
        let counts = count_parameters(&model);
        assert_eq!(counts.prompts, 3 * 4 * 16); // |M| * N_mpt * C2 = 192

        let mut plus = ModelConfig::default();
        plus.modalities.push(ModalityKind::new("X"));
        let bigger = Model::new(plus, 1).unwrap();
        let delta = count_parameters(&bigger).total - counts.total;
        assert_eq!(delta, 4 * 16);
    }

    #[test]
    fn fusion_params_present_iff_hybrid() {
        let hybrid = Model::new(tiny_cfg(), 2).unwrap();
        assert!(count_parameters(&hybrid).fusion > 0);
        let additive =
            Model::new(ModelConfig { fusion: FusionMode::Additive, ..tiny_cfg() }, 2).unwrap();
        assert_eq!(count_parameters(&additive).fusion, 0);
    }
}
