//! Acceptance suite: each check prints one PASS/FAIL line and the process
//! exits nonzero if any check fails. Runs as part of
//! `cargo test --workspace`; invoke alone with
//! `cargo test -p amsod-core --test acceptance`.

use std::collections::BTreeMap;
use std::time::Instant;

use ndarray::{Array1, Array2, Array3, ArrayD, IxDyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use amsod_core::autodiff::check::{finite_difference, max_rel_error};
use amsod_core::autodiff::{Tape, Var};
use amsod_core::config::{ModelConfig, TrainConfig};
use amsod_core::fusion::{
    cdfm_fuse, cdfm_graph, sdfm_fuse, sdfm_graph, DfmParams, DfmVars, FusionKind,
};
use amsod_core::losses::{edge_graph, mtc_graph, mtc_loss_levels, DistanceFn};
use amsod_core::mafe::backbone_graph;
use amsod_core::metrics::{evaluate, f_beta, mae, EvalMode, FbetaPolicy, LabeledSample};
use amsod_core::model::Model;
use amsod_core::nn::Ctx;
use amsod_core::pipeline::{
    arity_scaling_report, arity_table, count_parameters, load_checkpoint, save_checkpoint,
    train,
};
use amsod_core::synthdata::{build_dataset, load_all, load_manifest, DatasetSpec};
use amsod_core::types::{default_modalities, ComboLabel, ModalityKind, MultimodalSample};

type Check = (&'static str, fn() -> Result<String, String>);

fn main() {
    let checks: Vec<Check> = vec![
        ("01 fusion oracle equivalence", c01_fusion_oracle),
        ("02 single-modality degeneration", c02_single_modality),
        ("03 permutation invariance", c03_permutation_invariance),
        ("04 gradient checks", c04_gradient_checks),
        ("05 contrastive closed forms", c05_mtc_closed_forms),
        ("06 metric oracles", c06_metric_oracles),
        ("07 end-to-end training smoke", c07_end_to_end),
        ("08 ablation ordering", c08_ablation_ordering),
        ("09 parameter accounting", c09_parameter_accounting),
        ("10 arity cost scaling", c10_arity_scaling),
        ("11 checkpoint and determinism", c11_checkpoint_determinism),
    ];
    let mut failures = 0;
    for (name, check) in checks {
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(check);
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(Ok(detail)) => println!("criterion {name}: PASS ({secs:.1}s) {detail}"),
            Ok(Err(msg)) => {
                println!("criterion {name}: FAIL ({secs:.1}s) {msg}");
                failures += 1;
            }
            Err(panic) => {
                let msg = panic
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_else(|| "panic".into());
                println!("criterion {name}: FAIL ({secs:.1}s) panicked: {msg}");
                failures += 1;
            }
        }
    }
    if failures > 0 {
        println!("{failures} acceptance criterion(s) failed");
        std::process::exit(1);
    }
    println!("all acceptance criteria passed");
}

fn rand_map(c: usize, h: usize, w: usize, rng: &mut ChaCha8Rng) -> Array3<f64> {
    Array3::from_shape_fn((c, h, w), |_| rng.gen_range(-1.0..1.0))
}

fn rand_mat(r: usize, c: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    Array2::from_shape_fn((r, c), |_| rng.gen_range(-0.7..0.7))
}

fn rand_vec(n: usize, rng: &mut ChaCha8Rng) -> Array1<f64> {
    Array1::from_shape_fn(n, |_| rng.gen_range(-0.7..0.7))
}

fn rand_dfm(kind: FusionKind, c: usize, sp: usize, e: usize, rng: &mut ChaCha8Rng) -> DfmParams {
    let proj = match kind {
        FusionKind::Sdfm => c,
        FusionKind::Cdfm => sp,
    };
    DfmParams {
        wq: rand_mat(proj, proj, rng),
        bq: rand_vec(proj, rng),
        wk: rand_mat(proj, proj, rng),
        bk: rand_vec(proj, rng),
        wv: rand_mat(proj, proj, rng),
        bv: rand_vec(proj, rng),
        ffn_w1: rand_mat(c, c * e, rng),
        ffn_b1: rand_vec(c * e, rng),
        ffn_w2: rand_mat(c * e, c, rng),
        ffn_b2: rand_vec(c, rng),
    }
}

fn gelu_scalar(x: f64) -> f64 {
    let c = 0.797_884_560_802_865_4;
    let u = c * (x + 0.044715 * x * x * x);
    0.5 * x * (1.0 + u.tanh())
}

/// Loop-based evaluation of the spatial fusion pipeline: per-position Q/K/V
/// projections, softmax over the modality axis, weighted values, modality
/// mean, plus the FFN of the raw-input mean. No tensor ops, no code shared
/// with the implementation under test.
fn sdfm_oracle(features: &[Array3<f64>], p: &DfmParams) -> Array3<f64> {
    let n = features.len();
    let (c, h, w) = features[0].dim();
    let e = p.ffn_b1.len();
    let mut out = Array3::zeros((c, h, w));
    for y in 0..h {
        for x in 0..w {
            let tok: Vec<Vec<f64>> = (0..n)
                .map(|m| (0..c).map(|ch| features[m][[ch, y, x]]).collect())
                .collect();
            let project = |weights: &Array2<f64>, bias: &Array1<f64>| -> Vec<Vec<f64>> {
                tok.iter()
                    .map(|row| {
                        (0..c)
                            .map(|o| {
                                bias[o] + (0..c).map(|i| row[i] * weights[[i, o]]).sum::<f64>()
                            })
                            .collect()
                    })
                    .collect()
            };
            let q = project(&p.wq, &p.bq);
            let k = project(&p.wk, &p.bk);
            let v = project(&p.wv, &p.bv);
            let scale = 1.0 / (c as f64).sqrt();
            let mut fused_pos = vec![0.0; c];
            for qi in 0..n {
                let logits: Vec<f64> = (0..n)
                    .map(|ki| scale * (0..c).map(|d| q[qi][d] * k[ki][d]).sum::<f64>())
                    .collect();
                let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let exps: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
                let z: f64 = exps.iter().sum();
                for d in 0..c {
                    let interacted: f64 = (0..n).map(|ki| exps[ki] / z * v[ki][d]).sum();
                    fused_pos[d] += interacted / n as f64; // modality-axis mean
                }
            }
            let mean_raw: Vec<f64> = (0..c)
                .map(|ch| (0..n).map(|m| features[m][[ch, y, x]]).sum::<f64>() / n as f64)
                .collect();
            let hidden: Vec<f64> = (0..e)
                .map(|k| {
                    gelu_scalar(
                        p.ffn_b1[k]
                            + (0..c).map(|i| mean_raw[i] * p.ffn_w1[[i, k]]).sum::<f64>(),
                    )
                })
                .collect();
            for o in 0..c {
                let ffn =
                    p.ffn_b2[o] + (0..e).map(|k| hidden[k] * p.ffn_w2[[k, o]]).sum::<f64>();
                out[[o, y, x]] = fused_pos[o] + ffn;
            }
        }
    }
    out
}

fn max_abs_diff(a: &Array3<f64>, b: &Array3<f64>) -> f64 {
    (a - b).iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

fn c01_fusion_oracle() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst = 0.0f64;
    for n in [2usize, 3] {
        for trial in 0..8 {
            let features: Vec<Array3<f64>> =
                (0..n).map(|_| rand_map(2, 2, 2, &mut rng)).collect();
            let params = rand_dfm(FusionKind::Sdfm, 2, 4, 2, &mut rng);
            let fast =
                sdfm_fuse(&features, &params).map_err(|e| format!("sdfm_fuse failed: {e}"))?;
            let slow = sdfm_oracle(&features, &params);
            let diff = max_abs_diff(&fast, &slow);
            worst = worst.max(diff);
            if diff > 1e-6 {
                return Err(format!("N={n} trial {trial}: diff {diff} > 1e-6"));
            }
        }
    }
    Ok(format!("max |impl - oracle| = {worst:.2e} over N in {{2,3}}"))
}

/// For one modality the fused output must equal FFN(F) + V(F) exactly.
fn c02_single_modality() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(102);
    let f = rand_map(3, 2, 2, &mut rng);
    let p = rand_dfm(FusionKind::Sdfm, 3, 4, 2, &mut rng);
    let out = sdfm_fuse(&[f.clone()], &p).map_err(|e| e.to_string())?;
    let (c, h, w) = f.dim();
    let e = p.ffn_b1.len();
    let mut expected = Array3::zeros((c, h, w));
    for y in 0..h {
        for x in 0..w {
            for o in 0..c {
                let v = p.bv[o] + (0..c).map(|i| f[[i, y, x]] * p.wv[[i, o]]).sum::<f64>();
                let hidden: Vec<f64> = (0..e)
                    .map(|k| {
                        gelu_scalar(
                            p.ffn_b1[k]
                                + (0..c)
                                    .map(|i| f[[i, y, x]] * p.ffn_w1[[i, k]])
                                    .sum::<f64>(),
                        )
                    })
                    .collect();
                let ffn =
                    p.ffn_b2[o] + (0..e).map(|k| hidden[k] * p.ffn_w2[[k, o]]).sum::<f64>();
                expected[[o, y, x]] = v + ffn;
            }
        }
    }
    let diff = max_abs_diff(&out, &expected);
    if diff > 1e-12 {
        return Err(format!("N=1 output differs from FFN(F)+V(F) by {diff}"));
    }
    Ok(format!("exact to {diff:.1e}"))
}

fn c03_permutation_invariance() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(103);
    let mut worst = 0.0f64;
    for arity in 2..=4usize {
        for trial in 0..100 {
            let maps: Vec<Array3<f64>> =
                (0..arity).map(|_| rand_map(3, 2, 2, &mut rng)).collect();
            for kind in [FusionKind::Sdfm, FusionKind::Cdfm] {
                let params = rand_dfm(kind, 3, 4, 2, &mut rng);
                let fuse = |fs: &[Array3<f64>]| match kind {
                    FusionKind::Sdfm => sdfm_fuse(fs, &params),
                    FusionKind::Cdfm => cdfm_fuse(fs, &params),
                };
                let base = fuse(&maps).map_err(|e| e.to_string())?;
                let mut shuffled = maps.clone();
                for i in (1..shuffled.len()).rev() {
                    shuffled.swap(i, rng.gen_range(0..=i));
                }
                let permuted = fuse(&shuffled).map_err(|e| e.to_string())?;
                let diff = max_abs_diff(&base, &permuted);
                worst = worst.max(diff);
                if diff > 1e-5 {
                    return Err(format!(
                        "{kind:?} arity {arity} trial {trial}: diff {diff} > 1e-5"
                    ));
                }
            }
        }
    }
    Ok(format!("max reorder diff = {worst:.2e} over 100 trials x arity 2-4"))
}

/// Analytic gradients of a scalar graph vs central differences.
fn grad_check<F>(name: &str, inputs: &[ArrayD<f64>], build: F) -> Result<f64, String>
where
    F: Fn(&Tape, &[Var]) -> Var,
{
    let tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|x| tape.leaf(x.clone())).collect();
    let root = build(&tape, &vars);
    let grads = tape.backward(root);
    let f = |xs: &[ArrayD<f64>]| {
        let t = Tape::new();
        let vs: Vec<Var> = xs.iter().map(|x| t.leaf(x.clone())).collect();
        t.scalar(build(&t, &vs))
    };
    let numeric = finite_difference(&f, inputs, 1e-5);
    let mut worst = 0.0f64;
    for (i, v) in vars.iter().enumerate() {
        let analytic = grads
            .get(*v)
            .cloned()
            .unwrap_or_else(|| ArrayD::zeros(inputs[i].raw_dim()));
        let err = max_rel_error(&analytic, &numeric[i]);
        worst = worst.max(err);
        if err > 1e-3 {
            return Err(format!("{name}: input {i} rel error {err} > 1e-3"));
        }
    }
    Ok(worst)
}

fn c04_gradient_checks() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(104);
    let mut worst = 0.0f64;

    // edge loss wrt the prediction
    let pred = ArrayD::from_shape_fn(IxDyn(&[4, 4]), |_| rng.gen_range(0.1..0.9));
    let gt = ArrayD::from_shape_fn(
        IxDyn(&[4, 4]),
        |_| if rng.gen_bool(0.5) { 1.0 } else { 0.0 },
    );
    let gt_c = gt.clone();
    worst = worst.max(grad_check("edge_loss", &[pred], move |t, v| {
        let g = t.leaf(gt_c.clone());
        edge_graph(t, v[0], g)
    })?);

    // contrastive loss wrt one pyramid's levels (4 levels of 4x4x2 features)
    let mk = |rng: &mut ChaCha8Rng| {
        ArrayD::from_shape_fn(IxDyn(&[2, 4, 4]), |_| rng.gen_range(-1.0..1.0))
    };
    let own_m1: Vec<ArrayD<f64>> = (0..4).map(|_| mk(&mut rng)).collect();
    let fixed: Vec<Vec<ArrayD<f64>>> =
        (0..3).map(|_| (0..4).map(|_| mk(&mut rng)).collect()).collect();
    worst = worst.max(grad_check("mtc_loss", &own_m1, move |t, v| {
        let bind = |levels: &[ArrayD<f64>]| -> Vec<Var> {
            levels.iter().map(|a| t.leaf(a.clone())).collect()
        };
        mtc_graph(
            t,
            v,
            &bind(&fixed[0]),
            &bind(&fixed[1]),
            &bind(&fixed[2]),
            DistanceFn::EuclideanMean,
        )
    })?);

    // fusion modules wrt inputs and the query projection parameters
    for kind in [FusionKind::Sdfm, FusionKind::Cdfm] {
        let n = 2usize;
        let (c, h, w) = (2usize, 2usize, 2usize);
        let proj = match kind {
            FusionKind::Sdfm => c,
            FusionKind::Cdfm => h * w,
        };
        let mut inputs: Vec<ArrayD<f64>> = (0..n)
            .map(|_| ArrayD::from_shape_fn(IxDyn(&[c, h, w]), |_| rng.gen_range(-1.0..1.0)))
            .collect();
        inputs.push(ArrayD::from_shape_fn(IxDyn(&[proj, proj]), |_| {
            rng.gen_range(-0.7..0.7)
        }));
        inputs.push(ArrayD::from_shape_fn(IxDyn(&[proj]), |_| rng.gen_range(-0.7..0.7)));
        let base = rand_dfm(kind, c, h * w, 2, &mut rng);
        let direction = ArrayD::from_shape_fn(IxDyn(&[c, h, w]), |_| rng.gen_range(-1.0..1.0));
        let label = format!("{kind:?}_fuse");
        let err = grad_check(&label, &inputs, move |t, v| {
            let features = &v[..n];
            let vars = DfmVars {
                wq: v[n],
                bq: v[n + 1],
                wk: t.leaf(base.wk.clone().into_dyn()),
                bk: t.leaf(base.bk.clone().into_dyn()),
                wv: t.leaf(base.wv.clone().into_dyn()),
                bv: t.leaf(base.bv.clone().into_dyn()),
                ffn_w1: t.leaf(base.ffn_w1.clone().into_dyn()),
                ffn_b1: t.leaf(base.ffn_b1.clone().into_dyn()),
                ffn_w2: t.leaf(base.ffn_w2.clone().into_dyn()),
                ffn_b2: t.leaf(base.ffn_b2.clone().into_dyn()),
            };
            let out = match kind {
                FusionKind::Sdfm => sdfm_graph(t, features, (c, h, w), &vars),
                FusionKind::Cdfm => cdfm_graph(t, features, (c, h, w), &vars),
            };
            let d = t.leaf(direction.clone());
            t.sum_all(t.mul(out, d))
        })?;
        worst = worst.max(err);
    }

    // backbone gradients through the prompt tokens on a 16x16 input
    let cfg = ModelConfig {
        input_size: 16,
        patch_size: 2,
        widths: [4, 6, 8, 10],
        heads: [1, 1, 1, 1],
        blocks: [1, 1, 1, 1],
        sr_ratios: [2, 2, 1, 1],
        ffn_expansion: 2,
        n_prompt_tokens: 2,
        ..ModelConfig::default()
    };
    let mut model = Model::new(cfg.clone(), 9).map_err(|e| e.to_string())?;
    let gate_names: Vec<String> = model
        .params
        .names()
        .filter(|n| n.ends_with(".attn.gate"))
        .cloned()
        .collect();
    for name in gate_names {
        let g = model.params.get_mut(&name).unwrap();
        g.mapv_inplace(|_| rng.gen_range(0.3..0.8));
    }
    let image = Array3::from_shape_fn((3, 16, 16), |_| rng.gen_range(0.0..1.0));
    let directions: Vec<ArrayD<f64>> = (0..4)
        .map(|l| {
            let side = cfg.grid_side(l + 1);
            ArrayD::from_shape_fn(IxDyn(&[cfg.widths[l], side, side]), |_| {
                rng.gen_range(-1.0..1.0)
            })
        })
        .collect();
    let prompt0 = model.params.get("prompt.RGB").unwrap().clone();
    let run = |prompt: &ArrayD<f64>, want_grad: bool| -> (f64, Option<ArrayD<f64>>) {
        let mut store = model.params.clone();
        store.insert("prompt.RGB", prompt.clone());
        let tape = Tape::new();
        let ctx = Ctx::new(&tape, &store);
        let img = tape.leaf(image.clone().into_dyn());
        let levels = backbone_graph(&ctx, &cfg, img, Some(&ModalityKind::rgb())).unwrap();
        let mut total: Option<Var> = None;
        for (l, d) in directions.iter().enumerate() {
            let dv = tape.leaf(d.clone());
            let term = tape.mean_all(tape.mul(levels[l], dv));
            total = Some(match total {
                None => term,
                Some(acc) => tape.add(acc, term),
            });
        }
        let root = total.unwrap();
        let loss = tape.scalar(root);
        if !want_grad {
            return (loss, None);
        }
        let grads = tape.backward(root);
        let var = ctx
            .bound_params()
            .into_iter()
            .find(|(n, _)| n == "prompt.RGB")
            .map(|(_, v)| v)
            .unwrap();
        (loss, grads.get(var).cloned())
    };
    let (_, analytic) = run(&prompt0, true);
    let analytic = analytic.ok_or("no prompt gradient")?;
    let f = |xs: &[ArrayD<f64>]| run(&xs[0], false).0;
    let numeric = finite_difference(&f, std::slice::from_ref(&prompt0), 1e-5);
    let err = max_rel_error(&analytic, &numeric[0]);
    if err > 1e-3 {
        return Err(format!("extract_features prompt gradient rel error {err} > 1e-3"));
    }
    worst = worst.max(err);

    Ok(format!("worst relative error {worst:.2e} (< 1e-3)"))
}

fn c05_mtc_closed_forms() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(105);
    let levels: Vec<Array3<f64>> = (0..4).map(|_| rand_map(2, 3, 3, &mut rng)).collect();
    let identical =
        mtc_loss_levels(&levels, &levels, &levels, &levels, DistanceFn::EuclideanMean)
            .map_err(|e| e.to_string())?;
    if (identical - 4.0).abs() > 1e-9 {
        return Err(format!("identical pyramids gave {identical}, expected 4.0 +- 1e-9"));
    }

    // scalar features with num = 0.1 and den = 0.5 per level
    let scalar = |v: f64| Array3::from_elem((1, 1, 1), v);
    let s = 0.05f64.sqrt();
    let own_m1: Vec<_> = (0..4).map(|_| scalar(0.0)).collect();
    let own_m2: Vec<_> = (0..4).map(|_| scalar(0.5)).collect();
    let swapped_m1: Vec<_> = (0..4).map(|_| scalar(0.5 + s)).collect();
    let swapped_m2: Vec<_> = (0..4).map(|_| scalar(s)).collect();
    let loss = mtc_loss_levels(
        &own_m1,
        &own_m2,
        &swapped_m1,
        &swapped_m2,
        DistanceFn::EuclideanMean,
    )
    .map_err(|e| e.to_string())?;
    let expected = 4.0 * (-0.4f64).exp();
    if (loss - expected).abs() > 1e-9 {
        return Err(format!("scalar case gave {loss}, expected {expected} +- 1e-9"));
    }
    Ok("4.000000 and 4*exp(-0.4) hit within 1e-9".into())
}

/// Independent per-threshold sweep used to verify the fast F-measure.
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
        let precision = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
        let recall = tp / npos;
        let denom = 0.3 * precision + recall;
        acc += if denom > 0.0 { 1.3 * precision * recall / denom } else { 0.0 };
    }
    acc / 255.0
}

fn c06_metric_oracles() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(106);
    let mut worst = 0.0f64;
    for trial in 0..50 {
        let pred = Array2::from_shape_fn((8, 8), |_| rng.gen_range(0.0..=1.0));
        let mut gt =
            Array2::from_shape_fn((8, 8), |_| if rng.gen_bool(0.35) { 1.0 } else { 0.0 });
        gt[[rng.gen_range(0..8), rng.gen_range(0..8)]] = 1.0;
        let fast_f = f_beta(&pred, &gt, FbetaPolicy::Sweep).map_err(|e| e.to_string())?;
        let slow_f = fbeta_oracle(&pred, &gt);
        let fast_m = mae(&pred, &gt).map_err(|e| e.to_string())?;
        let slow_m =
            pred.iter().zip(gt.iter()).map(|(p, g)| (p - g).abs()).sum::<f64>() / 64.0;
        let df = (fast_f - slow_f).abs();
        let dm = (fast_m - slow_m).abs();
        worst = worst.max(df).max(dm);
        if df > 1e-9 || dm > 1e-9 {
            return Err(format!("trial {trial}: fbeta diff {df}, mae diff {dm}"));
        }
    }

    // joint-mode MAE equals the sample-count-weighted mean of sole-mode MAEs
    let known = default_modalities();
    let combos = ["RGB", "D", "RGB-T", "RGB-D-T"];
    let samples: Vec<LabeledSample> = (0..20)
        .map(|i| {
            let combo = ComboLabel::parse(combos[i % combos.len()], &known).unwrap();
            let mut images = BTreeMap::new();
            for k in combo.kinds() {
                let c = if k.as_str() == "RGB" { 3 } else { 1 };
                images.insert(
                    k.clone(),
                    Array3::from_shape_fn((c, 8, 8), |_| rng.gen_range(0.0..1.0)),
                );
            }
            let mut gt =
                Array2::from_shape_fn((8, 8), |_| if rng.gen_bool(0.4) { 1.0 } else { 0.0 });
            gt[[0, 0]] = 1.0;
            LabeledSample {
                combo,
                sample: MultimodalSample { id: format!("s{i:02}"), images, ground_truth: gt },
            }
        })
        .collect();
    let predict = |s: &MultimodalSample| {
        let (h, w) = s.size();
        Ok(Array2::from_shape_fn((h, w), |(i, j)| {
            0.03 + 0.9 * ((i * w + j) % 7) as f64 / 6.0
        }))
    };
    let sole = evaluate(&predict, &samples, EvalMode::Sole, None, FbetaPolicy::Sweep)
        .map_err(|e| e.to_string())?;
    let joint = evaluate(&predict, &samples, EvalMode::Joint, None, FbetaPolicy::Sweep)
        .map_err(|e| e.to_string())?;
    let total_n: usize = sole.rows.iter().map(|r| r.n).sum();
    let weighted: f64 =
        sole.rows.iter().map(|r| r.mae * r.n as f64).sum::<f64>() / total_n as f64;
    let dj = (joint.rows[0].mae - weighted).abs();
    if dj > 1e-9 {
        return Err(format!(
            "joint MAE {} vs weighted sole mean {weighted}",
            joint.rows[0].mae
        ));
    }
    worst = worst.max(dj);
    Ok(format!("50 random cases + joint identity within {worst:.1e}"))
}

fn c07_end_to_end() -> Result<String, String> {
    let start = Instant::now();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let train_spec = DatasetSpec::uniform(700, 64, 7);
    let train_report =
        build_dataset(dir.path(), "train", &train_spec).map_err(|e| e.to_string())?;
    let test_spec = DatasetSpec::uniform(280, 64, 8);
    let test_report =
        build_dataset(dir.path(), "test", &test_spec).map_err(|e| e.to_string())?;
    if train_report.baseline_fbeta >= 0.9 || test_report.baseline_fbeta >= 0.9 {
        return Err(format!(
            "trivial depth-threshold baseline too strong: train {:.3}, test {:.3}",
            train_report.baseline_fbeta, test_report.baseline_fbeta
        ));
    }

    let train_ds = load_manifest(dir.path(), "train").map_err(|e| e.to_string())?;
    let train_samples = load_all(&train_ds).map_err(|e| e.to_string())?;
    let mut model = Model::new(ModelConfig::default(), 7).map_err(|e| e.to_string())?;
    let out =
        train(&mut model, &train_samples, &TrainConfig::default()).map_err(|e| e.to_string())?;

    // final phase-1 epoch must at least halve the first epoch's mean loss
    let steps_per_epoch = out.phase1_steps / TrainConfig::default().epochs;
    let first_epoch: f64 =
        out.history[..steps_per_epoch].iter().map(|(_, l)| l).sum::<f64>()
            / steps_per_epoch as f64;
    let last_epoch: f64 = out.history[out.phase1_steps - steps_per_epoch..out.phase1_steps]
        .iter()
        .map(|(_, l)| l)
        .sum::<f64>()
        / steps_per_epoch as f64;
    if last_epoch >= 0.5 * first_epoch {
        return Err(format!(
            "final-epoch mean loss {last_epoch:.3} not below half of first-epoch {first_epoch:.3}"
        ));
    }

    let test_ds = load_manifest(dir.path(), "test").map_err(|e| e.to_string())?;
    let test_samples = load_all(&test_ds).map_err(|e| e.to_string())?;
    let predict = |s: &MultimodalSample| model.predict_map(s);
    let report = evaluate(&predict, &test_samples, EvalMode::Joint, None, FbetaPolicy::Sweep)
        .map_err(|e| e.to_string())?;
    let row = &report.rows[0];
    let minutes = start.elapsed().as_secs_f64() / 60.0;
    if minutes >= 30.0 {
        return Err(format!("took {minutes:.1} min, budget is 30"));
    }
    if row.mae >= 0.15 {
        return Err(format!("joint MAE {:.4} >= 0.15", row.mae));
    }
    if row.fbeta <= 0.60 {
        return Err(format!("joint Fbeta {:.4} <= 0.60", row.fbeta));
    }
    Ok(format!(
        "MAE {:.4} (< 0.15), Fbeta {:.4} (> 0.60), epoch loss {:.2} -> {:.2}, {:.1} min",
        row.mae, row.fbeta, first_epoch, last_epoch, minutes
    ))
}

/// Ablation protocol: multimodal-heavy 32x32 scenes, lean model, 10+2
/// epochs, seeds {1,2,3}. Component order: baseline -> +prompts -> +MTC ->
/// +hybrid fusion; deltas are directional only.
fn c08_ablation_ordering() -> Result<String, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let known = default_modalities();
    let mix: Vec<(ComboLabel, f64)> = [
        ("RGB", 0.10),
        ("D", 0.05),
        ("T", 0.05),
        ("RGB-D", 0.20),
        ("RGB-T", 0.20),
        ("D-T", 0.15),
        ("RGB-D-T", 0.25),
    ]
    .iter()
    .map(|(c, w)| (ComboLabel::parse(c, &known).unwrap(), *w))
    .collect();
    for (split, n, seed) in [("train", 308usize, 11u64), ("test", 140, 12)] {
        let spec = DatasetSpec { n, mix: mix.clone(), canvas: 32, seed };
        build_dataset(dir.path(), split, &spec).map_err(|e| e.to_string())?;
    }
    let train_samples = load_all(&load_manifest(dir.path(), "train").map_err(|e| e.to_string())?)
        .map_err(|e| e.to_string())?;
    let test_samples = load_all(&load_manifest(dir.path(), "test").map_err(|e| e.to_string())?)
        .map_err(|e| e.to_string())?;

    let base_cfg = ModelConfig {
        input_size: 32,
        widths: [8, 12, 16, 20],
        heads: [1, 2, 4, 4],
        ffn_expansion: 2,
        decoder_width: 16,
        ..ModelConfig::default()
    };
    let variants: [(&str, bool, bool, bool); 4] = [
        // (label, prompts, mtc, hybrid fusion)
        ("baseline", false, false, false),
        ("+prompts", true, false, false),
        ("+mtc", true, true, false),
        ("+hybrid", true, true, true),
    ];
    let mut means = Vec::new();
    let mut details = String::new();
    for (label, prompts, mtc, hybrid) in variants {
        let mut acc = 0.0;
        for seed in [1u64, 2, 3] {
            let mut cfg = base_cfg.clone();
            cfg.prompts_enabled = prompts;
            if !hybrid {
                cfg.fusion = amsod_core::fusion::FusionMode::Additive;
            }
            let tc = TrainConfig {
                epochs: 10,
                prompt_epochs: 2,
                seed,
                mtc_enabled: mtc,
                ..TrainConfig::default()
            };
            let mut model = Model::new(cfg, seed).map_err(|e| e.to_string())?;
            train(&mut model, &train_samples, &tc).map_err(|e| e.to_string())?;
            let predict = |s: &MultimodalSample| model.predict_map(s);
            let report =
                evaluate(&predict, &test_samples, EvalMode::Joint, None, FbetaPolicy::Sweep)
                    .map_err(|e| e.to_string())?;
            acc += report.rows[0].fbeta;
        }
        let mean = acc / 3.0;
        details.push_str(&format!("{label} {mean:.4}  "));
        means.push((label, mean));
    }
    for window in means.windows(2) {
        let (prev_label, prev) = window[0];
        let (label, mean) = window[1];
        if mean < prev - 0.01 {
            return Err(format!(
                "{label} mean Fbeta {mean:.4} degrades {prev_label} {prev:.4} by more than 0.01 ({details})"
            ));
        }
    }
    let baseline = means[0].1;
    let full = means[3].1;
    if full < baseline + 0.01 {
        return Err(format!(
            "full model mean {full:.4} not at least 0.01 above baseline {baseline:.4} ({details})"
        ));
    }
    Ok(details.trim_end().to_string())
}

fn c09_parameter_accounting() -> Result<String, String> {
    let base = Model::new(ModelConfig::default(), 1).map_err(|e| e.to_string())?;
    let counts = count_parameters(&base);
    let cfg = &base.cfg;
    let expected_prompts = cfg.modalities.len() * cfg.n_prompt_tokens * cfg.prompt_width();
    if counts.prompts != expected_prompts {
        return Err(format!(
            "prompt params {} != |M|*N_mpt*C2 = {expected_prompts}",
            counts.prompts
        ));
    }
    let mut plus = ModelConfig::default();
    plus.modalities.push(ModalityKind::new("X"));
    let bigger = Model::new(plus, 1).map_err(|e| e.to_string())?;
    let delta = count_parameters(&bigger).total - counts.total;
    let per_modality = cfg.n_prompt_tokens * cfg.prompt_width();
    if delta != per_modality {
        return Err(format!(
            "adding a modality changed {delta} params, expected {per_modality}"
        ));
    }
    Ok(format!("one extra modality costs exactly {per_modality} parameters"))
}

fn c10_arity_scaling() -> Result<String, String> {
    let model = Model::new(ModelConfig::default(), 3).map_err(|e| e.to_string())?;
    let costs = arity_scaling_report(&model, 3, 9).map_err(|e| e.to_string())?;
    print!("{}", arity_table(&costs));
    for pair in costs.windows(2) {
        if pair[1].median_ms <= pair[0].median_ms {
            return Err(format!(
                "forward cost not increasing: {} modalities {:.2} ms vs {} modalities {:.2} ms",
                pair[0].n_modalities, pair[0].median_ms, pair[1].n_modalities, pair[1].median_ms
            ));
        }
    }
    let detail: Vec<String> =
        costs.iter().map(|c| format!("{}m {:.1}ms", c.n_modalities, c.median_ms)).collect();
    Ok(detail.join(" -> "))
}

fn c11_checkpoint_determinism() -> Result<String, String> {
    let known = default_modalities();
    let mut rng = ChaCha8Rng::seed_from_u64(111);
    let combos = ["RGB-D", "RGB-T", "D-T", "RGB-D-T"];
    let samples: Vec<LabeledSample> = (0..8)
        .map(|i| {
            let combo = ComboLabel::parse(combos[i % combos.len()], &known).unwrap();
            let mut images = BTreeMap::new();
            for k in combo.kinds() {
                let c = if k.as_str() == "RGB" { 3 } else { 1 };
                images.insert(
                    k.clone(),
                    Array3::from_shape_fn((c, 32, 32), |_| rng.gen_range(0.0..1.0)),
                );
            }
            let gt = Array2::from_shape_fn((32, 32), |(r, c)| {
                if (8..16).contains(&r) && (8..16).contains(&c) {
                    1.0
                } else {
                    0.0
                }
            });
            LabeledSample {
                combo,
                sample: MultimodalSample { id: format!("d{i}"), images, ground_truth: gt },
            }
        })
        .collect();
    let cfg = ModelConfig {
        input_size: 32,
        widths: [4, 6, 8, 10],
        heads: [1, 1, 1, 1],
        ffn_expansion: 2,
        n_prompt_tokens: 2,
        decoder_width: 4,
        ..ModelConfig::default()
    };
    let tc =
        TrainConfig { epochs: 2, prompt_epochs: 1, batch_size: 4, ..TrainConfig::default() };
    let mut run = || -> Result<(Vec<(usize, f64)>, Model), String> {
        let mut model = Model::new(cfg.clone(), 21).map_err(|e| e.to_string())?;
        let report = train(&mut model, &samples, &tc).map_err(|e| e.to_string())?;
        Ok((report.history, model))
    };
    let (h1, m1) = run()?;
    let (h2, m2) = run()?;
    if h1 != h2 {
        return Err("identical runs produced different loss histories".into());
    }
    for (name, value) in m1.params.iter() {
        if m2.params.get(name) != Some(value) {
            return Err(format!("parameter '{name}' differs between identical runs"));
        }
    }

    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    save_checkpoint(&m1, dir.path()).map_err(|e| e.to_string())?;
    let back = load_checkpoint(dir.path()).map_err(|e| e.to_string())?;
    for (name, value) in m1.params.iter() {
        if back.params.get(name) != Some(value) {
            return Err(format!("checkpoint round-trip changed parameter '{name}'"));
        }
    }
    Ok(format!("{} steps bit-identical across runs; round-trip exact", h1.len()))
}
