//! Synthetic registered multimodal scenes.
//!
//! Every sample is built from one shared geometry (a salient object plus
//! smaller off-center distractors) rendered under per-modality appearance
//! models and degradations, so the images are registered by construction and
//! the ground truth is the exact object mask. Degradations are drawn so that
//! no single modality is uniformly sufficient: RGB scenes can be dark, depth
//! contrast can invert, distractors can share the object's intensity in any
//! one modality. One randomly chosen present modality per sample keeps a
//! solid contrast floor so the task stays solvable.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::metrics::LabeledSample;
use crate::nn::name_seed;
use crate::par;
use crate::types::{ComboLabel, ModalityKind, MultimodalSample};

/// Salient-object outline family.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShapeType {
    Ellipse,
    Rectangle,
    Polygon,
}

/// RGB appearance: scene brightness (low values simulate night shots),
/// background texture amplitude, object/background color contrast, noise.
#[derive(Debug, Clone, Copy)]
pub struct RgbParams {
    pub brightness: f64,
    pub texture: f64,
    pub contrast: f64,
    pub noise: f64,
}

/// Depth appearance: object/background contrast, optional inverted depth
/// order (object behind the reference plane), blur radius, noise.
#[derive(Debug, Clone, Copy)]
pub struct DepthParams {
    pub contrast: f64,
    pub inverted: bool,
    pub blur: usize,
    pub noise: f64,
}

/// Thermal appearance: heat contrast, blur radius, noise.
#[derive(Debug, Clone, Copy)]
pub struct ThermalParams {
    pub contrast: f64,
    pub blur: usize,
    pub noise: f64,
}

/// Full recipe for one scene; rendering is a pure function of this value.
#[derive(Debug, Clone)]
pub struct SceneSpec {
    pub canvas: usize,
    pub shape: ShapeType,
    /// Object center in relative canvas coordinates.
    pub center: (f64, f64),
    /// Target object area as a fraction of the canvas.
    pub area_frac: f64,
    pub distractors: usize,
    pub rgb: RgbParams,
    pub depth: DepthParams,
    pub thermal: ThermalParams,
    pub seed: u64,
}

struct Geometry {
    object: Array2<f64>,
    distractors: Vec<Array2<f64>>,
}

fn rasterize_shape(
    canvas: usize,
    shape: ShapeType,
    center: (f64, f64),
    area_frac: f64,
    rng: &mut ChaCha8Rng,
) -> Array2<f64> {
    let s = canvas as f64;
    let area = area_frac * s * s;
    let (cy, cx) = (center.0 * s, center.1 * s);
    let theta = rng.gen_range(0.0..std::f64::consts::PI);
    let (sin_t, cos_t) = theta.sin_cos();
    let aspect = rng.gen_range(0.5..2.0);
    let mut mask = Array2::zeros((canvas, canvas));
    match shape {
        ShapeType::Ellipse => {
            let a = (area * aspect / std::f64::consts::PI).sqrt();
            let b = a / aspect;
            for i in 0..canvas {
                for j in 0..canvas {
                    let (dy, dx) = (i as f64 + 0.5 - cy, j as f64 + 0.5 - cx);
                    let u = dx * cos_t + dy * sin_t;
                    let v = -dx * sin_t + dy * cos_t;
                    if (u / a).powi(2) + (v / b).powi(2) <= 1.0 {
                        mask[[i, j]] = 1.0;
                    }
                }
            }
        }
        ShapeType::Rectangle => {
            let wdt = (area * aspect).sqrt();
            let hgt = wdt / aspect;
            for i in 0..canvas {
                for j in 0..canvas {
                    let (dy, dx) = (i as f64 + 0.5 - cy, j as f64 + 0.5 - cx);
                    let u = dx * cos_t + dy * sin_t;
                    let v = -dx * sin_t + dy * cos_t;
                    if u.abs() <= wdt / 2.0 && v.abs() <= hgt / 2.0 {
                        mask[[i, j]] = 1.0;
                    }
                }
            }
        }
        ShapeType::Polygon => {
            let k = rng.gen_range(5..=7usize);
            let radii: Vec<f64> = (0..k).map(|_| rng.gen_range(0.6..1.0)).collect();
            let verts: Vec<(f64, f64)> = (0..k)
                .map(|v| {
                    let ang = theta + v as f64 / k as f64 * std::f64::consts::TAU;
                    (radii[v] * ang.sin(), radii[v] * ang.cos())
                })
                .collect();
            // shoelace area of the unit polygon, then scale to the target
            let mut unit_area = 0.0;
            for v in 0..k {
                let (y0, x0) = verts[v];
                let (y1, x1) = verts[(v + 1) % k];
                unit_area += x0 * y1 - x1 * y0;
            }
            let scale = (area / (unit_area.abs() / 2.0)).sqrt();
            let pts: Vec<(f64, f64)> =
                verts.iter().map(|(y, x)| (cy + y * scale, cx + x * scale)).collect();
            for i in 0..canvas {
                for j in 0..canvas {
                    let (py, px) = (i as f64 + 0.5, j as f64 + 0.5);
                    let mut inside = false;
                    for v in 0..k {
                        let (y0, x0) = pts[v];
                        let (y1, x1) = pts[(v + 1) % k];
                        if (y0 > py) != (y1 > py)
                            && px < (x1 - x0) * (py - y0) / (y1 - y0) + x0
                        {
                            inside = !inside;
                        }
                    }
                    if inside {
                        mask[[i, j]] = 1.0;
                    }
                }
            }
        }
    }
    mask
}

fn geometry(spec: &SceneSpec) -> Result<Geometry> {
    let mut rng = ChaCha8Rng::seed_from_u64(name_seed(spec.seed, "geometry"));
    let object =
        rasterize_shape(spec.canvas, spec.shape, spec.center, spec.area_frac, &mut rng);
    let area = object.sum() / (spec.canvas * spec.canvas) as f64;
    if !(0.02..=0.40).contains(&area) {
        return Err(Error::InvalidSample(format!(
            "object area fraction {area:.3} outside [0.02, 0.40]"
        )));
    }
    let edge = (0..spec.canvas).any(|k| {
        object[[0, k]] > 0.0
            || object[[spec.canvas - 1, k]] > 0.0
            || object[[k, 0]] > 0.0
            || object[[k, spec.canvas - 1]] > 0.0
    });
    if edge {
        return Err(Error::InvalidSample("object touches the canvas border".into()));
    }
    let mut distractors = Vec::new();
    for _ in 0..spec.distractors {
        // a few placement attempts, skipped if it keeps landing on the object
        for _attempt in 0..4 {
            let center = (rng.gen_range(0.12..0.88), rng.gen_range(0.12..0.88));
            let frac = spec.area_frac * rng.gen_range(0.08..0.30);
            let shape = match rng.gen_range(0..3) {
                0 => ShapeType::Ellipse,
                1 => ShapeType::Rectangle,
                _ => ShapeType::Polygon,
            };
            let mask = rasterize_shape(spec.canvas, shape, center, frac, &mut rng);
            let overlap = (&mask * &object).sum();
            if overlap == 0.0 && mask.sum() > 0.0 {
                distractors.push(mask);
                break;
            }
        }
    }
    Ok(Geometry { object, distractors })
}

fn box_blur(map: &Array2<f64>, radius: usize) -> Array2<f64> {
    if radius == 0 {
        return map.clone();
    }
    let (h, w) = map.dim();
    let r = radius as isize;
    let mut tmp = Array2::zeros((h, w));
    for i in 0..h as isize {
        for j in 0..w as isize {
            let mut acc = 0.0;
            let mut n = 0.0;
            for dj in -r..=r {
                let jj = j + dj;
                if jj >= 0 && jj < w as isize {
                    acc += map[[i as usize, jj as usize]];
                    n += 1.0;
                }
            }
            tmp[[i as usize, j as usize]] = acc / n;
        }
    }
    let mut out = Array2::zeros((h, w));
    for i in 0..h as isize {
        for j in 0..w as usize {
            let mut acc = 0.0;
            let mut n = 0.0;
            for di in -r..=r {
                let ii = i + di;
                if ii >= 0 && ii < h as isize {
                    acc += tmp[[ii as usize, j]];
                    n += 1.0;
                }
            }
            out[[i as usize, j]] = acc / n;
        }
    }
    out
}

fn add_noise(map: &mut Array2<f64>, sigma: f64, rng: &mut ChaCha8Rng) {
    if sigma <= 0.0 {
        return;
    }
    let dist = Normal::new(0.0, sigma).unwrap();
    map.mapv_inplace(|v| (v + dist.sample(rng)).clamp(0.0, 1.0));
}

/// Composites object and distractor intensities over a background map.
fn composite(
    background: Array2<f64>,
    geom: &Geometry,
    object_value: f64,
    distractor_values: &[f64],
) -> Array2<f64> {
    let mut out = background;
    for (mask, &val) in geom.distractors.iter().zip(distractor_values) {
        ndarray::Zip::from(&mut out).and(mask).for_each(|o, &m| {
            if m > 0.0 {
                *o = val;
            }
        });
    }
    ndarray::Zip::from(&mut out).and(&geom.object).for_each(|o, &m| {
        if m > 0.0 {
            *o = object_value;
        }
    });
    out
}

fn render_rgb(spec: &SceneSpec, geom: &Geometry) -> Array3<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(name_seed(spec.seed, "mod.RGB"));
    let s = spec.canvas;
    let p = spec.rgb;
    let bg: [f64; 3] = [
        rng.gen_range(0.25..0.75),
        rng.gen_range(0.25..0.75),
        rng.gen_range(0.25..0.75),
    ];
    // object color: push each channel away from the background
    let obj: Vec<f64> = bg
        .iter()
        .map(|&b| {
            let dir = if b > 0.5 { -1.0 } else { 1.0 };
            (b + dir * p.contrast).clamp(0.02, 0.98)
        })
        .collect();
    let mixes: Vec<f64> = (0..geom.distractors.len())
        .map(|_| rng.gen_range(0.3..1.0))
        .collect();
    let freq = (rng.gen_range(1.0..3.0), rng.gen_range(1.0..3.0));
    let phase = (rng.gen_range(0.0..std::f64::consts::TAU), rng.gen_range(0.0..std::f64::consts::TAU));
    let mut out = Array3::zeros((3, s, s));
    for c in 0..3 {
        let background = Array2::from_shape_fn((s, s), |(i, j)| {
            let ty = (freq.0 * std::f64::consts::TAU * i as f64 / s as f64 + phase.0).sin();
            let tx = (freq.1 * std::f64::consts::TAU * j as f64 / s as f64 + phase.1).sin();
            (bg[c] + p.texture * 0.5 * (ty + tx)).clamp(0.0, 1.0)
        });
        let dvals: Vec<f64> = mixes.iter().map(|m| bg[c] + m * (obj[c] - bg[c])).collect();
        let mut plane = composite(background, geom, obj[c], &dvals);
        plane.mapv_inplace(|v| (v * p.brightness).clamp(0.0, 1.0));
        add_noise(&mut plane, p.noise * (0.4 + 0.6 * p.brightness), &mut rng);
        out.index_axis_mut(ndarray::Axis(0), c).assign(&plane);
    }
    out
}

fn render_depth(spec: &SceneSpec, geom: &Geometry) -> Array3<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(name_seed(spec.seed, "mod.D"));
    let s = spec.canvas;
    let p = spec.depth;
    let (top, slope) = (rng.gen_range(0.15..0.35), rng.gen_range(0.1..0.3));
    let background =
        Array2::from_shape_fn((s, s), |(i, _)| top + slope * i as f64 / s as f64);
    let sign = if p.inverted { -1.0 } else { 1.0 };
    let object_value = (0.45 + sign * p.contrast).clamp(0.02, 0.98);
    // a share of distractors sit at object-like depth, so a plain intensity
    // threshold cannot isolate the object
    let dvals: Vec<f64> = (0..geom.distractors.len())
        .map(|_| {
            if rng.gen_bool(0.5) {
                (object_value + rng.gen_range(-0.08..0.08)).clamp(0.02, 0.98)
            } else {
                (0.45 - sign * rng.gen_range(0.0..0.2)).clamp(0.02, 0.98)
            }
        })
        .collect();
    let mut plane = composite(background, geom, object_value, &dvals);
    plane = box_blur(&plane, p.blur);
    add_noise(&mut plane, p.noise, &mut rng);
    let mut out = Array3::zeros((1, s, s));
    out.index_axis_mut(ndarray::Axis(0), 0).assign(&plane);
    out
}

fn render_thermal(spec: &SceneSpec, geom: &Geometry) -> Array3<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(name_seed(spec.seed, "mod.T"));
    let s = spec.canvas;
    let p = spec.thermal;
    let base = rng.gen_range(0.15..0.35);
    let freq = rng.gen_range(0.8..2.0);
    let phase = (rng.gen_range(0.0..std::f64::consts::TAU), rng.gen_range(0.0..std::f64::consts::TAU));
    let background = Array2::from_shape_fn((s, s), |(i, j)| {
        let v = (freq * std::f64::consts::TAU * (i + j) as f64 / (2 * s) as f64 + phase.0).sin()
            + (freq * std::f64::consts::TAU * (i as f64 - j as f64) / (2 * s) as f64 + phase.1)
                .cos();
        (base + 0.06 * v).clamp(0.0, 1.0)
    });
    let object_value = (base + p.contrast).clamp(0.02, 0.98);
    let dvals: Vec<f64> = (0..geom.distractors.len())
        .map(|_| (base + rng.gen_range(0.15..1.1) * p.contrast).clamp(0.02, 0.98))
        .collect();
    let mut plane = composite(background, geom, object_value, &dvals);
    plane = box_blur(&plane, p.blur);
    add_noise(&mut plane, p.noise, &mut rng);
    let mut out = Array3::zeros((1, s, s));
    out.index_axis_mut(ndarray::Axis(0), 0).assign(&plane);
    out
}

/// Renders the requested modalities of one scene. Deterministic in the spec;
/// each modality draws from its own seed stream, so dropping a modality
/// leaves the others bit-identical.
pub fn render_sample(spec: &SceneSpec, modalities: &[ModalityKind]) -> Result<MultimodalSample> {
    if modalities.is_empty() {
        return Err(Error::EmptyInput("no modalities requested".into()));
    }
    let geom = geometry(spec)?;
    let mut images = BTreeMap::new();
    for m in modalities {
        let img = match m.as_str() {
            "RGB" => render_rgb(spec, &geom),
            "D" => render_depth(spec, &geom),
            "T" => render_thermal(spec, &geom),
            other => {
                return Err(Error::UnknownModality(other.into(), "RGB, D, T".into()));
            }
        };
        images.insert(m.clone(), img);
    }
    Ok(MultimodalSample {
        id: format!("{:016x}", spec.seed),
        images,
        ground_truth: geom.object,
    })
}

/// Draws a scene recipe for one sample, retrying (deterministically) until
/// the rasterized object satisfies the area and border invariants. One
/// randomly chosen modality among `present` gets a contrast floor so every
/// sample stays solvable.
pub fn sample_spec(seed: u64, canvas: usize, present: &ComboLabel) -> SceneSpec {
    for attempt in 0..64 {
        let spec = draw_spec(seed, attempt, canvas, present);
        if geometry(&spec).is_ok() {
            return spec;
        }
    }
    // unreachable in practice; keep the last draw as a hard fallback
    draw_spec(seed, 64, canvas, present)
}

fn draw_spec(seed: u64, attempt: u32, canvas: usize, present: &ComboLabel) -> SceneSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(name_seed(seed, &format!("spec/{attempt}")));
    let shape = match rng.gen_range(0..3) {
        0 => ShapeType::Ellipse,
        1 => ShapeType::Rectangle,
        _ => ShapeType::Polygon,
    };
    let mut spec = SceneSpec {
        canvas,
        shape,
        center: (rng.gen_range(0.32..0.68), rng.gen_range(0.32..0.68)),
        area_frac: rng.gen_range(0.06..0.22),
        distractors: rng.gen_range(2..=5),
        rgb: RgbParams {
            brightness: rng.gen_range(0.15..1.0),
            texture: rng.gen_range(0.05..0.22),
            contrast: rng.gen_range(0.25..0.65),
            noise: rng.gen_range(0.02..0.10),
        },
        depth: DepthParams {
            contrast: rng.gen_range(0.12..0.50),
            inverted: rng.gen_bool(0.15),
            blur: rng.gen_range(0..=2),
            noise: rng.gen_range(0.02..0.12),
        },
        thermal: ThermalParams {
            contrast: rng.gen_range(0.12..0.60),
            blur: rng.gen_range(0..=2),
            noise: rng.gen_range(0.02..0.12),
        },
        seed,
    };
    let kinds = present.kinds();
    let anchor = &kinds[rng.gen_range(0..kinds.len())];
    match anchor.as_str() {
        "RGB" => {
            spec.rgb.brightness = spec.rgb.brightness.max(0.6);
            spec.rgb.contrast = spec.rgb.contrast.max(0.5);
        }
        "D" => {
            spec.depth.contrast = spec.depth.contrast.max(0.45);
        }
        _ => {
            spec.thermal.contrast = spec.thermal.contrast.max(0.5);
        }
    }
    spec
}

/// Generation recipe for one split.
#[derive(Debug, Clone)]
pub struct DatasetSpec {
    pub n: usize,
    /// Distribution over modality combinations; weights must sum to 1.
    pub mix: Vec<(ComboLabel, f64)>,
    pub canvas: usize,
    pub seed: u64,
}

impl DatasetSpec {
    pub fn uniform(n: usize, canvas: usize, seed: u64) -> Self {
        let combos = ComboLabel::standard_seven();
        let w = 1.0 / combos.len() as f64;
        DatasetSpec { n, mix: combos.into_iter().map(|c| (c, w)).collect(), canvas, seed }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::InvalidConfig("dataset size must be positive".into()));
        }
        let total: f64 = self.mix.iter().map(|(_, w)| w).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidConfig(format!(
                "mix weights sum to {total}, expected 1"
            )));
        }
        if self.mix.iter().any(|(_, w)| *w < 0.0) {
            return Err(Error::InvalidConfig("mix weights must be non-negative".into()));
        }
        Ok(())
    }

    /// Deterministic per-combo counts: floor allocation plus largest
    /// remainders.
    pub fn counts(&self) -> Vec<(ComboLabel, usize)> {
        let mut out: Vec<(ComboLabel, usize, f64)> = self
            .mix
            .iter()
            .map(|(c, w)| {
                let exact = w * self.n as f64;
                (c.clone(), exact.floor() as usize, exact - exact.floor())
            })
            .collect();
        let assigned: usize = out.iter().map(|x| x.1).sum();
        let mut order: Vec<usize> = (0..out.len()).collect();
        order.sort_by(|&a, &b| out[b].2.partial_cmp(&out[a].2).unwrap().then(a.cmp(&b)));
        for k in 0..self.n.saturating_sub(assigned) {
            out[order[k % order.len()]].1 += 1;
        }
        out.into_iter().map(|(c, n, _)| (c, n)).collect()
    }
}

/// Parses a mix string like `rgb=0.4,d=0.1,rgb-d-t=0.5`.
pub fn parse_mix(text: &str, known: &[ModalityKind]) -> Result<Vec<(ComboLabel, f64)>> {
    let mut mix = Vec::new();
    for part in text.split(',') {
        let (combo, w) = part
            .split_once('=')
            .ok_or_else(|| Error::Parse(format!("expected combo=weight, got '{part}'")))?;
        let combo = ComboLabel::parse(combo.trim(), known)?;
        let w: f64 = w
            .trim()
            .parse()
            .map_err(|_| Error::Parse(format!("bad mix weight '{w}'")))?;
        mix.push((combo, w));
    }
    Ok(mix)
}

/// One manifest line.
#[derive(Debug, Clone)]
pub struct ManifestEntry {
    pub id: String,
    pub combo: ComboLabel,
    pub size: (usize, usize),
    /// Modality tag -> path relative to the split directory.
    pub images: Vec<(ModalityKind, PathBuf)>,
    pub gt: PathBuf,
}

/// A generated split on disk.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub split_dir: PathBuf,
    pub entries: Vec<ManifestEntry>,
}

/// Generation summary returned by [`build_dataset`].
#[derive(Debug, Clone)]
pub struct BuildReport {
    pub n: usize,
    pub per_combo: Vec<(ComboLabel, usize)>,
    /// F-measure of the trivial depth-threshold baseline over the split.
    pub baseline_fbeta: f64,
}

/// Renders one split to `<root>/<split>/<combo>/<id>/<modality>.png` plus
/// `gt.png`, writes the manifest, audits every referenced file, and scores
/// the trivial single-modality baseline.
pub fn build_dataset(root: &Path, split: &str, spec: &DatasetSpec) -> Result<BuildReport> {
    spec.validate()?;
    let split_dir = root.join(split);
    std::fs::create_dir_all(&split_dir)?;

    let counts = spec.counts();
    let mut jobs: Vec<(usize, ComboLabel)> = Vec::with_capacity(spec.n);
    for (combo, n) in &counts {
        for _ in 0..*n {
            jobs.push((jobs.len(), combo.clone()));
        }
    }

    let rendered: Vec<Result<ManifestEntry>> = par::map(&jobs, |(idx, combo)| {
        let sample_seed = name_seed(spec.seed, &format!("{split}/{idx}"));
        let scene = sample_spec(sample_seed, spec.canvas, combo);
        let sample = render_sample(&scene, combo.kinds())?;
        let id = format!("{split}-{idx:05}");
        let rel_dir = PathBuf::from(combo.to_string()).join(&id);
        let abs_dir = split_dir.join(&rel_dir);
        std::fs::create_dir_all(&abs_dir)?;
        let mut images = Vec::new();
        for (kind, img) in &sample.images {
            let rel = rel_dir.join(format!("{}.png", kind.as_str().to_ascii_lowercase()));
            if img.dim().0 == 3 {
                crate::imgio::save_rgb(img, &split_dir.join(&rel))?;
            } else {
                let plane = img.index_axis(ndarray::Axis(0), 0).to_owned();
                crate::imgio::save_gray(&plane, &split_dir.join(&rel))?;
            }
            images.push((kind.clone(), rel));
        }
        let gt_rel = rel_dir.join("gt.png");
        crate::imgio::save_gray(&sample.ground_truth, &split_dir.join(&gt_rel))?;
        Ok(ManifestEntry {
            id,
            combo: combo.clone(),
            size: (spec.canvas, spec.canvas),
            images,
            gt: gt_rel,
        })
    });
    let entries: Vec<ManifestEntry> = rendered.into_iter().collect::<Result<_>>()?;

    // single-writer manifest after all renders land
    let mut manifest = String::new();
    for e in &entries {
        let mut line = format!("{}\t{}\t{}x{}", e.id, e.combo, e.size.0, e.size.1);
        for (kind, rel) in &e.images {
            let _ = write!(line, "\t{}:{}", kind.as_str(), rel.display());
        }
        let _ = write!(line, "\tGT:{}", e.gt.display());
        manifest.push_str(&line);
        manifest.push('\n');
    }
    std::fs::write(split_dir.join("manifest.tsv"), manifest)?;

    let dataset = Dataset { split_dir: split_dir.clone(), entries };
    audit(&dataset)?;
    let baseline = baseline_fbeta(&dataset)?;
    Ok(BuildReport { n: spec.n, per_combo: counts, baseline_fbeta: baseline })
}

/// Verifies that every referenced file exists and decodes to the manifest's
/// declared size.
fn audit(dataset: &Dataset) -> Result<()> {
    let problems: Vec<Option<String>> = par::map(&dataset.entries, |e| {
        let check = |rel: &PathBuf| -> Option<String> {
            let path = dataset.split_dir.join(rel);
            match crate::imgio::load_image(&path) {
                Err(err) => Some(format!("{}: {err}", rel.display())),
                Ok(img) => {
                    let (_, h, w) = img.dim();
                    if (h, w) != e.size {
                        Some(format!(
                            "{}: decoded {h}x{w}, manifest says {}x{}",
                            rel.display(),
                            e.size.0,
                            e.size.1
                        ))
                    } else {
                        None
                    }
                }
            }
        };
        for (_, rel) in &e.images {
            if let Some(p) = check(rel) {
                return Some(p);
            }
        }
        check(&e.gt)
    });
    if let Some(problem) = problems.into_iter().flatten().next() {
        return Err(Error::InvalidSample(format!("dataset audit failed: {problem}")));
    }
    Ok(())
}

/// F-measure of predicting saliency directly from the depth intensity
/// (falling back to thermal, then RGB luma). Values well below 1 confirm the
/// task is not solvable by a single-channel threshold.
pub fn baseline_fbeta(dataset: &Dataset) -> Result<f64> {
    let samples = load_all(dataset)?;
    let predict = |s: &MultimodalSample| -> Result<Array2<f64>> {
        let d = ModalityKind::depth();
        let t = ModalityKind::thermal();
        let img = s
            .images
            .get(&d)
            .or_else(|| s.images.get(&t))
            .or_else(|| s.images.values().next())
            .expect("validated sample has at least one image");
        let (c, h, w) = img.dim();
        Ok(Array2::from_shape_fn((h, w), |(i, j)| {
            (0..c).map(|ch| img[[ch, i, j]]).sum::<f64>() / c as f64
        }))
    };
    let report = crate::metrics::evaluate(
        &predict,
        &samples,
        crate::metrics::EvalMode::Joint,
        None,
        crate::metrics::FbetaPolicy::Sweep,
    )?;
    Ok(report.rows[0].fbeta)
}

/// Reads a split's manifest back from disk.
pub fn load_manifest(root: &Path, split: &str) -> Result<Dataset> {
    let split_dir = root.join(split);
    let text = std::fs::read_to_string(split_dir.join("manifest.tsv"))?;
    let known = crate::types::default_modalities();
    let mut entries = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() < 4 {
            return Err(Error::Parse(format!("manifest line {}: too few fields", ln + 1)));
        }
        let (sh, sw) = fields[2]
            .split_once('x')
            .ok_or_else(|| Error::Parse(format!("manifest line {}: bad size", ln + 1)))?;
        let size = (
            sh.parse().map_err(|_| Error::Parse(format!("bad height '{sh}'")))?,
            sw.parse().map_err(|_| Error::Parse(format!("bad width '{sw}'")))?,
        );
        let combo = ComboLabel::parse(fields[1], &known)?;
        let mut images = Vec::new();
        let mut gt = None;
        for field in &fields[3..] {
            let (tag, rel) = field
                .split_once(':')
                .ok_or_else(|| Error::Parse(format!("bad manifest field '{field}'")))?;
            if tag == "GT" {
                gt = Some(PathBuf::from(rel));
            } else {
                images.push((ModalityKind::new(tag), PathBuf::from(rel)));
            }
        }
        entries.push(ManifestEntry {
            id: fields[0].to_string(),
            combo,
            size,
            images,
            gt: gt.ok_or_else(|| Error::Parse(format!("manifest line {}: no GT", ln + 1)))?,
        });
    }
    Ok(Dataset { split_dir, entries })
}

/// Loads one manifest entry into memory.
pub fn load_sample(dataset: &Dataset, entry: &ManifestEntry) -> Result<MultimodalSample> {
    let mut images = BTreeMap::new();
    for (kind, rel) in &entry.images {
        images.insert(kind.clone(), crate::imgio::load_image(&dataset.split_dir.join(rel))?);
    }
    let gt = crate::imgio::load_mask(&dataset.split_dir.join(&entry.gt))?;
    Ok(MultimodalSample { id: entry.id.clone(), images, ground_truth: gt })
}

/// Loads a whole split (parallel over samples).
pub fn load_all(dataset: &Dataset) -> Result<Vec<LabeledSample>> {
    let loaded: Vec<Result<LabeledSample>> = par::map(&dataset.entries, |e| {
        Ok(LabeledSample { combo: e.combo.clone(), sample: load_sample(dataset, e)? })
    });
    loaded.into_iter().collect()
}

/// Loader stub for externally provided registered datasets.
///
/// Expected contract, mirroring the generated layout: a split directory with
/// `manifest.tsv` whose lines read
/// `id<TAB>combo<TAB>HxW<TAB>TAG:relpath...<TAB>GT:relpath`, PNG images
/// registered per sample, 8-bit grayscale for single-channel modalities and
/// the mask, 24-bit for RGB. Drop such a tree in place and `load_manifest`
/// consumes it; nothing else is supported.
pub fn load_external_dataset(root: &Path, split: &str) -> Result<Dataset> {
    if !root.join(split).join("manifest.tsv").exists() {
        return Err(Error::Unsupported(format!(
            "no manifest at {}/{split}/manifest.tsv; provide the documented layout",
            root.display()
        )));
    }
    load_manifest(root, split)
}
