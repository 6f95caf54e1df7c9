//! Procedural multi-task scenes and domain shifts.
//!
//! A scene is a back-to-front stack of slanted planar primitives over a flat
//! background. Every label map is a function of the same stack: the class
//! map takes the frontmost primitive's type, depth the frontmost plane's
//! value, normals its orientation and edges the class boundaries.

use std::io::{BufRead, BufReader, Read, Write};
use std::ops::Range;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::model::{TaskKind, TaskSpec};
use crate::tensor::Tensor;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenConfig {
    pub size: usize,
    /// Foreground classes; class 0 is background.
    pub classes: usize,
    pub min_primitives: usize,
    pub max_primitives: usize,
    /// Per-channel color jitter around each class's base color.
    pub color_jitter: f64,
    pub max_slant_deg: f64,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            size: 32,
            classes: 5,
            min_primitives: 2,
            max_primitives: 8,
            color_jitter: 0.12,
            max_slant_deg: 60.0,
        }
    }
}

impl GenConfig {
    /// Classes including background.
    pub fn label_classes(&self) -> usize {
        self.classes + 1
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |s: &str| Err(Error::Config(format!("gen: {s}")));
        if self.size < 4 {
            return bad("size must be at least 4");
        }
        if !(1..=BASE_COLORS.len()).contains(&self.classes) {
            return bad("classes must lie in 1..=8");
        }
        if self.min_primitives == 0 || self.min_primitives > self.max_primitives {
            return bad("need 1 ≤ min_primitives ≤ max_primitives");
        }
        if !(0.0..=89.0).contains(&self.max_slant_deg) {
            return bad("max_slant_deg must lie in [0, 89]");
        }
        Ok(())
    }
}

const BASE_COLORS: [[f64; 3]; 8] = [
    [0.85, 0.25, 0.20],
    [0.20, 0.70, 0.30],
    [0.25, 0.35, 0.85],
    [0.90, 0.80, 0.20],
    [0.70, 0.30, 0.80],
    [0.20, 0.80, 0.80],
    [0.95, 0.55, 0.15],
    [0.55, 0.55, 0.55],
];

const LIGHT: [f64; 3] = [-0.4, -0.5, 0.768_114_574_786_860_8];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Shape {
    Disk,
    Square,
    Diamond,
    Triangle,
    Ring,
    Cross,
    HBar,
    VBar,
}

const SHAPES: [Shape; 8] = [
    Shape::Disk,
    Shape::Square,
    Shape::Diamond,
    Shape::Triangle,
    Shape::Ring,
    Shape::Cross,
    Shape::HBar,
    Shape::VBar,
];

/// One slanted planar primitive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Primitive {
    pub class: usize,
    pub shape: Shape,
    pub cx: f64,
    pub cy: f64,
    pub radius: f64,
    pub color: [f64; 3],
    pub normal: [f64; 3],
    /// Depth at the center and maximal excursion within the primitive.
    pub depth_center: f64,
    pub depth_span: f64,
}

impl Primitive {
    /// Whether pixel center `(x, y)` lies inside.
    pub fn covers(&self, x: usize, y: usize) -> bool {
        let u = (x as f64 + 0.5 - self.cx) / self.radius;
        let v = (y as f64 + 0.5 - self.cy) / self.radius;
        match self.shape {
            Shape::Disk => u * u + v * v <= 1.0,
            Shape::Square => u.abs() <= 0.8 && v.abs() <= 0.8,
            Shape::Diamond => u.abs() + v.abs() <= 1.0,
            Shape::Triangle => v <= 0.8 && v >= -1.0 + 2.0 * u.abs(),
            Shape::Ring => {
                let r2 = u * u + v * v;
                (0.3..=1.0).contains(&r2)
            }
            Shape::Cross => {
                (u.abs() <= 0.3 && v.abs() <= 1.0) || (v.abs() <= 0.3 && u.abs() <= 1.0)
            }
            Shape::HBar => u.abs() <= 1.0 && v.abs() <= 0.4,
            Shape::VBar => u.abs() <= 0.4 && v.abs() <= 1.0,
        }
    }

    /// Depth of the primitive's plane at pixel `(x, y)`.
    pub fn depth_at(&self, x: usize, y: usize) -> f64 {
        let u = (x as f64 + 0.5 - self.cx) / self.radius;
        let v = (y as f64 + 0.5 - self.cy) / self.radius;
        let [nx, ny, nz] = self.normal;
        // Plane gradient −(nx, ny)/nz, scaled so the steepest slant maps to
        // one band half-width at the unit radius.
        let g = (-(nx * u + ny * v) / nz / 60f64.to_radians().tan() / std::f64::consts::SQRT_2)
            .clamp(-1.0, 1.0);
        self.depth_center + self.depth_span * g
    }
}

/// A rendered scene with all label maps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub seed: u64,
    pub size: usize,
    /// `size × size × 3`, values in [0, 1].
    pub image: Vec<f32>,
    pub class: Vec<u8>,
    pub depth: Vec<f32>,
    pub normal: Vec<f32>,
    pub edge: Vec<f32>,
    /// Back-to-front.
    pub primitives: Vec<Primitive>,
}

/// 1 where the class map differs from any 4-neighbor.
pub fn class_edges(class: &[u8], size: usize) -> Vec<f32> {
    let mut e = vec![0.0; size * size];
    for y in 0..size {
        for x in 0..size {
            let c = class[y * size + x];
            let diff = (x > 0 && class[y * size + x - 1] != c)
                || (x + 1 < size && class[y * size + x + 1] != c)
                || (y > 0 && class[(y - 1) * size + x] != c)
                || (y + 1 < size && class[(y + 1) * size + x] != c);
            if diff {
                e[y * size + x] = 1.0;
            }
        }
    }
    e
}

pub fn gen_scene(seed: u64, cfg: &GenConfig) -> Scene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5ce_e5ce);
    let size = cfg.size;
    let n = rng.gen_range(cfg.min_primitives..=cfg.max_primitives);
    let sf = size as f64;
    let band = 1.0 / (n as f64 + 1.0);
    let primitives: Vec<Primitive> = (0..n)
        .map(|k| {
            let class = rng.gen_range(1..=cfg.classes);
            let base = BASE_COLORS[class - 1];
            let color = base
                .map(|c| (c + rng.gen_range(-cfg.color_jitter..=cfg.color_jitter)).clamp(0.0, 1.0));
            let theta = rng.gen_range(0.0..=cfg.max_slant_deg).to_radians();
            let phi = rng.gen_range(0.0..std::f64::consts::TAU);
            let normal = [
                theta.sin() * phi.cos(),
                theta.sin() * phi.sin(),
                theta.cos(),
            ];
            Primitive {
                class,
                shape: SHAPES[class - 1],
                cx: rng.gen_range(0.1 * sf..0.9 * sf),
                cy: rng.gen_range(0.1 * sf..0.9 * sf),
                radius: rng.gen_range(0.12 * sf..0.3 * sf),
                color,
                normal,
                // layer 0 is the farthest
                depth_center: 1.0 - (k as f64 + 1.0) * band,
                depth_span: 0.4 * band,
            }
        })
        .collect();
    let bg_tint: [f64; 3] = std::array::from_fn(|_| rng.gen_range(0.05..0.25));
    let mut scene = Scene {
        seed,
        size,
        image: vec![0.0; size * size * 3],
        class: vec![0; size * size],
        depth: vec![1.0; size * size],
        normal: vec![0.0; size * size * 3],
        edge: Vec::new(),
        primitives,
    };
    for y in 0..size {
        for x in 0..size {
            let i = y * size + x;
            let front = scene.primitives.iter().rev().find(|p| p.covers(x, y));
            let (color, normal, depth, class) = match front {
                Some(p) => (p.color, p.normal, p.depth_at(x, y), p.class as u8),
                None => (bg_tint, [0.0, 0.0, 1.0], 1.0, 0),
            };
            let shade = 0.45
                + 0.55
                    * (normal[0] * LIGHT[0] + normal[1] * LIGHT[1] + normal[2] * LIGHT[2]).max(0.0);
            for c in 0..3 {
                scene.image[i * 3 + c] = (color[c] * shade).clamp(0.0, 1.0) as f32;
                scene.normal[i * 3 + c] = normal[c] as f32;
            }
            scene.depth[i] = depth as f32;
            scene.class[i] = class;
        }
    }
    scene.edge = class_edges(&scene.class, size);
    scene
}

/// Image-space domain shift.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ShiftSpec {
    /// Noise standard deviation as a multiple of the dataset image std.
    pub alpha: f64,
    pub blur_radius: usize,
    /// Hue rotation in degrees.
    pub hue_deg: f64,
    /// Contrast factor offset: `x ← (x − ½)(1 + contrast) + ½`.
    pub contrast: f64,
    pub seed: u64,
}

impl Default for ShiftSpec {
    fn default() -> Self {
        Self::identity()
    }
}

impl ShiftSpec {
    pub fn identity() -> Self {
        Self {
            alpha: 0.0,
            blur_radius: 0,
            hue_deg: 0.0,
            contrast: 0.0,
            seed: 0,
        }
    }

    /// Default target domain: noise at α = 0.3 plus a 15° hue rotation.
    pub fn desk_target() -> Self {
        Self {
            alpha: 0.3,
            hue_deg: 15.0,
            seed: 1,
            ..Self::identity()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::Config(format!(
                "shift: alpha {} must be ≥ 0",
                self.alpha
            )));
        }
        if !(self.contrast > -1.0 && self.contrast.is_finite() && self.hue_deg.is_finite()) {
            return Err(Error::Config(
                "shift: contrast must exceed −1 and offsets be finite".into(),
            ));
        }
        Ok(())
    }
}

/// Seeded standard-normal noise scaled by `std`.
pub fn gaussian_noise(len: usize, std: f64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            z * std
        })
        .collect()
}

fn box_blur(img: &[f64], size: usize, r: usize) -> Vec<f64> {
    let mut out = vec![0.0; img.len()];
    let ri = r as isize;
    for y in 0..size {
        for x in 0..size {
            for c in 0..3 {
                let (mut s, mut n) = (0.0, 0.0);
                for dy in -ri..=ri {
                    for dx in -ri..=ri {
                        let (yy, xx) = (y as isize + dy, x as isize + dx);
                        if (0..size as isize).contains(&yy) && (0..size as isize).contains(&xx) {
                            s += img[(yy as usize * size + xx as usize) * 3 + c];
                            n += 1.0;
                        }
                    }
                }
                out[(y * size + x) * 3 + c] = s / n;
            }
        }
    }
    out
}

/// Rotation about the gray axis by `deg` degrees.
fn hue_matrix(deg: f64) -> [[f64; 3]; 3] {
    let (s, c) = deg.to_radians().sin_cos();
    let k = 1.0 / 3.0;
    let q = (1.0f64 / 3.0).sqrt();
    let a = c + (1.0 - c) * k;
    let b = k * (1.0 - c) - q * s;
    let d = k * (1.0 - c) + q * s;
    [[a, b, d], [d, a, b], [b, d, a]]
}

/// Noise, then blur, then hue and contrast, then clamp. Labels are copied
/// unchanged. Noise is seeded from `spec.seed` and the scene seed.
pub fn apply_shift(scene: &Scene, spec: &ShiftSpec, sigma_img: f64) -> Scene {
    let mut out = scene.clone();
    let identity =
        spec.alpha == 0.0 && spec.blur_radius == 0 && spec.hue_deg == 0.0 && spec.contrast == 0.0;
    if identity {
        return out;
    }
    let mut img: Vec<f64> = scene.image.iter().map(|&v| v as f64).collect();
    if spec.alpha > 0.0 {
        let noise = gaussian_noise(
            img.len(),
            spec.alpha * sigma_img,
            shift_seed(spec.seed, scene.seed),
        );
        img.iter_mut().zip(noise).for_each(|(v, n)| *v += n);
    }
    if spec.blur_radius > 0 {
        img = box_blur(&img, scene.size, spec.blur_radius);
    }
    if spec.hue_deg != 0.0 {
        let m = hue_matrix(spec.hue_deg);
        for px in img.chunks_mut(3) {
            let p = [px[0], px[1], px[2]];
            for (r, row) in m.iter().enumerate() {
                px[r] = row[0] * p[0] + row[1] * p[1] + row[2] * p[2];
            }
        }
    }
    if spec.contrast != 0.0 {
        img.iter_mut()
            .for_each(|v| *v = (*v - 0.5) * (1.0 + spec.contrast) + 0.5);
    }
    out.image = img.iter().map(|v| v.clamp(0.0, 1.0) as f32).collect();
    out
}

/// Per-scene noise seed.
pub fn shift_seed(spec_seed: u64, scene_seed: u64) -> u64 {
    mix(spec_seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ scene_seed)
}

/// SplitMix64 finalizer.
pub fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Standard deviation of all image values.
pub fn image_std(scenes: &[Scene]) -> f64 {
    let n: usize = scenes.iter().map(|s| s.image.len()).sum();
    let mean = scenes
        .iter()
        .flat_map(|s| &s.image)
        .map(|&v| v as f64)
        .sum::<f64>()
        / n as f64;
    let var = scenes
        .iter()
        .flat_map(|s| &s.image)
        .map(|&v| (v as f64 - mean).powi(2))
        .sum::<f64>()
        / n as f64;
    var.sqrt()
}

// ---------------------------------------------------------------------------
// Datasets

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitSizes {
    pub source_train: usize,
    pub source_val: usize,
    pub target: usize,
}

impl Default for SplitSizes {
    fn default() -> Self {
        Self {
            source_train: 512,
            source_val: 64,
            target: 256,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedRanges {
    pub source_train: Range<u64>,
    pub source_val: Range<u64>,
    pub target: Range<u64>,
}

impl SeedRanges {
    /// Consecutive ranges starting at `base`.
    pub fn contiguous(base: u64, sizes: SplitSizes) -> Self {
        let a = base + sizes.source_train as u64;
        let b = a + sizes.source_val as u64;
        Self {
            source_train: base..a,
            source_val: a..b,
            target: b..b + sizes.target as u64,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let r = [&self.source_train, &self.source_val, &self.target];
        for i in 0..3 {
            for j in i + 1..3 {
                if r[i].start < r[j].end && r[j].start < r[i].end {
                    return Err(Error::Config(format!(
                        "seed ranges {:?} and {:?} overlap",
                        r[i], r[j]
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Provenance of a generated dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format: String,
    pub gen: GenConfig,
    pub shift: ShiftSpec,
    pub sigma_img: f64,
    pub seeds: SeedRanges,
    pub task_order: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct Datasets {
    pub source_train: Vec<Scene>,
    pub source_val: Vec<Scene>,
    pub target: Vec<Scene>,
    pub manifest: DatasetManifest,
}

pub fn make_dataset(
    gen: &GenConfig,
    shift: &ShiftSpec,
    sizes: SplitSizes,
    base_seed: u64,
) -> Result<Datasets> {
    make_dataset_with_seeds(gen, shift, SeedRanges::contiguous(base_seed, sizes))
}

/// Source splits stay unshifted; the target stream is shifted with noise
/// relative to the source-train image std.
pub fn make_dataset_with_seeds(
    gen: &GenConfig,
    shift: &ShiftSpec,
    seeds: SeedRanges,
) -> Result<Datasets> {
    gen.validate()?;
    shift.validate()?;
    seeds.validate()?;
    let make = |r: &Range<u64>| -> Vec<Scene> { r.clone().map(|s| gen_scene(s, gen)).collect() };
    let source_train = make(&seeds.source_train);
    if source_train.is_empty() {
        return Err(Error::Config("source train split is empty".into()));
    }
    let sigma_img = image_std(&source_train);
    let source_val = make(&seeds.source_val);
    let target = make(&seeds.target)
        .iter()
        .map(|s| apply_shift(s, shift, sigma_img))
        .collect();
    Ok(Datasets {
        source_train,
        source_val,
        target,
        manifest: DatasetManifest {
            format: "s4t-dataset-v1".into(),
            gen: gen.clone(),
            shift: shift.clone(),
            sigma_img,
            seeds,
            task_order: vec![
                "semseg".into(),
                "depth".into(),
                "normal".into(),
                "edge".into(),
            ],
        },
    })
}

/// A labeled minibatch bound to a task list.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    /// `[B, H, W, 3]`
    pub image: Tensor<f32>,
    /// One per task at label resolution; categorical tasks one-hot.
    pub targets: Vec<Tensor<f32>>,
    /// Class index maps per categorical task (empty for other tasks).
    pub labels: Vec<Vec<u8>>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.image.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Which scene field feeds a task, by name.
fn check_task(spec: &TaskSpec, classes: usize) -> Result<()> {
    let ok = match (spec.name.as_str(), spec.kind) {
        ("semseg", TaskKind::CategoricalMap { classes: c }) => c == classes,
        ("depth" | "edge", TaskKind::ScalarMap) => true,
        ("normal", TaskKind::UnitVectorMap) => true,
        _ => false,
    };
    if ok {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "task `{}` ({:?}) has no matching scene label; expected semseg({classes}), depth, normal or edge",
            spec.name, spec.kind
        )))
    }
}

pub fn make_batch(scenes: &[&Scene], tasks: &[TaskSpec]) -> Result<Batch> {
    let first = scenes
        .first()
        .ok_or_else(|| Error::Invalid("empty batch".into()))?;
    let s = first.size;
    let b = scenes.len();
    let classes = tasks
        .iter()
        .find_map(|t| match t.kind {
            TaskKind::CategoricalMap { classes } => Some(classes),
            _ => None,
        })
        .unwrap_or(0);
    for t in tasks {
        check_task(t, classes)?;
    }
    let image = Tensor::new(
        vec![b, s, s, 3],
        scenes
            .iter()
            .flat_map(|sc| sc.image.iter().copied())
            .collect(),
    )
    .map_err(|e| Error::Invalid(e.to_string()))?;
    let mut targets = Vec::new();
    let mut labels = Vec::new();
    for t in tasks {
        let (c, data, lab): (usize, Vec<f32>, Vec<u8>) = match t.name.as_str() {
            "semseg" => {
                let lab: Vec<u8> = scenes
                    .iter()
                    .flat_map(|sc| sc.class.iter().copied())
                    .collect();
                let mut d = vec![0.0; lab.len() * classes];
                lab.iter()
                    .enumerate()
                    .for_each(|(i, &k)| d[i * classes + k as usize] = 1.0);
                (classes, d, lab)
            }
            "depth" => (
                1,
                scenes
                    .iter()
                    .flat_map(|sc| sc.depth.iter().copied())
                    .collect(),
                vec![],
            ),
            "edge" => (
                1,
                scenes
                    .iter()
                    .flat_map(|sc| sc.edge.iter().copied())
                    .collect(),
                vec![],
            ),
            _ => (
                3,
                scenes
                    .iter()
                    .flat_map(|sc| sc.normal.iter().copied())
                    .collect(),
                vec![],
            ),
        };
        targets
            .push(Tensor::new(vec![b, s, s, c], data).map_err(|e| Error::Invalid(e.to_string()))?);
        labels.push(lab);
    }
    Ok(Batch {
        image,
        targets,
        labels,
    })
}

/// Consecutive batches in stream order; a short final batch is dropped.
pub fn stream_batches(
    scenes: &[Scene],
    batch_size: usize,
    tasks: &[TaskSpec],
) -> Result<Vec<Batch>> {
    if batch_size == 0 || scenes.len() < batch_size {
        return Err(Error::Invalid(format!(
            "{} scenes cannot fill a batch of {batch_size}",
            scenes.len()
        )));
    }
    scenes
        .chunks_exact(batch_size)
        .map(|c| make_batch(&c.iter().collect::<Vec<_>>(), tasks))
        .collect()
}

// ---------------------------------------------------------------------------
// Scene cache

const CACHE_MAGIC: &str = "S4TSCENES1";

#[derive(Debug, Serialize, Deserialize)]
struct CacheHeader {
    count: usize,
    size: usize,
    dtype: String,
    /// Per-scene field order and channel counts.
    fields: Vec<(String, usize)>,
    seeds: Vec<u64>,
}

/// Flat little-endian `f32` arrays after a one-line JSON header.
pub fn write_scene_cache(path: &Path, scenes: &[Scene]) -> Result<()> {
    let size = scenes.first().map_or(0, |s| s.size);
    let header = CacheHeader {
        count: scenes.len(),
        size,
        dtype: "f32-le".into(),
        fields: vec![
            ("image".into(), 3),
            ("class".into(), 1),
            ("depth".into(), 1),
            ("normal".into(), 3),
            ("edge".into(), 1),
        ],
        seeds: scenes.iter().map(|s| s.seed).collect(),
    };
    let mut f =
        std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| Error::io(path, e))?);
    let mut buf = format!(
        "{CACHE_MAGIC} {}\n",
        serde_json::to_string(&header).unwrap()
    )
    .into_bytes();
    for s in scenes {
        let class: Vec<f32> = s.class.iter().map(|&c| c as f32).collect();
        for arr in [&s.image, &class, &s.depth, &s.normal, &s.edge] {
            arr.iter()
                .for_each(|v| buf.extend_from_slice(&v.to_le_bytes()));
        }
    }
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}

/// Read a cache written by [`write_scene_cache`]. Primitive stacks are not
/// stored and come back empty.
pub fn read_scene_cache(path: &Path) -> Result<Vec<Scene>> {
    let mut r = BufReader::new(std::fs::File::open(path).map_err(|e| Error::io(path, e))?);
    let mut line = String::new();
    r.read_line(&mut line).map_err(|e| Error::io(path, e))?;
    let json = line
        .strip_prefix(CACHE_MAGIC)
        .ok_or_else(|| Error::Format(format!("{}: not a scene cache", path.display())))?;
    let h: CacheHeader =
        serde_json::from_str(json.trim()).map_err(|e| Error::Format(e.to_string()))?;
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes).map_err(|e| Error::io(path, e))?;
    let px = h.size * h.size;
    let per = px * 9;
    if bytes.len() != h.count * per * 4 {
        return Err(Error::Format(format!(
            "{}: truncated scene cache",
            path.display()
        )));
    }
    let vals: Vec<f32> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok(vals
        .chunks_exact(per)
        .zip(&h.seeds)
        .map(|(v, &seed)| Scene {
            seed,
            size: h.size,
            image: v[..3 * px].to_vec(),
            class: v[3 * px..4 * px].iter().map(|&c| c as u8).collect(),
            depth: v[4 * px..5 * px].to_vec(),
            normal: v[5 * px..8 * px].to_vec(),
            edge: v[8 * px..].to_vec(),
            primitives: Vec::new(),
        })
        .collect())
}
