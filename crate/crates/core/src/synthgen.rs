//! Synthetic evolving-content datasets.
//!
//! Each subject carries a few labeled shapes (disks and rounded rectangles,
//! one per class) that shrink geometrically over timesteps on a textured
//! background. Every image gets an exact ground-truth mask and a simulated
//! attention map: the class indicator, Gaussian-blurred, plus Gaussian noise.

use std::collections::BTreeSet;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fsutil;
use crate::model::{
    rgb::encode_rgb_png, save_manifest, ClassTable, DatasetManifest, ImageRecord, LabelMask,
    RgbImage, ScoreMap, BACKGROUND,
};

/// Shapes never shrink below this radius, so every class stays visible.
pub const MIN_RADIUS: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub subjects: u32,
    pub classes_per_subject: u32,
    pub timesteps: u32,
    pub image_size: u32,
    pub decay_rate: f64,
    pub jitter: f64,
    pub cam_noise_sigma: f64,
    pub cam_blur_sigma: f64,
    pub abrupt_change_at: Option<u32>,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            subjects: 4,
            classes_per_subject: 2,
            timesteps: 10,
            image_size: 64,
            decay_rate: 0.1,
            jitter: 0.0,
            cam_noise_sigma: 0.15,
            cam_blur_sigma: 3.0,
            abrupt_change_at: None,
            seed: 42,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self, classes: &ClassTable) -> Result<()> {
        let bad = |m: String| Err(Error::ConfigInvariantViolation(m));
        if self.timesteps < 1 {
            return bad("timesteps must be >= 1".into());
        }
        if !(0.0..1.0).contains(&self.decay_rate) {
            return bad(format!("decay rate {} outside [0, 1)", self.decay_rate));
        }
        if self.image_size < 16 {
            return bad(format!("image size {} below 16", self.image_size));
        }
        if self.classes_per_subject < 1 || self.classes_per_subject as usize > classes.n_cl() {
            return bad(format!(
                "classes per subject {} outside 1..={}",
                self.classes_per_subject,
                classes.n_cl()
            ));
        }
        for (name, v) in [
            ("jitter", self.jitter),
            ("cam noise sigma", self.cam_noise_sigma),
            ("cam blur sigma", self.cam_blur_sigma),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} {v} must be finite and >= 0"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Shape {
    Disk {
        cx: f64,
        cy: f64,
        r: f64,
    },
    RoundedRect {
        cx: f64,
        cy: f64,
        half_w: f64,
        half_h: f64,
        corner: f64,
    },
}

impl Shape {
    /// Whether the point lies inside (boundary included).
    pub fn contains(&self, x: f64, y: f64) -> bool {
        match *self {
            Shape::Disk { cx, cy, r } => {
                let (dx, dy) = (x - cx, y - cy);
                dx * dx + dy * dy <= r * r
            }
            Shape::RoundedRect {
                cx,
                cy,
                half_w,
                half_h,
                corner,
            } => {
                let (dx, dy) = ((x - cx).abs(), (y - cy).abs());
                if dx > half_w || dy > half_h {
                    return false;
                }
                let (ix, iy) = (half_w - corner, half_h - corner);
                if dx <= ix || dy <= iy {
                    return true;
                }
                let (ex, ey) = (dx - ix, dy - iy);
                ex * ex + ey * ey <= corner * corner
            }
        }
    }

    /// Uniform scaling about the centre.
    pub fn scaled(&self, f: f64) -> Shape {
        match *self {
            Shape::Disk { cx, cy, r } => Shape::Disk { cx, cy, r: r * f },
            Shape::RoundedRect {
                cx,
                cy,
                half_w,
                half_h,
                corner,
            } => Shape::RoundedRect {
                cx,
                cy,
                half_w: half_w * f,
                half_h: half_h * f,
                corner: corner * f,
            },
        }
    }

    pub fn translated(&self, dx: f64, dy: f64) -> Shape {
        match *self {
            Shape::Disk { cx, cy, r } => Shape::Disk {
                cx: cx + dx,
                cy: cy + dy,
                r,
            },
            Shape::RoundedRect {
                cx,
                cy,
                half_w,
                half_h,
                corner,
            } => Shape::RoundedRect {
                cx: cx + dx,
                cy: cy + dy,
                half_w,
                half_h,
                corner,
            },
        }
    }

    /// Characteristic size (radius, or the larger half extent).
    pub fn size(&self) -> f64 {
        match *self {
            Shape::Disk { r, .. } => r,
            Shape::RoundedRect { half_w, half_h, .. } => half_w.max(half_h),
        }
    }

    /// Pixel indices of `width x height` whose centres fall inside.
    pub fn rasterize(&self, width: u32, height: u32) -> Vec<usize> {
        let (cx, cy, ext) = match *self {
            Shape::Disk { cx, cy, r } => (cx, cy, r),
            Shape::RoundedRect {
                cx,
                cy,
                half_w,
                half_h,
                ..
            } => (cx, cy, half_w.max(half_h)),
        };
        let lo = |c: f64, max: u32| ((c - ext - 1.0).floor().max(0.0) as u32).min(max);
        let hi = |c: f64, max: u32| ((c + ext + 1.0).ceil().max(0.0) as u32).min(max);
        let mut out = Vec::new();
        for y in lo(cy, height)..hi(cy, height) {
            for x in lo(cx, width)..hi(cx, width) {
                if self.contains(x as f64 + 0.5, y as f64 + 0.5) {
                    out.push((y * width + x) as usize);
                }
            }
        }
        out
    }
}

/// Size multiplier after `t` timesteps of geometric decay.
pub fn decay_factor(decay_rate: f64, t: u32) -> f64 {
    (1.0 - decay_rate).powi(t as i32)
}

/// Fixed display color of each class index.
pub fn class_color(class: u8) -> [u8; 3] {
    const PALETTE: [[u8; 3]; 8] = [
        [0, 0, 0],
        [220, 60, 50],
        [60, 170, 70],
        [50, 90, 210],
        [230, 190, 40],
        [170, 70, 200],
        [40, 190, 200],
        [240, 130, 40],
    ];
    if (class as usize) < PALETTE.len() {
        PALETTE[class as usize]
    } else {
        let c = class as u32;
        [
            (c * 67 % 200 + 40) as u8,
            (c * 131 % 200 + 40) as u8,
            (c * 197 % 200 + 40) as u8,
        ]
    }
}

/// Mixes a base seed with stream coordinates (splitmix64 finalizer).
pub fn derive_seed(seed: u64, parts: &[u64]) -> u64 {
    let mut h = seed ^ 0x9e37_79b9_7f4a_7c15;
    for &p in parts {
        h = h.wrapping_add(p.wrapping_mul(0xbf58_476d_1ce4_e5b9)).wrapping_add(0x9e37_79b9_7f4a_7c15);
        h = (h ^ (h >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        h = (h ^ (h >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        h ^= h >> 31;
    }
    h
}

const STREAM_LAYOUT: u64 = 1;
const STREAM_IMAGE: u64 = 2;
const STREAM_CAM: u64 = 3;

/// Static description of one subject: its classes, base shapes and backdrop.
#[derive(Debug, Clone)]
pub struct SubjectPlan {
    pub index: u32,
    pub classes: Vec<u8>,
    pub shapes: Vec<Shape>,
    pub base_color: [f64; 3],
    pub alt_color: [f64; 3],
    /// Coarse value-noise lattice for the background, 9x9 offsets.
    pub texture: Vec<f64>,
    /// Cumulative translation per timestep.
    pub offsets: Vec<(f64, f64)>,
}

pub fn plan_subject(config: &SynthConfig, classes: &ClassTable, index: u32) -> SubjectPlan {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, &[STREAM_LAYOUT, index as u64]));
    let mut pool: Vec<u8> = (1..=classes.n_cl() as u8).collect();
    pool.shuffle(&mut rng);
    let mut chosen: Vec<u8> = pool[..config.classes_per_subject as usize].to_vec();
    chosen.sort_unstable();

    let k = chosen.len() as u32;
    let cols = (k as f64).sqrt().ceil() as u32;
    let rows = k.div_ceil(cols);
    let size = config.image_size as f64;
    let (cell_w, cell_h) = (size / cols as f64, size / rows as f64);
    let shapes = chosen
        .iter()
        .enumerate()
        .map(|(i, &class)| {
            let (col, row) = (i as u32 % cols, i as u32 / cols);
            let base = 0.34 * cell_w.min(cell_h) * rng.random_range(0.9..1.0);
            let cx = (col as f64 + 0.5) * cell_w + rng.random_range(-0.04..0.04) * cell_w;
            let cy = (row as f64 + 0.5) * cell_h + rng.random_range(-0.04..0.04) * cell_h;
            if class % 2 == 0 {
                Shape::Disk { cx, cy, r: base }
            } else {
                Shape::RoundedRect {
                    cx,
                    cy,
                    half_w: base,
                    half_h: 0.75 * base,
                    corner: 0.3 * base,
                }
            }
        })
        .collect();

    let base_color = [
        rng.random_range(90.0..150.0),
        rng.random_range(80.0..130.0),
        rng.random_range(60.0..110.0),
    ];
    let alt_color = [
        255.0 - base_color[0] + rng.random_range(-10.0..10.0),
        255.0 - base_color[2],
        255.0 - base_color[1],
    ];
    let texture = (0..81).map(|_| rng.random_range(-10.0..10.0)).collect();

    let bound = 0.1 * size;
    let mut offsets = Vec::with_capacity(config.timesteps as usize);
    let (mut ox, mut oy) = (0.0f64, 0.0f64);
    for t in 0..config.timesteps {
        if t > 0 && config.jitter > 0.0 {
            ox = (ox + rng.random_range(-config.jitter..=config.jitter)).clamp(-bound, bound);
            oy = (oy + rng.random_range(-config.jitter..=config.jitter)).clamp(-bound, bound);
        }
        offsets.push((ox, oy));
    }

    SubjectPlan {
        index,
        classes: chosen,
        shapes,
        base_color,
        alt_color,
        texture,
        offsets,
    }
}

impl SubjectPlan {
    /// Shapes as they appear at timestep `t`.
    pub fn shapes_at(&self, config: &SynthConfig, t: u32) -> Vec<(u8, Shape)> {
        let f = decay_factor(config.decay_rate, t);
        let (ox, oy) = self.offsets[t as usize];
        self.classes
            .iter()
            .zip(&self.shapes)
            .map(|(&c, s)| {
                let scale = (f * s.size()).max(MIN_RADIUS) / s.size();
                (c, s.scaled(scale).translated(ox, oy))
            })
            .collect()
    }

    pub fn ground_truth(&self, config: &SynthConfig, t: u32) -> LabelMask {
        let size = config.image_size;
        let mut mask = LabelMask::filled(size, size, BACKGROUND);
        for (class, shape) in self.shapes_at(config, t) {
            for j in shape.rasterize(size, size) {
                mask.data_mut()[j] = class;
            }
        }
        mask
    }

    pub fn render(&self, config: &SynthConfig, t: u32, gt: &LabelMask) -> RgbImage {
        let size = config.image_size;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
            config.seed,
            &[STREAM_IMAGE, self.index as u64, t as u64],
        ));
        let abrupt = config.abrupt_change_at.is_some_and(|a| t >= a);
        let base = if abrupt { self.alt_color } else { self.base_color };
        let f = decay_factor(config.decay_rate, t);
        let shade = 0.65 + 0.35 * f;
        let cell = size as f64 / 8.0;
        let mut img = RgbImage::new(size, size);
        for y in 0..size {
            for x in 0..size {
                let j = (y * size + x) as usize;
                let class = gt.data()[j];
                let fine: f64 = rng.random_range(-3.0..3.0);
                let px = if class == BACKGROUND {
                    let tex = bilinear(&self.texture, x as f64 / cell, y as f64 / cell);
                    base.map(|b| b + tex + fine)
                } else {
                    class_color(class).map(|c| c as f64 * shade + fine)
                };
                img.put_pixel(x, y, image::Rgb(px.map(|v| v.round().clamp(0.0, 255.0) as u8)));
            }
        }
        img
    }
}

fn bilinear(lattice: &[f64], u: f64, v: f64) -> f64 {
    let (x0, y0) = ((u.floor() as usize).min(7), (v.floor() as usize).min(7));
    let (fx, fy) = (u - x0 as f64, v - y0 as f64);
    let at = |x: usize, y: usize| lattice[y * 9 + x];
    let top = at(x0, y0) * (1.0 - fx) + at(x0 + 1, y0) * fx;
    let bottom = at(x0, y0 + 1) * (1.0 - fx) + at(x0 + 1, y0 + 1) * fx;
    top * (1.0 - fy) + bottom * fy
}

/// Separable Gaussian blur with clamp-to-edge borders; `sigma = 0` is identity.
pub fn gaussian_blur(values: &[f64], width: u32, height: u32, sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return values.to_vec();
    }
    let radius = (3.0 * sigma).ceil() as i64;
    let kernel: Vec<f64> = (-radius..=radius)
        .map(|d| (-(d * d) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let norm: f64 = kernel.iter().sum();
    let kernel: Vec<f64> = kernel.into_iter().map(|k| k / norm).collect();
    let (w, h) = (width as i64, height as i64);
    let mut tmp = vec![0.0; values.len()];
    for y in 0..h {
        for x in 0..w {
            tmp[(y * w + x) as usize] = (-radius..=radius)
                .map(|d| {
                    let sx = (x + d).clamp(0, w - 1);
                    kernel[(d + radius) as usize] * values[(y * w + sx) as usize]
                })
                .sum();
        }
    }
    let mut out = vec![0.0; values.len()];
    for y in 0..h {
        for x in 0..w {
            out[(y * w + x) as usize] = (-radius..=radius)
                .map(|d| {
                    let sy = (y + d).clamp(0, h - 1);
                    kernel[(d + radius) as usize] * tmp[(sy * w + x) as usize]
                })
                .sum();
        }
    }
    out
}

/// Simulated attention map for a ground-truth mask: one plane per class of
/// the table, indicator blurred then corrupted with Gaussian noise.
pub fn synth_scoremap(gt: &LabelMask, n_cl: usize, config: &SynthConfig, seed: u64) -> ScoreMap {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = (config.cam_noise_sigma > 0.0)
        .then(|| Normal::new(0.0, config.cam_noise_sigma).expect("validated sigma"));
    let (w, h) = gt.dims();
    let planes = (1..=n_cl as u8)
        .map(|class| {
            let indicator: Vec<f64> = gt
                .data()
                .iter()
                .map(|&v| if v == class { 1.0 } else { 0.0 })
                .collect();
            gaussian_blur(&indicator, w, h, config.cam_blur_sigma)
                .into_iter()
                .map(|v| {
                    let n = noise.as_ref().map_or(0.0, |d| d.sample(&mut rng));
                    (v + n).clamp(0.0, 1.0) as f32
                })
                .collect()
        })
        .collect();
    ScoreMap::new(w, h, planes).expect("planes are sized and clamped")
}

pub fn image_id(subject: u32, t: u32) -> String {
    format!("s{subject:02}_t{t:03}")
}

/// Writes a full synthetic dataset under `output_dir` and returns its manifest.
pub fn generate_dataset(config: &SynthConfig, output_dir: &Path) -> Result<DatasetManifest> {
    let classes = ClassTable::body_parts();
    config.validate(&classes)?;
    for sub in ["images", "gt", "scoremaps"] {
        let dir = output_dir.join(sub);
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }
    let per_subject: Vec<Vec<ImageRecord>> = (0..config.subjects)
        .into_par_iter()
        .map(|s| {
            let plan = plan_subject(config, &classes, s);
            (0..config.timesteps)
                .map(|t| {
                    let id = image_id(s, t);
                    let gt = plan.ground_truth(config, t);
                    let rgb = plan.render(config, t, &gt);
                    let cam_seed = derive_seed(config.seed, &[STREAM_CAM, s as u64, t as u64]);
                    let scores = synth_scoremap(&gt, classes.n_cl(), config, cam_seed);
                    let image_path = output_dir.join("images").join(format!("{id}.png"));
                    let gt_path = output_dir.join("gt").join(format!("{id}.png"));
                    let smp_path = output_dir.join("scoremaps").join(format!("{id}.smp"));
                    fsutil::write_atomic(&image_path, &encode_rgb_png(&rgb))?;
                    crate::model::write_mask(&gt, &gt_path)?;
                    crate::model::write_scoremap(&scores, &smp_path)?;
                    Ok(ImageRecord {
                        id,
                        image_path,
                        scoremap_path: Some(smp_path),
                        class_labels: gt.classes_present().into_iter().collect::<BTreeSet<u8>>(),
                        subject: format!("subject-{s:02}"),
                        timestep: t as u64,
                        gt_mask_path: Some(gt_path),
                    })
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let manifest = DatasetManifest::new(classes, per_subject.into_iter().flatten().collect())?;
    save_manifest(&manifest, &output_dir.join("manifest.json"))?;
    Ok(manifest)
}
