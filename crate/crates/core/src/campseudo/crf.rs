//! Fully connected CRF refinement by naive mean-field inference.
//!
//! Unaries come from the score map, pairwise terms are a Potts model with a
//! spatial Gaussian kernel and a bilateral (position + color) kernel. Every
//! pixel talks to every other pixel, so the raster is downsampled first to
//! keep the O(N^2) message pass tractable. Updates are Jacobi-style: each
//! iteration reads only the previous iteration's marginals.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{LabelMask, RgbImage, ScoreMap, BACKGROUND, IGNORE};

/// Probabilities are floored here before taking logs.
pub const PROB_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CrfConfig {
    pub iterations: u32,
    pub spatial_weight: f64,
    pub spatial_sigma: f64,
    pub bilateral_weight: f64,
    pub bilateral_spatial_sigma: f64,
    pub bilateral_color_sigma: f64,
    pub downsample_max_side: u32,
    /// Ignored input pixels stay 255 and take no part in inference.
    pub keep_ignore: bool,
}

impl Default for CrfConfig {
    fn default() -> Self {
        Self {
            iterations: 5,
            spatial_weight: 3.0,
            spatial_sigma: 1.0,
            bilateral_weight: 1.0,
            bilateral_spatial_sigma: 8.0,
            bilateral_color_sigma: 16.0,
            downsample_max_side: 128,
            keep_ignore: true,
        }
    }
}

impl CrfConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: String| Err(Error::ConfigInvariantViolation(what));
        if self.iterations == 0 {
            return bad("crf iterations must be positive".into());
        }
        for (name, w) in [
            ("spatial weight", self.spatial_weight),
            ("bilateral weight", self.bilateral_weight),
        ] {
            if !(w >= 0.0 && w.is_finite()) {
                return bad(format!("{name} {w} must be finite and >= 0"));
            }
        }
        for (name, s) in [
            ("spatial sigma", self.spatial_sigma),
            ("bilateral spatial sigma", self.bilateral_spatial_sigma),
            ("bilateral color sigma", self.bilateral_color_sigma),
        ] {
            if !(s > 0.0 && s.is_finite()) {
                return bad(format!("{name} {s} must be finite and > 0"));
            }
        }
        if self.downsample_max_side == 0 {
            return bad("downsample max side must be positive".into());
        }
        Ok(())
    }
}

/// Per-iteration diagnostics of a refinement run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CrfTrace {
    /// Largest |sum_l Q_i(l) - 1| over pixels, one entry per iteration.
    pub max_sum_deviation: Vec<f64>,
    /// Largest |Q_i(l) - Q_i(l)_prev| over pixels and labels, per iteration.
    pub max_change: Vec<f64>,
    /// Labels inference ran over, ascending.
    pub labels: Vec<u8>,
    /// Working raster size after downsampling.
    pub grid: (u32, u32),
}

/// Candidate labels: the values present in the initial mask. With
/// `keep_ignore` off and nothing assigned, falls back to background.
pub fn candidate_labels(initial: &LabelMask) -> Vec<u8> {
    let mut seen = [false; 256];
    for &v in initial.data() {
        seen[v as usize] = true;
    }
    let labels: Vec<u8> = (0..IGNORE).filter(|&c| seen[c as usize]).collect();
    if labels.is_empty() {
        vec![BACKGROUND]
    } else {
        labels
    }
}

/// Unary energies `-ln p` for each candidate label at pixel `j` of the map.
/// Background probability is one minus the best candidate class score.
pub fn unaries_at(scoremap: &ScoreMap, labels: &[u8], j: usize, out: &mut [f64]) {
    let best = labels
        .iter()
        .filter(|&&c| c != BACKGROUND)
        .map(|&c| f64::from(scoremap.score(c, j)))
        .fold(None, |acc: Option<f64>, s| Some(acc.map_or(s, |a| a.max(s))))
        .unwrap_or_else(|| {
            (1..=scoremap.n_cl() as u8)
                .map(|c| f64::from(scoremap.score(c, j)))
                .fold(0.0, f64::max)
        });
    for (slot, &l) in out.iter_mut().zip(labels) {
        let p = if l == BACKGROUND {
            1.0 - best
        } else {
            f64::from(scoremap.score(l, j))
        };
        *slot = -p.clamp(PROB_FLOOR, 1.0).ln();
    }
}

struct Grid {
    width: u32,
    height: u32,
    /// Source pixel index of each grid cell.
    source: Vec<usize>,
    /// Cell centre in full-resolution pixel coordinates.
    pos: Vec<[f64; 2]>,
}

fn grid_for(width: u32, height: u32, max_side: u32) -> Grid {
    let longest = width.max(height);
    let (gw, gh) = if longest > max_side {
        let f = max_side as f64 / longest as f64;
        (
            ((width as f64 * f).round() as u32).max(1),
            ((height as f64 * f).round() as u32).max(1),
        )
    } else {
        (width, height)
    };
    let sx = width as f64 / gw as f64;
    let sy = height as f64 / gh as f64;
    let mut source = Vec::with_capacity((gw * gh) as usize);
    let mut pos = Vec::with_capacity((gw * gh) as usize);
    for y in 0..gh {
        for x in 0..gw {
            let cx = (x as f64 + 0.5) * sx;
            let cy = (y as f64 + 0.5) * sy;
            let px = (cx.floor() as u32).min(width - 1);
            let py = (cy.floor() as u32).min(height - 1);
            source.push((py * width + px) as usize);
            pos.push([cx, cy]);
        }
    }
    Grid {
        width: gw,
        height: gh,
        source,
        pos,
    }
}

pub fn refine_crf(
    scoremap: &ScoreMap,
    image: &RgbImage,
    initial: &LabelMask,
    config: &CrfConfig,
) -> Result<LabelMask> {
    refine_crf_traced(scoremap, image, initial, config).map(|(m, _)| m)
}

pub fn refine_crf_traced(
    scoremap: &ScoreMap,
    image: &RgbImage,
    initial: &LabelMask,
    config: &CrfConfig,
) -> Result<(LabelMask, CrfTrace)> {
    config.validate()?;
    if scoremap.dims() != initial.dims() || image.dimensions() != initial.dims() {
        return Err(Error::DimensionMismatch(format!(
            "score map {:?}, image {:?} and mask {:?} must agree",
            scoremap.dims(),
            image.dimensions(),
            initial.dims()
        )));
    }
    let (width, height) = initial.dims();
    if initial.is_empty() {
        return Ok((initial.clone(), CrfTrace::default()));
    }
    let labels = candidate_labels(initial);
    if let Some(&c) = labels.iter().find(|&&c| c as usize > scoremap.n_cl()) {
        return Err(Error::ValueOutOfRange {
            value: c.to_string(),
            detail: format!("mask class exceeds score map n_cl = {}", scoremap.n_cl()),
        });
    }
    let nl = labels.len();
    let grid = grid_for(width, height, config.downsample_max_side);

    // Participating cells and their features.
    let active: Vec<usize> = (0..grid.source.len())
        .filter(|&i| !config.keep_ignore || initial.data()[grid.source[i]] != IGNORE)
        .collect();
    let n = active.len();
    let pos: Vec<[f64; 2]> = active.iter().map(|&i| grid.pos[i]).collect();
    let color: Vec<[f64; 3]> = active
        .iter()
        .map(|&i| {
            let src = grid.source[i];
            let p = image.as_raw();
            [
                f64::from(p[3 * src]),
                f64::from(p[3 * src + 1]),
                f64::from(p[3 * src + 2]),
            ]
        })
        .collect();
    let mut unary = vec![0.0; n * nl];
    for (k, &i) in active.iter().enumerate() {
        unaries_at(scoremap, &labels, grid.source[i], &mut unary[k * nl..(k + 1) * nl]);
    }

    let mut q = vec![0.0; n * nl];
    for k in 0..n {
        softmax_neg(&unary[k * nl..(k + 1) * nl], &mut q[k * nl..(k + 1) * nl]);
    }

    let kernel = Kernel {
        pos,
        color,
        ws: config.spatial_weight,
        wb: config.bilateral_weight,
        inv_s: 1.0 / (2.0 * config.spatial_sigma * config.spatial_sigma),
        inv_bs: 1.0 / (2.0 * config.bilateral_spatial_sigma * config.bilateral_spatial_sigma),
        inv_bc: 1.0 / (2.0 * config.bilateral_color_sigma * config.bilateral_color_sigma),
    };
    let pairwise = kernel.ws > 0.0 || kernel.wb > 0.0;
    let cache = (pairwise && n * n.saturating_sub(1) / 2 <= KERNEL_CACHE_ENTRIES)
        .then(|| kernel.packed(n));
    let row_mass: Vec<f64> = if !pairwise {
        vec![0.0; n]
    } else if let Some(tri) = &cache {
        let mut mass = vec![0.0; n];
        for i in 0..n {
            let row = &tri[packed_row(i, n)..packed_row(i + 1, n)];
            for (off, &k) in row.iter().enumerate() {
                let j = i + 1 + off;
                mass[i] += f64::from(k);
                mass[j] += f64::from(k);
            }
        }
        mass
    } else {
        (0..n)
            .into_par_iter()
            .map(|i| (0..n).filter(|&j| j != i).map(|j| kernel.eval(i, j)).sum())
            .collect()
    };

    let mut trace = CrfTrace {
        labels: labels.clone(),
        grid: (grid.width, grid.height),
        ..Default::default()
    };
    for _ in 0..config.iterations {
        // msg[i][l] = sum_j k(i, j) Q_j(l), all from the previous iteration.
        let msg: Vec<f64> = if !pairwise {
            vec![0.0; n * nl]
        } else if let Some(tri) = &cache {
            let mut msg = vec![0.0; n * nl];
            for i in 0..n {
                let row = &tri[packed_row(i, n)..packed_row(i + 1, n)];
                for (off, &k) in row.iter().enumerate() {
                    let j = i + 1 + off;
                    let k = f64::from(k);
                    for l in 0..nl {
                        msg[i * nl + l] += k * q[j * nl + l];
                        msg[j * nl + l] += k * q[i * nl + l];
                    }
                }
            }
            msg
        } else {
            (0..n)
                .into_par_iter()
                .flat_map_iter(|i| {
                    let mut m = vec![0.0; nl];
                    for j in (0..n).filter(|&j| j != i) {
                        let k = kernel.eval(i, j);
                        for l in 0..nl {
                            m[l] += k * q[j * nl + l];
                        }
                    }
                    m
                })
                .collect()
        };
        let mut next = vec![0.0; n * nl];
        let mut energy = vec![0.0; nl];
        for i in 0..n {
            // Potts: label l pays for the kernel mass sitting on other labels.
            for l in 0..nl {
                energy[l] = unary[i * nl + l] + row_mass[i] - msg[i * nl + l];
            }
            softmax_neg(&energy, &mut next[i * nl..(i + 1) * nl]);
        }
        let change = q
            .iter()
            .zip(&next)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        let deviation = next
            .chunks_exact(nl)
            .map(|row| (row.iter().sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max);
        trace.max_change.push(change);
        trace.max_sum_deviation.push(deviation);
        q = next;
    }

    // Argmax per active cell, ties toward the smaller label.
    let mut cell_label = vec![IGNORE; grid.source.len()];
    for (k, &i) in active.iter().enumerate() {
        let row = &q[k * nl..(k + 1) * nl];
        let mut best = 0;
        for l in 1..nl {
            if row[l] > row[best] {
                best = l;
            }
        }
        cell_label[i] = labels[best];
    }

    let mut out = LabelMask::filled(width, height, IGNORE);
    for y in 0..height {
        let gy = ((y as u64 * grid.height as u64) / height as u64) as u32;
        for x in 0..width {
            let idx = (y * width + x) as usize;
            if config.keep_ignore && initial.data()[idx] == IGNORE {
                continue;
            }
            let gx = ((x as u64 * grid.width as u64) / width as u64) as u32;
            let mut v = cell_label[(gy * grid.width + gx) as usize];
            if v == IGNORE {
                // Cell sampled an ignored pixel; fall back to the pixel's own unary argmax.
                let mut u = vec![0.0; nl];
                unaries_at(scoremap, &labels, idx, &mut u);
                let mut best = 0;
                for l in 1..nl {
                    if u[l] < u[best] {
                        best = l;
                    }
                }
                v = labels[best];
            }
            out.data_mut()[idx] = v;
        }
    }
    Ok((out, trace))
}

/// Pairs beyond this many are recomputed every iteration instead of cached.
const KERNEL_CACHE_ENTRIES: usize = 1 << 24;

struct Kernel {
    pos: Vec<[f64; 2]>,
    color: Vec<[f64; 3]>,
    ws: f64,
    wb: f64,
    inv_s: f64,
    inv_bs: f64,
    inv_bc: f64,
}

impl Kernel {
    /// Combined pairwise kernel, rounded to f32 so cached and streamed
    /// evaluation see the same values.
    fn eval(&self, i: usize, j: usize) -> f64 {
        let dx = self.pos[i][0] - self.pos[j][0];
        let dy = self.pos[i][1] - self.pos[j][1];
        let d2 = dx * dx + dy * dy;
        let mut k = 0.0;
        if self.ws > 0.0 {
            k += self.ws * (-d2 * self.inv_s).exp();
        }
        if self.wb > 0.0 {
            let (a, b) = (self.color[i], self.color[j]);
            let dc = (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2);
            k += self.wb * (-d2 * self.inv_bs - dc * self.inv_bc).exp();
        }
        f64::from(k as f32)
    }

    /// Strict upper triangle, row-major.
    fn packed(&self, n: usize) -> Vec<f32> {
        (0..n)
            .into_par_iter()
            .flat_map_iter(|i| ((i + 1)..n).map(move |j| self.eval(i, j) as f32))
            .collect()
    }
}

fn packed_row(i: usize, n: usize) -> usize {
    i * n - i * (i + 1) / 2
}

fn softmax_neg(energy: &[f64], out: &mut [f64]) {
    let min = energy.iter().copied().fold(f64::INFINITY, f64::min);
    let mut sum = 0.0;
    for (o, &e) in out.iter_mut().zip(energy) {
        *o = (min - e).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}
