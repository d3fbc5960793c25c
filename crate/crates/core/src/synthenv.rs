//! Procedural image-quality environment.
//!
//! Images are 32x32 intensity grids built from a smooth sinusoidal base field
//! plus a list of rectangular distortion patches. Every patch contributes an
//! additive per-pixel delta that depends only on the base field, the pixel
//! position and the patch salt, so splitting a patch into sub-rectangles (as
//! the editor does) re-renders bit-identically outside the edited area.
//!
//! The ground-truth score is a closed form of the patch list:
//! `y = clamp(5 - c * sum(intensity * area) / (H * W * a_norm), 1, 5)`.

use std::f64::consts::PI;
use std::fmt::Write as _;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, mix64, unit_from_bits};

pub const IMAGE_SIZE: usize = 32;
/// The crop tool works on a `CELL_GRID` x `CELL_GRID` partition of the image.
pub const CELL_GRID: usize = 4;
pub const CELL_SIZE: usize = IMAGE_SIZE / CELL_GRID;
pub const NUM_CELLS: usize = CELL_GRID * CELL_GRID;
pub const MAX_PATCHES: usize = 4;

/// Row-major scalar grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Grid {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl Grid {
    pub fn new(width: usize, height: usize, fill: f64) -> Self {
        Self {
            width,
            height,
            data: vec![fill; width * height],
        }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::Dimension {
                expected: width * height,
                got: data.len(),
            });
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        self.data[y * self.width + x] = v;
    }

    /// Value with coordinates clamped into the grid (replicate padding).
    #[inline]
    fn get_clamped(&self, x: isize, y: isize) -> f64 {
        let cx = x.clamp(0, self.width as isize - 1) as usize;
        let cy = y.clamp(0, self.height as isize - 1) as usize;
        self.get(cx, cy)
    }

    pub fn full_bbox(&self) -> BBox {
        BBox {
            x0: 0,
            y0: 0,
            x1: self.width,
            y1: self.height,
        }
    }

    /// Exact sub-grid; no resampling.
    pub fn crop(&self, bbox: BBox) -> Result<Grid> {
        bbox.validate(self.width, self.height)?;
        Ok(Grid::from_fn(bbox.width(), bbox.height(), |x, y| {
            self.get(bbox.x0 + x, bbox.y0 + y)
        }))
    }

    /// Writes `patch` back at `bbox` (inverse of [`Grid::crop`]).
    pub fn paste(&mut self, bbox: BBox, patch: &Grid) -> Result<()> {
        bbox.validate(self.width, self.height)?;
        if patch.width != bbox.width() || patch.height != bbox.height() {
            return Err(Error::Dimension {
                expected: bbox.area(),
                got: patch.data.len(),
            });
        }
        for y in 0..patch.height {
            for x in 0..patch.width {
                self.set(bbox.x0 + x, bbox.y0 + y, patch.get(x, y));
            }
        }
        Ok(())
    }

    /// Box filter of radius `r` with replicate padding.
    fn box_blur(&self, r: usize) -> Grid {
        let r = r as isize;
        let n = ((2 * r + 1) * (2 * r + 1)) as f64;
        Grid::from_fn(self.width, self.height, |x, y| {
            let mut s = 0.0;
            for dy in -r..=r {
                for dx in -r..=r {
                    s += self.get_clamped(x as isize + dx, y as isize + dy);
                }
            }
            s / n
        })
    }

    /// Mean over globally aligned `b`x`b` blocks.
    fn block_mean(&self, b: usize) -> Grid {
        let mut out = Grid::new(self.width, self.height, 0.0);
        for by in (0..self.height).step_by(b) {
            for bx in (0..self.width).step_by(b) {
                let (ex, ey) = ((bx + b).min(self.width), (by + b).min(self.height));
                let mut s = 0.0;
                for y in by..ey {
                    for x in bx..ex {
                        s += self.get(x, y);
                    }
                }
                let m = s / ((ex - bx) * (ey - by)) as f64;
                for y in by..ey {
                    for x in bx..ex {
                        out.set(x, y, m);
                    }
                }
            }
        }
        out
    }

    fn clamp_unit(&mut self) {
        for v in &mut self.data {
            *v = v.clamp(0.0, 1.0);
        }
    }
}

/// Half-open pixel rectangle `[x0, x1) x [y0, y1)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BBox {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl BBox {
    pub fn new(x0: usize, y0: usize, x1: usize, y1: usize) -> Self {
        Self { x0, y0, x1, y1 }
    }

    /// Bounding box of crop cell `index` (row-major over the 4x4 cell grid).
    pub fn cell(index: usize) -> Self {
        let (row, col) = (index / CELL_GRID, index % CELL_GRID);
        Self::new(
            col * CELL_SIZE,
            row * CELL_SIZE,
            (col + 1) * CELL_SIZE,
            (row + 1) * CELL_SIZE,
        )
    }

    pub fn validate(&self, width: usize, height: usize) -> Result<()> {
        if self.x0 < self.x1 && self.x1 <= width && self.y0 < self.y1 && self.y1 <= height {
            Ok(())
        } else {
            Err(Error::InvalidBBox {
                x0: self.x0,
                y0: self.y0,
                x1: self.x1,
                y1: self.y1,
                width,
                height,
            })
        }
    }

    pub fn width(&self) -> usize {
        self.x1.saturating_sub(self.x0)
    }

    pub fn height(&self) -> usize {
        self.y1.saturating_sub(self.y0)
    }

    pub fn area(&self) -> usize {
        self.width() * self.height()
    }

    pub fn contains(&self, x: usize, y: usize) -> bool {
        x >= self.x0 && x < self.x1 && y >= self.y0 && y < self.y1
    }

    pub fn intersect(&self, other: &BBox) -> Option<BBox> {
        let b = BBox::new(
            self.x0.max(other.x0),
            self.y0.max(other.y0),
            self.x1.min(other.x1),
            self.y1.min(other.y1),
        );
        (b.x0 < b.x1 && b.y0 < b.y1).then_some(b)
    }

    /// Cells of the crop grid this box overlaps.
    pub fn overlapping_cells(&self) -> Vec<usize> {
        (0..NUM_CELLS)
            .filter(|&c| self.intersect(&BBox::cell(c)).is_some())
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistortionKind {
    Noise,
    Blur,
    Block,
}

impl DistortionKind {
    pub const ALL: [DistortionKind; 3] = [Self::Noise, Self::Blur, Self::Block];
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistortionPatch {
    pub bbox: BBox,
    pub kind: DistortionKind,
    pub intensity: f64,
    /// Seeds the per-pixel noise field; pieces of a split patch share it.
    pub salt: u64,
}

/// Rendering, scoring and perturbation constants.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvConfig {
    pub score_c: f64,
    pub area_norm: f64,
    pub base_amplitude: f64,
    pub base_period: f64,
    pub texture_amplitude: f64,
    pub texture_period: f64,
    pub noise_sigma: f64,
    pub blur_radius: usize,
    pub block_size: usize,
    pub min_side: usize,
    pub max_side: usize,
    pub min_intensity: f64,
    pub max_intensity: f64,
    /// Relative sampling weights for noise, blur, block.
    pub kind_weights: [f64; 3],
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            score_c: 8.0,
            area_norm: 0.25,
            base_amplitude: 0.15,
            base_period: 16.0,
            texture_amplitude: 0.08,
            texture_period: 4.0,
            noise_sigma: 0.15,
            blur_radius: 1,
            block_size: 4,
            min_side: 4,
            max_side: CELL_SIZE,
            min_intensity: 0.2,
            max_intensity: 1.0,
            kind_weights: [1.0, 1.0, 1.0],
        }
    }
}

/// Settings of the distortion-based augmentation used to build `I'`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PerturbConfig {
    pub min_patches: usize,
    pub max_patches: usize,
    pub min_intensity: f64,
    pub max_intensity: f64,
    pub min_side: usize,
    pub max_side: usize,
    /// Weight of a 3x3 box filter mixed into every pixel.
    pub smoothing: f64,
}

impl Default for PerturbConfig {
    fn default() -> Self {
        Self {
            min_patches: 1,
            max_patches: 3,
            min_intensity: 0.3,
            max_intensity: 0.7,
            min_side: 4,
            max_side: 12,
            smoothing: 0.25,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthImage {
    pub pixels: Grid,
    pub patches: Vec<DistortionPatch>,
    pub seed: u64,
}

impl SynthImage {
    /// Renders `patches` over the base field of `seed`.
    pub fn render(cfg: &EnvConfig, seed: u64, patches: Vec<DistortionPatch>) -> Self {
        let base = base_field(cfg, seed);
        let mut pixels = base.clone();
        let refs = DeltaSources::new(cfg, &base);
        for p in &patches {
            apply_patch(cfg, &refs, &mut pixels, p);
        }
        pixels.clamp_unit();
        Self {
            pixels,
            patches,
            seed,
        }
    }

    pub fn width(&self) -> usize {
        self.pixels.width()
    }

    pub fn height(&self) -> usize {
        self.pixels.height()
    }

    /// Plain-text PGM (P2) with 0-255 quantized rows.
    pub fn to_pgm(&self) -> String {
        let mut s = format!("P2\n{} {}\n255\n", self.width(), self.height());
        for y in 0..self.height() {
            let row: Vec<String> = (0..self.width())
                .map(|x| ((self.pixels.get(x, y) * 255.0).round() as u8).to_string())
                .collect();
            let _ = writeln!(s, "{}", row.join(" "));
        }
        s
    }

    pub fn sidecar(&self, cfg: &EnvConfig) -> ImageSidecar {
        ImageSidecar {
            seed: self.seed,
            width: self.width(),
            height: self.height(),
            patches: self.patches.clone(),
            true_score: true_score_with(cfg, self),
        }
    }
}

/// JSON companion of a PGM dump.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageSidecar {
    pub seed: u64,
    pub width: usize,
    pub height: usize,
    pub patches: Vec<DistortionPatch>,
    pub true_score: f64,
}

fn base_field(cfg: &EnvConfig, seed: u64) -> Grid {
    let phase = |k: u64| 2.0 * PI * unit_from_bits(mix64(seed ^ k.wrapping_mul(0xA24B_AED4_963E_E407)));
    // Texture phases sit at pi/4 + j*pi/2 so |sin| is constant on the integer
    // lattice and clean cells share one Laplacian level.
    let quarter = |k: u64| PI / 4.0 + PI * (mix64(seed ^ k.wrapping_mul(0xA24B_AED4_963E_E407)) % 2) as f64;
    let (p1, p2, p3, p4) = (phase(1), phase(2), quarter(3), quarter(4));
    let w = 2.0 * PI / cfg.base_period;
    let wt = 2.0 * PI / cfg.texture_period;
    Grid::from_fn(IMAGE_SIZE, IMAGE_SIZE, |x, y| {
        let (x, y) = (x as f64, y as f64);
        0.5 + cfg.base_amplitude * ((w * x + p1).sin() + (w * y + p2).sin())
            + cfg.texture_amplitude * (wt * x + p3).sin() * (wt * y + p4).sin()
    })
}

/// Reference grids the blur and block deltas are measured against.
struct DeltaSources<'a> {
    source: &'a Grid,
    blurred: Grid,
    blocked: Grid,
}

impl<'a> DeltaSources<'a> {
    fn new(cfg: &EnvConfig, source: &'a Grid) -> Self {
        Self {
            source,
            blurred: source.box_blur(cfg.blur_radius),
            blocked: source.block_mean(cfg.block_size.max(1)),
        }
    }
}

/// Standard normal from a position hash (Box-Muller).
fn pixel_normal(salt: u64, x: usize, y: usize) -> f64 {
    let h = mix64(salt ^ mix64(((x as u64) << 32) | y as u64));
    let u1 = unit_from_bits(h).max(f64::MIN_POSITIVE);
    let u2 = unit_from_bits(mix64(h));
    (-2.0 * u1.ln()).sqrt() * (2.0 * PI * u2).cos()
}

fn apply_patch(cfg: &EnvConfig, refs: &DeltaSources<'_>, target: &mut Grid, p: &DistortionPatch) {
    let b = p.bbox;
    for y in b.y0..b.y1.min(target.height()) {
        for x in b.x0..b.x1.min(target.width()) {
            let delta = match p.kind {
                DistortionKind::Noise => cfg.noise_sigma * pixel_normal(p.salt, x, y),
                DistortionKind::Blur => refs.blurred.get(x, y) - refs.source.get(x, y),
                DistortionKind::Block => refs.blocked.get(x, y) - refs.source.get(x, y),
            };
            let v = target.get(x, y) + p.intensity * delta;
            target.set(x, y, v);
        }
    }
}

fn sample_kind(rng: &mut rng::Rng, weights: &[f64; 3]) -> DistortionKind {
    let total: f64 = weights.iter().sum();
    let mut u = rng.gen::<f64>() * total;
    for (k, w) in DistortionKind::ALL.iter().zip(weights) {
        if u < *w {
            return *k;
        }
        u -= w;
    }
    DistortionKind::Block
}

/// Generates an image with `num_patches` (clamped to 0..=4) distortions, each
/// confined to a distinct crop cell.
pub fn generate(seed: u64, num_patches: usize) -> SynthImage {
    generate_with(&EnvConfig::default(), seed, num_patches)
}

pub fn generate_with(cfg: &EnvConfig, seed: u64, num_patches: usize) -> SynthImage {
    let n = num_patches.min(MAX_PATCHES);
    let mut r = rng::seeded(seed);
    let mut cells: Vec<usize> = (0..NUM_CELLS).collect();
    let mut patches = Vec::with_capacity(n);
    for i in 0..n {
        let j = r.gen_range(i..NUM_CELLS);
        cells.swap(i, j);
        let cell = BBox::cell(cells[i]);
        let max_side = cfg.max_side.clamp(1, CELL_SIZE);
        let min_side = cfg.min_side.clamp(1, max_side);
        let w = r.gen_range(min_side..=max_side);
        let h = r.gen_range(min_side..=max_side);
        let x0 = cell.x0 + r.gen_range(0..=CELL_SIZE - w);
        let y0 = cell.y0 + r.gen_range(0..=CELL_SIZE - h);
        let kind = sample_kind(&mut r, &cfg.kind_weights);
        let intensity = r.gen_range(cfg.min_intensity..=cfg.max_intensity);
        patches.push(DistortionPatch {
            bbox: BBox::new(x0, y0, x0 + w, y0 + h),
            kind,
            intensity,
            salt: r.gen(),
        });
    }
    SynthImage::render(cfg, seed, patches)
}

/// Distortion energy `sum(intensity * area)` over all patches.
pub fn distortion_energy(patches: &[DistortionPatch]) -> f64 {
    patches
        .iter()
        .map(|p| p.intensity * p.bbox.area() as f64)
        .sum()
}

pub fn true_score(img: &SynthImage) -> f64 {
    true_score_with(&EnvConfig::default(), img)
}

pub fn true_score_with(cfg: &EnvConfig, img: &SynthImage) -> f64 {
    let pixels = (img.width() * img.height()) as f64;
    let y = 5.0 - cfg.score_c * distortion_energy(&img.patches) / (pixels * cfg.area_norm);
    y.clamp(1.0, 5.0)
}

pub fn crop(img: &SynthImage, bbox: BBox) -> Result<Grid> {
    img.pixels.crop(bbox)
}

/// Distortion-based augmentation: adds fresh random patches (the first one is
/// always noise, so the output differs from the input) on top of the current
/// pixels, then mixes in a global 3x3 smoothing.
pub fn perturb(img: &SynthImage, seed: u64) -> SynthImage {
    perturb_with(&EnvConfig::default(), &PerturbConfig::default(), img, seed)
}

pub fn perturb_with(
    env: &EnvConfig,
    cfg: &PerturbConfig,
    img: &SynthImage,
    seed: u64,
) -> SynthImage {
    let mut r = rng::seeded(seed);
    let (w, h) = (img.width(), img.height());
    let lo = cfg.min_patches.max(1);
    let n = r.gen_range(lo..=cfg.max_patches.max(lo));
    let mut fresh = Vec::with_capacity(n);
    for i in 0..n {
        let max_side = cfg.max_side.clamp(1, w.min(h));
        let min_side = cfg.min_side.clamp(1, max_side);
        let pw = r.gen_range(min_side..=max_side);
        let ph = r.gen_range(min_side..=max_side);
        let x0 = r.gen_range(0..=w - pw);
        let y0 = r.gen_range(0..=h - ph);
        let kind = if i == 0 {
            DistortionKind::Noise
        } else {
            DistortionKind::ALL[r.gen_range(0..3)]
        };
        let intensity = if cfg.max_intensity > cfg.min_intensity {
            r.gen_range(cfg.min_intensity..cfg.max_intensity)
        } else {
            cfg.min_intensity
        };
        fresh.push(DistortionPatch {
            bbox: BBox::new(x0, y0, x0 + pw, y0 + ph),
            kind,
            intensity,
            salt: r.gen(),
        });
    }
    let source = img.pixels.clone();
    let refs = DeltaSources::new(env, &source);
    let mut pixels = source.clone();
    for p in &fresh {
        apply_patch(env, &refs, &mut pixels, p);
    }
    if cfg.smoothing > 0.0 {
        let smooth = pixels.box_blur(1);
        for (v, s) in pixels.data.iter_mut().zip(&smooth.data) {
            *v = (1.0 - cfg.smoothing) * *v + cfg.smoothing * s;
        }
    }
    pixels.clamp_unit();
    let mut patches = img.patches.clone();
    patches.extend(fresh);
    SynthImage {
        pixels,
        patches,
        seed: img.seed,
    }
}

pub const NUM_REGION_FEATURES: usize = 4;

/// `[mean, variance, mean |discrete Laplacian|, max - min]`.
///
/// Variance is the population variance; the 4-neighbour Laplacian uses
/// replicate padding at the borders.
pub fn region_features(grid: &Grid) -> [f64; NUM_REGION_FEATURES] {
    if grid.is_empty() {
        return [0.0; NUM_REGION_FEATURES];
    }
    let n = grid.data.len() as f64;
    let mean = grid.data.iter().sum::<f64>() / n;
    let var = grid.data.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    // Interior pixels only, so crop borders do not leak into the statistic.
    let mut lap = 0.0;
    let mut count = 0usize;
    for y in 1..grid.height.saturating_sub(1) {
        for x in 1..grid.width.saturating_sub(1) {
            let l = grid.get(x - 1, y) + grid.get(x + 1, y) + grid.get(x, y - 1) + grid.get(x, y + 1)
                - 4.0 * grid.get(x, y);
            lap += l.abs();
            count += 1;
        }
    }
    let lap = if count > 0 { lap / count as f64 } else { 0.0 };
    let (lo, hi) = grid
        .data
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    [mean, var, lap, hi - lo]
}
