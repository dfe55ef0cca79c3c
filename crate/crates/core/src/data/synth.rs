//! Procedural image datasets for desk-scale experiments.
//!
//! - `shapes`: ten labeled shape classes (disk, ring, square, ...) with random
//!   position, scale, rotation, intensities and a mild background gradient.
//! - `ood_shapes`: ten different shape families from the same renderer,
//!   disjoint from `shapes`, used as unlabeled server data.
//! - `textures`: random Gaussian blobs and strokes, a second and structurally
//!   different proxy distribution.
//! - `polygons`: random star-shaped outlines (filled or stroked), one fresh
//!   shape per image.
//! - `composites`: unions of two or three random primitives (disks, rings,
//!   boxes, strokes) at random offsets.
//!
//! `polygons` and `composites` have no classes of their own and come from the
//! same renderer as `shapes`.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{LabeledDataset, UnlabeledDataset};
use crate::error::{Error, Result};
use crate::image::{Image, Shape};
use crate::rng::{self, tag};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SynthKind {
    Shapes,
    OodShapes,
    Textures,
    Polygons,
    Composites,
}

impl SynthKind {
    pub const ALL: [SynthKind; 5] = [
        SynthKind::Shapes,
        SynthKind::OodShapes,
        SynthKind::Textures,
        SynthKind::Polygons,
        SynthKind::Composites,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SynthKind::Shapes => "shapes",
            SynthKind::OodShapes => "ood_shapes",
            SynthKind::Textures => "textures",
            SynthKind::Polygons => "polygons",
            SynthKind::Composites => "composites",
        }
    }

    pub fn num_classes(self) -> usize {
        match self {
            SynthKind::Shapes | SynthKind::OodShapes => 10,
            SynthKind::Textures | SynthKind::Polygons | SynthKind::Composites => 1,
        }
    }
}

impl fmt::Display for SynthKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SynthKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SynthKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown synthetic dataset kind `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub kind: SynthKind,
    pub count: usize,
    pub size: usize,
    pub channels: usize,
    pub seed: u64,
}

type V2 = (f64, f64);

fn len(p: V2) -> f64 {
    (p.0 * p.0 + p.1 * p.1).sqrt()
}

fn rot(p: V2, a: f64) -> V2 {
    let (s, c) = a.sin_cos();
    (c * p.0 - s * p.1, s * p.0 + c * p.1)
}

fn circle(p: V2, r: f64) -> f64 {
    len(p) - r
}

fn boxed(p: V2, hx: f64, hy: f64) -> f64 {
    let dx = p.0.abs() - hx;
    let dy = p.1.abs() - hy;
    len((dx.max(0.0), dy.max(0.0))) + dx.max(dy).min(0.0)
}

fn segment(p: V2, a: V2, b: V2, half_width: f64) -> f64 {
    let pa = (p.0 - a.0, p.1 - a.1);
    let ba = (b.0 - a.0, b.1 - a.1);
    let h = ((pa.0 * ba.0 + pa.1 * ba.1) / (ba.0 * ba.0 + ba.1 * ba.1)).clamp(0.0, 1.0);
    len((pa.0 - ba.0 * h, pa.1 - ba.1 * h)) - half_width
}

fn triangle(p: V2, r: f64) -> f64 {
    let k = 3f64.sqrt();
    let mut px = p.0.abs() - r;
    let mut py = -p.1 + r / k;
    if px + k * py > 0.0 {
        let (nx, ny) = ((px - k * py) / 2.0, (-k * px - py) / 2.0);
        px = nx;
        py = ny;
    }
    px -= px.clamp(-2.0 * r, 0.0);
    -len((px, py)) * py.signum()
}

fn hexagon(p: V2, r: f64) -> f64 {
    let k = (-0.866_025_404, 0.5, 0.577_350_269);
    let mut q = (p.0.abs(), p.1.abs());
    let d = 2.0 * (k.0 * q.0 + k.1 * q.1).min(0.0);
    q = (q.0 - d * k.0, q.1 - d * k.1);
    q = (q.0 - q.0.clamp(-k.2 * r, k.2 * r), q.1 - r);
    len(q) * q.1.signum()
}

/// Signed distance (in shape units, extent about 1) of labeled class `class`.
fn shape_sdf(class: usize, p: V2) -> f64 {
    match class {
        0 => circle(p, 0.85),
        1 => (len(p) - 0.7).abs() - 0.2,
        2 => boxed(p, 0.75, 0.75),
        3 => boxed(p, 0.8, 0.8).abs() - 0.17,
        4 => triangle(p, 0.95),
        5 => boxed(p, 0.95, 0.22).min(boxed(p, 0.22, 0.95)),
        6 => {
            let q = rot(p, std::f64::consts::FRAC_PI_4);
            boxed(q, 1.0, 0.2).min(boxed(q, 0.2, 1.0))
        }
        7 => [-0.6, 0.0, 0.6]
            .iter()
            .map(|&y| boxed((p.0, p.1 - y), 0.9, 0.16))
            .fold(f64::INFINITY, f64::min),
        8 => [-0.6, 0.0, 0.6]
            .iter()
            .map(|&x| boxed((p.0 - x, p.1), 0.16, 0.9))
            .fold(f64::INFINITY, f64::min),
        _ => circle((p.0 + 0.5, p.1), 0.35).min(circle((p.0 - 0.5, p.1), 0.35)),
    }
}

/// Families disjoint from [`shape_sdf`].
fn ood_sdf(class: usize, p: V2) -> f64 {
    match class {
        0 => boxed(rot(p, std::f64::consts::FRAC_PI_4), 0.65, 0.65).abs() - 0.14,
        1 => circle(p, 0.85).max(-p.1),
        2 => boxed((p.0 + 0.45, p.1), 0.2, 0.9).min(boxed((p.0, p.1 - 0.7), 0.65, 0.2)),
        3 => boxed((p.0, p.1 + 0.7), 0.9, 0.2).min(boxed(p, 0.2, 0.9)),
        4 => hexagon(p, 0.8),
        5 => circle(p, 0.85).max(-circle((p.0 + 0.45, p.1), 0.7)),
        6 => {
            let mut d = f64::INFINITY;
            for gy in [-0.6, 0.0, 0.6] {
                for gx in [-0.6, 0.0, 0.6] {
                    d = d.min(circle((p.0 - gx, p.1 - gy), 0.2));
                }
            }
            d
        }
        7 => boxed((p.0 - 0.4, p.1 - 0.4), 0.4, 0.4).min(boxed((p.0 + 0.4, p.1 + 0.4), 0.4, 0.4)),
        8 => segment(p, (-0.8, -0.5), (0.0, 0.4), 0.18).min(segment(p, (0.0, 0.4), (0.8, -0.5), 0.18)),
        _ => {
            let q = (p.0 / 1.0, p.1 / 0.35);
            (len(q) - 1.0) * 0.35
        }
    }
}

/// Random star-shaped region `|p| < r0 (1 + Σ a_k cos(kθ + φ_k))`, sometimes
/// reduced to its outline.
fn random_polygon<R: Rng>(rng: &mut R) -> impl Fn(V2) -> f64 {
    let r0: f64 = rng.random_range(0.65..0.95);
    let harmonics: Vec<(f64, f64, f64)> = (2..=5)
        .map(|k| (k as f64, rng.random_range(-0.16..0.16), rng.random_range(0.0..std::f64::consts::TAU)))
        .collect();
    let stroke: Option<f64> = rng.random_bool(0.35).then(|| rng.random_range(0.12..0.25));
    move |p: V2| {
        let theta = p.1.atan2(p.0);
        let r = r0 * (1.0 + harmonics.iter().map(|(k, a, phi)| a * (k * theta + phi).cos()).sum::<f64>());
        let d = 0.8 * (len(p) - r);
        match stroke {
            Some(w) => d.abs() - w,
            None => d,
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum Primitive {
    Disk(f64),
    Ring(f64, f64),
    Box(f64, f64),
    Stroke(f64, f64),
}

/// Union of two or three random primitives.
fn random_composite<R: Rng>(rng: &mut R) -> impl Fn(V2) -> f64 {
    let n = rng.random_range(2..=3);
    let parts: Vec<(V2, f64, Primitive)> = (0..n)
        .map(|_| {
            let centre = (rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5));
            let angle = rng.random_range(0.0..std::f64::consts::PI);
            let prim = match rng.random_range(0..4) {
                0 => Primitive::Disk(rng.random_range(0.25..0.5)),
                1 => Primitive::Ring(rng.random_range(0.35..0.6), rng.random_range(0.1..0.18)),
                2 => Primitive::Box(rng.random_range(0.15..0.6), rng.random_range(0.15..0.6)),
                _ => Primitive::Stroke(rng.random_range(0.3..0.8), rng.random_range(0.1..0.2)),
            };
            (centre, angle, prim)
        })
        .collect();
    move |p: V2| {
        parts
            .iter()
            .map(|&(c, a, prim)| {
                let q = rot((p.0 - c.0, p.1 - c.1), -a);
                match prim {
                    Primitive::Disk(r) => circle(q, r),
                    Primitive::Ring(r, w) => (len(q) - r).abs() - w,
                    Primitive::Box(hx, hy) => boxed(q, hx, hy),
                    Primitive::Stroke(h, w) => segment(q, (-h, 0.0), (h, 0.0), w),
                }
            })
            .fold(f64::INFINITY, f64::min)
    }
}

struct Canvas {
    size: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Canvas {
    fn background<R: Rng>(size: usize, channels: usize, rng: &mut R) -> Self {
        let base: f64 = rng.random_range(0.0..0.35);
        let gx: f64 = rng.random_range(-0.12..0.12);
        let gy: f64 = rng.random_range(-0.12..0.12);
        let tint: Vec<f64> = (0..channels).map(|_| rng.random_range(-0.05..0.05)).collect();
        let mut data = Vec::with_capacity(size * size * channels);
        for y in 0..size {
            for x in 0..size {
                let v = base + gx * (x as f64 / size as f64 - 0.5) + gy * (y as f64 / size as f64 - 0.5);
                for t in &tint {
                    data.push(v + t);
                }
            }
        }
        Canvas { size, channels, data }
    }

    /// Paints `colour` with per-pixel anti-aliased coverage of `sdf_px` (distance in pixels).
    fn paint(&mut self, colour: &[f64], sdf_px: impl Fn(V2) -> f64) {
        for y in 0..self.size {
            for x in 0..self.size {
                let cov = (0.5 - sdf_px((x as f64 + 0.5, y as f64 + 0.5))).clamp(0.0, 1.0);
                if cov > 0.0 {
                    for c in 0..self.channels {
                        let v = &mut self.data[(y * self.size + x) * self.channels + c];
                        *v += cov * (colour[c] - *v);
                    }
                }
            }
        }
    }

    fn finish<R: Rng>(self, noise: f64, rng: &mut R) -> Image {
        let normal = Normal::new(0.0, noise).expect("noise sigma");
        let pixels = self
            .data
            .iter()
            .map(|v| (v + normal.sample(rng)).clamp(0.0, 1.0) as f32)
            .collect();
        Image::from_vec(Shape::new(self.size, self.size, self.channels), pixels).expect("canvas shape")
    }
}

fn foreground<R: Rng>(channels: usize, rng: &mut R) -> Vec<f64> {
    let level: f64 = rng.random_range(0.6..1.0);
    (0..channels)
        .map(|_| if channels == 1 { level } else { level * rng.random_range(0.7..1.0) })
        .collect()
}

fn render_shape<R: Rng>(sdf: impl Fn(V2) -> f64, size: usize, channels: usize, rng: &mut R) -> Image {
    let s = size as f64;
    let mut canvas = Canvas::background(size, channels, rng);
    let centre = (
        s / 2.0 + rng.random_range(-0.12..0.12) * s,
        s / 2.0 + rng.random_range(-0.12..0.12) * s,
    );
    let radius = rng.random_range(0.26..0.36) * s;
    let angle: f64 = rng.random_range(-0.3..0.3);
    let colour = foreground(channels, rng);
    canvas.paint(&colour, |p| {
        let local = rot(((p.0 - centre.0) / radius, (p.1 - centre.1) / radius), -angle);
        sdf(local) * radius
    });
    canvas.finish(0.02, rng)
}

fn render_texture<R: Rng>(size: usize, channels: usize, rng: &mut R) -> Image {
    let s = size as f64;
    let mut canvas = Canvas::background(size, channels, rng);
    let blobs = rng.random_range(3..7);
    for _ in 0..blobs {
        let c = (rng.random_range(0.0..s), rng.random_range(0.0..s));
        let sigma = rng.random_range(0.08..0.25) * s;
        let amp: f64 = rng.random_range(-0.4..0.7);
        let tint: Vec<f64> = (0..channels).map(|_| rng.random_range(0.7..1.0)).collect();
        for y in 0..size {
            for x in 0..size {
                let d2 = (x as f64 + 0.5 - c.0).powi(2) + (y as f64 + 0.5 - c.1).powi(2);
                let g = amp * (-d2 / (2.0 * sigma * sigma)).exp();
                for (ch, t) in tint.iter().enumerate() {
                    canvas.data[(y * size + x) * channels + ch] += g * t;
                }
            }
        }
    }
    let strokes = rng.random_range(1..4);
    for _ in 0..strokes {
        let a = (rng.random_range(0.0..s), rng.random_range(0.0..s));
        let b = (rng.random_range(0.0..s), rng.random_range(0.0..s));
        let w = rng.random_range(0.4..1.2);
        let colour = foreground(channels, rng);
        canvas.paint(&colour, |p| segment(p, a, b, w));
    }
    canvas.finish(0.02, rng)
}

/// Generates `spec.count` images; classes are assigned round-robin.
pub fn generate(spec: &SynthSpec) -> Result<LabeledDataset> {
    if spec.size < 4 || spec.channels == 0 || spec.count == 0 {
        return Err(Error::InvalidArgument(format!(
            "synthetic dataset needs size >= 4, channels >= 1 and count >= 1: {spec:?}"
        )));
    }
    let classes = spec.kind.num_classes();
    let mut images = Vec::with_capacity(spec.count);
    let mut labels = Vec::with_capacity(spec.count);
    for i in 0..spec.count {
        let class = i % classes;
        let mut rng = rng::stream(spec.seed, &[tag::SYNTH, spec.kind as u64, i as u64]);
        let img = match spec.kind {
            SynthKind::Shapes => render_shape(|p| shape_sdf(class, p), spec.size, spec.channels, &mut rng),
            SynthKind::OodShapes => render_shape(|p| ood_sdf(class, p), spec.size, spec.channels, &mut rng),
            SynthKind::Textures => render_texture(spec.size, spec.channels, &mut rng),
            SynthKind::Polygons => {
                let sdf = random_polygon(&mut rng);
                render_shape(sdf, spec.size, spec.channels, &mut rng)
            }
            SynthKind::Composites => {
                let sdf = random_composite(&mut rng);
                render_shape(sdf, spec.size, spec.channels, &mut rng)
            }
        };
        images.push(img);
        labels.push(class as u16);
    }
    LabeledDataset::new(spec.kind.name(), images, labels, classes)
}

pub fn generate_unlabeled(spec: &SynthSpec) -> Result<UnlabeledDataset> {
    generate(spec)?.into_unlabeled()
}
