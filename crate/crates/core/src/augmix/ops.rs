//! Individual AugMix operations over `[0, 1]` images.
//!
//! Magnitudes follow the usual AugMix convention: a level is drawn uniformly
//! from `[0.1, severity]` (severity on a 0–10 scale) and mapped onto each
//! op's range. Geometric ops resample with nearest neighbour and reflect
//! padding, rotating/shearing about the image centre.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::CorruptionFilter;
use crate::error::{Error, Result};
use crate::image::Image;

const MAX_LEVEL: f64 = 10.0;
const MAX_ROTATE_DEG: f64 = 30.0;
const MAX_SHEAR: f64 = 0.3;
/// Translation limit as a fraction of the image side.
const MAX_TRANSLATE: f64 = 1.0 / 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AugOp {
    Identity,
    Autocontrast,
    Equalize,
    Posterize,
    Solarize,
    Rotate,
    ShearX,
    ShearY,
    TranslateX,
    TranslateY,
}

impl AugOp {
    /// The default registry: every op except `identity`.
    pub const STANDARD: [AugOp; 9] = [
        AugOp::Autocontrast,
        AugOp::Equalize,
        AugOp::Posterize,
        AugOp::Solarize,
        AugOp::Rotate,
        AugOp::ShearX,
        AugOp::ShearY,
        AugOp::TranslateX,
        AugOp::TranslateY,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AugOp::Identity => "identity",
            AugOp::Autocontrast => "autocontrast",
            AugOp::Equalize => "equalize",
            AugOp::Posterize => "posterize",
            AugOp::Solarize => "solarize",
            AugOp::Rotate => "rotate",
            AugOp::ShearX => "shear_x",
            AugOp::ShearY => "shear_y",
            AugOp::TranslateX => "translate_x",
            AugOp::TranslateY => "translate_y",
        }
    }

    /// Draws a concrete magnitude for this op at the given severity.
    pub fn sample<R: Rng + ?Sized>(self, severity: f64, rng: &mut R) -> AppliedOp {
        let level = rng.random_range(0.1..=severity.max(0.1)) / MAX_LEVEL;
        let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        let magnitude = match self {
            AugOp::Identity | AugOp::Autocontrast | AugOp::Equalize => 0.0,
            AugOp::Posterize => (4 - (level * 4.0) as i32).max(1) as f64,
            AugOp::Solarize => 1.0 - level,
            AugOp::Rotate => sign * level * MAX_ROTATE_DEG,
            AugOp::ShearX | AugOp::ShearY => sign * level * MAX_SHEAR,
            AugOp::TranslateX | AugOp::TranslateY => sign * level * MAX_TRANSLATE,
        };
        AppliedOp { op: self, magnitude }
    }
}

impl fmt::Display for AugOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AugOp {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AugOp::STANDARD
            .into_iter()
            .chain([AugOp::Identity])
            .find(|op| op.name() == s)
            .ok_or_else(|| Error::UnknownAugOp(s.to_string()))
    }
}

/// Fails if any registered op shares its name with a corruption filter.
pub fn check_disjoint(ops: &[AugOp], filters: &[CorruptionFilter]) -> Result<()> {
    for op in ops {
        if let Some(f) = filters.iter().find(|f| f.name() == op.name()) {
            return Err(Error::Config(format!(
                "augmentation op `{op}` duplicates test-time corruption `{f}`"
            )));
        }
    }
    Ok(())
}

/// An op with its magnitude fixed: a deterministic image transform.
///
/// `magnitude` is degrees for `rotate`, a shear coefficient for `shear_*`,
/// a fraction of the side for `translate_*`, the kept bit count for
/// `posterize` and the threshold for `solarize`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AppliedOp {
    pub op: AugOp,
    pub magnitude: f64,
}

impl AppliedOp {
    pub fn apply(&self, img: &Image) -> Image {
        let m = self.magnitude;
        match self.op {
            AugOp::Identity => img.clone(),
            AugOp::Autocontrast => autocontrast(img),
            AugOp::Equalize => equalize(img),
            AugOp::Posterize => posterize(img, m as u32),
            AugOp::Solarize => img.map_pixels(|v| if v as f64 >= m { 1.0 - v } else { v }),
            AugOp::Rotate => {
                let (s, c) = m.to_radians().sin_cos();
                // inverse rotation maps output coordinates back to the source
                affine(img, [c, s, -s, c])
            }
            AugOp::ShearX => affine(img, [1.0, m, 0.0, 1.0]),
            AugOp::ShearY => affine(img, [1.0, 0.0, m, 1.0]),
            AugOp::TranslateX => translate(img, m * img.width() as f64, 0.0),
            AugOp::TranslateY => translate(img, 0.0, m * img.height() as f64),
        }
    }
}

fn quantize(v: f32) -> usize {
    (v.clamp(0.0, 1.0) * 255.0).round() as usize
}

fn autocontrast(img: &Image) -> Image {
    let ch = img.channels();
    let mut lo = vec![f32::INFINITY; ch];
    let mut hi = vec![f32::NEG_INFINITY; ch];
    for (i, &v) in img.pixels().iter().enumerate() {
        lo[i % ch] = lo[i % ch].min(v);
        hi[i % ch] = hi[i % ch].max(v);
    }
    let mut out = img.clone();
    for (i, v) in out.pixels_mut().iter_mut().enumerate() {
        let c = i % ch;
        if hi[c] > lo[c] {
            *v = ((*v - lo[c]) / (hi[c] - lo[c])).clamp(0.0, 1.0);
        }
    }
    out
}

/// Histogram equalization per channel on 256 bins (PIL's lookup-table rule).
fn equalize(img: &Image) -> Image {
    let ch = img.channels();
    let mut luts = Vec::with_capacity(ch);
    for c in 0..ch {
        let mut hist = [0usize; 256];
        for v in img.pixels().iter().skip(c).step_by(ch) {
            hist[quantize(*v)] += 1;
        }
        let last = hist.iter().rposition(|&n| n > 0).unwrap_or(0);
        let total: usize = hist.iter().sum();
        let step = (total - hist[last]) / 255;
        if hist.iter().filter(|&&n| n > 0).count() <= 1 || step == 0 {
            luts.push(None);
            continue;
        }
        let mut lut = [0f32; 256];
        let mut n = step / 2;
        for (entry, &count) in lut.iter_mut().zip(&hist) {
            *entry = (n / step).min(255) as f32 / 255.0;
            n += count;
        }
        luts.push(Some(lut));
    }
    let mut out = img.clone();
    for (i, v) in out.pixels_mut().iter_mut().enumerate() {
        if let Some(lut) = &luts[i % ch] {
            *v = lut[quantize(*v)];
        }
    }
    out
}

fn posterize(img: &Image, bits: u32) -> Image {
    let mask = (0xffu32 << (8 - bits.clamp(1, 8))) & 0xff;
    img.map_pixels(|v| (quantize(v) as u32 & mask) as f32 / 255.0)
}

fn sample_reflect(img: &Image, sy: f64, sx: f64, c: usize) -> f32 {
    let y = crate::data::reflect_index(sy.round() as isize, img.height());
    let x = crate::data::reflect_index(sx.round() as isize, img.width());
    img.get(y, x, c)
}

/// Output pixel `p` reads source `centre + M (p − centre)`, `M` row-major 2×2
/// acting on `(x, y)`.
fn affine(img: &Image, m: [f64; 4]) -> Image {
    let cy = (img.height() as f64 - 1.0) / 2.0;
    let cx = (img.width() as f64 - 1.0) / 2.0;
    img.map_coords(|y, x, c| {
        let dx = x as f64 - cx;
        let dy = y as f64 - cy;
        let sx = cx + m[0] * dx + m[1] * dy;
        let sy = cy + m[2] * dx + m[3] * dy;
        sample_reflect(img, sy, sx, c)
    })
}

fn translate(img: &Image, tx: f64, ty: f64) -> Image {
    img.map_coords(|y, x, c| sample_reflect(img, y as f64 - ty, x as f64 - tx, c))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::Shape;
    use crate::rng;
    use proptest::prelude::*;

    fn ramp() -> Image {
        Image::from_vec(
            Shape::new(6, 6, 2),
            (0..72).map(|i| 0.2 + 0.5 * (i % 13) as f32 / 12.0).collect(),
        )
        .unwrap()
    }

    #[test]
    fn names_round_trip() {
        for op in AugOp::STANDARD {
            assert_eq!(op.name().parse::<AugOp>().unwrap(), op);
        }
        assert!("contrast".parse::<AugOp>().is_err());
    }

    #[test]
    fn standard_registry_is_disjoint_from_corruptions() {
        check_disjoint(&AugOp::STANDARD, &CorruptionFilter::ALL).unwrap();
    }

    #[test]
    fn autocontrast_stretches_range() {
        let out = AppliedOp {
            op: AugOp::Autocontrast,
            magnitude: 0.0,
        }
        .apply(&ramp());
        let max = out.pixels().iter().cloned().fold(0.0f32, f32::max);
        let min = out.pixels().iter().cloned().fold(1.0f32, f32::min);
        assert!((max - 1.0).abs() < 1e-6 && min.abs() < 1e-6);
    }

    #[test]
    fn zero_translation_and_rotation_are_identity() {
        let img = ramp();
        for op in [AugOp::Rotate, AugOp::ShearX, AugOp::TranslateY] {
            assert_eq!(AppliedOp { op, magnitude: 0.0 }.apply(&img), img, "{op}");
        }
    }

    #[test]
    fn posterize_keeps_top_bits() {
        let img = Image::filled(Shape::new(1, 1, 1), 200.0 / 255.0);
        let out = AppliedOp {
            op: AugOp::Posterize,
            magnitude: 3.0,
        }
        .apply(&img);
        assert_eq!(out.pixels()[0], 192.0 / 255.0);
    }

    #[test]
    fn equalize_constant_image_unchanged() {
        let img = Image::filled(Shape::new(4, 4, 1), 0.4);
        assert_eq!(
            AppliedOp {
                op: AugOp::Equalize,
                magnitude: 0.0
            }
            .apply(&img),
            img
        );
    }

    proptest! {
        #[test]
        fn ops_preserve_shape_and_range(
            pixels in proptest::collection::vec(0.0f32..=1.0, 75),
            op_idx in 0usize..9,
            seed in any::<u64>(),
        ) {
            let img = Image::from_vec(Shape::new(5, 5, 3), pixels).unwrap();
            let applied = AugOp::STANDARD[op_idx].sample(10.0, &mut rng::stream(seed, &[]));
            let out = applied.apply(&img);
            prop_assert_eq!(out.shape(), img.shape());
            prop_assert!(out.in_unit_range());
        }
    }
}
