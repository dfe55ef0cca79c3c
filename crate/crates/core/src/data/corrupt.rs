//! Test-time corruption filters `κ(x, s)` with severity `s ∈ 1..=5`.
//!
//! Severity tables are frozen here. Each row lists one strength parameter per
//! severity and every row is strictly increasing:
//!
//! | filter          | parameter                      |
//! |-----------------|--------------------------------|
//! | gaussian_noise  | noise standard deviation       |
//! | impulse_noise   | fraction of salt/pepper pixels |
//! | gaussian_blur   | kernel sigma in pixels         |
//! | contrast        | 1 - contrast scale factor      |
//! | brightness      | additive intensity shift       |
//! | pixelate        | 1 - downsampling factor        |

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::LabeledDataset;
use crate::error::{Error, Result};
use crate::image::Image;
use crate::rng::{self, tag};

pub const MAX_SEVERITY: u8 = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorruptionFilter {
    GaussianNoise,
    ImpulseNoise,
    GaussianBlur,
    Contrast,
    Brightness,
    Pixelate,
    /// Reserved pass-through filter for tests; never part of [`CorruptionFilter::ALL`].
    Identity,
}

pub const SEVERITY_TABLES: [(CorruptionFilter, [f64; 5]); 6] = [
    (CorruptionFilter::GaussianNoise, [0.08, 0.12, 0.18, 0.26, 0.38]),
    (CorruptionFilter::ImpulseNoise, [0.03, 0.06, 0.09, 0.17, 0.27]),
    (CorruptionFilter::GaussianBlur, [0.5, 0.75, 1.0, 1.5, 2.0]),
    (CorruptionFilter::Contrast, [0.4, 0.55, 0.7, 0.8, 0.9]),
    (CorruptionFilter::Brightness, [0.1, 0.2, 0.3, 0.4, 0.5]),
    (CorruptionFilter::Pixelate, [0.2, 0.3, 0.4, 0.5, 0.6]),
];

impl CorruptionFilter {
    pub const ALL: [CorruptionFilter; 6] = [
        CorruptionFilter::GaussianNoise,
        CorruptionFilter::ImpulseNoise,
        CorruptionFilter::GaussianBlur,
        CorruptionFilter::Contrast,
        CorruptionFilter::Brightness,
        CorruptionFilter::Pixelate,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CorruptionFilter::GaussianNoise => "gaussian_noise",
            CorruptionFilter::ImpulseNoise => "impulse_noise",
            CorruptionFilter::GaussianBlur => "gaussian_blur",
            CorruptionFilter::Contrast => "contrast",
            CorruptionFilter::Brightness => "brightness",
            CorruptionFilter::Pixelate => "pixelate",
            CorruptionFilter::Identity => "identity",
        }
    }

    fn id(self) -> u64 {
        self as u64
    }
}

impl fmt::Display for CorruptionFilter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CorruptionFilter {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        CorruptionFilter::ALL
            .into_iter()
            .chain([CorruptionFilter::Identity])
            .find(|f| f.name() == s)
            .ok_or_else(|| Error::UnknownFilter(s.to_string()))
    }
}

/// Strength parameter of `filter` at severity `s`.
pub fn severity_parameter(filter: CorruptionFilter, severity: u8) -> Result<f64> {
    if !(1..=MAX_SEVERITY).contains(&severity) {
        return Err(Error::InvalidArgument(format!(
            "severity {severity} outside 1..={MAX_SEVERITY}"
        )));
    }
    if filter == CorruptionFilter::Identity {
        return Ok(0.0);
    }
    SEVERITY_TABLES
        .iter()
        .find(|(f, _)| *f == filter)
        .map(|(_, row)| row[severity as usize - 1])
        .ok_or_else(|| Error::UnknownFilter(filter.name().into()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CorruptionSpec {
    filter: CorruptionFilter,
    severity: u8,
}

impl CorruptionSpec {
    pub fn new(filter: CorruptionFilter, severity: u8) -> Result<Self> {
        severity_parameter(filter, severity)?;
        Ok(CorruptionSpec { filter, severity })
    }

    pub fn parse(filter: &str, severity: u8) -> Result<Self> {
        CorruptionSpec::new(filter.parse()?, severity)
    }

    pub fn identity() -> Self {
        CorruptionSpec {
            filter: CorruptionFilter::Identity,
            severity: 1,
        }
    }

    pub fn filter(&self) -> CorruptionFilter {
        self.filter
    }

    pub fn severity(&self) -> u8 {
        self.severity
    }

    /// Directory name used by the on-disk suite cache.
    pub fn dir_name(&self) -> String {
        format!("{}_{}", self.filter, self.severity)
    }
}

/// Applies `spec` to `image`. Stochastic filters draw from a stream keyed by `seed`.
pub fn corrupt(image: &Image, spec: &CorruptionSpec, seed: u64) -> Result<Image> {
    let p = severity_parameter(spec.filter, spec.severity)?;
    let mut rng = rng::stream(seed, &[tag::CORRUPT, spec.filter.id(), spec.severity as u64]);
    let out = match spec.filter {
        CorruptionFilter::Identity => image.clone(),
        CorruptionFilter::GaussianNoise => {
            let normal = Normal::new(0.0f64, p).expect("positive sigma");
            let mut out = image.clone();
            for v in out.pixels_mut() {
                *v = (*v as f64 + normal.sample(&mut rng)) as f32;
            }
            out
        }
        CorruptionFilter::ImpulseNoise => {
            let mut out = image.clone();
            for v in out.pixels_mut() {
                if rng.random_bool(p) {
                    *v = if rng.random_bool(0.5) { 1.0 } else { 0.0 };
                }
            }
            out
        }
        CorruptionFilter::GaussianBlur => gaussian_blur(image, p),
        CorruptionFilter::Contrast => {
            let mean = image.mean();
            let scale = 1.0 - p;
            image.map_pixels(|v| ((v as f64 - mean) * scale + mean) as f32)
        }
        CorruptionFilter::Brightness => image.map_pixels(|v| (v as f64 + p) as f32),
        CorruptionFilter::Pixelate => pixelate(image, 1.0 - p),
    };
    Ok(out.clamp_unit())
}

/// Mirror index into `[0, n)` without repeating the edge sample.
pub(crate) fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let mut m = i.rem_euclid(period);
    if m >= n {
        m = period - m;
    }
    m as usize
}

fn gaussian_blur(image: &Image, sigma: f64) -> Image {
    let radius = (3.0 * sigma).ceil() as isize;
    let mut kernel: Vec<f64> = (-radius..=radius)
        .map(|d| (-((d * d) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|k| *k /= total);

    let (h, w) = (image.height(), image.width());
    let horizontal = image.map_coords(|y, x, c| {
        kernel
            .iter()
            .zip(-radius..=radius)
            .map(|(k, d)| k * image.get(y, reflect(x as isize + d, w), c) as f64)
            .sum::<f64>() as f32
    });
    horizontal.map_coords(|y, x, c| {
        kernel
            .iter()
            .zip(-radius..=radius)
            .map(|(k, d)| k * horizontal.get(reflect(y as isize + d, h), x, c) as f64)
            .sum::<f64>() as f32
    })
}

/// Box-downsample to `factor` of the resolution, then nearest-upsample back.
fn pixelate(image: &Image, factor: f64) -> Image {
    let (h, w, ch) = (image.height(), image.width(), image.channels());
    let dh = ((h as f64 * factor).round() as usize).clamp(1, h);
    let dw = ((w as f64 * factor).round() as usize).clamp(1, w);
    let mut sums = vec![0.0f64; dh * dw * ch];
    let mut counts = vec![0usize; dh * dw];
    for y in 0..h {
        let by = y * dh / h;
        for x in 0..w {
            let bx = x * dw / w;
            counts[by * dw + bx] += 1;
            for c in 0..ch {
                sums[(by * dw + bx) * ch + c] += image.get(y, x, c) as f64;
            }
        }
    }
    image.map_coords(|y, x, c| {
        let b = (y * dh / h) * dw + x * dw / w;
        (sums[b * ch + c] / counts[b] as f64) as f32
    })
}

/// Clean test data plus one corrupted copy per `(filter, severity)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CorruptedTestSuite {
    pub base: LabeledDataset,
    pub entries: Vec<(CorruptionSpec, LabeledDataset)>,
}

impl CorruptedTestSuite {
    pub fn new(base: LabeledDataset, entries: Vec<(CorruptionSpec, LabeledDataset)>) -> Result<Self> {
        for (spec, ds) in &entries {
            if ds.labels() != base.labels() {
                return Err(Error::InvalidArgument(format!(
                    "suite entry {} does not carry the base labels",
                    spec.dir_name()
                )));
            }
        }
        Ok(CorruptedTestSuite { base, entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

pub(crate) fn item_seed(seed: u64, spec: &CorruptionSpec, index: usize) -> u64 {
    rng::derive_seed(seed, &[spec.filter.id(), spec.severity as u64, index as u64])
}

pub fn corrupt_dataset(test: &LabeledDataset, spec: &CorruptionSpec, seed: u64) -> Result<LabeledDataset> {
    let images = test
        .images()
        .iter()
        .enumerate()
        .map(|(i, img)| corrupt(img, spec, item_seed(seed, spec, i)))
        .collect::<Result<Vec<_>>>()?;
    test.with_images(format!("{}/{}", test.name(), spec.dir_name()), images)
}

pub fn build_corruption_suite(
    test: &LabeledDataset,
    specs: &[CorruptionSpec],
    seed: u64,
) -> Result<CorruptedTestSuite> {
    if specs.is_empty() {
        return Err(Error::InvalidArgument("corruption suite needs at least one spec".into()));
    }
    let entries = specs
        .iter()
        .map(|spec| Ok((*spec, corrupt_dataset(test, spec, seed)?)))
        .collect::<Result<Vec<_>>>()?;
    CorruptedTestSuite::new(test.clone(), entries)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::Shape;
    use proptest::prelude::*;
    use sha2::{Digest, Sha256};

    fn gradient_image(h: usize, w: usize, c: usize) -> Image {
        Image::from_vec(
            Shape::new(h, w, c),
            (0..h * w * c).map(|i| (i % 17) as f32 / 16.0).collect(),
        )
        .unwrap()
    }

    #[test]
    fn severity_tables_strictly_increase() {
        for filter in CorruptionFilter::ALL {
            for s in 1..MAX_SEVERITY {
                assert!(
                    severity_parameter(filter, s).unwrap() < severity_parameter(filter, s + 1).unwrap(),
                    "{filter} at {s}"
                );
            }
        }
    }

    #[test]
    fn severity_zero_and_six_rejected() {
        assert!(CorruptionSpec::new(CorruptionFilter::Contrast, 0).is_err());
        assert!(CorruptionSpec::new(CorruptionFilter::Contrast, 6).is_err());
    }

    #[test]
    fn unknown_filter_name() {
        assert!(matches!(
            CorruptionSpec::parse("fog", 2),
            Err(Error::UnknownFilter(name)) if name == "fog"
        ));
        assert_eq!(
            "pixelate".parse::<CorruptionFilter>().unwrap(),
            CorruptionFilter::Pixelate
        );
    }

    #[test]
    fn gaussian_noise_mean_abs_delta_matches_half_normal() {
        // On a mid-grey image clipping is negligible, so |delta| ~ half-normal
        // with mean sigma*sqrt(2/pi) and variance sigma^2 (1 - 2/pi).
        let img = Image::filled(Shape::new(64, 64, 3), 0.5);
        let spec = CorruptionSpec::new(CorruptionFilter::GaussianNoise, 3).unwrap();
        let sigma = severity_parameter(CorruptionFilter::GaussianNoise, 3).unwrap();
        let out = corrupt(&img, &spec, 42).unwrap();
        let n = img.pixels().len() as f64;
        let mean_abs = out
            .pixels()
            .iter()
            .map(|&v| (v as f64 - 0.5).abs())
            .sum::<f64>()
            / n;
        let expected = sigma * (2.0 / std::f64::consts::PI).sqrt();
        let se = sigma * (1.0 - 2.0 / std::f64::consts::PI).sqrt() / n.sqrt();
        assert!(
            (mean_abs - expected).abs() < 3.0 * se,
            "{mean_abs} vs {expected} ± {}",
            3.0 * se
        );
    }

    #[test]
    fn contrast_fixes_constant_images() {
        let img = Image::filled(Shape::new(8, 8, 3), 0.3);
        for s in 1..=5 {
            let spec = CorruptionSpec::new(CorruptionFilter::Contrast, s).unwrap();
            let out = corrupt(&img, &spec, 0).unwrap();
            for &v in out.pixels() {
                assert!((v - 0.3).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn blur_and_pixelate_preserve_constants() {
        let img = Image::filled(Shape::new(9, 7, 2), 0.6);
        for filter in [CorruptionFilter::GaussianBlur, CorruptionFilter::Pixelate] {
            let out = corrupt(&img, &CorruptionSpec::new(filter, 5).unwrap(), 0).unwrap();
            assert!(out.pixels().iter().all(|&v| (v - 0.6).abs() < 1e-5), "{filter}");
        }
    }

    #[test]
    fn identity_is_exact() {
        let img = gradient_image(5, 5, 3);
        assert_eq!(corrupt(&img, &CorruptionSpec::identity(), 3).unwrap(), img);
    }

    #[test]
    fn stochastic_filters_deterministic_per_seed() {
        let img = gradient_image(8, 8, 1);
        for filter in [CorruptionFilter::GaussianNoise, CorruptionFilter::ImpulseNoise] {
            let spec = CorruptionSpec::new(filter, 4).unwrap();
            assert_eq!(corrupt(&img, &spec, 5).unwrap(), corrupt(&img, &spec, 5).unwrap());
            assert_ne!(corrupt(&img, &spec, 5).unwrap(), corrupt(&img, &spec, 6).unwrap());
        }
    }

    #[test]
    fn reflect_indices() {
        assert_eq!(reflect(-1, 5), 1);
        assert_eq!(reflect(5, 5), 3);
        assert_eq!(reflect(-9, 5), 1);
        assert_eq!(reflect(3, 1), 0);
    }

    fn small_test_set(n: usize) -> LabeledDataset {
        let images = (0..n)
            .map(|i| {
                Image::from_vec(
                    Shape::new(6, 6, 1),
                    (0..36).map(|p| ((p * 7 + i * 3) % 11) as f32 / 10.0).collect(),
                )
                .unwrap()
            })
            .collect();
        LabeledDataset::new("t", images, (0..n).map(|i| (i % 4) as u16).collect(), 4).unwrap()
    }

    fn suite_digest(suite: &CorruptedTestSuite) -> String {
        let mut h = Sha256::new();
        for (spec, ds) in &suite.entries {
            h.update(spec.dir_name().as_bytes());
            for img in ds.images() {
                for v in img.pixels() {
                    h.update(v.to_le_bytes());
                }
            }
        }
        hex::encode(h.finalize())
    }

    #[test]
    fn suite_counts_labels_and_replay() {
        let test = small_test_set(50);
        let specs = [
            CorruptionSpec::new(CorruptionFilter::GaussianNoise, 2).unwrap(),
            CorruptionSpec::new(CorruptionFilter::Pixelate, 4).unwrap(),
        ];
        let suite = build_corruption_suite(&test, &specs, 8).unwrap();
        assert_eq!(suite.len(), 2);
        for (_, ds) in &suite.entries {
            assert_eq!(ds.len(), 50);
            assert_eq!(ds.labels(), test.labels());
        }
        let again = build_corruption_suite(&test, &specs, 8).unwrap();
        assert_eq!(suite_digest(&suite), suite_digest(&again));
        assert!(build_corruption_suite(&test, &[], 8).is_err());
    }

    proptest! {
        #[test]
        fn outputs_stay_in_unit_range(
            pixels in proptest::collection::vec(0.0f32..=1.0, 48),
            filter_idx in 0usize..6,
            severity in 1u8..=5,
            seed in any::<u64>(),
        ) {
            let img = Image::from_vec(Shape::new(4, 4, 3), pixels).unwrap();
            let spec = CorruptionSpec::new(CorruptionFilter::ALL[filter_idx], severity).unwrap();
            let out = corrupt(&img, &spec, seed).unwrap();
            prop_assert_eq!(out.shape(), img.shape());
            prop_assert!(out.in_unit_range());
        }
    }
}
