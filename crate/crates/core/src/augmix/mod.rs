//! AugMix: stochastic mixtures of augmentation chains.
//!
//! `x_aug = η·x + (1 − η) Σ_i m_i · chain_i(x)` with `m ~ Dirichlet(a, …, a)`,
//! `η ~ Beta(a, a)` and each chain one of `op1`, `op2∘op1`, `op3∘op2∘op1`
//! chosen uniformly. Ops are drawn from the registry with replacement.

mod ops;

pub use ops::{check_disjoint, AppliedOp, AugOp};

use rand::Rng;
use rand_distr::{Beta, Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugMixConfig {
    /// Number of mixed chains `S`.
    pub width: usize,
    pub max_depth: usize,
    /// Dirichlet / Beta concentration.
    pub concentration: f64,
    /// Op magnitude level on the 0–10 AugMix scale.
    pub severity: f64,
    pub ops: Vec<AugOp>,
}

impl Default for AugMixConfig {
    fn default() -> Self {
        AugMixConfig {
            width: 3,
            max_depth: 3,
            concentration: 1.0,
            severity: 3.0,
            ops: AugOp::STANDARD.to_vec(),
        }
    }
}

impl AugMixConfig {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 {
            return Err(Error::Config("augmix width must be at least 1".into()));
        }
        if !(1..=3).contains(&self.max_depth) {
            return Err(Error::Config("augmix max_depth must be 1, 2 or 3".into()));
        }
        if !(self.concentration > 0.0 && self.concentration.is_finite()) {
            return Err(Error::Config("augmix concentration must be positive".into()));
        }
        if !(self.severity > 0.0 && self.severity <= 10.0) {
            return Err(Error::Config("augmix severity must lie in (0, 10]".into()));
        }
        if self.ops.is_empty() {
            return Err(Error::Config("augmix op registry is empty".into()));
        }
        Ok(())
    }

    /// Registry of identity ops only; every chain is then a no-op.
    pub fn identity_only() -> Self {
        AugMixConfig {
            ops: vec![AugOp::Identity],
            ..AugMixConfig::default()
        }
    }
}

/// A composed transform; ops are applied in order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Chain {
    pub ops: Vec<AppliedOp>,
}

impl Chain {
    pub fn depth(&self) -> usize {
        self.ops.len()
    }

    pub fn apply(&self, img: &Image) -> Image {
        self.ops.iter().fold(img.clone(), |acc, op| op.apply(&acc))
    }
}

pub fn sample_chain<R: Rng + ?Sized>(cfg: &AugMixConfig, rng: &mut R) -> Result<Chain> {
    if cfg.ops.is_empty() {
        return Err(Error::Config("augmix op registry is empty".into()));
    }
    let mut drawn: Vec<AppliedOp> = (0..cfg.max_depth)
        .map(|_| {
            let op = cfg.ops[rng.random_range(0..cfg.ops.len())];
            op.sample(cfg.severity, rng)
        })
        .collect();
    let depth = rng.random_range(1..=cfg.max_depth);
    drawn.truncate(depth);
    Ok(Chain { ops: drawn })
}

/// `Dirichlet(a, …, a)` via normalized Gamma draws.
pub fn sample_dirichlet<R: Rng + ?Sized>(k: usize, concentration: f64, rng: &mut R) -> Result<Vec<f64>> {
    let gamma = Gamma::new(concentration, 1.0)
        .map_err(|e| Error::InvalidArgument(format!("dirichlet concentration: {e}")))?;
    loop {
        let draws: Vec<f64> = (0..k).map(|_| gamma.sample(rng)).collect();
        let total: f64 = draws.iter().sum();
        if total > 0.0 && total.is_finite() {
            return Ok(draws.into_iter().map(|g| g / total).collect());
        }
    }
}

/// Mixing weights for one AugMix draw.
#[derive(Debug, Clone, PartialEq)]
pub struct MixWeights {
    pub eta: f64,
    pub chain: Vec<f64>,
}

pub fn sample_weights<R: Rng + ?Sized>(cfg: &AugMixConfig, rng: &mut R) -> Result<MixWeights> {
    let chain = sample_dirichlet(cfg.width, cfg.concentration, rng)?;
    let beta = Beta::new(cfg.concentration, cfg.concentration)
        .map_err(|e| Error::InvalidArgument(format!("beta concentration: {e}")))?;
    Ok(MixWeights {
        eta: beta.sample(rng),
        chain,
    })
}

/// `η·x + (1 − η) Σ m_i y_i`, clipped to `[0, 1]`.
pub fn mix(x: &Image, outputs: &[Image], weights: &MixWeights) -> Result<Image> {
    if outputs.len() != weights.chain.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} chain outputs for {} weights",
            outputs.len(),
            weights.chain.len()
        )));
    }
    let mut acc = vec![0.0f64; x.pixels().len()];
    for (y, &m) in outputs.iter().zip(&weights.chain) {
        if y.shape() != x.shape() {
            return Err(Error::ShapeMismatch("chain output shape".into()));
        }
        for (a, &v) in acc.iter_mut().zip(y.pixels()) {
            *a += m * v as f64;
        }
    }
    let eta = weights.eta;
    let px = x
        .pixels()
        .iter()
        .zip(&acc)
        .map(|(&v, &a)| ((eta * v as f64 + (1.0 - eta) * a) as f32).clamp(0.0, 1.0))
        .collect();
    Image::from_vec(x.shape(), px)
}

pub fn augmix<R: Rng + ?Sized>(x: &Image, cfg: &AugMixConfig, rng: &mut R) -> Result<Image> {
    let weights = sample_weights(cfg, rng)?;
    let outputs = (0..cfg.width)
        .map(|_| Ok(sample_chain(cfg, rng)?.apply(x)))
        .collect::<Result<Vec<_>>>()?;
    mix(x, &outputs, &weights)
}

/// Two independent AugMix draws from the same stream.
pub fn augmix_pair<R: Rng + ?Sized>(x: &Image, cfg: &AugMixConfig, rng: &mut R) -> Result<(Image, Image)> {
    let a = augmix(x, cfg, rng)?;
    let b = augmix(x, cfg, rng)?;
    Ok((a, b))
}

/// Clean images with two augmented views each. View `i` comes from the
/// stream keyed by `(seed, keys[i])`, so a sample's views do not depend on
/// its position in the batch.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedBatch {
    pub clean: Vec<Image>,
    pub aug1: Vec<Image>,
    pub aug2: Vec<Image>,
}

impl AugmentedBatch {
    pub fn build(images: Vec<Image>, keys: &[u64], cfg: &AugMixConfig, seed: u64) -> Result<Self> {
        if keys.len() != images.len() {
            return Err(Error::ShapeMismatch("one augmentation key per image".into()));
        }
        let mut aug1 = Vec::with_capacity(images.len());
        let mut aug2 = Vec::with_capacity(images.len());
        for (img, &key) in images.iter().zip(keys) {
            let (a, b) = augmix_pair(img, cfg, &mut rng::stream(seed, &[key]))?;
            aug1.push(a);
            aug2.push(b);
        }
        Ok(AugmentedBatch {
            clean: images,
            aug1,
            aug2,
        })
    }

    /// Clean images only, for objectives that never look at augmented views.
    pub fn clean_only(images: Vec<Image>) -> Self {
        AugmentedBatch {
            clean: images,
            aug1: Vec::new(),
            aug2: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.clean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clean.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::Shape;
    use crate::rng::stream;

    fn sample_image() -> Image {
        Image::from_vec(
            Shape::new(8, 8, 1),
            (0..64).map(|i| ((i * 37) % 64) as f32 / 63.0).collect(),
        )
        .unwrap()
    }

    #[test]
    fn identity_registry_chain_is_identity() {
        let cfg = AugMixConfig::identity_only();
        let img = sample_image();
        let mut rng = stream(1, &[]);
        for _ in 0..20 {
            assert_eq!(sample_chain(&cfg, &mut rng).unwrap().apply(&img), img);
        }
    }

    #[test]
    fn depth_histogram_is_uniform() {
        let cfg = AugMixConfig::default();
        let mut rng = stream(2, &[]);
        let n = 10_000usize;
        let mut counts = [0usize; 3];
        for _ in 0..n {
            counts[sample_chain(&cfg, &mut rng).unwrap().depth() - 1] += 1;
        }
        let p = 1.0 / 3.0;
        let sd = (n as f64 * p * (1.0 - p)).sqrt();
        for c in counts {
            assert!((c as f64 - n as f64 * p).abs() < 3.0 * sd, "{counts:?}");
        }
    }

    #[test]
    fn chain_replay_is_deterministic() {
        let cfg = AugMixConfig::default();
        let a = sample_chain(&cfg, &mut stream(5, &[1])).unwrap();
        let b = sample_chain(&cfg, &mut stream(5, &[1])).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.apply(&sample_image()), b.apply(&sample_image()));
    }

    #[test]
    fn empty_registry_rejected() {
        let cfg = AugMixConfig {
            ops: vec![],
            ..AugMixConfig::default()
        };
        assert!(sample_chain(&cfg, &mut stream(0, &[])).is_err());
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn eta_one_returns_original() {
        let x = sample_image();
        let cfg = AugMixConfig::default();
        let mut rng = stream(3, &[]);
        let outputs: Vec<Image> = (0..3)
            .map(|_| sample_chain(&cfg, &mut rng).unwrap().apply(&x))
            .collect();
        let w = MixWeights {
            eta: 1.0,
            chain: vec![0.2, 0.3, 0.5],
        };
        assert_eq!(mix(&x, &outputs, &w).unwrap(), x);
    }

    #[test]
    fn identity_registry_augmix_is_identity() {
        let x = sample_image();
        let cfg = AugMixConfig::identity_only();
        let mut rng = stream(4, &[]);
        for _ in 0..50 {
            assert_eq!(augmix(&x, &cfg, &mut rng).unwrap(), x);
        }
    }

    #[test]
    fn sampled_weights_are_convex() {
        let cfg = AugMixConfig::default();
        let mut rng = stream(6, &[]);
        for _ in 0..10_000 {
            let w = sample_weights(&cfg, &mut rng).unwrap();
            assert!((0.0..=1.0).contains(&w.eta));
            assert!((w.chain.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert!(w.chain.iter().all(|&m| m >= 0.0));
        }
    }

    #[test]
    fn single_chain_width() {
        let cfg = AugMixConfig {
            width: 1,
            ..AugMixConfig::default()
        };
        let w = sample_weights(&cfg, &mut stream(0, &[])).unwrap();
        assert_eq!(w.chain, vec![1.0]);
    }

    #[test]
    fn pair_views_differ_and_replay() {
        let x = sample_image();
        let cfg = AugMixConfig::default();
        let differing = (0..100)
            .filter(|&t| {
                let (a, b) = augmix_pair(&x, &cfg, &mut stream(7, &[t])).unwrap();
                assert!(a.in_unit_range() && b.in_unit_range());
                a != b
            })
            .count();
        assert!(differing >= 95, "{differing}");
        let first = augmix_pair(&x, &cfg, &mut stream(8, &[])).unwrap();
        let again = augmix_pair(&x, &cfg, &mut stream(8, &[])).unwrap();
        assert_eq!(first, again);
    }

    #[test]
    fn batch_views_keyed_by_sample() {
        let cfg = AugMixConfig::default();
        let imgs = vec![sample_image(), sample_image().map_pixels(|v| 1.0 - v)];
        let ab = AugmentedBatch::build(imgs.clone(), &[10, 11], &cfg, 9).unwrap();
        let ba = AugmentedBatch::build(vec![imgs[1].clone(), imgs[0].clone()], &[11, 10], &cfg, 9).unwrap();
        assert_eq!(ab.aug1[0], ba.aug1[1]);
        assert_eq!(ab.aug2[1], ba.aug2[0]);
    }
}
