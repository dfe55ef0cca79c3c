//! Datasets, client partitioning, proxy splitting and the corruption suite.

mod corrupt;
pub mod io;
pub mod synth;

pub use corrupt::{
    build_corruption_suite, corrupt, severity_parameter, CorruptedTestSuite, CorruptionFilter,
    CorruptionSpec, MAX_SEVERITY, SEVERITY_TABLES,
};
pub(crate) use corrupt::reflect as reflect_index;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::image::{Image, Shape};
use crate::rng::{self, tag};

/// Private labeled data held by a client.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    name: String,
    images: Vec<Image>,
    labels: Vec<u16>,
    num_classes: usize,
}

impl LabeledDataset {
    pub fn new(
        name: impl Into<String>,
        images: Vec<Image>,
        labels: Vec<u16>,
        num_classes: usize,
    ) -> Result<Self> {
        let name = name.into();
        if images.len() != labels.len() {
            return Err(Error::ShapeMismatch(format!(
                "dataset `{name}`: {} images but {} labels",
                images.len(),
                labels.len()
            )));
        }
        if let Some(bad) = labels.iter().find(|&&l| l as usize >= num_classes) {
            return Err(Error::InvalidArgument(format!(
                "dataset `{name}`: label {bad} outside [0, {num_classes})"
            )));
        }
        check_images(&name, &images)?;
        Ok(LabeledDataset {
            name,
            images,
            labels,
            num_classes,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn images(&self) -> &[Image] {
        &self.images
    }

    pub fn labels(&self) -> &[u16] {
        &self.labels
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn shape(&self) -> Option<Shape> {
        self.images.first().map(Image::shape)
    }

    pub fn subset(&self, name: impl Into<String>, indices: &[usize]) -> LabeledDataset {
        LabeledDataset {
            name: name.into(),
            images: indices.iter().map(|&i| self.images[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
        }
    }

    /// Same labels, new images. Used by the corruption suite.
    pub fn with_images(&self, name: impl Into<String>, images: Vec<Image>) -> Result<Self> {
        LabeledDataset::new(name, images, self.labels.clone(), self.num_classes)
    }

    /// Drops the labels, e.g. to use a labeled set as server proxy data.
    pub fn into_unlabeled(self) -> Result<UnlabeledDataset> {
        UnlabeledDataset::new(self.name, self.images)
    }
}

/// Public unlabeled data available to the server.
#[derive(Debug, Clone, PartialEq)]
pub struct UnlabeledDataset {
    name: String,
    images: Vec<Image>,
}

impl UnlabeledDataset {
    pub fn new(name: impl Into<String>, images: Vec<Image>) -> Result<Self> {
        let name = name.into();
        if images.is_empty() {
            return Err(Error::EmptyDataset(name));
        }
        check_images(&name, &images)?;
        Ok(UnlabeledDataset { name, images })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn images(&self) -> &[Image] {
        &self.images
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn shape(&self) -> Shape {
        self.images[0].shape()
    }

    fn subset(&self, name: String, indices: &[usize]) -> Result<UnlabeledDataset> {
        UnlabeledDataset::new(name, indices.iter().map(|&i| self.images[i].clone()).collect())
    }
}

fn check_images(name: &str, images: &[Image]) -> Result<()> {
    if let Some(first) = images.first() {
        let shape = first.shape();
        for (i, img) in images.iter().enumerate() {
            if img.shape() != shape {
                return Err(Error::ShapeMismatch(format!(
                    "dataset `{name}`: image {i} is {} but image 0 is {shape}",
                    img.shape()
                )));
            }
            if !img.in_unit_range() {
                return Err(Error::InvalidArgument(format!(
                    "dataset `{name}`: image {i} has pixels outside [0, 1]"
                )));
            }
        }
    }
    Ok(())
}

fn shuffled_indices(n: usize, seed: u64, stream_tag: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng::stream(seed, &[stream_tag, n as u64]));
    idx
}

/// Splits `ds` into `k` disjoint IID shards whose sizes differ by at most one.
/// The first `len % k` shards receive the extra sample.
pub fn partition_clients(ds: &LabeledDataset, k: usize, seed: u64) -> Result<Vec<LabeledDataset>> {
    if k == 0 {
        return Err(Error::InvalidArgument("client count must be at least 1".into()));
    }
    if k > ds.len() {
        return Err(Error::TooManyClients {
            clients: k,
            samples: ds.len(),
        });
    }
    let order = shuffled_indices(ds.len(), seed, tag::PARTITION);
    let base = ds.len() / k;
    let extra = ds.len() % k;
    let mut shards = Vec::with_capacity(k);
    let mut start = 0;
    for client in 0..k {
        let size = base + usize::from(client < extra);
        let name = format!("{}/client{client}", ds.name());
        shards.push(ds.subset(name, &order[start..start + size]));
        start += size;
    }
    Ok(shards)
}

/// Index-level proxy split: `(train, validation)` index sets.
pub fn split_proxy_indices(n: usize, val_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(val_fraction > 0.0 && val_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "validation fraction {val_fraction} must lie in (0, 1)"
        )));
    }
    let n_val = (val_fraction * n as f64).round() as usize;
    if n_val == 0 || n_val >= n {
        return Err(Error::InvalidArgument(format!(
            "validation fraction {val_fraction} of {n} samples leaves an empty side"
        )));
    }
    let order = shuffled_indices(n, seed, tag::PROXY_SPLIT);
    let (val, train) = order.split_at(n_val);
    Ok((train.to_vec(), val.to_vec()))
}

/// Splits the server proxy set into disjoint DART-training and validation
/// parts, with `|val| = round(val_fraction · N)`.
pub fn split_proxy(
    ds: &UnlabeledDataset,
    val_fraction: f64,
    seed: u64,
) -> Result<(UnlabeledDataset, UnlabeledDataset)> {
    let (train, val) = split_proxy_indices(ds.len(), val_fraction, seed)?;
    Ok((
        ds.subset(format!("{}/dart", ds.name()), &train)?,
        ds.subset(format!("{}/val", ds.name()), &val)?,
    ))
}
