//! Directory-of-arrays dataset format.
//!
//! A dataset directory holds
//! - `images.f32`: `N×H×W×C` float32, little-endian, row-major;
//! - `labels.u16`: optional, `N` little-endian uint16 class indices;
//! - `meta.txt`: `key: value` lines for `name`, `shape` (`N H W C`) and `classes`.
//!
//! Corrupted copies of a dataset are cached next to it under
//! `<name>.corrupt/<filter>_<severity>/`, each a dataset directory of its own
//! with a `stamp` file recording the digest of its inputs.

use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use super::corrupt::{corrupt_dataset, CorruptedTestSuite, CorruptionSpec, SEVERITY_TABLES};
use super::{LabeledDataset, UnlabeledDataset};
use crate::error::{Error, Result};
use crate::image::{Image, Shape};

pub const IMAGES_FILE: &str = "images.f32";
pub const LABELS_FILE: &str = "labels.u16";
pub const META_FILE: &str = "meta.txt";
const STAMP_FILE: &str = "stamp";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetMeta {
    pub name: String,
    pub count: usize,
    pub shape: Shape,
    pub classes: usize,
}

impl DatasetMeta {
    fn render(&self) -> String {
        format!(
            "name: {}\nshape: {} {} {} {}\nclasses: {}\n",
            self.name,
            self.count,
            self.shape.height,
            self.shape.width,
            self.shape.channels,
            self.classes
        )
    }

    fn parse(path: &Path, text: &str) -> Result<Self> {
        let mut name = None;
        let mut shape = None;
        let mut classes = 0;
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
            let (key, value) = line
                .split_once(':')
                .ok_or_else(|| Error::format(path, format!("expected `key: value`, got `{line}`")))?;
            let value = value.trim();
            match key.trim() {
                "name" => name = Some(value.to_string()),
                "shape" => {
                    let dims = value
                        .split_whitespace()
                        .map(str::parse::<usize>)
                        .collect::<std::result::Result<Vec<_>, _>>()
                        .map_err(|e| Error::format(path, format!("bad shape `{value}`: {e}")))?;
                    if dims.len() != 4 {
                        return Err(Error::format(path, "shape needs four dimensions N H W C"));
                    }
                    shape = Some((dims[0], Shape::new(dims[1], dims[2], dims[3])));
                }
                "classes" => {
                    classes = value
                        .parse()
                        .map_err(|e| Error::format(path, format!("bad class count: {e}")))?
                }
                other => return Err(Error::format(path, format!("unknown key `{other}`"))),
            }
        }
        let (count, shape) = shape.ok_or_else(|| Error::format(path, "missing shape"))?;
        Ok(DatasetMeta {
            name: name.ok_or_else(|| Error::format(path, "missing name"))?,
            count,
            shape,
            classes,
        })
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn image_bytes(images: &[Image]) -> Vec<u8> {
    images
        .iter()
        .flat_map(|img| img.pixels().iter().flat_map(|v| v.to_le_bytes()))
        .collect()
}

fn write_dataset(dir: &Path, meta: &DatasetMeta, images: &[Image], labels: Option<&[u16]>) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_file(&dir.join(IMAGES_FILE), &image_bytes(images))?;
    let labels_path = dir.join(LABELS_FILE);
    match labels {
        Some(labels) => {
            let bytes: Vec<u8> = labels.iter().flat_map(|l| l.to_le_bytes()).collect();
            write_file(&labels_path, &bytes)?;
        }
        None if labels_path.exists() => {
            fs::remove_file(&labels_path).map_err(|e| Error::io(&labels_path, e))?
        }
        None => {}
    }
    write_file(&dir.join(META_FILE), meta.render().as_bytes())
}

pub fn save_labeled(ds: &LabeledDataset, dir: &Path) -> Result<()> {
    let shape = ds
        .shape()
        .ok_or_else(|| Error::EmptyDataset(ds.name().to_string()))?;
    let meta = DatasetMeta {
        name: ds.name().to_string(),
        count: ds.len(),
        shape,
        classes: ds.num_classes(),
    };
    write_dataset(dir, &meta, ds.images(), Some(ds.labels()))
}

pub fn save_unlabeled(ds: &UnlabeledDataset, dir: &Path) -> Result<()> {
    let meta = DatasetMeta {
        name: ds.name().to_string(),
        count: ds.len(),
        shape: ds.shape(),
        classes: 0,
    };
    write_dataset(dir, &meta, ds.images(), None)
}

pub fn read_meta(dir: &Path) -> Result<DatasetMeta> {
    let path = dir.join(META_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    DatasetMeta::parse(&path, &text)
}

fn read_images(dir: &Path, meta: &DatasetMeta) -> Result<Vec<Image>> {
    let path = dir.join(IMAGES_FILE);
    let bytes = read_file(&path)?;
    let per_image = meta.shape.len();
    if bytes.len() != meta.count * per_image * 4 {
        return Err(Error::format(
            &path,
            format!(
                "{} bytes, expected {} for {} images of {}",
                bytes.len(),
                meta.count * per_image * 4,
                meta.count,
                meta.shape
            ),
        ));
    }
    let values: Vec<f32> = bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    if per_image == 0 {
        return Err(Error::format(&path, "zero-sized image shape"));
    }
    values
        .chunks_exact(per_image)
        .map(|px| Image::from_vec(meta.shape, px.to_vec()))
        .collect()
}

pub fn load_labeled(dir: &Path) -> Result<LabeledDataset> {
    let meta = read_meta(dir)?;
    let images = read_images(dir, &meta)?;
    let path = dir.join(LABELS_FILE);
    let bytes = read_file(&path)?;
    if bytes.len() != meta.count * 2 {
        return Err(Error::format(&path, format!("expected {} labels", meta.count)));
    }
    let labels = bytes
        .chunks_exact(2)
        .map(|b| u16::from_le_bytes([b[0], b[1]]))
        .collect();
    LabeledDataset::new(meta.name, images, labels, meta.classes)
}

/// Loads images only; labels, if present, are ignored.
pub fn load_unlabeled(dir: &Path) -> Result<UnlabeledDataset> {
    let meta = read_meta(dir)?;
    let images = read_images(dir, &meta)?;
    UnlabeledDataset::new(meta.name, images)
}

/// `<parent>/<name>.corrupt/` for the dataset stored at `dataset_dir`.
pub fn suite_root(dataset_dir: &Path, name: &str) -> PathBuf {
    let parent = dataset_dir.parent().unwrap_or_else(|| Path::new("."));
    parent.join(format!("{}.corrupt", name.replace(['/', '\\'], "_")))
}

fn stamp(base: &LabeledDataset, spec: &CorruptionSpec, seed: u64) -> String {
    let mut h = Sha256::new();
    h.update(image_bytes(base.images()));
    for l in base.labels() {
        h.update(l.to_le_bytes());
    }
    h.update(spec.dir_name().as_bytes());
    h.update(seed.to_le_bytes());
    for (_, row) in SEVERITY_TABLES {
        for p in row {
            h.update(p.to_le_bytes());
        }
    }
    hex::encode(h.finalize())
}

#[derive(Debug, Default, Clone, PartialEq, Eq)]
pub struct SuiteCacheReport {
    pub written: Vec<PathBuf>,
    pub reused: Vec<PathBuf>,
}

/// Writes every missing or stale `(filter, severity)` copy of the dataset at
/// `dataset_dir`. Entries whose stamp matches are left untouched.
pub fn materialize_suite(dataset_dir: &Path, specs: &[CorruptionSpec], seed: u64) -> Result<SuiteCacheReport> {
    if specs.is_empty() {
        return Err(Error::InvalidArgument("corruption suite needs at least one spec".into()));
    }
    let base = load_labeled(dataset_dir)?;
    let root = suite_root(dataset_dir, base.name());
    let mut report = SuiteCacheReport::default();
    for spec in specs {
        let dir = root.join(spec.dir_name());
        let expected = stamp(&base, spec, seed);
        let current = fs::read_to_string(dir.join(STAMP_FILE)).ok();
        if current.as_deref().map(str::trim) == Some(expected.as_str()) {
            report.reused.push(dir);
            continue;
        }
        let corrupted = corrupt_dataset(&base, spec, seed)?;
        save_labeled(&corrupted, &dir)?;
        write_file(&dir.join(STAMP_FILE), expected.as_bytes())?;
        report.written.push(dir);
    }
    Ok(report)
}

/// Materializes (if needed) and loads the suite for the dataset at `dataset_dir`.
pub fn load_suite(dataset_dir: &Path, specs: &[CorruptionSpec], seed: u64) -> Result<CorruptedTestSuite> {
    materialize_suite(dataset_dir, specs, seed)?;
    let base = load_labeled(dataset_dir)?;
    let root = suite_root(dataset_dir, base.name());
    let entries = specs
        .iter()
        .map(|spec| Ok((*spec, load_labeled(&root.join(spec.dir_name()))?)))
        .collect::<Result<Vec<_>>>()?;
    CorruptedTestSuite::new(base, entries)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::CorruptionFilter;

    fn sample() -> LabeledDataset {
        let images = (0..6)
            .map(|i| {
                Image::from_vec(
                    Shape::new(3, 4, 2),
                    (0..24).map(|p| ((p + i) % 7) as f32 / 6.0).collect(),
                )
                .unwrap()
            })
            .collect();
        LabeledDataset::new("toy", images, vec![0, 1, 2, 0, 1, 2], 3).unwrap()
    }

    #[test]
    fn labeled_round_trip_bit_exact() {
        let tmp = tempfile::tempdir().unwrap();
        let ds = sample();
        save_labeled(&ds, &tmp.path().join("toy")).unwrap();
        assert_eq!(load_labeled(&tmp.path().join("toy")).unwrap(), ds);
        let meta = read_meta(&tmp.path().join("toy")).unwrap();
        assert_eq!(meta.count, 6);
        assert_eq!(meta.shape, Shape::new(3, 4, 2));
        assert_eq!(meta.classes, 3);
    }

    #[test]
    fn unlabeled_round_trip() {
        let tmp = tempfile::tempdir().unwrap();
        let ds = sample().into_unlabeled().unwrap();
        save_unlabeled(&ds, tmp.path()).unwrap();
        assert_eq!(load_unlabeled(tmp.path()).unwrap(), ds);
        assert!(load_labeled(tmp.path()).is_err());
    }

    #[test]
    fn truncated_images_rejected() {
        let tmp = tempfile::tempdir().unwrap();
        save_labeled(&sample(), tmp.path()).unwrap();
        let path = tmp.path().join(IMAGES_FILE);
        let mut bytes = fs::read(&path).unwrap();
        bytes.truncate(bytes.len() - 4);
        fs::write(&path, bytes).unwrap();
        assert!(matches!(load_labeled(tmp.path()), Err(Error::Format { .. })));
    }

    #[test]
    fn meta_rejects_unknown_keys() {
        let err = DatasetMeta::parse(Path::new("m"), "name: a\nshape: 1 1 1 1\ncolour: red\n");
        assert!(err.is_err());
    }

    #[test]
    fn suite_cache_is_reused() {
        let tmp = tempfile::tempdir().unwrap();
        let dir = tmp.path().join("toy");
        save_labeled(&sample(), &dir).unwrap();
        let specs = [
            CorruptionSpec::new(CorruptionFilter::ImpulseNoise, 1).unwrap(),
            CorruptionSpec::new(CorruptionFilter::Brightness, 5).unwrap(),
        ];
        let first = materialize_suite(&dir, &specs, 4).unwrap();
        assert_eq!(first.written.len(), 2);
        let second = materialize_suite(&dir, &specs, 4).unwrap();
        assert_eq!(second.reused.len(), 2);
        assert!(second.written.is_empty());
        let other_seed = materialize_suite(&dir, &specs, 5).unwrap();
        assert_eq!(other_seed.written.len(), 2);
        let suite = load_suite(&dir, &specs, 5).unwrap();
        assert_eq!(suite.entries[1].1.labels(), sample().labels());
        assert!(tmp.path().join("toy.corrupt/brightness_5/images.f32").exists());
    }
}
