use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::Rng;

use super::idx::{parse_idx_images, parse_idx_labels, IdxImages};
use super::Dataset;
use crate::error::{Error, Result};

/// Parsed MNIST split: images plus one label byte per image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MnistCollection {
    pub images: IdxImages,
    pub labels: Vec<u8>,
}

impl MnistCollection {
    pub fn new(images: IdxImages, labels: Vec<u8>) -> Result<Self> {
        if images.count() != labels.len() {
            return Err(Error::Format(format!(
                "{} images but {} labels",
                images.count(),
                labels.len()
            )));
        }
        if let Some(bad) = labels.iter().find(|&&l| l > 9) {
            return Err(Error::Format(format!("label {bad} is not a digit")));
        }
        Ok(Self { images, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Feature dimension after flattening and appending the bias term.
    pub fn feature_dim(&self) -> usize {
        self.images.rows * self.images.cols + 1
    }

    fn indices_of(&self, digits: &[u8]) -> Vec<usize> {
        (0..self.len())
            .filter(|&i| digits.contains(&self.labels[i]))
            .collect()
    }

    fn features(&self, index: usize) -> impl Iterator<Item = f64> + '_ {
        self.images
            .image(index)
            .iter()
            .map(|&p| f64::from(p) / 255.0)
            .chain(std::iter::once(1.0))
    }
}

pub fn load_mnist(images_path: &Path, labels_path: &Path) -> Result<MnistCollection> {
    let images = parse_idx_images(&std::fs::read(images_path)?)?;
    let labels = parse_idx_labels(&std::fs::read(labels_path)?)?;
    MnistCollection::new(images, labels)
}

fn check_classes(class_a: &[u8], class_b: &[u8]) -> Result<()> {
    if class_a.is_empty() || class_b.is_empty() {
        return Err(Error::Data("both class digit sets must be non-empty".into()));
    }
    if class_a.iter().any(|d| class_b.contains(d)) {
        return Err(Error::Data(format!(
            "class digit sets {class_a:?} and {class_b:?} overlap"
        )));
    }
    Ok(())
}

fn assemble(raw: &MnistCollection, class_a: &[u8], picks: &[usize]) -> Result<Dataset> {
    let d = raw.feature_dim();
    let x = DMatrix::from_row_iterator(picks.len(), d, picks.iter().flat_map(|&i| raw.features(i)));
    let y = DVector::from_iterator(
        picks.len(),
        picks
            .iter()
            .map(|&i| if class_a.contains(&raw.labels[i]) { 1.0 } else { 0.0 }),
    );
    Dataset::new(x, y)
}

/// Binary task: digits in `class_a` are labeled 1, digits in `class_b` 0.
/// Pixels are scaled to [0, 1] and a constant 1 is appended as bias feature.
pub fn build_classification_task<R: Rng + ?Sized>(
    raw: &MnistCollection,
    class_a: &[u8],
    class_b: &[u8],
    num_samples: usize,
    rng: &mut R,
) -> Result<Dataset> {
    check_classes(class_a, class_b)?;
    if num_samples == 0 {
        return Err(Error::Data("D_k must be at least 1".into()));
    }
    let all: Vec<u8> = class_a.iter().chain(class_b).copied().collect();
    let pool = raw.indices_of(&all);
    if pool.len() < num_samples {
        return Err(Error::Data(format!(
            "only {} images of digits {all:?} available, {num_samples} requested",
            pool.len()
        )));
    }
    let picks: Vec<usize> = sample(rng, pool.len(), num_samples)
        .into_iter()
        .map(|j| pool[j])
        .collect();
    assemble(raw, class_a, &picks)
}

/// Evaluation set for one cluster's task, capped at `cap` images drawn
/// without replacement (all matching images when fewer exist).
pub fn build_test_set<R: Rng + ?Sized>(
    raw: &MnistCollection,
    class_a: &[u8],
    class_b: &[u8],
    cap: usize,
    rng: &mut R,
) -> Result<Dataset> {
    check_classes(class_a, class_b)?;
    let all: Vec<u8> = class_a.iter().chain(class_b).copied().collect();
    let pool = raw.indices_of(&all);
    if pool.is_empty() || cap == 0 {
        return Err(Error::Data(format!("no test images for digits {all:?}")));
    }
    let mut picks: Vec<usize> = if pool.len() <= cap {
        pool
    } else {
        sample(rng, pool.len(), cap).into_iter().map(|j| pool[j]).collect()
    };
    picks.sort_unstable();
    assemble(raw, class_a, &picks)
}
