//! Labeled image datasets: synthetic generation, IDX loading and the
//! split / subsample / merge operations used by the pipeline and the attacks.

mod idx;
mod synth;

pub use idx::{encode_idx, load_idx, parse_idx, write_idx};
pub use synth::{synth_generate, SynthSpec, TextureFamily};

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::seed;
use crate::tensor::ImageTensor;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub images: Vec<ImageTensor>,
    pub labels: Vec<usize>,
    pub num_classes: usize,
}

impl Dataset {
    pub fn new(name: impl Into<String>, images: Vec<ImageTensor>, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        let ds = Dataset {
            name: name.into(),
            images,
            labels,
            num_classes,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        if self.images.len() != self.labels.len() {
            return Err(Error::data(format!(
                "{} images but {} labels",
                self.images.len(),
                self.labels.len()
            )));
        }
        if let Some(&bad) = self.labels.iter().find(|&&l| l >= self.num_classes) {
            return Err(Error::Label {
                label: bad,
                num_classes: self.num_classes,
            });
        }
        if let Some(first) = self.images.first() {
            if self.images.iter().any(|im| im.shape() != first.shape()) {
                return Err(Error::shape("dataset images do not share one shape"));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// Shape shared by all images (empty for an empty dataset).
    pub fn image_shape(&self) -> &[usize] {
        self.images.first().map_or(&[], |im| im.shape())
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// New dataset made of the samples at `indices`, in that order.
    pub fn select(&self, indices: &[usize], name: impl Into<String>) -> Dataset {
        Dataset {
            name: name.into(),
            images: indices.iter().map(|&i| self.images[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
        }
    }
}

/// Shuffles the dataset with `seed` and cuts three disjoint parts of the requested sizes.
pub fn split(dataset: &Dataset, counts: (usize, usize, usize), seed: u64) -> Result<(Dataset, Dataset, Dataset)> {
    let (a, b, c) = counts;
    if a + b + c > dataset.len() {
        return Err(Error::data(format!(
            "split {a}+{b}+{c} exceeds dataset size {}",
            dataset.len()
        )));
    }
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    order.shuffle(&mut seed::rng(seed));
    let name = &dataset.name;
    Ok((
        dataset.select(&order[..a], format!("{name}/train")),
        dataset.select(&order[a..a + b], format!("{name}/val")),
        dataset.select(&order[a + b..a + b + c], format!("{name}/test")),
    ))
}

/// Number of samples kept from `count` at `fraction`, robust to binary rounding.
pub(crate) fn fraction_of(count: usize, fraction: f64) -> usize {
    ((fraction * count as f64) + 1e-9).floor() as usize
}

/// Class-balanced subsample without replacement: `floor(fraction * n_c)` per class.
pub fn subsample(dataset: &Dataset, fraction: f64, seed: u64) -> Result<Dataset> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::argument(format!("fraction {fraction} outside (0, 1]")));
    }
    let mut rng = seed::rng(seed);
    let mut keep = Vec::new();
    for class in 0..dataset.num_classes {
        let mut members: Vec<usize> = (0..dataset.len()).filter(|&i| dataset.labels[i] == class).collect();
        if members.is_empty() {
            continue;
        }
        let take = fraction_of(members.len(), fraction);
        if take == 0 {
            return Err(Error::data(format!(
                "fraction {fraction} keeps no samples of class {class} ({} available)",
                members.len()
            )));
        }
        members.shuffle(&mut rng);
        keep.extend_from_slice(&members[..take]);
    }
    keep.sort_unstable();
    Ok(dataset.select(&keep, format!("{}@{fraction}", dataset.name)))
}

/// Appends `extra` as new classes after those of `base`, then shuffles the union.
pub fn augment_merge(base: &Dataset, extra: &Dataset, seed: u64) -> Result<Dataset> {
    let num_classes = base.num_classes + extra.num_classes;
    if extra.is_empty() {
        let mut merged = base.clone();
        merged.num_classes = num_classes;
        return Ok(merged);
    }
    if !base.is_empty() && base.image_shape() != extra.image_shape() {
        return Err(Error::shape(format!(
            "cannot merge images {:?} with {:?}",
            base.image_shape(),
            extra.image_shape()
        )));
    }
    let mut pairs: Vec<(ImageTensor, usize)> = base
        .images
        .iter()
        .cloned()
        .zip(base.labels.iter().copied())
        .chain(
            extra
                .images
                .iter()
                .cloned()
                .zip(extra.labels.iter().map(|l| l + base.num_classes)),
        )
        .collect();
    pairs.shuffle(&mut seed::rng(seed));
    let (images, labels) = pairs.into_iter().unzip();
    Dataset::new(format!("{}+{}", base.name, extra.name), images, labels, num_classes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn toy(classes: usize, per_class: usize) -> Dataset {
        let mut images = Vec::new();
        let mut labels = Vec::new();
        for c in 0..classes {
            for k in 0..per_class {
                images.push(Tensor::filled(vec![2, 2, 1], (c * per_class + k) as f32 / 100.0));
                labels.push(c);
            }
        }
        Dataset::new("toy", images, labels, classes).unwrap()
    }

    fn ids(ds: &Dataset) -> Vec<u32> {
        ds.images.iter().map(|im| (im.data()[0] * 100.0).round() as u32).collect()
    }

    #[test]
    fn split_parts_are_disjoint_and_sized() {
        let ds = toy(2, 5);
        let (a, b, c) = split(&ds, (6, 2, 2), 3).unwrap();
        assert_eq!((a.len(), b.len(), c.len()), (6, 2, 2));
        let mut all: Vec<u32> = [ids(&a), ids(&b), ids(&c)].concat();
        all.sort_unstable();
        all.dedup();
        assert_eq!(all.len(), 10);
    }

    #[test]
    fn split_everything_into_train() {
        let ds = toy(2, 5);
        let (a, b, c) = split(&ds, (10, 0, 0), 1).unwrap();
        assert!(b.is_empty() && c.is_empty());
        let mut got = ids(&a);
        got.sort_unstable();
        assert_eq!(got, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn split_rejects_oversized_counts() {
        assert!(matches!(split(&toy(2, 5), (6, 3, 2), 0), Err(Error::Data(_))));
    }

    #[test]
    fn split_is_deterministic() {
        let ds = toy(3, 4);
        assert_eq!(split(&ds, (4, 4, 4), 9).unwrap(), split(&ds, (4, 4, 4), 9).unwrap());
    }

    #[test]
    fn subsample_half_keeps_five_per_class() {
        let sub = subsample(&toy(2, 10), 0.5, 4).unwrap();
        assert_eq!(sub.class_counts(), vec![5, 5]);
    }

    #[test]
    fn subsample_full_keeps_multiset() {
        let ds = toy(2, 10);
        let sub = subsample(&ds, 1.0, 4).unwrap();
        assert_eq!(ids(&sub), ids(&ds));
    }

    #[test]
    fn subsample_grid_fractions_are_balanced() {
        let ds = toy(3, 20);
        for f in [0.1, 0.3, 0.5, 0.7, 0.9, 1.0] {
            let sub = subsample(&ds, f, 1).unwrap();
            let want = fraction_of(20, f);
            assert_eq!(sub.class_counts(), vec![want; 3], "fraction {f}");
        }
    }

    #[test]
    fn subsample_rejects_empty_classes() {
        assert!(matches!(subsample(&toy(2, 5), 0.1, 0), Err(Error::Data(_))));
    }

    #[test]
    fn merge_shifts_extra_labels() {
        let base = toy(10, 2);
        let extra = toy(5, 3);
        let merged = augment_merge(&base, &extra, 2).unwrap();
        assert_eq!(merged.num_classes, 15);
        let counts = merged.class_counts();
        assert_eq!(&counts[..10], &[2; 10]);
        assert_eq!(&counts[10..], &[3; 5]);
    }

    #[test]
    fn merge_with_empty_extra_is_base() {
        let base = toy(3, 2);
        let empty = Dataset::new("none", vec![], vec![], 0).unwrap();
        assert_eq!(augment_merge(&base, &empty, 1).unwrap(), base);
    }

    #[test]
    fn merge_rejects_shape_mismatch() {
        let base = toy(2, 2);
        let extra = Dataset::new("x", vec![Tensor::zeros(vec![3, 3, 1])], vec![0], 1).unwrap();
        assert!(matches!(augment_merge(&base, &extra, 0), Err(Error::Shape(_))));
    }
}
