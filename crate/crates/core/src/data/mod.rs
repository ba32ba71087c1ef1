//! Labelled image datasets, subsetting and client partitioning.

mod cifar;
mod idx;
mod synthetic;

pub use cifar::{load_cifar_binary, parse_cifar_records, CIFAR_RECORD_LEN};
pub use idx::{load_idx, parse_idx, write_idx, IdxArray, IDX_IMAGES_MAGIC, IDX_LABELS_MAGIC};
pub use synthetic::{synthetic_blobs, synthetic_digits, BlobOptions};

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitTag {
    Train,
    Test,
    Attacker,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    images: Tensor,
    labels: Vec<usize>,
    classes: usize,
    pub split: SplitTag,
}

impl Dataset {
    /// `images` is `[count, channels, height, width]` with pixels in `[0, 1]`.
    pub fn new(images: Tensor, labels: Vec<usize>, classes: usize, split: SplitTag) -> Result<Self> {
        if images.shape().len() != 4 {
            return Err(Error::Data(format!(
                "images must be [count, channels, height, width], got {:?}",
                images.shape()
            )));
        }
        if images.batch() != labels.len() {
            return Err(Error::CountMismatch {
                images: images.batch(),
                labels: labels.len(),
            });
        }
        if let Some((index, &label)) = labels.iter().enumerate().find(|(_, &l)| l >= classes) {
            return Err(Error::LabelOutOfRange { index, label, classes });
        }
        if let Some(pos) = images.data().iter().position(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Data(format!(
                "pixel {pos} is {} (outside [0, 1])",
                images.data()[pos]
            )));
        }
        Ok(Dataset {
            images,
            labels,
            classes,
            split,
        })
    }

    pub fn images(&self) -> &Tensor {
        &self.images
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// `[channels, height, width]`.
    pub fn image_shape(&self) -> &[usize] {
        &self.images.shape()[1..]
    }

    /// Widens the class count (a test split may not contain every class).
    pub fn with_classes(mut self, classes: usize) -> Result<Self> {
        if let Some((index, &label)) = self.labels.iter().enumerate().find(|(_, &l)| l >= classes) {
            return Err(Error::LabelOutOfRange { index, label, classes });
        }
        self.classes = classes;
        Ok(self)
    }

    pub fn with_split(mut self, split: SplitTag) -> Self {
        self.split = split;
        self
    }

    pub fn select(&self, indices: &[usize]) -> Dataset {
        Dataset {
            images: self.images.select_batch(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            classes: self.classes,
            split: self.split,
        }
    }

    /// Concatenation in order; shapes must agree.
    pub fn concat(parts: &[Dataset]) -> Result<Dataset> {
        let first = parts.first().ok_or(Error::Empty("dataset list"))?;
        let images: Vec<Tensor> = parts.iter().map(|d| d.images.clone()).collect();
        let labels = parts.iter().flat_map(|d| d.labels.iter().copied()).collect();
        let classes = parts.iter().map(|d| d.classes).max().unwrap_or(first.classes);
        Dataset::new(Tensor::concat_batch(&images)?, labels, classes, first.split)
    }
}

/// Random subset of `round(fraction · count)` items. Each class first gets
/// `⌊fraction · class_count⌋` items; any remainder is drawn from the rest.
/// The result is in random order.
pub fn subset_fraction(dataset: &Dataset, fraction: f64, rng: &mut impl Rng) -> Result<Dataset> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Data(format!("fraction must lie in (0, 1], got {fraction}")));
    }
    let target = (fraction * dataset.len() as f64).round() as usize;
    let mut by_class = vec![Vec::new(); dataset.classes()];
    for (i, &l) in dataset.labels().iter().enumerate() {
        by_class[l].push(i);
    }
    let mut chosen = Vec::with_capacity(target);
    let mut rest = Vec::new();
    for mut members in by_class {
        members.shuffle(rng);
        let quota = ((fraction * members.len() as f64).floor() as usize).min(target - chosen.len());
        chosen.extend_from_slice(&members[..quota]);
        rest.extend_from_slice(&members[quota..]);
    }
    rest.shuffle(rng);
    let missing = target - chosen.len();
    chosen.extend_from_slice(&rest[..missing]);
    chosen.shuffle(rng);
    Ok(dataset.select(&chosen))
}

/// One index list per client.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartitionPlan {
    pub shards: Vec<Vec<usize>>,
    pub seed: u64,
}

impl PartitionPlan {
    pub fn is_partition_of(&self, count: usize) -> bool {
        let mut seen = vec![false; count];
        for &i in self.shards.iter().flatten() {
            if i >= count || seen[i] {
                return false;
            }
            seen[i] = true;
        }
        seen.into_iter().all(|s| s)
    }
}

/// Random equal split of `0..count` into `clients` shards (sizes differ by at most one).
pub fn partition_iid(count: usize, clients: usize, seed: u64) -> Result<PartitionPlan> {
    if clients == 0 || count < clients {
        return Err(Error::Data(format!("cannot split {count} samples among {clients} clients")));
    }
    let mut order: Vec<usize> = (0..count).collect();
    order.shuffle(&mut crate::seed::rng(seed));
    let base = count / clients;
    let extra = count % clients;
    let mut shards = Vec::with_capacity(clients);
    let mut start = 0;
    for c in 0..clients {
        let len = base + usize::from(c < extra);
        shards.push(order[start..start + len].to_vec());
        start += len;
    }
    Ok(PartitionPlan { shards, seed })
}

/// Halves a test split into the attacker's auxiliary set and the evaluation set.
pub fn carve_attacker(test: &Dataset, rng: &mut impl Rng) -> Result<(Dataset, Dataset)> {
    if test.len() < 2 {
        return Err(Error::Data(format!("test split of {} items cannot be halved", test.len())));
    }
    let mut order: Vec<usize> = (0..test.len()).collect();
    order.shuffle(rng);
    let (attacker, eval) = order.split_at(test.len() / 2);
    Ok((
        test.select(attacker).with_split(SplitTag::Attacker),
        test.select(eval).with_split(SplitTag::Test),
    ))
}

/// True when no index appears in more than one of the lists.
pub fn index_disjoint<'a>(lists: impl IntoIterator<Item = &'a [usize]>) -> bool {
    let mut seen = BTreeSet::new();
    lists.into_iter().flatten().all(|&i| seen.insert(i))
}
