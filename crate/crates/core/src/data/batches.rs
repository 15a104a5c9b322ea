use std::path::PathBuf;

use ndarray::{Array3, Array4, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::manifest::{DatasetSplit, SplitRole};
use super::preprocess::preprocess;
use crate::error::{Error, Result};
use crate::loss::LabelBatch;
use crate::model::InputShape;

#[derive(Debug, Clone)]
enum Source {
    Memory(Vec<Array3<f64>>),
    Disk(Vec<PathBuf>),
}

/// A split whose images are either decoded up front or on demand per batch.
#[derive(Debug, Clone)]
pub struct LoadedSplit {
    role: SplitRole,
    shape: InputShape,
    num_classes: usize,
    labels: Vec<usize>,
    rel_paths: Vec<String>,
    source: Source,
}

/// One mini-batch: images `[B × C × H × W]`, one-hot labels, and the split
/// indices the rows came from.
#[derive(Debug, Clone)]
pub struct Batch {
    pub images: Array4<f64>,
    pub labels: LabelBatch,
    pub classes: Vec<usize>,
    pub indices: Vec<usize>,
}

impl LoadedSplit {
    pub fn load(split: &DatasetSplit, shape: InputShape, preload: bool) -> Result<Self> {
        if split.is_empty() {
            return Err(Error::EmptySplit(split.role.to_string()));
        }
        let paths: Vec<PathBuf> = split.items.iter().map(|i| i.path.clone()).collect();
        let source = if preload {
            Source::Memory(
                paths
                    .par_iter()
                    .map(|p| preprocess(p, shape))
                    .collect::<Result<_>>()?,
            )
        } else {
            Source::Disk(paths)
        };
        Ok(Self {
            role: split.role,
            shape,
            num_classes: split.num_classes(),
            labels: split.items.iter().map(|i| i.class).collect(),
            rel_paths: split.items.iter().map(|i| i.rel_path.clone()).collect(),
            source,
        })
    }

    /// In-memory split from already-preprocessed tensors.
    pub fn from_tensors(role: SplitRole, images: Vec<Array3<f64>>, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        let first = images.first().ok_or_else(|| Error::EmptySplit(role.to_string()))?;
        let (c, h, w) = first.dim();
        if images.len() != labels.len() {
            return Err(Error::shape("split labels", images.len(), labels.len()));
        }
        if let Some(bad) = images.iter().find(|i| i.dim() != (c, h, w)) {
            return Err(Error::shape("split images", format!("{:?}", (c, h, w)), format!("{:?}", bad.dim())));
        }
        if let Some(&class) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::ClassOutOfRange { class, num_classes });
        }
        Ok(Self {
            role,
            shape: InputShape::new(c, h, w),
            num_classes,
            rel_paths: (0..labels.len()).map(|i| format!("#{i}")).collect(),
            labels,
            source: Source::Memory(images),
        })
    }

    pub fn role(&self) -> SplitRole {
        self.role
    }

    pub fn shape(&self) -> InputShape {
        self.shape
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn rel_path(&self, index: usize) -> &str {
        &self.rel_paths[index]
    }

    pub fn image(&self, index: usize) -> Result<Array3<f64>> {
        match &self.source {
            Source::Memory(v) => Ok(v[index].clone()),
            Source::Disk(p) => preprocess(&p[index], self.shape),
        }
    }

    /// Stacks the given items into one batch.
    pub fn gather(&self, indices: &[usize]) -> Result<Batch> {
        let InputShape { channels, height, width } = self.shape;
        let mut images = Array4::zeros((indices.len(), channels, height, width));
        let decoded: Vec<Array3<f64>> = match &self.source {
            Source::Memory(_) => indices.iter().map(|&i| self.image(i)).collect::<Result<_>>()?,
            Source::Disk(_) => indices.par_iter().map(|&i| self.image(i)).collect::<Result<_>>()?,
        };
        for (mut dst, src) in images.axis_iter_mut(Axis(0)).zip(&decoded) {
            dst.assign(src);
        }
        let classes: Vec<usize> = indices.iter().map(|&i| self.labels[i]).collect();
        Ok(Batch {
            images,
            labels: LabelBatch::one_hot(&classes, self.num_classes)?,
            classes,
            indices: indices.to_vec(),
        })
    }

    /// Mini-batches covering the split exactly once. With a shuffle seed the
    /// order is a permutation drawn from `(seed, epoch)`; the last batch may
    /// be short.
    pub fn batches(&self, batch_size: usize, shuffle: Option<u64>, epoch: usize) -> Batches<'_> {
        let mut order: Vec<usize> = (0..self.len()).collect();
        if let Some(seed) = shuffle {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(epoch as u64);
            order.shuffle(&mut rng);
        }
        Batches {
            split: self,
            order,
            batch_size: batch_size.max(1),
            pos: 0,
        }
    }
}

pub struct Batches<'a> {
    split: &'a LoadedSplit,
    order: Vec<usize>,
    batch_size: usize,
    pos: usize,
}

impl Iterator for Batches<'_> {
    type Item = Result<Batch>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.pos >= self.order.len() {
            return None;
        }
        let end = (self.pos + self.batch_size).min(self.order.len());
        let idx = &self.order[self.pos..end];
        self.pos = end;
        Some(self.split.gather(idx))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn split(n: usize) -> LoadedSplit {
        let imgs = (0..n).map(|i| Array3::from_elem((1, 2, 2), i as f64)).collect();
        LoadedSplit::from_tensors(SplitRole::Train, imgs, (0..n).map(|i| i % 2).collect(), 2).unwrap()
    }

    #[test]
    fn batch_sizes_with_partial_tail() {
        let s = split(10);
        let sizes: Vec<usize> = s.batches(4, None, 0).map(|b| b.unwrap().indices.len()).collect();
        assert_eq!(sizes, vec![4, 4, 2]);
    }

    #[test]
    fn shuffle_is_a_seeded_permutation() {
        let s = split(10);
        let order = |seed, epoch| -> Vec<usize> {
            s.batches(3, Some(seed), epoch).flat_map(|b| b.unwrap().indices).collect()
        };
        let a = order(7, 0);
        assert_eq!(a, order(7, 0));
        assert_ne!(a, order(7, 1));
        let mut sorted = a.clone();
        sorted.sort();
        assert_eq!(sorted, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn gather_builds_tensors_and_labels() {
        let s = split(4);
        let b = s.gather(&[3, 0]).unwrap();
        assert_eq!(b.images[[0, 0, 1, 1]], 3.0);
        assert_eq!(b.classes, vec![1, 0]);
        assert_eq!(b.labels.values()[[0, 1]], 1.0);
    }
}
