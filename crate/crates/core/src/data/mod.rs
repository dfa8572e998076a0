//! Datasets, batch streams, checkpoints, reports and feature-map dumps.

pub mod checkpoint;
pub mod cifar;
pub mod featmap;
pub mod idx;
pub mod report;
pub mod synthetic;

use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::Tensor;

pub use synthetic::SyntheticSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

/// Per-channel `(x - mean) / std` applied after scaling pixels to `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalization {
    pub fn cifar10() -> Self {
        Normalization {
            mean: vec![0.4914, 0.4822, 0.4465],
            std: vec![0.2470, 0.2435, 0.2616],
        }
    }
}

/// Where images come from; the `source` key selects the variant in config files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSpec {
    /// A CIFAR-10 binary batch file, or a directory holding `data_batch_{1..5}.bin`
    /// and `test_batch.bin`.
    Cifar10 {
        path: PathBuf,
        /// Keep only the first `limit` records of each split.
        #[serde(default)]
        limit: Option<usize>,
        #[serde(default)]
        normalization: Option<Normalization>,
    },
    /// IDX image/label pairs; the test split falls back to the train files.
    Idx {
        images: PathBuf,
        labels: PathBuf,
        #[serde(default)]
        test_images: Option<PathBuf>,
        #[serde(default)]
        test_labels: Option<PathBuf>,
        #[serde(default = "default_classes")]
        classes: usize,
        #[serde(default)]
        normalization: Option<Normalization>,
    },
    Synthetic(SyntheticSpec),
}

fn default_classes() -> usize {
    10
}

impl DatasetSpec {
    pub fn load(&self, split: Split) -> Result<Dataset> {
        match self {
            DatasetSpec::Cifar10 { path, limit, normalization } => {
                let mut d = cifar::load_cifar10(path, split)?;
                if let Some(n) = limit {
                    d = d.take(*n);
                }
                d.normalize(&normalization.clone().unwrap_or_else(Normalization::cifar10))?;
                Ok(d)
            }
            DatasetSpec::Idx {
                images,
                labels,
                test_images,
                test_labels,
                classes,
                normalization,
            } => {
                let (im, lb) = match split {
                    Split::Train => (images, labels),
                    Split::Test => (test_images.as_ref().unwrap_or(images), test_labels.as_ref().unwrap_or(labels)),
                };
                let mut d = idx::load_idx_dataset(im, lb, *classes)?;
                if let Some(n) = normalization {
                    d.normalize(n)?;
                }
                Ok(d)
            }
            DatasetSpec::Synthetic(s) => s.generate(split),
        }
    }
}

/// Images in NCHW order with integer labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub shape: [usize; 3],
    pub classes: usize,
    pub images: Vec<f64>,
    pub labels: Vec<usize>,
}

impl Dataset {
    pub fn new(shape: [usize; 3], classes: usize, images: Vec<f64>, labels: Vec<usize>) -> Result<Self> {
        let per: usize = shape.iter().product();
        if images.len() != per * labels.len() {
            return Err(Error::Data(format!(
                "{} image values for {} labels of shape {shape:?}",
                images.len(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::Data(format!("label {bad} outside {classes} classes")));
        }
        Ok(Dataset { shape, classes, images, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image_len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn image(&self, i: usize) -> &[f64] {
        let n = self.image_len();
        &self.images[i * n..(i + 1) * n]
    }

    pub fn take(mut self, n: usize) -> Self {
        let n = n.min(self.len());
        self.images.truncate(n * self.image_len());
        self.labels.truncate(n);
        self
    }

    pub fn normalize(&mut self, norm: &Normalization) -> Result<()> {
        let c = self.shape[0];
        if norm.mean.len() != c || norm.std.len() != c {
            return Err(Error::Data(format!("normalization has {} / {} entries for {c} channels", norm.mean.len(), norm.std.len())));
        }
        if norm.std.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::Data("normalization std must be positive".into()));
        }
        let hw = self.shape[1] * self.shape[2];
        for (j, v) in self.images.iter_mut().enumerate() {
            let ch = (j / hw) % c;
            *v = (*v - norm.mean[ch]) / norm.std[ch];
        }
        Ok(())
    }

    /// Stacks the listed samples into a `[N, C, H, W]` batch.
    pub fn batch(&self, indices: &[usize]) -> (Tensor, Vec<usize>) {
        let n = self.image_len();
        let mut data = Vec::with_capacity(indices.len() * n);
        for &i in indices {
            data.extend_from_slice(self.image(i));
        }
        let [c, h, w] = self.shape;
        let t = Tensor::new(vec![indices.len(), c, h, w], data).expect("batch layout");
        (t, indices.iter().map(|&i| self.labels[i]).collect())
    }

    /// Consecutive batches covering the set once, in index order.
    pub fn sequential(&self, batch_size: usize) -> impl Iterator<Item = (Tensor, Vec<usize>)> + '_ {
        let idx: Vec<usize> = (0..self.len()).collect();
        let chunks: Vec<Vec<usize>> = idx.chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect();
        chunks.into_iter().map(move |c| self.batch(&c))
    }
}

/// Standard CIFAR augmentation: random horizontal flip and random crop from a
/// zero-padded image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Augment {
    #[serde(default)]
    pub flip: bool,
    #[serde(default)]
    pub crop_padding: usize,
}

impl Augment {
    pub fn is_identity(&self) -> bool {
        !self.flip && self.crop_padding == 0
    }

    fn apply(&self, img: &[f64], shape: [usize; 3], r: &mut rng::Rng) -> Vec<f64> {
        let [c, h, w] = shape;
        let flip = self.flip && r.random_bool(0.5);
        let p = self.crop_padding as i64;
        let (dy, dx) = if p > 0 {
            (r.random_range(-p..=p) as isize, r.random_range(-p..=p) as isize)
        } else {
            (0, 0)
        };
        let mut out = vec![0.0; img.len()];
        for ch in 0..c {
            for y in 0..h {
                for x in 0..w {
                    let sy = y as isize + dy;
                    let sx0 = x as isize + dx;
                    if sy < 0 || sy >= h as isize || sx0 < 0 || sx0 >= w as isize {
                        continue;
                    }
                    let sx = if flip { w - 1 - sx0 as usize } else { sx0 as usize };
                    out[(ch * h + y) * w + x] = img[(ch * h + sy as usize) * w + sx];
                }
            }
        }
        out
    }
}

/// Endless stream of shuffled mini-batches. Each epoch reshuffles from a
/// generator keyed by `(seed, epoch)`, so the batch sequence depends only on
/// the seed.
#[derive(Debug, Clone)]
pub struct BatchStream {
    seed: u64,
    batch_size: usize,
    augment: Augment,
    epoch: u64,
    pos: usize,
    order: Vec<usize>,
    aug_rng: rng::Rng,
}

impl BatchStream {
    pub fn new(len: usize, batch_size: usize, seed: u64) -> Result<Self> {
        if len == 0 {
            return Err(Error::Data("cannot draw batches from an empty dataset".into()));
        }
        if batch_size == 0 {
            return Err(Error::Invalid("batch size must be positive".into()));
        }
        let mut s = BatchStream {
            seed,
            batch_size,
            augment: Augment::default(),
            epoch: 0,
            pos: 0,
            order: (0..len).collect(),
            aug_rng: rng::stream(seed, rng::tag("augment")),
        };
        s.shuffle();
        Ok(s)
    }

    pub fn with_augment(mut self, augment: Augment) -> Self {
        self.augment = augment;
        self
    }

    fn shuffle(&mut self) {
        self.order.sort_unstable();
        let mut r = rng::stream(self.seed, rng::tag("batches") ^ self.epoch);
        self.order.shuffle(&mut r);
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    /// Batches per pass over the data (last partial batch included).
    pub fn batches_per_epoch(&self) -> usize {
        self.order.len().div_ceil(self.batch_size)
    }

    pub fn next_indices(&mut self) -> Vec<usize> {
        if self.pos >= self.order.len() {
            self.epoch += 1;
            self.pos = 0;
            self.shuffle();
        }
        let end = (self.pos + self.batch_size).min(self.order.len());
        let out = self.order[self.pos..end].to_vec();
        self.pos = end;
        out
    }

    pub fn next_batch(&mut self, data: &Dataset) -> (Tensor, Vec<usize>) {
        let idx = self.next_indices();
        let (mut x, y) = data.batch(&idx);
        if !self.augment.is_identity() {
            let n = data.image_len();
            let shape = data.shape;
            let aug = self.augment;
            for chunk in x.data_mut().chunks_mut(n) {
                let out = aug.apply(chunk, shape, &mut self.aug_rng);
                chunk.copy_from_slice(&out);
            }
        }
        (x, y)
    }
}
