//! Batching over a preprocessed image cache. Training batches are shuffled
//! and augmented; evaluation batches are neither.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::augment::{augment, AugmentConfig};
use super::image::{preprocess, RgbImage};
use super::{DataError, DatasetManifest};
use crate::tensor::NdArray;

/// Stable 64-bit seed for a `(seed, tag, index)` triple: FNV-1a over the tag
/// followed by a splitmix64 finalizer. Independent of scheduling and of
/// the order in which images are visited.
pub fn derive_seed(seed: u64, tag: &str, index: u64) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in tag.bytes().chain(seed.to_le_bytes()).chain(index.to_le_bytes()) {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    let mut z = h.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Every image of a manifest decoded and preprocessed once.
#[derive(Clone, Debug)]
pub struct ImageCache {
    pub manifest: DatasetManifest,
    images: Vec<NdArray>,
    size: usize,
}

#[derive(Clone, Debug)]
pub struct Batch {
    /// `[N, 3, S, S]`.
    pub images: NdArray,
    /// `[N, 5]`.
    pub labels: NdArray,
    /// Positions in the manifest.
    pub indices: Vec<usize>,
}

impl ImageCache {
    pub fn load(manifest: &DatasetManifest, size: usize) -> Result<Self, DataError> {
        let images = manifest
            .samples
            .iter()
            .map(|s| preprocess(&RgbImage::load(manifest.image_location(s))?, size))
            .collect::<Result<_, _>>()?;
        Ok(ImageCache {
            manifest: manifest.clone(),
            images,
            size,
        })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn image(&self, index: usize) -> &NdArray {
        &self.images[index]
    }

    fn batch(&self, indices: Vec<usize>, images: Vec<NdArray>) -> Batch {
        let images = NdArray::stack(&images).expect("cached images share one shape");
        Batch {
            images,
            labels: self.manifest.labels_array(&indices),
            indices,
        }
    }

    /// Manifest order, no augmentation.
    pub fn eval_batches(&self, batch_size: usize) -> impl Iterator<Item = Batch> + '_ {
        let idx: Vec<usize> = (0..self.len()).collect();
        idx.chunks(batch_size.max(1))
            .map(|c| self.batch(c.to_vec(), c.iter().map(|&i| self.images[i].clone()).collect()))
            .collect::<Vec<_>>()
            .into_iter()
    }
}

/// Produces the shuffled, augmented batches of one training epoch.
#[derive(Clone, Debug)]
pub struct BatchLoader<'a> {
    cache: &'a ImageCache,
    augment: AugmentConfig,
    batch_size: usize,
    seed: u64,
}

impl<'a> BatchLoader<'a> {
    pub fn new(cache: &'a ImageCache, augment: AugmentConfig, batch_size: usize, seed: u64) -> Self {
        BatchLoader {
            cache,
            augment,
            batch_size: batch_size.max(1),
            seed,
        }
    }

    pub fn batches_per_epoch(&self) -> usize {
        self.cache.len().div_ceil(self.batch_size)
    }

    /// Each image's augmentation stream depends only on the seeds, the epoch
    /// and its image_id.
    pub fn epoch(&self, epoch: usize) -> impl Iterator<Item = Batch> + '_ {
        let mut order: Vec<usize> = (0..self.cache.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(
            self.seed,
            "shuffle",
            epoch as u64,
        )));
        let aug_seed = derive_seed(self.seed, "augment", self.augment.seed);
        let chunks: Vec<Vec<usize>> = order.chunks(self.batch_size).map(<[usize]>::to_vec).collect();
        chunks.into_iter().map(move |idx| {
            let images = idx
                .iter()
                .map(|&i| {
                    let id = &self.cache.manifest.samples[i].image_id;
                    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(aug_seed, id, epoch as u64));
                    augment(&self.cache.images[i], &self.augment, &mut rng)
                })
                .collect();
            self.cache.batch(idx, images)
        })
    }
}
