//! Grayscale images, block datasets, and synthetic stand-in data.

mod blocks;
mod pgm;
mod synth;

pub use blocks::{assemble_image, extract_blocks, extract_strided, BlockLayout};
pub use pgm::{load_pgm, load_pgm_dir, save_pgm, PGM_MAXVAL};
pub use synth::{dct_basis, synth_dataset, SynthKind, SHAPE_CLASSES};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Grayscale image with pixels in `[0, 1]`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct GrayImage {
    height: usize,
    width: usize,
    pixels: Vec<f32>,
}

impl GrayImage {
    pub fn new(height: usize, width: usize, pixels: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::dim(format!("image dimensions {height}x{width}")));
        }
        if pixels.len() != height * width {
            return Err(Error::dim(format!(
                "{height}x{width} image needs {} pixels, got {}",
                height * width,
                pixels.len()
            )));
        }
        if let Some(p) = pixels.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::invalid(format!("pixel value {p} outside [0, 1]")));
        }
        Ok(Self {
            height,
            width,
            pixels,
        })
    }

    /// Clamps every value into `[0, 1]`; non-finite values become 0.
    pub fn from_clamped(height: usize, width: usize, mut pixels: Vec<f32>) -> Result<Self> {
        for p in &mut pixels {
            *p = if p.is_finite() { p.clamp(0.0, 1.0) } else { 0.0 };
        }
        Self::new(height, width, pixels)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> f32 {
        self.pixels[y * self.width + x]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SplitTag {
    Train,
    Val,
    Test,
    Unsplit,
}

/// Flattened `b × b` blocks with optional class labels.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockDataset {
    block: usize,
    blocks: Vec<Vec<f32>>,
    labels: Option<Vec<usize>>,
    pub split: SplitTag,
}

impl BlockDataset {
    pub fn new(block: usize, blocks: Vec<Vec<f32>>, labels: Option<Vec<usize>>) -> Result<Self> {
        if block == 0 {
            return Err(Error::invalid("block side must be positive"));
        }
        if let Some(b) = blocks.iter().find(|b| b.len() != block * block) {
            return Err(Error::dim(format!(
                "block of {} values in a {block}x{block} dataset",
                b.len()
            )));
        }
        if let Some(l) = &labels {
            if l.len() != blocks.len() {
                return Err(Error::dim(format!(
                    "{} labels for {} blocks",
                    l.len(),
                    blocks.len()
                )));
            }
        }
        Ok(Self {
            block,
            blocks,
            labels,
            split: SplitTag::Unsplit,
        })
    }

    pub fn block(&self) -> usize {
        self.block
    }

    pub fn n(&self) -> usize {
        self.block * self.block
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn blocks(&self) -> &[Vec<f32>] {
        &self.blocks
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    /// Number of classes implied by the labels (largest label + 1).
    pub fn num_classes(&self) -> Option<usize> {
        self.labels
            .as_ref()
            .map(|l| l.iter().copied().max().map_or(0, |m| m + 1))
    }

    /// Stacks the chosen blocks into a `[len, n]` tensor.
    pub fn batch(&self, indices: &[usize]) -> Tensor<f32> {
        let n = self.n();
        let mut data = Vec::with_capacity(indices.len() * n);
        for &i in indices {
            data.extend_from_slice(&self.blocks[i]);
        }
        Tensor::new(vec![indices.len(), n], data).expect("blocks are n long")
    }

    pub fn batch_labels(&self, indices: &[usize]) -> Option<Vec<usize>> {
        self.labels
            .as_ref()
            .map(|l| indices.iter().map(|&i| l[i]).collect())
    }

    /// Subset in the given order.
    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            block: self.block,
            blocks: indices.iter().map(|&i| self.blocks[i].clone()).collect(),
            labels: self.batch_labels(indices),
            split: self.split,
        }
    }

    pub fn with_split(mut self, split: SplitTag) -> Self {
        self.split = split;
        self
    }
}

/// Seeded shuffle into train/val/test of sizes `floor(f₀·N)`, `floor(f₁·N)`
/// and the remainder.
pub fn split(
    dataset: &BlockDataset,
    fractions: [f64; 3],
    seed: u64,
) -> Result<(BlockDataset, BlockDataset, BlockDataset)> {
    if fractions.iter().any(|f| !(0.0..=1.0).contains(f))
        || (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9
    {
        return Err(Error::invalid(format!(
            "split fractions {fractions:?} must be in [0, 1] and sum to 1"
        )));
    }
    let total = dataset.len();
    let n_train = ((fractions[0] * total as f64).floor() as usize).min(total);
    let n_val = ((fractions[1] * total as f64).floor() as usize).min(total - n_train);
    let mut order: Vec<usize> = (0..total).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (train, rest) = order.split_at(n_train);
    let (val, test) = rest.split_at(n_val);
    Ok((
        dataset.select(train).with_split(SplitTag::Train),
        dataset.select(val).with_split(SplitTag::Val),
        dataset.select(test).with_split(SplitTag::Test),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn numbered(count: usize) -> BlockDataset {
        let blocks = (0..count).map(|i| vec![i as f32 / count as f32; 4]).collect();
        let labels = (0..count).map(|i| i % 3).collect();
        BlockDataset::new(2, blocks, Some(labels)).unwrap()
    }

    #[test]
    fn split_all_train() {
        let d = numbered(10);
        let (tr, va, te) = split(&d, [1.0, 0.0, 0.0], 1).unwrap();
        assert_eq!((tr.len(), va.len(), te.len()), (10, 0, 0));
    }

    #[test]
    fn split_rounding_rule() {
        let d = numbered(17);
        let (tr, va, te) = split(&d, [0.5, 0.3, 0.2], 4).unwrap();
        assert_eq!(tr.len(), 8);
        assert_eq!(va.len(), 5);
        assert_eq!(te.len(), 4);
    }

    #[test]
    fn split_is_a_partition() {
        let d = numbered(23);
        let (tr, va, te) = split(&d, [0.6, 0.2, 0.2], 9).unwrap();
        let mut seen: Vec<u32> = tr
            .blocks()
            .iter()
            .chain(va.blocks())
            .chain(te.blocks())
            .map(|b| (b[0] * 23.0).round() as u32)
            .collect();
        seen.sort();
        assert_eq!(seen, (0..23).collect::<Vec<_>>());
        // labels travel with their blocks
        for part in [&tr, &va, &te] {
            for (b, &l) in part.blocks().iter().zip(part.labels().unwrap()) {
                assert_eq!((b[0] * 23.0).round() as usize % 3, l);
            }
        }
    }

    #[test]
    fn split_rejects_bad_fractions() {
        let d = numbered(5);
        assert!(split(&d, [0.5, 0.2, 0.2], 0).is_err());
        assert!(split(&d, [1.2, -0.2, 0.0], 0).is_err());
    }

    #[test]
    fn image_range_is_enforced() {
        assert!(GrayImage::new(1, 2, vec![0.0, 1.5]).is_err());
        let img = GrayImage::from_clamped(1, 3, vec![-0.5, 0.5, f32::NAN]).unwrap();
        assert_eq!(img.pixels(), &[0.0, 0.5, 0.0]);
    }
}
