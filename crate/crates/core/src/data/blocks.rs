//! Non-overlapping block tiling with reflect padding.

use super::{BlockDataset, GrayImage};
use crate::error::{Error, Result};

/// Geometry needed to put blocks back together.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BlockLayout {
    pub block: usize,
    pub height: usize,
    pub width: usize,
    pub blocks_down: usize,
    pub blocks_across: usize,
}

impl BlockLayout {
    pub fn count(&self) -> usize {
        self.blocks_down * self.blocks_across
    }

    pub fn padded_height(&self) -> usize {
        self.blocks_down * self.block
    }

    pub fn padded_width(&self) -> usize {
        self.blocks_across * self.block
    }
}

/// Mirror index without repeating the edge sample: `len, len+1, …` map to
/// `len-2, len-3, …`, folding again as often as needed.
fn reflect(i: usize, len: usize) -> usize {
    if len == 1 {
        return 0;
    }
    let period = 2 * (len - 1);
    let m = i % period;
    if m < len {
        m
    } else {
        period - m
    }
}

/// Pads bottom/right by reflection to multiples of `b` and cuts row-major blocks.
pub fn extract_blocks(image: &GrayImage, b: usize) -> Result<(BlockDataset, BlockLayout)> {
    if b == 0 {
        return Err(Error::invalid("block side must be positive"));
    }
    let layout = BlockLayout {
        block: b,
        height: image.height(),
        width: image.width(),
        blocks_down: image.height().div_ceil(b),
        blocks_across: image.width().div_ceil(b),
    };
    let mut blocks = Vec::with_capacity(layout.count());
    for by in 0..layout.blocks_down {
        for bx in 0..layout.blocks_across {
            let mut block = Vec::with_capacity(b * b);
            for y in 0..b {
                let sy = reflect(by * b + y, image.height());
                for x in 0..b {
                    block.push(image.get(sy, reflect(bx * b + x, image.width())));
                }
            }
            blocks.push(block);
        }
    }
    Ok((BlockDataset::new(b, blocks, None)?, layout))
}

/// Inverse of [`extract_blocks`]: tiles the blocks and crops the padding.
/// Values are clamped into `[0, 1]`.
pub fn assemble_image(blocks: &[Vec<f32>], layout: &BlockLayout) -> Result<GrayImage> {
    let b = layout.block;
    if blocks.len() != layout.count() {
        return Err(Error::dim(format!(
            "{} blocks for a {}x{} grid",
            blocks.len(),
            layout.blocks_down,
            layout.blocks_across
        )));
    }
    if let Some(bad) = blocks.iter().find(|blk| blk.len() != b * b) {
        return Err(Error::dim(format!("block of {} values, expected {}", bad.len(), b * b)));
    }
    let mut pixels = Vec::with_capacity(layout.height * layout.width);
    for y in 0..layout.height {
        let (by, iy) = (y / b, y % b);
        for x in 0..layout.width {
            let (bx, ix) = (x / b, x % b);
            pixels.push(blocks[by * layout.blocks_across + bx][iy * b + ix]);
        }
    }
    GrayImage::from_clamped(layout.height, layout.width, pixels)
}

/// All fully contained `b × b` windows on a `stride` grid, no padding.
pub fn extract_strided(image: &GrayImage, b: usize, stride: usize) -> Result<BlockDataset> {
    if b == 0 || stride == 0 {
        return Err(Error::invalid("block side and stride must be positive"));
    }
    let mut blocks = Vec::new();
    if image.height() >= b && image.width() >= b {
        for y0 in (0..=image.height() - b).step_by(stride) {
            for x0 in (0..=image.width() - b).step_by(stride) {
                let mut block = Vec::with_capacity(b * b);
                for y in 0..b {
                    for x in 0..b {
                        block.push(image.get(y0 + y, x0 + x));
                    }
                }
                blocks.push(block);
            }
        }
    }
    BlockDataset::new(b, blocks, None)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(h: usize, w: usize) -> GrayImage {
        let px = (0..h * w).map(|i| (i % 251) as f32 / 250.0).collect();
        GrayImage::new(h, w, px).unwrap()
    }

    #[test]
    fn block_counts() {
        let (d, l) = extract_blocks(&ramp(256, 256), 33).unwrap();
        assert_eq!(d.len(), 64);
        assert_eq!((l.padded_height(), l.padded_width()), (264, 264));
        let (d, _) = extract_blocks(&ramp(512, 512), 33).unwrap();
        assert_eq!(d.len(), 256);
    }

    #[test]
    fn single_block_equals_image() {
        let img = ramp(33, 33);
        let (d, _) = extract_blocks(&img, 33).unwrap();
        assert_eq!(d.len(), 1);
        assert_eq!(d.blocks()[0], img.pixels());
    }

    #[test]
    fn reflect_padding_mirrors_interior() {
        let img = GrayImage::new(1, 3, vec![0.1, 0.2, 0.3]).unwrap();
        let (d, _) = extract_blocks(&img, 5).unwrap();
        // columns 3, 4 mirror 1, 0; rows mirror the single row
        assert_eq!(&d.blocks()[0][..5], &[0.1, 0.2, 0.3, 0.2, 0.1]);
        assert_eq!(reflect(7, 3), 1);
    }

    #[test]
    fn round_trip_is_exact() {
        let img = ramp(100, 77);
        let (d, l) = extract_blocks(&img, 16).unwrap();
        assert_eq!(assemble_image(d.blocks(), &l).unwrap(), img);
    }

    #[test]
    fn strided_windows() {
        let d = extract_strided(&ramp(10, 12), 4, 3).unwrap();
        // rows 0,3,6 × cols 0,3,6
        assert_eq!(d.len(), 9);
        assert!(extract_strided(&ramp(3, 3), 4, 1).unwrap().is_empty());
    }
}
