//! Patchification: slice an image into P x P patches, flatten them
//! channel-major, and optionally keep a random subset.

use rand::Rng;

use crate::error::{Error, Result};
use crate::image::ImageTensor;
use crate::tensor::Tensor;

/// Flattened patches plus their grid bookkeeping.
///
/// `patches` holds one row per *kept* patch; `grid_pos` gives each kept
/// patch's (row, col) in the full grid, and `keep_mask` marks the kept
/// slots of the full row-major grid.
#[derive(Debug, Clone)]
pub struct PatchBatch {
    pub patches: Tensor,
    pub grid_pos: Vec<(usize, usize)>,
    pub keep_mask: Vec<bool>,
    pub grid: (usize, usize),
    pub patch_size: usize,
}

impl PatchBatch {
    pub fn n_kept(&self) -> usize {
        self.grid_pos.len()
    }

    pub fn patch_dim(&self) -> usize {
        self.patch_size * self.patch_size * ImageTensor::CHANNELS
    }
}

/// Slice into P x P patches in row-major grid order, zero-padding the
/// bottom/right edges up to the next multiple of P. Patch (r, c) covers
/// pixels `[rP..(r+1)P) x [cP..(c+1)P)` flattened channel-major.
pub fn patchify(img: &ImageTensor, patch_size: usize) -> PatchBatch {
    assert!(patch_size > 0, "patch size must be positive");
    let (h, w) = (img.height(), img.width());
    let rows = h.div_ceil(patch_size);
    let cols = w.div_ceil(patch_size);
    let dim = patch_size * patch_size * ImageTensor::CHANNELS;
    let mut data = vec![0.0; rows * cols * dim];
    let mut grid_pos = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            let base = (r * cols + c) * dim;
            for ch in 0..ImageTensor::CHANNELS {
                for py in 0..patch_size {
                    let y = r * patch_size + py;
                    if y >= h {
                        continue; // zero padding
                    }
                    for px in 0..patch_size {
                        let x = c * patch_size + px;
                        if x >= w {
                            continue;
                        }
                        data[base + (ch * patch_size + py) * patch_size + px] = img.get(ch, y, x);
                    }
                }
            }
            grid_pos.push((r, c));
        }
    }
    PatchBatch {
        patches: Tensor::from_vec(&[rows * cols, dim], data),
        grid_pos,
        keep_mask: vec![true; rows * cols],
        grid: (rows, cols),
        patch_size,
    }
}

/// Rebuild the image from a full (unsampled) patch batch.
pub fn unpatchify(pb: &PatchBatch, h: usize, w: usize) -> Result<ImageTensor> {
    let (rows, cols) = pb.grid;
    if pb.n_kept() != rows * cols {
        return Err(Error::Image(
            "unpatchify requires the full patch grid".into(),
        ));
    }
    let p = pb.patch_size;
    let mut img = ImageTensor::new(h, w)?;
    for (idx, &(r, c)) in pb.grid_pos.iter().enumerate() {
        let row = pb.patches.row(idx);
        for ch in 0..ImageTensor::CHANNELS {
            for py in 0..p {
                let y = r * p + py;
                if y >= h {
                    continue;
                }
                for px in 0..p {
                    let x = c * p + px;
                    if x >= w {
                        continue;
                    }
                    img.set(ch, y, x, row[(ch * p + py) * p + px]);
                }
            }
        }
    }
    Ok(img)
}

/// Keep at most `max_keep` patches, chosen uniformly without replacement.
/// Kept patches preserve their relative order and their original grid
/// positions; nothing is renumbered.
pub fn sample_patches(pb: &PatchBatch, max_keep: usize, rng: &mut impl Rng) -> PatchBatch {
    assert!(max_keep >= 1, "max_keep must be >= 1");
    let n = pb.n_kept();
    if n <= max_keep {
        return pb.clone();
    }
    // Partial Fisher-Yates over the index list, then restore order.
    let mut indices: Vec<usize> = (0..n).collect();
    for i in 0..max_keep {
        let j = rng.gen_range(i..n);
        indices.swap(i, j);
    }
    let mut chosen = indices[..max_keep].to_vec();
    chosen.sort_unstable();

    let dim = pb.patch_dim();
    let mut data = Vec::with_capacity(max_keep * dim);
    let mut grid_pos = Vec::with_capacity(max_keep);
    let mut keep_mask = vec![false; pb.keep_mask.len()];
    let (_, cols) = pb.grid;
    for &i in &chosen {
        data.extend_from_slice(pb.patches.row(i));
        let pos = pb.grid_pos[i];
        grid_pos.push(pos);
        keep_mask[pos.0 * cols + pos.1] = true;
    }
    PatchBatch {
        patches: Tensor::from_vec(&[max_keep, dim], data),
        grid_pos,
        keep_mask,
        grid: pb.grid,
        patch_size: pb.patch_size,
    }
}
