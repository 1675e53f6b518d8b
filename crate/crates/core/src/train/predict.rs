//! Whole-image prediction by tiling.

use crate::data::{tile_image, LabelMap};
use crate::error::{arg_err, Result};
use crate::model::{ModelConfig, UNetMamba};
use crate::scalar::Scalar;
use crate::tensor::{no_grad, Tensor};

/// Tiles per forward pass.
const TILE_BATCH: usize = 8;

/// Largest admissible tile not exceeding `requested` or the image.
pub fn predict_tile_size(height: usize, width: usize, requested: usize) -> Result<usize> {
    let m = ModelConfig::SIZE_MULTIPLE;
    let size = requested.min(height).min(width) / m * m;
    if size == 0 {
        return Err(arg_err!(
            "a {height}x{width} image is smaller than the minimum {m}x{m} tile"
        ));
    }
    Ok(size)
}

/// Argmax labels for a `[3, H, W]` image. Tiles are taken in raster order
/// and later tiles overwrite earlier ones where they overlap.
pub fn predict_labels<T: Scalar>(
    model: &UNetMamba<T>,
    image: &Tensor<T>,
    tile_size: usize,
    stride: usize,
) -> Result<LabelMap> {
    if image.rank() != 3 {
        return Err(arg_err!(
            "expected a [C, H, W] image, got {:?}",
            image.shape()
        ));
    }
    let (h, w) = (image.dim(1), image.dim(2));
    let size = predict_tile_size(h, w, tile_size)?;
    let tiles = tile_image(image, size, stride.min(size))?;
    let mut out = vec![0u8; h * w];
    for chunk in tiles.chunks(TILE_BATCH) {
        let mut data = Vec::with_capacity(chunk.len() * chunk[0].2.numel());
        for (_, _, t) in chunk {
            data.extend_from_slice(t.data());
        }
        let batch = Tensor::new(&[chunk.len(), image.dim(0), size, size], data)?;
        let logits = no_grad(|| model.infer(&batch))?;
        let pred = logits.argmax(1);
        for (b, &(y, x, _)) in chunk.iter().enumerate() {
            for r in 0..size {
                for c in 0..size {
                    out[(y + r) * w + x + c] = pred[b * size * size + r * size + c] as u8;
                }
            }
        }
    }
    Ok(LabelMap {
        height: h,
        width: w,
        data: out,
    })
}
