//! Fixed-size crops in raster order.

use super::{LabelMap, Sample};
use crate::error::{arg_err, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Start offsets along one axis. The last tile is pulled back to end at the
/// edge, overlapping its neighbour, instead of being padded.
fn axis_origins(len: usize, size: usize, stride: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut p = 0;
    loop {
        if p + size >= len {
            out.push(len - size);
            return out;
        }
        out.push(p);
        p += stride;
    }
}

/// `(y, x)` of every tile, row by row.
pub fn tile_origins(
    height: usize,
    width: usize,
    size: usize,
    stride: usize,
) -> Result<Vec<(usize, usize)>> {
    if size == 0 || stride == 0 {
        return Err(arg_err!("tile size and stride must be positive"));
    }
    if size > height || size > width {
        return Err(arg_err!(
            "tile size {size} exceeds the {height}x{width} image"
        ));
    }
    if stride > size {
        return Err(arg_err!(
            "tile stride {stride} exceeds tile size {size}; pixels between tiles would be skipped"
        ));
    }
    let ys = axis_origins(height, size, stride);
    let xs = axis_origins(width, size, stride);
    Ok(ys
        .iter()
        .flat_map(|&y| xs.iter().map(move |&x| (y, x)))
        .collect())
}

#[derive(Debug, Clone)]
pub struct Tile<T: Scalar> {
    pub y: usize,
    pub x: usize,
    pub sample: Sample<T>,
}

fn crop<T: Scalar>(image: &Tensor<T>, y: usize, x: usize, size: usize) -> Tensor<T> {
    let (h, w) = (image.dim(1), image.dim(2));
    let src = image.data();
    Tensor::from_fn(&[image.dim(0), size, size], |i| {
        let (c, r, col) = (i / (size * size), (i / size) % size, i % size);
        src[c * h * w + (y + r) * w + x + col]
    })
}

/// Crops of a `[C, H, W]` image.
pub fn tile_image<T: Scalar>(
    image: &Tensor<T>,
    size: usize,
    stride: usize,
) -> Result<Vec<(usize, usize, Tensor<T>)>> {
    if image.rank() != 3 {
        return Err(arg_err!("expected [C, H, W], got {:?}", image.shape()));
    }
    Ok(tile_origins(image.dim(1), image.dim(2), size, stride)?
        .into_iter()
        .map(|(y, x)| (y, x, crop(image, y, x, size)))
        .collect())
}

pub fn tile<T: Scalar>(
    image: &Tensor<T>,
    labels: &LabelMap,
    size: usize,
    stride: usize,
) -> Result<Vec<Tile<T>>> {
    if image.rank() != 3 || image.dim(1) != labels.height || image.dim(2) != labels.width {
        return Err(arg_err!(
            "image {:?} and {}x{} labels disagree",
            image.shape(),
            labels.height,
            labels.width
        ));
    }
    Ok(tile_image(image, size, stride)?
        .into_iter()
        .map(|(y, x, image)| {
            let data = (0..size * size)
                .map(|i| labels.data[(y + i / size) * labels.width + x + i % size])
                .collect();
            Tile {
                y,
                x,
                sample: Sample {
                    image,
                    labels: LabelMap {
                        height: size,
                        width: size,
                        data,
                    },
                },
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn origin_enumeration() {
        assert_eq!(tile_origins(64, 64, 64, 64).unwrap(), vec![(0, 0)]);
        assert_eq!(
            tile_origins(100, 100, 64, 64).unwrap(),
            vec![(0, 0), (0, 36), (36, 0), (36, 36)]
        );
        assert_eq!(tile_origins(48, 48, 32, 16).unwrap().len(), 4);
        assert!(tile_origins(30, 64, 32, 32).is_err());
    }

    #[test]
    fn coverage_and_monotone() {
        for (h, w, size) in [(100, 70, 32), (33, 33, 32), (64, 96, 16)] {
            let mut prev = usize::MAX;
            for stride in 1..=size {
                let origins = tile_origins(h, w, size, stride).unwrap();
                assert!(origins.len() <= prev);
                prev = origins.len();
                let mut covered = vec![false; h * w];
                for (y, x) in origins {
                    for r in y..y + size {
                        for c in x..x + size {
                            covered[r * w + c] = true;
                        }
                    }
                }
                assert!(covered.iter().all(|&c| c));
            }
        }
    }

    #[test]
    fn crops_follow_origins() {
        let img = Tensor::<f32>::from_fn(&[1, 4, 4], |i| i as f32);
        let labels = LabelMap {
            height: 4,
            width: 4,
            data: (0..16).collect(),
        };
        let tiles = tile(&img, &labels, 3, 3).unwrap();
        assert_eq!(tiles.len(), 4);
        let last = &tiles[3];
        assert_eq!((last.y, last.x), (1, 1));
        assert_eq!(
            last.sample.image.to_vec(),
            vec![5., 6., 7., 9., 10., 11., 13., 14., 15.]
        );
        assert_eq!(
            last.sample.labels.data,
            vec![5, 6, 7, 9, 10, 11, 13, 14, 15]
        );
    }
}
