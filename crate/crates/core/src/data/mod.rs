//! Images, label maps, tiling and the synthetic dataset.
//!
//! Images are `[3, H, W]` tensors scaled to `[0, 1]`; label maps are row-major
//! `u8` class ids where [`IGNORE_INDEX`] marks unscored pixels.

mod dataset;
mod pnm;
mod synth;
mod tile;

pub use dataset::{load_split, read_split_file, write_dataset, SPLIT_FILE};
pub use pnm::{parse_pgm, parse_ppm, read_pgm, read_ppm, Raster};
pub use synth::{synth_dataset, SyntheticSpec, PALETTE};
pub use tile::{tile, tile_image, tile_origins, Tile};

use std::path::Path;

use crate::error::{shape_err, Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const IGNORE_INDEX: u8 = 255;

/// Per-pixel class ids of one image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    pub height: usize,
    pub width: usize,
    pub data: Vec<u8>,
}

impl LabelMap {
    /// Rejects ids that are neither below `num_classes` nor the ignore index.
    pub fn check_classes(&self, num_classes: usize) -> Result<()> {
        match self
            .data
            .iter()
            .position(|&v| v != IGNORE_INDEX && v as usize >= num_classes)
        {
            Some(i) => Err(Error::Argument(format!(
                "label {} at pixel ({}, {}) is out of range for {num_classes} classes",
                self.data[i],
                i / self.width,
                i % self.width
            ))),
            None => Ok(()),
        }
    }

    pub fn to_raster(&self) -> Raster {
        Raster {
            width: self.width,
            height: self.height,
            channels: 1,
            data: self.data.clone(),
        }
    }
}

/// One image with its labels.
#[derive(Debug, Clone)]
pub struct Sample<T: Scalar> {
    pub image: Tensor<T>,
    pub labels: LabelMap,
}

/// Images `[B, 3, H, W]` and labels `[B, H, W]`, row-major.
#[derive(Debug, Clone)]
pub struct SegmentationBatch<T: Scalar> {
    pub images: Tensor<T>,
    pub labels: Vec<u8>,
}

impl<T: Scalar> SegmentationBatch<T> {
    pub fn stack(samples: &[&Sample<T>]) -> Result<Self> {
        let first = samples
            .first()
            .ok_or_else(|| Error::EmptyBatch("no samples to stack".into()))?;
        let shape = first.image.shape().to_vec();
        let mut data = Vec::with_capacity(samples.len() * first.image.numel());
        let mut labels = Vec::with_capacity(samples.len() * first.labels.data.len());
        for s in samples {
            if s.image.shape() != shape.as_slice() {
                return Err(shape_err!(
                    "cannot stack {:?} with {:?}",
                    s.image.shape(),
                    shape
                ));
            }
            data.extend_from_slice(s.image.data());
            labels.extend_from_slice(&s.labels.data);
        }
        let images = Tensor::new(&[samples.len(), shape[0], shape[1], shape[2]], data)?;
        Ok(Self { images, labels })
    }

    pub fn len(&self) -> usize {
        self.images.dim(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// `[3, H, W]` tensor from an 8-bit raster, `v → v / 255`.
pub fn raster_to_image<T: Scalar>(r: &Raster) -> Result<Tensor<T>> {
    if r.channels != 3 {
        return Err(shape_err!(
            "expected an RGB raster, got {} channels",
            r.channels
        ));
    }
    let plane = r.width * r.height;
    Ok(Tensor::from_fn(&[3, r.height, r.width], |i| {
        let (c, p) = (i / plane, i % plane);
        T::lit(r.data[p * 3 + c] as f64 / 255.0)
    }))
}

/// Inverse of [`raster_to_image`], rounding to the nearest 8-bit value.
pub fn image_to_raster<T: Scalar>(image: &Tensor<T>) -> Result<Raster> {
    if image.rank() != 3 || image.dim(0) != 3 {
        return Err(shape_err!("expected [3, H, W], got {:?}", image.shape()));
    }
    let (h, w) = (image.dim(1), image.dim(2));
    let plane = h * w;
    let x = image.data();
    let data = (0..plane * 3)
        .map(|i| {
            let (p, c) = (i / 3, i % 3);
            (x[c * plane + p].as_f64().clamp(0.0, 1.0) * 255.0).round() as u8
        })
        .collect();
    Ok(Raster {
        width: w,
        height: h,
        channels: 3,
        data,
    })
}

pub fn load_image<T: Scalar>(path: &Path) -> Result<Tensor<T>> {
    raster_to_image(&read_ppm(path)?)
}

/// Label ids are passed through unchanged, so 255 stays the ignore index.
pub fn load_label(path: &Path) -> Result<LabelMap> {
    let r = read_pgm(path)?;
    Ok(LabelMap {
        height: r.height,
        width: r.width,
        data: r.data,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn image_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let raster = Raster {
            width: 3,
            height: 2,
            channels: 3,
            data: (0..18).map(|v| (v * 14) as u8).collect(),
        };
        let path = dir.path().join("a.ppm");
        raster.write(&path).unwrap();
        let img: Tensor<f32> = load_image(&path).unwrap();
        assert_eq!(img.shape(), &[3, 2, 3]);
        assert_eq!(image_to_raster(&img).unwrap(), raster);

        let white = parse_ppm(b"P6\n1 1\n255\n\xff\xff\xff").unwrap();
        assert_eq!(
            raster_to_image::<f32>(&white).unwrap().to_vec(),
            vec![1.0, 1.0, 1.0]
        );
    }

    #[test]
    fn label_range_check() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("l.pgm");
        Raster {
            width: 2,
            height: 1,
            channels: 1,
            data: vec![1, 255],
        }
        .write(&path)
        .unwrap();
        let l = load_label(&path).unwrap();
        assert_eq!(l.data[1], IGNORE_INDEX);
        l.check_classes(2).unwrap();
        assert!(l.check_classes(1).is_err());
    }
}
