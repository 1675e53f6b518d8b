//! Seeded synthetic scenes: coloured rectangles and discs on a background.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{LabelMap, Sample};
use crate::error::{Error, Result};
use crate::rng::SeedStream;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Base RGB colour of each class; class 0 is the background. Classes past the
/// end of the table get colours from [`class_colour`].
pub const PALETTE: [[f64; 3]; 8] = [
    [0.15, 0.15, 0.15],
    [0.90, 0.20, 0.20],
    [0.20, 0.80, 0.25],
    [0.20, 0.35, 0.90],
    [0.90, 0.85, 0.20],
    [0.80, 0.25, 0.80],
    [0.20, 0.80, 0.80],
    [0.95, 0.60, 0.20],
];

pub const NOISE_SIGMA: f64 = 0.05;

fn class_colour(k: usize) -> [f64; 3] {
    if k < PALETTE.len() {
        return PALETTE[k];
    }
    // golden-ratio hue walk, full saturation
    let hue = (k as f64 * 0.618_033_988_75).fract() * 6.0;
    let x = 1.0 - (hue % 2.0 - 1.0).abs();
    match hue as usize {
        0 => [1.0, x, 0.0],
        1 => [x, 1.0, 0.0],
        2 => [0.0, 1.0, x],
        3 => [0.0, x, 1.0],
        4 => [x, 0.0, 1.0],
        _ => [1.0, 0.0, x],
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub seed: u64,
    pub num_classes: usize,
    pub height: usize,
    pub width: usize,
    pub count: usize,
    /// Inclusive range of shapes drawn per image.
    pub shapes_per_image: (usize, usize),
    /// Range of rectangle half-extents and disc radii, as fractions of the
    /// shorter image side. The default keeps shapes several times wider than
    /// the decoder's stride-4 output grid, so boundaries are learnable.
    pub shape_scale: (f64, f64),
    /// Target share of foreground pixels for classes `1..K`, in that order.
    /// Empty means uniform.
    pub class_weights: Vec<f64>,
}

impl SyntheticSpec {
    pub fn new(seed: u64, num_classes: usize, height: usize, width: usize, count: usize) -> Self {
        Self {
            seed,
            num_classes,
            height,
            width,
            count,
            shapes_per_image: (1, 2),
            shape_scale: (0.3, 0.5),
            class_weights: Vec::new(),
        }
    }

    fn targets(&self) -> Result<Vec<f64>> {
        let fg = self.num_classes - 1;
        let w = if self.class_weights.is_empty() {
            vec![1.0; fg]
        } else {
            self.class_weights.clone()
        };
        if w.len() != fg || w.iter().any(|&v| v.is_nan() || v < 0.0) || w.iter().sum::<f64>() <= 0.0
        {
            return Err(Error::Config(format!(
                "class_weights must hold {fg} non-negative values with a positive sum, got {:?}",
                self.class_weights
            )));
        }
        let total: f64 = w.iter().sum();
        Ok(w.iter().map(|v| v / total).collect())
    }
}

/// Generates `spec.count` images.
///
/// Shape geometry is random. Each shape's class is the foreground class
/// furthest below its target share of the foreground pixels painted so far
/// (across the whole dataset), so the class balance follows `class_weights`
/// closely even though shapes differ in size and overlap.
pub fn synth_dataset<T: Scalar>(spec: &SyntheticSpec) -> Result<Vec<Sample<T>>> {
    if spec.num_classes < 2 || spec.num_classes > 255 {
        return Err(Error::Config(format!(
            "num_classes must lie in 2..=255, got {}",
            spec.num_classes
        )));
    }
    let (lo, hi) = spec.shape_scale;
    if spec.height == 0
        || spec.width == 0
        || spec.shapes_per_image.0 > spec.shapes_per_image.1
        || !(lo > 0.0 && lo <= hi)
    {
        return Err(Error::Config(format!("invalid synthetic spec {spec:?}")));
    }
    let targets = spec.targets()?;
    let (h, w) = (spec.height, spec.width);
    let root = SeedStream::new(spec.seed).child("synth");
    let noise = Normal::new(0.0, NOISE_SIGMA).expect("valid sigma");
    let mut painted = vec![0u64; spec.num_classes];
    let mut out = Vec::with_capacity(spec.count);

    for index in 0..spec.count {
        let mut rng = root.index(index as u64).rng();
        let mut labels = vec![0u8; h * w];
        let mut counts = vec![0u64; spec.num_classes];
        counts[0] = (h * w) as u64;
        let shapes = rng.random_range(spec.shapes_per_image.0..=spec.shapes_per_image.1);
        for _ in 0..shapes {
            let fg_total: u64 = painted[1..]
                .iter()
                .zip(&counts[1..])
                .map(|(a, b)| a + b)
                .sum();
            let class = 1
                + (0..targets.len())
                    .max_by(|&a, &b| {
                        let deficit = |c: usize| {
                            targets[c] * fg_total as f64 - (painted[c + 1] + counts[c + 1]) as f64
                        };
                        deficit(a).total_cmp(&deficit(b)).then(b.cmp(&a))
                    })
                    .expect("at least one foreground class");
            let side = h.min(w) as f64;
            let extent = |rng: &mut rand_chacha::ChaCha8Rng| {
                rng.random_range(side * lo..=side * hi).max(1.0)
            };
            let (cy, cx) = (rng.random_range(0..h) as f64, rng.random_range(0..w) as f64);
            let inside: Box<dyn Fn(f64, f64) -> bool> = if rng.random_bool(0.5) {
                let (hh, hw) = (extent(&mut rng), extent(&mut rng));
                Box::new(move |y, x| (y - cy).abs() <= hh && (x - cx).abs() <= hw)
            } else {
                let r = extent(&mut rng);
                Box::new(move |y, x| (y - cy).powi(2) + (x - cx).powi(2) <= r * r)
            };
            for y in 0..h {
                for x in 0..w {
                    if inside(y as f64, x as f64) {
                        let old = &mut labels[y * w + x];
                        counts[*old as usize] -= 1;
                        counts[class] += 1;
                        *old = class as u8;
                    }
                }
            }
        }
        for (p, c) in painted.iter_mut().zip(&counts) {
            *p += c;
        }

        let plane = h * w;
        let mut image = vec![T::zero(); 3 * plane];
        for (p, &l) in labels.iter().enumerate() {
            let colour = class_colour(l as usize);
            for (c, base) in colour.iter().enumerate() {
                let v: f64 = base + noise.sample(&mut rng);
                image[c * plane + p] = T::lit(v.clamp(0.0, 1.0));
            }
        }
        out.push(Sample {
            image: Tensor::new(&[3, h, w], image)?,
            labels: LabelMap {
                height: h,
                width: w,
                data: labels,
            },
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reproducible() {
        let spec = SyntheticSpec::new(7, 4, 24, 24, 5);
        let a = synth_dataset::<f32>(&spec).unwrap();
        let b = synth_dataset::<f32>(&spec).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.image.to_vec(), y.image.to_vec());
            assert_eq!(x.labels, y.labels);
        }
        let c = synth_dataset::<f32>(&SyntheticSpec::new(8, 4, 24, 24, 5)).unwrap();
        assert_ne!(a[0].labels, c[0].labels);
    }

    #[test]
    fn labels_in_range_and_images_in_unit_box() {
        for s in synth_dataset::<f32>(&SyntheticSpec::new(1, 3, 48, 48, 10)).unwrap() {
            s.labels.check_classes(3).unwrap();
            assert!(s.image.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn class_balance_follows_weights() {
        let spec = SyntheticSpec {
            class_weights: vec![1.0, 2.0, 1.0],
            ..SyntheticSpec::new(0, 4, 48, 48, 100)
        };
        let mut counts = [0usize; 4];
        for s in synth_dataset::<f32>(&spec).unwrap() {
            for &l in &s.labels.data {
                counts[l as usize] += 1;
            }
        }
        let fg: usize = counts[1..].iter().sum();
        for (c, target) in [0.25, 0.5, 0.25].iter().enumerate() {
            let share = counts[c + 1] as f64 / fg as f64;
            assert!(
                (share - target).abs() <= 0.1 * target,
                "class {}: {share} vs {target}",
                c + 1
            );
        }
    }

    #[test]
    fn rejects_bad_specs() {
        assert!(synth_dataset::<f32>(&SyntheticSpec::new(0, 1, 8, 8, 1)).is_err());
        let bad = SyntheticSpec {
            class_weights: vec![1.0],
            ..SyntheticSpec::new(0, 4, 8, 8, 1)
        };
        assert!(synth_dataset::<f32>(&bad).is_err());
    }
}
