//! On-disk dataset layout:
//!
//! ```text
//! <root>/images/<stem>.ppm
//! <root>/labels/<stem>.pgm
//! <root>/split.txt          "<split> <stem>" per line, e.g. "train tile_003"
//! ```

use std::fs;
use std::path::Path;

use super::{image_to_raster, load_image, load_label, Sample};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const SPLIT_FILE: &str = "split.txt";

/// `(split, stem)` pairs in file order.
pub fn read_split_file(root: &Path) -> Result<Vec<(String, String)>> {
    let path = root.join(SPLIT_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line.split_whitespace();
        match (parts.next(), parts.next(), parts.next()) {
            (Some(split), Some(stem), None) => out.push((split.to_string(), stem.to_string())),
            _ => {
                return Err(Error::Config(format!(
                    "{}:{}: expected \"<split> <stem>\", got {line:?}",
                    path.display(),
                    i + 1
                )))
            }
        }
    }
    Ok(out)
}

/// Loads every sample of `split`, checking labels against `num_classes`.
pub fn load_split<T: Scalar>(
    root: &Path,
    split: &str,
    num_classes: usize,
) -> Result<Vec<Sample<T>>> {
    let mut out = Vec::new();
    for (s, stem) in read_split_file(root)? {
        if s != split {
            continue;
        }
        let image = load_image(&root.join("images").join(format!("{stem}.ppm")))?;
        let labels = load_label(&root.join("labels").join(format!("{stem}.pgm")))?;
        if image.dim(1) != labels.height || image.dim(2) != labels.width {
            return Err(Error::Shape(format!(
                "{stem}: image is {}x{}, labels are {}x{}",
                image.dim(1),
                image.dim(2),
                labels.height,
                labels.width
            )));
        }
        labels
            .check_classes(num_classes)
            .map_err(|e| Error::Argument(format!("{stem}: {e}")))?;
        out.push(Sample { image, labels });
    }
    if out.is_empty() {
        return Err(Error::Config(format!(
            "split {split:?} lists no samples in {}",
            root.display()
        )));
    }
    Ok(out)
}

/// Writes samples as `<prefix>_NNNN` with the given split name for each.
pub fn write_dataset<T: Scalar>(
    root: &Path,
    samples: &[(&str, &Sample<T>)],
    prefix: &str,
) -> Result<()> {
    for sub in ["images", "labels"] {
        let dir = root.join(sub);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }
    let mut split = String::new();
    for (i, (name, s)) in samples.iter().enumerate() {
        let stem = format!("{prefix}_{i:04}");
        image_to_raster(&s.image)?.write(&root.join("images").join(format!("{stem}.ppm")))?;
        s.labels
            .to_raster()
            .write(&root.join("labels").join(format!("{stem}.pgm")))?;
        split.push_str(&format!("{name} {stem}\n"));
    }
    let path = root.join(SPLIT_FILE);
    fs::write(&path, split).map_err(|e| Error::io(&path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_dataset, SyntheticSpec};

    #[test]
    fn write_then_load() {
        let dir = tempfile::tempdir().unwrap();
        let samples = synth_dataset::<f32>(&SyntheticSpec::new(3, 3, 16, 16, 3)).unwrap();
        let named: Vec<(&str, &Sample<f32>)> = vec![
            ("train", &samples[0]),
            ("val", &samples[1]),
            ("train", &samples[2]),
        ];
        write_dataset(dir.path(), &named, "s").unwrap();
        let train = load_split::<f32>(dir.path(), "train", 3).unwrap();
        assert_eq!(train.len(), 2);
        assert_eq!(train[1].labels, samples[2].labels);
        // images are quantised to 8 bits on disk
        for (a, b) in train[0].image.data().iter().zip(samples[0].image.data()) {
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-6);
        }
        assert!(load_split::<f32>(dir.path(), "test", 3).is_err());
        assert!(load_split::<f32>(dir.path(), "train", 2).is_err());
    }
}
