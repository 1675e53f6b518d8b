//! Checkpoint directories.
//!
//! ```text
//! <dir>/manifest.txt   name<TAB>shape<TAB>file, one line per parameter
//! <dir>/buffers.txt    same format, batch-norm running statistics
//! <dir>/<name>.rten    one tensor per line above
//! ```
//!
//! Shapes are written `d0xd1x...`.

use std::fs;
use std::path::Path;

use super::layers::Module;
use super::UNetMamba;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{read_rten, write_rten, BatchNormStats, Tensor};

pub const PARAM_MANIFEST: &str = "manifest.txt";
pub const BUFFER_MANIFEST: &str = "buffers.txt";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub file: String,
}

fn format_shape(shape: &[usize]) -> String {
    shape
        .iter()
        .map(|d| d.to_string())
        .collect::<Vec<_>>()
        .join("x")
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let bad = || {
            Error::Checkpoint(format!(
                "{}:{}: malformed line {line:?}",
                path.display(),
                lineno + 1
            ))
        };
        let mut parts = line.split('\t');
        let (name, shape, file) = match (parts.next(), parts.next(), parts.next(), parts.next()) {
            (Some(n), Some(s), Some(f), None) => (n, s, f),
            _ => return Err(bad()),
        };
        let shape = shape
            .split('x')
            .map(|d| d.parse::<usize>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|_| bad())?;
        out.push(ManifestEntry {
            name: name.to_string(),
            shape,
            file: file.to_string(),
        });
    }
    Ok(out)
}

fn write_entries<T: Scalar>(
    dir: &Path,
    manifest: &str,
    tensors: &[(String, Tensor<T>)],
) -> Result<()> {
    let mut text = String::new();
    for (name, t) in tensors {
        let file = format!("{name}.rten");
        write_rten(&dir.join(&file), t)?;
        text.push_str(&format!("{name}\t{}\t{file}\n", format_shape(t.shape())));
    }
    let path = dir.join(manifest);
    fs::write(&path, text).map_err(|e| Error::io(path, e))
}

impl<T: Scalar> UNetMamba<T> {
    fn buffers(&self) -> Vec<(String, Tensor<T>)> {
        let mut out = Vec::new();
        for bn in self.batch_norms() {
            let stats = bn.stats();
            let c = stats.mean.len();
            out.push((
                format!("{}.running_mean", bn.name),
                Tensor::new(&[c], stats.mean).expect("shape"),
            ));
            out.push((
                format!("{}.running_var", bn.name),
                Tensor::new(&[c], stats.var).expect("shape"),
            ));
        }
        out
    }

    pub fn save_checkpoint(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let params: Vec<(String, Tensor<T>)> = self
            .params()
            .into_iter()
            .map(|p| (p.name.clone(), p.tensor.detach()))
            .collect();
        write_entries(dir, PARAM_MANIFEST, &params)?;
        write_entries(dir, BUFFER_MANIFEST, &self.buffers())
    }

    /// Loads every parameter and batch-norm buffer this model owns. Fails,
    /// listing all of them, if any are absent from the checkpoint; entries the
    /// model does not own (e.g. LSM weights when the LSM is off) are ignored.
    pub fn load_checkpoint(&mut self, dir: &Path) -> Result<()> {
        let entries = read_manifest(&dir.join(PARAM_MANIFEST))?;
        let buffers = read_manifest(&dir.join(BUFFER_MANIFEST))?;
        let find =
            |list: &[ManifestEntry], name: &str| list.iter().find(|e| e.name == name).cloned();

        let mut missing: Vec<String> = Vec::new();
        let mut loaded = Vec::new();
        for p in self.params() {
            match find(&entries, &p.name) {
                Some(e) if e.shape == p.shape() => loaded.push(e),
                Some(e) => {
                    return Err(Error::Checkpoint(format!(
                        "{}: checkpoint shape {:?} does not match model shape {:?}",
                        p.name,
                        e.shape,
                        p.shape()
                    )))
                }
                None => missing.push(p.name.clone()),
            }
        }
        let mut bn_loaded = Vec::new();
        for bn in self.batch_norms() {
            let mean = find(&buffers, &format!("{}.running_mean", bn.name));
            let var = find(&buffers, &format!("{}.running_var", bn.name));
            match (mean, var) {
                (Some(m), Some(v)) => bn_loaded.push((m, v)),
                _ => missing.push(format!("{} (running stats)", bn.name)),
            }
        }
        if !missing.is_empty() {
            return Err(Error::Checkpoint(format!(
                "{} missing from checkpoint: {}",
                missing.len(),
                missing.join(", ")
            )));
        }

        let read = |e: &ManifestEntry| -> Result<Tensor<T>> {
            let t: Tensor<T> = read_rten(&dir.join(&e.file))?;
            if t.shape() != e.shape.as_slice() {
                return Err(Error::Checkpoint(format!(
                    "{}: file holds {:?}, manifest says {:?}",
                    e.file,
                    t.shape(),
                    e.shape
                )));
            }
            Ok(t)
        };
        let values = loaded.iter().map(read).collect::<Result<Vec<_>>>()?;
        let stats = bn_loaded
            .iter()
            .map(|(m, v)| {
                Ok(BatchNormStats {
                    mean: read(m)?.to_vec(),
                    var: read(v)?.to_vec(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        for (p, t) in self.params_mut().into_iter().zip(values) {
            p.set(t);
        }
        for (bn, s) in self.batch_norms().into_iter().zip(stats) {
            bn.set_stats(s);
        }
        Ok(())
    }
}
