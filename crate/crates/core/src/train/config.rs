//! Run configuration: a plain `key = value` file with `[section]` headers.
//!
//! ```text
//! seed = 0
//! output_dir = runs/toy
//!
//! [model]
//! num_classes = 3
//! encoder_dims = 8,16,32,64
//!
//! [optim]
//! max_steps = 200
//! ```
//!
//! A key may also be written fully qualified (`optim.lr = 1e-3`). `#` starts a
//! comment. Unknown keys are rejected.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::optim::OptimConfig;
use crate::data::SyntheticSpec;
use crate::error::{Error, Result};
use crate::metrics::LossConfig;
use crate::model::ModelConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct DataConfig {
    /// Dataset root (`images/`, `labels/`, `split.txt`). When absent the
    /// synthetic generator is used.
    pub dir: Option<PathBuf>,
    pub split: String,
    pub synth_count: usize,
    pub synth_height: usize,
    pub synth_width: usize,
    pub synth_seed: u64,
    pub synth_shapes: (usize, usize),
    pub synth_scale: (f64, f64),
    pub synth_class_weights: Vec<f64>,
    pub tile_size: usize,
    pub tile_stride: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            dir: None,
            split: "train".into(),
            synth_count: 64,
            synth_height: 48,
            synth_width: 48,
            synth_seed: 0,
            synth_shapes: (1, 2),
            synth_scale: (0.3, 0.5),
            synth_class_weights: Vec::new(),
            tile_size: 1024,
            tile_stride: 1024,
        }
    }
}

impl DataConfig {
    pub fn synthetic_spec(&self, num_classes: usize) -> SyntheticSpec {
        SyntheticSpec {
            shapes_per_image: self.synth_shapes,
            shape_scale: self.synth_scale,
            class_weights: self.synth_class_weights.clone(),
            ..SyntheticSpec::new(
                self.synth_seed,
                num_classes,
                self.synth_height,
                self.synth_width,
                self.synth_count,
            )
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub model: ModelConfig,
    pub optim: OptimConfig,
    pub loss: LossConfig,
    pub data: DataConfig,
    /// Evaluate the training set every this many epochs (and always at the
    /// end); 0 evaluates only at the end.
    pub eval_every: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            output_dir: PathBuf::from("runs/default"),
            model: ModelConfig::default(),
            optim: OptimConfig::default(),
            loss: LossConfig::default(),
            data: DataConfig::default(),
            eval_every: 1,
        }
    }
}

fn parse_value<V: std::str::FromStr>(key: &str, value: &str, line: usize) -> Result<V> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("line {line}: cannot parse {key} = {value:?}")))
}

fn parse_list<V: std::str::FromStr>(key: &str, value: &str, line: usize) -> Result<Vec<V>> {
    if value.is_empty() {
        return Ok(Vec::new());
    }
    value
        .split(',')
        .map(|v| parse_value(key, v.trim(), line))
        .collect()
}

fn parse_dims(key: &str, value: &str, line: usize) -> Result<[usize; 4]> {
    let v: Vec<usize> = parse_list(key, value, line)?;
    v.try_into()
        .map_err(|_| Error::Config(format!("line {line}: {key} needs exactly 4 values")))
}

/// `HxW` or a single side.
pub fn parse_size(value: &str) -> Option<(usize, usize)> {
    match value.split_once(['x', 'X']) {
        Some((h, w)) => Some((h.trim().parse().ok()?, w.trim().parse().ok()?)),
        None => {
            let s = value.trim().parse().ok()?;
            Some((s, s))
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut section = String::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap().trim();
            if content.is_empty() {
                continue;
            }
            if let Some(name) = content.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
                section = name.trim().to_string();
                if !["", "model", "optim", "loss", "data"].contains(&section.as_str()) {
                    return Err(Error::Config(format!(
                        "line {line}: unknown section [{section}]"
                    )));
                }
                continue;
            }
            let (key, value) = content.split_once('=').ok_or_else(|| {
                Error::Config(format!(
                    "line {line}: expected key = value, got {content:?}"
                ))
            })?;
            let (key, value) = (key.trim(), value.trim());
            let full = if section.is_empty() || key.contains('.') {
                key.to_string()
            } else {
                format!("{section}.{key}")
            };
            cfg.set(&full, value, line)?;
        }
        cfg.model.seed = cfg.seed;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    fn set(&mut self, key: &str, v: &str, line: usize) -> Result<()> {
        let (m, o, l, d) = (
            &mut self.model,
            &mut self.optim,
            &mut self.loss,
            &mut self.data,
        );
        match key {
            "seed" => self.seed = parse_value(key, v, line)?,
            "output_dir" => self.output_dir = PathBuf::from(v),
            "eval_every" => self.eval_every = parse_value(key, v, line)?,

            "model.in_channels" => m.in_channels = parse_value(key, v, line)?,
            "model.num_classes" => m.num_classes = parse_value(key, v, line)?,
            "model.encoder_dims" => m.encoder_dims = parse_dims(key, v, line)?,
            "model.decoder_dims" => m.decoder_dims = parse_dims(key, v, line)?,
            "model.d_state" => m.d_state = parse_value(key, v, line)?,
            "model.ssm_expand" => m.ssm_expand = parse_value(key, v, line)?,
            "model.lsm_enabled" => m.lsm_enabled = parse_value(key, v, line)?,
            "model.dropout_p" => m.dropout_p = parse_value(key, v, line)?,

            "optim.lr" => o.lr = parse_value(key, v, line)?,
            "optim.weight_decay" => o.weight_decay = parse_value(key, v, line)?,
            "optim.beta1" => o.betas.0 = parse_value(key, v, line)?,
            "optim.beta2" => o.betas.1 = parse_value(key, v, line)?,
            "optim.eps" => o.eps = parse_value(key, v, line)?,
            "optim.epochs" => o.epochs = parse_value(key, v, line)?,
            "optim.batch_size" => o.batch_size = parse_value(key, v, line)?,
            "optim.max_steps" => o.max_steps = Some(parse_value(key, v, line)?),
            "optim.grad_clip" => o.grad_clip = Some(parse_value(key, v, line)?),

            "loss.alpha" => l.alpha = parse_value(key, v, line)?,
            "loss.dice_smooth" => l.dice_smooth = parse_value(key, v, line)?,
            "loss.ignore_index" => l.ignore_index = parse_value(key, v, line)?,

            "data.dir" => d.dir = Some(PathBuf::from(v)),
            "data.split" => d.split = v.to_string(),
            "data.synth_count" => d.synth_count = parse_value(key, v, line)?,
            "data.synth_size" => {
                (d.synth_height, d.synth_width) = parse_size(v)
                    .ok_or_else(|| Error::Config(format!("line {line}: bad size {v:?}")))?
            }
            "data.synth_seed" => d.synth_seed = parse_value(key, v, line)?,
            "data.synth_shapes" => {
                let r: Vec<usize> = parse_list(key, v, line)?;
                match r[..] {
                    [lo, hi] => d.synth_shapes = (lo, hi),
                    _ => return Err(Error::Config(format!("line {line}: {key} needs min,max"))),
                }
            }
            "data.synth_scale" => {
                let r: Vec<f64> = parse_list(key, v, line)?;
                match r[..] {
                    [lo, hi] => d.synth_scale = (lo, hi),
                    _ => return Err(Error::Config(format!("line {line}: {key} needs min,max"))),
                }
            }
            "data.synth_class_weights" => d.synth_class_weights = parse_list(key, v, line)?,
            "data.tile_size" => d.tile_size = parse_value(key, v, line)?,
            "data.tile_stride" => d.tile_stride = parse_value(key, v, line)?,
            _ => return Err(Error::Config(format!("line {line}: unknown key {key:?}"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.optim.validate()?;
        self.loss.validate()?;
        let t = self.data.tile_size;
        if t == 0
            || !t.is_multiple_of(ModelConfig::SIZE_MULTIPLE)
            || self.data.tile_stride == 0
            || self.data.tile_stride > t
        {
            return Err(Error::Config(format!(
                "tile_size must be a positive multiple of {} and tile_stride in 1..=tile_size, got {t} / {}",
                ModelConfig::SIZE_MULTIPLE,
                self.data.tile_stride
            )));
        }
        Ok(())
    }

    /// Canonical text form; `parse(to_text())` gives back the same config.
    pub fn to_text(&self) -> String {
        let join = |v: &[usize]| {
            v.iter()
                .map(|d| d.to_string())
                .collect::<Vec<_>>()
                .join(",")
        };
        let (m, o, l, d) = (&self.model, &self.optim, &self.loss, &self.data);
        let mut s = String::new();
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "output_dir = {}", self.output_dir.display());
        let _ = writeln!(s, "eval_every = {}", self.eval_every);
        let _ = writeln!(s, "\n[model]");
        let _ = writeln!(s, "in_channels = {}", m.in_channels);
        let _ = writeln!(s, "num_classes = {}", m.num_classes);
        let _ = writeln!(s, "encoder_dims = {}", join(&m.encoder_dims));
        let _ = writeln!(s, "decoder_dims = {}", join(&m.decoder_dims));
        let _ = writeln!(s, "d_state = {}", m.d_state);
        let _ = writeln!(s, "ssm_expand = {}", m.ssm_expand);
        let _ = writeln!(s, "lsm_enabled = {}", m.lsm_enabled);
        let _ = writeln!(s, "dropout_p = {:?}", m.dropout_p);
        let _ = writeln!(s, "\n[optim]");
        let _ = writeln!(s, "lr = {:?}", o.lr);
        let _ = writeln!(s, "weight_decay = {:?}", o.weight_decay);
        let _ = writeln!(s, "beta1 = {:?}", o.betas.0);
        let _ = writeln!(s, "beta2 = {:?}", o.betas.1);
        let _ = writeln!(s, "eps = {:?}", o.eps);
        let _ = writeln!(s, "epochs = {}", o.epochs);
        let _ = writeln!(s, "batch_size = {}", o.batch_size);
        if let Some(n) = o.max_steps {
            let _ = writeln!(s, "max_steps = {n}");
        }
        if let Some(c) = o.grad_clip {
            let _ = writeln!(s, "grad_clip = {c:?}");
        }
        let _ = writeln!(s, "\n[loss]");
        let _ = writeln!(s, "alpha = {:?}", l.alpha);
        let _ = writeln!(s, "dice_smooth = {:?}", l.dice_smooth);
        let _ = writeln!(s, "ignore_index = {}", l.ignore_index);
        let _ = writeln!(s, "\n[data]");
        if let Some(dir) = &d.dir {
            let _ = writeln!(s, "dir = {}", dir.display());
        }
        let _ = writeln!(s, "split = {}", d.split);
        let _ = writeln!(s, "synth_count = {}", d.synth_count);
        let _ = writeln!(s, "synth_size = {}x{}", d.synth_height, d.synth_width);
        let _ = writeln!(s, "synth_seed = {}", d.synth_seed);
        let _ = writeln!(
            s,
            "synth_shapes = {},{}",
            d.synth_shapes.0, d.synth_shapes.1
        );
        let _ = writeln!(
            s,
            "synth_scale = {:?},{:?}",
            d.synth_scale.0, d.synth_scale.1
        );
        let weights: Vec<String> = d
            .synth_class_weights
            .iter()
            .map(|w| format!("{w:?}"))
            .collect();
        let _ = writeln!(s, "synth_class_weights = {}", weights.join(","));
        let _ = writeln!(s, "tile_size = {}", d.tile_size);
        let _ = writeln!(s, "tile_stride = {}", d.tile_stride);
        s
    }
}
