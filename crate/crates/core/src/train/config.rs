use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::data::{load_idx, load_table, Dataset};
use crate::error::{Error, Result};
use crate::nn::{Architecture, OptimizerKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Adec,
    Dec,
    Idec,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Adec => "adec",
            Mode::Dec => "dec",
            Mode::Idec => "idec",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "adec" => Ok(Mode::Adec),
            "dec" => Ok(Mode::Dec),
            "idec" => Ok(Mode::Idec),
            _ => Err(Error::Config(format!("unknown mode {s:?} (adec, dec, idec)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetKind {
    Idx,
    Table,
}

impl fmt::Display for DatasetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DatasetKind::Idx => "idx",
            DatasetKind::Table => "table",
        })
    }
}

impl FromStr for DatasetKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "idx" => Ok(DatasetKind::Idx),
            "table" => Ok(DatasetKind::Table),
            _ => Err(Error::Config(format!("unknown dataset kind {s:?} (idx, table)"))),
        }
    }
}

/// Every knob of a run. Keys of the `key = value` config format are the
/// field names.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub mode: Mode,
    pub dataset: String,
    pub dataset_kind: DatasetKind,
    pub labels: String,
    /// Table datasets: last column holds labels.
    pub has_labels: bool,
    pub delimiter: char,
    pub n_clusters: usize,
    pub embed_dim: usize,
    pub ae_hidden: Vec<usize>,
    pub adv_hidden: Vec<usize>,
    pub batch_size: usize,
    pub pretrain_iters: u64,
    pub lambda: f64,
    /// Fixed interpolation coefficient; `None` samples it per row.
    pub interp_alpha: Option<f64>,
    pub adam_lr: f64,
    pub sgd_lr: f64,
    pub momentum: f64,
    pub max_iter: u64,
    /// Target-distribution update interval; `0` means one epoch.
    pub update_interval: u64,
    pub block_len: u64,
    pub tol: f64,
    pub gamma: f64,
    pub dof: f64,
    pub seed: u64,
    pub augment: bool,
    pub deterministic: bool,
    pub disc_pretrain_iters: u64,
    pub disc_lr: f64,
    pub kmeans_restarts: usize,
    pub checkpoint_every: u64,
    pub diagnostics: bool,
    pub diagnose_iters: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let arch = Architecture::default();
        RunConfig {
            mode: Mode::Adec,
            dataset: String::new(),
            dataset_kind: DatasetKind::Idx,
            labels: String::new(),
            has_labels: true,
            delimiter: ',',
            n_clusters: 10,
            embed_dim: arch.embed_dim,
            ae_hidden: arch.ae_hidden,
            adv_hidden: arch.adv_hidden,
            batch_size: 256,
            pretrain_iters: 130_000,
            lambda: 0.5,
            interp_alpha: None,
            adam_lr: 1e-4,
            sgd_lr: 1e-3,
            momentum: 0.9,
            max_iter: 100_000,
            update_interval: 140,
            block_len: 10,
            tol: 0.001,
            gamma: 0.01,
            dof: 1.0,
            seed: 0,
            augment: true,
            deterministic: false,
            disc_pretrain_iters: 2000,
            disc_lr: 1e-4,
            kmeans_restarts: 20,
            checkpoint_every: 10_000,
            diagnostics: true,
            diagnose_iters: 2000,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value {value:?} for {key}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "1" | "on" => Ok(true),
        "false" | "no" | "0" | "off" => Ok(false),
        _ => Err(Error::Config(format!("invalid boolean {value:?} for {key}"))),
    }
}

fn parse_dims(key: &str, value: &str) -> Result<Vec<usize>> {
    if value.is_empty() {
        return Ok(Vec::new());
    }
    value.split(',').map(|v| parse(key, v.trim())).collect()
}

fn join(dims: &[usize]) -> String {
    dims.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    /// Assigns one field from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "mode" => self.mode = v.parse()?,
            "dataset" => self.dataset = v.to_string(),
            "dataset_kind" => self.dataset_kind = v.parse()?,
            "labels" => self.labels = v.to_string(),
            "has_labels" => self.has_labels = parse_bool(key, v)?,
            "delimiter" => {
                self.delimiter = match v {
                    "tab" | "\\t" => '\t',
                    _ => {
                        let mut chars = v.chars();
                        match (chars.next(), chars.next()) {
                            (Some(c), None) if c.is_ascii() => c,
                            _ => return Err(Error::Config(format!("delimiter must be one ASCII character, got {v:?}"))),
                        }
                    }
                }
            }
            "n_clusters" => self.n_clusters = parse(key, v)?,
            "embed_dim" => self.embed_dim = parse(key, v)?,
            "ae_hidden" => self.ae_hidden = parse_dims(key, v)?,
            "adv_hidden" => self.adv_hidden = parse_dims(key, v)?,
            "batch_size" => self.batch_size = parse(key, v)?,
            "pretrain_iters" => self.pretrain_iters = parse(key, v)?,
            "lambda" => self.lambda = parse(key, v)?,
            "interp_alpha" => {
                self.interp_alpha = match v {
                    "sampled" => None,
                    _ => Some(parse(key, v)?),
                }
            }
            "adam_lr" => self.adam_lr = parse(key, v)?,
            "sgd_lr" => self.sgd_lr = parse(key, v)?,
            "momentum" => self.momentum = parse(key, v)?,
            "max_iter" => self.max_iter = parse(key, v)?,
            "update_interval" => {
                self.update_interval = match v {
                    "auto" => 0,
                    _ => parse(key, v)?,
                }
            }
            "block_len" => self.block_len = parse(key, v)?,
            "tol" => self.tol = parse(key, v)?,
            "gamma" => self.gamma = parse(key, v)?,
            "dof" => self.dof = parse(key, v)?,
            "seed" => self.seed = parse(key, v)?,
            "augment" => self.augment = parse_bool(key, v)?,
            "deterministic" => self.deterministic = parse_bool(key, v)?,
            "disc_pretrain_iters" => self.disc_pretrain_iters = parse(key, v)?,
            "disc_lr" => self.disc_lr = parse(key, v)?,
            "kmeans_restarts" => self.kmeans_restarts = parse(key, v)?,
            "checkpoint_every" => self.checkpoint_every = parse(key, v)?,
            "diagnostics" => self.diagnostics = parse_bool(key, v)?,
            "diagnose_iters" => self.diagnose_iters = parse(key, v)?,
            other => return Err(Error::Config(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    /// Applies `key = value` lines on top of `self`; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", n + 1)))?;
            self.set(k, v)
                .map_err(|e| Error::Config(format!("line {}: {e}", n + 1)))?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }

    /// Canonical `key = value` rendering; parses back to an equal config.
    pub fn to_text(&self) -> String {
        let delimiter = match self.delimiter {
            '\t' => "tab".to_string(),
            c => c.to_string(),
        };
        let fields: Vec<(&str, String)> = vec![
            ("mode", self.mode.to_string()),
            ("dataset", self.dataset.clone()),
            ("dataset_kind", self.dataset_kind.to_string()),
            ("labels", self.labels.clone()),
            ("has_labels", self.has_labels.to_string()),
            ("delimiter", delimiter),
            ("n_clusters", self.n_clusters.to_string()),
            ("embed_dim", self.embed_dim.to_string()),
            ("ae_hidden", join(&self.ae_hidden)),
            ("adv_hidden", join(&self.adv_hidden)),
            ("batch_size", self.batch_size.to_string()),
            ("pretrain_iters", self.pretrain_iters.to_string()),
            ("lambda", format!("{:?}", self.lambda)),
            (
                "interp_alpha",
                self.interp_alpha.map_or("sampled".into(), |a| format!("{a:?}")),
            ),
            ("adam_lr", format!("{:?}", self.adam_lr)),
            ("sgd_lr", format!("{:?}", self.sgd_lr)),
            ("momentum", format!("{:?}", self.momentum)),
            ("max_iter", self.max_iter.to_string()),
            ("update_interval", self.update_interval.to_string()),
            ("block_len", self.block_len.to_string()),
            ("tol", format!("{:?}", self.tol)),
            ("gamma", format!("{:?}", self.gamma)),
            ("dof", format!("{:?}", self.dof)),
            ("seed", self.seed.to_string()),
            ("augment", self.augment.to_string()),
            ("deterministic", self.deterministic.to_string()),
            ("disc_pretrain_iters", self.disc_pretrain_iters.to_string()),
            ("disc_lr", format!("{:?}", self.disc_lr)),
            ("kmeans_restarts", self.kmeans_restarts.to_string()),
            ("checkpoint_every", self.checkpoint_every.to_string()),
            ("diagnostics", self.diagnostics.to_string()),
            ("diagnose_iters", self.diagnose_iters.to_string()),
        ];
        fields
            .into_iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    pub fn architecture(&self) -> Architecture {
        Architecture {
            embed_dim: self.embed_dim,
            ae_hidden: self.ae_hidden.clone(),
            adv_hidden: self.adv_hidden.clone(),
        }
    }

    pub fn adam(&self) -> OptimizerKind {
        OptimizerKind::adam(self.adam_lr)
    }

    pub fn sgd(&self) -> OptimizerKind {
        OptimizerKind::sgd(self.sgd_lr, self.momentum)
    }

    /// `update_interval`, with `0` resolved to one pass over `n` samples.
    pub fn effective_update_interval(&self, n: usize) -> u64 {
        if self.update_interval == 0 {
            n.div_ceil(self.batch_size) as u64
        } else {
            self.update_interval
        }
    }

    /// Loads `dataset` (plus `labels` for idx files) as configured.
    pub fn load_dataset(&self) -> Result<Dataset> {
        if self.dataset.is_empty() {
            return Err(Error::Usage("no dataset given".into()));
        }
        match self.dataset_kind {
            DatasetKind::Idx => {
                let labels = (!self.labels.is_empty()).then(|| Path::new(&self.labels));
                load_idx(&self.dataset, labels)
            }
            DatasetKind::Table if !self.labels.is_empty() => Err(Error::Usage(
                "table datasets carry labels in their last column (has_labels = true)".into(),
            )),
            DatasetKind::Table => {
                if !self.delimiter.is_ascii() {
                    return Err(Error::Config("delimiter must be ASCII".into()));
                }
                load_table(&self.dataset, self.has_labels, self.delimiter as u8)
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.n_clusters < 2 {
            return bad(format!("n_clusters must be at least 2, got {}", self.n_clusters));
        }
        if self.embed_dim == 0 || self.batch_size == 0 || self.block_len == 0 {
            return bad("embed_dim, batch_size and block_len must be positive".into());
        }
        if self.ae_hidden.contains(&0) || self.adv_hidden.contains(&0) {
            return bad("hidden widths must be positive".into());
        }
        if !(self.tol > 0.0 && self.tol <= 1.0) {
            return bad(format!("tol must lie in (0, 1], got {}", self.tol));
        }
        for (k, v) in [
            ("adam_lr", self.adam_lr),
            ("sgd_lr", self.sgd_lr),
            ("disc_lr", self.disc_lr),
            ("dof", self.dof),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{k} must be positive, got {v}"));
            }
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum must lie in [0, 1), got {}", self.momentum));
        }
        if !(self.lambda >= 0.0 && self.gamma >= 0.0) {
            return bad("lambda and gamma must be non-negative".into());
        }
        if let Some(a) = self.interp_alpha {
            if !(0.0..=1.0).contains(&a) {
                return bad(format!("interp_alpha must lie in [0, 1], got {a}"));
            }
        }
        if self.kmeans_restarts == 0 {
            return bad("kmeans_restarts must be positive".into());
        }
        Ok(())
    }
}
