use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use super::checkpoint::{CheckpointFile, NamedArray};
use super::config::RunConfig;
use crate::data::{BatchIterator, Dataset};
use crate::error::{Error, Result};
use crate::nn::{Networks, OptimizerKind, OptimizerState};
use crate::rng::{decode_state, encode_state, seeded, Rng};
use crate::tensor::Tensor;

/// Seed offsets of the independent random streams of a run.
pub(crate) const BATCH_STREAM: u64 = 10;
pub(crate) const DRAW_STREAM: u64 = 20;
pub(crate) const KMEANS_STREAM: u64 = 30;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    Initialized,
    Pretrained,
    Clustering,
    Converged,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Initialized => "initialized",
            Stage::Pretrained => "pretrained",
            Stage::Clustering => "clustering",
            Stage::Converged => "converged",
        })
    }
}

impl FromStr for Stage {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "initialized" => Stage::Initialized,
            "pretrained" => Stage::Pretrained,
            "clustering" => Stage::Clustering,
            "converged" => Stage::Converged,
            _ => return Err(Error::Checkpoint(format!("unknown stage {s:?}"))),
        })
    }
}

/// Optimizer buffers per parameter group.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Optimizers {
    pub encoder: Option<OptimizerState>,
    pub decoder: Option<OptimizerState>,
    pub discriminator: Option<OptimizerState>,
    pub critic: Option<OptimizerState>,
    pub centroids: Option<OptimizerState>,
}

impl Optimizers {
    fn slots(&self) -> [(&'static str, &Option<OptimizerState>); 5] {
        [
            ("encoder", &self.encoder),
            ("decoder", &self.decoder),
            ("discriminator", &self.discriminator),
            ("critic", &self.critic),
            ("centroids", &self.centroids),
        ]
    }

    fn slot_mut(&mut self, name: &str) -> Option<&mut Option<OptimizerState>> {
        Some(match name {
            "encoder" => &mut self.encoder,
            "decoder" => &mut self.decoder,
            "discriminator" => &mut self.discriminator,
            "critic" => &mut self.critic,
            "centroids" => &mut self.centroids,
            _ => return None,
        })
    }
}

/// Cumulative optimizer steps taken in the clustering stage, per group.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct UpdateCounts {
    pub encoder: u64,
    pub decoder: u64,
    pub discriminator: u64,
    pub centroids: u64,
}

/// Everything needed to resume a run bit-exactly.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub cfg: RunConfig,
    pub nets: Networks,
    pub stage: Stage,
    pub n_samples: usize,
    pub pretrain_iter: u64,
    pub disc_pretrained: bool,
    pub mu: Option<Tensor>,
    pub p: Option<Tensor>,
    pub y_pred: Option<Vec<usize>>,
    /// Clustering iteration counter.
    pub iter: u64,
    /// Iteration at which the target distribution was last recomputed.
    pub last_p_iter: Option<u64>,
    pub p_updates: u64,
    /// `true` while in a decoder-only block.
    pub decoder_block: bool,
    pub block_j: u64,
    pub updates: UpdateCounts,
    /// Most recent (loss_E, loss_G, V_D) of the clustering stage.
    pub last_losses: [Option<f64>; 3],
    pub opt: Optimizers,
    pub rng: Rng,
    pub batches: BatchIterator,
}

impl TrainState {
    /// Fresh, initialized networks for `ds`.
    pub fn new(cfg: RunConfig, ds: &Dataset) -> Result<Self> {
        cfg.validate()?;
        let nets = Networks::initialized(ds.dim(), &cfg.architecture(), cfg.seed)?;
        let batches = BatchIterator::new(ds.len(), cfg.batch_size, cfg.seed.wrapping_add(BATCH_STREAM))?;
        Ok(TrainState {
            nets,
            stage: Stage::Initialized,
            n_samples: ds.len(),
            pretrain_iter: 0,
            disc_pretrained: false,
            mu: None,
            p: None,
            y_pred: None,
            iter: 0,
            last_p_iter: None,
            p_updates: 0,
            decoder_block: true,
            block_j: 0,
            updates: UpdateCounts::default(),
            last_losses: [None; 3],
            opt: Optimizers::default(),
            rng: seeded(cfg.seed.wrapping_add(DRAW_STREAM)),
            batches,
            cfg,
        })
    }

    pub fn check_dataset(&self, ds: &Dataset) -> Result<()> {
        if ds.len() != self.n_samples || ds.dim() != self.nets.input_dim() {
            return Err(Error::Contract(format!(
                "checkpoint expects {} samples of dimension {}, dataset has {}×{}",
                self.n_samples,
                self.nets.input_dim(),
                ds.len(),
                ds.dim()
            )));
        }
        Ok(())
    }

    pub fn to_checkpoint(&self) -> CheckpointFile {
        let mut tensors = Vec::new();
        for net in self.nets.iter() {
            for (name, shape, data) in net.named_tensors() {
                tensors.push(NamedArray {
                    name,
                    shape,
                    data: data.to_vec(),
                });
            }
        }
        let mut push = |name: String, t: &Tensor| {
            tensors.push(NamedArray {
                name,
                shape: t.shape().to_vec(),
                data: t.data().to_vec(),
            })
        };
        if let Some(mu) = &self.mu {
            push("centroids".into(), mu);
        }
        if let Some(p) = &self.p {
            push("P".into(), p);
        }
        let mut text = String::new();
        for line in self.cfg.to_text().lines() {
            text.push_str("cfg.");
            text.push_str(line);
            text.push('\n');
        }
        let mut kv: Vec<(String, String)> = vec![
            ("stage".into(), self.stage.to_string()),
            ("input_dim".into(), self.nets.input_dim().to_string()),
            ("n_samples".into(), self.n_samples.to_string()),
            ("pretrain_iter".into(), self.pretrain_iter.to_string()),
            ("disc_pretrained".into(), self.disc_pretrained.to_string()),
            ("iter".into(), self.iter.to_string()),
            (
                "last_p_iter".into(),
                self.last_p_iter.map_or(String::new(), |v| v.to_string()),
            ),
            ("p_updates".into(), self.p_updates.to_string()),
            ("decoder_block".into(), self.decoder_block.to_string()),
            ("block_j".into(), self.block_j.to_string()),
            (
                "updates".into(),
                format!(
                    "{},{},{},{}",
                    self.updates.encoder,
                    self.updates.decoder,
                    self.updates.discriminator,
                    self.updates.centroids
                ),
            ),
            (
                "last_losses".into(),
                self.last_losses
                    .iter()
                    .map(|v| v.map_or(String::new(), |x| format!("{x:?}")))
                    .collect::<Vec<_>>()
                    .join(","),
            ),
            ("rng".into(), encode_state(&self.rng)),
            ("batches".into(), self.batches.state()),
            (
                "y_pred".into(),
                self.y_pred.as_ref().map_or(String::new(), |y| {
                    y.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
                }),
            ),
        ];
        for (name, slot) in self.opt.slots() {
            if let Some(o) = slot {
                let kind = match o.kind {
                    OptimizerKind::SgdMomentum { lr, momentum } => format!("sgd {lr:?} {momentum:?}"),
                    OptimizerKind::Adam {
                        lr,
                        beta1,
                        beta2,
                        eps,
                    } => format!("adam {lr:?} {beta1:?} {beta2:?} {eps:?}"),
                };
                kv.push((format!("opt.{name}"), format!("{kind} {}", o.steps)));
                tensors.push(NamedArray {
                    name: format!("opt.{name}.first"),
                    shape: vec![o.first.len()],
                    data: o.first.clone(),
                });
                if !o.second.is_empty() {
                    tensors.push(NamedArray {
                        name: format!("opt.{name}.second"),
                        shape: vec![o.second.len()],
                        data: o.second.clone(),
                    });
                }
            }
        }
        for (k, v) in kv {
            text.push_str(&format!("{k} = {v}\n"));
        }
        CheckpointFile { tensors, text }
    }

    pub fn from_checkpoint(file: &CheckpointFile) -> Result<Self> {
        let mut cfg_text = String::new();
        let mut kv = BTreeMap::new();
        for line in file.text.lines() {
            let (k, v) = line
                .split_once(" = ")
                .or_else(|| line.split_once('='))
                .ok_or_else(|| Error::Checkpoint(format!("malformed text line {line:?}")))?;
            match k.strip_prefix("cfg.") {
                Some(ck) => cfg_text.push_str(&format!("{ck} = {v}\n")),
                None => {
                    kv.insert(k.trim().to_string(), v.trim().to_string());
                }
            }
        }
        let cfg = RunConfig::from_text(&cfg_text)?;
        let get = |k: &str| -> Result<&str> {
            kv.get(k)
                .map(String::as_str)
                .ok_or_else(|| Error::Checkpoint(format!("missing field {k:?}")))
        };
        fn num<T: FromStr>(k: &str, v: &str) -> Result<T> {
            v.parse()
                .map_err(|_| Error::Checkpoint(format!("bad value {v:?} for {k}")))
        }
        let input_dim: usize = num("input_dim", get("input_dim")?)?;
        let n_samples: usize = num("n_samples", get("n_samples")?)?;
        let mut nets = Networks::build(input_dim, &cfg.architecture())?;
        for net in [
            &mut nets.encoder,
            &mut nets.decoder,
            &mut nets.discriminator,
            &mut nets.critic,
        ] {
            let names: Vec<(String, Vec<usize>)> = net
                .named_tensors()
                .into_iter()
                .map(|(n, s, _)| (n, s))
                .collect();
            let mut flat = Vec::with_capacity(net.num_params());
            for (name, shape) in names {
                let t = file
                    .get(&name)
                    .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))?;
                if t.shape != shape {
                    return Err(Error::Checkpoint(format!(
                        "tensor {name} has shape {:?}, expected {shape:?}",
                        t.shape
                    )));
                }
                flat.extend_from_slice(&t.data);
            }
            net.flatten_mut().copy_from_slice(&flat);
        }
        let tensor = |name: &str| -> Result<Option<Tensor>> {
            file.get(name)
                .map(|t| Tensor::new(t.shape.clone(), t.data.clone()).map_err(Error::from))
                .transpose()
        };
        let mut opt = Optimizers::default();
        for (k, v) in kv.iter().filter(|(k, _)| k.starts_with("opt.")) {
            let name = &k[4..];
            let parts: Vec<&str> = v.split_whitespace().collect();
            let f = |i: usize| -> Result<f64> { num(k, parts.get(i).copied().unwrap_or("")) };
            let (kind, steps_at) = match parts.first().copied() {
                Some("sgd") => (OptimizerKind::sgd(f(1)?, f(2)?), 3),
                Some("adam") => (
                    OptimizerKind::Adam {
                        lr: f(1)?,
                        beta1: f(2)?,
                        beta2: f(3)?,
                        eps: f(4)?,
                    },
                    5,
                ),
                _ => return Err(Error::Checkpoint(format!("bad optimizer entry {v:?}"))),
            };
            let first = file
                .get(&format!("opt.{name}.first"))
                .ok_or_else(|| Error::Checkpoint(format!("missing buffers for {k}")))?;
            let mut state = OptimizerState::new(kind, first.data.len());
            state.first = first.data.clone();
            if let Some(s) = file.get(&format!("opt.{name}.second")) {
                state.second = s.data.clone();
            }
            state.steps = num(k, parts.get(steps_at).copied().unwrap_or(""))?;
            *opt.slot_mut(name)
                .ok_or_else(|| Error::Checkpoint(format!("unknown optimizer slot {name}")))? = Some(state);
        }
        let counts: Vec<u64> = get("updates")?
            .split(',')
            .map(|v| num("updates", v))
            .collect::<Result<_>>()?;
        if counts.len() != 4 {
            return Err(Error::Checkpoint("updates needs four counters".into()));
        }
        let losses: Vec<Option<f64>> = get("last_losses")?
            .split(',')
            .map(|v| if v.is_empty() { Ok(None) } else { num("last_losses", v).map(Some) })
            .collect::<Result<_>>()?;
        let last_losses: [Option<f64>; 3] = losses
            .try_into()
            .map_err(|_| Error::Checkpoint("last_losses needs three fields".into()))?;
        let y_pred = match get("y_pred")? {
            "" => None,
            s => Some(s.split(',').map(|v| num("y_pred", v)).collect::<Result<Vec<usize>>>()?),
        };
        let batches = BatchIterator::restore(n_samples, cfg.batch_size, get("batches")?)?;
        Ok(TrainState {
            nets,
            stage: get("stage")?.parse()?,
            n_samples,
            pretrain_iter: num("pretrain_iter", get("pretrain_iter")?)?,
            disc_pretrained: num("disc_pretrained", get("disc_pretrained")?)?,
            mu: tensor("centroids")?,
            p: tensor("P")?,
            y_pred,
            iter: num("iter", get("iter")?)?,
            last_p_iter: match get("last_p_iter")? {
                "" => None,
                s => Some(num("last_p_iter", s)?),
            },
            p_updates: num("p_updates", get("p_updates")?)?,
            decoder_block: num("decoder_block", get("decoder_block")?)?,
            block_j: num("block_j", get("block_j")?)?,
            updates: UpdateCounts {
                encoder: counts[0],
                decoder: counts[1],
                discriminator: counts[2],
                centroids: counts[3],
            },
            last_losses,
            opt,
            rng: decode_state(get("rng")?)?,
            batches,
            cfg,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_checkpoint().write(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_checkpoint(&CheckpointFile::read(path)?)
    }
}
