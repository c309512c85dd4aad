use std::path::{Path, PathBuf};
use std::time::Instant;

use super::config::Mode;
use super::log::{write_log, MetricsRow};
use super::state::{Stage, TrainState, KMEANS_STREAM};
use crate::cluster::{kmeans_init, label_change_fraction, predict_labels, soft_assign, target_distribution};
use crate::data::{augment, AugmentParams, Dataset};
use crate::diagnostics::{
    accuracy, align_clusters, aligned_targets, delta_fd, delta_fr, nmi, SelfSupervised,
};
use crate::error::{Error, Result};
use crate::losses::{
    baseline_loss, critic_loss_from, decoder_loss_from, discriminator_value_from,
    encoder_cluster_loss, pretrain_ae_loss, InterpolationDraw,
};
use crate::nn::{OptimizerKind, OptimizerState};
use crate::tensor::{Tensor, TensorError};

pub const PRETRAIN_CHECKPOINT: &str = "pretrain.ckpt";
pub const CLUSTER_CHECKPOINT: &str = "cluster.ckpt";
pub const ABORT_CHECKPOINT: &str = "abort.ckpt";

/// Result of a clustering run.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterOutcome {
    /// Hard assignments under the final parameters.
    pub labels: Vec<usize>,
    pub converged: bool,
    pub iters: u64,
}

/// One optimizer step on `params`; a missing gradient counts as zero.
fn apply(
    slot: &mut Option<OptimizerState>,
    kind: OptimizerKind,
    params: &mut [f64],
    grad: Option<&[f64]>,
) -> Result<()> {
    let n = params.len();
    let st = slot.get_or_insert_with(|| OptimizerState::new(kind, n));
    match grad {
        Some(g) => st.update(params, g),
        None => st.update(params, &vec![0.0; n]),
    }
}

/// A training state bound to its dataset, accumulating a metrics log.
pub struct Session<'d> {
    pub state: TrainState,
    pub ds: &'d Dataset,
    pub log: Vec<MetricsRow>,
    pub out: Option<PathBuf>,
    started: Instant,
}

impl<'d> Session<'d> {
    pub fn new(state: TrainState, ds: &'d Dataset) -> Result<Self> {
        state.check_dataset(ds)?;
        Ok(Session {
            state,
            ds,
            log: Vec::new(),
            out: None,
            started: Instant::now(),
        })
    }

    /// Checkpoints are written into `dir`.
    pub fn with_output(mut self, dir: impl Into<PathBuf>) -> Self {
        self.out = Some(dir.into());
        self
    }

    fn wall(&self) -> Option<u64> {
        (!self.state.cfg.deterministic).then(|| self.started.elapsed().as_millis() as u64)
    }

    fn save_as(&self, name: &str) -> Result<()> {
        match &self.out {
            Some(dir) => self.state.save(dir.join(name)),
            None => Ok(()),
        }
    }

    fn abort(&self, loss: &'static str, iter: u64) -> Error {
        log::error!("{loss} became non-finite at iteration {iter}");
        if let Err(e) = self.save_as(ABORT_CHECKPOINT) {
            log::error!("could not write diagnostic checkpoint: {e}");
        }
        Error::NonFiniteLoss {
            loss,
            iter: iter as usize,
        }
    }

    fn check(&self, loss: &'static str, value: f64, iter: u64) -> Result<()> {
        if value.is_finite() {
            Ok(())
        } else {
            Err(self.abort(loss, iter))
        }
    }

    pub fn write_log(&self, path: impl AsRef<Path>) -> Result<()> {
        write_log(path, &self.log)
    }

    /// Runs the remaining autoencoder/critic pretraining iterations.
    pub fn pretrain(&mut self) -> Result<()> {
        let ds = self.ds;
        let t = self.state.cfg.effective_update_interval(ds.len());
        let target = self.state.cfg.pretrain_iters;
        let every = self.state.cfg.checkpoint_every;
        while self.state.pretrain_iter < target {
            let it = self.state.pretrain_iter;
            let st = &mut self.state;
            let idx = st.batches.next_indices();
            let mut xb = ds.x.select_rows(&idx);
            if st.cfg.augment {
                xb = augment(&xb, ds.image_shape, AugmentParams::default(), &mut st.rng)?;
            }
            let draws = InterpolationDraw::sample(xb.rows(), &mut st.rng, st.cfg.interp_alpha);
            let (ae, outs) = pretrain_ae_loss(&st.nets, &xb, &draws, st.cfg.lambda)?;
            // the critic plays no part when λ = 0
            let crit = if st.cfg.lambda > 0.0 {
                Some(critic_loss_from(&st.nets.critic, &xb, &outs, &draws)?)
            } else {
                None
            };
            self.check("pretrain_ae", ae.value, it)?;
            if let Some(c) = &crit {
                self.check("critic", c.value, it)?;
            }
            let st = &mut self.state;
            let adam = st.cfg.adam();
            apply(&mut st.opt.encoder, adam, st.nets.encoder.flatten_mut(), ae.grads.encoder.as_deref())?;
            apply(&mut st.opt.decoder, adam, st.nets.decoder.flatten_mut(), ae.grads.decoder.as_deref())?;
            if let Some(c) = &crit {
                apply(&mut st.opt.critic, adam, st.nets.critic.flatten_mut(), c.grads.critic.as_deref())?;
            }
            st.pretrain_iter += 1;
            if it % t == 0 || st.pretrain_iter == target {
                let mut row = MetricsRow::new(it, "pretrain");
                row.loss_g = Some(ae.value);
                row.loss_c = crit.map(|c| c.value);
                row.wall_ms = self.wall();
                self.log.push(row);
            }
            if every > 0 && self.state.pretrain_iter % every == 0 {
                self.save_as(PRETRAIN_CHECKPOINT)?;
            }
        }
        if self.state.stage == Stage::Initialized {
            self.state.stage = Stage::Pretrained;
        }
        self.save_as(PRETRAIN_CHECKPOINT)
    }

    /// Fits the discriminator to the frozen autoencoder before clustering.
    pub fn pretrain_discriminator(&mut self) -> Result<()> {
        if self.state.disc_pretrained {
            return Ok(());
        }
        let ds = self.ds;
        let xhat = {
            let nets = &self.state.nets;
            nets.decoder.predict(&nets.encoder.predict(&ds.x)?)?
        };
        let kind = OptimizerKind::adam(self.state.cfg.disc_lr);
        let mut opt = OptimizerState::new(kind, self.state.nets.discriminator.num_params());
        let mut last = None;
        for it in 0..self.state.cfg.disc_pretrain_iters {
            let idx = self.state.batches.next_indices();
            let (xb, hb) = (ds.x.select_rows(&idx), xhat.select_rows(&idx));
            let v = discriminator_value_from(&self.state.nets.discriminator, &xb, &hb)?;
            self.check("discriminator", v.value, it)?;
            let n = self.state.nets.discriminator.num_params();
            let grad = v.grads.discriminator.unwrap_or_else(|| vec![0.0; n]);
            opt.update(self.state.nets.discriminator.flatten_mut(), &grad)?;
            last = Some(v.value);
        }
        let mut row = MetricsRow::new(0, "disc_pretrain");
        row.loss_d = last;
        row.wall_ms = self.wall();
        self.log.push(row);
        self.state.disc_pretrained = true;
        Ok(())
    }

    fn label_metrics(&self, y_pred: &[usize]) -> Result<(Option<f64>, Option<f64>)> {
        match &self.ds.labels {
            Some(y) => Ok((Some(accuracy(y, y_pred)?), Some(nmi(y, y_pred)?))),
            None => Ok((None, None)),
        }
    }

    /// k-means centroid initialization on the pretrained embedding; resets
    /// the clustering counters and optimizers.
    pub fn start_clustering(&mut self) -> Result<()> {
        if self.state.stage >= Stage::Clustering {
            return Ok(());
        }
        if self.state.cfg.mode == Mode::Adec {
            self.pretrain_discriminator()?;
        }
        let z = self.state.nets.encoder.predict(&self.ds.x)?;
        let cfg = &self.state.cfg;
        let km = kmeans_init(
            &z,
            cfg.n_clusters,
            cfg.kmeans_restarts,
            cfg.seed.wrapping_add(KMEANS_STREAM),
        )?;
        let (acc, nmi) = self.label_metrics(&km.labels)?;
        let st = &mut self.state;
        st.mu = Some(km.centroids);
        st.y_pred = Some(km.labels);
        st.p = None;
        st.iter = 0;
        st.last_p_iter = None;
        st.p_updates = 0;
        st.decoder_block = true;
        st.block_j = 0;
        st.updates = Default::default();
        st.last_losses = [None; 3];
        st.opt.encoder = None;
        st.opt.decoder = None;
        st.opt.discriminator = None;
        st.opt.centroids = None;
        st.stage = Stage::Clustering;
        let mut row = MetricsRow::new(0, "kmeans");
        row.acc = acc;
        row.nmi = nmi;
        row.wall_ms = self.wall();
        self.log.push(row);
        Ok(())
    }

    fn soft_assignments(&self) -> Result<(Tensor, Tensor)> {
        let mu = self.state.mu.as_ref().ok_or_else(|| Error::Contract("no centroids".into()))?;
        let z = self.state.nets.encoder.predict(&self.ds.x)?;
        let q = soft_assign(&z, mu, self.state.cfg.dof)?;
        Ok((z, q))
    }

    /// Recomputes Q and P over the whole dataset and the hard labels.
    /// Returns the label-change fraction against the previous labels.
    fn update_targets(&mut self) -> Result<Option<f64>> {
        let (z, mut q) = self.soft_assignments()?;
        let k = self.state.cfg.n_clusters;
        let mut y = predict_labels(&q);
        for _ in 0..k {
            let mut counts = vec![0usize; k];
            for &c in &y {
                counts[c] += 1;
            }
            let empty: Vec<usize> = (0..k).filter(|&j| counts[j] == 0).collect();
            if empty.is_empty() {
                break;
            }
            // least confidently assigned points first
            let mut order: Vec<usize> = (0..q.rows()).collect();
            let conf: Vec<f64> = (0..q.rows())
                .map(|i| q.row(i).iter().cloned().fold(f64::NEG_INFINITY, f64::max))
                .collect();
            order.sort_by(|&a, &b| conf[a].total_cmp(&conf[b]).then(a.cmp(&b)));
            let mu = self.state.mu.as_mut().expect("centroids present");
            for (&j, &i) in empty.iter().zip(&order) {
                log::warn!(
                    "cluster {j} is empty at iteration {}; reseeding it at sample {i}",
                    self.state.iter
                );
                mu.row_mut(j).copy_from_slice(z.row(i));
            }
            q = soft_assign(&z, self.state.mu.as_ref().unwrap(), self.state.cfg.dof)?;
            y = predict_labels(&q);
        }
        let change = self.state.y_pred.as_ref().map(|old| label_change_fraction(old, &y));
        let st = &mut self.state;
        st.p = Some(target_distribution(&q));
        st.y_pred = Some(y);
        st.p_updates += 1;
        st.last_p_iter = Some(st.iter);
        Ok(change)
    }

    fn diagnostics(&self, idx: &[usize], xb: &Tensor, p_rows: &Tensor) -> Result<(Option<f64>, Option<f64>)> {
        let st = &self.state;
        let mu = st.mu.as_ref().expect("centroids present");
        let dof = st.cfg.dof;
        let fd = match st.cfg.mode {
            Mode::Adec => delta_fd(&st.nets, mu, xb, p_rows, dof, SelfSupervised::Adversarial)?,
            Mode::Idec => delta_fd(&st.nets, mu, xb, p_rows, dof, SelfSupervised::Reconstruction)?,
            Mode::Dec => None,
        };
        let fr = match (&self.ds.labels, &st.y_pred) {
            (Some(y), Some(pred)) => {
                let map = align_clusters(y, pred)?;
                let yb: Vec<usize> = idx.iter().map(|&i| y[i]).collect();
                // classes without a matching cluster leave Δ_FR undefined
                match aligned_targets(&yb, &map, st.cfg.n_clusters) {
                    Ok(truth) => delta_fr(&st.nets, mu, xb, p_rows, &truth, dof)?,
                    Err(_) => None,
                }
            }
            _ => None,
        };
        Ok((fr, fd))
    }

    fn step(&mut self, xb: &Tensor, p_rows: &Tensor) -> Result<()> {
        let it = self.state.iter;
        match self.step_inner(xb, p_rows) {
            // NaN reached a log: the parameters have already blown up
            Err(Error::Tensor(TensorError::Domain { op, .. })) => Err(self.abort(op, it)),
            r => r,
        }
    }

    fn step_inner(&mut self, xb: &Tensor, p_rows: &Tensor) -> Result<()> {
        let it = self.state.iter;
        let mode = self.state.cfg.mode;
        let sgd = self.state.cfg.sgd();
        let dof = self.state.cfg.dof;
        let mu = self.state.mu.clone().expect("centroids present");
        match mode {
            Mode::Adec if self.state.decoder_block => {
                let z = self.state.nets.encoder.predict(xb)?;
                let lg = decoder_loss_from(&self.state.nets.decoder, xb, &z)?;
                self.check("loss_G", lg.value, it)?;
                let st = &mut self.state;
                apply(&mut st.opt.decoder, sgd, st.nets.decoder.flatten_mut(), lg.grads.decoder.as_deref())?;
                st.updates.decoder += 1;
                st.last_losses[1] = Some(lg.value);
            }
            Mode::Adec => {
                let (le, outs) = encoder_cluster_loss(&self.state.nets, &mu, xb, p_rows, dof)?;
                let lg = decoder_loss_from(&self.state.nets.decoder, xb, &outs.z)?;
                let vd = discriminator_value_from(&self.state.nets.discriminator, xb, &outs.xhat)?;
                self.check("loss_E", le.value, it)?;
                self.check("loss_G", lg.value, it)?;
                self.check("loss_D", vd.value, it)?;
                let st = &mut self.state;
                apply(&mut st.opt.encoder, sgd, st.nets.encoder.flatten_mut(), le.grads.encoder.as_deref())?;
                let mu = st.mu.as_mut().unwrap();
                apply(&mut st.opt.centroids, sgd, mu.data_mut(), le.grads.centroids.as_deref())?;
                apply(&mut st.opt.decoder, sgd, st.nets.decoder.flatten_mut(), lg.grads.decoder.as_deref())?;
                apply(
                    &mut st.opt.discriminator,
                    sgd,
                    st.nets.discriminator.flatten_mut(),
                    vd.grads.discriminator.as_deref(),
                )?;
                st.updates.encoder += 1;
                st.updates.centroids += 1;
                st.updates.decoder += 1;
                st.updates.discriminator += 1;
                st.last_losses = [Some(le.value), Some(lg.value), Some(vd.value)];
            }
            Mode::Dec | Mode::Idec => {
                let (w_r, w_c) = match mode {
                    Mode::Dec => (0.0, 1.0),
                    _ => (1.0, self.state.cfg.gamma),
                };
                let bl = baseline_loss(&self.state.nets, &mu, xb, p_rows, dof, w_r, w_c)?;
                self.check("loss_E", bl.value, it)?;
                let st = &mut self.state;
                apply(&mut st.opt.encoder, sgd, st.nets.encoder.flatten_mut(), bl.grads.encoder.as_deref())?;
                let mu = st.mu.as_mut().unwrap();
                apply(&mut st.opt.centroids, sgd, mu.data_mut(), bl.grads.centroids.as_deref())?;
                st.updates.encoder += 1;
                st.updates.centroids += 1;
                if mode == Mode::Idec {
                    apply(&mut st.opt.decoder, sgd, st.nets.decoder.flatten_mut(), bl.grads.decoder.as_deref())?;
                    st.updates.decoder += 1;
                }
                st.last_losses[0] = Some(bl.value);
            }
        }
        // a finite loss can still produce an overflowing step
        let st = &self.state;
        for (name, params) in [
            ("encoder parameters", st.nets.encoder.flatten()),
            ("decoder parameters", st.nets.decoder.flatten()),
            ("discriminator parameters", st.nets.discriminator.flatten()),
            ("centroids", st.mu.as_ref().map_or(&[][..], |m| m.data())),
        ] {
            if params.iter().any(|v| !v.is_finite()) {
                return Err(self.abort(name, it));
            }
        }
        if mode == Mode::Adec {
            let st = &mut self.state;
            st.block_j += 1;
            if st.block_j >= st.cfg.block_len {
                st.decoder_block = !st.decoder_block;
                st.block_j = 0;
            }
        }
        Ok(())
    }

    /// Clustering iterations until the counter reaches `until` or, when
    /// `allow_stop`, the labels settle.
    pub fn run_clustering(&mut self, until: u64, allow_stop: bool) -> Result<ClusterOutcome> {
        self.start_clustering()?;
        let ds = self.ds;
        let t = self.state.cfg.effective_update_interval(ds.len());
        let every = self.state.cfg.checkpoint_every;
        while self.state.stage == Stage::Clustering {
            let i = self.state.iter;
            let mut row = None;
            if i % t == 0 && self.state.last_p_iter != Some(i) {
                let change = self.update_targets()?;
                let mut r = MetricsRow::new(i, "cluster");
                (r.acc, r.nmi) = self.label_metrics(self.state.y_pred.as_ref().unwrap())?;
                r.label_change_frac = change;
                let initial = self.state.p_updates == 1;
                if allow_stop && !initial && change.is_some_and(|c| c < self.state.cfg.tol) {
                    log::info!("labels settled at iteration {i}");
                    self.state.stage = Stage::Converged;
                    r.wall_ms = self.wall();
                    self.log.push(r);
                    break;
                }
                row = Some(r);
            }
            if i >= until {
                if let Some(mut r) = row {
                    r.wall_ms = self.wall();
                    self.log.push(r);
                }
                break;
            }
            let idx = self.state.batches.next_indices();
            let xb = ds.x.select_rows(&idx);
            let p_rows = self.state.p.as_ref().expect("targets computed").select_rows(&idx);
            if let Some(r) = row.as_mut() {
                if self.state.cfg.diagnostics {
                    (r.delta_fr, r.delta_fd) = self.diagnostics(&idx, &xb, &p_rows)?;
                }
            }
            self.step(&xb, &p_rows)?;
            self.state.iter += 1;
            if let Some(mut r) = row {
                [r.loss_e, r.loss_g, r.loss_d] = self.state.last_losses;
                r.wall_ms = self.wall();
                self.log.push(r);
            }
            if every > 0 && self.state.iter % every == 0 {
                self.save_as(CLUSTER_CHECKPOINT)?;
            }
        }
        let converged = self.state.stage == Stage::Converged;
        let labels = if converged {
            self.state.y_pred.clone().unwrap()
        } else {
            predict_labels(&self.soft_assignments()?.1)
        };
        let mut r = MetricsRow::new(self.state.iter, "final");
        (r.acc, r.nmi) = self.label_metrics(&labels)?;
        r.wall_ms = self.wall();
        self.log.push(r);
        self.save_as(CLUSTER_CHECKPOINT)?;
        Ok(ClusterOutcome {
            labels,
            converged,
            iters: self.state.iter,
        })
    }

    /// Full clustering stage with the configured iteration budget.
    pub fn cluster(&mut self) -> Result<ClusterOutcome> {
        let until = self.state.cfg.max_iter;
        self.run_clustering(until, true)
    }

    /// Continues training for `diagnose_iters` iterations without the
    /// stopping rule, logging gradient diagnostics at every target update.
    pub fn diagnose(&mut self, mode: Mode) -> Result<()> {
        if self.state.cfg.mode != mode && self.state.stage >= Stage::Clustering {
            log::info!("diagnosing a {} checkpoint in {mode} mode", self.state.cfg.mode);
        }
        self.state.cfg.mode = mode;
        self.state.cfg.diagnostics = true;
        if self.state.stage == Stage::Converged {
            self.state.stage = Stage::Clustering;
        }
        self.start_clustering()?;
        let until = self.state.iter + self.state.cfg.diagnose_iters;
        self.run_clustering(until, false).map(|_| ())
    }
}

/// One run of the γ sweep.
#[derive(Debug, Clone)]
pub struct SweepRun {
    pub gamma: f64,
    pub log: Vec<MetricsRow>,
    /// `None` when the run diverged.
    pub outcome: Option<ClusterOutcome>,
    pub final_acc: Option<f64>,
    /// Iteration at which a loss became non-finite.
    pub diverged_at: Option<u64>,
}

pub const DEFAULT_GAMMAS: [f64; 7] = [1e-3, 1e-2, 1e-1, 1.0, 10.0, 1e2, 1e3];

/// IDEC clustering from one pretrained state per γ; with `out`, each log is
/// written as `metrics_gamma_<γ>.csv`.
pub fn sweep_gamma(
    pretrained: &TrainState,
    ds: &Dataset,
    gammas: &[f64],
    out: Option<&Path>,
) -> Result<Vec<SweepRun>> {
    if pretrained.stage > Stage::Pretrained {
        return Err(Error::Contract("the sweep needs a pretrained, not yet clustered, checkpoint".into()));
    }
    let mut runs = Vec::with_capacity(gammas.len());
    for &gamma in gammas {
        let mut state = pretrained.clone();
        state.cfg.mode = Mode::Idec;
        state.cfg.gamma = gamma;
        state.cfg.validate()?;
        let mut s = Session::new(state, ds)?;
        let (outcome, diverged_at) = match s.cluster() {
            Ok(o) => (Some(o), None),
            Err(Error::NonFiniteLoss { iter, .. }) => {
                log::warn!("γ = {gamma}: diverged at iteration {iter}");
                s.log.push(MetricsRow::new(iter as u64, "diverged"));
                (None, Some(iter as u64))
            }
            Err(e) => return Err(e),
        };
        let final_acc = outcome.as_ref().and_then(|_| s.log.last().and_then(|r| r.acc));
        if let Some(dir) = out {
            s.write_log(dir.join(format!("metrics_gamma_{gamma:e}.csv")))?;
        }
        runs.push(SweepRun {
            gamma,
            log: s.log,
            outcome,
            final_acc,
            diverged_at,
        });
    }
    Ok(runs)
}
