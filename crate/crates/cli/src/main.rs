use std::path::{Path, PathBuf};
use std::process::ExitCode;

use adec_core::cluster::{grad_le_mu, grad_le_z, kl_loss, soft_assign, target_distribution};
use adec_core::data::Dataset;
use adec_core::diagnostics::{check_theorem1, finite_diff_check, random_semi_orthogonal, DecompositionInstance};
use adec_core::rng::seeded;
use adec_core::tensor::Tensor;
use adec_core::train::{
    emit_plot, evaluate, sweep_gamma, write_embedding, DatasetKind, Mode, RunConfig, Session, Stage,
    TrainState, DEFAULT_GAMMAS, PRETRAIN_CHECKPOINT, CLUSTER_CHECKPOINT,
};
use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rand::Rng as _;

#[derive(Parser)]
#[command(name = "adec", version, about = "Adversarial deep embedded clustering and the DEC/IDEC baselines")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct Common {
    /// `key = value` config file; flags override it
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    dataset: Option<PathBuf>,
    /// idx or table
    #[arg(long, global = true)]
    dataset_kind: Option<DatasetKind>,
    /// idx label file
    #[arg(long, global = true)]
    labels: Option<PathBuf>,
    /// adec, dec or idec
    #[arg(long, global = true)]
    mode: Option<Mode>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory for checkpoints, logs and reports
    #[arg(long, global = true, default_value = "run")]
    out: PathBuf,
    /// Reproducible runs: fixed seeds, no wall-clock column in logs
    #[arg(long, global = true)]
    deterministic: bool,
    /// Extra config overrides, `key=value`
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Autoencoder + critic pretraining
    Pretrain,
    /// Clustering from a pretrained checkpoint
    Cluster {
        /// Defaults to <out>/pretrain.ckpt
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Accuracy, NMI, cluster sizes and a 2-D embedding of a checkpoint
    Evaluate {
        /// Defaults to <out>/cluster.ckpt
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Continue training while logging feature randomness/drift diagnostics
    Diagnose {
        /// Defaults to <out>/pretrain.ckpt
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// IDEC runs over a range of γ from one pretrained checkpoint
    SweepGamma {
        /// Defaults to <out>/pretrain.ckpt
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_GAMMAS.to_vec())]
        gammas: Vec<f64>,
    },
    /// SVG line chart of metrics-log columns, written next to the log
    Plot {
        log: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "acc,nmi")]
        columns: Vec<String>,
    },
    /// Numerical self-checks of the decomposition identity and clustering gradients
    Check {
        #[arg(long, default_value_t = 50)]
        instances: usize,
    },
}

impl Common {
    /// Layers the config file, then flags, onto `base`.
    fn resolve(&self, mut cfg: RunConfig) -> Result<RunConfig> {
        if let Some(path) = &self.config {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            cfg.apply_text(&text).with_context(|| format!("in {}", path.display()))?;
        }
        if let Some(p) = &self.dataset {
            cfg.dataset = p.display().to_string();
        }
        if let Some(k) = self.dataset_kind {
            cfg.dataset_kind = k;
        }
        if let Some(p) = &self.labels {
            cfg.labels = p.display().to_string();
        }
        if let Some(m) = self.mode {
            cfg.mode = m;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if self.deterministic {
            cfg.deterministic = true;
        }
        for kv in &self.set {
            let (k, v) = kv.split_once('=').with_context(|| format!("--set expects key=value, got {kv:?}"))?;
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn out_dir(&self) -> Result<&Path> {
        std::fs::create_dir_all(&self.out).with_context(|| format!("creating {}", self.out.display()))?;
        Ok(&self.out)
    }

    /// Checkpoint with its stored config overridden by file and flags.
    fn load_state(&self, checkpoint: &Option<PathBuf>, default: &str) -> Result<TrainState> {
        let path = checkpoint.clone().unwrap_or_else(|| self.out.join(default));
        let mut state = TrainState::load(&path).with_context(|| format!("loading {}", path.display()))?;
        state.cfg = self.resolve(state.cfg.clone())?;
        Ok(state)
    }
}

fn load_dataset(cfg: &RunConfig) -> Result<Dataset> {
    let ds = cfg.load_dataset().with_context(|| format!("loading dataset {:?}", cfg.dataset))?;
    log::info!("{}: {} samples of dimension {}", ds.name, ds.len(), ds.dim());
    Ok(ds)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or("n/a".into(), |x| format!("{x:.4}"))
}

fn pretrain(common: &Common) -> Result<()> {
    let cfg = common.resolve(RunConfig::default())?;
    let ds = load_dataset(&cfg)?;
    let out = common.out_dir()?;
    let mut s = Session::new(TrainState::new(cfg, &ds)?, &ds)?.with_output(out);
    s.pretrain()?;
    s.write_log(out.join("metrics_pretrain.csv"))?;
    println!("pretrained {} iterations -> {}", s.state.pretrain_iter, out.join(PRETRAIN_CHECKPOINT).display());
    Ok(())
}

fn cluster(common: &Common, checkpoint: &Option<PathBuf>) -> Result<()> {
    let state = common.load_state(checkpoint, PRETRAIN_CHECKPOINT)?;
    if state.stage < Stage::Pretrained {
        bail!("checkpoint is not pretrained (stage {})", state.stage);
    }
    let ds = load_dataset(&state.cfg)?;
    let out = common.out_dir()?;
    let mode = state.cfg.mode;
    let mut s = Session::new(state, &ds)?.with_output(out);
    let outcome = s.cluster()?;
    let log = out.join(format!("metrics_cluster_{mode}.csv"));
    s.write_log(&log)?;
    let last = s.log.last();
    println!(
        "{mode}: {} after {} iterations, acc {}, nmi {}; log {}",
        if outcome.converged { "converged" } else { "stopped" },
        outcome.iters,
        fmt_opt(last.and_then(|r| r.acc)),
        fmt_opt(last.and_then(|r| r.nmi)),
        log.display()
    );
    Ok(())
}

fn evaluate_cmd(common: &Common, checkpoint: &Option<PathBuf>) -> Result<()> {
    let state = common.load_state(checkpoint, CLUSTER_CHECKPOINT)?;
    let ds = load_dataset(&state.cfg)?;
    let out = common.out_dir()?;
    let (report, emb, labels) = evaluate(&state, &ds)?;
    report.write(out.join("report.csv"))?;
    write_embedding(out.join("embedding.csv"), &emb, &labels, ds.labels.as_deref())?;
    if report.acc.is_none() {
        println!("no labels: accuracy and NMI unavailable");
    }
    print!("{}", report.to_text());
    Ok(())
}

fn diagnose(common: &Common, checkpoint: &Option<PathBuf>) -> Result<()> {
    let state = common.load_state(checkpoint, PRETRAIN_CHECKPOINT)?;
    if state.stage < Stage::Pretrained {
        bail!("checkpoint is not pretrained (stage {})", state.stage);
    }
    let ds = load_dataset(&state.cfg)?;
    if ds.labels.is_none() {
        log::warn!("dataset has no labels; feature randomness will be unavailable");
    }
    let out = common.out_dir()?;
    let mode = state.cfg.mode;
    let mut s = Session::new(state, &ds)?;
    s.diagnose(mode)?;
    let log = out.join(format!("metrics_diagnose_{mode}.csv"));
    s.write_log(&log)?;
    let rows: Vec<_> = s.log.iter().filter(|r| r.stage == "cluster").collect();
    let mean = |f: fn(&adec_core::train::MetricsRow) -> Option<f64>| {
        let v: Vec<f64> = rows.iter().filter_map(|r| f(r)).collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    };
    println!(
        "{mode}: {} logged points, mean delta_fr {}, mean delta_fd {}; log {}",
        rows.len(),
        fmt_opt(mean(|r| r.delta_fr)),
        fmt_opt(mean(|r| r.delta_fd)),
        log.display()
    );
    Ok(())
}

fn sweep(common: &Common, checkpoint: &Option<PathBuf>, gammas: &[f64]) -> Result<()> {
    let state = common.load_state(checkpoint, PRETRAIN_CHECKPOINT)?;
    let ds = load_dataset(&state.cfg)?;
    let out = common.out_dir()?;
    let runs = sweep_gamma(&state, &ds, gammas, Some(out))?;
    println!("gamma,final_acc,diverged_at");
    for r in runs {
        println!(
            "{:e},{},{}",
            r.gamma,
            r.final_acc.map_or(String::new(), |a| format!("{a:.4}")),
            r.diverged_at.map_or(String::new(), |i| i.to_string())
        );
    }
    Ok(())
}

/// Central differences of the summed KL objective against its closed-form
/// gradients, on random small problems.
fn kl_gradient_error(trials: usize, seed: u64) -> Result<f64> {
    let mut rng = seeded(seed);
    let mut worst = 0.0f64;
    for t in 0..trials {
        let (n, d, k) = (rng.random_range(2..=32), rng.random_range(1..=10), rng.random_range(2..=5));
        let mut mat = |r: usize, c: usize| {
            Tensor::matrix(r, c, (0..r * c).map(|_| rng.random_range(-2.0..2.0)).collect())
        };
        let (z, mu, zp) = (mat(n, d)?, mat(k, d)?, mat(n, d)?);
        let p = target_distribution(&soft_assign(&zp, &mu, 1.0)?);
        let q = soft_assign(&z, &mu, 1.0)?;
        let zero = vec![0.0; d];
        let mut grad: Vec<f64> = (0..n).flat_map(|i| grad_le_z(z.row(i), &mu, p.row(i), q.row(i), &zero)).collect();
        grad.extend((0..k).flat_map(|j| grad_le_mu(&z, &mu, j, &p, &q)));
        let mut params = z.data().to_vec();
        params.extend_from_slice(mu.data());
        let err = finite_diff_check(
            |x| {
                let z = Tensor::matrix(n, d, x[..n * d].to_vec())?;
                let mu = Tensor::matrix(k, d, x[n * d..].to_vec())?;
                kl_loss(&p, &soft_assign(&z, &mu, 1.0)?)
            },
            &params,
            &grad,
            1e-5,
            params.len(),
            seed + t as u64,
        )?;
        worst = worst.max(err);
    }
    Ok(worst)
}

fn check(common: &Common, instances: usize) -> Result<bool> {
    let seed = common.seed.unwrap_or(0);
    let mut rng = seeded(seed);
    let (mut latent, mut data, mut endpoint) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..instances {
        let n = rng.random_range(2..=8);
        let d = rng.random_range(1..=n);
        let n_samples = rng.random_range(4..=24);
        let gamma = rng.random_range(0.01..10.0);
        latent = latent.max(check_theorem1(&DecompositionInstance::random(n_samples, n, d, gamma, &mut rng)?)?.residual_latent);
        let mut sq = DecompositionInstance::random(n_samples, n, n, gamma, &mut rng)?;
        sq.a = random_semi_orthogonal(n, n, &mut rng)?;
        data = data.max(check_theorem1(&sq)?.residual_data);
        sq.b = sq.a.transpose();
        let r = check_theorem1(&sq)?;
        endpoint = endpoint.max((r.l_dcn - r.l_k).abs() / r.l_k.abs().max(f64::MIN_POSITIVE));
    }
    let grad = kl_gradient_error(instances, seed)?;
    let results = [
        ("decomposition identity, latent form", latent, 1e-8),
        ("decomposition identity, data form (orthogonal A)", data, 1e-8),
        ("decomposition endpoint B = A^T", endpoint, 1e-10),
        ("clustering gradients vs finite differences", grad, 1e-5),
    ];
    let mut ok = true;
    for (name, err, tol) in results {
        let pass = err < tol;
        ok &= pass;
        println!("{} {name}: max relative error {err:.2e} (tolerance {tol:.0e})", if pass { "ok  " } else { "FAIL" });
    }
    Ok(ok)
}

fn run(command: &Command, common: &Common) -> Result<bool> {
    match command {
        Command::Pretrain => pretrain(common)?,
        Command::Cluster { checkpoint } => cluster(common, checkpoint)?,
        Command::Evaluate { checkpoint } => evaluate_cmd(common, checkpoint)?,
        Command::Diagnose { checkpoint } => diagnose(common, checkpoint)?,
        Command::SweepGamma { checkpoint, gammas } => sweep(common, checkpoint, gammas)?,
        Command::Plot { log, columns } => {
            let cols: Vec<&str> = columns.iter().map(String::as_str).collect();
            println!("{}", emit_plot(log, &cols)?.display());
        }
        Command::Check { instances } => return check(common, *instances),
    }
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli.command, &cli.common) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            match e.downcast_ref::<adec_core::Error>() {
                Some(adec_core::Error::Usage(_)) => ExitCode::from(2),
                _ => ExitCode::FAILURE,
            }
        }
    }
}
