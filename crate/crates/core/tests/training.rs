use adec_core::data::{gaussian_blobs, Dataset};
use adec_core::train::{
    emit_plot, parse_log, read_log, render_log, render_svg, sweep_gamma, Mode, MetricsRow, RunConfig,
    Session, Stage, TrainState, DEFAULT_GAMMAS,
};
use adec_core::Error;

fn blobs(n: usize, seed: u64) -> Dataset {
    gaussian_blobs(n, 16, 4, 6.0, seed).unwrap()
}

fn small_cfg(mode: Mode) -> RunConfig {
    let mut cfg = RunConfig {
        mode,
        n_clusters: 4,
        embed_dim: 4,
        ae_hidden: vec![32, 32],
        adv_hidden: vec![16],
        batch_size: 32,
        pretrain_iters: 60,
        max_iter: 60,
        update_interval: 20,
        block_len: 5,
        disc_pretrain_iters: 20,
        kmeans_restarts: 3,
        checkpoint_every: 0,
        deterministic: true,
        adam_lr: 1e-3,
        sgd_lr: 1e-2,
        ..RunConfig::default()
    };
    cfg.seed = 3;
    cfg
}

fn pretrained(cfg: RunConfig, ds: &Dataset) -> TrainState {
    let mut s = Session::new(TrainState::new(cfg, ds).unwrap(), ds).unwrap();
    s.pretrain().unwrap();
    s.state
}

#[test]
fn checkpoint_save_load_save_is_byte_identical() {
    let ds = blobs(120, 1);
    let dir = tempfile::tempdir().unwrap();
    let mut s = Session::new(pretrained(small_cfg(Mode::Adec), &ds), &ds).unwrap();
    s.run_clustering(27, false).unwrap();
    let a = dir.path().join("a.ckpt");
    let b = dir.path().join("b.ckpt");
    s.state.save(&a).unwrap();
    TrainState::load(&a).unwrap().save(&b).unwrap();
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}

#[test]
fn zero_pretrain_iterations_keep_initialization() {
    let ds = blobs(80, 2);
    let mut cfg = small_cfg(Mode::Adec);
    cfg.pretrain_iters = 0;
    let init = TrainState::new(cfg.clone(), &ds).unwrap();
    let after = pretrained(cfg, &ds);
    assert_eq!(after.nets, init.nets);
    assert_eq!(after.stage, Stage::Pretrained);
}

#[test]
fn zero_lambda_leaves_critic_untouched() {
    let ds = blobs(80, 2);
    let mut cfg = small_cfg(Mode::Adec);
    cfg.lambda = 0.0;
    let init = TrainState::new(cfg.clone(), &ds).unwrap();
    let after = pretrained(cfg, &ds);
    assert_eq!(after.nets.critic, init.nets.critic);
    assert_ne!(after.nets.encoder, init.nets.encoder);
}

#[test]
fn pretraining_reduces_reconstruction_on_blobs() {
    let ds = blobs(400, 4);
    let mut cfg = small_cfg(Mode::Adec);
    cfg.pretrain_iters = 2000;
    cfg.update_interval = 100;
    cfg.ae_hidden = vec![64, 64];
    let mut s = Session::new(TrainState::new(cfg, &ds).unwrap(), &ds).unwrap();
    s.pretrain().unwrap();
    let rec = |st: &TrainState| {
        let xhat = st.nets.decoder.predict(&st.nets.encoder.predict(&ds.x).unwrap()).unwrap();
        let d: f64 = xhat.data().iter().zip(ds.x.data()).map(|(a, b)| (a - b).powi(2)).sum();
        d / ds.len() as f64
    };
    let init = TrainState::new(s.state.cfg.clone(), &ds).unwrap();
    let (r0, r1) = (rec(&init), rec(&s.state));
    assert!(r1 < 0.1 * r0, "reconstruction {r0} -> {r1}");
}

#[test]
fn tol_one_stops_at_second_target_update() {
    let ds = blobs(120, 5);
    let mut cfg = small_cfg(Mode::Adec);
    cfg.tol = 1.0;
    cfg.max_iter = 1000;
    let mut s = Session::new(pretrained(cfg, &ds), &ds).unwrap();
    let out = s.cluster().unwrap();
    assert!(out.converged);
    assert_eq!(out.iters, 20);
    assert_eq!(s.state.p_updates, 2);
}

#[test]
fn zero_max_iter_returns_kmeans_labels() {
    let ds = blobs(120, 6);
    let mut cfg = small_cfg(Mode::Dec);
    cfg.max_iter = 0;
    let mut s = Session::new(pretrained(cfg, &ds), &ds).unwrap();
    s.start_clustering().unwrap();
    let km = s.state.y_pred.clone().unwrap();
    let out = s.cluster().unwrap();
    assert_eq!(out.labels, km);
    assert_eq!(out.iters, 0);
}

#[test]
fn block_structure_allots_updates() {
    let ds = blobs(120, 7);
    let cfg = small_cfg(Mode::Adec);
    let m = cfg.block_len;
    let mut s = Session::new(pretrained(cfg, &ds), &ds).unwrap();
    s.start_clustering().unwrap();
    let mut history = vec![s.state.updates];
    for i in 1..=6 * m {
        s.run_clustering(i, false).unwrap();
        history.push(s.state.updates);
    }
    // decoder-only block first
    assert_eq!(history[m as usize].encoder, 0);
    assert_eq!(history[m as usize].decoder, m);
    for start in 0..=(history.len() - 1 - 2 * m as usize) {
        let (a, b) = (history[start], history[start + 2 * m as usize]);
        assert_eq!(b.decoder - a.decoder, 2 * m);
        assert_eq!(b.encoder - a.encoder, m);
        assert_eq!(b.discriminator - a.discriminator, m);
        assert_eq!(b.centroids - a.centroids, m);
    }
}

#[test]
fn resumed_run_matches_uninterrupted_run() {
    let ds = blobs(120, 8);
    let dir = tempfile::tempdir().unwrap();
    let base = pretrained(small_cfg(Mode::Adec), &ds);

    let mut whole = Session::new(base.clone(), &ds).unwrap();
    whole.run_clustering(45, false).unwrap();

    let mut first = Session::new(base, &ds).unwrap();
    first.run_clustering(23, false).unwrap();
    let path = dir.path().join("mid.ckpt");
    first.state.save(&path).unwrap();
    let mut second = Session::new(TrainState::load(&path).unwrap(), &ds).unwrap();
    second.run_clustering(45, false).unwrap();

    assert_eq!(second.state.to_checkpoint().encode(), whole.state.to_checkpoint().encode());
}

#[test]
fn dec_mode_never_touches_decoder_or_discriminator() {
    let ds = blobs(120, 9);
    let base = pretrained(small_cfg(Mode::Dec), &ds);
    let mut s = Session::new(base.clone(), &ds).unwrap();
    s.cluster().unwrap();
    assert_eq!(s.state.nets.decoder, base.nets.decoder);
    assert_eq!(s.state.nets.discriminator, base.nets.discriminator);
    assert_ne!(s.state.nets.encoder, base.nets.encoder);
    assert!(s.log.iter().all(|r| r.delta_fd.is_none()));
}

#[test]
fn deterministic_runs_produce_identical_logs() {
    let ds = blobs(120, 10);
    let run = || {
        let cfg = small_cfg(Mode::Adec);
        let mut s = Session::new(TrainState::new(cfg, &ds).unwrap(), &ds).unwrap();
        s.pretrain().unwrap();
        s.cluster().unwrap();
        render_log(&s.log)
    };
    let (a, b) = (run(), run());
    assert_eq!(a, b);
    let rows = parse_log(&a).unwrap();
    assert!(rows.iter().all(|r| r.wall_ms.is_none()));
    assert!(rows.iter().any(|r| r.delta_fr.is_some() && r.delta_fd.is_some()));
}

#[test]
fn sweep_runs_share_initial_accuracy() {
    let ds = blobs(120, 11);
    let mut cfg = small_cfg(Mode::Idec);
    cfg.max_iter = 20;
    cfg.sgd_lr = 1e-4;
    let base = pretrained(cfg, &ds);
    let dir = tempfile::tempdir().unwrap();
    let runs = sweep_gamma(&base, &ds, &DEFAULT_GAMMAS, Some(dir.path())).unwrap();
    assert_eq!(runs.len(), 7);
    let initial: Vec<Option<f64>> = runs.iter().map(|r| r.log[0].acc).collect();
    assert!(initial[0].is_some());
    assert!(initial.iter().all(|a| *a == initial[0]));
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 7);
}

#[test]
fn non_finite_loss_aborts_with_dump() {
    let ds = blobs(80, 12);
    let mut state = TrainState::new(small_cfg(Mode::Adec), &ds).unwrap();
    state.nets.encoder.flatten_mut()[0] = f64::NAN;
    let dir = tempfile::tempdir().unwrap();
    let mut s = Session::new(state, &ds).unwrap().with_output(dir.path());
    let err = s.pretrain().unwrap_err();
    assert!(matches!(err, Error::NonFiniteLoss { iter: 0, .. }), "{err}");
    assert!(dir.path().join("abort.ckpt").exists());
}

#[test]
fn plot_renders_valid_svg() {
    let mut a = MetricsRow::new(0, "cluster");
    a.acc = Some(0.5);
    let mut b = MetricsRow::new(140, "cluster");
    b.acc = Some(0.75);
    let svg = render_svg(&[a, b], &["acc"]).unwrap();
    let doc = roxmltree::Document::parse(&svg).unwrap();
    let line = doc.descendants().find(|n| n.has_tag_name("polyline")).unwrap();
    assert_eq!(line.attribute("points").unwrap().split(' ').count(), 2);
    assert_eq!(doc.descendants().filter(|n| n.has_tag_name("circle")).count(), 2);

    let empty = render_svg(&[], &["acc", "delta_fd"]).unwrap();
    roxmltree::Document::parse(&empty).unwrap();
    assert!(matches!(render_svg(&[], &["bogus"]), Err(Error::Usage(_))));
}

#[test]
fn plot_is_written_next_to_log() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("metrics.csv");
    let mut r = MetricsRow::new(3, "cluster");
    r.loss_e = Some(1.0);
    adec_core::train::write_log(&log, &[r.clone()]).unwrap();
    assert_eq!(read_log(&log).unwrap(), vec![r]);
    let svg = emit_plot(&log, &["loss_E"]).unwrap();
    assert_eq!(svg, dir.path().join("metrics.svg"));
}

#[test]
fn overflowing_step_aborts_as_divergence() {
    let ds = blobs(80, 13);
    let mut cfg = small_cfg(Mode::Idec);
    cfg.sgd_lr = 1e200;
    let mut s = Session::new(pretrained(cfg, &ds), &ds).unwrap();
    let err = s.cluster().unwrap_err();
    assert!(matches!(err, Error::NonFiniteLoss { .. }), "{err}");
}
