use bits2photon::autodiff::Graph;
use bits2photon::metrics::{render_views, ssim};
use bits2photon::net::{decode_pipeline, encode_pipeline, B2PModel, ModelConfig};
use bits2photon::synth::{synth_cloud, SynthKind, SynthSpec};
use bits2photon::train::*;
use bits2photon::Error;

fn narrow() -> ModelConfig {
    ModelConfig {
        channels: 8,
        squeezed: 4,
        ..ModelConfig::toy()
    }
}

fn cfg() -> TrainConfig {
    TrainConfig {
        image_size: 24,
        views_per_scene: 2,
        ..TrainConfig::toy()
    }
}

fn sphere(seed: u64) -> bits2photon::voxel::PointCloud {
    let mut s = SynthSpec::new(SynthKind::Sphere, 6, seed);
    s.size = 0.1;
    synth_cloud(&s).unwrap()
}

#[test]
fn zero_iterations_give_the_initialization() {
    let c = TrainConfig { iters: 0, seed: 5, ..cfg() };
    let (m, log) = train(vec![sphere(1)], c).unwrap();
    assert!(log.is_empty());
    assert_eq!(m, B2PModel::new(c.model_config(), 5).unwrap());
}

#[test]
fn zero_learning_rate_freezes_the_model_and_loss() {
    let c = TrainConfig { lr: 0.0, ..cfg() };
    let init = B2PModel::new(narrow(), 2).unwrap();
    let mut t = Trainer::new(init.clone(), vec![sphere(2)], c).unwrap();
    let cams = t.rig().circle(2).unwrap();
    let truth: Vec<_> = cams.iter().map(|cam| t.scenes()[0].ground_truth(cam)).collect();
    let probe = |t: &Trainer| {
        let mut g = Graph::new(&t.model.store);
        scene_loss(&mut g, &t.model, &t.scenes()[0], &cams, &truth, &c, None).unwrap().1
    };
    let before = probe(&t);
    for _ in 0..3 {
        t.step().unwrap();
    }
    assert_eq!(t.model, init);
    assert_eq!(probe(&t), before);
}

#[test]
fn training_is_reproducible() {
    let run = || {
        let mut t = Trainer::new(B2PModel::new(narrow(), 3).unwrap(), vec![sphere(3), sphere(4)], TrainConfig { batch: 2, ..cfg() }).unwrap();
        for _ in 0..3 {
            t.step().unwrap();
        }
        t.finish()
    };
    let (a, la) = run();
    let (b, lb) = run();
    assert_eq!(a, b);
    assert_eq!(la, lb);
    assert_ne!(a, B2PModel::new(narrow(), 3).unwrap());
}

#[test]
fn loss_is_the_hand_assembled_sum() {
    let c = cfg();
    let model = B2PModel::new(narrow(), 6).unwrap();
    let pc = sphere(6);
    let scene = Scene::new(pc.clone(), &model.config).unwrap();
    let rig = ViewRig::for_depth(6, c.image_size);
    let cams = rig.circle(3).unwrap();
    let truth: Vec<_> = cams.iter().map(|cam| scene.ground_truth(cam)).collect();
    let mut g = Graph::new(&model.store);
    let (_, terms) = scene_loss(&mut g, &model, &scene, &cams, &truth, &c, None).unwrap();

    let enc = encode_pipeline(&pc, &model, None).unwrap();
    assert_eq!(enc.clamped, 0);
    let rate: f64 = enc.estimated_bits.values().sum::<f64>() / pc.len() as f64;
    let mut dist = 0.0;
    for m in 4..=5 {
        let renders = render_views(&decode_pipeline(&enc.stream, &model, m).unwrap().gaussians, &cams);
        for (r, t) in renders.iter().zip(&truth) {
            let l1 = r.data.iter().zip(&t.data).map(|(a, b)| (a - b).abs()).sum::<f64>() / r.data.len() as f64;
            dist += c.alpha * l1 + c.beta * (1.0 - ssim(r, t));
        }
    }
    let want = rate + c.lambda * dist / cams.len() as f64;
    assert!((terms.rate - rate).abs() < 1e-10, "{} vs {rate}", terms.rate);
    assert!((terms.total - want).abs() < 1e-10, "{} vs {want}", terms.total);
}

#[test]
fn distortion_free_cases_reduce_to_rate() {
    let model = B2PModel::new(narrow(), 7).unwrap();
    let pc = sphere(7);
    let scene = Scene::new(pc.clone(), &model.config).unwrap();
    let cams = ViewRig::for_depth(6, 16).circle(2).unwrap();
    let truth: Vec<_> = cams.iter().map(|cam| scene.ground_truth(cam)).collect();
    let eval = |c: &TrainConfig, truth: &[bits2photon::splat::Image]| {
        let mut g = Graph::new(&model.store);
        scene_loss(&mut g, &model, &scene, &cams, truth, c, None).unwrap().1
    };

    let t = eval(&TrainConfig { lambda: 0.0, ..cfg() }, &truth);
    assert_eq!(t.total, t.rate);
    assert!(t.l1 > 0.0);

    // both render levels compared against their own renders
    let mut lo = cfg();
    lo.min_level = 5;
    let model5 = B2PModel::new(ModelConfig { min_level: 5, ..narrow() }, 7).unwrap();
    let scene5 = Scene::new(pc.clone(), &model5.config).unwrap();
    let enc = encode_pipeline(&pc, &model5, None).unwrap();
    let own = render_views(&decode_pipeline(&enc.stream, &model5, 5).unwrap().gaussians, &cams);
    let mut g = Graph::new(&model5.store);
    let t = scene_loss(&mut g, &model5, &scene5, &cams, &own, &lo, None).unwrap().1;
    assert!(t.l1 < 1e-12 && t.ssim.abs() < 1e-12);
    assert!((t.total - t.rate).abs() < 1e-9);

    let mut last = f64::NEG_INFINITY;
    for lambda in [0.0, 1.0, 5.0, 20.0] {
        let v = eval(&TrainConfig { lambda, ..cfg() }, &truth).total;
        assert!(v >= last);
        last = v;
    }
}

#[test]
fn non_finite_terms_are_named() {
    let mut model = B2PModel::new(narrow(), 8).unwrap();
    let id = model.store.id("entropy.L3.mu.b").unwrap();
    model.store.get_mut(id).as_mut_slice()[0] = f64::NAN;
    let mut t = Trainer::new(model, vec![sphere(8)], cfg()).unwrap();
    match t.step() {
        Err(Error::Numeric(msg)) => assert!(msg.contains("rate"), "{msg}"),
        other => panic!("expected a numeric error, got {other:?}"),
    }

    let mut model = B2PModel::new(narrow(), 8).unwrap();
    let id = model.store.id("generate.L5.head.b").unwrap();
    model.store.get_mut(id).as_mut_slice()[12] = f64::INFINITY;
    let mut t = Trainer::new(model, vec![sphere(8)], cfg()).unwrap();
    match t.step() {
        Err(Error::Numeric(msg)) => assert!(msg.contains("color_g"), "{msg}"),
        other => panic!("expected a numeric error, got {other:?}"),
    }
}

#[test]
fn log_is_written_as_csv() {
    let mut t = Trainer::new(B2PModel::new(narrow(), 9).unwrap(), vec![sphere(9)], cfg()).unwrap();
    t.step().unwrap();
    t.step().unwrap();
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("log.csv");
    write_log_csv(&p, &t.log).unwrap();
    let text = std::fs::read_to_string(&p).unwrap();
    let lines: Vec<_> = text.lines().collect();
    assert_eq!(lines[0], "iter,rate_bpp,l1,ssim_term,total");
    assert_eq!(lines.len(), 3);
    assert!(lines[2].starts_with("1,"));
}

#[test]
fn bad_configs_are_rejected() {
    for c in [
        TrainConfig { lambda: -1.0, ..cfg() },
        TrainConfig { min_level: 2, ..cfg() },
        TrainConfig { views_per_scene: 0, ..cfg() },
    ] {
        assert!(matches!(c.validate(), Err(Error::Config(_))));
    }
    let other = B2PModel::new(ModelConfig::full_scale(), 0).unwrap();
    assert!(Trainer::new(other, vec![sphere(1)], cfg()).is_err());
}
