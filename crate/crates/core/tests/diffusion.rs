use dualcam::codec::{CodecConfig, LatentCodec, LatentTensor};
use dualcam::diffusion::{
    batch_loss, begin_fusion_stage, build_timestep_schedule, draw_batch, initial_noise, log_to_csv, prepare_example,
    sample, sample_from, train_stage, ConditionedModel, ConstantVelocity, SampleLatents, Stage, TimestepSchedule,
    TrainConfig, TrainStage, TrainState, TrainingExample,
};
use dualcam::model::{DualDit, ModelConfig, Params, SigmaSchedule};
use dualcam::scenes::generate_clip;
use dualcam::Error;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn tiny_config() -> ModelConfig {
    ModelConfig {
        num_blocks: 3,
        hidden: 8,
        heads: 2,
        mlp_ratio: 2,
        fusion_depth: 1,
        latent_channels: 4,
        ray_channels: 384,
        vocab: 4,
    }
}

fn tiny_data(n: usize) -> Vec<TrainingExample> {
    let codec = LatentCodec::new(CodecConfig {
        channels: 4,
        ..CodecConfig::default()
    })
    .unwrap();
    (0..n)
        .map(|i| {
            let g = generate_clip(2, i, 5, 16, 16).unwrap();
            prepare_example(&codec, &g.clip.rgb, &g.clip.depth, &g.clip.trajectory, g.clip.tag).unwrap()
        })
        .collect()
}

fn tiny_train_config(steps: usize) -> TrainConfig {
    TrainConfig {
        batch_size: 2,
        stage1_steps: steps,
        stage2_steps: steps,
        seed: 4,
        ..TrainConfig::default()
    }
}

fn fresh_model(seed: u64) -> DualDit {
    DualDit::new(tiny_config(), &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

#[test]
fn example_shapes() {
    let ex = &tiny_data(1)[0];
    assert_eq!(ex.z0_rgb.dims(), (2, 4, 2, 2));
    assert_eq!(ex.z0_depth.dims(), (2, 4, 2, 2));
    assert_eq!(ex.ray_features.dims(), (2, 384, 2, 2));
    // condition holds the first frame only
    assert!(ex.cond_rgb.data[16..].iter().all(|&v| v == 0.0));
    assert!(ex.cond_rgb.data[..16].iter().any(|&v| v != 0.0));
}

#[test]
fn schedule_allocation_examples() {
    let s = build_timestep_schedule(15, 0, None).unwrap();
    assert_eq!(s.stage_counts(), [5, 5, 5]);
    let s = build_timestep_schedule(15, 5, Some(Stage::Early)).unwrap();
    assert_eq!(s.stage_counts(), [10, 5, 5]);
    assert_eq!(s.timesteps().iter().filter(|&&t| t > 0.9 && t <= 1.0).count(), 10);
}

fn oracle_case(schedule: &TimestepSchedule, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dims = (3, 4, 2, 3);
    let z0 = SampleLatents {
        rgb: LatentTensor::randn(3, 4, 2, 3, &mut rng),
        depth: Some(LatentTensor::randn(3, 4, 2, 3, &mut rng)),
    };
    let eps = initial_noise(dims, true, seed);
    let oracle = ConstantVelocity::linear_path(&z0, &eps);
    let out = sample(&oracle, schedule, dims, true, seed).unwrap();
    let err = |a: &LatentTensor, b: &LatentTensor| a.data.iter().zip(&b.data).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    err(&out.rgb, &z0.rgb).max(err(out.depth.as_ref().unwrap(), z0.depth.as_ref().unwrap()))
}

#[test]
fn constant_velocity_is_integrated_exactly() {
    for s in [
        TimestepSchedule::uniform(1).unwrap(),
        build_timestep_schedule(15, 0, None).unwrap(),
        TimestepSchedule::uniform(50).unwrap(),
        build_timestep_schedule(15, 10, Some(Stage::Mid)).unwrap(),
    ] {
        assert!(oracle_case(&s, 3) < 1e-6);
    }
}

#[test]
fn single_step_reconstructs_data() {
    let z0 = SampleLatents {
        rgb: LatentTensor::from_vec(1, 1, 1, 2, vec![0.5, -2.0]).unwrap(),
        depth: None,
    };
    let eps = SampleLatents {
        rgb: LatentTensor::from_vec(1, 1, 1, 2, vec![1.0, 3.0]).unwrap(),
        depth: None,
    };
    let oracle = ConstantVelocity::linear_path(&z0, &eps);
    let out = sample_from(&oracle, &TimestepSchedule::uniform(1).unwrap(), eps).unwrap();
    assert_eq!(out.rgb, z0.rgb);
}

#[test]
fn sampling_is_seed_deterministic() {
    let data = tiny_data(1);
    let model = fresh_model(1);
    let vm = ConditionedModel {
        model: &model,
        cond_rgb: data[0].cond_rgb.clone(),
        cond_depth: data[0].cond_depth.clone(),
        ray_features: data[0].ray_features.clone(),
        tag: data[0].tag,
        gamma: false,
    };
    let s = build_timestep_schedule(6, 0, None).unwrap();
    let dims = data[0].z0_rgb.dims();
    let a = sample(&vm, &s, dims, true, 7).unwrap();
    let b = sample(&vm, &s, dims, true, 7).unwrap();
    let c = sample(&vm, &s, dims, true, 8).unwrap();
    assert_eq!(a, b);
    assert_ne!(a.rgb, c.rgb);
    assert!(a.rgb.all_finite());
}

#[test]
fn non_finite_latents_abort_with_step() {
    struct Blowup;
    impl dualcam::diffusion::VelocityModel for Blowup {
        fn velocity(&self, z: &SampleLatents, t: f64) -> dualcam::Result<SampleLatents> {
            let mut v = z.clone();
            if t < 0.7 {
                v.rgb.data[0] = f64::INFINITY;
            }
            Ok(v)
        }
    }
    let s = TimestepSchedule::uniform(4).unwrap();
    match sample(&Blowup, &s, (1, 1, 1, 1), false, 0) {
        Err(Error::Numeric(msg)) => assert!(msg.contains("step 2"), "{msg}"),
        other => panic!("expected numeric error, got {other:?}"),
    }
}

#[test]
fn zero_learning_rate_keeps_parameters() {
    let data = tiny_data(2);
    let mut cfg = tiny_train_config(3);
    cfg.adam.lr = 0.0;
    let model = fresh_model(2);
    let (after, log) = train_stage(model.clone(), &data, &cfg, TrainStage::Decoupled).unwrap();
    assert_eq!(after, model);
    assert_eq!(log.len(), 3);
}

#[test]
fn training_reduces_loss_and_logs() {
    let data = tiny_data(2);
    let mut cfg = tiny_train_config(40);
    cfg.adam.lr = 1e-2;
    let model = fresh_model(3);
    let before = batch_loss(&model, &data, &cfg, TrainStage::Decoupled, 0, false).unwrap();
    let (after, log) = train_stage(model, &data, &cfg, TrainStage::Decoupled).unwrap();
    assert_eq!(log[0].l_total, before.total);
    let again = batch_loss(&after, &data, &cfg, TrainStage::Decoupled, 0, false).unwrap();
    assert!(again.total < before.total);
    let csv = log_to_csv(&log);
    assert!(csv.starts_with("step,t,L_rgb,L_d,L_total,stage\n"));
    assert_eq!(csv.lines().count(), 41);
    for r in &log {
        assert!(r.t > 0.0 && r.t <= 1.0);
        assert!((r.l_total - (r.l_rgb + cfg.lambda * r.l_d)).abs() < 1e-12);
    }
}

#[test]
fn stage_rules() {
    let data = tiny_data(1);
    let cfg = tiny_train_config(1);
    let s1 = fresh_model(4);
    assert!(TrainState::new(s1.clone(), &cfg, TrainStage::Fusion).is_err());
    let s2 = begin_fusion_stage(&s1, &SigmaSchedule::proportional(3), 0).unwrap();
    assert!(TrainState::new(s2.clone(), &cfg, TrainStage::Decoupled).is_err());
    assert!(begin_fusion_stage(&s2, &SigmaSchedule::proportional(3), 0).is_err());
    let mut rgb_only = s1.clone();
    rgb_only.depth = None;
    let (_, log) = train_stage(rgb_only, &data, &cfg, TrainStage::Decoupled).unwrap();
    assert_eq!(log[0].l_d, 0.0);
}

fn fusion_digest(m: &DualDit) -> Vec<u32> {
    let mut out = Vec::new();
    m.fusion.as_ref().unwrap().visit("", &mut |_, t| {
        out.extend(t.data().iter().map(|&v| (v as f32).to_bits()));
    });
    out
}

#[test]
fn decoupled_stage_leaves_fusion_untouched_and_handoff_is_exact() {
    let data = tiny_data(2);
    let cfg = tiny_train_config(5);
    let schedule = SigmaSchedule::proportional(3);
    let start = fresh_model(5);
    let before = fusion_digest(&begin_fusion_stage(&start, &schedule, 9).unwrap());
    let (s1, _) = train_stage(start, &data, &cfg, TrainStage::Decoupled).unwrap();
    assert!(!s1.has_fusion());
    let s2 = begin_fusion_stage(&s1, &schedule, 9).unwrap();
    assert_eq!(fusion_digest(&s2), before);
    for step in 0..3 {
        let a = batch_loss(&s1, &data, &cfg, TrainStage::Fusion, step, false).unwrap();
        let b = batch_loss(&s2, &data, &cfg, TrainStage::Fusion, step, true).unwrap();
        assert_eq!(a, b);
    }
    let mut st = TrainState::new(s2, &cfg, TrainStage::Fusion).unwrap();
    let first = st.step(&data, &cfg).unwrap();
    let fresh = batch_loss(&s1, &data, &cfg, TrainStage::Fusion, 0, false).unwrap();
    assert_eq!(first.l_total, fresh.total);
}

#[test]
fn resume_reproduces_uninterrupted_run() {
    let data = tiny_data(2);
    let cfg = tiny_train_config(6);
    let mut full = TrainState::new(fresh_model(6), &cfg, TrainStage::Decoupled).unwrap();
    let rows_full: Vec<_> = (0..6).map(|_| full.step(&data, &cfg).unwrap()).collect();

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ck.bin");
    let mut part = TrainState::new(fresh_model(6), &cfg, TrainStage::Decoupled).unwrap();
    let mut rows: Vec<_> = (0..3).map(|_| part.step(&data, &cfg).unwrap()).collect();
    part.save(&path, &Default::default()).unwrap();
    let mut resumed = TrainState::load(&path, cfg.adam).unwrap();
    assert_eq!(resumed.next_step, 3);
    rows.extend((0..3).map(|_| resumed.step(&data, &cfg).unwrap()));
    assert_eq!(rows, rows_full);
    assert_eq!(resumed.model, full.model);
    assert_eq!(resumed.optimizer, full.optimizer);
}

#[test]
fn non_finite_loss_aborts() {
    let data = tiny_data(1);
    let cfg = tiny_train_config(1);
    let mut model = fresh_model(7);
    model.rgb.head.b.data_mut()[0] = f64::NAN;
    let mut st = TrainState::new(model, &cfg, TrainStage::Decoupled).unwrap();
    match st.step(&data, &cfg) {
        Err(Error::Numeric(msg)) => assert!(msg.contains("step 0")),
        other => panic!("expected numeric error, got {other:?}"),
    }
}

#[test]
fn batches_are_reproducible() {
    let data = tiny_data(3);
    let cfg = tiny_train_config(1);
    let a = draw_batch(&data, &cfg, TrainStage::Decoupled, 5).unwrap();
    let b = draw_batch(&data, &cfg, TrainStage::Decoupled, 5).unwrap();
    let c = draw_batch(&data, &cfg, TrainStage::Fusion, 5).unwrap();
    assert_eq!(a.len(), 2);
    for (x, y) in a.iter().zip(&b) {
        assert_eq!((x.index, x.t), (y.index, y.t));
        assert_eq!(x.eps_rgb, y.eps_rgb);
    }
    assert!(a.iter().zip(&c).any(|(x, y)| x.t != y.t));
    assert!(draw_batch(&[], &cfg, TrainStage::Decoupled, 0).is_err());
}
