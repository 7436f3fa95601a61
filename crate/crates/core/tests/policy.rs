use pinchbot::claysim::{generate_demos, new_clay_cylinder, GoalSpec, SimConfig};
use pinchbot::dataio::{AugmentedDataset, Trajectory};
use pinchbot::encoder::{AutoEncoder, EncoderConfig};
use pinchbot::policy::{rollout_policy, train_policy, PolicyConfig, PolicyModel, RolloutOptions, TrainConfig};

fn sim() -> SimConfig {
    SimConfig {
        n_points: 256,
        ..SimConfig::default()
    }
}

fn small_encoder() -> AutoEncoder<f32> {
    let cfg = EncoderConfig {
        point_widths: vec![3, 16, 32],
        head_widths: vec![32, 32],
        decoder_hidden: vec![32],
        decoder_points: 32,
        input_scale: 10.0,
        cloud_points: 64,
    };
    AutoEncoder::new(cfg, 0).unwrap()
}

fn small_policy() -> PolicyConfig {
    PolicyConfig {
        embedding_dim: 32,
        hidden_widths: vec![128, 128],
        diffusion_steps: 20,
        time_embedding_dim: 16,
        ..PolicyConfig::default()
    }
}

fn train(data: Vec<Trajectory>, epochs: usize, seed: u64) -> (PolicyModel<f32>, Vec<f64>) {
    let ae = small_encoder();
    let tc = TrainConfig {
        epochs,
        batch_size: 32,
        lr: 1e-3,
        seed,
        max_steps: None,
    };
    let (model, report) = train_policy(&AugmentedDataset::identity(data), &small_policy(), &ae.encoder, &ae.store, &tc).unwrap();
    (model, report.loss_curve)
}

#[test]
fn overfits_a_single_demonstration() {
    let demo = generate_demos(&sim(), 1, 2).unwrap();
    let (_, curve) = train(demo, 3000, 0);
    let tail = &curve[curve.len() - 50..];
    let (first, last) = (curve[0], tail.iter().sum::<f64>() / tail.len() as f64);
    assert!(last <= 0.3 * first, "loss {first} -> {last}");
}

#[test]
fn stop_label_ends_the_rollout_early() {
    // Every training window is a single final action with gamma = +1.
    let demos = generate_demos(&sim(), 4, 3).unwrap();
    let finals: Vec<Trajectory> = demos
        .into_iter()
        .map(|mut t| {
            let last = t.steps.pop().unwrap();
            t.steps = vec![last];
            t
        })
        .collect();
    assert!(finals.iter().all(|t| t.steps[0].action.gamma == 1.0));
    let (model, _) = train(finals, 150, 1);
    let s = sim();
    let goal = GoalSpec::from_diameter(0.1, &s).unwrap();
    let init = new_clay_cylinder(&s, 0.065, 5).unwrap();
    let opts = RolloutOptions {
        max_actions: 20,
        project: true,
        seed: 4,
    };
    let r = rollout_policy(&model, &s, &init, &goal, &opts).unwrap();
    assert!(r.terminated_by_gamma && r.trajectory.len() <= 4, "{} actions", r.trajectory.len());
    assert_eq!(r.inside_circle, 0);
}

#[test]
fn sampling_is_seeded_and_survives_a_checkpoint() {
    let demos = generate_demos(&sim(), 2, 4).unwrap();
    let (model, _) = train(demos.clone(), 1, 2);
    let cond = model.condition(demos[0].state(0), std::slice::from_ref(&demos[0].goal), None).unwrap();
    let a = model.sample_actions(&cond, 9).unwrap();
    assert_eq!(a.len(), small_policy().prediction_horizon);
    assert_eq!(a, model.sample_actions(&cond, 9).unwrap());
    assert_ne!(a, model.sample_actions(&cond, 10).unwrap());

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("p.ckpt");
    model.save(&path).unwrap();
    let back = PolicyModel::<f32>::load(&path).unwrap();
    assert_eq!(back.sample_actions(&cond, 9).unwrap(), a);

    let (again, _) = train(demos, 1, 2);
    assert_eq!(again.sample_actions(&cond, 9).unwrap(), a);
}
