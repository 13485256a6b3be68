use std::sync::Arc;

use geomsign_autodiff::{gradient_check_sampled, Tape, Tensor};
use geomsign_core::graph::{default_edges, SkeletonEdges};
use geomsign_model::network::{SpatialParams, TemporalParams};
use geomsign_model::params::layout;
use geomsign_model::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small_config(variant: Variant) -> ModelConfig {
    ModelConfig {
        hidden_dim: 8,
        num_layers: 2,
        basis_dim: 16,
        num_classes: 5,
        variant,
        ..Default::default()
    }
}

fn random_track(rng: &mut ChaCha8Rng, frames: usize) -> NodeTrack {
    NodeTrack {
        num_frames: frames,
        num_nodes: 27,
        positions: (0..frames * 27)
            .map(|_| {
                [
                    rng.gen_range(0.2..0.8),
                    rng.gen_range(0.2..0.8),
                    rng.gen_range(-0.1..0.1),
                ]
            })
            .collect(),
    }
}

fn rel_diff<F: geomsign_autodiff::Real>(a: &Tensor<F>, b: &Tensor<F>) -> f64 {
    let scale = a
        .data()
        .iter()
        .map(|v| v.as_f64().abs())
        .fold(0.0, f64::max);
    a.max_abs_diff(b) / scale.max(1e-30)
}

#[test]
fn output_has_one_logit_per_class() {
    let cfg = ModelConfig {
        hidden_dim: 8,
        num_layers: 1,
        ..Default::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let input =
        ModelInput::<f32>::from_tracks(&[random_track(&mut rng, 3)], &cfg, &default_edges())
            .unwrap();
    let logits = Model::<f32>::init(cfg, 0).unwrap().logits(&input).unwrap();
    assert_eq!(logits.shape(), &[1, 200]);
}

#[test]
fn wrong_node_count_is_invalid_input() {
    let cfg = small_config(Variant::Invariant);
    let track = NodeTrack {
        num_frames: 2,
        num_nodes: 26,
        positions: vec![[0.0; 3]; 52],
    };
    let err = ModelInput::<f32>::from_tracks(&[track], &cfg, &default_edges()).unwrap_err();
    assert!(matches!(err, ModelError::InvalidInput(_)));
}

#[test]
fn invariant_logits_survive_rigid_motion() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let cfg = small_config(Variant::Invariant);
    let model32 = Model::<f32>::init(cfg.clone(), 5).unwrap();
    let model64 = model32.cast::<f64>();
    let track = random_track(&mut rng, 6);
    for _ in 0..5 {
        let moved = track.rigid_motion(
            rng.gen_range(0.0..std::f64::consts::TAU),
            [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)],
        );
        let a = model64
            .logits(&ModelInput::from_tracks(&[track.clone()], &cfg, &default_edges()).unwrap())
            .unwrap();
        let b = model64
            .logits(&ModelInput::from_tracks(&[moved.clone()], &cfg, &default_edges()).unwrap())
            .unwrap();
        assert!(rel_diff(&a, &b) < 1e-10);
        let a = model32
            .logits(&ModelInput::from_tracks(&[track.clone()], &cfg, &default_edges()).unwrap())
            .unwrap();
        let b = model32
            .logits(&ModelInput::from_tracks(&[moved], &cfg, &default_edges()).unwrap())
            .unwrap();
        assert!(rel_diff(&a, &b) < 1e-4);
    }
}

#[test]
fn invariant_logits_survive_reflection() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let cfg = small_config(Variant::Invariant);
    let model = Model::<f64>::init(cfg.clone(), 9).unwrap();
    let track = random_track(&mut rng, 4);
    let mut mirrored = track.clone();
    mirrored
        .positions
        .iter_mut()
        .for_each(|p| p[0] = 1.0 - p[0]);
    let a = model
        .logits(&ModelInput::from_tracks(&[track], &cfg, &default_edges()).unwrap())
        .unwrap();
    let b = model
        .logits(&ModelInput::from_tracks(&[mirrored], &cfg, &default_edges()).unwrap())
        .unwrap();
    assert!(rel_diff(&a, &b) < 1e-10);
}

#[test]
fn baseline_sees_a_quarter_turn() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let cfg = small_config(Variant::Baseline);
    for seed in 0..3 {
        let model = Model::<f32>::init(cfg.clone(), seed).unwrap();
        let track = random_track(&mut rng, 4);
        let turned = track.rigid_motion(std::f64::consts::FRAC_PI_2, [0.0, 0.0]);
        let a = model
            .logits(&ModelInput::from_tracks(&[track], &cfg, &default_edges()).unwrap())
            .unwrap();
        let b = model
            .logits(&ModelInput::from_tracks(&[turned], &cfg, &default_edges()).unwrap())
            .unwrap();
        assert!(a.max_abs_diff(&b) > 1e-3);
    }
}

#[test]
fn forward_is_bit_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let cfg = small_config(Variant::Invariant);
    let tracks = [random_track(&mut rng, 5), random_track(&mut rng, 5)];
    let input = ModelInput::<f32>::from_tracks(&tracks, &cfg, &default_edges()).unwrap();
    let a = Model::<f32>::init(cfg.clone(), 1)
        .unwrap()
        .logits(&input)
        .unwrap();
    let b = Model::<f32>::init(cfg, 1).unwrap().logits(&input).unwrap();
    let bits = |t: &Tensor<f32>| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&a), bits(&b));
}

#[test]
fn batch_rows_are_independent() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let cfg = small_config(Variant::Invariant);
    let model = Model::<f64>::init(cfg.clone(), 2).unwrap();
    let tracks = [random_track(&mut rng, 4), random_track(&mut rng, 4)];
    let both = model
        .logits(&ModelInput::from_tracks(&tracks, &cfg, &default_edges()).unwrap())
        .unwrap();
    let second = model
        .logits(&ModelInput::from_tracks(&tracks[1..], &cfg, &default_edges()).unwrap())
        .unwrap();
    for (x, y) in both.data()[5..].iter().zip(second.data()) {
        assert!((x - y).abs() < 1e-12);
    }
}

#[test]
fn orientation_grid_model_runs_and_is_quarter_turn_invariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let cfg = ModelConfig {
        num_orientations: 4,
        ..small_config(Variant::Invariant)
    };
    let model = Model::<f64>::init(cfg.clone(), 3).unwrap();
    let track = random_track(&mut rng, 3);
    // A quarter turn maps the 4-direction grid onto itself.
    let turned = track.rigid_motion(std::f64::consts::FRAC_PI_2, [0.3, -0.2]);
    let a = model
        .logits(&ModelInput::from_tracks(&[track], &cfg, &default_edges()).unwrap())
        .unwrap();
    let b = model
        .logits(&ModelInput::from_tracks(&[turned], &cfg, &default_edges()).unwrap())
        .unwrap();
    assert_eq!(a.shape(), &[1, 5]);
    assert!(rel_diff(&a, &b) < 1e-10);
}

#[test]
fn kernel_basis_contract() {
    let mut tape = Tape::<f64>::new();
    let attrs = tape.constant(Tensor::from_f64(&[3, 2], &[0.5, 1.0, 0.5, 1.0, 2.0, 1.0]).unwrap());
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let bw = tape.constant(Tensor::from_fn(&[2, 128], |_| rng.gen_range(-1.0..1.0)));
    let kw = tape.constant(Tensor::from_fn(&[128, 64], |_| rng.gen_range(-1.0..1.0)));
    let k = kernel_basis(&mut tape, attrs, bw, kw).unwrap();
    assert_eq!(tape.shape(k), &[3, 64]);
    let v = tape.value(k).data();
    assert_eq!(&v[..64], &v[64..128]);
    assert_ne!(&v[..64], &v[128..]);
    let zero = tape.constant(Tensor::zeros(&[128, 64]));
    let k0 = kernel_basis(&mut tape, attrs, bw, zero).unwrap();
    assert!(tape.value(k0).data().iter().all(|&x| x == 0.0));
}

fn spatial_params(
    tape: &mut Tape<f64>,
    h: usize,
    zero_mlp: bool,
    rng: &mut ChaCha8Rng,
) -> SpatialParams {
    let mut w = |shape: &[usize]| {
        let t = if zero_mlp {
            Tensor::zeros(shape)
        } else {
            Tensor::from_fn(shape, |_| rng.gen_range(-0.5..0.5))
        };
        tape.constant(t)
    };
    let (mlp_in_w, mlp_in_b, mlp_out_w, mlp_out_b) =
        (w(&[h, 4 * h]), w(&[4 * h]), w(&[4 * h, h]), w(&[h]));
    SpatialParams {
        conv_b: tape.constant(Tensor::zeros(&[h])),
        norm_g: tape.constant(Tensor::full(&[h], 1.0)),
        norm_b: tape.constant(Tensor::zeros(&[h])),
        mlp_in_w,
        mlp_in_b,
        mlp_out_w,
        mlp_out_b,
        scale: None,
    }
}

#[test]
fn spatial_block_shape_and_residual_identity() {
    let (t, n, h) = (3, 27, 64);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let directed = default_edges().directed(n);
    let pairs = t * directed.len();
    let senders: Arc<[usize]> = (0..t)
        .flat_map(|f| directed.iter().map(move |&(_, s)| f * n + s))
        .collect();
    let receivers: Arc<[usize]> = (0..t)
        .flat_map(|f| directed.iter().map(move |&(r, _)| f * n + r))
        .collect();
    let mut tape = Tape::<f64>::new();
    let x0 = Tensor::from_fn(&[t, n, h], |_| rng.gen_range(-1.0..1.0));
    let x = tape.constant(x0.clone());

    let k = tape.constant(Tensor::from_fn(&[pairs, h], |_| rng.gen_range(-1.0..1.0)));
    let p = spatial_params(&mut tape, h, false, &mut rng);
    let y = ponita_spatial_block(&mut tape, x, k, &senders, &receivers, &p, 1e-6).unwrap();
    assert_eq!(tape.shape(y), &[t, n, h]);

    let k0 = tape.constant(Tensor::zeros(&[pairs, h]));
    let p0 = spatial_params(&mut tape, h, true, &mut rng);
    let y0 = ponita_spatial_block(&mut tape, x, k0, &senders, &receivers, &p0, 1e-6).unwrap();
    assert_eq!(tape.value(y0), &x0);
}

#[test]
fn single_node_self_loop_message() {
    // One node, one frame, self pair only: the message is kernel * feature,
    // then layer norm and the MLP act on it.
    let h = 4;
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut tape = Tape::<f64>::new();
    let f = [0.3, -1.2, 2.0, 0.7];
    let kv = [1.5, 0.5, -0.25, 2.0];
    let x = tape.constant(Tensor::from_f64(&[1, 1, h], &f).unwrap());
    let k = tape.constant(Tensor::from_f64(&[1, h], &kv).unwrap());
    let p = spatial_params(&mut tape, h, false, &mut rng);
    let one: Arc<[usize]> = Arc::from([0]);
    let y = ponita_spatial_block(&mut tape, x, k, &one, &one, &p, 1e-6).unwrap();

    let m: Vec<f64> = f.iter().zip(&kv).map(|(a, b)| a * b).collect();
    let mean = m.iter().sum::<f64>() / h as f64;
    let var = m.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / h as f64;
    let z: Vec<f64> = m.iter().map(|v| (v - mean) / (var + 1e-6).sqrt()).collect();
    let val = |v| tape.value(v).data().to_vec();
    let (w1, b1, w2, b2) = (
        val(p.mlp_in_w),
        val(p.mlp_in_b),
        val(p.mlp_out_w),
        val(p.mlp_out_b),
    );
    let gelu = |x: f64| 0.5 * x * (1.0 + libm_erf(x / 2f64.sqrt()));
    let hidden: Vec<f64> = (0..4 * h)
        .map(|j| gelu(b1[j] + (0..h).map(|i| z[i] * w1[i * 4 * h + j]).sum::<f64>()))
        .collect();
    for o in 0..h {
        let want = f[o] + b2[o] + (0..4 * h).map(|j| hidden[j] * w2[j * h + o]).sum::<f64>();
        assert!((tape.value(y).data()[o] - want).abs() < 1e-12);
    }
}

/// Abramowitz-Stegun 7.1.28 would be too coarse here; integrate the Gaussian
/// density with composite Simpson instead.
fn libm_erf(x: f64) -> f64 {
    let n = 20_000;
    let h = x / n as f64;
    let f = |t: f64| (-t * t).exp();
    let mut s = f(0.0) + f(x);
    for i in 1..n {
        s += f(i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0 * 2.0 / std::f64::consts::PI.sqrt()
}

fn temporal_params(tape: &mut Tape<f64>, w: Tensor<f64>, h: usize) -> TemporalParams {
    TemporalParams {
        w1: tape.constant(w.clone()),
        b1: tape.constant(Tensor::zeros(&[h])),
        w2: tape.constant(w),
        b2: tape.constant(Tensor::zeros(&[h])),
    }
}

#[test]
fn temporal_block_identities() {
    let (t, n, h, k) = (6, 27, 8, 9);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut tape = Tape::<f64>::new();
    let x0 = Tensor::from_fn(&[t, n, h], |_| rng.gen_range(-2.0..2.0));
    let x = tape.constant(x0.clone());
    let p = temporal_params(&mut tape, Tensor::zeros(&[k, h, h]), h);
    let y = temporal_block(&mut tape, x, &p).unwrap();
    assert_eq!(tape.value(y), &x0);

    // Constant in time, centered one-hot kernels: x + GeLU(GeLU(x)).
    let frame: Vec<f64> = (0..n * h).map(|_| rng.gen_range(-2.0..2.0)).collect();
    let xc = tape.constant(Tensor::from_fn(&[t, n, h], |i| frame[i % (n * h)]));
    let mut w = Tensor::zeros(&[k, h, h]);
    for c in 0..h {
        w.data_mut()[(k / 2) * h * h + c * h + c] = 1.0;
    }
    let p = temporal_params(&mut tape, w, h);
    let y = temporal_block(&mut tape, xc, &p).unwrap();
    let gelu = |x: f64| 0.5 * x * (1.0 + libm_erf(x / 2f64.sqrt()));
    for (i, &v) in tape.value(y).data().iter().enumerate().step_by(7) {
        let x = frame[i % (n * h)];
        assert!((v - (x + gelu(gelu(x)))).abs() < 1e-9, "{v} vs {x}");
    }
}

#[test]
fn full_model_gradient_matches_finite_differences() {
    let cfg = ModelConfig {
        hidden_dim: 8,
        num_classes: 5,
        ..Default::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let tracks = [random_track(&mut rng, 4), random_track(&mut rng, 4)];
    let input = ModelInput::<f64>::from_tracks(&tracks, &cfg, &default_edges()).unwrap();
    let model = Model::<f64>::init(cfg.clone(), 4).unwrap();
    let (_, index) = layout(&cfg);
    let labels: Arc<[usize]> = Arc::from([1, 3]);
    let report = gradient_check_sampled(
        |tape, vars| {
            let logits = forward(tape, &cfg, &index, vars, &input).map_err(|e| match e {
                ModelError::Diff(d) => d,
                other => panic!("{other}"),
            })?;
            tape.softmax_cross_entropy(logits, labels.clone())
        },
        model.params(),
        1e-5,
        6,
    )
    .unwrap();
    assert!(report.max_rel_error < 1e-4, "{report:?}");
}

#[test]
fn edges_without_self_loops_still_run() {
    let cfg = small_config(Variant::Invariant);
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let edges: SkeletonEdges = default_edges().with_self_loops(false);
    let input = ModelInput::<f32>::from_tracks(&[random_track(&mut rng, 2)], &cfg, &edges).unwrap();
    assert_eq!(input.senders.len(), 2 * 52);
    assert!(Model::<f32>::init(cfg, 0).unwrap().logits(&input).is_ok());
}
