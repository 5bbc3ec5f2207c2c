use super::*;
use crate::diffusion::{eval_loss, NoiseDraw};

fn tiny_arch(image: ImageShape, hidden: Vec<usize>, time_dim: usize, cond_dim: usize) -> Architecture {
    Architecture {
        image,
        hidden,
        time_dim,
        cond_dim,
    }
}

fn rand_vec(seed: u64, n: usize) -> Vec<f64> {
    NoiseDraw::standard(seed, 0, n).eps
}

#[test]
fn zero_model_predicts_zero() {
    let m = DenoiserModel::zeros(Architecture::default());
    let z = LatentState {
        z: rand_vec(1, 256),
        t: 500,
    };
    let out = m.predict(&z, Some(&rand_vec(2, 16))).unwrap();
    assert_eq!(out.len(), 256);
    assert!(out.iter().all(|&v| v == 0.0));
}

#[test]
fn selector_model_returns_latent() {
    let arch = tiny_arch(ImageShape::new(2, 2, 1), vec![], 8, 3);
    let mut m = DenoiserModel::zeros(arch);
    for i in 0..4 {
        m.layers_mut()[0].weight[[i, i]] = 1.0;
    }
    let z = LatentState {
        z: vec![0.25, -1.0, 3.5, 0.0],
        t: 17,
    };
    assert_eq!(m.predict(&z, Some(&[9.0, 9.0, 9.0])).unwrap(), z.z);
}

#[test]
fn default_arch_preserves_shape() {
    let m = DenoiserModel::random(Architecture::default(), 3);
    let z = LatentState {
        z: vec![0.1; 256],
        t: 1,
    };
    assert_eq!(m.predict(&z, None).unwrap().len(), 16 * 16);
}

#[test]
fn condition_dimension_is_checked() {
    let m = DenoiserModel::random(Architecture::default(), 3);
    let z = LatentState {
        z: vec![0.1; 256],
        t: 1,
    };
    assert!(matches!(m.predict(&z, Some(&[0.0; 5])), Err(Error::Contract(_))));
}

#[test]
fn hand_arithmetic_loss_on_two_by_two() {
    // out = W z + b with a 4x4 weight, no time/condition inputs
    let arch = tiny_arch(ImageShape::new(2, 2, 1), vec![], 0, 0);
    let w = [
        [0.5, 0.0, 0.0, -0.25],
        [0.0, 1.0, 0.5, 0.0],
        [0.1, 0.0, 0.0, 0.0],
        [0.0, 0.0, -1.0, 2.0],
    ];
    let b = [0.1, 0.0, -0.2, 0.3];
    let mut m = DenoiserModel::zeros(arch);
    for r in 0..4 {
        for c in 0..4 {
            m.layers_mut()[0].weight[[r, c]] = w[r][c];
        }
        m.layers_mut()[0].bias[r] = b[r];
    }
    let sched = NoiseSchedule::from_alpha_bars(vec![0.64]).unwrap();
    let x = [1.0, 0.5, 0.0, 0.25];
    let eps = [0.2, -0.4, 1.0, 0.0];
    // z = 0.8 x + 0.6 eps
    let z = [0.92, 0.16, 0.6, 0.2];
    let pred = [
        0.5 * z[0] - 0.25 * z[3] + 0.1,
        z[1] + 0.5 * z[2],
        0.1 * z[0] - 0.2,
        -z[2] + 2.0 * z[3] + 0.3,
    ];
    let expect: f64 = pred.iter().zip(eps).map(|(p, e)| (p - e) * (p - e)).sum::<f64>() / 4.0;
    let got = eval_loss(&m, &x, None, 1, &eps, &sched).unwrap();
    assert!((got - expect).abs() < 1e-12, "{got} vs {expect}");
}

#[test]
fn perfect_prediction_has_zero_gradient() {
    let arch = tiny_arch(ImageShape::new(1, 2, 1), vec![], 0, 1);
    let eps = [0.7, -0.3];
    let mut m = DenoiserModel::zeros(arch);
    m.layers_mut()[0].bias[0] = eps[0];
    m.layers_mut()[0].bias[1] = eps[1];
    let sched = NoiseSchedule::default();
    for wrt in [Wrt::Image, Wrt::Condition, Wrt::Parameters] {
        let (loss, g) = m
            .loss_and_grad(&[0.4, 0.9], Some(&[1.5]), 140, &eps, &sched, wrt)
            .unwrap();
        assert_eq!(loss, 0.0);
        assert!(g.iter().all(|&v| v == 0.0), "{wrt:?}: {g:?}");
    }
}

#[test]
fn scalar_model_closed_form_gradient() {
    let arch = tiny_arch(ImageShape::new(1, 1, 1), vec![], 0, 0);
    let w = 0.8;
    let mut m = DenoiserModel::zeros(arch);
    m.layers_mut()[0].weight[[0, 0]] = w;
    let sched = NoiseSchedule::default();
    let (x, e, t) = (0.6, -0.45, 140);
    let ab = sched.alpha_bar(t).unwrap();
    let z = ab.sqrt() * x + (1.0 - ab).sqrt() * e;
    let (_, g) = m.loss_and_grad(&[x], None, t, &[e], &sched, Wrt::Parameters).unwrap();
    let dw = 2.0 * (w * z - e) * z;
    let db = 2.0 * (w * z - e);
    assert!((g[0] - dw).abs() < 1e-12);
    assert!((g[1] - db).abs() < 1e-12);
}

#[test]
fn loss_and_grad_loss_matches_eval_loss_bitwise() {
    let m = DenoiserModel::random(tiny_arch(ImageShape::new(4, 4, 1), vec![12, 10], 8, 5), 11);
    let sched = NoiseSchedule::default();
    let x = rand_vec(3, 16);
    let eps = rand_vec(4, 16);
    let c = rand_vec(5, 5);
    let base = eval_loss(&m, &x, Some(&c), 300, &eps, &sched).unwrap();
    for wrt in [Wrt::Image, Wrt::Condition, Wrt::Parameters] {
        let (l, _) = m.loss_and_grad(&x, Some(&c), 300, &eps, &sched, wrt).unwrap();
        assert_eq!(l.to_bits(), base.to_bits());
    }
}

#[test]
fn null_condition_gradient_is_rejected() {
    let m = DenoiserModel::random(tiny_arch(ImageShape::new(2, 2, 1), vec![4], 4, 2), 1);
    let sched = NoiseSchedule::default();
    let r = m.loss_and_grad(&[0.0; 4], None, 5, &[0.0; 4], &sched, Wrt::Condition);
    assert!(matches!(r, Err(Error::Contract(_))));
}

#[test]
fn finite_differences_on_full_size_image_gradient() {
    let m = DenoiserModel::random(Architecture::default(), 21);
    let sched = NoiseSchedule::default();
    let x = rand_vec(6, 256).iter().map(|v| 0.5 + 0.2 * v).collect::<Vec<_>>();
    let eps = rand_vec(7, 256);
    let c = rand_vec(8, 16);
    let err = finite_diff_check(&m, &x, Some(&c), 140, &eps, &sched, Wrt::Image, 32, 1e-5, 1).unwrap();
    assert!(err < 1e-6, "relative error {err}");
}

#[test]
fn finite_differences_on_parameters_and_condition() {
    let m = DenoiserModel::random(tiny_arch(ImageShape::new(4, 4, 1), vec![16, 16], 8, 6), 5);
    let sched = NoiseSchedule::default();
    let x = rand_vec(9, 16);
    let eps = rand_vec(10, 16);
    let c = rand_vec(11, 6);
    for wrt in [Wrt::Parameters, Wrt::Condition] {
        let err = finite_diff_check(&m, &x, Some(&c), 400, &eps, &sched, wrt, 40, 1e-5, 2).unwrap();
        assert!(err < 1e-6, "{wrt:?}: relative error {err}");
    }
}

#[test]
fn finite_differences_on_zero_model_are_zero() {
    let m = DenoiserModel::zeros(tiny_arch(ImageShape::new(2, 2, 1), vec![3], 4, 2));
    let sched = NoiseSchedule::default();
    let err = finite_diff_check(
        &m,
        &[0.1; 4],
        Some(&[0.3, 0.2]),
        9,
        &[0.5; 4],
        &sched,
        Wrt::Image,
        4,
        1e-5,
        0,
    )
    .unwrap();
    assert_eq!(err, 0.0);
    assert!(finite_diff_check(&m, &[0.1; 4], None, 9, &[0.5; 4], &sched, Wrt::Image, 4, 0.0, 0).is_err());
}

#[test]
fn affine_image_gradient_matches_selector_jacobian() {
    let arch = tiny_arch(ImageShape::new(2, 3, 1), vec![], 4, 2);
    let mut m = DenoiserModel::random(arch, 4);
    // overwrite the image block with an explicit selector (permutation) Jacobian
    let perm = [2usize, 0, 1, 5, 3, 4];
    for r in 0..6 {
        for c in 0..6 {
            m.layers_mut()[0].weight[[r, c]] = if perm[r] == c { 1.0 } else { 0.0 };
        }
    }
    let sched = NoiseSchedule::default();
    let x = rand_vec(12, 6);
    let eps = rand_vec(13, 6);
    let c = [0.4, -0.2];
    let t = 250;
    let zt = forward_diffuse(&x, t, &eps, &sched).unwrap();
    let pred = m.predict(&zt, Some(&c)).unwrap();
    let ab = sched.alpha_bar(t).unwrap();
    let mut expect = vec![0.0; 6];
    for r in 0..6 {
        // Jᵀ r: row r of J selects column perm[r]
        expect[perm[r]] += 2.0 / 6.0 * (pred[r] - eps[r]) * ab.sqrt();
    }
    let (_, g) = m.loss_and_grad(&x, Some(&c), t, &eps, &sched, Wrt::Image).unwrap();
    for (a, b) in g.iter().zip(&expect) {
        assert!((a - b).abs() < 1e-10);
    }
}

#[test]
fn evaluation_never_mutates_parameters() {
    let m = DenoiserModel::random(tiny_arch(ImageShape::new(4, 4, 1), vec![8], 4, 3), 2);
    let before = m.param_hash();
    let sched = NoiseSchedule::default();
    let x = rand_vec(1, 16);
    let _ = m.predict(&LatentState { z: x.clone(), t: 3 }, None).unwrap();
    for wrt in [Wrt::Image, Wrt::Condition, Wrt::Parameters] {
        let _ = m.loss_and_grad(&x, Some(&[0.1, 0.2, 0.3]), 3, &x, &sched, wrt).unwrap();
    }
    assert_eq!(before, m.param_hash());
}

#[test]
fn checkpoint_round_trip_is_bitwise() {
    let m = DenoiserModel::random(tiny_arch(ImageShape::new(4, 4, 1), vec![8, 6], 4, 3), 77);
    let meta = CheckpointMeta {
        config_hash: "abc".into(),
        build: "test".into(),
    };
    let mut buf = Vec::new();
    write_checkpoint(&mut buf, &m, &meta).unwrap();
    assert_eq!(&buf[..10], CKPT_MAGIC);
    let (back, meta2) = read_checkpoint(&mut buf.as_slice()).unwrap();
    assert_eq!(back.param_hash(), m.param_hash());
    assert_eq!(back.arch(), m.arch());
    assert_eq!(meta2, meta);

    let mut bad = buf.clone();
    bad[0] = b'X';
    assert!(matches!(read_checkpoint(&mut bad.as_slice()), Err(Error::Format(_))));
    let truncated = &buf[..buf.len() - 8];
    assert!(read_checkpoint(&mut &truncated[..]).is_err());
}

#[test]
fn flat_parameter_round_trip() {
    let mut m = DenoiserModel::random(tiny_arch(ImageShape::new(2, 2, 1), vec![3], 2, 1), 8);
    let flat = m.params_flat();
    assert_eq!(flat.len(), m.arch().param_count());
    let h = m.param_hash();
    m.set_params_flat(&flat).unwrap();
    assert_eq!(h, m.param_hash());
    assert_eq!(m.param_names()[0], "layer0.weight");
}
