use super::*;
use crate::losses::ctc_loss_node;
use crate::numerics::{rng_from_seed, Tensor, Var};
use crate::synthcorpus::Utterance;
use crate::Error;
use rand::Rng;

fn tiny(fusion: FusionMode) -> ModelConfig {
    ModelConfig {
        width: 4,
        speech_depth: 1,
        shared_depth: 1,
        refiner_depth: 1,
        vocab: 3,
        feature_dim: 2,
        fusion,
        seed: 5,
    }
}

fn random_tensor(seed: u64, rows: usize, cols: usize) -> Tensor {
    let mut rng = rng_from_seed(seed);
    Tensor::matrix(rows, cols, (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn utterance(tokens: &[usize], durations: &[usize], feature_dim: usize, seed: u64) -> Utterance {
    let frames: usize = durations.iter().sum();
    Utterance {
        id: format!("u{seed}"),
        domain: "test".into(),
        tokens: tokens.to_vec(),
        durations: durations.to_vec(),
        frames: random_tensor(seed, frames, feature_dim),
    }
}

/// Perturbs every `stride`-th coordinate of every tensor and compares the
/// central difference of `loss` with the reverse-mode gradient.
fn model_grad_check(params: &ModelParams, stride: usize, loss: impl Fn(&mut Session<'_>) -> crate::Result<Var>) -> f64 {
    let h = 1e-5;
    let eval = |p: &ModelParams| {
        let mut s = Session::new(p);
        let v = loss(&mut s).unwrap();
        s.graph.scalar(v)
    };
    let grads = {
        let mut s = Session::new(params);
        let v = loss(&mut s).unwrap();
        s.gradients(v)
    };
    let mut probe = params.clone();
    let mut worst: f64 = 0.0;
    for (name, t) in params.tensors() {
        for j in (0..t.len()).step_by(stride) {
            let orig = t.data()[j];
            probe.get_mut(name).unwrap().data_mut()[j] = orig + h;
            let up = eval(&probe);
            probe.get_mut(name).unwrap().data_mut()[j] = orig - h;
            let down = eval(&probe);
            probe.get_mut(name).unwrap().data_mut()[j] = orig;
            let numeric = (up - down) / (2.0 * h);
            let analytic = grads.get(name).map_or(0.0, |g| g[j]);
            worst = worst.max((analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8));
        }
    }
    worst
}

#[test]
fn speech_encoder_shapes_and_errors() {
    let params = ModelParams::init(&ModelConfig::default()).unwrap();
    let mut s = Session::new(&params);
    let out = encode_speech(&mut s, &random_tensor(1, 1, 16)).unwrap();
    assert_eq!(s.graph.value(out.activations).shape(), &[1, 32]);
    assert_eq!((out.modality, out.tap), (Modality::Speech, Tap::Modal));
    assert!(matches!(encode_speech(&mut s, &random_tensor(1, 3, 15)), Err(Error::Dimension { .. })));
}

#[test]
fn identical_frames_differ_only_by_position() {
    let params = ModelParams::init(&ModelConfig::default()).unwrap();
    let row = random_tensor(2, 1, 16);
    let frames = Tensor::from_rows(&[row.row(0).to_vec(), row.row(0).to_vec()]).unwrap();
    let mut s = Session::new(&params);
    let out = encode_speech(&mut s, &frames).unwrap();
    let y = s.graph.value(out.activations);
    assert_ne!(y.row(0), y.row(1));
    let mut s2 = Session::new(&params);
    let again = encode_speech(&mut s2, &frames).unwrap();
    assert_eq!(y, s2.graph.value(again.activations));
}

#[test]
fn text_embedding_positions_and_vocabulary() {
    let params = ModelParams::init(&ModelConfig::default()).unwrap();
    let mut s = Session::new(&params);
    let e = embed_text(&mut s, &[5, 5]).unwrap();
    let y = s.graph.value(e);
    assert_eq!(y.shape(), &[2, 32]);
    assert_ne!(y.row(0), y.row(1));
    let one = embed_text(&mut s, &[3]).unwrap();
    assert_eq!(s.graph.value(one).shape(), &[1, 32]);
    assert!(matches!(embed_text(&mut s, &[25]), Err(Error::Vocabulary { id: 25, vocab: 24 })));
    assert!(matches!(embed_text(&mut s, &[0]), Err(Error::Vocabulary { id: 0, .. })));
    assert!(matches!(embed_text(&mut s, &[]), Err(Error::Input(_))));
}

#[test]
fn fresh_duration_predictor_emits_one() {
    let params = ModelParams::init(&ModelConfig::default()).unwrap();
    let mut s = Session::new(&params);
    let e = embed_text(&mut s, &[1, 2, 3]).unwrap();
    let d = predict_durations(&mut s, e).unwrap();
    assert!(s.graph.value(d).data().iter().all(|&v| v == 1.0));
}

#[test]
fn durations_positive_for_large_inputs() {
    let mut params = ModelParams::init(&ModelConfig::default()).unwrap();
    let w = random_tensor(3, 32, 1);
    *params.get_mut("duration_predictor.out.w").unwrap() = w.reshape(vec![32, 1]).unwrap();
    let mut s = Session::new(&params);
    let mut rng = rng_from_seed(4);
    let x = Tensor::matrix(6, 32, (0..6 * 32).map(|_| rng.random_range(-10.0..10.0)).collect()).unwrap();
    let xv = s.graph.leaf(x);
    let d = predict_durations(&mut s, xv).unwrap();
    assert!(s.graph.value(d).data().iter().all(|&v| v > 0.0 && v.is_finite()));
}

#[test]
fn resample_repeats_rows_exactly() {
    let params = ModelParams::init(&ModelConfig::default()).unwrap();
    let mut s = Session::new(&params);
    let x = s.graph.leaf(random_tensor(5, 2, 32));
    let y = resample(&mut s, x, &[2.0, 3.0]).unwrap();
    let (src, out) = (s.graph.value(x).clone(), s.graph.value(y).clone());
    assert_eq!(out.rows(), 5);
    for (r, want) in [0, 0, 1, 1, 1].into_iter().enumerate() {
        assert_eq!(out.row(r), src.row(want));
    }
    let one = s.graph.slice_rows(x, 0, 1).unwrap();
    let clamp = resample(&mut s, one, &[0.2]).unwrap();
    assert_eq!(s.graph.value(clamp).rows(), 1);
    let tie = resample(&mut s, one, &[2.5]).unwrap();
    assert_eq!(s.graph.value(tie).rows(), 3);
    assert_eq!(duration_counts(&[0.0, f64::NAN, 1.49, 1.5]), vec![1, 1, 1, 2]);
    assert!(resample(&mut s, x, &[1.0]).is_err());
}

#[test]
fn refine_and_shared_preserve_shape() {
    let params = ModelParams::init(&ModelConfig::default()).unwrap();
    for t in [1, 7] {
        let mut s = Session::new(&params);
        let x = s.graph.leaf(random_tensor(6, t, 32));
        let r = refine(&mut s, x).unwrap();
        assert_eq!(s.graph.value(r.activations).shape(), &[t, 32]);
        assert_eq!(r.modality, Modality::Text);
        let sh = encode_shared(&mut s, r).unwrap();
        assert_eq!(s.graph.value(sh.activations).shape(), &[t, 32]);
        assert_eq!((sh.modality, sh.tap), (Modality::Text, Tap::Shared));
        assert!(matches!(encode_shared(&mut s, sh), Err(Error::State(_))));
    }
    let mut s = Session::new(&params);
    let bad = s.graph.leaf(random_tensor(6, 3, 31));
    assert!(matches!(refine(&mut s, bad), Err(Error::Dimension { .. })));
}

#[test]
fn slam_fusion_layout() {
    let params = ModelParams::init(&ModelConfig {
        fusion: FusionMode::SlamConcat,
        ..ModelConfig::default()
    })
    .unwrap();
    let mut s = Session::new(&params);
    let sp = s.graph.leaf(random_tensor(7, 2, 32));
    let tx = s.graph.leaf(random_tensor(8, 3, 32));
    let fused = fuse_slam(&mut s, sp, tx).unwrap();
    let f = s.graph.value(fused).clone();
    assert_eq!(f.shape(), &[5, 32]);
    let st = params.get("text_embedder.fusion.speech_type").unwrap();
    for r in 0..2 {
        let want: Vec<f64> = s.graph.value(sp).row(r).iter().zip(st.data()).map(|(a, b)| a + b).collect();
        assert_eq!(f.row(r), want.as_slice());
    }
    let narrow = s.graph.leaf(random_tensor(8, 3, 31));
    assert!(fuse_slam(&mut s, sp, narrow).is_err());
    let mut u = utterance(&[1], &[2], 16, 1);
    u.tokens.clear();
    assert!(matches!(slam_segments(&mut s, &u), Err(Error::Input(_))));
}

#[test]
fn modes_share_speech_and_shared_shapes() {
    let m = ModelParams::init(&ModelConfig::default()).unwrap();
    let sl = ModelParams::init(&ModelConfig {
        fusion: FusionMode::SlamConcat,
        ..ModelConfig::default()
    })
    .unwrap();
    for tag in [Component::SpeechEncoder, Component::SharedEncoder] {
        let a: Vec<_> = m.names_in(tag).into_iter().map(|n| (n, m.get(n).unwrap().shape().to_vec())).collect();
        let b: Vec<_> = sl.names_in(tag).into_iter().map(|n| (n, sl.get(n).unwrap().shape().to_vec())).collect();
        assert_eq!(a, b);
    }
}

#[test]
fn paired_losses_finite_and_non_negative() {
    for fusion in [FusionMode::Maestro, FusionMode::SlamConcat] {
        let params = ModelParams::init(&ModelConfig {
            fusion,
            ..ModelConfig::default()
        })
        .unwrap();
        let a = utterance(&[3, 1, 4], &[2, 3, 1], 16, 1);
        let b = utterance(&[2, 2], &[4, 2], 16, 2);
        let mut s = Session::new(&params);
        let bundle = forward_paired(&mut s, &[&a, &b], &ForwardOptions::default()).unwrap();
        let total = s.graph.scalar(bundle.total);
        for v in [total, bundle.task_loss_speech, bundle.task_loss_text, bundle.consistency, bundle.duration, bundle.contrastive] {
            assert!(v.is_finite() && v >= 0.0, "{fusion:?}: {bundle:?}");
        }
        match fusion {
            FusionMode::Maestro => assert!(bundle.consistency > 0.0 && bundle.contrastive == 0.0),
            FusionMode::SlamConcat => assert!(bundle.contrastive > 0.0 && bundle.consistency == 0.0),
        }
    }
}

#[test]
fn paired_forward_rejects_misaligned_durations() {
    let params = ModelParams::init(&ModelConfig::default()).unwrap();
    let mut u = utterance(&[1, 2], &[2, 2], 16, 3);
    u.durations = vec![2, 3];
    let mut s = Session::new(&params);
    let r = forward_paired(&mut s, &[&u], &ForwardOptions::default());
    assert!(matches!(r, Err(Error::Alignment { sum: 5, frames: 4 })));
}

#[test]
fn consistency_vanishes_when_paths_coincide() {
    // Identity blocks (zero gains, zero output maps), zero embeddings and an
    // input bias equal to the first token position code make the refined text
    // of a one-token utterance equal the speech activations.
    let mut params = ModelParams::init(&ModelConfig::default()).unwrap();
    let names: Vec<String> = params.tensors().keys().cloned().collect();
    for name in &names {
        let leaf = name.rsplit('.').next().unwrap();
        let identity_block = name.contains(".block") && ["ln1_g", "ln2_g", "ln1_b", "ln2_b", "wo", "ff2_w", "ff2_b"].contains(&leaf);
        if identity_block || name == "text_embedder.table.embedding" || name == "speech_encoder.input.w" {
            let t = params.get_mut(name).unwrap();
            *t = Tensor::zeros(t.shape());
        }
    }
    let pe0 = sinusoidal_positions(1, 32);
    *params.get_mut("speech_encoder.input.b").unwrap() = Tensor::vector(pe0.data().to_vec());
    let u = utterance(&[7], &[4], 16, 4);
    let mut s = Session::new(&params);
    let bundle = forward_paired(&mut s, &[&u], &ForwardOptions::default()).unwrap();
    assert_eq!(bundle.consistency, 0.0);
}

#[test]
fn maestro_paired_loss_gradient_check() {
    let params = ModelParams::init(&tiny(FusionMode::Maestro)).unwrap();
    let u = utterance(&[1, 3], &[1, 2], 2, 6);
    // Two-sided consistency: a stop-gradient target would make the reverse
    // pass disagree with finite differences by construction.
    let opts = ForwardOptions {
        speech_is_target: false,
        ..ForwardOptions::default()
    };
    let err = model_grad_check(&params, 1, |s| Ok(forward_paired(s, &[&u], &opts)?.total));
    assert!(err < 1e-4, "{err}");
}

#[test]
fn slam_paired_loss_gradient_check() {
    let params = ModelParams::init(&tiny(FusionMode::SlamConcat)).unwrap();
    let a = utterance(&[1, 3], &[1, 2], 2, 7);
    let b = utterance(&[2], &[3], 2, 8);
    let err = model_grad_check(&params, 1, |s| Ok(forward_paired(s, &[&a, &b], &ForwardOptions::default())?.total));
    assert!(err < 1e-4, "{err}");
}

#[test]
fn speech_encoder_with_ctc_gradient_check() {
    let params = ModelParams::init(&tiny(FusionMode::SlamConcat)).unwrap();
    let frames = random_tensor(9, 4, 2);
    let err = model_grad_check(&params, 1, |s| {
        let sp = encode_speech(s, &frames)?;
        let logits = ctc_logits(s, sp.activations)?;
        ctc_loss_node(&mut s.graph, logits, &[2, 2])
    });
    assert!(err < 1e-4, "{err}");
}

#[test]
fn text_only_uses_predicted_durations() {
    let mut params = ModelParams::init(&ModelConfig::default()).unwrap();
    let tokens = [4, 9, 9];
    let frames_of = |p: &ModelParams| {
        let mut s = Session::new(p);
        let (text, counts) = synthesize_text(&mut s, &tokens).unwrap();
        assert_eq!(s.graph.value(text.activations).rows(), counts.iter().sum::<usize>());
        counts.iter().sum::<usize>()
    };
    assert_eq!(frames_of(&params), 3);
    *params.get_mut("duration_predictor.out.b").unwrap() = Tensor::vector(vec![3f64.ln()]);
    assert_eq!(frames_of(&params), 9);
    let mut s = Session::new(&params);
    let b = forward_text_only(&mut s, &[&tokens]).unwrap();
    assert!(b.task_loss_text.is_finite() && b.task_loss_text > 0.0);

    let slam = ModelParams::init(&ModelConfig {
        fusion: FusionMode::SlamConcat,
        ..ModelConfig::default()
    })
    .unwrap();
    let mut s = Session::new(&slam);
    assert!(matches!(forward_text_only(&mut s, &[&tokens]), Err(Error::Unsupported(_))));
}

#[test]
fn parameter_tags_partition_all_tensors() {
    for fusion in [FusionMode::Maestro, FusionMode::SlamConcat] {
        let params = ModelParams::init(&ModelConfig {
            fusion,
            ..ModelConfig::default()
        })
        .unwrap();
        let tagged: usize = Component::ALL.iter().map(|&t| params.names_in(t).len()).sum();
        assert_eq!(tagged, params.tensors().len());
        assert!(params.names_in(Component::DurationDecoder).is_empty());
        assert_eq!(
            parameter_layout(params.config()).len(),
            params.tensors().len(),
            "layout and init disagree for {fusion:?}"
        );
    }
}

#[test]
fn config_echo_round_trips() {
    let cfg = ModelConfig {
        width: 8,
        seed: 99,
        fusion: FusionMode::SlamConcat,
        ..ModelConfig::default()
    };
    assert_eq!(ModelConfig::from_echo(&cfg.to_echo()).unwrap(), cfg);
    assert!(ModelConfig {
        width: 3,
        ..ModelConfig::default()
    }
    .validate()
    .is_err());
    assert!(Component::parse("encoder").unwrap_err().to_string().contains("speech_encoder"));
}

#[test]
fn sinusoidal_positions_known_values() {
    let pe = sinusoidal_positions(3, 4);
    assert_eq!(pe.row(0), &[0.0, 1.0, 0.0, 1.0]);
    assert!((pe.get2(1, 0) - 1f64.sin()).abs() < 1e-15);
    assert!((pe.get2(2, 3) - (2.0 / 100.0f64).cos()).abs() < 1e-15);
}
