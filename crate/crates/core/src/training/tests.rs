use std::collections::{BTreeSet, HashMap};

use super::*;
use crate::encoders::{Component, FusionMode, ModelConfig, ModelParams, Session};
use crate::numerics::Tensor;
use crate::synthcorpus::{make_corpus, make_domain, Corpus, DomainKnobs, Split};
use crate::Error;

fn small_knobs(id: &str) -> DomainKnobs {
    DomainKnobs {
        id: id.into(),
        vocab: 6,
        feature_dim: 4,
        min_tokens: 2,
        max_tokens: 4,
        max_token_frames: 6,
        prototype_separation: 6.0,
        ..DomainKnobs::read()
    }
}

fn small_corpus(n: usize, seed: u64) -> Corpus {
    let spec = make_domain(&small_knobs("small"), seed).unwrap();
    make_corpus(&spec, n, Split::Train, seed).unwrap()
}

fn small_model(fusion: FusionMode, seed: u64) -> ModelParams {
    ModelParams::init(&ModelConfig {
        width: 8,
        speech_depth: 1,
        shared_depth: 1,
        refiner_depth: 1,
        vocab: 6,
        feature_dim: 4,
        fusion,
        seed,
    })
    .unwrap()
}

fn short(steps: usize) -> TrainConfig {
    TrainConfig {
        steps,
        paired_count: 4,
        ..TrainConfig::pretrain()
    }
}

/// Independent oracle: memoized recursion on suffixes.
fn levenshtein_oracle(a: &[usize], b: &[usize], memo: &mut HashMap<(usize, usize), usize>) -> usize {
    if a.is_empty() {
        return b.len();
    }
    if b.is_empty() {
        return a.len();
    }
    if let Some(&v) = memo.get(&(a.len(), b.len())) {
        return v;
    }
    let v = if a[0] == b[0] {
        levenshtein_oracle(&a[1..], &b[1..], memo)
    } else {
        1 + levenshtein_oracle(&a[1..], b, memo)
            .min(levenshtein_oracle(a, &b[1..], memo))
            .min(levenshtein_oracle(&a[1..], &b[1..], memo))
    };
    memo.insert((a.len(), b.len()), v);
    v
}

fn all_strings(max_len: usize) -> Vec<Vec<usize>> {
    let mut out = vec![vec![]];
    let mut frontier = vec![vec![]];
    for _ in 0..max_len {
        let mut next = Vec::new();
        for s in &frontier {
            for c in 1..=3 {
                let mut t: Vec<usize> = s.clone();
                t.push(c);
                next.push(t);
            }
        }
        out.extend(next.iter().cloned());
        frontier = next;
    }
    out
}

#[test]
fn edit_distance_matches_recursive_oracle_exhaustively() {
    let strings = all_strings(5);
    for a in &strings {
        for b in &strings {
            let mut memo = HashMap::new();
            assert_eq!(edit_distance(a, b), levenshtein_oracle(a, b, &mut memo), "{a:?} vs {b:?}");
        }
    }
}

#[test]
fn edit_distance_hand_cases() {
    assert_eq!(edit_distance(&[], &[1, 2, 3]), 3);
    assert_eq!(edit_distance(&[1, 2, 3], &[1, 2, 3]), 0);
    assert_eq!(edit_distance(&[1, 3], &[1, 2, 3]), 1);
    assert_eq!(edit_distance(&[3, 2, 1], &[1, 2, 3]), 2);
}

#[test]
fn greedy_ctc_merges_repeats_and_drops_blanks() {
    // Frame argmaxes: 1 1 0 1 2 2 0
    let argmaxes = [1, 1, 0, 1, 2, 2, 0];
    let mut data = vec![0.0; argmaxes.len() * 3];
    for (t, &k) in argmaxes.iter().enumerate() {
        data[t * 3 + k] = 1.0;
    }
    let logits = Tensor::matrix(argmaxes.len(), 3, data).unwrap();
    assert_eq!(greedy_ctc(&logits), vec![1, 1, 2]);
}

#[test]
fn greedy_transducer_caps_emissions_per_frame() {
    let mut params = small_model(FusionMode::Maestro, 0);
    let b = params.get_mut("task_decoder.joint.out_b").unwrap();
    b.data_mut()[2] = 1e6;
    let encoded = Tensor::zeros(&[3, 8]);
    let hyp = greedy_transducer(&params, &encoded).unwrap();
    assert_eq!(hyp, vec![2; 3 * MAX_EMISSIONS_PER_FRAME]);

    let mut blank = small_model(FusionMode::Maestro, 0);
    blank.get_mut("task_decoder.joint.out_b").unwrap().data_mut()[0] = 1e6;
    assert!(greedy_transducer(&blank, &encoded).unwrap().is_empty());
}

#[test]
fn error_counts_and_report_merge() {
    let c = ErrorCounts {
        errors: 3,
        reference_tokens: 12,
        utterances: 2,
    };
    assert_eq!(c.ter(), 0.25);
    let mut a = EvalReport {
        total: c,
        per_domain: [("read".to_string(), c)].into(),
    };
    let d = ErrorCounts {
        errors: 1,
        reference_tokens: 4,
        utterances: 1,
    };
    a.merge(&EvalReport {
        total: d,
        per_domain: [("spontaneous".to_string(), d)].into(),
    });
    assert_eq!(a.ter(), 0.25);
    assert_eq!(a.utterances(), 3);
    let text = a.to_text();
    assert!(text.contains("ter.read = 0.250000") && text.contains("ter.spontaneous = 0.250000"));
}

#[test]
fn evaluation_runs_for_both_modes() {
    let corpus = small_corpus(4, 1);
    for fusion in [FusionMode::Maestro, FusionMode::SlamConcat] {
        let params = small_model(fusion, 1);
        let r = evaluate_ter(&params, &corpus).unwrap();
        assert_eq!(r.utterances(), 4);
        assert!(r.ter().is_finite() && r.ter() >= 0.0);
    }
    assert!(measure_text_encoder_loss(&small_model(FusionMode::Maestro, 1), &corpus).unwrap() > 0.0);
    assert!(matches!(
        measure_text_encoder_loss(&small_model(FusionMode::SlamConcat, 1), &corpus),
        Err(Error::Unsupported(_))
    ));
}

#[test]
fn sgd_step_clips_and_honours_freezing() {
    let mut params = small_model(FusionMode::Maestro, 2);
    let corpus = small_corpus(2, 2);
    let grads = {
        let mut s = Session::new(&params);
        let b = crate::encoders::forward_paired(&mut s, &[&corpus.utterances[0]], &Default::default()).unwrap();
        s.gradients(b.total)
    };
    let before = params.clone();
    let frozen: BTreeSet<Component> = [Component::SpeechEncoder].into();
    let norm = sgd_step(&mut params, &grads, 0.1, 1e-3, &frozen).unwrap();
    assert!(norm > 1e-3);
    let mut step_sq = 0.0;
    for (name, t) in params.tensors() {
        let old = before.get(name).unwrap();
        if Component::of(name).unwrap() == Component::SpeechEncoder {
            assert_eq!(t, old, "{name} moved while frozen");
        }
        step_sq += t.data().iter().zip(old.data()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
    }
    assert!((step_sq.sqrt() - 0.1 * 1e-3).abs() < 1e-12);
}

#[test]
fn pretraining_is_deterministic_and_seeded() {
    let corpus = small_corpus(8, 3);
    let run = |seed| pretrain_paired(small_model(FusionMode::Maestro, 3), &corpus, &TrainConfig { seed, ..short(5) }).unwrap();
    let (a, la) = run(0);
    let (b, lb) = run(0);
    let (c, _) = run(1);
    assert_eq!(a, b);
    assert_eq!(la, lb);
    assert_ne!(a, c);
}

#[test]
fn pretraining_reduces_loss() {
    let corpus = small_corpus(32, 4);
    for fusion in [FusionMode::Maestro, FusionMode::SlamConcat] {
        let cfg = TrainConfig {
            learning_rate: 0.1,
            clip_norm: 2.0,
            ..short(50)
        };
        let (_, log) = pretrain_paired(small_model(fusion, 4), &corpus, &cfg).unwrap();
        let first = log.window_mean(10, false, |r| r.total);
        let last = log.window_mean(10, true, |r| r.total);
        assert!(last < first, "{fusion:?}: {first} -> {last}");
    }
}

#[test]
fn pretraining_honours_frozen_tags_from_params_and_config() {
    let corpus = small_corpus(8, 5);
    let mut params = small_model(FusionMode::Maestro, 5);
    params.set_frozen([Component::Refiner]);
    let cfg = TrainConfig {
        frozen: [Component::TaskDecoder].into(),
        ..short(3)
    };
    let (out, _) = pretrain_paired(params.clone(), &corpus, &cfg).unwrap();
    for (name, t) in out.tensors() {
        let tag = Component::of(name).unwrap();
        if matches!(tag, Component::Refiner | Component::TaskDecoder) {
            assert_eq!(t, params.get(name).unwrap(), "{name}");
        }
    }
    assert_ne!(
        out.get("shared_encoder.block0.wq").unwrap(),
        params.get("shared_encoder.block0.wq").unwrap()
    );
}

#[test]
fn adaptation_freezes_text_encoder_and_guards_text_only() {
    let corpus = small_corpus(8, 6);
    let params = small_model(FusionMode::Maestro, 6);
    let texts = corpus.texts();
    let cfg = TrainConfig {
        steps: 3,
        paired_count: 2,
        text_count: 2,
        ..TrainConfig::adapt()
    };
    let (out, log) = adapt_text_only(params.clone(), &texts, &corpus, &cfg).unwrap();
    assert_eq!(log.records.len(), 3);
    for tag in Component::TEXT_ENCODER {
        for name in params.names_in(tag) {
            assert_eq!(out.get(name), params.get(name), "{name}");
        }
    }
    assert_ne!(out, params);

    let no_pairs = TrainConfig { paired_count: 0, ..cfg.clone() };
    assert!(matches!(adapt_text_only(params.clone(), &texts, &corpus, &no_pairs), Err(Error::Config(_))));
    let allowed = TrainConfig {
        allow_text_only: true,
        ..no_pairs
    };
    assert!(adapt_text_only(params.clone(), &texts, &corpus, &allowed).is_ok());
    assert!(matches!(adapt_text_only(params, &[vec![]], &corpus, &cfg), Err(Error::Input(_))));

    let slam = small_model(FusionMode::SlamConcat, 6);
    assert!(matches!(adapt_text_only(slam, &texts, &corpus, &cfg), Err(Error::Unsupported(_))));
}

#[test]
fn swap_takes_exactly_the_listed_tags() {
    let base = small_model(FusionMode::Maestro, 7);
    let corpus = small_corpus(8, 7);
    let (donor, _) = pretrain_paired(base.clone(), &corpus, &short(2)).unwrap();

    assert_eq!(swap_components(&base, &donor, &[]).unwrap(), base);
    assert_eq!(swap_components(&base, &donor, &Component::ALL).unwrap(), donor);
    assert_eq!(swap_components(&base, &base, &[Component::Refiner]).unwrap(), base);

    let out = swap_components(&base, &donor, &[Component::DurationPredictor]).unwrap();
    for (name, t) in out.tensors() {
        let want = if Component::of(name).unwrap() == Component::DurationPredictor { &donor } else { &base };
        assert_eq!(t, want.get(name).unwrap(), "{name}");
    }

    let other = small_model(FusionMode::Maestro, 8);
    assert!(matches!(swap_components(&base, &other, &[Component::Refiner]), Err(Error::Incompatible(_))));
}

#[test]
fn schedule_and_log_format() {
    let cfg = TrainConfig {
        steps: 4,
        learning_rate: 0.4,
        schedule: LrSchedule::LinearDecay,
        ..TrainConfig::pretrain()
    };
    for (step, want) in [0.4, 0.3, 0.2, 0.1].into_iter().enumerate() {
        assert!((cfg.lr_at(step) - want).abs() < 1e-15);
    }
    assert_eq!(TrainConfig::adapt().lr_at(299), 0.02);
    assert_eq!(LrSchedule::parse("linear").unwrap(), LrSchedule::LinearDecay);
    assert!(LrSchedule::parse("cosine").is_err());
    assert!(TrainConfig { steps: 0, ..cfg.clone() }.validate().is_err());

    let corpus = small_corpus(4, 9);
    let (_, log) = pretrain_paired(small_model(FusionMode::Maestro, 9), &corpus, &short(2)).unwrap();
    let tsv = log.to_tsv();
    let lines: Vec<&str> = tsv.lines().collect();
    assert_eq!(lines[0], TrainLog::HEADER);
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("0\t"));
    assert_eq!(lines[2].split('\t').count(), 8);
}
