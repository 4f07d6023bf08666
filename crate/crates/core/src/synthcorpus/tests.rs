use super::*;
use std::collections::HashSet;

/// Expected rounded-and-clamped duration of one token, by quadrature over the
/// standard normal.
fn expected_token_duration(mu: f64, sigma: f64, max: usize) -> f64 {
    let steps = 40_000;
    let (lo, hi) = (-9.0, 9.0);
    let h = (hi - lo) / steps as f64;
    let mut acc = 0.0;
    for i in 0..=steps {
        let z = lo + h * i as f64;
        let w = if i == 0 || i == steps { 0.5 } else { 1.0 };
        let density = (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt();
        let d = ((mu + sigma * z).exp() + 0.5).floor().clamp(1.0, max as f64);
        acc += w * density * d;
    }
    acc * h
}

fn expected_domain_duration(spec: &DomainSpec) -> f64 {
    (0..spec.vocab())
        .map(|k| spec.unigram[k] * expected_token_duration(spec.duration_mu[k], spec.duration_sigma[k], spec.max_token_frames))
        .sum()
}

fn sampled_mean_duration(spec: &DomainSpec, n: usize) -> f64 {
    make_corpus(spec, n, Split::Train, 99).unwrap().mean_duration()
}

#[test]
fn make_domain_is_deterministic() {
    let a = make_domain(&DomainKnobs::read(), 3).unwrap();
    let b = make_domain(&DomainKnobs::read(), 3).unwrap();
    assert_eq!(a, b);
    let c = make_domain(&DomainKnobs::read(), 4).unwrap();
    assert_ne!(a.duration_mu, c.duration_mu);
    // Prototypes are shared across domains by default.
    let s = make_domain(&DomainKnobs::spontaneous(), 3).unwrap();
    assert_eq!(a.prototypes, s.prototypes);
}

#[test]
fn domain_invariants_hold() {
    for knobs in [DomainKnobs::read(), DomainKnobs::spontaneous()] {
        let spec = make_domain(&knobs, 1).unwrap();
        assert!((spec.unigram.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(spec.min_prototype_distance() > 4.0 * spec.noise * (spec.feature_dim() as f64).sqrt());
        assert!((spec.min_prototype_distance() - knobs.prototype_separation).abs() < 1e-9);
    }
}

#[test]
fn unsatisfiable_separation_is_rejected() {
    let knobs = DomainKnobs {
        noise: 5.0,
        ..DomainKnobs::read()
    };
    assert!(matches!(make_domain(&knobs, 1), Err(Error::Generation(_))));
}

#[test]
fn zero_noise_frames_are_prototype_repeats() {
    let knobs = DomainKnobs {
        noise: 0.0,
        ..DomainKnobs::read()
    };
    let spec = make_domain(&knobs, 2).unwrap();
    let utt = sample_utterance(&spec, 17);
    let mut frame = 0;
    for (&tok, &d) in utt.tokens.iter().zip(&utt.durations) {
        for _ in 0..d {
            assert_eq!(utt.frames.row(frame), spec.prototype(tok));
            frame += 1;
        }
    }
}

#[test]
fn durations_sum_to_frames() {
    let spec = make_domain(&DomainKnobs::spontaneous(), 5).unwrap();
    let corpus = make_corpus(&spec, 200, Split::Test, 5).unwrap();
    for u in &corpus.utterances {
        u.validate().unwrap();
        assert!(u.durations.iter().all(|&d| d >= 1 && d <= spec.max_token_frames));
        assert!(u.tokens.iter().all(|&t| (1..=spec.vocab()).contains(&t)));
        assert!(u.frames.is_finite());
    }
}

#[test]
fn sampled_durations_match_quadrature() {
    for knobs in [DomainKnobs::read(), DomainKnobs::spontaneous()] {
        let spec = make_domain(&knobs, 11).unwrap();
        let expected = expected_domain_duration(&spec);
        let got = sampled_mean_duration(&spec, 10_000);
        assert!((got - expected).abs() / expected < 0.05, "{}: {got} vs {expected}", knobs.id);
        // The lognormal mean is the right scale before rounding effects.
        let lognormal: f64 = (0..spec.vocab())
            .map(|k| spec.unigram[k] * (spec.duration_mu[k] + spec.duration_sigma[k].powi(2) / 2.0).exp())
            .sum();
        assert!((got - lognormal).abs() / lognormal < 0.05, "{}: {got} vs {lognormal}", knobs.id);
    }
}

#[test]
fn presets_differ_in_duration() {
    let read = make_domain(&DomainKnobs::read(), 21).unwrap();
    let spont = make_domain(&DomainKnobs::spontaneous(), 22).unwrap();
    let (r, s) = (sampled_mean_duration(&read, 10_000), sampled_mean_duration(&spont, 10_000));
    let contrast = (r - s) / s;
    let predicted = expected_domain_duration(&read) / expected_domain_duration(&spont) - 1.0;
    assert!(contrast > 0.3, "read {r} vs spontaneous {s}");
    assert!((contrast - predicted).abs() < 0.05, "{contrast} vs {predicted}");
}

#[test]
fn nearest_prototype_is_learnable() {
    for knobs in [DomainKnobs::read(), DomainKnobs::spontaneous()] {
        let spec = make_domain(&knobs, 3).unwrap();
        let corpus = make_corpus(&spec, 300, Split::Train, 3).unwrap();
        assert!(nearest_prototype_accuracy(&corpus) > 0.95);
    }
}

#[test]
fn corpus_ids_unique_and_regeneration_identical() {
    let spec = make_domain(&DomainKnobs::read(), 1).unwrap();
    let a = make_corpus(&spec, 1000, Split::Train, 8).unwrap();
    let ids: HashSet<&str> = a.utterances.iter().map(|u| u.id.as_str()).collect();
    assert_eq!(ids.len(), 1000);
    let b = make_corpus(&spec, 1000, Split::Train, 8).unwrap();
    assert_eq!(a, b);
    assert!(make_corpus(&spec, 0, Split::Train, 8).is_err());
}

#[test]
fn train_and_test_streams_are_disjoint() {
    let train: HashSet<u64> = (0..5000).map(|i| utterance_stream(Split::Train, i)).collect();
    assert!((0..5000).all(|i| !train.contains(&utterance_stream(Split::Test, i))));
    let spec = make_domain(&DomainKnobs::read(), 1).unwrap();
    let tr = make_corpus(&spec, 5, Split::Train, 8).unwrap();
    let te = make_corpus(&spec, 5, Split::Test, 8).unwrap();
    for (a, b) in tr.utterances.iter().zip(&te.utterances) {
        assert_ne!(a.frames, b.frames);
    }
}

#[test]
fn round_duration_rule() {
    assert_eq!(round_duration(0.2, 10), 1);
    assert_eq!(round_duration(2.5, 10), 3);
    assert_eq!(round_duration(2.49, 10), 2);
    assert_eq!(round_duration(40.0, 10), 10);
}
