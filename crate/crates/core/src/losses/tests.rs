use super::*;
use crate::numerics::{grad_check, rng_from_seed, LabRng};
use rand::Rng;

fn random_tensor(rng: &mut LabRng, shape: &[usize], scale: f64) -> Tensor {
    let n: usize = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-scale..scale)).collect()).unwrap()
}

fn log_probs(logits: &[f64], classes: usize) -> Vec<f64> {
    crate::numerics::log_softmax_rows(logits, classes)
}

/// Sums the probability of every transducer alignment by explicit enumeration.
fn transducer_enumerate(lp: &[f64], frames: usize, target: &[usize], classes: usize) -> f64 {
    #[allow(clippy::too_many_arguments)]
    fn walk(lp: &[f64], frames: usize, target: &[usize], classes: usize, t: usize, u: usize, acc: f64, out: &mut Vec<f64>) {
        let u1 = target.len() + 1;
        let node = |t: usize, u: usize| (t * u1 + u) * classes;
        if t == frames - 1 && u == target.len() {
            out.push(acc + lp[node(t, u)]);
            return;
        }
        if u < target.len() {
            walk(lp, frames, target, classes, t, u + 1, acc + lp[node(t, u) + target[u]], out);
        }
        if t + 1 < frames {
            walk(lp, frames, target, classes, t + 1, u, acc + lp[node(t, u)], out);
        }
    }
    let mut paths = Vec::new();
    walk(lp, frames, target, classes, 0, 0, 0.0, &mut paths);
    -paths.iter().map(|p| p.exp()).sum::<f64>().ln()
}

/// Sums over every frame labelling that collapses to `target`.
fn ctc_enumerate(lp: &[f64], classes: usize, target: &[usize]) -> Option<f64> {
    let frames = lp.len() / classes;
    let mut total = 0.0;
    let mut any = false;
    let count = classes.pow(frames as u32);
    for code in 0..count {
        let mut c = code;
        let mut labels = Vec::with_capacity(frames);
        for _ in 0..frames {
            labels.push(c % classes);
            c /= classes;
        }
        let mut collapsed = Vec::new();
        let mut prev = usize::MAX;
        for &l in &labels {
            if l != prev && l != 0 {
                collapsed.push(l);
            }
            prev = l;
        }
        if collapsed == target {
            any = true;
            total += labels.iter().enumerate().map(|(t, &l)| lp[t * classes + l]).sum::<f64>().exp();
        }
    }
    any.then(|| -total.ln())
}

fn random_target(rng: &mut LabRng, len: usize, vocab: usize) -> Vec<usize> {
    (0..len).map(|_| rng.random_range(1..=vocab)).collect()
}

#[test]
fn transducer_single_path() {
    let mut rng = rng_from_seed(1);
    let logits = random_tensor(&mut rng, &[1, 2, 3], 2.0);
    let lp = log_probs(logits.data(), 3);
    let y = 2;
    let expected = -(lp[y] + lp[3]);
    let got = transducer_loss(&logits, &[y]).unwrap();
    assert!((got - expected).abs() < 1e-12);
}

#[test]
fn transducer_empty_target_is_all_blanks() {
    let mut rng = rng_from_seed(2);
    let logits = random_tensor(&mut rng, &[2, 1, 4], 2.0);
    let lp = log_probs(logits.data(), 4);
    let expected = -(lp[0] + lp[4]);
    assert!((transducer_loss(&logits, &[]).unwrap() - expected).abs() < 1e-12);
}

#[test]
fn transducer_matches_enumeration_on_grid() {
    let mut rng = rng_from_seed(3);
    for frames in 1..=4 {
        for labels in 0..=2 {
            for vocab in 1..=3 {
                for _ in 0..3 {
                    let classes = vocab + 1;
                    let logits = random_tensor(&mut rng, &[frames, labels + 1, classes], 3.0);
                    let target = random_target(&mut rng, labels, vocab);
                    let oracle = transducer_enumerate(&log_probs(logits.data(), classes), frames, &target, classes);
                    let got = transducer_loss(&logits, &target).unwrap();
                    assert!((got - oracle).abs() < 1e-9, "T={frames} U={labels} V={vocab}: {got} vs {oracle}");
                }
            }
        }
    }
}

#[test]
fn transducer_lattice_directions_and_occupancy() {
    let mut rng = rng_from_seed(4);
    for (frames, labels) in [(1, 0), (3, 2), (4, 1), (5, 3)] {
        let classes = 4;
        let logits = random_tensor(&mut rng, &[frames, labels + 1, classes], 2.0);
        let target = random_target(&mut rng, labels, 3);
        let lp = log_probs(logits.data(), classes);
        let lat = transducer_lattice(&lp, frames, &target, classes).unwrap();
        assert!((lat.log_likelihood - lat.backward_log_likelihood()).abs() < 1e-9);
        // Every alignment visits T+U lattice nodes.
        let visits: f64 = (0..frames)
            .flat_map(|t| (0..=labels).map(move |u| (t, u)))
            .map(|(t, u)| lat.occupancy(t, u))
            .sum();
        assert!((visits - (frames + labels) as f64).abs() < 1e-9, "{visits}");
        // Every alignment emits T blanks and U labels.
        let (_, dlp) = transducer_nll_logprob_grad(&lp, frames, &target, classes).unwrap();
        let emissions: f64 = -dlp.iter().sum::<f64>();
        assert!((emissions - (frames + labels) as f64).abs() < 1e-9);
        // Logit gradient is tangent to the simplex at each node.
        let (_, grad) = transducer_loss_with_grad(&logits, &target).unwrap();
        for row in grad.chunks(classes) {
            assert!(row.iter().sum::<f64>().abs() < 1e-9);
        }
    }
}

#[test]
fn transducer_rejects_shape_and_vocab_errors() {
    let logits = Tensor::zeros(&[2, 2, 3]);
    assert!(matches!(transducer_loss(&logits, &[1, 2]), Err(Error::Dimension { .. })));
    assert!(matches!(transducer_loss(&logits, &[3]), Err(Error::Vocabulary { .. })));
    assert!(matches!(transducer_loss(&logits, &[0]), Err(Error::Vocabulary { .. })));
}

#[test]
fn transducer_grad_check() {
    let mut rng = rng_from_seed(5);
    let logits = random_tensor(&mut rng, &[9, 4], 2.0);
    let err = grad_check(|g, v| transducer_loss_node(g, v[0], 3, &[1, 3]), &[logits], 1e-5).unwrap();
    assert!(err < 1e-4, "{err}");
}

#[test]
fn ctc_single_frame_and_blank_cases() {
    let mut rng = rng_from_seed(6);
    let logits = random_tensor(&mut rng, &[1, 3], 2.0);
    let lp = log_probs(logits.data(), 3);
    assert!((ctc_loss(&logits, &[2]).unwrap() + lp[2]).abs() < 1e-12);

    let logits = random_tensor(&mut rng, &[2, 3], 2.0);
    let lp = log_probs(logits.data(), 3);
    assert!((ctc_loss(&logits, &[]).unwrap() + (lp[0] + lp[3])).abs() < 1e-12);

    // T=2, target [a]: paths (a,∅), (∅,a), (a,a).
    let a = 1;
    let p = |t: usize, k: usize| lp[t * 3 + k].exp();
    let expected = -(p(0, a) * p(1, 0) + p(0, 0) * p(1, a) + p(0, a) * p(1, a)).ln();
    assert!((ctc_loss(&logits, &[a]).unwrap() - expected).abs() < 1e-12);
}

#[test]
fn ctc_matches_enumeration_on_grid() {
    let mut rng = rng_from_seed(7);
    for frames in 1..=4 {
        for labels in 0..=2 {
            for vocab in 1..=3 {
                for _ in 0..3 {
                    let classes = vocab + 1;
                    let logits = random_tensor(&mut rng, &[frames, classes], 3.0);
                    let target = random_target(&mut rng, labels, vocab);
                    let lp = log_probs(logits.data(), classes);
                    match ctc_enumerate(&lp, classes, &target) {
                        Some(oracle) => {
                            let got = ctc_loss(&logits, &target).unwrap();
                            assert!((got - oracle).abs() < 1e-9, "{got} vs {oracle}");
                        }
                        None => assert!(matches!(ctc_loss(&logits, &target), Err(Error::ImpossibleTarget(_)))),
                    }
                }
            }
        }
    }
}

#[test]
fn ctc_impossible_target() {
    let logits = Tensor::zeros(&[2, 3]);
    assert!(matches!(ctc_loss(&logits, &[1, 1]), Err(Error::ImpossibleTarget(_))));
    assert!(ctc_loss(&Tensor::zeros(&[3, 3]), &[1, 1]).is_ok());
}

#[test]
fn ctc_grad_check() {
    let mut rng = rng_from_seed(8);
    let logits = random_tensor(&mut rng, &[5, 4], 2.0);
    let err = grad_check(|g, v| ctc_loss_node(g, v[0], &[2, 2, 3]), &[logits], 1e-5).unwrap();
    assert!(err < 1e-4, "{err}");
}

#[test]
fn consistency_cases() {
    let a = Tensor::from_rows(&[vec![1.0, 0.0]]).unwrap();
    let z = Tensor::zeros(&[1, 2]);
    assert_eq!(consistency_mse(&a, &a, &[true]).unwrap(), 0.0);
    assert_eq!(consistency_mse(&a, &z, &[true]).unwrap(), 0.5);
    assert!(matches!(consistency_mse(&a, &z, &[false]), Err(Error::UndefinedMean(_))));
    assert!(consistency_mse(&a, &Tensor::zeros(&[2, 2]), &[true]).is_err());
}

#[test]
fn consistency_gradient_routing() {
    let mut rng = rng_from_seed(9);
    let a = random_tensor(&mut rng, &[3, 2], 1.0);
    let b = random_tensor(&mut rng, &[3, 2], 1.0);
    let mask = [true, false, true];
    for target in [true, false] {
        let mut g = Graph::new();
        let (va, vb) = (g.leaf(a.clone()), g.leaf(b.clone()));
        let l = consistency_mse_node(&mut g, va, vb, &mask, target).unwrap();
        let gr = g.backward(l);
        assert!(gr.wrt(va).is_some());
        assert_eq!(gr.wrt(vb).is_none(), target);
        // Masked frame receives nothing.
        assert_eq!(&gr.wrt(va).unwrap()[2..4], &[0.0, 0.0]);
    }
    let err = grad_check(|g, v| consistency_mse_node(g, v[0], v[1], &mask, false), &[a, b], 1e-5).unwrap();
    assert!(err < 1e-4);
}

#[test]
fn duration_cases() {
    assert_eq!(duration_loss(&[3.0, 1.0], &[3, 1]).unwrap(), 0.0);
    let v = duration_loss(&[std::f64::consts::E * 2.0], &[2]).unwrap();
    assert!((v - 1.0).abs() < 1e-12);
    assert!(matches!(duration_loss(&[0.0], &[1]), Err(Error::Domain(_))));
    assert!(matches!(duration_loss(&[-1.0], &[1]), Err(Error::Domain(_))));
    assert!(duration_loss(&[1.0], &[1, 2]).is_err());
}

#[test]
fn duration_grad_check() {
    let mut rng = rng_from_seed(10);
    for _ in 0..5 {
        let p = Tensor::vector((0..4).map(|_| rng.random_range(0.5..6.0)).collect());
        let gold: Vec<usize> = (0..4).map(|_| rng.random_range(1..7)).collect();
        let err = grad_check(|g, v| duration_loss_node(g, v[0], &gold), &[p], 1e-5).unwrap();
        assert!(err < 1e-6, "{err}");
    }
}

fn contrastive_oracle(s: &Tensor, t: &Tensor, tau: f64) -> f64 {
    let n = s.rows();
    let cos = |a: &[f64], b: &[f64]| {
        let d: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
        let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        d / (na * nb)
    };
    let mut s2t = 0.0;
    let mut t2s = 0.0;
    for i in 0..n {
        let mut den = 0.0;
        let mut den_t = 0.0;
        for j in 0..n {
            den += (cos(s.row(i), t.row(j)) / tau).exp();
            den_t += (cos(t.row(i), s.row(j)) / tau).exp();
        }
        let pos = cos(s.row(i), t.row(i)) / tau;
        s2t += -(pos - den.ln());
        t2s += -(pos - den_t.ln());
    }
    0.5 * (s2t + t2s) / n as f64
}

#[test]
fn contrastive_cases() {
    let e = Tensor::identity(2);
    assert!(contrastive_match_loss(&e, &e, 0.01).unwrap() < 1e-12);
    let same = Tensor::filled(&[4, 3], 0.7);
    assert!((contrastive_match_loss(&same, &same, 0.5).unwrap() - 4f64.ln()).abs() < 1e-12);
    let mut rng = rng_from_seed(11);
    let s = random_tensor(&mut rng, &[3, 5], 1.0);
    let t = random_tensor(&mut rng, &[3, 5], 1.0);
    let got = contrastive_match_loss(&s, &t, 0.3).unwrap();
    assert!((got - contrastive_oracle(&s, &t, 0.3)).abs() < 1e-10);
    let mut zero = s.clone();
    zero.row_mut(1).fill(0.0);
    assert!(matches!(contrastive_match_loss(&zero, &t, 0.3), Err(Error::Normalization(_))));
    assert!(contrastive_match_loss(&Tensor::zeros(&[1, 2]), &Tensor::zeros(&[1, 2]), 0.3).is_err());
}

#[test]
fn contrastive_grad_check() {
    let mut rng = rng_from_seed(12);
    let s = random_tensor(&mut rng, &[4, 3], 1.0);
    let t = random_tensor(&mut rng, &[4, 3], 1.0);
    let err = grad_check(|g, v| contrastive_match_loss_node(g, v[0], v[1], 0.2), &[s, t], 1e-5).unwrap();
    assert!(err < 1e-4, "{err}");
}

#[test]
fn losses_are_non_negative() {
    let mut rng = rng_from_seed(13);
    for _ in 0..20 {
        let logits = random_tensor(&mut rng, &[4, 3, 4], 4.0);
        let target = random_target(&mut rng, 2, 3);
        assert!(transducer_loss(&logits, &target).unwrap() >= 0.0);
        let logits = random_tensor(&mut rng, &[4, 4], 4.0);
        assert!(ctc_loss(&logits, &target).unwrap() >= 0.0);
        let s = random_tensor(&mut rng, &[3, 4], 1.0);
        let t = random_tensor(&mut rng, &[3, 4], 1.0);
        assert!(contrastive_match_loss(&s, &t, 0.5).unwrap() >= 0.0);
        assert!(consistency_mse(&s, &t, &[true; 3]).unwrap() > 0.0);
    }
}
