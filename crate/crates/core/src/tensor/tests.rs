use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::error::Error;
use crate::segnet::ParamSet;

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

/// Direct four-loop cross-correlation with zero padding.
fn brute_conv(x: &Tensor, k: &Tensor, b: &Tensor) -> Tensor {
    let (ci, h, w) = x.dims3("x").unwrap();
    let (co, ks) = (k.shape()[0], k.shape()[2]);
    let pad = (ks / 2) as isize;
    let mut out = Tensor::zeros(&[co, h, w]);
    for o in 0..co {
        for y in 0..h {
            for xx in 0..w {
                let mut acc = b.data()[o];
                for i in 0..ci {
                    for ky in 0..ks {
                        for kx in 0..ks {
                            let sy = y as isize + ky as isize - pad;
                            let sx = xx as isize + kx as isize - pad;
                            if sy < 0 || sx < 0 || sy >= h as isize || sx >= w as isize {
                                continue;
                            }
                            acc += k.data()[((o * ci + i) * ks + ky) * ks + kx]
                                * x.data()[(i * h + sy as usize) * w + sx as usize];
                        }
                    }
                }
                out.data_mut()[(o * h + y) * w + xx] = acc;
            }
        }
    }
    out
}

#[test]
fn tensor_rejects_inconsistent_shape() {
    assert!(matches!(Tensor::new(vec![2, 3], vec![0.0; 5]), Err(Error::Shape(_))));
}

#[test]
fn conv_identity_kernel_reproduces_input() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = random(&[3, 5, 4], &mut rng);
    let mut k = Tensor::zeros(&[3, 3, 1, 1]);
    for c in 0..3 {
        k.data_mut()[c * 3 + c] = 1.0;
    }
    let y = ops::conv2d(&x, &k, &Tensor::zeros(&[3])).unwrap();
    assert_eq!(y, x);

    // 3x3 kernel with only the centre tap set behaves the same.
    let mut k3 = Tensor::zeros(&[3, 3, 3, 3]);
    for c in 0..3 {
        k3.data_mut()[((c * 3 + c) * 3 + 1) * 3 + 1] = 1.0;
    }
    assert_eq!(ops::conv2d(&x, &k3, &Tensor::zeros(&[3])).unwrap(), x);
}

#[test]
fn conv_zero_input_yields_bias() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let k = random(&[4, 2, 3, 3], &mut rng);
    let b = Tensor::new(vec![4], vec![0.5, -1.0, 2.0, 0.0]).unwrap();
    let y = ops::conv2d(&Tensor::zeros(&[2, 6, 6]), &k, &b).unwrap();
    for o in 0..4 {
        assert!(y.data()[o * 36..(o + 1) * 36].iter().all(|&v| v == b.data()[o]));
    }
}

#[test]
fn conv_matches_brute_force_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for (ci, co, h, w, k) in [(3, 4, 7, 5, 3), (2, 3, 6, 6, 5), (1, 2, 3, 9, 3), (3, 2, 1, 1, 3)] {
        let x = random(&[ci, h, w], &mut rng);
        let kern = random(&[co, ci, k, k], &mut rng);
        let b = random(&[co], &mut rng);
        let fast = ops::conv2d(&x, &kern, &b).unwrap();
        let slow = brute_conv(&x, &kern, &b);
        let diff = fast.data().iter().zip(slow.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(diff < 1e-12, "max diff {diff}");
    }
}

#[test]
fn conv_shape_errors_are_descriptive() {
    let x = Tensor::zeros(&[3, 4, 4]);
    let err = ops::conv2d(&x, &Tensor::zeros(&[2, 2, 3, 3]), &Tensor::zeros(&[2])).unwrap_err();
    assert!(err.to_string().contains("input channels"), "{err}");
    assert!(ops::conv2d(&x, &Tensor::zeros(&[2, 3, 2, 2]), &Tensor::zeros(&[2])).is_err());
    assert!(ops::conv2d(&x, &Tensor::zeros(&[2, 3, 3, 3]), &Tensor::zeros(&[3])).is_err());
}

#[test]
fn relu_examples() {
    let x = Tensor::new(vec![3], vec![-1.0, 0.0, 2.0]).unwrap();
    assert_eq!(ops::relu(&x).data(), &[0.0, 0.0, 2.0]);
    let pos = Tensor::new(vec![4], vec![0.0, 1.0, 3.5, 1e-9]).unwrap();
    assert_eq!(ops::relu(&pos), pos);
}

#[test]
fn relu_subgradient_at_zero_is_zero() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::new(vec![3], vec![-1.0, 0.0, 2.0]).unwrap());
    let r = tape.relu(x);
    let s = tape.sum(r);
    let g = tape.backward(s).unwrap();
    assert_eq!(g.get(x).unwrap(), &[0.0, 0.0, 1.0]);
}

#[test]
fn relu_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let data: Vec<f64> = (0..50)
        .map(|_| loop {
            let v: f64 = rng.gen_range(-2.0..2.0);
            if v.abs() > 1e-3 {
                break v;
            }
        })
        .collect();
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::new(vec![50], data.clone()).unwrap());
    let r = tape.relu(x);
    let s = tape.sum(r);
    let g = tape.backward(s).unwrap().get(x).unwrap().to_vec();
    let h = 1e-4;
    let f = |v: &[f64]| v.iter().map(|&a| a.max(0.0)).sum::<f64>();
    for i in 0..50 {
        let mut p = data.clone();
        let mut m = data.clone();
        p[i] += h;
        m[i] -= h;
        let fd = (f(&p) - f(&m)) / (2.0 * h);
        let denom = fd.abs().max(g[i].abs()).max(1e-12);
        assert!((fd - g[i]).abs() / denom < 1e-5 || (fd == 0.0 && g[i] == 0.0));
    }
}

#[test]
fn uniform_logits_give_ln_c() {
    let logits = Tensor::zeros(&[7, 4, 5]);
    let target = LabelMap::new(4, 5, (0..20).map(|i| (i % 7) as u8).collect()).unwrap();
    let (loss, _) = ops::softmax_ce_with_grad(&logits, &target, None).unwrap();
    assert!((loss - 7f64.ln()).abs() < 1e-12);
    assert!((loss - 1.9459).abs() < 1e-4);
}

#[test]
fn confident_correct_logits_give_near_zero_loss() {
    let target = LabelMap::new(2, 3, vec![0, 1, 2, 3, 4, 5]).unwrap();
    let mut logits = Tensor::zeros(&[7, 2, 3]);
    for p in 0..6 {
        logits.data_mut()[target.data()[p] as usize * 6 + p] = 30.0;
    }
    let (loss, _) = ops::softmax_ce_with_grad(&logits, &target, None).unwrap();
    assert!(loss < 1e-9);
}

#[test]
fn ce_gradient_is_softmax_minus_onehot_over_n() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (c, h, w) = (4, 3, 3);
    let logits = random(&[c, h, w], &mut rng);
    let mut labels: Vec<u8> = (0..9).map(|_| rng.gen_range(0..c as u8)).collect();
    labels[4] = IGNORE_LABEL;
    let target = LabelMap::new(h, w, labels).unwrap();
    let (_, grad) = ops::softmax_ce_with_grad(&logits, &target, None).unwrap();
    let sm = ops::pixel_softmax(&logits).unwrap();
    let n = 8.0;
    for p in 0..9 {
        for ch in 0..c {
            let expected = if p == 4 {
                0.0
            } else {
                (sm.data()[ch * 9 + p] - if target.data()[p] as usize == ch { 1.0 } else { 0.0 }) / n
            };
            assert!((grad[ch * 9 + p] - expected).abs() < 1e-15);
        }
    }
    // finite differences, weighted variant
    let weights: Vec<f64> = (0..9).map(|_| rng.gen_range(0.1..2.0)).collect();
    let (_, grad) = ops::softmax_ce_with_grad(&logits, &target, Some(&weights)).unwrap();
    let hstep = 1e-4;
    for i in 0..logits.len() {
        let mut p = logits.clone();
        let mut m = logits.clone();
        p.data_mut()[i] += hstep;
        m.data_mut()[i] -= hstep;
        let fp = ops::softmax_ce_with_grad(&p, &target, Some(&weights)).unwrap().0;
        let fm = ops::softmax_ce_with_grad(&m, &target, Some(&weights)).unwrap().0;
        let fd = (fp - fm) / (2.0 * hstep);
        let denom = fd.abs().max(grad[i].abs()).max(1e-12);
        assert!((fd - grad[i]).abs() / denom < 1e-4 || (fd - grad[i]).abs() < 1e-12);
    }
}

#[test]
fn ce_rejects_out_of_range_target() {
    let logits = Tensor::zeros(&[3, 1, 2]);
    let target = LabelMap::new(1, 2, vec![0, 3]).unwrap();
    assert!(matches!(
        ops::softmax_ce_with_grad(&logits, &target, None),
        Err(Error::Bounds(_))
    ));
}

#[test]
fn ce_with_all_ignored_is_zero() {
    let logits = Tensor::full(&[3, 2, 2], 1.0);
    let target = LabelMap::filled(2, 2, IGNORE_LABEL);
    let (loss, grad) = ops::softmax_ce_with_grad(&logits, &target, None).unwrap();
    assert_eq!(loss, 0.0);
    assert!(grad.iter().all(|&g| g == 0.0));
}

#[test]
fn backward_independent_parameter_gets_zero() {
    let mut tape = Tape::new();
    let p = tape.leaf(Tensor::full(&[3], 1.0));
    let q = tape.leaf(Tensor::full(&[3], 2.0));
    let s = tape.sum(q);
    let g = tape.backward(s).unwrap();
    assert!(g.get(p).is_none());
    assert_eq!(g.get_or_zeros(p, 3), vec![0.0; 3]);
}

#[test]
fn backward_accumulates_over_paths() {
    let mut tape = Tape::new();
    let p = tape.leaf(Tensor::full(&[2, 2], 0.3));
    let a = tape.sum(p);
    let b = tape.sum(p);
    let loss = tape.add(a, b).unwrap();
    let g = tape.backward(loss).unwrap();
    assert_eq!(g.get(p).unwrap(), &[2.0; 4]);
}

#[test]
fn backward_requires_scalar_loss() {
    let mut tape = Tape::new();
    let p = tape.leaf(Tensor::full(&[2], 1.0));
    let r = tape.relu(p);
    assert!(matches!(tape.backward(r), Err(Error::Contract(_))));
}

#[test]
fn tape_is_linear() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let x = random(&[2, 5, 5], &mut rng);
    let k = random(&[3, 2, 3, 3], &mut rng);
    let b = random(&[3], &mut rng);
    let target = LabelMap::new(5, 5, (0..25).map(|i| (i % 3) as u8).collect()).unwrap();
    let (ca, cb) = (0.7, -1.3);

    let grads_of = |which: u8| {
        let mut tape = Tape::new();
        let kv = tape.leaf(k.clone());
        let bv = tape.leaf(b.clone());
        let xv = tape.constant(x.clone());
        let y = tape.conv2d(xv, kv, bv).unwrap();
        let r = tape.relu(y);
        let f = tape.pixel_softmax_ce(r, &target, None).unwrap();
        let g = tape.sum(y);
        let loss = match which {
            0 => f,
            1 => g,
            _ => {
                let fa = tape.scale(f, ca);
                let gb = tape.scale(g, cb);
                tape.add(fa, gb).unwrap()
            }
        };
        let gr = tape.backward(loss).unwrap();
        (gr.get(kv).unwrap().to_vec(), gr.get(bv).unwrap().to_vec())
    };
    let (fk, fb) = grads_of(0);
    let (gk, gb) = grads_of(1);
    let (ck, cbias) = grads_of(2);
    for i in 0..fk.len() {
        assert!((ck[i] - (ca * fk[i] + cb * gk[i])).abs() < 1e-12);
    }
    for i in 0..fb.len() {
        assert!((cbias[i] - (ca * fb[i] + cb * gb[i])).abs() < 1e-12);
    }
}

#[test]
fn forward_and_backward_are_bit_deterministic() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = random(&[3, 6, 6], &mut rng);
        let k = random(&[4, 3, 3, 3], &mut rng);
        let b = random(&[4], &mut rng);
        let mut tape = Tape::new();
        let (kv, bv) = (tape.leaf(k), tape.leaf(b));
        let xv = tape.leaf(x);
        let y = tape.conv2d(xv, kv, bv).unwrap();
        let r = tape.relu(y);
        let s = tape.sum(r);
        let value = tape.value(s).item().unwrap();
        let g = tape.backward(s).unwrap();
        let mut bits = vec![value.to_bits()];
        for v in [kv, bv, xv] {
            bits.extend(g.get(v).unwrap().iter().map(|f| f.to_bits()));
        }
        bits
    };
    assert_eq!(run(), run());
}

fn single_param_set(values: &[f64], grads: Option<&[f64]>) -> ParamSet {
    let mut ps = ParamSet::new();
    ps.push("p", Tensor::new(vec![values.len()], values.to_vec()).unwrap()).unwrap();
    if let Some(g) = grads {
        ps.accumulate_grads(&[g.to_vec()], 1.0).unwrap();
    }
    ps
}

#[test]
fn sgd_plain_step() {
    let mut ps = single_param_set(&[1.0, -2.0, 0.5], Some(&[0.1, 0.2, -0.3]));
    let mut st = OptimState::new(0.5, 0.0, 0.0, 0.9, 10).unwrap();
    sgd_step(&mut ps, &mut st, 0.5).unwrap();
    assert_eq!(ps.flatten(), vec![1.0 - 0.5 * 0.1, -2.0 - 0.5 * 0.2, 0.5 + 0.5 * 0.3]);
}

#[test]
fn sgd_pure_weight_decay() {
    let mut ps = single_param_set(&[1.0, -2.0], Some(&[0.0, 0.0]));
    let mut st = OptimState::new(0.1, 0.0, 5e-4, 0.9, 10).unwrap();
    sgd_step(&mut ps, &mut st, 0.1).unwrap();
    assert_eq!(ps.flatten(), vec![1.0 * (1.0 - 0.1 * 5e-4), -2.0 * (1.0 - 0.1 * 5e-4)]);
}

#[test]
fn sgd_two_momentum_steps_match_hand_recurrence() {
    let (m, wd, lr1, lr2) = (0.9, 5e-4, 0.01, 0.008);
    let theta0 = [0.4, -1.1];
    let g1 = [0.3, 0.2];
    let g2 = [-0.5, 0.7];
    let mut ps = single_param_set(&theta0, Some(&g1));
    let mut st = OptimState::new(lr1, m, wd, 0.9, 10).unwrap();
    sgd_step(&mut ps, &mut st, lr1).unwrap();
    ps.clear_grads();
    ps.accumulate_grads(&[g2.to_vec()], 1.0).unwrap();
    sgd_step(&mut ps, &mut st, lr2).unwrap();
    for i in 0..2 {
        let v1 = g1[i] + wd * theta0[i];
        let t1 = theta0[i] - lr1 * v1;
        let v2 = m * v1 + (g2[i] + wd * t1);
        let t2 = t1 - lr2 * v2;
        assert!((ps.flatten()[i] - t2).abs() < 1e-12);
    }
}

#[test]
fn sgd_requires_gradients() {
    let mut ps = single_param_set(&[1.0], None);
    let mut st = OptimState::new(0.1, 0.9, 0.0, 0.9, 10).unwrap();
    assert!(matches!(sgd_step(&mut ps, &mut st, 0.1), Err(Error::Contract(_))));
}

#[test]
fn poly_lr_examples() {
    let st = OptimState::new(2.5e-4, 0.9, 5e-4, 0.9, 1000).unwrap();
    assert_eq!(poly_lr(0, &st), 2.5e-4);
    assert_eq!(poly_lr(1000, &st), 0.0);
    assert_eq!(poly_lr(5000, &st), 0.0);
    assert!((poly_lr(500, &st) - 2.5e-4 * 0.5f64.powf(0.9)).abs() < 1e-18);
}
