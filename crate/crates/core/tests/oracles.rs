#![allow(clippy::needless_range_loop)]

use gcn_core::verify::{fd_gradient, max_relative_error, oracle_correlate, oracle_gabor};
use gcn_core::{build_bank, correlate2d, correlate2d_backward, Filter4, GaborBank, GaborParams, GofLayer, Tensor4};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn random_tensor(rng: &mut ChaCha8Rng, shape: [usize; 4]) -> Tensor4 {
    Tensor4::from_vec(shape, random_vec(rng, shape.iter().product())).unwrap()
}

fn random_filter(rng: &mut ChaCha8Rng, shape: [usize; 4]) -> Filter4 {
    Filter4::from_vec(shape, random_vec(rng, shape.iter().product())).unwrap()
}

#[test]
fn bank_matches_oracle_on_full_grid() {
    for u_count in 2..=7 {
        for v_count in 1..=4 {
            for w in [3, 5, 7] {
                let params = GaborParams::new(u_count, v_count, w);
                let bank = build_bank(params).unwrap();
                let r = (w / 2) as i64;
                for u in 0..u_count {
                    for v in 1..=v_count {
                        for y in -r..=r {
                            for x in -r..=r {
                                let want = oracle_gabor(u_count, params.sigma, u, v, x, y);
                                let got = bank.value(u, v, x, y);
                                assert!((want - got).abs() <= 1e-12, "U={u_count} W={w} u={u} v={v} ({x},{y})");
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Every output channel of a GoF layer is a plain correlation with the
/// corresponding modulated filter.
#[test]
fn gof_forward_is_correlation_with_modulated_filters() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let bank = build_bank(GaborParams::new(4, 4, 3)).unwrap();
    let mut layer = GofLayer::new(8, 4, 3, bank, 2, 1, 1, &mut rng).unwrap();
    for (i, b) in layer.bias_mut().iter_mut().enumerate() {
        *b = 0.1 * i as f64;
    }
    let x = random_tensor(&mut rng, [2, 8, 9, 9])
        .with_orient_groups(Some(4))
        .unwrap();
    let got = layer.forward(&x).unwrap();
    let mut want = oracle_correlate(&x, &layer.modulate().unwrap().into_filter4(), 1, 1);
    let [n, c, h, w] = want.shape();
    for s in 0..n {
        for ch in 0..c {
            for y in 0..h {
                for xx in 0..w {
                    let v = want.get(s, ch, y, xx) + layer.bias()[ch];
                    want.set(s, ch, y, xx, v);
                }
            }
        }
    }
    assert_eq!(got.shape(), [2, 12, 9, 9]);
    assert!(max_relative_error(got.data(), want.data()) <= 1e-10);
}

#[test]
fn identity_modulation_reduces_to_plain_convolution() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for (u_count, w, pad, stride) in [(1, 3, 0, 1), (4, 3, 1, 1), (3, 5, 2, 2)] {
        let bank = GaborBank::constant(GaborParams::new(u_count, 1, w), 1.0).unwrap();
        let learned = random_filter(&mut rng, [5, 3, w, w]);
        let mut gof = GofLayer::from_parts(learned.clone(), bank, 1, 1, pad, stride).unwrap();
        let bias = random_vec(&mut rng, 5);
        for (i, b) in gof.bias_mut().iter_mut().enumerate() {
            *b = bias[i / u_count];
        }
        let x = random_tensor(&mut rng, [2, 3, 11, 11]);
        let plain = correlate2d(&x, &learned, pad, stride).unwrap();
        let out = gof.forward(&x).unwrap();
        let [n, m, oh, ow] = plain.shape();
        for s in 0..n {
            for i in 0..m {
                for u in 0..u_count {
                    for y in 0..oh {
                        for xx in 0..ow {
                            let want = plain.get(s, i, y, xx) + bias[i];
                            assert!((out.get(s, i * u_count + u, y, xx) - want).abs() <= 1e-10);
                        }
                    }
                }
            }
        }

        // Copies share one filter, so their output gradients add up.
        let g = random_tensor(&mut rng, out.shape());
        let mut summed = Tensor4::zeros([n, m, oh, ow]);
        for s in 0..n {
            for i in 0..m {
                for u in 0..u_count {
                    for y in 0..oh {
                        for xx in 0..ow {
                            let v = summed.get(s, i, y, xx) + g.get(s, i * u_count + u, y, xx);
                            summed.set(s, i, y, xx, v);
                        }
                    }
                }
            }
        }
        let grads = gof.backward(&x, &g).unwrap();
        let (gx, gw) = correlate2d_backward(&x, &learned, &summed, pad, stride, true).unwrap();
        assert!(max_relative_error(grads.learned.data(), gw.data()) <= 1e-10);
        assert!(max_relative_error(grads.input.unwrap().data(), gx.unwrap().data()) <= 1e-10);
        let gb: Vec<f64> = (0..m)
            .map(|i| {
                (0..n)
                    .flat_map(|s| summed.sample(s)[i * oh * ow..(i + 1) * oh * ow].to_vec())
                    .sum()
            })
            .collect();
        let got_gb: Vec<f64> = (0..m)
            .map(|i| grads.bias[i * u_count..(i + 1) * u_count].iter().sum())
            .collect();
        assert!(max_relative_error(&got_gb, &gb) <= 1e-10);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(50))]

    #[test]
    fn correlate_matches_oracle(
        seed in any::<u64>(),
        n in 1usize..3,
        d in 1usize..4,
        m in 1usize..4,
        k in prop::sample::select(vec![1usize, 3, 5]),
        extra in 0usize..6,
        pad in 0usize..3,
        stride in 1usize..3,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = k + extra;
        let w = k + (extra + 1) % 6;
        let x = random_tensor(&mut rng, [n, d, h, w]);
        let f = random_filter(&mut rng, [m, d, k, k]);
        let got = correlate2d(&x, &f, pad, stride).unwrap();
        let want = oracle_correlate(&x, &f, pad, stride);
        prop_assert_eq!(got.shape(), want.shape());
        prop_assert!(max_relative_error(got.data(), want.data()) <= 1e-10);
    }

    #[test]
    fn correlate_backward_matches_finite_differences(
        seed in any::<u64>(),
        d in 1usize..3,
        m in 1usize..3,
        pad in 0usize..2,
        stride in 1usize..3,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random_tensor(&mut rng, [1, d, 6, 5]);
        let f = random_filter(&mut rng, [m, d, 3, 3]);
        let out = correlate2d(&x, &f, pad, stride).unwrap();
        let r = random_tensor(&mut rng, out.shape());
        let (gx, gw) = correlate2d_backward(&x, &f, &r, pad, stride, true).unwrap();
        let dot = |t: &Tensor4| t.data().iter().zip(r.data()).map(|(a, b)| a * b).sum::<f64>();
        let fd_w = fd_gradient(
            |p| dot(&correlate2d(&x, &Filter4::from_vec(f.shape(), p.to_vec()).unwrap(), pad, stride).unwrap()),
            f.data(),
            1e-5,
        );
        let fd_x = fd_gradient(
            |p| dot(&correlate2d(&Tensor4::from_vec(x.shape(), p.to_vec()).unwrap(), &f, pad, stride).unwrap()),
            x.data(),
            1e-5,
        );
        prop_assert!(max_relative_error(gw.data(), &fd_w) <= 1e-8);
        prop_assert!(max_relative_error(gx.unwrap().data(), &fd_x) <= 1e-8);
    }

    #[test]
    fn gof_backward_matches_finite_differences(
        seed in any::<u64>(),
        u_count in 1usize..5,
        m in 1usize..3,
        in_groups in 1usize..3,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bank = build_bank(GaborParams::new(u_count, 2, 3)).unwrap();
        let d = 2 * in_groups;
        let layer = GofLayer::new(d, in_groups, m, bank.clone(), 2, 1, 1, &mut rng).unwrap();
        let x = random_tensor(&mut rng, [2, d, 5, 5]).with_orient_groups(Some(in_groups)).unwrap();
        let out = layer.forward(&x).unwrap();
        let r = random_tensor(&mut rng, out.shape());
        let grads = layer.backward(&x, &r).unwrap();
        let dot = |t: &Tensor4| t.data().iter().zip(r.data()).map(|(a, b)| a * b).sum::<f64>();
        let fd_c = fd_gradient(
            |p| {
                let c = Filter4::from_vec(layer.learned().shape(), p.to_vec()).unwrap();
                let l = GofLayer::from_parts(c, bank.clone(), 2, in_groups, 1, 1).unwrap();
                dot(&l.forward(&x).unwrap())
            },
            layer.learned().data(),
            1e-5,
        );
        let fd_x = fd_gradient(
            |p| {
                let t = Tensor4::from_vec(x.shape(), p.to_vec()).unwrap()
                    .with_orient_groups(Some(in_groups)).unwrap();
                dot(&layer.forward(&t).unwrap())
            },
            x.data(),
            1e-5,
        );
        prop_assert!(max_relative_error(grads.learned.data(), &fd_c) <= 1e-8);
        prop_assert!(max_relative_error(grads.input.unwrap().data(), &fd_x) <= 1e-8);
    }

    /// Modulating a sum of filters equals summing the modulated filters.
    #[test]
    fn modulation_is_linear_in_learned_filters(seed in any::<u64>(), a in -3.0f64..3.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bank = build_bank(GaborParams::new(4, 4, 3)).unwrap();
        let c1 = random_filter(&mut rng, [2, 4, 3, 3]);
        let c2 = random_filter(&mut rng, [2, 4, 3, 3]);
        let mix: Vec<f64> = c1.data().iter().zip(c2.data()).map(|(p, q)| a * p + q).collect();
        let m = |c: Filter4| GofLayer::from_parts(c, bank.clone(), 3, 4, 0, 1).unwrap().modulate().unwrap();
        let lhs = m(Filter4::from_vec([2, 4, 3, 3], mix).unwrap());
        let (m1, m2) = (m(c1), m(c2));
        let rhs: Vec<f64> = m1.data().iter().zip(m2.data()).map(|(p, q)| a * p + q).collect();
        prop_assert!(max_relative_error(lhs.data(), &rhs) <= 1e-12);
    }
}
