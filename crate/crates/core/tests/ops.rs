mod common;

use common::{assert_close, direct_conv, random, rel_close, rng, shape};
use multires::ops::*;
use multires::{Shape4, Tensor4};
use proptest::prelude::*;
use rand::Rng;

#[test]
fn zero_dimension_rejected() {
    assert!(Shape4::new(1, 0, 4, 4).is_err());
    assert!(Tensor4::<f32>::from_vec(shape(1, 1, 2, 2), vec![0.0; 3]).is_err());
}

#[test]
fn strided_padded_conv_matches_direct_loops() {
    let mut r = rng(1);
    let x = random([1, 2, 5, 5], &mut r);
    let w = random([3, 2, 3, 3], &mut r);
    let b = [0.1, -0.2, 0.3];
    let got = conv2d(&x, &w, Some(&b), &ConvSpec::new(3, 3).stride(2).padding(1)).unwrap();
    assert_close(&got, &direct_conv(&x, &w, Some(&b), 2, 1, 1), 1e-6);
}

#[test]
fn output_size_with_dilation() {
    assert_eq!(ConvSpec::new(3, 1).dilation(4).output_size(13, 13).unwrap(), (5, 5));
    assert!(ConvSpec::new(3, 1).dilation(4).output_size(8, 8).is_err());
}

#[test]
fn transposed_conv_adjoint_random_trials() {
    let mut r = rng(2);
    for trial in 0..100 {
        let k = r.random_range(1..6);
        let s = r.random_range(1..4);
        let p = r.random_range(0..=k / 2);
        let h = r.random_range(k.max(2)..12);
        let (cin, cout) = (r.random_range(1..4), r.random_range(1..4));
        let spec = ConvSpec::new(k, cout).stride(s).padding(p);
        let x = random([2, cin, h, h], &mut r);
        let w = random([cout, cin, k, k], &mut r);
        let cx = conv2d(&x, &w, None, &spec).unwrap();
        let y = random(cx.shape().dims(), &mut r);
        let dspec = DeconvSpec::new(k, s, p, cin).extra((h + 2 * p - k) % s);
        let t = transposed_conv2d(&y, &w, None, &dspec).unwrap();
        assert_eq!(t.shape(), x.shape());
        let (lhs, rhs) = (cx.dot(&y).unwrap(), x.dot(&t).unwrap());
        assert!(rel_close(lhs, rhs, 1e-5), "trial {trial}: {lhs} vs {rhs}");
    }
}

#[test]
fn transposed_conv_pointwise_identity() {
    let x = random([1, 3, 4, 5], &mut rng(3));
    let mut w = Tensor4::zeros(shape(3, 3, 1, 1));
    for c in 0..3 {
        w.set(c, c, 0, 0, 1.0);
    }
    let y = transposed_conv2d(&x, &w, None, &DeconvSpec::new(1, 1, 0, 3)).unwrap();
    assert!(y.bit_eq(&x));
}

/// Half-pixel-centred linear interpolation of one row, clamped reads.
fn interpolate(row: &[f64], factor: usize, u: usize) -> f64 {
    let t = (u as f64 + 0.5) / factor as f64 - 0.5;
    let i = t.floor();
    let f = t - i;
    let at = |k: f64| row[(k.max(0.0) as usize).min(row.len() - 1)];
    (1.0 - f) * at(i) + f * at(i + 1.0)
}

#[test]
fn bilinear_deconv_interpolates_a_ramp() {
    let (h, w) = (6, 7);
    let x = Tensor4::from_fn(shape(1, 1, h, w), |_, _, y, x| 0.3 * y as f64 - 1.7 * x as f64 + 2.0);
    let k = make_bilinear_kernel::<f64>(2, 1).unwrap();
    assert_eq!(k.shape(), shape(1, 1, 4, 4));
    let up = transposed_conv2d(&x, &k, None, &upsample_spec(2, 1)).unwrap();
    assert_eq!(up.shape(), shape(1, 1, 2 * h, 2 * w));
    for y in 1..2 * h - 1 {
        for xx in 1..2 * w - 1 {
            let rows: Vec<f64> = (0..h).map(|r| interpolate(&x.plane(0, 0)[r * w..][..w], 2, xx)).collect();
            let want = interpolate(&rows, 2, y);
            assert!((up.at(0, 0, y, xx) - want).abs() < 1e-6, "({y},{xx})");
        }
    }
}

#[test]
fn bilinear_deconv_interpolates_random_interior() {
    let x = random([1, 1, 5, 5], &mut rng(4));
    for f in [2, 4] {
        let k = make_bilinear_kernel::<f64>(f, 1).unwrap();
        let up = transposed_conv2d(&x, &k, None, &upsample_spec(f, 1)).unwrap();
        for y in f..4 * f {
            for xx in f..4 * f {
                let rows: Vec<f64> = (0..5).map(|r| interpolate(&x.plane(0, 0)[r * 5..][..5], f, xx)).collect();
                assert!((up.at(0, 0, y, xx) - interpolate(&rows, f, y)).abs() < 1e-9);
            }
        }
    }
}

/// Acceptance-style exhaustive window checks for both unpooling kinds.
#[test]
fn unpooling_semantics_on_random_windows() {
    let mut r = rng(5);
    for _ in 0..1000 {
        let k = r.random_range(2..5);
        let x = random([1, 1, k, k], &mut r);
        let (p, idx) = maxpool2d(&x, k).unwrap();
        let u = max_unpool2d(&p, &idx, x.shape()).unwrap();
        let (best, _) = x
            .data()
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) });
        for (i, &v) in u.data().iter().enumerate() {
            if i == best {
                assert_eq!(v, x.data()[best]);
            } else {
                assert_eq!(v.to_bits(), 0.0f64.to_bits());
            }
        }
        let a = avg_unpool2d(&p, k).unwrap();
        assert!(a.data().iter().all(|&v| v == p.data()[0] / (k * k) as f64));
    }
}

#[test]
fn bit_identical_repeats() {
    let mut r = rng(6);
    let x = random([2, 3, 9, 9], &mut r).cast::<f32>();
    let w = random([4, 3, 3, 3], &mut r).cast::<f32>();
    let spec = ConvSpec::new(3, 4).padding(2).dilation(2);
    let a = conv2d(&x, &w, None, &spec).unwrap();
    let b = conv2d(&x, &w, None, &spec).unwrap();
    assert!(a.bit_eq(&b));
    let y = random(a.shape().dims(), &mut r).cast::<f32>();
    let g1 = conv2d_backward(&x, &w, &y, &spec).unwrap();
    let g2 = conv2d_backward(&x, &w, &y, &spec).unwrap();
    assert!(g1.dx.bit_eq(&g2.dx) && g1.dw.bit_eq(&g2.dw));
}

fn conv_case() -> impl Strategy<Value = (usize, usize, usize, usize, usize, u64)> {
    // kernel, stride, padding, dilation, size, seed
    (1usize..4, 1usize..3, 0usize..3, 1usize..3, 6usize..10, any::<u64>())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn conv_matches_direct_oracle((k, s, p, d, h, seed) in conv_case()) {
        let mut r = rng(seed);
        let x = random([2, 2, h, h + 1], &mut r);
        let w = random([3, 2, k, k], &mut r);
        let b = [0.5, -0.25, 1.0];
        let got = conv2d(&x, &w, Some(&b), &ConvSpec::new(k, 3).stride(s).padding(p).dilation(d)).unwrap();
        assert_close(&got, &direct_conv(&x, &w, Some(&b), s, p, d), 1e-10);
    }

    #[test]
    fn conv_is_linear((k, s, p, d, h, seed) in conv_case(), a in -2.0f64..2.0, b in -2.0f64..2.0) {
        let mut r = rng(seed);
        let spec = ConvSpec::new(k, 2).stride(s).padding(p).dilation(d);
        let x = random([1, 3, h, h], &mut r);
        let y = random([1, 3, h, h], &mut r);
        let w = random([2, 3, k, k], &mut r);
        let mut mix = x.clone();
        mix.scale(a);
        let mut yb = y.clone();
        yb.scale(b);
        mix.add_assign(&yb).unwrap();
        let lhs = conv2d(&mix, &w, None, &spec).unwrap();
        let mut rhs = conv2d(&x, &w, None, &spec).unwrap();
        rhs.scale(a);
        let mut cy = conv2d(&y, &w, None, &spec).unwrap();
        cy.scale(b);
        rhs.add_assign(&cy).unwrap();
        assert_close(&lhs, &rhs, 1e-6);
        // and linear in the weights
        let w2 = random([2, 3, k, k], &mut r);
        let mut ws = w.clone();
        ws.add_assign(&w2).unwrap();
        let mut sep = conv2d(&x, &w, None, &spec).unwrap();
        sep.add_assign(&conv2d(&x, &w2, None, &spec).unwrap()).unwrap();
        assert_close(&conv2d(&x, &ws, None, &spec).unwrap(), &sep, 1e-6);
    }

    #[test]
    fn conv_translation_equivariance(k in 1usize..4, s in 1usize..3, seed in any::<u64>()) {
        let mut r = rng(seed);
        let h = 12;
        let x = random([1, 2, h + s, h + s], &mut r);
        let w = random([2, 2, k, k], &mut r);
        let spec = ConvSpec::new(k, 2).stride(s);
        let full = conv2d(&x, &w, None, &spec).unwrap();
        let shifted = conv2d(&x.crop(s, s, h, h).unwrap(), &w, None, &spec).unwrap();
        let ss = shifted.shape();
        for c in 0..2 {
            for y in 0..ss.h {
                for xx in 0..ss.w {
                    prop_assert_eq!(shifted.at(0, c, y, xx), full.at(0, c, y + 1, xx + 1));
                }
            }
        }
    }

    #[test]
    fn max_unpool_round_trip(k in 2usize..4, cells in 1usize..4, seed in any::<u64>()) {
        let mut r = rng(seed);
        let x = random([2, 2, k * cells, k * cells], &mut r);
        let (p, idx) = maxpool2d(&x, k).unwrap();
        for &o in idx.offsets() {
            prop_assert!((o as usize) < k * k);
        }
        let u = max_unpool2d(&p, &idx, x.shape()).unwrap();
        prop_assert!((u.sum() - p.sum()).abs() < 1e-9);
        let s = x.shape();
        for n in 0..s.n {
            for c in 0..s.c {
                for oy in 0..cells {
                    for ox in 0..cells {
                        let nonzero: Vec<(usize, usize)> = (0..k * k)
                            .map(|j| (oy * k + j / k, ox * k + j % k))
                            .filter(|&(y, xx)| u.at(n, c, y, xx) != 0.0)
                            .collect();
                        prop_assert_eq!(nonzero.len(), 1);
                        let (y, xx) = nonzero[0];
                        prop_assert_eq!(u.at(n, c, y, xx), x.at(n, c, y, xx));
                        prop_assert_eq!(x.at(n, c, y, xx), p.at(n, c, oy, ox));
                    }
                }
            }
        }
    }

    #[test]
    fn avg_unpool_conserves_sum(k in 1usize..5, seed in any::<u64>()) {
        let p = random([1, 3, 3, 4], &mut rng(seed));
        let u = avg_unpool2d(&p, k).unwrap();
        prop_assert_eq!(u.shape(), shape(1, 3, 3 * k, 4 * k));
        prop_assert!((u.sum() - p.sum()).abs() < 1e-9);
    }

    #[test]
    fn concat_backward_splits_exactly(a in 1usize..4, b in 1usize..4, seed in any::<u64>()) {
        let mut r = rng(seed);
        let x = random([2, a, 3, 3], &mut r);
        let y = random([2, b, 3, 3], &mut r);
        let cat = concat_channels(&[&x, &y]).unwrap();
        let parts = split_channels(&cat, &[a, b]).unwrap();
        prop_assert!(parts[0].bit_eq(&x) && parts[1].bit_eq(&y));
    }
}
