//! The dilation network against a shift-and-stitch evaluation of the base
//! FCN's layers, built from the plain ops.

use multires::arch::{build_dilation, BaseSpec, Downsampling, Row};
use multires::nn::{
    batchnorm_forward, forward, init_params, relu_forward, BnMode, Mode, ParamStore,
    RunningStats, BN_EPS,
};
use multires::ops::{conv2d, maxpool2d, ConvSpec};
use multires::{Shape4, Tensor4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn conv_bn_relu(p: &ParamStore<f32>, name: &str, x: &Tensor4<f32>, spec: &ConvSpec) -> Tensor4<f32> {
    let w = p.value(&format!("{name}.weight")).unwrap();
    let b = p.value(&format!("{name}.bias")).unwrap();
    let y = conv2d(x, w, Some(b.data()), spec).unwrap();
    let bn = format!("{name}.bn");
    let g = p.value(&format!("{bn}.gamma")).unwrap();
    let be = p.value(&format!("{bn}.beta")).unwrap();
    let stats = p.running(&bn).unwrap();
    let (y, _) =
        batchnorm_forward(&y, g.data(), be.data(), BN_EPS, BnMode::Infer(stats)).unwrap();
    relu_forward(&y)
}

/// `x` moved up/left by `(by, bx)`, the vacated bottom/right cells set to -inf.
fn shift(x: &Tensor4<f32>, by: usize, bx: usize) -> Tensor4<f32> {
    let s = x.shape();
    Tensor4::from_fn(s, |n, c, y, xx| {
        if y + by < s.h && xx + bx < s.w {
            x.at(n, c, y + by, xx + bx)
        } else {
            f32::NEG_INFINITY
        }
    })
}

/// Runs rows `i..` of the undilated trunk and the score layer; at every pool
/// it evaluates all four 2-D shifts and interleaves the four results.
fn stitch(p: &ParamStore<f32>, rows: &[Row], x: Tensor4<f32>, n_classes: usize) -> Tensor4<f32> {
    let Some((row, rest)) = rows.split_first() else {
        let w = p.value("score.weight").unwrap();
        let b = p.value("score.bias").unwrap();
        return conv2d(&x, w, Some(b.data()), &ConvSpec::new(1, n_classes)).unwrap();
    };
    match row {
        Row::Conv { name, kernel, filters, padding, .. } => {
            let spec = ConvSpec::new(*kernel, *filters).padding(*padding);
            let y = conv_bn_relu(p, name, &x, &spec);
            stitch(p, rest, y, n_classes)
        }
        Row::Pool { window, .. } => {
            assert_eq!(*window, 2);
            let s = x.shape();
            let mut out = Tensor4::zeros(Shape4::new(s.n, n_classes, s.h, s.w).unwrap());
            for by in 0..2 {
                for bx in 0..2 {
                    let (pooled, _) = maxpool2d(&shift(&x, by, bx), 2).unwrap();
                    let part = stitch(p, rest, pooled, n_classes);
                    let ps = part.shape();
                    for n in 0..ps.n {
                        for c in 0..ps.c {
                            for q in 0..ps.h {
                                for r in 0..ps.w {
                                    out.set(n, c, 2 * q + by, 2 * r + bx, part.at(n, c, q, r));
                                }
                            }
                        }
                    }
                }
            }
            out
        }
    }
}

fn params_with_stats(graph: &multires::nn::ArchGraph, seed: u64) -> ParamStore<f32> {
    let mut p = init_params::<f32>(graph, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 1);
    let names: Vec<String> = p.running_iter().map(|(n, _)| n.to_string()).collect();
    for name in names {
        let c = p.running(&name).unwrap().mean.len();
        let mean = (0..c).map(|_| rng.random_range(-0.5..0.5)).collect();
        let var = (0..c).map(|_| rng.random_range(0.5..2.0)).collect();
        p.insert_running(&name, RunningStats::fixed(mean, var));
    }
    p
}

fn check(downsampling: Downsampling, size: usize, seed: u64) {
    let spec = BaseSpec::standard(4, 5, downsampling);
    let graph = build_dilation(&spec).unwrap();
    let p = params_with_stats(&graph, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 2);
    let x = Tensor4::from_fn(Shape4::new(1, 4, size, size).unwrap(), |_, _, _, _| rng.random::<f32>());

    let acts = forward(&graph, &p, &x, Mode::Infer).unwrap();
    let dense = acts.node(graph.find("score").unwrap()).unwrap();

    let Row::Conv { name, kernel, filters, stride, padding } = &spec.rows[0] else {
        unreachable!()
    };
    let first = ConvSpec::new(*kernel, *filters).stride(*stride).padding(*padding);
    let y = conv_bn_relu(&p, name, &x, &first);
    let stitched = stitch(&p, &spec.rows[1..], y, 5);

    assert_eq!(dense.shape(), stitched.shape());
    assert!(
        dense.bit_eq(&stitched),
        "max difference {}",
        dense.max_abs_diff(&stitched)
    );
}

#[test]
fn dilation_equals_shift_and_stitch_64() {
    check(Downsampling::Sixteen, 64, 11);
}

#[test]
fn dilation_equals_shift_and_stitch_rectangular_seeds() {
    check(Downsampling::Sixteen, 32, 3);
    check(Downsampling::Literal32, 64, 5);
}
