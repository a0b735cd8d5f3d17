mod common;

use common::{random_f32, rng, shape};
use multires::arch::*;
use multires::nn::*;
use multires::ops::{make_bilinear_kernel, transposed_conv2d, upsample_spec, ConvSpec};
use multires::{Shape4, Tensor4};
use proptest::prelude::*;
use rand::Rng;

fn spec() -> BaseSpec {
    BaseSpec::standard(4, 5, Downsampling::Sixteen)
}

fn conv_of(g: &ArchGraph, name: &str) -> ConvSpec {
    match &g.node(g.find(name).unwrap()).kind {
        LayerKind::Conv { spec, .. } => spec.clone(),
        k => panic!("{name} is {k:?}"),
    }
}

#[test]
fn base_fcn_follows_table_rows() {
    let g = build_base_fcn(&spec()).unwrap();
    let rows = [
        ("conv1_1", 5, 32, 2, 2),
        ("conv1_2", 3, 32, 1, 1),
        ("conv2_1", 3, 64, 1, 1),
        ("conv2_2", 3, 64, 1, 1),
        ("conv3_1", 3, 96, 1, 1),
        ("conv3_2", 3, 96, 1, 1),
        ("conv4_1", 3, 128, 1, 1),
        ("conv4_2", 3, 128, 1, 1),
        ("score", 1, 5, 1, 0),
    ];
    for (name, k, f, s, p) in rows {
        let c = conv_of(&g, name);
        assert_eq!((c.kernel, c.out_channels, c.stride, c.padding), ((k, k), f, s, p), "{name}");
        let consumers = g.consumers(g.find(name).unwrap());
        let followed_by_bn = consumers.iter().all(|&c| g.node(c).kind == LayerKind::BatchNorm);
        assert_eq!(followed_by_bn, name != "score", "{name}");
    }
    for pool in ["pool1", "pool2", "pool3"] {
        assert_eq!(g.node(g.find(pool).unwrap()).kind, LayerKind::MaxPool { window: 2 });
    }
    assert!(g.find("pool4").is_none());
    let literal = build_base_fcn(&BaseSpec::standard(4, 5, Downsampling::Literal32)).unwrap();
    assert!(literal.find("pool4").is_some());
    assert_eq!(literal.size_multiple(), 32);
    assert_eq!(g.size_multiple(), 16);
    assert_eq!(g.node(g.find("conv1_1").unwrap()).params.len(), 2);
    let conv1: usize = g.params().iter().filter(|p| p.name.starts_with("conv1_1.") && !p.name.contains(".bn")).map(|p| p.shape.len()).sum();
    assert_eq!(conv1, 5 * 5 * 4 * 32 + 32);
}

#[test]
fn resolution_contract() {
    let g = build_base_fcn(&spec()).unwrap();
    let s = g.infer_shapes(shape(1, 4, 256, 256)).unwrap();
    assert_eq!(s[g.find("score").unwrap()], shape(1, 5, 16, 16));
    assert_eq!(s[g.output()], shape(1, 5, 256, 256));
    for family in Family::ALL {
        let g = build(family, &spec()).unwrap();
        assert_eq!(g.infer_shapes(shape(1, 4, 256, 256)).unwrap()[g.output()], shape(1, 5, 256, 256), "{family}");
        assert_eq!(g.strides()[g.output()], Stride::ONE);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn full_resolution_for_multiples_of_32(h in 1usize..6, w in 1usize..6, n in 1usize..3) {
        for ds in [Downsampling::Sixteen, Downsampling::Literal32] {
            let spec = BaseSpec::standard(4, 5, ds);
            for family in Family::ALL {
                let g = build(family, &spec).unwrap();
                let out = g.infer_shapes(shape(n, 4, 32 * h, 32 * w)).unwrap()[g.output()];
                prop_assert_eq!(out, shape(n, 5, 32 * h, 32 * w));
            }
        }
    }
}

#[test]
fn skip_has_four_score_branches() {
    let g = build_skip(&spec()).unwrap();
    let scores: Vec<&str> = g
        .nodes()
        .iter()
        .filter(|n| matches!(&n.kind, LayerKind::Conv { spec, .. } if spec.kernel == (1, 1)))
        .map(|n| n.name.as_str())
        .collect();
    assert_eq!(scores, ["score1", "score2", "score3", "score"]);
}

#[test]
fn skip_with_silent_fine_branches_is_upsampled_coarse_score() {
    let g = build_skip(&spec()).unwrap();
    let mut p = init_params::<f64>(&g, 3).unwrap();
    for name in ["score1", "score2", "score3"] {
        for suffix in ["weight", "bias"] {
            p.value_mut(&format!("{name}.{suffix}")).unwrap().data_mut().fill(0.0);
        }
    }
    let x = common::random([1, 4, 64, 64], &mut rng(4));
    let acts = forward(&g, &p, &x, Mode::Train).unwrap();
    let mut y = acts.node(g.find("score").unwrap()).unwrap().clone();
    for up in ["up_score4", "up_score3", "up_score2", "up_out"] {
        let w = p.value(&format!("{up}.weight")).unwrap();
        y = transposed_conv2d(&y, w, None, &upsample_spec(2, 5)).unwrap();
    }
    assert_eq!(y.shape(), acts.output().shape());
    assert!(y.max_abs_diff(acts.output()) < 1e-12);
}

#[test]
fn unpooling_mirrors_the_encoder() {
    let g = build_unpooling(&spec()).unwrap();
    assert!(g.find("score").is_none());
    let enc: Vec<&Node> = g.nodes().iter().filter(|n| matches!(n.kind, LayerKind::Conv { .. } | LayerKind::MaxPool { .. })).collect();
    let dec: Vec<&Node> = g.nodes().iter().filter(|n| matches!(n.kind, LayerKind::Deconv { .. } | LayerKind::MaxUnpool { .. })).collect();
    assert_eq!(enc.len(), dec.len());
    // decoder runs the encoder backwards, layer for layer
    for (e, d) in enc.iter().zip(dec.iter().rev()) {
        match (&e.kind, &d.kind) {
            (LayerKind::Conv { spec: c, .. }, LayerKind::Deconv { spec: t, .. }) => {
                assert_eq!(d.name, format!("de{}", e.name));
                assert_eq!((c.kernel, c.stride, c.padding), (t.kernel, t.stride, t.crop));
            }
            (LayerKind::MaxPool { window }, LayerKind::MaxUnpool { pool }) => {
                assert_eq!(g.node(*pool).name, e.name);
                assert_eq!(g.node(*pool).kind, LayerKind::MaxPool { window: *window });
            }
            pair => panic!("{} / {} do not mirror: {pair:?}", e.name, d.name),
        }
    }
    let last = g.node(g.output());
    assert_eq!(last.name, "deconv1_1");
    assert_eq!(last.channels, 5);
    assert_eq!(g.strides()[g.output()], Stride::ONE);
}

#[test]
fn mlp_structure() {
    let g = build_mlp(&spec(), MLP_HIDDEN).unwrap();
    assert!(g.find("score").is_none());
    assert_eq!(g.node(g.find("features").unwrap()).channels, 32 + 64 + 96 + 128);
    assert_eq!(conv_of(&g, "mlp_hidden").out_channels, 1024);
    assert_eq!(conv_of(&g, "mlp_out").kernel, (1, 1));
    let s = g.strides();
    for i in 1..=4 {
        assert_eq!(s[g.find(&format!("up_tap{i}")).unwrap()], s[g.find("features").unwrap()]);
    }
    // the per-pixel stage adds nothing to the receptive field
    let mut rf = RfAnalyzer::new(&g);
    let f = rf.receptive_field(g.find("features").unwrap());
    assert_eq!(rf.receptive_field(g.find("mlp_out").unwrap()), f);
}

#[test]
fn dilation_structure() {
    let g = build_dilation(&spec()).unwrap();
    let d: Vec<usize> = ["conv1_1", "conv1_2", "conv2_1", "conv2_2", "conv3_1", "conv3_2", "conv4_1", "conv4_2"]
        .iter()
        .map(|n| conv_of(&g, n).dilation)
        .collect();
    assert_eq!(d, [1, 1, 2, 2, 4, 4, 8, 8]);
    let fcn = build_base_fcn(&spec()).unwrap();
    let only = |a: &ArchGraph, b: &ArchGraph| -> Vec<String> {
        a.params().iter().filter(|p| !b.params().iter().any(|q| q.name == p.name && q.shape == p.shape)).map(|p| p.name.clone()).collect()
    };
    assert_eq!(only(&g, &fcn), ["up2.weight"]);
    assert_eq!(only(&fcn, &g), ["up16.weight"]);
}

#[test]
fn derived_networks_share_trunk_names() {
    let fcn = build_base_fcn(&spec()).unwrap();
    for family in [Family::Skip, Family::Mlp, Family::Unpool, Family::Dilation] {
        let g = build(family, &spec()).unwrap();
        let trunk: Vec<_> = g.params().iter().filter(|p| p.trunk).collect();
        assert_eq!(trunk.len(), 32, "{family}");
        for p in trunk {
            let base = fcn.params().iter().find(|q| q.name == p.name).unwrap_or_else(|| panic!("{family}: {}", p.name));
            assert_eq!(base.shape, p.shape);
        }
    }
}

#[test]
fn half_resolution_wrapper() {
    let g = wrap_half_resolution(&build_mlp(&spec(), 64).unwrap()).unwrap();
    let s = g.infer_shapes(shape(1, 4, 128, 128)).unwrap();
    assert_eq!(s[g.find("input_down").unwrap()], shape(1, 4, 64, 64));
    assert_eq!(s[g.output()], shape(1, 5, 128, 128));
    assert_eq!(g.node(g.output()).name, "output_up");
    assert_eq!(g.size_multiple(), 32);
    let p = init_params::<f32>(&g, 0).unwrap();
    let out = forward(&g, &p, &random_f32([1, 4, 64, 64], &mut rng(1)), Mode::Train).unwrap();
    assert_eq!(out.output().shape(), shape(1, 5, 64, 64));
}

/// `r += (k - 1) * d * j; j *= s` along a chain of layers.
fn standard_rf(layers: &[(usize, usize, usize)]) -> usize {
    let (mut r, mut j) = (1, 1);
    for &(k, s, d) in layers {
        r += (k - 1) * d * j;
        j *= s;
    }
    r
}

fn chain(g: &ArchGraph, upto: &str) -> Vec<(usize, usize, usize)> {
    let stop = g.find(upto).unwrap();
    let mut out = Vec::new();
    for &id in g.order() {
        match &g.node(id).kind {
            LayerKind::Conv { spec, .. } => out.push((spec.kernel.0, spec.stride, spec.dilation)),
            LayerKind::MaxPool { window } => out.push((*window, *window, 1)),
            LayerKind::DilatedMaxPool { window, dilation } => out.push((*window, 1, *dilation)),
            _ => {}
        }
        if id == stop {
            break;
        }
    }
    out
}

#[test]
fn receptive_field_matches_standard_formula() {
    for family in [Family::Fcn, Family::Dilation] {
        let g = build(family, &spec()).unwrap();
        let mut rf = RfAnalyzer::new(&g);
        for name in ["conv1_1", "conv1_2", "pool1", "conv2_2", "pool2", "conv3_2", "conv4_2", "score"] {
            let id = g.find(name).unwrap();
            assert_eq!(rf.receptive_field(id), standard_rf(&chain(&g, name)), "{family} {name}");
        }
        assert_eq!(rf.receptive_field(g.find("score").unwrap()), 135);
    }
    let two = |k| {
        let mut b = GraphBuilder::new(1);
        let x = b.input();
        let a = b.conv("a", x, ConvSpec::new(k, 1).padding(k / 2), false).unwrap();
        let c = b.conv("b", a, ConvSpec::new(k, 1).padding(k / 2), false).unwrap();
        b.finish(c, Family::Custom, 1).unwrap()
    };
    let g = two(3);
    let mut rf = RfAnalyzer::new(&g);
    assert_eq!(rf.receptive_field(g.find("a").unwrap()), 3);
    assert_eq!(rf.receptive_field(g.find("b").unwrap()), 5);
}

/// Parameters and statistics under which every activation is positive, so a
/// `+inf` input pixel marks exactly the outputs that depend on it.
fn positive_probe(g: &ArchGraph) -> ParamStore<f32> {
    let mut p = init_params::<f32>(g, 5).unwrap();
    for (_, e) in p.iter_mut() {
        for v in e.value.data_mut() {
            *v = v.abs() + 0.01;
        }
    }
    let nodes: Vec<String> = p.running_iter().map(|(n, _)| n.to_string()).collect();
    for n in nodes {
        let c = p.running(&n).unwrap().mean.len();
        p.insert_running(&n, RunningStats::fixed(vec![0.0; c], vec![1.0; c]));
    }
    p
}

/// Per node and column, the lowest and highest input column whose
/// perturbation changes it, from one probe per input column.
fn perturbation_intervals(g: &ArchGraph, width: usize) -> Vec<Vec<Option<(i64, i64)>>> {
    let p = positive_probe(g);
    let h = g.size_multiple();
    let mut r = rng(6);
    let base = Tensor4::from_fn(shape(1, g.in_channels(), h, width), |_, _, _, _| r.random_range(0.1f32..1.0));
    let reference = forward(g, &p, &base, Mode::Infer).unwrap();
    let mut found: Vec<Vec<Option<(i64, i64)>>> = g
        .nodes()
        .iter()
        .enumerate()
        .map(|(id, _)| vec![None; reference.node(id).unwrap().shape().w])
        .collect();
    let batch = 16;
    for first in (0..width).step_by(batch) {
        let cols: Vec<usize> = (first..(first + batch).min(width)).collect();
        let mut x = Tensor4::zeros(Shape4::new(cols.len(), g.in_channels(), h, width).unwrap());
        for (n, &col) in cols.iter().enumerate() {
            x.sample_mut(n).copy_from_slice(base.sample(0));
            x.set(n, 0, h / 2, col, f32::INFINITY);
        }
        let acts = forward(g, &p, &x, Mode::Infer).unwrap();
        for (id, slots) in found.iter_mut().enumerate() {
            let before = reference.node(id).unwrap();
            let after = acts.node(id).unwrap();
            let s = before.shape();
            for (n, &col) in cols.iter().enumerate() {
                for (q, slot) in slots.iter_mut().enumerate() {
                    let changed = (0..s.c).any(|c| (0..s.h).any(|y| after.at(n, c, y, q).to_bits() != before.at(0, c, y, q).to_bits()));
                    if changed {
                        let i = col as i64;
                        *slot = Some(slot.map_or((i, i), |(lo, hi)| (lo.min(i), hi.max(i))));
                    }
                }
            }
        }
    }
    found
}

/// Nodes downstream of a max-unpool: there a value only reaches the argmax
/// position, so actual dependence can be narrower than the analyzer's
/// data-independent interval.
fn after_unpool(g: &ArchGraph) -> Vec<bool> {
    let mut tainted = vec![false; g.nodes().len()];
    for &id in g.order() {
        let n = g.node(id);
        tainted[id] = matches!(n.kind, LayerKind::MaxUnpool { .. }) || n.inputs.iter().any(|&i| tainted[i]);
    }
    tainted
}

#[test]
fn analyzer_matches_perturbation_oracle() {
    for (family, width) in [
        (Family::Fcn, 256),
        (Family::Skip, 256),
        (Family::Mlp, 256),
        (Family::Dilation, 224),
        (Family::Unpool, 384),
    ] {
        let g = build(family, &spec()).unwrap();
        let oracle = perturbation_intervals(&g, width);
        let tainted = after_unpool(&g);
        let mut rf = RfAnalyzer::new(&g);
        let mut compared = 0;
        for (id, cols) in oracle.iter().enumerate() {
            let name = &g.node(id).name;
            let mut widest = 0;
            for (q, got) in cols.iter().enumerate() {
                let Some(want) = rf.interval(id, q as i64) else { continue };
                if want.lo < 0 || want.hi >= width as i64 {
                    continue;
                }
                if tainted[id] {
                    let (lo, hi) = got.unwrap_or_else(|| panic!("{family} {name} column {q} depends on nothing"));
                    assert!(want.lo <= lo && hi <= want.hi, "{family} {name} column {q}: {lo}..{hi} outside {want:?}");
                } else {
                    assert_eq!(*got, Some((want.lo, want.hi)), "{family} {name} column {q}");
                    widest = widest.max(want.len());
                }
                compared += 1;
            }
            if id != g.input() && widest > 0 {
                assert_eq!(widest as usize, rf.receptive_field(id), "{family} {name}");
            }
        }
        assert!(compared > 0);
        // halo: furthest dependence of any interior output pixel
        let out = &oracle[g.output()];
        let halo = (0..width)
            .filter_map(|u| {
                let (lo, hi) = out[u]?;
                (lo > 0 && hi < width as i64 - 1).then(|| (u as i64 - lo).max(hi - u as i64))
            })
            .max()
            .unwrap() as usize;
        if tainted[g.output()] {
            assert!(halo <= rf.halo(), "{family}: {halo} > {}", rf.halo());
        } else {
            assert_eq!(halo, rf.halo(), "{family}");
        }
    }
}

#[test]
fn report_lists_layers_and_totals() {
    let g = build_base_fcn(&spec()).unwrap();
    let r = analyze(&g, shape(1, 4, 256, 256)).unwrap();
    assert_eq!(r.total_downsampling, 16);
    assert_eq!(r.param_count, g.param_count());
    let conv1 = r.layers.iter().find(|l| l.name == "conv1_1").unwrap();
    assert_eq!((conv1.receptive_field, conv1.params, conv1.channels), (5, 3232, 32));
    assert_eq!(conv1.activation_bytes, 32 * 128 * 128 * 4);
    let text = r.to_text();
    assert!(text.contains("total downsampling: 16"));
    let csv = r.to_csv();
    assert!(csv.starts_with("layer,kind,rf,stride,channels,params,activation_bytes\n"));
    assert_eq!(csv.lines().count(), g.nodes().len() + 1);
    assert_eq!(r.halo, RfAnalyzer::new(&g).halo());
}

#[test]
fn bilinear_output_layer_initialised() {
    let g = build_base_fcn(&spec()).unwrap();
    let p = init_params::<f32>(&g, 0).unwrap();
    assert!(p.value("up16.weight").unwrap().bit_eq(&make_bilinear_kernel::<f32>(16, 5).unwrap()));
}
