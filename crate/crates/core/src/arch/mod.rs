//! The base FCN trunk and the networks derived from it.

mod analyze;

pub use analyze::{analyze, AnalysisReport, Interval, LayerInfo, RfAnalyzer};

use crate::error::{Error, Result};
use crate::nn::graph::{ArchGraph, Family, GraphBuilder, LayerKind, Node, NodeId};
use crate::ops::{ConvSpec, DeconvSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Downsampling {
    /// Conv-1_1 stride 2 and three pools; no Pool_4.
    #[default]
    Sixteen,
    /// Every row of the table, Pool_4 included.
    Literal32,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Row {
    Conv {
        name: String,
        kernel: usize,
        filters: usize,
        stride: usize,
        padding: usize,
    },
    Pool {
        name: String,
        window: usize,
    },
}

/// The trunk rows of the base FCN, followed by a 1x1 score convolution.
#[derive(Debug, Clone, PartialEq)]
pub struct BaseSpec {
    pub in_channels: usize,
    pub n_classes: usize,
    pub rows: Vec<Row>,
}

fn conv_row(name: &str, kernel: usize, filters: usize, stride: usize, padding: usize) -> Row {
    Row::Conv {
        name: name.into(),
        kernel,
        filters,
        stride,
        padding,
    }
}

fn pool_row(name: &str) -> Row {
    Row::Pool {
        name: name.into(),
        window: 2,
    }
}

impl BaseSpec {
    pub fn standard(in_channels: usize, n_classes: usize, downsampling: Downsampling) -> Self {
        let mut rows = vec![
            conv_row("conv1_1", 5, 32, 2, 2),
            conv_row("conv1_2", 3, 32, 1, 1),
            pool_row("pool1"),
            conv_row("conv2_1", 3, 64, 1, 1),
            conv_row("conv2_2", 3, 64, 1, 1),
            pool_row("pool2"),
            conv_row("conv3_1", 3, 96, 1, 1),
            conv_row("conv3_2", 3, 96, 1, 1),
            pool_row("pool3"),
            conv_row("conv4_1", 3, 128, 1, 1),
            conv_row("conv4_2", 3, 128, 1, 1),
        ];
        if downsampling == Downsampling::Literal32 {
            rows.push(pool_row("pool4"));
        }
        BaseSpec {
            in_channels,
            n_classes,
            rows,
        }
    }

    /// Keeps the first `blocks` resolution blocks (a block ends at its last
    /// convolution before a pool).
    pub fn truncated(&self, blocks: usize) -> Result<Self> {
        if blocks == 0 || blocks > self.blocks() {
            return Err(Error::InvalidArgument(format!(
                "cannot keep {blocks} blocks of a {}-block trunk",
                self.blocks()
            )));
        }
        let mut rows = Vec::new();
        let mut pools = 0;
        for r in &self.rows {
            if let Row::Pool { .. } = r {
                pools += 1;
                if pools == blocks {
                    break;
                }
            }
            rows.push(r.clone());
        }
        Ok(BaseSpec {
            rows,
            ..self.clone()
        })
    }

    /// Number of resolution blocks, i.e. runs of convolutions between pools.
    pub fn blocks(&self) -> usize {
        let mut n = 0;
        let mut open = false;
        for r in &self.rows {
            match r {
                Row::Conv { .. } if !open => {
                    n += 1;
                    open = true;
                }
                Row::Pool { .. } => open = false,
                _ => {}
            }
        }
        n
    }

    /// Product of all strides and pooling windows.
    pub fn total_stride(&self) -> usize {
        self.rows
            .iter()
            .map(|r| match r {
                Row::Conv { stride, .. } => *stride,
                Row::Pool { window, .. } => *window,
            })
            .product()
    }

    /// Names of the last convolution of each block, finest first.
    pub fn tap_names(&self) -> Vec<String> {
        let mut taps = Vec::new();
        for (i, r) in self.rows.iter().enumerate() {
            if let Row::Conv { name, .. } = r {
                let last = !matches!(self.rows.get(i + 1), Some(Row::Conv { .. }));
                if last {
                    taps.push(name.clone());
                }
            }
        }
        taps
    }

    pub fn downsampling(&self) -> Downsampling {
        if self.total_stride() == 32 {
            Downsampling::Literal32
        } else {
            Downsampling::Sixteen
        }
    }
}

struct Trunk {
    /// ReLU outputs of each block's last convolution, finest first.
    taps: Vec<NodeId>,
    /// Output of the final trunk row.
    last: NodeId,
    /// Encoder rows in order, with the node they produced and their input
    /// channel count.
    layers: Vec<(Row, NodeId, usize)>,
}

/// Builds the trunk. With `dilated`, every pool after the first layer keeps
/// the resolution (stride-1 dilated pooling) and later convolutions dilate
/// by the product of the removed strides.
fn trunk(b: &mut GraphBuilder, spec: &BaseSpec, dilated: bool, upto_last_conv: bool) -> Result<Trunk> {
    b.set_trunk(true);
    let mut x = b.input();
    let mut d = 1;
    let mut layers = Vec::new();
    let mut taps = Vec::new();
    let tap_names = spec.tap_names();
    let last_conv = spec
        .rows
        .iter()
        .rposition(|r| matches!(r, Row::Conv { .. }))
        .ok_or_else(|| Error::InvalidArgument("trunk has no convolution".into()))?;
    for (i, row) in spec.rows.iter().enumerate() {
        if upto_last_conv && i > last_conv {
            break;
        }
        let cin = b.channels(x);
        match row {
            Row::Conv {
                name,
                kernel,
                filters,
                stride,
                padding,
            } => {
                let mut cs = ConvSpec::new(*kernel, *filters)
                    .stride(*stride)
                    .padding(padding * d)
                    .dilation(d);
                if dilated && i > 0 && *stride > 1 {
                    cs = cs.stride(1);
                }
                x = b.conv_bn_relu(name, x, cs)?;
                if tap_names.contains(name) {
                    taps.push(x);
                }
                if dilated && i > 0 && *stride > 1 {
                    d *= stride;
                }
            }
            Row::Pool { name, window } => {
                x = if dilated {
                    let p = b.dilated_maxpool(name, x, *window, d)?;
                    d *= window;
                    p
                } else {
                    b.maxpool(name, x, *window)?
                };
            }
        }
        layers.push((row.clone(), x, cin));
    }
    b.set_trunk(false);
    Ok(Trunk {
        taps,
        last: x,
        layers,
    })
}

fn score(b: &mut GraphBuilder, name: &str, x: NodeId, n_classes: usize) -> Result<NodeId> {
    b.conv(name, x, ConvSpec::new(1, n_classes), true)
}

/// The standard trunk with batch norm and ReLU after every convolution but
/// the score layer, and a bilinear-initialized learnable deconvolution back
/// to full resolution.
pub fn build_base_fcn(spec: &BaseSpec) -> Result<ArchGraph> {
    let mut b = GraphBuilder::new(spec.in_channels);
    let t = trunk(&mut b, spec, false, false)?;
    let s = score(&mut b, "score", t.last, spec.n_classes)?;
    let f = spec.total_stride();
    let up = b.upsample_learned(&format!("up{f}"), s, f)?;
    b.finish(up, Family::Fcn, spec.n_classes)
}

/// Score maps from every block's last convolution, merged coarse to fine
/// by learnable x2 upsampling and addition, then upsampled to full
/// resolution. The coarsest branch reuses the base network's `score` layer.
pub fn build_skip(spec: &BaseSpec) -> Result<ArchGraph> {
    let mut b = GraphBuilder::new(spec.in_channels);
    let t = trunk(&mut b, spec, false, true)?;
    let k = t.taps.len();
    let mut scores = Vec::with_capacity(k);
    for (i, &tap) in t.taps.iter().enumerate() {
        let name = if i + 1 == k {
            "score".to_string()
        } else {
            format!("score{}", i + 1)
        };
        scores.push(score(&mut b, &name, tap, spec.n_classes)?);
    }
    let mut acc = scores[k - 1];
    for i in (0..k - 1).rev() {
        let up = b.upsample_learned(&format!("up_score{}", i + 2), acc, 2)?;
        acc = b.add(&format!("fuse{}", i + 1), &[up, scores[i]])?;
    }
    let first_stride = first_stride(spec);
    let out = b.upsample_learned("up_out", acc, first_stride)?;
    b.finish(out, Family::Skip, spec.n_classes)
}

fn first_stride(spec: &BaseSpec) -> usize {
    match spec.rows.first() {
        Some(Row::Conv { stride, .. }) => *stride,
        _ => 1,
    }
}

/// Mirrors the trunk (without the score layer): max unpooling wired to each
/// pool, and a transposed convolution with the same kernel, stride and
/// padding for each convolution. The last decoder layer emits class scores
/// and has no batch norm or ReLU.
pub fn build_unpooling(spec: &BaseSpec) -> Result<ArchGraph> {
    let mut b = GraphBuilder::new(spec.in_channels);
    let t = trunk(&mut b, spec, false, false)?;
    let mut x = t.last;
    for (i, (row, node, cin)) in t.layers.iter().enumerate().rev() {
        let last = i == 0;
        match row {
            Row::Pool { name, .. } => {
                let un = name.replacen("pool", "unpool", 1);
                x = b.max_unpool(&un, x, *node)?;
            }
            Row::Conv {
                name,
                kernel,
                stride,
                padding,
                ..
            } => {
                let out_c = if last { spec.n_classes } else { *cin };
                // the extra border restores sizes lost to the forward floor
                let extra = (2 * padding + stride - kernel % stride) % stride;
                let ds = DeconvSpec::new(*kernel, *stride, *padding, out_c).extra(extra);
                let dn = format!("de{name}");
                if last {
                    x = b.deconv(&dn, x, ds, true, false)?;
                } else {
                    let c = b.deconv(&dn, x, ds, true, false)?;
                    let bn = b.batchnorm(&format!("{dn}.bn"), c)?;
                    x = b.relu(&format!("{dn}.relu"), bn)?;
                }
            }
        }
    }
    b.finish(x, Family::Unpool, spec.n_classes)
}

/// Features of every block's last convolution, upsampled to the finest
/// tap's resolution by learnable bilinear-initialized deconvolutions,
/// concatenated, and classified per pixel by a one-hidden-layer MLP of 1x1
/// convolutions.
pub fn build_mlp(spec: &BaseSpec, hidden: usize) -> Result<ArchGraph> {
    let mut b = GraphBuilder::new(spec.in_channels);
    let t = trunk(&mut b, spec, false, true)?;
    let mut ups = Vec::with_capacity(t.taps.len());
    for (i, &tap) in t.taps.iter().enumerate() {
        ups.push(b.upsample_learned(&format!("up_tap{}", i + 1), tap, 1 << i)?);
    }
    let cat = b.concat("features", &ups)?;
    let h = b.conv("mlp_hidden", cat, ConvSpec::new(1, hidden), true)?;
    let h = b.relu("mlp_hidden.relu", h)?;
    let o = b.conv("mlp_out", h, ConvSpec::new(1, spec.n_classes), true)?;
    let out = b.upsample_learned("up_out", o, first_stride(spec))?;
    b.finish(out, Family::Mlp, spec.n_classes)
}

/// The base FCN with every downsampling after the first layer replaced by
/// dilation, so the score map stays at the first layer's stride; a learnable
/// deconvolution restores full resolution.
pub fn build_dilation(spec: &BaseSpec) -> Result<ArchGraph> {
    let mut b = GraphBuilder::new(spec.in_channels);
    let t = trunk(&mut b, spec, true, false)?;
    let s = score(&mut b, "score", t.last, spec.n_classes)?;
    let f = first_stride(spec);
    let up = b.upsample_learned(&format!("up{f}"), s, f)?;
    b.finish(up, Family::Dilation, spec.n_classes)
}

pub const MLP_HIDDEN: usize = 1024;

pub fn build(family: Family, spec: &BaseSpec) -> Result<ArchGraph> {
    match family {
        Family::Fcn => build_base_fcn(spec),
        Family::Skip => build_skip(spec),
        Family::Unpool => build_unpooling(spec),
        Family::Mlp => build_mlp(spec, MLP_HIDDEN),
        Family::Dilation => build_dilation(spec),
        Family::Custom => Err(Error::InvalidArgument(
            "custom graphs are assembled by hand".into(),
        )),
    }
}

/// Runs `graph` at half resolution: 2x2 average pooling of the input and
/// fixed bilinear x2 upsampling of the output.
pub fn wrap_half_resolution(graph: &ArchGraph) -> Result<ArchGraph> {
    let old_in = graph.input();
    let mut map = vec![0; graph.nodes().len()];
    map[old_in] = 1;
    let mut next = 2;
    for (id, m) in map.iter_mut().enumerate() {
        if id != old_in {
            *m = next;
            next += 1;
        }
    }
    let mut nodes: Vec<Node> = Vec::with_capacity(next + 1);
    nodes.push(graph.node(old_in).clone());
    nodes.push(Node {
        name: "input_down".into(),
        kind: LayerKind::AvgPool { window: 2 },
        inputs: vec![0],
        channels: graph.in_channels(),
        params: Vec::new(),
    });
    for (id, n) in graph.nodes().iter().enumerate() {
        if id == old_in {
            continue;
        }
        let mut m = n.clone();
        m.inputs = m.inputs.iter().map(|&i| map[i]).collect();
        if let LayerKind::MaxUnpool { pool } = &mut m.kind {
            *pool = map[*pool];
        }
        nodes.push(m);
    }
    nodes.push(Node {
        name: "output_up".into(),
        kind: LayerKind::Upsample { factor: 2 },
        inputs: vec![map[graph.output()]],
        channels: graph.n_classes(),
        params: Vec::new(),
    });
    let out = nodes.len() - 1;
    ArchGraph::new(
        nodes,
        graph.params().to_vec(),
        out,
        graph.family(),
        graph.n_classes(),
    )
}
