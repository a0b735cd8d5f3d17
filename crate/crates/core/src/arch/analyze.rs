use std::collections::HashMap;
use std::fmt::Write as _;

use crate::error::Result;
use crate::nn::graph::{ArchGraph, LayerKind, NodeId, Stride};
use crate::ops::upsample_spec;
use crate::tensor::Shape4;

/// Closed range of input positions along one axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Interval {
    pub lo: i64,
    pub hi: i64,
}

impl Interval {
    fn point(x: i64) -> Self {
        Interval { lo: x, hi: x }
    }

    fn union(a: Option<Self>, b: Option<Self>) -> Option<Self> {
        match (a, b) {
            (Some(a), Some(b)) => Some(Interval {
                lo: a.lo.min(b.lo),
                hi: a.hi.max(b.hi),
            }),
            (a, None) => a,
            (None, b) => b,
        }
    }

    pub fn len(&self) -> i64 {
        self.hi - self.lo + 1
    }
}

/// Which input positions (on an unbounded image, one axis) each node output
/// position depends on. All layers act identically on both axes.
pub struct RfAnalyzer<'a> {
    graph: &'a ArchGraph,
    memo: HashMap<(NodeId, i64), Option<Interval>>,
}

impl<'a> RfAnalyzer<'a> {
    pub fn new(graph: &'a ArchGraph) -> Self {
        RfAnalyzer {
            graph,
            memo: HashMap::new(),
        }
    }

    fn span(&mut self, node: NodeId, positions: impl Iterator<Item = i64>) -> Option<Interval> {
        let mut acc = None;
        for x in positions {
            acc = Interval::union(acc, self.interval(node, x));
        }
        acc
    }

    fn deconv_span(&mut self, node: NodeId, u: i64, k: usize, s: usize, crop: usize) -> Option<Interval> {
        let (k, s, c) = (k as i64, s as i64, crop as i64);
        // input i reaches output u when u + c = i * s + j for some tap j < k
        let first = (u + c - k + 1).div_euclid(s) + i64::from((u + c - k + 1).rem_euclid(s) != 0);
        let last = (u + c).div_euclid(s);
        self.span(node, first..=last)
    }

    /// Dependency interval of position `q` of `node`; `None` if it depends
    /// on no input position.
    pub fn interval(&mut self, node: NodeId, q: i64) -> Option<Interval> {
        if let Some(&r) = self.memo.get(&(node, q)) {
            return r;
        }
        let n = self.graph.node(node);
        let first = n.inputs.first().copied();
        let r = match &n.kind {
            LayerKind::Input => Some(Interval::point(q)),
            LayerKind::Conv { spec, .. } => {
                let (s, p, d) = (spec.stride as i64, spec.padding as i64, spec.dilation as i64);
                let k = spec.kernel.0 as i64;
                self.span(first.unwrap(), (0..k).map(|j| q * s - p + j * d))
            }
            LayerKind::Deconv { spec, .. } => {
                self.deconv_span(first.unwrap(), q, spec.kernel.0, spec.stride, spec.crop)
            }
            LayerKind::Upsample { factor } => {
                let us = upsample_spec(*factor, 1);
                self.deconv_span(first.unwrap(), q, us.kernel.0, us.stride, us.crop)
            }
            LayerKind::MaxPool { window } | LayerKind::AvgPool { window } => {
                let k = *window as i64;
                self.span(first.unwrap(), (0..k).map(|j| q * k + j))
            }
            LayerKind::DilatedMaxPool { window, dilation } => {
                let (k, d) = (*window as i64, *dilation as i64);
                self.span(first.unwrap(), (0..k).map(|j| q + j * d))
            }
            LayerKind::MaxUnpool { pool } => {
                let k = match self.graph.node(*pool).kind {
                    LayerKind::MaxPool { window } => window as i64,
                    _ => unreachable!("validated link"),
                };
                let cell = q.div_euclid(k);
                let value = self.interval(first.unwrap(), cell);
                // the argmax choice depends on the whole pooling window
                let pool_in = self.graph.node(*pool).inputs[0];
                let window = self.span(pool_in, (0..k).map(|j| cell * k + j));
                Interval::union(value, window)
            }
            LayerKind::BatchNorm | LayerKind::Relu => self.interval(first.unwrap(), q),
            LayerKind::Concat | LayerKind::Add => {
                let ins = n.inputs.clone();
                let mut acc = None;
                for i in ins {
                    acc = Interval::union(acc, self.interval(i, q));
                }
                acc
            }
        };
        self.memo.insert((node, q), r);
        r
    }

    /// Positions of `node` covering one full period of the network.
    fn period(&self, node: NodeId) -> std::ops::Range<i64> {
        let s = self.graph.strides()[node];
        let m = self.graph.size_multiple();
        0..(m * s.den).div_ceil(s.num).max(1) as i64
    }

    /// Largest receptive-field extent over the positions of `node`.
    pub fn receptive_field(&mut self, node: NodeId) -> usize {
        self.period(node)
            .filter_map(|q| self.interval(node, q))
            .map(|iv| iv.len() as usize)
            .max()
            .unwrap_or(0)
    }

    /// Input margin beyond which a full-resolution output pixel `u` is
    /// unaffected: `max_u max(u - lo(u), hi(u) - u)`.
    pub fn halo(&mut self) -> usize {
        let out = self.graph.output();
        let s = self.graph.strides()[out];
        self.period(out)
            .filter_map(|q| {
                let iv = self.interval(out, q)?;
                // position of q in input coordinates
                let u = q * s.num as i64 / s.den as i64;
                Some((u - iv.lo).max(iv.hi - u).max(0) as usize)
            })
            .max()
            .unwrap_or(0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerInfo {
    pub name: String,
    pub kind: &'static str,
    pub receptive_field: usize,
    pub stride: Stride,
    pub channels: usize,
    pub params: usize,
    pub activation_bytes: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisReport {
    pub layers: Vec<LayerInfo>,
    pub input: Shape4,
    pub total_downsampling: usize,
    pub param_count: usize,
    pub halo: usize,
}

/// Per-node receptive field, accumulated stride, channels, parameter count
/// and f32 activation memory for an input of shape `input`, plus the
/// network's halo.
pub fn analyze(graph: &ArchGraph, input: Shape4) -> Result<AnalysisReport> {
    let shapes = graph.infer_shapes(input)?;
    let decl_size: HashMap<&str, usize> = graph
        .params()
        .iter()
        .map(|p| (p.name.as_str(), p.shape.len()))
        .collect();
    let mut rf = RfAnalyzer::new(graph);
    let mut layers = Vec::with_capacity(graph.nodes().len());
    for &id in graph.order() {
        let n = graph.node(id);
        layers.push(LayerInfo {
            name: n.name.clone(),
            kind: n.kind.label(),
            receptive_field: rf.receptive_field(id),
            stride: graph.strides()[id],
            channels: n.channels,
            params: n.params.iter().map(|p| decl_size[p.as_str()]).sum(),
            activation_bytes: shapes[id].len() * std::mem::size_of::<f32>(),
        });
    }
    Ok(AnalysisReport {
        layers,
        input,
        total_downsampling: graph.size_multiple(),
        param_count: graph.param_count(),
        halo: rf.halo(),
    })
}

impl AnalysisReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("layer,kind,rf,stride,channels,params,activation_bytes\n");
        for l in &self.layers {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{}",
                l.name, l.kind, l.receptive_field, l.stride, l.channels, l.params, l.activation_bytes
            );
        }
        s
    }

    pub fn to_text(&self) -> String {
        let name_w = self.layers.iter().map(|l| l.name.len()).max().unwrap_or(5).max(5);
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<name_w$}  {:<15} {:>6} {:>6} {:>8} {:>10} {:>14}",
            "layer", "kind", "rf", "stride", "channels", "params", "act. bytes"
        );
        for l in &self.layers {
            let _ = writeln!(
                s,
                "{:<name_w$}  {:<15} {:>6} {:>6} {:>8} {:>10} {:>14}",
                l.name,
                l.kind,
                l.receptive_field,
                l.stride.to_string(),
                l.channels,
                l.params,
                l.activation_bytes
            );
        }
        let _ = writeln!(s, "input: {}", self.input);
        let _ = writeln!(s, "total downsampling: {}", self.total_downsampling);
        let _ = writeln!(s, "parameters: {}", self.param_count);
        let _ = writeln!(s, "halo: {}", self.halo);
        s
    }
}
