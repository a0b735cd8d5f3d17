//! Static description of a network as a DAG of layers.

use std::collections::VecDeque;
use std::fmt;

use crate::error::{Error, Result};
use crate::nn::params::ParamRole;
use crate::ops::{upsample_spec, ConvSpec, DeconvSpec};
use crate::tensor::Shape4;

pub type NodeId = usize;

#[derive(Debug, Clone, PartialEq)]
pub enum LayerKind {
    Input,
    Conv { spec: ConvSpec, bias: bool },
    Deconv { spec: DeconvSpec, bias: bool },
    MaxPool { window: usize },
    /// Stride-1 max pooling over a window dilated by `dilation`.
    DilatedMaxPool { window: usize, dilation: usize },
    /// Places values at the argmax positions recorded by the `pool` node.
    MaxUnpool { pool: NodeId },
    AvgPool { window: usize },
    BatchNorm,
    Relu,
    Concat,
    Add,
    /// Fixed, non-learnable bilinear upsampling.
    Upsample { factor: usize },
}

impl LayerKind {
    pub fn label(&self) -> &'static str {
        match self {
            LayerKind::Input => "input",
            LayerKind::Conv { .. } => "conv",
            LayerKind::Deconv { .. } => "deconv",
            LayerKind::MaxPool { .. } => "maxpool",
            LayerKind::DilatedMaxPool { .. } => "dilated_maxpool",
            LayerKind::MaxUnpool { .. } => "max_unpool",
            LayerKind::AvgPool { .. } => "avgpool",
            LayerKind::BatchNorm => "batchnorm",
            LayerKind::Relu => "relu",
            LayerKind::Concat => "concat",
            LayerKind::Add => "add",
            LayerKind::Upsample { .. } => "upsample",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    /// Zero-mean Gaussian with variance `2 / fan_in`.
    He { fan_in: usize },
    /// Channel-diagonal bilinear interpolation kernel.
    Bilinear { factor: usize },
    Zeros,
    Ones,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamDecl {
    pub name: String,
    pub shape: Shape4,
    pub role: ParamRole,
    pub init: Init,
    /// Belongs to the shared base trunk (warm-started when fine-tuning).
    pub trunk: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub name: String,
    pub kind: LayerKind,
    pub inputs: Vec<NodeId>,
    pub channels: usize,
    /// Names of the parameters this node reads, in `weight, bias` or
    /// `gamma, beta` order.
    pub params: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Family {
    Fcn,
    Skip,
    Unpool,
    Mlp,
    Dilation,
    /// Hand-assembled graphs; no full-resolution requirement.
    Custom,
}

impl Family {
    pub const ALL: [Family; 5] = [
        Family::Fcn,
        Family::Skip,
        Family::Unpool,
        Family::Mlp,
        Family::Dilation,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Family::Fcn => "fcn",
            Family::Skip => "skip",
            Family::Unpool => "unpool",
            Family::Mlp => "mlp",
            Family::Dilation => "dilation",
            Family::Custom => "custom",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|f| f.as_str() == s)
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Accumulated stride as a reduced fraction: input pixels per feature cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Stride {
    pub num: usize,
    pub den: usize,
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

impl Stride {
    pub const ONE: Stride = Stride { num: 1, den: 1 };

    fn reduced(num: usize, den: usize) -> Self {
        let g = gcd(num, den).max(1);
        Stride {
            num: num / g,
            den: den / g,
        }
    }

    pub fn mul(self, k: usize) -> Self {
        Self::reduced(self.num * k, self.den)
    }

    pub fn div(self, k: usize) -> Self {
        Self::reduced(self.num, self.den * k)
    }

    pub fn as_f64(self) -> f64 {
        self.num as f64 / self.den as f64
    }
}

impl fmt::Display for Stride {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.den == 1 {
            write!(f, "{}", self.num)
        } else {
            write!(f, "{}/{}", self.num, self.den)
        }
    }
}

/// A validated, acyclic network with one input and one output node.
#[derive(Debug, Clone)]
pub struct ArchGraph {
    nodes: Vec<Node>,
    params: Vec<ParamDecl>,
    order: Vec<NodeId>,
    input: NodeId,
    output: NodeId,
    family: Family,
    n_classes: usize,
    strides: Vec<Stride>,
    size_multiple: usize,
}

impl ArchGraph {
    /// Validates a node list: in-range edges, acyclicity, a single input,
    /// consistent channels and strides at merges, unpool links to pools.
    pub fn new(
        nodes: Vec<Node>,
        params: Vec<ParamDecl>,
        output: NodeId,
        family: Family,
        n_classes: usize,
    ) -> Result<Self> {
        let inputs: Vec<NodeId> = nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| n.kind == LayerKind::Input)
            .map(|(i, _)| i)
            .collect();
        if inputs.len() != 1 {
            return Err(Error::Graph(format!(
                "expected exactly one input node, found {}",
                inputs.len()
            )));
        }
        if output >= nodes.len() {
            return Err(Error::Graph(format!("output node {output} does not exist")));
        }
        for (i, n) in nodes.iter().enumerate() {
            if let Some(&bad) = n.inputs.iter().find(|&&j| j >= nodes.len()) {
                return Err(Error::Graph(format!(
                    "node `{}` ({i}) reads from missing node {bad}",
                    n.name
                )));
            }
            let arity_ok = match n.kind {
                LayerKind::Input => n.inputs.is_empty(),
                LayerKind::Concat | LayerKind::Add => !n.inputs.is_empty(),
                _ => n.inputs.len() == 1,
            };
            if !arity_ok {
                return Err(Error::Graph(format!(
                    "node `{}` has {} inputs, invalid for {}",
                    n.name,
                    n.inputs.len(),
                    n.kind.label()
                )));
            }
        }
        let order = topo_order(&nodes)?;
        let mut graph = ArchGraph {
            input: inputs[0],
            nodes,
            params,
            order,
            output,
            family,
            n_classes,
            strides: Vec::new(),
            size_multiple: 1,
        };
        graph.check_links()?;
        graph.check_channels()?;
        graph.strides = graph.compute_strides()?;
        graph.size_multiple = graph
            .strides
            .iter()
            .filter(|s| s.den == 1)
            .map(|s| s.num)
            .max()
            .unwrap_or(1);
        if graph.nodes[output].channels != n_classes {
            return Err(Error::Graph(format!(
                "output node `{}` has {} channels, expected {n_classes} classes",
                graph.nodes[output].name, graph.nodes[output].channels
            )));
        }
        if family != Family::Custom && graph.strides[output] != Stride::ONE {
            return Err(Error::Graph(format!(
                "{family} network ends at stride {}, not full resolution",
                graph.strides[output]
            )));
        }
        Ok(graph)
    }

    fn check_links(&self) -> Result<()> {
        for n in &self.nodes {
            if let LayerKind::MaxUnpool { pool } = n.kind {
                let ok = self
                    .nodes
                    .get(pool)
                    .is_some_and(|p| matches!(p.kind, LayerKind::MaxPool { .. }));
                if !ok {
                    return Err(Error::Graph(format!(
                        "unpool `{}` must link to a max pooling node",
                        n.name
                    )));
                }
                if self.position(pool) > self.position(n.inputs[0]) {
                    return Err(Error::Graph(format!(
                        "unpool `{}` runs before its pooling node",
                        n.name
                    )));
                }
            }
        }
        Ok(())
    }

    fn position(&self, id: NodeId) -> usize {
        self.order.iter().position(|&o| o == id).unwrap_or(usize::MAX)
    }

    fn check_channels(&self) -> Result<()> {
        for n in &self.nodes {
            let ins: Vec<usize> = n.inputs.iter().map(|&i| self.nodes[i].channels).collect();
            let expect = match &n.kind {
                LayerKind::Input => n.channels,
                LayerKind::Conv { spec, .. } => {
                    if n.channels != spec.out_channels {
                        return Err(Error::Graph(format!("conv `{}` channel count", n.name)));
                    }
                    n.channels
                }
                LayerKind::Deconv { spec, .. } => {
                    if n.channels != spec.out_channels {
                        return Err(Error::Graph(format!("deconv `{}` channel count", n.name)));
                    }
                    n.channels
                }
                LayerKind::Concat => ins.iter().sum(),
                LayerKind::Add => {
                    if ins.iter().any(|&c| c != ins[0]) {
                        return Err(Error::Graph(format!(
                            "add `{}` merges differing channel counts {ins:?}",
                            n.name
                        )));
                    }
                    ins[0]
                }
                LayerKind::MaxUnpool { pool } => {
                    if self.nodes[*pool].channels != ins[0] {
                        return Err(Error::Graph(format!(
                            "unpool `{}` has {} channels but its pool `{}` has {}",
                            n.name, ins[0], self.nodes[*pool].name, self.nodes[*pool].channels
                        )));
                    }
                    ins[0]
                }
                _ => ins[0],
            };
            if expect != n.channels {
                return Err(Error::Graph(format!(
                    "node `{}` declares {} channels, inputs give {expect}",
                    n.name, n.channels
                )));
            }
        }
        Ok(())
    }

    fn compute_strides(&self) -> Result<Vec<Stride>> {
        let mut st = vec![Stride::ONE; self.nodes.len()];
        for &id in &self.order {
            let n = &self.nodes[id];
            let s_in = n.inputs.first().map(|&i| st[i]).unwrap_or(Stride::ONE);
            st[id] = match &n.kind {
                LayerKind::Input => Stride::ONE,
                LayerKind::Conv { spec, .. } => s_in.mul(spec.stride),
                LayerKind::Deconv { spec, .. } => s_in.div(spec.stride),
                LayerKind::MaxPool { window } | LayerKind::AvgPool { window } => s_in.mul(*window),
                LayerKind::MaxUnpool { pool } => match self.nodes[*pool].kind {
                    LayerKind::MaxPool { window } => s_in.div(window),
                    _ => unreachable!("checked by check_links"),
                },
                LayerKind::Upsample { factor } => s_in.div(*factor),
                LayerKind::Concat | LayerKind::Add => {
                    if let Some(&bad) = n.inputs.iter().find(|&&i| st[i] != s_in) {
                        return Err(Error::Graph(format!(
                            "`{}` merges stride {} with stride {} from `{}`",
                            n.name, s_in, st[bad], self.nodes[bad].name
                        )));
                    }
                    s_in
                }
                _ => s_in,
            };
        }
        Ok(st)
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id]
    }

    pub fn find(&self, name: &str) -> Option<NodeId> {
        self.nodes.iter().position(|n| n.name == name)
    }

    pub fn params(&self) -> &[ParamDecl] {
        &self.params
    }

    pub fn order(&self) -> &[NodeId] {
        &self.order
    }

    pub fn input(&self) -> NodeId {
        self.input
    }

    pub fn output(&self) -> NodeId {
        self.output
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn in_channels(&self) -> usize {
        self.nodes[self.input].channels
    }

    /// Accumulated stride of every node.
    pub fn strides(&self) -> &[Stride] {
        &self.strides
    }

    /// Input height and width must be multiples of this.
    pub fn size_multiple(&self) -> usize {
        self.size_multiple
    }

    pub fn consumers(&self, id: NodeId) -> Vec<NodeId> {
        self.order
            .iter()
            .copied()
            .filter(|&c| self.nodes[c].inputs.contains(&id))
            .collect()
    }

    /// Learnable parameter count.
    pub fn param_count(&self) -> usize {
        self.params.iter().map(|p| p.shape.len()).sum()
    }

    /// Output shape of every node for an input of the given shape.
    pub fn infer_shapes(&self, input: Shape4) -> Result<Vec<Shape4>> {
        if input.c != self.in_channels() {
            return Err(Error::Shape(format!(
                "network expects {} input channels, got {input}",
                self.in_channels()
            )));
        }
        let m = self.size_multiple;
        if input.h % m != 0 || input.w % m != 0 {
            return Err(Error::Shape(format!(
                "input {input} is not a multiple of {m} in height and width"
            )));
        }
        let mut shapes = vec![input; self.nodes.len()];
        for &id in &self.order {
            let n = &self.nodes[id];
            let s = n.inputs.first().map(|&i| shapes[i]).unwrap_or(input);
            shapes[id] = match &n.kind {
                LayerKind::Input => input,
                LayerKind::Conv { spec, .. } => {
                    let (h, w) = spec.output_size(s.h, s.w)?;
                    Shape4::new(s.n, spec.out_channels, h, w)?
                }
                LayerKind::Deconv { spec, .. } => {
                    let (h, w) = spec.output_size(s.h, s.w)?;
                    Shape4::new(s.n, spec.out_channels, h, w)?
                }
                LayerKind::MaxPool { window } | LayerKind::AvgPool { window } => {
                    Shape4::new(s.n, s.c, s.h / window, s.w / window)?
                }
                LayerKind::MaxUnpool { pool } => shapes[self.nodes[*pool].inputs[0]],
                LayerKind::Upsample { factor } => Shape4::new(s.n, s.c, s.h * factor, s.w * factor)?,
                LayerKind::Concat | LayerKind::Add => {
                    for &i in &n.inputs {
                        let o = shapes[i];
                        if (o.n, o.h, o.w) != (s.n, s.h, s.w) {
                            return Err(Error::Shape(format!(
                                "`{}` merges {s} with {o}",
                                n.name
                            )));
                        }
                    }
                    Shape4::new(s.n, n.channels, s.h, s.w)?
                }
                _ => s,
            };
        }
        Ok(shapes)
    }
}

fn topo_order(nodes: &[Node]) -> Result<Vec<NodeId>> {
    let mut indeg: Vec<usize> = nodes.iter().map(|n| n.inputs.len()).collect();
    let mut consumers = vec![Vec::new(); nodes.len()];
    for (i, n) in nodes.iter().enumerate() {
        for &j in &n.inputs {
            consumers[j].push(i);
        }
    }
    let mut queue: VecDeque<NodeId> = (0..nodes.len()).filter(|&i| indeg[i] == 0).collect();
    let mut order = Vec::with_capacity(nodes.len());
    while let Some(i) = queue.pop_front() {
        order.push(i);
        for &c in &consumers[i] {
            indeg[c] -= 1;
            if indeg[c] == 0 {
                queue.push_back(c);
            }
        }
    }
    if order.len() != nodes.len() {
        let stuck: Vec<&str> = (0..nodes.len())
            .filter(|&i| indeg[i] > 0)
            .map(|i| nodes[i].name.as_str())
            .collect();
        return Err(Error::Graph(format!("cycle through {}", stuck.join(", "))));
    }
    Ok(order)
}

/// Incremental graph construction. Nodes can only read from nodes that
/// already exist, so the result is acyclic by construction.
#[derive(Debug, Clone)]
pub struct GraphBuilder {
    nodes: Vec<Node>,
    params: Vec<ParamDecl>,
    trunk: bool,
}

impl GraphBuilder {
    /// Starts a graph whose node 0 is an input with `in_channels` channels.
    pub fn new(in_channels: usize) -> Self {
        GraphBuilder {
            nodes: vec![Node {
                name: "input".into(),
                kind: LayerKind::Input,
                inputs: Vec::new(),
                channels: in_channels,
                params: Vec::new(),
            }],
            params: Vec::new(),
            trunk: false,
        }
    }

    pub fn input(&self) -> NodeId {
        0
    }

    /// Marks subsequently declared parameters as trunk parameters.
    pub fn set_trunk(&mut self, trunk: bool) {
        self.trunk = trunk;
    }

    pub fn channels(&self, id: NodeId) -> usize {
        self.nodes[id].channels
    }

    pub fn find(&self, name: &str) -> Option<NodeId> {
        self.nodes.iter().position(|n| n.name == name)
    }

    fn push(&mut self, name: &str, kind: LayerKind, inputs: Vec<NodeId>, channels: usize) -> Result<NodeId> {
        if self.find(name).is_some() {
            return Err(Error::Graph(format!("duplicate node name `{name}`")));
        }
        if let Some(&bad) = inputs.iter().find(|&&i| i >= self.nodes.len()) {
            return Err(Error::Graph(format!("`{name}` reads from missing node {bad}")));
        }
        self.nodes.push(Node {
            name: name.to_string(),
            kind,
            inputs,
            channels,
            params: Vec::new(),
        });
        Ok(self.nodes.len() - 1)
    }

    fn declare(&mut self, node: NodeId, suffix: &str, shape: Shape4, role: ParamRole, init: Init) {
        let name = format!("{}.{suffix}", self.nodes[node].name);
        self.nodes[node].params.push(name.clone());
        self.params.push(ParamDecl {
            name,
            shape,
            role,
            init,
            trunk: self.trunk,
        });
    }

    pub fn conv(&mut self, name: &str, x: NodeId, spec: ConvSpec, bias: bool) -> Result<NodeId> {
        let cin = self.channels(x);
        let id = self.push(name, LayerKind::Conv { spec, bias }, vec![x], spec.out_channels)?;
        let (kh, kw) = spec.kernel;
        let shape = Shape4::new(spec.out_channels, cin, kh, kw)?;
        self.declare(id, "weight", shape, ParamRole::Weight, Init::He { fan_in: cin * kh * kw });
        if bias {
            let bs = Shape4::new(1, spec.out_channels, 1, 1)?;
            self.declare(id, "bias", bs, ParamRole::Bias, Init::Zeros);
        }
        Ok(id)
    }

    /// Learnable transposed convolution. With `Init::He` the fan-in counts the
    /// kernel taps that reach one output cell, `c_in * kh * kw / s^2`.
    pub fn deconv(
        &mut self,
        name: &str,
        x: NodeId,
        spec: DeconvSpec,
        bias: bool,
        bilinear: bool,
    ) -> Result<NodeId> {
        let cin = self.channels(x);
        if bilinear && cin != spec.out_channels {
            return Err(Error::Graph(format!(
                "bilinear-initialized `{name}` needs equal in/out channels ({cin} vs {})",
                spec.out_channels
            )));
        }
        let id = self.push(name, LayerKind::Deconv { spec, bias }, vec![x], spec.out_channels)?;
        let (kh, kw) = spec.kernel;
        let shape = Shape4::new(cin, spec.out_channels, kh, kw)?;
        let init = if bilinear {
            Init::Bilinear { factor: spec.stride }
        } else {
            let taps = (kh * kw / (spec.stride * spec.stride)).max(1);
            Init::He { fan_in: cin * taps }
        };
        self.declare(id, "weight", shape, ParamRole::Weight, init);
        if bias {
            let bs = Shape4::new(1, spec.out_channels, 1, 1)?;
            self.declare(id, "bias", bs, ParamRole::Bias, Init::Zeros);
        }
        Ok(id)
    }

    /// Bilinear-initialized learnable `factor`-times upsampling.
    pub fn upsample_learned(&mut self, name: &str, x: NodeId, factor: usize) -> Result<NodeId> {
        let c = self.channels(x);
        self.deconv(name, x, upsample_spec(factor, c), false, true)
    }

    pub fn batchnorm(&mut self, name: &str, x: NodeId) -> Result<NodeId> {
        let c = self.channels(x);
        let id = self.push(name, LayerKind::BatchNorm, vec![x], c)?;
        let s = Shape4::new(1, c, 1, 1)?;
        self.declare(id, "gamma", s, ParamRole::BnGamma, Init::Ones);
        self.declare(id, "beta", s, ParamRole::BnBeta, Init::Zeros);
        Ok(id)
    }

    pub fn relu(&mut self, name: &str, x: NodeId) -> Result<NodeId> {
        let c = self.channels(x);
        self.push(name, LayerKind::Relu, vec![x], c)
    }

    pub fn maxpool(&mut self, name: &str, x: NodeId, window: usize) -> Result<NodeId> {
        let c = self.channels(x);
        self.push(name, LayerKind::MaxPool { window }, vec![x], c)
    }

    pub fn dilated_maxpool(&mut self, name: &str, x: NodeId, window: usize, dilation: usize) -> Result<NodeId> {
        let c = self.channels(x);
        self.push(name, LayerKind::DilatedMaxPool { window, dilation }, vec![x], c)
    }

    pub fn max_unpool(&mut self, name: &str, x: NodeId, pool: NodeId) -> Result<NodeId> {
        if !matches!(self.nodes.get(pool).map(|n| &n.kind), Some(LayerKind::MaxPool { .. })) {
            return Err(Error::Graph(format!("`{name}` must link to a max pooling node")));
        }
        let c = self.channels(x);
        self.push(name, LayerKind::MaxUnpool { pool }, vec![x], c)
    }

    pub fn avg_pool(&mut self, name: &str, x: NodeId, window: usize) -> Result<NodeId> {
        let c = self.channels(x);
        self.push(name, LayerKind::AvgPool { window }, vec![x], c)
    }

    pub fn upsample_fixed(&mut self, name: &str, x: NodeId, factor: usize) -> Result<NodeId> {
        let c = self.channels(x);
        self.push(name, LayerKind::Upsample { factor }, vec![x], c)
    }

    pub fn concat(&mut self, name: &str, parts: &[NodeId]) -> Result<NodeId> {
        let c = parts.iter().map(|&p| self.channels(p)).sum();
        self.push(name, LayerKind::Concat, parts.to_vec(), c)
    }

    pub fn add(&mut self, name: &str, parts: &[NodeId]) -> Result<NodeId> {
        let c = parts.first().map(|&p| self.channels(p)).unwrap_or(0);
        self.push(name, LayerKind::Add, parts.to_vec(), c)
    }

    /// Conv, batch norm, ReLU; returns the ReLU node.
    pub fn conv_bn_relu(&mut self, name: &str, x: NodeId, spec: ConvSpec) -> Result<NodeId> {
        let c = self.conv(name, x, spec, true)?;
        let b = self.batchnorm(&format!("{name}.bn"), c)?;
        self.relu(&format!("{name}.relu"), b)
    }

    pub fn finish(self, output: NodeId, family: Family, n_classes: usize) -> Result<ArchGraph> {
        ArchGraph::new(self.nodes, self.params, output, family, n_classes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn node(name: &str, kind: LayerKind, inputs: Vec<NodeId>, channels: usize) -> Node {
        Node {
            name: name.into(),
            kind,
            inputs,
            channels,
            params: Vec::new(),
        }
    }

    #[test]
    fn cycle_is_rejected() {
        let nodes = vec![
            node("input", LayerKind::Input, vec![], 2),
            node("a", LayerKind::Relu, vec![2], 2),
            node("b", LayerKind::Relu, vec![1], 2),
            node("c", LayerKind::Add, vec![0, 2], 2),
        ];
        let err = ArchGraph::new(nodes, vec![], 3, Family::Custom, 2).unwrap_err();
        assert!(err.to_string().contains("cycle"), "{err}");
    }

    #[test]
    fn strides_and_shapes() {
        let mut b = GraphBuilder::new(3);
        let x = b.input();
        let c = b.conv("c", x, ConvSpec::new(3, 4).stride(2).padding(1), true).unwrap();
        let p = b.maxpool("p", c, 2).unwrap();
        let u = b.upsample_learned("u", p, 4).unwrap();
        let g = b.finish(u, Family::Fcn, 4).unwrap();
        assert_eq!(g.strides()[p], Stride { num: 4, den: 1 });
        assert_eq!(g.size_multiple(), 4);
        let shapes = g.infer_shapes(Shape4::new(2, 3, 8, 12).unwrap()).unwrap();
        assert_eq!(shapes[p].dims(), [2, 4, 2, 3]);
        assert_eq!(shapes[u].dims(), [2, 4, 8, 12]);
        assert!(g.infer_shapes(Shape4::new(1, 3, 6, 8).unwrap()).is_err());
        assert_eq!(g.param_count(), 4 * 3 * 9 + 4 + 4 * 4 * 8 * 8);
    }

    #[test]
    fn coarse_output_needs_custom_family() {
        let mut b = GraphBuilder::new(1);
        let p = b.maxpool("p", 0, 2).unwrap();
        assert!(b.clone().finish(p, Family::Fcn, 1).is_err());
        assert!(b.finish(p, Family::Custom, 1).is_ok());
    }

    #[test]
    fn merge_of_mismatched_strides_is_rejected() {
        let mut b = GraphBuilder::new(1);
        let p = b.maxpool("p", 0, 2).unwrap();
        let u = b.upsample_fixed("u", p, 4).unwrap();
        let a = b.add("a", &[0, u]).unwrap();
        assert!(b.finish(a, Family::Custom, 1).is_err());
    }
}
