//! Reverse-mode automatic differentiation over a Wengert tape.
//!
//! Every operation appends a node holding its output value and enough saved
//! context to run the matching backward kernel. Node ids only ever reference
//! earlier nodes, so walking the arena in reverse insertion order is a valid
//! reverse topological sweep. Gradients accumulate: a value consumed by
//! several downstream ops receives the sum of their contributions.

use crate::ecpel::{extract_backward, extract_forward, ExtractMask, Extreme};
use crate::error::{Error, Result};
use crate::kernels;
use crate::tensor::{Element, Shape, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ValueId(usize);

impl ValueId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<E: Element> {
    Leaf,
    Conv2d { input: ValueId, weight: ValueId, bias: ValueId },
    PRelu { input: ValueId, slopes: ValueId },
    Sigmoid { input: ValueId },
    PixelUnshuffle { input: ValueId },
    PixelShuffle { input: ValueId },
    ConcatChannels { inputs: Vec<ValueId> },
    Add { a: ValueId, b: ValueId },
    Scale { input: ValueId, factor: E },
    L1Distance { a: ValueId, b: ValueId },
    Extract { input: ValueId, mask: ExtractMask },
}

impl<E: Element> Op<E> {
    fn kind(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Conv2d { .. } => "conv2d",
            Op::PRelu { .. } => "prelu",
            Op::Sigmoid { .. } => "sigmoid",
            Op::PixelUnshuffle { .. } => "pixel_unshuffle",
            Op::PixelShuffle { .. } => "pixel_shuffle",
            Op::ConcatChannels { .. } => "concat_channels",
            Op::Add { .. } => "add",
            Op::Scale { .. } => "scale",
            Op::L1Distance { .. } => "l1_distance",
            Op::Extract { .. } => "extract",
        }
    }
}

struct Node<E: Element> {
    value: Tensor<E>,
    op: Op<E>,
    requires_grad: bool,
    label: Option<String>,
}

/// Gradient arena produced by [`Tape::backward`], indexed by [`ValueId`].
pub struct Gradients<E: Element> {
    grads: Vec<Option<Tensor<E>>>,
}

impl<E: Element> Gradients<E> {
    pub fn grad(&self, id: ValueId) -> Option<&Tensor<E>> {
        self.grads[id.0].as_ref()
    }

    pub fn take(&mut self, id: ValueId) -> Option<Tensor<E>> {
        self.grads[id.0].take()
    }
}

pub struct Tape<E: Element> {
    nodes: Vec<Node<E>>,
}

impl<E: Element> Default for Tape<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E: Element> Tape<E> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: ValueId) -> &Tensor<E> {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: ValueId) -> Shape {
        self.nodes[id.0].value.shape()
    }

    pub fn requires_grad(&self, id: ValueId) -> bool {
        self.nodes[id.0].requires_grad
    }

    pub fn set_label(&mut self, id: ValueId, label: impl Into<String>) {
        self.nodes[id.0].label = Some(label.into());
    }

    /// Human-readable identity of a node, for diagnostics.
    pub fn describe(&self, id: ValueId) -> String {
        let n = &self.nodes[id.0];
        match &n.label {
            Some(l) => format!("{l} ({} {})", n.op.kind(), n.value.shape()),
            None => format!("node {} ({} {})", id.0, n.op.kind(), n.value.shape()),
        }
    }

    /// First node (in forward order) whose value contains a NaN or infinity.
    pub fn first_non_finite(&self) -> Option<ValueId> {
        self.nodes
            .iter()
            .position(|n| !n.value.all_finite())
            .map(ValueId)
    }

    /// Distance from the recorded evaluation point to the nearest gradient
    /// kink anywhere on the tape: PReLU pre-activations near zero, L1
    /// arguments near equality, or extraction windows near a tie. Finite
    /// differencing is only trustworthy when this margin comfortably exceeds
    /// the probe step.
    pub fn min_kink_margin(&self) -> f64 {
        let mut margin = f64::INFINITY;
        for node in &self.nodes {
            match &node.op {
                Op::PRelu { input, .. } => {
                    for v in self.nodes[input.0].value.data() {
                        margin = margin.min(v.as_f64().abs());
                    }
                }
                Op::L1Distance { a, b } => {
                    let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                    for (x, y) in av.data().iter().zip(bv.data()) {
                        margin = margin.min((x.as_f64() - y.as_f64()).abs());
                    }
                }
                Op::Extract { input, mask } => {
                    let gap = crate::ecpel::min_window_gap(
                        &self.nodes[input.0].value,
                        mask.window,
                        mask.extreme,
                    )
                    .expect("window was validated at forward time");
                    margin = margin.min(gap);
                }
                _ => {}
            }
        }
        margin
    }

    fn push(&mut self, value: Tensor<E>, op: Op<E>, requires_grad: bool) -> ValueId {
        let id = ValueId(self.nodes.len());
        self.nodes.push(Node { value, op, requires_grad, label: None });
        id
    }

    pub fn leaf(&mut self, value: Tensor<E>, requires_grad: bool) -> ValueId {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn conv2d(&mut self, input: ValueId, weight: ValueId, bias: ValueId) -> Result<ValueId> {
        let is = self.shape(input);
        let ws = self.shape(weight);
        let bs = self.shape(bias);
        if ws.c != is.c {
            return Err(Error::contract(format!(
                "conv2d: weight expects {} input channels but input {} has {}",
                ws.c, is, is.c
            )));
        }
        if ws.h != ws.w || ws.h % 2 == 0 {
            return Err(Error::contract(format!(
                "conv2d: kernel must be square with odd side, got {ws}"
            )));
        }
        if bs.numel() != ws.n {
            return Err(Error::contract(format!(
                "conv2d: bias {} does not provide one value per output channel ({})",
                bs, ws.n
            )));
        }
        let value = kernels::conv2d_forward(self.value(input), self.value(weight), self.value(bias));
        let rg = self.requires_grad(input) || self.requires_grad(weight) || self.requires_grad(bias);
        Ok(self.push(value, Op::Conv2d { input, weight, bias }, rg))
    }

    pub fn prelu(&mut self, input: ValueId, slopes: ValueId) -> Result<ValueId> {
        let is = self.shape(input);
        let ss = self.shape(slopes);
        if ss.numel() != is.c {
            return Err(Error::contract(format!(
                "prelu: {} slopes cannot cover input {} with {} channels",
                ss.numel(),
                is,
                is.c
            )));
        }
        let value = kernels::prelu_forward(self.value(input), self.value(slopes));
        let rg = self.requires_grad(input) || self.requires_grad(slopes);
        Ok(self.push(value, Op::PRelu { input, slopes }, rg))
    }

    pub fn sigmoid(&mut self, input: ValueId) -> ValueId {
        let value = kernels::sigmoid_forward(self.value(input));
        let rg = self.requires_grad(input);
        self.push(value, Op::Sigmoid { input }, rg)
    }

    pub fn pixel_unshuffle(&mut self, input: ValueId) -> Result<ValueId> {
        let s = self.shape(input);
        if s.h % 2 != 0 || s.w % 2 != 0 {
            return Err(Error::contract(format!(
                "pixel_unshuffle: spatial dims of {s} must be even"
            )));
        }
        let value = kernels::pixel_unshuffle(self.value(input));
        let rg = self.requires_grad(input);
        Ok(self.push(value, Op::PixelUnshuffle { input }, rg))
    }

    pub fn pixel_shuffle(&mut self, input: ValueId) -> Result<ValueId> {
        let s = self.shape(input);
        if s.c % 4 != 0 {
            return Err(Error::contract(format!(
                "pixel_shuffle: channel count of {s} must be divisible by 4"
            )));
        }
        let value = kernels::pixel_shuffle(self.value(input));
        let rg = self.requires_grad(input);
        Ok(self.push(value, Op::PixelShuffle { input }, rg))
    }

    pub fn concat_channels(&mut self, inputs: &[ValueId]) -> Result<ValueId> {
        if inputs.is_empty() {
            return Err(Error::contract("concat_channels: no inputs".to_string()));
        }
        let first = self.shape(inputs[0]);
        for &id in &inputs[1..] {
            let s = self.shape(id);
            if s.n != first.n || s.h != first.h || s.w != first.w {
                return Err(Error::contract(format!(
                    "concat_channels: {s} does not match leading input {first} outside the channel axis"
                )));
            }
        }
        let tensors: Vec<&Tensor<E>> = inputs.iter().map(|&id| self.value(id)).collect();
        let value = kernels::concat_channels(&tensors);
        let rg = inputs.iter().any(|&id| self.requires_grad(id));
        Ok(self.push(value, Op::ConcatChannels { inputs: inputs.to_vec() }, rg))
    }

    pub fn add(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(Error::contract(format!("add: shape mismatch {sa} vs {sb}")));
        }
        let value = kernels::add_forward(self.value(a), self.value(b));
        let rg = self.requires_grad(a) || self.requires_grad(b);
        Ok(self.push(value, Op::Add { a, b }, rg))
    }

    pub fn scale(&mut self, input: ValueId, factor: E) -> ValueId {
        let value = kernels::scale_forward(self.value(input), factor);
        let rg = self.requires_grad(input);
        self.push(value, Op::Scale { input, factor }, rg)
    }

    /// Mean absolute difference, recorded as a scalar node.
    pub fn l1_distance(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(Error::contract(format!(
                "l1_distance: shape mismatch {sa} vs {sb}"
            )));
        }
        let v = kernels::l1_distance_forward(self.value(a), self.value(b));
        let rg = self.requires_grad(a) || self.requires_grad(b);
        Ok(self.push(Tensor::scalar(v), Op::L1Distance { a, b }, rg))
    }

    fn extract(&mut self, input: ValueId, window: usize, extreme: Extreme) -> Result<ValueId> {
        let (value, mask) = extract_forward(self.value(input), window, extreme)?;
        let rg = self.requires_grad(input);
        Ok(self.push(value, Op::Extract { input, mask }, rg))
    }

    pub fn dark_channel(&mut self, input: ValueId, window: usize) -> Result<ValueId> {
        self.extract(input, window, Extreme::Min)
    }

    pub fn bright_channel(&mut self, input: ValueId, window: usize) -> Result<ValueId> {
        self.extract(input, window, Extreme::Max)
    }

    fn accumulate(grads: &mut [Option<Tensor<E>>], id: ValueId, contribution: Tensor<E>) {
        match &mut grads[id.0] {
            Some(existing) => existing.add_assign(&contribution),
            slot @ None => *slot = Some(contribution),
        }
    }

    /// Runs the reverse sweep from a scalar root. Returns one gradient per
    /// node that both requires grad and is reachable from the root.
    pub fn backward(&self, root: ValueId) -> Result<Gradients<E>> {
        let root_value = self.value(root);
        if !root_value.is_scalar() {
            return Err(Error::contract(format!(
                "backward root must be scalar, got {}",
                root_value.shape()
            )));
        }
        if !self.requires_grad(root) {
            return Err(Error::contract(
                "backward root does not depend on any gradient leaf".to_string(),
            ));
        }
        let mut grads: Vec<Option<Tensor<E>>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(Tensor::scalar(E::one()));

        for i in (0..=root.0).rev() {
            if grads[i].is_none() || !self.nodes[i].requires_grad {
                continue;
            }
            let g = grads[i].take().unwrap();
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf => {
                    grads[i] = Some(g);
                }
                Op::Conv2d { input, weight, bias } => {
                    let (d_in, d_w, d_b) =
                        kernels::conv2d_backward(self.value(*input), self.value(*weight), &g);
                    if self.requires_grad(*input) {
                        Self::accumulate(&mut grads, *input, d_in);
                    }
                    if self.requires_grad(*weight) {
                        Self::accumulate(&mut grads, *weight, d_w);
                    }
                    if self.requires_grad(*bias) {
                        Self::accumulate(&mut grads, *bias, d_b);
                    }
                }
                Op::PRelu { input, slopes } => {
                    let (d_in, d_s) =
                        kernels::prelu_backward(self.value(*input), self.value(*slopes), &g);
                    if self.requires_grad(*input) {
                        Self::accumulate(&mut grads, *input, d_in);
                    }
                    if self.requires_grad(*slopes) {
                        Self::accumulate(&mut grads, *slopes, d_s);
                    }
                }
                Op::Sigmoid { input } => {
                    let d_in = kernels::sigmoid_backward(&node.value, &g);
                    Self::accumulate(&mut grads, *input, d_in);
                }
                Op::PixelUnshuffle { input } => {
                    let d_in = kernels::pixel_shuffle(&g);
                    Self::accumulate(&mut grads, *input, d_in);
                }
                Op::PixelShuffle { input } => {
                    let d_in = kernels::pixel_unshuffle(&g);
                    Self::accumulate(&mut grads, *input, d_in);
                }
                Op::ConcatChannels { inputs } => {
                    let channels: Vec<usize> =
                        inputs.iter().map(|&id| self.shape(id).c).collect();
                    let parts = kernels::concat_channels_backward(&g, &channels);
                    for (&id, part) in inputs.iter().zip(parts) {
                        if self.requires_grad(id) {
                            Self::accumulate(&mut grads, id, part);
                        }
                    }
                }
                Op::Add { a, b } => {
                    if self.requires_grad(*a) {
                        Self::accumulate(&mut grads, *a, g.clone());
                    }
                    if self.requires_grad(*b) {
                        Self::accumulate(&mut grads, *b, g.clone());
                    }
                }
                Op::Scale { input, factor } => {
                    let d_in = kernels::scale_forward(&g, *factor);
                    Self::accumulate(&mut grads, *input, d_in);
                }
                Op::L1Distance { a, b } => {
                    let upstream = g.scalar_value();
                    if self.requires_grad(*a) {
                        let d_a =
                            kernels::l1_distance_backward(self.value(*a), self.value(*b), upstream);
                        Self::accumulate(&mut grads, *a, d_a);
                    }
                    if self.requires_grad(*b) {
                        let d_b = kernels::l1_distance_backward(
                            self.value(*b),
                            self.value(*a),
                            upstream,
                        );
                        Self::accumulate(&mut grads, *b, d_b);
                    }
                }
                Op::Extract { input, mask } => {
                    let d_in = extract_backward(mask, &g)?;
                    Self::accumulate(&mut grads, *input, d_in);
                }
            }
        }
        Ok(Gradients { grads })
    }
}
