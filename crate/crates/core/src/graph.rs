//! Static computation graphs with reverse-mode differentiation.
//!
//! A [`Graph`] owns its nodes (in topological order) and all parameter
//! tensors. `forward` caches the activations that `backward` needs; the
//! cache is consumed by `backward`, so each backward must follow a forward.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::ops::{self, BnStats, ConcatPart};
use crate::tensor::{Scalar, Tensor};

pub type NodeId = usize;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Op {
    Input { slot: usize },
    Conv2d { weight: ParamId, bias: Option<ParamId>, dilation: usize },
    BatchNorm { scale: ParamId, shift: ParamId, running_mean: ParamId, running_var: ParamId, eps: f64, momentum: f64 },
    Relu,
    Add,
    Concat { parts: Vec<ConcatPart> },
    MaxPool2,
    Upsample2,
    DownscaleAvg { factor: usize },
    MseLoss,
}

impl Op {
    pub fn kind(&self) -> &'static str {
        match self {
            Op::Input { .. } => "input",
            Op::Conv2d { .. } => "conv2d",
            Op::BatchNorm { .. } => "batch_norm",
            Op::Relu => "relu",
            Op::Add => "add",
            Op::Concat { .. } => "concat",
            Op::MaxPool2 => "max_pool2",
            Op::Upsample2 => "upsample2",
            Op::DownscaleAvg { .. } => "downscale_avg",
            Op::MseLoss => "mse_loss",
        }
    }

    fn params(&self) -> Vec<ParamId> {
        match self {
            Op::Conv2d { weight, bias, .. } => std::iter::once(*weight).chain(*bias).collect(),
            Op::BatchNorm { scale, shift, running_mean, running_var, .. } => {
                vec![*scale, *shift, *running_mean, *running_var]
            }
            _ => Vec::new(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Node {
    pub name: String,
    pub op: Op,
    pub inputs: Vec<NodeId>,
}

#[derive(Clone, Debug)]
pub struct Param<T> {
    pub name: String,
    pub tensor: Tensor<T>,
    /// Running statistics are stored but not optimised.
    pub trainable: bool,
}

#[derive(Clone, Debug, Default)]
pub struct ParamStore<T> {
    params: Vec<Param<T>>,
    by_name: HashMap<String, ParamId>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn add(&mut self, name: &str, tensor: Tensor<T>, trainable: bool) -> Result<ParamId> {
        if self.by_name.contains_key(name) {
            return Err(Error::config(format!("duplicate parameter name {name}")));
        }
        let id = ParamId(self.params.len());
        self.params.push(Param { name: name.to_string(), tensor, trainable });
        self.by_name.insert(name.to_string(), id);
        Ok(id)
    }

    pub fn get(&self, id: ParamId) -> &Param<T> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param<T> {
        &mut self.params[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param<T>)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param<T>> {
        self.params.iter_mut()
    }

    pub fn trainable_count(&self) -> usize {
        self.params.iter().filter(|p| p.trainable).map(|p| p.tensor.len()).sum()
    }

    /// Copies every tensor of `other` into the same-named slot of `self`.
    pub fn load_from(&mut self, other: &ParamStore<T>) -> Result<()> {
        if other.len() != self.len() {
            return Err(Error::config(format!("parameter sets differ in size: {} vs {}", self.len(), other.len())));
        }
        for (_, src) in other.iter() {
            let id = self
                .id(&src.name)
                .ok_or_else(|| Error::config(format!("parameter {} has no counterpart", src.name)))?;
            let dst = &mut self.params[id.0];
            if dst.tensor.shape() != src.tensor.shape() {
                return Err(Error::config(format!(
                    "parameter {} shape mismatch: {:?} vs {:?}",
                    src.name,
                    dst.tensor.shape(),
                    src.tensor.shape()
                )));
            }
            dst.tensor.data_mut().copy_from_slice(src.tensor.data());
        }
        Ok(())
    }
}

enum Aux {
    None,
    Bn(BnStats),
    Pool(Vec<u32>),
}

struct ForwardState<T> {
    values: Vec<Option<Tensor<T>>>,
    aux: Vec<Aux>,
    mode: Mode,
}

#[derive(Clone, Debug)]
struct InputSlot<T> {
    requires_grad: bool,
    grad: Option<Tensor<T>>,
}

pub struct Graph<T> {
    nodes: Vec<Node>,
    inputs: Vec<InputSlot<T>>,
    output: Option<NodeId>,
    pub params: ParamStore<T>,
    state: Option<ForwardState<T>>,
    track_kinks: bool,
    kink_signature: u64,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            inputs: Vec::new(),
            output: None,
            params: ParamStore { params: Vec::new(), by_name: HashMap::new() },
            state: None,
            track_kinks: false,
            kink_signature: 0,
        }
    }

    pub fn add_input(&mut self, name: &str) -> NodeId {
        let slot = self.inputs.len();
        let id = self.nodes.len();
        self.nodes.push(Node { name: name.to_string(), op: Op::Input { slot }, inputs: Vec::new() });
        self.inputs.push(InputSlot { requires_grad: false, grad: None });
        id
    }

    pub fn add_param(&mut self, name: &str, tensor: Tensor<T>, trainable: bool) -> Result<ParamId> {
        self.params.add(name, tensor, trainable)
    }

    pub fn add_node(&mut self, name: &str, op: Op, inputs: &[NodeId]) -> Result<NodeId> {
        let id = self.nodes.len();
        if let Some(&bad) = inputs.iter().find(|&&i| i >= id) {
            return Err(Error::config(format!("node {name} references {bad}, which does not precede it")));
        }
        if matches!(op, Op::Input { .. }) {
            return Err(Error::config("use add_input for input nodes"));
        }
        for p in op.params() {
            if p.0 >= self.params.len() {
                return Err(Error::config(format!("node {name} references unknown parameter {}", p.0)));
            }
        }
        let arity_ok = match &op {
            Op::Input { .. } => inputs.is_empty(),
            Op::Add => !inputs.is_empty(),
            Op::Concat { parts } => {
                parts.iter().filter(|p| **p == ConcatPart::Input).count() == inputs.len() && !inputs.is_empty()
            }
            Op::MseLoss => inputs.len() == 2,
            _ => inputs.len() == 1,
        };
        if !arity_ok {
            return Err(Error::config(format!("node {name} ({}) has the wrong number of inputs", op.kind())));
        }
        self.nodes.push(Node { name: name.to_string(), op, inputs: inputs.to_vec() });
        Ok(id)
    }

    pub fn set_output(&mut self, node: NodeId) {
        self.output = Some(node);
    }

    pub fn output(&self) -> Option<NodeId> {
        self.output
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn input_count(&self) -> usize {
        self.inputs.len()
    }

    pub fn edge_count(&self) -> usize {
        self.nodes.iter().map(|n| n.inputs.len()).sum()
    }

    pub fn parameter_count(&self) -> usize {
        self.params.trainable_count()
    }

    pub fn set_input_requires_grad(&mut self, slot: usize, on: bool) {
        self.inputs[slot].requires_grad = on;
        if !on {
            self.inputs[slot].grad = None;
        }
    }

    pub fn input_grad(&self, slot: usize) -> Option<&Tensor<T>> {
        self.inputs[slot].grad.as_ref()
    }

    /// Enables hashing of every relu mask and pool argmax during forward.
    pub fn track_kinks(&mut self, on: bool) {
        self.track_kinks = on;
    }

    /// Hash of the piecewise-linear branch choices made by the last forward.
    pub fn kink_signature(&self) -> u64 {
        self.kink_signature
    }

    pub fn zero_grads(&mut self) {
        for p in self.params.iter_mut() {
            if p.trainable {
                p.tensor.zero_grad();
            }
        }
        for s in &mut self.inputs {
            s.grad = None;
        }
    }

    /// Statically derived output shape of every node.
    pub fn infer_shapes(&self, input_shapes: &[Vec<usize>]) -> Result<Vec<Vec<usize>>> {
        if input_shapes.len() != self.inputs.len() {
            return Err(Error::config(format!(
                "graph has {} inputs, got {} shapes",
                self.inputs.len(),
                input_shapes.len()
            )));
        }
        let mut shapes: Vec<Vec<usize>> = Vec::with_capacity(self.nodes.len());
        for node in &self.nodes {
            let ins: Vec<&Vec<usize>> = node.inputs.iter().map(|&i| &shapes[i]).collect();
            let s = match &node.op {
                Op::Input { slot } => input_shapes[*slot].clone(),
                Op::Conv2d { weight, .. } => {
                    let w = self.params.get(*weight).tensor.shape();
                    ops::check_conv(ins[0], w, 1).map_err(|e| self.node_err(node, e))?;
                    vec![ins[0][0], w[0], ins[0][2], ins[0][3]]
                }
                Op::BatchNorm { .. } | Op::Relu => ins[0].clone(),
                Op::Add => {
                    if ins.iter().any(|s| *s != ins[0]) {
                        return Err(Error::config(format!("{}: add inputs differ in shape", node.name)));
                    }
                    ins[0].clone()
                }
                Op::Concat { parts } => {
                    let mut it = ins.iter();
                    let mut c = 0;
                    for p in parts {
                        match p {
                            ConcatPart::Input => {
                                let s = it.next().expect("arity checked");
                                if s[0] != ins[0][0] || s[2..] != ins[0][2..] {
                                    return Err(Error::config(format!("{}: concat inputs differ", node.name)));
                                }
                                c += s[1];
                            }
                            ConcatPart::Zeros(z) => c += z,
                        }
                    }
                    vec![ins[0][0], c, ins[0][2], ins[0][3]]
                }
                Op::MaxPool2 => {
                    if ins[0][2] % 2 != 0 || ins[0][3] % 2 != 0 {
                        return Err(Error::config(format!("{}: odd extent before pooling", node.name)));
                    }
                    vec![ins[0][0], ins[0][1], ins[0][2] / 2, ins[0][3] / 2]
                }
                Op::Upsample2 => vec![ins[0][0], ins[0][1], ins[0][2] * 2, ins[0][3] * 2],
                Op::DownscaleAvg { factor } => {
                    if ins[0][2] % factor != 0 || ins[0][3] % factor != 0 {
                        return Err(Error::config(format!("{}: extent not divisible by {factor}", node.name)));
                    }
                    vec![ins[0][0], ins[0][1], ins[0][2] / factor, ins[0][3] / factor]
                }
                Op::MseLoss => vec![1],
            };
            shapes.push(s);
        }
        Ok(shapes)
    }

    fn node_err(&self, node: &Node, e: Error) -> Error {
        match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", node.name)),
            other => other,
        }
    }

    /// Runs the graph and returns the output node's value. Training-mode
    /// passes keep activations for a following `backward`.
    pub fn forward(&mut self, inputs: &[&Tensor<T>], mode: Mode) -> Result<Tensor<T>> {
        self.forward_impl(inputs, mode, mode == Mode::Train)
    }

    /// Like `forward`, but always keeps activations so that an
    /// inference-mode pass can be differentiated too.
    pub fn forward_retained(&mut self, inputs: &[&Tensor<T>], mode: Mode) -> Result<Tensor<T>> {
        self.forward_impl(inputs, mode, true)
    }

    fn forward_impl(&mut self, inputs: &[&Tensor<T>], mode: Mode, retain: bool) -> Result<Tensor<T>> {
        let output = self.output.ok_or_else(|| Error::State("graph has no output node".into()))?;
        if inputs.len() != self.inputs.len() {
            return Err(Error::config(format!("graph expects {} inputs, got {}", self.inputs.len(), inputs.len())));
        }
        self.state = None;
        let n = self.nodes.len();
        // In inference nothing is kept for backward, so values die at their last use.
        let mut last_use = vec![0usize; n];
        for (i, node) in self.nodes.iter().enumerate() {
            for &j in &node.inputs {
                last_use[j] = i;
            }
        }
        last_use[output] = usize::MAX;
        let mut values: Vec<Option<Tensor<T>>> = (0..n).map(|_| None).collect();
        let mut aux: Vec<Aux> = (0..n).map(|_| Aux::None).collect();
        let mut kink = 0xcbf2_9ce4_8422_2325u64;
        for i in 0..n {
            let node = &self.nodes[i];
            let get = |k: usize| -> &Tensor<T> { values[node.inputs[k]].as_ref().expect("topological order") };
            let out = match &node.op {
                Op::Input { slot } => Ok(inputs[*slot].clone()),
                Op::Conv2d { weight, bias, dilation } => ops::conv2d(
                    get(0),
                    &self.params.get(*weight).tensor,
                    bias.map(|b| &self.params.get(b).tensor),
                    *dilation,
                ),
                Op::BatchNorm { scale, shift, running_mean, running_var, eps, .. } => {
                    let (s, h) = (&self.params.get(*scale).tensor, &self.params.get(*shift).tensor);
                    match mode {
                        Mode::Train => ops::batch_norm_train(get(0), s, h, *eps).map(|(y, st)| {
                            aux[i] = Aux::Bn(st);
                            y
                        }),
                        Mode::Infer => {
                            let (rm, rv) =
                                (&self.params.get(*running_mean).tensor, &self.params.get(*running_var).tensor);
                            ops::batch_norm_infer(get(0), s, h, rm, rv, *eps)
                        }
                    }
                }
                Op::Relu => {
                    let y = ops::relu(get(0));
                    if self.track_kinks {
                        for v in y.data() {
                            kink = fnv(kink, (*v > T::zero()) as u64);
                        }
                    }
                    Ok(y)
                }
                Op::Add => {
                    let ins: Vec<&Tensor<T>> = (0..node.inputs.len()).map(get).collect();
                    ops::add(&ins)
                }
                Op::Concat { parts } => {
                    let ins: Vec<&Tensor<T>> = (0..node.inputs.len()).map(get).collect();
                    ops::concat(&ins, parts)
                }
                Op::MaxPool2 => ops::max_pool2(get(0)).map(|(y, arg)| {
                    if self.track_kinks {
                        for &a in &arg {
                            kink = fnv(kink, a as u64);
                        }
                    }
                    if retain {
                        aux[i] = Aux::Pool(arg);
                    }
                    y
                }),
                Op::Upsample2 => ops::upsample2(get(0)),
                Op::DownscaleAvg { factor } => ops::downscale_avg(get(0), *factor),
                Op::MseLoss => ops::mse_loss(get(0), get(1)).map(|(l, _)| Tensor::full(&[1], T::from_f64_lossy(l))),
            }
            .map_err(|e| self.node_err(node, e))?;
            if !out.is_finite() {
                return Err(Error::Numeric { node: node.name.clone(), message: "non-finite forward value".into() });
            }
            values[i] = Some(out);
            if !retain {
                for &j in &self.nodes[i].inputs {
                    if last_use[j] == i {
                        values[j] = None;
                    }
                }
            }
        }
        if mode == Mode::Train {
            self.update_running_stats(&aux);
        }
        self.kink_signature = kink;
        let result = values[output].clone().expect("output computed");
        if retain {
            self.state = Some(ForwardState { values, aux, mode });
        }
        Ok(result)
    }

    fn update_running_stats(&mut self, aux: &[Aux]) {
        for (i, node) in self.nodes.iter().enumerate() {
            let (Op::BatchNorm { running_mean, running_var, momentum, .. }, Aux::Bn(st)) = (&node.op, &aux[i]) else {
                continue;
            };
            let m = *momentum;
            let rm = self.params.get_mut(*running_mean).tensor.data_mut();
            for (r, &v) in rm.iter_mut().zip(&st.mean) {
                *r = T::from_f64_lossy(m * r.to_f64_lossy() + (1.0 - m) * v);
            }
            let rv = self.params.get_mut(*running_var).tensor.data_mut();
            for (r, &v) in rv.iter_mut().zip(&st.var) {
                *r = T::from_f64_lossy(m * r.to_f64_lossy() + (1.0 - m) * v);
            }
        }
    }

    /// Which nodes lie on a path from a trainable parameter or a
    /// gradient-requiring input.
    fn needs_grad(&self) -> Vec<bool> {
        let mut need = vec![false; self.nodes.len()];
        for (i, node) in self.nodes.iter().enumerate() {
            need[i] = match &node.op {
                Op::Input { slot } => self.inputs[*slot].requires_grad,
                op => op.params().iter().any(|p| self.params.get(*p).trainable) || node.inputs.iter().any(|&j| need[j]),
            };
        }
        need
    }

    /// Back-propagates `grad_output` (same shape as the output) and
    /// accumulates into parameter and input gradients.
    pub fn backward(&mut self, grad_output: &Tensor<T>) -> Result<()> {
        let state =
            self.state.take().ok_or_else(|| Error::State("backward called without a preceding forward".into()))?;
        let output = self.output.expect("checked in forward");
        let out_shape = state.values[output].as_ref().expect("output value").shape().to_vec();
        if grad_output.shape() != out_shape.as_slice() {
            return Err(Error::config(format!(
                "output gradient {:?} does not match output {:?}",
                grad_output.shape(),
                out_shape
            )));
        }
        let need = self.needs_grad();
        let n = self.nodes.len();
        let mut grads: Vec<Option<Vec<T>>> = (0..n).map(|_| None).collect();
        grads[output] = Some(grad_output.data().to_vec());
        for i in (0..n).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !need[i] {
                continue;
            }
            let node = &self.nodes[i];
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numeric { node: node.name.clone(), message: "non-finite gradient".into() });
            }
            let val = |k: usize| -> &Tensor<T> { state.values[node.inputs[k]].as_ref().expect("cached activation") };
            let push = |grads: &mut Vec<Option<Vec<T>>>, j: NodeId, delta: Vec<T>| match &mut grads[j] {
                Some(acc) => acc.iter_mut().zip(&delta).for_each(|(a, d)| *a += *d),
                slot @ None => *slot = Some(delta),
            };
            match &node.op {
                Op::Input { slot } => {
                    let shape = state.values[i].as_ref().expect("input value").shape().to_vec();
                    let slot = &mut self.inputs[*slot];
                    match &mut slot.grad {
                        Some(t) => t.data_mut().iter_mut().zip(&g).for_each(|(a, d)| *a += *d),
                        None => slot.grad = Some(Tensor::new(&shape, g)?),
                    }
                }
                Op::Conv2d { weight, bias, dilation } => {
                    let x = val(0);
                    let cg =
                        ops::conv2d_backward(x, &self.params.get(*weight).tensor, *dilation, &g, need[node.inputs[0]])?;
                    if self.params.get(*weight).trainable {
                        self.params.get_mut(*weight).tensor.accumulate_grad(&cg.weight);
                    }
                    if let Some(b) = bias {
                        if self.params.get(*b).trainable {
                            self.params.get_mut(*b).tensor.accumulate_grad(&cg.bias);
                        }
                    }
                    if let Some(gx) = cg.input {
                        push(&mut grads, node.inputs[0], gx);
                    }
                }
                Op::BatchNorm { scale, shift, running_mean, running_var, eps, .. } => {
                    let x = val(0);
                    let bg = match (&state.aux[i], state.mode) {
                        (Aux::Bn(st), Mode::Train) => ops::batch_norm_backward(
                            x,
                            &self.params.get(*scale).tensor,
                            &st.mean,
                            &st.inv_std,
                            true,
                            &g,
                        )?,
                        _ => {
                            let mean: Vec<f64> =
                                self.params.get(*running_mean).tensor.data().iter().map(|v| v.to_f64_lossy()).collect();
                            let inv: Vec<f64> = self
                                .params
                                .get(*running_var)
                                .tensor
                                .data()
                                .iter()
                                .map(|v| 1.0 / (v.to_f64_lossy() + eps).sqrt())
                                .collect();
                            ops::batch_norm_backward(x, &self.params.get(*scale).tensor, &mean, &inv, false, &g)?
                        }
                    };
                    if self.params.get(*scale).trainable {
                        self.params.get_mut(*scale).tensor.accumulate_grad(&bg.scale);
                    }
                    if self.params.get(*shift).trainable {
                        self.params.get_mut(*shift).tensor.accumulate_grad(&bg.shift);
                    }
                    if need[node.inputs[0]] {
                        push(&mut grads, node.inputs[0], bg.input);
                    }
                }
                Op::Relu => {
                    let y = state.values[i].as_ref().expect("relu output");
                    if need[node.inputs[0]] {
                        push(&mut grads, node.inputs[0], ops::relu_backward(y, &g));
                    }
                }
                Op::Add => {
                    for &j in &node.inputs {
                        if need[j] {
                            push(&mut grads, j, g.clone());
                        }
                    }
                }
                Op::Concat { parts } => {
                    let chans: Vec<usize> = (0..node.inputs.len()).map(|k| val(k).shape()[1]).collect();
                    let out_shape = state.values[i].as_ref().expect("concat output").shape();
                    for (k, gk) in ops::concat_backward(&chans, parts, out_shape, &g).into_iter().enumerate() {
                        if need[node.inputs[k]] {
                            push(&mut grads, node.inputs[k], gk);
                        }
                    }
                }
                Op::MaxPool2 => {
                    let Aux::Pool(arg) = &state.aux[i] else {
                        return Err(Error::State(format!("{}: missing pooling indices", node.name)));
                    };
                    if need[node.inputs[0]] {
                        push(&mut grads, node.inputs[0], ops::max_pool2_backward(val(0).len(), arg, &g));
                    }
                }
                Op::Upsample2 => {
                    if need[node.inputs[0]] {
                        push(&mut grads, node.inputs[0], ops::upsample2_backward(val(0).shape(), &g));
                    }
                }
                Op::DownscaleAvg { factor } => {
                    if need[node.inputs[0]] {
                        push(&mut grads, node.inputs[0], ops::downscale_avg_backward(val(0).shape(), *factor, &g));
                    }
                }
                Op::MseLoss => {
                    let (p, t) = (val(0), val(1));
                    let (_, dp) = ops::mse_loss(p, t)?;
                    let s = g[0];
                    if need[node.inputs[0]] {
                        push(&mut grads, node.inputs[0], dp.iter().map(|&v| v * s).collect());
                    }
                    if need[node.inputs[1]] {
                        push(&mut grads, node.inputs[1], dp.iter().map(|&v| -v * s).collect());
                    }
                }
            }
        }
        for (_, p) in self.params.iter() {
            if let Some(g) = p.tensor.grad() {
                if g.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Numeric {
                        node: p.name.clone(),
                        message: "non-finite parameter gradient".into(),
                    });
                }
            }
        }
        Ok(())
    }

    /// Backward from a scalar output (e.g. an `mse_loss` node).
    pub fn backward_scalar(&mut self) -> Result<()> {
        self.backward(&Tensor::full(&[1], T::one()))
    }
}

fn fnv(h: u64, v: u64) -> u64 {
    (h ^ v).wrapping_mul(0x0100_0000_01b3)
}
