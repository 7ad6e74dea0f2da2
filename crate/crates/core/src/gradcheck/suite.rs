//! The standing gradient suite: every op in isolation plus whole desk-scale
//! networks.

use super::{gradient_check, GradCheckOptions, GradCheckReport};
use crate::arch::{build_network, Arch, Init, NetConfig};
use crate::error::Result;
use crate::graph::{Graph, Mode, Op};
use crate::ops::ConcatPart;
use crate::tensor::Tensor;

/// Pass threshold on the maximum relative error.
pub const TOLERANCE: f64 = 1e-4;

#[derive(Clone, Debug)]
pub struct CaseResult {
    pub name: String,
    pub report: GradCheckReport,
}

impl CaseResult {
    pub fn passed(&self) -> bool {
        self.report.checked > 0 && self.report.max_rel_error < TOLERANCE
    }
}

fn wave(shape: &[usize], k: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |i| ((i as f64 + 1.0) * k).sin() + 0.1 * ((i as f64) * 0.37 * k).cos())
}

fn check(name: &str, mut g: Graph<f64>, inputs: &[&Tensor<f64>], mode: Mode) -> Result<CaseResult> {
    for slot in 0..g.input_count() {
        g.set_input_requires_grad(slot, true);
    }
    let report = gradient_check(&mut g, inputs, &GradCheckOptions { mode, ..Default::default() })?;
    Ok(CaseResult { name: name.to_string(), report })
}

fn unary(op: Op) -> Graph<f64> {
    let mut g = Graph::new();
    let x = g.add_input("x");
    let y = g.add_node("y", op, &[x]).expect("single input");
    g.set_output(y);
    g
}

fn conv(dilation: usize) -> Result<CaseResult> {
    let mut g = Graph::new();
    let x = g.add_input("x");
    let w = g.add_param("w", wave(&[3, 2, 3, 3], 0.7), true)?;
    let b = g.add_param("b", wave(&[3], 1.3), true)?;
    let y = g.add_node("y", Op::Conv2d { weight: w, bias: Some(b), dilation }, &[x])?;
    g.set_output(y);
    check(&format!("conv3x3_d{dilation}"), g, &[&wave(&[2, 2, 7, 6], 0.3)], Mode::Train)
}

fn pointwise() -> Result<CaseResult> {
    let mut g = Graph::new();
    let x = g.add_input("x");
    let w = g.add_param("w", wave(&[4, 3, 1, 1], 0.9), true)?;
    let y = g.add_node("y", Op::Conv2d { weight: w, bias: None, dilation: 1 }, &[x])?;
    g.set_output(y);
    check("conv1x1", g, &[&wave(&[1, 3, 5, 5], 0.5)], Mode::Train)
}

fn batch_norm(mode: Mode) -> Result<CaseResult> {
    let mut g = Graph::new();
    let x = g.add_input("x");
    let scale = g.add_param("scale", wave(&[3], 0.8), true)?;
    let shift = g.add_param("shift", wave(&[3], 0.2), true)?;
    let running_mean = g.add_param("rm", wave(&[3], 0.4), false)?;
    let running_var = g.add_param("rv", Tensor::from_fn(&[3], |i| 0.5 + i as f64), false)?;
    let y =
        g.add_node("y", Op::BatchNorm { scale, shift, running_mean, running_var, eps: 1e-5, momentum: 0.9 }, &[x])?;
    g.set_output(y);
    let name = if mode == Mode::Train { "batch_norm_train" } else { "batch_norm_infer" };
    check(name, g, &[&wave(&[3, 3, 4, 4], 0.61)], mode)
}

fn nary(name: &str, op: Op, inputs: &[Tensor<f64>]) -> Result<CaseResult> {
    let mut g = Graph::new();
    let ids: Vec<_> = (0..inputs.len()).map(|i| g.add_input(&format!("x{i}"))).collect();
    let y = g.add_node("y", op, &ids)?;
    g.set_output(y);
    let refs: Vec<&Tensor<f64>> = inputs.iter().collect();
    check(name, g, &refs, Mode::Train)
}

/// One case per op; dilated convs at rates 1, 2 and 3.
pub fn op_cases() -> Result<Vec<CaseResult>> {
    let s = [1, 2, 3, 3];
    Ok(vec![
        conv(1)?,
        conv(2)?,
        conv(3)?,
        pointwise()?,
        batch_norm(Mode::Train)?,
        batch_norm(Mode::Infer)?,
        check("relu", unary(Op::Relu), &[&wave(&[1, 2, 5, 5], 0.9)], Mode::Train)?,
        check("max_pool2", unary(Op::MaxPool2), &[&wave(&[2, 2, 6, 4], 0.77)], Mode::Train)?,
        check("upsample2", unary(Op::Upsample2), &[&wave(&[1, 2, 3, 4], 0.5)], Mode::Train)?,
        check("downscale_avg4", unary(Op::DownscaleAvg { factor: 4 }), &[&wave(&[1, 1, 8, 8], 0.5)], Mode::Train)?,
        nary("add3", Op::Add, &[wave(&s, 0.1), wave(&s, 0.2), wave(&s, 0.3)])?,
        nary(
            "concat",
            Op::Concat { parts: vec![ConcatPart::Input, ConcatPart::Zeros(2), ConcatPart::Input] },
            &[wave(&[2, 1, 3, 3], 0.4), wave(&[2, 3, 3, 3], 0.9)],
        )?,
        nary("mse_loss", Op::MseLoss, &[wave(&[2, 1, 4, 4], 0.3), wave(&[2, 1, 4, 4], 0.8)])?,
    ])
}

/// Depth 3, base 4, 32x32, batch 2.
pub fn network_config(arch: Arch) -> NetConfig {
    NetConfig { depth: 3, base_filters: 4, filter_cap: 52, input_size: 32, ..NetConfig::desk(arch) }
}

/// Whole-network check on a sampled subset of every tensor. Infer mode first
/// settles the running statistics with training forwards.
pub fn network_case(arch: Arch, mode: Mode) -> Result<CaseResult> {
    let mut g = build_network::<f64>(&network_config(arch), Init::Seeded(11))?.graph;
    g.set_input_requires_grad(0, true);
    let x = Tensor::from_fn(&[2, 1, 32, 32], |i| ((i * 7919) % 1000) as f64 / 1000.0);
    if mode == Mode::Infer {
        for _ in 0..40 {
            g.forward(&[&x], Mode::Train)?;
        }
    }
    let opts = GradCheckOptions { mode, max_entries_per_tensor: Some(12), seed: 3, ..Default::default() };
    let report = gradient_check(&mut g, &[&x], &opts)?;
    let tag = if mode == Mode::Train { "train" } else { "infer" };
    Ok(CaseResult { name: format!("{arch}_network_{tag}"), report })
}

pub fn network_cases() -> Result<Vec<CaseResult>> {
    Ok(vec![
        network_case(Arch::BruNet, Mode::Train)?,
        network_case(Arch::BruNet, Mode::Infer)?,
        network_case(Arch::UNet, Mode::Train)?,
    ])
}
