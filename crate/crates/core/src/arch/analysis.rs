use super::{build_network, Arch, Init, NetConfig};
use crate::error::{Error, Result};
use crate::graph::{Graph, Op};
use crate::tensor::Scalar;

/// Trainable element count: conv weights and biases, batch-norm scale and
/// shift. Running statistics are excluded.
pub fn count_parameters<T: Scalar>(g: &Graph<T>) -> usize {
    g.parameter_count()
}

/// Closed-form parameter count of one dilated residual block.
pub fn block_param_formula(in_ch: usize, out_ch: usize, paths: usize) -> usize {
    in_ch * out_ch + out_ch + paths * (9 * out_ch * out_ch) + paths * 2 * out_ch
}

/// Trainable parameters grouped by block, in build order. Parameter names
/// are `level.block.layer.tensor` for BRU-net and `level.layer.tensor` for
/// U-net; the group key is the level plus the block when present.
pub fn block_param_counts<T: Scalar>(g: &Graph<T>) -> Vec<(String, usize)> {
    let mut out: Vec<(String, usize)> = Vec::new();
    for (_, p) in g.params.iter().filter(|(_, p)| p.trainable) {
        let mut parts = p.name.split('.');
        let level = parts.next().unwrap_or_default();
        let key = match parts.next() {
            Some(b) if b.len() > 1 && b.starts_with('b') && b[1..].bytes().all(|c| c.is_ascii_digit()) => {
                format!("{level}.{b}")
            }
            _ => level.to_string(),
        };
        match out.last_mut() {
            Some((k, n)) if *k == key => *n += p.tensor.len(),
            _ => out.push((key, p.tensor.len())),
        }
    }
    out
}

/// Receptive-field state of one node: field extent and stride, both in
/// input pixels.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NodeField {
    pub size: f64,
    pub jump: f64,
}

/// Per-node fields by the usual recurrence: a k-tap conv with dilation d
/// adds `(k-1)*d*jump`, 2x2 pooling adds `jump` and doubles it, nearest
/// upsampling halves it. Merges take the widest input.
pub fn receptive_fields<T: Scalar>(g: &Graph<T>) -> Vec<NodeField> {
    let mut fields: Vec<NodeField> = Vec::with_capacity(g.nodes().len());
    for node in g.nodes() {
        let widest = node.inputs.iter().map(|&i| fields[i]).fold(NodeField { size: 1.0, jump: 1.0 }, |a, b| {
            if b.size > a.size {
                b
            } else {
                a
            }
        });
        let f = match &node.op {
            Op::Input { .. } => NodeField { size: 1.0, jump: 1.0 },
            Op::Conv2d { weight, dilation, .. } => {
                let k = g.params.get(*weight).tensor.shape()[2];
                NodeField { size: widest.size + ((k - 1) * dilation) as f64 * widest.jump, ..widest }
            }
            Op::MaxPool2 => NodeField { size: widest.size + widest.jump, jump: widest.jump * 2.0 },
            Op::DownscaleAvg { factor } => {
                let f = *factor as f64;
                NodeField { size: widest.size + (f - 1.0) * widest.jump, jump: widest.jump * f }
            }
            Op::Upsample2 => NodeField { jump: widest.jump / 2.0, ..widest },
            Op::Concat { .. } | Op::Add => {
                // all merged tensors share one resolution
                let jump = node.inputs.first().map_or(1.0, |&i| fields[i].jump);
                NodeField { size: widest.size, jump }
            }
            Op::BatchNorm { .. } | Op::Relu | Op::MseLoss => widest,
        };
        fields.push(f);
    }
    fields
}

/// Field of the named node, rounded to whole pixels.
pub fn node_receptive_field<T: Scalar>(g: &Graph<T>, name: &str) -> Result<usize> {
    let i = g
        .nodes()
        .iter()
        .position(|n| n.name == name)
        .ok_or_else(|| Error::config(format!("no node named {name:?}")))?;
    Ok(receptive_fields(g)[i].size.round() as usize)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ReceptiveField {
    /// Field of the bottom-level features, before any upsampling.
    pub deepest: usize,
    /// Field of one output pixel.
    pub output: usize,
}

/// Receptive fields of a network built from `cfg`.
pub fn receptive_field(cfg: &NetConfig) -> Result<ReceptiveField> {
    let net = build_network::<f32>(&NetConfig { input_size: 1 << cfg.depth, ..cfg.clone() }, Init::Zeros)?;
    let g = &net.graph;
    let deepest = match cfg.arch {
        Arch::BruNet => format!("bottom.b{}.relu", cfg.blocks_per_level - 1),
        Arch::UNet => format!("enc{}.conv1.relu", cfg.depth),
    };
    let fields = receptive_fields(g);
    let output = g.output().map_or(1.0, |o| fields[o].size);
    Ok(ReceptiveField { deepest: node_receptive_field(g, &deepest)?, output: output.round() as usize })
}

/// The plain-U-net rule of thumb: `3 * 2^depth` pixels.
pub fn unet_simplified_bound(depth: usize) -> usize {
    3 << depth
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::{build_block, BlockKind};
    use crate::tensor::Tensor;

    #[test]
    fn block_formula_matches_builder() {
        for (ci, co) in [(1, 4), (8, 8), (17, 5), (33, 16)] {
            for kind in [BlockKind::Down, BlockKind::Up, BlockKind::Same] {
                let g = build_block::<f32>(kind, ci, co, &[1, 3, 5], Init::Zeros).unwrap();
                assert_eq!(count_parameters(&g), block_param_formula(ci, co, 3));
            }
        }
        assert_eq!(block_param_formula(8, 8, 3), 64 + 8 + 3 * (9 * 64) + 48);
    }

    #[test]
    fn single_conv_field() {
        let mut g = Graph::<f32>::new();
        let x = g.add_input("x");
        let w = g.add_param("w", Tensor::zeros(&[1, 1, 3, 3]), true).unwrap();
        let y = g.add_node("y", Op::Conv2d { weight: w, bias: None, dilation: 1 }, &[x]).unwrap();
        g.set_output(y);
        assert_eq!(node_receptive_field(&g, "y").unwrap(), 3);
    }

    #[test]
    fn block_down_prepool_field() {
        let g = build_block::<f32>(BlockKind::Down, 4, 4, &[1, 3, 5], Init::Zeros).unwrap();
        assert_eq!(node_receptive_field(&g, "block.relu").unwrap(), 11);
        assert_eq!(node_receptive_field(&g, "block.pool").unwrap(), 12);
    }

    #[test]
    fn simplified_bound() {
        assert_eq!(unet_simplified_bound(5), 96);
        assert_eq!(unet_simplified_bound(6), 192);
    }

    #[test]
    fn block_groups() {
        let cfg =
            NetConfig { base_filters: 4, filter_cap: 52, input_size: 32, depth: 3, ..NetConfig::desk(Arch::BruNet) };
        let net = build_network::<f32>(&cfg, Init::Zeros).unwrap();
        let groups = block_param_counts(&net.graph);
        assert_eq!(groups.iter().map(|(_, n)| n).sum::<usize>(), count_parameters(&net.graph));
        assert_eq!(groups[0].0, "down0.b0");
        assert_eq!(groups[0].1, block_param_formula(1, 4, 3));
        assert_eq!(groups.last().unwrap().0, "head");
    }
}
