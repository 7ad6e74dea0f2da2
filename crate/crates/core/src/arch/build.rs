use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Arch, NetConfig};
use crate::error::{Error, Result};
use crate::graph::{Graph, Mode, NodeId, Op};
use crate::ops::ConcatPart;
use crate::tensor::{Scalar, Tensor};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.9;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BlockKind {
    /// Ends with 2x2 max pooling.
    Down,
    /// Ends with 2x nearest-neighbour upsampling.
    Up,
    /// No resampling.
    Same,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Init {
    /// Weights uniform in `[-a, a]` with `a = sqrt(6 / fan_in)`, conv biases
    /// uniform in `[-b, b]` with `b = sqrt(1 / fan_in)`.
    Seeded(u64),
    /// All weights zero. Allocation only; used by the static analyzers.
    Zeros,
}

/// A piece of a block's concatenated input.
#[derive(Clone, Copy, Debug)]
enum Part {
    Node(NodeId, usize),
    /// Disabled skip connection of the given width.
    Zeros(usize),
}

struct Builder<'g, T> {
    g: &'g mut Graph<T>,
    rng: Option<ChaCha8Rng>,
}

impl<T: Scalar> Builder<'_, T> {
    fn uniform(&mut self, n: usize, bound: f64) -> Vec<T> {
        match &mut self.rng {
            Some(rng) => (0..n).map(|_| T::from_f64_lossy(rng.random_range(-bound..bound))).collect(),
            None => vec![T::zero(); n],
        }
    }

    fn conv(
        &mut self,
        name: &str,
        x: NodeId,
        cin: usize,
        cout: usize,
        k: usize,
        dilation: usize,
        bias: bool,
    ) -> Result<NodeId> {
        let fan_in = cin * k * k;
        let w = self.uniform(cout * fan_in, (6.0 / fan_in as f64).sqrt());
        let wid = self.g.add_param(&format!("{name}.weight"), Tensor::new(&[cout, cin, k, k], w)?, true)?;
        let bid = if bias {
            let b = self.uniform(cout, (1.0 / fan_in as f64).sqrt());
            Some(self.g.add_param(&format!("{name}.bias"), Tensor::new(&[cout], b)?, true)?)
        } else {
            None
        };
        self.g.add_node(name, Op::Conv2d { weight: wid, bias: bid, dilation }, &[x])
    }

    fn batch_norm(&mut self, name: &str, x: NodeId, c: usize) -> Result<NodeId> {
        let scale = self.g.add_param(&format!("{name}.scale"), Tensor::full(&[c], T::one()), true)?;
        let shift = self.g.add_param(&format!("{name}.shift"), Tensor::zeros(&[c]), true)?;
        let running_mean = self.g.add_param(&format!("{name}.running_mean"), Tensor::zeros(&[c]), false)?;
        let running_var = self.g.add_param(&format!("{name}.running_var"), Tensor::full(&[c], T::one()), false)?;
        self.g.add_node(
            name,
            Op::BatchNorm { scale, shift, running_mean, running_var, eps: BN_EPS, momentum: BN_MOMENTUM },
            &[x],
        )
    }

    fn relu(&mut self, name: &str, x: NodeId) -> Result<NodeId> {
        self.g.add_node(name, Op::Relu, &[x])
    }

    /// Concatenates `parts` along channels; a single real part passes through.
    fn gather(&mut self, name: &str, parts: &[Part]) -> Result<(NodeId, usize)> {
        let width = parts.iter().map(|p| match p {
            Part::Node(_, c) | Part::Zeros(c) => *c,
        });
        let width: usize = width.sum();
        if let [Part::Node(n, _)] = parts {
            return Ok((*n, width));
        }
        let inputs: Vec<NodeId> =
            parts.iter().filter_map(|p| if let Part::Node(n, _) = p { Some(*n) } else { None }).collect();
        let layout = parts
            .iter()
            .map(|p| match p {
                Part::Node(..) => ConcatPart::Input,
                Part::Zeros(c) => ConcatPart::Zeros(*c),
            })
            .collect();
        Ok((self.g.add_node(name, Op::Concat { parts: layout }, &inputs)?, width))
    }

    /// Bottleneck 1x1 conv, parallel dilated 3x3 conv + batch-norm paths
    /// summed with the bottleneck output, relu, then the block's resampling.
    /// Returns `(pre_resample, output)`.
    fn block(
        &mut self,
        name: &str,
        kind: BlockKind,
        parts: &[Part],
        out_ch: usize,
        dilations: &[usize],
    ) -> Result<(NodeId, NodeId)> {
        if out_ch == 0 {
            return Err(Error::config(format!("{name}: block width must be positive")));
        }
        let (x, in_ch) = self.gather(&format!("{name}.concat"), parts)?;
        if in_ch == 0 {
            return Err(Error::config(format!("{name}: block input has no channels")));
        }
        let neck = self.conv(&format!("{name}.bottleneck"), x, in_ch, out_ch, 1, 1, true)?;
        let mut summands = Vec::with_capacity(dilations.len() + 1);
        for &d in dilations {
            let c = self.conv(&format!("{name}.dil{d}"), neck, out_ch, out_ch, 3, d, false)?;
            summands.push(self.batch_norm(&format!("{name}.dil{d}.bn"), c, out_ch)?);
        }
        summands.push(neck);
        let sum = self.g.add_node(&format!("{name}.sum"), Op::Add, &summands)?;
        let act = self.relu(&format!("{name}.relu"), sum)?;
        let out = match kind {
            BlockKind::Down => self.g.add_node(&format!("{name}.pool"), Op::MaxPool2, &[act])?,
            BlockKind::Up => self.g.add_node(&format!("{name}.up"), Op::Upsample2, &[act])?,
            BlockKind::Same => act,
        };
        Ok((act, out))
    }

    /// One level: `count - 1` same-resolution blocks followed by a block of `kind`.
    fn level(
        &mut self,
        name: &str,
        kind: BlockKind,
        parts: &[Part],
        out_ch: usize,
        cfg: &NetConfig,
        count: usize,
    ) -> Result<(NodeId, NodeId)> {
        let mut parts = parts.to_vec();
        for b in 0..count - 1 {
            let (_, out) = self.block(&format!("{name}.b{b}"), BlockKind::Same, &parts, out_ch, &cfg.dilations)?;
            parts = vec![Part::Node(out, out_ch)];
        }
        self.block(&format!("{name}.b{}", count - 1), kind, &parts, out_ch, &cfg.dilations)
    }

    fn conv_relu(&mut self, name: &str, x: NodeId, cin: usize, cout: usize) -> Result<NodeId> {
        let c = self.conv(name, x, cin, cout, 3, 1, true)?;
        self.relu(&format!("{name}.relu"), c)
    }

    fn skip_part(&self, cfg: &NetConfig, node: NodeId, width: usize) -> Part {
        if cfg.skips_enabled {
            Part::Node(node, width)
        } else {
            Part::Zeros(width)
        }
    }

    fn brunet(&mut self, cfg: &NetConfig) -> Result<NodeId> {
        let f = cfg.level_filters();
        let depth = cfg.depth;
        let bpl = cfg.blocks_per_level;
        let image = self.g.add_input("image");
        // image pyramid for context injection at every level
        let mut pyramid = vec![image];
        for l in 1..=depth {
            pyramid.push(self.g.add_node(&format!("image.down{l}"), Op::DownscaleAvg { factor: 1 << l }, &[image])?);
        }

        let mut skips = Vec::with_capacity(depth);
        let mut h = Part::Node(image, 1);
        for (l, &width) in f.iter().enumerate().take(depth) {
            let parts = if l == 0 { vec![h] } else { vec![h, Part::Node(pyramid[l], 1)] };
            let (pre, out) = self.level(&format!("down{l}"), BlockKind::Down, &parts, width, cfg, bpl)?;
            skips.push(pre);
            h = Part::Node(out, width);
        }
        let (_, mut up) =
            self.level("bottom", BlockKind::Up, &[h, Part::Node(pyramid[depth], 1)], f[depth], cfg, bpl)?;
        let mut up_width = f[depth];
        for l in (1..depth).rev() {
            let parts = [Part::Node(up, up_width), self.skip_part(cfg, skips[l], f[l]), Part::Node(pyramid[l], 1)];
            let (_, out) = self.level(&format!("up{l}"), BlockKind::Up, &parts, f[l], cfg, bpl)?;
            up = out;
            up_width = f[l];
        }
        let parts = [Part::Node(up, up_width), self.skip_part(cfg, skips[0], f[0]), Part::Node(image, 1)];
        let mut parts = parts.to_vec();
        let mut last = up;
        for b in 0..bpl {
            let (_, out) = self.block(&format!("out.b{b}"), BlockKind::Same, &parts, f[0], &cfg.dilations)?;
            parts = vec![Part::Node(out, f[0])];
            last = out;
        }
        self.conv("head", last, f[0], 1, 1, 1, true)
    }

    fn unet(&mut self, cfg: &NetConfig) -> Result<NodeId> {
        let c = cfg.level_filters();
        let depth = cfg.depth;
        let image = self.g.add_input("image");
        let mut h = image;
        let mut width = 1;
        let mut skips = Vec::with_capacity(depth);
        for l in 0..=depth {
            let a = self.conv_relu(&format!("enc{l}.conv0"), h, width, c[l])?;
            let b = self.conv_relu(&format!("enc{l}.conv1"), a, c[l], c[l])?;
            width = c[l];
            if l < depth {
                skips.push(b);
                h = self.g.add_node(&format!("enc{l}.pool"), Op::MaxPool2, &[b])?;
            } else {
                h = b;
            }
        }
        for l in (0..depth).rev() {
            let up = self.g.add_node(&format!("dec{l}.up"), Op::Upsample2, &[h])?;
            let up = self.conv_relu(&format!("dec{l}.upconv"), up, c[l + 1], c[l + 1])?;
            let parts = [Part::Node(up, c[l + 1]), self.skip_part(cfg, skips[l], c[l])];
            let (cat, w) = self.gather(&format!("dec{l}.concat"), &parts)?;
            let a = self.conv_relu(&format!("dec{l}.conv0"), cat, w, c[l])?;
            h = self.conv_relu(&format!("dec{l}.conv1"), a, c[l], c[l])?;
        }
        self.conv("head", h, c[0], 1, 1, 1, true)
    }
}

fn new_builder<T: Scalar>(g: &mut Graph<T>, init: Init) -> Builder<'_, T> {
    let rng = match init {
        Init::Seeded(seed) => Some(ChaCha8Rng::seed_from_u64(seed)),
        Init::Zeros => None,
    };
    Builder { g, rng }
}

/// A single block as a standalone graph with one `[B, in_ch, H, W]` input;
/// the output is the resampled block output.
pub fn build_block<T: Scalar>(
    kind: BlockKind,
    in_ch: usize,
    out_ch: usize,
    dilations: &[usize],
    init: Init,
) -> Result<Graph<T>> {
    if in_ch == 0 {
        return Err(Error::config("block input width must be positive"));
    }
    let mut g = Graph::new();
    let x = g.add_input("x");
    let mut b = new_builder(&mut g, init);
    let (_, out) = b.block("block", kind, &[Part::Node(x, in_ch)], out_ch, dilations)?;
    g.set_output(out);
    Ok(g)
}

pub fn build_network<T: Scalar>(cfg: &NetConfig, init: Init) -> Result<Network<T>> {
    cfg.validate()?;
    let mut g = Graph::new();
    let mut b = new_builder(&mut g, init);
    let out = match cfg.arch {
        Arch::BruNet => b.brunet(cfg)?,
        Arch::UNet => b.unet(cfg)?,
    };
    g.set_output(out);
    Ok(Network { cfg: cfg.clone(), graph: g })
}

/// A built network: its configuration plus the graph holding all weights.
pub struct Network<T> {
    pub cfg: NetConfig,
    pub graph: Graph<T>,
}

impl<T: Scalar> Network<T> {
    /// Regression map `[B, 1, H, W]` for a `[B, 1, H, W]` batch.
    pub fn forward(&mut self, batch: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let (_, c, h, w) = batch.dims4()?;
        if c != 1 || h != self.cfg.input_size || w != self.cfg.input_size {
            return Err(Error::config(format!(
                "network expects [B, 1, {s}, {s}] input, got {:?}",
                batch.shape(),
                s = self.cfg.input_size
            )));
        }
        self.graph.forward(&[batch], mode)
    }

    pub fn parameter_count(&self) -> usize {
        self.graph.parameter_count()
    }
}
