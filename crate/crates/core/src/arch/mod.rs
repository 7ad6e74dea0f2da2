//! Network configurations and graph builders for BRU-net and the baseline U-net.

mod analysis;
mod build;

pub use analysis::{
    block_param_counts, block_param_formula, count_parameters, node_receptive_field, receptive_field, receptive_fields,
    unet_simplified_bound, NodeField, ReceptiveField,
};
pub use build::{build_block, build_network, BlockKind, Init, Network};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Arch {
    BruNet,
    UNet,
}

impl Arch {
    pub fn name(self) -> &'static str {
        match self {
            Arch::BruNet => "brunet",
            Arch::UNet => "unet",
        }
    }
}

impl std::str::FromStr for Arch {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "brunet" => Ok(Arch::BruNet),
            "unet" => Ok(Arch::UNet),
            other => Err(Error::config(format!("unknown architecture {other:?} (expected brunet or unet)"))),
        }
    }
}

impl std::fmt::Display for Arch {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NetConfig {
    pub arch: Arch,
    /// Number of pooling steps.
    pub depth: usize,
    pub base_filters: usize,
    /// Upper bound of the BRU-net filter schedule (unused by U-net).
    pub filter_cap: usize,
    pub input_size: usize,
    /// Disabled during autoencoder pretraining; the skip slots are then fed
    /// with zeros so the parameter set is unchanged.
    pub skips_enabled: bool,
    /// Dilation rates of the parallel 3x3 paths in every BRU-net block.
    pub dilations: Vec<usize>,
    /// Dilated residual blocks per BRU-net level; the last one of each
    /// level performs the pool/upsample.
    pub blocks_per_level: usize,
}

impl NetConfig {
    /// Full-scale widths (base 32, cap 416) at 512x512.
    pub fn full_scale(arch: Arch, depth: usize) -> Self {
        Self {
            arch,
            depth,
            base_filters: 32,
            filter_cap: 416,
            input_size: 512,
            skips_enabled: true,
            dilations: vec![1, 3, 5],
            blocks_per_level: 2,
        }
    }

    /// Desk-scale profile: 128x128 input, base 8, cap 13*base.
    pub fn desk(arch: Arch) -> Self {
        Self { base_filters: 8, filter_cap: 104, input_size: 128, ..Self::full_scale(arch, 5) }
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 {
            return Err(Error::config("depth must be at least 1"));
        }
        if self.base_filters == 0 {
            return Err(Error::config("base_filters must be positive"));
        }
        if self.arch == Arch::BruNet && self.filter_cap < self.base_filters {
            return Err(Error::config("filter_cap must be at least base_filters"));
        }
        if self.input_size == 0 || self.depth >= usize::BITS as usize || self.input_size % (1usize << self.depth) != 0 {
            return Err(Error::config(format!("input_size {} is not divisible by 2^{}", self.input_size, self.depth)));
        }
        if self.dilations.is_empty() || self.dilations.contains(&0) {
            return Err(Error::config("dilations must be a non-empty list of positive rates"));
        }
        if self.blocks_per_level == 0 {
            return Err(Error::config("blocks_per_level must be at least 1"));
        }
        Ok(())
    }

    /// Per-level channel widths, top level first, `depth + 1` entries.
    pub fn level_filters(&self) -> Vec<usize> {
        match self.arch {
            Arch::BruNet => fibonacci_filters(self.base_filters, self.depth, self.filter_cap),
            Arch::UNet => (0..=self.depth).map(|l| self.base_filters << l).collect(),
        }
    }
}

/// Capped Fibonacci filter schedule: `base, 2*base, then f[n-1] + f[n-2]`,
/// clamped at `cap`, one entry per level including the bottom.
pub fn fibonacci_filters(base: usize, depth: usize, cap: usize) -> Vec<usize> {
    let mut f = Vec::with_capacity(depth + 1);
    for n in 0..=depth {
        let v = match n {
            0 => base,
            1 => 2 * base,
            _ => f[n - 1] + f[n - 2],
        };
        f.push(v.min(cap));
    }
    f
}
