use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use brunet::arch::{Arch, NetConfig};
use brunet::data::{AugmentParams, GenParams, NUM_CLASSES, NUM_LAYERS};
use brunet::train::TrainConfig;
use serde::{Deserialize, Serialize};

/// Everything a run needs. Missing keys take the desk-profile defaults;
/// unknown keys are rejected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Drives data generation, weight initialisation and batch order.
    pub seed: u64,
    pub net: NetSection,
    pub train: TrainSection,
    pub augment: AugmentSection,
    pub data: DataSection,
    pub folds: FoldSection,
    pub output: OutputSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetSection {
    pub arch: String,
    pub depth: usize,
    pub base_filters: usize,
    pub filter_cap: usize,
    pub input_size: usize,
    pub dilations: Vec<usize>,
    pub blocks_per_level: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub batch_size: usize,
    pub lr_init: f64,
    pub lr_floor: f64,
    pub lr_factor: f64,
    pub plateau_patience: usize,
    pub early_stop_patience: usize,
    pub max_epochs: usize,
    pub val_fraction: f64,
    pub pretrain_epochs: usize,
    pub min_delta: f64,
    pub flip_double: bool,
    /// Apply the `[augment]` section during training.
    pub augment: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentSection {
    pub p_affine: f64,
    pub p_noise: f64,
    pub p_blur: f64,
    pub p_gamma: f64,
    pub max_rotation_deg: f64,
    pub scale_min: f64,
    pub scale_max: f64,
    pub max_shift: f64,
    pub max_noise_sigma: f64,
    pub max_blur_sigma: f64,
    pub gamma_min: f64,
    pub gamma_max: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    /// Dataset directory read by `train` and `eval`.
    pub dir: PathBuf,
    pub patients: u32,
    pub samples_per_patient: u32,
    pub height: usize,
    pub width: usize,
    pub top: f64,
    pub thickness: [f64; NUM_LAYERS],
    pub thickness_std: [f64; NUM_LAYERS],
    pub curvature: f64,
    pub smoothness: f64,
    pub drusen_count: usize,
    pub drusen_height: f64,
    pub drusen_width: f64,
    pub speckle: f64,
    pub intensity: [f64; NUM_CLASSES],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FoldSection {
    pub k: usize,
    /// Index of the fold whose test patients are held out.
    pub fold: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            net: NetSection::from(&NetConfig::desk(Arch::BruNet)),
            train: TrainSection::from(&TrainConfig::default()),
            augment: AugmentSection::from(&AugmentParams::default()),
            data: DataSection::default(),
            folds: FoldSection::default(),
            output: OutputSection::default(),
        }
    }
}

impl From<&NetConfig> for NetSection {
    fn from(c: &NetConfig) -> Self {
        Self {
            arch: c.arch.to_string(),
            depth: c.depth,
            base_filters: c.base_filters,
            filter_cap: c.filter_cap,
            input_size: c.input_size,
            dilations: c.dilations.clone(),
            blocks_per_level: c.blocks_per_level,
        }
    }
}

impl Default for NetSection {
    fn default() -> Self {
        Self::from(&NetConfig::desk(Arch::BruNet))
    }
}

impl From<&TrainConfig> for TrainSection {
    fn from(c: &TrainConfig) -> Self {
        Self {
            batch_size: c.batch_size,
            lr_init: c.lr_init,
            lr_floor: c.lr_floor,
            lr_factor: c.lr_factor,
            plateau_patience: c.plateau_patience,
            early_stop_patience: c.early_stop_patience,
            max_epochs: c.max_epochs,
            val_fraction: c.val_fraction,
            pretrain_epochs: c.pretrain_epochs,
            min_delta: c.min_delta,
            flip_double: c.flip_double,
            augment: c.augment.is_some(),
        }
    }
}

impl Default for TrainSection {
    fn default() -> Self {
        Self::from(&TrainConfig::default())
    }
}

impl From<&AugmentParams> for AugmentSection {
    fn from(a: &AugmentParams) -> Self {
        Self {
            p_affine: a.p_affine,
            p_noise: a.p_noise,
            p_blur: a.p_blur,
            p_gamma: a.p_gamma,
            max_rotation_deg: a.max_rotation_deg,
            scale_min: a.scale_range.0,
            scale_max: a.scale_range.1,
            max_shift: a.max_shift,
            max_noise_sigma: a.max_noise_sigma,
            max_blur_sigma: a.max_blur_sigma,
            gamma_min: a.gamma_range.0,
            gamma_max: a.gamma_range.1,
        }
    }
}

impl Default for AugmentSection {
    fn default() -> Self {
        Self::from(&AugmentParams::default())
    }
}

impl Default for DataSection {
    fn default() -> Self {
        let g = GenParams::desk();
        Self {
            dir: PathBuf::from("data"),
            patients: 4,
            samples_per_patient: 32,
            height: g.height,
            width: g.width,
            top: g.top,
            thickness: g.thickness,
            thickness_std: g.thickness_std,
            curvature: g.curvature,
            smoothness: g.smoothness,
            drusen_count: g.drusen_count,
            drusen_height: g.drusen_height,
            drusen_width: g.drusen_width,
            speckle: g.speckle,
            intensity: g.intensity,
        }
    }
}

impl Default for FoldSection {
    fn default() -> Self {
        Self { k: 4, fold: 0 }
    }
}

impl Default for OutputSection {
    fn default() -> Self {
        Self { dir: PathBuf::from("out") }
    }
}

impl RunConfig {
    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("in config {}", path.display()))
    }

    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_text(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn validate(&self) -> Result<()> {
        self.net_config()?.validate()?;
        self.train_config().validate()?;
        self.gen_params().validate()?;
        if self.data.patients == 0 || self.data.samples_per_patient == 0 {
            bail!("data.patients and data.samples_per_patient must be positive");
        }
        if self.folds.k < 2 {
            bail!("folds.k must be at least 2");
        }
        if self.folds.fold >= self.folds.k {
            bail!("folds.fold {} is out of range for k = {}", self.folds.fold, self.folds.k);
        }
        Ok(())
    }

    pub fn arch(&self) -> Result<Arch> {
        Ok(self.net.arch.parse()?)
    }

    pub fn net_config(&self) -> Result<NetConfig> {
        let n = &self.net;
        Ok(NetConfig {
            arch: self.arch()?,
            depth: n.depth,
            base_filters: n.base_filters,
            filter_cap: n.filter_cap,
            input_size: n.input_size,
            skips_enabled: true,
            dilations: n.dilations.clone(),
            blocks_per_level: n.blocks_per_level,
        })
    }

    pub fn augment_params(&self) -> AugmentParams {
        let a = &self.augment;
        AugmentParams {
            p_affine: a.p_affine,
            p_noise: a.p_noise,
            p_blur: a.p_blur,
            p_gamma: a.p_gamma,
            max_rotation_deg: a.max_rotation_deg,
            scale_range: (a.scale_min, a.scale_max),
            max_shift: a.max_shift,
            max_noise_sigma: a.max_noise_sigma,
            max_blur_sigma: a.max_blur_sigma,
            gamma_range: (a.gamma_min, a.gamma_max),
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            batch_size: t.batch_size,
            lr_init: t.lr_init,
            lr_floor: t.lr_floor,
            lr_factor: t.lr_factor,
            plateau_patience: t.plateau_patience,
            early_stop_patience: t.early_stop_patience,
            max_epochs: t.max_epochs,
            val_fraction: t.val_fraction,
            pretrain_epochs: t.pretrain_epochs,
            min_delta: t.min_delta,
            flip_double: t.flip_double,
            augment: t.augment.then(|| self.augment_params()),
            seed: self.seed,
        }
    }

    pub fn gen_params(&self) -> GenParams {
        let d = &self.data;
        GenParams {
            height: d.height,
            width: d.width,
            top: d.top,
            thickness: d.thickness,
            thickness_std: d.thickness_std,
            curvature: d.curvature,
            smoothness: d.smoothness,
            drusen_count: d.drusen_count,
            drusen_height: d.drusen_height,
            drusen_width: d.drusen_width,
            speckle: d.speckle,
            intensity: d.intensity,
            seed: self.seed,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let c = RunConfig::default();
        assert_eq!(RunConfig::parse(&c.to_text()).unwrap(), c);
    }

    #[test]
    fn partial_file_takes_defaults() {
        let c = RunConfig::parse("seed = 3\n[net]\narch = \"unet\"\n").unwrap();
        assert_eq!(c.seed, 3);
        assert_eq!(c.arch().unwrap(), Arch::UNet);
        assert_eq!(c.train, TrainSection::default());
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(RunConfig::parse("[net]\nwidth = 3\n").is_err());
        assert!(RunConfig::parse("[nett]\n").is_err());
        assert!(RunConfig::parse("colour = 1\n").is_err());
    }

    #[test]
    fn schema_violations_rejected() {
        assert!(RunConfig::parse("[net]\narch = \"resnet\"\n").is_err());
        assert!(RunConfig::parse("[net]\ninput_size = 100\n").is_err());
        assert!(RunConfig::parse("[folds]\nk = 4\nfold = 4\n").is_err());
        assert!(RunConfig::parse("[train]\nbatch_size = \"eight\"\n").is_err());
    }
}
