//! Training protocol: AdaMax, plateau learning-rate schedule with early
//! stopping, best-epoch weights, autoencoder pre-initialisation and the
//! two-candidate variant search.

mod adamax;
mod checkpoint;
mod schedule;
mod search;

pub use adamax::{AdaMax, BETA1, BETA2, EPSILON};
pub use checkpoint::{Checkpoint, OptimizerRecords, Record, CHECKPOINT_MAGIC};
pub use schedule::{Decision, PlateauSchedule};
pub use search::{mutate, variant_search, Candidate, RoundRecord, SearchOutcome};

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::arch::{build_network, Init, NetConfig, Network};
use crate::data::{augment, flip_double, AugmentParams, Sample};
use crate::error::{Error, Result};
use crate::graph::Mode;
use crate::ops;
use crate::tensor::{Scalar, Tensor};

/// Loss above which a run counts as diverged.
pub const DIVERGENCE_LOSS: f64 = 1e6;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
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
    /// Add mirrored copies of all training samples.
    pub flip_double: bool,
    /// Random augmentation redrawn every epoch; `None` disables it.
    pub augment: Option<AugmentParams>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 8,
            lr_init: 1e-3,
            lr_floor: 1e-7,
            lr_factor: 0.5,
            plateau_patience: 5,
            early_stop_patience: 25,
            max_epochs: 150,
            val_fraction: 0.10,
            pretrain_epochs: 10,
            min_delta: 1e-6,
            flip_double: true,
            augment: Some(AugmentParams::default()),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be positive"));
        }
        if !(self.lr_floor > 0.0 && self.lr_floor <= self.lr_init) {
            return Err(Error::config("need 0 < lr_floor <= lr_init"));
        }
        if !(self.lr_factor > 0.0 && self.lr_factor < 1.0) {
            return Err(Error::config("lr_factor must lie in (0, 1)"));
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return Err(Error::config("val_fraction must lie in (0, 1)"));
        }
        if self.plateau_patience == 0 || self.plateau_patience >= self.early_stop_patience {
            return Err(Error::config("need 0 < plateau_patience < early_stop_patience"));
        }
        if !(self.min_delta >= 0.0) {
            return Err(Error::config("min_delta must be non-negative"));
        }
        Ok(())
    }

    pub fn schedule(&self) -> PlateauSchedule {
        PlateauSchedule::new(
            self.lr_init,
            self.lr_floor,
            self.lr_factor,
            self.plateau_patience,
            self.early_stop_patience,
            self.min_delta,
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    /// Rate used during this epoch.
    pub lr: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FitSummary {
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val: f64,
    pub stopped_early: bool,
    /// Rate the next epoch would have used.
    pub final_lr: f64,
}

impl FitSummary {
    /// `epoch,train_loss,val_loss,lr` with one row per epoch.
    pub fn history_csv(&self) -> String {
        let mut s = String::from("epoch,train_loss,val_loss,lr\n");
        for r in &self.history {
            let _ = writeln!(s, "{},{},{},{}", r.epoch, r.train_loss, r.val_loss, r.lr);
        }
        s
    }
}

/// What [`fit`] drives once per epoch.
pub trait EpochRunner {
    /// One pass over the training data; returns the mean training loss.
    fn train_epoch(&mut self, epoch: usize, lr: f64) -> Result<f64>;
    fn validate(&mut self) -> Result<f64>;
    /// Called right after an epoch that improved the validation loss.
    fn on_improvement(&mut self, _epoch: usize) -> Result<()> {
        Ok(())
    }
}

/// Epoch loop with plateau schedule and early stopping.
pub fn fit<R: EpochRunner>(runner: &mut R, cfg: &TrainConfig) -> Result<FitSummary> {
    cfg.validate()?;
    let mut sched = cfg.schedule();
    let mut history = Vec::new();
    let mut stopped_early = false;
    for epoch in 1..=cfg.max_epochs {
        let lr = sched.lr;
        let train_loss = runner.train_epoch(epoch, lr)?;
        check_divergence(epoch, "training", train_loss)?;
        let val_loss = runner.validate()?;
        check_divergence(epoch, "validation", val_loss)?;
        history.push(EpochRecord { epoch, train_loss, val_loss, lr });
        let d = sched.observe(epoch, val_loss);
        if d.improved {
            runner.on_improvement(epoch)?;
        }
        if d.stop {
            stopped_early = true;
            break;
        }
    }
    Ok(FitSummary { history, best_epoch: sched.best_epoch, best_val: sched.best, stopped_early, final_lr: sched.lr })
}

fn check_divergence(epoch: usize, what: &str, loss: f64) -> Result<()> {
    if loss.is_nan() || loss > DIVERGENCE_LOSS {
        return Err(Error::Diverged { epoch, message: format!("{what} loss {loss}") });
    }
    Ok(())
}

/// What the network is asked to reproduce.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Target {
    /// Class indices as reals.
    Labels,
    /// The input image itself (autoencoder).
    Image,
}

fn stack<T: Scalar>(items: &[Tensor<T>]) -> Result<Tensor<T>> {
    let refs: Vec<&Tensor<T>> = items.iter().collect();
    Tensor::stack(&refs)
}

fn batch_tensors<T: Scalar>(samples: &[&Sample], target: Target) -> Result<(Tensor<T>, Tensor<T>)> {
    let x: Vec<Tensor<T>> = samples.iter().map(|s| s.image_tensor()).collect();
    let y: Vec<Tensor<T>> = match target {
        Target::Labels => samples.iter().map(|s| s.target_tensor()).collect(),
        Target::Image => x.clone(),
    };
    Ok((stack(&x)?, stack(&y)?))
}

/// Mean squared error over every pixel of `samples` in inference mode.
pub fn evaluate_loss<T: Scalar>(
    net: &mut Network<T>,
    samples: &[&Sample],
    target: Target,
    batch_size: usize,
) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::config("no samples to evaluate"));
    }
    let mut sq = 0.0;
    let mut count = 0usize;
    for chunk in samples.chunks(batch_size.max(1)) {
        let (x, y) = batch_tensors::<T>(chunk, target)?;
        let p = net.forward(&x, Mode::Infer)?;
        sq += p.data().iter().zip(y.data()).map(|(a, b)| (a.to_f64_lossy() - b.to_f64_lossy()).powi(2)).sum::<f64>();
        count += p.len();
    }
    Ok(sq / count as f64)
}

/// Inference-mode predictions, one `[1, 1, H, W]` map per sample.
pub fn predict<T: Scalar>(net: &mut Network<T>, samples: &[&Sample], batch_size: usize) -> Result<Vec<Tensor<T>>> {
    let mut out = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(batch_size.max(1)) {
        let (x, _) = batch_tensors::<T>(chunk, Target::Labels)?;
        let p = net.forward(&x, Mode::Infer)?;
        for i in 0..chunk.len() {
            out.push(p.batch_item(i)?);
        }
    }
    Ok(out)
}

/// Round half away from zero, clamp to the class range `0..=6`.
pub fn quantize<T: Scalar>(pred: &Tensor<T>) -> Vec<u8> {
    pred.data().iter().map(|v| quantize_value(v.to_f64_lossy())).collect()
}

pub fn quantize_value(v: f64) -> u8 {
    if v.is_nan() {
        return 0;
    }
    v.round().clamp(0.0, 6.0) as u8
}

struct NetRunner<'a, T> {
    net: &'a mut Network<T>,
    opt: AdaMax<T>,
    train: Vec<Sample>,
    val: Vec<&'a Sample>,
    target: Target,
    cfg: &'a TrainConfig,
    rng: ChaCha8Rng,
    best: Option<Vec<Vec<T>>>,
}

impl<T: Scalar> EpochRunner for NetRunner<'_, T> {
    fn train_epoch(&mut self, epoch: usize, lr: f64) -> Result<f64> {
        let mut order: Vec<usize> = (0..self.train.len()).collect();
        order.shuffle(&mut self.rng);
        let mut total = 0.0;
        for chunk in order.chunks(self.cfg.batch_size) {
            let drawn: Vec<Sample> = match &self.cfg.augment {
                Some(p) => chunk.iter().map(|&i| augment(&self.train[i], p, &mut self.rng)).collect(),
                None => chunk.iter().map(|&i| self.train[i].clone()).collect(),
            };
            let refs: Vec<&Sample> = drawn.iter().collect();
            let (x, y) = batch_tensors::<T>(&refs, self.target)?;
            self.net.graph.zero_grads();
            let p = self.net.forward(&x, Mode::Train)?;
            let (loss, grad) = ops::mse_loss(&p, &y)?;
            check_divergence(epoch, "batch", loss)?;
            self.net.graph.backward(&Tensor::new(p.shape(), grad)?)?;
            self.opt.step(&mut self.net.graph.params, lr)?;
            total += loss * chunk.len() as f64;
        }
        Ok(total / self.train.len() as f64)
    }

    fn validate(&mut self) -> Result<f64> {
        evaluate_loss(self.net, &self.val, self.target, self.cfg.batch_size)
    }

    fn on_improvement(&mut self, _epoch: usize) -> Result<()> {
        self.best = Some(self.net.graph.params.iter().map(|(_, p)| p.tensor.data().to_vec()).collect());
        Ok(())
    }
}

/// Result of [`train`]; the network holds the best-epoch weights.
#[derive(Clone, Debug)]
pub struct TrainOutcome<T> {
    pub summary: FitSummary,
    /// Optimizer state at the end of the last epoch.
    pub optimizer: AdaMax<T>,
}

impl<T: Scalar> TrainOutcome<T> {
    pub fn checkpoint(&self, net: &Network<T>) -> Checkpoint {
        Checkpoint::capture(
            &net.graph.params,
            &self.optimizer,
            self.summary.final_lr,
            self.summary.best_epoch as u32,
            self.summary.best_val,
        )
    }
}

/// Full protocol on one split. Returns with the weights of the epoch with
/// the lowest validation loss loaded into `net`.
pub fn train<T: Scalar>(
    net: &mut Network<T>,
    train_set: &[&Sample],
    val_set: &[&Sample],
    target: Target,
    cfg: &TrainConfig,
) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::config("training and validation sets must be non-empty"));
    }
    let base: Vec<Sample> = train_set.iter().map(|&s| s.clone()).collect();
    let train = if cfg.flip_double { flip_double(&base) } else { base };
    let opt = AdaMax::new(&net.graph.params);
    let mut runner = NetRunner {
        net,
        opt,
        train,
        val: val_set.to_vec(),
        target,
        cfg,
        rng: ChaCha8Rng::seed_from_u64(cfg.seed),
        best: None,
    };
    let summary = fit(&mut runner, cfg)?;
    if let Some(best) = runner.best.take() {
        for (p, data) in runner.net.graph.params.iter_mut().zip(best) {
            p.tensor.data_mut().copy_from_slice(&data);
        }
    }
    Ok(TrainOutcome { summary, optimizer: runner.opt })
}

/// Trains a skipless copy of `cfg` to reproduce its input for
/// `cfg.pretrain_epochs` epochs and returns its weights as a network built
/// from `net_cfg` (skips as configured). With zero epochs this is the plain
/// seeded initialisation.
pub fn pretrain_autoencoder<T: Scalar>(
    net_cfg: &NetConfig,
    init: Init,
    train_set: &[&Sample],
    val_set: &[&Sample],
    cfg: &TrainConfig,
) -> Result<(Network<T>, Option<FitSummary>)> {
    let mut net = build_network::<T>(net_cfg, init)?;
    if cfg.pretrain_epochs == 0 {
        return Ok((net, None));
    }
    let mut ae = build_network::<T>(&NetConfig { skips_enabled: false, ..net_cfg.clone() }, init)?;
    let ae_cfg = TrainConfig { max_epochs: cfg.pretrain_epochs, ..cfg.clone() };
    let out = train(&mut ae, train_set, val_set, Target::Image, &ae_cfg)?;
    net.graph.params.load_from(&ae.graph.params)?;
    Ok((net, Some(out.summary)))
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Scripted {
        val: Vec<f64>,
        at: usize,
        improvements: Vec<usize>,
    }

    impl EpochRunner for Scripted {
        fn train_epoch(&mut self, _epoch: usize, _lr: f64) -> Result<f64> {
            Ok(1.0)
        }

        fn validate(&mut self) -> Result<f64> {
            self.at += 1;
            Ok(self.val[(self.at - 1).min(self.val.len() - 1)])
        }

        fn on_improvement(&mut self, epoch: usize) -> Result<()> {
            self.improvements.push(epoch);
            Ok(())
        }
    }

    #[test]
    fn quantize_rule() {
        let cases = [(3.4, 3), (5.5, 6), (-0.2, 0), (6.8, 6), (2.5, 3), (-0.5, 0), (4.0, 4), (f64::NAN, 0)];
        for (v, q) in cases {
            assert_eq!(quantize_value(v), q, "{v}");
        }
    }

    #[test]
    fn fit_records_history() {
        let mut r = Scripted { val: vec![1.0, 0.9, 0.9, 0.9, 0.9, 0.9, 0.9], at: 0, improvements: vec![] };
        let cfg = TrainConfig { max_epochs: 7, ..Default::default() };
        let s = fit(&mut r, &cfg).unwrap();
        assert_eq!(s.history.len(), 7);
        assert!(s.history.iter().all(|h| h.lr == 1e-3));
        assert_eq!(s.final_lr, 5e-4);
        assert_eq!(r.improvements, vec![1, 2]);
        assert!(s.history_csv().starts_with("epoch,train_loss,val_loss,lr\n1,1,1,0.001\n"));
    }

    #[test]
    fn divergence_aborts() {
        let mut r = Scripted { val: vec![1.0, f64::NAN], at: 0, improvements: vec![] };
        match fit(&mut r, &TrainConfig { max_epochs: 5, ..Default::default() }) {
            Err(Error::Diverged { epoch, .. }) => assert_eq!(epoch, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        assert!(TrainConfig { lr_floor: 1e-2, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { plateau_patience: 25, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { val_fraction: 1.0, ..Default::default() }.validate().is_err());
    }
}
