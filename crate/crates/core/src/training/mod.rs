//! Two-phase training: a warm start on analytical cost-to-go labels followed by
//! refinement of an ensemble against the HJB residual.

pub mod loss;
pub mod optimizer;
pub mod sampler;
pub mod schedule;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use loss::{hjb_loss_and_grad, mse_loss_and_grad, ControlGradient, LossComponents};
pub use optimizer::{AdamW, AdamWConfig};
pub use sampler::sample_batch;
pub use schedule::{cyclic_lr, Plateau, ScheduleSpec, ScheduleState};

use crate::dataset::GridDataset;
use crate::error::{Error, Result};
use crate::rng::{derive_seed, streams};
use crate::system::AffineSystem;
use crate::value_net::{InitScheme, NetworkParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    WarmStart,
    Hjb,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub phase: Phase,
    pub epochs: usize,
    pub batch_size: usize,
    /// Weight of the HJB residual term. Ignored by the warm start.
    pub alpha: f64,
    pub optimizer: AdamWConfig,
    pub schedule: ScheduleSpec,
    pub seed: u64,
    #[serde(default)]
    pub control_gradient: ControlGradient,
    /// Stop once an epoch's mean loss falls below this value.
    #[serde(default)]
    pub stop_loss: Option<f64>,
    #[serde(default)]
    pub init: InitScheme,
}

impl TrainConfig {
    pub fn warm_start_default() -> Self {
        Self {
            phase: Phase::WarmStart,
            epochs: 100,
            batch_size: 100,
            alpha: 1.0,
            optimizer: AdamWConfig {
                lr: 1e-2,
                beta1: 0.9,
                beta2: 0.999,
                epsilon: 1e-4,
                weight_decay: 1e-2,
            },
            schedule: ScheduleSpec::plateau_default(),
            seed: 0,
            control_gradient: ControlGradient::Full,
            stop_loss: None,
            init: InitScheme::GlorotUniform,
        }
    }

    pub fn hjb_default() -> Self {
        Self {
            phase: Phase::Hjb,
            epochs: 60,
            batch_size: 400,
            alpha: 1.0,
            optimizer: AdamWConfig {
                lr: 1e-5,
                beta1: 0.9,
                beta2: 0.999,
                epsilon: 1e-8,
                weight_decay: 1e-7,
            },
            schedule: ScheduleSpec::cyclic_default(),
            seed: 0,
            control_gradient: ControlGradient::Full,
            stop_loss: None,
            init: InitScheme::GlorotUniform,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be positive".into()));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::InvalidConfig(format!("alpha {} must be >= 0", self.alpha)));
        }
        self.optimizer.validate()?;
        self.schedule.validate()
    }

    /// Optimizer steps per epoch: one pass of `ceil(O / batch_size)` batches.
    pub fn steps_per_epoch(&self, dataset_len: usize) -> usize {
        dataset_len.div_ceil(self.batch_size).max(1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WarmStartRun {
    pub params: NetworkParams,
    /// Mean training loss per epoch.
    pub history: Vec<f64>,
    /// Learning rate in effect during each epoch.
    pub lr_history: Vec<f64>,
}

/// Warm start from the seeded initialization in `cfg`.
pub fn train_warm_start(dataset: &GridDataset, cfg: &TrainConfig) -> Result<WarmStartRun> {
    let init = NetworkParams::init(derive_seed(cfg.seed, streams::INIT), cfg.init);
    train_warm_start_from(init, dataset, cfg)
}

pub fn train_warm_start_from(
    mut params: NetworkParams,
    dataset: &GridDataset,
    cfg: &TrainConfig,
) -> Result<WarmStartRun> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, streams::WARM_START));
    let mut opt = AdamW::new(&cfg.optimizer)?;
    let mut schedule = ScheduleState::new(&cfg.schedule, cfg.optimizer.lr);
    let steps = cfg.steps_per_epoch(dataset.len());
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut lr_history = Vec::with_capacity(cfg.epochs);
    let mut global_step = 0u64;

    for epoch in 0..cfg.epochs {
        let mut sum = 0.0;
        lr_history.push(schedule.lr_for_step(global_step));
        for _ in 0..steps {
            opt.lr = schedule.lr_for_step(global_step);
            let batch = sample_batch(dataset, cfg.batch_size, false, &mut rng)?;
            let (loss, grads) = mse_loss_and_grad(&params, &batch);
            if !loss.is_finite() {
                return Err(diverged(epoch, "non-finite warm-start loss", history));
            }
            if let Err(e) = opt.step(&mut params, &grads) {
                return Err(diverged(epoch, &e.to_string(), history));
            }
            sum += loss;
            global_step += 1;
        }
        if !params.is_finite() {
            return Err(diverged(epoch, "non-finite parameters", history));
        }
        let mean = sum / steps as f64;
        history.push(mean);
        schedule.end_epoch(mean);
        if cfg.stop_loss.is_some_and(|t| mean < t) {
            break;
        }
    }
    Ok(WarmStartRun {
        params,
        history,
        lr_history,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct HjbRun {
    pub params: NetworkParams,
    /// Per-epoch means of the per-step loss components.
    pub history: Vec<LossComponents>,
}

/// HJB refinement. Each step draws one mixed batch and one boundary-only batch
/// of `batch_size` records from the stream seeded by `cfg.seed`.
pub fn train_hjb<S: AffineSystem + ?Sized>(
    mut params: NetworkParams,
    dataset: &GridDataset,
    sys: &S,
    cfg: &TrainConfig,
) -> Result<HjbRun> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = AdamW::new(&cfg.optimizer)?;
    let mut schedule = ScheduleState::new(&cfg.schedule, cfg.optimizer.lr);
    let steps = cfg.steps_per_epoch(dataset.len());
    let mut history: Vec<LossComponents> = Vec::with_capacity(cfg.epochs);
    let mut global_step = 0u64;
    let totals = |h: &[LossComponents]| h.iter().map(|c| c.total).collect::<Vec<_>>();

    for epoch in 0..cfg.epochs {
        let mut acc = LossComponents::default();
        for _ in 0..steps {
            opt.lr = schedule.lr_for_step(global_step);
            let mixed = sample_batch(dataset, cfg.batch_size, false, &mut rng)?;
            let boundary = sample_batch(dataset, cfg.batch_size, true, &mut rng)?;
            let (parts, grads) =
                match hjb_loss_and_grad(&params, &mixed, &boundary, sys, cfg.alpha, cfg.control_gradient)
                {
                    Ok(v) => v,
                    Err(e) => return Err(diverged(epoch, &e.to_string(), totals(&history))),
                };
            if !parts.total.is_finite() {
                return Err(diverged(epoch, "non-finite HJB loss", totals(&history)));
            }
            if let Err(e) = opt.step(&mut params, &grads) {
                return Err(diverged(epoch, &e.to_string(), totals(&history)));
            }
            acc.boundary += parts.boundary;
            acc.residual += parts.residual;
            acc.total += parts.total;
            global_step += 1;
        }
        if !params.is_finite() {
            return Err(diverged(epoch, "non-finite parameters", totals(&history)));
        }
        let n = steps as f64;
        let mean = LossComponents {
            boundary: acc.boundary / n,
            residual: acc.residual / n,
            total: acc.total / n,
        };
        history.push(mean);
        schedule.end_epoch(mean.total);
        if cfg.stop_loss.is_some_and(|t| mean.total < t) {
            break;
        }
    }
    Ok(HjbRun { params, history })
}

/// Seed of ensemble member `index` under the master seed.
pub fn member_seed(master: u64, index: usize) -> u64 {
    derive_seed(derive_seed(master, streams::MEMBERS), index as u64)
}

#[derive(Debug, Clone)]
pub struct MemberRun {
    pub index: usize,
    pub seed: u64,
    pub outcome: std::result::Result<HjbRun, String>,
}

#[derive(Debug, Clone)]
pub struct EnsembleRun {
    pub members: Vec<MemberRun>,
    /// Mean total loss over successful members, per epoch.
    pub ensemble_loss: Vec<f64>,
}

impl EnsembleRun {
    pub fn trained(&self) -> impl Iterator<Item = (usize, &HjbRun)> {
        self.members
            .iter()
            .filter_map(|m| m.outcome.as_ref().ok().map(|r| (m.index, r)))
    }

    pub fn failures(&self) -> impl Iterator<Item = (usize, &str)> {
        self.members
            .iter()
            .filter_map(|m| m.outcome.as_ref().err().map(|e| (m.index, e.as_str())))
    }

    pub fn params(&self) -> Vec<NetworkParams> {
        self.trained().map(|(_, r)| r.params.clone()).collect()
    }
}

/// Trains `n` members independently from the same warm-started weights.
/// Members run in parallel; each owns its optimizer and batch stream.
pub fn train_ensemble<S: AffineSystem + ?Sized>(
    dataset: &GridDataset,
    sys: &S,
    cfg: &TrainConfig,
    n: usize,
    base: &NetworkParams,
) -> Result<EnsembleRun> {
    if n == 0 {
        return Err(Error::EmptyEnsemble);
    }
    cfg.validate()?;
    let members: Vec<MemberRun> = (0..n)
        .into_par_iter()
        .map(|index| {
            let seed = member_seed(cfg.seed, index);
            let member_cfg = TrainConfig {
                seed,
                ..cfg.clone()
            };
            let outcome =
                train_hjb(base.clone(), dataset, sys, &member_cfg).map_err(|e| e.to_string());
            MemberRun {
                index,
                seed,
                outcome,
            }
        })
        .collect();

    let ok: Vec<&HjbRun> = members.iter().filter_map(|m| m.outcome.as_ref().ok()).collect();
    if ok.is_empty() {
        let detail = members
            .iter()
            .filter_map(|m| m.outcome.as_ref().err())
            .cloned()
            .collect::<Vec<_>>()
            .join("; ");
        return Err(Error::Diverged {
            epoch: 0,
            detail: format!("every ensemble member failed: {detail}"),
            history: Vec::new(),
        });
    }
    let epochs = ok.iter().map(|r| r.history.len()).min().unwrap_or(0);
    let ensemble_loss = (0..epochs)
        .map(|e| ok.iter().map(|r| r.history[e].total).sum::<f64>() / ok.len() as f64)
        .collect();
    Ok(EnsembleRun {
        members,
        ensemble_loss,
    })
}

fn diverged(epoch: usize, detail: &str, history: Vec<f64>) -> Error {
    Error::Diverged {
        epoch,
        detail: detail.to_string(),
        history,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::system::{Dierks, Domain};

    fn small_grid() -> GridDataset {
        GridDataset::generate(&Dierks, &Domain::square(10.0, 21).unwrap()).unwrap()
    }

    #[test]
    fn zero_epochs_returns_initial_params() {
        let ds = small_grid();
        let cfg = TrainConfig {
            epochs: 0,
            seed: 5,
            ..TrainConfig::warm_start_default()
        };
        let run = train_warm_start(&ds, &cfg).unwrap();
        assert_eq!(
            run.params,
            NetworkParams::init(derive_seed(5, streams::INIT), InitScheme::GlorotUniform)
        );
        assert!(run.history.is_empty());
    }

    #[test]
    fn warm_start_reduces_loss_and_is_deterministic() {
        let ds = small_grid();
        let cfg = TrainConfig {
            epochs: 15,
            seed: 3,
            ..TrainConfig::warm_start_default()
        };
        let a = train_warm_start(&ds, &cfg).unwrap();
        let b = train_warm_start(&ds, &cfg).unwrap();
        assert_eq!(a.params.to_vec(), b.params.to_vec());
        assert!(a.history.last().unwrap() < a.history.first().unwrap());
    }

    #[test]
    fn steps_per_epoch_rounds_up() {
        let cfg = TrainConfig::hjb_default();
        assert_eq!(cfg.steps_per_epoch(250_000), 625);
        assert_eq!(cfg.steps_per_epoch(401), 2);
        assert_eq!(cfg.steps_per_epoch(0), 1);
    }

    #[test]
    fn single_member_matches_train_hjb() {
        let ds = small_grid();
        let base = NetworkParams::init(1, InitScheme::GlorotUniform);
        let cfg = TrainConfig {
            epochs: 2,
            seed: 77,
            ..TrainConfig::hjb_default()
        };
        let ens = train_ensemble(&ds, &Dierks, &cfg, 1, &base).unwrap();
        let single = train_hjb(
            base,
            &ds,
            &Dierks,
            &TrainConfig {
                seed: member_seed(77, 0),
                ..cfg
            },
        )
        .unwrap();
        let member = ens.members[0].outcome.as_ref().unwrap();
        assert_eq!(member.params, single.params);
        assert_eq!(ens.ensemble_loss[1], single.history[1].total);
    }

    #[test]
    fn members_differ_and_ensemble_loss_is_mean() {
        let ds = small_grid();
        let base = NetworkParams::init(2, InitScheme::GlorotUniform);
        let cfg = TrainConfig {
            epochs: 3,
            seed: 4,
            ..TrainConfig::hjb_default()
        };
        let ens = train_ensemble(&ds, &Dierks, &cfg, 3, &base).unwrap();
        let params = ens.params();
        assert_ne!(params[0], params[1]);
        assert_ne!(params[1], params[2]);
        for e in 0..3 {
            let mean = ens.trained().map(|(_, r)| r.history[e].total).sum::<f64>() / 3.0;
            assert_eq!(ens.ensemble_loss[e], mean);
        }
    }

    #[test]
    fn alpha_zero_fits_boundary_only() {
        let ds = small_grid();
        let base = NetworkParams::init(2, InitScheme::GlorotUniform);
        let cfg = TrainConfig {
            epochs: 2,
            alpha: 0.0,
            ..TrainConfig::hjb_default()
        };
        let run = train_hjb(base, &ds, &Dierks, &cfg).unwrap();
        for h in &run.history {
            assert!(h.residual > 0.0);
            assert_eq!(h.total, h.boundary);
        }
    }

    #[test]
    fn empty_ensemble_is_rejected() {
        let ds = small_grid();
        let err = train_ensemble(&ds, &Dierks, &TrainConfig::hjb_default(), 0, &NetworkParams::zeros());
        assert!(matches!(err, Err(Error::EmptyEnsemble)));
    }

    #[test]
    fn divergence_reports_history() {
        let ds = small_grid();
        let mut base = NetworkParams::zeros();
        base.w3[0] = f64::NAN;
        let cfg = TrainConfig {
            epochs: 3,
            ..TrainConfig::hjb_default()
        };
        assert!(matches!(
            train_hjb(base, &ds, &Dierks, &cfg),
            Err(Error::Diverged { epoch: 0, .. })
        ));
    }
}
