//! Run configuration: a TOML file of dotted keys layered over built-in
//! defaults. Keys that are not set keep their default value.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::control::{Policy, SimConfig};
use crate::error::{Error, Result};
use crate::evaluation::EVAL_RESOLUTION;
use crate::system::Domain;
use crate::training::{AdamWConfig, ControlGradient, Phase, ScheduleSpec, TrainConfig};
use crate::value_net::InitScheme;
use crate::State;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SystemKind {
    #[default]
    Dierks,
}

/// Hyper-parameters of one training phase.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub alpha: f64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
    pub schedule: ScheduleSpec,
    pub control_gradient: ControlGradient,
    /// Early-stop threshold on the epoch loss; `0` disables it.
    pub stop_loss: f64,
    pub init: InitScheme,
}

impl TrainSection {
    fn from_train_config(c: &TrainConfig) -> Self {
        Self {
            epochs: c.epochs,
            batch_size: c.batch_size,
            alpha: c.alpha,
            lr: c.optimizer.lr,
            beta1: c.optimizer.beta1,
            beta2: c.optimizer.beta2,
            epsilon: c.optimizer.epsilon,
            weight_decay: c.optimizer.weight_decay,
            schedule: c.schedule,
            control_gradient: c.control_gradient,
            stop_loss: c.stop_loss.unwrap_or(0.0),
            init: c.init,
        }
    }

    pub fn to_train_config(&self, phase: Phase, seed: u64) -> TrainConfig {
        TrainConfig {
            phase,
            epochs: self.epochs,
            batch_size: self.batch_size,
            alpha: self.alpha,
            optimizer: AdamWConfig {
                lr: self.lr,
                beta1: self.beta1,
                beta2: self.beta2,
                epsilon: self.epsilon,
                weight_decay: self.weight_decay,
            },
            schedule: self.schedule,
            seed,
            control_gradient: self.control_gradient,
            stop_loss: (self.stop_loss > 0.0).then_some(self.stop_loss),
            init: self.init,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleSection {
    pub size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSection {
    pub t0: f64,
    pub tf: f64,
    pub dt: f64,
    pub noise_sigma: f64,
    pub ic: State,
    pub ic_perturb_sigma: f64,
    pub policy: Policy,
    /// Plant copies for the `analytic` and `zero` policies.
    pub reference_members: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    pub resolution: usize,
    pub member: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub out: PathBuf,
    pub system: SystemKind,
    pub domain: Domain,
    pub ensemble: EnsembleSection,
    pub warm_start: TrainSection,
    pub hjb: TrainSection,
    pub sim: SimSection,
    pub eval: EvalSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        let sim = SimConfig::default();
        Self {
            seed: 0,
            out: PathBuf::from("run"),
            system: SystemKind::Dierks,
            domain: Domain::default(),
            ensemble: EnsembleSection { size: 20 },
            warm_start: TrainSection::from_train_config(&TrainConfig::warm_start_default()),
            hjb: TrainSection::from_train_config(&TrainConfig::hjb_default()),
            sim: SimSection {
                t0: sim.t0,
                tf: sim.tf,
                dt: sim.dt,
                noise_sigma: sim.noise_sigma,
                ic: sim.ic_nominal,
                ic_perturb_sigma: sim.ic_perturb_sigma,
                policy: sim.policy,
                reference_members: sim.members,
            },
            eval: EvalSection {
                resolution: EVAL_RESOLUTION,
                member: 0,
            },
        }
    }
}

impl RunConfig {
    /// Parses TOML text over the defaults.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let user: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Toml(e.to_string()))?;
        let mut base = toml::Table::try_from(RunConfig::default()).map_err(|e| Error::Toml(e.to_string()))?;
        merge(&mut base, user);
        let cfg: RunConfig = toml::Value::Table(base)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Toml(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Loads a TOML config, or the config echoed inside a JSON run manifest.
    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingInput(path.to_path_buf()));
        }
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        if path.extension().is_some_and(|e| e == "json") {
            let mut doc: serde_json::Value = serde_json::from_str(&text)?;
            let cfg = doc
                .get_mut("config")
                .map(serde_json::Value::take)
                .ok_or_else(|| Error::InvalidConfig(format!("{} has no `config` entry", path.display())))?;
            let cfg: RunConfig = serde_json::from_value(cfg)?;
            cfg.validate()?;
            return Ok(cfg);
        }
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Toml(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.domain.validate()?;
        if self.ensemble.size == 0 {
            return Err(Error::EmptyEnsemble);
        }
        self.warm_start_config().validate()?;
        self.hjb_config().validate()?;
        self.sim_config().validate()?;
        if self.eval.resolution < 2 {
            return Err(Error::InvalidDomain("eval.resolution must be at least 2".into()));
        }
        Ok(())
    }

    pub fn warm_start_config(&self) -> TrainConfig {
        self.warm_start.to_train_config(Phase::WarmStart, self.seed)
    }

    pub fn hjb_config(&self) -> TrainConfig {
        self.hjb.to_train_config(Phase::Hjb, self.seed)
    }

    pub fn sim_config(&self) -> SimConfig {
        SimConfig {
            t0: self.sim.t0,
            tf: self.sim.tf,
            dt: self.sim.dt,
            noise_sigma: self.sim.noise_sigma,
            ic_nominal: self.sim.ic,
            ic_perturb_sigma: self.sim.ic_perturb_sigma,
            policy: self.sim.policy,
            seed: self.seed,
            members: self.sim.reference_members,
        }
    }

    pub fn eval_domain(&self) -> Domain {
        Domain {
            resolution: self.eval.resolution,
            ..self.domain
        }
    }
}

/// Recursive table merge. A user table carrying a `kind` tag replaces the
/// default wholesale, since its sibling keys depend on the tag.
fn merge(base: &mut toml::Table, user: toml::Table) {
    for (key, value) in user {
        match (base.get_mut(&key), value) {
            (Some(toml::Value::Table(b)), toml::Value::Table(u)) if !u.contains_key("kind") => merge(b, u),
            (_, v) => {
                base.insert(key, v);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        assert_eq!(RunConfig::from_toml_str("").unwrap(), RunConfig::default());
    }

    #[test]
    fn defaults_match_phase_defaults() {
        let c = RunConfig::default();
        assert_eq!(c.warm_start_config(), TrainConfig::warm_start_default());
        assert_eq!(c.hjb_config(), TrainConfig::hjb_default());
        assert_eq!(c.sim_config(), SimConfig::default());
        assert_eq!(c.eval_domain().resolution, 101);
    }

    #[test]
    fn dotted_keys_override_single_fields() {
        let c = RunConfig::from_toml_str(
            "seed = 9\nhjb.alpha = 0.5\nwarm_start.epochs = 3\ndomain.resolution = 30\nsim.policy = \"analytic\"\nsim.ic = [1.0, -2.0]\n",
        )
        .unwrap();
        assert_eq!(c.seed, 9);
        assert_eq!(c.hjb.alpha, 0.5);
        assert_eq!(c.hjb.epochs, 60);
        assert_eq!(c.warm_start.epochs, 3);
        assert_eq!(c.domain.resolution, 30);
        assert_eq!(c.domain.lower, [-10.0, -10.0]);
        assert_eq!(c.sim.policy, Policy::Analytic);
        assert_eq!(c.sim.ic, [1.0, -2.0]);
    }

    #[test]
    fn schedule_kind_replaces_table() {
        let c = RunConfig::from_toml_str("hjb.schedule = { kind = \"constant\" }\n").unwrap();
        assert_eq!(c.hjb.schedule, ScheduleSpec::Constant);
        let c = RunConfig::from_toml_str(
            "[warm_start.schedule]\nkind = \"cyclic\"\nlr_min = 0.001\nlr_max = 0.01\nstep_size = 5\n",
        )
        .unwrap();
        assert_eq!(
            c.warm_start.schedule,
            ScheduleSpec::Cyclic {
                lr_min: 0.001,
                lr_max: 0.01,
                step_size: 5
            }
        );
    }

    #[test]
    fn unknown_keys_and_bad_values_are_rejected() {
        assert!(matches!(RunConfig::from_toml_str("hjb.alpah = 1.0"), Err(Error::Toml(_))));
        assert!(matches!(RunConfig::from_toml_str("sim.policy = \"avg\""), Err(Error::Toml(_))));
        assert!(matches!(RunConfig::from_toml_str("sim.dt = -1.0"), Err(Error::InvalidConfig(_))));
        assert!(matches!(RunConfig::from_toml_str("domain.resolution = 1"), Err(Error::InvalidDomain(_))));
        assert!(matches!(RunConfig::from_toml_str("ensemble.size = 0"), Err(Error::EmptyEnsemble)));
    }

    #[test]
    fn toml_round_trip() {
        let mut c = RunConfig::default();
        c.seed = 123;
        c.hjb.schedule = ScheduleSpec::Constant;
        let text = c.to_toml_string().unwrap();
        assert_eq!(RunConfig::from_toml_str(&text).unwrap(), c);
    }

    #[test]
    fn missing_config_file_is_named() {
        let err = RunConfig::load(Path::new("/nonexistent/run.toml")).unwrap_err();
        assert!(matches!(err, Error::MissingInput(p) if p.ends_with("run.toml")));
    }
}
