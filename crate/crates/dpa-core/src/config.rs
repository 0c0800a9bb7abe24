//! Versioned TOML run configuration.
//!
//! Every field has a default, unknown keys are rejected, and
//! parse -> serialize -> parse is the identity. Flags on the CLI cover only
//! paths, seeds, and verbosity; everything that defines a run lives here so
//! sweeps are reproducible from the document alone.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gdpa::ZMode;
use crate::scenario::{self, Scenario, ScenarioError};
use crate::trainer::TrainerOptions;
use crate::LossVariant;

pub const CONFIG_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("unsupported config version {got} (expected {CONFIG_SCHEMA_VERSION})")]
    UnsupportedVersion { got: u32 },
    #[error("invalid config:\n{}", .0.join("\n"))]
    Invalid(Vec<String>),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub version: u32,
    pub scenario: ScenarioSection,
    pub trainer: TrainerSection,
    pub ablation: AblationSection,
    pub sweep: SweepSection,
    pub output: OutputSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            version: CONFIG_SCHEMA_VERSION,
            scenario: ScenarioSection::default(),
            trainer: TrainerSection::default(),
            ablation: AblationSection::default(),
            sweep: SweepSection::default(),
            output: OutputSection::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioSection {
    pub beta: f64,
    pub n_union: usize,
    pub dim: usize,
    pub shift: f64,
    pub spacing: f64,
    pub instances_per_image: usize,
    pub seeds: Vec<u64>,
}

impl Default for ScenarioSection {
    fn default() -> Self {
        ScenarioSection {
            beta: 0.5,
            n_union: 8,
            dim: 16,
            shift: 2.0,
            spacing: 4.0,
            instances_per_image: 8,
            seeds: vec![1, 2, 3, 4, 5],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ZModeSetting {
    BatchMean,
    Fixed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainerSection {
    pub iterations: u64,
    pub images_per_domain: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub lr_initial: f64,
    pub lr_decayed: f64,
    pub decay_iteration: u64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub radius_lr: f64,
    pub radius_init: f64,
    pub gamma: f64,
    pub delta: f64,
    pub alpha: f64,
    pub epoch_iterations: u64,
    pub lambda: f64,
    pub z_mode: ZModeSetting,
    pub z_fixed: f64,
    pub global_loss_variant: LossVariant,
    pub instance_loss_variant: LossVariant,
    pub joint_instance_histogram: bool,
    pub log_interval: u64,
    pub eval_images_per_domain: usize,
}

impl Default for TrainerSection {
    fn default() -> Self {
        let d = TrainerOptions::default();
        TrainerSection {
            iterations: d.iterations,
            images_per_domain: d.images_per_domain,
            embed_dim: d.embed_dim,
            hidden_dim: d.hidden_dim,
            lr_initial: d.lr_initial,
            lr_decayed: d.lr_decayed,
            decay_iteration: d.decay_iteration,
            momentum: d.momentum,
            weight_decay: d.weight_decay,
            radius_lr: d.radius_lr,
            radius_init: d.radius_init,
            gamma: d.gamma,
            delta: d.delta,
            alpha: d.alpha,
            epoch_iterations: d.epoch_iterations,
            lambda: d.lambda,
            z_mode: ZModeSetting::BatchMean,
            z_fixed: 0.5,
            global_loss_variant: LossVariant::AdversarialComplement,
            instance_loss_variant: LossVariant::AdversarialComplement,
            joint_instance_histogram: d.joint_instance_histogram,
            log_interval: d.log_interval,
            eval_images_per_domain: d.eval_images_per_domain,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblationSection {
    pub gdpa: bool,
    pub idsa: bool,
    pub pcc: bool,
}

impl Default for AblationSection {
    fn default() -> Self {
        AblationSection { gdpa: true, idsa: true, pcc: true }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepAxis {
    Beta,
    Ablation,
}

/// Named module on/off combinations for ablation sweeps.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AblationVariant {
    Full,
    NoGdpa,
    NoIdsa,
    NoPcc,
    Baseline,
}

impl AblationVariant {
    pub fn name(self) -> &'static str {
        match self {
            AblationVariant::Full => "full",
            AblationVariant::NoGdpa => "no-gdpa",
            AblationVariant::NoIdsa => "no-idsa",
            AblationVariant::NoPcc => "no-pcc",
            AblationVariant::Baseline => "baseline",
        }
    }

    pub fn flags(self) -> AblationSection {
        match self {
            AblationVariant::Full => AblationSection { gdpa: true, idsa: true, pcc: true },
            AblationVariant::NoGdpa => AblationSection { gdpa: false, idsa: true, pcc: true },
            AblationVariant::NoIdsa => AblationSection { gdpa: true, idsa: false, pcc: true },
            AblationVariant::NoPcc => AblationSection { gdpa: true, idsa: true, pcc: false },
            AblationVariant::Baseline => {
                AblationSection { gdpa: false, idsa: false, pcc: false }
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    pub axis: SweepAxis,
    pub beta_values: Vec<f64>,
    pub ablation_variants: Vec<AblationVariant>,
}

impl Default for SweepSection {
    fn default() -> Self {
        SweepSection {
            axis: SweepAxis::Beta,
            beta_values: vec![0.25, 0.5, 0.75],
            ablation_variants: vec![
                AblationVariant::Full,
                AblationVariant::NoGdpa,
                AblationVariant::NoIdsa,
                AblationVariant::NoPcc,
                AblationVariant::Baseline,
            ],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub root: String,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection { root: "runs".into() }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<RunConfig, ConfigError> {
        let cfg: RunConfig =
            toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        if cfg.version != CONFIG_SCHEMA_VERSION {
            return Err(ConfigError::UnsupportedVersion { got: cfg.version });
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &std::path::Path) -> Result<RunConfig, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Io { path: path.display().to_string(), source: e })?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// Field-level validation; every problem is reported, not just the first.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let mut problems = Vec::new();
        let mut check = |ok: bool, msg: &str| {
            if !ok {
                problems.push(msg.to_string());
            }
        };
        let s = &self.scenario;
        check(s.n_union >= 1, "scenario.n_union: must be at least 1");
        check(s.dim >= 1, "scenario.dim: must be at least 1");
        check((0.0..=1.0).contains(&s.beta), "scenario.beta: must be within [0, 1]");
        check(s.instances_per_image >= 1, "scenario.instances_per_image: must be at least 1");
        check(!s.seeds.is_empty(), "scenario.seeds: must list at least one seed");
        check(s.shift.is_finite(), "scenario.shift: must be finite");
        check(s.spacing.is_finite(), "scenario.spacing: must be finite");

        let t = &self.trainer;
        check(t.iterations >= 1, "trainer.iterations: must be at least 1");
        check(t.images_per_domain >= 1, "trainer.images_per_domain: must be at least 1");
        check(t.embed_dim >= 1, "trainer.embed_dim: must be at least 1");
        check(t.hidden_dim >= 1, "trainer.hidden_dim: must be at least 1");
        check(t.lr_initial > 0.0, "trainer.lr_initial: must be positive");
        check(t.lr_decayed > 0.0, "trainer.lr_decayed: must be positive");
        check(t.momentum >= 0.0 && t.momentum < 1.0, "trainer.momentum: must be in [0, 1)");
        check(t.weight_decay >= 0.0, "trainer.weight_decay: must be nonnegative");
        check(t.radius_lr > 0.0, "trainer.radius_lr: must be positive");
        check(t.gamma >= 0.0, "trainer.gamma: must be nonnegative");
        check(t.delta > 0.0, "trainer.delta: must be positive");
        check(t.alpha >= 0.0, "trainer.alpha: must be nonnegative");
        check(t.epoch_iterations >= 1, "trainer.epoch_iterations: must be at least 1");
        check(t.lambda >= 0.0, "trainer.lambda: must be nonnegative");
        check((0.0..=1.0).contains(&t.z_fixed), "trainer.z_fixed: must be within [0, 1]");
        check(t.log_interval >= 1, "trainer.log_interval: must be at least 1");
        check(
            t.eval_images_per_domain >= 1,
            "trainer.eval_images_per_domain: must be at least 1",
        );

        match self.sweep.axis {
            SweepAxis::Beta => check(
                !self.sweep.beta_values.is_empty(),
                "sweep.beta_values: must list at least one value for a beta sweep",
            ),
            SweepAxis::Ablation => check(
                !self.sweep.ablation_variants.is_empty(),
                "sweep.ablation_variants: must list at least one variant for an ablation sweep",
            ),
        }
        check(!self.output.root.is_empty(), "output.root: must not be empty");

        if problems.is_empty() {
            Ok(())
        } else {
            Err(ConfigError::Invalid(problems))
        }
    }

    /// Build the scenario for one seed; unrealizable beta surfaces here with
    /// the nearest realizable ratios in the message.
    pub fn build_scenario(&self, seed: u64) -> Result<Scenario, ScenarioError> {
        let s = &self.scenario;
        Ok(scenario::make_scenario(s.beta, s.n_union, s.dim, s.shift, seed)?
            .with_spacing(s.spacing)
            .with_instances_per_image(s.instances_per_image))
    }

    pub fn trainer_options(&self) -> TrainerOptions {
        let t = &self.trainer;
        TrainerOptions {
            iterations: t.iterations,
            images_per_domain: t.images_per_domain,
            embed_dim: t.embed_dim,
            hidden_dim: t.hidden_dim,
            lr_initial: t.lr_initial,
            lr_decayed: t.lr_decayed,
            decay_iteration: t.decay_iteration,
            momentum: t.momentum,
            weight_decay: t.weight_decay,
            radius_lr: t.radius_lr,
            radius_init: t.radius_init,
            gamma: t.gamma,
            delta: t.delta,
            alpha: t.alpha,
            epoch_iterations: t.epoch_iterations,
            lambda: t.lambda,
            z_mode: match t.z_mode {
                ZModeSetting::BatchMean => ZMode::BatchMean,
                ZModeSetting::Fixed => ZMode::Fixed(t.z_fixed),
            },
            global_variant: t.global_loss_variant,
            instance_variant: t.instance_loss_variant,
            joint_instance_histogram: t.joint_instance_histogram,
            gdpa_enabled: self.ablation.gdpa,
            idsa_enabled: self.ablation.idsa,
            pcc_enabled: self.ablation.pcc,
            log_interval: t.log_interval,
            eval_images_per_domain: t.eval_images_per_domain,
        }
    }

    /// Copy of this config with the given ablation variant applied.
    pub fn with_ablation(&self, variant: AblationVariant) -> RunConfig {
        let mut cfg = self.clone();
        cfg.ablation = variant.flags();
        cfg
    }

    /// Copy of this config with another shared-category ratio.
    pub fn with_beta(&self, beta: f64) -> RunConfig {
        let mut cfg = self.clone();
        cfg.scenario.beta = beta;
        cfg
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        let cfg = RunConfig::default();
        cfg.validate().unwrap();
    }

    #[test]
    fn empty_document_parses_to_defaults() {
        let cfg = RunConfig::from_toml_str("").unwrap();
        assert_eq!(cfg, RunConfig::default());
    }

    #[test]
    fn round_trip_is_identity() {
        let mut cfg = RunConfig::default();
        cfg.scenario.beta = 0.25;
        cfg.trainer.gamma = 1.5;
        cfg.trainer.z_mode = ZModeSetting::Fixed;
        cfg.ablation.pcc = false;
        let text = cfg.to_toml_string();
        let back = RunConfig::from_toml_str(&text).unwrap();
        assert_eq!(cfg, back);
        assert_eq!(back.to_toml_string(), text);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = RunConfig::from_toml_str("[trainer]\nlearning_rate = 0.1\n").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("learning_rate"), "message: {msg}");
    }

    #[test]
    fn invalid_fields_are_reported_together() {
        let text = "[trainer]\niterations = 0\ndelta = 0.0\n";
        match RunConfig::from_toml_str(text).unwrap_err() {
            ConfigError::Invalid(problems) => {
                assert!(problems.iter().any(|p| p.contains("trainer.iterations")));
                assert!(problems.iter().any(|p| p.contains("trainer.delta")));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unrealizable_beta_is_reported_with_alternatives() {
        let mut cfg = RunConfig::default();
        cfg.scenario.beta = 0.3;
        cfg.scenario.n_union = 7;
        let err = cfg.build_scenario(0).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("0.2857142857142857") && msg.contains("0.42857142857142855"));
    }

    #[test]
    fn ablation_variants_toggle_modules() {
        let cfg = RunConfig::default().with_ablation(AblationVariant::NoIdsa);
        let opts = cfg.trainer_options();
        assert!(opts.gdpa_enabled && !opts.idsa_enabled && opts.pcc_enabled);
        let base = RunConfig::default().with_ablation(AblationVariant::Baseline);
        let opts = base.trainer_options();
        assert!(!opts.gdpa_enabled && !opts.idsa_enabled && !opts.pcc_enabled);
    }
}
