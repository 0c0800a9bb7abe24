//! Dual probabilistic alignment (DPA) for universal domain adaptation, at desk
//! scale.
//!
//! The crate trains a small feature extractor adversarially against global and
//! instance domain discriminators on synthetic source/target scenarios whose
//! category sets may differ. Domain probabilities are modeled as Gaussians:
//! the global level mines domain-private samples with a memory-bank centroid
//! and a learnable radius and weights its focal alignment loss by normal-CDF
//! coefficients; the instance level bins discriminator gradient norms to keep
//! domain-shared samples; a private-class constraint penalizes cross-domain
//! divergence of feature/probability consistency scores.
//!
//! Layout:
//! - [`autodiff`] — reverse-mode tape over small dense tensors (with gradient
//!   reversal and detach)
//! - [`gauss`] — error function, Gaussian fit, normal CDF
//! - [`gdpa`], [`idsa`], [`pcc`] — the three alignment modules
//! - [`scenario`] — synthetic universal-domain-adaptation data generator
//! - [`model`], [`optim`], [`trainer`] — networks, SGD/Adam, training loop
//! - [`config`], [`sweep`], [`export`] — run configuration, sweeps, figure data

pub mod autodiff;
pub mod config;
pub mod events;
pub mod export;
pub mod gauss;
pub mod gdpa;
pub mod idsa;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod pcc;
pub mod scenario;
pub mod sweep;
pub mod trainer;

/// Domain label. The convention throughout the crate is source = 0, target = 1.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum Domain {
    Source,
    Target,
}

impl Domain {
    pub const BOTH: [Domain; 2] = [Domain::Source, Domain::Target];

    /// Numeric label fed to discriminators and gradient-norm computations.
    pub fn label(self) -> f64 {
        match self {
            Domain::Source => 0.0,
            Domain::Target => 1.0,
        }
    }

    pub fn index(self) -> usize {
        match self {
            Domain::Source => 0,
            Domain::Target => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Domain::Source => "source",
            Domain::Target => "target",
        }
    }
}

/// Form of the target-domain factor in the adversarial alignment losses.
///
/// `AdversarialComplement` (the default) pairs `log p` on the source side
/// with `log(1 - p)` on the target side, so both sides vanish at their
/// optimum. `OneMinusLog` substitutes a `(1 - log p)` factor for the target
/// side; that factor does not vanish at the optimum and is kept only for
/// side-by-side comparison.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossVariant {
    #[default]
    AdversarialComplement,
    OneMinusLog,
}
