//! Synthetic universal-domain-adaptation scenarios.
//!
//! A scenario is a pair of category sets with a controllable shared ratio
//! `beta = |Cs intersect Ct| / |Cs union Ct|`, one unit-variance Gaussian
//! cluster per (domain, class). Target shared clusters are translated by a
//! constant shift vector (covariate shift); private clusters sit at their own
//! means (label shift). Batches come as pseudo-images: `m` instances drawn
//! from one cluster plus a noisy instance-mean global feature.
//!
//! Sampling is counter-based: each `(call, domain)` pair gets its own ChaCha
//! stream, so the same seed and call index always reproduce the same bits and
//! parallel workers never overlap.

use rand::prelude::*;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::Tensor;
use crate::Domain;

pub const SCENARIO_SCHEMA_VERSION: u32 = 1;

/// Standard deviation of the isotropic noise added to the instance mean to
/// form the global feature.
pub const GLOBAL_NOISE_STD: f64 = 0.05;

#[derive(Debug, Error, PartialEq)]
pub enum ScenarioError {
    #[error(
        "beta {requested} is not realizable with {n_union} categories; \
         nearest realizable ratios are {lower} and {upper}"
    )]
    UnrealizableBeta { requested: f64, n_union: usize, lower: f64, upper: f64 },
    #[error("n_union must be at least 1")]
    EmptyUnion,
    #[error("dim must be at least 1")]
    ZeroDim,
    #[error("unsupported scenario schema version {got} (expected {SCENARIO_SCHEMA_VERSION})")]
    UnsupportedVersion { got: u32 },
    #[error("scenario document is inconsistent: {0}")]
    Inconsistent(String),
    #[error("scenario parse error: {0}")]
    Parse(String),
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct ClusterMean {
    pub domain: Domain,
    pub class: usize,
    pub mean: Vec<f64>,
}

/// Immutable scenario specification. Construct with [`make_scenario`], then
/// draw batches with [`Scenario::sample_batch`].
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct Scenario {
    version: u32,
    dim: usize,
    seed: u64,
    shift: f64,
    spacing: f64,
    instances_per_image: usize,
    categories_s: Vec<usize>,
    categories_t: Vec<usize>,
    shared: Vec<usize>,
    cluster_means: Vec<ClusterMean>,
}

/// One synthetic "image": `m` instances from a single class cluster plus a
/// pooled global feature. Class labels are only handed out through
/// [`PseudoImage::label_for_training`] (source only) and
/// [`PseudoImage::label_for_evaluation`].
#[derive(Clone, Debug)]
pub struct PseudoImage {
    pub domain: Domain,
    /// `[m, dim]` instance features.
    pub instances: Tensor,
    /// Instance mean plus isotropic noise.
    pub global: Vec<f64>,
    label: usize,
}

impl PseudoImage {
    /// Class label for supervised training; only the source domain is
    /// labeled there.
    pub fn label_for_training(&self) -> Option<usize> {
        match self.domain {
            Domain::Source => Some(self.label),
            Domain::Target => None,
        }
    }

    /// Class label for evaluation, available for both domains.
    pub fn label_for_evaluation(&self) -> usize {
        self.label
    }

    pub fn instance_count(&self) -> usize {
        self.instances.rows()
    }
}

/// Build a scenario realizing `beta` exactly over `n_union` categories.
/// Shared classes come first; private classes alternate source, target,
/// source, ... Defaults: 8 instances per image, class-mean spacing 4.0.
pub fn make_scenario(
    beta: f64,
    n_union: usize,
    dim: usize,
    shift: f64,
    seed: u64,
) -> Result<Scenario, ScenarioError> {
    if n_union == 0 {
        return Err(ScenarioError::EmptyUnion);
    }
    if dim == 0 {
        return Err(ScenarioError::ZeroDim);
    }
    let exact = beta * n_union as f64;
    let rounded = exact.round();
    if (exact - rounded).abs() > 1e-9 || !(0.0..=n_union as f64).contains(&rounded) {
        let lower = exact.floor().clamp(0.0, n_union as f64) / n_union as f64;
        let upper = exact.ceil().clamp(0.0, n_union as f64) / n_union as f64;
        return Err(ScenarioError::UnrealizableBeta { requested: beta, n_union, lower, upper });
    }
    let n_shared = rounded as usize;

    let shared: Vec<usize> = (0..n_shared).collect();
    let mut categories_s = shared.clone();
    let mut categories_t = shared.clone();
    for (k, class) in (n_shared..n_union).enumerate() {
        if k % 2 == 0 {
            categories_s.push(class);
        } else {
            categories_t.push(class);
        }
    }

    let spacing = 4.0;
    let mut sc = Scenario {
        version: SCENARIO_SCHEMA_VERSION,
        dim,
        seed,
        shift,
        spacing,
        instances_per_image: 8,
        categories_s,
        categories_t,
        shared,
        cluster_means: Vec::new(),
    };
    sc.rebuild_means();
    Ok(sc)
}

impl Scenario {
    pub fn with_instances_per_image(mut self, m: usize) -> Self {
        assert!(m >= 1, "need at least one instance per image");
        self.instances_per_image = m;
        self
    }

    pub fn with_spacing(mut self, spacing: f64) -> Self {
        self.spacing = spacing;
        self.rebuild_means();
        self
    }

    fn rebuild_means(&mut self) {
        self.cluster_means.clear();
        let shift_vec = self.shift_vector();
        for &class in &self.categories_s {
            self.cluster_means.push(ClusterMean {
                domain: Domain::Source,
                class,
                mean: self.base_mean(class),
            });
        }
        for &class in &self.categories_t {
            let mut mean = self.base_mean(class);
            if self.shared.contains(&class) {
                for (m, s) in mean.iter_mut().zip(&shift_vec) {
                    *m += s;
                }
            }
            self.cluster_means.push(ClusterMean { domain: Domain::Target, class, mean });
        }
    }

    /// Simplex-like layout: class k sits on basis axis k (wrapping with a
    /// growing scale when there are more classes than dimensions).
    fn base_mean(&self, class: usize) -> Vec<f64> {
        let mut mean = vec![0.0; self.dim];
        let axis = class % self.dim;
        let tier = (class / self.dim) as f64;
        mean[axis] = self.spacing * (1.0 + tier);
        mean
    }

    /// Constant translation applied to target shared clusters, with L2 norm
    /// equal to the configured shift magnitude.
    fn shift_vector(&self) -> Vec<f64> {
        let unit = 1.0 / (self.dim as f64).sqrt();
        vec![self.shift * unit; self.dim]
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn instances_per_image(&self) -> usize {
        self.instances_per_image
    }

    pub fn categories(&self, domain: Domain) -> &[usize] {
        match domain {
            Domain::Source => &self.categories_s,
            Domain::Target => &self.categories_t,
        }
    }

    pub fn shared_categories(&self) -> &[usize] {
        &self.shared
    }

    /// Shared-category ratio recomputed from the class sets.
    pub fn beta(&self) -> f64 {
        let s: std::collections::BTreeSet<usize> = self.categories_s.iter().copied().collect();
        let t: std::collections::BTreeSet<usize> = self.categories_t.iter().copied().collect();
        let inter = s.intersection(&t).count() as f64;
        let union = s.union(&t).count() as f64;
        inter / union
    }

    /// Position of a class inside the source category list; classifier
    /// logits are indexed this way.
    pub fn source_class_index(&self, class: usize) -> Option<usize> {
        self.categories_s.iter().position(|&c| c == class)
    }

    pub fn n_source_classes(&self) -> usize {
        self.categories_s.len()
    }

    pub fn cluster_mean(&self, domain: Domain, class: usize) -> Option<&[f64]> {
        self.cluster_means
            .iter()
            .find(|c| c.domain == domain && c.class == class)
            .map(|c| c.mean.as_slice())
    }

    /// Draw `images_per_domain` pseudo-images for each domain. `call` indexes
    /// the random stream: the same `(seed, call)` reproduces the same batch.
    pub fn sample_batch(
        &self,
        images_per_domain: usize,
        call: u64,
    ) -> (Vec<PseudoImage>, Vec<PseudoImage>) {
        let source = self.sample_images(Domain::Source, images_per_domain, call);
        let target = self.sample_images(Domain::Target, images_per_domain, call);
        (source, target)
    }

    /// Draw images for one domain from the `(call, domain)` stream.
    pub fn sample_images(&self, domain: Domain, count: usize, call: u64) -> Vec<PseudoImage> {
        let mut rng = self.stream(call, domain);
        let classes = self.categories(domain);
        let m = self.instances_per_image;
        (0..count)
            .map(|_| {
                let class = classes[rng.random_range(0..classes.len())];
                let mean = self
                    .cluster_mean(domain, class)
                    .expect("class sets and cluster means are built together");
                let mut data = Vec::with_capacity(m * self.dim);
                for _ in 0..m {
                    for &mu in mean {
                        data.push(mu + rng.sample::<f64, _>(StandardNormal));
                    }
                }
                let instances = Tensor::matrix(m, self.dim, data);
                let mut global = vec![0.0; self.dim];
                for i in 0..m {
                    for (g, x) in global.iter_mut().zip(instances.row(i)) {
                        *g += x / m as f64;
                    }
                }
                for g in global.iter_mut() {
                    *g += GLOBAL_NOISE_STD * rng.sample::<f64, _>(StandardNormal);
                }
                PseudoImage { domain, instances, global, label: class }
            })
            .collect()
    }

    fn stream(&self, call: u64, domain: Domain) -> ChaCha12Rng {
        let mut rng = ChaCha12Rng::seed_from_u64(self.seed);
        rng.set_stream(call.wrapping_mul(2).wrapping_add(domain.index() as u64));
        rng
    }

    // ── serialization ───────────────────────────────────────────────────

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn from_json(text: &str) -> Result<Scenario, ScenarioError> {
        let sc: Scenario =
            serde_json::from_str(text).map_err(|e| ScenarioError::Parse(e.to_string()))?;
        if sc.version != SCENARIO_SCHEMA_VERSION {
            return Err(ScenarioError::UnsupportedVersion { got: sc.version });
        }
        sc.validate()?;
        Ok(sc)
    }

    fn validate(&self) -> Result<(), ScenarioError> {
        if self.dim == 0 {
            return Err(ScenarioError::ZeroDim);
        }
        for cm in &self.cluster_means {
            if cm.mean.len() != self.dim {
                return Err(ScenarioError::Inconsistent(format!(
                    "cluster mean for class {} has dim {} (expected {})",
                    cm.class,
                    cm.mean.len(),
                    self.dim
                )));
            }
        }
        for domain in Domain::BOTH {
            for &class in self.categories(domain) {
                if self.cluster_mean(domain, class).is_none() {
                    return Err(ScenarioError::Inconsistent(format!(
                        "{} class {class} has no cluster mean",
                        domain.name()
                    )));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    #[test]
    fn beta_one_is_closed_set() {
        let sc = make_scenario(1.0, 4, 8, 2.0, 0).unwrap();
        assert_eq!(sc.categories(Domain::Source), sc.categories(Domain::Target));
        assert_eq!(sc.shared_categories().len(), 4);
        assert_eq!(sc.beta(), 1.0);
    }

    #[test]
    fn beta_half_with_six_categories() {
        let sc = make_scenario(0.5, 6, 8, 2.0, 0).unwrap();
        assert_eq!(sc.shared_categories(), &[0, 1, 2]);
        let private_s: Vec<usize> =
            sc.categories(Domain::Source).iter().copied().filter(|c| *c >= 3).collect();
        let private_t: Vec<usize> =
            sc.categories(Domain::Target).iter().copied().filter(|c| *c >= 3).collect();
        assert_eq!(private_s.len() + private_t.len(), 3);
        assert_eq!(sc.beta(), 0.5);
    }

    #[test]
    fn beta_quarter_with_eight_categories() {
        // enumeration: |intersection| = 2, |union| = 8 is the only partition
        // of 8 classes with ratio exactly 1/4
        for k in 0..=8u32 {
            let realizes = k as f64 / 8.0 == 0.25;
            assert_eq!(realizes, k == 2);
        }
        let sc = make_scenario(0.25, 8, 16, 2.0, 3).unwrap();
        assert_eq!(sc.shared_categories().len(), 2);
        assert_eq!(sc.beta(), 0.25);
        // 6 private classes, split 3/3 by alternation
        assert_eq!(sc.categories(Domain::Source).len(), 5);
        assert_eq!(sc.categories(Domain::Target).len(), 5);
    }

    #[test]
    fn unrealizable_beta_names_nearest_ratios() {
        let err = make_scenario(0.3, 7, 8, 2.0, 0).unwrap_err();
        match err {
            ScenarioError::UnrealizableBeta { lower, upper, .. } => {
                assert!((lower - 2.0 / 7.0).abs() < 1e-12);
                assert!((upper - 3.0 / 7.0).abs() < 1e-12);
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn sampling_is_deterministic_per_call() {
        let sc = make_scenario(0.5, 6, 8, 2.0, 42).unwrap();
        let (s1, t1) = sc.sample_batch(3, 17);
        let (s2, t2) = sc.sample_batch(3, 17);
        for (a, b) in s1.iter().zip(&s2).chain(t1.iter().zip(&t2)) {
            assert_eq!(a.instances.data(), b.instances.data());
            assert_eq!(a.global, b.global);
            assert_eq!(a.label_for_evaluation(), b.label_for_evaluation());
        }
        let (s3, _) = sc.sample_batch(3, 18);
        assert_ne!(s1[0].instances.data(), s3[0].instances.data());
    }

    #[test]
    fn batch_instance_counting() {
        let sc = make_scenario(0.5, 6, 16, 2.0, 1).unwrap();
        let (s, t) = sc.sample_batch(4, 0);
        let total: usize = s.iter().map(|i| i.instance_count()).sum();
        assert_eq!(total, 32);
        assert_eq!(t.len(), 4);
        assert_eq!(s[0].instances.shape(), &[8, 16]);
    }

    #[test]
    fn class_frequencies_are_roughly_uniform() {
        let sc = make_scenario(0.5, 6, 4, 2.0, 7).unwrap();
        let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
        let per_call = 50;
        let calls = 200; // 10k images
        for call in 0..calls {
            for img in sc.sample_images(Domain::Source, per_call, call) {
                *counts.entry(img.label_for_evaluation()).or_default() += 1;
            }
        }
        let total = (per_call * calls as usize) as f64;
        let expected = 1.0 / sc.categories(Domain::Source).len() as f64;
        for (&class, &count) in &counts {
            let freq = count as f64 / total;
            assert!(
                (freq - expected).abs() < 0.02,
                "class {class}: freq {freq:.4} vs uniform {expected:.4}"
            );
        }
        assert_eq!(counts.len(), sc.categories(Domain::Source).len());
    }

    #[test]
    fn target_labels_hidden_from_training() {
        let sc = make_scenario(0.5, 6, 4, 2.0, 9).unwrap();
        let (s, t) = sc.sample_batch(2, 0);
        assert!(s.iter().all(|img| img.label_for_training().is_some()));
        assert!(t.iter().all(|img| img.label_for_training().is_none()));
    }

    #[test]
    fn shared_target_clusters_are_shifted() {
        let sc = make_scenario(0.5, 6, 16, 2.0, 0).unwrap();
        let shared = sc.shared_categories()[0];
        let src = sc.cluster_mean(Domain::Source, shared).unwrap();
        let tgt = sc.cluster_mean(Domain::Target, shared).unwrap();
        let dist: f64 =
            src.iter().zip(tgt).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        assert!((dist - 2.0).abs() < 1e-9, "shift magnitude {dist}");
    }

    #[test]
    fn json_round_trip_is_identity() {
        let sc = make_scenario(0.75, 8, 12, 1.5, 11).unwrap().with_instances_per_image(4);
        let text = sc.to_json();
        let back = Scenario::from_json(&text).unwrap();
        assert_eq!(sc, back);
    }

    #[test]
    fn version_mismatch_is_rejected() {
        let sc = make_scenario(0.5, 4, 4, 1.0, 0).unwrap();
        let text = sc.to_json().replace("\"version\": 1", "\"version\": 99");
        match Scenario::from_json(&text) {
            Err(ScenarioError::UnsupportedVersion { got: 99 }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }
}
