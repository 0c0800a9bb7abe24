//! Global-level domain-private alignment.
//!
//! Each pseudo-image's embedding is compared against a per-domain memory-bank
//! centroid; samples farther than a learnable softplus radius form the
//! negative (private-candidate) set. A boundary loss trains the radius, and
//! the adversarial focal loss over the negative set is weighted by normal-CDF
//! coefficients fitted to the per-domain probability batches.

use thiserror::Error;

use crate::autodiff::{AutodiffError, Tape, Tensor, Var, EPS_LOG};
use crate::events::{EventKind, EventLog};
use crate::gauss::{self, GaussError, GaussStats};
use crate::{Domain, LossVariant};

#[derive(Debug, Error, PartialEq)]
pub enum GdpaError {
    #[error("{domain} centroid is uninitialized; run update_centroid on a batch first")]
    CentroidUninitialized { domain: &'static str },
    #[error("feature dim {got} does not match bank dim {expected}")]
    DimMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Gauss(#[from] GaussError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

// ── memory bank ─────────────────────────────────────────────────────────

/// Per-domain global feature centroids, blended by cosine-similarity momentum.
#[derive(Clone, Debug)]
pub struct MemoryBank {
    centroids: [Vec<f64>; 2],
    initialized: [bool; 2],
}

impl MemoryBank {
    pub fn new(dim: usize) -> Self {
        MemoryBank { centroids: [vec![0.0; dim], vec![0.0; dim]], initialized: [false, false] }
    }

    pub fn dim(&self) -> usize {
        self.centroids[0].len()
    }

    pub fn is_initialized(&self, domain: Domain) -> bool {
        self.initialized[domain.index()]
    }

    pub fn centroid(&self, domain: Domain) -> Result<&[f64], GdpaError> {
        if !self.is_initialized(domain) {
            return Err(GdpaError::CentroidUninitialized { domain: domain.name() });
        }
        Ok(&self.centroids[domain.index()])
    }

    /// Momentum update: the first batch seeds the centroid; afterwards the
    /// centroid is blended as `c*pi + mean*(1-pi)` with `pi` the cosine
    /// similarity between the batch mean and the stored centroid.
    pub fn update_centroid(&mut self, domain: Domain, batch_mean: &[f64], events: &mut EventLog) {
        assert_eq!(batch_mean.len(), self.dim(), "batch mean dim mismatch");
        let mean_norm = l2(batch_mean);
        if mean_norm < 1e-12 {
            events.record(
                EventKind::CentroidUpdateSkipped,
                Some(domain),
                "zero-norm batch mean",
            );
            return;
        }
        let idx = domain.index();
        if !self.initialized[idx] {
            self.centroids[idx].copy_from_slice(batch_mean);
            self.initialized[idx] = true;
            return;
        }
        let c_norm = l2(&self.centroids[idx]);
        if c_norm < 1e-12 {
            events.record(
                EventKind::CentroidUpdateSkipped,
                Some(domain),
                "zero-norm stored centroid",
            );
            return;
        }
        let dot: f64 =
            batch_mean.iter().zip(&self.centroids[idx]).map(|(a, b)| a * b).sum();
        let pi = dot / (mean_norm * c_norm);
        for (c, m) in self.centroids[idx].iter_mut().zip(batch_mean) {
            *c = *c * pi + *m * (1.0 - pi);
        }
    }
}

fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

// ── learnable radius ────────────────────────────────────────────────────

/// Raw boundary parameters, one per domain. The effective radius is
/// `softplus(raw)`, strictly positive for any raw value.
#[derive(Clone, Copy, Debug)]
pub struct LearnableRadius {
    pub raw: [f64; 2],
}

impl LearnableRadius {
    pub fn new(raw_init: f64) -> Self {
        LearnableRadius { raw: [raw_init, raw_init] }
    }

    pub fn radius(&self, domain: Domain) -> f64 {
        softplus(self.raw[domain.index()])
    }
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

// ── sampling ────────────────────────────────────────────────────────────

/// Partition of a global batch by distance to the domain centroid.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GlobalSplit {
    /// Indices with distance <= d (shared candidates).
    pub pos_idx: Vec<usize>,
    /// Indices with distance > d (private candidates).
    pub neg_idx: Vec<usize>,
}

/// Euclidean distance of each feature row to the centroid.
pub fn distances(features: &Tensor, centroid: &[f64]) -> Result<Vec<f64>, GdpaError> {
    if features.rank() != 2 || features.cols() != centroid.len() {
        return Err(GdpaError::DimMismatch {
            expected: centroid.len(),
            got: if features.rank() == 2 { features.cols() } else { features.len() },
        });
    }
    Ok((0..features.rows())
        .map(|i| {
            features.row(i).iter().zip(centroid).map(|(x, c)| (x - c) * (x - c)).sum::<f64>()
                .sqrt()
        })
        .collect())
}

/// Split a batch into centroid-near positives and centroid-far negatives.
/// A sample exactly on the boundary is positive.
pub fn global_sample(
    features: &Tensor,
    centroid: &[f64],
    d: f64,
) -> Result<GlobalSplit, GdpaError> {
    let dist = distances(features, centroid)?;
    Ok(split_by_distance(&dist, d))
}

pub fn split_by_distance(dist: &[f64], d: f64) -> GlobalSplit {
    let mut split = GlobalSplit { pos_idx: Vec::new(), neg_idx: Vec::new() };
    for (i, &x) in dist.iter().enumerate() {
        if x > d {
            split.neg_idx.push(i);
        } else {
            split.pos_idx.push(i);
        }
    }
    split
}

// ── boundary loss ───────────────────────────────────────────────────────

/// Boundary loss for the learnable radius. Distances are constants; only the
/// radius node receives gradient, and d loss / d radius = (|neg| - |pos|)/n.
pub fn boundary_loss(
    tape: &mut Tape,
    dist: &[f64],
    split: &GlobalSplit,
    d: Var,
) -> Result<Var, GdpaError> {
    let n = dist.len() as f64;
    let n_neg = split.neg_idx.len() as f64;
    let n_pos = split.pos_idx.len() as f64;
    let sum_neg: f64 = split.neg_idx.iter().map(|&i| dist[i]).sum();
    let sum_pos: f64 = split.pos_idx.iter().map(|&i| dist[i]).sum();
    // (1/n) [sum_neg (d - dist) + sum_pos (dist - d)]
    let scaled = tape.mul_scalar(d, (n_neg - n_pos) / n)?;
    Ok(tape.add_scalar(scaled, (sum_pos - sum_neg) / n)?)
}

// ── alignment weights ───────────────────────────────────────────────────

/// Where the CDF evaluation point `z` comes from.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ZMode {
    /// Mean of the combined source+target probability batch.
    BatchMean,
    /// A fixed operating point, e.g. 0.5.
    Fixed(f64),
}

#[derive(Clone, Copy, Debug)]
pub struct GdpaWeights {
    pub w_s: f64,
    pub w_t: f64,
    pub phi_s: f64,
    pub phi_t: f64,
    /// Ratio-form weight trace logged alongside the coefficients; not used
    /// in the loss.
    pub fig_ratio: f64,
    pub fallback: bool,
}

/// Normal-CDF alignment weights for the two domains. The pair always sums
/// to 1; a vanishing denominator falls back to 0.5/0.5 and records an event.
pub fn gdpa_weights(
    probs_s: &[f64],
    probs_t: &[f64],
    z_mode: ZMode,
    events: &mut EventLog,
) -> Result<GdpaWeights, GdpaError> {
    let stats_s = gauss::fit_gauss(probs_s)?;
    let stats_t = gauss::fit_gauss(probs_t)?;
    let z = match z_mode {
        ZMode::Fixed(z) => z,
        ZMode::BatchMean => {
            let n = (probs_s.len() + probs_t.len()) as f64;
            (probs_s.iter().sum::<f64>() + probs_t.iter().sum::<f64>()) / n
        }
    };
    let phi_s = gauss::cdf(z, &stats_s);
    let phi_t = gauss::cdf(z, &stats_t);
    let denom = phi_s + (1.0 - phi_t);
    let fig_ratio = (phi_s / (1.0 - phi_t).max(1e-12)) / denom.max(1e-12);
    if denom < 1e-12 {
        events.record(
            EventKind::WeightFallback,
            None,
            format!("weight denominator {denom:e} underflowed"),
        );
        return Ok(GdpaWeights { w_s: 0.5, w_t: 0.5, phi_s, phi_t, fig_ratio, fallback: true });
    }
    // w_t as the complement keeps the pair summing to exactly 1.0; the clamp
    // keeps both weights strictly inside (0, 1) when one CDF saturates
    let w_s = (phi_s / denom).clamp(1e-12, 1.0 - 1e-12);
    Ok(GdpaWeights { w_s, w_t: 1.0 - w_s, phi_s, phi_t, fig_ratio, fallback: false })
}

impl GaussStats {
    /// Convenience used by metrics: CDF of these stats at `z`.
    pub fn cdf_at(&self, z: f64) -> f64 {
        gauss::cdf(z, self)
    }
}

// ── alignment loss ──────────────────────────────────────────────────────

/// Weighted focal alignment loss over the negative global samples of both
/// domains. `p_neg_s`/`p_neg_t` are probability vectors restricted to each
/// domain's negative set; either may be empty. Returns a constant zero and
/// records an event when both are.
pub fn gdpa_loss(
    tape: &mut Tape,
    p_neg_s: Var,
    p_neg_t: Var,
    weights: &GdpaWeights,
    gamma: f64,
    variant: LossVariant,
    events: &mut EventLog,
) -> Result<Var, GdpaError> {
    let n_s = tape.value(p_neg_s).len();
    let n_t = tape.value(p_neg_t).len();
    let n_neg = n_s + n_t;
    if n_neg == 0 {
        events.record(EventKind::GlobalEmptyNegatives, None, "no negative global samples");
        return Ok(tape.scalar_input(0.0));
    }

    // source: w_s * (1 - p)^gamma * log p
    let ps = tape.clamp(p_neg_s, EPS_LOG, 1.0 - EPS_LOG)?;
    let one_m_ps = tape.sub_from_scalar(1.0, ps)?;
    let focal_s = tape.powf(one_m_ps, gamma)?;
    let log_ps = tape.log(ps)?;
    let term_s = tape.mul(focal_s, log_ps)?;
    let sum_s = tape.sum(term_s)?;
    let weighted_s = tape.mul_scalar(sum_s, weights.w_s)?;

    // target: w_t * p^gamma * {log(1 - p) | (1 - log p)}
    let pt = tape.clamp(p_neg_t, EPS_LOG, 1.0 - EPS_LOG)?;
    let focal_t = tape.powf(pt, gamma)?;
    let factor_t = match variant {
        LossVariant::AdversarialComplement => {
            let one_m_pt = tape.sub_from_scalar(1.0, pt)?;
            tape.log(one_m_pt)?
        }
        LossVariant::OneMinusLog => {
            let log_pt = tape.log(pt)?;
            tape.sub_from_scalar(1.0, log_pt)?
        }
    };
    let term_t = tape.mul(focal_t, factor_t)?;
    let sum_t = tape.sum(term_t)?;
    let weighted_t = tape.mul_scalar(sum_t, weights.w_t)?;

    let total = tape.add(weighted_s, weighted_t)?;
    Ok(tape.mul_scalar(total, -1.0 / n_neg as f64)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn log(events: &mut Option<EventLog>) -> &mut EventLog {
        events.get_or_insert_with(EventLog::new)
    }

    #[test]
    fn all_far_samples_are_negative() {
        let f = Tensor::matrix(3, 1, vec![2.0, 2.0, 2.0]);
        let split = global_sample(&f, &[0.0], 1.0).unwrap();
        assert!(split.pos_idx.is_empty());
        assert_eq!(split.neg_idx, vec![0, 1, 2]);
    }

    #[test]
    fn boundary_distance_is_positive() {
        let f = Tensor::matrix(1, 2, vec![3.0, 4.0]); // distance exactly 5
        let split = global_sample(&f, &[0.0, 0.0], 5.0).unwrap();
        assert_eq!(split.pos_idx, vec![0]);
        assert!(split.neg_idx.is_empty());
    }

    #[test]
    fn mixed_batch_splits_four_four() {
        // brute-force distances: alternating 0.5 and 1.5 from the origin
        let rows: Vec<Vec<f64>> =
            (0..8).map(|i| vec![if i % 2 == 0 { 0.5 } else { 1.5 }]).collect();
        let f = Tensor::from_rows(&rows);
        let split = global_sample(&f, &[0.0], 1.0).unwrap();
        assert_eq!(split.pos_idx.len(), 4);
        assert_eq!(split.neg_idx.len(), 4);
    }

    #[test]
    fn uninitialized_centroid_is_an_error() {
        let bank = MemoryBank::new(2);
        let err = bank.centroid(Domain::Source).unwrap_err();
        assert!(err.to_string().contains("update_centroid"));
    }

    #[test]
    fn momentum_identical_mean_is_noop() {
        let mut events = EventLog::new();
        let mut bank = MemoryBank::new(2);
        bank.update_centroid(Domain::Source, &[1.0, 2.0], &mut events);
        bank.update_centroid(Domain::Source, &[1.0, 2.0], &mut events);
        assert_eq!(bank.centroid(Domain::Source).unwrap(), &[1.0, 2.0]);
    }

    #[test]
    fn momentum_orthogonal_mean_replaces_centroid() {
        let mut events = EventLog::new();
        let mut bank = MemoryBank::new(2);
        bank.update_centroid(Domain::Target, &[1.0, 0.0], &mut events);
        bank.update_centroid(Domain::Target, &[0.0, 1.0], &mut events);
        assert_eq!(bank.centroid(Domain::Target).unwrap(), &[0.0, 1.0]);
    }

    #[test]
    fn momentum_blend_hand_case() {
        // centroid (1,0), mean (0.6,0.8): pi = 0.6,
        // new = 0.6*(1,0) + 0.4*(0.6,0.8) = (0.84, 0.32)
        let mut events = EventLog::new();
        let mut bank = MemoryBank::new(2);
        bank.update_centroid(Domain::Source, &[1.0, 0.0], &mut events);
        bank.update_centroid(Domain::Source, &[0.6, 0.8], &mut events);
        let c = bank.centroid(Domain::Source).unwrap();
        assert!((c[0] - 0.84).abs() < 1e-12 && (c[1] - 0.32).abs() < 1e-12, "c = {c:?}");
    }

    #[test]
    fn zero_norm_mean_skips_update() {
        let mut events = EventLog::new();
        let mut bank = MemoryBank::new(2);
        bank.update_centroid(Domain::Source, &[0.0, 0.0], &mut events);
        assert!(!bank.is_initialized(Domain::Source));
        assert!(events.has(EventKind::CentroidUpdateSkipped));
    }

    #[test]
    fn radius_softplus_values() {
        let r = LearnableRadius::new(0.0);
        assert!((r.radius(Domain::Source) - std::f64::consts::LN_2).abs() < 1e-12);
        let r = LearnableRadius { raw: [-20.0, 1.0] };
        let tiny = r.radius(Domain::Source);
        assert!(tiny > 0.0 && (tiny - 2.06e-9).abs() < 1e-11, "tiny = {tiny:e}");
        // high-precision softplus(1) = ln(1 + e)
        assert!((r.radius(Domain::Target) - 1.3132616875182228).abs() < 1e-12);
    }

    #[test]
    fn boundary_loss_zero_when_all_on_boundary() {
        let mut tape = Tape::new();
        let d = tape.param(Tensor::scalar(1.0));
        let dist = [1.0, 1.0, 1.0];
        let split = split_by_distance(&dist, 1.0);
        let loss = boundary_loss(&mut tape, &dist, &split, d).unwrap();
        assert!(tape.value(loss).item().abs() < 1e-12);
    }

    #[test]
    fn boundary_loss_single_negative() {
        let mut tape = Tape::new();
        let d = tape.param(Tensor::scalar(1.0));
        let dist = [2.0];
        let split = split_by_distance(&dist, 1.0);
        let loss = boundary_loss(&mut tape, &dist, &split, d).unwrap();
        assert!((tape.value(loss).item() + 1.0).abs() < 1e-12);
    }

    #[test]
    fn boundary_loss_gradient_matches_count_rule() {
        // 3 negatives, 1 positive: d loss / d d = (3 - 1) / 4 = 0.5,
        // cross-checked against a central finite difference.
        let dist = [2.0, 2.5, 3.0, 0.5];
        let split = split_by_distance(&dist, 1.0);
        let eval = |dv: f64| {
            let mut tape = Tape::new();
            let d = tape.param(Tensor::scalar(dv));
            let loss = boundary_loss(&mut tape, &dist, &split, d).unwrap();
            tape.value(loss).item()
        };
        let h = 1e-5;
        let fd = (eval(1.0 + h) - eval(1.0 - h)) / (2.0 * h);

        let mut tape = Tape::new();
        let d = tape.param(Tensor::scalar(1.0));
        let loss = boundary_loss(&mut tape, &dist, &split, d).unwrap();
        let grads = tape.backward(loss).unwrap();
        let analytic = grads.get(d).unwrap().item();
        assert!((analytic - 0.5).abs() < 1e-12);
        assert!((analytic - fd).abs() < 1e-7, "analytic {analytic} vs fd {fd}");
    }

    #[test]
    fn weights_symmetric_distributions_split_evenly() {
        let mut events = EventLog::new();
        let w = gdpa_weights(&[0.4, 0.6], &[0.4, 0.6], ZMode::BatchMean, &mut events).unwrap();
        assert!((w.w_s - 0.5).abs() < 1e-12 && (w.w_t - 0.5).abs() < 1e-12);
        assert!(!w.fallback);
    }

    #[test]
    fn weights_always_sum_to_one() {
        let mut events = EventLog::new();
        let w = gdpa_weights(
            &[0.2, 0.35, 0.4],
            &[0.55, 0.6, 0.8],
            ZMode::BatchMean,
            &mut events,
        )
        .unwrap();
        assert_eq!(w.w_s + w.w_t, 1.0);
    }

    #[test]
    fn weights_tight_opposed_clusters_hit_fallback() {
        // source tight at 0.8, target tight at 0.2, z fixed at 0.5:
        // phi_s ~ 0 and 1 - phi_t ~ 0, so the denominator underflows.
        let mut events = EventLog::new();
        let w = gdpa_weights(
            &[0.8, 0.8, 0.8],
            &[0.2, 0.2, 0.2],
            ZMode::Fixed(0.5),
            &mut events,
        )
        .unwrap();
        assert!(w.fallback);
        assert_eq!((w.w_s, w.w_t), (0.5, 0.5));
        assert!(events.has(EventKind::WeightFallback));
    }

    fn mk_weights(w_s: f64, w_t: f64) -> GdpaWeights {
        GdpaWeights { w_s, w_t, phi_s: 0.5, phi_t: 0.5, fig_ratio: 1.0, fallback: false }
    }

    #[test]
    fn loss_half_probs_hand_value() {
        // gamma 0, w 0.5/0.5, one sample each side at p = 0.5:
        // -(1/2) [0.5 ln 0.5 + 0.5 ln 0.5] = (ln 2)/2
        let mut tape = Tape::new();
        let mut events = EventLog::new();
        let ps = tape.input(Tensor::vector(vec![0.5]));
        let pt = tape.input(Tensor::vector(vec![0.5]));
        let loss = gdpa_loss(
            &mut tape,
            ps,
            pt,
            &mk_weights(0.5, 0.5),
            0.0,
            LossVariant::AdversarialComplement,
            &mut events,
        )
        .unwrap();
        assert!((tape.value(loss).item() - 0.5 * std::f64::consts::LN_2).abs() < 1e-9);
    }

    #[test]
    fn loss_source_term_vanishes_at_saturation() {
        let mut tape = Tape::new();
        let mut events = EventLog::new();
        let ps = tape.input(Tensor::vector(vec![1.0 - 1e-9]));
        let pt = tape.input(Tensor::vector(vec![0.5]));
        let full = gdpa_loss(
            &mut tape,
            ps,
            pt,
            &mk_weights(1.0, 0.0),
            2.0,
            LossVariant::AdversarialComplement,
            &mut events,
        )
        .unwrap();
        assert!(tape.value(full).item().abs() < 1e-12);
    }

    #[test]
    fn loss_empty_negatives_returns_zero_with_event() {
        let mut tape = Tape::new();
        let mut events = EventLog::new();
        let ps = tape.input(Tensor::vector(vec![]));
        let pt = tape.input(Tensor::vector(vec![]));
        let loss = gdpa_loss(
            &mut tape,
            ps,
            pt,
            &mk_weights(0.5, 0.5),
            2.0,
            LossVariant::AdversarialComplement,
            &mut events,
        )
        .unwrap();
        assert_eq!(tape.value(loss).item(), 0.0);
        assert!(events.has(EventKind::GlobalEmptyNegatives));
    }

    #[test]
    fn one_minus_log_variant_matches_hand_value() {
        // gamma 0, w_t 1: -(1/1) [p^0 (1 - ln p)] at p = 0.5 -> -(1 + ln 2)
        let mut tape = Tape::new();
        let mut events = EventLog::new();
        let ps = tape.input(Tensor::vector(vec![]));
        let pt = tape.input(Tensor::vector(vec![0.5]));
        let loss = gdpa_loss(
            &mut tape,
            ps,
            pt,
            &mk_weights(0.0, 1.0),
            0.0,
            LossVariant::OneMinusLog,
            &mut events,
        )
        .unwrap();
        let expected = -(1.0 + std::f64::consts::LN_2);
        assert!((tape.value(loss).item() - expected).abs() < 1e-9);
    }

    #[test]
    fn boundary_descent_split_stabilizes() {
        // distances in two bands (3:1 imbalance); plain gradient descent on
        // the raw radius parameter must reach a split that stops changing.
        let mut dist = Vec::new();
        for i in 0..12 {
            dist.push(2.0 + 0.01 * i as f64);
        }
        for i in 0..4 {
            dist.push(0.5 + 0.01 * i as f64);
        }
        let mut raw = 0.8_f64;
        let mut last_split = None;
        let mut stable = 0;
        for _ in 0..500 {
            let mut tape = Tape::new();
            let raw_v = tape.param(Tensor::scalar(raw));
            let d_v = tape.softplus(raw_v).unwrap();
            let d = tape.value(d_v).item();
            let split = split_by_distance(&dist, d);
            let loss = boundary_loss(&mut tape, &dist, &split, d_v).unwrap();
            let grads = tape.backward(loss).unwrap();
            raw -= 0.05 * grads.get(raw_v).unwrap().item();
            if last_split.as_ref() == Some(&split) {
                stable += 1;
            } else {
                stable = 0;
                last_split = Some(split);
            }
        }
        assert!(stable >= 100, "split changed too recently: stable for {stable} steps");
    }

    proptest! {
        #[test]
        fn split_is_a_partition(
            dist in proptest::collection::vec(0.0f64..5.0, 1..64),
            d in 0.01f64..5.0,
        ) {
            let split = split_by_distance(&dist, d);
            let mut seen = vec![false; dist.len()];
            for &i in split.pos_idx.iter().chain(&split.neg_idx) {
                prop_assert!(!seen[i], "index {i} appears twice");
                seen[i] = true;
            }
            prop_assert!(seen.iter().all(|s| *s));
        }

        #[test]
        fn radius_is_strictly_positive(raw in -60.0f64..60.0) {
            let r = LearnableRadius::new(raw);
            prop_assert!(r.radius(Domain::Source) > 0.0);
        }

        #[test]
        fn momentum_update_is_bounded_blend(
            c in proptest::collection::vec(-3.0f64..3.0, 4),
            m in proptest::collection::vec(-3.0f64..3.0, 4),
        ) {
            prop_assume!(l2(&c) > 1e-6 && l2(&m) > 1e-6);
            let mut events = EventLog::new();
            let mut bank = MemoryBank::new(4);
            bank.update_centroid(Domain::Source, &c, &mut events);
            bank.update_centroid(Domain::Source, &m, &mut events);
            let new = bank.centroid(Domain::Source).unwrap();

            let dot: f64 = c.iter().zip(&m).map(|(a, b)| a * b).sum();
            let pi = dot / (l2(&c) * l2(&m));
            if pi >= 0.0 {
                for ((n, old), mean) in new.iter().zip(&c).zip(&m) {
                    let (lo, hi) = if old <= mean { (old, mean) } else { (mean, old) };
                    prop_assert!(*n >= lo - 1e-9 && *n <= hi + 1e-9);
                }
            } else {
                prop_assert!(l2(new) <= pi.abs() * l2(&c) + (1.0 - pi) * l2(&m) + 1e-9);
            }
        }

        #[test]
        fn weights_sum_to_one_when_not_fallback(
            ps in proptest::collection::vec(0.0f64..1.0, 2..32),
            pt in proptest::collection::vec(0.0f64..1.0, 2..32),
        ) {
            let mut events = EventLog::new();
            let w = gdpa_weights(&ps, &pt, ZMode::BatchMean, &mut events).unwrap();
            if !w.fallback {
                prop_assert_eq!(w.w_s + w.w_t, 1.0);
                prop_assert!(w.w_s > 0.0 && w.w_t > 0.0);
            }
        }
    }
}
