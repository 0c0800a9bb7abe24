//! Private-class constraint.
//!
//! Classifier predictions that appear in only one domain's predicted set
//! define the batch's private categories. For each domain, the private
//! samples' distances to their feature centroid and to their probability
//! centroid form two profiles; the consistency score is the cosine between
//! the profiles scaled by 1/n. The loss is the squared gap between the two
//! domains' scores, with the source side detached.

use std::collections::BTreeSet;

use crate::autodiff::{AutodiffError, Tape, Tensor, Var};
use crate::events::{EventKind, EventLog};
use crate::Domain;

/// Categories predicted in exactly one domain, with the member sample
/// indices per domain.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct PrivateSet {
    pub categories: BTreeSet<usize>,
    pub source_members: Vec<usize>,
    pub target_members: Vec<usize>,
}

/// Symmetric difference of the two predicted-label sets, with per-domain
/// membership: a source sample is a member iff its prediction is absent from
/// the target's predicted set, and vice versa.
pub fn private_categories(preds_s: &[usize], preds_t: &[usize]) -> PrivateSet {
    let set_s: BTreeSet<usize> = preds_s.iter().copied().collect();
    let set_t: BTreeSet<usize> = preds_t.iter().copied().collect();
    let only_s: BTreeSet<usize> = set_s.difference(&set_t).copied().collect();
    let only_t: BTreeSet<usize> = set_t.difference(&set_s).copied().collect();

    PrivateSet {
        categories: only_s.union(&only_t).copied().collect(),
        source_members: preds_s
            .iter()
            .enumerate()
            .filter(|(_, c)| only_s.contains(c))
            .map(|(i, _)| i)
            .collect(),
        target_members: preds_t
            .iter()
            .enumerate()
            .filter(|(_, c)| only_t.contains(c))
            .map(|(i, _)| i)
            .collect(),
    }
}

/// Consistency score of one domain's private samples: a tape node plus its
/// forward value. `|value| <= 1/n`.
#[derive(Clone, Copy, Debug)]
pub struct ConsistencyScore {
    pub var: Var,
    pub value: f64,
    pub n: usize,
}

/// Norm threshold below which a distance profile counts as degenerate.
const PROFILE_NORM_FLOOR: f64 = 1e-12;

/// Value-level consistency of two precomputed distance profiles:
/// `(1/n) (G . g) / (|G| |g|)`. `None` when either profile has
/// (near-)zero norm. Serves as the scalar oracle for [`consistency`].
pub fn profile_consistency(feat_profile: &[f64], prob_profile: &[f64]) -> Option<f64> {
    assert_eq!(feat_profile.len(), prob_profile.len());
    let n = feat_profile.len() as f64;
    let dot: f64 = feat_profile.iter().zip(prob_profile).map(|(a, b)| a * b).sum();
    let ng = feat_profile.iter().map(|x| x * x).sum::<f64>().sqrt();
    let np = prob_profile.iter().map(|x| x * x).sum::<f64>().sqrt();
    if ng < PROFILE_NORM_FLOOR || np < PROFILE_NORM_FLOOR {
        return None;
    }
    Some(dot / (ng * np) / n)
}

/// Differentiable consistency score for one domain's private samples.
///
/// `features` is the `[n, d]` matrix of private instance features and
/// `probs` their length-n domain probabilities. Returns `None` (recording an
/// event) when fewer than 2 samples are given or a profile degenerates.
pub fn consistency(
    tape: &mut Tape,
    features: Var,
    probs: Var,
    domain: Domain,
    events: &mut EventLog,
) -> Result<Option<ConsistencyScore>, AutodiffError> {
    let n = tape.value(features).rows();
    if tape.value(features).rank() != 2 || n < 2 {
        events.record(
            EventKind::PccSkipped,
            Some(domain),
            format!("{n} private samples (need at least 2)"),
        );
        return Ok(None);
    }

    // feature-space profile: G_i = |x_i - mean(x)|
    let centroid = tape.mean_rows(features)?;
    let ones = tape.input(Tensor::matrix(n, 1, vec![1.0; n]));
    let tiled = tape.matmul(ones, centroid)?;
    let centered = tape.sub(features, tiled)?;
    let feat_profile = tape.l2_norm_rows(centered)?;

    // probability-space profile: g_i = |p_i - mean(p)|
    let p_mean = tape.mean(probs)?;
    let deviation = tape.sub(probs, p_mean)?;
    let prob_profile = tape.abs(deviation)?;

    let norm_f = tape.l2_norm(feat_profile)?;
    let norm_p = tape.l2_norm(prob_profile)?;
    if tape.value(norm_f).item() < PROFILE_NORM_FLOOR
        || tape.value(norm_p).item() < PROFILE_NORM_FLOOR
    {
        events.record(EventKind::PccSkipped, Some(domain), "zero-norm distance profile");
        return Ok(None);
    }

    let dot = {
        let prod = tape.mul(feat_profile, prob_profile)?;
        tape.sum(prod)?
    };
    let norm_prod = tape.mul(norm_f, norm_p)?;
    let inv = tape.powf(norm_prod, -1.0)?;
    let cosine = tape.mul(dot, inv)?;
    let score = tape.mul_scalar(cosine, 1.0 / n as f64)?;

    Ok(Some(ConsistencyScore { var: score, value: tape.value(score).item(), n }))
}

/// Squared gap between the two consistency scores, with the source branch
/// detached so only the target side carries gradient.
pub fn pcc_loss(
    tape: &mut Tape,
    eps_s: &ConsistencyScore,
    eps_t: &ConsistencyScore,
) -> Result<Var, AutodiffError> {
    let s_detached = tape.detach(eps_s.var)?;
    let diff = tape.sub(s_detached, eps_t.var)?;
    tape.powf(diff, 2.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha12Rng;

    #[test]
    fn identical_predicted_sets_have_no_private_categories() {
        let p = private_categories(&[0, 1, 0], &[1, 0, 1]);
        assert!(p.categories.is_empty());
        assert!(p.source_members.is_empty() && p.target_members.is_empty());
    }

    #[test]
    fn set_difference_marks_source_private() {
        let p = private_categories(&[0, 1, 2], &[0]);
        assert_eq!(p.categories, BTreeSet::from([1, 2]));
        assert_eq!(p.source_members, vec![1, 2]);
        assert!(p.target_members.is_empty());
    }

    #[test]
    fn disjoint_sets_are_fully_private() {
        let p = private_categories(&[0, 1], &[2, 3]);
        assert_eq!(p.categories, BTreeSet::from([0, 1, 2, 3]));
        assert_eq!(p.source_members, vec![0, 1]);
        assert_eq!(p.target_members, vec![0, 1]);
    }

    #[test]
    fn proportional_profiles_score_one_over_n() {
        let v = profile_consistency(&[2.0, 2.0], &[0.1, 0.1]).unwrap();
        assert!((v - 0.5).abs() < 1e-12);

        // end-to-end: features [0], [4] give G = (2, 2); probs 0.3/0.5 give
        // g = (0.1, 0.1) = 0.05 G, so the cosine is 1 and the score 1/2
        let mut tape = Tape::new();
        let mut events = EventLog::new();
        let x = tape.input(Tensor::matrix(2, 1, vec![0.0, 4.0]));
        let p = tape.input(Tensor::vector(vec![0.3, 0.5]));
        let score = consistency(&mut tape, x, p, Domain::Source, &mut events)
            .unwrap()
            .expect("defined");
        assert!((score.value - 0.5).abs() < 1e-12, "score = {}", score.value);
    }

    #[test]
    fn orthogonal_profiles_score_zero() {
        assert_eq!(profile_consistency(&[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0]), Some(0.0));
    }

    #[test]
    fn zero_norm_profile_is_undefined() {
        assert_eq!(profile_consistency(&[0.0, 0.0], &[0.1, 0.1]), None);

        // identical probabilities give a zero-norm probability profile
        let mut tape = Tape::new();
        let mut events = EventLog::new();
        let x = tape.input(Tensor::matrix(2, 1, vec![0.0, 4.0]));
        let p = tape.input(Tensor::vector(vec![0.4, 0.4]));
        let score = consistency(&mut tape, x, p, Domain::Target, &mut events).unwrap();
        assert!(score.is_none());
        assert!(events.has(EventKind::PccSkipped));
    }

    #[test]
    fn single_sample_is_skipped() {
        let mut tape = Tape::new();
        let mut events = EventLog::new();
        let x = tape.input(Tensor::matrix(1, 3, vec![1.0, 2.0, 3.0]));
        let p = tape.input(Tensor::vector(vec![0.7]));
        assert!(consistency(&mut tape, x, p, Domain::Source, &mut events).unwrap().is_none());
        assert!(events.has(EventKind::PccSkipped));
    }

    #[test]
    fn four_sample_case_matches_scalar_brute_force() {
        let feats = [
            vec![1.0, 0.0, 2.0],
            vec![-1.0, 3.0, 0.5],
            vec![0.25, 1.0, -2.0],
            vec![2.0, -1.0, 1.0],
        ];
        let probs = [0.2, 0.7, 0.55, 0.4];

        // brute-force scalar computation, kept free of tape code
        let n = 4;
        let mut mean = [0.0; 3];
        for f in &feats {
            for (m, v) in mean.iter_mut().zip(f) {
                *m += v / n as f64;
            }
        }
        let g_prof: Vec<f64> = feats
            .iter()
            .map(|f| {
                f.iter().zip(&mean).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
            })
            .collect();
        let p_mean = probs.iter().sum::<f64>() / n as f64;
        let p_prof: Vec<f64> = probs.iter().map(|p| (p - p_mean).abs()).collect();
        let dot: f64 = g_prof.iter().zip(&p_prof).map(|(a, b)| a * b).sum();
        let ng = g_prof.iter().map(|x| x * x).sum::<f64>().sqrt();
        let np = p_prof.iter().map(|x| x * x).sum::<f64>().sqrt();
        let expected = dot / (ng * np) / n as f64;

        let mut tape = Tape::new();
        let mut events = EventLog::new();
        let x = tape.input(Tensor::from_rows(&feats));
        let p = tape.input(Tensor::vector(probs.to_vec()));
        let score = consistency(&mut tape, x, p, Domain::Source, &mut events)
            .unwrap()
            .expect("defined");
        assert!((score.value - expected).abs() < 1e-12);
    }

    #[test]
    fn loss_zero_at_equal_scores_and_hand_value() {
        // scores driven by leaves so the consistency graph is irrelevant here
        let mut tape = Tape::new();
        let a = tape.param(Tensor::scalar(0.2));
        let b = tape.param(Tensor::scalar(-0.1));
        let eps_s = ConsistencyScore { var: a, value: 0.2, n: 4 };
        let eps_t = ConsistencyScore { var: b, value: -0.1, n: 4 };
        let loss = pcc_loss(&mut tape, &eps_s, &eps_t).unwrap();
        assert!((tape.value(loss).item() - 0.09).abs() < 1e-12);

        let eq = ConsistencyScore { var: a, value: 0.2, n: 4 };
        let loss0 = pcc_loss(&mut tape, &eps_s, &eq).unwrap();
        assert_eq!(tape.value(loss0).item(), 0.0);
    }

    #[test]
    fn loss_gradient_flows_only_through_target() {
        // d loss / d eps_s = 0 (detach), d loss / d eps_t = -2 (eps_s - eps_t)
        let mut tape = Tape::new();
        let a = tape.param(Tensor::scalar(0.2));
        let b = tape.param(Tensor::scalar(-0.1));
        let eps_s = ConsistencyScore { var: a, value: 0.2, n: 4 };
        let eps_t = ConsistencyScore { var: b, value: -0.1, n: 4 };
        let loss = pcc_loss(&mut tape, &eps_s, &eps_t).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(a).unwrap().item(), 0.0);
        assert!((grads.get(b).unwrap().item() - (-2.0 * 0.3)).abs() < 1e-12);
    }

    #[test]
    fn source_side_parameters_receive_zero_gradient() {
        let mut tape = Tape::new();
        let mut events = EventLog::new();
        let xs = tape.param(Tensor::matrix(3, 2, vec![0.1, 0.9, -0.5, 0.3, 1.2, -0.2]));
        let ps = tape.param(Tensor::vector(vec![0.2, 0.5, 0.9]));
        let xt = tape.param(Tensor::matrix(3, 2, vec![1.0, 0.2, 0.4, -0.3, -0.8, 0.6]));
        let pt = tape.param(Tensor::vector(vec![0.7, 0.3, 0.6]));

        let eps_s =
            consistency(&mut tape, xs, ps, Domain::Source, &mut events).unwrap().unwrap();
        let eps_t =
            consistency(&mut tape, xt, pt, Domain::Target, &mut events).unwrap().unwrap();
        let loss = pcc_loss(&mut tape, &eps_s, &eps_t).unwrap();
        let grads = tape.backward(loss).unwrap();

        assert!(grads.get(xs).unwrap().data().iter().all(|&g| g == 0.0));
        assert!(grads.get(ps).unwrap().data().iter().all(|&g| g == 0.0));
        assert!(grads.get(xt).unwrap().data().iter().any(|&g| g != 0.0));
        assert!(grads.get(pt).unwrap().data().iter().any(|&g| g != 0.0));
    }

    #[test]
    fn consistency_gradient_matches_finite_differences() {
        let feats = vec![0.4, -0.2, 0.9, 0.7, -1.1, 0.3];
        let probs = vec![0.25, 0.65, 0.45];
        let eval = |fv: &[f64], pv: &[f64]| {
            let mut tape = Tape::new();
            let mut events = EventLog::new();
            let x = tape.param(Tensor::matrix(3, 2, fv.to_vec()));
            let p = tape.param(Tensor::vector(pv.to_vec()));
            consistency(&mut tape, x, p, Domain::Target, &mut events)
                .unwrap()
                .unwrap()
                .value
        };

        let mut tape = Tape::new();
        let mut events = EventLog::new();
        let x = tape.param(Tensor::matrix(3, 2, feats.clone()));
        let p = tape.param(Tensor::vector(probs.clone()));
        let score = consistency(&mut tape, x, p, Domain::Target, &mut events).unwrap().unwrap();
        let grads = tape.backward(score.var).unwrap();

        let h = 1e-6;
        for i in 0..feats.len() {
            let (mut hi, mut lo) = (feats.clone(), feats.clone());
            hi[i] += h;
            lo[i] -= h;
            let fd = (eval(&hi, &probs) - eval(&lo, &probs)) / (2.0 * h);
            let a = grads.get(x).unwrap().data()[i];
            let rel = (a - fd).abs() / (a.abs() + fd.abs()).max(1e-8);
            assert!(rel < 1e-4, "feature {i}: analytic {a} vs fd {fd}");
        }
        for i in 0..probs.len() {
            let (mut hi, mut lo) = (probs.clone(), probs.clone());
            hi[i] += h;
            lo[i] -= h;
            let fd = (eval(&feats, &hi) - eval(&feats, &lo)) / (2.0 * h);
            let a = grads.get(p).unwrap().data()[i];
            let rel = (a - fd).abs() / (a.abs() + fd.abs()).max(1e-8);
            assert!(rel < 1e-4, "prob {i}: analytic {a} vs fd {fd}");
        }
    }

    proptest! {
        #[test]
        fn categories_are_symmetric_under_swap(
            s in proptest::collection::vec(0usize..8, 1..16),
            t in proptest::collection::vec(0usize..8, 1..16),
        ) {
            let a = private_categories(&s, &t);
            let b = private_categories(&t, &s);
            prop_assert_eq!(&a.categories, &b.categories);
            prop_assert_eq!(a.source_members, b.target_members);
            prop_assert_eq!(a.target_members, b.source_members);
        }

        #[test]
        fn score_magnitude_is_bounded_by_one_over_n(
            seed in any::<u64>(),
            n in 2usize..12,
            d in 1usize..5,
        ) {
            let mut rng = ChaCha12Rng::seed_from_u64(seed);
            let feats: Vec<f64> = (0..n * d).map(|_| rng.random_range(-2.0..2.0)).collect();
            let probs: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
            let mut tape = Tape::new();
            let mut events = EventLog::new();
            let x = tape.input(Tensor::matrix(n, d, feats));
            let p = tape.input(Tensor::vector(probs));
            if let Some(score) =
                consistency(&mut tape, x, p, Domain::Source, &mut events).unwrap()
            {
                prop_assert!(score.value.abs() <= 1.0 / n as f64 + 1e-12);
            }
        }

        #[test]
        fn score_invariant_to_translation_and_deviation_scaling(
            seed in any::<u64>(),
            shift in -3.0f64..3.0,
            k in 0.05f64..4.0,
        ) {
            let mut rng = ChaCha12Rng::seed_from_u64(seed);
            let n = 5;
            let feats: Vec<f64> = (0..n * 2).map(|_| rng.random_range(-2.0..2.0)).collect();
            let probs: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..0.9)).collect();

            let score_of = |fv: &[f64], pv: &[f64]| {
                let mut tape = Tape::new();
                let mut events = EventLog::new();
                let x = tape.input(Tensor::matrix(n, 2, fv.to_vec()));
                let p = tape.input(Tensor::vector(pv.to_vec()));
                consistency(&mut tape, x, p, Domain::Source, &mut events)
                    .unwrap()
                    .map(|s| s.value)
            };

            let base = score_of(&feats, &probs);
            prop_assume!(base.is_some());

            let shifted: Vec<f64> = feats.iter().map(|v| v + shift).collect();
            let p_mean = probs.iter().sum::<f64>() / n as f64;
            let scaled: Vec<f64> = probs.iter().map(|p| p_mean + k * (p - p_mean)).collect();

            let moved = score_of(&shifted, &scaled).expect("still defined");
            prop_assert!((moved - base.unwrap()).abs() < 1e-9);
        }
    }
}
