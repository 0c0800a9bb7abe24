//! Instance-level domain-shared alignment.
//!
//! Instance domain probabilities are mapped to gradient norms
//! `eta = |p - y_d|`, binned with a data-driven width, and modeled as a
//! binned Gaussian: the consecutive nonzero-frequency run around the mode is
//! kept (domain-shared candidates), low-frequency outlier bins are dropped,
//! and the kept samples share a single confusion-based weight.

use crate::autodiff::{AutodiffError, Tape, Tensor, Var, EPS_LOG};
use crate::events::{EventKind, EventLog};
use crate::{Domain, LossVariant};

/// Width rule floor: below this the batch is treated as having no spread at
/// all and everything lands in one bin.
pub const PSI_FLOOR: f64 = 1e-6;

/// Gradient norm of an instance domain probability: `|p - y_d|`.
pub fn grad_norm(p: f64, domain: Domain) -> f64 {
    (p - domain.label()).abs()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EtaStats {
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    pub std: f64,
}

/// Binned gradient-norm frequencies for one batch.
#[derive(Clone, Debug)]
pub struct GradNormHistogram {
    /// Bin width; never exceeds the `delta` it was built with.
    pub psi: f64,
    /// Frequency per bin, starting at `bin_offset`.
    pub freqs: Vec<u32>,
    /// Global index of the first entry of `freqs`.
    pub bin_offset: usize,
    /// Global bin index (`floor(eta / psi)`) per sample.
    pub bin_of_sample: Vec<usize>,
    pub eta_stats: EtaStats,
    /// True when the width rule collapsed (all etas nearly equal).
    pub degenerate: bool,
}

impl GradNormHistogram {
    pub fn freq_at(&self, bin: usize) -> u32 {
        if bin < self.bin_offset || bin >= self.bin_offset + self.freqs.len() {
            0
        } else {
            self.freqs[bin - self.bin_offset]
        }
    }

    pub fn sample_count(&self) -> usize {
        self.bin_of_sample.len()
    }
}

/// Build the gradient-norm histogram with width
/// `psi = min((eta_max - eta_min) * eta_std, delta)`. A collapsed width
/// (below [`PSI_FLOOR`]) falls back to `psi = delta` with every sample in a
/// single bin.
pub fn build_histogram(etas: &[f64], delta: f64) -> GradNormHistogram {
    assert!(!etas.is_empty(), "histogram needs at least one sample");
    assert!(delta > 0.0, "delta must be positive");

    let n = etas.len() as f64;
    let min = etas.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = etas.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mean = etas.iter().sum::<f64>() / n;
    let std = (etas.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>() / n).sqrt();
    let eta_stats = EtaStats { min, max, mean, std };

    let raw = (max - min) * std;
    let psi = raw.min(delta);
    if psi < PSI_FLOOR {
        let psi = delta;
        let bin = (mean / psi).floor() as usize;
        return GradNormHistogram {
            psi,
            freqs: vec![etas.len() as u32],
            bin_offset: bin,
            bin_of_sample: vec![bin; etas.len()],
            eta_stats,
            degenerate: true,
        };
    }

    let bin_of_sample: Vec<usize> = etas.iter().map(|e| (e / psi).floor() as usize).collect();
    let offset = *bin_of_sample.iter().min().expect("nonempty");
    let last = *bin_of_sample.iter().max().expect("nonempty");
    let mut freqs = vec![0u32; last - offset + 1];
    for &b in &bin_of_sample {
        freqs[b - offset] += 1;
    }
    GradNormHistogram { psi, freqs, bin_offset: offset, bin_of_sample, eta_stats, degenerate: false }
}

/// Tri-partition of the instance batch.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct InstanceSplit {
    /// Samples inside the selected consecutive run of nonzero bins.
    pub pos_idx: Vec<usize>,
    /// Samples in out-of-run bins rarer than the run's edge frequency.
    pub neg_idx: Vec<usize>,
    /// Out-of-run samples at least as frequent as the edge; weight 0 but
    /// counted separately in metrics.
    pub excluded_idx: Vec<usize>,
}

/// Select the consecutive nonzero-frequency run containing the most frequent
/// bin (lowest start index on ties). Out-of-run samples are negative when
/// their bin is rarer than the run's min edge frequency, excluded otherwise.
pub fn instance_sample(hist: &GradNormHistogram) -> InstanceSplit {
    // consecutive nonzero runs as (start, end) inclusive, in freqs coordinates
    let mut runs: Vec<(usize, usize)> = Vec::new();
    let mut start = None;
    for (i, &f) in hist.freqs.iter().enumerate() {
        match (f > 0, start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                runs.push((s, i - 1));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        runs.push((s, hist.freqs.len() - 1));
    }

    let max_freq = hist.freqs.iter().cloned().max().unwrap_or(0);
    let run = runs
        .iter()
        .find(|(s, e)| hist.freqs[*s..=*e].iter().any(|&f| f == max_freq))
        .copied()
        .expect("a nonzero bin always exists");

    let tau_omega = hist.freqs[run.0].min(hist.freqs[run.1]);
    let run_lo = run.0 + hist.bin_offset;
    let run_hi = run.1 + hist.bin_offset;

    let mut split = InstanceSplit {
        pos_idx: Vec::new(),
        neg_idx: Vec::new(),
        excluded_idx: Vec::new(),
    };
    for (i, &bin) in hist.bin_of_sample.iter().enumerate() {
        if bin >= run_lo && bin <= run_hi {
            split.pos_idx.push(i);
        } else if hist.freq_at(bin) < tau_omega {
            split.neg_idx.push(i);
        } else {
            split.excluded_idx.push(i);
        }
    }
    split
}

#[derive(Clone, Debug)]
pub struct InstanceWeights {
    /// One weight per sample: the shared scalar for positives, 0 elsewhere.
    pub per_sample: Vec<f64>,
    /// The shared positive weight `1 - |eta_mean - 0.5| / 0.5`.
    pub shared: f64,
}

/// Confusion weight over the positive set: 1 when the discriminator is
/// maximally confused on the kept samples (eta mean 0.5), 0 when certain.
pub fn instance_weight(
    split: &InstanceSplit,
    etas: &[f64],
    domain: Domain,
    events: &mut EventLog,
) -> InstanceWeights {
    let mut per_sample = vec![0.0; etas.len()];
    if split.pos_idx.is_empty() {
        events.record(EventKind::InstanceEmptyPositives, Some(domain), "no positive instances");
        return InstanceWeights { per_sample, shared: 0.0 };
    }
    let eta_mean =
        split.pos_idx.iter().map(|&i| etas[i]).sum::<f64>() / split.pos_idx.len() as f64;
    let shared = (1.0 - (eta_mean - 0.5).abs() / 0.5).clamp(0.0, 1.0);
    for &i in &split.pos_idx {
        per_sample[i] = shared;
    }
    InstanceWeights { per_sample, shared }
}

/// Weighted instance alignment loss over the combined batch.
///
/// The default variant gives each sample its own domain's term, with the
/// same sign arrangement as the global loss: `-(1/n) W (1 - p) log p` for
/// source samples and `-(1/n) W p log(1 - p)` for target samples, both
/// nonnegative and vanishing at their optimum. The `OneMinusLog` variant
/// applies both printed factors, `(1 - p) log p + p (1 - log p)`, to every
/// sample regardless of domain.
pub fn idsa_loss(
    tape: &mut Tape,
    probs: Var,
    weights: &[f64],
    domains: &[Domain],
    variant: LossVariant,
) -> Result<Var, AutodiffError> {
    let n = tape.value(probs).len();
    assert_eq!(weights.len(), n, "weights length mismatch");
    assert_eq!(domains.len(), n, "domains length mismatch");
    if n == 0 {
        return Ok(tape.scalar_input(0.0));
    }

    let w = tape.input(Tensor::vector(weights.to_vec()));
    let p = tape.clamp(probs, EPS_LOG, 1.0 - EPS_LOG)?;
    let one_m_p = tape.sub_from_scalar(1.0, p)?;
    let log_p = tape.log(p)?;

    let per_sample = match variant {
        LossVariant::AdversarialComplement => {
            let src_mask = tape.input(Tensor::vector(
                domains.iter().map(|d| 1.0 - d.label()).collect(),
            ));
            let tgt_mask =
                tape.input(Tensor::vector(domains.iter().map(|d| d.label()).collect()));
            // source: (1 - p) log p, vanishing at p -> 1
            let s_term = tape.mul(one_m_p, log_p)?;
            let s_masked = tape.mul(s_term, src_mask)?;
            // target: p log(1 - p), vanishing at p -> 0; the complement factor
            // sits inside the outer minus exactly as in the global loss, so
            // both sides are bounded and vanish at their optimum
            let log_1m = tape.log(one_m_p)?;
            let t_term = tape.mul(p, log_1m)?;
            let t_masked = tape.mul(t_term, tgt_mask)?;
            tape.add(s_masked, t_masked)?
        }
        LossVariant::OneMinusLog => {
            let s_term = tape.mul(one_m_p, log_p)?;
            let one_m_log = tape.sub_from_scalar(1.0, log_p)?;
            let t_term = tape.mul(p, one_m_log)?;
            tape.add(s_term, t_term)?
        }
    };

    let weighted = tape.mul(w, per_sample)?;
    let total = tape.sum(weighted)?;
    tape.mul_scalar(total, -1.0 / n as f64)
}
