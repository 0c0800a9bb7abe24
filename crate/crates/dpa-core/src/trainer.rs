//! Training loop: composes the detection-proxy, global, instance, and
//! private-class losses on one tape per step, steps the model with momentum
//! SGD, and steps the learnable radius with Adam on its own boundary-loss
//! tape. The two optimizer paths never touch each other's parameters.

use serde::Serialize;
use thiserror::Error;

use crate::autodiff::{AutodiffError, Tape, Tensor, Var};
use crate::events::{EventKind, EventLog};
use crate::gdpa::{self, GdpaError, GdpaWeights, GlobalSplit, LearnableRadius, MemoryBank, ZMode};
use crate::idsa::{self, InstanceWeights};
use crate::metrics::MetricsRow;
use crate::model::{ModelParams, TapedModel};
use crate::optim::{AdamState, SgdState};
use crate::pcc;
use crate::scenario::{PseudoImage, Scenario};
use crate::{Domain, LossVariant};

/// Random-stream offset for evaluation batches, far away from the training
/// call indices.
const HOLDOUT_CALL_BASE: u64 = 1 << 40;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Gdpa(#[from] GdpaError),
}

/// Everything the loop needs besides the scenario itself.
#[derive(Clone, Debug)]
pub struct TrainerOptions {
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
    /// Iterations per "epoch" for the alpha schedule: the private-class term
    /// is off for the first epoch and weighted `alpha` afterwards.
    pub epoch_iterations: u64,
    pub lambda: f64,
    pub z_mode: ZMode,
    pub global_variant: LossVariant,
    pub instance_variant: LossVariant,
    /// Build one histogram over both domains instead of one per domain.
    pub joint_instance_histogram: bool,
    pub gdpa_enabled: bool,
    pub idsa_enabled: bool,
    pub pcc_enabled: bool,
    pub log_interval: u64,
    pub eval_images_per_domain: usize,
}

impl Default for TrainerOptions {
    fn default() -> Self {
        TrainerOptions {
            iterations: 5000,
            images_per_domain: 4,
            embed_dim: 8,
            hidden_dim: 16,
            lr_initial: 1e-3,
            lr_decayed: 1e-4,
            decay_iteration: 2500,
            momentum: 0.9,
            weight_decay: 0.0,
            radius_lr: 0.1,
            radius_init: 0.0,
            gamma: 2.0,
            delta: 0.1,
            alpha: 0.1,
            epoch_iterations: 500,
            lambda: 1.0,
            z_mode: ZMode::BatchMean,
            global_variant: LossVariant::AdversarialComplement,
            instance_variant: LossVariant::AdversarialComplement,
            joint_instance_histogram: false,
            gdpa_enabled: true,
            idsa_enabled: true,
            pcc_enabled: true,
            log_interval: 50,
            eval_images_per_domain: 64,
        }
    }
}

/// Final evaluation record, serialized as JSON next to the metrics CSV.
#[derive(Clone, Debug, Serialize)]
pub struct Evaluation {
    /// Classifier accuracy on target instances of shared classes, measured
    /// on the final model.
    pub target_shared_accuracy: f64,
    /// The same accuracy averaged over the logged rows of the last quarter
    /// of training; a lower-variance score for run comparisons.
    pub target_shared_accuracy_tail: f64,
    /// Nearest-centroid accuracy on target shared instances: source class
    /// centroids are fit on the source holdout's features and target
    /// instances are classified by the nearest one. Unlike the classifier
    /// head (which co-adapts with the features every step), this scores the
    /// feature geometry itself.
    pub target_shared_nc_accuracy: f64,
    /// Tail average of the nearest-centroid accuracy, as above.
    pub target_shared_nc_accuracy_tail: f64,
    /// Classifier accuracy on source instances (sanity reference).
    pub source_accuracy: f64,
    pub global_prob_gap: f64,
    pub instance_prob_gap: f64,
    /// Accuracy of a freshly fit linear domain probe on shared-class
    /// instance features (0.5 = indistinguishable domains).
    pub probe_accuracy: f64,
    /// `1 - probe_accuracy`.
    pub alignment_score: f64,
    pub eval_images_per_domain: usize,
}

struct DomainForward {
    feats: Var,
    p_inst: Var,
    p_inst_vals: Vec<f64>,
    x_e_vals: Tensor,
    p_glob: Var,
    p_glob_vals: Vec<f64>,
    logits: Var,
    labels: Vec<usize>,
}

pub struct Trainer {
    pub scenario: Scenario,
    pub opts: TrainerOptions,
    pub model: ModelParams,
    bank: MemoryBank,
    radius: LearnableRadius,
    sgd: SgdState,
    adam: AdamState,
    iter: u64,
    holdout_source: Vec<PseudoImage>,
    holdout_target: Vec<PseudoImage>,
}

impl Trainer {
    pub fn new(scenario: Scenario, opts: TrainerOptions) -> Self {
        let model_seed = scenario.seed() ^ 0x9e37_79b9_7f4a_7c15;
        let model = ModelParams::new(
            scenario.dim(),
            opts.embed_dim,
            opts.hidden_dim,
            scenario.n_source_classes(),
            model_seed,
        );
        let sgd =
            SgdState::new(&model.tensors(), opts.lr_initial, opts.momentum, opts.weight_decay);
        let radius = LearnableRadius::new(opts.radius_init);
        let raw_tensors = [Tensor::scalar(radius.raw[0]), Tensor::scalar(radius.raw[1])];
        let adam = AdamState::new(&[&raw_tensors[0], &raw_tensors[1]], opts.radius_lr);
        let holdout_source =
            scenario.sample_images(Domain::Source, opts.eval_images_per_domain, HOLDOUT_CALL_BASE);
        let holdout_target =
            scenario.sample_images(Domain::Target, opts.eval_images_per_domain, HOLDOUT_CALL_BASE);
        let bank = MemoryBank::new(opts.embed_dim);
        Trainer {
            scenario,
            opts,
            model,
            bank,
            radius,
            sgd,
            adam,
            iter: 0,
            holdout_source,
            holdout_target,
        }
    }

    pub fn iteration(&self) -> u64 {
        self.iter
    }

    pub fn radius(&self) -> &LearnableRadius {
        &self.radius
    }

    /// Full training run: per-iteration batches from the scenario stream,
    /// one metrics row per logging interval, final evaluation at the end.
    pub fn run(&mut self) -> Result<(Vec<MetricsRow>, Evaluation), TrainError> {
        let mut rows = Vec::new();
        for i in 0..self.opts.iterations {
            let (source, target) =
                self.scenario.sample_batch(self.opts.images_per_domain, i);
            let emit = i % self.opts.log_interval == 0 || i + 1 == self.opts.iterations;
            let row = self.train_step(&source, &target, emit)?;
            if emit {
                rows.push(row);
            }
        }
        let mut eval = self.evaluate()?;
        let tail_mean = |pick: fn(&MetricsRow) -> f64| {
            let vals: Vec<f64> = rows
                .iter()
                .skip(rows.len() - rows.len() / 4)
                .map(pick)
                .filter(|a| a.is_finite())
                .collect();
            if vals.is_empty() {
                None
            } else {
                Some(vals.iter().sum::<f64>() / vals.len() as f64)
            }
        };
        if let Some(v) = tail_mean(|r| r.target_shared_accuracy) {
            eval.target_shared_accuracy_tail = v;
        }
        if let Some(v) = tail_mean(|r| r.target_shared_nc_accuracy) {
            eval.target_shared_nc_accuracy_tail = v;
        }
        Ok((rows, eval))
    }

    /// One optimization step over a two-domain batch. `with_accuracy`
    /// controls whether the holdout accuracy column is filled (it is the
    /// only expensive metric).
    pub fn train_step(
        &mut self,
        source: &[PseudoImage],
        target: &[PseudoImage],
        with_accuracy: bool,
    ) -> Result<MetricsRow, TrainError> {
        let mut events = EventLog::new();
        let mut tape = Tape::new();
        let taped = self.model.register(&mut tape);

        let fs = self.forward_domain(&mut tape, &taped, source, Domain::Source)?;
        let ft = self.forward_domain(&mut tape, &taped, target, Domain::Target)?;

        // supervised detection proxy: cross-entropy on labeled source instances
        let targets: Vec<usize> = fs
            .labels
            .iter()
            .map(|&c| self.scenario.source_class_index(c).expect("source class"))
            .collect();
        let l_det = tape.cross_entropy_logits(fs.logits, &targets)?;

        // ── global level ────────────────────────────────────────────────
        let n_glob_s = fs.p_glob_vals.len();
        let n_glob_t = ft.p_glob_vals.len();
        let (l_gdpa, weights, split_s, split_t, l_bound_val);
        if self.opts.gdpa_enabled {
            let (sp_s, dist_s) = self.global_split(&fs.x_e_vals, Domain::Source, &mut events)?;
            let (sp_t, dist_t) = self.global_split(&ft.x_e_vals, Domain::Target, &mut events)?;
            let w = gdpa::gdpa_weights(
                &fs.p_glob_vals,
                &ft.p_glob_vals,
                self.opts.z_mode,
                &mut events,
            )?;
            let p_neg_s = tape.gather_rows(fs.p_glob, &sp_s.neg_idx)?;
            let p_neg_t = tape.gather_rows(ft.p_glob, &sp_t.neg_idx)?;
            l_gdpa = gdpa::gdpa_loss(
                &mut tape,
                p_neg_s,
                p_neg_t,
                &w,
                self.opts.gamma,
                self.opts.global_variant,
                &mut events,
            )?;
            l_bound_val = self.radius_step(&dist_s, &sp_s, &dist_t, &sp_t, &mut events)?;
            weights = w;
            split_s = sp_s;
            split_t = sp_t;
        } else {
            // unweighted full-batch focal alignment (the baseline's global loss)
            let w = GdpaWeights {
                w_s: 0.5,
                w_t: 0.5,
                phi_s: f64::NAN,
                phi_t: f64::NAN,
                fig_ratio: f64::NAN,
                fallback: false,
            };
            l_gdpa = gdpa::gdpa_loss(
                &mut tape,
                fs.p_glob,
                ft.p_glob,
                &w,
                self.opts.gamma,
                self.opts.global_variant,
                &mut events,
            )?;
            l_bound_val = 0.0;
            weights = w;
            split_s = GlobalSplit { pos_idx: (0..n_glob_s).collect(), neg_idx: vec![] };
            split_t = GlobalSplit { pos_idx: (0..n_glob_t).collect(), neg_idx: vec![] };
        }

        // ── instance level ──────────────────────────────────────────────
        let etas_s: Vec<f64> =
            fs.p_inst_vals.iter().map(|&p| idsa::grad_norm(p, Domain::Source)).collect();
        let etas_t: Vec<f64> =
            ft.p_inst_vals.iter().map(|&p| idsa::grad_norm(p, Domain::Target)).collect();
        let (weights_inst, w_inst_s, w_inst_t, inst_neg_s, inst_neg_t) = if self.opts.idsa_enabled
        {
            self.instance_weights(&etas_s, &etas_t, &mut events)
        } else {
            let n = etas_s.len() + etas_t.len();
            (vec![1.0; n], 1.0, 1.0, 0.0, 0.0)
        };
        let probs_all = tape.concat(&[fs.p_inst, ft.p_inst])?;
        let mut domains_all = vec![Domain::Source; etas_s.len()];
        domains_all.extend(std::iter::repeat_n(Domain::Target, etas_t.len()));
        let l_idsa = idsa::idsa_loss(
            &mut tape,
            probs_all,
            &weights_inst,
            &domains_all,
            self.opts.instance_variant,
        )?;

        // ── private-class constraint ────────────────────────────────────
        let preds_s = self.argmax_classes(tape.value(fs.logits));
        let preds_t = self.argmax_classes(tape.value(ft.logits));
        let alpha_eff =
            if self.iter < self.opts.epoch_iterations { 0.0 } else { self.opts.alpha };
        let mut eps_s_val = f64::NAN;
        let mut eps_t_val = f64::NAN;
        let mut l_pcc = None;
        if self.opts.pcc_enabled {
            let pset = pcc::private_categories(&preds_s, &preds_t);
            let feats_ps = tape.gather_rows(fs.feats, &pset.source_members)?;
            let probs_ps = tape.gather_rows(fs.p_inst, &pset.source_members)?;
            let feats_pt = tape.gather_rows(ft.feats, &pset.target_members)?;
            let probs_pt = tape.gather_rows(ft.p_inst, &pset.target_members)?;
            let eps_s =
                pcc::consistency(&mut tape, feats_ps, probs_ps, Domain::Source, &mut events)?;
            let eps_t =
                pcc::consistency(&mut tape, feats_pt, probs_pt, Domain::Target, &mut events)?;
            if let Some(s) = &eps_s {
                eps_s_val = s.value;
            }
            if let Some(t) = &eps_t {
                eps_t_val = t.value;
            }
            if let (Some(s), Some(t)) = (eps_s, eps_t) {
                l_pcc = Some(pcc::pcc_loss(&mut tape, &s, &t)?);
            }
        }

        // ── total objective and model step ──────────────────────────────
        let mut total = tape.add(l_det, l_gdpa)?;
        total = tape.add(total, l_idsa)?;
        let loss_pcc_contrib = match l_pcc {
            Some(lp) if alpha_eff > 0.0 => {
                let scaled = tape.mul_scalar(lp, alpha_eff)?;
                total = tape.add(total, scaled)?;
                tape.value(scaled).item()
            }
            _ => 0.0,
        };

        let grads = tape.backward(total)?;
        let vars = taped.vars();
        let grad_refs: Vec<&Tensor> =
            vars.iter().map(|v| grads.get(*v).expect("registered param")).collect();
        self.sgd.lr = if self.iter < self.opts.decay_iteration {
            self.opts.lr_initial
        } else {
            self.opts.lr_decayed
        };
        let mut params = self.model.tensors_mut();
        self.sgd.step(&mut params, &grad_refs, &mut events);
        drop(params);

        // ── metrics ─────────────────────────────────────────────────────
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len().max(1) as f64;
        let p_glob_s = mean(&fs.p_glob_vals);
        let p_glob_t = mean(&ft.p_glob_vals);
        let p_inst_s = mean(&fs.p_inst_vals);
        let p_inst_t = mean(&ft.p_inst_vals);
        let (target_shared_accuracy, target_shared_nc_accuracy) = if with_accuracy {
            self.holdout_scores()?
        } else {
            (f64::NAN, f64::NAN)
        };

        let row = MetricsRow {
            iteration: self.iter,
            p_global_source: p_glob_s,
            p_global_target: p_glob_t,
            global_gap: (p_glob_s - p_glob_t).abs(),
            p_instance_source: p_inst_s,
            p_instance_target: p_inst_t,
            instance_gap: (p_inst_s - p_inst_t).abs(),
            w_source: weights.w_s,
            w_target: weights.w_t,
            w_fig_ratio: weights.fig_ratio,
            w_instance_source: w_inst_s,
            w_instance_target: w_inst_t,
            global_neg_frac_source: split_s.neg_idx.len() as f64 / n_glob_s.max(1) as f64,
            global_neg_frac_target: split_t.neg_idx.len() as f64 / n_glob_t.max(1) as f64,
            instance_neg_frac_source: inst_neg_s,
            instance_neg_frac_target: inst_neg_t,
            loss_det: tape.value(l_det).item(),
            loss_gdpa: tape.value(l_gdpa).item(),
            loss_idsa: tape.value(l_idsa).item(),
            loss_pcc: loss_pcc_contrib,
            loss_bound: l_bound_val,
            loss_total: tape.value(total).item(),
            radius_source: self.radius.radius(Domain::Source),
            radius_target: self.radius.radius(Domain::Target),
            eps_source: eps_s_val,
            eps_target: eps_t_val,
            target_shared_accuracy,
            target_shared_nc_accuracy,
            flag_weight_fallback: events.has(EventKind::WeightFallback),
            flag_global_empty_neg: events.has(EventKind::GlobalEmptyNegatives),
            flag_instance_empty_pos: events.has(EventKind::InstanceEmptyPositives),
            flag_pcc_skipped: events.has(EventKind::PccSkipped),
            flag_step_skipped: events.has(EventKind::StepSkippedNonFinite),
        };
        self.iter += 1;
        Ok(row)
    }

    fn forward_domain(
        &self,
        tape: &mut Tape,
        taped: &TapedModel,
        images: &[PseudoImage],
        domain: Domain,
    ) -> Result<DomainForward, TrainError> {
        let dim = self.scenario.dim();
        let mut inst_data = Vec::new();
        let mut glob_data = Vec::new();
        let mut labels = Vec::new();
        for img in images {
            inst_data.extend_from_slice(img.instances.data());
            glob_data.extend_from_slice(&img.global);
            let label = match domain {
                Domain::Source => img.label_for_training().expect("source images are labeled"),
                Domain::Target => img.label_for_evaluation(),
            };
            labels.extend(std::iter::repeat_n(label, img.instance_count()));
        }
        let n_inst = labels.len();
        let x_inst = tape.input(Tensor::matrix(n_inst, dim, inst_data));
        let x_glob = tape.input(Tensor::matrix(images.len(), dim, glob_data));

        let feats = taped.features(tape, x_inst)?;
        let p_inst = taped.instance_probability(tape, feats, self.opts.lambda)?;
        let logits = taped.class_logits(tape, feats)?;

        let feats_glob = taped.features(tape, x_glob)?;
        let x_e = taped.global_embedding(tape, feats_glob, self.opts.lambda)?;
        let p_glob = taped.global_probability(tape, x_e)?;

        Ok(DomainForward {
            feats,
            p_inst_vals: tape.value(p_inst).data().to_vec(),
            p_inst,
            x_e_vals: tape.value(x_e).clone(),
            p_glob_vals: tape.value(p_glob).data().to_vec(),
            p_glob,
            logits,
            labels,
        })
    }

    /// Initialize-if-needed, sample against the current centroid, then apply
    /// the momentum update (a no-op right after initialization).
    fn global_split(
        &mut self,
        x_e_vals: &Tensor,
        domain: Domain,
        events: &mut EventLog,
    ) -> Result<(GlobalSplit, Vec<f64>), TrainError> {
        let mean = column_mean(x_e_vals);
        if !self.bank.is_initialized(domain) {
            self.bank.update_centroid(domain, &mean, events);
        }
        let centroid = self.bank.centroid(domain)?.to_vec();
        let dist = gdpa::distances(x_e_vals, &centroid)?;
        let split = gdpa::split_by_distance(&dist, self.radius.radius(domain));
        self.bank.update_centroid(domain, &mean, events);
        Ok((split, dist))
    }

    /// Adam step on the raw radius parameters driven by the boundary loss.
    /// Runs on its own tape; model parameters are untouched.
    fn radius_step(
        &mut self,
        dist_s: &[f64],
        split_s: &GlobalSplit,
        dist_t: &[f64],
        split_t: &GlobalSplit,
        events: &mut EventLog,
    ) -> Result<f64, TrainError> {
        let mut tape = Tape::new();
        let raw_s = tape.param(Tensor::scalar(self.radius.raw[0]));
        let raw_t = tape.param(Tensor::scalar(self.radius.raw[1]));
        let d_s = tape.softplus(raw_s)?;
        let d_t = tape.softplus(raw_t)?;
        let lb_s = gdpa::boundary_loss(&mut tape, dist_s, split_s, d_s)?;
        let lb_t = gdpa::boundary_loss(&mut tape, dist_t, split_t, d_t)?;
        let total = tape.add(lb_s, lb_t)?;
        let value = tape.value(total).item();

        let grads = tape.backward(total)?;
        let mut t_s = Tensor::scalar(self.radius.raw[0]);
        let mut t_t = Tensor::scalar(self.radius.raw[1]);
        let stepped = self.adam.step(
            &mut [&mut t_s, &mut t_t],
            &[grads.get(raw_s).expect("param"), grads.get(raw_t).expect("param")],
            events,
        );
        if stepped {
            self.radius.raw = [t_s.item(), t_t.item()];
        }
        Ok(value)
    }

    /// Per-domain (default) or joint histograms, splits, and shared weights.
    /// Returns the combined per-sample weight vector (source block first)
    /// plus per-domain shared weights and negative fractions.
    fn instance_weights(
        &self,
        etas_s: &[f64],
        etas_t: &[f64],
        events: &mut EventLog,
    ) -> (Vec<f64>, f64, f64, f64, f64) {
        if self.opts.joint_instance_histogram {
            let mut all = etas_s.to_vec();
            all.extend_from_slice(etas_t);
            let hist = idsa::build_histogram(&all, self.opts.delta);
            let split = idsa::instance_sample(&hist);
            let w: InstanceWeights =
                idsa::instance_weight(&split, &all, Domain::Source, events);
            let ns = etas_s.len();
            let neg_s = split.neg_idx.iter().filter(|&&i| i < ns).count();
            let neg_t = split.neg_idx.len() - neg_s;
            (
                w.per_sample,
                w.shared,
                w.shared,
                neg_s as f64 / ns.max(1) as f64,
                neg_t as f64 / etas_t.len().max(1) as f64,
            )
        } else {
            let hist_s = idsa::build_histogram(etas_s, self.opts.delta);
            let split_s = idsa::instance_sample(&hist_s);
            let w_s = idsa::instance_weight(&split_s, etas_s, Domain::Source, events);
            let hist_t = idsa::build_histogram(etas_t, self.opts.delta);
            let split_t = idsa::instance_sample(&hist_t);
            let w_t = idsa::instance_weight(&split_t, etas_t, Domain::Target, events);
            let mut combined = w_s.per_sample;
            combined.extend_from_slice(&w_t.per_sample);
            (
                combined,
                w_s.shared,
                w_t.shared,
                split_s.neg_idx.len() as f64 / etas_s.len().max(1) as f64,
                split_t.neg_idx.len() as f64 / etas_t.len().max(1) as f64,
            )
        }
    }

    /// Argmax over classifier logits, mapped back to scenario class ids.
    fn argmax_classes(&self, logits: &Tensor) -> Vec<usize> {
        (0..logits.rows())
            .map(|i| {
                let row = logits.row(i);
                let mut best = 0;
                for (j, v) in row.iter().enumerate() {
                    if *v > row[best] {
                        best = j;
                    }
                }
                self.scenario.categories(Domain::Source)[best]
            })
            .collect()
    }

    // ── evaluation ──────────────────────────────────────────────────────

    /// Holdout evaluation on the fixed evaluation batches.
    pub fn evaluate(&self) -> Result<Evaluation, TrainError> {
        let mut tape = Tape::new();
        let taped = self.model.register(&mut tape);
        let fs = self.forward_domain(&mut tape, &taped, &self.holdout_source, Domain::Source)?;
        let ft = self.forward_domain(&mut tape, &taped, &self.holdout_target, Domain::Target)?;

        let preds_s = self.argmax_classes(tape.value(fs.logits));
        let preds_t = self.argmax_classes(tape.value(ft.logits));
        let source_accuracy = accuracy(&preds_s, &fs.labels, None);
        let shared: std::collections::BTreeSet<usize> =
            self.scenario.shared_categories().iter().copied().collect();
        let target_shared_accuracy = accuracy(&preds_t, &ft.labels, Some(&shared));
        let target_shared_nc_accuracy = self.nearest_centroid_accuracy(
            tape.value(fs.feats),
            &fs.labels,
            tape.value(ft.feats),
            &ft.labels,
            &shared,
        );

        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len().max(1) as f64;
        let global_prob_gap = (mean(&fs.p_glob_vals) - mean(&ft.p_glob_vals)).abs();
        let instance_prob_gap = (mean(&fs.p_inst_vals) - mean(&ft.p_inst_vals)).abs();

        let probe_accuracy = self.domain_probe_accuracy(
            tape.value(fs.feats),
            &fs.labels,
            tape.value(ft.feats),
            &ft.labels,
            &shared,
        );

        Ok(Evaluation {
            target_shared_accuracy,
            target_shared_accuracy_tail: target_shared_accuracy,
            target_shared_nc_accuracy,
            target_shared_nc_accuracy_tail: target_shared_nc_accuracy,
            source_accuracy,
            global_prob_gap,
            instance_prob_gap,
            probe_accuracy,
            alignment_score: 1.0 - probe_accuracy,
            eval_images_per_domain: self.opts.eval_images_per_domain,
        })
    }

    /// Classifier-head and nearest-centroid accuracy over the target
    /// holdout's shared-class instances.
    pub fn holdout_scores(&self) -> Result<(f64, f64), TrainError> {
        let mut tape = Tape::new();
        let taped = self.model.register(&mut tape);
        let fs = self.forward_domain(&mut tape, &taped, &self.holdout_source, Domain::Source)?;
        let ft = self.forward_domain(&mut tape, &taped, &self.holdout_target, Domain::Target)?;
        let shared: std::collections::BTreeSet<usize> =
            self.scenario.shared_categories().iter().copied().collect();
        let preds = self.argmax_classes(tape.value(ft.logits));
        let clf = accuracy(&preds, &ft.labels, Some(&shared));
        let nc = self.nearest_centroid_accuracy(
            tape.value(fs.feats),
            &fs.labels,
            tape.value(ft.feats),
            &ft.labels,
            &shared,
        );
        Ok((clf, nc))
    }

    /// Fit one centroid per source class on source holdout features, then
    /// classify target shared instances by the nearest centroid.
    fn nearest_centroid_accuracy(
        &self,
        feats_s: &Tensor,
        labels_s: &[usize],
        feats_t: &Tensor,
        labels_t: &[usize],
        shared: &std::collections::BTreeSet<usize>,
    ) -> f64 {
        let classes = self.scenario.categories(Domain::Source);
        let d = feats_s.cols();
        let mut centroids = vec![vec![0.0; d]; classes.len()];
        let mut counts = vec![0usize; classes.len()];
        for i in 0..feats_s.rows() {
            let k = self
                .scenario
                .source_class_index(labels_s[i])
                .expect("source holdout labels are source classes");
            counts[k] += 1;
            for (c, x) in centroids[k].iter_mut().zip(feats_s.row(i)) {
                *c += x;
            }
        }
        for (c, &n) in centroids.iter_mut().zip(&counts) {
            if n > 0 {
                for v in c.iter_mut() {
                    *v /= n as f64;
                }
            }
        }
        let mut total = 0usize;
        let mut correct = 0usize;
        for i in 0..feats_t.rows() {
            if !shared.contains(&labels_t[i]) {
                continue;
            }
            total += 1;
            let row = feats_t.row(i);
            let mut best = None;
            for (k, c) in centroids.iter().enumerate() {
                if counts[k] == 0 {
                    continue;
                }
                let dist: f64 = row.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum();
                if best.map(|(_, bd)| dist < bd).unwrap_or(true) {
                    best = Some((k, dist));
                }
            }
            if let Some((k, _)) = best {
                if classes[k] == labels_t[i] {
                    correct += 1;
                }
            }
        }
        if total == 0 {
            return f64::NAN;
        }
        correct as f64 / total as f64
    }

    /// Accuracy of a freshly fit logistic domain probe on shared-class
    /// instance features: fit on the first half of each domain's samples,
    /// score on the second half.
    fn domain_probe_accuracy(
        &self,
        feats_s: &Tensor,
        labels_s: &[usize],
        feats_t: &Tensor,
        labels_t: &[usize],
        shared: &std::collections::BTreeSet<usize>,
    ) -> f64 {
        let collect = |feats: &Tensor, labels: &[usize]| -> Vec<Vec<f64>> {
            (0..feats.rows())
                .filter(|&i| shared.contains(&labels[i]))
                .map(|i| feats.row(i).to_vec())
                .collect()
        };
        let rows_s = collect(feats_s, labels_s);
        let rows_t = collect(feats_t, labels_t);
        let n = rows_s.len().min(rows_t.len());
        if n < 4 {
            return 0.5;
        }
        let half = n / 2;
        let mut fit_x: Vec<&[f64]> = Vec::new();
        let mut fit_y = Vec::new();
        let mut score_x: Vec<&[f64]> = Vec::new();
        let mut score_y = Vec::new();
        for (rows, label) in [(&rows_s, 0.0), (&rows_t, 1.0)] {
            for (i, r) in rows.iter().take(n).enumerate() {
                if i < half {
                    fit_x.push(r);
                    fit_y.push(label);
                } else {
                    score_x.push(r);
                    score_y.push(label);
                }
            }
        }
        let w = fit_logistic_probe(&fit_x, &fit_y);
        let correct = score_x
            .iter()
            .zip(&score_y)
            .filter(|(x, &y)| {
                let z = w[0] + x.iter().zip(&w[1..]).map(|(a, b)| a * b).sum::<f64>();
                let p = 1.0 / (1.0 + (-z).exp());
                (p >= 0.5) == (y == 1.0)
            })
            .count();
        correct as f64 / score_x.len() as f64
    }
}

fn column_mean(t: &Tensor) -> Vec<f64> {
    let (n, d) = (t.rows(), t.cols());
    let mut mean = vec![0.0; d];
    for i in 0..n {
        for (m, x) in mean.iter_mut().zip(t.row(i)) {
            *m += x / n as f64;
        }
    }
    mean
}

fn accuracy(
    preds: &[usize],
    labels: &[usize],
    keep: Option<&std::collections::BTreeSet<usize>>,
) -> f64 {
    let mut total = 0usize;
    let mut correct = 0usize;
    for (p, l) in preds.iter().zip(labels) {
        if keep.is_none_or(|set| set.contains(l)) {
            total += 1;
            if p == l {
                correct += 1;
            }
        }
    }
    if total == 0 {
        return f64::NAN;
    }
    correct as f64 / total as f64
}

/// Plain full-batch gradient descent on logistic loss; deterministic.
fn fit_logistic_probe(xs: &[&[f64]], ys: &[f64]) -> Vec<f64> {
    let d = xs.first().map(|x| x.len()).unwrap_or(0);
    let mut w = vec![0.0; d + 1];
    let n = xs.len() as f64;
    for _ in 0..200 {
        let mut grad = vec![0.0; d + 1];
        for (x, &y) in xs.iter().zip(ys) {
            let z = w[0] + x.iter().zip(&w[1..]).map(|(a, b)| a * b).sum::<f64>();
            let p = 1.0 / (1.0 + (-z).exp());
            let err = p - y;
            grad[0] += err / n;
            for (g, v) in grad[1..].iter_mut().zip(*x) {
                *g += err * v / n;
            }
        }
        for (wv, g) in w.iter_mut().zip(&grad) {
            *wv -= 0.5 * g;
        }
    }
    w
}
