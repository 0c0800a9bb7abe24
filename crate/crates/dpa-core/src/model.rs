//! Networks: feature extractor, global/instance domain discriminators, and
//! the source classifier head. All maps are small linear layers (softplus
//! hidden activations in the discriminators), stored as value tensors and
//! re-registered on a fresh tape each training step.

use rand::prelude::*;
use rand_chacha::ChaCha12Rng;

use crate::autodiff::{AutodiffError, Tape, Tensor, Var};

/// One dense layer: `[in, out]` weights plus a `[1, out]` bias row.
#[derive(Clone, Debug)]
pub struct Linear {
    pub w: Tensor,
    pub b: Tensor,
}

impl Linear {
    fn new(fan_in: usize, fan_out: usize, rng: &mut ChaCha12Rng) -> Self {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let w = Tensor::matrix(
            fan_in,
            fan_out,
            (0..fan_in * fan_out).map(|_| rng.random_range(-limit..limit)).collect(),
        );
        Linear { w, b: Tensor::matrix(1, fan_out, vec![0.0; fan_out]) }
    }
}

/// A layer's parameters registered on a tape.
#[derive(Clone, Copy, Debug)]
pub struct TapedLinear {
    pub w: Var,
    pub b: Var,
}

/// `x @ w + b`, with the bias row broadcast over the batch through a ones
/// column (keeps the op set free of row broadcasting).
pub fn linear(tape: &mut Tape, x: Var, layer: TapedLinear) -> Result<Var, AutodiffError> {
    let xw = tape.matmul(x, layer.w)?;
    let n = tape.value(xw).rows();
    let ones = tape.input(Tensor::matrix(n, 1, vec![1.0; n]));
    let bias = tape.matmul(ones, layer.b)?;
    tape.add(xw, bias)
}

/// All trainable value tensors of the DPA networks.
#[derive(Clone, Debug)]
pub struct ModelParams {
    /// Instance/global feature extractor, `dim -> embed`.
    pub extractor: Linear,
    /// Global discriminator encoder, `embed -> embed` (softplus output).
    pub glob_encoder: Linear,
    /// Global discriminator head, `embed -> 1`.
    pub glob_head: Linear,
    /// Instance discriminator hidden layer, `embed -> hidden` (softplus).
    pub inst_hidden: Linear,
    /// Instance discriminator head, `hidden -> 1`.
    pub inst_head: Linear,
    /// Source classifier head, `embed -> n_classes`.
    pub classifier: Linear,
}

/// Tape handles for every tensor in [`ModelParams`], in the fixed parameter
/// order used by the optimizer.
#[derive(Clone, Copy, Debug)]
pub struct TapedModel {
    pub extractor: TapedLinear,
    pub glob_encoder: TapedLinear,
    pub glob_head: TapedLinear,
    pub inst_hidden: TapedLinear,
    pub inst_head: TapedLinear,
    pub classifier: TapedLinear,
}

impl ModelParams {
    pub fn new(dim: usize, embed: usize, hidden: usize, n_classes: usize, seed: u64) -> Self {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        ModelParams {
            extractor: Linear::new(dim, embed, &mut rng),
            glob_encoder: Linear::new(embed, embed, &mut rng),
            glob_head: Linear::new(embed, 1, &mut rng),
            inst_hidden: Linear::new(embed, hidden, &mut rng),
            inst_head: Linear::new(hidden, 1, &mut rng),
            classifier: Linear::new(embed, n_classes, &mut rng),
        }
    }

    /// Fixed-order views of the 12 parameter tensors.
    pub fn tensors(&self) -> Vec<&Tensor> {
        vec![
            &self.extractor.w,
            &self.extractor.b,
            &self.glob_encoder.w,
            &self.glob_encoder.b,
            &self.glob_head.w,
            &self.glob_head.b,
            &self.inst_hidden.w,
            &self.inst_hidden.b,
            &self.inst_head.w,
            &self.inst_head.b,
            &self.classifier.w,
            &self.classifier.b,
        ]
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        vec![
            &mut self.extractor.w,
            &mut self.extractor.b,
            &mut self.glob_encoder.w,
            &mut self.glob_encoder.b,
            &mut self.glob_head.w,
            &mut self.glob_head.b,
            &mut self.inst_hidden.w,
            &mut self.inst_hidden.b,
            &mut self.inst_head.w,
            &mut self.inst_head.b,
            &mut self.classifier.w,
            &mut self.classifier.b,
        ]
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.all_finite())
    }

    /// Register every parameter on `tape` and return the handles. The `Var`
    /// order matches [`ModelParams::tensors`].
    pub fn register(&self, tape: &mut Tape) -> TapedModel {
        let mut reg = |l: &Linear| TapedLinear {
            w: tape.param(l.w.clone()),
            b: tape.param(l.b.clone()),
        };
        TapedModel {
            extractor: reg(&self.extractor),
            glob_encoder: reg(&self.glob_encoder),
            glob_head: reg(&self.glob_head),
            inst_hidden: reg(&self.inst_hidden),
            inst_head: reg(&self.inst_head),
            classifier: reg(&self.classifier),
        }
    }
}

impl TapedModel {
    /// Handles in the same fixed order as [`ModelParams::tensors`].
    pub fn vars(&self) -> Vec<Var> {
        vec![
            self.extractor.w,
            self.extractor.b,
            self.glob_encoder.w,
            self.glob_encoder.b,
            self.glob_head.w,
            self.glob_head.b,
            self.inst_hidden.w,
            self.inst_hidden.b,
            self.inst_head.w,
            self.inst_head.b,
            self.classifier.w,
            self.classifier.b,
        ]
    }

    /// Instance features: `extractor(x)` for a `[n, dim]` batch.
    pub fn features(&self, tape: &mut Tape, x: Var) -> Result<Var, AutodiffError> {
        linear(tape, x, self.extractor)
    }

    /// Global embedding `x_e`: softplus encoder over (gradient-reversed)
    /// extracted features.
    pub fn global_embedding(
        &self,
        tape: &mut Tape,
        feats: Var,
        lambda: f64,
    ) -> Result<Var, AutodiffError> {
        let reversed = tape.grl(feats, lambda)?;
        let enc = linear(tape, reversed, self.glob_encoder)?;
        tape.softplus(enc)
    }

    /// Global domain probability per row of `x_e`, as a length-n vector.
    pub fn global_probability(&self, tape: &mut Tape, x_e: Var) -> Result<Var, AutodiffError> {
        let logits = linear(tape, x_e, self.glob_head)?;
        let p = tape.sigmoid(logits)?;
        let n = tape.value(p).rows();
        tape.reshape(p, &[n])
    }

    /// Instance domain probability per row of the feature batch, behind the
    /// gradient reversal layer, as a length-n vector.
    pub fn instance_probability(
        &self,
        tape: &mut Tape,
        feats: Var,
        lambda: f64,
    ) -> Result<Var, AutodiffError> {
        let reversed = tape.grl(feats, lambda)?;
        let hidden = linear(tape, reversed, self.inst_hidden)?;
        let act = tape.softplus(hidden)?;
        let logits = linear(tape, act, self.inst_head)?;
        let p = tape.sigmoid(logits)?;
        let n = tape.value(p).rows();
        tape.reshape(p, &[n])
    }

    /// Classifier logits over source classes for a feature batch.
    pub fn class_logits(&self, tape: &mut Tape, feats: Var) -> Result<Var, AutodiffError> {
        linear(tape, feats, self.classifier)
    }
}
