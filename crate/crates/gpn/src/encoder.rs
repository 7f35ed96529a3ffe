//! Feature encoder: a two-layer perceptron (or a bare linear map for the
//! synthetic linear scenario) taking node features to the latent space.

use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamTensor, Tape, Tensor};
use crate::rng::SplitMix64;
use crate::special;

/// Hidden-layer nonlinearity of the two-layer encoder.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    LogSigmoid,
    Gelu,
    HardTanh,
}

impl Activation {
    pub const ALL: [Activation; 4] =
        [Activation::Relu, Activation::LogSigmoid, Activation::Gelu, Activation::HardTanh];

    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::LogSigmoid => "log_sigmoid",
            Activation::Gelu => "gelu",
            Activation::HardTanh => "hard_tanh",
        }
    }

    pub fn parse(s: &str) -> Option<Activation> {
        Activation::ALL.into_iter().find(|a| a.name() == s)
    }

    /// Scalar evaluation. GELU uses the exact Gaussian CDF form `x * Phi(x)`.
    pub fn eval(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::LogSigmoid => -special::softplus(-x),
            Activation::Gelu => x * special::norm_cdf(x),
            Activation::HardTanh => x.clamp(-1.0, 1.0),
        }
    }

    pub fn apply(self, t: &Tensor) -> Tensor {
        match self {
            Activation::Relu => t.relu(),
            Activation::LogSigmoid => t.log_sigmoid(),
            Activation::Gelu => t.gelu(),
            Activation::HardTanh => t.hard_tanh(),
        }
    }
}

/// Scalar activation evaluation by kind.
pub fn activation_eval(kind: Activation, x: f64) -> f64 {
    kind.eval(x)
}

/// Owned encoder parameters. Weights are stored input-major (`[d, H]`,
/// `[H, L]`) so the forward pass is plain right-multiplication `X * W`.
#[derive(Clone, Debug)]
pub enum EncoderParams {
    Mlp {
        w1: ParamTensor,
        b1: ParamTensor,
        w2: ParamTensor,
        b2: ParamTensor,
        activation: Activation,
    },
    /// Single weight matrix, no bias, no activation. Used by the synthetic
    /// linear scenario where the latent geometry is studied directly.
    Linear { w: ParamTensor },
}

fn glorot(rows: usize, cols: usize, rng: &mut SplitMix64) -> ParamTensor {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols).map(|_| rng.uniform(-limit, limit)).collect();
    ParamTensor::new(vec![rows, cols], data)
}

fn lift_param(tape: &Tape, p: &ParamTensor, trainable: bool) -> Tensor {
    if trainable {
        tape.leaf_from(p)
    } else {
        tape.constant_from(p)
    }
}

impl EncoderParams {
    /// Glorot-uniform weights (`±sqrt(6/(fan_in+fan_out))`), zero biases.
    pub fn init_mlp(
        input_dim: usize,
        hidden_dim: usize,
        latent_dim: usize,
        activation: Activation,
        rng: &mut SplitMix64,
    ) -> EncoderParams {
        EncoderParams::Mlp {
            w1: glorot(input_dim, hidden_dim, rng),
            b1: ParamTensor::zeros(vec![hidden_dim]),
            w2: glorot(hidden_dim, latent_dim, rng),
            b2: ParamTensor::zeros(vec![latent_dim]),
            activation,
        }
    }

    pub fn init_linear(input_dim: usize, latent_dim: usize, rng: &mut SplitMix64) -> EncoderParams {
        EncoderParams::Linear { w: glorot(input_dim, latent_dim, rng) }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            EncoderParams::Mlp { w1, .. } => w1.shape[0],
            EncoderParams::Linear { w } => w.shape[0],
        }
    }

    pub fn latent_dim(&self) -> usize {
        match self {
            EncoderParams::Mlp { w2, .. } => w2.shape[1],
            EncoderParams::Linear { w } => w.shape[1],
        }
    }

    pub fn hidden_dim(&self) -> Option<usize> {
        match self {
            EncoderParams::Mlp { w1, .. } => Some(w1.shape[1]),
            EncoderParams::Linear { .. } => None,
        }
    }

    pub fn activation(&self) -> Option<Activation> {
        match self {
            EncoderParams::Mlp { activation, .. } => Some(*activation),
            EncoderParams::Linear { .. } => None,
        }
    }

    pub fn named(&self) -> Vec<(String, &ParamTensor)> {
        match self {
            EncoderParams::Mlp { w1, b1, w2, b2, .. } => vec![
                ("encoder.w1".into(), w1),
                ("encoder.b1".into(), b1),
                ("encoder.w2".into(), w2),
                ("encoder.b2".into(), b2),
            ],
            EncoderParams::Linear { w } => vec![("encoder.w".into(), w)],
        }
    }

    pub fn named_mut(&mut self) -> Vec<(String, &mut ParamTensor)> {
        match self {
            EncoderParams::Mlp { w1, b1, w2, b2, .. } => vec![
                ("encoder.w1".into(), w1),
                ("encoder.b1".into(), b1),
                ("encoder.w2".into(), w2),
                ("encoder.b2".into(), b2),
            ],
            EncoderParams::Linear { w } => vec![("encoder.w".into(), w)],
        }
    }

    /// Put the parameters on a tape for one forward/backward pass.
    pub fn lift(&self, tape: &Tape, trainable: bool) -> LiftedEncoder {
        match self {
            EncoderParams::Mlp { w1, b1, w2, b2, activation } => LiftedEncoder::Mlp {
                w1: lift_param(tape, w1, trainable),
                b1: lift_param(tape, b1, trainable),
                w2: lift_param(tape, w2, trainable),
                b2: lift_param(tape, b2, trainable),
                activation: *activation,
            },
            EncoderParams::Linear { w } => {
                LiftedEncoder::Linear { w: lift_param(tape, w, trainable) }
            }
        }
    }
}

/// Encoder parameters lifted onto a tape.
#[derive(Clone)]
pub enum LiftedEncoder {
    Mlp { w1: Tensor, b1: Tensor, w2: Tensor, b2: Tensor, activation: Activation },
    Linear { w: Tensor },
}

impl LiftedEncoder {
    /// Lifted tensors in the same order as `EncoderParams::named`.
    pub fn params(&self) -> Vec<Tensor> {
        match self {
            LiftedEncoder::Mlp { w1, b1, w2, b2, .. } => {
                vec![w1.clone(), b1.clone(), w2.clone(), b2.clone()]
            }
            LiftedEncoder::Linear { w } => vec![w.clone()],
        }
    }

    /// `Z = W2 * act(W1 * x + b1) + b2` rowwise (or `Z = X W` when linear).
    pub fn encode(&self, x: &Tensor) -> Tensor {
        let d = match self {
            LiftedEncoder::Mlp { w1, .. } => w1.shape()[0],
            LiftedEncoder::Linear { w } => w.shape()[0],
        };
        assert_eq!(x.shape()[1], d, "encode: input has {} features, encoder expects {d}", x.shape()[1]);
        match self {
            LiftedEncoder::Mlp { w1, b1, w2, b2, activation } => {
                let hidden = activation.apply(&x.matmul(w1).add_row(b1));
                hidden.matmul(w2).add_row(b2)
            }
            LiftedEncoder::Linear { w } => x.matmul(w),
        }
    }
}
