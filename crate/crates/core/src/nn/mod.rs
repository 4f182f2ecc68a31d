//! Dense layers with optional weight normalization and training-time
//! Gaussian noise, the Adam optimizer, and the parameter file codec.

mod adam;
pub mod codec;

pub use adam::{AdamConfig, AdamState, ParamSet};

use rand::RngCore;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::tensor::{Gradients, Tape, Tensor, Var};
use crate::{Error, Result};

pub const DEFAULT_LEAKY_SLOPE: f64 = 0.2;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum Activation {
    Relu,
    LeakyRelu { slope: f64 },
    Tanh,
    Sigmoid,
    Linear,
    Softmax,
}

impl Activation {
    pub fn leaky() -> Self {
        Activation::LeakyRelu {
            slope: DEFAULT_LEAKY_SLOPE,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub in_dim: usize,
    pub out_dim: usize,
    pub activation: Activation,
    pub weight_norm: bool,
    /// Standard deviation of noise added to the layer output in train mode.
    pub noise_std: f64,
}

impl LayerSpec {
    pub fn new(in_dim: usize, out_dim: usize, activation: Activation) -> Self {
        Self {
            in_dim,
            out_dim,
            activation,
            weight_norm: false,
            noise_std: 0.0,
        }
    }

    pub fn weight_normed(mut self) -> Self {
        self.weight_norm = true;
        self
    }

    pub fn with_noise(mut self, std: f64) -> Self {
        self.noise_std = std;
        self
    }

    fn validate(&self, layer: usize) -> Result<()> {
        if self.in_dim == 0 || self.out_dim == 0 {
            return Err(Error::Layer {
                layer,
                message: "dimensions must be at least 1".into(),
            });
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(Error::Layer {
                layer,
                message: format!(
                    "noise std {} must be finite and non-negative",
                    self.noise_std
                ),
            });
        }
        Ok(())
    }
}

/// Checks each spec and that consecutive layers chain dimensionally.
pub fn validate_specs(specs: &[LayerSpec]) -> Result<()> {
    if specs.is_empty() {
        return Err(Error::invalid("network needs at least one layer"));
    }
    for (i, s) in specs.iter().enumerate() {
        s.validate(i)?;
        if i > 0 && specs[i - 1].out_dim != s.in_dim {
            return Err(Error::Layer {
                layer: i,
                message: format!(
                    "input width {} does not match previous output width {}",
                    s.in_dim,
                    specs[i - 1].out_dim
                ),
            });
        }
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams {
    /// `out_dim x in_dim`; the weight itself when weight norm is off.
    pub direction: Tensor,
    /// Present iff weight norm is on.
    pub gain: Option<Tensor>,
    pub bias: Tensor,
}

impl LayerParams {
    /// Effective weight matrix (`out_dim x in_dim`).
    pub fn weight(&self) -> Result<Tensor> {
        match &self.gain {
            None => Ok(self.direction.clone()),
            Some(g) => Ok(crate::tensor::forward_op(
                &crate::tensor::Op::WeightNorm,
                &[&self.direction, g],
                None,
            )?),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MlpParams {
    pub layers: Vec<LayerParams>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// A layer stack together with its parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    specs: Vec<LayerSpec>,
    params: MlpParams,
}

impl Mlp {
    /// He-style initialization: directions from `N(0, 2 / in_dim)`, gains 1, biases 0.
    pub fn init(specs: Vec<LayerSpec>, rng: &mut dyn RngCore) -> Result<Self> {
        validate_specs(&specs)?;
        let layers = specs
            .iter()
            .map(|s| {
                let normal = Normal::new(0.0, (2.0 / s.in_dim as f64).sqrt())
                    .map_err(|e| Error::invalid(e.to_string()))?;
                let data = (0..s.in_dim * s.out_dim)
                    .map(|_| normal.sample(rng))
                    .collect();
                Ok(LayerParams {
                    direction: Tensor::new([s.out_dim, s.in_dim], data)?,
                    gain: s.weight_norm.then(|| Tensor::filled([s.out_dim], 1.0)),
                    bias: Tensor::zeros([s.out_dim]),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            specs,
            params: MlpParams { layers },
        })
    }

    pub fn from_parts(specs: Vec<LayerSpec>, params: MlpParams) -> Result<Self> {
        validate_specs(&specs)?;
        if specs.len() != params.layers.len() {
            return Err(Error::invalid(format!(
                "{} layer specs but {} parameter sets",
                specs.len(),
                params.layers.len()
            )));
        }
        for (i, (s, p)) in specs.iter().zip(&params.layers).enumerate() {
            let bad = p.direction.shape() != [s.out_dim, s.in_dim]
                || p.bias.shape() != [s.out_dim]
                || p.gain.is_some() != s.weight_norm
                || p.gain.as_ref().is_some_and(|g| g.shape() != [s.out_dim]);
            if bad {
                return Err(Error::Layer {
                    layer: i,
                    message: "parameter shapes do not match the layer spec".into(),
                });
            }
        }
        Ok(Self { specs, params })
    }

    pub fn specs(&self) -> &[LayerSpec] {
        &self.specs
    }

    pub fn params(&self) -> &MlpParams {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut MlpParams {
        &mut self.params
    }

    pub fn in_dim(&self) -> usize {
        self.specs[0].in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.specs[self.specs.len() - 1].out_dim
    }

    /// Puts the parameters on `tape`, as params when `trainable`, else as constants.
    pub fn attach(&self, tape: &mut Tape, trainable: bool) -> Result<AttachedMlp> {
        let mut layers = Vec::with_capacity(self.specs.len());
        for p in &self.params.layers {
            let leaf = |tape: &mut Tape, t: &Tensor| {
                if trainable {
                    tape.param(t.clone())
                } else {
                    tape.constant(t.clone())
                }
            };
            let direction = leaf(tape, &p.direction);
            let gain = p.gain.as_ref().map(|g| leaf(tape, g));
            let bias = leaf(tape, &p.bias);
            let weight = match gain {
                Some(g) => tape.weight_norm(direction, g)?,
                None => direction,
            };
            let weight_t = tape.transpose(weight)?;
            layers.push(AttachedLayer {
                direction,
                gain,
                bias,
                weight_t,
            });
        }
        Ok(AttachedMlp {
            specs: self.specs.clone(),
            layers,
        })
    }

    /// Eval-mode forward pass on plain tensors.
    pub fn eval(&self, x: &Tensor) -> Result<MlpOutput<Tensor>> {
        let mut tape = Tape::new();
        let attached = self.attach(&mut tape, false)?;
        let xv = tape.constant(x.clone());
        let out = attached.forward(&mut tape, xv, Mode::Eval, None)?;
        Ok(MlpOutput {
            output: tape.value(out.output)?.clone(),
            hidden: out
                .hidden
                .iter()
                .map(|&h| tape.value(h).cloned())
                .collect::<Result<_, _>>()?,
        })
    }
}

pub struct MlpOutput<T> {
    pub output: T,
    /// Post-activation output of every layer but the last.
    pub hidden: Vec<T>,
}

struct AttachedLayer {
    direction: Var,
    gain: Option<Var>,
    bias: Var,
    weight_t: Var,
}

/// An [`Mlp`] whose parameters live on a tape.
pub struct AttachedMlp {
    specs: Vec<LayerSpec>,
    layers: Vec<AttachedLayer>,
}

impl AttachedMlp {
    /// Runs the stack on `x` (`batch x in_dim`). Noise is injected only in
    /// train mode, and then requires `rng`.
    pub fn forward(
        &self,
        tape: &mut Tape,
        x: Var,
        mode: Mode,
        mut rng: Option<&mut dyn RngCore>,
    ) -> Result<MlpOutput<Var>> {
        let shape = tape.value(x)?.shape().to_vec();
        if shape.len() != 2 || shape[1] != self.specs[0].in_dim {
            return Err(Error::Layer {
                layer: 0,
                message: format!(
                    "expected input of width {}, got shape {shape:?}",
                    self.specs[0].in_dim
                ),
            });
        }
        let mut h = x;
        let mut hidden = Vec::with_capacity(self.layers.len().saturating_sub(1));
        for (i, (spec, layer)) in self.specs.iter().zip(&self.layers).enumerate() {
            let z = tape.matmul(h, layer.weight_t)?;
            let z = tape.add(z, layer.bias)?;
            let mut a = match spec.activation {
                Activation::Relu => tape.relu(z)?,
                Activation::LeakyRelu { slope } => tape.leaky_relu(z, slope)?,
                Activation::Tanh => tape.tanh(z)?,
                Activation::Sigmoid => tape.sigmoid(z)?,
                Activation::Linear => z,
                Activation::Softmax => tape.softmax(z)?,
            };
            if mode == Mode::Train && spec.noise_std > 0.0 {
                let r = rng.as_deref_mut().ok_or_else(|| Error::Layer {
                    layer: i,
                    message: "train-mode noise needs a random source".into(),
                })?;
                a = tape.gaussian_noise(a, spec.noise_std, r)?;
            }
            if i + 1 < self.layers.len() {
                hidden.push(a);
            }
            h = a;
        }
        Ok(MlpOutput { output: h, hidden })
    }

    /// Parameter gradients in [`ParamSet`] order.
    pub fn gradients(&self, tape: &Tape, grads: &Gradients) -> Result<Vec<Tensor>> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.push(grads.get_or_zeros(tape, l.direction)?);
            if let Some(g) = l.gain {
                out.push(grads.get_or_zeros(tape, g)?);
            }
            out.push(grads.get_or_zeros(tape, l.bias)?);
        }
        Ok(out)
    }
}

impl ParamSet for MlpParams {
    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for l in &mut self.layers {
            out.push(&mut l.direction);
            if let Some(g) = l.gain.as_mut() {
                out.push(g);
            }
            out.push(&mut l.bias);
        }
        out
    }

    fn param_name(&self, index: usize) -> String {
        let mut i = 0;
        for (li, l) in self.layers.iter().enumerate() {
            let names: &[&str] = if l.gain.is_some() {
                &["direction", "gain", "bias"]
            } else {
                &["direction", "bias"]
            };
            for n in names {
                if i == index {
                    return format!("layer{li}.{n}");
                }
                i += 1;
            }
        }
        format!("param{index}")
    }
}
