//! The GAN whose discriminator classifies into K real classes plus one
//! "fake" class, and whose fake-class probability doubles as a novelty score.
//!
//! Class `K` (the last logit) is the fake class and `D(x) = 1 - p_K(x)` is the
//! total real mass. Probabilities are floored away from 0 and 1 before any log
//! (see [`floor_probs`]).

mod classifier;
pub mod file;
pub mod loss;
mod train;

pub use classifier::{train_classifier, Classifier};
pub use loss::{
    discriminator_loss, discriminator_loss_from_logits, feature_matching_distance,
    generator_loss_feature_matching, generator_loss_standard, generator_loss_standard_from_logits,
};
pub use train::{train_discriminator, train_gan, GeneratorLoss, LogRow, TrainConfig, TrainLog};

use rand::{Rng, RngCore};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::nn::{Activation, LayerSpec, Mlp};
use crate::rng::{RngStreams, Stream};
use crate::scores::{ClassProbs, ProbabilisticModel, PROB_CLAMP};
use crate::tensor::{Tape, Tensor, Var};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ZPrior {
    #[default]
    StandardNormal,
    /// Uniform on `(-1, 1)` per coordinate.
    Uniform,
}

impl ZPrior {
    pub fn sample(self, n: usize, dim: usize, rng: &mut dyn RngCore) -> Tensor {
        let data = (0..n * dim)
            .map(|_| match self {
                ZPrior::StandardNormal => StandardNormal.sample(rng),
                ZPrior::Uniform => rng.random_range(-1.0..1.0),
            })
            .collect();
        Tensor::new([n, dim], data).expect("latent shape")
    }
}

/// Layer widths and options for both networks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GanArchitecture {
    pub data_dim: usize,
    pub num_classes: usize,
    pub z_dim: usize,
    pub generator_hidden: Vec<usize>,
    pub discriminator_hidden: Vec<usize>,
    pub generator_output: Activation,
    /// Noise std on discriminator hidden layers during training.
    pub discriminator_noise: f64,
    pub weight_norm: bool,
    #[serde(default)]
    pub z_prior: ZPrior,
}

impl GanArchitecture {
    /// Small networks for two-dimensional benchmarks.
    pub fn toy_2d(num_classes: usize) -> Self {
        Self {
            data_dim: 2,
            num_classes,
            z_dim: 16,
            generator_hidden: vec![64, 64],
            discriminator_hidden: vec![64, 64, 64],
            generator_output: Activation::Linear,
            discriminator_noise: 0.1,
            weight_norm: true,
            z_prior: ZPrior::StandardNormal,
        }
    }

    /// Five hidden discriminator layers ending in a 250-wide feature layer.
    pub fn mnist(data_dim: usize, num_classes: usize) -> Self {
        Self {
            data_dim,
            num_classes,
            z_dim: 100,
            generator_hidden: vec![500, 500],
            discriminator_hidden: vec![512, 384, 256, 250, 250],
            generator_output: Activation::Sigmoid,
            discriminator_noise: 0.1,
            weight_norm: true,
            z_prior: ZPrior::StandardNormal,
        }
    }

    pub fn generator_specs(&self) -> Vec<LayerSpec> {
        let mut specs = Vec::new();
        let mut prev = self.z_dim;
        for &w in &self.generator_hidden {
            specs.push(LayerSpec::new(prev, w, Activation::Relu));
            prev = w;
        }
        specs.push(LayerSpec::new(prev, self.data_dim, self.generator_output));
        specs
    }

    /// Hidden layers then `K + 1` linear logits.
    pub fn discriminator_specs(&self, outputs: usize) -> Vec<LayerSpec> {
        let mut specs = Vec::new();
        let mut prev = self.data_dim;
        for &w in &self.discriminator_hidden {
            let mut s =
                LayerSpec::new(prev, w, Activation::leaky()).with_noise(self.discriminator_noise);
            s.weight_norm = self.weight_norm;
            specs.push(s);
            prev = w;
        }
        let mut last = LayerSpec::new(prev, outputs, Activation::Linear);
        last.weight_norm = self.weight_norm;
        specs.push(last);
        specs
    }

    fn validate(&self) -> Result<()> {
        if self.num_classes == 0 || self.data_dim == 0 || self.z_dim == 0 {
            return Err(Error::invalid(
                "classes, data and latent dimensions must be positive",
            ));
        }
        if self.discriminator_hidden.is_empty() {
            return Err(Error::invalid(
                "discriminator needs a hidden layer to supply features",
            ));
        }
        Ok(())
    }
}

/// `p' = (1 - (K+1) c) p + c` with `c = PROB_CLAMP`: rows still sum to 1,
/// every entry is at least `c`, and so `D` and `1 - D` both land in `[c, 1 - c]`.
pub fn floor_probs(p: &Tensor) -> Tensor {
    let k1 = p.cols() as f64;
    p.map(|v| (1.0 - k1 * PROB_CLAMP) * v + PROB_CLAMP)
}

pub(crate) fn floor_probs_on_tape(tape: &mut Tape, logits: Var) -> Result<Var> {
    let k1 = tape.value(logits)?.cols() as f64;
    let p = tape.softmax(logits)?;
    Ok(tape.affine(p, 1.0 - k1 * PROB_CLAMP, PROB_CLAMP)?)
}

#[derive(Clone, Debug, PartialEq)]
pub struct GanModel {
    generator: Mlp,
    discriminator: Mlp,
    num_classes: usize,
    feature_layer: usize,
    z_prior: ZPrior,
    trained_on: Option<String>,
}

impl GanModel {
    /// Fresh networks drawn from the `Init` stream of `seed`.
    pub fn new(arch: &GanArchitecture, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = RngStreams::new(seed).stream(Stream::Init);
        let generator = Mlp::init(arch.generator_specs(), &mut rng)?;
        let discriminator = Mlp::init(arch.discriminator_specs(arch.num_classes + 1), &mut rng)?;
        Self::from_parts(generator, discriminator, arch.num_classes, arch.z_prior)
    }

    /// Feature layer defaults to the last hidden layer of the discriminator.
    pub fn from_parts(
        generator: Mlp,
        discriminator: Mlp,
        num_classes: usize,
        z_prior: ZPrior,
    ) -> Result<Self> {
        if discriminator.out_dim() != num_classes + 1 {
            return Err(Error::invalid(format!(
                "discriminator has {} outputs, expected K + 1 = {}",
                discriminator.out_dim(),
                num_classes + 1
            )));
        }
        if generator.out_dim() != discriminator.in_dim() {
            return Err(Error::invalid(format!(
                "generator emits {} dimensions, discriminator reads {}",
                generator.out_dim(),
                discriminator.in_dim()
            )));
        }
        if discriminator.specs().len() < 2 {
            return Err(Error::invalid(
                "discriminator needs a hidden layer to supply features",
            ));
        }
        let feature_layer = discriminator.specs().len() - 2;
        Ok(Self {
            generator,
            discriminator,
            num_classes,
            feature_layer,
            z_prior,
            trained_on: None,
        })
    }

    pub fn with_feature_layer(mut self, layer: usize) -> Result<Self> {
        if layer + 1 >= self.discriminator.specs().len() {
            return Err(Error::invalid(format!(
                "feature layer {layer} is not a hidden layer of a {}-layer discriminator",
                self.discriminator.specs().len()
            )));
        }
        self.feature_layer = layer;
        Ok(self)
    }

    pub(crate) fn set_trained_on(&mut self, fingerprint: Option<String>) {
        self.trained_on = fingerprint;
    }

    pub fn generator(&self) -> &Mlp {
        &self.generator
    }

    pub fn discriminator(&self) -> &Mlp {
        &self.discriminator
    }

    pub(crate) fn generator_mut(&mut self) -> &mut Mlp {
        &mut self.generator
    }

    pub(crate) fn discriminator_mut(&mut self) -> &mut Mlp {
        &mut self.discriminator
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn feature_layer(&self) -> usize {
        self.feature_layer
    }

    pub fn z_dim(&self) -> usize {
        self.generator.in_dim()
    }

    pub fn data_dim(&self) -> usize {
        self.discriminator.in_dim()
    }

    pub fn z_prior(&self) -> ZPrior {
        self.z_prior
    }

    pub fn training_fingerprint(&self) -> Option<&str> {
        self.trained_on.as_deref()
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        if x.ndim() != 2 || x.cols() != self.data_dim() {
            return Err(Error::invalid(format!(
                "expected a batch of width {}, got shape {:?}",
                self.data_dim(),
                x.shape()
            )));
        }
        Ok(())
    }

    /// Raw `K + 1` logits in eval mode.
    pub fn discriminator_logits(&self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x)?;
        Ok(self.discriminator.eval(x)?.output)
    }

    /// Floored `K + 1`-way softmax, fake class last.
    pub fn discriminator_probs(&self, x: &Tensor) -> Result<Tensor> {
        let logits = self.discriminator_logits(x)?;
        Ok(floor_probs(&crate::tensor::forward_op(
            &crate::tensor::Op::Softmax,
            &[&logits],
            None,
        )?))
    }

    /// `D(x)`, the total real-class probability.
    pub fn d_real(&self, x: &Tensor) -> Result<Vec<f64>> {
        Ok(self.fake_prob(x)?.iter().map(|p| 1.0 - p).collect())
    }

    pub fn fake_prob(&self, x: &Tensor) -> Result<Vec<f64>> {
        let p = self.discriminator_probs(x)?;
        Ok(p.row_iter().map(|r| r[self.num_classes]).collect())
    }

    /// Feature-layer activations in eval mode.
    pub fn discriminator_features(&self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x)?;
        let mut out = self.discriminator.eval(x)?;
        Ok(out.hidden.swap_remove(self.feature_layer))
    }

    pub fn generate(&self, z: &Tensor) -> Result<Tensor> {
        if z.ndim() != 2 || z.cols() != self.z_dim() {
            return Err(Error::invalid(format!(
                "expected latent batch of width {}, got shape {:?}",
                self.z_dim(),
                z.shape()
            )));
        }
        Ok(self.generator.eval(z)?.output)
    }

    /// `n` draws of `G(z)` with `z` from the prior.
    pub fn sample_generator(&self, n: usize, rng: &mut dyn RngCore) -> Result<Tensor> {
        if n == 0 {
            return Ok(Tensor::zeros([0, self.data_dim()]));
        }
        let z = self.z_prior.sample(n, self.z_dim(), rng);
        self.generate(&z)
    }
}

impl ProbabilisticModel for GanModel {
    fn class_probs(&self, x: &Tensor) -> Result<ClassProbs> {
        let p = self.discriminator_probs(x)?;
        Ok(ClassProbs {
            real: crate::scores::renormalize_real(&p)?,
            fake: Some(p.row_iter().map(|r| r[self.num_classes]).collect()),
        })
    }

    fn features(&self, x: &Tensor) -> Result<Tensor> {
        self.discriminator_features(x)
    }

    fn trained_on(&self) -> Option<&str> {
        self.training_fingerprint()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ParamSet;

    fn zero_last_layer(model: &mut GanModel) {
        let d = model.discriminator_mut();
        let last = d.params_mut().layers.last_mut().unwrap();
        let g = last.gain.as_mut().unwrap();
        *g = Tensor::zeros(g.shape().to_vec());
    }

    #[test]
    fn zero_logits_are_uniform() {
        let mut m = GanModel::new(&GanArchitecture::toy_2d(9), 1).unwrap();
        zero_last_layer(&mut m);
        let x = Tensor::from_rows(&[[0.3, -2.0], [1.0, 1.0]]);
        let p = m.discriminator_probs(&x).unwrap();
        for r in p.row_iter() {
            assert_eq!(r.len(), 10);
            for v in r {
                assert!((v - 0.1).abs() < 1e-12);
            }
        }
        for d in m.d_real(&x).unwrap() {
            assert!((d - 0.9).abs() < 1e-12);
        }
    }

    #[test]
    fn large_fake_logit_drives_d_to_floor() {
        let logits = Tensor::from_rows(&[[0.0, 0.0, 50.0]]);
        let p = floor_probs(
            &crate::tensor::forward_op(&crate::tensor::Op::Softmax, &[&logits], None).unwrap(),
        );
        let d = 1.0 - p.data()[2];
        assert!((PROB_CLAMP..1e-6).contains(&d));
        assert!((p.data().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn probs_rows_sum_to_one_and_respect_floor() {
        let m = GanModel::new(&GanArchitecture::toy_2d(3), 5).unwrap();
        let x = Tensor::from_rows(&[[100.0, -40.0], [0.0, 0.0], [3.0, 3.0]]);
        let p = m.discriminator_probs(&x).unwrap();
        for r in p.row_iter() {
            assert!((r.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(r.iter().all(|&v| (PROB_CLAMP..=1.0).contains(&v)));
        }
        assert!(m.discriminator_probs(&Tensor::zeros([1, 3])).is_err());
    }

    #[test]
    fn sampling_edge_cases() {
        let mut m = GanModel::new(&GanArchitecture::toy_2d(2), 2).unwrap();
        let mut rng = RngStreams::new(3).stream(Stream::Sampling);
        assert_eq!(m.sample_generator(0, &mut rng).unwrap().shape(), &[0, 2]);
        let a = m
            .sample_generator(5, &mut RngStreams::new(3).stream(Stream::Sampling))
            .unwrap();
        let b = m
            .sample_generator(5, &mut RngStreams::new(3).stream(Stream::Sampling))
            .unwrap();
        assert_eq!(a, b);

        let p = m.generator_mut().params_mut();
        let n = p.tensors_mut().len();
        for (i, t) in p.tensors_mut().into_iter().enumerate() {
            let fill = if i == n - 1 { 0.25 } else { 0.0 };
            *t = Tensor::filled(t.shape().to_vec(), fill);
        }
        let s = m.sample_generator(4, &mut rng).unwrap();
        assert!(s.data().iter().all(|&v| v == 0.25));
    }

    #[test]
    fn feature_layer_must_be_hidden() {
        let m = GanModel::new(&GanArchitecture::toy_2d(2), 2).unwrap();
        assert_eq!(m.feature_layer(), 2);
        assert!(m.clone().with_feature_layer(3).is_err());
        let f = m
            .with_feature_layer(0)
            .unwrap()
            .discriminator_features(&Tensor::zeros([3, 2]))
            .unwrap();
        assert_eq!(f.shape(), &[3, 64]);
    }
}
