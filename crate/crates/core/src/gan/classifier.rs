use rand::Rng;

use super::loss::{d_loss_on_tape, forward_logits};
use super::train::select_labeled;
use super::{GanArchitecture, TrainConfig};
use crate::data::Dataset;
use crate::nn::{AdamState, Mlp, Mode};
use crate::rng::{RngStreams, Stream};
use crate::scores::{ClassProbs, ProbabilisticModel};
use crate::tensor::{forward_op, Op, Tape, Tensor};
use crate::{Error, Result};

/// Plain K-way classifier with the discriminator's architecture; the
/// baseline behind the entropy, max-prob and kNN scores.
#[derive(Clone, Debug, PartialEq)]
pub struct Classifier {
    net: Mlp,
    trained_on: Option<String>,
}

impl Classifier {
    pub fn new(arch: &GanArchitecture, seed: u64) -> Result<Self> {
        let mut rng = RngStreams::new(seed).stream(Stream::Init);
        Self::from_net(Mlp::init(
            arch.discriminator_specs(arch.num_classes),
            &mut rng,
        )?)
    }

    pub fn from_net(net: Mlp) -> Result<Self> {
        if net.specs().len() < 2 {
            return Err(Error::invalid(
                "classifier needs a hidden layer to supply features",
            ));
        }
        Ok(Self {
            net,
            trained_on: None,
        })
    }

    pub(crate) fn set_trained_on(&mut self, fingerprint: Option<String>) {
        self.trained_on = fingerprint;
    }

    pub fn net(&self) -> &Mlp {
        &self.net
    }

    pub fn num_classes(&self) -> usize {
        self.net.out_dim()
    }

    pub fn probs(&self, x: &Tensor) -> Result<Tensor> {
        let logits = self.net.eval(x)?.output;
        Ok(forward_op(&Op::Softmax, &[&logits], None)?)
    }
}

impl ProbabilisticModel for Classifier {
    fn class_probs(&self, x: &Tensor) -> Result<ClassProbs> {
        Ok(ClassProbs {
            real: self.probs(x)?,
            fake: None,
        })
    }

    fn features(&self, x: &Tensor) -> Result<Tensor> {
        let mut out = self.net.eval(x)?;
        let last = out.hidden.len() - 1;
        Ok(out.hidden.swap_remove(last))
    }

    fn trained_on(&self) -> Option<&str> {
        self.trained_on.as_deref()
    }
}

/// Cross-entropy training on the labeled subset chosen by `config`
/// (the same subset [`super::train_gan`] would use).
pub fn train_classifier(
    mut clf: Classifier,
    data: &Dataset,
    config: &TrainConfig,
) -> Result<Classifier> {
    config.validate()?;
    let labeled = select_labeled(data, config)?
        .ok_or_else(|| Error::invalid("classifier training needs labeled data"))?;
    if labeled.num_classes() != clf.num_classes() || labeled.dim() != clf.net.in_dim() {
        return Err(Error::invalid("classifier shape does not match the data"));
    }
    let streams = RngStreams::new(config.seed);
    let mut sampling = streams.stream(Stream::Sampling);
    let mut noise = streams.stream(Stream::Noise);
    let mut adam = AdamState::new(config.adam_d);
    let labels = labeled.labels().expect("labeled subset");
    for step in 1..=config.total_steps {
        let idx: Vec<usize> = (0..config.batch_size)
            .map(|_| sampling.random_range(0..labeled.len()))
            .collect();
        let x = labeled.features().select_rows(&idx);
        let y: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
        let mut tape = Tape::new();
        let net = clf.net.attach(&mut tape, true)?;
        let logits = forward_logits(&mut tape, &net, &x, Mode::Train, Some(&mut noise))?.0;
        let loss = d_loss_on_tape(&mut tape, clf.num_classes(), Some((logits, &y)), None, None)?;
        let value = tape.value(loss)?.item();
        if !value.is_finite() {
            return Err(Error::Divergence {
                step,
                loss: "classifier",
                value,
            });
        }
        let grads = tape.backward(loss)?;
        let g = net.gradients(&tape, &grads)?;
        adam.step(clf.net.params_mut(), &g)?;
    }
    clf.set_trained_on(Some(data.fingerprint()));
    Ok(clf)
}
