use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use super::loss::{d_loss_on_tape, fm_on_tape, forward_logits, g_standard_on_tape};
use super::{feature_matching_distance, GanModel};
use crate::data::{subsample_labeled, Dataset};
use crate::density::Sampler;
use crate::nn::{AdamConfig, AdamState, Mode};
use crate::rng::{RngStreams, Stream};
use crate::tensor::{Tape, Tensor};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GeneratorLoss {
    Standard,
    #[default]
    FeatureMatching,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub total_steps: usize,
    pub d_steps_per_g_step: usize,
    pub seed: u64,
    /// Labeled examples kept per class; the rest only feed the unsupervised term.
    pub labeled_per_class: Option<usize>,
    /// Alternative to `labeled_per_class`: fraction of the labeled rows kept.
    pub labeled_fraction: Option<f64>,
    pub generator_loss: GeneratorLoss,
    pub adam_d: AdamConfig,
    pub adam_g: AdamConfig,
    /// A log row (with a feature-matching distance) every this many steps.
    pub log_every: usize,
    /// Size of the fixed real / latent batches behind the logged distance.
    pub monitor_batch: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 100,
            total_steps: 1000,
            d_steps_per_g_step: 1,
            seed: 0,
            labeled_per_class: None,
            labeled_fraction: None,
            generator_loss: GeneratorLoss::FeatureMatching,
            adam_d: AdamConfig::default(),
            adam_g: AdamConfig::default(),
            log_every: 100,
            monitor_batch: 500,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::invalid(format!(
                "batch size {} must be at least 2",
                self.batch_size
            )));
        }
        if self.total_steps == 0
            || self.d_steps_per_g_step == 0
            || self.log_every == 0
            || self.monitor_batch == 0
        {
            return Err(Error::invalid(
                "total steps, discriminator steps, log interval and monitor batch must be positive",
            ));
        }
        if let Some(f) = self.labeled_fraction {
            if !(f > 0.0 && f <= 1.0) {
                return Err(Error::invalid(format!(
                    "labeled fraction {f} outside (0, 1]"
                )));
            }
            if self.labeled_per_class.is_some() {
                return Err(Error::invalid(
                    "set labeled_per_class or labeled_fraction, not both",
                ));
            }
        }
        for a in [&self.adam_d, &self.adam_g] {
            let ok = a.lr > 0.0
                && (0.0..1.0).contains(&a.beta1)
                && (0.0..1.0).contains(&a.beta2)
                && a.eps > 0.0;
            if !ok {
                return Err(Error::invalid(format!("bad Adam settings {a:?}")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LogRow {
    pub step: usize,
    pub d_loss: Option<f64>,
    pub g_loss: Option<f64>,
    pub fm_distance: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct TrainLog {
    pub rows: Vec<LogRow>,
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(String::new, |v| v.to_string())
}

impl TrainLog {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("step,d-loss,g-loss,fm-distance\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{}",
                r.step,
                cell(r.d_loss),
                cell(r.g_loss),
                cell(r.fm_distance)
            );
        }
        s
    }

    pub fn fm_distances(&self) -> Vec<(usize, f64)> {
        self.rows
            .iter()
            .filter_map(|r| r.fm_distance.map(|d| (r.step, d)))
            .collect()
    }

    pub fn d_losses(&self) -> Vec<(usize, f64)> {
        self.rows
            .iter()
            .filter_map(|r| r.d_loss.map(|d| (r.step, d)))
            .collect()
    }
}

/// The labeled subset that feeds the cross-entropy term, if any.
pub(crate) fn select_labeled(data: &Dataset, config: &TrainConfig) -> Result<Option<Dataset>> {
    let Some(labels) = data.labels() else {
        if config.labeled_per_class.is_some_and(|n| n > 0) || config.labeled_fraction.is_some() {
            return Err(Error::invalid(format!(
                "dataset `{}` has no labels to keep",
                data.provenance
            )));
        }
        return Ok(None);
    };
    let seed = RngStreams::new(config.seed).derive(1).seed();
    match (config.labeled_per_class, config.labeled_fraction) {
        (Some(0), _) => Ok(None),
        (Some(n), _) => Ok(Some(subsample_labeled(data, n, seed)?.0)),
        (None, Some(f)) => {
            let mut idx: Vec<usize> = (0..labels.len()).collect();
            idx.shuffle(&mut RngStreams::new(seed).stream(Stream::Shuffling));
            let keep = ((f * labels.len() as f64).round() as usize).clamp(1, labels.len());
            idx.truncate(keep);
            idx.sort_unstable();
            Ok(Some(data.select(&idx)))
        }
        (None, None) => Ok(Some(data.clone())),
    }
}

fn batch_indices(n: usize, size: usize, rng: &mut dyn RngCore) -> Vec<usize> {
    (0..size).map(|_| rng.random_range(0..n)).collect()
}

fn check_data(model: &GanModel, data: &Dataset) -> Result<()> {
    if data.dim() != model.data_dim() {
        return Err(Error::invalid(format!(
            "data has {} features, model expects {}",
            data.dim(),
            model.data_dim()
        )));
    }
    if data.labels().is_some() && data.num_classes() != model.num_classes() {
        return Err(Error::invalid(format!(
            "data has {} classes, model has {}",
            data.num_classes(),
            model.num_classes()
        )));
    }
    if data.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "{} training rows",
            data.len()
        )));
    }
    Ok(())
}

fn finite(step: usize, loss: &'static str, value: f64) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::Divergence { step, loss, value })
    }
}

struct Batches<'a> {
    data: &'a Dataset,
    labeled: Option<&'a Dataset>,
    size: usize,
}

impl Batches<'_> {
    fn labeled(&self, rng: &mut dyn RngCore) -> Option<(Tensor, Vec<usize>)> {
        self.labeled.map(|l| {
            let idx = batch_indices(l.len(), self.size, rng);
            let labels = l.labels().expect("labeled subset");
            (
                l.features().select_rows(&idx),
                idx.iter().map(|&i| labels[i]).collect(),
            )
        })
    }

    fn real(&self, rng: &mut dyn RngCore) -> Tensor {
        let idx = batch_indices(self.data.len(), self.size, rng);
        self.data.features().select_rows(&idx)
    }
}

fn d_step(
    model: &mut GanModel,
    adam: &mut AdamState,
    labeled: Option<(Tensor, Vec<usize>)>,
    real: &Tensor,
    fake: &Tensor,
    noise: &mut dyn RngCore,
    step: usize,
) -> Result<f64> {
    let k = model.num_classes();
    let mut tape = Tape::new();
    let d = model.discriminator().attach(&mut tape, true)?;
    let l = match &labeled {
        Some((x, y)) => Some((
            forward_logits(&mut tape, &d, x, Mode::Train, Some(noise))?.0,
            y.as_slice(),
        )),
        None => None,
    };
    let u = forward_logits(&mut tape, &d, real, Mode::Train, Some(noise))?.0;
    let f = forward_logits(&mut tape, &d, fake, Mode::Train, Some(noise))?.0;
    let loss = d_loss_on_tape(&mut tape, k, l, Some(u), Some(f))?;
    let value = finite(step, "discriminator", tape.value(loss)?.item())?;
    let grads = tape.backward(loss)?;
    let g = d.gradients(&tape, &grads)?;
    adam.step(model.discriminator_mut().params_mut(), &g)?;
    Ok(value)
}

fn g_step(
    model: &mut GanModel,
    adam: &mut AdamState,
    kind: super::GeneratorLoss,
    real: &Tensor,
    z: &Tensor,
    noise: &mut dyn RngCore,
    step: usize,
) -> Result<f64> {
    let mut tape = Tape::new();
    let g = model.generator().attach(&mut tape, true)?;
    let d = model.discriminator().attach(&mut tape, false)?;
    let zv = tape.constant(z.clone());
    let fake = g.forward(&mut tape, zv, Mode::Train, Some(noise))?.output;
    let fake_out = d.forward(&mut tape, fake, Mode::Train, Some(noise))?;
    let loss = match kind {
        GeneratorLoss::Standard => {
            g_standard_on_tape(&mut tape, model.num_classes(), fake_out.output)?
        }
        GeneratorLoss::FeatureMatching => {
            let fl = model.feature_layer();
            let (_, real_hidden) = forward_logits(&mut tape, &d, real, Mode::Train, Some(noise))?;
            fm_on_tape(&mut tape, real_hidden[fl], fake_out.hidden[fl])?
        }
    };
    let value = finite(step, "generator", tape.value(loss)?.item())?;
    let grads = tape.backward(loss)?;
    let grads = g.gradients(&tape, &grads)?;
    adam.step(model.generator_mut().params_mut(), &grads)?;
    Ok(value)
}

/// Alternating Adam updates of discriminator and generator. Deterministic
/// given `config.seed`: minibatches and latents come from the `Sampling`
/// stream, layer noise from `Noise`, and the fixed monitoring batch behind
/// the logged feature-matching distance from `Monitor`.
pub fn train_gan(
    mut model: GanModel,
    data: &Dataset,
    config: &TrainConfig,
) -> Result<(GanModel, TrainLog)> {
    config.validate()?;
    check_data(&model, data)?;
    let labeled = select_labeled(data, config)?;
    let batches = Batches {
        data,
        labeled: labeled.as_ref(),
        size: config.batch_size,
    };
    let streams = RngStreams::new(config.seed);
    let mut sampling = streams.stream(Stream::Sampling);
    let mut noise = streams.stream(Stream::Noise);
    let mut monitor_rng = streams.stream(Stream::Monitor);
    let monitor_real = {
        let idx = batch_indices(data.len(), config.monitor_batch, &mut monitor_rng);
        data.features().select_rows(&idx)
    };
    let monitor_z = model
        .z_prior()
        .sample(config.monitor_batch, model.z_dim(), &mut monitor_rng);
    let monitor = |m: &GanModel| -> Result<f64> {
        feature_matching_distance(m, &monitor_real, &m.generate(&monitor_z)?)
    };

    let mut adam_d = AdamState::new(config.adam_d);
    let mut adam_g = AdamState::new(config.adam_g);
    let mut log = TrainLog::default();
    log.rows.push(LogRow {
        step: 0,
        d_loss: None,
        g_loss: None,
        fm_distance: Some(monitor(&model)?),
    });
    for step in 1..=config.total_steps {
        let mut d_loss = 0.0;
        for _ in 0..config.d_steps_per_g_step {
            let lab = batches.labeled(&mut sampling);
            let real = batches.real(&mut sampling);
            let fake = model.sample_generator(config.batch_size, &mut sampling)?;
            d_loss = d_step(&mut model, &mut adam_d, lab, &real, &fake, &mut noise, step)?;
        }
        let real = batches.real(&mut sampling);
        let z = model
            .z_prior()
            .sample(config.batch_size, model.z_dim(), &mut sampling);
        let g_loss = g_step(
            &mut model,
            &mut adam_g,
            config.generator_loss,
            &real,
            &z,
            &mut noise,
            step,
        )?;
        if step % config.log_every == 0 || step == config.total_steps {
            log.rows.push(LogRow {
                step,
                d_loss: Some(d_loss),
                g_loss: Some(g_loss),
                fm_distance: Some(monitor(&model)?),
            });
        }
    }
    model.set_trained_on(Some(data.fingerprint()));
    Ok((model, log))
}

/// Trains only the discriminator, with fakes drawn from a fixed sampler
/// instead of the generator. `config.total_steps` counts discriminator steps.
pub fn train_discriminator(
    mut model: GanModel,
    data: &Dataset,
    config: &TrainConfig,
    fakes: &dyn Sampler,
) -> Result<(GanModel, TrainLog)> {
    config.validate()?;
    check_data(&model, data)?;
    if fakes.dim() != model.data_dim() {
        return Err(Error::invalid(format!(
            "fake sampler has dimension {}, model expects {}",
            fakes.dim(),
            model.data_dim()
        )));
    }
    let labeled = select_labeled(data, config)?;
    let batches = Batches {
        data,
        labeled: labeled.as_ref(),
        size: config.batch_size,
    };
    let streams = RngStreams::new(config.seed);
    let mut sampling = streams.stream(Stream::Sampling);
    let mut noise = streams.stream(Stream::Noise);
    let mut adam_d = AdamState::new(config.adam_d);
    let mut log = TrainLog::default();
    for step in 1..=config.total_steps {
        let lab = batches.labeled(&mut sampling);
        let real = batches.real(&mut sampling);
        let fake = fakes.sample(config.batch_size, &mut sampling);
        let d_loss = d_step(&mut model, &mut adam_d, lab, &real, &fake, &mut noise, step)?;
        if step % config.log_every == 0 || step == config.total_steps {
            log.rows.push(LogRow {
                step,
                d_loss: Some(d_loss),
                g_loss: None,
                fm_distance: None,
            });
        }
    }
    model.set_trained_on(Some(data.fingerprint()));
    Ok((model, log))
}
