//! `train`: fit a GAN or a plain classifier and save it.

use std::time::Instant;

use ndgan_core::data::Dataset;
use ndgan_core::gan::file::{encode, ModelFile};
use ndgan_core::gan::{train_classifier, train_gan, Classifier, GanModel};

use super::Invocation;
use crate::config::{seeds, ExperimentConfig, ModelKind};
use crate::error::{CliError, CliResult};
use crate::manifest::{Manifest, RunOutputs};

pub const MODEL_FILE: &str = "model.ndgan";
pub const LOG_FILE: &str = "train-log.csv";

/// Unlabeled data trains a one-class discriminator.
pub(crate) fn with_class_count(data: Dataset) -> CliResult<Dataset> {
    if data.labels().is_some() || data.num_classes() > 0 {
        return Ok(data);
    }
    Ok(Dataset::new(
        data.features().clone(),
        None,
        1,
        data.split,
        data.provenance.clone(),
    )?)
}

pub(crate) fn check_labels_available(cfg: &ExperimentConfig, data: &Dataset) -> CliResult<()> {
    let wants =
        cfg.train.labeled_fraction.is_some() || cfg.train.labeled_per_class.is_some_and(|n| n > 0);
    if data.labels().is_none() && (wants || cfg.model == ModelKind::Classifier) {
        return Err(CliError::validation(format!(
            "dataset {} has no labels, but the run needs labeled examples",
            data.provenance
        )));
    }
    Ok(())
}

pub fn run(inv: &Invocation) -> CliResult<Manifest> {
    let (cfg, effective): (ExperimentConfig, _) = inv.resolve("train")?;
    cfg.validate()?;
    let data = with_class_count(cfg.load_dataset(false)?)?;
    check_labels_available(&cfg, &data)?;
    let arch = cfg.architecture.resolve(data.dim(), data.num_classes())?;
    let train = cfg.train_config();
    let mut out = RunOutputs::new(
        cfg.resolve_output_dir(),
        "train",
        Some(cfg.seed),
        effective,
        inv.overrides.clone(),
    )?;
    out.inputs(cfg.require_dataset()?.files())?;

    let start = Instant::now();
    log::info!(
        "training {:?} on {} rows ({} features, {} classes) for {} steps",
        cfg.model,
        data.len(),
        data.dim(),
        data.num_classes(),
        train.total_steps
    );
    let init_seed = cfg.derived_seed(seeds::MODEL_INIT);
    match cfg.model {
        ModelKind::Gan => {
            let (model, log) = train_gan(GanModel::new(&arch, init_seed)?, &data, &train)?;
            out.write(MODEL_FILE, &encode(&ModelFile::Gan(model)))?;
            out.write(LOG_FILE, log.to_csv().as_bytes())?;
        }
        ModelKind::Classifier => {
            let clf = train_classifier(Classifier::new(&arch, init_seed)?, &data, &train)?;
            out.write(MODEL_FILE, &encode(&ModelFile::Classifier(clf)))?;
        }
    }
    log::info!("training took {:.1} s", start.elapsed().as_secs_f64());
    out.finish()
}
