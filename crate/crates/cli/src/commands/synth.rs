//! `synth`: ring-of-Gaussians train / test / novel CSVs plus their exact density.

use ndgan_core::data::gen_ring_mixture;
use ndgan_core::density::{
    DensityDocument, GaussianMixtureDensity, Sampler, DENSITY_SCHEMA_VERSION,
};
use ndgan_core::rng::{RngStreams, Stream};
use ndgan_core::scores::make_uniform_baseline_generator;

use super::Invocation;
use crate::config::{seeds, ExperimentConfig, NovelSpec};
use crate::error::{CliError, CliResult};
use crate::io::{dataset_csv, tensor_rows_csv};
use crate::manifest::{Manifest, RunOutputs};

/// Half-width of the uniform novel box, in units of `radius + REACH * sigma`.
const REACH: f64 = 4.0;

pub fn run(inv: &Invocation) -> CliResult<Manifest> {
    let (cfg, effective): (ExperimentConfig, _) = inv.resolve("synth")?;
    cfg.validate()?;
    let spec = cfg
        .synth
        .as_ref()
        .ok_or_else(|| CliError::validation("config has no `synth` section"))?;
    let mut out = RunOutputs::new(
        cfg.resolve_output_dir(),
        "synth",
        Some(cfg.seed),
        effective,
        inv.overrides.clone(),
    )?;

    let ring = |n, purpose| {
        gen_ring_mixture(
            n,
            spec.components,
            spec.radius,
            spec.sigma,
            cfg.derived_seed(purpose),
        )
    };
    let (train, density) = ring(spec.n, seeds::TRAIN_DATA)?;
    out.write("train.csv", dataset_csv(&train).as_bytes())?;
    if spec.test_n > 0 {
        let (mut test, _) = ring(spec.test_n, seeds::TEST_DATA)?;
        test.split = ndgan_core::data::SplitTag::Test;
        out.write("test.csv", dataset_csv(&test).as_bytes())?;
    }

    let mut doc = DensityDocument {
        version: DENSITY_SCHEMA_VERSION,
        data: density,
        novel: None,
        pi: spec.pi,
        bounds: None,
    };
    if let Some(novel) = &spec.novel {
        let mut rng = RngStreams::new(cfg.derived_seed(seeds::NOVEL_DATA)).stream(Stream::Sampling);
        let x = match novel {
            NovelSpec::Uniform { n } => {
                let half = spec.radius + REACH * spec.sigma;
                make_uniform_baseline_generator(vec![(-half, half); 2])?.sample(*n, &mut rng)
            }
            NovelSpec::Gaussian { n, mean, variance } => {
                if mean.len() != 2 || variance.len() != 2 {
                    return Err(CliError::validation(
                        "synth.novel: mean and variance need two entries",
                    ));
                }
                let g = GaussianMixtureDensity::gaussian(mean.clone(), variance.clone())?;
                let x = g.sample(*n, &mut rng);
                doc.novel = Some(g);
                x
            }
        };
        out.write(
            "novel.csv",
            tensor_rows_csv(&["x0".into(), "x1".into()], &x).as_bytes(),
        )?;
    }
    out.write("density.json", doc.to_json().as_bytes())?;
    out.finish()
}
