//! `oracle`: checks on known densities. Mixture identity on a grid, the
//! optimal discriminator surface, and the likelihood-ratio detector's AUROC.

use std::path::PathBuf;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::json;

use ndgan_core::density::{
    closed_form_lr_auroc, likelihood_ratio_score, optimal_discriminator, verify_mixture_identity,
    DensityDocument, GridDensity,
};
use ndgan_core::metrics::auroc;
use ndgan_core::rng::{RngStreams, Stream};

use super::Invocation;
use crate::config::default_output_dir;
use crate::error::{CliError, CliResult};
use crate::io::tensor_rows_csv;
use crate::manifest::{Manifest, RunOutputs};

const GRID_POINTS: f64 = 1e4;

fn default_tolerance() -> f64 {
    1e-12
}

fn default_lr_tolerance() -> f64 {
    0.01
}

fn default_samples() -> usize {
    100_000
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleParams {
    pub density: PathBuf,
    /// Cells per axis; about 1e4 grid points in total when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resolution: Option<usize>,
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
    #[serde(default = "default_lr_tolerance")]
    pub lr_tolerance: f64,
    /// Monte Carlo draws per class for the likelihood-ratio AUROC.
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

pub fn run(inv: &Invocation) -> CliResult<Manifest> {
    let (params, effective): (OracleParams, _) = inv.resolve("oracle")?;
    let doc = DensityDocument::from_json(&crate::io::read_text(&params.density)?)
        .map_err(|e| CliError::validation(format!("{}: {e}", params.density.display())))?;
    if !(params.tolerance > 0.0 && params.lr_tolerance > 0.0) || params.samples == 0 {
        return Err(CliError::validation(
            "tolerances and sample count must be positive",
        ));
    }
    let spec = doc.mixture()?;
    let dim = doc.data.dim();
    let per_axis = params
        .resolution
        .unwrap_or_else(|| GRID_POINTS.powf(1.0 / dim as f64).round() as usize)
        .max(1);
    let grid = GridDensity::from_density(&doc.data, doc.grid_bounds(), vec![per_axis; dim])?;
    let x = grid.centers();

    let identity = verify_mixture_identity(&spec, &x)?;
    let identity_ok = identity.within(params.tolerance);
    let p_data = ndgan_core::density::Density::eval_batch(&doc.data, &x)?;
    let p_g = ndgan_core::density::Density::eval_batch(&spec, &x)?;
    let dstar = optimal_discriminator(&doc.data, &spec, &x)?;
    let mut header: Vec<String> = (0..dim).map(|j| format!("x{j}")).collect();
    header.extend(["p-data", "p-g", "d-star"].map(String::from));
    let mut table = Vec::with_capacity(x.rows() * (dim + 3));
    for i in 0..x.rows() {
        table.extend_from_slice(x.row(i));
        table.extend([p_data[i], p_g[i], dstar[i]]);
    }
    let table = ndgan_core::Tensor::new([x.rows(), dim + 3], table)?;

    let lr = match &doc.novel {
        Some(novel) => {
            let start = Instant::now();
            let streams = RngStreams::new(params.seed);
            let mut rng = streams.stream(Stream::Sampling);
            let nominal = doc.data.sample(params.samples, &mut rng);
            let outliers = novel.sample(params.samples, &mut rng);
            let s0 = likelihood_ratio_score(&doc.data, novel, &nominal)?;
            let s1 = likelihood_ratio_score(&doc.data, novel, &outliers)?;
            let mc = auroc(&s0, &s1)?;
            let closed = closed_form_lr_auroc(&doc.data, novel);
            let ok = closed.is_none_or(|c| (mc - c).abs() <= params.lr_tolerance);
            Some((mc, closed, ok, start.elapsed().as_secs_f64()))
        }
        None => None,
    };

    let report = json!({
        "identity": {
            "evaluated": identity.evaluated,
            "excluded": identity.excluded.len(),
            "max_abs_residual": identity.max_abs_residual,
            "max_scaled_residual": identity.max_scaled_residual,
            "max_scaled_residual_ssnd": identity.max_scaled_residual_ssnd,
            "tolerance": params.tolerance,
            "pass": identity_ok,
        },
        "grid": { "bounds": grid.bounds(), "resolution": grid.resolution() },
        "likelihood_ratio": lr.map(|(mc, closed, ok, secs)| json!({
            "monte_carlo_auroc": mc,
            "closed_form_auroc": closed,
            "abs_error": closed.map(|c| (mc - c).abs()),
            "tolerance": params.lr_tolerance,
            "samples_per_class": params.samples,
            "seconds": secs,
            "pass": ok,
        })),
    });

    let dir = params.output_dir.clone().unwrap_or_else(default_output_dir);
    let mut out = RunOutputs::new(
        dir,
        "oracle",
        Some(params.seed),
        effective,
        inv.overrides.clone(),
    )?;
    out.input(&params.density)?;
    out.write("d-star.csv", tensor_rows_csv(&header, &table).as_bytes())?;
    out.write(
        "report.json",
        serde_json::to_string_pretty(&report)
            .expect("json")
            .as_bytes(),
    )?;
    let manifest = out.finish()?;

    log::info!(
        "identity: max scaled residual {:.3e} over {} points ({} excluded)",
        identity
            .max_scaled_residual
            .max(identity.max_scaled_residual_ssnd),
        identity.evaluated,
        identity.excluded.len()
    );
    if !identity_ok {
        return Err(CliError::Tolerance(format!(
            "mixture identity residual {:.3e} exceeds {:.1e}",
            identity
                .max_scaled_residual
                .max(identity.max_scaled_residual_ssnd),
            params.tolerance
        )));
    }
    if let Some((mc, closed, ok, _)) = lr {
        log::info!("likelihood-ratio auroc {mc:.4} (closed form {closed:?})");
        if !ok {
            return Err(CliError::Tolerance(format!(
                "Monte Carlo auroc {mc:.4} differs from closed form {:.4} by more than {}",
                closed.expect("checked"),
                params.lr_tolerance
            )));
        }
    }
    Ok(manifest)
}
