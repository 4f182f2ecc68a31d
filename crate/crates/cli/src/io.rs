//! File helpers shared by the commands.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use sha2::{Digest, Sha256};

use ndgan_core::data::{read_csv_dataset, read_idx, Dataset, LabelColumn, SplitTag};
use ndgan_core::Tensor;

use crate::config::DataFile;
use crate::error::{CliError, CliResult};

/// Writes `bytes` to a temporary file beside `path`, then renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> CliResult<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir).map_err(|e| CliError::write(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| CliError::write(path, e))?;
    tmp.write_all(bytes).map_err(|e| CliError::write(path, e))?;
    tmp.persist(path)
        .map_err(|e| CliError::write(path, e.error))?;
    log::debug!("wrote {}", path.display());
    Ok(())
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> CliResult<String> {
    let bytes = fs::read(path)
        .map_err(|e| CliError::runtime(format!("cannot read {}: {e}", path.display())))?;
    Ok(sha256_hex(&bytes))
}

pub fn read_text(path: &Path) -> CliResult<String> {
    if !path.exists() {
        return Err(CliError::missing(path));
    }
    fs::read_to_string(path)
        .map_err(|e| CliError::validation(format!("cannot read {}: {e}", path.display())))
}

/// Creates the output directory when missing.
pub fn ensure_dir(dir: &Path) -> CliResult<()> {
    if !dir.exists() {
        fs::create_dir_all(dir).map_err(|e| CliError::write(dir, e))?;
        log::info!("created output directory {}", dir.display());
    }
    Ok(())
}

/// Loads a dataset file described in a config or on the command line.
pub fn load_data_file(file: &DataFile, split: SplitTag) -> CliResult<Dataset> {
    let data = match file {
        DataFile::Csv { path, label_column } => {
            let column = label_column.as_ref().map(|c| match c.parse::<usize>() {
                Ok(i) => LabelColumn::Index(i),
                Err(_) => LabelColumn::Name(c.clone()),
            });
            let (mut ds, mapping) = read_csv_dataset(path, column.as_ref())?;
            if let Some(m) = mapping {
                log::info!(
                    "{}: labels {:?} mapped to 0..{}",
                    path.display(),
                    m.original,
                    m.original.len()
                );
            }
            ds.split = split;
            ds
        }
        DataFile::Idx { images, labels } => match labels {
            Some(l) => ndgan_core::data::read_idx_pair(images, l, split)?,
            None => {
                let mut ds = read_idx(images)?;
                ds.split = split;
                ds
            }
        },
        DataFile::Ring { .. } => {
            return Err(CliError::validation(
                "a ring dataset is generated, not read",
            ))
        }
    };
    log::info!(
        "loaded {} rows of {} features from {}",
        data.len(),
        data.dim(),
        file.describe()
    );
    Ok(data)
}

/// Feature columns `x0..x{d-1}`, then `label` when present.
pub fn dataset_csv(data: &Dataset) -> String {
    let mut s = String::new();
    let d = data.dim();
    let header: Vec<String> = (0..d).map(|j| format!("x{j}")).collect();
    s.push_str(&header.join(","));
    if data.labels().is_some() {
        s.push_str(",label");
    }
    s.push('\n');
    for (i, row) in data.features().row_iter().enumerate() {
        let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        s.push_str(&cells.join(","));
        if let Some(l) = data.labels() {
            let _ = write!(s, ",{}", l[i]);
        }
        s.push('\n');
    }
    s
}

pub fn tensor_rows_csv(header: &[String], rows: &Tensor) -> String {
    let mut s = header.join(",");
    s.push('\n');
    for r in rows.row_iter() {
        let cells: Vec<String> = r.iter().map(|v| v.to_string()).collect();
        s.push_str(&cells.join(","));
        s.push('\n');
    }
    s
}
