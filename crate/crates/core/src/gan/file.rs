//! Model files.
//!
//! ```text
//! 6 bytes  "NDGAN1"
//! u8       kind (1 = GAN, 2 = classifier)
//! u32      K
//! u32      feature layer
//! u8       latent prior (GAN only: 0 standard normal, 1 uniform)
//! u32      fingerprint length, then that many UTF-8 bytes (0 = none)
//! network  generator (GAN only), then discriminator / classifier
//! ```
//!
//! Networks use the block layout of [`crate::nn::codec`]. All integers and
//! floats are little-endian.

use std::fs;
use std::path::Path;

use super::{Classifier, GanModel, ZPrior};
use crate::nn::codec::{read_mlp, write_mlp, Reader, Writer};
use crate::{Error, Result};

pub const MAGIC: &[u8; 6] = b"NDGAN1";
const KIND_GAN: u8 = 1;
const KIND_CLASSIFIER: u8 = 2;

#[derive(Clone, Debug, PartialEq)]
pub enum ModelFile {
    Gan(GanModel),
    Classifier(Classifier),
}

impl ModelFile {
    pub fn kind(&self) -> &'static str {
        match self {
            ModelFile::Gan(_) => "gan",
            ModelFile::Classifier(_) => "classifier",
        }
    }
}

fn write_fingerprint(w: &mut Writer, fp: Option<&str>) {
    let fp = fp.unwrap_or("");
    w.u32(fp.len() as u32);
    w.bytes(fp.as_bytes());
}

fn read_fingerprint(r: &mut Reader<'_>) -> Result<Option<String>> {
    let len = r.u32()? as usize;
    let at = r.offset();
    let raw = r.take(len)?;
    let s = std::str::from_utf8(raw)
        .map_err(|_| Error::ModelFormat(format!("fingerprint at offset {at} is not UTF-8")))?;
    Ok((!s.is_empty()).then(|| s.to_string()))
}

pub fn encode(model: &ModelFile) -> Vec<u8> {
    let mut w = Writer::new();
    w.bytes(MAGIC);
    match model {
        ModelFile::Gan(m) => {
            w.u8(KIND_GAN);
            w.u32(m.num_classes() as u32);
            w.u32(m.feature_layer() as u32);
            w.u8(match m.z_prior() {
                ZPrior::StandardNormal => 0,
                ZPrior::Uniform => 1,
            });
            write_fingerprint(&mut w, m.training_fingerprint());
            write_mlp(&mut w, m.generator());
            write_mlp(&mut w, m.discriminator());
        }
        ModelFile::Classifier(c) => {
            w.u8(KIND_CLASSIFIER);
            w.u32(c.num_classes() as u32);
            w.u32((c.net().specs().len() - 2) as u32);
            write_fingerprint(&mut w, crate::scores::ProbabilisticModel::trained_on(c));
            write_mlp(&mut w, c.net());
        }
    }
    w.into_bytes()
}

pub fn decode(bytes: &[u8]) -> Result<ModelFile> {
    let mut r = Reader::new(bytes);
    let magic = r.take(MAGIC.len())?;
    if magic != MAGIC {
        return Err(Error::ModelFormat(format!(
            "bad magic {:?} at offset 0, expected {:?}",
            String::from_utf8_lossy(magic),
            std::str::from_utf8(MAGIC).expect("ascii")
        )));
    }
    let kind_at = r.offset();
    let model = match r.u8()? {
        KIND_GAN => {
            let k = r.u32()? as usize;
            let feature_layer = r.u32()? as usize;
            let prior_at = r.offset();
            let prior = match r.u8()? {
                0 => ZPrior::StandardNormal,
                1 => ZPrior::Uniform,
                p => {
                    return Err(Error::ModelFormat(format!(
                        "unknown latent prior {p} at offset {prior_at}"
                    )))
                }
            };
            let fp = read_fingerprint(&mut r)?;
            let g = read_mlp(&mut r)?;
            let d = read_mlp(&mut r)?;
            let mut m = GanModel::from_parts(g, d, k, prior)?.with_feature_layer(feature_layer)?;
            m.set_trained_on(fp);
            ModelFile::Gan(m)
        }
        KIND_CLASSIFIER => {
            let k = r.u32()? as usize;
            let _feature_layer = r.u32()?;
            let fp = read_fingerprint(&mut r)?;
            let net = read_mlp(&mut r)?;
            if net.out_dim() != k {
                return Err(Error::ModelFormat(format!(
                    "classifier header says {k} classes, network has {} outputs",
                    net.out_dim()
                )));
            }
            let mut c = Classifier::from_net(net)?;
            c.set_trained_on(fp);
            ModelFile::Classifier(c)
        }
        other => {
            return Err(Error::ModelFormat(format!(
                "unknown model kind {other} at offset {kind_at}"
            )))
        }
    };
    if !r.is_at_end() {
        return Err(Error::ModelFormat(format!(
            "trailing bytes after offset {}",
            r.offset()
        )));
    }
    Ok(model)
}

pub fn load(path: impl AsRef<Path>) -> Result<ModelFile> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes).map_err(|e| match e {
        Error::ModelFormat(m) => Error::ModelFormat(format!("{}: {m}", path.display())),
        other => other,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gan::GanArchitecture;

    #[test]
    fn gan_round_trip_is_bit_exact() {
        let mut m = GanModel::new(&GanArchitecture::toy_2d(3), 7).unwrap();
        m.set_trained_on(Some("abc123".into()));
        let file = ModelFile::Gan(m);
        let bytes = encode(&file);
        assert_eq!(&bytes[..6], b"NDGAN1");
        let back = decode(&bytes).unwrap();
        assert_eq!(back, file);
        assert_eq!(encode(&back), bytes);
    }

    #[test]
    fn classifier_round_trip() {
        let c = Classifier::new(&GanArchitecture::toy_2d(4), 1).unwrap();
        let file = ModelFile::Classifier(c);
        assert_eq!(decode(&encode(&file)).unwrap(), file);
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let bytes = encode(&ModelFile::Gan(
            GanModel::new(&GanArchitecture::toy_2d(2), 1).unwrap(),
        ));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode(&bad).unwrap_err().to_string().contains("bad magic"));
        assert!(decode(&bytes[..bytes.len() - 1])
            .unwrap_err()
            .to_string()
            .contains("truncated"));
        let mut long = bytes.clone();
        long.push(0);
        assert!(decode(&long).unwrap_err().to_string().contains("trailing"));
        let mut kind = bytes;
        kind[6] = 9;
        assert!(decode(&kind).unwrap_err().to_string().contains("offset 6"));
    }
}
