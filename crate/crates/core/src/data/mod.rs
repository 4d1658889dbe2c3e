//! Image ingestion (PGM/PPM), dataset directories, train/test splits and a
//! seeded synthetic vessel generator.
//!
//! A dataset directory holds `images/<id>.pgm|ppm`, `masks/<id>.pgm` and
//! `fov/<id>.pgm`; ids sorted lexicographically define split order.

mod pnm;
mod synth;

use std::collections::BTreeSet;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use crate::engine::{Shape, Tensor};

pub use pnm::{decode, encode, quantize, PnmError};
pub use synth::{fov_disc, generate_dataset, generate_synthetic, SynthConfig};

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: {source}")]
    Format { path: PathBuf, source: PnmError },
    #[error("invalid synthetic config: {0}")]
    InvalidConfig(String),
    #[error("record {id}: {reason}")]
    InvalidRecord { id: String, reason: String },
    #[error("dataset {0} contains no images")]
    EmptyDataset(PathBuf),
    #[error("n_train {n_train} must be smaller than the record count {count}")]
    SplitTooLarge { n_train: usize, count: usize },
    #[error("duplicate record id {0}")]
    DuplicateId(String),
}

impl DataError {
    fn io(path: &Path, source: io::Error) -> Self {
        DataError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

/// One image with its vessel annotation and field-of-view mask.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleRecord {
    pub id: String,
    /// `1xCxHxW`, values in [0,1].
    pub image: Tensor,
    /// `1x1xHxW`, binary, contained in the FOV.
    pub vessel_mask: Tensor,
    /// `1x1xHxW`, binary.
    pub fov_mask: Tensor,
}

impl SampleRecord {
    pub fn validate(&self) -> Result<(), DataError> {
        let bad = |reason: String| {
            Err(DataError::InvalidRecord {
                id: self.id.clone(),
                reason,
            })
        };
        let s = self.image.shape();
        let mask_shape = Shape::new(1, 1, s.h, s.w);
        if s.n != 1 {
            return bad(format!("image batch dimension is {}", s.n));
        }
        if self.vessel_mask.shape() != mask_shape || self.fov_mask.shape() != mask_shape {
            return bad(format!(
                "image {s}, vessel mask {}, fov {}",
                self.vessel_mask.shape(),
                self.fov_mask.shape()
            ));
        }
        if self.image.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
            return bad("image values outside [0,1]".into());
        }
        let binary = |t: &Tensor| t.data().iter().all(|&v| v == 0.0 || v == 1.0);
        if !binary(&self.vessel_mask) || !binary(&self.fov_mask) {
            return bad("masks must be binary".into());
        }
        let escapes = self
            .vessel_mask
            .data()
            .iter()
            .zip(self.fov_mask.data())
            .any(|(&v, &f)| v == 1.0 && f == 0.0);
        if escapes {
            return bad("vessel mask extends outside the field of view".into());
        }
        Ok(())
    }

    pub fn height(&self) -> usize {
        self.image.shape().h
    }

    pub fn width(&self) -> usize {
        self.image.shape().w
    }

    /// Fraction of FOV pixels labelled vessel.
    pub fn vessel_fraction(&self) -> f64 {
        let fov: f64 = self.fov_mask.data().iter().sum();
        let vessel: f64 = self.vessel_mask.data().iter().sum();
        vessel / fov
    }
}

pub fn read_image(path: &Path) -> Result<Tensor, DataError> {
    let bytes = fs::read(path).map_err(|e| DataError::io(path, e))?;
    pnm::decode(&bytes).map_err(|source| DataError::Format {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_image(tensor: &Tensor, path: &Path) -> Result<(), DataError> {
    let bytes = pnm::encode(tensor).map_err(|source| DataError::Format {
        path: path.to_path_buf(),
        source,
    })?;
    fs::write(path, bytes).map_err(|e| DataError::io(path, e))
}

fn image_extension(t: &Tensor) -> &'static str {
    if t.shape().c == 3 {
        "ppm"
    } else {
        "pgm"
    }
}

/// Writes records into the dataset directory layout, creating it as needed.
pub fn write_dataset(dir: &Path, records: &[SampleRecord]) -> Result<(), DataError> {
    for sub in ["images", "masks", "fov"] {
        let p = dir.join(sub);
        fs::create_dir_all(&p).map_err(|e| DataError::io(&p, e))?;
    }
    for r in records {
        r.validate()?;
        let ext = image_extension(&r.image);
        write_image(
            &r.image,
            &dir.join("images").join(format!("{}.{ext}", r.id)),
        )?;
        write_image(
            &r.vessel_mask,
            &dir.join("masks").join(format!("{}.pgm", r.id)),
        )?;
        write_image(&r.fov_mask, &dir.join("fov").join(format!("{}.pgm", r.id)))?;
    }
    Ok(())
}

/// Loads every record of a dataset directory, sorted by id.
pub fn load_dataset(dir: &Path) -> Result<Vec<SampleRecord>, DataError> {
    let images = dir.join("images");
    let entries = fs::read_dir(&images).map_err(|e| DataError::io(&images, e))?;
    let mut found: Vec<(String, PathBuf)> = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| DataError::io(&images, e))?.path();
        let ext = path.extension().and_then(|e| e.to_str());
        if !matches!(ext, Some("pgm" | "ppm")) {
            continue;
        }
        let Some(id) = path.file_stem().and_then(|s| s.to_str()) else {
            continue;
        };
        found.push((id.to_string(), path));
    }
    if found.is_empty() {
        return Err(DataError::EmptyDataset(dir.to_path_buf()));
    }
    found.sort();
    let mut seen = BTreeSet::new();
    let mut records = Vec::with_capacity(found.len());
    for (id, path) in found {
        if !seen.insert(id.clone()) {
            return Err(DataError::DuplicateId(id));
        }
        let record = SampleRecord {
            image: read_image(&path)?,
            vessel_mask: read_image(&dir.join("masks").join(format!("{id}.pgm")))?,
            fov_mask: read_image(&dir.join("fov").join(format!("{id}.pgm")))?,
            id,
        };
        record.validate()?;
        records.push(record);
    }
    Ok(records)
}

/// Records split into training and test lists by id order.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    pub train: Vec<SampleRecord>,
    pub test: Vec<SampleRecord>,
}

/// The first `n_train` records by id train, the rest test.
pub fn make_split(
    mut records: Vec<SampleRecord>,
    n_train: usize,
) -> Result<DatasetSplit, DataError> {
    if n_train >= records.len() {
        return Err(DataError::SplitTooLarge {
            n_train,
            count: records.len(),
        });
    }
    records.sort_by(|a, b| a.id.cmp(&b.id));
    if let Some(w) = records.windows(2).find(|w| w[0].id == w[1].id) {
        return Err(DataError::DuplicateId(w[0].id.clone()));
    }
    let test = records.split_off(n_train);
    Ok(DatasetSplit {
        train: records,
        test,
    })
}
