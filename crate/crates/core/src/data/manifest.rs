use std::collections::HashSet;
use std::fs::File;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::DataError;
use crate::model::TASK_NAMES;
use crate::tensor::NdArray;

pub const NUM_TASKS: usize = TASK_NAMES.len();

/// One wound image with its patient and five binary labels in
/// `[deep, infected, arterial, venous, pressure]` order.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WoundSample {
    pub image_id: String,
    pub patient_id: String,
    pub image_path: String,
    pub labels: [u8; NUM_TASKS],
}

impl WoundSample {
    pub fn stratum(&self) -> u8 {
        self.labels.iter().enumerate().fold(0, |acc, (i, &l)| acc | (l << i))
    }
}

/// Ordered list of samples. Relative image paths resolve against `root`
/// (the directory of the manifest file).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DatasetManifest {
    pub samples: Vec<WoundSample>,
    pub root: PathBuf,
}

const HEADER: [&str; 8] = [
    "image_id",
    "patient_id",
    "image_path",
    "deep",
    "infected",
    "arterial",
    "venous",
    "pressure",
];

impl DatasetManifest {
    pub fn new(samples: Vec<WoundSample>, root: impl Into<PathBuf>) -> Result<Self, DataError> {
        let m = DatasetManifest {
            samples,
            root: root.into(),
        };
        m.validate()?;
        Ok(m)
    }

    fn validate(&self) -> Result<(), DataError> {
        let mut seen = HashSet::new();
        for (i, s) in self.samples.iter().enumerate() {
            if !seen.insert(s.image_id.as_str()) {
                return Err(DataError::DuplicateImage {
                    row: i + 1,
                    image_id: s.image_id.clone(),
                });
            }
            if s.patient_id.is_empty() {
                return Err(DataError::EmptyPatient { row: i + 1 });
            }
            if let Some(t) = s.labels.iter().position(|&l| l > 1) {
                return Err(DataError::InvalidLabel {
                    row: i + 1,
                    column: TASK_NAMES[t].to_string(),
                    value: s.labels[t].to_string(),
                });
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn task_names(&self) -> Vec<String> {
        TASK_NAMES.iter().map(|s| s.to_string()).collect()
    }

    /// Number of positive images per task.
    pub fn positive_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; NUM_TASKS];
        for s in &self.samples {
            for (c, &l) in counts.iter_mut().zip(&s.labels) {
                *c += l as usize;
            }
        }
        counts
    }

    pub fn patient_count(&self) -> usize {
        self.samples
            .iter()
            .map(|s| s.patient_id.as_str())
            .collect::<HashSet<_>>()
            .len()
    }

    pub fn image_location(&self, sample: &WoundSample) -> PathBuf {
        self.root.join(&sample.image_path)
    }

    /// Keeps the samples at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> DatasetManifest {
        DatasetManifest {
            samples: indices.iter().map(|&i| self.samples[i].clone()).collect(),
            root: self.root.clone(),
        }
    }

    /// `[len(indices), 5]` label matrix.
    pub fn labels_array(&self, indices: &[usize]) -> NdArray {
        let data = indices
            .iter()
            .flat_map(|&i| self.samples[i].labels.iter().map(|&l| l as f64))
            .collect();
        NdArray::from_parts(vec![indices.len(), NUM_TASKS], data)
    }

    /// Reads and validates a manifest CSV.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, DataError> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| DataError::io(path, e))?;
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
        let headers = rdr.headers()?.clone();
        let mut cols = [0usize; 8];
        for (slot, name) in cols.iter_mut().zip(HEADER) {
            *slot = headers
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| DataError::MissingColumn(name.to_string()))?;
        }
        let mut samples = Vec::new();
        let mut seen = HashSet::new();
        for (i, record) in rdr.records().enumerate() {
            let record = record?;
            let row = i + 1;
            let field = |c: usize| record.get(cols[c]).unwrap_or("").to_string();
            let mut labels = [0u8; NUM_TASKS];
            for (t, label) in labels.iter_mut().enumerate() {
                let raw = field(3 + t);
                *label = match raw.as_str() {
                    "0" => 0,
                    "1" => 1,
                    _ => {
                        return Err(DataError::InvalidLabel {
                            row,
                            column: TASK_NAMES[t].to_string(),
                            value: raw,
                        })
                    }
                };
            }
            let image_id = field(0);
            if !seen.insert(image_id.clone()) {
                return Err(DataError::DuplicateImage { row, image_id });
            }
            let patient_id = field(1);
            if patient_id.is_empty() {
                return Err(DataError::EmptyPatient { row });
            }
            samples.push(WoundSample {
                image_id,
                patient_id,
                image_path: field(2),
                labels,
            });
        }
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(DatasetManifest { samples, root })
    }

    /// Writes the manifest CSV. With `absolute_paths`, image paths are
    /// resolved against `root` so the file can live anywhere.
    pub fn save(&self, path: impl AsRef<Path>, absolute_paths: bool) -> Result<(), DataError> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| DataError::io(path, e))?;
        let mut w = csv::Writer::from_writer(file);
        w.write_record(HEADER)?;
        for s in &self.samples {
            let image_path = if absolute_paths {
                let p = self.image_location(s);
                std::path::absolute(&p).unwrap_or(p).to_string_lossy().into_owned()
            } else {
                s.image_path.clone()
            };
            let mut rec = vec![s.image_id.clone(), s.patient_id.clone(), image_path];
            rec.extend(s.labels.iter().map(|l| l.to_string()));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| DataError::io(path, e))?;
        Ok(())
    }
}
