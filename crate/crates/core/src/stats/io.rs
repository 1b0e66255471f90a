//! Probability and rater-answer CSV files.

use std::collections::BTreeMap;
use std::fs::File;
use std::path::Path;

use super::StatsError;
use crate::data::NUM_TASKS;
use crate::model::TASK_NAMES;

fn io_err(path: &Path, e: std::io::Error) -> StatsError {
    StatsError::Io(format!("{}: {e}", path.display()))
}

fn column_positions(headers: &csv::StringRecord, path: &Path) -> Result<[usize; 1 + NUM_TASKS], StatsError> {
    let mut cols = [0usize; 1 + NUM_TASKS];
    for (slot, name) in cols.iter_mut().zip(std::iter::once("image_id").chain(TASK_NAMES)) {
        *slot = headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| StatsError::Format(format!("{}: missing column `{name}`", path.display())))?;
    }
    Ok(cols)
}

/// Per-image positive probabilities, one column per task.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ProbabilityTable {
    pub rows: Vec<(String, [f64; NUM_TASKS])>,
}

impl ProbabilityTable {
    pub fn get(&self, image_id: &str) -> Option<&[f64; NUM_TASKS]> {
        self.rows.iter().find(|(id, _)| id == image_id).map(|(_, p)| p)
    }

    pub fn index(&self) -> BTreeMap<&str, &[f64; NUM_TASKS]> {
        self.rows.iter().map(|(id, p)| (id.as_str(), p)).collect()
    }

    /// Writes shortest round-trip decimal forms, so reading back is exact.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), StatsError> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_writer(File::create(path).map_err(|e| io_err(path, e))?);
        w.write_record(std::iter::once("image_id").chain(TASK_NAMES))?;
        for (id, p) in &self.rows {
            let mut rec = vec![id.clone()];
            rec.extend(p.iter().map(|v| format!("{v:?}")));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| io_err(path, e))?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, StatsError> {
        let path = path.as_ref();
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(File::open(path).map_err(|e| io_err(path, e))?);
        let cols = column_positions(rdr.headers()?, path)?;
        let mut rows = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let mut p = [0.0; NUM_TASKS];
            for (t, v) in p.iter_mut().enumerate() {
                let raw = rec.get(cols[1 + t]).unwrap_or("");
                *v = raw
                    .parse::<f64>()
                    .ok()
                    .filter(|v| (0.0..=1.0).contains(v))
                    .ok_or_else(|| {
                        StatsError::Format(format!("{} row {}: bad probability `{raw}`", path.display(), i + 1))
                    })?;
            }
            rows.push((rec.get(cols[0]).unwrap_or("").to_string(), p));
        }
        Ok(ProbabilityTable { rows })
    }
}

/// One rater's binary answers keyed by image_id.
#[derive(Clone, Debug, PartialEq)]
pub struct RaterRecord {
    pub rater_id: String,
    pub answers: BTreeMap<String, [u8; NUM_TASKS]>,
}

impl RaterRecord {
    /// Reads `image_id,deep,infected,arterial,venous,pressure`; the rater id
    /// is the file stem.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, StatsError> {
        let path = path.as_ref();
        let rater_id = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "rater".into());
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(File::open(path).map_err(|e| io_err(path, e))?);
        let cols = column_positions(rdr.headers()?, path)?;
        let mut answers = BTreeMap::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let mut a = [0u8; NUM_TASKS];
            for (t, v) in a.iter_mut().enumerate() {
                *v = match rec.get(cols[1 + t]).unwrap_or("") {
                    "0" => 0,
                    "1" => 1,
                    other => {
                        return Err(StatsError::Format(format!(
                            "{} row {}: column `{}` has `{other}`, expected 0 or 1",
                            path.display(),
                            i + 1,
                            TASK_NAMES[t]
                        )))
                    }
                };
            }
            let id = rec.get(cols[0]).unwrap_or("").to_string();
            if answers.insert(id.clone(), a).is_some() {
                return Err(StatsError::Format(format!(
                    "{}: duplicate image_id `{id}`",
                    path.display()
                )));
            }
        }
        Ok(RaterRecord { rater_id, answers })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), StatsError> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_writer(File::create(path).map_err(|e| io_err(path, e))?);
        w.write_record(std::iter::once("image_id").chain(TASK_NAMES))?;
        for (id, a) in &self.answers {
            let mut rec = vec![id.clone()];
            rec.extend(a.iter().map(u8::to_string));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| io_err(path, e))?;
        Ok(())
    }
}
