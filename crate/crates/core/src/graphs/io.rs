//! Trial manifests, per-trial CSV files and the `graphs.bin` container.
//!
//! `graphs.bin` layout, all integers and floats little-endian:
//!
//! ```text
//! magic        5 bytes  "SGNN1"
//! parcels      u32      P
//! classes      u32      C
//! count        u32      number of graphs
//! per graph:
//!   label      u8
//!   split      u8       0 = train, 1 = validation, 2 = test
//!   a_plus     P*P f64  row-major
//!   a_minus    P*P f64  row-major
//! ```

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{GraphDataset, SignedGraph, TrialTimeSeries};
use crate::error::{Error, Result};
use crate::labels::Split;
use crate::numerics::DenseMatrix;

pub const GRAPHS_MAGIC: &[u8; 5] = b"SGNN1";

/// One `manifest.json` record. `path` is relative to the manifest's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub trial_id: String,
    pub subject_id: String,
    pub image_id: String,
    pub path: PathBuf,
    pub order: u64,
}

fn read_csv_matrix(path: &Path) -> Result<DenseMatrix<f64>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(|e| Error::format(path.display().to_string(), e.to_string()))?;
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::format(path.display().to_string(), e.to_string()))?;
        let row = record
            .iter()
            .map(|field| {
                field.trim().parse::<f64>().map_err(|e| {
                    Error::format(path.display().to_string(), format!("bad value {field:?}: {e}"))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::format(path.display().to_string(), "non-finite value"));
        }
        rows.push(row);
    }
    DenseMatrix::from_rows(&rows).map_err(|e| Error::format(path.display().to_string(), e.to_string()))
}

/// Loads every trial listed in a `manifest.json`.
pub fn load_trials(manifest: &Path) -> Result<Vec<TrialTimeSeries<f64>>> {
    let entries: Vec<ManifestEntry> = serde_json::from_reader(BufReader::new(File::open(manifest)?))?;
    let base = manifest.parent().unwrap_or_else(|| Path::new("."));
    entries
        .into_iter()
        .map(|e| {
            let data = read_csv_matrix(&base.join(&e.path))?;
            Ok(TrialTimeSeries {
                subject_id: e.subject_id,
                trial_id: e.trial_id,
                image_id: e.image_id,
                order: e.order,
                data,
            })
        })
        .collect()
}

/// Writes trials as `<dir>/trials/<trial_id>.csv` plus `<dir>/manifest.json`.
pub fn write_trials(dir: &Path, trials: &[TrialTimeSeries<f64>]) -> Result<PathBuf> {
    let trial_dir = dir.join("trials");
    fs::create_dir_all(&trial_dir)?;
    let mut entries = Vec::with_capacity(trials.len());
    for trial in trials {
        let rel = PathBuf::from("trials").join(format!("{}.csv", trial.trial_id));
        let mut writer = csv::WriterBuilder::new()
            .has_headers(false)
            .from_path(dir.join(&rel))
            .map_err(|e| Error::format(rel.display().to_string(), e.to_string()))?;
        for i in 0..trial.data.rows() {
            writer
                .write_record(trial.data.row(i).iter().map(|v| format!("{v:?}")))
                .map_err(|e| Error::format(rel.display().to_string(), e.to_string()))?;
        }
        writer.flush()?;
        entries.push(ManifestEntry {
            trial_id: trial.trial_id.clone(),
            subject_id: trial.subject_id.clone(),
            image_id: trial.image_id.clone(),
            path: rel,
            order: trial.order,
        });
    }
    let manifest = dir.join("manifest.json");
    serde_json::to_writer_pretty(BufWriter::new(File::create(&manifest)?), &entries)?;
    Ok(manifest)
}

pub fn write_graphs(path: &Path, dataset: &GraphDataset<f64>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(GRAPHS_MAGIC)?;
    for v in [dataset.num_parcels, dataset.num_classes, dataset.graphs.len()] {
        let v = u32::try_from(v).map_err(|_| Error::invalid("dataset too large for graphs.bin"))?;
        w.write_all(&v.to_le_bytes())?;
    }
    for g in &dataset.graphs {
        let label = u8::try_from(g.label).map_err(|_| Error::invalid("label exceeds u8"))?;
        w.write_all(&[label, g.split.code()])?;
        for v in g.a_plus.data().iter().chain(g.a_minus.data()) {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_f64s(r: &mut impl Read, n: usize) -> Result<Vec<f64>> {
    let mut bytes = vec![0u8; n * 8];
    r.read_exact(&mut bytes)?;
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

/// Reads `graphs.bin`. Image ids and subject ids are not stored in the file.
pub fn read_graphs(path: &Path) -> Result<GraphDataset<f64>> {
    let what = || path.display().to_string();
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 5];
    r.read_exact(&mut magic)?;
    if &magic != GRAPHS_MAGIC {
        return Err(Error::format(what(), "bad magic"));
    }
    let p = read_u32(&mut r)? as usize;
    let c = read_u32(&mut r)? as usize;
    let count = read_u32(&mut r)? as usize;
    let mut graphs = Vec::with_capacity(count);
    for idx in 0..count {
        let mut head = [0u8; 2];
        r.read_exact(&mut head)?;
        let split = Split::from_code(head[1])
            .ok_or_else(|| Error::format(what(), format!("graph {idx}: bad split code {}", head[1])))?;
        let a_plus = DenseMatrix::new(p, p, read_f64s(&mut r, p * p)?)?;
        let a_minus = DenseMatrix::new(p, p, read_f64s(&mut r, p * p)?)?;
        graphs.push(SignedGraph {
            a_plus,
            a_minus,
            label: head[0] as usize,
            split,
            image_ids: Vec::new(),
            subject_id: String::new(),
        });
    }
    let mut rest = Vec::new();
    r.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(Error::format(what(), format!("{} trailing bytes", rest.len())));
    }
    GraphDataset::new(graphs, p, c).map_err(|e| Error::format(what(), e.to_string()))
}
