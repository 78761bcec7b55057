//! Embedding dumps for external visualization.
//!
//! CSV with header
//! `sample_id,domain_id,class_id,pseudo_label,z0,...,z{P-1}`; `pseudo_label`
//! is `-1` when the model's confidence is below the threshold (or no
//! threshold was given). Coordinates use shortest round-trip formatting.

use std::fmt::Write as _;
use std::path::Path;

use crate::data::Sample;
use crate::error::{Error, Result};
use crate::model::{rows_to_array, Model};
use crate::pseudo_label::{argmax, softmax};

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingRow {
    pub sample_id: u64,
    pub domain_id: usize,
    pub class_id: usize,
    pub pseudo_label: i64,
    pub coords: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EmbeddingDump {
    pub rows: Vec<EmbeddingRow>,
}

impl EmbeddingDump {
    pub fn dim(&self) -> usize {
        self.rows.first().map_or(0, |r| r.coords.len())
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("sample_id,domain_id,class_id,pseudo_label");
        for k in 0..self.dim() {
            write!(out, ",z{k}").unwrap();
        }
        out.push('\n');
        for r in &self.rows {
            write!(out, "{},{},{},{}", r.sample_id, r.domain_id, r.class_id, r.pseudo_label).unwrap();
            for v in &r.coords {
                write!(out, ",{v:?}").unwrap();
            }
            out.push('\n');
        }
        out
    }
}

/// Projected embeddings of `samples` (un-augmented), in order.
pub fn embedding_dump(model: &Model, samples: &[&Sample], threshold: Option<f64>) -> Result<EmbeddingDump> {
    if samples.is_empty() {
        return Ok(EmbeddingDump::default());
    }
    let x = rows_to_array(&samples.iter().map(|s| s.features.clone()).collect::<Vec<_>>(), model.config().input_dim)?;
    let f = model.forward_batch(&x)?;
    let rows = samples
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let p = softmax(f.logits.row(i).as_slice().expect("contiguous"));
            let k = argmax(&p);
            let pseudo_label = match threshold {
                Some(t) if p[k] >= t => k as i64,
                _ => -1,
            };
            EmbeddingRow {
                sample_id: s.sample_id,
                domain_id: s.domain_id,
                class_id: s.class_id,
                pseudo_label,
                coords: f.projected.row(i).to_vec(),
            }
        })
        .collect();
    Ok(EmbeddingDump { rows })
}

pub fn export_embeddings(model: &Model, samples: &[&Sample], threshold: Option<f64>, path: &Path) -> Result<EmbeddingDump> {
    let dump = embedding_dump(model, samples, threshold)?;
    std::fs::write(path, dump.to_csv()).map_err(|e| Error::io(path, e))?;
    Ok(dump)
}

pub fn read_embeddings(path: &Path) -> Result<EmbeddingDump> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let bad = |m: &str| Error::Data(format!("{}: {m}", path.display()));
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| bad("empty file"))?;
    if !header.starts_with("sample_id,domain_id,class_id,pseudo_label") {
        return Err(bad("unexpected header"));
    }
    let dim = header.split(',').count() - 4;
    let mut rows = Vec::new();
    for line in lines.filter(|l| !l.is_empty()) {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != dim + 4 {
            return Err(bad("row has the wrong number of columns"));
        }
        let num = |i: usize| f[i].parse::<i64>().map_err(|_| bad("bad integer field"));
        rows.push(EmbeddingRow {
            sample_id: num(0)? as u64,
            domain_id: num(1)? as usize,
            class_id: num(2)? as usize,
            pseudo_label: num(3)?,
            coords: f[4..].iter().map(|v| v.parse::<f64>().map_err(|_| bad("bad coordinate"))).collect::<Result<_>>()?,
        });
    }
    Ok(EmbeddingDump { rows })
}
