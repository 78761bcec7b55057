//! Dataset file format (text, UTF-8, `\n` line endings):
//!
//! ```text
//! FIXCLR-DATASET 1
//! {"num_domains":D,"num_classes":C,"feature_dim":F,"seed":S|null,"provenance":{...}}
//! sample_id,domain_id,class_id,f0,f1,...,f{F-1}
//! <one row per sample, in dataset order>
//! ```
//!
//! Feature values are written with Rust's shortest round-trip `f64`
//! formatting, so reading a file back reproduces every value bit for bit.

use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{MultiDomainDataset, Provenance, Sample};
use crate::error::{Error, Result};

pub const DATASET_MAGIC: &str = "FIXCLR-DATASET 1";

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    num_domains: usize,
    num_classes: usize,
    feature_dim: usize,
    seed: Option<u64>,
    provenance: Provenance,
}

pub fn write_dataset(ds: &MultiDomainDataset, path: &Path) -> Result<()> {
    let seed = match ds.provenance() {
        Provenance::Synthetic { seed, .. } => Some(*seed),
        Provenance::External { .. } => None,
    };
    let header = Header {
        num_domains: ds.num_domains(),
        num_classes: ds.num_classes(),
        feature_dim: ds.feature_dim(),
        seed,
        provenance: ds.provenance().clone(),
    };
    let mut out = String::new();
    out.push_str(DATASET_MAGIC);
    out.push('\n');
    out.push_str(&serde_json::to_string(&header).expect("header serializes"));
    out.push('\n');
    out.push_str("sample_id,domain_id,class_id");
    for k in 0..ds.feature_dim() {
        write!(out, ",f{k}").unwrap();
    }
    out.push('\n');
    for s in ds.samples() {
        write!(out, "{},{},{}", s.sample_id, s.domain_id, s.class_id).unwrap();
        for v in &s.features {
            write!(out, ",{v:?}").unwrap();
        }
        out.push('\n');
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
}

pub fn read_dataset(path: &Path) -> Result<MultiDomainDataset> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(f).lines();
    let mut next = |what: &str| -> Result<String> {
        match lines.next() {
            Some(Ok(l)) => Ok(l),
            Some(Err(e)) => Err(Error::io(path, e)),
            None => Err(Error::Data(format!("{}: missing {what}", path.display()))),
        }
    };
    let magic = next("magic line")?;
    if magic.trim_end() != DATASET_MAGIC {
        return Err(Error::Data(format!("{}: not a dataset file (bad magic {magic:?})", path.display())));
    }
    let header: Header = serde_json::from_str(&next("header")?)
        .map_err(|e| Error::Data(format!("{}: bad header: {e}", path.display())))?;
    let columns = next("column line")?;
    if columns.split(',').count() != 3 + header.feature_dim {
        return Err(Error::Data(format!("{}: column line does not match feature_dim", path.display())));
    }
    let mut samples = Vec::new();
    for (row, line) in lines.enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.is_empty() {
            continue;
        }
        let bad = |what: &str| Error::Data(format!("{}: row {}: {what}", path.display(), row + 1));
        let mut fields = line.split(',');
        let mut int = |name: &str| -> Result<u64> {
            fields.next().ok_or_else(|| bad(&format!("missing {name}")))?.parse().map_err(|_| bad(&format!("bad {name}")))
        };
        let sample_id = int("sample_id")?;
        let domain_id = int("domain_id")? as usize;
        let class_id = int("class_id")? as usize;
        let features = fields.map(|v| v.parse::<f64>().map_err(|_| bad("bad feature value"))).collect::<Result<Vec<_>>>()?;
        samples.push(Sample { sample_id, domain_id, class_id, features });
    }
    MultiDomainDataset::new(samples, header.num_domains, header.num_classes, header.feature_dim, header.provenance)
}
