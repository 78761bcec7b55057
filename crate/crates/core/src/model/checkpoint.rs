//! Checkpoint file format:
//!
//! ```text
//! FIXCLR-CHECKPOINT 1
//! {"model":{...},"seed":S,"epoch":E,"param_count":N,"init":"fan_in_uniform","has_optimizer_state":bool}
//! <N parameter values, one per line, in Model::tensors() order>
//! <N momentum values, one per line, only when has_optimizer_state>
//! ```
//!
//! `epoch` is the number of completed epochs. Values use shortest
//! round-trip `f64` formatting.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{InitScheme, Model, ModelConfig};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &str = "FIXCLR-CHECKPOINT 1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointHeader {
    pub model: ModelConfig,
    pub seed: u64,
    pub epoch: usize,
    pub param_count: usize,
    pub init: InitScheme,
    pub has_optimizer_state: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub params: Vec<f64>,
    pub momentum: Option<Vec<f64>>,
}

impl Checkpoint {
    pub fn new(model: &Model, seed: u64, epoch: usize, momentum: Option<&Model>) -> Self {
        Self {
            header: CheckpointHeader {
                model: model.config().clone(),
                seed,
                epoch,
                param_count: model.param_count(),
                init: model.config().init,
                has_optimizer_state: momentum.is_some(),
            },
            params: model.flat_params(),
            momentum: momentum.map(Model::flat_params),
        }
    }

    pub fn model(&self) -> Result<Model> {
        let mut m = Model::new(self.header.model.clone(), self.header.seed)?;
        m.set_flat_params(&self.params)?;
        Ok(m)
    }

    pub fn momentum(&self) -> Result<Option<Model>> {
        let Some(values) = &self.momentum else { return Ok(None) };
        let mut m = self.model()?.zeros_like();
        m.set_flat_params(values)?;
        Ok(Some(m))
    }
}

pub fn write_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    let mut out = String::with_capacity(24 * ckpt.params.len());
    out.push_str(CHECKPOINT_MAGIC);
    out.push('\n');
    out.push_str(&serde_json::to_string(&ckpt.header).expect("header serializes"));
    out.push('\n');
    for v in ckpt.params.iter().chain(ckpt.momentum.iter().flatten()) {
        writeln!(out, "{v:?}").unwrap();
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let bad = |m: String| Error::Data(format!("{}: {m}", path.display()));
    let mut lines = text.lines();
    if lines.next() != Some(CHECKPOINT_MAGIC) {
        return Err(bad("not a checkpoint file".into()));
    }
    let header: CheckpointHeader =
        serde_json::from_str(lines.next().ok_or_else(|| bad("missing header".into()))?)
            .map_err(|e| bad(format!("bad header: {e}")))?;
    let values = lines
        .filter(|l| !l.is_empty())
        .map(|l| l.parse::<f64>().map_err(|_| bad(format!("bad value {l:?}"))))
        .collect::<Result<Vec<_>>>()?;
    let n = header.param_count;
    let expected = if header.has_optimizer_state { 2 * n } else { n };
    if values.len() != expected {
        return Err(bad(format!("expected {expected} values, found {}", values.len())));
    }
    let (params, rest) = values.split_at(n);
    let momentum = header.has_optimizer_state.then(|| rest.to_vec());
    let ckpt = Checkpoint { header, params: params.to_vec(), momentum };
    ckpt.model()?;
    Ok(ckpt)
}
