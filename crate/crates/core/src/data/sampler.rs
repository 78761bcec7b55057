use rand::seq::SliceRandom;

use super::{MultiDomainDataset, Sample, SplitSpec};
use crate::error::{Error, Result};
use crate::rng::Rng;

/// A labeled minibatch and its unlabeled companion.
#[derive(Debug, Clone)]
pub struct MixedBatch<'a> {
    pub labeled: Vec<&'a Sample>,
    pub unlabeled: Vec<&'a Sample>,
}

/// Per-domain pool that hands out samples in shuffled passes, reshuffling
/// when exhausted.
#[derive(Debug, Clone)]
struct Pool {
    indices: Vec<usize>,
    cursor: usize,
}

impl Pool {
    fn take(&mut self, k: usize, rng: &mut Rng, out: &mut Vec<usize>) {
        for _ in 0..k {
            if self.cursor == 0 {
                self.indices.shuffle(rng);
            }
            out.push(self.indices[self.cursor]);
            self.cursor = (self.cursor + 1) % self.indices.len();
        }
    }
}

/// Draws domain-stratified batches from one split: each labeled batch holds
/// `batch_size / |sources|` samples of every source domain, each unlabeled
/// batch `mu * batch_size / |sources|`.
#[derive(Debug, Clone)]
pub struct StratifiedSampler<'a> {
    ds: &'a MultiDomainDataset,
    batch_size: usize,
    mu: usize,
    labeled: Vec<Pool>,
    unlabeled: Vec<Pool>,
}

impl<'a> StratifiedSampler<'a> {
    pub fn new(ds: &'a MultiDomainDataset, split: &SplitSpec, batch_size: usize, mu: usize) -> Result<Self> {
        let n_src = split.source_domains.len();
        if n_src == 0 {
            return Err(Error::Config("split has no source domains".into()));
        }
        if batch_size == 0 || mu == 0 {
            return Err(Error::Config("batch_size and mu must be positive".into()));
        }
        if !batch_size.is_multiple_of(n_src) {
            return Err(Error::Config(format!(
                "batch_size {batch_size} is not divisible by the number of source domains {n_src}"
            )));
        }
        let mut labeled = Vec::with_capacity(n_src);
        let mut unlabeled = Vec::with_capacity(n_src);
        for &d in &split.source_domains {
            let mut l = Vec::new();
            let mut u = Vec::new();
            for (i, s) in ds.samples().iter().enumerate() {
                if s.domain_id != d {
                    continue;
                }
                if split.labeled_ids.contains(&s.sample_id) {
                    l.push(i);
                } else if split.unlabeled_ids.contains(&s.sample_id) {
                    u.push(i);
                }
            }
            if l.is_empty() || u.is_empty() {
                return Err(Error::Data(format!("source domain {d} has no labeled or no unlabeled samples")));
            }
            labeled.push(Pool { indices: l, cursor: 0 });
            unlabeled.push(Pool { indices: u, cursor: 0 });
        }
        Ok(Self { ds, batch_size, mu, labeled, unlabeled })
    }

    pub fn next_batch(&mut self, rng: &mut Rng) -> MixedBatch<'a> {
        let per_domain = self.batch_size / self.labeled.len();
        let mut li = Vec::with_capacity(self.batch_size);
        let mut ui = Vec::with_capacity(self.batch_size * self.mu);
        for pool in &mut self.labeled {
            pool.take(per_domain, rng, &mut li);
        }
        for pool in &mut self.unlabeled {
            pool.take(per_domain * self.mu, rng, &mut ui);
        }
        let samples = self.ds.samples();
        MixedBatch {
            labeled: li.into_iter().map(|i| &samples[i]).collect(),
            unlabeled: ui.into_iter().map(|i| &samples[i]).collect(),
        }
    }
}

/// Draws a single stratified (labeled, unlabeled) batch pair.
pub fn mixed_domain_batch<'a>(
    ds: &'a MultiDomainDataset,
    split: &SplitSpec,
    batch_size: usize,
    mu: usize,
    rng: &mut Rng,
) -> Result<MixedBatch<'a>> {
    Ok(StratifiedSampler::new(ds, split, batch_size, mu)?.next_batch(rng))
}
