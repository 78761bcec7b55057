use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{MultiDomainDataset, SampleId};
use crate::error::{Error, Result};
use crate::rng::{self, streams};

/// One leave-one-domain-out configuration: the held-out target, the source
/// domains, and the labeled/unlabeled partition of source samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub target_domain: usize,
    pub source_domains: BTreeSet<usize>,
    pub n_labels: usize,
    pub labeled_ids: BTreeSet<SampleId>,
    pub unlabeled_ids: BTreeSet<SampleId>,
}

impl SplitSpec {
    pub fn is_source(&self, domain: usize) -> bool {
        self.source_domains.contains(&domain)
    }
}

/// One split per target domain. See [`split_for_target`].
pub fn leave_one_domain_out_splits(ds: &MultiDomainDataset, n_labels: usize, seed: u64) -> Result<Vec<SplitSpec>> {
    if ds.num_domains() < 2 {
        return Err(Error::Data(format!(
            "leave-one-domain-out needs at least 2 domains, dataset has {}",
            ds.num_domains()
        )));
    }
    (0..ds.num_domains()).map(|t| split_for_target(ds, t, n_labels, seed)).collect()
}

/// Builds the split holding out `target`.
///
/// For each source (domain, class) pair the pair's sample ids are taken in
/// dataset order, shuffled with the stream
/// `(seed, LABEL_BUDGET << 40 | domain << 20 | class)` and the first
/// `n_labels` become labeled. The labeled set of a domain is therefore the
/// same in every split where that domain is a source.
pub fn split_for_target(ds: &MultiDomainDataset, target: usize, n_labels: usize, seed: u64) -> Result<SplitSpec> {
    if ds.num_domains() < 2 {
        return Err(Error::Data("a split needs at least 2 domains".into()));
    }
    if target >= ds.num_domains() {
        return Err(Error::Data(format!("target domain {target} out of range (D={})", ds.num_domains())));
    }
    let source_domains: BTreeSet<usize> = (0..ds.num_domains()).filter(|&d| d != target).collect();
    let mut labeled_ids = BTreeSet::new();
    let mut unlabeled_ids = BTreeSet::new();
    for &d in &source_domains {
        for c in 0..ds.num_classes() {
            let mut ids: Vec<SampleId> =
                ds.samples().iter().filter(|s| s.domain_id == d && s.class_id == c).map(|s| s.sample_id).collect();
            if ids.len() < n_labels {
                return Err(Error::Data(format!(
                    "(domain {d}, class {c}) has {} samples, fewer than the label budget {n_labels}",
                    ids.len()
                )));
            }
            let stream = (streams::LABEL_BUDGET << 40) | ((d as u64) << 20) | c as u64;
            ids.shuffle(&mut rng::stream(seed, stream));
            labeled_ids.extend(&ids[..n_labels]);
            unlabeled_ids.extend(&ids[n_labels..]);
        }
    }
    Ok(SplitSpec { target_domain: target, source_domains, n_labels, labeled_ids, unlabeled_ids })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_generate, SyntheticConfig};

    fn dataset(d: usize, c: usize, per: usize) -> MultiDomainDataset {
        let mut cfg = SyntheticConfig::benchmark(5);
        cfg.num_domains = d;
        cfg.num_classes = c;
        cfg.samples_per_domain_class = per;
        synth_generate(&cfg).unwrap()
    }

    #[test]
    fn four_domains_give_four_splits_with_three_sources() {
        let ds = dataset(4, 5, 20);
        let splits = leave_one_domain_out_splits(&ds, 5, 0).unwrap();
        assert_eq!(splits.len(), 4);
        for (t, s) in splits.iter().enumerate() {
            assert_eq!(s.target_domain, t);
            assert_eq!(s.source_domains.len(), 3);
            assert!(!s.source_domains.contains(&t));
        }
    }

    #[test]
    fn two_domains_give_single_source() {
        let ds = dataset(2, 3, 10);
        let splits = leave_one_domain_out_splits(&ds, 2, 0).unwrap();
        assert_eq!(splits.len(), 2);
        assert!(splits.iter().all(|s| s.source_domains.len() == 1));
    }

    #[test]
    fn label_budget_counts() {
        let ds = dataset(4, 10, 12);
        for s in leave_one_domain_out_splits(&ds, 10, 3).unwrap() {
            assert_eq!(s.labeled_ids.len(), 300);
        }
    }

    #[test]
    fn partition_covers_sources_only() {
        let ds = dataset(3, 4, 15);
        let idx = ds.index();
        for s in leave_one_domain_out_splits(&ds, 4, 9).unwrap() {
            assert!(s.labeled_ids.is_disjoint(&s.unlabeled_ids));
            let all: BTreeSet<SampleId> = s.labeled_ids.union(&s.unlabeled_ids).copied().collect();
            let expected: BTreeSet<SampleId> =
                ds.samples().iter().filter(|x| x.domain_id != s.target_domain).map(|x| x.sample_id).collect();
            assert_eq!(all, expected);
            for id in &s.labeled_ids {
                assert!(s.is_source(ds.samples()[idx[id]].domain_id));
            }
        }
    }

    #[test]
    fn insufficient_samples_name_the_pair() {
        let ds = dataset(3, 2, 4);
        let err = leave_one_domain_out_splits(&ds, 5, 0).unwrap_err();
        let msg = err.to_string();
        assert!(matches!(err, Error::Data(_)));
        assert!(msg.contains("domain 1, class 0"), "{msg}");
    }

    #[test]
    fn single_domain_is_rejected() {
        let ds = dataset(1, 2, 4);
        assert!(leave_one_domain_out_splits(&ds, 1, 0).is_err());
    }

    #[test]
    fn labeled_choice_is_seeded() {
        let ds = dataset(3, 3, 30);
        let a = leave_one_domain_out_splits(&ds, 5, 11).unwrap();
        let b = leave_one_domain_out_splits(&ds, 5, 11).unwrap();
        let c = leave_one_domain_out_splits(&ds, 5, 12).unwrap();
        assert_eq!(a, b);
        assert_ne!(a[0].labeled_ids, c[0].labeled_ids);
    }
}
