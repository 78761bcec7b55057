//! Cross-validated domain probe: how well can the domain id be predicted
//! from the embeddings? Lower is more domain-invariant; a balanced dump
//! with no domain information scores about `1 / D`.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::EmbeddingDump;
use crate::error::{Error, Result};
use crate::pseudo_label::argmax;
use crate::rng::{self, streams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ProbeKind {
    /// Multinomial logistic regression on standardized coordinates.
    #[default]
    Linear,
    /// Nearest domain centroid (Euclidean).
    Centroid,
}

const L2: f64 = 1e-4;
const MAX_ITERS: usize = 400;
const STEP: f64 = 0.5;
const GRAD_TOL: f64 = 1e-6;

/// Mean accuracy over `folds` domain-stratified folds. Fold assignment is
/// seeded by `seed`.
pub fn domain_probe_accuracy(dump: &EmbeddingDump, folds: usize, kind: ProbeKind, seed: u64) -> Result<f64> {
    let mut domains: Vec<usize> = dump.rows.iter().map(|r| r.domain_id).collect();
    domains.sort_unstable();
    domains.dedup();
    if domains.len() < 2 {
        return Err(Error::Domain("domain probe needs at least 2 domains".into()));
    }
    if folds < 2 {
        return Err(Error::Domain("domain probe needs at least 2 folds".into()));
    }
    if dump.rows.len() < folds * domains.len() {
        return Err(Error::Domain(format!(
            "domain probe needs at least {} rows for {folds} folds, got {}",
            folds * domains.len(),
            dump.rows.len()
        )));
    }
    let labels: Vec<usize> = dump.rows.iter().map(|r| domains.binary_search(&r.domain_id).unwrap()).collect();
    let mut fold_of = vec![0usize; labels.len()];
    let mut rng = rng::stream(seed, streams::PROBE_FOLDS);
    let mut offset = 0;
    for k in 0..domains.len() {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == k).collect();
        idx.shuffle(&mut rng);
        for (pos, i) in idx.into_iter().enumerate() {
            fold_of[i] = (pos + offset) % folds;
        }
        // Rotate so that small remainders do not all land in fold 0.
        offset += 1;
    }
    let mut correct = 0usize;
    let mut total = 0usize;
    for f in 0..folds {
        let train: Vec<usize> = (0..labels.len()).filter(|&i| fold_of[i] != f).collect();
        let test: Vec<usize> = (0..labels.len()).filter(|&i| fold_of[i] == f).collect();
        if test.is_empty() {
            continue;
        }
        let predict = fit(dump, &labels, &train, domains.len(), kind);
        for &i in &test {
            if predict(&dump.rows[i].coords) == labels[i] {
                correct += 1;
            }
        }
        total += test.len();
    }
    Ok(correct as f64 / total as f64)
}

fn fit<'a>(
    dump: &'a EmbeddingDump,
    labels: &[usize],
    train: &[usize],
    k: usize,
    kind: ProbeKind,
) -> Box<dyn Fn(&[f64]) -> usize + 'a> {
    let dim = dump.dim();
    match kind {
        ProbeKind::Centroid => {
            let mut centroids = vec![vec![0.0; dim]; k];
            let mut counts = vec![0usize; k];
            for &i in train {
                counts[labels[i]] += 1;
                for (c, x) in centroids[labels[i]].iter_mut().zip(&dump.rows[i].coords) {
                    *c += x;
                }
            }
            for (c, n) in centroids.iter_mut().zip(&counts) {
                if *n > 0 {
                    c.iter_mut().for_each(|v| *v /= *n as f64);
                } else {
                    c.iter_mut().for_each(|v| *v = f64::INFINITY);
                }
            }
            Box::new(move |x: &[f64]| {
                let d: Vec<f64> =
                    centroids.iter().map(|c| -c.iter().zip(x).map(|(a, b)| (a - b).powi(2)).sum::<f64>()).collect();
                argmax(&d)
            })
        }
        ProbeKind::Linear => {
            let (mean, scale) = standardizer(dump, train);
            let xs: Vec<Vec<f64>> = train.iter().map(|&i| standardize(&dump.rows[i].coords, &mean, &scale)).collect();
            let ys: Vec<usize> = train.iter().map(|&i| labels[i]).collect();
            let (w, b) = logistic_regression(&xs, &ys, k);
            Box::new(move |x: &[f64]| {
                let z = standardize(x, &mean, &scale);
                argmax(&logits(&w, &b, &z))
            })
        }
    }
}

fn standardizer(dump: &EmbeddingDump, rows: &[usize]) -> (Vec<f64>, Vec<f64>) {
    let dim = dump.dim();
    let n = rows.len() as f64;
    let mut mean = vec![0.0; dim];
    for &i in rows {
        for (m, x) in mean.iter_mut().zip(&dump.rows[i].coords) {
            *m += x / n;
        }
    }
    let mut var = vec![0.0; dim];
    for &i in rows {
        for ((v, x), m) in var.iter_mut().zip(&dump.rows[i].coords).zip(&mean) {
            *v += (x - m).powi(2) / n;
        }
    }
    let scale = var.into_iter().map(|v| if v > 1e-24 { 1.0 / v.sqrt() } else { 0.0 }).collect();
    (mean, scale)
}

fn standardize(x: &[f64], mean: &[f64], scale: &[f64]) -> Vec<f64> {
    x.iter().zip(mean).zip(scale).map(|((x, m), s)| (x - m) * s).collect()
}

fn logits(w: &[Vec<f64>], b: &[f64], x: &[f64]) -> Vec<f64> {
    w.iter().zip(b).map(|(row, bias)| bias + row.iter().zip(x).map(|(a, c)| a * c).sum::<f64>()).collect()
}

/// Full-batch gradient descent with Nesterov momentum on the mean
/// cross-entropy plus `L2 / 2 * |w|^2`, until the gradient norm drops
/// below `GRAD_TOL` or `MAX_ITERS` is reached.
fn logistic_regression(xs: &[Vec<f64>], ys: &[usize], k: usize) -> (Vec<Vec<f64>>, Vec<f64>) {
    let dim = xs.first().map_or(0, Vec::len);
    let n = xs.len() as f64;
    let mut w = vec![vec![0.0; dim]; k];
    let mut b = vec![0.0; k];
    let mut vw = vec![vec![0.0; dim]; k];
    let mut vb = vec![0.0; k];
    let mu = 0.9;
    for _ in 0..MAX_ITERS {
        // Gradient at the look-ahead point.
        let wl: Vec<Vec<f64>> =
            w.iter().zip(&vw).map(|(r, v)| r.iter().zip(v).map(|(a, c)| a + mu * c).collect()).collect();
        let bl: Vec<f64> = b.iter().zip(&vb).map(|(a, c)| a + mu * c).collect();
        let mut gw = vec![vec![0.0; dim]; k];
        let mut gb = vec![0.0; k];
        for (x, &y) in xs.iter().zip(ys) {
            let p = crate::pseudo_label::softmax(&logits(&wl, &bl, x));
            for c in 0..k {
                let d = (p[c] - f64::from(u8::from(c == y))) / n;
                gb[c] += d;
                for (g, xi) in gw[c].iter_mut().zip(x) {
                    *g += d * xi;
                }
            }
        }
        let mut gnorm = 0.0;
        for c in 0..k {
            for (g, wi) in gw[c].iter_mut().zip(&wl[c]) {
                *g += L2 * wi;
                gnorm += *g * *g;
            }
            gnorm += gb[c] * gb[c];
        }
        if gnorm.sqrt() < GRAD_TOL {
            break;
        }
        for c in 0..k {
            for ((v, wi), g) in vw[c].iter_mut().zip(w[c].iter_mut()).zip(&gw[c]) {
                *v = mu * *v - STEP * g;
                *wi += *v;
            }
            vb[c] = mu * vb[c] - STEP * gb[c];
            b[c] += vb[c];
        }
    }
    (w, b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::EmbeddingRow;
    use rand::Rng as _;

    fn dump(rows: Vec<(usize, Vec<f64>)>) -> EmbeddingDump {
        EmbeddingDump {
            rows: rows
                .into_iter()
                .enumerate()
                .map(|(i, (d, coords))| EmbeddingRow {
                    sample_id: i as u64,
                    domain_id: d,
                    class_id: 0,
                    pseudo_label: -1,
                    coords,
                })
                .collect(),
        }
    }

    fn one_hot_dump(d: usize, per: usize) -> EmbeddingDump {
        dump((0..d * per)
            .map(|i| {
                let dom = i % d;
                let mut v = vec![0.0; d];
                v[dom] = 1.0;
                (dom, v)
            })
            .collect())
    }

    #[test]
    fn one_hot_domains_are_separable() {
        for kind in [ProbeKind::Linear, ProbeKind::Centroid] {
            let acc = domain_probe_accuracy(&one_hot_dump(4, 30), 5, kind, 0).unwrap();
            assert!(acc > 0.99, "{kind:?}: {acc}");
        }
    }

    #[test]
    fn identical_embeddings_score_at_most_chance() {
        let d = dump((0..120).map(|i| (i % 3, vec![0.3, -0.2, 0.9])).collect());
        for kind in [ProbeKind::Linear, ProbeKind::Centroid] {
            let acc = domain_probe_accuracy(&d, 5, kind, 1).unwrap();
            assert!(acc <= 1.0 / 3.0 + 0.02, "{kind:?}: {acc}");
        }
    }

    #[test]
    fn single_domain_is_rejected() {
        let d = dump((0..20).map(|_| (2, vec![1.0])).collect());
        assert!(matches!(domain_probe_accuracy(&d, 5, ProbeKind::Linear, 0), Err(Error::Domain(_))));
    }

    #[test]
    fn too_few_rows_is_rejected() {
        let d = dump((0..8).map(|i| (i % 2, vec![i as f64])).collect());
        assert!(domain_probe_accuracy(&d, 5, ProbeKind::Linear, 0).is_err());
    }

    #[test]
    fn shuffled_domains_score_chance() {
        // Embeddings carry strong domain structure; shuffling the domain ids
        // must bring the probe back to chance.
        let d = 3;
        let mut r = rng::stream(42, 0);
        let base: Vec<(usize, Vec<f64>)> = (0..300)
            .map(|i| {
                let dom = i % d;
                let v: Vec<f64> = (0..8).map(|k| if k == dom { 2.0 } else { 0.0 } + r.random_range(-1.0..1.0)).collect();
                (dom, v)
            })
            .collect();
        assert!(domain_probe_accuracy(&dump(base.clone()), 5, ProbeKind::Linear, 0).unwrap() > 0.9);
        let shuffles = 20;
        let mut accs = Vec::new();
        for s in 0..shuffles {
            let mut ids: Vec<usize> = base.iter().map(|(d, _)| *d).collect();
            ids.shuffle(&mut rng::stream(s, 1));
            let shuffled = base.iter().zip(ids).map(|((_, v), d)| (d, v.clone())).collect();
            accs.push(domain_probe_accuracy(&dump(shuffled), 5, ProbeKind::Linear, s).unwrap());
        }
        let mean = accs.iter().sum::<f64>() / shuffles as f64;
        let sd = (accs.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (shuffles - 1) as f64).sqrt();
        let se = sd / (shuffles as f64).sqrt();
        assert!((mean - 1.0 / 3.0).abs() <= 3.0 * se, "mean {mean} se {se}");
    }
}
