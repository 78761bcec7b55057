use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use super::*;
use crate::rng;

fn cfg(variant: Variant, similarity: SimilarityMode) -> FixClrConfig {
    FixClrConfig { temperature: 0.5, loss_weight: 1.0, variant, similarity }
}

fn two_class(a: [f64; 2], b: [f64; 2]) -> RepresentationBatch {
    RepresentationBatch::new(vec![a.to_vec(), b.to_vec()], vec![0, 0], vec![0, 1], vec![true, true]).unwrap()
}

fn unit(rng: &mut rng::Rng, dim: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
    let n = norm(&v);
    v.into_iter().map(|x| x / n).collect()
}

fn random_batch(rng: &mut rng::Rng) -> RepresentationBatch {
    let n = rng.random_range(2..=64);
    let d = rng.random_range(1..=5);
    let c = rng.random_range(2..=8);
    let dim = rng.random_range(2..=8);
    let vectors = (0..n).map(|_| unit(rng, dim)).collect();
    let domains = (0..n).map(|_| rng.random_range(0..d)).collect();
    let classes = (0..n).map(|_| rng.random_range(0..c)).collect();
    let eligible = (0..n).map(|_| rng.random_bool(0.8)).collect();
    RepresentationBatch::new(vectors, domains, classes, eligible).unwrap()
}

#[test]
fn cosine_examples() {
    assert_eq!(cosine_similarity(&[1.0, 0.0], &[1.0, 0.0]).unwrap(), 1.0);
    assert_eq!(cosine_similarity(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
    assert_eq!(cosine_similarity(&[1.0, 0.0], &[-1.0, 0.0]).unwrap(), -1.0);
    assert!(matches!(cosine_similarity(&[0.0, 0.0], &[1.0, 0.0]), Err(Error::Domain(_))));
    let s = cosine_similarity(&[1e-3, 3.0, 1e8], &[1e-3, 3.0, 1e8]).unwrap();
    assert!(s <= 1.0);
}

#[test]
fn centroid_of_duplicates_is_the_vector() {
    let v = vec![0.6, 0.8];
    let b = RepresentationBatch::new(vec![v.clone(), v.clone()], vec![0, 1], vec![0, 0], vec![true, true]).unwrap();
    let g = group_centroids(&b).unwrap();
    let got = g.cls[0].vector().unwrap();
    assert!((got[0] - 0.6).abs() < 1e-15 && (got[1] - 0.8).abs() < 1e-15);
}

#[test]
fn dom_minus_is_complement_class() {
    let g = group_centroids(&two_class([1.0, 0.0], [0.0, 1.0])).unwrap();
    assert_eq!(g.dom_minus[0][0], Group::Present(vec![0.0, 1.0]));
    assert_eq!(g.dom_minus[0][1], Group::Present(vec![1.0, 0.0]));
}

#[test]
fn antipodal_group_is_degenerate() {
    let b = RepresentationBatch::new(vec![vec![1.0, 0.0], vec![-1.0, 0.0]], vec![0, 0], vec![0, 0], vec![true, true])
        .unwrap();
    let g = group_centroids(&b).unwrap();
    assert_eq!(g.cls[0], Group::Degenerate);
    assert_eq!(g.dom_same[0][0], Group::Degenerate);
}

#[test]
fn absent_groups_are_marked_absent() {
    let b = RepresentationBatch::new(vec![vec![1.0, 0.0], vec![0.0, 1.0]], vec![0, 1], vec![0, 2], vec![true, true])
        .unwrap();
    let g = group_centroids(&b).unwrap();
    assert_eq!(g.cls[1], Group::Absent);
    assert_eq!(g.dom_same[0][2], Group::Absent);
}

#[test]
fn hand_values_repel_only() {
    let c = cfg(Variant::RepelOnly, SimilarityMode::Centroid);
    let ln2 = std::f64::consts::LN_2;
    let cases = [([1.0, 0.0], [1.0, 0.0], ln2), ([1.0, 0.0], [0.0, 1.0], ln2 - 2.0), ([1.0, 0.0], [-1.0, 0.0], ln2 - 4.0)];
    for (a, b, want) in cases {
        let batch = two_class(a, b);
        let got = fixclr_loss(&batch, &c).unwrap();
        assert!((got.value - want).abs() < 1e-12, "{} vs {want}", got.value);
        let oracle = fixclr_oracle(&batch, &c).unwrap();
        assert!((oracle.value - want).abs() < 1e-12, "oracle {} vs {want}", oracle.value);
    }
}

#[test]
fn hand_value_with_positives() {
    let c = cfg(Variant::WithPositives, SimilarityMode::Centroid);
    let batch = two_class([1.0, 0.0], [-1.0, 0.0]);
    let e2 = 2f64.exp();
    let want = -(e2 / (e2 + 2.0 * (-2f64).exp())).ln();
    assert!((want - 0.0360).abs() < 1e-4);
    let got = fixclr_loss_with_positives(&batch, &c).unwrap();
    assert!((got.value - want).abs() < 1e-12);
    assert!((fixclr_oracle(&batch, &c).unwrap().value - want).abs() < 1e-12);
}

#[test]
fn positive_equal_to_negatives_gives_log_one_plus_c() {
    for common in [-0.7, 0.0, 0.3, 1.0] {
        for c in 1..6 {
            let (v, _, _) = positive_term(common, &vec![common; c], 0.5);
            assert!((v - ((1 + c) as f64).ln()).abs() < 1e-12);
        }
    }
}

#[test]
fn positive_term_attracts() {
    let (_, d_pos, d_neg) = positive_term(0.2, &[0.1, -0.3, 0.5], 0.5);
    assert!(d_pos < 0.0);
    assert!(d_neg.iter().all(|d| *d > 0.0));
    // Central differences on the positive.
    let h = 1e-5;
    let fd = (positive_term(0.2 + h, &[0.1, -0.3, 0.5], 0.5).0 - positive_term(0.2 - h, &[0.1, -0.3, 0.5], 0.5).0)
        / (2.0 * h);
    assert!(fd < 0.0 && (fd - d_pos).abs() < 1e-8);
}

#[test]
fn single_class_is_skipped() {
    let b = RepresentationBatch::new(vec![vec![1.0, 0.0], vec![0.0, 1.0]], vec![0, 1], vec![3, 3], vec![true, true])
        .unwrap();
    for variant in [Variant::RepelOnly, Variant::WithPositives] {
        let c = cfg(variant, SimilarityMode::Centroid);
        let (out, grad) = fixclr_loss_and_grad(&b, &c).unwrap();
        assert!(out.skipped);
        assert_eq!(out.value, 0.0);
        assert!(grad.iter().all(|g| *g == 0.0));
        assert!(fixclr_oracle(&b, &c).unwrap().skipped);
    }
}

#[test]
fn empty_eligibility_is_skipped_for_both_routes() {
    let b = RepresentationBatch::new(vec![vec![1.0, 0.0], vec![0.0, 1.0]], vec![0, 1], vec![0, 1], vec![false, false])
        .unwrap();
    let c = cfg(Variant::RepelOnly, SimilarityMode::Centroid);
    let a = fixclr_loss(&b, &c).unwrap();
    let o = fixclr_oracle(&b, &c).unwrap();
    assert!(a.skipped && o.skipped);
    assert_eq!(a.value, 0.0);
    assert_eq!(o.value, 0.0);
}

#[test]
fn nan_vectors_are_numeric_errors() {
    let err = RepresentationBatch::new(vec![vec![f64::NAN, 0.0]], vec![0], vec![0], vec![true]).unwrap_err();
    assert!(matches!(err, Error::Numeric(_)));
}

#[test]
fn non_unit_vectors_are_rejected() {
    assert!(RepresentationBatch::new(vec![vec![2.0, 0.0]], vec![0], vec![0], vec![true]).is_err());
    assert!(RepresentationBatch::from_unnormalized(vec![vec![2.0, 0.0]], vec![0], vec![0], vec![true]).is_ok());
}

#[test]
fn variant_preconditions() {
    let b = two_class([1.0, 0.0], [0.0, 1.0]);
    assert!(fixclr_loss(&b, &cfg(Variant::WithPositives, SimilarityMode::Centroid)).is_err());
    assert!(fixclr_loss_with_positives(&b, &cfg(Variant::RepelOnly, SimilarityMode::Centroid)).is_err());
    let bad = FixClrConfig { temperature: 0.0, ..FixClrConfig::default() };
    assert!(matches!(fixclr_loss(&b, &bad), Err(Error::Config(_))));
}

#[test]
fn oracle_rejects_large_batches() {
    let n = oracle::ORACLE_MAX_SAMPLES + 1;
    let b = RepresentationBatch::new(vec![vec![1.0]; n], vec![0; n], vec![0; n], vec![true; n]).unwrap();
    assert!(fixclr_oracle(&b, &FixClrConfig::default()).is_err());
}

#[test]
fn matches_oracle_on_random_batches() {
    let mut r = rng::stream(2024, 0);
    for _ in 0..300 {
        let b = random_batch(&mut r);
        for variant in [Variant::RepelOnly, Variant::WithPositives] {
            for sim in [SimilarityMode::Centroid, SimilarityMode::MeanPairwise] {
                let c = cfg(variant, sim);
                let (a, _) = fixclr_loss_and_grad(&b, &c).unwrap();
                let o = fixclr_oracle(&b, &c).unwrap();
                assert_eq!(a.skipped, o.skipped);
                assert!((a.value - o.value).abs() <= 1e-9 * o.value.abs().max(1.0), "{} vs {}", a.value, o.value);
            }
        }
    }
}

#[test]
fn per_domain_terms_are_bounded() {
    let mut r = rng::stream(7, 0);
    let c = cfg(Variant::RepelOnly, SimilarityMode::Centroid);
    for _ in 0..300 {
        let b = random_batch(&mut r);
        let out = fixclr_loss(&b, &c).unwrap();
        for t in &out.domain_terms {
            let log_c = (t.pairs as f64).ln();
            assert!(t.value <= log_c + 1e-12 && t.value >= log_c - 2.0 / c.temperature - 1e-12);
        }
    }
}

fn finite_difference_check(b: &RepresentationBatch, c: &FixClrConfig) {
    let (_, grad) = fixclr_loss_and_grad(b, c).unwrap();
    let base = b.flat_vectors().to_vec();
    let h = 1e-5;
    for (k, g) in grad.iter().enumerate() {
        let mut plus = base.clone();
        plus[k] += h;
        let mut minus = base.clone();
        minus[k] -= h;
        let fp = fixclr_loss_and_grad(&b.with_vectors(plus).unwrap(), c).unwrap().0.value;
        let fm = fixclr_loss_and_grad(&b.with_vectors(minus).unwrap(), c).unwrap().0.value;
        let fd = (fp - fm) / (2.0 * h);
        let err = (fd - g).abs() / g.abs().max(fd.abs()).max(1e-3);
        assert!(err < 1e-4, "coordinate {k}: analytic {g} vs fd {fd}");
    }
}

#[test]
fn gradients_match_finite_differences() {
    let mut r = rng::stream(99, 0);
    for _ in 0..20 {
        let b = random_batch(&mut r);
        for variant in [Variant::RepelOnly, Variant::WithPositives] {
            for sim in [SimilarityMode::Centroid, SimilarityMode::MeanPairwise] {
                finite_difference_check(&b, &cfg(variant, sim));
            }
        }
    }
}

#[test]
fn lowering_one_similarity_lowers_the_loss() {
    let mut r = rng::stream(5, 5);
    for _ in 0..200 {
        let k = r.random_range(1..8);
        let sims: Vec<f64> = (0..k).map(|_| r.random_range(-1.0..1.0)).collect();
        let (_, d) = repel_term(&sims, 0.5);
        assert!(d.iter().all(|x| *x > 0.0));
    }
}
