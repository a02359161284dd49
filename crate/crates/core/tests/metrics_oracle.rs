//! Metric functions against brute-force reimplementations.

use proptest::prelude::*;
use transcal_core::metrics::{self, BinningConfig, ProbabilitySet};
use transcal_core::scaling::softmax_with_temperature;
use transcal_core::{Matrix, Temperature};

/// Bins by scanning edges `m / B` in order, then sums per bin in sample order.
fn scan_ece(probs: &[Vec<f64>], labels: &[usize], weights: &[f64], b: usize) -> f64 {
    let edges: Vec<f64> = (1..=b).map(|m| m as f64 / b as f64).collect();
    let mut mass = vec![0.0; b];
    let mut acc = vec![0.0; b];
    let mut conf = vec![0.0; b];
    let mut total = 0.0;
    for ((row, &y), &w) in probs.iter().zip(labels).zip(weights) {
        let mut k = 0;
        for j in 1..row.len() {
            if row[j] > row[k] {
                k = j;
            }
        }
        let c = row[k];
        let r = if k == y { 1.0 } else { 0.0 };
        let m = edges.iter().position(|&e| c <= e).unwrap_or(b - 1);
        mass[m] += w;
        acc[m] += w * r;
        conf[m] += w * c;
        total += w;
    }
    let mut ece = 0.0;
    for m in 0..b {
        if mass[m] > 0.0 {
            ece += (mass[m] / total) * (acc[m] / mass[m] - conf[m] / mass[m]).abs();
        }
    }
    ece
}

fn normalize(raw: Vec<Vec<f64>>) -> Vec<Vec<f64>> {
    raw.into_iter()
        .map(|r| {
            let s: f64 = r.iter().sum();
            r.iter().map(|v| v / s).collect()
        })
        .collect()
}

/// Rows of positive entries, some replaced by rows whose maximum sits exactly
/// on a bin edge.
fn instance() -> impl Strategy<Value = (Vec<Vec<f64>>, Vec<usize>, Vec<f64>, usize)> {
    (1usize..=50, 2usize..=5, 1usize..=20).prop_flat_map(|(n, k, b)| {
        (
            prop::collection::vec(prop::collection::vec(0.01f64..1.0, k), n),
            prop::collection::vec(0..k, n),
            prop::collection::vec(prop_oneof![Just(0.0), 0.0f64..5.0], n),
            prop::collection::vec(prop::option::weighted(0.2, 0usize..=b), n),
            Just(b),
        )
            .prop_map(move |(raw, labels, mut weights, edges, b)| {
                let mut rows = normalize(raw);
                for (row, edge) in rows.iter_mut().zip(edges) {
                    if let Some(m) = edge {
                        // Two-point row with maximum m/B (or its complement).
                        let c = (m as f64 / b as f64).max(0.5);
                        row.iter_mut().for_each(|v| *v = 0.0);
                        row[0] = c;
                        row[1] = 1.0 - c;
                    }
                }
                if weights.iter().all(|w| *w == 0.0) {
                    weights[0] = 1.0;
                }
                (rows, labels, weights, b)
            })
    })
}

fn to_set(rows: &[Vec<f64>]) -> ProbabilitySet {
    ProbabilitySet::new(Matrix::from_rows(rows).unwrap()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn ece_matches_scan_exactly((rows, labels, weights, b) in instance()) {
        let set = to_set(&rows);
        let bins = BinningConfig::new(b).unwrap();
        let ones = vec![1.0; rows.len()];
        prop_assert_eq!(metrics::ece(&set, &labels, bins).unwrap().ece, scan_ece(&rows, &labels, &ones, b));
        prop_assert_eq!(
            metrics::weighted_ece(&set, &labels, &weights, bins).unwrap().ece,
            scan_ece(&rows, &labels, &weights, b)
        );
    }

    #[test]
    fn nll_and_brier_match_direct_sums((rows, labels, _w, _b) in instance()) {
        let set = to_set(&rows);
        let nll: f64 = rows.iter().zip(&labels).map(|(r, &y)| -r[y].max(1e-12).ln()).sum();
        let k = rows[0].len() as f64;
        let brier: f64 = rows
            .iter()
            .zip(&labels)
            .map(|(r, &y)| (0..r.len()).map(|j| (r[j] - f64::from(u8::from(j == y))).powi(2)).sum::<f64>() / k)
            .sum::<f64>()
            / rows.len() as f64;
        prop_assert!((metrics::nll(&set, &labels).unwrap() - nll).abs() <= 1e-12 * nll.max(1.0));
        prop_assert!((metrics::brier(&set, &labels).unwrap() - brier).abs() <= 1e-12);
    }

    #[test]
    fn bin_counts_partition_samples((rows, labels, _w, b) in instance()) {
        let table = metrics::ece(&to_set(&rows), &labels, BinningConfig::new(b).unwrap()).unwrap();
        prop_assert_eq!(table.total_count(), rows.len());
        prop_assert_eq!(table.bins.len(), b);
    }

    #[test]
    fn integer_weights_equal_replication((rows, labels, _w, b) in instance(), reps in prop::collection::vec(0usize..4, 50)) {
        let mut reps = reps[..rows.len()].to_vec();
        if reps.iter().all(|r| *r == 0) {
            reps[0] = 1;
        }
        let mut dup_rows = Vec::new();
        let mut dup_labels = Vec::new();
        for ((row, &y), &r) in rows.iter().zip(&labels).zip(&reps) {
            for _ in 0..r {
                dup_rows.push(row.clone());
                dup_labels.push(y);
            }
        }
        let bins = BinningConfig::new(b).unwrap();
        let weights: Vec<f64> = reps.iter().map(|&r| r as f64).collect();
        let weighted = metrics::weighted_ece(&to_set(&rows), &labels, &weights, bins).unwrap().ece;
        let replicated = metrics::ece(&to_set(&dup_rows), &dup_labels, bins).unwrap().ece;
        prop_assert!((weighted - replicated).abs() <= 1e-12, "{} vs {}", weighted, replicated);
    }

    #[test]
    fn temperature_keeps_argmax(
        z in prop::collection::vec(prop::collection::vec(-8.0f64..8.0, 4), 1..40),
        t in 0.05f64..100.0,
    ) {
        let logits = Matrix::from_rows(&z).unwrap();
        let before = softmax_with_temperature(&logits, Temperature::IDENTITY).unwrap();
        let after = softmax_with_temperature(&logits, Temperature::new(t).unwrap()).unwrap();
        prop_assert_eq!(before.predictions(), after.predictions());
    }

    #[test]
    fn brier_symmetric_under_class_relabeling((rows, labels, _w, _b) in instance(), shift in 1usize..5) {
        let k = rows[0].len();
        let perm = |j: usize| (j + shift) % k;
        let moved: Vec<Vec<f64>> = rows
            .iter()
            .map(|r| {
                let mut out = vec![0.0; k];
                for j in 0..k {
                    out[perm(j)] = r[j];
                }
                out
            })
            .collect();
        let moved_labels: Vec<usize> = labels.iter().map(|&y| perm(y)).collect();
        let a = metrics::brier(&to_set(&rows), &labels).unwrap();
        let b = metrics::brier(&to_set(&moved), &moved_labels).unwrap();
        prop_assert!((a - b).abs() <= 1e-15);
    }
}

#[test]
fn random_two_hundred_sample_instance_matches_scan() {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(200);
    let rows = normalize((0..200).map(|_| (0..3).map(|_| rng.random_range(0.01..1.0)).collect()).collect());
    let labels: Vec<usize> = (0..200).map(|_| rng.random_range(0..3)).collect();
    let got = metrics::ece(&to_set(&rows), &labels, BinningConfig::default()).unwrap().ece;
    assert_eq!(got, scan_ece(&rows, &labels, &[1.0; 200], 15));
}
