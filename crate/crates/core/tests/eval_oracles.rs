//! CMC and mAP against exhaustive counting oracles.

use crossview_core::eval::{cmc, mean_ap};
use crossview_core::{Matrix, SeededRng};
use proptest::prelude::*;

/// Rank of gallery item `g` for a probe row: items strictly closer, plus
/// tied items earlier in the gallery, plus one.
fn rank_of(row: &[f64], g: usize) -> usize {
    1 + (0..row.len())
        .filter(|&h| row[h] < row[g] || (row[h] == row[g] && h < g))
        .count()
}

fn oracle_cmc(dist: &Matrix, probes: &[usize], gallery: &[usize]) -> Vec<f64> {
    (1..=gallery.len())
        .map(|k| {
            let hits = (0..probes.len())
                .filter(|&p| {
                    (0..gallery.len()).any(|g| gallery[g] == probes[p] && rank_of(dist.row(p), g) <= k)
                })
                .count();
            hits as f64 / probes.len() as f64
        })
        .collect()
}

fn oracle_map(dist: &Matrix, probes: &[usize], gallery: &[usize]) -> f64 {
    let mut total = 0.0;
    for (p, &id) in probes.iter().enumerate() {
        let relevant: Vec<usize> = (0..gallery.len()).filter(|&g| gallery[g] == id).collect();
        let mut ap = 0.0;
        for &g in &relevant {
            let r = rank_of(dist.row(p), g);
            let relevant_at_or_above = relevant.iter().filter(|&&h| rank_of(dist.row(p), h) <= r).count();
            ap += relevant_at_or_above as f64 / r as f64;
        }
        total += ap / relevant.len() as f64;
    }
    total / probes.len() as f64
}

#[test]
fn hand_case() {
    let dist = Matrix::from_rows(&[vec![0.1, 0.5, 0.9], vec![0.7, 0.2, 0.4]]).unwrap();
    // probe 0 matches gallery 0, probe 1 matches gallery 2
    let curve = cmc(&dist, &[0, 2], &[0, 1, 2]).unwrap();
    assert_eq!(curve, vec![0.5, 1.0, 1.0]);
    assert_eq!(mean_ap(&dist, &[0, 2], &[0, 1, 2]).unwrap(), 0.75);
}

#[test]
fn exhaustive_small_instances() {
    let mut rng = SeededRng::new(21);
    for _ in 0..5000 {
        let probes_n = 1 + rng.below(6);
        let gallery_n = 1 + rng.below(8);
        let ids = 1 + rng.below(4);
        let gallery: Vec<usize> = (0..gallery_n).map(|_| rng.below(ids)).collect();
        let probes: Vec<usize> = (0..probes_n).map(|_| gallery[rng.below(gallery_n)]).collect();
        // coarse values force ties
        let dist = Matrix::new(
            probes_n,
            gallery_n,
            (0..probes_n * gallery_n).map(|_| rng.below(4) as f64).collect(),
        )
        .unwrap();
        assert_eq!(cmc(&dist, &probes, &gallery).unwrap(), oracle_cmc(&dist, &probes, &gallery));
        let got = mean_ap(&dist, &probes, &gallery).unwrap();
        let want = oracle_map(&dist, &probes, &gallery);
        assert!((got - want).abs() < 1e-15, "{got} vs {want}");
    }
}

proptest! {
    #[test]
    fn cmc_is_monotone_and_ends_at_one(seed in any::<u64>()) {
        let mut rng = SeededRng::new(seed);
        let gallery: Vec<usize> = (0..6).map(|i| i % 3).collect();
        let probes = vec![0, 1, 2, 1];
        let dist = Matrix::new(4, 6, (0..24).map(|_| rng.uniform()).collect()).unwrap();
        let curve = cmc(&dist, &probes, &gallery).unwrap();
        prop_assert!(curve.windows(2).all(|w| w[0] <= w[1]));
        prop_assert!(curve.iter().all(|&c| (0.0..=1.0).contains(&c)));
        prop_assert_eq!(*curve.last().unwrap(), 1.0);
        let map = mean_ap(&dist, &probes, &gallery).unwrap();
        prop_assert!(map > 0.0 && map <= 1.0);
    }
}
