use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vd_core::fne::TernaryMatrix;
use vd_core::{build_all_representatives, compute_representative, distance_matrix, Ternary, TernaryVector, Thresholds};

fn random_rows(rng: &mut ChaCha8Rng, n: usize, m: usize) -> Vec<Vec<i8>> {
    (0..n)
        .map(|_| (0..m).map(|_| rng.random_range(-1..=1)).collect())
        .collect()
}

fn matrix(rows: &[Vec<i8>]) -> TernaryMatrix {
    let rows: Vec<TernaryVector> = rows.iter().map(|r| TernaryVector::from_values(r).unwrap()).collect();
    TernaryMatrix::from_rows(&rows, Thresholds::default()).unwrap()
}

/// Count each value, keep a strict winner, otherwise 0.
fn mode_oracle(rows: &[Vec<i8>], idx: &[usize], m: usize) -> Vec<i8> {
    (0..m)
        .map(|j| {
            let count = |v: i8| idx.iter().filter(|&&i| rows[i][j] == v).count();
            let (a, z, p) = (count(-1), count(0), count(1));
            if p > a && p > z {
                1
            } else if a > p && a > z {
                -1
            } else {
                0
            }
        })
        .collect()
}

#[test]
fn parallel_build_matches_single_and_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(71);
    let m = 37;
    let rows = random_rows(&mut rng, 3000, m);
    let tm = matrix(&rows);
    let mut groups: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for k in 0..1000 {
        let size = rng.random_range(1..=7);
        let idx = (0..size).map(|_| rng.random_range(0..rows.len())).collect();
        groups.insert(format!("s{k:04}"), idx);
    }
    let all = build_all_representatives(&tm, &groups).unwrap();
    assert_eq!(all.len(), 1000);
    for (rep, (id, idx)) in all.iter().zip(&groups) {
        assert_eq!(rep.synset_id(), id);
        assert_eq!(rep.n_source_samples(), idx.len());
        let single = compute_representative(&tm, idx, id).unwrap();
        assert_eq!(rep, &single);
        assert_eq!(rep.ternary().to_values(), mode_oracle(&rows, idx, m));
        let presence: Vec<usize> = rep.presence().iter().collect();
        let expect: Vec<usize> = (0..m).filter(|&j| rep.ternary().get(j) == Ternary::Present).collect();
        assert_eq!(presence, expect);
    }
}

#[test]
fn matrix_matches_naive_double_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let m = 512;
    let rows = random_rows(&mut rng, 50, m);
    let tm = matrix(&rows);
    let groups: BTreeMap<String, Vec<usize>> = (0..50).map(|i| (format!("r{i:02}"), vec![i])).collect();
    let reps = build_all_representatives(&tm, &groups).unwrap();
    let d = distance_matrix(&reps).unwrap();
    for i in 0..50 {
        for j in i + 1..50 {
            let (mut shared, mut either) = (0u32, 0u32);
            for (&a, &b) in rows[i].iter().zip(&rows[j]) {
                if a == 1 && b == 1 {
                    shared += 1;
                }
                if a == 1 || b == 1 {
                    either += 1;
                }
            }
            let sim = if either == 0 {
                1.0
            } else {
                shared as f64 / either as f64
            };
            assert_eq!(d.get(i, j), (1.0 - sim) as f32, "pair ({i}, {j})");
            assert_eq!(d.get(j, i), d.get(i, j));
        }
    }
}
