use std::time::Instant;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use trackfill_core::eval::roll::{compress_bar_roll, hamming, jaccard, BoolMatrix, PianoRoll};
use trackfill_core::eval::search::{nearest_in_corpus, CorpusIndex, DEFAULT_PREFILTER};

fn random_roll(rng: &mut ChaCha8Rng, rows: usize, cols: usize, density: f64) -> BoolMatrix {
    let mut m = BoolMatrix::new(rows, cols);
    for r in 0..rows {
        for c in 0..cols {
            if rng.random_bool(density) {
                m.set(r, c, true);
            }
        }
    }
    m
}

fn naive_counts(a: &BoolMatrix, b: &BoolMatrix) -> (usize, usize, usize) {
    let (rows, cols) = a.shape();
    let (mut diff, mut inter, mut union) = (0, 0, 0);
    for r in 0..rows {
        for c in 0..cols {
            let (x, y) = (a.get(r, c), b.get(r, c));
            diff += usize::from(x != y);
            inter += usize::from(x && y);
            union += usize::from(x || y);
        }
    }
    (diff, inter, union)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn metrics_match_naive_counts(seed in any::<u64>(), rows in 1usize..70, cols in 1usize..130, density in 0.0f64..1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_roll(&mut rng, rows, cols, density);
        let b = random_roll(&mut rng, rows, cols, density);
        let (diff, inter, union) = naive_counts(&a, &b);
        prop_assert_eq!(hamming(&a, &b).unwrap(), diff as f64 / (rows * cols) as f64);
        let want = if union == 0 { 1.0 } else { inter as f64 / union as f64 };
        prop_assert_eq!(jaccard(&a, &b).unwrap(), want);
    }
}

#[test]
fn metric_identities_on_random_triples() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..1000 {
        let d = rng.random_range(0.0..0.3);
        let [x, y, z] = [0; 3].map(|_| random_roll(&mut rng, 48, 128, d));
        assert_eq!(hamming(&x, &x).unwrap(), 0.0);
        assert_eq!(jaccard(&x, &x).unwrap(), 1.0);
        assert_eq!(hamming(&x, &y).unwrap(), hamming(&y, &x).unwrap());
        assert_eq!(jaccard(&x, &y).unwrap(), jaccard(&y, &x).unwrap());
        let (xy, yz, xz) = (hamming(&x, &y).unwrap(), hamming(&y, &z).unwrap(), hamming(&x, &z).unwrap());
        assert!(xz <= xy + yz + 1e-12);
        // Jaccard distance is also a metric.
        let jd = |a: &BoolMatrix, b: &BoolMatrix| 1.0 - jaccard(a, b).unwrap();
        assert!(jd(&x, &z) <= jd(&x, &y) + jd(&y, &z) + 1e-12);
        assert_eq!(compress_bar_roll(&x).unwrap().shape(), (8, 88));
    }
}

fn corpus_rolls(n: usize, seed: u64) -> Vec<PianoRoll> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let d = rng.random_range(0.0..0.08);
            random_roll(&mut rng, 48, 128, d)
        })
        .collect()
}

#[test]
fn search_matches_exhaustive_oracle() {
    let rolls = corpus_rolls(1000, 10);
    let index = CorpusIndex::from_rolls(rolls.iter().map(|r| ("c".to_string(), r.clone())).collect()).unwrap();
    let mut queries = corpus_rolls(6, 11);
    queries.extend_from_slice(&rolls[500..504]);
    let result = nearest_in_corpus(&queries, &index, None).unwrap();
    for (q, got) in queries.iter().zip(&result.per_bar) {
        let want = rolls.iter().map(|r| hamming(q, r).unwrap()).fold(f64::INFINITY, f64::min);
        assert_eq!(*got, Some(want));
    }
    let filtered = nearest_in_corpus(&queries[6..], &index, Some(DEFAULT_PREFILTER)).unwrap();
    assert_eq!(filtered.per_bar, vec![Some(0.0); 4]);
}

#[test]
fn four_bar_query_is_fast() {
    let rolls = corpus_rolls(1000, 12);
    let index = CorpusIndex::from_rolls(rolls.iter().map(|r| ("c".to_string(), r.clone())).collect()).unwrap();
    let query = corpus_rolls(4, 13);
    let start = Instant::now();
    nearest_in_corpus(&query, &index, None).unwrap();
    nearest_in_corpus(&query, &index, Some(DEFAULT_PREFILTER)).unwrap();
    assert!(start.elapsed().as_secs_f64() < 5.0);
}
