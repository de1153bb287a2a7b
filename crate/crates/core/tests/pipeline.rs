mod common;

use proptest::prelude::*;

use common::{cells_bitwise_equal, random_table};
use quail_core::corrupt::{self, CorruptionMode};
use quail_core::data::{self, Cell, Task};
use quail_core::search;

fn mode() -> impl Strategy<Value = CorruptionMode> {
    prop_oneof![Just(CorruptionMode::Clean), Just(CorruptionMode::Ccar), Just(CorruptionMode::Cnar)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn splits_partition_rows(n in 10usize..400, k in 1usize..6, seed in any::<u64>()) {
        let splits = data::make_bootstrap_splits(n, k, seed).unwrap();
        prop_assert_eq!(splits.len(), k);
        let (tr, va, te) = data::split_sizes(n);
        for s in &splits {
            prop_assert_eq!((s.train_idx.len(), s.val_idx.len(), s.test_idx.len()), (tr, va, te));
            let mut all: Vec<usize> = s.train_idx.iter().chain(&s.val_idx).chain(&s.test_idx).copied().collect();
            all.sort_unstable();
            prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        }
        prop_assert_eq!(splits, data::make_bootstrap_splits(n, k, seed).unwrap());
    }

    #[test]
    fn preprocessing_ignores_row_order(n in 12usize..80, d_num in 1usize..4, d_cat in 0usize..3, seed in any::<u64>()) {
        let t = random_table(n, d_num, d_cat, seed);
        let mut perm: Vec<usize> = (0..n).rev().collect();
        perm.rotate_left(seed as usize % n);
        let shuffled = t.select_rows(&perm);
        let a = data::fit_preprocessor(&t).unwrap();
        let b = data::fit_preprocessor(&shuffled).unwrap();
        prop_assert_eq!(a.stats(), b.stats());
        let ea = data::apply_preprocessor(&a, &t).unwrap();
        prop_assert_eq!(ea.x.select(ndarray::Axis(0), &perm), data::apply_preprocessor(&b, &shuffled).unwrap().x);
        prop_assert!(ea.x.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn csv_round_trip(n in 2usize..50, d_num in 1usize..4, d_cat in 0usize..3, seed in any::<u64>()) {
        let t = random_table(n, d_num, d_cat, seed);
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let back = data::read_csv(&buf[..], "label", Task::Classification, Some(t.schema())).unwrap();
        prop_assert!(cells_bitwise_equal(&t, &back));
    }

    #[test]
    fn corruption_is_deterministic_and_consistent(
        n in 10usize..120, d_num in 1usize..5, d_cat in 0usize..3, seed in any::<u64>(), m in mode()
    ) {
        let t = random_table(n, d_num, d_cat, seed);
        let a = corrupt::corrupt_table(&t, m, seed).unwrap();
        let b = corrupt::corrupt_table(&t, m, seed).unwrap();
        prop_assert!(cells_bitwise_equal(&a.table, &b.table));
        prop_assert_eq!(&a.mask, &b.mask);
        prop_assert_eq!(a.table.targets(), t.targets());
        for j in 0..t.n_cols() {
            let q = 1.0 - a.mask.corrupted_in_column(j) as f64 / n as f64;
            prop_assert_eq!(a.quality.q[j], q);
            prop_assert!((0.0..=1.0).contains(&q));
        }
        for i in 0..n {
            for j in 0..t.n_cols() {
                let changed = match (t.cell(i, j), a.table.cell(i, j)) {
                    (Cell::Num(x), Cell::Num(y)) => x.to_bits() != y.to_bits(),
                    (x, y) => x != y,
                };
                if changed {
                    prop_assert!(a.mask.is_corrupted(i, j));
                }
                if a.mask.is_made_missing(i, j) {
                    prop_assert!(a.table.cell(i, j).is_missing());
                }
            }
        }
        if m == CorruptionMode::Clean {
            prop_assert_eq!(a.mask.total_corrupted(), 0);
        }
    }

    #[test]
    fn prepared_split_leaves_holdout_rows_clean(n in 10usize..120, d_num in 1usize..4, d_cat in 0usize..3, seed in any::<u64>(), m in mode()) {
        let t = random_table(n, d_num, d_cat, seed);
        for split in data::make_bootstrap_splits(n, 2, seed).unwrap() {
            let p = search::prepare_split(&t, &split, m, seed).unwrap();
            prop_assert!(cells_bitwise_equal(&p.val, &t.select_rows(&split.val_idx)));
            prop_assert!(cells_bitwise_equal(&p.test, &t.select_rows(&split.test_idx)));
            prop_assert_eq!(p.train.n_rows(), split.train_idx.len());
        }
    }
}

#[test]
fn bundled_datasets_load() {
    let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data");
    let iris = data::load_csv(&dir.join("iris.csv"), "species", Task::Classification, None).unwrap();
    assert_eq!((iris.n_rows(), iris.n_cols()), (150, 4));
    assert_eq!(iris.schema().target.classes.len(), 3);
    let wine = data::load_csv(&dir.join("wine.csv"), "cultivar", Task::Classification, None).unwrap();
    assert_eq!((wine.n_rows(), wine.n_cols()), (178, 13));
    let auto = data::load_csv(&dir.join("auto_mpg.csv"), "mpg", Task::Regression, None).unwrap();
    assert_eq!(auto.n_rows(), 398);
    let hp = auto.schema().columns.iter().position(|c| c.name == "horsepower").unwrap();
    assert_eq!(auto.column(hp).filter(Cell::is_missing).count(), 6);
    assert!(!auto.schema().columns.iter().find(|c| c.name == "origin").unwrap().is_numeric());
}
