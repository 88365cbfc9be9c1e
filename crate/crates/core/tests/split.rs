mod common;

use common::{check_invariants, random_dataset};
use proptest::prelude::*;
use synthdetect::split::{assign_folds, parse_assignment, write_assignment_string};

#[test]
fn twenty_random_manifests_four_folds() {
    for seed in 0..20 {
        let n_uf = 4 + (seed as usize % 5);
        let (entries, tax) = random_dataset(seed, 1000, n_uf);
        check_invariants(&entries, &tax, 4, seed);
    }
}

#[test]
fn assignment_file_round_trips() {
    let (entries, tax) = random_dataset(1, 300, 4);
    let mut a = assign_folds(&entries, &tax, 4, 9).unwrap();
    a.meta = vec![("tool".into(), "test".into())];
    assert_eq!(parse_assignment(&write_assignment_string(&a)).unwrap(), a);
}

#[test]
fn too_few_folds_is_an_error() {
    let (entries, tax) = random_dataset(2, 50, 4);
    assert!(assign_folds(&entries, &tax, 1, 0).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn invariants_hold(seed in any::<u64>(), n in 90usize..400, n_uf in 0usize..9, folds in 2usize..6) {
        prop_assume!(n_uf == 0 || n_uf >= folds);
        let (entries, tax) = random_dataset(seed, n, n_uf);
        check_invariants(&entries, &tax, folds, seed);
    }
}

#[test]
fn fewer_uf_groups_than_folds_is_an_error() {
    let (entries, tax) = random_dataset(3, 200, 3);
    assert!(assign_folds(&entries, &tax, 4, 0).is_err());
    assert!(assign_folds(&entries, &tax, 3, 0).is_ok());
}
