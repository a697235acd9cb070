use genex_core::selftest::{check_masks, check_pagerank, mask_case, run_quick};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn masked_cells_are_exactly_zero(m in 1usize..=8, n in 1usize..=32, seed in any::<u64>()) {
        if let Err(e) = mask_case(m, n, seed) {
            prop_assert!(false, "{}", e);
        }
    }
}

#[test]
fn query_sized_documents_hold() {
    // every document token is a query token: exercises the lifted mask
    for seed in 0..5 {
        mask_case(8, 1, seed).unwrap();
        mask_case(1, 1, seed).unwrap();
    }
}

#[test]
fn batch_check_passes() {
    let out = check_masks(20, 9);
    assert!(out.passed, "{out}");
}

#[test]
fn pagerank_check_passes_on_small_graphs() {
    let out = check_pagerank(4);
    assert!(out.passed, "{out}");
}

#[test]
fn quick_suite_is_deterministic() {
    let a: Vec<String> = run_quick(3).iter().map(ToString::to_string).collect();
    let b: Vec<String> = run_quick(3).iter().map(ToString::to_string).collect();
    for line in &a {
        assert!(line.starts_with("PASS"), "{line}");
    }
    assert_eq!(a, b);
}
