use genex_core::selftest::{run_learning_with, LearningPlan};

fn small() -> LearningPlan {
    LearningPlan {
        overfit_n: 8,
        overfit_epochs: 2,
        train_n: 16,
        test_n: 4,
        train_epochs: 1,
        ablation_train_n: 8,
        ablation_epochs: 1,
        ablation_seeds: 2,
        ..LearningPlan::default()
    }
}

#[test]
fn learning_report_is_deterministic() {
    let a = run_learning_with(&small(), 3);
    let names: Vec<&str> = a.iter().map(|c| c.name.as_str()).collect();
    assert_eq!(names, ["learn-overfit", "learn-heldout", "learn-ablation"]);
    assert!(a.iter().all(|c| !c.detail.starts_with("error")), "{a:?}");
    assert_eq!(a, run_learning_with(&small(), 3));
}
