use std::path::PathBuf;

use polyglot_core::corpus::{load_human_ratings, load_model_ratings, QualityReport};

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn r2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

#[test]
fn rating_fixtures_reproduce_published_quality_tables() {
    let human = load_human_ratings(&fixture("human_ratings.jsonl")).unwrap();
    let model = load_model_ratings(&fixture("model_ratings.jsonl")).unwrap();
    let report = QualityReport::compute(&human, &model).unwrap();

    let expected_human = [
        ("en_es", 0.94, 0.96, 89.69),
        ("en_hi", 0.93, 0.96, 89.11),
        ("en_ja", 0.93, 0.96, 89.88),
        ("en_ru", 0.93, 0.96, 90.43),
        ("en_zh", 0.94, 0.96, 90.79),
    ];
    for (pair, a1, a2, agree) in expected_human {
        let h = report.human[pair];
        assert_eq!((r2(h.a1_mean), r2(h.a2_mean)), (a1, a2), "{pair}");
        assert!((h.agreement_pct - agree).abs() <= 0.01, "{pair}: {}", h.agreement_pct);
    }

    let expected_model = [
        ("en_hi", 4.88, 0.40),
        ("en_es", 4.90, 0.48),
        ("en_ru", 4.95, 0.30),
        ("en_zh", 4.93, 0.39),
        ("en_ja", 4.87, 0.55),
    ];
    for (pair, mean, sd) in expected_model {
        let m = report.model[pair];
        assert_eq!(m.n, 257);
        assert_eq!((r2(m.rating_mean), r2(m.rating_stdev)), (mean, sd), "{pair}");
    }

    let text = report.render();
    assert!(text.contains("en_ru") && text.contains("4.95"));
}
