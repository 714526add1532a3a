use ndarray::Array2;
use scribcod::metrics::{e_measure, mae, s_measure, weighted_f_measure, EvalPair};
use serde::Deserialize;

const TOL: f64 = 1e-6;

#[derive(Deserialize)]
struct Scores {
    mae: f64,
    s_measure: f64,
    e_measure: f64,
    weighted_f: f64,
}

#[derive(Deserialize)]
struct Case {
    name: String,
    prediction: Vec<Vec<f64>>,
    ground_truth: Vec<Vec<u8>>,
    scores: Scores,
}

#[derive(Deserialize)]
struct Fixture {
    cases: Vec<Case>,
}

fn pair(case: &Case) -> EvalPair {
    let (h, w) = (case.prediction.len(), case.prediction[0].len());
    let p = Array2::from_shape_fn((h, w), |(r, c)| case.prediction[r][c]);
    let g = Array2::from_shape_fn((h, w), |(r, c)| case.ground_truth[r][c] == 1);
    EvalPair::new(p.view(), &g).unwrap()
}

fn fixture() -> Fixture {
    serde_json::from_str(include_str!("fixtures/metric_oracle.json")).unwrap()
}

#[test]
fn metrics_match_reference_oracle() {
    let fixture = fixture();
    assert!(fixture.cases.iter().filter(|c| c.name.starts_with("random_")).count() >= 20);
    for case in &fixture.cases {
        let pair = pair(case);
        let got = [mae(&pair), s_measure(&pair), e_measure(&pair), weighted_f_measure(&pair)];
        let want = [case.scores.mae, case.scores.s_measure, case.scores.e_measure, case.scores.weighted_f];
        for (name, (g, w)) in ["mae", "s_measure", "e_measure", "weighted_f"].iter().zip(got.iter().zip(want)) {
            assert!((g - w).abs() < TOL, "{}: {name} = {g}, oracle {w}", case.name);
        }
    }
}

#[test]
fn pinned_examples() {
    let fixture = fixture();
    let by_name = |n: &str| fixture.cases.iter().find(|c| c.name == n).unwrap();
    let zero = pair(by_name("all_zero_prediction"));
    assert!((e_measure(&zero) - 0.25).abs() < 1e-12);
    let disk = by_name("half_overlap_disk");
    assert!(weighted_f_measure(&pair(disk)) > 0.0);
}
