use kssnet_core::metrics::{average_precision, map_score, prf_suite, DecisionRule, ScoreMatrix};
use kssnet_core::{Error, Matrix};
use proptest::prelude::*;

/// AP from ranks: a sample ranks above positive `i` when its score is higher,
/// or equal with a smaller index.
fn ap_oracle(scores: &[f64], targets: &[f64]) -> Option<f64> {
    let positives: Vec<usize> = (0..scores.len()).filter(|&i| targets[i] == 1.0).collect();
    if positives.is_empty() {
        return None;
    }
    let above = |j: usize, i: usize| scores[j] > scores[i] || (scores[j] == scores[i] && j < i);
    let total: f64 = positives
        .iter()
        .map(|&i| {
            let rank = (0..scores.len()).filter(|&j| above(j, i)).count() + 1;
            let hits = positives.iter().filter(|&&j| above(j, i)).count() + 1;
            hits as f64 / rank as f64
        })
        .sum();
    Some(total / positives.len() as f64)
}

struct Prf {
    cp: f64,
    cr: f64,
    op: f64,
    or: f64,
}

fn prf_oracle(pred: &[Vec<bool>], truth: &[Vec<bool>]) -> Prf {
    let classes = pred.first().map_or(0, Vec::len);
    let count = |f: &dyn Fn(usize, usize) -> bool, j: Option<usize>| {
        (0..pred.len()).flat_map(|i| (0..classes).map(move |c| (i, c))).filter(|&(i, c)| j.is_none_or(|j| j == c) && f(i, c)).count()
    };
    let tp = |i: usize, c: usize| pred[i][c] && truth[i][c];
    let predicted = |i: usize, c: usize| pred[i][c];
    let actual = |i: usize, c: usize| truth[i][c];
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let included: Vec<usize> = (0..classes).filter(|&c| count(&actual, Some(c)) > 0).collect();
    let mean = |f: &dyn Fn(usize) -> f64| if included.is_empty() { 0.0 } else { included.iter().map(|&c| f(c)).sum::<f64>() / included.len() as f64 };
    Prf {
        cp: mean(&|c| ratio(count(&tp, Some(c)), count(&predicted, Some(c)))),
        cr: mean(&|c| ratio(count(&tp, Some(c)), count(&actual, Some(c)))),
        op: ratio(count(&tp, None), count(&predicted, None)),
        or: ratio(count(&tp, None), count(&actual, None)),
    }
}

fn f1(p: f64, r: f64) -> f64 {
    if p + r > 0.0 {
        2.0 * p * r / (p + r)
    } else {
        0.0
    }
}

fn check_instance(scores: &Matrix, targets: &Matrix, rule: DecisionRule) {
    let sm = ScoreMatrix::new(scores.clone(), targets.clone()).unwrap();
    let per_class: Vec<Option<f64>> = (0..scores.cols())
        .map(|j| {
            let s: Vec<f64> = (0..scores.rows()).map(|i| scores[(i, j)]).collect();
            let t: Vec<f64> = (0..scores.rows()).map(|i| targets[(i, j)]).collect();
            ap_oracle(&s, &t)
        })
        .collect();
    let included: Vec<f64> = per_class.iter().flatten().copied().collect();
    match map_score(&sm) {
        Ok(report) => {
            let expected = included.iter().sum::<f64>() / included.len() as f64;
            assert!((report.map - expected).abs() <= 1e-12);
            assert_eq!(report.excluded, per_class.len() - included.len());
            for (got, want) in report.per_class.iter().zip(&per_class) {
                assert_eq!(got.is_some(), want.is_some());
                if let (Some(g), Some(w)) = (got, want) {
                    assert!((g - w).abs() <= 1e-12);
                }
            }
        }
        Err(e) => {
            assert_eq!(e, Error::AllClassesExcluded);
            assert!(included.is_empty());
        }
    }

    let pred: Vec<Vec<bool>> = (0..scores.rows())
        .map(|i| {
            let row = scores.row(i);
            match rule {
                DecisionRule::Threshold(t) => row.iter().map(|&s| s >= t).collect(),
                DecisionRule::SigmoidThreshold(t) => row.iter().map(|&s| 1.0 / (1.0 + (-s).exp()) >= t).collect(),
                DecisionRule::TopK(k) => (0..row.len())
                    .map(|c| (0..row.len()).filter(|&d| row[d] > row[c] || (row[d] == row[c] && d < c)).count() < k)
                    .collect(),
            }
        })
        .collect();
    let truth: Vec<Vec<bool>> = (0..targets.rows()).map(|i| targets.row(i).iter().map(|&t| t == 1.0).collect()).collect();
    let want = prf_oracle(&pred, &truth);
    let got = prf_suite(&sm, rule);
    for (g, w) in [(got.cp, want.cp), (got.cr, want.cr), (got.op, want.op), (got.or, want.or)] {
        assert!((g - w).abs() <= 1e-12, "{got:?}");
    }
    assert!((got.cf1 - f1(want.cp, want.cr)).abs() <= 1e-12);
    assert!((got.of1 - f1(want.op, want.or)).abs() <= 1e-12);
}

#[test]
fn exhaustive_small_instances() {
    // every 3-level score vector and 0/1 target vector on 4 samples, as a 4x2 instance
    let levels = [0.0, 0.5, 1.0];
    let mut checked = 0;
    for code in 0..81usize {
        let s: Vec<f64> = (0..4).map(|i| levels[(code / 3usize.pow(i)) % 3]).collect();
        for tcode in 0..16usize {
            let t: Vec<f64> = (0..4).map(|i| ((tcode >> i) & 1) as f64).collect();
            let scores = Matrix::from_fn(4, 2, |i, j| if j == 0 { s[i] } else { s[3 - i] - 0.25 });
            let targets = Matrix::from_fn(4, 2, |i, j| if j == 0 { t[i] } else { t[(i + 1) % 4] });
            for rule in [DecisionRule::Threshold(0.5), DecisionRule::SigmoidThreshold(0.6), DecisionRule::TopK(1)] {
                check_instance(&scores, &targets, rule);
            }
            checked += 1;
        }
    }
    assert_eq!(checked, 81 * 16);
}

fn instance(max_rows: usize, max_cols: usize) -> impl Strategy<Value = (Matrix, Matrix)> {
    (1..=max_rows, 1..=max_cols).prop_flat_map(|(r, c)| {
        (
            prop::collection::vec(prop_oneof![(-3i32..=3).prop_map(|v| v as f64 / 2.0), -3.0..3.0f64], r * c),
            prop::collection::vec(prop::bool::ANY, r * c),
        )
            .prop_map(move |(s, t)| {
                (Matrix::from_vec(r, c, s).unwrap(), Matrix::from_vec(r, c, t.into_iter().map(|b| b as u8 as f64).collect()).unwrap())
            })
    })
}

fn rule() -> impl Strategy<Value = DecisionRule> {
    prop_oneof![
        (-2.0..2.0f64).prop_map(DecisionRule::Threshold),
        (0.0..1.0f64).prop_map(DecisionRule::SigmoidThreshold),
        (0usize..5).prop_map(DecisionRule::TopK),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn random_instances_match_oracle((scores, targets) in instance(12, 6), rule in rule()) {
        check_instance(&scores, &targets, rule);
    }
}

proptest! {
    #[test]
    fn ap_is_invariant_under_increasing_maps(s in prop::collection::vec(-5.0..5.0f64, 1..20), seed in any::<u64>()) {
        let t: Vec<f64> = s.iter().enumerate().map(|(i, _)| ((seed >> (i % 64)) & 1) as f64).collect();
        prop_assume!(t.contains(&1.0));
        let base = average_precision(&s, &t).unwrap();
        let squashed: Vec<f64> = s.iter().map(|v| 1.0 / (1.0 + (-v).exp())).collect();
        let shifted: Vec<f64> = s.iter().map(|v| 3.0 * v + 7.0).collect();
        prop_assert!((average_precision(&squashed, &t).unwrap() - base).abs() <= 1e-12);
        prop_assert!((average_precision(&shifted, &t).unwrap() - base).abs() <= 1e-12);
        prop_assert!((0.0..=1.0).contains(&base));
    }

    #[test]
    fn map_ignores_class_order(
        (scores, targets) in instance(10, 6),
        seed in any::<u64>(),
    ) {
        let c = scores.cols();
        let mut perm: Vec<usize> = (0..c).collect();
        perm.rotate_left((seed as usize) % c);
        let a = map_score(&ScoreMatrix::new(scores.clone(), targets.clone()).unwrap());
        let b = map_score(&ScoreMatrix::new(scores.permute_cols(&perm), targets.permute_cols(&perm)).unwrap());
        match (a, b) {
            (Ok(a), Ok(b)) => prop_assert!((a.map - b.map).abs() <= 1e-12),
            (a, b) => prop_assert_eq!(a.is_err(), b.is_err()),
        }
    }
}

#[test]
fn perfect_scores_give_full_marks() {
    let targets = Matrix::from_rows(&[[1.0, 0.0, 1.0], [0.0, 1.0, 0.0], [1.0, 1.0, 0.0]]);
    let sm = ScoreMatrix::new(targets.map(|t| if t == 1.0 { 4.0 } else { -4.0 }), targets).unwrap();
    assert_eq!(map_score(&sm).unwrap().map, 1.0);
    let prf = prf_suite(&sm, DecisionRule::default());
    assert_eq!((prf.cp, prf.cr, prf.cf1, prf.op, prf.or, prf.of1), (1.0, 1.0, 1.0, 1.0, 1.0, 1.0));
}
