use kssnet_core::graph::{conditional_probabilities, cooccurrence_counts};
use kssnet_core::ingest::{build_initial_embeddings, EmbeddingTable, LabelVocabulary};
use kssnet_core::lateral::FeatureMap;
use kssnet_core::metrics::{map_score, ScoreMatrix};
use kssnet_core::synthetic::{expected_conditionals, generate, Dataset, SyntheticConfig, COLORS, SHAPES};
use kssnet_core::Matrix;
use proptest::prelude::*;

const WORDS: [&str; 6] = ["hot", "dog", "traffic", "light", "cell", "phone"];

fn table(rows: &[Vec<f64>]) -> EmbeddingTable {
    let mut t = EmbeddingTable::new(3).unwrap();
    for (w, r) in WORDS.iter().zip(rows) {
        t.insert(*w, r.clone()).unwrap();
    }
    t
}

fn rows() -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(-1.0..1.0f64, 3), WORDS.len())
}

proptest! {
    #[test]
    fn rows_depend_only_on_their_own_words(base in rows(), noise in prop::collection::vec(-1.0..1.0f64, 3)) {
        let vocab = LabelVocabulary::new(["hot dog", "traffic light"]).unwrap();
        let e = build_initial_embeddings(&table(&base), &vocab).unwrap();
        let mut perturbed = base.clone();
        perturbed[4] = noise.clone();
        perturbed[5] = noise;
        prop_assert_eq!(build_initial_embeddings(&table(&perturbed), &vocab).unwrap(), e.clone());
        for k in 0..3 {
            prop_assert!((e[(0, k)] - (base[0][k] + base[1][k]) / 2.0).abs() <= 1e-15);
        }
    }

    #[test]
    fn word_order_within_a_label_is_irrelevant(base in rows()) {
        let t = table(&base);
        let a = build_initial_embeddings(&t, &LabelVocabulary::new(["cell phone", "hot-dog"]).unwrap()).unwrap();
        let b = build_initial_embeddings(&t, &LabelVocabulary::new(["phone cell", "dog hot"]).unwrap()).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn vocabulary_order_permutes_rows(base in rows()) {
        let t = table(&base);
        let a = build_initial_embeddings(&t, &LabelVocabulary::new(["hot dog", "light", "cell phone"]).unwrap()).unwrap();
        let b = build_initial_embeddings(&t, &LabelVocabulary::new(["cell phone", "hot dog", "light"]).unwrap()).unwrap();
        prop_assert_eq!(a.permute_rows(&[1, 2, 0]), b);
    }
}

#[test]
fn whole_name_key_wins_over_words() {
    let mut t = table(&vec![vec![1.0, 2.0, 3.0]; 6]);
    t.insert("hot dog", vec![9.0, 9.0, 9.0]).unwrap();
    let e = build_initial_embeddings(&t, &LabelVocabulary::new(["Hot Dog"]).unwrap()).unwrap();
    assert_eq!(e.row(0), &[9.0, 9.0, 9.0]);
}

#[test]
fn generator_matches_closed_form_conditionals() {
    let cfg = SyntheticConfig { samples: 20_000, image_size: 12, noise_std: 0.0, seed: 9, ..SyntheticConfig::default() };
    let data = generate(&cfg).unwrap();
    let p = conditional_probabilities(&cooccurrence_counts(&data.annotations, 8).unwrap());
    let expected = expected_conditionals(&cfg);
    assert!(p.max_abs_diff(&expected) < 0.03, "{}", p.max_abs_diff(&expected));
}

/// Best response of each sprite template anywhere in the image: the sum of
/// the color projection over "on" pixels minus the same over "off" pixels.
fn template_features(x: &FeatureMap) -> Vec<f64> {
    let (h, w) = (x.height(), x.width());
    let px = |c: usize, y: usize, xx: usize| x.channel(c)[y * w + xx];
    let mut out = Vec::new();
    for (_, color) in COLORS {
        let norm = color.iter().map(|v| v * v).sum::<f64>().sqrt();
        for (_, shape) in SHAPES {
            let mut best = f64::NEG_INFINITY;
            for oy in 0..=h - 3 {
                for ox in 0..=w - 3 {
                    let mut r = 0.0;
                    for (dy, row) in shape.iter().enumerate() {
                        for (dx, &on) in row.iter().enumerate() {
                            let proj: f64 = (0..3).map(|c| color[c] * px(c, oy + dy, ox + dx)).sum::<f64>() / norm;
                            r += if on == 1 { proj } else { -proj };
                        }
                    }
                    best = best.max(r);
                }
            }
            out.push(best);
        }
    }
    out
}

/// One logistic regression per label over all template responses.
fn fit_and_score(train: &Dataset, test: &Dataset) -> Matrix {
    let feats = |d: &Dataset| -> Vec<Vec<f64>> { d.inputs.iter().map(template_features).collect() };
    let (xtr, xte) = (feats(train), feats(test));
    let d = xtr[0].len();
    let mean: Vec<f64> = (0..d).map(|k| xtr.iter().map(|r| r[k]).sum::<f64>() / xtr.len() as f64).collect();
    let sd: Vec<f64> =
        (0..d).map(|k| (xtr.iter().map(|r| (r[k] - mean[k]).powi(2)).sum::<f64>() / xtr.len() as f64).sqrt().max(1e-9)).collect();
    let z = |r: &Vec<f64>| -> Vec<f64> { (0..d).map(|k| (r[k] - mean[k]) / sd[k]).collect() };
    let (ztr, zte): (Vec<Vec<f64>>, Vec<Vec<f64>>) = (xtr.iter().map(z).collect(), xte.iter().map(z).collect());
    let targets = train.targets();
    let n = targets.cols();
    let mut scores = Matrix::zeros(test.len(), n);
    for label in 0..n {
        let mut w = vec![0.0; d + 1];
        for _ in 0..300 {
            let mut g = vec![0.0; d + 1];
            for (i, row) in ztr.iter().enumerate() {
                let s = w[d] + row.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>();
                let err = 1.0 / (1.0 + (-s).exp()) - targets[(i, label)];
                for k in 0..d {
                    g[k] += err * row[k];
                }
                g[d] += err;
            }
            for k in 0..=d {
                w[k] -= 0.5 * g[k] / ztr.len() as f64;
            }
        }
        for (i, row) in zte.iter().enumerate() {
            scores[(i, label)] = w[d] + row.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>();
        }
    }
    scores
}

#[test]
fn synthetic_labels_are_linearly_recoverable_from_templates() {
    let base = SyntheticConfig { samples: 600, ..SyntheticConfig::default() };
    let train = generate(&SyntheticConfig { seed: 1, ..base.clone() }).unwrap();
    let test = generate(&SyntheticConfig { seed: 2, samples: 300, ..base }).unwrap();
    let scores = fit_and_score(&train, &test);
    let map = map_score(&ScoreMatrix::new(scores, test.targets()).unwrap()).unwrap().map;
    assert!(map >= 0.95, "template oracle mAP {map}");
}
