use std::fs;

use kssnet::io::*;
use kssnet::Error;
use kssnet_core::graph::AdjacencyMatrix;
use kssnet_core::ingest::{AnnotationSet, EmbeddingTable, KnowledgeEdge, KnowledgeEdgeList, LabelVocabulary};
use kssnet_core::Matrix;
use proptest::prelude::*;

fn finite() -> impl Strategy<Value = f64> {
    prop_oneof![-1e6..1e6f64, Just(0.0), Just(-0.0), Just(f64::MIN_POSITIVE), Just(1.0 / 3.0), Just(1e-300)]
}

fn matrix() -> impl Strategy<Value = Matrix> {
    (1usize..6, 1usize..6).prop_flat_map(|(r, c)| prop::collection::vec(finite(), r * c).prop_map(move |v| Matrix::from_vec(r, c, v).unwrap()))
}

fn vocab(n: usize) -> LabelVocabulary {
    LabelVocabulary::new((0..n).map(|i| if i % 3 == 0 { format!("label {i}") } else { format!("l{i}") })).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn dense_matrix_round_trips_exactly(m in matrix()) {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.txt");
        write_matrix_text(&p, &m, false).unwrap();
        let back = read_matrix_text(&p).unwrap();
        prop_assert_eq!(back.shape(), m.shape());
        for (a, b) in back.as_slice().iter().zip(m.as_slice()) {
            prop_assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn adjacency_round_trips_in_both_formats(n in 1usize..8, seed in prop::collection::vec(0.0..2.0f64, 64)) {
        let a = AdjacencyMatrix::new(Matrix::from_fn(n, n, |i, j| seed[(i * 8 + j).min(63)])).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let (t, b) = (dir.path().join("a.txt"), dir.path().join("a.bin"));
        write_adjacency_text(&t, &a).unwrap();
        write_adjacency_binary(&b, &a).unwrap();
        prop_assert_eq!(&read_adjacency(&t).unwrap(), &a);
        prop_assert_eq!(&read_adjacency(&b).unwrap(), &a);
        prop_assert_eq!(&read_adjacency_binary(&b).unwrap(), &a);
    }

    #[test]
    fn annotations_round_trip(sets in prop::collection::vec(prop::collection::btree_set(0usize..7, 0..4), 1..20)) {
        let v = vocab(7);
        let ann = AnnotationSet::from_label_sets(7, sets).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("ann.tsv");
        write_annotations(&p, &ann, &v).unwrap();
        let back = load_annotations(&p, &v).unwrap();
        prop_assert_eq!(back.samples(), ann.samples());
    }

    #[test]
    fn knowledge_edges_round_trip(raw in prop::collection::vec((0usize..5, 0usize..5, 0.0..1.0f64), 0..12)) {
        let v = vocab(5);
        let edges = raw.iter().map(|&(head, tail, weight)| KnowledgeEdge { head, tail, relation: "RelatedTo".into(), weight }).collect();
        let list = KnowledgeEdgeList::new(5, edges).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("kg.tsv");
        write_knowledge_edges(&p, &list, &v).unwrap();
        let back = load_knowledge_edges(&p, &v).unwrap();
        prop_assert_eq!(back.edges(), list.edges());
    }
}

#[test]
fn vocabulary_and_embedding_table_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let v = vocab(4);
    let p = dir.path().join("vocab.txt");
    write_vocabulary(&p, &v).unwrap();
    assert_eq!(load_vocabulary(&p).unwrap(), v);

    let mut table = EmbeddingTable::new(3).unwrap();
    table.insert("dog", vec![0.1, -2.5, 1e-20]).unwrap();
    table.insert("hot", vec![1.0 / 3.0, 0.0, 7.0]).unwrap();
    let p = dir.path().join("vectors.txt");
    write_embedding_table(&p, &table).unwrap();
    let back = load_embedding_table(&p).unwrap();
    assert_eq!(back.get("dog"), table.get("dog"));
    assert_eq!(back.get("hot"), table.get("hot"));
}

#[test]
fn checkpoint_round_trips_named_tensors() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("model.ckpt");
    let tensors = vec![matrix_tensor("a", &Matrix::from_rows(&[[1.0, 2.0], [3.0, f64::MIN_POSITIVE]])), matrix_tensor("b.c", &Matrix::zeros(1, 3))];
    write_checkpoint(&p, &tensors).unwrap();
    assert_eq!(read_checkpoint(&p).unwrap(), tensors);
    assert_eq!(tensor_matrix(&tensors, "b.c", &p).unwrap(), Matrix::zeros(1, 3));
    assert!(tensor_matrix(&tensors, "missing", &p).is_err());
}

#[test]
fn malformed_inputs_are_reported_with_location() {
    let dir = tempfile::tempdir().unwrap();
    let v = vocab(3);
    let p = dir.path().join("kg.tsv");
    fs::write(&p, "# comment\nl1\tIsA\tl2\t0.5\nl1\tIsA\tl2\n").unwrap();
    match load_knowledge_edges(&p, &v) {
        Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
        other => panic!("{other:?}"),
    }
    fs::write(&p, "l1\tIsA\tl2\t-0.5\n").unwrap();
    assert!(matches!(load_knowledge_edges(&p, &v), Err(Error::Parse { line: 1, .. })));

    let m = dir.path().join("m.txt");
    fs::write(&m, "2 2\n1 2\n3\n").unwrap();
    assert!(read_matrix_text(&m).is_err());

    let b = dir.path().join("a.bin");
    fs::write(&b, b"KSSADJ\0\0garbage").unwrap();
    assert!(read_adjacency(&b).is_err());
    assert!(matches!(read_checkpoint(&b), Err(Error::Format { .. })));
}

#[test]
fn missing_files_are_read_errors() {
    let err = load_vocabulary(std::path::Path::new("/nonexistent/vocab.txt")).unwrap_err();
    assert!(matches!(err, Error::Read { .. }));
    assert_eq!(err.exit_code(), 1);
}
