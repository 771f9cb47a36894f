use proptest::prelude::*;

use super::*;

fn p(id: &str, truth: usize, pred: usize, g: &str) -> Prediction {
    Prediction {
        id: id.into(),
        truth,
        pred,
        attrs: [("gender".to_string(), g.to_string())].into_iter().collect(),
    }
}

fn names(n: &[&str]) -> Vec<String> {
    n.iter().map(|s| s.to_string()).collect()
}

#[test]
fn recall_examples() {
    let preds = vec![
        p("1", 0, 0, "A"),
        p("2", 0, 0, "A"),
        p("3", 1, 1, "A"),
        p("4", 1, 0, "A"),
        p("5", 0, 0, "B"),
    ];
    let m = recall_matrix(&preds, "gender", None).unwrap();
    assert_eq!(m.groups, names(&["A", "B"]));
    assert_eq!(m.recall[0], vec![Some(1.0), Some(0.5)]);
    assert_eq!(m.recall[1], vec![Some(1.0), None]);
    assert_eq!(m.support[1], vec![1, 0]);
    assert!(matches!(recall_matrix(&preds, "age", None), Err(Error::UnknownAttribute(_))));
    let perfect: Vec<_> = (0..6).map(|i| p(&i.to_string(), i % 3, i % 3, "A")).collect();
    let m = recall_matrix(&perfect, "gender", None).unwrap();
    assert!(m.recall[0].iter().all(|v| *v == Some(1.0)));
}

#[test]
fn fairness_examples() {
    let (f, d) = fairness_from_sums(&names(&["A", "B"]), &[2.4, 2.1]).unwrap();
    assert_eq!(d, 0);
    assert!((f - 0.875).abs() < 1e-15);
    let (f, d) = fairness_from_sums(&names(&["x", "y", "z"]), &[2.0, 1.9, 1.0]).unwrap();
    assert_eq!((f, d), (0.5, 0));
    let (f, d) = fairness_from_sums(&names(&["b", "a"]), &[1.5, 1.5]).unwrap();
    assert_eq!((f, d), (1.0, 1));
    assert!(fairness_from_sums(&names(&["a", "b"]), &[0.0, 0.0]).is_err());
}

#[test]
fn fairness_restricts_to_shared_classes() {
    let m = RecallMatrix::from_recalls(
        "g",
        names(&["A", "B"]),
        vec![vec![Some(1.0), Some(0.5), Some(0.25)], vec![Some(0.5), None, Some(0.25)]],
        vec![vec![2, 2, 4], vec![2, 0, 4]],
    )
    .unwrap();
    let f = fairness_score(&m).unwrap();
    assert_eq!(f.classes, vec![0, 2]);
    assert_eq!(f.reference, "A");
    assert_eq!(f.score, 0.75 / 1.25);
    let empty = RecallMatrix::from_recalls("g", names(&["A", "B"]), vec![vec![Some(1.0)], vec![None]], vec![vec![1], vec![0]]);
    assert!(fairness_score(&empty.unwrap()).is_err());
}

#[test]
fn mean_accuracy_examples() {
    let m = RecallMatrix::from_recalls("g", names(&["A"]), vec![vec![Some(1.0), Some(0.5)]], vec![vec![2, 2]]).unwrap();
    assert_eq!(mean_classwise_accuracy(&m).unwrap(), vec![0.75]);
    let m = RecallMatrix::from_recalls("g", names(&["A"]), vec![vec![Some(0.3); 4]], vec![vec![3; 4]]).unwrap();
    assert!((mean_classwise_accuracy(&m).unwrap()[0] - 0.3).abs() < 1e-15);
}

#[test]
fn predictions_round_trip() {
    let preds = vec![p("a", 1, 2, "M"), p("b", 0, 0, "F")];
    let text = predictions_to_string(&preds);
    assert!(text.lines().next().unwrap().contains("\"true\":1"));
    assert_eq!(parse_predictions(&text, "t").unwrap(), preds);
    assert!(matches!(parse_predictions("{\"id\":1}\n", "t"), Err(Error::Parse { line: 1, .. })));
}

fn two_attr(id: usize, truth: usize, pred: usize, g: &str, r: &str) -> Prediction {
    Prediction {
        id: id.to_string(),
        truth,
        pred,
        attrs: [("gender".to_string(), g.to_string()), ("race".to_string(), r.to_string())]
            .into_iter()
            .collect(),
    }
}

#[test]
fn intersectional_examples() {
    let mut preds = Vec::new();
    for (i, (g, r)) in [("M", "a"), ("M", "b"), ("F", "a"), ("F", "b")].iter().enumerate() {
        for c in 0..2 {
            preds.push(two_attr(i * 10 + c, c, c, g, r));
        }
    }
    let rep = intersectional_report(&preds, ("gender", "race"), None, None).unwrap();
    assert_eq!(rep.matrix.groups.len(), 4);
    assert_eq!(rep.fairness.score, 1.0);
    let declared = (names(&["M", "F"]), names(&["a", "b", "c"]));
    let rep = intersectional_report(&preds, ("gender", "race"), Some((&declared.0, &declared.1)), None).unwrap();
    assert_eq!(rep.dropped_groups, names(&["M*c", "F*c"]));
    let one: Vec<_> = preds.iter().filter(|p| p.attrs["gender"] == "M" && p.attrs["race"] == "a").cloned().collect();
    assert!(intersectional_report(&one, ("gender", "race"), None, None).is_err());
}

#[test]
fn render_is_deterministic_and_complete() {
    let preds = vec![p("1", 0, 0, "A"), p("2", 1, 0, "A"), p("3", 0, 0, "B"), p("4", 2, 2, "B"), p("5", 1, 1, "B")];
    let rep = fairness_report(&preds, "gender", None).unwrap();
    let a = render_report(std::slice::from_ref(&rep), ReportFormat::Table);
    let b = render_report(std::slice::from_ref(&rep), ReportFormat::Table);
    assert_eq!(a, b);
    assert!(a.contains("Expression-wise accuracy"));
    assert!(a.contains("Mean class-wise accuracy"));
    assert!(a.contains("Fairness"));
    assert!(a.contains("n/a[1]"));
    assert!(a.contains("[1] gender=A: class 2 has no test samples"));
    let csv = render_report(&[rep], ReportFormat::Csv);
    assert!(csv.starts_with("table,attribute,group,class,metric,value\n"));
    assert!(csv.contains("fairness,gender,,,percent,"));
}

fn arb_sums() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.01f64..5.0, 2..6)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn fairness_properties(sums in arb_sums(), scale in 0.1f64..10.0, rot in 0usize..6) {
        let n: Vec<String> = (0..sums.len()).map(|i| format!("g{i}")).collect();
        let (f, d) = fairness_from_sums(&n, &sums).unwrap();
        prop_assert!(f > 0.0 && f <= 1.0);
        let scaled: Vec<f64> = sums.iter().map(|s| s * scale).collect();
        let (fs, ds) = fairness_from_sums(&n, &scaled).unwrap();
        prop_assert!((fs - f).abs() < 1e-12);
        prop_assert_eq!(ds, d);
        let k = rot % sums.len();
        let (mut rn, mut rs) = (n.clone(), sums.clone());
        rn.rotate_left(k);
        rs.rotate_left(k);
        let (fr, dr) = fairness_from_sums(&rn, &rs).unwrap();
        prop_assert_eq!(fr, f);
        prop_assert_eq!(&rn[dr], &n[d]);
        let all_equal = sums.iter().all(|&s| s == sums[0]);
        prop_assert_eq!(f == 1.0, all_equal);
    }

    #[test]
    fn recall_matches_tally(rows in prop::collection::vec((0usize..3, 0usize..3, 0usize..2), 1..200)) {
        let preds: Vec<Prediction> = rows.iter().enumerate()
            .map(|(i, &(t, y, g))| p(&i.to_string(), t, y, ["A", "B"][g])).collect();
        let m = recall_matrix(&preds, "gender", Some(3)).unwrap();
        for (gi, gname) in m.groups.iter().enumerate() {
            for c in 0..3 {
                let cell: Vec<&Prediction> = preds.iter().filter(|p| p.truth == c && &p.attrs["gender"] == gname).collect();
                prop_assert_eq!(m.support[gi][c], cell.len());
                let hits = cell.iter().filter(|p| p.pred == c).count();
                let expect = (!cell.is_empty()).then(|| hits as f64 / cell.len() as f64);
                prop_assert_eq!(m.recall[gi][c], expect);
            }
        }
    }

    #[test]
    fn dominant_group_is_reference(base in prop::collection::vec(0.05f64..0.9, 3), boost in 0.01f64..0.1) {
        let top: Vec<Option<f64>> = base.iter().map(|b| Some(b + boost)).collect();
        let low: Vec<Option<f64>> = base.iter().map(|&b| Some(b)).collect();
        let m = RecallMatrix::from_recalls("g", names(&["z", "a"]), vec![top, low], vec![vec![1; 3]; 2]).unwrap();
        prop_assert_eq!(fairness_score(&m).unwrap().reference, "z");
    }
}
