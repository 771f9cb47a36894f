use std::collections::BTreeMap;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;

fn gender_schema() -> AttributeSchema {
    AttributeSchema::new(vec![
        Attribute::new("gender", &["male", "female"]),
        Attribute::new("race", &["a", "b", "c"]),
    ])
    .unwrap()
}

fn rec(path: &str, expr: usize, gender: &str, race: &str) -> Record {
    Record {
        path: path.into(),
        expression: expr,
        attrs: [("gender".to_string(), gender.to_string()), ("race".to_string(), race.to_string())]
            .into_iter()
            .collect(),
    }
}

fn manifest(records: Vec<Record>) -> Result<DatasetManifest> {
    DatasetManifest::new(gender_schema(), [1, 4, 4], 7, Split::Train, records)
}

#[test]
fn manifest_round_trip_and_order() {
    let m = manifest(vec![rec("c.png", 1, "male", "a"), rec("a.png", 0, "female", "b"), rec("b.png", 6, "male", "c")])
        .unwrap();
    assert_eq!(m.len(), 3);
    let paths: Vec<_> = m.records.iter().map(|r| r.path.as_str()).collect();
    assert_eq!(paths, ["a.png", "b.png", "c.png"]);
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("m.json");
    write_manifest(&m, &p).unwrap();
    let back = load_manifest(&p).unwrap();
    assert_eq!(back, m);
    let p2 = dir.path().join("m2.json");
    write_manifest(&back, &p2).unwrap();
    assert_eq!(std::fs::read(&p).unwrap(), std::fs::read(&p2).unwrap());
    let text = std::fs::read_to_string(&p).unwrap();
    let order: Vec<usize> = ["\"schema\"", "\"resolution\"", "\"num_classes\"", "\"split\"", "\"records\""]
        .iter()
        .map(|k| text.find(k).unwrap())
        .collect();
    assert!(order.windows(2).all(|w| w[0] < w[1]));
}

#[test]
fn manifest_errors() {
    assert!(matches!(
        manifest(vec![rec("a.png", 9, "male", "a")]),
        Err(Error::LabelOutOfRange { label: 9, num_classes: 7, .. })
    ));
    let dup = AttributeSchema::new(vec![Attribute::new("gender", &["male", "male"])]);
    assert!(matches!(dup, Err(Error::Schema { .. })));
    let mut r = rec("a.png", 0, "male", "a");
    r.attrs.remove("race");
    match manifest(vec![r]) {
        Err(Error::Schema { record, field, .. }) => {
            assert_eq!(record, "a.png");
            assert_eq!(field, "attrs.race");
        }
        other => panic!("{other:?}"),
    }
    assert!(manifest(vec![rec("a.png", 0, "robot", "a")]).is_err());
    assert!(manifest(vec![rec("a.png", 0, "male", "a"), rec("a.png", 1, "male", "a")]).is_err());
    assert!(matches!(load_manifest(Path::new("/nonexistent/m.json")), Err(Error::Io { .. })));
    assert!(matches!(DatasetManifest::from_str_at("{", "x"), Err(Error::Parse { .. })));
}

#[test]
fn partition_examples() {
    let records = (0..10)
        .map(|i| rec(&format!("{i:02}.png"), 0, if i < 6 { "male" } else { "female" }, "a"))
        .collect();
    let m = manifest(records).unwrap();
    let parts = m.partition_by_attribute("gender").unwrap();
    assert_eq!(parts.iter().map(|p| p.len()).collect::<Vec<_>>(), [6, 4]);
    let race = m.partition_by_attribute("race").unwrap();
    assert_eq!(race.iter().map(|p| p.len()).collect::<Vec<_>>(), [10, 0, 0]);
    assert!(matches!(m.partition_by_attribute("height"), Err(Error::UnknownAttribute(_))));
}

#[test]
fn product_attribute() {
    let m = manifest(vec![rec("a.png", 0, "female", "c"), rec("b.png", 0, "male", "b")]).unwrap();
    let p = m.resolve_attribute("gender*race").unwrap();
    assert_eq!(p.name, "gender*race");
    assert_eq!(p.values.len(), 6);
    assert_eq!(p.values[0], "male*a");
    assert_eq!(m.attribute_indices("gender*race").unwrap(), [5, 1]);
    let parts = m.partition_by_attribute("gender*race").unwrap();
    assert_eq!(parts.len(), 6);
    assert!(m.resolve_attribute("gender*gender").is_err());
}

fn img(data: Vec<f64>, c: usize, h: usize, w: usize) -> Tensor<f64> {
    Tensor::from_vec(&[c, h, w], data).unwrap()
}

fn sample(pixels: Tensor<f64>) -> ImageSample<f64> {
    ImageSample {
        pixels,
        expression: 3,
        attrs: BTreeMap::from([("group".to_string(), 1)]),
    }
}

#[test]
fn augment_identity_and_flip() {
    let x = img((0..12).map(|i| i as f64 / 12.0).collect(), 1, 3, 4);
    assert_eq!(augment_pixels(&x, false, 0.0), x);
    let f = augment_pixels(&x, true, 0.0);
    assert_eq!(f.row(0)[..4], [3.0 / 12.0, 2.0 / 12.0, 1.0 / 12.0, 0.0]);
    assert_eq!(augment_pixels(&f, true, 0.0), x);
}

#[test]
fn rotation_quarter_turn_on_square() {
    let x = img((0..9).map(|i| i as f64 / 9.0).collect(), 1, 3, 3);
    let r = rotate(&x, 90.0);
    // counter-clockwise: the top-right corner moves to the top-left
    assert!((r.data()[0] - x.data()[2]).abs() < 1e-12);
    assert!((r.data()[4] - x.data()[4]).abs() < 1e-12);
    let back = rotate(&r, -90.0);
    for (a, b) in back.data().iter().zip(x.data()) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn augment_preserves_labels_and_range() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let s = sample(img((0..48).map(|i| (i % 5) as f64 / 4.0).collect(), 3, 4, 4));
    for _ in 0..50 {
        let a = augment(&s, &mut rng);
        assert_eq!(a.expression, 3);
        assert_eq!(a.attrs, s.attrs);
        assert_eq!(a.pixels.shape(), s.pixels.shape());
        assert!(a.pixels.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }
}

#[test]
fn png_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    for c in [1, 3] {
        let x = img((0..c * 6).map(|i| (i * 17 % 256) as f64 / 255.0).collect(), c, 2, 3);
        let p = dir.path().join(format!("x{c}.png"));
        write_png(&p, &x).unwrap();
        let y = read_png::<f64>(&p).unwrap();
        assert_eq!(y.shape(), x.shape());
        for (a, b) in x.data().iter().zip(y.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }
    assert!(write_png(&dir.path().join("bad.png"), &Tensor::<f64>::zeros(&[2, 2, 2])).is_err());
}

fn small_synth(rho: f64, seed: u64) -> SynthConfig {
    SynthConfig {
        train_samples: 40,
        test_samples: 20,
        resolution: [1, 16, 16],
        rho,
        seed,
        ..SynthConfig::default()
    }
}

#[test]
fn stereotype_map() {
    let c = SynthConfig::default();
    assert_eq!((0..4).map(|k| c.stereotype(k)).collect::<Vec<_>>(), [0, 0, 0, 1]);
    let c3 = SynthConfig { num_attr_values: 3, ..SynthConfig::default() };
    assert_eq!((0..4).map(|k| c3.stereotype(k)).collect::<Vec<_>>(), [0, 0, 1, 2]);
    let sq = SynthConfig { num_classes: 2, ..SynthConfig::default() };
    assert_eq!((0..2).map(|k| sq.stereotype(k)).collect::<Vec<_>>(), [0, 1]);
}

#[test]
fn synth_is_deterministic_and_loadable() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let oa = synth_generate(&small_synth(0.9, 5), a.path()).unwrap();
    synth_generate(&small_synth(0.9, 5), b.path()).unwrap();
    for f in ["train.json", "test.json", "train/00000.png", "test/00019.png"] {
        assert_eq!(std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap(), "{f}");
    }
    let ds = Dataset::<f32>::load(&oa.train, a.path(), SYNTH_ATTRIBUTE).unwrap();
    assert_eq!(ds.pixels.shape(), &[40, 1, 16, 16]);
    assert_eq!(ds.labels.len(), 40);
    assert!(ds.groups.iter().all(|&g| g < 2));
    assert_eq!(oa.test.split, Split::Test);
}

#[test]
fn full_correlation_follows_stereotype() {
    let cfg = SynthConfig { num_classes: 2, rho: 1.0, ..small_synth(1.0, 1) };
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let s = synth_samples(&cfg, 300, cfg.rho, &mut rng);
    assert!(s.iter().all(|x| x.attr == cfg.stereotype(x.expression)));
}

#[test]
fn unbiased_split_has_no_correlation() {
    let cfg = SynthConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let s = synth_samples(&cfg, 2000, 0.5, &mut rng);
    let n = s.len() as f64;
    let a: Vec<f64> = s.iter().map(|x| x.attr as f64).collect();
    let y: Vec<f64> = s.iter().map(|x| cfg.stereotype(x.expression) as f64).collect();
    let (ma, my) = (a.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(&y).map(|(a, y)| (a - ma) * (y - my)).sum::<f64>() / n;
    let va: f64 = a.iter().map(|a| (a - ma).powi(2)).sum::<f64>() / n;
    let vy: f64 = y.iter().map(|y| (y - my).powi(2)).sum::<f64>() / n;
    assert!((cov / (va * vy).sqrt()).abs() < 0.05);
    assert!(s.iter().all(|x| x.pixels.data().iter().all(|v| (0.0..=1.0).contains(v))));
}

#[test]
fn synth_rejects_bad_config() {
    assert!(SynthConfig { rho: 1.5, ..SynthConfig::default() }.validate().is_err());
    assert!(SynthConfig { num_classes: 1, ..SynthConfig::default() }.validate().is_err());
    assert!(SynthConfig { noise: -0.1, ..SynthConfig::default() }.validate().is_err());
}

#[test]
fn balanced_batch_examples() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let even: Vec<usize> = (0..100).map(|i| i % 2).collect();
    for b in balanced_batches(&even, 2, 10, &mut rng).unwrap() {
        assert_eq!(b.iter().filter(|&&i| even[i] == 0).count(), 5);
        assert_eq!(b.len(), 10);
    }
    let skew: Vec<usize> = (0..100).map(|i| usize::from(i >= 90)).collect();
    let batches = balanced_batches(&skew, 2, 10, &mut rng).unwrap();
    assert_eq!(batches.len(), 18);
    for b in &batches {
        assert_eq!(b.iter().filter(|&&i| skew[i] == 1).count(), 5);
    }
    let majority: std::collections::BTreeSet<usize> =
        batches.iter().flatten().copied().filter(|&i| skew[i] == 0).collect();
    assert_eq!(majority.len(), 90);
    assert!(balanced_batches(&even, 2, 1, &mut rng).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn partition_is_a_set_partition(assign in prop::collection::vec((0usize..2, 0usize..3), 0..30)) {
        let g = ["male", "female"];
        let r = ["a", "b", "c"];
        let records = assign.iter().enumerate()
            .map(|(i, &(a, b))| rec(&format!("{i:03}.png"), i % 7, g[a], r[b])).collect();
        let m = manifest(records).unwrap();
        for attr in ["gender", "race", "gender*race"] {
            let parts = m.partition_by_attribute(attr).unwrap();
            let mut all: Vec<String> = parts.iter().flat_map(|p| p.records.iter().map(|r| r.path.clone())).collect();
            prop_assert_eq!(all.len(), m.len());
            all.sort();
            all.dedup();
            prop_assert_eq!(all.len(), m.len());
        }
    }

    #[test]
    fn batches_are_balanced(sizes in prop::collection::vec(1usize..40, 2..4), bs in 3usize..12, seed in 0u64..1000) {
        let group_of: Vec<usize> = sizes.iter().enumerate().flat_map(|(g, &n)| std::iter::repeat_n(g, n)).collect();
        let k = sizes.len();
        prop_assume!(bs >= k);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let batches = balanced_batches(&group_of, k, bs, &mut rng).unwrap();
        for b in &batches {
            prop_assert_eq!(b.len(), bs);
            let counts: Vec<usize> = (0..k).map(|g| b.iter().filter(|&&i| group_of[i] == g).count()).collect();
            let (lo, hi) = (counts.iter().min().unwrap(), counts.iter().max().unwrap());
            prop_assert!(hi - lo <= 1);
        }
        let seen: std::collections::BTreeSet<usize> = batches.iter().flatten().copied().collect();
        prop_assert_eq!(seen.len(), group_of.len());
    }

    #[test]
    fn augmentation_invariants(seed in 0u64..500, vals in prop::collection::vec(0.0f64..=1.0, 2 * 5 * 6)) {
        let s = sample(img(vals, 2, 5, 6));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = augment(&s, &mut rng);
        prop_assert_eq!(a.pixels.shape(), s.pixels.shape());
        prop_assert!(a.pixels.data().iter().all(|v| (0.0..=1.0).contains(v)));
        prop_assert_eq!(a.expression, s.expression);
    }
}
