use super::*;
use crate::autograd::Graph;
use crate::scalar::lit;
use crate::tensor::Tensor;

fn small_config() -> ModelConfig {
    ModelConfig {
        resolution: [1, 16, 16],
        latent_dim: 6,
        encoder_widths: vec![4, 8],
        generator_widths: vec![8, 4],
        discriminator_hidden: vec![5],
        num_classes: 4,
        classifier_grid: 2,
        classifier_channels: 4,
        ..ModelConfig::default()
    }
}

fn ramp(shape: Vec<usize>, scale: f64) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|i| ((i * 37 % 101) as f64 / 101.0 - 0.3) * scale).collect();
    Tensor::from_vec(&shape, data).unwrap()
}

#[test]
fn zero_image_with_zero_heads_gives_zero_code() {
    let mut m = Model::<f64>::new(small_config(), 3).unwrap();
    let names: Vec<String> = m.encoder.params.iter().map(|(n, _)| n.to_string()).collect();
    for n in names.iter().filter(|n| n.starts_with("mu.") || n.starts_with("logvar.")) {
        let shape = m.encoder.params.get(m.encoder.params.find(n).unwrap()).shape().to_vec();
        m.encoder.params.set(n, Tensor::zeros(&shape)).unwrap();
    }
    let code = m.encoder.encode(&Tensor::zeros(&[2, 1, 16, 16])).unwrap();
    assert!(code.mu.data().iter().all(|&v| v == 0.0));
    assert!(code.logvar.data().iter().all(|&v| v == 0.0));
    assert_eq!(code.mu.shape(), &[2, 6]);
}

#[test]
fn encoder_rejects_wrong_resolution() {
    let m = Model::<f64>::new(small_config(), 0).unwrap();
    assert!(matches!(m.encoder.encode(&Tensor::zeros(&[1, 1, 8, 8])), Err(crate::Error::Shape(_))));
}

#[test]
fn encode_is_batch_equivariant() {
    let m = Model::<f64>::new(small_config(), 1).unwrap();
    let x = ramp(vec![3, 1, 16, 16], 1.0);
    let all = m.encoder.encode(&x).unwrap();
    for i in 0..3 {
        let single = m.encoder.encode(&x.select_rows(&[i])).unwrap();
        assert_eq!(single.mu.row(0), all.mu.row(i));
        assert_eq!(single.logvar.row(0), all.logvar.row(i));
    }
    let rev = m.encoder.encode(&x.select_rows(&[2, 1, 0])).unwrap();
    assert_eq!(rev.mu.row(0), all.mu.row(2));
}

#[test]
fn reparameterize_examples() {
    let code = LatentCode::new(
        Tensor::from_vec(&[1, 2], vec![1.0, 2.0]).unwrap(),
        Tensor::zeros(&[1, 2]),
    );
    let z = code.reparameterize(Tensor::zeros(&[1, 2])).unwrap();
    assert_eq!(z.z.unwrap().data(), &[1.0, 2.0]);

    let code = LatentCode::new(
        Tensor::zeros(&[1, 2]),
        Tensor::from_vec(&[1, 2], vec![2.0 * 3f64.ln(), 0.0]).unwrap(),
    );
    let z = code.reparameterize(Tensor::full(&[1, 2], 1.0)).unwrap();
    let zv = z.z.unwrap();
    assert!((zv.data()[0] - 3.0).abs() < 1e-12);
    assert_eq!(zv.data()[1], 1.0);
    assert_eq!(z.mu, code.mu);
}

#[test]
fn generated_images_are_in_unit_range() {
    let m = Model::<f64>::new(small_config(), 2).unwrap();
    let z = ramp(vec![4, 6], 40.0);
    let img = m.generator.generate(&z).unwrap();
    assert_eq!(img.shape(), &[4, 1, 16, 16]);
    assert!(img.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    let code = m.encoder.encode(&ramp(vec![2, 1, 16, 16], 1.0)).unwrap();
    let rec = m.generator.generate(&code.mu).unwrap();
    assert!(rec.all_finite());
    assert!(m.generator.generate(&Tensor::zeros(&[1, 5])).is_err());
}

#[test]
fn discriminator_softmax_is_a_distribution() {
    let m = Model::<f64>::new(small_config(), 4).unwrap();
    let z = ramp(vec![3, 6], 2.0);
    let logits = m.discriminator.discriminate(&z).unwrap();
    assert_eq!(logits.shape(), &[3, 2]);
    for i in 0..3 {
        let r = logits.row(i);
        let mx = r.iter().cloned().fold(f64::MIN, f64::max);
        let s: f64 = r.iter().map(|v| (v - mx).exp()).sum();
        let p: f64 = r.iter().map(|v| (v - mx).exp() / s).sum();
        assert!((p - 1.0).abs() < 1e-6);
    }
    let twice = z.select_rows(&[0, 0]);
    let l = m.discriminator.discriminate(&twice).unwrap();
    assert_eq!(l.row(0), l.row(1));
}

#[test]
fn classifier_shapes_and_permutation() {
    for backbone in [Backbone::Mbconv, Backbone::Resblock] {
        let cfg = ModelConfig { backbone, ..small_config() };
        let m = Model::<f64>::new(cfg, 5).unwrap();
        let z = ramp(vec![3, 6], 1.0);
        let logits = m.classifier.classify(&z).unwrap();
        assert_eq!(logits.shape(), &[3, 4]);
        let perm = m.classifier.classify(&z.select_rows(&[1, 2, 0])).unwrap();
        assert_eq!(perm.row(0), logits.row(1));
        assert_eq!(perm.row(2), logits.row(0));
        assert_eq!(m.classifier.blocks.len(), 3);
        assert!(m.classifier.classify(&Tensor::zeros(&[1, 7])).is_err());
    }
}

#[test]
fn classifier_gradients_are_finite() {
    let m = Model::<f64>::new(small_config(), 6).unwrap();
    let mut g = Graph::new();
    let p = m.classifier.params.bind(&mut g, true);
    let z = g.input(ramp(vec![4, 6], 1.0));
    let logits = m.classifier.forward(&mut g, &p, z).unwrap();
    let lsm = g.log_softmax(logits).unwrap();
    let picked = g.pick(lsm, &[0, 1, 2, 3]).unwrap();
    let loss = g.mean(picked);
    let loss = g.scale(loss, -1.0);
    let grads = g.backward(loss).unwrap();
    for &v in p.vars() {
        let gr = grads.get(v).expect("every classifier parameter receives a gradient");
        assert!(gr.all_finite());
    }
}

fn block_setup(se: bool) -> (MbConvBlock, ParamStore<f64>) {
    let mut params = ParamStore::new();
    let mut rng = component_rng(9, 0);
    let b = MbConvBlock::new(&mut params, "b", 16, 4, se.then_some(0.25), &mut rng);
    (b, params)
}

#[test]
fn mbconv_zero_projection_is_identity() {
    let (b, mut params) = block_setup(true);
    assert_eq!(b.hidden_channels(), 64);
    for n in ["b.project.weight", "b.project.bias"] {
        let shape = params.get(params.find(n).unwrap()).shape().to_vec();
        params.set(n, Tensor::zeros(&shape)).unwrap();
    }
    let x = ramp(vec![2, 16, 3, 3], 1.0);
    assert_eq!(mbconv_forward(&x, &b, &params).unwrap(), x);
    assert!(mbconv_forward(&ramp(vec![1, 8, 3, 3], 1.0), &b, &params).is_err());
}

#[test]
fn saturated_gate_matches_block_without_se() {
    let (with_se, mut params) = block_setup(true);
    // Large positive bias drives the sigmoid gate to exactly 1.0 in f64.
    let shape = params.get(params.find("b.se_expand.weight").unwrap()).shape().to_vec();
    params.set("b.se_expand.weight", Tensor::zeros(&shape)).unwrap();
    let shape = params.get(params.find("b.se_expand.bias").unwrap()).shape().to_vec();
    params.set("b.se_expand.bias", Tensor::full(&shape, 60.0)).unwrap();
    let without = MbConvBlock { se: None, ..with_se.clone() };
    let x = ramp(vec![2, 16, 3, 3], 1.0);
    let a = mbconv_forward(&x, &with_se, &params).unwrap();
    let b = mbconv_forward(&x, &without, &params).unwrap();
    assert_eq!(a, b);
}

#[test]
fn shared_weights_across_groups() {
    let m = Model::<f64>::new(small_config(), 7).unwrap();
    let before = m.encoder.params.checksum();
    let _ = m.encoder.encode(&ramp(vec![2, 1, 16, 16], 1.0)).unwrap();
    let _ = m.encoder.encode(&ramp(vec![2, 1, 16, 16], -1.0)).unwrap();
    assert_eq!(m.encoder.params.checksum(), before);
}

#[test]
fn forward_is_bitwise_repeatable() {
    let a = Model::<f32>::new(small_config(), 8).unwrap();
    let b = Model::<f32>::new(small_config(), 8).unwrap();
    assert_eq!(a.checksum(), b.checksum());
    let x = Tensor::<f32>::full(&[2, 1, 16, 16], lit(0.25));
    assert_eq!(a.encoder.encode(&x).unwrap(), b.encoder.encode(&x).unwrap());
    let c = Model::<f32>::new(small_config(), 9).unwrap();
    assert_ne!(a.checksum(), c.checksum());
}

#[test]
fn checkpoint_round_trip_reproduces_outputs() {
    let m = Model::<f32>::new(small_config(), 10).unwrap();
    let mut momentum = std::collections::BTreeMap::new();
    let mut buf = m.encoder.params.clone();
    for t in buf.tensors_mut() {
        *t = t.map(|v| v * 0.5);
    }
    momentum.insert(Component::Encoder, buf.clone());
    let mut rng = component_rng(11, 5);
    let _: u64 = rand::Rng::random(&mut rng);
    let ck = Checkpoint {
        model: m.clone(),
        step: 42,
        momentum,
        rng: RngState::capture(&rng),
        metadata: serde_json::json!({"phase": "vae"}),
    };
    let bytes = ck.to_bytes().unwrap();
    let back = Checkpoint::<f32>::from_bytes(&bytes).unwrap();
    assert_eq!(back.step, 42);
    assert_eq!(back.model.checksum(), m.checksum());
    assert_eq!(back.momentum[&Component::Encoder], buf);
    let mut restored = back.rng.restore().unwrap();
    assert_eq!(rand::Rng::random::<u64>(&mut restored), rand::Rng::random::<u64>(&mut rng));
    let x = Tensor::<f32>::full(&[1, 1, 16, 16], lit(0.5));
    assert_eq!(back.model.encoder.encode(&x).unwrap(), m.encoder.encode(&x).unwrap());
    assert_eq!(back.to_bytes().unwrap(), bytes);

    assert!(matches!(Checkpoint::<f64>::from_bytes(&bytes), Err(crate::Error::Checkpoint(_))));
    let mut wrong = bytes.clone();
    wrong[8] = 9;
    assert!(Checkpoint::<f32>::from_bytes(&wrong).is_err());
    assert!(Checkpoint::<f32>::from_bytes(b"nope").is_err());
}
