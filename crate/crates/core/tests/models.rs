use icl_core::autodiff::gradcheck::max_gradient_error;
use icl_core::autodiff::{Param, Tensor};
use icl_core::data::{
    build_icl_eval_batch, build_iwl_eval_batch, build_training_batch, encode_tokens, Dataset,
    ItemSource, LabelEncoding, SequenceBatch,
};
use icl_core::math::RngStream;
use icl_core::models::*;

fn zero_mlp(m: &mut MlpModel) {
    for p in m.params_mut() {
        p.value = Tensor::zeros(p.value.shape());
    }
}

fn accuracy(logits: &[f64], labels: &[f64]) -> f64 {
    let s: f64 = logits
        .iter()
        .zip(labels)
        .map(|(z, l)| {
            if *z == 0.0 {
                0.5
            } else if z * l > 0.0 {
                1.0
            } else {
                0.0
            }
        })
        .sum();
    s / labels.len() as f64
}

fn batch_with_labels(d: usize, n: usize, labels: &[f64], rng: &mut RngStream) -> SequenceBatch {
    let mut b = build_icl_eval_batch(d, n, 1, rng).unwrap();
    b.context_labels = labels.to_vec();
    b.n_plus = vec![labels.iter().filter(|l| **l > 0.0).count()];
    b
}

#[test]
fn zero_weights_give_zero_logit() {
    let mut rng = RngStream::new(1, 0);
    let mut m = MlpModel::init(10, 16, &mut rng).unwrap();
    zero_mlp(&mut m);
    let x: Vec<f64> = (0..10).map(|i| i as f64 - 3.0).collect();
    assert_eq!(m.forward(&x).unwrap(), 0.0);
    assert!(m.forward(&x[..9]).is_err());
}

#[test]
fn init_logits_are_centered() {
    // Each sample pairs a fresh input with a fresh initialization.
    let mut rng = RngStream::new(2, 0);
    let n = 10_000;
    let z: Vec<f64> = (0..n)
        .map(|_| {
            let m = MlpModel::init(63, 32, &mut rng).unwrap();
            let x = Dataset::sample(1, 63, &mut rng);
            m.forward(x.item(0)).unwrap()
        })
        .collect();
    let nf = n as f64;
    let mean = z.iter().sum::<f64>() / nf;
    let sd = (z.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (nf - 1.0)).sqrt();
    assert!(mean.abs() < 3.0 * sd / nf.sqrt(), "{mean}, sd {sd}");
}

#[test]
fn doubling_last_layer_doubles_logit() {
    let mut rng = RngStream::new(3, 0);
    let m = MlpModel::init(5, 8, &mut rng).unwrap();
    let x = [0.3, -1.0, 0.5, 2.0, -0.2];
    let z = m.forward(&x).unwrap();
    let mut m2 = m.clone();
    let last = m2.net.layers.last_mut().unwrap();
    last.weight.value = last.weight.value.map(|v| 2.0 * v);
    last.bias.value = last.bias.value.map(|v| 2.0 * v);
    assert_eq!(m2.forward(&x).unwrap(), 2.0 * z);
}

#[test]
fn attention_logit_examples() {
    let mut rng = RngStream::new(4, 0);
    let n = 10;
    let b = batch_with_labels(8, n, &vec![1.0; n], &mut rng);
    assert!((attention_logit(0.0, 1.0, &b).unwrap()[0] - 1.0).abs() < 1e-15);
    let half: Vec<f64> = (0..n)
        .map(|j| if j % 2 == 0 { 1.0 } else { -1.0 })
        .collect();
    let b = batch_with_labels(8, n, &half, &mut rng);
    assert!(attention_logit(0.0, 1.0, &b).unwrap()[0].abs() < 1e-15);

    let b = build_icl_eval_batch(2000, 20, 16, &mut rng).unwrap();
    let z = attention_logit(50.0, 2.0, &b).unwrap();
    for r in 0..b.batch {
        assert!((z[r] - 2.0 * b.target_labels[r]).abs() < 1e-6, "{}", z[r]);
    }
}

#[test]
fn attention_label_flip_is_exact() {
    let mut rng = RngStream::new(5, 0);
    let b = build_icl_eval_batch(16, 12, 32, &mut rng).unwrap();
    let mut f = b.clone();
    f.context_labels.iter_mut().for_each(|l| *l = -*l);
    let z = attention_logit(1.7, -0.9, &b).unwrap();
    let zf = attention_logit(1.7, -0.9, &f).unwrap();
    for (a, b) in z.iter().zip(&zf) {
        assert_eq!(*a, -*b);
    }
}

#[test]
fn minimal_model_is_additive_bitwise() {
    let mut rng = RngStream::new(6, 0);
    let mut m = MinimalModel::init(12, 16, 0.01, &mut rng).unwrap();
    m.set_attention(1.3, 0.7);
    let b = build_icl_eval_batch(12, 9, 20, &mut rng).unwrap();
    let z = m.forward(&b).unwrap();
    let zm = m.mlp.forward_rows(&b.target_items, b.batch).unwrap();
    let za = attention_logit(1.3, 0.7, &b).unwrap();
    for r in 0..b.batch {
        assert_eq!(z[r].to_bits(), (zm[r] + za[r]).to_bits());
    }
}

#[test]
fn minimal_model_chance_and_readout() {
    let mut rng = RngStream::new(7, 0);
    let mut m = MinimalModel::init(63, 16, 0.01, &mut rng).unwrap();
    zero_mlp(&mut m.mlp);
    m.set_attention(0.0, 0.0);
    let b = build_icl_eval_batch(63, 30, 64, &mut rng).unwrap();
    let loss = m.loss_and_grad(&b).unwrap();
    assert!((loss - std::f64::consts::LN_2).abs() < 1e-15);
    m.set_attention(50.0, 10.0);
    assert_eq!(accuracy(&m.forward(&b).unwrap(), &b.target_labels), 1.0);
}

/// Hidden unit `i` fires only on dataset item `i`; the read-out writes its label.
fn lookup_mlp(ds: &Dataset) -> MlpModel {
    let (k, d) = (ds.len(), ds.dim());
    let mut rng = RngStream::new(0, 0);
    let mut m = MlpModel::init(d, k, &mut rng).unwrap();
    let l = &mut m.net.layers;
    let mut w1 = vec![0.0; d * k];
    for i in 0..k {
        for (a, v) in ds.item(i).iter().enumerate() {
            w1[a * k + i] = *v;
        }
    }
    l[0].weight.value = Tensor::new(vec![d, k], w1).unwrap();
    l[0].bias.value = Tensor::full(&[k], -0.5);
    let mut eye = vec![0.0; k * k];
    for i in 0..k {
        eye[i * k + i] = 1.0;
    }
    l[1].weight.value = Tensor::new(vec![k, k], eye).unwrap();
    l[1].bias.value = Tensor::zeros(&[k]);
    l[2].weight.value =
        Tensor::new(vec![k, 1], ds.labels().iter().map(|l| 20.0 * l).collect()).unwrap();
    l[2].bias.value = Tensor::zeros(&[1]);
    m
}

#[test]
fn memorizer_solves_iwl_but_not_icl() {
    let mut rng = RngStream::new(8, 0);
    let ds = Dataset::sample(200, 63, &mut rng);
    let mlp = lookup_mlp(&ds);
    let mut m = MinimalModel::init(63, 4, 0.0, &mut rng).unwrap();
    m.mlp = mlp;
    m.set_attention(0.0, 0.0);
    let iwl = build_iwl_eval_batch(&ds, 100, 500, &mut rng).unwrap();
    assert_eq!(accuracy(&m.forward(&iwl).unwrap(), &iwl.target_labels), 1.0);
    let icl = build_icl_eval_batch(63, 100, 2000, &mut rng).unwrap();
    let acc = accuracy(&m.forward(&icl).unwrap(), &icl.target_labels);
    assert!((acc - 0.5).abs() < 0.05, "{acc}");
}

#[test]
fn transformer_residual_only_when_v_is_zero() {
    let mut rng = RngStream::new(9, 0);
    let mut t = TransformerModel::init(7, 8, &mut rng).unwrap();
    t.v.value = Tensor::zeros(t.v.value.shape());
    let b = build_icl_eval_batch(7, 5, 6, &mut rng).unwrap();
    let z = t.forward(&b).unwrap();
    let zr = t.residual_logits(&b.target_items, b.batch).unwrap();
    for (a, b) in z.iter().zip(&zr) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn transformer_attention_is_uniform_without_scores() {
    let mut rng = RngStream::new(10, 0);
    let mut t = TransformerModel::init(7, 8, &mut rng).unwrap();
    t.q.value = Tensor::zeros(t.q.value.shape());
    let b = build_icl_eval_batch(7, 5, 3, &mut rng).unwrap();
    let a = t
        .attention_weights(&encode_tokens(&b, LabelEncoding::OneHot))
        .unwrap();
    assert!(a.iter().all(|v| (v - 1.0 / 6.0).abs() < 1e-15));
}

#[test]
fn attention_weights_form_a_simplex() {
    let mut rng = RngStream::new(11, 0);
    let t = TransformerModel::init(7, 8, &mut rng).unwrap();
    let b = build_icl_eval_batch(7, 5, 10, &mut rng).unwrap();
    let a = t
        .attention_weights(&encode_tokens(&b, LabelEncoding::OneHot))
        .unwrap();
    for row in a.chunks(6) {
        assert!(row.iter().all(|v| *v >= 0.0));
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn ablated_matrices() {
    let (ktq, v) = ablate_kqv(1.0, 0.5, 4);
    assert_eq!(ktq.shape(), &[6, 6]);
    assert_eq!(v.shape(), &[6, 6]);
    for i in 0..6 {
        for j in 0..6 {
            let e = if i == j && i < 4 { 1.0 } else { 0.0 };
            assert_eq!(ktq.data()[i * 6 + j], e);
            let e = if i == j && i >= 4 { 0.5 } else { 0.0 };
            assert_eq!(v.data()[i * 6 + j], e);
        }
    }
    let (a, b) = ablate_kqv(0.0, 0.0, 4);
    assert!(a.data().iter().chain(b.data()).all(|x| *x == 0.0));
}

/// Softmax label read-out on layer-normed tokens, target included, with the
/// normalized label-slot difference as the label.
fn layer_normed_readout(
    tokens: &icl_core::data::TokenMatrix,
    beta: f64,
    w: f64,
    d: usize,
) -> Vec<f64> {
    let ln = |t: &[f64]| {
        let n = t.len() as f64;
        let m = t.iter().sum::<f64>() / n;
        let v = t.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
        t.iter()
            .map(|x| (x - m) / (v + 1e-5).sqrt())
            .collect::<Vec<f64>>()
    };
    (0..tokens.batch())
        .map(|r| {
            let l = tokens.seq_len();
            let normed: Vec<Vec<f64>> = (0..l).map(|j| ln(tokens.token(r, j))).collect();
            let tgt = &normed[l - 1];
            let s: Vec<f64> = normed
                .iter()
                .map(|t| {
                    beta * t[..d]
                        .iter()
                        .zip(&tgt[..d])
                        .map(|(a, b)| a * b)
                        .sum::<f64>()
                })
                .collect();
            let m = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = s.iter().map(|x| (x - m).exp()).sum();
            normed
                .iter()
                .zip(&s)
                .map(|(t, x)| (x - m).exp() / z * w * (t[d] - t[d + 1]))
                .sum()
        })
        .collect()
}

#[test]
fn ablated_transformer_matches_layer_normed_readout() {
    let mut rng = RngStream::new(12, 0);
    let d = 63;
    let mut t = TransformerModel::init(d, 16, &mut rng).unwrap();
    let b = build_icl_eval_batch(d, 50, 32, &mut rng).unwrap();
    let tokens = encode_tokens(&b, LabelEncoding::OneHot);
    for beta in [1.0, 3.0] {
        t.set_ablated(beta, 1.0);
        let got = t.label_readout(&tokens).unwrap();
        let want = layer_normed_readout(&tokens, beta, 1.0, d);
        for (g, w) in got.iter().zip(&want) {
            assert!(
                (g - w).abs() <= 0.05 * w.abs() + 1e-12,
                "beta {beta}: {g} vs {w}"
            );
        }
    }
}

fn flatten(model: &Model) -> Vec<f64> {
    model
        .params()
        .iter()
        .flat_map(|p| p.value.data().to_vec())
        .collect()
}

fn unflatten(model: &mut Model, xs: &[f64]) {
    let mut off = 0;
    for p in model.params_mut_all() {
        let n = p.value.numel();
        p.value.data_mut().copy_from_slice(&xs[off..off + n]);
        off += n;
    }
}

/// Worst finite-difference mismatch of the model's loss gradient.
pub(crate) fn model_gradient_error(model: &Model, batch: &SequenceBatch) -> f64 {
    let mut m = model.clone();
    m.zero_grads();
    m.loss_and_grad(batch).unwrap();
    let analytic: Vec<f64> = m
        .params()
        .iter()
        .flat_map(|p| p.grad.as_ref().unwrap().data().to_vec())
        .collect();
    let x0 = flatten(model);
    let f = |xs: &[f64]| {
        let mut mm = model.clone();
        unflatten(&mut mm, xs);
        let z = mm.logits(batch).unwrap();
        z.iter()
            .zip(&batch.target_labels)
            .map(|(z, l)| -icl_core::math::log_sigmoid(l * z))
            .sum::<f64>()
            / z.len() as f64
    };
    max_gradient_error(f, &x0, &analytic, 1e-4, 1e-3)
}

#[test]
fn gradients_match_finite_differences_for_every_family() {
    for seed in 0..5 {
        let mut rng = RngStream::new(13 + seed, 0);
        let ds = Dataset::sample(30, 7, &mut rng);
        let b = build_training_batch(ItemSource::uniform(&ds), 5, 4, &mut rng).unwrap();
        for kind in [
            ModelKind::MlpOnly,
            ModelKind::Minimal,
            ModelKind::Transformer,
        ] {
            let mut cfg = ModelConfig::new(kind, 7, 8);
            cfg.attention_init_std = 0.5;
            let m = Model::init(&cfg, &mut rng).unwrap();
            let err = model_gradient_error(&m, &b);
            assert!(err < 1e-4, "{kind:?}: {err}");
        }
    }
}

#[test]
fn checkpoint_round_trip_and_hash_guard() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.bin");
    let cfg = ModelConfig::new(ModelKind::Transformer, 5, 6);
    let m = Model::init(&cfg, &mut RngStream::new(3, 1)).unwrap();
    save_checkpoint(&m, &cfg, &path).unwrap();
    assert_eq!(load_checkpoint(&cfg, &path).unwrap(), m);
    let other = ModelConfig::new(ModelKind::Transformer, 5, 7);
    assert!(matches!(
        load_checkpoint(&other, &path),
        Err(icl_core::Error::Config(_))
    ));
    std::fs::write(&path, b"nope").unwrap();
    assert!(matches!(
        load_checkpoint(&cfg, &path),
        Err(icl_core::Error::Format(_))
    ));
}

#[test]
fn init_overrides_and_groups() {
    let mut cfg = ModelConfig::new(ModelKind::Minimal, 4, 5);
    cfg.beta0 = Some(-3.0);
    cfg.w0 = Some(0.0);
    let mut m = Model::init(&cfg, &mut RngStream::new(0, 0)).unwrap();
    assert_eq!(m.attention_scalars(), Some((-3.0, 0.0)));
    let groups = m.param_groups(1e-10, 1e-3);
    assert_eq!(groups.len(), 2);
    assert_eq!(groups[1].params.len(), 2);
    let mut bad = ModelConfig::new(ModelKind::MlpOnly, 4, 5);
    bad.beta0 = Some(1.0);
    assert!(bad.validate().is_err());
    let p = Param::new(Tensor::scalar(0.0));
    assert!(p.grad.is_none());
}
