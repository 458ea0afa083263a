mod common;

use std::collections::BTreeMap;

use salab::diagnostics::{check_primitives, GRAD_TOL};
use salab::nn::{grad_check, AdamConfig, AdamState, Graph, Params, Tensor, CHECKPOINT_MAGIC};
use salab::Error;

fn t(rows: &[Vec<f64>]) -> Tensor {
    Tensor::from_rows(rows)
}

#[test]
fn linear_examples() {
    let mut g = Graph::new();
    let x = g.constant(t(&[vec![1.0, 0.0]]));
    let w = g.constant(t(&[vec![2.0, 0.0], vec![0.0, 3.0]]));
    let b = g.constant(Tensor::zeros(&[2]));
    let y = g.linear(x, w, Some(b)).unwrap();
    assert_eq!(g.value(y).data(), &[2.0, 0.0]);

    let mut g = Graph::new();
    let x = g.constant(t(&[vec![1.0, 1.0]]));
    let w = g.constant(Tensor::filled(&[2, 2], 1.0));
    let b = g.constant(Tensor::filled(&[2], 1.0));
    let y = g.linear(x, w, Some(b)).unwrap();
    assert_eq!(g.value(y).data(), &[3.0, 3.0]);
}

#[test]
fn linear_weight_gradient() {
    let mut g = Graph::new();
    let x = g.constant(t(&[vec![1.0, 2.0]]));
    let w = g.input(Tensor::filled(&[2, 2], 0.3));
    let y = g.linear(x, w, None).unwrap();
    let s = g.sum(y);
    let grads = g.backward(s).unwrap();
    assert_eq!(grads.get(w).unwrap(), &[1.0, 1.0, 2.0, 2.0]);

    let r = grad_check(
        |g, w| {
            let x = g.constant(t(&[vec![1.0, 2.0]]));
            let y = g.linear(x, w, None)?;
            Ok(g.sum(y))
        },
        &Tensor::filled(&[2, 2], 0.3),
        1e-5,
        GRAD_TOL,
    )
    .unwrap();
    assert!(r.passed());
}

#[test]
fn linear_shape_error_names_shapes() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::zeros(&[1, 3]));
    let w = g.constant(Tensor::zeros(&[2, 2]));
    match g.linear(x, w, None) {
        Err(e @ Error::Shape { .. }) => {
            let msg = e.to_string();
            assert!(msg.contains("[1, 3]") && msg.contains("[2, 2]"), "{msg}");
        }
        other => panic!("expected shape error, got {other:?}"),
    }
}

#[test]
fn embedding_examples() {
    let table = t(&[vec![9.0, 9.0], vec![1.0, 2.0], vec![3.0, 4.0]]);
    let mut g = Graph::new();
    let tv = g.input(table.clone());
    let y = g.embedding(tv, &[0]).unwrap();
    assert_eq!(g.value(y).data(), &[0.0, 0.0]);

    let mut g = Graph::new();
    let tv = g.input(table.clone());
    let y = g.embedding(tv, &[2, 2]).unwrap();
    assert_eq!(g.value(y).data(), &[3.0, 4.0, 3.0, 4.0]);
    let s = g.sum(y);
    let grads = g.backward(s).unwrap();
    assert_eq!(grads.get(tv).unwrap(), &[0.0, 0.0, 0.0, 0.0, 2.0, 2.0]);

    let mut g = Graph::new();
    let tv = g.input(table);
    assert!(matches!(g.embedding(tv, &[3]), Err(Error::OutOfRange { id: 3, size: 3 })));
}

#[test]
fn padding_row_gets_no_gradient() {
    let mut g = Graph::new();
    let tv = g.input(Tensor::filled(&[3, 2], 0.5));
    let y = g.embedding(tv, &[0, 1, 0]).unwrap();
    let s = g.sum(y);
    let grads = g.backward(s).unwrap();
    assert_eq!(&grads.get(tv).unwrap()[..2], &[0.0, 0.0]);
}

#[test]
fn masked_mean_pool_examples() {
    let mut g = Graph::new();
    let x = g.input(t(&[vec![1.0, 1.0], vec![3.0, 3.0]]));
    let y = g.masked_mean_pool(x, &[true, true]).unwrap();
    assert_eq!(g.value(y).data(), &[2.0, 2.0]);

    let mut g = Graph::new();
    let x = g.input(t(&[vec![1.0, 1.0], vec![9.0, 9.0], vec![5.0, 5.0]]));
    let y = g.masked_mean_pool(x, &[true, false, true]).unwrap();
    assert_eq!(g.value(y).data(), &[3.0, 3.0]);
    let s = g.sum(y);
    let grads = g.backward(s).unwrap();
    assert_eq!(grads.get(x).unwrap(), &[0.5, 0.5, 0.0, 0.0, 0.5, 0.5]);

    let mut g = Graph::new();
    let x = g.input(t(&[vec![1.0]]));
    assert!(matches!(g.masked_mean_pool(x, &[false]), Err(Error::EmptyPool)));
}

fn norm(x: Tensor, gain: f64, bias: f64) -> Vec<f64> {
    let d = x.cols();
    let mut g = Graph::new();
    let xv = g.constant(x);
    let gv = g.constant(Tensor::filled(&[d], gain));
    let bv = g.constant(Tensor::filled(&[d], bias));
    let y = g.layer_norm(xv, gv, bv, 1e-5).unwrap();
    g.value(y).data().to_vec()
}

#[test]
fn layer_norm_examples() {
    assert_eq!(norm(t(&[vec![1.0, 1.0, 1.0]]), 1.0, 0.0), vec![0.0; 3]);
    let y = norm(t(&[vec![1.0, -1.0]]), 1.0, 0.0);
    assert!((y[0] - 1.0).abs() < 1e-3 && (y[1] + 1.0).abs() < 1e-3);

    let mut rng = salab::rng::seeded(4);
    let x = Tensor::normal(&[1, 256], 3.0, &mut rng);
    let y = norm(x, 2.0, 0.5);
    let mean = y.iter().sum::<f64>() / 256.0;
    let sd = (y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 256.0).sqrt();
    assert!((mean - 0.5).abs() < 1e-9);
    assert!((sd - 2.0).abs() < 1e-3);
}

fn bce(logit: f64, label: f64) -> f64 {
    let mut g = Graph::new();
    let s = g.constant(Tensor::new(vec![1, 1], vec![logit]).unwrap());
    let l = g.bce_with_logits(s, &[label]).unwrap();
    g.value(l).item()
}

#[test]
fn bce_examples() {
    assert!((bce(0.0, 1.0) - std::f64::consts::LN_2).abs() < 1e-12);
    let v = bce(20.0, 1.0);
    assert!(v.is_finite() && v <= 1e-8);
    assert!((bce(-800.0, 1.0) - 800.0).abs() < 1e-9);
    assert!(bce(800.0, 0.0).is_finite());
}

#[test]
fn dropout_behaviour() {
    let mut rng = salab::rng::seeded(1);
    let x = Tensor::filled(&[4, 50], 1.0);
    let mut g = Graph::new();
    let xv = g.constant(x.clone());
    let y = g.dropout(xv, 0.0, true, &mut rng).unwrap();
    assert_eq!(g.value(y), &x);
    let y = g.dropout(xv, 0.5, false, &mut rng).unwrap();
    assert_eq!(g.value(y), &x);
    let y = g.dropout(xv, 0.2, true, &mut rng).unwrap();
    assert!(g.value(y).data().iter().all(|&v| v == 0.0 || (v - 1.25).abs() < 1e-12));
    assert!(g.dropout(xv, 1.0, true, &mut rng).is_err());
    assert!(g.dropout(xv, -0.1, true, &mut rng).is_err());
}

#[test]
fn grad_check_sum_is_exact() {
    let x = Tensor::normal(&[3, 4], 1.0, &mut salab::rng::seeded(9));
    let r = grad_check(|g, x| Ok(g.sum(x)), &x, 1e-5, GRAD_TOL).unwrap();
    assert!(r.passed() && r.max_rel_error < 1e-9);
}

#[test]
fn primitive_gradients() {
    for c in check_primitives(3).unwrap() {
        assert!(c.report.passed(), "{}", c.line());
    }
}

#[test]
fn gradients_are_additive() {
    let mut rng = salab::rng::seeded(12);
    let x = Tensor::normal(&[3, 3], 1.0, &mut rng);
    let w = Tensor::normal(&[3, 2], 1.0, &mut rng);
    let grad_of = |which: u8| -> Vec<f64> {
        let mut g = Graph::new();
        let xv = g.input(x.clone());
        let wv = g.constant(w.clone());
        let a = g.linear(xv, wv, None).unwrap();
        let a = g.relu(a);
        let fa = g.sum(a);
        let fb = g.weighted_sum(xv, &[1.0, -2.0, 0.5, 0.0, 3.0, 1.0, -1.0, 2.0, 0.25]).unwrap();
        let out = match which {
            0 => fa,
            1 => fb,
            _ => g.add(fa, fb).unwrap(),
        };
        g.backward(out).unwrap().get(xv).unwrap().to_vec()
    };
    let (a, b, ab) = (grad_of(0), grad_of(1), grad_of(2));
    for i in 0..9 {
        assert!((a[i] + b[i] - ab[i]).abs() < 1e-12);
    }
}

fn one(name: &str, v: f64) -> (Params, BTreeMap<String, Tensor>) {
    let mut p = Params::new();
    p.insert(name, Tensor::scalar(0.0));
    let mut g = BTreeMap::new();
    g.insert(name.to_string(), Tensor::scalar(v));
    (p, g)
}

#[test]
fn adam_examples() {
    let (mut p, g) = one("w", 0.0);
    let before = p.clone();
    let mut st = AdamState::new(AdamConfig::default());
    st.step(&mut p, &g).unwrap();
    assert_eq!(p, before);

    let (mut p, g) = one("w", 1.0);
    let mut st = AdamState::new(AdamConfig::default());
    st.step(&mut p, &g).unwrap();
    assert!((p.get("w").unwrap().item() + 1e-4).abs() < 1e-10);
    assert_eq!(st.step, 1);

    let (mut p, g) = one("w", f64::NAN);
    let before = p.clone();
    let mut st = AdamState::new(AdamConfig::default());
    assert!(matches!(st.step(&mut p, &g), Err(Error::PoisonedGradient(_))));
    assert_eq!(p, before);
    assert_eq!(st.step, 0);
}

#[test]
fn adam_runs_are_bit_identical() {
    let run = || {
        let mut rng = salab::rng::seeded(77);
        let mut p = Params::new();
        p.insert("w", Tensor::normal(&[4, 4], 1.0, &mut rng));
        let mut st = AdamState::new(AdamConfig::default());
        for k in 0..20 {
            let mut g = BTreeMap::new();
            g.insert("w".to_string(), Tensor::normal(&[4, 4], 1.0 + k as f64, &mut rng));
            st.step(&mut p, &g).unwrap();
        }
        p.to_checkpoint_bytes()
    };
    assert_eq!(run(), run());
}

#[test]
fn checkpoint_layout() {
    let mut p = Params::new();
    p.insert("b", Tensor::new(vec![2], vec![1.5, -2.0]).unwrap());
    p.insert("a", Tensor::new(vec![1, 1], vec![0.25]).unwrap());
    let bytes = p.to_checkpoint_bytes();

    let mut want = CHECKPOINT_MAGIC.to_vec();
    for (name, dims, vals) in [("a", vec![1u32, 1], vec![0.25f32]), ("b", vec![2], vec![1.5, -2.0])] {
        want.extend(1u32.to_le_bytes());
        want.extend(name.as_bytes());
        want.extend((dims.len() as u32).to_le_bytes());
        dims.iter().for_each(|d| want.extend(d.to_le_bytes()));
        vals.iter().for_each(|v| want.extend(v.to_le_bytes()));
    }
    assert_eq!(bytes, want);
    assert_eq!(Params::from_checkpoint_bytes(&bytes).unwrap(), p);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("x.ckpt");
    p.save(&path).unwrap();
    assert_eq!(Params::load(&path).unwrap(), p);
    assert!(matches!(Params::from_checkpoint_bytes(b"SALAB2"), Err(Error::Checkpoint(_))));
    assert!(Params::from_checkpoint_bytes(&bytes[..bytes.len() - 1]).is_err());
    assert!(matches!(Params::load(&dir.path().join("missing.ckpt")), Err(Error::Io { .. })));
}
