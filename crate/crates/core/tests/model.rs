mod common;

use common::{naive_tria_attention, random_system, rng};
use mdet_core::autodiff::Tape;
use mdet_core::error::Error;
use mdet_core::model::{force_loss, Model, ModelConfig};
use mdet_core::system::MolecularSystem;
use mdet_core::tensor::Tensor;
use proptest::prelude::*;

fn cfg(d: usize, heads: usize) -> ModelConfig {
    ModelConfig {
        embed_dim: d,
        n_heads: heads,
        ..ModelConfig::tiny()
    }
}

fn chunked_vs_naive(n: usize, d: usize, heads: usize, seed: u64) -> f64 {
    let mut r = rng(seed);
    let model = Model::<f64>::init(cfg(d, heads), &mut r).unwrap();
    let x = Tensor::<f64>::randn(&[n, n, d], 1.0, &mut r);
    let mut tape = Tape::new();
    let bound = model.params.bind(&mut tape);
    let xv = tape.constant(x.clone());
    let out = model.tria_attention(&mut tape, &bound, 0, xv, n).unwrap();
    let naive = naive_tria_attention(&model, 0, x.data(), n);
    tape.value(out)
        .data()
        .iter()
        .zip(&naive)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max)
}

#[test]
fn attention_matches_naive_loops() {
    for n in 1..=6 {
        for (d, h) in [(4, 1), (4, 2), (8, 2), (8, 4)] {
            let diff = chunked_vs_naive(n, d, h, (n * 100 + d * 10 + h) as u64);
            assert!(diff <= 1e-6, "n={n} d={d} heads={h}: {diff}");
        }
    }
}

#[test]
fn single_atom_attention_is_projected_value() {
    let mut r = rng(5);
    let model = Model::<f64>::init(cfg(4, 2), &mut r).unwrap();
    let x = Tensor::<f64>::randn(&[1, 1, 4], 1.0, &mut r);
    let mut tape = Tape::new();
    let bound = model.params.bind(&mut tape);
    let xv = tape.constant(x.clone());
    let out = model.tria_attention(&mut tape, &bound, 0, xv, 1).unwrap();
    let p = |name: &str| {
        model
            .params
            .get(&format!("layers.0.attn.{name}"))
            .unwrap()
            .clone()
    };
    let xm = x.clone().reshape(&[1, 4]).unwrap();
    let mm = |a: &Tensor<f64>, b: &Tensor<f64>| mdet_core::tensor::matmul_raw(a, b).unwrap();
    let v1 = mm(&xm, &p("wv1"));
    let v2 = mm(&xm, &p("wv2"));
    let v: Vec<f64> = v1
        .data()
        .iter()
        .zip(v2.data())
        .map(|(a, b)| a * b)
        .collect();
    let v = Tensor::from_f64(&[1, 4], &v).unwrap();
    let expect = mm(&v, &p("out.w"));
    for c in 0..4 {
        let e = expect.data()[c] + p("out.b").data()[c];
        assert!((tape.value(out).data()[c] - e).abs() < 1e-14);
    }
}

#[test]
fn attention_rows_sum_to_one() {
    let mut r = rng(9);
    let n = 5;
    let q = Tensor::<f64>::randn(&[n, n, 8], 1.0, &mut r);
    let k = Tensor::<f64>::randn(&[n, n, 8], 1.0, &mut r);
    let mut tape = Tape::new();
    let (qv, kv) = (tape.constant(q), tape.constant(k));
    let s = tape.tria_logits(qv, kv, 2, n).unwrap();
    let a = tape.softmax_lastaxis(s).unwrap();
    for row in tape.value(a).data().chunks(n) {
        assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
    }
}

#[test]
fn softmax_random_rows_sum_to_one() {
    let t = Tensor::<f64>::randn(&[4, 6], 3.0, &mut rng(1));
    for row in mdet_core::tensor::softmax_raw(&t).data().chunks(6) {
        assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
    }
}

fn zero(model: &mut Model<f64>, path: &str) {
    let t = model.params.get_mut(path).unwrap();
    t.data_mut().iter_mut().for_each(|v| *v = 0.0);
}

#[test]
fn zeroed_residual_branches_give_identity() {
    let mut r = rng(2);
    let mut model = Model::<f64>::init(ModelConfig::tiny(), &mut r).unwrap();
    for p in ["attn.out.w", "attn.out.b", "ffn.l2.w", "ffn.l2.b"] {
        zero(&mut model, &format!("layers.0.{p}"));
    }
    let x = Tensor::<f64>::randn(&[3, 3, 8], 1.0, &mut r);
    let mut tape = Tape::new();
    let bound = model.params.bind(&mut tape);
    let xv = tape.constant(x.clone());
    let y = model.et_layer(&mut tape, &bound, 0, xv, 3).unwrap();
    assert_eq!(tape.value(y), &x);
}

#[test]
fn layer_norm_moments() {
    let x = Tensor::<f64>::randn(&[6, 16], 4.0, &mut rng(8));
    let mut tape = Tape::new();
    let xv = tape.constant(x);
    let y = tape.layer_norm(xv, 1e-12).unwrap();
    for row in tape.value(y).data().chunks(16) {
        let mean = row.iter().sum::<f64>() / 16.0;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 16.0;
        assert!(mean.abs() < 1e-6 && (var - 1.0).abs() < 1e-6);
    }
}

#[test]
fn zeroed_output_layer_gives_zero_forces() {
    let mut r = rng(4);
    let mut model = Model::<f64>::init(ModelConfig::tiny(), &mut r).unwrap();
    zero(&mut model, "head.psi3.l2.w");
    zero(&mut model, "head.psi3.l2.b");
    let sys = random_system(4, &mut r);
    for f in model.predict_forces(&sys).unwrap() {
        assert_eq!(f, [0.0; 3]);
    }
}

#[test]
fn two_layers_compose() {
    let mut r = rng(6);
    let model = Model::<f64>::init(ModelConfig::tiny(), &mut r).unwrap();
    let x = Tensor::<f64>::randn(&[3, 3, 8], 1.0, &mut r);
    let mut t1 = Tape::new();
    let b1 = model.params.bind(&mut t1);
    let v = t1.constant(x.clone());
    let a = model.et_layer(&mut t1, &b1, 0, v, 3).unwrap();
    let a = model.et_layer(&mut t1, &b1, 1, a, 3).unwrap();
    let mid = t1.value(a).clone();
    // sequential application on separate tapes
    let mut t2 = Tape::new();
    let b2 = model.params.bind(&mut t2);
    let v2 = t2.constant(x);
    let s1 = model.et_layer(&mut t2, &b2, 0, v2, 3).unwrap();
    let s1v = t2.value(s1).clone();
    let mut t3 = Tape::new();
    let b3 = model.params.bind(&mut t3);
    let v3 = t3.constant(s1v);
    let s2 = model.et_layer(&mut t3, &b3, 1, v3, 3).unwrap();
    assert_eq!(t3.value(s2), &mid);
}

#[test]
fn rbf_single_kernel_at_zero() {
    let mut tape = Tape::<f64>::new();
    let pos = tape.constant(Tensor::zeros(&[1, 3]));
    let g = tape.pair_geometry(pos).unwrap();
    let mu = tape.constant(Tensor::zeros(&[1]));
    let sigma = tape.constant(Tensor::filled(&[1], 1.0));
    let m = tape.constant(Tensor::filled(&[1], 1.0));
    let b = tape.constant(Tensor::zeros(&[1]));
    let r = tape.rbf(g, mu, sigma, m, b).unwrap();
    let expect = 1.0 / (2.0 * std::f64::consts::PI).sqrt();
    assert!((tape.value(r).item() - expect).abs() < 1e-15);
}

#[test]
fn distances_symmetric_under_swap() {
    let mut tape = Tape::<f64>::new();
    let pos = tape.constant(Tensor::from_f64(&[2, 3], &[0.3, -1.0, 2.0, 1.4, 0.2, -0.7]).unwrap());
    let g = tape.pair_geometry(pos).unwrap();
    let v = tape.value(g);
    assert_eq!(v.at(&[0, 1, 0]), v.at(&[1, 0, 0]));
}

#[test]
fn vocabulary_errors() {
    let model = Model::<f64>::init(ModelConfig::tiny(), &mut rng(1)).unwrap();
    let mut sys = MolecularSystem::new(vec![99], vec![[0.0; 3]]).unwrap();
    assert!(matches!(
        model.predict_forces(&sys),
        Err(Error::Vocabulary {
            kind: "atomic number",
            ..
        })
    ));
    sys.atomic_numbers = vec![1];
    sys.spin = 50;
    assert!(matches!(
        model.predict_forces(&sys),
        Err(Error::Vocabulary { kind: "spin", .. })
    ));
    sys.spin = 0;
    sys.charge = -20;
    assert!(matches!(
        model.predict_forces(&sys),
        Err(Error::Vocabulary { kind: "charge", .. })
    ));
}

#[test]
fn invalid_configs_rejected() {
    assert!(Model::<f64>::init(cfg(6, 4), &mut rng(0)).is_err());
    let c = ModelConfig {
        n_fourier: 3,
        ..ModelConfig::tiny()
    };
    assert!(c.validate().is_err());
}

#[test]
fn force_loss_examples() {
    assert_eq!(
        force_loss(&[[1.0, 2.0, 3.0]], &[[1.0, 2.0, 3.0]]).unwrap(),
        0.0
    );
    assert_eq!(force_loss(&[[3.0, 4.0, 0.0]], &[[0.0; 3]]).unwrap(), 5.0);
    let l = force_loss(&[[1.0, 0.0, 0.0], [0.0, 2.0, 0.0]], &[[0.0; 3], [0.0; 3]]).unwrap();
    assert_eq!(l, 1.5);
    assert!(force_loss(&[[0.0; 3]], &[]).is_err());
}

#[test]
fn padded_forward_matches_unpadded() {
    let mut r = rng(12);
    let model = Model::<f64>::init(ModelConfig::tiny(), &mut r).unwrap();
    let sys = random_system(3, &mut r);
    let plain = model.predict_forces(&sys).unwrap();
    let mut tape = Tape::new();
    let bound = model.params.bind(&mut tape);
    let rec = model
        .record(&mut tape, &bound, &sys, Some(5), false)
        .unwrap();
    let padded = mdet_core::model::rows3(tape.value(rec.forces));
    for a in 0..3 {
        for c in 0..3 {
            assert!((plain[a][c] - padded[a][c]).abs() < 1e-12);
        }
    }
}

#[test]
fn full_forward_replays_bit_identically() {
    let mut r = rng(13);
    let model = Model::<f32>::init(ModelConfig::tiny(), &mut r).unwrap();
    let sys = random_system(4, &mut r);
    let mut tape = Tape::new();
    let bound = model.params.bind(&mut tape);
    model.record(&mut tape, &bound, &sys, None, false).unwrap();
    let replay = tape.replay().unwrap();
    assert_eq!(replay.len(), tape.len());
    for (a, t) in tape.values().zip(&replay) {
        assert!(a
            .data()
            .iter()
            .zip(t.data())
            .all(|(x, y)| x.to_bits() == y.to_bits()));
    }
}

#[test]
fn checkpoint_shape_mismatch_rejected() {
    let model = Model::<f64>::init(ModelConfig::tiny(), &mut rng(1)).unwrap();
    let other = ModelConfig {
        embed_dim: 4,
        ..ModelConfig::tiny()
    };
    assert!(Model::from_parts(other, model.params.clone()).is_err());
    assert!(Model::from_parts(ModelConfig::tiny(), model.params).is_ok());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn permutation_equivariance(seed in 0u64..1000, n in 2usize..6) {
        let mut r = rng(seed);
        let model = Model::<f64>::init(ModelConfig::tiny(), &mut r).unwrap();
        let sys = random_system(n, &mut r);
        let mut perm: Vec<usize> = (0..n).collect();
        perm.rotate_left(1);
        perm.swap(0, n - 1);
        let f = model.predict_forces(&sys).unwrap();
        let fp = model.predict_forces(&sys.permuted(&perm)).unwrap();
        for (k, &p) in perm.iter().enumerate() {
            for c in 0..3 {
                prop_assert!((fp[k][c] - f[p][c]).abs() <= 1e-6);
            }
        }
    }

    #[test]
    fn translation_invariance(seed in 0u64..1000, n in 1usize..6, shift in prop::array::uniform3(-20.0f64..20.0)) {
        let mut r = rng(seed);
        let model = Model::<f64>::init(ModelConfig::tiny(), &mut r).unwrap();
        let sys = random_system(n, &mut r);
        let mut moved = sys.clone();
        for p in &mut moved.positions {
            for c in 0..3 {
                p[c] += shift[c];
            }
        }
        let f = model.predict_forces(&sys).unwrap();
        let g = model.predict_forces(&moved).unwrap();
        for a in 0..n {
            for c in 0..3 {
                prop_assert!((f[a][c] - g[a][c]).abs() <= 1e-6);
            }
        }
    }

    #[test]
    fn attention_oracle_property(seed in 0u64..10_000, n in 1usize..=6, wide in any::<bool>()) {
        let (d, h) = if wide { (8, 2) } else { (4, 2) };
        prop_assert!(chunked_vs_naive(n, d, h, seed) <= 1e-6);
    }
}
