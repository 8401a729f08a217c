mod common;

use common::{fd_check, random_system, rng, weighted_sum};
use mdet_core::autodiff::{Tape, Var};
use mdet_core::model::{Model, ModelConfig};
use mdet_core::tensor::Tensor;

const H: f64 = 1e-5;
const RTOL: f64 = 1e-5;
// absorbs central-difference round-off (~eps·|L|/h) on near-zero gradients
const ATOL: f64 = 1e-9;

fn randn(shape: &[usize], seed: u64) -> Tensor<f64> {
    Tensor::randn(shape, 1.0, &mut rng(seed))
}

fn assert_fd(name: &str, inputs: &[Tensor<f64>], build: &dyn Fn(&mut Tape<f64>, &[Var]) -> Var) {
    let r = fd_check(inputs, build, H, RTOL, ATOL);
    assert!(r.worst_ratio <= 1.0, "{name}: {r:?}");
}

#[test]
fn matmul_matches_central_differences() {
    let inputs = [randn(&[5, 7], 1), randn(&[7, 3], 2)];
    let r = fd_check(
        &inputs,
        &|t, v| {
            let y = t.matmul(v[0], v[1]).unwrap();
            weighted_sum(t, y, 9)
        },
        H,
        1e-6,
        ATOL,
    );
    assert!(r.worst_ratio <= 1.0, "{r:?}");
}

#[test]
fn linear_and_rows() {
    let inputs = [
        randn(&[2, 3, 4], 1),
        randn(&[4, 5], 2),
        randn(&[5], 3),
        randn(&[5], 4),
    ];
    assert_fd("linear", &inputs, &|t, v| {
        let y = t.linear(v[0], v[1], Some(v[2])).unwrap();
        let y = t.mul_row(y, v[3]).unwrap();
        let y = t.add_row(y, v[2]).unwrap();
        weighted_sum(t, y, 5)
    });
}

#[test]
fn elementwise_ops() {
    let inputs = [randn(&[3, 4], 1), randn(&[3, 4], 2)];
    assert_fd("add/sub/mul/scale", &inputs, &|t, v| {
        let a = t.add(v[0], v[1]).unwrap();
        let b = t.sub(a, v[1]).unwrap();
        let c = t.mul(b, v[1]).unwrap();
        let d = t.scale(c, -0.7).unwrap();
        weighted_sum(t, d, 3)
    });
}

#[test]
fn gelu_softmax_layer_norm() {
    let inputs = [randn(&[4, 6], 11)];
    assert_fd("gelu", &inputs, &|t, v| {
        let y = t.gelu(v[0]).unwrap();
        weighted_sum(t, y, 1)
    });
    assert_fd("softmax", &inputs, &|t, v| {
        let y = t.softmax_lastaxis(v[0]).unwrap();
        weighted_sum(t, y, 2)
    });
    assert_fd("layer_norm", &inputs, &|t, v| {
        let y = t.layer_norm(v[0], 1e-5).unwrap();
        weighted_sum(t, y, 3)
    });
}

#[test]
fn reshape_sum_axis_gather_concat() {
    let inputs = [randn(&[3, 3, 4], 1), randn(&[5, 4], 2)];
    assert_fd("sum_axis", &inputs, &|t, v| {
        let a = t.sum_axis(v[0], 0).unwrap();
        let b = t.sum_axis(v[0], 1).unwrap();
        let c = t.add(a, b).unwrap();
        let r = t.reshape(c, &[12]).unwrap();
        weighted_sum(t, r, 7)
    });
    assert_fd("gather/pair_concat", &inputs, &|t, v| {
        let g = t.gather(v[1], vec![4, 0, 4]).unwrap();
        let p = t.pair_concat(g).unwrap();
        weighted_sum(t, p, 8)
    });
}

#[test]
fn geometry_rbf_fourier() {
    let pos = Tensor::from_f64(&[3, 3], &[0.1, -0.2, 0.3, 1.3, 0.4, -0.5, -0.6, 1.1, 0.9]).unwrap();
    let mu = Tensor::from_f64(&[3], &[0.5, 1.5, 2.5]).unwrap();
    let sigma = Tensor::from_f64(&[3], &[0.4, 0.9, 1.7]).unwrap();
    let m = Tensor::from_f64(&[1], &[1.1]).unwrap();
    let b = Tensor::from_f64(&[1], &[0.05]).unwrap();
    let inputs = [pos, mu, sigma, m, b];
    assert_fd("pair_geometry+rbf", &inputs, &|t, v| {
        let g = t.pair_geometry(v[0]).unwrap();
        let r = t.rbf(g, v[1], v[2], v[3], v[4]).unwrap();
        weighted_sum(t, r, 4)
    });
    assert_fd("pair_geometry+fourier", &inputs, &|t, v| {
        let g = t.pair_geometry(v[0]).unwrap();
        let f = t
            .fourier(
                g,
                vec![std::f64::consts::PI, 0.5],
                vec![std::f64::consts::PI, 1.0],
            )
            .unwrap();
        weighted_sum(t, f, 5)
    });
}

#[test]
fn triangular_kernels() {
    let n = 3;
    let inputs = [
        randn(&[n, n, 4], 1),
        randn(&[n, n, 4], 2),
        randn(&[n, n, 4], 3),
        randn(&[n, n, 4], 4),
    ];
    assert_fd("tria", &inputs, &|t, v| {
        let s = t.tria_logits(v[0], v[1], 2, n).unwrap();
        let a = t.softmax_lastaxis(s).unwrap();
        let o = t.tria_mix(a, v[2], v[3], 2).unwrap();
        weighted_sum(t, o, 6)
    });
    assert_fd("tria masked", &inputs, &|t, v| {
        let s = t.tria_logits(v[0], v[1], 2, 2).unwrap();
        let a = t.softmax_lastaxis(s).unwrap();
        let o = t.tria_mix(a, v[2], v[3], 2).unwrap();
        let o = t.mask_edges(o, 2).unwrap();
        weighted_sum(t, o, 6)
    });
}

#[test]
fn force_loss_gradient() {
    let inputs = [randn(&[4, 3], 1)];
    let target = randn(&[4, 3], 2);
    assert_fd("force_loss", &inputs, &|t, v| {
        t.force_loss(v[0], target.clone()).unwrap()
    });
}

#[test]
fn force_loss_zero_residual_has_zero_gradient() {
    let p = randn(&[2, 3], 1);
    let mut tape = Tape::new();
    let v = tape.param(p.clone());
    let l = tape.force_loss(v, p).unwrap();
    assert_eq!(tape.value(l).item(), 0.0);
    assert!(tape
        .backward(l)
        .unwrap()
        .wrt(v)
        .data()
        .iter()
        .all(|&g| g == 0.0));
}

#[test]
fn tiny_model_parameter_gradients() {
    let mut r = rng(42);
    let model = Model::<f64>::init(ModelConfig::tiny(), &mut r).unwrap();
    let mut sys = random_system(4, &mut r);
    sys.forces = Some((0..4).map(|k| [0.3 * k as f64, -0.2, 0.1]).collect());
    let (_, grads) = model.loss_and_grads(&sys).unwrap();
    let mut work = model.clone();
    let mut worst: f64 = 0.0;
    let paths: Vec<String> = model.params.paths().map(str::to_string).collect();
    for (k, path) in paths.iter().enumerate() {
        let n = model.params.get(path).unwrap().len();
        for e in 0..n {
            let x0 = model.params.get(path).unwrap().data()[e];
            work.params.get_mut(path).unwrap().data_mut()[e] = x0 + H;
            let up = work.loss_and_grads(&sys).unwrap().0;
            work.params.get_mut(path).unwrap().data_mut()[e] = x0 - H;
            let dn = work.loss_and_grads(&sys).unwrap().0;
            work.params.get_mut(path).unwrap().data_mut()[e] = x0;
            let fd = (up - dn) / (2.0 * H);
            let a = grads[k].data()[e];
            let ratio = (a - fd).abs() / (RTOL * a.abs().max(fd.abs()) + ATOL);
            assert!(ratio <= 1.0, "{path}[{e}]: analytic {a}, fd {fd}");
            worst = worst.max(ratio);
        }
    }
    assert!(worst <= 1.0);
}

#[test]
fn f32_path_runs() {
    let mut r = rng(3);
    let model = Model::<f32>::init(ModelConfig::tiny(), &mut r).unwrap();
    let mut sys = random_system(3, &mut r);
    sys.forces = Some(vec![[0.1, 0.0, 0.0]; 3]);
    let (loss, grads) = model.loss_and_grads(&sys).unwrap();
    assert!(loss.is_finite());
    assert!(grads.iter().all(|g| g.all_finite()));
}
