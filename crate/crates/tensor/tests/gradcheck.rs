//! Every differentiable op against central finite differences (step 1e-4).

use faf_tensor::gradcheck::{numeric_param_grad, vector_relative_error};
use faf_tensor::{trunc_normal, Graph, ParamStore, Tensor, Var};

const STEP: f64 = 1e-4;
const TOL: f64 = 1e-4;

fn random(shape: &[usize], seed: u64) -> Tensor {
    // std 1 draws, shifted away from the kinks of abs / leaky relu at 0
    let t = trunc_normal(shape, 1.0, seed);
    t.map(|v| if v.abs() < 0.05 { v + 0.1 } else { v })
}

/// Build `sum(op(params) * probe)` so every output element carries a distinct weight.
fn check(shapes: &[&[usize]], op: impl Fn(&mut Graph, &[Var]) -> Var) {
    let mut store = ParamStore::new();
    let ids: Vec<_> = shapes
        .iter()
        .enumerate()
        .map(|(i, s)| store.insert(format!("p{i}"), random(s, 100 + i as u64)).unwrap())
        .collect();

    let forward = |store: &ParamStore| -> (Graph, Var) {
        let mut g = Graph::new();
        let vars: Vec<Var> = ids.iter().map(|&id| g.param(store, id)).collect();
        let y = op(&mut g, &vars);
        let probe = g.constant(random(g.shape(y), 999));
        let weighted = g.mul(y, probe).unwrap();
        let loss = g.sum_all(weighted);
        (g, loss)
    };

    let (g, loss) = forward(&store);
    g.backward(loss, &mut store).unwrap();
    for &id in &ids {
        let analytic = store.get(id).grad.clone().unwrap();
        let numeric = numeric_param_grad(&mut store, id, STEP, |s| {
            let (g, l) = forward(s);
            g.value(l).item()
        });
        let err = vector_relative_error(analytic.data(), &numeric, 1e-8);
        assert!(err < TOL, "param {} relative error {err:e}", store.get(id).name);
    }
}

#[test]
fn add_sub_mul_broadcast() {
    check(&[&[3, 4], &[4]], |g, v| g.add(v[0], v[1]).unwrap());
    check(&[&[2, 3, 4], &[3, 1]], |g, v| g.sub(v[0], v[1]).unwrap());
    check(&[&[2, 3, 4], &[4]], |g, v| g.mul(v[0], v[1]).unwrap());
    check(&[&[1, 3], &[2, 1]], |g, v| g.mul(v[0], v[1]).unwrap());
}

#[test]
fn scale_and_reductions() {
    check(&[&[5]], |g, v| g.scale(v[0], -2.5));
    check(&[&[3, 4]], |g, v| g.sum_last(v[0]));
    check(&[&[3, 4]], |g, v| g.mean_all(v[0]));
    check(&[&[3, 4]], |g, v| g.row_norm(v[0]));
    check(&[&[3, 4]], |g, v| {
        let a = g.abs(v[0]);
        g.sum_all(a)
    });
}

#[test]
fn matmul_and_bmm() {
    check(&[&[2, 3, 4], &[4, 5]], |g, v| g.matmul(v[0], v[1]).unwrap());
    check(&[&[3, 2, 4], &[3, 4, 5]], |g, v| g.bmm(v[0], v[1]).unwrap());
}

#[test]
fn shape_ops() {
    check(&[&[2, 3, 4]], |g, v| g.permute(v[0], &[2, 0, 1]).unwrap());
    check(&[&[2, 3, 4]], |g, v| g.transpose_last(v[0]).unwrap());
    check(&[&[2, 6]], |g, v| g.reshape(v[0], &[3, 4]).unwrap());
    check(&[&[1, 1, 4]], |g, v| g.broadcast_to(v[0], &[3, 2, 4]).unwrap());
    check(&[&[2, 1, 3], &[2, 4, 3]], |g, v| g.concat(&[v[0], v[1]], 1).unwrap());
    check(&[&[2, 5, 3]], |g, v| g.index(v[0], 1, 2).unwrap());
}

#[test]
fn activations_and_normalization() {
    check(&[&[3, 7]], |g, v| g.softmax_last(v[0]));
    check(&[&[3, 7]], |g, v| g.layer_norm_last(v[0], 1e-5));
    check(&[&[3, 7]], |g, v| g.gelu(v[0]));
    check(&[&[3, 7]], |g, v| g.leaky_relu(v[0], 0.01));
}

#[test]
fn convolutions() {
    check(&[&[2, 3, 6, 6], &[4, 3, 2, 2]], |g, v| g.conv2d(v[0], v[1], 2).unwrap());
    check(&[&[1, 2, 7, 7], &[3, 2, 3, 3]], |g, v| g.conv2d(v[0], v[1], 2).unwrap());
    check(&[&[2, 4, 3, 3], &[4, 2, 2, 2]], |g, v| g.conv_transpose2d(v[0], v[1], 2).unwrap());
    check(&[&[1, 3, 2, 2], &[3, 2, 3, 3]], |g, v| g.conv_transpose2d(v[0], v[1], 2).unwrap());
}

#[test]
fn composite_attention_block() {
    // softmax(q kᵀ) v with shared projections, exercising ops in combination
    check(&[&[2, 5, 4], &[4, 4], &[4, 4]], |g, v| {
        let q = g.matmul(v[0], v[1]).unwrap();
        let k = g.matmul(v[0], v[2]).unwrap();
        let kt = g.transpose_last(k).unwrap();
        let s = g.bmm(q, kt).unwrap();
        let s = g.scale(s, 0.5);
        let a = g.softmax_last(s);
        g.bmm(a, v[0]).unwrap()
    });
}

#[test]
fn input_leaf_gradients_are_returned() {
    let mut store = ParamStore::new();
    let mut g = Graph::new();
    let x = g.input(Tensor::from_vec(vec![1.0, -2.0, 3.0]), true);
    let sq = g.mul(x, x).unwrap();
    let loss = g.sum_all(sq);
    let grads = g.backward(loss, &mut store).unwrap();
    assert_eq!(grads.get(x).unwrap().data(), &[2.0, -4.0, 6.0]);
}
