use faf_tensor::checkpoint::{decode, encode};
use faf_tensor::{trunc_normal, Adam, Graph, ParamGroup, ParamStore, Tensor};
use proptest::prelude::*;

fn tensor_strategy() -> impl Strategy<Value = Tensor> {
    prop::collection::vec(1usize..5, 1..4).prop_flat_map(|shape| {
        let n: usize = shape.iter().product();
        prop::collection::vec(prop::num::f64::ANY, n)
            .prop_map(move |data| Tensor::new(shape.clone(), data).unwrap())
    })
}

proptest! {
    #[test]
    fn checkpoint_round_trip_is_bit_exact(
        tensors in prop::collection::vec(("[a-z.]{1,12}", tensor_strategy()), 0..6)
    ) {
        let bytes = encode(tensors.iter().map(|(n, t)| (n.as_str(), t))).unwrap();
        let back = decode(&bytes).unwrap();
        prop_assert_eq!(back.len(), tensors.len());
        for ((n0, t0), (n1, t1)) in tensors.iter().zip(&back) {
            prop_assert_eq!(n0, n1);
            prop_assert_eq!(t0.checksum(), t1.checksum());
        }
        let again = encode(back.iter().map(|(n, t)| (n.as_str(), t))).unwrap();
        prop_assert_eq!(bytes, again);
    }

    #[test]
    fn adam_with_zero_lr_is_identity(seed in 0u64..1000, steps in 1usize..5) {
        let mut store = ParamStore::new();
        let id = store.insert("w", trunc_normal(&[3, 4], 1.0, seed)).unwrap();
        let before = store.checksum(None);
        let mut opt = Adam::new(vec![ParamGroup { name: "all".into(), lr: 0.0, params: vec![id] }]).unwrap();
        for _ in 0..steps {
            store.get_mut(id).grad = Some(trunc_normal(&[3, 4], 1.0, seed + 1));
            opt.step(&mut store).unwrap();
        }
        prop_assert_eq!(before, store.checksum(None));
    }
}

#[test]
fn forward_and_backward_are_deterministic() {
    let run = || {
        let mut store = ParamStore::new();
        let w = store.insert("w", trunc_normal(&[8, 8], 0.5, 3)).unwrap();
        let mut g = Graph::new();
        let x = g.constant(trunc_normal(&[4, 8], 1.0, 4));
        let wv = g.param(&store, w);
        let h = g.matmul(x, wv).unwrap();
        let h = g.layer_norm_last(h, 1e-5);
        let h = g.gelu(h);
        let s = g.softmax_last(h);
        let loss = g.sum_all(s);
        let loss = g.scale(loss, 1.0);
        let sq = g.mul(h, h).unwrap();
        let l2 = g.mean_all(sq);
        let total = g.add(loss, l2).unwrap();
        g.backward(total, &mut store).unwrap();
        (g.value(total).item().to_bits(), store.get(w).grad.as_ref().unwrap().checksum())
    };
    assert_eq!(run(), run());
}
