use mgdspr_numerics::gradcheck::{check_input, check_params, GradCheck};
use mgdspr_numerics::nn::{EncoderLayer, LayerNorm, Linear, Lstm, MultiHeadSelfAttention};
use mgdspr_numerics::params::uniform;
use mgdspr_numerics::{AdaGrad, Graph, NodeId, NumericsError, ParamStore, Tensor};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const TOL: f64 = 1e-3;
const EPS: f64 = 1e-3;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn rand_tensor(rows: usize, cols: usize, seed: u64) -> Tensor<f64> {
    uniform(&[rows, cols], 1.0, &mut rng(seed))
}

fn assert_passes(name: &str, report: GradCheck) {
    assert!(
        report.passes(TOL),
        "{name}: max rel error {:.3e} at {:?} over {} entries",
        report.max_rel_error,
        report.worst,
        report.checked
    );
}

/// Projects an arbitrary node to a scalar with fixed random weights so that
/// every output entry gets a distinct upstream gradient.
fn project(g: &mut Graph<'_, f64>, x: NodeId, seed: u64) -> NodeId {
    let (m, n) = g.shape(x);
    let w = g.input(rand_tensor(m, n, seed));
    let p = g.mul(x, w);
    g.sum_all(p)
}

#[test]
fn sum_gradient_is_ones() {
    let store = ParamStore::<f32>::new();
    let mut g = Graph::new(&store);
    let x = g.variable(Tensor::row(vec![1.0, -2.0, 3.0]));
    let loss = g.sum_all(x);
    let grads = g.backward(loss).unwrap();
    assert_eq!(grads.node(x).unwrap().data(), &[1.0, 1.0, 1.0]);
}

#[test]
fn dot_self_gradient_is_twice_input() {
    let store = ParamStore::<f32>::new();
    let mut g = Graph::new(&store);
    let x = g.variable(Tensor::row(vec![1.0, 2.0]));
    let d = g.matmul_bt(x, x);
    let grads = g.backward(d).unwrap();
    assert_eq!(grads.node(x).unwrap().data(), &[2.0, 4.0]);
}

#[test]
fn non_scalar_loss_is_rejected() {
    let store = ParamStore::<f32>::new();
    let mut g = Graph::new(&store);
    let x = g.variable(Tensor::row(vec![1.0, 2.0]));
    let y = g.tanh(x);
    assert!(matches!(g.backward(y), Err(NumericsError::NonScalarLoss(_))));
}

#[test]
fn non_finite_value_aborts_backward() {
    let store = ParamStore::<f32>::new();
    let mut g = Graph::new(&store);
    let x = g.variable(Tensor::row(vec![f32::MAX, 1.0]));
    let y = g.scale(x, 10.0);
    let loss = g.sum_all(y);
    match g.backward(loss) {
        Err(NumericsError::NonFinite { op, node }) => {
            assert_eq!(op, "scale");
            assert_eq!(node, y.index());
        }
        other => panic!("expected NonFinite, got {other:?}"),
    }
}

#[test]
fn softmax_cross_entropy_matches_finite_differences() {
    let store = ParamStore::<f64>::new();
    let logits = rand_tensor(1, 5, 11);
    let report = check_input(&store, &logits, EPS, |g, x| g.softmax_cross_entropy(x, &[2], None)).unwrap();
    assert_passes("softmax_ce", report);
    // masked variant over a batch
    let logits = rand_tensor(3, 5, 12);
    let mask = vec![
        true, true, false, true, true, //
        true, true, true, true, false, //
        false, true, true, true, true,
    ];
    let report = check_input(&store, &logits, EPS, |g, x| {
        g.softmax_cross_entropy(x, &[0, 3, 1], Some(&mask))
    })
    .unwrap();
    assert_passes("masked softmax_ce", report);
}

#[test]
fn elementwise_and_structural_ops_match_finite_differences() {
    let store = ParamStore::<f64>::new();
    let x = rand_tensor(3, 4, 1);
    type Build = Box<dyn Fn(&mut Graph<'_, f64>, NodeId) -> NodeId>;
    let cases: Vec<(&str, Build)> = vec![
        ("tanh", Box::new(|g, x| g.tanh(x))),
        ("sigmoid", Box::new(|g, x| g.sigmoid(x))),
        ("relu", Box::new(|g, x| g.relu(x))),
        ("scale", Box::new(|g, x| g.scale(x, -1.7))),
        ("add_scalar", Box::new(|g, x| g.add_scalar(x, 0.3))),
        ("scale_rows", Box::new(|g, x| g.scale_rows(x, &[0.5, -2.0, 1.5]))),
        ("softmax", Box::new(|g, x| g.softmax(x, None))),
        ("masked_softmax", Box::new(|g, x| {
            let mask: Vec<bool> = (0..12).map(|i| i % 3 != 1).collect();
            g.softmax(x, Some(&mask))
        })),
        ("layer_norm", Box::new(|g, x| g.layer_norm(x, 1e-5))),
        ("mean_rows", Box::new(|g, x| g.mean_rows(x))),
        ("sum_cols", Box::new(|g, x| g.sum_cols(x))),
        ("mean_all", Box::new(|g, x| g.mean_all(x))),
        ("slice_rows", Box::new(|g, x| g.slice_rows(x, 1, 2))),
        ("slice_cols", Box::new(|g, x| g.slice_cols(x, 1, 2))),
        ("take_rows", Box::new(|g, x| g.take_rows(x, &[2, 0, 2]))),
        ("take_along_rows", Box::new(|g, x| g.take_along_rows(x, &[3, 1, 0, 0, 2, 2], 2))),
        ("concat_rows", Box::new(|g, x| {
            let t = g.tanh(x);
            g.concat_rows(&[x, t])
        })),
        ("concat_cols", Box::new(|g, x| {
            let t = g.sigmoid(x);
            g.concat_cols(&[t, x])
        })),
        ("repeat_rows", Box::new(|g, x| {
            let r = g.slice_rows(x, 0, 1);
            g.repeat_rows(r, 3)
        })),
        ("repeat_cols", Box::new(|g, x| {
            let c = g.slice_cols(x, 2, 1);
            g.repeat_cols(c, 5)
        })),
        ("mul", Box::new(|g, x| {
            let t = g.tanh(x);
            g.mul(x, t)
        })),
        ("sub", Box::new(|g, x| {
            let t = g.sigmoid(x);
            g.sub(t, x)
        })),
        ("add_row", Box::new(|g, x| {
            let r = g.slice_rows(x, 1, 1);
            g.add_row(x, r)
        })),
        ("mul_row", Box::new(|g, x| {
            let r = g.slice_rows(x, 2, 1);
            g.mul_row(x, r)
        })),
        ("matmul", Box::new(|g, x| {
            let w = g.input(rand_tensor(4, 2, 9));
            let y = g.matmul(x, w);
            let xt = g.slice_cols(x, 0, 3);
            g.matmul(xt, y)
        })),
        ("matmul_bt", Box::new(|g, x| g.matmul_bt(x, x))),
    ];
    for (i, (name, build)) in cases.iter().enumerate() {
        let report = check_input(&store, &x, EPS, |g, v| {
            let y = build(g, v);
            project(g, y, 100 + i as u64)
        })
        .unwrap();
        assert_passes(name, report);
    }
}

#[test]
fn gather_ops_match_finite_differences() {
    let mut store = ParamStore::<f64>::new();
    let table = store.add("table", rand_tensor(5, 3, 4)).unwrap();
    let report = check_params(&store, EPS, 100, |g| {
        let a = g.gather(table, &[4, 1, 4]);
        let b = g.gather_mean(table, &[vec![0, 1], vec![2], vec![1, 1, 3]]);
        let c = g.concat_rows(&[a, b]);
        let t = g.tanh(c);
        project(g, t, 5)
    })
    .unwrap();
    assert_passes("gather", report);
}

#[test]
fn attention_matches_finite_differences() {
    let store = ParamStore::<f64>::new();
    for (heads, scaled) in [(1, false), (2, true), (4, true)] {
        // q (2×4), k/v (3×4) packed into one variable
        let x = rand_tensor(8, 4, 20 + heads as u64);
        let report = check_input(&store, &x, EPS, |g, v| {
            let q = g.slice_rows(v, 0, 2);
            let k = g.slice_rows(v, 2, 3);
            let val = g.slice_rows(v, 5, 3);
            let mask = [true, false, true];
            let a = g.attention(q, k, val, heads, scaled, Some(&mask));
            let b = g.attention(q, k, val, heads, scaled, None);
            let s = g.add(a, b);
            project(g, s, 21)
        })
        .unwrap();
        assert_passes(&format!("attention h={heads}"), report);
    }
}

#[test]
fn lstm_cell_matches_finite_differences() {
    let store = ParamStore::<f64>::new();
    // gates 2×8 and cell state 2×2 packed side by side
    let x = rand_tensor(2, 10, 31);
    let report = check_input(&store, &x, EPS, |g, v| {
        let gates = g.slice_cols(v, 0, 8);
        let c = g.slice_cols(v, 8, 2);
        let hc = g.lstm_cell(gates, c);
        project(g, hc, 32)
    })
    .unwrap();
    assert_passes("lstm_cell", report);
}

#[test]
fn layers_match_finite_differences() {
    let mut store = ParamStore::<f64>::new();
    let mut r = rng(40);
    let lin = Linear::new(&mut store, "lin", 4, 4, true, &mut r).unwrap();
    let ln = LayerNorm::new(&mut store, "ln", 4).unwrap();
    let mha = MultiHeadSelfAttention::new(&mut store, "mha", 4, 2, true, &mut r).unwrap();
    let enc = EncoderLayer::new(&mut store, "enc", 4, 2, 8, true, &mut r).unwrap();
    let lstm = Lstm::new(&mut store, "lstm", 4, 2, 0.0, &mut r).unwrap();
    // perturb the unit gains and zero biases so they carry signal
    for id in store.ids().collect::<Vec<_>>() {
        let noise: Tensor<f64> = uniform(store.get(id).shape(), 0.3, &mut r);
        let t = store.get_mut(id);
        for (a, b) in t.data_mut().iter_mut().zip(noise.data()) {
            *a += b;
        }
    }
    let x = rand_tensor(3, 4, 41);
    let build = |g: &mut Graph<'_, f64>, v: NodeId| {
        let a = lin.forward(g, v);
        let a = ln.forward(g, a);
        let a = mha.forward(g, a, None);
        let a = enc.forward(g, a);
        let a = lstm.forward(g, a, &mut rng(0)).unwrap();
        project(g, a, 42)
    };
    assert_passes("layers (input)", check_input(&store, &x, EPS, build).unwrap());
    let report = check_params(&store, EPS, 40, |g| {
        let v = g.input(x.clone());
        build(g, v)
    })
    .unwrap();
    assert_passes("layers (params)", report);
}

#[test]
fn lstm_sum_of_hidden_states_gradient_wrt_input() {
    // T=3, d=4
    let mut store = ParamStore::<f64>::new();
    let lstm = Lstm::new(&mut store, "lstm", 4, 2, 0.2, &mut rng(50)).unwrap();
    let x = rand_tensor(3, 4, 51);
    let report = check_input(&store, &x, EPS, |g, v| {
        let h = lstm.forward(g, v, &mut rng(0)).unwrap();
        g.sum_all(h)
    })
    .unwrap();
    assert_passes("lstm input", report);
}

#[test]
fn lstm_zero_everything_gives_zero_states() {
    let mut store = ParamStore::<f32>::new();
    let lstm = Lstm::new(&mut store, "lstm", 4, 2, 0.2, &mut rng(1)).unwrap();
    for id in store.ids().collect::<Vec<_>>() {
        store.get_mut(id).data_mut().iter_mut().for_each(|v| *v = 0.0);
    }
    let mut g = Graph::new(&store);
    let x = g.input(Tensor::zeros(&[5, 4]));
    let h = lstm.forward(&mut g, x, &mut rng(0)).unwrap();
    assert_eq!(g.shape(h), (5, 4));
    assert!(g.value(h).data().iter().all(|&v| v == 0.0));
}

#[test]
fn lstm_rejects_empty_sequence() {
    let mut store = ParamStore::<f32>::new();
    let lstm = Lstm::new(&mut store, "lstm", 4, 2, 0.2, &mut rng(1)).unwrap();
    let mut g = Graph::new(&store);
    let x = g.input(Tensor::zeros(&[0, 4]));
    assert!(matches!(lstm.forward(&mut g, x, &mut rng(0)), Err(NumericsError::EmptySequence)));
}

#[test]
fn dropout_only_active_in_training() {
    let mut store = ParamStore::<f32>::new();
    let lstm = Lstm::new(&mut store, "lstm", 4, 2, 0.5, &mut rng(2)).unwrap();
    let x: Tensor<f32> = uniform(&[3, 4], 1.0, &mut rng(3));
    let run = |train: bool, seed: u64| {
        let mut g = if train { Graph::training(&store) } else { Graph::new(&store) };
        let v = g.input(x.clone());
        let h = lstm.forward(&mut g, v, &mut rng(seed)).unwrap();
        g.value(h).clone()
    };
    assert_eq!(run(false, 1), run(false, 2));
    assert_ne!(run(true, 1), run(false, 1));
}

#[test]
fn mha_rejects_indivisible_heads() {
    let mut store = ParamStore::<f32>::new();
    let err = MultiHeadSelfAttention::new(&mut store, "m", 10, 4, true, &mut rng(0)).unwrap_err();
    assert!(matches!(err, NumericsError::Heads { dim: 10, heads: 4 }));
    let ok = MultiHeadSelfAttention::new(&mut store, "m8", 128, 8, true, &mut rng(0)).unwrap();
    assert_eq!(ok.head_dim(&store), 16);
}

#[test]
fn mha_single_row_is_value_projection() {
    let mut store = ParamStore::<f64>::new();
    let mha = MultiHeadSelfAttention::new(&mut store, "m", 4, 2, true, &mut rng(7)).unwrap();
    let x = rand_tensor(1, 4, 8);
    let mut g = Graph::new(&store);
    let v = g.input(x.clone());
    let out = mha.forward(&mut g, v, None);
    let wv = g.param(mha.wv);
    let proj = g.matmul(v, wv);
    for (a, b) in g.value(out).data().iter().zip(g.value(proj).data()) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn mha_identical_rows_give_identical_outputs() {
    let mut store = ParamStore::<f64>::new();
    let mha = MultiHeadSelfAttention::new(&mut store, "m", 4, 2, true, &mut rng(7)).unwrap();
    let row = rand_tensor(1, 4, 9).into_data();
    let x = Tensor::from_rows(&[row.clone(), row]).unwrap();
    let mut g = Graph::new(&store);
    let v = g.input(x);
    let o = mha.forward(&mut g, v, None);
    let out = g.value(o).clone();
    assert_eq!(out.row_slice(0), out.row_slice(1));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn softmax_rows_are_distributions(vals in prop::collection::vec(-30.0f32..30.0, 12)) {
        let store = ParamStore::<f32>::new();
        let mut g = Graph::new(&store);
        let x = g.input(Tensor::matrix(3, 4, vals).unwrap());
        let s = g.softmax(x, None);
        for r in 0..3 {
            let row = g.value(s).row_slice(r);
            let sum: f64 = row.iter().map(|&v| v as f64).sum();
            prop_assert!((sum - 1.0).abs() < 1e-6);
            prop_assert!(row.iter().all(|&v| v >= 0.0 && v <= 1.0));
        }
    }

    #[test]
    fn attention_rows_are_convex_mixtures(vals in prop::collection::vec(-3.0f64..3.0, 40), heads in prop::sample::select(vec![1usize, 2, 4])) {
        let store = ParamStore::<f64>::new();
        let mut g = Graph::new(&store);
        let q = g.input(Tensor::matrix(2, 4, vals[..8].to_vec()).unwrap());
        let k = g.input(Tensor::matrix(4, 4, vals[8..24].to_vec()).unwrap());
        let v = g.input(Tensor::matrix(4, 4, vals[24..40].to_vec()).unwrap());
        let out = g.attention(q, k, v, heads, true, None);
        let w = g.attention_weights(out).unwrap().to_vec();
        for chunk in w.chunks(4) {
            prop_assert!(chunk.iter().all(|&x| x >= 0.0));
            prop_assert!((chunk.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
        // each output coordinate lies within the per-column range of the values
        let dh = 4 / heads;
        for i in 0..2 {
            for c in 0..4 {
                let col: Vec<f64> = (0..4).map(|j| g.value(v).at(j, c)).collect();
                let lo = col.iter().cloned().fold(f64::INFINITY, f64::min);
                let hi = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let o = g.value(out).at(i, c);
                prop_assert!(o >= lo - 1e-9 && o <= hi + 1e-9, "head dim {dh}");
            }
        }
    }

    #[test]
    fn adagrad_accumulators_never_decrease(grads in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 3), 1..6)) {
        let mut store = ParamStore::<f64>::new();
        let p = store.add("p", Tensor::row(vec![0.0; 3])).unwrap();
        let mut opt = AdaGrad::new(0.1, 3.0);
        let mut prev = vec![0.0; 3];
        for gvals in grads {
            let pg = {
                let mut g = Graph::new(&store);
                let x = g.param(p);
                let c = g.input(Tensor::row(gvals));
                let y = g.mul(x, c);
                let l = g.sum_all(y);
                g.backward(l).unwrap().into_params()
            };
            opt.step(&mut store, &pg).unwrap();
            let acc = opt.accumulator(p.index()).unwrap().data().to_vec();
            for (a, b) in acc.iter().zip(&prev) {
                prop_assert!(a >= b);
            }
            prev = acc;
        }
    }
}
