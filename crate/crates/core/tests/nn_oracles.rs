mod common;

use cheerbots_core::nn::{
    bind, absorb_grads, forward_row, Activation, DenseNet, DenseSpec, Init, Mat, Module, OptimConfig, Optimizer,
    Tape, Tensor, DEFAULT_LEAKY_SLOPE,
};
use cheerbots_core::rng_from_seed;
use common::oracles::{mlp_by_loops, LoopLayer};

fn unpack(net: &DenseNet) -> Vec<LoopLayer<'static>> {
    net.layers()
        .iter()
        .map(|l| {
            let (rows, cols) = (l.weight.shape()[0], l.weight.shape()[1]);
            let w = (0..rows).map(|i| l.weight.values()[i * cols..(i + 1) * cols].to_vec()).collect();
            let act = match l.activation {
                Activation::LeakyRelu => "leaky",
                Activation::Tanh => "tanh",
                _ => "identity",
            };
            (w, l.bias.values().to_vec(), act)
        })
        .collect()
}

#[test]
fn dense_forward_matches_loop_oracle() {
    for seed in 0..10 {
        let spec = DenseSpec::mlp(&[5, 7, 3], Activation::LeakyRelu, Activation::Tanh);
        let net = DenseNet::new(&spec, Init::Xavier, &mut rng_from_seed(seed)).unwrap();
        let x: Vec<f64> = (0..5).map(|i| (i as f64 - 2.0) * 0.37 + seed as f64 * 0.01).collect();
        let got = forward_row(&net, &x).unwrap();
        let want = mlp_by_loops(&unpack(&net), &x, DEFAULT_LEAKY_SLOPE);
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() < 1e-12, "seed {seed}: {g} vs {w}");
        }
    }
}

#[test]
fn adam_follows_the_recurrence() {
    // minimize sum(w * c) so every step sees the constant gradient c
    let c = [0.3, -2.0, 5.0];
    let mut w = Tensor::new(vec![3], vec![0.1, 0.2, -0.3]).unwrap();
    let mut opt = Optimizer::new(OptimConfig::adam(0.01).with_clip(1.0)).unwrap();
    let (b1, b2, eps, lr) = (0.9f64, 0.999f64, 1e-8, 0.01);
    let mut expect = [0.1, 0.2, -0.3];
    let mut m = [0.0; 3];
    let mut v = [0.0; 3];
    for t in 1..=25 {
        let mut tape = Tape::new();
        let b = bind(&w, &mut tape);
        let loss = tape.weighted_sum(b.nodes()[0], c.to_vec());
        let g = tape.backward(loss);
        absorb_grads(&mut w, &b, &g);
        opt.step(&mut w).unwrap();
        for i in 0..3 {
            let gi = c[i].clamp(-1.0, 1.0);
            m[i] = b1 * m[i] + (1.0 - b1) * gi;
            v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
            let mh = m[i] / (1.0 - b1.powi(t));
            let vh = v[i] / (1.0 - b2.powi(t));
            expect[i] -= lr * mh / (vh.sqrt() + eps);
        }
        for (got, want) in w.values().iter().zip(&expect) {
            assert!((got - want).abs() < 1e-12, "step {t}");
        }
    }
}

#[test]
fn weight_matrix_layout_is_row_major_in_by_out() {
    let mut tape = Tape::new();
    let a = tape.leaf(Mat::from_rows(&[vec![1.0, 2.0]]));
    let w = tape.leaf(Mat::from_rows(&[vec![1.0, 0.0, 2.0], vec![0.0, 1.0, 3.0]]));
    let y = tape.matmul(a, w);
    assert_eq!(tape.value(y).data, vec![1.0, 2.0, 8.0]);
    let net = DenseNet::new(&DenseSpec::mlp(&[2, 3], Activation::Identity, Activation::Identity), Init::Zeros, &mut rng_from_seed(0)).unwrap();
    assert_eq!(net.shapes(), vec![vec![2, 3], vec![3]]);
}
