use edar_nn::gradcheck::{check, random_case, LAYER_KINDS};
use edar_nn::{loss, GraphBuilder, Shape, Tensor};

const STEP: f64 = 1e-5;
const TOL: f64 = 1e-4;

#[test]
fn every_layer_kind_passes_finite_differences() {
    for kind in LAYER_KINDS {
        for seed in 0..20u64 {
            let (g, inputs) = random_case(kind, seed).unwrap();
            let r = check(&g, &inputs, STEP, seed).unwrap();
            assert!(
                r.worst() < TOL,
                "{kind} seed {seed}: param {:.3e} input {:.3e}",
                r.param_rel_err,
                r.input_rel_err
            );
        }
    }
}

#[test]
fn composite_graph_passes_finite_differences() {
    for seed in 0..5u64 {
        let mut b = GraphBuilder::new();
        let x = b.input("x", Shape::Map { channels: 2, size: Some((6, 6)) });
        let v = b.input("v", Shape::Vector(4));
        let c = b.conv("c1", x, 3, 3).unwrap();
        let a = b.leaky_relu("a1", c, 0.01);
        let d = b.depthwise("d1", a, 3).unwrap();
        let p = b.conv("p1", d, 3, 1).unwrap();
        let s = b.add("s1", p, a).unwrap();
        let m = b.maxpool2("m1", s).unwrap();
        let u = b.upsample2("u1", m).unwrap();
        let cat = b.concat("cat", u, s).unwrap();
        let q = b.maxpool2("m2", cat).unwrap();
        let f = b.flatten("f", q).unwrap();
        let fv = b.concat("fv", f, v).unwrap();
        let h = b.dense("h", fv, 5).unwrap();
        let h = b.sigmoid("sg", h);
        let o = b.dense("o", h, 4).unwrap();
        let g = b.build(o, seed).unwrap();
        let x = Tensor::from_vec(
            &[1, 2, 6, 6],
            (0..72).map(|i| ((i * 37 % 72) as f64 - 36.0) / 30.0).collect(),
        )
        .unwrap();
        let v = Tensor::from_vec(&[1, 4], vec![0.1, 0.2, 0.7, 0.9]).unwrap();
        let r = check(&g, &[x, v], STEP, seed).unwrap();
        assert!(r.worst() < TOL, "seed {seed}: {r:?}");
    }
}

#[test]
fn single_dense_mse_matches_closed_form() {
    // d/dW mean((Wx+b-y)^2) = 2 (Wx+b-y) x^T / N for a single output.
    let mut b = GraphBuilder::new();
    let x = b.input("x", Shape::Vector(3));
    let o = b.dense("fc", x, 1).unwrap();
    let g = b.build(o, 3).unwrap();
    let xs = Tensor::from_vec(&[4, 3], vec![1., 2., 3., -1., 0., 2., 0.5, 0.5, -0.5, 3., 1., 0.]).unwrap();
    let ys = Tensor::from_vec(&[4, 1], vec![0.5, -1.0, 2.0, 0.0]).unwrap();
    let tape = g.forward_tape(&[&xs]).unwrap();
    let (_, dl) = loss::mse(tape.output().unwrap(), &ys).unwrap();
    let grads = g.backward(&tape, &dl).unwrap();

    let w = g.params().get(0).data().to_vec();
    let bias = g.params().get(1).data()[0];
    let mut expect = [0.0; 3];
    for n in 0..4 {
        let row = &xs.data()[n * 3..n * 3 + 3];
        let pred: f64 = bias + row.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>();
        let resid = pred - ys.data()[n];
        for k in 0..3 {
            expect[k] += 2.0 * resid * row[k] / 4.0;
        }
    }
    for k in 0..3 {
        assert!((grads.params[0].data()[k] - expect[k]).abs() < 1e-12);
    }
}
