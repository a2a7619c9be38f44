//! Finite-difference coverage of every differentiable operation and of the
//! full objective for both architectures, all in 64-bit precision.

use vaelab::conv::Padding;
use vaelab::nn::ParamSet;
use vaelab::rng::{Rng, Stream};
use vaelab::tensor::Tensor;
use vaelab::vae::{loss_graph, Arch, VaeModel};

use super::{check_gradients, normal_tensor_f64, uniform_tensor, weighted_sum, FdReport};

fn params_from(entries: &[(&str, Tensor<f64>)]) -> ParamSet<f64> {
    let mut p = ParamSet::new();
    for (name, t) in entries {
        p.add(name, t.clone()).unwrap();
    }
    p
}

/// Every report the gradient-integrity gate checks: (what, report).
pub fn all_reports() -> Vec<(&'static str, FdReport)> {
    let mut rng = Rng::new(1234, Stream::Stats, 3);
    let mut out = Vec::new();

    // Dense layer: matmul plus broadcast bias.
    let p = params_from(&[
        ("w", normal_tensor_f64(vec![5, 4], &mut rng)),
        ("b", normal_tensor_f64(vec![4], &mut rng)),
        ("x", normal_tensor_f64(vec![3, 5], &mut rng)),
    ]);
    out.push((
        "dense",
        check_gradients(&p, 64, 1e-5, &|tape, sp| {
            let h = tape.matmul(sp.var("x"), sp.var("w")).unwrap();
            let h = tape.add_bias(h, sp.var("b")).unwrap();
            weighted_sum(tape, h, 11)
        }),
    ));

    // Pointwise nonlinearities. Inputs are kept away from the relu kink
    // and the clamp edges so the central difference stays two-sided.
    let p = params_from(&[("x", {
        let mut t = normal_tensor_f64(vec![4, 6], &mut rng);
        for v in t.data_mut() {
            if v.abs() < 0.05 {
                *v += 0.1;
            }
        }
        t
    })]);
    out.push((
        "relu",
        check_gradients(&p, 64, 1e-5, &|tape, sp| {
            let y = tape.relu(sp.var("x"));
            weighted_sum(tape, y, 12)
        }),
    ));
    out.push((
        "sigmoid",
        check_gradients(&p, 64, 1e-5, &|tape, sp| {
            let y = tape.sigmoid(sp.var("x"));
            weighted_sum(tape, y, 13)
        }),
    ));
    out.push((
        "exp",
        check_gradients(&p, 64, 1e-5, &|tape, sp| {
            let y = tape.exp(sp.var("x"));
            weighted_sum(tape, y, 14)
        }),
    ));
    out.push((
        "clamp",
        check_gradients(&p, 64, 1e-5, &|tape, sp| {
            let y = tape.clamp(sp.var("x"), -0.9, 0.9);
            weighted_sum(tape, y, 15)
        }),
    ));

    let p = params_from(&[("x", uniform_tensor(vec![4, 6], 0.2, 3.0, &mut rng))]);
    out.push((
        "log",
        check_gradients(&p, 64, 1e-6, &|tape, sp| {
            let y = tape.log(sp.var("x")).unwrap();
            weighted_sum(tape, y, 16)
        }),
    ));

    // Arithmetic: add, sub, mul, scale, add_const.
    let p = params_from(&[
        ("a", normal_tensor_f64(vec![3, 7], &mut rng)),
        ("b", normal_tensor_f64(vec![3, 7], &mut rng)),
    ]);
    out.push((
        "arithmetic",
        check_gradients(&p, 64, 1e-5, &|tape, sp| {
            let s = tape.add(sp.var("a"), sp.var("b")).unwrap();
            let d = tape.sub(s, sp.var("b")).unwrap();
            let m = tape.mul(d, sp.var("a")).unwrap();
            let m = tape.scale(m, 0.7);
            let m = tape.add_const(m, 0.3);
            weighted_sum(tape, m, 17)
        }),
    ));

    // Shape plumbing: reshape and column slicing.
    let p = params_from(&[("x", normal_tensor_f64(vec![4, 6], &mut rng))]);
    out.push((
        "reshape_slice",
        check_gradients(&p, 64, 1e-5, &|tape, sp| {
            let r = tape.reshape(sp.var("x"), vec![2, 12]).unwrap();
            let s = tape.slice_cols(r, 3, 9).unwrap();
            weighted_sum(tape, s, 18)
        }),
    ));

    // Convolutions, checking both kernel and input gradients.
    let p = params_from(&[
        ("k", normal_tensor_f64(vec![3, 3, 2, 3], &mut rng)),
        ("x", normal_tensor_f64(vec![2, 6, 6, 2], &mut rng)),
    ]);
    out.push((
        "conv2d_s1",
        check_gradients(&p, 48, 1e-5, &|tape, sp| {
            let y = tape
                .conv2d(sp.var("x"), sp.var("k"), 1, Padding::Same)
                .unwrap();
            weighted_sum(tape, y, 19)
        }),
    ));
    out.push((
        "conv2d_s2",
        check_gradients(&p, 48, 1e-5, &|tape, sp| {
            let y = tape
                .conv2d(sp.var("x"), sp.var("k"), 2, Padding::Same)
                .unwrap();
            weighted_sum(tape, y, 20)
        }),
    ));

    let p = params_from(&[
        ("k", normal_tensor_f64(vec![3, 3, 3, 2], &mut rng)),
        ("x", normal_tensor_f64(vec![2, 4, 4, 2], &mut rng)),
    ]);
    out.push((
        "conv2d_transpose_s2",
        check_gradients(&p, 48, 1e-5, &|tape, sp| {
            let y = tape.conv2d_transpose(sp.var("x"), sp.var("k"), 2).unwrap();
            weighted_sum(tape, y, 21)
        }),
    ));

    // Channel bias broadcast over a rank-4 feature map.
    let p = params_from(&[
        ("k", normal_tensor_f64(vec![3, 3, 2, 3], &mut rng)),
        ("b", normal_tensor_f64(vec![3], &mut rng)),
        ("x", normal_tensor_f64(vec![2, 6, 6, 2], &mut rng)),
    ]);
    out.push((
        "conv_bias",
        check_gradients(&p, 48, 1e-5, &|tape, sp| {
            let y = tape
                .conv2d(sp.var("x"), sp.var("k"), 2, Padding::Same)
                .unwrap();
            let y = tape.add_bias(y, sp.var("b")).unwrap();
            weighted_sum(tape, y, 22)
        }),
    ));

    // Softmax cross-entropy against fixed labels.
    let p = params_from(&[("logits", normal_tensor_f64(vec![5, 10], &mut rng))]);
    out.push((
        "softmax_cross_entropy",
        check_gradients(&p, 50, 1e-5, &|tape, sp| {
            tape.softmax_cross_entropy(sp.var("logits"), &[0, 3, 9, 5, 2])
                .unwrap()
        }),
    ));

    // The full objective, spot-checked across every parameter tensor. The
    // conv stack has thousands of relu preactivations, so the step must be
    // well below the smallest |preactivation| to keep the central
    // difference on one side of the kink.
    out.push(("vae_loss_fc", vae_loss_report(Arch::Fc, 25, &mut rng)));
    out.push(("vae_loss_conv", vae_loss_report(Arch::Conv, 12, &mut rng)));
    out
}

fn vae_loss_report(arch: Arch, picks: usize, rng: &mut Rng) -> FdReport {
    let model = VaeModel::init(arch, &mut Rng::new(31, Stream::Init, 0)).unwrap();
    let params: ParamSet<f64> = model.params.cast();
    let batch = 2;
    let x = uniform_tensor(vec![batch, 784], 0.05, 0.95, rng);
    let eps = normal_tensor_f64(vec![batch, 32], rng);
    check_gradients(&params, picks, 1e-6, &|tape, sp| {
        let xv = tape.input(x.clone());
        let ev = tape.input(eps.clone());
        loss_graph(tape, arch, sp, xv, ev, 0.048).unwrap().total
    })
}
