//! Backward passes against central finite differences.

mod common;

use bnalign::nn::{softmax_cross_entropy, Layer, LayerSpec, Mode};
use bnalign::rng;
use bnalign::Tensor;
use common::{gradcheck, random_tensor, rel_err, run, H, TOL};

fn assert_grad(name: &str, specs: &[LayerSpec], in_shape: &[usize], mode: Mode) {
    let e = gradcheck(specs, in_shape, mode);
    println!("gradcheck {name:<24} max rel err {e:.3e}");
    assert!(e < TOL, "{name}: max relative error {e:.3e} >= {TOL}");
}

#[test]
fn conv2d_gradients() {
    let spec = LayerSpec::Conv2d {
        in_channels: 2,
        out_channels: 3,
        kernel: 3,
        stride: 2,
        padding: 1,
        bias: true,
    };
    assert_grad("conv2d", &[spec], &[2, 2, 5, 5], Mode::Train);
}

#[test]
fn dense_gradients() {
    assert_grad("dense", &[LayerSpec::Dense { inputs: 6, outputs: 4 }], &[3, 6], Mode::Train);
}

#[test]
fn relu_gradients() {
    assert_grad("relu", &[LayerSpec::Relu], &[2, 3, 3, 3], Mode::Train);
}

#[test]
fn pool_gradients() {
    assert_grad("max-pool", &[LayerSpec::MaxPool { window: 2, stride: 2 }], &[2, 2, 4, 4], Mode::Train);
    assert_grad("avg-pool", &[LayerSpec::AvgPool { window: 3, stride: 1 }], &[2, 2, 4, 4], Mode::Train);
}

#[test]
fn batch_norm_gradients() {
    let bn = LayerSpec::BatchNorm {
        channels: 3,
        eps: 1e-5,
        momentum: 0.1,
    };
    assert_grad("batch-norm (train)", std::slice::from_ref(&bn), &[4, 3, 2, 2], Mode::Train);
    assert_grad("batch-norm (eval)", std::slice::from_ref(&bn), &[4, 3, 2, 2], Mode::Eval);
    assert_grad("batch-norm dense (train)", &[bn], &[5, 3], Mode::Train);
}

#[test]
fn group_and_instance_norm_gradients() {
    let gn = LayerSpec::GroupNorm {
        channels: 4,
        groups: 2,
        eps: 1e-5,
    };
    assert_grad("group-norm", &[gn], &[2, 4, 3, 3], Mode::Train);
    for affine in [false, true] {
        let inn = LayerSpec::InstanceNorm {
            channels: 3,
            affine,
            eps: 1e-5,
        };
        assert_grad(&format!("instance-norm affine={affine}"), &[inn], &[2, 3, 3, 3], Mode::Train);
    }
}

#[test]
fn flatten_and_dropout_gradients() {
    assert_grad(
        "flatten+dense",
        &[LayerSpec::Flatten, LayerSpec::Dense { inputs: 12, outputs: 2 }],
        &[2, 3, 2, 2],
        Mode::Train,
    );
    assert_grad("dropout (train)", &[LayerSpec::Dropout { rate: 0.4 }], &[3, 8], Mode::Train);
}

#[test]
fn stacked_block_gradients() {
    let specs = [
        LayerSpec::Conv2d {
            in_channels: 1,
            out_channels: 2,
            kernel: 3,
            stride: 1,
            padding: 1,
            bias: false,
        },
        LayerSpec::BatchNorm {
            channels: 2,
            eps: 1e-5,
            momentum: 0.1,
        },
        LayerSpec::Relu,
        LayerSpec::MaxPool { window: 2, stride: 2 },
        LayerSpec::AvgPool { window: 2, stride: 2 },
        LayerSpec::Flatten,
        LayerSpec::Dense { inputs: 2, outputs: 3 },
    ];
    assert_grad("conv-bn-relu-pool-dense", &specs, &[3, 1, 4, 4], Mode::Train);
}

#[test]
fn softmax_cross_entropy_head_gradient() {
    let logits = random_tensor(&[3, 4], 5);
    let labels = [0usize, 3, 1];
    let (_, g) = softmax_cross_entropy(&logits, &labels).unwrap();
    let mut worst = 0.0f64;
    for i in 0..logits.len() {
        let mut p = logits.clone();
        p.data_mut()[i] += H;
        let mut m = logits.clone();
        m.data_mut()[i] -= H;
        let num = (softmax_cross_entropy(&p, &labels).unwrap().0 - softmax_cross_entropy(&m, &labels).unwrap().0) / (2.0 * H);
        worst = worst.max(rel_err(g.data()[i], num));
    }
    println!("gradcheck softmax-ce head max rel err {worst:.3e}");
    assert!(worst < TOL);
}

#[test]
fn zero_upstream_gradient_gives_zero_parameter_gradients() {
    let mut r = rng::seeded(4);
    let specs = [
        LayerSpec::Conv2d {
            in_channels: 1,
            out_channels: 2,
            kernel: 3,
            stride: 1,
            padding: 0,
            bias: true,
        },
        LayerSpec::BatchNorm {
            channels: 2,
            eps: 1e-5,
            momentum: 0.1,
        },
        LayerSpec::Flatten,
        LayerSpec::Dense { inputs: 8, outputs: 2 },
    ];
    let mut layers: Vec<Layer> = specs.iter().map(|s| s.build(&mut r).unwrap()).collect();
    let x = random_tensor(&[2, 1, 4, 4], 8);
    let y = run(&mut layers, &x, Mode::Train);
    let mut g = Tensor::zeros(y.shape());
    for l in layers.iter_mut().rev() {
        g = l.backward(&g).unwrap();
    }
    for l in &layers {
        for p in l.params() {
            assert!(p.grad.data().iter().all(|&v| v == 0.0));
        }
    }
}
