//! Helpers shared by the integration test targets.
#![allow(dead_code)]

use bnalign::nn::{Layer, LayerSpec, Mode};
use bnalign::rng;
use bnalign::Tensor;
use rand::Rng as _;

pub const H: f64 = 1e-5;
pub const TOL: f64 = 1e-4;

pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-5)
}

pub fn random_tensor(shape: &[usize], seed: u64) -> Tensor {
    let mut r = rng::seeded(seed);
    Tensor::from_fn(shape, |_| r.random_range(-1.0..1.0))
}

pub fn run(layers: &mut [Layer], x: &Tensor, mode: Mode) -> Tensor {
    let mut h = x.clone();
    for l in layers.iter_mut() {
        // fresh stream each pass so dropout masks repeat
        let mut r = rng::seeded(77);
        h = l.forward(&h, mode, &mut r).unwrap();
    }
    h
}

/// Scalar objective `Σ w·y` with fixed random weights `w`.
pub fn objective(layers: &mut [Layer], x: &Tensor, w: &Tensor, mode: Mode) -> f64 {
    let y = run(layers, x, mode);
    y.data().iter().zip(w.data()).map(|(a, b)| a * b).sum()
}

/// Returns the worst relative error over all input and parameter entries.
pub fn gradcheck(specs: &[LayerSpec], in_shape: &[usize], mode: Mode) -> f64 {
    let mut r = rng::seeded(1);
    let mut layers: Vec<Layer> = specs.iter().map(|s| s.build(&mut r).unwrap()).collect();
    // perturb affine parameters away from the (1, 0) initialisation
    for (li, l) in layers.iter_mut().enumerate() {
        for (pi, p) in l.params_mut().into_iter().enumerate() {
            let noise = random_tensor(p.value.shape(), 100 + (li * 10 + pi) as u64);
            for (v, e) in p.value.data_mut().iter_mut().zip(noise.data()) {
                *v += 0.3 * e;
            }
        }
    }
    let x = random_tensor(in_shape, 2);
    let y = run(&mut layers, &x, mode);
    let w = random_tensor(y.shape(), 3);

    // analytic
    let y = run(&mut layers, &x, mode);
    assert_eq!(y.shape(), w.shape());
    let mut g = w.clone();
    for l in layers.iter_mut().rev() {
        g = l.backward(&g).unwrap();
    }
    let dx = g;

    let mut worst = 0.0f64;
    for i in 0..x.len() {
        let mut xp = x.clone();
        xp.data_mut()[i] += H;
        let mut xm = x.clone();
        xm.data_mut()[i] -= H;
        let num = (objective(&mut layers, &xp, &w, mode) - objective(&mut layers, &xm, &w, mode)) / (2.0 * H);
        worst = worst.max(rel_err(dx.data()[i], num));
    }

    let analytic: Vec<Vec<f64>> = layers
        .iter()
        .flat_map(|l| l.params().into_iter().map(|p| p.grad.data().to_vec()))
        .collect();
    let mut slot = 0;
    for li in 0..layers.len() {
        let np = layers[li].params().len();
        for pi in 0..np {
            let len = layers[li].params()[pi].value.len();
            for j in 0..len {
                let orig = layers[li].params()[pi].value.data()[j];
                layers[li].params_mut()[pi].value.data_mut()[j] = orig + H;
                let fp = objective(&mut layers, &x, &w, mode);
                layers[li].params_mut()[pi].value.data_mut()[j] = orig - H;
                let fm = objective(&mut layers, &x, &w, mode);
                layers[li].params_mut()[pi].value.data_mut()[j] = orig;
                let num = (fp - fm) / (2.0 * H);
                worst = worst.max(rel_err(analytic[slot][j], num));
            }
            slot += 1;
        }
    }
    worst
}

/// One small configuration of every layer kind, for gradient checks.
pub fn layer_kind_cases() -> Vec<(String, Vec<LayerSpec>, Vec<usize>, Mode)> {
    let bn = LayerSpec::BatchNorm {
        channels: 3,
        eps: 1e-5,
        momentum: 0.1,
    };
    let mut cases = vec![
        (
            "conv2d".to_string(),
            vec![LayerSpec::Conv2d {
                in_channels: 2,
                out_channels: 3,
                kernel: 3,
                stride: 2,
                padding: 1,
                bias: true,
            }],
            vec![2, 2, 5, 5],
            Mode::Train,
        ),
        ("dense".into(), vec![LayerSpec::Dense { inputs: 6, outputs: 4 }], vec![3, 6], Mode::Train),
        ("relu".into(), vec![LayerSpec::Relu], vec![2, 3, 3, 3], Mode::Train),
        ("max-pool".into(), vec![LayerSpec::MaxPool { window: 2, stride: 2 }], vec![2, 2, 4, 4], Mode::Train),
        ("avg-pool".into(), vec![LayerSpec::AvgPool { window: 3, stride: 1 }], vec![2, 2, 4, 4], Mode::Train),
        ("batch-norm (train)".into(), vec![bn.clone()], vec![4, 3, 2, 2], Mode::Train),
        ("batch-norm (eval)".into(), vec![bn.clone()], vec![4, 3, 2, 2], Mode::Eval),
        ("batch-norm dense (train)".into(), vec![bn], vec![5, 3], Mode::Train),
        (
            "group-norm".into(),
            vec![LayerSpec::GroupNorm {
                channels: 4,
                groups: 2,
                eps: 1e-5,
            }],
            vec![2, 4, 3, 3],
            Mode::Train,
        ),
        (
            "flatten+dense".into(),
            vec![LayerSpec::Flatten, LayerSpec::Dense { inputs: 12, outputs: 2 }],
            vec![2, 3, 2, 2],
            Mode::Train,
        ),
        ("dropout (train)".into(), vec![LayerSpec::Dropout { rate: 0.4 }], vec![3, 8], Mode::Train),
    ];
    for affine in [false, true] {
        cases.push((
            format!("instance-norm affine={affine}"),
            vec![LayerSpec::InstanceNorm {
                channels: 3,
                affine,
                eps: 1e-5,
            }],
            vec![2, 3, 3, 3],
            Mode::Train,
        ));
    }
    cases
}
