mod common;

use common::{finite_difference, reference_forward};
use rand::Rng;
use spectraprint::data::Dataset;
use spectraprint::nn::{self, softmax, Layer, LayerSpec, Model, TrainConfig};
use spectraprint::{persist, seed, Error, Tensor};

fn conv(cin: usize, cout: usize, stride: usize) -> LayerSpec {
    LayerSpec::Conv2d { in_channels: cin, out_channels: cout, kernel: 3, stride, padding: 1, bias: true }
}

/// One small net per layer kind, all at or under 64 parameters.
fn gradient_nets() -> Vec<(&'static str, Vec<LayerSpec>, Vec<usize>)> {
    vec![
        ("linear", vec![LayerSpec::linear(6, 4)], vec![6]),
        ("relu", vec![LayerSpec::linear(4, 5), LayerSpec::Relu, LayerSpec::linear(5, 3)], vec![4]),
        ("leaky_relu", vec![LayerSpec::linear(4, 5), LayerSpec::LeakyRelu { slope: 0.1 }, LayerSpec::linear(5, 3)], vec![4]),
        ("conv2d", vec![conv(1, 2, 1), LayerSpec::Flatten, LayerSpec::linear(18, 2)], vec![3, 3, 1]),
        ("conv2d_stride2", vec![conv(1, 2, 2), LayerSpec::Flatten, LayerSpec::linear(8, 2)], vec![4, 4, 1]),
        ("maxpool", vec![conv(1, 1, 1), LayerSpec::MaxPool { size: 2 }, LayerSpec::Flatten, LayerSpec::linear(4, 3)], vec![4, 4, 1]),
        ("flatten", vec![LayerSpec::Flatten, LayerSpec::linear(8, 3)], vec![2, 2, 2]),
    ]
}

#[test]
fn input_gradient_matches_central_differences() {
    let mut rng = seed::rng(5);
    for (name, specs, shape) in gradient_nets() {
        let model = Model::new(specs, shape.clone(), 11).unwrap();
        assert!(model.param_count() <= 64, "{name}: {} params", model.param_count());
        for trial in 0..5 {
            let n: usize = shape.iter().product();
            let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let label = trial % model.num_classes();
            let input = Tensor::new(shape.clone(), x.iter().map(|&v| v as f32).collect()).unwrap();
            let g = model.input_gradient(&input, label).unwrap();
            // the reference sees exactly the f32 input the model saw
            let x32: Vec<f64> = input.data().iter().map(|&v| v as f64).collect();
            let fd = finite_difference(&model, &x32, label, 1e-3);
            for (i, (&a, &b)) in g.data().iter().zip(&fd).enumerate() {
                if b.abs() > 1e-4 {
                    let rel = (a as f64 - b).abs() / b.abs();
                    assert!(rel <= 1e-2, "{name} trial {trial} coord {i}: analytic {a} vs numeric {b}");
                }
            }
        }
    }
}

#[test]
fn forward_matches_hand_matmul() {
    let model = Model::new(vec![LayerSpec::linear(3, 3), LayerSpec::linear(3, 3)], vec![3], 42).unwrap();
    let x = [0.3f32, -0.7, 0.2];
    let w1 = model.layers()[0].weight.as_ref().unwrap().data();
    let w2 = model.layers()[1].weight.as_ref().unwrap().data();
    let b1 = model.layers()[0].bias.as_ref().unwrap().data();
    let b2 = model.layers()[1].bias.as_ref().unwrap().data();
    let mut hidden = [0f64; 3];
    for o in 0..3 {
        hidden[o] = b1[o] as f64 + (0..3).map(|i| w1[o * 3 + i] as f64 * x[i] as f64).sum::<f64>();
    }
    let out = model.forward(&Tensor::from_vec(x.to_vec())).unwrap();
    for o in 0..3 {
        let expect = b2[o] as f64 + (0..3).map(|i| w2[o * 3 + i] as f64 * hidden[i]).sum::<f64>();
        assert!((out.data()[o] as f64 - expect).abs() < 1e-5);
    }
}

#[test]
fn identity_linear_passes_input_through() {
    let layer = Layer {
        spec: LayerSpec::linear(2, 2),
        weight: Some(Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap()),
        bias: Some(Tensor::zeros(vec![2])),
    };
    let model = Model::from_layers(vec![layer], vec![2], Default::default()).unwrap();
    let out = model.forward(&Tensor::from_vec(vec![0.2, 0.8])).unwrap();
    assert_eq!(out.data(), &[0.2, 0.8]);
    assert_eq!(model.predict(&Tensor::from_vec(vec![0.2, 0.8])).unwrap(), 1);
    assert_eq!(model.predict(&Tensor::from_vec(vec![0.5, 0.5])).unwrap(), 0);
}

#[test]
fn batched_forward_matches_single_rows() {
    let model = Model::new(vec![LayerSpec::linear(4, 3)], vec![4], 1).unwrap();
    let rows = [[0.1f32, 0.2, 0.3, 0.4], [0.9, -0.1, 0.0, 0.5]];
    let batch = Tensor::new(vec![2, 4], rows.concat()).unwrap();
    let out = model.forward(&batch).unwrap();
    assert_eq!(out.shape(), &[2, 3]);
    for (r, row) in rows.iter().enumerate() {
        let single = model.forward(&Tensor::from_vec(row.to_vec())).unwrap();
        assert_eq!(&out.data()[r * 3..r * 3 + 3], single.data());
    }
}

#[test]
fn softmax_sums_to_one_and_argmax_ignores_shifts() {
    let mut rng = seed::rng(9);
    for _ in 0..200 {
        let logits: Vec<f32> = (0..7).map(|_| rng.gen_range(-30.0..30.0)).collect();
        let p = softmax(&logits);
        assert!((p.iter().map(|&v| v as f64).sum::<f64>() - 1.0).abs() <= 1e-6);
        let shifted: Vec<f32> = logits.iter().map(|v| v + 3.5).collect();
        assert_eq!(nn::argmax(&logits), nn::argmax(&shifted));
    }
}

#[test]
fn linear_gradient_has_closed_form() {
    let model = Model::new(vec![LayerSpec::Linear { in_features: 5, out_features: 3, bias: false }], vec![5], 3).unwrap();
    let w = model.layers()[0].weight.as_ref().unwrap().data().to_vec();
    let x = vec![0.5f32, -0.2, 0.1, 0.9, -0.4];
    let label = 2;
    let logits = reference_forward(&model, &x.iter().map(|&v| v as f64).collect::<Vec<_>>());
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = logits.iter().map(|v| (v - m).exp()).sum();
    let residual: Vec<f64> = logits.iter().enumerate().map(|(k, v)| (v - m).exp() / z - if k == label { 1.0 } else { 0.0 }).collect();
    let g = model.input_gradient(&Tensor::from_vec(x), label).unwrap();
    for i in 0..5 {
        let expect: f64 = (0..3).map(|o| w[o * 5 + i] as f64 * residual[o]).sum();
        assert!((g.data()[i] as f64 - expect).abs() < 1e-6);
    }
}

#[test]
fn constant_model_has_zero_gradient() {
    let layer = Layer {
        spec: LayerSpec::linear(3, 2),
        weight: Some(Tensor::zeros(vec![2, 3])),
        bias: Some(Tensor::from_vec(vec![0.4, -0.1])),
    };
    let model = Model::from_layers(vec![layer], vec![3], Default::default()).unwrap();
    let g = model.input_gradient(&Tensor::from_vec(vec![0.1, 0.2, 0.3]), 1).unwrap();
    assert!(g.data().iter().all(|&v| v == 0.0));
}

#[test]
fn bad_inputs_are_rejected() {
    let model = Model::new(vec![LayerSpec::linear(3, 2)], vec![3], 0).unwrap();
    let x = Tensor::from_vec(vec![0.0; 3]);
    assert!(matches!(model.input_gradient(&x, 2), Err(Error::Label { .. })));
    assert!(matches!(model.forward(&Tensor::from_vec(vec![0.0; 4])), Err(Error::Shape(_))));
    let mut broken = model.clone();
    broken.layers_mut()[0].weight.as_mut().unwrap().data_mut()[0] = f32::NAN;
    assert!(matches!(broken.forward(&x), Err(Error::Numeric(_))));
}

/// Two Gaussian clouds far apart in 2-D.
fn separable_blobs(n: usize, seed_value: u64) -> Dataset {
    let mut rng = seed::rng(seed_value);
    let mut images = Vec::new();
    let mut labels = Vec::new();
    for i in 0..n {
        let class = i % 2;
        let c = if class == 0 { -1.0 } else { 1.0 };
        images.push(Tensor::from_vec(vec![c + rng.gen_range(-0.4..0.4), c + rng.gen_range(-0.4..0.4)]));
        labels.push(class);
    }
    Dataset::new("blobs2d", images, labels, 2).unwrap()
}

fn cfg(lr: f32, epochs: usize) -> TrainConfig {
    TrainConfig { learning_rate: lr, epochs, batch_size: 8, seed: 17, weight_decay: 0.0 }
}

#[test]
fn separable_blobs_are_learned() {
    let ds = separable_blobs(200, 1);
    let model = Model::new(vec![LayerSpec::linear(2, 8), LayerSpec::Relu, LayerSpec::linear(8, 2)], vec![2], 4).unwrap();
    let (trained, acc) = nn::train(&model, &ds, &cfg(0.1, 20)).unwrap();
    assert!(acc >= 0.95, "accuracy {acc}");
    assert_eq!(trained.predict(&ds.images[0]).unwrap(), ds.labels[0]);
    assert_eq!(trained.metadata["train_accuracy"].parse::<f64>().unwrap(), acc);
}

#[test]
fn training_is_bit_deterministic() {
    let ds = separable_blobs(64, 2);
    let model = Model::new(vec![LayerSpec::linear(2, 4), LayerSpec::Relu, LayerSpec::linear(4, 2)], vec![2], 4).unwrap();
    let a = nn::train(&model, &ds, &cfg(0.05, 3)).unwrap().0;
    let b = nn::train(&model, &ds, &cfg(0.05, 3)).unwrap().0;
    assert_eq!(persist::save_model(&a).unwrap(), persist::save_model(&b).unwrap());
}

#[test]
fn zero_learning_rate_keeps_weights() {
    let ds = separable_blobs(32, 3);
    let model = Model::new(vec![LayerSpec::linear(2, 2)], vec![2], 8).unwrap();
    let config = TrainConfig { learning_rate: 0.0, ..cfg(0.0, 2) };
    let (trained, _) = nn::train(&model, &ds, &config).unwrap();
    assert!(model.weights().zip(trained.weights()).all(|(a, b)| a.to_bits() == b.to_bits()));
}

#[test]
fn divergence_reports_epoch() {
    let mut ds = separable_blobs(32, 4);
    // conflicting labels keep the loss from saturating
    for (i, l) in ds.labels.iter_mut().enumerate() {
        *l = (i / 2) % 2;
    }
    let model = Model::new(vec![LayerSpec::linear(2, 8), LayerSpec::Relu, LayerSpec::linear(8, 2)], vec![2], 8).unwrap();
    let err = nn::train(&model, &ds, &cfg(1e36, 3)).unwrap_err();
    assert!(matches!(err, Error::Divergence { .. } | Error::Numeric(_)), "{err:?}");
}

#[test]
fn class_count_mismatch_is_rejected() {
    let ds = separable_blobs(16, 5);
    let model = Model::new(vec![LayerSpec::linear(2, 3)], vec![2], 8).unwrap();
    assert!(nn::train(&model, &ds, &cfg(0.1, 1)).is_err());
}
