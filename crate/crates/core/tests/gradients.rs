use gazezone::nnet::gradcheck::{grad_check_layer, grad_check_network, NetLoss};
use gazezone::nnet::layers::{BatchNorm2d, Conv2d, Dense};
use gazezone::nnet::{
    build_izenet, CapsuleSpec, GazeVector, IzeNetConfig, Layer, Mode, Network, Tensor,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TOLERANCE: f64 = 1e-4;

fn random_tensor(rng: &mut ChaCha8Rng, shape: Vec<usize>) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn tiny_config() -> IzeNetConfig {
    IzeNetConfig {
        widths: vec![4, 4, 4, 8, 8],
        capsules: CapsuleSpec { count: 4, dim: 4 },
        fc: vec![32, 16],
        ..IzeNetConfig::toy()
    }
}

/// Randomizes batch-norm affine parameters and running statistics so the
/// eval-mode normalization is not the identity.
fn perturb_batch_norm(net: &mut Network, rng: &mut ChaCha8Rng) {
    for layer in net.layers_mut() {
        if let Layer::BatchNorm2d(bn) = layer {
            for v in &mut bn.gamma.value {
                *v = rng.random_range(0.5..1.5);
            }
            for v in &mut bn.beta.value {
                *v = rng.random_range(-0.2..0.2);
            }
            for v in &mut bn.running_mean.value {
                *v = rng.random_range(-0.1..0.1);
            }
            for v in &mut bn.running_var.value {
                *v = rng.random_range(0.3..2.0);
            }
        }
    }
}

#[test]
fn dense_layer() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let layer = Layer::Dense(Dense::new(&mut rng, 7, 5));
    let x = random_tensor(&mut rng, vec![4, 7]);
    let r = grad_check_layer(&layer, &x, Mode::Train, 11).unwrap();
    assert!(r.max_rel_error <= 1e-6, "{r:?}");
}

#[test]
fn conv_layer() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let layer = Layer::Conv2d(Conv2d::new(&mut rng, 3, 4, 3));
    let x = random_tensor(&mut rng, vec![2, 3, 6, 5]);
    let r = grad_check_layer(&layer, &x, Mode::Train, 12).unwrap();
    assert!(r.max_rel_error <= TOLERANCE, "{r:?}");
}

#[test]
fn batch_norm_layer_both_modes() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut bn = BatchNorm2d::new(3, 0.99);
    bn.gamma.value = vec![0.7, 1.3, -0.4];
    bn.beta.value = vec![0.1, -0.2, 0.3];
    bn.running_mean.value = vec![0.05, -0.1, 0.2];
    bn.running_var.value = vec![0.8, 1.5, 0.4];
    let layer = Layer::BatchNorm2d(bn);
    let x = random_tensor(&mut rng, vec![4, 3, 3, 3]);
    for mode in [Mode::Train, Mode::Eval] {
        let r = grad_check_layer(&layer, &x, mode, 13).unwrap();
        assert!(r.max_rel_error <= TOLERANCE, "{mode:?} {r:?}");
    }
}

#[test]
fn activation_and_shape_layers() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x4 = random_tensor(&mut rng, vec![2, 4, 4, 6]);
    let x2 = random_tensor(&mut rng, vec![3, 6]);
    let cases = [
        (Layer::Relu, &x4),
        (Layer::MaxPool2d, &x4),
        (Layer::Flatten, &x4),
        (Layer::Softmax, &x2),
    ];
    for (layer, x) in cases {
        let r = grad_check_layer(&layer, x, Mode::Train, 14).unwrap();
        assert!(r.max_rel_error <= TOLERANCE, "{} {r:?}", layer.kind());
    }
}

#[test]
fn squash_layer() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let layer = Layer::Squash { capsule_dim: 4 };
    let x = random_tensor(&mut rng, vec![2, 8, 2, 2]);
    let r = grad_check_layer(&layer, &x, Mode::Train, 15).unwrap();
    assert!(r.max_rel_error <= 1e-6, "{r:?}");
}

#[test]
fn composed_network_cross_entropy() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut net = build_izenet(&tiny_config().with_seed(6)).unwrap();
    assert!(net.param_count() <= 100_000);
    perturb_batch_norm(&mut net, &mut rng);
    let x = random_tensor(&mut rng, net.input_shape(3));
    let r = grad_check_network(&net, &x, &NetLoss::CrossEntropy(vec![0, 2, 1]), 16).unwrap();
    assert!(r.max_rel_error <= TOLERANCE, "{r:?}");
    assert!(r.checked > 50);
}

#[test]
fn composed_network_gaze_head() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut net = build_izenet(&tiny_config().with_seed(7)).unwrap();
    perturb_batch_norm(&mut net, &mut rng);
    net.replace_head(gazezone::nnet::adapt::task_head(
        16,
        gazezone::nnet::Task::Gaze3d,
        8,
        3,
    ));
    let x = random_tensor(&mut rng, net.input_shape(2));
    let truth = vec![
        GazeVector::new(0.2, -0.1, 0.97),
        GazeVector::new(-0.4, 0.2, 0.89),
    ];
    let r = grad_check_network(&net, &x, &NetLoss::Gaze(truth), 17).unwrap();
    assert!(r.max_rel_error <= TOLERANCE, "{r:?}");
}

#[test]
fn linear_head_with_cross_entropy() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut net = build_izenet(&tiny_config().with_seed(8)).unwrap();
    net.set_backbone_frozen(true);
    let x = random_tensor(&mut rng, net.input_shape(4));
    let r = grad_check_network(&net, &x, &NetLoss::CrossEntropy(vec![0, 1, 2, 1]), 18).unwrap();
    assert!(r.max_rel_error <= 1e-6, "{r:?}");
}
