//! Finite-difference verification of every layer's analytic gradients.

use viptt::nn::{layer_grad_check, Conv2d, Dense, GlobalAvgPool, Layer, Lstm, MaxPool2, Relu};
use viptt::rng::Rng;
use viptt::tensor::Tensor;

fn main() {
    let mut rng = Rng::new(11);
    let checks: Vec<(&str, Box<dyn Layer>, Vec<usize>)> = vec![
        ("dense", Box::new(Dense::new("d", 5, 4, &mut rng)), vec![3, 5]),
        ("relu", Box::new(Relu::new()), vec![3, 7]),
        ("conv2d", Box::new(Conv2d::new("c", 2, 3, 3, &mut rng)), vec![2, 2, 6, 6]),
        ("maxpool2", Box::new(MaxPool2::new()), vec![2, 2, 6, 6]),
        ("gap", Box::new(GlobalAvgPool::new()), vec![2, 3, 4, 4]),
        ("lstm", Box::new(Lstm::new("l", 4, 6, &mut rng)), vec![2, 5, 4]),
    ];
    for (name, mut layer, dims) in checks {
        let mut input = Tensor::zeros(&dims);
        for v in input.data_mut() {
            *v = rng.uniform(0.1, 1.0);
        }
        let err = layer_grad_check(layer.as_mut(), &input, 1e-6, 99);
        println!("{name:>8}: max rel err {err:.3e}");
        assert!(err < 1e-4);
    }
    println!("all layers pass at 1e-4");
}
