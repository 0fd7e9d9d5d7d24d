use rand::Rng;

use super::*;
use crate::seed;

fn all_layers_net() -> Network {
    let mut b = NetBuilder::new(Shape::new(2, 9, 8));
    b.scale(0.5, -0.1)
        .conv(4, (3, 3), (1, 1), (1, 1), true)
        .batch_norm(1e-3, true)
        .relu()
        .branches(&[
            &|b: &mut NetBuilder| {
                b.conv(3, (1, 1), (1, 1), (0, 0), false);
            },
            &|b: &mut NetBuilder| {
                b.conv(2, (1, 3), (1, 1), (0, 1), true).branches(&[
                    &|b: &mut NetBuilder| {
                        b.conv(2, (3, 1), (1, 1), (1, 0), false);
                    },
                    &|b: &mut NetBuilder| {
                        b.avg_pool(3, 1, 1);
                    },
                ]);
            },
        ])
        .conv(5, (3, 3), (2, 2), (0, 0), true)
        .max_pool(2, 1, 0)
        .branches(&[
            &|b: &mut NetBuilder| {
                b.global_avg_pool();
            },
            &|b: &mut NetBuilder| {
                b.global_max_pool();
            },
        ])
        .dense(3)
        .relu()
        .dense(1);
    b.build()
}

fn random_weights(net: &Network, s: u64) -> Weights {
    let mut rng = seed::rng(s, &[]);
    let mut w = net.init_weights(&mut rng);
    // Perturb BN statistics and affine terms away from the identity.
    for v in w.buffers.iter_mut() {
        *v += rng.random_range(0.1..0.5);
    }
    for v in w.params.iter_mut() {
        *v += rng.random_range(-0.05..0.05);
    }
    w
}

fn random_input(shape: Shape, s: u64) -> Tensor {
    let mut rng = seed::rng(s, &[99]);
    Tensor::from_vec(shape, (0..shape.len()).map(|_| rng.random_range(-1.0..1.0)).collect())
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(b.iter().map(|x| x * x).sum::<f64>().sqrt());
    diff / scale.max(1e-12)
}

#[test]
fn shapes_propagate() {
    let net = all_layers_net();
    assert_eq!(net.output, Shape::new(1, 1, 1));
    let w = random_weights(&net, 1);
    let y = net.forward(&w, random_input(net.input, 1));
    assert_eq!(y.data.len(), 1);
}

#[test]
fn parameter_and_input_gradients_match_finite_differences() {
    let net = all_layers_net();
    for trial in 0..3u64 {
        let w = random_weights(&net, trial);
        let x = random_input(net.input, trial);
        let mut grads = vec![0.0; net.n_params];
        let (_, gx) = net.forward_backward(&w, x.clone(), &mut grads, true, |out| Tensor::from_vec(out.shape, vec![1.0]));
        let gx = gx.unwrap();

        let h = 1e-6;
        let f = |w: &Weights, x: &Tensor| net.forward(w, x.clone()).data[0];
        let fd_params: Vec<f64> = (0..net.n_params)
            .map(|i| {
                let mut wp = w.clone();
                wp.params[i] += h;
                let mut wm = w.clone();
                wm.params[i] -= h;
                (f(&wp, &x) - f(&wm, &x)) / (2.0 * h)
            })
            .collect();
        let fd_input: Vec<f64> = (0..x.data.len())
            .map(|i| {
                let mut xp = x.clone();
                xp.data[i] += h;
                let mut xm = x.clone();
                xm.data[i] -= h;
                (f(&w, &xp) - f(&w, &xm)) / (2.0 * h)
            })
            .collect();
        assert!(rel_err(&grads, &fd_params) < 1e-5, "params: {}", rel_err(&grads, &fd_params));
        assert!(rel_err(&gx.data, &fd_input) < 1e-5, "input: {}", rel_err(&gx.data, &fd_input));
    }
}

#[test]
fn gradients_accumulate() {
    let net = all_layers_net();
    let w = random_weights(&net, 5);
    let x = random_input(net.input, 5);
    let seed_grad = |out: &Tensor| Tensor::from_vec(out.shape, vec![1.0]);
    let mut once = vec![0.0; net.n_params];
    net.forward_backward(&w, x.clone(), &mut once, false, seed_grad);
    let mut twice = vec![0.0; net.n_params];
    net.forward_backward(&w, x.clone(), &mut twice, false, seed_grad);
    net.forward_backward(&w, x, &mut twice, false, seed_grad);
    for (a, b) in once.iter().zip(&twice) {
        assert!((2.0 * a - b).abs() <= 1e-12 * b.abs().max(1.0));
    }
}

#[test]
fn pointwise_conv_equals_channel_mixing() {
    let mut b = NetBuilder::new(Shape::new(3, 2, 2));
    b.conv(2, (1, 1), (1, 1), (0, 0), true);
    let net = b.build();
    let w = Weights {
        params: vec![1.0, 2.0, 3.0, -1.0, 0.0, 1.0, 0.5, -0.5],
        buffers: vec![],
    };
    let x = Tensor::from_vec(Shape::new(3, 2, 2), (0..12).map(f64::from).collect());
    let y = net.forward(&w, x.clone());
    for p in 0..4 {
        let xs: Vec<f64> = (0..3).map(|c| x.data[c * 4 + p]).collect();
        assert_eq!(y.data[p], xs[0] + 2.0 * xs[1] + 3.0 * xs[2] + 0.5);
        assert_eq!(y.data[4 + p], -xs[0] + xs[2] - 0.5);
    }
}

#[test]
fn avg_pool_excludes_padding() {
    let p = Pool::new(PoolKind::Avg, Shape::new(1, 2, 2), 3, 1, 1);
    let x = Tensor::from_vec(Shape::new(1, 2, 2), vec![1.0, 2.0, 3.0, 4.0]);
    let (y, _) = p.forward(&x, false);
    assert!(y.data.iter().all(|&v| (v - 2.5).abs() < 1e-12));
}

#[test]
fn param_boundary_tracks_layers() {
    let net = all_layers_net();
    assert_eq!(net.param_boundary(0), 0);
    assert_eq!(net.param_boundary(1), 0);
    let Layer::Conv(c) = &net.layers[1] else { panic!() };
    assert_eq!(net.param_boundary(2), c.weight_count() + 4);
    assert_eq!(net.param_boundary(net.layers.len()), net.n_params);
}
