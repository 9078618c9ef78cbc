use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use sipsim_core::grid::{LayerChannel, C64};
use sipsim_neural::gradcheck::{check_iteration_gradients, relative_error, GradCheckSetup};
use sipsim_neural::layers::{relu, relu_backward, BatchNorm, Conv2d};
use sipsim_neural::loss::mse;
use sipsim_neural::{NetSpec, Planes, ResNet};

const EPS: f64 = 1e-4;
const TOL: f64 = 1e-4;
/// Absolute scale below which differences are roundoff: the weighted-sum
/// losses here reach `O(10)`, so central differences carry errors near `1e-10`.
const FLOOR: f64 = 1e-5;

fn random_planes(shape: [usize; 4], rng: &mut ChaCha8Rng) -> Planes<f64> {
    let n = Normal::new(0.0, 1.0).unwrap();
    Planes::from_vec(shape, (0..shape.iter().product()).map(|_| n.sample(rng)).collect()).unwrap()
}

/// `loss = Σ w ⊙ out` for a fixed random `w`; its output gradient is `w`.
fn weighted(out: &Planes<f64>, w: &Planes<f64>) -> f64 {
    out.as_slice().iter().zip(w.as_slice()).map(|(a, b)| a * b).sum()
}

/// Central differences of `f` with respect to every entry of `x`.
fn numeric_grad(x: &mut [f64], mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    (0..x.len())
        .map(|i| {
            let orig = x[i];
            x[i] = orig + EPS;
            let up = f(x);
            x[i] = orig - EPS;
            let down = f(x);
            x[i] = orig;
            (up - down) / (2.0 * EPS)
        })
        .collect()
}

fn assert_close(analytic: &[f64], numeric: &[f64], what: &str) {
    assert_eq!(analytic.len(), numeric.len());
    let worst = analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| relative_error(a, n, FLOOR))
        .fold(0.0, f64::max);
    assert!(worst < TOL, "{what}: max relative error {worst}");
    assert!(analytic.iter().any(|v| v.abs() > 1e-3), "{what}: gradient is vacuous");
}

#[test]
fn conv_gradients_match_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let conv = Conv2d::<f64>::he(3, 2, &mut rng);
    let x = random_planes([2, 4, 5, 3], &mut rng);
    let w = random_planes([2, 4, 5, 2], &mut rng);
    let (_, cache) = conv.forward(&x).unwrap();
    let mut g = vec![vec![0.0; conv.weight.len()], vec![0.0; conv.bias.len()]];
    let dx = conv.backward(&cache, &w, &mut g, true).unwrap().unwrap();

    let mut xv = x.as_slice().to_vec();
    let num = numeric_grad(&mut xv, |v| weighted(&conv.forward(&Planes::from_vec(x.shape(), v.to_vec()).unwrap()).unwrap().0, &w));
    assert_close(dx.as_slice(), &num, "conv input");

    let mut wv = conv.weight.clone();
    let num = numeric_grad(&mut wv, |v| {
        let c = Conv2d { weight: v.to_vec(), ..conv.clone() };
        weighted(&c.forward(&x).unwrap().0, &w)
    });
    assert_close(&g[0], &num, "conv weight");

    let mut bv = conv.bias.clone();
    let num = numeric_grad(&mut bv, |v| {
        let c = Conv2d { bias: v.to_vec(), ..conv.clone() };
        weighted(&c.forward(&x).unwrap().0, &w)
    });
    assert_close(&g[1], &num, "conv bias");
}

#[test]
fn train_mode_batch_norm_gradients_match_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut bn = BatchNorm::<f64>::new(3);
    bn.gamma = vec![0.7, -1.2, 2.0];
    bn.beta = vec![0.1, 0.0, -0.4];
    let x = random_planes([2, 3, 3, 3], &mut rng);
    let w = random_planes([2, 3, 3, 3], &mut rng);
    let (_, cache) = bn.forward(&x, true).unwrap();
    let mut g = vec![vec![0.0; 3], vec![0.0; 3]];
    let dx = bn.backward(&cache, &w, &mut g).unwrap();

    let mut xv = x.as_slice().to_vec();
    let num = numeric_grad(&mut xv, |v| weighted(&bn.forward(&Planes::from_vec(x.shape(), v.to_vec()).unwrap(), true).unwrap().0, &w));
    assert_close(dx.as_slice(), &num, "bn input");

    let mut gv = bn.gamma.clone();
    let num = numeric_grad(&mut gv, |v| {
        let b = BatchNorm { gamma: v.to_vec(), ..bn.clone() };
        weighted(&b.forward(&x, true).unwrap().0, &w)
    });
    assert_close(&g[0], &num, "bn gamma");

    let mut bv = bn.beta.clone();
    let num = numeric_grad(&mut bv, |v| {
        let b = BatchNorm { beta: v.to_vec(), ..bn.clone() };
        weighted(&b.forward(&x, true).unwrap().0, &w)
    });
    assert_close(&g[1], &num, "bn beta");
}

#[test]
fn eval_mode_batch_norm_is_affine() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut bn = BatchNorm::<f64>::new(2);
    bn.running_mean = vec![0.5, -1.0];
    bn.running_var = vec![4.0, 0.25];
    bn.gamma = vec![2.0, 1.0];
    bn.beta = vec![0.0, 3.0];
    let x = random_planes([1, 2, 2, 2], &mut rng);
    let (y, cache) = bn.forward(&x, false).unwrap();
    for (px, py) in x.as_slice().chunks(2).zip(y.as_slice().chunks(2)) {
        for c in 0..2 {
            let want = bn.gamma[c] * (px[c] - bn.running_mean[c]) / (bn.running_var[c] + 1e-5).sqrt() + bn.beta[c];
            assert!((py[c] - want).abs() < 1e-12);
        }
    }
    let w = random_planes([1, 2, 2, 2], &mut rng);
    let mut g = vec![vec![0.0; 2], vec![0.0; 2]];
    let dx = bn.backward(&cache, &w, &mut g).unwrap();
    for (d, wv) in dx.as_slice().chunks(2).zip(w.as_slice().chunks(2)) {
        for c in 0..2 {
            assert!((d[c] - wv[c] * bn.gamma[c] / (bn.running_var[c] + 1e-5).sqrt()).abs() < 1e-12);
        }
    }
}

#[test]
fn relu_gradient_matches_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let x = random_planes([1, 3, 3, 2], &mut rng);
    let w = random_planes([1, 3, 3, 2], &mut rng);
    let dx = relu_backward(&x, &w);
    let mut xv = x.as_slice().to_vec();
    let num = numeric_grad(&mut xv, |v| weighted(&relu(&Planes::from_vec(x.shape(), v.to_vec()).unwrap()), &w));
    assert_close(dx.as_slice(), &num, "relu");
}

fn spec(blocks: usize) -> NetSpec {
    NetSpec {
        in_channels: 3,
        width: 4,
        blocks,
        out_channels: 2,
    }
}

fn perturbed_net(blocks: usize, rng: &mut ChaCha8Rng) -> ResNet<f64> {
    let mut net = ResNet::<f64>::new(spec(blocks), rng);
    let n = Normal::new(0.0, 0.3).unwrap();
    for p in net.params_mut() {
        p.iter_mut().for_each(|v| *v += n.sample(rng));
    }
    net
}

#[test]
fn residual_network_gradients_match_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let mut net = perturbed_net(2, &mut rng);
    let x = random_planes([2, 4, 4, 3], &mut rng);
    let w = random_planes([2, 4, 4, 2], &mut rng);
    let (_, cache) = net.forward(&x, true).unwrap();
    let mut grads = net.zero_grads();
    let dx = net.backward(&cache, &w, &mut grads, true).unwrap().unwrap();

    let mut xv = x.as_slice().to_vec();
    let num = numeric_grad(&mut xv, |v| weighted(&net.forward(&Planes::from_vec(x.shape(), v.to_vec()).unwrap(), true).unwrap().0, &w));
    assert_close(dx.as_slice(), &num, "resnet input");

    let tensors = grads.0.len();
    let mut all_a = Vec::new();
    let mut all_n = Vec::new();
    for ti in 0..tensors {
        for i in 0..grads.0[ti].len() {
            let orig = net.params_mut()[ti][i];
            net.params_mut()[ti][i] = orig + EPS;
            let up = weighted(&net.forward(&x, true).unwrap().0, &w);
            net.params_mut()[ti][i] = orig - EPS;
            let down = weighted(&net.forward(&x, true).unwrap().0, &w);
            net.params_mut()[ti][i] = orig;
            all_a.push(grads.0[ti][i]);
            all_n.push((up - down) / (2.0 * EPS));
        }
    }
    assert_close(&all_a, &all_n, "resnet parameters");
}

#[test]
fn zero_input_leaves_input_conv_weights_without_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let net = perturbed_net(1, &mut rng);
    let x = Planes::<f64>::zeros(2, 3, 3, 3);
    let w = random_planes([2, 3, 3, 2], &mut rng);
    let (_, cache) = net.forward(&x, true).unwrap();
    let mut grads = net.zero_grads();
    net.backward(&cache, &w, &mut grads, false).unwrap();
    assert!(grads.0[0].iter().all(|&g| g == 0.0));
    assert!(grads.0.iter().skip(1).flatten().any(|&g| g != 0.0));
}

#[test]
fn gradients_scale_linearly_with_the_loss() {
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let net = perturbed_net(1, &mut rng);
    let x = random_planes([2, 3, 3, 3], &mut rng);
    let w = random_planes([2, 3, 3, 2], &mut rng);
    let mut w2 = w.clone();
    w2.as_mut_slice().iter_mut().for_each(|v| *v *= 2.0);
    let (_, cache) = net.forward(&x, true).unwrap();
    let mut g1 = net.zero_grads();
    let mut g2 = net.zero_grads();
    net.backward(&cache, &w, &mut g1, false).unwrap();
    net.backward(&cache, &w2, &mut g2, false).unwrap();
    for (a, b) in g1.0.iter().flatten().zip(g2.0.iter().flatten()) {
        assert_eq!(2.0 * a, *b);
    }
}

#[test]
fn mse_gradient_matches_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let n = Normal::new(0.0, 1.0).unwrap();
    let mut c = || C64::new(n.sample(&mut rng), n.sample(&mut rng));
    let h = LayerChannel::from_vec(2, 2, 2, (0..8).map(|_| c()).collect()).unwrap();
    let est = LayerChannel::from_vec(2, 2, 2, (0..8).map(|_| c()).collect()).unwrap();
    let (_, g) = mse(std::slice::from_ref(&est), std::slice::from_ref(&h)).unwrap();
    let mut flat: Vec<f64> = est.as_slice().iter().flat_map(|z| [z.re, z.im]).collect();
    let num = numeric_grad(&mut flat, |v| {
        let e = LayerChannel::from_vec(2, 2, 2, v.chunks(2).map(|p| C64::new(p[0], p[1])).collect()).unwrap();
        mse(&[e], std::slice::from_ref(&h)).unwrap().0
    });
    let ana: Vec<f64> = g[0].iter().flat_map(|z| [z.re, z.im]).collect();
    assert_close(&ana, &num, "mse");
}

#[test]
fn composed_iteration_gradients_match_central_differences() {
    for alpha in [0.2, 0.05] {
        let setup = GradCheckSetup {
            alpha,
            ..GradCheckSetup::default()
        };
        let r = check_iteration_gradients(&setup).unwrap();
        assert!(r.max_abs_grad > 1e-3, "{r:?}");
        assert!(r.max_rel_error < TOL, "alpha {alpha}: {r:?}");
    }
}
