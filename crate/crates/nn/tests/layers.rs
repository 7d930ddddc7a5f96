use rand_core::{RngCore, SeedableRng};
use rand_xoshiro::Xoshiro256StarStar;
use ussi_nn::gradcheck::{numeric_gradient, relative_error};
use ussi_nn::layers::{resize_taps, same_padding, BatchNorm2d, Conv2d, LinearResize, MaxPool2x2, Relu, Upsample2x};
use ussi_nn::Tensor;

const LAYER_TOL: f64 = 1e-6;
const H: f64 = 1e-5;

fn rng(seed: u64) -> Xoshiro256StarStar {
    Xoshiro256StarStar::seed_from_u64(seed)
}

fn uniform(r: &mut Xoshiro256StarStar) -> f64 {
    (r.next_u64() >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
}

fn random_tensor(shape: [usize; 4], seed: u64) -> Tensor<f64> {
    let mut r = rng(seed);
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| uniform(&mut r)).collect()).unwrap()
}

fn dot(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

fn all_indices(n: usize) -> Vec<usize> {
    (0..n).collect()
}

/// Checks input and parameter gradients of the scalar `sum(y * r)`.
fn check_conv(cin: usize, cout: usize, k: usize, stride: (usize, usize), shape: (usize, usize), bias: bool) {
    let mut r = rng(7);
    let mut conv = Conv2d::<f64>::new("c", cin, cout, k, stride, bias, || uniform(&mut r)).unwrap();
    if let Some(b) = &mut conv.bias {
        b.value.iter_mut().enumerate().for_each(|(i, v)| *v = 0.1 * i as f64);
    }
    let x = random_tensor([2, cin, shape.0, shape.1], 11);
    let y = conv.forward(&x).unwrap();
    let probe = random_tensor(y.shape(), 13);
    let dx = conv.backward(&probe).unwrap();

    let mut xv = x.data().to_vec();
    let num = numeric_gradient(&mut xv, &all_indices(x.len()), H, |v| {
        let xt = Tensor::from_vec(x.shape(), v.to_vec()).unwrap();
        dot(&conv.clone().forward(&xt).unwrap(), &probe)
    });
    let err = relative_error(dx.data(), &num);
    assert!(err < LAYER_TOL, "conv input gradient error {err:e}");

    let mut w = conv.weight.value.clone();
    let num = numeric_gradient(&mut w, &all_indices(conv.weight.len()), H, |v| {
        let mut c = conv.clone();
        c.weight.value = v.to_vec();
        dot(&c.forward(&x).unwrap(), &probe)
    });
    let err = relative_error(&conv.weight.grad, &num);
    assert!(err < LAYER_TOL, "conv weight gradient error {err:e}");

    if let Some(b) = conv.bias.clone() {
        let mut bv = b.value.clone();
        let num = numeric_gradient(&mut bv, &all_indices(b.len()), H, |v| {
            let mut c = conv.clone();
            c.bias.as_mut().unwrap().value = v.to_vec();
            dot(&c.forward(&x).unwrap(), &probe)
        });
        assert!(relative_error(&b.grad, &num) < LAYER_TOL);
    }
}

#[test]
fn conv3x3_gradients_match_finite_differences() {
    check_conv(2, 3, 3, (1, 1), (5, 6), false);
}

#[test]
fn strided_conv_gradients_match_finite_differences() {
    check_conv(2, 3, 3, (1, 2), (6, 9), false);
    check_conv(1, 2, 3, (2, 2), (7, 5), true);
}

#[test]
fn conv1x1_gradients_match_finite_differences() {
    check_conv(3, 2, 1, (1, 1), (4, 5), true);
}

#[test]
fn conv1x1_identity_passes_input_through() {
    let mut conv = Conv2d::<f64>::new("id", 1, 1, 1, (1, 1), true, || 1.0).unwrap();
    let x = random_tensor([1, 1, 4, 7], 3);
    assert_eq!(conv.forward(&x).unwrap(), x);
}

#[test]
fn all_ones_kernel_on_constant_image() {
    let mut conv = Conv2d::<f64>::new("ones", 1, 1, 3, (1, 1), false, || 1.0).unwrap();
    let x = Tensor::from_vec([1, 1, 5, 5], vec![1.0; 25]).unwrap();
    let y = conv.forward(&x).unwrap();
    let at = |r: usize, c: usize| y.data()[r * 5 + c];
    assert_eq!(y.shape(), [1, 1, 5, 5]);
    for (r, c) in [(0, 0), (0, 4), (4, 0), (4, 4)] {
        assert_eq!(at(r, c), 4.0);
    }
    for r in 1..4 {
        for c in 1..4 {
            assert_eq!(at(r, c), 9.0);
        }
    }
    assert_eq!(at(0, 2), 6.0);
}

#[test]
fn same_padding_output_is_ceil_of_input_over_stride() {
    for n in 1..40 {
        for s in 1..=2 {
            for k in [1, 3] {
                let (out, pad) = same_padding(n, k, s);
                assert_eq!(out, n.div_ceil(s));
                assert!(pad <= k / 2);
            }
        }
    }
}

#[test]
fn conv_rejects_bad_stride_and_channel_mismatch() {
    assert!(Conv2d::<f32>::new("c", 1, 1, 3, (3, 1), false, || 0.0).is_err());
    let mut conv = Conv2d::<f32>::new("c", 2, 1, 3, (1, 1), false, || 0.0).unwrap();
    assert!(conv.forward(&Tensor::zeros([1, 3, 4, 4])).is_err());
}

fn check_batchnorm(train: bool, batch: usize) {
    let mut bn = BatchNorm2d::<f64>::new("bn", 3);
    bn.gamma.value = vec![0.5, 1.5, -1.0];
    bn.beta.value = vec![0.1, -0.2, 0.3];
    bn.running_mean = vec![0.2, -0.1, 0.05];
    bn.running_var = vec![0.8, 1.3, 0.6];
    let x = random_tensor([batch, 3, 3, 4], 21);
    let fresh = bn.clone();
    let y = bn.forward(&x, train).unwrap();
    let probe = random_tensor(y.shape(), 23);
    let dx = bn.backward(&probe).unwrap();
    let eval = |b: &BatchNorm2d<f64>, xt: &Tensor<f64>| dot(&b.clone().forward(xt, train).unwrap(), &probe);

    let mut xv = x.data().to_vec();
    let num = numeric_gradient(&mut xv, &all_indices(x.len()), H, |v| {
        eval(&fresh, &Tensor::from_vec(x.shape(), v.to_vec()).unwrap())
    });
    let err = relative_error(dx.data(), &num);
    assert!(err < LAYER_TOL, "bn input gradient error {err:e} (train={train})");

    let mut g = fresh.gamma.value.clone();
    let num = numeric_gradient(&mut g, &[0, 1, 2], H, |v| {
        let mut b = fresh.clone();
        b.gamma.value = v.to_vec();
        eval(&b, &x)
    });
    assert!(relative_error(&bn.gamma.grad, &num) < LAYER_TOL);
    let mut bt = fresh.beta.value.clone();
    let num = numeric_gradient(&mut bt, &[0, 1, 2], H, |v| {
        let mut b = fresh.clone();
        b.beta.value = v.to_vec();
        eval(&b, &x)
    });
    assert!(relative_error(&bn.beta.grad, &num) < LAYER_TOL);
}

#[test]
fn batchnorm_train_gradients_match_finite_differences() {
    check_batchnorm(true, 3);
}

#[test]
fn batchnorm_eval_gradients_match_finite_differences() {
    check_batchnorm(false, 2);
}

#[test]
fn batchnorm_single_item_batch_uses_running_stats() {
    let mut bn = BatchNorm2d::<f64>::new("bn", 1);
    bn.running_mean = vec![1.0];
    bn.running_var = vec![4.0];
    let x = Tensor::from_vec([1, 1, 1, 2], vec![1.0, 3.0]).unwrap();
    let y = bn.forward(&x, true).unwrap();
    let s = 1.0 / (4.0f64 + 1e-5).sqrt();
    assert!((y.data()[1] - 2.0 * s).abs() < 1e-12);
    assert_eq!(bn.running_mean, vec![1.0]);
}

#[test]
fn batchnorm_standardized_input_passes_through() {
    let mut bn = BatchNorm2d::<f64>::new("bn", 1);
    let x = Tensor::from_vec([2, 1, 1, 2], vec![-1.0, 1.0, 1.0, -1.0]).unwrap();
    let y = bn.forward(&x, true).unwrap();
    for (a, b) in y.data().iter().zip(x.data()) {
        assert!((a - b).abs() < 1e-5);
    }
}

#[test]
fn batchnorm_zero_gamma_gives_beta() {
    let mut bn = BatchNorm2d::<f64>::new("bn", 2);
    bn.gamma.value = vec![0.0, 0.0];
    bn.beta.value = vec![0.7, -2.0];
    let x = random_tensor([3, 2, 4, 4], 5);
    for train in [true, false] {
        let y = bn.forward(&x, train).unwrap();
        for (k, v) in y.data().iter().enumerate() {
            let ch = (k / 16) % 2;
            assert_eq!(*v, bn.beta.value[ch]);
        }
    }
}

#[test]
fn batchnorm_constant_channel_is_finite() {
    let mut bn = BatchNorm2d::<f32>::new("bn", 1);
    let x = Tensor::from_vec([2, 1, 2, 2], vec![3.0; 8]).unwrap();
    let y = bn.forward(&x, true).unwrap();
    assert!(y.all_finite());
    assert!(y.data().iter().all(|v| *v == 0.0));
}

#[test]
fn batchnorm_running_stats_update() {
    let mut bn = BatchNorm2d::<f64>::new("bn", 1);
    let x = Tensor::from_vec([2, 1, 1, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
    bn.forward(&x, true).unwrap();
    // batch mean 2.5, biased var 1.25, unbiased 5/3
    assert!((bn.running_mean[0] - 0.25).abs() < 1e-12);
    assert!((bn.running_var[0] - (0.9 + 0.1 * 5.0 / 3.0)).abs() < 1e-12);
}

#[test]
fn relu_values_and_gradient() {
    let mut relu = Relu::default();
    let x = Tensor::from_vec([1, 1, 1, 4], vec![-3.0, 2.0, 0.0, 0.5]).unwrap();
    let y = relu.forward(&x);
    assert_eq!(y.data(), &[0.0, 2.0, 0.0, 0.5]);
    let dx = relu.backward(&Tensor::from_vec([1, 1, 1, 4], vec![1.0; 4]).unwrap()).unwrap();
    assert_eq!(dx.data(), &[0.0, 1.0, 0.0, 1.0]);
}

#[test]
fn relu_gradient_matches_finite_differences() {
    let mut relu = Relu::default();
    // keep values away from the kink
    let mut x = random_tensor([2, 2, 3, 3], 31);
    x.data_mut().iter_mut().for_each(|v| *v += v.signum() * 0.1);
    relu.forward(&x);
    let probe = random_tensor(x.shape(), 33);
    let dx = relu.backward(&probe).unwrap();
    let mut xv = x.data().to_vec();
    let num = numeric_gradient(&mut xv, &all_indices(x.len()), H, |v| {
        dot(&Relu::default().forward(&Tensor::from_vec(x.shape(), v.to_vec()).unwrap()), &probe)
    });
    assert!(relative_error(dx.data(), &num) < LAYER_TOL);
}

#[test]
fn maxpool_routes_gradient_to_argmax() {
    let mut pool = MaxPool2x2::default();
    let x = Tensor::from_vec([1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
    assert_eq!(pool.forward(&x).data(), &[4.0]);
    let dx = pool.backward(&Tensor::from_vec([1, 1, 1, 1], vec![1.0]).unwrap()).unwrap();
    assert_eq!(dx.data(), &[0.0, 0.0, 0.0, 1.0]);
}

#[test]
fn maxpool_ties_go_to_first_in_row_major_order() {
    let mut pool = MaxPool2x2::default();
    let x = Tensor::from_vec([1, 1, 2, 2], vec![0.0, 5.0, 5.0, 5.0]).unwrap();
    pool.forward(&x);
    let dx = pool.backward(&Tensor::from_vec([1, 1, 1, 1], vec![2.0]).unwrap()).unwrap();
    assert_eq!(dx.data(), &[0.0, 2.0, 0.0, 0.0]);
}

#[test]
fn maxpool_odd_dims_use_clipped_windows() {
    let mut pool = MaxPool2x2::default();
    let x = Tensor::from_vec([1, 1, 3, 3], (1..=9).map(f64::from).collect()).unwrap();
    let y = pool.forward(&x);
    assert_eq!(y.shape(), [1, 1, 2, 2]);
    assert_eq!(y.data(), &[5.0, 6.0, 8.0, 9.0]);
}

#[test]
fn maxpool_gradient_matches_finite_differences() {
    let x = random_tensor([2, 2, 5, 4], 41);
    let mut pool = MaxPool2x2::default();
    let y = pool.forward(&x);
    let probe = random_tensor(y.shape(), 43);
    let dx = pool.backward(&probe).unwrap();
    let mut xv = x.data().to_vec();
    let num = numeric_gradient(&mut xv, &all_indices(x.len()), H, |v| {
        dot(&MaxPool2x2::default().forward(&Tensor::from_vec(x.shape(), v.to_vec()).unwrap()), &probe)
    });
    assert!(relative_error(dx.data(), &num) < LAYER_TOL);
}

#[test]
fn upsample_is_nearest_neighbour_and_backward_sums() {
    let up = Upsample2x;
    let x = Tensor::from_vec([1, 1, 1, 2], vec![1.0, 2.0]).unwrap();
    let y = up.forward(&x);
    assert_eq!(y.data(), &[1.0, 1.0, 2.0, 2.0, 1.0, 1.0, 2.0, 2.0]);
    let probe = random_tensor(y.shape(), 51);
    let dx = up.backward(&probe).unwrap();
    let mut xv = x.data().to_vec();
    let num = numeric_gradient(&mut xv, &[0, 1], H, |v| {
        dot(&up.forward(&Tensor::from_vec(x.shape(), v.to_vec()).unwrap()), &probe)
    });
    assert!(relative_error(dx.data(), &num) < LAYER_TOL);
}

#[test]
fn resize_taps_partition_unity_152_to_256() {
    let taps = resize_taps(152, 256).unwrap();
    assert_eq!(taps.len(), 256);
    for t in &taps {
        assert!((t.w0.abs() + t.w1.abs() - 1.0).abs() < 1e-12);
        assert!(t.w0 >= 0.0 && t.w1 >= 0.0);
    }
    assert_eq!((taps[0].i0, taps[0].w0), (0, 1.0));
    assert!(taps[255].i0 == 151 || (taps[255].i1 == 151 && taps[255].w1 == 1.0));
}

#[test]
fn resize_rejects_empty_target() {
    assert!(LinearResize::new(0, 4).is_err());
    assert!(resize_taps(4, 0).is_err());
}

#[test]
fn resize_reproduces_linear_ramps() {
    let mut rs = LinearResize::new(7, 5).unwrap();
    let (h, w) = (4, 3);
    let x = Tensor::from_vec([1, 1, h, w], (0..h * w).map(|k| (2 * (k / w) + 3 * (k % w)) as f64).collect()).unwrap();
    let y = rs.forward(&x).unwrap();
    for j in 0..7 {
        for k in 0..5 {
            let want = 2.0 * j as f64 * 3.0 / 6.0 + 3.0 * k as f64 * 2.0 / 4.0;
            assert!((y.data()[j * 5 + k] - want).abs() < 1e-12);
        }
    }
}

#[test]
fn resize_backward_is_exact_transpose() {
    for (h, w, oh, ow) in [(5, 4, 9, 7), (6, 8, 3, 2), (1, 3, 4, 1)] {
        let mut rs = LinearResize::new(oh, ow).unwrap();
        let x = random_tensor([2, 1, h, w], 61);
        let y = rs.forward(&x).unwrap();
        let probe = random_tensor(y.shape(), 63);
        let dx = rs.backward(&probe).unwrap();
        // <R x, p> == <x, R^T p>
        assert!((dot(&y, &probe) - dot(&x, &dx)).abs() < 1e-12);
        let mut xv = x.data().to_vec();
        let num = numeric_gradient(&mut xv, &all_indices(x.len()), H, |v| {
            dot(
                &LinearResize::new(oh, ow).unwrap().forward(&Tensor::from_vec(x.shape(), v.to_vec()).unwrap()).unwrap(),
                &probe,
            )
        });
        assert!(relative_error(dx.data(), &num) < LAYER_TOL);
    }
}

#[test]
fn backward_without_forward_is_an_error() {
    let mut conv = Conv2d::<f64>::new("c", 1, 1, 3, (1, 1), false, || 1.0).unwrap();
    assert!(conv.backward(&Tensor::zeros([1, 1, 2, 2])).is_err());
    assert!(BatchNorm2d::<f64>::new("bn", 1).backward(&Tensor::zeros([1, 1, 2, 2])).is_err());
    assert!(MaxPool2x2::default().backward(&Tensor::<f64>::zeros([1, 1, 1, 1])).is_err());
}
