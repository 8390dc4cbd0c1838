mod common;

use bafusion::autograd::Graph;
use bafusion::ops::{self, Padding};
use bafusion::tensor::{Shape, Tensor};
use common::*;
use proptest::prelude::*;

const TOL: f64 = 1e-3;

#[test]
fn conv2d_gradients_match_finite_differences() {
    let mut r = rng(1);
    let x = random_tensor(&mut r, Shape::new(2, 3, 5, 5), -1.0, 1.0);
    let w = random_tensor(&mut r, Shape::new(4, 3, 3, 3), -1.0, 1.0);
    let b = random_tensor(&mut r, Shape::new(1, 4, 1, 1), -1.0, 1.0);
    for padding in [Padding::Reflect, Padding::Zero] {
        let errs = gradient_errors(&[x.clone(), w.clone(), b.clone()], |g, v| {
            g.conv2d(v[0], v[1], Some(v[2]), padding, 1)
        });
        assert!(errs.iter().all(|&e| e < TOL), "{padding:?}: {errs:?}");
    }
    let errs = gradient_errors(&[x, w], |g, v| g.conv2d(v[0], v[1], None, Padding::Zero, 2));
    assert!(errs.iter().all(|&e| e < TOL), "stride 2: {errs:?}");
}

#[test]
fn relu_forward_and_gradient() {
    let x = Tensor::from_vec(Shape::new(1, 1, 1, 3), vec![-1.0, 0.0, 2.0]).unwrap();
    let mut g = Graph::new();
    let v = g.param(x);
    let y = g.relu(v);
    assert_eq!(g.value(y).data(), &[0.0, 0.0, 2.0]);

    let neg = Tensor::full(Shape::new(1, 2, 2, 2), -0.5);
    let mut g = Graph::new();
    let v = g.param(neg);
    let y = g.relu(v);
    let s = g.sum(y);
    g.backward(s).unwrap();
    assert!(g.value(y).data().iter().all(|&v| v == 0.0));
    assert!(g.grad(v).unwrap().iter().all(|&v| v == 0.0));

    let mut r = rng(2);
    let x = away_from_zero(&mut r, Shape::new(2, 3, 4, 4), 0.05);
    let errs = gradient_errors(&[x], |g, v| Ok(g.relu(v[0])));
    assert!(errs[0] < TOL, "{errs:?}");
}

#[test]
fn global_avg_pool_values_and_gradient() {
    let x = Tensor::from_vec(Shape::new(1, 1, 2, 2), vec![1.0, 2.0, 3.0, 4.0]).unwrap();
    let mut g = Graph::new();
    let v = g.constant(x);
    let p = g.global_avg_pool(v).unwrap();
    assert_eq!(g.value(p).data(), &[2.5]);

    let c = g.constant(Tensor::full(Shape::new(1, 2, 3, 3), 0.7));
    let p = g.global_avg_pool(c).unwrap();
    assert!(g.value(p).data().iter().all(|&v| (v - 0.7).abs() < 1e-7));

    // g/(H·W) flows to every element.
    let mut r = rng(3);
    let x = random_tensor(&mut r, Shape::new(2, 8, 4, 4), -1.0, 1.0);
    let mut g = Graph::new();
    let v = g.param(x.clone());
    let p = g.global_avg_pool(v).unwrap();
    let s = g.sum(p);
    g.backward(s).unwrap();
    assert!(g.grad(v).unwrap().iter().all(|&d| d == 1.0 / 16.0));
    let errs = gradient_errors(&[x], |g, v| g.global_avg_pool(v[0]));
    assert!(errs[0] < TOL);

    let mut g = Graph::new();
    let empty = g.constant(Tensor::zeros(Shape::new(1, 1, 0, 3)));
    assert!(g.global_avg_pool(empty).is_err());
}

#[test]
fn dft_amplitude_constant_and_cosine() {
    let c = Tensor::full(Shape::new(1, 1, 4, 6), 0.3);
    let a = ops::dft2_amplitude(&c);
    assert!((a.data()[0] - 0.3).abs() < 1e-7);
    assert!(a.data()[1..].iter().all(|v| v.abs() < 1e-7));

    let (h, w) = (4, 8);
    let plane: Vec<f32> = (0..h * w)
        .map(|i| (2.0 * std::f64::consts::PI * (i % w) as f64 / w as f64).cos() as f32)
        .collect();
    let naive = naive_dft_amplitude(&plane, h, w);
    let a = ops::dft2_amplitude(&Tensor::from_vec(Shape::new(1, 1, h, w), plane).unwrap());
    for (i, (&x, &o)) in a.data().iter().zip(&naive).enumerate() {
        let expected = if i == 1 || i == w - 1 { 0.5 } else { 0.0 };
        assert!((o - expected).abs() < 1e-6, "oracle bin {i}: {o}");
        assert!((x as f64 - expected).abs() < 1e-6, "bin {i}: {x}");
    }
}

#[test]
fn dft_amplitude_matches_naive_summation() {
    let mut r = rng(4);
    for shape in [Shape::new(1, 1, 4, 4), Shape::new(2, 3, 5, 7)] {
        let x = random_tensor(&mut r, shape, 0.0, 1.0);
        let a = ops::dft2_amplitude(&x);
        for n in 0..shape.batch() {
            for c in 0..shape.channels() {
                let naive = naive_dft_amplitude(x.plane(n, c), shape.height(), shape.width());
                for (got, want) in a.plane(n, c).iter().zip(naive) {
                    assert!((*got as f64 - want).abs() < 1e-5);
                }
            }
        }
    }
    let x = random_tensor(&mut r, Shape::new(2, 3, 4, 4), 0.0, 1.0);
    let errs = gradient_errors(&[x], |g, v| Ok(g.dft2_amplitude(v[0])));
    assert!(errs[0] < TOL, "{errs:?}");
}

#[test]
fn uniform_offset_changes_only_dc() {
    let mut r = rng(5);
    let x = random_tensor(&mut r, Shape::new(1, 2, 6, 6), 0.0, 1.0);
    let b = 0.25f32;
    let shifted = x.map(|v| v + b);
    let (a0, a1) = (ops::dft2_amplitude(&x), ops::dft2_amplitude(&shifted));
    for c in 0..2 {
        let mean = x.plane(0, c).iter().map(|&v| v as f64).sum::<f64>() / 36.0;
        let (p0, p1) = (a0.plane(0, c), a1.plane(0, c));
        let dc = p1[0] as f64 - p0[0] as f64;
        assert!((dc - ((mean + b as f64).abs() - mean.abs())).abs() < 1e-5);
        for i in 1..36 {
            assert!((p1[i] - p0[i]).abs() < 1e-5);
        }
    }
}

#[test]
fn backward_contracts() {
    let mut r = rng(6);
    let x = random_tensor(&mut r, Shape::new(1, 2, 3, 3), -1.0, 1.0);

    let mut g = Graph::new();
    let v = g.param(x.clone());
    let s = g.sum(v);
    g.backward(s).unwrap();
    assert!(g.grad(v).unwrap().iter().all(|&d| d == 1.0));
    assert!(g.backward(s).is_err(), "graph is consumed");

    let mut g = Graph::new();
    let v = g.param(x.clone());
    let sq = g.mul(v, v).unwrap();
    let s = g.sum(sq);
    g.backward(s).unwrap();
    for (d, xv) in g.grad(v).unwrap().iter().zip(x.data()) {
        assert_eq!(*d, 2.0 * xv);
    }

    let mut g = Graph::new();
    let v = g.param(x);
    assert!(matches!(g.backward(v), Err(bafusion::Error::Contract(_))));
}

#[test]
fn composed_chain_gradient() {
    let mut r = rng(7);
    let x = random_tensor(&mut r, Shape::new(2, 3, 4, 4), -1.0, 1.0);
    let w = random_tensor(&mut r, Shape::new(4, 3, 3, 3), -0.5, 0.5);
    let b = random_tensor(&mut r, Shape::new(1, 4, 1, 1), -0.1, 0.1);
    let errs = gradient_errors(&[x, w, b], |g, v| {
        let y = g.conv2d(v[0], v[1], Some(v[2]), Padding::Reflect, 1)?;
        let y = g.relu(y);
        let p = g.global_avg_pool(y)?;
        Ok(g.sum(p))
    });
    assert!(errs.iter().all(|&e| e < TOL), "{errs:?}");
}

#[test]
fn elementwise_gradients() {
    let mut r = rng(8);
    let a = away_from_zero(&mut r, Shape::new(2, 3, 4, 4), 0.05);
    let b = random_tensor(&mut r, Shape::new(2, 3, 4, 4), -1.0, 1.0);
    let errs = gradient_errors(&[a.clone(), b.clone()], |g, v| {
        let s = g.sub(v[0], v[1])?;
        let m = g.mul(s, v[0])?;
        let q = g.square(v[1]);
        let t = g.add(m, q)?;
        let abs = g.abs(v[0]);
        let t = g.add(t, abs)?;
        Ok(g.scale(t, 0.5))
    });
    assert!(errs.iter().all(|&e| e < TOL), "{errs:?}");
    let errs = gradient_errors(&[a, b], |g, v| {
        let c = g.concat_channels(v[0], v[1])?;
        Ok(g.mean(c))
    });
    assert!(errs.iter().all(|&e| e < TOL), "{errs:?}");
}

#[test]
fn tensors_are_deterministic() {
    let run = || {
        let mut r = rng(9);
        let x = random_tensor(&mut r, Shape::new(2, 3, 8, 8), 0.0, 1.0);
        let w = random_tensor(&mut r, Shape::new(5, 3, 3, 3), -1.0, 1.0);
        let y = ops::conv2d(&x, &w, None, Padding::Reflect, 1).unwrap();
        ops::dft2_amplitude(&y).bits()
    };
    assert_eq!(run(), run());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn dc_bin_is_the_plane_mean(values in prop::collection::vec(0.0f32..1.0, 12)) {
        let t = Tensor::from_vec(Shape::new(1, 1, 3, 4), values.clone()).unwrap();
        let a = ops::dft2_amplitude(&t);
        let mean = values.iter().map(|&v| v as f64).sum::<f64>() / 12.0;
        prop_assert!((a.data()[0] as f64 - mean).abs() < 1e-6);
    }

    #[test]
    fn conv_output_extent(h in 1usize..9, w in 1usize..9, stride in 1usize..4) {
        let x = Tensor::zeros(Shape::new(1, 2, h, w));
        let k = Tensor::zeros(Shape::new(3, 2, 3, 3));
        let y = ops::conv2d(&x, &k, None, Padding::Zero, stride).unwrap();
        prop_assert_eq!(y.shape().height(), (h + 2 - 3) / stride + 1);
        prop_assert_eq!(y.shape().width(), (w + 2 - 3) / stride + 1);
    }
}
