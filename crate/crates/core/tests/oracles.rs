//! Layer outputs and gradients against brute-force reference computations.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tafnet::data::Point;
use tafnet::layers::{PyramidConfig, PyramidPooling};
use tafnet::loss::{bayesian_loss, Background, BayesianLossConfig};
use tafnet::metrics::game;
use tafnet::{Shape, Tape, Tensor4};

fn random(shape: Shape, rng: &mut ChaCha8Rng) -> Tensor4 {
    Tensor4::from_fn(shape, |_, _, _, _| rng.gen_range(-1.0..1.0))
}

fn direct_conv(x: &Tensor4, w: &Tensor4, b: &[f64], stride: usize, pad: usize) -> Tensor4 {
    let (xs, ws) = (x.shape(), w.shape());
    let oh = (xs.h + 2 * pad - ws.h) / stride + 1;
    let ow = (xs.w + 2 * pad - ws.w) / stride + 1;
    Tensor4::from_fn(Shape::new(xs.n, ws.n, oh, ow), |n, o, i, j| {
        let mut acc = b[o];
        for c in 0..xs.c {
            for ki in 0..ws.h {
                for kj in 0..ws.w {
                    let r = (i * stride + ki) as isize - pad as isize;
                    let s = (j * stride + kj) as isize - pad as isize;
                    if r >= 0 && s >= 0 && (r as usize) < xs.h && (s as usize) < xs.w {
                        acc += x.get(n, c, r as usize, s as usize) * w.get(o, c, ki, kj);
                    }
                }
            }
        }
        acc
    })
}

#[test]
fn conv_matches_direct_summation() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for (stride, pad, k) in [(1, 1, 3), (2, 0, 3), (1, 0, 1), (2, 3, 7)] {
        let x = random(Shape::new(2, 3, 9, 8), &mut rng);
        let w = random(Shape::new(4, 3, k, k), &mut rng);
        let b = random(Shape::new(1, 4, 1, 1), &mut rng);
        let mut tape = Tape::new();
        let (xv, wv, bv) = (tape.leaf(x.clone()), tape.leaf(w.clone()), tape.leaf(b.clone()));
        let y = tape.conv2d(xv, wv, bv, stride, pad).unwrap();
        let want = direct_conv(&x, &w, b.data(), stride, pad);
        assert_eq!(tape.shape(y), want.shape());
        assert!(tape.value(y).max_abs_diff(&want) < 1e-12);
    }
}

fn central_difference(x: &Tensor4, i: usize, eps: f64, f: impl Fn(&Tensor4) -> f64) -> f64 {
    let mut hi = x.clone();
    hi.data_mut()[i] += eps;
    let mut lo = x.clone();
    lo.data_mut()[i] -= eps;
    (f(&hi) - f(&lo)) / (2.0 * eps)
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / (a.abs() + b.abs()).max(1e-8)
}

#[test]
fn conv_input_gradient_matches_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = random(Shape::new(2, 3, 8, 8), &mut rng);
    let w = random(Shape::new(4, 3, 3, 3), &mut rng);
    let b = random(Shape::new(1, 4, 1, 1), &mut rng);
    let r = random(Shape::new(2, 4, 8, 8), &mut rng);
    // projection onto r gives a scalar with a non-trivial gradient everywhere
    let f = |x: &Tensor4| -> f64 {
        let y = direct_conv(x, &w, b.data(), 1, 1);
        y.data().iter().zip(r.data()).map(|(a, b)| a * b).sum()
    };
    let mut tape = Tape::new();
    let (xv, wv, bv, rv) = (
        tape.leaf(x.clone()),
        tape.leaf(w.clone()),
        tape.leaf(b.clone()),
        tape.constant(r.clone()),
    );
    let y = tape.conv2d(xv, wv, bv, 1, 1).unwrap();
    let p = tape.mul(y, rv).unwrap();
    let loss = tape.sum_all(p);
    let g = tape.backward(loss).unwrap().wrt(xv);
    for i in 0..x.len() {
        let n = central_difference(&x, i, 1e-5, f);
        assert!(rel(g.data()[i], n) < 1e-6, "coord {i}: {} vs {n}", g.data()[i]);
    }
}

fn pool_oracle(x: &Tensor4, oh: usize, ow: usize) -> Tensor4 {
    let s = x.shape();
    Tensor4::from_fn(Shape::new(s.n, s.c, oh, ow), |n, c, i, j| {
        let (r0, r1) = (i * s.h / oh, (i + 1) * s.h / oh);
        let (c0, c1) = (j * s.w / ow, (j + 1) * s.w / ow);
        let mut sum = 0.0;
        for r in r0..r1 {
            for q in c0..c1 {
                sum += x.get(n, c, r, q);
            }
        }
        sum / ((r1 - r0) * (c1 - c0)) as f64
    })
}

#[test]
fn adaptive_pool_three_to_two() {
    let x = Tensor4::new(Shape::new(1, 1, 3, 3), (1..=9).map(f64::from).collect()).unwrap();
    let mut tape = Tape::new();
    let xv = tape.leaf(x.clone());
    let y = tape.adaptive_avgpool2d(xv, 2, 2).unwrap();
    assert_eq!(tape.value(y).data(), &[1.0, 2.5, 5.5, 7.0]);
    assert_eq!(pool_oracle(&x, 2, 2).data(), &[1.0, 2.5, 5.5, 7.0]);
}

#[test]
fn adaptive_pool_matches_bin_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for (h, w, oh, ow) in [(7, 5, 3, 2), (6, 6, 6, 1), (10, 9, 4, 4), (3, 8, 1, 3)] {
        let x = random(Shape::new(2, 2, h, w), &mut rng);
        let mut tape = Tape::new();
        let xv = tape.leaf(x.clone());
        let y = tape.adaptive_avgpool2d(xv, oh, ow).unwrap();
        assert!(tape.value(y).max_abs_diff(&pool_oracle(&x, oh, ow)) < 1e-14);
    }
}

/// Triangle-kernel form of align-corners=false bilinear interpolation.
fn upsample_oracle(x: &Tensor4, oh: usize, ow: usize) -> Tensor4 {
    let s = x.shape();
    let src = |d: usize, inp: usize, out: usize| -> f64 {
        ((d as f64 + 0.5) * inp as f64 / out as f64 - 0.5).clamp(0.0, (inp - 1) as f64)
    };
    Tensor4::from_fn(Shape::new(s.n, s.c, oh, ow), |n, c, i, j| {
        let (sy, sx) = (src(i, s.h, oh), src(j, s.w, ow));
        let mut acc = 0.0;
        for r in 0..s.h {
            for q in 0..s.w {
                let k = (1.0 - (sy - r as f64).abs()).max(0.0) * (1.0 - (sx - q as f64).abs()).max(0.0);
                acc += k * x.get(n, c, r, q);
            }
        }
        acc
    })
}

#[test]
fn bilinear_matches_triangle_kernel() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for (h, w, oh, ow) in [(3, 5, 7, 11), (2, 2, 8, 8), (1, 4, 3, 4), (4, 4, 16, 16), (5, 3, 5, 3)] {
        let x = random(Shape::new(2, 3, h, w), &mut rng);
        let mut tape = Tape::new();
        let xv = tape.leaf(x.clone());
        let y = tape.bilinear_upsample(xv, oh, ow).unwrap();
        assert!(tape.value(y).max_abs_diff(&upsample_oracle(&x, oh, ow)) < 1e-14);
    }
}

#[test]
fn pyramid_context_maps_on_a_ramp() {
    let ramp = Tensor4::new(Shape::new(1, 1, 6, 6), (0..36).map(f64::from).collect()).unwrap();
    let pyramid = PyramidPooling::new("p", 1, PyramidConfig { bin_sizes: vec![1, 2] });
    let mut tape = Tape::new();
    let x = tape.leaf(ramp.clone());
    let maps = pyramid.context_maps(&mut tape, x).unwrap();
    assert_eq!(maps.len(), 2);
    for (v, b) in maps.into_iter().zip([1, 2]) {
        let want = upsample_oracle(&pool_oracle(&ramp, b, b), 6, 6);
        assert!(tape.value(v).max_abs_diff(&want) < 1e-12, "bin {b}");
        if b == 1 {
            assert!(tape.value(v).data().iter().all(|&m| (m - 17.5).abs() < 1e-12));
        }
    }
}

/// Posterior enumeration without any log-domain tricks, straight from the
/// definition. Points, sigma and margin in input pixels.
fn bayesian_oracle(map: &Tensor4, points: &[Point], sigma: f64, margin: Option<f64>) -> f64 {
    let s = map.shape();
    let sig = sigma / 8.0;
    let kernel = |d2: f64| (-d2 / (2.0 * sig * sig)).exp();
    let mut expected = vec![0.0; points.len() + 1];
    for i in 0..s.h {
        for j in 0..s.w {
            let (cx, cy) = (j as f64 + 0.5, i as f64 + 0.5);
            let d2: Vec<f64> = points
                .iter()
                .map(|p| (cx - p.x / 8.0).powi(2) + (cy - p.y / 8.0).powi(2))
                .collect();
            let mut weights: Vec<f64> = d2.iter().map(|&d| kernel(d)).collect();
            if let Some(m) = margin {
                let nearest = d2.iter().copied().fold(f64::INFINITY, f64::min).sqrt();
                let bg = (m / 8.0 - nearest).max(0.0);
                weights.push(kernel(bg * bg));
            }
            let z: f64 = weights.iter().sum();
            for (k, wgt) in weights.iter().enumerate() {
                expected[k] += wgt / z * map.get(0, 0, i, j);
            }
        }
    }
    let mut loss: f64 = expected[..points.len()].iter().map(|e| (1.0 - e).abs()).sum();
    if margin.is_some() {
        loss += expected[points.len()].abs();
    }
    loss
}

#[test]
fn bayesian_loss_matches_dense_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for trial in 0..20 {
        let map = Tensor4::from_fn(Shape::new(1, 1, 8, 8), |_, _, _, _| rng.gen_range(0.0..0.2));
        let points: Vec<Point> = (0..2)
            .map(|_| Point {
                x: rng.gen_range(0.0..64.0),
                y: rng.gen_range(0.0..64.0),
            })
            .collect();
        for (background, margin) in [
            (Background::Off, None),
            (Background::Auto, Some(9.6)),
            (Background::Margin(20.0), Some(20.0)),
        ] {
            let cfg = BayesianLossConfig { sigma: 8.0, background };
            let mut tape = Tape::new();
            let m = tape.leaf(map.clone());
            let l = bayesian_loss(&mut tape, m, std::slice::from_ref(&points), (64, 64), &cfg).unwrap();
            let got = tape.value(l).data()[0];
            let want = bayesian_oracle(&map, &points, 8.0, margin);
            assert!(
                (got - want).abs() < 1e-10,
                "trial {trial} {background:?}: {got} vs {want}"
            );
        }
    }
}

#[test]
fn game_on_a_hand_built_grid() {
    // cell masses k/8 for k = 1..16, row-major; quadrant masses 14/8, 22/8, 46/8, 54/8
    let map = Tensor4::new(Shape::new(1, 1, 4, 4), (1..=16).map(|k| k as f64 / 8.0).collect()).unwrap();
    // (0.5, 0.5) is cell k=1; (2.0, 2.0) sits on both boundaries and belongs to cell k=11
    let points = vec![vec![Point { x: 0.5, y: 0.5 }, Point { x: 2.0, y: 2.0 }]];
    let maps = [map];
    assert_eq!(game(&maps, &points, 0).unwrap(), 15.0);
    // |1.75 - 1| + |2.75 - 0| + |5.75 - 0| + |6.75 - 1|
    assert_eq!(game(&maps, &points, 1).unwrap(), 15.0);
    // every cell alone: (136 - 1 - 11) / 8 + |1/8 - 1| + |11/8 - 1|
    assert_eq!(game(&maps, &points, 2).unwrap(), 16.75);
}
