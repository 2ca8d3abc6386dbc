use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use upanets::tensor::gradcheck::DEFAULT_EPS;
use upanets::tensor::{grad_check, BatchNormMode, Conv2dSpec, Graph, Tensor};
use upanets::Error;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn randn(shape: &[usize], seed: u64) -> Tensor<f64> {
    Tensor::randn(shape.to_vec(), 1.0, &mut rng(seed))
}

/// Six nested loops, straight from the definition of cross-correlation.
fn naive_conv(
    x: &Tensor<f64>,
    k: &Tensor<f64>,
    bias: Option<&Tensor<f64>>,
    stride: usize,
    pad: usize,
    groups: usize,
) -> Tensor<f64> {
    let (n, cin, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (cout, cin_g, kh, kw) = (k.shape()[0], k.shape()[1], k.shape()[2], k.shape()[3]);
    let ho = (h + 2 * pad - kh) / stride + 1;
    let wo = (w + 2 * pad - kw) / stride + 1;
    let cout_g = cout / groups;
    assert_eq!(cin_g * groups, cin);
    let mut out = Tensor::zeros(vec![n, cout, ho, wo]);
    for b in 0..n {
        for co in 0..cout {
            let grp = co / cout_g;
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut acc = bias.map_or(0.0, |b| b.data()[co]);
                    for ci in 0..cin_g {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = (oy * stride + ky) as isize - pad as isize;
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                    continue;
                                }
                                let c = grp * cin_g + ci;
                                acc += x.data()[((b * cin + c) * h + iy as usize) * w + ix as usize]
                                    * k.data()[((co * cin_g + ci) * kh + ky) * kw + kx];
                            }
                        }
                    }
                    out.data_mut()[((b * cout + co) * ho + oy) * wo + ox] = acc;
                }
            }
        }
    }
    out
}

fn naive_matmul(a: &Tensor<f64>, b: &Tensor<f64>) -> Tensor<f64> {
    let (m, k) = (a.shape()[0], a.shape()[1]);
    let p = b.shape()[1];
    let mut out = Tensor::zeros(vec![m, p]);
    for i in 0..m {
        for j in 0..p {
            let mut acc = 0.0;
            for t in 0..k {
                acc += a.data()[i * k + t] * b.data()[t * p + j];
            }
            out.data_mut()[i * p + j] = acc;
        }
    }
    out
}

fn conv(x: Tensor<f64>, k: Tensor<f64>, spec: Conv2dSpec) -> Result<Tensor<f64>, Error> {
    let g = Graph::new();
    let (xv, kv) = (g.constant(x), g.constant(k));
    let y = g.conv2d(xv, kv, None, spec)?;
    Ok((*g.value(y)).clone())
}

#[test]
fn conv_all_ones_counts_overlap() {
    let y = conv(
        Tensor::ones(vec![1, 1, 3, 3]),
        Tensor::ones(vec![1, 1, 3, 3]),
        Conv2dSpec::same3x3(1),
    )
    .unwrap();
    assert_eq!(y.shape(), &[1, 1, 3, 3]);
    assert_eq!(y.data()[4], 9.0);
    for corner in [0, 2, 6, 8] {
        assert_eq!(y.data()[corner], 4.0);
    }
}

#[test]
fn conv_center_tap_is_identity() {
    let x = randn(&[2, 1, 5, 5], 1);
    let mut k = Tensor::zeros(vec![1, 1, 3, 3]);
    k.data_mut()[4] = 1.0;
    let y = conv(x.clone(), k, Conv2dSpec::same3x3(1)).unwrap();
    assert_eq!(y, x);
}

#[test]
fn conv_matches_direct_summation() {
    let x = randn(&[2, 3, 5, 5], 2);
    let k = randn(&[4, 3, 3, 3], 3);
    let b = randn(&[4], 4);
    for (stride, pad) in [(1, 0), (1, 1), (2, 1)] {
        let g = Graph::new();
        let (xv, kv, bv) = (g.constant(x.clone()), g.constant(k.clone()), g.constant(b.clone()));
        let y = g
            .conv2d(xv, kv, Some(bv), Conv2dSpec { stride, pad, groups: 1 })
            .unwrap();
        let oracle = naive_conv(&x, &k, Some(&b), stride, pad, 1);
        assert!(g.value(y).max_abs_diff(&oracle) < 1e-12, "stride {stride} pad {pad}");
    }
}

#[test]
fn grouped_conv_equals_independent_slices() {
    for groups in [1, 2, 4] {
        let x = randn(&[2, 8, 4, 4], 10 + groups as u64);
        let k = randn(&[4, 8 / groups, 3, 3], 20 + groups as u64);
        let whole = conv(x.clone(), k.clone(), Conv2dSpec::same3x3(groups)).unwrap();
        let g = Graph::new();
        let xv = g.constant(x.clone());
        let kv = g.constant(k.clone());
        let (cin_g, cout_g) = (8 / groups, 4 / groups);
        let mut parts = Vec::new();
        for grp in 0..groups {
            let xs = g.slice_channels(xv, grp * cin_g, cin_g).unwrap();
            let ks = g.constant(
                Tensor::new(
                    vec![cout_g, cin_g, 3, 3],
                    k.data()[grp * cout_g * cin_g * 9..(grp + 1) * cout_g * cin_g * 9].to_vec(),
                )
                .unwrap(),
            );
            parts.push(g.conv2d(xs, ks, None, Conv2dSpec::same3x3(1)).unwrap());
        }
        let _ = kv;
        let joined = g.concat_channels(&parts).unwrap();
        assert!(g.value(joined).max_abs_diff(&whole) < 1e-12, "groups {groups}");
        assert!(naive_conv(&x, &k, None, 1, 1, groups).max_abs_diff(&whole) < 1e-12);
    }
}

#[test]
fn conv_rejects_bad_configurations() {
    let err = conv(
        Tensor::ones(vec![1, 3, 4, 4]),
        Tensor::ones(vec![4, 1, 3, 3]),
        Conv2dSpec::same3x3(2),
    )
    .unwrap_err();
    assert!(matches!(err, Error::Config(_)), "{err}");
    let err = conv(
        Tensor::ones(vec![1, 2, 4, 4]),
        Tensor::ones(vec![4, 3, 3, 3]),
        Conv2dSpec::same3x3(1),
    )
    .unwrap_err();
    assert!(matches!(err, Error::Dimension { .. }), "{err}");
    let err = conv(
        Tensor::ones(vec![1, 1, 4, 4]),
        Tensor::ones(vec![1, 1, 3, 3]),
        Conv2dSpec {
            stride: 2,
            pad: 0,
            groups: 1,
        },
    )
    .unwrap_err();
    assert!(matches!(err, Error::Config(_)), "{err}");
}

#[test]
fn avgpool_examples() {
    let g = Graph::new();
    let x = g.constant(Tensor::new(vec![1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
    assert_eq!(g.value(g.avg_pool2d(x, 2, 2).unwrap()).data(), &[2.5]);

    let c = g.constant(Tensor::full(vec![2, 3, 4, 4], 1.75));
    let y = g.value(g.avg_pool2d(c, 2, 2).unwrap());
    assert_eq!(y.shape(), &[2, 3, 2, 2]);
    assert!(y.data().iter().all(|&v| v == 1.75));

    let r = randn(&[1, 2, 4, 4], 5);
    let y = g.value(g.avg_pool2d(g.constant(r.clone()), 2, 2).unwrap());
    for ch in 0..2 {
        for oy in 0..2 {
            for ox in 0..2 {
                let mut s = 0.0;
                for dy in 0..2 {
                    for dx in 0..2 {
                        s += r.data()[ch * 16 + (2 * oy + dy) * 4 + 2 * ox + dx];
                    }
                }
                let got = y.data()[ch * 4 + oy * 2 + ox];
                assert!((got - s / 4.0).abs() < 1e-12);
            }
        }
    }

    let odd = g.constant(Tensor::ones(vec![1, 1, 5, 5]));
    assert!(matches!(g.avg_pool2d(odd, 2, 2), Err(Error::Config(_))));
}

#[test]
fn matmul_examples() {
    let g = Graph::new();
    let a = Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
    let b = Tensor::new(vec![2, 1], vec![1.0, 1.0]).unwrap();
    let y = g.matmul(g.constant(a), g.constant(b)).unwrap();
    assert_eq!(g.value(y).data(), &[3.0, 7.0]);

    let x = randn(&[3, 4], 6);
    let eye = Tensor::from_fn(vec![4, 4], |i| if i / 4 == i % 4 { 1.0 } else { 0.0 });
    let y = g.matmul(g.constant(x.clone()), g.constant(eye)).unwrap();
    assert_eq!(*g.value(y), x);

    let w = randn(&[4, 2], 7);
    let y = g.matmul(g.constant(x.clone()), g.constant(w.clone())).unwrap();
    assert!(g.value(y).max_abs_diff(&naive_matmul(&x, &w)) < 1e-12);

    let bad = g.matmul(g.constant(x), g.constant(randn(&[3, 2], 8)));
    assert!(matches!(bad, Err(Error::Dimension { .. })));
}

#[test]
fn batchnorm_examples() {
    let g = Graph::new();
    let gamma = g.constant(Tensor::ones(vec![2]));
    let beta = g.constant(Tensor::zeros(vec![2]));
    let x = Tensor::from_fn(vec![3, 2, 2, 2], |i| if (i / 4) % 2 == 0 { 3.0 } else { -1.5 });
    let (y, stats) = g
        .batch_norm2d(g.constant(x), gamma, beta, BatchNormMode::Train, 1e-5)
        .unwrap();
    assert!(g.value(y).data().iter().all(|&v| v == 0.0));
    assert_eq!(stats.unwrap().mean, vec![3.0, -1.5]);

    let zero_gamma = g.constant(Tensor::zeros(vec![2]));
    let beta2 = g.constant(Tensor::new(vec![2], vec![0.5, -2.0]).unwrap());
    let r = randn(&[2, 2, 3, 3], 9);
    let (y, _) = g
        .batch_norm2d(g.constant(r.clone()), zero_gamma, beta2, BatchNormMode::Train, 1e-5)
        .unwrap();
    for (i, &v) in g.value(y).data().iter().enumerate() {
        assert_eq!(v, if (i / 9) % 2 == 0 { 0.5 } else { -2.0 });
    }

    let r = randn(&[4, 3, 5, 5], 10).map(|v| 2.0 * v + 0.7);
    let gamma = g.constant(Tensor::ones(vec![3]));
    let beta = g.constant(Tensor::zeros(vec![3]));
    let (y, _) = g
        .batch_norm2d(g.constant(r), gamma, beta, BatchNormMode::Train, 1e-5)
        .unwrap();
    let y = g.value(y);
    for c in 0..3 {
        let vals: Vec<f64> = (0..4)
            .flat_map(|n| y.data()[(n * 3 + c) * 25..(n * 3 + c + 1) * 25].to_vec())
            .collect();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
        assert!(mean.abs() < 1e-5);
        assert!((var - 1.0).abs() < 1e-5, "channel {c} variance {var}");
    }
}

#[test]
fn layernorm_examples() {
    let g = Graph::new();
    let x = randn(&[1, 2, 3, 4], 11);
    let y = g.layer_norm(g.constant(x.clone()), &[4], None, 1e-5).unwrap();
    for row in g.value(y).data().chunks(4) {
        let mean = row.iter().sum::<f64>() / 4.0;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 4.0;
        assert!(mean.abs() < 1e-6 && (var - 1.0).abs() < 1e-4);
    }

    let gamma = g.constant(Tensor::zeros(vec![4]));
    let beta = g.constant(Tensor::full(vec![4], 5.0));
    let y = g
        .layer_norm(g.constant(x.clone()), &[4], Some((gamma, beta)), 1e-5)
        .unwrap();
    assert!(g.value(y).data().iter().all(|&v| v == 5.0));

    // Standardized with the same eps, then normalized again: unchanged.
    let once = g.layer_norm(g.constant(x), &[2, 3, 4], None, 0.0).unwrap();
    let twice = g.layer_norm(once, &[2, 3, 4], None, 0.0).unwrap();
    assert!(g.value(once).max_abs_diff(&g.value(twice)) < 1e-6);

    let bad = g.layer_norm(g.constant(randn(&[2, 3], 12)), &[4], None, 1e-5);
    assert!(matches!(bad, Err(Error::Dimension { .. })));
}

fn log_sum_exp_oracle(logits: &Tensor<f64>, labels: &[usize]) -> f64 {
    let k = logits.shape()[1];
    let mut total = 0.0;
    for (r, row) in logits.data().chunks(k).enumerate() {
        let denom: f64 = row.iter().map(|z| z.exp()).sum();
        total += -(row[labels[r]].exp() / denom).ln();
    }
    total / labels.len() as f64
}

#[test]
fn cross_entropy_examples() {
    let g = Graph::new();
    let uniform = g.constant(Tensor::full(vec![3, 10], 0.3));
    let l = g.softmax_cross_entropy(uniform, &[0, 4, 9]).unwrap();
    assert!((g.value(l).data()[0] - 10f64.ln()).abs() < 1e-12);

    let mut last = f64::INFINITY;
    for margin in [1.0, 10.0, 50.0, 500.0] {
        let mut t = Tensor::zeros(vec![1, 10]);
        t.data_mut()[3] = margin;
        let l = g.softmax_cross_entropy(g.constant(t), &[3]).unwrap();
        let v = g.value(l).data()[0];
        assert!(v <= last && v >= 0.0);
        last = v;
    }
    assert!(last < 1e-12);

    let z = randn(&[4, 10], 13);
    let labels = [1, 7, 0, 9];
    let l = g.softmax_cross_entropy(g.constant(z.clone()), &labels).unwrap();
    assert!((g.value(l).data()[0] - log_sum_exp_oracle(&z, &labels)).abs() < 1e-10);

    let bad = g.softmax_cross_entropy(g.constant(z), &[1, 2, 3, 10]);
    assert!(matches!(bad, Err(Error::Input(_))));
}

#[test]
fn concat_examples() {
    let g = Graph::new();
    let a = randn(&[2, 2, 3, 3], 14);
    let b = randn(&[2, 3, 3, 3], 15);
    let single = g.concat_channels(&[g.constant(a.clone())]).unwrap();
    assert_eq!(*g.value(single), a);
    let joined = g
        .concat_channels(&[g.constant(a.clone()), g.constant(b.clone())])
        .unwrap();
    let jv = g.value(joined);
    assert_eq!(jv.shape(), &[2, 5, 3, 3]);
    assert_eq!(jv.slice_channels(0, 2).unwrap(), a);
    assert_eq!(jv.slice_channels(2, 3).unwrap(), b);

    let bad = g.concat_channels(&[g.constant(a), g.constant(randn(&[2, 1, 2, 3], 16))]);
    assert!(matches!(bad, Err(Error::Dimension { .. })));
}

#[test]
fn concat_sum_gradient_splits_exactly() {
    let g = Graph::new();
    let a = g.leaf(randn(&[1, 2, 2, 2], 17), true);
    let b = g.leaf(randn(&[1, 3, 2, 2], 18), true);
    let w = g.constant(randn(&[1, 5, 2, 2], 19));
    let j = g.concat_channels(&[a, b]).unwrap();
    let loss = g.sum(g.mul(j, w).unwrap()).unwrap();
    let grads = g.backward(loss).unwrap();
    let wv = g.value(w);
    assert_eq!(*grads.get(a).unwrap(), wv.slice_channels(0, 2).unwrap());
    assert_eq!(*grads.get(b).unwrap(), wv.slice_channels(2, 3).unwrap());

    let report = grad_check(
        "concat_channels",
        |g, v| {
            let j = g.concat_channels(&[v[0], v[1]])?;
            let wv = g.constant(randn(&[1, 5, 2, 2], 19));
            g.sum(g.mul(j, wv)?)
        },
        &[randn(&[1, 2, 2, 2], 17), randn(&[1, 3, 2, 2], 18)],
        DEFAULT_EPS,
    )
    .unwrap();
    assert!(report.max_rel_error < 1e-7, "{report:?}");
}

#[test]
fn quadratic_grad_check() {
    let x = Tensor::new(vec![2], vec![1.0, 2.0]).unwrap();
    let g = Graph::new();
    let xv = g.leaf(x.clone(), true);
    let f = g.sum(g.mul(xv, xv).unwrap()).unwrap();
    assert_eq!(g.backward(f).unwrap().get(xv).unwrap().data(), &[2.0, 4.0]);
    let report = grad_check("square", |g, v| g.sum(g.mul(v[0], v[0])?), &[x], DEFAULT_EPS).unwrap();
    assert!(report.max_rel_error < 1e-7, "{report:?}");
    assert_eq!(report.checked, 2);
}

#[test]
fn grad_check_rejects_non_scalar_and_reports_non_finite() {
    let err = grad_check("id", |g, v| g.relu(v[0]), &[randn(&[3], 1)], DEFAULT_EPS).unwrap_err();
    assert!(matches!(err, Error::Input(_)));

    let big = Tensor::new(vec![1, 2], vec![1e308, 1e308]).unwrap();
    let err = grad_check(
        "overflow",
        |g, v| {
            let s = g.scale(v[0], 10.0)?;
            g.sum(s)
        },
        &[big],
        DEFAULT_EPS,
    )
    .unwrap_err();
    match err {
        Error::Numeric { op, .. } => assert_eq!(op, "scale"),
        other => panic!("unexpected {other}"),
    }
}

/// Loss = Σ y ⊙ w for a fixed random `w`, so every output element carries
/// a distinct weight into the gradient.
fn weighted(g: &Graph<f64>, y: upanets::tensor::Var, seed: u64) -> upanets::Result<upanets::tensor::Var> {
    let w = g.constant(randn(&g.shape(y), seed));
    g.sum(g.mul(y, w)?)
}

type OpCheck = (
    &'static str,
    Box<dyn Fn(&Graph<f64>, &[upanets::tensor::Var]) -> upanets::Result<upanets::tensor::Var>>,
    Vec<Tensor<f64>>,
);

#[test]
fn every_operator_matches_finite_differences() {
    let tol = 1e-4;
    let checks: Vec<OpCheck> = vec![
        (
            "conv2d",
            Box::new(|g, v| {
                let y = g.conv2d(v[0], v[1], Some(v[2]), Conv2dSpec::same3x3(1))?;
                weighted(g, y, 100)
            }),
            vec![randn(&[1, 2, 4, 4], 1), randn(&[3, 2, 3, 3], 2), randn(&[3], 3)],
        ),
        (
            "conv2d_grouped_strided",
            Box::new(|g, v| {
                let y = g.conv2d(
                    v[0],
                    v[1],
                    None,
                    Conv2dSpec {
                        stride: 2,
                        pad: 1,
                        groups: 2,
                    },
                )?;
                weighted(g, y, 101)
            }),
            vec![randn(&[2, 4, 5, 5], 4), randn(&[2, 2, 3, 3], 5)],
        ),
        (
            "avgpool2d",
            Box::new(|g, v| weighted(g, g.avg_pool2d(v[0], 2, 2)?, 102)),
            vec![randn(&[2, 2, 4, 4], 6)],
        ),
        (
            "gap",
            Box::new(|g, v| weighted(g, g.global_avg_pool(v[0])?, 103)),
            vec![randn(&[2, 3, 2, 2], 7)],
        ),
        (
            "matmul",
            Box::new(|g, v| weighted(g, g.matmul(v[0], v[1])?, 104)),
            vec![randn(&[2, 3, 4], 8), randn(&[4, 2], 9)],
        ),
        (
            "add_bias",
            Box::new(|g, v| weighted(g, g.add_bias_last(v[0], v[1])?, 105)),
            vec![randn(&[2, 3], 10), randn(&[3], 11)],
        ),
        (
            "add_bias_scalar",
            Box::new(|g, v| weighted(g, g.add_bias_last(v[0], v[1])?, 106)),
            vec![randn(&[2, 3], 12), randn(&[1], 13)],
        ),
        (
            "batchnorm2d_train",
            Box::new(|g, v| {
                let (y, _) = g.batch_norm2d(v[0], v[1], v[2], BatchNormMode::Train, 1e-5)?;
                weighted(g, y, 107)
            }),
            vec![randn(&[2, 3, 3, 3], 14), randn(&[3], 15), randn(&[3], 16)],
        ),
        (
            "batchnorm2d_eval",
            Box::new(|g, v| {
                let mean = [0.1, -0.2, 0.3];
                let var = [1.5, 0.5, 2.0];
                let (y, _) = g.batch_norm2d(v[0], v[1], v[2], BatchNormMode::Eval { mean: &mean, var: &var }, 1e-5)?;
                weighted(g, y, 108)
            }),
            vec![randn(&[2, 3, 2, 2], 17), randn(&[3], 18), randn(&[3], 19)],
        ),
        (
            "layernorm_affine",
            Box::new(|g, v| weighted(g, g.layer_norm(v[0], &[3, 2, 2], Some((v[1], v[2])), 1e-5)?, 109)),
            vec![randn(&[2, 3, 2, 2], 20), randn(&[3, 2, 2], 21), randn(&[3, 2, 2], 22)],
        ),
        (
            "layernorm_plain",
            Box::new(|g, v| weighted(g, g.layer_norm(v[0], &[5], None, 1e-5)?, 110)),
            vec![randn(&[3, 5], 23)],
        ),
        (
            "relu",
            Box::new(|g, v| weighted(g, g.relu(v[0])?, 111)),
            vec![randn(&[4, 5], 24)],
        ),
        (
            "softmax_cross_entropy",
            Box::new(|g, v| g.softmax_cross_entropy(v[0], &[2, 0, 4])),
            vec![randn(&[3, 5], 25)],
        ),
        (
            "concat_slice_shuffle",
            Box::new(|g, v| {
                let j = g.concat_channels(&[v[0], v[1]])?;
                let s = g.channel_shuffle(j, 2)?;
                let t = g.slice_channels(s, 1, 3)?;
                weighted(g, t, 112)
            }),
            vec![randn(&[2, 2, 2, 2], 26), randn(&[2, 2, 2, 2], 27)],
        ),
        (
            "channels_last_roundtrip",
            Box::new(|g, v| {
                let t = g.to_channels_last(v[0])?;
                let m = g.matmul(t, v[1])?;
                let back = g.from_channels_last(m, 2, 3)?;
                weighted(g, g.reshape(back, &[2, 12])?, 113)
            }),
            vec![randn(&[2, 3, 2, 3], 28), randn(&[3, 2], 29)],
        ),
        (
            "mean_scale_add",
            Box::new(|g, v| {
                let a = g.add(v[0], v[1])?;
                let s = g.scale(a, -1.5)?;
                let m = g.mul(s, v[0])?;
                g.mean(m)
            }),
            vec![randn(&[3, 4], 30), randn(&[3, 4], 31)],
        ),
    ];
    for (name, f, inputs) in checks {
        let report = grad_check(name, f, &inputs, DEFAULT_EPS).unwrap();
        println!(
            "{name}: max_rel_error {:.3e} over {} elements",
            report.max_rel_error, report.checked
        );
        assert!(report.max_rel_error < tol, "{report:?}");
    }
}

#[test]
fn forward_is_bit_deterministic() {
    let run = || {
        let g = Graph::<f32>::new();
        let x = g.constant(Tensor::randn(vec![2, 4, 6, 6], 1.0, &mut rng(40)));
        let k = g.constant(Tensor::randn(vec![6, 2, 3, 3], 0.3, &mut rng(41)));
        let y = g.conv2d(x, k, None, Conv2dSpec::same3x3(2)).unwrap();
        let gamma = g.constant(Tensor::ones(vec![6]));
        let beta = g.constant(Tensor::zeros(vec![6]));
        let (y, _) = g.batch_norm2d(y, gamma, beta, BatchNormMode::Train, 1e-5).unwrap();
        let y = g.layer_norm(y, &[6, 6, 6], None, 1e-5).unwrap();
        (*g.value(y)).clone()
    };
    let (a, b) = (run(), run());
    assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
}

#[test]
fn channel_shuffle_with_one_group_is_identity() {
    let g = Graph::new();
    let x = randn(&[1, 6, 2, 2], 50);
    let y = g.channel_shuffle(g.constant(x.clone()), 1).unwrap();
    assert_eq!(*g.value(y), x);
    let y = g.channel_shuffle(g.constant(x.clone()), 2).unwrap();
    // channels [a0 a1 a2 | b0 b1 b2] → [a0 b0 a1 b1 a2 b2]
    let y = g.value(y);
    for (o, s) in [(0, 0), (1, 3), (2, 1), (3, 4), (4, 2), (5, 5)] {
        assert_eq!(y.slice_channels(o, 1).unwrap(), x.slice_channels(s, 1).unwrap());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn concat_then_slice_recovers_parts(
        n in 1usize..3, h in 1usize..4, w in 1usize..4,
        widths in proptest::collection::vec(1usize..4, 1..4),
        seed in 0u64..1000,
    ) {
        let g = Graph::<f64>::new();
        let parts: Vec<Tensor<f64>> = widths
            .iter()
            .enumerate()
            .map(|(i, &c)| randn(&[n, c, h, w], seed + i as u64))
            .collect();
        let vars: Vec<_> = parts.iter().map(|p| g.constant(p.clone())).collect();
        let joined = g.value(g.concat_channels(&vars).unwrap());
        let mut start = 0;
        for (p, &c) in parts.iter().zip(&widths) {
            prop_assert_eq!(&joined.slice_channels(start, c).unwrap(), p);
            start += c;
        }
    }

    #[test]
    fn grouped_conv_matches_naive_oracle(
        groups in prop::sample::select(vec![1usize, 2, 4]),
        per_in in 1usize..3, per_out in 1usize..3,
        h in 3usize..6, pad in 0usize..2, seed in 0u64..1000,
    ) {
        let cin = groups * per_in;
        let cout = groups * per_out;
        let x = randn(&[1, cin, h, h], seed);
        let k = randn(&[cout, per_in, 3, 3], seed + 1);
        let y = conv(x.clone(), k.clone(), Conv2dSpec { stride: 1, pad, groups }).unwrap();
        prop_assert!(y.max_abs_diff(&naive_conv(&x, &k, None, 1, pad, groups)) < 1e-12);
    }
}
