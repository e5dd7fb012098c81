use canopy_core::footprints::{rasterize, BuildingFootprint};
use canopy_core::predictor::{
    baseline_predict, forward, init_weights, loss, loss_and_gradient, predict_city, train,
    ModelConfig, Tensor, TrainConfig, Weights,
};
use canopy_core::raster::{minmax_normalize, NormalizationParams, Raster};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn tiny(depth: usize, base: usize, in_ch: usize, seed: u64) -> ModelConfig {
    ModelConfig {
        depth,
        base_filters: base,
        kernel_size: 3,
        in_channels: in_ch,
        seed,
    }
}

fn random_tile(rng: &mut ChaCha8Rng, c: usize, h: usize, w: usize) -> Tensor<f64> {
    Tensor::from_vec(c, h, w, (0..c * h * w).map(|_| rng.random_range(0.0..1.0)).collect())
}

/// He-initialized weights with small positive random biases so that most
/// units are active and no pre-activation sits exactly on the ReLU kink.
fn random_weights(cfg: ModelConfig, rng: &mut ChaCha8Rng) -> Weights<f64> {
    let mut w = init_weights(&cfg).unwrap().cast::<f64>();
    for l in &mut w.layers {
        for b in &mut l.bias {
            *b = rng.random_range(0.05..0.3);
        }
    }
    w
}

// ---- independent per-layer reference implementation -----------------------

type Img = Vec<Vec<Vec<f64>>>; // [channel][row][col]

fn ref_conv(x: &Img, w: &[f64], b: &[f64], out: usize, k: usize, relu: bool) -> Img {
    let (cin, h, wd) = (x.len(), x[0].len(), x[0][0].len());
    let p = (k / 2) as i64;
    let mut y = vec![vec![vec![0.0; wd]; h]; out];
    for o in 0..out {
        for r in 0..h {
            for c in 0..wd {
                let mut s = b[o];
                for i in 0..cin {
                    for dy in 0..k {
                        for dx in 0..k {
                            let rr = r as i64 + dy as i64 - p;
                            let cc = c as i64 + dx as i64 - p;
                            if rr >= 0 && cc >= 0 && (rr as usize) < h && (cc as usize) < wd {
                                s += w[((o * cin + i) * k + dy) * k + dx] * x[i][rr as usize][cc as usize];
                            }
                        }
                    }
                }
                y[o][r][c] = if relu { s.max(0.0) } else { s };
            }
        }
    }
    y
}

fn ref_pool(x: &Img) -> Img {
    x.iter()
        .map(|p| {
            (0..p.len() / 2)
                .map(|r| {
                    (0..p[0].len() / 2)
                        .map(|c| {
                            p[2 * r][2 * c]
                                .max(p[2 * r][2 * c + 1])
                                .max(p[2 * r + 1][2 * c])
                                .max(p[2 * r + 1][2 * c + 1])
                        })
                        .collect()
                })
                .collect()
        })
        .collect()
}

fn ref_up(x: &Img) -> Img {
    x.iter()
        .map(|p| {
            (0..2 * p.len())
                .map(|r| (0..2 * p[0].len()).map(|c| p[r / 2][c / 2]).collect())
                .collect()
        })
        .collect()
}

/// Straight-line U-Net walk over a flat parameter vector.
fn ref_forward(cfg: &ModelConfig, flat: &[f64], x: &Img) -> Vec<f64> {
    let mut pos = 0;
    let mut take = |cin: usize, cout: usize, k: usize| {
        let w = flat[pos..pos + cout * cin * k * k].to_vec();
        pos += cout * cin * k * k;
        let b = flat[pos..pos + cout].to_vec();
        pos += cout;
        (w, b)
    };
    let width = |l: usize| cfg.base_filters * (1 << l);
    let mut skips = Vec::new();
    let mut cur = x.clone();
    let mut cin = cfg.in_channels;
    for l in 0..cfg.depth {
        let (w, b) = take(cin, width(l), 3);
        let a = ref_conv(&cur, &w, &b, width(l), 3, true);
        cur = ref_pool(&a);
        skips.push(a);
        cin = width(l);
    }
    let (w, b) = take(cin, width(cfg.depth), 3);
    cur = ref_conv(&cur, &w, &b, width(cfg.depth), 3, true);
    for l in (0..cfg.depth).rev() {
        let mut cat = ref_up(&cur);
        cat.extend(skips[l].iter().cloned());
        let (w, b) = take(cat.len(), width(l), 3);
        cur = ref_conv(&cat, &w, &b, width(l), 3, true);
    }
    let (w, b) = take(width(0), 1, 1);
    let out = ref_conv(&cur, &w, &b, 1, 1, true);
    assert_eq!(pos, flat.len(), "oracle consumed every parameter");
    out[0].iter().flatten().copied().collect()
}

fn to_img(t: &Tensor<f64>) -> Img {
    (0..t.channels)
        .map(|c| {
            (0..t.height)
                .map(|r| t.plane(c)[r * t.width..(r + 1) * t.width].to_vec())
                .collect()
        })
        .collect()
}

// ---- architecture ----------------------------------------------------------

#[test]
fn parameter_count_matches_layer_arithmetic() {
    let cfg = ModelConfig::default();
    let w = init_weights(&cfg).unwrap();
    // (in, out) per 3×3 conv: 3→8, 8→16, 16→32, bottleneck 32→64,
    // decoder (64+32)→32, (32+16)→16, (16+8)→8, then 1×1 head 8→1
    let convs: [(usize, usize); 7] = [(3, 8), (8, 16), (16, 32), (32, 64), (96, 32), (48, 16), (24, 8)];
    let expected: usize = convs.iter().map(|&(i, o)| o * i * 9 + o).sum::<usize>() + 8 + 1;
    assert_eq!(expected, 60881);
    assert_eq!(w.param_count(), expected);
    assert_eq!(cfg.param_count(), expected);
}

#[test]
fn init_is_seeded() {
    let a = init_weights(&tiny(2, 4, 3, 5)).unwrap();
    let b = init_weights(&tiny(2, 4, 3, 5)).unwrap();
    let c = init_weights(&tiny(2, 4, 3, 6)).unwrap();
    assert_eq!(a.to_flat(), b.to_flat());
    assert_ne!(a.to_flat(), c.to_flat());
    assert!(a.layers.iter().all(|l| l.bias.iter().all(|&b| b == 0.0)));
}

#[test]
fn flat_round_trip_is_lossless() {
    let w = init_weights(&tiny(3, 3, 2, 1)).unwrap();
    let back = Weights::from_flat(w.config, &w.to_flat()).unwrap();
    assert_eq!(back, w);
    assert!(Weights::<f32>::from_flat(w.config, &w.to_flat()[1..]).is_err());
}

#[test]
fn invalid_configs_rejected() {
    assert!(init_weights(&tiny(0, 8, 3, 0)).is_err());
    assert!(init_weights(&tiny(9, 8, 3, 0)).is_err());
    assert!(init_weights(&tiny(2, 0, 3, 0)).is_err());
}

// ---- forward ---------------------------------------------------------------

#[test]
fn zero_input_with_zero_biases_gives_zero() {
    let w = init_weights(&ModelConfig::default()).unwrap();
    let out = forward(&w, &Tensor::<f32>::zeros(3, 256, 256)).unwrap();
    assert_eq!((out.channels, out.height, out.width), (1, 256, 256));
    assert!(out.data.iter().all(|&v| v == 0.0));
}

#[test]
fn full_size_output_shape_and_sign() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let w = init_weights(&ModelConfig::default()).unwrap();
    let x = random_tile(&mut rng, 3, 256, 256).cast::<f32>();
    let out = forward(&w, &x).unwrap();
    assert_eq!((out.height, out.width), (256, 256));
    assert!(out.data.iter().all(|&v| v >= 0.0));
}

#[test]
fn forward_matches_reference_on_8x8() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for (depth, base, in_ch) in [(1, 2, 1), (2, 2, 3), (3, 3, 2), (2, 4, 3)] {
        let w = random_weights(tiny(depth, base, in_ch, rng.random()), &mut rng);
        let x = random_tile(&mut rng, in_ch, 8, 8);
        let want = ref_forward(&w.config, &w.to_flat(), &to_img(&x));

        let got64 = forward(&w, &x).unwrap().data;
        let got32 = forward(&w.cast::<f32>(), &x.cast::<f32>()).unwrap().data;
        let scale = want.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        for i in 0..want.len() {
            assert!((got64[i] - want[i]).abs() <= 1e-12 * scale, "f64 cell {i}");
            assert!((got32[i] as f64 - want[i]).abs() <= 1e-5 * scale, "f32 cell {i}");
        }
    }
}

#[test]
fn non_finite_input_rejected() {
    let w = init_weights(&tiny(1, 2, 1, 0)).unwrap();
    let mut x = Tensor::<f32>::zeros(1, 8, 8);
    x.data[5] = f32::NAN;
    assert!(forward(&w, &x).is_err());
    assert!(forward(&w, &Tensor::<f32>::zeros(1, 7, 8)).is_err());
    assert!(forward(&w, &Tensor::<f32>::zeros(2, 8, 8)).is_err());
}

#[test]
fn spatial_size_is_preserved_for_divisible_tiles() {
    let w = init_weights(&tiny(2, 2, 1, 0)).unwrap();
    for (h, wd) in [(4, 4), (8, 12), (16, 4)] {
        let out = forward(&w, &Tensor::<f32>::zeros(1, h, wd)).unwrap();
        assert_eq!((out.height, out.width), (h, wd));
    }
}

// ---- loss and gradient -----------------------------------------------------

#[test]
fn target_equal_to_output_has_zero_loss_and_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let w = random_weights(tiny(2, 2, 2, 4), &mut rng);
    let x = random_tile(&mut rng, 2, 8, 8);
    let target = forward(&w, &x).unwrap().data;
    let (l, g) = loss_and_gradient(&w, &x, &target).unwrap();
    assert_eq!(l, 0.0);
    assert!(g.iter().all(|&v| v == 0.0));
}

#[test]
fn constant_offset_gives_delta_squared() {
    // every kernel zero: the output is relu(head bias) everywhere
    let cfg = tiny(2, 2, 1, 0);
    let mut w = Weights::<f64>::zeros(cfg).unwrap();
    w.layers.last_mut().unwrap().bias[0] = 4.0;
    let x = Tensor::<f64>::zeros(1, 8, 8);
    for delta in [0.5, -1.25, 3.0] {
        let target = vec![4.0 - delta; 64];
        let (l, _) = loss_and_gradient(&w, &x, &target).unwrap();
        assert_eq!(l, delta * delta);
    }
}

#[test]
fn target_shape_mismatch_rejected() {
    let w = init_weights(&tiny(1, 2, 1, 0)).unwrap();
    let x = Tensor::<f32>::zeros(1, 8, 8);
    assert!(loss_and_gradient(&w, &x, &[0.0; 63]).is_err());
}

#[test]
fn backprop_matches_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst = 0.0f64;
    for trial in 0..6 {
        let depth = 1 + trial % 2;
        let cfg = tiny(depth, 2, 1 + trial % 3, trial as u64);
        let w = random_weights(cfg, &mut rng);
        let x = random_tile(&mut rng, cfg.in_channels, 8, 8);
        let target: Vec<f64> = (0..64).map(|_| rng.random_range(0.0..2.0)).collect();
        let (_, grad) = loss_and_gradient(&w, &x, &target).unwrap();
        let flat = w.to_flat();
        let h = 1e-6;
        for i in 0..flat.len() {
            let mut p = flat.clone();
            p[i] = flat[i] + h;
            let up = loss(&Weights::from_flat(cfg, &p).unwrap(), &x, &target).unwrap();
            p[i] = flat[i] - h;
            let down = loss(&Weights::from_flat(cfg, &p).unwrap(), &x, &target).unwrap();
            let fd = (up - down) / (2.0 * h);
            let denom = grad[i].abs().max(fd.abs()).max(1e-7);
            worst = worst.max((grad[i] - fd).abs() / denom);
        }
    }
    assert!(worst < 1e-4, "max relative error {worst:e}");
}

// ---- training ---------------------------------------------------------------

fn toy_dataset(rng: &mut ChaCha8Rng, n: usize) -> Vec<(Tensor<f32>, Vec<f32>)> {
    (0..n)
        .map(|_| {
            let x = random_tile(rng, 2, 16, 16).cast::<f32>();
            let target = x.plane(0).iter().zip(x.plane(1)).map(|(a, b)| 0.5 * a + b).collect();
            (x, target)
        })
        .collect()
}

#[test]
fn zero_learning_rate_freezes_weights() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let data = toy_dataset(&mut rng, 3);
    let w = init_weights(&tiny(2, 4, 2, 1)).unwrap();
    let cfg = TrainConfig {
        learning_rate: 0.0,
        epochs: 4,
        ..TrainConfig::default()
    };
    let (trained, hist) = train(&w, &data, &cfg).unwrap();
    assert_eq!(trained, w);
    assert!(hist.windows(2).all(|p| p[0] == p[1]));
}

#[test]
fn training_is_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let data = toy_dataset(&mut rng, 4);
    let w = init_weights(&tiny(2, 4, 2, 1)).unwrap();
    let cfg = TrainConfig {
        learning_rate: 0.05,
        epochs: 5,
        batch_size: 2,
        seed: 3,
    };
    let (a, ha) = train(&w, &data, &cfg).unwrap();
    let (b, hb) = train(&w, &data, &cfg).unwrap();
    assert_eq!(ha, hb);
    assert_eq!(a, b);
}

#[test]
fn training_reduces_loss() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let data = toy_dataset(&mut rng, 1);
    let w = init_weights(&tiny(2, 4, 2, 2)).unwrap();
    let cfg = TrainConfig {
        learning_rate: 0.05,
        epochs: 100,
        ..TrainConfig::default()
    };
    let (_, hist) = train(&w, &data, &cfg).unwrap();
    assert!(hist[99] < 0.1 * hist[0], "{} -> {}", hist[0], hist[99]);
}

#[test]
fn divergence_names_epoch() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let data = toy_dataset(&mut rng, 1);
    let w = init_weights(&tiny(1, 4, 2, 2)).unwrap();
    let cfg = TrainConfig {
        learning_rate: 1e12,
        epochs: 50,
        ..TrainConfig::default()
    };
    match train(&w, &data, &cfg) {
        Err(canopy_core::Error::Divergence { epoch, .. }) => assert!(epoch >= 1),
        other => panic!("expected divergence, got {:?}", other.map(|(_, h)| h)),
    }
}

#[test]
fn empty_dataset_rejected() {
    let w = init_weights(&tiny(1, 2, 1, 0)).unwrap();
    assert!(train(&w, &[], &TrainConfig::default()).is_err());
}

// ---- city-scale prediction ---------------------------------------------------

fn channel(w: usize, h: usize, f: impl Fn(usize, usize) -> f32) -> Raster {
    let v = (0..w * h).map(|i| f(i / w, i % w)).collect();
    Raster::new(w, h, 0.0, 0.0, 1.0, -9999.0, v).unwrap()
}

#[test]
fn zero_model_predicts_zero() {
    let cfg = tiny(2, 2, 2, 0);
    let w = Weights::<f32>::zeros(cfg).unwrap();
    let chans = [channel(40, 30, |r, c| (r + c) as f32 / 70.0), channel(40, 30, |_, _| 0.5)];
    let params = NormalizationParams::new(0.0, 50.0).unwrap();
    let out = predict_city(&w, &chans, params, 16).unwrap();
    assert_eq!((out.width(), out.height()), (40, 30));
    assert!(out.values().iter().all(|&v| v == 0.0));
}

#[test]
fn prediction_matches_per_tile_forward() {
    let cfg = tiny(1, 3, 1, 4);
    let w = init_weights(&cfg).unwrap();
    let ch = channel(20, 20, |r, c| ((r * 7 + c * 3) % 11) as f32 / 10.0);
    let params = NormalizationParams::new(0.0, 10.0).unwrap();
    let a = predict_city(&w, std::slice::from_ref(&ch), params, 8).unwrap();
    // same tiles, run one at a time in reverse order
    let (plan, tiles) = canopy_core::tiler::split_sized(std::slice::from_ref(&ch), 8).unwrap();
    let mut outs: Vec<_> = tiles
        .iter()
        .rev()
        .map(|t| (t.row_index, t.col_index, canopy_core::predictor::predict_tile(&w, t).unwrap()))
        .collect();
    outs.reverse();
    let stitched = canopy_core::tiler::stitch(&plan, &outs).unwrap();
    let b = canopy_core::raster::clamp_nonnegative(&canopy_core::raster::denormalize(&stitched, params));
    assert_eq!(a, b);
}

#[test]
fn baseline_masks_and_clamps() {
    let ndsm = channel(10, 10, |r, c| r as f32 - 2.0 + c as f32 * 0.5);
    let fps = [BuildingFootprint::rectangle(1, 2.0, 2.0, 6.0, 5.0).unwrap()];
    let (mask, _) = rasterize(&fps, &ndsm).unwrap();
    let out = baseline_predict(&ndsm, &mask).unwrap();
    for r in 0..10 {
        for c in 0..10 {
            let want = if mask.is_built(r, c) { ndsm.get(r, c).max(0.0) } else { 0.0 };
            assert_eq!(out.get(r, c), want);
        }
    }
    let (empty, _) = rasterize(&[], &ndsm).unwrap();
    assert!(baseline_predict(&ndsm, &empty).unwrap().values().iter().all(|&v| v == 0.0));
}

#[test]
fn overfit_city_beats_baseline() {
    // 32×32 scene: coarse-looking input channel, sharp target buildings
    let truth = channel(32, 32, |r, c| {
        if (4..12).contains(&r) && (4..14).contains(&c) {
            12.0
        } else if (18..28).contains(&r) && (16..26).contains(&c) {
            25.0
        } else {
            0.0
        }
    });
    let blurred = channel(32, 32, |r, c| {
        let (mut s, mut n) = (0.0, 0.0);
        for rr in r.saturating_sub(2)..(r + 3).min(32) {
            for cc in c.saturating_sub(2)..(c + 3).min(32) {
                s += truth.get(rr, cc);
                n += 1.0;
            }
        }
        s / n
    });
    let fps = [
        BuildingFootprint::rectangle(1, 4.0, 4.0, 14.0, 12.0).unwrap(),
        BuildingFootprint::rectangle(2, 16.0, 18.0, 26.0, 28.0).unwrap(),
    ];
    let (mask, _) = rasterize(&fps, &truth).unwrap();
    let (x_norm, params) = minmax_normalize(&blurred, None).unwrap();
    let (y_norm, _) = minmax_normalize(&truth, Some(params)).unwrap();
    let mask_ch = mask.raster.with_values(mask.source_ids.iter().map(|&i| (i != 0) as u8 as f32).collect()).unwrap();
    let chans = [x_norm.clone(), mask_ch.clone()];

    let cfg = tiny(2, 8, 2, 1);
    let tile = Tensor::<f32>::from_planes(&[x_norm.values().to_vec(), mask_ch.values().to_vec()], 32, 32);
    let data = vec![(tile, y_norm.values().to_vec())];
    let tc = TrainConfig {
        learning_rate: 0.05,
        epochs: 300,
        ..TrainConfig::default()
    };
    let (trained, _) = train(&init_weights(&cfg).unwrap(), &data, &tc).unwrap();
    let pred = predict_city(&trained, &chans, params, 32).unwrap();
    let base = baseline_predict(&blurred, &mask).unwrap();
    let rmse = |a: &Raster| {
        (a.values().iter().zip(truth.values()).map(|(p, t)| ((p - t) as f64).powi(2)).sum::<f64>() / 1024.0).sqrt()
    };
    assert!(rmse(&pred) < rmse(&base), "network {} vs baseline {}", rmse(&pred), rmse(&base));
}
