use cvcp::camgeo::CameraRig;
use cvcp::cvt::{self, attend, encode_image, CameraGeometry};
use cvcp::harness::synth::{generate_scene, scene_seed};
use cvcp::harness::scene::SceneRecord;
use cvcp::head::fuse;
use cvcp::pillars::{lidar_bev_upscale, pillar_bev, pillarize, PillarBuffer, PointCloud, POINT_FEATURES};
use cvcp::pipeline::{forward, init_params, SceneInputs};
use cvcp::Config;
use cvcp_numerics::{ParamStore, Scalar, Tape, Tensor};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn scene(cfg: &Config, i: u64) -> SceneRecord {
    generate_scene("t", scene_seed(11, i), cfg).unwrap()
}

fn zero_biases<T: Scalar>(p: &mut ParamStore<T>) {
    let names: Vec<String> = p.names().to_vec();
    for n in names {
        if n.ends_with(".b") || n.ends_with(".beta") {
            p.get_mut(&n).unwrap().data_mut().iter_mut().for_each(|v| *v = T::zero());
        }
    }
}

fn random_tensor<T: Scalar>(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<T> {
    Tensor::from_fn(shape.to_vec(), |_| T::lit(rng.random_range(-1.0..1.0)))
}

#[test]
fn encoder_shapes_and_zero_image() {
    let cfg = Config::default();
    let mut params = init_params(&cfg.model, 0).unwrap();
    zero_biases(&mut params);
    let tape = Tape::<f32>::inference();
    let p = params.bind(&tape, |_| false).unwrap();
    let img = tape.constant(Tensor::zeros([3, 64, 48])).unwrap();
    let f = encode_image(&tape, &p, img, &cfg.model).unwrap();
    assert_eq!(tape.shape(f.taps[0]), vec![32, 16, 12]);
    assert_eq!(tape.shape(f.taps[1]), vec![32, 8, 6]);
    assert!(tape.value(f.taps[0]).data().iter().all(|&v| v == 0.0));
    assert!(tape.value(f.taps[1]).data().iter().all(|&v| v == 0.0));
    let bad = tape.constant(Tensor::zeros([3, 40, 48])).unwrap();
    assert_eq!(encode_image(&tape, &p, bad, &cfg.model).err().unwrap().category(), "config");
}

#[test]
fn encoder_is_shift_equivariant_at_stride_four() {
    let cfg = Config::default();
    let params = init_params(&cfg.model, 1).unwrap().cast::<f64>();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (h, w) = (64, 48);
    let img: Tensor<f64> = random_tensor(&[3, h, w], &mut rng);
    let shifted = Tensor::from_fn([3, h, w], |i| {
        let (c, r) = (i % w, i / w);
        if c >= 4 { img.data()[r * w + c - 4] } else { 0.3 }
    });
    let tape = Tape::<f64>::inference();
    let p = params.bind(&tape, |_| false).unwrap();
    let a = encode_image(&tape, &p, tape.constant(img).unwrap(), &cfg.model).unwrap();
    let b = encode_image(&tape, &p, tape.constant(shifted).unwrap(), &cfg.model).unwrap();
    let (fa, fb) = (tape.value(a.taps[0]), tape.value(b.taps[0]));
    let s = fa.shape().to_vec();
    // Receptive field spans two cells either side; compare away from both borders.
    for ch in 0..s[0] {
        for r in 2..s[1] - 2 {
            for c in 3..s[2] - 3 {
                let (va, vb) = (fa.at(&[ch, r, c]), fb.at(&[ch, r, c + 1]));
                assert!((va - vb).abs() < 1e-5, "ch {ch} r {r} c {c}: {va} vs {vb}");
            }
        }
    }
}

#[test]
fn single_key_and_identical_keys() {
    let tape = Tape::<f64>::inference();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let q = tape.constant(random_tensor(&[5, 4], &mut rng)).unwrap();
    let k1 = tape.constant(random_tensor(&[1, 4], &mut rng)).unwrap();
    let v1t: Tensor<f64> = random_tensor(&[1, 4], &mut rng);
    let v1 = tape.constant(v1t.clone()).unwrap();
    let (a, out) = attend(&tape, q, k1, v1).unwrap();
    assert!(tape.value(a).data().iter().all(|&x| x == 1.0));
    for r in 0..5 {
        for c in 0..4 {
            assert!((tape.value(out).at(&[r, c]) - v1t.data()[c]).abs() < 1e-15);
        }
    }
    let key = random_tensor::<f64>(&[1, 4], &mut rng);
    let keys = Tensor::from_fn([6, 4], |i| key.data()[i % 4]);
    let vt: Tensor<f64> = random_tensor(&[6, 4], &mut rng);
    let (_, out) = attend(&tape, q, tape.constant(keys).unwrap(), tape.constant(vt.clone()).unwrap()).unwrap();
    for c in 0..4 {
        let mean = (0..6).map(|r| vt.at(&[r, c])).sum::<f64>() / 6.0;
        for r in 0..5 {
            assert!((tape.value(out).at(&[r, c]) - mean).abs() < 1e-12);
        }
    }
}

#[test]
fn attention_rows_sum_to_one() {
    let tape = Tape::<f32>::inference();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let q = tape.constant(random_tensor(&[16, 8], &mut rng).map(|v: f32| 4.0 * v)).unwrap();
    let k = tape.constant(random_tensor(&[40, 8], &mut rng).map(|v: f32| 4.0 * v)).unwrap();
    let v = tape.constant(random_tensor(&[40, 8], &mut rng)).unwrap();
    let (a, _) = attend(&tape, q, k, v).unwrap();
    let a = tape.value(a);
    for r in 0..16 {
        let s: f32 = (0..40).map(|c| a.at(&[r, c])).sum();
        assert!((s - 1.0).abs() < 1e-6, "row {r} sums to {s}");
    }
}

#[test]
fn camera_branch_ignores_camera_order() {
    let mut cfg = Config::default();
    cfg.model.num_cameras = 3;
    let s = scene(&cfg, 0);
    let params = init_params(&cfg.model, 4).unwrap().cast::<f64>();
    let run = |rig: &CameraRig, images: &[Tensor<f64>]| {
        let geo = CameraGeometry::<f64>::new(rig, &cfg.model).unwrap();
        let tape = Tape::<f64>::inference();
        let p = params.bind(&tape, |_| false).unwrap();
        let v = cvt::camera_bev(&tape, &p, images, &geo, &cfg.model).unwrap();
        tape.snapshot(v)
    };
    let images: Vec<Tensor<f64>> = s.images.iter().map(Tensor::cast).collect();
    let base = run(&s.rig, &images);
    assert_eq!(base.shape(), [32, 64, 64]);
    let order = [2, 0, 1];
    let rig = CameraRig { cameras: order.iter().map(|&i| s.rig.cameras[i]).collect() };
    let imgs: Vec<Tensor<f64>> = order.iter().map(|&i| images[i].clone()).collect();
    let perm = run(&rig, &imgs);
    assert!(base.max_abs_diff(&perm) < 1e-6);
}

#[test]
fn decoder_zero_embedding_gives_zero_map() {
    let cfg = Config::default();
    let mut params = init_params(&cfg.model, 0).unwrap();
    zero_biases(&mut params);
    let tape = Tape::<f32>::inference();
    let p = params.bind(&tape, |_| false).unwrap();
    let x = tape.constant(Tensor::zeros([16 * 16, 32])).unwrap();
    let m = cvt::decode_bev(&tape, &p, x, &cfg.model).unwrap();
    assert_eq!(tape.shape(m), vec![32, 64, 64]);
    assert!(tape.value(m).data().iter().all(|&v| v == 0.0));
}

#[test]
fn rig_mismatch_is_reported() {
    let cfg = Config::default();
    let rig = CameraRig::ring(3, 48, 64, 16.0).unwrap();
    assert_eq!(CameraGeometry::<f32>::new(&rig, &cfg.model).err().unwrap().category(), "config");
}

fn lidar_out(params: &ParamStore, buf: &PillarBuffer, cfg: &Config) -> (Tensor<f32>, Tensor<f32>) {
    let tape = Tape::<f32>::inference();
    let p = params.bind(&tape, |_| false).unwrap();
    let raw = pillar_bev(&tape, &p, buf, &cfg.model.grid, cfg.model.pillar_channels).unwrap();
    let up = lidar_bev_upscale(&tape, &p, raw).unwrap();
    (tape.snapshot(raw), tape.snapshot(up))
}

#[test]
fn pillar_point_order_does_not_matter() {
    let cfg = Config::default();
    let s = scene(&cfg, 1);
    let params = init_params(&cfg.model, 2).unwrap();
    let buf = pillarize(&s.cloud, &cfg.model.grid, (cfg.model.z_min, cfg.model.z_max), cfg.model.max_points_per_pillar);
    let (_, base) = lidar_out(&params, &buf, &cfg);
    assert_eq!(base.shape(), [32, 64, 64]);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let n = buf.max_points;
    for _ in 0..100 {
        let mut b = buf.clone();
        for (pi, &count) in buf.counts.iter().enumerate() {
            let mut order: Vec<usize> = (0..count).collect();
            order.shuffle(&mut rng);
            for (dst, &src) in order.iter().enumerate() {
                let (o, i) = ((pi * n + dst) * POINT_FEATURES, (pi * n + src) * POINT_FEATURES);
                b.features[o..o + POINT_FEATURES].copy_from_slice(&buf.features[i..i + POINT_FEATURES]);
            }
        }
        let (_, out) = lidar_out(&params, &b, &cfg);
        assert!(base.max_abs_diff(&out) <= 1e-6);
    }
}

#[test]
fn pillar_net_pooling_examples() {
    let cfg = Config::default();
    let params = init_params(&cfg.model, 3).unwrap();
    let g = cfg.model.grid;
    let pt = [3.25f32, -7.5, 0.5, 0.8];
    let one = pillarize(&PointCloud { points: vec![pt] }, &g, (-3.0, 3.0), 32);
    let tape = Tape::<f32>::inference();
    let p = params.bind(&tape, |_| false).unwrap();
    let feats = tape.constant(one.tensor()).unwrap();
    let pooled = cvcp::pillars::pillar_feature_net(&tape, &p, feats, &one.counts).unwrap();
    let single = tape.constant(Tensor::new([1, POINT_FEATURES], one.point(0, 0).to_vec()).unwrap()).unwrap();
    let direct = tape.relu(cvcp::layers::linear(&tape, &p, "lidar.pfn", single).unwrap()).unwrap();
    assert_eq!(tape.value(pooled).data(), tape.value(direct).data());

    // A duplicated decorated row leaves the max-pool unchanged.
    let two = pillarize(&PointCloud { points: vec![pt, [3.75, -7.25, 1.0, 0.2]] }, &g, (-3.0, 3.0), 32);
    let mut dup = two.clone();
    let n = POINT_FEATURES;
    let second = dup.features[n..2 * n].to_vec();
    dup.features[2 * n..3 * n].copy_from_slice(&second);
    dup.counts[0] = 3;
    assert_eq!(lidar_out(&params, &two, &cfg).0.data(), lidar_out(&params, &dup, &cfg).0.data());
    // Same through pillarize when the duplicate sits at the pillar mean.
    let sym = vec![pt, [3.75, -7.25, 1.0, 0.2], [3.5, -7.375, 0.75, 0.5]];
    let mut sym_dup = sym.clone();
    sym_dup.push(sym[2]);
    let (c, _) = lidar_out(&params, &pillarize(&PointCloud { points: sym }, &g, (-3.0, 3.0), 32), &cfg);
    let (d, _) = lidar_out(&params, &pillarize(&PointCloud { points: sym_dup }, &g, (-3.0, 3.0), 32), &cfg);
    assert_eq!(c.data(), d.data());
}

#[test]
fn scatter_examples() {
    let cfg = Config::default();
    let params = init_params(&cfg.model, 3).unwrap();
    let g = cfg.model.grid;
    let (empty, _) = lidar_out(&params, &pillarize(&PointCloud::default(), &g, (-3.0, 3.0), 32), &cfg);
    assert!(empty.data().iter().all(|&v| v == 0.0));
    // Cell (row 3, col 7).
    let (x, y) = g.cell_center(3, 7);
    let cloud = PointCloud { points: vec![[x as f32 + 0.125, y as f32 - 0.25, 0.5, 0.9]] };
    let buf = pillarize(&cloud, &g, (-3.0, 3.0), 32);
    let (map, _) = lidar_out(&params, &buf, &cfg);
    let (h, w) = (g.rows(), g.cols());
    for ch in 0..32 {
        for r in 0..h {
            for c in 0..w {
                if (r, c) != (3, 7) {
                    assert_eq!(map.at(&[ch, r, c]), 0.0);
                }
            }
        }
    }
    let tape = Tape::<f32>::inference();
    let p = params.bind(&tape, |_| false).unwrap();
    let feats = cvcp::pillars::pillar_feature_net(&tape, &p, tape.constant(buf.tensor()).unwrap(), &buf.counts).unwrap();
    let total: f32 = tape.value(feats).data().iter().sum();
    assert!((map.sum() - total).abs() < 1e-5);
}

#[test]
fn upscale_zero_input_is_zero() {
    let cfg = Config::default();
    let mut params = init_params(&cfg.model, 0).unwrap();
    zero_biases(&mut params);
    let tape = Tape::<f32>::inference();
    let p = params.bind(&tape, |_| false).unwrap();
    let x = tape.constant(Tensor::zeros([32, 64, 64])).unwrap();
    let y = lidar_bev_upscale(&tape, &p, x).unwrap();
    assert_eq!(tape.shape(y), vec![32, 64, 64]);
    assert!(tape.value(y).data().iter().all(|&v| v == 0.0));
}

#[test]
fn pillar_map_shifts_with_the_cloud() {
    let cfg = Config::default();
    let mut params = init_params(&cfg.model, 6).unwrap();
    // Absolute x/y inputs are the only position-dependent features.
    let w = params.get_mut("lidar.pfn.w").unwrap();
    let cols = w.shape()[1];
    w.data_mut()[..2 * cols].iter_mut().for_each(|v| *v = 0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let k = 3usize;
    // Dyadic coordinates keep every decoration exact under the shift.
    let points: Vec<[f32; 4]> = (0..400)
        .map(|_| {
            let x = rng.random_range(-256..(32 - k as i32) * 8) as f32 / 8.0;
            let y = rng.random_range(-256..256) as f32 / 8.0;
            let z = rng.random_range(-16..16) as f32 / 8.0;
            [x, y, z, rng.random_range(0..8) as f32 / 8.0]
        })
        .collect();
    let moved: Vec<[f32; 4]> = points.iter().map(|p| [p[0] + k as f32, p[1], p[2], p[3]]).collect();
    let g = cfg.model.grid;
    let (a, _) = lidar_out(&params, &pillarize(&PointCloud { points }, &g, (-3.0, 3.0), 32), &cfg);
    let (b, _) = lidar_out(&params, &pillarize(&PointCloud { points: moved }, &g, (-3.0, 3.0), 32), &cfg);
    for ch in 0..32 {
        for r in 0..64 {
            for c in 0..64 - k {
                assert_eq!(a.at(&[ch, r, c]), b.at(&[ch, r, c + k]), "ch {ch} row {r} col {c}");
            }
        }
    }
}

#[test]
fn out_of_grid_points_change_nothing() {
    let cfg = Config::default();
    let s = scene(&cfg, 2);
    let params = init_params(&cfg.model, 2).unwrap();
    let mut extra = s.clone();
    extra.cloud.points.insert(7, [40.0, 0.0, 0.5, 0.5]);
    extra.cloud.points.push([0.0, -33.0, 0.5, 0.5]);
    extra.cloud.points.push([1.0, 1.0, 5.0, 0.5]);
    let heads = |sc: &SceneRecord| {
        let inputs = SceneInputs::<f32>::new(sc, &cfg.model).unwrap();
        let tape = Tape::<f32>::inference();
        let p = params.bind(&tape, |_| false).unwrap();
        let f = forward(&tape, &p, &inputs, &cfg.model, None).unwrap();
        (tape.snapshot(f.heat), tape.snapshot(f.reg))
    };
    let (h0, r0) = heads(&s);
    let (h1, r1) = heads(&extra);
    assert_eq!(h0.data(), h1.data());
    assert_eq!(r0.data(), r1.data());
}

#[test]
fn fusion_examples() {
    let cfg = Config::default();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let cam_t: Tensor<f64> = random_tensor(&[32, 64, 64], &mut rng);
    let lid_t: Tensor<f64> = random_tensor(&[32, 64, 64], &mut rng);
    let lid2: Tensor<f64> = random_tensor(&[32, 64, 64], &mut rng);

    // LiDAR input columns of the fusion kernel zeroed: output ignores the LiDAR map.
    let mut params = init_params(&cfg.model, 0).unwrap().cast::<f64>();
    let wt = params.get_mut("fuse.w").unwrap();
    let s = wt.shape().to_vec();
    for o in 0..s[0] {
        for i in 32..s[1] {
            for k in 0..9 {
                wt.data_mut()[(o * s[1] + i) * 9 + k] = 0.0;
            }
        }
    }
    let run = |params: &ParamStore<f64>, lid: &Tensor<f64>| {
        let tape = Tape::<f64>::inference();
        let p = params.bind(&tape, |_| false).unwrap();
        let c = tape.constant(cam_t.clone()).unwrap();
        let l = tape.constant(lid.clone()).unwrap();
        let f = fuse(&tape, &p, c, Some(l), false).unwrap();
        tape.snapshot(f)
    };
    assert_eq!(run(&params, &lid_t).data(), run(&params, &lid2).data());

    let mut cam_cfg = cfg.model.clone();
    cam_cfg.camera_only = true;
    let cam_params = init_params(&cam_cfg, 0).unwrap().cast::<f64>();
    let tape = Tape::<f64>::inference();
    let p = cam_params.bind(&tape, |_| false).unwrap();
    let c = tape.constant(cam_t.clone()).unwrap();
    let l = tape.constant(lid_t.clone()).unwrap();
    let with = fuse(&tape, &p, c, Some(l), true).unwrap();
    let without = fuse(&tape, &p, c, None, true).unwrap();
    assert_eq!(tape.value(with).data(), tape.value(without).data());

    let params = init_params(&cfg.model, 0).unwrap().cast::<f64>();
    let tape = Tape::<f64>::new();
    let p = params.bind(&tape, |_| false).unwrap();
    let c = tape.leaf(cam_t.clone(), true).unwrap();
    let l = tape.leaf(lid_t.clone(), true).unwrap();
    let f = fuse(&tape, &p, c, Some(l), false).unwrap();
    let seed: Tensor<f64> = random_tensor(&tape.shape(f), &mut rng);
    let grads = tape.backward_with_seed(f, seed).unwrap();
    assert!(grads.get(c).unwrap().data().iter().any(|&g| g != 0.0));
    assert!(grads.get(l).unwrap().data().iter().any(|&g| g != 0.0));

    let tape = Tape::<f64>::inference();
    let p = params.bind(&tape, |_| false).unwrap();
    let c = tape.constant(cam_t).unwrap();
    let small = tape.constant(Tensor::zeros([32, 32, 32])).unwrap();
    assert_eq!(fuse(&tape, &p, c, Some(small), false).err().unwrap().category(), "config");
}
