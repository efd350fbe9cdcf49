use std::time::Instant;

use fishseg::sonar::augment::{apply, augment, AugmentConfig, AugmentParams};
use fishseg::sonar::polar::polar_to_raster;
use fishseg::sonar::{load_dataset, polar_to_cartesian, raster_index, write_sample, FanGeometry, MaskImage, PolarFrame, SamplePair, SonarImage};
use fishseg::synth::{generate_corpus, SceneSpec};
use fishseg::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const W: usize = 320;
const H: usize = 128;

fn geom() -> FanGeometry {
    FanGeometry::default()
}

#[test]
fn uniform_frame_fills_the_fan() {
    let frame = PolarFrame::new(64, 48, vec![0.7; 64 * 48]).unwrap();
    let img = polar_to_cartesian(&frame).unwrap();
    let fan = geom().fan_mask();
    for (i, (&v, &inside)) in img.pixels().iter().zip(&fan).enumerate() {
        if inside {
            assert_eq!(v, 1.0, "pixel {i}");
        } else {
            assert_eq!(v, 0.0, "pixel {i}");
        }
    }
}

#[test]
fn single_bright_cell_lands_at_its_analytic_position() {
    let (beams, bins) = (256, 256);
    let g = geom();
    for &(b, r) in &[(128, 200), (40, 180), (220, 200), (10, 250), (250, 170), (128, 150)] {
        let mut data = vec![0.0f32; beams * bins];
        data[b * bins + r] = 1.0;
        let frame = PolarFrame::new(beams, bins, data).unwrap();
        let img = polar_to_raster(&frame, &g).unwrap();
        let (mut best, mut at) = (0.0, (0, 0));
        for x in 0..W {
            for y in 0..H {
                if img.get(x, y) > best {
                    best = img.get(x, y);
                    at = (x, y);
                }
            }
        }
        assert!(best > 0.0, "cell ({b}, {r}) not visible");
        let a = 130f64.to_radians();
        let theta = -a / 2.0 + a * b as f64 / (beams - 1) as f64;
        let rf = r as f64 / (bins - 1) as f64;
        let radius = rf * g.radius_px();
        let (ax, ay) = (W as f64 / 2.0 + radius * theta.sin(), H as f64 - radius * theta.cos());
        let (px, py) = (at.0 as f64 + 0.5, at.1 as f64 + 0.5);
        assert!(
            (px - ax).abs() <= 1.0 && (py - ay).abs() <= 1.0,
            "cell ({b}, {r}): brightest ({px}, {py}), analytic ({ax:.2}, {ay:.2})"
        );
    }
}

#[test]
fn fan_fraction_matches_sector_area() {
    let g = geom();
    let inside = g.fan_mask().iter().filter(|&&f| f).count() as f64 / (W * H) as f64;
    // 130° sector of radius 128 over a 320×128 raster.
    let analytic = 130f64.to_radians() / 2.0 * 128.0 * 128.0 / (320.0 * 128.0);
    assert!((inside / analytic - 1.0).abs() < 0.02, "{inside} vs {analytic}");
}

#[test]
fn out_of_fan_pixels_are_exactly_zero() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let data: Vec<f32> = (0..256 * 256).map(|_| rng.gen_range(0.0..5.0)).collect();
    let img = polar_to_cartesian(&PolarFrame::new(256, 256, data).unwrap()).unwrap();
    for (v, f) in img.pixels().iter().zip(img.fan()) {
        if !f {
            assert_eq!(*v, 0.0);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn projection_ignores_global_scale(seed in any::<u64>(), c in 0.01f32..100.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data: Vec<f32> = (0..32 * 24).map(|_| rng.gen_range(0.0..1.0)).collect();
        let scaled: Vec<f32> = data.iter().map(|v| v * c).collect();
        let a = polar_to_cartesian(&PolarFrame::new(32, 24, data).unwrap()).unwrap();
        let b = polar_to_cartesian(&PolarFrame::new(32, 24, scaled).unwrap()).unwrap();
        for (x, y) in a.pixels().iter().zip(b.pixels()) {
            prop_assert!((x - y).abs() < 1e-5);
        }
    }

    #[test]
    fn augmentation_keeps_value_ranges(seed in any::<u64>()) {
        let sample = blob_sample(&mut ChaCha8Rng::seed_from_u64(seed), 6);
        let out = augment(&sample, &AugmentConfig { probability: 0.9, ..AugmentConfig::default() }, &mut ChaCha8Rng::seed_from_u64(seed ^ 1));
        prop_assert!(out.image.pixels().iter().all(|&v| (0.0..=1.0).contains(&v)));
        prop_assert!(out.mask.pixels().iter().all(|&m| m <= 1));
        for (m, f) in out.mask.pixels().iter().zip(out.image.fan()) {
            prop_assert!(*m == 0 || *f);
        }
    }

    #[test]
    fn image_and_mask_move_together(seed in any::<u64>()) {
        let sample = blob_sample(&mut ChaCha8Rng::seed_from_u64(seed), 6);
        let out = augment(&sample, &AugmentConfig { probability: 1.0, ..AugmentConfig::default() }, &mut ChaCha8Rng::seed_from_u64(seed ^ 7));
        let rethresholded = threshold_mask(&out.image);
        if out.mask.count() + rethresholded.count() > 0 {
            prop_assert!(out.mask.iou(&rethresholded).unwrap() > 0.9);
        }
    }
}

fn threshold_mask(img: &SonarImage) -> MaskImage {
    let px = img.pixels().iter().map(|&v| u8::from(v > 0.5)).collect();
    MaskImage::from_raw(img.width(), img.height(), px).unwrap()
}

/// Bright disks well inside the fan; mask is the thresholded image.
fn blob_sample(rng: &mut ChaCha8Rng, blobs: usize) -> SamplePair {
    let g = geom();
    let fan = g.fan_mask();
    let mut px = vec![0.0f32; W * H];
    for _ in 0..blobs {
        let r = rng.gen_range(0.35..0.8);
        let th = rng.gen_range(-0.8..0.8);
        let (cx, cy) = g.point_of(r, th);
        let rad = rng.gen_range(3.0..6.0);
        for x in 0..W {
            for y in 0..H {
                let (dx, dy) = (x as f64 + 0.5 - cx, y as f64 + 0.5 - cy);
                if dx * dx + dy * dy <= rad * rad {
                    px[raster_index(H, x, y)] = 1.0;
                }
            }
        }
    }
    let image = SonarImage::new(W, H, px, fan).unwrap();
    let mask = threshold_mask(&image);
    SamplePair::new("blob", image, mask).unwrap()
}

fn centered_blob() -> SamplePair {
    let fan = geom().fan_mask();
    let mut px = vec![0.0f32; W * H];
    let (cx, cy) = (W as f64 / 2.0, H as f64 / 2.0);
    for x in 0..W {
        for y in 0..H {
            let (dx, dy) = (x as f64 + 0.5 - cx, y as f64 + 0.5 - cy);
            if dx * dx + dy * dy <= 16.0 {
                px[raster_index(H, x, y)] = 1.0;
            }
        }
    }
    let image = SonarImage::new(W, H, px, fan).unwrap();
    let mask = threshold_mask(&image);
    SamplePair::new("blob", image, mask).unwrap()
}

#[test]
fn rotation_preserves_blob_mass() {
    let sample = centered_blob();
    let n0 = sample.mask.count() as f64;
    assert!((45.0..=55.0).contains(&n0), "blob has {n0} pixels");
    for deg in [-20.0, -13.0, -5.5, 3.0, 11.0, 20.0] {
        let p = AugmentParams {
            rotation_deg: Some(deg),
            ..AugmentParams::identity()
        };
        let n = apply(&sample, &p).mask.count() as f64;
        assert!((n / n0 - 1.0).abs() <= 0.15, "rotation {deg}: {n} vs {n0}");
    }
}

#[test]
fn disabled_augmentation_is_identity_and_hflip_is_an_involution() {
    let sample = blob_sample(&mut ChaCha8Rng::seed_from_u64(2), 4);
    let off = AugmentConfig {
        probability: 0.0,
        ..AugmentConfig::default()
    };
    assert_eq!(augment(&sample, &off, &mut ChaCha8Rng::seed_from_u64(0)), sample);
    let p = AugmentParams {
        hflip: true,
        ..AugmentParams::identity()
    };
    assert_eq!(apply(&apply(&sample, &p), &p), sample);
}

#[test]
fn dataset_round_trip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let spec = SceneSpec::herring(5);
    let samples = fishseg::synth::generate_samples(&spec, 3).unwrap();
    for s in &samples {
        write_sample(s, dir.path()).unwrap();
    }
    let loaded = load_dataset(dir.path()).unwrap();
    assert_eq!(loaded.len(), 3);
    for (a, b) in samples.iter().zip(&loaded) {
        assert_eq!(a.id, b.id);
        assert_eq!(a.image.pixels(), b.image.pixels());
        assert_eq!(a.image.fan(), b.image.fan());
        assert_eq!(a.mask, b.mask);
    }
}

#[test]
fn missing_mask_names_the_sample() {
    let dir = tempfile::tempdir().unwrap();
    for s in fishseg::synth::generate_samples(&SceneSpec::herring(1), 2).unwrap() {
        write_sample(&s, dir.path()).unwrap();
    }
    std::fs::remove_file(dir.path().join("masks/scene_0001.pgm")).unwrap();
    match load_dataset(dir.path()) {
        Err(Error::MissingMask(id)) => assert_eq!(id, "scene_0001"),
        other => panic!("expected missing mask, got {other:?}"),
    }
}

#[test]
fn fifty_sample_corpus_loads_quickly() {
    let dir = tempfile::tempdir().unwrap();
    generate_corpus(&SceneSpec::herring(3), 50, dir.path()).unwrap();
    let t0 = Instant::now();
    let data = load_dataset(dir.path()).unwrap();
    let dt = t0.elapsed().as_secs_f64();
    assert_eq!(data.len(), 50);
    assert!(dt < 1.0, "load took {dt:.3} s");
}
