use std::fs;
use std::path::Path;
use std::time::Instant;

use fishseg::par;
use fishseg::synth::{generate_corpus, generate_sample, generate_scene, generate_scenes, regenerate_corpus, scene_rng, Fish, SceneSpec};
use proptest::prelude::*;

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    for sub in ["images", "masks"] {
        let mut names: Vec<_> = fs::read_dir(dir.join(sub)).unwrap().map(|e| e.unwrap().path()).collect();
        names.sort();
        for p in names {
            out.push((format!("{sub}/{}", p.file_name().unwrap().to_string_lossy()), fs::read(&p).unwrap()));
        }
    }
    out.push(("manifest".into(), fs::read(dir.join("manifest.txt")).unwrap()));
    out
}

#[test]
fn empty_spec_gives_empty_scene() {
    let spec = SceneSpec::empty(1);
    let (sample, scene) = generate_sample(&spec, 0).unwrap();
    assert_eq!(sample.mask.count(), 0);
    assert!(scene.frame.intensities().iter().all(|&v| v.abs() < 1e-9));
    assert!(sample.image.pixels().iter().all(|&v| v < 1e-6));
}

#[test]
fn single_fish_lands_where_commanded() {
    for &(x, y, h, w) in &[(160.0, 60.0, 3.0, 5.0), (110.0, 80.0, 3.0, 5.0), (215.0, 70.0, 4.0, 8.0), (150.0, 30.0, 3.0, 6.0)] {
        let spec = SceneSpec {
            fixed_fish: vec![Fish {
                x,
                y,
                height: h,
                width: w,
                brightness: 1.0,
            }],
            ..SceneSpec::empty(0)
        };
        let (sample, _) = generate_sample(&spec, 0).unwrap();
        let n = sample.mask.count();
        assert!((6..=32).contains(&n), "fish at ({x}, {y}) covers {n} pixels");
        let (mut sx, mut sy) = (0.0, 0.0);
        for px in 0..sample.mask.width() {
            for py in 0..sample.mask.height() {
                if sample.mask.get(px, py) == 1 {
                    sx += px as f64 + 0.5;
                    sy += py as f64 + 0.5;
                }
            }
        }
        let (cx, cy) = (sx / n as f64, sy / n as f64);
        assert!(((cx - x).powi(2) + (cy - y).powi(2)).sqrt() <= 2.0, "centroid ({cx}, {cy}) vs ({x}, {y})");
    }
}

#[test]
fn generation_is_deterministic_across_thread_counts() {
    let spec = SceneSpec::herring(11);
    let a = generate_scenes(&spec, 4).unwrap();
    let b = par::with_threads(Some(1), || generate_scenes(&spec, 4).unwrap());
    assert_eq!(a, b);
    let direct = generate_scene(&spec, &mut scene_rng(11, 2)).unwrap();
    assert_eq!(direct, a[2].1);
}

#[test]
fn standard_corpus_has_over_five_thousand_fish() {
    let scenes = generate_scenes(&SceneSpec::herring(7), 50).unwrap();
    let fish: usize = scenes.iter().map(|(_, s)| s.layout.fish.len()).sum();
    assert!(fish >= 5000, "{fish} fish");
}

#[test]
fn clutter_only_scenes_have_empty_masks() {
    for (sample, scene) in generate_scenes(&SceneSpec::clutter_only(3), 6).unwrap() {
        assert!(scene.layout.has_surface && scene.layout.has_bottom && scene.layout.has_vessel);
        assert_eq!(sample.mask.count(), 0);
        assert!(sample.image.pixels().iter().any(|&v| v > 0.5));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    /// Labels sit on fish and inside the fan; clutter is never labelled.
    #[test]
    fn labels_only_cover_fish(seed in any::<u64>()) {
        let (sample, scene) = generate_sample(&SceneSpec::herring(seed), 0).unwrap();
        let fan = sample.image.fan();
        for px in 0..sample.mask.width() {
            for py in 0..sample.mask.height() {
                if sample.mask.get(px, py) == 0 {
                    continue;
                }
                prop_assert!(fan[px * sample.mask.height() + py]);
                let (x, y) = (px as f64 + 0.5, py as f64 + 0.5);
                let near = scene.layout.fish.iter().any(|f| {
                    let reach = f.height.max(f.width) / 2.0 + 1.5;
                    (f.x - x).powi(2) + (f.y - y).powi(2) <= reach * reach
                });
                prop_assert!(near, "pixel ({}, {}) labelled away from every fish", px, py);
            }
        }
    }

    #[test]
    fn fish_are_brighter_than_background(seed in any::<u64>()) {
        let (sample, _) = generate_sample(&SceneSpec::herring(seed), 0).unwrap();
        let (mut fish, mut nf, mut bg, mut nb) = (0.0, 0usize, 0.0, 0usize);
        for ((&v, &m), &f) in sample.image.pixels().iter().zip(sample.mask.pixels()).zip(sample.image.fan()) {
            if m == 1 {
                fish += v as f64;
                nf += 1;
            } else if f {
                bg += v as f64;
                nb += 1;
            }
        }
        let ratio = (fish / nf as f64) / (bg / nb as f64);
        prop_assert!(ratio >= 2.0, "contrast {}", ratio);
    }
}

#[test]
fn corpus_regenerates_from_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let summary = generate_corpus(&SceneSpec::herring(7), 5, &a).unwrap();
    assert_eq!(summary.scenes, 5);
    assert_eq!(regenerate_corpus(&a.join("manifest.txt"), &b).unwrap(), summary);
    let fa = files(&a);
    assert_eq!(fa.len(), 11);
    assert_eq!(fa, files(&b));
}

#[test]
fn thousand_scenes_within_a_minute() {
    let t0 = Instant::now();
    let samples = fishseg::synth::generate_samples(&SceneSpec::herring(1), 1000).unwrap();
    let dt = t0.elapsed().as_secs_f64();
    assert_eq!(samples.len(), 1000);
    assert!(dt < 60.0, "took {dt:.1} s");
}
