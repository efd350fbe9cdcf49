use byteorder::{BigEndian, LittleEndian};
use fishseg::bench::{benchmark, BenchTarget, Threads};
use fishseg::quant::{quantize_values, dequantize_values, quantized_forward, InferenceModel, QuantMode, QuantParams, QuantizedModel};
use fishseg::scalar::DType;
use fishseg::weights::ModelWeights;
use fishseg::{ModelConfig, SegmentationModel, Tensor};
use fishseg::sonar::SonarImage;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small_config() -> ModelConfig {
    ModelConfig {
        height: 64,
        width: 32,
        base_channels: 4,
        ..ModelConfig::default()
    }
}

fn image(w: usize, h: usize, seed: u64) -> SonarImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let px = (0..w * h).map(|_| rng.gen_range(0.0..1.0)).collect();
    SonarImage::new(w, h, px, vec![true; w * h]).unwrap()
}

fn check_bound(values: &[f64]) {
    let (p, codes) = quantize_values(values).unwrap();
    let back = dequantize_values(p, &codes);
    let half = p.scale as f64 / 2.0;
    for (v, b) in values.iter().zip(&back) {
        assert!((v - b).abs() <= half + 1e-12, "{v} -> {b}, scale {}", p.scale);
    }
}

proptest! {
    #[test]
    fn round_trip_error_is_at_most_half_a_step(
        values in prop::collection::vec(-50.0f64..50.0, 1..300),
        shift in -100.0f64..100.0,
    ) {
        let shifted: Vec<f64> = values.iter().map(|v| v + shift).collect();
        let (p, codes) = quantize_values(&shifted).unwrap();
        let back = dequantize_values(p, &codes);
        for (v, b) in shifted.iter().zip(&back) {
            prop_assert!((v - b).abs() <= p.scale as f64 / 2.0 + 1e-12);
        }
        // Zero is always representable exactly.
        prop_assert_eq!(p.dequantize(p.quantize(0.0)), 0.0);
    }
}

#[test]
fn every_folded_tensor_respects_the_bound() {
    let mut model = SegmentationModel::<f64>::with_seed(ModelConfig::default(), 3).unwrap();
    // Non-trivial running statistics for the fold.
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for (name, t) in model.params_mut() {
        if name.ends_with("gamma") || name.ends_with("beta") {
            for v in t.data_mut() {
                *v += rng.gen_range(-0.3..0.3);
            }
        }
    }
    let inf = InferenceModel::<f64>::from_model(&model);
    assert_eq!(inf.tensors().len(), InferenceModel::<f64>::layer_names().len());
    for (_, t) in inf.tensors() {
        check_bound(t.data());
    }
}

#[test]
fn grid_weights_survive_quantization_exactly() {
    let model = SegmentationModel::<f64>::with_seed(small_config(), 4).unwrap();
    let shapes = InferenceModel::<f64>::from_model(&model);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let step = 2f64.powi(-7);
    let tensors: Vec<(String, Tensor<f32>)> = shapes
        .tensors()
        .iter()
        .map(|(name, t)| {
            let n = t.numel();
            let data: Vec<f32> = if n == 1 {
                vec![0.0]
            } else {
                let mut d: Vec<f32> = (0..n).map(|_| (rng.gen_range(-128i32..=127) as f64 * step) as f32).collect();
                d[0] = (-128.0 * step) as f32;
                d[1] = (127.0 * step) as f32;
                d
            };
            (name.clone(), Tensor::from_vec(t.shape().to_vec(), data).unwrap())
        })
        .collect();
    let float = InferenceModel::from_tensors(tensors).unwrap();
    let q = QuantizedModel::from_inference(&float, QuantMode::Int8).unwrap();
    for r in q.records() {
        assert_eq!(r.payload.dtype(), DType::Q8);
    }
    let img = image(64, 32, 9);
    let a = float.predict_image(&img).unwrap();
    let b = quantized_forward(&q, &img).unwrap();
    assert_eq!(a.data(), b.data());
}

#[test]
fn fit_reports_degenerate_input() {
    assert!(QuantParams::fit(&[]).is_err());
    assert!(QuantParams::fit(&[1.0, f64::NAN]).is_err());
    assert!(QuantParams::fit(&[f64::INFINITY]).is_err());
    let p = QuantParams::fit(&[-1.0, 0.0, 1.0]).unwrap();
    assert_eq!(p.zero_point, 128);
}

#[test]
fn byte_order_round_trip() {
    let model = SegmentationModel::<f32>::with_seed(small_config(), 5).unwrap();
    let q = QuantizedModel::from_model(&model, QuantMode::Int8).unwrap();
    let be = q.to_bytes_with::<BigEndian>();
    let le = q.to_bytes_with::<LittleEndian>();
    assert_eq!(be.len(), le.len());
    assert_ne!(be, le);
    let back = QuantizedModel::from_bytes_with::<BigEndian>(&be).unwrap();
    assert_eq!(back.to_bytes(), le);
    assert!(QuantizedModel::from_bytes(&be).is_err());
}

#[test]
fn compact_model_shape_and_range() {
    let model = SegmentationModel::<f32>::with_seed(small_config(), 6).unwrap();
    for mode in [QuantMode::Int8, QuantMode::Float16] {
        let q = QuantizedModel::from_model(&model, mode).unwrap();
        assert_eq!(q.mode(), mode);
        let p = quantized_forward(&q, &image(64, 32, 1)).unwrap();
        assert_eq!(p.shape(), &[1, 64, 32]);
        assert!(p.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        // The runtime accepts any raster divisible by 16.
        assert_eq!(quantized_forward(&q, &image(32, 48, 2)).unwrap().shape(), &[1, 32, 48]);
        assert!(quantized_forward(&q, &image(40, 32, 2)).is_err());
    }
}

#[test]
fn full_model_file_shrinks_sevenfold() {
    let model = SegmentationModel::<f64>::with_seed(ModelConfig::default(), 7).unwrap();
    let float = ModelWeights::from_model(&model, DType::F64).unwrap().to_bytes().len() as f64;
    let q = QuantizedModel::from_model(&model, QuantMode::Int8).unwrap().to_bytes().len() as f64;
    assert!(float / q >= 7.0, "{float} / {q}");
}

#[test]
fn benchmark_contract() {
    let model = SegmentationModel::<f64>::with_seed(small_config(), 8).unwrap();
    let q = QuantizedModel::from_model(&model, QuantMode::Int8).unwrap();
    let frames = vec![image(64, 32, 3), image(64, 32, 4)];
    assert!(benchmark(BenchTarget::Quantized(&q), &frames, 9, Threads::Single).is_err());
    assert!(benchmark(BenchTarget::Quantized(&q), &[], 10, Threads::Single).is_err());
    for target in [BenchTarget::Baseline(&model), BenchTarget::Quantized(&q)] {
        let r = benchmark(target, &frames, 10, Threads::Single).unwrap();
        assert_eq!(r.thread_count, 1);
        assert_eq!(r.wall_times.len(), 10);
        assert!(r.wall_times.iter().all(|&t| t > 0.0));
        assert!((r.fps * r.median_seconds - 1.0).abs() < 1e-12);
    }
}
