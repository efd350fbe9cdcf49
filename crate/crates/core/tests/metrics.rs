use fishseg::metrics::{evaluate, ConfusionCounts};
use fishseg::sonar::MaskImage;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_mask(rng: &mut ChaCha8Rng, w: usize, h: usize, p: f64) -> MaskImage {
    let px = (0..w * h).map(|_| u8::from(rng.gen_bool(p))).collect();
    MaskImage::from_raw(w, h, px).unwrap()
}

#[test]
fn counts_match_a_plain_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let pred = random_mask(&mut rng, 16, 16, 0.4);
    let truth = random_mask(&mut rng, 16, 16, 0.3);
    let (mut tp, mut fp, mut tn, mut fn_) = (0u64, 0u64, 0u64, 0u64);
    for x in 0..16 {
        for y in 0..16 {
            match (pred.get(x, y) == 1, truth.get(x, y) == 1) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                (false, false) => tn += 1,
            }
        }
    }
    let c = evaluate(&pred, &truth, false).unwrap();
    assert_eq!((c.tp, c.fp, c.tn, c.fn_), (tp, fp, tn, fn_));
    let (tp, fp, tn, fn_) = (tp as f64, fp as f64, tn as f64, fn_ as f64);
    let p = tp / (tp + fp);
    let r = tp / (tp + fn_);
    assert!((c.accuracy().unwrap() - (tp + tn) / 256.0).abs() < 1e-15);
    assert!((c.precision().unwrap() - p).abs() < 1e-15);
    assert!((c.recall().unwrap() - r).abs() < 1e-15);
    assert!((c.f1().unwrap() - 2.0 * p * r / (p + r)).abs() < 1e-12);
    assert!((c.iou().unwrap() - tp / (tp + fp + fn_)).abs() < 1e-15);
    assert!((c.false_positive_rate().unwrap() - fp / (fp + tn)).abs() < 1e-15);
}

#[test]
fn degenerate_cases() {
    let empty = MaskImage::from_raw(4, 4, vec![0; 16]).unwrap();
    let full = MaskImage::from_raw(4, 4, vec![1; 16]).unwrap();

    let c = evaluate(&empty, &empty, false).unwrap();
    assert_eq!(c.accuracy(), Some(1.0));
    assert_eq!(c.precision(), None);
    assert_eq!(c.recall(), None);
    assert_eq!(c.f1(), None);
    assert_eq!(c.iou(), None);

    // Predicting nothing on a scene with fish: recall 0, precision undefined.
    let c = evaluate(&empty, &full, false).unwrap();
    assert_eq!(c.recall(), Some(0.0));
    assert_eq!(c.precision(), None);
    assert_eq!(c.f1(), Some(0.0));

    let c = evaluate(&full, &empty, false).unwrap();
    assert_eq!(c.precision(), Some(0.0));
    assert_eq!(c.false_positive_rate(), Some(1.0));

    let c = evaluate(&full, &full, false).unwrap();
    assert_eq!((c.f1(), c.iou(), c.accuracy()), (Some(1.0), Some(1.0), Some(1.0)));

    let other = MaskImage::from_raw(4, 5, vec![0; 20]).unwrap();
    assert!(evaluate(&empty, &other, false).is_err());
    assert!(ConfusionCounts::from_masks(&empty, &empty, Some(&[true; 3])).is_err());
}

#[test]
fn fan_restriction_ignores_the_corners() {
    let (w, h) = (320, 128);
    let pred = MaskImage::from_raw(w, h, vec![1; w * h]).unwrap();
    let truth = MaskImage::from_raw(w, h, vec![0; w * h]).unwrap();
    let fan = evaluate(&pred, &truth, true).unwrap();
    let full = evaluate(&pred, &truth, false).unwrap();
    assert_eq!(full.total(), (w * h) as u64);
    assert!(fan.total() < full.total() / 2);
    // Top corners lie outside the fan.
    let mut corner = MaskImage::from_raw(w, h, vec![0; w * h]).unwrap();
    corner.set(0, 0, true);
    corner.set(w - 1, 0, true);
    assert_eq!(evaluate(&corner, &truth, true).unwrap().fp, 0);
    assert_eq!(evaluate(&corner, &truth, false).unwrap().fp, 2);
}

proptest! {
    #[test]
    fn swapping_roles_swaps_errors(seed in any::<u64>(), p in 0.0f64..1.0, q in 0.0f64..1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_mask(&mut rng, 12, 9, p);
        let b = random_mask(&mut rng, 12, 9, q);
        let ab = evaluate(&a, &b, false).unwrap();
        let ba = evaluate(&b, &a, false).unwrap();
        prop_assert_eq!(ab.swapped(), ba);
        prop_assert_eq!(ab.precision(), ba.recall());
        prop_assert_eq!(ab.f1(), ba.f1());
        prop_assert_eq!(ab.iou(), ba.iou());
    }

    #[test]
    fn pixel_order_does_not_matter(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_mask(&mut rng, 10, 10, 0.5);
        let b = random_mask(&mut rng, 10, 10, 0.5);
        let mut idx: Vec<usize> = (0..100).collect();
        idx.shuffle(&mut rng);
        let pa = MaskImage::from_raw(10, 10, idx.iter().map(|&i| a.pixels()[i]).collect()).unwrap();
        let pb = MaskImage::from_raw(10, 10, idx.iter().map(|&i| b.pixels()[i]).collect()).unwrap();
        prop_assert_eq!(evaluate(&a, &b, false).unwrap(), evaluate(&pa, &pb, false).unwrap());
    }

    #[test]
    fn restriction_never_adds_pixels(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_mask(&mut rng, 64, 32, 0.3);
        let b = random_mask(&mut rng, 64, 32, 0.3);
        let region: Vec<bool> = (0..64 * 32).map(|_| rng.gen_bool(0.6)).collect();
        let r = ConfusionCounts::from_masks(&a, &b, Some(&region)).unwrap();
        let f = ConfusionCounts::from_masks(&a, &b, None).unwrap();
        prop_assert!(r.total() <= f.total());
        prop_assert!(r.tp <= f.tp && r.fp <= f.fp && r.tn <= f.tn && r.fn_ <= f.fn_);
        prop_assert_eq!(r.total(), region.iter().filter(|&&x| x).count() as u64);
        let fan = evaluate(&a, &b, true).unwrap();
        prop_assert!(fan.total() <= f.total());
    }
}
