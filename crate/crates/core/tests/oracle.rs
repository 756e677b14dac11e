//! Cross-checks against the straight-line implementations in the testkit.

use decloss::icoo::{ratio_sum, score_from_sum, MiniPatch};
use decloss::toy::{bicubic_resize, resize_to};
use decloss::{
    decloss, enhance_tensor, icoo, p_star, ContrastConfig, EnhanceConfig, IcooConfig, Tape,
    TempMode, Tensor,
};
use decloss_testkit::{self as oracle, RefLoss, SplitMix};

fn pick<T: Copy>(rng: &mut SplitMix, items: &[T]) -> T {
    items[(rng.next_u64() % items.len() as u64) as usize]
}

#[test]
fn decloss_matches_oracle_on_random_instances() {
    let mut rng = SplitMix(2024);
    let mut worst: f64 = 0.0;
    let (mut checked, mut degenerate) = (0, 0);
    let mut case = 0;
    while checked < 20 {
        case += 1;
        let p = pick(&mut rng, &[2, 4]);
        let b = pick(&mut rng, &[1, 2]);
        let c = pick(&mut rng, &[1, 3]);
        let h = p * pick(&mut rng, &[2, 3]);
        let w = p * pick(&mut rng, &[1, 2]);
        let literal = case % 2 == 1;
        let alpha = 0.5 + rng.uniform();
        let mu = if case % 3 == 0 {
            None
        } else {
            Some(0.5 + 3.0 * rng.uniform())
        };
        let eta = 10.0 * rng.uniform();
        let (t_pos, t_neg) = (0.2 + rng.uniform(), 0.2 + 2.0 * rng.uniform());
        let dims = [b, c, h, w];
        let n = b * c * h * w;
        let sr = rng.fill(n);
        let hr = rng.fill(n);

        let reference = RefLoss {
            patch: p,
            eta,
            t_pos,
            t_neg,
            literal_temperature: literal,
            alpha,
            mu,
            ..Default::default()
        };
        let expected = oracle::decloss(&sr, &hr, dims, &reference);

        let ccfg = ContrastConfig {
            patch_size: p,
            eta,
            t_pos,
            t_neg,
            temp_mode: if literal {
                TempMode::PaperLiteral
            } else {
                TempMode::InsideExp
            },
            ..Default::default()
        };
        let ecfg = EnhanceConfig {
            alpha,
            mu,
            ..Default::default()
        };
        let tape = Tape::new();
        let srv = tape.var(Tensor::new(dims.to_vec(), sr).unwrap());
        let hrv = tape.constant(Tensor::new(dims.to_vec(), hr).unwrap());
        let got = decloss(srv, hrv, &ecfg, &ccfg);
        if !expected.is_finite() {
            // Some row has no negatives (or no positives) in the reference.
            assert!(matches!(
                got,
                Err(decloss::Error::DegeneratePartition { .. })
            ));
            degenerate += 1;
            continue;
        }
        let got = got.unwrap().item().unwrap();
        checked += 1;
        let err = (got - expected).abs();
        worst = worst.max(err);
        assert!(err < 1e-10, "case {case}: {got} vs {expected}");
    }
    println!("worst decloss deviation {worst:e}, {degenerate} degenerate draws skipped");
}

#[test]
fn enhance_matches_double_sum_dft() {
    let mut rng = SplitMix(7);
    for (h, w, mu) in [(5, 7, None), (8, 8, Some(2.0)), (6, 3, Some(0.7))] {
        let x = rng.fill(2 * h * w);
        let expected = oracle::enhance_batch(&x, [1, 2, h, w], 1.3, mu);
        let cfg = EnhanceConfig {
            alpha: 1.3,
            mu,
            ..Default::default()
        };
        let got = enhance_tensor(&Tensor::new(vec![1, 2, h, w], x).unwrap(), &cfg).unwrap();
        for (a, b) in got.data().iter().zip(&expected) {
            assert!((a - b).abs() < 1e-10);
        }
    }
}

#[test]
fn p_star_matches_exhaustive_scan_exactly() {
    let mut rng = SplitMix(99);
    for _ in 0..50 {
        let d = 1 + (rng.next_u64() % 12) as usize;
        let m = 2 + (rng.next_u64() % 6) as usize;
        let sr = rng.fill(d);
        let hr: Vec<Vec<f64>> = (0..m).map(|_| rng.fill(d)).collect();
        let refs: Vec<&[f64]> = hr.iter().map(|v| v.as_slice()).collect();
        let got = p_star(&sr, &refs, 1e-8, None).unwrap();
        assert_eq!(got.to_bits(), oracle::p_star(&sr, &hr, 1e-8).to_bits());
    }
}

#[test]
fn round_score_matches_exhaustive_scan_exactly() {
    let mut rng = SplitMix(5);
    let cfg = IcooConfig::default();
    for _ in 0..10 {
        let sr: Vec<Vec<f64>> = (0..5).map(|_| rng.fill(12)).collect();
        let hr: Vec<Vec<f64>> = (0..4).map(|_| rng.fill(12)).collect();
        let wrap = |v: &Vec<Vec<f64>>| -> Vec<MiniPatch> {
            v.iter()
                .map(|d| MiniPatch {
                    top: 0,
                    left: 0,
                    data: d.clone(),
                })
                .collect()
        };
        let got = score_from_sum(ratio_sum(&wrap(&sr), &wrap(&hr), &cfg).unwrap());
        assert_eq!(got.to_bits(), oracle::icoo_round(&sr, &hr, 1e-8).to_bits());
    }
}

#[test]
fn icoo_with_whole_image_patches_matches_oracle() {
    // With the patch as large as the image every sample is the image itself,
    // so the pooled sets are known without replaying the sampler.
    let mut rng = SplitMix(31);
    let sr: Vec<Tensor> = (0..3)
        .map(|_| Tensor::new(vec![2, 3, 3], rng.fill(18)).unwrap())
        .collect();
    let hr: Vec<Tensor> = (0..4)
        .map(|_| Tensor::new(vec![2, 3, 3], rng.fill(18)).unwrap())
        .collect();
    let cfg = IcooConfig {
        patch_size: 3,
        sr_patches: 2,
        hr_patches: 5,
        rounds: 1,
        ..Default::default()
    };
    let report = icoo(&sr, &hr, &cfg).unwrap();
    let sr_pool: Vec<Vec<f64>> = sr
        .iter()
        .flat_map(|t| std::iter::repeat_n(t.data().to_vec(), 2))
        .collect();
    let hr_pool: Vec<Vec<f64>> = hr
        .iter()
        .flat_map(|t| std::iter::repeat_n(t.data().to_vec(), 5))
        .collect();
    let expected = oracle::icoo_round(&sr_pool, &hr_pool, 1e-8);
    assert_eq!(report.per_round[0].to_bits(), expected.to_bits());
    assert_eq!(report.score.to_bits(), expected.to_bits());
    assert_eq!((report.sr_patch_count, report.hr_patch_count), (6, 20));
}

#[test]
fn bicubic_matches_tap_by_tap_reference() {
    let ramp = Tensor::from_fn(&[1, 8, 8], |i| ((i / 8) + 2 * (i % 8)) as f64 / 21.0);
    let half = bicubic_resize(&ramp, 0.5).unwrap();
    assert_eq!(half.shape(), &[1, 4, 4]);
    let expected = oracle::bicubic_channel(ramp.data(), 8, 8, 4, 4);
    for (a, b) in half.data().iter().zip(&expected) {
        assert!((a - b).abs() < 1e-6, "{a} vs {b}");
    }

    let mut rng = SplitMix(3);
    for (h, w, oh, ow) in [(9, 7, 3, 2), (5, 6, 20, 12), (12, 12, 5, 17)] {
        let img = Tensor::new(vec![1, h, w], rng.fill(h * w)).unwrap();
        let got = resize_to(&img, oh, ow).unwrap();
        let expected = oracle::bicubic_channel(img.data(), h, w, oh, ow);
        for (a, b) in got.data().iter().zip(&expected) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
