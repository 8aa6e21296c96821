use forge_core::qc_filters::{
    evaluate_candidate, filter_aspect_ratio, filter_classifier, filter_color_std, filter_components,
    filter_relative_size, run_cascade, QcConfig,
};
use forge_core::{BinaryMask, MaskCandidate, RasterImage};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_candidates(seed: u64, n: usize) -> (RasterImage, Vec<MaskCandidate>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let img = RasterImage::from_fn(40, 30, 3, |x, y, c| {
        if x < 20 {
            ((x * 37 + y * 11 + c as u32 * 5) % 256) as u8
        } else {
            90
        }
    })
    .unwrap();
    let cands = (0..n)
        .map(|_| {
            let x0 = rng.random_range(0..38);
            let y0 = rng.random_range(0..28);
            let x1 = rng.random_range(x0 + 1..=40);
            let y1 = rng.random_range(y0 + 1..=30);
            let holes = rng.random_bool(0.3);
            let mask = BinaryMask::from_fn(40, 30, |x, y| {
                x >= x0 && x < x1 && y >= y0 && y < y1 && !(holes && (x / 3) % 2 == 1)
            });
            MaskCandidate::new(mask, rng.random(), "img").unwrap()
        })
        .collect();
    let scores = (0..n).map(|_| rng.random()).collect();
    (img, cands, scores)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn survivors_are_intersection_of_pass_sets(seed in 0u64..10_000, n in 0usize..25) {
        let (img, cands, scores) = random_candidates(seed, n);
        let cfg = QcConfig::default();
        let out = run_cascade(&img, &cands, &scores, &cfg).unwrap();
        prop_assert!(out.report.is_monotone());
        prop_assert_eq!(out.report.total_in, n as u64);

        let area = img.pixel_count() as u64;
        let mut expected = Vec::new();
        for (i, (c, &s)) in cands.iter().zip(&scores).enumerate() {
            let m = &c.mask;
            let pass = filter_relative_size(m, area, cfg.size_min, cfg.size_max).unwrap().passed
                && filter_aspect_ratio(m, cfg.max_aspect).unwrap().passed
                && filter_components(m, cfg.max_components).passed
                && filter_color_std(&img, m, cfg.min_color_std).unwrap().passed
                && filter_classifier(s, cfg.min_classifier_score).unwrap().passed;
            if pass {
                expected.push(i);
            }
            // verdicts do not depend on cascade position
            prop_assert_eq!(&out.verdicts[i], &evaluate_candidate(&img, m, s, &cfg).unwrap());
        }
        prop_assert_eq!(&out.survivor_indices, &expected);
        prop_assert_eq!(out.report.stages[4].survivors, expected.len() as u64);
        for i in 0..5 {
            prop_assert!(out.report.reserved_pct(i) <= 1.0);
            if i > 0 {
                prop_assert!(out.report.reserved_pct(i) <= out.report.reserved_pct(i - 1));
            }
        }
    }
}
