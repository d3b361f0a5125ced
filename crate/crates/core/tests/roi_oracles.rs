mod common;

use common::{flood_fill_areas, minmax_filter, naive_median};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use seavae::nn::Tensor;
use seavae::roi::{
    analyze, binarize, extract_rois, heatmap, label_components, median_blur, morph, open,
    otsu_threshold, pixel_bounds, roi_score, AnomalyHeatmap, CameraGeometry, Mask, MorphOp,
    PixelBounds, RoiConfig, SizeBounds, ThresholdRule,
};

fn map(h: usize, w: usize, values: Vec<f64>) -> AnomalyHeatmap<f64> {
    AnomalyHeatmap::new(h, w, values, "m").unwrap()
}

fn random_mask(rng: &mut ChaCha8Rng, h: usize, w: usize, density: f64) -> Mask {
    Mask::from_fn(h, w, |_, _| rng.random_bool(density))
}

fn sig3(x: f64) -> f64 {
    let mag = 10f64.powf(x.abs().log10().floor() - 2.0);
    (x / mag).round() * mag
}

#[test]
fn heatmap_matches_elementwise_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a = Tensor::<f64>::from_fn([1, 3, 6, 7], |_| rng.random_range(0.0..1.0));
    let b = Tensor::<f64>::from_fn([1, 3, 6, 7], |_| rng.random_range(0.0..1.0));
    let m = heatmap(&a, &b).unwrap();
    for p in 0..42 {
        let expected: f64 = (0..3)
            .map(|c| (a.data()[c * 42 + p] - b.data()[c * 42 + p]).powi(2))
            .sum();
        assert!((m.values()[p] - expected).abs() < 1e-15);
    }
    assert!(heatmap(&a, &Tensor::zeros([1, 3, 6, 6])).is_err());
    assert!(heatmap(&a, &a).unwrap().values().iter().all(|v| *v == 0.0));
}

#[test]
fn median_blur_matches_naive_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for (h, w) in [(5, 5), (9, 13), (16, 11)] {
        let values: Vec<f64> = (0..h * w).map(|_| rng.random_range(0.0..1.0)).collect();
        for k in [3, 5, 7] {
            if k > h || k > w {
                continue;
            }
            let got = median_blur(&map(h, w, values.clone()), k).unwrap();
            assert_eq!(
                got.values(),
                naive_median(&values, h, w, k).as_slice(),
                "{h}x{w} k{k}"
            );
        }
    }
    let m = map(5, 5, vec![0.3; 25]);
    assert!(median_blur(&m, 4).is_err());
    assert_eq!(median_blur(&m, 3).unwrap().values(), m.values());
    let mut spike = vec![0.0; 25];
    spike[12] = 9.0;
    assert!(median_blur(&map(5, 5, spike), 3)
        .unwrap()
        .values()
        .iter()
        .all(|v| *v == 0.0));
}

#[test]
fn morphology_matches_min_max_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for trial in 0..40 {
        let (h, w) = (rng.random_range(3..20), rng.random_range(3..20));
        let density = rng.random_range(0.2..0.9);
        let mask = random_mask(&mut rng, h, w, density);
        let k = [3, 5][trial % 2];
        let iters = 1 + trial % 3;
        for (op, erode) in [(MorphOp::Erode, true), (MorphOp::Dilate, false)] {
            let mut expected = mask.data().to_vec();
            for _ in 0..iters {
                expected = minmax_filter(&expected, h, w, k, erode);
            }
            assert_eq!(
                morph(&mask, op, k, iters).unwrap().data(),
                expected.as_slice(),
                "trial {trial} {op:?}"
            );
        }
    }
}

#[test]
fn opening_keeps_large_blobs_and_drops_specks() {
    let square = Mask::from_fn(20, 20, |r, c| (5..15).contains(&r) && (5..15).contains(&c));
    assert_eq!(open(&square, 3, 1).unwrap(), square);
    let speck = Mask::from_fn(9, 9, |r, c| r == 4 && c == 4);
    assert_eq!(morph(&speck, MorphOp::Erode, 3, 1).unwrap().count(), 0);
    assert!(morph(&speck, MorphOp::Erode, 2, 1).is_err());
}

#[test]
fn binarize_is_strict() {
    let m = map(2, 3, vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6]);
    assert_eq!(binarize(&m, 0.0).count(), 6);
    assert_eq!(binarize(&m, 0.6).count(), 0);
    assert_eq!(binarize(&m, 0.3).count(), 3);
}

#[test]
fn otsu_separates_bimodal_map() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let values: Vec<f64> = (0..400)
        .map(|i| if i % 3 == 0 { 0.8 } else { 0.1 } + rng.random_range(-0.02..0.02))
        .collect();
    let t = otsu_threshold(&map(20, 20, values.clone()));
    let low_max = values
        .iter()
        .cloned()
        .filter(|v| *v < 0.5)
        .fold(f64::MIN, f64::max);
    let high_min = values
        .iter()
        .cloned()
        .filter(|v| *v > 0.5)
        .fold(f64::MAX, f64::min);
    assert!(
        t >= low_max && t < high_min,
        "{low_max} <= {t} < {high_min}"
    );
}

#[test]
fn contour_areas_match_flood_fill_on_random_masks() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let all = PixelBounds::new(0.0, f64::INFINITY).unwrap();
    for trial in 0..200 {
        let (h, w) = (rng.random_range(1..40), rng.random_range(1..40));
        let density = rng.random_range(0.05..0.7);
        let mask = random_mask(&mut rng, h, w, density);
        let rois = extract_rois(&mask, &map(h, w, vec![0.0; h * w]), all).unwrap();
        let mut areas: Vec<usize> = rois.iter().map(|r| r.area_px).collect();
        areas.sort_unstable();
        assert_eq!(areas, flood_fill_areas(mask.data(), h, w), "trial {trial}");
        assert_eq!(label_components(&mask).1, rois.len());
        for roi in &rois {
            // Every contour pixel is set and touches background or the border.
            for &(r, c) in &roi.contour {
                assert!(mask.get(r, c));
                let edge = r == 0 || c == 0 || r + 1 == h || c + 1 == w;
                let open_side = !edge
                    && [(r - 1, c), (r + 1, c), (r, c - 1), (r, c + 1)]
                        .iter()
                        .any(|&(y, x)| !mask.get(y, x));
                assert!(
                    edge || open_side,
                    "trial {trial}: interior pixel ({r}, {c}) on contour"
                );
            }
        }
    }
}

#[test]
fn extract_rois_gates_by_area() {
    let bounds = PixelBounds::new(16.0, 100.0).unwrap();
    let big = Mask::from_fn(12, 12, |r, c| (2..8).contains(&r) && (3..9).contains(&c));
    let rois = extract_rois(&big, &map(12, 12, vec![0.5; 144]), bounds).unwrap();
    assert_eq!(rois.len(), 1);
    assert_eq!(rois[0].area_px, 36);
    assert_eq!(rois[0].centroid, (4.5, 5.5));
    assert!((rois[0].mean_error - 0.5).abs() < 1e-12);
    let small = Mask::from_fn(12, 12, |r, c| (2..4).contains(&r) && (3..5).contains(&c));
    assert!(extract_rois(&small, &map(12, 12, vec![0.5; 144]), bounds)
        .unwrap()
        .is_empty());
}

#[test]
fn pixel_bounds_hand_calculation() {
    let g = CameraGeometry::default();
    assert_eq!((g.fov_h_deg, g.altitude_m, g.width_px), (60.0, 2.0, 80));
    let (fw, _) = g.footprint();
    assert_eq!(sig3(fw), 2.31);
    assert_eq!(sig3(g.pixels_per_metre()), 34.6);
    let nominal = (0.3 * g.pixels_per_metre()).powi(2);
    assert_eq!(sig3(nominal), 108.0);
    let b = pixel_bounds(&g, &SizeBounds::default()).unwrap();
    assert_eq!((sig3(b.min_px), sig3(b.max_px)), (54.0, 216.0));

    let high = g.with_altitude(4.0);
    assert!((high.pixels_per_metre() - g.pixels_per_metre() / 2.0).abs() < 1e-12);
    let bh = pixel_bounds(&high, &SizeBounds::default()).unwrap();
    assert!((bh.min_px - b.min_px / 4.0).abs() < 1e-9);

    let tight = pixel_bounds(
        &g,
        &SizeBounds {
            margin: 1.0,
            ..Default::default()
        },
    )
    .unwrap();
    assert!((tight.min_px - tight.max_px).abs() < 1e-9);
    assert!(pixel_bounds(&g.with_altitude(0.0), &SizeBounds::default()).is_err());
    assert!(pixel_bounds(&g.with_altitude(-1.0), &SizeBounds::default()).is_err());
}

/// Textured image plus a copy with a bright square whose top-left is `at`.
/// The texture moves with the square, so changing `at` translates the scene.
fn implanted(seed: u64, at: (usize, usize), side: usize) -> (Tensor<f64>, Tensor<f64>) {
    let (h, w) = (64, 80);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let recon = Tensor::from_fn([1, 3, h, w], |i| {
        let p = i % (h * w);
        let (r, c) = ((p / w) as f64 - at.0 as f64, (p % w) as f64 - at.1 as f64);
        0.35 + 0.1 * (r * 0.3).sin() * (c * 0.2).cos() + 0.01 * rng.random_range(-1.0..1.0)
    });
    let mut image = recon.clone();
    for ch in 0..3 {
        for r in at.0..at.0 + side {
            for c in at.1..at.1 + side {
                image.data_mut()[ch * h * w + r * w + c] = 0.95;
            }
        }
    }
    (image, recon)
}

#[test]
fn implanted_square_is_found() {
    let g = CameraGeometry::default();
    let cfg = RoiConfig::default();
    for (seed, at) in [(0, (20, 40)), (1, (5, 10)), (2, (45, 62))] {
        let (image, recon) = implanted(seed, at, 10);
        let px = pixel_bounds(&g, &SizeBounds::default()).unwrap();
        let a = analyze(heatmap(&image, &recon).unwrap(), px, &cfg).unwrap();
        assert!(a.score > 0.0);
        assert_eq!(a.rois.len(), 1);
        let (cy, cx) = a.rois[0].centroid;
        let (ey, ex) = (at.0 as f64 + 4.5, at.1 as f64 + 4.5);
        assert!(
            (cy - ey).abs() <= 2.0 && (cx - ex).abs() <= 2.0,
            "{:?} vs {:?}",
            (cy, cx),
            (ey, ex)
        );
        assert_eq!(
            roi_score(&image, &recon, &g, &SizeBounds::default(), &cfg).unwrap(),
            a.score
        );

        // An object gate well above 100 px² rejects it.
        let big = SizeBounds {
            min_side_m: 0.6,
            max_side_m: 0.8,
            margin: 1.5,
        };
        assert_eq!(roi_score(&image, &recon, &g, &big, &cfg).unwrap(), 0.0);
        assert_eq!(
            roi_score(&image, &image, &g, &SizeBounds::default(), &cfg).unwrap(),
            0.0
        );
    }
}

#[test]
fn roi_is_translation_equivariant() {
    let g = CameraGeometry::default();
    let px = pixel_bounds(&g, &SizeBounds::default()).unwrap();
    let cfg = RoiConfig::default();
    let (image, recon) = implanted(9, (15, 20), 10);
    let base = analyze(heatmap(&image, &recon).unwrap(), px, &cfg).unwrap();
    for (dr, dc) in [(3usize, 7usize), (20, 30), (10, 0)] {
        let (image2, recon2) = implanted(9, (15 + dr, 20 + dc), 10);
        let moved = analyze(heatmap(&image2, &recon2).unwrap(), px, &cfg).unwrap();
        let (a, b) = (base.rois[0].centroid, moved.rois[0].centroid);
        assert!((b.0 - a.0 - dr as f64).abs() <= 1.0 && (b.1 - a.1 - dc as f64).abs() <= 1.0);
        assert!((moved.score - base.score).abs() <= 0.05 * base.score);
    }
}

#[test]
fn chain_is_homogeneous_under_fixed_thresholds() {
    let g = CameraGeometry::default();
    let px = pixel_bounds(&g, &SizeBounds::default()).unwrap();
    let (image, recon) = implanted(3, (25, 30), 11);
    let m = heatmap(&image, &recon).unwrap();
    let t = 0.2;
    let base = analyze(
        m.clone(),
        px,
        &RoiConfig {
            threshold: ThresholdRule::Fixed { value: t },
            ..Default::default()
        },
    )
    .unwrap();
    assert!(!base.rois.is_empty());
    for c in [0.5, 2.0, 7.5] {
        let cfg = RoiConfig {
            threshold: ThresholdRule::Fixed { value: t * c },
            ..Default::default()
        };
        let scaled = analyze(m.scaled(c).unwrap(), px, &cfg).unwrap();
        assert_eq!(scaled.rois.len(), base.rois.len());
        for (a, b) in base.rois.iter().zip(&scaled.rois) {
            assert_eq!(a.area_px, b.area_px);
            assert!((b.mean_error - c * a.mean_error).abs() <= 1e-12 * b.mean_error.max(1.0));
        }
    }
}
