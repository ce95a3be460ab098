//! The tiled, culled, parallel rasterizer against a direct per-pixel
//! compositor with its own projection math.

mod common;

use proptest::prelude::*;

use common::{brute_force, max_diff, scene};
use raysplat::geometry::Camera;
use raysplat::par;
use raysplat::raster::{occlusion_mask, render, sample_offsets, RenderSettings};
use raysplat::scene::CLOUD_STRIDE;

#[test]
fn reference_settings_match_brute_force_on_random_scenes() {
    for seed in 0..50 {
        let (cloud, cam) = scene(seed);
        for spp in [1, 4] {
            let got = render(&cloud, &cam, spp, &RenderSettings::reference()).unwrap();
            let want = brute_force(&cloud, &cam, spp);
            let d = max_diff(&got, &want);
            assert!(d < 1e-6, "scene {seed}, spp {spp}: max deviation {d:e}");
        }
    }
}

#[test]
fn default_settings_stay_close_to_brute_force() {
    // 3-sigma truncation drops at most opacity * exp(-4.5) per splat
    let mut worst: f64 = 0.0;
    for seed in 0..20 {
        let (cloud, cam) = scene(seed);
        let got = render(&cloud, &cam, 4, &RenderSettings::default()).unwrap();
        worst = worst.max(max_diff(&got, &brute_force(&cloud, &cam, 4)));
    }
    assert!(worst < 0.1, "default truncation error {worst}");
}

#[test]
fn tile_size_does_not_change_the_image() {
    let (cloud, cam) = scene(3);
    let base = render(&cloud, &cam, 4, &RenderSettings::reference()).unwrap();
    for tile in [1, 3, 5, 16, 64] {
        let s = RenderSettings {
            tile_size: tile,
            ..RenderSettings::reference()
        };
        assert_eq!(render(&cloud, &cam, 4, &s).unwrap(), base, "tile {tile}");
    }
}

#[test]
fn thread_count_does_not_change_bits() {
    for seed in 0..5 {
        let (cloud, cam) = scene(seed);
        let one = par::with_threads(1, || render(&cloud, &cam, 4, &RenderSettings::default()).unwrap());
        let eight = par::with_threads(8, || render(&cloud, &cam, 4, &RenderSettings::default()).unwrap());
        assert_eq!(one, eight);
    }
}

#[test]
fn offsets_average_to_pixel_center() {
    let o = sample_offsets(4).unwrap();
    let mx: f64 = o.iter().map(|p| p.0).sum::<f64>() / 4.0;
    let my: f64 = o.iter().map(|p| p.1).sum::<f64>() / 4.0;
    assert_eq!((mx, my), (0.5, 0.5));
    assert_eq!(sample_offsets(1).unwrap(), vec![(0.5, 0.5)]);
    assert!(sample_offsets(2).is_err());
}

#[test]
fn empty_cloud_gives_empty_mask() {
    let cam = Camera::looking_forward(32.0, 32.0, 8, 8, [0.0; 3]);
    let r = render(&[], &cam, 4, &RenderSettings::default()).unwrap();
    assert!(occlusion_mask(&r, 1e-3).iter().all(|&m| !m));
}

#[test]
fn four_samples_average_four_shifted_single_sample_renders() {
    // moving the principal point by -d moves every splat by -d, which is the
    // same as sampling at 0.5 + d
    for seed in [1, 4, 9] {
        let (cloud, cam) = scene(seed);
        let s = RenderSettings::reference();
        let four = render(&cloud, &cam, 4, &s).unwrap();
        let mut sum = vec![0.0; four.accum_opacity.len()];
        for (ox, oy) in sample_offsets(4).unwrap() {
            let mut c = cam.clone();
            c.cx -= ox - 0.5;
            c.cy -= oy - 0.5;
            let one = render(&cloud, &c, 1, &s).unwrap();
            for (acc, a) in sum.iter_mut().zip(&one.accum_opacity) {
                *acc += a / 4.0;
            }
        }
        for (a, b) in sum.iter().zip(&four.accum_opacity) {
            assert!((a - b).abs() < 1e-12, "scene {seed}: {a} vs {b}");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]
    #[test]
    fn outputs_are_bounded(seed in 0u64..100_000, spp in prop::sample::select(vec![1usize, 4])) {
        let (mut cloud, cam) = scene(seed);
        // pull everything in front of the camera so depth is bounded below
        for g in cloud.chunks_mut(CLOUD_STRIDE) {
            g[2] = g[2].abs() + 0.5;
        }
        let r = render(&cloud, &cam, spp, &RenderSettings::default()).unwrap();
        let max_col = cloud.chunks(CLOUD_STRIDE).flat_map(|g| g[10..13].to_vec()).fold(0.0, f64::max);
        for &a in &r.accum_opacity {
            prop_assert!((0.0..=1.0).contains(&a));
        }
        for &c in &r.color {
            prop_assert!(c >= 0.0 && c <= max_col + 1e-12);
        }
    }
}
