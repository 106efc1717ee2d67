use std::path::Path;

use hdfilter::imageio::{self, ImageFormat};
use hdfilter::pipeline::{filter_brute_force, filter_fast, filter_fast_hard, FilterRequest};
use hdfilter::synth::{add_gaussian_noise, piecewise_image};
use hdfilter::{mse_psnr, MultiChannelImage, RangeKernel, SpatialKernel};
use tempfile::TempDir;

fn data(name: &str) -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data").join(name)
}

fn spectra(count: usize, bands: usize) -> Vec<Vec<f64>> {
    (0..count)
        .map(|s| {
            (0..bands)
                .map(|b| {
                    let t = b as f64 / bands as f64;
                    0.5 + 0.4 * ((s as f64 + 1.0) * 3.0 * t + s as f64).sin()
                })
                .collect()
        })
        .collect()
}

#[test]
fn hyperspectral_cube_round_trip_and_filter() {
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("scene.cube");
    let cube = piecewise_image(24, 20, &spectra(6, 33), 1.0, 11).unwrap();
    imageio::save(&cube, &path).unwrap();
    let loaded = imageio::load(&path).unwrap();
    assert_eq!(loaded.channels(), 33);
    assert_eq!(loaded.range(), 1.0);
    // samples are stored as f32
    for (a, b) in loaded.as_slice().iter().zip(cube.as_slice()) {
        assert_eq!(*a, *b as f32 as f64);
    }

    // six spectra and six clusters: the fast filter is exact
    let req = FilterRequest::new(
        &loaded,
        &loaded,
        SpatialKernel::gaussian(2.0).unwrap(),
        RangeKernel::isotropic(0.3, 33).unwrap(),
        6,
    );
    let oracle = filter_brute_force(&req).unwrap();
    for report in [filter_fast(&req).unwrap(), filter_fast_hard(&req).unwrap()] {
        assert_eq!(report.convolution_calls, 34 * 6);
        assert!(report.model.as_ref().unwrap().error() < 1e-20);
        let q = mse_psnr(&report.output, &oracle, 1.0).unwrap();
        assert!(q.mse.sqrt() <= 1e-6, "rms {}", q.mse.sqrt());
    }
}

#[test]
fn noisy_cube_filter_tracks_brute_force() {
    let clean = piecewise_image(32, 32, &spectra(5, 33), 1.0, 4).unwrap();
    let noisy = add_gaussian_noise(&clean, 0.02, 9).unwrap();
    let req = FilterRequest::new(
        &noisy,
        &noisy,
        SpatialKernel::gaussian(2.0).unwrap(),
        RangeKernel::isotropic(0.5, 33).unwrap(),
        16,
    );
    let oracle = filter_brute_force(&req).unwrap();
    let fast = filter_fast(&req).unwrap();
    assert!(fast.quality_against(&oracle).unwrap().psnr_db > 35.0);
    let denoised = mse_psnr(&fast.output, &clean, 1.0).unwrap().psnr_db;
    let before = mse_psnr(&noisy, &clean, 1.0).unwrap().psnr_db;
    assert!(denoised > before + 3.0, "{before} -> {denoised}");
}

#[test]
fn bundled_images_load() {
    for (name, channels, side) in [
        ("astronaut_rgb_128.png", 3, 128),
        ("astronaut_gray_512.png", 1, 512),
        ("astronaut_gray_64.png", 1, 64),
        ("coffee_rgb_64.png", 3, 64),
    ] {
        let img = imageio::load(data(name)).unwrap();
        assert_eq!((img.width(), img.height(), img.channels()), (side, side, channels), "{name}");
        assert_eq!(img.range(), 255.0);
        assert!(img.as_slice().iter().all(|&v| (0.0..=255.0).contains(&v) && v.fract() == 0.0));
    }
}

#[test]
fn eight_bit_formats_round_trip_through_files() {
    let dir = TempDir::new().unwrap();
    let rgb = imageio::load(data("coffee_rgb_64.png")).unwrap();
    let gray = imageio::load(data("astronaut_gray_64.png")).unwrap();
    let cases: [(&MultiChannelImage, &str); 5] = [
        (&rgb, "a.png"),
        (&rgb, "a.ppm"),
        (&gray, "b.png"),
        (&gray, "b.pgm"),
        (&rgb, "a.cube"),
    ];
    for (img, name) in cases {
        let path = dir.path().join(name);
        imageio::save(img, &path).unwrap();
        assert_eq!(&imageio::load(&path).unwrap(), img, "{name}");
    }
    assert!(!ImageFormat::Pgm.supports(3));
    assert!(imageio::save(&rgb, dir.path().join("c.pgm")).is_err());
    assert!(!dir.path().join("c.pgm").exists());
}
