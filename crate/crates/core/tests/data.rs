use std::path::Path;

use adnet_core::data::{generate_synthetic, load_dataset, parse_config, resize, RunConfig, SyntheticSpec};
use adnet_core::losses::LossVariant;
use adnet_core::{Error, Tensor};
use image::{GrayImage, Luma, Rgb, RgbImage};
use proptest::prelude::*;

fn write_pair(dir: &Path, id: &str, mask_value: u8) {
    let img = RgbImage::from_fn(6, 4, |x, y| Rgb([x as u8 * 40, y as u8 * 60, 7]));
    img.save(dir.join("images").join(format!("{id}.png"))).unwrap();
    let mask = GrayImage::from_fn(6, 4, |x, _| Luma([if x < 3 { mask_value } else { 0 }]));
    mask.save(dir.join("masks").join(format!("{id}.png"))).unwrap();
}

fn dataset_dirs() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::create_dir(dir.path().join("images")).unwrap();
    std::fs::create_dir(dir.path().join("masks")).unwrap();
    dir
}

fn load(dir: &Path, size: usize) -> adnet_core::Result<Vec<adnet_core::data::Sample>> {
    load_dataset(&dir.join("images"), &dir.join("masks"), size)
}

#[test]
fn empty_directories_give_no_samples() {
    let dir = dataset_dirs();
    assert!(load(dir.path(), 8).unwrap().is_empty());
}

#[test]
fn pairs_load_sorted_and_binarized() {
    let dir = dataset_dirs();
    for id in ["c", "a", "b"] {
        write_pair(dir.path(), id, 200);
    }
    let samples = load(dir.path(), 4).unwrap();
    let ids: Vec<&str> = samples.iter().map(|s| s.id.as_str()).collect();
    assert_eq!(ids, ["a", "b", "c"]);
    let s = &samples[0];
    assert_eq!(s.image.shape(), &[4, 4, 3]);
    assert_eq!(s.mask.shape(), &[4, 4, 1]);
    // Columns 0..2 of the resized mask read source columns 0, 2, 3, 5.
    assert_eq!(&s.mask.data()[..4], &[1.0, 1.0, 0.0, 0.0]);
    assert!(s.image.data().iter().all(|v| (0.0..=1.0).contains(v)));
    assert_eq!(s.image.data()[3], 80.0 / 255.0);
}

#[test]
fn mask_threshold_is_128() {
    let dir = dataset_dirs();
    write_pair(dir.path(), "low", 127);
    write_pair(dir.path(), "high", 128);
    let samples = load(dir.path(), 4).unwrap();
    assert_eq!(samples[0].id, "high");
    assert_eq!(samples[0].mask.sum(), 8.0);
    assert_eq!(samples[1].mask.sum(), 0.0);
}

#[test]
fn segmentation_suffix_and_jpeg_images_pair_up() {
    let dir = dataset_dirs();
    let img = RgbImage::from_pixel(4, 4, Rgb([10, 20, 30]));
    img.save(dir.path().join("images/ISIC_001.jpg")).unwrap();
    GrayImage::from_pixel(4, 4, Luma([255]))
        .save(dir.path().join("masks/ISIC_001_segmentation.png"))
        .unwrap();
    let samples = load(dir.path(), 4).unwrap();
    assert_eq!(samples[0].id, "ISIC_001");
    assert_eq!(samples[0].mask.sum(), 16.0);
}

#[test]
fn orphans_are_listed() {
    let dir = dataset_dirs();
    write_pair(dir.path(), "ok", 255);
    RgbImage::new(2, 2).save(dir.path().join("images/lonely.png")).unwrap();
    GrayImage::new(2, 2).save(dir.path().join("masks/stray.png")).unwrap();
    let err = load(dir.path(), 4).unwrap_err().to_string();
    assert!(err.contains("lonely.png") && err.contains("stray.png"), "{err}");
}

#[test]
fn undecodable_file_names_its_path() {
    let dir = dataset_dirs();
    std::fs::write(dir.path().join("images/bad.png"), b"not a png").unwrap();
    GrayImage::new(2, 2).save(dir.path().join("masks/bad.png")).unwrap();
    let err = load(dir.path(), 4).unwrap_err();
    assert!(matches!(err, Error::Image { ref path, .. } if path.ends_with("bad.png")), "{err}");
}

#[test]
fn downscaling_block_image_recovers_blocks() {
    let blocks = [[0.1, 0.7], [0.3, 0.9]];
    let data = (0..4)
        .flat_map(|i| (0..4).map(move |j| blocks[i / 2][j / 2]))
        .collect();
    let img = Tensor::new(&[4, 4, 1], data).unwrap();
    assert_eq!(resize(&img, 2, 2).unwrap().data(), &[0.1, 0.7, 0.3, 0.9]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn resize_follows_the_index_map(
        hs in 1usize..20, ws in 1usize..20, hd in 1usize..20, wd in 1usize..20, seed in any::<u64>()
    ) {
        let data: Vec<f64> = (0..hs * ws).map(|k| ((k as u64).wrapping_mul(seed | 1) % 2) as f64).collect();
        let img = Tensor::new(&[hs, ws, 1], data).unwrap();
        let out = resize(&img, hd, wd).unwrap();
        for i in 0..hd {
            for j in 0..wd {
                let si = ((i as f64 + 0.5) * hs as f64 / hd as f64).floor() as usize;
                let sj = ((j as f64 + 0.5) * ws as f64 / wd as f64).floor() as usize;
                prop_assert_eq!(out.data()[i * wd + j], img.data()[si * ws + sj]);
            }
        }
        prop_assert!(out.data().iter().all(|&v| v == 0.0 || v == 1.0));
        prop_assert_eq!(resize(&out, hd, wd).unwrap(), out);
    }
}

#[test]
fn synthetic_generation_is_reproducible() {
    let spec = SyntheticSpec {
        count: 4,
        size: 24,
        hair: true,
        seed: 11,
        ..SyntheticSpec::default()
    };
    let bits = |s: &[adnet_core::data::Sample]| -> Vec<u64> {
        s.iter()
            .flat_map(|x| x.image.data().iter().chain(x.mask.data()).map(|v| v.to_bits()))
            .collect()
    };
    let a = generate_synthetic(&spec).unwrap();
    assert_eq!(a.len(), 4);
    assert_eq!(bits(&a), bits(&generate_synthetic(&spec).unwrap()));
    let other = SyntheticSpec { seed: 12, ..spec };
    assert_ne!(bits(&a), bits(&generate_synthetic(&other).unwrap()));
}

#[test]
fn noiseless_full_contrast_mask_is_recoverable_by_threshold() {
    let spec = SyntheticSpec {
        count: 10,
        size: 32,
        contrast_range: (1.0, 1.0),
        noise: 0.0,
        ..SyntheticSpec::default()
    };
    for s in generate_synthetic(&spec).unwrap() {
        assert!(s.mask.sum() > 0.0);
        for (px, &m) in s.image.data().chunks(3).zip(s.mask.data()) {
            assert_eq!((px[0] < 0.3) as u8 as f64, m);
        }
    }
}

#[test]
fn gamma_outside_range_is_rejected() {
    let err = parse_config("loss.gamma = 5\n", "run.cfg").unwrap_err();
    assert!(matches!(err, Error::ConfigValue { ref key, .. } if key == "loss.gamma"));
    assert!(parse_config("loss.gamma = 3\n", "run.cfg").is_ok());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn echoed_config_reloads_identically(
        wm in 0.05f64..4.0,
        gamma in 1.0f64..=3.0,
        lr in 1e-6f64..1.0,
        seed in any::<u64>(),
        b in any::<bool>(),
        target in prop::option::of(0.001f64..1.0),
        batch in 1usize..64,
    ) {
        let mut cfg = RunConfig::default();
        cfg.model.width_multiplier = wm;
        cfg.model.guided = b;
        cfg.loss.gamma = gamma;
        cfg.loss.variant = if b { LossVariant::A } else { LossVariant::B };
        cfg.train.lr = lr;
        cfg.train.seed = seed;
        cfg.train.batch_size = batch;
        cfg.train.target_train_jaccard = target;
        cfg.synthetic.spec.hair = !b;
        let reloaded = parse_config(&cfg.to_text(), "echo").unwrap();
        prop_assert_eq!(&reloaded, &cfg);
        prop_assert_eq!(reloaded.to_text(), cfg.to_text());
    }
}
