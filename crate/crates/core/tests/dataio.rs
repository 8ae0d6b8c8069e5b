use std::collections::HashSet;
use std::path::PathBuf;

use gcn_core::config::{load_splits, DataConfig};
use gcn_core::data::{load_idx, make_rot, psnr, rotate_image, rotation_angles, write_idx, ImageDataset, NUM_CLASSES};
use proptest::prelude::*;

fn data_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data")
}

fn vendored() -> ImageDataset {
    let dir = data_dir();
    load_idx(
        &dir.join("mnist5k-images-idx3-ubyte"),
        &dir.join("mnist5k-labels-idx1-ubyte"),
    )
    .unwrap()
}

fn desk_data(rotate: bool) -> DataConfig {
    let dir = data_dir();
    toml::from_str::<DataConfig>(&format!(
        "train_images = {:?}\ntrain_labels = {:?}\nrotate = {rotate}",
        dir.join("mnist5k-images-idx3-ubyte"),
        dir.join("mnist5k-labels-idx1-ubyte"),
    ))
    .unwrap()
}

fn image_keys(ds: &ImageDataset) -> HashSet<Vec<u64>> {
    (0..ds.len())
        .map(|i| ds.images().sample(i).iter().map(|v| v.to_bits()).collect())
        .collect()
}

#[test]
fn vendored_subset_shape_and_range() {
    let ds = vendored();
    assert_eq!(ds.images().shape(), [5000, 1, 28, 28]);
    assert!(ds.images().data().iter().all(|&p| (0.0..=1.0).contains(&p)));
    let mut counts = [0usize; NUM_CLASSES];
    for &l in ds.labels() {
        counts[l as usize] += 1;
    }
    assert!(counts.iter().all(|&c| c >= 400), "{counts:?}");
}

#[test]
fn desk_splits_are_disjoint_and_sized() {
    let s = load_splits(&desk_data(false)).unwrap();
    assert_eq!((s.train.len(), s.val.len(), s.test.len()), (2000, 500, 1000));
    let (tr, va, te) = (image_keys(&s.train), image_keys(&s.val), image_keys(&s.test));
    assert!(tr.is_disjoint(&te));
    assert!(va.is_disjoint(&te));
    assert!(tr.is_disjoint(&va));
    // The source file is sorted by class; a seeded shuffle must mix it.
    assert!(s.test.labels().iter().collect::<HashSet<_>>().len() == NUM_CLASSES);
}

#[test]
fn rotated_splits_keep_labels_and_mass() {
    let plain = load_splits(&desk_data(false)).unwrap();
    let rot = load_splits(&desk_data(true)).unwrap();
    assert_eq!(plain.train.labels(), rot.train.labels());
    assert_eq!(plain.test.labels(), rot.test.labels());
    assert_ne!(plain.test.images(), rot.test.images());
    // Digits sit well inside the frame, so rotation keeps nearly all ink.
    let mass = |d: &[f64]| d.iter().sum::<f64>();
    let ratio = mass(rot.test.images().data()) / mass(plain.test.images().data());
    assert!((0.95..1.05).contains(&ratio), "{ratio}");
}

#[test]
fn rotated_set_is_replayable_through_idx() {
    let ds = vendored().subset(&(0..50).collect::<Vec<_>>());
    let rot = make_rot(&ds, 7).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let (i1, l1) = (dir.path().join("a-img"), dir.path().join("a-lab"));
    let (i2, l2) = (dir.path().join("b-img"), dir.path().join("b-lab"));
    write_idx(&rot, &i1, &l1).unwrap();
    let back = load_idx(&i1, &l1).unwrap();
    assert_eq!(back.labels(), rot.labels());
    let worst = back
        .images()
        .data()
        .iter()
        .zip(rot.images().data())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    assert!(worst <= 0.5 / 255.0 + 1e-12);
    write_idx(&back, &i2, &l2).unwrap();
    assert_eq!(std::fs::read(&i1).unwrap(), std::fs::read(&i2).unwrap());
    assert_eq!(std::fs::read(&l1).unwrap(), std::fs::read(&l2).unwrap());
}

/// Rotation by destination-to-source lookup, written out per corner weight.
fn reference_rotate(src: &[f64], size: usize, angle: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let pixel = |y: f64, x: f64| -> f64 {
        if y < 0.0 || x < 0.0 || y > (size - 1) as f64 || x > (size - 1) as f64 {
            0.0
        } else {
            src[y as usize * size + x as usize]
        }
    };
    let mut out = Vec::with_capacity(size * size);
    for row in 0..size {
        for col in 0..size {
            let (px, py) = (col as f64 - c, row as f64 - c);
            // Source point is the destination rotated by -angle.
            let sx = px * angle.cos() + py * angle.sin() + c;
            let sy = py * angle.cos() - px * angle.sin() + c;
            let (x0, y0) = (sx.floor(), sy.floor());
            let (ax, ay) = (sx - x0, sy - y0);
            let mut v = 0.0;
            for (dy, wy) in [(0.0, 1.0 - ay), (1.0, ay)] {
                for (dx, wx) in [(0.0, 1.0 - ax), (1.0, ax)] {
                    v += wy * wx * pixel(y0 + dy, x0 + dx);
                }
            }
            out.push(v);
        }
    }
    out
}

#[test]
fn seed_seven_first_image_matches_reference() {
    let ds = vendored().subset(&[0]);
    let rot = make_rot(&ds, 7).unwrap();
    let angle = rotation_angles(1, 7)[0];
    let want = reference_rotate(ds.images().sample(0), 28, angle);
    let got = rot.images().sample(0);
    for (a, b) in got.iter().zip(&want) {
        assert!((a - b).abs() < 1e-12);
    }
    let ratio = got.iter().sum::<f64>() / ds.images().sample(0).iter().sum::<f64>();
    assert!((0.85..=1.15).contains(&ratio), "{ratio}");
}

/// Anti-aliased stroke digits: a "0" ring and a slanted "1" bar with a
/// Gaussian cross-section.
fn digit_fixtures() -> Vec<Vec<f64>> {
    let stroke = |d: f64| (-d * d / 2.0).exp();
    let ring = (0..28 * 28)
        .map(|i| {
            let (y, x) = ((i / 28) as f64 - 13.5, (i % 28) as f64 - 13.5);
            stroke(((y / 1.4).hypot(x) - 6.0).abs())
        })
        .collect();
    let bar = (0..28 * 28)
        .map(|i| {
            let (y, x) = ((i / 28) as f64 - 13.5, (i % 28) as f64 - 13.5);
            let t = y.clamp(-9.0, 9.0);
            stroke(((x - 0.3 * t).powi(2) + (y - t).powi(2)).sqrt())
        })
        .collect();
    vec![ring, bar]
}

#[test]
fn rotate_and_back_preserves_digit_fixtures() {
    for img in digit_fixtures() {
        for angle in [0.3, 1.0, 2.5, 4.0] {
            let back = rotate_image(&rotate_image(&img, 28, 28, angle), 28, 28, -angle);
            let db = psnr(&img, &back);
            assert!(db >= 25.0, "angle {angle}: {db:.1} dB");
        }
    }
}

/// Raw digits have one-pixel edges that two bilinear passes soften, so the
/// bound here is looser than for the anti-aliased fixtures.
#[test]
fn rotate_and_back_keeps_raw_digits_close() {
    let ds = vendored();
    for i in (0..5000).step_by(500) {
        let img = ds.images().sample(i);
        for angle in [0.3, 1.0, 2.5, 4.0] {
            let back = rotate_image(&rotate_image(img, 28, 28, angle), 28, 28, -angle);
            let db = psnr(img, &back);
            assert!(db >= 20.0, "image {i} angle {angle}: {db:.1} dB");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn quarter_turns_compose_to_identity(pixels in prop::collection::vec(0.0f64..1.0, 36)) {
        let mut img = pixels.clone();
        for _ in 0..4 {
            img = rotate_image(&img, 6, 6, std::f64::consts::FRAC_PI_2);
        }
        for (a, b) in img.iter().zip(&pixels) {
            prop_assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn rotation_is_linear(a in prop::collection::vec(0.0f64..1.0, 25), k in -2.0f64..2.0, angle in 0.0f64..6.3) {
        let scaled: Vec<f64> = a.iter().map(|v| k * v).collect();
        let lhs = rotate_image(&scaled, 5, 5, angle);
        let rhs = rotate_image(&a, 5, 5, angle);
        for (p, q) in lhs.iter().zip(&rhs) {
            prop_assert!((p - k * q).abs() < 1e-12);
        }
    }
}
