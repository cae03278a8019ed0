use tafnet::data::{
    generate_dataset, generate_scene, generate_scene_with_layout, generate_split, read_dataset, read_split, scene_rng,
    write_dataset, write_split, Illumination, Normalization, ScenePair, SynthConfig,
};
use tafnet::Exec;

fn small() -> SynthConfig {
    SynthConfig {
        train_size: 6,
        val_size: 3,
        test_size: 4,
        seed: 11,
        ..SynthConfig::default()
    }
}

#[test]
fn generation_is_deterministic_and_mode_independent() {
    let a = generate_dataset(&small(), Exec::Parallel).unwrap();
    let b = generate_dataset(&small(), Exec::Sequential).unwrap();
    assert_eq!(a, b);
    let c = generate_dataset(&SynthConfig { seed: 12, ..small() }, Exec::Sequential).unwrap();
    assert_ne!(a.train, c.train);
    // a scene depends on its own index only, not on how many were generated
    let longer = generate_split(
        &SynthConfig {
            train_size: 9,
            ..small()
        },
        "train",
        9,
        Exec::Sequential,
    );
    assert_eq!(&longer[..6], &a.train[..]);
}

#[test]
fn bright_fraction_is_respected() {
    let cfg = SynthConfig {
        image_height: 32,
        image_width: 32,
        ..SynthConfig::default()
    };
    let n = 10_000;
    let bright = (0..n)
        .filter(|&i| {
            let mut rng = scene_rng(cfg.seed, "fraction", i);
            generate_scene(&mut rng, &cfg, "x").illumination == Illumination::Bright
        })
        .count();
    let frac = bright as f64 / n as f64;
    assert!((0.47..=0.53).contains(&frac), "{frac}");
}

/// Mean person-minus-background magnitude of one channel plane, person
/// pixels being those within a blob radius of any center.
fn contrast(plane: &[f64], w: usize, centers: &[(f64, f64, f64)]) -> Option<f64> {
    let (mut fg, mut nf, mut bg, mut nb) = (0.0, 0usize, 0.0, 0usize);
    for (i, &v) in plane.iter().enumerate() {
        let (x, y) = ((i % w) as f64 + 0.5, (i / w) as f64 + 0.5);
        let inside = centers
            .iter()
            .any(|&(cx, cy, r)| (x - cx).powi(2) + (y - cy).powi(2) < (0.5 * r).powi(2));
        if inside {
            fg += v;
            nf += 1;
        } else {
            bg += v;
            nb += 1;
        }
    }
    (nf > 0 && nb > 0).then(|| (fg / nf as f64 - bg / nb as f64).abs())
}

#[test]
fn modalities_swap_contrast_with_illumination() {
    let cfg = SynthConfig::default();
    let (mut rgb, mut thermal) = ([Vec::new(), Vec::new()], [Vec::new(), Vec::new()]);
    for i in 0..600 {
        let mut rng = scene_rng(3, "contrast", i);
        let (pair, layout) = generate_scene_with_layout(&mut rng, &cfg, "x");
        let k = (pair.illumination == Illumination::Dark) as usize;
        let w = cfg.image_width;
        let rgb_centers: Vec<_> = layout
            .blobs
            .iter()
            .map(|b| (b.center.x, b.center.y, b.radius))
            .collect();
        let t_centers: Vec<_> = layout
            .blobs
            .iter()
            .map(|b| (b.thermal_center.x, b.thermal_center.y, b.radius))
            .collect();
        let luminance: Vec<f64> = (0..w * cfg.image_height)
            .map(|p| (0..3).map(|c| pair.rgb.plane(0, c)[p]).sum::<f64>() / 3.0)
            .collect();
        rgb[k].extend(contrast(&luminance, w, &rgb_centers));
        thermal[k].extend(contrast(pair.thermal.plane(0, 0), w, &t_centers));
    }
    let mean = |v: &Vec<f64>| v.iter().sum::<f64>() / v.len() as f64;
    assert!(rgb[0].len() >= 250 && rgb[1].len() >= 250);
    assert!(
        mean(&rgb[0]) > mean(&rgb[1]),
        "rgb {} vs {}",
        mean(&rgb[0]),
        mean(&rgb[1])
    );
    assert!(
        mean(&thermal[1]) > mean(&thermal[0]),
        "thermal {} vs {}",
        mean(&thermal[1]),
        mean(&thermal[0])
    );
}

#[test]
fn quantized_split_round_trips_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let pairs = generate_split(&small(), "train", 5, Exec::Sequential);
    write_split(dir.path(), "train", &pairs).unwrap();
    let first = read_split(dir.path(), "train").unwrap();
    assert_eq!(first.len(), 5);
    for (a, b) in pairs.iter().zip(&first) {
        assert_eq!(a.id, b.id);
        assert_eq!(a.points, b.points);
        assert_eq!(a.illumination, b.illumination);
        // 8-bit storage: within half a level
        assert!(a.rgb.max_abs_diff(&b.rgb) <= 0.5 / 255.0 + 1e-12);
        assert!(a.thermal.max_abs_diff(&b.thermal) <= 0.5 / 255.0 + 1e-12);
    }
    let other = tempfile::tempdir().unwrap();
    write_split(other.path(), "train", &first).unwrap();
    let second: Vec<ScenePair> = read_split(other.path(), "train").unwrap();
    assert_eq!(first, second);
    for entry in std::fs::read_dir(dir.path().join("train")).unwrap() {
        let name = entry.unwrap().file_name();
        let a = std::fs::read(dir.path().join("train").join(&name)).unwrap();
        let b = std::fs::read(other.path().join("train").join(&name)).unwrap();
        assert_eq!(a, b, "{name:?}");
    }
}

#[test]
fn dataset_round_trip_and_empty_split() {
    let dir = tempfile::tempdir().unwrap();
    let data = generate_dataset(&SynthConfig { val_size: 0, ..small() }, Exec::default()).unwrap();
    write_dataset(&data, dir.path()).unwrap();
    let back = read_dataset(dir.path()).unwrap();
    assert!(back.val.is_empty());
    assert_eq!(back.train.len(), 6);
    assert_eq!(back.test.len(), 4);
}

#[test]
fn normalization_matches_two_pass_statistics() {
    let pairs = generate_split(&small(), "train", 8, Exec::Sequential);
    let norm = Normalization::compute(&pairs).unwrap();
    for k in 0..4 {
        let values: Vec<f64> = pairs
            .iter()
            .flat_map(|p| {
                if k < 3 {
                    p.rgb.plane(0, k).to_vec()
                } else {
                    p.thermal.plane(0, 0).to_vec()
                }
            })
            .collect();
        let n = values.len() as f64;
        let mu = values.iter().sum::<f64>() / n;
        let sd = (values.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / n).sqrt();
        assert!((norm.mean[k] - mu).abs() < 1e-9);
        assert!((norm.std[k] - sd).abs() < 1e-9);
    }
    // normalized training data has zero mean and unit spread per channel
    let (rgb, thermal) = norm.normalize(&pairs[0]);
    assert_eq!(rgb.shape(), pairs[0].rgb.shape());
    assert_eq!(thermal.shape(), pairs[0].thermal.shape());
    let back = norm.denormalize_rgb(&rgb);
    assert!(back.max_abs_diff(&pairs[0].rgb) < 1e-12);
}
