use std::collections::HashSet;
use std::fs;

use rccm::synthdata::{
    class_histogram, generate_dataset, generate_phantom, load_dataset, sample_rng, save_dataset, split_dataset,
    PhantomConfig, PlaqueClass, Sample,
};
use rccm::Error;

fn plaque_and_background_means(s: &Sample) -> (f64, f64) {
    let (mut p, mut np, mut b, mut nb) = (0.0, 0.0, 0.0, 0.0);
    for (&v, &m) in s.image.data.iter().zip(&s.mask.data) {
        if m != 0 {
            p += v as f64;
            np += 1.0;
        } else {
            b += v as f64;
            nb += 1.0;
        }
    }
    (p / np, b / nb)
}

#[test]
fn hyperechoic_plaque_is_brighter_than_background() {
    let cfg = PhantomConfig::default();
    let s = generate_phantom(&cfg, PlaqueClass::Hyperechoic, &mut sample_rng(7, 0)).unwrap();
    let (p, b) = plaque_and_background_means(&s);
    assert!(p > b, "plaque {p} background {b}");
}

#[test]
fn same_seed_gives_bit_identical_samples() {
    let cfg = PhantomConfig::default();
    for class in PlaqueClass::ALL {
        let a = generate_phantom(&cfg, class, &mut sample_rng(7, 3)).unwrap();
        let b = generate_phantom(&cfg, class, &mut sample_rng(7, 3)).unwrap();
        assert_eq!(a, b);
    }
}

#[test]
fn masks_are_single_component_and_within_area_range() {
    let cfg = PhantomConfig::default();
    let (lo, hi) = cfg.area_range;
    for i in 0..1000u64 {
        let class = PlaqueClass::ALL[(i % 3) as usize];
        let s = generate_phantom(&cfg, class, &mut sample_rng(11, i)).unwrap();
        let area = s.mask.count() as f64 * cfg.pixel_spacing * cfg.pixel_spacing;
        assert!(area >= lo && area <= hi, "draw {i}: area {area} outside ({lo}, {hi})");
        assert_eq!(s.mask.components(), 1, "draw {i} is not 4-connected");
        assert!(s.image.data.iter().all(|v| (0.0..=1.0).contains(v)));
        s.validate().unwrap();
    }
}

#[test]
fn class_mean_ordering_follows_contrasts() {
    // 120 draws per class; speckle at scale 0.25 on ~2000 pixels gives a
    // per-sample standard error of the plaque mean below 0.01, so a gap of
    // 0.1 between configured means is far outside noise.
    let cfg = PhantomConfig::default();
    let mut means = [0.0f64; 3];
    let mut sds = [0.0f64; 3];
    let n = 120;
    for class in PlaqueClass::ALL {
        let vals: Vec<f64> = (0..n)
            .map(|i| {
                let s = generate_phantom(&cfg, class, &mut sample_rng(5, 1000 * class.index() as u64 + i)).unwrap();
                plaque_and_background_means(&s).0
            })
            .collect();
        let m = vals.iter().sum::<f64>() / n as f64;
        let var = vals.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n as f64 - 1.0);
        means[class.index()] = m;
        sds[class.index()] = (var / n as f64).sqrt();
    }
    let c = cfg.class_contrasts;
    let mut order: Vec<usize> = (0..3).collect();
    order.sort_by(|&a, &b| means[a].total_cmp(&means[b]));
    let mut want: Vec<usize> = (0..3).collect();
    want.sort_by(|&a, &b| {
        c.get(PlaqueClass::ALL[a])
            .plaque
            .total_cmp(&c.get(PlaqueClass::ALL[b]).plaque)
    });
    assert_eq!(order, want, "means {means:?}");
    for class in PlaqueClass::ALL {
        let target = c.get(class).plaque;
        // clipping at [0, 1] biases bright plaques downward; allow 0.05
        assert!(
            (means[class.index()] - target).abs() < 0.05 + 4.0 * sds[class.index()],
            "{class}: mean {} vs configured {target}",
            means[class.index()]
        );
    }
}

#[test]
fn dataset_counts_and_histogram() {
    let cfg = PhantomConfig::default();
    assert!(generate_dataset(&cfg, [0, 0, 0]).unwrap().is_empty());
    let ds = generate_dataset(&cfg, [3, 6, 3]).unwrap();
    assert_eq!(ds.len(), 12);
    assert_eq!(class_histogram(&ds), [3, 6, 3]);
    let again = generate_dataset(&cfg, [3, 6, 3]).unwrap();
    assert_eq!(ds, again);
}

#[test]
fn clinical_like_class_proportions() {
    // 301:605:362 scaled down by ten
    let cfg = PhantomConfig {
        image_height: 32,
        image_width: 48,
        area_range: (1.0, 4.0),
        ..PhantomConfig::default()
    };
    let ds = generate_dataset(&cfg, [30, 60, 36]).unwrap();
    let h = class_histogram(&ds);
    let clinical = [301.0, 605.0, 362.0];
    let total_clinical: f64 = clinical.iter().sum();
    for c in 0..3 {
        let ours = h[c] as f64 / ds.len() as f64;
        assert!((ours - clinical[c] / total_clinical).abs() < 0.01, "class {c}: {ours}");
    }
}

#[test]
fn save_load_round_trip_is_identity() {
    let dir = tempfile::tempdir().unwrap();
    let ds = generate_dataset(&PhantomConfig::default(), [3, 6, 3]).unwrap();
    let written = save_dataset(&ds, dir.path()).unwrap();
    assert_eq!(written.len(), 25);
    let back = load_dataset(dir.path()).unwrap();
    assert_eq!(back, ds);
}

#[test]
fn load_reports_missing_file_by_name() {
    let dir = tempfile::tempdir().unwrap();
    let ds = generate_dataset(&PhantomConfig::default(), [1, 1, 1]).unwrap();
    save_dataset(&ds, dir.path()).unwrap();
    let victim = dir.path().join("masks").join(format!("{}.pgm", ds[1].id));
    fs::remove_file(&victim).unwrap();
    match load_dataset(dir.path()) {
        Err(Error::MissingFile(p)) => assert_eq!(p, victim),
        other => panic!("expected MissingFile, got {other:?}"),
    }
}

#[test]
fn load_error_kinds_are_distinct() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(load_dataset(dir.path()), Err(Error::EmptyDataset(_))));

    fs::write(dir.path().join("notes.txt"), "x").unwrap();
    assert!(matches!(load_dataset(dir.path()), Err(Error::MissingManifest(_))));

    assert!(matches!(
        load_dataset(&dir.path().join("does-not-exist")),
        Err(Error::Io { .. })
    ));

    let ds = generate_dataset(&PhantomConfig::default(), [1, 0, 0]).unwrap();
    let d2 = tempfile::tempdir().unwrap();
    save_dataset(&ds, d2.path()).unwrap();
    fs::write(d2.path().join("images").join(format!("{}.pgm", ds[0].id)), b"P5\n3 3\n255\nab").unwrap();
    assert!(matches!(load_dataset(d2.path()), Err(Error::CorruptImage { .. })));

    let d3 = tempfile::tempdir().unwrap();
    save_dataset(&ds, d3.path()).unwrap();
    let img = d3.path().join("images").join(format!("{}.pgm", ds[0].id));
    fs::write(&img, rccm::pgm::encode(2, 2, &[0, 0, 0, 0])).unwrap();
    assert!(matches!(load_dataset(d3.path()), Err(Error::ManifestMismatch(_))));
}

fn tiny_samples(counts: [usize; 3]) -> Vec<Sample> {
    let cfg = PhantomConfig {
        image_height: 8,
        image_width: 12,
        pixel_spacing: 1.0,
        area_range: (6.0, 20.0),
        ..PhantomConfig::default()
    };
    generate_dataset(&cfg, counts).unwrap()
}

#[test]
fn split_sizes_for_clinical_scale_set() {
    let ds = tiny_samples([301, 605, 364]);
    assert_eq!(ds.len(), 1270);
    let split = split_dataset(&ds, [0.6, 0.2, 0.2], 1).unwrap();
    assert_eq!(split.sizes(), [762, 254, 254]);
    // the clinical split was 751/258/261
    for (ours, theirs) in split.sizes().iter().zip([751usize, 258, 261]) {
        assert!(ours.abs_diff(theirs) <= 12);
    }
    // stratified: every split holds each class within one sample of its share
    for (part, ratio) in [(&split.train, 0.6), (&split.val, 0.2), (&split.test, 0.2)] {
        let h = class_histogram(part);
        for (c, &n) in [301usize, 605, 364].iter().enumerate() {
            assert!((h[c] as f64 - ratio * n as f64).abs() <= 1.0, "class {c}: {h:?}");
        }
    }
}

#[test]
fn split_is_a_deterministic_partition() {
    let ds = tiny_samples([3, 4, 3]);
    let a = split_dataset(&ds, [0.6, 0.2, 0.2], 9).unwrap();
    assert_eq!(a.sizes(), [6, 2, 2]);
    let b = split_dataset(&ds, [0.6, 0.2, 0.2], 9).unwrap();
    assert_eq!(a, b);
    let ids = |v: &[Sample]| v.iter().map(|s| s.id.clone()).collect::<HashSet<_>>();
    let (tr, va, te) = (ids(&a.train), ids(&a.val), ids(&a.test));
    assert!(tr.is_disjoint(&va) && tr.is_disjoint(&te) && va.is_disjoint(&te));
    let all: HashSet<_> = tr.union(&va).chain(te.iter()).cloned().collect();
    assert_eq!(all, ids(&ds));
}

#[test]
fn split_rejects_tiny_sets_and_bad_ratios() {
    let ds = tiny_samples([1, 1, 0]);
    assert!(split_dataset(&ds, [0.6, 0.2, 0.2], 0).is_err());
    let ds = tiny_samples([2, 2, 2]);
    assert!(split_dataset(&ds, [0.5, 0.2, 0.2], 0).is_err());
}

mod props {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn splits_partition_any_class_mix(a in 0usize..12, b in 0usize..12, c in 0usize..12, seed in 0u64..1000) {
            prop_assume!(a + b + c >= 3);
            let ds = tiny_samples([a, b, c]);
            let s = split_dataset(&ds, [0.6, 0.2, 0.2], seed).unwrap();
            prop_assert_eq!(s.sizes().iter().sum::<usize>(), ds.len());
            prop_assert_eq!(s.sizes(), rccm::synthdata::split_sizes(ds.len(), [0.6, 0.2, 0.2]));
            let mut ids: Vec<_> = s.train.iter().chain(&s.val).chain(&s.test).map(|x| x.id.clone()).collect();
            ids.sort();
            let mut want: Vec<_> = ds.iter().map(|x| x.id.clone()).collect();
            want.sort();
            prop_assert_eq!(ids, want);
        }
    }
}
