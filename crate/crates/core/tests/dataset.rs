mod common;

use std::collections::{BTreeMap, BTreeSet};

use gender_audit::dataset::*;
use gender_audit::Error;
use proptest::prelude::*;

const GENDERS: [GenderLabel; 3] = [GenderLabel::Male, GenderLabel::Female, GenderLabel::Nonbinary];

fn manifest_from(rows: &[(usize, usize, Option<u8>)]) -> DatasetManifest {
    let records = rows
        .iter()
        .enumerate()
        .map(|(i, &(id, g, fitz))| {
            ImageRecord::new(
                format!("img/{i:04}.png"),
                format!("id{id}"),
                GENDERS[g],
                fitz.map(|v| FitzpatrickType::new(v).unwrap()),
            )
            .unwrap()
        })
        .collect();
    DatasetManifest::new("prop", records)
}

fn rows_strategy(max: usize) -> impl Strategy<Value = Vec<(usize, usize, Option<u8>)>> {
    prop::collection::vec((0usize..12, 0usize..3, prop::option::of(1u8..=6)), 1..max)
}

#[test]
fn fitzpatrick_mapping() {
    let expect = [SkinTone::Light, SkinTone::Light, SkinTone::Brown, SkinTone::Brown, SkinTone::Dark, SkinTone::Dark];
    for (v, t) in (1..=6).zip(expect) {
        assert_eq!(fitzpatrick_to_tone(v).unwrap(), t);
    }
    for bad in [0, 7, -1] {
        let err = fitzpatrick_to_tone(bad).unwrap_err();
        assert!(err.to_string().contains(&bad.to_string()), "{err}");
    }
}

#[test]
fn ten_records_split_eight_one_one() {
    let m = manifest_from(&(0..10).map(|i| (i, i % 3, Some(2))).collect::<Vec<_>>());
    let f = SplitFractions::new(0.8, 0.1, 0.1).unwrap();
    let a = split_dataset(&m, f, 7, false).unwrap();
    let b = split_dataset(&m, f, 7, false).unwrap();
    assert_eq!(a, b);
    let count = |s| a.count_where(|r| r.split == s);
    assert_eq!((count(Split::Train), count(Split::Val), count(Split::Test)), (8, 1, 1));
}

#[test]
fn large_split_counts() {
    let f = SplitFractions::new(0.90, 0.05, 0.05).unwrap();
    let [tr, va, te] = f.target_counts(25_561);
    assert!((tr as i64 - 23_004).abs() <= 1, "{tr}");
    assert!((va as i64 - 1_279).abs() <= 1, "{va}");
    assert!((te as i64 - 1_278).abs() <= 1, "{te}");
    assert_eq!(tr + va + te, 25_561);
}

#[test]
fn oversized_identity_is_infeasible() {
    let mut rows: Vec<_> = (0..6).map(|_| (0, 0, Some(1))).collect();
    rows.extend([(1, 1, Some(3)), (2, 2, Some(5))]);
    let m = manifest_from(&rows);
    let f = SplitFractions::new(0.5, 0.25, 0.25).unwrap();
    assert!(matches!(split_dataset(&m, f, 0, true), Err(Error::InfeasibleSplit(_))));
    assert!(split_dataset(&m, f, 0, false).is_ok());
}

#[test]
fn bad_fractions_rejected() {
    assert!(SplitFractions::new(0.5, 0.5, 0.1).is_err());
    assert!(SplitFractions::new(1.0, 0.0, 0.0).is_err());
}

#[test]
fn distribution_examples() {
    let m = manifest_from(&[(0, 0, Some(6)), (1, 0, Some(5)), (2, 1, Some(1)), (3, 1, Some(2))]);
    let d = group_distribution(&m).unwrap();
    assert_eq!(d.len(), 2);
    assert_eq!(d[&GroupKey::new(GenderLabel::Male, SkinTone::Dark)], 0.5);
    assert_eq!(d[&GroupKey::new(GenderLabel::Female, SkinTone::Light)], 0.5);

    let mut rows = vec![(0, 0, Some(6)); 13];
    rows.extend(vec![(1, 1, Some(1)); 987]);
    let d = group_distribution(&manifest_from(&rows)).unwrap();
    assert!((d[&GroupKey::new(GenderLabel::Male, SkinTone::Dark)] - 0.013).abs() < 1e-12);

    assert!(group_distribution(&DatasetManifest::new("empty", vec![])).is_err());
}

#[test]
fn unknown_tone_forms_its_own_group() {
    let m = manifest_from(&[(0, 0, None), (1, 0, Some(3))]);
    let d = group_distribution(&m).unwrap();
    assert_eq!(d[&GroupKey::new(GenderLabel::Male, SkinTone::Unknown)], 0.5);
}

#[test]
fn manifest_file_round_trip_with_images() {
    let dir = tempfile::tempdir().unwrap();
    let m = common::group_fixture(dir.path(), &[(GroupKey::new(GenderLabel::Nonbinary, SkinTone::Brown), 5)]);
    let path = dir.path().join("manifest.csv");
    let back = load_manifest(&path).unwrap();
    assert_eq!(back.records, m.records);
    let img = load_image(&back.records[0], 20).unwrap();
    assert_eq!(img.shape(), [20, 20, 3]);
}

#[test]
fn load_image_examples() {
    let dir = tempfile::tempdir().unwrap();
    let one = dir.path().join("one.png");
    image::RgbImage::from_pixel(1, 1, image::Rgb([51, 102, 204])).save(&one).unwrap();
    let t = load_image_path(&one, 227).unwrap();
    assert_eq!(t.shape(), [227, 227, 3]);
    for (y, x) in [(0, 0), (113, 57), (226, 226)] {
        assert_eq!([t.get(y, x, 0), t.get(y, x, 1), t.get(y, x, 2)], [0.2, 0.4, 0.8]);
    }

    let same = dir.path().join("same.png");
    let src = image::RgbImage::from_fn(227, 227, |x, y| image::Rgb([(x % 256) as u8, (y % 256) as u8, ((x + y) % 256) as u8]));
    src.save(&same).unwrap();
    let t = load_image_path(&same, 227).unwrap();
    assert_eq!(t.to_rgb8(), src);

    let missing = dir.path().join("nope.png");
    let err = load_image_path(&missing, 32).unwrap_err();
    assert!(err.to_string().contains("nope.png"), "{err}");
    let corrupt = dir.path().join("bad.png");
    std::fs::write(&corrupt, b"not an image").unwrap();
    assert!(matches!(load_image_path(&corrupt, 32), Err(Error::Image { .. })));
}

proptest! {
    #[test]
    fn split_union_is_the_input_and_disjoint(rows in rows_strategy(60), seed in any::<u64>(), disjoint in any::<bool>()) {
        let m = manifest_from(&rows);
        let f = SplitFractions::new(0.6, 0.2, 0.2).unwrap();
        let out = match split_dataset(&m, f, seed, disjoint) {
            Ok(out) => out,
            Err(Error::InfeasibleSplit(_)) => return Ok(()),
            Err(e) => return Err(TestCaseError::fail(e.to_string())),
        };
        prop_assert_eq!(out.len(), m.len());
        let parts: Vec<DatasetManifest> = [Split::Train, Split::Val, Split::Test].iter().map(|&s| out.subset(s)).collect();
        prop_assert_eq!(parts.iter().map(DatasetManifest::len).sum::<usize>(), m.len());
        let mut seen = BTreeSet::new();
        for p in &parts {
            for r in &p.records {
                prop_assert!(seen.insert(r.image_path.clone()));
            }
        }
        for (a, b) in out.records.iter().zip(&m.records) {
            prop_assert_eq!(&a.image_path, &b.image_path);
            prop_assert_eq!(&a.identity_id, &b.identity_id);
            prop_assert_eq!(a.gender, b.gender);
        }
        let targets = f.target_counts(m.len());
        let mut largest = 1;
        let mut ids: BTreeMap<&str, usize> = BTreeMap::new();
        for r in &m.records {
            *ids.entry(&r.identity_id).or_default() += 1;
        }
        if disjoint {
            largest = ids.values().copied().max().unwrap();
            let mut split_of: BTreeMap<&str, Split> = BTreeMap::new();
            for r in &out.records {
                let prev = split_of.insert(&r.identity_id, r.split);
                prop_assert!(prev.is_none() || prev == Some(r.split));
            }
        }
        for (p, t) in parts.iter().zip(targets) {
            prop_assert!((p.len() as i64 - t as i64).abs() <= largest as i64);
        }
        prop_assert_eq!(split_dataset(&m, f, seed, disjoint).unwrap(), out);
    }

    #[test]
    fn distribution_sums_to_one(rows in rows_strategy(200)) {
        let m = manifest_from(&rows);
        let d = group_distribution(&m).unwrap();
        let sum: f64 = d.values().sum();
        prop_assert!((sum - 1.0).abs() <= 1e-9);
        prop_assert!(d.values().all(|&p| p > 0.0));
        for r in &m.records {
            prop_assert!(d.contains_key(&r.group()));
        }
    }

    #[test]
    fn manifest_save_load_is_identity(rows in rows_strategy(30), seed in any::<u64>()) {
        let dir = tempfile::tempdir().unwrap();
        let m = split_dataset(&manifest_from(&rows), SplitFractions::new(0.6, 0.2, 0.2).unwrap(), seed, false).unwrap();
        let path = dir.path().join("m.csv");
        save_manifest(&m, &path).unwrap();
        let back = load_manifest(&path).unwrap();
        prop_assert_eq!(back.records.len(), m.records.len());
        for (a, b) in back.records.iter().zip(&m.records) {
            prop_assert!(a.image_path.ends_with(&b.image_path));
            prop_assert_eq!(&a.identity_id, &b.identity_id);
            prop_assert_eq!(a.gender, b.gender);
            prop_assert_eq!(a.fitzpatrick, b.fitzpatrick);
            prop_assert_eq!(a.tone, b.tone);
            prop_assert_eq!(a.split, b.split);
        }
    }
}
