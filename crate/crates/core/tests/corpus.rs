use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use vggfer::{
    extract_features, generate_synthetic_corpus, load_corpus, Error, Expression, FeatureCache, LoadPolicy, TapPoint, VggConfig,
    WeightBundle,
};

fn taps() -> BTreeSet<TapPoint> {
    [TapPoint::Block2Pool, TapPoint::Fc1].into_iter().collect()
}

#[test]
fn synthetic_corpus_is_reproducible_and_balanced() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let ca = generate_synthetic_corpus(a.path(), 3, 4, (48, 40)).unwrap();
    let cb = generate_synthetic_corpus(b.path(), 3, 4, (48, 40)).unwrap();
    assert_eq!(ca.len(), 28);
    assert_eq!(ca.content_hash(), cb.content_hash());
    assert!(ca.class_counts.values().all(|&n| n == 4));
    assert_eq!(ca.samples[0].source_size(), (48, 40));

    let loaded = load_corpus(a.path(), LoadPolicy::Abort).unwrap();
    assert_eq!(loaded.content_hash(), ca.content_hash());
    assert_eq!(loaded.ids(), ca.ids());

    let c = tempfile::tempdir().unwrap();
    let other = generate_synthetic_corpus(c.path(), 4, 4, (48, 40)).unwrap();
    assert_ne!(other.content_hash(), ca.content_hash());
}

#[test]
fn ids_are_sorted_by_label_then_name() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = generate_synthetic_corpus(dir.path(), 1, 3, (32, 32)).unwrap();
    let labels = corpus.labels();
    let mut sorted = labels.clone();
    sorted.sort();
    assert_eq!(labels, sorted);
    assert_eq!(corpus.ids()[0], format!("{}/{}_000", labels[0], labels[0]));
}

fn first_image(root: &Path) -> std::path::PathBuf {
    let class = root.join(Expression::ALL[0].name());
    let mut files: Vec<_> = fs::read_dir(&class).unwrap().map(|e| e.unwrap().path()).collect();
    files.sort();
    files.remove(0)
}

#[test]
fn unreadable_images_abort_or_are_skipped() {
    let dir = tempfile::tempdir().unwrap();
    generate_synthetic_corpus(dir.path(), 2, 3, (32, 32)).unwrap();
    let bad = dir.path().join("sad").join("broken.pgm");
    fs::write(&bad, b"P5\n32 32\n255\n").unwrap();
    assert!(matches!(
        load_corpus(dir.path(), LoadPolicy::Abort),
        Err(Error::InvalidImage { .. })
    ));
    let skipped = load_corpus(dir.path(), LoadPolicy::Skip).unwrap();
    assert_eq!(skipped.len(), 21);
    assert_eq!(skipped.skipped.len(), 1);
    assert_eq!(skipped.skipped[0].0, bad);
}

#[test]
fn unknown_class_directory_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    generate_synthetic_corpus(dir.path(), 2, 2, (32, 32)).unwrap();
    fs::create_dir(dir.path().join("contempt")).unwrap();
    assert!(matches!(
        load_corpus(dir.path(), LoadPolicy::Abort),
        Err(Error::UnknownLabel { .. })
    ));
}

#[test]
fn empty_root_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    assert!(load_corpus(dir.path(), LoadPolicy::Abort).is_err());
}

#[test]
fn cache_hits_are_bit_identical_and_pixel_edits_miss() {
    let data = tempfile::tempdir().unwrap();
    let cache_dir = tempfile::tempdir().unwrap();
    let cache = FeatureCache::new(cache_dir.path());
    let weights = WeightBundle::random(VggConfig::micro(), 1).unwrap();
    let corpus = generate_synthetic_corpus(data.path(), 6, 2, (64, 64)).unwrap();

    let cold = extract_features(&corpus, &weights, &taps(), Some(&cache)).unwrap();
    assert!(cold.cache_hits.is_empty());
    let warm = extract_features(&corpus, &weights, &taps(), Some(&cache)).unwrap();
    assert_eq!(warm.cache_hits, taps());
    for tap in taps() {
        let (a, b) = (&cold.features[&tap], &warm.features[&tap]);
        assert_eq!(a.sample_ids, b.sample_ids);
        assert_eq!(a.labels, b.labels);
        assert_eq!(a.data().len(), b.data().len());
        assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
    let uncached = extract_features(&corpus, &weights, &taps(), None).unwrap();
    assert_eq!(uncached.features, cold.features);

    // change a single pixel of one image
    let path = first_image(data.path());
    let mut bytes = fs::read(&path).unwrap();
    let last = bytes.len() - 1;
    bytes[last] = bytes[last].wrapping_add(1);
    fs::write(&path, bytes).unwrap();
    let edited = load_corpus(data.path(), LoadPolicy::Abort).unwrap();
    assert_ne!(edited.content_hash(), corpus.content_hash());
    let after = extract_features(&edited, &weights, &taps(), Some(&cache)).unwrap();
    assert!(after.cache_hits.is_empty());

    // and different weights miss too
    let other = WeightBundle::random(VggConfig::micro(), 2).unwrap();
    let again = extract_features(&corpus, &other, &taps(), Some(&cache)).unwrap();
    assert!(again.cache_hits.is_empty());
}
