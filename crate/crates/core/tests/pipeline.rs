use std::fs;
use std::path::Path;

use ddmd_core::audio_io::{decode_wav, load_audio, AudioSource, LoadConfig};
use ddmd_core::features::N_FEATURES;
use ddmd_core::pipeline::{extract_batch, scan_corpus, EntryStatus, ExtractConfig, FeatureStore};
use ddmd_core::synth::{render_corpus, synthesize, CORPUS_CLIP_SECONDS};
use ddmd_core::Label;

fn file_bytes(root: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    for label in ["DD", "NDD"] {
        let mut names: Vec<_> = fs::read_dir(root.join(label)).unwrap().map(|e| e.unwrap().path()).collect();
        names.sort();
        for p in names {
            out.push((p.strip_prefix(root).unwrap().display().to_string(), fs::read(&p).unwrap()));
        }
    }
    out
}

#[test]
fn corpus_render_is_deterministic_and_loadable() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let manifest = render_corpus(a.path(), 3, 42).unwrap();
    render_corpus(b.path(), 3, 42).unwrap();
    assert_eq!(manifest.entries.len(), 6);
    assert_eq!(file_bytes(a.path()), file_bytes(b.path()));

    let entry = &manifest.entries[0];
    let clip = load_audio(AudioSource::Path(&entry.path), &LoadConfig::default()).unwrap();
    assert_eq!(clip.len(), (CORPUS_CLIP_SECONDS * 22050.0) as usize);
    let peak = clip.samples().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    assert_eq!(peak, 1.0);
    // The 16-bit file decodes to the synthesized signal up to quantization.
    let direct = synthesize(&entry.spec).unwrap();
    let decoded = decode_wav(&fs::read(&entry.path).unwrap()).unwrap();
    assert_eq!(decoded.channel_count(), direct.channel_count());
    for (d, s) in decoded.channels().iter().zip(direct.channels()) {
        let err = d.iter().zip(s).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        assert!(err <= 1.0 / 32768.0, "quantization error {err}");
    }
}

#[test]
fn one_corrupt_file_among_ten() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = render_corpus(dir.path(), 5, 7).unwrap();
    let victim = &manifest.entries.iter().find(|e| e.label == Label::Ndd).unwrap().path;
    fs::write(victim, b"RIFF\x10\x00\x00\x00WAVEjunk").unwrap();

    let entries = scan_corpus(dir.path()).unwrap();
    assert_eq!(entries.len(), 10);
    assert!(entries.iter().all(|e| e.status == EntryStatus::Ok));
    let out = extract_batch(&entries, 3, &ExtractConfig::default()).unwrap();
    assert_eq!(out.store.rows.len(), 9);
    assert_eq!(out.failures.len(), 1);
    assert_eq!(&out.failures[0].path, victim);

    let expected: Vec<String> =
        entries.iter().filter(|e| &e.path != victim).map(|e| e.path.display().to_string()).collect();
    let got: Vec<String> = out.store.rows.iter().map(|r| r.path.clone()).collect();
    assert_eq!(got, expected);
}

#[test]
fn worker_count_does_not_change_csv() {
    let dir = tempfile::tempdir().unwrap();
    render_corpus(dir.path(), 4, 3).unwrap();
    let entries = scan_corpus(dir.path()).unwrap();
    let one = extract_batch(&entries, 1, &ExtractConfig::default()).unwrap().store.to_csv_bytes();
    let many = extract_batch(&entries, 5, &ExtractConfig::default()).unwrap().store.to_csv_bytes();
    assert_eq!(one, many);

    let csv = dir.path().join("features.csv");
    fs::write(&csv, &one).unwrap();
    let store = FeatureStore::load(&csv).unwrap();
    let data = store.to_training_set().unwrap();
    assert_eq!(data.len(), 8);
    assert_eq!(data.n_features(), N_FEATURES);
    assert_eq!(data.labels().iter().filter(|&&l| l == Label::Dd).count(), 4);
}

#[test]
fn missing_feature_file_names_the_path() {
    let err = FeatureStore::load(Path::new("/nonexistent/features.csv")).unwrap_err();
    assert!(err.to_string().contains("/nonexistent/features.csv"), "{err}");
}
