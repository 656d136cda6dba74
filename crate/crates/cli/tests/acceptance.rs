//! Acceptance criteria, one PASS/FAIL line each. Runs as a plain binary so
//! the lines always reach stdout; exits nonzero if any criterion fails.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use reqwest::multipart::{Form, Part};
use serde_json::Value;

use ddmd_cli::{cmd_extract, cmd_predict, cmd_synth, cmd_train, report_path};
use ddmd_core::audio_io::{encode_wav_i16, CanonicalClip};
use ddmd_core::evalkit::{ClassificationReport, Confusion};
use ddmd_core::features::{FeatureVector, N_FEATURES};
use ddmd_core::forest::{fit, fit_sequential, gini, load_model, ForestModel, Hyperparams};
use ddmd_core::pipeline::{extract_batch, scan_corpus, ExtractConfig, FeatureStore};
use ddmd_core::spectral::{detect_peaks, fft_forward, freq_stats, frequency_features};
use ddmd_core::synth::{synthesize, SynthKind, SynthSpec};
use ddmd_core::Label;
use ddmd_service::{router, AppState, ServiceConfig};

const SEED: u64 = 42;
const SR: f64 = 22050.0;

struct Outcome {
    name: &'static str,
    pass: bool,
    detail: String,
}

#[derive(Default)]
struct Checks {
    failures: Vec<String>,
}

impl Checks {
    fn check(&mut self, ok: bool, what: impl Into<String>) {
        if !ok {
            self.failures.push(what.into());
        }
    }

    fn finish(self, name: &'static str, summary: String) -> Outcome {
        let pass = self.failures.is_empty();
        let detail = if pass { summary } else { format!("{summary}; {}", self.failures.join("; ")) };
        Outcome { name, pass, detail }
    }
}

fn direct_dft(x: &[Complex64]) -> Vec<Complex64> {
    let n = x.len();
    let roots: Vec<Complex64> = (0..n).map(|m| Complex64::from_polar(1.0, -2.0 * PI * m as f64 / n as f64)).collect();
    (0..n).map(|k| x.iter().enumerate().map(|(j, &v)| v * roots[(k * j) % n]).sum()).collect()
}

fn fft_oracle() -> Outcome {
    let started = Instant::now();
    let mut c = Checks::default();
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let mut worst = 0.0f64;
    let mut worst_parseval = 0.0f64;
    let mut signals = 0;
    for n in (2..=256).step_by(2) {
        for _ in 0..100 {
            let x: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let spectrum = fft_forward(&x, SR).unwrap();
            let m = spectrum.n();
            let padded: Vec<Complex64> =
                (0..m).map(|i| Complex64::new(x.get(i).copied().unwrap_or(0.0), 0.0)).collect();
            let reference = direct_dft(&padded);
            let err = spectrum.bins().iter().zip(&reference).fold(0.0f64, |w, (a, b)| w.max((a - b).norm()));
            worst = worst.max(err);
            let time_energy: f64 = x.iter().map(|v| v * v).sum();
            let freq_energy: f64 = spectrum.bins().iter().map(|b| b.norm_sqr()).sum::<f64>() / m as f64;
            worst_parseval = worst_parseval.max((time_energy - freq_energy).abs() / time_energy);
            signals += 1;
        }
    }
    let elapsed = started.elapsed();
    c.check(worst < 1e-9, format!("max |fft - dft| = {worst:e}"));
    c.check(worst_parseval < 1e-6, format!("Parseval rel. error {worst_parseval:e}"));
    c.check(elapsed < Duration::from_secs(10), format!("took {elapsed:?}"));
    c.finish(
        "FFT oracle equivalence",
        format!("{signals} signals, N=2..256 even, max err {worst:.2e}, Parseval {worst_parseval:.2e}, {elapsed:.2?}"),
    )
}

fn frequency_features_correct() -> Outcome {
    let mut c = Checks::default();
    let n = 1usize << 15;
    let bin = SR / n as f64;

    let sine: Vec<f64> = (0..n).map(|i| (2.0 * PI * 440.0 * i as f64 / SR).sin()).collect();
    let peaks = detect_peaks(&fft_forward(&sine, SR).unwrap());
    let stats = freq_stats(&peaks.freqs);
    c.check(peaks.len() == 1, format!("440 Hz: {} peaks", peaks.len()));
    c.check((stats.mean - 440.0).abs() <= bin, format!("440 Hz mean {}", stats.mean));
    c.check(stats.std < bin, format!("440 Hz std {}", stats.std));

    // Hand evaluation: two peaks at exactly bins 446 and 743.
    let (f1, f2) = (446.0 * bin, 743.0 * bin);
    let two: Vec<f64> = (0..n)
        .map(|i| {
            let t = i as f64 / SR;
            (2.0 * PI * f1 * t).sin() + (2.0 * PI * f2 * t).sin()
        })
        .collect();
    let peaks = detect_peaks(&fft_forward(&two, SR).unwrap());
    c.check(peaks.bins == [446, 743], format!("two-tone peak bins {:?}", peaks.bins));
    let expected_mean = (f1 + f2) / 2.0;
    let expected_std = (f2 - f1) / 2.0;
    let peak = two.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let clip = CanonicalClip::from_normalized(two.iter().map(|v| v / peak).collect(), SR as u32);
    let [mean, std] = frequency_features(&clip).unwrap();
    c.check((mean - expected_mean).abs() < 1e-9, format!("two-tone mean {mean} vs {expected_mean}"));
    c.check((std - expected_std).abs() < 1e-9, format!("two-tone std {std} vs {expected_std}"));
    c.check((mean - 400.0).abs() <= bin, format!("two-tone mean {mean}"));
    c.check((std - 100.0).abs() <= bin, format!("two-tone std {std}"));
    c.finish(
        "Frequency-feature correctness",
        format!(
            "440 Hz mean {:.4} std {:.4}; two-tone mean {mean:.4} std {std:.4} (bin {bin:.4})",
            stats.mean, stats.std
        ),
    )
}

struct Corpus {
    features: PathBuf,
    model: PathBuf,
    render_and_extract: Duration,
}

fn feature_vector_contract(work: &Path) -> (Outcome, Corpus) {
    let mut c = Checks::default();
    let root = work.join("corpus");
    let started = Instant::now();
    let manifest = cmd_synth(&root, 200, SEED).unwrap();
    let features = work.join("features.csv");
    let summary = cmd_extract(&root, &features, 8, &ExtractConfig::default()).unwrap();
    let render_and_extract = started.elapsed();
    c.check(manifest.entries.len() == 400, format!("{} files rendered", manifest.entries.len()));
    c.check(summary.rows == 400 && summary.failures.is_empty(), format!("{} rows", summary.rows));

    let entries = scan_corpus(&root).unwrap();
    let serial = extract_batch(&entries, 1, &ExtractConfig::default()).unwrap().store.to_csv_bytes();
    let parallel = std::fs::read(&features).unwrap();
    let rerun = extract_batch(&entries, 8, &ExtractConfig::default()).unwrap().store.to_csv_bytes();
    c.check(serial == parallel, "workers 1 vs 8 CSV bytes differ");
    c.check(rerun == parallel, "rerun CSV bytes differ");

    let store = FeatureStore::load(&features).unwrap();
    let mut header = vec!["path".to_string(), "label".to_string()];
    header.extend(FeatureVector::column_names());
    c.check(FeatureStore::header() == header && header.len() == 36, "header drift");
    let order_ok = store.rows.iter().zip(&entries).all(|(r, e)| Path::new(&r.path) == e.path);
    c.check(order_ok, "row order differs from scan order");
    c.check(store.rows.iter().all(|r| r.values.len() == N_FEATURES), "vector width");

    let outcome = c.finish(
        "Feature-vector contract",
        format!(
            "400 rows x {N_FEATURES} features, {} CSV bytes identical across workers 1/8 and rerun",
            parallel.len()
        ),
    );
    (outcome, Corpus { features, model: work.join("model.json"), render_and_extract })
}

fn end_to_end(corpus: &Corpus) -> (Outcome, Option<ClassificationReport>) {
    let mut c = Checks::default();
    let hp = Hyperparams { n_trees: 100, seed: SEED, ..Hyperparams::default() };
    let started = Instant::now();
    let summary = cmd_train(&corpus.features, &corpus.model, &hp, 0.2).unwrap();
    let total = corpus.render_and_extract + started.elapsed();
    let first = std::fs::read(&corpus.model).unwrap();
    cmd_train(&corpus.features, &corpus.model, &hp, 0.2).unwrap();
    let second = std::fs::read(&corpus.model).unwrap();

    let acc = summary.report.accuracy;
    c.check(summary.n_test == 80, format!("held-out size {}", summary.n_test));
    c.check(acc >= 0.95, format!("accuracy {acc}"));
    c.check(total < Duration::from_secs(300), format!("pipeline took {total:?}"));
    c.check(first == second, "retraining changed the model bytes");
    c.check(report_path(&corpus.model).is_file(), "report JSON missing");
    let outcome = c.finish(
        "Synthetic end-to-end accuracy",
        format!("accuracy {acc:.4} on {} held-out files, pipeline {total:.2?}", summary.n_test),
    );
    (outcome, Some(summary.report))
}

fn identities_hold(r: &ClassificationReport, c: &mut Checks, tag: &str) {
    c.check(
        (r.weighted_avg.recall - r.accuracy).abs() <= 1e-12,
        format!("{tag}: weighted recall {} vs accuracy {}", r.weighted_avg.recall, r.accuracy),
    );
    for (i, m) in r.per_class.iter().enumerate() {
        let f1 =
            if m.precision + m.recall == 0.0 { 0.0 } else { 2.0 * m.precision * m.recall / (m.precision + m.recall) };
        c.check((f1 - m.f1).abs() <= 1e-12, format!("{tag}: class {i} F1 {} vs {f1}", m.f1));
    }
}

fn report_identities(trained: Option<&ClassificationReport>) -> Outcome {
    let mut c = Checks::default();
    let fixed = ClassificationReport::from_confusion(Confusion::from_counts(91, 9, 7, 93)).unwrap();
    identities_hold(&fixed, &mut c, "fixed");
    let p1 = fixed.per_class[1].precision;
    c.check((p1 - 93.0 / 102.0).abs() < 1e-15 && (p1 - 0.9118).abs() <= 1e-4, format!("precision_1 {p1}"));
    c.check(fixed.accuracy == 0.92, format!("accuracy {}", fixed.accuracy));

    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    for _ in 0..1000 {
        let counts: [u64; 4] = std::array::from_fn(|_| rng.random_range(0..60));
        if counts.iter().sum::<u64>() == 0 {
            continue;
        }
        let r =
            ClassificationReport::from_confusion(Confusion::from_counts(counts[0], counts[1], counts[2], counts[3]))
                .unwrap();
        identities_hold(&r, &mut c, &format!("{counts:?}"));
    }
    if let Some(r) = trained {
        identities_hold(r, &mut c, "trained");
    }
    c.finish(
        "Report identities",
        format!("fixed matrix precision_1 {p1:.4}, accuracy {}; 1000 random matrices + trained report", fixed.accuracy),
    )
}

/// Independent walk over the serialized model.
fn oracle_predict(json: &Value, x: &[f64]) -> (Label, usize) {
    let trees = json["trees"].as_array().unwrap();
    let mut ones = 0;
    for tree in trees {
        let nodes = tree.as_array().unwrap();
        let mut i = 0;
        while nodes[i].get("leaf_counts").is_none() {
            let node = &nodes[i];
            let go_left = x[node["feature"].as_u64().unwrap() as usize] <= node["threshold"].as_f64().unwrap();
            i = node[if go_left { "left" } else { "right" }].as_u64().unwrap() as usize;
        }
        let counts = &nodes[i]["leaf_counts"];
        if counts[1].as_u64() >= counts[0].as_u64() {
            ones += 1;
        }
    }
    (if 2 * ones >= trees.len() { Label::Dd } else { Label::Ndd }, ones)
}

fn forest_determinism(corpus: &Corpus) -> Outcome {
    let mut c = Checks::default();
    let data = FeatureStore::load(&corpus.features).unwrap().to_training_set().unwrap();
    let hp = Hyperparams { n_trees: 100, seed: SEED, ..Hyperparams::default() };
    let parallel = fit(&data, &hp).unwrap().to_json().unwrap();
    let serial = fit_sequential(&data, &hp).unwrap().to_json().unwrap();
    c.check(parallel == serial, "serial and parallel model bytes differ");

    let model: ForestModel = load_model(&corpus.model).unwrap();
    let json: Value = serde_json::from_slice(&model.to_json().unwrap()).unwrap();
    let (lo, hi): (Vec<f64>, Vec<f64>) = (0..N_FEATURES)
        .map(|f| {
            let col = data.rows().iter().map(|r| r[f]);
            (col.clone().fold(f64::INFINITY, f64::min), col.fold(f64::NEG_INFINITY, f64::max))
        })
        .unzip();
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let mut agree = 0;
    let mut classes = [0usize; 2];
    for _ in 0..50 {
        let x: Vec<f64> = (0..N_FEATURES).map(|f| lo[f] + (hi[f] - lo[f]) * rng.random::<f64>()).collect();
        let (label, ones) = oracle_predict(&json, &x);
        let got = model.predict(&x).unwrap();
        classes[got.index()] += 1;
        if got == label && model.predict_proba(&x).unwrap() == ones as f64 / model.trees.len() as f64 {
            agree += 1;
        }
    }
    c.check(agree == 50, format!("{agree}/50 vectors agree with the tree walk"));

    let g = [gini([5.0, 5.0]).unwrap(), gini([10.0, 0.0]).unwrap(), gini([3.0, 1.0]).unwrap()];
    c.check(g == [0.5, 0.0, 0.375], format!("gini {g:?}"));
    c.finish(
        "Forest determinism and oracle",
        format!(
            "serial == parallel ({} bytes); {agree}/50 oracle matches (NDD {}, DD {}); gini {g:?}",
            parallel.len(),
            classes[0],
            classes[1]
        ),
    )
}

async fn post_file(client: &reqwest::Client, base: &str, name: &str, bytes: Vec<u8>) -> Result<(u16, Value), String> {
    let form = Form::new().part("file", Part::bytes(bytes).file_name(name.to_string()));
    let resp = client.post(format!("{base}/classify")).multipart(form).send().await.map_err(|e| e.to_string())?;
    let status = resp.status().as_u16();
    let body = resp.json().await.map_err(|e| e.to_string())?;
    Ok((status, body))
}

fn service_contract(corpus: &Corpus, work: &Path) -> Outcome {
    let mut c = Checks::default();
    // About 1 MB of 16-bit mono audio.
    let mut spec = SynthSpec::new(SynthKind::Isochronic, 440.0, 10.0, 24.0);
    spec.amplitude = 0.8;
    let wav = encode_wav_i16(&synthesize(&spec).unwrap()).unwrap();
    let wav_path = work.join("isochronic_1mb.wav");
    std::fs::write(&wav_path, &wav).unwrap();
    let cli = cmd_predict(&corpus.model, &wav_path, &ExtractConfig::default()).unwrap();

    let state = Arc::new(AppState::with_model_path(Some(&corpus.model), ServiceConfig::default()));
    let runtime = tokio::runtime::Runtime::new().unwrap();
    let results = runtime.block_on(async {
        let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
        let base = format!("http://{}", listener.local_addr().unwrap());
        tokio::spawn(async move { axum::serve(listener, router(state)).await.unwrap() });
        let client = reqwest::Client::new();
        let oversize = post_file(&client, &base, "big.wav", vec![0u8; 51 * 1024 * 1024]).await;
        let text = post_file(&client, &base, "notes.txt", b"not audio".to_vec()).await;
        let corrupt = post_file(&client, &base, "corrupt.wav", b"RIFF\x24\x00\x00\x00WAVEfmt garbage".to_vec()).await;
        let valid = post_file(&client, &base, "isochronic.wav", wav.clone()).await;
        (oversize, text, corrupt, valid)
    });
    let (oversize, text, corrupt, valid) = results;
    let status = |r: &Result<(u16, Value), String>| r.as_ref().map(|(s, _)| *s).map_err(Clone::clone);
    c.check(status(&oversize) == Ok(413), format!("51 MB upload: {:?}", status(&oversize)));
    c.check(status(&text) == Ok(415), format!(".txt upload: {:?}", status(&text)));
    c.check(status(&corrupt) == Ok(422), format!("corrupt WAV: {:?}", status(&corrupt)));
    let mut verdict = String::from("none");
    match &valid {
        Ok((200, body)) => {
            let label = body["label"].as_str().unwrap_or("?");
            let confidence = body["confidence"].as_f64().unwrap_or(f64::NAN);
            verdict = format!("{label} {confidence:.2}");
            c.check(label == "DD", format!("isochronic upload labelled {label}"));
            c.check(label == cli.label.as_str(), format!("service {label} vs cli {}", cli.label));
            c.check(confidence == cli.confidence, format!("service confidence {confidence} vs cli {}", cli.confidence));
        }
        other => c.check(false, format!("valid WAV: {other:?}")),
    }
    c.finish(
        "Service contract",
        format!(
            "413/415/422 as specified; {} KB WAV -> {verdict}, cli -> {} {:.2}",
            wav.len() / 1024,
            cli.label,
            cli.confidence
        ),
    )
}

fn main() {
    // `cargo test -- --list` and filters expect no side effects.
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    let work = tempfile::tempdir().unwrap();
    let mut outcomes = vec![fft_oracle(), frequency_features_correct()];
    let (contract, corpus) = feature_vector_contract(work.path());
    outcomes.push(contract);
    let (e2e, report) = end_to_end(&corpus);
    outcomes.push(e2e);
    outcomes.push(report_identities(report.as_ref()));
    outcomes.push(forest_determinism(&corpus));
    outcomes.push(service_contract(&corpus, work.path()));

    println!();
    for o in &outcomes {
        println!("{} {}: {}", if o.pass { "PASS" } else { "FAIL" }, o.name, o.detail);
    }
    let failed = outcomes.iter().filter(|o| !o.pass).count();
    println!("\nacceptance: {} passed, {failed} failed", outcomes.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
