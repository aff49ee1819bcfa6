use std::collections::BTreeMap;
use std::path::Path;

use signkit::keypoint::{read_sequence, validate_manifest, ManifestEntry};
use signkit::model::{Model, ModelSpec};
use signkit::preprocess::PipelineConfig;
use signkit::synth::*;
use signkit::train::Dataset;

fn read_dir(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (
                e.file_name().to_string_lossy().into_owned(),
                std::fs::read(e.path()).unwrap(),
            )
        })
        .collect()
}

#[test]
fn default_dataset_is_reproducible_and_separable() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let cfg = SynthConfig::default();
    let m = synth_dataset(&cfg, a.path()).unwrap();
    synth_dataset(&cfg, b.path()).unwrap();
    let files = read_dir(a.path());
    assert_eq!(files.len(), 201);
    assert_eq!(m.sequences.len(), 200);
    assert_eq!(files, read_dir(b.path()));

    let counts = validate_manifest(&m).unwrap();
    assert!(counts.iter().all(|(_, n)| *n == 40));
    assert_eq!(m.classes[0], "g00");
    assert_eq!(m.classes[4], "g04");
    let first = read_sequence(m.resolve(&m.sequences[0])).unwrap();
    assert_eq!(first.layout().name(), "holistic543");
    assert!((MIN_FRAMES..=MAX_FRAMES).contains(&first.len()));

    // Every file must load and go through the full pipeline.
    let acc = separability_oracle_manifest(&m, &PipelineConfig::default()).unwrap();
    println!("oracle accuracy at default jitter: {acc}");
    assert!(acc >= 0.95);
    assert_eq!(acc, 1.0);
}

#[test]
fn twenty_classes_fit_the_full_head() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = SynthConfig {
        classes: 20,
        per_class: 10,
        layout: "compact63".into(),
        ..SynthConfig::default()
    };
    let m = synth_dataset(&cfg, dir.path()).unwrap();
    assert_eq!(validate_manifest(&m).unwrap().len(), 20);
    assert_eq!(m.classes[19], "g19");
    let model = Model::build(ModelSpec::scaled(20), 0)
        .unwrap()
        .with_class_names(m.classes.clone())
        .unwrap();
    assert_eq!(model.class_names.len(), 20);
    assert!(ModelSpec {
        classes: 20,
        ..ModelSpec::default()
    }
    .validate()
    .is_ok());
}

fn oracle(jitter: f64) -> f64 {
    let cfg = SynthConfig {
        jitter,
        layout: "compact63".into(),
        ..SynthConfig::default()
    };
    separability_oracle(&synth_in_memory(&cfg, &PipelineConfig::default()).unwrap()).unwrap()
}

#[test]
fn oracle_degrades_with_jitter() {
    let levels = [0.01, 0.1, 0.3].map(oracle);
    println!("oracle at jitter 0.01/0.1/0.3: {levels:?}");
    assert!(levels[0] >= levels[1] && levels[1] >= levels[2]);
    assert!(levels[0] > levels[2]);
    // Noise swamps the paths: close to the 1/5 chance level.
    let chance = oracle(5.0);
    assert!((chance - 0.2).abs() < 0.1, "{chance}");
}

#[test]
fn duplicated_class_is_confusable() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = SynthConfig {
        per_class: 10,
        layout: "compact63".into(),
        ..SynthConfig::default()
    };
    let mut m = synth_dataset(&cfg, dir.path()).unwrap();
    let g00: Vec<String> = m
        .sequences
        .iter()
        .filter(|e| e.label == "g00")
        .map(|e| e.path.clone())
        .collect();
    m.sequences.retain(|e| e.label != "g01");
    m.sequences.extend(g00.into_iter().map(|path| ManifestEntry {
        path,
        label: "g01".into(),
    }));
    let acc = separability_oracle_manifest(&m, &PipelineConfig::default()).unwrap();
    assert!(acc < 1.0 - 1.0 / 5.0, "{acc}");
}

#[test]
fn in_memory_matches_files() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = SynthConfig {
        classes: 3,
        per_class: 4,
        layout: "compact63".into(),
        ..SynthConfig::default()
    };
    let pc = PipelineConfig::default();
    let m = synth_dataset(&cfg, dir.path()).unwrap();
    assert_eq!(
        synth_in_memory(&cfg, &pc).unwrap(),
        Dataset::from_manifest(&m, &pc).unwrap()
    );
}
