//! Files shipped in the repository stay in sync with the code that defines
//! them. Set `POPALIGN_REGENERATE=1` to rewrite them.

use std::path::{Path, PathBuf};

use popalign::data::{write_interactions, write_item_meta};
use popalign::pipeline::{DatasetSource, Pipeline, PipelineConfig, Stage};
use popalign::synth::{planted_catalog, SynthConfig};

fn repo_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..").canonicalize().unwrap()
}

fn regenerate() -> bool {
    std::env::var_os("POPALIGN_REGENERATE").is_some()
}

fn check(path: &Path, expected: &[u8]) {
    if regenerate() {
        std::fs::create_dir_all(path.parent().unwrap()).unwrap();
        std::fs::write(path, expected).unwrap();
        return;
    }
    let actual = std::fs::read(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    assert!(actual == expected, "{} is stale; rerun with POPALIGN_REGENERATE=1", path.display());
}

#[test]
fn toy_dataset_matches_generator() {
    let synth = planted_catalog(&SynthConfig::default()).unwrap();
    let tmp = tempfile::tempdir().unwrap();
    let rows = tmp.path().join("interactions.tsv");
    let items = tmp.path().join("items.jsonl");
    write_interactions(&rows, &synth.interactions).unwrap();
    write_item_meta(&items, &synth.items).unwrap();
    let dir = repo_root().join("data/toy");
    check(&dir.join("interactions.tsv"), &std::fs::read(rows).unwrap());
    check(&dir.join("items.jsonl"), &std::fs::read(items).unwrap());
    assert_eq!(synth.items.len(), 40);
    assert_eq!(synth.kinds.len(), 50);
}

#[test]
fn schema_file_matches_config_type() {
    let mut text = serde_json::to_string_pretty(&PipelineConfig::schema()).unwrap();
    text.push('\n');
    check(&repo_root().join("configs/config.schema.json"), text.as_bytes());
}

#[test]
fn shipped_configs_load_and_validate() {
    let dir = repo_root().join("configs");
    let mut seen = 0;
    for entry in std::fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        let name = path.file_name().unwrap().to_string_lossy().to_string();
        if !name.ends_with(".json") || name.ends_with(".schema.json") {
            continue;
        }
        let cfg = PipelineConfig::load(&path).unwrap_or_else(|e| panic!("{e}"));
        cfg.validate().unwrap_or_else(|e| panic!("{name}: {e}"));
        seen += 1;
    }
    assert!(seen >= 2);
}

/// The file-based toy config reproduces the generated toy run exactly.
#[test]
fn toy_config_equals_generated_toy() {
    let tmp = tempfile::tempdir().unwrap();
    let mut from_files = PipelineConfig::load(&repo_root().join("configs/toy.json")).unwrap();
    assert!(matches!(from_files.dataset.source, DatasetSource::Files { .. }));
    from_files.output_dir = tmp.path().join("files");
    from_files.cache_dir = Some(tmp.path().join("cache"));
    let mut generated = PipelineConfig::toy(0, tmp.path().join("generated"));
    generated.cache_dir = Some(tmp.path().join("cache"));
    let stages = [Stage::Prepare, Stage::Cohorts, Stage::Train];
    let a = Pipeline::new(from_files).unwrap();
    let b = Pipeline::new(generated).unwrap();
    a.run(&stages).unwrap();
    b.run(&stages).unwrap();
    for rel in ["data/train.tsv", "data/items.jsonl", "cohorts.json", "model/model.bin"] {
        assert!(std::fs::read(a.out(rel)).unwrap() == std::fs::read(b.out(rel)).unwrap(), "{rel}");
    }
}
