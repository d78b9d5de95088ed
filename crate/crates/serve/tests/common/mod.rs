//! Shared fixtures: synthetic cycle files, manifests, and pipeline configs
//! in a temp directory.

#![allow(dead_code)]

use std::path::{Path, PathBuf};

use hutil_core::pipeline::{CycleManifest, ManifestEntry};
use hutil_core::risk::{generate_synthetic, CovariateSpec, SyntheticSpec};
use hutil_core::table::{
    derive_outcome, write_table_file, Column, OutcomeSpec, SurveyTable,
};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

pub fn synth_cycle(seed: u64, n: usize, beta: f64, cycle: &str) -> SurveyTable {
    let spec = SyntheticSpec {
        n,
        seed,
        intercept: -0.8,
        covariates: vec![
            CovariateSpec::Numeric {
                name: "BMXBMI".to_string(),
                mean: 0.0,
                sd: 1.0,
                beta,
                missing_rate: 0.02,
            },
            CovariateSpec::Categorical {
                name: "RIAGENDR".to_string(),
                levels: vec!["male".to_string(), "female".to_string()],
                probs: vec![0.5, 0.5],
                betas: vec![0.0, 0.0],
                missing_rate: 0.0,
            },
        ],
        cycle: cycle.to_string(),
    };
    generate_synthetic(&spec).unwrap()
}

/// Permutes the outcome source across rows, decoupling it from every
/// covariate, and rederives the outcome so the file stays consistent.
pub fn shuffle_outcome(table: &SurveyTable, seed: u64) -> SurveyTable {
    let mut out = table.clone();
    let column = out.column("HUQ050").unwrap().clone();
    let Column::Numeric { values, missing } = column else {
        panic!("HUQ050 must be numeric");
    };
    let mut paired: Vec<(f64, bool)> = values.into_iter().zip(missing).collect();
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    paired.shuffle(&mut rng);
    let (values, missing): (Vec<f64>, Vec<bool>) = paired.into_iter().unzip();
    out.replace_column("HUQ050", Column::numeric(values, missing))
        .unwrap();
    derive_outcome(&out, &OutcomeSpec::default()).unwrap()
}

pub fn write_cycle_file(dir: &Path, name: &str, table: &SurveyTable) -> PathBuf {
    let path = dir.join(name);
    write_table_file(table, &path).unwrap();
    path
}

pub fn write_manifest(path: &Path, files: &[(&Path, &str, &str)]) {
    let entries = files
        .iter()
        .map(|(file, cycle, role)| ManifestEntry::for_file(file, cycle, role).unwrap())
        .collect();
    let manifest = CycleManifest { entries };
    std::fs::write(path, toml::to_string(&manifest).unwrap()).unwrap();
}

pub fn write_classes(dir: &Path) -> PathBuf {
    let path = dir.join("classes.toml");
    std::fs::write(
        &path,
        "[[class]]\nname = \"examination\"\nmembers = [\"BMXBMI\"]\n\n\
         [[class]]\nname = \"demographics\"\nmembers = [\"RIAGENDR\"]\n",
    )
    .unwrap();
    path
}

pub fn write_pipeline_config(dir: &Path, manifest: &Path, classes: &Path, seed: u64) -> PathBuf {
    let path = dir.join("pipeline.toml");
    let text = format!(
        "seed = {seed}\n\n[input]\nmanifest = {manifest:?}\n\n\
         [analysis]\nclasses = {classes:?}\nbootstrap = 10\n\n\
         [output]\ndir = {out:?}\n",
        manifest = manifest.to_string_lossy(),
        classes = classes.to_string_lossy(),
        out = dir.join("reports").to_string_lossy(),
    );
    std::fs::write(&path, text).unwrap();
    path
}

/// Polls until the condition holds or the timeout elapses.
pub async fn wait_for<F: FnMut() -> bool>(mut condition: F, timeout: std::time::Duration) -> bool {
    let deadline = std::time::Instant::now() + timeout;
    while std::time::Instant::now() < deadline {
        if condition() {
            return true;
        }
        tokio::time::sleep(std::time::Duration::from_millis(50)).await;
    }
    condition()
}
