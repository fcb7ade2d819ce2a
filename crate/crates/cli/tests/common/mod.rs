#![allow(dead_code)]

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use gbc_core::synth::{bayes_error_estimate, generate, separation_family, SyntheticScenario};
use gbc_core::tensor_io;

pub fn gbc(out_dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gbc"))
        .arg("--out-dir")
        .arg(out_dir)
        .args(args)
        .env_remove("GBC_OUT_DIR")
        .output()
        .expect("gbc runs")
}

pub fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

pub fn p(path: &Path) -> &str {
    path.to_str().expect("utf-8 path")
}

/// Write `sc` as `<name>.embd` / `<name>.lbls` under `dir`.
pub fn write_scenario(dir: &Path, name: &str, sc: &SyntheticScenario) -> (PathBuf, PathBuf) {
    let set = generate(sc).unwrap();
    let embd = dir.join(format!("{name}.embd"));
    let lbls = dir.join(format!("{name}.lbls"));
    tensor_io::save_embeddings(&set, &embd, &lbls).unwrap();
    (embd, lbls)
}

pub struct Source {
    pub pair_id: String,
    pub bayes_error: f64,
}

/// A manifest over separation-family scenarios. Entries appear in the given
/// order; each accuracy is one minus an estimated Bayes error.
pub fn family_manifest(dir: &Path, scenario_id: &str, kind: &str, separations: &[f64], seed: u64, metric: &str) -> (PathBuf, Vec<Source>) {
    let family = separation_family(separations, 60, seed);
    let mut text = format!("scenario_id = \"{scenario_id}\"\nscenario_kind = \"{kind}\"\n\n[metric_config]\nmetric = \"{metric}\"\n");
    let mut sources = Vec::new();
    for (i, sc) in family.iter().enumerate() {
        let pair_id = format!("{scenario_id}-s{i}");
        let (embd, lbls) = write_scenario(dir, &pair_id, sc);
        let err = bayes_error_estimate(sc, 100_000, 9).unwrap().estimate;
        let _ = write!(
            text,
            "\n[[entries]]\npair_id = \"{pair_id}\"\nembeddings = \"{}\"\nlabels = \"{}\"\nreference_accuracy = {}\n",
            embd.file_name().unwrap().to_str().unwrap(),
            lbls.file_name().unwrap().to_str().unwrap(),
            1.0 - err
        );
        sources.push(Source { pair_id, bayes_error: err });
    }
    let path = dir.join(format!("{scenario_id}.toml"));
    std::fs::write(&path, text).unwrap();
    (path, sources)
}

/// Every file below `dir`, keyed by relative path.
pub fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let path = e.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                out.insert(rel, std::fs::read(&path).unwrap());
            }
        }
    }
    out
}

pub fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

/// A segmentation dump of `images` images with `pixels` pixels each: three
/// classes (one dominant), some unlabeled pixels, and source-head predictions.
pub fn segmentation_dump(dir: &Path, name: &str, images: usize, pixels: usize, shift: f32, seed: u64) -> (PathBuf, PathBuf, PathBuf) {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_xoshiro::Xoshiro256StarStar::seed_from_u64(seed);
    let dim = 5;
    let mut features = Vec::new();
    let mut labels = Vec::new();
    let mut probs = Vec::new();
    for _ in 0..images * pixels {
        let u: f64 = rng.random();
        let l: i32 = if u < 0.7 { 0 } else if u < 0.85 { 1 } else if u < 0.95 { 2 } else { -1 };
        labels.push(l);
        for j in 0..dim {
            features.push(rng.random_range(-1.0f32..1.0) + if j as i32 == l { shift } else { 0.0 });
        }
        let raw: Vec<f32> = (0..4).map(|_| rng.random_range(0.05f32..1.0)).collect();
        let s: f32 = raw.iter().sum();
        probs.extend(raw.iter().map(|v| v / s));
    }
    let embd = dir.join(format!("{name}.embd"));
    let lbls = dir.join(format!("{name}.lbls"));
    let pred = dir.join(format!("{name}.pred"));
    tensor_io::write_embd(&embd, dim, &features).unwrap();
    tensor_io::write_lbls(&lbls, &labels).unwrap();
    tensor_io::write_pred(&pred, 4, &probs).unwrap();
    (embd, lbls, pred)
}
