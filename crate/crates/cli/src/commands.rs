use std::cmp::Ordering;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

use gbc_core::config::{short_hash, Metric, MetricConfig};
use gbc_core::gbc::{bhattacharyya_coefficient, bhattacharyya_distance};
use gbc_core::manifest::{load_manifest, ManifestEntry, ScenarioManifest};
use gbc_core::ranking::{evaluate_scenarios, EvalReport, ScenarioKind, ScenarioRow, ScenarioTable};
use gbc_core::rng::{derive_seed, tag};
use gbc_core::score::Diagnostics;
use gbc_core::synth::{self, McEstimate, SyntheticScenario};
use gbc_core::{compute_metric, tensor_io, CovarianceMode, MetricScore, VERSION};

use crate::inputs::{self, Loaded, TargetFiles};
use crate::output::{comment_header, ensure_dir, file_stem_safe, in_dir, write_json, write_text};
use crate::{AblateArgs, CliError, ConfigArgs, EvaluateArgs, RankArgs, ScoreArgs, SynthArgs};

fn validated(cfg: MetricConfig) -> Result<MetricConfig, CliError> {
    cfg.validate()?;
    Ok(cfg)
}

fn entry_files(e: &ManifestEntry) -> TargetFiles {
    TargetFiles {
        embeddings: e.embeddings.clone(),
        labels: e.labels.clone(),
        predictions: e.predictions.clone(),
        source_embeddings: e.source_embeddings.clone(),
        image_pixels: e.image_pixels,
    }
}

fn entry_cache(cache: Option<&Path>, scenario: &str, pair: &str) -> Option<PathBuf> {
    cache.map(|c| c.join(file_stem_safe(scenario)).join(file_stem_safe(pair)))
}

fn message(e: CliError) -> String {
    match e {
        CliError::Usage(m) | CliError::Data(m) => m,
    }
}

fn path_str(p: &Path) -> String {
    p.display().to_string()
}

#[derive(Serialize)]
struct InputPaths {
    embeddings: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    labels: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    predictions: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    source_embeddings: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    image_pixels: Option<usize>,
}

impl From<&TargetFiles> for InputPaths {
    fn from(f: &TargetFiles) -> Self {
        Self {
            embeddings: path_str(&f.embeddings),
            labels: f.labels.as_deref().map(path_str),
            predictions: f.predictions.as_deref().map(path_str),
            source_embeddings: f.source_embeddings.as_deref().map(path_str),
            image_pixels: f.image_pixels,
        }
    }
}

#[derive(Serialize)]
struct Skipped {
    image_id: u64,
    reason: String,
}

fn skipped_of(l: &Loaded) -> Vec<Skipped> {
    l.skipped
        .iter()
        .map(|s| Skipped {
            image_id: s.image_id,
            reason: s.reason.clone(),
        })
        .collect()
}

#[derive(Serialize)]
struct ScoreFile<'a> {
    toolkit_version: &'static str,
    fingerprint: &'a str,
    config: &'a MetricConfig,
    inputs: InputPaths,
    result: &'a MetricScore,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    skipped_images: Vec<Skipped>,
}

pub fn score(a: &ScoreArgs, out_dir: &Path) -> Result<(), CliError> {
    let files = TargetFiles {
        embeddings: a.embeddings.clone(),
        labels: a.labels.clone(),
        predictions: a.predictions.clone(),
        source_embeddings: a.source_embeddings.clone(),
        image_pixels: a.image_pixels,
    };
    inputs::check_required(&files, a.metric, a.task).map_err(CliError::Usage)?;
    let cfg = validated(a.config.apply(&MetricConfig::for_task(a.metric, a.task)))?;
    let loaded = inputs::load(&files, &cfg, &[a.metric], a.selection_cache.as_deref())?;
    let result = compute_metric(&cfg, loaded.inputs())?;
    let fingerprint = cfg.fingerprint();
    println!("{} {} fingerprint={fingerprint}", result.metric, result.value);
    let path = a
        .out
        .clone()
        .unwrap_or_else(|| in_dir(out_dir, &format!("score-{}.json", a.metric)));
    write_json(
        &path,
        &ScoreFile {
            toolkit_version: VERSION,
            fingerprint: &fingerprint,
            config: &cfg,
            inputs: InputPaths::from(&files),
            result: &result,
            skipped_images: skipped_of(&loaded),
        },
    )
}

/// Load one entry and score it under each config. A load failure fails every config.
fn score_entry(
    e: &ManifestEntry,
    m: &ScenarioManifest,
    cfgs: &[MetricConfig],
    cache: Option<&Path>,
) -> Vec<Result<MetricScore, String>> {
    let metrics: Vec<Metric> = cfgs.iter().map(|c| c.metric).collect();
    let files = entry_files(e);
    let mut usable = Vec::with_capacity(cfgs.len());
    for c in cfgs {
        usable.push(inputs::check_required(&files, c.metric, c.task));
    }
    let needed: Vec<Metric> = metrics
        .iter()
        .zip(&usable)
        .filter(|(_, u)| u.is_ok())
        .map(|(m, _)| *m)
        .collect();
    let loaded = if needed.is_empty() {
        None
    } else {
        let cache = entry_cache(cache, &m.scenario_id, &e.pair_id);
        Some(inputs::load(&files, &cfgs[0], &needed, cache.as_deref()).map_err(message))
    };
    cfgs.iter()
        .zip(usable)
        .map(|(c, u)| {
            u?;
            match loaded.as_ref() {
                Some(Ok(l)) => compute_metric(c, l.inputs()).map_err(|e| e.to_string()),
                Some(Err(msg)) => Err(msg.clone()),
                None => Err("no input loaded".into()),
            }
        })
        .collect()
}

/// Scores of every entry under every config, `[entry][config]`, in manifest order.
fn score_manifest(
    m: &ScenarioManifest,
    cfgs: &[MetricConfig],
    cache: Option<&Path>,
) -> Vec<Vec<Result<MetricScore, String>>> {
    m.entries.par_iter().map(|e| score_entry(e, m, cfgs, cache)).collect()
}

fn by_score_desc(a: (&str, f64), b: (&str, f64)) -> Ordering {
    b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0))
}

#[derive(Serialize)]
struct Failure {
    #[serde(skip_serializing_if = "Option::is_none")]
    scenario_id: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    metric: Option<Metric>,
    pair_id: String,
    error: String,
}

#[derive(Serialize)]
struct RankedEntry {
    rank: usize,
    pair_id: String,
    score: f64,
    diagnostics: Diagnostics,
}

#[derive(Serialize)]
struct RankFile<'a> {
    toolkit_version: &'static str,
    fingerprint: String,
    config: &'a MetricConfig,
    scenario_id: &'a str,
    scenario_kind: ScenarioKind,
    ranking: Vec<RankedEntry>,
    failures: Vec<Failure>,
}

fn load(path: &Path) -> Result<ScenarioManifest, CliError> {
    Ok(load_manifest(path)?)
}

fn manifest_config(m: &ScenarioManifest, metric: Option<Metric>, args: &ConfigArgs) -> Result<MetricConfig, CliError> {
    let base = match metric {
        Some(metric) => m.metric_config.with_metric(metric),
        None => m.metric_config.clone(),
    };
    validated(args.apply(&base))
}

pub fn rank(a: &RankArgs, out_dir: &Path) -> Result<(), CliError> {
    let m = load(&a.manifest)?;
    let cfg = manifest_config(&m, a.metric, &a.config)?;
    let scores = score_manifest(&m, std::slice::from_ref(&cfg), a.selection_cache.as_deref());
    let mut ok = Vec::new();
    let mut failures = Vec::new();
    for (e, mut r) in m.entries.iter().zip(scores) {
        match r.remove(0) {
            Ok(s) => ok.push((e.pair_id.clone(), s)),
            Err(error) => {
                eprintln!("warning: {}: {error}", e.pair_id);
                failures.push(Failure {
                    scenario_id: None,
                    metric: None,
                    pair_id: e.pair_id.clone(),
                    error,
                });
            }
        }
    }
    if ok.is_empty() {
        return Err(CliError::Data(format!("every entry of {} failed", m.scenario_id)));
    }
    ok.sort_by(|x, y| by_score_desc((&x.0, x.1.value), (&y.0, y.1.value)));
    let fingerprint = cfg.fingerprint();
    println!("{} {} {} fingerprint={fingerprint}", m.scenario_id, m.scenario_kind, cfg.metric);
    let width = ok.iter().map(|(p, _)| p.len()).max().unwrap_or(0);
    for (i, (pair, s)) in ok.iter().enumerate() {
        println!("{:>3}  {pair:<width$}  {}", i + 1, s.value);
    }
    let ranking = ok
        .into_iter()
        .enumerate()
        .map(|(i, (pair_id, s))| RankedEntry {
            rank: i + 1,
            pair_id,
            score: s.value,
            diagnostics: s.diagnostics,
        })
        .collect();
    write_json(
        &in_dir(out_dir, &format!("rank-{}.json", file_stem_safe(&m.scenario_id))),
        &RankFile {
            toolkit_version: VERSION,
            fingerprint,
            config: &cfg,
            scenario_id: &m.scenario_id,
            scenario_kind: m.scenario_kind,
            ranking,
            failures,
        },
    )
}

#[derive(Serialize)]
struct TableConfig {
    scenario_id: String,
    metric: Metric,
    fingerprint: String,
    config: MetricConfig,
}

/// Tables built from manifests plus the configs and failures behind them.
struct Scored {
    tables: Vec<ScenarioTable>,
    configs: Vec<TableConfig>,
    failures: Vec<Failure>,
}

impl Scored {
    fn fingerprint(&self) -> String {
        let joined: Vec<String> = self
            .configs
            .iter()
            .map(|c| format!("{}:{}:{}", c.scenario_id, c.metric, c.fingerprint))
            .collect();
        short_hash(&joined.join(";"))
    }
}

/// Score manifests under per-manifest config lists and turn the results into
/// one table per (manifest, config).
fn build_tables(
    manifests: &[ScenarioManifest],
    cfgs: &[Vec<MetricConfig>],
    labels: impl Fn(&MetricConfig) -> String,
    cache: Option<&Path>,
) -> Scored {
    let mut out = Scored {
        tables: Vec::new(),
        configs: Vec::new(),
        failures: Vec::new(),
    };
    for (m, cfgs) in manifests.iter().zip(cfgs) {
        let scores = score_manifest(m, cfgs, cache);
        for (k, cfg) in cfgs.iter().enumerate() {
            let mut rows = Vec::new();
            for (e, r) in m.entries.iter().zip(&scores) {
                match &r[k] {
                    Ok(s) => rows.push(ScenarioRow {
                        pair_id: e.pair_id.clone(),
                        score: s.value,
                        accuracy: e.reference_accuracy.unwrap_or(f64::NAN),
                    }),
                    Err(error) => out.failures.push(Failure {
                        scenario_id: Some(m.scenario_id.clone()),
                        metric: Some(cfg.metric),
                        pair_id: e.pair_id.clone(),
                        error: error.clone(),
                    }),
                }
            }
            match ScenarioTable::new(m.scenario_id.clone(), m.scenario_kind, labels(cfg), rows) {
                Ok(t) => {
                    out.tables.push(t);
                    out.configs.push(TableConfig {
                        scenario_id: m.scenario_id.clone(),
                        metric: cfg.metric,
                        fingerprint: cfg.fingerprint(),
                        config: cfg.clone(),
                    });
                }
                Err(e) => out.failures.push(Failure {
                    scenario_id: Some(m.scenario_id.clone()),
                    metric: Some(cfg.metric),
                    pair_id: String::new(),
                    error: e.to_string(),
                }),
            }
        }
    }
    for f in &out.failures {
        eprintln!(
            "warning: {} {} {}: {}",
            f.scenario_id.as_deref().unwrap_or(""),
            f.metric.map(|m| m.as_str()).unwrap_or(""),
            f.pair_id,
            f.error
        );
    }
    out
}

fn load_with_accuracies(paths: &[PathBuf]) -> Result<Vec<ScenarioManifest>, CliError> {
    let mut out = Vec::with_capacity(paths.len());
    for p in paths {
        let m = load(p)?;
        if !m.has_accuracies() {
            return Err(CliError::Data(format!("{} has no reference accuracies", p.display())));
        }
        out.push(m);
    }
    Ok(out)
}

#[derive(Serialize)]
struct ReportFile<'a> {
    toolkit_version: &'static str,
    fingerprint: String,
    configs: &'a [TableConfig],
    report: &'a EvalReport,
    failures: &'a [Failure],
}

fn failure_lines(failures: &[Failure]) -> String {
    let mut out = String::new();
    for f in failures {
        let _ = writeln!(
            out,
            "failed: {} {} {}: {}",
            f.scenario_id.as_deref().unwrap_or(""),
            f.metric.map(|m| m.as_str()).unwrap_or(""),
            f.pair_id,
            f.error
        );
    }
    out
}

pub fn evaluate(a: &EvaluateArgs, out_dir: &Path) -> Result<(), CliError> {
    let manifests = load_with_accuracies(&a.manifest)?;
    let mut cfgs = Vec::with_capacity(manifests.len());
    for m in &manifests {
        let metrics = if a.metric.is_empty() { vec![m.metric_config.metric] } else { a.metric.clone() };
        let mut list = Vec::with_capacity(metrics.len());
        for metric in metrics {
            list.push(manifest_config(m, Some(metric), &a.config)?);
        }
        cfgs.push(list);
    }
    let scored = build_tables(&manifests, &cfgs, |c| c.metric.to_string(), a.selection_cache.as_deref());
    if scored.tables.is_empty() {
        return Err(CliError::Data("no scenario could be evaluated".into()));
    }
    let report = evaluate_scenarios(&scored.tables)?;
    let fingerprint = scored.fingerprint();
    let mut text = comment_header(&fingerprint);
    text.push_str(&report.to_text());
    text.push_str(&failure_lines(&scored.failures));
    print!("{text}");
    ensure_dir(out_dir)?;
    write_json(
        &in_dir(out_dir, "report.json"),
        &ReportFile {
            toolkit_version: VERSION,
            fingerprint: fingerprint.clone(),
            configs: &scored.configs,
            report: &report,
            failures: &scored.failures,
        },
    )?;
    write_text(&in_dir(out_dir, "report.txt"), &text)?;
    let mut csv = comment_header(&fingerprint);
    csv.push_str(&report.scatter_csv());
    write_text(&in_dir(out_dir, "scatter.csv"), &csv)
}

#[derive(Serialize)]
struct AblationCell {
    covariance_mode: CovarianceMode,
    pca_dim: usize,
    fingerprint: String,
    /// Mean weighted tau over the non-degenerate scenarios of the cell.
    mean_tau_weighted: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    report: Option<EvalReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

#[derive(Serialize)]
struct AblationFile<'a> {
    toolkit_version: &'static str,
    fingerprint: String,
    covariance_modes: &'a [CovarianceMode],
    pca_dims: &'a [usize],
    cells: Vec<AblationCell>,
    failures: Vec<Failure>,
}

fn cell_label(mode: CovarianceMode, dim: usize) -> String {
    format!("gbc/{mode}/{dim}")
}

fn mean_tau(report: &EvalReport) -> Option<f64> {
    let v: Vec<f64> = report
        .scenarios
        .iter()
        .filter(|s| !s.degenerate)
        .filter_map(|s| s.tau_weighted.value())
        .collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

pub fn ablate(a: &AblateArgs, out_dir: &Path) -> Result<(), CliError> {
    if a.modes.is_empty() || a.dims.is_empty() {
        return Err(CliError::Usage("ablation needs at least one mode and one dimension".into()));
    }
    let manifests = load_with_accuracies(&a.manifest)?;
    let grid: Vec<(CovarianceMode, usize)> = a
        .modes
        .iter()
        .flat_map(|&m| a.dims.iter().map(move |&d| (m, d)))
        .collect();
    let mut cfgs = Vec::with_capacity(manifests.len());
    for m in &manifests {
        let base = a.config.apply(&m.metric_config.with_metric(Metric::Gbc));
        let mut list = Vec::with_capacity(grid.len());
        for &(mode, dim) in &grid {
            let mut c = base.clone();
            c.covariance_mode = mode;
            c.pca_dim = dim;
            list.push(validated(c)?);
        }
        cfgs.push(list);
    }
    let scored = build_tables(
        &manifests,
        &cfgs,
        |c| cell_label(c.covariance_mode, c.pca_dim),
        a.selection_cache.as_deref(),
    );
    let fingerprint = scored.fingerprint();

    let mut cells = Vec::with_capacity(grid.len());
    for (k, &(mode, dim)) in grid.iter().enumerate() {
        let label = cell_label(mode, dim);
        let tables: Vec<ScenarioTable> = scored.tables.iter().filter(|t| t.metric() == label).cloned().collect();
        let cell_fp = short_hash(
            &cfgs
                .iter()
                .map(|list| list[k].fingerprint())
                .collect::<Vec<_>>()
                .join(";"),
        );
        let (report, error) = if tables.is_empty() {
            (None, Some("no scenario could be evaluated".to_string()))
        } else {
            match evaluate_scenarios(&tables) {
                Ok(r) => (Some(r), None),
                Err(e) => (None, Some(e.to_string())),
            }
        };
        cells.push(AblationCell {
            covariance_mode: mode,
            pca_dim: dim,
            fingerprint: cell_fp,
            mean_tau_weighted: report.as_ref().and_then(mean_tau),
            report,
            error,
        });
    }
    if cells.iter().all(|c| c.report.is_none()) {
        return Err(CliError::Data("every ablation cell failed".into()));
    }

    let mut text = comment_header(&fingerprint);
    text.push_str(&ablation_grid(&a.modes, &a.dims, &cells));
    text.push_str(&failure_lines(&scored.failures));
    print!("{text}");
    write_text(&in_dir(out_dir, "ablation.txt"), &text)?;
    write_json(
        &in_dir(out_dir, "ablation.json"),
        &AblationFile {
            toolkit_version: VERSION,
            fingerprint,
            covariance_modes: &a.modes,
            pca_dims: &a.dims,
            cells,
            failures: scored.failures,
        },
    )
}

/// Rows are covariance modes, columns PCA widths, cells the mean weighted tau.
fn ablation_grid(modes: &[CovarianceMode], dims: &[usize], cells: &[AblationCell]) -> String {
    let mut out = format!("{:<10}", "tau_w");
    for d in dims {
        let _ = write!(out, " {:>8}", format!("d={d}"));
    }
    out.push('\n');
    for (i, m) in modes.iter().enumerate() {
        let _ = write!(out, "{:<10}", m.as_str());
        for j in 0..dims.len() {
            let c = &cells[i * dims.len() + j];
            let v = match c.mean_tau_weighted {
                Some(v) => format!("{v:.3}"),
                None if c.report.is_some() => "degen".into(),
                None => "failed".into(),
            };
            let _ = write!(out, " {v:>8}");
        }
        out.push('\n');
    }
    out
}

#[derive(Serialize)]
struct PairOracle {
    class_i: usize,
    class_j: usize,
    distance: f64,
    coefficient: f64,
    monte_carlo: McEstimate,
}

#[derive(Serialize)]
struct Oracle {
    pairs: Vec<PairOracle>,
    /// Minus the sum of closed-form coefficients over unordered pairs.
    gbc: f64,
    bayes_error: McEstimate,
}

#[derive(Serialize)]
struct GeneratedFile {
    path: String,
    sha256: String,
}

#[derive(Serialize)]
struct SynthFile<'a> {
    toolkit_version: &'static str,
    fingerprint: String,
    scenario: &'a SyntheticScenario,
    samples: usize,
    dim: usize,
    files: Vec<GeneratedFile>,
    /// Absent when `noise_scale` is zero and the classes are point masses.
    #[serde(skip_serializing_if = "Option::is_none")]
    oracle: Option<Oracle>,
}

fn file_digest(path: &Path) -> Result<String, CliError> {
    use sha2::{Digest, Sha256};
    let bytes = std::fs::read(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

fn oracle(sc: &SyntheticScenario, mc_samples: usize) -> Result<Oracle, CliError> {
    let classes = sc.effective_classes();
    let gaussians = classes
        .iter()
        .enumerate()
        .map(|(i, g)| g.to_class_gaussian(i as u32))
        .collect::<Result<Vec<_>, _>>()?;
    let mut pairs = Vec::new();
    for i in 0..classes.len() {
        for j in i + 1..classes.len() {
            let seed = derive_seed(sc.seed, tag::MONTE_CARLO, pairs.len() as u64);
            pairs.push(PairOracle {
                class_i: i,
                class_j: j,
                distance: bhattacharyya_distance(&gaussians[i], &gaussians[j])?,
                coefficient: bhattacharyya_coefficient(&gaussians[i], &gaussians[j])?,
                monte_carlo: synth::mc_bhattacharyya(&classes[i], &classes[j], mc_samples, seed)?,
            });
        }
    }
    let gbc = -pairs.iter().map(|p| p.coefficient).sum::<f64>();
    let bayes_error = synth::bayes_error_estimate(sc, mc_samples, derive_seed(sc.seed, tag::BAYES, 0))?;
    Ok(Oracle { pairs, gbc, bayes_error })
}

pub fn synth(a: &SynthArgs, out_dir: &Path) -> Result<(), CliError> {
    if a.mc_samples == 0 {
        return Err(CliError::Usage("--mc-samples must be >= 1".into()));
    }
    let sc = SyntheticScenario::load(&a.spec)?;
    let set = synth::generate(&sc)?;
    ensure_dir(out_dir)?;
    let embd = in_dir(out_dir, "synthetic.embd");
    let lbls = in_dir(out_dir, "synthetic.lbls");
    tensor_io::save_embeddings(&set, &embd, &lbls)?;
    let oracle = if sc.noise_scale > 0.0 { Some(oracle(&sc, a.mc_samples)?) } else { None };
    let fingerprint = sc.fingerprint();
    println!(
        "synthetic {} x {} fingerprint={fingerprint}{}",
        set.len(),
        set.dim(),
        oracle.as_ref().map(|o| format!(" gbc={} bayes_error={}", o.gbc, o.bayes_error.estimate)).unwrap_or_default()
    );
    let files = vec![
        GeneratedFile {
            path: "synthetic.embd".into(),
            sha256: file_digest(&embd)?,
        },
        GeneratedFile {
            path: "synthetic.lbls".into(),
            sha256: file_digest(&lbls)?,
        },
    ];
    write_json(
        &in_dir(out_dir, "oracle.json"),
        &SynthFile {
            toolkit_version: VERSION,
            fingerprint,
            scenario: &sc,
            samples: set.len(),
            dim: set.dim(),
            files,
            oracle,
        },
    )
}
