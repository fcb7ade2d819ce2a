//! Rank correlation between transferability scores and reference accuracies.
//!
//! Weighted Kendall tau uses hyperbolic additive weights. Items are ranked by
//! accuracy, best first (`r = 0`), tied accuracies sharing the average of their
//! positions. Pair `(i, j)` carries weight `1/(r_i + 1) + 1/(r_j + 1)` and
//! contributes `w * sign(s_i - s_j) * sign(a_i - a_j)` to the numerator; the
//! denominator is the sum of all pair weights, tied pairs included. A tie in
//! either vector therefore pulls the value toward zero rather than being
//! dropped.
//!
//! Every statistic is [`Correlation::Degenerate`] when either input vector is
//! constant.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize, Serializer};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScenarioKind {
    FixedSource,
    FixedTarget,
}

impl ScenarioKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ScenarioKind::FixedSource => "fixed-source",
            ScenarioKind::FixedTarget => "fixed-target",
        }
    }
}

impl std::fmt::Display for ScenarioKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A correlation value, or the marker for an undefined one.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Correlation {
    Value(f64),
    Degenerate,
}

impl Correlation {
    pub fn value(self) -> Option<f64> {
        match self {
            Correlation::Value(v) => Some(v),
            Correlation::Degenerate => None,
        }
    }

    pub fn is_degenerate(self) -> bool {
        matches!(self, Correlation::Degenerate)
    }
}

/// Serialized as a number, or as the string `"degenerate"`.
impl Serialize for Correlation {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Correlation::Value(v) => s.serialize_f64(*v),
            Correlation::Degenerate => s.serialize_str("degenerate"),
        }
    }
}

fn check_pair(scores: &[f64], accuracies: &[f64]) -> Result<()> {
    if scores.len() != accuracies.len() {
        return Err(Error::Argument(format!(
            "{} scores but {} accuracies",
            scores.len(),
            accuracies.len()
        )));
    }
    if scores.len() < 2 {
        return Err(Error::Argument("rank statistics need at least 2 items".into()));
    }
    if scores.iter().chain(accuracies).any(|v| !v.is_finite()) {
        return Err(Error::Argument("rank statistics need finite inputs".into()));
    }
    Ok(())
}

fn is_constant(v: &[f64]) -> bool {
    v.iter().all(|&x| x == v[0])
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Descending ranks, 0 = largest, ties averaged.
pub fn descending_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        let avg = (start + end - 1) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = avg;
        }
        start = end;
    }
    ranks
}

pub fn weighted_kendall_tau(scores: &[f64], accuracies: &[f64]) -> Result<Correlation> {
    check_pair(scores, accuracies)?;
    if is_constant(scores) || is_constant(accuracies) {
        return Ok(Correlation::Degenerate);
    }
    let inv: Vec<f64> = descending_ranks(accuracies).iter().map(|r| 1.0 / (r + 1.0)).collect();
    let n = scores.len();
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            let w = inv[i] + inv[j];
            num += w * sign(scores[i] - scores[j]) * sign(accuracies[i] - accuracies[j]);
            den += w;
        }
    }
    Ok(Correlation::Value((num / den).clamp(-1.0, 1.0)))
}

fn tie_pairs(sorted: &[f64]) -> u64 {
    let mut total = 0u64;
    let mut run = 1u64;
    for w in sorted.windows(2) {
        if w[0] == w[1] {
            run += 1;
        } else {
            total += run * (run - 1) / 2;
            run = 1;
        }
    }
    total + run * (run - 1) / 2
}

/// Stable merge sort returning the number of strict inversions.
fn sort_counting_swaps(v: &mut [f64], buf: &mut [f64]) -> u64 {
    let n = v.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut swaps = {
        let (l, r) = v.split_at_mut(mid);
        let (bl, br) = buf.split_at_mut(mid);
        sort_counting_swaps(l, bl) + sort_counting_swaps(r, br)
    };
    let (mut i, mut j, mut k) = (0, mid, 0);
    while i < mid && j < n {
        if v[i] <= v[j] {
            buf[k] = v[i];
            i += 1;
        } else {
            buf[k] = v[j];
            swaps += (mid - i) as u64;
            j += 1;
        }
        k += 1;
    }
    buf[k..k + mid - i].copy_from_slice(&v[i..mid]);
    k += mid - i;
    buf[k..k + n - j].copy_from_slice(&v[j..n]);
    v.copy_from_slice(&buf[..n]);
    swaps
}

/// Kendall tau-b, in O(n log n) with Knight's algorithm.
pub fn kendall_tau(scores: &[f64], accuracies: &[f64]) -> Result<Correlation> {
    check_pair(scores, accuracies)?;
    let n = scores.len() as u64;
    let mut pairs: Vec<(f64, f64)> = scores.iter().copied().zip(accuracies.iter().copied()).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let xs: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let tied_x = tie_pairs(&xs);
    let mut joint = 0u64;
    let mut run = 1u64;
    for w in pairs.windows(2) {
        if w[0] == w[1] {
            run += 1;
        } else {
            joint += run * (run - 1) / 2;
            run = 1;
        }
    }
    joint += run * (run - 1) / 2;
    let mut ys: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let mut buf = vec![0.0; ys.len()];
    let swaps = sort_counting_swaps(&mut ys, &mut buf);
    let tied_y = tie_pairs(&ys);
    let total = n * (n - 1) / 2;
    let (nx, ny) = (total - tied_x, total - tied_y);
    if nx == 0 || ny == 0 {
        return Ok(Correlation::Degenerate);
    }
    let diff = total as i128 - tied_x as i128 - tied_y as i128 + joint as i128 - 2 * swaps as i128;
    let tau = diff as f64 / ((nx as f64) * (ny as f64)).sqrt();
    Ok(Correlation::Value(tau.clamp(-1.0, 1.0)))
}

pub fn pearson_r(scores: &[f64], accuracies: &[f64]) -> Result<Correlation> {
    check_pair(scores, accuracies)?;
    let n = scores.len() as f64;
    let ms = scores.iter().sum::<f64>() / n;
    let ma = accuracies.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (s, a) in scores.iter().zip(accuracies) {
        let (dx, dy) = (s - ms, a - ma);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 || is_constant(scores) || is_constant(accuracies) {
        return Ok(Correlation::Degenerate);
    }
    Ok(Correlation::Value((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioRow {
    pub pair_id: String,
    pub score: f64,
    pub accuracy: f64,
}

/// Scores of one metric over the pairs of one scenario, with their accuracies.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScenarioTable {
    scenario_id: String,
    kind: ScenarioKind,
    metric: String,
    rows: Vec<ScenarioRow>,
}

impl ScenarioTable {
    pub fn new(scenario_id: impl Into<String>, kind: ScenarioKind, metric: impl Into<String>, rows: Vec<ScenarioRow>) -> Result<Self> {
        let scenario_id = scenario_id.into();
        if rows.len() < 2 {
            return Err(Error::Validation(format!("scenario {scenario_id} needs at least 2 rows")));
        }
        let mut seen = HashSet::new();
        for r in &rows {
            if !seen.insert(r.pair_id.as_str()) {
                return Err(Error::Validation(format!("scenario {scenario_id}: duplicate pair_id {}", r.pair_id)));
            }
            if !r.score.is_finite() {
                return Err(Error::Validation(format!("scenario {scenario_id}: score of {} is not finite", r.pair_id)));
            }
            if !(0.0..=1.0).contains(&r.accuracy) {
                return Err(Error::Validation(format!(
                    "scenario {scenario_id}: accuracy {} of {} is outside [0, 1]",
                    r.accuracy, r.pair_id
                )));
            }
        }
        Ok(Self {
            scenario_id,
            kind,
            metric: metric.into(),
            rows,
        })
    }

    pub fn scenario_id(&self) -> &str {
        &self.scenario_id
    }

    pub fn kind(&self) -> ScenarioKind {
        self.kind
    }

    pub fn metric(&self) -> &str {
        &self.metric
    }

    pub fn rows(&self) -> &[ScenarioRow] {
        &self.rows
    }

    pub fn scores(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.score).collect()
    }

    pub fn accuracies(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.accuracy).collect()
    }

    /// Rows by descending score, ties by ascending pair_id.
    pub fn ranked(&self) -> Vec<&ScenarioRow> {
        let mut v: Vec<&ScenarioRow> = self.rows.iter().collect();
        v.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.pair_id.cmp(&b.pair_id)));
        v
    }

    /// Highest accuracy, ties by ascending pair_id.
    pub fn best_by_accuracy(&self) -> &ScenarioRow {
        self.rows
            .iter()
            .min_by(|a, b| match b.accuracy.total_cmp(&a.accuracy) {
                Ordering::Equal => a.pair_id.cmp(&b.pair_id),
                o => o,
            })
            .expect("table has rows")
    }
}

/// Whether the most accurate pair is among the `k` highest-scoring ones.
pub fn top_k_hit(table: &ScenarioTable, k: usize) -> Result<bool> {
    if k == 0 || k > table.rows.len() {
        return Err(Error::Argument(format!(
            "top-{k} needs 1 <= k <= {} rows",
            table.rows.len()
        )));
    }
    let best = &table.best_by_accuracy().pair_id;
    Ok(table.ranked().iter().take(k).any(|r| &r.pair_id == best))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScenarioResult {
    pub scenario_id: String,
    pub kind: ScenarioKind,
    pub metric: String,
    pub pairs: usize,
    pub tau_weighted: Correlation,
    pub tau: Correlation,
    pub pearson_r: Correlation,
    pub top1_hit: bool,
    /// `None` with fewer than 3 pairs.
    pub top3_hit: Option<bool>,
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Average {
    pub metric: String,
    pub kind: ScenarioKind,
    pub scenarios: usize,
    pub tau_weighted: Option<f64>,
    pub tau: Option<f64>,
    pub pearson_r: Option<f64>,
    pub top1_rate: Option<f64>,
    pub top3_rate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScatterRow {
    pub scenario_id: String,
    pub metric: String,
    pub pair_id: String,
    pub score: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub scenarios: Vec<ScenarioResult>,
    pub averages: Vec<Average>,
    /// Scenario ids excluded from the averages.
    pub degenerate: Vec<String>,
    pub scatter: Vec<ScatterRow>,
}

pub fn evaluate_table(table: &ScenarioTable) -> Result<ScenarioResult> {
    let (s, a) = (table.scores(), table.accuracies());
    let tau_weighted = weighted_kendall_tau(&s, &a)?;
    let tau = kendall_tau(&s, &a)?;
    let pearson = pearson_r(&s, &a)?;
    Ok(ScenarioResult {
        scenario_id: table.scenario_id.clone(),
        kind: table.kind,
        metric: table.metric.clone(),
        pairs: table.rows.len(),
        tau_weighted,
        tau,
        pearson_r: pearson,
        top1_hit: top_k_hit(table, 1)?,
        top3_hit: if table.rows.len() >= 3 { Some(top_k_hit(table, 3)?) } else { None },
        degenerate: tau_weighted.is_degenerate() || tau.is_degenerate() || pearson.is_degenerate(),
    })
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (mut sum, mut count) = (0.0, 0usize);
    for v in values {
        sum += v;
        count += 1;
    }
    (count > 0).then(|| sum / count as f64)
}

fn rate(values: impl Iterator<Item = bool>) -> Option<f64> {
    mean(values.map(|b| if b { 1.0 } else { 0.0 }))
}

/// Per-scenario statistics plus averages per (metric, kind), ordered by metric
/// then kind. Degenerate scenarios are listed and left out of the averages.
pub fn evaluate_scenarios(tables: &[ScenarioTable]) -> Result<EvalReport> {
    let scenarios: Vec<ScenarioResult> = tables.par_iter().map(evaluate_table).collect::<Result<_>>()?;
    let mut groups: BTreeMap<(String, ScenarioKind), Vec<&ScenarioResult>> = BTreeMap::new();
    for r in scenarios.iter().filter(|r| !r.degenerate) {
        groups.entry((r.metric.clone(), r.kind)).or_default().push(r);
    }
    let averages = groups
        .into_iter()
        .map(|((metric, kind), rs)| Average {
            metric,
            kind,
            scenarios: rs.len(),
            tau_weighted: mean(rs.iter().filter_map(|r| r.tau_weighted.value())),
            tau: mean(rs.iter().filter_map(|r| r.tau.value())),
            pearson_r: mean(rs.iter().filter_map(|r| r.pearson_r.value())),
            top1_rate: rate(rs.iter().map(|r| r.top1_hit)),
            top3_rate: rate(rs.iter().filter_map(|r| r.top3_hit)),
        })
        .collect();
    let degenerate = scenarios
        .iter()
        .filter(|r| r.degenerate)
        .map(|r| r.scenario_id.clone())
        .collect();
    let scatter = tables
        .iter()
        .flat_map(|t| {
            t.rows.iter().map(move |r| ScatterRow {
                scenario_id: t.scenario_id.clone(),
                metric: t.metric.clone(),
                pair_id: r.pair_id.clone(),
                score: r.score,
                accuracy: r.accuracy,
            })
        })
        .collect();
    Ok(EvalReport {
        scenarios,
        averages,
        degenerate,
        scatter,
    })
}

fn cell(c: Correlation) -> String {
    match c {
        Correlation::Value(v) => format!("{v:.4}"),
        Correlation::Degenerate => "degen".into(),
    }
}

fn opt_cell(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |v| format!("{v:.4}"))
}

fn hit_cell(v: Option<bool>) -> String {
    match v {
        Some(true) => "yes".into(),
        Some(false) => "no".into(),
        None => "-".into(),
    }
}

fn render_rows(out: &mut String, rows: &[Vec<String>]) {
    let widths: Vec<usize> = (0..rows[0].len())
        .map(|c| rows.iter().map(|r| r[c].chars().count()).max().unwrap_or(0))
        .collect();
    for row in rows {
        let line: Vec<String> = row
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(c, (v, &w))| if c == 0 { format!("{v:<w$}") } else { format!("{v:>w$}") })
            .collect();
        let _ = writeln!(out, "{}", line.join("  ").trim_end());
    }
}

impl EvalReport {
    /// Aligned plain-text rendering: one line per scenario, then the averages.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut rows = vec![["scenario", "kind", "metric", "pairs", "tau_w", "tau", "pearson", "top1", "top3"]
            .map(String::from)
            .to_vec()];
        for r in &self.scenarios {
            rows.push(vec![
                r.scenario_id.clone(),
                r.kind.to_string(),
                r.metric.clone(),
                r.pairs.to_string(),
                cell(r.tau_weighted),
                cell(r.tau),
                cell(r.pearson_r),
                hit_cell(Some(r.top1_hit)),
                hit_cell(r.top3_hit),
            ]);
        }
        render_rows(&mut out, &rows);
        out.push('\n');
        let mut rows = vec![["average", "kind", "scenarios", "tau_w", "tau", "pearson", "top1", "top3"]
            .map(String::from)
            .to_vec()];
        for a in &self.averages {
            rows.push(vec![
                a.metric.clone(),
                a.kind.to_string(),
                a.scenarios.to_string(),
                opt_cell(a.tau_weighted),
                opt_cell(a.tau),
                opt_cell(a.pearson_r),
                opt_cell(a.top1_rate),
                opt_cell(a.top3_rate),
            ]);
        }
        render_rows(&mut out, &rows);
        if !self.degenerate.is_empty() {
            let _ = writeln!(out, "\ndegenerate (excluded): {}", self.degenerate.join(", "));
        }
        out
    }

    /// `scenario_id,metric,pair_id,score,accuracy` with a header line.
    pub fn scatter_csv(&self) -> String {
        let mut out = String::from("scenario_id,metric,pair_id,score,accuracy\n");
        for r in &self.scatter {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                csv_field(&r.scenario_id),
                csv_field(&r.metric),
                csv_field(&r.pair_id),
                r.score,
                r.accuracy
            );
        }
        out
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}
