//! Dialect-induced performance drop over precomputed alignment scores:
//! per-pair performance, per-dialect and overall drops, human-score
//! scaling, Pearson correlation and report rendering.
//!
//! Score CSV: `pair_id,variant,metric,sample_index,score`, variant `sae` or
//! `dialect`. Report CSV: `model,style,metric,dialect,drop_pct`.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::fs;
use std::path::Path;

use serde::Deserialize;

use crate::dataset::{DialectId, PairSet, PromptStyle};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("pair {0} has no samples")]
    EmptySamples(String),
    #[error("pair {0} has zero SAE performance")]
    ZeroSae(String),
    #[error("cannot compare {0}")]
    Mismatch(String),
    #[error("no dialects to aggregate")]
    EmptyDialects,
    #[error("human score {value} for pair {pair} outside [0, 10]")]
    HumanOutOfRange { pair: String, value: f64 },
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("need at least two points")]
    TooFewPoints,
    #[error("zero variance")]
    ZeroVariance,
    #[error("no complete pairs")]
    NoCompletePairs,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Metric {
    VqaScore,
    ClipScore,
    Human,
    Other(String),
}

impl Metric {
    pub fn parse(s: &str) -> Metric {
        match s {
            "vqascore" => Metric::VqaScore,
            "clipscore" => Metric::ClipScore,
            "human" => Metric::Human,
            other => Metric::Other(other.to_string()),
        }
    }

    pub fn as_str(&self) -> &str {
        match self {
            Metric::VqaScore => "vqascore",
            Metric::ClipScore => "clipscore",
            Metric::Human => "human",
            Metric::Other(s) => s,
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Variant {
    Sae,
    Dialect,
}

impl Variant {
    pub fn parse(s: &str) -> Option<Variant> {
        match s {
            "sae" => Some(Variant::Sae),
            "dialect" => Some(Variant::Dialect),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AggregationMode {
    /// `(mean SAE - mean dialect) / mean SAE` over pair performances.
    #[default]
    RatioOfAverages,
    /// Mean of per-pair drops.
    MeanOfPairDrops,
}

impl AggregationMode {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "ratio-of-averages" => Some(AggregationMode::RatioOfAverages),
            "mean-of-pair-drops" => Some(AggregationMode::MeanOfPairDrops),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            AggregationMode::RatioOfAverages => "ratio-of-averages",
            AggregationMode::MeanOfPairDrops => "mean-of-pair-drops",
        }
    }
}

/// Scores of the generations for one prompt variant, each measured against
/// the SAE prompt.
#[derive(Debug, Clone, PartialEq)]
pub struct GenerationScores {
    pub pair_id: String,
    pub variant: Variant,
    pub metric: Metric,
    pub samples: Vec<f64>,
}

#[derive(Deserialize)]
struct RawScore {
    pair_id: String,
    variant: String,
    metric: String,
    sample_index: usize,
    score: f64,
}

/// Parses a score CSV, grouping rows by `(pair_id, variant, metric)` and
/// ordering samples by `sample_index`. Output is sorted by that key.
pub fn parse_scores(text: &str) -> Result<Vec<GenerationScores>, EvalError> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut groups: BTreeMap<(String, Variant, Metric), BTreeMap<usize, f64>> = BTreeMap::new();
    let csv_err = |e: csv::Error| EvalError::Malformed {
        line: e.position().map_or(0, |p| p.line() as usize),
        message: e.to_string(),
    };
    let headers = rdr.headers().map_err(csv_err)?.clone();
    let mut record = csv::StringRecord::new();
    while rdr.read_record(&mut record).map_err(csv_err)? {
        let line = record.position().map_or(0, |p| p.line() as usize);
        let rec: RawScore = record.deserialize(Some(&headers)).map_err(|e| EvalError::Malformed {
            line,
            message: e.to_string(),
        })?;
        let malformed = |message: String| EvalError::Malformed { line, message };
        let variant =
            Variant::parse(&rec.variant).ok_or_else(|| malformed(format!("unknown variant {:?}", rec.variant)))?;
        if !rec.score.is_finite() {
            return Err(malformed("non-finite score".into()));
        }
        let key = (rec.pair_id.clone(), variant, Metric::parse(&rec.metric));
        if groups
            .entry(key)
            .or_default()
            .insert(rec.sample_index, rec.score)
            .is_some()
        {
            return Err(malformed(format!(
                "duplicate sample {} for {} {}",
                rec.sample_index, rec.pair_id, rec.variant
            )));
        }
    }
    Ok(groups
        .into_iter()
        .map(|((pair_id, variant, metric), samples)| GenerationScores {
            pair_id,
            variant,
            metric,
            samples: samples.into_values().collect(),
        })
        .collect())
}

pub fn read_scores(path: impl AsRef<Path>) -> Result<Vec<GenerationScores>, EvalError> {
    parse_scores(&read_text(path.as_ref())?)
}

fn read_text(path: &Path) -> Result<String, EvalError> {
    fs::read_to_string(path).map_err(|source| EvalError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Mean of the samples.
pub fn pair_performance(scores: &GenerationScores) -> Result<f64, EvalError> {
    if scores.samples.is_empty() {
        return Err(EvalError::EmptySamples(scores.pair_id.clone()));
    }
    Ok(scores.samples.iter().sum::<f64>() / scores.samples.len() as f64)
}

fn check_partners(sae: &GenerationScores, dialect: &GenerationScores) -> Result<(), EvalError> {
    if sae.pair_id != dialect.pair_id || sae.metric != dialect.metric {
        return Err(EvalError::Mismatch(format!(
            "{}/{} with {}/{}",
            sae.pair_id, sae.metric, dialect.pair_id, dialect.metric
        )));
    }
    if sae.variant != Variant::Sae || dialect.variant != Variant::Dialect {
        return Err(EvalError::Mismatch(format!("variants of pair {}", sae.pair_id)));
    }
    Ok(())
}

/// `(SAE(p) - Dialect(p)) / SAE(p)` as a fraction.
pub fn pair_drop(sae: &GenerationScores, dialect: &GenerationScores) -> Result<f64, EvalError> {
    check_partners(sae, dialect)?;
    let s = pair_performance(sae)?;
    let d = pair_performance(dialect)?;
    if s == 0.0 {
        return Err(EvalError::ZeroSae(sae.pair_id.clone()));
    }
    Ok((s - d) / s)
}

/// Both variants of one pair, tagged with the pair's dialect.
#[derive(Debug, Clone, PartialEq)]
pub struct PairScores {
    pub dialect: DialectId,
    pub sae: GenerationScores,
    pub dialect_scores: GenerationScores,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DialectDrop {
    /// Drop in percent.
    pub percent: f64,
    pub pairs_used: usize,
    /// Pairs left out for zero SAE performance.
    pub excluded: Vec<String>,
}

/// Per-dialect drop in percent. Pairs with zero SAE performance are left
/// out and listed in `excluded`.
pub fn dialect_drop(pairs: &[PairScores], mode: AggregationMode) -> Result<DialectDrop, EvalError> {
    let first = pairs.first().ok_or(EvalError::NoCompletePairs)?;
    let mut sae_perf = Vec::with_capacity(pairs.len());
    let mut dia_perf = Vec::with_capacity(pairs.len());
    let mut excluded = Vec::new();
    for p in pairs {
        if p.dialect != first.dialect {
            return Err(EvalError::Mismatch(format!(
                "dialects {} and {}",
                first.dialect, p.dialect
            )));
        }
        if p.sae.metric != first.sae.metric {
            return Err(EvalError::Mismatch(format!(
                "metrics {} and {}",
                first.sae.metric, p.sae.metric
            )));
        }
        check_partners(&p.sae, &p.dialect_scores)?;
        let s = pair_performance(&p.sae)?;
        let d = pair_performance(&p.dialect_scores)?;
        if s == 0.0 {
            excluded.push(p.sae.pair_id.clone());
            continue;
        }
        sae_perf.push(s);
        dia_perf.push(d);
    }
    if sae_perf.is_empty() {
        return Err(EvalError::NoCompletePairs);
    }
    let n = sae_perf.len() as f64;
    let fraction = match mode {
        AggregationMode::RatioOfAverages => {
            let s = sae_perf.iter().sum::<f64>() / n;
            let d = dia_perf.iter().sum::<f64>() / n;
            (s - d) / s
        }
        AggregationMode::MeanOfPairDrops => sae_perf.iter().zip(&dia_perf).map(|(s, d)| (s - d) / s).sum::<f64>() / n,
    };
    Ok(DialectDrop {
        percent: 100.0 * fraction,
        pairs_used: sae_perf.len(),
        excluded,
    })
}

/// Unweighted mean of per-dialect percentages.
pub fn overall_drop(per_dialect: &BTreeMap<DialectId, f64>) -> Result<f64, EvalError> {
    if per_dialect.is_empty() {
        return Err(EvalError::EmptyDialects);
    }
    Ok(per_dialect.values().sum::<f64>() / per_dialect.len() as f64)
}

/// Maps raw human ratings in `[0, 10]` onto `[0, 1]`.
pub fn scale_human_scores(raw: &GenerationScores) -> Result<GenerationScores, EvalError> {
    if let Some(&value) = raw.samples.iter().find(|x| !(0.0..=10.0).contains(*x)) {
        return Err(EvalError::HumanOutOfRange {
            pair: raw.pair_id.clone(),
            value,
        });
    }
    Ok(GenerationScores {
        samples: raw.samples.iter().map(|x| x * 0.1).collect(),
        ..raw.clone()
    })
}

/// Sample Pearson correlation, clamped to `[-1, 1]`.
pub fn pearson_r(x: &[f64], y: &[f64]) -> Result<f64, EvalError> {
    if x.len() != y.len() {
        return Err(EvalError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 2 {
        return Err(EvalError::TooFewPoints);
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(EvalError::ZeroVariance);
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct DialectReport {
    pub model: String,
    pub metric: Metric,
    /// `None` covers both styles.
    pub style: Option<PromptStyle>,
    pub mode: AggregationMode,
    pub per_dialect: BTreeMap<DialectId, f64>,
    pub overall: f64,
    pub pairs_used: usize,
    /// Dataset pairs of the requested style lacking one or both variants.
    pub incomplete: usize,
    pub excluded_zero_sae: Vec<String>,
    /// Score records whose pair id is not in the dataset.
    pub unknown_pairs: usize,
}

fn style_label(style: Option<PromptStyle>) -> &'static str {
    style.map_or("all", PromptStyle::as_str)
}

/// Drop report for one metric over the pairs of `dataset` with the given
/// style. Human ratings are scaled before aggregation.
pub fn build_report(
    scores: &[GenerationScores],
    dataset: &PairSet,
    metric: &Metric,
    style: Option<PromptStyle>,
    mode: AggregationMode,
    model: &str,
) -> Result<DialectReport, EvalError> {
    let mut by_pair: BTreeMap<&str, (Option<&GenerationScores>, Option<&GenerationScores>)> = BTreeMap::new();
    let mut unknown_pairs = 0;
    for s in scores.iter().filter(|s| &s.metric == metric) {
        if !dataset.contains(&s.pair_id) {
            unknown_pairs += 1;
            continue;
        }
        let slot = by_pair.entry(&s.pair_id).or_default();
        match s.variant {
            Variant::Sae => slot.0 = Some(s),
            Variant::Dialect => slot.1 = Some(s),
        }
    }

    let mut grouped: BTreeMap<DialectId, Vec<PairScores>> = BTreeMap::new();
    let mut incomplete = 0;
    let scale = |s: &GenerationScores| {
        if *metric == Metric::Human {
            scale_human_scores(s)
        } else {
            Ok(s.clone())
        }
    };
    for pair in dataset.iter().filter(|p| style.is_none_or(|st| p.style == st)) {
        match by_pair.get(pair.id.as_str()) {
            Some((Some(sae), Some(dia))) => grouped.entry(pair.dialect.clone()).or_default().push(PairScores {
                dialect: pair.dialect.clone(),
                sae: scale(sae)?,
                dialect_scores: scale(dia)?,
            }),
            _ => incomplete += 1,
        }
    }
    if grouped.is_empty() {
        return Err(EvalError::NoCompletePairs);
    }

    let mut per_dialect = BTreeMap::new();
    let mut excluded_zero_sae = Vec::new();
    let mut pairs_used = 0;
    for (dialect, pairs) in &grouped {
        match dialect_drop(pairs, mode) {
            Ok(d) => {
                pairs_used += d.pairs_used;
                excluded_zero_sae.extend(d.excluded);
                per_dialect.insert(dialect.clone(), d.percent);
            }
            Err(EvalError::NoCompletePairs) => {
                excluded_zero_sae.extend(pairs.iter().map(|p| p.sae.pair_id.clone()));
            }
            Err(e) => return Err(e),
        }
    }
    let overall = overall_drop(&per_dialect).map_err(|_| EvalError::NoCompletePairs)?;
    Ok(DialectReport {
        model: model.to_string(),
        metric: metric.clone(),
        style,
        mode,
        per_dialect,
        overall,
        pairs_used,
        incomplete,
        excluded_zero_sae,
        unknown_pairs,
    })
}

/// Every metric present in `scores`, in sorted order.
pub fn metrics_in(scores: &[GenerationScores]) -> Vec<Metric> {
    let mut m: Vec<Metric> = scores.iter().map(|s| s.metric.clone()).collect();
    m.sort();
    m.dedup();
    m
}

/// Pearson r between two reports' per-dialect drops over their shared
/// dialects; `None` when fewer than two dialects are shared or a side has
/// no variance.
pub fn dialect_correlation(a: &DialectReport, b: &DialectReport) -> Option<f64> {
    let (x, y): (Vec<f64>, Vec<f64>) = a
        .per_dialect
        .iter()
        .filter_map(|(d, va)| b.per_dialect.get(d).map(|vb| (*va, *vb)))
        .unzip();
    pearson_r(&x, &y).ok()
}

pub const REPORT_HEADER: &str = "model,style,metric,dialect,drop_pct";

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Machine-readable rows at full precision, per dialect then `overall`.
pub fn report_csv(reports: &[DialectReport]) -> String {
    let mut out = String::from(REPORT_HEADER);
    out.push('\n');
    for r in reports {
        let prefix = format!("{},{},{}", csv_field(&r.model), style_label(r.style), r.metric);
        for (d, v) in &r.per_dialect {
            let _ = writeln!(out, "{prefix},{d},{v}");
        }
        let _ = writeln!(out, "{prefix},overall,{}", r.overall);
    }
    out
}

/// Markdown table with two-decimal percentages, one row per report.
pub fn report_markdown(reports: &[DialectReport]) -> String {
    let mut dialects: Vec<&DialectId> = reports.iter().flat_map(|r| r.per_dialect.keys()).collect();
    dialects.sort();
    dialects.dedup();
    let mut out = String::from("| Model | Style | Metric |");
    for d in &dialects {
        let _ = write!(out, " {d} |");
    }
    out.push_str(" Overall |\n|---|---|---|");
    for _ in &dialects {
        out.push_str("---:|");
    }
    out.push_str("---:|\n");
    for r in reports {
        let _ = write!(out, "| {} | {} | {} |", r.model, style_label(r.style), r.metric);
        for d in &dialects {
            match r.per_dialect.get(*d) {
                Some(v) => {
                    let _ = write!(out, " {v:.2} |");
                }
                None => out.push_str(" - |"),
            }
        }
        let _ = writeln!(out, " {:.2} |", r.overall);
    }
    out
}

/// One row of a per-dialect means table: mean dialect-prompt and mean
/// SAE-prompt performance of one model.
#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct MeanRow {
    pub model: String,
    pub style: String,
    pub metric: String,
    pub dialect: String,
    pub dialect_score: f64,
    pub sae_score: f64,
}

/// Reads a CSV with header `model,style,metric,dialect,dialect_score,sae_score`.
pub fn read_mean_rows(path: impl AsRef<Path>) -> Result<Vec<MeanRow>, EvalError> {
    parse_mean_rows(&read_text(path.as_ref())?)
}

pub fn parse_mean_rows(text: &str) -> Result<Vec<MeanRow>, EvalError> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    rdr.deserialize()
        .map(|r| {
            r.map_err(|e: csv::Error| EvalError::Malformed {
                line: e.position().map_or(0, |p| p.line() as usize),
                message: e.to_string(),
            })
        })
        .collect()
}

/// Builds drop reports from per-dialect means, one per
/// `(model, style, metric)` in first-appearance order. Each mean enters
/// [`dialect_drop`] as a single-sample pair.
pub fn reports_from_means(rows: &[MeanRow], mode: AggregationMode) -> Result<Vec<DialectReport>, EvalError> {
    let mut order: Vec<(String, String, String)> = Vec::new();
    let mut groups: BTreeMap<(String, String, String), Vec<&MeanRow>> = BTreeMap::new();
    for r in rows {
        let key = (r.model.clone(), r.style.clone(), r.metric.clone());
        if !groups.contains_key(&key) {
            order.push(key.clone());
        }
        groups.entry(key).or_default().push(r);
    }
    let mut out = Vec::with_capacity(order.len());
    for key in order {
        let group = &groups[&key];
        let metric = Metric::parse(&key.2);
        let style = PromptStyle::parse(&key.1);
        let mut per_dialect = BTreeMap::new();
        for r in group {
            let dialect = DialectId::new(r.dialect.as_str());
            let id = format!("{}/{}/{}", key.0, key.1, r.dialect);
            let mk = |variant, v: f64| GenerationScores {
                pair_id: id.clone(),
                variant,
                metric: metric.clone(),
                samples: vec![v],
            };
            let pair = PairScores {
                dialect: dialect.clone(),
                sae: mk(Variant::Sae, r.sae_score),
                dialect_scores: mk(Variant::Dialect, r.dialect_score),
            };
            per_dialect.insert(dialect, dialect_drop(&[pair], mode)?.percent);
        }
        out.push(DialectReport {
            model: key.0.clone(),
            metric,
            style,
            mode,
            overall: overall_drop(&per_dialect)?,
            pairs_used: per_dialect.len(),
            per_dialect,
            incomplete: 0,
            excluded_zero_sae: Vec::new(),
            unknown_pairs: 0,
        });
    }
    Ok(out)
}

/// Pearson r between two metrics' overall drops across models sharing a
/// style, paired by model name.
pub fn model_correlation(reports: &[DialectReport], style: Option<PromptStyle>, a: &Metric, b: &Metric) -> Option<f64> {
    let pick = |m: &Metric| -> BTreeMap<&str, f64> {
        reports
            .iter()
            .filter(|r| &r.metric == m && r.style == style)
            .map(|r| (r.model.as_str(), r.overall))
            .collect()
    };
    let (ma, mb) = (pick(a), pick(b));
    let (x, y): (Vec<f64>, Vec<f64>) = ma
        .iter()
        .filter_map(|(model, va)| mb.get(model).map(|vb| (*va, *vb)))
        .unzip();
    pearson_r(&x, &y).ok()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gs(id: &str, variant: Variant, samples: &[f64]) -> GenerationScores {
        GenerationScores {
            pair_id: id.into(),
            variant,
            metric: Metric::VqaScore,
            samples: samples.to_vec(),
        }
    }

    fn pair(id: &str, dialect: &str, sae: &[f64], dia: &[f64]) -> PairScores {
        PairScores {
            dialect: DialectId::new(dialect),
            sae: gs(id, Variant::Sae, sae),
            dialect_scores: gs(id, Variant::Dialect, dia),
        }
    }

    #[test]
    fn pair_performance_examples() {
        assert_eq!(pair_performance(&gs("p", Variant::Sae, &[0.8; 4])).unwrap(), 0.8);
        assert!((pair_performance(&gs("p", Variant::Sae, &[0.2, 0.4, 0.6])).unwrap() - 0.4).abs() < 1e-15);
        assert_eq!(pair_performance(&gs("p", Variant::Sae, &[0.55])).unwrap(), 0.55);
        assert!(pair_performance(&gs("p", Variant::Sae, &[])).is_err());
    }

    #[test]
    fn pair_drop_examples() {
        let s = gs("p", Variant::Sae, &[0.8]);
        assert_eq!(pair_drop(&s, &gs("p", Variant::Dialect, &[0.4])).unwrap(), 0.5);
        assert_eq!(pair_drop(&s, &gs("p", Variant::Dialect, &[0.8])).unwrap(), 0.0);
        assert_eq!(pair_drop(&s, &gs("p", Variant::Dialect, &[0.0, 0.0])).unwrap(), 1.0);
        assert!(matches!(
            pair_drop(&gs("p", Variant::Sae, &[0.0]), &gs("p", Variant::Dialect, &[0.4])),
            Err(EvalError::ZeroSae(_))
        ));
        assert!(pair_drop(&s, &gs("q", Variant::Dialect, &[0.4])).is_err());
    }

    #[test]
    fn dialect_drop_sd15_examples() {
        let aae = dialect_drop(
            &[pair("a", "AAE", &[77.41], &[62.31])],
            AggregationMode::RatioOfAverages,
        )
        .unwrap();
        assert!((aae.percent - 19.51).abs() < 0.005, "{}", aae.percent);
        let bre = dialect_drop(
            &[pair("b", "BrE", &[79.47], &[72.59])],
            AggregationMode::RatioOfAverages,
        )
        .unwrap();
        assert!((bre.percent - 8.66).abs() < 0.005, "{}", bre.percent);
        let same = dialect_drop(
            &[pair("c", "AAE", &[0.3, 0.5], &[0.3, 0.5])],
            AggregationMode::MeanOfPairDrops,
        )
        .unwrap();
        assert_eq!(same.percent, 0.0);
    }

    #[test]
    fn dialect_drop_modes_and_exclusion() {
        let pairs = [
            pair("a", "BrE", &[0.8, 0.6], &[0.4, 0.5]),
            pair("b", "BrE", &[0.9, 0.9, 0.6], &[0.8, 0.6, 0.4]),
            pair("z", "BrE", &[0.0], &[0.3]),
        ];
        let r = dialect_drop(&pairs, AggregationMode::RatioOfAverages).unwrap();
        assert!((r.percent - 30.0).abs() < 1e-9);
        assert_eq!(r.excluded, vec!["z".to_string()]);
        let m = dialect_drop(&pairs, AggregationMode::MeanOfPairDrops).unwrap();
        assert!((m.percent - 30.357142857142858).abs() < 1e-9);
        let mixed = [pair("a", "BrE", &[1.0], &[1.0]), pair("b", "AAE", &[1.0], &[1.0])];
        assert!(matches!(
            dialect_drop(&mixed, AggregationMode::RatioOfAverages),
            Err(EvalError::Mismatch(_))
        ));
    }

    #[test]
    fn overall_examples() {
        let m: BTreeMap<DialectId, f64> = [
            ("AAE", 19.51),
            ("BrE", 8.66),
            ("ChE", 36.5),
            ("InE", 42.15),
            ("SgE", 28.48),
        ]
        .into_iter()
        .map(|(d, v)| (DialectId::new(d), v))
        .collect();
        assert!((overall_drop(&m).unwrap() - 27.06).abs() < 0.005);
        let two: BTreeMap<DialectId, f64> = [(DialectId::new("AAE"), 10.0), (DialectId::new("BrE"), 30.0)].into();
        assert_eq!(overall_drop(&two).unwrap(), 20.0);
        assert!(overall_drop(&BTreeMap::new()).is_err());
    }

    #[test]
    fn human_scaling() {
        let raw = GenerationScores {
            metric: Metric::Human,
            ..gs("p", Variant::Sae, &[7.0, 8.0, 6.0, 10.0, 0.0])
        };
        let s = scale_human_scores(&raw).unwrap();
        for (a, b) in s.samples.iter().zip([0.7, 0.8, 0.6, 1.0, 0.0]) {
            assert!((a - b).abs() < 1e-15);
        }
        let bad = GenerationScores {
            metric: Metric::Human,
            ..gs("p", Variant::Sae, &[10.5])
        };
        assert!(scale_human_scores(&bad).is_err());
    }

    #[test]
    fn pearson_examples() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v + 3.0).collect();
        assert!((pearson_r(&x, &y).unwrap() - 1.0).abs() < 1e-12);
        assert!((pearson_r(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap() + 1.0).abs() < 1e-12);
        assert!((pearson_r(&x, &[1.0, 3.0, 2.0, 4.0]).unwrap() - 0.8).abs() < 1e-12);
        assert!(matches!(pearson_r(&x, &[1.0; 4]), Err(EvalError::ZeroVariance)));
        assert!(matches!(pearson_r(&x, &[1.0]), Err(EvalError::LengthMismatch(4, 1))));
    }

    #[test]
    fn parse_scores_groups_and_reports_lines() {
        let text = "pair_id,variant,metric,sample_index,score\np,sae,vqascore,1,0.6\np,sae,vqascore,0,0.8\np,dialect,vqascore,0,0.4\n";
        let s = parse_scores(text).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s[0].variant, Variant::Sae);
        assert_eq!(s[0].samples, vec![0.8, 0.6]);
        let bad = "pair_id,variant,metric,sample_index,score\np,sae,vqascore,0,0.8\np,sae,vqascore,x,0.8\n";
        match parse_scores(bad) {
            Err(EvalError::Malformed { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        let bad = "pair_id,variant,metric,sample_index,score\np,both,vqascore,0,0.8\n";
        assert!(matches!(parse_scores(bad), Err(EvalError::Malformed { line: 2, .. })));
    }

    #[test]
    fn rendering() {
        let rows = parse_mean_rows(
            "model,style,metric,dialect,dialect_score,sae_score\nM,concise,vqascore,AAE,62.31,77.41\nM,concise,vqascore,BrE,72.59,79.47\n",
        )
        .unwrap();
        let reports = reports_from_means(&rows, AggregationMode::RatioOfAverages).unwrap();
        let md = report_markdown(&reports);
        assert!(md.contains("| M | concise | vqascore | 19.51 | 8.66 | 14.08 |"), "{md}");
        let csv = report_csv(&reports);
        assert!(csv.starts_with(REPORT_HEADER));
        assert_eq!(csv.lines().count(), 4);
        assert!(csv
            .lines()
            .nth(3)
            .unwrap()
            .starts_with("M,concise,vqascore,overall,14.08"));
    }
}
