//! `evaluate` and `report`: metric tables over many inputs and their summaries.

use std::path::{Path, PathBuf};

use manigrad::attacks::{AttackConfig, GAMMA_GRID};
use manigrad::attribution::Method;
use manigrad::experiment::{
    infidelity_table, robustness_table, sensitivity_table, summarize, test_inputs, AttributionSettings, Explainer,
    METRIC_HEADER, ROBUSTNESS_HEADER,
};
use manigrad::io::{csv_read, csv_to_bytes, ntf_read, write_atomic};
use manigrad::metrics::MetricConfig;
use manigrad::models::file::{load_classifier, load_vae};
use manigrad::{Error, Tensor};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::commands::{image_shape, parse_name, read_baseline};
use crate::failure::{usage, CliResult};
use crate::record::{sha256_file, sidecar, RunRecord};
use crate::{EvaluateArgs, ReportArgs};

/// Where the evaluated inputs come from.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum InputSource {
    /// Image files; the id of each input is its file stem.
    Files(Vec<PathBuf>),
    /// Fresh shapes reconstructed by the VAE and kept when classified
    /// correctly; ids are `t0`, `t1`, ...
    Generate { count: usize, classes: usize, seed: u64 },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct EvalConfig {
    pub classifier: PathBuf,
    #[serde(default)]
    pub vae: Option<PathBuf>,
    pub inputs: InputSource,
    #[serde(default = "default_methods")]
    pub methods: Vec<Method>,
    /// `black`, `white` or an image file.
    #[serde(default = "default_baseline")]
    pub baseline: String,
    #[serde(default)]
    pub attribution: AttributionSettings,
    #[serde(default)]
    pub metrics: MetricConfig,
    #[serde(default)]
    pub attack: AttackConfig,
    #[serde(default = "default_gammas")]
    pub gammas: Vec<f64>,
}

fn default_methods() -> Vec<Method> {
    vec![Method::Mig, Method::SmoothIg, Method::Ig]
}

fn default_baseline() -> String {
    "black".into()
}

fn default_gammas() -> Vec<f64> {
    GAMMA_GRID.to_vec()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
enum MetricKind {
    Infd,
    Sensmax,
    Ssi,
}

/// Relative paths in the config resolve against the config's directory.
fn resolve(base: &Path, path: &Path) -> PathBuf {
    if path.is_absolute() {
        path.to_path_buf()
    } else {
        base.join(path)
    }
}

fn load_config(path: &Path) -> CliResult<EvalConfig> {
    let raw = std::fs::read(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    let mut config: EvalConfig =
        serde_json::from_slice(&raw).map_err(|e| usage(format!("{}: invalid config: {e}", path.display())))?;
    let base = path.parent().unwrap_or(Path::new("."));
    config.classifier = resolve(base, &config.classifier);
    config.vae = config.vae.map(|p| resolve(base, &p));
    if let InputSource::Files(files) = &mut config.inputs {
        for f in files.iter_mut() {
            *f = resolve(base, f);
        }
    }
    if !matches!(config.baseline.as_str(), "black" | "white") {
        config.baseline = resolve(base, Path::new(&config.baseline)).display().to_string();
    }
    Ok(config)
}

pub fn evaluate(a: &EvaluateArgs) -> CliResult<()> {
    let metric: MetricKind = parse_name("metric", &a.metric)?;
    let config = load_config(&a.config)?;
    let mut record = RunRecord::new("evaluate", a)?;
    record.input(&a.config)?;
    record.input(&config.classifier)?;
    let clf = load_classifier(&config.classifier)?;
    let vae = match &config.vae {
        Some(p) => {
            record.input(p)?;
            Some(load_vae(p)?)
        }
        None => None,
    };
    if config.methods.iter().any(|m| m.needs_generator()) && vae.is_none() {
        return Err(usage("config lists a method that needs a VAE but has no \"vae\""));
    }

    let dim = clf.input_dim();
    let inputs: Vec<(String, Tensor)> = match &config.inputs {
        InputSource::Files(files) => files
            .iter()
            .map(|f| {
                record.input(f)?;
                let id = f.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
                Ok((id, ntf_read(f)?.reshape(&image_shape(dim))?))
            })
            .collect::<CliResult<_>>()?,
        InputSource::Generate { count, classes, seed } => {
            let vae = vae.as_ref().ok_or_else(|| usage("generated inputs need a \"vae\""))?;
            record.seed("inputs", *seed);
            test_inputs(vae, &clf, *count, *classes, *seed)?
                .into_iter()
                .enumerate()
                .map(|(i, (x, _))| (format!("t{i}"), x))
                .collect()
        }
    };
    if inputs.is_empty() {
        return Err(usage("no inputs to evaluate"));
    }

    let (baseline, name, file) = read_baseline(&config.baseline, dim)?;
    if let Some(p) = &file {
        record.input(p)?;
    }
    let explainer = Explainer::new(&clf, vae.as_ref(), config.attribution.clone())?.with_baseline(baseline, name)?;
    record.seed("metrics", config.metrics.seed);
    record.seed("attribution", config.attribution.seed);

    let (bytes, result) = match metric {
        MetricKind::Infd | MetricKind::Sensmax => {
            let rows = if metric == MetricKind::Infd {
                infidelity_table(&explainer, &inputs, &config.methods, &config.metrics)?
            } else {
                sensitivity_table(&explainer, &inputs, &config.methods, &config.metrics)?
            };
            let values: Vec<_> = rows.iter().map(|r| (r.method, r.metric.clone(), r.value)).collect();
            let records: Vec<Vec<String>> = rows.iter().map(|r| r.to_record()).collect();
            (csv_to_bytes(&METRIC_HEADER, &records)?, json!({ "summaries": summarize(&values) }))
        }
        MetricKind::Ssi => {
            record.seed("attack", config.attack.seed);
            let (attacks, rows) =
                robustness_table(&explainer, &inputs, &config.methods, &config.attack, &config.gammas, &config.metrics)?;
            let values: Vec<_> = rows.iter().map(|r| (r.method, "ssi".to_string(), r.ssi)).collect();
            let records: Vec<Vec<String>> = rows.iter().map(|r| r.to_record()).collect();
            let halved = attacks.iter().filter(|r| r.halved()).count();
            let attack_rows: Vec<_> = inputs
                .iter()
                .zip(&attacks)
                .map(|((id, _), r)| {
                    json!({
                        "inputId": id,
                        "gamma": r.gamma,
                        "initialDistance": r.initial_distance,
                        "attributionDistance": r.attribution_distance,
                        "classPreserved": r.class_preserved,
                        "halved": r.halved(),
                    })
                })
                .collect();
            (
                csv_to_bytes(&ROBUSTNESS_HEADER, &records)?,
                json!({
                    "summaries": summarize(&values),
                    "attacks": attack_rows,
                    "successRate": halved as f64 / attacks.len() as f64,
                }),
            )
        }
    };
    write_atomic(&a.out, &bytes)?;
    record.output(&a.out);
    let mut result = result;
    result["config"] = serde_json::to_value(&config)?;
    result["metricConfigHash"] = json!(config.metrics.hash());
    record.result(result);
    record.write(&sidecar(&a.out))
}

#[derive(Debug, Serialize)]
#[serde(rename_all = "camelCase")]
struct ReportRow {
    method: Method,
    metric: String,
    count: usize,
    mean: f64,
    stderr: f64,
    min: f64,
    max: f64,
}

fn column(header: &[String], name: &str) -> CliResult<usize> {
    header
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| usage(format!("results file has no '{name}' column")))
}

fn parse_value(raw: &str) -> CliResult<f64> {
    raw.parse().map_err(|_| usage(format!("non-numeric value '{raw}' in results file")))
}

/// Summarizes a metric or robustness CSV: per-(method, metric) statistics and,
/// for each metric, the methods ordered by increasing mean.
pub fn report(a: &ReportArgs) -> CliResult<()> {
    let (header, rows) = csv_read(&a.input)?;
    let method_col = column(&header, "method")?;
    let mut values: Vec<(Method, String, f64)> = Vec::new();
    if header.iter().any(|h| h == "metric") {
        let (metric_col, value_col) = (column(&header, "metric")?, column(&header, "value")?);
        for row in &rows {
            let method = crate::commands::parse_method(&row[method_col])?;
            values.push((method, row[metric_col].clone(), parse_value(&row[value_col])?));
        }
    } else {
        let (ssi_col, kept_col) = (column(&header, "ssi")?, column(&header, "class_preserved")?);
        for row in &rows {
            let method = crate::commands::parse_method(&row[method_col])?;
            values.push((method, "ssi".to_string(), parse_value(&row[ssi_col])?));
            let kept = if row[kept_col] == "true" { 1.0 } else { 0.0 };
            values.push((method, "class_preserved".to_string(), kept));
        }
    }

    let summaries: Vec<ReportRow> = summarize(&values)
        .into_iter()
        .map(|s| {
            let group = values.iter().filter(|(m, k, _)| *m == s.method && *k == s.metric).map(|(_, _, v)| *v);
            let (min, max) = group.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
            ReportRow {
                method: s.method,
                metric: s.metric,
                count: s.count,
                mean: s.mean,
                stderr: s.stderr,
                min,
                max,
            }
        })
        .collect();
    let mut metrics: Vec<&str> = Vec::new();
    for s in &summaries {
        if !metrics.contains(&s.metric.as_str()) {
            metrics.push(&s.metric);
        }
    }
    let orderings: serde_json::Map<String, serde_json::Value> = metrics
        .iter()
        .map(|metric| {
            let mut group: Vec<&ReportRow> = summaries.iter().filter(|s| s.metric == *metric).collect();
            group.sort_by(|x, y| x.mean.total_cmp(&y.mean));
            let order: Vec<Method> = group.iter().map(|s| s.method).collect();
            (metric.to_string(), json!(order))
        })
        .collect();

    let summary = json!({
        "source": a.input.display().to_string(),
        "sourceSha256": sha256_file(&a.input)?,
        "summaries": summaries,
        "orderingsAscending": orderings,
    });
    let mut bytes = serde_json::to_vec_pretty(&summary)?;
    bytes.push(b'\n');
    write_atomic(&a.out, &bytes)?;

    let mut record = RunRecord::new("report", a)?;
    record.input(&a.input)?;
    record.output(&a.out);
    record.result(json!({ "groups": summaries.len() }));
    record.write(&sidecar(&a.out))
}
