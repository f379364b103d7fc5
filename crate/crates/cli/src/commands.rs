use std::path::{Path, PathBuf};

use manigrad::attacks::{targeted_attack, targeted_attack_sweep, topk_attack, AttackConfig, AttackKind};
use manigrad::attribution::{blurred, completeness, mig, Method, Rule};
use manigrad::data::{constant_image, Dataset, Provenance};
use manigrad::experiment::{AttributionSettings, Explainer};
use manigrad::geodesic::{
    geodesic_ode_residual, geodesic_solve_multilevel, GradientMode, LatentCurve, SolverOptions, CHRISTOFFEL_STEP,
};
use manigrad::io::{csv_append, ntf_read, ntf_write, pgm_read, pgm_write};
use manigrad::metrics::config_hash;
use manigrad::models::file::{load_classifier, load_vae, save_classifier, save_vae};
use manigrad::models::{
    accuracy, train_classifier as fit_classifier, train_vae as fit_vae, ActivationMode, Classifier, ClassifierArch,
    Encoder, TrainConfig, Vae, VaeArch,
};
use manigrad::experiment::METRIC_HEADER;
use manigrad::Tensor;
use serde::de::DeserializeOwned;
use serde_json::json;

use crate::failure::{usage, CliResult};
use crate::record::{sidecar, RunRecord};
use crate::{
    AttackArgs, AttributeArgs, GenDataArgs, GeodesicArgs, SampleArgs, TrainClassifierArgs, TrainVaeArgs,
};

/// Parses a kebab-case or lowercase enum name through its serde form.
pub fn parse_name<T: DeserializeOwned>(flag: &str, value: &str) -> CliResult<T> {
    serde_json::from_value(serde_json::Value::String(value.to_string()))
        .map_err(|_| usage(format!("invalid value '{value}' for --{flag}")))
}

pub fn parse_method(value: &str) -> CliResult<Method> {
    value.parse().map_err(|_| usage(format!("invalid value '{value}' for --method")))
}

/// Square `[s, s]` when `dim` is a perfect square, otherwise `[1, dim]`.
pub fn image_shape(dim: usize) -> [usize; 2] {
    let side = (dim as f64).sqrt().round() as usize;
    if side * side == dim {
        [side, side]
    } else {
        [1, dim]
    }
}

/// Reads an NTF tensor, or a PGM mapped from `[0, 1]` to `[-1, 1]`, and
/// reshapes it to `[H, W]` for a model input of `dim` features.
pub fn read_image(path: &Path, dim: usize) -> CliResult<Tensor> {
    let raw = match path.extension().and_then(|e| e.to_str()) {
        Some("pgm") => pgm_read(path)?.map(|v| 2.0 * v - 1.0),
        _ => ntf_read(path)?,
    };
    Ok(raw.reshape(&image_shape(dim))?)
}

/// `black`, `white` or an image file, as `(image, name, file)`.
pub fn read_baseline(spec: &str, dim: usize) -> CliResult<(Tensor, String, Option<PathBuf>)> {
    let shape = image_shape(dim);
    match spec {
        "black" => Ok((Tensor::full(&shape, -1.0), "constant:-1".into(), None)),
        "white" => Ok((Tensor::full(&shape, 1.0), "constant:1".into(), None)),
        file => {
            let path = PathBuf::from(file);
            Ok((read_image(&path, dim)?, format!("file:{file}"), Some(path)))
        }
    }
}

fn dataset_inputs(record: &mut RunRecord, dir: &Path) -> CliResult<()> {
    for name in ["dataset.json", "inputs.ntf", "labels.ntf"] {
        record.input(&dir.join(name))?;
    }
    Ok(())
}

fn mse(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64
}

pub fn gen_data(a: &GenDataArgs) -> CliResult<()> {
    if a.dataset != "shapes" {
        return Err(usage(format!("unknown dataset '{}'; only 'shapes' is available", a.dataset)));
    }
    let provenance = Provenance {
        generator: a.dataset.clone(),
        seed: a.seed,
        n: a.n,
        classes: a.classes,
        baseline_fraction: a.baseline_fraction,
    };
    let data = Dataset::regenerate(&provenance)?;
    data.save(&a.out)?;
    let mut record = RunRecord::new("gen-data", a)?;
    record.seed("data", a.seed);
    for name in ["dataset.json", "inputs.ntf", "labels.ntf"] {
        record.output(&a.out.join(name));
    }
    record.result(json!({
        "images": data.len(),
        "classImages": data.class_indices().len(),
        "height": data.height,
        "width": data.width,
    }));
    record.write(&a.out.join("run.json"))
}

pub fn sample(a: &SampleArgs) -> CliResult<()> {
    let data = Dataset::load(&a.data)?;
    if a.index >= data.len() {
        return Err(usage(format!("--index {} outside a dataset of {} images", a.index, data.len())));
    }
    let mut record = RunRecord::new("sample", a)?;
    dataset_inputs(&mut record, &a.data)?;
    let mut image = data.image(a.index);
    if let Some(path) = &a.vae {
        let vae = load_vae(path)?;
        record.input(path)?;
        image = vae.decode(&vae.encode_mean(&image)?)?.reshape(image.shape())?;
    }
    ntf_write(&a.out, &image)?;
    record.output(&a.out);
    record.result(json!({ "label": data.labels[a.index] }));
    record.write(&sidecar(&a.out))
}

pub fn train_vae(a: &TrainVaeArgs) -> CliResult<()> {
    let data = Dataset::load(&a.data)?;
    let arch = VaeArch::new(data.dim(), a.latent, a.hidden.clone())?;
    let config = TrainConfig {
        epochs: a.epochs,
        batch_size: a.batch_size,
        learning_rate: a.lr,
        kl_weight: a.kl_weight,
        feature_weight: a.feature_weight,
        seed: a.seed,
    };
    let (vae, report) = fit_vae(&data, &arch, &config)?;
    save_vae(&a.out, &vae)?;

    let clean = data.rows(&data.class_indices());
    let recon = vae.reconstruct_batch(&clean)?;
    let constant_mse = |level: f64| -> CliResult<f64> {
        let img = constant_image(data.height, data.width, level);
        let rec = vae.reconstruct_batch(&img.reshape(&[1, img.numel()])?)?;
        Ok(mse(img.data(), rec.data()))
    };
    let mut record = RunRecord::new("train-vae", a)?;
    dataset_inputs(&mut record, &a.data)?;
    record.seed("train", a.seed);
    record.output(&a.out);
    record.result(json!({
        "lossHistory": report.loss_history,
        "cleanMse": mse(clean.data(), recon.data()),
        "blackMse": constant_mse(-1.0)?,
        "whiteMse": constant_mse(1.0)?,
    }));
    record.write(&sidecar(&a.out))
}

pub fn train_classifier(a: &TrainClassifierArgs) -> CliResult<()> {
    let vae = load_vae(&a.vae)?;
    let data = Dataset::load(&a.data)?;
    let rows = data.class_indices();
    let recon = vae.reconstruct_batch(&data.rows(&rows))?;
    let labels: Vec<usize> = rows.iter().map(|&i| data.labels[i]).collect();
    let arch = ClassifierArch {
        input_dim: data.dim(),
        hidden: a.hidden.clone(),
        num_classes: data.num_classes,
    };
    let config = TrainConfig {
        epochs: a.epochs,
        batch_size: a.batch_size,
        learning_rate: a.lr,
        seed: a.seed,
        ..TrainConfig::default()
    };
    let (clf, report) = fit_classifier(&recon, &labels, &arch, &config)?;
    save_classifier(&a.out, &clf)?;
    let mut record = RunRecord::new("train-classifier", a)?;
    record.input(&a.vae)?;
    dataset_inputs(&mut record, &a.data)?;
    record.seed("train", a.seed);
    record.output(&a.out);
    record.result(json!({
        "lossHistory": report.loss_history,
        "trainAccuracy": accuracy(&clf, &recon, &labels)?,
    }));
    record.write(&sidecar(&a.out))
}

pub fn geodesic(a: &GeodesicArgs) -> CliResult<()> {
    let vae = load_vae(&a.vae)?;
    let mode: GradientMode = parse_name("mode", &a.mode)?;
    let from = read_image(&a.from, vae.data_dim())?;
    let to = read_image(&a.to, vae.data_dim())?;
    let (z0, zt) = (vae.encode_mean(&from)?, vae.encode_mean(&to)?);
    let options = SolverOptions {
        mode,
        max_iterations: a.max_iterations,
        energy_tolerance: a.energy_tolerance,
        ..SolverOptions::default()
    };
    let encoder = (mode == GradientMode::EncoderApprox).then_some(&vae as &dyn Encoder);
    let (curve, mut report) = geodesic_solve_multilevel(&z0, &zt, a.steps, a.coarsest, &vae, &options, encoder)?;
    let mut linear_residual = None;
    if a.steps >= 8 {
        report.ode_residual = Some(geodesic_ode_residual(&curve, &vae, CHRISTOFFEL_STEP)?);
        let linear = LatentCurve::linear(&z0, &zt, a.steps)?;
        linear_residual = Some(geodesic_ode_residual(&linear, &vae, CHRISTOFFEL_STEP)?);
    }
    ntf_write(&a.out, curve.points())?;

    let mut result = serde_json::to_value(&report)?;
    result["linearOdeResidual"] = json!(linear_residual);
    let mut record = RunRecord::new("geodesic", a)?;
    record.input(&a.vae)?;
    record.input(&a.from)?;
    record.input(&a.to)?;
    record.output(&a.out);
    if let Some(path) = &a.report {
        let mut bytes = serde_json::to_vec_pretty(&result)?;
        bytes.push(b'\n');
        manigrad::io::write_atomic(path, &bytes)?;
        record.output(path);
    }
    record.result(result);
    record.write(&sidecar(&a.out))
}

fn load_optional_vae(path: Option<&PathBuf>, record: &mut RunRecord) -> CliResult<Option<Vae>> {
    match path {
        Some(p) => {
            record.input(p)?;
            Ok(Some(load_vae(p)?))
        }
        None => Ok(None),
    }
}

fn load_clf(path: &Path, record: &mut RunRecord) -> CliResult<Classifier> {
    record.input(path)?;
    Ok(load_classifier(path)?)
}

pub fn attribute(a: &AttributeArgs) -> CliResult<()> {
    let method = parse_method(&a.method)?;
    let rule: Rule = parse_name("rule", &a.rule)?;
    let mut record = RunRecord::new("attribute", a)?;
    let clf = load_clf(&a.clf, &mut record)?;
    let vae = load_optional_vae(a.vae.as_ref(), &mut record)?;
    if method.needs_generator() && vae.is_none() {
        return Err(usage(format!("--method {method} needs --vae")));
    }
    if a.curve.is_some() && method != Method::Mig {
        return Err(usage("--curve only applies to --method mig"));
    }
    let dim = clf.input_dim();
    let x = read_image(&a.input, dim)?;
    record.input(&a.input)?;
    let (baseline, baseline_name, baseline_file) = read_baseline(&a.baseline, dim)?;
    if let Some(path) = &baseline_file {
        record.input(path)?;
    }
    let settings = AttributionSettings {
        steps: a.steps,
        rule,
        geodesic_steps: a.geodesic_steps,
        blur_max_sigma: a.blur_sigma,
        smooth_sigma: a.smooth_sigma,
        smooth_samples: a.smooth_samples,
        seed: a.seed,
        ..AttributionSettings::default()
    };
    record.seed("smoothIg", a.seed);
    let explainer = Explainer::new(&clf, vae.as_ref(), settings.clone())?.with_baseline(baseline.clone(), baseline_name)?;
    let class = match a.class {
        Some(c) if c >= clf.num_classes() => {
            return Err(usage(format!("--class {c} outside {} classes", clf.num_classes())))
        }
        Some(c) => c,
        None => clf.predict(&x)?,
    };
    let f = clf.class_logit(class, ActivationMode::Native)?;

    let mut geodesic_report = None;
    let (scores, endpoints) = match method {
        Method::Mig => {
            let vae = vae.as_ref().expect("checked above");
            let curve = match &a.curve {
                Some(path) => {
                    record.input(path)?;
                    LatentCurve::from_points(ntf_read(path)?)?
                }
                None => {
                    let (curve, report) = explainer.geodesic(&x)?;
                    geodesic_report = Some(report);
                    curve
                }
            };
            let scores = mig(&f, vae, &curve, a.steps, rule)?.reshape(x.shape())?;
            (scores, Some((vae.decode(&curve.start())?, vae.decode(&curve.end())?)))
        }
        Method::Eig => {
            let vae = vae.as_ref().expect("checked above");
            let start = vae.decode(&vae.encode_mean(&baseline)?)?;
            let end = vae.decode(&vae.encode_mean(&x)?)?;
            (explainer.explain_class(method, &x, class, None)?, Some((start, end)))
        }
        Method::Ig => (explainer.explain_class(method, &x, class, None)?, Some((baseline.clone(), x.clone()))),
        Method::BlurIg => (
            explainer.explain_class(method, &x, class, None)?,
            Some((blurred(&x, a.blur_sigma)?, x.clone())),
        ),
        _ => (explainer.explain_class(method, &x, class, None)?, None),
    };
    let completeness = endpoints
        .map(|(start, end)| completeness(&f, &scores, &start, &end))
        .transpose()?;

    ntf_write(&a.out, &scores)?;
    record.output(&a.out);
    if let Some(path) = &a.heatmap {
        pgm_write(path, &manigrad::attribution::normalize_map(&scores), 0.0, 1.0)?;
        record.output(path);
    }
    if let (Some(path), Some(c)) = (&a.results, completeness) {
        let id = a.input.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        let row = vec![
            id,
            method.to_string(),
            "completeness".to_string(),
            format!("{}", c.residual),
            "0".to_string(),
            config_hash(&settings),
        ];
        csv_append(path, &METRIC_HEADER, &row)?;
        record.output(path);
    }
    record.result(json!({
        "method": method,
        "class": class,
        "baseline": a.baseline,
        "total": scores.sum(),
        "completeness": completeness,
        "geodesic": geodesic_report,
    }));
    record.write(&sidecar(&a.out))
}

pub fn attack(a: &AttackArgs) -> CliResult<()> {
    let kind: AttackKind = parse_name("kind", &a.kind)?;
    if a.gamma.is_empty() {
        return Err(usage("--gamma needs at least one value"));
    }
    let mut record = RunRecord::new("attack", a)?;
    let clf = load_clf(&a.clf, &mut record)?;
    let dim = clf.input_dim();
    let x = read_image(&a.input, dim)?;
    record.input(&a.input)?;
    let (baseline, _, baseline_file) = read_baseline(&a.baseline, dim)?;
    if let Some(path) = &baseline_file {
        record.input(path)?;
    }
    let config = AttackConfig {
        epsilon: a.eps,
        gamma: a.gamma[0],
        steps: a.steps,
        step_size: a.step_size,
        ig_steps: a.ig_steps,
        beta: a.beta,
        seed: a.seed,
        ..AttackConfig::default()
    };
    record.seed("attack", a.seed);
    let result = match kind {
        AttackKind::Targeted => {
            let target_path = a.target.as_ref().ok_or_else(|| usage("--kind targeted needs --target"))?;
            let target = read_image(target_path, dim)?;
            record.input(target_path)?;
            if a.gamma.len() == 1 {
                targeted_attack(&clf, &x, &target, &baseline, &config)?
            } else {
                targeted_attack_sweep(&clf, &x, &target, &baseline, &config, &a.gamma)?
            }
        }
        AttackKind::Topk => {
            let k = a.k.ok_or_else(|| usage("--kind topk needs --k"))?;
            topk_attack(&clf, &x, k, &baseline, &config)?
        }
    };
    ntf_write(&a.out, &result.x_adv)?;
    record.output(&a.out);
    let mut summary = serde_json::to_value(&result)?;
    if kind == AttackKind::Targeted {
        summary["halved"] = json!(result.halved());
    }
    if let Some(path) = &a.report {
        let mut bytes = serde_json::to_vec_pretty(&summary)?;
        bytes.push(b'\n');
        manigrad::io::write_atomic(path, &bytes)?;
        record.output(path);
    }
    record.result(summary);
    record.write(&sidecar(&a.out))
}
