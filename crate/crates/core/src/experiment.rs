//! End-to-end pipeline: data, models, explanations and the evaluation tables.

use serde::{Deserialize, Serialize};

use crate::attacks::{evaluate_robustness, targeted_attack_sweep, AttackConfig, AttackResult, AttackedInput, RobustnessRow};
use crate::attribution::{
    blur_ig, eig, guided_backprop, input_x_gradient, integrated_gradients, mig, saliency, smooth_ig, AttributionMap,
    Method, PathKind, Rule, SmoothConfig,
};
use crate::data::{augment_baselines, constant_image, gen_shapes, Dataset};
use crate::error::{Error, Result};
use crate::geodesic::{geodesic_solve_multilevel, solve_from, GeodesicReport, LatentCurve, SolverOptions};
use crate::metrics::{infidelity, max_sensitivity, Estimate, MetricConfig};
use crate::models::{
    accuracy, train_classifier, train_vae, ActivationMode, Classifier, ClassifierArch, TrainConfig, TrainReport, Vae,
    VaeArch,
};
use crate::rng::derive_seed;
use crate::tensor::Tensor;

/// Everything needed to rebuild the trained models from scratch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", default)]
pub struct PipelineConfig {
    pub seed: u64,
    pub n: usize,
    pub classes: usize,
    pub baseline_fraction: f64,
    pub latent_dim: usize,
    pub vae_hidden: Vec<usize>,
    pub vae: TrainConfig,
    pub classifier_hidden: Vec<usize>,
    pub classifier: TrainConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 0,
            n: 2000,
            classes: 4,
            baseline_fraction: 0.05,
            latent_dim: 8,
            vae_hidden: vec![256],
            vae: TrainConfig::default(),
            classifier_hidden: vec![256, 128],
            classifier: TrainConfig {
                epochs: 30,
                ..TrainConfig::default()
            },
        }
    }
}

/// Stream indices for [`derive_seed`] so each stage has its own randomness.
mod streams {
    pub const DATA: u64 = 1;
    pub const VAE: u64 = 2;
    pub const CLASSIFIER: u64 = 3;
    pub const TEST: u64 = 4;
}

/// Trained models and the data they were trained on.
#[derive(Debug, Clone)]
pub struct Pipeline {
    pub config: PipelineConfig,
    pub data: Dataset,
    pub vae: Vae,
    pub vae_report: TrainReport,
    pub classifier: Classifier,
    pub classifier_report: TrainReport,
    /// `g(encode_mean(x))` for every clean training image, `[n, D]`.
    pub reconstructions: Tensor,
}

fn mse(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64
}

impl Pipeline {
    /// Generates shapes, trains the VAE on the baseline-augmented set, then
    /// trains the classifier on reconstructions of the clean images.
    pub fn run(config: &PipelineConfig) -> Result<Pipeline> {
        let data = pipeline_data(config)?;
        let (vae, vae_report) = train_vae_stage(&data, config)?;
        let reconstructions = vae.reconstruct_batch(&data.inputs)?;
        let (classifier, classifier_report) = train_classifier_stage(&reconstructions, &data, config)?;
        Ok(Pipeline {
            config: config.clone(),
            data,
            vae,
            vae_report,
            classifier,
            classifier_report,
            reconstructions,
        })
    }

    /// Mean per-pixel squared reconstruction error over the clean images.
    pub fn clean_mse(&self) -> f64 {
        mse(self.data.inputs.data(), self.reconstructions.data())
    }

    /// Reconstruction error of the constant image at `level`.
    pub fn constant_mse(&self, level: f64) -> Result<f64> {
        let img = constant_image(self.data.height, self.data.width, level);
        let rec = self.vae.reconstruct_batch(&img.reshape(&[1, img.numel()])?)?;
        Ok(mse(img.data(), rec.data()))
    }

    pub fn train_accuracy(&self) -> Result<f64> {
        accuracy(&self.classifier, &self.reconstructions, &self.data.labels)
    }

    /// Reconstructed held-out images that the classifier labels correctly, as
    /// `[H, W]` tensors with their labels.
    pub fn test_inputs(&self, count: usize) -> Result<Vec<(Tensor, usize)>> {
        test_inputs(
            &self.vae,
            &self.classifier,
            count,
            self.config.classes,
            derive_seed(self.config.seed, streams::TEST),
        )
    }
}

/// Up to `count` reconstructions of freshly generated shapes that `classifier`
/// labels correctly, drawn from a pool of `4 count + 8` images.
pub fn test_inputs(
    vae: &Vae,
    classifier: &Classifier,
    count: usize,
    classes: usize,
    seed: u64,
) -> Result<Vec<(Tensor, usize)>> {
    let pool = gen_shapes(count * 4 + 8, classes, seed)?;
    let recon = vae.reconstruct_batch(&pool.inputs)?;
    let (h, w) = (pool.height, pool.width);
    let mut out = Vec::with_capacity(count);
    for i in 0..pool.len() {
        let x = Tensor::new(vec![h, w], recon.row(i).to_vec())?;
        if classifier.predict(&x)? == pool.labels[i] {
            out.push((x, pool.labels[i]));
            if out.len() == count {
                break;
            }
        }
    }
    Ok(out)
}

/// Dataset for a pipeline seed.
pub fn pipeline_data(config: &PipelineConfig) -> Result<Dataset> {
    gen_shapes(config.n, config.classes, derive_seed(config.seed, streams::DATA))
}

/// VAE trained on `data` plus constant baseline images.
pub fn train_vae_stage(data: &Dataset, config: &PipelineConfig) -> Result<(Vae, TrainReport)> {
    let augmented = augment_baselines(data, config.baseline_fraction)?;
    let arch = VaeArch::new(data.dim(), config.latent_dim, config.vae_hidden.clone())?;
    let train = TrainConfig {
        seed: derive_seed(config.seed, streams::VAE),
        ..config.vae
    };
    train_vae(&augmented, &arch, &train)
}

/// Classifier trained on `inputs` (normally reconstructions) with the labels of `data`.
pub fn train_classifier_stage(inputs: &Tensor, data: &Dataset, config: &PipelineConfig) -> Result<(Classifier, TrainReport)> {
    let arch = ClassifierArch {
        input_dim: data.dim(),
        hidden: config.classifier_hidden.clone(),
        num_classes: data.num_classes,
    };
    let train = TrainConfig {
        seed: derive_seed(config.seed, streams::CLASSIFIER),
        ..config.classifier
    };
    train_classifier(inputs, &data.labels, &arch, &train)
}

/// Settings shared by every attribution method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", default)]
pub struct AttributionSettings {
    /// Riemann steps `N`.
    pub steps: usize,
    pub rule: Rule,
    /// Pixel value of the constant baseline image.
    pub baseline_level: f64,
    /// Segments of the latent geodesic; the path is resampled to `steps`.
    pub geodesic_steps: usize,
    /// Coarsest level of the multilevel geodesic solve.
    pub coarsest_steps: usize,
    pub solver: SolverOptions,
    pub blur_max_sigma: f64,
    pub smooth_sigma: f64,
    pub smooth_samples: usize,
    pub seed: u64,
}

impl Default for AttributionSettings {
    fn default() -> Self {
        AttributionSettings {
            steps: 32,
            rule: Rule::Left,
            baseline_level: -1.0,
            geodesic_steps: 16,
            coarsest_steps: 4,
            solver: SolverOptions {
                energy_tolerance: Some(1e-4),
                ..SolverOptions::default()
            },
            blur_max_sigma: 8.0,
            smooth_sigma: 0.2,
            smooth_samples: 16,
            seed: 0,
        }
    }
}

/// Computes attribution maps for one classifier (and optionally one VAE).
/// `F` is always a class logit of the classifier with native activations.
pub struct Explainer<'a> {
    pub classifier: &'a Classifier,
    pub vae: Option<&'a Vae>,
    pub settings: AttributionSettings,
    baseline: Tensor,
    baseline_name: String,
    baseline_code: Option<Tensor>,
}

impl<'a> Explainer<'a> {
    pub fn new(classifier: &'a Classifier, vae: Option<&'a Vae>, settings: AttributionSettings) -> Result<Self> {
        let side = (classifier.input_dim() as f64).sqrt() as usize;
        let (h, w) = if side * side == classifier.input_dim() {
            (side, side)
        } else {
            (1, classifier.input_dim())
        };
        let baseline = Tensor::full(&[h, w], settings.baseline_level);
        let baseline_code = vae.map(|v| v.encode_mean(&baseline)).transpose()?;
        Ok(Explainer {
            classifier,
            vae,
            baseline,
            baseline_name: format!("constant:{}", settings.baseline_level),
            baseline_code,
            settings,
        })
    }

    /// Replaces the constant baseline by an arbitrary image of the same size.
    /// `name` is recorded in the map metadata.
    pub fn with_baseline(mut self, baseline: Tensor, name: impl Into<String>) -> Result<Self> {
        let baseline = baseline.reshape(self.baseline.shape())?;
        self.baseline_code = self.vae.map(|v| v.encode_mean(&baseline)).transpose()?;
        self.baseline = baseline;
        self.baseline_name = name.into();
        Ok(self)
    }

    /// The baseline image, `[H, W]`.
    pub fn baseline(&self) -> &Tensor {
        &self.baseline
    }

    fn vae(&self) -> Result<&'a Vae> {
        self.vae
            .ok_or_else(|| Error::InvalidArgument("this attribution method needs a VAE".into()))
    }

    /// Latent geodesic from the encoded baseline to the encoded input.
    pub fn geodesic(&self, x: &Tensor) -> Result<(LatentCurve, GeodesicReport)> {
        let vae = self.vae()?;
        let z0 = self.baseline_code.as_ref().expect("set with the VAE");
        let zt = vae.encode_mean(x)?;
        let s = &self.settings;
        geodesic_solve_multilevel(z0, &zt, s.geodesic_steps, s.coarsest_steps, vae, &s.solver, None)
    }

    /// Geodesic to `x` warm-started from a nearby curve by moving its end
    /// point and relaxing again at full resolution.
    pub fn geodesic_from(&self, x: &Tensor, warm: &LatentCurve) -> Result<(LatentCurve, GeodesicReport)> {
        let vae = self.vae()?;
        let zt = vae.encode_mean(x)?;
        let shift = zt.sub(&warm.end())?;
        let t = warm.steps() as f64;
        let d = warm.dim();
        let mut data = warm.points().data().to_vec();
        for i in 1..=warm.steps() {
            for k in 0..d {
                data[i * d + k] += shift.data()[k] * i as f64 / t;
            }
        }
        let start = LatentCurve::from_points(Tensor::new(warm.points().shape().to_vec(), data)?)?;
        solve_from(start, vae, &self.settings.solver, None)
    }

    /// Map for the predicted class of `x`.
    pub fn explain(&self, method: Method, x: &Tensor) -> Result<AttributionMap> {
        let class = self.classifier.predict(x)?;
        let scores = self.explain_class(method, x, class, None)?;
        let path = match method {
            Method::Ig => Some(PathKind::Straight),
            Method::Mig => Some(PathKind::Geodesic),
            Method::Eig => Some(PathKind::LatentLinear),
            Method::BlurIg => Some(PathKind::Blur),
            Method::SmoothIg => Some(PathKind::NoisyStraight),
            _ => None,
        };
        let baseline = match method {
            Method::BlurIg => format!("blur:{}", self.settings.blur_max_sigma),
            m if m.is_path_method() => self.baseline_name.clone(),
            _ => "none".to_string(),
        };
        Ok(AttributionMap {
            scores,
            method,
            class,
            baseline,
            steps: method.is_path_method().then_some(self.settings.steps),
            path,
        })
    }

    /// Raw scores for `class`, in the shape of `x`. MIG reuses `warm` as the
    /// initial curve when given.
    pub fn explain_class(&self, method: Method, x: &Tensor, class: usize, warm: Option<&LatentCurve>) -> Result<Tensor> {
        let s = &self.settings;
        let f = self.classifier.class_logit(class, ActivationMode::Native)?;
        let baseline = self.baseline.reshape(x.shape())?;
        match method {
            Method::Ig => integrated_gradients(&f, x, &baseline, s.steps, s.rule),
            Method::Mig => {
                let (curve, _) = match warm {
                    Some(w) => self.geodesic_from(x, w)?,
                    None => self.geodesic(x)?,
                };
                mig(&f, self.vae()?, &curve, s.steps, s.rule)?.reshape(x.shape())
            }
            Method::Eig => {
                let vae = self.vae()?;
                let z0 = self.baseline_code.as_ref().expect("set with the VAE");
                eig(&f, vae, z0, &vae.encode_mean(x)?, s.steps, s.rule)?.reshape(x.shape())
            }
            Method::BlurIg => blur_ig(&f, &x.reshape(self.baseline.shape())?, s.blur_max_sigma, s.steps, s.rule)?
                .reshape(x.shape()),
            Method::SmoothIg => {
                let cfg = SmoothConfig {
                    noise_sigma: s.smooth_sigma,
                    samples: s.smooth_samples,
                    seed: s.seed,
                };
                smooth_ig(&f, x, &baseline, s.steps, s.rule, &cfg)
            }
            Method::Saliency => saliency(&f, x),
            Method::Ixg => input_x_gradient(&f, x),
            Method::Gbp => guided_backprop(self.classifier, class, x),
        }
    }
}

/// One line of a metric table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub struct MetricRow {
    pub input_id: String,
    pub method: Method,
    pub metric: String,
    pub value: f64,
    pub stderr: f64,
    pub config_hash: String,
}

pub const METRIC_HEADER: [&str; 6] = ["input_id", "method", "metric", "value", "stderr", "config_hash"];
pub const ROBUSTNESS_HEADER: [&str; 4] = ["input_id", "method", "ssi", "class_preserved"];

impl MetricRow {
    pub fn to_record(&self) -> Vec<String> {
        vec![
            self.input_id.clone(),
            self.method.to_string(),
            self.metric.clone(),
            format!("{}", self.value),
            format!("{}", self.stderr),
            self.config_hash.clone(),
        ]
    }
}

impl RobustnessRow {
    pub fn to_record(&self) -> Vec<String> {
        vec![
            self.input_id.clone(),
            self.method.to_string(),
            format!("{}", self.ssi),
            self.class_preserved.to_string(),
        ]
    }
}

/// Infidelity of each method's map on each input, against the baseline image.
pub fn infidelity_table(
    explainer: &Explainer<'_>,
    inputs: &[(String, Tensor)],
    methods: &[Method],
    config: &MetricConfig,
) -> Result<Vec<MetricRow>> {
    let hash = config.hash();
    let mut rows = Vec::new();
    for (id, x) in inputs {
        let class = explainer.classifier.predict(x)?;
        let f = explainer.classifier.class_logit(class, ActivationMode::Native)?;
        for &method in methods {
            let phi = explainer.explain_class(method, x, class, None)?;
            let est = infidelity(&f, &phi, x, explainer.baseline(), config)?;
            rows.push(metric_row(id, method, "infd", est, &hash));
        }
    }
    Ok(rows)
}

/// Maximum sensitivity of each method on each input. The explained class is
/// fixed to the prediction at the clean input; MIG warm-starts every
/// perturbed geodesic from the clean one.
pub fn sensitivity_table(
    explainer: &Explainer<'_>,
    inputs: &[(String, Tensor)],
    methods: &[Method],
    config: &MetricConfig,
) -> Result<Vec<MetricRow>> {
    let hash = config.hash();
    let mut rows = Vec::new();
    for (id, x) in inputs {
        let class = explainer.classifier.predict(x)?;
        for &method in methods {
            let warm = if method == Method::Mig {
                Some(explainer.geodesic(x)?.0)
            } else {
                None
            };
            let est = max_sensitivity(|v| explainer.explain_class(method, v, class, warm.as_ref()), x, config)?;
            rows.push(metric_row(id, method, "sensmax", est, &hash));
        }
    }
    Ok(rows)
}

fn metric_row(id: &str, method: Method, metric: &str, est: Estimate, hash: &str) -> MetricRow {
    MetricRow {
        input_id: id.to_string(),
        method,
        metric: metric.to_string(),
        value: est.value,
        stderr: est.stderr,
        config_hash: hash.to_string(),
    }
}

/// IG-targeted attacks on each input (target: the next input of a different
/// class), followed by SSIM of every method's clean and attacked maps.
pub fn robustness_table(
    explainer: &Explainer<'_>,
    inputs: &[(String, Tensor)],
    methods: &[Method],
    attack: &AttackConfig,
    gammas: &[f64],
    metrics: &MetricConfig,
) -> Result<(Vec<AttackResult>, Vec<RobustnessRow>)> {
    let clf = explainer.classifier;
    let classes: Vec<usize> = inputs.iter().map(|(_, x)| clf.predict(x)).collect::<Result<_>>()?;
    let mut results = Vec::with_capacity(inputs.len());
    let mut cases = Vec::with_capacity(inputs.len());
    for (i, (id, x)) in inputs.iter().enumerate() {
        let j = (1..inputs.len())
            .map(|o| (i + o) % inputs.len())
            .find(|&j| classes[j] != classes[i])
            .ok_or_else(|| Error::InvalidArgument("attack targets need two classes among the inputs".into()))?;
        let baseline = explainer.baseline().reshape(x.shape())?;
        let cfg = AttackConfig {
            seed: derive_seed(attack.seed, i as u64),
            ..attack.clone()
        };
        let result = targeted_attack_sweep(clf, x, &inputs[j].1, &baseline, &cfg, gammas)?;
        cases.push(AttackedInput {
            id: id.clone(),
            x: x.clone(),
            x_adv: result.x_adv.clone(),
            class_preserved: result.class_preserved,
        });
        results.push(result);
    }
    let rows = evaluate_robustness(
        methods,
        &cases,
        |method, img| {
            let class = clf.predict(img)?;
            explainer.explain_class(method, img, class, None)
        },
        metrics,
    )?;
    Ok((results, rows))
}

/// Mean and standard error of one metric for one method over all inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Summary {
    pub method: Method,
    pub metric: String,
    pub count: usize,
    pub mean: f64,
    pub stderr: f64,
}

/// Groups `(method, metric, value)` triples and summarizes each group, in
/// order of first appearance.
pub fn summarize(values: &[(Method, String, f64)]) -> Vec<Summary> {
    let mut keys: Vec<(Method, String)> = Vec::new();
    for (m, metric, _) in values {
        if !keys.iter().any(|(km, kk)| km == m && kk == metric) {
            keys.push((*m, metric.clone()));
        }
    }
    keys.into_iter()
        .map(|(method, metric)| {
            let group: Vec<f64> = values
                .iter()
                .filter(|(m, k, _)| *m == method && *k == metric)
                .map(|(_, _, v)| *v)
                .collect();
            let est = Estimate::from_samples(&group);
            Summary {
                method,
                metric,
                count: group.len(),
                mean: est.value,
                stderr: est.stderr,
            }
        })
        .collect()
}

/// Whether the means of `order` (looked up for `metric`) strictly increase.
pub fn strictly_increasing(summaries: &[Summary], metric: &str, order: &[Method]) -> Option<bool> {
    let means: Option<Vec<f64>> = order
        .iter()
        .map(|m| summaries.iter().find(|s| s.method == *m && s.metric == metric).map(|s| s.mean))
        .collect();
    means.map(|v| v.windows(2).all(|w| w[0] < w[1]))
}
