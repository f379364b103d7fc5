//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! Always exits zero so the workspace test run completes; set
//! `MANIGRAD_STRICT_ACCEPTANCE=1` to exit non-zero on any failure.

use std::path::Path;
use std::process::Command;
use std::time::Instant;

use manigrad::attacks::{AttackConfig, GAMMA_GRID};
use manigrad::attribution::{blur_ig, blurred, eig, integrated_gradients, mig, smooth_ig, Method, Rule, SmoothConfig};
use manigrad::data::{IdentityDecoder, LinearDecoder, SphereDecoder};
use manigrad::experiment::{
    infidelity_table, robustness_table, sensitivity_table, summarize, AttributionSettings, Explainer, Pipeline,
    PipelineConfig, Summary,
};
use manigrad::geodesic::{
    curve_length, discrete_energy, energy_and_gradient, geodesic_ode_residual, geodesic_solve,
    geodesic_solve_multilevel, solve_from, GradientMode, LatentCurve, SolverOptions, StopReason, CHRISTOFFEL_STEP,
    VALIDATION_STEPS,
};
use manigrad::gradcheck::{check_value_grad, network_suite, primitive_suite, FD_STEP, TOLERANCE};
use manigrad::metrics::{infidelity, max_sensitivity, ssim, MetricConfig};
use manigrad::models::{score_one, ActivationMode, Generator, LinearScorer, Scorer};
use manigrad::rng::Rng;
use manigrad::{Result, Tensor};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

struct Ledger {
    failures: usize,
}

impl Ledger {
    fn run(&mut self, id: usize, title: &str, f: impl FnOnce() -> Result<Outcome>) {
        let start = Instant::now();
        let result = f().unwrap_or_else(|e| outcome(false, format!("error: {e}")));
        if !result.pass {
            self.failures += 1;
        }
        println!(
            "{} {id:>2} {title}: {} [{:.1}s]",
            if result.pass { "PASS" } else { "FAIL" },
            result.detail,
            start.elapsed().as_secs_f64()
        );
    }
}

fn max_abs_diff(a: &Tensor, b: &Tensor) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn random_matrix(rows: usize, cols: usize, rng: &mut Rng) -> Tensor {
    Tensor::new(vec![rows, cols], rng.normals(rows * cols, 1.0)).unwrap()
}

fn sphere_pair(rng: &mut Rng) -> (Tensor, Tensor) {
    let mut draw = || Tensor::vector(vec![rng.uniform_in(0.5, 2.6), rng.uniform_in(-1.2, 1.2)]);
    (draw(), draw())
}

fn gradients() -> Result<Outcome> {
    let mut results = primitive_suite(100, 2024)?;
    results.extend(network_suite(100, 2024)?);
    let worst = results.iter().max_by(|a, b| a.max_error.total_cmp(&b.max_error)).expect("non-empty");
    let failed: Vec<&str> = results.iter().filter(|r| !r.passed()).map(|r| r.name.as_str()).collect();
    Ok(outcome(
        failed.is_empty(),
        format!(
            "{} checks x 100 trials, worst {:.1e} ({}) <= {TOLERANCE:.0e}{}",
            results.len(),
            worst.max_error,
            worst.name,
            if failed.is_empty() { String::new() } else { format!("; failed {failed:?}") }
        ),
    ))
}

fn flat_oracle() -> Result<Outcome> {
    let mut rng = Rng::new(31);
    let linear = LinearDecoder::new(random_matrix(6, 3, &mut rng))?;
    let identity = IdentityDecoder { dim: 3 };
    let gens: [&dyn Generator; 2] = [&identity, &linear];
    let mut worst: f64 = 0.0;
    let mut monotone = true;
    for gen in gens {
        for _ in 0..10 {
            let z0 = Tensor::vector(rng.normals(3, 1.0));
            let zt = Tensor::vector(rng.normals(3, 1.0));
            let (curve, _) = geodesic_solve(&z0, &zt, 16, gen, &SolverOptions::default(), None)?;
            worst = worst.max(max_abs_diff(curve.points(), LatentCurve::linear(&z0, &zt, 16)?.points()));

            let line = LatentCurve::linear(&z0, &zt, 16)?;
            let mut bent = line.points().clone();
            for v in &mut bent.data_mut()[3..3 * 16] {
                *v += 0.2 * rng.normal();
            }
            let (_, report) = solve_from(LatentCurve::from_points(bent)?, gen, &SolverOptions::default(), None)?;
            monotone &= report.energy_history.windows(2).all(|w| w[1] <= w[0]);
        }
    }
    Ok(outcome(
        worst <= 1e-8 && monotone,
        format!("max deviation from linear interpolation {worst:.1e} <= 1e-8, energy monotone: {monotone}"),
    ))
}

struct SphereRun {
    length_error: f64,
    shorter: bool,
    residual_ratio: f64,
    speed_variation: f64,
}

fn sphere_runs() -> Result<Vec<SphereRun>> {
    let mut rng = Rng::new(33);
    let mut pairs: Vec<(Tensor, Tensor)> = (0..9).map(|_| sphere_pair(&mut rng)).collect();
    let third = std::f64::consts::FRAC_PI_3;
    pairs.push((Tensor::vector(vec![third, 0.0]), Tensor::vector(vec![third, std::f64::consts::FRAC_PI_2])));
    pairs
        .iter()
        .map(|(z0, zt)| {
            let (curve, report) =
                geodesic_solve_multilevel(z0, zt, VALIDATION_STEPS, 4, &SphereDecoder, &SolverOptions::default(), None)?;
            let exact = SphereDecoder::great_circle([z0.data()[0], z0.data()[1]], [zt.data()[0], zt.data()[1]]);
            let line = LatentCurve::linear(z0, zt, VALIDATION_STEPS)?;
            let length = curve_length(&curve, &SphereDecoder)?;
            let residual = geodesic_ode_residual(&curve, &SphereDecoder, CHRISTOFFEL_STEP)?;
            let linear_residual = geodesic_ode_residual(&line, &SphereDecoder, CHRISTOFFEL_STEP)?;
            Ok(SphereRun {
                length_error: (length - exact).abs() / exact,
                shorter: length < curve_length(&line, &SphereDecoder)?,
                residual_ratio: linear_residual / residual,
                speed_variation: report.speed_variation,
            })
        })
        .collect()
}

fn sphere_oracle(runs: &[SphereRun]) -> Result<Outcome> {
    let worst_len = runs.iter().map(|r| r.length_error).fold(0.0, f64::max);
    let shorter = runs.iter().all(|r| r.shorter);
    let min_ratio = runs.iter().map(|r| r.residual_ratio).fold(f64::INFINITY, f64::min);
    let reference = SphereDecoder::great_circle([std::f64::consts::FRAC_PI_3, 0.0], [std::f64::consts::FRAC_PI_3, std::f64::consts::FRAC_PI_2]);
    let closed_form_ok = (reference - 0.25f64.acos()).abs() <= 1e-12;
    Ok(outcome(
        worst_len <= 0.02 && shorter && min_ratio >= 10.0 && closed_form_ok,
        format!(
            "{} pairs: worst length error {:.2}%, shorter than linear: {shorter}, min residual reduction {min_ratio:.0}x, arccos(0.25) pair = {reference:.4}",
            runs.len(),
            100.0 * worst_len
        ),
    ))
}

fn constant_speed(runs: &[SphereRun], pipeline_cv: &[f64]) -> Result<Outcome> {
    let worst = runs.iter().map(|r| r.speed_variation).fold(0.0, f64::max);
    let vae_worst = pipeline_cv.iter().copied().fold(0.0, f64::max);
    Ok(outcome(
        worst <= 0.05 && vae_worst <= 0.05,
        format!(
            "sphere worst speed CV {worst:.4}, VAE geodesics worst {vae_worst:.4} over {} curves, <= 0.05",
            pipeline_cv.len()
        ),
    ))
}

fn gradient_equivalence() -> Result<Outcome> {
    let mut rng = Rng::new(35);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let line = LatentCurve::linear(
            &Tensor::vector(vec![rng.uniform_in(0.6, 2.5), rng.uniform_in(-1.0, 1.0)]),
            &Tensor::vector(vec![rng.uniform_in(0.6, 2.5), rng.uniform_in(-1.0, 1.0)]),
            10,
        )?;
        let mut points = line.points().clone();
        for v in &mut points.data_mut()[2..20] {
            *v += 0.05 * rng.normal();
        }
        let curve = LatentCurve::from_points(points)?;
        let (_, grad) = energy_and_gradient(&curve, &SphereDecoder, GradientMode::Exact, None)?;
        let interior = curve.points().slice_rows(1, 10)?;
        let err = check_value_grad(&interior, &grad, FD_STEP, |inner| {
            let mut rows = curve.points().clone();
            rows.data_mut()[2..20].copy_from_slice(inner.data());
            discrete_energy(&LatentCurve::from_points(rows)?, &SphereDecoder)
        })?;
        worst = worst.max(err);
    }
    let mut stop_ok = true;
    for _ in 0..10 {
        let (z0, zt) = sphere_pair(&mut rng);
        let (_, report) = geodesic_solve(&z0, &zt, 32, &SphereDecoder, &SolverOptions::default(), None)?;
        stop_ok &= report.iterations <= 300;
        stop_ok &= match report.stop_reason {
            StopReason::RelativeChange => {
                let h = &report.gradient_history;
                let (prev, last) = (h[h.len() - 2], h[h.len() - 1]);
                (last - prev).abs() <= 1e-3 * last || last == 0.0
            }
            StopReason::MaxIterations => report.iterations == 300,
            _ => false,
        };
    }
    Ok(outcome(
        worst <= 1e-6 && stop_ok,
        format!("energy gradient vs FD worst rel err {worst:.1e} <= 1e-6, stop rule honored: {stop_ok}"),
    ))
}

fn relative_residual(f: &dyn Scorer, attr: &Tensor, start: &Tensor, end: &Tensor) -> Result<f64> {
    let gap = score_one(f, end)? - score_one(f, start)?;
    Ok((attr.sum() - gap).abs() / gap.abs())
}

/// Completeness residuals `[method][input][level]` for IG, EIG, MIG, BlurIG.
fn completeness_grid(
    pipeline: &Pipeline,
    inputs: &[(Tensor, usize)],
    mode: ActivationMode,
    levels: &[usize],
) -> Result<(Vec<Vec<Vec<f64>>>, Vec<f64>)> {
    let explainer = Explainer::new(&pipeline.classifier, Some(&pipeline.vae), AttributionSettings::default())?;
    let vae = &pipeline.vae;
    let baseline = explainer.baseline().clone();
    let mut grid = vec![vec![Vec::new(); inputs.len()]; 4];
    let mut speed = Vec::new();
    for (i, (x, _)) in inputs.iter().enumerate() {
        let class = pipeline.classifier.predict(x)?;
        let f = pipeline.classifier.class_logit(class, mode)?;
        let (curve, report) = explainer.geodesic(x)?;
        if report.converged {
            speed.push(report.speed_variation);
        }
        let (g0, gt) = (vae.decode(&curve.start())?, vae.decode(&curve.end())?);
        let blurry = blurred(x, explainer.settings.blur_max_sigma)?;
        for &n in levels {
            let ig = integrated_gradients(&f, x, &baseline, n, Rule::Left)?;
            let e = eig(&f, vae, &curve.start(), &curve.end(), n, Rule::Left)?;
            let m = mig(&f, vae, &curve, n, Rule::Left)?;
            let b = blur_ig(&f, x, explainer.settings.blur_max_sigma, n, Rule::Left)?;
            grid[0][i].push(relative_residual(&f, &ig, &baseline, x)?);
            grid[1][i].push(relative_residual(&f, &e, &g0, &gt)?);
            grid[2][i].push(relative_residual(&f, &m, &g0, &gt)?);
            grid[3][i].push(relative_residual(&f, &b, &blurry, x)?);
        }
    }
    Ok((grid, speed))
}

fn completeness_outcome(pipeline: &Pipeline, inputs: &[(Tensor, usize)], speed: &mut Vec<f64>) -> Result<Outcome> {
    let levels = [64, 128, 256];
    let names = ["ig", "eig", "mig", "blurig"];
    // Rate of convergence is only meaningful for smooth activations, so the gate uses the softplus swap.
    let smooth = ActivationMode::SoftplusSwap { beta: 10.0 };
    let (grid, cv) = completeness_grid(pipeline, inputs, smooth, &levels)?;
    speed.extend(cv);
    let (native, _) = completeness_grid(pipeline, inputs, ActivationMode::Native, &[256])?;
    let mut pass = true;
    let mut parts = Vec::new();
    for (k, name) in names.iter().enumerate() {
        let worst = grid[k].iter().map(|r| r[2]).fold(0.0, f64::max);
        let native_worst = native[k].iter().map(|r| r[0]).fold(0.0, f64::max);
        let mean = |j: usize| grid[k].iter().map(|r| r[j]).sum::<f64>() / grid[k].len() as f64;
        let ratios = [mean(0) / mean(1), mean(1) / mean(2)];
        let halves = ratios.iter().all(|r| (r - 2.0).abs() <= 0.4);
        pass &= worst <= 0.02 && halves;
        parts.push(format!(
            "{name} {:.2}% ratios {:.2}/{:.2} (relu net, not gated: {:.2}%)",
            100.0 * worst,
            ratios[0],
            ratios[1],
            100.0 * native_worst
        ));
    }
    Ok(outcome(pass, format!("N=256 worst residual over {} inputs: {}", inputs.len(), parts.join("; "))))
}

fn linear_closed_forms() -> Result<Outcome> {
    let mut rng = Rng::new(37);
    let mut ig_err: f64 = 0.0;
    let mut smooth_equal = true;
    let mut manifold_err: f64 = 0.0;
    for trial in 0..10 {
        let w = Tensor::vector(rng.normals(12, 1.0));
        let f = LinearScorer::new(w.clone(), rng.normal());
        let x = Tensor::vector(rng.normals(12, 0.5));
        let b = Tensor::vector(rng.normals(12, 0.5));
        let expected = x.sub(&b)?.mul(&w)?;
        let ig = integrated_gradients(&f, &x, &b, 32, Rule::Left)?;
        ig_err = ig_err.max(max_abs_diff(&ig, &expected));
        let zero = SmoothConfig {
            noise_sigma: 0.0,
            samples: 4,
            seed: trial,
        };
        smooth_equal &= smooth_ig(&f, &x, &b, 32, Rule::Left, &zero)? == ig;
        let gen = IdentityDecoder { dim: 12 };
        let (curve, _) = geodesic_solve(&b, &x, 16, &gen, &SolverOptions::default(), None)?;
        manifold_err = manifold_err.max(max_abs_diff(&mig(&f, &gen, &curve, 32, Rule::Left)?, &ig));
        manifold_err = manifold_err.max(max_abs_diff(&eig(&f, &gen, &b, &x, 32, Rule::Left)?, &ig));
    }
    Ok(outcome(
        ig_err <= 1e-12 && smooth_equal && manifold_err <= 1e-8,
        format!("IG vs (x-x')w {ig_err:.1e}, SmoothIG(sigma=0) == IG: {smooth_equal}, EIG/MIG vs IG {manifold_err:.1e} <= 1e-8"),
    ))
}

fn training(pipeline: &Pipeline, seconds: f64) -> Result<Outcome> {
    let mse = pipeline.clean_mse();
    let black = pipeline.constant_mse(-1.0)?;
    let acc = pipeline.train_accuracy()?;
    Ok(outcome(
        mse <= 0.02 && acc >= 0.9 && black < mse,
        format!(
            "VAE MSE {mse:.4} <= 0.02 in {} epochs, classifier accuracy {:.1}% >= 90%, black MSE {black:.4} < clean; {seconds:.0}s",
            pipeline.config.vae.epochs,
            100.0 * acc
        ),
    ))
}

fn mean_of(summaries: &[Summary], method: Method, metric: &str) -> (f64, f64) {
    summaries
        .iter()
        .find(|s| s.method == method && s.metric == metric)
        .map(|s| (s.mean, s.stderr))
        .unwrap_or((f64::NAN, f64::NAN))
}

fn ids(inputs: &[(Tensor, usize)]) -> Vec<(String, Tensor)> {
    inputs.iter().enumerate().map(|(i, (x, _))| (format!("t{i}"), x.clone())).collect()
}

fn table_one(pipeline: &Pipeline, inputs: &[(Tensor, usize)]) -> Result<Outcome> {
    let explainer = Explainer::new(&pipeline.classifier, Some(&pipeline.vae), AttributionSettings::default())?;
    let methods = [Method::Mig, Method::SmoothIg, Method::Ig];
    let config = MetricConfig::default();
    let inputs = ids(inputs);
    let mut rows = infidelity_table(&explainer, &inputs, &methods, &config)?;
    rows.extend(sensitivity_table(&explainer, &inputs, &methods, &config)?);
    let values: Vec<_> = rows.iter().map(|r| (r.method, r.metric.clone(), r.value)).collect();
    let s = summarize(&values);
    let infd = |m| mean_of(&s, m, "infd");
    let sens = |m| mean_of(&s, m, "sensmax");
    let pass = infd(Method::Mig).0 < infd(Method::Ig).0
        && sens(Method::Mig).0 < sens(Method::SmoothIg).0
        && sens(Method::SmoothIg).0 < sens(Method::Ig).0;
    let fmt = |(m, e): (f64, f64)| format!("{m:.3}±{e:.3}");
    Ok(outcome(
        pass,
        format!(
            "{} inputs; INFD mig {} smoothig {} ig {}; SENS_max mig {} smoothig {} ig {}",
            inputs.len(),
            fmt(infd(Method::Mig)),
            fmt(infd(Method::SmoothIg)),
            fmt(infd(Method::Ig)),
            fmt(sens(Method::Mig)),
            fmt(sens(Method::SmoothIg)),
            fmt(sens(Method::Ig)),
        ),
    ))
}

fn table_two(pipeline: &Pipeline, inputs: &[(Tensor, usize)]) -> Result<Outcome> {
    let explainer = Explainer::new(&pipeline.classifier, Some(&pipeline.vae), AttributionSettings::default())?;
    let methods = [Method::Mig, Method::SmoothIg, Method::Ig];
    let inputs = ids(inputs);
    let (attacks, rows) = robustness_table(
        &explainer,
        &inputs,
        &methods,
        &AttackConfig::default(),
        &GAMMA_GRID,
        &MetricConfig::default(),
    )?;
    let success = attacks.iter().filter(|r| r.halved()).count();
    let kept = attacks.iter().filter(|r| r.class_preserved).count();
    let reduction: Vec<String> = attacks
        .iter()
        .map(|r| format!("{:.2}", r.attribution_distance / r.initial_distance))
        .collect();
    let values: Vec<_> = rows.iter().map(|r| (r.method, "ssi".to_string(), r.ssi)).collect();
    let s = summarize(&values);
    let ssi = |m| mean_of(&s, m, "ssi");
    let ordered = ssi(Method::Mig).0 > ssi(Method::SmoothIg).0 && ssi(Method::SmoothIg).0 > ssi(Method::Ig).0;
    let rate = success as f64 / attacks.len() as f64;
    Ok(outcome(
        ordered && rate >= 0.7,
        format!(
            "{} inputs; halved {success}/{} (class kept {kept}), distance ratios [{}]; SSI mig {:.3}±{:.3} smoothig {:.3}±{:.3} ig {:.3}±{:.3}",
            attacks.len(),
            attacks.len(),
            reduction.join(" "),
            ssi(Method::Mig).0,
            ssi(Method::Mig).1,
            ssi(Method::SmoothIg).0,
            ssi(Method::SmoothIg).1,
            ssi(Method::Ig).0,
            ssi(Method::Ig).1,
        ),
    ))
}

fn metric_self_tests() -> Result<Outcome> {
    let mut rng = Rng::new(39);
    let config = MetricConfig::default();
    let mut worst_infd: f64 = 0.0;
    let mut worst_ssim: f64 = 0.0;
    let mut worst_sens: f64 = 0.0;
    for _ in 0..10 {
        let w = Tensor::vector(rng.normals(64, 1.0));
        let f = LinearScorer::new(w.clone(), 0.3);
        let x = Tensor::vector(rng.normals(64, 0.5));
        let x0 = Tensor::full(&[64], -1.0);
        worst_infd = worst_infd.max(infidelity(&f, &w, &x, &x0, &config)?.value);
        let a = Tensor::new(vec![16, 16], (0..256).map(|_| rng.uniform()).collect())?;
        worst_ssim = worst_ssim.max((ssim(&a, &a, &config)? - 1.0).abs());
        let zero = MetricConfig { radius: 0.0, ..config.clone() };
        let explain = |v: &Tensor| integrated_gradients(&f, v, &x0, 8, Rule::Left);
        worst_sens = worst_sens.max(max_sensitivity(explain, &x, &zero)?.value);
    }
    Ok(outcome(
        worst_infd <= 1e-20 && worst_ssim == 0.0 && worst_sens == 0.0,
        format!("INFD(exact linear) {worst_infd:.1e}, |SSIM(a,a)-1| {worst_ssim:.1e}, SENS_max(r=0) {worst_sens:.1e}"),
    ))
}

fn cli(dir: &Path, args: &[&str]) -> Result<()> {
    let out = Command::new(env!("CARGO_BIN_EXE_manigrad"))
        .current_dir(dir)
        .args(args)
        .output()
        .map_err(|e| manigrad::Error::Io { path: dir.to_path_buf(), source: e })?;
    if !out.status.success() {
        return Err(manigrad::Error::InvalidArgument(format!(
            "{args:?}: {}",
            String::from_utf8_lossy(&out.stderr).trim()
        )));
    }
    Ok(())
}

/// The whole command-line pipeline at full scale.
fn cli_pipeline(dir: &Path) -> Result<()> {
    cli(dir, &["gen-data", "--n", "2000", "--seed", "7", "--out", "data"])?;
    cli(dir, &["train-vae", "--data", "data", "--latent", "8", "--epochs", "30", "--seed", "7", "--out", "vae.mgm"])?;
    cli(dir, &["train-classifier", "--vae", "vae.mgm", "--data", "data", "--epochs", "30", "--seed", "7", "--out", "clf.mgm"])?;
    cli(dir, &["sample", "--data", "data", "--index", "0", "--vae", "vae.mgm", "--out", "x0.ntf"])?;
    cli(dir, &["sample", "--data", "data", "--index", "1", "--vae", "vae.mgm", "--out", "x1.ntf"])?;
    cli(dir, &["geodesic", "--vae", "vae.mgm", "--from", "x0.ntf", "--to", "x1.ntf", "--out", "curve.ntf", "--report", "geo.json"])?;
    for method in ["ig", "mig", "smoothig"] {
        let out = format!("{method}.ntf");
        let heat = format!("{method}.pgm");
        cli(
            dir,
            &[
                "attribute", "--method", method, "--clf", "clf.mgm", "--vae", "vae.mgm", "--input", "x0.ntf", "--out", &out,
                "--heatmap", &heat, "--results", "completeness.csv",
            ],
        )?;
    }
    cli(
        dir,
        &[
            "attack", "--kind", "targeted", "--clf", "clf.mgm", "--input", "x0.ntf", "--target", "x1.ntf", "--steps", "50",
            "--out", "adv.ntf", "--report", "attack.json",
        ],
    )?;
    std::fs::write(
        dir.join("eval.json"),
        r#"{"classifier": "clf.mgm", "vae": "vae.mgm", "inputs": {"generate": {"count": 2, "classes": 4, "seed": 7}},
            "metrics": {"sensitivitySamples": 4}}"#,
    )
    .map_err(|e| manigrad::Error::Io { path: dir.join("eval.json"), source: e })?;
    cli(dir, &["evaluate", "--metric", "infd", "--config", "eval.json", "--out", "infd.csv"])?;
    cli(dir, &["report", "--in", "infd.csv", "--out", "summary.json"])?;
    Ok(())
}

fn files(dir: &Path) -> Vec<std::path::PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).expect("readable") {
            let path = entry.expect("entry").path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.push(path.strip_prefix(dir).expect("inside").to_path_buf());
            }
        }
    }
    out.sort();
    out
}

fn reproducibility() -> Result<Outcome> {
    let dirs = [tempfile::tempdir().expect("tempdir"), tempfile::tempdir().expect("tempdir")];
    for dir in &dirs {
        cli_pipeline(dir.path())?;
    }
    let (a, b) = (files(dirs[0].path()), files(dirs[1].path()));
    let mut differing = Vec::new();
    for name in &a {
        let x = std::fs::read(dirs[0].path().join(name)).ok();
        let y = std::fs::read(dirs[1].path().join(name)).ok();
        if x.is_none() || x != y {
            differing.push(name.display().to_string());
        }
    }
    Ok(outcome(
        a == b && differing.is_empty() && a.len() >= 20,
        format!("{} artifacts from two full CLI pipeline runs, differing: {differing:?}", a.len()),
    ))
}

fn main() {
    let mut ledger = Ledger { failures: 0 };
    println!("acceptance criteria");
    ledger.run(1, "gradient correctness", gradients);
    ledger.run(2, "flat-metric geodesic oracle", flat_oracle);
    let sphere = sphere_runs();
    let sphere = match sphere {
        Ok(runs) => runs,
        Err(e) => {
            println!("FAIL  3 sphere oracle: error {e}");
            Vec::new()
        }
    };
    ledger.run(3, "sphere geodesic oracle", || sphere_oracle(&sphere));

    let start = Instant::now();
    let trained = Pipeline::run(&PipelineConfig::default());
    let train_seconds = start.elapsed().as_secs_f64();
    let mut vae_speed = Vec::new();
    let mut completeness = None;
    if let Ok(p) = &trained {
        completeness = Some(p.test_inputs(4).and_then(|inputs| completeness_outcome(p, &inputs, &mut vae_speed)));
    }
    ledger.run(4, "constant speed", || constant_speed(&sphere, &vae_speed));
    ledger.run(5, "energy gradient and stop rule", gradient_equivalence);
    ledger.run(6, "completeness", || completeness.unwrap_or_else(|| Err(pipeline_error(&trained))));
    ledger.run(7, "linear closed forms", linear_closed_forms);
    ledger.run(8, "pipeline training", || training(trained.as_ref().map_err(|_| pipeline_error(&trained))?, train_seconds));
    ledger.run(9, "Table-1 direction", || {
        let p = trained.as_ref().map_err(|_| pipeline_error(&trained))?;
        table_one(p, &p.test_inputs(20)?)
    });
    ledger.run(10, "Table-2 direction", || {
        let p = trained.as_ref().map_err(|_| pipeline_error(&trained))?;
        table_two(p, &p.test_inputs(10)?)
    });
    ledger.run(11, "metric self-tests", metric_self_tests);
    ledger.run(12, "reproducibility", reproducibility);
    println!("{} of 12 criteria failed", ledger.failures);
    if ledger.failures > 0 && std::env::var_os("MANIGRAD_STRICT_ACCEPTANCE").is_some() {
        std::process::exit(1);
    }
}

fn pipeline_error(trained: &Result<Pipeline>) -> manigrad::Error {
    match trained {
        Ok(_) => manigrad::Error::InvalidArgument("unused".into()),
        Err(e) => manigrad::Error::InvalidArgument(format!("pipeline training failed: {e}")),
    }
}
