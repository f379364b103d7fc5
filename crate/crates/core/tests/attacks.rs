use manigrad::attacks::{
    evaluate_robustness, targeted_attack, targeted_attack_sweep, targeted_loss_and_grad, top_k_indices, topk_attack,
    AttackConfig, AttackedInput, DATA_RANGE,
};
use manigrad::attribution::{integrated_gradients, Method, Rule};
use manigrad::gradcheck::{check_value_grad, FD_STEP};
use manigrad::metrics::MetricConfig;
use manigrad::models::{Activation, ActivationMode, Classifier, Dense, LinearScorer, Mlp, MlpScorer};
use manigrad::rng::Rng;
use manigrad::Tensor;

#[test]
fn two_pixel_linear_loss_has_the_closed_form_gradient() {
    let w = Tensor::vector(vec![0.8, -1.3]);
    let f = LinearScorer::new(w.clone(), 0.25);
    let (x, b, t) = (
        Tensor::vector(vec![0.3, -0.6]),
        Tensor::vector(vec![-1.0, -1.0]),
        Tensor::vector(vec![0.5, 0.1]),
    );
    let (clean, gamma) = (0.4, 3.0);
    let (loss, grad) = targeted_loss_and_grad(&f, &x, &b, &t, clean, gamma, 8, Rule::Left).unwrap();
    let ig: Vec<f64> = (0..2).map(|i| (x.data()[i] - b.data()[i]) * w.data()[i]).collect();
    let drift = w.data()[0] * x.data()[0] + w.data()[1] * x.data()[1] + 0.25 - clean;
    let expected_loss = (0..2).map(|i| (ig[i] - t.data()[i]).powi(2)).sum::<f64>() + gamma * drift * drift;
    assert!((loss - expected_loss).abs() <= 1e-14);
    for i in 0..2 {
        let g = 2.0 * w.data()[i] * (ig[i] - t.data()[i]) + 2.0 * gamma * drift * w.data()[i];
        assert!((grad.data()[i] - g).abs() <= 1e-13);
    }
}

#[test]
fn two_pixel_nonlinear_loss_matches_finite_differences() {
    let net = Mlp::new(vec![
        Dense::new(
            Tensor::new(vec![2, 3], vec![1.0, -0.5, 0.7, 0.3, 0.9, -1.1]).unwrap(),
            Tensor::new(vec![1, 3], vec![0.1, -0.2, 0.05]).unwrap(),
            Activation::Relu,
        )
        .unwrap(),
        Dense::new(Tensor::new(vec![3, 1], vec![0.6, -0.4, 1.2]).unwrap(), Tensor::zeros(&[1, 1]), Activation::Identity).unwrap(),
    ])
    .unwrap();
    let f = MlpScorer { net, mode: ActivationMode::SoftplusSwap { beta: 10.0 } };
    let b = Tensor::vector(vec![-1.0, -1.0]);
    let t = Tensor::vector(vec![0.2, -0.3]);
    let mut rng = Rng::new(1);
    for _ in 0..20 {
        let x = Tensor::vector(vec![rng.uniform_in(-1.0, 1.0), rng.uniform_in(-1.0, 1.0)]);
        let (_, grad) = targeted_loss_and_grad(&f, &x, &b, &t, 0.3, 10.0, 16, Rule::Left).unwrap();
        let err = check_value_grad(&x, &grad, FD_STEP, |xv| {
            Ok(targeted_loss_and_grad(&f, xv, &b, &t, 0.3, 10.0, 16, Rule::Left)?.0)
        })
        .unwrap();
        assert!(err <= 1e-6, "{err}");
    }
}

fn toy_classifier() -> Classifier {
    let mut rng = Rng::new(2);
    let net = Mlp::init(&[16, 12, 3], &[Activation::Relu, Activation::Identity], &mut rng).unwrap();
    Classifier::from_net(net, true).unwrap()
}

fn toy_input(seed: u64) -> Tensor {
    let mut rng = Rng::new(seed);
    Tensor::new(vec![4, 4], (0..16).map(|_| rng.uniform_in(-0.9, 0.9)).collect()).unwrap()
}

#[test]
fn targeted_attack_stays_in_budget_and_improves() {
    let clf = toy_classifier();
    let (x, target) = (toy_input(3), toy_input(4));
    let b = Tensor::full(&[4, 4], -1.0);
    let cfg = AttackConfig { steps: 40, ..AttackConfig::default() };
    let r = targeted_attack(&clf, &x, &target, &b, &cfg).unwrap();
    assert_eq!(r.loss_history.len(), 41);
    assert!(r.linf <= cfg.epsilon + 1e-12);
    assert!(r.x_adv.data().iter().all(|v| (DATA_RANGE.0..=DATA_RANGE.1).contains(v)));
    let best = r.loss_history[r.best_iterate];
    assert!(r.loss_history.iter().all(|&l| l >= best));
    assert!(best < r.loss_history[0]);
    assert_eq!(r.class, clf.predict(&x).unwrap());
}

#[test]
fn zero_budget_leaves_the_input_alone() {
    let clf = toy_classifier();
    let (x, target) = (toy_input(5), toy_input(6));
    let b = Tensor::full(&[4, 4], -1.0);
    let cfg = AttackConfig { steps: 5, epsilon: 0.0, ..AttackConfig::default() };
    let r = targeted_attack(&clf, &x, &target, &b, &cfg).unwrap();
    assert_eq!(r.x_adv, x);
    assert_eq!(r.attribution_distance, r.initial_distance);
    assert!(!r.halved());
}

#[test]
fn sweep_prefers_class_preserving_runs() {
    let clf = toy_classifier();
    let (x, target) = (toy_input(7), toy_input(8));
    let b = Tensor::full(&[4, 4], -1.0);
    let cfg = AttackConfig { steps: 20, epsilon: 0.3, ..AttackConfig::default() };
    let gammas = [0.0, 100.0];
    let best = targeted_attack_sweep(&clf, &x, &target, &b, &cfg, &gammas).unwrap();
    let runs: Vec<_> = gammas
        .iter()
        .map(|&gamma| targeted_attack(&clf, &x, &target, &b, &AttackConfig { gamma, ..cfg.clone() }).unwrap())
        .collect();
    let preserved: Vec<_> = runs.iter().filter(|r| r.class_preserved).collect();
    if !preserved.is_empty() {
        assert!(best.class_preserved);
        assert!(preserved.iter().all(|r| r.attribution_distance >= best.attribution_distance));
    }
    assert!(targeted_attack_sweep(&clf, &x, &target, &b, &cfg, &[]).is_err());
}

#[test]
fn topk_attack_never_changes_the_class() {
    let clf = toy_classifier();
    let b = Tensor::full(&[4, 4], -1.0);
    let cfg = AttackConfig { steps: 30, epsilon: 0.2, ..AttackConfig::default() };
    for seed in 10..14 {
        let x = toy_input(seed);
        let r = topk_attack(&clf, &x, 4, &b, &cfg).unwrap();
        assert!(r.class_preserved);
        assert!(r.attribution_distance <= r.initial_distance);
        let overlap = r.topk_overlap.unwrap();
        assert!((0.0..=1.0).contains(&overlap));
        assert!(r.linf <= cfg.epsilon + 1e-12);
    }
    assert!(topk_attack(&clf, &toy_input(1), 0, &b, &cfg).is_err());
}

#[test]
fn top_k_breaks_ties_by_index() {
    assert_eq!(top_k_indices(&[1.0, 3.0, 3.0, 2.0], 3), vec![1, 2, 3]);
}

#[test]
fn unchanged_inputs_are_perfectly_robust() {
    let x = Tensor::new(vec![16, 16], (0..256).map(|i| ((i % 17) as f64 / 8.0) - 1.0).collect()).unwrap();
    let big = Classifier::from_net(
        Mlp::init(&[256, 8, 3], &[Activation::Relu, Activation::Identity], &mut Rng::new(1)).unwrap(),
        true,
    )
    .unwrap();
    let cases = [AttackedInput { id: "a".into(), x: x.clone(), x_adv: x.clone(), class_preserved: true }];
    let b = Tensor::full(&[16, 16], -1.0);
    let rows = evaluate_robustness(
        &[Method::Ig],
        &cases,
        |_, img| {
            let f = big.class_logit(0, ActivationMode::Native)?;
            integrated_gradients(&f, img, &b, 8, Rule::Left)
        },
        &MetricConfig::default(),
    )
    .unwrap();
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0].ssi, 1.0);
}
