//! Fixtures shared by the benchmarks.

use manigrad::models::{Classifier, ClassifierArch, Vae, VaeArch};
use manigrad::rng::Rng;
use manigrad::Tensor;

/// Untrained models at the default experiment sizes, marked trained so
/// inference paths accept them.
pub fn models(seed: u64) -> (Vae, Classifier) {
    let vae = Vae::init(&VaeArch::new(1024, 8, vec![256]).expect("valid arch"), seed)
        .expect("init")
        .into_trained();
    let arch = ClassifierArch {
        input_dim: 1024,
        hidden: vec![256, 128],
        num_classes: 4,
    };
    let clf = Classifier::init(&arch, seed).expect("init");
    let clf = Classifier::from_net(clf.net().clone(), true).expect("valid net");
    (vae, clf)
}

pub fn image(seed: u64) -> Tensor {
    let mut rng = Rng::new(seed);
    Tensor::new(vec![32, 32], (0..1024).map(|_| rng.uniform_in(-1.0, 1.0)).collect()).expect("shape")
}
