//! Train the hybrid CNN-LSTM classifier on a small synthetic set and
//! report kappa, accuracy, and per-class F1.

use viptt::dataset::{gen_synthetic_dataset, stratified_split, SyntheticSpec};
use viptt::metrics::{accuracy, cohen_kappa, per_class_f1};
use viptt::model::{build_model, evaluate, train, ExtractorKind, ModelConfig, TrainConfig};

fn main() {
    let dir = std::env::temp_dir().join("viptt_train_example");
    let ds = gen_synthetic_dataset(&SyntheticSpec::balanced(3, 20, (8, 32, 32)), 5, &dir).unwrap();
    let (tr, va) = stratified_split(&ds, 0.8, 1).unwrap();

    let config = ModelConfig {
        input_dims: (8, 32, 32),
        extractor: ExtractorKind::Tiny { feature_dim: 16 },
        lstm_units: 8,
        dense_units: 16,
        num_classes: 3,
    };
    let mut model = build_model(&config, 42).unwrap();
    let cfg = TrainConfig {
        lr_init: 0.1,
        batch_size: 8,
        max_epochs: 80,
        plateau_factor: 0.5,
        plateau_patience: 15,
        early_stop_patience: 25,
        seed: 9,
        ..TrainConfig::default()
    };
    let history = train(&mut model, &tr, &va, &cfg).unwrap();
    for row in history.iter().step_by(10) {
        println!(
            "epoch {:>3}: train {:.4} val {:.4} lr {:.4} kappa {:.3}",
            row.epoch, row.train_loss, row.val_loss, row.lr, row.val_kappa
        );
    }
    let (_, cm) = evaluate(&mut model, &va, 8).unwrap();
    println!(
        "final: accuracy {:.3} kappa {:.3} per-class F1 {:?}",
        accuracy(&cm),
        cohen_kappa(&cm).unwrap().kappa,
        per_class_f1(&cm).iter().map(|v| (v * 1000.0).round() / 1000.0).collect::<Vec<_>>()
    );
}
