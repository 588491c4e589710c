//! The full transfer protocol: pretrain on a many-class source task with
//! the extractor frozen, swap the softmax head, fine-tune everything on
//! the imbalanced target task with class-weighted loss.

use viptt::dataset::{class_weights, gen_synthetic_dataset, stratified_split, SyntheticSpec};
use viptt::metrics::cohen_kappa;
use viptt::model::{
    build_model, evaluate, load_checkpoint, replace_head, save_checkpoint, train, Component,
    ExtractorKind, ModelConfig, TrainConfig,
};

fn main() {
    let dir = std::env::temp_dir().join("viptt_transfer_example");
    std::fs::create_dir_all(&dir).unwrap();
    let source =
        gen_synthetic_dataset(&SyntheticSpec::balanced(6, 20, (8, 32, 32)), 3, dir.join("src"))
            .unwrap();
    let target = gen_synthetic_dataset(
        &SyntheticSpec { num_classes: 3, counts: vec![24, 10, 6], dims: (8, 32, 32), noise: 0.1 },
        4,
        dir.join("tgt"),
    )
    .unwrap();
    let (str_, sva) = stratified_split(&source, 0.8, 1).unwrap();
    let (ttr, tva) = stratified_split(&target, 0.8, 2).unwrap();

    let config = ModelConfig {
        input_dims: (8, 32, 32),
        extractor: ExtractorKind::Tiny { feature_dim: 16 },
        lstm_units: 8,
        dense_units: 16,
        num_classes: 6,
    };
    let mut model = build_model(&config, 7).unwrap();
    model.set_trainable(Component::Extractor, false);
    let cfg = TrainConfig {
        lr_init: 0.3,
        batch_size: 8,
        max_epochs: 30,
        plateau_factor: 0.5,
        plateau_patience: 15,
        early_stop_patience: 30,
        seed: 11,
        ..TrainConfig::default()
    };
    train(&mut model, &str_, &sva, &cfg).unwrap();
    let (_, cm) = evaluate(&mut model, &sva, 8).unwrap();
    println!("source task kappa {:.3}", cohen_kappa(&cm).unwrap().kappa);

    let ckpt = dir.join("pretrained.ckpt");
    save_checkpoint(&model, &ckpt).unwrap();

    // head swap: every non-head tensor carries over bit-identically
    let mut ft = load_checkpoint(&ckpt).unwrap();
    replace_head(&mut ft, 3, 13).unwrap();
    ft.set_trainable(Component::Extractor, true);

    let labels: Vec<usize> = ttr.records.iter().map(|r| r.label).collect();
    let weights = class_weights(&labels, 3).unwrap();
    println!("class weights {weights:?}");
    let cfg = TrainConfig { lr_init: 0.1, class_weights: Some(weights), max_epochs: 60, ..cfg };
    train(&mut ft, &ttr, &tva, &cfg).unwrap();
    let (_, cm) = evaluate(&mut ft, &tva, 8).unwrap();
    println!("target task kappa {:.3}", cohen_kappa(&cm).unwrap().kappa);
}
