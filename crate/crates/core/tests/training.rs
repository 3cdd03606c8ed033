use mlc_core::embeddings::{context_regularizer, init_label_embeddings, LabelEmbeddings, WordEmbeddingTable};
use mlc_core::losses::LossSpec;
use mlc_core::metrics::{Metric, MetricsReport};
use mlc_core::model::predict;
use mlc_core::par::Execution;
use mlc_core::train::{history_csv, train, AdamConfig, TrainConfig};

mod common;

fn fast(epochs: usize, lambda: f64) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: 10,
        adam: AdamConfig {
            learning_rate: 1e-2,
            ..AdamConfig::default()
        },
        seed: 3,
        loss: LossSpec {
            lambda,
            ..LossSpec::default()
        },
        ..TrainConfig::default()
    }
}

#[test]
fn loss_trends_down() {
    let data = common::learnable(50, 4, 1);
    let config = common::config_for(&data, 8);
    let emb = LabelEmbeddings::random(4, 8, 0.5, 1);
    let out = train(&data, None, &config, &fast(20, 0.1), emb).unwrap();
    let losses: Vec<f64> = out.history.iter().map(|r| r.train_loss).collect();
    let head = losses[..5].iter().sum::<f64>() / 5.0;
    let tail = losses[15..].iter().sum::<f64>() / 5.0;
    assert!(tail < head, "{losses:?}");
    assert!(losses[19] < losses[0]);
}

#[test]
fn large_lambda_keeps_embeddings_at_their_anchors() {
    let data = common::learnable(40, 4, 2);
    let config = common::config_for(&data, 8);
    let emb = LabelEmbeddings::random(4, 8, 0.5, 2);
    let free = train(&data, None, &config, &fast(10, 0.0), emb.clone()).unwrap();
    let tied = train(&data, None, &config, &fast(10, 1e3), emb).unwrap();
    assert!(tied.embeddings.drift() < free.embeddings.drift());
}

#[test]
fn regularizer_is_zero_right_after_initialization() {
    let table = WordEmbeddingTable::from_entries([("red", vec![1.0, 0.5]), ("car", vec![-0.25, 2.0])]).unwrap();
    let names = vec!["red car".to_string(), "car".to_string(), "blue".to_string()];
    let emb = init_label_embeddings(&names, &table, 1).unwrap();
    let (value, grad) = context_regularizer(&emb);
    assert_eq!(value, 0.0);
    assert!(grad.iter().all(|&g| g == 0.0));
}

#[test]
fn runs_are_bit_reproducible() {
    let data = common::learnable(30, 3, 3);
    let config = common::config_for(&data, 4);
    let emb = LabelEmbeddings::random(3, 4, 0.5, 3);
    let tc = TrainConfig {
        execution: Execution::Sequential,
        ..fast(3, 0.1)
    };
    let a = train(&data, Some(&data), &config, &tc, emb.clone()).unwrap();
    let b = train(&data, Some(&data), &config, &tc, emb.clone()).unwrap();
    assert_eq!(a.params, b.params);
    assert_eq!(a.embeddings, b.embeddings);
    assert_eq!(a.history, b.history);
    let c = train(
        &data,
        Some(&data),
        &config,
        &TrainConfig {
            execution: Execution::default(),
            ..tc
        },
        emb,
    )
    .unwrap();
    assert_eq!(a.params, c.params);
}

#[test]
fn without_validation_the_last_epoch_is_returned() {
    let data = common::learnable(30, 3, 4);
    let config = common::config_for(&data, 4);
    let emb = LabelEmbeddings::random(3, 4, 0.5, 4);
    let empty = data.select(&[]);
    let a = train(&data, None, &config, &fast(4, 0.1), emb.clone()).unwrap();
    let b = train(&data, Some(&empty), &config, &fast(4, 0.1), emb.clone()).unwrap();
    assert_eq!(a.best_epoch, 4);
    assert_eq!(a.params, b.params);
    let longer = train(&data, None, &config, &fast(5, 0.1), emb).unwrap();
    assert_ne!(a.params, longer.params);
    assert!(history_csv(&a.history).lines().nth(1).unwrap().ends_with(",,,"));
}

#[test]
fn selected_epoch_has_the_best_validation_score() {
    let data = common::learnable(60, 4, 5);
    let (tr, va) = (
        data.select(&(0..40).collect::<Vec<_>>()),
        data.select(&(40..60).collect::<Vec<_>>()),
    );
    let config = common::config_for(&data, 8);
    let tc = TrainConfig {
        select_on: Metric::MaF1,
        ..fast(12, 0.1)
    };
    let out = train(&tr, Some(&va), &config, &tc, LabelEmbeddings::random(4, 8, 0.5, 5)).unwrap();
    let best = out
        .history
        .iter()
        .map(|r| r.val.unwrap().2)
        .fold(f64::NEG_INFINITY, f64::max);
    let first_best = out.history.iter().find(|r| r.val.unwrap().2 == best).unwrap().epoch;
    assert_eq!(out.best_epoch, first_best);
    let probs = predict(Execution::default(), &va, &out.embeddings, &out.params, &config);
    let report = MetricsReport::from_probabilities(va.labels.view(), probs.view(), 0.5).unwrap();
    assert_eq!(report.maf1, best);
}

#[test]
fn divergence_names_epoch_and_batch() {
    let data = common::learnable(20, 3, 6);
    let config = common::config_for(&data, 4);
    let tc = TrainConfig {
        adam: AdamConfig {
            learning_rate: 1e300,
            ..AdamConfig::default()
        },
        ..fast(5, 0.1)
    };
    let err = train(&data, None, &config, &tc, LabelEmbeddings::random(3, 4, 0.5, 6)).unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("epoch") && msg.contains("batch"), "{msg}");
}
