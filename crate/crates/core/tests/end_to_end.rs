use partialfl_core::data::{PartitionSpec, SyntheticSpec};
use partialfl_core::federation::{
    run_experiment, Algorithm, EvalPlan, FederatedData, FederationConfig, NoObserver, Sequential,
};
use partialfl_core::metrics::Metric;
use partialfl_core::models::{ModalityMode, ModelDims};
use partialfl_core::rng::SeedStreams;

fn data(q: f64, seed: u64) -> FederatedData {
    let spec = SyntheticSpec {
        num_classes: 3,
        num_samples: 600,
        latent_dim: 4,
        non_shareable_dim: 8,
        shareable_dim: 8,
        ..SyntheticSpec::default()
    };
    let partition = PartitionSpec {
        concentration: 0.5,
        shareable_fraction: q,
        ..PartitionSpec::default()
    };
    FederatedData::synthesize(&spec, &partition, 8, &SeedStreams::new(seed)).unwrap()
}

fn config(algorithm: Algorithm) -> FederationConfig {
    FederationConfig {
        algorithm,
        clients: 8,
        sample_rate: 0.5,
        rounds: 12,
        learning_rate: 5e-3,
        ..FederationConfig::default()
    }
}

fn dims() -> ModelDims {
    ModelDims {
        embedding_dim: 8,
        extracted_dim: 8,
        server_hidden: 16,
        edge_hidden: 16,
        classifier_hidden: 8,
    }
}

#[test]
fn every_algorithm_learns_and_reports_consistently() {
    let data = data(0.5, 1);
    let eval = EvalPlan {
        metrics: vec![Metric::TopK(1), Metric::TopK(2), Metric::Uar],
        interval: 4,
    };
    for algorithm in [
        Algorithm::PartialFl,
        Algorithm::FedAvg,
        Algorithm::FedProx,
        Algorithm::Centralized,
    ] {
        let cfg = config(algorithm);
        let out = run_experiment(
            &cfg,
            &dims(),
            &data,
            &eval,
            &SeedStreams::new(1),
            &Sequential,
            &mut NoObserver,
        )
        .unwrap();
        assert_eq!(out.rounds.len(), cfg.rounds);
        let evaluated: Vec<usize> = out
            .rounds
            .iter()
            .filter(|r| r.metrics.is_some())
            .map(|r| r.round)
            .collect();
        assert_eq!(evaluated, [3, 7, 11], "{algorithm:?}");
        assert_eq!(out.rounds.last().unwrap().metrics.as_ref(), Some(&out.final_metrics));

        let top1 = out.final_metrics[0].value;
        let top2 = out.final_metrics[1].value;
        assert!(top1 > 0.6, "{algorithm:?} top1 {top1}");
        assert!(top2 >= top1);

        for r in &out.rounds {
            match algorithm {
                Algorithm::Centralized => assert!(r.participants.is_none()),
                _ => {
                    let p = r.participants.as_ref().unwrap();
                    assert_eq!(p.len(), 4);
                    assert!(p.windows(2).all(|w| w[0] < w[1]));
                }
            }
            assert_eq!(
                r.loss_server.is_some(),
                algorithm == Algorithm::PartialFl,
                "{algorithm:?}"
            );
            assert_eq!(r.loss_loc.is_some(), algorithm == Algorithm::PartialFl, "{algorithm:?}");
        }
    }
}

#[test]
fn multi_modal_global_model_trains_with_missing_modality() {
    let data = data(0.5, 2);
    let mut cfg = config(Algorithm::PartialFl);
    cfg.modality = ModalityMode::MultiModal;
    cfg.normalize_embeddings = true;
    cfg.inter_modal_negatives = true;
    let out = run_experiment(
        &cfg,
        &dims(),
        &data,
        &EvalPlan::default(),
        &SeedStreams::new(2),
        &Sequential,
        &mut NoObserver,
    )
    .unwrap();
    assert!(out.final_metrics[0].value > 0.6, "{:?}", out.final_metrics);
    assert!(out.rounds.iter().all(|r| r.loss_glob.unwrap().is_finite()));
}

#[test]
fn invalid_configs_are_rejected_before_training() {
    let data = data(1.0, 3);
    let mut cfg = config(Algorithm::PartialFl);
    cfg.batch_size = 1;
    let err = run_experiment(
        &cfg,
        &dims(),
        &data,
        &EvalPlan::default(),
        &SeedStreams::new(3),
        &Sequential,
        &mut NoObserver,
    )
    .unwrap_err();
    assert!(err.to_string().contains("batch"), "{err}");

    let mut cfg = config(Algorithm::FedAvg);
    cfg.clients = 9;
    assert!(run_experiment(
        &cfg,
        &dims(),
        &data,
        &EvalPlan::default(),
        &SeedStreams::new(3),
        &Sequential,
        &mut NoObserver
    )
    .is_err());
}
