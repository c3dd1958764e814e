//! End-to-end behaviour of the three training paradigms on small cohorts.

use icufed::data::{build_records, generate_synthetic_cohort, select_cohort, CohortSpec, SynthConfig, WindowedDataset};
use icufed::model::build_model;
use icufed::nn::{stream, Rng};
use icufed::partition::make_split_plan;
use icufed::trainers::{train_cml, train_fl, train_lml, FlConfig, FoldData, TrainConfig};

fn fold_data(n: usize, drift: f64, k: usize, seed: u64) -> FoldData {
    let spec = CohortSpec::default();
    let synth = SynthConfig {
        n_patients: n,
        death_rate: 0.2,
        drift_strength: drift,
        ..SynthConfig::default()
    };
    let g = generate_synthetic_cohort(seed, &synth, &spec).unwrap();
    let cohort = select_cohort(g.events, &g.outcomes, &spec).unwrap();
    let ds = WindowedDataset::build(&build_records(&cohort), 8.0, &spec).unwrap();
    let plan = make_split_plan(&ds.ids_and_labels(), 5, k, 0.2, seed).unwrap();
    FoldData::build(&ds, &plan.folds[0]).unwrap()
}

fn config(seed: u64, epochs: usize) -> TrainConfig {
    TrainConfig {
        max_epochs: epochs,
        patience: epochs.max(1),
        seed,
        ..TrainConfig::default()
    }
}

#[test]
fn zero_epochs_returns_the_initial_model() {
    let data = fold_data(300, 1.75, 2, 1);
    let mc = data.model_config().unwrap();
    let init = build_model(mc.clone(), &mut Rng::derive(1, &[stream::INIT, 0])).unwrap().get_params();
    let cml = train_cml(&data, &mc, &config(1, 0)).unwrap();
    assert_eq!(cml.params, init);
    assert_eq!(cml.epochs_run, 0);
    let fl = train_fl(&data, &mc, &config(1, 0), &FlConfig { clients: 2, rounds_max: 0, ..FlConfig::default() }).unwrap();
    assert_eq!(fl.params, init);
}

#[test]
fn same_seed_same_logs() {
    let data = fold_data(300, 1.75, 2, 2);
    let mc = data.model_config().unwrap();
    let fl = FlConfig { clients: 2, rounds_max: 3, ..FlConfig::default() };
    let a = train_fl(&data, &mc, &config(2, 3), &fl).unwrap();
    let b = train_fl(&data, &mc, &config(2, 3), &fl).unwrap();
    assert_eq!(a.log, b.log);
    assert_eq!(a.params, b.params);
    assert_eq!(a.test_scores, b.test_scores);
    let c = train_fl(&data, &mc, &config(3, 3), &fl).unwrap();
    assert_ne!(a.params, c.params);
}

#[test]
fn local_models_see_only_their_own_client() {
    let mut data = fold_data(400, 1.75, 2, 4);
    let mc = data.model_config().unwrap();
    let before = train_lml(&data, &mc, &config(4, 2)).unwrap();
    let half = data.clients[1].train.len() / 2;
    data.clients[1].train.truncate(half);
    data.clients[1].val.reverse();
    let after = train_lml(&data, &mc, &config(4, 2)).unwrap();
    assert_eq!(before[0].params, after[0].params);
    assert_eq!(before[0].log, after[0].log);
    assert_ne!(before[1].params, after[1].params);
}

#[test]
fn federated_training_stays_finite() {
    let data = fold_data(400, 1.75, 4, 5);
    let mc = data.model_config().unwrap();
    let fl = FlConfig { clients: 4, local_epochs: 2, participation: 0.5, rounds_max: 4 };
    let out = train_fl(&data, &mc, &config(5, 4), &fl).unwrap();
    assert!(out.params.is_finite());
    assert!(out.test_scores.iter().all(|p| (0.0..=1.0).contains(p)));
    assert!(out.log.entries.iter().all(|e| e.value.is_finite() || e.metric == "f1"));
}

#[test]
fn strong_signal_is_learned() {
    let data = fold_data(1000, 8.0, 1, 6);
    let mc = data.model_config().unwrap();
    let out = train_cml(&data, &mc, &config(6, 10)).unwrap();
    assert!(out.test.auroc >= 0.95, "AUROC {}", out.test.auroc);
}
