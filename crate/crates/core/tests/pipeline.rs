use cagr::config::{Mode, TrainingConfig};
use cagr::graph::{load_dataset, load_dataset_with_ids, IdMaps};
use cagr::params;
use cagr::pipeline::train_and_evaluate;
use cagr::synth::{generate, SynthSpec};
use cagr::Error;

fn small_config(mode: Mode) -> TrainingConfig {
    TrainingConfig { mode, d: 8, heads: 2, iterations: 4_000, seed: 11, ..TrainingConfig::default() }
}

#[test]
fn files_on_disk_round_trip_through_training() {
    let dir = tempfile::tempdir().unwrap();
    let synthetic = generate(&SynthSpec::default()).unwrap();
    synthetic.text.write(dir.path()).unwrap();
    let ds = load_dataset(dir.path()).unwrap();
    assert_eq!(ds, synthetic.text.parse().unwrap());

    let cfg = small_config(Mode::Joint);
    let (outcome, evaluation) = train_and_evaluate(&ds, &cfg).unwrap();
    evaluation.report.check_invariants().unwrap();
    assert_eq!(evaluation.report.cases, 33);

    // A model and id maps saved next to each other reload to the same ids.
    let model = dir.path().join("model.bin");
    params::save(&outcome.state, &model).unwrap();
    ds.ids.save(dir.path()).unwrap();
    let reloaded = load_dataset_with_ids(dir.path(), IdMaps::load(dir.path()).unwrap()).unwrap();
    assert_eq!(reloaded.ids, ds.ids);
    let state = params::load_checked(&model, &outcome.state.shape).unwrap();
    assert_eq!(params::to_bytes(&state), params::to_bytes(&outcome.state));
}

#[test]
fn every_mode_trains_on_the_benchmark_layout() {
    let ds = generate(&SynthSpec::default()).unwrap().text.parse().unwrap();
    for mode in [Mode::Simple, Mode::TwoStage, Mode::Joint] {
        let (outcome, evaluation) = train_and_evaluate(&ds, &small_config(mode)).unwrap();
        assert!(outcome.state.find_non_finite().is_none(), "{mode:?}");
        evaluation.report.check_invariants().unwrap();
    }
}

#[test]
fn missing_file_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let err = load_dataset(dir.path()).unwrap_err();
    assert!(matches!(err, Error::File { .. }));
    assert!(err.to_string().contains("user_item.tsv"));
}
