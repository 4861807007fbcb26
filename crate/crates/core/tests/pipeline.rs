//! End-to-end library pipeline over the synthetic city: generate, filter,
//! split, featurize, train, evaluate, persist.

use stnn_core::prelude::*;
use stnn_core::geobin::featurize_all;
use stnn_core::StnnModel32;
use stnn_core::metrics::evaluate;
use stnn_core::neuralnet::Activation;
use stnn_core::persist::{load_model, save_model};
use stnn_core::synthcity::{sample_trips, OraclePredictor};
use stnn_core::trips::{apply_outlier_filters, split_train_test};

fn small_config() -> TrainConfig {
    TrainConfig {
        epochs: 40,
        batch_size: 64,
        learning_rate: 0.01,
        seed: 3,
        dist_hidden: vec![24, 12, 8],
        time_hidden: vec![24, 12, 8],
        hidden_activation: Activation::ReLU,
        ..TrainConfig::default()
    }
}

#[test]
fn synthetic_city_pipeline_learns_and_round_trips() {
    let city = CityConfig::nyc_default().with_noise(0.0).unwrap();
    let trips = sample_trips(&city, 4000, 42);
    let (clean, rejected) = apply_outlier_filters(trips, city.grid().bbox());
    assert!(rejected.is_empty());
    let (train, test) = split_train_test(&clean, 0.2, 42).unwrap();
    assert_eq!(test.len(), 800);

    let grid = city.grid().clone();
    let timespec = *city.timespec();
    let features = featurize_all(&train, &grid, &timespec).unwrap();
    let cfg = small_config();
    let mut model: StnnModel64 =
        StnnModel::prepare(&features, grid.clone(), timespec, &cfg).unwrap();
    let history = stnn::train_joint(&mut model, &features, &cfg).unwrap();

    // training moved the loss substantially
    assert_eq!(history.joint.len(), cfg.epochs);
    let first = history.joint[0];
    let last = *history.joint.last().unwrap();
    assert!(
        last < first,
        "joint loss did not decrease: {first} -> {last}"
    );

    let eval = evaluate(&model, &test).unwrap();
    let time = eval.time.unwrap();
    let dist = eval.distance.unwrap();
    assert!(time.mae.is_finite() && time.mae > 0.0);
    assert!(dist.r2 > 0.5, "distance r2 {}", dist.r2);
    assert_eq!(eval.predictions.rows.len(), test.len());

    // persistence through a real file
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.stnn");
    save_model(
        std::fs::File::create(&path).unwrap(),
        &AnyModel::Stnn(model.clone()),
    )
    .unwrap();
    let back = load_model::<f64, _>(std::fs::File::open(&path).unwrap()).unwrap();
    let reval = evaluate(&back, &test).unwrap();
    assert_eq!(reval.time.unwrap().mae, time.mae);
    assert_eq!(reval.distance.unwrap().r2, dist.r2);
}

#[test]
fn oracle_predictor_beats_any_trained_model_on_noiseless_data() {
    let city = CityConfig::nyc_default().with_noise(0.0).unwrap();
    let trips = sample_trips(&city, 500, 7);
    let eval = evaluate(&OraclePredictor(&city), &trips).unwrap();
    assert!(eval.time.unwrap().mae < 1e-9);
    assert!(eval.distance.unwrap().mae < 1e-9);
}

#[test]
fn f32_pipeline_runs_end_to_end() {
    // the math core is scalar-generic; a 32-bit model trains and predicts
    let city = CityConfig::nyc_default().with_noise(0.0).unwrap();
    let trips = sample_trips(&city, 600, 9);
    let grid = city.grid().clone();
    let timespec = *city.timespec();
    let features = featurize_all(&trips, &grid, &timespec).unwrap();
    let cfg = TrainConfig {
        epochs: 2,
        batch_size: 32,
        dist_hidden: vec![8, 4],
        time_hidden: vec![8, 4],
        ..small_config()
    };
    let mut model: StnnModel32 = StnnModel::prepare(&features, grid, timespec, &cfg).unwrap();
    stnn::train_joint(&mut model, &features, &cfg).unwrap();
    let pred = model
        .predict((40.75, -73.98), (40.70, -74.01), 1_362_355_200)
        .unwrap();
    assert!(pred.time_s.is_finite());
    assert!(pred.distance_mi.is_finite());
}

#[test]
fn outlier_injected_data_is_cleaned_by_the_filters() {
    use stnn_core::synthcity::{sample_trips_with_outliers, OutlierSpec};
    let city = CityConfig::nyc_default();
    let trips =
        sample_trips_with_outliers(&city, 2000, 1, &OutlierSpec::all_classes(0.2)).unwrap();
    let (clean, rejected) = apply_outlier_filters(trips, city.grid().bbox());
    assert!(!rejected.is_empty());
    // cleaned data featurizes without error
    let features = featurize_all(&clean, city.grid(), city.timespec()).unwrap();
    assert_eq!(features.len(), clean.len());
}
