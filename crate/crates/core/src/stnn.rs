//! The joint spatio-temporal model: a distance module over the four binned
//! coordinates whose last hidden activations, concatenated with the time
//! bin, feed a time module. Both heads train together under the summed loss
//! `L = mse(time) + mse(distance)`.
//!
//! The distance module never sees the time feature, so distance predictions
//! are invariant to time-of-day by construction. The time-loss gradient
//! flows through the time module and on into the distance module's hidden
//! layers (switchable off to ablate that coupling).

use thiserror::Error;

use crate::geobin::{
    featurize, FeatureVector, FeaturizedSet, GeobinError, GridSpec, Standardizer, TimeSpec,
};
use crate::metrics::{TripPrediction, TripPredictor};
use crate::neuralnet::{self, Activation, ForwardCache, Gradients, Mlp, NnError};
use crate::scalar::Scalar;
use crate::trips::TripRecord;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Error)]
pub enum StnnError {
    #[error("network: {0}")]
    Nn(#[from] NnError),
    #[error("binning: {0}")]
    Geo(#[from] GeobinError),
    #[error("invalid configuration: {0}")]
    BadConfig(String),
    #[error("model wiring: {0}")]
    BadModel(String),
}

/// Training settings for the joint model (the baselines reuse the same
/// widths and optimizer settings so comparisons isolate the architecture).
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Hidden widths of the distance module (three layers by default).
    pub dist_hidden: Vec<usize>,
    /// Hidden widths of the time module.
    pub time_hidden: Vec<usize>,
    pub hidden_activation: Activation,
    /// Z-score the input features on the training split. Switchable off to
    /// feed raw cell corners.
    pub standardize_features: bool,
    /// Optimize the loss in raw target units instead of z-scored units.
    /// Raw units let the seconds term drown the miles term; the default
    /// standardizes both targets and reports metrics in original units.
    pub raw_loss: bool,
    /// Let the time loss backpropagate into the distance module's hidden
    /// layers. Freezing this path ablates the coupling.
    pub time_grad_into_dist: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            batch_size: 256,
            learning_rate: 1e-3,
            seed: 0,
            dist_hidden: vec![128, 64, 32],
            time_hidden: vec![128, 64, 32],
            hidden_activation: Activation::ReLU,
            standardize_features: true,
            raw_loss: false,
            time_grad_into_dist: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), StnnError> {
        if self.batch_size < 1 {
            return Err(StnnError::BadConfig("batch_size must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(StnnError::BadConfig(format!(
                "learning_rate must be positive and finite, got {}",
                self.learning_rate
            )));
        }
        if self.dist_hidden.is_empty() || self.time_hidden.is_empty() {
            return Err(StnnError::BadConfig(
                "both modules need at least one hidden layer".into(),
            ));
        }
        if self.dist_hidden.iter().chain(&self.time_hidden).any(|&w| w == 0) {
            return Err(StnnError::BadConfig("hidden widths must be positive".into()));
        }
        Ok(())
    }
}

/// A joint prediction in original units. Values may be slightly negative
/// for a poorly trained model; display layers may clamp, the library does
/// not.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JointPrediction<S> {
    pub distance_mi: S,
    pub time_s: S,
}

/// Forward caches of both modules, as needed for joint backpropagation.
#[derive(Debug, Clone)]
pub struct StnnCaches<S> {
    pub dist: ForwardCache<S>,
    pub time: ForwardCache<S>,
}

/// Per-epoch training losses, in the (standardized unless `raw_loss`)
/// optimization units.
#[derive(Debug, Clone, PartialEq)]
pub struct JointHistory<S> {
    pub joint: Vec<S>,
    pub time: Vec<S>,
    pub distance: Vec<S>,
}

impl<S> Default for JointHistory<S> {
    fn default() -> Self {
        JointHistory {
            joint: Vec::new(),
            time: Vec::new(),
            distance: Vec::new(),
        }
    }
}

/// Index of the distance component in the target standardizer.
pub const TARGET_DIST: usize = 0;
/// Index of the time component in the target standardizer.
pub const TARGET_TIME: usize = 1;

/// The trained (or in-training) joint model, self-contained: grid, time
/// discretization, standardizers, and both networks.
#[derive(Debug, Clone, PartialEq)]
pub struct StnnModel<S> {
    dist: Mlp<S>,
    time: Mlp<S>,
    grid: GridSpec,
    timespec: TimeSpec,
    /// Five dimensions: four coordinate corners plus the time bin.
    feature_std: Standardizer<S>,
    /// Two dimensions: distance then time.
    target_std: Standardizer<S>,
}

impl<S: Scalar> StnnModel<S> {
    /// Wires a model from parts, validating the architecture: the distance
    /// module maps the 4 coordinates to a scalar, and the time module's
    /// input is the distance module's last hidden width plus the one time
    /// feature.
    pub fn new(
        grid: GridSpec,
        timespec: TimeSpec,
        feature_std: Standardizer<S>,
        target_std: Standardizer<S>,
        dist: Mlp<S>,
        time: Mlp<S>,
    ) -> Result<Self, StnnError> {
        if dist.input_dim() != 4 {
            return Err(StnnError::BadModel(format!(
                "distance module must take the 4 coordinate features, got input dim {}",
                dist.input_dim()
            )));
        }
        if dist.output_dim() != 1 || time.output_dim() != 1 {
            return Err(StnnError::BadModel(
                "both modules must end in a scalar head".into(),
            ));
        }
        if dist.layer_count() < 2 {
            return Err(StnnError::BadModel(
                "distance module needs at least one hidden layer".into(),
            ));
        }
        let expected = dist.last_hidden_width() + 1;
        if time.input_dim() != expected {
            return Err(StnnError::BadModel(format!(
                "time module input dim {} does not match distance last hidden width + 1 = {expected}",
                time.input_dim()
            )));
        }
        if feature_std.dim() != 5 {
            return Err(StnnError::BadModel(format!(
                "feature standardizer must have 5 dims, got {}",
                feature_std.dim()
            )));
        }
        if target_std.dim() != 2 {
            return Err(StnnError::BadModel(format!(
                "target standardizer must have 2 dims, got {}",
                target_std.dim()
            )));
        }
        Ok(StnnModel {
            dist,
            time,
            grid,
            timespec,
            feature_std,
            target_std,
        })
    }

    /// Initializes an untrained model for a training set: fits the
    /// standardizers on it (identity where the config says raw) and seeds
    /// both networks. The distance module uses `seed`, the time module
    /// `seed + 1`.
    pub fn prepare(
        train: &FeaturizedSet,
        grid: GridSpec,
        timespec: TimeSpec,
        config: &TrainConfig,
    ) -> Result<Self, StnnError> {
        config.validate()?;
        if train.is_empty() {
            return Err(StnnError::BadConfig("empty training set".into()));
        }
        let feature_std = if config.standardize_features {
            Standardizer::fit(&train.coord_time_rows::<S>())?
        } else {
            Standardizer::identity(5)
        };
        let target_std = if config.raw_loss {
            Standardizer::identity(2)
        } else {
            let rows: Vec<Vec<S>> = train
                .targets
                .iter()
                .map(|t| vec![S::of(t.distance_mi), S::of(t.time_s)])
                .collect();
            Standardizer::fit(&rows)?
        };
        let mut dist_dims = vec![4usize];
        dist_dims.extend(&config.dist_hidden);
        dist_dims.push(1);
        let dist = Mlp::init(&dist_dims, config.hidden_activation, config.seed)?;
        let mut time_dims = vec![config.dist_hidden.last().unwrap() + 1];
        time_dims.extend(&config.time_hidden);
        time_dims.push(1);
        let time = Mlp::init(&time_dims, config.hidden_activation, config.seed.wrapping_add(1))?;
        StnnModel::new(grid, timespec, feature_std, target_std, dist, time)
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn timespec(&self) -> &TimeSpec {
        &self.timespec
    }

    pub fn feature_std(&self) -> &Standardizer<S> {
        &self.feature_std
    }

    pub fn target_std(&self) -> &Standardizer<S> {
        &self.target_std
    }

    pub fn dist_module(&self) -> &Mlp<S> {
        &self.dist
    }

    pub fn time_module(&self) -> &Mlp<S> {
        &self.time
    }

    /// Index of the distance-module layer whose activations feed the time
    /// module (its last hidden layer).
    fn shared_layer(&self) -> usize {
        self.dist.layer_count() - 2
    }

    /// Standardized forward pass: `x5` is a z-scored feature row. Returns
    /// standardized outputs and both caches.
    fn forward_std(&self, x5: &[S]) -> Result<(S, S, StnnCaches<S>), StnnError> {
        if x5.len() != 5 {
            return Err(NnError::ShapeMismatch {
                what: "joint input",
                expected: 5,
                got: x5.len(),
            }
            .into());
        }
        let (dist_out, dist_cache) = self.dist.forward(&x5[..4])?;
        let hidden = dist_cache.activation(self.shared_layer());
        let mut time_in = Vec::with_capacity(hidden.len() + 1);
        time_in.extend_from_slice(hidden);
        time_in.push(x5[4]);
        let (time_out, time_cache) = self.time.forward(&time_in)?;
        Ok((
            dist_out[0],
            time_out[0],
            StnnCaches {
                dist: dist_cache,
                time: time_cache,
            },
        ))
    }

    /// Forward pass over one raw feature vector: standardizes it with the
    /// model's standardizers, runs both modules, and de-standardizes the
    /// outputs to miles and seconds.
    pub fn forward_features(
        &self,
        fv: &FeatureVector,
    ) -> Result<(JointPrediction<S>, StnnCaches<S>), StnnError> {
        let x5 = self.feature_std.apply(&fv.coord_time_row::<S>())?;
        let (zd, zt, caches) = self.forward_std(&x5)?;
        Ok((
            JointPrediction {
                distance_mi: self.target_std.destandardize_component(TARGET_DIST, zd),
                time_s: self.target_std.destandardize_component(TARGET_TIME, zt),
            },
            caches,
        ))
    }

    /// Answers a query `(origin, destination, pickup time)` in original
    /// units. Pure function of the model; errors name the offending
    /// coordinate when a point is outside the grid.
    pub fn predict(
        &self,
        origin: (f64, f64),
        dest: (f64, f64),
        pickup_epoch: i64,
    ) -> Result<JointPrediction<S>, GeobinError> {
        let trip = TripRecord {
            origin_lat: origin.0,
            origin_lon: origin.1,
            dest_lat: dest.0,
            dest_lon: dest.1,
            pickup_epoch,
            travel_time_s: 0.0,
            travel_distance_mi: 0.0,
            passenger_count: 1,
        };
        let (fv, _) = featurize(&trip, &self.grid, &self.timespec)?;
        let (pred, _) = self
            .forward_features(&fv)
            .expect("dimensions validated at construction");
        Ok(pred)
    }
}

/// The joint training objective
/// `L = mse(Y_T, Ŷ_T) + mse(Y_D, Ŷ_D)`, each term `(1/2N) Σ (·)²`.
pub fn joint_loss<S: Scalar>(
    y_dist: &[S],
    y_time: &[S],
    pred_dist: &[S],
    pred_time: &[S],
) -> Result<S, NnError> {
    Ok(neuralnet::mse_loss(y_time, pred_time)? + neuralnet::mse_loss(y_dist, pred_dist)?)
}

struct PreparedSet<S> {
    x5: Vec<Vec<S>>,
    z_dist: Vec<S>,
    z_time: Vec<S>,
}

fn prepare_rows<S: Scalar>(
    model: &StnnModel<S>,
    set: &FeaturizedSet,
) -> Result<PreparedSet<S>, StnnError> {
    let mut x5 = Vec::with_capacity(set.len());
    for f in &set.features {
        x5.push(model.feature_std.apply(&f.coord_time_row::<S>())?);
    }
    let z_dist = set
        .targets
        .iter()
        .map(|t| model.target_std.standardize_component(TARGET_DIST, S::of(t.distance_mi)))
        .collect();
    let z_time = set
        .targets
        .iter()
        .map(|t| model.target_std.standardize_component(TARGET_TIME, S::of(t.time_s)))
        .collect();
    Ok(PreparedSet { x5, z_dist, z_time })
}

fn epoch_losses<S: Scalar>(
    model: &StnnModel<S>,
    prepared: &PreparedSet<S>,
) -> Result<(S, S, S), StnnError> {
    let mut pd = Vec::with_capacity(prepared.x5.len());
    let mut pt = Vec::with_capacity(prepared.x5.len());
    for x in &prepared.x5 {
        let (zd, zt, _) = model.forward_std(x)?;
        pd.push(zd);
        pt.push(zt);
    }
    let time = neuralnet::mse_loss(&prepared.z_time, &pt)?;
    let dist = neuralnet::mse_loss(&prepared.z_dist, &pd)?;
    Ok((time + dist, time, dist))
}

/// Joint mini-batch SGD. Per batch, the time-loss gradient backpropagates
/// through the time module and (unless frozen) continues through the shared
/// activations into the distance module; the distance-loss gradient
/// backpropagates from the distance head; both contributions sum per
/// parameter before one SGD step per module. Deterministic given the seed.
pub fn train_joint<S: Scalar>(
    model: &mut StnnModel<S>,
    train: &FeaturizedSet,
    config: &TrainConfig,
) -> Result<JointHistory<S>, StnnError> {
    config.validate()?;
    if train.is_empty() {
        return Err(StnnError::BadConfig("empty training set".into()));
    }
    let prepared = prepare_rows(model, train)?;
    let n = prepared.x5.len();
    let lr = S::of(config.learning_rate);
    let shared = model.shared_layer();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut history = JointHistory::default();

    for _ in 0..config.epochs {
        for batch in neuralnet::shuffled_batches(n, config.batch_size, &mut rng) {
            let b = S::of(batch.len() as f64);
            let mut dist_acc = Gradients::zeros_like(&model.dist);
            let mut time_acc = Gradients::zeros_like(&model.time);
            for &i in &batch {
                let (zd, zt, caches) = model.forward_std(&prepared.x5[i])?;
                let d_time = (zt - prepared.z_time[i]) / b;
                let d_dist = (zd - prepared.z_dist[i]) / b;

                let (tg, d_time_in) = model.time.backward(&caches.time, &[d_time])?;
                time_acc.add_assign(&tg);

                let (dg_head, _) = model.dist.backward(&caches.dist, &[d_dist])?;
                dist_acc.add_assign(&dg_head);

                if config.time_grad_into_dist {
                    // slice off the time feature; the rest flows into the
                    // distance module at its last hidden layer
                    let inflow = &d_time_in[..d_time_in.len() - 1];
                    let (dg_time, _) = model.dist.backward_from(&caches.dist, shared, inflow)?;
                    dist_acc.add_assign(&dg_time);
                }
            }
            model.dist.sgd_step(&dist_acc, lr)?;
            model.time.sgd_step(&time_acc, lr)?;
        }
        let (joint, time, dist) = epoch_losses(model, &prepared)?;
        history.joint.push(joint);
        history.time.push(time);
        history.distance.push(dist);
    }
    Ok(history)
}

impl<S: Scalar> TripPredictor for StnnModel<S> {
    fn grid(&self) -> &GridSpec {
        &self.grid
    }

    fn timespec(&self) -> &TimeSpec {
        &self.timespec
    }

    fn predict_trip(&self, trip: &TripRecord) -> Result<TripPrediction, GeobinError> {
        let pred = self.predict(
            (trip.origin_lat, trip.origin_lon),
            (trip.dest_lat, trip.dest_lon),
            trip.pickup_epoch,
        )?;
        Ok(TripPrediction {
            time_s: Some(pred.time_s.as_f64()),
            distance_mi: Some(pred.distance_mi.as_f64()),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Matrix;
    use crate::neuralnet::Layer;
    use crate::trips::BoundingBox;
    use rand::Rng;

    fn tiny_config() -> TrainConfig {
        TrainConfig {
            epochs: 3,
            batch_size: 4,
            learning_rate: 1e-2,
            seed: 9,
            dist_hidden: vec![3, 2],
            time_hidden: vec![2],
            hidden_activation: Activation::Tanh,
            ..TrainConfig::default()
        }
    }

    fn toy_city() -> (GridSpec, TimeSpec) {
        (
            GridSpec::new(BoundingBox::nyc_default(), 200.0).unwrap(),
            TimeSpec::default(),
        )
    }

    fn toy_features(n: usize, seed: u64) -> FeaturizedSet {
        use rand::SeedableRng;
        let (grid, timespec) = toy_city();
        let bbox = *grid.bbox();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut set = FeaturizedSet::default();
        for _ in 0..n {
            let trip = TripRecord {
                origin_lat: rng.gen_range(bbox.lat_min..bbox.lat_max),
                origin_lon: rng.gen_range(bbox.lon_min..bbox.lon_max),
                dest_lat: rng.gen_range(bbox.lat_min..bbox.lat_max),
                dest_lon: rng.gen_range(bbox.lon_min..bbox.lon_max),
                pickup_epoch: 1_362_355_200 + rng.gen_range(0..14 * 86_400),
                travel_time_s: rng.gen_range(60.0..3600.0),
                travel_distance_mi: rng.gen_range(0.1..20.0),
                passenger_count: 1,
            };
            let (fv, t) = featurize(&trip, &grid, &timespec).unwrap();
            set.features.push(fv);
            set.targets.push(t);
        }
        set
    }

    #[test]
    fn zero_model_predicts_target_means() {
        let (grid, timespec) = toy_city();
        let train = toy_features(16, 1);
        let cfg = tiny_config();
        let mut model: StnnModel<f64> =
            StnnModel::prepare(&train, grid.clone(), timespec, &cfg).unwrap();
        // zero out every parameter: standardized outputs become 0, so
        // de-standardized predictions are exactly the target means
        for i in 0..model.dist.param_count() {
            model.dist.set_param(i, 0.0);
        }
        for i in 0..model.time.param_count() {
            model.time.set_param(i, 0.0);
        }
        let (pred, _) = model.forward_features(&train.features[3]).unwrap();
        let mean_dist: f64 =
            train.targets.iter().map(|t| t.distance_mi).sum::<f64>() / train.len() as f64;
        let mean_time: f64 =
            train.targets.iter().map(|t| t.time_s).sum::<f64>() / train.len() as f64;
        assert!((pred.distance_mi - mean_dist).abs() < 1e-9);
        assert!((pred.time_s - mean_time).abs() < 1e-9);
    }

    #[test]
    fn distance_ignores_the_time_bin() {
        let train = toy_features(20, 2);
        let (grid, timespec) = toy_city();
        let mut model: StnnModel<f64> =
            StnnModel::prepare(&train, grid, timespec, &tiny_config()).unwrap();
        train_joint(&mut model, &train, &tiny_config()).unwrap();

        let mut fv = train.features[0];
        let (before, _) = model.forward_features(&fv).unwrap();
        fv.time_bin = (fv.time_bin + 97) % 288;
        let (after, _) = model.forward_features(&fv).unwrap();
        assert_eq!(before.distance_mi, after.distance_mi);
    }

    #[test]
    fn forward_matches_hand_composed_modules() {
        // fixture model with identity standardizers: compose the two plain
        // networks by hand as the oracle
        let (grid, timespec) = toy_city();
        let dist = Mlp::from_layers(vec![
            Layer::new(
                Matrix::from_rows(&[
                    vec![0.1, -0.2, 0.3, 0.4],
                    vec![0.5, 0.1, -0.1, 0.2],
                ])
                .unwrap(),
                vec![0.1, -0.3],
                Activation::Tanh,
            )
            .unwrap(),
            Layer::new(
                Matrix::from_rows(&[vec![0.7, -0.6]]).unwrap(),
                vec![0.05],
                Activation::Identity,
            )
            .unwrap(),
        ])
        .unwrap();
        let time = Mlp::from_layers(vec![Layer::new(
            Matrix::from_rows(&[vec![0.3, -0.4, 0.2]]).unwrap(),
            vec![-0.1],
            Activation::Identity,
        )
        .unwrap()])
        .unwrap();
        let model = StnnModel::new(
            grid,
            timespec,
            Standardizer::identity(5),
            Standardizer::identity(2),
            dist.clone(),
            time.clone(),
        )
        .unwrap();

        let fv = FeatureVector {
            origin_lat_bin: 0.3,
            origin_lon_bin: -0.2,
            dest_lat_bin: 0.8,
            dest_lon_bin: 0.1,
            time_bin: 2,
        };
        let (pred, _) = model.forward_features(&fv).unwrap();

        let x4 = [0.3, -0.2, 0.8, 0.1];
        let (dist_out, dist_cache) = dist.forward(&x4).unwrap();
        let mut time_in = dist_cache.activation(0).to_vec();
        time_in.push(2.0);
        let (time_out, _) = time.forward(&time_in).unwrap();
        assert_eq!(pred.distance_mi, dist_out[0]);
        assert_eq!(pred.time_s, time_out[0]);
    }

    #[test]
    fn joint_loss_decomposes() {
        // N = 1, time residual 2, distance residual 1: 2 + 0.5 = 2.5
        let loss = joint_loss(&[1.0], &[10.0], &[2.0], &[12.0]).unwrap();
        assert_eq!(loss, 2.5);
        assert_eq!(joint_loss(&[1.0], &[2.0], &[1.0], &[2.0]).unwrap(), 0.0);

        let y_d = [1.0, 2.0, 3.0];
        let y_t = [5.0, 4.0, 2.0];
        let p_d = [1.5, 1.0, 3.5];
        let p_t = [4.0, 4.5, 2.5];
        let sum = neuralnet::mse_loss(&y_t, &p_t).unwrap()
            + neuralnet::mse_loss(&y_d, &p_d).unwrap();
        assert_eq!(joint_loss(&y_d, &y_t, &p_d, &p_t).unwrap(), sum);

        assert!(joint_loss(&[1.0], &[1.0, 2.0], &[1.0], &[1.0]).is_err());
    }

    #[test]
    fn zero_epochs_is_a_no_op() {
        let train = toy_features(10, 3);
        let (grid, timespec) = toy_city();
        let mut cfg = tiny_config();
        cfg.epochs = 0;
        let mut model: StnnModel<f64> =
            StnnModel::prepare(&train, grid, timespec, &cfg).unwrap();
        let before = model.clone();
        let history = train_joint(&mut model, &train, &cfg).unwrap();
        assert!(history.joint.is_empty());
        assert_eq!(model, before);
    }

    #[test]
    fn training_is_deterministic() {
        let train = toy_features(24, 4);
        let (grid, timespec) = toy_city();
        let cfg = tiny_config();
        let mut a: StnnModel<f64> =
            StnnModel::prepare(&train, grid.clone(), timespec, &cfg).unwrap();
        let ha = train_joint(&mut a, &train, &cfg).unwrap();
        let mut b: StnnModel<f64> = StnnModel::prepare(&train, grid, timespec, &cfg).unwrap();
        let hb = train_joint(&mut b, &train, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(ha, hb);
    }

    /// Finite differences over the composed objective, perturbing both
    /// modules' parameters; `backward`-free so it stays an independent
    /// oracle.
    fn joint_fd_check(couple: bool) {
        let (grid, timespec) = toy_city();
        let train = toy_features(5, 8);
        let cfg = TrainConfig {
            dist_hidden: vec![3, 2],
            time_hidden: vec![2],
            hidden_activation: Activation::Tanh,
            time_grad_into_dist: couple,
            seed: 21,
            ..TrainConfig::default()
        };
        let model: StnnModel<f64> =
            StnnModel::prepare(&train, grid, timespec, &cfg).unwrap();
        let prepared = prepare_rows(&model, &train).unwrap();
        let n = prepared.x5.len();
        let inv_n = 1.0 / n as f64;

        // analytic gradients, accumulated exactly as train_joint does
        let mut dist_acc = Gradients::zeros_like(&model.dist);
        let mut time_acc = Gradients::zeros_like(&model.time);
        for i in 0..n {
            let (zd, zt, caches) = model.forward_std(&prepared.x5[i]).unwrap();
            let (tg, d_time_in) = model
                .time
                .backward(&caches.time, &[(zt - prepared.z_time[i]) * inv_n])
                .unwrap();
            time_acc.add_assign(&tg);
            let (dg, _) = model
                .dist
                .backward(&caches.dist, &[(zd - prepared.z_dist[i]) * inv_n])
                .unwrap();
            dist_acc.add_assign(&dg);
            if couple {
                let inflow = &d_time_in[..d_time_in.len() - 1];
                let (dg_t, _) = model
                    .dist
                    .backward_from(&caches.dist, model.shared_layer(), inflow)
                    .unwrap();
                dist_acc.add_assign(&dg_t);
            }
        }

        // numeric: joint objective as a function of one module's parameters
        let objective = |m: &StnnModel<f64>| -> f64 {
            let mut pd = Vec::with_capacity(n);
            let mut pt = Vec::with_capacity(n);
            for x in &prepared.x5 {
                let (zd, zt, _) = m.forward_std(x).unwrap();
                pd.push(zd);
                pt.push(zt);
            }
            joint_loss(&prepared.z_dist, &prepared.z_time, &pd, &pt).unwrap()
        };

        // frozen coupling drops a gradient path, so the dist module only
        // matches the full objective's finite differences when coupled
        if couple {
            let base = model.clone();
            let fd_dist = neuralnet::finite_diff_grad(
                &model.dist,
                |probe| {
                    let mut m = base.clone();
                    m.dist = probe.clone();
                    objective(&m)
                },
                1e-6,
            );
            let max_err = dist_acc
                .to_vec()
                .iter()
                .zip(fd_dist.to_vec())
                .map(|(&a, f)| (a - f).abs() / a.abs().max(f.abs()).max(1e-8))
                .fold(0.0f64, f64::max);
            assert!(max_err < 1e-5, "dist module max rel err {max_err:e}");
        }

        let base = model.clone();
        let fd_time = neuralnet::finite_diff_grad(
            &model.time,
            |probe| {
                let mut m = base.clone();
                m.time = probe.clone();
                objective(&m)
            },
            1e-6,
        );
        let max_err = time_acc
            .to_vec()
            .iter()
            .zip(fd_time.to_vec())
            .map(|(&a, f)| (a - f).abs() / a.abs().max(f.abs()).max(1e-8))
            .fold(0.0f64, f64::max);
        assert!(max_err < 1e-5, "time module max rel err {max_err:e}");
    }

    #[test]
    fn joint_gradient_matches_finite_differences() {
        joint_fd_check(true);
        joint_fd_check(false);
    }

    #[test]
    fn joint_gradient_is_additive_on_shared_layers() {
        // gradients of the summed loss equal the sum of each term's
        // gradients on the distance module, where both terms contribute
        let (grid, timespec) = toy_city();
        let train = toy_features(6, 13);
        let cfg = TrainConfig {
            dist_hidden: vec![3, 2],
            time_hidden: vec![2],
            hidden_activation: Activation::Tanh,
            seed: 3,
            ..TrainConfig::default()
        };
        let model: StnnModel<f64> = StnnModel::prepare(&train, grid, timespec, &cfg).unwrap();
        let prepared = prepare_rows(&model, &train).unwrap();
        let inv_n = 1.0 / prepared.x5.len() as f64;

        let mut dist_only = Gradients::zeros_like(&model.dist);
        let mut time_only = Gradients::zeros_like(&model.dist);
        let mut summed = Gradients::zeros_like(&model.dist);
        for i in 0..prepared.x5.len() {
            let (zd, zt, caches) = model.forward_std(&prepared.x5[i]).unwrap();
            let (dg, _) = model
                .dist
                .backward(&caches.dist, &[(zd - prepared.z_dist[i]) * inv_n])
                .unwrap();
            let (_, d_time_in) = model
                .time
                .backward(&caches.time, &[(zt - prepared.z_time[i]) * inv_n])
                .unwrap();
            let inflow = &d_time_in[..d_time_in.len() - 1];
            let (tg, _) = model
                .dist
                .backward_from(&caches.dist, model.shared_layer(), inflow)
                .unwrap();
            dist_only.add_assign(&dg);
            time_only.add_assign(&tg);
            summed.add_assign(&dg);
            summed.add_assign(&tg);
        }
        let lhs = summed.to_vec();
        let rhs: Vec<f64> = dist_only
            .to_vec()
            .iter()
            .zip(time_only.to_vec())
            .map(|(a, b)| a + b)
            .collect();
        // equal up to summation order
        for (a, b) in lhs.iter().zip(&rhs) {
            assert!((a - b).abs() <= 1e-12 * a.abs().max(b.abs()).max(1.0));
        }
        // and the time term genuinely reaches the shared layers
        assert!(time_only.to_vec().iter().any(|&g| g != 0.0));
    }

    #[test]
    fn raw_loss_and_raw_feature_switches() {
        let (grid, timespec) = toy_city();
        let train = toy_features(12, 6);
        let cfg = TrainConfig {
            raw_loss: true,
            standardize_features: false,
            ..tiny_config()
        };
        let mut model: StnnModel<f64> =
            StnnModel::prepare(&train, grid, timespec, &cfg).unwrap();
        assert_eq!(model.feature_std(), &Standardizer::identity(5));
        assert_eq!(model.target_std(), &Standardizer::identity(2));
        // with raw targets a zeroed network predicts exactly zero, not the
        // target means
        for i in 0..model.dist.param_count() {
            model.dist.set_param(i, 0.0);
        }
        for i in 0..model.time.param_count() {
            model.time.set_param(i, 0.0);
        }
        let (pred, _) = model.forward_features(&train.features[0]).unwrap();
        assert_eq!(pred.distance_mi, 0.0);
        assert_eq!(pred.time_s, 0.0);
    }

    #[test]
    fn frozen_coupling_leaves_dist_module_on_the_dist_loss_only() {
        // with the path frozen, training the joint model must move the
        // distance module exactly as a distance-only objective would
        let train = toy_features(16, 14);
        let (grid, timespec) = toy_city();
        let cfg = TrainConfig {
            time_grad_into_dist: false,
            ..tiny_config()
        };
        let mut frozen: StnnModel<f64> =
            StnnModel::prepare(&train, grid.clone(), timespec, &cfg).unwrap();
        let mut coupled: StnnModel<f64> = StnnModel::prepare(
            &train,
            grid,
            timespec,
            &TrainConfig {
                time_grad_into_dist: true,
                ..cfg.clone()
            },
        )
        .unwrap();
        assert_eq!(frozen.dist, coupled.dist);
        train_joint(&mut frozen, &train, &cfg).unwrap();
        train_joint(
            &mut coupled,
            &train,
            &TrainConfig {
                time_grad_into_dist: true,
                ..cfg.clone()
            },
        )
        .unwrap();
        // the time path changes the distance module only when coupled
        assert_ne!(frozen.dist, coupled.dist);
        // both runs still move the time module
        assert_ne!(frozen.time, coupled.time);
    }

    #[test]
    fn predict_rejects_out_of_box_queries() {
        let train = toy_features(8, 5);
        let (grid, timespec) = toy_city();
        let model: StnnModel<f64> =
            StnnModel::prepare(&train, grid, timespec, &tiny_config()).unwrap();
        let err = model
            .predict((50.0, -73.98), (40.7, -74.0), 1_362_355_200)
            .unwrap_err();
        assert!(matches!(err, GeobinError::OutOfBounds { axis: "latitude", .. }));

        // same cells and bin -> identical predictions
        let a = model
            .predict((40.75001, -73.98001), (40.70001, -74.01001), 1_362_355_200)
            .unwrap();
        let b = model
            .predict((40.75002, -73.98002), (40.70002, -74.01002), 1_362_355_210)
            .unwrap();
        assert_eq!(a, b);
    }
}
