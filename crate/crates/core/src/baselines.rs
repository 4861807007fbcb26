//! Comparison models: linear regressions for time (LRT) and distance (LRD),
//! and the standalone TimeNN / DistNN networks.
//!
//! LRT and TimeNN see the four binned coordinates plus the time bin; LRD and
//! DistNN see the coordinates only. The networks reuse the joint model's
//! widths, activation, and optimizer settings so that score differences
//! isolate the architecture rather than tuning.

use thiserror::Error;

use crate::geobin::{featurize, FeaturizedSet, GeobinError, GridSpec, Standardizer, TimeSpec};
use crate::linalg::{self, LinalgError, Matrix};
use crate::metrics::{TripPrediction, TripPredictor};
use crate::neuralnet::{self, Mlp, NnError};
use crate::scalar::Scalar;
use crate::stnn::TrainConfig;
use crate::trips::TripRecord;

/// Default ridge term stabilizing the normal equations.
pub const DEFAULT_RIDGE: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum BaselineError {
    #[error("empty training set")]
    Empty,
    #[error("feature row has {got} entries, expected {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("normal equations: {0}")]
    Solve(#[from] LinalgError),
    #[error("network: {0}")]
    Nn(#[from] NnError),
    #[error("binning: {0}")]
    Geo(#[from] GeobinError),
    #[error("invalid configuration: {0}")]
    BadConfig(String),
}

/// Ordinary least squares with intercept, `y ≈ w·x + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel<S> {
    weights: Vec<S>,
    intercept: S,
}

impl<S: Scalar> LinearModel<S> {
    pub fn from_parts(weights: Vec<S>, intercept: S) -> Self {
        LinearModel { weights, intercept }
    }

    pub fn weights(&self) -> &[S] {
        &self.weights
    }

    pub fn intercept(&self) -> S {
        self.intercept
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }
}

/// Fits the ridge-stabilized least squares
/// `min Σ(y − w·x − b)² + ridge·‖w‖²` via the normal equations. The
/// intercept is never regularized, so training residuals still sum to zero.
pub fn fit_linear<S: Scalar>(
    xs: &[Vec<S>],
    ys: &[S],
    ridge: f64,
) -> Result<LinearModel<S>, BaselineError> {
    if xs.is_empty() || ys.is_empty() {
        return Err(BaselineError::Empty);
    }
    if xs.len() != ys.len() {
        return Err(BaselineError::DimensionMismatch {
            expected: xs.len(),
            got: ys.len(),
        });
    }
    let d = xs[0].len();
    // augmented system over [w, b]
    let mut ata = Matrix::<S>::zeros(d + 1, d + 1);
    let mut atb = vec![S::zero(); d + 1];
    let mut row = vec![S::zero(); d + 1];
    for (x, &y) in xs.iter().zip(ys) {
        if x.len() != d {
            return Err(BaselineError::DimensionMismatch {
                expected: d,
                got: x.len(),
            });
        }
        row[..d].copy_from_slice(x);
        row[d] = S::one();
        ata.add_outer(&row, &row);
        for (t, &r) in atb.iter_mut().zip(&row) {
            *t += r * y;
        }
    }
    let eps = S::of(ridge);
    for i in 0..d {
        let v = ata.get(i, i) + eps;
        ata.set(i, i, v);
    }
    let mut solution = linalg::solve(ata, atb)?;
    let intercept = solution.pop().unwrap();
    Ok(LinearModel {
        weights: solution,
        intercept,
    })
}

/// `y = w·x + b`
pub fn predict_linear<S: Scalar>(model: &LinearModel<S>, x: &[S]) -> Result<S, BaselineError> {
    if x.len() != model.weights.len() {
        return Err(BaselineError::DimensionMismatch {
            expected: model.weights.len(),
            got: x.len(),
        });
    }
    let dot: S = model.weights.iter().zip(x).map(|(&w, &v)| w * v).sum();
    Ok(dot + model.intercept)
}

/// Which comparison model a [`BaselineModel`] holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BaselineKind {
    Lrt,
    Lrd,
    TimeNn,
    DistNn,
}

impl BaselineKind {
    pub fn tag(self) -> &'static str {
        match self {
            BaselineKind::Lrt => "LRT",
            BaselineKind::Lrd => "LRD",
            BaselineKind::TimeNn => "TIMENN",
            BaselineKind::DistNn => "DISTNN",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Self> {
        match tag {
            "LRT" => Some(BaselineKind::Lrt),
            "LRD" => Some(BaselineKind::Lrd),
            "TIMENN" => Some(BaselineKind::TimeNn),
            "DISTNN" => Some(BaselineKind::DistNn),
            _ => None,
        }
    }

    /// Time models take the time bin as a fifth feature; distance models
    /// never see it.
    pub fn uses_time(self) -> bool {
        matches!(self, BaselineKind::Lrt | BaselineKind::TimeNn)
    }

    pub fn predicts_time(self) -> bool {
        self.uses_time()
    }

    pub fn is_linear(self) -> bool {
        matches!(self, BaselineKind::Lrt | BaselineKind::Lrd)
    }

    pub fn feature_dim(self) -> usize {
        if self.uses_time() {
            5
        } else {
            4
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum BaselineInner<S> {
    Linear(LinearModel<S>),
    Net(Mlp<S>),
}

/// A trained single-target comparison model, self-contained like the joint
/// model: grid, time discretization, standardizers, predictor.
#[derive(Debug, Clone, PartialEq)]
pub struct BaselineModel<S> {
    kind: BaselineKind,
    grid: GridSpec,
    timespec: TimeSpec,
    feature_std: Standardizer<S>,
    target_std: Standardizer<S>,
    inner: BaselineInner<S>,
}

impl<S: Scalar> BaselineModel<S> {
    pub fn new(
        kind: BaselineKind,
        grid: GridSpec,
        timespec: TimeSpec,
        feature_std: Standardizer<S>,
        target_std: Standardizer<S>,
        inner: BaselineInner<S>,
    ) -> Result<Self, BaselineError> {
        let expected = kind.feature_dim();
        let got = match &inner {
            BaselineInner::Linear(m) => m.dim(),
            BaselineInner::Net(m) => m.input_dim(),
        };
        if got != expected || feature_std.dim() != expected {
            return Err(BaselineError::DimensionMismatch { expected, got });
        }
        if target_std.dim() != 1 {
            return Err(BaselineError::DimensionMismatch {
                expected: 1,
                got: target_std.dim(),
            });
        }
        Ok(BaselineModel {
            kind,
            grid,
            timespec,
            feature_std,
            target_std,
            inner,
        })
    }

    pub fn kind(&self) -> BaselineKind {
        self.kind
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

    pub fn inner(&self) -> &BaselineInner<S> {
        &self.inner
    }

    /// Answers one query in the target's original units (seconds for time
    /// models, miles for distance models).
    pub fn predict(
        &self,
        origin: (f64, f64),
        dest: (f64, f64),
        pickup_epoch: i64,
    ) -> Result<S, GeobinError> {
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
        let raw: Vec<S> = if self.kind.uses_time() {
            fv.coord_time_row::<S>().to_vec()
        } else {
            fv.coord_row::<S>().to_vec()
        };
        let x = self
            .feature_std
            .apply(&raw)
            .expect("dimensions validated at construction");
        let z = match &self.inner {
            BaselineInner::Linear(m) => {
                predict_linear(m, &x).expect("dimensions validated at construction")
            }
            BaselineInner::Net(m) => {
                m.predict(&x).expect("dimensions validated at construction")[0]
            }
        };
        Ok(self.target_std.destandardize_component(0, z))
    }
}

fn training_rows<S: Scalar>(
    kind: BaselineKind,
    train: &FeaturizedSet,
) -> (Vec<Vec<S>>, Vec<S>) {
    let xs = if kind.uses_time() {
        train.coord_time_rows::<S>()
    } else {
        train.coord_rows::<S>()
    };
    let ys = if kind.predicts_time() {
        train.times::<S>()
    } else {
        train.distances::<S>()
    };
    (xs, ys)
}

/// Trains any comparison model. Linear kinds solve the normal equations
/// (empty loss history); network kinds run the shared SGD loop and return
/// per-epoch losses in standardized units.
pub fn fit_baseline<S: Scalar>(
    kind: BaselineKind,
    train: &FeaturizedSet,
    grid: GridSpec,
    timespec: TimeSpec,
    config: &TrainConfig,
) -> Result<(BaselineModel<S>, Vec<S>), BaselineError> {
    if train.is_empty() {
        return Err(BaselineError::Empty);
    }
    config
        .validate()
        .map_err(|e| BaselineError::BadConfig(e.to_string()))?;
    let (raw_xs, raw_ys) = training_rows::<S>(kind, train);
    let feature_std = if config.standardize_features {
        Standardizer::fit(&raw_xs)?
    } else {
        Standardizer::identity(kind.feature_dim())
    };
    let target_std = if config.raw_loss {
        Standardizer::identity(1)
    } else {
        let rows: Vec<Vec<S>> = raw_ys.iter().map(|&y| vec![y]).collect();
        Standardizer::fit(&rows)?
    };
    let xs = feature_std.apply_all(&raw_xs)?;
    let ys: Vec<Vec<S>> = raw_ys
        .iter()
        .map(|&y| vec![target_std.standardize_component(0, y)])
        .collect();

    let (inner, history) = if kind.is_linear() {
        let flat: Vec<S> = ys.iter().map(|v| v[0]).collect();
        (
            BaselineInner::Linear(fit_linear(&xs, &flat, DEFAULT_RIDGE)?),
            Vec::new(),
        )
    } else {
        let widths = if kind.predicts_time() {
            &config.time_hidden
        } else {
            &config.dist_hidden
        };
        let mut dims = vec![kind.feature_dim()];
        dims.extend(widths);
        dims.push(1);
        let mut net = Mlp::init(&dims, config.hidden_activation, config.seed)?;
        let history = neuralnet::train_epochs(
            &mut net,
            &xs,
            &ys,
            config.batch_size,
            S::of(config.learning_rate),
            config.epochs,
            config.seed,
        )?;
        (BaselineInner::Net(net), history)
    };
    let model = BaselineModel::new(kind, grid, timespec, feature_std, target_std, inner)?;
    Ok((model, history))
}

/// Standalone time network over coordinates + time bin.
pub fn train_timenn<S: Scalar>(
    train: &FeaturizedSet,
    grid: GridSpec,
    timespec: TimeSpec,
    config: &TrainConfig,
) -> Result<(BaselineModel<S>, Vec<S>), BaselineError> {
    fit_baseline(BaselineKind::TimeNn, train, grid, timespec, config)
}

/// Standalone distance network over coordinates only.
pub fn train_distnn<S: Scalar>(
    train: &FeaturizedSet,
    grid: GridSpec,
    timespec: TimeSpec,
    config: &TrainConfig,
) -> Result<(BaselineModel<S>, Vec<S>), BaselineError> {
    fit_baseline(BaselineKind::DistNn, train, grid, timespec, config)
}

impl<S: Scalar> TripPredictor for BaselineModel<S> {
    fn grid(&self) -> &GridSpec {
        &self.grid
    }

    fn timespec(&self) -> &TimeSpec {
        &self.timespec
    }

    fn predict_trip(&self, trip: &TripRecord) -> Result<TripPrediction, GeobinError> {
        let value = self
            .predict(
                (trip.origin_lat, trip.origin_lon),
                (trip.dest_lat, trip.dest_lon),
                trip.pickup_epoch,
            )?
            .as_f64();
        Ok(if self.kind.predicts_time() {
            TripPrediction {
                time_s: Some(value),
                distance_mi: None,
            }
        } else {
            TripPrediction {
                time_s: None,
                distance_mi: Some(value),
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn exact_hyperplane_is_recovered() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let w = [2.0, -1.0, 0.5];
        let b = 3.0;
        let xs: Vec<Vec<f64>> = (0..50)
            .map(|_| (0..3).map(|_| rng.gen_range(-2.0..2.0)).collect())
            .collect();
        let ys: Vec<f64> = xs
            .iter()
            .map(|x| x.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() + b)
            .collect();
        let model = fit_linear(&xs, &ys, DEFAULT_RIDGE).unwrap();
        for (got, want) in model.weights().iter().zip(&w) {
            assert!((got - want).abs() < 1e-9);
        }
        assert!((model.intercept() - b).abs() < 1e-9);
    }

    #[test]
    fn single_sample_is_absorbed_by_intercept() {
        let model = fit_linear::<f64>(&[vec![4.0, -1.0]], &[7.5], DEFAULT_RIDGE).unwrap();
        let pred = predict_linear(&model, &[4.0, -1.0]).unwrap();
        assert!((pred - 7.5).abs() < 1e-9);
    }

    #[test]
    fn matches_gradient_descent_on_the_same_objective() {
        // independent oracle: plain full-batch gradient descent on the
        // ridge objective, run to convergence
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let xs: Vec<Vec<f64>> = (0..40)
            .map(|_| (0..2).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let ys: Vec<f64> = xs
            .iter()
            .map(|x| 1.5 * x[0] - 0.7 * x[1] + 0.3 + 0.01 * (x[0] * x[1]))
            .collect();
        let ridge = 1e-8;
        let model = fit_linear(&xs, &ys, ridge).unwrap();

        let mut w = [0.0f64; 2];
        let mut b = 0.0f64;
        let lr = 0.05;
        for _ in 0..200_000 {
            let mut gw = [ridge * 2.0 * w[0], ridge * 2.0 * w[1]];
            let mut gb = 0.0;
            for (x, &y) in xs.iter().zip(&ys) {
                let r = w[0] * x[0] + w[1] * x[1] + b - y;
                gw[0] += 2.0 * r * x[0];
                gw[1] += 2.0 * r * x[1];
                gb += 2.0 * r;
            }
            w[0] -= lr * gw[0] / xs.len() as f64;
            w[1] -= lr * gw[1] / xs.len() as f64;
            b -= lr * gb / xs.len() as f64;
        }
        assert!((model.weights()[0] - w[0]).abs() < 1e-6);
        assert!((model.weights()[1] - w[1]).abs() < 1e-6);
        assert!((model.intercept() - b).abs() < 1e-6);
    }

    #[test]
    fn training_residuals_sum_to_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let xs: Vec<Vec<f64>> = (0..30)
            .map(|_| (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let ys: Vec<f64> = xs.iter().map(|x| x[0] - x[1] * x[2] + 0.5).collect();
        let model = fit_linear(&xs, &ys, DEFAULT_RIDGE).unwrap();
        let residual_sum: f64 = xs
            .iter()
            .zip(&ys)
            .map(|(x, &y)| y - predict_linear(&model, x).unwrap())
            .sum();
        assert!(residual_sum.abs() < 1e-9);
    }

    #[test]
    fn perturbing_the_fit_increases_the_objective() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let xs: Vec<Vec<f64>> = (0..25)
            .map(|_| (0..2).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let ys: Vec<f64> = xs.iter().map(|x| 2.0 * x[0] + x[1] * x[1]).collect();
        let ridge = 1e-8;
        let model = fit_linear(&xs, &ys, ridge).unwrap();
        let objective = |w: &[f64], b: f64| -> f64 {
            let fit: f64 = xs
                .iter()
                .zip(&ys)
                .map(|(x, &y)| {
                    let p = w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + b;
                    (y - p) * (y - p)
                })
                .sum();
            fit + ridge * w.iter().map(|v| v * v).sum::<f64>()
        };
        let base = objective(model.weights(), model.intercept());
        for trial in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(100 + trial);
            let dw: Vec<f64> = (0..2).map(|_| rng.gen_range(-1e-3..1e-3)).collect();
            let db: f64 = rng.gen_range(-1e-3..1e-3);
            let w2: Vec<f64> = model.weights().iter().zip(&dw).map(|(a, b)| a + b).collect();
            assert!(objective(&w2, model.intercept() + db) >= base);
        }
    }

    #[test]
    fn predict_linear_examples() {
        let constant = LinearModel::from_parts(vec![0.0; 3], 5.0);
        assert_eq!(predict_linear(&constant, &[9.0, -2.0, 4.4]).unwrap(), 5.0);
        let pick_first = LinearModel::from_parts(vec![1.0, 0.0, 0.0, 0.0, 0.0], 0.0);
        assert_eq!(
            predict_linear(&pick_first, &[3.0, 7.0, 1.0, 2.0, 9.0]).unwrap(),
            3.0
        );
        assert!(predict_linear(&pick_first, &[1.0]).is_err());
    }

    #[test]
    fn kind_dimensions_match_the_protocol() {
        assert_eq!(BaselineKind::Lrt.feature_dim(), 5);
        assert_eq!(BaselineKind::Lrd.feature_dim(), 4);
        assert_eq!(BaselineKind::TimeNn.feature_dim(), 5);
        assert_eq!(BaselineKind::DistNn.feature_dim(), 4);
        for kind in [
            BaselineKind::Lrt,
            BaselineKind::Lrd,
            BaselineKind::TimeNn,
            BaselineKind::DistNn,
        ] {
            assert_eq!(BaselineKind::from_tag(kind.tag()), Some(kind));
        }
        assert_eq!(BaselineKind::from_tag("BOGUS"), None);
    }
}
