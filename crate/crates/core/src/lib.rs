//! Joint travel-time and travel-distance estimation for origin-destination
//! taxi queries.
//!
//! The pipeline: parse raw trip CSVs ([`trips`]), discretize coordinates and
//! pickup times into cells ([`geobin`]), then train either the joint
//! spatio-temporal network ([`stnn`]) — a distance-estimating MLP whose last
//! hidden activations feed a time-estimating MLP — or one of the comparison
//! models ([`baselines`]). [`metrics`] evaluates predictions (MAE, MRE,
//! MedAE, MedRE, R², error curves, ECDFs) and [`synthcity`] generates
//! synthetic trips with analytically known answers for end-to-end checks.
//!
//! The math core is generic over the floating-point type through
//! [`scalar::Scalar`]; the `*64` aliases below are the shipped defaults.
//!
//! ```
//! use stnn_core::prelude::*;
//!
//! let city = CityConfig::nyc_default();
//! let trips = synthcity::sample_trips(&city, 600, 7);
//! let (clean, _) = trips::apply_outlier_filters(trips, city.grid().bbox());
//! let (train, test) = trips::split_train_test(&clean, 0.2, 7).unwrap();
//!
//! let grid = city.grid().clone();
//! let timespec = *city.timespec();
//! let features = geobin::featurize_all(&train, &grid, &timespec).unwrap();
//! let config = TrainConfig { epochs: 2, dist_hidden: vec![8, 4], time_hidden: vec![8, 4], ..TrainConfig::default() };
//! let mut model: StnnModel64 = StnnModel::prepare(&features, grid, timespec, &config).unwrap();
//! stnn::train_joint(&mut model, &features, &config).unwrap();
//!
//! let eval = metrics::evaluate(&model, &test).unwrap();
//! assert!(eval.time.unwrap().mae.is_finite());
//! ```

pub mod baselines;
pub mod geobin;
pub mod linalg;
pub mod metrics;
pub mod neuralnet;
pub mod persist;
pub mod scalar;
pub mod stnn;
pub mod synthcity;
pub mod trips;

pub use scalar::Scalar;

pub use baselines::{BaselineKind, BaselineModel, LinearModel};
pub use geobin::{
    CellIndex, FeatureVector, FeaturizedSet, GridSpec, Standardizer, Targets, TimeSpec,
};
pub use metrics::{EvalReport, Evaluation, TripPredictor};
pub use neuralnet::{Activation, ForwardCache, Gradients, Mlp};
pub use persist::AnyModel;
pub use stnn::{JointPrediction, StnnModel, TrainConfig};
pub use synthcity::CityConfig;
pub use trips::{BoundingBox, RejectionReason, TripRecord};

/// 64-bit pipeline aliases (the shipped default precision).
pub type Mlp64 = neuralnet::Mlp<f64>;
pub type StnnModel64 = stnn::StnnModel<f64>;
pub type BaselineModel64 = baselines::BaselineModel<f64>;
pub type LinearModel64 = baselines::LinearModel<f64>;
pub type AnyModel64 = persist::AnyModel<f64>;
pub type Standardizer64 = geobin::Standardizer<f64>;

/// 32-bit variants for memory-constrained experiments.
pub type Mlp32 = neuralnet::Mlp<f32>;
pub type StnnModel32 = stnn::StnnModel<f32>;

/// Convenience imports for pipeline code.
pub mod prelude {
    pub use crate::baselines::{self, BaselineKind, BaselineModel};
    pub use crate::geobin::{self, FeatureVector, GridSpec, Standardizer, TimeSpec};
    pub use crate::metrics::{self, EvalReport, TripPredictor};
    pub use crate::neuralnet::{self, Activation, Mlp};
    pub use crate::persist::{self, AnyModel};
    pub use crate::scalar::Scalar;
    pub use crate::stnn::{self, StnnModel, TrainConfig};
    pub use crate::synthcity::{self, CityConfig};
    pub use crate::trips::{self, BoundingBox, TripRecord};
    pub use crate::{AnyModel64, BaselineModel64, Mlp64, StnnModel64};
}
