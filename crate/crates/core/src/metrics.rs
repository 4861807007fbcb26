//! Regression evaluation: MAE, MRE, MedAE, MedRE, R², binned error curves,
//! empirical CDFs, and a test-set evaluation driver.

use std::cmp::Ordering;

use thiserror::Error;

use crate::geobin::{featurize, FeatureVector, GeobinError, GridSpec, TimeSpec};
use crate::scalar::Scalar;
use crate::trips::TripRecord;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("empty input")]
    Empty,
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("relative error needs strictly positive ground truth")]
    NonPositiveTargets,
    #[error("MRE needs a positive target sum, got {0}")]
    NonPositiveTargetSum(f64),
    #[error("R² is undefined for constant ground truth")]
    ConstantTargets,
    #[error("R² needs at least two samples")]
    TooFewSamples,
    #[error("non-finite value in input")]
    NonFinite,
    #[error("bin width must be positive and finite, got {0}")]
    BadBinWidth(f64),
    #[error("prediction failed: {0}")]
    Predict(#[from] GeobinError),
}

fn check_pair<S: Scalar>(y: &[S], f: &[S]) -> Result<(), MetricsError> {
    if y.is_empty() {
        return Err(MetricsError::Empty);
    }
    if y.len() != f.len() {
        return Err(MetricsError::LengthMismatch(y.len(), f.len()));
    }
    Ok(())
}

/// Mean absolute error `Σ|y_i − f_i| / N`.
pub fn mae<S: Scalar>(y: &[S], f: &[S]) -> Result<S, MetricsError> {
    check_pair(y, f)?;
    let sum: S = y.iter().zip(f).map(|(&a, &b)| (a - b).abs()).sum();
    Ok(sum / S::of(y.len() as f64))
}

/// Mean relative error `Σ|y_i − f_i| / Σ y_i`.
pub fn mre<S: Scalar>(y: &[S], f: &[S]) -> Result<S, MetricsError> {
    check_pair(y, f)?;
    let denom: S = y.iter().copied().sum();
    if !(denom > S::zero()) {
        return Err(MetricsError::NonPositiveTargetSum(denom.as_f64()));
    }
    let num: S = y.iter().zip(f).map(|(&a, &b)| (a - b).abs()).sum();
    Ok(num / denom)
}

fn median<S: Scalar>(values: &mut [S]) -> Result<S, MetricsError> {
    if values.iter().any(|v| !v.is_finite()) {
        return Err(MetricsError::NonFinite);
    }
    values.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap_or(Ordering::Equal));
    let n = values.len();
    if n % 2 == 1 {
        Ok(values[n / 2])
    } else {
        // even length: mean of the two central order statistics
        Ok((values[n / 2 - 1] + values[n / 2]) / S::of(2.0))
    }
}

/// Median absolute error.
pub fn medae<S: Scalar>(y: &[S], f: &[S]) -> Result<S, MetricsError> {
    check_pair(y, f)?;
    let mut residuals: Vec<S> = y.iter().zip(f).map(|(&a, &b)| (a - b).abs()).collect();
    median(&mut residuals)
}

/// Median relative error; every `y_i` must be strictly positive.
pub fn medre<S: Scalar>(y: &[S], f: &[S]) -> Result<S, MetricsError> {
    check_pair(y, f)?;
    if y.iter().any(|&v| !(v > S::zero())) {
        return Err(MetricsError::NonPositiveTargets);
    }
    let mut ratios: Vec<S> = y.iter().zip(f).map(|(&a, &b)| (a - b).abs() / a).collect();
    median(&mut ratios)
}

/// Coefficient of determination `1 − Σ(y−f)² / Σ(y−ȳ)²`, in `(−∞, 1]`.
pub fn r2<S: Scalar>(y: &[S], f: &[S]) -> Result<S, MetricsError> {
    check_pair(y, f)?;
    if y.len() < 2 {
        return Err(MetricsError::TooFewSamples);
    }
    let n = S::of(y.len() as f64);
    let mean: S = y.iter().copied().sum::<S>() / n;
    let ss_tot: S = y
        .iter()
        .map(|&v| {
            let d = v - mean;
            d * d
        })
        .sum();
    if !(ss_tot > S::zero()) {
        return Err(MetricsError::ConstantTargets);
    }
    let ss_res: S = y
        .iter()
        .zip(f)
        .map(|(&a, &b)| {
            let d = a - b;
            d * d
        })
        .sum();
    Ok(S::one() - ss_res / ss_tot)
}

/// All five metrics over one target.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub mae: f64,
    pub mre: f64,
    pub medae: f64,
    pub medre: f64,
    pub r2: f64,
    pub n: usize,
    pub units: String,
}

/// Computes the full report; every metric's preconditions must hold.
pub fn eval_report(y: &[f64], f: &[f64], units: &str) -> Result<EvalReport, MetricsError> {
    Ok(EvalReport {
        mae: mae(y, f)?,
        mre: mre(y, f)?,
        medae: medae(y, f)?,
        medre: medre(y, f)?,
        r2: r2(y, f)?,
        n: y.len(),
        units: units.to_string(),
    })
}

/// Per-bin MAE over an independent variable, e.g. error versus actual
/// travel time. Empty bins are kept (count 0, MAE `None`) so curves from
/// different models align.
#[derive(Debug, Clone, PartialEq)]
pub struct CurveSeries {
    /// `len = bins + 1`; bin `k` covers `[edges[k], edges[k+1])`.
    pub edges: Vec<f64>,
    pub mae: Vec<Option<f64>>,
    pub count: Vec<usize>,
}

impl CurveSeries {
    pub fn bins(&self) -> usize {
        self.count.len()
    }
}

/// Bins samples by `by` and reports the MAE of `(y, f)` inside each bin.
pub fn binned_mae_curve(
    y: &[f64],
    f: &[f64],
    by: &[f64],
    bin_width: f64,
) -> Result<CurveSeries, MetricsError> {
    check_pair(y, f)?;
    if by.len() != y.len() {
        return Err(MetricsError::LengthMismatch(y.len(), by.len()));
    }
    if !(bin_width > 0.0) || !bin_width.is_finite() {
        return Err(MetricsError::BadBinWidth(bin_width));
    }
    if by.iter().any(|v| !v.is_finite()) {
        return Err(MetricsError::NonFinite);
    }
    let min = by.iter().copied().fold(f64::INFINITY, f64::min);
    let max = by.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let start = (min / bin_width).floor() * bin_width;
    let nbins = (((max - start) / bin_width).floor() as usize) + 1;
    let mut abs_sum = vec![0.0f64; nbins];
    let mut count = vec![0usize; nbins];
    for ((&yi, &fi), &bi) in y.iter().zip(f).zip(by) {
        let k = (((bi - start) / bin_width).floor() as usize).min(nbins - 1);
        abs_sum[k] += (yi - fi).abs();
        count[k] += 1;
    }
    let edges: Vec<f64> = (0..=nbins).map(|k| start + k as f64 * bin_width).collect();
    let mae = abs_sum
        .iter()
        .zip(&count)
        .map(|(&s, &c)| if c > 0 { Some(s / c as f64) } else { None })
        .collect();
    Ok(CurveSeries { edges, mae, count })
}

/// Empirical CDF: sorted `(value, fraction ≤ value)` pairs; duplicates share
/// the fraction of their last occurrence and the final fraction is 1.
pub fn ecdf(values: &[f64]) -> Result<Vec<(f64, f64)>, MetricsError> {
    if values.is_empty() {
        return Err(MetricsError::Empty);
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(MetricsError::NonFinite);
    }
    let mut sorted = values.to_vec();
    sorted.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap_or(Ordering::Equal));
    let n = sorted.len();
    let mut out = Vec::with_capacity(n);
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && sorted[j + 1] == sorted[i] {
            j += 1;
        }
        let fraction = (j + 1) as f64 / n as f64;
        for _ in i..=j {
            out.push((sorted[i], fraction));
        }
        i = j + 1;
    }
    Ok(out)
}

/// Prediction of a trained model for one trip; a single-target model leaves
/// the other field `None`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TripPrediction {
    pub time_s: Option<f64>,
    pub distance_mi: Option<f64>,
}

/// Anything that can answer an origin/destination/time query over a grid.
pub trait TripPredictor: Sync {
    fn grid(&self) -> &GridSpec;
    fn timespec(&self) -> &TimeSpec;
    fn predict_trip(&self, trip: &TripRecord) -> Result<TripPrediction, GeobinError>;
}

/// One dumped prediction row.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRow {
    pub y_time_s: f64,
    pub pred_time_s: Option<f64>,
    pub y_dist_mi: f64,
    pub pred_dist_mi: Option<f64>,
    pub time_bin: usize,
    pub features: FeatureVector,
}

/// All predictions over a test set, in input order.
#[derive(Debug, Clone, Default)]
pub struct PredictionSet {
    pub rows: Vec<PredictionRow>,
}

impl PredictionSet {
    /// `(y, f)` pairs for the time target, if predicted.
    pub fn time_pairs(&self) -> (Vec<f64>, Vec<f64>) {
        let mut y = Vec::new();
        let mut f = Vec::new();
        for row in &self.rows {
            if let Some(p) = row.pred_time_s {
                y.push(row.y_time_s);
                f.push(p);
            }
        }
        (y, f)
    }

    pub fn distance_pairs(&self) -> (Vec<f64>, Vec<f64>) {
        let mut y = Vec::new();
        let mut f = Vec::new();
        for row in &self.rows {
            if let Some(p) = row.pred_dist_mi {
                y.push(row.y_dist_mi);
                f.push(p);
            }
        }
        (y, f)
    }

    /// CSV dump: truth, prediction, time bin, and the raw features, so any
    /// external tool can recompute every metric.
    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(
            w,
            "y_true_time_s,y_pred_time_s,y_true_dist_mi,y_pred_dist_mi,time_bin,origin_lat_bin,origin_lon_bin,dest_lat_bin,dest_lon_bin"
        )?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for row in &self.rows {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{}",
                row.y_time_s,
                opt(row.pred_time_s),
                row.y_dist_mi,
                opt(row.pred_dist_mi),
                row.time_bin,
                row.features.origin_lat_bin,
                row.features.origin_lon_bin,
                row.features.dest_lat_bin,
                row.features.dest_lon_bin,
            )?;
        }
        Ok(())
    }
}

/// Reports per target plus the raw predictions behind them.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub time: Option<EvalReport>,
    pub distance: Option<EvalReport>,
    pub predictions: PredictionSet,
}

/// Runs the predictor over a test set and computes the full report for each
/// predicted target.
pub fn evaluate(
    predictor: &dyn TripPredictor,
    trips: &[TripRecord],
) -> Result<Evaluation, MetricsError> {
    evaluate_parallel(predictor, trips, 1)
}

/// The prediction pass alone, in input order.
pub fn predict_set(
    predictor: &dyn TripPredictor,
    trips: &[TripRecord],
) -> Result<PredictionSet, MetricsError> {
    predict_set_parallel(predictor, trips, 1)
}

/// [`predict_set`] fanned out over `workers` threads. Predictions are pure
/// per trip and reassembled in input order, so the result is byte-identical
/// for any worker count.
pub fn predict_set_parallel(
    predictor: &dyn TripPredictor,
    trips: &[TripRecord],
    workers: usize,
) -> Result<PredictionSet, MetricsError> {
    if trips.is_empty() {
        return Err(MetricsError::Empty);
    }
    let workers = workers.max(1).min(trips.len());
    let chunk_len = trips.len().div_ceil(workers);
    let results: Vec<Result<Vec<PredictionRow>, MetricsError>> = std::thread::scope(|scope| {
        let handles: Vec<_> = trips
            .chunks(chunk_len)
            .map(|chunk| scope.spawn(move || predict_chunk(predictor, chunk)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("prediction worker panicked"))
            .collect()
    });
    let mut rows = Vec::with_capacity(trips.len());
    for r in results {
        rows.extend(r?);
    }
    Ok(PredictionSet { rows })
}

/// [`evaluate`] with the prediction pass fanned out over `workers` threads.
pub fn evaluate_parallel(
    predictor: &dyn TripPredictor,
    trips: &[TripRecord],
    workers: usize,
) -> Result<Evaluation, MetricsError> {
    let predictions = predict_set_parallel(predictor, trips, workers)?;
    let (ty, tf) = predictions.time_pairs();
    let time = if ty.is_empty() {
        None
    } else {
        Some(eval_report(&ty, &tf, "seconds")?)
    };
    let (dy, df) = predictions.distance_pairs();
    let distance = if dy.is_empty() {
        None
    } else {
        Some(eval_report(&dy, &df, "miles")?)
    };
    Ok(Evaluation {
        time,
        distance,
        predictions,
    })
}

fn predict_chunk(
    predictor: &dyn TripPredictor,
    trips: &[TripRecord],
) -> Result<Vec<PredictionRow>, MetricsError> {
    let grid = predictor.grid();
    let timespec = predictor.timespec();
    let mut rows = Vec::with_capacity(trips.len());
    for trip in trips {
        let (features, targets) = featurize(trip, grid, timespec)?;
        let pred = predictor.predict_trip(trip)?;
        rows.push(PredictionRow {
            y_time_s: targets.time_s,
            pred_time_s: pred.time_s,
            y_dist_mi: targets.distance_mi,
            pred_dist_mi: pred.distance_mi,
            time_bin: features.time_bin,
            features,
        });
    }
    Ok(rows)
}
