//! Discretization of GPS coordinates into square metric cells and of
//! timestamps into time-of-day bins, plus feature extraction.
//!
//! A grid cell is identified by its lower-left corner; all points inside a
//! cell share that corner as their binned coordinate. Time-of-day is binned
//! into fixed-length cells with weekend timestamps offset by one day's worth
//! of seconds, so weekday and weekend bins never collide (288 total bins at
//! the default 10-minute cell).

use thiserror::Error;

use crate::scalar::Scalar;
use crate::trips::{BoundingBox, TripRecord};

/// Meters per degree of latitude (equirectangular approximation).
pub const METERS_PER_DEG_LAT: f64 = 111_320.0;
/// Meters in one statute mile.
pub const METERS_PER_MILE: f64 = 1_609.344;
/// Seconds in one day.
pub const DAY_SECONDS: u32 = 86_400;

// Guard added (in cell units) before flooring so that a cell corner bins
// back into its own cell despite rounding in the degree<->cell conversion.
const BIN_GUARD: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum GeobinError {
    #[error("{axis} {value} outside [{min}, {max})")]
    OutOfBounds {
        axis: &'static str,
        value: f64,
        min: f64,
        max: f64,
    },
    #[error("cell index ({lat_idx}, {lon_idx}) outside grid of {lat_cells}x{lon_cells} cells")]
    BadIndex {
        lat_idx: usize,
        lon_idx: usize,
        lat_cells: usize,
        lon_cells: usize,
    },
    #[error("cell size must be a positive finite number of meters, got {0}")]
    BadCellSize(f64),
    #[error("time cell of {0} s must be positive and divide the 86400 s day")]
    BadTimeCell(u32),
    #[error("empty feature set")]
    Empty,
    #[error("feature row has {got} entries, expected {expected}")]
    DimensionMismatch { expected: usize, got: usize },
}

/// Square-cell grid over a bounding box.
///
/// Degrees convert to meters with a fixed latitude scale and a longitude
/// scale anchored at the box's midpoint latitude; at city scale the
/// resulting distortion is far below one cell.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    bbox: BoundingBox,
    cell_size_m: f64,
    meters_per_deg_lon: f64,
    deg_per_cell_lat: f64,
    deg_per_cell_lon: f64,
    lat_cells: usize,
    lon_cells: usize,
}

impl GridSpec {
    pub fn new(bbox: BoundingBox, cell_size_m: f64) -> Result<Self, GeobinError> {
        if !(cell_size_m > 0.0) || !cell_size_m.is_finite() {
            return Err(GeobinError::BadCellSize(cell_size_m));
        }
        let meters_per_deg_lon = METERS_PER_DEG_LAT * bbox.mid_lat().to_radians().cos();
        let deg_per_cell_lat = cell_size_m / METERS_PER_DEG_LAT;
        let deg_per_cell_lon = cell_size_m / meters_per_deg_lon;
        let cells = |extent_deg: f64, deg_per_cell: f64| -> usize {
            ((extent_deg / deg_per_cell).ceil() as usize).max(1)
        };
        Ok(GridSpec {
            bbox,
            cell_size_m,
            meters_per_deg_lon,
            deg_per_cell_lat,
            deg_per_cell_lon,
            lat_cells: cells(bbox.lat_max - bbox.lat_min, deg_per_cell_lat),
            lon_cells: cells(bbox.lon_max - bbox.lon_min, deg_per_cell_lon),
        })
    }

    pub fn bbox(&self) -> &BoundingBox {
        &self.bbox
    }

    pub fn cell_size_m(&self) -> f64 {
        self.cell_size_m
    }

    pub fn lat_cells(&self) -> usize {
        self.lat_cells
    }

    pub fn lon_cells(&self) -> usize {
        self.lon_cells
    }

    pub fn meters_per_deg_lat(&self) -> f64 {
        METERS_PER_DEG_LAT
    }

    pub fn meters_per_deg_lon(&self) -> f64 {
        self.meters_per_deg_lon
    }

    fn check_inside(&self, lat: f64, lon: f64) -> Result<(), GeobinError> {
        if !(lat >= self.bbox.lat_min && lat < self.bbox.lat_max) {
            return Err(GeobinError::OutOfBounds {
                axis: "latitude",
                value: lat,
                min: self.bbox.lat_min,
                max: self.bbox.lat_max,
            });
        }
        if !(lon >= self.bbox.lon_min && lon < self.bbox.lon_max) {
            return Err(GeobinError::OutOfBounds {
                axis: "longitude",
                value: lon,
                min: self.bbox.lon_min,
                max: self.bbox.lon_max,
            });
        }
        Ok(())
    }
}

/// Zero-based cell coordinates within a [`GridSpec`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct CellIndex {
    pub lat_idx: usize,
    pub lon_idx: usize,
}

/// Bins a point into its cell: `idx = floor((coord - min) * meters_per_deg /
/// cell_size)` along each axis. Points on the max edges are out of bounds.
pub fn bin_location(grid: &GridSpec, lat: f64, lon: f64) -> Result<CellIndex, GeobinError> {
    grid.check_inside(lat, lon)?;
    let lat_idx = ((lat - grid.bbox.lat_min) / grid.deg_per_cell_lat + BIN_GUARD).floor() as usize;
    let lon_idx = ((lon - grid.bbox.lon_min) / grid.deg_per_cell_lon + BIN_GUARD).floor() as usize;
    Ok(CellIndex {
        lat_idx: lat_idx.min(grid.lat_cells - 1),
        lon_idx: lon_idx.min(grid.lon_cells - 1),
    })
}

/// Lower-left corner of a cell, in degrees.
pub fn cell_corner(grid: &GridSpec, idx: CellIndex) -> Result<(f64, f64), GeobinError> {
    if idx.lat_idx >= grid.lat_cells || idx.lon_idx >= grid.lon_cells {
        return Err(GeobinError::BadIndex {
            lat_idx: idx.lat_idx,
            lon_idx: idx.lon_idx,
            lat_cells: grid.lat_cells,
            lon_cells: grid.lon_cells,
        });
    }
    Ok((
        grid.bbox.lat_min + idx.lat_idx as f64 * grid.deg_per_cell_lat,
        grid.bbox.lon_min + idx.lon_idx as f64 * grid.deg_per_cell_lon,
    ))
}

/// Time-of-day discretization. `cell_seconds` must divide the day evenly;
/// total bins = 2 * 86400 / cell_seconds (weekday range then weekend range).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TimeSpec {
    cell_seconds: u32,
}

impl TimeSpec {
    pub fn new(cell_seconds: u32) -> Result<Self, GeobinError> {
        if cell_seconds == 0 || DAY_SECONDS % cell_seconds != 0 {
            return Err(GeobinError::BadTimeCell(cell_seconds));
        }
        Ok(TimeSpec { cell_seconds })
    }

    pub fn cell_seconds(&self) -> u32 {
        self.cell_seconds
    }

    pub fn bins_per_day(&self) -> usize {
        (DAY_SECONDS / self.cell_seconds) as usize
    }

    pub fn total_bins(&self) -> usize {
        2 * self.bins_per_day()
    }
}

impl Default for TimeSpec {
    /// 10-minute cells: 144 weekday bins plus 144 weekend bins.
    fn default() -> Self {
        TimeSpec { cell_seconds: 600 }
    }
}

/// Bins a pickup timestamp. Weekday (Mon-Fri) bins are
/// `floor(seconds_into_day / cell)`; weekend timestamps are offset by a full
/// day of seconds first, landing in the disjoint upper half of the range.
pub fn bin_time(spec: &TimeSpec, pickup_epoch: i64) -> usize {
    let days = pickup_epoch.div_euclid(DAY_SECONDS as i64);
    let secs_into_day = pickup_epoch.rem_euclid(DAY_SECONDS as i64) as u32;
    // 1970-01-01 was a Thursday; index days so Monday = 0.
    let weekday_idx = (days + 3).rem_euclid(7);
    let weekend = weekday_idx >= 5;
    let mut bin = (secs_into_day / spec.cell_seconds) as usize;
    if weekend {
        bin += spec.bins_per_day();
    }
    bin
}

/// Model input for one trip: binned corner coordinates of both endpoints
/// plus the time bin.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureVector {
    pub origin_lat_bin: f64,
    pub origin_lon_bin: f64,
    pub dest_lat_bin: f64,
    pub dest_lon_bin: f64,
    pub time_bin: usize,
}

impl FeatureVector {
    /// The four coordinate features followed by the time bin as a scalar.
    pub fn coord_time_row<S: Scalar>(&self) -> [S; 5] {
        [
            S::of(self.origin_lat_bin),
            S::of(self.origin_lon_bin),
            S::of(self.dest_lat_bin),
            S::of(self.dest_lon_bin),
            S::of(self.time_bin as f64),
        ]
    }

    /// Coordinate features only (the distance models never see time).
    pub fn coord_row<S: Scalar>(&self) -> [S; 4] {
        [
            S::of(self.origin_lat_bin),
            S::of(self.origin_lon_bin),
            S::of(self.dest_lat_bin),
            S::of(self.dest_lon_bin),
        ]
    }
}

/// Regression targets carried alongside a feature vector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Targets {
    pub distance_mi: f64,
    pub time_s: f64,
}

/// Builds the feature vector and targets for one trip.
pub fn featurize(
    trip: &TripRecord,
    grid: &GridSpec,
    timespec: &TimeSpec,
) -> Result<(FeatureVector, Targets), GeobinError> {
    let origin = bin_location(grid, trip.origin_lat, trip.origin_lon)?;
    let dest = bin_location(grid, trip.dest_lat, trip.dest_lon)?;
    let (olat, olon) = cell_corner(grid, origin)?;
    let (dlat, dlon) = cell_corner(grid, dest)?;
    Ok((
        FeatureVector {
            origin_lat_bin: olat,
            origin_lon_bin: olon,
            dest_lat_bin: dlat,
            dest_lon_bin: dlon,
            time_bin: bin_time(timespec, trip.pickup_epoch),
        },
        Targets {
            distance_mi: trip.travel_distance_mi,
            time_s: trip.travel_time_s,
        },
    ))
}

/// Featurized trips, kept in input order.
#[derive(Debug, Clone, Default)]
pub struct FeaturizedSet {
    pub features: Vec<FeatureVector>,
    pub targets: Vec<Targets>,
}

impl FeaturizedSet {
    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn coord_time_rows<S: Scalar>(&self) -> Vec<Vec<S>> {
        self.features
            .iter()
            .map(|f| f.coord_time_row::<S>().to_vec())
            .collect()
    }

    pub fn coord_rows<S: Scalar>(&self) -> Vec<Vec<S>> {
        self.features
            .iter()
            .map(|f| f.coord_row::<S>().to_vec())
            .collect()
    }

    pub fn distances<S: Scalar>(&self) -> Vec<S> {
        self.targets.iter().map(|t| S::of(t.distance_mi)).collect()
    }

    pub fn times<S: Scalar>(&self) -> Vec<S> {
        self.targets.iter().map(|t| S::of(t.time_s)).collect()
    }
}

/// Featurizes a batch of trips; fails on the first out-of-box endpoint.
pub fn featurize_all(
    trips: &[TripRecord],
    grid: &GridSpec,
    timespec: &TimeSpec,
) -> Result<FeaturizedSet, GeobinError> {
    let mut set = FeaturizedSet {
        features: Vec::with_capacity(trips.len()),
        targets: Vec::with_capacity(trips.len()),
    };
    for trip in trips {
        let (fv, t) = featurize(trip, grid, timespec)?;
        set.features.push(fv);
        set.targets.push(t);
    }
    Ok(set)
}

/// Per-dimension z-scoring fit on a training set (population statistics).
/// A dimension with zero spread keeps std 1 so it maps to zero.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer<S> {
    means: Vec<S>,
    stds: Vec<S>,
}

impl<S: Scalar> Standardizer<S> {
    pub fn fit(rows: &[Vec<S>]) -> Result<Self, GeobinError> {
        if rows.is_empty() {
            return Err(GeobinError::Empty);
        }
        let dim = rows[0].len();
        let n = S::of(rows.len() as f64);
        let mut means = vec![S::zero(); dim];
        for row in rows {
            if row.len() != dim {
                return Err(GeobinError::DimensionMismatch {
                    expected: dim,
                    got: row.len(),
                });
            }
            for (m, v) in means.iter_mut().zip(row) {
                *m += *v;
            }
        }
        for m in means.iter_mut() {
            *m = *m / n;
        }
        let mut stds = vec![S::zero(); dim];
        for row in rows {
            for ((s, v), m) in stds.iter_mut().zip(row).zip(&means) {
                let d = *v - *m;
                *s += d * d;
            }
        }
        for s in stds.iter_mut() {
            *s = (*s / n).sqrt();
            if !(*s > S::zero()) {
                *s = S::one();
            }
        }
        Ok(Standardizer { means, stds })
    }

    /// Pass-through standardizer (means 0, stds 1).
    pub fn identity(dim: usize) -> Self {
        Standardizer {
            means: vec![S::zero(); dim],
            stds: vec![S::one(); dim],
        }
    }

    /// Rebuilds from stored statistics (model loading).
    pub fn from_stats(means: Vec<S>, stds: Vec<S>) -> Result<Self, GeobinError> {
        if means.is_empty() || means.len() != stds.len() {
            return Err(GeobinError::DimensionMismatch {
                expected: means.len(),
                got: stds.len(),
            });
        }
        Ok(Standardizer { means, stds })
    }

    pub fn dim(&self) -> usize {
        self.means.len()
    }

    pub fn means(&self) -> &[S] {
        &self.means
    }

    pub fn stds(&self) -> &[S] {
        &self.stds
    }

    pub fn apply(&self, row: &[S]) -> Result<Vec<S>, GeobinError> {
        if row.len() != self.dim() {
            return Err(GeobinError::DimensionMismatch {
                expected: self.dim(),
                got: row.len(),
            });
        }
        Ok(row
            .iter()
            .zip(self.means.iter().zip(&self.stds))
            .map(|(v, (m, s))| (*v - *m) / *s)
            .collect())
    }

    pub fn apply_all(&self, rows: &[Vec<S>]) -> Result<Vec<Vec<S>>, GeobinError> {
        rows.iter().map(|r| self.apply(r)).collect()
    }

    /// Standardizes one component.
    pub fn standardize_component(&self, i: usize, v: S) -> S {
        (v - self.means[i]) / self.stds[i]
    }

    /// Undoes the z-scoring of one component.
    pub fn destandardize_component(&self, i: usize, v: S) -> S {
        v * self.stds[i] + self.means[i]
    }
}
