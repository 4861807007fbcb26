//! Trip ingestion: CSV parsing, outlier rejection, train/test splits, and a
//! binary trip cache.
//!
//! Parsing is streaming — rows are handed out one at a time in file order and
//! a malformed row never aborts the run. Filtering is a total function that
//! partitions its input into clean records and `(record, reason)` rejects.

use std::io::{Read, Seek, SeekFrom, Write};

use chrono::NaiveDateTime;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

/// Timestamp layout used by the trip CSVs ("YYYY-MM-DD HH:MM:SS").
pub const DATETIME_FORMAT: &str = "%Y-%m-%d %H:%M:%S";

/// Magic bytes opening a binary trip cache.
pub const TRIP_CACHE_MAGIC: &[u8; 4] = b"STTR";
/// Current trip cache format version.
pub const TRIP_CACHE_VERSION: u16 = 1;

const TRIP_RECORD_BYTES: usize = 64;

#[derive(Debug, Error)]
pub enum TripsError {
    #[error("missing required column `{0}` in CSV header")]
    MissingColumn(String),
    #[error("invalid bounding box: {0}")]
    BadBox(String),
    #[error("empty trip set")]
    Empty,
    #[error("test fraction {0} outside (0, 1)")]
    BadFraction(f64),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("trip cache: {0}")]
    Cache(String),
}

/// One taxi trip: endpoints, pickup time, observed travel time and distance.
#[derive(Debug, Clone, PartialEq)]
pub struct TripRecord {
    pub origin_lat: f64,
    pub origin_lon: f64,
    pub dest_lat: f64,
    pub dest_lon: f64,
    /// Seconds since the Unix epoch, interpreting the CSV timestamp as
    /// UTC-naive local time.
    pub pickup_epoch: i64,
    pub travel_time_s: f64,
    pub travel_distance_mi: f64,
    pub passenger_count: i64,
}

/// Geographic box of valid coordinates, half-open on the max edges.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundingBox {
    pub lat_min: f64,
    pub lat_max: f64,
    pub lon_min: f64,
    pub lon_max: f64,
}

impl BoundingBox {
    pub fn new(lat_min: f64, lat_max: f64, lon_min: f64, lon_max: f64) -> Result<Self, TripsError> {
        let all_finite = [lat_min, lat_max, lon_min, lon_max]
            .iter()
            .all(|v| v.is_finite());
        if !all_finite || lat_min >= lat_max || lon_min >= lon_max {
            return Err(TripsError::BadBox(format!(
                "need lat_min < lat_max and lon_min < lon_max, got lat [{lat_min}, {lat_max}], lon [{lon_min}, {lon_max}]"
            )));
        }
        Ok(BoundingBox {
            lat_min,
            lat_max,
            lon_min,
            lon_max,
        })
    }

    /// Shipped default box around New York City. A config value, not ground
    /// truth — override it for any other region.
    pub fn nyc_default() -> Self {
        BoundingBox {
            lat_min: 40.4961,
            lat_max: 40.9156,
            lon_min: -74.2556,
            lon_max: -73.7004,
        }
    }

    /// Containment test; points on a max edge are outside (cells partition
    /// the box as half-open intervals).
    pub fn contains(&self, lat: f64, lon: f64) -> bool {
        lat >= self.lat_min && lat < self.lat_max && lon >= self.lon_min && lon < self.lon_max
    }

    pub fn mid_lat(&self) -> f64 {
        0.5 * (self.lat_min + self.lat_max)
    }
}

/// Why a row was rejected. Filters run in this order and the first match is
/// the primary reason.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RejectionReason {
    MissingCoordinates,
    OutsideBox,
    ZeroTimeNonzeroDistance,
    ZeroDistanceNonzeroTime,
    BadPassengerCount,
    UnparsableRow,
}

impl RejectionReason {
    pub fn label(self) -> &'static str {
        match self {
            RejectionReason::MissingCoordinates => "missing_coordinates",
            RejectionReason::OutsideBox => "outside_box",
            RejectionReason::ZeroTimeNonzeroDistance => "zero_time_nonzero_distance",
            RejectionReason::ZeroDistanceNonzeroTime => "zero_distance_nonzero_time",
            RejectionReason::BadPassengerCount => "bad_passenger_count",
            RejectionReason::UnparsableRow => "unparsable_row",
        }
    }

    pub const ALL: [RejectionReason; 6] = [
        RejectionReason::MissingCoordinates,
        RejectionReason::OutsideBox,
        RejectionReason::ZeroTimeNonzeroDistance,
        RejectionReason::ZeroDistanceNonzeroTime,
        RejectionReason::BadPassengerCount,
        RejectionReason::UnparsableRow,
    ];
}

/// Maps the logical trip fields to CSV column names. Defaults follow the
/// 2013 NYC TLC trip-data layout.
#[derive(Debug, Clone)]
pub struct CsvSchema {
    pub pickup_datetime: String,
    pub trip_time_in_secs: String,
    pub trip_distance: String,
    pub pickup_longitude: String,
    pub pickup_latitude: String,
    pub dropoff_longitude: String,
    pub dropoff_latitude: String,
    pub passenger_count: String,
}

impl Default for CsvSchema {
    fn default() -> Self {
        CsvSchema {
            pickup_datetime: "pickup_datetime".into(),
            trip_time_in_secs: "trip_time_in_secs".into(),
            trip_distance: "trip_distance".into(),
            pickup_longitude: "pickup_longitude".into(),
            pickup_latitude: "pickup_latitude".into(),
            dropoff_longitude: "dropoff_longitude".into(),
            dropoff_latitude: "dropoff_latitude".into(),
            passenger_count: "passenger_count".into(),
        }
    }
}

struct ColumnIndices {
    pickup_datetime: usize,
    trip_time_in_secs: usize,
    trip_distance: usize,
    pickup_longitude: usize,
    pickup_latitude: usize,
    dropoff_longitude: usize,
    dropoff_latitude: usize,
    passenger_count: usize,
}

/// Streaming trip reader. Yields `(data_row_number, parsed)` pairs in file
/// order; row numbers are 1-based over data rows (the header is row 0).
pub struct TripCsvReader<R: Read> {
    records: csv::StringRecordsIntoIter<R>,
    columns: ColumnIndices,
    row: usize,
}

/// Opens a trip CSV. Fails up front if the header is missing any required
/// column; per-row problems are reported through the iterator instead.
pub fn parse_trips<R: Read>(
    reader: R,
    schema: &CsvSchema,
) -> Result<TripCsvReader<R>, TripsError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let find = |name: &str| -> Result<usize, TripsError> {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| TripsError::MissingColumn(name.to_string()))
    };
    let columns = ColumnIndices {
        pickup_datetime: find(&schema.pickup_datetime)?,
        trip_time_in_secs: find(&schema.trip_time_in_secs)?,
        trip_distance: find(&schema.trip_distance)?,
        pickup_longitude: find(&schema.pickup_longitude)?,
        pickup_latitude: find(&schema.pickup_latitude)?,
        dropoff_longitude: find(&schema.dropoff_longitude)?,
        dropoff_latitude: find(&schema.dropoff_latitude)?,
        passenger_count: find(&schema.passenger_count)?,
    };
    Ok(TripCsvReader {
        records: rdr.into_records(),
        columns,
        row: 0,
    })
}

impl<R: Read> Iterator for TripCsvReader<R> {
    type Item = (usize, Result<TripRecord, RejectionReason>);

    fn next(&mut self) -> Option<Self::Item> {
        let record = self.records.next()?;
        self.row += 1;
        let parsed = match record {
            Ok(rec) => parse_row(&rec, &self.columns),
            Err(_) => Err(RejectionReason::UnparsableRow),
        };
        Some((self.row, parsed))
    }
}

fn parse_row(rec: &csv::StringRecord, cols: &ColumnIndices) -> Result<TripRecord, RejectionReason> {
    let field = |idx: usize| -> Result<&str, RejectionReason> {
        match rec.get(idx).map(str::trim) {
            Some(s) if !s.is_empty() => Ok(s),
            _ => Err(RejectionReason::UnparsableRow),
        }
    };
    let float = |idx: usize| -> Result<f64, RejectionReason> {
        field(idx)?
            .parse::<f64>()
            .map_err(|_| RejectionReason::UnparsableRow)
    };
    let pickup_epoch = parse_datetime(field(cols.pickup_datetime)?)
        .map_err(|_| RejectionReason::UnparsableRow)?;
    let passenger_count = field(cols.passenger_count)?
        .parse::<i64>()
        .map_err(|_| RejectionReason::UnparsableRow)?;
    Ok(TripRecord {
        origin_lat: float(cols.pickup_latitude)?,
        origin_lon: float(cols.pickup_longitude)?,
        dest_lat: float(cols.dropoff_latitude)?,
        dest_lon: float(cols.dropoff_longitude)?,
        pickup_epoch,
        travel_time_s: float(cols.trip_time_in_secs)?,
        travel_distance_mi: float(cols.trip_distance)?,
        passenger_count,
    })
}

/// Parses a `YYYY-MM-DD HH:MM:SS` timestamp into epoch seconds (UTC-naive).
pub fn parse_datetime(s: &str) -> Result<i64, chrono::ParseError> {
    NaiveDateTime::parse_from_str(s, DATETIME_FORMAT).map(|dt| dt.and_utc().timestamp())
}

/// Formats epoch seconds back into the CSV timestamp layout.
pub fn format_datetime(epoch: i64) -> String {
    chrono::DateTime::from_timestamp(epoch, 0)
        .expect("epoch within chrono range")
        .naive_utc()
        .format(DATETIME_FORMAT)
        .to_string()
}

fn coordinate_missing(v: f64) -> bool {
    // The TLC data records missing GPS fixes as 0.0; NaN/inf count too.
    !v.is_finite() || v == 0.0
}

/// First matching filter for one record, or `None` if it is clean.
pub fn rejection_for(trip: &TripRecord, bbox: &BoundingBox) -> Option<RejectionReason> {
    let coords = [
        trip.origin_lat,
        trip.origin_lon,
        trip.dest_lat,
        trip.dest_lon,
    ];
    if coords.iter().any(|&c| coordinate_missing(c)) {
        return Some(RejectionReason::MissingCoordinates);
    }
    if !bbox.contains(trip.origin_lat, trip.origin_lon)
        || !bbox.contains(trip.dest_lat, trip.dest_lon)
    {
        return Some(RejectionReason::OutsideBox);
    }
    // A degenerate zero-time zero-distance row is claimed here, so no
    // nonpositive target ever survives filtering.
    if trip.travel_time_s <= 0.0 {
        return Some(RejectionReason::ZeroTimeNonzeroDistance);
    }
    if trip.travel_distance_mi <= 0.0 {
        return Some(RejectionReason::ZeroDistanceNonzeroTime);
    }
    if !(1..=7).contains(&trip.passenger_count) {
        return Some(RejectionReason::BadPassengerCount);
    }
    None
}

/// Partitions trips into clean records and rejects with their primary reason.
pub fn apply_outlier_filters(
    trips: impl IntoIterator<Item = TripRecord>,
    bbox: &BoundingBox,
) -> (Vec<TripRecord>, Vec<(TripRecord, RejectionReason)>) {
    let mut clean = Vec::new();
    let mut rejected = Vec::new();
    for trip in trips {
        match rejection_for(&trip, bbox) {
            None => clean.push(trip),
            Some(reason) => rejected.push((trip, reason)),
        }
    }
    (clean, rejected)
}

/// Deterministic train/test split. `|test| = round(test_fraction * N)`;
/// both halves preserve the input order of their members.
pub fn split_train_test(
    trips: &[TripRecord],
    test_fraction: f64,
    seed: u64,
) -> Result<(Vec<TripRecord>, Vec<TripRecord>), TripsError> {
    if trips.is_empty() {
        return Err(TripsError::Empty);
    }
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(TripsError::BadFraction(test_fraction));
    }
    let n = trips.len();
    let n_test = ((test_fraction * n as f64).round() as usize).min(n);
    let mut indices: Vec<usize> = (0..n).collect();
    indices.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut in_test = vec![false; n];
    for &i in &indices[..n_test] {
        in_test[i] = true;
    }
    let mut train = Vec::with_capacity(n - n_test);
    let mut test = Vec::with_capacity(n_test);
    for (i, trip) in trips.iter().enumerate() {
        if in_test[i] {
            test.push(trip.clone());
        } else {
            train.push(trip.clone());
        }
    }
    Ok((train, test))
}

fn encode_record(trip: &TripRecord, buf: &mut [u8; TRIP_RECORD_BYTES]) {
    buf[0..8].copy_from_slice(&trip.origin_lat.to_le_bytes());
    buf[8..16].copy_from_slice(&trip.origin_lon.to_le_bytes());
    buf[16..24].copy_from_slice(&trip.dest_lat.to_le_bytes());
    buf[24..32].copy_from_slice(&trip.dest_lon.to_le_bytes());
    buf[32..40].copy_from_slice(&trip.pickup_epoch.to_le_bytes());
    buf[40..48].copy_from_slice(&trip.travel_time_s.to_le_bytes());
    buf[48..56].copy_from_slice(&trip.travel_distance_mi.to_le_bytes());
    buf[56..64].copy_from_slice(&trip.passenger_count.to_le_bytes());
}

fn decode_record(buf: &[u8; TRIP_RECORD_BYTES]) -> TripRecord {
    let f = |lo: usize| f64::from_le_bytes(buf[lo..lo + 8].try_into().unwrap());
    let i = |lo: usize| i64::from_le_bytes(buf[lo..lo + 8].try_into().unwrap());
    TripRecord {
        origin_lat: f(0),
        origin_lon: f(8),
        dest_lat: f(16),
        dest_lon: f(24),
        pickup_epoch: i(32),
        travel_time_s: f(40),
        travel_distance_mi: f(48),
        passenger_count: i(56),
    }
}

/// Writes the binary trip cache: magic `STTR`, version u16, record count
/// u64, then 64-byte fixed-width records in input order (all fields
/// little-endian, floats as 64-bit IEEE 754).
pub fn write_trip_cache<W: Write>(mut w: W, trips: &[TripRecord]) -> Result<(), TripsError> {
    w.write_all(TRIP_CACHE_MAGIC)?;
    w.write_all(&TRIP_CACHE_VERSION.to_le_bytes())?;
    w.write_all(&(trips.len() as u64).to_le_bytes())?;
    let mut buf = [0u8; TRIP_RECORD_BYTES];
    for trip in trips {
        encode_record(trip, &mut buf);
        w.write_all(&buf)?;
    }
    Ok(())
}

/// Streaming cache writer for sources too large to buffer: writes a
/// placeholder count, then seeks back to patch it. Returns the record count.
pub fn write_trip_cache_streaming<W: Write + Seek>(
    mut w: W,
    trips: impl IntoIterator<Item = TripRecord>,
) -> Result<u64, TripsError> {
    w.write_all(TRIP_CACHE_MAGIC)?;
    w.write_all(&TRIP_CACHE_VERSION.to_le_bytes())?;
    let count_pos = w.stream_position()?;
    w.write_all(&0u64.to_le_bytes())?;
    let mut count: u64 = 0;
    let mut buf = [0u8; TRIP_RECORD_BYTES];
    for trip in trips {
        encode_record(&trip, &mut buf);
        w.write_all(&buf)?;
        count += 1;
    }
    let end = w.stream_position()?;
    w.seek(SeekFrom::Start(count_pos))?;
    w.write_all(&count.to_le_bytes())?;
    w.seek(SeekFrom::Start(end))?;
    Ok(count)
}

/// Reads a binary trip cache written by [`write_trip_cache`].
pub fn read_trip_cache<R: Read>(mut r: R) -> Result<Vec<TripRecord>, TripsError> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| TripsError::Cache("file too short for magic bytes".into()))?;
    if &magic != TRIP_CACHE_MAGIC {
        return Err(TripsError::Cache(format!(
            "bad magic {:?}, expected {:?}",
            magic, TRIP_CACHE_MAGIC
        )));
    }
    let mut v = [0u8; 2];
    r.read_exact(&mut v)
        .map_err(|_| TripsError::Cache("truncated version field".into()))?;
    let version = u16::from_le_bytes(v);
    if version != TRIP_CACHE_VERSION {
        return Err(TripsError::Cache(format!(
            "unsupported cache version {version}, expected {TRIP_CACHE_VERSION}"
        )));
    }
    let mut c = [0u8; 8];
    r.read_exact(&mut c)
        .map_err(|_| TripsError::Cache("truncated record count".into()))?;
    let count = u64::from_le_bytes(c);
    let mut trips = Vec::with_capacity(count.min(1 << 24) as usize);
    let mut buf = [0u8; TRIP_RECORD_BYTES];
    for i in 0..count {
        r.read_exact(&mut buf)
            .map_err(|_| TripsError::Cache(format!("truncated at record {i} of {count}")))?;
        trips.push(decode_record(&buf));
    }
    Ok(trips)
}

/// Writes trips as CSV with exactly the columns the default schema expects.
pub fn write_trips_csv<W: Write>(w: W, trips: &[TripRecord]) -> Result<(), TripsError> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record([
        "pickup_datetime",
        "trip_time_in_secs",
        "trip_distance",
        "pickup_longitude",
        "pickup_latitude",
        "dropoff_longitude",
        "dropoff_latitude",
        "passenger_count",
    ])?;
    for trip in trips {
        out.write_record([
            format_datetime(trip.pickup_epoch),
            trip.travel_time_s.to_string(),
            trip.travel_distance_mi.to_string(),
            trip.origin_lon.to_string(),
            trip.origin_lat.to_string(),
            trip.dest_lon.to_string(),
            trip.dest_lat.to_string(),
            trip.passenger_count.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}
