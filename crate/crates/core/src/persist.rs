//! Versioned binary container for trained models.
//!
//! Layout (all integers and floats little-endian, floats 64-bit):
//!
//! ```text
//! magic "STNN" | version u16 | kind tag (u8 length + ASCII)
//! grid:        lat_min f64, lat_max f64, lon_min f64, lon_max f64, cell_size_m f64
//! timespec:    cell_seconds u32
//! feature standardizer: dim u32, means dim×f64, stds dim×f64
//! target standardizer:  dim u32, means dim×f64, stds dim×f64
//! payload per kind:
//!   STNN           — two network blocks (distance module, then time module)
//!   TIMENN/DISTNN  — one network block
//!   LRT/LRD        — weight count u32, weights ×f64, intercept f64
//! network block: layer count u32, then per layer
//!   in_dim u32, out_dim u32, activation tag u8,
//!   weights out×in ×f64 row-major, biases out ×f64
//! ```
//!
//! Loading re-validates the wiring, so a corrupt file never yields a
//! partial model. A save/load round trip reproduces predictions bit for
//! bit (scalars are stored as f64; `f32 -> f64 -> f32` is lossless).

use std::io::{Read, Write};

use thiserror::Error;

use crate::baselines::{BaselineError, BaselineInner, BaselineKind, BaselineModel, LinearModel};
use crate::geobin::{GeobinError, GridSpec, Standardizer, TimeSpec};
use crate::linalg::Matrix;
use crate::metrics::{TripPrediction, TripPredictor};
use crate::neuralnet::{Activation, Layer, Mlp};
use crate::scalar::Scalar;
use crate::stnn::{StnnError, StnnModel};
use crate::trips::{BoundingBox, TripRecord, TripsError};

/// Magic bytes opening every model file.
pub const MODEL_MAGIC: &[u8; 4] = b"STNN";
/// Current model format version.
pub const MODEL_VERSION: u16 = 1;

/// Kind tag of the joint model (baselines use their own tags).
pub const STNN_TAG: &str = "STNN";

// Sanity ceilings so a corrupt file cannot demand absurd allocations.
const MAX_LAYERS: u32 = 1024;
const MAX_DIM: u32 = 1 << 20;

#[derive(Debug, Error)]
pub enum PersistError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad magic {0:?}, expected {MODEL_MAGIC:?}")]
    BadMagic([u8; 4]),
    #[error("unsupported model format version {0}, expected {MODEL_VERSION}")]
    UnsupportedVersion(u16),
    #[error("truncated model file while reading {0}")]
    Truncated(&'static str),
    #[error("unknown model kind tag `{0}`")]
    BadTag(String),
    #[error("model file holds `{found}`, expected `{expected}`")]
    WrongKind { expected: String, found: String },
    #[error("invalid model data: {0}")]
    Invalid(String),
}

impl From<StnnError> for PersistError {
    fn from(e: StnnError) -> Self {
        PersistError::Invalid(e.to_string())
    }
}

impl From<BaselineError> for PersistError {
    fn from(e: BaselineError) -> Self {
        PersistError::Invalid(e.to_string())
    }
}

impl From<GeobinError> for PersistError {
    fn from(e: GeobinError) -> Self {
        PersistError::Invalid(e.to_string())
    }
}

impl From<TripsError> for PersistError {
    fn from(e: TripsError) -> Self {
        PersistError::Invalid(e.to_string())
    }
}

/// Any trained model the container can hold.
#[derive(Debug, Clone, PartialEq)]
pub enum AnyModel<S> {
    Stnn(StnnModel<S>),
    Baseline(BaselineModel<S>),
}

impl<S: Scalar> AnyModel<S> {
    pub fn kind_tag(&self) -> &'static str {
        match self {
            AnyModel::Stnn(_) => STNN_TAG,
            AnyModel::Baseline(b) => b.kind().tag(),
        }
    }

    pub fn grid(&self) -> &GridSpec {
        match self {
            AnyModel::Stnn(m) => m.grid(),
            AnyModel::Baseline(b) => b.grid(),
        }
    }

    pub fn timespec(&self) -> &TimeSpec {
        match self {
            AnyModel::Stnn(m) => m.timespec(),
            AnyModel::Baseline(b) => b.timespec(),
        }
    }
}

impl<S: Scalar> TripPredictor for AnyModel<S> {
    fn grid(&self) -> &GridSpec {
        AnyModel::grid(self)
    }

    fn timespec(&self) -> &TimeSpec {
        AnyModel::timespec(self)
    }

    fn predict_trip(&self, trip: &TripRecord) -> Result<TripPrediction, GeobinError> {
        match self {
            AnyModel::Stnn(m) => m.predict_trip(trip),
            AnyModel::Baseline(b) => b.predict_trip(trip),
        }
    }
}

// ---------------------------------------------------------------- writing

fn write_f64<W: Write>(w: &mut W, v: f64) -> Result<(), PersistError> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn write_u32<W: Write>(w: &mut W, v: u32) -> Result<(), PersistError> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn write_standardizer<S: Scalar, W: Write>(
    w: &mut W,
    std: &Standardizer<S>,
) -> Result<(), PersistError> {
    write_u32(w, std.dim() as u32)?;
    for &m in std.means() {
        write_f64(w, m.as_f64())?;
    }
    for &s in std.stds() {
        write_f64(w, s.as_f64())?;
    }
    Ok(())
}

fn write_mlp<S: Scalar, W: Write>(w: &mut W, mlp: &Mlp<S>) -> Result<(), PersistError> {
    write_u32(w, mlp.layer_count() as u32)?;
    for layer in mlp.layers() {
        write_u32(w, layer.in_dim() as u32)?;
        write_u32(w, layer.out_dim() as u32)?;
        w.write_all(&[layer.activation().tag()])?;
        for &v in layer.weights().data() {
            write_f64(w, v.as_f64())?;
        }
        for &v in layer.bias() {
            write_f64(w, v.as_f64())?;
        }
    }
    Ok(())
}

fn write_header<S: Scalar, W: Write>(
    w: &mut W,
    tag: &str,
    grid: &GridSpec,
    timespec: &TimeSpec,
    feature_std: &Standardizer<S>,
    target_std: &Standardizer<S>,
) -> Result<(), PersistError> {
    w.write_all(MODEL_MAGIC)?;
    w.write_all(&MODEL_VERSION.to_le_bytes())?;
    let tag_bytes = tag.as_bytes();
    w.write_all(&[tag_bytes.len() as u8])?;
    w.write_all(tag_bytes)?;
    let bbox = grid.bbox();
    write_f64(w, bbox.lat_min)?;
    write_f64(w, bbox.lat_max)?;
    write_f64(w, bbox.lon_min)?;
    write_f64(w, bbox.lon_max)?;
    write_f64(w, grid.cell_size_m())?;
    write_u32(w, timespec.cell_seconds())?;
    write_standardizer(w, feature_std)?;
    write_standardizer(w, target_std)?;
    Ok(())
}

/// Serializes any model into the container format.
pub fn save_model<S: Scalar, W: Write>(mut w: W, model: &AnyModel<S>) -> Result<(), PersistError> {
    match model {
        AnyModel::Stnn(m) => {
            write_header(
                &mut w,
                STNN_TAG,
                m.grid(),
                m.timespec(),
                m.feature_std(),
                m.target_std(),
            )?;
            write_mlp(&mut w, m.dist_module())?;
            write_mlp(&mut w, m.time_module())?;
        }
        AnyModel::Baseline(b) => {
            write_header(
                &mut w,
                b.kind().tag(),
                b.grid(),
                b.timespec(),
                b.feature_std(),
                b.target_std(),
            )?;
            match b.inner() {
                BaselineInner::Linear(lin) => {
                    write_u32(&mut w, lin.dim() as u32)?;
                    for &v in lin.weights() {
                        write_f64(&mut w, v.as_f64())?;
                    }
                    write_f64(&mut w, lin.intercept().as_f64())?;
                }
                BaselineInner::Net(net) => write_mlp(&mut w, net)?,
            }
        }
    }
    Ok(())
}

// ---------------------------------------------------------------- reading

fn read_exact<R: Read>(
    r: &mut R,
    buf: &mut [u8],
    what: &'static str,
) -> Result<(), PersistError> {
    r.read_exact(buf).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            PersistError::Truncated(what)
        } else {
            PersistError::Io(e)
        }
    })
}

fn read_f64<R: Read>(r: &mut R, what: &'static str) -> Result<f64, PersistError> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b, what)?;
    Ok(f64::from_le_bytes(b))
}

fn read_u32<R: Read>(r: &mut R, what: &'static str) -> Result<u32, PersistError> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b, what)?;
    Ok(u32::from_le_bytes(b))
}

fn read_scalar_vec<S: Scalar, R: Read>(
    r: &mut R,
    len: usize,
    what: &'static str,
) -> Result<Vec<S>, PersistError> {
    let mut out = Vec::with_capacity(len);
    for _ in 0..len {
        out.push(S::of(read_f64(r, what)?));
    }
    Ok(out)
}

fn read_standardizer<S: Scalar, R: Read>(r: &mut R) -> Result<Standardizer<S>, PersistError> {
    let dim = read_u32(r, "standardizer dim")?;
    if dim == 0 || dim > MAX_DIM {
        return Err(PersistError::Invalid(format!(
            "standardizer dimension {dim} out of range"
        )));
    }
    let means = read_scalar_vec(r, dim as usize, "standardizer means")?;
    let stds = read_scalar_vec(r, dim as usize, "standardizer stds")?;
    Ok(Standardizer::from_stats(means, stds)?)
}

fn read_mlp<S: Scalar, R: Read>(r: &mut R) -> Result<Mlp<S>, PersistError> {
    let layer_count = read_u32(r, "layer count")?;
    if layer_count == 0 || layer_count > MAX_LAYERS {
        return Err(PersistError::Invalid(format!(
            "layer count {layer_count} out of range"
        )));
    }
    let mut layers = Vec::with_capacity(layer_count as usize);
    for _ in 0..layer_count {
        let in_dim = read_u32(r, "layer input dim")?;
        let out_dim = read_u32(r, "layer output dim")?;
        if in_dim == 0 || out_dim == 0 || in_dim > MAX_DIM || out_dim > MAX_DIM {
            return Err(PersistError::Invalid(format!(
                "layer dims {out_dim}x{in_dim} out of range"
            )));
        }
        let mut tag = [0u8; 1];
        read_exact(r, &mut tag, "activation tag")?;
        let activation = Activation::from_tag(tag[0])
            .ok_or_else(|| PersistError::Invalid(format!("unknown activation tag {}", tag[0])))?;
        let weights = read_scalar_vec(r, (in_dim * out_dim) as usize, "layer weights")?;
        let bias = read_scalar_vec(r, out_dim as usize, "layer biases")?;
        let rows: Vec<Vec<S>> = weights
            .chunks(in_dim as usize)
            .map(|c| c.to_vec())
            .collect();
        let matrix =
            Matrix::from_rows(&rows).map_err(|e| PersistError::Invalid(e.to_string()))?;
        layers.push(
            Layer::new(matrix, bias, activation)
                .map_err(|e| PersistError::Invalid(e.to_string()))?,
        );
    }
    Ok(Mlp::from_layers(layers).map_err(|e| PersistError::Invalid(e.to_string()))?)
}

struct Header<S> {
    tag: String,
    grid: GridSpec,
    timespec: TimeSpec,
    feature_std: Standardizer<S>,
    target_std: Standardizer<S>,
}

fn read_header<S: Scalar, R: Read>(r: &mut R) -> Result<Header<S>, PersistError> {
    let mut magic = [0u8; 4];
    read_exact(r, &mut magic, "magic bytes")?;
    if &magic != MODEL_MAGIC {
        return Err(PersistError::BadMagic(magic));
    }
    let mut v = [0u8; 2];
    read_exact(r, &mut v, "format version")?;
    let version = u16::from_le_bytes(v);
    if version != MODEL_VERSION {
        return Err(PersistError::UnsupportedVersion(version));
    }
    let mut tag_len = [0u8; 1];
    read_exact(r, &mut tag_len, "kind tag length")?;
    if tag_len[0] == 0 || tag_len[0] > 16 {
        return Err(PersistError::Invalid(format!(
            "kind tag length {} out of range",
            tag_len[0]
        )));
    }
    let mut tag_bytes = vec![0u8; tag_len[0] as usize];
    read_exact(r, &mut tag_bytes, "kind tag")?;
    let tag = String::from_utf8(tag_bytes)
        .map_err(|_| PersistError::Invalid("kind tag is not ASCII".into()))?;
    let lat_min = read_f64(r, "bbox lat_min")?;
    let lat_max = read_f64(r, "bbox lat_max")?;
    let lon_min = read_f64(r, "bbox lon_min")?;
    let lon_max = read_f64(r, "bbox lon_max")?;
    let cell_size_m = read_f64(r, "cell size")?;
    let bbox = BoundingBox::new(lat_min, lat_max, lon_min, lon_max)?;
    let grid = GridSpec::new(bbox, cell_size_m)?;
    let cell_seconds = read_u32(r, "time cell seconds")?;
    let timespec = TimeSpec::new(cell_seconds)?;
    let feature_std = read_standardizer(r)?;
    let target_std = read_standardizer(r)?;
    Ok(Header {
        tag,
        grid,
        timespec,
        feature_std,
        target_std,
    })
}

/// Deserializes any model from the container format.
pub fn load_model<S: Scalar, R: Read>(mut r: R) -> Result<AnyModel<S>, PersistError> {
    let header = read_header::<S, R>(&mut r)?;
    if header.tag == STNN_TAG {
        let dist = read_mlp(&mut r)?;
        let time = read_mlp(&mut r)?;
        let model = StnnModel::new(
            header.grid,
            header.timespec,
            header.feature_std,
            header.target_std,
            dist,
            time,
        )?;
        return Ok(AnyModel::Stnn(model));
    }
    let kind = BaselineKind::from_tag(&header.tag)
        .ok_or_else(|| PersistError::BadTag(header.tag.clone()))?;
    let inner = if kind.is_linear() {
        let dim = read_u32(&mut r, "linear weight count")?;
        if dim == 0 || dim > MAX_DIM {
            return Err(PersistError::Invalid(format!(
                "linear weight count {dim} out of range"
            )));
        }
        let weights = read_scalar_vec(&mut r, dim as usize, "linear weights")?;
        let intercept = S::of(read_f64(&mut r, "linear intercept")?);
        BaselineInner::Linear(LinearModel::from_parts(weights, intercept))
    } else {
        BaselineInner::Net(read_mlp(&mut r)?)
    };
    let model = BaselineModel::new(
        kind,
        header.grid,
        header.timespec,
        header.feature_std,
        header.target_std,
        inner,
    )?;
    Ok(AnyModel::Baseline(model))
}

/// Loads a model and insists it is the joint kind.
pub fn load_stnn<S: Scalar, R: Read>(r: R) -> Result<StnnModel<S>, PersistError> {
    match load_model(r)? {
        AnyModel::Stnn(m) => Ok(m),
        other => Err(PersistError::WrongKind {
            expected: STNN_TAG.into(),
            found: other.kind_tag().into(),
        }),
    }
}
