//! Config resolution: built-in defaults, preset adjustments, config file
//! entries, then explicit flags — later layers win. The fully resolved
//! configuration is echoed into every output directory so a run can be
//! reproduced from its artifacts alone.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use stnn_core::neuralnet::Activation;
use stnn_core::trips::BoundingBox;

use crate::args::CommonArgs;
use crate::CmdError;

pub const ECHO_FILE: &str = "resolved.conf";

const KNOWN_KEYS: &[&str] = &[
    "bbox",
    "cell_size_m",
    "time_cell_s",
    "seed",
    "model",
    "epochs",
    "batch_size",
    "learning_rate",
    "test_fraction",
    "dist_hidden",
    "time_hidden",
    "activation",
    "standardize_features",
    "raw_loss",
    "freeze_dist_path",
    "trips",
    "outlier_rate",
    "noise_sigma",
    "detour_factor",
    "boundary_delay_s",
    "time_curve_bin_s",
    "dist_curve_bin_mi",
    "keep_outliers",
    "data",
    "out",
    "model_file",
    "out_dir",
    "history_out",
    "test_out",
];

/// Raw `key = value` entries from a config file.
#[derive(Debug, Default, Clone)]
pub struct ConfigFile {
    entries: BTreeMap<String, String>,
}

impl ConfigFile {
    pub fn load(path: Option<&Path>) -> Result<Self, CmdError> {
        let Some(path) = path else {
            return Ok(ConfigFile::default());
        };
        let text = std::fs::read_to_string(path).map_err(|e| {
            CmdError::usage(format!("cannot read config file {}: {e}", path.display()))
        })?;
        let mut entries = BTreeMap::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(CmdError::usage(format!(
                    "config line {} is not `key = value`: {line}",
                    lineno + 1
                )));
            };
            let key = key.trim().to_string();
            if !KNOWN_KEYS.contains(&key.as_str()) {
                return Err(CmdError::usage(format!(
                    "unknown config key `{key}` on line {}",
                    lineno + 1
                )));
            }
            entries.insert(key, value.trim().to_string());
        }
        Ok(ConfigFile { entries })
    }

    fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }
}

/// One resolved value with provenance for each tunable.
pub struct Resolver {
    file: ConfigFile,
    /// Echoed key/value pairs, collected as values resolve.
    echo: BTreeMap<String, String>,
}

impl Resolver {
    pub fn new(file: ConfigFile) -> Self {
        Resolver {
            file,
            echo: BTreeMap::new(),
        }
    }

    /// Resolve one tunable: flag beats file beats default.
    pub fn value<T>(&mut self, key: &str, flag: Option<T>, default: T) -> Result<T, CmdError>
    where
        T: FromStr + Display + Clone,
    {
        let resolved = match flag {
            Some(v) => v,
            None => match self.file.get(key) {
                Some(raw) => raw.parse::<T>().map_err(|_| {
                    CmdError::usage(format!("config key `{key}`: cannot parse `{raw}`"))
                })?,
                None => default,
            },
        };
        self.echo.insert(key.to_string(), resolved.to_string());
        Ok(resolved)
    }

    /// Resolve a flag-style boolean (flag presence turns it on).
    pub fn flag(&mut self, key: &str, flag_set: bool, default: bool) -> Result<bool, CmdError> {
        let resolved = if flag_set {
            true
        } else {
            match self.file.get(key) {
                Some(raw) => raw.parse::<bool>().map_err(|_| {
                    CmdError::usage(format!("config key `{key}`: cannot parse `{raw}` as bool"))
                })?,
                None => default,
            }
        };
        self.echo.insert(key.to_string(), resolved.to_string());
        Ok(resolved)
    }

    /// Resolve a required path.
    pub fn path(
        &mut self,
        key: &str,
        flag: Option<PathBuf>,
        what: &str,
    ) -> Result<PathBuf, CmdError> {
        let resolved = match flag {
            Some(p) => p,
            None => match self.file.get(key) {
                Some(raw) => PathBuf::from(raw),
                None => {
                    return Err(CmdError::usage(format!(
                        "missing {what}: pass --{} or set `{key}` in the config file",
                        key.replace('_', "-")
                    )))
                }
            },
        };
        self.echo
            .insert(key.to_string(), resolved.display().to_string());
        Ok(resolved)
    }

    /// Optional path with a computed default.
    pub fn path_or(
        &mut self,
        key: &str,
        flag: Option<PathBuf>,
        default: PathBuf,
    ) -> Result<PathBuf, CmdError> {
        let resolved = match flag {
            Some(p) => p,
            None => match self.file.get(key) {
                Some(raw) => PathBuf::from(raw),
                None => default,
            },
        };
        self.echo
            .insert(key.to_string(), resolved.display().to_string());
        Ok(resolved)
    }

    pub fn note(&mut self, key: &str, value: impl Display) {
        self.echo.insert(key.to_string(), value.to_string());
    }

    /// Writes the resolved configuration next to a command's outputs.
    pub fn echo_into(&self, dir: &Path, command: &str) -> Result<(), CmdError> {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
        let mut text = String::from("# resolved configuration\n");
        text.push_str(&format!("command = {command}\n"));
        for (k, v) in &self.echo {
            text.push_str(&format!("{k} = {v}\n"));
        }
        let target = if dir.as_os_str().is_empty() {
            PathBuf::from(ECHO_FILE)
        } else {
            dir.join(ECHO_FILE)
        };
        std::fs::write(target, text)?;
        Ok(())
    }
}

/// Grid and time-cell settings shared by every subcommand.
pub struct GeoSettings {
    pub bbox: BoundingBox,
    pub cell_size_m: f64,
    pub time_cell_s: u32,
    pub seed: u64,
}

/// Resolves bbox/cell/seed, honoring `--preset manhattan` (50 m cells,
/// 3600 s time cells, and a mandatory user-supplied box).
pub fn resolve_geo(resolver: &mut Resolver, common: &CommonArgs) -> Result<GeoSettings, CmdError> {
    let preset = common.preset.as_deref().unwrap_or("default");
    let (default_cell, default_time_cell) = match preset {
        "default" => (200.0, 600),
        "manhattan" => (50.0, 3600),
        other => {
            return Err(CmdError::usage(format!(
                "unknown preset `{other}` (expected `default` or `manhattan`)"
            )))
        }
    };
    resolver.note("preset", preset);

    let bbox_raw = match (&common.bbox, resolver.file.get("bbox")) {
        (Some(s), _) => Some(s.clone()),
        (None, Some(s)) => Some(s.to_string()),
        (None, None) => None,
    };
    if preset == "manhattan" && bbox_raw.is_none() {
        return Err(CmdError::usage(
            "--preset manhattan needs an explicit --bbox (the preset ships no box of its own)",
        ));
    }
    let bbox = match &bbox_raw {
        Some(s) => parse_bbox(s)?,
        None => BoundingBox::nyc_default(),
    };
    resolver.note(
        "bbox",
        format!(
            "{},{},{},{}",
            bbox.lat_min, bbox.lat_max, bbox.lon_min, bbox.lon_max
        ),
    );

    let cell_size_m = resolver.value("cell_size_m", common.cell_size_m, default_cell)?;
    let time_cell_s = resolver.value("time_cell_s", common.time_cell_s, default_time_cell)?;
    let seed = resolver.value("seed", common.seed, 0u64)?;
    Ok(GeoSettings {
        bbox,
        cell_size_m,
        time_cell_s,
        seed,
    })
}

pub fn parse_bbox(s: &str) -> Result<BoundingBox, CmdError> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    if parts.len() != 4 {
        return Err(CmdError::usage(format!(
            "bbox must be `lat_min,lat_max,lon_min,lon_max`, got `{s}`"
        )));
    }
    let mut vals = [0.0f64; 4];
    for (v, p) in vals.iter_mut().zip(&parts) {
        *v = p
            .parse()
            .map_err(|_| CmdError::usage(format!("bbox component `{p}` is not a number")))?;
    }
    BoundingBox::new(vals[0], vals[1], vals[2], vals[3])
        .map_err(|e| CmdError::usage(e.to_string()))
}

pub fn parse_lat_lon(s: &str, what: &str) -> Result<(f64, f64), CmdError> {
    let Some((lat, lon)) = s.split_once(',') else {
        return Err(CmdError::usage(format!("{what} must be `lat,lon`, got `{s}`")));
    };
    let lat = lat
        .trim()
        .parse()
        .map_err(|_| CmdError::usage(format!("{what} latitude `{lat}` is not a number")))?;
    let lon = lon
        .trim()
        .parse()
        .map_err(|_| CmdError::usage(format!("{what} longitude `{lon}` is not a number")))?;
    Ok((lat, lon))
}

pub fn parse_widths(s: &str, key: &str) -> Result<Vec<usize>, CmdError> {
    let widths: Result<Vec<usize>, _> = s.split(',').map(|p| p.trim().parse()).collect();
    match widths {
        Ok(w) if !w.is_empty() && w.iter().all(|&x| x > 0) => Ok(w),
        _ => Err(CmdError::usage(format!(
            "{key} must be comma-separated positive integers, got `{s}`"
        ))),
    }
}

pub fn parse_activation(s: &str) -> Result<Activation, CmdError> {
    match s.to_ascii_lowercase().as_str() {
        "relu" => Ok(Activation::ReLU),
        "tanh" => Ok(Activation::Tanh),
        other => Err(CmdError::usage(format!(
            "activation must be `relu` or `tanh`, got `{other}`"
        ))),
    }
}

/// Worker cap: `STNN_THREADS` if set, else the machine's parallelism.
pub fn worker_count() -> Result<usize, CmdError> {
    match std::env::var("STNN_THREADS") {
        Ok(raw) => raw
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|&n| n >= 1)
            .ok_or_else(|| {
                CmdError::usage(format!(
                    "STNN_THREADS must be a positive integer, got `{raw}`"
                ))
            }),
        Err(_) => Ok(std::thread::available_parallelism()
            .map(|n| n.get())
            .unwrap_or(1)
            .min(8)),
    }
}
