//! The five pipeline subcommands.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use stnn_core::baselines::{self, BaselineKind};
use stnn_core::geobin::{self, GridSpec, TimeSpec};
use stnn_core::metrics::{self, PredictionSet};
use stnn_core::persist::{self, AnyModel};
use stnn_core::stnn::{self, StnnModel, TrainConfig};
use stnn_core::synthcity::{self, CityConfig, OutlierSpec, SpeedProfile};
use stnn_core::trips::{
    self, parse_datetime, parse_trips, read_trip_cache, rejection_for, CsvSchema, RejectionReason,
    TripRecord,
};

use crate::args::{Cli, Command, EvalArgs, IngestArgs, PredictArgs, SimulateArgs, TrainArgs};
use crate::settings::{
    parse_activation, parse_lat_lon, parse_widths, resolve_geo, worker_count, ConfigFile,
    GeoSettings, Resolver,
};
use crate::CmdError;

pub fn dispatch(cli: Cli) -> Result<(), CmdError> {
    match cli.command {
        Command::Simulate(args) => simulate(args),
        Command::Ingest(args) => ingest(args),
        Command::Train(args) => train(args),
        Command::Eval(args) => eval(args),
        Command::Predict(args) => predict(args),
    }
}

fn build_grid(geo: &GeoSettings) -> Result<(GridSpec, TimeSpec), CmdError> {
    let grid = GridSpec::new(geo.bbox, geo.cell_size_m)?;
    let timespec = TimeSpec::new(geo.time_cell_s)?;
    Ok((grid, timespec))
}

fn create_parent_dirs(path: &Path) -> Result<(), CmdError> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    Ok(())
}

fn parent_dir(path: &Path) -> PathBuf {
    path.parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."))
}

/// Reads trips from a binary cache or a CSV, detected by the magic bytes.
/// Returns the parsed records and the count of unparsable CSV rows.
fn load_trips(path: &Path) -> Result<(Vec<TripRecord>, u64), CmdError> {
    let mut file = File::open(path)
        .map_err(|e| CmdError::data(format!("cannot open {}: {e}", path.display())))?;
    let mut magic = [0u8; 4];
    let got = file.read(&mut magic)?;
    file.seek(SeekFrom::Start(0))?;
    if got == 4 && &magic == trips::TRIP_CACHE_MAGIC {
        Ok((read_trip_cache(BufReader::new(file))?, 0))
    } else {
        let parser = parse_trips(BufReader::new(file), &CsvSchema::default())?;
        let mut rows = Vec::new();
        let mut unparsable = 0u64;
        for (_, parsed) in parser {
            match parsed {
                Ok(trip) => rows.push(trip),
                Err(_) => unparsable += 1,
            }
        }
        Ok((rows, unparsable))
    }
}

fn print_rejection_summary(clean: usize, counts: &BTreeMap<&'static str, u64>) {
    let rejected: u64 = counts.values().sum();
    println!("kept {clean} trips, rejected {rejected}");
    for reason in RejectionReason::ALL {
        if let Some(n) = counts.get(reason.label()) {
            println!("  {}: {n}", reason.label());
        }
    }
}

// ---------------------------------------------------------------- simulate

fn simulate(args: SimulateArgs) -> Result<(), CmdError> {
    let file = ConfigFile::load(args.common.config.as_deref())?;
    let mut resolver = Resolver::new(file);
    let geo = resolve_geo(&mut resolver, &args.common)?;
    let n = resolver.value("trips", args.trips, 20_000usize)?;
    let outlier_rate = resolver.value("outlier_rate", args.outlier_rate, 0.0f64)?;
    let noise_sigma = resolver.value("noise_sigma", args.noise_sigma, 0.05f64)?;
    let detour = resolver.value("detour_factor", args.detour_factor, 1.3f64)?;
    let delay = resolver.value("boundary_delay_s", args.boundary_delay_s, 30.0f64)?;
    let out = resolver.path_or("out", args.out, PathBuf::from("trips.csv"))?;

    let (grid, timespec) = build_grid(&geo)?;
    let speeds = SpeedProfile::default_for(&timespec);
    let city = CityConfig::new(grid, timespec, detour, speeds, delay, noise_sigma)?;
    let outliers = OutlierSpec::all_classes(outlier_rate);
    let generated = synthcity::sample_trips_with_outliers(&city, n, geo.seed, &outliers)?;

    create_parent_dirs(&out)?;
    let writer = BufWriter::new(File::create(&out)?);
    trips::write_trips_csv(writer, &generated)?;
    resolver.echo_into(&parent_dir(&out), "simulate")?;
    println!("wrote {} trips to {}", generated.len(), out.display());
    Ok(())
}

// ---------------------------------------------------------------- ingest

fn ingest(args: IngestArgs) -> Result<(), CmdError> {
    let file = ConfigFile::load(args.common.config.as_deref())?;
    let mut resolver = Resolver::new(file);
    let geo = resolve_geo(&mut resolver, &args.common)?;
    let data = resolver.path("data", args.data, "input CSV path")?;
    let out = resolver.path_or("out", args.out, PathBuf::from("trips.sttr"))?;

    let input = File::open(&data)
        .map_err(|e| CmdError::data(format!("cannot open {}: {e}", data.display())))?;
    let parser = parse_trips(BufReader::new(input), &CsvSchema::default())?;

    create_parent_dirs(&out)?;
    let writer = BufWriter::new(File::create(&out)?);
    let bbox = geo.bbox;
    let mut counts: BTreeMap<&'static str, u64> = BTreeMap::new();
    let kept = trips::write_trip_cache_streaming(
        writer,
        parser.filter_map(|(_, parsed)| {
            let reason = match parsed {
                Ok(trip) => match rejection_for(&trip, &bbox) {
                    None => return Some(trip),
                    Some(reason) => reason,
                },
                Err(reason) => reason,
            };
            *counts.entry(reason.label()).or_insert(0) += 1;
            None
        }),
    )?;
    resolver.echo_into(&parent_dir(&out), "ingest")?;
    print_rejection_summary(kept as usize, &counts);
    println!("cache -> {}", out.display());
    Ok(())
}

// ---------------------------------------------------------------- train

fn model_kind(s: &str) -> Result<Option<BaselineKind>, CmdError> {
    match s.to_ascii_lowercase().as_str() {
        "stnn" => Ok(None),
        "lrt" => Ok(Some(BaselineKind::Lrt)),
        "lrd" => Ok(Some(BaselineKind::Lrd)),
        "timenn" => Ok(Some(BaselineKind::TimeNn)),
        "distnn" => Ok(Some(BaselineKind::DistNn)),
        other => Err(CmdError::usage(format!(
            "unknown model `{other}` (expected stnn, lrt, lrd, timenn, distnn)"
        ))),
    }
}

fn suffixed(path: &Path, suffix: &str) -> PathBuf {
    PathBuf::from(format!("{}{suffix}", path.display()))
}

fn train(args: TrainArgs) -> Result<(), CmdError> {
    let file = ConfigFile::load(args.common.config.as_deref())?;
    let mut resolver = Resolver::new(file);
    let geo = resolve_geo(&mut resolver, &args.common)?;
    let kind_name = resolver.value("model", args.model, "stnn".to_string())?;
    let kind = model_kind(&kind_name)?;
    let data = resolver.path("data", args.data, "training data path")?;
    let out = resolver.path_or(
        "out",
        args.out,
        PathBuf::from(format!("model.{}", kind_name.to_ascii_lowercase())),
    )?;
    let epochs = resolver.value("epochs", args.epochs, 30usize)?;
    let batch_size = resolver.value("batch_size", args.batch_size, 256usize)?;
    let learning_rate = resolver.value("learning_rate", args.learning_rate, 1e-3f64)?;
    let test_fraction = resolver.value("test_fraction", args.test_fraction, 0.2f64)?;
    let dist_hidden_raw =
        resolver.value("dist_hidden", args.dist_hidden, "128,64,32".to_string())?;
    let time_hidden_raw =
        resolver.value("time_hidden", args.time_hidden, "128,64,32".to_string())?;
    let activation_raw = resolver.value("activation", args.activation, "relu".to_string())?;
    let raw_loss = resolver.flag("raw_loss", args.raw_loss, false)?;
    let no_std_features = resolver.flag(
        "standardize_features",
        args.no_standardize_features,
        false,
    )?;
    let freeze = resolver.flag("freeze_dist_path", args.freeze_dist_path, false)?;
    let history_out =
        resolver.path_or("history_out", args.history_out, suffixed(&out, ".history.csv"))?;
    let test_out = resolver.path_or("test_out", args.test_out, suffixed(&out, ".test.sttr"))?;

    let config = TrainConfig {
        epochs,
        batch_size,
        learning_rate,
        seed: geo.seed,
        dist_hidden: parse_widths(&dist_hidden_raw, "dist_hidden")?,
        time_hidden: parse_widths(&time_hidden_raw, "time_hidden")?,
        hidden_activation: parse_activation(&activation_raw)?,
        standardize_features: !no_std_features,
        raw_loss,
        time_grad_into_dist: !freeze,
    };
    if !(0.0..1.0).contains(&test_fraction) {
        return Err(CmdError::usage(format!(
            "test_fraction must be in [0, 1), got {test_fraction}"
        )));
    }

    let (grid, timespec) = build_grid(&geo)?;
    let (rows, unparsable) = load_trips(&data)?;
    let mut counts: BTreeMap<&'static str, u64> = BTreeMap::new();
    if unparsable > 0 {
        counts.insert(RejectionReason::UnparsableRow.label(), unparsable);
    }
    let (clean, rejected) = trips::apply_outlier_filters(rows, &geo.bbox);
    for (_, reason) in &rejected {
        *counts.entry(reason.label()).or_insert(0) += 1;
    }
    print_rejection_summary(clean.len(), &counts);
    if clean.is_empty() {
        return Err(CmdError::data(format!(
            "no usable trips in {}",
            data.display()
        )));
    }

    let (train_set, test_set) = if test_fraction > 0.0 {
        trips::split_train_test(&clean, test_fraction, geo.seed)?
    } else {
        (clean, Vec::new())
    };
    create_parent_dirs(&out)?;
    if !test_set.is_empty() {
        create_parent_dirs(&test_out)?;
        let writer = BufWriter::new(File::create(&test_out)?);
        trips::write_trip_cache(writer, &test_set)?;
        println!("held out {} trips -> {}", test_set.len(), test_out.display());
    }

    let features = geobin::featurize_all(&train_set, &grid, &timespec)?;
    create_parent_dirs(&history_out)?;
    let mut history_file = BufWriter::new(File::create(&history_out)?);

    match kind {
        None => {
            let mut model: StnnModel<f64> =
                StnnModel::prepare(&features, grid, timespec, &config)?;
            let history = stnn::train_joint(&mut model, &features, &config)?;
            writeln!(history_file, "epoch,joint_loss,time_loss,distance_loss")?;
            for (i, ((j, t), d)) in history
                .joint
                .iter()
                .zip(&history.time)
                .zip(&history.distance)
                .enumerate()
            {
                writeln!(history_file, "{},{},{},{}", i + 1, j, t, d)?;
            }
            if let Some(last) = history.joint.last() {
                println!("final joint training loss: {last}");
            }
            save_to(&out, &AnyModel::Stnn(model))?;
        }
        Some(kind) => {
            let (model, history) =
                baselines::fit_baseline::<f64>(kind, &features, grid, timespec, &config)?;
            writeln!(history_file, "epoch,loss")?;
            for (i, loss) in history.iter().enumerate() {
                writeln!(history_file, "{},{}", i + 1, loss)?;
            }
            if let Some(last) = history.last() {
                println!("final training loss: {last}");
            }
            save_to(&out, &AnyModel::Baseline(model))?;
        }
    }
    history_file.flush()?;
    resolver.echo_into(&parent_dir(&out), "train")?;
    println!(
        "trained {} on {} trips; model -> {}",
        kind_name,
        features.len(),
        out.display()
    );
    Ok(())
}

fn save_to(path: &Path, model: &AnyModel<f64>) -> Result<(), CmdError> {
    let mut writer = BufWriter::new(File::create(path)?);
    persist::save_model(&mut writer, model)?;
    writer.flush()?;
    Ok(())
}

// ---------------------------------------------------------------- eval

struct TargetPairs {
    y: Vec<f64>,
    f: Vec<f64>,
    by_time: Vec<f64>,
    by_dist: Vec<f64>,
    by_tod: Vec<f64>,
}

fn target_pairs(predictions: &PredictionSet, time_target: bool) -> TargetPairs {
    let mut pairs = TargetPairs {
        y: Vec::new(),
        f: Vec::new(),
        by_time: Vec::new(),
        by_dist: Vec::new(),
        by_tod: Vec::new(),
    };
    for row in &predictions.rows {
        let (truth, pred) = if time_target {
            (row.y_time_s, row.pred_time_s)
        } else {
            (row.y_dist_mi, row.pred_dist_mi)
        };
        if let Some(p) = pred {
            pairs.y.push(truth);
            pairs.f.push(p);
            pairs.by_time.push(row.y_time_s);
            pairs.by_dist.push(row.y_dist_mi);
            pairs.by_tod.push(row.time_bin as f64);
        }
    }
    pairs
}

fn metric_cell(v: Result<f64, metrics::MetricsError>) -> String {
    match v {
        Ok(v) => v.to_string(),
        Err(_) => "n/a".to_string(),
    }
}

fn write_curve(path: &Path, curve: &metrics::CurveSeries) -> Result<(), CmdError> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "bin_lo,bin_hi,count,mae")?;
    for k in 0..curve.bins() {
        let mae = curve.mae[k].map(|m| m.to_string()).unwrap_or_default();
        writeln!(
            w,
            "{},{},{},{}",
            curve.edges[k],
            curve.edges[k + 1],
            curve.count[k],
            mae
        )?;
    }
    w.flush()?;
    Ok(())
}

fn write_ecdf(path: &Path, points: &[(f64, f64)]) -> Result<(), CmdError> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "value,fraction")?;
    for (v, frac) in points {
        writeln!(w, "{v},{frac}")?;
    }
    w.flush()?;
    Ok(())
}

fn eval(args: EvalArgs) -> Result<(), CmdError> {
    let file = ConfigFile::load(args.common.config.as_deref())?;
    let mut resolver = Resolver::new(file);
    let model_file = resolver.path_or("model_file", args.model_file, PathBuf::from("model.stnn"))?;
    let data = resolver.path("data", args.data, "evaluation data path")?;
    let out_dir = resolver.path_or("out_dir", args.out_dir, PathBuf::from("eval_out"))?;
    let keep_outliers = resolver.flag("keep_outliers", args.keep_outliers, false)?;
    let time_bin_s = resolver.value("time_curve_bin_s", args.time_curve_bin_s, 120.0f64)?;
    let dist_bin_mi = resolver.value("dist_curve_bin_mi", args.dist_curve_bin_mi, 0.25f64)?;

    let model: AnyModel<f64> = persist::load_model(BufReader::new(
        File::open(&model_file)
            .map_err(|e| CmdError::data(format!("cannot open {}: {e}", model_file.display())))?,
    ))?;
    let grid = model.grid().clone();
    let timespec = *model.timespec();
    resolver.note("model_kind", model.kind_tag());

    let (rows, unparsable) = load_trips(&data)?;
    if rows.is_empty() {
        return Err(CmdError::data(format!("no trips in {}", data.display())));
    }

    let mut skipped: u64 = unparsable;
    let usable: Vec<TripRecord> = if keep_outliers {
        // keep anomalous targets, but drop rows that cannot even be
        // featurized against the model's grid
        rows.into_iter()
            .filter(|t| {
                let ok = geobin::featurize(t, &grid, &timespec).is_ok();
                if !ok {
                    skipped += 1;
                }
                ok
            })
            .collect()
    } else {
        let mut counts: BTreeMap<&'static str, u64> = BTreeMap::new();
        if unparsable > 0 {
            counts.insert(RejectionReason::UnparsableRow.label(), unparsable);
        }
        let (clean, rejected) = trips::apply_outlier_filters(rows, grid.bbox());
        for (_, reason) in &rejected {
            *counts.entry(reason.label()).or_insert(0) += 1;
        }
        print_rejection_summary(clean.len(), &counts);
        clean
    };
    if usable.is_empty() {
        return Err(CmdError::data(
            "no evaluable trips after filtering".to_string(),
        ));
    }

    let workers = worker_count()?;
    resolver.note("workers", workers);
    let predictions = metrics::predict_set_parallel(&model, &usable, workers)?;

    std::fs::create_dir_all(&out_dir)?;
    let mut dump = BufWriter::new(File::create(out_dir.join("predictions.csv"))?);
    predictions.write_csv(&mut dump)?;
    dump.flush()?;

    let mut report = String::new();
    report.push_str(&format!("model_kind: {}\n", model.kind_tag()));
    report.push_str(&format!("rows_evaluated: {}\n", predictions.rows.len()));
    report.push_str(&format!("rows_skipped: {skipped}\n"));

    println!(
        "{:<8} {:<9} {:>12} {:>12} {:>10} {:>12} {:>10}",
        "model", "target", "R2", "MAE", "MRE", "MedAE", "MedRE"
    );
    for (target, unit_label) in [(true, "s"), (false, "mi")] {
        let pairs = target_pairs(&predictions, target);
        if pairs.y.is_empty() {
            continue;
        }
        let name = if target { "time" } else { "distance" };
        let cells = [
            metric_cell(metrics::r2(&pairs.y, &pairs.f).map_err(Into::into)),
            metric_cell(metrics::mae(&pairs.y, &pairs.f).map_err(Into::into)),
            metric_cell(metrics::mre(&pairs.y, &pairs.f).map_err(Into::into)),
            metric_cell(metrics::medae(&pairs.y, &pairs.f).map_err(Into::into)),
            metric_cell(metrics::medre(&pairs.y, &pairs.f).map_err(Into::into)),
        ];
        report.push_str(&format!("{name}_n: {}\n", pairs.y.len()));
        report.push_str(&format!("{name}_r2: {}\n", cells[0]));
        report.push_str(&format!("{name}_mae_{unit_label}: {}\n", cells[1]));
        report.push_str(&format!("{name}_mre: {}\n", cells[2]));
        report.push_str(&format!("{name}_medae_{unit_label}: {}\n", cells[3]));
        report.push_str(&format!("{name}_medre: {}\n", cells[4]));
        println!(
            "{:<8} {:<9} {:>12} {:>12} {:>10} {:>12} {:>10}",
            model.kind_tag(),
            name,
            short(&cells[0]),
            short(&cells[1]),
            short(&cells[2]),
            short(&cells[3]),
            short(&cells[4]),
        );

        for (axis, by, width) in [
            ("travel_time", &pairs.by_time, time_bin_s),
            ("travel_distance", &pairs.by_dist, dist_bin_mi),
            ("time_of_day", &pairs.by_tod, 1.0),
        ] {
            let curve = metrics::binned_mae_curve(&pairs.y, &pairs.f, by, width)?;
            write_curve(
                &out_dir.join(format!("curve_{name}_vs_{axis}.csv")),
                &curve,
            )?;
        }
    }

    let times: Vec<f64> = predictions.rows.iter().map(|r| r.y_time_s).collect();
    let dists: Vec<f64> = predictions.rows.iter().map(|r| r.y_dist_mi).collect();
    write_ecdf(&out_dir.join("ecdf_travel_time.csv"), &metrics::ecdf(&times)?)?;
    write_ecdf(
        &out_dir.join("ecdf_travel_distance.csv"),
        &metrics::ecdf(&dists)?,
    )?;

    std::fs::write(out_dir.join("report.txt"), &report)?;
    resolver.echo_into(&out_dir, "eval")?;
    println!("report -> {}", out_dir.join("report.txt").display());
    Ok(())
}

/// Trims a full-precision cell for the stdout table.
fn short(cell: &str) -> String {
    match cell.parse::<f64>() {
        Ok(v) => format!("{v:.4}"),
        Err(_) => cell.to_string(),
    }
}

// ---------------------------------------------------------------- predict

fn predict(args: PredictArgs) -> Result<(), CmdError> {
    let file = ConfigFile::load(args.common.config.as_deref())?;
    let mut resolver = Resolver::new(file);
    let model_file = resolver.path_or("model_file", args.model_file, PathBuf::from("model.stnn"))?;
    let origin = args
        .origin
        .ok_or_else(|| CmdError::usage("missing --origin lat,lon"))?;
    let dest = args
        .dest
        .ok_or_else(|| CmdError::usage("missing --dest lat,lon"))?;
    let time = args
        .time
        .ok_or_else(|| CmdError::usage("missing --time \"YYYY-MM-DD HH:MM:SS\""))?;

    let origin = parse_lat_lon(&origin, "origin")?;
    let dest = parse_lat_lon(&dest, "dest")?;
    let epoch = parse_datetime(&time)
        .map_err(|e| CmdError::usage(format!("cannot parse --time `{time}`: {e}")))?;

    let model: AnyModel<f64> = persist::load_model(BufReader::new(
        File::open(&model_file)
            .map_err(|e| CmdError::data(format!("cannot open {}: {e}", model_file.display())))?,
    ))?;

    let clamp = |name: &str, v: f64| -> f64 {
        if v < 0.0 {
            eprintln!("warning: negative {name} prediction {v:.6} clamped to 0");
            0.0
        } else {
            v
        }
    };
    match &model {
        AnyModel::Stnn(m) => {
            let pred = m.predict(origin, dest, epoch)?;
            println!(
                "distance_mi={:.6} time_s={:.6}",
                clamp("distance", pred.distance_mi),
                clamp("time", pred.time_s)
            );
        }
        AnyModel::Baseline(b) => {
            let value = b.predict(origin, dest, epoch)?;
            if b.kind().predicts_time() {
                println!("time_s={:.6}", clamp("time", value));
            } else {
                println!("distance_mi={:.6}", clamp("distance", value));
            }
        }
    }
    Ok(())
}
