use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use locenc::geobias::{binarize_predictions, geo_bias_report, getis_ord_gi_star, knn_weights, GeoBiasSummary, HotSpotBin};
use locenc::locbench::{
    attach_vectors, evaluate_classifier, evaluate_regressor, load_dataset_csv, load_model, load_predictions_csv,
    read_vector_csv, save_dataset_csv, save_model, save_predictions_csv, save_vector_csv, synth_dataset,
    synth_image_logprobs, train_location_classifier, train_location_regressor, PredictionRow, TrainLog, TrainedModel,
    VectorColumn,
};
use locenc::{DatasetRecord, Error, MetricsReport, Split, Task};
use serde::Serialize;

use crate::config::{EncoderSection, RunConfig};
use crate::{CliError, EncoderArgs, EvaluateArgs, GeobiasArgs, HotspotArgs, SynthArgs, TrainArgs};

/// Errors caused by what the user handed in map to exit code 2.
fn input<T>(r: locenc::Result<T>) -> Result<T, CliError> {
    r.map_err(|e| match e {
        Error::Io { .. }
        | Error::Schema(_)
        | Error::Parse { .. }
        | Error::AtLine { .. }
        | Error::Join(_)
        | Error::Json(_)
        | Error::Checkpoint(_) => CliError::Usage(e.to_string()),
        e => CliError::Runtime(e),
    })
}

fn existing(p: PathBuf, what: &str) -> Result<PathBuf, CliError> {
    if p.is_file() {
        Ok(p)
    } else {
        Err(CliError::Usage(format!("{what} not found: {}", p.display())))
    }
}

fn out_dir(cfg: &RunConfig) -> Result<PathBuf, CliError> {
    let dir = cfg.out_dir();
    fs::create_dir_all(&dir).map_err(|e| {
        CliError::Runtime(Error::Io {
            path: dir.clone(),
            source: e,
        })
    })?;
    Ok(dir)
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| {
        CliError::Runtime(Error::Io {
            path: path.to_owned(),
            source: e,
        })
    })
}

fn to_json<T: Serialize>(v: &T) -> Result<String, CliError> {
    let mut s = serde_json::to_string_pretty(v).map_err(|e| CliError::Runtime(e.into()))?;
    s.push('\n');
    Ok(s)
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> CliError + '_ {
    move |e| {
        CliError::Runtime(Error::Io {
            path: path.to_owned(),
            source: e.into(),
        })
    }
}

/// Fills every remaining default and writes `config.json`.
fn finish(mut cfg: RunConfig, task: Task, dir: &Path) -> Result<(), CliError> {
    cfg.task = Some(task.into());
    if cfg.encoder.kind.is_none() {
        cfg.encoder.resolve(cfg.seed)?;
    }
    cfg.geobias.resolve(task, cfg.seed)?;
    cfg.write(dir)
}

/// Reads the task off a dataset header (`label` or `target` column).
fn sniff_task(path: &Path) -> Result<Task, CliError> {
    let f = fs::File::open(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    let mut header = String::new();
    BufReader::new(f)
        .read_line(&mut header)
        .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    let cols: Vec<&str> = header.trim_end().split(',').collect();
    match (cols.contains(&"label"), cols.contains(&"target")) {
        (true, false) => Ok(Task::Classification),
        (false, true) => Ok(Task::Regression),
        _ => Err(CliError::Usage(format!(
            "{}: cannot tell the task from header {:?}; pass --task",
            path.display(),
            header.trim_end()
        ))),
    }
}

fn apply_encoder_args(sec: &mut EncoderSection, a: &EncoderArgs) -> bool {
    let mut touched = false;
    if let Some(k) = a.encoder {
        if sec.kind != Some(k) {
            // a new kind brings its own scale defaults
            *sec = EncoderSection::default();
        }
        sec.kind = Some(k);
        touched = true;
    }
    for (dst, src) in [(&mut sec.r_min, a.r_min), (&mut sec.r_max, a.r_max), (&mut sec.cell_deg, a.cell_deg)] {
        if src.is_some() {
            *dst = src;
            touched = true;
        }
    }
    if a.scales.is_some() {
        sec.scales = a.scales;
        touched = true;
    }
    touched
}

pub fn synth(mut cfg: RunConfig, a: SynthArgs) -> Result<(), CliError> {
    let s = &mut cfg.synth;
    if let Some(k) = a.kind {
        s.kind = k;
    }
    if let Some(n) = a.n {
        s.n = n as usize;
    }
    if let Some(v) = a.classes {
        s.params.classes = v;
    }
    if let Some(v) = a.clusters {
        s.params.clusters = v;
    }
    if let Some(v) = a.noise_sigma {
        s.params.noise_sigma = v;
    }
    if let Some(v) = a.kappa {
        s.params.kappa = v;
    }
    if let Some(v) = a.cluster_radius_km {
        s.params.cluster_radius_km = v;
    }
    if a.image_accuracy.is_some() {
        s.image_accuracy = a.image_accuracy;
    }
    if s.n == 0 {
        return Err(CliError::Usage("synth: n must be >= 1".into()));
    }
    s.params.validate(s.kind).map_err(|e| CliError::Usage(format!("synth: {e}")))?;
    let task = s.kind.task();
    if let Some(acc) = s.image_accuracy {
        if task == Task::Regression {
            return Err(CliError::Usage(format!("synth: image log-probabilities need a classification kind, not {}", s.kind)));
        }
        if !(0.0..=1.0).contains(&acc) {
            return Err(CliError::Usage(format!("synth: image_accuracy = {acc} is outside [0, 1]")));
        }
    }
    let dir = out_dir(&cfg)?;
    let s = &cfg.synth;
    let records = synth_dataset(s.kind, s.n, &s.params, cfg.seed)?;
    let ds = dir.join("dataset.csv");
    save_dataset_csv(&ds, &records, task)?;
    println!("wrote {} ({} rows, {})", ds.display(), records.len(), s.kind);
    if let Some(acc) = s.image_accuracy {
        let c = records.iter().filter_map(|r| r.label).max().map_or(0, |m| m + 1);
        let rows = synth_image_logprobs(&records, c, acc, cfg.seed)?;
        let p = dir.join("image_logprobs.csv");
        save_vector_csv(&p, VectorColumn::ImageLogprobs, &rows)?;
        println!("wrote {} ({c} classes)", p.display());
        cfg.paths.image_logprobs = Some(p);
    }
    cfg.paths.dataset = Some(ds);
    finish(cfg, task, &dir)
}

fn resolve_task(explicit: Option<Task>, dataset: &Path) -> Result<Task, CliError> {
    match explicit {
        Some(t) => Ok(t),
        None => sniff_task(dataset),
    }
}

fn attach(records: &mut [DatasetRecord], path: PathBuf, column: VectorColumn, splits: &[Split]) -> Result<(), CliError> {
    let path = existing(path, "vector file")?;
    let rows = input(read_vector_csv(&path, column))?;
    input(attach_vectors(records, &rows, column, splits))
}

fn write_train_log(path: &Path, log: &TrainLog) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    for e in &log.epochs {
        w.serialize(e).map_err(csv_err(path))?;
    }
    w.flush().map_err(|e| {
        CliError::Runtime(Error::Io {
            path: path.to_owned(),
            source: e,
        })
    })
}

pub fn train(mut cfg: RunConfig, a: TrainArgs) -> Result<(), CliError> {
    let dir = cfg.out_dir();
    let dataset = a.dataset.or(cfg.paths.dataset.take()).unwrap_or_else(|| dir.join("dataset.csv"));
    let dataset = existing(dataset, "dataset")?;
    let task = resolve_task(a.task.or(cfg.task).map(Into::into), &dataset)?;

    apply_encoder_args(&mut cfg.encoder, &a.encoder);
    if let Some(v) = a.arch {
        cfg.nn.arch = v;
    }
    if let Some(v) = a.activation {
        cfg.nn.activation = v;
    }
    if let Some(v) = a.hidden {
        cfg.nn.hidden = v;
    }
    if let Some(v) = a.depth {
        cfg.nn.depth = v;
    }
    if let Some(v) = a.epochs {
        cfg.train.epochs = v;
    }
    if let Some(v) = a.lr {
        cfg.train.lr = v;
    }
    if let Some(v) = a.batch_size {
        cfg.train.batch_size = v;
    }
    let spec = cfg.encoder.resolve(cfg.seed)?;
    let tc = cfg.train.resolve(cfg.seed)?;
    cfg.nn.validate().map_err(|e| CliError::Usage(format!("nn: {e}")))?;

    let mut records = input(load_dataset_csv(&dataset, task))?;
    let embeddings = a.image_embeddings.or(cfg.paths.image_embeddings.take());
    if let Some(p) = &embeddings {
        if task == Task::Classification {
            return Err(CliError::Usage("image embeddings are only used for regression".into()));
        }
        attach(&mut records, p.clone(), VectorColumn::ImageEmbedding, &[Split::Train])?;
    }

    let dir = out_dir(&cfg)?;
    let (model, log) = match task {
        Task::Classification => {
            let (m, log) = train_location_classifier(&records, &spec, &cfg.nn, &tc)?;
            (TrainedModel::Classifier(m), log)
        }
        Task::Regression => {
            let (m, log) = train_location_regressor(&records, &spec, &cfg.nn, &tc)?;
            (TrainedModel::Regressor(m), log)
        }
    };
    let ckpt = a.checkpoint.unwrap_or_else(|| dir.join("model.tspm"));
    save_model(&ckpt, &model)?;
    write_train_log(&dir.join("train_log.csv"), &log)?;
    if let Some(last) = log.epochs.last() {
        println!("trained {} for {} epochs, final loss {:.6}", spec.kind, last.epoch, last.loss);
    }
    if log.convergence_warning {
        eprintln!("warning: final epoch loss is higher than the first; lower the learning rate");
    }
    println!("wrote {}", ckpt.display());

    cfg.paths.dataset = Some(dataset);
    cfg.paths.image_embeddings = embeddings;
    cfg.paths.checkpoint = Some(ckpt);
    finish(cfg, task, &dir)
}

#[derive(Serialize)]
struct ClassificationMetrics<'a> {
    location_only: &'a MetricsReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    image_only: Option<&'a MetricsReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    combined: Option<&'a MetricsReport>,
}

pub fn evaluate(mut cfg: RunConfig, a: EvaluateArgs) -> Result<(), CliError> {
    let dir = cfg.out_dir();
    let ckpt = a.checkpoint.or(cfg.paths.checkpoint.take()).unwrap_or_else(|| dir.join("model.tspm"));
    let ckpt = existing(ckpt, "checkpoint")?;
    let model = input(load_model(&ckpt))?;
    let task = model.task();
    if let Some(t) = a.task.or(cfg.task).map(Task::from) {
        if t != task {
            return Err(CliError::Usage(format!("checkpoint is a {task} model, task is set to {t}")));
        }
    }
    let explicit = apply_encoder_args(&mut cfg.encoder, &a.encoder) || cfg.encoder.kind.is_some();
    if explicit {
        let spec = cfg.encoder.resolve(cfg.seed)?;
        if &spec != model.encoder_spec() {
            return Err(CliError::Usage(format!(
                "encoder mismatch: config resolves to {spec:?}, checkpoint has {:?}",
                model.encoder_spec()
            )));
        }
    } else {
        cfg.encoder = EncoderSection::echo(model.encoder_spec());
    }

    let dataset = a.dataset.or(cfg.paths.dataset.take()).unwrap_or_else(|| dir.join("dataset.csv"));
    let dataset = existing(dataset, "dataset")?;
    let records = input(load_dataset_csv(&dataset, task))?;
    let mut test: Vec<DatasetRecord> = records.into_iter().filter(|r| r.split == Split::Test).collect();
    let logprobs = a.image_logprobs.or(cfg.paths.image_logprobs.take());
    let embeddings = a.image_embeddings.or(cfg.paths.image_embeddings.take());
    match task {
        Task::Classification => {
            if let Some(p) = &logprobs {
                attach(&mut test, p.clone(), VectorColumn::ImageLogprobs, &[Split::Test])?;
            }
        }
        Task::Regression => {
            if let Some(p) = &embeddings {
                attach(&mut test, p.clone(), VectorColumn::ImageEmbedding, &[Split::Test])?;
            }
        }
    }

    let dir = out_dir(&cfg)?;
    let (json, predictions): (String, Vec<PredictionRow>) = match &model {
        TrainedModel::Classifier(m) => {
            let ev = evaluate_classifier(m, &test).map_err(|e| match e {
                Error::Index { .. } | Error::Shape(_) | Error::Schema(_) => CliError::Usage(e.to_string()),
                e => CliError::Runtime(e),
            })?;
            let out = ClassificationMetrics {
                location_only: &ev.location_only,
                image_only: ev.image_only.as_ref(),
                combined: ev.combined.as_ref(),
            };
            (to_json(&out)?, ev.predictions)
        }
        TrainedModel::Regressor(m) => {
            let ev = evaluate_regressor(m, &test).map_err(|e| match e {
                Error::Shape(_) | Error::Schema(_) => CliError::Usage(e.to_string()),
                e => CliError::Runtime(e),
            })?;
            let out = BTreeMap::from([(ev.block, &ev.metrics)]);
            (to_json(&out)?, ev.predictions)
        }
    };
    let mp = dir.join("metrics.json");
    write_text(&mp, &json)?;
    let pp = dir.join("predictions.csv");
    save_predictions_csv(&pp, &predictions)?;
    print!("{json}");
    println!("wrote {} and {}", mp.display(), pp.display());

    cfg.paths.dataset = Some(dataset);
    cfg.paths.checkpoint = Some(ckpt);
    cfg.paths.image_logprobs = logprobs;
    cfg.paths.image_embeddings = embeddings;
    cfg.paths.predictions = Some(pp);
    finish(cfg, task, &dir)
}

fn load_predictions(explicit: Option<PathBuf>, cfg: &mut RunConfig) -> Result<(PathBuf, Vec<PredictionRow>), CliError> {
    let p = explicit
        .or(cfg.paths.predictions.take())
        .unwrap_or_else(|| cfg.out_dir().join("predictions.csv"));
    let p = existing(p, "predictions")?;
    let rows = input(load_predictions_csv(&p))?;
    Ok((p, rows))
}

fn infer_task(explicit: Option<crate::config::TaskName>, rows: &[PredictionRow]) -> Task {
    match explicit {
        Some(t) => t.into(),
        None if !rows.is_empty() && rows.iter().all(|r| r.hit1.is_some()) => Task::Classification,
        None => Task::Regression,
    }
}

pub fn geobias(mut cfg: RunConfig, a: GeobiasArgs) -> Result<(), CliError> {
    let (path, rows) = load_predictions(a.predictions, &mut cfg)?;
    let task = infer_task(a.task.or(cfg.task), &rows);
    let g = &mut cfg.geobias;
    if a.radius_km.is_some() {
        g.radius_km = a.radius_km;
    }
    if let Some(k) = a.k {
        g.k = k;
    }
    if let Some(p) = a.n_permutations {
        g.n_permutations = p;
    }
    if a.max_centers.is_some() {
        g.max_centers = a.max_centers;
    }
    if a.background_spacing_km.is_some() {
        g.background_spacing_km = a.background_spacing_km;
    }
    if a.low_perf_rule.is_some() {
        g.low_perf_rule = a.low_perf_rule;
    }
    let gc = cfg.geobias.resolve(task, cfg.seed)?;
    let points = input(binarize_predictions(&rows, gc.low_perf_rule))?;

    let dir = out_dir(&cfg)?;
    let (summary, centers) = match geo_bias_report(&points, &gc) {
        Ok(r) => (r.summary(), r.centers),
        Err(Error::NoLowPerf) => (GeoBiasSummary::no_low_perf(&gc), Vec::new()),
        Err(e) => return Err(e.into()),
    };
    let json = to_json(&summary)?;
    write_text(&dir.join("geobias.json"), &json)?;

    let cp = dir.join("geobias_centers.csv");
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(&cp).map_err(csv_err(&cp))?;
    w.write_record(["center_id", "lon", "lat", "n_neighborhood", "base", "rel", "skipped"])
        .map_err(csv_err(&cp))?;
    for c in &centers {
        w.serialize(c).map_err(csv_err(&cp))?;
    }
    w.flush().map_err(|e| CliError::Runtime(Error::Io { path: cp.clone(), source: e }))?;
    print!("{json}");

    cfg.paths.predictions = Some(path);
    finish(cfg, task, &dir)
}

#[derive(Serialize)]
struct HotspotRow<'a> {
    id: &'a str,
    lon: f64,
    lat: f64,
    z: f64,
    bin: &'static str,
}

pub fn hotspot(mut cfg: RunConfig, a: HotspotArgs) -> Result<(), CliError> {
    let (path, rows) = load_predictions(a.predictions, &mut cfg)?;
    if let Some(k) = a.k {
        cfg.geobias.k = k;
    }
    // misses and large errors both count as "hot"
    let values: Vec<f64> = rows
        .iter()
        .map(|r| match (r.hit1, r.abs_err) {
            (Some(h), _) => Ok(if h { 0.0 } else { 1.0 }),
            (None, Some(e)) => Ok(e),
            (None, None) => Err(CliError::Usage(format!("prediction {} has neither hit1 nor abs_err", r.id))),
        })
        .collect::<Result<_, _>>()?;
    let locs: Vec<_> = rows.iter().map(|r| r.loc).collect();
    let w = knn_weights(&locs, cfg.geobias.k)?;
    let spots = getis_ord_gi_star(&values, &w)?;

    let dir = out_dir(&cfg)?;
    let hp = dir.join("hotspot.csv");
    let mut wr = csv::Writer::from_path(&hp).map_err(csv_err(&hp))?;
    let mut counts: BTreeMap<HotSpotBin, usize> = BTreeMap::new();
    for (r, s) in rows.iter().zip(&spots) {
        *counts.entry(s.bin).or_default() += 1;
        wr.serialize(HotspotRow {
            id: &r.id,
            lon: r.loc.lon(),
            lat: r.loc.lat(),
            z: s.z,
            bin: s.bin.name(),
        })
        .map_err(csv_err(&hp))?;
    }
    wr.flush().map_err(|e| CliError::Runtime(Error::Io { path: hp.clone(), source: e }))?;
    for (bin, n) in &counts {
        println!("{bin}\t{n}");
    }
    println!("wrote {} ({} rows)", hp.display(), spots.len());

    let task = infer_task(cfg.task, &rows);
    cfg.paths.predictions = Some(path);
    finish(cfg, task, &dir)
}
