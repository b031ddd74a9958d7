use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use csv::{ReaderBuilder, StringRecord, Writer};

use super::{DatasetRecord, PredictionRow, Split, Task};
use crate::error::{Error, Result};
use crate::geo::LocationDeg;

fn csv_err(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line()).unwrap_or(0);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        kind => Error::Parse {
            line,
            msg: format!("{}: {kind:?}", path.display()),
        },
    }
}

fn open_reader(path: &Path) -> Result<csv::Reader<File>> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(ReaderBuilder::new().has_headers(true).from_reader(f))
}

fn create_writer(path: &Path) -> Result<Writer<BufWriter<File>>> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(Writer::from_writer(BufWriter::new(f)))
}

fn finish(path: &Path, mut w: Writer<BufWriter<File>>) -> Result<()> {
    w.flush().map_err(|e| Error::io(path, e))
}

fn line_of(rec: &StringRecord) -> u64 {
    rec.position().map(|p| p.line()).unwrap_or(0)
}

fn parse_f64(rec: &StringRecord, col: usize, name: &str) -> Result<f64> {
    let s = rec.get(col).unwrap_or("").trim();
    s.parse::<f64>().map_err(|_| Error::Parse {
        line: line_of(rec),
        msg: format!("{name} {s:?} is not a number"),
    })
}

fn parse_loc(rec: &StringRecord, lon: usize, lat: usize) -> Result<LocationDeg> {
    let (x, y) = (parse_f64(rec, lon, "lon")?, parse_f64(rec, lat, "lat")?);
    LocationDeg::new(x, y).map_err(|e| Error::AtLine {
        line: line_of(rec),
        source: Box::new(e),
    })
}

/// Column positions of `want` in `header`, rejecting missing and unknown columns.
fn column_map(header: &StringRecord, want: &[&str], path: &Path) -> Result<Vec<usize>> {
    let have: Vec<&str> = header.iter().map(str::trim).collect();
    let extra: Vec<&str> = have.iter().copied().filter(|h| !want.contains(h)).collect();
    if !extra.is_empty() {
        return Err(Error::Schema(format!("{}: unexpected column(s) {}", path.display(), extra.join(", "))));
    }
    want.iter()
        .map(|w| {
            have.iter()
                .position(|h| h == w)
                .ok_or_else(|| Error::Schema(format!("{}: missing column {w:?}", path.display())))
        })
        .collect()
}

fn label_column(task: Task) -> &'static str {
    match task {
        Task::Classification => "label",
        Task::Regression => "target",
    }
}

/// Reads `id,lon,lat,split,label` (classification) or `id,lon,lat,split,target`
/// (regression). Records keep file order.
pub fn load_dataset_csv(path: &Path, task: Task) -> Result<Vec<DatasetRecord>> {
    let mut r = open_reader(path)?;
    let header = r.headers().map_err(|e| csv_err(path, e))?.clone();
    let other = label_column(match task {
        Task::Classification => Task::Regression,
        Task::Regression => Task::Classification,
    });
    if header.iter().any(|h| h.trim() == other) {
        return Err(Error::Schema(format!(
            "{}: a {task} dataset must not have a {other:?} column",
            path.display()
        )));
    }
    let cols = column_map(&header, &["id", "lon", "lat", "split", label_column(task)], path)?;
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let line = line_of(&rec);
        let id = rec.get(cols[0]).unwrap_or("").trim().to_string();
        if id.is_empty() {
            return Err(Error::Parse {
                line,
                msg: "empty id".into(),
            });
        }
        if !seen.insert(id.clone()) {
            return Err(Error::Parse {
                line,
                msg: format!("duplicate id {id:?}"),
            });
        }
        let loc = parse_loc(&rec, cols[1], cols[2])?;
        let split: Split = rec
            .get(cols[3])
            .unwrap_or("")
            .trim()
            .parse()
            .map_err(|e: Error| Error::Parse { line, msg: e.to_string() })?;
        let raw = rec.get(cols[4]).unwrap_or("").trim();
        let record = match task {
            Task::Classification => {
                let label = raw.parse::<usize>().map_err(|_| Error::Parse {
                    line,
                    msg: format!("label {raw:?} is not a class index"),
                })?;
                DatasetRecord::classification(id, loc, split, label)
            }
            Task::Regression => {
                let t = parse_f64(&rec, cols[4], "target")?;
                if !t.is_finite() {
                    return Err(Error::AtLine {
                        line,
                        source: Box::new(Error::NonFinite("target")),
                    });
                }
                DatasetRecord::regression(id, loc, split, t)
            }
        };
        out.push(record);
    }
    Ok(out)
}

pub fn save_dataset_csv(path: &Path, records: &[DatasetRecord], task: Task) -> Result<()> {
    let mut w = create_writer(path)?;
    let wr = |w: &mut Writer<_>, row: [&str; 5]| w.write_record(row).map_err(|e| csv_err(path, e));
    wr(&mut w, ["id", "lon", "lat", "split", label_column(task)])?;
    for r in records {
        let value = match (task, r.label, r.target) {
            (Task::Classification, Some(l), None) => l.to_string(),
            (Task::Regression, None, Some(t)) => t.to_string(),
            _ => return Err(Error::Schema(format!("record {} is not a {task} record", r.id))),
        };
        wr(
            &mut w,
            [&r.id, &r.loc.lon().to_string(), &r.loc.lat().to_string(), r.split.name(), &value],
        )?;
    }
    finish(path, w)
}

const PREDICTION_COLUMNS: [&str; 6] = ["id", "lon", "lat", "hit1", "rank", "abs_err"];

pub fn save_predictions_csv(path: &Path, rows: &[PredictionRow]) -> Result<()> {
    let mut w = create_writer(path)?;
    w.write_record(PREDICTION_COLUMNS).map_err(|e| csv_err(path, e))?;
    for p in rows {
        let opt = |v: Option<String>| v.unwrap_or_default();
        w.write_record([
            p.id.clone(),
            p.loc.lon().to_string(),
            p.loc.lat().to_string(),
            opt(p.hit1.map(|h| u8::from(h).to_string())),
            opt(p.rank.map(|r| r.to_string())),
            opt(p.abs_err.map(|e| e.to_string())),
        ])
        .map_err(|e| csv_err(path, e))?;
    }
    finish(path, w)
}

pub fn load_predictions_csv(path: &Path) -> Result<Vec<PredictionRow>> {
    let mut r = open_reader(path)?;
    let header = r.headers().map_err(|e| csv_err(path, e))?.clone();
    let cols = column_map(&header, &PREDICTION_COLUMNS, path)?;
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let line = line_of(&rec);
        let field = |i: usize| rec.get(cols[i]).unwrap_or("").trim();
        let bad = |what: &str, v: &str| Error::Parse {
            line,
            msg: format!("{what} {v:?} is invalid"),
        };
        let hit1 = match field(3) {
            "" => None,
            "1" | "true" => Some(true),
            "0" | "false" => Some(false),
            v => return Err(bad("hit1", v)),
        };
        let rank = match field(4) {
            "" => None,
            v => Some(v.parse::<usize>().ok().filter(|&r| r >= 1).ok_or_else(|| bad("rank", v))?),
        };
        let abs_err = match field(5) {
            "" => None,
            v => Some(v.parse::<f64>().ok().filter(|e| e.is_finite()).ok_or_else(|| bad("abs_err", v))?),
        };
        out.push(PredictionRow {
            id: field(0).to_string(),
            loc: parse_loc(&rec, cols[1], cols[2])?,
            hit1,
            rank,
            abs_err,
        });
    }
    Ok(out)
}

/// Per-record vector files joined to datasets by id.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VectorColumn {
    /// `id,logp_0,...,logp_{C-1}`
    ImageLogprobs,
    /// `id,e_0,...,e_{D-1}`
    ImageEmbedding,
}

impl VectorColumn {
    fn prefix(self) -> &'static str {
        match self {
            VectorColumn::ImageLogprobs => "logp",
            VectorColumn::ImageEmbedding => "e",
        }
    }
}

pub fn read_vector_csv(path: &Path, column: VectorColumn) -> Result<Vec<(String, Vec<f64>)>> {
    let mut r = open_reader(path)?;
    let header = r.headers().map_err(|e| csv_err(path, e))?.clone();
    let prefix = column.prefix();
    let ok = header.len() >= 2
        && header.get(0).map(str::trim) == Some("id")
        && header.iter().skip(1).enumerate().all(|(i, h)| h.trim() == format!("{prefix}_{i}"));
    if !ok {
        return Err(Error::Schema(format!(
            "{}: header must be id,{prefix}_0,...,{prefix}_<n-1>",
            path.display()
        )));
    }
    let dim = header.len() - 1;
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let v = (1..=dim)
            .map(|c| {
                let x = parse_f64(&rec, c, prefix)?;
                if x.is_finite() {
                    Ok(x)
                } else {
                    Err(Error::AtLine {
                        line: line_of(&rec),
                        source: Box::new(Error::NonFinite("vector entry")),
                    })
                }
            })
            .collect::<Result<Vec<_>>>()?;
        out.push((rec.get(0).unwrap_or("").trim().to_string(), v));
    }
    Ok(out)
}

pub fn save_vector_csv(path: &Path, column: VectorColumn, rows: &[(String, Vec<f64>)]) -> Result<()> {
    let dim = rows.first().map_or(0, |r| r.1.len());
    if rows.iter().any(|r| r.1.len() != dim) {
        return Err(Error::Shape("vector rows differ in length".into()));
    }
    let mut w = create_writer(path)?;
    let header: Vec<String> = std::iter::once("id".to_string())
        .chain((0..dim).map(|i| format!("{}_{i}", column.prefix())))
        .collect();
    w.write_record(&header).map_err(|e| csv_err(path, e))?;
    for (id, v) in rows {
        let row: Vec<String> = std::iter::once(id.clone()).chain(v.iter().map(f64::to_string)).collect();
        w.write_record(&row).map_err(|e| csv_err(path, e))?;
    }
    finish(path, w)
}

/// Attaches vectors by id. Every record in one of `required` splits must have
/// a row; the error lists the first 10 missing ids.
pub fn attach_vectors(
    records: &mut [DatasetRecord],
    rows: &[(String, Vec<f64>)],
    column: VectorColumn,
    required: &[Split],
) -> Result<()> {
    let by_id: HashMap<&str, &Vec<f64>> = rows.iter().map(|(id, v)| (id.as_str(), v)).collect();
    let missing: Vec<&str> = records
        .iter()
        .filter(|r| required.contains(&r.split) && !by_id.contains_key(r.id.as_str()))
        .map(|r| r.id.as_str())
        .collect();
    if !missing.is_empty() {
        let first: Vec<&str> = missing.iter().copied().take(10).collect();
        return Err(Error::Join(format!(
            "{} record(s) missing from the {} file, first: {}",
            missing.len(),
            column.prefix(),
            first.join(", ")
        )));
    }
    for r in records.iter_mut() {
        if let Some(v) = by_id.get(r.id.as_str()) {
            let v = Some((*v).clone());
            match column {
                VectorColumn::ImageLogprobs => r.image_logprobs = v,
                VectorColumn::ImageEmbedding => r.image_embedding = v,
            }
        }
    }
    Ok(())
}
