//! Geo-bias scores built on spatial self-information (SSI).
//!
//! Every low-performance observation becomes the center of a radius
//! neighborhood. Inside it two scores are computed:
//!
//! * the **base** score, the SSI of where observations sit against the
//!   unobserved background of the disc (dataset bias);
//! * the **relative** score, the SSI of the high/low performance labeling
//!   minus the mean SSI of random relabelings (model bias beyond the data).
//!
//! [`geo_bias_report`] averages both over all centers. Per-center work is
//! pure given a per-center seed, so it runs in parallel and the ordered mean
//! is identical regardless of scheduling.

mod hotspot;
mod moran;
mod weights;

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::{haversine_km, LocationDeg, EARTH_RADIUS_KM};
use crate::locbench::{DatasetRecord, PredictionRow};
use crate::rng::{indexed_seed, seeded, sub_seed};

pub use hotspot::{getis_ord_gi_star, HotSpot, HotSpotBin};
pub use moran::{moran_null_reference, morans_i, ssi, ssi_detail, SsiDetail};
pub use weights::{knn_weights, WeightMatrix};

/// Rule turning per-record performance into high (+1) / low (-1) labels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LowPerfRule {
    /// Low iff the top-ranked class is wrong.
    Hit1Miss,
    /// Low iff `|e| > mean|e| + c·std|e|`.
    AbsErrOverSigma(f64),
    /// Low iff `|e|` exceeds its nearest-rank `p`-th percentile.
    AbsErrOverPercentile(f64),
}

impl fmt::Display for LowPerfRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LowPerfRule::Hit1Miss => f.write_str("hit1_miss"),
            LowPerfRule::AbsErrOverSigma(c) => write!(f, "abs_err_over_sigma({c})"),
            LowPerfRule::AbsErrOverPercentile(p) => write!(f, "abs_err_over_percentile({p})"),
        }
    }
}

impl FromStr for LowPerfRule {
    type Err = Error;

    /// Accepts `hit1_miss`, `abs_err_over_sigma`, `abs_err_over_sigma(3)`,
    /// `abs_err_over_sigma:3` and the same forms for the percentile rule.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let (name, arg) = match s.find(['(', ':']) {
            Some(i) => (&s[..i], Some(s[i + 1..].trim_end_matches(')').trim())),
            None => (s, None),
        };
        let num = |default: Option<f64>| -> Result<f64> {
            match arg {
                Some(a) => a
                    .parse::<f64>()
                    .map_err(|_| Error::Domain(format!("bad low-performance rule argument in {s:?}"))),
                None => default.ok_or_else(|| Error::Domain(format!("{name} needs an argument"))),
            }
        };
        let rule = match name {
            "hit1_miss" if arg.is_none() => LowPerfRule::Hit1Miss,
            "abs_err_over_sigma" => LowPerfRule::AbsErrOverSigma(num(Some(1.0))?),
            "abs_err_over_percentile" => LowPerfRule::AbsErrOverPercentile(num(None)?),
            _ => return Err(Error::Domain(format!("unknown low-performance rule {s:?}"))),
        };
        rule.validate()?;
        Ok(rule)
    }
}

impl LowPerfRule {
    pub fn validate(&self) -> Result<()> {
        match *self {
            LowPerfRule::Hit1Miss => Ok(()),
            LowPerfRule::AbsErrOverSigma(c) if c.is_finite() => Ok(()),
            LowPerfRule::AbsErrOverPercentile(p) if p > 0.0 && p <= 100.0 => Ok(()),
            r => Err(Error::Domain(format!("invalid low-performance rule {r}"))),
        }
    }
}

impl Serialize for LowPerfRule {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for LowPerfRule {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeoBiasConfig {
    pub radius_km: f64,
    pub k: usize,
    pub n_permutations: usize,
    pub seed: u64,
    /// Background lattice spacing; `radius_km / 8` when unset.
    pub background_spacing_km: Option<f64>,
    pub p_min: f64,
    pub max_centers: Option<usize>,
    pub low_perf_rule: LowPerfRule,
}

impl GeoBiasConfig {
    /// 100 km neighborhoods, 4-NN weights, HIT@1 misses as low performance.
    pub fn classification() -> Self {
        GeoBiasConfig {
            radius_km: 100.0,
            k: 4,
            n_permutations: 199,
            seed: 0,
            background_spacing_km: None,
            p_min: 1e-12,
            max_centers: None,
            low_perf_rule: LowPerfRule::Hit1Miss,
        }
    }

    /// 1000 km neighborhoods, errors above one standard deviation as low.
    pub fn regression() -> Self {
        GeoBiasConfig {
            radius_km: 1000.0,
            low_perf_rule: LowPerfRule::AbsErrOverSigma(1.0),
            ..Self::classification()
        }
    }

    pub fn spacing_km(&self) -> f64 {
        self.background_spacing_km.unwrap_or(self.radius_km / 8.0)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.radius_km.is_finite() && self.radius_km > 0.0) {
            return Err(Error::Domain(format!("radius_km must be positive, got {}", self.radius_km)));
        }
        if self.k < 1 {
            return Err(Error::Domain("k must be >= 1".into()));
        }
        if self.n_permutations < 19 {
            return Err(Error::Domain(format!("n_permutations must be >= 19, got {}", self.n_permutations)));
        }
        let sp = self.spacing_km();
        if !(sp.is_finite() && sp > 0.0) {
            return Err(Error::Domain(format!("background spacing must be positive, got {sp}")));
        }
        if !(self.p_min > 0.0 && self.p_min < 1.0) {
            return Err(Error::Domain(format!("p_min must lie in (0, 1), got {}", self.p_min)));
        }
        if self.max_centers == Some(0) {
            return Err(Error::Domain("max_centers must be >= 1 when set".into()));
        }
        self.low_perf_rule.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerfLabeledPoint {
    pub loc: LocationDeg,
    /// +1 high performance, -1 low performance.
    pub value: i8,
}

impl PerfLabeledPoint {
    pub fn new(loc: LocationDeg, value: i8) -> Result<Self> {
        if value != 1 && value != -1 {
            return Err(Error::Domain(format!("performance label must be +1 or -1, got {value}")));
        }
        Ok(PerfLabeledPoint { loc, value })
    }

    pub fn is_low(&self) -> bool {
        self.value < 0
    }
}

/// A score that may have been skipped on a degenerate neighborhood.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Score {
    pub bits: f64,
    pub skipped: bool,
}

impl Score {
    fn skipped() -> Self {
        Score {
            bits: 0.0,
            skipped: true,
        }
    }

    fn value(self) -> Option<f64> {
        (!self.skipped).then_some(self.bits)
    }
}

/// Indices of all points within `radius_km` of `center` (closed ball).
pub fn extract_neighborhood(points: &[LocationDeg], center: LocationDeg, radius_km: f64) -> Vec<usize> {
    points
        .iter()
        .enumerate()
        .filter(|(_, &p)| haversine_km(p, center) <= radius_km)
        .map(|(i, _)| i)
        .collect()
}

fn wrap_lon(lon: f64) -> f64 {
    let w = (lon + 180.0).rem_euclid(360.0) - 180.0;
    if w < -180.0 {
        -180.0
    } else {
        w
    }
}

/// Regular angular lattice around `center` with surface spacing `spacing_km`,
/// clipped to the radius disc. Nodes sit at half-step offsets, so a spacing
/// wider than the disc diameter yields no nodes at all.
pub fn background_lattice(center: LocationDeg, radius_km: f64, spacing_km: f64) -> Vec<LocationDeg> {
    let step = (spacing_km / EARTH_RADIUS_KM).to_degrees();
    let reach = (radius_km / EARTH_RADIUS_KM).to_degrees();
    let n_rows = (reach / step).ceil() as i64 + 1;
    let mut out = Vec::new();
    for i in -n_rows..n_rows {
        let lat = center.lat() + (i as f64 + 0.5) * step;
        if !(-90.0..=90.0).contains(&lat) {
            continue;
        }
        let lon_step = step / lat.to_radians().cos().max(1e-9);
        if lon_step >= 360.0 {
            continue;
        }
        let n_cols = ((reach / lat.to_radians().cos().max(1e-9)).min(180.0) / lon_step).ceil() as i64 + 1;
        let n_cols = n_cols.min((180.0 / lon_step).floor() as i64);
        for j in -n_cols..n_cols {
            let lon = wrap_lon(center.lon() + (j as f64 + 0.5) * lon_step);
            let Ok(p) = LocationDeg::new(lon, lat) else { continue };
            if haversine_km(p, center) <= radius_km {
                out.push(p);
            }
        }
    }
    out
}

/// Base geo-bias score of a neighborhood: SSI of observations (+1) against the
/// unobserved part of the background lattice (-1). Lattice nodes within half a
/// spacing of an observation count as observed and are dropped.
pub fn base_geo_bias(
    neighborhood: &[LocationDeg],
    center: LocationDeg,
    config: &GeoBiasConfig,
    seed: u64,
) -> Result<Score> {
    let spacing = config.spacing_km();
    let background: Vec<LocationDeg> = background_lattice(center, config.radius_km, spacing)
        .into_iter()
        .filter(|b| neighborhood.iter().all(|&o| haversine_km(o, *b) > spacing / 2.0))
        .collect();
    let n = neighborhood.len() + background.len();
    if n < 3 {
        return Ok(Score::skipped());
    }
    let mut points = Vec::with_capacity(n);
    points.extend_from_slice(neighborhood);
    points.extend_from_slice(&background);
    let mut values = vec![1.0; neighborhood.len()];
    values.resize(n, -1.0);
    let w = knn_weights(&points, config.k)?;
    Ok(Score {
        bits: ssi(&values, &w, config.n_permutations, seed, config.p_min)?,
        skipped: false,
    })
}

/// Relative geo-bias score: SSI of the performance labeling minus the mean SSI
/// of `n_permutations` seeded random relabelings of the same neighborhood.
pub fn relative_geo_bias(neighborhood: &[PerfLabeledPoint], config: &GeoBiasConfig, seed: u64) -> Result<Score> {
    let n = neighborhood.len();
    if n < 3 {
        return Ok(Score::skipped());
    }
    let first = neighborhood[0].value;
    if neighborhood.iter().all(|p| p.value == first) {
        return Ok(Score::skipped());
    }
    let locs: Vec<LocationDeg> = neighborhood.iter().map(|p| p.loc).collect();
    let labels: Vec<f64> = neighborhood.iter().map(|p| f64::from(p.value)).collect();
    let w = knn_weights(&locs, config.k)?;
    let m = config.n_permutations;
    let observed = ssi(&labels, &w, m, indexed_seed(seed, 0), config.p_min)?;
    let mut rng = seeded(sub_seed(seed, "relabel"));
    let mut shuffled = labels;
    let mut total = 0.0;
    for p in 0..m {
        shuffled.shuffle(&mut rng);
        total += ssi(&shuffled, &w, m, indexed_seed(seed, p as u64 + 1), config.p_min)?;
    }
    Ok(Score {
        bits: observed - total / m as f64,
        skipped: false,
    })
}

/// Labels prediction rows with the chosen rule, using each row's own location.
pub fn binarize_predictions(preds: &[PredictionRow], rule: LowPerfRule) -> Result<Vec<PerfLabeledPoint>> {
    rule.validate()?;
    let low: Vec<bool> = match rule {
        LowPerfRule::Hit1Miss => preds
            .iter()
            .map(|p| {
                p.hit1
                    .map(|h| !h)
                    .ok_or_else(|| Error::Schema(format!("prediction {} has no hit1 value", p.id)))
            })
            .collect::<Result<_>>()?,
        LowPerfRule::AbsErrOverSigma(_) | LowPerfRule::AbsErrOverPercentile(_) => {
            let errs: Vec<f64> = preds
                .iter()
                .map(|p| {
                    p.abs_err
                        .map(f64::abs)
                        .ok_or_else(|| Error::Schema(format!("prediction {} has no abs_err value", p.id)))
                })
                .collect::<Result<_>>()?;
            let threshold = if errs.is_empty() {
                f64::INFINITY
            } else if let LowPerfRule::AbsErrOverSigma(c) = rule {
                let n = errs.len() as f64;
                let mean = errs.iter().sum::<f64>() / n;
                let sd = (errs.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / n).sqrt();
                mean + c * sd
            } else {
                let LowPerfRule::AbsErrOverPercentile(p) = rule else { unreachable!() };
                let mut sorted = errs.clone();
                sorted.sort_by(f64::total_cmp);
                let rank = ((p / 100.0) * sorted.len() as f64).ceil().max(1.0) as usize;
                sorted[rank.min(sorted.len()) - 1]
            };
            errs.iter().map(|&e| e > threshold).collect()
        }
    };
    preds
        .iter()
        .zip(low)
        .map(|(p, is_low)| PerfLabeledPoint::new(p.loc, if is_low { -1 } else { 1 }))
        .collect()
}

/// Joins predictions to dataset records by id and labels them; locations come
/// from the records.
pub fn binarize_performance(
    records: &[DatasetRecord],
    preds: &[PredictionRow],
    rule: LowPerfRule,
) -> Result<Vec<PerfLabeledPoint>> {
    let by_id: std::collections::HashMap<&str, &PredictionRow> = preds.iter().map(|p| (p.id.as_str(), p)).collect();
    let mut missing = Vec::new();
    let mut joined = Vec::with_capacity(records.len());
    for r in records {
        match by_id.get(r.id.as_str()) {
            Some(p) => joined.push(PredictionRow { loc: r.loc, ..(*p).clone() }),
            None => missing.push(r.id.clone()),
        }
    }
    if !missing.is_empty() {
        let shown: Vec<_> = missing.iter().take(10).cloned().collect();
        return Err(Error::Join(format!(
            "{} record(s) have no prediction, first: {}",
            missing.len(),
            shown.join(", ")
        )));
    }
    binarize_predictions(&joined, rule)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CenterDiagnostics {
    /// Index of the center within the scored points.
    pub center_id: usize,
    pub lon: f64,
    pub lat: f64,
    pub n_neighborhood: usize,
    pub base: Option<f64>,
    pub rel: Option<f64>,
    /// True when the relative score was skipped.
    pub skipped: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeoBiasReport {
    /// Mean base score over centers where it was computed; NaN if none.
    pub base_mean: f64,
    /// Mean relative score over non-skipped centers; NaN if none.
    pub rel_mean: f64,
    pub n_centers: usize,
    pub n_skipped: usize,
    pub centers: Vec<CenterDiagnostics>,
    pub config: GeoBiasConfig,
}

/// JSON form of a report. NaN means are written as `null`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeoBiasSummary {
    pub base_mean: Option<f64>,
    pub rel_mean: Option<f64>,
    pub n_centers: usize,
    pub n_skipped: usize,
    pub radius_km: f64,
    pub k: usize,
    pub n_permutations: usize,
    pub seed: u64,
    pub low_perf_rule: LowPerfRule,
    pub no_low_perf: bool,
}

impl GeoBiasSummary {
    /// Summary for a point set with no low-performance observations.
    pub fn no_low_perf(config: &GeoBiasConfig) -> Self {
        GeoBiasSummary {
            base_mean: None,
            rel_mean: None,
            n_centers: 0,
            n_skipped: 0,
            radius_km: config.radius_km,
            k: config.k,
            n_permutations: config.n_permutations,
            seed: config.seed,
            low_perf_rule: config.low_perf_rule,
            no_low_perf: true,
        }
    }
}

impl GeoBiasReport {
    pub fn summary(&self) -> GeoBiasSummary {
        let finite = |v: f64| v.is_finite().then_some(v);
        GeoBiasSummary {
            base_mean: finite(self.base_mean),
            rel_mean: finite(self.rel_mean),
            n_skipped: self.n_skipped,
            n_centers: self.n_centers,
            no_low_perf: false,
            ..GeoBiasSummary::no_low_perf(&self.config)
        }
    }
}

fn mean_of(values: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

/// Scores every low-performance point (or a seeded subsample of at most
/// `max_centers`) as a neighborhood center and averages the results.
pub fn geo_bias_report(points: &[PerfLabeledPoint], config: &GeoBiasConfig) -> Result<GeoBiasReport> {
    config.validate()?;
    let mut centers: Vec<usize> = points.iter().enumerate().filter(|(_, p)| p.is_low()).map(|(i, _)| i).collect();
    if centers.is_empty() {
        return Err(Error::NoLowPerf);
    }
    if let Some(m) = config.max_centers {
        if m < centers.len() {
            let mut rng = seeded(sub_seed(config.seed, "centers"));
            let mut picked: Vec<usize> = rand::seq::index::sample(&mut rng, centers.len(), m)
                .into_iter()
                .map(|i| centers[i])
                .collect();
            picked.sort_unstable();
            centers = picked;
        }
    }
    let locs: Vec<LocationDeg> = points.iter().map(|p| p.loc).collect();
    let diags: Vec<CenterDiagnostics> = centers
        .par_iter()
        .map(|&c| -> Result<CenterDiagnostics> {
            let center = locs[c];
            let idx = extract_neighborhood(&locs, center, config.radius_km);
            let seed = indexed_seed(config.seed, c as u64);
            let hood_locs: Vec<LocationDeg> = idx.iter().map(|&i| locs[i]).collect();
            let hood: Vec<PerfLabeledPoint> = idx.iter().map(|&i| points[i]).collect();
            let base = base_geo_bias(&hood_locs, center, config, sub_seed(seed, "base"))?;
            let rel = relative_geo_bias(&hood, config, sub_seed(seed, "relative"))?;
            Ok(CenterDiagnostics {
                center_id: c,
                lon: center.lon(),
                lat: center.lat(),
                n_neighborhood: idx.len(),
                base: base.value(),
                rel: rel.value(),
                skipped: rel.skipped,
            })
        })
        .collect::<Result<_>>()?;
    Ok(GeoBiasReport {
        base_mean: mean_of(diags.iter().filter_map(|d| d.base)),
        rel_mean: mean_of(diags.iter().filter_map(|d| d.rel)),
        n_centers: diags.len(),
        n_skipped: diags.iter().filter(|d| d.skipped).count(),
        centers: diags,
        config: config.clone(),
    })
}
