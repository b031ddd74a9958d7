//! Position encoders `PE(x)`: deterministic or seeded featurizations of a
//! geographic point that feed the learnable network.
//!
//! Two coordinate conventions are used. `grid` and `theory` work on raw
//! degrees; every spherical kind works on radians. Kernel encoders (`rbf`,
//! `rff`) work on `(lon/180, lat/90)` so their bandwidths are unitless.

pub mod harmonics;

use std::f64::consts::{PI, TAU};
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::{latlon_to_xyz, LocationDeg};
use crate::rng::seeded;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderKind {
    Tile,
    Wrap,
    WrapFfn,
    Rbf,
    Rff,
    Grid,
    Theory,
    Xyz,
    Nerf,
    #[serde(rename = "sphereC")]
    SphereC,
    #[serde(rename = "sphereC_plus")]
    SphereCPlus,
    #[serde(rename = "sphereM")]
    SphereM,
    #[serde(rename = "sphereM_plus")]
    SphereMPlus,
    Dfs,
    SphericalHarmonics,
}

impl EncoderKind {
    pub const ALL: [EncoderKind; 15] = [
        EncoderKind::Tile,
        EncoderKind::Wrap,
        EncoderKind::WrapFfn,
        EncoderKind::Rbf,
        EncoderKind::Rff,
        EncoderKind::Grid,
        EncoderKind::Theory,
        EncoderKind::Xyz,
        EncoderKind::Nerf,
        EncoderKind::SphereC,
        EncoderKind::SphereCPlus,
        EncoderKind::SphereM,
        EncoderKind::SphereMPlus,
        EncoderKind::Dfs,
        EncoderKind::SphericalHarmonics,
    ];

    pub fn name(self) -> &'static str {
        match self {
            EncoderKind::Tile => "tile",
            EncoderKind::Wrap => "wrap",
            EncoderKind::WrapFfn => "wrap_ffn",
            EncoderKind::Rbf => "rbf",
            EncoderKind::Rff => "rff",
            EncoderKind::Grid => "grid",
            EncoderKind::Theory => "theory",
            EncoderKind::Xyz => "xyz",
            EncoderKind::Nerf => "nerf",
            EncoderKind::SphereC => "sphereC",
            EncoderKind::SphereCPlus => "sphereC_plus",
            EncoderKind::SphereM => "sphereM",
            EncoderKind::SphereMPlus => "sphereM_plus",
            EncoderKind::Dfs => "dfs",
            EncoderKind::SphericalHarmonics => "spherical_harmonics",
        }
    }

    /// Kinds whose features are built from the multi-scale schedule.
    pub fn is_multiscale(self) -> bool {
        matches!(
            self,
            EncoderKind::Grid
                | EncoderKind::Theory
                | EncoderKind::Nerf
                | EncoderKind::SphereC
                | EncoderKind::SphereCPlus
                | EncoderKind::SphereM
                | EncoderKind::SphereMPlus
                | EncoderKind::Dfs
        )
    }

    pub fn needs_aux(self) -> bool {
        matches!(self, EncoderKind::Rbf | EncoderKind::Rff)
    }
}

impl fmt::Display for EncoderKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EncoderKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        EncoderKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Domain(format!("unknown encoder kind {s:?}")))
    }
}

/// Full configuration of one position encoder. Fields a kind does not use
/// are still validated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderSpec {
    pub kind: EncoderKind,
    /// Number of scales `S`.
    pub scales: usize,
    pub r_min: f64,
    pub r_max: f64,
    /// Output width of `rbf`/`rff`.
    pub w_dim: usize,
    /// `rbf` kernel size.
    pub sigma: f64,
    /// `rff` frequency standard deviation.
    pub delta: f64,
    /// Maximum spherical-harmonics degree.
    pub max_degree: usize,
    pub cell_deg: f64,
    pub seed: u64,
}

impl EncoderSpec {
    /// Defaults for `kind`: degree-based kinds use `r_min = 1, r_max = 360`;
    /// radian-based kinds use `r_min = 1e-3, r_max = 1`.
    pub fn new(kind: EncoderKind) -> Self {
        let (r_min, r_max) = match kind {
            EncoderKind::Grid | EncoderKind::Theory => (1.0, 360.0),
            _ => (1e-3, 1.0),
        };
        EncoderSpec {
            kind,
            scales: 32,
            r_min,
            r_max,
            w_dim: 512,
            sigma: 1.0,
            delta: 1.0,
            max_degree: 15,
            cell_deg: 1.0,
            seed: 0,
        }
    }

    pub fn with_scales(mut self, scales: usize, r_min: f64, r_max: f64) -> Self {
        self.scales = scales;
        self.r_min = r_min;
        self.r_max = r_max;
        self
    }

    pub fn validate(&self) -> Result<()> {
        scale_factors(self.scales, self.r_min, self.r_max)?;
        if self.w_dim == 0 {
            return Err(Error::Domain("w_dim must be >= 1".into()));
        }
        for (name, v) in [("sigma", self.sigma), ("delta", self.delta), ("cell_deg", self.cell_deg)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Domain(format!("{name} must be a positive real, got {v}")));
            }
        }
        if self.cell_deg > 180.0 {
            return Err(Error::Domain(format!("cell_deg must be <= 180, got {}", self.cell_deg)));
        }
        Ok(())
    }

    pub fn output_dim(&self) -> usize {
        output_dim(self)
    }

    pub fn n_lon_cells(&self) -> usize {
        (360.0 / self.cell_deg).ceil() as usize
    }

    pub fn n_lat_cells(&self) -> usize {
        (180.0 / self.cell_deg).ceil() as usize
    }

    /// Total number of tile cells covering the globe.
    pub fn n_cells(&self) -> usize {
        self.n_lon_cells() * self.n_lat_cells()
    }
}

/// Geometric scale schedule `α_s = r_min · (r_max/r_min)^{s/(S-1)}`.
pub fn scale_factors(scales: usize, r_min: f64, r_max: f64) -> Result<Vec<f64>> {
    if scales < 1 {
        return Err(Error::Domain("number of scales must be >= 1".into()));
    }
    if !(r_min.is_finite() && r_min > 0.0) {
        return Err(Error::Domain(format!("r_min must be positive, got {r_min}")));
    }
    if !(r_max.is_finite() && r_max >= r_min) {
        return Err(Error::Domain(format!("r_max must be >= r_min, got {r_max} < {r_min}")));
    }
    if scales == 1 {
        return Ok(vec![r_min]);
    }
    let log_g = (r_max / r_min).ln();
    let last = (scales - 1) as f64;
    Ok((0..scales)
        .map(|s| {
            if s == scales - 1 {
                r_max
            } else {
                r_min * (log_g * s as f64 / last).exp()
            }
        })
        .collect())
}

pub fn output_dim(spec: &EncoderSpec) -> usize {
    let s = spec.scales;
    match spec.kind {
        EncoderKind::Tile => 1,
        EncoderKind::Wrap | EncoderKind::WrapFfn => 4,
        EncoderKind::Xyz => 3,
        EncoderKind::Rbf | EncoderKind::Rff => spec.w_dim,
        EncoderKind::Grid => 4 * s,
        EncoderKind::Theory | EncoderKind::Nerf | EncoderKind::Dfs => 6 * s,
        EncoderKind::SphereC => 3 * s,
        EncoderKind::SphereCPlus => 7 * s,
        EncoderKind::SphereM => 5 * s,
        EncoderKind::SphereMPlus => 9 * s,
        EncoderKind::SphericalHarmonics => harmonics::basis_len(spec.max_degree),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PositionEmbedding {
    pub values: Vec<f64>,
}

impl PositionEmbedding {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RbfAnchors {
    pub anchors: Vec<LocationDeg>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RffParams {
    pub omegas: Vec<[f64; 2]>,
    pub shifts: Vec<f64>,
}

/// Sampled parameters for the kernel encoders.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderAux {
    Rbf(RbfAnchors),
    Rff(RffParams),
}

/// Picks `w_dim` anchors from the training locations: without replacement when
/// there are enough points, with replacement otherwise.
pub fn sample_rbf_anchors(train_locs: &[LocationDeg], w_dim: usize, seed: u64) -> Result<RbfAnchors> {
    if train_locs.is_empty() {
        return Err(Error::EmptyDataset("no training locations to sample RBF anchors from".into()));
    }
    let mut rng = seeded(seed);
    let anchors = if train_locs.len() >= w_dim {
        rand::seq::index::sample(&mut rng, train_locs.len(), w_dim)
            .into_iter()
            .map(|i| train_locs[i])
            .collect()
    } else {
        (0..w_dim)
            .map(|_| train_locs[rng.random_range(0..train_locs.len())])
            .collect()
    };
    Ok(RbfAnchors { anchors })
}

pub fn sample_rff_params(w_dim: usize, delta: f64, seed: u64) -> Result<RffParams> {
    if w_dim == 0 {
        return Err(Error::Domain("w_dim must be >= 1".into()));
    }
    if !(delta.is_finite() && delta > 0.0) {
        return Err(Error::Domain(format!("delta must be positive, got {delta}")));
    }
    let normal = Normal::new(0.0, delta).map_err(|e| Error::Domain(e.to_string()))?;
    let mut rng = seeded(seed);
    let omegas = (0..w_dim)
        .map(|_| [normal.sample(&mut rng), normal.sample(&mut rng)])
        .collect();
    let shifts = (0..w_dim).map(|_| rng.random_range(0.0..TAU)).collect();
    Ok(RffParams { omegas, shifts })
}

/// Samples the auxiliary parameters a kind needs, if any.
pub fn sample_aux(spec: &EncoderSpec, train_locs: &[LocationDeg]) -> Result<Option<EncoderAux>> {
    Ok(match spec.kind {
        EncoderKind::Rbf => Some(EncoderAux::Rbf(sample_rbf_anchors(train_locs, spec.w_dim, spec.seed)?)),
        EncoderKind::Rff => Some(EncoderAux::Rff(sample_rff_params(spec.w_dim, spec.delta, spec.seed)?)),
        _ => None,
    })
}

fn normalized(loc: LocationDeg) -> [f64; 2] {
    [loc.lon() / 180.0, loc.lat() / 90.0]
}

/// A validated spec with its scale schedule and sampled parameters resolved,
/// ready to encode many points.
#[derive(Debug, Clone)]
pub struct PositionEncoder {
    spec: EncoderSpec,
    scales: Vec<f64>,
    aux: Option<EncoderAux>,
}

impl PositionEncoder {
    pub fn new(spec: EncoderSpec, aux: Option<EncoderAux>) -> Result<Self> {
        spec.validate()?;
        let aux = match (spec.kind, aux) {
            (EncoderKind::Rbf, Some(EncoderAux::Rbf(a))) => {
                if a.anchors.len() != spec.w_dim {
                    return Err(Error::Shape(format!(
                        "{} RBF anchors for w_dim {}",
                        a.anchors.len(),
                        spec.w_dim
                    )));
                }
                Some(EncoderAux::Rbf(a))
            }
            (EncoderKind::Rff, Some(EncoderAux::Rff(p))) => {
                if p.omegas.len() != spec.w_dim || p.shifts.len() != spec.w_dim {
                    return Err(Error::Shape(format!("RFF parameters do not match w_dim {}", spec.w_dim)));
                }
                Some(EncoderAux::Rff(p))
            }
            (EncoderKind::Rbf, _) => return Err(Error::MissingAux("rbf")),
            (EncoderKind::Rff, _) => return Err(Error::MissingAux("rff")),
            (_, _) => None,
        };
        let scales = scale_factors(spec.scales, spec.r_min, spec.r_max)?;
        Ok(PositionEncoder { spec, scales, aux })
    }

    pub fn spec(&self) -> &EncoderSpec {
        &self.spec
    }

    pub fn aux(&self) -> Option<&EncoderAux> {
        self.aux.as_ref()
    }

    pub fn output_dim(&self) -> usize {
        output_dim(&self.spec)
    }

    /// Tile cell index of `loc`; the top and east edges fold into the last cell.
    pub fn tile_cell(&self, loc: LocationDeg) -> usize {
        tile_cell(&self.spec, loc)
    }

    pub fn encode(&self, loc: LocationDeg) -> PositionEmbedding {
        let mut values = Vec::with_capacity(self.output_dim());
        self.encode_into(loc, &mut values);
        PositionEmbedding { values }
    }

    /// Appends the embedding of `loc` to `out`.
    pub fn encode_into(&self, loc: LocationDeg, out: &mut Vec<f64>) {
        let (lam, phi) = (loc.lon_rad(), loc.lat_rad());
        match self.spec.kind {
            EncoderKind::Tile => out.push(self.tile_cell(loc) as f64),
            EncoderKind::Wrap | EncoderKind::WrapFfn => {
                let (l, p) = (PI * loc.lon() / 180.0, PI * loc.lat() / 90.0);
                out.extend_from_slice(&[l.sin(), l.cos(), p.sin(), p.cos()]);
            }
            EncoderKind::Rbf => {
                let Some(EncoderAux::Rbf(a)) = &self.aux else { unreachable!() };
                let x = normalized(loc);
                let denom = 2.0 * self.spec.sigma * self.spec.sigma;
                out.extend(a.anchors.iter().map(|&anc| {
                    let c = normalized(anc);
                    let d2 = (x[0] - c[0]).powi(2) + (x[1] - c[1]).powi(2);
                    (-d2 / denom).exp()
                }));
            }
            EncoderKind::Rff => {
                let Some(EncoderAux::Rff(p)) = &self.aux else { unreachable!() };
                let x = normalized(loc);
                let amp = (2.0 / self.spec.w_dim as f64).sqrt();
                out.extend(
                    p.omegas
                        .iter()
                        .zip(&p.shifts)
                        .map(|(w, b)| amp * (w[0] * x[0] + w[1] * x[1] + b).cos()),
                );
            }
            EncoderKind::Grid => {
                let (l, p) = (loc.lon(), loc.lat());
                for a in &self.scales {
                    out.extend_from_slice(&[(l / a).sin(), (l / a).cos(), (p / a).sin(), (p / a).cos()]);
                }
            }
            EncoderKind::Theory => {
                let (l, p) = (loc.lon(), loc.lat());
                let h = 3f64.sqrt() / 2.0;
                let dirs = [(1.0, 0.0), (-0.5, h), (-0.5, -h)];
                for a in &self.scales {
                    for (dx, dy) in dirs {
                        let t = (l * dx + p * dy) / a;
                        out.extend_from_slice(&[t.sin(), t.cos()]);
                    }
                }
            }
            EncoderKind::Xyz => {
                let v = latlon_to_xyz(loc);
                out.extend_from_slice(&[v.x, v.y, v.z]);
            }
            EncoderKind::Nerf => {
                let v = latlon_to_xyz(loc);
                for s in 0..self.spec.scales {
                    let f = (s as f64).exp2() * PI;
                    for c in [v.x, v.y, v.z] {
                        out.extend_from_slice(&[(f * c).sin(), (f * c).cos()]);
                    }
                }
            }
            EncoderKind::SphereC => {
                for a in &self.scales {
                    let (sp, cp) = (phi / a).sin_cos();
                    let (sl, cl) = (lam / a).sin_cos();
                    out.extend_from_slice(&[sp, cp * cl, cp * sl]);
                }
            }
            EncoderKind::SphereCPlus => {
                for a in &self.scales {
                    let (sp, cp) = (phi / a).sin_cos();
                    let (sl, cl) = (lam / a).sin_cos();
                    out.extend_from_slice(&[sp, cp * cl, cp * sl, sl, cl, sp, cp]);
                }
            }
            EncoderKind::SphereM | EncoderKind::SphereMPlus => {
                let a0 = self.scales[0];
                let cp0 = (phi / a0).cos();
                let (sl0, cl0) = (lam / a0).sin_cos();
                let plus = self.spec.kind == EncoderKind::SphereMPlus;
                for a in &self.scales {
                    let (sp, cp) = (phi / a).sin_cos();
                    let (sl, cl) = (lam / a).sin_cos();
                    out.extend_from_slice(&[sp, cp * cl0, cp0 * cl, cp * sl0, cp0 * sl]);
                    if plus {
                        out.extend_from_slice(&[sl, cl, sp, cp]);
                    }
                }
            }
            EncoderKind::Dfs => {
                for a in &self.scales {
                    let (sp, cp) = (phi / a).sin_cos();
                    let (sl, cl) = (lam / a).sin_cos();
                    out.extend_from_slice(&[sp, cp, sl, cl, cp * sl, cp * cl]);
                }
            }
            EncoderKind::SphericalHarmonics => {
                harmonics::real_sh_into(self.spec.max_degree, PI / 2.0 - phi, lam, out);
            }
        }
    }
}

pub fn tile_cell(spec: &EncoderSpec, loc: LocationDeg) -> usize {
    let (nx, ny) = (spec.n_lon_cells(), spec.n_lat_cells());
    let ix = (((loc.lon() + 180.0) / spec.cell_deg).floor() as usize).min(nx - 1);
    let iy = (((loc.lat() + 90.0) / spec.cell_deg).floor() as usize).min(ny - 1);
    ix + nx * iy
}

/// One-shot encoding; prefer [`PositionEncoder`] for many points.
pub fn encode_position(spec: &EncoderSpec, loc: LocationDeg, aux: Option<&EncoderAux>) -> Result<PositionEmbedding> {
    Ok(PositionEncoder::new(spec.clone(), aux.cloned())?.encode(loc))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::great_circle_angle_rad;

    fn loc(lon: f64, lat: f64) -> LocationDeg {
        LocationDeg::new(lon, lat).unwrap()
    }

    fn random_locs(n: usize, seed: u64) -> Vec<LocationDeg> {
        let mut rng = seeded(seed);
        (0..n)
            .map(|_| {
                let z: f64 = rng.random_range(-1.0..=1.0);
                loc(rng.random_range(-180.0..=180.0), z.asin().to_degrees())
            })
            .collect()
    }

    fn encoder_for(kind: EncoderKind) -> PositionEncoder {
        let mut spec = EncoderSpec::new(kind);
        spec.scales = 8;
        spec.w_dim = 64;
        spec.max_degree = 6;
        spec.cell_deg = 5.0;
        let aux = sample_aux(&spec, &random_locs(200, 3)).unwrap();
        PositionEncoder::new(spec, aux).unwrap()
    }

    #[test]
    fn scale_schedule() {
        assert_eq!(scale_factors(1, 0.5, 360.0).unwrap(), vec![0.5]);
        let s = scale_factors(3, 1.0, 100.0).unwrap();
        let want = [1.0, 10.0, 100.0];
        for (a, b) in s.iter().zip(want) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(scale_factors(2, 1.0, 360.0).unwrap(), vec![1.0, 360.0]);
        assert!(scale_factors(0, 1.0, 2.0).is_err());
        assert!(scale_factors(2, 0.0, 2.0).is_err());
        assert!(scale_factors(2, 3.0, 2.0).is_err());
        let s = scale_factors(32, 1e-3, 1.0).unwrap();
        assert!(s.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn dimension_table() {
        let mut spec = EncoderSpec::new(EncoderKind::Grid);
        spec.scales = 4;
        assert_eq!(output_dim(&spec), 16);
        spec.kind = EncoderKind::SphericalHarmonics;
        spec.max_degree = 3;
        assert_eq!(output_dim(&spec), 16);
        spec.kind = EncoderKind::Xyz;
        assert_eq!(output_dim(&spec), 3);
    }

    #[test]
    fn dimension_matches_output_for_every_kind() {
        let locs = random_locs(100, 5);
        for kind in EncoderKind::ALL {
            let enc = encoder_for(kind);
            for &l in &locs {
                let e = enc.encode(l);
                assert_eq!(e.len(), enc.output_dim(), "{kind}");
                assert!(e.values.iter().all(|v| v.is_finite()), "{kind}");
            }
        }
    }

    #[test]
    fn boundedness() {
        let locs = random_locs(100, 6);
        for kind in EncoderKind::ALL {
            if kind == EncoderKind::Tile {
                continue;
            }
            let enc = encoder_for(kind);
            let bound = if kind == EncoderKind::Rff { (2.0 / 64.0f64).sqrt() } else { 1.0 };
            for &l in &locs {
                for v in enc.encode(l).values {
                    if kind == EncoderKind::Rbf {
                        assert!(v > 0.0 && v <= 1.0);
                    } else {
                        assert!(v.abs() <= bound + 1e-12, "{kind}: {v}");
                    }
                }
            }
        }
    }

    #[test]
    fn simple_values() {
        let wrap = encode_position(&EncoderSpec::new(EncoderKind::Wrap), loc(0.0, 0.0), None).unwrap();
        assert_eq!(wrap.values, vec![0.0, 1.0, 0.0, 1.0]);
        let spec = EncoderSpec::new(EncoderKind::SphereC).with_scales(1, 1.0, 1.0);
        let e = encode_position(&spec, loc(0.0, 0.0), None).unwrap();
        assert_eq!(e.values, vec![0.0, 1.0, 0.0]);
        let a = encode_position(&spec, loc(0.0, 0.0), None).unwrap();
        let b = encode_position(&spec, loc(90.0, 0.0), None).unwrap();
        let dot: f64 = a.values.iter().zip(&b.values).map(|(x, y)| x * y).sum();
        assert!(dot.abs() < 1e-12);
    }

    #[test]
    fn tile_indices() {
        let mut spec = EncoderSpec::new(EncoderKind::Tile);
        spec.cell_deg = 10.0;
        assert_eq!(spec.n_cells(), 36 * 18);
        assert_eq!(tile_cell(&spec, loc(-180.0, -90.0)), 0);
        assert_eq!(tile_cell(&spec, loc(-175.0, -85.0)), 0);
        assert_eq!(tile_cell(&spec, loc(-165.0, -85.0)), 1);
        assert_eq!(tile_cell(&spec, loc(-175.0, -75.0)), 36);
        assert_eq!(tile_cell(&spec, loc(180.0, 90.0)), 36 * 18 - 1);
        // non-dividing cell sizes still cover the globe
        spec.cell_deg = 7.0;
        assert!(tile_cell(&spec, loc(180.0, 90.0)) < spec.n_cells());
    }

    #[test]
    fn missing_aux_is_an_error() {
        for kind in [EncoderKind::Rbf, EncoderKind::Rff] {
            let r = encode_position(&EncoderSpec::new(kind), loc(0.0, 0.0), None);
            assert!(matches!(r, Err(Error::MissingAux(_))));
        }
    }

    #[test]
    fn invalid_spec_is_a_domain_error() {
        let mut spec = EncoderSpec::new(EncoderKind::SphereC);
        spec.r_min = -1.0;
        assert!(matches!(encode_position(&spec, loc(0.0, 0.0), None), Err(Error::Domain(_))));
        let mut spec = EncoderSpec::new(EncoderKind::Rbf);
        spec.sigma = 0.0;
        assert!(matches!(spec.validate(), Err(Error::Domain(_))));
    }

    #[test]
    fn longitude_periodicity() {
        let mut kinds: Vec<EncoderSpec> = [
            EncoderKind::Wrap,
            EncoderKind::WrapFfn,
            EncoderKind::SphereC,
            EncoderKind::SphereCPlus,
            EncoderKind::SphereM,
            EncoderKind::SphereMPlus,
            EncoderKind::Dfs,
            EncoderKind::Xyz,
            EncoderKind::Nerf,
        ]
        .into_iter()
        .map(|k| EncoderSpec::new(k).with_scales(1, 1.0, 1.0))
        .collect();
        // Degree-based grid is periodic in longitude only when every scale is
        // 180/(π m); the radian-equivalent scale is the natural case.
        let deg = 180.0 / PI;
        kinds.push(EncoderSpec::new(EncoderKind::Grid).with_scales(2, deg / 2.0, deg));
        for spec in kinds {
            for lat in [-60.0, 0.0, 33.3, 89.0] {
                let a = encode_position(&spec, loc(-180.0, lat), None).unwrap();
                let b = encode_position(&spec, loc(180.0, lat), None).unwrap();
                for (x, y) in a.values.iter().zip(&b.values) {
                    assert!((x - y).abs() < 1e-9, "{}: {x} vs {y}", spec.kind);
                }
            }
        }
    }

    #[test]
    fn sphere_c_preserves_spherical_distance() {
        let spec = EncoderSpec::new(EncoderKind::SphereC).with_scales(1, 1.0, 1.0);
        let enc = PositionEncoder::new(spec, None).unwrap();
        let a = random_locs(1000, 21);
        let b = random_locs(1000, 22);
        for (&p, &q) in a.iter().zip(&b) {
            let (ep, eq) = (enc.encode(p), enc.encode(q));
            let dot: f64 = ep.values.iter().zip(&eq.values).map(|(x, y)| x * y).sum();
            assert!((dot - great_circle_angle_rad(p, q).cos()).abs() < 1e-9);
        }
    }

    #[test]
    fn rbf_anchor_sampling() {
        let one = [loc(10.0, 20.0)];
        let a = sample_rbf_anchors(&one, 3, 1).unwrap();
        assert_eq!(a.anchors, vec![one[0]; 3]);

        let pts = random_locs(100, 8);
        let a = sample_rbf_anchors(&pts, 100, 4).unwrap();
        let mut got: Vec<_> = a.anchors.iter().map(|l| (l.lon().to_bits(), l.lat().to_bits())).collect();
        let mut want: Vec<_> = pts.iter().map(|l| (l.lon().to_bits(), l.lat().to_bits())).collect();
        got.sort();
        want.sort();
        assert_eq!(got, want);

        assert_eq!(sample_rbf_anchors(&pts, 10, 9).unwrap(), sample_rbf_anchors(&pts, 10, 9).unwrap());
        assert!(matches!(sample_rbf_anchors(&[], 3, 1), Err(Error::EmptyDataset(_))));
    }

    #[test]
    fn rff_sampling() {
        assert_eq!(sample_rff_params(16, 1.0, 3).unwrap(), sample_rff_params(16, 1.0, 3).unwrap());
        assert!(sample_rff_params(16, 0.0, 3).is_err());
        let p = sample_rff_params(10_000, 1.0, 5).unwrap();
        assert!(p.shifts.iter().all(|&b| (0.0..TAU).contains(&b)));
        let comps: Vec<f64> = p.omegas.iter().flat_map(|w| w.iter().copied()).collect();
        let mean = comps.iter().sum::<f64>() / comps.len() as f64;
        let var = comps.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / (comps.len() - 1) as f64;
        let sd = var.sqrt();
        assert!((0.97..=1.03).contains(&sd), "sd = {sd}");
    }

    #[test]
    fn rff_approximates_gaussian_kernel() {
        let mut spec = EncoderSpec::new(EncoderKind::Rff);
        spec.w_dim = 4096;
        spec.delta = 1.0;
        spec.seed = 17;
        let aux = sample_aux(&spec, &[]).unwrap();
        let enc = PositionEncoder::new(spec.clone(), aux).unwrap();
        let a = random_locs(100, 31);
        let b = random_locs(100, 32);
        for (&p, &q) in a.iter().zip(&b) {
            let (ep, eq) = (enc.encode(p), enc.encode(q));
            let dot: f64 = ep.values.iter().zip(&eq.values).map(|(x, y)| x * y).sum();
            let (xp, xq) = (normalized(p), normalized(q));
            let d2 = (xp[0] - xq[0]).powi(2) + (xp[1] - xq[1]).powi(2);
            let k = (-spec.delta * spec.delta * d2 / 2.0).exp();
            assert!((dot - k).abs() < 0.05, "{dot} vs {k}");
        }
    }

    #[test]
    fn spherical_harmonics_use_colatitude() {
        let mut spec = EncoderSpec::new(EncoderKind::SphericalHarmonics);
        spec.max_degree = 1;
        // Y_1^0 ∝ cos(colatitude) = sin(lat): maximal at the north pole.
        let n = encode_position(&spec, loc(0.0, 90.0), None).unwrap();
        let c1 = (3.0 / (4.0 * PI)).sqrt();
        assert!((n.values[2] - c1).abs() < 1e-12);
        assert!(n.values[1].abs() < 1e-12 && n.values[3].abs() < 1e-12);
    }

    #[test]
    fn kind_names_round_trip() {
        for kind in EncoderKind::ALL {
            assert_eq!(kind.name().parse::<EncoderKind>().unwrap(), kind);
            let json = serde_json::to_string(&kind).unwrap();
            assert_eq!(json, format!("\"{}\"", kind.name()));
        }
    }
}
