use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{DatasetRecord, Split, Task};
use crate::error::{Error, Result};
use crate::geo::{latlon_to_xyz, LocationDeg, Vec3, EARTH_RADIUS_KM};
use crate::rng::{seeded, sub_seed, Rng as SeededRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SynthKind {
    /// Area-uniform points labelled by longitude sector.
    SectorClasses,
    /// Concentrated clusters on the sphere, labelled by cluster.
    ClusterClasses,
    /// Area-uniform points with `sin(2 lat) cos(lon)` plus noise as target.
    SmoothField,
    /// Points packed into a few discs, labelled by disc.
    BiasedClusters,
}

impl SynthKind {
    pub fn task(self) -> Task {
        match self {
            SynthKind::SmoothField => Task::Regression,
            _ => Task::Classification,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SynthKind::SectorClasses => "sector_classes",
            SynthKind::ClusterClasses => "cluster_classes",
            SynthKind::SmoothField => "smooth_field",
            SynthKind::BiasedClusters => "biased_clusters",
        }
    }
}

impl fmt::Display for SynthKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SynthKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [
            SynthKind::SectorClasses,
            SynthKind::ClusterClasses,
            SynthKind::SmoothField,
            SynthKind::BiasedClusters,
        ]
        .into_iter()
        .find(|k| k.name() == s)
        .ok_or_else(|| Error::Domain(format!("unknown synthetic dataset kind {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthParams {
    /// Classes for sector_classes and cluster_classes.
    pub classes: usize,
    /// Discs for biased_clusters.
    pub clusters: usize,
    /// Target noise standard deviation for smooth_field.
    pub noise_sigma: f64,
    /// Concentration of cluster_classes clusters.
    pub kappa: f64,
    pub cluster_radius_km: f64,
    pub train_frac: f64,
    pub val_frac: f64,
}

impl Default for SynthParams {
    fn default() -> Self {
        SynthParams {
            classes: 8,
            clusters: 5,
            noise_sigma: 0.05,
            kappa: 50.0,
            cluster_radius_km: 500.0,
            train_frac: 0.7,
            val_frac: 0.1,
        }
    }
}

impl SynthParams {
    pub fn validate(&self, kind: SynthKind) -> Result<()> {
        let bad = |m: String| Err(Error::Domain(m));
        match kind {
            SynthKind::SectorClasses | SynthKind::ClusterClasses if self.classes < 2 => {
                return bad(format!("classes must be >= 2, got {}", self.classes))
            }
            SynthKind::BiasedClusters if self.clusters < 1 => return bad("clusters must be >= 1".into()),
            _ => {}
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return bad(format!("noise_sigma must be >= 0, got {}", self.noise_sigma));
        }
        if !(self.kappa.is_finite() && self.kappa > 0.0) {
            return bad(format!("kappa must be positive, got {}", self.kappa));
        }
        if !(self.cluster_radius_km > 0.0 && self.cluster_radius_km <= std::f64::consts::PI * EARTH_RADIUS_KM) {
            return bad(format!("cluster_radius_km out of range: {}", self.cluster_radius_km));
        }
        let fr = (self.train_frac, self.val_frac);
        if !(fr.0 > 0.0 && fr.1 >= 0.0 && fr.0 + fr.1 <= 1.0) {
            return bad(format!("invalid split fractions {fr:?}"));
        }
        Ok(())
    }
}

fn from_xyz(v: Vec3) -> LocationDeg {
    let lat = v.z.clamp(-1.0, 1.0).asin().to_degrees();
    let lon = v.y.atan2(v.x).to_degrees();
    LocationDeg::new(lon.clamp(-180.0, 180.0), lat.clamp(-90.0, 90.0)).expect("unit vector maps to a valid location")
}

/// Area-uniform point on the sphere.
fn uniform_point(rng: &mut SeededRng) -> LocationDeg {
    let lat = rng.random_range(-1.0f64..=1.0).asin().to_degrees();
    let lon = rng.random_range(-180.0..180.0);
    LocationDeg::new(lon, lat).expect("sampled within range")
}

/// Point at angular cosine `w` from `center`, uniform in azimuth.
fn around(center: LocationDeg, w: f64, rng: &mut SeededRng) -> LocationDeg {
    let mu = latlon_to_xyz(center);
    // orthonormal tangent basis at mu
    let helper = if mu.z.abs() < 0.9 { Vec3 { x: 0.0, y: 0.0, z: 1.0 } } else { Vec3 { x: 1.0, y: 0.0, z: 0.0 } };
    let cross = |a: Vec3, b: Vec3| Vec3 {
        x: a.y * b.z - a.z * b.y,
        y: a.z * b.x - a.x * b.z,
        z: a.x * b.y - a.y * b.x,
    };
    let e1 = cross(mu, helper);
    let n1 = e1.norm();
    let e1 = Vec3 { x: e1.x / n1, y: e1.y / n1, z: e1.z / n1 };
    let e2 = cross(mu, e1);
    let t = rng.random_range(0.0..std::f64::consts::TAU);
    let s = (1.0 - w * w).max(0.0).sqrt();
    let (st, ct) = t.sin_cos();
    from_xyz(Vec3 {
        x: w * mu.x + s * (ct * e1.x + st * e2.x),
        y: w * mu.y + s * (ct * e1.y + st * e2.y),
        z: w * mu.z + s * (ct * e1.z + st * e2.z),
    })
}

/// von Mises-Fisher sample on the 2-sphere (exact inverse-CDF of the cosine).
fn vmf(center: LocationDeg, kappa: f64, rng: &mut SeededRng) -> LocationDeg {
    let u: f64 = 1.0 - rng.random::<f64>();
    let w = 1.0 + (u + (1.0 - u) * (-2.0 * kappa).exp()).ln() / kappa;
    around(center, w.clamp(-1.0, 1.0), rng)
}

/// Uniform point in the spherical cap of the given surface radius.
fn in_cap(center: LocationDeg, radius_km: f64, rng: &mut SeededRng) -> LocationDeg {
    let cos_r = (radius_km / EARTH_RADIUS_KM).cos();
    around(center, rng.random_range(cos_r..=1.0), rng)
}

pub fn sector_label(lon: f64, classes: usize) -> usize {
    let width = 360.0 / classes as f64;
    (((lon + 180.0) / width).floor() as usize).min(classes - 1)
}

pub fn smooth_field_value(loc: LocationDeg) -> f64 {
    (2.0 * loc.lat_rad()).sin() * loc.lon_rad().cos()
}

/// Seeded synthetic dataset with a shuffled train/val/test split.
pub fn synth_dataset(kind: SynthKind, n: usize, params: &SynthParams, seed: u64) -> Result<Vec<DatasetRecord>> {
    if n < 1 {
        return Err(Error::Domain("n must be >= 1".into()));
    }
    params.validate(kind)?;
    let mut rng = seeded(sub_seed(seed, kind.name()));
    let width = n.to_string().len();
    let id = |i: usize| format!("{i:0width$}");
    let mut recs: Vec<DatasetRecord> = match kind {
        SynthKind::SectorClasses => (0..n)
            .map(|i| {
                let p = uniform_point(&mut rng);
                DatasetRecord::classification(id(i), p, Split::Train, sector_label(p.lon(), params.classes))
            })
            .collect(),
        SynthKind::SmoothField => {
            let noise = Normal::new(0.0, params.noise_sigma).map_err(|e| Error::Domain(e.to_string()))?;
            (0..n)
                .map(|i| {
                    let p = uniform_point(&mut rng);
                    let t = smooth_field_value(p) + noise.sample(&mut rng);
                    DatasetRecord::regression(id(i), p, Split::Train, t)
                })
                .collect()
        }
        SynthKind::ClusterClasses | SynthKind::BiasedClusters => {
            let k = if kind == SynthKind::ClusterClasses { params.classes } else { params.clusters };
            let centers: Vec<LocationDeg> = (0..k).map(|_| uniform_point(&mut rng)).collect();
            (0..n)
                .map(|i| {
                    let c = rng.random_range(0..k);
                    let p = if kind == SynthKind::ClusterClasses {
                        vmf(centers[c], params.kappa, &mut rng)
                    } else {
                        in_cap(centers[c], params.cluster_radius_km, &mut rng)
                    };
                    DatasetRecord::classification(id(i), p, Split::Train, c)
                })
                .collect()
        }
    };
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seeded(sub_seed(seed, "split")));
    let n_train = ((params.train_frac * n as f64).round() as usize).clamp(1, n);
    let n_val = ((params.val_frac * n as f64).round() as usize).min(n - n_train);
    for (pos, &i) in order.iter().enumerate() {
        recs[i].split = if pos < n_train {
            Split::Train
        } else if pos < n_train + n_val {
            Split::Val
        } else {
            Split::Test
        };
    }
    Ok(recs)
}

/// Image log-probabilities from a simulated classifier that ranks the true
/// class first with probability `accuracy` and a uniformly chosen wrong class
/// otherwise. The favoured class gets probability 1/2, the rest share 1/2.
pub fn synth_image_logprobs(
    records: &[DatasetRecord],
    n_classes: usize,
    accuracy: f64,
    seed: u64,
) -> Result<Vec<(String, Vec<f64>)>> {
    if n_classes < 2 {
        return Err(Error::Domain("need at least 2 classes".into()));
    }
    if !(0.0..=1.0).contains(&accuracy) {
        return Err(Error::Range {
            what: "accuracy",
            value: accuracy,
            lo: 0.0,
            hi: 1.0,
        });
    }
    let mut rng = seeded(sub_seed(seed, "image"));
    let hi = 0.5f64.ln();
    let lo = (0.5 / (n_classes - 1) as f64).ln();
    records
        .iter()
        .map(|r| {
            let label = r
                .label
                .filter(|&l| l < n_classes)
                .ok_or_else(|| Error::Domain(format!("record {} has no label below {n_classes}", r.id)))?;
            let guess = if rng.random::<f64>() < accuracy {
                label
            } else {
                let g = rng.random_range(0..n_classes - 1);
                if g >= label {
                    g + 1
                } else {
                    g
                }
            };
            let v = (0..n_classes).map(|c| if c == guess { hi } else { lo }).collect();
            Ok((r.id.clone(), v))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::haversine_km;

    #[test]
    fn sector_examples() {
        assert_eq!(sector_label(-90.0, 2), 0);
        assert_eq!(sector_label(90.0, 2), 1);
        assert_eq!(sector_label(180.0, 8), 7);
        assert_eq!(sector_label(-180.0, 8), 0);
    }

    #[test]
    fn smooth_field_origin() {
        assert_eq!(smooth_field_value(LocationDeg::new(0.0, 0.0).unwrap()), 0.0);
        let recs = synth_dataset(SynthKind::SmoothField, 50, &SynthParams { noise_sigma: 0.0, ..Default::default() }, 1).unwrap();
        for r in &recs {
            assert_eq!(r.target, Some(smooth_field_value(r.loc)));
        }
    }

    #[test]
    fn area_uniform_polar_fraction() {
        let recs = synth_dataset(SynthKind::SectorClasses, 100_000, &SynthParams::default(), 3).unwrap();
        let frac = recs.iter().filter(|r| r.loc.lat().abs() > 60.0).count() as f64 / 1e5;
        let want = 1.0 - 60f64.to_radians().sin();
        assert!((frac - want).abs() <= 0.01, "{frac} vs {want}");
    }

    #[test]
    fn deterministic_and_split() {
        let p = SynthParams::default();
        let a = synth_dataset(SynthKind::ClusterClasses, 1000, &p, 9).unwrap();
        assert_eq!(a, synth_dataset(SynthKind::ClusterClasses, 1000, &p, 9).unwrap());
        assert_ne!(a, synth_dataset(SynthKind::ClusterClasses, 1000, &p, 10).unwrap());
        let count = |s| a.iter().filter(|r| r.split == s).count();
        assert_eq!((count(Split::Train), count(Split::Val), count(Split::Test)), (700, 100, 200));
        assert!(synth_dataset(SynthKind::SmoothField, 0, &p, 1).is_err());
        assert!(synth_dataset(SynthKind::SectorClasses, 5, &SynthParams { classes: 1, ..p }, 1).is_err());
    }

    #[test]
    fn biased_clusters_stay_in_their_discs() {
        let p = SynthParams {
            clusters: 3,
            cluster_radius_km: 300.0,
            ..Default::default()
        };
        let recs = synth_dataset(SynthKind::BiasedClusters, 600, &p, 4).unwrap();
        for c in 0..3 {
            let members: Vec<_> = recs.iter().filter(|r| r.label == Some(c)).map(|r| r.loc).collect();
            assert!(!members.is_empty());
            // all members lie within one disc diameter of each other
            for a in &members {
                assert!(members.iter().all(|b| haversine_km(*a, *b) <= 600.0 + 1e-6));
            }
        }
    }

    #[test]
    fn vmf_concentration() {
        let mut rng = seeded(2);
        let c = LocationDeg::new(30.0, -20.0).unwrap();
        let mean_cos: f64 = (0..20_000)
            .map(|_| latlon_to_xyz(vmf(c, 50.0, &mut rng)).dot(&latlon_to_xyz(c)))
            .sum::<f64>()
            / 20_000.0;
        // E[cos θ] = coth κ - 1/κ
        let want = 1.0 / 50f64.tanh() - 1.0 / 50.0;
        assert!((mean_cos - want).abs() < 1e-3, "{mean_cos} {want}");
    }

    #[test]
    fn image_logprob_accuracy() {
        let recs = synth_dataset(SynthKind::SectorClasses, 20_000, &SynthParams::default(), 5).unwrap();
        let rows = synth_image_logprobs(&recs, 8, 0.55, 5).unwrap();
        let hits = rows
            .iter()
            .zip(&recs)
            .filter(|(r, rec)| super::super::rank_of(&r.1, rec.label.unwrap()) == 1)
            .count();
        let acc = hits as f64 / 20_000.0;
        assert!((acc - 0.55).abs() < 0.015, "{acc}");
        let total: f64 = rows[0].1.iter().map(|v| v.exp()).sum();
        assert!((total - 1.0).abs() < 1e-12);
    }
}
