use std::fmt;

use serde::{Deserialize, Serialize};

use super::WeightMatrix;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HotSpotBin {
    Hot99,
    Hot95,
    Hot90,
    Nonsignificant,
    Cold90,
    Cold95,
    Cold99,
}

impl HotSpotBin {
    pub fn from_z(z: f64) -> Self {
        match z {
            z if z >= 2.576 => HotSpotBin::Hot99,
            z if z >= 1.96 => HotSpotBin::Hot95,
            z if z >= 1.645 => HotSpotBin::Hot90,
            z if z <= -2.576 => HotSpotBin::Cold99,
            z if z <= -1.96 => HotSpotBin::Cold95,
            z if z <= -1.645 => HotSpotBin::Cold90,
            _ => HotSpotBin::Nonsignificant,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            HotSpotBin::Hot99 => "hot99",
            HotSpotBin::Hot95 => "hot95",
            HotSpotBin::Hot90 => "hot90",
            HotSpotBin::Nonsignificant => "nonsignificant",
            HotSpotBin::Cold90 => "cold90",
            HotSpotBin::Cold95 => "cold95",
            HotSpotBin::Cold99 => "cold99",
        }
    }

    /// Hot at the 95% level or stronger.
    pub fn is_hot95(self) -> bool {
        matches!(self, HotSpotBin::Hot99 | HotSpotBin::Hot95)
    }

    pub fn is_hot(self) -> bool {
        matches!(self, HotSpotBin::Hot99 | HotSpotBin::Hot95 | HotSpotBin::Hot90)
    }
}

impl fmt::Display for HotSpotBin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HotSpot {
    pub z: f64,
    pub bin: HotSpotBin,
}

/// Getis-Ord Gi* z-score of every point, each row including the point itself
/// with weight 1. Rows whose weights are all equal over the full point set
/// have no spread and get `z = 0`.
pub fn getis_ord_gi_star(values: &[f64], w: &WeightMatrix) -> Result<Vec<HotSpot>> {
    let n = values.len();
    if n < 3 {
        return Err(Error::TooFewPoints { need: 3, got: n });
    }
    if n != w.n() {
        return Err(Error::Shape(format!("{n} values for a {}-point weight matrix", w.n())));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("values"));
    }
    let nf = n as f64;
    let mean = values.iter().sum::<f64>() / nf;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / nf;
    if var <= 0.0 {
        return Err(Error::ZeroVariance);
    }
    let s = var.sqrt();
    Ok((0..n)
        .map(|i| {
            let (mut sum_wx, mut sum_w, mut sum_w2) = (values[i], 1.0, 1.0);
            for &(j, wij) in w.row(i) {
                sum_wx += wij * values[j];
                sum_w += wij;
                sum_w2 += wij * wij;
            }
            let spread = (nf * sum_w2 - sum_w * sum_w) / (nf - 1.0);
            let z = if spread > 0.0 {
                (sum_wx - mean * sum_w) / (s * spread.sqrt())
            } else {
                0.0
            };
            HotSpot {
                z,
                bin: HotSpotBin::from_z(z),
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::{haversine_km, LocationDeg};
    use crate::geobias::knn_weights;
    use crate::rng::seeded;
    use rand::Rng;

    fn planted() -> (Vec<LocationDeg>, Vec<f64>) {
        let mut rng = seeded(21);
        let mut pts = Vec::new();
        let mut vals = Vec::new();
        for _ in 0..400 {
            pts.push(LocationDeg::new(rng.random_range(-40.0..40.0), rng.random_range(-40.0..40.0)).unwrap());
            vals.push(0.0);
        }
        for _ in 0..30 {
            pts.push(LocationDeg::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)).unwrap());
            vals.push(1.0);
        }
        (pts, vals)
    }

    #[test]
    fn bins() {
        assert_eq!(HotSpotBin::from_z(2.576), HotSpotBin::Hot99);
        assert_eq!(HotSpotBin::from_z(2.0), HotSpotBin::Hot95);
        assert_eq!(HotSpotBin::from_z(1.645), HotSpotBin::Hot90);
        assert_eq!(HotSpotBin::from_z(1.0), HotSpotBin::Nonsignificant);
        assert_eq!(HotSpotBin::from_z(-1.7), HotSpotBin::Cold90);
        assert_eq!(HotSpotBin::from_z(-3.0), HotSpotBin::Cold99);
    }

    #[test]
    fn direct_evaluation_on_a_tiny_ring() {
        // ring of 5, point 0 linked to 1 and 4: sums include x0 itself
        let w = WeightMatrix::ring(5).unwrap();
        let x = [5.0, 1.0, 0.0, 0.0, 2.0];
        let z = getis_ord_gi_star(&x, &w).unwrap()[0].z;
        let mean = 8.0 / 5.0;
        let s = (x.iter().map(|v| v * v).sum::<f64>() / 5.0 - mean * mean).sqrt();
        let want = (8.0 - mean * 3.0) / (s * ((5.0 * 3.0 - 9.0) / 4.0f64).sqrt());
        assert!((z - want).abs() < 1e-12);
    }

    #[test]
    fn planted_cluster_is_hot() {
        let (pts, vals) = planted();
        let w = knn_weights(&pts, 8).unwrap();
        let hs = getis_ord_gi_star(&vals, &w).unwrap();
        let hot = hs[400..].iter().filter(|h| h.bin.is_hot95()).count();
        assert!(hot as f64 >= 0.8 * 30.0, "{hot}");
        let center = LocationDeg::new(0.0, 0.0).unwrap();
        let far: Vec<_> = (0..400).filter(|&i| haversine_km(pts[i], center) > 1500.0).collect();
        let far_hot = far.iter().filter(|&&i| hs[i].bin.is_hot()).count();
        assert!(far_hot as f64 <= 0.05 * far.len() as f64);
    }

    #[test]
    fn mirror_negates() {
        let (pts, vals) = planted();
        let w = knn_weights(&pts, 8).unwrap();
        let mirrored: Vec<f64> = vals.iter().map(|v| 1.0 - v).collect();
        let a = getis_ord_gi_star(&vals, &w).unwrap();
        let b = getis_ord_gi_star(&mirrored, &w).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x.z + y.z).abs() <= 1e-9);
        }
    }

    #[test]
    fn errors() {
        let w = WeightMatrix::ring(4).unwrap();
        assert!(matches!(getis_ord_gi_star(&[1.0; 4], &w), Err(Error::ZeroVariance)));
        assert!(matches!(getis_ord_gi_star(&[1.0, 2.0], &w), Err(Error::TooFewPoints { .. })));
        assert!(matches!(getis_ord_gi_star(&[1.0, 2.0, 3.0], &w), Err(Error::Shape(_))));
    }
}
