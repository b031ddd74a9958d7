use rand::seq::SliceRandom;
use statrs::function::erf::erfc;

use super::WeightMatrix;
use crate::error::{Error, Result};
use crate::rng::seeded;

fn centered(values: &[f64], w: &WeightMatrix) -> Result<(Vec<f64>, f64)> {
    if values.len() != w.n() {
        return Err(Error::Shape(format!("{} values for a {}-point weight matrix", values.len(), w.n())));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("values"));
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let z: Vec<f64> = values.iter().map(|v| v - mean).collect();
    let ss = z.iter().map(|v| v * v).sum::<f64>();
    Ok((z, ss))
}

#[inline]
fn cross_sum(z: &[f64], w: &WeightMatrix) -> f64 {
    w.rows()
        .zip(z)
        .map(|(row, zi)| zi * row.iter().map(|&(j, wij)| wij * z[j]).sum::<f64>())
        .sum()
}

/// Classic Moran's I:
/// `I = N / S0 · Σ_ij W_ij (x_i - x̄)(x_j - x̄) / Σ_i (x_i - x̄)²`.
pub fn morans_i(values: &[f64], w: &WeightMatrix) -> Result<f64> {
    let (z, ss) = centered(values, w)?;
    if ss == 0.0 {
        return Err(Error::ZeroVariance);
    }
    let s0 = w.total_weight();
    if s0 == 0.0 {
        return Err(Error::Domain("weight matrix has no nonzero entry".into()));
    }
    Ok(values.len() as f64 / s0 * cross_sum(&z, w) / ss)
}

/// Expected Moran's I under no spatial autocorrelation, `-1/(N-1)`.
pub fn moran_null_reference(n: usize) -> f64 {
    -1.0 / (n as f64 - 1.0)
}

/// Diagnostics of one spatial self-information evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SsiDetail {
    pub bits: f64,
    pub moran_i: f64,
    pub null_mean: f64,
    pub null_sd: f64,
    pub z: f64,
    pub p: f64,
}

/// Spatial self-information in bits: `-log2 p`, where `p` is the two-sided
/// Gaussian tail probability of the observed Moran's I standardized by the
/// mean and spread of I over `n_permutations` seeded random relabelings.
/// Constant values carry no spatial information and score 0.
pub fn ssi(values: &[f64], w: &WeightMatrix, n_permutations: usize, seed: u64, p_min: f64) -> Result<f64> {
    Ok(ssi_detail(values, w, n_permutations, seed, p_min)?.bits)
}

pub fn ssi_detail(values: &[f64], w: &WeightMatrix, n_permutations: usize, seed: u64, p_min: f64) -> Result<SsiDetail> {
    if n_permutations < 2 {
        return Err(Error::Domain(format!("need at least 2 permutations, got {n_permutations}")));
    }
    if !(p_min > 0.0 && p_min <= 1.0) {
        return Err(Error::Domain(format!("p_min must lie in (0, 1], got {p_min}")));
    }
    let (z, ss) = centered(values, w)?;
    if ss == 0.0 {
        return Ok(SsiDetail {
            bits: 0.0,
            moran_i: f64::NAN,
            null_mean: f64::NAN,
            null_sd: f64::NAN,
            z: 0.0,
            p: 1.0,
        });
    }
    let s0 = w.total_weight();
    if s0 == 0.0 {
        return Err(Error::Domain("weight matrix has no nonzero entry".into()));
    }
    let scale = values.len() as f64 / s0 / ss;
    let observed = scale * cross_sum(&z, w);

    let mut rng = seeded(seed);
    let mut buf = z.clone();
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for _ in 0..n_permutations {
        buf.shuffle(&mut rng);
        let i = scale * cross_sum(&buf, w);
        sum += i;
        sum_sq += i * i;
    }
    let m = n_permutations as f64;
    let null_mean = sum / m;
    let null_sd = ((sum_sq - m * null_mean * null_mean).max(0.0) / (m - 1.0)).sqrt();
    let zscore = (observed - null_mean) / null_sd.max(1e-12);
    let p = erfc(zscore.abs() / std::f64::consts::SQRT_2).clamp(p_min, 1.0);
    Ok(SsiDetail {
        bits: -p.log2(),
        moran_i: observed,
        null_mean,
        null_sd,
        z: zscore,
        p,
    })
}
