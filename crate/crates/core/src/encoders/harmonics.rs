//! Real spherical harmonics, orthonormal over the unit sphere
//! (`∫ Y_i Y_j dΩ = δ_ij`), no Condon-Shortley phase.
//!
//! Evaluated with the fully normalized associated-Legendre recurrence so no
//! factorials appear and high degrees stay finite.

use std::f64::consts::PI;

/// Number of basis functions up to and including degree `max_degree`.
pub fn basis_len(max_degree: usize) -> usize {
    (max_degree + 1) * (max_degree + 1)
}

/// Flat index of `(l, m)`, `-l <= m <= l`.
pub fn basis_index(l: usize, m: i64) -> usize {
    debug_assert!(m.unsigned_abs() as usize <= l);
    ((l * l + l) as i64 + m) as usize
}

/// Normalized associated Legendre values `Q[l][m] = N_l^m P_l^m(cos θ)` for
/// `0 <= m <= l <= max_degree`, with `N_l^m = sqrt((2l+1)/(4π) (l-m)!/(l+m)!)`.
fn normalized_legendre(max_degree: usize, cos_t: f64, sin_t: f64) -> Vec<Vec<f64>> {
    let mut q: Vec<Vec<f64>> = (0..=max_degree).map(|l| vec![0.0; l + 1]).collect();
    q[0][0] = (1.0 / (4.0 * PI)).sqrt();
    for m in 1..=max_degree {
        let mf = m as f64;
        q[m][m] = ((2.0 * mf + 1.0) / (2.0 * mf)).sqrt() * sin_t * q[m - 1][m - 1];
    }
    for m in 0..max_degree {
        q[m + 1][m] = (2.0 * m as f64 + 3.0).sqrt() * cos_t * q[m][m];
    }
    for m in 0..=max_degree {
        let mf = m as f64;
        for l in (m + 2)..=max_degree {
            let lf = l as f64;
            let a = ((4.0 * lf * lf - 1.0) / (lf * lf - mf * mf)).sqrt();
            let b = (((lf - 1.0).powi(2) - mf * mf) / (4.0 * (lf - 1.0).powi(2) - 1.0)).sqrt();
            q[l][m] = a * (cos_t * q[l - 1][m] - b * q[l - 2][m]);
        }
    }
    q
}

/// Appends all `Y_l^m(θ, φ)` for `l = 0..=max_degree` to `out`, ordered by
/// `l` then `m = -l..=l`. `colatitude` is θ, `azimuth` is φ, both radians.
pub fn real_sh_into(max_degree: usize, colatitude: f64, azimuth: f64, out: &mut Vec<f64>) {
    let q = normalized_legendre(max_degree, colatitude.cos(), colatitude.sin());
    let sqrt2 = std::f64::consts::SQRT_2;
    for (l, row) in q.iter().enumerate() {
        for m in -(l as i64)..=(l as i64) {
            let v = match m {
                0 => row[0],
                m if m > 0 => sqrt2 * row[m as usize] * (m as f64 * azimuth).cos(),
                m => sqrt2 * row[(-m) as usize] * ((-m) as f64 * azimuth).sin(),
            };
            out.push(v);
        }
    }
}
