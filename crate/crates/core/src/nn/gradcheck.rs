use super::{backprop, loss_mse, loss_softmax_ce, MlpParams};
use crate::error::{Error, Result};

/// Supervision for a scalar loss on a network output.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Target {
    /// Softmax cross-entropy against a class index.
    Class(usize),
    /// Squared error of a single-output network.
    Value(f64),
}

impl Target {
    fn loss(&self, out: &[f64]) -> Result<(f64, Vec<f64>)> {
        match *self {
            Target::Class(c) => loss_softmax_ce(out, c),
            Target::Value(t) => {
                if out.len() != 1 {
                    return Err(Error::Shape(format!("regression target needs a 1-output network, got {}", out.len())));
                }
                let (l, g) = loss_mse(out[0], t);
                Ok((l, vec![g]))
            }
        }
    }
}

/// Denominator floor so that parameters with (near) zero gradient are
/// compared absolutely instead of relatively.
const REL_FLOOR: f64 = 1e-6;

/// Largest relative error between backprop gradients and central
/// differences `(f(θ+h) - f(θ-h)) / 2h`, taken over every parameter.
pub fn finite_diff_check(params: &MlpParams, x: &[f64], target: Target, h: f64) -> Result<f64> {
    if !(h > 0.0) {
        return Err(Error::Domain(format!("finite-difference step must be positive, got {h}")));
    }
    let loss_at = |p: &MlpParams| -> Result<f64> { Ok(target.loss(&p.forward(x)?)?.0) };
    let out = params.forward(x)?;
    let (_, dy) = target.loss(&out)?;
    let analytic = backprop(params, x, &dy)?;

    let mut probe = params.clone();
    let mut worst = 0.0f64;
    for ti in 0..probe.tensors.len() {
        for j in 0..probe.tensors[ti].data.len() {
            let orig = probe.tensors[ti].data[j];
            probe.tensors[ti].data[j] = orig + h;
            let fp = loss_at(&probe)?;
            probe.tensors[ti].data[j] = orig - h;
            let fm = loss_at(&probe)?;
            probe.tensors[ti].data[j] = orig;
            let numeric = (fp - fm) / (2.0 * h);
            let a = analytic.tensors[ti][j];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_FLOOR);
            worst = worst.max(rel);
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, Arch};

    #[test]
    fn ffn_relu_and_siren_pass() {
        let x = [0.3, -0.7, 0.5, 0.1];
        let p = MlpParams::init(Arch::Ffn, Activation::Relu, 4, 8, 2, 3, 1).unwrap();
        assert!(finite_diff_check(&p, &x, Target::Class(1), 1e-5).unwrap() <= 1e-4);
        let p = MlpParams::init(Arch::Siren, Activation::Sine, 4, 8, 2, 3, 2).unwrap();
        assert!(finite_diff_check(&p, &x, Target::Class(2), 1e-5).unwrap() <= 1e-4);
    }

    #[test]
    fn linear_model_is_exact() {
        let p = MlpParams::init(Arch::Ffn, Activation::Relu, 3, 1, 0, 1, 4).unwrap();
        for h in [1e-3, 1e-4, 1e-5] {
            let err = finite_diff_check(&p, &[0.5, -1.5, 2.0], Target::Value(0.7), h).unwrap();
            assert!(err <= 1e-10, "h = {h}: {err}");
        }
    }

    #[test]
    fn rejects_bad_step_and_target() {
        let p = MlpParams::init(Arch::Ffn, Activation::Relu, 2, 2, 1, 2, 0).unwrap();
        assert!(finite_diff_check(&p, &[0.0, 1.0], Target::Class(0), 0.0).is_err());
        assert!(matches!(finite_diff_check(&p, &[0.0, 1.0], Target::Value(0.0), 1e-5), Err(Error::Shape(_))));
    }
}
