//! Central finite differences against hand-written backward passes.

use std::fmt;

/// Perturbation used for every check.
pub const GRAD_H: f64 = 1e-5;
/// Largest accepted relative error.
pub const GRAD_TOLERANCE: f64 = 1e-4;

// gradients smaller than this are compared in absolute terms; central
// differences of an O(1) loss carry roundoff of roughly eps·|L|/h
const DENOM_FLOOR: f64 = 1e-5;

/// Central-difference gradient of `loss` at `params`.
pub fn finite_diff_grad(mut loss: impl FnMut(&[f64]) -> f64, params: &[f64], h: f64) -> Vec<f64> {
    let mut x = params.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = x[i];
            x[i] = orig + h;
            let up = loss(&x);
            x[i] = orig - h;
            let down = loss(&x);
            x[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(DENOM_FLOOR)
}

/// Worst entry of one parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorCheck {
    pub name: String,
    pub len: usize,
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub tensors: Vec<TensorCheck>,
    pub threshold: f64,
    pub h: f64,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.tensors.iter().map(|t| t.max_rel_error).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.tensors.iter().all(|t| t.max_rel_error <= self.threshold)
    }

    pub fn failures(&self) -> Vec<&TensorCheck> {
        self.tensors.iter().filter(|t| t.max_rel_error > self.threshold).collect()
    }
}

impl fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for t in &self.tensors {
            writeln!(
                f,
                "{:<24} n={:<6} max_rel={:.3e} at {} (analytic {:.6e}, numeric {:.6e})",
                t.name, t.len, t.max_rel_error, t.worst_index, t.analytic, t.numeric
            )?;
        }
        write!(f, "threshold {:.0e}, h {:.0e}", self.threshold, self.h)
    }
}

/// Checks `analytic[k]` against central differences of `loss` with respect
/// to every scalar of `params[k]`.
pub fn check_tensors(
    names: &[String],
    params: &[Vec<f64>],
    analytic: &[Vec<f64>],
    mut loss: impl FnMut(&[Vec<f64>]) -> f64,
) -> GradCheckReport {
    assert_eq!(names.len(), params.len(), "one name per tensor");
    assert_eq!(analytic.len(), params.len(), "one gradient per tensor");
    let mut x = params.to_vec();
    let mut tensors = Vec::with_capacity(params.len());
    for k in 0..x.len() {
        assert_eq!(analytic[k].len(), x[k].len(), "gradient {} has the wrong length", names[k]);
        let mut worst = TensorCheck {
            name: names[k].clone(),
            len: x[k].len(),
            max_rel_error: 0.0,
            worst_index: 0,
            analytic: 0.0,
            numeric: 0.0,
        };
        for i in 0..x[k].len() {
            let orig = x[k][i];
            x[k][i] = orig + GRAD_H;
            let up = loss(&x);
            x[k][i] = orig - GRAD_H;
            let down = loss(&x);
            x[k][i] = orig;
            let numeric = (up - down) / (2.0 * GRAD_H);
            let e = relative_error(analytic[k][i], numeric);
            if e > worst.max_rel_error || i == 0 {
                worst.max_rel_error = e;
                worst.worst_index = i;
                worst.analytic = analytic[k][i];
                worst.numeric = numeric;
            }
        }
        tensors.push(worst);
    }
    GradCheckReport { tensors, threshold: GRAD_TOLERANCE, h: GRAD_H }
}
